//! Panelled parallel execution of the rank-k modification.
//!
//! The factor's rows are cut into square diagonal chunks of edge
//! D = blocks_per_kernel × threads_per_block. Walking down the diagonal,
//! each chunk's own triangle is processed sequentially on the calling
//! thread (producing that chunk's rotation coefficients), then the
//! off-diagonal panel to its right — the chunk's rows crossed with every
//! column further right — is split into threads_per_block-wide rectangle
//! tasks that run concurrently on a worker pool. Rectangles only *apply*
//! rotations, so they are infallible and touch pairwise-disjoint columns of
//! L (and the matching rows of V), which is the data-race-freedom argument.
//!
//! Update columns are consumed in batches of elements_per_thread; the batch
//! loop is outermost (one full chunk-and-panel sweep per batch) so each
//! chunk's coefficient slab stays alive for exactly one phase.
//!
//! Byte-traffic counters model the memory movement a device-resident run
//! would perform: rectangle tasks stage their V elements in per-task
//! "register" scratch and the per-tile coefficient rows in "shared" scratch
//! (twice the register footprint: both c and s), and touch each L element
//! once per batch. No staging copies exist for host buffers beyond those
//! scratch areas; the counters preserve the analysis.

mod exec;

pub use exec::run_panelled;

use std::fmt::Write as _;
use std::ops::Range;

use crate::kernel::OpCounts;

/// Geometry and scheduling parameters for the panelled executor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PanelParams {
    /// Number of blocks per simulated kernel launch; with
    /// `threads_per_block` this fixes the diagonal chunk edge D.
    pub blocks_per_kernel: usize,
    /// Column width of one rectangle task and edge of one coefficient tile.
    pub threads_per_block: usize,
    /// Update columns consumed per batch.
    pub elements_per_thread: usize,
    /// CPU worker threads for rectangle tasks.
    pub workers: usize,
}

impl PanelParams {
    pub const DEFAULT_BLOCKS_PER_KERNEL: usize = 28;
    pub const DEFAULT_THREADS_PER_BLOCK: usize = 32;
    pub const DEFAULT_ELEMENTS_PER_THREAD: usize = 16;

    /// Production defaults with the worker pool sized to the host.
    pub fn host_default() -> Self {
        PanelParams {
            blocks_per_kernel: Self::DEFAULT_BLOCKS_PER_KERNEL,
            threads_per_block: Self::DEFAULT_THREADS_PER_BLOCK,
            elements_per_thread: Self::DEFAULT_ELEMENTS_PER_THREAD,
            workers: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        }
    }

    /// Diagonal chunk edge D.
    pub fn chunk_edge(&self) -> usize {
        self.blocks_per_kernel * self.threads_per_block
    }

    fn assert_valid(&self) {
        assert!(self.blocks_per_kernel > 0, "blocks_per_kernel must be positive");
        assert!(self.threads_per_block > 0, "threads_per_block must be positive");
        assert!(self.elements_per_thread > 0, "elements_per_thread must be positive");
        assert!(self.workers > 0, "workers must be positive");
    }
}

/// One step of the schedule: either a diagonal chunk (sequential) or the
/// off-diagonal panel to its right (parallel rectangles).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Phase {
    Diagonal { rows: Range<usize> },
    OffDiagonal { rows: Range<usize>, cols: Range<usize> },
}

/// One rectangle task instance: a ≤ threads_per_block-wide column strip of
/// an off-diagonal panel, bound to one batch of update columns. Tasks of
/// one phase have pairwise-disjoint column ranges; a task exclusively owns
/// those columns of L and the same-indexed rows of V.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RectTask {
    /// Index into [`PanelPlan::phases`].
    pub phase: usize,
    pub rows: Range<usize>,
    pub cols: Range<usize>,
    /// Update-column range this instance processes.
    pub batch: Range<usize>,
}

/// The complete schedule for one (n, k, params) triple.
///
/// `rects` lists every rectangle instance in execution order: batches
/// outermost, then phases in order, then ascending column ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PanelPlan {
    pub n: usize,
    pub k: usize,
    /// Diagonal chunk edge D = blocks_per_kernel × threads_per_block.
    pub chunk: usize,
    pub phases: Vec<Phase>,
    pub batches: Vec<Range<usize>>,
    pub rects: Vec<RectTask>,
    pub params: PanelParams,
}

/// Build the deterministic panel schedule.
///
/// Diagonal chunks of edge D start at 0, D, 2D, …; while columns remain to
/// the right, each is followed by an off-diagonal panel covering the
/// chunk's rows and all columns from the chunk's end to n. The final chunk
/// may be smaller than D (it then has no panel). Batches cover the k
/// update columns in ⌈k/elements_per_thread⌉ contiguous ranges; the last
/// may be ragged. Panels split into ≤ threads_per_block-wide rectangles;
/// the last may be narrower.
pub fn build_plan(n: usize, k: usize, params: &PanelParams) -> PanelPlan {
    assert!(n >= 1, "matrix dimension must be positive");
    assert!(k >= 1, "update column count must be positive");
    params.assert_valid();

    let d = params.chunk_edge();
    let mut phases = Vec::new();
    let mut r0 = 0;
    while r0 < n {
        let r1 = (r0 + d).min(n);
        phases.push(Phase::Diagonal { rows: r0..r1 });
        if r1 < n {
            phases.push(Phase::OffDiagonal { rows: r0..r1, cols: r1..n });
        }
        r0 = r1;
    }

    let batches: Vec<Range<usize>> =
        (0..k).step_by(params.elements_per_thread).map(|e0| e0..(e0 + params.elements_per_thread).min(k)).collect();

    let mut rects = Vec::new();
    for batch in &batches {
        for (pid, phase) in phases.iter().enumerate() {
            if let Phase::OffDiagonal { rows, cols } = phase {
                let mut c0 = cols.start;
                while c0 < cols.end {
                    let c1 = (c0 + params.threads_per_block).min(cols.end);
                    rects.push(RectTask {
                        phase: pid,
                        rows: rows.clone(),
                        cols: c0..c1,
                        batch: batch.clone(),
                    });
                    c0 = c1;
                }
            }
        }
    }

    let plan = PanelPlan { n, k, chunk: d, phases, batches, rects, params: *params };
    plan.assert_race_free();
    plan
}

impl PanelPlan {
    /// Race-freedom witness, checked at build time: within every
    /// (phase, batch) group, rectangle column ranges are ascending,
    /// pairwise disjoint, within the panel, and tile it exactly.
    fn assert_race_free(&self) {
        for (pid, phase) in self.phases.iter().enumerate() {
            let Phase::OffDiagonal { rows, cols } = phase else { continue };
            for batch in &self.batches {
                let group: Vec<&RectTask> = self
                    .rects
                    .iter()
                    .filter(|r| r.phase == pid && r.batch == *batch)
                    .collect();
                assert!(!group.is_empty(), "off-diagonal phase with no rectangles");
                let mut expected = cols.start;
                for r in &group {
                    assert_eq!(r.rows, *rows, "rectangle rows must match the phase");
                    assert_eq!(r.cols.start, expected, "rectangle columns must tile the panel");
                    assert!(r.cols.len() <= self.params.threads_per_block);
                    assert!(!r.cols.is_empty());
                    expected = r.cols.end;
                }
                assert_eq!(expected, cols.end, "rectangles must cover the panel");
            }
        }
    }

    pub fn diag_phase_count(&self) -> usize {
        self.phases.iter().filter(|p| matches!(p, Phase::Diagonal { .. })).count()
    }

    pub fn offdiag_phase_count(&self) -> usize {
        self.phases.iter().filter(|p| matches!(p, Phase::OffDiagonal { .. })).count()
    }

    pub fn rects_per_batch(&self) -> usize {
        if self.batches.is_empty() { 0 } else { self.rects.len() / self.batches.len() }
    }

    /// Measured launch equivalents a run of this plan will record:
    /// one per off-diagonal phase per batch.
    pub fn launch_equivalents(&self) -> usize {
        self.offdiag_phase_count() * self.batches.len()
    }

    /// The coarser chunk-count bound ⌈n/D⌉ × batches (counts every chunk,
    /// including the final one that has no panel).
    pub fn launch_bound(&self) -> usize {
        self.n.div_ceil(self.chunk) * self.batches.len()
    }

    /// Peak per-task "register" scratch in elements: the V staging area of
    /// the widest rectangle × its batch width.
    pub fn register_peak_elems(&self) -> usize {
        self.rects.iter().map(|r| r.cols.len() * r.batch.len()).max().unwrap_or(0)
    }

    /// Peak per-task "shared" scratch in elements: c and s tile rows,
    /// 2 × threads_per_block × batch width.
    pub fn shared_peak_elems(&self) -> usize {
        self.rects
            .iter()
            .map(|r| 2 * self.params.threads_per_block * r.batch.len())
            .max()
            .unwrap_or(0)
    }

    /// Human-readable schedule listing (the `plan` subcommand's output).
    pub fn render(&self) -> String {
        let mut out = String::new();
        let p = &self.params;
        let _ = writeln!(out, "panel plan: n={}, k={}", self.n, self.k);
        let _ = writeln!(
            out,
            "params: blocks_per_kernel={} threads_per_block={} elements_per_thread={} workers={}",
            p.blocks_per_kernel, p.threads_per_block, p.elements_per_thread, p.workers
        );
        let _ = writeln!(
            out,
            "chunk edge D={}, chunks={}, batches={}, off-diagonal phases={}",
            self.chunk,
            self.n.div_ceil(self.chunk),
            self.batches.len(),
            self.offdiag_phase_count()
        );
        for (pid, phase) in self.phases.iter().enumerate() {
            match phase {
                Phase::Diagonal { rows } => {
                    let _ = writeln!(out, "phase {pid}: diagonal rows [{},{})", rows.start, rows.end);
                }
                Phase::OffDiagonal { rows, cols } => {
                    let rects = self
                        .rects
                        .iter()
                        .filter(|r| r.phase == pid && r.batch == self.batches[0])
                        .count();
                    let _ = writeln!(
                        out,
                        "phase {pid}: off-diagonal rows [{},{}) x cols [{},{}), rects={rects}",
                        rows.start, rows.end, cols.start, cols.end
                    );
                }
            }
        }
        let _ = writeln!(
            out,
            "rect tasks per batch: {}, total rect task instances: {}",
            self.rects_per_batch(),
            self.rects.len()
        );
        let _ = writeln!(
            out,
            "launch equivalents: measured-per-run {} (off-diagonal phases x batches), chunk bound ceil(n/D)*batches = {}, naive row-at-a-time = {} per batch",
            self.launch_equivalents(),
            self.launch_bound(),
            self.n
        );
        let reg = self.register_peak_elems();
        let sh = self.shared_peak_elems();
        let _ = writeln!(
            out,
            "scratch model per task: registers peak {} elems ({} B f64, {} B f32), shared peak {} elems ({} B f64, {} B f32)",
            reg,
            reg * 8,
            reg * 4,
            sh,
            sh * 8,
            sh * 4
        );
        out
    }
}

/// Byte-traffic and scratch accounting for one panelled run.
///
/// Conventions: every Apply in a diagonal phase moves its L and V elements
/// once each way; every rectangle task reads and writes each owned L
/// element once per batch (covering all of that batch's applies), stages V
/// once each way per batch, and re-reads the (c, s) tile rows once per
/// tile. Compute-point traffic (the diagonal element and the coefficient
/// writes) is excluded: those values live in host registers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrafficStats {
    pub bytes_l_read: u64,
    pub bytes_l_written: u64,
    pub bytes_v_read: u64,
    pub bytes_v_written: u64,
    pub bytes_cs_read: u64,
    /// One per off-diagonal phase per batch.
    pub kernel_launch_equivalents: u64,
    /// Peak per-task scratch, bytes: c+s tile rows ("shared memory").
    pub scratch_shared_peak: u64,
    /// Peak per-task scratch, bytes: staged V elements ("registers").
    pub scratch_register_peak: u64,
    /// Subtotals of the byte counters above by phase kind.
    pub bytes_diag_total: u64,
    pub bytes_offdiag_total: u64,
}

impl TrafficStats {
    pub fn total_l_bytes(&self) -> u64 {
        self.bytes_l_read + self.bytes_l_written
    }
}

/// Render the post-run traffic/intensity report: human-readable lines
/// followed by a machine-readable CSV pair (header + values).
pub fn traffic_report(
    stats: &TrafficStats,
    counts: &OpCounts,
    n: usize,
    k: usize,
    params: &PanelParams,
    elem_bytes: usize,
) -> String {
    let d = params.chunk_edge();
    let chunks = n.div_ceil(d);
    let batches = k.div_ceil(params.elements_per_thread);
    let offdiag_phases = chunks.saturating_sub(1);
    let intensity = if stats.total_l_bytes() == 0 {
        0.0
    } else {
        counts.applies as f64 / stats.total_l_bytes() as f64
    };

    let mut out = String::new();
    let _ = writeln!(out, "== panelled traffic report ==");
    let _ = writeln!(out, "problem: n={n}, k={k}, element bytes={elem_bytes}");
    let _ = writeln!(
        out,
        "plan: D={d}, chunks={chunks}, off-diagonal phases={offdiag_phases}, batches={batches}"
    );
    let _ = writeln!(
        out,
        "L traffic:   read {} B, written {} B",
        stats.bytes_l_read, stats.bytes_l_written
    );
    let _ = writeln!(
        out,
        "V traffic:   read {} B, written {} B",
        stats.bytes_v_read, stats.bytes_v_written
    );
    let _ = writeln!(out, "c/s traffic: read {} B", stats.bytes_cs_read);
    let _ = writeln!(
        out,
        "phase totals: diagonal {} B, off-diagonal {} B",
        stats.bytes_diag_total, stats.bytes_offdiag_total
    );
    let _ = writeln!(
        out,
        "scratch peaks per task: registers {} B, shared {} B",
        stats.scratch_register_peak, stats.scratch_shared_peak
    );
    let _ = writeln!(
        out,
        "launch equivalents: measured {}, chunk bound ceil(n/D)*batches = {}, naive row-at-a-time = {} per batch ({} total)",
        stats.kernel_launch_equivalents,
        chunks * batches,
        n,
        n * batches
    );
    let _ = writeln!(out, "arithmetic intensity: {intensity:.6} applies per L byte");
    let _ = writeln!(
        out,
        "csv,n,k,elem_bytes,bytes_l_read,bytes_l_written,bytes_v_read,bytes_v_written,bytes_cs_read,bytes_diag,bytes_offdiag,launch_equivalents,scratch_register_peak,scratch_shared_peak,applies,intensity"
    );
    let _ = writeln!(
        out,
        "csv,{n},{k},{elem_bytes},{},{},{},{},{},{},{},{},{},{},{},{intensity:.6}",
        stats.bytes_l_read,
        stats.bytes_l_written,
        stats.bytes_v_read,
        stats.bytes_v_written,
        stats.bytes_cs_read,
        stats.bytes_diag_total,
        stats.bytes_offdiag_total,
        stats.kernel_launch_equivalents,
        stats.scratch_register_peak,
        stats.scratch_shared_peak,
        counts.applies
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(bpk: usize, tpb: usize, ept: usize) -> PanelParams {
        PanelParams {
            blocks_per_kernel: bpk,
            threads_per_block: tpb,
            elements_per_thread: ept,
            workers: 1,
        }
    }

    #[test]
    fn plan_example_24() {
        let plan = build_plan(24, 16, &params(2, 4, 16));
        assert_eq!(plan.chunk, 8);
        assert_eq!(plan.batches, vec![0..16]);
        assert_eq!(
            plan.phases,
            vec![
                Phase::Diagonal { rows: 0..8 },
                Phase::OffDiagonal { rows: 0..8, cols: 8..24 },
                Phase::Diagonal { rows: 8..16 },
                Phase::OffDiagonal { rows: 8..16, cols: 16..24 },
                Phase::Diagonal { rows: 16..24 },
            ]
        );
        // First panel is 16 columns wide -> 4 rectangles of width 4.
        let first: Vec<&RectTask> = plan.rects.iter().filter(|r| r.phase == 1).collect();
        assert_eq!(first.len(), 4);
        assert!(first.iter().all(|r| r.cols.len() == 4 && r.rows == (0..8)));
        // Second panel is 8 wide -> 2 rectangles; 6 instances in total.
        assert_eq!(plan.rects.iter().filter(|r| r.phase == 3).count(), 2);
        assert_eq!(plan.rects.len(), 6);
        assert_eq!(plan.rects_per_batch(), 6);
        assert_eq!(plan.launch_equivalents(), 2);
        assert_eq!(plan.launch_bound(), 3);
    }

    #[test]
    fn single_chunk_has_no_panels() {
        let plan = build_plan(8, 4, &params(2, 4, 16));
        assert_eq!(plan.phases, vec![Phase::Diagonal { rows: 0..8 }]);
        assert!(plan.rects.is_empty());
        assert_eq!(plan.register_peak_elems(), 0);
        assert_eq!(plan.shared_peak_elems(), 0);
    }

    #[test]
    fn ragged_edges() {
        // n=25 with D=8: a 1-row final chunk; 17-wide first panel splits
        // into 4 full rectangles and one of width 1.
        let plan = build_plan(25, 5, &params(2, 4, 2));
        assert_eq!(plan.batches, vec![0..2, 2..4, 4..5]);
        assert_eq!(plan.diag_phase_count(), 4);
        assert_eq!(plan.offdiag_phase_count(), 3);
        let widths: Vec<usize> = plan
            .rects
            .iter()
            .filter(|r| r.phase == 1 && r.batch == (0..2))
            .map(|r| r.cols.len())
            .collect();
        assert_eq!(widths, vec![4, 4, 4, 4, 1]);
        // Ragged final batch narrows the scratch of its instances, but the
        // peaks come from the full-width, full-batch instances.
        assert_eq!(plan.register_peak_elems(), 4 * 2);
        assert_eq!(plan.shared_peak_elems(), 2 * 4 * 2);
    }

    #[test]
    fn batch_loop_is_outermost_in_rect_order() {
        let plan = build_plan(20, 4, &params(1, 4, 2));
        // Instances must be grouped by batch first.
        let mut last_batch_start = 0;
        for r in &plan.rects {
            assert!(r.batch.start >= last_batch_start);
            last_batch_start = r.batch.start;
        }
        assert!(plan.rects.iter().any(|r| r.batch == (0..2)));
        assert!(plan.rects.iter().any(|r| r.batch == (2..4)));
    }

    #[test]
    fn tiling_completeness_exhaustive() {
        for (n, bpk, tpb, ept, k) in
            [(1usize, 1usize, 1usize, 1usize, 1usize), (7, 1, 2, 2, 3), (24, 2, 4, 16, 16), (65, 2, 8, 3, 7), (128, 1, 32, 4, 5)]
        {
            let plan = build_plan(n, k, &params(bpk, tpb, ept));
            for batch in &plan.batches {
                let mut cover = vec![0u32; n * n];
                for phase in &plan.phases {
                    if let Phase::Diagonal { rows } = phase {
                        for i in rows.clone() {
                            for j in i..rows.end {
                                cover[i * n + j] += 1;
                            }
                        }
                    }
                }
                for r in plan.rects.iter().filter(|r| r.batch == *batch) {
                    for i in r.rows.clone() {
                        for j in r.cols.clone() {
                            cover[i * n + j] += 1;
                        }
                    }
                }
                for i in 0..n {
                    for j in 0..n {
                        let want = u32::from(j >= i);
                        assert_eq!(
                            cover[i * n + j],
                            want,
                            "coverage mismatch at ({i},{j}) for n={n} bpk={bpk} tpb={tpb}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn five_thousand_example_counts() {
        // n=5000, D=896: 6 chunks, 5 off-diagonal phases, 1 batch of 16.
        let plan = build_plan(5000, 16, &params(28, 32, 16));
        assert_eq!(plan.chunk, 896);
        assert_eq!(plan.batches.len(), 1);
        assert_eq!(plan.offdiag_phase_count(), 5);
        assert_eq!(plan.launch_equivalents(), 5);
        assert_eq!(plan.launch_bound(), 6);
    }

    #[test]
    fn zero_stats_report_has_no_division_by_zero() {
        let stats = TrafficStats::default();
        let counts = OpCounts::default();
        let report = traffic_report(&stats, &counts, 8, 1, &params(2, 4, 16), 8);
        assert!(report.contains("arithmetic intensity: 0.000000"));
        assert!(report.contains("csv,8,1,8,0,0,0,0,0,0,0,0,0,0,0,0.000000"));
    }

    #[test]
    fn render_lists_phases_and_defaults() {
        let mut p = params(2, 4, 16);
        let plan = build_plan(24, 16, &p);
        let text = plan.render();
        assert!(text.contains("phase 0: diagonal rows [0,8)"));
        assert!(text.contains("phase 1: off-diagonal rows [0,8) x cols [8,24), rects=4"));
        assert!(text.contains("phase 4: diagonal rows [16,24)"));
        p.blocks_per_kernel = PanelParams::DEFAULT_BLOCKS_PER_KERNEL;
        p.threads_per_block = PanelParams::DEFAULT_THREADS_PER_BLOCK;
        let text = build_plan(5000, 16, &p).render();
        assert!(text.contains("blocks_per_kernel=28 threads_per_block=32 elements_per_thread=16"));
    }
}
