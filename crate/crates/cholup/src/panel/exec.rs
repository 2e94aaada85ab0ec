//! Execution engine for the panel schedule.
//!
//! Diagonal phases run on the calling thread: the row-oriented sweep over
//! the chunk's triangle, once per update column in the batch, emitting the
//! chunk's (c, s) slab. Off-diagonal phases fan their rectangle tasks out
//! to a worker pool; joining the pool is the barrier between phases.
//!
//! Rectangle tasks perform *only* rotation applications — every Compute
//! happens in a diagonal phase — so off-diagonal work is infallible, and an
//! indefinite downdate always surfaces from a diagonal phase with its
//! (row, update column). For k > 1, which failing column surfaces first
//! can differ from the serial schedule (columns of one batch interleave by
//! chunk), but whether some column fails does not.
//!
//! All traffic and operation counters are computed on the calling thread
//! from the plan geometry alone (rectangle traffic is value-independent),
//! so the recorded statistics are bitwise reproducible for any worker
//! count. Worker threads only ever write matrix elements their task owns.

use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::kernel::{modify_b_core, rot_apply, KernelError, OpCounts, Sigma};
use crate::matrix::{packed_index, TriFactor, UpdateMat};
use crate::scalar::Scalar;

use super::{build_plan, PanelParams, PanelPlan, Phase, RectTask, TrafficStats};

/// Shared mutable view of an element buffer for provably disjoint access.
///
/// Tasks index it only through their rectangle's owned coordinates;
/// disjointness of those coordinate sets is asserted when the plan is
/// built, and phases are separated by joining the worker scope.
struct SharedElems<T> {
    ptr: *mut T,
    len: usize,
}

unsafe impl<T: Send + Sync> Sync for SharedElems<T> {}

impl<T: Copy> SharedElems<T> {
    fn new(slice: &mut [T]) -> Self {
        SharedElems { ptr: slice.as_mut_ptr(), len: slice.len() }
    }

    /// SAFETY: `idx` must be owned by the calling task in this phase.
    #[inline(always)]
    unsafe fn read(&self, idx: usize) -> T {
        debug_assert!(idx < self.len);
        unsafe { *self.ptr.add(idx) }
    }

    /// SAFETY: `idx` must be owned by the calling task in this phase.
    #[inline(always)]
    unsafe fn write(&self, idx: usize, value: T) {
        debug_assert!(idx < self.len);
        unsafe { *self.ptr.add(idx) = value };
    }
}

/// Run the rank-k modification through the panel schedule.
///
/// The result (factor, residual V, coefficient slabs, counters) is bitwise
/// identical to [`crate::kernel::modify_rank_k`] on the same inputs: the
/// schedule reorders the same scalar operation DAG without changing any
/// operand. Worker count affects timing only.
pub fn run_panelled<T: Scalar>(
    l: &mut TriFactor<T>,
    v: &mut UpdateMat<T>,
    sigma: Sigma,
    params: &PanelParams,
    stats: &mut TrafficStats,
    counts: &mut OpCounts,
) -> Result<(), KernelError> {
    assert_eq!(l.n(), v.n(), "factor and update matrix dimensions must agree");
    let plan = build_plan(l.n(), v.k(), params);
    run_with_plan(&plan, l, v, sigma, stats, counts)
}

fn run_with_plan<T: Scalar>(
    plan: &PanelPlan,
    l: &mut TriFactor<T>,
    v: &mut UpdateMat<T>,
    sigma: Sigma,
    stats: &mut TrafficStats,
    counts: &mut OpCounts,
) -> Result<(), KernelError> {
    let d = plan.chunk;
    let tpb = plan.params.threads_per_block;
    let esize = T::PRECISION.elem_bytes() as u64;
    let e_cap = plan.batches.iter().map(|b| b.len()).max().unwrap_or(0);

    // One chunk's coefficients for one batch, column-major by batch element.
    // Written by each diagonal phase, read-only in the following phase.
    let mut c_slab = vec![T::zero(); d * e_cap];
    let mut s_slab = vec![T::zero(); d * e_cap];

    // Phase epoch, used to assert the barrier discipline in debug builds.
    let epoch = AtomicUsize::new(0);

    let mut cursor = 0usize;
    for batch in &plan.batches {
        let e_width = batch.len() as u64;
        for (pid, phase) in plan.phases.iter().enumerate() {
            match phase {
                Phase::Diagonal { rows } => {
                    let r0 = rows.start;
                    for (el, e) in batch.clone().enumerate() {
                        let col = v.column_mut(e);
                        modify_b_core(l, col, sigma, rows.clone(), counts, |i, cc, ss| {
                            c_slab[el * d + (i - r0)] = cc;
                            s_slab[el * d + (i - r0)] = ss;
                        })
                        .map_err(|(row, err)| err.at(row, e))?;
                    }
                    // Apply-point traffic of the triangle sweep; the
                    // Compute-point values stay in host registers.
                    let t = rows.len() as u64;
                    let bytes = e_width * (t * (t - 1) / 2) * esize;
                    stats.bytes_l_read += bytes;
                    stats.bytes_l_written += bytes;
                    stats.bytes_v_read += bytes;
                    stats.bytes_v_written += bytes;
                    stats.bytes_diag_total += 4 * bytes;
                }
                Phase::OffDiagonal { rows, .. } => {
                    let start = cursor;
                    while cursor < plan.rects.len()
                        && plan.rects[cursor].phase == pid
                        && plan.rects[cursor].batch == *batch
                    {
                        cursor += 1;
                    }
                    let rects = &plan.rects[start..cursor];
                    run_offdiag_phase(
                        l,
                        v,
                        sigma,
                        rects,
                        batch.clone(),
                        &c_slab,
                        &s_slab,
                        rows.start,
                        d,
                        tpb,
                        plan.params.workers,
                        &epoch,
                    );
                    // Rectangle traffic is a pure function of geometry:
                    // each task stages V once per direction, re-reads the
                    // (c, s) tile rows once per tile, and touches each
                    // owned L element once per direction per batch.
                    for r in rects {
                        let w = r.cols.len() as u64;
                        let rt = r.rows.len() as u64;
                        stats.bytes_v_read += w * e_width * esize;
                        stats.bytes_v_written += w * e_width * esize;
                        stats.bytes_l_read += rt * w * esize;
                        stats.bytes_l_written += rt * w * esize;
                        stats.bytes_cs_read += 2 * rt * e_width * esize;
                        stats.bytes_offdiag_total +=
                            (2 * w * e_width + 2 * rt * w + 2 * rt * e_width) * esize;
                        counts.applies += rt * w * e_width;
                        counts.elem_reads += w * e_width + rt * w + 2 * rt * e_width;
                        counts.elem_writes += rt * w + w * e_width;
                        stats.scratch_register_peak =
                            stats.scratch_register_peak.max(w * e_width * esize);
                        stats.scratch_shared_peak =
                            stats.scratch_shared_peak.max(2 * tpb as u64 * e_width * esize);
                    }
                    stats.kernel_launch_equivalents += 1;
                }
            }
            epoch.fetch_add(1, Ordering::SeqCst);
        }
    }
    debug_assert_eq!(cursor, plan.rects.len(), "all rectangle instances consumed");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_offdiag_phase<T: Scalar>(
    l: &mut TriFactor<T>,
    v: &mut UpdateMat<T>,
    sigma: Sigma,
    rects: &[RectTask],
    batch: Range<usize>,
    c_slab: &[T],
    s_slab: &[T],
    chunk_start: usize,
    d: usize,
    tpb: usize,
    workers: usize,
    epoch: &AtomicUsize,
) {
    let n = l.n();
    let phase_epoch = epoch.load(Ordering::SeqCst);
    let l_shared = SharedElems::new(l.data_mut());
    let v_shared = SharedElems::new(v.data_mut());

    let run_rect = |rect: &RectTask| {
        debug_assert_eq!(epoch.load(Ordering::SeqCst), phase_epoch, "phase barrier violated");
        // SAFETY: the plan guarantees this task's columns (hence its L
        // elements and V rows) are disjoint from every other task in the
        // phase, and the scope join below orders phases.
        unsafe {
            apply_rect(
                &l_shared,
                &v_shared,
                n,
                sigma,
                rect,
                batch.clone(),
                c_slab,
                s_slab,
                chunk_start,
                d,
                tpb,
            );
        }
    };

    let threads = workers.min(rects.len());
    if threads <= 1 {
        for rect in rects {
            run_rect(rect);
        }
    } else {
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..threads {
                scope.spawn(|| loop {
                    let idx = next.fetch_add(1, Ordering::Relaxed);
                    let Some(rect) = rects.get(idx) else { break };
                    run_rect(rect);
                });
            }
        });
    }
}

/// One rectangle task: stage V ("registers"), walk the coefficient tiles
/// ("shared memory"), rotate each owned L element through the whole batch
/// between one read and one write, flush V.
///
/// SAFETY: caller must guarantee exclusive ownership of the rectangle's
/// L elements and V rows for the duration of the call.
#[allow(clippy::too_many_arguments)]
unsafe fn apply_rect<T: Scalar>(
    l: &SharedElems<T>,
    v: &SharedElems<T>,
    n: usize,
    sigma: Sigma,
    rect: &RectTask,
    batch: Range<usize>,
    c_slab: &[T],
    s_slab: &[T],
    chunk_start: usize,
    d: usize,
    tpb: usize,
) {
    let e_width = batch.len();
    let w = rect.cols.len();

    let mut v_reg = vec![T::zero(); w * e_width];
    for (jl, j) in rect.cols.clone().enumerate() {
        for (el, e) in batch.clone().enumerate() {
            v_reg[jl * e_width + el] = unsafe { v.read(e * n + j) };
        }
    }

    let mut c_sh = vec![T::zero(); tpb * e_width];
    let mut s_sh = vec![T::zero(); tpb * e_width];
    let mut i0 = rect.rows.start;
    while i0 < rect.rows.end {
        let th = tpb.min(rect.rows.end - i0);
        for el in 0..e_width {
            let src = el * d + (i0 - chunk_start);
            c_sh[el * tpb..el * tpb + th].copy_from_slice(&c_slab[src..src + th]);
            s_sh[el * tpb..el * tpb + th].copy_from_slice(&s_slab[src..src + th]);
        }
        for r in 0..th {
            let i = i0 + r;
            let row_base = packed_index(n, i, i);
            for (jl, j) in rect.cols.clone().enumerate() {
                let idx = row_base + (j - i);
                let mut lv = unsafe { l.read(idx) };
                let vrow = jl * e_width;
                // Batch columns in ascending order: the same operand chain
                // the serial rank-k sweep produces for this element.
                for el in 0..e_width {
                    let (nl, nv) = rot_apply(
                        c_sh[el * tpb + r],
                        s_sh[el * tpb + r],
                        lv,
                        v_reg[vrow + el],
                        sigma,
                    );
                    lv = nl;
                    v_reg[vrow + el] = nv;
                }
                unsafe { l.write(idx, lv) };
            }
        }
        i0 += th;
    }

    for (jl, j) in rect.cols.clone().enumerate() {
        for (el, e) in batch.clone().enumerate() {
            unsafe { v.write(e * n + j, v_reg[jl * e_width + el]) };
        }
    }
}
