//! Verification and benchmark harness.
//!
//! Instances follow a fixed recipe: B (n×n) and V (n×k) are filled with
//! uniform [0, 1) draws from a seeded [`SplitMix64`] stream (B first, then
//! V, both in column-major order). An update trial starts from
//! A = BᵀB + I and targets A + VVᵀ; a downdate trial starts from
//! A = BᵀB + I + VVᵀ and targets BᵀB + I, computed directly so the
//! downdate target is bitwise identical to the update start built from the
//! same seed. The reported error is max|A_target − L̃ᵀL̃|.
//!
//! Everything except wall-clock times is bitwise reproducible from the
//! seed, for any implementation choice and worker count.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::kernel::{
    chol_factor, modify_a, modify_b, modify_rank_k, FactorError, KernelError, OpCounts, Sigma,
};
use crate::matrix::{tri_transpose_mul, DenseMat, TriFactor, UpdateMat};
use crate::panel::{run_panelled, PanelParams, TrafficStats};
use crate::scalar::{Precision, Scalar};

/// Frozen regression bound for the max|A_target − L̃ᵀL̃| metric on
/// unit-scale instances (n ≤ 512, k ≤ 16), double precision. Set from
/// measured runs with ample headroom, then fixed.
pub const ERROR_BOUND_F64: f64 = 1e-9;
/// Single-precision analog of [`ERROR_BOUND_F64`].
pub const ERROR_BOUND_F32: f64 = 1e-2;

/// The harness PRNG: SplitMix64 (Steele, Lea & Flood's SplittableRandom
/// finalizer). Chosen because it is trivially portable — a fixed 64-bit
/// state increment and two xor-multiply mixes — so any reimplementation
/// reproduces instances bitwise. The first outputs for seed 0 are frozen
/// in the test suite as the cross-implementation reference.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw on [0, 1): the top mantissa-many bits of one output.
    pub fn next_unit<T: Scalar>(&mut self) -> T {
        T::unit_from_u64(self.next_u64())
    }
}

/// Which implementation a trial exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImplKind {
    /// Column-oriented rank-1 sweep, looped over update columns.
    SerialA,
    /// Row-oriented rank-1 sweep, looped over update columns.
    SerialB,
    /// The rank-k driver (row-oriented core).
    RankK,
    /// The panelled parallel executor.
    Panelled,
}

impl ImplKind {
    pub fn name(self) -> &'static str {
        match self {
            ImplKind::SerialA => "serial-a",
            ImplKind::SerialB => "serial-b",
            ImplKind::RankK => "rank-k",
            ImplKind::Panelled => "panel",
        }
    }

    pub const ALL: [ImplKind; 4] =
        [ImplKind::SerialA, ImplKind::SerialB, ImplKind::RankK, ImplKind::Panelled];
}

impl fmt::Display for ImplKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ImplKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "serial-a" => Ok(ImplKind::SerialA),
            "serial-b" | "serial" => Ok(ImplKind::SerialB),
            "rank-k" => Ok(ImplKind::RankK),
            "panel" | "panelled" => Ok(ImplKind::Panelled),
            other => Err(format!(
                "unknown implementation {other:?} (expected serial-a, serial-b, rank-k, or panel)"
            )),
        }
    }
}

/// One experiment cell. Derived quantities (chunk edge, batch count) are
/// always recomputed from these fields, never stored.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub n: usize,
    pub k: usize,
    pub precision: Precision,
    pub direction: Sigma,
    pub seed: u64,
    pub impl_kind: ImplKind,
    pub params: PanelParams,
    pub repetitions: usize,
}

impl ExperimentConfig {
    pub fn new(n: usize, k: usize, precision: Precision, direction: Sigma, seed: u64) -> Self {
        ExperimentConfig {
            n,
            k,
            precision,
            direction,
            seed,
            impl_kind: ImplKind::RankK,
            params: PanelParams::host_default(),
            repetitions: 1,
        }
    }
}

/// A generated problem instance.
pub struct Instance<T: Scalar> {
    /// Starting matrix A (already includes VVᵀ for downdate trials).
    pub a: DenseMat<T>,
    /// Cholesky factor of `a`.
    pub l: TriFactor<T>,
    pub v: UpdateMat<T>,
    /// The matrix the modified factor should reproduce: A ± VVᵀ.
    pub a_target: DenseMat<T>,
}

/// Errors from instance generation or trial execution, with the seed
/// context needed to reproduce them.
#[derive(Debug)]
pub enum HarnessError {
    Factor { seed: u64, n: usize, source: FactorError },
    Kernel { seed: u64, n: usize, k: usize, source: KernelError },
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HarnessError::Factor { seed, n, source } => {
                write!(f, "instance generation failed (seed {seed}, n {n}): {source}")
            }
            HarnessError::Kernel { seed, n, k, source } => {
                write!(f, "trial failed (seed {seed}, n {n}, k {k}): {source}")
            }
        }
    }
}

impl std::error::Error for HarnessError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            HarnessError::Factor { source, .. } => Some(source),
            HarnessError::Kernel { source, .. } => Some(source),
        }
    }
}

/// Symmetric n×n product BᵀB (+ I when `shift`), each unordered pair
/// computed once and mirrored so the result is bitwise symmetric.
fn gram<T: Scalar>(b: &DenseMat<T>, shift: bool) -> DenseMat<T> {
    let n = b.rows();
    let mut g = DenseMat::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut acc = T::zero();
            for m in 0..n {
                acc = acc + b[(m, i)] * b[(m, j)];
            }
            if shift && i == j {
                acc = acc + T::one();
            }
            g[(i, j)] = acc;
            g[(j, i)] = acc;
        }
    }
    g
}

/// Elementwise sum of two symmetric matrices, mirrored like [`gram`].
fn sym_add<T: Scalar>(x: &DenseMat<T>, y: &DenseMat<T>) -> DenseMat<T> {
    let n = x.rows();
    let mut out = DenseMat::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = x[(i, j)] + y[(i, j)];
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Generate the seeded instance for one experiment cell.
///
/// The update start BᵀB + I and the downdate target are the same bits for
/// the same seed; the downdate start adds VVᵀ before factorization.
pub fn gen_instance<T: Scalar>(cfg: &ExperimentConfig) -> Result<Instance<T>, HarnessError> {
    let (n, k) = (cfg.n, cfg.k);
    let mut rng = SplitMix64::new(cfg.seed);
    let mut b = DenseMat::<T>::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            b[(i, j)] = rng.next_unit();
        }
    }
    let mut v = UpdateMat::<T>::zeros(n, k).expect("n, k >= 1");
    for x in v.data_mut() {
        *x = rng.next_unit();
    }

    let base = gram(&b, true); // BᵀB + I
    let mut vvt = DenseMat::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut acc = T::zero();
            for e in 0..k {
                acc = acc + v[(i, e)] * v[(j, e)];
            }
            vvt[(i, j)] = acc;
            vvt[(j, i)] = acc;
        }
    }
    let with_v = sym_add(&base, &vvt);

    let (a, a_target) = match cfg.direction {
        Sigma::Update => (base, with_v),
        Sigma::Downdate => (with_v, base),
    };
    let l = chol_factor(&a)
        .map_err(|source| HarnessError::Factor { seed: cfg.seed, n, source })?;
    Ok(Instance { a, l, v, a_target })
}

/// The measured outcome of one experiment cell.
#[derive(Debug, Clone)]
pub struct TrialResult {
    /// max|A_target − L̃ᵀL̃| (finite and ≥ 0 on success), widened to f64.
    pub error_maxabs: f64,
    /// One wall-clock measurement per repetition, seconds.
    pub wall_times: Vec<f64>,
    /// Counters from the last repetition.
    pub op_counts: OpCounts,
    /// Traffic from the last repetition; all zeros for serial impls.
    pub traffic: TrafficStats,
}

impl TrialResult {
    pub fn median_time_s(&self) -> f64 {
        let mut times = self.wall_times.clone();
        times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
        let m = times.len() / 2;
        if times.len() % 2 == 1 {
            times[m]
        } else {
            0.5 * (times[m - 1] + times[m])
        }
    }
}

/// Run one experiment cell: generate the instance, run the configured
/// implementation once per repetition on fresh clones (timing just the
/// modification), then verify the last factor against the dense target.
pub fn run_trial(cfg: &ExperimentConfig) -> Result<TrialResult, HarnessError> {
    match cfg.precision {
        Precision::Single => run_trial_typed::<f32>(cfg),
        Precision::Double => run_trial_typed::<f64>(cfg),
    }
}

fn run_trial_typed<T: Scalar>(cfg: &ExperimentConfig) -> Result<TrialResult, HarnessError> {
    let inst = gen_instance::<T>(cfg)?;
    let reps = cfg.repetitions.max(1);
    let kernel_err = |source| HarnessError::Kernel { seed: cfg.seed, n: cfg.n, k: cfg.k, source };

    let mut wall_times = Vec::with_capacity(reps);
    let mut last = None;
    for _ in 0..reps {
        let mut l = inst.l.clone();
        let mut v = inst.v.clone();
        let mut counts = OpCounts::default();
        let mut traffic = TrafficStats::default();
        let start = Instant::now();
        match cfg.impl_kind {
            ImplKind::SerialA => {
                for e in 0..v.k() {
                    modify_a(&mut l, v.column_mut(e), cfg.direction, &mut counts)
                        .map_err(kernel_err)?;
                }
            }
            ImplKind::SerialB => {
                for e in 0..v.k() {
                    modify_b(&mut l, v.column_mut(e), cfg.direction, &mut counts)
                        .map_err(kernel_err)?;
                }
            }
            ImplKind::RankK => {
                modify_rank_k(&mut l, &mut v, cfg.direction, &mut counts).map_err(kernel_err)?;
            }
            ImplKind::Panelled => {
                run_panelled(&mut l, &mut v, cfg.direction, &cfg.params, &mut traffic, &mut counts)
                    .map_err(kernel_err)?;
            }
        }
        wall_times.push(start.elapsed().as_secs_f64());
        last = Some((l, counts, traffic));
    }
    let (l, op_counts, traffic) = last.expect("at least one repetition");

    let c = tri_transpose_mul(&l);
    let error_maxabs = inst.a_target.max_abs_diff(&c).expect("same shape").to_f64();
    Ok(TrialResult { error_maxabs, wall_times, op_counts, traffic })
}

/// CSV schema emitted by [`run_sweep`] (and the `verify` command).
pub const SWEEP_CSV_HEADER: &str =
    "n,k,precision,direction,impl,median_time_s,error_maxabs,applies,bytes_L_written,error";

/// Format an error magnitude at the precision it was measured in.
pub fn format_error(err: f64, precision: Precision) -> String {
    match precision {
        Precision::Single => (err as f32).fmt_csv(),
        Precision::Double => err.fmt_csv(),
    }
}

/// Render one result row of the sweep CSV.
pub fn sweep_row(cfg: &ExperimentConfig, outcome: &Result<TrialResult, HarnessError>) -> String {
    let prefix = format!(
        "{},{},{},{},{}",
        cfg.n,
        cfg.k,
        cfg.precision.name(),
        cfg.direction.name(),
        cfg.impl_kind.name()
    );
    match outcome {
        Ok(res) => format!(
            "{prefix},{},{},{},{},",
            res.median_time_s().fmt_csv(),
            format_error(res.error_maxabs, cfg.precision),
            res.op_counts.applies,
            res.traffic.bytes_l_written
        ),
        Err(e) => {
            let msg = e.to_string().replace(',', ";");
            format!("{prefix},,,,,{msg}")
        }
    }
}

/// Run the (n × impl) sweep grid with the base config's direction,
/// precision, and seed. Per-cell failures land in the `error` column and
/// the sweep continues. Cells execute sequentially so timings are not
/// perturbed by neighbors.
pub fn run_sweep(base: &ExperimentConfig, n_list: &[usize], impl_list: &[ImplKind]) -> String {
    let mut out = String::with_capacity(128 * n_list.len() * impl_list.len());
    out.push_str(SWEEP_CSV_HEADER);
    out.push('\n');
    for &n in n_list {
        for &impl_kind in impl_list {
            let cfg = ExperimentConfig { n, impl_kind, ..base.clone() };
            let outcome = run_trial(&cfg);
            out.push_str(&sweep_row(&cfg, &outcome));
            out.push('\n');
        }
    }
    out
}
