//! Command-line front end.
//!
//! Subcommands: `factor`, `update`, `downdate`, `verify`, `bench`, `plan`.
//! Results go to stdout or the named output file; diagnostics go to
//! stderr. Exit codes are fixed so scripts can distinguish failure
//! classes:
//!
//! * 0 — success (for `verify`: the error is within the frozen bound)
//! * 1 — `verify` ran but the error exceeded the bound
//! * 2 — usage, parse, or file-format problems
//! * 3 — numerical precondition violated (asymmetric or not positive
//!   definite input, non-positive pivot)
//! * 4 — indefinite downdate (A − VVᵀ is not positive definite)
//!
//! No command ever mutates its input files, and failed commands do not
//! leave an output file behind: modifications run on in-memory copies and
//! results are written only on success.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::harness::{
    run_sweep, run_trial, sweep_row, ExperimentConfig, HarnessError, ImplKind, SWEEP_CSV_HEADER,
    ERROR_BOUND_F32, ERROR_BOUND_F64,
};
use crate::io::{mat_read, mat_write, FileError, Layout, Matrix};
use crate::kernel::{
    chol_factor, modify_a, modify_b, modify_rank_k, KernelError, OpCounts, Sigma,
};
use crate::matrix::{TriFactor, UpdateMat};
use crate::panel::{build_plan, run_panelled, traffic_report, PanelParams, TrafficStats};
use crate::scalar::{Precision, Scalar};

/// Rank-k Cholesky factor updates and downdates.
#[derive(Debug, Parser)]
#[command(name = "cholup", version, about = "Rank-k Cholesky factor updates and downdates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Factor a symmetric positive-definite dense matrix into packed upper-triangular form
    Factor(FactorArgs),
    /// Modify a factor for A + VVt
    Update(ModifyArgs),
    /// Modify a factor for A - VVt
    Downdate(ModifyArgs),
    /// Run one seeded verification trial and print its CSV row
    Verify(VerifyArgs),
    /// Run a benchmark sweep and emit CSV
    Bench(BenchArgs),
    /// Print the panelled schedule for a problem shape without running it
    Plan(PlanArgs),
}

#[derive(Debug, Args)]
struct FactorArgs {
    /// Input file: dense symmetric matrix (CWM1 binary, or CSV if the path ends in .csv)
    input: PathBuf,
    /// Output file for the packed upper-triangular factor
    output: PathBuf,
}

#[derive(Debug, Args)]
struct ModifyArgs {
    /// Input factor: packed upper-triangular file
    factor: PathBuf,
    /// Update matrix V: update-layout file (n rows, k columns)
    update: PathBuf,
    /// Output file for the modified factor
    output: PathBuf,
    /// Implementation: serial-a | serial-b (alias: serial) | rank-k | panel
    #[arg(long = "impl", value_parser = parse_impl, default_value = "serial")]
    impl_kind: ImplKind,
    /// Blocks per simulated kernel launch (chunk edge = bpk x tpb)
    #[arg(long, default_value_t = PanelParams::DEFAULT_BLOCKS_PER_KERNEL)]
    bpk: usize,
    /// Threads per block (rectangle/tile width)
    #[arg(long, default_value_t = PanelParams::DEFAULT_THREADS_PER_BLOCK)]
    tpb: usize,
    /// Update columns consumed per batch
    #[arg(long, default_value_t = PanelParams::DEFAULT_ELEMENTS_PER_THREAD)]
    ept: usize,
    /// Worker threads for panel tasks [default: all hardware threads]
    #[arg(long)]
    workers: Option<usize>,
    /// Compare the result against a reference factor file and print the max elementwise difference
    #[arg(long, value_name = "REF")]
    check: Option<PathBuf>,
    /// Print the byte-traffic report after the run
    #[arg(long)]
    traffic: bool,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Problem dimension
    #[arg(long, default_value_t = 64)]
    n: usize,
    /// Number of update columns
    #[arg(long, default_value_t = 16)]
    k: usize,
    /// Element precision: f32 | f64
    #[arg(long, value_parser = parse_precision, default_value = "f64")]
    precision: Precision,
    /// Direction: update | downdate
    #[arg(long, value_parser = parse_direction, default_value = "update")]
    direction: Sigma,
    /// Instance seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Implementation: serial-a | serial-b (alias: serial) | rank-k | panel
    #[arg(long = "impl", value_parser = parse_impl, default_value = "rank-k")]
    impl_kind: ImplKind,
    /// Timed repetitions (median reported)
    #[arg(long, default_value_t = 1)]
    reps: usize,
    #[arg(long, default_value_t = PanelParams::DEFAULT_BLOCKS_PER_KERNEL)]
    bpk: usize,
    #[arg(long, default_value_t = PanelParams::DEFAULT_THREADS_PER_BLOCK)]
    tpb: usize,
    #[arg(long, default_value_t = PanelParams::DEFAULT_ELEMENTS_PER_THREAD)]
    ept: usize,
    /// Worker threads for panel tasks [default: all hardware threads]
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Comma-separated problem dimensions
    #[arg(long = "n-list", default_value = "64,256")]
    n_list: String,
    /// Comma-separated implementations (serial-a, serial-b, rank-k, panel)
    #[arg(long = "impl-list", default_value = "serial-b,panel")]
    impl_list: String,
    /// Number of update columns
    #[arg(long, default_value_t = 16)]
    k: usize,
    /// Element precision: f32 | f64
    #[arg(long, value_parser = parse_precision, default_value = "f64")]
    precision: Precision,
    /// Direction: update | downdate
    #[arg(long, value_parser = parse_direction, default_value = "update")]
    direction: Sigma,
    /// Instance seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Timed repetitions per cell (median reported)
    #[arg(long, default_value_t = 3)]
    reps: usize,
    /// Write the CSV here instead of stdout
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = PanelParams::DEFAULT_BLOCKS_PER_KERNEL)]
    bpk: usize,
    #[arg(long, default_value_t = PanelParams::DEFAULT_THREADS_PER_BLOCK)]
    tpb: usize,
    #[arg(long, default_value_t = PanelParams::DEFAULT_ELEMENTS_PER_THREAD)]
    ept: usize,
    /// Worker threads for panel tasks [default: all hardware threads]
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct PlanArgs {
    /// Problem dimension
    #[arg(long, default_value_t = 5000)]
    n: usize,
    /// Number of update columns
    #[arg(long, default_value_t = 16)]
    k: usize,
    #[arg(long, default_value_t = PanelParams::DEFAULT_BLOCKS_PER_KERNEL)]
    bpk: usize,
    #[arg(long, default_value_t = PanelParams::DEFAULT_THREADS_PER_BLOCK)]
    tpb: usize,
    #[arg(long, default_value_t = PanelParams::DEFAULT_ELEMENTS_PER_THREAD)]
    ept: usize,
    /// Worker threads for panel tasks [default: all hardware threads]
    #[arg(long)]
    workers: Option<usize>,
}

fn parse_impl(s: &str) -> Result<ImplKind, String> {
    s.parse()
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    match s {
        "f32" | "single" => Ok(Precision::Single),
        "f64" | "double" => Ok(Precision::Double),
        other => Err(format!("unknown precision {other:?} (expected f32 or f64)")),
    }
}

fn parse_direction(s: &str) -> Result<Sigma, String> {
    match s {
        "update" => Ok(Sigma::Update),
        "downdate" => Ok(Sigma::Downdate),
        other => Err(format!("unknown direction {other:?} (expected update or downdate)")),
    }
}

/// A failure with its process exit code already decided.
#[derive(Debug)]
enum CliError {
    /// Exit 2: bad flags, unreadable or malformed files, shape mismatches.
    Usage(String),
    /// Exit 3: numerical preconditions (asymmetry, not positive definite,
    /// non-positive pivot).
    Numeric(String),
    /// Exit 4: the requested downdate would leave the matrix indefinite.
    Indefinite(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Indefinite(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Numeric(m) | CliError::Indefinite(m) => m,
        }
    }
}

impl From<FileError> for CliError {
    fn from(e: FileError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<KernelError> for CliError {
    fn from(e: KernelError) -> Self {
        match e {
            KernelError::NonPositivePivot { .. } => CliError::Numeric(e.to_string()),
            KernelError::IndefiniteDowndate { .. } => CliError::Indefinite(e.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Factor { .. } => CliError::Numeric(e.to_string()),
            HarnessError::Kernel { source: KernelError::IndefiniteDowndate { .. }, .. } => {
                CliError::Indefinite(e.to_string())
            }
            HarnessError::Kernel { .. } => CliError::Numeric(e.to_string()),
        }
    }
}

/// Parse arguments from the process environment, run, and return the exit
/// code. Argument errors print to stderr and exit 2 (clap's convention,
/// matching our usage class); --help and --version exit 0.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Factor(a) => cmd_factor(&a),
        Command::Update(a) => cmd_modify(Sigma::Update, &a),
        Command::Downdate(a) => cmd_modify(Sigma::Downdate, &a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Plan(a) => cmd_plan(&a),
    }
}

fn make_params(
    bpk: usize,
    tpb: usize,
    ept: usize,
    workers: Option<usize>,
) -> Result<PanelParams, CliError> {
    let workers = workers.unwrap_or_else(|| PanelParams::host_default().workers);
    if bpk == 0 || tpb == 0 || ept == 0 || workers == 0 {
        return Err(CliError::Usage(
            "--bpk, --tpb, --ept, and --workers must all be at least 1".into(),
        ));
    }
    Ok(PanelParams {
        blocks_per_kernel: bpk,
        threads_per_block: tpb,
        elements_per_thread: ept,
        workers,
    })
}

fn cmd_factor(args: &FactorArgs) -> Result<i32, CliError> {
    let input = mat_read(&args.input)?;
    let factored = match input {
        Matrix::DenseF32(a) => {
            Matrix::TriF32(chol_factor(&a).map_err(|e| CliError::Numeric(e.to_string()))?)
        }
        Matrix::DenseF64(a) => {
            Matrix::TriF64(chol_factor(&a).map_err(|e| CliError::Numeric(e.to_string()))?)
        }
        other => {
            return Err(CliError::Usage(format!(
                "{}: factor expects a dense matrix, found {} layout",
                args.input.display(),
                other.layout().name()
            )))
        }
    };
    mat_write(&factored, &args.output)?;
    Ok(0)
}

/// Run one modification in-memory. Returns the rotated factor.
fn modify_typed<T: Scalar>(
    mut l: TriFactor<T>,
    mut v: UpdateMat<T>,
    direction: Sigma,
    impl_kind: ImplKind,
    params: &PanelParams,
) -> Result<(TriFactor<T>, OpCounts, TrafficStats), KernelError> {
    let mut counts = OpCounts::default();
    let mut traffic = TrafficStats::default();
    match impl_kind {
        ImplKind::SerialA => {
            for e in 0..v.k() {
                modify_a(&mut l, v.column_mut(e), direction, &mut counts)?;
            }
        }
        ImplKind::SerialB => {
            for e in 0..v.k() {
                modify_b(&mut l, v.column_mut(e), direction, &mut counts)?;
            }
        }
        ImplKind::RankK => {
            modify_rank_k(&mut l, &mut v, direction, &mut counts)?;
        }
        ImplKind::Panelled => {
            run_panelled(&mut l, &mut v, direction, params, &mut traffic, &mut counts)?;
        }
    }
    Ok((l, counts, traffic))
}

/// Max elementwise |a − b| over two packed factors, widened to f64.
fn factor_diff<T: Scalar>(a: &TriFactor<T>, b: &TriFactor<T>) -> f64 {
    let mut worst = 0.0f64;
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = (x.to_f64() - y.to_f64()).abs();
        if d > worst {
            worst = d;
        }
    }
    worst
}

/// Validate a --check reference against the result's shape and precision.
fn check_mismatch(path: &Path, found: &Matrix, want: Precision, want_n: usize) -> CliError {
    if found.layout() != Layout::PackedUpper {
        CliError::Usage(format!(
            "{}: --check expects a packed-upper factor, found {} layout",
            path.display(),
            found.layout().name()
        ))
    } else if found.precision() != want {
        CliError::Usage(format!(
            "{}: --check precision {} does not match the result precision {}",
            path.display(),
            found.precision().name(),
            want.name()
        ))
    } else {
        CliError::Usage(format!(
            "{}: --check dimension {} does not match the result dimension {want_n}",
            path.display(),
            found.rows()
        ))
    }
}

fn cmd_modify(direction: Sigma, args: &ModifyArgs) -> Result<i32, CliError> {
    let params = make_params(args.bpk, args.tpb, args.ept, args.workers)?;
    let factor = mat_read(&args.factor)?;
    let update = mat_read(&args.update)?;

    if factor.layout() != Layout::PackedUpper {
        return Err(CliError::Usage(format!(
            "{}: expected a packed-upper factor, found {} layout",
            args.factor.display(),
            factor.layout().name()
        )));
    }
    if update.layout() != Layout::Update {
        return Err(CliError::Usage(format!(
            "{}: expected an update-layout matrix, found {} layout",
            args.update.display(),
            update.layout().name()
        )));
    }
    if factor.precision() != update.precision() {
        return Err(CliError::Usage(format!(
            "precision mismatch: factor is {}, update matrix is {}",
            factor.precision().name(),
            update.precision().name()
        )));
    }
    if factor.rows() != update.rows() {
        return Err(CliError::Usage(format!(
            "dimension mismatch: factor is {}x{}, update matrix has {} rows",
            factor.rows(),
            factor.rows(),
            update.rows()
        )));
    }

    let (n, k) = (factor.rows(), update.cols());
    let elem_bytes = factor.precision().elem_bytes();
    let (out, counts, traffic) = match (factor, update) {
        (Matrix::TriF32(l), Matrix::UpdateF32(v)) => {
            let (l, counts, traffic) = modify_typed(l, v, direction, args.impl_kind, &params)?;
            if let Some(path) = &args.check {
                let d = match mat_read(path)? {
                    Matrix::TriF32(r) if r.n() == l.n() => factor_diff(&l, &r),
                    other => return Err(check_mismatch(path, &other, Precision::Single, l.n())),
                };
                println!("max elementwise diff: {d:e}");
            }
            (Matrix::TriF32(l), counts, traffic)
        }
        (Matrix::TriF64(l), Matrix::UpdateF64(v)) => {
            let (l, counts, traffic) = modify_typed(l, v, direction, args.impl_kind, &params)?;
            if let Some(path) = &args.check {
                let d = match mat_read(path)? {
                    Matrix::TriF64(r) if r.n() == l.n() => factor_diff(&l, &r),
                    other => return Err(check_mismatch(path, &other, Precision::Double, l.n())),
                };
                println!("max elementwise diff: {d:e}");
            }
            (Matrix::TriF64(l), counts, traffic)
        }
        _ => unreachable!("layout and precision validated above"),
    };

    mat_write(&out, &args.output)?;
    if args.traffic {
        print!("{}", traffic_report(&traffic, &counts, n, k, &params, elem_bytes));
    }
    Ok(0)
}

fn cmd_verify(args: &VerifyArgs) -> Result<i32, CliError> {
    if args.n == 0 || args.k == 0 {
        return Err(CliError::Usage("--n and --k must be at least 1".into()));
    }
    let params = make_params(args.bpk, args.tpb, args.ept, args.workers)?;
    let cfg = ExperimentConfig {
        n: args.n,
        k: args.k,
        precision: args.precision,
        direction: args.direction,
        seed: args.seed,
        impl_kind: args.impl_kind,
        params,
        repetitions: args.reps.max(1),
    };
    let result = run_trial(&cfg).map_err(CliError::from)?;
    println!("{SWEEP_CSV_HEADER}");
    println!("{}", sweep_row(&cfg, &Ok(result.clone())));
    let bound = match args.precision {
        Precision::Single => ERROR_BOUND_F32,
        Precision::Double => ERROR_BOUND_F64,
    };
    if result.error_maxabs <= bound {
        Ok(0)
    } else {
        eprintln!(
            "error {:e} exceeds the {} regression bound {bound:e}",
            result.error_maxabs,
            args.precision.name()
        );
        Ok(1)
    }
}

fn parse_usize_list(text: &str, flag: &str) -> Result<Vec<usize>, CliError> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        let value: usize = part
            .parse()
            .map_err(|_| CliError::Usage(format!("{flag}: cannot parse {part:?} as an integer")))?;
        if value == 0 {
            return Err(CliError::Usage(format!("{flag}: entries must be at least 1")));
        }
        out.push(value);
    }
    if out.is_empty() {
        return Err(CliError::Usage(format!("{flag}: list is empty")));
    }
    Ok(out)
}

fn parse_impl_list(text: &str, flag: &str) -> Result<Vec<ImplKind>, CliError> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        out.push(part.parse().map_err(|e| CliError::Usage(format!("{flag}: {e}")))?);
    }
    if out.is_empty() {
        return Err(CliError::Usage(format!("{flag}: list is empty")));
    }
    Ok(out)
}

fn cmd_bench(args: &BenchArgs) -> Result<i32, CliError> {
    if args.k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    let n_list = parse_usize_list(&args.n_list, "--n-list")?;
    let impl_list = parse_impl_list(&args.impl_list, "--impl-list")?;
    let params = make_params(args.bpk, args.tpb, args.ept, args.workers)?;
    let base = ExperimentConfig {
        n: n_list[0],
        k: args.k,
        precision: args.precision,
        direction: args.direction,
        seed: args.seed,
        impl_kind: impl_list[0],
        params,
        repetitions: args.reps.max(1),
    };
    let csv = run_sweep(&base, &n_list, &impl_list);
    match &args.out {
        Some(path) => std::fs::write(path, csv).map_err(|e| {
            CliError::Usage(format!("{}: cannot write CSV: {e}", path.display()))
        })?,
        None => print!("{csv}"),
    }
    Ok(0)
}

fn cmd_plan(args: &PlanArgs) -> Result<i32, CliError> {
    if args.n == 0 || args.k == 0 {
        return Err(CliError::Usage("--n and --k must be at least 1".into()));
    }
    let params = make_params(args.bpk, args.tpb, args.ept, args.workers)?;
    let plan = build_plan(args.n, args.k, &params);
    print!("{}", plan.render());
    Ok(0)
}
