//! Command-line front end for Memory-AMP experiments.
//!
//! Exit codes: 0 success, 1 numerical failure (partial trajectory still
//! written), 2 usage error, 3 I/O error.

mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mamp_core::harness::{
    self, AlgorithmKind, ExperimentConfig, FieldKind, MomentsChoice, SnrConvention, TransformChoice,
};
use mamp_core::operator::{LinearOperator, StructuredSpec};
use mamp_core::seeds::{derived_seed, Stream};
use mamp_core::spectral::{chi_table_exact, chi_table_stochastic, naive_b_moments};

use output::{config_hash, fmt_f64, status_str, write_trajectory_csv, write_trajectory_json};

#[derive(Parser)]
#[command(
    name = "mamp",
    version,
    about = "Memory-AMP recovery for noisy linear systems"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment and write its trajectory.
    Run(RunArgs),
    /// Run a cross product of comma-separated parameter lists.
    Sweep(SweepArgs),
    /// Dump the moment tables (exact, stochastic, bound, naive) as CSV.
    Moments(CommonArgs),
    /// Side-by-side overflow demonstration of naive vs scaled moments.
    DemoOverflow(CommonArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AlgoArg {
    Gd,
    OaEig,
    OaStoch,
    Cr,
}

impl From<AlgoArg> for AlgorithmKind {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Gd => AlgorithmKind::Gd,
            AlgoArg::OaEig => AlgorithmKind::OaEig,
            AlgoArg::OaStoch => AlgorithmKind::OaStoch,
            AlgoArg::Cr => AlgorithmKind::Cr,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MomentsArg {
    Naive,
    Scaled,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FieldArg {
    Real,
    Complex,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TransformArg {
    Dct,
    Dft,
    Dense,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SnrConvArg {
    MeasurementPower,
    NoiseInverse,
}

/// Flags shared by every subcommand; unset flags fall back to the config
/// file, then to the built-in defaults.
#[derive(Args, Clone)]
struct CommonArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    algo: Option<AlgoArg>,
    /// Moment backend override (naive demonstrates the overflow).
    #[arg(long)]
    moments: Option<MomentsArg>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    snr_db: Option<f64>,
    #[arg(long)]
    snr_convention: Option<SnrConvArg>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    damping_len: Option<usize>,
    /// Seed; falls back to the MAMP_SEED environment variable.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    field: Option<FieldArg>,
    #[arg(long)]
    transform: Option<TransformArg>,
    #[arg(long)]
    probes: Option<usize>,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    stop_tol: Option<f64>,
    /// Output format.
    #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
    out: OutFormat,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Record wall time per row (makes output non-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated algorithm list, e.g. `gd,cr`.
    #[arg(long)]
    algos: Option<String>,
    /// Comma-separated condition parameters.
    #[arg(long)]
    kappas: Option<String>,
    /// Comma-separated SNR values in dB.
    #[arg(long)]
    snrs_db: Option<String>,
    /// Comma-separated sparsity values.
    #[arg(long)]
    mus: Option<String>,
    /// Comma-separated seeds.
    #[arg(long)]
    seeds: Option<String>,
    /// Comma-separated iteration counts.
    #[arg(long)]
    iters_list: Option<String>,
}

enum AppError {
    Usage(String),
    Io(String),
}

impl AppError {
    fn exit_code(&self) -> ExitCode {
        match self {
            AppError::Usage(_) => ExitCode::from(2),
            AppError::Io(_) => ExitCode::from(3),
        }
    }

    fn message(&self) -> &str {
        match self {
            AppError::Usage(m) | AppError::Io(m) => m,
        }
    }
}

fn io_err(context: &str, e: impl std::fmt::Display) -> AppError {
    AppError::Io(format!("{context}: {e}"))
}

/// Print to stdout, ignoring a closed pipe (e.g. `mamp run | head -1`).
fn emit(line: std::fmt::Arguments<'_>) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{line}");
}

macro_rules! emit {
    ($($arg:tt)*) => { emit(format_args!($($arg)*)) };
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::Moments(args) => cmd_moments(args, false),
        Cmd::DemoOverflow(args) => cmd_moments(args, true),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eemit!("error: {}", e.message());
            e.exit_code()
        }
    }
}

/// Resolves flags + optional config file + env fallback into a config.
fn resolve_config(args: &CommonArgs, require_dims: bool) -> Result<ExperimentConfig, AppError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| io_err(&format!("reading {}", path.display()), e))?;
            toml::from_str::<ExperimentConfig>(&text)
                .map_err(|e| AppError::Usage(format!("bad config file: {e}")))?
        }
        None => {
            if require_dims && (args.m.is_none() || args.n.is_none()) {
                return Err(AppError::Usage(
                    "--m and --n are required (or provide --config)\n\n\
                     Usage: mamp run --m <M> --n <N> [OPTIONS]"
                        .into(),
                ));
            }
            ExperimentConfig::default()
        }
    };

    if let Some(a) = args.algo {
        cfg.algorithm = a.into();
    }
    if let Some(m) = args.moments {
        cfg.moments = match m {
            MomentsArg::Naive => MomentsChoice::Naive,
            MomentsArg::Scaled => MomentsChoice::Scaled,
        };
    }
    if let Some(v) = args.m {
        cfg.m = v;
    }
    if let Some(v) = args.n {
        cfg.n = v;
    }
    if let Some(v) = args.kappa {
        cfg.kappa = v;
    }
    if let Some(v) = args.snr_db {
        cfg.snr_db = v;
    }
    if let Some(c) = args.snr_convention {
        cfg.snr_convention = match c {
            SnrConvArg::MeasurementPower => SnrConvention::MeasurementPower,
            SnrConvArg::NoiseInverse => SnrConvention::NoiseInverse,
        };
    }
    if let Some(v) = args.mu {
        cfg.mu = v;
    }
    if let Some(v) = args.iters {
        cfg.iters = v;
    }
    if let Some(v) = args.damping_len {
        cfg.damping_len = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    } else if args.config.is_none() {
        if let Ok(env_seed) = std::env::var("MAMP_SEED") {
            cfg.seed = env_seed
                .parse()
                .map_err(|_| AppError::Usage(format!("MAMP_SEED is not a u64: {env_seed}")))?;
        }
    }
    if let Some(f) = args.field {
        cfg.field = match f {
            FieldArg::Real => FieldKind::Real,
            FieldArg::Complex => FieldKind::Complex,
        };
        // Keep the conventional pairing when only the field is switched.
        if args.transform.is_none() && args.config.is_none() {
            cfg.transform = match f {
                FieldArg::Real => TransformChoice::Dct,
                FieldArg::Complex => TransformChoice::Dft,
            };
        }
    }
    if let Some(t) = args.transform {
        cfg.transform = match t {
            TransformArg::Dct => TransformChoice::Dct,
            TransformArg::Dft => TransformChoice::Dft,
            TransformArg::Dense => TransformChoice::Dense,
        };
    }
    if let Some(v) = args.probes {
        cfg.probes = v;
    }
    if let Some(v) = args.tau {
        cfg.tau = v;
    }
    if let Some(v) = args.stop_tol {
        cfg.stop_tol = v;
    }
    cfg.validate().map_err(|e| AppError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn ensure_out_dir(dir: &Path) -> Result<(), AppError> {
    fs::create_dir_all(dir).map_err(|e| io_err(&format!("creating {}", dir.display()), e))
}

fn write_run_output(
    args: &CommonArgs,
    cfg: &ExperimentConfig,
    traj: &mamp_core::mamp::Trajectory,
    stem: &str,
) -> Result<PathBuf, AppError> {
    ensure_out_dir(&args.out_dir)?;
    let ext = match args.out {
        OutFormat::Csv => "csv",
        OutFormat::Json => "json",
    };
    let path = args.out_dir.join(format!("{stem}.{ext}"));
    let mut buf = Vec::new();
    match args.out {
        OutFormat::Csv => write_trajectory_csv(&mut buf, cfg, traj, args.timing),
        OutFormat::Json => write_trajectory_json(&mut buf, cfg, traj, args.timing),
    }
    .map_err(|e| io_err("formatting output", e))?;
    fs::write(&path, buf).map_err(|e| io_err(&format!("writing {}", path.display()), e))?;
    Ok(path)
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, AppError> {
    let cfg = resolve_config(&args.common, true)?;
    let traj = harness::run_experiment(&cfg).map_err(|e| AppError::Usage(e.to_string()))?;
    let stem = format!("run_{}_{}", cfg.algorithm.as_str(), config_hash(&cfg));
    let path = write_run_output(&args.common, &cfg, &traj, &stem)?;
    emit!("{}", path.display());
    emit!("status: {}", status_str(&traj.status));
    if traj.status.is_failure() {
        Ok(ExitCode::from(1))
    } else {
        Ok(ExitCode::SUCCESS)
    }
}

fn parse_list<T: std::str::FromStr>(
    text: &Option<String>,
    what: &str,
) -> Result<Option<Vec<T>>, AppError> {
    match text {
        None => Ok(None),
        Some(s) => {
            let items: Result<Vec<T>, _> = s
                .split(',')
                .filter(|t| !t.is_empty())
                .map(|t| t.trim().parse::<T>())
                .collect();
            let items = items.map_err(|_| AppError::Usage(format!("bad {what} list: {s:?}")))?;
            if items.is_empty() {
                return Err(AppError::Usage(format!("empty {what} list")));
            }
            Ok(Some(items))
        }
    }
}

fn parse_algo_list(text: &Option<String>) -> Result<Option<Vec<AlgorithmKind>>, AppError> {
    match text {
        None => Ok(None),
        Some(s) => {
            let mut out = Vec::new();
            for tok in s.split(',').filter(|t| !t.is_empty()) {
                out.push(match tok.trim() {
                    "gd" => AlgorithmKind::Gd,
                    "oa-eig" => AlgorithmKind::OaEig,
                    "oa-stoch" => AlgorithmKind::OaStoch,
                    "cr" => AlgorithmKind::Cr,
                    other => return Err(AppError::Usage(format!("unknown algorithm {other:?}"))),
                });
            }
            if out.is_empty() {
                return Err(AppError::Usage("empty algorithm list".into()));
            }
            Ok(Some(out))
        }
    }
}

fn cmd_sweep(args: SweepArgs) -> Result<ExitCode, AppError> {
    let base = resolve_config(&args.common, false)?;
    let algos = parse_algo_list(&args.algos)?.unwrap_or_else(|| vec![base.algorithm]);
    let kappas = parse_list::<f64>(&args.kappas, "kappa")?.unwrap_or_else(|| vec![base.kappa]);
    let snrs = parse_list::<f64>(&args.snrs_db, "snr")?.unwrap_or_else(|| vec![base.snr_db]);
    let mus = parse_list::<f64>(&args.mus, "mu")?.unwrap_or_else(|| vec![base.mu]);
    let seeds = parse_list::<u64>(&args.seeds, "seed")?.unwrap_or_else(|| vec![base.seed]);
    let iters = parse_list::<usize>(&args.iters_list, "iters")?.unwrap_or_else(|| vec![base.iters]);

    let mut cells = Vec::new();
    for &algo in &algos {
        for &kappa in &kappas {
            for &snr in &snrs {
                for &mu in &mus {
                    for &seed in &seeds {
                        for &it in &iters {
                            let mut cfg = base.clone();
                            cfg.algorithm = algo;
                            cfg.kappa = kappa;
                            cfg.snr_db = snr;
                            cfg.mu = mu;
                            cfg.seed = seed;
                            cfg.iters = it;
                            cfg.validate().map_err(|e| AppError::Usage(e.to_string()))?;
                            cells.push(cfg);
                        }
                    }
                }
            }
        }
    }
    if cells.is_empty() {
        return Err(AppError::Usage("empty sweep grid".into()));
    }

    ensure_out_dir(&args.common.out_dir)?;
    let results = harness::run_sweep(&cells);

    let mut summary = String::from(
        "algo,m,n,kappa,snr_db,mu,seed,iters,status,final_mse_db,total_matvecs,setup_matvecs,file\n",
    );
    for (cfg, result) in cells.iter().zip(&results) {
        match result {
            Ok(traj) => {
                let stem = format!("sweep_{}_{}", cfg.algorithm.as_str(), config_hash(cfg));
                let path = write_run_output(&args.common, cfg, traj, &stem)?;
                summary.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                    cfg.algorithm.as_str(),
                    cfg.m,
                    cfg.n,
                    cfg.kappa,
                    cfg.snr_db,
                    cfg.mu,
                    cfg.seed,
                    cfg.iters,
                    status_str(&traj.status)
                        .split([' ', ':'])
                        .next()
                        .unwrap_or("?"),
                    fmt_f64(traj.final_mse_db().unwrap_or(f64::NAN)),
                    traj.total_matvecs,
                    traj.setup_matvecs,
                    path.file_name().unwrap().to_string_lossy(),
                ));
            }
            Err(e) => {
                summary.push_str(&format!(
                    "{},{},{},{},{},{},{},{},config-error:{},nan,0,0,-\n",
                    cfg.algorithm.as_str(),
                    cfg.m,
                    cfg.n,
                    cfg.kappa,
                    cfg.snr_db,
                    cfg.mu,
                    cfg.seed,
                    cfg.iters,
                    e.to_string().replace([',', ' '], "_"),
                ));
            }
        }
    }
    let summary_path = args.common.out_dir.join("summary.csv");
    fs::write(&summary_path, summary)
        .map_err(|e| io_err(&format!("writing {}", summary_path.display()), e))?;
    emit!("{}", summary_path.display());
    Ok(ExitCode::SUCCESS)
}

/// Shared by `moments` (plain dump) and `demo-overflow` (dump + verdict).
fn cmd_moments(args: CommonArgs, demo: bool) -> Result<ExitCode, AppError> {
    let cfg = resolve_config(&args, false)?;
    let spec = StructuredSpec::new(
        cfg.m,
        cfg.n,
        cfg.kappa,
        match cfg.field {
            FieldKind::Real => mamp_core::TransformKind::Dct,
            FieldKind::Complex => mamp_core::TransformKind::Dft,
        },
        derived_seed(cfg.seed, Stream::Permutation),
    )
    .map_err(|e| AppError::Usage(e.to_string()))?;
    let eigs = spec.eigenvalues();
    let lambda_dag = 0.5 * (eigs[0] + eigs[eigs.len() - 1]);
    let sigma2 = cfg.sigma2();
    let theta0 = 1.0 / (lambda_dag + sigma2);
    let horizon = 2 * cfg.iters;

    let exact = chi_table_exact(&eigs, cfg.n, lambda_dag, theta0, horizon)
        .map_err(|e| AppError::Usage(e.to_string()))?;
    let probe_seed = derived_seed(cfg.seed, Stream::Probe);
    let stochastic = match cfg.field {
        FieldKind::Real => {
            let op = LinearOperator::<f64>::build_structured(&spec)
                .map_err(|e| AppError::Usage(e.to_string()))?;
            chi_table_stochastic(&op, lambda_dag, theta0, horizon, probe_seed, cfg.probes)
        }
        FieldKind::Complex => {
            let op = LinearOperator::<mamp_core::Complex64>::build_structured(&spec)
                .map_err(|e| AppError::Usage(e.to_string()))?;
            chi_table_stochastic(&op, lambda_dag, theta0, horizon, probe_seed, cfg.probes)
        }
    }
    .map_err(|e| AppError::Usage(e.to_string()))?;
    let naive = naive_b_moments(&eigs, cfg.n, lambda_dag, horizon);
    let bound = exact.chi_bound();

    let mut csv = String::from("k,chi_exact,chi_stochastic,chi_bound,b_naive\n");
    for k in 0..horizon {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            k,
            fmt_f64(exact.chi()[k]),
            fmt_f64(stochastic.chi()[k]),
            fmt_f64(bound),
            fmt_f64(naive.b[k]),
        ));
    }
    ensure_out_dir(&args.out_dir)?;
    let stem = if demo { "overflow" } else { "moments" };
    let path = args
        .out_dir
        .join(format!("{stem}_{}.csv", config_hash(&cfg)));
    fs::write(&path, csv).map_err(|e| io_err(&format!("writing {}", path.display()), e))?;
    emit!("{}", path.display());

    if demo {
        let report = harness::overflow_demo(&cfg).map_err(|e| AppError::Usage(e.to_string()))?;
        emit!("rho_b: {}", fmt_f64(report.rho_b));
        if report.overflow_regime {
            emit!("regime: overflow (rho_b > 1)");
        } else {
            emit!("regime: no overflow regime (rho_b <= 1)");
        }
        match report.first_nonfinite_b {
            Some(k) => emit!("first_nonfinite_b: {k}"),
            None => emit!("first_nonfinite_b: none"),
        }
        emit!("max_abs_chi: {}", fmt_f64(report.max_abs_chi));
        emit!("chi_bound: {}", fmt_f64(report.chi_bound));
        emit!("bound_margin: {}", fmt_f64(report.min_bound_margin));
    }
    Ok(ExitCode::SUCCESS)
}
