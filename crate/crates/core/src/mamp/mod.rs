//! The Memory-AMP solver family.
//!
//! Two recursions share one memory linear estimator core:
//!
//! * GD: three matvecs per iteration (one for the NLE residual z̄_t, two in
//!   the MLE), damping on the non-linear side driven by empirically measured
//!   candidate covariances. With the naive moment backend this is the
//!   original overflow-prone algorithm; with a scaled backend it is the
//!   overflow-avoiding variant, bit-for-bit the same recursion evaluated in
//!   sign/log arithmetic.
//! * CR: two matvecs per iteration, damping moved to the linear side with
//!   covariances recovered from norms of stored MLE outputs, and the plain
//!   orthogonalized denoiser output as the next iterate.
//!
//! Iteration t = 1 applies A to an all-zero operand so that every iteration
//! runs the same code path; totals come to 3(T−1)+2 matvecs for GD and 2T
//! for CR.

mod cr;
mod damping;
mod gd;
mod mle;

pub use damping::{solve_mmse_weights, solve_with_backoff, DampingSolution};

use std::fmt;
use std::sync::Arc;

use crate::denoiser::Denoiser;
use crate::error::SpectralError;
use crate::field::Field;
use crate::operator::LinearOperator;
use crate::seeds::{derived_seed, Stream};
use crate::spectral::{
    chi_table_exact, chi_table_stochastic, estimate_extremes, MomentTable, NaiveMoments,
};

/// Which arithmetic backs the moment sequences.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MomentBackendKind {
    /// Plain doubles; overflows for ill-conditioned spectra. Requires known
    /// eigenvalues.
    Naive,
    /// Scaled table from known eigenvalues.
    ScaledExact,
    /// Scaled table estimated matrix-free; eigenvalue extremes estimated by
    /// power iteration.
    ScaledStochastic,
}

/// Which recursion to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Recursion {
    Gd,
    Cr,
}

/// Variance floor applied wherever an estimated variance can collapse to
/// zero or go slightly negative near convergence.
pub(crate) const VAR_FLOOR: f64 = 1e-12;

/// Relaxation coefficient θ_t = (λ† + ρ_t)⁻¹ with ρ_t = σ²/v̄_{t,t}.
/// Lies in (0, 1/λ†] for ρ ≥ 0 and vanishes as the SNR proxy ρ grows.
pub fn theta_step(lambda_dag: f64, rho: f64) -> f64 {
    debug_assert!(lambda_dag > 0.0 && rho >= 0.0);
    1.0 / (lambda_dag + rho)
}

/// The covariance-free residual coefficient ξ̃_t = 1/(v^φ_{t,t} + σ²).
/// ξ_1 is pinned to 1 by the recursions themselves.
pub fn xi_step(v_phi_tt: f64, sigma2: f64) -> f64 {
    1.0 / (v_phi_tt + sigma2)
}

/// Per-iteration coefficient for the fresh-residual term of the MLE.
pub trait XiRule: Send + Sync {
    /// ξ_t for t ≥ 2; v_phi_tt is the variance of the newest NLE candidate.
    fn xi(&self, t: usize, v_phi_tt: f64, sigma2: f64) -> f64;
}

/// ξ̃_t = 1/(v^φ_{t,t} + σ²); robust and covariance-free.
#[derive(Clone, Copy, Debug, Default)]
pub struct SimpleXi;

impl XiRule for SimpleXi {
    fn xi(&self, _t: usize, v_phi_tt: f64, sigma2: f64) -> f64 {
        xi_step(v_phi_tt, sigma2)
    }
}

/// ξ selection: the shipped rule or a caller-provided one (extension point
/// for covariance-optimal coefficients).
#[derive(Clone, Default)]
pub enum XiMode {
    #[default]
    Simple,
    Custom(Arc<dyn XiRule>),
}

impl fmt::Debug for XiMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            XiMode::Simple => write!(f, "Simple"),
            XiMode::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Solver configuration.
#[derive(Clone, Debug)]
pub struct MampConfig {
    /// Maximum iterations T.
    pub max_iters: usize,
    /// Maximum damping window L (small relative to T).
    pub damping_len: usize,
    /// Noise variance σ².
    pub sigma2: f64,
    pub moment_backend: MomentBackendKind,
    pub xi_mode: XiMode,
    /// Relative change of the predicted posterior variance below which the
    /// run stops early; 0 runs the full T.
    pub stop_tol: f64,
    /// Master seed for the stochastic backend (probe and extremes streams).
    pub seed: u64,
    /// Power-iteration budget for eigenvalue-extreme estimation.
    pub tau: usize,
    /// Probe vectors averaged in the stochastic table.
    pub probes: usize,
}

impl MampConfig {
    pub fn new(max_iters: usize, sigma2: f64) -> Self {
        Self {
            max_iters,
            damping_len: 3,
            sigma2,
            moment_backend: MomentBackendKind::ScaledExact,
            xi_mode: XiMode::Simple,
            stop_tol: 0.0,
            seed: 0,
            tau: 30,
            probes: 1,
        }
    }

    pub fn validate(&self) -> Result<(), crate::error::ConfigError> {
        use crate::error::ConfigError;
        if self.max_iters == 0 {
            return Err(ConfigError::new("max_iters must be at least 1"));
        }
        if self.damping_len == 0 {
            return Err(ConfigError::new("damping_len must be at least 1"));
        }
        if self.sigma2 < 0.0 || !self.sigma2.is_finite() {
            return Err(ConfigError::new(format!(
                "sigma2 must be >= 0, got {}",
                self.sigma2
            )));
        }
        if self.stop_tol < 0.0 {
            return Err(ConfigError::new("stop_tol must be >= 0"));
        }
        if self.probes == 0 {
            return Err(ConfigError::new("probes must be at least 1"));
        }
        Ok(())
    }

    pub(crate) fn xi_rule(&self) -> &dyn XiRule {
        match &self.xi_mode {
            XiMode::Simple => &SimpleXi,
            XiMode::Custom(rule) => rule.as_ref(),
        }
    }
}

/// One problem instance handed to the solver.
pub struct MampInput<'a, T: Field> {
    pub op: &'a LinearOperator<T>,
    pub y: &'a [T],
    /// Eigenvalues of AAᴴ when known; required by the naive and exactly
    /// scaled backends.
    pub eigs: Option<&'a [f64]>,
    /// Ground truth, when available, for trajectory MSE and diagnostics.
    pub x_true: Option<&'a [T]>,
    pub denoiser: &'a dyn Denoiser<T>,
}

/// Why a run stopped early with an error.
#[derive(Clone, Debug, PartialEq)]
pub enum FailureReason {
    MomentOverflow { k: usize },
    ScaledOverflow { exponent: f64 },
    NonFinite { what: String },
    DegenerateLedger { what: String },
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailureReason::MomentOverflow { k } => write!(f, "moment overflow at k={k}"),
            FailureReason::ScaledOverflow { exponent } => {
                write!(f, "scaled-arithmetic overflow (exponent {exponent:.1})")
            }
            FailureReason::NonFinite { what } => write!(f, "non-finite {what}"),
            FailureReason::DegenerateLedger { what } => write!(f, "degenerate ledger: {what}"),
        }
    }
}

impl From<SpectralError> for FailureReason {
    fn from(e: SpectralError) -> Self {
        match e {
            SpectralError::MomentOverflow { k } => FailureReason::MomentOverflow { k },
            SpectralError::ExponentOverflow { exponent } => {
                FailureReason::ScaledOverflow { exponent }
            }
            other => FailureReason::NonFinite {
                what: other.to_string(),
            },
        }
    }
}

/// Terminal state of a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    /// Ran all T iterations.
    MaxIters,
    /// Stopped early on the variance-change criterion.
    Converged { at_iter: usize },
    /// Stopped on a numerical failure; rows before `at_iter` are retained.
    Failed {
        at_iter: usize,
        reason: FailureReason,
    },
}

impl RunStatus {
    pub fn is_failure(&self) -> bool {
        matches!(self, RunStatus::Failed { .. })
    }
}

/// Per-iteration flags, rendered as `a|b` in outputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RowFlags(u8);

impl RowFlags {
    pub const VPHI_CLAMPED: RowFlags = RowFlags(1);
    pub const VGAMMA_CLAMPED: RowFlags = RowFlags(2);
    pub const BACKOFF: RowFlags = RowFlags(4);

    pub fn set(&mut self, other: RowFlags) {
        self.0 |= other.0;
    }

    pub fn set_if(&mut self, cond: bool, other: RowFlags) {
        if cond {
            self.0 |= other.0;
        }
    }

    pub fn contains(&self, other: RowFlags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for RowFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return write!(f, "-");
        }
        let mut first = true;
        for (bit, name) in [
            (RowFlags::VPHI_CLAMPED, "vphi_clamp"),
            (RowFlags::VGAMMA_CLAMPED, "vgamma_clamp"),
            (RowFlags::BACKOFF, "backoff"),
        ] {
            if self.contains(bit) {
                if !first {
                    write!(f, "|")?;
                }
                write!(f, "{name}")?;
                first = false;
            }
        }
        Ok(())
    }
}

/// One trajectory record.
#[derive(Clone, Debug)]
pub struct IterationRow {
    pub iter: usize,
    /// Cumulative matvecs on the operator counter, including any setup.
    pub matvecs: u64,
    /// MSE of the posterior-mean estimate against ground truth, in dB
    /// (NaN when the truth is unknown).
    pub mse_db: f64,
    /// Predicted variance of that estimate (the denoiser's v_post), in dB.
    pub v_pred_db: f64,
    /// Predicted variance of the undamped MLE output.
    pub v_gamma_pred: f64,
    /// Empirical (1/N)·‖mle_output − x‖² when the truth is known.
    pub v_gamma_emp: Option<f64>,
    pub damping_len: usize,
    pub flags: RowFlags,
    pub time_ms: f64,
}

/// Full run record.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub rows: Vec<IterationRow>,
    pub status: RunStatus,
    /// Matvecs consumed before iterating (extreme estimation, probes).
    pub setup_matvecs: u64,
    pub total_matvecs: u64,
}

impl Trajectory {
    pub fn final_mse_db(&self) -> Option<f64> {
        self.rows.last().map(|r| r.mse_db)
    }
}

/// Damping diagnostics handed to observers.
#[derive(Clone, Debug)]
pub struct DampingInfo {
    pub t: usize,
    pub kind: DampingKind,
    /// Row-major `dim`×`dim` covariance block actually solved.
    pub matrix: Vec<f64>,
    pub dim: usize,
    pub zeta: Vec<f64>,
    pub vbar: f64,
    pub backed_off: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DampingKind {
    /// NLE-side damping over denoiser candidates (GD).
    NlePhi,
    /// MLE-side damping over stored linear outputs (CR).
    MleGamma,
}

/// Hooks into a run. All methods default to no-ops.
#[allow(unused_variables)]
pub trait RunObserver<T: Field> {
    /// x_t exists (for GD this is the damped combination, for CR the plain
    /// NLE output of the previous iteration; x_1 = 0 is reported too).
    fn estimate_formed(&mut self, t: usize, x_t: &[T], v_phi_bar: f64) {}
    /// Undamped MLE output of iteration t with its predicted variance.
    fn mle_output(&mut self, t: usize, out: &[T], v_gamma_tt: f64) {}
    /// Damped MLE combination (CR only).
    fn mle_combined(&mut self, t: usize, r_t: &[T], v_gamma_bar_tt: f64) {}
    /// Orthogonalized denoiser output produced at iteration t.
    fn nle_candidate(&mut self, t: usize, cand: &[T], v_phi: f64) {}
    fn damping_solved(&mut self, t: usize, info: &DampingInfo) {}
}

/// The do-nothing observer.
impl<T: Field> RunObserver<T> for () {}

fn build_moment_table<T: Field>(
    input: &MampInput<'_, T>,
    config: &MampConfig,
    horizon: usize,
) -> Result<MomentTable, FailureReason> {
    let sigma2 = config.sigma2;
    match config.moment_backend {
        MomentBackendKind::Naive => {
            let eigs = input.eigs.ok_or_else(|| FailureReason::DegenerateLedger {
                what: "naive backend requires known eigenvalues".into(),
            })?;
            let (lmax, lmin) = extreme_of(eigs);
            let lambda_dag = 0.5 * (lmax + lmin);
            let theta0 = 1.0 / (lambda_dag + sigma2);
            Ok(MomentTable::Naive(
                NaiveMoments::from_eigenvalues(eigs, input.op.cols(), lambda_dag, theta0, horizon)
                    .map_err(FailureReason::from)?,
            ))
        }
        MomentBackendKind::ScaledExact => {
            let eigs = input.eigs.ok_or_else(|| FailureReason::DegenerateLedger {
                what: "exact scaled backend requires known eigenvalues".into(),
            })?;
            let (lmax, lmin) = extreme_of(eigs);
            let lambda_dag = 0.5 * (lmax + lmin);
            let theta0 = 1.0 / (lambda_dag + sigma2);
            Ok(MomentTable::Scaled(
                chi_table_exact(eigs, input.op.cols(), lambda_dag, theta0, horizon)
                    .map_err(FailureReason::from)?,
            ))
        }
        MomentBackendKind::ScaledStochastic => {
            let (lmax, lmin) = estimate_extremes(
                input.op,
                config.tau,
                derived_seed(config.seed, Stream::Extremes),
            )
            .map_err(FailureReason::from)?;
            let lambda_dag = 0.5 * (lmax + lmin);
            let theta0 = 1.0 / (lambda_dag + sigma2);
            Ok(MomentTable::Scaled(
                chi_table_stochastic(
                    input.op,
                    lambda_dag,
                    theta0,
                    horizon,
                    derived_seed(config.seed, Stream::Probe),
                    config.probes,
                )
                .map_err(FailureReason::from)?,
            ))
        }
    }
}

fn extreme_of(eigs: &[f64]) -> (f64, f64) {
    let lmax = eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lmin = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    (lmax, lmin)
}

/// Runs one algorithm on one problem instance.
pub fn run<T: Field>(
    input: &MampInput<'_, T>,
    config: &MampConfig,
    recursion: Recursion,
) -> Trajectory {
    run_observed(input, config, recursion, &mut ())
}

/// As [`run`], with observer hooks.
pub fn run_observed<T: Field>(
    input: &MampInput<'_, T>,
    config: &MampConfig,
    recursion: Recursion,
    observer: &mut dyn RunObserver<T>,
) -> Trajectory {
    config.validate().expect("invalid MampConfig");
    assert_eq!(input.y.len(), input.op.rows(), "observation length");

    // GD evaluates covariance terms with moment indices up to 2T − 1; CR's
    // linear stage only reaches index T − 1.
    let horizon = match recursion {
        Recursion::Gd => 2 * config.max_iters,
        Recursion::Cr => config.max_iters + 1,
    };

    let start_count = input.op.matvec_count();
    let table = match build_moment_table(input, config, horizon) {
        Ok(t) => t,
        Err(reason) => {
            return Trajectory {
                rows: Vec::new(),
                status: RunStatus::Failed { at_iter: 0, reason },
                setup_matvecs: input.op.matvec_count() - start_count,
                total_matvecs: input.op.matvec_count() - start_count,
            }
        }
    };
    let setup_matvecs = input.op.matvec_count() - start_count;

    let mut trajectory = match recursion {
        Recursion::Gd => gd::run(input, config, &table, observer, start_count),
        Recursion::Cr => cr::run(input, config, &table, observer, start_count),
    };
    trajectory.setup_matvecs = setup_matvecs;
    trajectory.total_matvecs = input.op.matvec_count() - start_count;
    trajectory
}
