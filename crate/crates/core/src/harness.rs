//! Experiment generation and measurement.
//!
//! A single [`ExperimentConfig`] describes a synthetic recovery problem
//! (structured operator, Bernoulli-Gaussian signal, SNR) plus the algorithm
//! to run on it. Everything random derives from one master seed through
//! fixed streams, so a `(config, seed)` pair reproduces bit-identical
//! problems and trajectories.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::denoiser::{sample_bg, BgPrior};
use crate::error::ConfigError;
use crate::field::{mse_db, Field};
use crate::mamp::{
    run as mamp_run, MampConfig, MampInput, MomentBackendKind, Recursion, Trajectory,
};
use crate::operator::{LinearOperator, StructuredSpec};
use crate::seeds::{derived_seed, stream_rng, Stream};
use crate::spectral::{chi_table_exact, naive_b_moments};
use crate::transform::TransformKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    Real,
    Complex,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformChoice {
    Dct,
    Dft,
    /// The structured operator materialized as an explicit matrix; same A,
    /// O(mn) application. Mostly an oracle/debugging backend.
    Dense,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmKind {
    /// GD recursion, naive moments by default.
    Gd,
    /// GD recursion on the exactly scaled table (known eigenvalues).
    OaEig,
    /// GD recursion on the stochastic table (eigenvalues unknown).
    OaStoch,
    /// Complexity-reduced recursion.
    Cr,
}

impl AlgorithmKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AlgorithmKind::Gd => "gd",
            AlgorithmKind::OaEig => "oa-eig",
            AlgorithmKind::OaStoch => "oa-stoch",
            AlgorithmKind::Cr => "cr",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EigKnowledge {
    Known,
    Unknown,
}

/// Moment-backend request; `Auto` follows the algorithm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentsChoice {
    Auto,
    Naive,
    Scaled,
}

/// How SNR in dB maps to the noise variance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SnrConvention {
    /// σ² = E‖Ax‖²/(M·10^{SNR/10}) = N/(M·10^{SNR/10}) under unit signal
    /// power and unit trace normalization.
    MeasurementPower,
    /// σ² = 10^{−SNR/10}.
    NoiseInverse,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub m: usize,
    pub n: usize,
    /// Nonzero probability of the Bernoulli-Gaussian signal.
    pub mu: f64,
    /// Condition parameter of the singular profile.
    pub kappa: f64,
    pub snr_db: f64,
    pub snr_convention: SnrConvention,
    pub field: FieldKind,
    pub transform: TransformChoice,
    pub algorithm: AlgorithmKind,
    pub moments: MomentsChoice,
    pub iters: usize,
    pub damping_len: usize,
    pub seed: u64,
    pub eig_knowledge: Option<EigKnowledge>,
    /// Power-iteration budget when extremes are estimated.
    pub tau: usize,
    /// Probe average count for the stochastic moment table.
    pub probes: usize,
    pub stop_tol: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            m: 1024,
            n: 2048,
            mu: 0.1,
            kappa: 100.0,
            snr_db: 35.0,
            snr_convention: SnrConvention::MeasurementPower,
            field: FieldKind::Real,
            transform: TransformChoice::Dct,
            algorithm: AlgorithmKind::OaEig,
            moments: MomentsChoice::Auto,
            iters: 50,
            damping_len: 3,
            seed: 0,
            eig_knowledge: None,
            tau: 30,
            probes: 1,
            stop_tol: 0.0,
        }
    }
}

impl ExperimentConfig {
    /// Effective eigenvalue knowledge: explicit setting, else implied by the
    /// algorithm (only `oa-stoch` runs blind by default).
    pub fn effective_eig_knowledge(&self) -> EigKnowledge {
        self.eig_knowledge.unwrap_or(match self.algorithm {
            AlgorithmKind::OaStoch => EigKnowledge::Unknown,
            _ => EigKnowledge::Known,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.m == 0 || self.n == 0 {
            return Err(ConfigError::new("dimensions must be positive"));
        }
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return Err(ConfigError::new(format!(
                "mu must lie in (0, 1], got {}",
                self.mu
            )));
        }
        if self.kappa < 1.0 {
            return Err(ConfigError::new("kappa must be >= 1"));
        }
        if self.iters == 0 || self.damping_len == 0 {
            return Err(ConfigError::new("iters and damping_len must be positive"));
        }
        match (self.transform, self.field) {
            (TransformChoice::Dct, FieldKind::Complex) => {
                return Err(ConfigError::new("DCT requires the real field"))
            }
            (TransformChoice::Dft, FieldKind::Real) => {
                return Err(ConfigError::new("DFT requires the complex field"))
            }
            _ => {}
        }
        match (self.algorithm, self.effective_eig_knowledge()) {
            (AlgorithmKind::OaEig, EigKnowledge::Unknown) => {
                return Err(ConfigError::new("oa-eig requires known eigenvalues"))
            }
            (AlgorithmKind::OaStoch, EigKnowledge::Known) => return Err(ConfigError::new(
                "oa-stoch is the eigenvalue-free variant; use oa-eig when eigenvalues are known",
            )),
            (AlgorithmKind::Gd, EigKnowledge::Unknown)
                if self.effective_moments() == MomentBackendKind::Naive =>
            {
                return Err(ConfigError::new(
                    "gd with naive moments requires known eigenvalues",
                ))
            }
            _ => {}
        }
        Ok(())
    }

    /// Concrete moment backend after resolving `Auto` and eigenvalue
    /// knowledge.
    pub fn effective_moments(&self) -> MomentBackendKind {
        let unknown = self.effective_eig_knowledge() == EigKnowledge::Unknown;
        match (self.moments, self.algorithm) {
            (MomentsChoice::Naive, _) => MomentBackendKind::Naive,
            (MomentsChoice::Scaled, _) | (MomentsChoice::Auto, AlgorithmKind::OaEig) => {
                if unknown {
                    MomentBackendKind::ScaledStochastic
                } else {
                    MomentBackendKind::ScaledExact
                }
            }
            (MomentsChoice::Auto, AlgorithmKind::Gd) => MomentBackendKind::Naive,
            (MomentsChoice::Auto, AlgorithmKind::OaStoch) => MomentBackendKind::ScaledStochastic,
            (MomentsChoice::Auto, AlgorithmKind::Cr) => {
                if unknown {
                    MomentBackendKind::ScaledStochastic
                } else {
                    MomentBackendKind::ScaledExact
                }
            }
        }
    }

    pub fn recursion(&self) -> Recursion {
        match self.algorithm {
            AlgorithmKind::Cr => Recursion::Cr,
            _ => Recursion::Gd,
        }
    }

    /// Noise variance implied by the SNR convention.
    pub fn sigma2(&self) -> f64 {
        let snr = 10f64.powf(self.snr_db / 10.0);
        match self.snr_convention {
            SnrConvention::MeasurementPower => self.n as f64 / (self.m as f64 * snr),
            SnrConvention::NoiseInverse => 1.0 / snr,
        }
    }

    pub fn to_mamp_config(&self) -> MampConfig {
        let mut cfg = MampConfig::new(self.iters, self.sigma2());
        cfg.damping_len = self.damping_len;
        cfg.moment_backend = self.effective_moments();
        cfg.stop_tol = self.stop_tol;
        cfg.seed = self.seed;
        cfg.tau = self.tau;
        cfg.probes = self.probes;
        cfg
    }

    /// Canonical `key=value` echo used in output headers and file naming.
    pub fn echo(&self) -> String {
        format!(
            "algo={} m={} n={} mu={} kappa={} snr_db={} snr_convention={} field={} transform={} \
             moments={} iters={} damping_len={} seed={} eig_knowledge={} tau={} probes={} stop_tol={}",
            self.algorithm.as_str(),
            self.m,
            self.n,
            self.mu,
            self.kappa,
            self.snr_db,
            match self.snr_convention {
                SnrConvention::MeasurementPower => "measurement-power",
                SnrConvention::NoiseInverse => "noise-inverse",
            },
            match self.field {
                FieldKind::Real => "real",
                FieldKind::Complex => "complex",
            },
            match self.transform {
                TransformChoice::Dct => "dct",
                TransformChoice::Dft => "dft",
                TransformChoice::Dense => "dense",
            },
            match self.moments {
                MomentsChoice::Auto => "auto",
                MomentsChoice::Naive => "naive",
                MomentsChoice::Scaled => "scaled",
            },
            self.iters,
            self.damping_len,
            self.seed,
            match self.effective_eig_knowledge() {
                EigKnowledge::Known => "known",
                EigKnowledge::Unknown => "unknown",
            },
            self.tau,
            self.probes,
            self.stop_tol,
        )
    }
}

/// A generated problem instance.
pub struct Problem<T: Field> {
    pub op: LinearOperator<T>,
    pub x_true: Vec<T>,
    pub y: Vec<T>,
    pub sigma2: f64,
    /// Eigenvalues of AAᴴ, populated when the config declares them known.
    pub eigs: Option<Vec<f64>>,
    pub spec: StructuredSpec,
}

/// Builds operator, signal, noise, and observation from the config's seed
/// streams (signal, noise, permutation).
pub fn generate_problem<T: Field>(config: &ExperimentConfig) -> Result<Problem<T>, ConfigError> {
    config.validate()?;
    let spec = StructuredSpec::new(
        config.m,
        config.n,
        config.kappa,
        T::NATIVE_TRANSFORM,
        derived_seed(config.seed, Stream::Permutation),
    )?;
    let op = match config.transform {
        TransformChoice::Dense => materialize_dense(&spec)?,
        _ => LinearOperator::build_structured(&spec)?,
    };

    let prior = BgPrior::new(config.mu)?;
    let x_true: Vec<T> = sample_bg(config.n, &prior, derived_seed(config.seed, Stream::Signal));

    let sigma2 = config.sigma2();
    let ax = op.apply(&x_true).expect("signal length");
    let mut noise_rng = stream_rng(config.seed, Stream::Noise);
    let noise_scale = sigma2.sqrt();
    let y: Vec<T> = ax
        .iter()
        .map(|&v| v + T::sample_standard(&mut noise_rng).scale(noise_scale))
        .collect();

    let eigs = match config.effective_eig_knowledge() {
        EigKnowledge::Known => Some(spec.eigenvalues()),
        EigKnowledge::Unknown => None,
    };
    Ok(Problem {
        op,
        x_true,
        y,
        sigma2,
        eigs,
        spec,
    })
}

/// Materializes Σ Π F column by column through a scratch structured operator.
fn materialize_dense<T: Field>(spec: &StructuredSpec) -> Result<LinearOperator<T>, ConfigError> {
    let fast = LinearOperator::<T>::build_structured(spec)?;
    let n = spec.n;
    let mut cols: Vec<Vec<T>> = Vec::with_capacity(n);
    let mut e = vec![T::zero(); n];
    for j in 0..n {
        e[j] = T::from_re(1.0);
        cols.push(fast.apply(&e).expect("basis length"));
        e[j] = T::zero();
    }
    let rows: Vec<Vec<T>> = (0..spec.m)
        .map(|i| (0..n).map(|j| cols[j][i]).collect())
        .collect();
    LinearOperator::build_dense(&rows)
}

/// MSE in dB against the ground truth; −320 dB floor for exact recovery.
pub fn measure<T: Field>(x_hat: &[T], x_true: &[T]) -> f64 {
    mse_db(x_hat, x_true)
}

/// Runs the configured algorithm on a freshly generated problem.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Trajectory, ConfigError> {
    config.validate()?;
    match config.field {
        FieldKind::Real => run_typed::<f64>(config),
        FieldKind::Complex => run_typed::<Complex64>(config),
    }
}

fn run_typed<T: Field>(config: &ExperimentConfig) -> Result<Trajectory, ConfigError>
where
    BgPrior: crate::denoiser::Denoiser<T>,
{
    let problem = generate_problem::<T>(config)?;
    let denoiser = BgPrior::new(config.mu)?;
    let input = MampInput {
        op: &problem.op,
        y: &problem.y,
        eigs: problem.eigs.as_deref(),
        x_true: Some(&problem.x_true),
        denoiser: &denoiser,
    };
    Ok(mamp_run(
        &input,
        &config.to_mamp_config(),
        config.recursion(),
    ))
}

/// Runs a list of experiment cells, in parallel, results in input order.
pub fn run_sweep(configs: &[ExperimentConfig]) -> Vec<Result<Trajectory, ConfigError>> {
    use rayon::prelude::*;
    configs.par_iter().map(run_experiment).collect()
}

/// Side-by-side report of the naive moment growth and the scaled table.
#[derive(Clone, Debug)]
pub struct OverflowReport {
    /// Spectral radius of B.
    pub rho_b: f64,
    /// ρ(B) > 1, i.e. the naive moments grow geometrically.
    pub overflow_regime: bool,
    /// First non-finite naive b_k, if any.
    pub first_nonfinite_b: Option<usize>,
    pub max_abs_chi: f64,
    pub chi_bound: f64,
    /// min over k of (bound − |χ_k|); nonnegative when the bound holds.
    pub min_bound_margin: f64,
    pub horizon: usize,
}

/// Runs the naive moment recursion and the scaled table side by side on the
/// configured spectrum. ρ(B) ≤ 1 is reported as "no overflow regime" rather
/// than an error.
pub fn overflow_demo(config: &ExperimentConfig) -> Result<OverflowReport, ConfigError> {
    let spec = StructuredSpec::new(
        config.m,
        config.n,
        config.kappa,
        TransformKind::Dct,
        derived_seed(config.seed, Stream::Permutation),
    )?;
    let eigs = spec.eigenvalues();
    let lambda_dag = 0.5 * (eigs[0] + eigs[eigs.len() - 1]);
    let rho_b = 0.5 * (eigs[0] - eigs[eigs.len() - 1]);
    let sigma2 = config.sigma2();
    let theta0 = 1.0 / (lambda_dag + sigma2);
    let horizon = 2 * config.iters;

    let naive = naive_b_moments(&eigs, config.n, lambda_dag, horizon + 1);
    let table = chi_table_exact(&eigs, config.n, lambda_dag, theta0, horizon)
        .map_err(|e| ConfigError::new(e.to_string()))?;
    let bound = table.chi_bound();
    let max_abs_chi = table.chi().iter().fold(0.0f64, |a, &c| a.max(c.abs()));
    Ok(OverflowReport {
        rho_b,
        overflow_regime: rho_b > 1.0,
        first_nonfinite_b: naive.first_nonfinite,
        max_abs_chi,
        chi_bound: bound,
        min_bound_margin: bound - max_abs_chi,
        horizon,
    })
}
