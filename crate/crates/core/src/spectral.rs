//! Spectral moment tables for the MAMP orthogonalization machinery.
//!
//! The recursions need the trace moments b_k = (1/N)·tr{Bᵏ} and
//! w_k = (1/N)·tr{Aᴴ Bᵏ A} of the residual operator B = λ†I − AAᴴ for every
//! k below twice the iteration horizon. When the spectral radius of B
//! exceeds one, b_k grows geometrically and leaves double range long before
//! interesting horizons — that failure mode is kept available on purpose in
//! [`NaiveMoments`]. The production path instead stores the scaled sequence
//! χ_k = θ₀ᵏ w_k, which is bounded by δ·(λ† + θ₀⁻¹) for every k, and
//! reconstructs any requested product α·w_k as sgn(α)·e^{log|α| − k·log θ₀}·χ_k.
//! The coefficients the algorithms feed in decay at least as fast as θ₀ᵏ, so
//! the exponent stays small.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::SpectralError;
use crate::field::{inner_re, norm2, Field};
use crate::operator::LinearOperator;

/// A real scalar held as sign plus natural log of magnitude, so that long
/// products of large or tiny factors never leave double range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaledScalar {
    sign: i8,
    log_mag: f64,
}

impl ScaledScalar {
    pub const ZERO: ScaledScalar = ScaledScalar {
        sign: 0,
        log_mag: f64::NEG_INFINITY,
    };
    pub const ONE: ScaledScalar = ScaledScalar {
        sign: 1,
        log_mag: 0.0,
    };

    pub fn from_value(x: f64) -> Self {
        debug_assert!(!x.is_nan());
        if x == 0.0 {
            Self::ZERO
        } else {
            Self {
                sign: if x > 0.0 { 1 } else { -1 },
                log_mag: x.abs().ln(),
            }
        }
    }

    pub fn from_sign_log(sign: i8, log_mag: f64) -> Self {
        debug_assert!(sign == -1 || sign == 0 || sign == 1);
        if sign == 0 {
            Self::ZERO
        } else {
            Self { sign, log_mag }
        }
    }

    pub fn sign(&self) -> i8 {
        self.sign
    }

    pub fn log_mag(&self) -> f64 {
        self.log_mag
    }

    pub fn is_zero(&self) -> bool {
        self.sign == 0
    }

    pub fn value(&self) -> f64 {
        self.sign as f64 * self.log_mag.exp()
    }

    pub fn mul_value(self, x: f64) -> Self {
        self * Self::from_value(x)
    }
}

/// Signs multiply, log magnitudes add; never overflows.
impl std::ops::Mul for ScaledScalar {
    type Output = ScaledScalar;

    fn mul(self, other: Self) -> Self {
        if self.sign == 0 || other.sign == 0 {
            return Self::ZERO;
        }
        Self {
            sign: self.sign * other.sign,
            log_mag: self.log_mag + other.log_mag,
        }
    }
}

/// Where a table's moments came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MomentSource {
    Exact,
    Stochastic,
}

/// Overflow-safe table of scaled moments χ_k = θ₀ᵏ w_k with the spectrum
/// summary that parametrizes the recursions.
#[derive(Clone, Debug)]
pub struct SpectralTable {
    lambda_max: f64,
    lambda_min: f64,
    lambda_dag: f64,
    theta0: f64,
    log_theta0: f64,
    delta: f64,
    chi: Vec<f64>,
    source: MomentSource,
}

impl SpectralTable {
    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_dag(&self) -> f64 {
        self.lambda_dag
    }

    pub fn theta0(&self) -> f64 {
        self.theta0
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn source(&self) -> MomentSource {
        self.source
    }

    /// Number of stored moments (indices 0..horizon).
    pub fn horizon(&self) -> usize {
        self.chi.len()
    }

    pub fn chi(&self) -> &[f64] {
        &self.chi
    }

    /// The bound δ·(λ† + θ₀⁻¹) that every exact χ_k satisfies.
    pub fn chi_bound(&self) -> f64 {
        self.delta * (self.lambda_dag + 1.0 / self.theta0)
    }

    /// w₀ = (1/N)·tr{AAᴴ}, exactly 1 under unit power normalization.
    pub fn w0(&self) -> f64 {
        self.chi[0]
    }

    fn reconstruct(&self, alpha: ScaledScalar, k: usize) -> Result<f64, SpectralError> {
        let exponent = alpha.log_mag() - k as f64 * self.log_theta0;
        if exponent > 700.0 {
            return Err(SpectralError::ExponentOverflow { exponent });
        }
        Ok(alpha.sign() as f64 * exponent.exp())
    }

    /// α·w_k reconstructed from the scaled table in O(1).
    pub fn scaled_w(&self, alpha: ScaledScalar, k: usize) -> Result<f64, SpectralError> {
        if k >= self.chi.len() {
            return Err(SpectralError::HorizonExceeded {
                k,
                horizon: self.chi.len(),
            });
        }
        if alpha.is_zero() {
            return Ok(0.0);
        }
        Ok(self.reconstruct(alpha, k)? * self.chi[k])
    }

    /// α·w̄_{i,j} where w̄_{i,j} = λ†·w_{i+j} − w_{i+j+1} − w_i·w_j.
    pub fn scaled_wbar(
        &self,
        alpha: ScaledScalar,
        i: usize,
        j: usize,
    ) -> Result<f64, SpectralError> {
        Ok(self.scaled_pair(alpha, i, j)?.1)
    }

    /// (α·w_{i+j}, α·w̄_{i,j}) sharing one exponential. Both appear together
    /// in every error-covariance term, so this halves the transcendental cost.
    pub fn scaled_pair(
        &self,
        alpha: ScaledScalar,
        i: usize,
        j: usize,
    ) -> Result<(f64, f64), SpectralError> {
        let a = i + j;
        if a + 1 >= self.chi.len() {
            return Err(SpectralError::HorizonExceeded {
                k: a + 1,
                horizon: self.chi.len(),
            });
        }
        if alpha.is_zero() {
            return Ok((0.0, 0.0));
        }
        let factor = self.reconstruct(alpha, a)?;
        let w = factor * self.chi[a];
        let wbar = factor
            * (self.lambda_dag * self.chi[a]
                - self.chi[a + 1] / self.theta0
                - self.chi[i] * self.chi[j]);
        Ok((w, wbar))
    }
}

/// Exact table from the eigenvalues of AAᴴ.
///
/// Per eigenvalue the contribution to χ_k is λ_j·sᵏ·e^{k·log|θ₀(λ†−λ_j)|}
/// with s = sgn(λ† − λ_j); the log term is advanced once per k, so the whole
/// table costs O(M·horizon) with no intermediate outside double range
/// (|θ₀(λ† − λ_j)| < 1 whenever θ₀ < (λ† − λ_min)⁻¹). Eigenvalues exactly
/// equal to λ† contribute nothing beyond k = 0 and are skipped rather than
/// sent through log 0.
pub fn chi_table_exact(
    eigs: &[f64],
    n: usize,
    lambda_dag: f64,
    theta0: f64,
    horizon: usize,
) -> Result<SpectralTable, SpectralError> {
    if eigs.is_empty() || n == 0 || horizon == 0 {
        return Err(SpectralError::InvalidInput(
            "empty spectrum or zero horizon".into(),
        ));
    }
    if theta0 <= 0.0 || !theta0.is_finite() {
        return Err(SpectralError::InvalidInput(format!(
            "theta0 must be positive, got {theta0}"
        )));
    }
    if eigs.iter().any(|&l| l < 0.0 || !l.is_finite()) {
        return Err(SpectralError::InvalidInput(
            "eigenvalues of AAH must be finite and >= 0".into(),
        ));
    }

    let log_theta0 = theta0.ln();
    let inv_n = 1.0 / n as f64;

    struct Term {
        weight: f64,
        sign: i8,
        step: f64,
        acc: f64,
        cur_sign: i8,
    }
    let mut terms: Vec<Term> = eigs
        .iter()
        .filter(|&&l| l != 0.0 && l != lambda_dag)
        .map(|&l| {
            let lb = lambda_dag - l;
            Term {
                weight: l,
                sign: if lb > 0.0 { 1 } else { -1 },
                step: lb.abs().ln() + log_theta0,
                acc: 0.0,
                cur_sign: 1,
            }
        })
        .collect();

    let mut chi = Vec::with_capacity(horizon);
    // k = 0: every eigenvalue contributes its weight, including λ_j = λ†.
    chi.push(eigs.iter().sum::<f64>() * inv_n);
    for _ in 1..horizon {
        let mut acc = 0.0;
        for t in &mut terms {
            t.acc += t.step;
            t.cur_sign *= t.sign;
            acc += t.weight * t.cur_sign as f64 * t.acc.exp();
        }
        chi.push(acc * inv_n);
    }

    let lambda_max = eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lambda_min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    let table = SpectralTable {
        lambda_max,
        lambda_min,
        lambda_dag,
        theta0,
        log_theta0,
        delta: eigs.len() as f64 * inv_n,
        chi,
        source: MomentSource::Exact,
    };
    debug_assert!(table.chi.iter().all(|c| c.is_finite()));
    Ok(table)
}

/// Eigenvalue-free table: χ_k estimated from a Gaussian probe driven through
/// the scaled residual recursion h̄_i = θ₀·B·h̄_{i−1}, h̄₀ = A·h₀ with
/// h₀ ~ N(0, I/N). Then χ_k ≈ Re(h̄_{⌈k/2⌉}ᴴ h̄_{⌊k/2⌋}). The two indices
/// are always consecutive, so only two probe vectors stay live. Costs exactly
/// `horizon + 1` matvecs per probe for an even horizon (one to form h̄₀, two
/// per recursion step).
pub fn chi_table_stochastic<T: Field>(
    op: &LinearOperator<T>,
    lambda_dag: f64,
    theta0: f64,
    horizon: usize,
    seed: u64,
    probes: usize,
) -> Result<SpectralTable, SpectralError> {
    if horizon == 0 || probes == 0 {
        return Err(SpectralError::InvalidInput(
            "horizon and probes must be positive".into(),
        ));
    }
    if theta0 <= 0.0 || !theta0.is_finite() {
        return Err(SpectralError::InvalidInput(format!(
            "theta0 must be positive, got {theta0}"
        )));
    }
    let n = op.cols();
    let steps = horizon / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chi = vec![0.0; horizon];

    for _ in 0..probes {
        let scale = 1.0 / (n as f64).sqrt();
        let h0: Vec<T> = (0..n)
            .map(|_| T::sample_standard(&mut rng).scale(scale))
            .collect();
        let mut prev = op.apply(&h0).expect("probe length");
        chi[0] += norm2(&prev);
        for i in 1..=steps {
            let mut cur = op.apply_b(lambda_dag, &prev).expect("probe length");
            for x in &mut cur {
                *x = x.scale(theta0);
            }
            let k_odd = 2 * i - 1;
            if k_odd < horizon {
                chi[k_odd] += inner_re(&cur, &prev);
            }
            let k_even = 2 * i;
            if k_even < horizon {
                chi[k_even] += norm2(&cur);
            }
            prev = cur;
        }
    }
    let inv_p = 1.0 / probes as f64;
    for c in &mut chi {
        *c *= inv_p;
    }

    Ok(SpectralTable {
        lambda_max: f64::NAN,
        lambda_min: f64::NAN,
        lambda_dag,
        theta0,
        log_theta0: theta0.ln(),
        delta: op.delta(),
        chi,
        source: MomentSource::Stochastic,
    })
}

/// Power-iteration estimates of the extreme eigenvalues of AAᴴ.
///
/// Splits the iteration budget τ between a pass on AAᴴ (whose Rayleigh
/// quotient converges to λ_max from below, inflated by 1.05 for safety) and a
/// pass on λ̂_max·I − AAᴴ for the bottom edge, clamped into [0, λ̂_max].
/// Consumes 2τ matvecs.
pub fn estimate_extremes<T: Field>(
    op: &LinearOperator<T>,
    tau: usize,
    seed: u64,
) -> Result<(f64, f64), SpectralError> {
    if tau < 10 {
        return Err(SpectralError::InvalidInput(format!(
            "iteration budget tau={tau} below 10"
        )));
    }
    let m = op.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    fn normalize<T: Field>(v: &mut [T]) -> f64 {
        let nn = norm2(v).sqrt();
        if nn > 0.0 {
            for x in v.iter_mut() {
                *x = x.scale(1.0 / nn);
            }
        }
        nn
    }

    let mut v: Vec<T> = (0..m).map(|_| T::sample_standard(&mut rng)).collect();
    normalize(&mut v);
    let mut rayleigh = 0.0;
    for _ in 0..tau.div_ceil(2) {
        let mut w = op.apply(&op.apply_adjoint(&v).expect("len")).expect("len");
        rayleigh = inner_re(&v, &w);
        if normalize(&mut w) == 0.0 {
            return Err(SpectralError::DegenerateSpectrum(
                "AAH annihilated the probe".into(),
            ));
        }
        v = w;
    }
    let lambda_max = rayleigh * 1.05;

    let mut v: Vec<T> = (0..m).map(|_| T::sample_standard(&mut rng)).collect();
    normalize(&mut v);
    let mut shifted_rayleigh = 0.0;
    for _ in 0..tau / 2 {
        let aav = op.apply(&op.apply_adjoint(&v).expect("len")).expect("len");
        let mut w: Vec<T> = v
            .iter()
            .zip(&aav)
            .map(|(&x, &y)| x.scale(lambda_max) - y)
            .collect();
        shifted_rayleigh = inner_re(&v, &w);
        if normalize(&mut w) == 0.0 {
            // The shifted operator annihilated the probe: flat spectrum.
            break;
        }
        v = w;
    }
    let lambda_min = (lambda_max - shifted_rayleigh).clamp(0.0, lambda_max);
    Ok((lambda_max, lambda_min))
}

/// Report from the deliberately overflow-prone direct moment computation.
#[derive(Clone, Debug)]
pub struct NaiveBReport {
    /// b_0 .. b_{count−1} in plain double precision.
    pub b: Vec<f64>,
    /// First index with a non-finite b_k, if any.
    pub first_nonfinite: Option<usize>,
}

/// Direct b_k = (1/N)·Σ_j (λ† − λ_j)ᵏ for k < count. Producing inf/NaN past
/// the double range is the point: this is the overflow demonstrator.
pub fn naive_b_moments(eigs: &[f64], n: usize, lambda_dag: f64, count: usize) -> NaiveBReport {
    assert!(count >= 1, "moment count must be >= 1");
    let inv_n = 1.0 / n as f64;
    let lb: Vec<f64> = eigs.iter().map(|&l| lambda_dag - l).collect();
    let mut powers = vec![1.0f64; lb.len()];
    let mut b = Vec::with_capacity(count);
    for _ in 0..count {
        b.push(powers.iter().sum::<f64>() * inv_n);
        for (p, &x) in powers.iter_mut().zip(&lb) {
            *p *= x;
        }
    }
    let first_nonfinite = b.iter().position(|x| !x.is_finite());
    NaiveBReport { b, first_nonfinite }
}

/// Plain-double moment table, the original GD-MAMP arithmetic. Requests that
/// touch a non-finite moment fail with [`SpectralError::MomentOverflow`].
#[derive(Clone, Debug)]
pub struct NaiveMoments {
    lambda_dag: f64,
    theta0: f64,
    delta: f64,
    b: Vec<f64>,
    w: Vec<f64>,
    first_nonfinite_b: Option<usize>,
}

impl NaiveMoments {
    pub fn from_eigenvalues(
        eigs: &[f64],
        n: usize,
        lambda_dag: f64,
        theta0: f64,
        horizon: usize,
    ) -> Result<Self, SpectralError> {
        if eigs.is_empty() || n == 0 || horizon == 0 {
            return Err(SpectralError::InvalidInput(
                "empty spectrum or zero horizon".into(),
            ));
        }
        let report = naive_b_moments(eigs, n, lambda_dag, horizon + 1);
        let w: Vec<f64> = (0..horizon)
            .map(|k| lambda_dag * report.b[k] - report.b[k + 1])
            .collect();
        Ok(Self {
            lambda_dag,
            theta0,
            delta: eigs.len() as f64 / n as f64,
            b: report.b,
            w,
            first_nonfinite_b: report.first_nonfinite,
        })
    }

    pub fn lambda_dag(&self) -> f64 {
        self.lambda_dag
    }

    pub fn theta0(&self) -> f64 {
        self.theta0
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn horizon(&self) -> usize {
        self.w.len()
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn first_nonfinite_b(&self) -> Option<usize> {
        self.first_nonfinite_b
    }

    pub fn w0(&self) -> f64 {
        self.w[0]
    }

    fn w_at(&self, k: usize) -> Result<f64, SpectralError> {
        if k >= self.w.len() {
            return Err(SpectralError::HorizonExceeded {
                k,
                horizon: self.w.len(),
            });
        }
        let v = self.w[k];
        if !v.is_finite() {
            return Err(SpectralError::MomentOverflow { k });
        }
        Ok(v)
    }

    pub fn scaled_w(&self, alpha: ScaledScalar, k: usize) -> Result<f64, SpectralError> {
        let w = self.w_at(k)?;
        let v = alpha.value() * w;
        if !v.is_finite() {
            return Err(SpectralError::MomentOverflow { k });
        }
        Ok(v)
    }

    pub fn scaled_pair(
        &self,
        alpha: ScaledScalar,
        i: usize,
        j: usize,
    ) -> Result<(f64, f64), SpectralError> {
        let a = i + j;
        let wa = self.w_at(a)?;
        let wa1 = self.w_at(a + 1)?;
        let (wi, wj) = (self.w_at(i)?, self.w_at(j)?);
        let av = alpha.value();
        let w = av * wa;
        let wbar = av * (self.lambda_dag * wa - wa1 - wi * wj);
        if !w.is_finite() || !wbar.is_finite() {
            return Err(SpectralError::MomentOverflow { k: a + 1 });
        }
        Ok((w, wbar))
    }
}

/// Moment backend used by a run: either the overflow-prone direct arithmetic
/// or a scaled table (exact or stochastic).
#[derive(Clone, Debug)]
pub enum MomentTable {
    Naive(NaiveMoments),
    Scaled(SpectralTable),
}

impl MomentTable {
    pub fn lambda_dag(&self) -> f64 {
        match self {
            MomentTable::Naive(t) => t.lambda_dag(),
            MomentTable::Scaled(t) => t.lambda_dag(),
        }
    }

    pub fn theta0(&self) -> f64 {
        match self {
            MomentTable::Naive(t) => t.theta0(),
            MomentTable::Scaled(t) => t.theta0(),
        }
    }

    pub fn delta(&self) -> f64 {
        match self {
            MomentTable::Naive(t) => t.delta(),
            MomentTable::Scaled(t) => t.delta(),
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            MomentTable::Naive(t) => t.horizon(),
            MomentTable::Scaled(t) => t.horizon(),
        }
    }

    pub fn w0(&self) -> f64 {
        match self {
            MomentTable::Naive(t) => t.w0(),
            MomentTable::Scaled(t) => t.w0(),
        }
    }

    pub fn scaled_w(&self, alpha: ScaledScalar, k: usize) -> Result<f64, SpectralError> {
        match self {
            MomentTable::Naive(t) => t.scaled_w(alpha, k),
            MomentTable::Scaled(t) => t.scaled_w(alpha, k),
        }
    }

    /// (α·w_{i+j}, α·w̄_{i,j}).
    pub fn scaled_pair(
        &self,
        alpha: ScaledScalar,
        i: usize,
        j: usize,
    ) -> Result<(f64, f64), SpectralError> {
        match self {
            MomentTable::Naive(t) => t.scaled_pair(alpha, i, j),
            MomentTable::Scaled(t) => t.scaled_pair(alpha, i, j),
        }
    }
}
