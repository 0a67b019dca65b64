//! Separable MMSE denoising for the Bernoulli-Gaussian prior.
//!
//! The input model is r = x + e with e ~ N(0, v_in) entrywise. Alongside the
//! posterior mean, the denoiser reports the orthogonalized (divergence
//! corrected) output used by the non-linear estimator: the extrinsic mean
//! whose error decorrelates from the input error, with variance
//! 1/v_φ = 1/v_post − 1/v_in.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ConfigError, DenoiseError};
use crate::field::Field;

/// Bernoulli-Gaussian prior with nonzero probability μ and unit per-entry
/// variance (nonzero component variance 1/μ).
#[derive(Clone, Copy, Debug)]
pub struct BgPrior {
    mu: f64,
}

impl BgPrior {
    pub fn new(mu: f64) -> Result<Self, ConfigError> {
        if !(mu > 0.0 && mu <= 1.0) {
            return Err(ConfigError::new(format!(
                "sparsity mu must lie in (0, 1], got {mu}"
            )));
        }
        Ok(Self { mu })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }
}

/// Output of one denoising pass.
#[derive(Clone, Debug)]
pub struct DenoiseResult<T> {
    /// Posterior mean E[x | r] per entry; the reported signal estimate.
    pub x_post: Vec<T>,
    /// Average posterior variance.
    pub v_post: f64,
    /// Orthogonalized output v_φ·(x_post/v_post − r/v_in).
    pub x_orth: Vec<T>,
    /// Variance of the orthogonalized output, (1/v_post − 1/v_in)⁻¹.
    pub v_phi: f64,
    /// True when v_φ left [1e-12, 1e6] and was clamped.
    pub clamped: bool,
}

/// Any separable Lipschitz estimator with a reported posterior variance can
/// serve as the non-linear stage; the BG denoiser is the shipped one.
pub trait Denoiser<T: Field>: Send + Sync {
    fn denoise(&self, r: &[T], v_in: f64) -> Result<DenoiseResult<T>, DenoiseError>;
}

/// Scalar spike-and-slab posterior: x ~ (1−μ)·δ₀ + μ·N(0, ν), observed as
/// r = x + N(0, v). Returns (posterior mean, posterior variance).
fn bg_scalar_posterior(r: f64, v: f64, mu: f64, nu: f64) -> (f64, f64) {
    let s = nu + v;
    let gain = nu / s;
    let mean_active = gain * r;
    let var_active = nu * v / s;
    let pi = if mu >= 1.0 {
        1.0
    } else {
        // log N(r;0,s) − log N(r;0,v) plus the prior odds, through a logistic.
        let d = mu.ln() - (1.0 - mu).ln() - 0.5 * ((s / v).ln() + r * r / s - r * r / v);
        if d >= 0.0 {
            1.0 / (1.0 + (-d).exp())
        } else {
            let e = d.exp();
            e / (1.0 + e)
        }
    };
    let mean = pi * mean_active;
    let second = pi * (var_active + mean_active * mean_active);
    (mean, second - mean * mean)
}

/// Forms the orthogonalized output from posterior quantities. Exposed so the
/// clamping rule is testable with arbitrary (v_post, v_in) pairs.
pub fn orthogonalize<T: Field>(
    x_post: &[T],
    v_post: f64,
    r: &[T],
    v_in: f64,
) -> (Vec<T>, f64, bool) {
    let inv_vphi = 1.0 / v_post - 1.0 / v_in;
    let raw = 1.0 / inv_vphi;
    let (v_phi, clamped) = if raw.is_finite() && raw > 0.0 {
        let c = raw.clamp(1e-12, 1e6);
        (c, c != raw)
    } else {
        // The denoiser gained nothing (v_post ≥ v_in): treat the candidate
        // as carrying essentially no information.
        (1e6, true)
    };
    let x_orth: Vec<T> = x_post
        .iter()
        .zip(r)
        .map(|(&p, &y)| (p.scale(1.0 / v_post) - y.scale(1.0 / v_in)).scale(v_phi))
        .collect();
    (x_orth, v_phi, clamped)
}

impl Denoiser<f64> for BgPrior {
    fn denoise(&self, r: &[f64], v_in: f64) -> Result<DenoiseResult<f64>, DenoiseError> {
        if v_in <= 0.0 || !v_in.is_finite() {
            return Err(DenoiseError::NonPositiveVariance(v_in));
        }
        let nu = 1.0 / self.mu;
        let mut x_post = Vec::with_capacity(r.len());
        let mut var_sum = 0.0;
        for &ri in r {
            let (mean, var) = bg_scalar_posterior(ri, v_in, self.mu, nu);
            x_post.push(mean);
            var_sum += var;
        }
        let v_post = (var_sum / r.len() as f64).max(1e-300);
        let (x_orth, v_phi, clamped) = orthogonalize(&x_post, v_post, r, v_in);
        Ok(DenoiseResult {
            x_post,
            v_post,
            x_orth,
            v_phi,
            clamped,
        })
    }
}

impl Denoiser<Complex64> for BgPrior {
    /// Real and imaginary parts are independent real BG channels scaled by
    /// 1/√2, each observed with noise variance v_in/2.
    fn denoise(
        &self,
        r: &[Complex64],
        v_in: f64,
    ) -> Result<DenoiseResult<Complex64>, DenoiseError> {
        if v_in <= 0.0 || !v_in.is_finite() {
            return Err(DenoiseError::NonPositiveVariance(v_in));
        }
        let nu = 1.0 / (2.0 * self.mu);
        let v_part = v_in / 2.0;
        let mut x_post = Vec::with_capacity(r.len());
        let mut var_sum = 0.0;
        for &ri in r {
            let (mre, vre) = bg_scalar_posterior(ri.re, v_part, self.mu, nu);
            let (mim, vim) = bg_scalar_posterior(ri.im, v_part, self.mu, nu);
            x_post.push(Complex64::new(mre, mim));
            var_sum += vre + vim;
        }
        let v_post = (var_sum / r.len() as f64).max(1e-300);
        let (x_orth, v_phi, clamped) = orthogonalize(&x_post, v_post, r, v_in);
        Ok(DenoiseResult {
            x_post,
            v_post,
            x_orth,
            v_phi,
            clamped,
        })
    }
}

/// IID draws from the unit-variance BG prior.
pub fn sample_bg<T: Field>(n: usize, prior: &BgPrior, seed: u64) -> Vec<T> {
    assert!(n >= 1, "sample length must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| T::sample_bg(&mut rng, prior.mu())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{inner_re, norm2};
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn gaussian_prior_closed_form() {
        // μ = 1 is a plain N(0,1) prior: x_post = r/(1+v), v_post = v/(1+v).
        let prior = BgPrior::new(1.0).unwrap();
        let v = 0.3;
        let r = vec![1.5, -0.7, 0.0, 2.2];
        let out = prior.denoise(&r, v).unwrap();
        for (o, &ri) in out.x_post.iter().zip(&r) {
            assert!((o - ri / 1.3).abs() < 1e-14);
        }
        assert!((out.v_post - v / 1.3).abs() < 1e-14);
        // Matched Gaussian prior: extrinsic variance is the prior variance
        // and the extrinsic mean carries no information.
        assert!((out.v_phi - 1.0).abs() < 1e-10);
        assert!(norm2(&out.x_orth).sqrt() < 1e-10);
        assert!(!out.clamped);
    }

    #[test]
    fn zero_input_has_zero_posterior_mean() {
        let prior = BgPrior::new(0.2).unwrap();
        let out = prior.denoise(&[0.0f64], 0.4).unwrap();
        assert_eq!(out.x_post[0], 0.0);
    }

    #[test]
    fn posterior_matches_quadrature_oracle() {
        // Frozen from an adaptive-quadrature evaluation of the two-component
        // posterior at 40-digit precision.
        let prior = BgPrior::new(0.1).unwrap();
        let out = prior.denoise(&[1.0f64], 0.05).unwrap();
        assert!((out.x_post[0] - 0.98900343773325815722).abs() < 1e-12);
        assert!((out.v_post - 0.055405394658617633298).abs() < 1e-12);

        let prior = BgPrior::new(0.25).unwrap();
        let out = prior.denoise(&[-0.3f64], 0.5).unwrap();
        assert!((out.x_post[0] + 0.028649045637713770489).abs() < 1e-12);
        assert!((out.v_post - 0.054567387083628149856).abs() < 1e-12);
    }

    #[test]
    fn complex_denoiser_is_two_real_channels() {
        let prior = BgPrior::new(0.3).unwrap();
        let v = 0.2;
        let r = vec![Complex64::new(0.8, -1.1), Complex64::new(-0.05, 0.4)];
        let out = prior.denoise(&r, v).unwrap();
        let nu = 1.0 / (2.0 * 0.3);
        for (o, &ri) in out.x_post.iter().zip(&r) {
            let (mre, _) = bg_scalar_posterior(ri.re, v / 2.0, 0.3, nu);
            let (mim, _) = bg_scalar_posterior(ri.im, v / 2.0, 0.3, nu);
            assert!((o.re - mre).abs() < 1e-14);
            assert!((o.im - mim).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_variance_and_mu() {
        let prior = BgPrior::new(0.5).unwrap();
        assert!(prior.denoise(&[1.0f64], 0.0).is_err());
        assert!(prior.denoise(&[1.0f64], -1.0).is_err());
        assert!(BgPrior::new(0.0).is_err());
        assert!(BgPrior::new(1.5).is_err());
    }

    #[test]
    fn clamp_flags_when_denoiser_gains_nothing() {
        // v_post ≥ v_in makes the extrinsic variance nonpositive.
        let x_post = vec![0.5f64, -0.2];
        let r = vec![0.6f64, -0.1];
        let (_, v_phi, clamped) = orthogonalize(&x_post, 0.4, &r, 0.3);
        assert!(clamped);
        assert_eq!(v_phi, 1e6);
        // And a tiny positive raw value clamps from below.
        let (_, v_phi, clamped) = orthogonalize(&x_post, 1e-15, &r, 0.3);
        assert!(clamped);
        assert_eq!(v_phi, 1e-12);
    }

    fn simulate(n: usize, mu: f64, v: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let prior = BgPrior::new(mu).unwrap();
        let x: Vec<f64> = sample_bg(n, &prior, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
        let r: Vec<f64> = x
            .iter()
            .map(|&xi| {
                let g: f64 = rng.sample(StandardNormal);
                xi + g * v.sqrt()
            })
            .collect();
        (x, r)
    }

    #[test]
    fn beats_every_affine_estimator() {
        let (n, mu, v) = (16384, 0.15, 0.25);
        let (x, r) = simulate(n, mu, v, 3);
        let prior = BgPrior::new(mu).unwrap();
        let out = prior.denoise(&r, v).unwrap();
        let mmse: f64 = x
            .iter()
            .zip(&out.x_post)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n as f64;
        for k in 0..=20 {
            let alpha = k as f64 * 0.05;
            let lin: f64 = x
                .iter()
                .zip(&r)
                .map(|(a, b)| (a - alpha * b) * (a - alpha * b))
                .sum::<f64>()
                / n as f64;
            assert!(
                mmse <= lin + 1e-12,
                "alpha={alpha}: mmse {mmse} > affine {lin}"
            );
        }
    }

    #[test]
    fn orthogonalized_error_decorrelates_from_input_error() {
        let (n, mu, v) = (16384, 0.1, 0.2);
        let (x, r) = simulate(n, mu, v, 11);
        let prior = BgPrior::new(mu).unwrap();
        let out = prior.denoise(&r, v).unwrap();
        let err_orth: Vec<f64> = out.x_orth.iter().zip(&x).map(|(a, b)| a - b).collect();
        let err_in: Vec<f64> = r.iter().zip(&x).map(|(a, b)| a - b).collect();
        let corr = inner_re(&err_orth, &err_in) / n as f64;
        let bound = 0.05 * (out.v_phi * v).sqrt();
        assert!(corr.abs() <= bound, "correlation {corr} vs bound {bound}");
    }

    #[test]
    fn reported_posterior_variance_tracks_reality() {
        let (n, mu, v) = (16384, 0.1, 0.3);
        let (x, r) = simulate(n, mu, v, 17);
        let prior = BgPrior::new(mu).unwrap();
        let out = prior.denoise(&r, v).unwrap();
        let emp: f64 = x
            .iter()
            .zip(&out.x_post)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n as f64;
        assert!(
            (emp - out.v_post).abs() <= 0.1 * out.v_post,
            "empirical {emp} vs reported {}",
            out.v_post
        );
    }

    #[test]
    fn bg_samples_have_unit_variance_and_right_sparsity() {
        let n = 65536;
        let prior = BgPrior::new(0.1).unwrap();
        let x: Vec<f64> = sample_bg(n, &prior, 5);
        let var = norm2(&x) / n as f64;
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
        let zeros = x.iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
        assert!((zeros - 0.9).abs() < 0.02, "zero fraction {zeros}");

        let dense = sample_bg::<f64>(4096, &BgPrior::new(1.0).unwrap(), 6);
        assert!(dense.iter().all(|&v| v != 0.0));

        let xc: Vec<Complex64> = sample_bg(n, &prior, 7);
        let var = norm2(&xc) / n as f64;
        assert!((var - 1.0).abs() < 0.05, "complex variance {var}");
        // Both parts must vanish for a complex zero.
        let zeros = xc
            .iter()
            .filter(|&&v| v == Complex64::new(0.0, 0.0))
            .count() as f64
            / n as f64;
        assert!((zeros - 0.81).abs() < 0.02, "complex zero fraction {zeros}");
    }
}
