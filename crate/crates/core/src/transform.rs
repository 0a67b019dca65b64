//! Unitary fast transforms backing the structured operator.
//!
//! Real systems use the orthonormal DCT-II (adjoint = DCT-III with matching
//! scaling); complex systems use the unitary DFT. Both satisfy Fᴴ F = I to
//! machine precision, so the structured operator's trace normalization is
//! controlled by the singular values alone.

use num_complex::Complex64;
use rustdct::DctPlanner;
use rustfft::FftPlanner;
use std::sync::Arc;

/// Transform family requested by a configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransformKind {
    Dct,
    Dft,
}

impl std::fmt::Display for TransformKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransformKind::Dct => write!(f, "dct"),
            TransformKind::Dft => write!(f, "dft"),
        }
    }
}

/// In-place unitary transform with its adjoint.
pub trait SpectralTransform<T>: Send + Sync {
    fn forward(&self, buf: &mut [T]);
    fn adjoint(&self, buf: &mut [T]);
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Orthonormal DCT-II plan for real vectors.
pub struct DctPlan {
    plan: Arc<dyn rustdct::TransformType2And3<f64>>,
    n: usize,
}

impl DctPlan {
    pub fn new(n: usize) -> Self {
        let plan = DctPlanner::new().plan_dct2(n);
        Self { plan, n }
    }
}

impl SpectralTransform<f64> for DctPlan {
    fn forward(&self, buf: &mut [f64]) {
        debug_assert_eq!(buf.len(), self.n);
        self.plan.process_dct2(buf);
        let s1 = (1.0 / self.n as f64).sqrt();
        let sk = (2.0 / self.n as f64).sqrt();
        buf[0] *= s1;
        for x in &mut buf[1..] {
            *x *= sk;
        }
    }

    fn adjoint(&self, buf: &mut [f64]) {
        debug_assert_eq!(buf.len(), self.n);
        // DCT-III halves the k = 0 term, so pre-scale it by 2·s₀.
        let s1 = (1.0 / self.n as f64).sqrt();
        let sk = (2.0 / self.n as f64).sqrt();
        buf[0] *= 2.0 * s1;
        for x in &mut buf[1..] {
            *x *= sk;
        }
        self.plan.process_dct3(buf);
    }

    fn len(&self) -> usize {
        self.n
    }
}

/// Unitary DFT plan for complex vectors.
pub struct DftPlan {
    forward: Arc<dyn rustfft::Fft<f64>>,
    inverse: Arc<dyn rustfft::Fft<f64>>,
    n: usize,
}

impl DftPlan {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            n,
        }
    }
}

impl SpectralTransform<Complex64> for DftPlan {
    fn forward(&self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.n);
        self.forward.process(buf);
        let s = 1.0 / (self.n as f64).sqrt();
        for x in buf {
            *x *= s;
        }
    }

    fn adjoint(&self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.n);
        self.inverse.process(buf);
        let s = 1.0 / (self.n as f64).sqrt();
        for x in buf {
            *x *= s;
        }
    }

    fn len(&self) -> usize {
        self.n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Explicit orthonormal DCT-II matrix entry F[k][j].
    fn dct_entry(n: usize, k: usize, j: usize) -> f64 {
        let s = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        s * (std::f64::consts::PI * (2 * j + 1) as f64 * k as f64 / (2 * n) as f64).cos()
    }

    #[test]
    fn dct_matches_explicit_matrix() {
        let n = 12;
        let plan = DctPlan::new(n);
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin() + 0.2).collect();

        let mut fast = x.clone();
        plan.forward(&mut fast);
        for k in 0..n {
            let direct: f64 = (0..n).map(|j| dct_entry(n, k, j) * x[j]).sum();
            assert!(
                (fast[k] - direct).abs() < 1e-12,
                "k={k}: {} vs {direct}",
                fast[k]
            );
        }

        let mut back = fast.clone();
        plan.adjoint(&mut back);
        for j in 0..n {
            assert!((back[j] - x[j]).abs() < 1e-12, "round trip at {j}");
        }
    }

    #[test]
    fn dft_is_unitary() {
        let n = 16;
        let plan = DftPlan::new(n);
        let x: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new((i as f64).cos(), (i as f64 * 0.11).sin()))
            .collect();
        let mut y = x.clone();
        plan.forward(&mut y);
        let ex: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        let ey: f64 = y.iter().map(|v| v.norm_sqr()).sum();
        assert!(
            (ex - ey).abs() < 1e-10,
            "energy not preserved: {ex} vs {ey}"
        );
        plan.adjoint(&mut y);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
