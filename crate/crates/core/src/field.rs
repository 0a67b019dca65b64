//! Scalar field abstraction.
//!
//! Every algorithm in this crate is written once and runs over real (`f64`)
//! or complex (`Complex64`) systems. The trait collects the handful of scalar
//! operations the solvers need plus the field's native unitary transform.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::transform::{DctPlan, DftPlan, SpectralTransform, TransformKind};

pub trait Field:
    Copy
    + PartialEq
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const IS_COMPLEX: bool;
    /// The unitary transform used by the structured operator on this field.
    const NATIVE_TRANSFORM: TransformKind;
    type Transform: SpectralTransform<Self>;

    fn zero() -> Self;
    fn from_re(x: f64) -> Self;
    fn re(self) -> f64;
    fn conj(self) -> Self;
    /// Squared magnitude |z|².
    fn abs2(self) -> f64;
    /// Multiply by a real scalar.
    fn scale(self, s: f64) -> Self;
    /// Unit-variance Gaussian draw; complex draws CN(0,1), i.e. real and
    /// imaginary parts each N(0, 1/2).
    fn sample_standard<R: Rng + ?Sized>(rng: &mut R) -> Self;
    /// Unit-variance Bernoulli-Gaussian draw: zero with probability 1 − μ,
    /// otherwise N(0, 1/μ). Complex entries combine two independent real
    /// draws as (x_re + i·x_im)/√2.
    fn sample_bg<R: Rng + ?Sized>(rng: &mut R, mu: f64) -> Self;
    fn plan_transform(n: usize) -> Self::Transform;
}

impl Field for f64 {
    const IS_COMPLEX: bool = false;
    const NATIVE_TRANSFORM: TransformKind = TransformKind::Dct;
    type Transform = DctPlan;

    fn zero() -> Self {
        0.0
    }

    fn from_re(x: f64) -> Self {
        x
    }

    fn re(self) -> f64 {
        self
    }

    fn conj(self) -> Self {
        self
    }

    fn abs2(self) -> f64 {
        self * self
    }

    fn scale(self, s: f64) -> Self {
        self * s
    }

    fn sample_standard<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }

    fn sample_bg<R: Rng + ?Sized>(rng: &mut R, mu: f64) -> Self {
        if rng.random::<f64>() < mu {
            let g: f64 = rng.sample(StandardNormal);
            g / mu.sqrt()
        } else {
            0.0
        }
    }

    fn plan_transform(n: usize) -> DctPlan {
        DctPlan::new(n)
    }
}

impl Field for Complex64 {
    const IS_COMPLEX: bool = true;
    const NATIVE_TRANSFORM: TransformKind = TransformKind::Dft;
    type Transform = DftPlan;

    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }

    fn from_re(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }

    fn re(self) -> f64 {
        self.re
    }

    fn conj(self) -> Self {
        Complex64::new(self.re, -self.im)
    }

    fn abs2(self) -> f64 {
        self.re * self.re + self.im * self.im
    }

    fn scale(self, s: f64) -> Self {
        Complex64::new(self.re * s, self.im * s)
    }

    fn sample_standard<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(
            re * std::f64::consts::FRAC_1_SQRT_2,
            im * std::f64::consts::FRAC_1_SQRT_2,
        )
    }

    fn sample_bg<R: Rng + ?Sized>(rng: &mut R, mu: f64) -> Self {
        let re = f64::sample_bg(rng, mu);
        let im = f64::sample_bg(rng, mu);
        Complex64::new(
            re * std::f64::consts::FRAC_1_SQRT_2,
            im * std::f64::consts::FRAC_1_SQRT_2,
        )
    }

    fn plan_transform(n: usize) -> DftPlan {
        DftPlan::new(n)
    }
}

/// Inner product ⟨a, b⟩ = Σ conj(a_i)·b_i.
pub fn inner<T: Field>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x.conj() * y;
    }
    acc
}

/// Real part of the inner product.
pub fn inner_re<T: Field>(a: &[T], b: &[T]) -> f64 {
    inner(a, b).re()
}

/// Squared Euclidean norm Σ |a_i|².
pub fn norm2<T: Field>(a: &[T]) -> f64 {
    a.iter().map(|&x| x.abs2()).sum()
}

/// dst += s · src with a real scalar s.
pub fn axpy_re<T: Field>(dst: &mut [T], s: f64, src: &[T]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, &x) in dst.iter_mut().zip(src) {
        *d += x.scale(s);
    }
}

/// Mean squared error (1/N)·‖x̂ − x‖² in dB, floored at −320 dB.
pub fn mse_db<T: Field>(x_hat: &[T], x_true: &[T]) -> f64 {
    assert_eq!(x_hat.len(), x_true.len());
    let mse = x_hat
        .iter()
        .zip(x_true)
        .map(|(&a, &b)| (a - b).abs2())
        .sum::<f64>()
        / x_true.len() as f64;
    10.0 * mse.max(1e-32).log10()
}

/// Convex/affine combination Σ w_i · vecs_i of equally sized vectors.
pub fn combine<T: Field>(vecs: &[&[T]], weights: &[f64]) -> Vec<T> {
    assert_eq!(vecs.len(), weights.len());
    assert!(!vecs.is_empty());
    let mut out = vec![T::zero(); vecs[0].len()];
    for (&v, &w) in vecs.iter().zip(weights) {
        axpy_re(&mut out, w, v);
    }
    out
}
