//! Linear operators for y = Ax + n.
//!
//! Two backends sit behind one immutable, thread-safe handle: a structured
//! A = Σ Π F (diagonal singular profile, seeded random permutation, unitary
//! fast transform) with O(n log n) application, and an explicit dense matrix
//! used as a brute-force oracle. Every application of A or Aᴴ counts as one
//! matrix-vector product on a shared atomic counter; `apply_b` therefore
//! costs two.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ConfigError, DimensionError};
use crate::field::Field;
use crate::transform::{SpectralTransform, TransformKind};

/// Geometry of a structured operator: singular values σ_i decay geometrically
/// with ratio κ^{1/J} (J = min(m, n)) and are normalized so (1/n)·Σ σ_i² = 1,
/// which makes the condition number κ^{1 − 1/J}.
#[derive(Clone, Debug)]
pub struct StructuredSpec {
    pub m: usize,
    pub n: usize,
    pub kappa: f64,
    pub transform: TransformKind,
    pub permutation_seed: u64,
    singulars: Vec<f64>,
}

impl StructuredSpec {
    pub fn new(
        m: usize,
        n: usize,
        kappa: f64,
        transform: TransformKind,
        permutation_seed: u64,
    ) -> Result<Self, ConfigError> {
        if m == 0 || n == 0 {
            return Err(ConfigError::new(format!(
                "dimensions must be positive, got {m}x{n}"
            )));
        }
        if kappa < 1.0 || !kappa.is_finite() {
            return Err(ConfigError::new(format!(
                "kappa must be finite and >= 1, got {kappa}"
            )));
        }
        let j = m.min(n);
        // σ_i = σ_1 · κ^{-(i-1)/J}, then rescale exactly so Σ σ_i² = n.
        let mut singulars: Vec<f64> = (0..j)
            .map(|i| (-(i as f64) / j as f64 * kappa.ln()).exp())
            .collect();
        let sum: f64 = singulars.iter().map(|s| s * s).sum();
        let scale = (n as f64 / sum).sqrt();
        for s in &mut singulars {
            *s *= scale;
        }
        Ok(Self {
            m,
            n,
            kappa,
            transform,
            permutation_seed,
            singulars,
        })
    }

    pub fn singulars(&self) -> &[f64] {
        &self.singulars
    }

    /// Eigenvalues of AAᴴ: σ_i² padded with zeros up to m when m > J.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut eigs: Vec<f64> = self.singulars.iter().map(|s| s * s).collect();
        eigs.resize(self.m, 0.0);
        eigs
    }

    /// σ_1 / σ_J, equal to κ^{1 − 1/J} by construction.
    pub fn condition_number(&self) -> f64 {
        self.singulars[0] / self.singulars[self.singulars.len() - 1]
    }

    fn permutation(&self) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..self.n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.permutation_seed);
        perm.shuffle(&mut rng);
        perm
    }
}

struct StructuredBackend<T: Field> {
    singulars: Vec<f64>,
    /// (Πw)_i = w[perm[i]]; the adjoint scatters through the same indices.
    perm: Vec<usize>,
    plan: T::Transform,
}

struct DenseBackend<T> {
    /// Row-major m×n entries.
    entries: Vec<T>,
}

enum Backend<T: Field> {
    Structured(StructuredBackend<T>),
    Dense(DenseBackend<T>),
}

/// Immutable linear operator with shared matvec accounting.
pub struct LinearOperator<T: Field> {
    m: usize,
    n: usize,
    backend: Backend<T>,
    spec: Option<StructuredSpec>,
    counter: Arc<AtomicU64>,
}

impl<T: Field> LinearOperator<T> {
    /// Builds A = Σ Π F. The spec's transform must be the field's native one
    /// (DCT for real, DFT for complex).
    pub fn build_structured(spec: &StructuredSpec) -> Result<Self, ConfigError> {
        if spec.transform != T::NATIVE_TRANSFORM {
            return Err(ConfigError::new(format!(
                "transform {} requires the {} field",
                spec.transform,
                match spec.transform {
                    TransformKind::Dct => "real",
                    TransformKind::Dft => "complex",
                }
            )));
        }
        let perm = spec.permutation();
        Ok(Self {
            m: spec.m,
            n: spec.n,
            backend: Backend::Structured(StructuredBackend {
                singulars: spec.singulars.clone(),
                perm,
                plan: T::plan_transform(spec.n),
            }),
            spec: Some(spec.clone()),
            counter: Arc::new(AtomicU64::new(0)),
        })
    }

    /// Dense operator from row-major rows; the brute-force oracle backend.
    pub fn build_dense(rows: &[Vec<T>]) -> Result<Self, ConfigError> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(ConfigError::new("dense matrix must be non-empty"));
        }
        let n = rows[0].len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(ConfigError::new("dense matrix rows have unequal lengths"));
        }
        let m = rows.len();
        let mut entries = Vec::with_capacity(m * n);
        for r in rows {
            entries.extend_from_slice(r);
        }
        Ok(Self {
            m,
            n,
            backend: Backend::Dense(DenseBackend { entries }),
            spec: None,
            counter: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    /// M/N aspect ratio δ.
    pub fn delta(&self) -> f64 {
        self.m as f64 / self.n as f64
    }

    pub fn structured_spec(&self) -> Option<&StructuredSpec> {
        self.spec.as_ref()
    }

    /// Total applications of A and Aᴴ so far.
    pub fn matvec_count(&self) -> u64 {
        self.counter.load(Ordering::Relaxed)
    }

    /// y = A v. One matvec.
    pub fn apply(&self, v: &[T]) -> Result<Vec<T>, DimensionError> {
        if v.len() != self.n {
            return Err(DimensionError {
                expected: self.n,
                got: v.len(),
            });
        }
        self.counter.fetch_add(1, Ordering::Relaxed);
        Ok(match &self.backend {
            Backend::Structured(s) => {
                let mut buf = v.to_vec();
                s.plan.forward(&mut buf);
                let j = self.m.min(self.n);
                let mut out = vec![T::zero(); self.m];
                for i in 0..j {
                    out[i] = buf[s.perm[i]].scale(s.singulars[i]);
                }
                out
            }
            Backend::Dense(d) => {
                let mut out = vec![T::zero(); self.m];
                for (i, o) in out.iter_mut().enumerate() {
                    let row = &d.entries[i * self.n..(i + 1) * self.n];
                    let mut acc = T::zero();
                    for (&a, &x) in row.iter().zip(v) {
                        acc += a * x;
                    }
                    *o = acc;
                }
                out
            }
        })
    }

    /// x = Aᴴ u. One matvec.
    pub fn apply_adjoint(&self, u: &[T]) -> Result<Vec<T>, DimensionError> {
        if u.len() != self.m {
            return Err(DimensionError {
                expected: self.m,
                got: u.len(),
            });
        }
        self.counter.fetch_add(1, Ordering::Relaxed);
        Ok(match &self.backend {
            Backend::Structured(s) => {
                let j = self.m.min(self.n);
                // Scatter Πᵀ Σᵀ u, then apply Fᴴ.
                let mut buf = vec![T::zero(); self.n];
                for i in 0..j {
                    buf[s.perm[i]] = u[i].scale(s.singulars[i]);
                }
                s.plan.adjoint(&mut buf);
                buf
            }
            Backend::Dense(d) => {
                let mut out = vec![T::zero(); self.n];
                for i in 0..self.m {
                    let row = &d.entries[i * self.n..(i + 1) * self.n];
                    for (o, &a) in out.iter_mut().zip(row) {
                        *o += a.conj() * u[i];
                    }
                }
                out
            }
        })
    }

    /// B v = λ† v − A Aᴴ v on the measurement side. Two matvecs.
    pub fn apply_b(&self, lambda_dag: f64, v: &[T]) -> Result<Vec<T>, DimensionError> {
        if v.len() != self.m {
            return Err(DimensionError {
                expected: self.m,
                got: v.len(),
            });
        }
        let back = self.apply(&self.apply_adjoint(v)?)?;
        Ok(v.iter()
            .zip(&back)
            .map(|(&a, &b)| a.scale(lambda_dag) - b)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{inner, norm2};
    use num_complex::Complex64;
    use rand::Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_vec<T: Field>(len: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
        (0..len).map(|_| T::sample_standard(rng)).collect()
    }

    /// Explicit Σ Π F product, built entry by entry from transform formulas.
    fn materialize_real(spec: &StructuredSpec) -> Vec<Vec<f64>> {
        let (m, n) = (spec.m, spec.n);
        let perm = spec.permutation();
        let j = m.min(n);
        let mut rows = vec![vec![0.0; n]; m];
        for (i, row) in rows.iter_mut().enumerate().take(j) {
            // Row i of ΣΠF is σ_i times row perm[i] of the DCT matrix.
            let k = perm[i];
            let s = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            for (col, e) in row.iter_mut().enumerate() {
                *e = spec.singulars()[i]
                    * s
                    * (std::f64::consts::PI * (2 * col + 1) as f64 * k as f64 / (2 * n) as f64)
                        .cos();
            }
        }
        rows
    }

    fn materialize_complex(spec: &StructuredSpec) -> Vec<Vec<Complex64>> {
        let (m, n) = (spec.m, spec.n);
        let perm = spec.permutation();
        let j = m.min(n);
        let mut rows = vec![vec![Complex64::new(0.0, 0.0); n]; m];
        for (i, row) in rows.iter_mut().enumerate().take(j) {
            let k = perm[i];
            for (col, e) in row.iter_mut().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * (k * col) as f64 / n as f64;
                *e = Complex64::from_polar(spec.singulars()[i] / (n as f64).sqrt(), ang);
            }
        }
        rows
    }

    #[test]
    fn geometric_singulars_2x4() {
        // κ=4, J=2: σ1/σ2 = 2 and (σ1²+σ2²)/4 = 1 give σ1²=16/5, σ2²=4/5.
        let spec = StructuredSpec::new(2, 4, 4.0, TransformKind::Dct, 0).unwrap();
        let s = spec.singulars();
        assert!((s[0] * s[0] - 3.2).abs() < 1e-12);
        assert!((s[1] * s[1] - 0.8).abs() < 1e-12);
        assert!((spec.condition_number() - 2.0).abs() < 1e-12);
        assert_eq!(spec.eigenvalues(), vec![s[0] * s[0], s[1] * s[1]]);
    }

    #[test]
    fn flat_spectrum_kappa_one() {
        let spec = StructuredSpec::new(3, 7, 1.0, TransformKind::Dct, 1).unwrap();
        for s in spec.singulars() {
            assert!((s * s - 7.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization_and_ratio_invariants() {
        for &(m, n, kappa) in &[(16usize, 32usize, 10.0), (48, 32, 1000.0), (5, 5, 3.0)] {
            let spec = StructuredSpec::new(m, n, kappa, TransformKind::Dct, 9).unwrap();
            let s = spec.singulars();
            let j = m.min(n);
            let sum: f64 = s.iter().map(|x| x * x).sum();
            assert!((sum / n as f64 - 1.0).abs() < 1e-12, "power normalization");
            let ratio = kappa.powf(1.0 / j as f64);
            for w in s.windows(2) {
                assert!(
                    (w[0] / w[1] - ratio).abs() < 1e-9 * ratio,
                    "geometric ratio"
                );
            }
            let cond = kappa.powf(1.0 - 1.0 / j as f64);
            assert!((spec.condition_number() - cond).abs() < 1e-9 * cond);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(StructuredSpec::new(0, 4, 2.0, TransformKind::Dct, 0).is_err());
        assert!(StructuredSpec::new(4, 4, 0.5, TransformKind::Dct, 0).is_err());
        let spec = StructuredSpec::new(2, 4, 4.0, TransformKind::Dft, 0).unwrap();
        assert!(LinearOperator::<f64>::build_structured(&spec).is_err());
        let spec = StructuredSpec::new(2, 4, 4.0, TransformKind::Dct, 0).unwrap();
        assert!(LinearOperator::<Complex64>::build_structured(&spec).is_err());
    }

    #[test]
    fn dense_scalar_product() {
        let op = LinearOperator::build_dense(&[vec![2.0]]).unwrap();
        assert_eq!(op.apply(&[3.0]).unwrap(), vec![6.0]);
    }

    #[test]
    fn dense_rejects_ragged() {
        assert!(LinearOperator::build_dense(&[vec![1.0, 2.0], vec![3.0]]).is_err());
        assert!(LinearOperator::<f64>::build_dense(&[]).is_err());
    }

    #[test]
    fn dense_adjoint_is_transpose_for_real() {
        let rows = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]];
        let op = LinearOperator::build_dense(&rows).unwrap();
        let u = vec![1.0, -1.0];
        let out = op.apply_adjoint(&u).unwrap();
        assert_eq!(out, vec![-3.0, -3.0, -3.0]);
    }

    #[test]
    fn structured_matches_explicit_product() {
        let mut r = rng(7);
        for seed in 0..3u64 {
            let spec = StructuredSpec::new(24, 40, 50.0, TransformKind::Dct, seed).unwrap();
            let fast = LinearOperator::<f64>::build_structured(&spec).unwrap();
            let dense = LinearOperator::build_dense(&materialize_real(&spec)).unwrap();
            let v: Vec<f64> = random_vec(40, &mut r);
            let (a, b) = (fast.apply(&v).unwrap(), dense.apply(&v).unwrap());
            let scale = norm2(&b).sqrt();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-10 * scale);
            }
            let u: Vec<f64> = random_vec(24, &mut r);
            let (a, b) = (
                fast.apply_adjoint(&u).unwrap(),
                dense.apply_adjoint(&u).unwrap(),
            );
            let scale = norm2(&b).sqrt();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn structured_matches_explicit_product_complex() {
        let mut r = rng(8);
        let spec = StructuredSpec::new(24, 40, 50.0, TransformKind::Dft, 5).unwrap();
        let fast = LinearOperator::<Complex64>::build_structured(&spec).unwrap();
        let dense = LinearOperator::build_dense(&materialize_complex(&spec)).unwrap();
        let v: Vec<Complex64> = random_vec(40, &mut r);
        let (a, b) = (fast.apply(&v).unwrap(), dense.apply(&v).unwrap());
        let scale = norm2(&b).sqrt();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() <= 1e-10 * scale);
        }
        let u: Vec<Complex64> = random_vec(24, &mut r);
        let (a, b) = (
            fast.apply_adjoint(&u).unwrap(),
            dense.apply_adjoint(&u).unwrap(),
        );
        let scale = norm2(&b).sqrt();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() <= 1e-10 * scale);
        }
    }

    fn check_adjoint_pairs<T: Field>(op: &LinearOperator<T>, trials: usize, seed: u64) {
        let mut r = rng(seed);
        for _ in 0..trials {
            let v: Vec<T> = random_vec(op.cols(), &mut r);
            let u: Vec<T> = random_vec(op.rows(), &mut r);
            let av = op.apply(&v).unwrap();
            let ahu = op.apply_adjoint(&u).unwrap();
            let lhs = inner(&u, &av);
            let rhs = inner(&ahu, &v);
            let bound = 1e-10 * norm2(&u).sqrt() * norm2(&v).sqrt();
            assert!((lhs - rhs).abs2().sqrt() <= bound, "adjoint mismatch");
        }
    }

    #[test]
    fn adjoint_consistency_all_backends() {
        let spec = StructuredSpec::new(48, 80, 100.0, TransformKind::Dct, 3).unwrap();
        check_adjoint_pairs(
            &LinearOperator::<f64>::build_structured(&spec).unwrap(),
            100,
            11,
        );

        let spec = StructuredSpec::new(48, 80, 100.0, TransformKind::Dft, 3).unwrap();
        check_adjoint_pairs(
            &LinearOperator::<Complex64>::build_structured(&spec).unwrap(),
            100,
            12,
        );

        let mut r = rng(13);
        let rows: Vec<Vec<f64>> = (0..9).map(|_| random_vec(14, &mut r)).collect();
        check_adjoint_pairs(&LinearOperator::build_dense(&rows).unwrap(), 100, 14);
        let rows: Vec<Vec<Complex64>> = (0..9).map(|_| random_vec(14, &mut r)).collect();
        check_adjoint_pairs(&LinearOperator::build_dense(&rows).unwrap(), 100, 15);
    }

    #[test]
    fn square_flat_operator_has_identity_gram() {
        // With m = n and κ = 1, AAᴴ = ΣΠFFᴴΠᵀΣ = I for any permutation.
        let spec = StructuredSpec::new(16, 16, 1.0, TransformKind::Dct, 4).unwrap();
        let op = LinearOperator::<f64>::build_structured(&spec).unwrap();
        let mut r = rng(21);
        let v: Vec<f64> = random_vec(16, &mut r);
        let out = op.apply_b(1.0, &v).unwrap();
        assert!(norm2(&out).sqrt() <= 1e-12 * norm2(&v).sqrt());
    }

    #[test]
    fn apply_b_small_example() {
        // 2×4 spec with λ† = 2: B has eigenvalues λ† − σ_i² = {−1.2, +1.2},
        // so tr B = 0 and det B = −1.44.
        let spec = StructuredSpec::new(2, 4, 4.0, TransformKind::Dct, 0).unwrap();
        let op = LinearOperator::<f64>::build_structured(&spec).unwrap();
        let c0 = op.apply_b(2.0, &[1.0, 0.0]).unwrap();
        let c1 = op.apply_b(2.0, &[0.0, 1.0]).unwrap();
        let trace = c0[0] + c1[1];
        let det = c0[0] * c1[1] - c0[1] * c1[0];
        assert!(trace.abs() < 1e-12, "trace {trace}");
        assert!((det + 1.44).abs() < 1e-12, "det {det}");

        let zero = op.apply_b(2.0, &[0.0, 0.0]).unwrap();
        assert_eq!(zero, vec![0.0, 0.0]);
        assert!(op.apply_b(2.0, &[0.0; 3]).is_err());
    }

    #[test]
    fn matvec_accounting() {
        let spec = StructuredSpec::new(8, 16, 2.0, TransformKind::Dct, 0).unwrap();
        let op = LinearOperator::<f64>::build_structured(&spec).unwrap();
        assert_eq!(op.matvec_count(), 0);
        op.apply(&vec![0.0; 16]).unwrap();
        assert_eq!(op.matvec_count(), 1);
        op.apply_adjoint(&vec![0.0; 8]).unwrap();
        assert_eq!(op.matvec_count(), 2);
        op.apply_b(1.0, &vec![0.0; 8]).unwrap();
        assert_eq!(op.matvec_count(), 4);
    }

    #[test]
    fn determinism_same_spec_same_bits() {
        let mut r = rng(31);
        let v: Vec<f64> = random_vec(32, &mut r);
        let spec = StructuredSpec::new(16, 32, 100.0, TransformKind::Dct, 77).unwrap();
        let a = LinearOperator::<f64>::build_structured(&spec)
            .unwrap()
            .apply(&v)
            .unwrap();
        let b = LinearOperator::<f64>::build_structured(&spec)
            .unwrap()
            .apply(&v)
            .unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn operators_are_shareable_across_threads() {
        let spec = StructuredSpec::new(8, 16, 2.0, TransformKind::Dct, 0).unwrap();
        let op = Arc::new(LinearOperator::<f64>::build_structured(&spec).unwrap());
        let mut handles = Vec::new();
        for _ in 0..4 {
            let op = Arc::clone(&op);
            handles.push(std::thread::spawn(move || {
                for _ in 0..25 {
                    op.apply(&vec![1.0; 16]).unwrap();
                }
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(op.matvec_count(), 100);
    }

    #[test]
    fn counting_survives_random_interleaving() {
        let spec = StructuredSpec::new(4, 8, 3.0, TransformKind::Dct, 0).unwrap();
        let op = LinearOperator::<f64>::build_structured(&spec).unwrap();
        let mut r = rng(5);
        let mut expected = 0u64;
        for _ in 0..50 {
            if r.random::<bool>() {
                op.apply(&vec![0.0; 8]).unwrap();
            } else {
                op.apply_adjoint(&vec![0.0; 4]).unwrap();
            }
            expected += 1;
        }
        assert_eq!(op.matvec_count(), expected);
    }
}
