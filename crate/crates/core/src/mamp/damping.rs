//! Variance-minimizing damping weights.
//!
//! Given the (real, symmetric) error covariance V of a window of candidates,
//! the weights minimizing the combined variance subject to Σζ = 1 are
//! ζ = V⁻¹1 / (1ᵀV⁻¹1), with combined variance 1/(1ᵀV⁻¹1) = ζᵀVζ. When V is
//! singular or badly conditioned the oldest candidate is dropped and the
//! solve retried; the terminal fallback keeps only the newest candidate.

/// Result of a damping solve over a (possibly reduced) trailing window.
#[derive(Clone, Debug)]
pub struct DampingSolution {
    /// Weights over the trailing `len` candidates, summing to one.
    pub zeta: Vec<f64>,
    /// Predicted variance ζᵀVζ of the combination.
    pub vbar: f64,
    /// Number of candidates actually used.
    pub len: usize,
    /// True when any back-off step was taken.
    pub backed_off: bool,
}

const COND_LIMIT: f64 = 1e12;

/// Gauss-Jordan inverse with partial pivoting for the small window blocks.
fn invert(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let (mut pivot_row, mut pivot_val) = (col, m[col * n + col].abs());
        for row in col + 1..n {
            let v = m[row * n + col].abs();
            if v > pivot_val {
                pivot_row = row;
                pivot_val = v;
            }
        }
        if pivot_val <= 0.0 || !pivot_val.is_finite() {
            return None;
        }
        if pivot_row != col {
            for k in 0..n {
                m.swap(col * n + k, pivot_row * n + k);
                inv.swap(col * n + k, pivot_row * n + k);
            }
        }
        let p = m[col * n + col];
        for k in 0..n {
            m[col * n + k] /= p;
            inv[col * n + k] /= p;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = m[row * n + col];
            if f != 0.0 {
                for k in 0..n {
                    m[row * n + k] -= f * m[col * n + k];
                    inv[row * n + k] -= f * inv[col * n + k];
                }
            }
        }
    }
    if inv.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(inv)
}

fn norm1(a: &[f64], n: usize) -> f64 {
    (0..n)
        .map(|col| (0..n).map(|row| a[row * n + col].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// One attempt at ζ = V⁻¹1/(1ᵀV⁻¹1). Fails on singular, non-finite, or
/// condition estimate above 1e12.
pub fn solve_mmse_weights(cov: &[f64], n: usize) -> Option<(Vec<f64>, f64)> {
    assert_eq!(cov.len(), n * n);
    if cov.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let inv = invert(cov, n)?;
    if norm1(cov, n) * norm1(&inv, n) > COND_LIMIT {
        return None;
    }
    // V⁻¹1: row sums of the inverse.
    let mut zeta: Vec<f64> = (0..n)
        .map(|r| inv[r * n..(r + 1) * n].iter().sum())
        .collect();
    let total: f64 = zeta.iter().sum();
    if !total.is_finite() || total == 0.0 {
        return None;
    }
    for z in &mut zeta {
        *z /= total;
    }
    // ζᵀVζ; equals 1/(1ᵀV⁻¹1) up to the renormalization just applied.
    let mut vbar = 0.0;
    for r in 0..n {
        let mut acc = 0.0;
        for c in 0..n {
            acc += cov[r * n + c] * zeta[c];
        }
        vbar += zeta[r] * acc;
    }
    if !vbar.is_finite() {
        return None;
    }
    Some((zeta, vbar))
}

/// Solve over the full window, backing off by dropping the oldest candidate
/// (index 0) until the solve succeeds; final fallback is ζ = [1] on the
/// newest candidate alone.
pub fn solve_with_backoff(cov: &[f64], n: usize) -> DampingSolution {
    for drop in 0..n {
        let dim = n - drop;
        if dim == 1 {
            break;
        }
        let mut sub = Vec::with_capacity(dim * dim);
        for r in drop..n {
            for c in drop..n {
                sub.push(cov[r * n + c]);
            }
        }
        if let Some((zeta, vbar)) = solve_mmse_weights(&sub, dim) {
            return DampingSolution {
                zeta,
                vbar,
                len: dim,
                backed_off: drop > 0,
            };
        }
    }
    DampingSolution {
        zeta: vec![1.0],
        vbar: cov[n * n - 1],
        len: 1,
        backed_off: n > 1,
    }
}

/// View of the solved block for observers: trailing `len`×`len` part of the
/// original window matrix.
pub(crate) fn trailing_block(cov: &[f64], n: usize, len: usize) -> Vec<f64> {
    let drop = n - len;
    let mut out = Vec::with_capacity(len * len);
    for r in drop..n {
        for c in drop..n {
            out.push(cov[r * n + c]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn diagonal_two_by_two() {
        // V = diag(2, 1): ζ = [1/3, 2/3] and v̄ = 2/3.
        let sol = solve_with_backoff(&[2.0, 0.0, 0.0, 1.0], 2);
        assert!((sol.zeta[0] - 1.0 / 3.0).abs() < 1e-14);
        assert!((sol.zeta[1] - 2.0 / 3.0).abs() < 1e-14);
        assert!((sol.vbar - 2.0 / 3.0).abs() < 1e-14);
        assert!(!sol.backed_off);
    }

    #[test]
    fn weights_sum_to_one_exactly_after_renormalization() {
        let cov = [1.0, 0.3, 0.1, 0.3, 0.8, 0.2, 0.1, 0.2, 0.5];
        let (zeta, _) = solve_mmse_weights(&cov, 3).unwrap();
        let s: f64 = zeta.iter().sum();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn singular_window_backs_off() {
        // Perfectly correlated candidates: the 2×2 block is rank one.
        let cov = [1.0, 1.0, 1.0, 1.0];
        let sol = solve_with_backoff(&cov, 2);
        assert_eq!(sol.zeta, vec![1.0]);
        assert_eq!(sol.len, 1);
        assert!(sol.backed_off);
        assert_eq!(sol.vbar, 1.0);
    }

    #[test]
    fn backoff_drops_oldest_first() {
        // Top-left entry poisons the full 3-window; the trailing 2×2 is fine.
        let cov = [f64::NAN, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0];
        let sol = solve_with_backoff(&cov, 3);
        assert_eq!(sol.len, 2);
        assert!(sol.backed_off);
        assert!((sol.vbar - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn optimal_among_unit_vectors_and_random_affine() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            // Random SPD window: V = GᵀG + εI.
            let n = 3;
            let g: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>() - 0.5).collect();
            let mut cov = vec![0.0; n * n];
            for r in 0..n {
                for c in 0..n {
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += g[k * n + r] * g[k * n + c];
                    }
                    cov[r * n + c] = acc + if r == c { 0.05 } else { 0.0 };
                }
            }
            let quad = |z: &[f64]| -> f64 {
                let mut q = 0.0;
                for r in 0..n {
                    let mut acc = 0.0;
                    for c in 0..n {
                        acc += cov[r * n + c] * z[c];
                    }
                    q += z[r] * acc;
                }
                q
            };
            let sol = solve_with_backoff(&cov, n);
            assert_eq!(sol.len, n);
            for i in 0..n {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                assert!(sol.vbar <= quad(&e) + 1e-10);
            }
            for _ in 0..100 {
                let mut z: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
                let s: f64 = z.iter().sum();
                for v in &mut z {
                    *v /= s;
                }
                assert!(sol.vbar <= quad(&z) + 1e-10);
            }
        }
    }
}
