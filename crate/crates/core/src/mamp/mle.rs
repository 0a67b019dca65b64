//! Shared memory-linear-estimator core.
//!
//! Both recursions advance the same state:
//!
//!   u_t = θ_t·λ†·u_{t−1} + ξ_t·y − A(θ_t·r̂_{t−1} + ξ_t·x_t)
//!   r̂_t = Aᴴ·u_t
//!   out_t = (r̂_t + Σ_{i≤t} p_{t,i}·x_i) / ε_t,   p_{t,i} = ϑ_{t,i}·w_{t−i}
//!
//! costing exactly two matvecs per call. The history weights
//! ϑ_{t,i} = ξ_i·Π_{τ=i+1..t} θ_τ are reconstructed in O(1) from prefix sums
//! of ln θ, kept in sign/log form so the reconstruction of p_{t,i} routes
//! through the moment backend without ever materializing w_{t−i}.

use crate::field::{axpy_re, norm2, Field};
use crate::operator::LinearOperator;
use crate::spectral::{MomentTable, ScaledScalar};

use super::FailureReason;

pub(crate) struct MleCore<'a, T: Field> {
    op: &'a LinearOperator<T>,
    y: &'a [T],
    table: &'a MomentTable,
    u: Vec<T>,
    r_hat: Vec<T>,
    /// ξ_1..ξ_t (index 0 unused).
    xi: Vec<f64>,
    /// Prefix sums S_t = Σ_{τ≤t} ln θ_τ with S_0 = 0.
    log_theta_sum: Vec<f64>,
    /// ε_1..ε_t (index 0 unused).
    eps: Vec<f64>,
}

impl<'a, T: Field> MleCore<'a, T> {
    pub fn new(op: &'a LinearOperator<T>, y: &'a [T], table: &'a MomentTable) -> Self {
        Self {
            op,
            y,
            table,
            u: vec![T::zero(); op.rows()],
            r_hat: vec![T::zero(); op.cols()],
            xi: vec![f64::NAN],
            log_theta_sum: vec![0.0],
            eps: vec![f64::NAN],
        }
    }

    pub fn table(&self) -> &MomentTable {
        self.table
    }

    /// ϑ_{t,i} = ξ_i · Π_{τ=i+1..t} θ_τ in sign/log form.
    pub fn theta_product(&self, t: usize, i: usize) -> ScaledScalar {
        let xi = self.xi[i];
        let sign = if xi > 0.0 {
            1
        } else if xi < 0.0 {
            -1
        } else {
            0
        };
        ScaledScalar::from_sign_log(
            sign,
            xi.abs().ln() + self.log_theta_sum[t] - self.log_theta_sum[i],
        )
    }

    pub fn eps(&self, t: usize) -> f64 {
        self.eps[t]
    }

    /// Runs iteration t of the linear stage. `estimates[i-1]` holds x_i;
    /// `estimates.len() == t`. Two matvecs.
    pub fn advance(
        &mut self,
        t: usize,
        theta_t: f64,
        xi_t: f64,
        estimates: &[Vec<T>],
    ) -> Result<Vec<T>, FailureReason> {
        debug_assert_eq!(estimates.len(), t);
        self.log_theta_sum
            .push(self.log_theta_sum[t - 1] + theta_t.ln());
        self.xi.push(xi_t);

        // Orthogonalization coefficients p_{t,i} and their sum ε_t.
        let mut coeffs = Vec::with_capacity(t);
        let mut eps_t = 0.0;
        for i in 1..=t {
            let p = self.table.scaled_w(self.theta_product(t, i), t - i)?;
            coeffs.push(p);
            eps_t += p;
        }
        if !eps_t.is_finite() || eps_t == 0.0 {
            return Err(FailureReason::NonFinite {
                what: format!("normalizer at t={t}"),
            });
        }
        self.eps.push(eps_t);

        // u_t = θ_t·λ†·u_{t−1} + ξ_t·y − A(θ_t·r̂_{t−1} + ξ_t·x_t).
        let x_t = &estimates[t - 1];
        let operand: Vec<T> = self
            .r_hat
            .iter()
            .zip(x_t)
            .map(|(&rh, &xt)| rh.scale(theta_t) + xt.scale(xi_t))
            .collect();
        let a_operand = self.op.apply(&operand).expect("operand length");
        let scale_u = theta_t * self.table.lambda_dag();
        for ((u, &yv), &av) in self.u.iter_mut().zip(self.y).zip(&a_operand) {
            *u = u.scale(scale_u) + yv.scale(xi_t) - av;
        }
        self.r_hat = self.op.apply_adjoint(&self.u).expect("u length");

        let mut out = self.r_hat.clone();
        for (i, &p) in (1..=t).zip(&coeffs) {
            if p != 0.0 {
                axpy_re(&mut out, p, &estimates[i - 1]);
            }
        }
        let inv_eps = 1.0 / eps_t;
        for v in &mut out {
            *v = v.scale(inv_eps);
        }
        if !norm2(&out).is_finite() {
            return Err(FailureReason::NonFinite {
                what: format!("linear output at t={t}"),
            });
        }
        Ok(out)
    }
}
