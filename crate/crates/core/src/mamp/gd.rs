//! The GD recursion with NLE-side damping.
//!
//! Iteration t ≥ 2 spends its three matvecs on: the fresh residual
//! z̄_t = y − A·φ_{t−1}(r_{t−1}) that prices the newest candidate, the
//! combined A(θ_t·r̂_{t−1} + ξ_t·x_t) inside the u-update, and r̂_t = Aᴴu_t.
//! The candidate covariance matrix V^φ mixes the analytic structure of
//! damped iterates (cov(x_i, x_j) = v̄_{max(i,j)}) with residual-measured
//! cross terms (z̄_tᴴz_k − δσ²)/w₀ for the new candidate, and the damping
//! weights minimize the predicted combined variance over a trailing window.

use std::collections::VecDeque;
use std::time::Instant;

use crate::field::{combine, inner_re, mse_db, norm2, Field};
use crate::spectral::MomentTable;

use super::damping::{solve_with_backoff, trailing_block};
use super::mle::MleCore;
use super::{
    theta_step, DampingInfo, DampingKind, FailureReason, IterationRow, MampConfig, MampInput,
    RowFlags, RunObserver, RunStatus, Trajectory, VAR_FLOOR,
};

/// Predicted error covariance of the linear outputs: one windowed row
/// v^γ_{t,t'} for t' in [lo, t], each entry the double history sum of
/// σ²·w_{t+t'−i−j} + v̄_{max(i,j)}·w̄_{t−i,t'−j} weighted by the scaled
/// history products and normalizers.
fn v_gamma_row<T: Field>(
    core: &MleCore<'_, T>,
    t: usize,
    lo: usize,
    v_phibar: &[f64],
    sigma2: f64,
) -> Result<Vec<f64>, FailureReason> {
    let table = core.table();
    let mut row = Vec::with_capacity(t - lo + 1);
    for tp in lo..=t {
        let scale = 1.0 / (core.eps(t) * core.eps(tp));
        let mut acc = 0.0;
        for i in 1..=t {
            let left = core.theta_product(t, i);
            for j in 1..=tp {
                let alpha = (left * core.theta_product(tp, j)).mul_value(scale);
                let (w, wbar) = table.scaled_pair(alpha, t - i, tp - j)?;
                acc += sigma2 * w + v_phibar[i.max(j)] * wbar;
            }
        }
        row.push(acc);
    }
    Ok(row)
}

pub(super) fn run<T: Field>(
    input: &MampInput<'_, T>,
    config: &MampConfig,
    table: &MomentTable,
    observer: &mut dyn RunObserver<T>,
    base_matvecs: u64,
) -> Trajectory {
    let start = Instant::now();
    let op = input.op;
    let n = op.cols();
    let inv_n = 1.0 / n as f64;
    let delta = op.delta();
    let sigma2 = config.sigma2;
    let w0 = table.w0();
    let lambda_dag = table.lambda_dag();
    let window_cap = config.damping_len;

    let mut core = MleCore::new(op, input.y, table);
    let mut estimates: Vec<Vec<T>> = vec![vec![T::zero(); n]];
    // Residuals z_k = y − A·x_k for the trailing damping window; z_1 = y.
    let mut residuals: VecDeque<Vec<T>> = VecDeque::new();
    residuals.push_back(input.y.to_vec());

    // v̄_{t,t}, 1-indexed. Bootstrap: v̄_{1,1} = ((1/N)‖y‖² − δσ²)/w₀.
    let mut v_phibar = vec![f64::NAN];
    let bootstrap = ((inv_n * norm2(input.y)) - delta * sigma2) / w0;
    v_phibar.push(bootstrap.max(VAR_FLOOR));
    observer.estimate_formed(1, &estimates[0], v_phibar[1]);

    // Newest candidate φ_{t−1}(r_{t−1}) awaiting its covariance row.
    let mut pending: Option<Vec<T>> = None;
    // Empirical v^φ_{t,t} of that candidate once priced.
    let mut v_phi_latest = f64::NAN;
    let mut prev_v_post = f64::NAN;

    let mut rows: Vec<IterationRow> = Vec::with_capacity(config.max_iters);
    let mut status = RunStatus::MaxIters;

    for t in 1..=config.max_iters {
        let mut flags = RowFlags::default();
        let mut damping_len = 1;

        if t >= 2 {
            // Price the pending candidate and damp it into x_t.
            let cand = pending.take().expect("candidate from previous iteration");
            let a_cand = op.apply(&cand).expect("candidate length");
            let z_bar: Vec<T> = input
                .y
                .iter()
                .zip(&a_cand)
                .map(|(&yv, &av)| yv - av)
                .collect();
            let mut v_phi_new = ((inv_n * norm2(&z_bar)) - delta * sigma2) / w0;
            if v_phi_new < VAR_FLOOR {
                v_phi_new = VAR_FLOOR;
                flags.set(RowFlags::VPHI_CLAMPED);
            }

            // Window over the last w candidates: x_{t−w+1..t−1} then cand.
            let w = t.min(window_cap);
            let mut cov = vec![0.0; w * w];
            for a in 0..w - 1 {
                let ia = t - w + 1 + a;
                for b in 0..w - 1 {
                    let ib = t - w + 1 + b;
                    cov[a * w + b] = v_phibar[ia.max(ib)];
                }
            }
            for (b, z_k) in residuals.iter().rev().take(w - 1).rev().enumerate() {
                let cross = ((inv_n * inner_re(&z_bar, z_k)) - delta * sigma2) / w0;
                cov[(w - 1) * w + b] = cross;
                cov[b * w + (w - 1)] = cross;
            }
            cov[(w - 1) * w + (w - 1)] = v_phi_new;

            let sol = solve_with_backoff(&cov, w);
            flags.set_if(sol.backed_off, RowFlags::BACKOFF);
            damping_len = sol.len;

            let mut cands: Vec<&[T]> = Vec::with_capacity(sol.len);
            let mut zs: Vec<&[T]> = Vec::with_capacity(sol.len);
            for k in 0..sol.len - 1 {
                let idx = t - sol.len + 1 + k;
                cands.push(&estimates[idx - 1]);
            }
            for z_k in residuals.iter().rev().take(sol.len - 1).rev() {
                zs.push(z_k);
            }
            cands.push(&cand);
            zs.push(&z_bar);
            let x_t = combine(&cands, &sol.zeta);
            let z_t = combine(&zs, &sol.zeta);

            let mut vbar = sol.vbar;
            if vbar < VAR_FLOOR {
                vbar = VAR_FLOOR;
                flags.set(RowFlags::VPHI_CLAMPED);
            }
            observer.damping_solved(
                t,
                &DampingInfo {
                    t,
                    kind: DampingKind::NlePhi,
                    matrix: trailing_block(&cov, w, sol.len),
                    dim: sol.len,
                    zeta: sol.zeta.clone(),
                    vbar,
                    backed_off: sol.backed_off,
                },
            );

            estimates.push(x_t);
            residuals.push_back(z_t);
            if residuals.len() > window_cap {
                residuals.pop_front();
            }
            v_phibar.push(vbar);
            v_phi_latest = v_phi_new;
            observer.estimate_formed(t, estimates.last().unwrap(), vbar);
        }

        let theta_t = theta_step(lambda_dag, sigma2 / v_phibar[t]);
        let xi_t = if t == 1 {
            1.0
        } else {
            config.xi_rule().xi(t, v_phi_latest, sigma2)
        };

        let r_t = match core.advance(t, theta_t, xi_t, &estimates) {
            Ok(v) => v,
            Err(reason) => {
                status = RunStatus::Failed { at_iter: t, reason };
                break;
            }
        };

        let lo = t.saturating_sub(window_cap - 1).max(1);
        let gamma_row = match v_gamma_row(&core, t, lo, &v_phibar, sigma2) {
            Ok(r) => r,
            Err(reason) => {
                status = RunStatus::Failed { at_iter: t, reason };
                break;
            }
        };
        let v_gamma_tt = *gamma_row.last().unwrap();
        observer.mle_output(t, &r_t, v_gamma_tt);

        if !v_gamma_tt.is_finite() {
            status = RunStatus::Failed {
                at_iter: t,
                reason: FailureReason::NonFinite { what: format!("v_gamma at t={t}") },
            };
            break;
        }
        let v_in = if v_gamma_tt < VAR_FLOOR {
            flags.set(RowFlags::VGAMMA_CLAMPED);
            VAR_FLOOR
        } else {
            v_gamma_tt
        };

        let den = match input.denoiser.denoise(&r_t, v_in) {
            Ok(d) => d,
            Err(e) => {
                status = RunStatus::Failed {
                    at_iter: t,
                    reason: FailureReason::DegenerateLedger {
                        what: e.to_string(),
                    },
                };
                break;
            }
        };
        flags.set_if(den.clamped, RowFlags::VPHI_CLAMPED);
        observer.nle_candidate(t, &den.x_orth, den.v_phi);

        rows.push(IterationRow {
            iter: t,
            matvecs: op.matvec_count() - base_matvecs,
            mse_db: input
                .x_true
                .map(|x| mse_db(&den.x_post, x))
                .unwrap_or(f64::NAN),
            v_pred_db: 10.0 * den.v_post.max(1e-32).log10(),
            v_gamma_pred: v_gamma_tt,
            v_gamma_emp: input.x_true.map(|x| {
                r_t.iter()
                    .zip(x)
                    .map(|(&a, &b)| (a - b).abs2())
                    .sum::<f64>()
                    * inv_n
            }),
            damping_len,
            flags,
            time_ms: start.elapsed().as_secs_f64() * 1e3,
        });

        if config.stop_tol > 0.0
            && t >= 2
            && (den.v_post - prev_v_post).abs() < config.stop_tol * prev_v_post
        {
            status = RunStatus::Converged { at_iter: t };
            break;
        }
        prev_v_post = den.v_post;
        pending = Some(den.x_orth);
    }

    Trajectory {
        rows,
        status,
        setup_matvecs: 0,
        total_matvecs: 0,
    }
}
