//! The complexity-reduced recursion: two matvecs per iteration.
//!
//! No fresh residual is spent on covariance measurement. The variance of the
//! linear output comes from the stored-iterate identity
//! v^γ_{t,t} = (1/N)·‖h_t − x_t‖² − v^φ_{t,t}, off-diagonals are recovered by
//! polarization from pairwise distances of stored outputs, and damping moves
//! to the linear side. The non-linear stage is the plain orthogonalized
//! denoiser output, whose variance follows the extrinsic-information rule
//! (1/v_post − 1/v̄^γ)⁻¹.

use std::collections::VecDeque;
use std::time::Instant;

use crate::field::{combine, mse_db, norm2, Field};
use crate::spectral::MomentTable;

use super::damping::{solve_with_backoff, trailing_block};
use super::mle::MleCore;
use super::{
    theta_step, DampingInfo, DampingKind, FailureReason, IterationRow, MampConfig, MampInput,
    RowFlags, RunObserver, RunStatus, Trajectory, VAR_FLOOR,
};

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
    // v^φ_{t,t}, 1-indexed; bootstrap estimates the prior variance of x_1 = 0.
    let mut v_phi = vec![f64::NAN];
    let bootstrap = ((inv_n * norm2(input.y)) - delta * sigma2) / w0;
    v_phi.push(bootstrap.max(VAR_FLOOR));
    observer.estimate_formed(1, &estimates[0], v_phi[1]);

    // Trailing window of linear outputs h_i with their global index.
    let mut h_window: VecDeque<(usize, Vec<T>)> = VecDeque::new();
    // v^γ_{i,i}, 1-indexed, clamped values as used in the damping matrix.
    let mut v_gamma = vec![f64::NAN];
    let mut prev_v_post = f64::NAN;

    let mut rows: Vec<IterationRow> = Vec::with_capacity(config.max_iters);
    let mut status = RunStatus::MaxIters;

    for t in 1..=config.max_iters {
        let mut flags = RowFlags::default();
        let theta_t = theta_step(lambda_dag, sigma2 / v_phi[t]);
        let xi_t = if t == 1 {
            1.0
        } else {
            config.xi_rule().xi(t, v_phi[t], sigma2)
        };

        let h_t = match core.advance(t, theta_t, xi_t, &estimates) {
            Ok(v) => v,
            Err(reason) => {
                status = RunStatus::Failed { at_iter: t, reason };
                break;
            }
        };

        // v^γ_{t,t} = (1/N)‖h_t − x_t‖² − v^φ_{t,t}.
        let dist: f64 = h_t
            .iter()
            .zip(&estimates[t - 1])
            .map(|(&a, &b)| (a - b).abs2())
            .sum();
        let v_gamma_raw = dist * inv_n - v_phi[t];
        if !v_gamma_raw.is_finite() {
            status = RunStatus::Failed {
                at_iter: t,
                reason: FailureReason::NonFinite {
                    what: format!("v_gamma at t={t}"),
                },
            };
            break;
        }
        let v_gamma_tt = if v_gamma_raw < VAR_FLOOR {
            flags.set(RowFlags::VGAMMA_CLAMPED);
            VAR_FLOOR
        } else {
            v_gamma_raw
        };
        v_gamma.push(v_gamma_tt);
        observer.mle_output(t, &h_t, v_gamma_raw);

        h_window.push_back((t, h_t));
        if h_window.len() > window_cap {
            h_window.pop_front();
        }

        // Re(V^γ) over the window by polarization:
        // Re v^γ_{a,b} = (v_aa + v_bb − (1/N)‖h_a − h_b‖²)/2.
        let w = h_window.len();
        let mut cov = vec![0.0; w * w];
        for a in 0..w {
            let (ia, ha) = &h_window[a];
            cov[a * w + a] = v_gamma[*ia];
            for b in a + 1..w {
                let (ib, hb) = &h_window[b];
                let d2: f64 = ha
                    .iter()
                    .zip(hb.iter())
                    .map(|(&x, &y)| (x - y).abs2())
                    .sum();
                let re = 0.5 * (v_gamma[*ia] + v_gamma[*ib] - d2 * inv_n);
                cov[a * w + b] = re;
                cov[b * w + a] = re;
            }
        }
        let sol = solve_with_backoff(&cov, w);
        flags.set_if(sol.backed_off, RowFlags::BACKOFF);

        let hs: Vec<&[T]> = h_window
            .iter()
            .skip(w - sol.len)
            .map(|(_, h)| h.as_slice())
            .collect();
        let r_t = combine(&hs, &sol.zeta);
        let mut v_gamma_bar = sol.vbar;
        if v_gamma_bar < VAR_FLOOR {
            v_gamma_bar = VAR_FLOOR;
            flags.set(RowFlags::VGAMMA_CLAMPED);
        }
        observer.damping_solved(
            t,
            &DampingInfo {
                t,
                kind: DampingKind::MleGamma,
                matrix: trailing_block(&cov, w, sol.len),
                dim: sol.len,
                zeta: sol.zeta.clone(),
                vbar: v_gamma_bar,
                backed_off: sol.backed_off,
            },
        );
        observer.mle_combined(t, &r_t, v_gamma_bar);

        let den = match input.denoiser.denoise(&r_t, v_gamma_bar) {
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
        observer.estimate_formed(t + 1, &den.x_orth, den.v_phi);

        rows.push(IterationRow {
            iter: t,
            matvecs: op.matvec_count() - base_matvecs,
            mse_db: input
                .x_true
                .map(|x| mse_db(&den.x_post, x))
                .unwrap_or(f64::NAN),
            v_pred_db: 10.0 * den.v_post.max(1e-32).log10(),
            v_gamma_pred: v_gamma_raw,
            v_gamma_emp: input.x_true.map(|x| {
                let (_, h) = h_window.back().unwrap();
                h.iter().zip(x).map(|(&a, &b)| (a - b).abs2()).sum::<f64>() * inv_n
            }),
            damping_len: sol.len,
            flags,
            time_ms: start.elapsed().as_secs_f64() * 1e3,
        });

        estimates.push(den.x_orth);
        v_phi.push(den.v_phi);

        if config.stop_tol > 0.0
            && t >= 2
            && (den.v_post - prev_v_post).abs() < config.stop_tol * prev_v_post
        {
            status = RunStatus::Converged { at_iter: t };
            break;
        }
        prev_v_post = den.v_post;
    }

    Trajectory {
        rows,
        status,
        setup_matvecs: 0,
        total_matvecs: 0,
    }
}
