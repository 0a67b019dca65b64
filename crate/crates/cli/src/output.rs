//! Stable output formatting.
//!
//! CSV numbers are printed with 17 significant digits so identical inputs
//! produce byte-identical files; timing is written as 0 unless explicitly
//! enabled, keeping the default output deterministic.

use std::io::{self, Write};

use mamp_core::harness::ExperimentConfig;
use mamp_core::mamp::{RunStatus, Trajectory};

/// 17 significant digits, with plain markers for the non-finite values the
/// overflow demonstrations produce.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{x:.16e}")
    }
}

pub fn status_str(status: &RunStatus) -> String {
    match status {
        RunStatus::MaxIters => "max-iters".into(),
        RunStatus::Converged { at_iter } => format!("converged@{at_iter}"),
        RunStatus::Failed { at_iter, reason } => {
            format!("failed@{at_iter}: {reason}")
        }
    }
}

fn sanitize(s: &str) -> String {
    s.replace([' ', ','], "_")
}

pub fn write_trajectory_csv(
    w: &mut impl Write,
    config: &ExperimentConfig,
    traj: &Trajectory,
    timing: bool,
) -> io::Result<()> {
    writeln!(w, "# schema=1")?;
    writeln!(w, "# config: {}", config.echo())?;
    writeln!(w, "iter,matvecs,mse_db,v_pred_db,damping_len,flags,time_ms")?;
    for r in &traj.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.iter,
            r.matvecs,
            fmt_f64(r.mse_db),
            fmt_f64(r.v_pred_db),
            r.damping_len,
            r.flags,
            if timing {
                fmt_f64(r.time_ms)
            } else {
                "0".into()
            },
        )?;
    }
    if let RunStatus::Failed { at_iter, reason } = &traj.status {
        writeln!(
            w,
            "{},{},nan,nan,0,failure:{},0",
            at_iter,
            traj.total_matvecs,
            sanitize(&reason.to_string()),
        )?;
    }
    writeln!(w, "# status: {}", status_str(&traj.status))?;
    Ok(())
}

pub fn write_trajectory_json(
    w: &mut impl Write,
    config: &ExperimentConfig,
    traj: &Trajectory,
    timing: bool,
) -> io::Result<()> {
    let rows: Vec<serde_json::Value> = traj
        .rows
        .iter()
        .map(|r| {
            serde_json::json!({
                "iter": r.iter,
                "matvecs": r.matvecs,
                "mse_db": json_f64(r.mse_db),
                "v_pred_db": json_f64(r.v_pred_db),
                "v_gamma_pred": json_f64(r.v_gamma_pred),
                "damping_len": r.damping_len,
                "flags": r.flags.to_string(),
                "time_ms": if timing { json_f64(r.time_ms) } else { serde_json::json!(0) },
            })
        })
        .collect();
    let doc = serde_json::json!({
        "schema": 1,
        "config": config,
        "status": status_str(&traj.status),
        "setup_matvecs": traj.setup_matvecs,
        "total_matvecs": traj.total_matvecs,
        "rows": rows,
    });
    writeln!(w, "{}", serde_json::to_string_pretty(&doc)?)
}

/// JSON has no inf/nan literals; fall back to strings for those.
fn json_f64(x: f64) -> serde_json::Value {
    if x.is_finite() {
        serde_json::json!(x)
    } else {
        serde_json::json!(fmt_f64(x))
    }
}

/// Short stable identifier for file naming, from the canonical config echo.
pub fn config_hash(config: &ExperimentConfig) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(config.echo().as_bytes());
    let mut out = String::with_capacity(12);
    for b in digest.iter().take(6) {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
