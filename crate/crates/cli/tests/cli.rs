//! End-to-end exercises of the binary: exit codes, file outputs, and the
//! reproducibility of the default (timing-free) CSV format.

use std::path::Path;
use std::process::{Command, Output};

fn mamp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mamp"))
        .args(args)
        .current_dir(dir)
        .env_remove("MAMP_SEED")
        .output()
        .expect("spawn mamp")
}

fn stdout_lines(out: &Output) -> Vec<String> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|s| s.to_string())
        .collect()
}

#[test]
fn run_writes_full_trajectory_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = mamp(
        dir.path(),
        &[
            "run", "--algo", "cr", "--m", "128", "--n", "256", "--kappa", "1000", "--snr-db", "35",
            "--mu", "0.1", "--iters", "60", "--seed", "7", "--out", "csv",
        ],
    );
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let path = dir.path().join(stdout_lines(&out)[0].clone());
    let text = std::fs::read_to_string(&path).unwrap();
    let data_rows: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("iter,"))
        .collect();
    assert_eq!(data_rows.len(), 60);
    assert!(text.starts_with("# schema=1"));
    assert!(text.contains("iter,matvecs,mse_db,v_pred_db,damping_len,flags,time_ms"));
    assert!(text.trim_end().ends_with("# status: max-iters"));
}

#[test]
fn naive_overflow_run_exits_one_with_failure_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = mamp(
        dir.path(),
        &[
            "run",
            "--algo",
            "gd",
            "--moments",
            "naive",
            "--m",
            "512",
            "--n",
            "1024",
            "--kappa",
            "1000",
            "--iters",
            "300",
            "--seed",
            "3",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    let path = dir.path().join(stdout_lines(&out)[0].clone());
    let text = std::fs::read_to_string(path).unwrap();
    assert!(
        text.contains("failure:moment_overflow"),
        "no failure row:\n{text}"
    );
    // Partial trajectory retained.
    let data_rows = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("iter,"))
        .count();
    assert!(data_rows > 10, "rows: {data_rows}");
}

#[test]
fn missing_dimensions_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mamp(dir.path(), &["run", "--algo", "gd"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage"), "stderr: {err}");

    let out = mamp(dir.path(), &["run", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_pairing_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mamp(
        dir.path(),
        &[
            "run",
            "--m",
            "32",
            "--n",
            "64",
            "--field",
            "complex",
            "--transform",
            "dct",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn default_output_is_byte_identical_across_runs() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let args = [
        "run", "--algo", "oa-eig", "--m", "128", "--n", "256", "--kappa", "50", "--iters", "15",
        "--seed", "11",
    ];
    let out_a = mamp(dir_a.path(), &args);
    let out_b = mamp(dir_b.path(), &args);
    assert!(out_a.status.success() && out_b.status.success());
    let fa = dir_a.path().join(stdout_lines(&out_a)[0].clone());
    let fb = dir_b.path().join(stdout_lines(&out_b)[0].clone());
    assert_eq!(std::fs::read(fa).unwrap(), std::fs::read(fb).unwrap());
}

#[test]
fn json_output_parses_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = mamp(
        dir.path(),
        &[
            "run", "--algo", "cr", "--m", "64", "--n", "128", "--iters", "5", "--out", "json",
        ],
    );
    assert!(out.status.success());
    let path = dir.path().join(stdout_lines(&out)[0].clone());
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(doc["schema"], 1);
    assert_eq!(doc["config"]["m"], 64);
    assert_eq!(doc["rows"].as_array().unwrap().len(), 5);
    assert_eq!(doc["total_matvecs"], 10);
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("exp.toml"),
        "m = 64\nn = 128\nalgorithm = \"cr\"\niters = 4\nseed = 9\n",
    )
    .unwrap();
    let out = mamp(dir.path(), &["run", "--config", "exp.toml", "--iters", "6"]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let path = dir.path().join(stdout_lines(&out)[0].clone());
    let text = std::fs::read_to_string(path).unwrap();
    let rows = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("iter,"))
        .count();
    assert_eq!(rows, 6, "flag must override file");
    assert!(text.contains("iters=6"));
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed_env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_mamp"));
        cmd.args([
            "run", "--algo", "cr", "--m", "64", "--n", "128", "--iters", "3",
        ])
        .current_dir(dir.path());
        match seed_env {
            Some(s) => cmd.env("MAMP_SEED", s),
            None => cmd.env_remove("MAMP_SEED"),
        };
        let out = cmd.output().unwrap();
        assert!(out.status.success());
        String::from_utf8_lossy(&out.stdout)
            .lines()
            .next()
            .unwrap()
            .to_string()
    };
    let with_env = run(Some("123"));
    let without = run(None);
    assert_ne!(with_env, without, "env seed must change the config hash");

    let out = mamp(
        dir.path(),
        &["run", "--m", "64", "--n", "128", "--iters", "3"],
    );
    assert!(out.status.success());
}

#[test]
fn sweep_grid_produces_cells_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = mamp(
        dir.path(),
        &[
            "sweep", "--m", "64", "--n", "128", "--algos", "gd,cr", "--kappas", "10,100",
            "--iters", "5", "--seed", "2",
        ],
    );
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 4, "2x2 grid:\n{summary}");
    let files = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .starts_with("sweep_")
        })
        .count();
    assert_eq!(files, 4);
    // Summary carries matvec totals for cost comparisons.
    assert!(rows
        .iter()
        .any(|r| r.starts_with("gd,") && r.contains(",14,")));
    assert!(rows
        .iter()
        .any(|r| r.starts_with("cr,") && r.contains(",10,")));
}

#[test]
fn empty_sweep_list_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mamp(
        dir.path(),
        &["sweep", "--m", "64", "--n", "128", "--kappas", ""],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn moments_dump_has_bound_dominating_chi() {
    let dir = tempfile::tempdir().unwrap();
    let out = mamp(
        dir.path(),
        &[
            "moments", "--m", "64", "--n", "128", "--kappa", "1", "--iters", "10", "--seed", "4",
        ],
    );
    assert!(out.status.success());
    let path = dir.path().join(stdout_lines(&out)[0].clone());
    let text = std::fs::read_to_string(path).unwrap();
    let mut rows = 0;
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let k: usize = cols[0].parse().unwrap();
        let chi: f64 = cols[1].parse().unwrap();
        let bound: f64 = cols[3].parse().unwrap();
        assert!(bound >= chi.abs(), "bound violated at k={k}");
        if k >= 1 {
            // Flat spectrum: every later moment vanishes.
            assert!(chi.abs() < 1e-12);
        }
        rows += 1;
    }
    assert_eq!(rows, 20);
}

#[test]
fn overflow_demo_reports_both_regimes_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = mamp(
        dir.path(),
        &[
            "demo-overflow",
            "--m",
            "512",
            "--n",
            "1024",
            "--kappa",
            "1000",
            "--iters",
            "300",
            "--seed",
            "4",
        ],
    );
    assert!(
        out.status.success(),
        "overflow in the naive column is not an error"
    );
    let lines = stdout_lines(&out);
    assert!(lines.iter().any(|l| l.starts_with("regime: overflow")));
    assert!(lines
        .iter()
        .any(|l| l.starts_with("first_nonfinite_b: ") && !l.contains("none")));
    let csv_path = dir.path().join(lines[0].clone());
    let text = std::fs::read_to_string(csv_path).unwrap();
    assert!(
        text.contains(",inf"),
        "naive column should hit inf:\n(omitted)"
    );

    let out = mamp(
        dir.path(),
        &[
            "demo-overflow",
            "--m",
            "64",
            "--n",
            "128",
            "--kappa",
            "1",
            "--iters",
            "10",
        ],
    );
    assert!(out.status.success());
    let lines = stdout_lines(&out);
    assert!(lines
        .iter()
        .any(|l| l.starts_with("regime: no overflow regime")));
}
