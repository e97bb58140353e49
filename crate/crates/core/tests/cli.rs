use std::path::Path;
use std::process::{Command, Output};

use energy_attention::cli::MatrixFile;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_energy-attention"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) {
    std::fs::write(dir.join("config.json"), body).unwrap();
}

const QUAD: &str = r#"{"n": 6, "d": 8, "d_k": 4, "d_v": 3, "form": {"kind": "quadratic"},
    "perturb_sigma": 0.1, "seed": 11, "heads": 2, "t_max": 40}"#;

#[test]
fn gen_is_deterministic_and_complete() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), QUAD);
    for out in ["a", "b"] {
        let o = run(
            tmp.path(),
            &["--config", "config.json", "--out", out, "gen"],
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["X", "W_q_0", "W_k_0", "W_v_0", "W_q_1", "W_k_1", "W_v_1"] {
        let file = format!("{name}.json");
        let a = std::fs::read(tmp.path().join("a").join(&file)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(&file)).unwrap();
        assert_eq!(a, b, "{file}");
        let m = MatrixFile::load(&tmp.path().join("a").join(&file)).unwrap();
        assert_eq!(m.name, name);
    }
    let x = MatrixFile::load(&tmp.path().join("a/X.json")).unwrap();
    assert_eq!(x.matrix.shape(), (6, 8));
    let wv = MatrixFile::load(&tmp.path().join("a/W_v_1.json")).unwrap();
    assert_eq!(wv.matrix.shape(), (8, 3));
}

#[test]
fn run_reports_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), QUAD);
    assert!(run(
        tmp.path(),
        &["--config", "config.json", "--out", "in", "gen"]
    )
    .status
    .success());
    let mut bodies = Vec::new();
    for out in ["r1.json", "r2.json"] {
        let o = run(
            tmp.path(),
            &[
                "--config",
                "config.json",
                "--out",
                out,
                "--emit-z",
                "run",
                "--in",
                "in",
            ],
        );
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
        bodies.push(std::fs::read(tmp.path().join(out)).unwrap());
    }
    assert_eq!(bodies[0], bodies[1]);
    let report: serde_json::Value = serde_json::from_slice(&bodies[0]).unwrap();
    assert_eq!(report["heads"].as_array().unwrap().len(), 2);
    assert_eq!(report["z"]["cols"], 6);
    assert_eq!(report["config"]["seed"], 11);
}

#[test]
fn run_rejects_mismatched_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), QUAD);
    assert!(run(
        tmp.path(),
        &["--config", "config.json", "--out", "in", "gen"]
    )
    .status
    .success());
    write_config(tmp.path(), &QUAD.replace("\"n\": 6", "\"n\": 5"));
    let o = run(
        tmp.path(),
        &["--config", "config.json", "run", "--in", "in"],
    );
    assert_eq!(o.status.code(), Some(2));
    let o = run(
        tmp.path(),
        &["--config", "config.json", "run", "--in", "missing"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(
        tmp.path(),
        r#"{"n": 4, "d": 8, "d_k": 2, "d_v": 2, "form": {"kind": "cubic"}}"#,
    );
    assert_eq!(
        run(tmp.path(), &["--config", "config.json", "trace"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run(tmp.path(), &["trace"]).status.code(), Some(2));
    assert_eq!(run(tmp.path(), &["bogus"]).status.code(), Some(2));
    write_config(tmp.path(), QUAD);
    let o = run(
        tmp.path(),
        &[
            "--config",
            "config.json",
            "sweep",
            "--param",
            "beta",
            "--values",
            "1",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn checks_pass_and_fail_with_expected_codes() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), QUAD);
    let o = run(tmp.path(), &["--config", "config.json", "stationarity"]);
    assert_eq!(o.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["pass"], true);

    assert_eq!(
        run(tmp.path(), &["--config", "config.json", "gradcheck"])
            .status
            .code(),
        Some(0)
    );
    let o = run(
        tmp.path(),
        &["--config", "config.json", "gradcheck", "--tol", "1e-16"],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn trace_has_one_row_per_iterate() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(
        tmp.path(),
        r#"{"n": 5, "d": 8, "d_k": 4, "d_v": 4, "form": {"kind": "exponential"},
            "perturb_sigma": 0.2, "seed": 3, "t_max": 25, "grad_tol": 0}"#,
    );
    let o = run(tmp.path(), &["--config", "config.json", "trace"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("iter,energy,grad_norm"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|f| f.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 26);
    assert!(rows.iter().enumerate().all(|(t, r)| r[0] == t as f64));
    assert!(rows.windows(2).all(|w| w[1][1] <= w[0][1]));
}

#[test]
fn divergence_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(
        tmp.path(),
        r#"{"n": 6, "d": 8, "d_k": 4, "d_v": 4, "form": {"kind": "polynomial", "p": 4},
            "perturb_sigma": 5.0, "seed": 1, "eta": 1000, "t_max": 200, "backtracking": false}"#,
    );
    let o = run(tmp.path(), &["--config", "config.json", "trace"]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn sweep_writes_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), QUAD);
    let o = run(
        tmp.path(),
        &[
            "--config",
            "config.json",
            "sweep",
            "--param",
            "n",
            "--values",
            "2,4,8",
        ],
    );
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n,converged,iters,final_grad_norm,wall_time_ms");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("8,"));
}
