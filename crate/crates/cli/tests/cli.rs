use std::path::Path;
use std::process::{Command, Output};

fn foldcore(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_foldcore"))
        .args(args)
        .env_remove("FOLDCORE_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

const SMALL: &[&str] = &["--n", "6", "--k", "2", "--iters", "8", "--starts", "2", "--alpha-sweep", "0.4,0.5"];

#[test]
fn converge_csv_shape_and_status_values() {
    let out = foldcore(&[&["converge"], SMALL].concat());
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("alpha,curve,iter,fwd_rel_err,bwd_rel_err,status"));
    let mut rows = 0;
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 6, "{line}");
        assert!(["ok", "iterlimit", "diverged"].contains(&cols[5]), "{line}");
        rows += 1;
    }
    assert!(rows > 0);
}

#[test]
fn jacobian_mode_is_exact_after_one_step() {
    let out = foldcore(&[&["converge", "--mode", "jacobian"], SMALL].concat());
    assert_eq!(code(&out), 0);
    for line in stdout(&out).lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[1], "jacobian");
        assert_eq!(cols[2], "1");
        assert!(cols[4].parse::<f64>().unwrap() <= 1e-12, "{line}");
    }
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# sweep\nalpha_sweep = 0.3\niters = 4\nstarts = 1\nn = 5\nk = 2\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let from_file = stdout(&foldcore(&["converge", "--config", cfg, "--mode", "lfpi"]));
    assert!(from_file.lines().skip(1).all(|l| l.starts_with("0.3,")), "{from_file}");
    let overridden = stdout(&foldcore(&["converge", "--config", cfg, "--mode", "lfpi", "--alpha-sweep", "0.45"]));
    assert!(overridden.lines().skip(1).all(|l| l.starts_with("0.45,")), "{overridden}");
}

#[test]
fn seed_env_is_honoured_and_runs_are_deterministic() {
    let run = |seed: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_foldcore"));
        cmd.args([&["converge"], SMALL].concat()).env_remove("FOLDCORE_SEED");
        if let Some(s) = seed {
            cmd.env("FOLDCORE_SEED", s);
        }
        stdout(&cmd.output().unwrap())
    };
    assert_eq!(run(Some("5")), run(Some("5")));
    assert_ne!(run(Some("5")), run(Some("6")));
    assert_eq!(run(None), run(Some("0")));
    let flag = stdout(&foldcore(&[&["converge", "--seed", "5"], SMALL].concat()));
    assert_eq!(flag, run(Some("5")));
}

#[test]
fn configuration_errors_exit_2() {
    assert_eq!(code(&foldcore(&["converge", "--bogus"])), 2);
    assert_eq!(code(&foldcore(&["converge", "--stepsize", "-1"])), 2);
    assert_eq!(code(&foldcore(&["converge", "--n", "3", "--k", "5"])), 2);
    assert_eq!(code(&foldcore(&["gradcheck", "--task", "bilinear"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "unknown_key = 1\n").unwrap();
    let out = foldcore(&["converge", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
    assert_eq!(code(&foldcore(&["converge", "--config", "/nonexistent/run.cfg"])), 2);
}

#[test]
fn failed_gradcheck_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let oracle = dir.path().join("oracle.csv");
    std::fs::write(&oracle, "0.1,0.2,0.3,0.9,0.9,0.9\n").unwrap();
    let out = foldcore(&["gradcheck", "--task", "topk", "--n", "3", "--k", "1", "--oracle-file", oracle.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    assert!(stdout(&out).contains(",false,"));
}

#[test]
fn train_zero_epochs_and_baseline_file() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("hist.csv");
    let json = dir.path().join("hist.json");
    let out = foldcore(&[
        "train", "--task", "topk", "--samples", "20", "--epochs", "0", "--baseline", "two-stage",
        "-o", csv.to_str().unwrap(), "--json", json.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let main = read(&csv);
    let lines: Vec<&str> = main.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "epoch,train_loss,test_loss,test_regret");
    assert!(lines[1].starts_with("0,"));
    let baseline = read(&dir.path().join("hist_two_stage.csv"));
    assert_eq!(baseline.lines().count(), 2);
    let summary: serde_json::Value = serde_json::from_str(&read(&json)).unwrap();
    assert!(summary.is_object());
}
