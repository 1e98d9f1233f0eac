use std::fs;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_regret-lab"))
}

#[test]
fn gen_env_then_bounds_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("chain.json");
    let out = bin()
        .args(["gen-env", "--kind", "chain", "--horizon", "2", "--out"])
        .arg(&model)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("gap_star 0.7"));

    let csv = dir.path().join("tail.csv");
    let out = bin()
        .args(["bounds", "--episodes", "200", "--mdp"])
        .arg(&model)
        .arg("--tail-csv")
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("m_K") && table.contains("n_bar[0]"));
    let text = fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("x,raw_bound,clipped_bound\n"));
    assert_eq!(text.lines().count(), 513);
}

#[test]
fn tail_prints_adaptive_curve() {
    let out = bin()
        .args([
            "tail", "--states", "2", "--actions", "2", "--horizon", "2", "--gap", "0.5", "--episodes", "100",
            "--schedule", "ki", "--adaptive", "--points", "10",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("x,gamma_x,raw_bound,clipped_bound\n"));
    assert_eq!(text.lines().count(), 11);
}

#[test]
fn run_writes_result_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    let out_dir = dir.path().join("out");
    fs::write(
        &config,
        format!(
            r#"{{"env": {{"kind": "BANDIT", "S": 1, "A": 3, "H": 1}},
                "bonus": {{"schedule": "KD", "alpha": 0.5, "mu": 1.0, "total_episodes": 30}},
                "gamma": 0.0, "replications": 4, "master_seed": 3,
                "output_dir": {:?}, "record_diagnostics": true}}"#,
            out_dir.to_str().unwrap()
        ),
    )
    .unwrap();
    let out = bin().arg("run").arg(&config).env("REGRET_LAB_THREADS", "2").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["tail.csv", "summary.json", "trajectories.csv"] {
        assert!(out_dir.join(name).exists(), "{name}");
    }
}

#[test]
fn verify_passes_on_a_small_grid() {
    let out = bin().args(["verify", "--trials", "2000", "--lemma2-trials", "10"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("PASS") && !text.contains("FAIL"));
}

#[test]
fn bad_inputs_exit_nonzero() {
    let out = bin().args(["bounds", "--episodes", "10", "--states", "2"]).output().unwrap();
    assert!(!out.status.success());
    let out = bin()
        .args(["gen-env", "--kind", "random-gap", "--out", "/nonexistent-dir/x.json"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
