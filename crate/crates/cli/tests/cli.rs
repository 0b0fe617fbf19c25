use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mcms(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcms"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn simulate(dir: &Path, groups: &str, seed: &str) {
    let out = dir.join("responses.csv");
    let o = mcms(&[
        "simulate",
        "--groups",
        groups,
        "--spam-fraction",
        "0.2",
        "--seed",
        seed,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_is_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    fs::create_dir_all(&a).unwrap();
    fs::create_dir_all(&b).unwrap();
    simulate(&a, "USA:50,BRA:50", "9");
    simulate(&b, "USA:50,BRA:50", "9");
    let x = fs::read(a.join("responses.csv")).unwrap();
    assert_eq!(x, fs::read(b.join("responses.csv")).unwrap());
    assert_eq!(String::from_utf8(x).unwrap().lines().count(), 101);
}

#[test]
fn pipeline_with_flag_overrides_and_rerender() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "USA:500,BRA:500", "2");
    let cfg = tmp.path().join("pipeline.toml");
    fs::write(
        &cfg,
        "responses = [\"responses.csv\"]\n[groups]\nsets = [\"countries\", \"all\"]\n",
    )
    .unwrap();
    let out = tmp.path().join("out");
    let o = mcms(&[
        "pipeline",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--decision-mode",
        "conjunctive",
        "--chisq-multiplier",
        "n",
        "--use-scaled",
        "false",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(out.join("report.json")).unwrap();
    assert!(report.contains("\"decision_mode\": \"conjunctive\""));
    assert!(report.contains("\"chisq_multiplier\": \"n\""));
    assert!(report.contains("\"use_scaled\": false"));
    let inv = fs::read_to_string(out.join("invariance.txt")).unwrap();
    assert!(inv.contains("Measurement invariance: countries"));

    let again = tmp.path().join("again");
    let o = mcms(&[
        "report",
        "--input",
        out.join("report.json").to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["report.md", "cfa_fit.txt", "invariance.txt"] {
        assert_eq!(
            fs::read(out.join(name)).unwrap(),
            fs::read(again.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn config_errors_exit_with_status_2_and_write_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("pipeline.toml");
    fs::write(&cfg, "responses = [\"missing.csv\"]\n").unwrap();
    let out = tmp.path().join("out");
    let o = mcms(&["pipeline", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.csv"));

    let o = mcms(&["cfa", "--config", tmp.path().join("nope.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    fs::write(&cfg, "responses = [\"x.csv\"]\nunknown_key = 1\n").unwrap();
    let o = mcms(&["ingest", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_flag_values_are_rejected() {
    let o = mcms(&["pipeline", "--config", "x.toml", "--decision-mode", "sometimes"]);
    assert!(!o.status.success());
    let o = mcms(&["pipeline", "--config", "x.toml", "--chisq-multiplier", "2n"]);
    assert!(!o.status.success());
}

