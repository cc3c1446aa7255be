use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn specdrop(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_specdrop"))
        .args(args)
        .env("SPECDROP_OUTPUT_ROOT", root)
        .current_dir(root)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout_json(o: &Output) -> serde_json::Value {
    serde_json::from_str(String::from_utf8_lossy(&o.stdout).trim()).unwrap()
}

const SMALL: &[&str] = &["--n", "120", "--epochs", "2", "--batch-size", "40"];

#[test]
fn simulate_writes_under_the_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let o = specdrop(tmp.path(), &["simulate", "--variant", "simple7", "--n", "30", "--seed", "4", "--split", "0.5", "--out", "data/s7.sdset"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let j = stdout_json(&o);
    assert_eq!((j["n"].as_u64(), j["n_train"].as_u64()), (Some(30), Some(15)));
    assert!(tmp.path().join("data/s7.sdset").exists());

    // Same seed, same bytes.
    let o = specdrop(tmp.path(), &["simulate", "--variant", "simple7", "--n", "30", "--seed", "4", "--split", "0.5", "--out", "again.sdset"]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(tmp.path().join("data/s7.sdset")).unwrap(), fs::read(tmp.path().join("again.sdset")).unwrap());
}

#[test]
fn train_from_config_with_overrides_then_report() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("run.toml"),
        "variant = \"standard14\"\nepochs = 50\nseed = 2\n[dataset]\nn = 500\n",
    )
    .unwrap();
    let cfg = tmp.path().join("run.toml");
    let mut args = vec!["train", "--config", cfg.to_str().unwrap(), "--out", "runs/base"];
    args.extend(SMALL);
    let o = specdrop(tmp.path(), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let j = stdout_json(&o);
    assert_eq!(j["status"]["state"], "completed");
    let run = tmp.path().join("runs/base");
    let written = fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(written.contains("epochs = 2") && written.contains("seed = 2") && written.contains("n = 120"), "{written}");

    let o = specdrop(tmp.path(), &["report", "--runs", "runs", "--out", "rep"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tmp.path().join("rep/curve_mape_val.svg").exists());
    assert!(tmp.path().join("rep/summary.csv").exists());
}

#[test]
fn config_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.toml"), "variant = \"simple7\"\nepochz = 3\n").unwrap();
    let bad = tmp.path().join("bad.toml");
    for args in [
        vec!["train", "--config", bad.to_str().unwrap()],
        vec!["train"],
        vec!["train", "--variant", "simple7", "--dropout", "dC_I@0.1"],
        vec!["train", "--variant", "simple7", "--epochs", "0"],
        vec!["train", "--variant", "simple7", "--dataset", "missing.sdset"],
        vec!["simulate", "--variant", "nine"],
        vec!["ablate", "--variant", "simple7", "--matrix", "nope.toml"],
        vec!["report"],
        vec!["frobnicate"],
    ] {
        let o = specdrop(tmp.path(), &args);
        assert_eq!(code(&o), 3, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = specdrop(tmp.path(), &["--help"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn divergence_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = specdrop(tmp.path(), &["simulate", "--variant", "simple7", "--n", "80", "--out", "nan.sdset"]);
    assert_eq!(code(&o), 0);
    // Poison one training sample right after the header line.
    let path = tmp.path().join("nan.sdset");
    let mut bytes = fs::read(&path).unwrap();
    let body = bytes.iter().position(|&b| b == b'\n').unwrap() + 1;
    bytes[body..body + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    fs::write(&path, bytes).unwrap();

    let o = specdrop(
        tmp.path(),
        &["train", "--variant", "simple7", "--dataset", path.to_str().unwrap(), "--epochs", "2", "--batch-size", "40", "--out", "div"],
    );
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let j = stdout_json(&o);
    assert_eq!(j["status"]["state"], "diverged");
    assert!(tmp.path().join("div/divergence.json").exists());
}

#[test]
fn ablate_writes_the_table() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("m.toml"),
        r#"
[[rows]]
group = "baseline"
label = "baseline"
[[rows.trials]]
drop_prob = "- -"

[[rows]]
group = "individual"
label = "FAD_O"
[[rows.trials]]
drop_prob = "0.05"
dropout = [{ technique = "fad", placement = "outside", p_max = 0.05, activation_epoch = 1 }]
"#,
    )
    .unwrap();
    let m = tmp.path().join("m.toml");
    let mut args = vec!["ablate", "--variant", "simple7", "--matrix", m.to_str().unwrap(), "--out", "abl"];
    args.extend(SMALL);
    let o = specdrop(tmp.path(), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(tmp.path().join("abl/ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("group,technique,drop prob,Epoch,MAPE,STD,r²,S̄"));

    let t = tmp.path().join("abl/ablation.csv");
    let o = specdrop(tmp.path(), &["report", "--table", t.to_str().unwrap(), "--out", "abl_rep"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tmp.path().join("abl_rep/ablation_mape.svg").exists());
}
