use std::fs;
use std::path::Path;
use std::process::Command;

fn dscenet(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_dscenet"))
        .args(args)
        .output()
        .expect("binary runs");
    (
        out.status.code().expect("exit code"),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn ok(args: &[&str]) -> String {
    let (code, stdout, stderr) = dscenet(args);
    assert_eq!(code, 0, "{args:?} failed:\n{stderr}");
    stdout
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn generate(root: &Path) -> std::path::PathBuf {
    let data = root.join("data");
    ok(&[
        "gen", "--seed", "3", "--counts", "8,8,8,8", "--feature-dim", "8", "--min-patches", "4", "--max-patches", "8",
        "-o", p(&data),
    ]);
    ok(&["split", "--seed", "3", "--dataset", p(&data)]);
    data
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate(tmp.path());
    assert_eq!(fs::read_dir(data.join("bags")).unwrap().count(), 32);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(data.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["cases"].as_array().unwrap().len(), 32);
    assert!(manifest["normalization"].is_array());

    let run = tmp.path().join("run");
    ok(&["train", "--seed", "5", "--dataset", p(&data), "--variant", "no_cf", "--epochs", "2", "-o", p(&run)]);
    let history = fs::read_to_string(run.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 2);
    for line in history.lines() {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(rec["val_macro_auc"].is_number());
    }
    let echo: serde_json::Value = serde_json::from_slice(&fs::read(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(echo["training"]["variant"], "no_cf");
    assert_eq!(echo["training"]["epochs"], 2);
    assert!(run.join("checkpoint.dsck").is_file());

    let eval = tmp.path().join("eval");
    ok(&["eval", "--checkpoint", p(&run.join("checkpoint.dsck")), "--dataset", p(&data), "--split", "val", "-o", p(&eval)]);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(eval.join("report.json")).unwrap()).unwrap();
    assert!(report["accuracy"].as_f64().unwrap() >= 0.0);
    assert_eq!(report["per_class"].as_array().unwrap().len(), 4);
    let confusion = fs::read_to_string(eval.join("confusion.csv")).unwrap();
    assert_eq!(confusion.lines().count(), 5);
    let rocs = fs::read_dir(&eval)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("roc_"))
        .count();
    assert_eq!(rocs, 4);

    let ablation = tmp.path().join("ablation");
    ok(&["ablate", "--seed", "5", "--dataset", p(&data), "--epochs", "1", "--parallel", "-o", p(&ablation)]);
    let csv = fs::read_to_string(ablation.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "variant,DS,CF,seed,ACC,AUC,Precision,Recall,F1");
    let arms: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(arms, ["none", "no_cf", "no_ds", "full"]);
    assert!(ablation.join("ablation.txt").is_file());
}

#[test]
fn same_seed_and_config_reproduce_byte_identical_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate(tmp.path());
    let again = tmp.path().join("again");
    ok(&[
        "gen", "--seed", "3", "--counts", "8,8,8,8", "--feature-dim", "8", "--min-patches", "4", "--max-patches", "8",
        "-o", p(&again),
    ]);
    ok(&["split", "--seed", "3", "--dataset", p(&again)]);
    assert_eq!(fs::read(data.join("manifest.json")).unwrap(), fs::read(again.join("manifest.json")).unwrap());

    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["train", "--seed", "9", "--dataset", p(&data), "--epochs", "2", "-o", p(&a)]);
    ok(&["train", "--config", p(&a.join("config.json")), "--dataset", p(&again), "-o", p(&b)]);
    for file in ["history.jsonl", "checkpoint.dsck"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file} differs");
    }
}

#[test]
fn exit_codes_distinguish_usage_and_io_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate(tmp.path());

    assert_eq!(dscenet(&["frobnicate"]).0, 2);
    assert_eq!(dscenet(&["eval", "--dataset", p(&data)]).0, 2, "eval without --out or --checkpoint");
    assert_eq!(dscenet(&["gen", "--counts", "1,2", "-o", p(&tmp.path().join("x"))]).0, 2);
    assert_eq!(dscenet(&["split", "--dataset", p(&data)]).0, 2, "re-splitting needs --force");
    ok(&["split", "--dataset", p(&data), "--force"]);
    assert_eq!(dscenet(&["train", "--dataset", p(&tmp.path().join("missing")), "-o", p(&tmp.path().join("r"))]).0, 3);

    let config = tmp.path().join("bad.json");
    fs::write(&config, r#"{"unknown_option": 1}"#).unwrap();
    assert_eq!(dscenet(&["train", "--config", p(&config), "--dataset", p(&data)]).0, 2);

    let checkpoint = tmp.path().join("broken.dsck");
    fs::write(&checkpoint, b"DSCK\x01\x00").unwrap();
    let (code, _, stderr) = dscenet(&["eval", "--checkpoint", p(&checkpoint), "--dataset", p(&data), "-o", p(&tmp.path().join("e"))]);
    assert_eq!(code, 3);
    assert!(stderr.contains("broken.dsck"), "{stderr}");

    let bag = fs::read_dir(data.join("bags")).unwrap().next().unwrap().unwrap().path();
    let bytes = fs::read(&bag).unwrap();
    fs::write(&bag, &bytes[..bytes.len() / 2]).unwrap();
    let (code, _, stderr) = dscenet(&["train", "--dataset", p(&data), "--epochs", "1", "-o", p(&tmp.path().join("t"))]);
    assert_eq!(code, 3);
    assert!(stderr.contains("truncated"), "{stderr}");
}
