use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn msmi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msmi")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = msmi(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json_file(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SUBCOMMANDS: &[&[&str]] = &[
    &[],
    &["gen"],
    &["gen", "gaussian"],
    &["gen", "latent"],
    &["gen", "correlated"],
    &["estimate"],
    &["estimate", "msmi-neural"],
    &["estimate", "msmi-generalized"],
    &["estimate", "msmi-lipo"],
    &["estimate", "asmi"],
    &["estimate", "ksg"],
    &["estimate", "kl-entropy"],
    &["estimate", "msh-lipo"],
    &["gaussian"],
    &["gaussian", "msmi"],
    &["gaussian", "cca"],
    &["gaussian", "mi"],
    &["gaussian", "msh"],
    &["study"],
    &["study", "auc"],
    &["study", "convergence"],
    &["study", "timing"],
    &["study", "theory"],
];

#[test]
fn help_documents_every_flag() {
    for path in SUBCOMMANDS {
        let mut args = path.to_vec();
        args.push("--help");
        let out = ok(&args);
        let text = String::from_utf8(out.stdout).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let mut in_options = false;
        for (i, line) in lines.iter().enumerate() {
            if line.ends_with(':') && !line.starts_with(' ') {
                in_options = *line == "Options:";
                continue;
            }
            let trimmed = line.trim_start();
            if in_options && trimmed.starts_with('-') {
                // The description follows after two spaces or on the next,
                // deeper-indented line.
                let inline = trimmed.split("  ").filter(|s| !s.trim().is_empty()).count() >= 2;
                let indent = line.len() - trimmed.len();
                let below = lines.get(i + 1).is_some_and(|next| {
                    let t = next.trim_start();
                    !t.is_empty() && !t.starts_with('-') && next.len() - t.len() > indent
                });
                assert!(inline || below, "{path:?}: undocumented flag line `{line}`");
            }
        }
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(msmi(&[]).status.code(), Some(1));
    assert_eq!(msmi(&["estimate", "bogus"]).status.code(), Some(1));
    assert_eq!(msmi(&["gen", "correlated", "--n", "10", "--rho", "0.5", "--frobnicate"]).status.code(), Some(1));
    let out = msmi(&["gen", "correlated", "--n", "ten", "--rho", "0.5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let out = msmi(&["estimate", "ksg", "--input", p(&missing)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.csv"));
    assert_eq!(msmi(&["gen", "correlated", "--n", "10", "--rho", "1.5"]).status.code(), Some(2));
}

#[test]
fn gen_is_deterministic_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        ok(&["gen", "latent", "--d", "10", "--dprime", "4", "--n", "1000", "--dependent", "--seed", "3", "--out", p(path)]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let data = msmi::datagen::PairedDataset::load(&a).unwrap();
    assert_eq!((data.n(), data.dx(), data.dy()), (1000, 10, 10));
    assert_eq!(data.provenance().seed, Some(3));

    // Re-serializing what was read reproduces the file byte for byte.
    let mut again = Vec::new();
    data.write_csv(&mut again).unwrap();
    assert_eq!(again, std::fs::read(&a).unwrap());

    let other = dir.path().join("c.csv");
    ok(&["gen", "latent", "--d", "10", "--dprime", "4", "--n", "1000", "--dependent", "--seed", "4", "--out", p(&other)]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&other).unwrap());
}

#[test]
fn gaussian_msmi_prints_closed_form_and_cca() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    std::fs::write(
        &model,
        r#"{"mean_x":[0,0],"mean_y":[0,0],"cov_x":[[1,0],[0,1]],"cov_y":[[1,0],[0,1]],"cross_cov":[[0.9,0],[0,0.5]]}"#,
    )
    .unwrap();
    let out = ok(&["gaussian", "msmi", "--model", p(&model), "--k", "2"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["value_nats"].as_f64().unwrap() - 0.974_207).abs() < 1e-6);
    assert_eq!(v["schema"], 1);
    assert_eq!(v["cca"]["a"].as_array().unwrap().len(), 2);

    let data = dir.path().join("d.csv");
    ok(&["gen", "gaussian", "--coherence", "0.9,0.5", "--n", "20000", "--out", p(&data)]);
    let out = ok(&["gaussian", "msmi", "--input", p(&data), "--k", "2"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["value_nats"].as_f64().unwrap() - 0.974_207).abs() < 0.03);

    let out = ok(&["gaussian", "msh", "--ball-radius", "1", "--k", "1"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["value_nats"].as_f64().unwrap() - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn estimators_emit_schema_one_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    ok(&["gen", "correlated", "--n", "800", "--rho", "0.8", "--dim", "3", "--seed", "2", "--out", p(&data)]);
    let report = dir.path().join("r.json");
    let runs: &[&[&str]] = &[
        &["estimate", "msmi-lipo", "--k", "1", "--max-evals", "1500"],
        &["estimate", "asmi", "--num-slices", "16"],
        &["estimate", "ksg"],
        &["estimate", "kl-entropy", "--of", "y"],
        &["estimate", "msh-lipo", "--max-evals", "50"],
        &["estimate", "msmi-neural", "--epochs", "1"],
        &["estimate", "msmi-generalized", "--epochs", "1", "--slicer-hidden", "8"],
    ];
    for run in runs {
        let mut args = run.to_vec();
        args.extend(["--input", p(&data), "--out", p(&report)]);
        ok(&args);
        let v = json_file(&report);
        assert_eq!(v["schema"], 1, "{run:?}");
        assert!(v["value_nats"].as_f64().unwrap().is_finite(), "{run:?}");
        assert!(v["wall_time_s"].is_number());
        if let Some(trace) = v.get("trace") {
            assert!(trace["values"].as_array().unwrap().len() <= 1000);
        }
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    ok(&["gen", "correlated", "--n", "300", "--rho", "0.5", "--out", p(&data)]);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"num_slices": 4, "seed": 9}"#).unwrap();
    let report = dir.path().join("r.json");
    ok(&["estimate", "asmi", "--input", p(&data), "--config", p(&cfg), "--out", p(&report)]);
    let v = json_file(&report);
    assert_eq!(v["metadata"]["config"]["num_slices"], 4);
    assert_eq!(v["seed"], 9);
    ok(&["estimate", "asmi", "--input", p(&data), "--config", p(&cfg), "--num-slices", "6", "--seed", "1", "--out", p(&report)]);
    let v = json_file(&report);
    assert_eq!(v["metadata"]["config"]["num_slices"], 6);
    assert_eq!(v["seed"], 1);

    std::fs::write(&cfg, r#"{"num_slicez": 4}"#).unwrap();
    assert_eq!(msmi(&["estimate", "asmi", "--input", p(&data), "--config", p(&cfg)]).status.code(), Some(1));
}

#[test]
fn neural_estimate_on_generated_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    ok(&["gen", "correlated", "--n", "10000", "--rho", "0.5", "--seed", "1", "--out", p(&data)]);
    let report = dir.path().join("report.json");
    let ckpt = dir.path().join("ckpt.json");
    ok(&["estimate", "msmi-neural", "--input", p(&data), "--k", "1", "--seed", "7", "--out", p(&report), "--checkpoint", p(&ckpt)]);
    let v = json_file(&report);
    let value = v["value_nats"].as_f64().unwrap();
    assert!((0.10..=0.18).contains(&value), "{value}");
    assert_eq!(v["train_history"].as_array().unwrap().len(), 60);
    assert!(msmi::neural::Checkpoint::load(&ckpt).is_ok());
}

#[test]
fn study_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("auc.csv");
    ok(&[
        "study", "auc", "--method", "asmi-mc", "--d", "4", "--dprime", "2", "--n", "40,80", "--trials", "10",
        "--num-slices", "8", "--out", p(&out),
    ]);
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with('#'));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 1 + 4);
    let mut json_path = out.into_os_string();
    json_path.push(".json");
    let v = json_file(Path::new(&json_path));
    assert_eq!(v["trials"].as_array().unwrap().len(), 40);
    assert_eq!(v["metadata"]["config"]["trials_per_class"], 10);
    assert_eq!(msmi(&["study", "auc", "--trials", "5"]).status.code(), Some(2));
}
