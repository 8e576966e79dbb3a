use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use misd_core::data_io::{read_report, read_scores};
use misd_core::metrics::{full_report, MisDReport, REPORT_FIELDS};

fn misd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_misd")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = misd(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_synth(dir: &Path, seed: &str) -> PathBuf {
    let out = dir.join(format!("data-{seed}"));
    ok(&["gen-synth", "--classes", "3", "--per-class", "6", "--crops", "4", "--seed", seed, "--out", s(&out)]);
    out
}

const QUICK: [&str; 4] = ["--epochs", "3", "--crops", "4"];

fn train(data: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec!["train", "--data", s(data), "--shots", "4", "--crops", "4", "--out", s(out)];
    if !extra.contains(&"--epochs") {
        args.extend(["--epochs", "3"]);
    }
    args.extend(extra);
    ok(&args);
}

fn read(p: PathBuf) -> Vec<u8> {
    std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn gen_synth_defaults_and_repeatability() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["gen-synth", "--out", s(&a)]);
    ok(&["gen-synth", "--out", s(&b)]);
    for f in ["train.misdimg", "val.misdimg", "train.misdemb", "val.misdemb", "backbone.json"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f} differs");
    }
    let train = misd_core::data_io::read_images(&a.join("train.misdimg")).unwrap();
    assert_eq!((train.len(), train.num_classes()), (200, 10));
    let emb = misd_core::data_io::read_embeddings(&a.join("train.misdemb")).unwrap();
    assert_eq!((emb.len(), emb.k(), emb.dim()), (200, 8, 32));
    let manifest: serde_json::Value = serde_json::from_slice(&read(a.join("manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "gen-synth");
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 6);

    let c = dir.path().join("c");
    let out = misd(&["gen-synth", "--classes", "1", "--out", s(&c)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("degenerate"));
    assert!(!c.exists());
}

#[test]
fn train_eval_and_metrics_agree() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path(), "2");
    let (m1, m2) = (dir.path().join("m1"), dir.path().join("m2"));
    train(&data, &m1, &[]);
    train(&data, &m2, &[]);
    for f in ["model.json", "loss_trace.csv"] {
        assert_eq!(read(m1.join(f)), read(m2.join(f)));
    }
    let trace = String::from_utf8(read(m1.join("loss_trace.csv"))).unwrap();
    assert_eq!(trace.lines().next().unwrap(), "epoch,lr,ce,neg,orth,total");
    assert_eq!(trace.lines().count(), 4);

    let (r1, r2) = (dir.path().join("e1/report.json"), dir.path().join("e2/report.json"));
    let model = m1.join("model.json");
    ok(&["eval", "--data", s(&data), "--model", s(&model), "--report", s(&r1)]);
    ok(&["eval", "--data", s(&data), "--model", s(&model), "--report", s(&r2)]);
    assert_eq!(read(r1.clone()), read(r2.clone()));
    assert_eq!(read(dir.path().join("e1/scores.csv")), read(dir.path().join("e2/scores.csv")));

    // eval on the val embedding file gives the same report as on the images
    let r3 = dir.path().join("e3/report.json");
    ok(&["eval", "--data", s(&data.join("val.misdemb")), "--model", s(&model), "--report", s(&r3)]);
    let (a, b) = (read_report(&r1).unwrap(), read_report(&r3).unwrap());
    for (x, y) in a.values().iter().zip(b.values()) {
        assert!((x.unwrap() - y.unwrap()).abs() < 1e-6);
    }

    let scores = dir.path().join("e1/scores.csv");
    let recomputed = dir.path().join("metrics.json");
    let stdout = ok(&["metrics", "--scores", s(&scores), "--report", s(&recomputed)]);
    let parsed: MisDReport = serde_json::from_str(&stdout).unwrap();
    let direct = {
        let f = read_scores(&scores).unwrap();
        full_report(&f.predictions, f.kind).unwrap()
    };
    for ((x, y), z) in a.values().iter().zip(parsed.values()).zip(direct.values()) {
        let (x, y, z) = (x.unwrap(), y.unwrap(), z.unwrap());
        assert!((x - y).abs() < 1e-9 && (x - z).abs() < 1e-9);
    }
}

#[test]
fn zero_epochs_and_ce_only() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path(), "3");
    let out = dir.path().join("m0");
    train(&data, &out, &["--epochs", "0"]);
    let model = misd_core::trainer::read_model(&out.join("model.json")).unwrap();
    let backbone = misd_core::trainer::read_backbone(&data.join("backbone.json")).unwrap();
    let init = misd_core::trainer::init_bank(&model.bank.class_names, &model.config, &backbone).unwrap();
    assert_eq!(model.bank, init);

    let ce = dir.path().join("ce");
    train(&data, &ce, &["--lambda-neg", "0", "--lambda-orth", "0"]);
    let model = misd_core::trainer::read_model(&ce.join("model.json")).unwrap();
    assert_eq!(model.bank.negative_contexts, init.negative_contexts);

    // the embedding file trains too
    let emb = dir.path().join("emb");
    let file = data.join("train.misdemb");
    ok(&["train", "--data", s(&file), "--shots", "2", "--epochs", "2", "--out", s(&emb)]);
    assert!(emb.join("model.json").is_file());
}

#[test]
fn metrics_on_hand_files() {
    let dir = tempfile::tempdir().unwrap();
    let worked = dir.path().join("worked.csv");
    std::fs::write(&worked, "confidence,predicted,label\n0.9,0,0\n0.8,1,0\n0.7,2,2\n0.6,1,1\n").unwrap();
    let report: MisDReport = serde_json::from_str(&ok(&["metrics", "--scores", s(&worked)])).unwrap();
    let r = |v: Option<f64>| (v.unwrap() * 100.0).round() / 100.0;
    assert_eq!(
        [r(report.acc), r(report.fpr95), r(report.aurc), r(report.e_aurc), r(report.auroc), r(report.aupr_success), r(report.aupr_error)],
        [75.0, 100.0, 270.83, 208.33, 33.33, 80.56, 33.33]
    );

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let out = misd(&["metrics", "--scores", s(&empty)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "confidence,predicted,label\n0.5,a,b\n").unwrap();
    let out = misd(&["metrics", "--scores", s(&bad)]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let binary = dir.path().join("binary.csv");
    std::fs::write(&binary, "confidence,correct\n0.9,1\n0.8,0\n0.7,1\n0.6,1\n").unwrap();
    let report: MisDReport = serde_json::from_str(&ok(&["metrics", "--scores", s(&binary)])).unwrap();
    assert!(report.auroc.is_some() && report.fpr95.is_some());
    assert!(report.acc.is_none() && report.aurc.is_none());
}

#[test]
fn sweep_aggregates_its_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path(), "4");
    let run = |out: &Path, jobs: &str| {
        let mut args = vec!["sweep", "--data", s(&data), "--shots", "1,2", "--seeds", "2", "--jobs", jobs, "--out", s(out)];
        args.extend(QUICK);
        ok(&args);
    };
    let (a, b) = (dir.path().join("s1"), dir.path().join("s2"));
    run(&a, "1");
    run(&b, "2");
    assert_eq!(read(a.join("sweep.csv")), read(b.join("sweep.csv")));
    assert_eq!(read(a.join("runs.csv")), read(b.join("runs.csv")));

    let runs = String::from_utf8(read(a.join("runs.csv"))).unwrap();
    let table = String::from_utf8(read(a.join("sweep.csv"))).unwrap();
    assert_eq!(runs.lines().count(), 5);
    assert_eq!(table.lines().count(), 3);
    let rows: Vec<Vec<String>> = runs.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    for line in table.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let shots = cols[0];
        assert_eq!(cols[1], "2");
        let members: Vec<&Vec<String>> = rows.iter().filter(|r| r[0] == shots).collect();
        assert_eq!(members.len(), 2);
        for f in 0..REPORT_FIELDS.len() {
            let vals: Vec<f64> = members.iter().map(|r| r[2 + f].parse().unwrap()).collect();
            let mean = vals.iter().sum::<f64>() / 2.0;
            let std = ((vals[0] - mean).powi(2) + (vals[1] - mean).powi(2)).sqrt();
            assert!((cols[2 + 2 * f].parse::<f64>().unwrap() - mean).abs() < 1e-6);
            assert!((cols[3 + 2 * f].parse::<f64>().unwrap() - std).abs() < 1e-6);
        }
    }
    // each run equals a standalone train + eval with the same flags
    let m = dir.path().join("m");
    let mut args = vec!["train", "--data", s(&data), "--shots", "2", "--seed", "1", "--out", s(&m)];
    args.extend(QUICK);
    ok(&args);
    let rep = dir.path().join("r/report.json");
    ok(&["eval", "--data", s(&data), "--model", s(&m.join("model.json")), "--report", s(&rep)]);
    let standalone = read_report(&rep).unwrap();
    let row = rows.iter().find(|r| r[0] == "2" && r[1] == "1").unwrap();
    for (f, v) in standalone.values().iter().enumerate() {
        assert_eq!(row[2 + f], v.unwrap().to_string());
    }
}

#[test]
fn gradcheck_command() {
    let out = ok(&["gradcheck"]);
    assert!(out.contains("over 100 trials"));
    let failed = misd(&["gradcheck", "--trials", "2", "--perturb", "0.01"]);
    assert!(!failed.status.success());
    assert!(String::from_utf8_lossy(&failed.stderr).contains("gradient check failed"));
    let zero = misd(&["gradcheck", "--trials", "0"]);
    assert!(!zero.status.success());
    assert!(!misd(&["train"]).status.success());
}
