use std::path::Path;
use std::process::Command;

fn seqkan(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_seqkan")).args(args).output().unwrap();
    assert!(out.status.success(), "seqkan {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_ingest_train_score() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    seqkan(&["synth", "--loans", "1500", "--seed", "3", "--out", path(d)]);
    let (p19, p20) = (d.join("synthetic_2019.txt"), d.join("synthetic_2020.txt"));
    assert!(p19.exists() && p20.exists());

    let (train, test) = (d.join("train.bin"), d.join("test.bin"));
    seqkan(&["ingest", "--input", path(&p19), "--balance", "--output", path(&train)]);
    seqkan(&["ingest", "--input", path(&p20), "--window", "15,0,3", "--output", path(&test)]);
    let sidecar: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("train.bin.json")).unwrap()).unwrap();
    assert_eq!(sidecar["dim"], 9);
    assert_eq!(sidecar["positives"].as_u64().unwrap() * 2, sidecar["samples"].as_u64().unwrap());

    let run = d.join("run");
    seqkan(&["train", "--samples", path(&train), "--epochs", "2", "--out", path(&run)]);
    for f in ["model.json", "standardizer.json", "trace.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let trace = std::fs::read_to_string(run.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().next().unwrap(), "epoch,train_loss,val_loss,elapsed_ms");
    assert_eq!(trace.lines().count(), 3);

    let scored = d.join("scored");
    seqkan(&["score", "--model", path(&run.join("model.json")), "--samples", path(&test), "--out", path(&scored)]);
    let scores = std::fs::read_to_string(scored.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().next().unwrap(), "loan_id,label,score");
    let metrics: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(scored.join("metrics.json")).unwrap()).unwrap();
    let auc = metrics["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
}

#[test]
fn gradcheck_passes_on_default_seeds() {
    seqkan(&["gradcheck", "--models", "GRU-KAN,LSTM-KAN", "--seeds", "2"]);
}

#[test]
fn sweep_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    seqkan(&[
        "interval-sweep", "--sweep", "0,3", "--models", "GRU", "--trials", "2", "--epochs", "1", "--loans", "800", "--seed", "5",
        "--out", path(d),
    ]);
    for f in ["trials.csv", "timings.csv", "aggregate.csv", "plot_auc.csv", "manifest.json"] {
        assert!(d.join(f).exists(), "{f}");
    }
    let trials = std::fs::read_to_string(d.join("trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 5);
}
