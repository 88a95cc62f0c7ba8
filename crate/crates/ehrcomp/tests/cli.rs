use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ehrcomp::manifest::RunManifest;
use serde_json::Value;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/small.toml")
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ehrcomp"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn ehrcomp")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_value(json(dir.join("manifest.json"))).unwrap()
}

fn gen(dir: &Path, out: &str) {
    ok(dir, &["gen", "--config", fixture().to_str().unwrap(), "--seed", "7", "--out", out]);
}

#[test]
fn gen_twice_gives_identical_digests() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "a");
    gen(tmp.path(), "b");
    let (a, b) = (manifest(&tmp.path().join("a")), manifest(&tmp.path().join("b")));
    assert!(!a.outputs.is_empty());
    assert_eq!(a.outputs, b.outputs);
    assert_eq!(a.seed, Some(7));
}

#[test]
fn seed_flag_changes_output() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "a");
    ok(tmp.path(), &["gen", "--config", fixture().to_str().unwrap(), "--seed", "8", "--out", "b"]);
    assert_ne!(manifest(&tmp.path().join("a")).outputs, manifest(&tmp.path().join("b")).outputs);
}

#[test]
fn missing_config_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &["gen", "--config", "absent.toml", "--out", "c"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.toml"));
    assert!(!tmp.path().join("c").exists());
}

#[test]
fn corpus_audited_against_itself_is_all_correct() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "c");
    ok(tmp.path(), &["audit", "--real", "c", "--generated", "c", "--out", "a"]);
    let report = json(tmp.path().join("a/audit.json"));
    for key in ["rce", "rue", "rcs"] {
        assert_eq!(report[key], 1.0, "{key}");
    }
    assert!(report["events"].as_u64().unwrap() > 0);

    // the same through serialized streams without labels
    ok(tmp.path(), &["serialize", "c", "--out", "s"]);
    let flat = std::fs::read_to_string(tmp.path().join("s/streams_flat.jsonl")).unwrap();
    let unlabeled: String = flat
        .lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            let obj = v.as_object_mut().unwrap();
            obj.remove("types");
            obj.remove("places");
            obj.remove("event_bounds");
            format!("{v}\n")
        })
        .collect();
    std::fs::write(tmp.path().join("plain.jsonl"), unlabeled).unwrap();
    ok(
        tmp.path(),
        &["audit", "--real", "c", "--generated", "plain.jsonl", "--vocab", "s/vocab.txt", "--out", "b"],
    );
    let report = json(tmp.path().join("b/audit.json"));
    for key in ["rce", "rue", "rcs"] {
        assert_eq!(report[key], 1.0, "{key}");
    }
}

#[test]
fn serialize_reports_exact_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "c");
    ok(tmp.path(), &["serialize", "c", "--out", "s", "--split", "0.5:0.25:0.25", "--seed", "3"]);
    let report = json(tmp.path().join("s/roundtrip.json"));
    assert_eq!(report["exact"], true);
    assert!(report["events_compared"].as_u64().unwrap() > 0);
    let lines = |name: &str| {
        std::fs::read_to_string(tmp.path().join("s").join(name))
            .unwrap()
            .lines()
            .count()
    };
    assert_eq!(lines("streams_flat.jsonl"), 24);
    assert_eq!(
        lines("streams_flat_train.jsonl") + lines("streams_flat_valid.jsonl") + lines("streams_flat_test.jsonl"),
        24
    );
    assert_eq!(lines("streams_flat_train.jsonl"), 12);
    let m = manifest(&tmp.path().join("s"));
    assert!(m.inputs.contains_key("c"));
    assert!(m.outputs.contains_key("vocab.txt"));
}

#[test]
fn cnn_plan_matches_reference_table() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(tmp.path(), &["plan", "--backbone", "cnn", "--in", "8192x256", "--out", "64x8", "--dir", "p"]);
    let csv = std::fs::read_to_string(tmp.path().join("p/plan.csv")).unwrap();
    let expected = "layer,type,output\n\
                    1,Lnd,\"(4096,128)\"\n\
                    2,Lnd,\"(2048,64)\"\n\
                    3,Lnd,\"(1024,32)\"\n\
                    4,Lnd,\"(512,16)\"\n\
                    5,Ln,\"(256,16)\"\n\
                    6,Lnd,\"(128,8)\"\n\
                    7,Ln,\"(64,8)\"\n";
    assert_eq!(csv, expected);
    assert!(stdout.contains("compression rate 4096"));
    let doc = json(tmp.path().join("p/plan.json"));
    assert_eq!(doc["decoder"]["output"], serde_json::json!({"len": 8192, "width": 256}));
}

#[test]
fn transformer_plan_matches_reference_table() {
    let tmp = tempfile::tempdir().unwrap();
    ok(
        tmp.path(),
        &["plan", "--backbone", "transformer", "--in", "8192x256", "--out", "64x8", "--layers", "4", "--dir", "p"],
    );
    let csv = std::fs::read_to_string(tmp.path().join("p/plan.csv")).unwrap();
    let expected = "layer,type,output\n\
                    1,Ld1(/4),\"(8192,64)\"\n\
                    2,Ld2(/2),\"(8192,32)\"\n\
                    3,Ld2(/2),\"(8192,16)\"\n\
                    4,Ld2(/2),\"(8192,8)\"\n\
                    5,Pool(->64),\"(64,8)\"\n";
    assert_eq!(csv, expected);
}

#[test]
fn plan_file_reanalyzes() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["plan", "--in", "8192x256", "--out", "64x8", "--dir", "p"]);
    ok(tmp.path(), &["analyze", "p/plan.json", "--out", "a"]);
    let plan = json(tmp.path().join("p/plan.json"));
    let report = json(tmp.path().join("a/analysis.json"));
    assert_eq!(report["valid"], true);
    assert_eq!(report["analysis"], plan["encoder_analysis"]);

    // a broken plan is reported and rejected
    let mut encoder = plan["encoder"].clone();
    encoder["output"] = serde_json::json!({"len": 32, "width": 8});
    std::fs::write(tmp.path().join("bad.json"), encoder.to_string()).unwrap();
    let out = run(tmp.path(), &["analyze", "bad.json", "--out", "b"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(tmp.path().join("b/analysis.json"))["valid"], false);
}

#[test]
fn infeasible_plan_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [
        &["plan", "--in", "100x256", "--out", "64x8"][..],
        &["plan", "--in", "64x8", "--out", "128x8"][..],
    ] {
        assert_eq!(run(tmp.path(), args).status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn hierarchical_plan_writes_both_stages() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(tmp.path(), &["plan", "--hier", "256x128x256", "--latent", "16x128", "--dir", "h"]);
    assert!(stdout.contains("compression rate 4096"), "{stdout}");
    let csv = std::fs::read_to_string(tmp.path().join("h/plan.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("text,")));
    assert!(csv.lines().any(|l| l.starts_with("event,")));
    assert!(csv.trim_end().ends_with("\"(16,128)\""));
}

#[test]
fn grid_has_five_specs_per_size() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["plan", "--grid", "256:4096", "--dir", "g"]);
    let mut reader = csv::Reader::from_path(tmp.path().join("g/grid.csv")).unwrap();
    let rows: Vec<ehrcomp::cli::GridRow> = reader.deserialize().map(Result::unwrap).collect();
    // 5 sizes x 5 shapes x 2 backbones x 2 inputs
    assert_eq!(rows.len(), 100);
    for l in [256, 512, 1024, 2048, 4096] {
        let shapes: std::collections::BTreeSet<_> =
            rows.iter().filter(|r| r.latent_size == l).map(|r| (r.temporal, r.channels)).collect();
        assert_eq!(shapes.len(), 5, "l = {l}");
    }
}

#[test]
fn privacy_on_disjoint_data_is_zero_at_threshold_zero() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "c");
    ok(tmp.path(), &["gen", "--config", fixture().to_str().unwrap(), "--seed", "99", "--out", "g"]);
    ok(tmp.path(), &["serialize", "c", "--out", "s", "--split", "0.5:0:0.5"]);
    ok(tmp.path(), &["serialize", "g", "--vocab", "s/vocab.txt", "--out", "t"]);
    ok(
        tmp.path(),
        &[
            "privacy",
            "--train",
            "s/streams_flat_train.jsonl",
            "--heldout",
            "s/streams_flat_test.jsonl",
            "--synthetic",
            "t/streams_flat.jsonl",
            "--n-r",
            "10",
            "--threshold",
            "0",
            "--threshold",
            "1",
            "--out",
            "p",
        ],
    );
    let report = json(tmp.path().join("p/privacy.json"));
    let at_zero = &report["results"][0];
    assert_eq!(at_zero["threshold"], 0.0);
    assert_eq!(at_zero["flagged_count"], 0);
    assert_eq!(at_zero["precision"], 0.0);
    assert_eq!(at_zero["recall"], 0.0);
    let at_one = &report["results"][1];
    assert_eq!(at_one["recall"], 1.0);
    assert_eq!(at_one["precision"], 0.5);
    let curve = std::fs::read_to_string(tmp.path().join("p/privacy_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3);
}

#[test]
fn quantize_rejects_channels_not_divisible_by_four() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("z.json"), "[[0.1,0.2,0.3,0.4,0.5,0.6]]").unwrap();
    let out = run(tmp.path(), &["quantize", "--latent", "z.json", "--out", "q"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("divisible"));
}

#[test]
fn quantize_is_reproducible_from_seed() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("z.json"), "[[0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8],[1,0,1,0,-1,0,-1,0]]").unwrap();
    for out in ["a", "b"] {
        ok(
            tmp.path(),
            &["quantize", "--latent", "z.json", "--codes", "8", "--ema-steps", "2", "--seed", "5", "--out", out],
        );
    }
    assert_eq!(manifest(&tmp.path().join("a")).outputs, manifest(&tmp.path().join("b")).outputs);
    let report = json(tmp.path().join("a/quantize.json"));
    assert_eq!(report["indices"].as_array().unwrap().len(), 2);
}

#[test]
fn metrics_commands_report() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "c");
    ok(tmp.path(), &["serialize", "c", "--out", "s"]);
    ok(
        tmp.path(),
        &["metrics", "accuracy", "--reference", "s/streams_flat.jsonl", "--hypothesis", "s/streams_flat.jsonl", "--out", "m"],
    );
    assert_eq!(json(tmp.path().join("m/accuracy.json"))["mean"], 1.0);

    std::fs::write(tmp.path().join("scores.csv"), "score,label\n0.9,1\n0.8,0\n0.7,1\n0.1,0\n").unwrap();
    ok(tmp.path(), &["metrics", "auroc", "--scores", "scores.csv", "--out", "r"]);
    assert_eq!(json(tmp.path().join("r/auroc.json"))["auroc"], 0.75);
}

#[test]
fn load_summarizes_cohort() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "c");
    ok(tmp.path(), &["load", "c", "--out", "l"]);
    let s = json(tmp.path().join("l/summary.json"));
    assert_eq!(s["patients"], 24);
    assert_eq!(s["stats"]["patients_kept"], 24);
    ok(tmp.path(), &["load", "c", "--min-events", "1000", "--out", "m"]);
    assert_eq!(json(tmp.path().join("m/summary.json"))["patients"], 0);
}

#[test]
fn commands_leave_inputs_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "c");
    let before = ehrcomp::fsio::digest_path(&tmp.path().join("c")).unwrap();
    ok(tmp.path(), &["serialize", "c", "--out", "s"]);
    ok(tmp.path(), &["audit", "--real", "c", "--generated", "c", "--out", "a"]);
    assert_eq!(ehrcomp::fsio::digest_path(&tmp.path().join("c")).unwrap(), before);
}
