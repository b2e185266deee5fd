use std::path::{Path, PathBuf};
use std::process::Command;

use cegan::data::{load_dataset, save_dataset, LabeledImageSet};
use cegan::experts::load_model;
use cegan::gan::load_checkpoint;
use cegan::harness::{sha256_hex, EvalRecord, RunManifest};
use cegan::Tensor;

const TINY: &str = r#"{
    "epochs": 2,
    "batch_size": 16,
    "synth": { "n_examples": 200 },
    "gan": { "iterations": 2, "batch_size": 4 }
}"#;

struct Out {
    code: i32,
    stderr: String,
}

fn cegan(args: &[&str]) -> Out {
    let o = Command::new(env!("CARGO_BIN_EXE_cegan")).args(args).output().expect("binary runs");
    Out {
        code: o.status.code().unwrap_or(-1),
        stderr: String::from_utf8_lossy(&o.stderr).into_owned(),
    }
}

/// Writes `json` as the config, then runs `cmd` against `out`.
fn run(dir: &Path, name: &str, json: &str, cmd: &str, extra: &[&str]) -> Out {
    let cfg = dir.join(format!("{name}.json"));
    std::fs::write(&cfg, json).unwrap();
    let out = dir.join("out");
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    cegan(&args)
}

fn with_variant(variant: &str) -> String {
    TINY.replacen('{', &format!("{{ \"variant\": \"{variant}\","), 1)
}

fn ok(o: Out) {
    assert_eq!(o.code, 0, "stderr: {}", o.stderr);
}

fn out(dir: &Path) -> PathBuf {
    dir.join("out")
}

#[test]
fn gen_data_is_six_two_two_and_byte_identical_on_rerun() {
    let d = tempfile::tempdir().unwrap();
    ok(run(d.path(), "c", "{}", "gen-data", &[]));
    let sizes: Vec<usize> = ["train", "val", "test"]
        .iter()
        .map(|s| load_dataset(&out(d.path()).join(format!("data/{s}.cegan"))).unwrap().len())
        .collect();
    assert_eq!(sizes, vec![3000, 1000, 1000]);
    let first = std::fs::read(out(d.path()).join("data/train.cegan")).unwrap();
    ok(run(d.path(), "c", "{}", "gen-data", &[]));
    assert_eq!(first, std::fs::read(out(d.path()).join("data/train.cegan")).unwrap());

    let manifest: RunManifest = serde_json::from_slice(&std::fs::read(out(d.path()).join("manifest.json")).unwrap()).unwrap();
    let stage = &manifest.stages["gen-data"];
    assert_eq!(stage.outputs.len(), 3);
    for (rel, digest) in &stage.outputs {
        assert_eq!(&sha256_hex(&std::fs::read(out(d.path()).join(rel)).unwrap()), digest);
    }

    ok(run(d.path(), "c", "{}", "gen-data", &["--seed", "9"]));
    assert_ne!(first, std::fs::read(out(d.path()).join("data/train.cegan")).unwrap());
}

#[test]
fn config_errors_exit_two_naming_the_field() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), "neg", r#"{"synth": {"positive_rates": [0.1, -0.2, 0.5, 0.2, 0.02]}}"#, "gen-data", &[]);
    assert_eq!(o.code, 2);
    assert!(o.stderr.contains("positive_rates"), "{}", o.stderr);
    let o = run(d.path(), "typo", r#"{"epoch": 3}"#, "train", &[]);
    assert_eq!(o.code, 2);
    assert!(o.stderr.contains("epoch"));
    let o = run(d.path(), "lr", r#"{"learning_rate": 0}"#, "train", &[]);
    assert_eq!(o.code, 2);
    assert_eq!(run(d.path(), "bad", "not json", "gen-data", &[]).code, 2);
}

#[test]
fn pretrain_writes_one_checkpoint_per_attribute() {
    let d = tempfile::tempdir().unwrap();
    let two = r#"{
        "synth": { "n_examples": 60, "positive_rates": [0.5, 0.3], "attribute_names": ["left", "right"] },
        "gan": { "iterations": 2, "batch_size": 4 }
    }"#;
    ok(run(d.path(), "c", two, "gen-data", &[]));
    ok(run(d.path(), "c", two, "pretrain", &[]));
    let mut files: Vec<String> = std::fs::read_dir(out(d.path()).join("checkpoints"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    assert_eq!(files, vec!["class0_left.ckpt", "class1_right.ckpt"]);
}

fn handmade(labels: Vec<u8>, k: usize) -> LabeledImageSet {
    let n = labels.len() / k;
    let mut rng = cegan::Rng::new(n as u64);
    let images = Tensor::from_vec([n, 3, 28, 24], (0..n * 3 * 28 * 24).map(|_| rng.uniform() as f32).collect()).unwrap();
    LabeledImageSet::new(images, labels, (0..k).map(|i| format!("attr{i}")).collect()).unwrap()
}

#[test]
fn attribute_without_positives_exits_three() {
    let d = tempfile::tempdir().unwrap();
    let labels: Vec<u8> = (0..20).flat_map(|i| [(i % 2) as u8, 0]).collect();
    save_dataset(&handmade(labels, 2), &out(d.path()).join("data/train.cegan")).unwrap();
    let o = run(d.path(), "c", TINY, "pretrain", &[]);
    assert_eq!(o.code, 3);
    assert!(o.stderr.contains("class 1") && o.stderr.contains("attr1"), "{}", o.stderr);
}

#[test]
fn missing_inputs_exit_three() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(d.path(), "c", TINY, "train", &[]).code, 3);
    ok(run(d.path(), "c", TINY, "gen-data", &[]));
    assert_eq!(run(d.path(), "c", &with_variant("cegan"), "train", &[]).code, 3);
    assert_eq!(run(d.path(), "c", TINY, "eval", &[]).code, 3);
    assert_eq!(run(d.path(), "c", TINY, "report", &[]).code, 3);
}

#[test]
fn fcegan_model_carries_checkpoint_tensors() {
    let d = tempfile::tempdir().unwrap();
    let cfg = with_variant("fcegan");
    ok(run(d.path(), "c", &cfg, "gen-data", &[]));
    ok(run(d.path(), "c", &cfg, "pretrain", &[]));
    ok(run(d.path(), "c", &cfg, "train", &[]));
    let saved = load_model(&out(d.path()).join("models/fcegan.model")).unwrap();
    let mut compared = 0;
    for (k, name) in saved.attribute_names.iter().enumerate() {
        let ckpt = load_checkpoint(&out(d.path()).join(format!("checkpoints/class{k}_{name}.ckpt"))).unwrap();
        for (pname, t) in saved.params.with_prefix(&format!("branch{k}.")) {
            if pname.ends_with("running_mean") || pname.ends_with("running_var") {
                continue;
            }
            let src = pname.split_once('.').unwrap().1;
            assert_eq!(ckpt.discriminator_params.get(src).unwrap(), t, "{pname}");
            assert!(!saved.params.is_trainable(pname));
            compared += 1;
        }
    }
    assert_eq!(compared, 5 * 12);
}

#[test]
fn cegan_run_logs_one_row_per_epoch_and_evaluates() {
    let d = tempfile::tempdir().unwrap();
    let cfg = with_variant("cegan");
    for cmd in ["gen-data", "pretrain", "train"] {
        ok(run(d.path(), "c", &cfg, cmd, &[]));
    }
    let log = std::fs::read_to_string(out(d.path()).join("logs/cegan_train.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 2);

    // evaluation reads only the model and the test split
    std::fs::remove_file(out(d.path()).join("data/train.cegan")).unwrap();
    std::fs::remove_file(out(d.path()).join("data/val.cegan")).unwrap();
    ok(run(d.path(), "c", &cfg, "eval", &[]));

    let rec: EvalRecord = serde_json::from_slice(&std::fs::read(out(d.path()).join("eval/cegan.json")).unwrap()).unwrap();
    let test = load_dataset(&out(d.path()).join("data/test.cegan")).unwrap();
    let preds = std::fs::read_to_string(out(d.path()).join("eval/cegan_predictions.csv")).unwrap();
    let k = test.num_attributes();
    let mut tp = vec![0u64; k];
    let mut fp = vec![0u64; k];
    let mut correct = vec![0u64; k];
    for (i, line) in preds.lines().skip(1).enumerate() {
        for (c, cell) in line.split(',').enumerate() {
            let pos = cell.parse::<f32>().unwrap() >= 0.5;
            let truth = test.label_row(i)[c] == 1;
            tp[c] += (pos && truth) as u64;
            fp[c] += (pos && !truth) as u64;
            correct[c] += (pos == truth) as u64;
        }
    }
    let counts = rec.report.counts.unwrap();
    for c in 0..k {
        assert_eq!((counts.classes[c].tp, counts.classes[c].fp), (tp[c], fp[c]));
        assert_eq!(rec.report.accuracy[c], correct[c] as f64 / test.len() as f64);
    }
    assert_eq!(rec.algorithm, "CE-GAN CNN");
}

#[test]
fn eval_on_incompatible_images_exits_four() {
    let d = tempfile::tempdir().unwrap();
    ok(run(d.path(), "c", TINY, "gen-data", &[]));
    ok(run(d.path(), "c", TINY, "train", &[]));
    let small = r#"{"synth": {"image_h": 20, "n_examples": 50}, "paths": {"data_dir": "small"}}"#;
    ok(run(d.path(), "s", small, "gen-data", &[]));
    let o = run(d.path(), "e", r#"{"paths": {"eval_dataset": "small/test.cegan"}}"#, "eval", &[]);
    assert_eq!(o.code, 4, "{}", o.stderr);
}

#[test]
fn costsens_with_equal_frequencies_matches_baseline() {
    let d = tempfile::tempdir().unwrap();
    let rows = |n: usize| -> Vec<u8> { (0..n).flat_map(|i| if i % 3 == 0 { [1, 1] } else { [0, 0] }).collect() };
    save_dataset(&handmade(rows(48), 2), &out(d.path()).join("data/train.cegan")).unwrap();
    save_dataset(&handmade(rows(12), 2), &out(d.path()).join("data/val.cegan")).unwrap();
    ok(run(d.path(), "b", &with_variant("baseline"), "train", &[]));
    ok(run(d.path(), "s", &with_variant("costsens"), "train", &[]));
    let a = load_model(&out(d.path()).join("models/baseline.model")).unwrap();
    let b = load_model(&out(d.path()).join("models/costsens.model")).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(
        std::fs::read(out(d.path()).join("logs/baseline_train.csv")).unwrap(),
        std::fs::read(out(d.path()).join("logs/costsens_train.csv")).unwrap()
    );
}

#[test]
fn sweep_rejects_bad_range_before_training() {
    let d = tempfile::tempdir().unwrap();
    ok(run(d.path(), "c", TINY, "gen-data", &[]));
    let o = run(d.path(), "c", r#"{"sweep_ranges": [[6, 6], [5, 8]]}"#, "sweep", &[]);
    assert_eq!(o.code, 2, "{}", o.stderr);
    assert!(!out(d.path()).join("sweep").exists());
}

#[test]
fn report_renders_reference_fixture_and_rejects_mixed_attributes() {
    let d = tempfile::tempdir().unwrap();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/reference_tables.json");
    let cfg = format!(r#"{{"paths": {{"eval_outputs": ["{}"]}}}}"#, fixture.display());
    ok(run(d.path(), "r", &cfg, "report", &[]));
    let csv = std::fs::read_to_string(out(d.path()).join("report/accuracy.csv")).unwrap();
    let overall: Vec<&str> = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    // macro means of the printed per-class values
    assert_eq!(overall, vec!["78.60", "79.90", "87.13", "87.38", "82.99"]);
    let prec = std::fs::read_to_string(out(d.path()).join("report/precision.txt")).unwrap();
    assert_eq!(prec.lines().count(), 2 + 5);

    ok(run(d.path(), "c", TINY, "gen-data", &[]));
    ok(run(d.path(), "c", TINY, "train", &[]));
    ok(run(d.path(), "c", TINY, "eval", &[]));
    ok(run(d.path(), "one", TINY, "report", &[]));
    let acc = std::fs::read_to_string(out(d.path()).join("report/accuracy.csv")).unwrap();
    assert_eq!(acc.lines().count(), 2);

    let other = d.path().join("other.json");
    std::fs::write(
        &other,
        r#"{"attribute_names": ["x", "y"], "rows": [{"algorithm": "a", "accuracy": [50, 60], "precision": [10, 20]}]}"#,
    )
    .unwrap();
    let mixed = format!(r#"{{"paths": {{"eval_outputs": ["eval/baseline.json", "{}"]}}}}"#, other.display());
    assert_eq!(run(d.path(), "m", &mixed, "report", &[]).code, 4);
}
