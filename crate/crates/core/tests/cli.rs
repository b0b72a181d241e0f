use std::path::Path;
use std::process::{Command, Output};

use vast::cli::{CHECKPOINT_FILE, CONFIG_FILE, DATASET_FILE, LOG_FILE};
use vast::harness::{ToyDataset, ToyTask};
use vast::tnsr;

fn vast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vast")).args(args).output().expect("run vast")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json_field(o: &Output, key: &str) -> u64 {
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).expect("json report");
    v[key].as_u64().unwrap()
}

#[test]
fn describe_reports_the_tiny_image_model() {
    let o = vast(&["describe", "--model", "ast-ti", "--resolution", "224", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let params = json_field(&o, "params") as f64;
    let macs = json_field(&o, "macs") as f64;
    assert!((params / 19e6 - 1.0).abs() <= 0.05, "{params}");
    assert!((macs / 3.9e9 - 1.0).abs() <= 0.15, "{macs}");
}

#[test]
fn describe_scales_with_frames_under_a_2d_stem() {
    let macs = |t: &str| json_field(&vast(&["describe", "--model", "vast-ti", "--frames", t, "--format", "json"]), "macs");
    let (m4, m8) = (macs("4"), macs("8"));
    let sixteen = vast(&["describe", "--model", "vast-ti", "--frames", "16", "--format", "json", "--views", "3"]);
    let m16 = json_field(&sixteen, "macs");
    // Affine in T: per-token work doubles, the pooled SE and head terms do not.
    assert_eq!(m16 - m8, 2 * (m8 - m4));
    assert!((m16 as f64 / (2 * m8) as f64 - 1.0).abs() < 1e-4);
    assert_eq!(json_field(&sixteen, "macs_all_views"), 3 * m16);
    assert!((m8 as f64 / (98e9 / 3.0) - 1.0).abs() <= 0.15);
    let doubled = vast(&["describe", "--model", "vast-ti", "--frames", "8", "--format", "json", "--two-flops-per-mac"]);
    assert_eq!(json_field(&doubled, "flops"), 2 * m8);
    assert_eq!(json_field(&vast(&["describe", "--model", "vast-ti", "--format", "json"]), "flops"), m8);
}

#[test]
fn describe_formats() {
    let csv = stdout(&vast(&["describe", "--model", "vast-micro", "--format", "csv"]));
    assert!(csv.starts_with("name,params,macs,aux_ops,output_shape\n"));
    assert!(csv.lines().last().unwrap().starts_with("total,"));
    let table = stdout(&vast(&["describe", "--model", "ast-s"]));
    assert!(table.contains("params 34.93M"), "{table}");
}

#[test]
fn describe_accepts_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    std::fs::write(&path, r#"{"variant": "tiny", "domain": "image", "height": 160, "width": 160}"#).unwrap();
    let o = vast(&["describe", "--config", path.to_str().unwrap(), "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["input_shape"], serde_json::json!([1, 160, 160, 3]));
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        &["describe", "--model", "ast-xl"][..],
        &["describe", "--model", "ast-ti", "--resolution", "100"],
        &["describe", "--model", "ast-ti", "--format", "yaml"],
        &["describe"],
        &["gradcheck", "--scope", "everything"],
        &["frobnicate"],
        &[],
    ] {
        let o = vast(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
        assert!(!stderr(&o).is_empty());
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"variant": "tiny", "colour": "blue"}"#).unwrap();
    let o = vast(&["describe", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));
}

#[test]
fn gradcheck_ops_passes_and_is_deterministic() {
    let a = vast(&["gradcheck", "--scope", "ops", "--seed", "3"]);
    assert_eq!(a.status.code(), Some(0), "{}", stdout(&a));
    let b = vast(&["gradcheck", "--scope", "ops", "--seed", "3"]);
    assert_eq!(stdout(&a), stdout(&b));
    assert!(stdout(&a).lines().any(|l| l.starts_with("PASS layer_norm")));
}

#[test]
fn gradcheck_flags_a_corrupted_vjp() {
    let o = vast(&["gradcheck", "--scope", "ops", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).lines().any(|l| l.starts_with("FAIL corrupted_square")));
}

fn train_toy(dir: &Path) {
    let o = vast(&[
        "train-toy",
        "--task",
        "static-pattern",
        "--samples",
        "48",
        "--epochs",
        "6",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn train_then_infer_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    train_toy(dir.path());
    for f in [CHECKPOINT_FILE, CONFIG_FILE, LOG_FILE, DATASET_FILE] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 1 + 2 * 6);

    let task = ToyTask { frames: 8, ..ToyTask::static_pattern(4, 48, 0) };
    let data = ToyDataset::load(dir.path().join(DATASET_FILE), task).unwrap();
    let model = vast::cli::load_model(&dir.path().join(CHECKPOINT_FILE), None).unwrap();
    let expected = vast::harness::predict_labels(&model, &data.train.inputs).unwrap();
    let i = (0..data.train.len()).find(|&i| expected[i] == data.train.labels[i]).expect("a fitted sample");

    let input = dir.path().join("x.tnsr");
    tnsr::write_tensor(&input, &data.train.sample(i).unwrap()).unwrap();
    let ckpt = dir.path().join(CHECKPOINT_FILE);
    let o = vast(&["infer", "--model-file", ckpt.to_str().unwrap(), "--input-tensor", input.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["argmax"][0].as_u64().unwrap() as usize, data.train.labels[i]);
    assert_eq!(v["logits"][0].as_array().unwrap().len(), 4);

    // Same checkpoint, same input: identical output text.
    let again = vast(&["infer", "--model-file", ckpt.to_str().unwrap(), "--input-tensor", input.to_str().unwrap()]);
    assert_eq!(o.stdout, again.stdout);

    // Wrong spatial size reports both shapes.
    let wrong = dir.path().join("wrong.tnsr");
    tnsr::write_tensor(&wrong, &vast::Tensor::zeros(&[8, 16, 32, 3]).unwrap()).unwrap();
    let o = vast(&["infer", "--model-file", ckpt.to_str().unwrap(), "--input-tensor", wrong.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("expected [1, 8, 32, 32, 3]") && err.contains("got [1, 8, 16, 32, 3]"), "{err}");

    // A truncated input names the offset where it broke.
    let bytes = std::fs::read(&input).unwrap();
    std::fs::write(&input, &bytes[..bytes.len() - 3]).unwrap();
    let o = vast(&["infer", "--model-file", ckpt.to_str().unwrap(), "--input-tensor", input.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("offset"), "{}", stderr(&o));

    // So does a checkpoint whose first record has a bad magic; the record
    // follows a 4-byte length and the 16-byte name "stem.conv.weight".
    let mut ck = std::fs::read(&ckpt).unwrap();
    assert_eq!(&ck[20..24], b"TNSR");
    ck[20] = b'X';
    std::fs::write(&ckpt, &ck).unwrap();
    let o = vast(&["infer", "--model-file", ckpt.to_str().unwrap(), "--input-tensor", wrong.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("offset 20"), "{}", stderr(&o));
}

#[test]
fn train_toy_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    train_toy(a.path());
    train_toy(b.path());
    for f in [CHECKPOINT_FILE, CONFIG_FILE, LOG_FILE, DATASET_FILE] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}
