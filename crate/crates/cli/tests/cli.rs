use std::fs;
use std::path::Path;
use std::process::{Command, Output};

/// A learnable MNIST stand-in: class `c` lights up rows `2c..2c+3`.
fn write_idx(dir: &Path, prefix: &str, n: usize, seed: u32) {
    let mut images = vec![0, 0, 8, 3];
    for d in [n as u32, 28, 28] {
        images.extend(d.to_be_bytes());
    }
    let mut labels = vec![0, 0, 8, 1];
    labels.extend((n as u32).to_be_bytes());
    let mut state = seed;
    for i in 0..n {
        let c = i % 10;
        labels.push(c as u8);
        for r in 0..28 {
            for _ in 0..28 {
                state = state.wrapping_mul(1_664_525).wrapping_add(1_013_904_223);
                let noise = (state >> 27) as u8;
                images.push(if r >= 2 * c && r < 2 * c + 3 { 200 + noise } else { noise });
            }
        }
    }
    fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), images).unwrap();
    fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), labels).unwrap();
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir(&data).unwrap();
    write_idx(&data, "train", 400, 1);
    write_idx(&data, "t10k", 100, 2);
    let cfg = r#"
model = "mlp3"
output_dir = "out"

[data]
kind = "mnist"
dir = "data"
val_size = 100

[train]
epochs = 2
batch_size = 32
base_dropout = 0.1
optimizer = { kind = "sgd", lr = 0.05, momentum = 0.9 }
warmup_epochs = 1
finetune_epochs = 2
prune_ramp_epochs = 1
weight_target_density = [0.2, 0.2, 0.5]
eval_batch_size = 50

[prune]
winner_rates = [0.2, 0.3, 1.0]
rate_grid = [0.1, 0.5, 1.0]
downsample_grid = [0.5, 1.0]

[bench]
inputs = 256
outputs = 256
trials = 5
"#;
    fs::write(dir.path().join("exp.toml"), cfg).unwrap();
    dir
}

fn jp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jointprune"))
        .arg("--config")
        .arg(dir.join("exp.toml"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = jp(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 1, "{text}");
    text
}

#[test]
fn full_workflow_writes_artifacts() {
    let dir = setup();
    let d = dir.path();
    let out = d.join("out");

    let s = ok(d, &["train-dense"]);
    assert!(s.starts_with("train-dense: mlp3 test accuracy"), "{s}");
    assert!(out.join("dense.jpnc").is_file());
    assert!(out.join("dense.history.csv").is_file());

    let s = ok(d, &["sweep-sensitivity"]);
    assert!(s.contains("6 rows"), "{s}");
    let csv = fs::read_to_string(out.join("sensitivity.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3);

    let dense = out.join("dense.jpnc");
    let s = ok(d, &["report-macs", "--checkpoint", dense.to_str().unwrap(), "--mode", "dense"]);
    assert!(s.contains("weight density 100.00%"), "{s}");

    let s = ok(d, &["prune"]);
    assert!(s.starts_with("prune: test accuracy"), "{s}");
    let s = ok(d, &["prune", "--weights-only"]);
    assert!(s.starts_with("prune:"), "{s}");

    let jpn = out.join("jp.jpnc");
    let s = ok(d, &["eval", "--checkpoint", jpn.to_str().unwrap()]);
    assert!(s.starts_with("Jp: test accuracy"), "{s}");
    let macs = fs::read_to_string(out.join("macs_jp.csv")).unwrap();
    assert!(macs.starts_with("layer,samples,weights,kept_weights"));
    assert_eq!(macs.lines().count(), 1 + 3 + 1);

    let s = ok(d, &["predict-threshold-study", "--checkpoint", jpn.to_str().unwrap(), "--grid", "0.5,1.0"]);
    assert!(s.contains("drop by eps"), "{s}");
    let study = fs::read_to_string(out.join("prediction.csv")).unwrap();
    assert_eq!(study.lines().count(), 1 + 2 * 2);

    let s = ok(d, &["bench-fc"]);
    assert!(s.starts_with("bench-fc: 256x256"), "{s}");
}

#[test]
fn repeated_runs_give_identical_artifacts() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["train-dense", "--out", d.join("a.jpnc").to_str().unwrap()]);
    ok(d, &["train-dense", "--out", d.join("b.jpnc").to_str().unwrap()]);
    assert_eq!(fs::read(d.join("a.jpnc")).unwrap(), fs::read(d.join("b.jpnc")).unwrap());
    assert_eq!(fs::read(d.join("a.history.csv")).unwrap(), fs::read(d.join("b.history.csv")).unwrap());
}

#[test]
fn config_errors_name_the_key() {
    let dir = setup();
    let d = dir.path();
    let text = fs::read_to_string(d.join("exp.toml")).unwrap();
    fs::write(d.join("exp.toml"), text.replace("batch_size = 32", "batch_size = \"many\"")).unwrap();
    let out = jp(d, &["train-dense"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("train.batch_size"), "{err}");
}

#[test]
fn unknown_flags_and_bad_checkpoints_fail() {
    let dir = setup();
    let d = dir.path();
    assert!(!jp(d, &["train-dense", "--bogus"]).status.success());
    fs::write(d.join("junk.jpnc"), b"not a checkpoint").unwrap();
    let out = jp(d, &["eval", "--checkpoint", d.join("junk.jpnc").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
