use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
toy = "coupled_sines"
toy_length = 96
tau = 8
epochs = 2
checkpoint_every = 1
latent = 4
attention_pairs = 1
ffn_layers = 1
embedder_epochs = 2
embedder_d_model = 8
embedder_heads = 2
embedder_blocks = 1
embedder_ffn_hidden = 8
forecaster_epochs = 2
forecaster_hidden = 4
forecaster_layers = 1
horizon = 4
runs = 2
"#;

fn gatgan(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gatgan"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = gatgan(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), TINY).unwrap();
    dir
}

fn train(dir: &Path, out: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec!["train", "--config", "c.toml", "--out", out];
    args.extend_from_slice(extra);
    ok(dir, &args);
    dir.join(out)
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn train_writes_artifacts_and_is_deterministic() {
    let dir = setup();
    let a = train(dir.path(), "a", &[]);
    let b = train(dir.path(), "b", &[]);
    for f in ["model.ckpt", "best.ckpt", "normalization.json", "config.toml", "checkpoints/epoch_0002.ckpt"] {
        assert!(a.join(f).exists(), "missing {f}");
    }
    assert_eq!(std::fs::read(a.join("model.ckpt")).unwrap(), std::fs::read(b.join("model.ckpt")).unwrap());
    assert_eq!(csv_rows(&a.join("losses.csv")).len(), 3);
    let snapshot = std::fs::read_to_string(a.join("config.toml")).unwrap();
    assert!(snapshot.contains("epochs = 2"));
    assert!(snapshot.contains("lr_generator"));
}

#[test]
fn zero_epochs_gives_initial_checkpoint_and_empty_log() {
    let dir = setup();
    let out = train(dir.path(), "z", &["--set", "epochs=0"]);
    let log = std::fs::read_to_string(out.join("losses.csv")).unwrap();
    assert_eq!(log.lines().count(), 1);
    assert!(log.starts_with("epoch,"));
    let (model, trainer) = gatgan::load_model(out.join("model.ckpt")).unwrap();
    assert_eq!(model.epochs_trained, 0);
    assert!(trainer.is_some());

    let refused = gatgan(dir.path(), &["generate", "--config", "c.toml", "--out", "g", "--checkpoint", "z/model.ckpt"]);
    assert_eq!(refused.status.code(), Some(2));
    ok(
        dir.path(),
        &["generate", "--config", "c.toml", "--out", "g", "--checkpoint", "z/model.ckpt", "--allow-untrained"],
    );
}

#[test]
fn resume_matches_uninterrupted_training() {
    let dir = setup();
    let full = train(dir.path(), "full", &[]);
    train(dir.path(), "half", &["--set", "epochs=1"]);
    let resumed = train(dir.path(), "half", &["--resume", "half/checkpoints/epoch_0001.ckpt"]);
    assert_eq!(
        std::fs::read(full.join("model.ckpt")).unwrap(),
        std::fs::read(resumed.join("model.ckpt")).unwrap()
    );
    assert_eq!(csv_rows(&resumed.join("losses.csv")).len(), 3);
}

#[test]
fn generate_shape_bounds_and_determinism() {
    let dir = setup();
    ok(dir.path(), &["toy", "--length", "96", "real.csv"]);
    let before = std::fs::read(dir.path().join("real.csv")).unwrap();
    train(dir.path(), "m", &["--data", "real.csv"]);
    let gen = |out: &str, k: &str| {
        ok(
            dir.path(),
            &["generate", "--config", "c.toml", "--out", out, "--checkpoint", "m/model.ckpt", "--k", k, "--seed", "5"],
        );
        dir.path().join(out).join("synthetic.csv")
    };
    let one = csv_rows(&gen("one", "1"));
    assert_eq!(one.len(), 1 + 8);
    assert!(one.iter().all(|r| r.len() == 3));

    let a = gen("a", "6");
    let b = gen("b", "6");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let real = csv_rows(&dir.path().join("real.csv"));
    let col = |rows: &[Vec<String>], j: usize| -> Vec<f64> { rows[1..].iter().map(|r| r[j].parse().unwrap()).collect() };
    let syn = csv_rows(&a);
    for j in 0..3 {
        let r = col(&real, j);
        let (lo, hi) = r.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        assert!(col(&syn, j).iter().all(|&v| v >= lo && v <= hi));
    }

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.with_extension("json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["mode"], "prior");
    assert_eq!(manifest["denormalized"], true);
    assert_eq!(manifest["checkpoint_sha256"].as_str().unwrap().len(), 64);

    ok(
        dir.path(),
        &[
            "generate", "--config", "c.toml", "--data", "real.csv", "--out", "rec", "--checkpoint", "m/model.ckpt",
            "--k", "3", "--mode", "reconstruct",
        ],
    );
    assert_eq!(csv_rows(&dir.path().join("rec/synthetic.csv")).len(), 1 + 3 * 8);
    assert_eq!(std::fs::read(dir.path().join("real.csv")).unwrap(), before);
}

#[test]
fn corrupted_checkpoint_exits_2() {
    let dir = setup();
    let out = train(dir.path(), "m", &[]);
    let mut bytes = std::fs::read(out.join("model.ckpt")).unwrap();
    let n = bytes.len();
    bytes[n / 2] ^= 0x40;
    std::fs::write(dir.path().join("bad.ckpt"), bytes).unwrap();
    let res = gatgan(dir.path(), &["generate", "--config", "c.toml", "--out", "g", "--checkpoint", "bad.ckpt"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("integrity"));
}

#[test]
fn eval_identity_and_row_structure() {
    let dir = setup();
    ok(dir.path(), &["toy", "--length", "96", "real.csv"]);
    ok(dir.path(), &["train-embedder", "--config", "c.toml", "--data", "real.csv", "--out", "emb"]);
    let log = csv_rows(&dir.path().join("emb/embedder_log.csv"));
    // Header, the untrained epoch 0, then one row per epoch.
    assert_eq!(log.len(), 1 + 1 + 2);

    let base = ["--config", "c.toml", "--data", "real.csv", "--synthetic", "real.csv", "--embedder", "emb/embedder.ckpt"];
    let mut args = vec!["eval", "ftd", "--out", "same", "--set", "stride=8"];
    args.extend_from_slice(&base);
    ok(dir.path(), &args);
    let rows = csv_rows(&dir.path().join("same/report.csv"));
    let mean: f64 = rows[1][4].parse().unwrap();
    assert!(mean.abs() <= 1e-8, "self FTD {mean}");

    let mut args = vec!["eval", "both", "--out", "both", "--runs", "1"];
    args.extend_from_slice(&base);
    ok(dir.path(), &args);
    let rows = csv_rows(&dir.path().join("both/report.csv"));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1][3], "ftd");
    assert_eq!(rows[2][3], "predictive_mae");
    assert!(rows[1..].iter().all(|r| r[5] == "0" && r[6] == "1"));
    assert!(dir.path().join("both/report.json").exists());
}

#[test]
fn eval_rejects_tau_mismatch_and_missing_embedder() {
    let dir = setup();
    ok(dir.path(), &["toy", "--length", "90", "odd.csv"]);
    let res = gatgan(dir.path(), &["eval", "predictive", "--config", "c.toml", "--out", "e", "--synthetic", "odd.csv"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("τ mismatch"));

    train(dir.path(), "m", &[]);
    ok(dir.path(), &["generate", "--config", "c.toml", "--out", "g", "--checkpoint", "m/model.ckpt", "--k", "4"]);
    let res = gatgan(
        dir.path(),
        &["eval", "predictive", "--config", "c.toml", "--tau", "4", "--out", "e", "--synthetic", "g/synthetic.csv"],
    );
    assert_eq!(res.status.code(), Some(2));

    let res = gatgan(dir.path(), &["eval", "ftd", "--config", "c.toml", "--out", "e", "--synthetic", "g/synthetic.csv"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("--embedder"));
}

#[test]
fn config_errors_exit_2_and_name_the_field() {
    let dir = setup();
    let res = gatgan(dir.path(), &["train", "--config", "c.toml", "--out", "x", "--set", "epoch=3"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("`epoch`"));

    let res = gatgan(dir.path(), &["train", "--out", "x"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("`data`"));

    let res = gatgan(dir.path(), &["ablate", "--config", "c.toml", "--out", "x", "--variant", "full,no_wings"]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("no_wings") && err.contains("no_reconstruction_loss"), "{err}");

    let res = gatgan(dir.path(), &["frobnicate"]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn divergence_exits_3_with_checkpoint_path() {
    let dir = setup();
    let res = gatgan(
        dir.path(),
        &["train", "--config", "c.toml", "--out", "d", "--set", "lr_encoder=1e200", "--set", "lr_decoder=1e200"],
    );
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("last checkpoint"));
}

#[test]
fn ablate_emits_one_row_per_variant_and_metric() {
    let dir = setup();
    ok(
        dir.path(),
        &[
            "ablate", "--config", "c.toml", "--out", "ab", "--variant", "full,no_reconstruction_loss", "--runs", "1",
            "--set", "taus=[8]", "--set", "metrics=\"ftd\"",
        ],
    );
    let rows = csv_rows(&dir.path().join("ab/ablation.csv"));
    assert_eq!(rows.len(), 1 + 2);
    assert_eq!(rows[1][2], "full");
    assert_eq!(rows[2][2], "no_reconstruction_loss");
    assert!(dir.path().join("ab/tau_8/full/run_00/model.ckpt").exists());
    assert!(dir.path().join("ab/tau_8/embedder.ckpt").exists());
}
