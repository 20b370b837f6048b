use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::AnimationDecoder;

fn snca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snca"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A toy run small enough to finish in a few seconds.
fn tiny_config(dir: &Path, target: &str) -> PathBuf {
    let text = format!(
        "target = {target}
target_pad = 2
variant = gradient
channels = 6
hidden = 8
steering_channel = 5
batch_size = 2
pool_size = 4
rollout_min = 2
rollout_max = 4
total_steps = 6
checkpoint_every = 3
rng_seed = 11
seed_separation = 6
gif_steps = 6
gif_stride = 2
render_scale = 1
"
    );
    let p = dir.join("run.cfg");
    fs::write(&p, text).unwrap();
    p
}

fn train(cfg: &Path, out: &Path) -> Output {
    snca(&["train", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"])
}

#[test]
fn missing_target_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "/nowhere/target.png");
    let o = train(&cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nowhere/target.png"), "{}", stderr(&o));
}

#[test]
fn config_errors_report_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.cfg");
    fs::write(&p, "target = builtin:toy\nchannels = 6\nchanels = 7\n").unwrap();
    let o = snca(&["train", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("bad.cfg:3:") && e.contains("chanels"), "{e}");
}

#[test]
fn training_writes_outputs_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "builtin:toy");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = train(&cfg, out);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["loss.csv", "final.snca", "final.gif", "ckpt_000003.snca", "ckpt_000006.snca"] {
        assert!(a.join(f).is_file(), "{f} missing");
    }
    let csv = fs::read_to_string(a.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.starts_with("step,loss,best_rotation\n"));
    assert_eq!(csv, fs::read_to_string(b.join("loss.csv")).unwrap());
    assert_eq!(fs::read(a.join("final.snca")).unwrap(), fs::read(b.join("final.snca")).unwrap());
}

#[test]
fn rollout_frames_and_checkpoint_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "builtin:toy");
    let out = dir.path().join("run");
    assert!(train(&cfg, &out).status.success());
    let ckpt = out.join("final.snca");
    let before = fs::read(&ckpt).unwrap();
    let gif = dir.path().join("roll.gif");
    let o = snca(&[
        "rollout",
        ckpt.to_str().unwrap(),
        "--steps",
        "7",
        "--stride",
        "3",
        "--seed-rotation",
        "90",
        "--render",
        "angle_field",
        "--gif",
        gif.to_str().unwrap(),
        "--out",
        dir.path().join("frames").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(&ckpt).unwrap(), before);
    let decoder = image::codecs::gif::GifDecoder::new(std::io::BufReader::new(fs::File::open(&gif).unwrap())).unwrap();
    assert_eq!(decoder.into_frames().count(), 7 / 3 + 1);
    assert!(dir.path().join("frames/final.png").is_file());

    let o = snca(&["rollout", ckpt.to_str().unwrap(), "--single-seed", "--seed-rotation", "30"]);
    assert_eq!(o.status.code(), Some(1), "gradient single seed has no orientation");
}

#[test]
fn eval_csv_is_deterministic_and_empty_with_no_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "builtin:toy");
    let out = dir.path().join("run");
    assert!(train(&cfg, &out).status.success());
    let ckpt = out.join("final.snca");
    let run = |runs: &str| {
        let o = snca(&["eval", ckpt.to_str().unwrap(), "builtin:toy", "--runs", runs, "--steps", "3", "--rng", "5"]);
        assert!(o.status.success(), "{}", stderr(&o));
        String::from_utf8(o.stdout).unwrap()
    };
    assert_eq!(run("0"), "run,loss,best_rotation,reflection_loss\n");
    let first = run("2");
    assert_eq!(first.lines().count(), 3);
    assert_eq!(first, run("2"));

    let o = snca(&["eval", ckpt.to_str().unwrap(), "builtin:lizard"]);
    assert_eq!(o.status.code(), Some(1), "grid mismatch: {}", stderr(&o));
}

#[test]
fn corrupted_checkpoint_is_rejected_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "builtin:toy");
    let out = dir.path().join("run");
    assert!(train(&cfg, &out).status.success());
    let ckpt = out.join("final.snca");
    let mut bytes = fs::read(&ckpt).unwrap();
    let n = bytes.len();
    bytes[n - 5] ^= 0x40;
    let bad = dir.path().join("bad.snca");
    fs::write(&bad, &bytes).unwrap();
    let o = snca(&["rollout", bad.to_str().unwrap(), "--steps", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sha256"), "{}", stderr(&o));
    fs::write(&bad, &bytes[..n / 2]).unwrap();
    let o = snca(&["eval", bad.to_str().unwrap(), "builtin:toy"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn made_target_png_trains() {
    let dir = tempfile::tempdir().unwrap();
    let png = dir.path().join("toy.png");
    let o = snca(&["make-target", "toy", png.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    // Relative target paths resolve against the config's directory.
    let cfg = tiny_config(dir.path(), "toy.png");
    let o = train(&cfg, &dir.path().join("out"));
    assert!(o.status.success(), "{}", stderr(&o));
    let o = snca(&["make-target", "dragon", dir.path().join("x.png").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
