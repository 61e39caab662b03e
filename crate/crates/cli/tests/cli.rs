//! Command-level behavior: exit codes, flag overrides, and file outputs.

use std::path::Path;
use std::process::Command;

use vpforge_core::demo::synthetic_clip;
use vpforge_core::model::{DiscriminatorConfig, GeneratorConfig, ModelConfig, ModelState};
use vpforge_core::tensor::{Dims5, Tensor5};

fn vpforge(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_vpforge"))
        .args(args)
        .output()
        .unwrap()
}

fn write_zero_masks(dir: &Path, frames: usize, h: usize, w: usize) {
    let mask = Tensor5::<f32>::zeros(Dims5::new(1, 1, frames, h, w));
    vpforge_core::io::write_mask(&mask, dir).unwrap();
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\"version\": 1, \"nonsense\": true}").unwrap();
    let out = vpforge(&[
        "gen-masks",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("m").to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn unreachable_bucket_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        "{\"version\": 1, \"masks\": {\"gen\": {\"max_attempts\": 3}}}",
    )
    .unwrap();
    let out = vpforge(&[
        "gen-masks",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("m").to_str().unwrap(),
        "--bucket",
        "0.999:1.0",
    ]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn sr_mask_manifest_reports_exact_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sr");
    let out = vpforge(&[
        "gen-masks",
        "--out",
        out_dir.to_str().unwrap(),
        "--type",
        "sr",
        "--dims",
        "16x32x32",
    ]);
    assert!(out.status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    // default sr_factor is 4: ratio 1 - 1/16
    assert_eq!(manifest["videos"][0]["ratio"].as_f64().unwrap(), 0.9375);
    assert!(out_dir.join("mask_0000/mask_00000.pgm").is_file());
}

#[test]
fn gen_masks_manifest_ratios_stay_in_bucket() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("m");
    let out = vpforge(&[
        "gen-masks",
        "--out",
        out_dir.to_str().unwrap(),
        "--type",
        "curve",
        "--bucket",
        "0.0:0.1",
        "--count",
        "3",
        "--seed",
        "7",
    ]);
    assert!(out.status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    let videos = manifest["videos"].as_array().unwrap();
    assert_eq!(videos.len(), 3);
    for (i, v) in videos.iter().enumerate() {
        let ratio = v["ratio"].as_f64().unwrap();
        assert!(ratio > 0.0 && ratio <= 0.1, "video {i}: ratio {ratio}");
        assert!(out_dir.join(format!("mask_{i:04}")).is_dir());
    }
}

#[test]
fn gen_masks_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &Path| {
        vec![
            "gen-masks".to_string(),
            "--out".into(),
            out.to_str().unwrap().into(),
            "--type".into(),
            "object".into(),
            "--bucket".into(),
            "0.2:0.4".into(),
            "--count".into(),
            "2".into(),
            "--seed".into(),
            "31".into(),
            "--dims".into(),
            "4x90x160".into(),
        ]
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out_dir in [&a, &b] {
        let args = args(out_dir);
        let args: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
        assert!(vpforge(&args).status.success());
    }
    for entry in walk_files(&a) {
        let rel = entry.strip_prefix(&a).unwrap();
        assert_eq!(
            std::fs::read(&entry).unwrap(),
            std::fs::read(b.join(rel)).unwrap(),
            "{rel:?}"
        );
    }
}

fn walk_files(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    out
}

#[test]
fn eval_on_ground_truth_fixture_reports_zero_mse() {
    let dir = tempfile::tempdir().unwrap();
    // With an all-zero mask the composite equals the ground truth exactly,
    // so every error metric must be zero no matter the model.
    let clip = dir.path().join("data/clip_0000");
    let video = synthetic_clip::<f32>(8, 16, 16, 7);
    vpforge_core::io::write_video(&video, &clip.join("frames")).unwrap();
    write_zero_masks(&clip.join("masks"), 8, 16, 16);

    let ckpt = dir.path().join("m.vpf");
    ModelState::<f32>::new(
        ModelConfig {
            generator: GeneratorConfig {
                base_channels: 4,
                ..Default::default()
            },
            discriminator: DiscriminatorConfig {
                channels: vec![4, 4, 4, 4, 4, 4],
                ..Default::default()
            },
        },
        1,
    )
    .unwrap()
    .save(&ckpt)
    .unwrap();

    let report = dir.path().join("report.csv");
    let out = vpforge(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        dir.path().join("data").to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(&report).unwrap();
    let mean_row = csv.lines().last().unwrap();
    let cols: Vec<&str> = mean_row.split(',').collect();
    assert_eq!(cols[0], "mean");
    assert_eq!(cols[1].parse::<f64>().unwrap(), 0.0, "mse");
    assert_eq!(cols[2].parse::<f64>().unwrap(), 0.0, "masked_mse");
    assert_eq!(cols[3].parse::<f64>().unwrap(), 99.0, "psnr cap");
}

#[test]
fn grad_check_command_exits_clean() {
    let out = vpforge(&["grad-check", "--target", "upsample", "--dtype", "double"]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("gradient groups passed"), "{stdout}");

    let out = vpforge(&["grad-check", "--target", "bogus", "--dtype", "double"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_rejects_undersized_clips() {
    let dir = tempfile::tempdir().unwrap();
    let clip = dir.path().join("data/clip_0000");
    let video = synthetic_clip::<f32>(4, 16, 16, 2);
    vpforge_core::io::write_video(&video, &clip.join("frames")).unwrap();
    write_zero_masks(&clip.join("masks"), 4, 16, 16);
    // default clip_len 16 > 4 available frames: a validation failure
    let out = vpforge(&[
        "train",
        "--data",
        dir.path().join("data").to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
