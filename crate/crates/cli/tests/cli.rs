//! End-to-end runs of the `depthfill` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use depthfill_cli::manifest::{Manifest, ManifestEntry, Split};
use depthfill_core::io::{read_disparity_png, write_disparity_png, write_rgb_png};
use depthfill_core::{init_model, DisparityRaster, NetworkSpec, RgbImage};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_depthfill"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const CONFIG: &str = r#"
output_dir = "unused"

[rig]
baseline_m = 0.22
focal_px = 2000.0

[network]
input_size = [32, 24]
levels = 1
base_channels = 2
seed = 1

[training]
epochs = 2
learning_rate = 0.003
batch_size = 2
seed = 2

[refine]
iterations = 2
eval_split_fraction = 0.25

[scene]
seed = 5
width = 32
height = 24
object_count = 2
hole_fraction = 0.5
depth_range_m = [2.0, 40.0]
"#;

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("cfg.toml");
    std::fs::write(&path, CONFIG).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a manifest over hand-made rasters.
fn manifest_of(dir: &Path, rasters: &[DisparityRaster]) -> PathBuf {
    let mut entries = Vec::new();
    for (i, r) in rasters.iter().enumerate() {
        let id = format!("img{i}");
        let rgb = dir.join(format!("{id}_rgb.png"));
        let disp = dir.join(format!("{id}_disp.png"));
        write_rgb_png(
            &RgbImage::new(r.width(), r.height(), vec![128; r.len() * 3]).unwrap(),
            &rgb,
        )
        .unwrap();
        write_disparity_png(r, &disp).unwrap();
        entries.push(ManifestEntry {
            id,
            rgb_path: rgb,
            disparity_path: disp.clone(),
            split: if i == 0 { Split::Train } else { Split::Eval },
            truth_path: Some(disp),
            refined_path: None,
        });
    }
    let path = dir.join("manifest.jsonl");
    Manifest { entries }.write(&path).unwrap();
    path
}

fn with_zeros(w: usize, h: usize, zeros: usize) -> DisparityRaster {
    let codes = (0..w * h).map(|i| if i < zeros { 0 } else { 500 }).collect();
    DisparityRaster::new(w, h, codes).unwrap()
}

#[test]
fn synth_writes_manifest_and_reports_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("data");
    let o = run(&["synth", "--config", s(&cfg), "--n", "10", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("invalid fraction: 50.00%"), "{}", stdout(&o));
    let m = Manifest::load(&out.join("manifest.jsonl")).unwrap();
    assert_eq!(m.len(), 10);
    assert_eq!(m.entries.iter().filter(|e| e.split == Split::Eval).count(), 3);

    // Same config, same bytes.
    let again = dir.path().join("again");
    assert!(run(&["synth", "--config", s(&cfg), "--n", "10", "--out", s(&again)])
        .status
        .success());
    for sub in [
        "rgb/scene_0003.png",
        "disparity/scene_0003.png",
        "truth/scene_0003.png",
        "manifest.jsonl",
    ] {
        assert_eq!(
            std::fs::read(out.join(sub)).unwrap(),
            std::fs::read(again.join(sub)).unwrap()
        );
    }
}

#[test]
fn zero_samples_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let o = run(&["synth", "--config", s(&cfg), "--n", "0", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stats_averages_invalid_counts() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest_of(dir.path(), &[with_zeros(4, 4, 3), with_zeros(4, 4, 5)]);
    let o = run(&["stats", "--manifest", s(&m)]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("average invalid pixels: 4.00"), "{}", stdout(&o));

    let dir = tempfile::tempdir().unwrap();
    let m = manifest_of(dir.path(), &[DisparityRaster::filled(4, 4, 9)]);
    assert!(stdout(&run(&["stats", "--manifest", s(&m)])).contains("average invalid pixels: 0.00"));
}

#[test]
fn stats_prints_reference_frame_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest_of(dir.path(), &[with_zeros(2048, 1024, 1_206_898)]);
    let csv = dir.path().join("stats.csv");
    let o = run(&["stats", "--manifest", s(&m), "--out", s(&csv)]);
    assert!(stdout(&o).contains("invalid fraction: 57.55%"), "{}", stdout(&o));
    assert!(std::fs::read_to_string(&csv)
        .unwrap()
        .starts_with("id,width,height,invalid_count"));
}

#[test]
fn missing_files_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["stats", "--manifest", s(&dir.path().join("nope.jsonl"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn eval_of_targets_against_themselves_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest_of(dir.path(), &[with_zeros(4, 4, 3), with_zeros(4, 4, 0)]);
    let pred = dir.path().join("pred");
    std::fs::create_dir(&pred).unwrap();
    for (i, z) in [3, 0].into_iter().enumerate() {
        write_disparity_png(&with_zeros(4, 4, z), pred.join(format!("img{i}.png"))).unwrap();
    }
    let out = dir.path().join("ev");
    let o = run(&["eval", "--manifest", s(&m), "--pred-dir", s(&pred), "--out", s(&out)]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(out.join("eval.csv")).unwrap();
    for line in csv.lines().skip(1) {
        assert_eq!(line.split(',').nth(1), Some("100.0"), "{line}");
    }
}

#[test]
fn partial_failures_give_nonzero_exit_but_keep_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest_of(dir.path(), &[with_zeros(4, 4, 3), with_zeros(4, 4, 1)]);
    let pred = dir.path().join("pred");
    std::fs::create_dir(&pred).unwrap();
    write_disparity_png(&with_zeros(4, 4, 0), pred.join("img0.png")).unwrap();
    let out = dir.path().join("ev");
    let o = run(&["eval", "--manifest", s(&m), "--pred-dir", s(&pred), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("img1"));
    let csv = std::fs::read_to_string(out.join("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn fill_leaves_no_holes() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest_of(dir.path(), &[with_zeros(8, 8, 20), with_zeros(8, 8, 64)]);
    let spec = NetworkSpec {
        input_size: (8, 8),
        input_channels: 3,
        levels: 1,
        base_channels: 2,
        seed: 3,
    };
    let ckpt = dir.path().join("m.ckpt");
    init_model(&spec).unwrap().save(&ckpt).unwrap();
    let out = dir.path().join("filled");
    let o = run(&[
        "fill",
        "--manifest",
        s(&m),
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&out),
        "--jobs",
        "1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for i in 0..2 {
        assert_eq!(
            read_disparity_png(out.join(format!("img{i}.png")))
                .unwrap()
                .invalid_count(),
            0
        );
    }
    // A predictor checkpoint is not a corrector.
    let o = run(&[
        "correct",
        "--manifest",
        s(&m),
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn refine_then_correct_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("data");
    assert!(run(&["synth", "--config", s(&cfg), "--n", "6", "--out", s(&data)])
        .status
        .success());
    let manifest = data.join("manifest.jsonl");

    let refined = dir.path().join("refine");
    let o = run(&[
        "refine",
        "--manifest",
        s(&manifest),
        "--config",
        s(&cfg),
        "--out",
        s(&refined),
        "--iterations",
        "1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(refined.join("table.csv")).unwrap();
    assert_eq!(
        table.lines().next(),
        Some("iteration,accuracy_pct,corrected_pct,remaining_invalid_avg,train_loss")
    );
    assert_eq!(table.lines().count(), 2);
    assert!(refined.join("iter_01/model.ckpt").is_file());
    assert!(!refined.join("iter_02").exists());

    let refined_manifest = refined.join("refined_manifest.jsonl");
    let o = run(&["stats", "--manifest", s(&refined_manifest)]);
    assert!(stdout(&o).contains("corrected pixels: 100.00%"), "{}", stdout(&o));

    let corr = dir.path().join("corr");
    let o = run(&[
        "train-corrector",
        "--manifest",
        s(&refined_manifest),
        "--config",
        s(&cfg),
        "--out",
        s(&corr),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fixed = dir.path().join("fixed");
    let ckpt = corr.join("corrector.ckpt");
    let o = run(&[
        "correct",
        "--manifest",
        s(&manifest),
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&fixed),
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("ms per frame"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixed.join("correct_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["remaining_invalid_avg"], 0.0);

    // The raw manifest has no refined rasters to learn from.
    let o = run(&[
        "train-corrector",
        "--manifest",
        s(&manifest),
        "--config",
        s(&cfg),
        "--out",
        s(&corr),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn manifest_from_cityscapes_tree() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let img = RgbImage::new(2, 2, vec![0; 12]).unwrap();
    let disp = DisparityRaster::filled(2, 2, 7);
    for (split, city, name) in [
        ("train", "aachen", "aachen_000000_000019"),
        ("val", "lindau", "lindau_000001_000019"),
    ] {
        let rgb_dir = root.join("leftImg8bit").join(split).join(city);
        let disp_dir = root.join("disparity").join(split).join(city);
        std::fs::create_dir_all(&rgb_dir).unwrap();
        std::fs::create_dir_all(&disp_dir).unwrap();
        write_rgb_png(&img, rgb_dir.join(format!("{name}_leftImg8bit.png"))).unwrap();
        write_disparity_png(&disp, disp_dir.join(format!("{name}_disparity.png"))).unwrap();
    }
    // An image with no disparity counterpart is skipped.
    write_rgb_png(
        &img,
        root.join("leftImg8bit/train/aachen/aachen_000009_000019_leftImg8bit.png"),
    )
    .unwrap();

    let out = root.join("m.jsonl");
    let o = run(&["manifest", "--root", s(root), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("1 images without disparity skipped"));
    let m = Manifest::load(&out).unwrap();
    let ids: Vec<(&str, Split)> = m.entries.iter().map(|e| (e.id.as_str(), e.split)).collect();
    assert_eq!(
        ids,
        vec![
            ("aachen_000000_000019", Split::Train),
            ("lindau_000001_000019", Split::Eval)
        ]
    );
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, CONFIG.replace("levels = 1", "levels = 1\nwidth = 3")).unwrap();
    let o = run(&["synth", "--config", s(&cfg), "--n", "2", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}
