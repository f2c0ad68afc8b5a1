//! Subcommand implementations.
//!
//! Batch commands run per-image work on the rayon pool and collect results in
//! manifest order. When some images fail, the successful outputs are still
//! written, each failure is reported on stderr and the command returns an
//! error.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use depthfill_core::io::{read_disparity_png, read_rgb_png, write_disparity_png, write_rgb_png};
use depthfill_core::metrics::{self, AccuracyScope, CorrectionStats, InvalidStats};
use depthfill_core::refine::{eval_mask, iterative_refine_split};
use depthfill_core::{
    correct, fill_missing, generate_dataset, train_corrector, DisparityRaster, IterationReport, PredictorModel,
};
use rayon::prelude::*;
use serde::Serialize;
use walkdir::WalkDir;

use crate::config::PipelineConfig;
use crate::manifest::{Manifest, ManifestEntry, Split};

pub const REPORTS_FILE: &str = "reports.jsonl";
pub const TABLE_FILE: &str = "table.csv";
pub const REFINED_MANIFEST_FILE: &str = "refined_manifest.jsonl";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CORRECTOR_FILE: &str = "corrector.ckpt";

pub fn iteration_dir(out: &Path, iteration: usize) -> PathBuf {
    out.join(format!("iter_{iteration:02}"))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_loss_trace(path: &Path, trace: &[f64]) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        epoch: usize,
        loss: f64,
    }
    let rows: Vec<Row> = trace
        .iter()
        .enumerate()
        .map(|(i, &loss)| Row { epoch: i + 1, loss })
        .collect();
    write_csv(path, &rows)
}

fn select(manifest: &Manifest, split: Option<Split>) -> Vec<&ManifestEntry> {
    manifest
        .entries
        .iter()
        .filter(|e| split.is_none_or(|s| e.split == s))
        .collect()
}

/// Runs `f` over the entries in parallel. Failures are printed to stderr in
/// manifest order.
fn run_batch<T, F>(entries: &[&ManifestEntry], f: F) -> (Vec<T>, usize)
where
    T: Send,
    F: Fn(&ManifestEntry) -> Result<T> + Sync,
{
    let results: Vec<Result<T>> = entries.par_iter().map(|e| f(e)).collect();
    let mut ok = Vec::with_capacity(results.len());
    let mut failed = 0;
    for (entry, r) in entries.iter().zip(results) {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                eprintln!("{}: {e:#}", entry.id);
                failed += 1;
            }
        }
    }
    (ok, failed)
}

fn finish_batch(what: &str, total: usize, failed: usize) -> Result<()> {
    if failed > 0 {
        bail!("{what}: {failed} of {total} images failed");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// synth

#[derive(Debug, Clone, Serialize)]
pub struct SynthSummary {
    pub manifest_path: PathBuf,
    pub images: usize,
    pub average_invalid: f64,
    pub invalid_fraction_pct: f64,
}

/// Writes `n` synthetic scenes (rgb, truth, holed disparity) and a manifest.
pub fn cmd_synth(cfg: &PipelineConfig, n: usize, out: &Path) -> Result<SynthSummary> {
    if n == 0 {
        bail!("at least one sample is required");
    }
    let scene = cfg
        .scene_config()
        .ok_or_else(|| anyhow!("config has no [scene] table"))?;
    let samples = generate_dataset(&scene, n)?;
    let eval = if n >= 2 {
        eval_mask(n, cfg.refine.eval_split_fraction)?
    } else {
        vec![false]
    };
    for sub in ["rgb", "truth", "disparity"] {
        create_dir(&out.join(sub))?;
    }
    let entries: Vec<ManifestEntry> = (0..n)
        .map(|i| {
            let id = format!("scene_{i:04}");
            ManifestEntry {
                rgb_path: PathBuf::from(format!("rgb/{id}.png")),
                disparity_path: PathBuf::from(format!("disparity/{id}.png")),
                truth_path: Some(PathBuf::from(format!("truth/{id}.png"))),
                refined_path: None,
                split: if eval[i] { Split::Eval } else { Split::Train },
                id,
            }
        })
        .collect();
    entries.par_iter().zip(&samples).try_for_each(|(e, s)| -> Result<()> {
        write_rgb_png(&s.rgb, out.join(&e.rgb_path))?;
        write_disparity_png(&s.holed, out.join(&e.disparity_path))?;
        write_disparity_png(&s.truth, out.join(e.truth_path.as_ref().expect("set above")))?;
        Ok(())
    })?;
    let manifest_path = out.join("manifest.jsonl");
    Manifest { entries }.write(&manifest_path)?;
    let stats = metrics::average_invalid(samples.iter().map(|s| &s.holed))?;
    Ok(SynthSummary {
        manifest_path,
        images: n,
        average_invalid: stats.average_invalid,
        invalid_fraction_pct: stats.invalid_fraction_pct,
    })
}

// ---------------------------------------------------------------------------
// stats

#[derive(Debug, Clone, Serialize)]
pub struct StatsRow {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub invalid_count: usize,
    pub invalid_fraction_pct: f64,
    /// Pixels invalid in the disparity raster but valid in the refined one.
    pub corrected_count: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct StatsSummary {
    pub rows: Vec<StatsRow>,
    pub invalid: InvalidStats,
    pub correction: Option<CorrectionStats>,
}

pub fn cmd_stats(manifest: &Manifest, csv_out: Option<&Path>) -> Result<StatsSummary> {
    if manifest.is_empty() {
        bail!("manifest is empty");
    }
    let loaded: Vec<(DisparityRaster, Option<DisparityRaster>)> = manifest
        .entries
        .par_iter()
        .map(|e| -> Result<_> {
            let d = read_disparity_png(&e.disparity_path)?;
            let r = e.refined_path.as_ref().map(read_disparity_png).transpose()?;
            Ok((d, r))
        })
        .collect::<Result<_>>()?;
    let invalid = metrics::average_invalid(loaded.iter().map(|(d, _)| d))?;
    let mut rows = Vec::with_capacity(loaded.len());
    for (e, (d, r)) in manifest.entries.iter().zip(&loaded) {
        let corrected_count = r.as_ref().map(|r| metrics::corrected_count(d, r)).transpose()?;
        rows.push(StatsRow {
            id: e.id.clone(),
            width: d.width(),
            height: d.height(),
            invalid_count: d.invalid_count(),
            invalid_fraction_pct: metrics::invalid_fraction_pct(d.invalid_count() as f64, d.len()),
            corrected_count,
        });
    }
    let correction = if loaded.iter().all(|(_, r)| r.is_some()) {
        let before: Vec<DisparityRaster> = loaded.iter().map(|(d, _)| d.clone()).collect();
        let after: Vec<DisparityRaster> = loaded.iter().filter_map(|(_, r)| r.clone()).collect();
        metrics::corrected_pixels(&before, &after).ok()
    } else {
        None
    };
    if let Some(path) = csv_out {
        write_csv(path, &rows)?;
    }
    Ok(StatsSummary {
        rows,
        invalid,
        correction,
    })
}

// ---------------------------------------------------------------------------
// refine

#[derive(Debug, Clone, Serialize)]
struct TableRow {
    iteration: usize,
    accuracy_pct: f64,
    corrected_pct: Option<f64>,
    remaining_invalid_avg: f64,
    train_loss: f64,
}

impl From<&IterationReport> for TableRow {
    fn from(r: &IterationReport) -> Self {
        Self {
            iteration: r.iteration,
            accuracy_pct: r.accuracy_pct,
            corrected_pct: r.corrected_pct,
            remaining_invalid_avg: r.remaining_invalid_avg,
            train_loss: r.train_loss,
        }
    }
}

/// Iterative refinement over a manifest. Train/eval membership comes from the
/// manifest's `split` fields.
///
/// Layout of `out`: `iter_NN/<id>.png` refined targets and `iter_NN/model.ckpt`
/// per pass, `iter_NN/loss.csv`, `reports.jsonl`, `table.csv`, the effective
/// `config.toml` and `refined_manifest.jsonl` pointing at the last pass.
pub fn cmd_refine(manifest: &Manifest, cfg: &PipelineConfig, out: &Path) -> Result<Vec<IterationReport>> {
    if manifest.is_empty() {
        bail!("manifest is empty");
    }
    let is_eval = manifest.split_mask();
    if is_eval.iter().all(|&e| e) || is_eval.iter().all(|&e| !e) {
        bail!("manifest needs both train and eval entries");
    }
    let dataset = manifest
        .entries
        .par_iter()
        .map(|e| -> Result<_> { Ok((read_rgb_png(&e.rgb_path)?, read_disparity_png(&e.disparity_path)?)) })
        .collect::<Result<Vec<_>>>()?;

    create_dir(out)?;
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    let mut reports_out = BufWriter::new(File::create(out.join(REPORTS_FILE))?);
    let mut table = csv::Writer::from_path(out.join(TABLE_FILE))?;

    let outcome = iterative_refine_split(&dataset, &is_eval, &cfg.refine_config(), |a| {
        let dir = iteration_dir(out, a.report.iteration);
        let mut persist = || -> Result<()> {
            create_dir(&dir)?;
            manifest
                .entries
                .par_iter()
                .zip(a.targets)
                .try_for_each(|(e, t)| write_disparity_png(t, dir.join(format!("{}.png", e.id))))?;
            a.model.save(dir.join(CHECKPOINT_FILE))?;
            write_loss_trace(&dir.join("loss.csv"), a.loss_trace)?;
            serde_json::to_writer(&mut reports_out, a.report)?;
            reports_out.write_all(b"\n")?;
            reports_out.flush()?;
            table.serialize(TableRow::from(a.report))?;
            table.flush()?;
            Ok(())
        };
        persist().map_err(|e| depthfill_core::Error::Io(std::io::Error::other(format!("{e:#}"))))
    })?;

    let last = iteration_dir(out, outcome.reports.len());
    let entries = manifest
        .entries
        .iter()
        .map(|e| ManifestEntry {
            refined_path: Some(last.join(format!("{}.png", e.id))),
            ..e.clone()
        })
        .collect();
    Manifest { entries }.write(&out.join(REFINED_MANIFEST_FILE))?;
    Ok(outcome.reports)
}

// ---------------------------------------------------------------------------
// fill / correct

#[derive(Debug, Clone, Serialize)]
pub struct FillRow {
    pub id: String,
    pub invalid_before: usize,
    pub replaced: usize,
    pub remaining_invalid: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchSummary {
    pub images: usize,
    pub failed: usize,
    pub invalid_before_avg: f64,
    pub remaining_invalid_avg: f64,
    pub replaced_total: usize,
}

impl BatchSummary {
    fn from_rows(rows: &[FillRow], failed: usize) -> Self {
        let n = rows.len().max(1) as f64;
        Self {
            images: rows.len() + failed,
            failed,
            invalid_before_avg: rows.iter().map(|r| r.invalid_before).sum::<usize>() as f64 / n,
            remaining_invalid_avg: rows.iter().map(|r| r.remaining_invalid).sum::<usize>() as f64 / n,
            replaced_total: rows.iter().map(|r| r.replaced).sum(),
        }
    }
}

fn load_checkpoint(path: &Path, channels: usize) -> Result<PredictorModel> {
    let model = PredictorModel::load(path).with_context(|| format!("loading {}", path.display()))?;
    if model.spec().input_channels != channels {
        bail!(
            "{} holds a {}-channel model, this command needs {channels} channels",
            path.display(),
            model.spec().input_channels
        );
    }
    Ok(model)
}

/// Fill-in: every invalid disparity pixel takes the value the
/// RGB predictor assigns to it. Writes `<out>/<id>.png`, `fill.csv` and
/// `fill_summary.json`.
pub fn cmd_fill(manifest: &Manifest, checkpoint: &Path, out: &Path, split: Option<Split>) -> Result<BatchSummary> {
    let model = load_checkpoint(checkpoint, 3)?;
    create_dir(out)?;
    let entries = select(manifest, split);
    let (rows, failed) = run_batch(&entries, |e| {
        let rgb = read_rgb_png(&e.rgb_path)?;
        let target = read_disparity_png(&e.disparity_path)?;
        let prediction = model.predict(&rgb, target.dims())?;
        let outcome = fill_missing(&target, &prediction)?;
        write_disparity_png(&outcome.filled, out.join(format!("{}.png", e.id)))?;
        Ok(FillRow {
            id: e.id.clone(),
            invalid_before: target.invalid_count(),
            replaced: outcome.replaced_count,
            remaining_invalid: outcome.remaining_invalid,
        })
    });
    let summary = BatchSummary::from_rows(&rows, failed);
    write_csv(&out.join("fill.csv"), &rows)?;
    write_json(&out.join("fill_summary.json"), &summary)?;
    finish_batch("fill", entries.len(), failed)?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct CorrectSummary {
    pub batch: BatchSummary,
    /// Mean wall-clock per frame for the correction pass alone. Printed only;
    /// never written to output files so reruns stay byte-identical.
    pub mean_frame_ms: f64,
}

/// Applies a trained corrector to each disparity raster. Writes
/// `<out>/<id>.png`, `correct.csv` and `correct_summary.json`.
pub fn cmd_correct(manifest: &Manifest, checkpoint: &Path, out: &Path, split: Option<Split>) -> Result<CorrectSummary> {
    let model = load_checkpoint(checkpoint, 1)?;
    create_dir(out)?;
    let entries = select(manifest, split);
    let (results, failed) = run_batch(&entries, |e| {
        let holed = read_disparity_png(&e.disparity_path)?;
        let start = Instant::now();
        let fixed = correct(&model, &holed)?;
        let elapsed = start.elapsed();
        write_disparity_png(&fixed, out.join(format!("{}.png", e.id)))?;
        let row = FillRow {
            id: e.id.clone(),
            invalid_before: holed.invalid_count(),
            replaced: holed.invalid_count() - fixed.invalid_count(),
            remaining_invalid: fixed.invalid_count(),
        };
        Ok((row, elapsed))
    });
    let (rows, times): (Vec<FillRow>, Vec<_>) = results.into_iter().unzip();
    let batch = BatchSummary::from_rows(&rows, failed);
    write_csv(&out.join("correct.csv"), &rows)?;
    write_json(&out.join("correct_summary.json"), &batch)?;
    finish_batch("correct", entries.len(), failed)?;
    let mean_frame_ms = times.iter().map(|t| t.as_secs_f64() * 1e3).sum::<f64>() / times.len().max(1) as f64;
    Ok(CorrectSummary { batch, mean_frame_ms })
}

// ---------------------------------------------------------------------------
// train-corrector

/// Trains the second-stage corrector on the train-split (disparity, refined)
/// pairs of a refined manifest. Writes `corrector.ckpt` and `corrector_loss.csv`.
pub fn cmd_train_corrector(manifest: &Manifest, cfg: &PipelineConfig, out: &Path) -> Result<Vec<f64>> {
    let entries: Vec<&ManifestEntry> = manifest
        .entries
        .iter()
        .filter(|e| e.split == Split::Train && e.refined_path.is_some())
        .collect();
    if entries.is_empty() {
        bail!("manifest has no train entries with a refined_path; run `refine` first");
    }
    let pairs = entries
        .par_iter()
        .map(|e| -> Result<_> {
            let refined = e.refined_path.as_ref().expect("filtered above");
            Ok((read_disparity_png(&e.disparity_path)?, read_disparity_png(refined)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let outcome = train_corrector(&pairs, &cfg.network, &cfg.training)?;
    create_dir(out)?;
    outcome.model.save(out.join(CORRECTOR_FILE))?;
    write_loss_trace(&out.join("corrector_loss.csv"), &outcome.loss_trace)?;
    Ok(outcome.loss_trace)
}

// ---------------------------------------------------------------------------
// eval

/// Which manifest raster predictions are compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reference {
    #[default]
    Truth,
    Disparity,
    Refined,
}

impl Reference {
    fn path<'a>(&self, e: &'a ManifestEntry) -> Result<&'a Path> {
        match self {
            Reference::Disparity => Ok(&e.disparity_path),
            Reference::Truth => e
                .truth_path
                .as_deref()
                .ok_or_else(|| anyhow!("entry has no truth_path")),
            Reference::Refined => e
                .refined_path
                .as_deref()
                .ok_or_else(|| anyhow!("entry has no refined_path")),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalRow {
    pub id: String,
    pub accuracy_pct: f64,
    /// Undefined when the reference has no valid pixels.
    pub masked_accuracy_pct: Option<f64>,
    pub absolute_error_sum: u64,
    pub target_sum: u64,
    pub pred_invalid: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub images: usize,
    pub failed: usize,
    /// Pooled over all evaluated images.
    pub accuracy_pct: Option<f64>,
    pub masked_accuracy_pct: Option<f64>,
    pub pred_invalid_avg: f64,
}

/// Scores `<pred_dir>/<id>.png` against the chosen reference. Writes
/// `eval.csv` and `eval_summary.json`.
pub fn cmd_eval(
    manifest: &Manifest,
    pred_dir: &Path,
    reference: Reference,
    out: &Path,
    split: Option<Split>,
) -> Result<EvalSummary> {
    create_dir(out)?;
    let entries = select(manifest, split);
    let (pairs, failed) = run_batch(&entries, |e| {
        let pred = read_disparity_png(pred_dir.join(format!("{}.png", e.id)))?;
        let target = read_disparity_png(reference.path(e)?)?;
        let all = metrics::accuracy(&pred, &target)?;
        let row = EvalRow {
            id: e.id.clone(),
            accuracy_pct: all.accuracy_pct,
            masked_accuracy_pct: metrics::accuracy_masked(&pred, &target).ok().map(|s| s.accuracy_pct),
            absolute_error_sum: all.absolute_error_sum,
            target_sum: all.target_sum,
            pred_invalid: pred.invalid_count(),
        };
        Ok((row, pred, target))
    });
    let pooled = |scope| {
        metrics::dataset_accuracy(pairs.iter().map(|(_, p, t)| (p, t)), scope)
            .ok()
            .map(|s| s.accuracy_pct)
    };
    let summary = EvalSummary {
        images: entries.len(),
        failed,
        accuracy_pct: pooled(AccuracyScope::AllPixels),
        masked_accuracy_pct: pooled(AccuracyScope::ValidTarget),
        pred_invalid_avg: pairs.iter().map(|(r, _, _)| r.pred_invalid).sum::<usize>() as f64
            / pairs.len().max(1) as f64,
    };
    let rows: Vec<&EvalRow> = pairs.iter().map(|(r, _, _)| r).collect();
    write_csv(&out.join("eval.csv"), &rows)?;
    write_json(&out.join("eval_summary.json"), &summary)?;
    finish_batch("eval", entries.len(), failed)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// manifest

const RGB_SUFFIX: &str = "_leftImg8bit.png";
const DISPARITY_SUFFIX: &str = "_disparity.png";

/// Builds a manifest from a Cityscapes-style tree:
/// `<root>/leftImg8bit/<split>/<city>/<name>_leftImg8bit.png` paired with
/// `<root>/disparity/<split>/<city>/<name>_disparity.png`. The `train` and
/// `train_extra` folders map to the train split, everything else to eval.
/// Images without a disparity file are skipped and counted.
pub fn cmd_manifest(root: &Path, out: &Path) -> Result<(usize, usize)> {
    let rgb_root = root.join("leftImg8bit");
    if !rgb_root.is_dir() {
        bail!("{} is not a directory", rgb_root.display());
    }
    let base = root.canonicalize()?;
    let mut entries = Vec::new();
    let mut skipped = 0;
    for item in WalkDir::new(&rgb_root).sort_by_file_name() {
        let item = item?;
        let name = item.file_name().to_string_lossy();
        let Some(stem) = name.strip_suffix(RGB_SUFFIX) else {
            continue;
        };
        let rel = item.path().strip_prefix(&rgb_root)?;
        let split_dir = rel
            .components()
            .next()
            .map(|c| c.as_os_str().to_string_lossy().into_owned());
        let split = match split_dir.as_deref() {
            Some("train" | "train_extra") => Split::Train,
            _ => Split::Eval,
        };
        let disparity = root
            .join("disparity")
            .join(rel.parent().unwrap_or(Path::new("")))
            .join(format!("{stem}{DISPARITY_SUFFIX}"));
        if !disparity.is_file() {
            skipped += 1;
            continue;
        }
        entries.push(ManifestEntry {
            id: stem.to_string(),
            rgb_path: base.join("leftImg8bit").join(rel),
            disparity_path: disparity.canonicalize()?,
            split,
            truth_path: None,
            refined_path: None,
        });
    }
    let manifest = Manifest { entries };
    manifest.validate()?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    manifest.write(out)?;
    Ok((manifest.len(), skipped))
}
