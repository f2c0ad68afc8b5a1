use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use depthfill_cli::commands::{self, Reference};
use depthfill_cli::{Manifest, PipelineConfig, Split};

#[derive(Parser)]
#[command(name = "depthfill", version, about = "Depth-map completion over disparity datasets")]
struct Cli {
    /// Worker threads for per-image work and training (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    All,
    Train,
    Eval,
}

impl SplitArg {
    fn filter(self) -> Option<Split> {
        match self {
            SplitArg::All => None,
            SplitArg::Train => Some(Split::Train),
            SplitArg::Eval => Some(Split::Eval),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ReferenceArg {
    Truth,
    Disparity,
    Refined,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes and a manifest.
    Synth {
        #[arg(long)]
        config: PathBuf,
        /// Number of scenes.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Invalid-pixel statistics for a manifest.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        /// Per-image CSV output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Iterative self-training refinement.
    Refine {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        iterations: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fill invalid pixels with an RGB predictor's output.
    Fill {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitArg,
    },
    /// Fill invalid pixels with a trained corrector.
    Correct {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitArg,
    },
    /// Train a corrector on a refined manifest.
    TrainCorrector {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score predicted rasters against a manifest reference.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "truth")]
        against: ReferenceArg,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitArg,
    },
    /// Build a manifest from a Cityscapes-style directory tree.
    Manifest {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Path, iterations: Option<u64>, seed: Option<u64>, out: Option<&Path>) -> Result<PipelineConfig> {
    PipelineConfig::load(path)?.with_overrides(iterations.map(|k| k as usize), seed, out)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring worker pool")?;
    }
    match cli.command {
        Command::Synth { config, n, out, seed } => {
            let cfg = load_config(&config, None, seed, out.as_deref())?;
            let s = commands::cmd_synth(&cfg, n as usize, &cfg.output_dir)?;
            println!("wrote {} samples, manifest {}", s.images, s.manifest_path.display());
            println!("average invalid pixels: {:.2}", s.average_invalid);
            println!("invalid fraction: {:.2}%", s.invalid_fraction_pct);
        }
        Command::Stats { manifest, out } => {
            let s = commands::cmd_stats(&Manifest::load(&manifest)?, out.as_deref())?;
            println!("id,invalid_count,invalid_fraction_pct,corrected_count");
            for r in &s.rows {
                let corrected = r.corrected_count.map(|c| c.to_string()).unwrap_or_default();
                println!(
                    "{},{},{:.2},{}",
                    r.id, r.invalid_count, r.invalid_fraction_pct, corrected
                );
            }
            println!("average invalid pixels: {:.2}", s.invalid.average_invalid);
            println!("invalid fraction: {:.2}%", s.invalid.invalid_fraction_pct);
            if let Some(c) = &s.correction {
                println!("corrected pixels: {:.2}%", c.corrected_pct);
            }
        }
        Command::Refine {
            manifest,
            config,
            out,
            iterations,
            seed,
        } => {
            let cfg = load_config(&config, iterations, seed, out.as_deref())?;
            let reports = commands::cmd_refine(&Manifest::load(&manifest)?, &cfg, &cfg.output_dir)?;
            println!("iteration,accuracy_pct,corrected_pct,remaining_invalid_avg,train_loss");
            for r in &reports {
                let corrected = r.corrected_pct.map(|c| format!("{c:.2}")).unwrap_or_default();
                println!(
                    "{},{:.2},{},{:.2},{:.6}",
                    r.iteration, r.accuracy_pct, corrected, r.remaining_invalid_avg, r.train_loss
                );
            }
        }
        Command::Fill {
            manifest,
            checkpoint,
            out,
            split,
        } => {
            let s = commands::cmd_fill(&Manifest::load(&manifest)?, &checkpoint, &out, split.filter())?;
            println!(
                "filled {} images, {} pixels replaced, {:.2} invalid remaining on average",
                s.images, s.replaced_total, s.remaining_invalid_avg
            );
        }
        Command::Correct {
            manifest,
            checkpoint,
            out,
            split,
        } => {
            let s = commands::cmd_correct(&Manifest::load(&manifest)?, &checkpoint, &out, split.filter())?;
            println!(
                "corrected {} images, {:.2} invalid remaining on average, {:.2} ms per frame",
                s.batch.images, s.batch.remaining_invalid_avg, s.mean_frame_ms
            );
        }
        Command::TrainCorrector {
            manifest,
            config,
            out,
            seed,
        } => {
            let cfg = load_config(&config, None, seed, out.as_deref())?;
            let trace = commands::cmd_train_corrector(&Manifest::load(&manifest)?, &cfg, &cfg.output_dir)?;
            println!(
                "trained corrector for {} epochs, final loss {:.6}",
                trace.len(),
                trace.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Eval {
            manifest,
            pred_dir,
            out,
            against,
            split,
        } => {
            let reference = match against {
                ReferenceArg::Truth => Reference::Truth,
                ReferenceArg::Disparity => Reference::Disparity,
                ReferenceArg::Refined => Reference::Refined,
            };
            let s = commands::cmd_eval(&Manifest::load(&manifest)?, &pred_dir, reference, &out, split.filter())?;
            let fmt = |v: Option<f64>| v.map(|a| format!("{a:.2}%")).unwrap_or_else(|| "undefined".into());
            println!(
                "{} images: accuracy {}, masked accuracy {}",
                s.images,
                fmt(s.accuracy_pct),
                fmt(s.masked_accuracy_pct)
            );
        }
        Command::Manifest { root, out } => {
            let (n, skipped) = commands::cmd_manifest(&root, &out)?;
            println!(
                "wrote {n} entries to {} ({skipped} images without disparity skipped)",
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
