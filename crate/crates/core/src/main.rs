use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use curriculum_depth::augmentation::{Weather, WeatherConfig, WeatherVariantId};
use curriculum_depth::evaluation::{evaluate, EvalConfig};
use curriculum_depth::geometry::CameraRig;
use curriculum_depth::model::Checkpoint;
use curriculum_depth::synthdata::{augment_dataset, generate_dataset, Dataset};
use curriculum_depth::trainer::{run_training, TrainConfig};

#[derive(Parser)]
#[command(name = "ccdepth", version, about = "Weather-robust self-supervised stereo depth training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic stereo dataset with ground-truth depth.
    Synth {
        #[arg(long, default_value_t = 200)]
        scenes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 192)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
    },
    /// Add weather variants of the left views to a dataset.
    Augment {
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated subset of rain, snow, fog.
        #[arg(long, value_delimiter = ',', default_value = "rain,snow,fog")]
        weathers: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "1,2")]
        magnitudes: Vec<u8>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fog visibility in meters at magnitude 1.
        #[arg(long, default_value_t = 150.0)]
        visibility_m1: f64,
        #[arg(long, default_value_t = 75.0)]
        visibility_m2: f64,
    },
    /// Train from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset and write a JSON report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated variant ids such as clear_0,fog_2; all seven by default.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        median_scaling: bool,
    },
}

fn parse_variants(items: &[String]) -> Result<Vec<WeatherVariantId>> {
    if items.is_empty() {
        return Ok(WeatherVariantId::all());
    }
    items
        .iter()
        .map(|s| s.trim().parse().with_context(|| format!("bad variant {s:?}")))
        .collect()
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Synth {
            scenes,
            seed,
            out,
            width,
            height,
        } => {
            let rig = CameraRig::for_resolution(width, height);
            rig.validate()?;
            let ds = generate_dataset(&out, scenes, seed, &rig)?;
            log::info!("wrote {} frames to {}", ds.len(), out.display());
        }
        Command::Augment {
            dataset,
            weathers,
            magnitudes,
            seed,
            visibility_m1,
            visibility_m2,
        } => {
            let mut variants = Vec::new();
            for w in &weathers {
                let weather: Weather = w.trim().parse()?;
                if weather == Weather::Clear {
                    bail!("clear is not a weather variant to render");
                }
                for &m in &magnitudes {
                    variants.push(WeatherVariantId::new(weather, m)?);
                }
            }
            let config = WeatherConfig {
                fog_visibility: [visibility_m1, visibility_m2],
                ..WeatherConfig::default()
            };
            let ds = Dataset::load(&dataset)?;
            let ds = augment_dataset(&ds, &variants, seed, &config)?;
            log::info!("{} frames now carry {} variants", ds.len(), ds.variants().len());
        }
        Command::Train { config, resume, out } => {
            let cfg = TrainConfig::from_json_file(&config)?;
            let outcome = run_training(&cfg, resume.as_deref(), Some(&out))?;
            log::info!(
                "trained {} epochs, finished at level {}",
                outcome.epochs_done,
                outcome.state.level
            );
        }
        Command::Eval {
            checkpoint,
            dataset,
            variants,
            out,
            median_scaling,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let ds = Dataset::load(&dataset)?;
            let config = EvalConfig {
                median_scaling,
                ..EvalConfig::default()
            };
            let report = evaluate(&ckpt.net, &ds, &parse_variants(&variants)?, &config)?;
            for missing in report.missing() {
                log::warn!("variant {missing} not present in dataset; reported as null");
            }
            report.write_json(&out)?;
            if let Some(avg) = report.average {
                log::info!("average absrel {:.4}, a1 {:.4}", avg.absrel, avg.a1);
            }
        }
    }
    Ok(())
}
