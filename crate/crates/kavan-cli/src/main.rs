//! Command-line interface: dataset generation, training, evaluation,
//! gradient checking, and heatmap/mask inspection.
//!
//! Exit codes: 0 on success, 2 on validation/configuration failures,
//! 3 when training aborts on a non-finite loss.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kavan_core::data::{
    generate_synthetic, load_dataset, sample_frames, save_dataset, EmotionTaxonomy, GifSample,
    SampleMode, SamplerConfig, SyntheticConfig,
};
use kavan_core::heatmap::{build_supervision, write_pgm};
use kavan_core::model::KavanParams;
use kavan_core::train::{
    dump_masks, evaluate, gradcheck, train, GradcheckConfig, MetricsReport, RunConfig,
};
use kavan_core::Error;

#[derive(Parser)]
#[command(
    name = "kavan",
    about = "Keypoint-attended visual attention network for GIF emotion recognition",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TaxonomyArg {
    /// Emotion taxonomy JSON; defaults to the bundled 17-emotion map.
    #[arg(long)]
    taxonomy: Option<PathBuf>,
}

impl TaxonomyArg {
    fn load(&self) -> Result<EmotionTaxonomy, Error> {
        match &self.taxonomy {
            Some(path) => EmotionTaxonomy::load(path),
            None => Ok(EmotionTaxonomy::default()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic planted-face dataset (JSON-lines).
    Generate {
        /// Number of samples.
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output dataset path.
        #[arg(long)]
        out: PathBuf,
        /// Frames per GIF.
        #[arg(long, default_value_t = 16)]
        frames: usize,
        /// Frame side length in pixels.
        #[arg(long, default_value_t = 64)]
        resolution: usize,
    },
    /// Train on a dataset and write parameters plus a metrics report.
    Train {
        /// Run configuration JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training dataset (JSON-lines).
        #[arg(long)]
        data: PathBuf,
        /// Output directory for params.json and report.json.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        taxonomy: TaxonomyArg,
    },
    /// Evaluate saved parameters on a dataset.
    Eval {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report JSON path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        taxonomy: TaxonomyArg,
    },
    /// Check every gradient of a tiny end-to-end model against central
    /// finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Report JSON path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit one sample's per-frame supervision heatmaps as JSON grids.
    Heatmap {
        #[arg(long)]
        data: PathBuf,
        /// Sample index within the dataset.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Frames to sample per GIF.
        #[arg(long, default_value_t = 8)]
        frames: usize,
        /// Also write PGM images for visual inspection.
        #[arg(long)]
        pgm: bool,
        #[command(flatten)]
        taxonomy: TaxonomyArg,
    },
    /// Dump predicted attention masks next to their supervision heatmaps.
    DumpMasks {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Also write PGM images.
        #[arg(long)]
        pgm: bool,
        #[command(flatten)]
        taxonomy: TaxonomyArg,
    },
}

fn pick_sample(dataset: &[GifSample], index: usize) -> Result<&GifSample, Error> {
    dataset.get(index).ok_or_else(|| {
        Error::Contract(format!(
            "sample index {index} out of range for {} samples",
            dataset.len()
        ))
    })
}

fn write_report(report: &MetricsReport, out: Option<&Path>) -> Result<(), Error> {
    let json = serde_json::to_string_pretty(report)?;
    match out {
        Some(path) => std::fs::write(path, json + "\n")?,
        None => println!("{json}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate {
            count,
            seed,
            out,
            frames,
            resolution,
        } => {
            if count == 0 {
                return Err(Error::Config("count must be positive".into()));
            }
            let cfg = SyntheticConfig {
                n_frames: frames,
                resolution,
                seed,
                ..SyntheticConfig::default()
            };
            let samples = generate_synthetic(count, &cfg)?;
            save_dataset(&samples, &out)?;
            eprintln!("wrote {} samples to {}", samples.len(), out.display());
        }
        Command::Train {
            config,
            data,
            out,
            seed,
            taxonomy,
        } => {
            let mut cfg = match config {
                Some(path) => RunConfig::load(&path)?,
                None => RunConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let taxonomy = taxonomy.load()?;
            let dataset = load_dataset(&data, &taxonomy)?;
            let outcome = train(&cfg, &dataset, &taxonomy)?;
            std::fs::create_dir_all(&out)?;
            outcome.params.save(&out.join("params.json"))?;
            write_report(&outcome.report, Some(&out.join("report.json")))?;
            let last = outcome
                .history
                .last()
                .expect("training ran at least one step");
            eprintln!(
                "trained {} steps in {:.1}s; final loss {:.6}; train accuracy {:.3}",
                outcome.steps_run,
                outcome.report.runtime_secs,
                last.loss.total,
                outcome.report.averaged.accuracy,
            );
        }
        Command::Eval {
            params,
            data,
            out,
            taxonomy,
        } => {
            let params = KavanParams::load(&params)?;
            let taxonomy = taxonomy.load()?;
            let dataset = load_dataset(&data, &taxonomy)?;
            let started = std::time::Instant::now();
            let metrics = evaluate(&params, &dataset, &taxonomy)?;
            let report =
                MetricsReport::from_splits(vec![metrics], started.elapsed().as_secs_f64());
            write_report(&report, out.as_deref())?;
        }
        Command::Gradcheck { seed, out } => {
            let report = gradcheck(&GradcheckConfig {
                seed,
                ..GradcheckConfig::default()
            })?;
            let json = serde_json::to_string_pretty(&report)?;
            match out {
                Some(path) => std::fs::write(path, json + "\n")?,
                None => println!("{json}"),
            }
            if !report.passed {
                return Err(Error::Config(format!(
                    "gradient check failed: max relative error {:.3e} at {}",
                    report.max_relative_error, report.worst_parameter
                )));
            }
            eprintln!(
                "gradcheck passed: {} values, max relative error {:.3e} ({:.2}s)",
                report.parameters_checked, report.max_relative_error, report.runtime_secs
            );
        }
        Command::Heatmap {
            data,
            index,
            out,
            frames,
            pgm,
            taxonomy,
        } => {
            let taxonomy = taxonomy.load()?;
            let dataset = load_dataset(&data, &taxonomy)?;
            let sample = pick_sample(&dataset, index)?;
            let sampler = SamplerConfig {
                t: frames,
                mode: SampleMode::Center,
                seed: 0,
            };
            let picked = sample_frames(sample.n_frames(), &sampler)?;
            let keypoints: Vec<_> = picked
                .iter()
                .map(|&i| sample.keypoints[i].clone())
                .collect();
            let heatmaps = build_supervision(&keypoints, &Default::default())?;
            std::fs::create_dir_all(&out)?;
            for (t, heatmap) in heatmaps.iter().enumerate() {
                let json_path = out.join(format!("frame_{t:02}_heatmap.json"));
                std::fs::write(&json_path, serde_json::to_string(&heatmap.grid)?)?;
                if pgm {
                    write_pgm(&heatmap.grid, &out.join(format!("frame_{t:02}_heatmap.pgm")))?;
                }
            }
            eprintln!(
                "wrote {} heatmaps for sample `{}` to {}",
                heatmaps.len(),
                sample.id,
                out.display()
            );
        }
        Command::DumpMasks {
            params,
            data,
            index,
            out,
            pgm,
            taxonomy,
        } => {
            let params = KavanParams::load(&params)?;
            let taxonomy = taxonomy.load()?;
            let dataset = load_dataset(&data, &taxonomy)?;
            let sample = pick_sample(&dataset, index)?;
            let files = dump_masks(&params, sample, &taxonomy, &out, pgm)?;
            eprintln!("wrote {} files to {}", files.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::NumericAbort { .. } => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
