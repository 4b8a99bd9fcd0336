use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use adamemento::harness::export::{self, write_file, HeatmapFormat};
use adamemento::harness::verify::{self, Sizes, Theorem, VERIFY_HEADER};
use adamemento::harness::{load_checkpoint, parse_config, replay, run_experiment, split_override, RunConfig};
use adamemento::{Error, Result};

#[derive(Parser)]
#[command(name = "adamemento", version, about = "Memory-reflection agents on gridworlds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat `key = value` file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// cliff_walking, four_rooms or dark_chamber.
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    no_memory: bool,
    #[arg(long)]
    no_curiosity: bool,
    /// Drop the latent sparsity term (λ = 0).
    #[arg(long)]
    no_f_discriminator: bool,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut overrides = self.set.iter().map(|s| split_override(s)).collect::<Result<Vec<_>>>()?;
        let mut push = |k: &str, v: String| overrides.push((k.to_string(), v));
        if let Some(seed) = self.seed {
            push("Seed", seed.to_string());
        }
        if let Some(env) = &self.env {
            push("Env", env.clone());
        }
        for (flag, key) in [
            (self.no_memory, "DisableMemory"),
            (self.no_curiosity, "DisableCuriosity"),
            (self.no_f_discriminator, "DisableFDiscriminator"),
        ] {
            if flag {
                push(key, "true".into());
            }
        }
        parse_config(self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write metrics, episodes, checkpoint and heatmaps.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
    },
    /// Check the shaping and gating guarantees on random tabular MDPs.
    Verify {
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
        #[arg(long, default_value_t = 1000)]
        count: u64,
        /// 1, 2, or both.
        #[arg(long, default_value = "both")]
        theorem: String,
        /// Per-instance CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-cell intrinsic reward of a checkpoint's autoencoder.
    NoveltyMap {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "novelty")]
        out: PathBuf,
    },
    /// Per-cell reflection confidence of a checkpoint.
    InspectConfidence {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "confidence.csv")]
        out: PathBuf,
    },
    /// Trajectories held in a checkpoint's memory buffer.
    DumpMemory {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "memory.csv")]
        out: PathBuf,
    },
    /// Greedy rollouts of a checkpoint, rendered as ASCII frames.
    Replay {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1)]
        episodes: usize,
        /// Directory for replay.txt and replay.csv; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Line charts of a metrics CSV.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, default_value = "metrics.svg")]
        out: PathBuf,
    },
}

enum Failure {
    Config(Error),
    Runtime(Error),
    Verify(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::Usage(_) => Failure::Config(e),
            e => Failure::Runtime(e),
        }
    }
}

fn config_stage<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(Failure::Config)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn run(cli: Cli) -> std::result::Result<(), Failure> {
    match cli.command {
        Command::Train { cfg, out } => {
            let cfg = config_stage(cfg.load())?;
            let outputs = run_experiment(&cfg, &out)?;
            println!("metrics: {}", outputs.metrics.display());
            println!("checkpoint: {}", outputs.checkpoint.display());
        }
        Command::Verify { first_seed, count, theorem, out } => {
            let theorems = match theorem.as_str() {
                "1" => vec![Theorem::ShapingInvariance],
                "2" => vec![Theorem::GatedImprovement],
                "both" => vec![Theorem::ShapingInvariance, Theorem::GatedImprovement],
                other => {
                    return Err(Failure::Config(Error::config("theorem", format!("expected 1, 2 or both, got `{other}`"))))
                }
            };
            if count == 0 {
                return Err(Failure::Config(Error::config("count", "must be at least 1")));
            }
            let (rows, summary) = verify::verify(first_seed..=first_seed + count - 1, &theorems, &Sizes::default());
            let mut csv = format!("{VERIFY_HEADER}\n");
            for r in &rows {
                csv.push_str(&r.csv_line());
                csv.push('\n');
            }
            match out {
                Some(path) => write_file(&path, csv.as_bytes())?,
                None => print!("{csv}"),
            }
            println!(
                "# instances={} failures={} resampled={}",
                summary.instances, summary.failures, summary.resampled
            );
            if summary.failures > 0 {
                return Err(Failure::Verify(summary.failures));
            }
        }
        Command::NoveltyMap { cfg, checkpoint, out } => {
            let spec = config_stage(cfg.load().and_then(|c| c.grid_spec()))?;
            let ckpt = load_checkpoint(&checkpoint)?;
            ckpt.check_compatible(&spec)?;
            let cells = export::novelty_grid(&ckpt.ae, &spec)?;
            create_dir(&out)?;
            write_file(&out.join("novelty.csv"), export::novelty_csv(&spec, &cells).as_bytes())?;
            export::export_heatmap(&export::novelty_heatmap(&spec, &cells), &out.join("novelty.pgm"), HeatmapFormat::Pgm)?;
        }
        Command::InspectConfidence { cfg, checkpoint, out } => {
            let spec = config_stage(cfg.load().and_then(|c| c.grid_spec()))?;
            let ckpt = load_checkpoint(&checkpoint)?;
            ckpt.check_compatible(&spec)?;
            write_file(&out, export::confidence_csv(&ckpt.pred, &ckpt.refl, &spec)?.as_bytes())?;
        }
        Command::DumpMemory { checkpoint, out } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            write_file(&out, export::memory_csv(&ckpt.mbuf).as_bytes())?;
        }
        Command::Replay { cfg, checkpoint, episodes, out } => {
            let cfg = config_stage(cfg.load())?;
            let spec = config_stage(cfg.grid_spec())?;
            let ckpt = load_checkpoint(&checkpoint)?;
            let r = replay(&ckpt, &spec, episodes, cfg.confidence)?;
            match out {
                Some(dir) => {
                    create_dir(&dir)?;
                    write_file(&dir.join("replay.txt"), r.render.as_bytes())?;
                    write_file(&dir.join("replay.csv"), r.csv.as_bytes())?;
                }
                None => print!("{}{}", r.render, r.csv),
            }
        }
        Command::Plot { metrics, out } => {
            let text = std::fs::read_to_string(&metrics).map_err(|e| Error::io(&metrics, e))?;
            let table = export::parse_metrics(&text)?;
            write_file(&out, export::plot_svg(&table).as_bytes())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Verify(n)) => {
            eprintln!("verification failed on {n} instances");
            ExitCode::from(3)
        }
    }
}
