//! Training runs on disk, and greedy replay of a saved checkpoint.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::RunConfig;
use super::export::{export_heatmap, write_file, Heatmap, HeatmapFormat};
use crate::agent::rollout::{ensemble_action, ActionSource};
use crate::agent::train::{Checkpoint, Trainer, METRICS_HEADER};
use crate::env::{self, Action, GridSpec};
use crate::nn::argmax;
use crate::{Error, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const EPISODES_FILE: &str = "episodes.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const VISITS_PGM: &str = "visits.pgm";
pub const VISITS_CSV: &str = "visits.csv";

/// Paths written by a finished run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutputs {
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
}

/// The `#` line that opens a metrics file.
pub fn metrics_preamble(cfg: &RunConfig) -> String {
    format!(
        "# config_hash={:016x} seed={} version={}",
        cfg.hash(),
        cfg.seed,
        env!("CARGO_PKG_VERSION")
    )
}

fn write_manifest(path: &Path, cfg: &RunConfig, status: &str, wall: f64, error: Option<&str>) -> Result<()> {
    let config: serde_json::Map<String, serde_json::Value> =
        cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v.into())).collect();
    let manifest = serde_json::json!({
        "status": status,
        "seed": cfg.seed,
        "config_hash": format!("{:016x}", cfg.hash()),
        "version": env!("CARGO_PKG_VERSION"),
        "wall_time_secs": wall,
        "error": error,
        "config": config,
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest is plain JSON");
    write_file(path, text.as_bytes())
}

struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    fn create(path: PathBuf, preamble: &str) -> Result<Self> {
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = MetricsWriter { path, out: BufWriter::new(file) };
        w.line(preamble)?;
        w.line(METRICS_HEADER)?;
        Ok(w)
    }

    /// Flushed per line so a killed run leaves a parseable prefix.
    fn line(&mut self, line: &str) -> Result<()> {
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

fn episodes_csv(trainer: &Trainer) -> String {
    let mut s = String::from("index,update,env,length,terminal,total_return\n");
    for e in &trainer.fleet.episodes {
        writeln!(s, "{},{},{},{},{},{}", e.index, e.update, e.env, e.length, e.terminal.as_str(), e.total_return)
            .unwrap();
    }
    s
}

fn drive(cfg: &RunConfig, out: &Path, metrics: &mut MetricsWriter) -> Result<Trainer> {
    let mut trainer = Trainer::new(cfg.train_config()?)?;
    for _ in 0..cfg.num_update {
        let row = trainer.step()?;
        metrics.line(&row.csv_line())?;
    }
    write_file(&out.join(EPISODES_FILE), episodes_csv(&trainer).as_bytes())?;
    write_file(&out.join(CHECKPOINT_FILE), &trainer.checkpoint().to_bytes())?;
    let visits = Heatmap::from_counts(&trainer.fleet.spec, &trainer.fleet.visit_counts)?;
    export_heatmap(&visits, &out.join(VISITS_PGM), HeatmapFormat::Pgm)?;
    export_heatmap(&visits, &out.join(VISITS_CSV), HeatmapFormat::Csv)?;
    Ok(trainer)
}

/// Trains under `cfg`, writing every artifact into `out`. On failure the
/// rows written so far stay on disk and the manifest says `failed`.
pub fn run_experiment(cfg: &RunConfig, out: &Path) -> Result<RunOutputs> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let outputs = RunOutputs {
        metrics: out.join(METRICS_FILE),
        checkpoint: out.join(CHECKPOINT_FILE),
        manifest: out.join(MANIFEST_FILE),
    };
    let started = Instant::now();
    write_manifest(&outputs.manifest, cfg, "running", 0.0, None)?;
    let mut metrics = MetricsWriter::create(outputs.metrics.clone(), &metrics_preamble(cfg))?;
    match drive(cfg, out, &mut metrics) {
        Ok(_) => {
            write_manifest(&outputs.manifest, cfg, "completed", started.elapsed().as_secs_f64(), None)?;
            Ok(outputs)
        }
        Err(e) => {
            // The original error matters more than a second write failing.
            let _ = write_manifest(
                &outputs.manifest,
                cfg,
                "failed",
                started.elapsed().as_secs_f64(),
                Some(&e.to_string()),
            );
            Err(e)
        }
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

pub const REPLAY_HEADER: &str = "episode,step,state,action,reward,source";

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    /// One ASCII frame per step, starting with the reset frame.
    pub render: String,
    pub csv: String,
    pub returns: Vec<f64>,
}

/// Greedy rollouts: the gated memory action when it fires, else the base
/// policy's most likely action.
pub fn replay(ckpt: &Checkpoint, spec: &GridSpec, episodes: usize, kappa: f64) -> Result<Replay> {
    ckpt.check_compatible(spec)?;
    let memory = ckpt.memory_nets();
    let mut render = String::new();
    let mut csv = format!("{REPLAY_HEADER}\n");
    let mut returns = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let (mut state, mut obs) = env::reset(spec, 0);
        writeln!(render, "episode {ep} step 0").unwrap();
        render.push_str(&env::render(spec, Some(state.position)));
        let mut total = 0.0;
        let mut t = 0;
        while !state.done {
            let choice = ensemble_action(&ckpt.policy, memory, &obs, kappa, true, 0.0)?;
            let action = match choice.source {
                ActionSource::Memory => choice.action,
                ActionSource::Base => argmax(&choice.probs),
            };
            let state_index = obs.index();
            let (next, info) = env::step_mut(&mut state, spec, Action::from_index(action)?)?;
            t += 1;
            total += info.reward;
            writeln!(
                csv,
                "{ep},{t},{state_index},{},{},{}",
                Action::ALL[action].arrow(),
                info.reward,
                choice.source.as_str()
            )
            .unwrap();
            writeln!(render, "episode {ep} step {t} action {}", Action::ALL[action].arrow()).unwrap();
            render.push_str(&env::render(spec, Some(state.position)));
            obs = next;
        }
        returns.push(total);
    }
    Ok(Replay { render, csv, returns })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        let mut cfg = RunConfig::default();
        for (k, v) in [("Env", "dark_chamber"), ("GridWidth", "8"), ("GridHeight", "8"), ("NumEnv", "4"), ("NumStep", "8"),
            ("OriPolicyEnvNum", "2"), ("NumUpdate", "2"), ("ObsNormStep", "1")]
        {
            cfg.set(k, v).unwrap();
        }
        cfg
    }

    #[test]
    fn two_updates_give_two_rows() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&tiny(), dir.path()).unwrap();
        let text = std::fs::read_to_string(&out.metrics).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# config_hash="));
        assert_eq!(lines[1], METRICS_HEADER);
        assert_eq!(lines.len(), 4);
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&out.manifest).unwrap()).unwrap();
        assert_eq!(manifest["status"], "completed");
        assert!(dir.path().join(VISITS_PGM).exists());
    }

    #[test]
    fn zero_episode_replay_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny();
        let out = run_experiment(&cfg, dir.path()).unwrap();
        let ckpt = load_checkpoint(&out.checkpoint).unwrap();
        let r = replay(&ckpt, &cfg.grid_spec().unwrap(), 0, 0.85).unwrap();
        assert_eq!(r.csv, format!("{REPLAY_HEADER}\n"));
        let again = replay(&ckpt, &cfg.grid_spec().unwrap(), 2, 0.85).unwrap();
        assert_eq!(again, replay(&ckpt, &cfg.grid_spec().unwrap(), 2, 0.85).unwrap());
    }

    #[test]
    fn replay_rejects_other_grid_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&tiny(), dir.path()).unwrap();
        let ckpt = load_checkpoint(&out.checkpoint).unwrap();
        let mut other = tiny();
        other.set("GridWidth", "9").unwrap();
        assert!(matches!(replay(&ckpt, &other.grid_spec().unwrap(), 1, 0.85), Err(Error::Compatibility(_))));
    }
}
