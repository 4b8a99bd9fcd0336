//! Vectorized environment stepping with the ensemble gate.

use std::collections::VecDeque;

use rand::Rng as _;

use super::policy::{sample_categorical, PolicyNet};
use super::EnsembleConfig;
use crate::curiosity::{self, CoarseFineModel, RunningNormalizer};
use crate::env::{self, Action, EnvState, GridSpec, Observation};
use crate::memory::{finalize_trajectory, MBuffer, RBuffer, Step, TerminalKind};
use crate::memrefl::{self, PredictionNet, ReflectionNet};
use crate::nn::LOG_CLAMP;
use crate::seed::Rng;
use crate::Result;

/// Returns averaged for `mean_ext_return`.
pub const RETURN_WINDOW: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSource {
    Base,
    Memory,
}

impl ActionSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionSource::Base => "base",
            ActionSource::Memory => "memory",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleChoice {
    pub action: usize,
    pub source: ActionSource,
    /// Base policy distribution at the observation.
    pub probs: Vec<f64>,
    pub confidence: Option<f64>,
}

/// Takes the predicted action when its confidence reaches κ, otherwise
/// samples the base policy with the uniform draw `u`. The memory branch is
/// only consulted on ensemble envs once the predictor has been trained.
pub fn ensemble_action(
    policy: &PolicyNet,
    memory: Option<(&PredictionNet, &ReflectionNet)>,
    obs: &Observation,
    kappa: f64,
    env_is_ensemble: bool,
    u: f64,
) -> Result<EnsembleChoice> {
    gate(policy.probs(obs)?, memory, obs, kappa, env_is_ensemble, u)
}

fn gate(
    probs: Vec<f64>,
    memory: Option<(&PredictionNet, &ReflectionNet)>,
    obs: &Observation,
    kappa: f64,
    env_is_ensemble: bool,
    u: f64,
) -> Result<EnsembleChoice> {
    let mut confidence = None;
    if let (true, Some((pred, refl))) = (env_is_ensemble, memory) {
        if pred.train_steps > 0 {
            let (predicted, _) = memrefl::predict_action(pred, obs)?;
            let c = memrefl::confidence(refl, obs, predicted)?;
            if c >= kappa {
                return Ok(EnsembleChoice { action: predicted, source: ActionSource::Memory, probs, confidence: Some(c) });
            }
            confidence = Some(c);
        }
    }
    let action = sample_categorical(&probs, u);
    Ok(EnsembleChoice { action, source: ActionSource::Base, probs, confidence })
}

/// One finished episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    /// Completion order across all envs, from 0.
    pub index: usize,
    pub update: usize,
    pub env: usize,
    /// Moves taken, including a fatal one.
    pub length: usize,
    pub terminal: TerminalKind,
    pub total_return: f64,
}

#[derive(Debug, Clone)]
struct Slot {
    state: EnvState,
    obs: Observation,
    steps: Vec<Step>,
    sources: Vec<ActionSource>,
    episode_return: f64,
}

/// The env fleet plus run-level bookkeeping that outlives episodes.
#[derive(Debug, Clone)]
pub struct EnvFleet {
    pub spec: GridSpec,
    slots: Vec<Slot>,
    pub visited: Vec<bool>,
    /// Visit counts summed over every env and episode.
    pub visit_counts: Vec<u64>,
    pub cliff_falls: u64,
    pub episodes: Vec<EpisodeRecord>,
    pub recent_returns: VecDeque<f64>,
}

impl EnvFleet {
    pub fn new(spec: GridSpec, n_envs: usize) -> Result<Self> {
        spec.validate()?;
        let mut visited = vec![false; spec.n_cells()];
        let mut visit_counts = vec![0u64; spec.n_cells()];
        let slots = (0..n_envs)
            .map(|_| {
                let (state, obs) = env::reset(&spec, 0);
                visited[obs.index()] = true;
                visit_counts[obs.index()] += 1;
                Slot { state, obs, steps: Vec::new(), sources: Vec::new(), episode_return: 0.0 }
            })
            .collect();
        Ok(EnvFleet {
            spec,
            slots,
            visited,
            visit_counts,
            cliff_falls: 0,
            episodes: Vec::new(),
            recent_returns: VecDeque::with_capacity(RETURN_WINDOW),
        })
    }

    pub fn n_envs(&self) -> usize {
        self.slots.len()
    }

    pub fn coverage(&self) -> usize {
        self.visited.iter().filter(|&&v| v).count()
    }

    /// Mean of the last [`RETURN_WINDOW`] episode returns; 0 before any ends.
    pub fn mean_recent_return(&self) -> f64 {
        if self.recent_returns.is_empty() {
            0.0
        } else {
            self.recent_returns.iter().sum::<f64>() / self.recent_returns.len() as f64
        }
    }

    pub fn current_observations(&self) -> Vec<Observation> {
        self.slots.iter().map(|s| s.obs).collect()
    }
}

/// Memory side of the gate, mutable because episodes feed the buffers.
pub struct MemoryHooks<'a> {
    pub pred: &'a PredictionNet,
    pub refl: &'a ReflectionNet,
    pub mbuf: &'a mut MBuffer,
    pub rbuf: &'a mut RBuffer,
    pub cfg: &'a EnsembleConfig,
}

pub struct CuriosityHooks<'a> {
    pub model: &'a CoarseFineModel,
    pub norm: &'a mut RunningNormalizer,
    pub int_clip: Option<f64>,
}

/// Time-major `[t * n_envs + e]` record of one collection phase.
#[derive(Debug, Clone, Default)]
pub struct Rollout {
    pub n_envs: usize,
    pub n_steps: usize,
    pub obs: Vec<Observation>,
    pub next_obs: Vec<Observation>,
    pub actions: Vec<usize>,
    pub sources: Vec<ActionSource>,
    pub ext_rewards: Vec<f64>,
    pub int_rewards: Vec<f64>,
    /// Unnormalized autoencoder losses behind `int_rewards`.
    pub raw_int_rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub log_probs: Vec<f64>,
    pub v_ext: Vec<f64>,
    pub v_int: Vec<f64>,
    pub bootstrap_ext: Vec<f64>,
    pub bootstrap_int: Vec<f64>,
}

impl Rollout {
    pub fn memory_fraction(&self) -> f64 {
        if self.sources.is_empty() {
            return 0.0;
        }
        let m = self.sources.iter().filter(|&&s| s == ActionSource::Memory).count();
        m as f64 / self.sources.len() as f64
    }
}

/// Memory-sourced pairs among the last `window` steps of a failed episode.
pub fn failure_pairs(steps: &[Step], sources: &[ActionSource], window: usize) -> Vec<(Observation, usize)> {
    let start = steps.len().saturating_sub(window);
    steps[start..]
        .iter()
        .zip(&sources[start..])
        .filter(|(_, &src)| src == ActionSource::Memory)
        .map(|(s, _)| (s.observation, s.action))
        .collect()
}

pub fn collect_rollout(
    fleet: &mut EnvFleet,
    policy: &PolicyNet,
    mut memory: Option<MemoryHooks<'_>>,
    mut curiosity: Option<CuriosityHooks<'_>>,
    n_steps: usize,
    update: usize,
    action_rng: &mut Rng,
) -> Result<Rollout> {
    let n_envs = fleet.n_envs();
    let cap = n_envs * n_steps;
    let mut ro = Rollout {
        n_envs,
        n_steps,
        obs: Vec::with_capacity(cap),
        next_obs: Vec::with_capacity(cap),
        actions: Vec::with_capacity(cap),
        sources: Vec::with_capacity(cap),
        ext_rewards: Vec::with_capacity(cap),
        int_rewards: Vec::with_capacity(cap),
        raw_int_rewards: Vec::with_capacity(cap),
        dones: Vec::with_capacity(cap),
        log_probs: Vec::with_capacity(cap),
        v_ext: Vec::with_capacity(cap),
        v_int: Vec::with_capacity(cap),
        ..Rollout::default()
    };
    for _ in 0..n_steps {
        for e in 0..n_envs {
            let obs = fleet.slots[e].obs;
            let u: f64 = action_rng.gen();
            let (probs, v_ext, v_int) = policy.act(&obs)?;
            let choice = {
                let nets = memory.as_ref().map(|m| (m.pred, m.refl));
                let kappa = memory.as_ref().map_or(f64::INFINITY, |m| m.cfg.kappa);
                let is_ens = memory.as_ref().is_some_and(|m| m.cfg.is_ensemble_env(e, n_envs));
                gate(probs, nets, &obs, kappa, is_ens, u)?
            };
            let action = choice.action;
            let slot = &mut fleet.slots[e];
            let (next, info) = env::step_mut(&mut slot.state, &fleet.spec, Action::from_index(action)?)?;

            let (raw, r_int) = match curiosity.as_mut() {
                Some(c) => {
                    let r = curiosity::intrinsic_reward(c.model, &next)?.reward;
                    let mut r_hat = curiosity::standardize_intrinsic(c.norm, r);
                    if let Some(clip) = c.int_clip {
                        r_hat = r_hat.min(clip);
                    }
                    (r, r_hat)
                }
                None => (0.0, 0.0),
            };
            let done = info.terminated || info.truncated;

            ro.obs.push(obs);
            ro.next_obs.push(next);
            ro.actions.push(action);
            ro.sources.push(choice.source);
            ro.ext_rewards.push(info.reward);
            ro.int_rewards.push(r_int);
            ro.raw_int_rewards.push(raw);
            ro.dones.push(done);
            ro.log_probs.push(choice.probs[action].max(LOG_CLAMP).ln());
            ro.v_ext.push(v_ext);
            ro.v_int.push(v_int);

            fleet.visited[next.index()] = true;
            fleet.visit_counts[next.index()] += 1;
            if info.fell {
                fleet.cliff_falls += 1;
            }
            slot.steps.push(Step { observation: obs, action, reward: info.reward });
            slot.sources.push(choice.source);
            slot.episode_return += info.reward;
            slot.obs = next;

            if done {
                let kind = if info.fell {
                    TerminalKind::Death
                } else if info.terminated {
                    TerminalKind::Goal
                } else {
                    TerminalKind::Truncated
                };
                let steps = std::mem::take(&mut slot.steps);
                let sources = std::mem::take(&mut slot.sources);
                let record = EpisodeRecord {
                    index: fleet.episodes.len(),
                    update,
                    env: e,
                    length: steps.len(),
                    terminal: kind,
                    total_return: slot.episode_return,
                };
                if let Some(m) = memory.as_mut() {
                    // With a goal on the map, timing out is a failure too, and only
                    // goal-reaching runs count as successes worth remembering.
                    let has_goal = fleet.spec.goal.is_some();
                    let failed = kind == TerminalKind::Death || (has_goal && kind == TerminalKind::Truncated);
                    if failed {
                        m.rbuf.push_failures(failure_pairs(&steps, &sources, m.cfg.failure_window));
                    }
                    let success = if has_goal { kind == TerminalKind::Goal } else { kind != TerminalKind::Death };
                    if success {
                        if let Ok(traj) = finalize_trajectory(steps, kind) {
                            m.mbuf.offer(traj);
                        }
                    }
                }
                fleet.episodes.push(record);
                if fleet.recent_returns.len() == RETURN_WINDOW {
                    fleet.recent_returns.pop_front();
                }
                fleet.recent_returns.push_back(record.total_return);

                let (state, obs0) = env::reset(&fleet.spec, 0);
                slot.state = state;
                slot.obs = obs0;
                slot.episode_return = 0.0;
                fleet.visit_counts[obs0.index()] += 1;
            }
        }
    }
    for slot in &fleet.slots {
        let (_, v_ext, v_int) = policy.act(&slot.obs)?;
        ro.bootstrap_ext.push(v_ext);
        ro.bootstrap_int.push(v_int);
    }
    Ok(ro)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_env, EnvName, SpecOverrides};
    use crate::seed::rng_from;

    fn step(i: usize) -> Step {
        Step { observation: Observation::new(i, 20).unwrap(), action: i % 4, reward: -1.0 }
    }

    #[test]
    fn failure_window_counts_memory_steps_only() {
        let steps: Vec<Step> = (0..15).map(step).collect();
        let mut sources = vec![ActionSource::Base; 15];
        for i in [2, 7, 11, 14] {
            sources[i] = ActionSource::Memory;
        }
        let pairs = failure_pairs(&steps, &sources, 10);
        assert_eq!(pairs.len(), 3);
        assert_eq!(pairs[0].0.index(), 7);
        assert!(failure_pairs(&steps, &[ActionSource::Base; 15], 10).is_empty());
    }

    #[test]
    fn gate_respects_kappa() {
        let mut rng = rng_from(0);
        let policy = PolicyNet::new(6, 4, 8, &mut rng).unwrap();
        let mut pred = PredictionNet::new(6, 4, 8, 1e-8, &mut rng).unwrap();
        pred.train_steps = 1;
        let refl = ReflectionNet::new(6, 4, 8, 1e-8, &mut rng).unwrap();
        let obs = Observation::new(2, 6).unwrap();
        for u in [0.1, 0.5, 0.9] {
            let never = ensemble_action(&policy, Some((&pred, &refl)), &obs, 1.01, true, u).unwrap();
            assert_eq!(never.source, ActionSource::Base);
            let always = ensemble_action(&policy, Some((&pred, &refl)), &obs, 0.0, true, u).unwrap();
            assert_eq!(always.source, ActionSource::Memory);
            let base_env = ensemble_action(&policy, Some((&pred, &refl)), &obs, 0.0, false, u).unwrap();
            assert_eq!(base_env.source, ActionSource::Base);
        }
    }

    #[test]
    fn dark_chamber_rollout_is_reward_free() {
        let spec = make_env(EnvName::DarkChamber, &SpecOverrides::default()).unwrap();
        let mut fleet = EnvFleet::new(spec.clone(), 2).unwrap();
        let mut rng = rng_from(1);
        let policy = PolicyNet::new(spec.n_cells(), 4, 8, &mut rng).unwrap();
        let ro = collect_rollout(&mut fleet, &policy, None, None, 16, 1, &mut rng).unwrap();
        assert_eq!(ro.obs.len(), 32);
        assert!(ro.ext_rewards.iter().all(|&r| r == 0.0));
        assert!(ro.sources.iter().all(|&s| s == ActionSource::Base));
        assert_eq!(ro.bootstrap_ext.len(), 2);
        assert!(fleet.coverage() >= 2);
    }

    #[test]
    fn memory_keeps_only_goal_runs_on_goal_layouts() {
        use crate::memory::{MBuffer, RBuffer, TerminalKind};
        // A 3-wide cliff: random walks reach the goal, fall and time out.
        let overrides = SpecOverrides { width: Some(3), max_steps: Some(8), ..Default::default() };
        let spec = make_env(EnvName::CliffWalking, &overrides).unwrap();
        let mut fleet = EnvFleet::new(spec.clone(), 8).unwrap();
        let mut rng = rng_from(4);
        let policy = PolicyNet::new(spec.n_cells(), 4, 8, &mut rng).unwrap();
        let pred = PredictionNet::new(spec.n_cells(), 4, 8, 1e-8, &mut rng).unwrap();
        let refl = ReflectionNet::new(spec.n_cells(), 4, 8, 1e-8, &mut rng).unwrap();
        let (mut mbuf, mut rbuf) = (MBuffer::new(10).unwrap(), RBuffer::new(100).unwrap());
        let cfg = EnsembleConfig { kappa: 0.85, ensemble_env_count: 4, failure_window: 10 };
        let hooks = MemoryHooks { pred: &pred, refl: &refl, mbuf: &mut mbuf, rbuf: &mut rbuf, cfg: &cfg };
        collect_rollout(&mut fleet, &policy, Some(hooks), None, 200, 1, &mut rng).unwrap();
        for kind in [TerminalKind::Death, TerminalKind::Truncated, TerminalKind::Goal] {
            assert!(fleet.episodes.iter().any(|e| e.terminal == kind), "{kind:?}");
        }
        assert!(!mbuf.is_empty());
        assert!(mbuf.entries().iter().all(|t| t.terminal_kind() == TerminalKind::Goal));
        // The predictor is untrained, so no step came from memory to blame.
        assert!(rbuf.is_empty());
    }
}
