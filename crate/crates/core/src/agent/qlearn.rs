//! One-step tabular Q-learning with an ε-greedy behaviour policy.

use rand::Rng as _;

use super::rollout::EpisodeRecord;
use crate::env::{self, Action, GridSpec};
use crate::memory::TerminalKind;
use crate::nn::argmax;
use crate::oracle::QTable;
use crate::seed::Rng;
use crate::{Error, Result};

/// `Q(s,a) ← Q(s,a) + α·(r + γ·max Q(s',·)·[not terminal] − Q(s,a))`.
pub fn q_learning_step(
    q: &mut QTable,
    s: usize,
    a: usize,
    r: f64,
    s_next: usize,
    terminal: bool,
    alpha: f64,
    gamma: f64,
) -> Result<()> {
    if s >= q.n_states || s_next >= q.n_states || a >= q.n_actions {
        return Err(Error::Validation(format!(
            "transition ({s}, {a}, {s_next}) outside a {}×{} table",
            q.n_states, q.n_actions
        )));
    }
    let bootstrap = if terminal {
        0.0
    } else {
        q.row(s_next).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    };
    let i = s * q.n_actions + a;
    q.values[i] += alpha * (r + gamma * bootstrap - q.values[i]);
    Ok(())
}

/// Linear decay from `start` to `end` over `decay_episodes`, then flat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_episodes: usize,
}

impl EpsilonSchedule {
    pub fn constant(eps: f64) -> Self {
        EpsilonSchedule { start: eps, end: eps, decay_episodes: 0 }
    }

    pub fn at(&self, episode: usize) -> f64 {
        if episode >= self.decay_episodes {
            self.end
        } else {
            let t = episode as f64 / self.decay_episodes as f64;
            self.start + (self.end - self.start) * t
        }
    }
}

/// Runs `episodes` ε-greedy episodes from an all-zero table. Greedy ties go
/// to the lowest action index.
pub fn train_q_learning(
    spec: &GridSpec,
    episodes: usize,
    alpha: f64,
    gamma: f64,
    schedule: EpsilonSchedule,
    rng: &mut Rng,
) -> Result<(QTable, Vec<EpisodeRecord>)> {
    let mut q = QTable::zeros(spec.n_cells(), Action::COUNT);
    let mut log = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let eps = schedule.at(ep);
        let (mut state, mut obs) = env::reset(spec, 0);
        let mut total = 0.0;
        loop {
            let s = obs.index();
            let a = if rng.gen::<f64>() < eps {
                rng.gen_range(0..Action::COUNT)
            } else {
                argmax(q.row(s))
            };
            let (next, info) = env::step_mut(&mut state, spec, Action::from_index(a)?)?;
            total += info.reward;
            q_learning_step(&mut q, s, a, info.reward, next.index(), info.terminated, alpha, gamma)?;
            obs = next;
            if info.terminated || info.truncated {
                let terminal = if info.fell {
                    TerminalKind::Death
                } else if info.terminated {
                    TerminalKind::Goal
                } else {
                    TerminalKind::Truncated
                };
                log.push(EpisodeRecord {
                    index: ep,
                    update: ep,
                    env: 0,
                    length: state.steps_taken,
                    terminal,
                    total_return: total,
                });
                break;
            }
        }
    }
    Ok((q, log))
}

/// Greedy rollout from the start state; returns the number of moves to the
/// goal, or `None` if the episode ends any other way.
pub fn greedy_goal_length(spec: &GridSpec, q: &QTable) -> Result<Option<usize>> {
    let (mut state, mut obs) = env::reset(spec, 0);
    loop {
        let a = argmax(q.row(obs.index()));
        let (next, info) = env::step_mut(&mut state, spec, Action::from_index(a)?)?;
        obs = next;
        if info.terminated || info.truncated {
            return Ok((info.terminated && !info.fell).then_some(state.steps_taken));
        }
    }
}
