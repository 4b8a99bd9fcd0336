//! Exact tabular MDP machinery.
//!
//! Value iteration, exact policy evaluation, and two mechanical checks:
//!
//! * reward shaping: adding a bonus in `[0, C]` with
//!   `C = (1 − γ)·min_s [Q*(s, a*) − Q*(s, a_sub)]` never removes the
//!   optimal action from the argmax set of the shaped Q*;
//! * confidence gating: switching a policy to its greedy counterpart at the
//!   states where the greedy action's confidence clears `κ` never lowers any
//!   state value.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use crate::env::{self, Action, GridSpec};
use crate::nn::argmax;
use crate::seed::rng_from;
use crate::{Error, Result};

/// Tolerance used to decide whether two Q values tie.
pub const TIE_TOL: f64 = 1e-9;
pub const DEFAULT_TOL: f64 = 1e-10;
pub const MAX_SWEEPS: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `transition[(s * n_actions + a) * n_states + s']`.
    pub transition: Vec<f64>,
    /// `reward[s * n_actions + a]`.
    pub reward: Vec<f64>,
    pub gamma: f64,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        let mdp = TabularMdp {
            n_states,
            n_actions,
            transition,
            reward,
            gamma,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn validate(&self) -> Result<()> {
        let (s, a) = (self.n_states, self.n_actions);
        if s == 0 || a == 0 {
            return Err(Error::Validation("MDP needs at least one state and action".into()));
        }
        if self.transition.len() != s * a * s || self.reward.len() != s * a {
            return Err(Error::Validation("MDP table sizes do not match dimensions".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Validation(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        for si in 0..s {
            for ai in 0..a {
                let row = self.probs(si, ai);
                if row.iter().any(|&p| !(p >= 0.0)) {
                    return Err(Error::Validation(format!("negative probability at ({si}, {ai})")));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(Error::Validation(format!(
                        "transition row ({si}, {ai}) sums to {sum}"
                    )));
                }
            }
        }
        if self.reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::Validation("rewards must be finite".into()));
        }
        Ok(())
    }

    pub fn probs(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    /// Same dynamics with `bonus` added to every reward.
    pub fn shaped(&self, bonus: &QTable) -> Result<TabularMdp> {
        self.check_table(bonus)?;
        let mut m = self.clone();
        for (r, b) in m.reward.iter_mut().zip(&bonus.values) {
            *r += b;
        }
        Ok(m)
    }

    fn check_table(&self, t: &QTable) -> Result<()> {
        if t.n_states != self.n_states || t.n_actions != self.n_actions {
            return Err(Error::Validation("table dimensions do not match the MDP".into()));
        }
        Ok(())
    }

    /// `R(s, a) + γ Σ_s' P(s'|s, a) v(s')` for every pair.
    pub fn q_from_v(&self, v: &[f64]) -> QTable {
        let mut q = QTable::zeros(self.n_states, self.n_actions);
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let ev: f64 = self.probs(s, a).iter().zip(v).map(|(p, v)| p * v).sum();
                q.values[s * self.n_actions + a] = self.r(s, a) + self.gamma * ev;
            }
        }
        q
    }
}

/// Dense `n_states × n_actions` table (Q values, bonuses).
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        QTable {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn from_fn(n_states: usize, n_actions: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(n_states, n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                t.values[s * n_actions + a] = f(s, a);
            }
        }
        t
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn argmax(&self, s: usize) -> usize {
        argmax(self.row(s))
    }

    /// Actions within `tol` of the row maximum.
    pub fn argmax_set(&self, s: usize, tol: f64) -> Vec<usize> {
        let row = self.row(s);
        let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (0..self.n_actions).filter(|&a| row[a] >= best - tol).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub q_star: QTable,
    pub v_star: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    /// Sup-norm change of Q at every sweep.
    pub residual_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StochasticPolicy {
    pub n_states: usize,
    pub n_actions: usize,
    pub probs: Vec<f64>,
}

impl StochasticPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        let p = StochasticPolicy {
            n_states,
            n_actions,
            probs,
        };
        if p.probs.len() != n_states * n_actions {
            return Err(Error::Validation("policy table size mismatch".into()));
        }
        for s in 0..n_states {
            let row = p.row(s);
            if row.iter().any(|&x| !(x >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::Validation(format!("policy row {s} is not a distribution")));
            }
        }
        Ok(p)
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        StochasticPolicy {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// Deterministic policy picking `argmax_a q(s, a)` (lowest index on ties).
    pub fn greedy(q: &QTable) -> Self {
        let mut probs = vec![0.0; q.n_states * q.n_actions];
        for s in 0..q.n_states {
            probs[s * q.n_actions + q.argmax(s)] = 1.0;
        }
        StochasticPolicy {
            n_states: q.n_states,
            n_actions: q.n_actions,
            probs,
        }
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }
}

/// Tabular stand-in for the reflection network's confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub values: Vec<f64>,
}

impl ConfidenceTable {
    pub fn new(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::Validation("confidence table size mismatch".into()));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Validation("confidence values must lie in [0, 1]".into()));
        }
        Ok(ConfidenceTable {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }
}

/// Transition rows are normalized uniform draws; rewards uniform in [0, 1].
pub fn random_mdp(seed: u64, n_states: usize, n_actions: usize, gamma: f64) -> Result<TabularMdp> {
    if n_states < 2 || n_actions < 2 {
        return Err(Error::Validation("random MDPs need at least 2 states and 2 actions".into()));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Validation(format!("gamma {gamma} outside (0, 1)")));
    }
    let mut rng = rng_from(seed);
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        // Shifted away from zero so every row has full support.
        let row: Vec<f64> = (0..n_states).map(|_| rng.gen::<f64>() + 1e-3).collect();
        let sum: f64 = row.iter().sum();
        let mut row: Vec<f64> = row.iter().map(|x| x / sum).collect();
        // Put the rounding residue on the largest entry so the row sums to 1.
        let residue = 1.0 - row.iter().sum::<f64>();
        let big = argmax(&row);
        row[big] += residue;
        transition.extend(row);
    }
    let reward = (0..n_states * n_actions).map(|_| rng.gen::<f64>()).collect();
    TabularMdp::new(n_states, n_actions, transition, reward, gamma)
}

/// Iterates the Bellman optimality operator until the sup-norm change of Q
/// is at most `tol`.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<SolveResult> {
    if !(tol > 0.0) {
        return Err(Error::Validation("tolerance must be positive".into()));
    }
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut v = vec![0.0; ns];
    let mut q = QTable::zeros(ns, na);
    let mut history = Vec::new();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < MAX_SWEEPS {
        let next = mdp.q_from_v(&v);
        residual = next
            .values
            .iter()
            .zip(&q.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        q = next;
        for (s, vs) in v.iter_mut().enumerate() {
            *vs = q.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
        iterations += 1;
        history.push(residual);
        if residual <= tol {
            break;
        }
    }
    Ok(SolveResult {
        q_star: q,
        v_star: v,
        iterations,
        residual,
        residual_history: history,
    })
}

/// Exact `V^π` from the linear Bellman system, refined by sweeps until the
/// residual is at most `tol`.
pub fn policy_evaluation(mdp: &TabularMdp, policy: &StochasticPolicy, tol: f64) -> Result<Vec<f64>> {
    if policy.n_states != mdp.n_states || policy.n_actions != mdp.n_actions {
        return Err(Error::Validation("policy dimensions do not match the MDP".into()));
    }
    let ns = mdp.n_states;
    let mut a = DMatrix::<f64>::identity(ns, ns);
    let mut b = DVector::<f64>::zeros(ns);
    for s in 0..ns {
        for (act, &pa) in policy.row(s).iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            b[s] += pa * mdp.r(s, act);
            for (s2, &p) in mdp.probs(s, act).iter().enumerate() {
                a[(s, s2)] -= mdp.gamma * pa * p;
            }
        }
    }
    let solved = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Validation("singular policy evaluation system".into()))?;
    let mut v: Vec<f64> = solved.iter().copied().collect();
    for _ in 0..MAX_SWEEPS {
        let q = mdp.q_from_v(&v);
        let next: Vec<f64> = (0..ns)
            .map(|s| policy.row(s).iter().zip(q.row(s)).map(|(p, q)| p * q).sum())
            .collect();
        let residual = next.iter().zip(&v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        if residual <= tol {
            return Ok(v);
        }
        v = next;
    }
    Ok(v)
}

/// Per-state optimal action, best strictly-suboptimal action and their gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateGap {
    pub best: usize,
    pub runner_up: usize,
    pub gap: f64,
}

pub fn optimality_gaps(solve: &SolveResult) -> Result<Vec<StateGap>> {
    let q = &solve.q_star;
    (0..q.n_states)
        .map(|s| {
            let row = q.row(s);
            let best = argmax(row);
            let runner_up = (0..q.n_actions)
                .filter(|&a| row[a] < row[best] - TIE_TOL)
                .max_by(|&x, &y| row[x].total_cmp(&row[y]).then(y.cmp(&x)))
                .ok_or(Error::DegenerateGap { state: s })?;
            Ok(StateGap {
                best,
                runner_up,
                gap: row[best] - row[runner_up],
            })
        })
        .collect()
}

/// `C = (1 − γ)·min_s [Q*(s, a*) − Q*(s, a_sub)]`.
pub fn assumption1_bound(solve: &SolveResult, gamma: f64) -> Result<f64> {
    let gaps = optimality_gaps(solve)?;
    let min_gap = gaps.iter().map(|g| g.gap).fold(f64::INFINITY, f64::min);
    Ok((1.0 - gamma) * min_gap)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Report {
    pub holds: bool,
    pub violating_states: Vec<usize>,
    /// The shaping bound `C`.
    pub bound: f64,
    /// Largest excursion outside `Q* ≤ Q1* ≤ Q* + C/(1−γ)`, 0 when inside.
    pub sandwich_violation: f64,
    pub q_star: QTable,
    pub q_shaped: QTable,
}

fn solver_tol(gamma: f64, tol: f64) -> f64 {
    (tol * (1.0 - gamma) / 2.0).min(DEFAULT_TOL)
}

/// Solves the MDP with and without `bonus` and checks that the original
/// optimal action stays in the shaped argmax set at every state, and that
/// the shaped Q* stays inside the sandwich within `tol`.
pub fn check_theorem1(mdp: &TabularMdp, bonus: &QTable, tol: f64) -> Result<Theorem1Report> {
    mdp.check_table(bonus)?;
    let vi_tol = solver_tol(mdp.gamma, tol);
    let base = value_iteration(mdp, vi_tol)?;
    let bound = assumption1_bound(&base, mdp.gamma)?;
    let slack = 1e-12 * bound.abs().max(1.0);
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let b = bonus.get(s, a);
            if !(b >= 0.0 && b <= bound + slack) {
                return Err(Error::Contract(format!(
                    "bonus {b} at (state {s}, action {a}) outside [0, {bound}]"
                )));
            }
        }
    }
    let shaped = value_iteration(&mdp.shaped(bonus)?, vi_tol)?;
    let upper_shift = bound / (1.0 - mdp.gamma);
    let mut violating_states = Vec::new();
    let mut sandwich_violation: f64 = 0.0;
    for s in 0..mdp.n_states {
        let a_star = base.q_star.argmax(s);
        let mut ok = shaped.q_star.argmax_set(s, TIE_TOL).contains(&a_star);
        for a in 0..mdp.n_actions {
            let q = base.q_star.get(s, a);
            let q1 = shaped.q_star.get(s, a);
            let excess = (q - q1).max(q1 - (q + upper_shift)).max(0.0);
            sandwich_violation = sandwich_violation.max(excess);
            if excess > tol {
                ok = false;
            }
        }
        if !ok {
            violating_states.push(s);
        }
    }
    Ok(Theorem1Report {
        holds: violating_states.is_empty(),
        violating_states,
        bound,
        sandwich_violation,
        q_star: base.q_star,
        q_shaped: shaped.q_star,
    })
}

/// Per-state switch: greedy at `a* = argmax Q(s, ·)` when `conf[s, a*] ≥ κ`,
/// otherwise the original row.
pub fn gated_policy(
    pi: &StochasticPolicy,
    q: &QTable,
    conf: &ConfidenceTable,
    kappa: f64,
) -> StochasticPolicy {
    let mut out = pi.clone();
    for s in 0..pi.n_states {
        let a_star = q.argmax(s);
        if conf.get(s, a_star) >= kappa {
            let row = &mut out.probs[s * pi.n_actions..(s + 1) * pi.n_actions];
            row.fill(0.0);
            row[a_star] = 1.0;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem2Report {
    pub holds: bool,
    /// `min_s (V^{π_new}(s) − V^π(s))`.
    pub min_gap: f64,
    pub gated_states: usize,
    pub v_pi: Vec<f64>,
    pub v_new: Vec<f64>,
}

pub fn check_theorem2(
    mdp: &TabularMdp,
    pi: &StochasticPolicy,
    conf: &ConfidenceTable,
    kappa: f64,
    tol: f64,
) -> Result<Theorem2Report> {
    if conf.n_states != mdp.n_states || conf.n_actions != mdp.n_actions {
        return Err(Error::Validation("confidence dimensions do not match the MDP".into()));
    }
    let eval_tol = tol.min(DEFAULT_TOL) * (1.0 - mdp.gamma);
    let v_pi = policy_evaluation(mdp, pi, eval_tol)?;
    let q_pi = mdp.q_from_v(&v_pi);
    for s in 0..mdp.n_states {
        let a_star = q_pi.argmax(s);
        let c_star = conf.get(s, a_star);
        if let Some(a) = (0..mdp.n_actions).find(|&a| a != a_star && conf.get(s, a) >= c_star) {
            return Err(Error::Contract(format!(
                "state {s}: confidence of action {a} is not below that of the greedy action {a_star}"
            )));
        }
    }
    let new = gated_policy(pi, &q_pi, conf, kappa);
    let gated_states = (0..mdp.n_states).filter(|&s| new.row(s) != pi.row(s)).count();
    let v_new = policy_evaluation(mdp, &new, eval_tol)?;
    let min_gap = v_new
        .iter()
        .zip(&v_pi)
        .map(|(n, o)| n - o)
        .fold(f64::INFINITY, f64::min);
    Ok(Theorem2Report {
        holds: min_gap >= -tol,
        min_gap,
        gated_states,
        v_pi,
        v_new,
    })
}

/// Exact encoding of a gridworld: one state per cell, deterministic moves,
/// cliff and goal cells absorbing with zero reward. Truncation is ignored.
pub fn gridworld_to_mdp(spec: &GridSpec, gamma: f64) -> Result<TabularMdp> {
    let ns = spec.n_cells();
    let na = Action::COUNT;
    let mut transition = vec![0.0; ns * na * ns];
    let mut reward = vec![0.0; ns * na];
    for s in 0..ns {
        let pos = spec.cell_at(s);
        let absorbing = spec.is_cliff(pos) || spec.is_goal(pos) || spec.is_wall(pos);
        for action in Action::ALL {
            let a = action.index();
            let (next, r) = if absorbing {
                (s, 0.0)
            } else {
                let t = env::transition(spec, pos, action);
                (spec.cell_index(t.next), t.reward)
            };
            transition[(s * na + a) * ns + next] = 1.0;
            reward[s * na + a] = r;
        }
    }
    TabularMdp::new(ns, na, transition, reward, gamma)
}
