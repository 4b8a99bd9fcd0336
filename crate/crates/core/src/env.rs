//! Deterministic gridworlds: Cliff Walking, Four Rooms and Dark Chamber.
//!
//! Coordinates are `(row, col)` with row 0 at the top. Moves are
//! 4-connected; moving into a wall or the boundary keeps the agent in place
//! but still consumes a step.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pos {
    pub row: usize,
    pub col: usize,
}

impl Pos {
    pub const fn new(row: usize, col: usize) -> Self {
        Pos { row, col }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Action::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Validation(format!("action index {i} out of range")))
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }

    pub fn arrow(self) -> char {
        match self {
            Action::Up => '^',
            Action::Down => 'v',
            Action::Left => '<',
            Action::Right => '>',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvName {
    CliffWalking,
    FourRooms,
    DarkChamber,
}

impl EnvName {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvName::CliffWalking => "cliff_walking",
            EnvName::FourRooms => "four_rooms",
            EnvName::DarkChamber => "dark_chamber",
        }
    }
}

impl fmt::Display for EnvName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cliff_walking" => Ok(EnvName::CliffWalking),
            "four_rooms" => Ok(EnvName::FourRooms),
            "dark_chamber" => Ok(EnvName::DarkChamber),
            other => Err(Error::config("env.name", format!("unknown environment `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub name: EnvName,
    pub width: usize,
    pub height: usize,
    pub walls: BTreeSet<Pos>,
    pub cliffs: BTreeSet<Pos>,
    pub start: Pos,
    pub goal: Option<Pos>,
    pub step_reward: f64,
    pub goal_reward: f64,
    pub cliff_reward: f64,
    pub max_steps: usize,
}

/// Partial overrides applied on top of a canonical layout. Changing the
/// size regenerates the geometry at the new scale.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpecOverrides {
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub max_steps: Option<usize>,
    pub step_reward: Option<f64>,
    pub goal_reward: Option<f64>,
    pub cliff_reward: Option<f64>,
}

impl GridSpec {
    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn in_bounds(&self, p: Pos) -> bool {
        p.row < self.height && p.col < self.width
    }

    pub fn cell_index(&self, p: Pos) -> usize {
        p.row * self.width + p.col
    }

    pub fn cell_at(&self, index: usize) -> Pos {
        Pos::new(index / self.width, index % self.width)
    }

    pub fn is_wall(&self, p: Pos) -> bool {
        self.walls.contains(&p)
    }

    pub fn is_cliff(&self, p: Pos) -> bool {
        self.cliffs.contains(&p)
    }

    pub fn is_goal(&self, p: Pos) -> bool {
        self.goal == Some(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Validation("grid dimensions must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Validation("max_steps must be positive".into()));
        }
        for p in self.walls.iter().chain(&self.cliffs).chain([&self.start]).chain(&self.goal) {
            if !self.in_bounds(*p) {
                return Err(Error::Validation(format!(
                    "cell ({}, {}) outside {}x{} grid",
                    p.row, p.col, self.height, self.width
                )));
            }
        }
        if self.is_wall(self.start) || self.is_cliff(self.start) {
            return Err(Error::Validation("start lies on a wall or cliff".into()));
        }
        if let Some(g) = self.goal {
            if self.is_wall(g) || self.is_cliff(g) {
                return Err(Error::Validation("goal lies on a wall or cliff".into()));
            }
        }
        for r in [self.step_reward, self.goal_reward, self.cliff_reward] {
            if !r.is_finite() {
                return Err(Error::Validation("rewards must be finite".into()));
            }
        }
        Ok(())
    }

    /// Where `action` leads from `from`, ignoring terminal effects.
    pub fn next_position(&self, from: Pos, action: Action) -> Pos {
        let (dr, dc) = action.delta();
        let row = from.row as isize + dr;
        let col = from.col as isize + dc;
        if row < 0 || col < 0 {
            return from;
        }
        let to = Pos::new(row as usize, col as usize);
        if !self.in_bounds(to) || self.is_wall(to) {
            from
        } else {
            to
        }
    }
}

fn cliff_walking(width: usize, height: usize) -> GridSpec {
    let bottom = height - 1;
    GridSpec {
        name: EnvName::CliffWalking,
        width,
        height,
        walls: BTreeSet::new(),
        cliffs: (1..width.saturating_sub(1)).map(|c| Pos::new(bottom, c)).collect(),
        start: Pos::new(bottom, 0),
        goal: Some(Pos::new(bottom, width - 1)),
        step_reward: -1.0,
        goal_reward: 0.0,
        cliff_reward: -100.0,
        max_steps: 100,
    }
}

/// A full-height wall down the middle column whose only opening is a single
/// doorway in the lower half, crossed by a horizontal wall segment spanning
/// the central half of the middle row.
fn four_rooms(width: usize, height: usize) -> GridSpec {
    let mid_col = width / 2;
    let mid_row = height / 2;
    let door_row = (3 * height) / 4;
    let mut walls = BTreeSet::new();
    for r in 0..height {
        if r != door_row {
            walls.insert(Pos::new(r, mid_col));
        }
    }
    for c in width / 4..=(3 * width) / 4 {
        walls.insert(Pos::new(mid_row, c));
    }
    GridSpec {
        name: EnvName::FourRooms,
        width,
        height,
        walls,
        cliffs: BTreeSet::new(),
        start: Pos::new(0, width - 1),
        goal: Some(Pos::new(height - 1, 0)),
        step_reward: 0.0,
        goal_reward: 1.0,
        cliff_reward: 0.0,
        max_steps: 500,
    }
}

fn dark_chamber(width: usize, height: usize) -> GridSpec {
    GridSpec {
        name: EnvName::DarkChamber,
        width,
        height,
        walls: BTreeSet::new(),
        cliffs: BTreeSet::new(),
        start: Pos::new(height - 1, 0),
        goal: None,
        step_reward: 0.0,
        goal_reward: 0.0,
        cliff_reward: 0.0,
        max_steps: 500,
    }
}

/// Canonical layout for `name` with `overrides` applied.
pub fn make_env(name: EnvName, overrides: &SpecOverrides) -> Result<GridSpec> {
    let (dw, dh) = match name {
        EnvName::CliffWalking => (12, 4),
        EnvName::FourRooms => (13, 13),
        EnvName::DarkChamber => (50, 50),
    };
    let width = overrides.width.unwrap_or(dw);
    let height = overrides.height.unwrap_or(dh);
    let min = match name {
        EnvName::CliffWalking => (3, 2),
        EnvName::FourRooms => (5, 5),
        EnvName::DarkChamber => (1, 1),
    };
    if width < min.0 || height < min.1 {
        return Err(Error::Validation(format!(
            "{name} needs at least {}x{} cells, got {height}x{width}",
            min.1, min.0
        )));
    }
    let mut spec = match name {
        EnvName::CliffWalking => cliff_walking(width, height),
        EnvName::FourRooms => four_rooms(width, height),
        EnvName::DarkChamber => dark_chamber(width, height),
    };
    if let Some(v) = overrides.max_steps {
        spec.max_steps = v;
    }
    if let Some(v) = overrides.step_reward {
        spec.step_reward = v;
    }
    if let Some(v) = overrides.goal_reward {
        spec.goal_reward = v;
    }
    if let Some(v) = overrides.cliff_reward {
        spec.cliff_reward = v;
    }
    spec.validate()?;
    Ok(spec)
}

/// One-hot image of the agent position. Stored as the hot index plus the
/// dimension; [`Observation::to_dense`] materializes the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Observation {
    index: usize,
    dim: usize,
}

impl Observation {
    pub fn new(index: usize, dim: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::Validation(format!("one-hot index {index} outside dimension {dim}")));
        }
        Ok(Observation { index, dim })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        v[self.index] = 1.0;
        v
    }

    /// Writes the dense form into `out`, which must have length `dim`.
    pub fn write_dense(&self, out: &mut [f64]) {
        out.fill(0.0);
        out[self.index] = 1.0;
    }
}

pub fn encode_observation(spec: &GridSpec, position: Pos) -> Result<Observation> {
    if !spec.in_bounds(position) {
        return Err(Error::Validation(format!(
            "position ({}, {}) outside {}x{} grid",
            position.row, position.col, spec.height, spec.width
        )));
    }
    Observation::new(spec.cell_index(position), spec.n_cells())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvState {
    pub position: Pos,
    pub steps_taken: usize,
    /// Row-major `height × width` visit counts for the current episode.
    pub visit_counts: Vec<u32>,
    pub done: bool,
    pub fall_count: u32,
}

/// Start of an episode. Layouts are fixed, so `seed` does not change the
/// result; it is accepted so every environment shares one reset signature.
pub fn reset(spec: &GridSpec, _seed: u64) -> (EnvState, Observation) {
    let mut visit_counts = vec![0; spec.n_cells()];
    visit_counts[spec.cell_index(spec.start)] = 1;
    let state = EnvState {
        position: spec.start,
        steps_taken: 0,
        visit_counts,
        done: false,
        fall_count: 0,
    };
    let obs = Observation {
        index: spec.cell_index(spec.start),
        dim: spec.n_cells(),
    };
    (state, obs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub observation: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub fell: bool,
}

/// Dynamics and reward of one move, without bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub next: Pos,
    pub reward: f64,
    pub terminated: bool,
    pub fell: bool,
}

/// Entering a cliff yields `cliff_reward` alone; every other move yields
/// `step_reward`, plus `goal_reward` when it enters the goal.
pub fn transition(spec: &GridSpec, from: Pos, action: Action) -> Transition {
    let next = spec.next_position(from, action);
    if spec.is_cliff(next) {
        Transition {
            next,
            reward: spec.cliff_reward,
            terminated: true,
            fell: true,
        }
    } else if spec.is_goal(next) {
        Transition {
            next,
            reward: spec.step_reward + spec.goal_reward,
            terminated: true,
            fell: false,
        }
    } else {
        Transition {
            next,
            reward: spec.step_reward,
            terminated: false,
            fell: false,
        }
    }
}

pub fn step(state: &EnvState, spec: &GridSpec, action: Action) -> Result<StepOutcome> {
    let mut next = state.clone();
    let (observation, info) = step_mut(&mut next, spec, action)?;
    Ok(StepOutcome {
        state: next,
        observation,
        reward: info.reward,
        terminated: info.terminated,
        truncated: info.truncated,
        fell: info.fell,
    })
}

/// Result of [`step_mut`] beyond the new observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub fell: bool,
}

/// Advances `state` in place. Same semantics as [`step`] without cloning the
/// visit grid; returns the observation and step info.
pub fn step_mut(state: &mut EnvState, spec: &GridSpec, action: Action) -> Result<(Observation, StepInfo)> {
    if state.done {
        return Err(Error::Usage("step called on a finished episode".into()));
    }
    let t = transition(spec, state.position, action);
    state.position = t.next;
    state.steps_taken += 1;
    state.visit_counts[spec.cell_index(t.next)] += 1;
    if t.fell {
        state.fall_count += 1;
    }
    let truncated = !t.terminated && state.steps_taken >= spec.max_steps;
    state.done = t.terminated || truncated;
    let obs = Observation {
        index: spec.cell_index(t.next),
        dim: spec.n_cells(),
    };
    Ok((
        obs,
        StepInfo {
            reward: t.reward,
            terminated: t.terminated,
            truncated,
            fell: t.fell,
        },
    ))
}

/// Number of distinct visited cells and a copy of the visit grid.
pub fn coverage(state: &EnvState) -> (usize, Vec<u32>) {
    let distinct = state.visit_counts.iter().filter(|&&c| c > 0).count();
    (distinct, state.visit_counts.clone())
}

/// Shortest number of moves from start to goal, by breadth-first search
/// over non-cliff cells. `None` when the goal is absent or unreachable.
pub fn shortest_path_len(spec: &GridSpec) -> Option<usize> {
    let goal = spec.goal?;
    let mut dist = vec![usize::MAX; spec.n_cells()];
    let mut queue = std::collections::VecDeque::new();
    dist[spec.cell_index(spec.start)] = 0;
    queue.push_back(spec.start);
    while let Some(p) = queue.pop_front() {
        let d = dist[spec.cell_index(p)];
        if p == goal {
            return Some(d);
        }
        for a in Action::ALL {
            let q = spec.next_position(p, a);
            let qi = spec.cell_index(q);
            if spec.is_cliff(q) || dist[qi] != usize::MAX {
                continue;
            }
            dist[qi] = d + 1;
            queue.push_back(q);
        }
    }
    None
}

/// Plain-text picture of the grid: `#` wall, `C` cliff, `G` goal, `S` start,
/// `A` the agent when given.
pub fn render(spec: &GridSpec, agent: Option<Pos>) -> String {
    let mut s = String::with_capacity((spec.width + 1) * spec.height);
    for r in 0..spec.height {
        for c in 0..spec.width {
            let p = Pos::new(r, c);
            let ch = if Some(p) == agent {
                'A'
            } else if spec.is_wall(p) {
                '#'
            } else if spec.is_cliff(p) {
                'C'
            } else if spec.is_goal(p) {
                'G'
            } else if p == spec.start {
                'S'
            } else {
                '.'
            };
            s.push(ch);
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cliff() -> GridSpec {
        make_env(EnvName::CliffWalking, &SpecOverrides::default()).unwrap()
    }

    #[test]
    fn dark_chamber_defaults() {
        let s = make_env(EnvName::DarkChamber, &SpecOverrides::default()).unwrap();
        assert_eq!((s.width, s.height), (50, 50));
        assert!(s.cliffs.is_empty());
        assert_eq!(s.goal, None);
        assert_eq!(s.step_reward, 0.0);
        assert_eq!(s.start, Pos::new(49, 0));
    }

    #[test]
    fn cliff_walking_layout() {
        let s = cliff();
        assert_eq!((s.height, s.width), (4, 12));
        assert_eq!(s.cliffs.len(), 10);
        assert_eq!(s.start, Pos::new(3, 0));
        assert_eq!(s.goal, Some(Pos::new(3, 11)));
    }

    #[test]
    fn four_rooms_override_passes_through() {
        let s = make_env(
            EnvName::FourRooms,
            &SpecOverrides {
                width: Some(9),
                height: Some(9),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!((s.width, s.height), (9, 9));
        assert!(s.walls.contains(&Pos::new(0, 4)));
        assert!(!s.walls.contains(&Pos::new(6, 4)));
        assert_eq!(s.start, Pos::new(0, 8));
        assert_eq!(s.goal, Some(Pos::new(8, 0)));
    }

    #[test]
    fn invalid_override_rejected() {
        let r = make_env(
            EnvName::CliffWalking,
            &SpecOverrides {
                max_steps: Some(0),
                ..Default::default()
            },
        );
        assert!(matches!(r, Err(Error::Validation(_))));
        assert!("mountain_car".parse::<EnvName>().is_err());
    }

    #[test]
    fn reset_puts_agent_on_start() {
        let s = cliff();
        let (st, obs) = reset(&s, 0);
        assert_eq!(st.position, s.start);
        assert_eq!(obs.index(), 36);
        assert_eq!(obs.to_dense()[36], 1.0);
        assert_eq!(reset(&s, 0).0, st);
        assert_eq!(st.fall_count, 0);
        assert_eq!(coverage(&st).0, 1);
    }

    #[test]
    fn stepping_off_the_edge_into_the_cliff() {
        let s = cliff();
        let (st, _) = reset(&s, 0);
        let out = step(&st, &s, Action::Right).unwrap();
        assert_eq!(out.reward, -100.0);
        assert!(out.terminated && out.fell && !out.truncated);
        assert_eq!(out.state.fall_count, 1);
    }

    #[test]
    fn boundary_move_consumes_a_step() {
        let s = cliff();
        let (st, _) = reset(&s, 0);
        let out = step(&st, &s, Action::Left).unwrap();
        assert_eq!(out.state.position, s.start);
        assert_eq!(out.state.steps_taken, 1);
        assert_eq!(out.reward, -1.0);
    }

    #[test]
    fn dark_chamber_is_reward_free() {
        let s = make_env(EnvName::DarkChamber, &SpecOverrides::default()).unwrap();
        let (st, _) = reset(&s, 7);
        for a in Action::ALL {
            let out = step(&st, &s, a).unwrap();
            assert_eq!(out.reward, 0.0);
            assert!(!out.terminated);
        }
    }

    #[test]
    fn truncation_at_max_steps() {
        let s = make_env(
            EnvName::DarkChamber,
            &SpecOverrides {
                max_steps: Some(3),
                ..Default::default()
            },
        )
        .unwrap();
        let (mut st, _) = reset(&s, 0);
        for i in 0..3 {
            let (_, info) = step_mut(&mut st, &s, Action::Up).unwrap();
            assert_eq!(info.truncated, i == 2);
            assert!(!info.terminated);
        }
        assert!(st.done);
        assert!(matches!(step(&st, &s, Action::Up), Err(Error::Usage(_))));
    }

    #[test]
    fn encode_observation_indices() {
        let s = cliff();
        assert_eq!(encode_observation(&s, Pos::new(0, 0)).unwrap().index(), 0);
        assert_eq!(encode_observation(&s, Pos::new(3, 11)).unwrap().index(), 47);
        assert!(encode_observation(&s, Pos::new(4, 0)).is_err());
    }

    #[test]
    fn straight_line_coverage() {
        let s = make_env(EnvName::DarkChamber, &SpecOverrides::default()).unwrap();
        let (mut st, _) = reset(&s, 0);
        for _ in 0..4 {
            step_mut(&mut st, &s, Action::Right).unwrap();
        }
        let (distinct, heat) = coverage(&st);
        assert_eq!(distinct, 5);
        assert_eq!(heat.iter().sum::<u32>() as usize, st.steps_taken + 1);
    }

    #[test]
    fn cliff_shortest_path_is_13() {
        assert_eq!(shortest_path_len(&cliff()), Some(13));
    }
}
