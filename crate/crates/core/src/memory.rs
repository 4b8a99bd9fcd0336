//! Fixed-size experience stores.
//!
//! [`MBuffer`] keeps the best trajectories seen so far under the order
//! (return descending, effective length ascending). A full buffer admits a
//! candidate only by evicting its worst entry, and only when the candidate
//! has a strictly higher return, or an equal return and a strictly shorter
//! length. [`RBuffer`] is a FIFO ring of (observation, action) pairs whose
//! memory-sourced actions led to failure.

use std::cmp::Ordering;
use std::collections::VecDeque;

use rand::Rng as _;

use crate::codec::{Reader, Writer};
use crate::env::Observation;
use crate::seed::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TerminalKind {
    Goal,
    Death,
    Truncated,
}

impl TerminalKind {
    fn code(self) -> u8 {
        match self {
            TerminalKind::Goal => 0,
            TerminalKind::Death => 1,
            TerminalKind::Truncated => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(TerminalKind::Goal),
            1 => Ok(TerminalKind::Death),
            2 => Ok(TerminalKind::Truncated),
            _ => Err(Error::Checkpoint(format!("unknown terminal kind {c}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TerminalKind::Goal => "goal",
            TerminalKind::Death => "death",
            TerminalKind::Truncated => "truncated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub observation: Observation,
    pub action: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    steps: Vec<Step>,
    total_return: f64,
    effective_length: usize,
    terminal_kind: TerminalKind,
}

impl Trajectory {
    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn total_return(&self) -> f64 {
        self.total_return
    }

    pub fn effective_length(&self) -> usize {
        self.effective_length
    }

    pub fn terminal_kind(&self) -> TerminalKind {
        self.terminal_kind
    }

    /// A trajectory whose death step was its only step has nothing to store.
    pub fn is_offerable(&self) -> bool {
        self.effective_length > 0
    }

    /// Ordering under which `Greater` means "better": higher return, then
    /// shorter.
    pub fn rank_cmp(&self, other: &Trajectory) -> Ordering {
        self.total_return
            .total_cmp(&other.total_return)
            .then(other.effective_length.cmp(&self.effective_length))
    }
}

/// Builds a stored trajectory. A death-terminated run loses its fatal step,
/// which is excluded from both the length and the return.
pub fn finalize_trajectory(mut raw_steps: Vec<Step>, terminal_kind: TerminalKind) -> Result<Trajectory> {
    if raw_steps.is_empty() {
        return Err(Error::Validation("cannot finalize an empty trajectory".into()));
    }
    if terminal_kind == TerminalKind::Death {
        raw_steps.pop();
    }
    let total_return = raw_steps.iter().map(|s| s.reward).sum();
    Ok(Trajectory {
        effective_length: raw_steps.len(),
        steps: raw_steps,
        total_return,
        terminal_kind,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    ZeroLength,
    NotBetterThanWorst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OfferOutcome {
    Inserted,
    Replaced,
    Rejected(RejectReason),
}

impl OfferOutcome {
    pub fn accepted(self) -> bool {
        !matches!(self, OfferOutcome::Rejected(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MBuffer {
    capacity: usize,
    /// Best first. Equal-rank entries stay in insertion order.
    entries: Vec<Trajectory>,
}

impl MBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Validation("M-buffer capacity must be positive".into()));
        }
        Ok(MBuffer {
            capacity,
            entries: Vec::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn entries(&self) -> &[Trajectory] {
        &self.entries
    }

    pub fn worst(&self) -> Option<&Trajectory> {
        self.entries.last()
    }

    pub fn offer(&mut self, candidate: Trajectory) -> OfferOutcome {
        if !candidate.is_offerable() {
            return OfferOutcome::Rejected(RejectReason::ZeroLength);
        }
        let outcome = if self.is_full() {
            let worst = self.entries.last().expect("full buffer has entries");
            if candidate.rank_cmp(worst) != Ordering::Greater {
                return OfferOutcome::Rejected(RejectReason::NotBetterThanWorst);
            }
            self.entries.pop();
            OfferOutcome::Replaced
        } else {
            OfferOutcome::Inserted
        };
        // After every entry that ranks at least as high.
        let at = self
            .entries
            .partition_point(|e| e.rank_cmp(&candidate) != Ordering::Less);
        self.entries.insert(at, candidate);
        outcome
    }

    /// Uniform draw over stored trajectories.
    pub fn sample(&self, rng: &mut Rng) -> Result<&Trajectory> {
        if self.entries.is_empty() {
            return Err(Error::EmptyBuffer("M"));
        }
        Ok(&self.entries[rng.gen_range(0..self.entries.len())])
    }

    pub fn write(&self, w: &mut Writer) {
        w.usize(self.capacity);
        w.usize(self.entries.len());
        for t in &self.entries {
            w.u8(t.terminal_kind.code());
            w.f64(t.total_return);
            w.usize(t.effective_length);
            w.usize(t.steps.len());
            for s in &t.steps {
                write_obs(w, s.observation);
                w.usize(s.action);
                w.f64(s.reward);
            }
        }
    }

    pub fn read(r: &mut Reader) -> Result<Self> {
        let capacity = r.usize()?;
        let n = r.usize()?;
        if n > capacity {
            return Err(Error::Checkpoint("M-buffer holds more entries than its capacity".into()));
        }
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let terminal_kind = TerminalKind::from_code(r.u8()?)?;
            let total_return = r.f64()?;
            let effective_length = r.usize()?;
            let len = r.usize()?;
            let steps = (0..len)
                .map(|_| {
                    Ok(Step {
                        observation: read_obs(r)?,
                        action: r.usize()?,
                        reward: r.f64()?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            entries.push(Trajectory {
                steps,
                total_return,
                effective_length,
                terminal_kind,
            });
        }
        Ok(MBuffer { capacity, entries })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RBuffer {
    capacity: usize,
    entries: VecDeque<(Observation, usize)>,
}

impl RBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Validation("R-buffer capacity must be positive".into()));
        }
        Ok(RBuffer {
            capacity,
            entries: VecDeque::with_capacity(capacity.min(4096)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(Observation, usize)> {
        self.entries.iter()
    }

    /// Appends in order, evicting the oldest entries beyond capacity.
    pub fn push_failures(&mut self, pairs: impl IntoIterator<Item = (Observation, usize)>) {
        for p in pairs {
            if self.entries.len() == self.capacity {
                self.entries.pop_front();
            }
            self.entries.push_back(p);
        }
    }

    /// Exactly `batch` uniform draws with replacement.
    pub fn sample(&self, batch: usize, rng: &mut Rng) -> Result<Vec<(Observation, usize)>> {
        if self.entries.is_empty() {
            return Err(Error::EmptyBuffer("R"));
        }
        Ok((0..batch)
            .map(|_| self.entries[rng.gen_range(0..self.entries.len())])
            .collect())
    }

    pub fn write(&self, w: &mut Writer) {
        w.usize(self.capacity);
        w.usize(self.entries.len());
        for &(o, a) in &self.entries {
            write_obs(w, o);
            w.usize(a);
        }
    }

    pub fn read(r: &mut Reader) -> Result<Self> {
        let capacity = r.usize()?;
        let n = r.usize()?;
        if n > capacity {
            return Err(Error::Checkpoint("R-buffer holds more entries than its capacity".into()));
        }
        let entries = (0..n)
            .map(|_| Ok((read_obs(r)?, r.usize()?)))
            .collect::<Result<VecDeque<_>>>()?;
        Ok(RBuffer { capacity, entries })
    }
}

fn write_obs(w: &mut Writer, o: Observation) {
    w.usize(o.index());
    w.usize(o.dim());
}

fn read_obs(r: &mut Reader) -> Result<Observation> {
    let index = r.usize()?;
    let dim = r.usize()?;
    Observation::new(index, dim).map_err(|e| Error::Checkpoint(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    fn obs(i: usize) -> Observation {
        Observation::new(i, 64).unwrap()
    }

    fn steps(rewards: &[f64]) -> Vec<Step> {
        rewards
            .iter()
            .enumerate()
            .map(|(i, &r)| Step {
                observation: obs(i),
                action: i % 4,
                reward: r,
            })
            .collect()
    }

    fn traj(ret: f64, len: usize) -> Trajectory {
        let mut r = vec![0.0; len];
        r[0] = ret;
        finalize_trajectory(steps(&r), TerminalKind::Goal).unwrap()
    }

    #[test]
    fn goal_trajectory_kept_whole() {
        let t = finalize_trajectory(steps(&[-1.0; 10]), TerminalKind::Goal).unwrap();
        assert_eq!(t.effective_length(), 10);
        assert_eq!(t.steps().len(), 10);
        assert_eq!(t.total_return(), -10.0);
    }

    #[test]
    fn death_drops_fatal_step() {
        let mut r = vec![-1.0; 10];
        r[9] = -100.0;
        let t = finalize_trajectory(steps(&r), TerminalKind::Death).unwrap();
        assert_eq!(t.effective_length(), 9);
        assert_eq!(t.total_return(), -9.0);
    }

    #[test]
    fn one_step_death_is_not_offerable() {
        let t = finalize_trajectory(steps(&[-100.0]), TerminalKind::Death).unwrap();
        assert_eq!(t.effective_length(), 0);
        assert!(!t.is_offerable());
        let mut buf = MBuffer::new(3).unwrap();
        assert_eq!(buf.offer(t), OfferOutcome::Rejected(RejectReason::ZeroLength));
        assert!(finalize_trajectory(vec![], TerminalKind::Goal).is_err());
    }

    #[test]
    fn replacement_rules() {
        let mut buf = MBuffer::new(2).unwrap();
        assert_eq!(buf.offer(traj(5.0, 4)), OfferOutcome::Inserted);
        assert_eq!(buf.offer(traj(3.0, 6)), OfferOutcome::Inserted);
        // Equal return, two steps shorter: evicts the worst.
        assert_eq!(buf.offer(traj(3.0, 4)), OfferOutcome::Replaced);
        assert_eq!(buf.worst().unwrap().effective_length(), 4);
        let before = buf.clone();
        assert_eq!(
            buf.offer(traj(2.0, 1)),
            OfferOutcome::Rejected(RejectReason::NotBetterThanWorst)
        );
        assert_eq!(buf, before);
        // Exact tie with the worst is rejected.
        assert!(!buf.offer(traj(3.0, 4)).accepted());
    }

    #[test]
    fn sample_single_entry_and_determinism() {
        let mut buf = MBuffer::new(10).unwrap();
        assert!(matches!(buf.sample(&mut rng_from(0)), Err(Error::EmptyBuffer("M"))));
        buf.offer(traj(1.0, 2));
        assert_eq!(buf.sample(&mut rng_from(0)).unwrap(), &buf.entries()[0]);
        for i in 0..9 {
            buf.offer(traj(i as f64, 3));
        }
        let a = buf.sample(&mut rng_from(42)).unwrap().clone();
        let b = buf.sample(&mut rng_from(42)).unwrap().clone();
        assert_eq!(a, b);
    }

    #[test]
    fn rbuffer_ring_semantics() {
        let mut rb = RBuffer::new(5).unwrap();
        rb.push_failures((0..3).map(|i| (obs(i), 0)));
        assert_eq!(rb.len(), 3);
        rb.push_failures((3..10).map(|i| (obs(i), 1)));
        assert_eq!(rb.len(), 5);
        let kept: Vec<usize> = rb.iter().map(|(o, _)| o.index()).collect();
        assert_eq!(kept, vec![5, 6, 7, 8, 9]);
    }

    #[test]
    fn rbuffer_sampling() {
        let mut rb = RBuffer::new(5).unwrap();
        assert!(rb.sample(1, &mut rng_from(0)).is_err());
        rb.push_failures([(obs(3), 2)]);
        assert_eq!(rb.sample(1, &mut rng_from(0)).unwrap(), vec![(obs(3), 2)]);
        rb.push_failures((0..4).map(|i| (obs(i), 0)));
        let a = rb.sample(128, &mut rng_from(9)).unwrap();
        assert_eq!(a.len(), 128);
        assert_eq!(a, rb.sample(128, &mut rng_from(9)).unwrap());
    }

    #[test]
    fn buffers_round_trip() {
        let mut mb = MBuffer::new(4).unwrap();
        mb.offer(traj(1.5, 3));
        mb.offer(finalize_trajectory(steps(&[-1.0, -1.0, -100.0]), TerminalKind::Death).unwrap());
        let mut rb = RBuffer::new(8).unwrap();
        rb.push_failures([(obs(1), 3), (obs(7), 0)]);
        let mut w = Writer::new();
        mb.write(&mut w);
        rb.write(&mut w);
        let bytes = w.finish();
        let mut r = Reader::new(&bytes);
        assert_eq!(MBuffer::read(&mut r).unwrap(), mb);
        assert_eq!(RBuffer::read(&mut r).unwrap(), rb);
        assert!(r.is_at_end());
    }
}
