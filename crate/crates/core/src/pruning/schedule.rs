//! How many members a prune group keeps at each epoch.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Normalized logistic progress `g(e) = (s(k(2e/E - 1)) - s(-k)) / (s(k) - s(-k))`.
///
/// `g(0) = 0`, `g(E) = 1`, `g(E/2) = 1/2`; slow at both ends and fastest in
/// the middle, more so for larger decay rates `k`.
pub fn logistic_progress(epoch: usize, total_epochs: usize, decay_rate: f64) -> f64 {
    if epoch == 0 {
        return 0.0;
    }
    if epoch >= total_epochs {
        return 1.0;
    }
    let k = decay_rate;
    let x = k * (2.0 * epoch as f64 / total_epochs as f64 - 1.0);
    (sigmoid(x) - sigmoid(-k)) / (sigmoid(k) - sigmoid(-k))
}

/// Members kept after the prune event at `epoch`: `round(n0 (1 - (1 - r) g(e)))`.
///
/// `ratio` is the kept fraction at the end of the schedule.
pub fn keep_count(epoch: usize, total_epochs: usize, ratio: f64, decay_rate: f64, initial: usize) -> Result<usize> {
    if total_epochs == 0 || epoch > total_epochs {
        return Err(Error::invalid(format!(
            "epoch {epoch} outside the schedule horizon 1..={total_epochs}"
        )));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("kept ratio must lie in (0, 1), got {ratio}")));
    }
    if !(decay_rate > 0.0) {
        return Err(Error::invalid("decay rate must be positive"));
    }
    let n0 = initial as f64;
    if epoch == total_epochs {
        return Ok((n0 * ratio).round() as usize);
    }
    let pruned = n0 * (1.0 - ratio) * logistic_progress(epoch, total_epochs, decay_rate);
    Ok((n0 - pruned).round() as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneMode {
    OneShot,
    IterativeLogistic,
}

/// Kept fraction: one value for every group or one per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KeepRatio {
    Global(f64),
    PerGroup(Vec<f64>),
}

impl KeepRatio {
    pub fn for_group(&self, group: usize) -> Result<f64> {
        match self {
            KeepRatio::Global(r) => Ok(*r),
            KeepRatio::PerGroup(rs) => rs
                .get(group)
                .copied()
                .ok_or_else(|| Error::invalid(format!("no keep ratio configured for group {group}"))),
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match self {
            KeepRatio::Global(r) => vec![*r],
            KeepRatio::PerGroup(rs) => rs.clone(),
        }
    }
}

/// When pruning fires and how much survives each event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneSchedule {
    pub mode: PruneMode,
    pub ratio: KeepRatio,
    pub decay_rate: f64,
    /// Schedule horizon `E`: the epoch of the final prune event.
    pub total_epochs: usize,
    pub prune_epochs: BTreeSet<usize>,
}

impl PruneSchedule {
    /// Prunes every epoch in `warmup + 1 ..= total_epochs` along the logistic curve.
    pub fn iterative(ratio: KeepRatio, decay_rate: f64, total_epochs: usize, warmup: usize) -> Result<Self> {
        let s = PruneSchedule {
            mode: PruneMode::IterativeLogistic,
            ratio,
            decay_rate,
            total_epochs,
            prune_epochs: (warmup + 1..=total_epochs).collect(),
        };
        s.validate()?;
        Ok(s)
    }

    /// A single prune event at `epoch` straight to the target ratio.
    pub fn one_shot(ratio: KeepRatio, epoch: usize) -> Result<Self> {
        let s = PruneSchedule {
            mode: PruneMode::OneShot,
            ratio,
            decay_rate: 1.0,
            total_epochs: epoch,
            prune_epochs: BTreeSet::from([epoch]),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for r in self.ratio.values() {
            if !(r > 0.0 && r < 1.0) {
                problems.push(format!("keep ratio {r} outside (0, 1)"));
            }
        }
        if self.total_epochs == 0 {
            problems.push("schedule horizon must be at least 1 epoch".into());
        }
        if self.prune_epochs.is_empty() {
            problems.push("schedule has no prune epochs".into());
        }
        if self.prune_epochs.iter().any(|&e| e == 0 || e > self.total_epochs) {
            problems.push(format!("prune epochs must lie in 1..={}", self.total_epochs));
        }
        if !(self.decay_rate > 0.0) {
            problems.push("decay rate must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn fires_at(&self, epoch: usize) -> bool {
        self.prune_epochs.contains(&epoch)
    }

    pub fn last_prune_epoch(&self) -> usize {
        self.prune_epochs.last().copied().unwrap_or(0)
    }

    /// Target kept count for `group` (of `initial` members) after the event at `epoch`.
    pub fn target(&self, epoch: usize, group: usize, initial: usize) -> Result<usize> {
        let r = self.ratio.for_group(group)?;
        match self.mode {
            PruneMode::OneShot => Ok((initial as f64 * r).round() as usize),
            PruneMode::IterativeLogistic => keep_count(epoch, self.total_epochs, r, self.decay_rate, initial),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        for k in [2.0, 4.0, 6.0, 8.0] {
            assert_eq!(logistic_progress(0, 80, k), 0.0);
            assert_eq!(logistic_progress(80, 80, k), 1.0);
            assert!((logistic_progress(40, 80, k) - 0.5).abs() < 1e-12);
        }
        assert_eq!(keep_count(0, 80, 0.5, 4.0, 1000).unwrap(), 1000);
        assert_eq!(keep_count(40, 80, 0.5, 4.0, 1000).unwrap(), 750);
    }

    #[test]
    fn final_count_matches_reported_lenet_size() {
        // 95.7 % of 267K pruned leaves 11.5K
        assert_eq!(keep_count(80, 80, 0.043, 4.0, 267_000).unwrap(), 11_481);
    }

    #[test]
    fn larger_decay_rate_is_slower_early() {
        let slow = logistic_progress(10, 80, 8.0);
        let fast = logistic_progress(10, 80, 2.0);
        assert!(slow < fast);
    }

    #[test]
    fn out_of_range_epoch_is_rejected() {
        assert!(keep_count(81, 80, 0.5, 4.0, 10).is_err());
        assert!(keep_count(1, 80, 1.0, 4.0, 10).is_err());
    }

    #[test]
    fn one_shot_target_is_rounded_ratio() {
        let s = PruneSchedule::one_shot(KeepRatio::Global(0.4), 5).unwrap();
        assert_eq!(s.target(5, 0, 12_112).unwrap(), 4_845);
        assert!(s.fires_at(5) && !s.fires_at(4));
    }

    #[test]
    fn iterative_schedule_epochs_follow_warmup() {
        let s = PruneSchedule::iterative(KeepRatio::Global(0.1), 4.0, 10, 5).unwrap();
        assert_eq!(s.prune_epochs.iter().copied().collect::<Vec<_>>(), vec![6, 7, 8, 9, 10]);
        assert!(PruneSchedule::iterative(KeepRatio::Global(1.0), 4.0, 10, 5).is_err());
    }
}
