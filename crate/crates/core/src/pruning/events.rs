//! Line-delimited JSON log of prune events.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::group::GroupKind;
use super::schedule::PruneMode;
use crate::error::{Error, Result};

/// One prune event on one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    pub epoch: usize,
    pub group_id: String,
    pub kind: GroupKind,
    pub members_before: usize,
    pub members_after: usize,
    pub alpha: f64,
    pub mode: PruneMode,
    pub ratio: f64,
    pub decay_rate: f64,
    pub total_epochs: usize,
    /// Group positions removed by this event, ascending.
    pub pruned: Vec<usize>,
}

pub fn write_event<W: Write>(out: &mut W, event: &PruneEvent) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, event)?;
    out.write_all(b"\n")
}

pub fn read_events<R: BufRead>(input: R) -> Result<Vec<PruneEvent>> {
    let mut events = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::invalid(format!("reading event log: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line)
            .map_err(|e| Error::invalid(format!("event log line {}: {e}", n + 1)))?;
        events.push(event);
    }
    Ok(events)
}

/// Replays an event log, checking that every event only removes members that
/// were still kept and that its counts agree with the previous event.
///
/// Returns the pruned set per group after the last event.
pub fn replay_events(events: &[PruneEvent]) -> Result<BTreeMap<String, BTreeSet<usize>>> {
    let mut pruned: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    let mut kept: BTreeMap<String, usize> = BTreeMap::new();
    let mut last_epoch: BTreeMap<String, usize> = BTreeMap::new();
    for ev in events {
        let gone = pruned.entry(ev.group_id.clone()).or_default();
        if let Some(&prev) = kept.get(&ev.group_id) {
            if prev != ev.members_before {
                return Err(Error::invalid(format!(
                    "group {} epoch {}: {} members before, but the previous event left {prev}",
                    ev.group_id, ev.epoch, ev.members_before
                )));
            }
        }
        if let Some(&prev) = last_epoch.get(&ev.group_id) {
            if ev.epoch <= prev {
                return Err(Error::invalid(format!("group {} events out of order at epoch {}", ev.group_id, ev.epoch)));
            }
        }
        for &p in &ev.pruned {
            if !gone.insert(p) {
                return Err(Error::invalid(format!(
                    "group {} epoch {}: member {p} pruned again (regrowth)",
                    ev.group_id, ev.epoch
                )));
            }
        }
        if ev.members_before - ev.pruned.len() != ev.members_after {
            return Err(Error::invalid(format!(
                "group {} epoch {}: {} - {} != {}",
                ev.group_id,
                ev.epoch,
                ev.members_before,
                ev.pruned.len(),
                ev.members_after
            )));
        }
        kept.insert(ev.group_id.clone(), ev.members_after);
        last_epoch.insert(ev.group_id.clone(), ev.epoch);
    }
    Ok(pruned)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(epoch: usize, before: usize, pruned: Vec<usize>) -> PruneEvent {
        PruneEvent {
            epoch,
            group_id: "fc1".into(),
            kind: GroupKind::Weights,
            members_before: before,
            members_after: before - pruned.len(),
            alpha: 0.4,
            mode: PruneMode::IterativeLogistic,
            ratio: 0.1,
            decay_rate: 4.0,
            total_epochs: 10,
            pruned,
        }
    }

    #[test]
    fn round_trip_through_text() {
        let evs = vec![event(1, 10, vec![2, 5]), event(2, 8, vec![0])];
        let mut buf = Vec::new();
        for e in &evs {
            write_event(&mut buf, e).unwrap();
        }
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 2);
        assert_eq!(read_events(&buf[..]).unwrap(), evs);
    }

    #[test]
    fn replay_accepts_monotone_and_rejects_regrowth() {
        let ok = vec![event(1, 10, vec![2, 5]), event(2, 8, vec![0])];
        let sets = replay_events(&ok).unwrap();
        assert_eq!(sets["fc1"], BTreeSet::from([0, 2, 5]));

        let regrow = vec![event(1, 10, vec![2, 5]), event(2, 8, vec![5])];
        assert!(replay_events(&regrow).is_err());

        let skipped_count = vec![event(1, 10, vec![2]), event(2, 10, vec![3])];
        assert!(replay_events(&skipped_count).is_err());
    }
}
