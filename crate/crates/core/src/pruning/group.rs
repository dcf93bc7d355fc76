use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    Weights,
    Channels,
}

/// A prunable member: a weight (flat index into a dense layer's matrix) or a
/// channel of a batch-norm layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Member {
    pub layer: usize,
    pub index: usize,
}

/// A set of members ranked and pruned together.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneGroup {
    pub id: String,
    pub kind: GroupKind,
    pub members: Vec<Member>,
    /// Last ranking metric per member.
    pub scores: Vec<f64>,
    /// Raw magnitude per member (`|w|` or `|gamma|`); breaks metric ties.
    pub magnitudes: Vec<f64>,
    pub mask: Vec<bool>,
}

impl PruneGroup {
    pub fn new(id: impl Into<String>, kind: GroupKind, members: Vec<Member>) -> Self {
        let n = members.len();
        PruneGroup {
            id: id.into(),
            kind,
            members,
            scores: vec![0.0; n],
            magnitudes: vec![0.0; n],
            mask: vec![true; n],
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn kept(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Positions of the members still kept.
    pub fn kept_positions(&self) -> Vec<usize> {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
    }
}

/// Keeps the top-`keep` currently-kept members by `metric`, pruning the rest.
///
/// Ties are broken by larger magnitude, then lower position. Pruned members
/// never come back. Returns the positions pruned by this call, ascending.
pub fn prune_group(group: &mut PruneGroup, metric: &[f64], keep: usize) -> Result<Vec<usize>> {
    if metric.len() != group.len() {
        return Err(Error::shape(format!(
            "{} metric values for a group of {}",
            metric.len(),
            group.len()
        )));
    }
    let mut kept = group.kept_positions();
    if keep > kept.len() {
        return Err(Error::invalid(format!(
            "group {} keeps {} members; cannot grow back to {keep}",
            group.id,
            kept.len()
        )));
    }
    if kept.iter().any(|&i| !metric[i].is_finite()) {
        return Err(Error::invalid("ranking metric must be finite"));
    }
    let mags = &group.magnitudes;
    kept.sort_by(|&a, &b| {
        metric[b]
            .total_cmp(&metric[a])
            .then(mags[b].total_cmp(&mags[a]))
            .then(a.cmp(&b))
    });
    let mut pruned: Vec<usize> = kept[keep..].to_vec();
    pruned.sort_unstable();
    for &i in &pruned {
        group.mask[i] = false;
    }
    for &i in &kept[..keep] {
        group.scores[i] = metric[i];
    }
    Ok(pruned)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn group(n: usize) -> PruneGroup {
        PruneGroup::new("g", GroupKind::Weights, (0..n).map(|index| Member { layer: 0, index }).collect())
    }

    /// Best 2-subset by total metric, then total magnitude, then lexicographic indices.
    fn brute_force_best_pair(metric: &[f64], mags: &[f64]) -> Vec<usize> {
        let mut best: Option<(Vec<usize>, f64, f64)> = None;
        for a in 0..metric.len() {
            for b in a + 1..metric.len() {
                let cand = vec![a, b];
                let (m, g) = (metric[a] + metric[b], mags[a] + mags[b]);
                let better = match &best {
                    None => true,
                    Some((_, bm, bg)) => m > *bm || (m == *bm && g > *bg),
                };
                if better {
                    best = Some((cand, m, g));
                }
            }
        }
        best.unwrap().0
    }

    #[test]
    fn tie_break_by_magnitude_then_index() {
        let metric = [0.9, 0.1, 0.5, 0.5];
        let mut g = group(4);
        g.magnitudes = vec![1., 1., 2., 1.];
        let pruned = prune_group(&mut g, &metric, 2).unwrap();
        assert_eq!(pruned, vec![1, 3]);
        assert_eq!(g.kept_positions(), brute_force_best_pair(&metric, &g.magnitudes));
        assert_eq!(g.kept_positions(), vec![0, 2]);
    }

    #[test]
    fn equal_magnitudes_fall_back_to_lower_index() {
        let mut g = group(3);
        g.magnitudes = vec![1.0; 3];
        prune_group(&mut g, &[0.5, 0.5, 0.5], 1).unwrap();
        assert_eq!(g.kept_positions(), vec![0]);
    }

    #[test]
    fn keep_all_and_keep_none() {
        let mut g = group(3);
        assert!(prune_group(&mut g, &[1., 2., 3.], 3).unwrap().is_empty());
        assert_eq!(g.mask, vec![true; 3]);
        prune_group(&mut g, &[1., 2., 3.], 0).unwrap();
        assert_eq!(g.kept(), 0);
    }

    #[test]
    fn regrowth_is_rejected_and_pruned_members_stay_out() {
        let mut g = group(4);
        prune_group(&mut g, &[4., 3., 2., 1.], 2).unwrap();
        assert!(prune_group(&mut g, &[0., 0., 9., 9.], 3).is_err());
        // the pruned members score highest now but are not eligible
        prune_group(&mut g, &[0., 1., 9., 9.], 1).unwrap();
        assert_eq!(g.kept_positions(), vec![1]);
    }
}
