//! Stimulus-role balance.
//!
//! For every stimulus `j` the dataset records how often it was attended
//! (`n_att`) and how often it competed (`n_unatt`). The balance index is the
//! mean over stimuli of `|n_att - n_unatt| / (n_att + n_unatt)`: 0 when each
//! stimulus is attended exactly as often as it is ignored, 1 when every
//! stimulus is locked to a single role.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, StimulusId, TrialRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roles {
    pub attended: u64,
    pub unattended: u64,
}

impl Roles {
    pub fn total(&self) -> u64 {
        self.attended + self.unattended
    }

    /// `|n_att - n_unatt| / (n_att + n_unatt)`, in `[0, 1]`.
    pub fn imbalance(&self) -> f64 {
        self.attended.abs_diff(self.unattended) as f64 / self.total() as f64
    }

    fn conflict(&self) -> u64 {
        self.attended.min(self.unattended)
    }
}

/// Per-stimulus role counts. Every entry has a positive total.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RoleCounts(BTreeMap<StimulusId, Roles>);

impl RoleCounts {
    fn add(&mut self, trial: &TrialRecord) {
        self.0.entry(trial.attended().clone()).or_default().attended += 1;
        for u in trial.unattended() {
            self.0.entry(u.clone()).or_default().unattended += 1;
        }
    }

    pub fn get(&self, id: &StimulusId) -> Option<Roles> {
        self.0.get(id).copied()
    }

    /// Number of distinct stimuli.
    pub fn n_audio(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&StimulusId, &Roles)> {
        self.0.iter()
    }
}

/// Counts stimulus roles: each trial adds one attended count for its attended
/// stimulus and one unattended count for each competitor.
pub fn role_counts(d: &Dataset) -> Result<RoleCounts> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut counts = RoleCounts::default();
    for t in d.trials() {
        counts.add(t);
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub balance_index: f64,
    pub n_audio: usize,
    pub counts: RoleCounts,
    pub per_stimulus_imbalance: BTreeMap<StimulusId, f64>,
}

impl BalanceReport {
    fn from_counts(counts: RoleCounts) -> Self {
        let per_stimulus_imbalance: BTreeMap<_, _> = counts
            .iter()
            .map(|(id, roles)| (id.clone(), roles.imbalance()))
            .collect();
        let balance_index = per_stimulus_imbalance.values().sum::<f64>() / per_stimulus_imbalance.len() as f64;
        BalanceReport {
            balance_index,
            n_audio: counts.n_audio(),
            counts,
            per_stimulus_imbalance,
        }
    }
}

pub fn balance_index(d: &Dataset) -> Result<BalanceReport> {
    role_counts(d).map(BalanceReport::from_counts)
}

/// Balance index of each subject's trials taken separately.
pub fn balance_by_subject(d: &Dataset) -> Result<BTreeMap<String, BalanceReport>> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    d.by_subject()
        .into_iter()
        .map(|(s, sub)| Ok((s.to_string(), balance_index(&sub)?)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsetTarget {
    /// Every retained stimulus attended as often as it competes (index 0).
    Balanced,
    /// No retained stimulus appears in both roles (index 1).
    Exclusive,
}

impl fmt::Display for SubsetTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SubsetTarget::Balanced => "balanced",
            SubsetTarget::Exclusive => "exclusive",
        })
    }
}

impl std::str::FromStr for SubsetTarget {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "balanced" => Ok(SubsetTarget::Balanced),
            "exclusive" => Ok(SubsetTarget::Exclusive),
            other => Err(format!("unknown subset target {other:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Subset {
    pub dataset: Dataset,
    /// Positions of the retained trials in the source dataset.
    pub kept: Vec<usize>,
    pub report: BalanceReport,
}

/// Selects a sub-dataset whose balance index is 0 (`Balanced`) or 1 (`Exclusive`).
///
/// `Exclusive` starts from all trials and repeatedly drops the trial whose
/// removal most reduces the total minority-role count
/// `sum_j min(n_att_j, n_unatt_j)`, ties going to the earliest trial, until no
/// stimulus is used in both roles.
///
/// `Balanced` only considers two-speaker trials (a trial with `k` competitors
/// adds 1 attended and `k` unattended counts, so trials with `k > 1` can never
/// be part of a balanced set). Reading each trial as a directed edge
/// attended → unattended, a set is balanced exactly when it is a union of
/// directed cycles. Trials are visited in order and each unused trial whose
/// edge closes a cycle over the remaining unused trials is kept together with
/// the shortest such cycle.
pub fn extreme_subset(d: &Dataset, target: SubsetTarget) -> Result<Subset> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let kept = match target {
        SubsetTarget::Exclusive => exclusive_indices(d),
        SubsetTarget::Balanced => balanced_indices(d),
    };
    if kept.is_empty() {
        return Err(Error::NoFeasibleSubset(match target {
            SubsetTarget::Balanced => "balanced",
            SubsetTarget::Exclusive => "exclusive",
        }));
    }
    let trials = kept.iter().map(|&i| d.trials()[i].clone()).collect();
    let dataset = Dataset::from_trials_unchecked(format!("{}-{target}", d.name()), trials);
    let report = balance_index(&dataset)?;
    Ok(Subset { dataset, kept, report })
}

fn exclusive_indices(d: &Dataset) -> Vec<usize> {
    let mut counts = role_counts(d).expect("non-empty");
    let mut alive = vec![true; d.len()];
    let mut conflict: u64 = counts.iter().map(|(_, r)| r.conflict()).sum();

    while conflict > 0 {
        let mut best: Option<(usize, u64)> = None;
        for (i, t) in d.trials().iter().enumerate().filter(|(i, _)| alive[*i]) {
            let gain = removal_gain(&counts, t);
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((i, gain));
            }
        }
        let (drop, gain) = best.expect("a conflicting dataset has trials");
        // some removal always lowers the conflict while any remains
        debug_assert!(gain > 0);
        alive[drop] = false;
        let t = &d.trials()[drop];
        counts.0.get_mut(t.attended()).expect("counted").attended -= 1;
        for u in t.unattended() {
            counts.0.get_mut(u).expect("counted").unattended -= 1;
        }
        conflict -= gain;
    }
    (0..d.len()).filter(|&i| alive[i]).collect()
}

fn removal_gain(counts: &RoleCounts, t: &TrialRecord) -> u64 {
    let mut gain = 0;
    let r = counts.0[t.attended()];
    gain += r.conflict()
        - Roles {
            attended: r.attended - 1,
            ..r
        }
        .conflict();
    for u in t.unattended() {
        let r = counts.0[u];
        gain += r.conflict()
            - Roles {
                unattended: r.unattended - 1,
                ..r
            }
            .conflict();
    }
    gain
}

fn balanced_indices(d: &Dataset) -> Vec<usize> {
    // edges: (trial index, from = attended, to = unattended)
    let edges: Vec<(usize, &StimulusId, &StimulusId)> = d
        .trials()
        .iter()
        .enumerate()
        .filter_map(|(i, t)| match t.unattended() {
            [u] => Some((i, t.attended(), u)),
            _ => None,
        })
        .collect();
    let mut outgoing: BTreeMap<&StimulusId, Vec<usize>> = BTreeMap::new();
    for (e, (_, from, _)) in edges.iter().enumerate() {
        outgoing.entry(*from).or_default().push(e);
    }

    let mut used = vec![false; edges.len()];
    for e in 0..edges.len() {
        if used[e] {
            continue;
        }
        used[e] = true;
        let (_, from, to) = edges[e];
        match shortest_path(&edges, &outgoing, &used, to, from) {
            Some(path) => path.into_iter().for_each(|p| used[p] = true),
            None => used[e] = false,
        }
    }
    let mut kept: Vec<usize> = edges
        .iter()
        .zip(&used)
        .filter(|(_, &u)| u)
        .map(|((i, _, _), _)| *i)
        .collect();
    kept.sort_unstable();
    kept
}

/// Breadth-first search over unused edges; returns the edge indices of the path.
fn shortest_path(
    edges: &[(usize, &StimulusId, &StimulusId)],
    outgoing: &BTreeMap<&StimulusId, Vec<usize>>,
    used: &[bool],
    start: &StimulusId,
    goal: &StimulusId,
) -> Option<Vec<usize>> {
    let mut via: BTreeMap<&StimulusId, Option<usize>> = BTreeMap::from([(start, None)]);
    let mut queue = VecDeque::from([start]);
    while let Some(node) = queue.pop_front() {
        if node == goal {
            let mut path = Vec::new();
            let mut cur = node;
            while let Some(Some(e)) = via.get(cur) {
                path.push(*e);
                cur = edges[*e].1;
            }
            path.reverse();
            return Some(path);
        }
        for &e in outgoing.get(node).into_iter().flatten() {
            let next = edges[e].2;
            if used[e] || via.contains_key(next) {
                continue;
            }
            via.insert(next, Some(e));
            queue.push_back(next);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairs(rows: &[(&str, &str)]) -> Dataset {
        let trials = rows
            .iter()
            .enumerate()
            .map(|(i, (a, u))| TrialRecord::pair(format!("t{i}"), "s", a, u).unwrap())
            .collect();
        Dataset::new("d", trials).unwrap()
    }

    fn sid(s: &str) -> StimulusId {
        StimulusId::new(s).unwrap()
    }

    #[test]
    fn counts_two_speaker_trials() {
        let c = role_counts(&pairs(&[("A", "B"), ("B", "A")])).unwrap();
        assert_eq!(
            c.get(&sid("A")),
            Some(Roles {
                attended: 1,
                unattended: 1
            })
        );
        assert_eq!(
            c.get(&sid("B")),
            Some(Roles {
                attended: 1,
                unattended: 1
            })
        );

        let c = role_counts(&pairs(&[("A", "B"), ("A", "B"), ("A", "B"), ("B", "A")])).unwrap();
        assert_eq!(
            c.get(&sid("A")),
            Some(Roles {
                attended: 3,
                unattended: 1
            })
        );
        assert_eq!(
            c.get(&sid("B")),
            Some(Roles {
                attended: 1,
                unattended: 3
            })
        );
    }

    #[test]
    fn counts_one_unattended_per_competitor() {
        let t = TrialRecord::new("t", "s", sid("A"), vec![sid("B"), sid("C")]).unwrap();
        let c = role_counts(&Dataset::new("d", vec![t]).unwrap()).unwrap();
        assert_eq!(
            c.get(&sid("A")),
            Some(Roles {
                attended: 1,
                unattended: 0
            })
        );
        assert_eq!(
            c.get(&sid("B")),
            Some(Roles {
                attended: 0,
                unattended: 1
            })
        );
        assert_eq!(
            c.get(&sid("C")),
            Some(Roles {
                attended: 0,
                unattended: 1
            })
        );
        assert_eq!(c.n_audio(), 3);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let d = Dataset::new("e", vec![]).unwrap();
        assert!(matches!(role_counts(&d), Err(Error::EmptyDataset)));
        assert!(matches!(balance_index(&d), Err(Error::EmptyDataset)));
    }

    #[test]
    fn balance_index_hand_values() {
        assert_eq!(
            balance_index(&pairs(&[("A", "B"), ("B", "A")])).unwrap().balance_index,
            0.0
        );
        assert_eq!(
            balance_index(&pairs(&[("A", "B"), ("A", "B")])).unwrap().balance_index,
            1.0
        );
        let r = balance_index(&pairs(&[("A", "B"), ("A", "B"), ("A", "B"), ("B", "A")])).unwrap();
        assert_eq!(r.balance_index, 0.5);
        assert_eq!(r.per_stimulus_imbalance[&sid("A")], 0.5);
    }

    #[test]
    fn exclusive_subset_drops_minority_trial() {
        let d = pairs(&[("A", "B"), ("B", "A"), ("A", "B")]);
        let s = extreme_subset(&d, SubsetTarget::Exclusive).unwrap();
        assert_eq!(s.kept, vec![0, 2]);
        assert_eq!(s.report.balance_index, 1.0);
    }

    /// Exhaustive search for the largest exclusive subset, used to check the
    /// greedy result on a small case.
    fn largest_exclusive(d: &Dataset) -> usize {
        let n = d.len();
        (1u32..(1 << n))
            .filter(|mask| {
                let trials = (0..n)
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| d.trials()[i].clone())
                    .collect();
                let sub = Dataset::new("m", trials).unwrap();
                balance_index(&sub).unwrap().balance_index == 1.0
            })
            .map(u32::count_ones)
            .max()
            .unwrap() as usize
    }

    #[test]
    fn exclusive_subset_matches_exhaustive_on_small_case() {
        let d = pairs(&[("A", "B"), ("B", "A"), ("A", "B")]);
        assert_eq!(largest_exclusive(&d), 2);
        let d = pairs(&[("A", "B"), ("B", "C"), ("C", "A"), ("A", "C"), ("B", "A")]);
        let s = extreme_subset(&d, SubsetTarget::Exclusive).unwrap();
        assert_eq!(s.report.balance_index, 1.0);
        assert!(s.kept.len() <= largest_exclusive(&d));
    }

    #[test]
    fn balanced_subset() {
        let d = pairs(&[("A", "B"), ("B", "A")]);
        let s = extreme_subset(&d, SubsetTarget::Balanced).unwrap();
        assert_eq!(s.kept, vec![0, 1]);
        assert_eq!(s.report.balance_index, 0.0);

        let d = pairs(&[("A", "B")]);
        assert!(matches!(
            extreme_subset(&d, SubsetTarget::Balanced),
            Err(Error::NoFeasibleSubset(_))
        ));

        // a three-cycle plus a dangling trial
        let d = pairs(&[("A", "B"), ("A", "D"), ("B", "C"), ("C", "A")]);
        let s = extreme_subset(&d, SubsetTarget::Balanced).unwrap();
        assert_eq!(s.kept, vec![0, 2, 3]);
        assert_eq!(s.report.balance_index, 0.0);
    }

    #[test]
    fn three_speaker_trials_never_balance() {
        let t = TrialRecord::new("t", "s", sid("A"), vec![sid("B"), sid("C")]).unwrap();
        let d = Dataset::new("d", vec![t]).unwrap();
        assert!(extreme_subset(&d, SubsetTarget::Balanced).is_err());
        assert_eq!(extreme_subset(&d, SubsetTarget::Exclusive).unwrap().kept, vec![0]);
    }

    fn arb_trials() -> impl Strategy<Value = Vec<(usize, Vec<usize>)>> {
        prop::collection::vec((0usize..6, prop::collection::btree_set(0usize..6, 1..3)), 1..25)
            .prop_map(|rows| {
                rows.into_iter()
                    .filter_map(|(a, us)| {
                        let us: Vec<usize> = us.into_iter().filter(|u| *u != a).collect();
                        (!us.is_empty()).then_some((a, us))
                    })
                    .collect::<Vec<_>>()
            })
            .prop_filter("non-empty", |rows| !rows.is_empty())
    }

    fn build(rows: &[(usize, Vec<usize>)], names: &[&str]) -> Dataset {
        let trials = rows
            .iter()
            .enumerate()
            .map(|(i, (a, us))| {
                TrialRecord::new(
                    format!("t{i}"),
                    "s",
                    sid(names[*a]),
                    us.iter().map(|u| sid(names[*u])).collect(),
                )
                .unwrap()
            })
            .collect();
        Dataset::new("p", trials).unwrap()
    }

    const NAMES: [&str; 6] = ["a", "b", "c", "d", "e", "f"];
    const RENAMED: [&str; 6] = ["zz", "y1", "q", "M", "00", "k-k"];

    proptest! {
        #[test]
        fn index_bounded_and_invariant(rows in arb_trials(), seed in any::<u64>()) {
            let d = build(&rows, &NAMES);
            let bi = balance_index(&d).unwrap().balance_index;
            prop_assert!((0.0..=1.0).contains(&bi));

            let renamed = balance_index(&build(&rows, &RENAMED)).unwrap().balance_index;
            prop_assert!((bi - renamed).abs() < 1e-12);

            let mut shuffled = rows.clone();
            let k = (seed as usize) % shuffled.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
            prop_assert_eq!(balance_index(&build(&shuffled, &NAMES)).unwrap().balance_index, bi);

            let doubled: Vec<_> = rows.iter().chain(rows.iter()).cloned().collect();
            prop_assert_eq!(balance_index(&build(&doubled, &NAMES)).unwrap().balance_index, bi);
        }

        #[test]
        fn extreme_subsets_hit_their_targets(rows in arb_trials()) {
            let d = build(&rows, &NAMES);
            let ex = extreme_subset(&d, SubsetTarget::Exclusive).unwrap();
            prop_assert_eq!(ex.report.balance_index, 1.0);
            if let Ok(bal) = extreme_subset(&d, SubsetTarget::Balanced) {
                prop_assert_eq!(bal.report.balance_index, 0.0);
            }
        }
    }
}
