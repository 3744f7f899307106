//! Cross-validation partitions grouped by trial, stimulus pair or attended stimulus.
//!
//! All three strategies share one mechanism: every trial maps to a grouping
//! key, the distinct keys are shuffled with a seeded generator and dealt
//! round-robin into `K` folds, and each ordered choice of (test fold `t`,
//! validation fold `v != t`) yields one partition with the remaining folds
//! used for training.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, TrialRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Leave-one-trial-out: disjoint trials, stimuli may be shared.
    Loto,
    /// Leave-one-paired-envelope-out: a test trial's unordered stimulus pair
    /// never occurs in training or validation.
    Lopeo,
    /// Leave-one-envelope-out: a test trial's attended stimulus is never
    /// attended in training or validation.
    Loeo,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Loto, Strategy::Lopeo, Strategy::Loeo];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Loto => "loto",
            Strategy::Lopeo => "lopeo",
            Strategy::Loeo => "loeo",
        }
    }

    fn tag(&self) -> KeyTag {
        match self {
            Strategy::Loto => KeyTag::Trial,
            Strategy::Lopeo => KeyTag::Pair,
            Strategy::Loeo => KeyTag::Attended,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown strategy {s:?} (expected loto, lopeo or loeo)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyTag {
    Trial,
    Pair,
    Attended,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupKey {
    pub tag: KeyTag,
    pub value: String,
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.tag {
            KeyTag::Trial => "trial",
            KeyTag::Pair => "pair",
            KeyTag::Attended => "attended",
        };
        write!(f, "{tag}:{}", self.value)
    }
}

pub fn group_key(strategy: Strategy, trial: &TrialRecord) -> Result<GroupKey> {
    let value = match strategy {
        Strategy::Loto => trial.trial_id().to_string(),
        Strategy::Lopeo => trial.stimulus_pair()?.encode(),
        Strategy::Loeo => trial.attended().to_string(),
    };
    Ok(GroupKey {
        tag: strategy.tag(),
        value,
    })
}

/// Assignment of grouping keys to `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub strategy: Strategy,
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Vec<GroupKey>>,
}

impl FoldPlan {
    /// Fold index of every key.
    pub fn fold_of(&self) -> HashMap<&GroupKey, usize> {
        self.folds
            .iter()
            .enumerate()
            .flat_map(|(f, keys)| keys.iter().map(move |k| (k, f)))
            .collect()
    }
}

/// Distinct keys in order of first appearance.
fn collect_keys(d: &Dataset, strategy: Strategy) -> Result<Vec<GroupKey>> {
    let mut seen = HashSet::new();
    let mut keys = Vec::new();
    for t in d.trials() {
        let key = group_key(strategy, t)?;
        if seen.insert(key.clone()) {
            keys.push(key);
        }
    }
    Ok(keys)
}

pub fn make_fold_plan(d: &Dataset, strategy: Strategy, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 3 {
        return Err(Error::NeedThreeFolds(k));
    }
    let mut keys = collect_keys(d, strategy)?;
    if keys.len() < k {
        return Err(Error::InsufficientKeys { keys: keys.len(), k });
    }
    keys.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (i, key) in keys.into_iter().enumerate() {
        folds[i % k].push(key);
    }
    Ok(FoldPlan {
        strategy,
        k,
        seed,
        folds,
    })
}

/// One (train, validation, test) split of trial ids, each in dataset order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partition {
    pub t: usize,
    pub v: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Validation folds paired with each test fold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ValidationFolds {
    /// Every `v != t`: `K (K - 1)` partitions.
    #[default]
    All,
    /// Only `v = t + 1, ..., t + n` (mod `K`).
    PerTest(usize),
}

pub fn enumerate_partitions(plan: &FoldPlan, d: &Dataset) -> Result<Vec<Partition>> {
    enumerate_partitions_with(plan, d, ValidationFolds::All)
}

pub fn enumerate_partitions_with(plan: &FoldPlan, d: &Dataset, validation: ValidationFolds) -> Result<Vec<Partition>> {
    let fold_of = plan.fold_of();
    let trial_fold = d
        .trials()
        .iter()
        .map(|t| {
            let key = group_key(plan.strategy, t)?;
            fold_of
                .get(&key)
                .copied()
                .ok_or_else(|| Error::PlanMismatch(t.trial_id().to_string()))
        })
        .collect::<Result<Vec<usize>>>()?;

    let k = plan.k;
    let per_test = match validation {
        ValidationFolds::All => k - 1,
        ValidationFolds::PerTest(n) => n.clamp(1, k - 1),
    };
    let mut out = Vec::with_capacity(k * per_test);
    for t in 0..k {
        for step in 1..=per_test {
            let v = (t + step) % k;
            let mut p = Partition {
                t,
                v,
                train: Vec::new(),
                val: Vec::new(),
                test: Vec::new(),
            };
            for (trial, &fold) in d.trials().iter().zip(&trial_fold) {
                let id = trial.trial_id().to_string();
                if fold == t {
                    p.test.push(id);
                } else if fold == v {
                    p.val.push(id);
                } else {
                    p.train.push(id);
                }
            }
            out.push(p);
        }
    }
    if matches!(validation, ValidationFolds::All) {
        // enumerate in (t, v) order
        out.sort_by_key(|p| (p.t, p.v));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One leak: a held-out trial and a trial in another split sharing its key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Leak {
    pub held_out_trial: String,
    pub leaking_trial: String,
    pub leaking_split: Split,
    pub leaked_key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub strategy: Strategy,
    pub t: usize,
    pub v: usize,
    pub passed: bool,
    pub train_trials: usize,
    pub val_trials: usize,
    pub test_trials: usize,
    pub violations: Vec<Leak>,
}

/// Checks one partition against a strategy's leakage rule.
///
/// Every strategy requires the three trial sets to be disjoint. On top of
/// that, `Lopeo` forbids any train or validation trial with the same
/// unordered stimulus pair as a test trial, and `Loeo` any train or
/// validation trial attending the same stimulus as a test trial.
pub fn audit_partition(p: &Partition, d: &Dataset, strategy: Strategy) -> Result<AuditReport> {
    let index = d.index();
    let lookup = |id: &String| -> Result<&TrialRecord> {
        index
            .get(id.as_str())
            .map(|&i| &d.trials()[i])
            .ok_or_else(|| Error::UnknownTrial(id.clone()))
    };
    let splits = [(Split::Train, &p.train), (Split::Val, &p.val), (Split::Test, &p.test)];
    for (_, ids) in splits {
        for id in ids {
            lookup(id)?;
        }
    }

    let mut violations = BTreeSet::new();
    let overlap = |held_out: &String, split: Split| Leak {
        held_out_trial: held_out.clone(),
        leaking_trial: held_out.clone(),
        leaking_split: split,
        leaked_key: GroupKey {
            tag: KeyTag::Trial,
            value: held_out.clone(),
        }
        .to_string(),
    };

    let train: HashSet<&String> = p.train.iter().collect();
    let val: HashSet<&String> = p.val.iter().collect();
    for id in &p.test {
        if train.contains(id) {
            violations.insert(overlap(id, Split::Train));
        }
        if val.contains(id) {
            violations.insert(overlap(id, Split::Val));
        }
    }
    for id in &p.val {
        if train.contains(id) {
            violations.insert(overlap(id, Split::Train));
        }
    }

    if strategy != Strategy::Loto {
        let mut by_key: HashMap<GroupKey, Vec<(Split, &String)>> = HashMap::new();
        for (split, ids) in [(Split::Train, &p.train), (Split::Val, &p.val)] {
            for id in ids {
                by_key
                    .entry(group_key(strategy, lookup(id)?)?)
                    .or_default()
                    .push((split, id));
            }
        }
        for id in &p.test {
            let key = group_key(strategy, lookup(id)?)?;
            for (split, other) in by_key.get(&key).into_iter().flatten() {
                // the same trial in two splits is already an overlap violation
                violations.retain(|l: &Leak| {
                    !(l.held_out_trial == *id && l.leaking_trial == **other && l.leaking_split == *split)
                });
                violations.insert(Leak {
                    held_out_trial: id.clone(),
                    leaking_trial: (*other).clone(),
                    leaking_split: *split,
                    leaked_key: key.to_string(),
                });
            }
        }
    }

    let violations: Vec<Leak> = violations.into_iter().collect();
    Ok(AuditReport {
        strategy,
        t: p.t,
        v: p.v,
        passed: violations.is_empty(),
        train_trials: p.train.len(),
        val_trials: p.val.len(),
        test_trials: p.test.len(),
        violations,
    })
}

pub const FOLD_MANIFEST_VERSION: u32 = 1;

/// On-disk form of a fold plan together with its partitions (`folds.json`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldManifest {
    pub strategy: Strategy,
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Vec<String>>,
    pub partitions: Vec<Partition>,
}

impl FoldManifest {
    pub fn new(plan: &FoldPlan, partitions: Vec<Partition>) -> Self {
        FoldManifest {
            strategy: plan.strategy,
            k: plan.k,
            seed: plan.seed,
            folds: plan
                .folds
                .iter()
                .map(|keys| keys.iter().map(|k| k.value.clone()).collect())
                .collect(),
            partitions,
        }
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Parses and checks structural consistency (fold count, disjoint folds,
    /// partition indices in range).
    pub fn from_json_str(text: &str) -> Result<Self> {
        let m: FoldManifest = serde_json::from_str(text)?;
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<()> {
        if self.k < 3 {
            return Err(Error::NeedThreeFolds(self.k));
        }
        if self.folds.len() != self.k {
            return Err(Error::Config(format!(
                "manifest declares k = {} but lists {} folds",
                self.k,
                self.folds.len()
            )));
        }
        let mut seen = HashSet::new();
        for key in self.folds.iter().flatten() {
            if !seen.insert(key) {
                return Err(Error::Config(format!("key {key:?} appears in more than one fold")));
            }
        }
        for p in &self.partitions {
            if p.t >= self.k || p.v >= self.k || p.t == p.v {
                return Err(Error::Config(format!(
                    "partition (t={}, v={}) is not a valid fold pair for k = {}",
                    p.t, p.v, self.k
                )));
            }
        }
        Ok(())
    }

    pub fn plan(&self) -> FoldPlan {
        let tag = self.strategy.tag();
        FoldPlan {
            strategy: self.strategy,
            k: self.k,
            seed: self.seed,
            folds: self
                .folds
                .iter()
                .map(|keys| keys.iter().map(|v| GroupKey { tag, value: v.clone() }).collect())
                .collect(),
        }
    }
}

/// Number of trials falling in each fold; reported next to audits because
/// folds balance key counts, not trial counts.
pub fn trials_per_fold(plan: &FoldPlan, d: &Dataset) -> Result<Vec<usize>> {
    let fold_of = plan.fold_of();
    let mut counts = vec![0; plan.k];
    for t in d.trials() {
        let key = group_key(plan.strategy, t)?;
        let f = fold_of
            .get(&key)
            .ok_or_else(|| Error::PlanMismatch(t.trial_id().to_string()))?;
        counts[*f] += 1;
    }
    Ok(counts)
}

/// How many partitions hold each key in the test role.
pub fn test_role_counts<'a>(plan: &'a FoldPlan, partitions: &[Partition]) -> BTreeMap<&'a GroupKey, usize> {
    let mut out = BTreeMap::new();
    for p in partitions {
        for key in &plan.folds[p.t] {
            *out.entry(key).or_insert(0) += 1;
        }
    }
    out
}
