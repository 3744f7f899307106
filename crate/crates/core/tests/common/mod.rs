#![allow(dead_code)]

use std::collections::HashMap;

use aad_evalkit::dataset::{Dataset, StimulusId, TrialRecord};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn sid(s: &str) -> StimulusId {
    StimulusId::new(s).unwrap()
}

/// Builds a dataset from `(attended, [unattended...])` rows.
pub fn dataset_from(rows: &[(String, Vec<String>)]) -> Dataset {
    let trials = rows
        .iter()
        .enumerate()
        .map(|(i, (a, us))| {
            TrialRecord::new(
                format!("t{i:03}"),
                format!("s{}", i % 3),
                sid(a),
                us.iter().map(|u| sid(u)).collect(),
            )
            .unwrap()
        })
        .collect();
    Dataset::new("random", trials).unwrap()
}

/// Random two-speaker metadata over `n_stim` stimuli.
pub fn random_pair_rows(rng: &mut ChaCha8Rng, n_stim: usize, n_trials: usize) -> Vec<(String, Vec<String>)> {
    (0..n_trials)
        .map(|_| {
            let a = rng.random_range(0..n_stim);
            let mut u = rng.random_range(0..n_stim - 1);
            if u >= a {
                u += 1;
            }
            (format!("s{a}"), vec![format!("s{u}")])
        })
        .collect()
}

/// Random metadata mixing two- and three-speaker trials.
pub fn random_rows(rng: &mut ChaCha8Rng) -> Vec<(String, Vec<String>)> {
    let n_stim = rng.random_range(3..10);
    let n_trials = rng.random_range(1..30);
    (0..n_trials)
        .map(|_| {
            let speakers = if rng.random_bool(0.8) { 2 } else { 3 };
            let mut ids: Vec<usize> = (0..n_stim).collect();
            ids.shuffle(rng);
            let names: Vec<String> = ids[..speakers].iter().map(|i| format!("s{i}")).collect();
            (names[0].clone(), names[1..].to_vec())
        })
        .collect()
}

/// Every pair presented equally often in both role orders.
pub fn equal_role_rows(rng: &mut ChaCha8Rng) -> Vec<(String, Vec<String>)> {
    let n_pairs = rng.random_range(1..8);
    let mut rows = Vec::new();
    for p in 0..n_pairs {
        let reps = rng.random_range(1..4);
        for _ in 0..reps {
            rows.push((format!("a{p}"), vec![format!("b{p}")]));
            rows.push((format!("b{p}"), vec![format!("a{p}")]));
        }
    }
    rows.shuffle(rng);
    rows
}

/// Attended and unattended stimuli drawn from disjoint pools.
pub fn exclusive_rows(rng: &mut ChaCha8Rng) -> Vec<(String, Vec<String>)> {
    let n_att = rng.random_range(1..6);
    let n_un = rng.random_range(1..6);
    let n_trials = rng.random_range(1..25);
    (0..n_trials)
        .map(|_| {
            (
                format!("att{}", rng.random_range(0..n_att)),
                vec![format!("un{}", rng.random_range(0..n_un))],
            )
        })
        .collect()
}

/// Balance index computed straight from the rows.
pub fn oracle_balance_index(rows: &[(String, Vec<String>)]) -> f64 {
    let mut counts: HashMap<&str, (f64, f64)> = HashMap::new();
    for (a, us) in rows {
        counts.entry(a).or_default().0 += 1.0;
        for u in us {
            counts.entry(u).or_default().1 += 1.0;
        }
    }
    counts.values().map(|(a, u)| (a - u).abs() / (a + u)).sum::<f64>() / counts.len() as f64
}

/// Two-sided Wilcoxon p-value by enumerating all 2^n sign assignments.
pub fn enumeration_wilcoxon_p(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    let n = d.len();
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    // average ranks by counting
    let ranks: Vec<f64> = abs
        .iter()
        .map(|x| {
            let below = abs.iter().filter(|y| *y < x).count() as f64;
            let equal = abs.iter().filter(|y| *y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect();
    let total: f64 = ranks.iter().sum();
    let observed: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let dev = (observed - total / 2.0).abs();
    let mut extreme = 0u64;
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if (w - total / 2.0).abs() >= dev - 1e-9 {
            extreme += 1;
        }
    }
    (extreme as f64 / (1u64 << n) as f64).min(1.0)
}

/// Pearson correlation by the textbook two-pass formula.
pub fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Least-squares residual norm of `y` projected on the span of `basis`,
/// via Gram-Schmidt.
pub fn projection_residual(y: &[f64], basis: &[&[f64]]) -> f64 {
    let mut ortho: Vec<Vec<f64>> = Vec::new();
    for b in basis {
        let mut v = b.to_vec();
        for q in &ortho {
            let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-12 {
            v.iter_mut().for_each(|a| *a /= norm);
            ortho.push(v);
        }
    }
    let mut r = y.to_vec();
    for q in &ortho {
        let dot: f64 = r.iter().zip(q).map(|(a, b)| a * b).sum();
        r.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
    }
    r.iter().map(|a| a * a).sum::<f64>().sqrt()
}
