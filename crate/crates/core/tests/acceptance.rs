//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use aad_evalkit::balance::balance_index;
use aad_evalkit::decoder::{run_training, TrainConfig};
use aad_evalkit::experiment::{
    plan_partitions, run_experiment, run_experiment_in_memory, DecoderKind, ExperimentConfig,
};
use aad_evalkit::metrics::{contrastive_pcc_loss, pcc_gradient, pearson};
use aad_evalkit::partition::{audit_partition, enumerate_partitions, make_fold_plan, Strategy};
use aad_evalkit::stats::wilcoxon_signed_rank;
use aad_evalkit::synth::{build_scenario, Design, ScenarioConfig};
use aad_evalkit::Error;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:.2?}, limit {limit:?}"))
}

fn bi(rows: &[(String, Vec<String>)]) -> f64 {
    balance_index(&common::dataset_from(rows)).unwrap().balance_index
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..500 {
        let rows = common::random_rows(&mut rng);
        let value = bi(&rows);
        ensure((0.0..=1.0).contains(&value), || format!("case {case}: BI {value}"))?;
        let oracle = common::oracle_balance_index(&rows);
        ensure((value - oracle).abs() < 1e-12, || {
            format!("case {case}: BI {value} vs oracle {oracle}")
        })?;

        // renaming every stimulus and shuffling trial order
        let mut renamed: Vec<_> = rows
            .iter()
            .map(|(a, us)| (format!("x_{a}"), us.iter().map(|u| format!("x_{u}")).collect()))
            .collect();
        renamed.shuffle(&mut rng);
        let moved = bi(&renamed);
        ensure((moved - value).abs() < 1e-12, || {
            format!("case {case}: renamed BI {moved} vs {value}")
        })?;

        let equal = bi(&common::equal_role_rows(&mut rng));
        ensure(equal == 0.0, || format!("case {case}: equal-role BI {equal}"))?;
        let exclusive = bi(&common::exclusive_rows(&mut rng));
        ensure(exclusive == 1.0, || format!("case {case}: exclusive BI {exclusive}"))?;
    }
    within(start.elapsed(), Duration::from_secs(5))?;
    Ok(format!("500 sets in {:.2?}", start.elapsed()))
}

fn criterion_2() -> Outcome {
    let row = |a: &str, u: &str| (a.to_string(), vec![u.to_string()]);
    let rows = vec![row("A", "B"), row("A", "B"), row("A", "B"), row("B", "A")];
    let value = bi(&rows);
    ensure(value == 0.5, || format!("BI {value}"))?;

    let rho = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
    let expected = 9.0 / 84f64.sqrt();
    ensure((rho - expected).abs() < 1e-12, || format!("rho {rho} vs {expected}"))?;

    // zero-mean orthonormal rows of an 8x8 Hadamard matrix
    let h = |k: usize| -> Vec<f64> {
        (0..8usize)
            .map(|i| {
                (if (i & k).count_ones().is_multiple_of(2) {
                    1.0
                } else {
                    -1.0
                }) / 8f64.sqrt()
            })
            .collect()
    };
    let comb =
        |a: f64, x: &[f64], b: f64, y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| a * p + b * q).collect() };
    let pred = h(1);
    let att = comb(0.5, &h(1), 0.75f64.sqrt(), &h(2));
    let u1 = comb(0.2, &h(1), 0.96f64.sqrt(), &h(3));
    let u2 = h(4);
    let loss = contrastive_pcc_loss(&pred, &att, &[&u1, &u2]).unwrap();
    ensure((loss + 0.4).abs() < 1e-12, || format!("contrastive loss {loss}"))?;
    Ok(format!("BI {value}, rho {rho:.15}, contrastive {loss:.15}"))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    let mut partitions = 0;
    while checked < 200 {
        let n_stim = rng.random_range(4..10);
        let n_trials = rng.random_range(8..40);
        let d = common::dataset_from(&common::random_pair_rows(&mut rng, n_stim, n_trials));
        for k in 3..=5 {
            let plan = match make_fold_plan(&d, Strategy::Lopeo, k, rng.random()) {
                Ok(p) => p,
                Err(Error::InsufficientKeys { .. }) => continue,
                Err(e) => return Err(e.to_string()),
            };
            for p in enumerate_partitions(&plan, &d).map_err(|e| e.to_string())? {
                let lopeo = audit_partition(&p, &d, Strategy::Lopeo).unwrap();
                ensure(lopeo.passed && lopeo.violations.is_empty(), || {
                    format!("set {checked}, K {k}: {} pair leaks", lopeo.violations.len())
                })?;
                ensure(audit_partition(&p, &d, Strategy::Loto).unwrap().passed, || {
                    format!("set {checked}, K {k}: LOPEO partition fails LOTO audit")
                })?;
                partitions += 1;
            }
        }
        checked += 1;
    }

    // recurring pairs split by trial
    let rows: Vec<_> = (0..12)
        .map(|i| (format!("a{}", i % 3), vec![format!("b{}", i % 3)]))
        .collect();
    let d = common::dataset_from(&rows);
    let plan = make_fold_plan(&d, Strategy::Loto, 4, 0).unwrap();
    let failing = enumerate_partitions(&plan, &d)
        .unwrap()
        .iter()
        .filter(|p| !audit_partition(p, &d, Strategy::Lopeo).unwrap().passed)
        .count();
    ensure(failing > 0, || "no LOTO partition failed the LOPEO audit".into())?;
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!(
        "{partitions} LOPEO partitions clean, {failing} LOTO partitions flagged, {:.2?}",
        start.elapsed()
    ))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let n = rng.random_range(5..80);
        let pred: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let target: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let analytic = pcc_gradient(&pred, &target).unwrap();
        let h = 1e-6;
        let numeric: Vec<f64> = (0..n)
            .map(|i| {
                let mut up = pred.clone();
                let mut down = pred.clone();
                up[i] += h;
                down[i] -= h;
                (common::oracle_pearson(&up, &target) - common::oracle_pearson(&down, &target)) / (2.0 * h)
            })
            .collect();
        let diff = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
        let rel = diff / norm;
        worst = worst.max(rel);
        ensure(rel < 1e-5, || format!("case {case}: relative error {rel:e}"))?;
    }
    Ok(format!("100 cases, worst relative error {worst:.2e}"))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..100 {
        let n = 5 + case % 6;
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
        let nonzero = a.iter().zip(&b).filter(|(x, y)| x != y).count();
        if nonzero < 5 {
            continue;
        }
        let p = wilcoxon_signed_rank(&a, &b).map_err(|e| e.to_string())?.p_value;
        let oracle = common::enumeration_wilcoxon_p(&a, &b);
        ensure((p - oracle).abs() < 1e-12, || {
            format!("case {case}: p {p} vs enumeration {oracle}")
        })?;
    }
    let p = wilcoxon_signed_rank(&[2.0, 3.0, 4.0, 5.0, 6.0], &[1.0; 5])
        .unwrap()
        .p_value;
    ensure(p == 0.0625, || format!("all-positive n=5 gives p {p}"))?;
    Ok(format!("100 samples match enumeration, all-positive p = {p}"))
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let mut partitions = 0;
    for design in [Design::Exclusive, Design::Balanced] {
        let mut sc = ScenarioConfig::new(4, 4, design, 6);
        sc.noise_sigma = 0.0;
        sc.trial_seconds = 30.0;
        let s = build_scenario(&sc).map_err(|e| e.to_string())?;
        for strategy in Strategy::ALL {
            let cfg = ExperimentConfig::new(strategy, 4, 6, DecoderKind::Ridge);
            let r = run_experiment_in_memory(&s.dataset, &s.signals, &cfg).map_err(|e| e.to_string())?;
            for p in &r.per_partition {
                ensure(p.acc == 1.0, || {
                    format!("{design:?} {strategy} ({}, {}): acc {}", p.t, p.v, p.acc)
                })?;
            }
            partitions += r.per_partition.len();
        }
    }
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!(
        "{partitions} partitions at accuracy 1.0 in {:.2?}",
        start.elapsed()
    ))
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let seeds = 0..5u64;
    let mut acc: BTreeMap<(Strategy, bool), f64> = BTreeMap::new();
    for seed in seeds.clone() {
        for design in [Design::Exclusive, Design::Balanced] {
            let s = build_scenario(&ScenarioConfig::new(4, 4, design, seed)).map_err(|e| e.to_string())?;
            for strategy in [Strategy::Loto, Strategy::Lopeo] {
                let mut cfg = ExperimentConfig::new(strategy, 4, seed, DecoderKind::Memorizing);
                cfg.window_seconds = 10.0;
                let r = run_experiment_in_memory(&s.dataset, &s.signals, &cfg).map_err(|e| e.to_string())?;
                *acc.entry((strategy, design == Design::Exclusive)).or_default() +=
                    r.rows[0].acc.mean / seeds.clone().count() as f64;
            }
        }
    }
    let loto1 = acc[&(Strategy::Loto, true)];
    let loto0 = acc[&(Strategy::Loto, false)];
    let lopeo1 = acc[&(Strategy::Lopeo, true)];
    let lopeo0 = acc[&(Strategy::Lopeo, false)];
    let summary = format!(
        "LOTO BI1 {loto1:.3}, LOTO BI0 {loto0:.3}, LOPEO BI1 {lopeo1:.3}, LOPEO BI0 {lopeo0:.3}, {:.1?}",
        start.elapsed()
    );
    ensure(loto1 - lopeo1 >= 0.10, || {
        format!("LOTO1 - LOPEO1 = {:.3}; {summary}", loto1 - lopeo1)
    })?;
    ensure(loto1 - loto0 >= 0.10, || {
        format!("LOTO1 - LOTO0 = {:.3}; {summary}", loto1 - loto0)
    })?;
    ensure((lopeo1 - lopeo0).abs() <= 0.07, || {
        format!("|LOPEO1 - LOPEO0| = {:.3}; {summary}", (lopeo1 - lopeo0).abs())
    })?;
    within(start.elapsed(), Duration::from_secs(300))?;
    Ok(summary)
}

fn criterion_8() -> Outcome {
    // stagnant loss: one halving after five stagnant epochs, then cooldown
    let cfg = TrainConfig {
        early_stop_patience: 10,
        max_epochs: 100,
        ..TrainConfig::default()
    };
    let log = run_training(&cfg, |_, _| Ok((1.0, 1.0))).map_err(|e| e.to_string())?;
    let halvings: Vec<usize> = log.lr_reductions().collect();
    ensure(halvings == [6], || format!("stagnant halvings {halvings:?}"))?;
    ensure(log.epochs.len() == 11 && log.stopped_early, || {
        format!("stagnant run stopped at {}", log.epochs.len())
    })?;
    let lr0 = cfg.learning_rate;
    ensure(
        log.epochs[..6].iter().all(|e| e.learning_rate == lr0)
            && log.epochs[6..].iter().all(|e| e.learning_rate == lr0 / 2.0),
        || "learning rates do not follow the halving".into(),
    )?;

    let long = TrainConfig {
        early_stop_patience: 1000,
        max_epochs: 20,
        ..TrainConfig::default()
    };
    let log = run_training(&long, |_, _| Ok((1.0, 1.0))).map_err(|e| e.to_string())?;
    let long_halvings: Vec<usize> = log.lr_reductions().collect();
    ensure(long_halvings == [6, 16], || {
        format!("long stagnant halvings {long_halvings:?}")
    })?;

    let log = run_training(&cfg, |epoch, _| Ok((1.0, epoch as f64))).map_err(|e| e.to_string())?;
    ensure(
        log.epochs.len() == 11 && log.stopped_early && log.best_epoch == 1,
        || {
            format!(
                "worsening run stopped at {} (best {})",
                log.epochs.len(),
                log.best_epoch
            )
        },
    )?;
    Ok(format!(
        "halving at {halvings:?}, cooldown-spaced {long_halvings:?}, stop at epoch 11"
    ))
}

fn end_to_end(root: &Path, jobs: usize) -> Result<Vec<(String, Vec<u8>)>, String> {
    let e = |x: Error| x.to_string();
    let mut sc = ScenarioConfig::new(3, 2, Design::Exclusive, 9);
    sc.trial_seconds = 20.0;
    sc.channels = 4;
    sc.noise_sigma = 5.0;
    build_scenario(&sc).map_err(e)?.write(root).map_err(e)?;
    let metadata = root.join("trials.csv");
    let dataset = aad_evalkit::dataset::parse_trial_metadata(&metadata).map_err(e)?;

    let mut out = Vec::new();
    for decoder in [DecoderKind::Ridge, DecoderKind::Gradient, DecoderKind::Memorizing] {
        let mut cfg = ExperimentConfig::new(Strategy::Loto, 3, 9, decoder);
        cfg.window_seconds = 5.0;
        cfg.train.max_epochs = 4;
        cfg.jobs = Some(jobs);
        let folds = root.join(format!("folds-{}.json", decoder.as_str()));
        std::fs::write(&folds, plan_partitions(&dataset, &cfg).map_err(e)?.to_json_string())
            .map_err(|x| x.to_string())?;
        let results = run_experiment(&metadata, root, Some(&folds), &cfg).map_err(e)?;
        let path = root.join(format!("results-{}.json", decoder.as_str()));
        std::fs::write(&path, results.to_json_string()).map_err(|x| x.to_string())?;
        for p in [folds, path] {
            out.push((
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            ));
        }
    }
    Ok(out)
}

fn criterion_9() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = end_to_end(a.path(), 1)?;
    let second = end_to_end(b.path(), 4)?;
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        ensure(x == y, || format!("{name} differs between runs"))?;
    }

    Ok(format!("{} files byte-identical across runs", first.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("balance index properties", criterion_1),
        ("hand-computed values", criterion_2),
        ("partition audits", criterion_3),
        ("correlation gradient", criterion_4),
        ("exact Wilcoxon", criterion_5),
        ("noiseless ridge decoding", criterion_6),
        ("memorization overestimation", criterion_7),
        ("learning-rate schedule and early stopping", criterion_8),
        ("end-to-end determinism", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
