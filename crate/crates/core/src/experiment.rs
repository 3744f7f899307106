//! End-to-end runner: fold plan, one decoder per partition, windowed
//! evaluation on the test split, aggregation and reporting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balance::balance_index;
use crate::dataset::{parse_trial_metadata, Dataset};
use crate::decoder::{
    build_memorizing_decoder, fit_gradient_decoder, fit_ridge_with, LagMoments, LagWindow, MemoryConfig, TrainConfig,
    TrialSignals, DEFAULT_LAMBDA_GRID,
};
use crate::error::{Error, Result};
use crate::metrics::{windowed_accuracy, EvalWindowing, Loss, WindowScore};
use crate::partition::{enumerate_partitions_with, make_fold_plan, FoldManifest, Partition, Strategy, ValidationFolds};
use crate::signal::SignalSeries;
use crate::signal_io::SignalStore;
use crate::stats::{bonferroni_adjust, wilcoxon_signed_rank, WilcoxonResult};
use crate::synth::{build_scenario, Design, ScenarioConfig};

pub const RESULTS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    Ridge,
    Gradient,
    Memorizing,
}

impl DecoderKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DecoderKind::Ridge => "ridge",
            DecoderKind::Gradient => "gradient",
            DecoderKind::Memorizing => "memorizing",
        }
    }
}

impl std::str::FromStr for DecoderKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ridge" => Ok(DecoderKind::Ridge),
            "gradient" => Ok(DecoderKind::Gradient),
            "memorizing" => Ok(DecoderKind::Memorizing),
            other => Err(format!(
                "unknown decoder {other:?} (expected ridge, gradient or memorizing)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub strategy: Strategy,
    pub k: usize,
    pub seed: u64,
    pub decoder: DecoderKind,
    pub loss: Loss,
    pub window_seconds: f64,
    /// Defaults to 0 to 250 ms at the data's sample rate.
    pub lags: Option<LagWindow>,
    pub lambda_grid: Vec<f64>,
    /// Validation folds per test fold; `None` uses all `K - 1`.
    pub val_per_test: Option<usize>,
    pub train: TrainConfig,
    pub memory: MemoryConfig,
    /// Worker threads; not part of the results.
    #[serde(skip)]
    pub jobs: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(strategy: Strategy, k: usize, seed: u64, decoder: DecoderKind) -> Self {
        ExperimentConfig {
            strategy,
            k,
            seed,
            decoder,
            loss: Loss::Pcc,
            window_seconds: EvalWindowing::default().window_seconds,
            lags: None,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            val_per_test: None,
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            memory: MemoryConfig::default(),
            jobs: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 3 {
            return Err(Error::NeedThreeFolds(self.k));
        }
        EvalWindowing::new(self.window_seconds)?;
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Config("lambda grid must be non-empty and non-negative".into()));
        }
        if self.val_per_test == Some(0) {
            return Err(Error::Config("val_per_test must be positive".into()));
        }
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be positive".into()));
        }
        self.train.validate()?;
        self.memory.validate()
    }

    fn validation(&self) -> ValidationFolds {
        match self.val_per_test {
            Some(n) => ValidationFolds::PerTest(n),
            None => ValidationFolds::All,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionResult {
    pub t: usize,
    pub v: usize,
    pub acc: f64,
    pub rho_a: f64,
    pub rho_u: f64,
    pub delta_rho: f64,
    pub windows: usize,
    pub skipped_windows: usize,
    /// Selected ridge penalty (ridge and memorizing decoders).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambda: Option<f64>,
    /// Epochs run (gradient decoder).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub epochs: Option<usize>,
    /// Test trials for which a stored envelope was matched (memorizing decoder).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub memory_matches: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation across partitions (0 for one partition).
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    pub strategy: Strategy,
    pub dataset: String,
    pub chance_level: f64,
    pub balance_index: f64,
    pub decoder: DecoderKind,
    pub loss: Loss,
    pub acc: MeanStd,
    pub rho_a: MeanStd,
    pub rho_u: MeanStd,
    pub delta_rho: MeanStd,
    pub partitions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentResults {
    pub schema_version: u32,
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub rows: Vec<ResultsRow>,
    pub per_partition: Vec<PartitionResult>,
}

impl ExperimentResults {
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("results serialize");
        s.push('\n');
        s
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Config("results file has no schema_version".into()))?;
        if found != RESULTS_SCHEMA_VERSION as u64 {
            return Err(Error::SchemaMismatch {
                found: found.min(u32::MAX as u64) as u32,
                expected: RESULTS_SCHEMA_VERSION,
            });
        }
        let r: ExperimentResults = serde_json::from_value(value)?;
        r.check()?;
        Ok(r)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    /// Row aggregates must match the per-partition values, and `delta_rho`
    /// must equal `rho_a - rho_u`.
    pub fn check(&self) -> Result<()> {
        const TOL: f64 = 1e-12;
        let close = |a: f64, b: f64| (a - b).abs() <= TOL * (1.0 + a.abs().max(b.abs()));
        for row in &self.rows {
            if row.partitions != self.per_partition.len() {
                return Err(Error::InconsistentResults(format!(
                    "row lists {} partitions, file has {}",
                    row.partitions,
                    self.per_partition.len()
                )));
            }
            let metric =
                |f: fn(&PartitionResult) -> f64| MeanStd::of(&self.per_partition.iter().map(f).collect::<Vec<_>>());
            let expected = [
                ("acc", row.acc, metric(|p| p.acc)),
                ("rho_a", row.rho_a, metric(|p| p.rho_a)),
                ("rho_u", row.rho_u, metric(|p| p.rho_u)),
                ("delta_rho", row.delta_rho, metric(|p| p.delta_rho)),
            ];
            for (name, stored, recomputed) in expected {
                if !(close(stored.mean, recomputed.mean) && close(stored.std, recomputed.std)) {
                    return Err(Error::InconsistentResults(format!(
                        "{name} aggregate does not match the per-partition values"
                    )));
                }
            }
            if !close(row.delta_rho.mean, row.rho_a.mean - row.rho_u.mean) {
                return Err(Error::InconsistentResults("delta_rho != rho_a - rho_u".into()));
            }
        }
        for p in &self.per_partition {
            if !close(p.delta_rho, p.rho_a - p.rho_u) {
                return Err(Error::InconsistentResults(format!(
                    "partition (t={}, v={}): delta_rho != rho_a - rho_u",
                    p.t, p.v
                )));
            }
        }
        Ok(())
    }
}

/// Signals of one trial, resolved from a store.
struct TrialData {
    eeg: Arc<SignalSeries>,
    attended: Arc<SignalSeries>,
    unattended: Vec<Arc<SignalSeries>>,
}

impl TrialData {
    fn signals(&self) -> TrialSignals<'_> {
        TrialSignals {
            eeg: &self.eeg,
            attended: self.attended.samples(),
            unattended: self.unattended.iter().map(|u| u.samples()).collect(),
        }
    }
}

struct Prepared<'a> {
    dataset: &'a Dataset,
    store: &'a SignalStore,
    trials: BTreeMap<&'a str, TrialData>,
    /// Ridge moments per trial, when the decoder needs them.
    moments: BTreeMap<&'a str, LagMoments>,
    lags: LagWindow,
    channels: usize,
    rate: f64,
    window: usize,
}

fn prepare<'a>(dataset: &'a Dataset, store: &'a SignalStore, cfg: &ExperimentConfig) -> Result<Prepared<'a>> {
    let mut trials = BTreeMap::new();
    for t in dataset.trials() {
        let eeg = store.eeg(t.trial_id())?.clone();
        let attended = store.envelope(t.attended())?.clone();
        let unattended = t
            .unattended()
            .iter()
            .map(|u| store.envelope(u).cloned())
            .collect::<Result<Vec<_>>>()?;
        for env in std::iter::once(&attended).chain(&unattended) {
            if env.len() != eeg.len() {
                return Err(Error::InconsistentShapes(format!(
                    "trial {}: EEG has {} samples, envelope {}",
                    t.trial_id(),
                    eeg.len(),
                    env.len()
                )));
            }
        }
        trials.insert(
            t.trial_id(),
            TrialData {
                eeg,
                attended,
                unattended,
            },
        );
    }
    let first = trials.values().next().ok_or(Error::EmptyDataset)?;
    let (channels, rate) = (first.eeg.channels(), first.eeg.sample_rate_hz());
    for (id, t) in &trials {
        if t.eeg.channels() != channels || t.eeg.sample_rate_hz() != rate {
            return Err(Error::InconsistentShapes(format!(
                "trial {id} differs in channel count or sample rate from the first trial"
            )));
        }
    }
    let lags = cfg.lags.unwrap_or_else(|| LagWindow::default_for(rate));
    let window = EvalWindowing::new(cfg.window_seconds)?.samples(rate)?;

    let moments = if matches!(cfg.decoder, DecoderKind::Ridge | DecoderKind::Memorizing) {
        trials
            .par_iter()
            .map(|(id, t)| LagMoments::of_trial(&t.eeg, t.attended.samples(), lags).map(|m| (*id, m)))
            .collect::<Result<BTreeMap<_, _>>>()?
    } else {
        BTreeMap::new()
    };
    Ok(Prepared {
        dataset,
        store,
        trials,
        moments,
        lags,
        channels,
        rate,
        window,
    })
}

impl Prepared<'_> {
    fn signals(&self, ids: &[String]) -> Result<Vec<TrialSignals<'_>>> {
        ids.iter()
            .map(|id| {
                self.trials
                    .get(id.as_str())
                    .map(TrialData::signals)
                    .ok_or_else(|| Error::UnknownTrial(id.clone()))
            })
            .collect()
    }

    fn run_partition(&self, p: &Partition, cfg: &ExperimentConfig) -> Result<PartitionResult> {
        let train = self.signals(&p.train)?;
        let val = self.signals(&p.val)?;
        let test = self.signals(&p.test)?;
        if train.is_empty() || test.is_empty() {
            return Err(Error::Config("partition has an empty train or test split".into()));
        }

        let mut result = PartitionResult {
            t: p.t,
            v: p.v,
            acc: 0.0,
            rho_a: 0.0,
            rho_u: 0.0,
            delta_rho: 0.0,
            windows: 0,
            skipped_windows: 0,
            lambda: None,
            epochs: None,
            memory_matches: None,
        };

        let predictions: Vec<(Vec<f64>, std::ops::Range<usize>)> = match cfg.decoder {
            DecoderKind::Ridge | DecoderKind::Memorizing => {
                let mut m = LagMoments::zeros(self.channels * self.lags.count());
                for id in &p.train {
                    m.add(&self.moments[id.as_str()]);
                }
                let fit = fit_ridge_with(&m, self.channels, self.rate, self.lags, &cfg.lambda_grid, &val)?;
                result.lambda = Some(fit.lambda);
                if cfg.decoder == DecoderKind::Ridge {
                    test.iter()
                        .map(|t| fit.decoder.reconstruct(t.eeg).map(|r| (r.samples, r.valid)))
                        .collect::<Result<_>>()?
                } else {
                    let mem =
                        build_memorizing_decoder(fit.decoder, self.dataset, p, cfg.strategy, self.store, cfg.memory)?;
                    let mut matches = 0;
                    let out = test
                        .iter()
                        .map(|t| {
                            let (r, m) = mem.reconstruct(t.eeg, self.window)?;
                            matches += usize::from(m.is_some_and(|m| m.blend > 0.0));
                            Ok((r.samples, r.valid))
                        })
                        .collect::<Result<_>>()?;
                    result.memory_matches = Some(matches);
                    out
                }
            }
            DecoderKind::Gradient => {
                let train_cfg = TrainConfig {
                    loss: cfg.loss,
                    ..cfg.train
                };
                let (dec, log) = fit_gradient_decoder(&train, &val, self.lags, &train_cfg)?;
                result.epochs = Some(log.epochs.len());
                test.iter()
                    .map(|t| dec.reconstruct(t.eeg).map(|r| (r.samples, r.valid)))
                    .collect::<Result<_>>()?
            }
        };

        let mut score = WindowScore::default();
        for (t, (pred, valid)) in test.iter().zip(&predictions) {
            let unatt: Vec<&[f64]> = t.unattended.iter().map(|u| &u[valid.clone()]).collect();
            let s = windowed_accuracy(&pred[valid.clone()], &t.attended[valid.clone()], &unatt, self.window)?;
            score.merge(&s);
        }
        if score.windows == 0 {
            return Err(Error::NoFullWindow {
                samples: 0,
                window: self.window,
            });
        }
        result.acc = score.accuracy();
        result.rho_a = score.rho_a();
        result.rho_u = score.rho_u();
        result.delta_rho = result.rho_a - result.rho_u;
        result.windows = score.windows;
        result.skipped_windows = score.skipped;
        Ok(result)
    }
}

fn chance_level(d: &Dataset) -> f64 {
    d.trials().iter().map(|t| 1.0 / t.speaker_count() as f64).sum::<f64>() / d.len() as f64
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Fold manifest the experiment would use for `dataset`.
pub fn plan_partitions(dataset: &Dataset, cfg: &ExperimentConfig) -> Result<FoldManifest> {
    let plan = make_fold_plan(dataset, cfg.strategy, cfg.k, cfg.seed)?;
    let partitions = enumerate_partitions_with(&plan, dataset, cfg.validation())?;
    Ok(FoldManifest::new(&plan, partitions))
}

/// Runs every partition of `partitions` on in-memory data.
pub fn run_partitions(
    dataset: &Dataset,
    store: &SignalStore,
    partitions: &[Partition],
    cfg: &ExperimentConfig,
) -> Result<ExperimentResults> {
    cfg.validate()?;
    if partitions.is_empty() {
        return Err(Error::Config("no partitions to run".into()));
    }
    let bi = balance_index(dataset)?.balance_index;
    let per_partition = with_pool(cfg.jobs, || -> Result<Vec<PartitionResult>> {
        let prepared = prepare(dataset, store, cfg)?;
        partitions
            .par_iter()
            .map(|p| {
                prepared.run_partition(p, cfg).map_err(|e| Error::Partition {
                    t: p.t,
                    v: p.v,
                    source: Box::new(e),
                })
            })
            .collect()
    })??;

    let metric = |f: fn(&PartitionResult) -> f64| MeanStd::of(&per_partition.iter().map(f).collect::<Vec<_>>());
    let row = ResultsRow {
        strategy: cfg.strategy,
        dataset: dataset.name().to_string(),
        chance_level: chance_level(dataset),
        balance_index: bi,
        decoder: cfg.decoder,
        loss: cfg.loss,
        acc: metric(|p| p.acc),
        rho_a: metric(|p| p.rho_a),
        rho_u: metric(|p| p.rho_u),
        delta_rho: metric(|p| p.delta_rho),
        partitions: per_partition.len(),
    };
    Ok(ExperimentResults {
        schema_version: RESULTS_SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        rows: vec![row],
        per_partition,
    })
}

/// Plans folds from the config and runs every partition.
pub fn run_experiment_in_memory(
    dataset: &Dataset,
    store: &SignalStore,
    cfg: &ExperimentConfig,
) -> Result<ExperimentResults> {
    cfg.validate()?;
    let manifest = plan_partitions(dataset, cfg)?;
    run_partitions(dataset, store, &manifest.partitions, cfg)
}

/// Loads metadata, signals and optionally a fold manifest, then runs.
///
/// Everything is parsed and checked before training starts. A supplied
/// manifest overrides the strategy, `k` and seed of `cfg`.
pub fn run_experiment(
    metadata: &Path,
    data_dir: &Path,
    folds: Option<&Path>,
    cfg: &ExperimentConfig,
) -> Result<ExperimentResults> {
    cfg.validate()?;
    let dataset = parse_trial_metadata(metadata)?;
    let store = SignalStore::load(data_dir, &dataset)?;
    match folds {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let manifest = FoldManifest::from_json_str(&text)?;
            let cfg = ExperimentConfig {
                strategy: manifest.strategy,
                k: manifest.k,
                seed: manifest.seed,
                ..cfg.clone()
            };
            // the manifest must describe this dataset
            enumerate_partitions_with(&manifest.plan(), &dataset, ValidationFolds::All)?;
            run_partitions(&dataset, &store, &manifest.partitions, &cfg)
        }
        None => run_experiment_in_memory(&dataset, &store, cfg),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Md,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Md),
            other => Err(format!("unknown format {other:?} (expected json, csv or md)")),
        }
    }
}

const REPORT_COLUMNS: [&str; 15] = [
    "strategy",
    "dataset",
    "chance_level",
    "balance_index",
    "loss",
    "decoder",
    "acc_mean",
    "acc_std",
    "rho_a_mean",
    "rho_a_std",
    "rho_u_mean",
    "rho_u_std",
    "delta_rho_mean",
    "delta_rho_std",
    "partitions",
];

/// Merges the rows of several results files into one table sorted by
/// strategy, then balance index.
pub fn summarize_results(results: &[ExperimentResults], format: ReportFormat) -> Result<String> {
    if results.is_empty() {
        return Err(Error::Config("no results to summarize".into()));
    }
    let mut rows: Vec<&ResultsRow> = Vec::new();
    for r in results {
        r.check()?;
        rows.extend(&r.rows);
    }
    rows.sort_by(|a, b| {
        a.strategy
            .cmp(&b.strategy)
            .then(a.balance_index.total_cmp(&b.balance_index))
            .then(a.dataset.cmp(&b.dataset))
    });

    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(&rows)?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let fail = |e: csv::Error| Error::Config(format!("csv output: {e}"));
            w.write_record(REPORT_COLUMNS).map_err(fail)?;
            for row in &rows {
                w.write_record(cells(row, 6)).map_err(fail)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv output: {e}")))?;
            Ok(String::from_utf8(bytes).expect("utf-8"))
        }
        ReportFormat::Md => {
            let mut s = String::new();
            let header = [
                "Strategy",
                "Dataset",
                "Chance",
                "BI",
                "Loss",
                "Decoder",
                "Acc",
                "ρ_a",
                "ρ_u",
                "Δρ",
                "Partitions",
            ];
            let _ = writeln!(s, "| {} |", header.join(" | "));
            let _ = writeln!(s, "|{}", "---|".repeat(header.len()));
            for row in &rows {
                let pm = |m: MeanStd| format!("{:.4}±{:.4}", m.mean, m.std);
                let _ = writeln!(
                    s,
                    "| {} | {} | {:.2} | {:.2} | {} | {} | {} | {} | {} | {} | {} |",
                    row.strategy.as_str().to_uppercase(),
                    row.dataset,
                    row.chance_level,
                    row.balance_index,
                    row.loss.as_str(),
                    row.decoder.as_str(),
                    pm(row.acc),
                    pm(row.rho_a),
                    pm(row.rho_u),
                    pm(row.delta_rho),
                    row.partitions
                );
            }
            Ok(s)
        }
    }
}

fn cells(row: &ResultsRow, digits: usize) -> Vec<String> {
    let f = |v: f64| format!("{v:.digits$}");
    vec![
        row.strategy.as_str().to_string(),
        row.dataset.clone(),
        f(row.chance_level),
        f(row.balance_index),
        row.loss.as_str().to_string(),
        row.decoder.as_str().to_string(),
        f(row.acc.mean),
        f(row.acc.std),
        f(row.rho_a.mean),
        f(row.rho_a.std),
        f(row.rho_u.mean),
        f(row.rho_u.std),
        f(row.delta_rho.mean),
        f(row.delta_rho.std),
        row.partitions.to_string(),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub metric: String,
    pub mean_a: f64,
    pub mean_b: f64,
    /// `None` when the metric cannot be tested (identical values, too few
    /// non-zero differences); `skipped` says why.
    pub test: Option<WilcoxonResult>,
    pub p_adjusted: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub skipped: Option<String>,
}

/// Paired Wilcoxon tests of `a` against `b` on each metric, pairing
/// partitions by `(t, v)`. P-values are Bonferroni-adjusted for `m`
/// comparisons; `None` counts the four metrics.
pub fn compare_results(
    a: &ExperimentResults,
    b: &ExperimentResults,
    m: Option<usize>,
) -> Result<Vec<MetricComparison>> {
    a.check()?;
    b.check()?;
    let index = |r: &ExperimentResults| -> BTreeMap<(usize, usize), PartitionResult> {
        r.per_partition.iter().map(|p| ((p.t, p.v), *p)).collect()
    };
    let (ia, ib) = (index(a), index(b));
    if ia.len() != a.per_partition.len() || ib.len() != b.per_partition.len() {
        return Err(Error::InconsistentResults("duplicate (t, v) partitions".into()));
    }
    if ia.keys().ne(ib.keys()) {
        return Err(Error::InconsistentResults(
            "results cover different (t, v) partitions and cannot be paired".into(),
        ));
    }
    let metrics: [(&str, fn(&PartitionResult) -> f64); 4] = [
        ("acc", |p| p.acc),
        ("rho_a", |p| p.rho_a),
        ("rho_u", |p| p.rho_u),
        ("delta_rho", |p| p.delta_rho),
    ];
    let m = m.unwrap_or(metrics.len());
    if m < metrics.len() {
        return Err(Error::ComparisonCount { m, n: metrics.len() });
    }
    metrics
        .into_iter()
        .map(|(name, f)| {
            let xa: Vec<f64> = ia.values().map(f).collect();
            let xb: Vec<f64> = ib.values().map(f).collect();
            let (test, p_adjusted, skipped) = match wilcoxon_signed_rank(&xa, &xb) {
                Ok(t) => {
                    let p = bonferroni_adjust(&[t.p_value], m)?[0];
                    (Some(t), Some(p), None)
                }
                Err(e @ (Error::AllZeroDifferences | Error::TooFewPairs(_))) => (None, None, Some(e.to_string())),
                Err(e) => return Err(e),
            };
            Ok(MetricComparison {
                metric: name.to_string(),
                mean_a: MeanStd::of(&xa).mean,
                mean_b: MeanStd::of(&xb).mean,
                test,
                p_adjusted,
                skipped,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub noise_sigma: f64,
    pub acc: f64,
}

/// Ridge LOTO accuracy on the balanced variant of `base` for each candidate
/// noise level.
pub fn calibrate_noise_sigma(
    base: &ScenarioConfig,
    candidates: &[f64],
    k: usize,
    window_seconds: f64,
) -> Result<Vec<CalibrationPoint>> {
    let mut cfg = ExperimentConfig::new(Strategy::Loto, k, base.seed, DecoderKind::Ridge);
    cfg.window_seconds = window_seconds;
    candidates
        .iter()
        .map(|&sigma| {
            let scenario = build_scenario(&ScenarioConfig {
                design: Design::Balanced,
                noise_sigma: sigma,
                ..base.clone()
            })?;
            let r = run_experiment_in_memory(&scenario.dataset, &scenario.signals, &cfg)?;
            Ok(CalibrationPoint {
                noise_sigma: sigma,
                acc: r.rows[0].acc.mean,
            })
        })
        .collect()
}
