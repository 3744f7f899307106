use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aad_evalkit::balance::{balance_by_subject, balance_index, extreme_subset, BalanceReport, SubsetTarget};
use aad_evalkit::dataset::{parse_trial_metadata, validate_dataset, Dataset};
use aad_evalkit::decoder::{LagWindow, MemoryConfig};
use aad_evalkit::experiment::{
    compare_results, plan_partitions, run_experiment, summarize_results, DecoderKind, ExperimentConfig,
    ExperimentResults, ReportFormat,
};
use aad_evalkit::metrics::Loss;
use aad_evalkit::partition::{audit_partition, FoldManifest, Strategy};
use aad_evalkit::synth::{build_scenario, ScenarioConfig};
use aad_evalkit::Error;
use clap::{Args, Parser, Subcommand};

const EXIT_FAILURE: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_LEAK: u8 = 3;
const EXIT_TRAINING: u8 = 4;

#[derive(Parser)]
#[command(
    name = "aad-evalkit",
    version,
    about = "Balance, leakage-safe splitting and evaluation for auditory attention decoding"
)]
struct Cli {
    /// Seed for fold assignment, synthesis and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Root for signal files referenced by the metadata.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Output format for tables.
    #[arg(long, global = true, default_value = "json")]
    format: ReportFormat,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stimulus role balance.
    #[command(subcommand)]
    Balance(BalanceCmd),
    /// Writes a fold manifest.
    Split(SplitArgs),
    /// Checks every partition of a fold manifest for leakage.
    Audit(AuditArgs),
    /// Generates a synthetic scenario.
    Synth(SynthArgs),
    /// Trains and evaluates one decoder per partition.
    Train(TrainArgs),
    /// Paired Wilcoxon tests between two results files.
    Stats(StatsArgs),
    /// Merges results files into one table.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum BalanceCmd {
    Compute {
        #[arg(long)]
        metadata: PathBuf,
        /// One report per subject instead of the pooled one.
        #[arg(long)]
        per_subject: bool,
    },
    Subset {
        #[arg(long)]
        metadata: PathBuf,
        #[arg(long)]
        target: SubsetTarget,
        /// CSV, or JSON if the name ends in `.json`.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    metadata: PathBuf,
    #[arg(long)]
    strategy: Strategy,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Validation folds per test fold (default: all K - 1).
    #[arg(long)]
    val_per_test: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    metadata: PathBuf,
    #[arg(long)]
    folds: PathBuf,
    /// Rule to audit against (default: the manifest's strategy).
    #[arg(long)]
    strategy: Option<Strategy>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    metadata: PathBuf,
    /// Fold manifest; overrides --strategy and --k.
    #[arg(long)]
    folds: Option<PathBuf>,
    #[arg(long, default_value = "loto")]
    strategy: Strategy,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value = "ridge")]
    decoder: DecoderKind,
    #[arg(long, default_value = "pcc")]
    loss: Loss,
    #[arg(long = "window-sec", default_value_t = 10.0)]
    window_sec: f64,
    /// Lag window in samples, as `MIN:MAX`.
    #[arg(long, value_parser = parse_lags)]
    lags: Option<LagWindow>,
    /// Comma-separated ridge penalties.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    #[arg(long)]
    val_per_test: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Memorizing decoder blend strength.
    #[arg(long)]
    alpha: Option<f64>,
    /// Memorizing decoder match threshold.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    results_a: PathBuf,
    #[arg(long)]
    results_b: PathBuf,
    /// Number of comparisons for the Bonferroni correction (default 4).
    #[arg(long)]
    m: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, num_args = 1.., required = true)]
    results: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_lags(s: &str) -> Result<LagWindow, String> {
    let (a, b) = s.split_once(':').ok_or("expected MIN:MAX")?;
    let min = a.trim().parse().map_err(|e| format!("{e}"))?;
    let max = b.trim().parse().map_err(|e| format!("{e}"))?;
    LagWindow::new(min, max).map_err(|e| e.to_string())
}

/// Failure with its exit status.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_training_failure() {
            EXIT_TRAINING
        } else {
            EXIT_INVALID
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_INVALID,
        message: message.into(),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Failure {
            code: EXIT_FAILURE,
            message: format!("{}: {e}", parent.display()),
        })?;
    }
    std::fs::write(path, text).map_err(|e| Failure {
        code: EXIT_FAILURE,
        message: format!("{}: {e}", path.display()),
    })
}

fn print(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
    if !text.ends_with('\n') {
        let _ = out.write_all(b"\n");
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn load_metadata(path: &Path) -> Result<Dataset, Failure> {
    let d = parse_trial_metadata(path)?;
    let report = validate_dataset(&d, None);
    for w in report.warnings() {
        eprintln!("warning: {}", w.message);
    }
    if report.has_violations() {
        let msgs: Vec<String> = report.violations().map(|f| f.message.clone()).collect();
        return Err(invalid(format!("{}: {}", path.display(), msgs.join("; "))));
    }
    Ok(d)
}

fn balance_table(reports: &[(String, BalanceReport)], format: ReportFormat) -> String {
    let mut rows = Vec::new();
    for (group, r) in reports {
        for (id, roles) in r.counts.iter() {
            rows.push([
                group.clone(),
                id.as_str().to_string(),
                roles.attended.to_string(),
                roles.unattended.to_string(),
                format!("{:.6}", roles.imbalance()),
            ]);
        }
        rows.push([
            group.clone(),
            "*".into(),
            String::new(),
            String::new(),
            format!("{:.6}", r.balance_index),
        ]);
    }
    let header = ["group", "stimulus", "n_attended", "n_unattended", "imbalance"];
    match format {
        ReportFormat::Md => {
            let mut s = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
            for r in rows {
                s.push_str(&format!("| {} |\n", r.join(" | ")));
            }
            s
        }
        _ => {
            let mut s = header.join(",") + "\n";
            for r in rows {
                s.push_str(&r.join(","));
                s.push('\n');
            }
            s
        }
    }
}

fn balance(cmd: BalanceCmd, format: ReportFormat) -> Result<(), Failure> {
    match cmd {
        BalanceCmd::Compute { metadata, per_subject } => {
            let d = load_metadata(&metadata)?;
            let reports: Vec<(String, BalanceReport)> = if per_subject {
                balance_by_subject(&d)?.into_iter().collect()
            } else {
                vec![(d.name().to_string(), balance_index(&d)?)]
            };
            match format {
                ReportFormat::Json if per_subject => print(&to_json(
                    &reports.into_iter().collect::<std::collections::BTreeMap<_, _>>(),
                )),
                ReportFormat::Json => print(&to_json(&reports[0].1)),
                f => print(&balance_table(&reports, f)),
            }
        }
        BalanceCmd::Subset { metadata, target, out } => {
            let d = load_metadata(&metadata)?;
            let subset = extreme_subset(&d, target)?;
            let json = out.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
            let text = if json {
                subset.dataset.to_json_string()
            } else {
                subset.dataset.to_csv_string()
            };
            write_file(&out, &text)?;
            print(&to_json(&serde_json::json!({
                "kept_trials": subset.kept.len(),
                "source_trials": d.len(),
                "balance_index": subset.report.balance_index,
            })));
        }
    }
    Ok(())
}

fn split(args: SplitArgs, seed: u64) -> Result<(), Failure> {
    let d = load_metadata(&args.metadata)?;
    let mut cfg = ExperimentConfig::new(args.strategy, args.k, seed, DecoderKind::Ridge);
    cfg.val_per_test = args.val_per_test;
    cfg.validate()?;
    let manifest = plan_partitions(&d, &cfg)?;
    write_file(&args.out, &manifest.to_json_string())?;
    eprintln!(
        "{} folds, {} partitions written to {}",
        manifest.k,
        manifest.partitions.len(),
        args.out.display()
    );
    Ok(())
}

fn audit(args: AuditArgs) -> Result<(), Failure> {
    let d = load_metadata(&args.metadata)?;
    let text = std::fs::read_to_string(&args.folds).map_err(|e| invalid(format!("{}: {e}", args.folds.display())))?;
    let manifest = FoldManifest::from_json_str(&text)?;
    let strategy = args.strategy.unwrap_or(manifest.strategy);
    let reports = manifest
        .partitions
        .iter()
        .map(|p| audit_partition(p, &d, strategy))
        .collect::<Result<Vec<_>, _>>()?;
    let leaks: usize = reports.iter().map(|r| r.violations.len()).sum();
    print(&to_json(&serde_json::json!({
        "strategy": strategy,
        "partitions": reports.len(),
        "passed": leaks == 0,
        "reports": reports,
    })));
    if leaks > 0 {
        return Err(Failure {
            code: EXIT_LEAK,
            message: format!("{leaks} leak(s) found under {strategy}"),
        });
    }
    Ok(())
}

fn synth(args: SynthArgs, seed: Option<u64>) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| invalid(format!("{}: {e}", args.config.display())))?;
    let mut cfg = ScenarioConfig::from_json_str(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let scenario = build_scenario(&cfg)?;
    scenario.write(&args.out)?;
    eprintln!(
        "{} trials, balance index {}, written to {}",
        scenario.manifest.n_trials,
        scenario.manifest.balance_index,
        args.out.display()
    );
    Ok(())
}

fn train(args: TrainArgs, seed: u64, jobs: Option<usize>, data_dir: Option<PathBuf>) -> Result<(), Failure> {
    let mut cfg = ExperimentConfig::new(args.strategy, args.k, seed, args.decoder);
    cfg.loss = args.loss;
    cfg.window_seconds = args.window_sec;
    cfg.lags = args.lags;
    cfg.val_per_test = args.val_per_test;
    cfg.jobs = jobs;
    if let Some(grid) = args.lambda_grid {
        cfg.lambda_grid = grid;
    }
    if let Some(lr) = args.learning_rate {
        cfg.train.learning_rate = lr;
    }
    if let Some(n) = args.max_epochs {
        cfg.train.max_epochs = n;
    }
    let defaults = MemoryConfig::default();
    cfg.memory = MemoryConfig {
        alpha: args.alpha.unwrap_or(defaults.alpha),
        threshold: args.threshold.unwrap_or(defaults.threshold),
    };
    cfg.validate()?;

    let d = load_metadata(&args.metadata)?;
    let data_dir = data_dir.unwrap_or_else(|| args.metadata.parent().map(Path::to_path_buf).unwrap_or_default());
    let report = validate_dataset(&d, Some(&data_dir));
    if report.has_violations() {
        let msgs: Vec<String> = report.violations().map(|f| f.message.clone()).collect();
        return Err(invalid(msgs.join("; ")));
    }
    let results = run_experiment(&args.metadata, &data_dir, args.folds.as_deref(), &cfg)?;
    write_file(&args.out, &results.to_json_string())?;
    let row = &results.rows[0];
    eprintln!(
        "{} {} {}: acc {:.4} ± {:.4} over {} partitions",
        row.strategy,
        row.decoder.as_str(),
        row.dataset,
        row.acc.mean,
        row.acc.std,
        row.partitions
    );
    Ok(())
}

fn stats(args: StatsArgs) -> Result<(), Failure> {
    let a = ExperimentResults::read(&args.results_a)?;
    let b = ExperimentResults::read(&args.results_b)?;
    print(&to_json(&compare_results(&a, &b, args.m)?));
    Ok(())
}

fn report(args: ReportArgs, format: ReportFormat) -> Result<(), Failure> {
    let results = args
        .results
        .iter()
        .map(|p| ExperimentResults::read(p))
        .collect::<Result<Vec<_>, _>>()?;
    let text = summarize_results(&results, format)?;
    match args.out {
        Some(path) => write_file(&path, &text),
        None => {
            print(&text);
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if cli.jobs == Some(0) {
        return Err(invalid("--jobs must be positive"));
    }
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Balance(cmd) => balance(cmd, cli.format),
        Command::Split(args) => split(args, seed),
        Command::Audit(args) => audit(args),
        Command::Synth(args) => synth(args, cli.seed),
        Command::Train(args) => train(args, seed, cli.jobs, cli.data_dir),
        Command::Stats(args) => stats(args),
        Command::Report(args) => report(args, cli.format),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
