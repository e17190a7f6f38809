//! `sgg`: grouping inspection, synthetic data generation, training,
//! evaluation and run reports.
//!
//! Exit codes: 0 on success, 2 for usage, configuration or input errors,
//! 3 when training diverges.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sgg_core::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use sgg_core::dataio::{generate_dataset, read_predicate_counts, Dataset, RunConfig, SyntheticSpec};
use sgg_core::gcl::MatchingStrategy;
use sgg_core::grouping::{partition_predicates, sort_vocabulary, PredicateVocabulary};
use sgg_core::metrics::EvalSummary;
use sgg_core::pipeline::Mode;
use sgg_core::sampler::SamplingPlan;
use sgg_core::train::{evaluate, run_experiment, RunManifest};
use sgg_core::{Error, Result};

const CHECKPOINT_FILE: &str = "model.ckpt";
const MANIFEST_FILE: &str = "manifest.json";
const METRICS_FILE: &str = "metrics.csv";

#[derive(Parser)]
#[command(name = "sgg", version, about = "Unbiased scene-graph generation toolkit")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Partition predicate classes into balanced groups and show sampling rates.
    Group(GroupArgs),
    /// Write a synthetic long-tailed dataset.
    GenData(GenDataArgs),
    /// Train a model, then evaluate it on the test split.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Compare the metrics of finished runs.
    Report(ReportArgs),
}

#[derive(Args)]
struct GroupArgs {
    /// CSV with `name,count` rows.
    #[arg(long, conflicts_with = "data", required_unless_present = "data")]
    counts: Option<PathBuf>,
    /// Dataset directory; counts come from its training split.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 4.0)]
    mu: f64,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    /// TOML file with generator settings; defaults to the standard benchmark.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Overrides applied on top of a run configuration file.
#[derive(Args)]
struct RunOverrides {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    strategy: Option<MatchingStrategy>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Single classifier trained with plain cross-entropy.
    #[arg(long)]
    no_gcl: bool,
    /// Keep every classifier but drop the distillation term.
    #[arg(long)]
    no_ckd: bool,
}

impl RunOverrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(mu) = self.mu {
            cfg.mu = mu;
        }
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        if let Some(s) = self.strategy {
            cfg.strategy = s;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = self.steps {
            cfg.steps = s;
        }
        if self.no_gcl {
            cfg.gcl = false;
        }
        if self.no_ckd {
            cfg.ckd = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoint, manifest and metrics.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    run: RunOverrides,
    #[arg(long, value_delimiter = ',', default_value = "20,50,100")]
    k: Vec<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Run configuration supplying proposal noise and seed.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Defaults to the mode the checkpoint was trained in.
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',', default_value = "20,50,100")]
    k: Vec<usize>,
    /// Where to write the per-class recall table.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run manifests or run directories.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Group(a) => cmd_group(&a),
        Command::GenData(a) => cmd_gen_data(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Report(a) => cmd_report(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Numerical { .. } => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn cmd_group(args: &GroupArgs) -> Result<()> {
    let vocab: PredicateVocabulary = match (&args.counts, &args.data) {
        (Some(path), _) => sort_vocabulary(&read_predicate_counts(path)?)?,
        (None, Some(dir)) => Dataset::load(dir)?.vocab().clone(),
        (None, None) => unreachable!("clap requires one input"),
    };
    let part = partition_predicates(&vocab, args.mu)?;
    let plan = SamplingPlan::median_resampling(&vocab, &part)?;
    let classes = vocab.classes();
    println!(
        "{} classes, mu = {}, {} groups",
        vocab.len(),
        args.mu,
        part.num_groups()
    );
    for (k, g) in part.groups().iter().enumerate() {
        let hi = classes[g.start].count;
        let lo = classes[g.end - 1].count;
        let names: Vec<&str> = classes[g.clone()].iter().map(|c| c.name.as_str()).collect();
        println!(
            "group {}: {} classes, counts {hi}..{lo}, max/min {:.3}: {}",
            k + 1,
            g.len(),
            hi as f64 / lo as f64,
            names.join(", ")
        );
    }
    println!("sampling rates");
    for (k, cp) in plan.classifiers().iter().enumerate() {
        let rates: Vec<String> = cp
            .rates
            .iter()
            .zip(classes)
            .map(|(r, c)| format!("{}={r:.4}", c.name))
            .collect();
        println!(
            "classifier {} ({} classes, median {}): {}",
            k + 1,
            cp.rates.len(),
            cp.median,
            rates.join(" ")
        );
    }
    Ok(())
}

fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    let mut spec = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<SyntheticSpec>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    let data = generate_dataset(&spec)?;
    data.write(&args.out)?;
    println!(
        "wrote {} train and {} test scenes to {} (sha256 {})",
        data.train.len(),
        data.test.len(),
        args.out.display(),
        Dataset::content_hash(&args.out)?
    );
    println!("train predicate counts: {:?}", data.vocab().counts());
    Ok(())
}

fn print_summary(summary: &EvalSummary) {
    for (i, k) in summary.ks.iter().enumerate() {
        println!(
            "R@{k}: {:.4}  mR@{k}: {:.4}",
            summary.recall[i], summary.mean_recall[i].mean
        );
    }
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = args.run.resolve()?;
    let data = Dataset::load(&args.data)?;
    let hash = Dataset::content_hash(&args.data)?;
    let (outcome, manifest) = run_experiment(&cfg, &data, &hash, &args.k)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let part = &outcome.setup.partition;
    let meta = CheckpointMeta {
        model: outcome.model.config.clone(),
        mode: cfg.mode,
        predicates: data.vocab().names().iter().map(|s| s.to_string()).collect(),
        object_classes: data.catalog.objects.clone(),
        group_sizes: part.group_sizes(),
        mu: part.mu().is_finite().then_some(part.mu()),
    };
    save_checkpoint(&args.out.join(CHECKPOINT_FILE), &outcome.model, &meta)?;
    let manifest_path = args.out.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, json + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    let metrics = manifest.metrics.as_ref().expect("training evaluates");
    metrics.write_class_table(&args.out.join(METRICS_FILE), &data.vocab().names())?;

    println!(
        "trained {} steps in {:.1}s, groups {:?}",
        cfg.steps,
        manifest.wall_clock_secs,
        part.group_sizes()
    );
    print_summary(metrics);
    println!("outputs in {}", args.out.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (model, meta) = load_checkpoint(&args.checkpoint)?;
    let data = Dataset::load(&args.data)?;
    let names = data.vocab().names();
    if meta.predicates != names || meta.object_classes != data.catalog.objects {
        return Err(Error::Config(format!(
            "checkpoint vocabulary ({} predicates, {} objects) does not match dataset ({}, {})",
            meta.predicates.len(),
            meta.object_classes.len(),
            names.len(),
            data.catalog.objects.len()
        )));
    }
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.mode = args.mode.unwrap_or(meta.mode);
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let summary = evaluate(&model, &data, &cfg, &args.k)?;
    print_summary(&summary);
    let table = summary.class_table_csv(&names)?;
    match &args.csv {
        Some(p) => fs::write(p, table).map_err(|e| Error::io(p, e))?,
        None => print!("{table}"),
    }
    Ok(())
}

fn load_manifest(path: &Path) -> Result<RunManifest> {
    let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: file,
        line: e.line(),
        message: e.to_string(),
    })
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let runs = args
        .runs
        .iter()
        .map(|p| load_manifest(p).map(|m| (p, m)))
        .collect::<Result<Vec<_>>>()?;
    let ks = runs
        .iter()
        .find_map(|(_, m)| m.metrics.as_ref().map(|s| s.ks.clone()))
        .unwrap_or_default();
    let mut header = vec!["run".to_string(), "mode".into(), "variant".into(), "seed".into()];
    header.extend(ks.iter().map(|k| format!("R@{k}")));
    header.extend(ks.iter().map(|k| format!("mR@{k}")));
    println!("| {} |", header.join(" | "));
    println!("|{}", "---|".repeat(header.len()));
    for (path, m) in runs {
        let c = &m.config;
        let variant = match (c.gcl, c.ckd) {
            (false, _) => "no-gcl".to_string(),
            (true, false) => "no-ckd".to_string(),
            (true, true) => format!("gcl mu={} alpha={} {}", c.mu, c.alpha, c.strategy),
        };
        let mut row = vec![path.display().to_string(), c.mode.to_string(), variant, m.seed.to_string()];
        for k in &ks {
            let v = m.metrics.as_ref().and_then(|s| s.recall_at(*k));
            row.push(v.map_or("-".into(), |v| format!("{v:.4}")));
        }
        for k in &ks {
            let v = m.metrics.as_ref().and_then(|s| s.mean_recall_at(*k));
            row.push(v.map_or("-".into(), |v| format!("{v:.4}")));
        }
        println!("| {} |", row.join(" | "));
    }
    Ok(())
}
