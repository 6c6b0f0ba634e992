//! `tscausal`: temporal causal discovery from multivariate time series.
//!
//! Subcommands: `generate | train | discover | eval | bench`, all driven
//! by one JSON run config plus flat `--section.key=value` overrides.
//! `TSCAUSAL_THREADS` caps the worker-thread count.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use tscausal::data::{DatasetBundle, GeneratorSpec};
use tscausal::detect::DetectorConfig;
use tscausal::error::{Error, Result};
use tscausal::eval::{edge_diff, prf1, EvalResult, SeedReport};
use tscausal::graph::CausalGraph;
use tscausal::model::{load_checkpoint, save_checkpoint, ModelConfig, ModelParams};
use tscausal::pipeline::{
    bench, clustering_seed, load_run_config, train_seed, RunConfig,
};
use tscausal::train::{make_windows, train_with, EpochSnapshot, TrainConfig};

#[derive(Parser)]
#[command(
    name = "tscausal",
    version,
    about = "Discover temporal causal graphs from multivariate time series",
    after_help = "Any flag of the form --section.key=value overrides the JSON config \
                  (e.g. --model.window=16, --train.max_epochs=50, --seeds=[1,2,3]).\n\
                  Set TSCAUSAL_THREADS to cap worker threads."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (data.csv, truth.csv, provenance.json).
    Generate(GenerateArgs),
    /// Train a model on a dataset and write a checkpoint.
    Train(TrainArgs),
    /// Discover a causal graph (training first unless given a checkpoint).
    Discover(DiscoverArgs),
    /// Score a predicted graph against a ground-truth graph.
    Eval(EvalArgs),
    /// Run the full pipeline over all config seeds and tabulate metrics.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StructureArg {
    #[value(name = "diamond")]
    Diamond,
    #[value(name = "mediator")]
    Mediator,
    #[value(name = "v-structure")]
    VStructure,
    #[value(name = "fork")]
    Fork,
    #[value(name = "lorenz96")]
    Lorenz96,
}

impl StructureArg {
    fn kind_and_structure(self) -> (&'static str, Option<&'static str>) {
        match self {
            StructureArg::Diamond => ("basic", Some("diamond")),
            StructureArg::Mediator => ("basic", Some("mediator")),
            StructureArg::VStructure => ("basic", Some("v-structure")),
            StructureArg::Fork => ("basic", Some("fork")),
            StructureArg::Lorenz96 => ("lorenz96", None),
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// What to generate (alternative to --config).
    #[arg(long, value_enum)]
    structure: Option<StructureArg>,
    /// Series length.
    #[arg(long)]
    length: Option<usize>,
    /// Noise scale for driven series (linear structures only).
    #[arg(long)]
    noise: Option<f64>,
    /// Generator seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run config supplying the dataset section.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Directory to write the dataset into.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Run config (JSON).
    #[arg(short, long)]
    config: PathBuf,
    /// Hyper-parameter profile to layer under the config.
    #[arg(long)]
    profile: Option<String>,
    /// Run seed (defaults to the first config seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to the config's output_dir).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Print every epoch instead of every tenth.
    #[arg(short, long)]
    verbose: bool,
    /// Print no epoch progress.
    #[arg(short, long, conflicts_with = "verbose")]
    quiet: bool,
}

#[derive(Args)]
struct DiscoverArgs {
    /// Run config (JSON).
    #[arg(short, long)]
    config: PathBuf,
    /// Hyper-parameter profile to layer under the config.
    #[arg(long)]
    profile: Option<String>,
    /// Reuse a trained checkpoint instead of training here.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Run seed (defaults to the first config seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Select every score class, i.e. emit the complete candidate graph.
    #[arg(long)]
    complete: bool,
    /// Output directory (defaults to the config's output_dir).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Print every training epoch instead of every tenth.
    #[arg(short, long)]
    verbose: bool,
    /// Print no training progress.
    #[arg(short, long, conflicts_with = "verbose")]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted graph (JSON).
    #[arg(long)]
    pred: PathBuf,
    /// Ground truth: graph JSON or truth CSV.
    #[arg(long)]
    truth: PathBuf,
    /// Ignore self-loop edges on both sides.
    #[arg(long)]
    exclude_self_loops: bool,
    /// Also list the differing edges.
    #[arg(long)]
    diff: bool,
    /// Also write the metrics as JSON to this path.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Run config(s); each becomes one table row.
    #[arg(short, long = "config", required = true)]
    configs: Vec<PathBuf>,
    /// Hyper-parameter profile to layer under every config.
    #[arg(long)]
    profile: Option<String>,
    /// Output directory (defaults to the first config's output_dir).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

/// Pull `--section.key=value` overrides out of the raw arguments so
/// clap only sees its own flags. An argument is an override when it
/// looks like `--path=value` with a dot somewhere in the path.
fn split_overrides(args: impl Iterator<Item = String>) -> (Vec<String>, Vec<String>) {
    let mut cli = Vec::new();
    let mut overrides = Vec::new();
    for (i, arg) in args.enumerate() {
        let is_override = i > 0
            && arg.starts_with("--")
            && arg
                .split_once('=')
                .is_some_and(|(key, _)| key[2..].contains('.'));
        if is_override {
            overrides.push(arg);
        } else {
            cli.push(arg);
        }
    }
    (cli, overrides)
}

fn configure_threads() {
    if let Ok(raw) = std::env::var("TSCAUSAL_THREADS") {
        match raw.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!(
                "warning: TSCAUSAL_THREADS=`{raw}` is not a positive integer; ignoring it"
            ),
        }
    }
}

fn main() -> ExitCode {
    configure_threads();
    let (args, overrides) = split_overrides(std::env::args());
    let cli = Cli::parse_from(args);
    match run(cli.command, overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command, overrides: Vec<String>) -> Result<()> {
    match command {
        Command::Generate(args) => cmd_generate(args, overrides),
        Command::Train(args) => cmd_train(args, overrides),
        Command::Discover(args) => cmd_discover(args, overrides),
        Command::Eval(args) => cmd_eval(args),
        Command::Bench(args) => cmd_bench(args, overrides),
    }
}

fn load_config(
    path: &Path,
    profile: Option<String>,
    mut overrides: Vec<String>,
) -> Result<RunConfig> {
    if let Some(name) = profile {
        overrides.insert(0, format!("profile=\"{name}\""));
    }
    load_run_config(path, &overrides)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn cmd_generate(args: GenerateArgs, overrides: Vec<String>) -> Result<()> {
    // Start from the config's dataset section when given, else from the
    // --structure flag; individual flags override either.
    let mut spec_value = match (&args.config, args.structure) {
        (Some(path), _) => {
            let config = load_config(path, None, overrides)?;
            match &config.dataset {
                tscausal::pipeline::DatasetSource::Generate(spec) => serde_json::to_value(spec)?,
                tscausal::pipeline::DatasetSource::Csv { .. } => {
                    return Err(Error::arg(
                        "config's dataset is a CSV source; nothing to generate".to_string(),
                    ))
                }
            }
        }
        (None, Some(structure)) => {
            let (kind, name) = structure.kind_and_structure();
            let mut v = json!({ "kind": kind });
            if let Some(name) = name {
                v["structure"] = json!(name);
            }
            v
        }
        (None, None) => {
            return Err(Error::arg(
                "either --structure or --config is required".to_string(),
            ))
        }
    };
    if let Some(structure) = args.structure {
        let (kind, name) = structure.kind_and_structure();
        if spec_value["kind"] != json!(kind) {
            // Switching kind invalidates kind-specific fields; restart.
            spec_value = json!({ "kind": kind });
        }
        if let Some(name) = name {
            spec_value["structure"] = json!(name);
        }
    }
    if let Some(length) = args.length {
        spec_value["length"] = json!(length);
    }
    if let Some(noise) = args.noise {
        if spec_value["kind"] == json!("lorenz96") {
            return Err(Error::arg(
                "--noise applies only to linear structures, not lorenz96".to_string(),
            ));
        }
        spec_value["noise"] = json!(noise);
    }
    if let Some(seed) = args.seed {
        spec_value["seed"] = json!(seed);
    }

    let spec: GeneratorSpec = serde_json::from_value(spec_value)
        .map_err(|e| Error::arg(format!("dataset spec does not fit the schema: {e}")))?;
    spec.validate()?;
    let bundle = spec.generate()?;
    let paths = bundle.write(&args.output)?;
    println!("wrote {}", paths.data.display());
    if let Some(truth) = paths.truth {
        println!("wrote {}", truth.display());
    }
    if let Some(provenance) = paths.provenance {
        println!("wrote {}", provenance.display());
    }
    Ok(())
}

/// Epoch progress printer honoring --quiet/--verbose.
fn epoch_logger(verbose: bool, quiet: bool) -> impl FnMut(EpochSnapshot) {
    move |snap: EpochSnapshot| {
        if quiet {
            return;
        }
        if verbose || snap.epoch % 10 == 0 || snap.improved {
            eprintln!(
                "epoch {:>4}  train {:<12.6} val {:<12.6}{}",
                snap.epoch,
                snap.train_loss,
                snap.val_loss,
                if snap.improved { "  *" } else { "" }
            );
        }
    }
}

/// Shared front half of `train` and `discover`: load data, bind the
/// model, window the series, train.
struct TrainedStage {
    bundle: DatasetBundle,
    model_config: ModelConfig,
    windows: Vec<tscausal::Tensor>,
    params: ModelParams,
    report: tscausal::train::TrainReport,
}

fn train_stage(
    config: &RunConfig,
    seed: u64,
    verbose: bool,
    quiet: bool,
) -> Result<TrainedStage> {
    let bundle = config.dataset.load(seed)?;
    let model_config = config.model.with_series(bundle.n_series());
    model_config.validate()?;
    let windows = make_windows(&bundle.series, model_config.window, config.train.stride)?;
    if !quiet {
        eprintln!(
            "training on {} windows ({} series, length {}), seed {seed}",
            windows.len(),
            bundle.n_series(),
            bundle.length()
        );
    }
    let train_config = TrainConfig {
        seed: train_seed(seed),
        ..config.train.clone()
    };
    let (params, report) = train_with(
        &windows,
        &model_config,
        &train_config,
        epoch_logger(verbose, quiet),
    )?;
    if !quiet {
        eprintln!(
            "trained {} epochs in {:.1} s (best val {:.6} at epoch {}{})",
            report.epochs_run,
            report.wall_clock_seconds,
            report.val_loss[report.best_epoch],
            report.best_epoch,
            if report.stopped_early {
                ", stopped early"
            } else {
                ""
            }
        );
    }
    Ok(TrainedStage {
        bundle,
        model_config,
        windows,
        params,
        report,
    })
}

fn run_seed_flag(config: &RunConfig, flag: Option<u64>) -> u64 {
    flag.unwrap_or_else(|| config.seeds.first().copied().unwrap_or(0))
}

fn cmd_train(args: TrainArgs, overrides: Vec<String>) -> Result<()> {
    let config = load_config(&args.config, args.profile, overrides)?;
    let seed = run_seed_flag(&config, args.seed);
    let out = args.output.unwrap_or_else(|| config.output_dir.clone());
    let stage = train_stage(&config, seed, args.verbose, args.quiet)?;

    std::fs::create_dir_all(&out)?;
    let checkpoint = out.join("checkpoint.json");
    save_checkpoint(&checkpoint, &stage.params, &stage.model_config)?;
    let report_path = out.join("train_report.json");
    write_json(&report_path, &stage.report)?;
    println!("wrote {}", checkpoint.display());
    println!("wrote {}", report_path.display());
    Ok(())
}

fn cmd_discover(args: DiscoverArgs, overrides: Vec<String>) -> Result<()> {
    let config = load_config(&args.config, args.profile, overrides)?;
    let seed = run_seed_flag(&config, args.seed);
    let out = args.output.unwrap_or_else(|| config.output_dir.clone());
    let started = Instant::now();

    let (bundle, model_config, windows, params) = match &args.checkpoint {
        Some(path) => {
            let (params, model_config) = load_checkpoint(path)?;
            let bundle = config.dataset.load(seed)?;
            if model_config.n_series != bundle.n_series() {
                return Err(Error::arg(format!(
                    "checkpoint was trained on {} series but the dataset has {}",
                    model_config.n_series,
                    bundle.n_series()
                )));
            }
            let windows =
                make_windows(&bundle.series, model_config.window, config.train.stride)?;
            (bundle, model_config, windows, params)
        }
        None => {
            let stage = train_stage(&config, seed, args.verbose, args.quiet)?;
            (stage.bundle, stage.model_config, stage.windows, stage.params)
        }
    };

    let mut detector = DetectorConfig {
        kmeans_seed: clustering_seed(seed),
        ..config.detector.clone()
    };
    if args.complete {
        detector.top_classes = detector.classes;
    }
    let (graph, report) = tscausal::detect::discover(&params, &model_config, &windows, &detector)?;
    if !args.quiet {
        eprintln!(
            "discovery took {:.1} s ({} edges)",
            started.elapsed().as_secs_f64(),
            graph.edge_count()
        );
        let degenerate = report.degenerate_targets();
        if !degenerate.is_empty() {
            eprintln!(
                "warning: degenerate score clustering for target(s) {degenerate:?}; \
                 their selections are unreliable"
            );
        }
    }

    std::fs::create_dir_all(&out)?;
    let graph_path = out.join("graph.json");
    std::fs::write(&graph_path, graph.to_json()? + "\n")?;
    let dot_path = out.join("graph.dot");
    std::fs::write(&dot_path, graph.to_dot(Some(&bundle.labels))?)?;
    let report_path = out.join("discover_report.json");
    write_json(&report_path, &report)?;
    println!("wrote {}", graph_path.display());
    println!("wrote {}", dot_path.display());
    println!("wrote {}", report_path.display());
    Ok(())
}

/// Load a graph from JSON, or from a truth CSV (vertex count inferred
/// from the largest index mentioned).
fn load_graph_file(path: &Path) -> Result<CausalGraph> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        tscausal::data::load_ground_truth(path, None)
    } else {
        let text = std::fs::read_to_string(path).map_err(|e| Error::ParseError {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        CausalGraph::from_json(&text)
    }
}

fn print_eval(result: &EvalResult) {
    println!("precision  {:.6}", result.precision);
    println!("recall     {:.6}", result.recall);
    println!("f1         {:.6}", result.f1);
    match result.pod {
        Some(p) => println!("pod        {p:.6}"),
        None => println!("pod        undefined (no matched edge has a known true delay)"),
    }
    println!("tp         {}", result.tp);
    println!("fp         {}", result.fp);
    println!("fn         {}", result.fn_);
    if let Some(seed) = result.seed {
        println!("seed       {seed}");
    }
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let pred = load_graph_file(&args.pred)?;
    let truth = load_graph_file(&args.truth)?;
    let include = !args.exclude_self_loops;
    let result = prf1(&pred, &truth, include)?;
    print_eval(&result);
    if args.diff {
        let diff = edge_diff(&pred, &truth, include)?;
        let list = |pairs: &[(usize, usize)]| {
            pairs
                .iter()
                .map(|(s, t)| format!("{}->{}", s + 1, t + 1))
                .collect::<Vec<_>>()
                .join(", ")
        };
        println!("matched    [{}]", list(&diff.true_positives));
        println!("spurious   [{}]", list(&diff.false_positives));
        println!("missed     [{}]", list(&diff.false_negatives));
    }
    if let Some(path) = args.json {
        write_json(&path, &result)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs, overrides: Vec<String>) -> Result<()> {
    let mut rows: Vec<SeedReport> = Vec::new();
    let mut out_dir: Option<PathBuf> = args.output;
    for path in &args.configs {
        let config = load_config(path, args.profile.clone(), overrides.clone())?;
        if out_dir.is_none() {
            out_dir = Some(config.output_dir.clone());
        }
        let started = Instant::now();
        let row = bench(&config)?;
        eprintln!(
            "{}: {} seeds in {:.1} s",
            row.name,
            config.seeds.len(),
            started.elapsed().as_secs_f64()
        );
        rows.push(row);
    }

    let mut table = String::new();
    table.push_str(&SeedReport::text_header());
    table.push('\n');
    for row in &rows {
        table.push_str(&row.text_row());
        table.push('\n');
        for (seed, message) in &row.failures {
            table.push_str(&format!("  seed {seed} failed: {message}\n"));
        }
    }
    print!("{table}");

    let out = out_dir.expect("at least one config is required");
    std::fs::create_dir_all(&out)?;
    let json_path = out.join("bench_report.json");
    write_json(&json_path, &json!({ "rows": rows }))?;
    let text_path = out.join("bench_report.txt");
    std::fs::write(&text_path, &table)?;
    eprintln!("wrote {}", json_path.display());
    eprintln!("wrote {}", text_path.display());
    Ok(())
}
