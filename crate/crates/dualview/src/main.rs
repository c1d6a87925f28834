//! Command-line front end: dataset generation, hard-negative mining,
//! training, reranking, evaluation, the ablation grid, and latency
//! benchmarking.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use dualview_core::config::{Ablation, ModelConfig, TrainConfig};
use dualview_core::data::{
    build_candidate_set, generate_synthetic, mine_hard_negatives, CandidateSet, DataError,
    SyntheticMode, SyntheticSpec,
};
use dualview_core::model::{DualViewModel, ModelError, ScoringModel};
use dualview_core::train::{train, validate_model, TrainError, TrainEvent, TrainOutcome};

use dualview::bench::{bench_rerank, bench_rerank_threads, BenchError};
use dualview::checkpoint::{load_model, save_checkpoint, CheckpointError};
use dualview::jsonl::{load_dataset, save_cache, save_jsonl, DatasetError};
use dualview::report;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError { code: EXIT_USAGE, message: message.into() }
    }

    fn data(message: impl Into<String>) -> Self {
        CliError { code: EXIT_DATA, message: message.into() }
    }

    fn numeric(message: impl Into<String>) -> Self {
        CliError { code: EXIT_NUMERIC, message: message.into() }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::InvalidSpec(_) => CliError::usage(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => CliError::usage(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::usage(e.to_string()),
            TrainError::Model(m) => CliError::from(m),
            TrainError::Loss(_) => CliError::numeric(e.to_string()),
            TrainError::NoTrainingData => CliError::data(e.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::TooFewIterations { .. } => CliError::usage(e.to_string()),
            BenchError::EmptyDataset => CliError::data(e.to_string()),
            BenchError::Model(m) => CliError::from(m),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// full-size configuration for 768-dim embeddings
    Default,
    /// desk-scale configuration sized to the dataset's embedding width
    Synthetic,
}

#[derive(Parser)]
#[command(
    name = "dualview",
    version,
    about = "Dual-view cascaded reranker over frozen embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark dataset
    GenSynth(GenSynthArgs),
    /// Rebuild candidate sets using mined hard negatives
    MineNegatives(MineArgs),
    /// Train a model and save the best checkpoint
    Train(TrainArgs),
    /// Rerank a dataset with a trained checkpoint
    Rerank(RerankArgs),
    /// Evaluate a checkpoint (and the cosine baseline) on a labeled dataset
    Eval(EvalArgs),
    /// Train and evaluate every model variant on the same data
    Ablate(AblateArgs),
    /// Measure batch-1 rerank latency
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenSynthArgs {
    /// planted_similarity or complementary_pair
    #[arg(long, value_parser = parse_mode)]
    mode: SyntheticMode,
    #[arg(long, default_value_t = 100)]
    queries: usize,
    #[arg(long, default_value_t = 10)]
    candidates: usize,
    #[arg(long, default_value_t = 768)]
    dim: usize,
    #[arg(long, default_value_t = 0.3)]
    sigma: f64,
    #[arg(long, default_value_t = 2)]
    golds: usize,
    /// defaults to $DUALVIEW_SEED, then 42
    #[arg(long)]
    seed: Option<u64>,
    /// output path; .bin/.cache writes the packed cache, anything else JSONL
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MineArgs {
    /// labeled dataset whose negatives form the shared distractor pool
    #[arg(long)]
    data: PathBuf,
    /// hard negatives mined per gold document
    #[arg(long, default_value_t = 8)]
    per_gold: usize,
    /// candidates per rebuilt set; defaults to each set's original size
    #[arg(long)]
    target: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: Option<PathBuf>,
    /// checkpoint written at the best validation score
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Synthetic)]
    preset: Preset,
    #[arg(long, value_parser = parse_ablation, default_value = "full")]
    ablation: Ablation,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    #[arg(long, default_value_t = 2e-5)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 1)]
    accumulation: usize,
    /// optimizer steps between validations; 0 validates once per epoch
    #[arg(long, default_value_t = 0)]
    eval_every: usize,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// suppress per-step JSON log lines on stderr
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct RerankArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    #[arg(long, default_value_t = 2e-5)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
}

#[derive(Args)]
struct BenchArgs {
    /// benchmark a trained checkpoint instead of fresh default weights
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// dataset to cycle through; generated in memory when omitted
    #[arg(long)]
    data: Option<PathBuf>,
    /// candidates per query for the generated dataset
    #[arg(long, default_value_t = 10)]
    candidates: usize,
    #[arg(long, default_value_t = 100)]
    warmup: usize,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    /// concurrent streams; 1 reports single-stream latency only
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// variant for the fresh default model (ignored with --checkpoint)
    #[arg(long, value_parser = parse_ablation, default_value = "full")]
    ablation: Ablation,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
}

fn parse_mode(s: &str) -> Result<SyntheticMode, String> {
    s.parse()
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse()
}

fn resolve_seed(flag: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("DUALVIEW_SEED") {
        Ok(v) => v
            .parse()
            .map_err(|_| CliError::usage(format!("DUALVIEW_SEED '{v}' is not a valid seed"))),
        Err(_) => Ok(42),
    }
}

fn save_dataset(path: &Path, dataset: &[CandidateSet]) -> Result<(), DatasetError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") | Some("cache") => save_cache(path, dataset),
        _ => save_jsonl(path, dataset),
    }
}

fn dataset_dim(dataset: &[CandidateSet]) -> Result<usize, CliError> {
    dataset
        .first()
        .map(|s| s.query_embedding.len())
        .ok_or_else(|| CliError::data("dataset is empty"))
}

fn run_gen_synth(args: GenSynthArgs) -> Result<(), CliError> {
    let spec = SyntheticSpec {
        mode: args.mode,
        n_queries: args.queries,
        n_candidates: args.candidates,
        embed_dim: args.dim,
        noise_sigma: args.sigma,
        n_gold: args.golds,
        seed: resolve_seed(args.seed)?,
    };
    let dataset = generate_synthetic(&spec)?;
    save_dataset(&args.out, &dataset)?;
    println!(
        "wrote {} queries ({} candidates, dim {}) to {}",
        dataset.len(),
        args.candidates,
        args.dim,
        args.out.display()
    );
    Ok(())
}

fn run_mine(args: MineArgs) -> Result<(), CliError> {
    let dataset = load_dataset(&args.data)?;
    if dataset.is_empty() {
        return Err(CliError::data("dataset is empty"));
    }
    // shared distractor pool: every negative in the input
    let pool: Vec<(String, Vec<f32>)> = dataset
        .iter()
        .flat_map(|s| s.candidates.iter().filter(|c| c.label == 0))
        .map(|c| (c.doc_id.clone(), c.embedding.clone()))
        .collect();
    let pool_embeddings: Vec<Vec<f32>> = pool.iter().map(|(_, e)| e.clone()).collect();
    let seed = resolve_seed(args.seed)?;

    let mut out = Vec::with_capacity(dataset.len());
    let mut truncated = false;
    for (qi, set) in dataset.iter().enumerate() {
        let golds: Vec<(String, Vec<f32>)> = set
            .candidates
            .iter()
            .filter(|c| c.label == 1)
            .map(|c| (c.doc_id.clone(), c.embedding.clone()))
            .collect();
        if golds.is_empty() {
            return Err(CliError::data(format!(
                "query '{}' has no gold documents to mine against",
                set.query_id
            )));
        }
        let gold_embeddings: Vec<Vec<f32>> = golds.iter().map(|(_, e)| e.clone()).collect();
        let mined = mine_hard_negatives(&gold_embeddings, &pool_embeddings, args.per_gold)?;
        truncated |= mined.truncated;

        // union across golds, hardest first, own documents excluded
        let own: BTreeSet<&str> = set.candidates.iter().map(|c| c.doc_id.as_str()).collect();
        let mut merged: Vec<(usize, f32)> = mined.per_gold.into_iter().flatten().collect();
        merged.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let mut seen = BTreeSet::new();
        let negatives: Vec<(String, Vec<f32>)> = merged
            .into_iter()
            .filter(|(i, _)| seen.insert(*i) && !own.contains(pool[*i].0.as_str()))
            .map(|(i, _)| pool[i].clone())
            .collect();

        let target = args.target.unwrap_or(set.n());
        out.push(build_candidate_set(
            &set.query_id,
            set.query_embedding.clone(),
            &golds,
            &negatives,
            target,
            seed.wrapping_add(qi as u64),
        )?);
    }
    save_dataset(&args.out, &out)?;
    if truncated {
        eprintln!("note: per-gold count exceeded the distractor pool; results truncated");
    }
    println!("wrote {} rebuilt queries to {}", out.len(), args.out.display());
    Ok(())
}

fn model_config(preset: Preset, dim: usize, ablation: Ablation) -> Result<ModelConfig, CliError> {
    let cfg = match preset {
        Preset::Default => {
            let cfg = ModelConfig::default();
            if dim != cfg.embed_dim {
                return Err(CliError::data(format!(
                    "default preset expects {}-dim embeddings, dataset has {dim}",
                    cfg.embed_dim
                )));
            }
            cfg
        }
        Preset::Synthetic => ModelConfig::synthetic(dim),
    };
    Ok(cfg.with_ablation(ablation))
}

fn log_event(event: &TrainEvent, quiet: bool) {
    let line = match event {
        TrainEvent::Step(s) => {
            if quiet {
                return;
            }
            serde_json::json!({
                "event": "step", "step": s.step, "epoch": s.epoch, "lr": s.lr,
                "loss": s.loss, "bce": s.bce, "margin": s.margin,
                "infonce": s.infonce, "triplet": s.triplet,
                "grad_norm": s.grad_norm, "clip_scale": s.clip_scale,
                "degenerate_queries": s.degenerate_queries,
            })
        }
        TrainEvent::Eval(e) => serde_json::json!({
            "event": "eval", "step": e.step, "epoch": e.epoch,
            "k": e.metrics.k, "recall": e.metrics.recall,
            "full_hit": e.metrics.full_hit, "ndcg": e.metrics.ndcg,
            "mrr": e.metrics.mrr, "precision": e.metrics.precision,
        }),
    };
    eprintln!("{line}");
}

fn run_train(args: TrainArgs) -> Result<(), CliError> {
    let train_data = load_dataset(&args.train)?;
    let val_data = match &args.val {
        Some(p) => load_dataset(p)?,
        None => Vec::new(),
    };
    let dim = dataset_dim(&train_data)?;
    let config = model_config(args.preset, dim, args.ablation)?;
    let seed = resolve_seed(args.seed)?;
    let train_cfg = TrainConfig {
        base_lr: args.lr,
        batch_size: args.batch_size,
        accumulation_steps: args.accumulation,
        epochs: args.epochs,
        eval_every: args.eval_every,
        seed,
        ..TrainConfig::default()
    };

    let mut model = DualViewModel::<f32>::new(config, seed)?;
    let quiet = args.quiet;
    let outcome: TrainOutcome<f32> = train(
        &mut model,
        &train_data,
        &val_data,
        &train_cfg,
        args.k,
        |event| log_event(event, quiet),
    )?;

    save_checkpoint(&args.out, &config, model.registry())?;
    if let Some(m) = &outcome.best_metrics {
        print!("{}", report::metrics_text("best validation", m, &config));
    }
    println!(
        "trained {} steps ({} parameters), checkpoint at {}",
        outcome.steps,
        model.parameter_count(),
        args.out.display()
    );
    if let Some(msg) = outcome.aborted {
        return Err(CliError::numeric(format!(
            "training aborted on non-finite values: {msg} (checkpoint holds the last good weights)"
        )));
    }
    Ok(())
}

/// Streams one chunk to stdout; a closed pipe (e.g. `| head`) ends the
/// stream quietly instead of panicking.
fn emit(chunk: &str) -> Result<bool, CliError> {
    use std::io::Write;
    match std::io::stdout().write_all(chunk.as_bytes()) {
        Ok(()) => Ok(true),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(false),
        Err(e) => Err(CliError::data(format!("stdout: {e}"))),
    }
}

fn run_rerank(args: RerankArgs) -> Result<(), CliError> {
    let model = load_model(&args.checkpoint, None)?;
    let dataset = load_dataset(&args.data)?;
    for set in &dataset {
        let scored = model.rerank(set)?;
        let chunk = match args.format {
            OutputFormat::Text => report::rerank_text(&set.query_id, &scored),
            OutputFormat::Json => format!(
                "{}\n",
                serde_json::to_string(&report::RerankJson::new(&set.query_id, &scored))
                    .expect("report serializes")
            ),
        };
        if !emit(&chunk)? {
            break;
        }
    }
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<(), CliError> {
    let model = load_model(&args.checkpoint, None)?;
    let dataset = load_dataset(&args.data)?;
    if dataset.is_empty() {
        return Err(CliError::data("dataset is empty"));
    }

    let model_metrics = validate_model(&model, &dataset, args.k)?;
    let cosine_pairs: Vec<(Vec<usize>, Vec<u8>)> = dataset
        .iter()
        .map(|s| {
            (
                dualview_core::baseline::cosine_rank(s),
                s.candidates.iter().map(|c| c.label).collect(),
            )
        })
        .collect();
    let cosine_metrics = dualview_core::metrics::evaluate_pairs(&cosine_pairs, args.k);
    if model_metrics.evaluated == 0 {
        return Err(CliError::data("no query has gold labels; nothing to evaluate"));
    }

    let rows = vec![
        (String::from("model"), model_metrics),
        (String::from("cosine"), cosine_metrics),
    ];
    match args.format {
        OutputFormat::Text => print!("{}", report::comparison_text(&rows, model.config())),
        OutputFormat::Json => println!(
            "{}",
            serde_json::to_string(&report::ComparisonJson::new(&rows, model.config()))
                .expect("report serializes")
        ),
    }
    Ok(())
}

fn run_ablate(args: AblateArgs) -> Result<(), CliError> {
    let train_data = load_dataset(&args.train)?;
    let val_data = load_dataset(&args.val)?;
    let dim = dataset_dim(&train_data)?;
    let seed = resolve_seed(args.seed)?;
    let train_cfg = TrainConfig {
        base_lr: args.lr,
        batch_size: args.batch_size,
        epochs: args.epochs,
        seed,
        ..TrainConfig::default()
    };

    let base = ModelConfig::synthetic(dim);
    let mut rows = Vec::with_capacity(Ablation::ALL.len());
    for ablation in Ablation::ALL {
        let config = base.with_ablation(ablation);
        let mut model = DualViewModel::<f32>::new(config, seed)?;
        let outcome = train(&mut model, &train_data, &val_data, &train_cfg, args.k, |_| {})?;
        if let Some(msg) = outcome.aborted {
            return Err(CliError::numeric(format!(
                "variant {} aborted on non-finite values: {msg}",
                ablation.name()
            )));
        }
        let metrics = validate_model(&model, &val_data, args.k)?;
        eprintln!(
            "{}: full_hit {:.4}, recall {:.4}",
            ablation.name(),
            metrics.full_hit,
            metrics.recall
        );
        rows.push((String::from(ablation.name()), metrics));
    }

    match args.format {
        OutputFormat::Text => print!("{}", report::comparison_text(&rows, &base)),
        OutputFormat::Json => println!(
            "{}",
            serde_json::to_string(&report::ComparisonJson::new(&rows, &base))
                .expect("report serializes")
        ),
    }
    Ok(())
}

fn run_bench(args: BenchArgs) -> Result<(), CliError> {
    let seed = resolve_seed(args.seed)?;
    let model = match &args.checkpoint {
        Some(p) => load_model(p, None)?,
        None => DualViewModel::<f32>::new(
            ModelConfig::default().with_ablation(args.ablation),
            seed,
        )?,
    };
    let dataset = match &args.data {
        Some(p) => load_dataset(p)?,
        None => generate_synthetic(&SyntheticSpec {
            mode: SyntheticMode::PlantedSimilarity,
            n_queries: 32,
            n_candidates: args.candidates,
            embed_dim: model.config().embed_dim,
            noise_sigma: 0.3,
            n_gold: 2.min(args.candidates),
            seed,
        })?,
    };

    if args.threads > 1 {
        let r = bench_rerank_threads(&model, &dataset, args.warmup, args.iters, args.threads)?;
        match args.format {
            OutputFormat::Text => {
                println!(
                    "{} streams: {:.1} qps aggregate; per-query mean {:.3} ms, p95 {:.3} ms \
                     ({} measured, n={})",
                    r.threads,
                    r.aggregate_qps,
                    r.per_stream.mean_ms,
                    r.per_stream.p95_ms,
                    r.per_stream.n_measured,
                    r.per_stream.candidate_size
                );
            }
            OutputFormat::Json => {
                println!("{}", serde_json::to_string(&r).expect("report serializes"));
            }
        }
    } else {
        let r = bench_rerank(&model, &dataset, args.warmup, args.iters)?;
        match args.format {
            OutputFormat::Text => {
                println!(
                    "mean {:.3} ms, p95 {:.3} ms, min {:.3} ms, max {:.3} ms, {:.1} qps \
                     ({} measured after {} warmup, n={}, config {})",
                    r.mean_ms,
                    r.p95_ms,
                    r.min_ms,
                    r.max_ms,
                    r.qps,
                    r.n_measured,
                    r.n_warmup,
                    r.candidate_size,
                    r.config_fingerprint
                );
            }
            OutputFormat::Json => {
                println!("{}", serde_json::to_string(&r).expect("report serializes"));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version are successful outputs, not usage errors
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenSynth(a) => run_gen_synth(a),
        Command::MineNegatives(a) => run_mine(a),
        Command::Train(a) => run_train(a),
        Command::Rerank(a) => run_rerank(a),
        Command::Eval(a) => run_eval(a),
        Command::Ablate(a) => run_ablate(a),
        Command::Bench(a) => run_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
