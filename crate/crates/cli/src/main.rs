use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dualreply::config::RunConfig;
use dualreply::dual_model::load_checkpoint;
use dualreply::encoder::CellKind;
use dualreply::pipeline::{self, RunDir};
use dualreply::serve::{self, AccessLog, BenchReport};
use dualreply::whitelist::{load_whitelist, WhitelistMethod};

/// Dual-encoder response suggestion: data, training, whitelists, evaluation,
/// serving and benchmarks over one run directory.
#[derive(Parser)]
#[command(name = "dualreply", version)]
struct Cli {
    /// Run directory holding every artifact.
    #[arg(long, global = true, default_value = "run")]
    run: PathBuf,

    /// Config file. Defaults to <run>/config.json when present, else built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus into <run>/data/corpus.jsonl.
    SynthData(SynthArgs),
    /// Print corpus statistics and write <run>/data/stats.json.
    Stats,
    /// Split the corpus 80/10/10 by conversation.
    Split,
    /// Train the dual encoder; writes <run>/checkpoints/.
    Train(TrainArgs),
    /// Build, or describe, a response whitelist.
    Whitelist {
        #[command(subcommand)]
        command: WhitelistCommand,
    },
    /// Evaluate on the test split; writes <run>/reports/eval.{json,txt}.
    Eval(EvalArgs),
    /// Serve suggestions over HTTP.
    Serve(ServeArgs),
    /// Measure encoder or ranking latency on one thread.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
    /// Print the layer shapes and parameter counts of a checkpoint.
    Describe {
        /// Checkpoint file.
        checkpoint: PathBuf,
    },
    /// Print the resolved configuration.
    Config,
    /// Print the JSON schema of the config or the eval report.
    Schema {
        #[arg(value_enum)]
        which: SchemaKind,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemaKind {
    Config,
    Report,
}

#[derive(Args)]
struct SynthArgs {
    /// Number of conversations [default: corpus.synth.conversations].
    #[arg(long)]
    conversations: Option<usize>,
    /// Number of intents [default: corpus.synth.intents].
    #[arg(long)]
    intents: Option<usize>,
    /// Per-word typo probability in customer turns [default: corpus.synth.noise_rate].
    #[arg(long)]
    noise_rate: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Epochs [default: training.epochs].
    #[arg(long)]
    epochs: Option<usize>,
    /// Examples per batch [default: training.batch_size].
    #[arg(long)]
    batch_size: Option<usize>,
    /// Shared negatives per batch [default: training.negatives].
    #[arg(long)]
    negatives: Option<usize>,
}

#[derive(Subcommand)]
enum WhitelistCommand {
    /// Most frequent responses of the training split.
    Freq(WhitelistArgs),
    /// Most frequent member of each k-means cluster of response encodings.
    Cluster(WhitelistArgs),
    /// Print a whitelist's metadata and first entries.
    Describe {
        /// Whitelist TSV file.
        path: PathBuf,
        /// Entries to print.
        #[arg(long, default_value_t = 10)]
        head: usize,
    },
}

#[derive(Args)]
struct WhitelistArgs {
    /// Whitelist size [default: every size in whitelist.frequency_sizes or whitelist.clustering_sizes].
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate [default: <run>/checkpoints/best.ckpt].
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    /// Listen address [default: serve.address].
    #[arg(long)]
    address: Option<String>,
    /// Whitelist id such as frequency-1000 [default: serve.whitelist].
    #[arg(long)]
    whitelist: Option<String>,
    /// Suggestions per request when the request names none [default: serve.top_k].
    #[arg(long)]
    top_k: Option<usize>,
    /// Checkpoint to serve [default: <run>/checkpoints/best.ckpt].
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Single-context encode latency of a randomly initialized encoder.
    Encoder(BenchEncoderArgs),
    /// Top-k latency over a random index of cached encodings.
    Rank(BenchRankArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Cell {
    Sru,
    Lstm,
}

#[derive(Args)]
struct BenchEncoderArgs {
    /// Recurrent cell [default: model.encoder.cell].
    #[arg(long, value_enum)]
    cell: Option<Cell>,
    /// Layers [default: model.encoder.layers].
    #[arg(long)]
    layers: Option<usize>,
    #[command(flatten)]
    common: BenchCommon,
}

#[derive(Args)]
struct BenchRankArgs {
    /// Cached encodings in the index.
    #[arg(long, default_value_t = 10_000)]
    size: usize,
    /// Encoding dimension [default: the model's output dimension].
    #[arg(long)]
    dim: Option<usize>,
    /// Suggestions ranked per query.
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[command(flatten)]
    common: BenchCommon,
}

#[derive(Args)]
struct BenchCommon {
    /// Timed samples [default: bench.samples].
    #[arg(long)]
    samples: Option<usize>,
    /// Untimed leading samples [default: bench.warmup].
    #[arg(long)]
    warmup: Option<usize>,
    /// Tokens per context [default: bench.context_length].
    #[arg(long)]
    context_length: Option<usize>,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let default_path = cli.run.join("config.json");
    let path = cli.config.clone().or_else(|| default_path.exists().then_some(default_path));
    let mut config = match &path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.derive_stage_seeds();
    Ok(config)
}

/// Validates flag overrides and keeps `<run>/config.json` as the record of
/// the run's configuration.
fn finish_config(cli: &Cli, config: &RunConfig) -> Result<()> {
    config.validate()?;
    let path = cli.run.join("config.json");
    if !path.exists() {
        std::fs::create_dir_all(&cli.run).with_context(|| format!("creating {}", cli.run.display()))?;
        std::fs::write(&path, config.to_json() + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_bench(run: &RunDir, name: &str, report: &BenchReport) -> Result<()> {
    let path = run.reports().join(format!("bench-{name}.json"));
    std::fs::create_dir_all(run.reports())?;
    std::fs::write(&path, serde_json::to_string_pretty(report)? + "\n")?;
    print_json(report)
}

fn apply_bench(config: &mut RunConfig, c: &BenchCommon) {
    if let Some(v) = c.samples {
        config.bench.samples = v;
    }
    if let Some(v) = c.warmup {
        config.bench.warmup = v;
    }
    if let Some(v) = c.context_length {
        config.bench.context_length = v;
    }
}

fn whitelist_sizes(explicit: Option<usize>, configured: &[usize], what: &str) -> Result<Vec<usize>> {
    match explicit {
        Some(n) => Ok(vec![n]),
        None if configured.is_empty() => bail!("no --size given and whitelist.{what}_sizes is empty"),
        None => Ok(configured.to_vec()),
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let run = RunDir::new(&cli.run);
    let mut config = load_config(&cli)?;
    match &cli.command {
        Command::SynthData(a) => {
            if let Some(v) = a.conversations {
                config.corpus.synth.conversations = v;
            }
            if let Some(v) = a.intents {
                config.corpus.synth.intents = v;
            }
            if let Some(v) = a.noise_rate {
                config.corpus.synth.noise_rate = v;
            }
            finish_config(&cli, &config)?;
            let path = pipeline::synth_stage(&run, &config)?;
            println!("wrote {}", path.display());
        }
        Command::Stats => {
            finish_config(&cli, &config)?;
            print_json(&pipeline::stats_stage(&run, &config)?)?;
        }
        Command::Split => {
            finish_config(&cli, &config)?;
            print_json(&pipeline::split_stage(&run, &config)?)?;
        }
        Command::Train(a) => {
            if let Some(v) = a.epochs {
                config.training.epochs = v;
            }
            if let Some(v) = a.batch_size {
                config.training.batch_size = v;
            }
            if let Some(v) = a.negatives {
                config.training.negatives = v;
            }
            finish_config(&cli, &config)?;
            let report = pipeline::train_stage(&run, &config)?;
            println!(
                "trained {} steps; best epoch {} (validation AUC {:?}); checkpoints in {}",
                report.steps,
                report.best_epoch,
                report.best_val_auc,
                run.checkpoints().display()
            );
        }
        Command::Whitelist { command } => {
            finish_config(&cli, &config)?;
            let (method, args) = match command {
                WhitelistCommand::Freq(a) => (WhitelistMethod::Frequency, a),
                WhitelistCommand::Cluster(a) => (WhitelistMethod::Clustering, a),
                WhitelistCommand::Describe { path, head } => {
                    describe_whitelist(path, *head)?;
                    return Ok(ExitCode::SUCCESS);
                }
            };
            let sizes = match method {
                WhitelistMethod::Frequency => whitelist_sizes(args.size, &config.whitelist.frequency_sizes, "frequency")?,
                WhitelistMethod::Clustering => whitelist_sizes(args.size, &config.whitelist.clustering_sizes, "clustering")?,
            };
            for size in sizes {
                let wl = pipeline::whitelist_stage(&run, &config, method, size)?;
                println!("wrote {} ({} entries)", run.whitelist_path(&wl.id()).display(), wl.len());
            }
        }
        Command::Eval(a) => {
            finish_config(&cli, &config)?;
            let report = pipeline::eval_stage(&run, &config, a.checkpoint.as_deref())?;
            print!("{}", dualreply::eval::render_table(&report));
            if !report.failures.is_empty() {
                for f in &report.failures {
                    eprintln!("metric failed: {f}");
                }
                return Ok(ExitCode::from(2));
            }
        }
        Command::Serve(a) => {
            if let Some(v) = &a.address {
                config.serve.address = v.clone();
            }
            if let Some(v) = &a.whitelist {
                config.serve.whitelist = Some(v.clone());
            }
            if let Some(v) = a.top_k {
                config.serve.top_k = v;
            }
            finish_config(&cli, &config)?;
            serve_forever(&run, &config, a.checkpoint.as_deref())?;
        }
        Command::Bench { command } => match command {
            BenchCommand::Encoder(a) => {
                apply_bench(&mut config, &a.common);
                let mut enc = config.model.encoder.clone();
                if let Some(c) = a.cell {
                    enc.cell = match c {
                        Cell::Sru => CellKind::Sru,
                        Cell::Lstm => CellKind::Lstm,
                    };
                }
                if let Some(l) = a.layers {
                    enc.layers = l;
                }
                finish_config(&cli, &config)?;
                let emb = pipeline::load_embedding(&config)?;
                let report = serve::bench_encoder(&enc, &emb, &config.bench)?;
                write_bench(&run, &format!("{}{}", report.kind, report.layers), &report)?;
            }
            BenchCommand::Rank(a) => {
                apply_bench(&mut config, &a.common);
                finish_config(&cli, &config)?;
                let dim = a.dim.unwrap_or_else(|| config.model.encoder.output_dim());
                let index = serve::random_index(a.size, dim, config.bench.seed)?;
                let report = serve::bench_rank(&index, a.k, &config.bench)?;
                write_bench(&run, "rank", &report)?;
            }
        },
        Command::Describe { checkpoint } => {
            let ckpt = load_checkpoint(checkpoint, None)?;
            let d = ckpt.model.describe();
            let width = d.parameters.iter().map(|p| p.name.len()).max().unwrap_or(0);
            for p in &d.parameters {
                println!("{:width$}  {:?}", p.name, p.shape);
            }
            println!("checkpoint            {}", ckpt.hash);
            println!("total parameters      {}", d.total_parameters);
            println!("recurrent parameters  {}", d.recurrent_parameters);
            println!("pooling parameters    {}", d.pooling_parameters);
        }
        Command::Config => print!("{}", config.to_json() + "\n"),
        Command::Schema { which } => print_json(&match which {
            SchemaKind::Config => dualreply::config::config_schema(),
            SchemaKind::Report => dualreply::config::report_schema(),
        })?,
    }
    Ok(ExitCode::SUCCESS)
}

fn describe_whitelist(path: &Path, head: usize) -> Result<()> {
    let wl = load_whitelist(path)?;
    println!("id          {}", wl.id());
    println!("entries     {}", wl.len());
    println!("hash        {}", wl.hash());
    println!("corpus      {}", wl.provenance().corpus_hash);
    println!("seed        {}", wl.provenance().seed);
    println!("frequency   {}", wl.total_frequency());
    for e in wl.entries().iter().take(head) {
        println!("{:>8}  {}", e.frequency, e.text);
    }
    Ok(())
}

fn serve_forever(run: &RunDir, config: &RunConfig, checkpoint: Option<&Path>) -> Result<()> {
    let id = pipeline::default_whitelist_id(config)?;
    let suggester = pipeline::load_suggester(run, config, &id, checkpoint)?;
    let addr = config.serve.address.parse()?;
    let health = suggester.health();
    let log: AccessLog = Arc::new(Mutex::new(std::io::stderr()));
    let router = serve::router(Arc::new(suggester), Some(log));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = serve::bind(addr).await?;
        eprintln!(
            "serving {id} ({} entries, checkpoint {}) on http://{}",
            health.whitelist_size,
            health.checkpoint_hash,
            listener.local_addr()?
        );
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        serve::serve_http(listener, router, shutdown).await?;
        Ok(())
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
