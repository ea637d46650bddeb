//! The `slotfill` command line.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use slotfill_core::augment::{split_dataset, Augmenter, Pipeline, SplitRatios};
use slotfill_core::eval::{run_eval, AverageBy, EvalOptions, ValueMatcher};
use slotfill_core::sgd::{load_sgd, read_jsonl, to_records, write_jsonl_to, RecordOptions, SlotIdMap};
use slotfill_core::{render_output, PromptRecord, SlotLibrary, Split, TokenBudget, TokenCounter, TrackingMode};

use crate::config::AppConfig;
use crate::error::{AppError, EXIT_OK, EXIT_USAGE};
use crate::session::{FileStore, MemoryStore, SessionManager, SessionStore, TrackerContext};

#[derive(Debug, Parser)]
#[command(name = "slotfill", version, about = "Schema-guided slot filling: datasets, prompts, evaluation and serving")]
pub struct Cli {
    /// Print errors to stderr as one JSON object.
    #[arg(long, global = true)]
    pub json_errors: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert an SGD-format directory into prompt records.
    IngestSgd(IngestArgs),
    /// Run augmentation pipelines over prompt records.
    Augment(AugmentArgs),
    /// Render prompts (or gold outputs) for prompt records.
    BuildPrompts(BuildPromptsArgs),
    /// Assign train/val/test splits, keeping each dialogue in one split.
    Split(SplitArgs),
    /// Score a backend against a labelled dataset.
    Eval(EvalArgs),
    /// Track a conversation interactively.
    Repl(ReplArgs),
    /// Serve extraction and sessions over HTTP.
    Serve(ServeArgs),
}

/// Configuration file plus the flags that override it.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML or JSON configuration file.
    #[arg(long = "backend", visible_alias = "config", value_name = "CFG")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub max_prompt_tokens: Option<usize>,
    #[arg(long)]
    pub max_output_tokens: Option<usize>,
    #[arg(long, value_enum)]
    pub counter: Option<CounterName>,
    /// Shell command for `--counter plugin`: reads text on stdin, prints a count.
    #[arg(long)]
    pub counter_command: Option<String>,
    /// Replace ungrounded values with a close conversation span instead of dropping them.
    #[arg(long)]
    pub repair_substring: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CounterName {
    Whitespace,
    Chars,
    Plugin,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<AppConfig, AppError> {
        let mut config = match &self.config {
            Some(path) => AppConfig::load(path)?,
            None => AppConfig::default(),
        };
        if let Some(n) = self.max_prompt_tokens {
            config.budget.max_prompt_tokens = n;
        }
        if let Some(n) = self.max_output_tokens {
            config.budget.max_output_tokens = n;
        }
        if let Some(c) = self.counter {
            config.counter.name = c.to_possible_value().expect("no skipped variants").get_name().to_string();
        }
        if let Some(cmd) = &self.counter_command {
            config.counter.command = Some(cmd.clone());
        }
        if self.repair_substring {
            config.normalize.repair_substring = true;
        }
        config.budget = TokenBudget::new(config.budget.max_prompt_tokens, config.budget.max_output_tokens)
            .map_err(|e| AppError::Usage(e.to_string()))?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory holding schema.json and dialogues_*.json.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Split label for every record.
    #[arg(long, default_value = "train")]
    pub split: Split,
    /// Use these slot ids instead of assigning fresh ones.
    #[arg(long)]
    pub slot_map: Option<PathBuf>,
    /// Write the slot id assignment here.
    #[arg(long)]
    pub save_slot_map: Option<PathBuf>,
    /// Write data-quality flags here as JSON lines.
    #[arg(long)]
    pub flags: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Pipeline name, or several separated by commas and applied in order.
    #[arg(long, value_delimiter = ',', required = true)]
    pub pipeline: Vec<Pipeline>,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Upper bound on records produced by each pipeline.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Paraphrase multi-slot turns with the configured backend.
    #[arg(long)]
    pub paraphrase: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PromptFormat {
    /// Records with re-rendered prompt and output fields.
    Jsonl,
    /// Bare prompts separated by blank lines.
    Text,
    /// Bare gold outputs separated by blank lines.
    Output,
}

#[derive(Debug, Args)]
pub struct BuildPromptsArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Defaults to standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PromptFormat::Jsonl)]
    pub format: PromptFormat,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// All records with their split field set.
    #[arg(long, required_unless_present = "output_dir")]
    pub output: Option<PathBuf>,
    /// Writes train.jsonl, val.jsonl and test.jsonl.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Train, validation and test fractions.
    #[arg(long, default_value = "0.8,0.1,0.1", value_parser = parse_ratios)]
    pub ratios: SplitRatios,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_ratios(s: &str) -> Result<SplitRatios, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [train, val, test] => SplitRatios::new(train, val, test).map_err(|e| e.to_string()),
        _ => Err(format!("expected three comma-separated fractions, got {}", parts.len())),
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Write the full report as JSON here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// `exact`, `case-insensitive` or `fuzzy[:threshold]`.
    #[arg(long)]
    pub matcher: Option<ValueMatcher>,
    #[arg(long)]
    pub average_by: Option<AverageBy>,
    /// Stop at the first backend failure instead of scoring it as empty.
    #[arg(long)]
    pub fail_fast: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct ReplArgs {
    /// JSON array of slot specs.
    #[arg(long)]
    pub slots: PathBuf,
    #[arg(long, default_value = "replace")]
    pub mode: TrackingMode,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub host: Option<IpAddr>,
    #[arg(long)]
    pub port: Option<u16>,
    /// Directory for file-backed sessions; in-memory when absent.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let json_errors = args.iter().any(|a| a == "--json-errors");
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return EXIT_OK;
        }
        Err(e) => {
            let err = AppError::Usage(e.to_string().trim_end().to_string());
            report(&err, json_errors);
            return EXIT_USAGE;
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            report(&e, cli.json_errors);
            e.exit_code()
        }
    }
}

fn report(e: &AppError, json: bool) {
    if json {
        eprintln!("{}", e.to_json());
    } else {
        eprintln!("error: {e}");
    }
}

pub fn run(command: Command) -> Result<(), AppError> {
    match command {
        Command::IngestSgd(a) => ingest(a),
        Command::Augment(a) => augment(a),
        Command::BuildPrompts(a) => build_prompts(a),
        Command::Split(a) => split(a),
        Command::Eval(a) => eval(a),
        Command::Repl(a) => repl(a),
        Command::Serve(a) => serve(a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, AppError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| AppError::io(parent.display(), e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| AppError::io(path.display(), e))
}

fn write_records(records: &[PromptRecord], path: &Path) -> Result<(), AppError> {
    let mut out = create(path)?;
    write_jsonl_to(records, &mut out).map_err(|e| AppError::io(path.display(), e))?;
    out.flush().map_err(|e| AppError::io(path.display(), e))
}

fn ingest(args: IngestArgs) -> Result<(), AppError> {
    let config = args.config.load()?;
    let counter = config.token_counter()?;
    let corpus = load_sgd(&args.input)?;
    let ids = match &args.slot_map {
        Some(path) => SlotIdMap::read(path)?,
        None => SlotIdMap::assign(&corpus.schemas, args.seed)?,
    };
    if let Some(path) = &args.save_slot_map {
        ids.write(path)?;
    }
    let options = RecordOptions {
        budget: config.budget,
        counter: counter.as_ref(),
        split: args.split,
    };
    let report = to_records(&corpus, &ids, &options)?;
    write_records(&report.records, &args.output)?;
    if let Some(path) = &args.flags {
        let mut out = create(path)?;
        for flag in &report.flags {
            let line = serde_json::to_string(flag).expect("flag serializes");
            writeln!(out, "{line}").map_err(|e| AppError::io(path.display(), e))?;
        }
        out.flush().map_err(|e| AppError::io(path.display(), e))?;
    }
    eprintln!(
        "{} dialogues -> {} records, {} flags",
        corpus.dialogues.len(),
        report.records.len(),
        report.flags.len()
    );
    for (kind, n) in count_by(report.flags.iter().map(|f| format!("{:?}", f.kind))) {
        eprintln!("  {kind}: {n}");
    }
    Ok(())
}

fn count_by(items: impl Iterator<Item = String>) -> std::collections::BTreeMap<String, usize> {
    let mut counts = std::collections::BTreeMap::new();
    for item in items {
        *counts.entry(item).or_insert(0) += 1;
    }
    counts
}

fn augment(args: AugmentArgs) -> Result<(), AppError> {
    let config = args.config.load()?;
    let counter = config.token_counter()?;
    let mut pipeline_config = config.augment.clone();
    pipeline_config.budget = config.budget;
    if let Some(seed) = args.seed {
        pipeline_config.seed = seed;
    }
    if args.limit.is_some() {
        pipeline_config.max_records = args.limit;
    }
    let paraphraser = if args.paraphrase {
        Some(config.build_backend(None, counter.as_ref())?)
    } else {
        None
    };
    let mut augmenter = Augmenter::new(pipeline_config, counter.as_ref())?;
    if let Some(p) = &paraphraser {
        augmenter = augmenter.with_paraphraser(p.as_ref());
    }
    let mut records = read_jsonl(&args.input)?;
    let before = records.len();
    for pipeline in &args.pipeline {
        let out = augmenter.run(*pipeline, records)?;
        for (kind, n) in count_by(out.warnings.iter().map(|w| format!("{:?}", w.kind))) {
            eprintln!("{pipeline}: {n} x {kind}");
        }
        records = out.records;
    }
    write_records(&records, &args.output)?;
    eprintln!("{before} records in, {} out", records.len());
    Ok(())
}

fn build_prompts(args: BuildPromptsArgs) -> Result<(), AppError> {
    let config = args.config.load()?;
    let counter = config.token_counter()?;
    let mut records = read_jsonl(&args.input)?;
    for (i, r) in records.iter_mut().enumerate() {
        r.rerender(&config.budget, counter.as_ref())
            .map_err(|e| AppError::Data(format!("record {}: {e}", i + 1)))?;
    }
    let mut out: Box<dyn Write> = match &args.output {
        Some(path) => Box::new(create(path)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let target = args.output.as_ref().map_or("<stdout>".to_string(), |p| p.display().to_string());
    let io = |e| AppError::io(&target, e);
    match args.format {
        PromptFormat::Jsonl => write_jsonl_to(&records, &mut out).map_err(io)?,
        PromptFormat::Text | PromptFormat::Output => {
            let blocks: Vec<String> = records
                .iter()
                .map(|r| match args.format {
                    PromptFormat::Text => r.prompt.clone(),
                    _ => render_output(&r.gold_state(), &r.library),
                })
                .collect();
            out.write_all(blocks.join("\n\n").as_bytes()).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

fn split(args: SplitArgs) -> Result<(), AppError> {
    let records = split_dataset(read_jsonl(&args.input)?, args.ratios, args.seed)?;
    if let Some(path) = &args.output {
        write_records(&records, path)?;
    }
    if let Some(dir) = &args.output_dir {
        for (split, name) in [(Split::Train, "train"), (Split::Val, "val"), (Split::Test, "test")] {
            let part: Vec<PromptRecord> = records.iter().filter(|r| r.split == split).cloned().collect();
            write_records(&part, &dir.join(format!("{name}.jsonl")))?;
        }
    }
    for (split, n) in count_by(records.iter().map(|r| format!("{:?}", r.split))) {
        eprintln!("{split}: {n}");
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), AppError> {
    let config = args.config.load()?;
    let counter = config.token_counter()?;
    let records = read_jsonl(&args.dataset)?;
    let backend = config.build_backend(Some(&records), counter.as_ref())?;
    let mut options = EvalOptions::new(counter.as_ref());
    options.budget = config.budget;
    options.normalize = config.normalize;
    options.matcher = match args.matcher {
        Some(m) => m,
        None => config.matcher()?,
    };
    options.parallelism = args.parallelism.unwrap_or(config.eval.parallelism).max(1);
    options.average_by = args.average_by.unwrap_or(config.eval.average_by);
    options.fail_fast = args.fail_fast;
    let run = run_eval(&records, backend.as_ref(), &options)?;
    print!("{}", run.report.to_table());
    let o = &run.report.overall;
    if let (Some(mean), Some(p50), Some(p95)) = (o.mean_latency_s, o.p50_latency_s, o.p95_latency_s) {
        println!("latency mean {mean:.3}s p50 {p50:.3}s p95 {p95:.3}s");
    }
    if let Some(path) = &args.report {
        let mut out = create(path)?;
        serde_json::to_writer_pretty(&mut out, &run.report).map_err(|e| AppError::io(path.display(), e.into()))?;
        out.flush().map_err(|e| AppError::io(path.display(), e))?;
    }
    Ok(())
}

/// Builds the tracker context from a configuration that must name a backend.
pub fn tracker_context(config: &AppConfig) -> Result<TrackerContext, AppError> {
    let counter: Arc<dyn TokenCounter> = Arc::from(config.token_counter()?);
    let backend = config.build_backend(None, counter.as_ref())?;
    Ok(TrackerContext {
        backend: Arc::from(backend),
        budget: config.budget,
        counter,
        normalize: config.normalize,
    })
}

fn repl(args: ReplArgs) -> Result<(), AppError> {
    let config = args.config.load()?;
    let text = std::fs::read_to_string(&args.slots).map_err(|e| AppError::io(args.slots.display(), e))?;
    let library: SlotLibrary =
        serde_json::from_str(&text).map_err(|e| AppError::Data(format!("{}: {e}", args.slots.display())))?;
    if library.is_empty() {
        return Err(AppError::Data(format!("{}: slot library is empty", args.slots.display())));
    }
    let ctx = tracker_context(&config)?;
    let stdin = std::io::stdin();
    crate::repl::run(library, args.mode, &ctx, stdin.lock(), std::io::stdout().lock())
        .map_err(|e| AppError::io("<stdio>", e))?;
    Ok(())
}

fn serve(args: ServeArgs) -> Result<(), AppError> {
    let mut config = args.config.load()?;
    if let Some(host) = args.host {
        config.service.host = host.to_string();
    }
    if let Some(port) = args.port {
        config.service.port = port;
    }
    if args.store.is_some() {
        config.service.store = args.store;
    }
    let host: IpAddr = config
        .service
        .host
        .parse()
        .map_err(|e| AppError::Usage(format!("service host {:?}: {e}", config.service.host)))?;
    let ctx = tracker_context(&config)?;
    let store: Box<dyn SessionStore> = match &config.service.store {
        Some(dir) => Box::new(FileStore::open(dir)?),
        None => Box::new(MemoryStore::default()),
    };
    let manager = Arc::new(SessionManager::new(store, ctx));
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| AppError::io("tokio runtime", e))?;
    let addr = SocketAddr::new(host, config.service.port);
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| AppError::io(addr, e))?;
        let bound = listener.local_addr().map_err(|e| AppError::io(addr, e))?;
        eprintln!("listening on http://{bound}");
        crate::service::serve(listener, manager, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| AppError::io(bound, e))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn ratios() {
        assert_eq!(parse_ratios("0.8,0.1,0.1").unwrap(), SplitRatios::new(0.8, 0.1, 0.1).unwrap());
        assert!(parse_ratios("0.8,0.1").is_err());
        assert!(parse_ratios("0.8,0.3,0.1").is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_from(["slotfill", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run_from(["slotfill", "eval"]), EXIT_USAGE);
    }
}
