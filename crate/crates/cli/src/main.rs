mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use sgd_dst::carryover::{
    check_pairs, heuristic_relations, mine_relations, parse_pairs, write_pairs, CarryoverGraph,
    DEFAULT_HEURISTIC_THRESHOLD,
};
use sgd_dst::decision_combiner::Combination;
use sgd_dst::evaluator::evaluate;
use sgd_dst::example_builder::{emit_training_examples, to_jsonl, DropoutConfig, DEFAULT_DROPOUT_RATE};
use sgd_dst::nlu_scorers::{
    Gazetteer, LexicalScorer, OracleScorer, RemoteConfig, RemoteScorer, Scorer, DEFAULT_IN_FLIGHT,
};
use sgd_dst::retrieval::RetrievalDepth;
use sgd_dst::sgd_data::{
    parse_dialogue_file, parse_schema_file, seen_partition, serialize_predictions, serialize_schemas,
    serialize_dialogues, to_canonical_bytes, Dialogue, SchemaSet, Seen, ServiceSchema,
};
use sgd_dst::synth::{generate, SynthSpec};
use sgd_dst::tracker::{track_corpus, TrackerConfig, DEFAULT_THRESHOLD};

use config::ConfigFile;

const ENDPOINT_ENV: &str = "SGD_DST_SCORER_URL";

const CONFIG_HELP: &str = "\
Configuration file (--config): one `key = value` per line, `#` comments.
Keys: scorer, endpoint, gazetteer, combination, threshold, retrieval,
carryover, jobs, retries, timeout_secs, max_in_flight, dropout_rate, seed,
theta. Flags override the file, the file overrides defaults.

Exit codes: 0 success, 1 usage, 2 data error, 3 scorer transport error.";

#[derive(Parser, Debug)]
#[command(name = "sgd-dst", version, about = "Schema-guided dialogue state tracking", after_help = CONFIG_HELP)]
struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Track dialogue states and write predictions.
    Track(TrackArgs),
    /// Score predictions against gold states.
    Eval(EvalArgs),
    /// Emit JSONL training examples.
    Labels(LabelArgs),
    /// Carryover relation files.
    #[command(subcommand)]
    Carryover(CarryoverCommand),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScorerKind {
    Lexical,
    Oracle,
    Remote,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CombinationArg {
    ProbAvg,
    Pipeline,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RetrievalArg {
    Off,
    PsuOnly,
    FullHistory,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RelationMode {
    Mined,
    Heuristic,
}

#[derive(Args, Debug)]
struct TrackArgs {
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    dialogues: PathBuf,
    /// Predictions file to write.
    #[arg(long)]
    output: PathBuf,
    /// Per-slot decision trace to write as JSON.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Default: lexical. The oracle reads gold states from --dialogues.
    #[arg(long, value_enum)]
    scorer: Option<ScorerKind>,
    /// Remote scorer base URL.
    #[arg(long, env = ENDPOINT_ENV)]
    endpoint: Option<String>,
    /// `slot<TAB>surface` lines for the lexical scorer.
    #[arg(long)]
    gazetteer: Option<PathBuf>,
    /// Default: prob-avg.
    #[arg(long, value_enum)]
    combination: Option<CombinationArg>,
    /// Default: 0.5.
    #[arg(long)]
    threshold: Option<f64>,
    /// Default: full-history.
    #[arg(long, value_enum)]
    retrieval: Option<RetrievalArg>,
    /// Pair file; enables cross-service carryover.
    #[arg(long)]
    carryover: Option<PathBuf>,
    /// Worker threads; 0 uses all cores. Default: 1.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    /// Schemas of the evaluated services; required with --train-schema.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Training schemas; services found there count as seen. Without it
    /// every service is seen.
    #[arg(long)]
    train_schema: Option<PathBuf>,
    /// JSON report to write.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LabelArgs {
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    dialogues: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Probability of dropping the previous intent. Default: 0.9.
    #[arg(long)]
    dropout_rate: Option<f64>,
    /// Default: 0.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum CarryoverCommand {
    /// Write a relation pair file.
    Build(CarryoverArgs),
}

#[derive(Args, Debug)]
struct CarryoverArgs {
    #[arg(long, value_enum, default_value = "mined")]
    mode: RelationMode,
    /// Corpus to mine; required in mined mode.
    #[arg(long)]
    dialogues: Option<PathBuf>,
    /// Schemas; required in heuristic mode, used to check mined pairs.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Heuristic similarity threshold. Default: 0.5.
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Directory for schema.json, dialogues.json and stats.json.
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long, default_value_t = 500)]
    n_dialogues: usize,
    /// Default: 7.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated service names; default all.
    #[arg(long, value_delimiter = ',')]
    services: Vec<String>,
    #[arg(long, default_value_t = 0.40)]
    cuu_fraction: f64,
    #[arg(long, default_value_t = 0.50)]
    psu_fraction: f64,
    #[arg(long, default_value_t = 0.10)]
    older_fraction: f64,
    #[arg(long, default_value_t = 0.06)]
    cross_service_fraction: f64,
}

enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Transport(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Transport(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Data(e) | Failure::Transport(e) => e,
        }
    }
}

trait OrFail<T> {
    fn usage(self) -> Result<T, Failure>;
    fn data(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrFail<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }

    fn data(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Data(e.into()))
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .data()
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes)
        .with_context(|| format!("writing {}", path.display()))
        .data()
}

fn load_schemas(path: &Path) -> Result<Vec<ServiceSchema>, Failure> {
    parse_schema_file(&read(path)?)
        .with_context(|| format!("in {}", path.display()))
        .data()
}

fn load_dialogues(path: &Path) -> Result<Vec<Dialogue>, Failure> {
    parse_dialogue_file(&read(path)?)
        .with_context(|| format!("in {}", path.display()))
        .data()
}

fn load_corpus(schema: &Path, dialogues: &Path) -> Result<(SchemaSet, Vec<Dialogue>), Failure> {
    let schemas = SchemaSet::new(load_schemas(schema)?);
    let dialogues = load_dialogues(dialogues)?;
    for d in &dialogues {
        d.validate_against(&schemas)
            .with_context(|| format!("in {}", schema.display()))
            .data()?;
    }
    Ok((schemas, dialogues))
}

/// The flag, else the config value parsed as a clap value, else `default`.
fn resolve_enum<T: ValueEnum>(cfg: &ConfigFile, flag: Option<T>, key: &str, default: T) -> Result<T, Failure> {
    if let Some(v) = flag {
        return Ok(v);
    }
    match cfg.raw(key) {
        Some(raw) => T::from_str(raw, true)
            .map_err(|e| Failure::Usage(anyhow!("config key '{key}': {e}"))),
        None => Ok(default),
    }
}

fn build_scorer(
    args: &TrackArgs,
    cfg: &ConfigFile,
    dialogues: &[Dialogue],
) -> Result<Box<dyn Scorer>, Failure> {
    let kind = resolve_enum(cfg, args.scorer, "scorer", ScorerKind::Lexical)?;
    Ok(match kind {
        ScorerKind::Lexical => {
            let gazetteer = cfg.resolve_opt(args.gazetteer.clone(), "gazetteer").usage()?;
            match gazetteer {
                Some(path) => {
                    let text = String::from_utf8(read(&path)?)
                        .with_context(|| format!("{} is not UTF-8", path.display()))
                        .data()?;
                    let g = Gazetteer::parse(&text)
                        .map_err(|e| Failure::Data(anyhow!("in {}: {e}", path.display())))?;
                    Box::new(LexicalScorer::with_gazetteer(g))
                }
                None => Box::new(LexicalScorer::new()),
            }
        }
        ScorerKind::Oracle => Box::new(OracleScorer::from_corpus(dialogues)),
        ScorerKind::Remote => {
            let endpoint = cfg
                .resolve_opt(args.endpoint.clone(), "endpoint")
                .usage()?
                .ok_or_else(|| Failure::Usage(anyhow!("remote scorer needs --endpoint or {ENDPOINT_ENV}")))?;
            let mut rc = RemoteConfig::new(&endpoint);
            rc.retries = cfg.resolve(None, "retries", rc.retries).usage()?;
            rc.timeout = Duration::from_secs(cfg.resolve(None, "timeout_secs", rc.timeout.as_secs()).usage()?);
            rc.max_in_flight = cfg.resolve(None, "max_in_flight", DEFAULT_IN_FLIGHT).usage()?;
            Box::new(RemoteScorer::new(rc))
        }
    })
}

fn cmd_track(args: TrackArgs, cfg: &ConfigFile) -> Result<(), Failure> {
    let (schemas, dialogues) = load_corpus(&args.schema, &args.dialogues)?;
    let scorer = build_scorer(&args, cfg, &dialogues)?;
    let combination = match resolve_enum(cfg, args.combination, "combination", CombinationArg::ProbAvg)? {
        CombinationArg::ProbAvg => Combination::ProbAvg,
        CombinationArg::Pipeline => Combination::Pipeline,
    };
    let retrieval_depth = match resolve_enum(cfg, args.retrieval, "retrieval", RetrievalArg::FullHistory)? {
        RetrievalArg::Off => RetrievalDepth::Off,
        RetrievalArg::PsuOnly => RetrievalDepth::PsuOnly,
        RetrievalArg::FullHistory => RetrievalDepth::FullHistory,
    };
    let threshold = cfg.resolve(args.threshold, "threshold", DEFAULT_THRESHOLD).usage()?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Failure::Usage(anyhow!("threshold {threshold} outside [0, 1]")));
    }
    let carryover = match cfg.resolve_opt(args.carryover.clone(), "carryover").usage()? {
        Some(path) => {
            let text = String::from_utf8(read(&path)?)
                .with_context(|| format!("{} is not UTF-8", path.display()))
                .data()?;
            let pairs = parse_pairs(&text)
                .with_context(|| format!("in {}", path.display()))
                .data()?;
            check_pairs(&pairs, &schemas)
                .map_err(|e| Failure::Data(anyhow!("in {}: {e}", path.display())))?;
            Some(CarryoverGraph::closure(&pairs))
        }
        None => None,
    };
    let config = TrackerConfig {
        threshold,
        combination,
        retrieval_depth,
        carryover,
        jobs: cfg.resolve(args.jobs, "jobs", 1).usage()?,
    };
    let results = track_corpus(&dialogues, &schemas, scorer.as_ref(), &config).map_err(|e| {
        if e.is_transport() {
            Failure::Transport(e.into())
        } else {
            Failure::Data(e.into())
        }
    })?;
    let predictions: Vec<_> = results.iter().map(|r| r.predictions()).collect();
    write(&args.output, &serialize_predictions(&dialogues, &predictions).data()?)?;
    if let Some(path) = &args.trace {
        let value = serde_json::to_value(&results).data()?;
        write(path, &to_canonical_bytes(value))?;
    }
    log::info!("tracked {} dialogues", dialogues.len());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let gold = load_dialogues(&args.gold)?;
    let predicted = load_dialogues(&args.predictions)?;
    let partition: BTreeMap<String, Seen> = match (&args.train_schema, &args.schema) {
        (Some(train), Some(eval)) => seen_partition(&load_schemas(train)?, &load_schemas(eval)?),
        (Some(_), None) => return Err(Failure::Usage(anyhow!("--train-schema needs --schema"))),
        (None, _) => gold
            .iter()
            .flat_map(|d| d.services.iter())
            .map(|s| (s.clone(), Seen::Seen))
            .collect(),
    };
    let predictions = sgd_dst::sgd_data::collect_states(&predicted);
    let report = evaluate::<f64>(&gold, &predictions, &partition).data()?;
    print!("{}", report.to_table());
    if let Some(path) = &args.output {
        write(path, &to_canonical_bytes(report.to_json()))?;
    }
    Ok(())
}

fn cmd_labels(args: LabelArgs, cfg: &ConfigFile) -> Result<(), Failure> {
    let (schemas, dialogues) = load_corpus(&args.schema, &args.dialogues)?;
    let rate = cfg.resolve(args.dropout_rate, "dropout_rate", DEFAULT_DROPOUT_RATE).usage()?;
    let seed = cfg.resolve(args.seed, "seed", 0).usage()?;
    let dropout = DropoutConfig::new(rate, seed).map_err(|e| Failure::Usage(anyhow!(e)))?;
    let examples = emit_training_examples(&dialogues, &schemas, &dropout).data()?;
    write(&args.output, &to_jsonl(&examples))
}

fn cmd_carryover(args: CarryoverArgs, cfg: &ConfigFile) -> Result<(), Failure> {
    let schemas = match &args.schema {
        Some(p) => Some(SchemaSet::new(load_schemas(p)?)),
        None => None,
    };
    let pairs = match args.mode {
        RelationMode::Mined => {
            let path = args
                .dialogues
                .as_ref()
                .ok_or_else(|| Failure::Usage(anyhow!("mined mode needs --dialogues")))?;
            let dialogues = load_dialogues(path)?;
            let pairs = mine_relations(&dialogues);
            if let Some(s) = &schemas {
                check_pairs(&pairs, s).map_err(|e| Failure::Data(anyhow!(e)))?;
            }
            pairs
        }
        RelationMode::Heuristic => {
            let schemas = schemas.ok_or_else(|| Failure::Usage(anyhow!("heuristic mode needs --schema")))?;
            let theta = cfg.resolve(args.theta, "theta", DEFAULT_HEURISTIC_THRESHOLD).usage()?;
            heuristic_relations(&schemas, theta)
        }
    };
    write(&args.output, write_pairs(&pairs).as_bytes())
}

fn cmd_synth(args: SynthArgs, cfg: &ConfigFile) -> Result<(), Failure> {
    let spec = SynthSpec {
        n_dialogues: args.n_dialogues,
        services: args.services,
        cuu_fraction: args.cuu_fraction,
        psu_fraction: args.psu_fraction,
        older_fraction: args.older_fraction,
        cross_service_fraction: args.cross_service_fraction,
        seed: cfg.resolve(args.seed, "seed", SynthSpec::default().seed).usage()?,
    };
    let corpus = generate(&spec).usage()?;
    std::fs::create_dir_all(&args.output_dir)
        .with_context(|| format!("creating {}", args.output_dir.display()))
        .data()?;
    let dir = &args.output_dir;
    write(&dir.join("schema.json"), &serialize_schemas(&corpus.schemas))?;
    write(&dir.join("dialogues.json"), &serialize_dialogues(&corpus.dialogues))?;
    let s = &corpus.stats;
    let stats = json!({
        "non_categorical": s.non_categorical,
        "cuu_fraction": s.cuu_fraction(),
        "psu_fraction": s.psu_fraction(),
        "older_fraction": s.older_fraction(),
        "cross_service_fraction": s.cross_service_fraction(),
        "planted_pairs": s.planted_pairs.iter().map(|(a, b)| format!("{a}\t{b}")).collect::<Vec<_>>(),
    });
    write(&dir.join("stats.json"), &to_canonical_bytes(stats))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = match &cli.config {
        Some(path) => ConfigFile::load(path).usage()?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Track(a) => cmd_track(a, &cfg),
        Command::Eval(a) => cmd_eval(a),
        Command::Labels(a) => cmd_labels(a, &cfg),
        Command::Carryover(CarryoverCommand::Build(a)) => cmd_carryover(a, &cfg),
        Command::Synth(a) => cmd_synth(a, &cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
