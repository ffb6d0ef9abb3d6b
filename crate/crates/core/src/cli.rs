//! Command-line front end.
//!
//! Every subcommand writes data to its declared output path (or standard
//! output) and progress to standard error. Options may also come from a
//! `key=value` file passed with `--config`; explicit flags win.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::embed::{
    all_pairs, infer_embeddings, pairwise_report, project_2d, top_k_similar, write_anomaly_csv,
    write_embeddings_csv, write_projection_csv, write_report_csv, write_similar_csv, EmbedError,
    SimilarityReport,
};
use crate::graph::{
    build_graphs, default_origin, read_snapshot, write_snapshot, FeatureScaler, GraphError,
    IntervalGraph, ProtocolVocab, OTHER_PROTOCOL,
};
use crate::model::{ModelConfig, ModelError};
use crate::synth::{eval_inductive, generate, default_roles, write_inductive_csv, SynthError};
use crate::train::{
    filter_holdout, load_model, save_model, train_with, EpochStats, ModelBundle, TrainConfig,
    TrainError,
};
use crate::zeek::{read_conn_log, write_canonical_tsv, ConnRecord, LogFormat, ParseError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Graph snapshot file extension.
pub const GRAPH_EXT: &str = "ipgr";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Data(_) => EXIT_DATA,
            Self::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) | Self::Data(m) | Self::Numeric(m) => f.write_str(m),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        data(e)
    }
}

impl From<ParseError> for CliError {
    fn from(e: ParseError) -> Self {
        data(e)
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::NonPositiveInterval(_) => CliError::Usage(e.to_string()),
            other => data(other),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => CliError::Usage(e.to_string()),
            other => data(other),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Divergence { .. } => CliError::Numeric(e.to_string()),
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::Model(m) => m.into(),
            other => data(other),
        }
    }
}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::ZeroK => CliError::Usage(e.to_string()),
            other => data(other),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        data(e)
    }
}

#[derive(Parser, Debug)]
#[command(name = "ipembed", version, about = "Inductive IP embeddings from Zeek conn.log traffic")]
struct Cli {
    /// File of `key=value` lines supplying defaults for long options.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a conn.log and write the canonical TSV dump.
    Ingest(IngestArgs),
    /// Aggregate flows into per-interval graph snapshots.
    BuildGraphs(BuildArgs),
    /// Train a model on a directory of graph snapshots.
    Train(TrainArgs),
    /// Write per-IP embeddings for one graph.
    Embed(GraphQueryArgs),
    /// Rank the IPs most similar to one IP in a graph.
    Similar(SimilarArgs),
    /// Pairwise similarity statistics over graphs, or an interval-length sweep.
    Report(ReportArgs),
    /// Similarity of held-out IPs to in-role and out-of-role IPs.
    EvalHoldout(EvalArgs),
    /// Per-IP reconstruction anomaly scores for one graph.
    Anomaly(GraphQueryArgs),
    /// Two-dimensional PCA projection of a graph's embeddings.
    Project(GraphQueryArgs),
    /// Generate synthetic role-based traffic as a canonical conn.log.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct LogInput {
    /// conn.log in Zeek TSV or JSON-lines form.
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// Input format; inferred from the extension when omitted.
    #[arg(long, value_parser = parse_format)]
    format: Option<LogFormat>,
    /// Fail on the first malformed row instead of skipping it.
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[command(flatten)]
    log: LogInput,
    /// Canonical TSV destination; standard output when omitted.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BuildArgs {
    #[command(flatten)]
    log: LogInput,
    /// Interval length in seconds.
    #[arg(long, default_value_t = 600.0)]
    interval: f64,
    /// Interval origin timestamp; the earliest flow floored to an interval
    /// boundary by default.
    #[arg(long)]
    origin: Option<f64>,
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 128)]
    decoder_hidden: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda_ae: f64,
    #[arg(long, default_value_t = 0.01)]
    lambda_nm: f64,
    /// Non-neighbor samples per node for the repulsive term; 0 disables it.
    #[arg(long, default_value_t = 0)]
    negative_samples: usize,
}

#[derive(Args, Debug)]
struct OptimArgs {
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long = "lr", default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Epochs without improvement before stopping; 0 disables.
    #[arg(long, default_value_t = 20)]
    patience: usize,
    #[arg(long, default_value_t = 1e-4)]
    min_delta: f64,
    /// Visit graphs in file order instead of a seeded shuffle.
    #[arg(long)]
    no_shuffle: bool,
    /// IPs whose traffic is removed before training.
    #[arg(long, value_delimiter = ',', value_name = "IP")]
    holdout: Vec<IpAddr>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_name = "DIR")]
    graphs: PathBuf,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    /// Save a checkpoint to `<out>.ckpt` every N epochs; 0 disables.
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
}

#[derive(Args, Debug)]
struct GraphQueryArgs {
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Graph snapshot.
    #[arg(long, value_name = "FILE")]
    graph: PathBuf,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimilarArgs {
    #[command(flatten)]
    query: GraphQueryArgs,
    #[arg(long)]
    ip: IpAddr,
    #[arg(short = 'k', long = "top", default_value_t = 10)]
    k: usize,
}

#[derive(Args, Debug)]
struct PairArgs {
    /// Explicit pairs written `A|B`.
    #[arg(long, value_delimiter = ',', value_parser = parse_pair, value_name = "A|B")]
    pairs: Vec<(IpAddr, IpAddr)>,
    /// Every pair within this set, or every pair across it and `--versus`.
    #[arg(long, value_delimiter = ',', value_name = "IP")]
    group: Vec<IpAddr>,
    #[arg(long, value_delimiter = ',', value_name = "IP")]
    versus: Vec<IpAddr>,
}

impl PairArgs {
    fn resolve(&self) -> CliResult<Vec<(IpAddr, IpAddr)>> {
        let mut pairs = self.pairs.clone();
        if self.versus.is_empty() {
            pairs.extend(all_pairs(&self.group));
        } else {
            for a in &self.group {
                for b in &self.versus {
                    pairs.push((*a, *b));
                }
            }
        }
        if pairs.is_empty() {
            return Err(CliError::Usage(
                "no pairs given: use --pairs, --group or --group with --versus".into(),
            ));
        }
        Ok(pairs)
    }
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Trained model (single-model mode).
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Directory of graph snapshots (single-model mode).
    #[arg(long, value_name = "DIR")]
    graphs: Option<PathBuf>,
    #[command(flatten)]
    pairs: PairArgs,
    /// Report CSV (single-model mode); standard output when omitted.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,

    /// Interval lengths in seconds; switches to sweep mode, which builds,
    /// trains and reports once per length from `--input`.
    #[arg(long, value_delimiter = ',', value_name = "SECONDS")]
    sweep: Vec<f64>,
    /// conn.log for sweep mode.
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    #[arg(long, value_parser = parse_format)]
    format: Option<LogFormat>,
    /// Share of the log's time span used for training in sweep mode.
    #[arg(long, default_value_t = 0.7)]
    train_fraction: f64,
    /// Sweep output directory.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    model_cfg: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Snapshots the model was trained on, checked for holdout leaks.
    #[arg(long, value_name = "DIR")]
    train_graphs: PathBuf,
    #[arg(long, value_name = "DIR")]
    test_graphs: PathBuf,
    #[arg(long, value_delimiter = ',', value_name = "IP", required = true)]
    holdout: Vec<IpAddr>,
    #[arg(long, value_delimiter = ',', value_name = "IP", required = true)]
    in_role: Vec<IpAddr>,
    #[arg(long, value_delimiter = ',', value_name = "IP", required = true)]
    out_role: Vec<IpAddr>,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Simulated seconds.
    #[arg(long, default_value_t = 7200.0)]
    duration: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn parse_format(s: &str) -> Result<LogFormat, String> {
    s.parse()
}

fn parse_pair(s: &str) -> Result<(IpAddr, IpAddr), String> {
    let (a, b) = s.split_once('|').ok_or_else(|| format!("pair {s:?} is not of the form A|B"))?;
    let ip = |t: &str| t.trim().parse::<IpAddr>().map_err(|e| format!("{t:?}: {e}"));
    Ok((ip(a)?, ip(b)?))
}

/// Reads `key=value` lines; blank lines and `#` comments are ignored.
fn read_config(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("config {} line {}: expected key=value", path.display(), n + 1))
        })?;
        out.push((k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(out)
}

/// Appends config-file options that the command line does not already set.
fn merge_config(argv: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let strs: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let config = strs.iter().enumerate().find_map(|(i, a)| {
        if a == "--config" {
            strs.get(i + 1).cloned()
        } else {
            a.strip_prefix("--config=").map(str::to_string)
        }
    });
    let Some(config) = config else {
        return Ok(argv);
    };
    let Some(sub_name) = strs.iter().skip(1).find(|a| !a.starts_with('-') && Cli::command().find_subcommand(a.as_str()).is_some()) else {
        return Ok(argv);
    };
    let cmd = Cli::command();
    let sub = cmd.find_subcommand(sub_name).expect("subcommand exists");
    let given: BTreeSet<String> = strs
        .iter()
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();
    let mut out = argv;
    for (key, value) in read_config(Path::new(&config))? {
        if given.contains(&key) || key == "config" {
            continue;
        }
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| CliError::Usage(format!("config key {key:?} is not an option of {sub_name}")))?;
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value.as_str() {
                "true" | "1" | "yes" => out.push(format!("--{key}").into()),
                "false" | "0" | "no" => {}
                _ => return Err(CliError::Usage(format!("config key {key:?} expects true or false"))),
            }
        } else {
            out.push(format!("--{key}={value}").into());
        }
    }
    Ok(out)
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv = match merge_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let matches = match Cli::command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_USAGE;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::BuildGraphs(a) => build(a),
        Command::Train(a) => train_cmd(a),
        Command::Embed(a) => embed_cmd(a),
        Command::Similar(a) => similar(a),
        Command::Report(a) => report(a),
        Command::EvalHoldout(a) => eval_holdout(a),
        Command::Anomaly(a) => anomaly(a),
        Command::Project(a) => project(a),
        Command::Synth(a) => synth(a),
    }
}

fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{}: no such file", path.display())))
    }
}

fn require_dir(path: &Path) -> CliResult<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{}: no such directory", path.display())))
    }
}

fn require_interval(len: f64) -> CliResult<()> {
    if len > 0.0 && len.is_finite() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("interval length must be positive, got {len}")))
    }
}

/// Opens `path` for writing, or standard output when absent.
fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| {
            CliError::Data(format!("{}: {e}", p.display()))
        })?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn finish(mut out: Box<dyn Write>) -> CliResult<()> {
    out.flush()?;
    Ok(())
}

fn format_for(path: &Path, explicit: Option<LogFormat>) -> LogFormat {
    explicit.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
        Some("json" | "jsonl" | "ndjson") => LogFormat::JsonLines,
        _ => LogFormat::Tsv,
    })
}

fn load_records(path: &Path, format: Option<LogFormat>, strict: bool) -> CliResult<Vec<ConnRecord>> {
    require_file(path)?;
    let file = File::open(path)?;
    let (records, stats) = read_conn_log(BufReader::new(file), format_for(path, format), strict)?;
    eprintln!(
        "{}: {} rows read, {} records, {} skipped",
        path.display(),
        stats.read,
        stats.emitted,
        stats.skipped
    );
    Ok(records)
}

fn ingest(a: IngestArgs) -> CliResult<()> {
    let records = load_records(&a.log.input, a.log.format, a.log.strict)?;
    let out = output(a.out.as_deref())?;
    let mut out = out;
    write_canonical_tsv(&mut out, &records)?;
    finish(out)
}

fn graph_file_name(interval: i64) -> String {
    format!("interval_{interval:08}.{GRAPH_EXT}")
}

fn build(a: BuildArgs) -> CliResult<()> {
    require_interval(a.interval)?;
    require_file(&a.log.input)?;
    let records = load_records(&a.log.input, a.log.format, a.log.strict)?;
    if records.is_empty() {
        return Err(CliError::Data("no records to build graphs from".into()));
    }
    let origin = match a.origin {
        Some(o) => o,
        None => default_origin(&records, a.interval).expect("records are non-empty"),
    };
    let vocab = ProtocolVocab::fit_records(&records)?;
    let graphs = build_graphs(&records, a.interval, origin, &vocab)?;
    fs::create_dir_all(&a.out_dir)?;
    for g in &graphs {
        let path = a.out_dir.join(graph_file_name(g.interval));
        let mut out = BufWriter::new(File::create(&path)?);
        write_snapshot(&mut out, g)?;
        out.flush()?;
    }
    eprintln!("wrote {} graphs to {}", graphs.len(), a.out_dir.display());
    Ok(())
}

fn load_graph(path: &Path) -> CliResult<IntervalGraph> {
    require_file(path)?;
    read_snapshot(BufReader::new(File::open(path)?))
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_graph_dir(dir: &Path) -> CliResult<Vec<IntervalGraph>> {
    require_dir(dir)?;
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some(GRAPH_EXT))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Data(format!("{}: no .{GRAPH_EXT} graphs", dir.display())));
    }
    paths.iter().map(|p| load_graph(p)).collect()
}

/// Protocols carried by at least one edge of `graphs`.
fn protocols_present(graphs: &[IntervalGraph]) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for g in graphs {
        for (k, token) in g.vocab.tokens().iter().enumerate() {
            if token != OTHER_PROTOCOL && g.raw.iter_rows().any(|row| row[k] != 0.0) {
                out.insert(token.clone());
            }
        }
    }
    out
}

fn model_config(vocab: &ProtocolVocab, m: &ModelArgs) -> ModelConfig {
    ModelConfig {
        hidden: m.hidden,
        layers: m.layers,
        decoder_hidden: m.decoder_hidden,
        lambda_ae: m.lambda_ae,
        lambda_nm: m.lambda_nm,
        negative_samples: m.negative_samples,
        ..ModelConfig::for_vocab(vocab)
    }
}

fn train_config(o: &OptimArgs) -> TrainConfig {
    TrainConfig {
        epochs: o.epochs,
        learning_rate: o.learning_rate,
        seed: o.seed,
        holdout: o.holdout.iter().copied().collect(),
        shuffle: !o.no_shuffle,
        patience: o.patience,
        min_delta: o.min_delta,
        ..TrainConfig::default()
    }
}

/// Applies the holdout, fits vocabulary and scaler on what remains, trains,
/// and returns the bundle.
fn fit_bundle(
    graphs: &[IntervalGraph],
    m: &ModelArgs,
    o: &OptimArgs,
    checkpoint_every: usize,
    checkpoint: Option<&Path>,
) -> CliResult<ModelBundle> {
    let tcfg = TrainConfig {
        checkpoint_every,
        ..train_config(o)
    };
    tcfg.validate()?;
    let filtered: Vec<IntervalGraph> = graphs
        .iter()
        .map(|g| g.without_ips(&tcfg.holdout))
        .filter(|g| g.num_edges() > 0)
        .collect();
    if filtered.is_empty() {
        return Err(CliError::Data("no training edges remain after the holdout".into()));
    }
    let mut tokens: Vec<String> = protocols_present(&filtered).into_iter().collect();
    tokens.push(OTHER_PROTOCOL.to_string());
    let vocab = ProtocolVocab::from_tokens(tokens)?;
    let mut prepared = filtered
        .iter()
        .map(|g| g.with_vocab(&vocab))
        .collect::<Result<Vec<_>, _>>()?;
    let scaler = FeatureScaler::fit(&prepared)?;
    for g in &mut prepared {
        scaler.normalize(g)?;
    }
    let mcfg = model_config(&vocab, m);
    mcfg.validate()?;
    let holdout: Vec<IpAddr> = tcfg.holdout.iter().copied().collect();
    eprintln!("{}", EpochStats::LOG_HEADER);
    let (model, history) = train_with(&prepared, &mcfg, &tcfg, |stats, model, ckpt| {
        eprintln!("{}", stats.log_line());
        if let (true, Some(path)) = (ckpt, checkpoint) {
            let bundle = ModelBundle::new(model.clone(), vocab.clone(), scaler.clone(), holdout.clone())?;
            save_model(path, &bundle)?;
        }
        Ok(())
    })?;
    eprintln!(
        "trained {} epochs, best epoch {}{}",
        history.epochs.len(),
        history.best_epoch,
        if history.stopped_early { " (early stop)" } else { "" }
    );
    Ok(ModelBundle::new(model, vocab, scaler, holdout)?)
}

fn train_cmd(a: TrainArgs) -> CliResult<()> {
    let graphs = load_graph_dir(&a.graphs)?;
    let mut ckpt = a.out.clone().into_os_string();
    ckpt.push(".ckpt");
    let ckpt = PathBuf::from(ckpt);
    let bundle = fit_bundle(&graphs, &a.model, &a.optim, a.checkpoint_every, Some(&ckpt))?;
    save_model(&a.out, &bundle)?;
    eprintln!("saved model to {}", a.out.display());
    Ok(())
}

fn load_bundle(path: &Path) -> CliResult<ModelBundle> {
    require_file(path)?;
    load_model(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Model plus one graph prepared against it.
fn query_inputs(q: &GraphQueryArgs) -> CliResult<(ModelBundle, IntervalGraph)> {
    require_file(&q.model)?;
    require_file(&q.graph)?;
    let bundle = load_bundle(&q.model)?;
    let graph = bundle.prepare(&load_graph(&q.graph)?)?;
    Ok((bundle, graph))
}

fn embed_cmd(a: GraphQueryArgs) -> CliResult<()> {
    let (bundle, graph) = query_inputs(&a)?;
    let set = infer_embeddings(&bundle.model, &graph)?;
    let mut out = output(a.out.as_deref())?;
    write_embeddings_csv(&mut out, &set)?;
    finish(out)
}

fn similar(a: SimilarArgs) -> CliResult<()> {
    if a.k == 0 {
        return Err(CliError::Usage("-k must be at least 1".into()));
    }
    let (bundle, graph) = query_inputs(&a.query)?;
    let set = infer_embeddings(&bundle.model, &graph)?;
    let ranked = top_k_similar(&set, &a.ip, a.k)?;
    let mut out = output(a.query.out.as_deref())?;
    write_similar_csv(&mut out, &ranked)?;
    finish(out)
}

fn anomaly(a: GraphQueryArgs) -> CliResult<()> {
    let (bundle, graph) = query_inputs(&a)?;
    let set = infer_embeddings(&bundle.model, &graph)?;
    let mut out = output(a.out.as_deref())?;
    write_anomaly_csv(&mut out, &set)?;
    finish(out)
}

fn project(a: GraphQueryArgs) -> CliResult<()> {
    let (bundle, graph) = query_inputs(&a)?;
    let set = infer_embeddings(&bundle.model, &graph)?;
    let coords = project_2d(&set)?;
    let mut out = output(a.out.as_deref())?;
    write_projection_csv(&mut out, &coords)?;
    finish(out)
}

fn report(a: ReportArgs) -> CliResult<()> {
    let pairs = a.pairs.resolve()?;
    if !a.sweep.is_empty() {
        return sweep(&a, &pairs);
    }
    let (Some(model), Some(graphs)) = (&a.model, &a.graphs) else {
        return Err(CliError::Usage(
            "report needs --model and --graphs, or --sweep with --input and --out-dir".into(),
        ));
    };
    require_file(model)?;
    require_dir(graphs)?;
    let bundle = load_bundle(model)?;
    let graphs = load_graph_dir(graphs)?
        .iter()
        .map(|g| bundle.prepare(g))
        .collect::<Result<Vec<_>, _>>()?;
    let report = pairwise_report(&bundle.model, &graphs, &pairs)?;
    summarize(&report);
    let mut out = output(a.out.as_deref())?;
    write_report_csv(&mut out, &report)?;
    finish(out)
}

fn summarize(report: &SimilarityReport) {
    let (pooled, count) = report.pooled();
    match pooled {
        Some((m, s)) => eprintln!(
            "similarity {m:.6} ± {s:.6} over {count} values in {} of {} graphs",
            report.graphs_with_pairs(),
            report.graphs
        ),
        None => eprintln!("no pair co-occurs in any of {} graphs", report.graphs),
    }
}

/// One sweep row: interval length, report and test graph count, or the
/// failure message.
type SweepRow = (f64, Result<(SimilarityReport, usize), String>);

fn sweep(a: &ReportArgs, pairs: &[(IpAddr, IpAddr)]) -> CliResult<()> {
    let (Some(input), Some(out_dir)) = (&a.input, &a.out_dir) else {
        return Err(CliError::Usage("--sweep needs --input and --out-dir".into()));
    };
    for &len in &a.sweep {
        require_interval(len)?;
    }
    if !(a.train_fraction > 0.0 && a.train_fraction < 1.0) {
        return Err(CliError::Usage("--train-fraction must lie in (0, 1)".into()));
    }
    require_file(input)?;
    let records = load_records(input, a.format, false)?;
    if records.is_empty() {
        return Err(CliError::Data("no records in sweep input".into()));
    }
    fs::create_dir_all(out_dir)?;
    let mut rows: Vec<SweepRow> = Vec::new();
    for &len in &a.sweep {
        eprintln!("sweep: interval length {len} s");
        let result = sweep_one(a, &records, len, pairs).map_err(|e| e.to_string());
        match &result {
            Ok((report, _)) => {
                let path = out_dir.join(format!("report_{len}.csv"));
                let mut out = output(Some(&path))?;
                write_report_csv(&mut out, report)?;
                finish(out)?;
            }
            Err(msg) => eprintln!("sweep: interval length {len} failed: {msg}"),
        }
        rows.push((len, result));
    }
    let mut out = output(Some(&out_dir.join("summary.csv")))?;
    writeln!(out, "interval_length,mean,std,count,test_graphs,status")?;
    for (len, row) in &rows {
        match row {
            Ok((report, graphs)) => {
                let (pooled, count) = report.pooled();
                let (m, s) = pooled.map(|(m, s)| (m.to_string(), s.to_string())).unwrap_or_default();
                writeln!(out, "{len},{m},{s},{count},{graphs},OK")?;
            }
            Err(_) => writeln!(out, "{len},,,0,0,FAILED")?,
        }
    }
    finish(out)
}

fn sweep_one(
    a: &ReportArgs,
    records: &[ConnRecord],
    len: f64,
    pairs: &[(IpAddr, IpAddr)],
) -> CliResult<(SimilarityReport, usize)> {
    let origin = default_origin(records, len).expect("records are non-empty");
    let last = records.iter().map(|r| r.ts).fold(f64::MIN, f64::max);
    let intervals = ((last - origin) / len).floor() as usize + 1;
    let train_intervals = (intervals as f64 * a.train_fraction).floor() as usize;
    if train_intervals == 0 || train_intervals >= intervals {
        return Err(CliError::Data(format!(
            "{intervals} intervals of {len} s cannot be split into train and test windows"
        )));
    }
    let split = origin + train_intervals as f64 * len;
    let (train_part, test_part): (Vec<ConnRecord>, Vec<ConnRecord>) =
        records.iter().cloned().partition(|r| r.ts < split);
    let holdout: BTreeSet<IpAddr> = a.optim.holdout.iter().copied().collect();
    let train_part = filter_holdout(&train_part, &holdout);
    let vocab = ProtocolVocab::fit_records(&train_part)?;
    let train_graphs = build_graphs(&train_part, len, origin, &vocab)?;
    let test_graphs = build_graphs(&test_part, len, origin, &vocab)?;
    let bundle = fit_bundle(&train_graphs, &a.model_cfg, &a.optim, 0, None)?;
    let test = test_graphs
        .iter()
        .map(|g| bundle.prepare(g))
        .collect::<Result<Vec<_>, _>>()?;
    let report = pairwise_report(&bundle.model, &test, pairs)?;
    summarize(&report);
    Ok((report, test.len()))
}

fn eval_holdout(a: EvalArgs) -> CliResult<()> {
    require_file(&a.model)?;
    require_dir(&a.train_graphs)?;
    require_dir(&a.test_graphs)?;
    let bundle = load_bundle(&a.model)?;
    let prep = |dir: &Path| -> CliResult<Vec<IntervalGraph>> {
        load_graph_dir(dir)?
            .iter()
            .map(|g| bundle.prepare(g).map_err(CliError::from))
            .collect()
    };
    let hold: BTreeSet<IpAddr> = bundle.holdout.iter().copied().collect();
    let train = prep(&a.train_graphs)?
        .iter()
        .map(|g| g.without_ips(&hold))
        .collect::<Vec<_>>();
    let test = prep(&a.test_graphs)?;
    let result = eval_inductive(&bundle.model, &train, &test, &a.holdout, &a.in_role, &a.out_role)?;
    if let (Some((i, _)), Some((m, _))) = (result.in_role_mean_std(), result.margin_mean_std()) {
        eprintln!(
            "in-role similarity {i:.6}, margin {m:.6} over {} graphs",
            result.count()
        );
    }
    let mut out = output(a.out.as_deref())?;
    write_inductive_csv(&mut out, &result)?;
    finish(out)
}

fn synth(a: SynthArgs) -> CliResult<()> {
    if !(a.duration > 0.0 && a.duration.is_finite()) {
        return Err(CliError::Usage("--duration must be positive".into()));
    }
    let records = generate(&default_roles(), a.duration, a.seed)?;
    eprintln!("generated {} flows", records.len());
    let mut out = output(a.out.as_deref())?;
    write_canonical_tsv(&mut out, &records)?;
    finish(out)
}
