//! Command-line front end. Each subcommand reads files, calls the library,
//! and writes its outputs plus a `<output>.manifest.json` next to each one.
//!
//! Default input and output paths live in the output directory (`--out-dir`,
//! or `DAYEMBED_OUT_DIR`, or the working directory), so the subcommands chain
//! without naming files: `synth`, `daystrings`, `train`, `embed`, `sweep-k`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use chrono::NaiveDate;
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::analytics::{self, EmbeddingRecord, EmbeddingStore, Query};
use crate::cluster::{self, KMeansOptions};
use crate::daystring::{self, DayString, DayStringRecord, Vocabulary};
use crate::encoder::{self, EncoderConfig, Precision};
use crate::ingest::{self, ValidationConfig};
use crate::seed;
use crate::synth::{self, CohortConfig, DaysPerParticipant};
use crate::trainer::{self, NegativeSampling, TrainConfig, TrainingCorpus};
use crate::tsne::{self, LearningRate, TsneConfig};

pub const OUT_DIR_ENV: &str = "DAYEMBED_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "dayembed", version, about = "Day-string embeddings of in-home activity")]
pub struct Cli {
    /// Seed for every random choice in the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// File of `key = value` lines applied as `--key value` unless given on the command line.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for default inputs and outputs [env: DAYEMBED_OUT_DIR].
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic cohort (events, labels, ground truth).
    Synth(SynthArgs),
    /// Validate an event log and summarize its days.
    Ingest(IngestArgs),
    /// Aggregate events into day strings.
    Daystrings(DaystringsArgs),
    /// Train the encoder with the triplet objective.
    Train(TrainArgs),
    /// Encode a day-string corpus into an embedding store.
    Embed(EmbedArgs),
    /// k-means on standardized embeddings for a single k.
    Cluster(ClusterArgs),
    /// k-means for a range of k, choosing k by silhouette.
    SweepK(SweepArgs),
    /// Most similar days to a query day.
    Search(SearchArgs),
    /// Day-by-day similarity matrices per participant.
    Similarity(SimilarityArgs),
    /// Similarity of labelled days within participants.
    LabelSim(LabelSimArgs),
    /// Per-date cluster proportions.
    Proportions(ProportionsArgs),
    /// 2-D t-SNE projection of the embeddings.
    Tsne(TsneArgs),
    /// Random sample of day strings from one cluster.
    InspectCluster(InspectArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Ingest(_) => "ingest",
            Command::Daystrings(_) => "daystrings",
            Command::Train(_) => "train",
            Command::Embed(_) => "embed",
            Command::Cluster(_) => "cluster",
            Command::SweepK(_) => "sweep-k",
            Command::Search(_) => "search",
            Command::Similarity(_) => "similarity",
            Command::LabelSim(_) => "label-sim",
            Command::Proportions(_) => "proportions",
            Command::Tsne(_) => "tsne",
            Command::InspectCluster(_) => "inspect-cluster",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    TwoRegime,
    PaperScale,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = Preset::TwoRegime)]
    pub preset: Preset,
    #[arg(long)]
    pub participants: Option<usize>,
    /// Fixed number of days per participant.
    #[arg(long)]
    pub days: Option<usize>,
    #[arg(long)]
    pub switch_probability: Option<f64>,
    #[arg(long)]
    pub label_rate: Option<f64>,
    #[arg(long)]
    pub positive_bathroom_factor: Option<f64>,
    #[arg(long)]
    pub events_out: Option<PathBuf>,
    #[arg(long)]
    pub labels_out: Option<PathBuf>,
    #[arg(long)]
    pub truth_out: Option<PathBuf>,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct IngestArgs {
    #[arg(long)]
    pub events: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Comma-separated location names (default: the standard home layout).
    #[arg(long, value_delimiter = ',')]
    pub locations: Option<Vec<String>>,
    /// Fail when validation finds anything.
    #[arg(long)]
    pub strict: bool,
    #[arg(long)]
    pub days_out: Option<PathBuf>,
    #[arg(long)]
    pub report_out: Option<PathBuf>,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct DaystringsArgs {
    #[arg(long)]
    pub events: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub locations: Option<Vec<String>>,
    /// Include days without events (all `Nowhere`) between each participant's first and last day.
    #[arg(long)]
    pub dense: bool,
    #[arg(long, default_value_t = daystring::WINDOW_MINUTES)]
    pub window_minutes: u32,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeArg {
    Day,
    Participant,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DtypeArg {
    F32,
    F64,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub daystrings: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub locations: Option<Vec<String>>,
    #[arg(long)]
    pub epochs: usize,
    /// Use the published batch size, learning rate, weight decay, and warm-up.
    #[arg(long)]
    pub paper_mode: bool,
    #[arg(long)]
    pub triplets_per_epoch: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    #[arg(long)]
    pub total_steps: Option<usize>,
    #[arg(long, value_enum)]
    pub negative_sampling: Option<NegativeArg>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub n_layers: Option<usize>,
    #[arg(long)]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    /// Skip L2 normalization of the pooled output.
    #[arg(long)]
    pub no_normalize: bool,
    /// Word-vector text file used to initialize token embeddings.
    #[arg(long)]
    pub pretrained_embeddings: Option<PathBuf>,
    /// Continue from an existing checkpoint.
    #[arg(long)]
    pub init_checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DtypeArg::F64)]
    pub checkpoint_dtype: DtypeArg,
    /// Final checkpoint path; per-epoch checkpoints go beside it.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    #[arg(long)]
    pub history_out: Option<PathBuf>,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct EmbedArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub daystrings: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub locations: Option<Vec<String>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct KMeansArgs {
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    #[arg(long, default_value_t = 300)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
}

impl KMeansArgs {
    fn options(&self) -> KMeansOptions {
        KMeansOptions { restarts: self.restarts, max_iter: self.max_iter, tol: self.tol }
    }
}

#[derive(Debug, clap::Args, Serialize)]
pub struct ClusterArgs {
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[command(flatten)]
    pub kmeans: KMeansArgs,
    #[arg(long)]
    pub assignments_out: Option<PathBuf>,
    #[arg(long)]
    pub model_out: Option<PathBuf>,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = *cluster::DEFAULT_K_RANGE.start())]
    pub k_min: usize,
    #[arg(long, default_value_t = *cluster::DEFAULT_K_RANGE.end())]
    pub k_max: usize,
    #[command(flatten)]
    pub kmeans: KMeansArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Assignments of the chosen k.
    #[arg(long)]
    pub assignments_out: Option<PathBuf>,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct SearchArgs {
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub participant: String,
    #[arg(long)]
    pub date: NaiveDate,
    #[arg(long, default_value_t = analytics::DEFAULT_TOP_K)]
    pub top_k: usize,
    /// Allow the query day itself in the results.
    #[arg(long)]
    pub include_self: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct SimilarityArgs {
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Restrict to one participant (default: every participant with two or more strided days).
    #[arg(long)]
    pub participant: Option<String>,
    #[arg(long, default_value_t = analytics::DEFAULT_STRIDE)]
    pub stride: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct LabelSimArgs {
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Summary JSON; a per-participant CSV is written with the same stem.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct ProportionsArgs {
    #[arg(long)]
    pub assignments: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct TsneArgs {
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    pub n_iter: usize,
    /// Fixed learning rate (default: number of points / 48).
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, default_value_t = 12.0)]
    pub early_exaggeration: f64,
    #[arg(long, default_value_t = 250)]
    pub exaggeration_iters: usize,
    #[arg(long)]
    pub no_standardize: bool,
    /// Project a uniform random subset of at most this many days.
    #[arg(long)]
    pub max_days: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub kl_out: Option<PathBuf>,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct InspectArgs {
    #[arg(long)]
    pub assignments: Option<PathBuf>,
    #[arg(long)]
    pub daystrings: Option<PathBuf>,
    #[arg(long)]
    pub cluster: usize,
    #[arg(long, default_value_t = analytics::DEFAULT_INSPECT_SAMPLE)]
    pub n: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Provenance written beside every output file.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    /// SHA-256 of each input file.
    pub inputs: BTreeMap<String, String>,
    pub seed: u64,
    pub outputs: Vec<String>,
    pub version: String,
}

struct Run {
    out_dir: PathBuf,
    seed: u64,
    subcommand: &'static str,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn input(&mut self, given: &Option<PathBuf>, default: &str) -> anyhow::Result<PathBuf> {
        let path = given.clone().unwrap_or_else(|| self.out_dir.join(default));
        let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.insert(path.display().to_string(), seed::sha256_hex(&bytes));
        Ok(path)
    }

    fn output(&mut self, given: &Option<PathBuf>, default: &str) -> anyhow::Result<PathBuf> {
        let path = given.clone().unwrap_or_else(|| self.out_dir.join(default));
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        self.outputs.push(path.clone());
        Ok(path)
    }

    fn finish(self) -> anyhow::Result<()> {
        let manifest = RunManifest {
            subcommand: self.subcommand.to_string(),
            config: self.config,
            inputs: self.inputs,
            seed: self.seed,
            outputs: self.outputs.iter().map(|p| p.display().to_string()).collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        for out in &self.outputs {
            let path = manifest_path(out);
            fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(OsString::from).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn vocabulary(locations: &Option<Vec<String>>) -> anyhow::Result<Vocabulary> {
    Ok(match locations {
        Some(l) => Vocabulary::new(l.iter().map(|s| s.trim().to_string()))?,
        None => Vocabulary::default(),
    })
}

fn read_store(path: &Path) -> anyhow::Result<EmbeddingStore> {
    EmbeddingStore::read_jsonl(open(path)?).with_context(|| format!("reading embeddings {}", path.display()))
}

/// Splices `--key value` pairs from the `--config` file into `args`, skipping
/// keys already present. Boolean flags take `true`/`false`.
pub fn apply_config_file(args: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let strings: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let config_path = strings.iter().enumerate().find_map(|(i, a)| {
        if a == "--config" {
            strings.get(i + 1).cloned()
        } else {
            a.strip_prefix("--config=").map(str::to_string)
        }
    });
    let Some(config_path) = config_path else { return Ok(args) };
    let text = fs::read_to_string(&config_path).with_context(|| format!("reading config {config_path}"))?;

    let root = Cli::command();
    let sub = strings.iter().skip(1).find_map(|a| root.find_subcommand(a)).cloned();
    let lookup = |long: &str| -> Option<clap::Arg> {
        let in_cmd = |c: &clap::Command| c.get_arguments().find(|a| a.get_long() == Some(long)).cloned();
        sub.as_ref().and_then(in_cmd).or_else(|| in_cmd(&root))
    };

    let mut out = args;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{config_path}:{}: expected key = value", n + 1))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let flag = format!("--{key}");
        if strings.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}="))) {
            continue;
        }
        let arg = lookup(&key).ok_or_else(|| anyhow!("{config_path}:{}: unknown key {key}", n + 1))?;
        if arg.get_action().takes_values() {
            out.push(flag.into());
            out.push(value.into());
        } else {
            match value {
                "true" => out.push(flag.into()),
                "false" => {}
                _ => bail!("{config_path}:{}: {key} takes true or false", n + 1),
            }
        }
    }
    Ok(out)
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run_with<I, T>(args: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args = apply_config_file(args.into_iter().map(Into::into).collect())?;
    let cli = Cli::try_parse_from(args)?;
    execute(cli)
}

/// Entry point for the binary: usage errors exit 2, other failures 1.
pub fn main() -> ExitCode {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let args = match apply_config_file(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

pub fn execute(cli: Cli) -> anyhow::Result<()> {
    let out_dir = cli
        .out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut run = Run {
        out_dir,
        seed: cli.seed,
        subcommand: cli.command.name(),
        config: serde_json::to_value(&cli.command)?,
        inputs: BTreeMap::new(),
        outputs: Vec::new(),
    };
    let seed = cli.seed;
    match &cli.command {
        Command::Synth(a) => synth_cmd(&mut run, a, seed)?,
        Command::Ingest(a) => ingest_cmd(&mut run, a)?,
        Command::Daystrings(a) => daystrings_cmd(&mut run, a, seed)?,
        Command::Train(a) => train_cmd(&mut run, a, seed)?,
        Command::Embed(a) => embed_cmd(&mut run, a)?,
        Command::Cluster(a) => cluster_cmd(&mut run, a, seed)?,
        Command::SweepK(a) => sweep_cmd(&mut run, a, seed)?,
        Command::Search(a) => search_cmd(&mut run, a)?,
        Command::Similarity(a) => similarity_cmd(&mut run, a)?,
        Command::LabelSim(a) => label_sim_cmd(&mut run, a)?,
        Command::Proportions(a) => proportions_cmd(&mut run, a)?,
        Command::Tsne(a) => tsne_cmd(&mut run, a, seed)?,
        Command::InspectCluster(a) => inspect_cmd(&mut run, a, seed)?,
    }
    run.finish()
}

fn synth_cmd(run: &mut Run, a: &SynthArgs, seed: u64) -> anyhow::Result<()> {
    let mut cfg = match a.preset {
        Preset::TwoRegime => CohortConfig::two_regime(seed),
        Preset::PaperScale => CohortConfig::paper_scale(seed),
    };
    if let Some(n) = a.participants {
        cfg.n_participants = n;
    }
    if let Some(d) = a.days {
        cfg.days = DaysPerParticipant::Fixed(d);
    }
    if let Some(p) = a.switch_probability {
        cfg.switch_probability = p;
    }
    if let Some(p) = a.label_rate {
        cfg.label_rate = p;
    }
    if let Some(f) = a.positive_bathroom_factor {
        cfg.positive_bathroom_factor = f;
    }
    run.config = json!({ "args": a, "cohort": cfg });
    let cohort = synth::generate_cohort(&cfg)?;
    let events = run.output(&a.events_out, "events.csv")?;
    ingest::write_events(create(&events)?, &cohort.events)?;
    let labels = run.output(&a.labels_out, "labels.csv")?;
    ingest::write_labels(create(&labels)?, &cohort.labels)?;
    let truth = run.output(&a.truth_out, "truth.jsonl")?;
    synth::write_manifest(create(&truth)?, &cohort.manifest)?;
    log::info!("{} events over {} days", cohort.events.len(), cohort.manifest.len());
    Ok(())
}

fn ingest_cmd(run: &mut Run, a: &IngestArgs) -> anyhow::Result<()> {
    let events_path = run.input(&a.events, "events.csv")?;
    let events = ingest::parse_events(open(&events_path)?).with_context(|| format!("parsing {}", events_path.display()))?;
    let vocab = vocabulary(&a.locations)?;
    let report = ingest::validate_events(&events, &ValidationConfig { vocabulary: vocab, ..Default::default() });
    let labels = match &a.labels {
        Some(_) => {
            let p = run.input(&a.labels, "labels.csv")?;
            Some(ingest::parse_labels(open(&p)?).with_context(|| format!("parsing {}", p.display()))?)
        }
        None => None,
    };
    if a.strict && !report.is_clean() {
        bail!("validation found {} problems: {report:?}", report.findings());
    }
    let days = ingest::group_days(&events);
    let days_path = run.output(&a.days_out, "days.csv")?;
    let mut wtr = csv::Writer::from_writer(create(&days_path)?);
    wtr.write_record(["participant_id", "date", "events"])?;
    for d in &days {
        wtr.write_record([d.participant_id.clone(), d.date.to_string(), d.events.len().to_string()])?;
    }
    wtr.flush()?;
    let report_path = run.output(&a.report_out, "validation.json")?;
    let body = json!({
        "validation": report,
        "days": days.len(),
        "participants": days.iter().map(|d| &d.participant_id).collect::<std::collections::BTreeSet<_>>().len(),
        "labels": labels.as_ref().map(|l| l.len()),
    });
    serde_json::to_writer_pretty(create(&report_path)?, &body)?;
    Ok(())
}

fn daystrings_cmd(run: &mut Run, a: &DaystringsArgs, seed: u64) -> anyhow::Result<()> {
    let events_path = run.input(&a.events, "events.csv")?;
    let events = ingest::parse_events(open(&events_path)?).with_context(|| format!("parsing {}", events_path.display()))?;
    let vocab = vocabulary(&a.locations)?;
    let mut days = ingest::group_days(&events);
    if a.dense {
        days = ingest::dense_calendar(days);
    }
    let seqs = daystring::aggregate_days(&days, &vocab, a.window_minutes, seed)?;
    let records: Vec<DayStringRecord> = seqs.iter().map(DayStringRecord::from).collect();
    let out = run.output(&a.out, "daystrings.jsonl")?;
    daystring::write_corpus(create(&out)?, &records)?;
    log::info!("{} day strings", records.len());
    Ok(())
}

fn train_cmd(run: &mut Run, a: &TrainArgs, seed: u64) -> anyhow::Result<()> {
    let vocab = vocabulary(&a.locations)?;
    let corpus_path = run.input(&a.daystrings, "daystrings.jsonl")?;
    let records = daystring::read_corpus(open(&corpus_path)?)?;
    let corpus = TrainingCorpus::from_records(&records, &vocab)?;

    let mut cfg = if a.paper_mode { TrainConfig::paper(a.epochs, seed) } else { TrainConfig::desk(corpus.len(), a.epochs, seed) };
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { cfg.$f = v; })* };
    }
    set!(triplets_per_epoch, batch_size, margin, learning_rate, weight_decay, warmup_steps);
    if a.total_steps.is_some() {
        cfg.total_steps = a.total_steps;
    }
    if a.warmup_steps.is_none() && cfg.warmup_steps > cfg.planned_steps() {
        let fitted = cfg.planned_steps() / 10;
        log::warn!("preset warm-up of {} steps exceeds the {} planned steps; using {fitted}", cfg.warmup_steps, cfg.planned_steps());
        cfg.warmup_steps = fitted;
    }
    if let Some(n) = a.negative_sampling {
        cfg.negative_sampling = match n {
            NegativeArg::Day => NegativeSampling::Day,
            NegativeArg::Participant => NegativeSampling::Participant,
        };
    }

    let (initial, mut enc) = match &a.init_checkpoint {
        Some(_) => {
            let p = run.input(&a.init_checkpoint, "")?;
            let (params, enc) = encoder::load_checkpoint(&p)?;
            (Some(params), enc)
        }
        None => (None, EncoderConfig::for_vocabulary(&vocab)),
    };
    if a.init_checkpoint.is_none() {
        if let Some(v) = a.d_model {
            enc.d_model = v;
        }
        if let Some(v) = a.n_layers {
            enc.n_layers = v;
        }
        if let Some(v) = a.n_heads {
            enc.n_heads = v;
        }
        if let Some(v) = a.d_ff {
            enc.d_ff = v;
        }
        enc.normalize_output = !a.no_normalize;
    }
    if enc.vocab_size != vocab.size() {
        bail!("checkpoint vocabulary size {} does not match {}", enc.vocab_size, vocab.size());
    }
    let initial = match (&a.pretrained_embeddings, initial) {
        (Some(_), init) => {
            let path = run.input(&a.pretrained_embeddings, "")?;
            let mut params = match init {
                Some(p) => p,
                None => encoder::init_params_seeded(&enc, seed)?,
            };
            let n = encoder::load_pretrained_token_embeddings(open(&path)?, &vocab, &mut params, None)?;
            log::info!("loaded {n} pretrained token embeddings");
            Some(params)
        }
        (None, init) => init,
    };
    run.config = json!({ "args": a, "train": cfg, "encoder": enc });

    let dtype = match a.checkpoint_dtype {
        DtypeArg::F32 => Precision::F32,
        DtypeArg::F64 => Precision::F64,
    };
    let model_path = run.output(&a.model_out, "model.ckpt")?;
    let stem = model_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
    let epoch_paths: Vec<PathBuf> = (0..cfg.epochs)
        .map(|e| model_path.with_file_name(format!("{stem}-epoch{e}.ckpt")))
        .collect();
    for p in &epoch_paths {
        run.outputs.push(p.clone());
    }
    log::info!("training {} steps over {} days", cfg.planned_steps(), corpus.len());
    let outcome = trainer::train(&corpus, &enc, &cfg, initial, |epoch, params| {
        encoder::save_checkpoint_with(params, &enc, &epoch_paths[epoch], dtype)
    })?;
    // Epochs cut short by total_steps leave no checkpoint.
    run.outputs.retain(|p| !epoch_paths.contains(p) || p.exists());
    encoder::save_checkpoint_with(&outcome.params, &enc, &model_path, dtype)?;
    let history_path = run.output(&a.history_out, "history.csv")?;
    trainer::write_history(create(&history_path)?, &outcome.history)?;
    if let Some((first, last)) = trainer::loss_trend(&outcome.history, 20) {
        log::info!("loss {first:.4} -> {last:.4}");
    }
    Ok(())
}

/// Encodes every record of a corpus; output order follows the (sorted) store.
pub fn embed_records(
    params: &encoder::ModelParams,
    enc: &EncoderConfig,
    vocab: &Vocabulary,
    records: &[DayStringRecord],
) -> crate::Result<EmbeddingStore> {
    let rows = records
        .par_iter()
        .map(|r| {
            let ids = daystring::tokenize(&DayString::new(r.text.clone()), vocab)?;
            let vector = encoder::encode(params, enc, &ids)?;
            Ok(EmbeddingRecord { participant_id: r.participant_id.clone(), date: r.date, vector })
        })
        .collect::<crate::Result<Vec<_>>>()?;
    EmbeddingStore::new(rows)
}

fn embed_cmd(run: &mut Run, a: &EmbedArgs) -> anyhow::Result<()> {
    let vocab = vocabulary(&a.locations)?;
    let model_path = run.input(&a.model, "model.ckpt")?;
    let (params, enc) = encoder::load_checkpoint(&model_path)?;
    if enc.vocab_size != vocab.size() {
        bail!("checkpoint vocabulary size {} does not match {}", enc.vocab_size, vocab.size());
    }
    let corpus_path = run.input(&a.daystrings, "daystrings.jsonl")?;
    let records = daystring::read_corpus(open(&corpus_path)?)?;
    let store = embed_records(&params, &enc, &vocab, &records)?;
    let out = run.output(&a.out, "embeddings.jsonl")?;
    store.write_jsonl(create(&out)?)?;
    Ok(())
}

fn assignments_of(store: &EmbeddingStore, labels: &[usize]) -> Vec<analytics::ClusterAssignment> {
    store
        .records()
        .iter()
        .zip(labels)
        .map(|(r, &c)| analytics::ClusterAssignment { participant_id: r.participant_id.clone(), date: r.date, cluster: c })
        .collect()
}

fn cluster_cmd(run: &mut Run, a: &ClusterArgs, seed: u64) -> anyhow::Result<()> {
    let path = run.input(&a.embeddings, "embeddings.jsonl")?;
    let store = read_store(&path)?;
    let mut rng = seed::derive_rng(seed, "cluster", &format!("k/{}", a.k));
    let model = cluster::cluster_embeddings(&store.matrix(), a.k, &mut rng, &a.kmeans.options())?;
    let out = run.output(&a.assignments_out, "assignments.csv")?;
    analytics::write_assignments(create(&out)?, &assignments_of(&store, &model.labels))?;
    let model_out = run.output(&a.model_out, "cluster_model.json")?;
    serde_json::to_writer_pretty(create(&model_out)?, &model)?;
    log::info!("k = {} inertia {:.3} silhouette {:?}", model.k, model.inertia, model.silhouette);
    Ok(())
}

fn sweep_cmd(run: &mut Run, a: &SweepArgs, seed: u64) -> anyhow::Result<()> {
    let path = run.input(&a.embeddings, "embeddings.jsonl")?;
    let store = read_store(&path)?;
    let (x, _) = cluster::standardize(&store.matrix())?;
    let mut rng = seed::derive_rng(seed, "cluster", "sweep");
    let result = cluster::sweep_k(&x, a.k_min..=a.k_max, &mut rng, &a.kmeans.options())?;
    let out = run.output(&a.out, "sweep.csv")?;
    cluster::write_sweep(create(&out)?, &result.rows)?;
    let assign = run.output(&a.assignments_out, "assignments.csv")?;
    analytics::write_assignments(create(&assign)?, &assignments_of(&store, &result.best().labels))?;
    log::info!("best k = {}", result.best_k);
    Ok(())
}

fn search_cmd(run: &mut Run, a: &SearchArgs) -> anyhow::Result<()> {
    let path = run.input(&a.embeddings, "embeddings.jsonl")?;
    let store = read_store(&path)?;
    let query = Query::Day { participant_id: &a.participant, date: a.date };
    let hits = analytics::search(&store, query, a.top_k, !a.include_self)?;
    let out = run.output(&a.out, "search.csv")?;
    analytics::write_search_hits(create(&out)?, &hits)?;
    Ok(())
}

fn similarity_cmd(run: &mut Run, a: &SimilarityArgs) -> anyhow::Result<()> {
    let path = run.input(&a.embeddings, "embeddings.jsonl")?;
    let store = read_store(&path)?;
    let matrices = match &a.participant {
        Some(p) => vec![analytics::participant_similarity_matrix(&store, p, a.stride)?],
        None => {
            let pids: Vec<String> = store.participants().map(str::to_string).collect();
            let mut ms = Vec::new();
            for p in pids {
                match analytics::participant_similarity_matrix(&store, &p, a.stride) {
                    Ok(m) => ms.push(m),
                    Err(crate::Error::TooFew { .. }) => log::warn!("skipping {p}: fewer than two days after striding"),
                    Err(e) => return Err(e.into()),
                }
            }
            ms
        }
    };
    let out = run.output(&a.out, "similarity.csv")?;
    let mut wtr = csv::Writer::from_writer(create(&out)?);
    wtr.write_record(["participant_id", "date_i", "date_j", "similarity"])?;
    for m in &matrices {
        for (i, row) in m.values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                wtr.write_record([m.participant_id.clone(), m.dates[i].to_string(), m.dates[j].to_string(), v.to_string()])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

fn label_sim_cmd(run: &mut Run, a: &LabelSimArgs) -> anyhow::Result<()> {
    let path = run.input(&a.embeddings, "embeddings.jsonl")?;
    let store = read_store(&path)?;
    let labels_path = run.input(&a.labels, "labels.csv")?;
    let labels = ingest::parse_labels(open(&labels_path)?)?;
    let report = analytics::label_similarity(&store, &labels)?;
    let out = run.output(&a.out, "label_similarity.json")?;
    serde_json::to_writer_pretty(create(&out)?, &report)?;
    let per = run.output(&Some(out.with_extension("csv")), "")?;
    let mut wtr = csv::Writer::from_writer(create(&per)?);
    for p in &report.participants {
        wtr.serialize(p)?;
    }
    wtr.flush()?;
    match (report.positive_positive, report.positive_negative) {
        (Some(pp), Some(pn)) => log::info!(
            "positive-positive {:.3} ± {:.3}, positive-negative {:.3} ± {:.3} over {} participants",
            pp.mean,
            pp.std,
            pn.mean,
            pn.std,
            report.retained_participants
        ),
        _ => log::warn!("no participant has enough labelled days"),
    }
    Ok(())
}

fn proportions_cmd(run: &mut Run, a: &ProportionsArgs) -> anyhow::Result<()> {
    let path = run.input(&a.assignments, "assignments.csv")?;
    let assignments = analytics::read_assignments(open(&path)?)?;
    let table = analytics::cluster_proportions(&assignments, a.k)?;
    let out = run.output(&a.out, "proportions.csv")?;
    analytics::write_proportions(create(&out)?, &table)?;
    Ok(())
}

fn tsne_cmd(run: &mut Run, a: &TsneArgs, seed: u64) -> anyhow::Result<()> {
    let path = run.input(&a.embeddings, "embeddings.jsonl")?;
    let store = read_store(&path)?;
    let mut picked: Vec<usize> = (0..store.len()).collect();
    if let Some(m) = a.max_days.filter(|&m| m < store.len()) {
        let mut rng = seed::derive_rng(seed, "tsne", "subsample");
        picked = rand::seq::index::sample(&mut rng, store.len(), m).into_vec();
        picked.sort_unstable();
    }
    let records = store.records();
    let x: Vec<Vec<f64>> = picked.iter().map(|&i| records[i].vector.clone()).collect();
    let keys: Vec<(String, NaiveDate)> = picked.iter().map(|&i| (records[i].participant_id.clone(), records[i].date)).collect();
    let cfg = TsneConfig {
        perplexity: a.perplexity,
        early_exaggeration: a.early_exaggeration,
        learning_rate: a.learning_rate.map_or(LearningRate::Auto, LearningRate::Fixed),
        n_iter: a.n_iter,
        exaggeration_iters: a.exaggeration_iters,
        standardize: !a.no_standardize,
        seed,
        ..TsneConfig::default()
    };
    run.config = json!({ "args": a, "tsne": cfg });
    let result = tsne::tsne_fit(&x, &cfg)?;
    let out = run.output(&a.out, "tsne.csv")?;
    tsne::write_coordinates(create(&out)?, &keys, &result.y)?;
    let kl = run.output(&a.kl_out, "tsne_kl.csv")?;
    tsne::write_kl_history(create(&kl)?, &result.kl_history)?;
    Ok(())
}

fn inspect_cmd(run: &mut Run, a: &InspectArgs, seed: u64) -> anyhow::Result<()> {
    let apath = run.input(&a.assignments, "assignments.csv")?;
    let assignments = analytics::read_assignments(open(&apath)?)?;
    let dpath = run.input(&a.daystrings, "daystrings.jsonl")?;
    let records = daystring::read_corpus(open(&dpath)?)?;
    let mut rng = seed::derive_rng(seed, "analytics", &format!("inspect/{}", a.cluster));
    let sample = analytics::cluster_sample(&assignments, &records, a.cluster, a.n, &mut rng)?;
    let out = run.output(&a.out, &format!("inspect_cluster{}.jsonl", a.cluster))?;
    daystring::write_corpus(create(&out)?, &sample)?;
    Ok(())
}
