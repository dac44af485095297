//! File-based pipeline subcommands behind the `pi-sentry` binary.
//!
//! Every stage reads the artifacts it needs from `--input` (files, or
//! directories holding artifacts under their standard names; the output
//! directory is searched last) and writes its own artifacts plus a
//! `<stage>.manifest.json` into `--output`.
//!
//! Exit codes: 0 success, 1 other failure, 2 missing input, 3 schema or
//! artifact-format mismatch.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregate::{build_table, prune, DefaultValues, PairKey, PairTable};
use crate::blacklist::{self, Blacklist};
use crate::detector::{self, ForestModel, Prediction, TrainOptions};
use crate::error::Error;
use crate::features;
use crate::ingest::{self, IngestOutcome};
use crate::labeling::{self, Dataset, RuleSet};
use crate::report;
use crate::synthgen::{self, SynthConfig};
use crate::SCHEMA_VERSION;

pub const CORPUS: &str = "corpus.jsonl";
pub const GROUND_TRUTH: &str = "ground_truth.csv";
pub const NEGATIVES: &str = "negatives.csv";
pub const SYNTH_CONFIG: &str = "synth_config.json";
pub const RECORDS: &str = "records.jsonl";
pub const INGEST_REPORT: &str = "ingest_report.json";
pub const TABLE: &str = "table.json";
pub const FEATURES: &str = "features.csv";
pub const DATASET: &str = "dataset.json";
pub const SPLIT: &str = "split.json";
pub const MODEL: &str = "model.json";
pub const EVAL_REPORT: &str = "eval_report.json";
pub const HISTOGRAM: &str = "probability_histogram.csv";
pub const USER_BREAKDOWN: &str = "false_by_users.csv";
pub const SWEEP: &str = "threshold_sweep.csv";
pub const PREDICTIONS: &str = "predictions.jsonl";
pub const BLACKLIST: &str = "blacklist.json";
pub const LEAKS: &str = "leaks.jsonl";
pub const LEAK_SUMMARY: &str = "leak_summary.csv";
pub const NEW_PAIRS: &str = "new_pairs.csv";
pub const USERS_CDF: &str = "users_cdf.csv";

#[derive(Debug, Parser)]
#[command(name = "pi-sentry", version, about = "PI leak detection over mobile HTTP traffic")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Input artifact file or directory; repeatable.
    #[arg(long, short)]
    pub input: Vec<PathBuf>,
    /// Output directory.
    #[arg(long, short, default_value = ".")]
    pub output: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = detector::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = detector::DEFAULT_TREES)]
    pub trees: usize,
    #[arg(long, default_value_t = detector::DEFAULT_SPLIT)]
    pub split: f64,
    /// Rule set JSON replacing the built-in rules.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Default-value list, one value per line.
    #[arg(long)]
    pub defaults: Option<PathBuf>,
    /// Manual label overrides CSV (`app,key,pos|neg,pi_type?`).
    #[arg(long)]
    pub overrides: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with ground truth.
    Synth {
        #[command(flatten)]
        common: Common,
        /// JSON synth config; `--seed` still applies.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        apps: Option<usize>,
    },
    /// Parse a JSONL corpus into normalized records.
    Ingest(Common),
    /// Build and prune the pair table.
    Aggregate(Common),
    /// Compute the feature matrix.
    Features(Common),
    /// Label pairs with rules, propagation and overrides.
    Label(Common),
    /// Split the dataset and train the forest.
    Train(Common),
    /// Evaluate the model on the held-out split.
    Evaluate(Common),
    /// Predict every pair of a feature matrix.
    Predict(Common),
    /// Build a blacklist from predictions.
    Blacklist(Common),
    /// Match traffic against a blacklist.
    Match(Common),
    /// Render distribution CSVs.
    Report(Common),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Ingest(_) => "ingest",
            Command::Aggregate(_) => "aggregate",
            Command::Features(_) => "features",
            Command::Label(_) => "label",
            Command::Train(_) => "train",
            Command::Evaluate(_) => "evaluate",
            Command::Predict(_) => "predict",
            Command::Blacklist(_) => "blacklist",
            Command::Match(_) => "match",
            Command::Report(_) => "report",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Synth { common, .. } => common,
            Command::Ingest(c)
            | Command::Aggregate(c)
            | Command::Features(c)
            | Command::Label(c)
            | Command::Train(c)
            | Command::Evaluate(c)
            | Command::Predict(c)
            | Command::Blacklist(c)
            | Command::Match(c)
            | Command::Report(c) => c,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn missing(what: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: what.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::SchemaVersion { .. } | Error::InvalidArtifact { .. } => 3,
            Error::File { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: u64,
    pub config_hash: String,
    pub tool_version: String,
    pub elapsed_ms: u128,
}

/// Entry point for the binary; returns the process exit code.
pub fn main() -> i32 {
    run(std::env::args_os())
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("PI_SENTRY_LOG", "warn"))
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let msg = serde_json::json!({ "error": e.message, "code": e.code });
            eprintln!("{msg}");
            e.code
        }
    }
}

pub fn execute(command: &Command) -> CliResult<()> {
    let common = command.common();
    let started = Instant::now();
    std::fs::create_dir_all(&common.output)?;
    let mut ctx = Stage {
        common,
        used: Vec::new(),
        written: Vec::new(),
    };
    match command {
        Command::Synth {
            config,
            users,
            apps,
            ..
        } => ctx.synth(config.as_deref(), *users, *apps)?,
        Command::Ingest(_) => ctx.ingest()?,
        Command::Aggregate(_) => ctx.aggregate()?,
        Command::Features(_) => ctx.features()?,
        Command::Label(_) => ctx.label()?,
        Command::Train(_) => ctx.train()?,
        Command::Evaluate(_) => ctx.evaluate()?,
        Command::Predict(_) => ctx.predict()?,
        Command::Blacklist(_) => ctx.blacklist()?,
        Command::Match(_) => ctx.match_traffic()?,
        Command::Report(_) => ctx.report()?,
    }
    let manifest = RunManifest {
        subcommand: command.name().to_string(),
        inputs: ctx.used.clone(),
        outputs: ctx.written.clone(),
        seed: common.seed,
        config_hash: config_hash(common),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        elapsed_ms: started.elapsed().as_millis(),
    };
    let path = common.output.join(format!("{}.manifest.json", command.name()));
    std::fs::write(&path, serde_json::to_vec_pretty(&manifest).map_err(Error::from)?)?;
    Ok(())
}

fn config_hash(c: &Common) -> String {
    let text = format!(
        "{:?}|{}|{}|{}|{}|{:?}|{:?}|{:?}",
        c.input, c.seed, c.threshold, c.trees, c.split, c.rules, c.defaults, c.overrides
    );
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

struct Stage<'a> {
    common: &'a Common,
    used: Vec<PathBuf>,
    written: Vec<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    schema_version: u32,
    seed: u64,
    ratio: f64,
    train: Vec<PairKey>,
    test: Vec<PairKey>,
}

impl Stage<'_> {
    fn find(&self, name: &str) -> Option<PathBuf> {
        let mut dirs: Vec<&Path> = Vec::new();
        for input in &self.common.input {
            if input.is_dir() {
                dirs.push(input);
            } else if input.file_name().is_some_and(|f| f == name) {
                return Some(input.clone());
            }
        }
        dirs.push(&self.common.output);
        dirs.iter().map(|d| d.join(name)).find(|p| p.is_file())
    }

    /// Like `find`, but a lone input file with the same extension is accepted
    /// under any name.
    fn require(&mut self, name: &str) -> CliResult<PathBuf> {
        let found = self.find(name).or_else(|| {
            let ext = Path::new(name).extension();
            let files: Vec<&PathBuf> = self
                .common
                .input
                .iter()
                .filter(|p| p.is_file() && p.extension() == ext)
                .collect();
            (files.len() == 1).then(|| files[0].clone())
        });
        match found {
            Some(p) => {
                self.used.push(p.clone());
                Ok(p)
            }
            None => Err(CliError::missing(format!("missing input artifact `{name}`"))),
        }
    }

    fn optional(&mut self, name: &str) -> Option<PathBuf> {
        let p = self.find(name)?;
        self.used.push(p.clone());
        Some(p)
    }

    fn out(&mut self, name: &str) -> PathBuf {
        let p = self.common.output.join(name);
        self.written.push(p.clone());
        p
    }

    fn create(&mut self, name: &str) -> CliResult<BufWriter<File>> {
        let path = self.out(name);
        let f = File::create(&path).map_err(|source| Error::File { path, source })?;
        Ok(BufWriter::new(f))
    }

    fn defaults(&mut self) -> CliResult<DefaultValues> {
        match &self.common.defaults {
            Some(p) => {
                self.used.push(p.clone());
                Ok(DefaultValues::from_reader(open(p)?)?)
            }
            None => Ok(DefaultValues::default()),
        }
    }

    fn read_records(&mut self) -> CliResult<IngestOutcome> {
        let path = match self.find(RECORDS) {
            Some(p) => {
                self.used.push(p.clone());
                p
            }
            None => self.require(CORPUS)?,
        };
        let outcome = ingest::parse_jsonl_corpus(open(&path)?)?;
        if outcome.error_count() > 0 {
            log::warn!("{}: {} malformed lines skipped", path.display(), outcome.error_count());
        }
        Ok(outcome)
    }

    fn load_table(&mut self) -> CliResult<PairTable> {
        let path = self.require(TABLE)?;
        Ok(PairTable::load(&path)?.0)
    }

    fn synth(&mut self, config: Option<&Path>, users: Option<usize>, apps: Option<usize>) -> CliResult<()> {
        let mut cfg = match config {
            Some(p) => {
                self.used.push(p.to_path_buf());
                serde_json::from_reader(open(p)?).map_err(Error::from)?
            }
            None => SynthConfig::default(),
        };
        cfg.seed = self.common.seed;
        if let Some(u) = users {
            cfg.n_users = u;
        }
        if let Some(a) = apps {
            cfg.n_apps = a;
        }
        let corpus = synthgen::generate(&cfg)?;
        corpus.write_jsonl(self.create(CORPUS)?)?;
        corpus.truth.write_csv(self.create(GROUND_TRUTH)?)?;
        let n_neg = corpus.truth.positives().count();
        let negatives = corpus.truth.sample_negative_overrides(n_neg, cfg.seed);
        labeling::write_overrides(&negatives, self.create(NEGATIVES)?)?;
        let echo = serde_json::json!({ "config": cfg, "stats": corpus.stats });
        serde_json::to_writer_pretty(self.create(SYNTH_CONFIG)?, &echo).map_err(Error::from)?;
        log::info!("generated {} records", corpus.records.len());
        Ok(())
    }

    fn ingest(&mut self) -> CliResult<()> {
        let path = self.require(CORPUS)?;
        let outcome = ingest::parse_jsonl_corpus(open(&path)?)?;
        let mut w = self.create(RECORDS)?;
        for r in &outcome.records {
            w.write_all(r.to_jsonl().as_bytes())?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        let report = serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "records": outcome.records.len(),
            "errors": outcome.error_count(),
            "unparsed_bodies": outcome.unparsed_bodies,
            "error_lines": outcome.errors.iter().take(100).collect::<Vec<_>>(),
        });
        serde_json::to_writer_pretty(self.create(INGEST_REPORT)?, &report).map_err(Error::from)?;
        if outcome.error_count() > 0 {
            log::warn!("{} malformed lines skipped", outcome.error_count());
        }
        Ok(())
    }

    fn build_pruned(&mut self) -> CliResult<PairTable> {
        let defaults = self.defaults()?;
        let outcome = self.read_records()?;
        let table = build_table(&outcome.records, &defaults)?;
        let (pruned, report) = prune(&table);
        log::info!(
            "pruned {} default-only and {} singleton pairs",
            report.default_only,
            report.singleton
        );
        let path = self.out(TABLE);
        pruned.save(&path, Some(&report))?;
        Ok(pruned)
    }

    fn aggregate(&mut self) -> CliResult<()> {
        self.build_pruned().map(|_| ())
    }

    fn features(&mut self) -> CliResult<()> {
        let table = match self.optional(TABLE) {
            Some(p) => PairTable::load(&p)?.0,
            None => self.build_pruned()?,
        };
        let matrix = features::feature_matrix(&table)?;
        features::write_csv(&matrix, self.create(FEATURES)?)?;
        Ok(())
    }

    fn label(&mut self) -> CliResult<()> {
        let table = self.load_table()?;
        let feats = self.require(FEATURES)?;
        let matrix = features::read_csv(open(&feats)?)?;
        let rules = match &self.common.rules {
            Some(p) => {
                self.used.push(p.clone());
                RuleSet::from_json(open(p)?)?
            }
            None => RuleSet::default(),
        };
        let overrides_path = match &self.common.overrides {
            Some(p) => Some(p.clone()),
            None => self.find(NEGATIVES),
        };
        let overrides = match overrides_path {
            Some(p) => {
                self.used.push(p.clone());
                labeling::read_overrides(open(&p)?)?
            }
            None => Vec::new(),
        };
        let labels = labeling::rule_labels(&table, &rules);
        let dataset = labeling::assemble_dataset(&table, &matrix, &labels, &overrides)?;
        let path = self.out(DATASET);
        dataset.save(&path)?;
        Ok(())
    }

    fn train(&mut self) -> CliResult<()> {
        let path = self.require(DATASET)?;
        let dataset = Dataset::load(&path)?;
        let (train, test) = detector::split(&dataset.samples, self.common.split, self.common.seed)?;
        let trained_at = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|s| s.parse().ok())
            .unwrap_or(0);
        let opts = TrainOptions {
            n_trees: self.common.trees,
            seed: self.common.seed,
            trained_at,
            ..Default::default()
        };
        let model = detector::train(&train, &opts)?;
        let split = SplitFile {
            schema_version: SCHEMA_VERSION,
            seed: self.common.seed,
            ratio: self.common.split,
            train: train.iter().map(|s| s.pair.clone()).collect(),
            test: test.iter().map(|s| s.pair.clone()).collect(),
        };
        serde_json::to_writer(self.create(SPLIT)?, &split).map_err(Error::from)?;
        let path = self.out(MODEL);
        model.save(&path)?;
        Ok(())
    }

    fn evaluate(&mut self) -> CliResult<()> {
        let model = ForestModel::load(&self.require(MODEL)?)?;
        let dataset = Dataset::load(&self.require(DATASET)?)?;
        let split: SplitFile = serde_json::from_reader(open(&self.require(SPLIT)?)?).map_err(Error::from)?;
        if split.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                artifact: "split".into(),
                expected: SCHEMA_VERSION,
                found: split.schema_version,
            }
            .into());
        }
        let test_keys: BTreeSet<&PairKey> = split.test.iter().collect();
        let test: Vec<_> = dataset
            .samples
            .into_iter()
            .filter(|s| test_keys.contains(&s.pair))
            .collect();
        let report = detector::evaluate(&model, &test, self.common.threshold)?;
        serde_json::to_writer_pretty(self.create(EVAL_REPORT)?, &report).map_err(Error::from)?;
        detector::write_histogram_csv(&report, self.create(HISTOGRAM)?)?;
        detector::write_user_breakdown_csv(&report, self.create(USER_BREAKDOWN)?)?;
        let sweep = detector::threshold_sweep(&model, &test, &detector::default_sweep());
        detector::write_sweep_csv(&sweep, self.create(SWEEP)?)?;
        Ok(())
    }

    fn predict(&mut self) -> CliResult<()> {
        let model = ForestModel::load(&self.require(MODEL)?)?;
        let matrix = features::read_csv(open(&self.require(FEATURES)?)?)?;
        let preds = detector::predict_matrix(&model, &matrix, self.common.threshold);
        let mut w = self.create(PREDICTIONS)?;
        for p in &preds {
            serde_json::to_writer(&mut w, p).map_err(Error::from)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    fn blacklist(&mut self) -> CliResult<()> {
        let path = self.require(PREDICTIONS)?;
        let mut preds = Vec::new();
        for (i, line) in open(&path)?.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let p: Prediction = serde_json::from_str(&line).map_err(|e| Error::InvalidArtifact {
                artifact: PREDICTIONS.into(),
                reason: format!("line {}: {e}", i + 1),
            })?;
            preds.push(p);
        }
        let built_from = match self.optional(MODEL) {
            Some(p) => ForestModel::load(&p)?.fingerprint(),
            None => path.display().to_string(),
        };
        let defaults = match self.optional(TABLE) {
            Some(p) if self.common.defaults.is_none() => PairTable::load(&p)?.0.default_values,
            _ => self.defaults()?,
        };
        let bl = blacklist::build_blacklist(&preds, self.common.threshold, built_from, defaults);
        let out = self.out(BLACKLIST);
        self.written.push(Blacklist::meta_path(&out));
        bl.save(&out)?;
        Ok(())
    }

    fn match_traffic(&mut self) -> CliResult<()> {
        let bl = Blacklist::load(&self.require(BLACKLIST)?)?;
        if bl.is_empty() {
            log::warn!("blacklist is empty; no leaks can be reported");
        }
        let known: Option<BTreeSet<PairKey>> = match self.optional(TABLE) {
            Some(p) => Some(PairTable::load(&p)?.0.pairs.into_keys().collect()),
            None => None,
        };
        let records = self.read_records()?.records;
        let outcome = blacklist::match_stream_with_known(&bl, &records, known.as_ref());
        let mut w = self.create(LEAKS)?;
        blacklist::write_events_jsonl(&outcome.events, &mut w)?;
        w.flush()?;
        outcome.summary.write_csv(self.create(LEAK_SUMMARY)?)?;
        if known.is_some() {
            blacklist::write_new_pairs_csv(&outcome.new_pairs, self.create(NEW_PAIRS)?)?;
        }
        log::info!("{} leak events", outcome.events.len());
        Ok(())
    }

    fn report(&mut self) -> CliResult<()> {
        let mut any = false;
        if let Some(p) = self.optional(TABLE) {
            let table = PairTable::load(&p)?.0;
            report::write_cdf_csv(&report::users_per_pair_cdf(&table), self.create(USERS_CDF)?)?;
            any = true;
        }
        if let Some(p) = self.optional(EVAL_REPORT) {
            let rep: detector::EvalReport = serde_json::from_reader(open(&p)?).map_err(Error::from)?;
            if rep.schema_version != SCHEMA_VERSION {
                return Err(Error::SchemaVersion {
                    artifact: "eval report".into(),
                    expected: SCHEMA_VERSION,
                    found: rep.schema_version,
                }
                .into());
            }
            detector::write_histogram_csv(&rep, self.create(HISTOGRAM)?)?;
            detector::write_user_breakdown_csv(&rep, self.create(USER_BREAKDOWN)?)?;
            any = true;
        }
        if !any {
            return Err(CliError::missing(format!("report needs `{TABLE}` or `{EVAL_REPORT}`")));
        }
        Ok(())
    }
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| {
            Error::File {
                path: path.to_path_buf(),
                source,
            }
            .into()
        })
}
