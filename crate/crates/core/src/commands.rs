//! The `pivot` command line: `synth`, `train`, `track`, `eval` and `ablate`.
//!
//! Every command reads an optional TOML config (`--config`) and applies
//! `--set section.key=value` overrides on top; flags win over both.
//! Errors map to exit code 1 for usage and configuration problems and 2 for
//! failures at run time.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{load_dataset, make_suite, materialize_suite, Layout, SequenceRecord, SuiteConfig, SuiteKind};
use crate::error::{Error, Result};
use crate::evalkit::{
    attribute_report, attribute_table, read_attribute_tags, result_file_hash, results_from_files, write_confidence_file,
    write_result_file, EvalConfig, MetricReport, SequenceResult,
};
use crate::model::PivotModel;
use crate::pipeline::{track_sequence, PromptMode, TrackRun, TrackerConfig};
use crate::training::{run_stage, TrainData};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidSpec(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

#[derive(Debug, Parser)]
#[command(name = "pivot", version, about = "Promptable visual object tracking at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set tracker.refinement.gamma=0.3`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl Common {
    pub fn load(&self) -> Result<RunConfig> {
        RunConfig::load_with_overrides(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    /// Sequences generated from `data.suite.master_seed`, used for training.
    Train,
    /// Sequences generated from `data.eval_seed`.
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    All,
}

/// Where a command reads its sequences from.
#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Dataset root on disk.
    #[arg(long, conflicts_with = "suite")]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value = "got10k", value_parser = parse_layout)]
    pub layout: Layout,
    /// Generate a synthetic test suite in memory instead.
    #[arg(long, value_parser = parse_suite)]
    pub suite: Option<SuiteKind>,
}

fn parse_layout(s: &str) -> std::result::Result<Layout, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_suite(s: &str) -> std::result::Result<SuiteKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic suites on disk.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Output directory; defaults to `data.suites_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Suites to write; all when omitted.
        #[arg(long, value_parser = parse_suite)]
        suite: Vec<SuiteKind>,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Train one checkpoint per seed in `run.seeds`.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "all")]
        stage: StageArg,
        /// Stage-1 checkpoint to continue from; required for `--stage 2`.
        #[arg(long)]
        from: Option<PathBuf>,
        /// Output directory; defaults to `run.output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Train this seed only.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Track every sequence of a dataset and write raw result files.
    Track {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long, value_enum)]
        tpr: Option<Switch>,
        #[arg(long, value_enum)]
        prompt: Option<Switch>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score result files, or a checkpoint tracked on the fly.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Result directories; all must share one config hash.
        #[arg(long, required_unless_present = "checkpoint")]
        results: Vec<PathBuf>,
        #[arg(long, conflicts_with = "results")]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        data: DatasetArgs,
        /// `name tag,tag` lines overriding the dataset's attribute tags.
        #[arg(long)]
        attributes: Option<PathBuf>,
        /// Aggregate results produced under different config hashes.
        #[arg(long)]
        allow_mixed_hashes: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the prompt variants of one or more checkpoints on a suite.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// One checkpoint per training seed; rows average over them.
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[command(flatten)]
        data: DatasetArgs,
        /// Also write the table here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code; messages go to `out` and `err`.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = if code == 0 { write!(out, "{}", e.render()) } else { write!(err, "{}", e.render()) };
            return code;
        }
    };
    match run(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Synth { common, out: dir, suite, split } => {
            let cfg = common.load()?;
            cmd_synth(&cfg, dir.as_deref(), &suite, split, out)
        }
        Command::Train { common, stage, from, out: dir, seed } => {
            let mut cfg = common.load()?;
            if let Some(s) = seed {
                cfg.run.seeds = vec![s];
            }
            if let Some(d) = dir {
                cfg.run.output_dir = d;
            }
            cmd_train(&cfg, stage, from.as_deref(), out)
        }
        Command::Track { common, checkpoint, data, tpr, prompt, out: dir } => {
            let mut cfg = common.load()?;
            if let Some(t) = tpr {
                cfg.tracker.tpr = t.on();
            }
            if let Some(p) = prompt {
                cfg.tracker.prompt = p.on();
            }
            let seqs = dataset(&cfg, &data)?;
            cmd_track(&cfg, &checkpoint, &seqs, &dir, out)
        }
        Command::Eval { common, results, checkpoint, data, attributes, allow_mixed_hashes, out: dir } => {
            let cfg = common.load()?;
            let seqs = dataset(&cfg, &data)?;
            let results = match checkpoint {
                Some(ckpt) => {
                    let tracked = dir.join("results");
                    cmd_track(&cfg, &ckpt, &seqs, &tracked, out)?;
                    vec![tracked]
                }
                None => results,
            };
            cmd_eval(&cfg, &results, &seqs, attributes.as_deref(), allow_mixed_hashes, &dir, out)
        }
        Command::Ablate { common, checkpoint, data, out: path } => {
            let cfg = common.load()?;
            let seqs = dataset(&cfg, &data)?;
            let table = cmd_ablate(&cfg, &checkpoint, &seqs)?;
            out.write_all(table.as_bytes())?;
            if let Some(p) = path {
                if let Some(parent) = p.parent() {
                    fs::create_dir_all(parent)?;
                }
                fs::write(p, &table)?;
            }
            Ok(())
        }
    }
}

/// Suite generator settings for a split.
pub fn split_config(cfg: &RunConfig, split: Split) -> SuiteConfig {
    let mut suite = cfg.data.suite.clone();
    if split == Split::Test {
        suite.master_seed = cfg.data.eval_seed;
    }
    suite
}

fn dataset(cfg: &RunConfig, args: &DatasetArgs) -> Result<Vec<SequenceRecord>> {
    match (&args.dataset, args.suite) {
        (Some(root), _) => {
            let loaded = load_dataset(root, args.layout)?;
            for e in &loaded.errors {
                log::warn!("skipping sequence {}: {}", e.name, e.message);
            }
            if loaded.sequences.is_empty() {
                return Err(Error::Precondition(format!("no loadable sequences under {}", root.display())));
            }
            Ok(loaded.sequences)
        }
        (None, Some(kind)) => make_suite(kind, &split_config(cfg, Split::Test)),
        (None, None) => Err(Error::Config("pass either --dataset or --suite".into())),
    }
}

pub fn cmd_synth(cfg: &RunConfig, dir: Option<&Path>, kinds: &[SuiteKind], split: Split, out: &mut dyn Write) -> Result<()> {
    let root = dir.map(Path::to_path_buf).unwrap_or_else(|| cfg.data.suites_dir.clone());
    let suite_cfg = split_config(cfg, split);
    let kinds: Vec<SuiteKind> = if kinds.is_empty() { SuiteKind::ALL.to_vec() } else { kinds.to_vec() };
    for kind in kinds {
        let seqs = make_suite(kind, &suite_cfg)?;
        let d = root.join(kind.name());
        materialize_suite(&d, kind, &suite_cfg, &seqs)?;
        let frames: usize = seqs.iter().map(|s| s.len()).sum();
        writeln!(out, "{}\t{} sequences\t{} frames\t{}", kind, seqs.len(), frames, d.display())?;
    }
    Ok(())
}

/// Training data for a config: `data.train_root` when set, else the
/// training split of the `plain` suite.
pub fn training_sequences(cfg: &RunConfig) -> Result<Vec<SequenceRecord>> {
    match &cfg.data.train_root {
        Some(root) => {
            let loaded = load_dataset(root, cfg.data.layout()?)?;
            for e in &loaded.errors {
                log::warn!("skipping training sequence {}: {}", e.name, e.message);
            }
            Ok(loaded.sequences)
        }
        None => make_suite(SuiteKind::Plain, &split_config(cfg, Split::Train)),
    }
}

/// Config with the training seed set to `seed`; its hash identifies the
/// checkpoint trained under it.
pub fn seeded(cfg: &RunConfig, seed: u64) -> RunConfig {
    let mut c = cfg.clone();
    c.train.seed = seed;
    c.model.seed = seed;
    c
}

pub fn cmd_train(cfg: &RunConfig, stage: StageArg, from: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let start = match (stage, from) {
        (StageArg::Two, None) => {
            return Err(Error::Config("stage 2 needs a stage-1 checkpoint (--from)".into()));
        }
        (StageArg::Two, Some(p)) => {
            let ckpt = Checkpoint::load(p)?;
            if ckpt.stage != 1 {
                return Err(Error::Config(format!("{} is a stage-{} checkpoint, stage 2 needs stage 1", p.display(), ckpt.stage)));
            }
            Some(ckpt)
        }
        (_, Some(_)) => return Err(Error::Config("--from only applies to --stage 2".into())),
        (_, None) => None,
    };
    let sequences = training_sequences(cfg)?;
    let frame_size = sequences
        .first()
        .map(|s| s.frame(0).map(|f| (f.width, f.height)))
        .transpose()?
        .unwrap_or((cfg.data.suite.width, cfg.data.suite.height));
    let data = TrainData { sequences: &sequences, frame_size };
    let stages: &[u32] = match stage {
        StageArg::One => &[1],
        StageArg::Two => &[2],
        StageArg::All => &[1, 2],
    };
    for &seed in &cfg.run.seeds {
        let c = seeded(cfg, seed);
        let hash = c.hash();
        let dir = if cfg.run.seeds.len() == 1 { cfg.run.output_dir.clone() } else { cfg.run.output_dir.join(format!("seed-{seed}")) };
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("config.toml"), c.to_toml()?)?;
        let mut log = BufWriter::new(fs::File::create(dir.join("train_log.txt"))?);
        let mut model = match &start {
            Some(ckpt) => ckpt.clone().into_model()?,
            None => PivotModel::new(c.model.clone())?,
        };
        for &s in stages {
            let outcome = run_stage(model, s, &data, &c.train, &c.loss, &mut log)?;
            if let Some(step) = outcome.diverged_at {
                log::error!("seed {seed} stage {s} diverged");
                return Err(Error::Diverged { step });
            }
            model = outcome.model;
            let path = dir.join(format!("stage{s}.ckpt"));
            Checkpoint::from_model(&model, &hash, s).save(&path)?;
            let last = outcome.records.last().map(|r| r.loss.total).unwrap_or(f64::NAN);
            writeln!(out, "seed {seed}\tstage {s}\t{} steps\tfinal loss {last:.4}\t{}", outcome.records.len(), path.display())?;
        }
        log.flush()?;
    }
    Ok(())
}

/// Tracks `seqs` with up to `parallelism` worker threads. Results keep the
/// input order and do not depend on the thread count.
pub fn track_all(model: &PivotModel, tc: &TrackerConfig, seqs: &[SequenceRecord], parallelism: usize) -> Vec<Result<TrackRun>> {
    if parallelism <= 1 || seqs.len() <= 1 {
        return seqs.iter().map(|s| track_sequence(model, tc, s)).collect();
    }
    let workers = parallelism.min(seqs.len());
    let mut slots: Vec<Option<Result<TrackRun>>> = (0..seqs.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    (w..seqs.len()).step_by(workers).map(|i| (i, track_sequence(model, tc, &seqs[i]))).collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("tracking worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every sequence tracked")).collect()
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::Checkpoint(format!("{} does not exist", path.display())));
    }
    Checkpoint::load(path)
}

pub fn cmd_track(cfg: &RunConfig, checkpoint: &Path, seqs: &[SequenceRecord], dir: &Path, out: &mut dyn Write) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let hash = ckpt.config_hash.clone();
    let model = ckpt.into_model()?;
    fs::create_dir_all(dir)?;
    let runs = track_all(&model, &cfg.tracker, seqs, cfg.run.parallelism);
    let mut failures = String::new();
    let mut ok = 0;
    for (seq, run) in seqs.iter().zip(runs) {
        match run {
            Ok(r) => {
                write_result_file(&dir.join(format!("{}.txt", seq.name)), &r.boxes, Some(&hash))?;
                write_confidence_file(&dir.join(format!("{}_confidence.txt", seq.name)), &r.confidences)?;
                ok += 1;
            }
            Err(e) => {
                log::error!("{}: {e}", seq.name);
                let _ = writeln!(failures, "{}\t{e}", seq.name);
            }
        }
    }
    let meta = format!(
        "config_hash = \"{hash}\"\nmode = \"{}\"\ncheckpoint = \"{}\"\nsequences = {ok}\nfailed = {}\n",
        cfg.tracker.mode().name(),
        checkpoint.display(),
        seqs.len() - ok
    );
    fs::write(dir.join("run.toml"), meta)?;
    if !failures.is_empty() {
        fs::write(dir.join("failures.txt"), failures)?;
    }
    writeln!(out, "{}\t{ok}/{} sequences\t{}", cfg.tracker.mode().name(), seqs.len(), dir.display())?;
    Ok(())
}

/// Config hash of a result directory: taken from `run.toml`, else from the
/// result-file headers; `None` when nothing records it.
pub fn results_hash(dir: &Path) -> Result<Option<String>> {
    let meta = dir.join("run.toml");
    if meta.exists() {
        let table: toml::Table = fs::read_to_string(&meta)?
            .parse()
            .map_err(|e: toml::de::Error| Error::Parse { path: meta.clone(), message: e.message().to_string() })?;
        return Ok(table.get("config_hash").and_then(|v| v.as_str()).map(String::from));
    }
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.extension().is_some_and(|e| e == "txt") && !p.to_string_lossy().ends_with("_confidence.txt") {
            if let Some(h) = result_file_hash(&p)? {
                return Ok(Some(h));
            }
        }
    }
    Ok(None)
}

pub fn cmd_eval(
    cfg: &RunConfig,
    result_dirs: &[PathBuf],
    seqs: &[SequenceRecord],
    attributes: Option<&Path>,
    allow_mixed: bool,
    dir: &Path,
    out: &mut dyn Write,
) -> Result<()> {
    let mut hashes = BTreeSet::new();
    for d in result_dirs {
        hashes.insert(results_hash(d)?.unwrap_or_else(|| "unknown".into()));
    }
    if hashes.len() > 1 && !allow_mixed {
        return Err(Error::Config(format!(
            "results come from different configs ({}); pass --allow-mixed-hashes to aggregate anyway",
            hashes.iter().cloned().collect::<Vec<_>>().join(", ")
        )));
    }
    let hash = hashes.into_iter().collect::<Vec<_>>().join("+");
    let mut results: Vec<SequenceResult> = Vec::new();
    let mut errors = String::new();
    for d in result_dirs {
        let (rs, errs) = results_from_files(d, seqs);
        results.extend(rs);
        for e in errs {
            log::warn!("{}: {}", e.sequence, e.message);
            let _ = writeln!(errors, "{}\t{}\t{}", d.display(), e.sequence, e.message);
        }
    }
    if results.is_empty() {
        return Err(Error::Precondition("no result files matched the dataset".into()));
    }
    let report = MetricReport::compute(&results, &cfg.eval);
    fs::create_dir_all(dir)?;
    let text = report.to_text(&hash);
    fs::write(dir.join("report.txt"), &text)?;
    if !errors.is_empty() {
        fs::write(dir.join("errors.txt"), errors)?;
    }
    let tags = attributes.map(read_attribute_tags).transpose()?;
    let rows = attribute_report(&results, tags.as_ref(), &cfg.eval);
    fs::write(dir.join("attributes.tsv"), attribute_table(&rows))?;
    out.write_all(text.as_bytes())?;
    Ok(())
}

/// One row of the ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub success_auc: f64,
    pub precision_auc: f64,
    pub precision_20: f64,
}

pub const ABLATION_HEADER: &str = "variant\tsuccess_auc\tprecision_auc\tprecision_20";

/// Holds the first box for the whole sequence; the floor every learned
/// variant should clear.
pub fn static_baseline(seq: &SequenceRecord) -> Vec<crate::geometry::BoundingBox> {
    vec![seq.boxes[0]; seq.len()]
}

fn evaluate_runs(seqs: &[SequenceRecord], runs: Vec<Vec<crate::geometry::BoundingBox>>, eval: &EvalConfig) -> Result<MetricReport> {
    let results = seqs.iter().zip(runs).map(|(s, b)| SequenceResult::new(s, b, None)).collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::compute(&results, eval))
}

/// Baseline row plus one row per prompt mode, each averaged over the models.
pub fn ablation_rows(models: &[PivotModel], tracker: &TrackerConfig, seqs: &[SequenceRecord], eval: &EvalConfig, parallelism: usize) -> Result<Vec<AblationRow>> {
    let base = evaluate_runs(seqs, seqs.iter().map(static_baseline).collect(), eval)?;
    let mut rows = vec![AblationRow {
        variant: "static-baseline".into(),
        success_auc: base.success_auc,
        precision_auc: base.precision_auc,
        precision_20: base.precision_20,
    }];
    for mode in PromptMode::ALL {
        let tc = tracker.with_mode(mode);
        let mut row = AblationRow { variant: mode.name().into(), success_auc: 0.0, precision_auc: 0.0, precision_20: 0.0 };
        for m in models {
            let runs = track_all(m, &tc, seqs, parallelism).into_iter().map(|r| r.map(|r| r.boxes)).collect::<Result<Vec<_>>>()?;
            let rep = evaluate_runs(seqs, runs, eval)?;
            row.success_auc += rep.success_auc / models.len() as f64;
            row.precision_auc += rep.precision_auc / models.len() as f64;
            row.precision_20 += rep.precision_20 / models.len() as f64;
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn format_ablation(rows: &[AblationRow], hashes: &[String]) -> String {
    let mut s = format!("# config_hash = {}\n{ABLATION_HEADER}\n", hashes.join("+"));
    for r in rows {
        let _ = writeln!(s, "{}\t{:.6}\t{:.6}\t{:.6}", r.variant, r.success_auc, r.precision_auc, r.precision_20);
    }
    s
}

/// Parses a table written by [`format_ablation`].
pub fn parse_ablation(text: &str) -> Result<Vec<AblationRow>> {
    let bad = |m: String| Error::Parse { path: PathBuf::from("<ablation table>"), message: m };
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty() && *l != ABLATION_HEADER)
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 4 {
                return Err(bad(format!("expected 4 columns in `{l}`")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number `{s}`")));
            Ok(AblationRow { variant: f[0].to_string(), success_auc: num(f[1])?, precision_auc: num(f[2])?, precision_20: num(f[3])? })
        })
        .collect()
}

pub fn cmd_ablate(cfg: &RunConfig, checkpoints: &[PathBuf], seqs: &[SequenceRecord]) -> Result<String> {
    let mut models = Vec::new();
    let mut hashes = Vec::new();
    for p in checkpoints {
        let ckpt = load_checkpoint(p)?;
        hashes.push(ckpt.config_hash.clone());
        models.push(ckpt.into_model()?);
    }
    let rows = ablation_rows(&models, &cfg.tracker, seqs, &cfg.eval, cfg.run.parallelism)?;
    Ok(format_ablation(&rows, &hashes))
}
