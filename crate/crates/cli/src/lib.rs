//! Command-line orchestration over the `compgrpo` library.
//!
//! Every command takes an optional TOML [`RunConfig`] plus flag overrides and
//! writes into an output directory with a fixed layout:
//!
//! ```text
//! out/
//!   config.toml        effective configuration
//!   checkpoints/       sft.ckpt, grpo.ckpt
//!   traces/            sft_loss.csv, grpo_trace.csv, rollouts.jsonl
//!   reports/           eval.csv, predictions.tsv, pass_at_k.csv,
//!                      length_buckets.csv, copying.csv
//! ```
//!
//! `gen-data` writes `train.tsv` and `test.tsv` directly into `out/`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use compgrpo::corpus::{generate_mini_scan, load_tsv, validate_split, CoverageReport, MiniScanConfig, SplitRule};
use compgrpo::eval::{
    build_trigram_table, copying_comparison, copying_csv, evaluate, greedy_predictions, length_bucket_report,
    parse_prediction_dump, pass_at_k_csv, pass_at_ks, prediction_dump, EvalReport, PredictionRecord,
};
use compgrpo::grpo::{rollout_records, stats_csv, train_grpo_with, GrpoConfig, RolloutGroup, StepStats};
use compgrpo::policy::{init_policy, load_checkpoint, save_checkpoint};
use compgrpo::sft::{loss_trace_csv, train_sft_with, SftConfig};
use compgrpo::{ArchConfig, Dataset, Formalism, FormalismDescriptor, PolicyParams, RewardMode, Vocab};

pub const CONFIG_FILE: &str = "config.toml";

/// Sections that inherit the global seed when they do not set their own.
const SEEDED_SECTIONS: [&str; 4] = ["data", "sft", "grpo", "eval"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds policy initialization and every section without its own seed.
    pub seed: u64,
    /// Formalism of TSV data read by `train` and `eval`.
    pub formalism: Formalism,
    /// Descriptor file replacing the built-in one for `formalism`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub formalism_descriptor: Option<PathBuf>,
    /// Write rollout records every this many GRPO steps; 0 disables.
    pub rollout_dump_every: usize,
    pub data: MiniScanConfig,
    pub arch: ArchConfig,
    pub sft: SftConfig,
    pub grpo: GrpoConfig,
    pub eval: EvalOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            formalism: Formalism::Scan,
            formalism_descriptor: None,
            rollout_dump_every: 0,
            data: MiniScanConfig::default(),
            arch: ArchConfig::default(),
            sft: SftConfig::default(),
            grpo: GrpoConfig::desk_scale(),
            eval: EvalOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// Name of the TSV file (without extension) in the data directory.
    pub split: String,
    /// pass@k values to report; empty skips sampling.
    pub pass_k: Vec<usize>,
    pub temperature: f64,
    pub length_buckets: bool,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { split: "test".into(), pass_k: Vec::new(), temperature: 0.6, length_buckets: false, seed: 0 }
    }
}

impl RunConfig {
    /// Parses a TOML document over [`RunConfig::default`]. Sections without a
    /// `seed` key take the top-level `seed`.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut user: toml::Table = text.parse().context("parsing configuration")?;
        let seed = user.get("seed").cloned().unwrap_or(toml::Value::Integer(0));
        for name in SEEDED_SECTIONS {
            let section = user.entry(name).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            if let toml::Value::Table(t) = section {
                t.entry("seed").or_insert_with(|| seed.clone());
            }
        }
        let mut merged: toml::Table = toml::Table::try_from(RunConfig::default()).context("serializing defaults")?;
        merge(&mut merged, user);
        merged.try_into().context("invalid configuration")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing configuration")
    }

    /// Sets the global seed and every section seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.data.seed = seed;
        self.sft.seed = seed;
        self.grpo.seed = seed;
        self.eval.seed = seed;
    }

    pub fn descriptor(&self) -> Result<FormalismDescriptor> {
        match &self.formalism_descriptor {
            Some(path) => FormalismDescriptor::load(path).with_context(|| format!("loading descriptor {}", path.display())),
            None => Ok(FormalismDescriptor::builtin(self.formalism)),
        }
    }
}

/// Overlays `top` on `base`, recursing into tables present in both. A table
/// replaces a non-table and vice versa, so enum variants such as
/// `split_rule` switch cleanly.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) if !is_variant(b, &t) => merge(b, t),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

/// Single-key tables with different keys are different enum variants.
fn is_variant(base: &toml::Table, top: &toml::Table) -> bool {
    base.len() == 1 && top.len() == 1 && base.keys().next() != top.keys().next()
}

#[derive(Parser, Debug)]
#[command(name = "compgrpo", version, about = "Mini-SCAN data generation, SFT/GRPO training and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Enumerate mini-SCAN and write train.tsv / test.tsv.
    GenData(GenDataArgs),
    /// Supervised warm-up or GRPO fine-tuning.
    Train(TrainArgs),
    /// Exact match, pass@k, length buckets and trigram copying reports.
    Eval(EvalArgs),
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// TOML configuration; omitted keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Global seed, applied to every section.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Formalism descriptor file (TOML).
    #[arg(long)]
    pub formalism_descriptor: Option<PathBuf>,
    /// Suppress progress and summary output.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Args, Debug, Clone)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub max_depth: Option<usize>,
    /// Targets longer than this go to the test split.
    #[arg(long)]
    pub threshold: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Sft,
    Grpo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RewardArg {
    Binary,
    Composite,
    PrimOnly,
    CompOnly,
}

impl From<RewardArg> for RewardMode {
    fn from(r: RewardArg) -> Self {
        match r {
            RewardArg::Binary => RewardMode::Binary,
            RewardArg::Composite => RewardMode::Composite,
            RewardArg::PrimOnly => RewardMode::PrimOnly,
            RewardArg::CompOnly => RewardMode::CompOnly,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// sft for the supervised warm-up, grpo for fine-tuning from it
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Directory holding train.tsv (and test.tsv, whose tokens join the vocabulary).
    #[arg(long)]
    pub data: PathBuf,
    /// Warm-up checkpoint; GRPO uses it as both initial and reference policy.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// GRPO reward; overrides grpo.reward_mode
    #[arg(long, value_enum)]
    pub reward: Option<RewardArg>,
    /// Overrides sft.epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Overrides grpo.steps
    #[arg(long)]
    pub steps: Option<usize>,
    /// Overrides the learning rate of the selected mode
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Directory holding the split TSV and train.tsv.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Decode the split greedily with this checkpoint.
    #[arg(long, conflicts_with = "predictions")]
    pub checkpoint: Option<PathBuf>,
    /// Score an existing prediction dump (source, gold, prediction per line).
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Split to evaluate, e.g. train or test (default test)
    #[arg(long)]
    pub split: Option<String>,
    /// Comma-separated k values, e.g. 1,5,10.
    #[arg(long, value_delimiter = ',')]
    pub pass_k: Option<Vec<usize>>,
    /// Also write accuracy by gold-length bucket
    #[arg(long)]
    pub length_buckets: bool,
    /// Two prediction dumps whose incorrect outputs are compared against
    /// training-target trigram frequencies.
    #[arg(long, num_args = 2, value_names = ["DUMP_A", "DUMP_B"])]
    pub trigram_compare: Option<Vec<PathBuf>>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a).map(|_| ()),
        Command::Train(a) => train(&a).map(|_| ()),
        Command::Eval(a) => eval(&a).map(|_| ()),
    }
}

fn resolve(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if let Some(path) = &common.formalism_descriptor {
        cfg.formalism_descriptor = Some(path.clone());
    }
    Ok(cfg)
}

fn prepare_out(out: &Path, cfg: &RunConfig) -> Result<()> {
    for sub in ["", "checkpoints", "traces", "reports"] {
        let dir = out.join(sub);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write(&out.join(CONFIG_FILE), &cfg.to_toml()?)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn gen_data(args: &GenDataArgs) -> Result<CoverageReport> {
    let mut cfg = resolve(&args.common)?;
    if let Some(d) = args.max_depth {
        cfg.data.max_depth = d;
    }
    if let Some(t) = args.threshold {
        cfg.data.split_rule = SplitRule::ByTargetLength { threshold: t };
    }
    let (train, test) = generate_mini_scan(&cfg.data).context("generating mini-SCAN")?;
    let out = &args.common.out;
    prepare_out(out, &cfg)?;
    train.write_tsv(out.join("train.tsv"))?;
    test.write_tsv(out.join("test.tsv"))?;
    let report = validate_split(&train, &test, &FormalismDescriptor::builtin(Formalism::Scan))?;
    let total = train.len() + test.len();
    if !args.common.quiet {
        println!("train {} test {} ({:.6} of {total} in train)", train.len(), test.len(), train.len() as f64 / total as f64);
        print!("{report}");
    }
    Ok(report)
}

fn load_split(dir: &Path, name: &str, formalism: Formalism) -> Result<Dataset> {
    let path = dir.join(format!("{name}.tsv"));
    load_tsv(&path, formalism).with_context(|| format!("loading {}", path.display()))
}

/// Result of `train`: the checkpoint path and final parameters.
pub struct Trained {
    pub checkpoint: PathBuf,
    pub params: PolicyParams,
}

pub fn train(args: &TrainArgs) -> Result<Trained> {
    let mut cfg = resolve(&args.common)?;
    if let Some(r) = args.reward {
        cfg.grpo.reward_mode = r.into();
    }
    if let Some(e) = args.epochs {
        cfg.sft.epochs = e;
    }
    if let Some(s) = args.steps {
        cfg.grpo.steps = s;
    }
    if let Some(lr) = args.learning_rate {
        match args.mode {
            Mode::Sft => cfg.sft.learning_rate = lr,
            Mode::Grpo => cfg.grpo.learning_rate = lr,
        }
    }
    let out = &args.common.out;
    let quiet = args.common.quiet;
    match args.mode {
        Mode::Sft => {
            let train = load_split(&args.data, "train", cfg.formalism)?;
            let test_path = args.data.join("test.tsv");
            let test = test_path.exists().then(|| load_split(&args.data, "test", cfg.formalism)).transpose()?;
            let mut sets = vec![&train];
            sets.extend(test.as_ref());
            let vocab = Vocab::from_datasets(&sets)?;
            let init = init_policy(&vocab, &cfg.arch, cfg.seed)?;
            prepare_out(out, &cfg)?;
            let (params, trace) = train_sft_with(&train, &init, &cfg.sft, |epoch, _, loss| {
                if !quiet {
                    println!("epoch {epoch} loss {loss:.6}");
                }
            })?;
            let checkpoint = out.join("checkpoints/sft.ckpt");
            save_checkpoint(&params, &checkpoint)?;
            write(&out.join("traces/sft_loss.csv"), &loss_trace_csv(&trace))?;
            Ok(Trained { checkpoint, params })
        }
        Mode::Grpo => {
            let Some(init_path) = &args.init else {
                bail!("warm-up checkpoint required: pass --init with an SFT checkpoint");
            };
            let init = load_checkpoint(init_path).with_context(|| format!("loading {}", init_path.display()))?;
            let train = load_split(&args.data, "train", cfg.formalism)?;
            let descriptor = cfg.descriptor()?;
            prepare_out(out, &cfg)?;
            let every = cfg.rollout_dump_every;
            let mut dump = String::new();
            let mut observer = |step: usize, p: &PolicyParams, s: &StepStats, groups: &[RolloutGroup]| {
                if every > 0 && step % every == 0 {
                    dump.push_str(&rollout_records(step, p, groups));
                }
                if !quiet && step % 100 == 0 {
                    println!("step {step} reward {:.6} kl {:.6}", s.mean_reward, s.mean_kl);
                }
            };
            let (params, trace) = train_grpo_with(&train, &init, &init, &cfg.grpo, &descriptor, &mut observer)?;
            let checkpoint = out.join("checkpoints/grpo.ckpt");
            save_checkpoint(&params, &checkpoint)?;
            write(&out.join("traces/grpo_trace.csv"), &stats_csv(&trace))?;
            if every > 0 {
                write(&out.join("traces/rollouts.jsonl"), &dump)?;
            }
            Ok(Trained { checkpoint, params })
        }
    }
}

/// Reports produced by `eval`.
#[derive(Debug, Default)]
pub struct EvalOutcome {
    pub report: Option<EvalReport>,
    pub pass_at_k: Vec<(usize, f64)>,
}

pub fn eval(args: &EvalArgs) -> Result<EvalOutcome> {
    let mut cfg = resolve(&args.common)?;
    if let Some(s) = &args.split {
        cfg.eval.split = s.clone();
    }
    if let Some(ks) = &args.pass_k {
        cfg.eval.pass_k = ks.clone();
    }
    cfg.eval.length_buckets |= args.length_buckets;
    ensure!(
        args.checkpoint.is_some() || args.predictions.is_some() || args.trigram_compare.is_some(),
        "nothing to evaluate: pass --checkpoint, --predictions or --trigram-compare"
    );
    ensure!(cfg.eval.pass_k.is_empty() || args.checkpoint.is_some(), "pass@k needs --checkpoint");
    let descriptor = cfg.descriptor()?;
    let out = &args.common.out;
    prepare_out(out, &cfg)?;
    let reports = out.join("reports");
    let show = |text: &str| {
        if !args.common.quiet {
            print!("{text}");
        }
    };
    let mut outcome = EvalOutcome::default();

    let scored = if let Some(path) = &args.checkpoint {
        let data = args.data.as_ref().context("--checkpoint needs --data")?;
        let dataset = load_split(data, &cfg.eval.split, cfg.formalism)?;
        let params = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
        let preds = greedy_predictions(&params, &dataset)?;
        write(&reports.join("predictions.tsv"), &prediction_dump(&dataset, &preds)?)?;
        if !cfg.eval.pass_k.is_empty() {
            outcome.pass_at_k = pass_at_ks(&params, &dataset, &cfg.eval.pass_k, cfg.eval.temperature, cfg.eval.seed)?;
            write(&reports.join("pass_at_k.csv"), &pass_at_k_csv(&outcome.pass_at_k))?;
            show(&pass_at_k_csv(&outcome.pass_at_k));
        }
        Some((preds, dataset.targets()))
    } else if let Some(path) = &args.predictions {
        let records = read_dump(path)?;
        Some(records.into_iter().map(|r| (r.prediction, r.gold)).unzip())
    } else {
        None
    };
    if let Some((preds, golds)) = scored {
        let report = evaluate(&preds, &golds, &descriptor)?;
        write(&reports.join("eval.csv"), &report.to_csv())?;
        show(&report.to_csv());
        if cfg.eval.length_buckets {
            let buckets = length_bucket_report(&preds, &golds)?;
            write(&reports.join("length_buckets.csv"), &buckets.to_csv())?;
            show(&buckets.to_csv());
        }
        outcome.report = Some(report);
    }

    if let Some(dumps) = &args.trigram_compare {
        let data = args.data.as_ref().context("--trigram-compare needs --data for the training targets")?;
        let train = load_split(data, "train", cfg.formalism)?;
        let table = build_trigram_table(&train.targets());
        let systems: Vec<(String, Vec<PredictionRecord>)> = dumps
            .iter()
            .map(|p| Ok((system_name(p), read_dump(p)?)))
            .collect::<Result<_>>()?;
        let (a, b) = (&systems[0].1, &systems[1].1);
        ensure!(
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.source == y.source && x.gold == y.gold),
            "misaligned dumps: {} and {} do not cover the same examples in the same order",
            dumps[0].display(),
            dumps[1].display()
        );
        let rows = copying_comparison(&systems, &table)?;
        write(&reports.join("copying.csv"), &copying_csv(&rows))?;
        show(&copying_csv(&rows));
    }
    Ok(outcome)
}

fn read_dump(path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_prediction_dump(&text).with_context(|| format!("parsing {}", path.display()))
}

fn system_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}
