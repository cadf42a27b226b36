//! The `mvfuse` command line.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error,
//! 4 numeric abort (non-finite loss or gradient).

mod config;

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

pub use config::{CostConfig, DataConfig, EvalConfig, Preset, RunConfig};

use crate::container::Dtype;
use crate::cost::{cost_report, fixtures_table, published_fixtures, ArchSpec, GbUnit, SeqLens};
use crate::data::{gen_synthetic, load_dataset, split_scenes, QASample, Split};
use crate::error::{Error, Result};
use crate::lm::Tokenizer;
use crate::metrics::{evaluate_files, MetricOptions, TextRecord};
use crate::model::Model;
use crate::train::{run_stage, Checkpoint, EpochRecord, StagePlan, TrainState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Numeric { .. } => EXIT_NUMERIC,
        Error::Data { .. }
        | Error::Empty(_)
        | Error::Format(_)
        | Error::Io { .. }
        | Error::Json { .. }
        | Error::Dimension { .. } => EXIT_DATA,
    }
}

#[derive(Debug, Parser)]
#[command(name = "mvfuse", version, about = "Multi-view vision-language toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic multi-view QA dataset.
    Synth(SynthArgs),
    /// Run training stage 1, stage 2, or both.
    Train(TrainArgs),
    /// Greedy answers for one split of a dataset.
    Generate(GenerateArgs),
    /// Score predictions against references.
    Eval(EvalArgs),
    /// Parameter, FLOP, and memory accounting.
    Cost(CostArgs),
}

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub scenes: usize,
    #[arg(long, default_value_t = 1)]
    pub frames: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a machine-readable summary here.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    All,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    pub stage: StageArg,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint (required for stage 2).
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Loss trace; defaults to the checkpoint path with a `.csv` extension.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// Dataset manifest, overriding `data.manifest`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Epochs per stage, overriding `train.epochs_per_stage`.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Stop once this many epochs of the current stage are done.
    #[arg(long)]
    pub epoch_limit: Option<usize>,
    /// Skip invalid dataset records instead of failing.
    #[arg(long)]
    pub lenient: bool,
    /// Disable gradient clipping.
    #[arg(long)]
    pub no_clip: bool,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset manifest, overriding `data.manifest` of `--config`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Run configuration supplying the split fractions and seed.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub lenient: bool,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub refs: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Add-one smoothing of the 2- to 4-gram BLEU precisions.
    #[arg(long)]
    pub smooth: bool,
    /// Let METEOR match words after suffix stripping.
    #[arg(long)]
    pub stem: bool,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct CostArgs {
    #[arg(long, value_enum, conflicts_with = "spec")]
    pub preset: Option<Preset>,
    /// Architecture description as JSON.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub s_enc: Option<usize>,
    #[arg(long)]
    pub s_dec: Option<usize>,
    /// Report memory in 2³⁰-byte units instead of 10⁹.
    #[arg(long)]
    pub gib: bool,
    /// Also print the published comparison rows.
    #[arg(long)]
    pub published: bool,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

/// Parses arguments, runs the command, and returns the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match configure_threads().and_then(|_| run(cli)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// `MVFUSE_THREADS` caps the worker pool; unset means one per core.
fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("MVFUSE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("MVFUSE_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Parses `args` (program name first) and runs the command in-process.
pub fn run_args<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    run(cli)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Generate(a) => generate(a),
        Command::Eval(a) => eval(a),
        Command::Cost(a) => cost(a),
    }
}

/// Creates the directory an output file goes into.
fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn synth(a: SynthArgs) -> Result<()> {
    let summary = gen_synthetic(&a.out, a.scenes, a.frames, a.seed)?;
    println!(
        "{} scenes, {} frames, {} QA samples, {} images -> {}",
        summary.scenes,
        summary.frames,
        summary.samples,
        summary.images,
        a.out.display()
    );
    if let Some(p) = &a.json {
        write_json(p, &summary)?;
    }
    Ok(())
}

/// Loads a manifest and keeps the samples of one scene split.
fn load_split(data: &DataConfig, manifest: &Path, split: Split) -> Result<Vec<QASample>> {
    let report = load_dataset(manifest, data.strict)?;
    for e in &report.skipped {
        eprintln!("skipped: {e}");
    }
    let scenes = split_scenes(&report.samples, data.fractions, data.split_seed)?;
    let chosen: Vec<QASample> = scenes.filter(&report.samples, split).into_iter().cloned().collect();
    if chosen.is_empty() {
        let name = split
            .to_possible_value()
            .map(|v| v.get_name().to_string())
            .unwrap_or_default();
        return Err(Error::Empty(format!("the {name} split has no samples")));
    }
    Ok(chosen)
}

fn loss_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from("stage,epoch,mean_loss,lr\n");
    for r in records {
        out.push_str(&format!("{},{},{},{}\n", r.stage, r.epoch, r.mean_loss, r.lr));
    }
    out
}

fn stage_one_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
    let name = match out.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}.stage1.{ext}"),
        None => format!("{stem}.stage1"),
    };
    out.with_file_name(name)
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    checkpoint: &'a Path,
    loss_csv: &'a Path,
    stage: u8,
    epoch: usize,
    stage_complete: bool,
    samples: usize,
    vocab: usize,
    params: usize,
    losses: &'a [EpochRecord],
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(d) = a.data {
        cfg.data.manifest = Some(d);
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs_per_stage = e;
    }
    if a.no_clip {
        cfg.train.clip_norm = None;
    }
    if a.lenient {
        cfg.data.strict = false;
    }
    cfg.validate()?;
    if a.stage == StageArg::Two && a.resume.is_none() {
        return Err(Error::Config("stage 2 needs --resume with a stage-1 checkpoint".into()));
    }
    let resume = match &a.resume {
        Some(p) if !p.is_file() => return Err(Error::Config(format!("--resume {} does not exist", p.display()))),
        Some(p) => Some(Checkpoint::load(p)?),
        None => None,
    };
    let manifest = cfg
        .data
        .manifest
        .clone()
        .ok_or_else(|| Error::Config("no dataset: set data.manifest or pass --data".into()))?;

    let samples = load_split(&cfg.data, &manifest, Split::Train)?;
    ensure_parent(&a.out)?;
    if let Some(p) = &a.loss_csv {
        ensure_parent(p)?;
    }
    let mut ck = match resume {
        Some(ck) => {
            if ck.train != cfg.train {
                return Err(Error::Config(
                    "the train section differs from the checkpoint's training configuration".into(),
                ));
            }
            ck
        }
        None => {
            let vocab = Tokenizer::build(samples.iter().flat_map(|s| [s.question.as_str(), s.answer.as_str()]));
            let mut spec = cfg.model.clone();
            if spec.vocab_size != 0 && spec.vocab_size != vocab.len() {
                return Err(Error::Config(format!(
                    "model.vocab_size {} does not match the training vocabulary ({} tokens); use 0",
                    spec.vocab_size,
                    vocab.len()
                )));
            }
            spec.vocab_size = vocab.len();
            let mut model = Model::new(&spec, cfg.train.seed)?;
            cfg.train.apply_variant(&mut model)?;
            Checkpoint {
                model,
                vocab,
                train: cfg.train.clone(),
                state: TrainState::new(cfg.train.seed),
                dtype: Dtype::F64,
            }
        }
    };

    let refs: Vec<&QASample> = samples.iter().collect();
    let examples = ck.model.prepare(&ck.vocab, &refs)?;
    let stages: &[u8] = match a.stage {
        StageArg::One => &[1],
        StageArg::Two => &[2],
        StageArg::All => &[1, 2],
    };
    for &stage in stages {
        let done = ck.state.stage > stage || (ck.state.stage == stage && ck.state.stage_complete(&ck.train));
        if done {
            continue;
        }
        let plan = StagePlan::new(stage, ck.train.lora.is_some())?;
        let before = ck.state.losses.len();
        run_stage(&mut ck.model, &plan, &ck.train, &examples, &mut ck.state, a.epoch_limit)?;
        for r in &ck.state.losses[before..] {
            println!(
                "stage {} epoch {} loss {:.6} lr {:.3e}",
                r.stage, r.epoch, r.mean_loss, r.lr
            );
        }
        if !ck.state.stage_complete(&ck.train) {
            break;
        }
        if stage == 1 && stages.len() > 1 {
            ck.save(&stage_one_path(&a.out))?;
        }
    }
    ck.save(&a.out)?;
    let csv_path = a.loss_csv.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    std::fs::write(&csv_path, loss_csv(&ck.state.losses)).map_err(|e| Error::io(&csv_path, e))?;
    println!(
        "checkpoint {} (stage {}, epoch {}), loss trace {}",
        a.out.display(),
        ck.state.stage,
        ck.state.epoch,
        csv_path.display()
    );
    if let Some(p) = &a.json {
        write_json(
            p,
            &TrainSummary {
                checkpoint: &a.out,
                loss_csv: &csv_path,
                stage: ck.state.stage,
                epoch: ck.state.epoch,
                stage_complete: ck.state.stage_complete(&ck.train),
                samples: examples.len(),
                vocab: ck.vocab.len(),
                params: ck.model.num_params(),
                losses: &ck.state.losses,
            },
        )?;
    }
    Ok(())
}

/// Greedy answers for `samples`, in order.
pub fn predict(ck: &Checkpoint, samples: &[QASample], max_len: usize) -> Result<Vec<TextRecord>> {
    samples
        .par_iter()
        .map(|s| {
            let views = ck.model.view_embeddings(&s.load_views()?)?;
            let ex = ck.model.example(&ck.vocab, s.id.clone(), views, &s.question, "");
            let ids = ck.model.generate(&ex.views, &ex.question, max_len)?;
            Ok(TextRecord::single(s.id.clone(), ck.vocab.detokenize(&ids)))
        })
        .collect()
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = a.data {
        cfg.data.manifest = Some(d);
    }
    if a.lenient {
        cfg.data.strict = false;
    }
    cfg.validate()?;
    if !a.ckpt.is_file() {
        return Err(Error::Config(format!("--ckpt {} does not exist", a.ckpt.display())));
    }
    let manifest = cfg
        .data
        .manifest
        .clone()
        .ok_or_else(|| Error::Config("no dataset: pass --data or set data.manifest".into()))?;
    let ck = Checkpoint::load(&a.ckpt)?;
    let samples = load_split(&cfg.data, &manifest, a.split)?;
    let max_len = a.max_len.unwrap_or(ck.train.max_answer_len);
    let preds = predict(&ck, &samples, max_len)?;
    write_json(&a.out, &preds)?;
    println!("{} predictions -> {}", preds.len(), a.out.display());
    if let Some(p) = &a.json {
        write_json(p, &serde_json::json!({ "predictions": preds.len(), "out": a.out }))?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let pred = a
        .pred
        .or(cfg.eval.predictions.clone())
        .ok_or_else(|| Error::Config("pass --pred or set eval.predictions".into()))?;
    let refs = a
        .refs
        .or(cfg.eval.references.clone())
        .ok_or_else(|| Error::Config("pass --refs or set eval.references".into()))?;
    let base = cfg.eval.options();
    let opts = MetricOptions {
        bleu_smoothing: a.smooth || base.bleu_smoothing,
        meteor_stem: a.stem || base.meteor_stem,
    };
    let report = evaluate_files(&pred, &refs, opts)?;
    print!("{}", report.table());
    if let Some(p) = &a.json {
        std::fs::write(p, report.to_json() + "\n").map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

fn cost(a: CostArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let arch: Option<ArchSpec> = match (&a.spec, a.preset) {
        (Some(p), _) => Some(ArchSpec::load(p)?),
        (None, Some(preset)) => Some(cfg.arch(preset)),
        (None, None) => match (&cfg.cost.arch, cfg.cost.preset) {
            (Some(arch), _) => Some(arch.clone()),
            (None, Some(preset)) => Some(cfg.arch(preset)),
            (None, None) if a.published => None,
            (None, None) => return Err(Error::Config("choose --preset or --spec".into())),
        },
    };
    let seq = SeqLens {
        s_enc: a.s_enc.unwrap_or(cfg.cost.seq.s_enc),
        s_dec: a.s_dec.unwrap_or(cfg.cost.seq.s_dec),
    };
    let unit = if a.gib { GbUnit::Binary } else { cfg.cost.unit };
    let report = arch.map(|arch| cost_report(&arch, seq, unit)).transpose()?;
    if let Some(r) = &report {
        print!("{}", r.table());
    }
    let fixtures = if a.published {
        let rows = published_fixtures(seq, unit)?;
        if report.is_some() {
            println!();
        }
        print!("{}", fixtures_table(&rows));
        Some(rows)
    } else {
        None
    };
    std::io::stdout().flush().ok();
    if let Some(p) = &a.json {
        write_json(p, &serde_json::json!({ "report": report, "published": fixtures }))?;
    }
    Ok(())
}
