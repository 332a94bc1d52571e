use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mari::bounds::campaign;
use mari::detector::DetectorKind;
use mari::harness::{self, synth, Corpus, ExperimentConfig, SplitMode, SplitSpec};
use mari::langmodel::checkpoint;
use mari::mariloss::MarIMode;
use mari::unlearner::Method;
use mari::{Exec, Result};

/// Marginal-information unlearning experiments on small character models.
#[derive(Parser, Debug)]
#[command(name = "mari", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert plain text to a JSON-lines corpus, or write the synthetic corpora.
    Ingest(IngestArgs),
    /// Split a corpus into unlearn and retain sentence sets.
    Split(SplitArgs),
    /// Fine-tune the baseline model on the union of both sets.
    Finetune(PhaseArgs),
    /// Fine-tune the gold model on the retain set only.
    Gold(PhaseArgs),
    /// Unlearn the unlearn set from the baseline checkpoint.
    Unlearn(UnlearnArgs),
    /// Print next-token accuracies of a checkpoint on every set.
    Eval(CheckpointArgs),
    /// Run a membership-inference detector against a checkpoint.
    Detect(DetectArgs),
    /// Evaluate the information bounds for a checkpoint, or run a campaign.
    Bounds(BoundsArgs),
    /// Run the full protocol and write every artifact.
    Run(RunArgs),
    /// Build plot-ready CSV tables from stored traces.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Plain-text input; paragraphs become documents.
    #[arg(long, required_unless_present = "synthetic")]
    input: Option<PathBuf>,
    /// JSON-lines output for --input.
    #[arg(long, required_unless_present = "synthetic")]
    output: Option<PathBuf>,
    /// Write train/validation/holdout.jsonl from the sentence generator instead.
    #[arg(long, conflicts_with_all = ["input", "output"])]
    synthetic: bool,
    /// Directory for the synthetic corpora.
    #[arg(long, default_value = "data")]
    out_dir: PathBuf,
    /// Generator seed.
    #[arg(long, default_value_t = synth::SynthSpec::default().seed)]
    seed: u64,
    /// Share of unlearn-side sentences drawn in the retained style.
    #[arg(long, default_value_t = 0.0)]
    overlap: f64,
    /// Number of training sentences.
    #[arg(long, default_value_t = 200)]
    train: usize,
}

#[derive(Args, Debug)]
struct SplitArgs {
    /// JSON-lines corpus to split.
    #[arg(long)]
    input: PathBuf,
    /// Where the unlearn sentences go.
    #[arg(long)]
    unlearn_out: PathBuf,
    /// Where the retain sentences go.
    #[arg(long)]
    retain_out: PathBuf,
    /// alternating or ratio.
    #[arg(long, default_value = "alternating", value_parser = parse_split_mode)]
    mode: SplitMode,
    /// Unlearn fraction for ratio mode.
    #[arg(long, default_value_t = 0.5)]
    fraction: f64,
    /// Shuffle seed for ratio mode.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct PhaseArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the number of fine-tuning epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Override the fine-tuning learning rate.
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args, Debug, Clone)]
struct MethodArgs {
    /// mari, ga, gd, klga or none.
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    /// Weight of the unlearning term, in [0, 1].
    #[arg(long)]
    lambda: Option<f64>,
    /// MarI estimator: token_wise or pooled.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<MarIMode>,
    /// Override the number of unlearning epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Override the unlearning learning rate.
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args, Debug)]
struct UnlearnArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    method: MethodArgs,
    /// Starting checkpoint; defaults to baseline.ckpt in the output directory.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Output checkpoint; defaults to unlearned.ckpt in the output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CheckpointArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Checkpoint to evaluate.
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[command(flatten)]
    target: CheckpointArgs,
    /// min_k or perplexity.
    #[arg(long, value_parser = parse_detector)]
    detector: Option<DetectorKind>,
    /// Fraction of lowest-probability tokens for min_k.
    #[arg(long)]
    k: Option<f64>,
}

#[derive(Args, Debug)]
struct BoundsArgs {
    /// Experiment config (JSON); required unless --campaign is given.
    #[arg(long, required_unless_present = "campaign")]
    config: Option<PathBuf>,
    /// Checkpoint whose marginals define the detection game.
    #[arg(long, required_unless_present = "campaign")]
    checkpoint: Option<PathBuf>,
    /// Deviation ε for the neighborhood bound.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Run a randomized campaign instead: accuracy, self-gap or neighborhood.
    #[arg(long, conflicts_with_all = ["config", "checkpoint"])]
    campaign: Option<String>,
    /// Number of campaign instances.
    #[arg(long, default_value_t = 1000)]
    instances: usize,
    /// Campaign seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    method: MethodArgs,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Output directory of a run.
    #[arg(long)]
    dir: PathBuf,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: mari::Error| e.to_string())
}

fn parse_mode(s: &str) -> std::result::Result<MarIMode, String> {
    s.parse().map_err(|e: mari::Error| e.to_string())
}

fn parse_detector(s: &str) -> std::result::Result<DetectorKind, String> {
    s.parse().map_err(|e: mari::Error| e.to_string())
}

fn parse_split_mode(s: &str) -> std::result::Result<SplitMode, String> {
    match s {
        "alternating" => Ok(SplitMode::Alternating),
        "ratio" => Ok(SplitMode::Ratio),
        other => Err(format!("unknown split mode {other:?}")),
    }
}

impl MethodArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        let u = &mut cfg.unlearn;
        if let Some(m) = self.method {
            u.method = m;
        }
        if let Some(l) = self.lambda {
            u.lambda = l;
        }
        if let Some(m) = self.mode {
            u.mode = m;
        }
        if let Some(e) = self.epochs {
            u.epochs = e;
        }
        if let Some(lr) = self.lr {
            u.lr = lr;
        }
        u.validate()
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let corpus = Corpus::new(lines.iter().cloned(), path.display().to_string())?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| mari::Error::Io {
            path: dir.into(),
            source: e,
        })?;
    }
    harness::write_atomic(path, corpus.to_jsonl().as_bytes())
}

fn load_ckpt(path: &Path) -> Result<mari::langmodel::ModelCheckpoint> {
    checkpoint::load(path)
}

fn ingest(args: IngestArgs) -> Result<()> {
    if args.synthetic {
        let spec = synth::SynthSpec {
            train_sentences: args.train,
            overlap: args.overlap,
            seed: args.seed,
            ..synth::SynthSpec::default()
        };
        let c = synth::generate(&spec);
        write_lines(&args.out_dir.join("train.jsonl"), &c.train)?;
        write_lines(&args.out_dir.join("validation.jsonl"), &c.validation)?;
        write_lines(&args.out_dir.join("holdout.jsonl"), &c.holdout)?;
        return Ok(());
    }
    let (input, output) = (
        args.input.expect("clap enforces"),
        args.output.expect("clap enforces"),
    );
    let text = std::fs::read_to_string(&input).map_err(|e| mari::Error::Io {
        path: input.clone(),
        source: e,
    })?;
    let corpus = Corpus::from_plain_text(&text, input.display().to_string())?;
    harness::write_atomic(&output, corpus.to_jsonl().as_bytes())
}

fn split(args: SplitArgs) -> Result<()> {
    let sentences = Corpus::load_jsonl(&args.input)?.sentences();
    let spec = SplitSpec {
        mode: args.mode,
        unlearn_fraction: args.fraction,
        seed: args.seed,
    };
    let (u, r) = harness::make_split(&sentences, &spec)?;
    write_lines(&args.unlearn_out, &u)?;
    write_lines(&args.retain_out, &r)
}

fn phase(args: PhaseArgs, gold: bool) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(e) = args.epochs {
        cfg.finetune.epochs = e;
    }
    if let Some(lr) = args.lr {
        cfg.finetune.lr = lr;
    }
    cfg.finetune.validate()?;
    let data = harness::prepare(&cfg)?;
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| mari::Error::Io {
        path: out.clone(),
        source: e,
    })?;
    let (name, (ckpt, trace)) = if gold {
        ("gold", harness::train_gold(&cfg, &data)?)
    } else {
        ("baseline", harness::train_baseline(&cfg, &data)?)
    };
    harness::experiment::save_checkpoint(&ckpt, &out.join(format!("{name}.ckpt")))?;
    harness::write_atomic(
        &out.join(harness::experiment::trace_file(name)),
        trace.to_csv().as_bytes(),
    )?;
    print_json(&harness::evaluate(&ckpt, &data)?)
}

fn unlearn(args: UnlearnArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    args.method.apply(&mut cfg)?;
    let data = harness::prepare(&cfg)?;
    let out = cfg.output_dir.clone();
    let baseline = load_ckpt(&args.baseline.unwrap_or_else(|| out.join("baseline.ckpt")))?;
    let (ckpt, trace) = harness::run_unlearning(&baseline, &data, &cfg.unlearn)?;
    harness::experiment::save_checkpoint(
        &ckpt,
        &args.output.unwrap_or_else(|| out.join("unlearned.ckpt")),
    )?;
    let name = format!("unlearn_{}", cfg.unlearn.method);
    harness::write_atomic(
        &out.join(harness::experiment::trace_file(&name)),
        trace.to_csv().as_bytes(),
    )?;
    print_json(&harness::evaluate(&ckpt, &data)?)
}

fn eval(args: CheckpointArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let data = harness::prepare(&cfg)?;
    print_json(&harness::evaluate(&load_ckpt(&args.checkpoint)?, &data)?)
}

fn detect(args: DetectArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.target.config)?;
    if let Some(d) = args.detector {
        cfg.detector.detector = d;
    }
    if let Some(k) = args.k {
        cfg.detector.k_fraction = k;
    }
    let data = harness::prepare(&cfg)?;
    print_json(&harness::detect_model(
        &load_ckpt(&args.target.checkpoint)?,
        &data,
        &cfg.detector,
    )?)
}

fn bounds(args: BoundsArgs) -> Result<()> {
    if let Some(kind) = args.campaign {
        let exec = Exec::default();
        return match kind.as_str() {
            "accuracy" => print_json(&campaign::accuracy_campaign(
                args.instances,
                args.seed,
                exec,
            )?),
            "self_gap" => print_json(&campaign::self_gap_campaign(
                args.instances,
                args.seed,
                exec,
            )?),
            "neighborhood" => {
                for row in
                    campaign::neighborhood_campaign(args.instances, 64, 10_000, args.seed, exec)?
                {
                    println!("{}", serde_json::to_string(&row)?);
                }
                Ok(())
            }
            other => Err(mari::Error::Config(format!(
                "unknown campaign {other:?}; expected accuracy, self_gap or neighborhood"
            ))),
        };
    }
    let cfg = ExperimentConfig::load(&args.config.expect("clap enforces"))?;
    let data = harness::prepare(&cfg)?;
    let ckpt = load_ckpt(&args.checkpoint.expect("clap enforces"))?;
    let report = harness::bounds_for(&ckpt, &data, args.epsilon.unwrap_or(cfg.bounds_epsilon))?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    args.method.apply(&mut cfg)?;
    print_json(&harness::run_experiment(&cfg)?)
}

fn report(args: ReportArgs) -> Result<()> {
    harness::write_report(&args.dir)?;
    println!("{}", args.dir.join(harness::report::CURVES_FILE).display());
    println!("{}", args.dir.join(harness::report::BARS_FILE).display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            // help and version go to stdout, usage errors to stderr
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Split(a) => split(a),
        Command::Finetune(a) => phase(a, false),
        Command::Gold(a) => phase(a, true),
        Command::Unlearn(a) => unlearn(a),
        Command::Eval(a) => eval(a),
        Command::Detect(a) => detect(a),
        Command::Bounds(a) => bounds(a),
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
