use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::corpus::Corpus;
use super::split::make_split;
use crate::bounds::{BoundReport, DetectionGame};
use crate::detector::{detect, DetectionReport, DetectorConfig};
use crate::error::{Error, Result};
use crate::langmodel::{
    averaged_marginals, checkpoint, Arch, ModelCheckpoint, SequenceBatch, SourceTag, TokenId,
    Vocabulary, PAD_ID,
};
use crate::mariloss::mixture_alpha;
use crate::unlearner::{
    finetune_monitored, next_token_accuracy, unlearn_monitored, unpadded, EvalSets, Method,
    TrainTrace, UnlearnConfig,
};

/// Tokenized sets for one experiment.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub vocab: Vocabulary,
    pub unlearn: SequenceBatch,
    pub retain: SequenceBatch,
    pub validation: SequenceBatch,
    pub holdout: SequenceBatch,
}

impl PreparedData {
    /// Union of both training sets, unlearn set first.
    pub fn union(&self) -> SequenceBatch {
        self.unlearn
            .concat(&self.retain)
            .expect("both sets share seq_len")
    }

    pub fn eval_sets(&self) -> EvalSets<'_> {
        EvalSets {
            retain: &self.retain,
            unlearn: &self.unlearn,
            validation: &self.validation,
        }
    }
}

fn encode_all(vocab: &Vocabulary, texts: &[String], seq_len: usize) -> Result<SequenceBatch> {
    let seqs = texts
        .iter()
        .map(|t| vocab.encode(t))
        .collect::<Result<Vec<_>>>()?;
    SequenceBatch::packed(&seqs, seq_len, PAD_ID)
}

/// Loads the three corpora, splits the training sentences and tokenizes
/// everything with one vocabulary built over all of them.
pub fn prepare(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let train = Corpus::load_jsonl(&cfg.train)?.sentences();
    let validation = Corpus::load_jsonl(&cfg.validation)?.sentences();
    let holdout = Corpus::load_jsonl(&cfg.holdout)?.sentences();
    let (u, r) = make_split(&train, &cfg.split)?;
    let vocab = Vocabulary::build(
        cfg.vocab,
        train
            .iter()
            .chain(&validation)
            .chain(&holdout)
            .map(String::as_str),
    )?;
    Ok(PreparedData {
        unlearn: encode_all(&vocab, &u, cfg.seq_len)?,
        retain: encode_all(&vocab, &r, cfg.seq_len)?,
        validation: encode_all(&vocab, &validation, cfg.seq_len)?,
        holdout: encode_all(&vocab, &holdout, cfg.seq_len)?,
        vocab,
    })
}

pub fn initial_model(cfg: &ExperimentConfig, vocab: &Vocabulary) -> Result<ModelCheckpoint> {
    let m = cfg.model;
    ModelCheckpoint::init(
        Arch::new(m.context_len, m.embed_dim, m.hidden_dim, vocab.size()),
        m.init_seed,
    )
}

/// Fine-tunes a fresh model on the union of both training sets.
pub fn train_baseline(
    cfg: &ExperimentConfig,
    data: &PreparedData,
) -> Result<(ModelCheckpoint, TrainTrace)> {
    let init = initial_model(cfg, &data.vocab)?;
    finetune_monitored(&init, &data.union(), &data.eval_sets(), &cfg.finetune)
}

/// Fine-tunes a fresh model on the retain set only, with the same budget.
pub fn train_gold(
    cfg: &ExperimentConfig,
    data: &PreparedData,
) -> Result<(ModelCheckpoint, TrainTrace)> {
    let init = initial_model(cfg, &data.vocab)?;
    finetune_monitored(&init, &data.retain, &data.eval_sets(), &cfg.finetune)
}

pub fn run_unlearning(
    baseline: &ModelCheckpoint,
    data: &PreparedData,
    ucfg: &UnlearnConfig,
) -> Result<(ModelCheckpoint, TrainTrace)> {
    unlearn_monitored(
        baseline,
        baseline,
        &data.retain,
        &data.unlearn,
        &data.validation,
        &data.holdout,
        ucfg,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub acc_unlearn: f64,
    pub acc_retain: f64,
    pub acc_validation: f64,
    pub acc_holdout: f64,
}

pub fn evaluate(ckpt: &ModelCheckpoint, data: &PreparedData) -> Result<ModelMetrics> {
    let pad = Some(PAD_ID);
    Ok(ModelMetrics {
        acc_unlearn: next_token_accuracy(ckpt, &data.unlearn, pad)?,
        acc_retain: next_token_accuracy(ckpt, &data.retain, pad)?,
        acc_validation: next_token_accuracy(ckpt, &data.validation, pad)?,
        acc_holdout: next_token_accuracy(ckpt, &data.holdout, pad)?,
    })
}

/// Membership detection with the unlearn set as members and the holdout set
/// as non-members, on unpadded sentences.
pub fn detect_model(
    ckpt: &ModelCheckpoint,
    data: &PreparedData,
    det: &DetectorConfig,
) -> Result<DetectionReport> {
    let members: Vec<Vec<TokenId>> = unpadded(&data.unlearn);
    let nonmembers: Vec<Vec<TokenId>> = unpadded(&data.holdout);
    detect(ckpt, &members, &nonmembers, det)
}

/// Bound quantities for the game induced by a model's retain and unlearn
/// marginals.
pub fn bounds_for(
    ckpt: &ModelCheckpoint,
    data: &PreparedData,
    epsilon: f64,
) -> Result<BoundReport> {
    let pr = averaged_marginals(ckpt, &data.retain, SourceTag::Retain)?;
    let pu = averaged_marginals(ckpt, &data.unlearn, SourceTag::Unlearn)?;
    let alpha = mixture_alpha(data.retain.len(), data.unlearn.len())?;
    let game = DetectionGame::from_mixture(pr, pu, alpha, 0.5)?;
    BoundReport::evaluate(&game, epsilon)
}

/// Writes `bytes` to `path` through `path.partial`, renamed on success.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut partial = path.as_os_str().to_owned();
    partial.push(".partial");
    let partial = PathBuf::from(partial);
    std::fs::write(&partial, bytes).map_err(|e| Error::io(&partial, e))?;
    std::fs::rename(&partial, path).map_err(|e| Error::io(path, e))
}

pub fn save_checkpoint(ckpt: &ModelCheckpoint, path: &Path) -> Result<()> {
    write_atomic(path, &checkpoint::to_bytes(ckpt)?)
}

fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    #[serde(flatten)]
    pub metrics: ModelMetrics,
    pub auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: Method,
    pub vocab_size: usize,
    pub unlearn_size: usize,
    pub retain_size: usize,
    pub validation_size: usize,
    pub holdout_size: usize,
    pub baseline: ModelSummary,
    pub gold: ModelSummary,
    pub unlearned: ModelSummary,
    /// Final epoch of the main unlearning run and whether a stop rule ended it.
    pub unlearn_epochs: usize,
    pub stopped_early: bool,
    pub comparisons: BTreeMap<String, ModelSummary>,
}

impl RunSummary {
    /// Accuracy points the retain set lost between the baseline and `model`.
    pub fn retain_drop(&self, model: &ModelSummary) -> f64 {
        self.baseline.metrics.acc_retain - model.metrics.acc_retain
    }
}

fn summarize(
    ckpt: &ModelCheckpoint,
    data: &PreparedData,
    det: &DetectorConfig,
) -> Result<(ModelSummary, DetectionReport)> {
    let report = detect_model(ckpt, data, det)?;
    Ok((
        ModelSummary {
            metrics: evaluate(ckpt, data)?,
            auc: report.auc,
        },
        report,
    ))
}

pub fn trace_file(name: &str) -> String {
    format!("trace_{name}.csv")
}

/// The full protocol: baseline on the union, gold on the retain set, the
/// configured unlearning method from the baseline, and every comparison
/// method under the same budget. Writes all artifacts into
/// `cfg.output_dir` and returns the summary that was written.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let phase = |name: &'static str| move |e: Error| e.in_phase(name);

    let data = prepare(cfg).map_err(phase("prepare"))?;
    save_json(&data.vocab, &out.join("vocab.json")).map_err(phase("prepare"))?;
    save_json(cfg, &out.join("config.json")).map_err(phase("prepare"))?;

    let (baseline, trace) = train_baseline(cfg, &data).map_err(phase("baseline"))?;
    save_checkpoint(&baseline, &out.join("baseline.ckpt")).map_err(phase("baseline"))?;
    write_atomic(&out.join(trace_file("baseline")), trace.to_csv().as_bytes())
        .map_err(phase("baseline"))?;

    let (gold, trace) = train_gold(cfg, &data).map_err(phase("gold"))?;
    save_checkpoint(&gold, &out.join("gold.ckpt")).map_err(phase("gold"))?;
    write_atomic(&out.join(trace_file("gold")), trace.to_csv().as_bytes())
        .map_err(phase("gold"))?;

    let (unlearned, trace) =
        run_unlearning(&baseline, &data, &cfg.unlearn).map_err(phase("unlearn"))?;
    save_checkpoint(&unlearned, &out.join("unlearned.ckpt")).map_err(phase("unlearn"))?;
    let unlearn_name = format!("unlearn_{}", cfg.unlearn.method);
    write_atomic(
        &out.join(trace_file(&unlearn_name)),
        trace.to_csv().as_bytes(),
    )
    .map_err(phase("unlearn"))?;
    let unlearn_epochs = trace.last().map_or(0, |r| r.epoch);
    let stopped_early = trace.stopped_at.is_some();

    let mut comparisons = BTreeMap::new();
    let mut compare_ckpts = Vec::new();
    for &method in &cfg.compare_methods {
        let ucfg = UnlearnConfig {
            method,
            ..cfg.unlearn.clone()
        };
        let (model, trace) = run_unlearning(&baseline, &data, &ucfg).map_err(phase("compare"))?;
        write_atomic(
            &out.join(trace_file(&format!("unlearn_{method}"))),
            trace.to_csv().as_bytes(),
        )
        .map_err(phase("compare"))?;
        compare_ckpts.push((method, model));
    }

    let det = &cfg.detector;
    let detect_all = |name: &str, ckpt: &ModelCheckpoint| -> Result<ModelSummary> {
        let (summary, report) = summarize(ckpt, &data, det)?;
        save_json(&report, &out.join(format!("detect_{name}.json")))?;
        Ok(summary)
    };
    let baseline_s = detect_all("baseline", &baseline).map_err(phase("detect"))?;
    let gold_s = detect_all("gold", &gold).map_err(phase("detect"))?;
    let unlearned_s = detect_all("unlearned", &unlearned).map_err(phase("detect"))?;
    for (method, model) in &compare_ckpts {
        let s = detect_all(method.name(), model).map_err(phase("detect"))?;
        comparisons.insert(method.name().to_string(), s);
    }

    let report = bounds_for(&unlearned, &data, cfg.bounds_epsilon).map_err(phase("bounds"))?;
    let mut line = serde_json::to_string(&report)?;
    line.push('\n');
    write_atomic(&out.join("bounds.jsonl"), line.as_bytes()).map_err(phase("bounds"))?;

    let summary = RunSummary {
        method: cfg.unlearn.method,
        vocab_size: data.vocab.size(),
        unlearn_size: data.unlearn.len(),
        retain_size: data.retain.len(),
        validation_size: data.validation.len(),
        holdout_size: data.holdout.len(),
        baseline: baseline_s,
        gold: gold_s,
        unlearned: unlearned_s,
        unlearn_epochs,
        stopped_early,
        comparisons,
    };
    save_json(&summary, &out.join("summary.json")).map_err(phase("summary"))?;
    Ok(summary)
}
