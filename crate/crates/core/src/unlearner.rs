//! Training objectives and loops: plain fine-tuning, MarI unlearning and the
//! gradient-ascent family of baselines.
//!
//! Every objective is `(1−λ)·utility + λ·unlearn` except plain gradient
//! ascent, which has no utility term. Gradients are exact and flow through
//! the same [`ForwardPass::backward`] used by the finite-difference tests.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::detector::{detect, DetectorConfig, DetectorKind, Orientation};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::infomath::kl_raw;
use crate::langmodel::{
    clip_grad_norm, ForwardPass, ModelCheckpoint, SequenceBatch, TokenId, PAD_ID,
};
use crate::mariloss::{mari_rows_with_grad, mixture_alpha, MarIMode};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Mari,
    Ga,
    Gd,
    Klga,
    None,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mari => "mari",
            Method::Ga => "ga",
            Method::Gd => "gd",
            Method::Klga => "klga",
            Method::None => "none",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mari" => Ok(Method::Mari),
            "ga" => Ok(Method::Ga),
            "gd" => Ok(Method::Gd),
            "klga" | "kl_ga" | "kl-ga" => Ok(Method::Klga),
            "none" => Ok(Method::None),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

/// How the mixture weight is chosen for each MarI step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaPolicy {
    /// From the sizes of the two minibatches.
    #[default]
    Batch,
    /// From the sizes of the full retain and unlearn sets.
    Global,
}

/// When an unlearning run ends before `epochs`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StopPolicy {
    /// Stop once validation accuracy is below its epoch-0 value by more than
    /// `early_stop_val_drop`.
    #[default]
    ValidationDrop,
    /// Stop once min-k% cannot separate the unlearn set from the non-member
    /// set: AUC ≥ 0.5 − `margin` under non-member-positive orientation.
    DetectorFails { k_fraction: f64, margin: f64 },
    /// Always run every epoch.
    Never,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnlearnConfig {
    pub method: Method,
    pub lambda: f64,
    pub mode: MarIMode,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub early_stop_val_drop: f64,
    pub stop: StopPolicy,
    pub alpha: AlphaPolicy,
    /// Global gradient-norm cap per step; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Leave padding targets out of the accuracy columns.
    pub exclude_pad: bool,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        Self {
            method: Method::Mari,
            lambda: 0.5,
            mode: MarIMode::TokenWise,
            lr: 0.1,
            epochs: 10,
            batch_size: 16,
            seed: 0,
            early_stop_val_drop: 0.03,
            stop: StopPolicy::ValidationDrop,
            alpha: AlphaPolicy::Batch,
            clip_norm: Some(5.0),
            exclude_pad: true,
        }
    }
}

impl UnlearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda = {} must lie in [0, 1]",
                self.lambda
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr = {} must be positive", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.early_stop_val_drop >= 0.0 && self.early_stop_val_drop.is_finite()) {
            return Err(Error::Config(
                "early_stop_val_drop must be finite and ≥ 0".into(),
            ));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("clip_norm = {c} must be positive")));
            }
        }
        if let StopPolicy::DetectorFails { k_fraction, margin } = self.stop {
            if !(k_fraction > 0.0 && k_fraction <= 1.0) || !(0.0..0.5).contains(&margin) {
                return Err(Error::Config(
                    "detector stop needs k in (0,1] and margin in [0, 0.5)".into(),
                ));
            }
        }
        Ok(())
    }

    fn pad(&self) -> Option<TokenId> {
        self.exclude_pad.then_some(PAD_ID)
    }
}

/// One evaluated objective.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveValue {
    pub total: f64,
    pub utility: f64,
    pub unlearn: f64,
    pub grad: Vec<f64>,
}

// ---------------------------------------------------------------------------
// loss pieces
// ---------------------------------------------------------------------------

/// `(1/T) Σ_t KL(p̄_t ‖ q̄_t)` on raw marginal rows and its gradient w.r.t.
/// the rows of `p̄`.
fn utility_rows_with_grad(p: &[Vec<f64>], q: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "T = {} vs {}",
            p.len(),
            q.len()
        )));
    }
    let inv_t = 1.0 / p.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for (pt, qt) in p.iter().zip(q) {
        value += kl_raw(pt, qt)?;
        grad.push(
            pt.iter()
                .zip(qt)
                .map(|(&a, &b)| {
                    if a > 0.0 {
                        inv_t * ((a / b).ln() + 1.0)
                    } else {
                        0.0
                    }
                })
                .collect(),
        );
    }
    Ok((value * inv_t, grad))
}

fn check_frozen(ckpt: &ModelCheckpoint, frozen: &ModelCheckpoint) -> Result<()> {
    ckpt.same_arch(frozen)
}

/// Utility term: KL from the frozen model's retain marginals to the current
/// model's retain marginals, averaged over positions.
pub fn utility_kl_loss(
    ckpt: &ModelCheckpoint,
    frozen: &ModelCheckpoint,
    retain_batch: &SequenceBatch,
) -> Result<f64> {
    utility_kl_value_and_gradient(ckpt, frozen, retain_batch, Exec::default()).map(|(v, _)| v)
}

pub fn utility_kl_value_and_gradient(
    ckpt: &ModelCheckpoint,
    frozen: &ModelCheckpoint,
    retain_batch: &SequenceBatch,
    exec: Exec,
) -> Result<(f64, Vec<f64>)> {
    check_frozen(ckpt, frozen)?;
    if retain_batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let pass = ForwardPass::run(ckpt, retain_batch, exec)?;
    let reference = ForwardPass::run(frozen, retain_batch, exec)?.marginal_rows();
    let (value, rows) = utility_rows_with_grad(&pass.marginal_rows(), &reference)?;
    let grad = pass.backward(ckpt, &pass.spread_marginal_grad(&rows), exec)?;
    Ok((value, grad))
}

/// Mean next-token cross-entropy of `batch` and its parameter gradient.
pub fn cross_entropy_value_and_gradient(
    ckpt: &ModelCheckpoint,
    batch: &SequenceBatch,
    exec: Exec,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let pass = ForwardPass::run(ckpt, batch, exec)?;
    let (value, up) = pass.cross_entropy(batch);
    Ok((value, pass.backward(ckpt, &up, exec)?))
}

pub fn cross_entropy_loss(ckpt: &ModelCheckpoint, batch: &SequenceBatch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let pass = ForwardPass::run(ckpt, batch, Exec::default())?;
    Ok(pass.cross_entropy(batch).0)
}

fn batch_alpha(retain: &SequenceBatch, unlearn: &SequenceBatch) -> Result<f64> {
    if retain.is_empty() || unlearn.is_empty() {
        return Err(Error::EmptyBatch);
    }
    mixture_alpha(retain.len(), unlearn.len())
}

// ---------------------------------------------------------------------------
// objectives
// ---------------------------------------------------------------------------

/// `(1−λ)·utility_kl + λ·MarI` with its exact gradient; MarI's gradient
/// flows through both the retain and the unlearn marginals.
pub fn mari_objective(
    ckpt: &ModelCheckpoint,
    frozen: &ModelCheckpoint,
    retain_batch: &SequenceBatch,
    unlearn_batch: &SequenceBatch,
    cfg: &UnlearnConfig,
) -> Result<ObjectiveValue> {
    let alpha = batch_alpha(retain_batch, unlearn_batch)?;
    mari_objective_with_alpha(
        ckpt,
        frozen,
        retain_batch,
        unlearn_batch,
        cfg,
        alpha,
        Exec::default(),
    )
}

pub(crate) fn mari_objective_with_alpha(
    ckpt: &ModelCheckpoint,
    frozen: &ModelCheckpoint,
    retain_batch: &SequenceBatch,
    unlearn_batch: &SequenceBatch,
    cfg: &UnlearnConfig,
    alpha: f64,
    exec: Exec,
) -> Result<ObjectiveValue> {
    check_frozen(ckpt, frozen)?;
    if retain_batch.is_empty() || unlearn_batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let lambda = cfg.lambda;
    let pass_r = ForwardPass::run(ckpt, retain_batch, exec)?;
    let pass_u = ForwardPass::run(ckpt, unlearn_batch, exec)?;
    let reference = ForwardPass::run(frozen, retain_batch, exec)?.marginal_rows();
    let rows_r = pass_r.marginal_rows();

    let (utility, du_rows) = utility_rows_with_grad(&rows_r, &reference)?;
    let (unlearn, dr_mari, du_mari) =
        mari_rows_with_grad(&rows_r, &pass_u.marginal_rows(), alpha, cfg.mode)?;

    let retain_rows: Vec<Vec<f64>> = du_rows
        .iter()
        .zip(&dr_mari)
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (1.0 - lambda) * x + lambda * y)
                .collect()
        })
        .collect();
    let unlearn_rows: Vec<Vec<f64>> = du_mari
        .iter()
        .map(|r| r.iter().map(|x| lambda * x).collect())
        .collect();

    let mut grad = pass_r.backward(ckpt, &pass_r.spread_marginal_grad(&retain_rows), exec)?;
    let gu = pass_u.backward(ckpt, &pass_u.spread_marginal_grad(&unlearn_rows), exec)?;
    for (g, x) in grad.iter_mut().zip(&gu) {
        *g += x;
    }
    Ok(ObjectiveValue {
        total: (1.0 - lambda) * utility + lambda * unlearn,
        utility,
        unlearn,
        grad,
    })
}

/// GA, GD and KL-GA. The reported `unlearn` term is the negated unlearn-set
/// cross-entropy, the quantity each of them descends on.
pub fn baseline_objective(
    ckpt: &ModelCheckpoint,
    frozen: &ModelCheckpoint,
    retain_batch: &SequenceBatch,
    unlearn_batch: &SequenceBatch,
    cfg: &UnlearnConfig,
) -> Result<ObjectiveValue> {
    baseline_objective_with(
        ckpt,
        frozen,
        retain_batch,
        unlearn_batch,
        cfg,
        Exec::default(),
    )
}

pub(crate) fn baseline_objective_with(
    ckpt: &ModelCheckpoint,
    frozen: &ModelCheckpoint,
    retain_batch: &SequenceBatch,
    unlearn_batch: &SequenceBatch,
    cfg: &UnlearnConfig,
    exec: Exec,
) -> Result<ObjectiveValue> {
    check_frozen(ckpt, frozen)?;
    if unlearn_batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let lambda = cfg.lambda;
    let pass_u = ForwardPass::run(ckpt, unlearn_batch, exec)?;
    let (ce_u, mut up_u) = pass_u.cross_entropy(unlearn_batch);

    if cfg.method == Method::Ga {
        up_u.scale(-1.0);
        let grad = pass_u.backward(ckpt, &up_u, exec)?;
        return Ok(ObjectiveValue {
            total: -ce_u,
            utility: 0.0,
            unlearn: -ce_u,
            grad,
        });
    }
    if retain_batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let pass_r = ForwardPass::run(ckpt, retain_batch, exec)?;
    let (utility, up_r) = match cfg.method {
        Method::Gd => {
            let (ce_r, mut up) = pass_r.cross_entropy(retain_batch);
            up.scale(1.0 - lambda);
            (ce_r, up)
        }
        Method::Klga => {
            let reference = ForwardPass::run(frozen, retain_batch, exec)?.marginal_rows();
            let (kl, rows) = utility_rows_with_grad(&pass_r.marginal_rows(), &reference)?;
            let mut up = pass_r.spread_marginal_grad(&rows);
            up.scale(1.0 - lambda);
            (kl, up)
        }
        other => {
            return Err(Error::Config(format!(
                "{other} is not a gradient-ascent baseline"
            )));
        }
    };
    up_u.scale(-lambda);
    let mut grad = pass_r.backward(ckpt, &up_r, exec)?;
    let gu = pass_u.backward(ckpt, &up_u, exec)?;
    for (g, x) in grad.iter_mut().zip(&gu) {
        *g += x;
    }
    Ok(ObjectiveValue {
        total: (1.0 - lambda) * utility - lambda * ce_u,
        utility,
        unlearn: -ce_u,
        grad,
    })
}

/// The objective selected by `cfg.method`. `none` is retain-set
/// cross-entropy.
pub fn objective(
    ckpt: &ModelCheckpoint,
    frozen: &ModelCheckpoint,
    retain_batch: &SequenceBatch,
    unlearn_batch: &SequenceBatch,
    cfg: &UnlearnConfig,
) -> Result<ObjectiveValue> {
    let alpha = batch_alpha(retain_batch, unlearn_batch)?;
    objective_with(
        ckpt,
        frozen,
        retain_batch,
        unlearn_batch,
        cfg,
        alpha,
        Exec::default(),
    )
}

fn objective_with(
    ckpt: &ModelCheckpoint,
    frozen: &ModelCheckpoint,
    retain_batch: &SequenceBatch,
    unlearn_batch: &SequenceBatch,
    cfg: &UnlearnConfig,
    alpha: f64,
    exec: Exec,
) -> Result<ObjectiveValue> {
    match cfg.method {
        Method::Mari => {
            mari_objective_with_alpha(ckpt, frozen, retain_batch, unlearn_batch, cfg, alpha, exec)
        }
        Method::Ga | Method::Gd | Method::Klga => {
            baseline_objective_with(ckpt, frozen, retain_batch, unlearn_batch, cfg, exec)
        }
        Method::None => {
            let (ce, grad) = cross_entropy_value_and_gradient(ckpt, retain_batch, exec)?;
            Ok(ObjectiveValue {
                total: ce,
                utility: ce,
                unlearn: 0.0,
                grad,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// accuracy
// ---------------------------------------------------------------------------

/// Fraction of positions whose argmax prediction equals the true token.
/// Ties go to the lowest token id. Targets equal to `pad` are skipped.
pub fn next_token_accuracy(
    ckpt: &ModelCheckpoint,
    batch: &SequenceBatch,
    pad: Option<TokenId>,
) -> Result<f64> {
    next_token_accuracy_with(ckpt, batch, pad, Exec::default())
}

pub fn next_token_accuracy_with(
    ckpt: &ModelCheckpoint,
    batch: &SequenceBatch,
    pad: Option<TokenId>,
    exec: Exec,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let pass = ForwardPass::run(ckpt, batch, exec)?;
    let mut hits = 0usize;
    let mut total = 0usize;
    for b in 0..pass.batch_size() {
        for (t, &target) in batch.sequence(b).iter().enumerate() {
            if Some(target) == pad {
                continue;
            }
            total += 1;
            if argmax(pass.probs(b, t)) == target as usize {
                hits += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok(hits as f64 / total as f64)
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate().skip(1) {
        if x > p[best] {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// traces
// ---------------------------------------------------------------------------

pub const TRACE_HEADER: &str =
    "epoch,loss_total,loss_utility,loss_unlearn,acc_unlearn,acc_retain,acc_validation";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_utility: f64,
    pub loss_unlearn: f64,
    pub acc_unlearn: f64,
    pub acc_retain: f64,
    pub acc_validation: f64,
}

impl TraceRow {
    fn values(&self) -> [f64; 6] {
        [
            self.loss_total,
            self.loss_utility,
            self.loss_unlearn,
            self.acc_unlearn,
            self.acc_retain,
            self.acc_validation,
        ]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
    /// Epoch at which a stop policy ended the run, if any.
    pub stopped_at: Option<usize>,
}

impl TrainTrace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    fn push(&mut self, row: TraceRow) -> Result<()> {
        if let Some(prev) = self.rows.last() {
            if row.epoch <= prev.epoch {
                return Err(Error::domain("trace epochs must increase"));
            }
        }
        if row.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "trace row at epoch {}",
                row.epoch
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{}", r.epoch);
            for v in r.values() {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == TRACE_HEADER => {}
            _ => return Err(Error::Config("trace CSV header does not match".into())),
        }
        let mut trace = TrainTrace::default();
        for (i, line) in lines.enumerate() {
            let bad = || Error::Config(format!("trace CSV line {}: {line:?}", i + 2));
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != 7 {
                return Err(bad());
            }
            let epoch = cells[0].parse().map_err(|_| bad())?;
            let mut v = [0.0; 6];
            for (slot, cell) in v.iter_mut().zip(&cells[1..]) {
                *slot = cell.parse().map_err(|_| bad())?;
            }
            trace.push(TraceRow {
                epoch,
                loss_total: v[0],
                loss_utility: v[1],
                loss_unlearn: v[2],
                acc_unlearn: v[3],
                acc_retain: v[4],
                acc_validation: v[5],
            })?;
        }
        Ok(trace)
    }
}

/// The sets whose accuracies fill the trace columns.
#[derive(Clone, Copy, Debug)]
pub struct EvalSets<'a> {
    pub retain: &'a SequenceBatch,
    pub unlearn: &'a SequenceBatch,
    pub validation: &'a SequenceBatch,
}

// ---------------------------------------------------------------------------
// loops
// ---------------------------------------------------------------------------

fn shuffled(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    idx
}

fn check_step(
    ckpt: &mut ModelCheckpoint,
    mut grad: Vec<f64>,
    cfg: &UnlearnConfig,
    epoch: usize,
) -> Result<()> {
    let phase = format!("epoch {epoch}");
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient".into()).in_phase(&phase));
    }
    if let Some(c) = cfg.clip_norm {
        clip_grad_norm(&mut grad, c);
    }
    ckpt.apply_sgd(&grad, cfg.lr)
        .map_err(|e| e.in_phase(&phase))
}

fn accuracies(
    ckpt: &ModelCheckpoint,
    eval: &EvalSets<'_>,
    pad: Option<TokenId>,
) -> Result<[f64; 3]> {
    Ok([
        next_token_accuracy(ckpt, eval.unlearn, pad)?,
        next_token_accuracy(ckpt, eval.retain, pad)?,
        next_token_accuracy(ckpt, eval.validation, pad)?,
    ])
}

/// Plain cross-entropy training on `dataset`; every accuracy column reports
/// the training set.
pub fn finetune(
    ckpt: &ModelCheckpoint,
    dataset: &SequenceBatch,
    cfg: &UnlearnConfig,
) -> Result<(ModelCheckpoint, TrainTrace)> {
    let eval = EvalSets {
        retain: dataset,
        unlearn: dataset,
        validation: dataset,
    };
    finetune_monitored(ckpt, dataset, &eval, cfg)
}

/// Plain cross-entropy training with accuracy columns taken from `eval`.
/// The trace holds one row per completed epoch.
pub fn finetune_monitored(
    ckpt: &ModelCheckpoint,
    dataset: &SequenceBatch,
    eval: &EvalSets<'_>,
    cfg: &UnlearnConfig,
) -> Result<(ModelCheckpoint, TrainTrace)> {
    cfg.validate()?;
    if cfg.method != Method::None {
        return Err(Error::Config(format!(
            "finetune needs method none, got {}",
            cfg.method
        )));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut model = ckpt.clone();
    let mut trace = TrainTrace::default();
    let root = Rng::new(cfg.seed);
    for epoch in 1..=cfg.epochs {
        let order = shuffled(dataset.len(), &mut root.split(epoch as u64));
        for chunk in order.chunks(cfg.batch_size) {
            let batch = dataset.select(chunk);
            let (_, grad) = cross_entropy_value_and_gradient(&model, &batch, Exec::default())?;
            check_step(&mut model, grad, cfg, epoch)?;
        }
        let ce = cross_entropy_loss(&model, dataset)?;
        let [acc_unlearn, acc_retain, acc_validation] = accuracies(&model, eval, cfg.pad())?;
        trace
            .push(TraceRow {
                epoch,
                loss_total: ce,
                loss_utility: ce,
                loss_unlearn: 0.0,
                acc_unlearn,
                acc_retain,
                acc_validation,
            })
            .map_err(|e| e.in_phase(&format!("epoch {epoch}")))?;
    }
    Ok((model, trace))
}

/// Runs the selected unlearning objective starting from `ckpt`, which must
/// share the architecture of the frozen pre-unlearning copy `frozen`.
///
/// Row 0 of the trace is the starting point; each later row is evaluated on
/// the full sets after its epoch. A stop policy may end the run early; the
/// stopping epoch is still recorded. The detector stop rule uses
/// `validation` as its non-member set.
pub fn unlearn(
    ckpt: &ModelCheckpoint,
    frozen: &ModelCheckpoint,
    retain: &SequenceBatch,
    unlearn_set: &SequenceBatch,
    validation: &SequenceBatch,
    cfg: &UnlearnConfig,
) -> Result<(ModelCheckpoint, TrainTrace)> {
    unlearn_monitored(
        ckpt,
        frozen,
        retain,
        unlearn_set,
        validation,
        validation,
        cfg,
    )
}

/// [`unlearn`] with an explicit non-member set for the detector stop rule.
pub fn unlearn_monitored(
    ckpt: &ModelCheckpoint,
    frozen: &ModelCheckpoint,
    retain: &SequenceBatch,
    unlearn_set: &SequenceBatch,
    validation: &SequenceBatch,
    nonmembers: &SequenceBatch,
    cfg: &UnlearnConfig,
) -> Result<(ModelCheckpoint, TrainTrace)> {
    cfg.validate()?;
    check_frozen(ckpt, frozen)?;
    if retain.is_empty() || unlearn_set.is_empty() || validation.is_empty() || nonmembers.is_empty()
    {
        return Err(Error::EmptyBatch);
    }
    let global_alpha = mixture_alpha(retain.len(), unlearn_set.len())?;
    let eval = EvalSets {
        retain,
        unlearn: unlearn_set,
        validation,
    };
    let pad = cfg.pad();
    let exec = Exec::default();

    let row_at = |model: &ModelCheckpoint, epoch: usize| -> Result<TraceRow> {
        let obj = objective_with(model, frozen, retain, unlearn_set, cfg, global_alpha, exec)?;
        let [acc_unlearn, acc_retain, acc_validation] = accuracies(model, &eval, pad)?;
        Ok(TraceRow {
            epoch,
            loss_total: obj.total,
            loss_utility: obj.utility,
            loss_unlearn: obj.unlearn,
            acc_unlearn,
            acc_retain,
            acc_validation,
        })
    };

    let mut model = ckpt.clone();
    let mut trace = TrainTrace::default();
    let start = row_at(&model, 0)?;
    trace.push(start)?;

    let root = Rng::new(cfg.seed);
    let mut retain_order: Vec<usize> = Vec::new();
    let mut retain_cursor = 0;
    for epoch in 1..=cfg.epochs {
        let phase = format!("epoch {epoch}");
        let epoch_rng = root.split(epoch as u64);
        let order_u = shuffled(unlearn_set.len(), &mut epoch_rng.split(0));
        let mut rng_r = epoch_rng.split(1);
        for chunk in order_u.chunks(cfg.batch_size) {
            let batch_u = unlearn_set.select(chunk);
            // retain minibatches cycle through their own reshuffled order
            let mut picks = Vec::with_capacity(chunk.len());
            while picks.len() < chunk.len() {
                if retain_cursor == retain_order.len() {
                    retain_order = shuffled(retain.len(), &mut rng_r);
                    retain_cursor = 0;
                }
                picks.push(retain_order[retain_cursor]);
                retain_cursor += 1;
            }
            let batch_r = retain.select(&picks);
            let alpha = match cfg.alpha {
                AlphaPolicy::Batch => mixture_alpha(batch_r.len(), batch_u.len())?,
                AlphaPolicy::Global => global_alpha,
            };
            let obj = objective_with(&model, frozen, &batch_r, &batch_u, cfg, alpha, exec)
                .map_err(|e| e.in_phase(&phase))?;
            if !obj.total.is_finite() {
                return Err(Error::NonFinite("objective".into()).in_phase(&phase));
            }
            check_step(&mut model, obj.grad, cfg, epoch)?;
        }
        let row = row_at(&model, epoch).map_err(|e| e.in_phase(&phase))?;
        trace.push(row).map_err(|e| e.in_phase(&phase))?;
        if should_stop(&model, &start, &row, unlearn_set, nonmembers, cfg)? {
            trace.stopped_at = Some(epoch);
            break;
        }
    }
    Ok((model, trace))
}

fn should_stop(
    model: &ModelCheckpoint,
    start: &TraceRow,
    row: &TraceRow,
    unlearn_set: &SequenceBatch,
    nonmembers: &SequenceBatch,
    cfg: &UnlearnConfig,
) -> Result<bool> {
    match cfg.stop {
        StopPolicy::Never => Ok(false),
        StopPolicy::ValidationDrop => {
            Ok(row.acc_validation < start.acc_validation - cfg.early_stop_val_drop)
        }
        StopPolicy::DetectorFails { k_fraction, margin } => {
            let det = DetectorConfig {
                detector: DetectorKind::MinK,
                k_fraction,
                orientation: Orientation::NonmemberPositive,
            };
            let report = detect(model, &unpadded(unlearn_set), &unpadded(nonmembers), &det)?;
            Ok(report.auc >= 0.5 - margin)
        }
    }
}

/// Sequences with their trailing padding removed (at least one token kept).
pub fn unpadded(batch: &SequenceBatch) -> Vec<Vec<TokenId>> {
    batch
        .sequences()
        .iter()
        .map(|s| {
            let end = s
                .iter()
                .rposition(|&t| t != PAD_ID)
                .map_or(1, |i| i + 1)
                .min(s.len());
            s[..end].to_vec()
        })
        .collect()
}
