//! White-box membership-inference detectors and ROC-AUC.
//!
//! Scores are oriented so that larger means "more confident, more likely
//! seen in training" for min-k%, and the usual perplexity for the perplexity
//! detector. The default AUC orientation counts non-members as the positive
//! class, so a low AUC means the detector believes the member set was trained
//! on and 0.5 means it cannot tell.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::langmodel::{token_log_probs, ModelCheckpoint, TokenId};

pub const DEFAULT_K_FRACTION: f64 = 0.2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    #[default]
    MinK,
    Perplexity,
}

impl std::str::FromStr for DetectorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min_k" | "mink" => Ok(DetectorKind::MinK),
            "perplexity" | "ppl" => Ok(DetectorKind::Perplexity),
            other => Err(Error::Config(format!("unknown detector {other:?}"))),
        }
    }
}

/// Which class counts as positive when ranking scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    #[default]
    NonmemberPositive,
    MemberPositive,
}

impl Orientation {
    pub fn flipped(self) -> Self {
        match self {
            Orientation::NonmemberPositive => Orientation::MemberPositive,
            Orientation::MemberPositive => Orientation::NonmemberPositive,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub detector: DetectorKind,
    pub k_fraction: f64,
    pub orientation: Orientation,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            detector: DetectorKind::MinK,
            k_fraction: DEFAULT_K_FRACTION,
            orientation: Orientation::NonmemberPositive,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub detector: DetectorKind,
    pub k_fraction: f64,
    pub auc: f64,
    pub scores_member: Vec<f64>,
    pub scores_nonmember: Vec<f64>,
}

fn check_k(k_fraction: f64) -> Result<()> {
    if !(k_fraction > 0.0 && k_fraction <= 1.0) {
        return Err(Error::domain(format!(
            "k_fraction = {k_fraction} must lie in (0, 1]"
        )));
    }
    Ok(())
}

/// Mean of the lowest ⌈k·T⌉ per-token log-probabilities.
pub fn min_k_of_log_probs(log_probs: &[f64], k_fraction: f64) -> Result<f64> {
    check_k(k_fraction)?;
    if log_probs.is_empty() {
        return Err(Error::EmptySequence);
    }
    let n = log_probs.len();
    // guard against k·T landing a hair above an integer
    let take = ((k_fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let mut sorted = log_probs.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[..take].iter().sum::<f64>() / take as f64)
}

/// Min-k% score of `x` under the model.
pub fn min_k_score(ckpt: &ModelCheckpoint, x: &[TokenId], k_fraction: f64) -> Result<f64> {
    check_k(k_fraction)?;
    min_k_of_log_probs(&token_log_probs(ckpt, x)?, k_fraction)
}

/// exp of the mean per-token negative log-likelihood of `x`.
pub fn perplexity_score(ckpt: &ModelCheckpoint, x: &[TokenId]) -> Result<f64> {
    let lp = token_log_probs(ckpt, x)?;
    Ok((-lp.iter().sum::<f64>() / lp.len() as f64).exp())
}

/// Mann-Whitney AUC: the fraction of (member, non-member) pairs ranked in
/// favour of the positive class, ties counted ½.
pub fn roc_auc(
    scores_member: &[f64],
    scores_nonmember: &[f64],
    orientation: Orientation,
) -> Result<f64> {
    if scores_member.is_empty() || scores_nonmember.is_empty() {
        return Err(Error::EmptyScores);
    }
    if scores_member
        .iter()
        .chain(scores_nonmember)
        .any(|s| s.is_nan())
    {
        return Err(Error::NonFinite("NaN detector score".into()));
    }
    let mut members = scores_member.to_vec();
    members.sort_by(f64::total_cmp);
    // twice the U statistic, an exact integer
    let mut twice_u: u64 = 0;
    for &x in scores_nonmember {
        let below = members.partition_point(|&s| s < x);
        let at_most = members.partition_point(|&s| s <= x);
        twice_u += 2 * below as u64 + (at_most - below) as u64;
    }
    let pairs = 2 * members.len() as u64 * scores_nonmember.len() as u64;
    let nonmember_auc = twice_u as f64 / pairs as f64;
    Ok(match orientation {
        Orientation::NonmemberPositive => nonmember_auc,
        Orientation::MemberPositive => 1.0 - nonmember_auc,
    })
}

fn score_all(
    ckpt: &ModelCheckpoint,
    seqs: &[Vec<TokenId>],
    cfg: &DetectorConfig,
    exec: Exec,
) -> Result<Vec<f64>> {
    exec.map(seqs, |x| match cfg.detector {
        DetectorKind::MinK => min_k_score(ckpt, x, cfg.k_fraction),
        DetectorKind::Perplexity => perplexity_score(ckpt, x),
    })
    .into_iter()
    .collect()
}

/// Scores every member and non-member sequence and reports the AUC.
pub fn detect(
    ckpt: &ModelCheckpoint,
    members: &[Vec<TokenId>],
    nonmembers: &[Vec<TokenId>],
    cfg: &DetectorConfig,
) -> Result<DetectionReport> {
    detect_with(ckpt, members, nonmembers, cfg, Exec::default())
}

pub fn detect_with(
    ckpt: &ModelCheckpoint,
    members: &[Vec<TokenId>],
    nonmembers: &[Vec<TokenId>],
    cfg: &DetectorConfig,
    exec: Exec,
) -> Result<DetectionReport> {
    if cfg.detector == DetectorKind::MinK {
        check_k(cfg.k_fraction)?;
    }
    let scores_member = score_all(ckpt, members, cfg, exec)?;
    let scores_nonmember = score_all(ckpt, nonmembers, cfg, exec)?;
    // low perplexity means "seen", the opposite sense of min-k
    let orientation = match cfg.detector {
        DetectorKind::MinK => cfg.orientation,
        DetectorKind::Perplexity => cfg.orientation.flipped(),
    };
    let auc = roc_auc(&scores_member, &scores_nonmember, orientation)?;
    Ok(DetectionReport {
        detector: cfg.detector,
        k_fraction: cfg.k_fraction,
        auc,
        scores_member,
        scores_nonmember,
    })
}
