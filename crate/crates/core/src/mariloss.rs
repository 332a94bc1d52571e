//! Marginal-information (MarI) loss.
//!
//! Given retain marginals `p^r_t` and unlearn marginals `p^u_t`, the union
//! marginals are `p^d_t = α p^r_t + (1−α) p^u_t`. The token-wise estimator is
//! `(1/T) Σ_t JS(p^d_t, p^r_t)`; the pooled estimator first averages each set
//! over positions and takes a single `JS(p̄^d, p̄^r)`. Pooling is a
//! deterministic map of the detection variable, so the pooled value never
//! exceeds the token-wise one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::infomath::{check_alpha, js_raw, kl_raw, mix_raw};
use crate::langmodel::{ForwardPass, ModelCheckpoint, SequenceBatch};

pub use crate::langmodel::{PositionMarginals, SourceTag};

/// Which estimator to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarIMode {
    #[default]
    TokenWise,
    Pooled,
}

impl MarIMode {
    /// Maps the `hetero` switch of the training loop onto an estimator:
    /// heterogeneous batches use the pooled form.
    pub fn from_hetero(hetero: bool) -> Self {
        if hetero {
            MarIMode::Pooled
        } else {
            MarIMode::TokenWise
        }
    }
}

impl std::fmt::Display for MarIMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MarIMode::TokenWise => "token_wise",
            MarIMode::Pooled => "pooled",
        })
    }
}

impl std::str::FromStr for MarIMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "token_wise" | "tokenwise" => Ok(MarIMode::TokenWise),
            "pooled" => Ok(MarIMode::Pooled),
            other => Err(Error::Config(format!("unknown MarI mode {other:?}"))),
        }
    }
}

/// A marginal-information value in nats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarIEstimate {
    pub value: f64,
    pub mode: MarIMode,
    /// Per-position JS values; empty for the pooled estimator.
    pub per_position_js: Vec<f64>,
    pub alpha: f64,
}

/// Retain fraction `|r| / (|r| + |u|)`.
pub fn mixture_alpha(n_retain: usize, n_unlearn: usize) -> Result<f64> {
    if n_retain == 0 || n_unlearn == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok(n_retain as f64 / (n_retain + n_unlearn) as f64)
}

fn rows(m: &PositionMarginals) -> Vec<&[f64]> {
    m.positions().iter().map(|d| d.probs()).collect()
}

/// `(1/T) Σ_t JS(p^d_t, p^r_t)`.
pub fn mari_tokenwise(
    pr: &PositionMarginals,
    pu: &PositionMarginals,
    alpha: f64,
) -> Result<MarIEstimate> {
    check_alpha(alpha)?;
    pr.same_shape(pu)?;
    let per_position_js = rows(pr)
        .into_iter()
        .zip(rows(pu))
        .map(|(r, u)| js_raw(&mix_raw(r, u, alpha), r))
        .collect::<Result<Vec<_>>>()?;
    let value = per_position_js.iter().sum::<f64>() / per_position_js.len() as f64;
    Ok(MarIEstimate {
        value,
        mode: MarIMode::TokenWise,
        per_position_js,
        alpha,
    })
}

/// `JS(p̄^d, p̄^r)` on position-averaged marginals.
pub fn mari_pooled(
    pr: &PositionMarginals,
    pu: &PositionMarginals,
    alpha: f64,
) -> Result<MarIEstimate> {
    check_alpha(alpha)?;
    pr.same_shape(pu)?;
    let r = pr.pooled();
    let u = pu.pooled();
    let value = js_raw(&mix_raw(r.probs(), u.probs(), alpha), r.probs())?;
    Ok(MarIEstimate {
        value,
        mode: MarIMode::Pooled,
        per_position_js: Vec::new(),
        alpha,
    })
}

pub fn mari(
    pr: &PositionMarginals,
    pu: &PositionMarginals,
    alpha: f64,
    mode: MarIMode,
) -> Result<MarIEstimate> {
    match mode {
        MarIMode::TokenWise => mari_tokenwise(pr, pu, alpha),
        MarIMode::Pooled => mari_pooled(pr, pu, alpha),
    }
}

/// `(1/T) Σ_t KL(p^d_t ‖ p^r_t)`, or against `frozen_pr` when given. A
/// comparison quantity only; it is unbounded under support mismatch.
pub fn alt_marginal_kl(
    pr: &PositionMarginals,
    pu: &PositionMarginals,
    alpha: f64,
    frozen_pr: Option<&PositionMarginals>,
) -> Result<f64> {
    check_alpha(alpha)?;
    pr.same_shape(pu)?;
    let target = frozen_pr.unwrap_or(pr);
    pr.same_shape(target)?;
    let mut acc = 0.0;
    for t in 0..pr.seq_len() {
        let d = mix_raw(pr.at(t).probs(), pu.at(t).probs(), alpha);
        acc += kl_raw(&d, target.at(t).probs())?;
    }
    Ok(acc / pr.seq_len() as f64)
}

/// ½ ln(x/m), the partial derivative of JS w.r.t. one argument.
fn half_log_ratio(x: f64, m: f64) -> f64 {
    if x > 0.0 {
        0.5 * (x / m).ln()
    } else {
        0.0
    }
}

/// Value of the selected estimator on raw `T × V` rows, plus its gradient
/// w.r.t. the retain rows and the unlearn rows.
pub(crate) fn mari_rows_with_grad(
    pr: &[Vec<f64>],
    pu: &[Vec<f64>],
    alpha: f64,
    mode: MarIMode,
) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    check_alpha(alpha)?;
    if pr.len() != pu.len() || pr.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "retain T = {}, unlearn T = {}",
            pr.len(),
            pu.len()
        )));
    }
    let t_len = pr.len();
    let inv_t = 1.0 / t_len as f64;
    let v = pr[0].len();

    // ∂JS(d, r)/∂r and ∂JS(d, r)/∂u for one pair of rows
    let pair_grad = |r: &[f64], u: &[f64], scale: f64| -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let d = mix_raw(r, u, alpha);
        let js = js_raw(&d, r)?;
        let mut gr = vec![0.0; v];
        let mut gu = vec![0.0; v];
        for i in 0..v {
            let m = 0.5 * (d[i] + r[i]);
            let gd = half_log_ratio(d[i], m);
            gr[i] = scale * (alpha * gd + half_log_ratio(r[i], m));
            gu[i] = scale * ((1.0 - alpha) * gd);
        }
        Ok((js, gr, gu))
    };

    match mode {
        MarIMode::TokenWise => {
            let mut value = 0.0;
            let mut dr = Vec::with_capacity(t_len);
            let mut du = Vec::with_capacity(t_len);
            for (r, u) in pr.iter().zip(pu) {
                if r.len() != v || u.len() != v {
                    return Err(Error::ShapeMismatch("ragged marginal rows".into()));
                }
                let (js, gr, gu) = pair_grad(r, u, inv_t)?;
                value += js;
                dr.push(gr);
                du.push(gu);
            }
            Ok((value * inv_t, dr, du))
        }
        MarIMode::Pooled => {
            let pool = |rows: &[Vec<f64>]| {
                let mut acc = vec![0.0; v];
                for row in rows {
                    for (a, p) in acc.iter_mut().zip(row) {
                        *a += p;
                    }
                }
                acc.iter_mut().for_each(|a| *a *= inv_t);
                acc
            };
            let (js, gr, gu) = pair_grad(&pool(pr), &pool(pu), inv_t)?;
            Ok((js, vec![gr; t_len], vec![gu; t_len]))
        }
    }
}

/// Selected MarI estimate of a model on a retain and an unlearn batch, with
/// its exact parameter gradient. Gradient flows through both `p^r` and `p^u`.
pub fn mari_value_and_gradient(
    ckpt: &ModelCheckpoint,
    retain_batch: &SequenceBatch,
    unlearn_batch: &SequenceBatch,
    alpha: f64,
    mode: MarIMode,
    exec: Exec,
) -> Result<(f64, Vec<f64>)> {
    if retain_batch.is_empty() || unlearn_batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let pass_r = ForwardPass::run(ckpt, retain_batch, exec)?;
    let pass_u = ForwardPass::run(ckpt, unlearn_batch, exec)?;
    let (value, dr, du) = mari_rows_with_grad(
        &pass_r.marginal_rows(),
        &pass_u.marginal_rows(),
        alpha,
        mode,
    )?;
    let mut grad = pass_r.backward(ckpt, &pass_r.spread_marginal_grad(&dr), exec)?;
    let gu = pass_u.backward(ckpt, &pass_u.spread_marginal_grad(&du), exec)?;
    for (g, x) in grad.iter_mut().zip(&gu) {
        *g += x;
    }
    Ok((value, grad))
}

/// Parameter gradient of the selected MarI estimate.
pub fn mari_gradient(
    ckpt: &ModelCheckpoint,
    retain_batch: &SequenceBatch,
    unlearn_batch: &SequenceBatch,
    alpha: f64,
    mode: MarIMode,
) -> Result<Vec<f64>> {
    mari_value_and_gradient(
        ckpt,
        retain_batch,
        unlearn_batch,
        alpha,
        mode,
        Exec::default(),
    )
    .map(|(_, g)| g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const JS_HALF_POINT: f64 = 0.215_761_554_338_835_7;

    fn marg(rows: &[&[f64]], tag: SourceTag) -> PositionMarginals {
        PositionMarginals::from_rows(rows.iter().map(|r| r.to_vec()).collect(), tag).unwrap()
    }

    #[test]
    fn tokenwise_examples() {
        let pr = marg(&[&[0.2, 0.8], &[0.6, 0.4]], SourceTag::Retain);
        let est = mari_tokenwise(&pr, &pr, 0.3).unwrap();
        assert_eq!(est.value, 0.0);

        let pr = marg(&[&[1.0, 0.0]], SourceTag::Retain);
        let pu = marg(&[&[0.0, 1.0]], SourceTag::Unlearn);
        let est = mari_tokenwise(&pr, &pu, 0.5).unwrap();
        assert_abs_diff_eq!(est.value, JS_HALF_POINT, epsilon = 1e-12);

        let pr = marg(&[&[1.0, 0.0], &[0.3, 0.7]], SourceTag::Retain);
        let pu = marg(&[&[0.0, 1.0], &[0.3, 0.7]], SourceTag::Unlearn);
        let est = mari_tokenwise(&pr, &pu, 0.5).unwrap();
        assert_abs_diff_eq!(est.value, JS_HALF_POINT / 2.0, epsilon = 1e-12);
        assert_eq!(est.per_position_js.len(), 2);
        assert_abs_diff_eq!(
            est.value,
            est.per_position_js.iter().sum::<f64>() / 2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn pooled_examples() {
        let pr = marg(&[&[0.2, 0.8], &[0.6, 0.4]], SourceTag::Retain);
        assert_eq!(mari_pooled(&pr, &pr, 0.5).unwrap().value, 0.0);

        let pr1 = marg(&[&[1.0, 0.0]], SourceTag::Retain);
        let pu1 = marg(&[&[0.0, 1.0]], SourceTag::Unlearn);
        assert_eq!(
            mari_pooled(&pr1, &pu1, 0.5).unwrap().value,
            mari_tokenwise(&pr1, &pu1, 0.5).unwrap().value
        );

        // swapped point masses: pooled sees nothing, token-wise sees everything
        let pr = marg(&[&[1.0, 0.0], &[0.0, 1.0]], SourceTag::Retain);
        let pu = marg(&[&[0.0, 1.0], &[1.0, 0.0]], SourceTag::Unlearn);
        assert_eq!(mari_pooled(&pr, &pu, 0.5).unwrap().value, 0.0);
        assert_abs_diff_eq!(
            mari_tokenwise(&pr, &pu, 0.5).unwrap().value,
            JS_HALF_POINT,
            epsilon = 1e-12
        );
    }

    #[test]
    fn shape_and_alpha_errors() {
        let a = marg(&[&[0.5, 0.5]], SourceTag::Retain);
        let b = marg(&[&[0.5, 0.5], &[0.5, 0.5]], SourceTag::Unlearn);
        assert!(matches!(
            mari_tokenwise(&a, &b, 0.5),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(mari_pooled(&a, &a, 1.0), Err(Error::Domain(_))));
        assert!(matches!(mari_tokenwise(&a, &a, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn alt_kl_examples() {
        let pr = marg(&[&[0.3, 0.7]], SourceTag::Retain);
        assert_eq!(alt_marginal_kl(&pr, &pr, 0.5, None).unwrap(), 0.0);

        // α = ½, p^u = (¼, ¾) gives p^d = (½, ½) against target (¾, ¼)
        let pr = marg(&[&[0.75, 0.25]], SourceTag::Retain);
        let pu = marg(&[&[0.25, 0.75]], SourceTag::Unlearn);
        assert_abs_diff_eq!(
            alt_marginal_kl(&pr, &pu, 0.5, None).unwrap(),
            0.143_841_036_225_890_46,
            epsilon = 1e-12
        );

        let frozen = marg(&[&[1.0, 0.0]], SourceTag::Retain);
        assert!(matches!(
            alt_marginal_kl(&pr, &pu, 0.5, Some(&frozen)),
            Err(Error::SupportMismatch { .. })
        ));
    }

    #[test]
    fn hetero_switch() {
        assert_eq!(MarIMode::from_hetero(true), MarIMode::Pooled);
        assert_eq!(MarIMode::from_hetero(false), MarIMode::TokenWise);
        assert_eq!("pooled".parse::<MarIMode>().unwrap(), MarIMode::Pooled);
        assert!("both".parse::<MarIMode>().is_err());
    }

    #[test]
    fn alpha_from_sizes() {
        assert_eq!(mixture_alpha(90, 10).unwrap(), 0.9);
        assert!(mixture_alpha(0, 3).is_err());
    }
}
