//! A tiny fixed-context autoregressive language model with exact gradients.
//!
//! The network embeds the previous `context_len` tokens (bos-padded on the
//! left), concatenates them, applies one tanh layer and a softmax over the
//! vocabulary. Every loss in the crate is expressed as a gradient w.r.t. the
//! output distributions ([`DistGrad`]) and pushed through
//! [`ForwardPass::backward`].

pub mod checkpoint;
mod marginals;
mod network;
mod vocab;

pub use marginals::{PositionMarginals, SourceTag};
pub use network::{
    clip_grad_norm, sgd_step, Arch, DistGrad, ForwardPass, ModelCheckpoint, SequenceBatch,
};
pub use vocab::{
    TokenId, VocabPolicy, Vocabulary, BOS_ID, BOS_SYMBOL, MAX_VOCAB, PAD_ID, PAD_SYMBOL,
};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::infomath::TokenDistribution;

/// Next-token distributions for every sequence and position of `batch`.
pub fn forward(
    ckpt: &ModelCheckpoint,
    batch: &SequenceBatch,
) -> Result<Vec<Vec<TokenDistribution>>> {
    let pass = ForwardPass::run(ckpt, batch, Exec::default())?;
    Ok((0..pass.batch_size())
        .map(|b| {
            (0..pass.seq_len())
                .map(|t| TokenDistribution::from_vec_unchecked(pass.probs(b, t).to_vec()))
                .collect()
        })
        .collect())
}

/// Per-position mean of the forward distributions over the batch.
pub fn averaged_marginals(
    ckpt: &ModelCheckpoint,
    batch: &SequenceBatch,
    source: SourceTag,
) -> Result<PositionMarginals> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let pass = ForwardPass::run(ckpt, batch, Exec::default())?;
    Ok(pass.marginals(source))
}

impl ForwardPass {
    /// Averaged next-token marginals of this batch.
    pub fn marginals(&self, source: SourceTag) -> PositionMarginals {
        let rows = self.marginal_rows();
        let per_t = rows
            .into_iter()
            .map(TokenDistribution::from_vec_unchecked)
            .collect();
        PositionMarginals::new(per_t, source, self.batch_size())
            .expect("forward pass has T >= 1 and a fixed vocabulary")
    }

    /// Raw `T × V` averaged marginals, summed in sequence order.
    pub(crate) fn marginal_rows(&self) -> Vec<Vec<f64>> {
        let (n, t_len, v) = (self.batch_size(), self.seq_len(), self.vocab_size());
        let inv = 1.0 / n as f64;
        (0..t_len)
            .map(|t| {
                let mut acc = vec![0.0; v];
                for b in 0..n {
                    for (a, p) in acc.iter_mut().zip(self.probs(b, t)) {
                        *a += p;
                    }
                }
                acc.iter_mut().for_each(|a| *a *= inv);
                acc
            })
            .collect()
    }

    /// Gradient of the averaged marginals pushed down to every sequence:
    /// `∂L/∂p_{b,t} = (1/B) ∂L/∂p̄_t`.
    pub(crate) fn spread_marginal_grad(&self, dmarg: &[Vec<f64>]) -> DistGrad {
        let mut g = self.zero_grad();
        let inv = 1.0 / self.batch_size() as f64;
        for b in 0..self.batch_size() {
            for (t, row) in dmarg.iter().enumerate() {
                for (o, d) in g.row_mut(b, t).iter_mut().zip(row) {
                    *o = d * inv;
                }
            }
        }
        g
    }

    /// Mean next-token cross-entropy over all `B × T` positions, with its
    /// gradient w.r.t. the output distributions.
    pub fn cross_entropy(&self, batch: &SequenceBatch) -> (f64, DistGrad) {
        let (n, t_len) = (self.batch_size(), self.seq_len());
        let scale = 1.0 / (n * t_len) as f64;
        let mut g = self.zero_grad();
        let mut loss = 0.0;
        for b in 0..n {
            let seq = batch.sequence(b);
            for t in 0..t_len {
                let x = seq[t] as usize;
                let p = self.probs(b, t)[x];
                loss += -p.ln();
                g.row_mut(b, t)[x] = -scale / p;
            }
        }
        (loss * scale, g)
    }
}

/// What the tokens of `x` are scored against.
#[derive(Clone, Copy, Debug)]
pub enum ScoreContext<'a> {
    /// Per-position marginals `p_t^s`; scores `−ln p_t^s(x_t)`.
    Marginals(&'a PositionMarginals),
    /// Raw context sequence `y`; scores `−ln p_θ(x_t | y_<t)`.
    Sequence(&'a [TokenId]),
}

/// S_θ(x, y): mean per-token negative log-likelihood of `x`. Returns
/// `f64::INFINITY` when some `x_t` has probability zero.
pub fn cross_entropy_score(
    ckpt: &ModelCheckpoint,
    x: &[TokenId],
    context: ScoreContext<'_>,
) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::EmptySequence);
    }
    let probs: Vec<f64> = match context {
        ScoreContext::Marginals(m) => {
            if m.seq_len() != x.len() {
                return Err(Error::LengthMismatch(x.len(), m.seq_len()));
            }
            x.iter()
                .enumerate()
                .map(|(t, &tok)| {
                    m.at(t).probs().get(tok as usize).copied().ok_or_else(|| {
                        Error::ArchMismatch(format!("token {tok} outside marginals"))
                    })
                })
                .collect::<Result<_>>()?
        }
        ScoreContext::Sequence(y) => {
            if y.len() != x.len() {
                return Err(Error::LengthMismatch(x.len(), y.len()));
            }
            let batch = SequenceBatch::new(vec![y.to_vec()])?;
            let pass = ForwardPass::run(ckpt, &batch, Exec::Sequential)?;
            if let Some(&tok) = x.iter().find(|&&t| t as usize >= ckpt.arch.vocab_size) {
                return Err(Error::ArchMismatch(format!(
                    "token id {tok} outside vocabulary"
                )));
            }
            x.iter()
                .enumerate()
                .map(|(t, &tok)| pass.probs(0, t)[tok as usize])
                .collect()
        }
    };
    Ok(mean_nll(&probs))
}

pub(crate) fn mean_nll(probs: &[f64]) -> f64 {
    if probs.iter().any(|&p| p <= 0.0) {
        return f64::INFINITY;
    }
    probs.iter().map(|p| -p.ln()).sum::<f64>() / probs.len() as f64
}

/// `ln p_θ(x_t | x_<t)` for every position of `x`.
pub fn token_log_probs(ckpt: &ModelCheckpoint, x: &[TokenId]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::EmptySequence);
    }
    let batch = SequenceBatch::new(vec![x.to_vec()])?;
    let pass = ForwardPass::run(ckpt, &batch, Exec::Sequential)?;
    Ok(x.iter()
        .enumerate()
        .map(|(t, &tok)| pass.probs(0, t)[tok as usize].ln())
        .collect())
}

/// Parameter gradient of a loss given `∂L/∂p` as nested
/// `[sequence][position][token]` vectors.
pub fn backward(
    ckpt: &ModelCheckpoint,
    batch: &SequenceBatch,
    dloss_ddist: &[Vec<Vec<f64>>],
) -> Result<Vec<f64>> {
    if dloss_ddist.len() != batch.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} upstream sequences for a batch of {}",
            dloss_ddist.len(),
            batch.len()
        )));
    }
    let upstream = DistGrad::from_nested(dloss_ddist)?;
    let pass = ForwardPass::run(ckpt, batch, Exec::default())?;
    pass.backward(ckpt, &upstream, Exec::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tiny() -> ModelCheckpoint {
        ModelCheckpoint::init(Arch::new(2, 3, 4, 5), 11).unwrap()
    }

    #[test]
    fn zero_params_give_uniform() {
        let ckpt = ModelCheckpoint::zeros(Arch::new(4, 3, 6, 4)).unwrap();
        let batch = SequenceBatch::new(vec![vec![2, 3, 0, 1], vec![3, 3, 3, 2]]).unwrap();
        for seq in forward(&ckpt, &batch).unwrap() {
            for d in seq {
                for &p in d.probs() {
                    assert_eq!(p, 0.25);
                }
            }
        }
    }

    #[test]
    fn forward_is_deterministic_and_normalized() {
        let ckpt = tiny();
        let batch = SequenceBatch::new(vec![vec![2, 3, 4, 2], vec![4, 4, 3, 2]]).unwrap();
        let a = forward(&ckpt, &batch).unwrap();
        let b = forward(&ckpt, &batch).unwrap();
        assert_eq!(a, b);
        for seq in &a {
            for d in seq {
                let s: f64 = d.probs().iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
                assert!(d.probs().iter().all(|&p| p > 0.0));
            }
        }
    }

    #[test]
    fn out_of_vocab_is_rejected() {
        let batch = SequenceBatch::new(vec![vec![2, 9]]).unwrap();
        assert!(matches!(
            forward(&tiny(), &batch),
            Err(Error::ArchMismatch(_))
        ));
    }

    #[test]
    fn marginals_average_sequences() {
        let ckpt = tiny();
        let one = SequenceBatch::new(vec![vec![2, 3, 4]]).unwrap();
        let two = SequenceBatch::new(vec![vec![2, 3, 4], vec![2, 3, 4]]).unwrap();
        let m1 = averaged_marginals(&ckpt, &one, SourceTag::Retain).unwrap();
        let m2 = averaged_marginals(&ckpt, &two, SourceTag::Retain).unwrap();
        let f = forward(&ckpt, &one).unwrap();
        for t in 0..3 {
            assert_eq!(m1.at(t), &f[0][t]);
            for (a, b) in m1.at(t).probs().iter().zip(m2.at(t).probs()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-15);
            }
        }
        let empty = SequenceBatch::new(vec![]).unwrap();
        assert!(matches!(
            averaged_marginals(&ckpt, &empty, SourceTag::Retain),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn marginal_of_two_opposed_predictions() {
        // rows (0.9, 0.1) and (0.1, 0.9) average to (0.5, 0.5)
        let rows = [[0.9, 0.1], [0.1, 0.9]];
        let m: Vec<f64> = (0..2).map(|o| (rows[0][o] + rows[1][o]) / 2.0).collect();
        assert_eq!(m, vec![0.5, 0.5]);
    }

    #[test]
    fn score_examples() {
        let uniform = ModelCheckpoint::zeros(Arch::new(2, 2, 2, 4)).unwrap();
        let x = [2, 3, 3, 2];
        let s = cross_entropy_score(&uniform, &x, ScoreContext::Sequence(&x)).unwrap();
        assert_abs_diff_eq!(s, 4f64.ln(), epsilon = 1e-12);

        let certain =
            PositionMarginals::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]], SourceTag::Unlearn)
                .unwrap();
        let ckpt = ModelCheckpoint::zeros(Arch::new(1, 1, 1, 2)).unwrap();
        assert_eq!(
            cross_entropy_score(&ckpt, &[1, 0], ScoreContext::Marginals(&certain)).unwrap(),
            0.0
        );
        assert_eq!(
            cross_entropy_score(&ckpt, &[0, 0], ScoreContext::Marginals(&certain)).unwrap(),
            f64::INFINITY
        );

        let halves =
            PositionMarginals::from_rows(vec![vec![0.5, 0.5], vec![0.75, 0.25]], SourceTag::Retain)
                .unwrap();
        let s = cross_entropy_score(&ckpt, &[0, 1], ScoreContext::Marginals(&halves)).unwrap();
        assert_abs_diff_eq!(s, 1.039_720_770_839_917_9, epsilon = 1e-12);
    }

    #[test]
    fn sgd_examples() {
        let arch = Arch::new(1, 1, 1, 2);
        let base = ModelCheckpoint::init(arch, 3).unwrap();
        let n = arch.param_count();
        assert_eq!(
            sgd_step(&base, &vec![1.0; n], 0.0).unwrap().params,
            base.params
        );
        assert_eq!(
            sgd_step(&base, &vec![0.0; n], 0.5).unwrap().params,
            base.params
        );
        let mut two = base.clone();
        two.params = vec![1.0; n];
        let mut g = vec![0.0; n];
        g[0] = 1.0;
        g[1] = -1.0;
        let next = sgd_step(&two, &g, 0.1).unwrap();
        assert_abs_diff_eq!(next.params[0], 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(next.params[1], 1.1, epsilon = 1e-15);
        assert_eq!(next.step, 1);
        g[2] = f64::NAN;
        assert!(matches!(sgd_step(&two, &g, 0.1), Err(Error::NonFinite(_))));
        assert!(matches!(
            sgd_step(&two, &g[..3], 0.1),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn clipping() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert_abs_diff_eq!(g[0], 0.6, epsilon = 1e-15);
        let mut h = vec![0.3, 0.4];
        clip_grad_norm(&mut h, 1.0);
        assert_eq!(h, vec![0.3, 0.4]);
    }

    #[test]
    fn zero_upstream_zero_grad() {
        let ckpt = tiny();
        let batch = SequenceBatch::new(vec![vec![2, 3, 4]]).unwrap();
        let up = vec![vec![vec![0.0; 5]; 3]];
        assert!(backward(&ckpt, &batch, &up)
            .unwrap()
            .iter()
            .all(|&g| g == 0.0));
        assert!(backward(&ckpt, &batch, &[vec![vec![0.0; 4]; 3]]).is_err());
    }

    #[test]
    fn sequential_and_parallel_backward_agree() {
        let ckpt = tiny();
        let batch = SequenceBatch::new((0..9).map(|i| vec![2 + (i % 3), 4, 2 + (i % 2)]).collect())
            .unwrap();
        let pass = ForwardPass::run(&ckpt, &batch, Exec::Parallel).unwrap();
        let (_, up) = pass.cross_entropy(&batch);
        let a = pass.backward(&ckpt, &up, Exec::Sequential).unwrap();
        let b = pass.backward(&ckpt, &up, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
