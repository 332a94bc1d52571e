#![allow(dead_code)]

use mari::infomath::TokenDistribution;
use mari::langmodel::{Arch, ModelCheckpoint, SequenceBatch, TokenId};
use mari::Rng;

pub const FD_STEP: f64 = 1e-5;

/// Per-coordinate error below this magnitude is judged in absolute terms.
pub const FD_FLOOR: f64 = 1e-6;

/// Central-difference gradient of `f` at the checkpoint's parameters.
pub fn finite_difference(ckpt: &ModelCheckpoint, f: impl Fn(&ModelCheckpoint) -> f64) -> Vec<f64> {
    let mut probe = ckpt.clone();
    (0..ckpt.params.len())
        .map(|i| {
            let x = ckpt.params[i];
            probe.params[i] = x + FD_STEP;
            let up = f(&probe);
            probe.params[i] = x - FD_STEP;
            let down = f(&probe);
            probe.params[i] = x;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// max_i |a_i − n_i| / max(|a_i|, |n_i|, FD_FLOOR)
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR))
        .fold(0.0, f64::max)
}

pub struct SmallSetup {
    pub ckpt: ModelCheckpoint,
    pub frozen: ModelCheckpoint,
    pub retain: SequenceBatch,
    pub unlearn: SequenceBatch,
}

fn random_batch(rng: &mut Rng, n: usize, seq_len: usize, vocab: usize) -> SequenceBatch {
    let seqs = (0..n)
        .map(|_| (0..seq_len).map(|_| rng.below(vocab) as TokenId).collect())
        .collect();
    SequenceBatch::new(seqs).unwrap()
}

fn random_params(rng: &mut Rng, arch: Arch, scale: f64) -> ModelCheckpoint {
    let params = (0..arch.param_count())
        .map(|_| rng.uniform_in(-scale, scale))
        .collect();
    ModelCheckpoint::from_params(arch, params, 0, 0).unwrap()
}

/// A tiny network with weights large enough for non-uniform outputs, a
/// frozen copy nearby, and random retain and unlearn batches.
pub fn small_setup(seed: u64) -> SmallSetup {
    let mut rng = Rng::new(seed);
    let arch = Arch::new(
        1 + rng.below(3),
        2 + rng.below(3),
        2 + rng.below(4),
        3 + rng.below(4),
    );
    let scale = rng.uniform_in(0.3, 1.5);
    let ckpt = random_params(&mut rng, arch, scale);
    let mut frozen = ckpt.clone();
    for p in frozen.params.iter_mut() {
        *p += rng.uniform_in(-0.3, 0.3);
    }
    let seq_len = 2 + rng.below(3);
    let n_r = 1 + rng.below(3);
    let n_u = 1 + rng.below(3);
    let retain = random_batch(&mut rng, n_r, seq_len, arch.vocab_size);
    let unlearn = random_batch(&mut rng, n_u, seq_len, arch.vocab_size);
    SmallSetup {
        ckpt,
        frozen,
        retain,
        unlearn,
    }
}

pub fn random_probs(rng: &mut Rng, v: usize) -> Vec<f64> {
    let sharp = [1.0, 3.0, 8.0][rng.below(3)];
    let mut x: Vec<f64> = (0..v)
        .map(|_| rng.uniform().max(1e-300).powf(sharp))
        .collect();
    // occasionally exact zeros
    if v > 2 && rng.below(4) == 0 {
        x[rng.below(v)] = 0.0;
    }
    let s: f64 = x.iter().sum();
    x.iter_mut().for_each(|p| *p /= s);
    x
}

pub fn random_dist(rng: &mut Rng, v: usize) -> TokenDistribution {
    TokenDistribution::new(random_probs(rng, v)).unwrap()
}
