use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng::Rng;

use super::vocab::TokenId;

const INIT_SCALE: f64 = 0.08;

/// Fixed-context network shape: `context_len` token embeddings are
/// concatenated, passed through one tanh layer, then a softmax over the
/// vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Arch {
    pub context_len: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Layout {
    pub embed: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub total: usize,
}

impl Arch {
    pub fn new(context_len: usize, embed_dim: usize, hidden_dim: usize, vocab_size: usize) -> Self {
        Self {
            context_len,
            embed_dim,
            hidden_dim,
            vocab_size,
        }
    }

    pub(crate) fn input_dim(&self) -> usize {
        self.context_len * self.embed_dim
    }

    pub(crate) fn layout(&self) -> Layout {
        let embed = 0;
        let w1 = embed + self.vocab_size * self.embed_dim;
        let b1 = w1 + self.hidden_dim * self.input_dim();
        let w2 = b1 + self.hidden_dim;
        let b2 = w2 + self.vocab_size * self.hidden_dim;
        let total = b2 + self.vocab_size;
        Layout {
            embed,
            w1,
            b1,
            w2,
            b2,
            total,
        }
    }

    /// Number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    pub fn validate(&self) -> Result<()> {
        if self.context_len == 0 || self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::ArchMismatch(format!(
                "degenerate architecture {self:?}"
            )));
        }
        if self.vocab_size < 2 {
            return Err(Error::ArchMismatch("vocab_size must be at least 2".into()));
        }
        Ok(())
    }
}

/// Full parameter state of the network. Value-semantic: clone freely to
/// snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub arch: Arch,
    pub params: Vec<f64>,
    pub rng_seed: u64,
    pub step: u64,
}

impl ModelCheckpoint {
    /// Parameters drawn uniformly from [−0.08, 0.08].
    pub fn init(arch: Arch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = Rng::new(seed);
        let params = (0..arch.param_count())
            .map(|_| rng.uniform_in(-INIT_SCALE, INIT_SCALE))
            .collect();
        Ok(Self {
            arch,
            params,
            rng_seed: seed,
            step: 0,
        })
    }

    pub fn zeros(arch: Arch) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch,
            params: vec![0.0; arch.param_count()],
            rng_seed: 0,
            step: 0,
        })
    }

    pub fn from_params(arch: Arch, params: Vec<f64>, rng_seed: u64, step: u64) -> Result<Self> {
        arch.validate()?;
        let ckpt = Self {
            arch,
            params,
            rng_seed,
            step,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.len() != self.arch.param_count() {
            return Err(Error::ArchMismatch(format!(
                "{} params, architecture needs {}",
                self.params.len(),
                self.arch.param_count()
            )));
        }
        if let Some(i) = self.params.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {i}")));
        }
        Ok(())
    }

    pub(crate) fn same_arch(&self, other: &ModelCheckpoint) -> Result<()> {
        if self.arch != other.arch {
            return Err(Error::ArchMismatch(format!(
                "{:?} vs {:?}",
                self.arch, other.arch
            )));
        }
        Ok(())
    }

    /// In-place `params -= lr * grad`.
    pub fn apply_sgd(&mut self, grad: &[f64], lr: f64) -> Result<()> {
        if grad.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient has {} entries, model has {}",
                grad.len(),
                self.params.len()
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient entry {i}")));
        }
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::domain(format!("learning rate {lr}")));
        }
        for (p, g) in self.params.iter_mut().zip(grad) {
            *p -= lr * g;
        }
        self.step += 1;
        Ok(())
    }
}

/// Returns `params − lr·grad` as a new checkpoint with `step + 1`.
pub fn sgd_step(ckpt: &ModelCheckpoint, grad: &[f64], lr: f64) -> Result<ModelCheckpoint> {
    let mut next = ckpt.clone();
    next.apply_sgd(grad, lr)?;
    Ok(next)
}

/// Rescales `grad` so its Euclidean norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Equal-length token sequences. Context for position `t` is the
/// `context_len` tokens before it, with bos filling in on the left.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceBatch {
    seq_len: usize,
    sequences: Vec<Vec<TokenId>>,
}

impl SequenceBatch {
    pub fn new(sequences: Vec<Vec<TokenId>>) -> Result<Self> {
        let seq_len = sequences.first().map_or(0, Vec::len);
        if sequences.iter().any(|s| s.len() != seq_len) {
            return Err(Error::ShapeMismatch(
                "sequences have unequal lengths".into(),
            ));
        }
        if seq_len == 0 && !sequences.is_empty() {
            return Err(Error::ShapeMismatch(
                "sequence length must be at least 1".into(),
            ));
        }
        Ok(Self { seq_len, sequences })
    }

    /// Truncates or right-pads each sequence to `seq_len`.
    pub fn packed(sequences: &[Vec<TokenId>], seq_len: usize, pad_id: TokenId) -> Result<Self> {
        if seq_len == 0 {
            return Err(Error::ShapeMismatch(
                "sequence length must be at least 1".into(),
            ));
        }
        let sequences = sequences
            .iter()
            .map(|s| {
                let mut v: Vec<TokenId> = s.iter().copied().take(seq_len).collect();
                v.resize(seq_len, pad_id);
                v
            })
            .collect();
        Ok(Self { seq_len, sequences })
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn sequences(&self) -> &[Vec<TokenId>] {
        &self.sequences
    }

    pub fn sequence(&self, i: usize) -> &[TokenId] {
        &self.sequences[i]
    }

    /// Sub-batch with the given sequence indices.
    pub fn select(&self, indices: &[usize]) -> SequenceBatch {
        SequenceBatch {
            seq_len: self.seq_len,
            sequences: indices.iter().map(|&i| self.sequences[i].clone()).collect(),
        }
    }

    /// Concatenation of two batches with the same sequence length.
    pub fn concat(&self, other: &SequenceBatch) -> Result<SequenceBatch> {
        if !self.is_empty() && !other.is_empty() && self.seq_len != other.seq_len {
            return Err(Error::ShapeMismatch(
                "cannot join batches of different T".into(),
            ));
        }
        let mut sequences = self.sequences.clone();
        sequences.extend(other.sequences.iter().cloned());
        Ok(SequenceBatch {
            seq_len: self.seq_len.max(other.seq_len),
            sequences,
        })
    }

    pub(crate) fn check_vocab(&self, arch: &Arch) -> Result<()> {
        for s in &self.sequences {
            if let Some(&t) = s.iter().find(|&&t| t as usize >= arch.vocab_size) {
                return Err(Error::ArchMismatch(format!(
                    "token id {t} outside vocabulary of size {}",
                    arch.vocab_size
                )));
            }
        }
        Ok(())
    }
}

/// Activations of one sequence, kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct SeqActivations {
    /// context token ids, `T × k`
    pub contexts: Vec<TokenId>,
    /// tanh outputs, `T × H`
    pub hidden: Vec<f64>,
    /// softmax outputs, `T × V`
    pub probs: Vec<f64>,
}

fn contexts_for(seq: &[TokenId], k: usize, bos: TokenId) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(seq.len() * k);
    for t in 0..seq.len() {
        for j in 0..k {
            // position t−k+j in the sequence, bos when negative
            let src = t + j;
            out.push(if src < k { bos } else { seq[src - k] });
        }
    }
    out
}

/// Runs the network over the context windows of `seq`.
pub(crate) fn forward_sequence(
    arch: &Arch,
    params: &[f64],
    seq: &[TokenId],
    bos: TokenId,
) -> SeqActivations {
    let lay = arch.layout();
    let (k, d, h, v) = (
        arch.context_len,
        arch.embed_dim,
        arch.hidden_dim,
        arch.vocab_size,
    );
    let n_in = arch.input_dim();
    let contexts = contexts_for(seq, k, bos);
    let t_len = seq.len();
    let mut hidden = vec![0.0; t_len * h];
    let mut probs = vec![0.0; t_len * v];
    let mut x = vec![0.0; n_in];

    let w1 = &params[lay.w1..lay.b1];
    let b1 = &params[lay.b1..lay.w2];
    let w2 = &params[lay.w2..lay.b2];
    let b2 = &params[lay.b2..lay.total];

    for t in 0..t_len {
        for j in 0..k {
            let tok = contexts[t * k + j] as usize;
            let e = &params[lay.embed + tok * d..lay.embed + (tok + 1) * d];
            x[j * d..(j + 1) * d].copy_from_slice(e);
        }
        let hrow = &mut hidden[t * h..(t + 1) * h];
        for (i, out) in hrow.iter_mut().enumerate() {
            let row = &w1[i * n_in..(i + 1) * n_in];
            let a: f64 = b1[i] + row.iter().zip(&x).map(|(w, xi)| w * xi).sum::<f64>();
            *out = a.tanh();
        }
        let prow = &mut probs[t * v..(t + 1) * v];
        for (o, out) in prow.iter_mut().enumerate() {
            let row = &w2[o * h..(o + 1) * h];
            *out = b2[o]
                + row
                    .iter()
                    .zip(hrow.iter())
                    .map(|(w, hi)| w * hi)
                    .sum::<f64>();
        }
        softmax_in_place(prow);
    }
    SeqActivations {
        contexts,
        hidden,
        probs,
    }
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Accumulates the parameter gradient of one sequence into `grad`, given the
/// loss gradient w.r.t. each output distribution (`T × V`, row-major).
pub(crate) fn backward_sequence(
    arch: &Arch,
    params: &[f64],
    acts: &SeqActivations,
    upstream: &[f64],
    grad: &mut [f64],
) {
    let lay = arch.layout();
    let (k, d, h, v) = (
        arch.context_len,
        arch.embed_dim,
        arch.hidden_dim,
        arch.vocab_size,
    );
    let n_in = arch.input_dim();
    let t_len = acts.probs.len() / v;
    let w1 = &params[lay.w1..lay.b1];
    let w2 = &params[lay.w2..lay.b2];

    let mut dz = vec![0.0; v];
    let mut da = vec![0.0; h];
    let mut x = vec![0.0; n_in];

    for t in 0..t_len {
        let g = &upstream[t * v..(t + 1) * v];
        if g.iter().all(|&x| x == 0.0) {
            continue;
        }
        let p = &acts.probs[t * v..(t + 1) * v];
        // softmax Jacobian: dz = p ⊙ (g − ⟨g, p⟩)
        let gp: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
        for o in 0..v {
            dz[o] = p[o] * (g[o] - gp);
        }
        let hrow = &acts.hidden[t * h..(t + 1) * h];

        for o in 0..v {
            grad[lay.b2 + o] += dz[o];
            let gw = &mut grad[lay.w2 + o * h..lay.w2 + (o + 1) * h];
            for (gwi, hi) in gw.iter_mut().zip(hrow) {
                *gwi += dz[o] * hi;
            }
        }
        for i in 0..h {
            let mut dh = 0.0;
            for o in 0..v {
                dh += w2[o * h + i] * dz[o];
            }
            da[i] = dh * (1.0 - hrow[i] * hrow[i]);
        }

        for j in 0..k {
            let tok = acts.contexts[t * k + j] as usize;
            x[j * d..(j + 1) * d]
                .copy_from_slice(&params[lay.embed + tok * d..lay.embed + (tok + 1) * d]);
        }
        for i in 0..h {
            grad[lay.b1 + i] += da[i];
            let gw = &mut grad[lay.w1 + i * n_in..lay.w1 + (i + 1) * n_in];
            for (gwi, xi) in gw.iter_mut().zip(&x) {
                *gwi += da[i] * xi;
            }
        }
        for j in 0..k {
            let tok = acts.contexts[t * k + j] as usize;
            for c in 0..d {
                let col = j * d + c;
                let mut dx = 0.0;
                for i in 0..h {
                    dx += w1[i * n_in + col] * da[i];
                }
                grad[lay.embed + tok * d + c] += dx;
            }
        }
    }
}

/// Cached forward pass over a batch; `backward` reuses the activations.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    arch: Arch,
    seq_len: usize,
    acts: Vec<SeqActivations>,
}

/// Loss gradient w.r.t. every output distribution of a batch, `B × T × V`.
#[derive(Clone, Debug, PartialEq)]
pub struct DistGrad {
    batch: usize,
    seq_len: usize,
    vocab: usize,
    data: Vec<f64>,
}

impl DistGrad {
    pub fn zeros(batch: usize, seq_len: usize, vocab: usize) -> Self {
        Self {
            batch,
            seq_len,
            vocab,
            data: vec![0.0; batch * seq_len * vocab],
        }
    }

    /// From nested `[sequence][position][token]` gradients.
    pub fn from_nested(g: &[Vec<Vec<f64>>]) -> Result<Self> {
        let batch = g.len();
        let seq_len = g.first().map_or(0, Vec::len);
        let vocab = g.first().and_then(|s| s.first()).map_or(0, Vec::len);
        let mut data = Vec::with_capacity(batch * seq_len * vocab);
        for s in g {
            if s.len() != seq_len {
                return Err(Error::ShapeMismatch("ragged position dimension".into()));
            }
            for row in s {
                if row.len() != vocab {
                    return Err(Error::ShapeMismatch("ragged vocabulary dimension".into()));
                }
                data.extend_from_slice(row);
            }
        }
        Ok(Self {
            batch,
            seq_len,
            vocab,
            data,
        })
    }

    pub fn row_mut(&mut self, b: usize, t: usize) -> &mut [f64] {
        let o = (b * self.seq_len + t) * self.vocab;
        &mut self.data[o..o + self.vocab]
    }

    pub fn row(&self, b: usize, t: usize) -> &[f64] {
        let o = (b * self.seq_len + t) * self.vocab;
        &self.data[o..o + self.vocab]
    }

    fn sequence(&self, b: usize) -> &[f64] {
        let n = self.seq_len * self.vocab;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|x| *x *= c);
    }

    /// `self += c · other`.
    pub fn add_scaled(&mut self, other: &DistGrad, c: f64) -> Result<()> {
        if self.data.len() != other.data.len() {
            return Err(Error::ShapeMismatch(
                "cannot add gradients of different shapes".into(),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
        Ok(())
    }
}

impl ForwardPass {
    pub fn run(ckpt: &ModelCheckpoint, batch: &SequenceBatch, exec: Exec) -> Result<Self> {
        ckpt.validate()?;
        batch.check_vocab(&ckpt.arch)?;
        let bos = super::vocab::BOS_ID;
        let acts = exec.map(batch.sequences(), |s| {
            forward_sequence(&ckpt.arch, &ckpt.params, s, bos)
        });
        Ok(Self {
            arch: ckpt.arch,
            seq_len: batch.seq_len(),
            acts,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.acts.len()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn vocab_size(&self) -> usize {
        self.arch.vocab_size
    }

    /// Next-token distribution for sequence `b` at position `t`.
    pub fn probs(&self, b: usize, t: usize) -> &[f64] {
        let v = self.arch.vocab_size;
        &self.acts[b].probs[t * v..(t + 1) * v]
    }

    pub fn zero_grad(&self) -> DistGrad {
        DistGrad::zeros(self.acts.len(), self.seq_len, self.arch.vocab_size)
    }

    /// Exact parameter gradient of a scalar loss whose gradient w.r.t. the
    /// output distributions is `upstream`.
    pub fn backward(
        &self,
        ckpt: &ModelCheckpoint,
        upstream: &DistGrad,
        exec: Exec,
    ) -> Result<Vec<f64>> {
        if ckpt.arch != self.arch {
            return Err(Error::ArchMismatch(
                "checkpoint differs from forward pass".into(),
            ));
        }
        if upstream.batch != self.acts.len()
            || upstream.seq_len != self.seq_len
            || upstream.vocab != self.arch.vocab_size
        {
            return Err(Error::ShapeMismatch(format!(
                "upstream {}x{}x{}, forward {}x{}x{}",
                upstream.batch,
                upstream.seq_len,
                upstream.vocab,
                self.acts.len(),
                self.seq_len,
                self.arch.vocab_size
            )));
        }
        let p = self.arch.param_count();
        let per_seq = exec.map_range(self.acts.len(), |b| {
            let mut g = vec![0.0; p];
            backward_sequence(
                &self.arch,
                &ckpt.params,
                &self.acts[b],
                upstream.sequence(b),
                &mut g,
            );
            g
        });
        // fixed-order reduction keeps Sequential and Parallel bit-identical
        let mut total = vec![0.0; p];
        for g in &per_seq {
            for (t, x) in total.iter_mut().zip(g) {
                *t += x;
            }
        }
        Ok(total)
    }
}
