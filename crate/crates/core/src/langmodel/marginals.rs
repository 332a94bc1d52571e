use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infomath::TokenDistribution;

/// Which sequence set a set of marginals was averaged over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    Retain,
    Unlearn,
    Union,
}

/// Per-position next-token distributions averaged uniformly over a set of
/// sequences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionMarginals {
    per_t: Vec<TokenDistribution>,
    source: SourceTag,
    batch_size: usize,
}

impl PositionMarginals {
    pub fn new(
        per_t: Vec<TokenDistribution>,
        source: SourceTag,
        batch_size: usize,
    ) -> Result<Self> {
        let Some(first) = per_t.first() else {
            return Err(Error::ShapeMismatch("marginals need T >= 1".into()));
        };
        let v = first.len();
        if per_t.iter().any(|d| d.len() != v) {
            return Err(Error::ShapeMismatch(
                "positions differ in vocabulary size".into(),
            ));
        }
        Ok(Self {
            per_t,
            source,
            batch_size,
        })
    }

    /// Convenience constructor from raw rows, validating each one.
    pub fn from_rows(rows: Vec<Vec<f64>>, source: SourceTag) -> Result<Self> {
        let per_t = rows
            .into_iter()
            .map(TokenDistribution::new)
            .collect::<Result<Vec<_>>>()?;
        Self::new(per_t, source, 1)
    }

    pub fn seq_len(&self) -> usize {
        self.per_t.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.per_t[0].len()
    }

    pub fn source(&self) -> SourceTag {
        self.source
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn at(&self, t: usize) -> &TokenDistribution {
        &self.per_t[t]
    }

    pub fn positions(&self) -> &[TokenDistribution] {
        &self.per_t
    }

    /// Position-averaged distribution (1/T) Σ_t p_t.
    pub fn pooled(&self) -> TokenDistribution {
        let v = self.vocab_size();
        let mut acc = vec![0.0; v];
        for d in &self.per_t {
            for (a, p) in acc.iter_mut().zip(d.probs()) {
                *a += p;
            }
        }
        let n = self.per_t.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        TokenDistribution::from_vec_unchecked(acc)
    }

    pub(crate) fn same_shape(&self, other: &PositionMarginals) -> Result<()> {
        if self.seq_len() != other.seq_len() || self.vocab_size() != other.vocab_size() {
            return Err(Error::ShapeMismatch(format!(
                "marginals {}x{} vs {}x{}",
                self.seq_len(),
                self.vocab_size(),
                other.seq_len(),
                other.vocab_size()
            )));
        }
        Ok(())
    }
}
