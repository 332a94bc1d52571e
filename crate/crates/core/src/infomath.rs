//! Finite-alphabet information theory.
//!
//! All quantities are in nats. The conventions `0 ln 0 = 0` and
//! `0 ln (0/0) = 0` apply throughout; no smoothing is ever applied.

use std::cmp::Ordering;
use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total mass of a distribution.
pub const MASS_TOLERANCE: f64 = 1e-9;

const CLAMP_TOLERANCE: f64 = 1e-12;
const BISECTION_MAX_ITERS: usize = 200;
const BISECTION_WIDTH: f64 = 1e-12;

/// A probability vector over a finite vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TokenDistribution(Vec<f64>);

impl TokenDistribution {
    /// Validates and wraps a probability vector.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty vector".into()));
        }
        if let Some((i, &p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::InvalidDistribution(format!("entry {i} = {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("sums to {total}")));
        }
        Ok(Self(probs))
    }

    /// Wraps a vector already known to be a distribution (softmax output,
    /// convex combination of distributions).
    pub(crate) fn from_vec_unchecked(probs: Vec<f64>) -> Self {
        debug_assert!(((probs.iter().sum::<f64>()) - 1.0).abs() < 1e-6);
        Self(probs)
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    /// Point mass on `index`.
    pub fn point(n: usize, index: usize) -> Self {
        let mut v = vec![0.0; n];
        v[index] = 1.0;
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn get(&self, index: usize) -> f64 {
        self.0[index]
    }
}

impl TryFrom<Vec<f64>> for TokenDistribution {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TokenDistribution> for Vec<f64> {
    fn from(d: TokenDistribution) -> Self {
        d.0
    }
}

impl AsRef<[f64]> for TokenDistribution {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

fn check_len(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch(p.len(), q.len()));
    }
    Ok(())
}

/// KL(p || q) in nats.
pub fn kl_divergence(p: &TokenDistribution, q: &TokenDistribution) -> Result<f64> {
    kl_raw(p.probs(), q.probs())
}

pub(crate) fn kl_raw(p: &[f64], q: &[f64]) -> Result<f64> {
    check_len(p, q)?;
    let mut acc = 0.0;
    for (i, (&a, &b)) in p.iter().zip(q).enumerate() {
        if a > 0.0 {
            if b <= 0.0 {
                return Err(Error::SupportMismatch { index: i, p: a });
            }
            acc += a * (a / b).ln();
        }
    }
    Ok(acc.max(0.0))
}

/// JS(p, q) = ½ KL(p || m) + ½ KL(q || m), m = (p + q)/2. Bitwise symmetric.
pub fn js_divergence(p: &TokenDistribution, q: &TokenDistribution) -> Result<f64> {
    js_raw(p.probs(), q.probs())
}

pub(crate) fn js_raw(p: &[f64], q: &[f64]) -> Result<f64> {
    check_len(p, q)?;
    // Fixed argument order makes js(p, q) and js(q, p) run the same ops.
    let (a, b) = match lex_cmp(p, q) {
        Ordering::Greater => (q, p),
        _ => (p, q),
    };
    let mut acc = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let m = 0.5 * (x + y);
        if x > 0.0 {
            acc += x * (x / m).ln();
        }
        if y > 0.0 {
            acc += y * (y / m).ln();
        }
    }
    Ok((0.5 * acc).clamp(0.0, LN_2))
}

fn lex_cmp(p: &[f64], q: &[f64]) -> Ordering {
    for (a, b) in p.iter().zip(q) {
        match a.total_cmp(b) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Total variation ½ Σ |p − q|.
pub fn tv_distance(p: &TokenDistribution, q: &TokenDistribution) -> Result<f64> {
    tv_raw(p.probs(), q.probs())
}

pub(crate) fn tv_raw(p: &[f64], q: &[f64]) -> Result<f64> {
    check_len(p, q)?;
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// H₂(p) = −p ln p − (1−p) ln(1−p).
pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!(
            "binary_entropy: p = {p} outside [0, 1]"
        )));
    }
    Ok(xlnx_neg(p) + xlnx_neg(1.0 - p))
}

fn xlnx_neg(x: f64) -> f64 {
    if x > 0.0 {
        -x * x.ln()
    } else {
        0.0
    }
}

/// Inverse of H₂ restricted to [0, ½], by bisection.
pub fn binary_entropy_inv(h: f64) -> Result<f64> {
    if !h.is_finite() || h < -CLAMP_TOLERANCE || h > LN_2 + CLAMP_TOLERANCE {
        return Err(Error::domain(format!(
            "binary_entropy_inv: h = {h} outside [0, ln 2]"
        )));
    }
    let h = h.clamp(0.0, LN_2);
    if h == 0.0 {
        return Ok(0.0);
    }
    if h == LN_2 {
        return Ok(0.5);
    }
    let (mut lo, mut hi) = (0.0_f64, 0.5_f64);
    for _ in 0..BISECTION_MAX_ITERS {
        if hi - lo <= BISECTION_WIDTH {
            break;
        }
        let mid = 0.5 * (lo + hi);
        // H₂ is strictly increasing on [0, ½]
        if binary_entropy(mid)? < h {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The pointwise-KL coefficient (ln M)·M/(M−1), for ratio caps M > 1.
pub fn kl_pointwise_coeff(m: f64) -> Result<f64> {
    if !(m > 1.0) || !m.is_finite() {
        return Err(Error::domain(format!(
            "kl_pointwise_coeff: M = {m} must exceed 1"
        )));
    }
    // ln_1p keeps precision near M = 1
    let d = m - 1.0;
    Ok(d.ln_1p() * m / d)
}

/// α·p + (1−α)·q.
pub fn mix(p: &TokenDistribution, q: &TokenDistribution, alpha: f64) -> Result<TokenDistribution> {
    check_alpha(alpha)?;
    check_len(p.probs(), q.probs())?;
    Ok(TokenDistribution::from_vec_unchecked(mix_raw(
        p.probs(),
        q.probs(),
        alpha,
    )))
}

pub(crate) fn mix_raw(p: &[f64], q: &[f64], alpha: f64) -> Vec<f64> {
    p.iter()
        .zip(q)
        .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
        .collect()
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    Ok(())
}
