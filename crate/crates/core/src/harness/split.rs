use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Even 0-based indices go to the unlearn set, odd ones to the retain set.
    #[default]
    Alternating,
    /// A seeded shuffle, then the first ⌈f·n⌉ go to the unlearn set.
    Ratio,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub unlearn_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            mode: SplitMode::Alternating,
            unlearn_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.unlearn_fraction > 0.0 && self.unlearn_fraction < 1.0) {
            return Err(Error::Config(format!(
                "unlearn_fraction = {} must lie in (0, 1)",
                self.unlearn_fraction
            )));
        }
        Ok(())
    }
}

/// Partitions sentences into `(unlearn, retain)`, both nonempty.
pub fn make_split<T: Clone>(sentences: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>)> {
    spec.validate()?;
    let n = sentences.len();
    if n < 2 {
        return Err(Error::TooFewSentences(n));
    }
    match spec.mode {
        SplitMode::Alternating => {
            let unlearn = sentences.iter().step_by(2).cloned().collect();
            let retain = sentences.iter().skip(1).step_by(2).cloned().collect();
            Ok((unlearn, retain))
        }
        SplitMode::Ratio => {
            let mut idx: Vec<usize> = (0..n).collect();
            Rng::new(spec.seed).shuffle(&mut idx);
            // keep a hair of slack so 0.1 · 100 stays 10
            let k = ((spec.unlearn_fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n - 1);
            let unlearn = idx[..k].iter().map(|&i| sentences[i].clone()).collect();
            let retain = idx[k..].iter().map(|&i| sentences[i].clone()).collect();
            Ok((unlearn, retain))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alternating_example() {
        let s = ["s0", "s1", "s2", "s3"];
        let (u, r) = make_split(&s, &SplitSpec::default()).unwrap();
        assert_eq!(u, vec!["s0", "s2"]);
        assert_eq!(r, vec!["s1", "s3"]);
        assert!(matches!(
            make_split(&s[..1], &SplitSpec::default()),
            Err(Error::TooFewSentences(1))
        ));
    }

    #[test]
    fn ratio_sizes() {
        let ratio = |f| SplitSpec {
            mode: SplitMode::Ratio,
            unlearn_fraction: f,
            seed: 4,
        };
        let four: Vec<usize> = (0..4).collect();
        assert_eq!(make_split(&four, &ratio(0.5)).unwrap().0.len(), 2);
        let hundred: Vec<usize> = (0..100).collect();
        let (u, r) = make_split(&hundred, &ratio(0.1)).unwrap();
        assert_eq!((u.len(), r.len()), (10, 90));
        let mut all: Vec<usize> = u.into_iter().chain(r).collect();
        all.sort();
        assert_eq!(all, hundred);
        assert!(make_split(&four, &ratio(1.0)).is_err());
    }
}
