//! Information-theoretic guarantees and their verifiers.
//!
//! The detection game draws a position `T*` uniformly, a label `Z` with
//! `P[Z = 1] = π`, and a token from the union marginal `p^d_{T*}` when
//! `Z = 0` or from the retain marginal `p^r_{T*}` when `Z = 1`. Three results
//! are checked here:
//!
//! - the accuracy of any detector of `Z` is at most
//!   `1 − H₂⁻¹(H₂(π) − I)`, compared against the exact Bayes accuracy;
//! - along any path `u`, the self-score gap `|S(u,u) − S(u,r)|` is at most
//!   `2√2 / (γ(1−α)) · √I` where `γ` is the pathwise probability floor;
//! - for a path `U` drawn from `p^u`, the gap exceeds
//!   `κ(M) · √2/(1−α) · √I + ε` with probability at most
//!   `2 exp(−T ε² / (2C))`.

pub mod campaign;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::infomath::{
    binary_entropy, binary_entropy_inv, check_alpha, kl_pointwise_coeff, mix_raw, TokenDistribution,
};
use crate::langmodel::{PositionMarginals, SourceTag, TokenId};
use crate::mariloss::mari_tokenwise;
use crate::rng::Rng;

const ENTROPY_SLACK: f64 = 1e-12;
const MIXTURE_SLACK: f64 = 1e-12;
/// Smallest ratio cap used when the instance has `p^u = p^r` exactly.
const MIN_RATIO_CAP: f64 = 1.0 + 1e-9;
const DRAWS_PER_CHUNK: usize = 512;

/// Retain and union marginals plus the label prior. When the mixture weight
/// is known, the unlearn marginals are kept alongside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionGame {
    pub pr: PositionMarginals,
    pub pd: PositionMarginals,
    pub pi: f64,
    pub pu: Option<PositionMarginals>,
    pub alpha: Option<f64>,
}

fn check_pi(pi: f64) -> Result<()> {
    if !(pi > 0.0 && pi < 1.0) {
        return Err(Error::domain(format!("pi = {pi} must lie in (0, 1)")));
    }
    Ok(())
}

impl DetectionGame {
    /// A game on given retain and union marginals. With `alpha`, the union
    /// must decompose as `α p^r + (1−α) p^u` for a valid `p^u`, which is
    /// recovered and stored.
    pub fn new(
        pr: PositionMarginals,
        pd: PositionMarginals,
        pi: f64,
        alpha: Option<f64>,
    ) -> Result<Self> {
        check_pi(pi)?;
        pr.same_shape(&pd)?;
        let pu = match alpha {
            None => None,
            Some(a) => {
                check_alpha(a)?;
                let mut rows = Vec::with_capacity(pr.seq_len());
                for t in 0..pr.seq_len() {
                    let mut row = Vec::with_capacity(pr.vocab_size());
                    for (&d, &r) in pd.at(t).probs().iter().zip(pr.at(t).probs()) {
                        let u = (d - a * r) / (1.0 - a);
                        if u < -MIXTURE_SLACK {
                            return Err(Error::InvalidDistribution(format!(
                                "union marginal at position {t} is not a mixture with alpha = {a}"
                            )));
                        }
                        row.push(u.max(0.0));
                    }
                    let s: f64 = row.iter().sum();
                    row.iter_mut().for_each(|x| *x /= s);
                    rows.push(row);
                }
                Some(PositionMarginals::from_rows(rows, SourceTag::Unlearn)?)
            }
        };
        Ok(Self {
            pr,
            pd,
            pi,
            pu,
            alpha,
        })
    }

    /// The game induced by retain and unlearn marginals mixed with weight
    /// `alpha`.
    pub fn from_mixture(
        pr: PositionMarginals,
        pu: PositionMarginals,
        alpha: f64,
        pi: f64,
    ) -> Result<Self> {
        check_pi(pi)?;
        check_alpha(alpha)?;
        pr.same_shape(&pu)?;
        let per_t = (0..pr.seq_len())
            .map(|t| {
                TokenDistribution::from_vec_unchecked(mix_raw(
                    pr.at(t).probs(),
                    pu.at(t).probs(),
                    alpha,
                ))
            })
            .collect();
        let pd =
            PositionMarginals::new(per_t, SourceTag::Union, pr.batch_size() + pu.batch_size())?;
        Ok(Self {
            pr,
            pd,
            pi,
            pu: Some(pu),
            alpha: Some(alpha),
        })
    }

    pub fn seq_len(&self) -> usize {
        self.pr.seq_len()
    }

    fn unlearn_side(&self) -> Result<(&PositionMarginals, f64)> {
        match (&self.pu, self.alpha) {
            (Some(pu), Some(a)) => Ok((pu, a)),
            _ => Err(Error::domain(
                "this check needs the unlearn marginals and alpha",
            )),
        }
    }

    /// Mutual information `I((T*, X); Z)` in nats. At `π = ½` this is the
    /// token-wise MarI.
    pub fn mutual_information(&self) -> f64 {
        let pi = self.pi;
        let h = |x: f64| if x > 0.0 { -x * x.ln() } else { 0.0 };
        let mut acc = 0.0;
        for t in 0..self.seq_len() {
            for (&r, &d) in self.pr.at(t).probs().iter().zip(self.pd.at(t).probs()) {
                acc += h(pi * r + (1.0 - pi) * d) - pi * h(r) - (1.0 - pi) * h(d);
            }
        }
        (acc / self.seq_len() as f64).clamp(0.0, binary_entropy(pi).unwrap_or(0.0))
    }
}

/// `1 − H₂⁻¹(H₂(π) − I)`, the best accuracy any detector can reach given
/// `I` nats of information about the label.
pub fn accuracy_bound(mari: f64, pi: f64) -> Result<f64> {
    check_pi(pi)?;
    let h = binary_entropy(pi)?;
    if !mari.is_finite() || mari < -ENTROPY_SLACK || mari > h + ENTROPY_SLACK {
        return Err(Error::domain(format!(
            "mari = {mari} outside [0, H2(pi) = {h}]"
        )));
    }
    let remaining = (h - mari).clamp(0.0, h);
    Ok(1.0 - binary_entropy_inv(remaining)?)
}

/// Exact Bayes-optimal accuracy by enumerating every (position, token).
pub fn bayes_accuracy_exact(game: &DetectionGame) -> f64 {
    let pi = game.pi;
    let mut acc = 0.0;
    for t in 0..game.seq_len() {
        for (&d, &r) in game.pd.at(t).probs().iter().zip(game.pr.at(t).probs()) {
            acc += ((1.0 - pi) * d).max(pi * r);
        }
    }
    acc / game.seq_len() as f64
}

fn check_gap_inputs(mari: f64, alpha: f64) -> Result<()> {
    check_alpha(alpha)?;
    if !(mari >= 0.0 && mari.is_finite()) {
        return Err(Error::domain(format!(
            "mari = {mari} must be finite and ≥ 0"
        )));
    }
    Ok(())
}

/// `2√2 / (γ(1−α)) · √I`.
pub fn self_gap_bound(mari: f64, gamma: f64, alpha: f64) -> Result<f64> {
    check_gap_inputs(mari, alpha)?;
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::domain(format!("gamma = {gamma} must lie in (0, 1]")));
    }
    Ok(2.0 * std::f64::consts::SQRT_2 / (gamma * (1.0 - alpha)) * mari.sqrt())
}

/// Deviation bound for paths drawn from the unlearn marginals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodBound {
    pub bound: f64,
    pub tail_probability: f64,
    /// Largest squared log-ratio on the support of `p^u`.
    pub c_cap: f64,
}

/// `κ(M) · √2/(1−α) · √I + ε`, failing with probability at most
/// `2 exp(−T ε² / (2C))`. `C` is read off the marginals.
pub fn neighborhood_gap_bound(
    mari: f64,
    m_cap: f64,
    alpha: f64,
    epsilon: f64,
    pr: &PositionMarginals,
    pu: &PositionMarginals,
) -> Result<NeighborhoodBound> {
    check_gap_inputs(mari, alpha)?;
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::domain(format!(
            "epsilon = {epsilon} must be finite and ≥ 0"
        )));
    }
    let c_cap = log_ratio_cap(pr, pu)?;
    let bound = kl_pointwise_coeff(m_cap)? * std::f64::consts::SQRT_2 / (1.0 - alpha) * mari.sqrt()
        + epsilon;
    Ok(NeighborhoodBound {
        bound,
        tail_probability: tail_probability(pr.seq_len(), epsilon, c_cap),
        c_cap,
    })
}

/// `2 exp(−T ε² / (2C))`, capped at 1; zero when the log-ratio is constant
/// zero and `ε > 0`.
pub fn tail_probability(seq_len: usize, epsilon: f64, c_cap: f64) -> f64 {
    if c_cap == 0.0 {
        return if epsilon > 0.0 { 0.0 } else { 1.0 };
    }
    (2.0 * (-(seq_len as f64) * epsilon * epsilon / (2.0 * c_cap)).exp()).min(1.0)
}

fn support_pairs<'a>(
    pr: &'a PositionMarginals,
    pu: &'a PositionMarginals,
) -> Result<impl Iterator<Item = (f64, f64)> + 'a> {
    pr.same_shape(pu)?;
    for t in 0..pr.seq_len() {
        for (i, (&r, &u)) in pr.at(t).probs().iter().zip(pu.at(t).probs()).enumerate() {
            if u > 0.0 && r <= 0.0 {
                return Err(Error::SupportMismatch { index: i, p: u });
            }
        }
    }
    Ok((0..pr.seq_len()).flat_map(move |t| {
        pr.at(t)
            .probs()
            .iter()
            .zip(pu.at(t).probs())
            .filter(|(_, &u)| u > 0.0)
            .map(|(&r, &u)| (r, u))
    }))
}

/// `C = max [ln(p^r_t(x) / p^u_t(x))]²` over the support of `p^u`.
pub fn log_ratio_cap(pr: &PositionMarginals, pu: &PositionMarginals) -> Result<f64> {
    Ok(support_pairs(pr, pu)?
        .map(|(r, u)| (r / u).ln().powi(2))
        .fold(0.0, f64::max))
}

/// Smallest `M` with `p^u/p^r ≤ M` and `p^r/p^u ≤ M` on the support of `p^u`,
/// kept strictly above 1.
pub fn likelihood_ratio_cap(pr: &PositionMarginals, pu: &PositionMarginals) -> Result<f64> {
    Ok(support_pairs(pr, pu)?
        .map(|(r, u)| (u / r).max(r / u))
        .fold(MIN_RATIO_CAP, f64::max))
}

/// `min {p^u_t(x), p^r_t(x)}` over the support of `p^u`: a floor for every
/// path the unlearn marginals can produce.
pub fn support_floor(pr: &PositionMarginals, pu: &PositionMarginals) -> Result<f64> {
    Ok(support_pairs(pr, pu)?
        .map(|(r, u)| r.min(u))
        .fold(1.0, f64::min))
}

/// Mean negative log-probability of `path` under per-position marginals.
fn marginal_score(path: &[TokenId], m: &PositionMarginals) -> f64 {
    let s: f64 = path
        .iter()
        .enumerate()
        .map(|(t, &x)| -m.at(t).get(x as usize).ln())
        .sum();
    s / path.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfGapCheck {
    pub gap: f64,
    pub bound: f64,
    pub gamma: f64,
    pub holds: bool,
}

/// Compares `|S(u,u) − S(u,r)|` along `u_path` with the self-gap bound at
/// the path's own probability floor.
pub fn verify_thm1_empirical(game: &DetectionGame, u_path: &[TokenId]) -> Result<SelfGapCheck> {
    let (pu, alpha) = game.unlearn_side()?;
    if u_path.len() != game.seq_len() {
        return Err(Error::LengthMismatch(u_path.len(), game.seq_len()));
    }
    let v = game.pr.vocab_size();
    let mut gamma = f64::INFINITY;
    let mut floor_at = 0;
    for (t, &x) in u_path.iter().enumerate() {
        if x as usize >= v {
            return Err(Error::Vocabulary(format!(
                "token {x} outside vocabulary of {v}"
            )));
        }
        let g = pu.at(t).get(x as usize).min(game.pr.at(t).get(x as usize));
        if g < gamma {
            gamma = g;
            floor_at = t;
        }
    }
    if !(gamma > 0.0) {
        return Err(Error::DegenerateGamma(floor_at));
    }
    let mari = mari_tokenwise(&game.pr, pu, alpha)?.value;
    let gap = marginal_score(u_path, pu) - marginal_score(u_path, &game.pr);
    let bound = self_gap_bound(mari, gamma, alpha)?;
    Ok(SelfGapCheck {
        gap,
        bound,
        gamma,
        holds: gap.abs() <= bound + 1e-9,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodCheck {
    pub violation_rate: f64,
    pub tail_bound: f64,
    pub bound: f64,
    pub m_cap: f64,
    pub c_cap: f64,
    pub holds: bool,
}

/// Monte-Carlo check of the neighborhood bound: draws `n_draws` paths with
/// `U_t ~ p^u_t` independently across positions and counts how often the
/// gap exceeds the bound. `M` is the instance's own ratio cap.
pub fn verify_thm2_empirical(
    game: &DetectionGame,
    n_draws: usize,
    epsilon: f64,
    seed: u64,
    exec: Exec,
) -> Result<NeighborhoodCheck> {
    let (pu, alpha) = game.unlearn_side()?;
    if n_draws == 0 {
        return Err(Error::domain("n_draws must be positive"));
    }
    let m_cap = likelihood_ratio_cap(&game.pr, pu)?;
    let mari = mari_tokenwise(&game.pr, pu, alpha)?.value;
    let nb = neighborhood_gap_bound(mari, m_cap, alpha, epsilon, &game.pr, pu)?;

    let t_len = game.seq_len();
    // ln(p^r/p^u) for every (t, x); only entries on the support are drawn
    let log_ratio: Vec<Vec<f64>> = (0..t_len)
        .map(|t| {
            pu.at(t)
                .probs()
                .iter()
                .zip(game.pr.at(t).probs())
                .map(|(&u, &r)| if u > 0.0 { (r / u).ln() } else { 0.0 })
                .collect()
        })
        .collect();
    let root = Rng::new(seed);
    let chunks = n_draws.div_ceil(DRAWS_PER_CHUNK);
    let counts = exec.map_range(chunks, |c| {
        let mut rng = root.split(c as u64);
        let draws = DRAWS_PER_CHUNK.min(n_draws - c * DRAWS_PER_CHUNK);
        let mut over = 0usize;
        for _ in 0..draws {
            let mut s = 0.0;
            for (t, lr) in log_ratio.iter().enumerate() {
                s += lr[rng.categorical(pu.at(t).probs())];
            }
            if (s / t_len as f64).abs() > nb.bound {
                over += 1;
            }
        }
        over
    });
    let violation_rate = counts.iter().sum::<usize>() as f64 / n_draws as f64;
    let tail = nb.tail_probability;
    let sigma = (tail * (1.0 - tail) / n_draws as f64).sqrt();
    Ok(NeighborhoodCheck {
        violation_rate,
        tail_bound: tail,
        bound: nb.bound,
        m_cap,
        c_cap: nb.c_cap,
        holds: violation_rate <= tail + 3.0 * sigma,
    })
}

/// The two-posterior game on which the accuracy bound is attained: one
/// position, two tokens, with `P(Z=1 | x)` equal to `p_star` or `1 − p_star`.
/// Requires `½ < p_star < 1` and `1 − p_star ≤ π ≤ p_star`.
pub fn tightness_game(p_star: f64, pi: f64) -> Result<DetectionGame> {
    check_pi(pi)?;
    if !(p_star > 0.5 && p_star < 1.0) || pi < 1.0 - p_star || pi > p_star {
        return Err(Error::domain(format!(
            "need 1/2 < p* < 1 and 1 − p* ≤ pi ≤ p*, got p* = {p_star}, pi = {pi}"
        )));
    }
    let w0 = (pi - (1.0 - p_star)) / (2.0 * p_star - 1.0);
    let w = [w0, 1.0 - w0];
    let post = [p_star, 1.0 - p_star];
    let pr: Vec<f64> = (0..2).map(|x| w[x] * post[x] / pi).collect();
    let pd: Vec<f64> = (0..2)
        .map(|x| w[x] * (1.0 - post[x]) / (1.0 - pi))
        .collect();
    DetectionGame::new(
        PositionMarginals::from_rows(vec![normalized(pr)], SourceTag::Retain)?,
        PositionMarginals::from_rows(vec![normalized(pd)], SourceTag::Union)?,
        pi,
        None,
    )
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Every bound quantity for one game, one JSON line per instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub mari: f64,
    pub mutual_information: f64,
    pub pi: f64,
    pub bayes_accuracy_exact: f64,
    pub accuracy_bound: f64,
    pub gamma: f64,
    pub alpha: f64,
    #[serde(rename = "M")]
    pub m_cap: f64,
    #[serde(rename = "C")]
    pub c_cap: f64,
    pub epsilon: f64,
    pub self_gap_bound: f64,
    pub neighborhood_gap_bound: f64,
    pub tail_probability: f64,
}

impl BoundReport {
    /// Evaluates a game that carries its unlearn marginals. `gamma` is the
    /// support floor, so the self-gap bound covers every path.
    pub fn evaluate(game: &DetectionGame, epsilon: f64) -> Result<Self> {
        let (pu, alpha) = game.unlearn_side()?;
        let mari = mari_tokenwise(&game.pr, pu, alpha)?.value;
        let mutual_information = game.mutual_information();
        let gamma = support_floor(&game.pr, pu)?;
        let m_cap = likelihood_ratio_cap(&game.pr, pu)?;
        let nb = neighborhood_gap_bound(mari, m_cap, alpha, epsilon, &game.pr, pu)?;
        Ok(Self {
            mari,
            mutual_information,
            pi: game.pi,
            bayes_accuracy_exact: bayes_accuracy_exact(game),
            accuracy_bound: accuracy_bound(mutual_information, game.pi)?,
            gamma,
            alpha,
            m_cap,
            c_cap: nb.c_cap,
            epsilon,
            self_gap_bound: self_gap_bound(mari, gamma, alpha)?,
            neighborhood_gap_bound: nb.bound,
            tail_probability: nb.tail_probability,
        })
    }
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
    fn accuracy_bound_examples() {
        assert_abs_diff_eq!(accuracy_bound(0.0, 0.5).unwrap(), 0.5, epsilon = 1e-12);
        let h = binary_entropy(0.3).unwrap();
        assert_abs_diff_eq!(accuracy_bound(h, 0.3).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            accuracy_bound(0.2, 0.5).unwrap(),
            0.805_172_837_229_815_4,
            epsilon = 1e-9
        );
        assert!(accuracy_bound(0.1, 0.0).is_err());
        assert!(accuracy_bound(0.8, 0.5).is_err());
    }

    #[test]
    fn bayes_examples() {
        let pr = marg(&[&[1.0, 0.0]], SourceTag::Retain);
        let pd = marg(&[&[0.5, 0.5]], SourceTag::Union);
        let game = DetectionGame::new(pr.clone(), pd, 0.5, None).unwrap();
        assert_abs_diff_eq!(bayes_accuracy_exact(&game), 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(game.mutual_information(), JS_HALF_POINT, epsilon = 1e-12);
        let b = accuracy_bound(JS_HALF_POINT, 0.5).unwrap();
        assert_abs_diff_eq!(b, 0.816_012_997_264_768_1, epsilon = 1e-9);
        assert!(0.75 <= b);

        let same = DetectionGame::new(pr.clone(), pr, 0.3, None).unwrap();
        assert_abs_diff_eq!(bayes_accuracy_exact(&same), 0.7, epsilon = 1e-15);
    }

    #[test]
    fn mixture_check() {
        let pr = marg(&[&[0.8, 0.2]], SourceTag::Retain);
        let pd = marg(&[&[0.5, 0.5]], SourceTag::Union);
        let g = DetectionGame::new(pr.clone(), pd.clone(), 0.5, Some(0.5)).unwrap();
        let pu = g.pu.unwrap();
        assert_abs_diff_eq!(pu.at(0).get(0), 0.2, epsilon = 1e-12);
        // 0.5 − 0.9·0.8 < 0, no valid unlearn marginal
        assert!(matches!(
            DetectionGame::new(pr, pd, 0.5, Some(0.9)),
            Err(Error::InvalidDistribution(_))
        ));
    }

    #[test]
    fn self_gap_examples() {
        assert_eq!(self_gap_bound(0.0, 0.3, 0.5).unwrap(), 0.0);
        let b = self_gap_bound(JS_HALF_POINT, 1.0, 0.5).unwrap();
        assert_abs_diff_eq!(b, 2.627_616_741_239_624, epsilon = 1e-9);
        assert_abs_diff_eq!(
            self_gap_bound(0.1, 0.25, 0.3).unwrap(),
            2.0 * self_gap_bound(0.1, 0.5, 0.3).unwrap(),
            epsilon = 1e-12
        );
        assert!(self_gap_bound(0.1, 0.0, 0.5).is_err());
        assert!(self_gap_bound(0.1, 0.5, 1.0).is_err());
    }

    #[test]
    fn neighborhood_examples() {
        let pr = marg(&[&[0.5, 0.5]], SourceTag::Retain);
        let pu = marg(&[&[0.25, 0.75]], SourceTag::Unlearn);
        let nb = neighborhood_gap_bound(JS_HALF_POINT, 2.0, 0.5, 0.1, &pr, &pu).unwrap();
        assert_abs_diff_eq!(nb.bound, 1.921_325_135_782_357, epsilon = 1e-9);
        assert_abs_diff_eq!(nb.c_cap, 2f64.ln().powi(2), epsilon = 1e-12);
        let zero = neighborhood_gap_bound(0.0, 2.0, 0.5, 0.0, &pr, &pu).unwrap();
        assert_eq!(zero.bound, 0.0);
        assert!(tail_probability(10_000, 0.1, 1.0) < 1e-20);
        let bad = marg(&[&[1.0, 0.0]], SourceTag::Retain);
        assert!(matches!(
            neighborhood_gap_bound(0.1, 2.0, 0.5, 0.1, &bad, &pu),
            Err(Error::SupportMismatch { .. })
        ));
    }

    #[test]
    fn self_gap_identical_and_degenerate() {
        let pr = marg(&[&[0.5, 0.5], &[0.1, 0.9]], SourceTag::Retain);
        let game = DetectionGame::from_mixture(pr.clone(), pr.clone(), 0.5, 0.5).unwrap();
        let c = verify_thm1_empirical(&game, &[0, 1]).unwrap();
        assert_eq!(c.gap, 0.0);
        assert_eq!(c.bound, 0.0);
        assert!(c.holds);
        let pu = marg(&[&[1.0, 0.0], &[0.1, 0.9]], SourceTag::Unlearn);
        let game = DetectionGame::from_mixture(pr, pu, 0.5, 0.5).unwrap();
        assert!(matches!(
            verify_thm1_empirical(&game, &[1, 1]),
            Err(Error::DegenerateGamma(0))
        ));
    }

    #[test]
    fn neighborhood_identical_and_vacuous() {
        let pr = marg(&[&[0.3, 0.7][..]; 8], SourceTag::Retain);
        let game = DetectionGame::from_mixture(pr.clone(), pr, 0.5, 0.5).unwrap();
        let c = verify_thm2_empirical(&game, 1000, 0.0, 1, Exec::Sequential).unwrap();
        assert_eq!(c.violation_rate, 0.0);

        let pr = marg(&[&[0.3, 0.7][..]; 8], SourceTag::Retain);
        let pu = marg(&[&[0.6, 0.4][..]; 8], SourceTag::Unlearn);
        let game = DetectionGame::from_mixture(pr, pu, 0.5, 0.5).unwrap();
        let c = verify_thm2_empirical(&game, 1000, 10.0, 1, Exec::Sequential).unwrap();
        assert_eq!(c.violation_rate, 0.0);
        assert!(c.holds);
    }

    #[test]
    fn neighborhood_parallel_matches_sequential() {
        let pr = marg(&vec![&[0.3, 0.5, 0.2][..]; 16], SourceTag::Retain);
        let pu = marg(&vec![&[0.5, 0.2, 0.3][..]; 16], SourceTag::Unlearn);
        let game = DetectionGame::from_mixture(pr, pu, 0.4, 0.5).unwrap();
        let a = verify_thm2_empirical(&game, 3000, 0.05, 9, Exec::Sequential).unwrap();
        let b = verify_thm2_empirical(&game, 3000, 0.05, 9, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tightness_attains_bound() {
        for &(p_star, pi) in &[(0.8, 0.5), (0.9, 0.3), (0.7, 0.65)] {
            let g = tightness_game(p_star, pi).unwrap();
            assert_abs_diff_eq!(bayes_accuracy_exact(&g), p_star, epsilon = 1e-12);
            let b = accuracy_bound(g.mutual_information(), pi).unwrap();
            assert_abs_diff_eq!(b, p_star, epsilon = 1e-6);
        }
        assert!(tightness_game(0.6, 0.2).is_err());
    }

    #[test]
    fn report_roundtrips_through_json() {
        let pr = marg(&[&[0.5, 0.5], &[0.2, 0.8]], SourceTag::Retain);
        let pu = marg(&[&[0.25, 0.75], &[0.4, 0.6]], SourceTag::Unlearn);
        let game = DetectionGame::from_mixture(pr, pu, 0.5, 0.5).unwrap();
        let r = BoundReport::evaluate(&game, 0.1).unwrap();
        assert!(r.bayes_accuracy_exact <= r.accuracy_bound + 1e-9);
        assert_abs_diff_eq!(r.mari, r.mutual_information, epsilon = 1e-12);
        let line = serde_json::to_string(&r).unwrap();
        assert!(line.contains("\"M\":") && line.contains("\"C\":"));
        let back: BoundReport = serde_json::from_str(&line).unwrap();
        assert_eq!(back, r);
    }
}
