//! Randomized verification campaigns over synthetic detection games.
//!
//! Instances are generated from split child streams of one seed, so a
//! campaign gives the same verdicts under `Exec::Sequential` and
//! `Exec::Parallel`.

use serde::{Deserialize, Serialize};

use super::{
    accuracy_bound, bayes_accuracy_exact, log_ratio_cap, verify_thm1_empirical,
    verify_thm2_empirical, DetectionGame,
};
use crate::error::Result;
use crate::exec::Exec;
use crate::langmodel::{PositionMarginals, SourceTag, TokenId};
use crate::rng::Rng;

/// Outcome of a campaign: how many instances ran, how many broke the
/// inequality, and the largest `lhs − rhs` seen (negative when every
/// instance held with room to spare).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub instances: usize,
    pub violations: usize,
    pub worst_margin: f64,
}

impl CampaignSummary {
    fn collect(margins: &[(f64, bool)]) -> Self {
        Self {
            instances: margins.len(),
            violations: margins.iter().filter(|(_, ok)| !ok).count(),
            worst_margin: margins
                .iter()
                .map(|(m, _)| *m)
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// A random distribution on `v` outcomes. Larger `sharpness` pushes mass
/// onto fewer outcomes and leaves others near zero.
pub fn random_distribution(rng: &mut Rng, v: usize, sharpness: f64) -> Vec<f64> {
    let mut x: Vec<f64> = (0..v)
        .map(|_| rng.uniform().max(1e-300).powf(sharpness))
        .collect();
    let s: f64 = x.iter().sum();
    x.iter_mut().for_each(|p| *p /= s);
    x
}

fn random_sharpness(rng: &mut Rng) -> f64 {
    [1.0, 2.0, 4.0, 10.0][rng.below(4)]
}

pub fn random_marginals(
    rng: &mut Rng,
    t_len: usize,
    v: usize,
    tag: SourceTag,
) -> PositionMarginals {
    let sharp = random_sharpness(rng);
    let rows = (0..t_len)
        .map(|_| random_distribution(rng, v, sharp))
        .collect();
    PositionMarginals::from_rows(rows, tag).expect("generated rows are distributions")
}

/// A game with vocabulary ≤ `max_vocab`, `T` ≤ `max_t`, random α and π, and
/// its unlearn marginals attached.
pub fn random_game(
    rng: &mut Rng,
    max_vocab: usize,
    max_t: usize,
    pi: Option<f64>,
) -> DetectionGame {
    let v = 2 + rng.below(max_vocab - 1);
    let t_len = 1 + rng.below(max_t);
    let pr = random_marginals(rng, t_len, v, SourceTag::Retain);
    let pu = random_marginals(rng, t_len, v, SourceTag::Unlearn);
    let alpha = rng.uniform_in(0.05, 0.95);
    let pi = pi.unwrap_or_else(|| rng.uniform_in(0.05, 0.95));
    DetectionGame::from_mixture(pr, pu, alpha, pi).expect("generated game is valid")
}

/// Exact Bayes accuracy never exceeds the information bound.
pub fn accuracy_campaign(instances: usize, seed: u64, exec: Exec) -> Result<CampaignSummary> {
    let root = Rng::new(seed);
    let margins = exec
        .map_range(instances, |i| -> Result<(f64, bool)> {
            let mut rng = root.split(i as u64);
            let game = random_game(&mut rng, 8, 6, None);
            let exact = bayes_accuracy_exact(&game);
            let bound = accuracy_bound(game.mutual_information(), game.pi)?;
            Ok((exact - bound, exact <= bound + 1e-9))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(CampaignSummary::collect(&margins))
}

/// Self-gap bound along paths drawn from `p^u`. Every fifth instance plants
/// a near-zero probability on the path to stress the `1/γ` regime.
pub fn self_gap_campaign(instances: usize, seed: u64, exec: Exec) -> Result<CampaignSummary> {
    let root = Rng::new(seed);
    let margins = exec
        .map_range(instances, |i| -> Result<(f64, bool)> {
            let mut rng = root.split(i as u64);
            let mut game = random_game(&mut rng, 8, 6, Some(0.5));
            let t_len = game.seq_len();
            let pu = game.pu.clone().expect("random games carry p^u");
            let mut path: Vec<TokenId> = (0..t_len)
                .map(|t| rng.categorical(pu.at(t).probs()) as TokenId)
                .collect();
            if i % 5 == 4 {
                let t = rng.below(t_len);
                let tiny = 10f64.powf(-rng.uniform_in(6.0, 12.0));
                let v = pu.vocab_size();
                let x = rng.below(v);
                let plant = |m: &PositionMarginals, tag| {
                    let mut rows: Vec<Vec<f64>> =
                        m.positions().iter().map(|d| d.probs().to_vec()).collect();
                    let rest: f64 = rows[t]
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != x)
                        .map(|(_, p)| p)
                        .sum();
                    for (j, p) in rows[t].iter_mut().enumerate() {
                        *p = if j == x {
                            tiny
                        } else {
                            *p / rest * (1.0 - tiny)
                        };
                    }
                    PositionMarginals::from_rows(rows, tag)
                };
                let new_pr = if rng.below(2) == 0 {
                    plant(&game.pr, SourceTag::Retain)?
                } else {
                    game.pr.clone()
                };
                let new_pu = plant(&pu, SourceTag::Unlearn)?;
                game = DetectionGame::from_mixture(new_pr, new_pu, game.alpha.unwrap_or(0.5), 0.5)?;
                path[t] = x as TokenId;
            }
            let check = verify_thm1_empirical(&game, &path)?;
            Ok((check.gap.abs() - check.bound, check.holds))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(CampaignSummary::collect(&margins))
}

/// Per-instance record of the neighborhood campaign.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodInstance {
    pub m_cap: f64,
    pub epsilon: f64,
    pub violation_rate: f64,
    pub tail_bound: f64,
    pub holds: bool,
}

/// Neighborhood bound on `T`-position instances with ratio cap ≤ 4. Each
/// instance picks ε so the tail budget lands in [0.05, 0.5], which keeps the
/// check from being vacuous.
pub fn neighborhood_campaign(
    instances: usize,
    seq_len: usize,
    n_draws: usize,
    seed: u64,
    exec: Exec,
) -> Result<Vec<NeighborhoodInstance>> {
    let root = Rng::new(seed);
    // instances run one after another; each one fans its draws out
    (0..instances)
        .map(|i| {
            let mut rng = root.split(i as u64);
            let v = 2 + rng.below(7);
            let sharp = random_sharpness(&mut rng);
            let mut pr_rows = Vec::with_capacity(seq_len);
            let mut pu_rows = Vec::with_capacity(seq_len);
            for _ in 0..seq_len {
                let r = random_distribution(&mut rng, v, sharp);
                // weights in [½, 2] keep every ratio within [¼, 4]
                let w: Vec<f64> = (0..v)
                    .map(|_| 2f64.powf(rng.uniform_in(-1.0, 1.0)))
                    .collect();
                let z: f64 = r.iter().zip(&w).map(|(a, b)| a * b).sum();
                pu_rows.push(
                    r.iter()
                        .zip(&w)
                        .map(|(a, b)| a * b / z)
                        .collect::<Vec<f64>>(),
                );
                pr_rows.push(r);
            }
            let pr = PositionMarginals::from_rows(pr_rows, SourceTag::Retain)?;
            let pu = PositionMarginals::from_rows(pu_rows, SourceTag::Unlearn)?;
            let c_cap = log_ratio_cap(&pr, &pu)?;
            let delta = rng.uniform_in(0.05, 0.5);
            let epsilon = (2.0 * c_cap * (2.0 / delta).ln() / seq_len as f64).sqrt();
            let alpha = rng.uniform_in(0.1, 0.9);
            let game = DetectionGame::from_mixture(pr, pu, alpha, 0.5)?;
            let check = verify_thm2_empirical(&game, n_draws, epsilon, rng.next_u64(), exec)?;
            Ok(NeighborhoodInstance {
                m_cap: check.m_cap,
                epsilon,
                violation_rate: check.violation_rate,
                tail_bound: check.tail_bound,
                holds: check.holds,
            })
        })
        .collect()
}
