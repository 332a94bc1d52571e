//! Acceptance checks, one verdict line per criterion. Runs without the libtest
//! harness so the lines print under a plain `cargo test`.

mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use mari::bounds::campaign::{
    accuracy_campaign, neighborhood_campaign, random_marginals, self_gap_campaign,
};
use mari::bounds::{accuracy_bound, bayes_accuracy_exact, tightness_game};
use mari::harness::{run_experiment, ExperimentConfig};
use mari::infomath::{js_divergence, kl_pointwise_coeff, mix, tv_distance, TokenDistribution};
use mari::langmodel::{PositionMarginals, SourceTag};
use mari::mariloss::{
    mari_pooled, mari_tokenwise, mari_value_and_gradient, mixture_alpha, MarIMode,
};
use mari::unlearner::{
    baseline_objective, cross_entropy_loss, cross_entropy_value_and_gradient, mari_objective,
    utility_kl_loss, utility_kl_value_and_gradient, Method, UnlearnConfig,
};
use mari::{Exec, Rng};

use common::{finite_difference, max_rel_err, random_dist, random_probs, small_setup};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed < Duration::from_secs(limit_s)
}

fn divergence_suite() -> Verdict {
    const N: usize = 10_000;
    let start = Instant::now();
    let mut rng = Rng::new(11);
    let mut bad = [0usize; 5];
    for _ in 0..N {
        let v = 2 + rng.below(9);
        let p = random_dist(&mut rng, v);
        let q = random_dist(&mut rng, v);

        let pq = js_divergence(&p, &q).unwrap();
        let qp = js_divergence(&q, &p).unwrap();
        let distinct = p.probs() != q.probs();
        let range_ok = (0.0..=std::f64::consts::LN_2 + 1e-12).contains(&pq);
        let zero_ok = js_divergence(&p, &p).unwrap() == 0.0 && (!distinct || pq > 0.0);
        if pq.to_bits() != qp.to_bits() || !range_ok || !zero_ok {
            bad[0] += 1;
        }

        if tv_distance(&p, &q).unwrap() > (2.0 * pq).sqrt() + 1e-12 {
            bad[1] += 1;
        }

        let alpha = rng.uniform_in(0.01, 0.99);
        let d = mix(&p, &q, alpha).unwrap();
        let scaled = tv_distance(&d, &p).unwrap() / (1.0 - alpha);
        if (tv_distance(&q, &p).unwrap() - scaled).abs() > 1e-12 {
            bad[2] += 1;
        }

        // p = q·w renormalised keeps every ratio bounded
        let qv: Vec<f64> = random_probs(&mut rng, v)
            .iter()
            .map(|x| x.max(1e-6))
            .collect();
        let qs: f64 = qv.iter().sum();
        let qv: Vec<f64> = qv.iter().map(|x| x / qs).collect();
        let w: Vec<f64> = (0..v)
            .map(|_| 4f64.powf(rng.uniform_in(-1.0, 1.0)))
            .collect();
        let z: f64 = qv.iter().zip(&w).map(|(a, b)| a * b).sum();
        let pv: Vec<f64> = qv.iter().zip(&w).map(|(a, b)| a * b / z).collect();
        let ratio = pv.iter().zip(&qv).map(|(a, b)| a / b).fold(0.0, f64::max);
        if ratio <= 1.0 {
            continue;
        }
        let m_cap = ratio * rng.uniform_in(1.0, 2.0);
        let coeff = kl_pointwise_coeff(m_cap).unwrap();
        for (a, b) in pv.iter().zip(&qv) {
            if a >= b && a * (a / b).ln() > coeff * (a - b) + 1e-12 {
                bad[3] += 1;
            }
        }
        let _ = TokenDistribution::new(pv).unwrap();
    }
    let elapsed = start.elapsed();
    bad[4] = usize::from(!within(elapsed, 30));
    verdict(
        bad.iter().all(|&b| b == 0),
        format!(
            "{N} instances; violations js={} pinsker={} tv_scaling={} pointwise_kl={}; {:.1}s",
            bad[0],
            bad[1],
            bad[2],
            bad[3],
            elapsed.as_secs_f64()
        ),
    )
}

fn accuracy_bound_soundness() -> Verdict {
    let start = Instant::now();
    let summary = accuracy_campaign(2_000, 21, Exec::default()).unwrap();
    let mut worst_tight: f64 = 0.0;
    for &(p_star, pi) in &[
        (0.6, 0.5),
        (0.75, 0.5),
        (0.9, 0.5),
        (0.8, 0.3),
        (0.95, 0.7),
        (0.99, 0.5),
    ] {
        let game = tightness_game(p_star, pi).unwrap();
        let bound = accuracy_bound(game.mutual_information(), pi).unwrap();
        worst_tight = worst_tight.max((bayes_accuracy_exact(&game) - bound).abs());
    }
    let elapsed = start.elapsed();
    verdict(
        summary.passed() && worst_tight <= 1e-6 && within(elapsed, 60),
        format!(
            "{} games, {} violations, worst margin {:.3e}; tightness gap {:.2e}; {:.1}s",
            summary.instances,
            summary.violations,
            summary.worst_margin,
            worst_tight,
            elapsed.as_secs_f64()
        ),
    )
}

fn self_gap_check() -> Verdict {
    let summary = self_gap_campaign(2_000, 31, Exec::default()).unwrap();
    verdict(
        summary.passed(),
        format!(
            "{} instances (every fifth near-degenerate), {} violations, worst margin {:.3e}",
            summary.instances, summary.violations, summary.worst_margin
        ),
    )
}

fn neighborhood_check() -> Verdict {
    let rows = neighborhood_campaign(100, 64, 10_000, 41, Exec::default()).unwrap();
    let failures = rows.iter().filter(|r| !r.holds).count();
    let max_m = rows.iter().map(|r| r.m_cap).fold(0.0, f64::max);
    let max_rate = rows.iter().map(|r| r.violation_rate).fold(0.0, f64::max);
    verdict(
        failures == 0 && max_m <= 4.0 && rows.len() >= 100,
        format!(
            "{} instances, T=64, 10000 draws each; {failures} failures; max M {max_m:.3}; max violation rate {max_rate:.4}",
            rows.len()
        ),
    )
}

fn pooled_ordering() -> Verdict {
    let mut rng = Rng::new(51);
    let mut violations = 0;
    for _ in 0..2_000 {
        let t_len = 1 + rng.below(8);
        let v = 2 + rng.below(9);
        let pr = random_marginals(&mut rng, t_len, v, SourceTag::Retain);
        let pu = random_marginals(&mut rng, t_len, v, SourceTag::Unlearn);
        let alpha = rng.uniform_in(0.05, 0.95);
        let pooled = mari_pooled(&pr, &pu, alpha).unwrap().value;
        let tokenwise = mari_tokenwise(&pr, &pu, alpha).unwrap().value;
        if pooled > tokenwise + 1e-9 {
            violations += 1;
        }
    }
    // the two positions trade places between the sets
    let a = vec![0.9, 0.1];
    let b = vec![0.2, 0.8];
    let pr = PositionMarginals::from_rows(vec![a.clone(), b.clone()], SourceTag::Retain).unwrap();
    let pu = PositionMarginals::from_rows(vec![b, a], SourceTag::Unlearn).unwrap();
    let pooled = mari_pooled(&pr, &pu, 0.5).unwrap().value;
    let tokenwise = mari_tokenwise(&pr, &pu, 0.5).unwrap().value;
    verdict(
        violations == 0 && pooled == 0.0 && tokenwise > 0.0,
        format!("2000 pairs, {violations} violations; swap example pooled={pooled} token-wise={tokenwise:.6}"),
    )
}

fn gradient_certification() -> Verdict {
    const CONFIGS: u64 = 24;
    let exec = Exec::default();
    let mut worst = [0.0f64; 8];
    let names = [
        "ce",
        "utility_kl",
        "mari_tokenwise",
        "mari_pooled",
        "ga",
        "gd",
        "kl_ga",
        "mari_objective",
    ];
    for seed in 0..CONFIGS {
        let s = small_setup(1000 + seed);
        let (ckpt, frozen, r, u) = (&s.ckpt, &s.frozen, &s.retain, &s.unlearn);
        let mut rng = Rng::new(seed);
        let lambda = rng.uniform_in(0.1, 0.9);

        let (_, g) = cross_entropy_value_and_gradient(ckpt, r, exec).unwrap();
        let n = finite_difference(ckpt, |c| cross_entropy_loss(c, r).unwrap());
        worst[0] = worst[0].max(max_rel_err(&g, &n));

        let (_, g) = utility_kl_value_and_gradient(ckpt, frozen, r, exec).unwrap();
        let n = finite_difference(ckpt, |c| utility_kl_loss(c, frozen, r).unwrap());
        worst[1] = worst[1].max(max_rel_err(&g, &n));

        let alpha = mixture_alpha(r.len(), u.len()).unwrap();
        for (slot, mode) in [(2, MarIMode::TokenWise), (3, MarIMode::Pooled)] {
            let (_, g) = mari_value_and_gradient(ckpt, r, u, alpha, mode, exec).unwrap();
            let n = finite_difference(ckpt, |c| {
                mari_value_and_gradient(c, r, u, alpha, mode, exec)
                    .unwrap()
                    .0
            });
            worst[slot] = worst[slot].max(max_rel_err(&g, &n));
        }

        for (slot, method) in [(4, Method::Ga), (5, Method::Gd), (6, Method::Klga)] {
            let cfg = UnlearnConfig {
                method,
                lambda,
                ..UnlearnConfig::default()
            };
            let g = baseline_objective(ckpt, frozen, r, u, &cfg).unwrap().grad;
            let n = finite_difference(ckpt, |c| {
                baseline_objective(c, frozen, r, u, &cfg).unwrap().total
            });
            worst[slot] = worst[slot].max(max_rel_err(&g, &n));
        }

        let mode = if seed % 2 == 0 {
            MarIMode::TokenWise
        } else {
            MarIMode::Pooled
        };
        let cfg = UnlearnConfig {
            method: Method::Mari,
            lambda,
            mode,
            ..UnlearnConfig::default()
        };
        let g = mari_objective(ckpt, frozen, r, u, &cfg).unwrap().grad;
        let n = finite_difference(ckpt, |c| {
            mari_objective(c, frozen, r, u, &cfg).unwrap().total
        });
        worst[7] = worst[7].max(max_rel_err(&g, &n));
    }
    let detail = names
        .iter()
        .zip(&worst)
        .map(|(n, w)| format!("{n}={w:.1e}"))
        .collect::<Vec<_>>()
        .join(" ");
    verdict(
        worst.iter().all(|&w| w <= 1e-4),
        format!("{CONFIGS} configs, h=1e-5, max rel err: {detail}"),
    )
}

fn smoke_config(out: &Path) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.json");
    let overrides = vec![("MARI_OUTPUT_DIR".to_string(), out.display().to_string())];
    ExperimentConfig::load_with(&path, overrides).unwrap()
}

fn replication(out: &Path) -> (Verdict, Verdict) {
    let cfg = smoke_config(out);
    let start = Instant::now();
    let s = run_experiment(&cfg).unwrap();
    let elapsed = start.elapsed();

    let pts = |x: f64| 100.0 * x;
    let forget_gap = pts((s.unlearned.metrics.acc_unlearn - s.gold.metrics.acc_unlearn).abs());
    let mari_drop = pts(s.retain_drop(&s.unlearned));
    let ga = &s.comparisons["ga"];
    let ga_drop = pts(s.retain_drop(ga));
    let fig = verdict(
        forget_gap <= 5.0 && mari_drop <= 3.0 && ga_drop >= 2.0 * mari_drop && within(elapsed, 600),
        format!(
            "acc_unlearn {:.3} vs gold {:.3} ({forget_gap:.2} pts); retain drop mari {mari_drop:.2} pts, ga {ga_drop:.2} pts; {:.0}s",
            s.unlearned.metrics.acc_unlearn,
            s.gold.metrics.acc_unlearn,
            elapsed.as_secs_f64()
        ),
    );

    let (base, mari_auc, gold) = (s.baseline.auc, s.unlearned.auc, s.gold.auc);
    let det = verdict(
        base < mari_auc && (mari_auc - gold).abs() <= 0.10,
        format!("min-k 0.2 auc: baseline {base:.3} < mari {mari_auc:.3}; gold {gold:.3}"),
    );
    (fig, det)
}

fn identical_runs(first: &Path, second: &Path) -> Verdict {
    run_experiment(&smoke_config(second)).unwrap();
    let mut files = vec!["summary.json".to_string()];
    for entry in std::fs::read_dir(first).unwrap() {
        let name = entry.unwrap().file_name().to_string_lossy().into_owned();
        if name.ends_with(".ckpt") || name.ends_with(".csv") {
            files.push(name);
        }
    }
    files.sort();
    let differing: Vec<&String> = files
        .iter()
        .filter(|f| std::fs::read(first.join(f)).unwrap() != std::fs::read(second.join(f)).unwrap())
        .collect();
    verdict(
        differing.is_empty(),
        format!(
            "{} artifacts compared, differing: {differing:?}",
            files.len()
        ),
    )
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let second = dir.path().join("second");

    let mut results: Vec<(&str, Verdict)> = vec![
        ("divergence inequality suite", divergence_suite()),
        (
            "accuracy bound soundness and tightness",
            accuracy_bound_soundness(),
        ),
        ("self-gap bound campaign", self_gap_check()),
        ("neighborhood bound campaign", neighborhood_check()),
        ("pooled vs token-wise ordering", pooled_ordering()),
        ("gradient certification", gradient_certification()),
    ];
    let (fig, det) = replication(&first);
    results.push(("desk-scale unlearning replication", fig));
    results.push(("desk-scale detector replication", det));
    results.push(("determinism", identical_runs(&first, &second)));

    let mut failed = 0;
    for (i, (name, v)) in results.iter().enumerate() {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {}: {tag}  {name}: {}", i + 1, v.detail);
        failed += usize::from(!v.pass);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
