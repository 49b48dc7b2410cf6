//! Numerical property suites.
//!
//! Each suite returns a [`CheckOutcome`] instead of panicking so the same
//! code backs the test suite and the `verify` command.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{c_beta_k, poa_lower_bound, poa_upper_bound};
use crate::equilibrium::{max_welfare_exact, poa, verify_pure_ne, SolveOptions, DEFAULT_ENUMERATION_BUDGET};
use crate::error::Result;
use crate::eval::{evaluate, Evaluator};
use crate::game::{Action, ActionSet, GameInstance, Metric, StrategyProfile, User};
use crate::gumbel::{gumbel_cdf, ks_critical_1pct, ks_statistic, simulate, GumbelSampler, EULER_GAMMA};
use crate::instances::{gen_dataset1, gen_prop1_instance, gen_thm2_instance, prop1_welfare_ratio};
use crate::rng::{derive_seed, rng_from_seed, GameRng};
use crate::slate::UserSlate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Individual comparisons made.
    pub comparisons: usize,
    pub violations: usize,
    /// Largest violation in the suite's own units (0 when none).
    pub worst: f64,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, comparisons: usize, violations: usize, worst: f64, detail: String) -> Self {
        CheckOutcome {
            name: name.to_owned(),
            passed: violations == 0,
            comparisons,
            violations,
            worst,
            detail,
        }
    }
}

#[derive(Default)]
struct Tally {
    comparisons: usize,
    violations: usize,
    worst: f64,
    first: Option<String>,
}

impl Tally {
    /// Records `excess > 0` as a violation.
    fn check(&mut self, excess: f64, what: impl FnOnce() -> String) {
        self.comparisons += 1;
        if excess > 0.0 || excess.is_nan() {
            self.violations += 1;
            self.worst = self.worst.max(excess);
            if self.first.is_none() {
                self.first = Some(what());
            }
        }
    }

    fn merge(&mut self, other: Tally) {
        self.comparisons += other.comparisons;
        self.violations += other.violations;
        self.worst = self.worst.max(other.worst);
        if self.first.is_none() {
            self.first = other.first;
        }
    }

    fn finish(self, name: &str, summary: String) -> CheckOutcome {
        let detail = match self.first {
            Some(f) => format!("{summary}; first violation: {f}"),
            None => summary,
        };
        CheckOutcome::new(name, self.comparisons, self.violations, self.worst, detail)
    }
}

/// Kolmogorov-Smirnov test of the zero-mean sampler at several scales.
pub fn sampler_ks(n_samples: usize, seed: u64) -> CheckOutcome {
    let mut t = Tally::default();
    for (c, beta) in [0.05, 0.3, 1.0, 2.5].into_iter().enumerate() {
        let mut g = GumbelSampler::zero_mean(beta, derive_seed(seed, &[c as u64])).expect("beta > 0");
        let xs: Vec<f64> = (0..n_samples).map(|_| g.sample()).collect();
        let d = ks_statistic(&xs, |x| gumbel_cdf(x, -beta * EULER_GAMMA, beta));
        let crit = ks_critical_1pct(n_samples);
        t.check(d - crit, || format!("beta={beta}: D={d:.5} > {crit:.5}"));
    }
    t.finish("gumbel sampler KS", format!("{n_samples} samples per scale"))
}

/// Closed-form utility, choice probabilities and conditional engagement
/// against Monte Carlo on random score vectors, each within `3 se`.
///
/// Conditional means are compared only for items chosen at least
/// `min_support` times, where the sample standard error is reliable.
pub fn oracle_equivalence(cases: usize, n_samples: u64, seed: u64) -> CheckOutcome {
    const MIN_SUPPORT: u64 = 100;
    let results: Vec<(Tally, usize)> = (0..cases)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_from_seed(derive_seed(seed, &[c as u64]));
            let len = rng.random_range(1..=6);
            let beta = rng.random_range(0.05..1.0);
            let mut scores: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
            if rng.random_bool(0.3) && len > 1 {
                scores[1] = scores[0];
            }
            let entries: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
            let slate = UserSlate::from_scores(&entries, len, beta);
            let pi = slate.user_utility(beta);
            let probs = slate.choice_probabilities(len, beta).0;
            let mc = simulate(&scores, beta, n_samples, derive_seed(seed, &[c as u64, 1])).expect("valid");
            let mut t = Tally::default();
            let mut skipped = 0;
            let e = mc.max_utility;
            t.check((e.mean - pi).abs() - 3.0 * e.se, || {
                format!("case {c}: pi={pi} mc={}±{}", e.mean, e.se)
            });
            let n = n_samples as f64;
            for (i, &p) in probs.iter().enumerate() {
                let se = (p * (1.0 - p) / n).sqrt();
                let f = mc.choice_freq[i];
                t.check((f - p).abs() - 3.0 * se, || {
                    format!("case {c} item {i}: p={p} freq={f} se={se}")
                });
            }
            let supported: Vec<_> = mc
                .conditional
                .iter()
                .flatten()
                .filter(|e| e.count >= MIN_SUPPORT)
                .copied()
                .collect();
            skipped += len - supported.len();
            for e in &supported {
                t.check((e.mean - pi).abs() - 3.0 * e.se, || {
                    format!("case {c}: conditional {}±{} vs {pi}", e.mean, e.se)
                });
            }
            if supported.len() >= 2 {
                let hi = supported.iter().max_by(|a, b| a.mean.total_cmp(&b.mean)).unwrap();
                let lo = supported.iter().min_by(|a, b| a.mean.total_cmp(&b.mean)).unwrap();
                let pooled = (hi.se * hi.se + lo.se * lo.se).sqrt();
                t.check(hi.mean - lo.mean - 3.0 * pooled, || {
                    format!("case {c}: conditional spread {} > 3*{pooled}", hi.mean - lo.mean)
                });
            }
            (t, skipped)
        })
        .collect();
    let mut total = Tally::default();
    let mut skipped = 0;
    for (t, s) in results {
        total.merge(t);
        skipped += s;
    }
    let summary = format!(
        "{cases} cases x {n_samples} samples; {skipped} items below {MIN_SUPPORT} draws skipped for conditional means"
    );
    total.finish("closed form vs Monte Carlo", summary)
}

/// Random small instance: `n <= 5` players, `<= 4` actions each, `m <= 20`
/// users, `beta` in `[0.05, 1]`. Half the instances draw relevance from a
/// five-point grid so that ties and straddles are common.
pub fn random_small_instance(rng: &mut GameRng) -> GameInstance {
    let n = rng.random_range(1..=5);
    let m = rng.random_range(1..=20);
    let k_slate = rng.random_range(1..=4);
    let beta = rng.random_range(0.05..=1.0);
    let grid = rng.random_bool(0.5);
    let users = (0..m as u64)
        .map(|j| User::new(j, rng.random_range(0.5..2.0)))
        .collect();
    let players = (0..n)
        .map(|_| {
            let k = rng.random_range(1..=4);
            ActionSet::new(
                (0..k)
                    .map(|_| {
                        Action::new(
                            (0..m)
                                .map(|_| {
                                    if grid {
                                        rng.random_range(0..=4) as f64 / 4.0
                                    } else {
                                        rng.random::<f64>()
                                    }
                                })
                                .collect(),
                        )
                    })
                    .collect(),
            )
        })
        .collect();
    GameInstance::new(users, players, beta, k_slate, Metric::Engagement).expect("valid by construction")
}

fn random_profile(g: &GameInstance, rng: &mut GameRng) -> Vec<usize> {
    g.action_counts().iter().map(|&k| rng.random_range(0..k)).collect()
}

fn random_item(g: &GameInstance, rng: &mut GameRng) -> (usize, usize) {
    let p = rng.random_range(0..g.n_players());
    (p, rng.random_range(0..g.players()[p].len()))
}

/// `K`-th largest score of `items` for user type `t`, counting default
/// items of score 0 when fewer than `K` items exist.
fn kth_score(g: &GameInstance, items: &[(usize, usize)], user: usize) -> f64 {
    let mut s: Vec<f64> = items.iter().map(|&(p, a)| g.sigma(p, a, user)).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s.get(g.k_slate() - 1).copied().unwrap_or(0.0)
}

/// Submodularity, smoothness, monotonicity and the welfare identity on
/// `instances` random small games with a few profiles each.
pub fn lemma_suites(instances: usize, seed: u64, slack: f64) -> Vec<CheckOutcome> {
    const PROFILES: usize = 4;
    let tallies: Vec<[Tally; 5]> = (0..instances)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_from_seed(derive_seed(seed, &[c as u64]));
            let g = random_small_instance(&mut rng);
            let ev = Evaluator::new(&g);
            let c_bk = c_beta_k(g.beta(), g.k_slate());
            let mut t: [Tally; 5] = Default::default();
            for _ in 0..PROFILES {
                let prof = random_profile(&g, &mut rng);
                let items: Vec<(usize, usize)> = prof.iter().copied().enumerate().collect();
                // submodularity on a random sub-collection
                let mut base: Vec<(usize, usize)> =
                    items.iter().copied().filter(|_| rng.random_bool(0.6)).collect();
                let x = random_item(&g, &mut rng);
                let y = random_item(&g, &mut rng);
                let w_s = ev.welfare_of_items(&base);
                base.push(x);
                let w_sx = ev.welfare_of_items(&base);
                base.push(y);
                let w_sxy = ev.welfare_of_items(&base);
                base.remove(base.len() - 2);
                let w_sy = ev.welfare_of_items(&base);
                base.pop();
                let gain_x = w_sx - w_s;
                let gain_x_given_y = w_sxy - w_sy;
                t[0].check(gain_x_given_y - gain_x - slack, || {
                    format!("instance {c}: marginal gain {gain_x_given_y} after y exceeds {gain_x}")
                });
                // monotonicity: weak always, strict when x beats someone's K-th score
                t[2].check(w_s - w_sx - slack, || {
                    format!("instance {c}: adding an item lowered W from {w_s} to {w_sx}")
                });
                let enters = (0..g.n_users()).any(|j| g.sigma(x.0, x.1, j) > kth_score(&g, &base, j));
                if enters {
                    t[3].check(if w_sx > w_s { 0.0 } else { w_s - w_sx + f64::MIN_POSITIVE }, || {
                        format!("instance {c}: item entering a slate left W at {w_s}")
                    });
                }
                // smoothness of welfare: W(s) - W(s_-i) <= u_i(s) / c
                let (w, u) = ev.evaluate(&prof);
                for i in 0..g.n_players() {
                    let w_minus = ev.welfare_without(&prof, i);
                    let lhs = w - w_minus;
                    t[1].check(lhs - u[i] / c_bk - slack, || {
                        format!("instance {c} player {i}: W(s)-W(s_-i)={lhs} > u_i/c={}", u[i] / c_bk)
                    });
                }
                // (c, c)-smoothness: sum_i u_i(s'_i, s_-i) >= c W(s') - c W(s)
                let other = random_profile(&g, &mut rng);
                let dev: f64 = (0..g.n_players())
                    .map(|i| ev.deviation_utility(&prof, i, other[i]))
                    .sum();
                let rhs = c_bk * (ev.welfare(&other) - w);
                t[1].check(rhs - dev - slack, || {
                    format!("instance {c}: smoothness sum {dev} < c(W(s')-W(s)) = {rhs}")
                });
                // welfare identity, with the default-item share when n < K
                let r = evaluate(&g, &StrategyProfile::new(prof.clone())).expect("valid profile");
                let sum_u: f64 = r.creator_utilities.iter().sum();
                t[4].check((r.welfare - sum_u - r.default_engagement).abs() - slack, || {
                    format!("instance {c}: W={} sum u={sum_u} default={}", r.welfare, r.default_engagement)
                });
                if g.n_players() >= g.k_slate() {
                    t[4].check((r.welfare - sum_u).abs() - slack, || {
                        format!("instance {c}: W={} but sum u={sum_u} with n >= K", r.welfare)
                    });
                }
            }
            t
        })
        .collect();
    let names = [
        "welfare submodularity",
        "welfare smoothness",
        "welfare monotonicity (weak)",
        "welfare monotonicity (strict when the item enters a slate)",
        "welfare identity",
    ];
    let mut merged: [Tally; 5] = Default::default();
    for t in tallies {
        for (m, x) in merged.iter_mut().zip(t) {
            m.merge(x);
        }
    }
    merged
        .into_iter()
        .zip(names)
        .map(|(t, name)| t.finish(name, format!("{instances} random instances, slack {slack:e}")))
        .collect()
}

/// The lower-bound instance: all-`x_1` is a pure NE and its PoA exceeds
/// the lower-bound formula.
pub fn thm2_grid(grid: &[(usize, usize, f64)]) -> Result<CheckOutcome> {
    let mut t = Tally::default();
    for &(n, k, beta) in grid {
        let g = gen_thm2_instance(n, k, beta)?;
        let ne = StrategyProfile::uniform(n, 0);
        let check = verify_pure_ne(&g, &ne)?;
        t.check(check.max_gap - 1e-9, || {
            format!("n={n} K={k} beta={beta}: all-x1 not a NE (gap {})", check.max_gap)
        });
        let opt = max_welfare_exact(&g, DEFAULT_ENUMERATION_BUDGET)?;
        let w_ne = Evaluator::new(&g).welfare(ne.as_slice());
        let ratio = opt.welfare / w_ne;
        let lb = poa_lower_bound(n, beta, k);
        t.check(lb - ratio, || format!("n={n} K={k} beta={beta}: W*/W(NE)={ratio} <= {lb}"));
    }
    Ok(t.finish("lower-bound instance", format!("{} grid points", grid.len())))
}

/// The exposure instance at `delta_0`: `(s_2, s_0, ...)` is a pure NE and
/// the welfare ratio matches its closed form and exceeds 2.
pub fn prop1_check(n: usize, k: usize, beta: f64) -> Result<CheckOutcome> {
    let p = gen_prop1_instance(n, k, beta, None)?;
    let mut t = Tally::default();
    let mut ne = StrategyProfile::uniform(n, 0);
    ne.0[0] = 1;
    let check = verify_pure_ne(&p.instance, &ne)?;
    t.check(check.max_gap - 1e-9, || format!("(s2, s0, ...) not a NE (gap {})", check.max_gap));
    let ev = Evaluator::new(&p.instance);
    let ratio = ev.welfare(StrategyProfile::uniform(n, 0).as_slice()) / ev.welfare(ne.as_slice());
    let formula = prop1_welfare_ratio(k, beta);
    t.check((ratio - formula).abs() - 0.01, || format!("ratio {ratio} vs formula {formula}"));
    t.check(2.0 - ratio, || format!("ratio {ratio} <= 2"));
    Ok(t.finish(
        "exposure instance",
        format!("n={n} K={k} beta={beta} delta={:.6} ratio={ratio:.4}", p.delta),
    ))
}

/// Exact PoA of small Dataset-1 instances stays in `[1, 1 + 1/c)`.
pub fn poa_within_bounds(instances: usize, seed: u64) -> Result<CheckOutcome> {
    let mut t = Tally::default();
    for c in 0..instances {
        let mut rng = rng_from_seed(derive_seed(seed, &[c as u64]));
        let n = rng.random_range(2..=4);
        let k = rng.random_range(1..=n);
        let beta = [0.1, 0.5][c % 2];
        let g = gen_dataset1(n, 20, beta, k, rng.random())?;
        let r = poa(&g, &SolveOptions::default())?;
        let ub = poa_upper_bound(beta, k);
        t.check(1.0 - 1e-9 - r.poa, || format!("n={n} K={k}: PoA {} < 1", r.poa));
        t.check(r.poa - ub, || format!("n={n} K={k} beta={beta}: PoA {} >= {ub}", r.poa));
    }
    Ok(t.finish("PoA within theoretical bounds", format!("{instances} Dataset-1 instances")))
}

/// Fast suites for `verify`; `full` uses acceptance-scale sample sizes.
pub fn standard_suite(seed: u64, full: bool) -> Result<Vec<CheckOutcome>> {
    let (cases, samples, lemma) = if full { (50, 1_000_000, 200) } else { (20, 200_000, 100) };
    let mut out = vec![
        sampler_ks(100_000, derive_seed(seed, &[0])),
        oracle_equivalence(cases, samples, derive_seed(seed, &[1])),
    ];
    out.extend(lemma_suites(lemma, derive_seed(seed, &[2]), 1e-9));
    out.push(thm2_grid(&[(3, 2, 0.1), (4, 2, 0.2), (4, 3, 0.1), (5, 2, 0.2), (5, 4, 0.1)])?);
    out.push(prop1_check(3, 2, 0.1)?);
    out.push(poa_within_bounds(10, derive_seed(seed, &[3]))?);
    Ok(out)
}
