//! Optimal welfare, worst-case coarse correlated equilibria and price of
//! anarchy.
//!
//! Joint profiles are indexed in mixed radix with the last player varying
//! fastest, so index order is lexicographic profile order.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::eval::Evaluator;
use crate::game::{GameInstance, StrategyProfile};
use crate::lp::{LinearProgram, Sense};
use crate::rng::rng_from_seed;

pub const DEFAULT_ENUMERATION_BUDGET: u128 = 10_000_000;
pub const DEFAULT_LP_BUDGET: u128 = 100_000;
/// Absolute slack for "no profitable deviation".
pub const NE_TOLERANCE: f64 = 1e-9;

/// Relative slack below which two welfare values count as tied.
const TIE_REL: f64 = 1e-12;

fn improves(candidate: f64, incumbent: f64) -> bool {
    candidate > incumbent + TIE_REL * incumbent.abs().max(1.0)
}

/// Mixed-radix indexing over joint profiles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileSpace {
    dims: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
}

impl ProfileSpace {
    /// Fails with `BudgetExceeded` when the space has more than `budget`
    /// profiles.
    pub fn new(dims: &[usize], budget: u128) -> Result<Self> {
        let mut size: u128 = 1;
        for &d in dims {
            size = size.saturating_mul(d as u128);
        }
        if size > budget {
            return Err(Error::BudgetExceeded {
                what: "joint profiles",
                needed: size,
                budget,
            });
        }
        let mut strides = vec![1usize; dims.len()];
        for i in (0..dims.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * dims[i + 1];
        }
        Ok(ProfileSpace {
            dims: dims.to_vec(),
            strides,
            size: size as usize,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn index_of(&self, profile: &[usize]) -> usize {
        profile.iter().zip(&self.strides).map(|(a, s)| a * s).sum()
    }

    pub fn profile_of(&self, mut index: usize) -> Vec<usize> {
        self.strides
            .iter()
            .map(|&s| {
                let a = index / s;
                index %= s;
                a
            })
            .collect()
    }

    /// Index of the profile obtained from `index` by setting player `i` to
    /// action `a`.
    #[inline]
    pub fn replace(&self, index: usize, i: usize, a: usize) -> usize {
        let cur = (index / self.strides[i]) % self.dims[i];
        index - cur * self.strides[i] + a * self.strides[i]
    }

    /// Advances `profile` to the next one in lexicographic order.
    pub fn increment(&self, profile: &mut [usize]) {
        for i in (0..profile.len()).rev() {
            profile[i] += 1;
            if profile[i] < self.dims[i] {
                return;
            }
            profile[i] = 0;
        }
    }
}

/// Probability distribution over joint profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    space: ProfileSpace,
    probs: Vec<f64>,
}

impl JointDistribution {
    pub fn new(space: ProfileSpace, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != space.size() {
            return invalid(format!(
                "distribution has {} entries for {} profiles",
                probs.len(),
                space.size()
            ));
        }
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return invalid("negative or NaN probability");
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return invalid(format!("probabilities sum to {total}"));
        }
        Ok(JointDistribution { space, probs })
    }

    pub fn point_mass(space: ProfileSpace, profile: &[usize]) -> Self {
        let mut probs = vec![0.0; space.size()];
        probs[space.index_of(profile)] = 1.0;
        JointDistribution { space, probs }
    }

    pub fn space(&self) -> &ProfileSpace {
        &self.space
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn probability(&self, profile: &[usize]) -> f64 {
        self.probs[self.space.index_of(profile)]
    }

    /// `E[f(s)]` for a per-profile table `f`.
    pub fn expect(&self, table: &[f64]) -> f64 {
        self.probs.iter().zip(table).map(|(p, v)| p * v).sum()
    }

    /// Profiles with probability above `eps`, in index order.
    pub fn support(&self, eps: f64) -> Vec<(StrategyProfile, f64)> {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > eps)
            .map(|(i, &p)| (StrategyProfile::new(self.space.profile_of(i)), p))
            .collect()
    }

    /// CSV with one column per player followed by `probability`; zero
    /// entries are omitted.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.space.dims().len())
            .map(|i| format!("player_{i}"))
            .collect();
        header.push("probability".into());
        w.write_record(&header)?;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                let mut rec: Vec<String> = self
                    .space
                    .profile_of(i)
                    .iter()
                    .map(|a| a.to_string())
                    .collect();
                rec.push(format!("{p:.17e}"));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `W(s)` and `u_i(s)` for every joint profile.
#[derive(Debug, Clone)]
pub struct UtilityTable {
    pub space: ProfileSpace,
    pub welfare: Vec<f64>,
    /// Row-major `[profile][player]`.
    pub utilities: Vec<f64>,
}

impl UtilityTable {
    pub fn build(instance: &GameInstance, budget: u128) -> Result<Self> {
        let space = ProfileSpace::new(&instance.action_counts(), budget)?;
        let ev = Evaluator::new(instance);
        let rows: Vec<(f64, Vec<f64>)> = (0..space.size())
            .into_par_iter()
            .map(|idx| ev.evaluate(&space.profile_of(idx)))
            .collect();
        let n = instance.n_players();
        let mut welfare = Vec::with_capacity(rows.len());
        let mut utilities = Vec::with_capacity(rows.len() * n);
        for (w, u) in rows {
            welfare.push(w);
            utilities.extend(u);
        }
        Ok(UtilityTable {
            space,
            welfare,
            utilities,
        })
    }

    pub fn n_players(&self) -> usize {
        self.space.dims().len()
    }

    #[inline]
    pub fn utility(&self, index: usize, player: usize) -> f64 {
        self.utilities[index * self.n_players() + player]
    }

    /// Lexicographically first welfare maximizer.
    pub fn argmax_welfare(&self) -> (usize, f64) {
        let mut best = (0, self.welfare[0]);
        for (i, &w) in self.welfare.iter().enumerate().skip(1) {
            if improves(w, best.1) {
                best = (i, w);
            }
        }
        best
    }

    /// Coefficients of the CCE row for player `i` deviating to `a`:
    /// `u_i(s) - u_i(a, s_-i)` for every `s`.
    pub fn deviation_row(&self, i: usize, a: usize) -> Vec<f64> {
        (0..self.space.size())
            .map(|s| self.utility(s, i) - self.utility(self.space.replace(s, i, a), i))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WelfareMethod {
    Exact,
    Sa,
    Brs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelfareOptimum {
    pub profile: StrategyProfile,
    pub welfare: f64,
    pub method: WelfareMethod,
    pub evaluations: u64,
}

/// Global welfare maximum by enumeration; ties go to the lexicographically
/// smallest profile.
pub fn max_welfare_exact(instance: &GameInstance, budget: u128) -> Result<WelfareOptimum> {
    const CHUNK: usize = 4096;
    let space = ProfileSpace::new(&instance.action_counts(), budget)?;
    let ev = Evaluator::new(instance);
    let n_chunks = space.size().div_ceil(CHUNK);
    // chunk boundaries do not depend on the thread count, so neither does the
    // result
    let winners: Vec<(usize, f64)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * CHUNK;
            let end = (start + CHUNK).min(space.size());
            let mut prof = space.profile_of(start);
            let mut best = (start, f64::NEG_INFINITY);
            for idx in start..end {
                let w = ev.welfare(&prof);
                if best.1 == f64::NEG_INFINITY || improves(w, best.1) {
                    best = (idx, w);
                }
                space.increment(&mut prof);
            }
            best
        })
        .collect();
    let mut best = winners[0];
    for &c in &winners[1..] {
        if improves(c.1, best.1) {
            best = c;
        }
    }
    Ok(WelfareOptimum {
        profile: StrategyProfile::new(space.profile_of(best.0)),
        welfare: best.1,
        method: WelfareMethod::Exact,
        evaluations: space.size() as u64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealingConfig {
    pub horizon: usize,
    /// `tau_t = tau0 / sqrt(t)`.
    pub tau0: f64,
}

impl Default for AnnealingConfig {
    fn default() -> Self {
        AnnealingConfig {
            horizon: 5000,
            tau0: 0.1,
        }
    }
}

/// Metropolis acceptance probability of a move changing welfare by `delta`.
pub fn acceptance_probability(delta: f64, tau: f64) -> f64 {
    if delta > 0.0 {
        1.0
    } else {
        (delta / tau).exp()
    }
}

fn random_profile<R: Rng>(dims: &[usize], rng: &mut R) -> Vec<usize> {
    dims.iter().map(|&d| rng.random_range(0..d)).collect()
}

/// Simulated annealing over single-player perturbations; returns the best
/// visited profile.
pub fn max_welfare_sa(
    instance: &GameInstance,
    config: AnnealingConfig,
    seed: u64,
) -> Result<WelfareOptimum> {
    if config.horizon == 0 || !(config.tau0 > 0.0) {
        return invalid("annealing needs horizon >= 1 and tau0 > 0");
    }
    let ev = Evaluator::new(instance);
    let dims = instance.action_counts();
    let n = dims.len();
    let mut rng = rng_from_seed(seed);
    let mut cur = random_profile(&dims, &mut rng);
    let mut w = ev.welfare(&cur);
    let mut best = (cur.clone(), w);
    for t in 1..=config.horizon {
        let i = rng.random_range(0..n);
        let a = rng.random_range(0..dims[i]);
        let old = cur[i];
        cur[i] = a;
        let w_new = ev.welfare(&cur);
        let tau = config.tau0 / (t as f64).sqrt();
        let accept = w_new > w || rng.random::<f64>() < acceptance_probability(w_new - w, tau);
        if accept {
            w = w_new;
            if improves(w, best.1) {
                best = (cur.clone(), w);
            }
        } else {
            cur[i] = old;
        }
    }
    Ok(WelfareOptimum {
        profile: StrategyProfile::new(best.0),
        welfare: best.1,
        method: WelfareMethod::Sa,
        evaluations: config.horizon as u64 + 1,
    })
}

/// `max(30, 2n)`.
pub fn default_brs_rounds(n: usize) -> usize {
    30.max(2 * n)
}

/// Randomized coordinate ascent on welfare, best of `restarts` runs.
pub fn max_welfare_brs(
    instance: &GameInstance,
    rounds: usize,
    restarts: usize,
    seed: u64,
) -> Result<WelfareOptimum> {
    if restarts == 0 {
        return invalid("best-response search needs at least one restart");
    }
    let ev = Evaluator::new(instance);
    let dims = instance.action_counts();
    let n = dims.len();
    let mut rng = rng_from_seed(seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut evaluations = 0u64;
    for _ in 0..restarts {
        let mut cur = random_profile(&dims, &mut rng);
        let mut w = ev.welfare(&cur);
        evaluations += 1;
        for _ in 0..rounds {
            let i = rng.random_range(0..n);
            let keep = cur[i];
            let mut arg = keep;
            for a in 0..dims[i] {
                if a == keep {
                    continue;
                }
                cur[i] = a;
                let wa = ev.welfare(&cur);
                evaluations += 1;
                if improves(wa, w) {
                    w = wa;
                    arg = a;
                }
            }
            cur[i] = arg;
        }
        if best.as_ref().is_none_or(|b| improves(w, b.1)) {
            best = Some((cur, w));
        }
    }
    let (profile, welfare) = best.expect("restarts >= 1");
    Ok(WelfareOptimum {
        profile: StrategyProfile::new(profile),
        welfare,
        method: WelfareMethod::Brs,
        evaluations,
    })
}

/// Better of annealing and best-response search.
pub fn max_welfare_heuristic(instance: &GameInstance, seed: u64) -> Result<WelfareOptimum> {
    let sa = max_welfare_sa(instance, AnnealingConfig::default(), seed)?;
    let brs = max_welfare_brs(
        instance,
        default_brs_rounds(instance.n_players()),
        5,
        seed ^ 0x9e37_79b9_7f4a_7c15,
    )?;
    Ok(if improves(brs.welfare, sa.welfare) { brs } else { sa })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeCheck {
    pub is_ne: bool,
    /// `max_i max_a u_i(a, s_-i) - u_i(s)`; zero or negative at a strict NE.
    pub max_gap: f64,
    /// `(player, action)` attaining `max_gap`.
    pub best_deviation: Option<(usize, usize)>,
}

pub fn verify_pure_ne(instance: &GameInstance, profile: &StrategyProfile) -> Result<NeCheck> {
    instance.check_profile(profile)?;
    let ev = Evaluator::new(instance);
    let prof = profile.as_slice();
    let (_, u) = ev.evaluate(prof);
    let mut max_gap = f64::NEG_INFINITY;
    let mut best_deviation = None;
    for (i, set) in instance.players().iter().enumerate() {
        for a in 0..set.len() {
            if a == prof[i] {
                continue;
            }
            let gap = ev.deviation_utility(prof, i, a) - u[i];
            if gap > max_gap {
                max_gap = gap;
                best_deviation = Some((i, a));
            }
        }
    }
    if best_deviation.is_none() {
        max_gap = 0.0;
    }
    Ok(NeCheck {
        is_ne: max_gap <= NE_TOLERANCE,
        max_gap,
        best_deviation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CceDiagnostics {
    pub variables: usize,
    pub constraints: usize,
    pub pivots: usize,
    /// Largest violation of a CCE row after clipping and renormalizing.
    pub max_violation: f64,
}

#[derive(Debug, Clone)]
pub struct WorstCce {
    pub distribution: JointDistribution,
    pub welfare: f64,
    pub diagnostics: CceDiagnostics,
}

fn max_row_violation(table: &UtilityTable, probs: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for (i, &k) in table.space.dims().iter().enumerate() {
        for a in 0..k {
            let slack: f64 = probs
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(s, &p)| {
                    p * (table.utility(s, i) - table.utility(table.space.replace(s, i, a), i))
                })
                .sum();
            worst = worst.max(-slack);
        }
    }
    worst
}

/// Welfare-minimizing coarse correlated equilibrium.
///
/// With `ne_hint`, the hinted profile is verified to be a pure NE and its
/// point mass is checked against the LP rows before solving.
pub fn worst_cce_welfare(
    instance: &GameInstance,
    table: &UtilityTable,
    ne_hint: Option<&StrategyProfile>,
) -> Result<WorstCce> {
    let space = &table.space;
    let scale = table
        .utilities
        .iter()
        .chain(&table.welfare)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    if let Some(hint) = ne_hint {
        let check = verify_pure_ne(instance, hint)?;
        if !check.is_ne {
            return invalid(format!("hinted profile {hint} is not a pure NE"));
        }
        let point = JointDistribution::point_mass(space.clone(), hint.as_slice());
        let v = max_row_violation(table, point.probs());
        if v > 1e-9 * scale {
            return Err(Error::Lp(format!(
                "pure NE {hint} violates CCE rows by {v:.3e}; utility table is inconsistent"
            )));
        }
    }
    let wmax = table.welfare.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let objective: Vec<f64> = if wmax > 0.0 {
        table.welfare.iter().map(|w| w / wmax).collect()
    } else {
        table.welfare.clone()
    };
    let mut lp = LinearProgram::minimize(objective);
    lp.add_row(vec![1.0; space.size()], Sense::Eq, 1.0)?;
    for (i, &k) in space.dims().iter().enumerate() {
        for a in 0..k {
            lp.add_row(table.deviation_row(i, a), Sense::Ge, 0.0)?;
        }
    }
    let sol = lp.solve()?;
    let mut probs: Vec<f64> = sol.x.iter().map(|&p| p.max(0.0)).collect();
    let total: f64 = probs.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Lp("solution has no mass".into()));
    }
    probs.iter_mut().for_each(|p| *p /= total);
    let max_violation = max_row_violation(table, &probs);
    if max_violation > 1e-7 * scale {
        return Err(Error::Lp(format!(
            "solution violates CCE rows by {max_violation:.3e}"
        )));
    }
    let distribution = JointDistribution::new(space.clone(), probs)?;
    let welfare = distribution.expect(&table.welfare);
    Ok(WorstCce {
        distribution,
        welfare,
        diagnostics: CceDiagnostics {
            variables: space.size(),
            constraints: lp.n_rows(),
            pivots: sol.pivots,
            max_violation,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Profiles up to this count get an exact numerator.
    pub exact_threshold: u128,
    pub lp_budget: u128,
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            exact_threshold: DEFAULT_ENUMERATION_BUDGET,
            lp_budget: DEFAULT_LP_BUDGET,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub max_welfare: f64,
    pub argmax_profile: StrategyProfile,
    pub max_method: WelfareMethod,
    pub worst_cce_welfare: f64,
    /// Profiles carrying positive mass in the worst CCE.
    pub cce_support: Vec<(StrategyProfile, f64)>,
    pub poa: f64,
    pub diagnostics: CceDiagnostics,
    #[serde(skip)]
    pub cce: Option<JointDistribution>,
}

/// `max_s W(s) / min_{alpha in CCE} E_alpha[W]`.
pub fn poa(instance: &GameInstance, options: &SolveOptions) -> Result<SolveReport> {
    let table = UtilityTable::build(instance, options.lp_budget)?;
    let opt = if (table.space.size() as u128) <= options.exact_threshold {
        let (idx, w) = table.argmax_welfare();
        WelfareOptimum {
            profile: StrategyProfile::new(table.space.profile_of(idx)),
            welfare: w,
            method: WelfareMethod::Exact,
            evaluations: table.space.size() as u64,
        }
    } else {
        max_welfare_heuristic(instance, options.seed)?
    };
    let cce = worst_cce_welfare(instance, &table, None)?;
    if !(cce.welfare > 0.0) {
        return Err(Error::Undefined(format!(
            "worst CCE welfare is {}; PoA undefined",
            cce.welfare
        )));
    }
    Ok(SolveReport {
        max_welfare: opt.welfare,
        argmax_profile: opt.profile,
        max_method: opt.method,
        worst_cce_welfare: cce.welfare,
        cce_support: cce.distribution.support(1e-12),
        poa: opt.welfare / cce.welfare,
        diagnostics: cce.diagnostics,
        cce: Some(cce.distribution),
    })
}
