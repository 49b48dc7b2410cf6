//! Repeated play with Exp3 learners under bandit feedback.
//!
//! Every round each player samples an arm from its own mixing, the realized
//! profile is evaluated exactly, and each player sees only its own utility.
//! Rewards are divided by `reward_scale` so that Exp3 sees values in `[0, 1]`.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::eval::Evaluator;
use crate::game::{GameInstance, Metric};
use crate::rng::{derive_seed, rng_from_seed, GameRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exp3Config {
    pub eta: f64,
    pub epsilon: f64,
    pub horizon: usize,
    pub seed: u64,
    /// Defaults to [`default_reward_scale`] when absent.
    pub reward_scale: Option<f64>,
}

impl Default for Exp3Config {
    fn default() -> Self {
        Exp3Config {
            eta: 0.1,
            epsilon: 0.1,
            horizon: 5000,
            seed: 0,
            reward_scale: None,
        }
    }
}

impl Exp3Config {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return invalid(format!("epsilon {} outside [0, 1]", self.epsilon));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return invalid(format!("eta must be positive (got {})", self.eta));
        }
        if let Some(s) = self.reward_scale {
            if !(s > 0.0 && s.is_finite()) {
                return invalid(format!("reward_scale must be positive (got {s})"));
            }
        }
        Ok(())
    }
}

/// Upper bound on any creator's utility: total weight times the largest
/// per-user engagement `beta log(K e^{1/beta}) = 1 + beta log K`, or total
/// weight for exposure and `beta = 0`.
pub fn default_reward_scale(instance: &GameInstance) -> f64 {
    let w = instance.total_weight();
    match instance.metric() {
        Metric::Engagement if instance.beta() > 0.0 => {
            w * (1.0 + instance.beta() * (instance.k_slate() as f64).ln())
        }
        _ => w,
    }
}

/// `p = (1 - eps) softmax(y) + eps / k`, max-shifted.
pub fn exp3_mixing(y: &[f64], epsilon: f64, out: &mut [f64]) {
    let k = y.len() as f64;
    let top = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &v) in out.iter_mut().zip(y) {
        *o = (v - top).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o = (1.0 - epsilon) * *o / z + epsilon / k;
    }
}

/// One Exp3 update: computes the mixing from `y`, then adds
/// `eta * (u / reward_scale) / p[arm]` to `y[arm]`. Returns the mixing the
/// arm was drawn from.
pub fn exp3_step(
    y: &mut [f64],
    eta: f64,
    epsilon: f64,
    arm: usize,
    utility: f64,
    reward_scale: f64,
) -> Vec<f64> {
    let mut p = vec![0.0; y.len()];
    exp3_mixing(y, epsilon, &mut p);
    y[arm] += eta * (utility / reward_scale) / p[arm];
    p
}

fn sample_arm(p: &[f64], rng: &mut GameRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, &pa) in p.iter().enumerate() {
        acc += pa;
        if u < acc {
            return a;
        }
    }
    p.len() - 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    /// One config per player, or a single config shared by all players
    /// (per-player seeds are then derived from its seed).
    pub players: Vec<Exp3Config>,
    /// Mixing snapshots every this many rounds; 0 keeps only the final one.
    pub snapshot_interval: usize,
    /// Extra profiles drawn per round from the same mixings to estimate the
    /// expected welfare; 0 uses the realized welfare only.
    pub extra_welfare_samples: usize,
}

impl DynamicsConfig {
    pub fn shared(config: Exp3Config) -> Self {
        DynamicsConfig {
            players: vec![config],
            snapshot_interval: 0,
            extra_welfare_samples: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingSnapshot {
    /// Mixing in force at the start of this round.
    pub round: usize,
    pub mixings: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsTrace {
    pub n_players: usize,
    pub horizon: usize,
    /// Row-major `[round][player]`.
    pub actions: Vec<usize>,
    /// Row-major `[round][player]`, unnormalized.
    pub utilities: Vec<f64>,
    pub welfare: Vec<f64>,
    /// Per-round estimate of `E_{s ~ alpha^t}[W(s)]`.
    pub expected_welfare: Vec<f64>,
    pub snapshots: Vec<MixingSnapshot>,
}

impl DynamicsTrace {
    pub fn profile(&self, round: usize) -> &[usize] {
        &self.actions[round * self.n_players..(round + 1) * self.n_players]
    }

    pub fn utility(&self, round: usize, player: usize) -> f64 {
        self.utilities[round * self.n_players + player]
    }

    /// `(1/T) sum_t W_t` over the expected-welfare estimates.
    pub fn average_welfare(&self) -> f64 {
        self.expected_welfare.iter().sum::<f64>() / self.horizon as f64
    }

    pub fn final_mixings(&self) -> &[Vec<f64>] {
        &self.snapshots.last().expect("final snapshot").mixings
    }

    /// CSV with columns `round, player, action, utility, welfare`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["round", "player", "action", "utility", "welfare"])?;
        for t in 0..self.horizon {
            for i in 0..self.n_players {
                w.write_record(&[
                    t.to_string(),
                    i.to_string(),
                    self.actions[t * self.n_players + i].to_string(),
                    format!("{:.17e}", self.utility(t, i)),
                    format!("{:.17e}", self.welfare[t]),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn run_dynamics(instance: &GameInstance, config: &DynamicsConfig) -> Result<DynamicsTrace> {
    let n = instance.n_players();
    let players: Vec<Exp3Config> = match config.players.len() {
        1 => (0..n)
            .map(|i| Exp3Config {
                seed: derive_seed(config.players[0].seed, &[i as u64]),
                ..config.players[0]
            })
            .collect(),
        len if len == n => config.players.clone(),
        len => return invalid(format!("{len} Exp3 configs for {n} players")),
    };
    let horizon = players[0].horizon;
    for c in &players {
        c.validate()?;
        if c.horizon != horizon {
            return invalid("all players must share one horizon");
        }
    }
    if horizon == 0 {
        return invalid("horizon must be at least 1");
    }
    let ev = Evaluator::new(instance);
    let dims = instance.action_counts();
    let default_scale = default_reward_scale(instance);
    let scales: Vec<f64> = players
        .iter()
        .map(|c| c.reward_scale.unwrap_or(default_scale))
        .collect();
    let mut rngs: Vec<GameRng> = players.iter().map(|c| rng_from_seed(c.seed)).collect();
    let mut extra_rng = rng_from_seed(derive_seed(players[0].seed, &[u64::MAX]));
    let mut y: Vec<Vec<f64>> = dims.iter().map(|&k| vec![0.0; k]).collect();
    let mut p: Vec<Vec<f64>> = dims.iter().map(|&k| vec![0.0; k]).collect();
    let mut trace = DynamicsTrace {
        n_players: n,
        horizon,
        actions: Vec::with_capacity(horizon * n),
        utilities: Vec::with_capacity(horizon * n),
        welfare: Vec::with_capacity(horizon),
        expected_welfare: Vec::with_capacity(horizon),
        snapshots: Vec::new(),
    };
    let mut profile = vec![0usize; n];
    for t in 0..horizon {
        for i in 0..n {
            exp3_mixing(&y[i], players[i].epsilon, &mut p[i]);
            profile[i] = sample_arm(&p[i], &mut rngs[i]);
        }
        if config.snapshot_interval > 0 && t % config.snapshot_interval == 0 {
            trace.snapshots.push(MixingSnapshot {
                round: t,
                mixings: p.clone(),
            });
        }
        let (w, u) = ev.evaluate(&profile);
        let mut w_est = w;
        if config.extra_welfare_samples > 0 {
            let mut extra = vec![0usize; n];
            for _ in 0..config.extra_welfare_samples {
                for i in 0..n {
                    extra[i] = sample_arm(&p[i], &mut extra_rng);
                }
                w_est += ev.welfare(&extra);
            }
            w_est /= (config.extra_welfare_samples + 1) as f64;
        }
        for i in 0..n {
            let r = u[i] / scales[i];
            if !(-1e-12..=1.0 + 1e-9).contains(&r) {
                return Err(Error::InvalidInput(format!(
                    "normalized reward {r} of player {i} outside [0, 1]; reward_scale too small"
                )));
            }
            let a = profile[i];
            y[i][a] += players[i].eta * r / p[i][a];
        }
        trace.actions.extend_from_slice(&profile);
        trace.utilities.extend_from_slice(&u);
        trace.welfare.push(w);
        trace.expected_welfare.push(w_est);
    }
    for i in 0..n {
        exp3_mixing(&y[i], players[i].epsilon, &mut p[i]);
    }
    trace.snapshots.push(MixingSnapshot {
        round: horizon,
        mixings: p,
    });
    Ok(trace)
}

/// `max_a sum_t u_i(a, s^t_-i) - sum_t u_i(s^t)` against the realized
/// opponent profiles.
pub fn estimate_regret(trace: &DynamicsTrace, evaluator: &Evaluator, player: usize) -> f64 {
    let k = evaluator.action_counts()[player];
    let mut totals = vec![0.0; k];
    let mut realized = 0.0;
    for t in 0..trace.horizon {
        let prof = trace.profile(t);
        realized += trace.utility(t, player);
        for (a, tot) in totals.iter_mut().enumerate() {
            *tot += if a == prof[player] {
                trace.utility(t, player)
            } else {
                evaluator.deviation_utility(prof, player, a)
            };
        }
    }
    totals.iter().copied().fold(f64::NEG_INFINITY, f64::max) - realized
}

pub fn estimate_regrets(trace: &DynamicsTrace, evaluator: &Evaluator) -> Vec<f64> {
    (0..trace.n_players)
        .map(|i| estimate_regret(trace, evaluator, i))
        .collect()
}

/// `max_welfare / mean_t W_t`.
pub fn pota(trace: &DynamicsTrace, max_welfare: f64) -> f64 {
    max_welfare / trace.average_welfare().max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistogramKey {
    /// Keyed by `player:action`.
    PlayerAction,
    /// Keyed by action index, pooled over players.
    Action,
    /// Keyed by tag; an action with several tags counts once per tag.
    Tag,
}

/// Normalized frequencies over all rounds and players.
pub fn action_histogram(
    trace: &DynamicsTrace,
    instance: &GameInstance,
    key: HistogramKey,
) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, f64> = BTreeMap::new();
    for t in 0..trace.horizon {
        for (i, &a) in trace.profile(t).iter().enumerate() {
            match key {
                HistogramKey::PlayerAction => *counts.entry(format!("{i}:{a}")).or_default() += 1.0,
                HistogramKey::Action => *counts.entry(a.to_string()).or_default() += 1.0,
                HistogramKey::Tag => {
                    for tag in &instance.players()[i].actions[a].tags {
                        *counts.entry(tag.clone()).or_default() += 1.0;
                    }
                }
            }
        }
    }
    let total: f64 = counts.values().sum();
    if total > 0.0 {
        counts.values_mut().for_each(|v| *v /= total);
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSummary {
    pub horizon: usize,
    pub avg_welfare: f64,
    pub max_welfare: Option<f64>,
    pub pota: Option<f64>,
    pub regrets: Option<Vec<f64>>,
    pub histogram: BTreeMap<String, f64>,
}

impl DynamicsSummary {
    pub fn new(
        trace: &DynamicsTrace,
        instance: &GameInstance,
        max_welfare: Option<f64>,
        with_regret: bool,
        histogram_key: HistogramKey,
    ) -> Self {
        let regrets = with_regret.then(|| estimate_regrets(trace, &Evaluator::new(instance)));
        DynamicsSummary {
            horizon: trace.horizon,
            avg_welfare: trace.average_welfare(),
            max_welfare,
            pota: max_welfare.map(|w| pota(trace, w)),
            regrets,
            histogram: action_histogram(trace, instance, histogram_key),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{Action, ActionSet, User};

    fn one_player_two_arms() -> GameInstance {
        // arm 0 earns 1, arm 1 earns 0
        GameInstance::new(
            vec![User::new(0, 1.0)],
            vec![ActionSet::new(vec![
                Action::new(vec![1.0]),
                Action::new(vec![0.0]),
            ])],
            0.0,
            1,
            Metric::Engagement,
        )
        .unwrap()
    }

    #[test]
    fn mixing_examples() {
        let mut p = [0.0; 2];
        exp3_mixing(&[0.0, 0.0], 0.1, &mut p);
        assert_eq!(p, [0.5, 0.5]);
        let mut q = [0.0; 3];
        exp3_mixing(&[50.0, -3.0, 7.0], 1.0, &mut q);
        for v in q {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let mut big = [0.0; 2];
        exp3_mixing(&[1e6, 0.0], 0.1, &mut big);
        assert!((big[0] - 0.95).abs() < 1e-12 && (big[1] - 0.05).abs() < 1e-12);
    }

    #[test]
    fn step_example() {
        let mut y = vec![0.0, 0.0];
        let p = exp3_step(&mut y, 0.1, 0.1, 0, 0.5, 1.0);
        assert_eq!(p, vec![0.5, 0.5]);
        assert!((y[0] - 0.1).abs() < 1e-15 && y[1] == 0.0);
    }

    #[test]
    fn learns_the_better_arm() {
        let g = one_player_two_arms();
        for seed in 0..10 {
            let cfg = DynamicsConfig::shared(Exp3Config {
                seed,
                ..Default::default()
            });
            let tr = run_dynamics(&g, &cfg).unwrap();
            assert!(tr.final_mixings()[0][0] >= 0.9);
        }
    }

    #[test]
    fn floors_and_constant_welfare() {
        let g = GameInstance::new(
            vec![User::new(0, 2.0)],
            vec![
                ActionSet::new(vec![Action::new(vec![0.3])]),
                ActionSet::new(vec![Action::new(vec![0.6])]),
            ],
            0.2,
            2,
            Metric::Engagement,
        )
        .unwrap();
        let cfg = DynamicsConfig {
            snapshot_interval: 7,
            ..DynamicsConfig::shared(Exp3Config {
                horizon: 50,
                ..Default::default()
            })
        };
        let tr = run_dynamics(&g, &cfg).unwrap();
        assert!(tr.welfare.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(tr.snapshots.len(), 50usize.div_ceil(7) + 1);
        let ev = Evaluator::new(&g);
        assert_eq!(estimate_regrets(&tr, &ev), vec![0.0, 0.0]);
        let g2 = one_player_two_arms();
        let tr = run_dynamics(&g2, &DynamicsConfig {
            snapshot_interval: 1,
            ..DynamicsConfig::shared(Exp3Config { horizon: 200, ..Default::default() })
        })
        .unwrap();
        for s in &tr.snapshots {
            for p in &s.mixings {
                assert!(p.iter().all(|&v| v >= 0.05 - 1e-15));
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_round_regret_is_deviation_gap() {
        let g = one_player_two_arms();
        let ev = Evaluator::new(&g);
        let tr = DynamicsTrace {
            n_players: 1,
            horizon: 1,
            actions: vec![1],
            utilities: vec![0.0],
            welfare: vec![0.0],
            expected_welfare: vec![0.0],
            snapshots: vec![],
        };
        assert_eq!(estimate_regret(&tr, &ev, 0), 1.0);
    }

    #[test]
    fn histogram_modes() {
        let mut g = one_player_two_arms();
        g = GameInstance::new(
            g.users().to_vec(),
            vec![
                ActionSet::new(vec![
                    Action::new(vec![1.0]).with_tags(vec!["a".into(), "b".into()]),
                    Action::new(vec![0.0]),
                ]),
                ActionSet::new(vec![
                    Action::new(vec![1.0]),
                    Action::new(vec![0.0]).with_tags(vec!["b".into()]),
                ]),
            ],
            0.0,
            1,
            Metric::Exposure,
        )
        .unwrap();
        let tr = DynamicsTrace {
            n_players: 2,
            horizon: 2,
            actions: vec![0, 1, 0, 1],
            utilities: vec![0.0; 4],
            welfare: vec![0.0; 2],
            expected_welfare: vec![0.0; 2],
            snapshots: vec![],
        };
        let h = action_histogram(&tr, &g, HistogramKey::Action);
        assert_eq!(h["0"], 0.5);
        assert_eq!(h["1"], 0.5);
        let h = action_histogram(&tr, &g, HistogramKey::Tag);
        assert!((h["a"] - 1.0 / 3.0).abs() < 1e-15 && (h["b"] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn reward_scale_too_small_is_rejected() {
        let g = one_player_two_arms();
        let cfg = DynamicsConfig::shared(Exp3Config {
            reward_scale: Some(0.5),
            horizon: 100,
            ..Default::default()
        });
        assert!(run_dynamics(&g, &cfg).is_err());
    }
}
