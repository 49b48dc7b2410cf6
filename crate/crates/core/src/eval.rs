//! Closed-form utilities and welfare.
//!
//! For user `j` with slate `T_j` and `Z_j = sum_{k in T_j} exp(sigma_k / beta)`:
//!
//! - user utility `pi_j = beta * log Z_j` (the best slate score at `beta = 0`),
//! - choice probability `exp(sigma_i / beta) / Z_j` for slate members,
//! - engagement utility `u_i = sum_j w_j * pi_j * Pr[j -> i]`,
//! - exposure utility `u_i = sum_j w_j * Pr[j -> i]`,
//! - welfare `W = sum_j w_j * pi_j`.
//!
//! The engagement form uses the fact that the conditional utility of a user
//! given that she picked item `i` equals `pi_j` for every `i`.
//!
//! Two evaluation paths exist. The free functions work user by user on the
//! instance as given and produce a full [`EvaluationReport`]. [`Evaluator`]
//! merges users whose relevance columns coincide into weighted types and is
//! the path the solvers and dynamics use.

use std::collections::HashMap;

use crate::error::Result;
use crate::game::{GameInstance, Metric, StrategyProfile};
use crate::slate::{decompose_slates, SlateDecomposition, SlateShape};

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub user_utilities: Vec<f64>,
    pub creator_utilities: Vec<f64>,
    pub welfare: f64,
    /// `choice_probs[j][i]`: probability that user `j` picks player `i`.
    pub choice_probs: Vec<Vec<f64>>,
    /// Per-user probability of picking a default padding item.
    pub default_probs: Vec<f64>,
    /// Engagement collected by default items; zero unless `n < K`.
    pub default_engagement: f64,
}

pub fn user_utility(slates: &SlateDecomposition, user: usize) -> f64 {
    slates.users[user].user_utility(slates.beta)
}

/// Probability vector over players for one user (default mass excluded).
pub fn choice_probabilities(slates: &SlateDecomposition, user: usize) -> Vec<f64> {
    slates.users[user]
        .choice_probabilities(slates.n_players, slates.beta)
        .0
}

pub fn evaluate(instance: &GameInstance, profile: &StrategyProfile) -> Result<EvaluationReport> {
    let slates = decompose_slates(instance, profile)?;
    let n = instance.n_players();
    let beta = instance.beta();
    let mut creator = vec![0.0; n];
    let mut user_utilities = Vec::with_capacity(instance.n_users());
    let mut choice_probs = Vec::with_capacity(instance.n_users());
    let mut default_probs = Vec::with_capacity(instance.n_users());
    let mut welfare = 0.0;
    let mut default_engagement = 0.0;
    for (user, slate) in instance.users().iter().zip(&slates.users) {
        let pi = slate.user_utility(beta);
        let (probs, dflt) = slate.choice_probabilities(n, beta);
        for (u, p) in creator.iter_mut().zip(&probs) {
            *u += match instance.metric() {
                Metric::Engagement => user.weight * pi * p,
                Metric::Exposure => user.weight * p,
            };
        }
        welfare += user.weight * pi;
        default_engagement += user.weight * pi * dflt;
        user_utilities.push(pi);
        choice_probs.push(probs);
        default_probs.push(dflt);
    }
    Ok(EvaluationReport {
        user_utilities,
        creator_utilities: creator,
        welfare,
        choice_probs,
        default_probs,
        default_engagement,
    })
}

pub fn creator_utilities(instance: &GameInstance, profile: &StrategyProfile) -> Result<Vec<f64>> {
    Ok(evaluate(instance, profile)?.creator_utilities)
}

pub fn welfare(instance: &GameInstance, profile: &StrategyProfile) -> Result<f64> {
    let slates = decompose_slates(instance, profile)?;
    Ok(instance
        .users()
        .iter()
        .zip(&slates.users)
        .map(|(u, s)| u.weight * s.user_utility(instance.beta()))
        .sum())
}

/// Compiled evaluator over user types.
///
/// Users whose relevance to every action of every player coincides are
/// merged with summed weights. All methods take raw action indices and do not
/// validate them.
#[derive(Debug, Clone)]
pub struct Evaluator {
    beta: f64,
    k: usize,
    metric: Metric,
    type_weights: Vec<f64>,
    user_type: Vec<usize>,
    /// `scores[player][action][type]`
    scores: Vec<Vec<Vec<f64>>>,
    action_counts: Vec<usize>,
    total_weight: f64,
}

impl Evaluator {
    pub fn new(instance: &GameInstance) -> Self {
        let m = instance.n_users();
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut user_type = Vec::with_capacity(m);
        let mut type_weights: Vec<f64> = Vec::new();
        let mut representative: Vec<usize> = Vec::new();
        for (j, user) in instance.users().iter().enumerate() {
            let key: Vec<u64> = instance
                .players()
                .iter()
                .flat_map(|p| p.actions.iter().map(move |a| a.sigma[j].to_bits()))
                .collect();
            let t = *index.entry(key).or_insert_with(|| {
                type_weights.push(0.0);
                representative.push(j);
                type_weights.len() - 1
            });
            type_weights[t] += user.weight;
            user_type.push(t);
        }
        let scores = instance
            .players()
            .iter()
            .map(|p| {
                p.actions
                    .iter()
                    .map(|a| representative.iter().map(|&j| a.sigma[j]).collect())
                    .collect()
            })
            .collect();
        Evaluator {
            beta: instance.beta(),
            k: instance.k_slate(),
            metric: instance.metric(),
            type_weights,
            user_type,
            scores,
            action_counts: instance.action_counts(),
            total_weight: instance.total_weight(),
        }
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn n_players(&self) -> usize {
        self.scores.len()
    }

    pub fn n_types(&self) -> usize {
        self.type_weights.len()
    }

    pub fn user_type(&self, user: usize) -> usize {
        self.user_type[user]
    }

    pub fn action_counts(&self) -> &[usize] {
        &self.action_counts
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    /// Walks every user type for the given `(player, action)` items and calls
    /// `visit(weight, pi, ranked, shape)` with the ranked `(item position,
    /// score)` list.
    fn for_each_type<F>(&self, items: &[(usize, usize)], mut visit: F)
    where
        F: FnMut(f64, f64, &[(usize, f64)], &SlateShape),
    {
        let mut ranked: Vec<(usize, f64)> = Vec::with_capacity(items.len());
        let mut sorted: Vec<f64> = Vec::with_capacity(items.len());
        for (t, &w) in self.type_weights.iter().enumerate() {
            ranked.clear();
            ranked.extend(
                items
                    .iter()
                    .enumerate()
                    .map(|(pos, &(p, a))| (pos, self.scores[p][a][t])),
            );
            ranked.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            sorted.clear();
            sorted.extend(ranked.iter().map(|e| e.1));
            let shape = SlateShape::new(&sorted, self.k, self.beta);
            let pi = shape.user_utility(self.beta);
            visit(w, pi, &ranked, &shape);
        }
    }

    fn items_of(profile: &[usize]) -> Vec<(usize, usize)> {
        profile.iter().copied().enumerate().collect()
    }

    /// Welfare of an arbitrary collection of `(player, action)` items, e.g. a
    /// profile with some players removed.
    pub fn welfare_of_items(&self, items: &[(usize, usize)]) -> f64 {
        let mut total = 0.0;
        self.for_each_type(items, |w, pi, _, _| total += w * pi);
        total
    }

    /// Welfare and per-item utilities of an arbitrary item collection.
    pub fn evaluate_items(&self, items: &[(usize, usize)]) -> (f64, Vec<f64>) {
        let mut utilities = vec![0.0; items.len()];
        let mut total = 0.0;
        let beta = self.beta;
        let metric = self.metric;
        self.for_each_type(items, |w, pi, ranked, shape| {
            total += w * pi;
            for (idx, &(pos, s)) in ranked[..shape.group_end].iter().enumerate() {
                let p = shape.choice_probability(idx, s, beta);
                utilities[pos] += match metric {
                    Metric::Engagement => w * pi * p,
                    Metric::Exposure => w * p,
                };
            }
        });
        (total, utilities)
    }

    pub fn welfare(&self, profile: &[usize]) -> f64 {
        self.welfare_of_items(&Self::items_of(profile))
    }

    /// `(W, u)` for a full profile.
    pub fn evaluate(&self, profile: &[usize]) -> (f64, Vec<f64>) {
        self.evaluate_items(&Self::items_of(profile))
    }

    /// `u_i(a, s_{-i})`.
    pub fn deviation_utility(&self, profile: &[usize], player: usize, action: usize) -> f64 {
        let mut items = Self::items_of(profile);
        items[player].1 = action;
        let beta = self.beta;
        let metric = self.metric;
        let mut u = 0.0;
        self.for_each_type(&items, |w, pi, ranked, shape| {
            if let Some(idx) = ranked[..shape.group_end].iter().position(|e| e.0 == player) {
                let p = shape.choice_probability(idx, ranked[idx].1, beta);
                u += match metric {
                    Metric::Engagement => w * pi * p,
                    Metric::Exposure => w * p,
                };
            }
        });
        u
    }

    /// `W(s_{-i})`, evaluated with default padding when needed.
    pub fn welfare_without(&self, profile: &[usize], player: usize) -> f64 {
        let items: Vec<(usize, usize)> = profile
            .iter()
            .copied()
            .enumerate()
            .filter(|&(i, _)| i != player)
            .collect();
        self.welfare_of_items(&items)
    }

    /// Per-user expected utility, expanded from the type representation.
    pub fn user_utilities(&self, profile: &[usize]) -> Vec<f64> {
        let mut per_type = Vec::with_capacity(self.n_types());
        self.for_each_type(&Self::items_of(profile), |_, pi, _, _| per_type.push(pi));
        self.user_type.iter().map(|&t| per_type[t]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{Action, ActionSet, User};

    fn game(scores: &[f64], k: usize, beta: f64, metric: Metric) -> GameInstance {
        GameInstance::new(
            vec![User::new(0, 1.0)],
            scores
                .iter()
                .map(|&s| ActionSet::new(vec![Action::new(vec![s])]))
                .collect(),
            beta,
            k,
            metric,
        )
        .unwrap()
    }

    fn profile0(g: &GameInstance) -> StrategyProfile {
        StrategyProfile::uniform(g.n_players(), 0)
    }

    #[test]
    fn single_item_utility_is_its_score() {
        for beta in [0.0, 0.05, 0.3, 2.0] {
            let g = game(&[0.37], 1, beta, Metric::Engagement);
            let r = evaluate(&g, &profile0(&g)).unwrap();
            assert!((r.user_utilities[0] - 0.37).abs() < 1e-15);
            assert!((r.creator_utilities[0] - 0.37).abs() < 1e-15);
        }
    }

    #[test]
    fn two_items_closed_form() {
        let g = game(&[1.0, 0.0], 2, 0.1, Metric::Engagement);
        let r = evaluate(&g, &profile0(&g)).unwrap();
        let expect = 0.1 * ((10.0f64).exp() + 1.0).ln();
        assert!((r.user_utilities[0] - expect).abs() < 1e-14);
        assert!((r.user_utilities[0] - 1.000_004_539_889_921).abs() < 1e-12);
    }

    #[test]
    fn one_hot_slate_matches_log_b_plus_k() {
        // scores (1, 0, ..., 0): pi = beta * log(b + K), b = e^{1/beta} - 1
        for &(beta, k) in &[(0.1, 2usize), (0.2, 3), (0.5, 5)] {
            let mut s = vec![0.0; k];
            s[0] = 1.0;
            let g = game(&s, k, beta, Metric::Engagement);
            let b = (1.0f64 / beta).exp() - 1.0;
            let r = evaluate(&g, &profile0(&g)).unwrap();
            assert!((r.user_utilities[0] - beta * (b + k as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn choice_probabilities_examples() {
        let g = game(&[0.4, 0.4, 0.4], 3, 0.3, Metric::Engagement);
        let s = decompose_slates(&g, &profile0(&g)).unwrap();
        for p in choice_probabilities(&s, 0) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let g = game(&[1.0, 0.0], 2, 1.0, Metric::Engagement);
        let s = decompose_slates(&g, &profile0(&g)).unwrap();
        let p = choice_probabilities(&s, 0);
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
        let g = game(&[1.0, 1.0, 0.0], 2, 0.0, Metric::Engagement);
        let s = decompose_slates(&g, &profile0(&g)).unwrap();
        assert_eq!(choice_probabilities(&s, 0), vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn exposure_with_equal_scores() {
        // K equal-score players, m users of weight 1: u_i = m / K
        let m = 7;
        let k = 4;
        let g = GameInstance::new(
            (0..m).map(|j| User::new(j, 1.0)).collect(),
            (0..k)
                .map(|_| ActionSet::new(vec![Action::new(vec![0.6; m as usize])]))
                .collect(),
            0.2,
            k,
            Metric::Exposure,
        )
        .unwrap();
        let u = creator_utilities(&g, &profile0(&g)).unwrap();
        for x in u {
            assert!((x - m as f64 / k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn all_zero_scores_give_beta_log_k() {
        let g = GameInstance::new(
            vec![User::new(0, 2.0), User::new(1, 0.5)],
            (0..5)
                .map(|_| ActionSet::new(vec![Action::new(vec![0.0, 0.0])]))
                .collect(),
            0.3,
            3,
            Metric::Engagement,
        )
        .unwrap();
        let w = welfare(&g, &profile0(&g)).unwrap();
        assert!((w - 2.5 * 0.3 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn evaluator_matches_reference_path() {
        let g = GameInstance::new(
            vec![User::new(0, 1.0), User::new(1, 2.0), User::new(2, 1.0)],
            vec![
                ActionSet::new(vec![
                    Action::new(vec![1.0, 0.3, 1.0]),
                    Action::new(vec![0.2, 0.2, 0.2]),
                ]),
                ActionSet::new(vec![Action::new(vec![0.5, 0.3, 0.5])]),
                ActionSet::new(vec![
                    Action::new(vec![0.5, 0.9, 0.5]),
                    Action::new(vec![0.0, 0.0, 0.0]),
                ]),
            ],
            0.15,
            2,
            Metric::Engagement,
        )
        .unwrap();
        let ev = Evaluator::new(&g);
        assert_eq!(ev.n_types(), 2);
        for prof in [[0, 0, 0], [1, 0, 1], [0, 0, 1], [1, 0, 0]] {
            let sp = StrategyProfile::new(prof.to_vec());
            let r = evaluate(&g, &sp).unwrap();
            let (w, u) = ev.evaluate(&prof);
            assert!((w - r.welfare).abs() < 1e-12);
            for (a, b) in u.iter().zip(&r.creator_utilities) {
                assert!((a - b).abs() < 1e-12);
            }
            for i in 0..3 {
                for a in 0..g.players()[i].len() {
                    let dev = creator_utilities(&g, &sp.with_action(i, a)).unwrap()[i];
                    assert!((ev.deviation_utility(&prof, i, a) - dev).abs() < 1e-12);
                }
            }
            let uu = ev.user_utilities(&prof);
            for (a, b) in uu.iter().zip(&r.user_utilities) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn padding_engagement_accounts_for_the_gap() {
        let g = game(&[0.5], 3, 0.2, Metric::Engagement);
        let r = evaluate(&g, &profile0(&g)).unwrap();
        let total: f64 = r.creator_utilities.iter().sum::<f64>() + r.default_engagement;
        assert!((total - r.welfare).abs() < 1e-12);
        assert!(r.default_engagement > 0.0);
    }
}
