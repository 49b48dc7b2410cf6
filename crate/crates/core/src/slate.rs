//! Top-`K` slates with exact tie handling.
//!
//! For one user, items are ranked by relevance. Every score group strictly
//! above the `K`-th score is shown for certain. The group that contains the
//! `K`-th score may be larger than the number of slots left for it; its
//! members are then shown with probability `r / g` (a uniformly random
//! truncation of the tied group). Tied items share a score, so the softmax
//! denominator does not depend on which of them are realized. When fewer
//! than `K` items exist, the slate is padded with default items of relevance
//! zero.
//!
//! All exponentials are taken relative to the best score in the slate, so
//! `beta` down to `1e-3` (exponents of `1e3`) evaluates without overflow.

use crate::error::Result;
use crate::game::{GameInstance, StrategyProfile};

/// Shape of one user's slate, computed from scores sorted in descending order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SlateShape {
    /// Entries `[0, certain)` of the sorted list are shown for certain.
    pub certain: usize,
    /// Entries `[certain, group_end)` form the tied straddle group.
    pub group_end: usize,
    /// Slots left for the straddle group (`r`); zero when there is none.
    pub slots: usize,
    pub tie: f64,
    pub padding: usize,
    /// Best score in the slate; the log-sum-exp shift.
    pub top: f64,
    /// `sum` of `exp((s - top) / beta)` over the slate, counting the
    /// straddle as `slots` copies of the tie score (`beta > 0` only).
    pub shifted_sum: f64,
    /// Size of the argmax group including padding when `top == 0`
    /// (used for `beta == 0`).
    pub argmax_count: usize,
}

impl SlateShape {
    /// `sorted` must be sorted in descending order.
    pub fn new(sorted: &[f64], k: usize, beta: f64) -> Self {
        let n = sorted.len();
        let (certain, group_end, slots, tie, padding) = if n <= k {
            (n, n, 0, 0.0, k - n)
        } else {
            let tie = sorted[k - 1];
            let first = sorted.partition_point(|&s| s > tie);
            let end = sorted.partition_point(|&s| s >= tie);
            let g = end - first;
            let r = k - first;
            if g == r {
                (end, end, 0, 0.0, 0)
            } else {
                (first, end, r, tie, 0)
            }
        };
        let top = if n > 0 { sorted[0].max(0.0) } else { 0.0 };
        let mut argmax_count = sorted.iter().take_while(|&&s| s == top).count();
        if top == 0.0 {
            argmax_count += padding;
        }
        let shifted_sum = if beta > 0.0 {
            let mut sum: f64 = sorted[..certain]
                .iter()
                .map(|&s| ((s - top) / beta).exp())
                .sum();
            if padding > 0 {
                sum += padding as f64 * (-top / beta).exp();
            }
            if slots > 0 {
                sum += slots as f64 * ((tie - top) / beta).exp();
            }
            sum
        } else {
            f64::NAN
        };
        SlateShape {
            certain,
            group_end,
            slots,
            tie,
            padding,
            top,
            shifted_sum,
            argmax_count,
        }
    }

    /// Expected user utility `beta * log Z` (or the best score at `beta = 0`).
    #[inline]
    pub fn user_utility(&self, beta: f64) -> f64 {
        if beta > 0.0 {
            self.top + beta * self.shifted_sum.ln()
        } else {
            self.top
        }
    }

    /// `log Z` with `Z = sum exp(s / beta)` over the slate.
    #[inline]
    pub fn log_denom(&self, beta: f64) -> f64 {
        if beta > 0.0 {
            self.top / beta + self.shifted_sum.ln()
        } else {
            f64::INFINITY
        }
    }

    /// Choice probability of the entry at position `idx` of the sorted list
    /// whose score is `score`.
    #[inline]
    pub fn choice_probability(&self, idx: usize, score: f64, beta: f64) -> f64 {
        if beta > 0.0 {
            if idx < self.certain {
                ((score - self.top) / beta).exp() / self.shifted_sum
            } else if idx < self.group_end {
                let g = (self.group_end - self.certain) as f64;
                (self.slots as f64 / g) * ((self.tie - self.top) / beta).exp() / self.shifted_sum
            } else {
                0.0
            }
        } else if score == self.top {
            1.0 / self.argmax_count as f64
        } else {
            0.0
        }
    }

    /// Probability mass that goes to default padding items.
    #[inline]
    pub fn default_mass(&self, beta: f64) -> f64 {
        if self.padding == 0 {
            0.0
        } else if beta > 0.0 {
            self.padding as f64 * (-self.top / beta).exp() / self.shifted_sum
        } else if self.top == 0.0 {
            self.padding as f64 / self.argmax_count as f64
        } else {
            0.0
        }
    }
}

/// The score-tied group crossing the `K`-th slate position.
#[derive(Debug, Clone, PartialEq)]
pub struct Straddle {
    pub members: Vec<usize>,
    pub tie_score: f64,
    pub remaining_slots: usize,
}

impl Straddle {
    pub fn group_size(&self) -> usize {
        self.members.len()
    }

    /// `r / g`.
    pub fn inclusion_probability(&self) -> f64 {
        self.remaining_slots as f64 / self.members.len() as f64
    }
}

/// One user's slate.
#[derive(Debug, Clone, PartialEq)]
pub struct UserSlate {
    /// `(player, score)` pairs shown for certain, best first.
    pub certain: Vec<(usize, f64)>,
    /// Number of default items (relevance 0) appended because fewer than `K`
    /// players exist.
    pub padding: usize,
    pub straddle: Option<Straddle>,
    /// `log Z`; infinite when `beta == 0`.
    pub log_denom: f64,
    /// Every player with its score, best first; the order the shape indexes.
    ranked: Vec<(usize, f64)>,
    shape: SlateShape,
}

impl UserSlate {
    pub fn from_scores(scores: &[(usize, f64)], k: usize, beta: f64) -> Self {
        let mut ranked = scores.to_vec();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let sorted: Vec<f64> = ranked.iter().map(|e| e.1).collect();
        let shape = SlateShape::new(&sorted, k, beta);
        let certain = ranked[..shape.certain].to_vec();
        let straddle = (shape.slots > 0).then(|| Straddle {
            members: ranked[shape.certain..shape.group_end]
                .iter()
                .map(|e| e.0)
                .collect(),
            tie_score: shape.tie,
            remaining_slots: shape.slots,
        });
        UserSlate {
            certain,
            padding: shape.padding,
            straddle,
            log_denom: shape.log_denom(beta),
            ranked,
            shape,
        }
    }

    /// `Z`, which may overflow to infinity for small `beta`; prefer
    /// [`UserSlate::log_denom`].
    pub fn denom(&self) -> f64 {
        self.log_denom.exp()
    }

    pub fn user_utility(&self, beta: f64) -> f64 {
        self.shape.user_utility(beta)
    }

    /// Probability that the user picks each player (indexed by player) and
    /// the mass left on default items.
    pub fn choice_probabilities(&self, n_players: usize, beta: f64) -> (Vec<f64>, f64) {
        let mut probs = vec![0.0; n_players];
        for (idx, &(player, score)) in self.ranked.iter().enumerate() {
            probs[player] = self.shape.choice_probability(idx, score, beta);
        }
        (probs, self.shape.default_mass(beta))
    }

    /// Number of slate positions, `min(K, n) + padding`.
    pub fn slate_len(&self) -> usize {
        self.certain.len() + self.padding + self.straddle.as_ref().map_or(0, |s| s.remaining_slots)
    }
}

/// Per-user slates for one profile.
#[derive(Debug, Clone, PartialEq)]
pub struct SlateDecomposition {
    pub beta: f64,
    pub k: usize,
    pub n_players: usize,
    pub users: Vec<UserSlate>,
}

pub fn decompose_slates(
    instance: &GameInstance,
    profile: &StrategyProfile,
) -> Result<SlateDecomposition> {
    instance.check_profile(profile)?;
    let n = instance.n_players();
    let mut scores = Vec::with_capacity(n);
    let users = (0..instance.n_users())
        .map(|j| {
            scores.clear();
            scores.extend(
                profile
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| (i, instance.sigma(i, a, j))),
            );
            UserSlate::from_scores(&scores, instance.k_slate(), instance.beta())
        })
        .collect();
    Ok(SlateDecomposition {
        beta: instance.beta(),
        k: instance.k_slate(),
        n_players: n,
        users,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slate(scores: &[f64], k: usize, beta: f64) -> UserSlate {
        let entries: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
        UserSlate::from_scores(&entries, k, beta)
    }

    #[test]
    fn tie_straddling_the_boundary() {
        let s = slate(&[0.9, 0.5, 0.5], 2, 0.1);
        assert_eq!(s.certain, vec![(0, 0.9)]);
        let st = s.straddle.as_ref().unwrap();
        assert_eq!(st.members, vec![1, 2]);
        assert_eq!(st.remaining_slots, 1);
        assert_eq!(st.group_size(), 2);
        assert_eq!(st.inclusion_probability(), 0.5);
        assert_eq!(s.padding, 0);
        assert_eq!(s.slate_len(), 2);
    }

    #[test]
    fn pads_with_default_items() {
        let s = slate(&[0.7], 2, 0.1);
        assert_eq!(s.certain, vec![(0, 0.7)]);
        assert_eq!(s.padding, 1);
        assert!(s.straddle.is_none());
        // Z = e^{7} + e^{0}
        let z = (7.0f64).exp() + 1.0;
        assert!((s.denom() - z).abs() < 1e-9 * z);
    }

    #[test]
    fn all_tied_straddle() {
        let s = slate(&[1.0; 5], 3, 0.2);
        assert!(s.certain.is_empty());
        let st = s.straddle.as_ref().unwrap();
        assert_eq!(st.group_size(), 5);
        assert!((st.inclusion_probability() - 0.6).abs() < 1e-15);
        let (p, d) = s.choice_probabilities(5, 0.2);
        for x in p {
            assert!((x - 0.2).abs() < 1e-12);
        }
        assert_eq!(d, 0.0);
    }

    #[test]
    fn exact_fit_group_is_certain() {
        let s = slate(&[0.9, 0.5, 0.2], 2, 0.1);
        assert_eq!(s.certain.len(), 2);
        assert!(s.straddle.is_none());
    }

    #[test]
    fn log_denom_does_not_overflow() {
        let s = slate(&[1.0, 0.99, 0.0], 2, 1e-3);
        assert!(s.log_denom.is_finite());
        assert!((s.log_denom - (1000.0 + (1.0 + (-10.0f64).exp()).ln())).abs() < 1e-9);
        assert!(s.denom().is_infinite());
    }

    #[test]
    fn beta_zero_uniform_over_argmax() {
        let s = slate(&[1.0, 1.0, 0.0], 2, 0.0);
        let (p, d) = s.choice_probabilities(3, 0.0);
        assert_eq!(p, vec![0.5, 0.5, 0.0]);
        assert_eq!(d, 0.0);
        assert_eq!(s.user_utility(0.0), 1.0);
        // argmax group larger than the slate
        let s = slate(&[1.0, 1.0, 1.0], 2, 0.0);
        let (p, _) = s.choice_probabilities(3, 0.0);
        for x in p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        // zero scores share the argmax with padding
        let s = slate(&[0.0], 3, 0.0);
        let (p, d) = s.choice_probabilities(1, 0.0);
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((d - 2.0 / 3.0).abs() < 1e-15);
    }
}
