//! Gumbel noise and Monte-Carlo estimators for the random-utility choice model.
//!
//! These estimators never touch the closed forms in [`crate::eval`]; they are
//! the independent reference those closed forms are checked against.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, GameRng};

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

const U_MIN: f64 = 1e-300;
const U_MAX: f64 = 1.0 - 1e-16;

/// Inverse-CDF Gumbel sampler, `x = mu - beta * ln(-ln U)`.
#[derive(Debug, Clone)]
pub struct GumbelSampler {
    pub mu: f64,
    pub beta_scale: f64,
    rng: GameRng,
}

impl GumbelSampler {
    /// Zero-mean sampler: `mu = -beta * gamma`.
    pub fn zero_mean(beta: f64, seed: u64) -> Result<Self> {
        Self::new(-beta * EULER_GAMMA, beta, seed)
    }

    pub fn new(mu: f64, beta_scale: f64, seed: u64) -> Result<Self> {
        if !(beta_scale > 0.0 && beta_scale.is_finite()) || !mu.is_finite() {
            return Err(Error::InvalidInput(format!(
                "Gumbel sampler needs finite mu and beta > 0 (got mu = {mu}, beta = {beta_scale})"
            )));
        }
        Ok(GumbelSampler {
            mu,
            beta_scale,
            rng: rng_from_seed(seed),
        })
    }

    #[inline]
    pub fn sample(&mut self) -> f64 {
        let u: f64 = self.rng.random::<f64>().clamp(U_MIN, U_MAX);
        self.mu - self.beta_scale * (-u.ln()).ln()
    }
}

pub fn gumbel_cdf(x: f64, mu: f64, beta: f64) -> f64 {
    (-(-(x - mu) / beta).exp()).exp()
}

/// Two-sided Kolmogorov-Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub count: u64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: u64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    /// Shifted data keep the variance well-conditioned; see [`simulate`].
    fn estimate(&self, shift: f64) -> Option<Estimate> {
        if self.n < 2 {
            return None;
        }
        let n = self.n as f64;
        let mean = self.sum / n;
        let var = ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        Some(Estimate {
            mean: mean + shift,
            se: (var / n).sqrt(),
            count: self.n,
        })
    }
}

/// Everything one pass of sampling can estimate.
#[derive(Debug, Clone)]
pub struct McSummary {
    pub n_samples: u64,
    /// `E[max_i (sigma_i + eps_i)]`.
    pub max_utility: Estimate,
    /// Empirical argmax frequencies.
    pub choice_freq: Vec<f64>,
    /// `E[sigma_i + eps_i | i chosen]`; `None` when `i` was chosen fewer than
    /// twice.
    pub conditional: Vec<Option<Estimate>>,
}

impl McSummary {
    pub fn conditional_mean(&self, item: usize) -> Result<Estimate> {
        self.conditional[item].ok_or_else(|| {
            Error::InsufficientSupport(format!(
                "item {item} chosen fewer than twice in {} samples",
                self.n_samples
            ))
        })
    }
}

fn check_args(scores: &[f64], beta: f64, n_samples: u64) -> Result<()> {
    if beta <= 0.0 {
        return Err(Error::InvalidInput(
            "Monte-Carlo estimation needs beta > 0; use the closed form at beta = 0".into(),
        ));
    }
    if scores.is_empty() || n_samples < 2 {
        return Err(Error::InvalidInput(
            "need at least one score and two samples".into(),
        ));
    }
    Ok(())
}

/// Draws `n_samples` i.i.d. zero-mean Gumbel vectors and records the realized
/// maximum and argmax. Ties in the realized utility go to the lower index,
/// which happens with probability zero.
pub fn simulate(scores: &[f64], beta: f64, n_samples: u64, seed: u64) -> Result<McSummary> {
    check_args(scores, beta, n_samples)?;
    let mut sampler = GumbelSampler::zero_mean(beta, seed)?;
    // shift by the best score so sums of squares stay small
    let shift = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut max_m = Moments::default();
    let mut cond = vec![Moments::default(); scores.len()];
    for _ in 0..n_samples {
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for (i, &s) in scores.iter().enumerate() {
            let x = s - shift + sampler.sample();
            if x > best {
                best = x;
                arg = i;
            }
        }
        max_m.push(best);
        cond[arg].push(best);
    }
    let n = n_samples as f64;
    Ok(McSummary {
        n_samples,
        max_utility: max_m.estimate(shift).expect("n_samples >= 2"),
        choice_freq: cond.iter().map(|m| m.n as f64 / n).collect(),
        conditional: cond.iter().map(|m| m.estimate(shift)).collect(),
    })
}

/// Estimate of the expected best realized utility over `scores`.
pub fn mc_user_utility(scores: &[f64], beta: f64, n_samples: u64, seed: u64) -> Result<Estimate> {
    Ok(simulate(scores, beta, n_samples, seed)?.max_utility)
}

/// Empirical argmax frequencies.
pub fn mc_choice_distribution(
    scores: &[f64],
    beta: f64,
    n_samples: u64,
    seed: u64,
) -> Result<Vec<f64>> {
    Ok(simulate(scores, beta, n_samples, seed)?.choice_freq)
}

/// Per-item `E[sigma_i + eps_i | i chosen]`; errors if some item lacks
/// support in the sample.
pub fn mc_conditional_engagement(
    scores: &[f64],
    beta: f64,
    n_samples: u64,
    seed: u64,
) -> Result<Vec<Estimate>> {
    let s = simulate(scores, beta, n_samples, seed)?;
    (0..scores.len()).map(|i| s.conditional_mean(i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_is_zero_mean_and_matches_cdf() {
        let beta = 0.7;
        let mut g = GumbelSampler::zero_mean(beta, 11).unwrap();
        let xs: Vec<f64> = (0..100_000).map(|_| g.sample()).collect();
        let mut m = Moments::default();
        xs.iter().for_each(|&x| m.push(x));
        let e = m.estimate(0.0).unwrap();
        assert!(e.mean.abs() < 3.0 * e.se);
        let d = ks_statistic(&xs, |x| gumbel_cdf(x, -beta * EULER_GAMMA, beta));
        assert!(d < ks_critical_1pct(xs.len()), "KS {d}");
    }

    #[test]
    fn ks_rejects_wrong_scale() {
        let mut g = GumbelSampler::zero_mean(1.0, 3).unwrap();
        let xs: Vec<f64> = (0..20_000).map(|_| g.sample()).collect();
        let d = ks_statistic(&xs, |x| gumbel_cdf(x, -0.5 * EULER_GAMMA, 0.5));
        assert!(d > ks_critical_1pct(xs.len()));
    }

    #[test]
    fn single_item_and_equal_scores() {
        let e = mc_user_utility(&[0.5], 0.3, 200_000, 1).unwrap();
        assert!((e.mean - 0.5).abs() < 3.0 * e.se);
        let beta = 0.4;
        let e = mc_user_utility(&[0.0; 4], beta, 200_000, 2).unwrap();
        assert!((e.mean - beta * 4f64.ln()).abs() < 3.0 * e.se);
        let f = mc_choice_distribution(&[0.2; 4], beta, 200_000, 3).unwrap();
        let se = (0.25f64 * 0.75 / 200_000.0).sqrt();
        for p in f {
            assert!((p - 0.25).abs() < 3.0 * se);
        }
    }

    #[test]
    fn standard_gumbel_conditional_means() {
        // Gumbel(0,1) on v = (0,0): each conditional mean is gamma + ln 2
        let mut g = GumbelSampler::new(0.0, 1.0, 5).unwrap();
        let mut m = [Moments::default(), Moments::default()];
        for _ in 0..200_000 {
            let (a, b) = (g.sample(), g.sample());
            if a >= b {
                m[0].push(a)
            } else {
                m[1].push(b)
            }
        }
        for mi in &m {
            let e = mi.estimate(0.0).unwrap();
            assert!((e.mean - (EULER_GAMMA + 2f64.ln())).abs() < 3.0 * e.se);
        }
    }

    #[test]
    fn rejects_zero_beta_and_reports_support() {
        assert!(mc_user_utility(&[1.0], 0.0, 100, 0).is_err());
        let r = mc_conditional_engagement(&[1.0, 0.0], 0.01, 1000, 0);
        assert!(matches!(r, Err(Error::InsufficientSupport(_))));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = simulate(&[0.3, 0.1, 0.9], 0.2, 5_000, 42).unwrap();
        let b = simulate(&[0.3, 0.1, 0.9], 0.2, 5_000, 42).unwrap();
        assert_eq!(a.max_utility, b.max_utility);
        assert_eq!(a.choice_freq, b.choice_freq);
    }
}
