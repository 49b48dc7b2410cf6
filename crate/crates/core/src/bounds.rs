//! Closed-form efficiency bounds.
//!
//! Everything is written in terms of `L = 1/beta` and `b = e^L - 1` without
//! ever forming `b`, so `beta -> 0` is handled exactly:
//!
//! - `log(b + K) = L + log1p((K-1) e^-L) = log K + log1p(expm1(L) / K)`
//! - `c(beta, K) = log(b + K) / ((1 + (K-1) e^-L) (log(b + K) - log K))`

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `log(b + K)` with `b = e^{1/beta} - 1`, for `beta > 0`.
fn log_b_plus_k(beta: f64, k: f64) -> f64 {
    let l = 1.0 / beta;
    if l > 1.0 {
        l + ((k - 1.0) * (-l).exp()).ln_1p()
    } else {
        k.ln() + (l.exp_m1() / k).ln_1p()
    }
}

/// Smoothness constant `c(beta, K) >= 1`; PoA of any engagement instance is
/// below `1 + 1/c`.
pub fn c_beta_k(beta: f64, k: usize) -> f64 {
    assert!(beta >= 0.0 && k >= 1, "c_beta_k needs beta >= 0 and K >= 1");
    if k == 1 || beta == 0.0 {
        return 1.0;
    }
    let kf = k as f64;
    let l = 1.0 / beta;
    if !l.is_finite() {
        return 1.0;
    }
    let lbk = log_b_plus_k(beta, kf);
    // log(b+K) - log K, exact for small L as well
    let gap = if l > 1.0 {
        lbk - kf.ln()
    } else {
        (l.exp_m1() / kf).ln_1p()
    };
    let scale = 1.0 + (kf - 1.0) * (-l).exp();
    lbk / (scale * gap)
}

/// `1 + 1/c(beta, K)`.
pub fn poa_upper_bound(beta: f64, k: usize) -> f64 {
    1.0 + 1.0 / c_beta_k(beta, k)
}

/// `1 + 1/((1 + beta) log K)`; infinite at `K = 1`.
pub fn poa_upper_asymptotic(beta: f64, k: usize) -> f64 {
    1.0 + 1.0 / ((1.0 + beta) * (k as f64).ln())
}

/// Whether the lower-bound construction applies: `0 <= beta <= 1`, `n > 2`,
/// `K <= min(n - 1, e^{1/(5 beta)})`.
pub fn lower_bound_hypothesis(n: usize, beta: f64, k: usize) -> bool {
    let cap = if beta > 0.0 {
        (1.0 / (5.0 * beta)).exp()
    } else {
        f64::INFINITY
    };
    (0.0..=1.0).contains(&beta) && n > 2 && k >= 1 && k < n && (k as f64) <= cap
}

/// `(n-1)/n + 1/(1 + 5 beta log K)`.
pub fn poa_lower_bound(n: usize, beta: f64, k: usize) -> f64 {
    let nf = n as f64;
    (nf - 1.0) / nf + poa_lower_asymptote(beta, k) - 1.0
}

/// `n -> infinity` limit of [`poa_lower_bound`].
pub fn poa_lower_asymptote(beta: f64, k: usize) -> f64 {
    1.0 + 1.0 / (1.0 + 5.0 * beta * (k as f64).ln())
}

/// PotA bound for no-regret play with average regret `regret_rate = R(T)/T`:
/// `1 + (1 + n R/T / (beta log K)) / c`.
pub fn dynamic_poa_bound(n: usize, beta: f64, k: usize, regret_rate: f64) -> Result<f64> {
    let scale = beta * (k as f64).ln();
    if k < 2 || beta <= 0.0 || !scale.is_finite() {
        return Err(Error::Undefined(format!(
            "dynamic bound needs K >= 2 and beta > 0 (got K = {k}, beta = {beta})"
        )));
    }
    Ok(1.0 + (1.0 + n as f64 * regret_rate / scale) / c_beta_k(beta, k))
}

/// `1 / (1 + K log(K+b) / (K+b))`; tends to 1 as `beta -> 0`.
pub fn welfare_loss_factor(beta: f64, k: usize) -> f64 {
    if beta == 0.0 {
        return 1.0;
    }
    let kf = k as f64;
    let lbk = log_b_plus_k(beta, kf);
    // K / (K + b) = K e^{-log(b+K)}
    let ratio = kf * lbk * (-lbk).exp();
    1.0 / (1.0 + ratio)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub n: usize,
    pub beta: f64,
    pub k: usize,
    pub c: f64,
    pub poa_upper: f64,
    pub poa_upper_asymptotic: f64,
    pub poa_lower: f64,
    pub poa_lower_asymptote: f64,
    /// False when `(n, beta, K)` lies outside the lower-bound construction's
    /// hypothesis; `poa_lower` is then only the formula value.
    pub lower_bound_valid: bool,
    pub regret_rate: Option<f64>,
    /// `None` when `K = 1`, `beta = 0` or no regret rate was given.
    pub dynamic_upper: Option<f64>,
    pub welfare_loss_factor: f64,
    /// `(lambda, mu)` with `lambda W(s') - mu W(s) <= sum_i u_i(s'_i, s_-i)`.
    pub smoothness: (f64, f64),
}

impl BoundReport {
    pub fn new(n: usize, beta: f64, k: usize, regret_rate: Option<f64>) -> Self {
        let c = c_beta_k(beta, k);
        BoundReport {
            n,
            beta,
            k,
            c,
            poa_upper: 1.0 + 1.0 / c,
            poa_upper_asymptotic: poa_upper_asymptotic(beta, k),
            poa_lower: poa_lower_bound(n, beta, k),
            poa_lower_asymptote: poa_lower_asymptote(beta, k),
            lower_bound_valid: lower_bound_hypothesis(n, beta, k),
            regret_rate,
            dynamic_upper: regret_rate.and_then(|r| dynamic_poa_bound(n, beta, k, r).ok()),
            welfare_loss_factor: welfare_loss_factor(beta, k),
            smoothness: (c, c),
        }
    }
}
