//! Shared log-space numeric primitives.

use statrs::function::gamma::ln_gamma as statrs_ln_gamma;

/// Natural log of the Gamma function on real positive arguments.
pub fn ln_gamma(x: f64) -> f64 {
    statrs_ln_gamma(x)
}

/// Natural log of the multivariate Gamma function of dimension `d`:
/// ln Gamma_d(a) = d(d-1)/4 ln(pi) + sum_{j=1..d} ln Gamma(a + (1-j)/2).
pub fn ln_mv_gamma(d: usize, a: f64) -> f64 {
    let d_f = d as f64;
    let mut acc = d_f * (d_f - 1.0) / 4.0 * std::f64::consts::PI.ln();
    for j in 1..=d {
        acc += ln_gamma(a + (1.0 - j as f64) / 2.0);
    }
    acc
}

/// log(sum_i exp(v_i)) computed stably. Returns -inf for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}
