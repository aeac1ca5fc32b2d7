//! Multinomial components under a Dirichlet prior: conjugate posterior,
//! Dirichlet-multinomial predictive, marginal likelihood, parameter sampling.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::family::{ComponentParams, Point, PriorHyperparams, SufficientStats};
use crate::numeric::ln_gamma;

#[derive(Clone, Debug)]
pub struct DirichletPosterior {
    pub d: DVector<f64>,
    /// Cached sum of the posterior hyperparameters.
    pub total: f64,
}

fn dirichlet_parts(prior: &PriorHyperparams) -> Result<&DVector<f64>> {
    match prior {
        PriorHyperparams::Dirichlet { d } => Ok(d),
        _ => Err(Error::Input("expected Dirichlet prior".into())),
    }
}

pub fn dirichlet_posterior(
    prior: &PriorHyperparams,
    stats: &SufficientStats,
) -> Result<DirichletPosterior> {
    let d = dirichlet_parts(prior)?;
    let counts = stats.counts()?;
    if counts.len() != d.len() {
        return Err(Error::Input("statistics dimension mismatch".into()));
    }
    if counts.iter().any(|c| *c < 0.0) {
        return Err(Error::Input("negative weighted counts".into()));
    }
    let post = d + counts;
    let total = post.sum();
    Ok(DirichletPosterior { d: post, total })
}

/// Log mass of the Dirichlet-multinomial predictive. With
/// `with_coefficient`, includes the multinomial coefficient
/// (sum x)! / prod(x_j!), making it a proper pmf over count vectors with a
/// fixed trial total; without it, returns the proportional form used for
/// label assignment.
pub fn dirmult_log_predictive(
    post: &DirichletPosterior,
    x: &Point,
    with_coefficient: bool,
) -> Result<f64> {
    if x.len() != post.d.len() {
        return Err(Error::Input("point dimension mismatch".into()));
    }
    if x.iter().any(|v| *v < 0.0) {
        return Err(Error::Input("counts must be nonnegative".into()));
    }
    let trials = x.sum();
    if trials < 1.0 {
        return Err(Error::Input("all-zero count vector".into()));
    }
    let mut lp = ln_gamma(post.total) - ln_gamma(post.total + trials);
    for j in 0..x.len() {
        lp += ln_gamma(post.d[j] + x[j]) - ln_gamma(post.d[j]);
    }
    if with_coefficient {
        lp += ln_gamma(trials + 1.0);
        for j in 0..x.len() {
            lp -= ln_gamma(x[j] + 1.0);
        }
    }
    Ok(lp)
}

/// Log marginal likelihood of the weighted counts, per-point multinomial
/// coefficients excluded (they cancel in split/merge Hastings ratios and
/// cannot be recovered from aggregated statistics). Not a normalized
/// likelihood on its own.
pub fn multinomial_log_marginal(
    prior: &PriorHyperparams,
    stats: &SufficientStats,
    n: f64,
) -> Result<f64> {
    if n < 0.0 {
        return Err(Error::Input("weighted count must be nonnegative".into()));
    }
    let d = dirichlet_parts(prior)?;
    let counts = stats.counts()?;
    if counts.len() != d.len() {
        return Err(Error::Input("statistics dimension mismatch".into()));
    }
    if n == 0.0 {
        return Ok(0.0);
    }
    let a: f64 = d.sum();
    let t: f64 = counts.sum();
    let mut lm = ln_gamma(a) - ln_gamma(a + t);
    for j in 0..d.len() {
        lm += ln_gamma(d[j] + counts[j]) - ln_gamma(d[j]);
    }
    Ok(lm)
}

pub fn dirichlet_sample_params<R: Rng + ?Sized>(
    post: &DirichletPosterior,
    rng: &mut R,
) -> Result<ComponentParams> {
    let mut draws = DVector::zeros(post.d.len());
    for j in 0..post.d.len() {
        let g = Gamma::new(post.d[j], 1.0)
            .map_err(|e| Error::Numerical(format!("Dirichlet gamma draw: {e}")))?;
        draws[j] = g.sample(rng).max(1e-300);
    }
    let total = draws.sum();
    draws /= total;
    Ok(ComponentParams::multinomial(&draws))
}
