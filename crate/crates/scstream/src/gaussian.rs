//! Full-covariance Gaussian components under a Normal-Inverse-Wishart prior:
//! conjugate posterior, Student-t predictive, marginal likelihood, and
//! parameter sampling via the Bartlett decomposition.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::family::{ComponentParams, Point, PriorHyperparams, SufficientStats};
use crate::numeric::{ln_gamma, ln_mv_gamma};

/// NIW posterior hyperparameters with the Cholesky factor of nu* Psi* and its
/// log-determinant cached for repeated predictive evaluation.
#[derive(Clone, Debug)]
pub struct NiwPosterior {
    pub kappa: f64,
    pub mean: DVector<f64>,
    pub nu: f64,
    /// nu* Psi*, kept unscaled since every consumer needs this product.
    pub scaled_scatter: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_det: f64,
}

fn chol_with_jitter(mut m: DMatrix<f64>, context: &str) -> Result<(DMatrix<f64>, f64)> {
    for attempt in 0..2 {
        if let Some(c) = m.clone().cholesky() {
            let l = c.l();
            let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
            return Ok((l, log_det));
        }
        if attempt == 0 {
            let jitter = 1e-10 * m.trace() / m.nrows() as f64;
            for i in 0..m.nrows() {
                m[(i, i)] += jitter;
            }
        }
    }
    Err(Error::Numerical(format!(
        "{context}: matrix not positive definite even after jitter"
    )))
}

impl NiwPosterior {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_det_scaled_scatter(&self) -> f64 {
        self.log_det
    }

    fn quad_form(&self, diff: &DVector<f64>) -> f64 {
        let y = self
            .chol
            .solve_lower_triangular(diff)
            .expect("cholesky factor is nonsingular");
        y.norm_squared()
    }
}

fn niw_parts(prior: &PriorHyperparams) -> Result<(f64, &DVector<f64>, f64, &DMatrix<f64>)> {
    match prior {
        PriorHyperparams::Niw {
            kappa,
            mean,
            nu,
            psi,
        } => Ok((*kappa, mean, *nu, psi)),
        _ => Err(Error::Input("expected NIW prior".into())),
    }
}

/// Conjugate update from weighted statistics. The scatter update carries the
/// full mean outer-product correction:
/// nu* Psi* = nu Psi + kappa m m^T + sum_xxT - kappa* m* m*^T.
pub fn niw_posterior(
    prior: &PriorHyperparams,
    stats: &SufficientStats,
    n: f64,
) -> Result<NiwPosterior> {
    let (kappa, m, nu, psi) = niw_parts(prior)?;
    if n < 0.0 {
        return Err(Error::Input("weighted count must be nonnegative".into()));
    }
    let (sum_x, sum_xxt) = stats.gaussian_parts()?;
    if sum_x.len() != m.len() {
        return Err(Error::Input("statistics dimension mismatch".into()));
    }
    let kappa_star = kappa + n;
    let nu_star = nu + n;
    let mean_star = (m * kappa + sum_x) / kappa_star;
    let mut scatter = psi * nu + m * m.transpose() * kappa + sum_xxt
        - &mean_star * mean_star.transpose() * kappa_star;
    // symmetrize accumulated drift
    let t = scatter.transpose();
    scatter += t;
    scatter *= 0.5;
    let (chol, log_det) = chol_with_jitter(scatter.clone(), "NIW posterior scatter")?;
    Ok(NiwPosterior {
        kappa: kappa_star,
        mean: mean_star,
        nu: nu_star,
        scaled_scatter: scatter,
        chol,
        log_det,
    })
}

/// Log multivariate Student-t predictive density
/// t_{nu*-D+1}(x; m*, ((kappa*+1)/(kappa*(nu*-D+1))) nu* Psi*).
pub fn niw_log_predictive(post: &NiwPosterior, x: &Point) -> Result<f64> {
    let d = post.dim();
    if x.len() != d {
        return Err(Error::Input("point dimension mismatch".into()));
    }
    let df = post.nu - d as f64 + 1.0;
    if df <= 0.0 {
        return Err(Error::Config(format!(
            "prior nu too small for dimension {d}: predictive df = {df}"
        )));
    }
    let scale_factor = (post.kappa + 1.0) / (post.kappa * df);
    let diff = x - &post.mean;
    // quadratic form under scale_factor * scaled_scatter
    let q = post.quad_form(&diff) / scale_factor;
    let d_f = d as f64;
    let log_det_scale = d_f * scale_factor.ln() + post.log_det;
    Ok(ln_gamma((df + d_f) / 2.0)
        - ln_gamma(df / 2.0)
        - 0.5 * d_f * (df * std::f64::consts::PI).ln()
        - 0.5 * log_det_scale
        - 0.5 * (df + d_f) * (1.0 + q / df).ln())
}

/// Log marginal likelihood of the weighted point set summarized by
/// (stats, n) under the NIW prior. Returns 0 for n = 0.
pub fn niw_log_marginal(prior: &PriorHyperparams, stats: &SufficientStats, n: f64) -> Result<f64> {
    if n == 0.0 {
        return Ok(0.0);
    }
    let (kappa, mean, nu, psi) = niw_parts(prior)?;
    let d = mean.len();
    let d_f = d as f64;
    let post = niw_posterior(prior, stats, n)?;
    let prior_scatter = psi * nu;
    let (_, prior_log_det) = chol_with_jitter(prior_scatter, "NIW prior scatter")?;
    Ok(ln_mv_gamma(d, post.nu / 2.0) - ln_mv_gamma(d, nu / 2.0)
        + 0.5 * nu * prior_log_det
        - 0.5 * post.nu * post.log_det
        - 0.5 * n * d_f * std::f64::consts::PI.ln()
        + 0.5 * d_f * (kappa / post.kappa).ln())
}

/// Draw (mu, Sigma): Sigma ~ InverseWishart(nu*, nu* Psi*) by Bartlett
/// decomposition, mu ~ Normal(m*, Sigma/kappa*).
pub fn niw_sample_params<R: Rng + ?Sized>(
    post: &NiwPosterior,
    rng: &mut R,
) -> Result<ComponentParams> {
    let d = post.dim();
    // Bartlett factor A for Wishart(nu, I)
    let mut a = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        let shape = (post.nu - i as f64) / 2.0;
        let g = Gamma::new(shape, 2.0)
            .map_err(|e| Error::Numerical(format!("Bartlett chi-square draw: {e}")))?;
        a[(i, i)] = g.sample(rng).max(1e-300).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    // Sigma^-1 ~ Wishart(nu, (nu Psi)^-1) gives Sigma = (L A^{-T})(L A^{-T})^T
    // with L = chol(nu Psi). Solve A Y^T = L^T for Y^T, then Sigma = Y Y^T.
    let lt = post.chol.transpose();
    let yt = a
        .solve_lower_triangular(&lt)
        .ok_or_else(|| Error::Numerical("Bartlett factor singular".into()))?;
    let y = yt.transpose();
    let sigma = &y * y.transpose();
    let mut sigma = sigma;
    let t = sigma.transpose();
    sigma += t;
    sigma *= 0.5;

    // mu = m* + Y z / sqrt(kappa*)  (Y Y^T = Sigma)
    let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let mu = &post.mean + &y * z / post.kappa.sqrt();

    match ComponentParams::gaussian(mu.clone(), sigma.clone()) {
        Ok(p) => Ok(p),
        Err(_) => {
            // one jittered retry, then hard error
            let jitter = 1e-10 * sigma.trace() / d as f64;
            let mut s2 = sigma;
            for i in 0..d {
                s2[(i, i)] += jitter;
            }
            ComponentParams::gaussian(mu, s2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::Family;
    use approx::assert_relative_eq;
    use nalgebra::dvector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn prior_2d() -> PriorHyperparams {
        PriorHyperparams::Niw {
            kappa: 1.0,
            mean: dvector![0.0, 0.0],
            nu: 4.0,
            psi: DMatrix::identity(2, 2),
        }
    }

    #[test]
    fn empty_data_returns_prior() {
        let prior = prior_2d();
        let z = SufficientStats::zero(Family::Gaussian, 2);
        let post = niw_posterior(&prior, &z, 0.0).unwrap();
        assert_eq!(post.kappa, 1.0);
        assert_eq!(post.nu, 4.0);
        assert_eq!(post.mean, dvector![0.0, 0.0]);
        // nu* Psi* = nu Psi = 4 I
        assert_relative_eq!(post.scaled_scatter[(0, 0)], 4.0, epsilon = 1e-12);
        assert_relative_eq!(post.scaled_scatter[(1, 1)], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn single_point_update() {
        let prior = prior_2d();
        let x = dvector![2.0, 0.0];
        let s = SufficientStats::from_point(Family::Gaussian, &x);
        let post = niw_posterior(&prior, &s, 1.0).unwrap();
        assert_eq!(post.kappa, 2.0);
        assert_eq!(post.nu, 5.0);
        assert_relative_eq!(post.mean[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(post.mean[1], 0.0, epsilon = 1e-12);
        // nu* Psi* = 4 I + 0 + [[4,0],[0,0]] - 2 [[1,0],[0,0]] = [[6,0],[0,4]]
        assert_relative_eq!(post.scaled_scatter[(0, 0)], 6.0, epsilon = 1e-10);
        assert_relative_eq!(post.scaled_scatter[(0, 1)], 0.0, epsilon = 1e-10);
        assert_relative_eq!(post.scaled_scatter[(1, 1)], 4.0, epsilon = 1e-10);
    }

    #[test]
    fn reference_gaussian2d_prior_with_zero_stats() {
        let prior = PriorHyperparams::Niw {
            kappa: 1.0,
            mean: dvector![0.0, 0.0],
            nu: 4.0,
            psi: DMatrix::identity(2, 2) * 1.02,
        };
        let z = SufficientStats::zero(Family::Gaussian, 2);
        let post = niw_posterior(&prior, &z, 0.0).unwrap();
        assert_eq!(post.kappa, 1.0);
        assert_eq!(post.nu, 4.0);
        assert_relative_eq!(post.scaled_scatter[(0, 0)] / post.nu, 1.02, epsilon = 1e-12);
    }

    #[test]
    fn predictive_elliptical_symmetry() {
        let prior = prior_2d();
        let s = SufficientStats::from_point(Family::Gaussian, &dvector![1.0, -1.0]);
        let post = niw_posterior(&prior, &s, 1.0).unwrap();
        let delta = dvector![0.3, 0.7];
        let plus = niw_log_predictive(&post, &(&post.mean + &delta)).unwrap();
        let minus = niw_log_predictive(&post, &(&post.mean - &delta)).unwrap();
        assert_relative_eq!(plus, minus, epsilon = 1e-12);
    }

    #[test]
    fn predictive_chain_rule_matches_marginal() {
        let prior = prior_2d();
        let x1 = dvector![0.5, -0.3];
        let x2 = dvector![1.1, 0.2];
        let s1 = SufficientStats::from_point(Family::Gaussian, &x1);
        let mut s12 = s1.clone();
        s12.add_point(&x2);
        let post1 = niw_posterior(&prior, &s1, 1.0).unwrap();
        let pred = niw_log_predictive(&post1, &x2).unwrap();
        let lm1 = niw_log_marginal(&prior, &s1, 1.0).unwrap();
        let lm12 = niw_log_marginal(&prior, &s12, 2.0).unwrap();
        assert_relative_eq!(pred, lm12 - lm1, epsilon = 1e-8);
    }

    #[test]
    fn marginal_permutation_invariance() {
        let prior = prior_2d();
        let pts = [
            dvector![0.1, 0.9],
            dvector![-1.0, 0.4],
            dvector![2.0, -0.5],
            dvector![0.0, 0.0],
        ];
        // marginal computed from aggregated stats is order-free by construction;
        // check the chain-rule telescoping over two orderings instead.
        let orders: [[usize; 4]; 2] = [[0, 1, 2, 3], [3, 2, 0, 1]];
        let mut totals = Vec::new();
        for ord in orders {
            let mut s = SufficientStats::zero(Family::Gaussian, 2);
            let mut total = 0.0;
            let mut n = 0.0;
            for &i in &ord {
                let post = niw_posterior(&prior, &s, n).unwrap();
                total += niw_log_predictive(&post, &pts[i]).unwrap();
                s.add_point(&pts[i]);
                n += 1.0;
            }
            totals.push(total);
        }
        assert_relative_eq!(totals[0], totals[1], epsilon = 1e-8);
        // and the telescoping sum equals the aggregated marginal
        let mut s = SufficientStats::zero(Family::Gaussian, 2);
        for p in &pts {
            s.add_point(p);
        }
        let lm = niw_log_marginal(&prior, &s, 4.0).unwrap();
        assert_relative_eq!(totals[0], lm, epsilon = 1e-8);
    }

    #[test]
    fn marginal_empty_is_zero() {
        let prior = prior_2d();
        let z = SufficientStats::zero(Family::Gaussian, 2);
        assert_eq!(niw_log_marginal(&prior, &z, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn sampled_covariances_are_spd() {
        let prior = prior_2d();
        let s = SufficientStats::from_point(Family::Gaussian, &dvector![1.0, 2.0]);
        let post = niw_posterior(&prior, &s, 1.0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let p = niw_sample_params(&post, &mut rng).unwrap();
            match p {
                ComponentParams::Gaussian { sigma, .. } => {
                    assert!(sigma.cholesky().is_some());
                }
                _ => panic!("wrong family"),
            }
        }
    }

    #[test]
    fn sampled_mean_concentrates_on_posterior_mean() {
        let prior = prior_2d();
        let mut s = SufficientStats::zero(Family::Gaussian, 2);
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..50 {
            let x = dvector![
                3.0 + rng.sample::<f64, _>(StandardNormal),
                -1.0 + rng.sample::<f64, _>(StandardNormal)
            ];
            s.add_point(&x);
        }
        let post = niw_posterior(&prior, &s, 50.0).unwrap();
        let draws = 100_000;
        let mut acc = dvector![0.0, 0.0];
        let mut acc2 = dvector![0.0, 0.0];
        for _ in 0..draws {
            if let ComponentParams::Gaussian { mu, .. } = niw_sample_params(&post, &mut rng).unwrap()
            {
                acc += &mu;
                acc2 += mu.map(|v| v * v);
            }
        }
        let mean = &acc / draws as f64;
        for i in 0..2 {
            let var = acc2[i] / draws as f64 - mean[i] * mean[i];
            let se = (var / draws as f64).sqrt();
            assert!(
                (mean[i] - post.mean[i]).abs() < 3.0 * se + 1e-9,
                "component {i}: {} vs {}",
                mean[i],
                post.mean[i]
            );
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let prior = prior_2d();
        let s = SufficientStats::from_point(Family::Gaussian, &dvector![1.0, 2.0]);
        let post = niw_posterior(&prior, &s, 1.0).unwrap();
        let draw = |seed: u64| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            match niw_sample_params(&post, &mut rng).unwrap() {
                ComponentParams::Gaussian { mu, sigma, .. } => (mu, sigma),
                _ => unreachable!(),
            }
        };
        let (m1, s1) = draw(42);
        let (m2, s2) = draw(42);
        assert_eq!(m1, m2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn df_too_small_is_config_error() {
        // D=3 with nu*=1.9 gives df = nu*-D+1 < 0
        let prior = PriorHyperparams::Niw {
            kappa: 1.0,
            mean: dvector![0.0, 0.0, 0.0],
            nu: 1.9,
            psi: DMatrix::identity(3, 3),
        };
        let z = SufficientStats::zero(Family::Gaussian, 3);
        let post = niw_posterior(&prior, &z, 0.0).unwrap();
        assert!(matches!(
            niw_log_predictive(&post, &dvector![0.0, 0.0, 0.0]),
            Err(Error::Config(_))
        ));
    }
}
