//! Conjugate exponential-family contract shared by the Gaussian-NIW and
//! multinomial-Dirichlet components, plus the additive sufficient-statistic
//! values everything downstream aggregates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = DVector<f64>;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum Family {
    Gaussian,
    Multinomial,
}

/// Additive summary of a weighted point set.
///
/// Gaussian: (sum of x, sum of x x^T). Multinomial: sum of count vectors.
/// Values are immutable once built; combination goes through [`SufficientStats::add`]
/// and [`SufficientStats::scale`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum SufficientStats {
    Gaussian {
        sum_x: DVector<f64>,
        sum_xxt: DMatrix<f64>,
    },
    Multinomial {
        sum_counts: DVector<f64>,
    },
}

impl SufficientStats {
    pub fn zero(family: Family, dim: usize) -> Self {
        match family {
            Family::Gaussian => SufficientStats::Gaussian {
                sum_x: DVector::zeros(dim),
                sum_xxt: DMatrix::zeros(dim, dim),
            },
            Family::Multinomial => SufficientStats::Multinomial {
                sum_counts: DVector::zeros(dim),
            },
        }
    }

    pub fn family(&self) -> Family {
        match self {
            SufficientStats::Gaussian { .. } => Family::Gaussian,
            SufficientStats::Multinomial { .. } => Family::Multinomial,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SufficientStats::Gaussian { sum_x, .. } => sum_x.len(),
            SufficientStats::Multinomial { sum_counts } => sum_counts.len(),
        }
    }

    pub fn from_point(family: Family, x: &Point) -> Self {
        match family {
            Family::Gaussian => SufficientStats::Gaussian {
                sum_x: x.clone(),
                sum_xxt: x * x.transpose(),
            },
            Family::Multinomial => SufficientStats::Multinomial {
                sum_counts: x.clone(),
            },
        }
    }

    /// Sum of the family statistic over masked points; empty mask gives the
    /// zero statistic. All points must share one dimension.
    pub fn from_points(family: Family, points: &[Point], mask: &[bool]) -> Result<Self> {
        if points.len() != mask.len() {
            return Err(Error::Input(format!(
                "mask length {} does not match point count {}",
                mask.len(),
                points.len()
            )));
        }
        let dim = points.first().map(|p| p.len()).unwrap_or(0);
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::Input("points have mixed dimensions".into()));
        }
        let mut acc = SufficientStats::zero(family, dim);
        for (p, keep) in points.iter().zip(mask) {
            if *keep {
                acc.add_point(p);
            }
        }
        acc.symmetrize();
        Ok(acc)
    }

    pub fn add_point(&mut self, x: &Point) {
        match self {
            SufficientStats::Gaussian { sum_x, sum_xxt } => {
                *sum_x += x;
                sum_xxt.ger(1.0, x, x, 1.0);
            }
            SufficientStats::Multinomial { sum_counts } => *sum_counts += x,
        }
    }

    pub fn add(&self, other: &SufficientStats) -> Result<SufficientStats> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &SufficientStats) -> Result<()> {
        match (self, other) {
            (
                SufficientStats::Gaussian { sum_x, sum_xxt },
                SufficientStats::Gaussian {
                    sum_x: bx,
                    sum_xxt: bxx,
                },
            ) if sum_x.len() == bx.len() => {
                *sum_x += bx;
                *sum_xxt += bxx;
                Ok(())
            }
            (
                SufficientStats::Multinomial { sum_counts },
                SufficientStats::Multinomial { sum_counts: bc },
            ) if sum_counts.len() == bc.len() => {
                *sum_counts += bc;
                Ok(())
            }
            _ => Err(Error::Input(
                "sufficient statistics family or dimension mismatch".into(),
            )),
        }
    }

    pub fn scale(&self, w: f64) -> SufficientStats {
        match self {
            SufficientStats::Gaussian { sum_x, sum_xxt } => SufficientStats::Gaussian {
                sum_x: sum_x * w,
                sum_xxt: sum_xxt * w,
            },
            SufficientStats::Multinomial { sum_counts } => SufficientStats::Multinomial {
                sum_counts: sum_counts * w,
            },
        }
    }

    /// (A + A^T)/2 on the scatter block; counters floating-point drift
    /// after long accumulation chains.
    pub fn symmetrize(&mut self) {
        if let SufficientStats::Gaussian { sum_xxt, .. } = self {
            let t = sum_xxt.transpose();
            *sum_xxt += t;
            *sum_xxt *= 0.5;
        }
    }

    pub fn gaussian_parts(&self) -> Result<(&DVector<f64>, &DMatrix<f64>)> {
        match self {
            SufficientStats::Gaussian { sum_x, sum_xxt } => Ok((sum_x, sum_xxt)),
            _ => Err(Error::Input("expected Gaussian sufficient statistics".into())),
        }
    }

    /// Data-space sum of the observations, whichever the family.
    pub fn first_moment(&self) -> &DVector<f64> {
        match self {
            SufficientStats::Gaussian { sum_x, .. } => sum_x,
            SufficientStats::Multinomial { sum_counts } => sum_counts,
        }
    }

    pub fn counts(&self) -> Result<&DVector<f64>> {
        match self {
            SufficientStats::Multinomial { sum_counts } => Ok(sum_counts),
            _ => Err(Error::Input(
                "expected multinomial sufficient statistics".into(),
            )),
        }
    }
}

/// Base-measure hyperparameters. The same structure carries posteriors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum PriorHyperparams {
    Niw {
        kappa: f64,
        mean: DVector<f64>,
        nu: f64,
        psi: DMatrix<f64>,
    },
    Dirichlet {
        d: DVector<f64>,
    },
}

impl PriorHyperparams {
    pub fn family(&self) -> Family {
        match self {
            PriorHyperparams::Niw { .. } => Family::Gaussian,
            PriorHyperparams::Dirichlet { .. } => Family::Multinomial,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            PriorHyperparams::Niw { mean, .. } => mean.len(),
            PriorHyperparams::Dirichlet { d } => d.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PriorHyperparams::Niw {
                kappa,
                mean,
                nu,
                psi,
            } => {
                let d = mean.len();
                if *kappa <= 0.0 {
                    return Err(Error::Config("NIW kappa must be positive".into()));
                }
                if *nu <= d as f64 - 1.0 {
                    return Err(Error::Config(format!(
                        "NIW nu must exceed D-1 = {}",
                        d as f64 - 1.0
                    )));
                }
                if psi.nrows() != d || psi.ncols() != d {
                    return Err(Error::Config("NIW psi shape mismatch".into()));
                }
                let asym = (psi - psi.transpose()).abs().max();
                if asym > 1e-9 {
                    return Err(Error::Config("NIW psi not symmetric".into()));
                }
                if psi.clone().cholesky().is_none() {
                    return Err(Error::Config("NIW psi not positive definite".into()));
                }
                Ok(())
            }
            PriorHyperparams::Dirichlet { d } => {
                if d.is_empty() || d.iter().any(|v| *v <= 0.0) {
                    return Err(Error::Config(
                        "Dirichlet hyperparameters must all be positive".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// Instantiated component parameters, as drawn by the stochastic sampler.
#[derive(Clone, Debug)]
pub enum ComponentParams {
    Gaussian {
        mu: DVector<f64>,
        sigma: DMatrix<f64>,
        /// Cached for density evaluation.
        chol: DMatrix<f64>,
        log_det: f64,
    },
    Multinomial {
        log_p: DVector<f64>,
    },
}

impl ComponentParams {
    pub fn gaussian(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let chol = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("sampled covariance not SPD".into()))?;
        let l = chol.l();
        let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(ComponentParams::Gaussian {
            mu,
            sigma,
            chol: l,
            log_det,
        })
    }

    pub fn multinomial(p: &DVector<f64>) -> Self {
        ComponentParams::Multinomial {
            log_p: p.map(|v| v.max(1e-300).ln()),
        }
    }

    /// Log-likelihood of `x` under these parameters, up to terms constant in
    /// the component (the multinomial coefficient is dropped).
    pub fn log_likelihood(&self, x: &Point) -> f64 {
        match self {
            ComponentParams::Gaussian {
                mu, chol, log_det, ..
            } => {
                let d = mu.len() as f64;
                let diff = x - mu;
                // solve L y = diff, quadratic form = |y|^2
                let y = chol
                    .solve_lower_triangular(&diff)
                    .expect("cholesky factor is nonsingular");
                -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det + y.norm_squared())
            }
            ComponentParams::Multinomial { log_p } => x.dot(log_p),
        }
    }
}

/// stats_from_points per the family contract.
pub fn stats_from_points(family: Family, points: &[Point], mask: &[bool]) -> Result<SufficientStats> {
    SufficientStats::from_points(family, points, mask)
}

pub fn stats_add(a: &SufficientStats, b: &SufficientStats) -> Result<SufficientStats> {
    a.add(b)
}

pub fn stats_scale(a: &SufficientStats, w: f64) -> SufficientStats {
    a.scale(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pt(v: &[f64]) -> Point {
        DVector::from_row_slice(v)
    }

    #[test]
    fn gaussian_single_point_outer_product() {
        let s = stats_from_points(Family::Gaussian, &[pt(&[2.0, 0.0])], &[true]).unwrap();
        let (sx, sxx) = s.gaussian_parts().unwrap();
        assert_eq!(sx.as_slice(), &[2.0, 0.0]);
        assert_eq!(sxx[(0, 0)], 4.0);
        assert_eq!(sxx[(0, 1)], 0.0);
        assert_eq!(sxx[(1, 1)], 0.0);
    }

    #[test]
    fn empty_mask_gives_zero() {
        let s = stats_from_points(Family::Gaussian, &[pt(&[1.0]), pt(&[2.0])], &[false, false])
            .unwrap();
        let (sx, sxx) = s.gaussian_parts().unwrap();
        assert_eq!(sx[0], 0.0);
        assert_eq!(sxx[(0, 0)], 0.0);
    }

    #[test]
    fn multinomial_componentwise_sum() {
        let s = stats_from_points(
            Family::Multinomial,
            &[pt(&[1.0, 2.0]), pt(&[0.0, 3.0])],
            &[true, true],
        )
        .unwrap();
        assert_eq!(s.counts().unwrap().as_slice(), &[1.0, 5.0]);
    }

    #[test]
    fn scale_identity_and_annihilation() {
        let s = stats_from_points(Family::Gaussian, &[pt(&[1.5, -2.0])], &[true]).unwrap();
        let one = stats_scale(&s, 1.0);
        let (a, b) = one.gaussian_parts().unwrap();
        let (sa, sb) = s.gaussian_parts().unwrap();
        assert_eq!(a, sa);
        assert_eq!(b, sb);
        let zero = stats_scale(&s, 0.0);
        assert_eq!(zero.gaussian_parts().unwrap().0[0], 0.0);
    }

    #[test]
    fn half_plus_half_recovers() {
        let s = stats_from_points(Family::Gaussian, &[pt(&[3.0, 4.0]), pt(&[1.0, 1.0])], &[true, true])
            .unwrap();
        let back = stats_add(&stats_scale(&s, 0.5), &stats_scale(&s, 0.5)).unwrap();
        let (sx, _) = s.gaussian_parts().unwrap();
        let (bx, _) = back.gaussian_parts().unwrap();
        for i in 0..2 {
            assert_relative_eq!(sx[i], bx[i], max_relative = 1e-12);
        }
    }

    #[test]
    fn family_mismatch_is_input_error() {
        let g = SufficientStats::zero(Family::Gaussian, 2);
        let m = SufficientStats::zero(Family::Multinomial, 2);
        assert!(stats_add(&g, &m).is_err());
    }

    #[test]
    fn mask_length_mismatch_is_input_error() {
        assert!(stats_from_points(Family::Gaussian, &[pt(&[1.0])], &[true, false]).is_err());
    }
}
