//! Subcluster-augmented restricted Gibbs iteration, stochastic split/merge
//! proposals with Hastings ratios, and the deterministic mode/argmax pass.
//! Everything here operates on time-weighted aggregates; the number of
//! clusters changes only through splits and merges.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::{ComponentParams, Family, Point, PriorHyperparams, SufficientStats};
use crate::gaussian::{niw_log_marginal, niw_log_predictive, niw_posterior, niw_sample_params};
use crate::history::{HistoryRecord, WeightedAggregate};
use crate::multinomial::{
    dirichlet_posterior, dirichlet_sample_params, dirmult_log_predictive, multinomial_log_marginal,
};
use crate::numeric::ln_gamma;

/// Weighted counts below this floor make a split proposal ill-defined
/// (Gamma pole at zero); such proposals are skipped.
pub const COUNT_FLOOR: f64 = 1e-3;

const MODE_DELTA: f64 = 1e-10;

/// Posterior hyperparameters for either family, built from a weighted
/// aggregate.
#[derive(Clone, Debug)]
pub enum Posterior {
    Niw(crate::gaussian::NiwPosterior),
    Dirichlet(crate::multinomial::DirichletPosterior),
}

impl Posterior {
    pub fn from_aggregate(prior: &PriorHyperparams, agg: &WeightedAggregate) -> Result<Posterior> {
        match prior.family() {
            Family::Gaussian => Ok(Posterior::Niw(niw_posterior(prior, &agg.stats, agg.count)?)),
            Family::Multinomial => Ok(Posterior::Dirichlet(dirichlet_posterior(
                prior, &agg.stats,
            )?)),
        }
    }

    pub fn log_predictive(&self, x: &Point) -> Result<f64> {
        match self {
            Posterior::Niw(p) => niw_log_predictive(p, x),
            Posterior::Dirichlet(p) => dirmult_log_predictive(p, x, false),
        }
    }

    pub fn sample_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ComponentParams> {
        match self {
            Posterior::Niw(p) => niw_sample_params(p, rng),
            Posterior::Dirichlet(p) => dirichlet_sample_params(p, rng),
        }
    }
}

/// Family-dispatched log marginal likelihood of a weighted aggregate.
pub fn log_marginal(prior: &PriorHyperparams, stats: &SufficientStats, n: f64) -> Result<f64> {
    match prior.family() {
        Family::Gaussian => niw_log_marginal(prior, stats, n),
        Family::Multinomial => multinomial_log_marginal(prior, stats, n),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Subcluster {
    pub weight: f64,
    pub history: HistoryRecord,
}

/// One instantiated component with its two proposal subclusters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Cluster {
    /// Stable within a run; never reused. Children of splits/merges get
    /// fresh ids.
    pub id: u64,
    pub weight: f64,
    pub history: HistoryRecord,
    pub sub: [Subcluster; 2],
}

impl Cluster {
    pub fn new(id: u64, family: Family, dim: usize) -> Self {
        Cluster {
            id,
            weight: 1.0,
            history: HistoryRecord::new(family, dim),
            sub: [
                Subcluster {
                    weight: 0.5,
                    history: HistoryRecord::new(family, dim),
                },
                Subcluster {
                    weight: 0.5,
                    history: HistoryRecord::new(family, dim),
                },
            ],
        }
    }
}

/// Cluster and subcluster labels for the points of one batch. `z` holds
/// indices into the current cluster list; `zbar` is 0 or 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub z: Vec<usize>,
    pub zbar: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MoveKind {
    Split,
    Merge,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MoveRecord {
    pub kind: MoveKind,
    pub parents: Vec<u64>,
    pub children: Vec<u64>,
    pub log_hastings: Option<f64>,
    pub accepted: bool,
    pub reason: Option<String>,
}

pub type MoveLog = Vec<MoveRecord>;

/// Historical + current-batch aggregates for one cluster.
#[derive(Clone, Debug)]
pub struct ClusterStats {
    pub total: WeightedAggregate,
    pub sub: [WeightedAggregate; 2],
}

impl ClusterStats {
    pub fn zero(family: Family, dim: usize) -> Self {
        let z = || WeightedAggregate {
            stats: SufficientStats::zero(family, dim),
            count: 0.0,
        };
        ClusterStats {
            total: z(),
            sub: [z(), z()],
        }
    }

    fn add(&self, other: &ClusterStats) -> Result<ClusterStats> {
        Ok(ClusterStats {
            total: WeightedAggregate {
                stats: self.total.stats.add(&other.total.stats)?,
                count: self.total.count + other.total.count,
            },
            sub: [
                WeightedAggregate {
                    stats: self.sub[0].stats.add(&other.sub[0].stats)?,
                    count: self.sub[0].count + other.sub[0].count,
                },
                WeightedAggregate {
                    stats: self.sub[1].stats.add(&other.sub[1].stats)?,
                    count: self.sub[1].count + other.sub[1].count,
                },
            ],
        })
    }
}

/// Per-cluster current-batch statistics from an assignment, accumulated in
/// point order for reproducibility.
pub fn batch_stats(
    points: &[Point],
    assignment: &Assignment,
    n_clusters: usize,
    family: Family,
    dim: usize,
) -> Vec<ClusterStats> {
    let mut out = vec![ClusterStats::zero(family, dim); n_clusters];
    for (i, x) in points.iter().enumerate() {
        let k = assignment.z[i];
        let j = assignment.zbar[i] as usize;
        let cs = &mut out[k];
        cs.total.stats.add_point(x);
        cs.total.count += 1.0;
        cs.sub[j].stats.add_point(x);
        cs.sub[j].count += 1.0;
    }
    for cs in &mut out {
        cs.total.stats.symmetrize();
        cs.sub[0].stats.symmetrize();
        cs.sub[1].stats.symmetrize();
    }
    out
}

/// Mode of a Dirichlet with parameters `alphas`, using the clipped rule
/// ((a_i - 1)^+ + delta) normalized; degrades continuously when some a_i < 1.
pub fn dirichlet_mode(alphas: &[f64]) -> Vec<f64> {
    let raw: Vec<f64> = alphas
        .iter()
        .map(|a| (a - 1.0).max(0.0) + MODE_DELTA)
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Draw cluster weights (pi_1..pi_K, remainder) ~ Dirichlet(N_1..N_K, alpha)
/// with the remainder discarded as unobserved stick mass, and subcluster
/// weights ~ Dirichlet(Nbar_1 + alpha/2, Nbar_2 + alpha/2) per cluster.
pub fn sample_weights<R: Rng + ?Sized>(
    counts: &[f64],
    subcounts: &[[f64; 2]],
    alpha: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<[f64; 2]>)> {
    if counts.is_empty() {
        return Err(Error::State("no clusters to weight".into()));
    }
    let gamma_draw = |shape: f64, rng: &mut R| -> Result<f64> {
        let s = shape.max(1e-6);
        let g = rand_distr::Gamma::new(s, 1.0)
            .map_err(|e| Error::Numerical(format!("gamma draw: {e}")))?;
        Ok(rand_distr::Distribution::sample(&g, rng).max(1e-300))
    };
    let mut draws = Vec::with_capacity(counts.len() + 1);
    for &n in counts {
        draws.push(gamma_draw(n, rng)?);
    }
    let rest = gamma_draw(alpha, rng)?;
    let total: f64 = draws.iter().sum::<f64>() + rest;
    let pis: Vec<f64> = draws.into_iter().map(|d| d / total).collect();

    let mut sub_pis = Vec::with_capacity(subcounts.len());
    for sc in subcounts {
        let a = gamma_draw(sc[0] + alpha / 2.0, rng)?;
        let b = gamma_draw(sc[1] + alpha / 2.0, rng)?;
        sub_pis.push([a / (a + b), b / (a + b)]);
    }
    Ok((pis, sub_pis))
}

/// Categorical draw per point with mass proportional to
/// pi_k * f(x_i; theta_k) over the existing clusters only. `uniforms`
/// supplies one pre-drawn U(0,1) per point so scoring can run in parallel
/// while staying reproducible at any thread count.
pub fn sample_labels(
    points: &[Point],
    log_weights: &[f64],
    params: &[ComponentParams],
    uniforms: &[f64],
) -> Result<Vec<usize>> {
    let labels: Vec<std::result::Result<usize, usize>> = points
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let scores: Vec<f64> = log_weights
                .iter()
                .zip(params)
                .map(|(lw, p)| lw + p.log_likelihood(x))
                .collect();
            categorical_from_log_scores(&scores, uniforms[i]).ok_or(i)
        })
        .collect();
    labels
        .into_iter()
        .collect::<std::result::Result<Vec<_>, usize>>()
        .map_err(|i| Error::Numerical(format!("all assignment masses vanished for point {i}")))
}

/// Subcluster label draw, restricted to the point's assigned cluster.
pub fn sample_subcluster_labels(
    points: &[Point],
    z: &[usize],
    sub_log_weights: &[[f64; 2]],
    sub_params: &[[ComponentParams; 2]],
    uniforms: &[f64],
) -> Result<Vec<u8>> {
    let labels: Vec<std::result::Result<u8, usize>> = points
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let k = z[i];
            let scores = [
                sub_log_weights[k][0] + sub_params[k][0].log_likelihood(x),
                sub_log_weights[k][1] + sub_params[k][1].log_likelihood(x),
            ];
            categorical_from_log_scores(&scores, uniforms[i])
                .map(|j| j as u8)
                .ok_or(i)
        })
        .collect();
    labels
        .into_iter()
        .collect::<std::result::Result<Vec<_>, usize>>()
        .map_err(|i| Error::Numerical(format!("all subcluster masses vanished for point {i}")))
}

fn categorical_from_log_scores(scores: &[f64], u: f64) -> Option<usize> {
    let lse = crate::numeric::log_sum_exp(scores);
    if !lse.is_finite() {
        return None;
    }
    let mut cum = 0.0;
    for (k, s) in scores.iter().enumerate() {
        cum += (s - lse).exp();
        if u < cum {
            return Some(k);
        }
    }
    Some(scores.len() - 1)
}

/// log H_split = log alpha + lnG(Nbar_1) + log ml(Sbar_1) + lnG(Nbar_2)
/// + log ml(Sbar_2) - lnG(N) - log ml(S), all time-weighted aggregates.
/// Returns None when either subcluster count is below the floor.
pub fn split_log_hastings(
    prior: &PriorHyperparams,
    alpha: f64,
    stats: &ClusterStats,
) -> Result<Option<f64>> {
    if stats.sub[0].count <= COUNT_FLOOR || stats.sub[1].count <= COUNT_FLOOR {
        return Ok(None);
    }
    let lh = alpha.ln()
        + ln_gamma(stats.sub[0].count)
        + log_marginal(prior, &stats.sub[0].stats, stats.sub[0].count)?
        + ln_gamma(stats.sub[1].count)
        + log_marginal(prior, &stats.sub[1].stats, stats.sub[1].count)?
        - ln_gamma(stats.total.count)
        - log_marginal(prior, &stats.total.stats, stats.total.count)?;
    Ok(Some(lh))
}

/// log H_merge: the split ratio negated, with the two clusters standing in
/// for the subclusters and their union for the parent.
pub fn merge_log_hastings(
    prior: &PriorHyperparams,
    alpha: f64,
    a: &ClusterStats,
    b: &ClusterStats,
) -> Result<Option<f64>> {
    let merged = ClusterStats {
        total: WeightedAggregate {
            stats: a.total.stats.add(&b.total.stats)?,
            count: a.total.count + b.total.count,
        },
        sub: [a.total.clone(), b.total.clone()],
    };
    Ok(split_log_hastings(prior, alpha, &merged)?.map(|lh| -lh))
}

/// Acceptance policy for split/merge sweeps. `Forced` is a test hook that
/// treats every well-formed proposal as accepted (H = +inf).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MovePolicy {
    Stochastic,
    Forced,
}

/// One-step 2-means-style bipartition of the listed points; random labels
/// when fewer than 4 points.
pub fn seed_subcluster_labels<R: Rng + ?Sized>(
    idx: &[usize],
    points: &[Point],
    rng: &mut R,
) -> Vec<u8> {
    if idx.len() < 4 {
        return idx.iter().map(|_| rng.random_range(0..2u8)).collect();
    }
    let a = &points[idx[0]];
    let b_pos = idx
        .iter()
        .map(|&i| (&points[i] - a).norm_squared())
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(&y.1))
        .map(|(p, _)| p)
        .unwrap_or(0);
    let b = &points[idx[b_pos]];
    idx.iter()
        .map(|&i| {
            let da = (&points[i] - a).norm_squared();
            let db = (&points[i] - b).norm_squared();
            u8::from(db < da)
        })
        .collect()
}

/// Bipartition of the listed points by a threshold on their projection onto
/// the dominant eigenvector of the sample covariance: every cut position
/// along the sorted projections is scored with the split ratio and the best
/// one wins. Returns None when the points carry no spread.
pub fn principal_axis_cut_labels(
    idx: &[usize],
    points: &[Point],
    dim: usize,
    family: Family,
    total: &WeightedAggregate,
    prior: &PriorHyperparams,
    alpha: f64,
) -> Result<Option<Vec<u8>>> {
    if idx.len() < 4 {
        return Ok(None);
    }
    let n = idx.len();
    let n_f = n as f64;
    let mut mean = Point::zeros(dim);
    for &i in idx {
        mean += &points[i];
    }
    mean /= n_f;
    let mut cov = nalgebra::DMatrix::<f64>::zeros(dim, dim);
    for &i in idx {
        let d = &points[i] - &mean;
        cov += &d * d.transpose();
    }
    cov /= n_f;
    let eig = cov.symmetric_eigen();
    let lead = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1));
    let (jmax, lead_val) = match lead {
        Some((j, v)) if *v > 0.0 => (j, *v),
        _ => return Ok(None),
    };
    let _ = lead_val;
    let v = eig.eigenvectors.column(jmax);
    let mut order: Vec<usize> = (0..n).collect();
    let proj: Vec<f64> = idx.iter().map(|&i| points[i].dot(&v)).collect();
    order.sort_by(|&a, &b| proj[a].total_cmp(&proj[b]));

    // suffix stats so each threshold's right side is O(1) to read off
    let mut suffix = vec![SufficientStats::zero(family, dim); n];
    let mut acc = SufficientStats::zero(family, dim);
    for pos in (0..n).rev() {
        acc.add_point(&points[idx[order[pos]]]);
        suffix[pos] = acc.clone();
    }
    let mut left = SufficientStats::zero(family, dim);
    let mut best = f64::NEG_INFINITY;
    let mut best_cut = 0usize;
    for c in 1..n {
        left.add_point(&points[idx[order[c - 1]]]);
        let cand = ClusterStats {
            total: total.clone(),
            sub: [
                WeightedAggregate {
                    stats: left.clone(),
                    count: c as f64,
                },
                WeightedAggregate {
                    stats: suffix[c].clone(),
                    count: (n - c) as f64,
                },
            ],
        };
        if let Some(lh) = split_log_hastings(prior, alpha, &cand)? {
            if lh > best {
                best = lh;
                best_cut = c;
            }
        }
    }
    if best_cut == 0 {
        return Ok(None);
    }
    let mut labels = vec![0u8; n];
    for pos in best_cut..n {
        labels[order[pos]] = 1;
    }
    Ok(Some(labels))
}

/// Per-batch inference workspace: the clusters, their historical aggregates
/// frozen at the batch timestamp, and the evolving assignment of the batch
/// points. Splits and merges mutate the cluster list; everything else leaves
/// K fixed.
pub struct BatchWorkspace<'a> {
    pub points: &'a [Point],
    pub t_now: f64,
    pub clusters: Vec<Cluster>,
    pub hist_aggs: Vec<ClusterStats>,
    pub assignment: Assignment,
    pub move_log: MoveLog,
    pub next_id: u64,
    pub family: Family,
    pub dim: usize,
    /// parent id -> child ids, for lineage tracking across moves.
    pub lineage: Vec<(u64, Vec<u64>)>,
}

impl<'a> BatchWorkspace<'a> {
    /// Effective aggregates: history through the previous batch plus the
    /// current batch at unit weight.
    pub fn effective_stats(&self) -> Result<Vec<ClusterStats>> {
        let cur = batch_stats(
            self.points,
            &self.assignment,
            self.clusters.len(),
            self.family,
            self.dim,
        );
        self.hist_aggs
            .iter()
            .zip(&cur)
            .map(|(h, c)| h.add(c))
            .collect()
    }

    fn draw_uniforms<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.points.len()).map(|_| rng.random::<f64>()).collect()
    }

    /// One restricted Gibbs iteration: weights, parameters, labels,
    /// subcluster labels. Does not change K.
    pub fn stochastic_iteration<R: Rng + ?Sized>(
        &mut self,
        prior: &PriorHyperparams,
        alpha: f64,
        rng: &mut R,
    ) -> Result<()> {
        let eff = self.effective_stats()?;
        let counts: Vec<f64> = eff.iter().map(|s| s.total.count).collect();
        let subcounts: Vec<[f64; 2]> = eff.iter().map(|s| [s.sub[0].count, s.sub[1].count]).collect();
        let (pis, sub_pis) = sample_weights(&counts, &subcounts, alpha, rng)?;

        let mut params = Vec::with_capacity(eff.len());
        let mut sub_params = Vec::with_capacity(eff.len());
        for s in &eff {
            params.push(Posterior::from_aggregate(prior, &s.total)?.sample_params(rng)?);
            sub_params.push([
                Posterior::from_aggregate(prior, &s.sub[0])?.sample_params(rng)?,
                Posterior::from_aggregate(prior, &s.sub[1])?.sample_params(rng)?,
            ]);
        }

        let log_w: Vec<f64> = pis.iter().map(|p| p.max(1e-300).ln()).collect();
        let us = self.draw_uniforms(rng);
        let z = sample_labels(self.points, &log_w, &params, &us)?;
        let sub_log_w: Vec<[f64; 2]> = sub_pis
            .iter()
            .map(|p| [p[0].max(1e-300).ln(), p[1].max(1e-300).ln()])
            .collect();
        let us2 = self.draw_uniforms(rng);
        let zbar = sample_subcluster_labels(self.points, &z, &sub_log_w, &sub_params, &us2)?;

        for (k, c) in self.clusters.iter_mut().enumerate() {
            c.weight = pis[k];
            c.sub[0].weight = sub_pis[k][0];
            c.sub[1].weight = sub_pis[k][1];
        }
        self.assignment = Assignment { z, zbar };
        Ok(())
    }

    /// The deterministic subroutine: Dirichlet-mode weights, then argmax of
    /// pi_k * predictive for labels and subcluster labels. Ties break to the
    /// lowest cluster id. Does not mutate the workspace.
    pub fn deterministic_pass(&self, prior: &PriorHyperparams) -> Result<Assignment> {
        let eff = self.effective_stats()?;
        deterministic_assignment(self.points, &self.clusters, &eff, prior)
    }

    /// Apply a deterministic pass and store its weights/labels.
    pub fn apply_deterministic_pass(&mut self, prior: &PriorHyperparams, alpha: f64) -> Result<()> {
        let assignment = self.deterministic_pass(prior)?;
        self.assignment = assignment;
        self.refresh_mode_weights(alpha)?;
        Ok(())
    }

    /// Re-seed the subcluster labels of any cluster whose batch points all
    /// landed on one side. A starved subcluster's weighted count decays
    /// toward zero, where the lnGamma term in the split ratio blows up and
    /// junk splits start getting accepted; a fresh farthest-point
    /// bipartition keeps both sides populated.
    pub fn reseed_degenerate_subclusters<R: Rng + ?Sized>(&mut self, rng: &mut R) -> bool {
        self.reseed_subclusters(rng, true)
    }

    /// Offer each cluster geometric bipartitions of its batch points (a
    /// principal-axis sign cut and a farthest-point cut) and adopt whichever
    /// scores a higher split ratio than the current subcluster labels. The
    /// sampled/refit sub-partition can sit in a local optimum where the
    /// bipartition is balanced but cuts across structure instead of along
    /// it, and split proposals never fire; the geometric candidates escape
    /// that without discarding a better-adapted partition when one exists.
    pub fn improve_subcluster_orientations<R: Rng + ?Sized>(
        &mut self,
        prior: &PriorHyperparams,
        alpha: f64,
        rng: &mut R,
    ) -> Result<bool> {
        // judge orientations on this batch's points alone: the historical
        // sub aggregates reflect whatever orientation was recorded before
        // and would drag both scores toward the status quo
        let cur = batch_stats(
            self.points,
            &self.assignment,
            self.clusters.len(),
            self.family,
            self.dim,
        );
        let mut changed = false;
        for k in 0..self.clusters.len() {
            let idx: Vec<usize> = (0..self.points.len())
                .filter(|&i| self.assignment.z[i] == k)
                .collect();
            if idx.len() < 4 {
                continue;
            }
            let score = |labels: &[u8]| -> Result<f64> {
                let mut cand = ClusterStats {
                    total: cur[k].total.clone(),
                    sub: [
                        WeightedAggregate {
                            stats: SufficientStats::zero(self.family, self.dim),
                            count: 0.0,
                        },
                        WeightedAggregate {
                            stats: SufficientStats::zero(self.family, self.dim),
                            count: 0.0,
                        },
                    ],
                };
                for (&i, &s) in idx.iter().zip(labels) {
                    let sub = &mut cand.sub[s as usize];
                    sub.stats.add_point(&self.points[i]);
                    sub.count += 1.0;
                }
                Ok(split_log_hastings(prior, alpha, &cand)?.unwrap_or(f64::NEG_INFINITY))
            };
            let current = split_log_hastings(prior, alpha, &cur[k])?
                .unwrap_or(f64::NEG_INFINITY);
            let mut candidates = Vec::with_capacity(2);
            if let Some(mut axis) = principal_axis_cut_labels(
                &idx,
                self.points,
                self.dim,
                self.family,
                &cur[k].total,
                prior,
                alpha,
            )? {
                self.align_seed_with_history(k, &idx, &mut axis);
                candidates.push(axis);
            }
            let mut far = seed_subcluster_labels(&idx, self.points, rng);
            self.align_seed_with_history(k, &idx, &mut far);
            candidates.push(far);
            let mut best = current;
            let mut best_labels: Option<Vec<u8>> = None;
            for cand in candidates {
                let s = score(&cand)?;
                if s > best {
                    best = s;
                    best_labels = Some(cand);
                }
            }
            if let Some(labels) = best_labels {
                for (&i, &s) in idx.iter().zip(&labels) {
                    self.assignment.zbar[i] = s;
                }
                changed = true;
            }
        }
        Ok(changed)
    }

    /// The geometric seed labels its two sides arbitrarily; if the side
    /// identity alternated between batches, both blobs would smear into
    /// both sub-histories and the aggregates would never separate. Flip the
    /// seed when the crossed pairing with the historical sub means is the
    /// closer one.
    fn align_seed_with_history(&self, k: usize, idx: &[usize], seeded: &mut [u8]) {
        let hist = &self.hist_aggs[k];
        if hist.sub[0].count <= 0.0 || hist.sub[1].count <= 0.0 {
            return;
        }
        let h0 = hist.sub[0].stats.first_moment() / hist.sub[0].count;
        let h1 = hist.sub[1].stats.first_moment() / hist.sub[1].count;
        let mut sums = [Point::zeros(self.dim), Point::zeros(self.dim)];
        let mut counts = [0.0f64; 2];
        for (&i, &s) in idx.iter().zip(seeded.iter()) {
            sums[s as usize] += &self.points[i];
            counts[s as usize] += 1.0;
        }
        if counts[0] == 0.0 || counts[1] == 0.0 {
            return;
        }
        let m0 = &sums[0] / counts[0];
        let m1 = &sums[1] / counts[1];
        let straight = (&m0 - &h0).norm() + (&m1 - &h1).norm();
        let crossed = (&m0 - &h1).norm() + (&m1 - &h0).norm();
        if crossed < straight {
            for s in seeded.iter_mut() {
                *s ^= 1;
            }
        }
    }

    fn reseed_subclusters<R: Rng + ?Sized>(&mut self, rng: &mut R, only_degenerate: bool) -> bool {
        let mut changed = false;
        for k in 0..self.clusters.len() {
            let idx: Vec<usize> = (0..self.points.len())
                .filter(|&i| self.assignment.z[i] == k)
                .collect();
            if idx.len() < 2 {
                continue;
            }
            if only_degenerate {
                let c0 = idx.iter().filter(|&&i| self.assignment.zbar[i] == 0).count();
                if c0 != 0 && c0 != idx.len() {
                    continue;
                }
            }
            let mut seeded = seed_subcluster_labels(&idx, self.points, rng);
            self.align_seed_with_history(k, &idx, &mut seeded);
            for (&i, &s) in idx.iter().zip(&seeded) {
                self.assignment.zbar[i] = s;
            }
            changed = true;
        }
        changed
    }

    /// Recompute cluster and subcluster weights by the Dirichlet-mode rule
    /// from the current effective counts.
    pub fn refresh_mode_weights(&mut self, alpha: f64) -> Result<()> {
        let eff = self.effective_stats()?;
        let counts: Vec<f64> = eff.iter().map(|s| s.total.count).collect();
        let pis = dirichlet_mode(&counts);
        for (k, c) in self.clusters.iter_mut().enumerate() {
            c.weight = pis[k];
            let sub_mode = dirichlet_mode(&[
                eff[k].sub[0].count + alpha / 2.0,
                eff[k].sub[1].count + alpha / 2.0,
            ]);
            c.sub[0].weight = sub_mode[0];
            c.sub[1].weight = sub_mode[1];
        }
        Ok(())
    }

    /// Propose splitting every live cluster; accept with min(1, H_split).
    /// An accepted split replaces the cluster by two children whose cluster
    /// histories are the parent's subcluster histories; the children's own
    /// subcluster histories start empty and are seeded from the current
    /// batch by a one-step bipartition.
    pub fn attempt_splits<R: Rng + ?Sized>(
        &mut self,
        prior: &PriorHyperparams,
        alpha: f64,
        rng: &mut R,
        policy: MovePolicy,
    ) -> Result<bool> {
        let k_entry = self.clusters.len();
        let mut any = false;
        for k in 0..k_entry {
            // only clusters with batch support propose splits: a decaying
            // cluster's fractional counts sit where lnGamma turns positive
            // and would make junk splits look favorable
            let cur = batch_stats(
                self.points,
                &self.assignment,
                self.clusters.len(),
                self.family,
                self.dim,
            );
            if cur[k].total.count == 0.0 {
                continue;
            }
            let eff = self.effective_stats()?;
            let lh = split_log_hastings(prior, alpha, &eff[k])?;
            let parent_id = self.clusters[k].id;
            let accepted = match (policy, lh) {
                (_, None) => {
                    self.move_log.push(MoveRecord {
                        kind: MoveKind::Split,
                        parents: vec![parent_id],
                        children: vec![],
                        log_hastings: None,
                        accepted: false,
                        reason: Some("subcluster count below floor".into()),
                    });
                    continue;
                }
                (MovePolicy::Forced, Some(_)) => true,
                (MovePolicy::Stochastic, Some(lh)) => rng.random::<f64>().ln() < lh,
            };
            if !accepted {
                self.move_log.push(MoveRecord {
                    kind: MoveKind::Split,
                    parents: vec![parent_id],
                    children: vec![],
                    log_hastings: lh,
                    accepted: false,
                    reason: None,
                });
                continue;
            }
            let children = self.apply_split(k, rng)?;
            self.move_log.push(MoveRecord {
                kind: MoveKind::Split,
                parents: vec![parent_id],
                children: children.to_vec(),
                log_hastings: lh,
                accepted: true,
                reason: None,
            });
            self.lineage.push((parent_id, children.to_vec()));
            any = true;
        }
        Ok(any)
    }

    fn apply_split<R: Rng + ?Sized>(&mut self, k: usize, rng: &mut R) -> Result<[u64; 2]> {
        let parent = self.clusters[k].clone();
        let parent_hist = self.hist_aggs[k].clone();
        let ids = [self.next_id, self.next_id + 1];
        self.next_id += 2;

        let zero = || WeightedAggregate {
            stats: SufficientStats::zero(self.family, self.dim),
            count: 0.0,
        };
        let mut children = Vec::with_capacity(2);
        for j in 0..2 {
            children.push(Cluster {
                id: ids[j],
                weight: parent.weight * parent.sub[j].weight,
                history: parent.sub[j].history.clone(),
                sub: [
                    Subcluster {
                        weight: 0.5,
                        history: HistoryRecord::new(self.family, self.dim),
                    },
                    Subcluster {
                        weight: 0.5,
                        history: HistoryRecord::new(self.family, self.dim),
                    },
                ],
            });
        }
        let child_hist = |j: usize| ClusterStats {
            total: parent_hist.sub[j].clone(),
            sub: [zero(), zero()],
        };

        // current-batch points of each child, in point order
        let mut child_points: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        for (i, (&z, &zb)) in self.assignment.z.iter().zip(&self.assignment.zbar).enumerate() {
            if z == k {
                child_points[zb as usize].push(i);
            }
        }

        // child 0 takes the parent's slot, child 1 goes at the end
        let c1_index = self.clusters.len();
        let [c0, c1] = <[Cluster; 2]>::try_from(children).expect("two children");
        self.clusters[k] = c0;
        self.clusters.push(c1);
        self.hist_aggs[k] = child_hist(0);
        self.hist_aggs.push(child_hist(1));

        for j in 0..2 {
            let new_index = if j == 0 { k } else { c1_index };
            let seeded = seed_subcluster_labels(&child_points[j], self.points, rng);
            for (&i, &zb) in child_points[j].iter().zip(&seeded) {
                self.assignment.z[i] = new_index;
                self.assignment.zbar[i] = zb;
            }
        }
        Ok(ids)
    }

    /// Propose one random disjoint pairing of clusters; accept each merge
    /// with min(1, H_merge). A merged cluster's history is the timestamp-wise
    /// sum of its parents' histories; its subcluster histories are the
    /// parents' cluster histories.
    pub fn attempt_merges<R: Rng + ?Sized>(
        &mut self,
        prior: &PriorHyperparams,
        alpha: f64,
        rng: &mut R,
        policy: MovePolicy,
    ) -> Result<bool> {
        if self.clusters.len() < 2 {
            return Ok(false);
        }
        let mut order: Vec<usize> = (0..self.clusters.len()).collect();
        order.shuffle(rng);
        let eff = self.effective_stats()?;

        let mut merges: Vec<(usize, usize, f64)> = Vec::new();
        for pair in order.chunks_exact(2) {
            let (a, b) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
            let lh = merge_log_hastings(prior, alpha, &eff[a], &eff[b])?;
            let ids = vec![self.clusters[a].id, self.clusters[b].id];
            let accepted = match (policy, lh) {
                (_, None) => {
                    self.move_log.push(MoveRecord {
                        kind: MoveKind::Merge,
                        parents: ids,
                        children: vec![],
                        log_hastings: None,
                        accepted: false,
                        reason: Some("cluster count below floor".into()),
                    });
                    continue;
                }
                (MovePolicy::Forced, Some(_)) => true,
                (MovePolicy::Stochastic, Some(lh)) => rng.random::<f64>().ln() < lh,
            };
            if accepted {
                merges.push((a, b, lh.unwrap_or(f64::INFINITY)));
            } else {
                self.move_log.push(MoveRecord {
                    kind: MoveKind::Merge,
                    parents: ids,
                    children: vec![],
                    log_hastings: lh,
                    accepted: false,
                    reason: None,
                });
            }
        }
        if merges.is_empty() {
            return Ok(false);
        }

        // rebuild the cluster list: survivors keep order, merged clusters
        // are appended with fresh ids
        let k_old = self.clusters.len();
        let mut remap: Vec<Option<usize>> = vec![None; k_old];
        let mut merged_of: Vec<Option<(usize, u8)>> = vec![None; k_old];
        let mut new_clusters: Vec<Cluster> = Vec::new();
        let mut new_hist: Vec<ClusterStats> = Vec::new();

        let in_merge: std::collections::HashSet<usize> =
            merges.iter().flat_map(|&(a, b, _)| [a, b]).collect();
        for k in 0..k_old {
            if !in_merge.contains(&k) {
                remap[k] = Some(new_clusters.len());
                new_clusters.push(self.clusters[k].clone());
                new_hist.push(self.hist_aggs[k].clone());
            }
        }
        for &(a, b, lh) in &merges {
            let idx = new_clusters.len();
            let ca = &self.clusters[a];
            let cb = &self.clusters[b];
            let id = self.next_id;
            self.next_id += 1;
            let ha = &self.hist_aggs[a];
            let hb = &self.hist_aggs[b];
            let total_count = (ha.total.count + hb.total.count).max(MODE_DELTA);
            new_clusters.push(Cluster {
                id,
                weight: ca.weight + cb.weight,
                history: HistoryRecord::merge(&ca.history, &cb.history)?,
                sub: [
                    Subcluster {
                        weight: ha.total.count.max(MODE_DELTA) / total_count,
                        history: ca.history.clone(),
                    },
                    Subcluster {
                        weight: hb.total.count.max(MODE_DELTA) / total_count,
                        history: cb.history.clone(),
                    },
                ],
            });
            new_hist.push(ClusterStats {
                total: WeightedAggregate {
                    stats: ha.total.stats.add(&hb.total.stats)?,
                    count: ha.total.count + hb.total.count,
                },
                sub: [ha.total.clone(), hb.total.clone()],
            });
            merged_of[a] = Some((idx, 0));
            merged_of[b] = Some((idx, 1));
            self.move_log.push(MoveRecord {
                kind: MoveKind::Merge,
                parents: vec![ca.id, cb.id],
                children: vec![id],
                log_hastings: Some(lh),
                accepted: true,
                reason: None,
            });
            self.lineage.push((ca.id, vec![id]));
            self.lineage.push((cb.id, vec![id]));
        }

        for i in 0..self.assignment.z.len() {
            let old = self.assignment.z[i];
            if let Some(new_k) = remap[old] {
                self.assignment.z[i] = new_k;
            } else if let Some((new_k, side)) = merged_of[old] {
                self.assignment.z[i] = new_k;
                self.assignment.zbar[i] = side;
            }
        }
        self.clusters = new_clusters;
        self.hist_aggs = new_hist;
        Ok(true)
    }
}

/// Mode/argmax assignment of points to clusters under predictive posteriors.
pub fn deterministic_assignment(
    points: &[Point],
    clusters: &[Cluster],
    stats: &[ClusterStats],
    prior: &PriorHyperparams,
) -> Result<Assignment> {
    if clusters.is_empty() {
        return Err(Error::State("no clusters".into()));
    }
    let counts: Vec<f64> = stats.iter().map(|s| s.total.count).collect();
    let pis = dirichlet_mode(&counts);
    let mut posts = Vec::with_capacity(clusters.len());
    let mut sub_posts = Vec::with_capacity(clusters.len());
    let mut sub_log_w = Vec::with_capacity(clusters.len());
    for (k, s) in stats.iter().enumerate() {
        posts.push(Posterior::from_aggregate(prior, &s.total)?);
        sub_posts.push([
            Posterior::from_aggregate(prior, &s.sub[0])?,
            Posterior::from_aggregate(prior, &s.sub[1])?,
        ]);
        let sm = dirichlet_mode(&[s.sub[0].count + 1e-9, s.sub[1].count + 1e-9]);
        let _ = k;
        sub_log_w.push([sm[0].max(1e-300).ln(), sm[1].max(1e-300).ln()]);
    }
    let log_w: Vec<f64> = pis.iter().map(|p| p.max(1e-300).ln()).collect();
    let ids: Vec<u64> = clusters.iter().map(|c| c.id).collect();

    let per_point: Vec<Result<(usize, u8)>> = points
        .par_iter()
        .map(|x| {
            let mut best: Option<(f64, u64, usize)> = None;
            for k in 0..ids.len() {
                let score = log_w[k] + posts[k].log_predictive(x)?;
                let better = match best {
                    None => true,
                    Some((bs, bid, _)) => score > bs || (score == bs && ids[k] < bid),
                };
                if better {
                    best = Some((score, ids[k], k));
                }
            }
            let (_, _, k) = best.ok_or_else(|| Error::State("no clusters".into()))?;
            let s0 = sub_log_w[k][0] + sub_posts[k][0].log_predictive(x)?;
            let s1 = sub_log_w[k][1] + sub_posts[k][1].log_predictive(x)?;
            let j = u8::from(s1 > s0);
            Ok((k, j))
        })
        .collect();

    let mut z = Vec::with_capacity(points.len());
    let mut zbar = Vec::with_capacity(points.len());
    for r in per_point {
        let (k, j) = r?;
        z.push(k);
        zbar.push(j);
    }
    Ok(Assignment { z, zbar })
}
