//! Top-level streaming driver: per-batch predict-then-update loop,
//! T-iteration policy, first-batch convergence, history bookkeeping,
//! retirement of decayed clusters, and versioned model snapshots.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::family::{Family, Point, PriorHyperparams};
use crate::history::max_history_len;
use crate::sampler::{
    batch_stats, deterministic_assignment, seed_subcluster_labels, Assignment, BatchWorkspace,
    Cluster, ClusterStats, MoveLog, MovePolicy, Posterior,
};

const SNAPSHOT_MAGIC: &[u8; 4] = b"SDPM";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FirstBatchPolicy {
    /// Run the first batch to convergence instead of T iterations.
    pub run_to_convergence: bool,
    /// Converged when no split/merge accepted for this many consecutive
    /// iterations and the label-change fraction is below the threshold.
    pub quiet_iterations: usize,
    pub label_change_fraction: f64,
    /// Floor before the convergence check may fire; early sweeps can look
    /// quiet while the split cascade is still warming up.
    pub min_iterations: usize,
    pub max_iterations: usize,
}

impl Default for FirstBatchPolicy {
    fn default() -> Self {
        FirstBatchPolicy {
            run_to_convergence: true,
            quiet_iterations: 10,
            label_change_fraction: 0.01,
            min_iterations: 30,
            max_iterations: 200,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EngineConfig {
    pub prior: PriorHyperparams,
    pub alpha: f64,
    pub lambda: f64,
    pub epsilon: f64,
    /// Restricted Gibbs iterations per warm batch.
    pub t_iterations: usize,
    pub seed: u64,
    pub first_batch: FirstBatchPolicy,
    /// When false, the final deterministic pass is replaced by one extra
    /// stochastic iteration (ablation switch).
    pub deterministic_pass: bool,
}

impl EngineConfig {
    pub fn new(prior: PriorHyperparams, alpha: f64, lambda: f64, epsilon: f64, seed: u64) -> Self {
        EngineConfig {
            prior,
            alpha,
            lambda,
            epsilon,
            t_iterations: 1,
            seed,
            first_batch: FirstBatchPolicy::default(),
            deterministic_pass: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        if self.alpha <= 0.0 {
            return Err(Error::Config("alpha must be positive".into()));
        }
        if self.lambda <= 0.0 {
            return Err(Error::Config("lambda must be positive".into()));
        }
        if self.epsilon <= 0.0 || self.epsilon >= 1.0 {
            return Err(Error::Config("epsilon must lie in (0,1)".into()));
        }
        if self.t_iterations == 0 {
            return Err(Error::Config("T must be at least 1".into()));
        }
        Ok(())
    }
}

/// One unit of stream ingestion.
#[derive(Clone, Debug)]
pub struct Batch {
    /// Defaults to consecutive integers 1,2,3,... when absent.
    pub timestamp: Option<f64>,
    pub points: Vec<Point>,
    pub truth: Option<Vec<u64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelState {
    pub config: EngineConfig,
    pub clusters: Vec<Cluster>,
    pub t_now: f64,
    pub batch_index: u64,
    pub next_cluster_id: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BatchResult {
    pub batch_index: u64,
    pub timestamp: f64,
    pub k: usize,
    /// Cluster ids predicted before the model absorbed the batch; None for
    /// the cold first batch.
    pub predicted: Option<Vec<u64>>,
    /// Cluster ids after inference on this batch.
    pub final_labels: Vec<u64>,
    pub moves: MoveLog,
    /// parent id -> child ids for splits/merges in this batch.
    pub lineage: Vec<(u64, Vec<u64>)>,
    pub wall_ms: f64,
}

fn mix_seed(seed: u64, batch_index: u64) -> u64 {
    // splitmix64 over the pair
    let mut z = seed
        .wrapping_add(batch_index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl ModelState {
    pub fn new(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        Ok(ModelState {
            config,
            clusters: Vec::new(),
            t_now: 0.0,
            batch_index: 0,
            next_cluster_id: 0,
        })
    }

    pub fn family(&self) -> Family {
        self.config.prior.family()
    }

    pub fn dim(&self) -> usize {
        self.config.prior.dim()
    }

    pub fn is_cold(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    fn batch_timestamp(&self, batch: &Batch) -> Result<f64> {
        let t = batch
            .timestamp
            .unwrap_or_else(|| (self.batch_index + 1) as f64);
        if !self.is_cold() && t <= self.t_now {
            return Err(Error::Input(format!(
                "batch timestamp {t} not after model time {}",
                self.t_now
            )));
        }
        Ok(t)
    }

    fn check_points(&self, points: &[Point]) -> Result<()> {
        let d = self.dim();
        if points.iter().any(|p| p.len() != d) {
            return Err(Error::Input(format!(
                "point dimension does not match model dimension {d}"
            )));
        }
        Ok(())
    }

    /// Historical aggregates (clusters and subclusters) at time `t`.
    fn historical_stats(&self, t: f64) -> Result<Vec<ClusterStats>> {
        let lambda = self.config.lambda;
        self.clusters
            .iter()
            .map(|c| {
                Ok(ClusterStats {
                    total: c.history.weighted_aggregate(t, lambda)?,
                    sub: [
                        c.sub[0].history.weighted_aggregate(t, lambda)?,
                        c.sub[1].history.weighted_aggregate(t, lambda)?,
                    ],
                })
            })
            .collect()
    }

    /// Predict-then-update: label the batch under the current weighted
    /// posteriors at the batch timestamp without touching the model.
    /// Returns None for a cold model.
    pub fn predict_labels(&self, batch: &Batch) -> Result<Option<Vec<u64>>> {
        if self.is_cold() {
            return Ok(None);
        }
        self.check_points(&batch.points)?;
        let t = batch
            .timestamp
            .unwrap_or_else(|| (self.batch_index + 1) as f64);
        let stats = self.historical_stats(t)?;
        let assignment =
            deterministic_assignment(&batch.points, &self.clusters, &stats, &self.config.prior)?;
        Ok(Some(
            assignment.z.iter().map(|&k| self.clusters[k].id).collect(),
        ))
    }

    /// Absorb one batch: run the restricted sampler with split/merge moves,
    /// finish with the deterministic pass (or its ablation), then fold the
    /// batch statistics into the damped histories.
    pub fn update_with_batch(&mut self, batch: &Batch) -> Result<BatchResult> {
        let start = std::time::Instant::now();
        self.check_points(&batch.points)?;
        if batch.points.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let t = self.batch_timestamp(batch)?;
        let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(self.config.seed, self.batch_index));
        let family = self.family();
        let dim = self.dim();
        let cold = self.is_cold();

        let (clusters, hist_aggs, assignment) = if cold {
            let c = Cluster::new(self.next_cluster_id, family, dim);
            self.next_cluster_id += 1;
            let n = batch.points.len();
            let idx: Vec<usize> = (0..n).collect();
            let zbar = seed_subcluster_labels(&idx, &batch.points, &mut rng);
            (
                vec![c],
                vec![ClusterStats::zero(family, dim)],
                Assignment {
                    z: vec![0; n],
                    zbar,
                },
            )
        } else {
            let hist = self.historical_stats(t)?;
            let assignment = deterministic_assignment(
                &batch.points,
                &self.clusters,
                &hist,
                &self.config.prior,
            )?;
            (std::mem::take(&mut self.clusters), hist, assignment)
        };

        let mut ws = BatchWorkspace {
            points: &batch.points,
            t_now: t,
            clusters,
            hist_aggs,
            assignment,
            move_log: Vec::new(),
            next_id: self.next_cluster_id,
            family,
            dim,
            lineage: Vec::new(),
        };
        let prior = self.config.prior.clone();
        let alpha = self.config.alpha;
        ws.reseed_degenerate_subclusters(&mut rng);

        if cold && self.config.first_batch.run_to_convergence {
            let policy = self.config.first_batch.clone();
            let mut quiet = 0usize;
            let mut prev_ids: Option<Vec<u64>> = None;
            for iter in 0..policy.max_iterations {
                ws.stochastic_iteration(&prior, alpha, &mut rng)?;
                ws.improve_subcluster_orientations(&prior, alpha, &mut rng)?;
                let mut moved =
                    ws.attempt_splits(&prior, alpha, &mut rng, MovePolicy::Stochastic)?;
                moved |= ws.attempt_merges(&prior, alpha, &mut rng, MovePolicy::Stochastic)?;
                quiet = if moved { 0 } else { quiet + 1 };
                let ids: Vec<u64> = ws.assignment.z.iter().map(|&k| ws.clusters[k].id).collect();
                let changed = prev_ids
                    .as_ref()
                    .map(|prev| {
                        prev.iter().zip(&ids).filter(|(a, b)| a != b).count() as f64
                            / ids.len() as f64
                    })
                    .unwrap_or(1.0);
                prev_ids = Some(ids);
                if iter + 1 >= policy.min_iterations
                    && quiet >= policy.quiet_iterations
                    && changed < policy.label_change_fraction
                {
                    break;
                }
            }
        } else {
            for _ in 0..self.config.t_iterations {
                ws.stochastic_iteration(&prior, alpha, &mut rng)?;
                ws.improve_subcluster_orientations(&prior, alpha, &mut rng)?;
                ws.attempt_splits(&prior, alpha, &mut rng, MovePolicy::Stochastic)?;
                ws.attempt_merges(&prior, alpha, &mut rng, MovePolicy::Stochastic)?;
            }
        }

        if self.config.deterministic_pass {
            ws.apply_deterministic_pass(&prior, alpha)?;
        } else {
            ws.stochastic_iteration(&prior, alpha, &mut rng)?;
        }
        ws.attempt_splits(&prior, alpha, &mut rng, MovePolicy::Stochastic)?;
        ws.attempt_merges(&prior, alpha, &mut rng, MovePolicy::Stochastic)?;
        // what goes into the histories here is what the next batch's split
        // proposals are judged on, so pick the better sub-orientation first
        ws.improve_subcluster_orientations(&prior, alpha, &mut rng)?;
        ws.reseed_degenerate_subclusters(&mut rng);
        ws.refresh_mode_weights(alpha)?;

        let final_labels: Vec<u64> = ws.assignment.z.iter().map(|&k| ws.clusters[k].id).collect();

        // bookkeeping: fold the batch into the damped histories
        let cur = batch_stats(&batch.points, &ws.assignment, ws.clusters.len(), family, dim);
        let lambda = self.config.lambda;
        let eps = self.config.epsilon;
        for (c, s) in ws.clusters.iter_mut().zip(&cur) {
            if s.total.count > 0.0 {
                c.history
                    .append_and_prune(t, s.total.stats.clone(), s.total.count, lambda, eps)?;
                for j in 0..2 {
                    c.sub[j].history.append_and_prune(
                        t,
                        s.sub[j].stats.clone(),
                        s.sub[j].count,
                        lambda,
                        eps,
                    )?;
                }
            } else {
                c.history.prune(t, lambda, eps);
                c.sub[0].history.prune(t, lambda, eps);
                c.sub[1].history.prune(t, lambda, eps);
            }
        }

        // retire clusters whose decayed mass has vanished
        let retirement_floor = 10.0 * eps;
        let mut kept = Vec::with_capacity(ws.clusters.len());
        for c in ws.clusters.into_iter() {
            let n = c.history.weighted_aggregate(t, lambda)?.count;
            if n >= retirement_floor {
                kept.push(c);
            }
        }

        self.clusters = kept;
        self.next_cluster_id = ws.next_id;
        self.t_now = t;
        self.batch_index += 1;

        Ok(BatchResult {
            batch_index: self.batch_index - 1,
            timestamp: t,
            k: self.clusters.len(),
            predicted: None,
            final_labels,
            moves: ws.move_log,
            lineage: ws.lineage,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Upper bound on history entries per record under the current config.
    pub fn history_len_bound(&self) -> usize {
        max_history_len(self.config.lambda, self.config.epsilon)
    }

    /// Predictive posterior of a cluster at the current model time; used by
    /// downstream consumers that need scores rather than labels.
    pub fn cluster_posterior(&self, index: usize) -> Result<Posterior> {
        let c = self
            .clusters
            .get(index)
            .ok_or_else(|| Error::State("cluster index out of range".into()))?;
        let agg = c.history.weighted_aggregate(self.t_now, self.config.lambda)?;
        Posterior::from_aggregate(&self.config.prior, &agg)
    }

    /// Versioned, checksummed binary snapshot.
    pub fn snapshot(&self) -> Result<Vec<u8>> {
        let payload = serde_json::to_vec(self)
            .map_err(|e| Error::Format(format!("snapshot encode: {e}")))?;
        let mut out = Vec::with_capacity(payload.len() + 48);
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        let digest = Sha256::digest(&payload);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn restore(bytes: &[u8]) -> Result<ModelState> {
        if bytes.len() < 4 + 4 + 8 + 32 {
            return Err(Error::Format("snapshot truncated".into()));
        }
        if &bytes[0..4] != SNAPSHOT_MAGIC {
            return Err(Error::Format("bad snapshot magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != SNAPSHOT_VERSION {
            return Err(Error::Format(format!("unsupported snapshot version {version}")));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        if bytes.len() != 16 + len + 32 {
            return Err(Error::Format("snapshot length mismatch".into()));
        }
        let payload = &bytes[16..16 + len];
        let digest = Sha256::digest(payload);
        if digest.as_slice() != &bytes[16 + len..] {
            return Err(Error::Format("snapshot checksum mismatch".into()));
        }
        let state: ModelState = serde_json::from_slice(payload)
            .map_err(|e| Error::Format(format!("snapshot decode: {e}")))?;
        state.config.validate()?;
        Ok(state)
    }
}

/// Drive a full stream: for each batch, predict, update, and hand the
/// combined result to the sink in order.
pub fn run_stream<I, F>(state: &mut ModelState, batches: I, mut sink: F) -> Result<Vec<BatchResult>>
where
    I: IntoIterator<Item = Batch>,
    F: FnMut(&BatchResult) -> Result<()>,
{
    let mut results = Vec::new();
    for batch in batches {
        let predicted = state.predict_labels(&batch)?;
        let mut result = state.update_with_batch(&batch)?;
        result.predicted = predicted;
        sink(&result)?;
        results.push(result);
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dvector, DMatrix};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian_config(seed: u64) -> EngineConfig {
        EngineConfig::new(
            PriorHyperparams::Niw {
                kappa: 1.0,
                mean: dvector![0.0, 0.0],
                nu: 4.0,
                psi: DMatrix::identity(2, 2) * 1.02,
            },
            1.0,
            1.0,
            1e-8,
            seed,
        )
    }

    fn blob_batch(centers: &[[f64; 2]], per: usize, seed: u64, t: Option<f64>) -> Batch {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut points = Vec::new();
        let mut truth = Vec::new();
        for (ci, c) in centers.iter().enumerate() {
            for _ in 0..per {
                points.push(dvector![
                    c[0] + rng.sample::<f64, _>(StandardNormal),
                    c[1] + rng.sample::<f64, _>(StandardNormal)
                ]);
                truth.push(ci as u64);
            }
        }
        Batch {
            timestamp: t,
            points,
            truth: Some(truth),
        }
    }

    #[test]
    fn cold_model_predicts_none() {
        let state = ModelState::new(gaussian_config(1)).unwrap();
        let b = blob_batch(&[[0.0, 0.0]], 10, 1, None);
        assert!(state.predict_labels(&b).unwrap().is_none());
    }

    #[test]
    fn single_cluster_prediction() {
        let mut state = ModelState::new(gaussian_config(2)).unwrap();
        state
            .update_with_batch(&blob_batch(&[[0.0, 0.0]], 200, 3, None))
            .unwrap();
        assert_eq!(state.k(), 1);
        let id = state.clusters[0].id;
        let pred = state
            .predict_labels(&blob_batch(&[[0.0, 0.0]], 50, 4, None))
            .unwrap()
            .unwrap();
        assert!(pred.iter().all(|&p| p == id));
    }

    #[test]
    fn stationary_single_gaussian_keeps_k1() {
        let mut fails = 0;
        let runs = 20;
        for seed in 0..runs {
            let mut state = ModelState::new(gaussian_config(seed)).unwrap();
            let mut stable = true;
            for b in 0..30 {
                let batch = blob_batch(&[[0.0, 0.0]], 300, seed * 1000 + b, None);
                state.update_with_batch(&batch).unwrap();
                if b >= 2 && state.k() != 1 {
                    stable = false;
                }
            }
            if !stable {
                fails += 1;
            }
        }
        assert!(fails <= 1, "{fails}/{runs} runs left K=1");
    }

    #[test]
    fn two_separated_clusters_found_on_first_batch() {
        let mut state = ModelState::new(gaussian_config(7)).unwrap();
        let batch = blob_batch(&[[-100.0, 0.0], [100.0, 0.0]], 500, 8, None);
        state.update_with_batch(&batch).unwrap();
        assert_eq!(state.k(), 2);
    }

    #[test]
    fn non_monotone_timestamp_rejected() {
        let mut state = ModelState::new(gaussian_config(9)).unwrap();
        state
            .update_with_batch(&blob_batch(&[[0.0, 0.0]], 50, 1, Some(2.0)))
            .unwrap();
        let err = state.update_with_batch(&blob_batch(&[[0.0, 0.0]], 50, 2, Some(2.0)));
        assert!(matches!(err, Err(Error::Input(_))));
    }

    #[test]
    fn empty_stream_is_noop() {
        let mut state = ModelState::new(gaussian_config(10)).unwrap();
        let results = run_stream(&mut state, Vec::<Batch>::new(), |_| Ok(())).unwrap();
        assert!(results.is_empty());
        assert!(state.is_cold());
    }

    #[test]
    fn snapshot_round_trip_cold() {
        let state = ModelState::new(gaussian_config(11)).unwrap();
        let bytes = state.snapshot().unwrap();
        let restored = ModelState::restore(&bytes).unwrap();
        assert_eq!(restored.batch_index, 0);
        assert!(restored.is_cold());
    }

    #[test]
    fn snapshot_corruption_detected() {
        let state = ModelState::new(gaussian_config(12)).unwrap();
        let mut bytes = state.snapshot().unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xFF;
        assert!(matches!(ModelState::restore(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn snapshot_resume_is_bit_identical() {
        let make_batches = |n: u64| -> Vec<Batch> {
            (0..n)
                .map(|b| blob_batch(&[[-10.0, 0.0], [10.0, 0.0]], 100, 500 + b, None))
                .collect()
        };
        // uninterrupted
        let mut s1 = ModelState::new(gaussian_config(13)).unwrap();
        let mut all1 = Vec::new();
        for b in make_batches(12) {
            all1.push(s1.update_with_batch(&b).unwrap().final_labels);
        }
        // interrupted after 6 batches
        let mut s2 = ModelState::new(gaussian_config(13)).unwrap();
        let batches = make_batches(12);
        for b in &batches[..6] {
            s2.update_with_batch(b).unwrap();
        }
        let bytes = s2.snapshot().unwrap();
        let mut s3 = ModelState::restore(&bytes).unwrap();
        let mut all2 = Vec::new();
        for b in &batches[6..] {
            all2.push(s3.update_with_batch(b).unwrap().final_labels);
        }
        assert_eq!(all1[6..].to_vec(), all2);
        assert_eq!(s1.t_now, s3.t_now);
        assert_eq!(s1.k(), s3.k());
    }

    #[test]
    fn history_lengths_stay_bounded() {
        let mut state = ModelState::new(gaussian_config(14)).unwrap();
        for b in 0..60 {
            let batch = blob_batch(&[[0.0, 0.0]], 100, 900 + b, None);
            state.update_with_batch(&batch).unwrap();
            let bound = state.history_len_bound();
            for c in &state.clusters {
                assert!(c.history.len() <= bound);
                assert!(c.sub[0].history.len() <= bound);
                assert!(c.sub[1].history.len() <= bound);
            }
        }
    }

    #[test]
    fn decayed_cluster_reassignment_under_drift() {
        // cluster A at (-5,0) seen early then silent; cluster B at (5,0)
        // keeps arriving. A probe near the midpoint, slightly A-side, should
        // eventually go to the fresher B as A's mass decays.
        let cfg = gaussian_config(15);
        let mut state = ModelState::new(cfg).unwrap();
        state
            .update_with_batch(&blob_batch(&[[-5.0, 0.0], [5.0, 0.0]], 300, 1, None))
            .unwrap();
        assert_eq!(state.k(), 2);
        let probe = Batch {
            timestamp: None,
            points: vec![dvector![-0.4, 0.0]],
            truth: None,
        };
        let early = state.predict_labels(&probe).unwrap().unwrap()[0];
        for b in 0..12 {
            state
                .update_with_batch(&blob_batch(&[[5.0, 0.0]], 300, 50 + b, None))
                .unwrap();
        }
        let probe = Batch {
            timestamp: None,
            points: vec![dvector![-0.4, 0.0]],
            truth: None,
        };
        let late = state.predict_labels(&probe).unwrap().unwrap()[0];
        assert_ne!(early, late, "probe should move to the fresher cluster");
    }

    #[test]
    fn label_consistency_on_stationary_stream() {
        let mut state = ModelState::new(gaussian_config(16)).unwrap();
        for b in 0..10 {
            state
                .update_with_batch(&blob_batch(&[[-20.0, 0.0], [20.0, 0.0]], 200, 300 + b, None))
                .unwrap();
        }
        let probe = Batch {
            timestamp: None,
            points: vec![dvector![20.0, 0.0]],
            truth: None,
        };
        let first = state.predict_labels(&probe).unwrap().unwrap()[0];
        for b in 0..10 {
            state
                .update_with_batch(&blob_batch(&[[-20.0, 0.0], [20.0, 0.0]], 200, 400 + b, None))
                .unwrap();
            let again = state.predict_labels(&probe).unwrap().unwrap()[0];
            assert_eq!(first, again, "batch {b}");
        }
    }
}
