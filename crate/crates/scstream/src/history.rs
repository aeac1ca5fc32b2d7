//! Damped-window history records: per-cluster finite lists of per-batch
//! sufficient statistics, pruned by the kernel threshold and reduced to
//! time-weighted aggregates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::{Family, SufficientStats};

/// 2^{-lambda (t_now - t_b)}; 1 at zero lag.
pub fn kernel_weight(t_now: f64, t_b: f64, lambda: f64) -> Result<f64> {
    if t_now < t_b {
        return Err(Error::Input(format!(
            "non-monotone timestamps: now={t_now} < entry={t_b}"
        )));
    }
    Ok((-lambda * (t_now - t_b)).exp2())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub t: f64,
    pub stats: SufficientStats,
    pub count: f64,
}

/// Ordered (strictly increasing in t) record of per-batch statistics.
/// Entries whose kernel weight at the latest timestamp has fallen to
/// epsilon or below are discarded on append, which bounds the length by
/// ceil(log2(1/epsilon)/lambda) + 1 at integer steps.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HistoryRecord {
    family: Family,
    dim: usize,
    entries: Vec<HistoryEntry>,
}

/// Time-weighted reduction of a history record at a given timestamp.
#[derive(Clone, Debug)]
pub struct WeightedAggregate {
    pub stats: SufficientStats,
    pub count: f64,
}

impl HistoryRecord {
    pub fn new(family: Family, dim: usize) -> Self {
        HistoryRecord {
            family,
            dim,
            entries: Vec::new(),
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last_timestamp(&self) -> Option<f64> {
        self.entries.last().map(|e| e.t)
    }

    /// Append one batch entry, then drop every entry whose weight at `t`
    /// is <= epsilon. Timestamps must be strictly increasing.
    pub fn append_and_prune(
        &mut self,
        t: f64,
        stats: SufficientStats,
        count: f64,
        lambda: f64,
        epsilon: f64,
    ) -> Result<()> {
        if let Some(last) = self.last_timestamp() {
            if t <= last {
                return Err(Error::Input(format!(
                    "history timestamps must be strictly increasing: {t} after {last}"
                )));
            }
        }
        if stats.family() != self.family || stats.dim() != self.dim {
            return Err(Error::Input("history entry family/dimension mismatch".into()));
        }
        self.entries.push(HistoryEntry { t, stats, count });
        self.prune(t, lambda, epsilon);
        Ok(())
    }

    /// Drop entries whose kernel weight at `t_now` is <= epsilon.
    pub fn prune(&mut self, t_now: f64, lambda: f64, epsilon: f64) {
        self.entries
            .retain(|e| kernel_weight(t_now, e.t, lambda).map_or(false, |w| w > epsilon));
    }

    /// S = sum_b K(t_now, t_b) s_b, N = sum_b K(t_now, t_b) n_b,
    /// summed oldest to newest.
    pub fn weighted_aggregate(&self, t_now: f64, lambda: f64) -> Result<WeightedAggregate> {
        let mut stats = SufficientStats::zero(self.family, self.dim);
        let mut count = 0.0;
        for e in &self.entries {
            let w = kernel_weight(t_now, e.t, lambda)?;
            stats.add_assign(&e.stats.scale(w))?;
            count += w * e.count;
        }
        stats.symmetrize();
        Ok(WeightedAggregate { stats, count })
    }

    /// Merge two histories: entries at equal timestamps are combined by
    /// statistic/count addition, the rest are unioned in timestamp order.
    pub fn merge(a: &HistoryRecord, b: &HistoryRecord) -> Result<HistoryRecord> {
        if a.family != b.family || a.dim != b.dim {
            return Err(Error::Input("cannot merge histories of different shape".into()));
        }
        let mut entries: Vec<HistoryEntry> = Vec::with_capacity(a.entries.len() + b.entries.len());
        let (mut i, mut j) = (0, 0);
        while i < a.entries.len() && j < b.entries.len() {
            let (ea, eb) = (&a.entries[i], &b.entries[j]);
            if ea.t == eb.t {
                entries.push(HistoryEntry {
                    t: ea.t,
                    stats: ea.stats.add(&eb.stats)?,
                    count: ea.count + eb.count,
                });
                i += 1;
                j += 1;
            } else if ea.t < eb.t {
                entries.push(ea.clone());
                i += 1;
            } else {
                entries.push(eb.clone());
                j += 1;
            }
        }
        entries.extend_from_slice(&a.entries[i..]);
        entries.extend_from_slice(&b.entries[j..]);
        Ok(HistoryRecord {
            family: a.family,
            dim: a.dim,
            entries,
        })
    }

    #[cfg(test)]
    pub(crate) fn entries(&self) -> &[HistoryEntry] {
        &self.entries
    }
}

/// Maximum retained entries at integer timestamp steps: lags keep strict
/// weight > epsilon, so count = ceil(log2(1/epsilon)/lambda); 27 at
/// lambda=1, epsilon=1e-8.
pub fn max_history_len(lambda: f64, epsilon: f64) -> usize {
    ((1.0 / epsilon).log2() / lambda).ceil() as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::Family;
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    fn stat(c: f64) -> SufficientStats {
        SufficientStats::Multinomial {
            sum_counts: dvector![c],
        }
    }

    #[test]
    fn kernel_basics() {
        assert_eq!(kernel_weight(5.0, 5.0, 1.0).unwrap(), 1.0);
        assert_eq!(kernel_weight(3.0, 1.0, 1.0).unwrap(), 0.25);
        assert_relative_eq!(kernel_weight(2.5, 1.0, 2.0).unwrap(), 0.125, epsilon = 1e-15);
        assert!(kernel_weight(1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn append_to_empty_and_monotonicity() {
        let mut h = HistoryRecord::new(Family::Multinomial, 1);
        h.append_and_prune(1.0, stat(2.0), 2.0, 1.0, 1e-8).unwrap();
        assert_eq!(h.len(), 1);
        assert!(h.append_and_prune(1.0, stat(1.0), 1.0, 1.0, 1e-8).is_err());
    }

    #[test]
    fn retained_lag_matches_threshold() {
        // lambda=1, eps=1e-8: 2^-26 > eps retained, 2^-27 <= comparison boundary pruned
        let mut h = HistoryRecord::new(Family::Multinomial, 1);
        for t in 1..=40 {
            h.append_and_prune(t as f64, stat(1.0), 1.0, 1.0, 1e-8).unwrap();
        }
        let oldest = h.entries().first().unwrap().t;
        assert_eq!(40.0 - oldest, 26.0);
        assert!(h.len() <= max_history_len(1.0, 1e-8));
        assert_eq!(max_history_len(1.0, 1e-8), 27);
    }

    #[test]
    fn zero_count_entries_follow_uniform_rule() {
        let mut h = HistoryRecord::new(Family::Multinomial, 1);
        h.append_and_prune(1.0, stat(0.0), 0.0, 1.0, 1e-8).unwrap();
        assert_eq!(h.len(), 1);
        for t in 2..=30 {
            h.append_and_prune(t as f64, stat(1.0), 1.0, 1.0, 1e-8).unwrap();
        }
        assert!(h.entries().iter().all(|e| e.t > 1.0));
    }

    #[test]
    fn aggregate_hand_case() {
        // entries (t=1,n=4),(t=2,n=8), now=2, lambda=1 -> N = 8 + 0.5*4 = 10
        let mut h = HistoryRecord::new(Family::Multinomial, 1);
        h.append_and_prune(1.0, stat(4.0), 4.0, 1.0, 1e-8).unwrap();
        h.append_and_prune(2.0, stat(8.0), 8.0, 1.0, 1e-8).unwrap();
        let agg = h.weighted_aggregate(2.0, 1.0).unwrap();
        assert_relative_eq!(agg.count, 10.0, epsilon = 1e-12);
        assert_relative_eq!(agg.stats.counts().unwrap()[0], 10.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_aggregate_is_zero() {
        let h = HistoryRecord::new(Family::Gaussian, 2);
        let agg = h.weighted_aggregate(5.0, 1.0).unwrap();
        assert_eq!(agg.count, 0.0);
    }

    #[test]
    fn single_entry_at_now_has_unit_weight() {
        let mut h = HistoryRecord::new(Family::Multinomial, 1);
        h.append_and_prune(3.0, stat(10.0), 10.0, 1.0, 1e-8).unwrap();
        let agg = h.weighted_aggregate(3.0, 1.0).unwrap();
        assert_eq!(agg.count, 10.0);
    }

    #[test]
    fn stationary_stream_matches_geometric_closed_form() {
        let lambda = 1.0;
        let eps = 1e-8;
        let mut h = HistoryRecord::new(Family::Multinomial, 1);
        let mut prev = 0.0;
        for b in 1..=60 {
            h.append_and_prune(b as f64, stat(3.0), 3.0, lambda, eps).unwrap();
            let agg = h.weighted_aggregate(b as f64, lambda).unwrap();
            assert!(agg.count >= prev - 1e-12, "not nondecreasing at batch {b}");
            prev = agg.count;
            // closed form over retained lags q = oldest retained lag
            let q = (b as f64 - h.entries().first().unwrap().t) as i32;
            let expected: f64 = (0..=q).map(|d| 3.0 * 0.5f64.powi(d)).sum();
            assert_relative_eq!(agg.count, expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn merge_combines_equal_timestamps() {
        let mut a = HistoryRecord::new(Family::Multinomial, 1);
        let mut b = HistoryRecord::new(Family::Multinomial, 1);
        a.append_and_prune(1.0, stat(1.0), 1.0, 1.0, 1e-8).unwrap();
        a.append_and_prune(2.0, stat(2.0), 2.0, 1.0, 1e-8).unwrap();
        b.append_and_prune(2.0, stat(5.0), 5.0, 1.0, 1e-8).unwrap();
        b.append_and_prune(3.0, stat(1.0), 1.0, 1.0, 1e-8).unwrap();
        let m = HistoryRecord::merge(&a, &b).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.entries()[1].count, 7.0);
        // aggregate linearity: merged aggregate = sum of parts
        let t = 3.0;
        let ma = m.weighted_aggregate(t, 1.0).unwrap();
        let aa = a.weighted_aggregate(t, 1.0).unwrap();
        let ba = b.weighted_aggregate(t, 1.0).unwrap();
        assert_relative_eq!(ma.count, aa.count + ba.count, epsilon = 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn bounded_memory(lambda in 0.2f64..3.0, n_batches in 1usize..200) {
            let eps = 1e-8;
            let mut h = HistoryRecord::new(Family::Multinomial, 1);
            for b in 1..=n_batches {
                h.append_and_prune(b as f64, stat(1.0), 1.0, lambda, eps).unwrap();
                proptest::prop_assert!(h.len() <= max_history_len(lambda, eps));
            }
        }

        #[test]
        fn aggregate_linear_in_entries(c in 0.1f64..10.0, split in 0.1f64..0.9) {
            // splitting one entry into two at the same timestamp (merge path)
            // leaves the aggregate unchanged
            let mut whole = HistoryRecord::new(Family::Multinomial, 1);
            whole.append_and_prune(1.0, stat(c), c, 1.0, 1e-8).unwrap();
            let mut p1 = HistoryRecord::new(Family::Multinomial, 1);
            let mut p2 = HistoryRecord::new(Family::Multinomial, 1);
            p1.append_and_prune(1.0, stat(c * split), c * split, 1.0, 1e-8).unwrap();
            p2.append_and_prune(1.0, stat(c * (1.0 - split)), c * (1.0 - split), 1.0, 1e-8).unwrap();
            let m = HistoryRecord::merge(&p1, &p2).unwrap();
            let a = whole.weighted_aggregate(2.0, 1.0).unwrap();
            let b = m.weighted_aggregate(2.0, 1.0).unwrap();
            proptest::prop_assert!((a.count - b.count).abs() <= 1e-12 * a.count.max(1.0));
        }
    }
}
