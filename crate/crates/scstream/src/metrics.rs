//! External clustering quality measures computed from a contingency table:
//! adjusted Rand index, normalized mutual information, purity, pairwise F.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Cross-tabulation of two labelings over the same points. Labels are
/// arbitrary u64 ids; rows index truth, columns index predictions.
#[derive(Clone, Debug)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    pub n: u64,
}

impl ContingencyTable {
    pub fn from_labels(truth: &[u64], pred: &[u64]) -> Result<ContingencyTable> {
        if truth.len() != pred.len() {
            return Err(Error::Input(format!(
                "label length mismatch: {} vs {}",
                truth.len(),
                pred.len()
            )));
        }
        let mut row_of = HashMap::new();
        let mut col_of = HashMap::new();
        for &t in truth {
            let next = row_of.len();
            row_of.entry(t).or_insert(next);
        }
        for &p in pred {
            let next = col_of.len();
            col_of.entry(p).or_insert(next);
        }
        let (r, c) = (row_of.len(), col_of.len());
        let mut counts = vec![vec![0u64; c]; r];
        for (&t, &p) in truth.iter().zip(pred) {
            counts[row_of[&t]][col_of[&p]] += 1;
        }
        let row_sums: Vec<u64> = counts.iter().map(|row| row.iter().sum()).collect();
        let mut col_sums = vec![0u64; c];
        for row in &counts {
            for (j, &v) in row.iter().enumerate() {
                col_sums[j] += v;
            }
        }
        Ok(ContingencyTable {
            counts,
            row_sums,
            col_sums,
            n: truth.len() as u64,
        })
    }
}

fn choose2(n: u64) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

/// Hubert-Arabie adjusted Rand index. 1.0 when either labeling is a single
/// block or all singletons and the two agree; otherwise the usual
/// chance-corrected form.
pub fn ari(table: &ContingencyTable) -> f64 {
    if table.n < 2 {
        return 1.0;
    }
    let sum_ij: f64 = table
        .counts
        .iter()
        .flat_map(|row| row.iter())
        .map(|&v| choose2(v))
        .sum();
    let sum_a: f64 = table.row_sums.iter().map(|&v| choose2(v)).sum();
    let sum_b: f64 = table.col_sums.iter().map(|&v| choose2(v)).sum();
    let total = choose2(table.n);
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    if (max_index - expected).abs() < 1e-15 {
        // both labelings trivial (one block or all singletons)
        return if (sum_ij - expected).abs() < 1e-15 { 1.0 } else { 0.0 };
    }
    (sum_ij - expected) / (max_index - expected)
}

fn entropy(sums: &[u64], n: f64) -> f64 {
    sums.iter()
        .filter(|&&v| v > 0)
        .map(|&v| {
            let p = v as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// NMI with the geometric-mean normalizer sqrt(H(U) H(V)). Returns 1.0 when
/// both labelings are constant, 0.0 when exactly one is.
pub fn nmi(table: &ContingencyTable) -> f64 {
    let n = table.n as f64;
    if table.n == 0 {
        return 1.0;
    }
    let hu = entropy(&table.row_sums, n);
    let hv = entropy(&table.col_sums, n);
    if hu == 0.0 && hv == 0.0 {
        return 1.0;
    }
    if hu == 0.0 || hv == 0.0 {
        return 0.0;
    }
    let mut mi = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v == 0 {
                continue;
            }
            let pij = v as f64 / n;
            let pi = table.row_sums[i] as f64 / n;
            let pj = table.col_sums[j] as f64 / n;
            mi += pij * (pij / (pi * pj)).ln();
        }
    }
    (mi / (hu * hv).sqrt()).clamp(0.0, 1.0)
}

/// Fraction of points whose predicted cluster's majority truth label matches
/// their own: sum over predicted clusters of the largest truth count, over n.
pub fn purity(table: &ContingencyTable) -> f64 {
    if table.n == 0 {
        return 1.0;
    }
    let mut correct = 0u64;
    for j in 0..table.col_sums.len() {
        correct += table.counts.iter().map(|row| row[j]).max().unwrap_or(0);
    }
    correct as f64 / table.n as f64
}

/// F1 over point pairs: a pair is positive when co-clustered in truth.
pub fn pairwise_f(table: &ContingencyTable) -> f64 {
    if table.n < 2 {
        return 1.0;
    }
    let tp: f64 = table
        .counts
        .iter()
        .flat_map(|row| row.iter())
        .map(|&v| choose2(v))
        .sum();
    let truth_pairs: f64 = table.row_sums.iter().map(|&v| choose2(v)).sum();
    let pred_pairs: f64 = table.col_sums.iter().map(|&v| choose2(v)).sum();
    if truth_pairs == 0.0 && pred_pairs == 0.0 {
        return 1.0;
    }
    if tp == 0.0 {
        return 0.0;
    }
    let precision = tp / pred_pairs;
    let recall = tp / truth_pairs;
    2.0 * precision * recall / (precision + recall)
}

/// Per-batch scorecard plus the number of live clusters.
#[derive(Clone, Copy, Debug)]
pub struct BatchScores {
    pub ari: f64,
    pub nmi: f64,
    pub purity: f64,
    pub pairwise_f: f64,
}

pub fn score(truth: &[u64], pred: &[u64]) -> Result<BatchScores> {
    let table = ContingencyTable::from_labels(truth, pred)?;
    Ok(BatchScores {
        ari: ari(&table),
        nmi: nmi(&table),
        purity: purity(&table),
        pairwise_f: pairwise_f(&table),
    })
}

/// NMI over the concatenation of all batches, for comparing against the mean
/// of the per-batch values.
pub fn full_nmi(truth_batches: &[Vec<u64>], pred_batches: &[Vec<u64>]) -> Result<f64> {
    let truth: Vec<u64> = truth_batches.iter().flatten().copied().collect();
    let pred: Vec<u64> = pred_batches.iter().flatten().copied().collect();
    Ok(nmi(&ContingencyTable::from_labels(&truth, &pred)?))
}
