//! External clustering agreement (NMI, ARI) and the feature cross-covariance
//! diagnostic.
//!
//! NMI is normalized by the geometric mean of the two entropies,
//! `I(a; b) / sqrt(H(a) H(b))`. Other normalizations (arithmetic mean, max)
//! give different numbers on the same partitions.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{DckmError, Result};
use crate::types::SampleWeights;

/// Joint counts of two labelings. Rows index the distinct values of the
/// first labeling in sorted order, columns those of the second.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    pub counts: Array2<u64>,
    pub n: u64,
}

fn dense_ids(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut ids = BTreeMap::new();
    for &l in labels {
        let next = ids.len();
        ids.entry(l).or_insert(next);
    }
    // Sorted order, independent of first appearance.
    for (rank, v) in ids.values_mut().enumerate() {
        *v = rank;
    }
    (labels.iter().map(|l| ids[l]).collect(), ids.len())
}

impl ContingencyTable {
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(DckmError::ShapeMismatch(format!("labelings have lengths {} and {}", a.len(), b.len())));
        }
        let (ia, ka) = dense_ids(a);
        let (ib, kb) = dense_ids(b);
        let mut counts = Array2::zeros((ka, kb));
        for (&r, &c) in ia.iter().zip(&ib) {
            counts[[r, c]] += 1;
        }
        Ok(Self { counts, n: a.len() as u64 })
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.sum_axis(Axis(1)).to_vec()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        self.counts.sum_axis(Axis(0)).to_vec()
    }
}

fn entropy(sums: &[u64], n: f64) -> f64 {
    sums.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information in `[0, 1]`.
///
/// Two single-cluster labelings score 1; when exactly one labeling has a
/// single cluster the score is 0.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.is_empty() {
        return Err(DckmError::InvalidParam("labelings are empty".into()));
    }
    let table = ContingencyTable::new(a, b)?;
    let n = table.n as f64;
    let rows = table.row_sums();
    let cols = table.col_sums();
    let ha = entropy(&rows, n);
    let hb = entropy(&cols, n);
    if ha == 0.0 && hb == 0.0 {
        return Ok(1.0);
    }
    if ha == 0.0 || hb == 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for ((r, c), &count) in table.counts.indexed_iter() {
        if count == 0 {
            continue;
        }
        let nij = count as f64;
        mi += nij / n * (n * nij / (rows[r] as f64 * cols[c] as f64)).ln();
    }
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}

fn pairs(c: u64) -> f64 {
    let c = c as f64;
    c * (c - 1.0) / 2.0
}

/// Adjusted Rand index.
///
/// When the chance-corrected denominator vanishes (both labelings all
/// singletons, or both a single cluster) the result is 1 for equal
/// partitions and 0 otherwise.
pub fn ari(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() < 2 {
        return Err(DckmError::InvalidParam("ARI needs at least two samples".into()));
    }
    let table = ContingencyTable::new(a, b)?;
    let index: f64 = table.counts.iter().map(|&c| pairs(c)).sum();
    let sum_a: f64 = table.row_sums().into_iter().map(pairs).sum();
    let sum_b: f64 = table.col_sums().into_iter().map(pairs).sum();
    let total = pairs(table.n);
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    let denom = max - expected;
    if denom == 0.0 {
        let same = table.counts.rows().into_iter().all(|r| r.iter().filter(|&&c| c > 0).count() <= 1)
            && table.counts.columns().into_iter().all(|c| c.iter().filter(|&&v| v > 0).count() <= 1);
        return Ok(if same { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / denom)
}

/// Frobenius norm of the off-diagonal part of the (weighted) feature
/// covariance matrix. Weights are normalized to sum to one; `None` means
/// uniform.
pub fn correlation_amount(x: ArrayView2<'_, f64>, w: Option<&SampleWeights>) -> f64 {
    correlation_amount_with(x, w, false)
}

/// Like [`correlation_amount`]; with `include_diagonal` the feature variances
/// are kept in the norm.
pub fn correlation_amount_with(x: ArrayView2<'_, f64>, w: Option<&SampleWeights>, include_diagonal: bool) -> f64 {
    let cov = weighted_covariance(x, w);
    cov.indexed_iter().filter(|((i, j), _)| include_diagonal || i != j).map(|(_, v)| v * v).sum::<f64>().sqrt()
}

/// Population covariance `sum_i p_i (x_i - mu)(x_i - mu)^T` with
/// probabilities `p` proportional to `w`.
pub fn weighted_covariance(x: ArrayView2<'_, f64>, w: Option<&SampleWeights>) -> Array2<f64> {
    let n = x.nrows();
    let p = match w {
        Some(w) => {
            assert_eq!(w.len(), n, "weight length must equal sample count");
            w.w() / w.w().sum()
        }
        None => ndarray::Array1::from_elem(n, 1.0 / n as f64),
    };
    let mean = p.dot(&x);
    let centered = &x - &mean;
    let scaled = &centered * &p.insert_axis(Axis(1));
    scaled.t().dot(&centered)
}
