//! Reference clusterers: Lloyd k-means, weighted k-means with fixed weights,
//! decorrelate-then-cluster, PCA-then-cluster and drop-correlated-features-
//! then-cluster.
//!
//! All of them share the centroid update, the nearest-centroid assignment,
//! the tie rule and the empty-cluster recovery of the joint solver, so a run
//! with uniform weights follows exactly the same trajectory.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{DckmError, Result};
use crate::solver::{self, centroid_step, random_labels, update_g};
use crate::types::{AssignmentMatrix, CentroidMatrix, DataMatrix, HyperParams, SampleWeights};

/// Sweep cap for the baseline Lloyd iterations.
pub const KMEANS_MAX_ITERS: usize = 300;

/// Default feature-correlation threshold for [`drop_km`].
pub const DEFAULT_DROP_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    KMeans,
    DecKM,
    PcaKM,
    DropKM,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSpec {
    pub kind: BaselineKind,
    pub drop_threshold: f64,
    /// Reduced dimension for PCA; `None` means `K - 1`.
    pub pca_dims: Option<usize>,
}

impl BaselineSpec {
    pub fn new(kind: BaselineKind) -> Self {
        Self { kind, drop_threshold: DEFAULT_DROP_THRESHOLD, pca_dims: None }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.drop_threshold > 0.0 && self.drop_threshold <= 1.0) {
            return Err(DckmError::InvalidParam(format!(
                "drop threshold must lie in (0, 1], got {}",
                self.drop_threshold
            )));
        }
        if let Some(p) = self.pca_dims {
            if p < 1 || p >= d {
                return Err(DckmError::InvalidParam(format!("pca dims must lie in [1, {d}), got {p}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub centroids: CentroidMatrix,
    pub assignments: AssignmentMatrix,
    /// Weighted k-means loss after each sweep.
    pub loss_history: Vec<f64>,
    pub converged: bool,
}

impl KMeansFit {
    pub fn loss(&self) -> f64 {
        *self.loss_history.last().expect("at least one sweep")
    }

    pub fn iterations(&self) -> usize {
        self.loss_history.len()
    }
}

/// Lloyd iteration with fixed sample weights, one sweep at a time.
#[derive(Debug, Clone)]
pub struct Lloyd<'a> {
    x: ArrayView2<'a, f64>,
    w: Array1<f64>,
    assignments: AssignmentMatrix,
    centroids: Option<CentroidMatrix>,
    history: Vec<f64>,
}

impl<'a> Lloyd<'a> {
    /// Starts from a seeded uniform random labeling, drawn the same way as
    /// the joint solver's initialization.
    pub fn new(x: ArrayView2<'a, f64>, w: ArrayView1<'_, f64>, k: usize, seed: u64) -> Result<Self> {
        check_k(x, k)?;
        Self::from_labels(x, w, random_labels(x.nrows(), k, seed), k)
    }

    pub fn from_labels(x: ArrayView2<'a, f64>, w: ArrayView1<'_, f64>, labels: Vec<usize>, k: usize) -> Result<Self> {
        check_k(x, k)?;
        if w.len() != x.nrows() || labels.len() != x.nrows() {
            return Err(DckmError::ShapeMismatch("weights/labels do not match data".into()));
        }
        Ok(Self {
            x,
            w: w.to_owned(),
            assignments: AssignmentMatrix::new(labels, k)?,
            centroids: None,
            history: Vec::new(),
        })
    }

    pub fn assignments(&self) -> &AssignmentMatrix {
        &self.assignments
    }

    /// Centroid update followed by assignment update. Returns `true` when
    /// the assignments did not change.
    pub fn sweep(&mut self) -> Result<bool> {
        let before = self.assignments.clone();
        let (f, _) = centroid_step(self.x, self.w.view(), &mut self.assignments)?;
        self.assignments = update_g(self.x, &f);
        let loss = solver::weighted_kmeans_loss(self.x, self.w.view(), &f, &self.assignments);
        self.centroids = Some(f);
        self.history.push(loss);
        Ok(self.assignments == before)
    }

    pub fn run(mut self, max_iters: usize) -> Result<KMeansFit> {
        let mut converged = false;
        while self.history.len() < max_iters {
            if self.sweep()? {
                converged = true;
                break;
            }
        }
        Ok(KMeansFit {
            centroids: self.centroids.expect("at least one sweep"),
            assignments: self.assignments,
            loss_history: self.history,
            converged,
        })
    }
}

fn check_k(x: ArrayView2<'_, f64>, k: usize) -> Result<()> {
    if k == 0 || k > x.nrows() {
        return Err(DckmError::InvalidParam(format!("k = {k} must lie in [1, n = {}]", x.nrows())));
    }
    Ok(())
}

/// Plain k-means: unit weights, seeded random-partition start.
pub fn kmeans(x: ArrayView2<'_, f64>, k: usize, seed: u64) -> Result<KMeansFit> {
    let w = Array1::ones(x.nrows());
    Lloyd::new(x, w.view(), k, seed)?.run(KMEANS_MAX_ITERS)
}

/// Weighted k-means with the weights held fixed.
pub fn weighted_kmeans(x: ArrayView2<'_, f64>, w: &SampleWeights, k: usize, seed: u64) -> Result<KMeansFit> {
    Lloyd::new(x, w.w().view(), k, seed)?.run(KMEANS_MAX_ITERS)
}

#[derive(Debug, Clone)]
pub struct DecKmFit {
    pub weights: SampleWeights,
    pub kmeans: KMeansFit,
}

/// First stage of Dec+KM: minimizes the weight-only part of the objective
/// (balance, norm and sum penalties) with no clustering term.
pub fn dec_km_weights(x: &DataMatrix, hp: &HyperParams) -> Result<SampleWeights> {
    hp.validate()?;
    crate::types::validate_data(x).into_result()?;
    let zeros = Array1::zeros(x.n());
    let mut omega = SampleWeights::uniform(x.n()).omega().clone();
    let mut prev = f64::INFINITY;
    for _ in 0..hp.max_outer_iters {
        let update = solver::descend_weights(x, zeros.view(), omega, hp, hp.max_w_iters)?;
        omega = update.weights.omega().clone();
        let converged = (prev - update.objective).abs() <= hp.outer_tol * prev.abs().max(1.0);
        prev = update.objective;
        if update.stalled || converged || update.steps == 0 {
            break;
        }
    }
    SampleWeights::from_omega(omega)
}

/// Dec+KM: learn decorrelating weights first, then run weighted k-means with
/// those weights frozen.
pub fn dec_km(x: &DataMatrix, hp: &HyperParams) -> Result<DecKmFit> {
    let weights = dec_km_weights(x, hp)?;
    let kmeans = weighted_kmeans(x.view(), &weights, hp.k, hp.seed)?;
    Ok(DecKmFit { weights, kmeans })
}

#[derive(Debug, Clone)]
pub struct PcaKmFit {
    /// `d x m` orthonormal projection basis, columns ordered by decreasing
    /// explained variance.
    pub basis: Array2<f64>,
    /// Variance along each basis direction.
    pub variances: Vec<f64>,
    /// Fewer than the requested components had non-zero variance.
    pub rank_deficient: bool,
    pub kmeans: KMeansFit,
}

/// Principal directions of the column-centered data, sorted by decreasing
/// variance. Eigenvectors are sign-normalized so their largest-magnitude
/// entry is positive.
pub fn principal_components(x: ArrayView2<'_, f64>) -> (Vec<f64>, Array2<f64>) {
    let (n, d) = x.dim();
    let mean = x.mean_axis(Axis(0)).expect("non-empty data");
    let centered = &x - &mean;
    let cov = centered.t().dot(&centered) / n as f64;
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut vectors = Array2::zeros((d, d));
    let mut values = Vec::with_capacity(d);
    for (col, &idx) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(idx);
        let pivot = v.iter().copied().fold(0.0f64, |m, e| if e.abs() > m.abs() { e } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for r in 0..d {
            vectors[[r, col]] = sign * v[r];
        }
        values.push(eig.eigenvalues[idx].max(0.0));
    }
    (values, vectors)
}

/// PCA+KM with the reduced dimension set to `K - 1`.
pub fn pca_km(x: ArrayView2<'_, f64>, k: usize, seed: u64) -> Result<PcaKmFit> {
    if k < 2 {
        return Err(DckmError::InvalidParam("PCA+KM needs k >= 2".into()));
    }
    pca_km_with_dims(x, k, k - 1, seed)
}

pub fn pca_km_with_dims(x: ArrayView2<'_, f64>, k: usize, dims: usize, seed: u64) -> Result<PcaKmFit> {
    let d = x.ncols();
    if dims < 1 || dims > d {
        return Err(DckmError::InvalidParam(format!("pca dims must lie in [1, {d}], got {dims}")));
    }
    let (values, vectors) = principal_components(x);
    let top = values[0];
    let usable = values.iter().take_while(|&&v| v > 1e-12 * top.max(f64::MIN_POSITIVE)).count();
    let m = dims.min(usable.max(1));
    let rank_deficient = m < dims;
    if rank_deficient {
        log::warn!("data has rank {usable}; using {m} of {dims} requested components");
    }
    let basis = vectors.slice(ndarray::s![.., ..m]).to_owned();
    let mean = x.mean_axis(Axis(0)).expect("non-empty data");
    let projected = (&x - &mean).dot(&basis);
    let kmeans = kmeans(projected.view(), k, seed)?;
    Ok(PcaKmFit { basis, variances: values[..m].to_vec(), rank_deficient, kmeans })
}

/// Pearson correlation matrix of the columns. Zero-variance columns get zero
/// correlation with everything, including themselves.
pub fn pearson_correlation(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = x.nrows() as f64;
    let mean = x.mean_axis(Axis(0)).expect("non-empty data");
    let centered = &x - &mean;
    let cov = centered.t().dot(&centered) / n;
    let sd: Vec<f64> = cov.diag().iter().map(|v| v.max(0.0).sqrt()).collect();
    let d = x.ncols();
    Array2::from_shape_fn(
        (d, d),
        |(i, j)| {
            if sd[i] == 0.0 || sd[j] == 0.0 {
                0.0
            } else {
                cov[[i, j]] / (sd[i] * sd[j])
            }
        },
    )
}

/// Greedy feature filter: scanning in index order, a feature is dropped when
/// its absolute correlation with any already-kept feature exceeds
/// `threshold`.
pub fn select_uncorrelated(x: ArrayView2<'_, f64>, threshold: f64) -> Result<Vec<usize>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(DckmError::InvalidParam(format!("threshold must lie in (0, 1], got {threshold}")));
    }
    let corr = pearson_correlation(x);
    let mut kept: Vec<usize> = Vec::new();
    for j in 0..x.ncols() {
        if kept.iter().all(|&k| corr[[j, k]].abs() <= threshold) {
            kept.push(j);
        }
    }
    if kept.is_empty() {
        return Err(DckmError::AllFeaturesDropped(x.ncols()));
    }
    Ok(kept)
}

#[derive(Debug, Clone)]
pub struct DropKmFit {
    pub kept: Vec<usize>,
    pub kmeans: KMeansFit,
}

/// Drop+KM: remove highly correlated features, then run k-means.
pub fn drop_km(x: ArrayView2<'_, f64>, k: usize, threshold: f64, seed: u64) -> Result<DropKmFit> {
    let kept = select_uncorrelated(x, threshold)?;
    let reduced = x.select(Axis(1), &kept);
    let kmeans = kmeans(reduced.view(), k, seed)?;
    Ok(DropKmFit { kept, kmeans })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_cluster_is_column_mean() {
        let x = array![[1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.0, 0.0]];
        let fit = kmeans(x.view(), 1, 0).unwrap();
        assert_eq!(fit.centroids.centroid(0), array![0.5, 0.5]);
    }

    #[test]
    fn duplicated_rows_give_zero_loss() {
        let x = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [1.0, 1.0], [1.0, 1.0]];
        let fit = kmeans(x.view(), 3, 11).unwrap();
        assert_eq!(fit.loss(), 0.0);
        assert!(fit.converged);
    }

    #[test]
    fn single_positive_weight_pins_centroid() {
        let x = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let w = SampleWeights::from_weights(array![1.0, 0.0, 0.0]).unwrap();
        let fit = Lloyd::from_labels(x.view(), w.w().view(), vec![0, 0, 0], 1).unwrap().run(10).unwrap();
        assert_eq!(fit.centroids.centroid(0), array![1.0, 0.0]);
        assert_eq!(fit.assignments.n(), 3);
    }

    #[test]
    fn spec_validation() {
        let mut s = BaselineSpec::new(BaselineKind::DropKM);
        assert!(s.validate(5).is_ok());
        s.drop_threshold = 0.0;
        assert!(s.validate(5).is_err());
        let s = BaselineSpec { pca_dims: Some(5), ..BaselineSpec::new(BaselineKind::PcaKM) };
        assert!(s.validate(5).is_err());
    }

    #[test]
    fn duplicate_columns_are_dropped() {
        let x = array![[1.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0], [0.0, 0.0, 0.0]];
        assert_eq!(select_uncorrelated(x.view(), 0.7).unwrap(), vec![0, 2]);
    }

    #[test]
    fn indicator_columns_are_kept() {
        let x = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(select_uncorrelated(x.view(), 0.7).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn constant_column_has_zero_correlation() {
        let x = array![[1.0, 1.0], [0.0, 1.0], [1.0, 1.0]];
        let c = pearson_correlation(x.view());
        assert_eq!(c[[0, 1]], 0.0);
        assert_eq!(c[[1, 1]], 0.0);
    }

    #[test]
    fn two_cluster_pca_is_one_dimensional() {
        let x = array![[1.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 1.0]];
        let fit = pca_km(x.view(), 2, 0).unwrap();
        assert_eq!(fit.basis.dim(), (3, 1));
        let norm: f64 = fit.basis.column(0).iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rank_deficiency_is_flagged() {
        // One informative direction only.
        let x = array![[1.0, 1.0, 1.0], [0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [0.0, 0.0, 0.0]];
        let fit = pca_km_with_dims(x.view(), 2, 2, 0).unwrap();
        assert!(fit.rank_deficient);
        assert_eq!(fit.basis.ncols(), 1);
    }
}
