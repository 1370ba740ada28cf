//! Shared numeric data model.
//!
//! Matrices are dense `ndarray` arrays with samples as rows. The assignment
//! matrix is stored as a label vector; its one-hot form is produced on demand.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{DckmError, Result};

/// An `n x d` sample-by-feature matrix with `n >= 2`, `d >= 2` and finite
/// entries. Binary-ness is checked separately by [`validate_data`] because
/// some baselines run on projected, non-binary data.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: Array2<f64>,
}

impl DataMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (n, d) = values.dim();
        if n < 2 || d < 2 {
            return Err(DckmError::InvalidShape(format!("data matrix must be at least 2x2, got {n}x{d}")));
        }
        if let Some(((row, col), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(DckmError::NonFinite { row, col });
        }
        Ok(Self { values })
    }

    /// Builds a matrix from row slices; convenient in tests and examples.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        if let Some(i) = rows.iter().position(|r| r.as_ref().len() != d) {
            return Err(DckmError::InvalidShape(format!(
                "row {i} has {} entries, expected {d}",
                rows[i].as_ref().len()
            )));
        }
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        let values = Array2::from_shape_vec((n, d), flat).map_err(|e| DckmError::InvalidShape(e.to_string()))?;
        Self::new(values)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn d(&self) -> usize {
        self.values.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.values.column(j)
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }
}

/// Non-negative sample weights kept in their square-root parameterization:
/// `w = omega * omega` element-wise, recomputed on every update.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWeights {
    w: Array1<f64>,
    omega: Array1<f64>,
}

impl SampleWeights {
    pub fn from_omega(omega: Array1<f64>) -> Result<Self> {
        if let Some(i) = omega.iter().position(|v| !v.is_finite()) {
            return Err(DckmError::NonFinite { row: i, col: 0 });
        }
        let w = omega.mapv(|o| o * o);
        if w.sum() <= 0.0 {
            return Err(DckmError::InvalidParam("sample weights are all zero".into()));
        }
        Ok(Self { w, omega })
    }

    /// Builds weights from `w` directly, taking `omega = sqrt(w)`. The stored
    /// `w` is recomputed from `omega` so the two always agree exactly.
    pub fn from_weights(w: Array1<f64>) -> Result<Self> {
        if let Some(i) = w.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(DckmError::InvalidParam(format!("weight {i} is negative or not finite")));
        }
        Self::from_omega(w.mapv(f64::sqrt))
    }

    /// `w_i = 1/n` for every sample.
    pub fn uniform(n: usize) -> Self {
        let omega = Array1::from_elem(n, (1.0 / n as f64).sqrt());
        Self::from_omega(omega).expect("uniform weights are valid")
    }

    /// `w_i = 1` for every sample.
    pub fn ones(n: usize) -> Self {
        Self::from_omega(Array1::ones(n)).expect("unit weights are valid")
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn w(&self) -> &Array1<f64> {
        &self.w
    }

    pub fn omega(&self) -> &Array1<f64> {
        &self.omega
    }

    /// Same weights multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::from_omega(self.omega.mapv(|o| o * c.sqrt()))
    }
}

/// Cluster centroids. Row `k` of the stored `K x d` array is the centroid of
/// cluster `k`; [`CentroidMatrix::factor`] returns the `d x K` factor `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidMatrix {
    centroids: Array2<f64>,
}

impl CentroidMatrix {
    pub fn from_centroids(centroids: Array2<f64>) -> Result<Self> {
        if centroids.nrows() == 0 {
            return Err(DckmError::InvalidShape("no centroids".into()));
        }
        if let Some(((row, col), _)) = centroids.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(DckmError::NonFinite { row, col });
        }
        Ok(Self { centroids })
    }

    /// Builds from a `d x K` factor matrix.
    pub fn from_factor(f: ArrayView2<'_, f64>) -> Result<Self> {
        Self::from_centroids(f.t().to_owned())
    }

    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn d(&self) -> usize {
        self.centroids.ncols()
    }

    pub fn centroid(&self, k: usize) -> ArrayView1<'_, f64> {
        self.centroids.row(k)
    }

    pub fn centroids(&self) -> ArrayView2<'_, f64> {
        self.centroids.view()
    }

    pub fn factor(&self) -> Array2<f64> {
        self.centroids.t().to_owned()
    }
}

/// 1-of-K cluster assignments, stored as one label per sample.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AssignmentMatrix {
    labels: Vec<usize>,
    k: usize,
}

impl AssignmentMatrix {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if let Some((position, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(DckmError::LabelOutOfRange { label, position, k });
        }
        Ok(Self { labels, k })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<usize> {
        self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Dense `n x K` indicator matrix `G`.
    pub fn to_dense(&self) -> Array2<f64> {
        let mut g = Array2::zeros((self.labels.len(), self.k));
        for (i, &l) in self.labels.iter().enumerate() {
            g[[i, l]] = 1.0;
        }
        g
    }

    /// Number of samples in each cluster.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.k];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

/// One-hot encodes `labels` into an assignment matrix with `k` clusters.
pub fn one_hot_rows(labels: &[usize], k: usize) -> Result<AssignmentMatrix> {
    AssignmentMatrix::new(labels.to_vec(), k)
}

/// Penalty weights and solver controls.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// Weight of the decorrelation regularizer.
    pub lambda1: f64,
    /// Weight of `||w||^2`.
    pub lambda2: f64,
    /// Weight of `(sum(w) - 1)^2`.
    pub lambda3: f64,
    pub k: usize,
    pub max_outer_iters: usize,
    /// Gradient steps on omega per outer sweep.
    pub max_w_iters: usize,
    pub outer_tol: f64,
    /// Initial step of each backtracking line search.
    pub grad_step: f64,
    pub backtrack_shrink: f64,
    pub seed: u64,
    pub restarts: usize,
    /// Skip the weight update entirely, leaving `w` at its initial value.
    pub freeze_weights: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            k: 2,
            max_outer_iters: 100,
            max_w_iters: 5,
            outer_tol: 1e-6,
            grad_step: 0.1,
            backtrack_shrink: 0.5,
            seed: 0,
            restarts: 20,
            freeze_weights: false,
        }
    }
}

impl HyperParams {
    pub fn with_k(k: usize) -> Self {
        Self { k, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DckmError::InvalidParam(msg));
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        if self.k < 1 {
            return bad("k must be at least 1".into());
        }
        if self.max_outer_iters == 0 || self.max_w_iters == 0 || self.restarts == 0 {
            return bad("iteration caps and restarts must be positive".into());
        }
        if !(self.outer_tol > 0.0 && self.grad_step > 0.0) {
            return bad("outer_tol and grad_step must be positive".into());
        }
        if !(self.backtrack_shrink > 0.0 && self.backtrack_shrink < 1.0) {
            return bad(format!("backtrack_shrink must lie in (0, 1), got {}", self.backtrack_shrink));
        }
        Ok(())
    }
}

/// Per-column findings of [`validate_data`].
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnIssue {
    /// First non-binary entry found in the column. Fatal.
    NonBinary { row: usize, value: f64 },
    /// Every entry is equal. A warning: the balance term for this column is
    /// skipped downstream.
    Constant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<(usize, ColumnIssue)>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        !self.issues.iter().any(|(_, issue)| matches!(issue, ColumnIssue::NonBinary { .. }))
    }

    pub fn constant_columns(&self) -> Vec<usize> {
        self.issues.iter().filter(|(_, i)| matches!(i, ColumnIssue::Constant)).map(|(j, _)| *j).collect()
    }

    /// Converts a failing report into an error naming the first bad entry.
    pub fn into_result(self) -> Result<Self> {
        match self.issues.iter().find_map(|(col, issue)| match issue {
            ColumnIssue::NonBinary { row, value } => Some((*row, *col, *value)),
            ColumnIssue::Constant => None,
        }) {
            Some((row, col, value)) => Err(DckmError::NonBinary { row, col, value }),
            None => Ok(self),
        }
    }
}

/// Checks the binary-feature assumption. Non-finite entries are already
/// excluded by [`DataMatrix::new`].
pub fn validate_data(x: &DataMatrix) -> ValidationReport {
    let mut issues = Vec::new();
    for (j, col) in x.view().columns().into_iter().enumerate() {
        if let Some((row, &value)) = col.iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
            issues.push((j, ColumnIssue::NonBinary { row, value }));
            continue;
        }
        let first = col[0];
        if col.iter().all(|&v| v == first) {
            issues.push((j, ColumnIssue::Constant));
        }
    }
    ValidationReport { issues }
}
