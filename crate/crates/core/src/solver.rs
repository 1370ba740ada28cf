//! Joint weighted k-means and decorrelation solver.
//!
//! The objective is
//!
//! ```text
//! J(w, F, G) = sum_i w_i ||x_i - F g_i||^2
//!            + lambda1 * balance_loss(X, w)
//!            + lambda2 * ||w||^2
//!            + lambda3 * (sum_i w_i - 1)^2
//! ```
//!
//! minimized by block coordinate descent: closed-form weighted means for the
//! centroids, nearest-centroid search for the assignments and backtracking
//! gradient descent on `omega` where `w = omega * omega`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decorrelation::{self, MASS_EPS};
use crate::error::{DckmError, Result};
use crate::par;
use crate::types::{validate_data, AssignmentMatrix, CentroidMatrix, DataMatrix, HyperParams, SampleWeights};

/// Re-seed rounds allowed per centroid update before giving up.
pub const MAX_RESEED_ATTEMPTS: usize = 3;

/// Smallest step the weight line search will try.
pub const MIN_STEP: f64 = 1e-16;

const ARMIJO_C: f64 = 1e-4;

/// Gradient norm, relative to the weight objective, below which the weights
/// count as stationary.
pub const STATIONARY_TOL: f64 = 1e-13;

fn check_shapes(
    x: ArrayView2<'_, f64>,
    w: Option<&SampleWeights>,
    f: &CentroidMatrix,
    g: &AssignmentMatrix,
) -> Result<()> {
    let (n, d) = x.dim();
    if let Some(w) = w {
        if w.len() != n {
            return Err(DckmError::ShapeMismatch(format!("{} weights for {n} samples", w.len())));
        }
    }
    if g.n() != n {
        return Err(DckmError::ShapeMismatch(format!("{} assignments for {n} samples", g.n())));
    }
    if f.d() != d {
        return Err(DckmError::ShapeMismatch(format!("centroids have {} features, data {d}", f.d())));
    }
    if f.k() != g.k() {
        return Err(DckmError::ShapeMismatch(format!("{} centroids for {} clusters", f.k(), g.k())));
    }
    Ok(())
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared reconstruction error of every sample under its assigned centroid.
pub fn row_residuals(x: ArrayView2<'_, f64>, f: &CentroidMatrix, g: &AssignmentMatrix) -> Array1<f64> {
    Array1::from(par::map_indexed(x.nrows(), |i| sq_dist(x.row(i), f.centroid(g.label(i)))))
}

/// `sum_i w_i ||x_i - F g_i||^2`.
pub fn weighted_kmeans_loss(
    x: ArrayView2<'_, f64>,
    w: ArrayView1<'_, f64>,
    f: &CentroidMatrix,
    g: &AssignmentMatrix,
) -> f64 {
    row_residuals(x, f, g).iter().zip(w).map(|(e, w)| e * w).sum()
}

/// Full objective value.
pub fn objective(
    x: &DataMatrix,
    w: &SampleWeights,
    f: &CentroidMatrix,
    g: &AssignmentMatrix,
    hp: &HyperParams,
) -> Result<f64> {
    check_shapes(x.view(), Some(w), f, g)?;
    let balance = if hp.lambda1 != 0.0 { decorrelation::balance_loss(x, w).value } else { 0.0 };
    let w = w.w();
    let kmeans = weighted_kmeans_loss(x.view(), w.view(), f, g);
    let total = w.sum();
    Ok(kmeans + hp.lambda1 * balance + hp.lambda2 * w.dot(w) + hp.lambda3 * (total - 1.0) * (total - 1.0))
}

/// Per-cluster weighted means. Clusters whose weight mass is at most
/// [`MASS_EPS`] get a zero row and are listed in the second return value.
///
/// Weights are divided by the largest weight in their cluster before
/// accumulating, so equal weights reproduce the unweighted mean exactly.
fn weighted_means(
    x: ArrayView2<'_, f64>,
    w: ArrayView1<'_, f64>,
    labels: &[usize],
    k: usize,
) -> (Array2<f64>, Vec<usize>) {
    let d = x.ncols();
    let mut scale = vec![0.0f64; k];
    let mut mass = vec![0.0f64; k];
    for (&l, &wi) in labels.iter().zip(w) {
        scale[l] = scale[l].max(wi);
        mass[l] += wi;
    }
    let mut sums = Array2::<f64>::zeros((k, d));
    let mut norm = vec![0.0f64; k];
    for (i, &l) in labels.iter().enumerate() {
        if scale[l] == 0.0 {
            continue;
        }
        let r = w[i] / scale[l];
        if r == 0.0 {
            continue;
        }
        norm[l] += r;
        sums.row_mut(l).scaled_add(r, &x.row(i));
    }
    let mut empty = Vec::new();
    for c in 0..k {
        if mass[c] <= MASS_EPS {
            sums.row_mut(c).fill(0.0);
            empty.push(c);
        } else {
            let s = norm[c];
            sums.row_mut(c).mapv_inplace(|v| v / s);
        }
    }
    (sums, empty)
}

/// Closed-form centroid update: each centroid becomes the weighted mean of
/// its members. Fails with [`DckmError::EmptyCluster`] if a cluster has no
/// weight mass; [`centroid_step`] handles that case by re-seeding.
pub fn update_f(x: &DataMatrix, w: &SampleWeights, g: &AssignmentMatrix) -> Result<CentroidMatrix> {
    if w.len() != x.n() || g.n() != x.n() {
        return Err(DckmError::ShapeMismatch("weights/assignments do not match data".into()));
    }
    let (means, empty) = weighted_means(x.view(), w.w().view(), g.labels(), g.k());
    if let Some(&cluster) = empty.first() {
        return Err(DckmError::EmptyCluster { cluster, attempts: 0 });
    }
    CentroidMatrix::from_centroids(means)
}

/// Nearest-centroid assignment; ties go to the lowest cluster index.
/// Sample weights play no role here.
pub fn update_g(x: ArrayView2<'_, f64>, f: &CentroidMatrix) -> AssignmentMatrix {
    let k = f.k();
    let labels = par::map_indexed(x.nrows(), |i| {
        let row = x.row(i);
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for c in 0..k {
            let dist = sq_dist(row, f.centroid(c));
            if dist < best_dist {
                best = c;
                best_dist = dist;
            }
        }
        best
    });
    AssignmentMatrix::new(labels, k).expect("labels are below k")
}

/// Centroid update with empty-cluster recovery.
///
/// Each cluster without weight mass is re-seeded at the sample with the
/// largest weighted residual, the assignments are recomputed and the means
/// taken again. After [`MAX_RESEED_ATTEMPTS`] unsuccessful rounds the last
/// empty cluster is reported as an error. `g` is updated in place when
/// re-seeding happens. Returns the centroids and the number of re-seeds.
pub fn centroid_step(
    x: ArrayView2<'_, f64>,
    w: ArrayView1<'_, f64>,
    g: &mut AssignmentMatrix,
) -> Result<(CentroidMatrix, usize)> {
    let k = g.k();
    let mut reseeds = 0;
    for attempt in 0..=MAX_RESEED_ATTEMPTS {
        let (mut means, empty) = weighted_means(x, w, g.labels(), k);
        if empty.is_empty() {
            return Ok((CentroidMatrix::from_centroids(means)?, reseeds));
        }
        if attempt == MAX_RESEED_ATTEMPTS {
            return Err(DckmError::EmptyCluster { cluster: empty[0], attempts: attempt });
        }
        let mut score: Vec<f64> = (0..x.nrows())
            .map(|i| {
                let l = g.label(i);
                if empty.contains(&l) {
                    0.0
                } else {
                    w[i] * sq_dist(x.row(i), means.row(l))
                }
            })
            .collect();
        for &c in &empty {
            let mut pick = None;
            let mut best = 0.0;
            for (i, &s) in score.iter().enumerate() {
                if s > best {
                    best = s;
                    pick = Some(i);
                }
            }
            let Some(i) = pick else {
                return Err(DckmError::EmptyCluster { cluster: c, attempts: attempt + 1 });
            };
            means.row_mut(c).assign(&x.row(i));
            score[i] = 0.0;
            reseeds += 1;
        }
        log::debug!("re-seeded clusters {empty:?} (attempt {})", attempt + 1);
        *g = update_g(x, &CentroidMatrix::from_centroids(means)?);
    }
    unreachable!("loop returns on its last iteration")
}

/// Objective restricted to `omega` with centroids and assignments fixed.
/// `residuals` are the per-sample squared errors from [`row_residuals`].
pub fn weight_objective(
    x: &DataMatrix,
    residuals: ArrayView1<'_, f64>,
    omega: ArrayView1<'_, f64>,
    hp: &HyperParams,
) -> f64 {
    let w = omega.mapv(|o| o * o);
    let total = w.sum();
    let balance = if hp.lambda1 != 0.0 {
        let sw = SampleWeights::from_omega(omega.to_owned());
        match sw {
            Ok(sw) => decorrelation::balance_loss(x, &sw).value,
            Err(_) => return f64::INFINITY,
        }
    } else {
        0.0
    };
    residuals.dot(&w) + hp.lambda1 * balance + hp.lambda2 * w.dot(&w) + hp.lambda3 * (total - 1.0) * (total - 1.0)
}

/// Value and gradient of [`weight_objective`].
pub fn weight_objective_and_gradient(
    x: &DataMatrix,
    residuals: ArrayView1<'_, f64>,
    omega: ArrayView1<'_, f64>,
    hp: &HyperParams,
) -> (f64, Array1<f64>) {
    let w = omega.mapv(|o| o * o);
    let total = w.sum();
    let (balance, balance_grad) = if hp.lambda1 != 0.0 {
        let (loss, grad) = decorrelation::balance_loss_and_gradient(x, omega);
        (loss.value, grad)
    } else {
        (0.0, Array1::zeros(omega.len()))
    };
    let value =
        residuals.dot(&w) + hp.lambda1 * balance + hp.lambda2 * w.dot(&w) + hp.lambda3 * (total - 1.0) * (total - 1.0);
    let sum_term = 4.0 * hp.lambda3 * (total - 1.0);
    let grad = Array1::from_shape_fn(omega.len(), |i| {
        let o = omega[i];
        2.0 * residuals[i] * o + hp.lambda1 * balance_grad[i] + 4.0 * hp.lambda2 * o * o * o + sum_term * o
    });
    (value, grad)
}

/// Outcome of one weight update.
#[derive(Debug, Clone)]
pub struct WeightUpdate {
    pub weights: SampleWeights,
    /// Accepted gradient steps.
    pub steps: usize,
    /// The line search found no decreasing step of size at least [`MIN_STEP`].
    pub stalled: bool,
    pub objective: f64,
}

/// Runs up to `hp.max_w_iters` backtracking gradient steps on omega.
pub fn update_w(
    x: &DataMatrix,
    f: &CentroidMatrix,
    g: &AssignmentMatrix,
    omega: ArrayView1<'_, f64>,
    hp: &HyperParams,
) -> Result<WeightUpdate> {
    check_shapes(x.view(), None, f, g)?;
    if omega.len() != x.n() {
        return Err(DckmError::ShapeMismatch(format!("{} omegas for {} samples", omega.len(), x.n())));
    }
    let residuals = row_residuals(x.view(), f, g);
    descend_weights(x, residuals.view(), omega.to_owned(), hp, hp.max_w_iters)
}

pub(crate) fn descend_weights(
    x: &DataMatrix,
    residuals: ArrayView1<'_, f64>,
    mut omega: Array1<f64>,
    hp: &HyperParams,
    max_steps: usize,
) -> Result<WeightUpdate> {
    let mut steps = 0;
    let mut stalled = false;
    let (mut value, mut grad) = weight_objective_and_gradient(x, residuals, omega.view(), hp);
    for _ in 0..max_steps {
        let g2 = grad.dot(&grad);
        if g2.sqrt() <= STATIONARY_TOL * value.abs().max(1.0) {
            break;
        }
        let mut t = hp.grad_step;
        let accepted = loop {
            let candidate = &omega - &(t * &grad);
            let cand_value = weight_objective(x, residuals, candidate.view(), hp);
            if cand_value <= value - ARMIJO_C * t * g2 {
                break Some((candidate, cand_value));
            }
            t *= hp.backtrack_shrink;
            if t < MIN_STEP {
                break None;
            }
        };
        match accepted {
            Some((candidate, _)) => {
                omega = candidate;
                steps += 1;
                (value, grad) = weight_objective_and_gradient(x, residuals, omega.view(), hp);
            }
            None => {
                log::debug!("weight line search stalled after {steps} steps");
                stalled = true;
                break;
            }
        }
    }
    Ok(WeightUpdate { weights: SampleWeights::from_omega(omega)?, steps, stalled, objective: value })
}

/// Uniformly random initial labels drawn from a seeded ChaCha stream.
pub fn random_labels(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub centroids: CentroidMatrix,
    pub assignments: AssignmentMatrix,
    pub weights: SampleWeights,
    /// Objective after each full sweep.
    pub objective_history: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Features skipped by the balance term at the final weights.
    pub skipped_features_last: usize,
    /// Sweeps whose weight line search stalled.
    pub stalled_sweeps: usize,
}

impl FitResult {
    pub fn final_objective(&self) -> f64 {
        *self.objective_history.last().expect("at least one sweep")
    }
}

/// Stateful form of [`fit`]: one call to [`DckmSolver::sweep`] performs the
/// centroid, assignment and weight updates once.
#[derive(Debug, Clone)]
pub struct DckmSolver<'a> {
    x: &'a DataMatrix,
    hp: HyperParams,
    assignments: AssignmentMatrix,
    centroids: Option<CentroidMatrix>,
    weights: SampleWeights,
    history: Vec<f64>,
    stalled_sweeps: usize,
}

impl<'a> DckmSolver<'a> {
    pub fn new(x: &'a DataMatrix, hp: &HyperParams, init_labels: Option<&[usize]>) -> Result<Self> {
        hp.validate()?;
        validate_data(x).into_result()?;
        if hp.k > x.n() {
            return Err(DckmError::InvalidParam(format!("k = {} exceeds n = {}", hp.k, x.n())));
        }
        let labels = match init_labels {
            Some(l) if l.len() != x.n() => {
                return Err(DckmError::ShapeMismatch(format!("{} initial labels for {} samples", l.len(), x.n())))
            }
            Some(l) => l.to_vec(),
            None => random_labels(x.n(), hp.k, hp.seed),
        };
        Ok(Self {
            x,
            hp: hp.clone(),
            assignments: AssignmentMatrix::new(labels, hp.k)?,
            centroids: None,
            weights: SampleWeights::uniform(x.n()),
            history: Vec::new(),
            stalled_sweeps: 0,
        })
    }

    pub fn assignments(&self) -> &AssignmentMatrix {
        &self.assignments
    }

    pub fn weights(&self) -> &SampleWeights {
        &self.weights
    }

    pub fn centroids(&self) -> Option<&CentroidMatrix> {
        self.centroids.as_ref()
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    /// Runs one sweep and returns the objective after it.
    pub fn sweep(&mut self) -> Result<f64> {
        let x = self.x.view();
        let (f, _) = centroid_step(x, self.weights.w().view(), &mut self.assignments)?;
        self.assignments = update_g(x, &f);
        if !self.hp.freeze_weights {
            let update = update_w(self.x, &f, &self.assignments, self.weights.omega().view(), &self.hp)?;
            if update.stalled {
                self.stalled_sweeps += 1;
            }
            self.weights = update.weights;
        }
        let value = objective(self.x, &self.weights, &f, &self.assignments, &self.hp)?;
        self.centroids = Some(f);
        self.history.push(value);
        Ok(value)
    }

    fn converged(&self) -> bool {
        match self.history.as_slice() {
            [.., prev, last] => (last - prev).abs() <= self.hp.outer_tol * prev.abs().max(1.0),
            _ => false,
        }
    }

    /// Sweeps until the relative objective change drops below `outer_tol` or
    /// the iteration cap is reached.
    pub fn run(mut self) -> Result<FitResult> {
        let mut converged = false;
        while self.history.len() < self.hp.max_outer_iters {
            self.sweep()?;
            if self.converged() {
                converged = true;
                break;
            }
        }
        let skipped = decorrelation::balance_loss(self.x, &self.weights).skipped;
        Ok(FitResult {
            centroids: self.centroids.expect("at least one sweep"),
            assignments: self.assignments,
            weights: self.weights,
            iterations: self.history.len(),
            objective_history: self.history,
            converged,
            skipped_features_last: skipped,
            stalled_sweeps: self.stalled_sweeps,
        })
    }
}

/// Fits the model from `init_labels` or, if absent, a seeded random labeling.
pub fn fit(x: &DataMatrix, hp: &HyperParams, init_labels: Option<&[usize]>) -> Result<FitResult> {
    DckmSolver::new(x, hp, init_labels)?.run()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartSummary {
    pub seed: u64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct RestartReport {
    pub best: FitResult,
    pub best_index: usize,
    pub runs: Vec<RestartSummary>,
}

/// Runs [`fit`] with seeds `hp.seed .. hp.seed + hp.restarts` and keeps the
/// run with the lowest final objective (earliest run on ties).
pub fn fit_restarts(x: &DataMatrix, hp: &HyperParams) -> Result<RestartReport> {
    hp.validate()?;
    let results = par::map_indexed(hp.restarts, |r| {
        let hp = HyperParams { seed: hp.seed.wrapping_add(r as u64), ..hp.clone() };
        fit(x, &hp, None)
    });
    let results: Vec<FitResult> = results.into_iter().collect::<Result<_>>()?;
    let runs = results
        .iter()
        .enumerate()
        .map(|(r, fit)| RestartSummary {
            seed: hp.seed.wrapping_add(r as u64),
            objective: fit.final_objective(),
            iterations: fit.iterations,
            converged: fit.converged,
            labels: fit.assignments.labels().to_vec(),
        })
        .collect();
    let best_index = best_run(results.iter().map(FitResult::final_objective));
    let best = results.into_iter().nth(best_index).expect("index in range");
    Ok(RestartReport { best, best_index, runs })
}

/// Index of the smallest value; the first one wins ties.
pub(crate) fn best_run(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::INFINITY;
    for (i, v) in values.enumerate() {
        if v < best_value {
            best = i;
            best_value = v;
        }
    }
    best
}
