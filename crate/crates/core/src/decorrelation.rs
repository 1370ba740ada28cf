//! Global decorrelation regularizer.
//!
//! For every target feature `j` the samples split into a treated group
//! (`x_ij = 1`) and a control group (`x_ij = 0`). The regularizer sums, over
//! all `j`, the squared distance between the weighted means of the remaining
//! features in the two groups. All features share one weight vector.
//!
//! A feature whose treated or control weight mass is at most [`MASS_EPS`] is
//! skipped: it contributes nothing to the loss or the gradient, and the number
//! of skipped features is reported.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{DckmError, Result};
use crate::par;
use crate::types::{DataMatrix, SampleWeights};

/// Minimum weighted group mass for a feature to be balanced.
pub const MASS_EPS: f64 = 1e-12;

/// Difference between the weighted treated and control moments of the
/// remaining features for one target feature. `residual[feature]` is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceResidual {
    pub feature: usize,
    pub residual: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceLoss {
    pub value: f64,
    /// Features left out because one of their groups had no weight mass.
    pub skipped: usize,
}

/// Returns `x` with column `j` replaced by zeros.
pub fn remaining_features(x: ArrayView2<'_, f64>, j: usize) -> Result<Array2<f64>> {
    if j >= x.ncols() {
        return Err(DckmError::IndexOutOfRange { index: j, len: x.ncols() });
    }
    let mut out = x.to_owned();
    out.column_mut(j).fill(0.0);
    Ok(out)
}

fn check_args(x: &DataMatrix, j: usize, w: &SampleWeights) -> Result<()> {
    if j >= x.d() {
        return Err(DckmError::IndexOutOfRange { index: j, len: x.d() });
    }
    if w.len() != x.n() {
        return Err(DckmError::ShapeMismatch(format!("{} weights for {} samples", w.len(), x.n())));
    }
    Ok(())
}

/// Weighted mean of the remaining features over the samples selected by
/// `membership(x_ij)`, which returns the sample's share in the group.
fn group_moment(
    x: &DataMatrix,
    j: usize,
    w: &SampleWeights,
    group: &'static str,
    membership: impl Fn(f64) -> f64,
) -> Result<Array1<f64>> {
    check_args(x, j, w)?;
    let mut sum = Array1::<f64>::zeros(x.d());
    let mut mass = 0.0;
    for (row, &wi) in x.view().rows().into_iter().zip(w.w()) {
        let share = wi * membership(row[j]);
        if share == 0.0 {
            continue;
        }
        mass += share;
        sum.scaled_add(share, &row);
    }
    if mass <= MASS_EPS {
        return Err(DckmError::DegenerateGroup { feature: j, group });
    }
    sum[j] = 0.0;
    Ok(sum / mass)
}

/// Weighted first moment of the remaining features in the treated group of
/// feature `j`.
pub fn weighted_treated_moment(x: &DataMatrix, j: usize, w: &SampleWeights) -> Result<Array1<f64>> {
    group_moment(x, j, w, "treated", |v| v)
}

/// Weighted first moment of the remaining features in the control group of
/// feature `j`.
pub fn weighted_control_moment(x: &DataMatrix, j: usize, w: &SampleWeights) -> Result<Array1<f64>> {
    group_moment(x, j, w, "control", |v| 1.0 - v)
}

pub fn balance_residual(x: &DataMatrix, j: usize, w: &SampleWeights) -> Result<BalanceResidual> {
    let treated = weighted_treated_moment(x, j, w)?;
    let control = weighted_control_moment(x, j, w)?;
    Ok(BalanceResidual { feature: j, residual: treated - control })
}

/// Moments of every target feature at once, computed from two weighted Gram
/// matrices. Row `j` of `treated`/`control` holds the moments for target `j`.
struct BalanceTerms {
    treated: Array2<f64>,
    control: Array2<f64>,
    residual: Array2<f64>,
    treated_mass: Array1<f64>,
    control_mass: Array1<f64>,
    active: Vec<bool>,
}

impl BalanceTerms {
    fn compute(x: ArrayView2<'_, f64>, w: ArrayView1<'_, f64>) -> Self {
        let d = x.ncols();
        let w_col = w.insert_axis(Axis(1));
        let xw = &x * &w_col;
        let cw = (1.0 - &x) * w_col;
        let treated_sums = xw.t().dot(&x);
        let control_sums = cw.t().dot(&x);
        let treated_mass = xw.sum_axis(Axis(0));
        let control_mass = cw.sum_axis(Axis(0));

        let rows = par::map_indexed(d, |j| {
            let (a, b) = (treated_mass[j], control_mass[j]);
            if a <= MASS_EPS || b <= MASS_EPS {
                return None;
            }
            let mut t = treated_sums.row(j).to_owned() / a;
            let mut c = control_sums.row(j).to_owned() / b;
            t[j] = 0.0;
            c[j] = 0.0;
            Some((t, c))
        });

        let mut treated = Array2::zeros((d, d));
        let mut control = Array2::zeros((d, d));
        let mut active = vec![false; d];
        for (j, row) in rows.into_iter().enumerate() {
            if let Some((t, c)) = row {
                treated.row_mut(j).assign(&t);
                control.row_mut(j).assign(&c);
                active[j] = true;
            }
        }
        let residual = &treated - &control;
        Self { treated, control, residual, treated_mass, control_mass, active }
    }

    fn loss(&self) -> BalanceLoss {
        let value = self.residual.rows().into_iter().map(|r| r.dot(&r)).sum();
        let skipped = self.active.iter().filter(|a| !**a).count();
        BalanceLoss { value, skipped }
    }

    /// Gradient of the loss with respect to `w`.
    ///
    /// d(treated_k)/dw_i = x_ij (x_ik - treated_k) / treated_mass, and the
    /// control moment follows the same rule with `1 - x_ij`.
    fn gradient_w(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        let n = x.nrows();
        // proj[i, j] = <x_i, residual_j>
        let proj = x.dot(&self.residual.t());
        let c_treated: Vec<f64> =
            self.residual.rows().into_iter().zip(self.treated.rows()).map(|(r, t)| r.dot(&t)).collect();
        let c_control: Vec<f64> =
            self.residual.rows().into_iter().zip(self.control.rows()).map(|(r, c)| r.dot(&c)).collect();
        let grad = par::map_indexed(n, |i| {
            let xi = x.row(i);
            let pi = proj.row(i);
            let mut g = 0.0;
            for j in 0..xi.len() {
                if !self.active[j] {
                    continue;
                }
                let xij = xi[j];
                g += xij * (pi[j] - c_treated[j]) / self.treated_mass[j]
                    - (1.0 - xij) * (pi[j] - c_control[j]) / self.control_mass[j];
            }
            2.0 * g
        });
        Array1::from(grad)
    }
}

/// Sum over all target features of the squared balance residual.
pub fn balance_loss(x: &DataMatrix, w: &SampleWeights) -> BalanceLoss {
    assert_eq!(w.len(), x.n(), "weight length must equal sample count");
    BalanceTerms::compute(x.view(), w.w().view()).loss()
}

/// Gradient of `balance_loss(x, omega * omega)` with respect to `omega`.
pub fn balance_gradient(x: &DataMatrix, omega: ArrayView1<'_, f64>) -> Array1<f64> {
    balance_loss_and_gradient(x, omega).1
}

/// Loss and omega-gradient from a single pass over the data.
pub fn balance_loss_and_gradient(x: &DataMatrix, omega: ArrayView1<'_, f64>) -> (BalanceLoss, Array1<f64>) {
    assert_eq!(omega.len(), x.n(), "omega length must equal sample count");
    let w = omega.mapv(|o| o * o);
    let terms = BalanceTerms::compute(x.view(), w.view());
    let grad_w = terms.gradient_w(x.view());
    (terms.loss(), 2.0 * &omega * &grad_w)
}
