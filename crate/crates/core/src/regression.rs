//! Normal-equation accumulators and the ridge readout solve.
//!
//! A [`NormalAccumulator`] holds `X·Xᵀ`, `Yᵗ·Xᵀ` and the number of steps
//! summed into them. Because both are plain sums over time steps they can be
//! merged and subtracted, which is what lets cross-validation derive every
//! split's training statistics without running the reservoir again.
//!
//! Every entry carries a compensation term, so sums are close to correctly
//! rounded regardless of the order in which steps, segments and folds are
//! combined. Two routes to the same statistics therefore agree far more
//! tightly than plain floating-point summation would allow.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;
use crate::reservoir::column;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegressionError {
    #[error("dimension mismatch: expected {what} of size {expected}, got {actual}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("cannot subtract {part} accumulated steps from {whole}")]
    CountUnderflow { whole: usize, part: usize },
    #[error("accumulator is empty; nothing to train on")]
    Empty,
    #[error("regularization must be a nonnegative finite number, got {0}")]
    InvalidBeta(f64),
    #[error(
        "system matrix is singular or indefinite (pivot {pivot} = {value:e}, largest diagonal {max_diagonal:e}, condition estimate {condition:e}); retry with a larger regularization"
    )]
    Singular {
        pivot: usize,
        value: f64,
        max_diagonal: f64,
        condition: f64,
    },
}

/// Running sufficient statistics of a linear least-squares readout.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalAccumulator {
    s: DMatrix<f64>,
    p: DMatrix<f64>,
    // Low-order parts: the exact sums are `s + s_lo` and `p + p_lo`.
    s_lo: DMatrix<f64>,
    p_lo: DMatrix<f64>,
    count: usize,
}

/// Knuth's error-free sum: `a + b = s + e` exactly.
#[inline(always)]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Adds `(b, b_lo)` into `(hi, lo)` and renormalizes so `hi` stays the
/// rounded value of the pair.
#[inline(always)]
fn add_pair(hi: &mut f64, lo: &mut f64, b: f64, b_lo: f64) {
    let (s, e) = two_sum(*hi, b);
    let t = *lo + b_lo + e;
    let h = s + t;
    *lo = t - (h - s);
    *hi = h;
}

fn add_pairs(hi: &mut DMatrix<f64>, lo: &mut DMatrix<f64>, b: &DMatrix<f64>, b_lo: &DMatrix<f64>, sign: f64) {
    let hs = hi.as_mut_slice().iter_mut().zip(lo.as_mut_slice().iter_mut());
    for ((h, l), (&bh, &bl)) in hs.zip(b.as_slice().iter().zip(b_lo.as_slice())) {
        add_pair(h, l, sign * bh, sign * bl);
    }
}

impl NormalAccumulator {
    pub fn new(n_r: usize, n_y: usize) -> Self {
        Self {
            s: DMatrix::zeros(n_r, n_r),
            p: DMatrix::zeros(n_y, n_r),
            s_lo: DMatrix::zeros(n_r, n_r),
            p_lo: DMatrix::zeros(n_y, n_r),
            count: 0,
        }
    }

    /// Statistics of a whole design matrix `x` (`n_r × T`) and targets `y` (`n_y × T`).
    pub fn from_batch(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Self, RegressionError> {
        if x.ncols() != y.ncols() {
            return Err(RegressionError::Dimension {
                what: "target columns",
                expected: x.ncols(),
                actual: y.ncols(),
            });
        }
        let mut acc = Self::new(x.nrows(), y.nrows());
        for (xc, yc) in x.column_iter().zip(y.column_iter()) {
            acc.add_step(xc.as_slice(), yc.as_slice());
        }
        Ok(acc)
    }

    pub fn n_r(&self) -> usize {
        self.s.nrows()
    }

    pub fn n_y(&self) -> usize {
        self.p.nrows()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// `X·Xᵀ`
    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    /// `Yᵗ·Xᵀ`
    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    /// Adds one time step.
    pub fn accumulate(&mut self, v: &[f64], y: &[f64]) -> Result<(), RegressionError> {
        if v.len() != self.n_r() {
            return Err(RegressionError::Dimension {
                what: "expanded state",
                expected: self.n_r(),
                actual: v.len(),
            });
        }
        if y.len() != self.n_y() {
            return Err(RegressionError::Dimension {
                what: "target vector",
                expected: self.n_y(),
                actual: y.len(),
            });
        }
        self.add_step(v, y);
        Ok(())
    }

    fn add_step(&mut self, v: &[f64], y: &[f64]) {
        let n_r = v.len();
        let n_y = y.len();
        let (s, s_lo) = (self.s.as_mut_slice(), self.s_lo.as_mut_slice());
        for (j, &vj) in v.iter().enumerate() {
            let col = j * n_r..(j + 1) * n_r;
            for ((h, l), &vi) in s[col.clone()].iter_mut().zip(&mut s_lo[col]).zip(v) {
                add_pair(h, l, vi * vj, 0.0);
            }
        }
        let (p, p_lo) = (self.p.as_mut_slice(), self.p_lo.as_mut_slice());
        for (j, &vj) in v.iter().enumerate() {
            let col = j * n_y..(j + 1) * n_y;
            for ((h, l), &yi) in p[col.clone()].iter_mut().zip(&mut p_lo[col]).zip(y) {
                add_pair(h, l, yi * vj, 0.0);
            }
        }
        self.count += 1;
    }

    fn check_same_shape(&self, other: &Self) -> Result<(), RegressionError> {
        if self.n_r() != other.n_r() {
            return Err(RegressionError::Dimension {
                what: "expanded state",
                expected: self.n_r(),
                actual: other.n_r(),
            });
        }
        if self.n_y() != other.n_y() {
            return Err(RegressionError::Dimension {
                what: "output",
                expected: self.n_y(),
                actual: other.n_y(),
            });
        }
        Ok(())
    }

    /// Statistics of `self` with the steps of `part` removed.
    pub fn subtract(&self, part: &Self) -> Result<Self, RegressionError> {
        self.check_same_shape(part)?;
        if part.count > self.count {
            return Err(RegressionError::CountUnderflow {
                whole: self.count,
                part: part.count,
            });
        }
        if part.count == self.count {
            // Exact zero keeps `count == 0 ⇔ s == 0` free of rounding residue.
            return Ok(Self::new(self.n_r(), self.n_y()));
        }
        let mut out = self.clone();
        add_pairs(&mut out.s, &mut out.s_lo, &part.s, &part.s_lo, -1.0);
        add_pairs(&mut out.p, &mut out.p_lo, &part.p, &part.p_lo, -1.0);
        out.count -= part.count;
        Ok(out)
    }

    pub fn merge(&self, other: &Self) -> Result<Self, RegressionError> {
        let mut out = self.clone();
        out.merge_from(other)?;
        Ok(out)
    }

    pub fn merge_from(&mut self, other: &Self) -> Result<(), RegressionError> {
        self.check_same_shape(other)?;
        add_pairs(&mut self.s, &mut self.s_lo, &other.s, &other.s_lo, 1.0);
        add_pairs(&mut self.p, &mut self.p_lo, &other.p, &other.p_lo, 1.0);
        self.count += other.count;
        Ok(())
    }

    /// Smallest diagonal entry of `s` relative to its trace. Negative values
    /// reveal cancellation after subtraction.
    pub fn min_relative_diagonal(&self) -> f64 {
        let trace = self.s.trace();
        if trace <= 0.0 {
            return if self.count == 0 { 0.0 } else { f64::NEG_INFINITY };
        }
        self.s.diagonal().iter().fold(f64::INFINITY, |m, &d| m.min(d)) / trace
    }
}

/// A linear readout `y = W_out · [1; u; x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedReadout {
    pub w_out: DMatrix<f64>,
    pub beta: f64,
    pub train_count: usize,
}

impl TrainedReadout {
    pub fn zeros(n_y: usize, n_r: usize) -> Self {
        Self {
            w_out: DMatrix::zeros(n_y, n_r),
            beta: 0.0,
            train_count: 0,
        }
    }

    pub fn n_y(&self) -> usize {
        self.w_out.nrows()
    }

    pub fn n_r(&self) -> usize {
        self.w_out.ncols()
    }

    pub fn predict(&self, v: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_y());
        self.predict_into(v, out.as_mut_slice());
        out
    }

    /// Writes `W_out · v` into `out` without allocating.
    pub fn predict_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.n_r());
        out.iter_mut().for_each(|o| *o = 0.0);
        let n_y = self.n_y();
        let w = self.w_out.as_slice();
        for (j, vj) in v.iter().enumerate() {
            let col = &w[j * n_y..(j + 1) * n_y];
            for (o, wij) in out.iter_mut().zip(col) {
                *o += wij * vj;
            }
        }
    }

    /// `Y = W_out · X` for a design matrix with one state per column.
    pub fn predict_batch(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n_y(), x.ncols());
        for (j, mut col) in out.column_iter_mut().enumerate() {
            self.predict_into(column(x, j), col.as_mut_slice());
        }
        out
    }

    /// Elementwise mean of several readouts; `beta` is the mean of their betas.
    pub fn average(readouts: &[&TrainedReadout]) -> Option<TrainedReadout> {
        let first = readouts.first()?;
        let mut w = DMatrix::zeros(first.n_y(), first.n_r());
        for r in readouts {
            w += &r.w_out;
        }
        let k = readouts.len() as f64;
        Some(TrainedReadout {
            w_out: w / k,
            beta: readouts.iter().map(|r| r.beta).sum::<f64>() / k,
            train_count: readouts.iter().map(|r| r.train_count).max().unwrap_or(0),
        })
    }
}

/// `(s + sᵀ)/2 + β·I'`, where `I'` has its `(0,0)` entry zeroed when the
/// bias is excluded from regularization.
pub fn system_matrix(acc: &NormalAccumulator, beta: f64, exclude_bias: bool) -> DMatrix<f64> {
    let s = acc.s();
    let mut a = (s + s.transpose()) * 0.5;
    let start = usize::from(exclude_bias);
    for i in start..a.nrows() {
        a[(i, i)] += beta;
    }
    a
}

/// Solves `W_out · (s + β·I') = p` by Cholesky factorization followed by one
/// step of iterative refinement.
pub fn ridge_solve(
    acc: &NormalAccumulator,
    beta: f64,
    exclude_bias: bool,
) -> Result<TrainedReadout, RegressionError> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(RegressionError::InvalidBeta(beta));
    }
    if acc.is_empty() {
        return Err(RegressionError::Empty);
    }
    let a = system_matrix(acc, beta, exclude_bias);
    let chol = Cholesky::factor(&a)?;
    let rhs = acc.p().transpose();
    let mut x = chol.solve(&rhs);
    let residual = &rhs - &a * &x;
    x += chol.solve(&residual);
    Ok(TrainedReadout {
        w_out: x.transpose(),
        beta,
        train_count: acc.count(),
    })
}

/// Lower-triangular factor `L` with `A = L·Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: DMatrix<f64>,
}

impl Cholesky {
    /// Factors a symmetric matrix, rejecting pivots that are not clearly
    /// positive relative to the largest diagonal entry.
    pub fn factor(a: &DMatrix<f64>) -> Result<Self, RegressionError> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "Cholesky needs a square matrix");
        let max_diagonal = a.diagonal().iter().fold(0.0f64, |m, &d| m.max(d.abs()));
        let threshold = (n as f64) * f64::EPSILON * max_diagonal;
        let mut l = DMatrix::<f64>::zeros(n, n);
        let mut min_pivot = f64::INFINITY;
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > threshold) {
                return Err(RegressionError::Singular {
                    pivot: j,
                    value: d,
                    max_diagonal,
                    condition: if d > 0.0 { max_diagonal / d } else { f64::INFINITY },
                });
            }
            min_pivot = min_pivot.min(d);
            let ljj = d.sqrt();
            l[(j, j)] = ljj;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        log::trace!("cholesky pivot ratio {:e}", max_diagonal / min_pivot);
        Ok(Self { l })
    }

    /// Solves `A·X = B` column by column.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.l.nrows();
        let mut x = b.clone();
        for c in 0..x.ncols() {
            for i in 0..n {
                let mut s = x[(i, c)];
                for k in 0..i {
                    s -= self.l[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s / self.l[(i, i)];
            }
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for k in i + 1..n {
                    s -= self.l[(k, i)] * x[(k, c)];
                }
                x[(i, c)] = s / self.l[(i, i)];
            }
        }
        x
    }

    pub fn factor_l(&self) -> &DMatrix<f64> {
        &self.l
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn acc_from(steps: &[(Vec<f64>, Vec<f64>)]) -> NormalAccumulator {
        let mut acc = NormalAccumulator::new(steps[0].0.len(), steps[0].1.len());
        for (v, y) in steps {
            acc.accumulate(v, y).unwrap();
        }
        acc
    }

    #[test]
    fn single_step_is_outer_product() {
        let acc = acc_from(&[(vec![1.0, 2.0, -1.0], vec![3.0])]);
        assert_eq!(
            acc.s(),
            &DMatrix::from_row_slice(3, 3, &[1.0, 2.0, -1.0, 2.0, 4.0, -2.0, -1.0, -2.0, 1.0])
        );
        assert_eq!(acc.p(), &DMatrix::from_row_slice(1, 3, &[3.0, 6.0, -3.0]));
        assert_eq!(acc.count(), 1);
    }

    #[test]
    fn whole_minus_whole_is_empty() {
        let acc = acc_from(&[(vec![1.0, 0.5], vec![2.0]), (vec![1.0, -0.3], vec![1.0])]);
        let zero = acc.subtract(&acc).unwrap();
        assert!(zero.is_empty());
        assert_eq!(zero.s(), &DMatrix::zeros(2, 2));
        assert_eq!(zero.p(), &DMatrix::zeros(1, 2));
    }

    #[test]
    fn subtract_underflow_is_an_error() {
        let small = acc_from(&[(vec![1.0, 0.5], vec![2.0])]);
        let big = acc_from(&[(vec![1.0, 0.5], vec![2.0]), (vec![1.0, 0.1], vec![0.0])]);
        assert_eq!(
            small.subtract(&big),
            Err(RegressionError::CountUnderflow { whole: 1, part: 2 })
        );
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = NormalAccumulator::new(3, 1);
        let b = NormalAccumulator::new(4, 1);
        assert!(matches!(a.merge(&b), Err(RegressionError::Dimension { .. })));
        let mut c = NormalAccumulator::new(3, 1);
        assert!(c.accumulate(&[1.0, 2.0], &[0.0]).is_err());
        assert!(c.accumulate(&[1.0, 2.0, 3.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn merge_identity_and_commutativity() {
        let a = acc_from(&[(vec![1.0, 0.5], vec![2.0]), (vec![1.0, -0.3], vec![1.0])]);
        let b = acc_from(&[(vec![1.0, 0.9], vec![-1.0])]);
        let empty = NormalAccumulator::new(2, 1);
        assert_eq!(empty.merge(&a).unwrap(), a);
        let ab = a.merge(&b).unwrap();
        let ba = b.merge(&a).unwrap();
        assert!((ab.s() - ba.s()).amax() <= 1e-12);
        assert_eq!(ab.count(), 3);
    }

    #[test]
    fn identity_system_solves_to_rhs() {
        let mut acc = NormalAccumulator::new(2, 1);
        acc.s = DMatrix::identity(2, 2);
        acc.p = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        acc.count = 2;
        let r = ridge_solve(&acc, 0.0, false).unwrap();
        assert_eq!(r.w_out, DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
        assert_eq!(r.train_count, 2);
    }

    #[test]
    fn huge_beta_shrinks_weights() {
        let acc = acc_from(&[
            (vec![1.0, 0.2, -0.4], vec![0.7]),
            (vec![1.0, -0.5, 0.3], vec![-0.2]),
            (vec![1.0, 0.9, 0.1], vec![0.4]),
        ]);
        let r = ridge_solve(&acc, 1e12, false).unwrap();
        assert!(r.w_out.amax() <= 1e-6 * acc.p().amax());
    }

    #[test]
    fn rank_deficient_without_beta_is_singular() {
        let acc = acc_from(&[(vec![1.0, 2.0, 3.0], vec![1.0])]);
        match ridge_solve(&acc, 0.0, true) {
            Err(RegressionError::Singular { pivot, condition, .. }) => {
                assert_eq!(pivot, 1);
                assert!(condition > 1e12);
            }
            other => panic!("expected singular, got {other:?}"),
        }
        // Bias excluded from regularization but β>0 on the other entries
        // still leaves a rank-one bias block, which is positive here.
        assert!(ridge_solve(&acc, 1e-3, true).is_ok());
    }

    #[test]
    fn exclude_bias_leaves_first_diagonal_untouched() {
        let acc = acc_from(&[(vec![1.0, 2.0], vec![1.0]), (vec![1.0, -1.0], vec![0.0])]);
        let with = system_matrix(&acc, 0.5, true);
        let without = system_matrix(&acc, 0.5, false);
        assert_eq!(with[(0, 0)], acc.s()[(0, 0)]);
        assert_eq!(without[(0, 0)], acc.s()[(0, 0)] + 0.5);
        assert_eq!(with[(1, 1)], acc.s()[(1, 1)] + 0.5);
    }

    #[test]
    fn negative_beta_rejected() {
        let acc = acc_from(&[(vec![1.0, 2.0], vec![1.0])]);
        assert_eq!(ridge_solve(&acc, -1.0, true), Err(RegressionError::InvalidBeta(-1.0)));
        let empty = NormalAccumulator::new(2, 1);
        assert_eq!(ridge_solve(&empty, 1.0, true), Err(RegressionError::Empty));
    }

    #[test]
    fn predict_selector_and_zero() {
        let r = TrainedReadout::zeros(2, 4);
        assert_eq!(r.predict(&[1.0, 2.0, 3.0, 4.0]), DVector::zeros(2));
        let sel = TrainedReadout {
            w_out: DMatrix::from_row_slice(1, 4, &[0.0, 0.0, 0.0, 1.0]),
            beta: 0.0,
            train_count: 1,
        };
        assert_eq!(sel.predict(&[1.0, 0.3, -0.2, 0.77])[0], 0.77);
    }

    #[test]
    fn average_of_identical_readouts_is_identity() {
        let r = TrainedReadout {
            w_out: DMatrix::from_row_slice(1, 3, &[0.25, -0.5, 2.0]),
            beta: 1e-3,
            train_count: 10,
        };
        let avg = TrainedReadout::average(&[&r, &r, &r]).unwrap();
        assert_eq!(avg.w_out, r.w_out);
    }
}
