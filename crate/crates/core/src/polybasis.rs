//! Monomial bases of `P_{m−1}` in graded-lexicographic order and the
//! determining-set (unisolvency) test.

use nalgebra::DMatrix;

use crate::geometry::PointSet;
use crate::linalg::Matrix;
use crate::multiindex::MultiIndex;
use crate::scalar::Real;

/// Monomials `x^γ` with `|γ| ≤ m − 1`; empty when `m = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct MonomialBasis {
    dim: usize,
    m: usize,
    exponents: Vec<MultiIndex>,
}

impl MonomialBasis {
    pub fn new(dim: usize, m: usize) -> Self {
        let exponents = (0..m)
            .flat_map(|degree| MultiIndex::all_of_order(dim, degree))
            .collect();
        MonomialBasis { dim, m, exponents }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Degree `m − 1` (−1 for the empty basis).
    pub fn degree(&self) -> i64 {
        self.m as i64 - 1
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponents(&self) -> &[MultiIndex] {
        &self.exponents
    }

    /// `(x^γ₁, …, x^γ_Q)`
    pub fn row<T: Real>(&self, x: &[T]) -> Vec<T> {
        self.derivative_row(&MultiIndex::zero(self.dim), x)
    }

    /// `(D^α x^γ₁, …, D^α x^γ_Q)`
    pub fn derivative_row<T: Real>(&self, alpha: &MultiIndex, x: &[T]) -> Vec<T> {
        self.exponents
            .iter()
            .map(|gamma| {
                let mut coef = 1.0;
                let mut value = T::one();
                for ((&g, &a), xi) in gamma.parts().iter().zip(alpha.parts()).zip(x) {
                    if a > g {
                        return T::zero();
                    }
                    coef *= ((g - a + 1)..=g).map(f64::from).product::<f64>();
                    value *= xi.powi((g - a) as i32);
                }
                T::from_f64(coef) * value
            })
            .collect()
    }

    /// Evaluation matrix `P_{ik} = x_i^{γ_k}`.
    pub fn basis_matrix(&self, points: &PointSet) -> Matrix<f64> {
        let rows = points.iter().map(|p| self.row(p)).collect::<Vec<_>>();
        if rows.is_empty() || self.is_empty() {
            return Matrix::zeros(points.len(), self.len());
        }
        Matrix::from_rows(rows).expect("rows share the basis length")
    }
}

/// Numerical rank with tolerance `σ_max · max(N, Q) · ε · 16`.
pub fn numerical_rank(m: &Matrix<f64>) -> usize {
    if m.rows() == 0 || m.cols() == 0 {
        return 0;
    }
    let dm = DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)]);
    let sv = dm.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let tol = smax * m.rows().max(m.cols()) as f64 * f64::EPSILON * 16.0;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Whether the only member of `P_{m−1}` vanishing on `points` is zero.
pub fn is_determining_set(points: &PointSet, m: usize) -> bool {
    let basis = MonomialBasis::new(points.dim(), m);
    if basis.is_empty() {
        return true;
    }
    numerical_rank(&basis.basis_matrix(points)) == basis.len()
}
