//! Kernel expansions `p(x) + Σ_j a_j h(x − z_j)`, the interpolation solve
//! that produces them, and native-space norms of finite expansions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointSet;
use crate::kernels::{Kernel, KernelSpec};
use crate::linalg::{dot, norm2, Matrix, SymmetricIndefinite};
use crate::multiindex::MultiIndex;
use crate::polybasis::{is_determining_set, MonomialBasis};
use crate::scalar::Real;

/// Default relative tolerance for the moment conditions `Pᵀa = 0`.
pub const MOMENT_TOLERANCE: f64 = 1e-8;

/// Relative tolerance for a slightly negative kernel quadratic form.
pub const NEGATIVE_FORM_TOLERANCE: f64 = 1e-10;

/// A finite kernel expansion whose weights satisfy the moment conditions
/// over its centers.
#[derive(Clone, Debug)]
pub struct KernelExpansion<T> {
    kernel: Kernel,
    basis: MonomialBasis,
    centers: PointSet,
    centers_t: Vec<Vec<T>>,
    weights: Vec<T>,
    poly_coeffs: Vec<T>,
}

impl<T: Real> KernelExpansion<T> {
    /// Validate lengths and the moment conditions (relative tolerance [`MOMENT_TOLERANCE`]).
    pub fn new(
        kernel: Kernel,
        centers: PointSet,
        weights: Vec<T>,
        poly_coeffs: Vec<T>,
    ) -> Result<Self> {
        let expansion = Self::unchecked(kernel, centers, weights, poly_coeffs)?;
        let residual = expansion.moment_residual();
        if residual > MOMENT_TOLERANCE {
            return Err(Error::MomentViolation {
                residual,
                tolerance: MOMENT_TOLERANCE,
            });
        }
        Ok(expansion)
    }

    /// Project `raw_weights` onto `{a : Pᵀa = 0}` before building the expansion.
    pub fn projected(
        kernel: Kernel,
        centers: PointSet,
        raw_weights: Vec<T>,
        poly_coeffs: Vec<T>,
    ) -> Result<Self> {
        let mut expansion = Self::unchecked(kernel, centers, raw_weights, poly_coeffs)?;
        let raw_norm = norm2(&expansion.weights).to_f64();
        let q = expansion.basis.len();
        if q > 0 {
            if !is_determining_set(&expansion.centers, expansion.kernel.cpd_order()) {
                return Err(Error::NotDetermining {
                    degree: expansion.basis.degree(),
                });
            }
            let p = expansion.basis_matrix_t();
            // a ← a − P (PᵀP)⁻¹ Pᵀ a
            let pta = p.tr_mul_vec(&expansion.weights);
            let mut gram = Matrix::zeros(q, q);
            for i in 0..expansion.weights.len() {
                let row = p.row(i);
                for r in 0..q {
                    for c in 0..=r {
                        gram[(r, c)] += row[r].clone() * row[c].clone();
                    }
                }
            }
            let coeff = SymmetricIndefinite::factor(&gram)?.solve(&pta)?;
            let correction = p.mul_vec(&coeff);
            for (w, c) in expansion.weights.iter_mut().zip(correction) {
                *w -= c;
            }
        }
        // Measured against the raw weights: a nearly polynomial input projects to noise.
        let pta = norm2(&expansion.basis_matrix_t().tr_mul_vec(&expansion.weights)).to_f64();
        let residual = if raw_norm > 0.0 { pta / raw_norm } else { 0.0 };
        if residual > MOMENT_TOLERANCE {
            return Err(Error::MomentViolation {
                residual,
                tolerance: MOMENT_TOLERANCE,
            });
        }
        Ok(expansion)
    }

    fn unchecked(
        kernel: Kernel,
        centers: PointSet,
        weights: Vec<T>,
        poly_coeffs: Vec<T>,
    ) -> Result<Self> {
        if centers.dim() != kernel.dim() {
            return Err(Error::DimensionMismatch {
                expected: kernel.dim(),
                found: centers.dim(),
            });
        }
        if weights.len() != centers.len() {
            return Err(Error::DimensionMismatch {
                expected: centers.len(),
                found: weights.len(),
            });
        }
        let basis = MonomialBasis::new(kernel.dim(), kernel.cpd_order());
        if poly_coeffs.len() != basis.len() {
            return Err(Error::DimensionMismatch {
                expected: basis.len(),
                found: poly_coeffs.len(),
            });
        }
        if weights.iter().chain(&poly_coeffs).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("expansion coefficient"));
        }
        let centers_t = lift_points(&centers);
        Ok(KernelExpansion {
            kernel,
            basis,
            centers,
            centers_t,
            weights,
            poly_coeffs,
        })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn basis(&self) -> &MonomialBasis {
        &self.basis
    }

    pub fn centers(&self) -> &PointSet {
        &self.centers
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn poly_coeffs(&self) -> &[T] {
        &self.poly_coeffs
    }

    fn basis_matrix_t(&self) -> Matrix<T> {
        let rows = self.centers_t.iter().map(|z| self.basis.row(z)).collect();
        Matrix::from_rows(rows).unwrap_or_else(|_| Matrix::zeros(0, 0))
    }

    /// `‖Pᵀa‖ / ‖a‖` (0 when there is no polynomial part or no weight).
    pub fn moment_residual(&self) -> f64 {
        if self.basis.is_empty() || self.weights.is_empty() {
            return 0.0;
        }
        let pta = self.basis_matrix_t().tr_mul_vec(&self.weights);
        let norm_a = norm2(&self.weights).to_f64();
        if norm_a == 0.0 {
            return 0.0;
        }
        norm2(&pta).to_f64() / norm_a
    }

    fn check_point(&self, x: &[T]) -> Result<()> {
        if x.len() != self.kernel.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.kernel.dim(),
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("evaluation point"));
        }
        Ok(())
    }

    /// `p(x) + Σ_j a_j h(x − z_j)`.
    pub fn evaluate(&self, x: &[T]) -> Result<T> {
        self.check_point(x)?;
        let mut total = dot(&self.basis.row(x), &self.poly_coeffs);
        for (z, w) in self.centers_t.iter().zip(&self.weights) {
            let r2 = x
                .iter()
                .zip(z)
                .fold(T::zero(), |acc, (a, b)| {
                    let d = a.clone() - b.clone();
                    acc + d.clone() * d
                });
            total += w.clone() * self.kernel.profile_from_sq_norm(r2);
        }
        Ok(total)
    }

    /// `D^α` of the expansion at `x`.
    pub fn evaluate_derivative(&self, alpha: &MultiIndex, x: &[T]) -> Result<T> {
        Ok(self
            .evaluate_derivatives(std::slice::from_ref(alpha), x)?
            .pop()
            .expect("one value per multi-index"))
    }

    /// `D^α` for several multi-indices, sharing kernel profile evaluations.
    pub fn evaluate_derivatives(&self, alphas: &[MultiIndex], x: &[T]) -> Result<Vec<T>> {
        self.check_point(x)?;
        let mut out: Vec<T> = alphas
            .iter()
            .map(|alpha| dot(&self.basis.derivative_row(alpha, x), &self.poly_coeffs))
            .collect();
        for (z, w) in self.centers_t.iter().zip(&self.weights) {
            let diff: Vec<T> = x.iter().zip(z).map(|(a, b)| a.clone() - b.clone()).collect();
            let values = self.kernel.eval_derivatives(alphas, &diff)?;
            for (o, v) in out.iter_mut().zip(values) {
                *o += w.clone() * v;
            }
        }
        Ok(out)
    }

    /// Kernel Gram matrix `A_{ij} = h(z_i − z_j)` over the centers.
    pub fn gram_matrix(&self) -> Matrix<T> {
        kernel_matrix(&self.kernel, &self.centers_t)
    }

    /// Native (semi-)norm `sqrt(aᵀ A a)`; the polynomial part contributes nothing.
    pub fn native_norm(&self) -> Result<T> {
        let residual = self.moment_residual();
        if residual > MOMENT_TOLERANCE {
            return Err(Error::MomentViolation {
                residual,
                tolerance: MOMENT_TOLERANCE,
            });
        }
        if self.weights.is_empty() {
            return Ok(T::zero());
        }
        let a = self.gram_matrix();
        let form = dot(&self.weights, &a.mul_vec(&self.weights));
        let scale = dot(&self.weights, &self.weights)
            * self.kernel.profile_from_sq_norm(T::zero()).abs();
        if form < T::zero() {
            if form.abs() > T::from_f64(NEGATIVE_FORM_TOLERANCE) * scale {
                return Err(Error::NegativeQuadraticForm {
                    value: form.to_f64(),
                });
            }
            return Ok(T::zero());
        }
        Ok(form.sqrt())
    }

    /// Same expansion with coefficients converted to another scalar type.
    pub fn map_scalar<U: Real>(&self) -> KernelExpansion<U> {
        KernelExpansion {
            kernel: self.kernel.clone(),
            basis: self.basis.clone(),
            centers: self.centers.clone(),
            centers_t: lift_points(&self.centers),
            weights: self.weights.iter().map(|w| U::from_f64(w.to_f64())).collect(),
            poly_coeffs: self
                .poly_coeffs
                .iter()
                .map(|w| U::from_f64(w.to_f64()))
                .collect(),
        }
    }
}

pub(crate) fn lift_points<T: Real>(points: &PointSet) -> Vec<Vec<T>> {
    points
        .iter()
        .map(|p| p.iter().map(|&v| T::from_f64(v)).collect())
        .collect()
}

fn kernel_matrix<T: Real>(kernel: &Kernel, points: &[Vec<T>]) -> Matrix<T> {
    let n = points.len();
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let r2 = points[i]
                .iter()
                .zip(&points[j])
                .fold(T::zero(), |acc, (x, y)| {
                    let d = x.clone() - y.clone();
                    acc + d.clone() * d
                });
            let v = kernel.profile_from_sq_norm(r2);
            a[(j, i)] = v.clone();
            a[(i, j)] = v;
        }
    }
    a
}

/// Data to interpolate: kernel, nodes and values.
#[derive(Clone, Debug)]
pub struct InterpolationProblem<T> {
    kernel: Kernel,
    points: PointSet,
    values: Vec<T>,
}

impl<T: Real> InterpolationProblem<T> {
    pub fn new(kernel: Kernel, points: PointSet, values: Vec<T>) -> Result<Self> {
        if points.dim() != kernel.dim() {
            return Err(Error::DimensionMismatch {
                expected: kernel.dim(),
                found: points.dim(),
            });
        }
        if values.len() != points.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                found: values.len(),
            });
        }
        if points.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("data value"));
        }
        let m = kernel.cpd_order();
        if m >= 1 && !is_determining_set(&points, m) {
            return Err(Error::NotDetermining {
                degree: m as i64 - 1,
            });
        }
        Ok(InterpolationProblem {
            kernel,
            points,
            values,
        })
    }

    /// Problem with values sampled from a function of the node.
    pub fn sampled(
        kernel: Kernel,
        points: PointSet,
        mut f: impl FnMut(&[T]) -> Result<T>,
    ) -> Result<Self> {
        let values = lift_points::<T>(&points)
            .iter()
            .map(|x| f(x))
            .collect::<Result<Vec<_>>>()?;
        Self::new(kernel, points, values)
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn points(&self) -> &PointSet {
        &self.points
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// CPD order `m` of the kernel.
    pub fn cpd_order(&self) -> usize {
        self.kernel.cpd_order()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveOptions {
    /// Reject systems whose condition estimate exceeds this; defaults to
    /// [`default_condition_limit`] for the scalar type.
    pub max_condition: Option<f64>,
}

/// `0.01 / ε` for the working precision (≈ 4.5e13 for `f64`).
pub fn default_condition_limit<T: Real>() -> f64 {
    0.01 / T::epsilon()
}

/// Solved interpolant: an expansion over the nodes plus the condition
/// estimate of its saddle-point system.
#[derive(Clone, Debug)]
pub struct Interpolant<T> {
    expansion: KernelExpansion<T>,
    condition_estimate: f64,
}

/// Solve `[[A, P], [Pᵀ, 0]] [c; b] = [y; 0]`.
pub fn solve<T: Real>(
    problem: &InterpolationProblem<T>,
    options: SolveOptions,
) -> Result<Interpolant<T>> {
    let kernel = problem.kernel.clone();
    let basis = MonomialBasis::new(kernel.dim(), kernel.cpd_order());
    let nodes: Vec<Vec<T>> = lift_points(&problem.points);
    let n = nodes.len();
    let q = basis.len();

    let a = kernel_matrix(&kernel, &nodes);
    let mut system = Matrix::zeros(n + q, n + q);
    for i in 0..n {
        for j in 0..n {
            system[(i, j)] = a[(i, j)].clone();
        }
        for (k, v) in basis.row(&nodes[i]).into_iter().enumerate() {
            system[(i, n + k)] = v.clone();
            system[(n + k, i)] = v;
        }
    }
    let factor = SymmetricIndefinite::factor(&system)?;
    let condition = factor.condition_estimate();
    let limit = options
        .max_condition
        .unwrap_or_else(default_condition_limit::<T>);
    if !condition.is_finite() {
        return Err(Error::SingularSystem { condition });
    }
    if condition > limit {
        return Err(Error::IllConditioned { condition, limit });
    }
    let mut rhs = problem.values.clone();
    rhs.extend(std::iter::repeat_n(T::zero(), q));
    let mut solution = factor.solve(&rhs)?;
    let poly_coeffs = solution.split_off(n);
    let expansion = KernelExpansion {
        kernel,
        basis,
        centers: problem.points.clone(),
        centers_t: nodes,
        weights: solution,
        poly_coeffs,
    };
    Ok(Interpolant {
        expansion,
        condition_estimate: condition,
    })
}

impl<T: Real> Interpolant<T> {
    pub fn kernel(&self) -> &Kernel {
        self.expansion.kernel()
    }

    pub fn nodes(&self) -> &PointSet {
        self.expansion.centers()
    }

    /// Kernel coefficients `c`.
    pub fn coeffs(&self) -> &[T] {
        self.expansion.weights()
    }

    /// Polynomial coefficients `b` over the graded-lex monomial basis.
    pub fn poly_coeffs(&self) -> &[T] {
        self.expansion.poly_coeffs()
    }

    pub fn condition_estimate(&self) -> f64 {
        self.condition_estimate
    }

    pub fn expansion(&self) -> &KernelExpansion<T> {
        &self.expansion
    }

    pub fn evaluate(&self, x: &[T]) -> Result<T> {
        self.expansion.evaluate(x)
    }

    pub fn evaluate_derivative(&self, alpha: &MultiIndex, x: &[T]) -> Result<T> {
        self.expansion.evaluate_derivative(alpha, x)
    }

    pub fn evaluate_derivatives(&self, alphas: &[MultiIndex], x: &[T]) -> Result<Vec<T>> {
        self.expansion.evaluate_derivatives(alphas, x)
    }

    /// `max_i |s(x_i) − y_i|`.
    pub fn node_residual(&self, values: &[T]) -> Result<f64> {
        let mut worst = 0.0f64;
        for (x, y) in self.expansion.centers_t.iter().zip(values) {
            let r = (self.evaluate(x)? - y.clone()).abs().to_f64();
            worst = worst.max(r);
        }
        Ok(worst)
    }

    /// `‖Pᵀc‖ / ‖c‖`.
    pub fn moment_residual(&self) -> f64 {
        self.expansion.moment_residual()
    }

    /// Portable document with coefficients rounded to `f64`.
    pub fn to_document(&self) -> InterpolantDocument {
        InterpolantDocument {
            version: INTERPOLANT_FORMAT_VERSION,
            kernel: self.kernel().spec(),
            dim: self.kernel().dim(),
            basis_order: BASIS_ORDER_TAG.to_string(),
            nodes: self.nodes().points().to_vec(),
            coeffs: self.coeffs().iter().map(Real::to_f64).collect(),
            poly_coeffs: self.poly_coeffs().iter().map(Real::to_f64).collect(),
            condition_estimate: self.condition_estimate,
        }
    }
}

/// `f − s` as an expansion over `Z ∪ X`; coincident centers are merged.
pub fn residual_expansion<T: Real>(
    f: &KernelExpansion<T>,
    s: &Interpolant<T>,
) -> Result<KernelExpansion<T>> {
    if f.kernel.spec() != s.kernel().spec() || f.kernel.dim() != s.kernel().dim() {
        return Err(Error::KernelMismatch);
    }
    let mut centers: Vec<Vec<f64>> = f.centers.points().to_vec();
    let mut weights = f.weights.clone();
    for (x, c) in s.nodes().iter().zip(s.coeffs()) {
        match f.centers.position(x) {
            Some(k) => weights[k] -= c.clone(),
            None => {
                centers.push(x.to_vec());
                weights.push(-c.clone());
            }
        }
    }
    let poly = f
        .poly_coeffs
        .iter()
        .zip(s.poly_coeffs())
        .map(|(a, b)| a.clone() - b.clone())
        .collect();
    let centers = PointSet::new(f.kernel.dim(), centers)?;
    KernelExpansion::unchecked(f.kernel.clone(), centers, weights, poly)
}

pub const INTERPOLANT_FORMAT_VERSION: u32 = 1;
pub const BASIS_ORDER_TAG: &str = "graded-lex";

/// JSON form of a solved interpolant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolantDocument {
    pub version: u32,
    pub kernel: KernelSpec,
    pub dim: usize,
    pub basis_order: String,
    pub nodes: Vec<Vec<f64>>,
    pub coeffs: Vec<f64>,
    pub poly_coeffs: Vec<f64>,
    pub condition_estimate: f64,
}

impl InterpolantDocument {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: InterpolantDocument = serde_json::from_str(text)?;
        if doc.version != INTERPOLANT_FORMAT_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported interpolant format version {}",
                doc.version
            )));
        }
        if doc.basis_order != BASIS_ORDER_TAG {
            return Err(Error::InvalidParameter(format!(
                "unsupported basis order `{}`",
                doc.basis_order
            )));
        }
        Ok(doc)
    }

    /// Rebuild the interpolant; the moment conditions are re-validated.
    pub fn into_interpolant(self) -> Result<Interpolant<f64>> {
        let kernel = Kernel::new(self.kernel, self.dim)?;
        let nodes = PointSet::new(self.dim, self.nodes)?;
        let expansion = KernelExpansion::new(kernel, nodes, self.coeffs, self.poly_coeffs)?;
        Ok(Interpolant {
            expansion,
            condition_estimate: self.condition_estimate,
        })
    }
}
