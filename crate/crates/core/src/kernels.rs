//! Multiquadric-family and Gaussian radial kernels with analytic partial
//! derivatives of any order up to a configurable cap.
//!
//! Both kernels are radial profiles `h(x) = g(t)` of `t = offset + |x|²`, with
//! `offset = c²` for the multiquadric family and `0` for the Gaussian. A
//! derivative `D^α h` is kept as a finite sum of `poly(x) · g^(j)(t)` terms
//! (see [`DerivativeTerms`]); the term lists do not depend on the kernel
//! parameters and are memoized per multi-index.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multiindex::MultiIndex;
use crate::scalar::Real;

/// Default cap on `|α|` for derivative evaluation.
pub const DEFAULT_MAX_ORDER: usize = 6;

/// Parameters of a kernel, independent of the space dimension.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `Γ(−β/2)(c² + |x|²)^{β/2}`, `β ∉ 2ℕ≥0`, `c > 0`.
    Multiquadric { beta: f64, c: f64 },
    /// `exp(−β|x|²)`, `β > 0`.
    Gaussian { beta: f64 },
}

impl KernelSpec {
    pub fn family_name(&self) -> &'static str {
        match self {
            KernelSpec::Multiquadric { .. } => "multiquadric",
            KernelSpec::Gaussian { .. } => "gaussian",
        }
    }

    pub fn beta(&self) -> f64 {
        match *self {
            KernelSpec::Multiquadric { beta, .. } | KernelSpec::Gaussian { beta } => beta,
        }
    }

    pub fn shape(&self) -> Option<f64> {
        match *self {
            KernelSpec::Multiquadric { c, .. } => Some(c),
            KernelSpec::Gaussian { .. } => None,
        }
    }
}

/// A validated radial kernel on `ℝⁿ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    spec: KernelSpec,
    dim: usize,
    max_order: usize,
    // Γ(−β/2) for the multiquadric family, 1 for the Gaussian.
    prefactor: f64,
}

impl Kernel {
    pub fn new(spec: KernelSpec, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidKernel("dimension must be at least 1".into()));
        }
        let prefactor = match spec {
            KernelSpec::Multiquadric { beta, c } => {
                if !beta.is_finite() || !c.is_finite() {
                    return Err(Error::InvalidKernel("beta and c must be finite".into()));
                }
                let half = beta / 2.0;
                if half >= 0.0 && half.fract() == 0.0 {
                    return Err(Error::InvalidKernel(format!(
                        "beta = {beta} is a non-negative even integer"
                    )));
                }
                if c <= 0.0 {
                    return Err(Error::InvalidKernel(format!("c = {c} must be positive")));
                }
                gamma(-half)
            }
            KernelSpec::Gaussian { beta } => {
                if !(beta.is_finite() && beta > 0.0) {
                    return Err(Error::InvalidKernel(format!("beta = {beta} must be positive")));
                }
                1.0
            }
        };
        Ok(Kernel {
            spec,
            dim,
            max_order: DEFAULT_MAX_ORDER,
            prefactor,
        })
    }

    pub fn multiquadric(beta: f64, c: f64, dim: usize) -> Result<Self> {
        Self::new(KernelSpec::Multiquadric { beta, c }, dim)
    }

    pub fn gaussian(beta: f64, dim: usize) -> Result<Self> {
        Self::new(KernelSpec::Gaussian { beta }, dim)
    }

    /// Replace the derivative-order cap.
    pub fn with_max_order(mut self, max_order: usize) -> Self {
        self.max_order = max_order;
        self
    }

    pub fn spec(&self) -> KernelSpec {
        self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    /// Order `m` of conditional positive definiteness.
    pub fn cpd_order(&self) -> usize {
        match self.spec {
            KernelSpec::Multiquadric { beta, .. } if beta > 0.0 => (beta / 2.0).ceil() as usize,
            _ => 0,
        }
    }

    fn offset(&self) -> f64 {
        match self.spec {
            KernelSpec::Multiquadric { c, .. } => c * c,
            KernelSpec::Gaussian { .. } => 0.0,
        }
    }

    fn check_point<T: Real>(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("kernel argument"));
        }
        Ok(())
    }

    fn check_order(&self, alpha: &MultiIndex) -> Result<()> {
        if alpha.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: alpha.dim(),
            });
        }
        if alpha.order() > self.max_order {
            return Err(Error::UnsupportedOrder {
                order: alpha.order(),
                max: self.max_order,
            });
        }
        Ok(())
    }

    /// `h(x)`.
    pub fn eval<T: Real>(&self, x: &[T]) -> Result<T> {
        self.check_point(x)?;
        Ok(self.profile_from_sq_norm(squared_norm(x)))
    }

    /// `g(r²)`, the kernel as a function of the squared distance.
    pub fn profile_from_sq_norm<T: Real>(&self, r2: T) -> T {
        let t = r2 + T::from_f64(self.offset());
        match self.spec {
            KernelSpec::Multiquadric { beta, .. } => {
                T::from_f64(self.prefactor) * t.powf(beta / 2.0)
            }
            KernelSpec::Gaussian { beta } => (-(T::from_f64(beta) * t)).exp(),
        }
    }

    /// `g^(j)(offset + r²)` for `j = 0..=max_j`, sharing one transcendental call.
    pub fn profile_derivatives<T: Real>(&self, r2: T, max_j: usize) -> Vec<T> {
        let t = r2 + T::from_f64(self.offset());
        let mut out = Vec::with_capacity(max_j + 1);
        match self.spec {
            KernelSpec::Multiquadric { beta, .. } => {
                let half = beta / 2.0;
                // t^{β/2 − j} for j = max_j, then multiply upward by t.
                let mut powers = Vec::with_capacity(max_j + 1);
                powers.push(t.powf(half - max_j as f64));
                for _ in 0..max_j {
                    let next = powers.last().cloned().expect("non-empty") * t.clone();
                    powers.push(next);
                }
                powers.reverse();
                let mut falling = T::from_f64(self.prefactor);
                for (j, power) in powers.into_iter().enumerate() {
                    if j > 0 {
                        falling *= T::from_f64(half) - T::from_f64((j - 1) as f64);
                    }
                    out.push(falling.clone() * power);
                }
            }
            KernelSpec::Gaussian { beta } => {
                let base = (-(T::from_f64(beta) * t)).exp();
                let mut factor = T::one();
                for j in 0..=max_j {
                    if j > 0 {
                        factor *= T::from_f64(-beta);
                    }
                    out.push(factor.clone() * base.clone());
                }
            }
        }
        out
    }

    /// `D^α h(x)`.
    pub fn eval_derivative<T: Real>(&self, alpha: &MultiIndex, x: &[T]) -> Result<T> {
        Ok(self
            .eval_derivatives(std::slice::from_ref(alpha), x)?
            .pop()
            .expect("one value per multi-index"))
    }

    /// `D^α h(x)` for several multi-indices at the same point.
    pub fn eval_derivatives<T: Real>(&self, alphas: &[MultiIndex], x: &[T]) -> Result<Vec<T>> {
        self.check_point(x)?;
        for alpha in alphas {
            self.check_order(alpha)?;
        }
        let term_lists: Vec<Arc<DerivativeTerms>> =
            alphas.iter().map(derivative_terms).collect();
        let max_j = alphas.iter().map(MultiIndex::order).max().unwrap_or(0);
        let profile = self.profile_derivatives(squared_norm(x), max_j);
        let powers = coordinate_powers(x, max_j);
        Ok(term_lists
            .iter()
            .map(|terms| terms.evaluate(&powers, &profile))
            .collect())
    }
}

pub(crate) fn squared_norm<T: Real>(x: &[T]) -> T {
    x.iter().fold(T::zero(), |acc, v| acc + v.clone() * v.clone())
}

/// `powers[i][e] = x_i^e` for `e ≤ max_exp`.
pub(crate) fn coordinate_powers<T: Real>(x: &[T], max_exp: usize) -> Vec<Vec<T>> {
    x.iter()
        .map(|xi| {
            let mut row = Vec::with_capacity(max_exp + 1);
            row.push(T::one());
            for e in 1..=max_exp {
                let next = row[e - 1].clone() * xi.clone();
                row.push(next);
            }
            row
        })
        .collect()
}

/// One term `poly(x) · g^(j)(t)` of a kernel derivative.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialProfileTerm {
    /// Monomial exponents with their (integer-valued) coefficients.
    pub poly: BTreeMap<Vec<u32>, f64>,
    /// Order `j` of the profile derivative.
    pub deriv_order: usize,
}

/// Symbolic representation of `D^α h` as a sum of [`RadialProfileTerm`]s.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeTerms {
    dim: usize,
    terms: Vec<RadialProfileTerm>,
}

impl DerivativeTerms {
    /// The undifferentiated kernel: `1 · g(t)`.
    pub fn identity(dim: usize) -> Self {
        let mut poly = BTreeMap::new();
        poly.insert(vec![0; dim], 1.0);
        DerivativeTerms {
            dim,
            terms: vec![RadialProfileTerm {
                poly,
                deriv_order: 0,
            }],
        }
    }

    /// Build by differentiating along `axes` in the given sequence.
    pub fn from_axes(dim: usize, axes: &[usize]) -> Self {
        axes.iter()
            .fold(Self::identity(dim), |acc, &axis| acc.differentiate(axis))
    }

    pub fn terms(&self) -> &[RadialProfileTerm] {
        &self.terms
    }

    /// `∂/∂x_axis` of `poly · g^(j)(t)` is `(∂poly/∂x_axis) · g^(j) + 2 x_axis · poly · g^(j+1)`.
    pub fn differentiate(&self, axis: usize) -> Self {
        let mut by_order: BTreeMap<usize, BTreeMap<Vec<u32>, f64>> = BTreeMap::new();
        for term in &self.terms {
            for (exps, &coef) in &term.poly {
                if exps[axis] > 0 {
                    let mut lowered = exps.clone();
                    lowered[axis] -= 1;
                    *by_order
                        .entry(term.deriv_order)
                        .or_default()
                        .entry(lowered)
                        .or_insert(0.0) += coef * f64::from(exps[axis]);
                }
                let mut raised = exps.clone();
                raised[axis] += 1;
                *by_order
                    .entry(term.deriv_order + 1)
                    .or_default()
                    .entry(raised)
                    .or_insert(0.0) += 2.0 * coef;
            }
        }
        let terms = by_order
            .into_iter()
            .filter_map(|(deriv_order, mut poly)| {
                poly.retain(|_, c| *c != 0.0);
                (!poly.is_empty()).then_some(RadialProfileTerm { poly, deriv_order })
            })
            .collect();
        DerivativeTerms {
            dim: self.dim,
            terms,
        }
    }

    fn evaluate<T: Real>(&self, powers: &[Vec<T>], profile: &[T]) -> T {
        let mut total = T::zero();
        for term in &self.terms {
            let mut poly_value = T::zero();
            for (exps, &coef) in &term.poly {
                let mut monomial = T::from_f64(coef);
                for (axis, &e) in exps.iter().enumerate() {
                    if e > 0 {
                        monomial *= powers[axis][e as usize].clone();
                    }
                }
                poly_value += monomial;
            }
            total += poly_value * profile[term.deriv_order].clone();
        }
        total
    }
}

static TERM_CACHE: OnceLock<RwLock<HashMap<MultiIndex, Arc<DerivativeTerms>>>> = OnceLock::new();

/// Memoized term list for `D^α`.
pub fn derivative_terms(alpha: &MultiIndex) -> Arc<DerivativeTerms> {
    let cache = TERM_CACHE.get_or_init(Default::default);
    if let Some(hit) = cache.read().expect("term cache poisoned").get(alpha) {
        return Arc::clone(hit);
    }
    let built = Arc::new(DerivativeTerms::from_axes(alpha.dim(), &alpha.axes()));
    let mut guard = cache.write().expect("term cache poisoned");
    Arc::clone(guard.entry(alpha.clone()).or_insert(built))
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Gamma function: Lanczos approximation, reflection formula below 1/2.
pub fn gamma(x: f64) -> f64 {
    if x < 0.5 {
        PI / ((PI * x).sin() * gamma(1.0 - x))
    } else {
        let x = x - 1.0;
        let mut acc = LANCZOS_COEFFS[0];
        for (i, &c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
            acc += c / (x + i as f64);
        }
        let t = x + LANCZOS_G + 0.5;
        (2.0 * PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * acc
    }
}
