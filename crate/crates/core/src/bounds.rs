//! Error-bound formulas for the two kernel families, the derivative bound
//! built on Gorny's inequality, an independent sampled check of that
//! inequality, and least-squares recovery of decay parameters.

use std::collections::BTreeMap;
use std::f64::consts::{E, FRAC_PI_2};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::multiindex::MultiIndex;

/// Number of equally spaced samples used for sup-norms on `[−δ, δ]`.
pub const ORACLE_SAMPLES: usize = 2048;

fn require_positive(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::InvalidParameter(format!("{name} must be finite")));
    }
    if v <= 0.0 {
        return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

fn require_non_negative(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() || v < 0.0 {
        return Err(Error::InvalidParameter(format!("{name} must be non-negative, got {v}")));
    }
    Ok(())
}

/// Multiquadric bound `C·λ^{1/d}·‖f‖` valid for `0 < d ≤ d₀`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MqBoundParams {
    #[serde(rename = "C")]
    pub c: f64,
    pub lambda: f64,
    pub d0: f64,
    pub b0: f64,
}

impl MqBoundParams {
    pub fn new(c: f64, lambda: f64, d0: f64, b0: f64) -> Result<Self> {
        let p = MqBoundParams { c, lambda, d0, b0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("C", self.c)?;
        require_positive("lambda", self.lambda)?;
        if self.lambda >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "lambda must lie in (0, 1), got {}",
                self.lambda
            )));
        }
        require_positive("d0", self.d0)?;
        require_positive("b0", self.b0)
    }
}

/// Gaussian bound `Δ″·(G·d)^{g/d}·‖f‖`; decreasing in `d` only while `G·d < 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianBoundParams {
    #[serde(rename = "Delta")]
    pub delta: f64,
    #[serde(rename = "G")]
    pub big_g: f64,
    pub g: f64,
    pub d0: f64,
}

impl GaussianBoundParams {
    pub fn new(delta: f64, big_g: f64, g: f64, d0: f64) -> Result<Self> {
        let p = GaussianBoundParams { delta, big_g, g, d0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("Delta", self.delta)?;
        require_positive("G", self.big_g)?;
        require_positive("g", self.g)?;
        require_positive("d0", self.d0)
    }
}

/// Inputs of the derivative bound for one derivative order `k = |α|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativeBoundParams {
    pub l: u32,
    pub alpha_order: u32,
    pub delta: f64,
    #[serde(rename = "C_alpha")]
    pub c_alpha: f64,
    #[serde(rename = "Cprime")]
    pub cprime: f64,
}

impl DerivativeBoundParams {
    pub fn new(l: u32, alpha_order: u32, delta: f64, c_alpha: f64, cprime: f64) -> Result<Self> {
        let p = DerivativeBoundParams {
            l,
            alpha_order,
            delta,
            c_alpha,
            cprime,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_orders(self.alpha_order, self.l)?;
        require_positive("delta", self.delta)?;
        require_positive("C_alpha", self.c_alpha)?;
        require_positive("Cprime", self.cprime)
    }
}

fn check_orders(k: u32, l: u32) -> Result<()> {
    if k == 0 || k >= l {
        return Err(Error::OutOfRange(format!(
            "derivative order k={k} must satisfy 0 < k < l={l}"
        )));
    }
    Ok(())
}

fn check_fill(d: f64, d0: f64) -> Result<()> {
    if !(d > 0.0 && d <= d0) {
        return Err(Error::OutOfRange(format!("fill distance {d} outside (0, {d0}]")));
    }
    Ok(())
}

pub fn mq_bound(p: &MqBoundParams, d: f64, norm_f: f64) -> Result<f64> {
    check_fill(d, p.d0)?;
    require_non_negative("norm_f", norm_f)?;
    Ok(p.c * p.lambda.powf(1.0 / d) * norm_f)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianBound {
    pub value: f64,
    /// `false` when `G·d ≥ 1`, where the bound no longer shrinks with `d`.
    pub contracting: bool,
}

pub fn gaussian_bound(p: &GaussianBoundParams, d: f64, norm_f: f64) -> Result<GaussianBound> {
    check_fill(d, p.d0)?;
    require_non_negative("norm_f", norm_f)?;
    let gd = p.big_g * d;
    Ok(GaussianBound {
        value: p.delta * gd.powf(p.g / d) * norm_f,
        contracting: gd < 1.0,
    })
}

/// Which branch of `M̄_l = max(M_l, M₀·l!·δ^{−l})` is active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    SmallD,
    LargeD,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::SmallD => "small-d",
            Regime::LargeD => "large-d",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MBar {
    pub value: f64,
    pub regime: Regime,
}

fn factorial(l: u32) -> f64 {
    (1..=l).map(f64::from).product()
}

/// `max(M_l, M₀·l!·δ^{−l})`; ties count as small-d.
pub fn m_bar(m0: f64, ml: f64, l: u32, delta: f64) -> MBar {
    let scaled = m0 * factorial(l) * delta.powi(-(l as i32));
    if ml >= scaled {
        MBar {
            value: ml,
            regime: Regime::SmallD,
        }
    } else {
        MBar {
            value: scaled,
            regime: Regime::LargeD,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativeBound {
    pub value: f64,
    pub regime: Regime,
    pub m_bar: f64,
}

/// `C_α·M₀^{1−k/l}·M̄_l^{k/l}`.
pub fn derivative_bound(p: &DerivativeBoundParams, m0: f64, ml: f64) -> Result<DerivativeBound> {
    check_orders(p.alpha_order, p.l)?;
    Ok(interpolated_bound(p.c_alpha, f64::from(p.alpha_order), p.l, p.delta, m0, ml))
}

/// Same formula with a real exponent `k ∈ [0, l]`.
pub fn interpolated_bound(c_alpha: f64, k: f64, l: u32, delta: f64, m0: f64, ml: f64) -> DerivativeBound {
    let mb = m_bar(m0, ml, l, delta);
    let theta = k / f64::from(l);
    DerivativeBound {
        value: c_alpha * m0.powf(1.0 - theta) * mb.value.powf(theta),
        regime: mb.regime,
        m_bar: mb.value,
    }
}

/// Small-d form `C_α·M₀^{1−k/l}·M_l^{k/l}`.
pub fn small_d_bound(p: &DerivativeBoundParams, m0: f64, ml: f64) -> f64 {
    let theta = f64::from(p.alpha_order) / f64::from(p.l);
    p.c_alpha * m0.powf(1.0 - theta) * ml.powf(theta)
}

/// Large-d form `C_α·M₀·(l!)^{k/l}·δ^{−k}`.
pub fn large_d_bound(p: &DerivativeBoundParams, m0: f64) -> f64 {
    let theta = f64::from(p.alpha_order) / f64::from(p.l);
    p.c_alpha * m0 * factorial(p.l).powf(theta) * p.delta.powi(-(p.alpha_order as i32))
}

/// `16·(2e)^k·M₀^{1−k/l}·M̄^{k/l}`.
pub fn gorny_bound(k: u32, l: u32, m0: f64, mbar: f64) -> Result<f64> {
    check_orders(k, l)?;
    let theta = f64::from(k) / f64::from(l);
    Ok(16.0 * (2.0 * E).powi(k as i32) * m0.powf(1.0 - theta) * mbar.powf(theta))
}

/// A univariate function known together with its derivatives.
pub trait UnivariateFn {
    fn derivative(&self, order: u32, t: f64) -> f64;
}

/// `Σ_i coeffs[i]·tⁱ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    pub coeffs: Vec<f64>,
}

impl UnivariateFn for Polynomial {
    fn derivative(&self, order: u32, t: f64) -> f64 {
        let order = order as usize;
        let mut acc = 0.0;
        for (i, &c) in self.coeffs.iter().enumerate().skip(order).rev() {
            let falling: f64 = ((i - order + 1)..=i).map(|v| v as f64).product();
            acc = acc * t + c * falling;
        }
        acc
    }
}

/// `amplitude·sin(ω·t + φ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub omega: f64,
    pub phase: f64,
}

impl UnivariateFn for Sinusoid {
    fn derivative(&self, order: u32, t: f64) -> f64 {
        self.amplitude
            * self.omega.powi(order as i32)
            * (self.omega * t + self.phase + f64::from(order) * FRAC_PI_2).sin()
    }
}

/// `t ↦ h(y + t·u)` for a kernel `h`.
#[derive(Clone, Debug)]
pub struct KernelSlice {
    kernel: Kernel,
    base: Vec<f64>,
    direction: Vec<f64>,
    alphas: Vec<Vec<(MultiIndex, f64)>>,
}

impl KernelSlice {
    pub fn new(kernel: Kernel, base: Vec<f64>, direction: Vec<f64>) -> Result<Self> {
        let n = kernel.dim();
        for v in [&base, &direction] {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: v.len(),
                });
            }
        }
        // ψ^{(j)} = Σ_{|α|=j} (j!/α!)·u^α·D^α h
        let alphas = (0..=kernel.max_order())
            .map(|j| {
                MultiIndex::all_of_order(n, j)
                    .into_iter()
                    .map(|alpha| {
                        let weight = factorial(j as u32) / alpha.factorial()
                            * alpha
                                .parts()
                                .iter()
                                .zip(&direction)
                                .map(|(&a, u)| u.powi(a as i32))
                                .product::<f64>();
                        (alpha, weight)
                    })
                    .collect()
            })
            .collect();
        Ok(KernelSlice {
            kernel,
            base,
            direction,
            alphas,
        })
    }
}

impl UnivariateFn for KernelSlice {
    fn derivative(&self, order: u32, t: f64) -> f64 {
        let Some(terms) = self.alphas.get(order as usize) else {
            return f64::NAN;
        };
        let x: Vec<f64> = self
            .base
            .iter()
            .zip(&self.direction)
            .map(|(b, u)| b + t * u)
            .collect();
        let alphas: Vec<MultiIndex> = terms.iter().map(|(a, _)| a.clone()).collect();
        match self.kernel.eval_derivatives::<f64>(&alphas, &x) {
            Ok(values) => values.iter().zip(terms).map(|(v, (_, w))| v * w).sum(),
            Err(_) => f64::NAN,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GornyReport {
    pub lhs: f64,
    pub rhs: f64,
    pub m0: f64,
    pub ml: f64,
    pub m_bar: f64,
    pub regime: Regime,
    pub holds: bool,
}

fn sampled_sup(psi: &dyn UnivariateFn, order: u32, delta: f64) -> f64 {
    let last = (ORACLE_SAMPLES - 1) as f64;
    (0..ORACLE_SAMPLES)
        .map(|i| {
            let t = -delta + 2.0 * delta * i as f64 / last;
            psi.derivative(order, t).abs()
        })
        .fold(0.0, f64::max)
}

/// Sampled check of `|ψ^{(k)}(0)| ≤ 16(2e)^k M₀^{1−k/l} M̄^{k/l}` on `[−δ, δ]`.
pub fn gorny_oracle_check(psi: &dyn UnivariateFn, k: u32, l: u32, delta: f64) -> Result<GornyReport> {
    check_orders(k, l)?;
    require_positive("delta", delta)?;
    let m0 = sampled_sup(psi, 0, delta);
    let ml = sampled_sup(psi, l, delta);
    let mb = m_bar(m0, ml, l, delta);
    let lhs = psi.derivative(k, 0.0).abs();
    let rhs = gorny_bound(k, l, m0, mb.value)?;
    Ok(GornyReport {
        lhs,
        rhs,
        m0,
        ml,
        m_bar: mb.value,
        regime: mb.regime,
        holds: lhs <= rhs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub trials: usize,
    pub seed: u64,
    pub violations: usize,
    /// Largest observed `lhs / rhs`.
    pub max_ratio: f64,
    pub by_family: BTreeMap<String, usize>,
}

/// Random polynomials (degree ≤ 5), sinusoids and kernel slices with `k < l ≤ 4`.
pub fn gorny_campaign(trials: usize, seed: u64) -> Result<CampaignReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CampaignReport {
        trials,
        seed,
        violations: 0,
        max_ratio: 0.0,
        by_family: BTreeMap::new(),
    };
    for trial in 0..trials {
        let l = rng.random_range(2..=4u32);
        let k = rng.random_range(1..l);
        let (family, psi, delta): (&str, Box<dyn UnivariateFn>, f64) = match trial % 3 {
            0 => {
                let degree = rng.random_range(0..=5usize);
                let coeffs = (0..=degree).map(|_| StandardNormal.sample(&mut rng)).collect();
                ("polynomial", Box::new(Polynomial { coeffs }), 1.0)
            }
            1 => {
                let psi = Sinusoid {
                    amplitude: rng.random_range(0.1..3.0),
                    omega: rng.random_range(0.2..6.0),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                };
                ("sinusoid", Box::new(psi), rng.random_range(0.2..3.0))
            }
            _ => {
                let kernel = if rng.random_bool(0.5) {
                    Kernel::gaussian(rng.random_range(0.5..4.0), 2)?
                } else {
                    let beta = [-1.0, 1.0, 3.0][rng.random_range(0..3)];
                    Kernel::multiquadric(beta, rng.random_range(0.3..2.0), 2)?
                };
                let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let base = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let slice = KernelSlice::new(kernel, base, vec![angle.cos(), angle.sin()])?;
                ("kernel-slice", Box::new(slice), rng.random_range(0.2..1.5))
            }
        };
        let check = gorny_oracle_check(psi.as_ref(), k, l, delta)?;
        *report.by_family.entry(family.to_string()).or_default() += 1;
        if !check.holds {
            report.violations += 1;
        }
        if check.rhs > 0.0 {
            report.max_ratio = report.max_ratio.max(check.lhs / check.rhs);
        }
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MqFit {
    #[serde(rename = "C")]
    pub c: f64,
    pub lambda: f64,
    pub r2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    #[serde(rename = "Delta")]
    pub delta: f64,
    #[serde(rename = "G")]
    pub big_g: f64,
    pub g: f64,
    pub r2: f64,
}

fn validate_samples(samples: &[(f64, f64)], min: usize) -> Result<()> {
    if samples.len() < min {
        return Err(Error::DegenerateSamples(format!(
            "need at least {min} samples, got {}",
            samples.len()
        )));
    }
    for &(d, e) in samples {
        if !d.is_finite() || d <= 0.0 {
            return Err(Error::InvalidParameter(format!("fill distance must be positive, got {d}")));
        }
        if !e.is_finite() || e <= 0.0 {
            return Err(Error::InvalidParameter(format!("error values must be positive, got {e}")));
        }
    }
    let mut ds: Vec<f64> = samples.iter().map(|s| s.0).collect();
    ds.sort_by(f64::total_cmp);
    ds.dedup();
    if ds.len() < 3 {
        return Err(Error::DegenerateSamples("need at least 3 distinct fill distances".into()));
    }
    Ok(())
}

struct Line {
    intercept: f64,
    slope: f64,
    ssr: f64,
    sst: f64,
}

impl Line {
    fn r2(&self) -> f64 {
        if self.sst == 0.0 {
            if self.ssr == 0.0 { 1.0 } else { 0.0 }
        } else {
            1.0 - self.ssr / self.sst
        }
    }
}

fn fit_line(points: impl Iterator<Item = (f64, f64)> + Clone) -> Option<Line> {
    let n = points.clone().count() as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (sxx, sxy, syy) = points.clone().fold((0.0, 0.0, 0.0), |(a, b, c), (x, y)| {
        let (dx, dy) = (x - mx, y - my);
        (a + dx * dx, b + dx * dy, c + dy * dy)
    });
    if sxx <= 0.0 || !sxx.is_finite() {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr = points
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    Some(Line {
        intercept,
        slope,
        ssr,
        sst: syy,
    })
}

/// Least-squares line `ln e = ln C + (1/d)·ln λ`.
pub fn fit_mq_rate(samples: &[(f64, f64)]) -> Result<MqFit> {
    validate_samples(samples, 3)?;
    let line = fit_line(samples.iter().map(|&(d, e)| (1.0 / d, e.ln())))
        .ok_or_else(|| Error::DegenerateSamples("fill distances do not vary".into()))?;
    Ok(MqFit {
        c: line.intercept.exp(),
        lambda: line.slope.exp(),
        r2: line.r2(),
    })
}

fn gaussian_line(samples: &[(f64, f64)], big_g: f64) -> Option<Line> {
    fit_line(samples.iter().map(move |&(d, e)| ((big_g * d).ln() / d, e.ln())))
}

/// `ln e = ln Δ″ + g·ln(G·d)/d` with `G` held fixed.
pub fn fit_gaussian_rate_fixed_g(samples: &[(f64, f64)], big_g: f64) -> Result<GaussianFit> {
    validate_samples(samples, 3)?;
    require_positive("G", big_g)?;
    let line = gaussian_line(samples, big_g)
        .ok_or_else(|| Error::DegenerateSamples("regressor does not vary".into()))?;
    Ok(GaussianFit {
        delta: line.intercept.exp(),
        big_g,
        g: line.slope,
        r2: line.r2(),
    })
}

const GAUSSIAN_SCAN: usize = 256;
const GAUSSIAN_LOG_SPAN: f64 = 40.0;

/// Golden-section search over `ln G` in `(ln(1/max d) − 40, ln(1/max d))`
/// after a coarse scan; `(ln Δ″, g)` is solved linearly for each `G`.
pub fn fit_gaussian_rate(samples: &[(f64, f64)]) -> Result<GaussianFit> {
    validate_samples(samples, 4)?;
    let first = samples[0].1;
    if samples.iter().all(|s| s.1 == first) {
        return Err(Error::DegenerateSamples("all error values are equal".into()));
    }
    let max_d = samples.iter().map(|s| s.0).fold(0.0, f64::max);
    let hi = -max_d.ln() - 1e-9;
    let lo = hi - GAUSSIAN_LOG_SPAN;
    let cost = |u: f64| gaussian_line(samples, u.exp()).map_or(f64::INFINITY, |l| l.ssr);

    let step = (hi - lo) / GAUSSIAN_SCAN as f64;
    let grid: Vec<f64> = (0..=GAUSSIAN_SCAN).map(|i| lo + step * i as f64).collect();
    let best = (0..grid.len())
        .min_by(|&a, &b| cost(grid[a]).total_cmp(&cost(grid[b])))
        .expect("non-empty scan");
    let (mut a, mut b) = (
        grid[best.saturating_sub(1)],
        grid[(best + 1).min(GAUSSIAN_SCAN)],
    );
    let ratio = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let (mut f1, mut f2) = (cost(x1), cost(x2));
    for _ in 0..200 {
        if b - a < 1e-12 {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = cost(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = cost(x2);
        }
    }
    let mut u = 0.5 * (a + b);
    if cost(grid[best]) < cost(u) {
        u = grid[best];
    }
    let big_g = u.exp();
    let line = gaussian_line(samples, big_g)
        .ok_or_else(|| Error::DegenerateSamples("regressor does not vary".into()))?;
    Ok(GaussianFit {
        delta: line.intercept.exp(),
        big_g,
        g: line.slope,
        r2: line.r2(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitModel {
    Mq,
    Gaussian,
}

impl std::str::FromStr for FitModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mq" => Ok(FitModel::Mq),
            "gaussian" => Ok(FitModel::Gaussian),
            other => Err(Error::InvalidParameter(format!("unknown fit model `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FitParams {
    Mq {
        #[serde(rename = "C")]
        c: f64,
        lambda: f64,
    },
    Gaussian {
        #[serde(rename = "Delta")]
        delta: f64,
        #[serde(rename = "G")]
        big_g: f64,
        g: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: FitModel,
    pub params: FitParams,
    pub r2: f64,
    pub n_samples: usize,
    pub regime_counts: BTreeMap<String, usize>,
}

impl FitReport {
    pub fn from_mq(fit: &MqFit, n_samples: usize) -> Self {
        FitReport {
            model: FitModel::Mq,
            params: FitParams::Mq {
                c: fit.c,
                lambda: fit.lambda,
            },
            r2: fit.r2,
            n_samples,
            regime_counts: BTreeMap::new(),
        }
    }

    pub fn from_gaussian(fit: &GaussianFit, n_samples: usize) -> Self {
        FitReport {
            model: FitModel::Gaussian,
            params: FitParams::Gaussian {
                delta: fit.delta,
                big_g: fit.big_g,
                g: fit.g,
            },
            r2: fit.r2,
            n_samples,
            regime_counts: BTreeMap::new(),
        }
    }

    /// Fit `samples` with the requested model.
    pub fn fit(model: FitModel, samples: &[(f64, f64)]) -> Result<Self> {
        Ok(match model {
            FitModel::Mq => Self::from_mq(&fit_mq_rate(samples)?, samples.len()),
            FitModel::Gaussian => Self::from_gaussian(&fit_gaussian_rate(samples)?, samples.len()),
        })
    }

    /// Model prediction of the error at fill distance `d` (unit norm scale).
    pub fn predict(&self, d: f64) -> f64 {
        match self.params {
            FitParams::Mq { c, lambda } => c * lambda.powf(1.0 / d),
            FitParams::Gaussian { delta, big_g, g } => delta * (big_g * d).powf(g / d),
        }
    }

    /// Positive decay rate: `−ln λ` for the multiquadric model, `g` for the Gaussian one.
    pub fn decay_rate(&self) -> f64 {
        match self.params {
            FitParams::Mq { lambda, .. } => -lambda.ln(),
            FitParams::Gaussian { g, .. } => g,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::Rng;

    fn mq(c: f64, lambda: f64) -> MqBoundParams {
        MqBoundParams::new(c, lambda, 1.0, 1.0).unwrap()
    }

    #[test]
    fn mq_bound_examples() {
        let p = mq(1.0, 0.5);
        assert_relative_eq!(mq_bound(&p, 0.1, 1.0).unwrap(), 9.765625e-4, max_relative = 1e-14);
        assert_eq!(mq_bound(&p, 0.1, 0.0).unwrap(), 0.0);
        let b = mq_bound(&p, 0.2, 1.0).unwrap();
        assert_relative_eq!(mq_bound(&p, 0.1, 1.0).unwrap(), b * b, max_relative = 1e-14);
        assert!(mq_bound(&p, 1.5, 1.0).is_err());
        assert!(mq_bound(&p, 0.0, 1.0).is_err());
        assert!(MqBoundParams::new(1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn gaussian_bound_examples() {
        let p = GaussianBoundParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let b = gaussian_bound(&p, 0.5, 1.0).unwrap();
        assert_relative_eq!(b.value, 0.25);
        assert!(b.contracting);
        assert_eq!(gaussian_bound(&p, 0.5, 0.0).unwrap().value, 0.0);
        let p = GaussianBoundParams::new(2.0, 0.1, 0.2, 1.0).unwrap();
        assert_relative_eq!(gaussian_bound(&p, 0.1, 3.0).unwrap().value, 6e-4, max_relative = 1e-12);
        let p = GaussianBoundParams::new(1.0, 4.0, 1.0, 1.0).unwrap();
        assert!(!gaussian_bound(&p, 0.5, 1.0).unwrap().contracting);
    }

    #[test]
    fn m_bar_examples() {
        assert_eq!(m_bar(1e-6, 1.0, 2, 1.0), MBar { value: 1.0, regime: Regime::SmallD });
        let mb = m_bar(1.0, 1.0, 2, 0.1);
        assert_relative_eq!(mb.value, 200.0, max_relative = 1e-12);
        assert_eq!(mb.regime, Regime::LargeD);
        assert_eq!(m_bar(0.3, 2.0, 3, 1e6).value, 2.0);
    }

    #[test]
    fn derivative_bound_examples() {
        let p = DerivativeBoundParams::new(2, 1, 1.0, 1.0, 1.0).unwrap();
        let b = derivative_bound(&p, 1e-6, 1.0).unwrap();
        assert_relative_eq!(b.value, 1e-3, max_relative = 1e-12);
        assert_eq!(b.regime, Regime::SmallD);

        let p = DerivativeBoundParams::new(2, 1, 0.5, 1.0, 1.0).unwrap();
        let b = derivative_bound(&p, 1.0, 1e-9).unwrap();
        assert_relative_eq!(b.value, 2.0f64.sqrt() * 2.0, max_relative = 1e-12);
        assert_relative_eq!(b.value, 2.828_427_1, max_relative = 1e-7);
        assert_eq!(b.regime, Regime::LargeD);

        for k in 1..4 {
            let p = DerivativeBoundParams { l: 4, alpha_order: k, delta: 1.0, c_alpha: 1.0, cprime: 1.0 };
            assert_relative_eq!(small_d_bound(&p, 1.0, 1.0), 1.0);
            // δ = 1 still leaves M̄ = l! on the large-d branch.
            let b = derivative_bound(&p, 1.0, 1.0).unwrap();
            assert_eq!(b.regime, Regime::LargeD);
            assert_relative_eq!(b.value, 24.0f64.powf(f64::from(k) / 4.0), max_relative = 1e-12);
        }
        assert!(DerivativeBoundParams::new(2, 2, 1.0, 1.0, 1.0).is_err());
        assert!(DerivativeBoundParams::new(2, 0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn gorny_bound_examples() {
        assert_relative_eq!(gorny_bound(1, 2, 1.0, 1.0).unwrap(), 32.0 * E, max_relative = 1e-14);
        assert_relative_eq!(gorny_bound(1, 2, 1.0, 1.0).unwrap(), 86.985_018_5, max_relative = 1e-8);
        assert_relative_eq!(gorny_bound(1, 2, 1e-4, 1.0).unwrap(), 0.869_850_185, max_relative = 1e-8);
        assert_eq!(gorny_bound(1, 2, 0.0, 1.0).unwrap(), 0.0);
        assert!(gorny_bound(2, 2, 1.0, 1.0).is_err());
    }

    #[test]
    fn polynomial_derivatives() {
        let p = Polynomial { coeffs: vec![1.0, -2.0, 0.5, 3.0] };
        assert_relative_eq!(p.derivative(0, 2.0), 1.0 - 4.0 + 2.0 + 24.0);
        assert_relative_eq!(p.derivative(1, 2.0), -2.0 + 2.0 + 36.0);
        assert_relative_eq!(p.derivative(3, 7.0), 18.0);
        assert_eq!(p.derivative(4, 7.0), 0.0);
    }

    #[test]
    fn kernel_slice_matches_finite_differences() {
        let slice = KernelSlice::new(Kernel::multiquadric(1.0, 0.7, 2).unwrap(), vec![0.2, -0.3], vec![0.6, 0.8]).unwrap();
        let h = 1e-4;
        for t in [-0.5, 0.0, 0.4] {
            for j in 0..3 {
                let fd = (slice.derivative(j, t + h) - slice.derivative(j, t - h)) / (2.0 * h);
                assert_relative_eq!(slice.derivative(j + 1, t), fd, max_relative = 1e-6, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn oracle_examples() {
        let r = gorny_oracle_check(&Polynomial { coeffs: vec![0.0, 0.0, 1.0] }, 1, 2, 1.0).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert!(r.holds);

        let sin = Sinusoid { amplitude: 1.0, omega: 1.0, phase: 0.0 };
        let r = gorny_oracle_check(&sin, 1, 2, std::f64::consts::PI).unwrap();
        assert_relative_eq!(r.lhs, 1.0, max_relative = 1e-12);
        assert_relative_eq!(r.m0, 1.0, max_relative = 1e-5);
        assert_relative_eq!(r.ml, 1.0, max_relative = 1e-5);
        assert!(r.rhs >= 32.0 * E * 0.999 && r.holds);
    }

    #[test]
    fn polynomial_campaign_has_no_violations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let degree = rng.random_range(0..=5usize);
            let coeffs = (0..=degree).map(|_| rng.random_range(-1.0..1.0)).collect();
            let l = rng.random_range(2..=4u32);
            let k = rng.random_range(1..l);
            assert!(gorny_oracle_check(&Polynomial { coeffs }, k, l, 1.0).unwrap().holds);
        }
    }

    #[test]
    fn mixed_campaign() {
        let r = gorny_campaign(300, 5).unwrap();
        assert_eq!(r.violations, 0);
        assert_eq!(r.by_family.values().sum::<usize>(), 300);
        assert!(r.max_ratio > 0.0 && r.max_ratio < 1.0);
        assert_eq!(gorny_campaign(300, 5).unwrap(), r);
    }

    #[test]
    fn mq_fit_recovers_exact_parameters() {
        let ds = [0.2, 0.1, 0.05];
        let s: Vec<_> = ds.iter().map(|&d| (d, 0.5f64.powf(1.0 / d))).collect();
        let f = fit_mq_rate(&s).unwrap();
        assert_relative_eq!(f.c, 1.0, max_relative = 1e-10);
        assert_relative_eq!(f.lambda, 0.5, max_relative = 1e-10);
        assert_relative_eq!(f.r2, 1.0, max_relative = 1e-10);

        let s: Vec<_> = ds.iter().map(|&d| (d, 3.0 * 0.25f64.powf(1.0 / d))).collect();
        let f = fit_mq_rate(&s).unwrap();
        assert_relative_eq!(f.c, 3.0, max_relative = 1e-10);
        assert_relative_eq!(f.lambda, 0.25, max_relative = 1e-10);
    }

    #[test]
    fn mq_fit_rejects_bad_samples() {
        assert!(fit_mq_rate(&[(0.1, 1.0), (0.2, 0.0), (0.3, 1.0)]).is_err());
        assert!(fit_mq_rate(&[(0.1, 1.0), (0.2, -1.0), (0.3, 1.0)]).is_err());
        assert!(fit_mq_rate(&[(0.1, 1.0), (0.2, 1.0)]).is_err());
        assert!(fit_mq_rate(&[(0.1, 1.0), (0.1, 2.0), (0.2, 1.0)]).is_err());
    }

    fn noisy(seed: u64, ds: &[f64], model: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ds.iter().map(|&d| (d, model(d) * (1.0 + rng.random_range(-0.1..0.1)))).collect()
    }

    const NOISY_DS: [f64; 8] = [0.4, 0.3, 0.2, 0.15, 0.1, 0.075, 0.05, 0.04];

    #[test]
    fn mq_fit_tolerates_noise() {
        let s = noisy(1, &NOISY_DS, |d| 0.5f64.powf(1.0 / d));
        let f = fit_mq_rate(&s).unwrap();
        assert!((0.45..=0.55).contains(&f.lambda), "{f:?}");
    }

    #[test]
    fn gaussian_fit_recovers_exact_parameters() {
        let s: Vec<_> = [0.4, 0.2, 0.1, 0.05f64].iter().map(|&d| (d, (0.5 * d).powf(1.0 / d))).collect();
        let f = fit_gaussian_rate(&s).unwrap();
        assert_relative_eq!(f.big_g, 0.5, max_relative = 0.05);
        assert_relative_eq!(f.g, 1.0, max_relative = 0.05);
        assert_relative_eq!(f.delta, 1.0, max_relative = 0.05);
        assert!(f.r2 > 0.999_999);
    }

    #[test]
    fn gaussian_fit_rejects_degenerate_samples() {
        let s: Vec<_> = [0.4, 0.2, 0.1, 0.05].iter().map(|&d| (d, 0.3)).collect();
        assert!(matches!(fit_gaussian_rate(&s), Err(Error::DegenerateSamples(_))));
        assert!(fit_gaussian_rate(&s[..3]).is_err());
    }

    /// Unconstrained oracle: linear least squares on (1, 1/d, ln d / d).
    fn three_parameter_oracle(samples: &[(f64, f64)]) -> (f64, f64, f64) {
        let a = DMatrix::from_fn(samples.len(), 3, |i, j| {
            let d = samples[i].0;
            [1.0, 1.0 / d, d.ln() / d][j]
        });
        let y = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.1.ln()));
        let x = a.svd(true, true).solve(&y, 1e-14).unwrap();
        let g = x[2];
        (x[0].exp(), (x[1] / g).exp(), g)
    }

    #[test]
    fn gaussian_fit_agrees_with_linear_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (dd, gg, g) = (rng.random_range(0.5..3.0), rng.random_range(0.3..2.0), rng.random_range(0.2..2.0));
            let s = noisy(rng.random(), &NOISY_DS, |d| dd * (gg * d).powf(g / d));
            let (od, ogg, og) = three_parameter_oracle(&s);
            if og <= 0.0 || ogg * 0.4 >= 1.0 {
                continue;
            }
            let f = fit_gaussian_rate(&s).unwrap();
            assert_relative_eq!(f.g, og, max_relative = 1e-5);
            assert_relative_eq!(f.big_g, ogg, max_relative = 1e-5);
            assert_relative_eq!(f.delta, od, max_relative = 1e-4);
        }
    }

    #[test]
    fn gaussian_fit_tolerates_noise() {
        let s = noisy(1, &NOISY_DS, |d| (0.5 * d).powf(1.0 / d));
        let f = fit_gaussian_rate(&s).unwrap();
        assert!((0.8..=1.2).contains(&f.g), "{f:?}");
    }

    #[test]
    fn fixed_g_fit_matches_free_fit_at_optimum() {
        let s: Vec<_> = NOISY_DS.iter().map(|&d| (d, 2.0 * (0.7 * d).powf(0.6 / d))).collect();
        let f = fit_gaussian_rate_fixed_g(&s, 0.7).unwrap();
        assert_relative_eq!(f.g, 0.6, max_relative = 1e-10);
        assert_relative_eq!(f.delta, 2.0, max_relative = 1e-10);
    }

    #[test]
    fn fit_report_json() {
        let s: Vec<_> = [0.2, 0.1, 0.05].iter().map(|&d| (d, 0.5f64.powf(1.0 / d))).collect();
        let r = FitReport::fit(FitModel::Mq, &s).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(v["model"], "mq");
        assert_eq!(v["n_samples"], 3);
        assert!(v["params"]["lambda"].as_f64().unwrap() > 0.49);
        let back: FitReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
        assert_relative_eq!(r.predict(0.1), 0.5f64.powi(10), max_relative = 1e-9);
        assert_relative_eq!(r.decay_rate(), 2.0f64.ln(), max_relative = 1e-9);
    }

    proptest! {
        #[test]
        fn mq_bound_decreasing(c in 0.1f64..10.0, lambda in 0.01f64..0.99, d in 0.01f64..0.9, shrink in 0.1f64..0.99) {
            let p = mq(c, lambda);
            prop_assert!(mq_bound(&p, d * shrink, 1.0).unwrap() < mq_bound(&p, d, 1.0).unwrap());
        }

        #[test]
        fn gaussian_bound_decreasing(delta in 0.1f64..10.0, gg in 0.1f64..5.0, g in 0.1f64..3.0, frac in 0.02f64..0.3, shrink in 0.1f64..0.99) {
            let p = GaussianBoundParams::new(delta, gg, g, 10.0).unwrap();
            let d = frac / gg;
            let small = gaussian_bound(&p, d * shrink, 1.0).unwrap().value;
            prop_assume!(small > 0.0);
            prop_assert!(small < gaussian_bound(&p, d, 1.0).unwrap().value);
        }

        #[test]
        fn regime_formulas_agree(m0 in 1e-12f64..1.0, ml in 1e-6f64..1e3, delta in 0.01f64..2.0, l in 2u32..5, c in 0.1f64..10.0) {
            for k in 1..l {
                let p = DerivativeBoundParams::new(l, k, delta, c, 1.0).unwrap();
                let b = derivative_bound(&p, m0, ml).unwrap();
                let want = match b.regime {
                    Regime::SmallD => small_d_bound(&p, m0, ml),
                    Regime::LargeD => large_d_bound(&p, m0),
                };
                prop_assert!((b.value - want).abs() <= 1e-12 * want.abs());
            }
        }

        #[test]
        fn bound_is_continuous_at_the_ends(m0 in 1e-9f64..1.0, ml in 1e-3f64..1e3, delta in 0.05f64..2.0, l in 2u32..5) {
            let lo = interpolated_bound(1.5, 1e-12, l, delta, m0, ml);
            prop_assert!((lo.value - 1.5 * m0).abs() <= 1e-9 * 1.5 * m0);
            let hi = interpolated_bound(1.5, f64::from(l) - 1e-12, l, delta, m0, ml);
            prop_assert!((hi.value - 1.5 * hi.m_bar).abs() <= 1e-9 * 1.5 * hi.m_bar);
        }

        #[test]
        fn mq_fit_exact_recovery(c in 0.01f64..100.0, lambda in 0.05f64..0.95) {
            let s: Vec<_> = [0.5, 0.3, 0.2, 0.1].iter().map(|&d| (d, c * lambda.powf(1.0 / d))).collect();
            let f = fit_mq_rate(&s).unwrap();
            prop_assert!((f.c - c).abs() <= 1e-10 * c);
            prop_assert!((f.lambda - lambda).abs() <= 1e-10 * lambda);
        }
    }
}
