//! Fill-distance refinement studies: interpolate a known kernel expansion on
//! a sequence of node sets, measure sup-errors of the interpolant and its
//! derivatives, fit decay rates and check the derivative-bound shape.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bounds::{
    derivative_bound, fit_gaussian_rate_fixed_g, gaussian_bound, mq_bound, DerivativeBoundParams,
    FitModel, FitParams, FitReport, GaussianBoundParams, MqBoundParams, Regime,
};
use crate::error::{Error, Result};
use crate::geometry::{default_fill_resolution, fill_distance, generate_points, CubeDomain, PointScheme, PointSet};
use crate::interpolant::{solve, InterpolationProblem, KernelExpansion, SolveOptions};
use crate::kernels::{Kernel, KernelSpec};
use crate::multiindex::MultiIndex;
use crate::scalar::{with_mp_precision, Mp, Real};

pub const STUDY_CONFIG_VERSION: u32 = 1;

pub const ROWS_HEADER: [&str; 11] = [
    "level",
    "d",
    "N",
    "kernel",
    "beta",
    "c",
    "alpha",
    "sup_error",
    "norm_f",
    "regime",
    "cond_estimate",
];

/// Exit status of a study run.
pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 2;
pub const EXIT_BOUND_FAILED: i32 = 3;

/// Label used in the `alpha` column for the function error `E₀`.
pub const BASE_ALPHA: &str = "0";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum CenterSpec {
    Grid { spacing: f64 },
    Halton { count: usize },
    Random { count: usize, seed: u64 },
    Explicit { points: Vec<Vec<f64>> },
    /// Use each level's interpolation nodes as centers.
    Nodes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightSpec {
    /// Standard normal draws projected onto the moment conditions.
    Random {
        #[serde(default)]
        seed: Option<u64>,
    },
    Explicit { values: Vec<f64> },
    Zero,
}

impl Default for WeightSpec {
    fn default() -> Self {
        WeightSpec::Random { seed: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproximandSpec {
    pub centers: CenterSpec,
    #[serde(default)]
    pub weights: WeightSpec,
    /// Coefficients over the graded-lex basis of `P_{m−1}`; zeros when absent.
    #[serde(default)]
    pub poly: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum Refinement {
    Grid { spacings: Vec<f64> },
    Halton { counts: Vec<usize> },
    Random { counts: Vec<usize>, seed: u64 },
}

impl Refinement {
    pub fn levels(&self) -> usize {
        match self {
            Refinement::Grid { spacings } => spacings.len(),
            Refinement::Halton { counts } | Refinement::Random { counts, .. } => counts.len(),
        }
    }

    pub fn scheme(&self, level: usize) -> PointScheme {
        match self {
            Refinement::Grid { spacings } => PointScheme::Grid {
                spacing: spacings[level],
            },
            Refinement::Halton { counts } => PointScheme::Halton {
                count: counts[level],
            },
            Refinement::Random { counts, seed } => PointScheme::Random {
                count: counts[level],
                seed: seed.wrapping_add(level as u64),
            },
        }
    }

    fn validate(&self) -> Result<()> {
        if self.levels() == 0 {
            return Err(Error::InvalidParameter("refinement needs at least one level".into()));
        }
        match self {
            Refinement::Grid { spacings } => {
                if spacings.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                    return Err(Error::InvalidParameter("spacings must be positive".into()));
                }
                if spacings.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(Error::InvalidParameter("spacings must be strictly decreasing".into()));
                }
            }
            Refinement::Halton { counts } | Refinement::Random { counts, .. } => {
                if counts.first() == Some(&0) || counts.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidParameter(
                        "counts must be positive and strictly increasing".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerivativeSpec {
    pub l: u32,
    pub alphas: Vec<MultiIndex>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyTolerances {
    #[serde(default)]
    pub max_condition: Option<f64>,
    #[serde(default = "default_min_pass_fraction")]
    pub min_pass_fraction: f64,
    /// A row passes when `margin ≥ 1 − margin_slack`.
    #[serde(default = "default_margin_slack")]
    pub margin_slack: f64,
}

fn default_min_pass_fraction() -> f64 {
    0.8
}

fn default_margin_slack() -> f64 {
    1e-9
}

impl Default for StudyTolerances {
    fn default() -> Self {
        StudyTolerances {
            max_condition: None,
            min_pass_fraction: default_min_pass_fraction(),
            margin_slack: default_margin_slack(),
        }
    }
}

/// Supplied base-bound parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BaseBound {
    Mq(MqBoundParams),
    Gaussian(GaussianBoundParams),
}

impl BaseBound {
    /// `M₀` at fill distance `d`.
    pub fn m0(&self, d: f64, norm_f: f64) -> Result<f64> {
        match self {
            BaseBound::Mq(p) => mq_bound(p, d, norm_f),
            BaseBound::Gaussian(p) => Ok(gaussian_bound(p, d, norm_f)?.value),
        }
    }

    /// Parameters from a fit over samples with largest fill distance `d0`.
    pub fn from_fit(report: &FitReport, d0: f64) -> Result<Self> {
        Ok(match report.params {
            FitParams::Mq { c, lambda } => BaseBound::Mq(MqBoundParams::new(c, lambda, d0, 1.0)?),
            FitParams::Gaussian { delta, big_g, g } => {
                BaseBound::Gaussian(GaussianBoundParams::new(delta, big_g, g, d0)?)
            }
        })
    }

    fn validate(&self) -> Result<()> {
        match self {
            BaseBound::Mq(p) => p.validate(),
            BaseBound::Gaussian(p) => p.validate(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSpec {
    /// Fit model; follows the kernel family when absent.
    #[serde(default)]
    pub model: Option<FitModel>,
    /// Base-bound parameters; fitted from `E₀` when absent.
    #[serde(default)]
    pub base: Option<BaseBound>,
    /// `C′`; estimated from order-`l` derivative errors when absent.
    #[serde(default)]
    pub cprime: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_rows_path")]
    pub rows: String,
    #[serde(default = "default_summary_path")]
    pub summary: String,
}

fn default_rows_path() -> String {
    "rows.csv".into()
}

fn default_summary_path() -> String {
    "summary.json".into()
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            rows: default_rows_path(),
            summary: default_summary_path(),
        }
    }
}

/// A refinement study. See `docs/study-config.md` for the JSON schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub version: u32,
    #[serde(default)]
    pub name: String,
    pub kernel: KernelSpec,
    pub domain: CubeDomain,
    pub approximand: ApproximandSpec,
    pub refinement: Refinement,
    #[serde(default)]
    pub derivatives: Option<DerivativeSpec>,
    /// Ball radius `δ`; derivative errors use probes `y` with `B̄(y, δ) ⊆ Ω`.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub probe_resolution: Option<usize>,
    #[serde(default)]
    pub fill_resolution: Option<usize>,
    /// 53 or less runs in `f64`; larger values use software floats.
    #[serde(default = "default_precision_bits")]
    pub precision_bits: usize,
    #[serde(default)]
    pub tolerances: StudyTolerances,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub bounds: BoundsSpec,
    #[serde(default)]
    pub outputs: OutputSpec,
}

fn default_precision_bits() -> usize {
    53
}

/// Default probe grid points per axis.
pub fn default_probe_resolution(dim: usize) -> usize {
    match dim {
        1 => 201,
        2 => 41,
        _ => 11,
    }
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: StudyConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn kernel(&self) -> Result<Kernel> {
        Kernel::new(self.kernel, self.domain.dim())
    }

    pub fn domain(&self) -> Result<CubeDomain> {
        CubeDomain::new(self.domain.lower().to_vec(), self.domain.side())
    }

    pub fn probe_resolution(&self) -> usize {
        self.probe_resolution
            .unwrap_or_else(|| default_probe_resolution(self.domain.dim()))
    }

    pub fn fill_resolution(&self) -> usize {
        self.fill_resolution
            .unwrap_or_else(|| default_fill_resolution(self.domain.dim()))
    }

    pub fn model(&self) -> FitModel {
        self.bounds.model.unwrap_or(match self.kernel {
            KernelSpec::Multiquadric { .. } => FitModel::Mq,
            KernelSpec::Gaussian { .. } => FitModel::Gaussian,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != STUDY_CONFIG_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported study config version {}",
                self.version
            )));
        }
        let domain = self.domain()?;
        let kernel = self.kernel()?;
        self.refinement.validate()?;
        if self.probe_resolution() < 2 {
            return Err(Error::InvalidParameter("probe_resolution must be at least 2".into()));
        }
        if self.precision_bits < 2 {
            return Err(Error::InvalidParameter("precision_bits must be at least 2".into()));
        }
        let t = &self.tolerances;
        if !(0.0..=1.0).contains(&t.min_pass_fraction) {
            return Err(Error::InvalidParameter("min_pass_fraction must lie in [0, 1]".into()));
        }
        if !(t.margin_slack >= 0.0 && t.margin_slack < 1.0) {
            return Err(Error::InvalidParameter("margin_slack must lie in [0, 1)".into()));
        }
        if let Some(limit) = t.max_condition {
            if limit.is_nan() || limit <= 0.0 {
                return Err(Error::InvalidParameter("max_condition must be positive".into()));
            }
        }
        if let Some(base) = &self.bounds.base {
            base.validate()?;
        }
        if let Some(cp) = self.bounds.cprime {
            if !(cp.is_finite() && cp > 0.0) {
                return Err(Error::InvalidParameter("cprime must be positive".into()));
            }
        }
        if let CenterSpec::Explicit { points } = &self.approximand.centers {
            PointSet::new(domain.dim(), points.clone())?;
        }
        if let Some(poly) = &self.approximand.poly {
            let q = crate::polybasis::MonomialBasis::new(domain.dim(), kernel.cpd_order()).len();
            if poly.len() != q {
                return Err(Error::DimensionMismatch {
                    expected: q,
                    found: poly.len(),
                });
            }
        }
        if let Some(spec) = &self.derivatives {
            if spec.l < 2 || spec.l as usize > kernel.max_order() {
                return Err(Error::OutOfRange(format!(
                    "l = {} must lie in [2, {}]",
                    spec.l,
                    kernel.max_order()
                )));
            }
            for alpha in &spec.alphas {
                if alpha.dim() != domain.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: domain.dim(),
                        found: alpha.dim(),
                    });
                }
                if alpha.order() == 0 || alpha.order() >= spec.l as usize {
                    return Err(Error::OutOfRange(format!(
                        "multi-index {alpha} must satisfy 0 < |α| < l = {}",
                        spec.l
                    )));
                }
            }
            let delta = self
                .delta
                .ok_or_else(|| Error::InvalidParameter("delta is required with derivatives".into()))?;
            if !(delta.is_finite() && delta > 0.0) {
                return Err(Error::InvalidParameter("delta must be positive".into()));
            }
            if !domain
                .probe_grid(self.probe_resolution())
                .iter()
                .any(|y| domain.contains_ball(y, delta))
            {
                return Err(Error::OutOfRange(format!(
                    "no probe point admits a ball of radius {delta} inside the domain"
                )));
            }
        }
        Ok(())
    }
}

/// One CSV row: the sup-error for one multi-index at one level.
#[derive(Clone, Debug, PartialEq)]
pub struct StudyRow {
    pub level: usize,
    pub d: f64,
    pub n: usize,
    pub kernel: KernelSpec,
    /// `None` for `E₀`.
    pub alpha: Option<MultiIndex>,
    /// `None` when the solve failed at this level.
    pub sup_error: Option<f64>,
    pub norm_f: f64,
    pub regime: String,
    pub cond_estimate: Option<f64>,
}

impl StudyRow {
    pub fn alpha_label(&self) -> String {
        self.alpha
            .as_ref()
            .map_or_else(|| BASE_ALPHA.to_string(), |a| a.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: usize,
    pub d: f64,
    pub n: usize,
    pub norm_f: f64,
    pub cond_estimate: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub level: usize,
    pub d: f64,
    pub alpha: String,
    pub sup_error: f64,
    pub m0: f64,
    pub m_bar: f64,
    pub bound: f64,
    pub margin: f64,
    pub regime: Regime,
    pub calibration: bool,
    pub passes: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckReport {
    pub l: u32,
    pub delta: f64,
    pub cprime: f64,
    pub c_alpha: BTreeMap<String, f64>,
    pub rows: Vec<BoundRow>,
    /// Rows excluding the calibration rows.
    pub checked: usize,
    pub passing: usize,
    pub pass_fraction: f64,
    pub min_pass_fraction: f64,
    pub regime_counts: BTreeMap<String, usize>,
    pub passed: bool,
}

impl BoundCheckReport {
    pub fn count(&self, regime: Regime) -> usize {
        self.regime_counts.get(regime.as_str()).copied().unwrap_or(0)
    }
}

/// Inputs of [`check_bounds`] besides the rows.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundCheckInput {
    pub base: BaseBound,
    pub l: u32,
    pub delta: f64,
    pub cprime: f64,
    pub min_pass_fraction: f64,
    pub margin_slack: f64,
}

/// Compare each derivative row with `C_α·M₀^{1−k/l}·M̄_l^{k/l}`, where `M₀`
/// comes from the base bound, `M_l = C′·‖f‖`, and `C_α` is calibrated so
/// the coarsest row of each multi-index has margin 1.
pub fn check_bounds(rows: &[StudyRow], input: &BoundCheckInput) -> Result<BoundCheckReport> {
    let mut by_alpha: BTreeMap<String, Vec<&StudyRow>> = BTreeMap::new();
    for row in rows {
        if let (Some(alpha), Some(_)) = (&row.alpha, row.sup_error) {
            by_alpha.entry(alpha.to_string()).or_default().push(row);
        }
    }
    if by_alpha.is_empty() {
        return Err(Error::MissingFit("no derivative rows to check".into()));
    }
    let mut report = BoundCheckReport {
        l: input.l,
        delta: input.delta,
        cprime: input.cprime,
        c_alpha: BTreeMap::new(),
        rows: Vec::new(),
        checked: 0,
        passing: 0,
        pass_fraction: 0.0,
        min_pass_fraction: input.min_pass_fraction,
        regime_counts: BTreeMap::new(),
        passed: false,
    };
    for (label, mut group) in by_alpha {
        group.sort_by(|a, b| b.d.total_cmp(&a.d).then(a.level.cmp(&b.level)));
        let k = group[0].alpha.as_ref().map_or(0, MultiIndex::order) as u32;
        let unit = DerivativeBoundParams::new(input.l, k, input.delta, 1.0, input.cprime)?;
        let mut shaped = Vec::with_capacity(group.len());
        for row in &group {
            let m0 = input.base.m0(row.d, row.norm_f)?;
            let ml = input.cprime * row.norm_f;
            shaped.push((m0, derivative_bound(&unit, m0, ml)?));
        }
        let coarse_error = group[0].sup_error.unwrap_or(0.0);
        let coarse_shape = shaped[0].1.value;
        let c_alpha = if coarse_shape > 0.0 && coarse_error > 0.0 {
            coarse_error / coarse_shape
        } else {
            f64::MIN_POSITIVE
        };
        report.c_alpha.insert(label.clone(), c_alpha);
        for (i, (row, (m0, shape))) in group.iter().zip(shaped).enumerate() {
            let error = row.sup_error.unwrap_or(0.0);
            let bound = c_alpha * shape.value;
            let calibration = i == 0;
            let margin = if calibration {
                1.0
            } else if error > 0.0 {
                bound / error
            } else {
                f64::INFINITY
            };
            let passes = margin >= 1.0 - input.margin_slack;
            if !calibration {
                report.checked += 1;
                report.passing += usize::from(passes);
            }
            *report
                .regime_counts
                .entry(shape.regime.as_str().to_string())
                .or_default() += 1;
            report.rows.push(BoundRow {
                level: row.level,
                d: row.d,
                alpha: label.clone(),
                sup_error: error,
                m0,
                m_bar: shape.m_bar,
                bound,
                margin,
                regime: shape.regime,
                calibration,
                passes,
            });
        }
    }
    report.pass_fraction = if report.checked > 0 {
        report.passing as f64 / report.checked as f64
    } else {
        0.0
    };
    report.passed = report.checked > 0 && report.pass_fraction >= input.min_pass_fraction;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub version: u32,
    pub name: String,
    pub kernel: KernelSpec,
    pub model: FitModel,
    pub levels: Vec<LevelSummary>,
    pub base_fit: Option<FitReport>,
    pub derivative_fits: BTreeMap<String, FitReport>,
    /// Decay rate of `E_α` over that of `E₀` (Gaussian: `g` with `G` fixed to the base fit).
    pub rate_ratios: BTreeMap<String, f64>,
    pub fit_errors: BTreeMap<String, String>,
    pub cprime: Option<f64>,
    pub cprime_estimated: bool,
    pub check: Option<BoundCheckReport>,
    pub check_error: Option<String>,
    pub exit_code: i32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyResult {
    pub rows: Vec<StudyRow>,
    pub summary: StudySummary,
}

impl StudyResult {
    pub fn exit_code(&self) -> i32 {
        self.summary.exit_code
    }

    /// `(d, sup_error / ‖f‖)` over successful rows of one multi-index label.
    pub fn samples(&self, alpha: &str) -> Vec<(f64, f64)> {
        normalized_samples(&self.rows, alpha)
    }

    pub fn base_errors(&self) -> Vec<(f64, Option<f64>)> {
        self.rows
            .iter()
            .filter(|r| r.alpha.is_none())
            .map(|r| (r.d, r.sup_error))
            .collect()
    }

    pub fn rows_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        write_rows_csv(&self.rows, &mut buf)?;
        Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
    }

    /// Write the rows CSV and the summary JSON into `dir`.
    pub fn write_outputs(&self, dir: &Path, outputs: &OutputSpec) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let rows_path = dir.join(&outputs.rows);
        let summary_path = dir.join(&outputs.summary);
        write_rows_csv(&self.rows, std::fs::File::create(&rows_path)?)?;
        let mut json = serde_json::to_string_pretty(&self.summary)?;
        json.push('\n');
        std::fs::write(&summary_path, json)?;
        Ok((rows_path, summary_path))
    }
}

fn normalized_samples(rows: &[StudyRow], alpha: &str) -> Vec<(f64, f64)> {
    rows.iter()
        .filter(|r| r.alpha_label() == alpha)
        .filter_map(|r| {
            let e = r.sup_error?;
            let scale = if r.norm_f > 0.0 { r.norm_f } else { 1.0 };
            Some((r.d, e / scale))
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}

pub fn write_rows_csv<W: Write>(rows: &[StudyRow], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(ROWS_HEADER)?;
    for r in rows {
        w.write_record([
            r.level.to_string(),
            r.d.to_string(),
            r.n.to_string(),
            r.kernel.family_name().to_string(),
            r.kernel.beta().to_string(),
            r.kernel.shape().map_or_else(String::new, |c| c.to_string()),
            r.alpha_label(),
            fmt_opt(r.sup_error),
            format!("{:e}", r.norm_f),
            r.regime.clone(),
            fmt_opt(r.cond_estimate),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_opt(field: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse()
        .map(Some)
        .map_err(|_| Error::InvalidParameter(format!("not a number: `{field}`")))
}

fn parse_num<T: std::str::FromStr>(field: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("not a number: `{field}`")))
}

pub fn read_rows_csv<R: Read>(reader: R) -> Result<Vec<StudyRow>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != ROWS_HEADER {
        return Err(Error::InvalidParameter(format!("unexpected CSV header {header:?}")));
    }
    let mut rows = Vec::new();
    for record in r.records() {
        let rec = record?;
        let beta: f64 = parse_num(&rec[4])?;
        let kernel = match &rec[3] {
            "multiquadric" => KernelSpec::Multiquadric {
                beta,
                c: parse_num(&rec[5])?,
            },
            "gaussian" => KernelSpec::Gaussian { beta },
            other => return Err(Error::InvalidKernel(format!("unknown family `{other}`"))),
        };
        let alpha = if &rec[6] == BASE_ALPHA {
            None
        } else {
            Some(rec[6].parse::<MultiIndex>()?)
        };
        rows.push(StudyRow {
            level: parse_num(&rec[0])?,
            d: parse_num(&rec[1])?,
            n: parse_num(&rec[2])?,
            kernel,
            alpha,
            sup_error: parse_opt(&rec[7])?,
            norm_f: parse_num(&rec[8])?,
            regime: rec[9].to_string(),
            cond_estimate: parse_opt(&rec[10])?,
        });
    }
    Ok(rows)
}

/// Fit one multi-index label of a rows table.
pub fn fit_rows(rows: &[StudyRow], model: FitModel, alpha: &str) -> Result<FitReport> {
    let samples = normalized_samples(rows, alpha);
    let mut report = FitReport::fit(model, &samples)?;
    for r in rows.iter().filter(|r| r.alpha_label() == alpha && r.sup_error.is_some()) {
        *report.regime_counts.entry(r.regime.clone()).or_default() += 1;
    }
    Ok(report)
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut out = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let rank = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                out[k] = rank;
            }
            i = j + 1;
        }
        out
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

struct LevelOutcome {
    level: usize,
    d: f64,
    n: usize,
    norm_f: f64,
    cond: Option<f64>,
    failure: Option<String>,
    e0: Option<f64>,
    e_alpha: Vec<Option<f64>>,
    e_top: Vec<Option<f64>>,
}

struct Plan {
    kernel: Kernel,
    domain: CubeDomain,
    approximand: ApproximandSpec,
    fixed_centers: Option<PointSet>,
    seed: u64,
    probes: Vec<Vec<f64>>,
    ball_probes: Vec<Vec<f64>>,
    alphas: Vec<MultiIndex>,
    top_alphas: Vec<MultiIndex>,
    fill_resolution: usize,
    options: SolveOptions,
}

fn is_solver_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::IllConditioned { .. } | Error::SingularSystem { .. } | Error::NotDetermining { .. }
    )
}

impl Plan {
    fn approximand<T: Real>(&self, nodes: &PointSet) -> Result<KernelExpansion<T>> {
        let centers = self.fixed_centers.clone().unwrap_or_else(|| nodes.clone());
        let q = crate::polybasis::MonomialBasis::new(self.kernel.dim(), self.kernel.cpd_order()).len();
        let poly: Vec<T> = self
            .approximand
            .poly
            .clone()
            .unwrap_or_else(|| vec![0.0; q])
            .into_iter()
            .map(T::from_f64)
            .collect();
        match &self.approximand.weights {
            WeightSpec::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(self.seed));
                let raw = (0..centers.len())
                    .map(|_| T::from_f64(StandardNormal.sample(&mut rng)))
                    .collect();
                KernelExpansion::projected(self.kernel.clone(), centers, raw, poly)
            }
            WeightSpec::Explicit { values } => KernelExpansion::new(
                self.kernel.clone(),
                centers,
                values.iter().map(|&v| T::from_f64(v)).collect(),
                poly,
            ),
            WeightSpec::Zero => {
                let n = centers.len();
                KernelExpansion::new(self.kernel.clone(), centers, vec![T::zero(); n], poly)
            }
        }
    }

    fn measure<T: Real>(&self, level: usize, nodes: PointSet) -> Result<LevelOutcome> {
        let d = fill_distance(&self.domain, &nodes, self.fill_resolution)?;
        let f = self.approximand::<T>(&nodes)?;
        let norm_f = f.native_norm()?.to_f64();
        let mut outcome = LevelOutcome {
            level,
            d,
            n: nodes.len(),
            norm_f,
            cond: None,
            failure: None,
            e0: None,
            e_alpha: vec![None; self.alphas.len()],
            e_top: vec![None; self.top_alphas.len()],
        };
        let problem = InterpolationProblem::<T>::sampled(self.kernel.clone(), nodes, |x| f.evaluate(x));
        let solved = problem.and_then(|p| solve(&p, self.options));
        let s = match solved {
            Ok(s) => s,
            Err(e) if is_solver_failure(&e) => {
                if let Error::IllConditioned { condition, .. } | Error::SingularSystem { condition } = e {
                    outcome.cond = Some(condition);
                }
                outcome.failure = Some(e.to_string());
                return Ok(outcome);
            }
            Err(e) => return Err(e),
        };
        outcome.cond = Some(s.condition_estimate());

        let mut e0 = T::zero();
        for y in lift_points_vec::<T>(&self.probes) {
            let err = (f.evaluate(&y)? - s.evaluate(&y)?).abs();
            if err > e0 {
                e0 = err;
            }
        }
        outcome.e0 = Some(e0.to_f64());

        if !self.alphas.is_empty() {
            let all: Vec<MultiIndex> = self.alphas.iter().chain(&self.top_alphas).cloned().collect();
            let mut worst = vec![T::zero(); all.len()];
            for y in lift_points_vec::<T>(&self.ball_probes) {
                let fv = f.evaluate_derivatives(&all, &y)?;
                let sv = s.evaluate_derivatives(&all, &y)?;
                for ((w, a), b) in worst.iter_mut().zip(fv).zip(sv) {
                    let err = (a - b).abs();
                    if err > *w {
                        *w = err;
                    }
                }
            }
            let (low, top) = worst.split_at(self.alphas.len());
            outcome.e_alpha = low.iter().map(|v| Some(v.to_f64())).collect();
            outcome.e_top = top.iter().map(|v| Some(v.to_f64())).collect();
        }
        Ok(outcome)
    }
}

fn lift_points_vec<T: Real>(points: &[Vec<f64>]) -> Vec<Vec<T>> {
    points
        .iter()
        .map(|p| p.iter().map(|&v| T::from_f64(v)).collect())
        .collect()
}

fn center_points(spec: &CenterSpec, domain: &CubeDomain) -> Result<Option<PointSet>> {
    let scheme = match spec {
        CenterSpec::Nodes => return Ok(None),
        CenterSpec::Explicit { points } => return Ok(Some(PointSet::new(domain.dim(), points.clone())?)),
        CenterSpec::Grid { spacing } => PointScheme::Grid { spacing: *spacing },
        CenterSpec::Halton { count } => PointScheme::Halton { count: *count },
        CenterSpec::Random { count, seed } => PointScheme::Random {
            count: *count,
            seed: *seed,
        },
    };
    Ok(Some(generate_points(domain, &scheme)?))
}

/// Run the refinement sweep, fits and bound check. Levels run concurrently;
/// rows are emitted in order of decreasing fill distance.
pub fn run_study(config: &StudyConfig) -> Result<StudyResult> {
    config.validate()?;
    let kernel = config.kernel()?;
    let domain = config.domain()?;
    let probes = domain.probe_grid(config.probe_resolution());
    let (alphas, l) = match &config.derivatives {
        Some(spec) => (spec.alphas.clone(), spec.l),
        None => (Vec::new(), 0),
    };
    let delta = config.delta.unwrap_or(0.0);
    let ball_probes: Vec<Vec<f64>> = if alphas.is_empty() {
        Vec::new()
    } else {
        probes
            .iter()
            .filter(|y| domain.contains_ball(y, delta))
            .cloned()
            .collect()
    };
    let top_alphas = if alphas.is_empty() || config.bounds.cprime.is_some() {
        Vec::new()
    } else {
        MultiIndex::all_of_order(domain.dim(), l as usize)
    };
    let plan = Plan {
        kernel: kernel.clone(),
        domain: domain.clone(),
        approximand: config.approximand.clone(),
        fixed_centers: center_points(&config.approximand.centers, &domain)?,
        seed: config.seed,
        probes,
        ball_probes,
        alphas: alphas.clone(),
        top_alphas: top_alphas.clone(),
        fill_resolution: config.fill_resolution(),
        options: SolveOptions {
            max_condition: config.tolerances.max_condition,
        },
    };
    let node_sets = (0..config.refinement.levels())
        .map(|level| generate_points(&domain, &config.refinement.scheme(level)))
        .collect::<Result<Vec<_>>>()?;

    let bits = config.precision_bits;
    let outcomes: Vec<Result<LevelOutcome>> = std::thread::scope(|scope| {
        let handles: Vec<_> = node_sets
            .into_iter()
            .enumerate()
            .map(|(level, nodes)| {
                let plan = &plan;
                scope.spawn(move || {
                    if bits <= 53 {
                        plan.measure::<f64>(level, nodes)
                    } else {
                        with_mp_precision(bits, || plan.measure::<Mp>(level, nodes))
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("level worker panicked"))
            .collect()
    });
    let mut outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    outcomes.sort_by(|a, b| b.d.total_cmp(&a.d).then(a.level.cmp(&b.level)));

    let spec = config.kernel;
    let mut rows = Vec::new();
    for o in &outcomes {
        let failed_regime = || "failed".to_string();
        rows.push(StudyRow {
            level: o.level,
            d: o.d,
            n: o.n,
            kernel: spec,
            alpha: None,
            sup_error: o.e0,
            norm_f: o.norm_f,
            regime: if o.failure.is_some() { failed_regime() } else { "base".into() },
            cond_estimate: o.cond,
        });
        for (alpha, e) in alphas.iter().zip(&o.e_alpha) {
            rows.push(StudyRow {
                level: o.level,
                d: o.d,
                n: o.n,
                kernel: spec,
                alpha: Some(alpha.clone()),
                sup_error: *e,
                norm_f: o.norm_f,
                regime: if o.failure.is_some() { failed_regime() } else { String::new() },
                cond_estimate: o.cond,
            });
        }
    }

    let model = config.model();
    let mut fit_errors = BTreeMap::new();
    let base_fit = match fit_rows(&rows, model, BASE_ALPHA) {
        Ok(f) => Some(f),
        Err(e) => {
            fit_errors.insert(BASE_ALPHA.to_string(), e.to_string());
            None
        }
    };
    let mut derivative_fits = BTreeMap::new();
    let mut rate_ratios = BTreeMap::new();
    for alpha in &alphas {
        let label = alpha.to_string();
        match fit_rows(&rows, model, &label) {
            Ok(f) => {
                if let Some(base) = &base_fit {
                    if let Some(ratio) = rate_ratio(base, &f, &normalized_samples(&rows, &label)) {
                        rate_ratios.insert(label.clone(), ratio);
                    }
                }
                derivative_fits.insert(label, f);
            }
            Err(e) => {
                fit_errors.insert(label, e.to_string());
            }
        }
    }

    let (cprime, cprime_estimated) = match config.bounds.cprime {
        Some(c) => (Some(c), false),
        None if !alphas.is_empty() => (Some(estimate_cprime(&outcomes, &top_alphas, l)), true),
        None => (None, false),
    };

    let mut check = None;
    let mut check_error = None;
    if let (Some(_), Some(cp)) = (&config.derivatives, cprime) {
        let d0 = outcomes.iter().map(|o| o.d).fold(0.0, f64::max);
        let base = match (&config.bounds.base, &base_fit) {
            (Some(b), _) => Ok(*b),
            (None, Some(fit)) => BaseBound::from_fit(fit, d0),
            (None, None) => Err(Error::MissingFit("no base-error fit available".into())),
        };
        let result = base.and_then(|base| {
            check_bounds(
                &rows,
                &BoundCheckInput {
                    base,
                    l,
                    delta,
                    cprime: cp,
                    min_pass_fraction: config.tolerances.min_pass_fraction,
                    margin_slack: config.tolerances.margin_slack,
                },
            )
        });
        match result {
            Ok(report) => {
                for row in rows.iter_mut() {
                    if let Some(b) = report
                        .rows
                        .iter()
                        .find(|b| b.level == row.level && row.alpha.is_some() && b.alpha == row.alpha_label())
                    {
                        row.regime = b.regime.as_str().to_string();
                    }
                }
                for (label, fit) in derivative_fits.iter_mut() {
                    fit.regime_counts.clear();
                    for b in report.rows.iter().filter(|b| &b.alpha == label) {
                        *fit.regime_counts.entry(b.regime.as_str().to_string()).or_default() += 1;
                    }
                }
                check = Some(report);
            }
            Err(e) => check_error = Some(e.to_string()),
        }
    }

    let any_failed = outcomes.iter().any(|o| o.failure.is_some());
    let check_failed = config.derivatives.is_some() && !check.as_ref().is_some_and(|c| c.passed);
    let exit_code = if check_failed {
        EXIT_BOUND_FAILED
    } else if any_failed {
        EXIT_PARTIAL
    } else {
        EXIT_OK
    };
    let levels = outcomes
        .iter()
        .map(|o| LevelSummary {
            level: o.level,
            d: o.d,
            n: o.n,
            norm_f: o.norm_f,
            cond_estimate: o.cond,
            failure: o.failure.clone(),
        })
        .collect();
    Ok(StudyResult {
        rows,
        summary: StudySummary {
            version: STUDY_CONFIG_VERSION,
            name: config.name.clone(),
            kernel: spec,
            model,
            levels,
            base_fit,
            derivative_fits,
            rate_ratios,
            fit_errors,
            cprime,
            cprime_estimated,
            check,
            check_error,
            exit_code,
        },
    })
}

/// Ratio of decay rates `E_α : E₀`; the Gaussian form refits `g` with `G`
/// held at the base fit so the two exponents share a scale.
fn rate_ratio(base: &FitReport, fit: &FitReport, samples: &[(f64, f64)]) -> Option<f64> {
    let base_rate = base.decay_rate();
    if !(base_rate.is_finite() && base_rate != 0.0) {
        return None;
    }
    let rate = match base.params {
        FitParams::Mq { .. } => fit.decay_rate(),
        FitParams::Gaussian { big_g, .. } => fit_gaussian_rate_fixed_g(samples, big_g).ok()?.g,
    };
    Some(rate / base_rate)
}

/// `C′ = l!·Σ_{|α|=l} c_α/α!` with `c_α = max_level E_α/‖f‖`.
fn estimate_cprime(outcomes: &[LevelOutcome], top_alphas: &[MultiIndex], l: u32) -> f64 {
    let l_fact: f64 = (1..=l).map(f64::from).product();
    let sum: f64 = top_alphas
        .iter()
        .enumerate()
        .map(|(i, alpha)| {
            let c = outcomes
                .iter()
                .filter(|o| o.norm_f > 0.0)
                .filter_map(|o| o.e_top.get(i).copied().flatten().map(|e| e / o.norm_f))
                .fold(0.0, f64::max);
            c / alpha.factorial()
        })
        .sum();
    let cp = l_fact * sum;
    if cp.is_finite() && cp > 0.0 {
        cp
    } else {
        f64::MIN_POSITIVE
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> StudyConfig {
        StudyConfig::from_json(
            r#"{
                "version": 1,
                "name": "unit",
                "kernel": {"family": "gaussian", "beta": 4.0},
                "domain": {"lower": [0.0], "side": 1.0},
                "approximand": {"centers": {"scheme": "random", "count": 4, "seed": 3}},
                "refinement": {"scheme": "grid", "spacings": [0.25, 0.2, 0.125, 0.1]},
                "derivatives": {"l": 2, "alphas": [[1]]},
                "delta": 0.1,
                "probe_resolution": 41,
                "seed": 5
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = base_config();
        assert_eq!(c.precision_bits, 53);
        assert_eq!(c.tolerances.min_pass_fraction, 0.8);
        assert_eq!(c.outputs.rows, "rows.csv");
        assert_eq!(c.model(), FitModel::Gaussian);

        let mut bad = c.clone();
        bad.refinement = Refinement::Grid { spacings: vec![0.1, 0.2] };
        assert!(bad.validate().is_err());
        let mut bad = c.clone();
        bad.derivatives = Some(DerivativeSpec { l: 2, alphas: vec![MultiIndex::new(vec![2])] });
        assert!(bad.validate().is_err());
        let mut bad = c.clone();
        bad.delta = Some(0.6);
        assert!(bad.validate().is_err());
        let mut bad = c.clone();
        bad.version = 2;
        assert!(bad.validate().is_err());
        assert!(StudyConfig::from_json(&c.to_json().unwrap().replace("\"seed\": 5", "\"sed\": 5")).is_err());
    }

    #[test]
    fn study_rows_and_csv_round_trip() {
        let result = run_study(&base_config()).unwrap();
        assert_eq!(result.rows.len(), 8);
        assert!(result.rows.windows(2).all(|w| w[0].d >= w[1].d));
        let csv = result.rows_csv().unwrap();
        assert!(csv.starts_with("level,d,N,kernel,beta,c,alpha,sup_error,norm_f,regime,cond_estimate\n"));
        assert!(!csv.contains('\r'));
        let back = read_rows_csv(csv.as_bytes()).unwrap();
        assert_eq!(back.len(), result.rows.len());
        for (a, b) in back.iter().zip(&result.rows) {
            assert_eq!(a.sup_error, b.sup_error);
            assert_eq!(a.regime, b.regime);
            assert_eq!(a.alpha, b.alpha);
        }
        assert!(result.summary.cprime_estimated);
    }

    #[test]
    fn solver_failures_are_recorded() {
        let mut c = base_config();
        c.tolerances.max_condition = Some(50.0);
        let result = run_study(&c).unwrap();
        assert!(result.summary.levels.iter().any(|l| l.failure.is_some()));
        assert!(result.rows.iter().any(|r| r.regime == "failed" && r.sup_error.is_none()));
        assert_ne!(result.exit_code(), EXIT_OK);
    }

    fn synthetic_rows(base: &BaseBound, input_l: u32, delta: f64, cprime: f64, c_alpha: f64) -> Vec<StudyRow> {
        let spec = KernelSpec::Multiquadric { beta: 1.0, c: 1.0 };
        let unit = DerivativeBoundParams::new(input_l, 1, delta, c_alpha, cprime).unwrap();
        [0.2, 0.1, 0.05, 0.025]
            .iter()
            .enumerate()
            .map(|(level, &d)| {
                let m0 = base.m0(d, 2.0).unwrap();
                let e = derivative_bound(&unit, m0, cprime * 2.0).unwrap().value;
                StudyRow {
                    level,
                    d,
                    n: 0,
                    kernel: spec,
                    alpha: Some(MultiIndex::new(vec![1])),
                    sup_error: Some(e),
                    norm_f: 2.0,
                    regime: String::new(),
                    cond_estimate: None,
                }
            })
            .collect()
    }

    #[test]
    fn synthetic_rows_meet_their_own_bound() {
        let base = BaseBound::Mq(MqBoundParams::new(1.0, 0.5, 0.2, 1.0).unwrap());
        let rows = synthetic_rows(&base, 2, 0.5, 3.0, 0.7);
        let input = BoundCheckInput { base, l: 2, delta: 0.5, cprime: 3.0, min_pass_fraction: 0.8, margin_slack: 1e-9 };
        let report = check_bounds(&rows, &input).unwrap();
        assert_eq!(report.checked, 3);
        assert!(report.passed);
        assert!(report.rows.iter().all(|r| r.margin >= 1.0 - 1e-9));
        assert_eq!(report.rows[0].margin, 1.0);
        assert!(report.rows[0].calibration);
        assert!((report.c_alpha["1"] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn shrinking_delta_moves_rows_to_large_d() {
        let base = BaseBound::Mq(MqBoundParams::new(1.0, 0.5, 0.2, 1.0).unwrap());
        let rows = synthetic_rows(&base, 2, 1.0, 1e-3, 1.0);
        let count = |delta: f64| {
            let input = BoundCheckInput { base, l: 2, delta, cprime: 1e-3, min_pass_fraction: 0.8, margin_slack: 1e-9 };
            check_bounds(&rows, &input).unwrap().count(Regime::LargeD)
        };
        assert!(count(0.01) > count(0.1));
    }

    #[test]
    fn check_requires_rows() {
        let base = BaseBound::Mq(MqBoundParams::new(1.0, 0.5, 0.2, 1.0).unwrap());
        let input = BoundCheckInput { base, l: 2, delta: 0.5, cprime: 3.0, min_pass_fraction: 0.8, margin_slack: 1e-9 };
        assert!(matches!(check_bounds(&[], &input), Err(Error::MissingFit(_))));
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]) - 0.8).abs() < 1e-12);
    }
}
