//! Cube domains, point sets, fill distance, the subcube-coverage condition,
//! and node generators for refinement studies.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned cube `[lower, lower + side]ⁿ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeDomain {
    lower: Vec<f64>,
    side: f64,
}

impl CubeDomain {
    pub fn new(lower: Vec<f64>, side: f64) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidParameter("domain dimension must be at least 1".into()));
        }
        if !(side.is_finite() && side > 0.0) {
            return Err(Error::InvalidParameter(format!("side {side} must be positive")));
        }
        if lower.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("domain corner"));
        }
        Ok(CubeDomain { lower, side })
    }

    /// `[0, 1]ⁿ`
    pub fn unit(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim], 1.0)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.lower)
            .all(|(&v, &lo)| v >= lo && v <= lo + self.side)
    }

    /// Whether the closed ball `B̄(x, radius)` lies inside the cube.
    pub fn contains_ball(&self, x: &[f64], radius: f64) -> bool {
        x.iter()
            .zip(&self.lower)
            .all(|(&v, &lo)| v - radius >= lo && v + radius <= lo + self.side)
    }

    /// Uniform grid with `resolution` points per axis, faces included.
    pub fn probe_grid(&self, resolution: usize) -> Vec<Vec<f64>> {
        let r = resolution.max(2);
        let axis: Vec<f64> = (0..r)
            .map(|i| i as f64 * self.side / (r - 1) as f64)
            .collect();
        lattice(&self.lower, &[axis])
    }

    fn scaled(&self, t: f64) -> CubeDomain {
        CubeDomain {
            lower: self.lower.iter().map(|v| v * t).collect(),
            side: self.side * t,
        }
    }
}

/// Cartesian product of per-axis offsets (one shared list when `axes.len() == 1`).
fn lattice(lower: &[f64], axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dim = lower.len();
    let axis_of = |a: usize| -> &Vec<f64> { if axes.len() == 1 { &axes[0] } else { &axes[a] } };
    let mut out = vec![Vec::with_capacity(dim)];
    for a in 0..dim {
        let offsets = axis_of(a);
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<f64>| {
                offsets.iter().map(move |&o| {
                    let mut p = prefix.clone();
                    p.push(lower[a] + o);
                    p
                })
            })
            .collect();
    }
    out
}

/// Finite nodes in `ℝⁿ`, pairwise distinct.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    dim: usize,
    points: Vec<Vec<f64>>,
}

impl PointSet {
    pub fn new(dim: usize, points: Vec<Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("point dimension must be at least 1".into()));
        }
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("point coordinate"));
            }
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| points[a].partial_cmp(&points[b]).expect("finite"));
        for w in order.windows(2) {
            if points[w[0]] == points[w[1]] {
                return Err(Error::DuplicatePoints {
                    first: w[0].min(w[1]),
                    second: w[0].max(w[1]),
                });
            }
        }
        Ok(PointSet { dim, points })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.iter().map(Vec::as_slice)
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn into_points(self) -> Vec<Vec<f64>> {
        self.points
    }

    /// Position of an identical point, if any.
    pub fn position(&self, x: &[f64]) -> Option<usize> {
        self.points.iter().position(|p| p.as_slice() == x)
    }

    /// One point per row, coordinates only, no header.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for p in &self.points {
            w.write_record(p.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
        let mut points = Vec::new();
        for record in r.records() {
            let record = record?;
            let p = record
                .iter()
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidParameter(format!("bad coordinate `{f}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            points.push(p);
        }
        let dim = points.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::EmptyPointSet);
        }
        Self::new(dim, points)
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Default fill-distance sampling resolution per axis.
pub fn default_fill_resolution(dim: usize) -> usize {
    match dim {
        0..=2 => 128,
        3 => 32,
        _ => 16,
    }
}

/// Sampled fill distance `sup_{y∈Ω} min_{x∈X} |y − x|`.
///
/// The supremum is taken over the vertices and cell centers of an `rⁿ`
/// grid on the domain, so the result is a lower bound on the true value
/// that converges as `r` grows (error at most one cell diameter).
pub fn fill_distance(domain: &CubeDomain, points: &PointSet, resolution: usize) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    if points.dim() != domain.dim() {
        return Err(Error::DimensionMismatch {
            expected: domain.dim(),
            found: points.dim(),
        });
    }
    let r = resolution.max(1);
    let h = domain.side() / r as f64;
    let vertices: Vec<f64> = (0..=r).map(|i| i as f64 * h).collect();
    let centers: Vec<f64> = (0..r).map(|i| (i as f64 + 0.5) * h).collect();
    let mut worst = 0.0f64;
    for axis_set in [vertices, centers] {
        for y in lattice(domain.lower(), &[axis_set]) {
            let nearest = points
                .iter()
                .map(|x| distance(&y, x))
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(nearest);
        }
    }
    Ok(worst)
}

/// Sampled check that every subcube of side `2d` of `cube` contains a node.
///
/// Subcubes are placed on the lattice of step `d` along each axis, with the
/// last position flush to the far face. This is a necessary condition for
/// the continuum statement, not a certificate of it.
pub fn coverage_check(cube: &CubeDomain, points: &PointSet, d: f64) -> Result<bool> {
    if !(d > 0.0 && 2.0 * d <= cube.side() * (1.0 + 1e-12)) {
        return Err(Error::OutOfRange(format!(
            "d = {d} must satisfy 0 < 2d <= {}",
            cube.side()
        )));
    }
    if points.dim() != cube.dim() {
        return Err(Error::DimensionMismatch {
            expected: cube.dim(),
            found: points.dim(),
        });
    }
    let span = (cube.side() - 2.0 * d).max(0.0);
    let slack = 1e-12 * cube.side();
    let mut offsets = Vec::new();
    let mut k = 0usize;
    loop {
        let o = k as f64 * d;
        if o > span + slack {
            break;
        }
        offsets.push(o.min(span));
        k += 1;
    }
    if offsets.last().is_none_or(|&last| last < span - slack) {
        offsets.push(span);
    }
    for corner in lattice(cube.lower(), &[offsets]) {
        let occupied = points.iter().any(|x| {
            x.iter()
                .zip(&corner)
                .all(|(&v, &lo)| v >= lo - slack && v <= lo + 2.0 * d + slack)
        });
        if !occupied {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Node-generation scheme for refinement studies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum PointScheme {
    /// Uniform lattice including the faces; the spacing is reduced so that
    /// it divides the side.
    Grid { spacing: f64 },
    /// First `count` Halton points (bases = first `n` primes), index from 1.
    Halton { count: usize },
    /// Uniform i.i.d. points from a seeded ChaCha8 stream.
    Random { count: usize, seed: u64 },
}

pub fn generate_points(domain: &CubeDomain, scheme: &PointScheme) -> Result<PointSet> {
    let dim = domain.dim();
    let points = match *scheme {
        PointScheme::Grid { spacing } => {
            if !(spacing.is_finite() && spacing > 0.0) {
                return Err(Error::InvalidParameter(format!("spacing {spacing} must be positive")));
            }
            let intervals = ((domain.side() / spacing) - 1e-9).ceil().max(1.0) as usize;
            let axis: Vec<f64> = (0..=intervals)
                .map(|i| i as f64 * domain.side() / intervals as f64)
                .collect();
            lattice(domain.lower(), &[axis])
        }
        PointScheme::Halton { count } => {
            if count == 0 {
                return Err(Error::InvalidParameter("count must be at least 1".into()));
            }
            let bases = first_primes(dim);
            (1..=count as u64)
                .map(|i| {
                    bases
                        .iter()
                        .zip(domain.lower())
                        .map(|(&b, &lo)| lo + domain.side() * radical_inverse(i, b))
                        .collect()
                })
                .collect()
        }
        PointScheme::Random { count, seed } => {
            if count == 0 {
                return Err(Error::InvalidParameter("count must be at least 1".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count)
                .map(|_| {
                    domain
                        .lower()
                        .iter()
                        .map(|&lo| lo + domain.side() * rng.random::<f64>())
                        .collect()
                })
                .collect()
        }
    };
    PointSet::new(dim, points)
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    out
}

fn first_primes(n: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(n);
    let mut candidate = 2u64;
    while primes.len() < n {
        if primes.iter().take_while(|&&p| p * p <= candidate).all(|&p| !candidate.is_multiple_of(p)) {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}

/// Dilate a domain and point set about the origin (used by scaling checks).
pub fn scale(domain: &CubeDomain, points: &PointSet, t: f64) -> Result<(CubeDomain, PointSet)> {
    let pts = points
        .iter()
        .map(|p| p.iter().map(|v| v * t).collect())
        .collect();
    Ok((domain.scaled(t), PointSet::new(points.dim(), pts)?))
}
