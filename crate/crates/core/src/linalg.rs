//! Dense matrices and a symmetric-indefinite (Bunch–Kaufman) solver with a
//! 1-norm condition estimate, generic over [`Real`].

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let n = rows.len();
        let mut data = Vec::with_capacity(n * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    found: row.len(),
                });
            }
            data.extend(row);
        }
        Ok(Matrix {
            rows: n,
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        (0..self.rows)
            .map(|i| dot(self.row(i), v))
            .collect()
    }

    /// `Mᵀ v`
    pub fn tr_mul_vec(&self, v: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        for (i, vi) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a.clone() * vi.clone();
            }
        }
        out
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> T {
        (0..self.cols)
            .map(|j| {
                (0..self.rows).fold(T::zero(), |acc, i| acc + self[(i, j)].abs())
            })
            .fold(T::zero(), T::max_of)
    }

    pub fn to_f64(&self) -> Matrix<f64> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(Real::to_f64).collect(),
        }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (x, y)| acc + x.clone() * y.clone())
}

pub fn norm2<T: Real>(v: &[T]) -> T {
    dot(v, v).sqrt()
}

#[derive(Clone, Debug)]
enum Pivot<T> {
    One(T),
    // Symmetric 2×2 block [[a, b], [b, c]].
    Two(T, T, T),
}

/// `P A Pᵀ = L D Lᵀ` with unit lower-triangular `L` and block-diagonal `D`
/// (1×1 and 2×2 blocks), using Bunch–Kaufman partial pivoting.
#[derive(Clone, Debug)]
pub struct SymmetricIndefinite<T> {
    n: usize,
    // perm[k] = original index placed at position k.
    perm: Vec<usize>,
    lower: Matrix<T>,
    // pivots[k] is Some at the first index of each block.
    pivots: Vec<Option<Pivot<T>>>,
    norm_one: T,
}

impl<T: Real> SymmetricIndefinite<T> {
    /// Factor a symmetric matrix; only the lower triangle is read.
    pub fn factor(a: &Matrix<T>) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: a.cols(),
            });
        }
        let mut w = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                w[(i, j)] = a[(i, j)].clone();
                w[(j, i)] = a[(i, j)].clone();
            }
        }
        let norm_one = w.norm_one();
        let alpha = T::from_f64((1.0 + 17f64.sqrt()) / 8.0);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut pivots: Vec<Option<Pivot<T>>> = vec![None; n];
        let mut lower = Matrix::zeros(n, n);

        let mut k = 0;
        while k < n {
            let (lambda, r) = column_max(&w, k);
            let akk = w[(k, k)].abs();
            let two_by_two;
            if lambda.is_zero() && akk.is_zero() {
                return Err(Error::SingularSystem {
                    condition: f64::INFINITY,
                });
            } else if lambda.is_zero() || akk >= alpha.clone() * lambda.clone() {
                two_by_two = false;
            } else {
                let sigma = row_max_excluding(&w, r, k);
                if akk.clone() * sigma.clone() >= alpha.clone() * lambda.clone() * lambda.clone() {
                    two_by_two = false;
                } else if w[(r, r)].abs() >= alpha.clone() * sigma {
                    swap_symmetric(&mut w, &mut lower, &mut perm, k, r);
                    two_by_two = false;
                } else {
                    swap_symmetric(&mut w, &mut lower, &mut perm, k + 1, r);
                    two_by_two = true;
                }
            }

            if !two_by_two {
                let d = w[(k, k)].clone();
                if d.is_zero() {
                    return Err(Error::SingularSystem {
                        condition: f64::INFINITY,
                    });
                }
                lower[(k, k)] = T::one();
                for i in k + 1..n {
                    lower[(i, k)] = w[(i, k)].clone() / d.clone();
                }
                for j in k + 1..n {
                    let ljk = lower[(j, k)].clone();
                    if ljk.is_zero() {
                        continue;
                    }
                    let scaled = ljk * d.clone();
                    for i in j..n {
                        let update = lower[(i, k)].clone() * scaled.clone();
                        w[(i, j)] -= update;
                        w[(j, i)] = w[(i, j)].clone();
                    }
                }
                pivots[k] = Some(Pivot::One(d));
                k += 1;
            } else {
                let a11 = w[(k, k)].clone();
                let a21 = w[(k + 1, k)].clone();
                let a22 = w[(k + 1, k + 1)].clone();
                let det = a11.clone() * a22.clone() - a21.clone() * a21.clone();
                if det.is_zero() {
                    return Err(Error::SingularSystem {
                        condition: f64::INFINITY,
                    });
                }
                lower[(k, k)] = T::one();
                lower[(k + 1, k + 1)] = T::one();
                for i in k + 2..n {
                    let wi1 = w[(i, k)].clone();
                    let wi2 = w[(i, k + 1)].clone();
                    // [l1 l2] = [wi1 wi2] E⁻¹
                    lower[(i, k)] =
                        (wi1.clone() * a22.clone() - wi2.clone() * a21.clone()) / det.clone();
                    lower[(i, k + 1)] = (wi2 * a11.clone() - wi1 * a21.clone()) / det.clone();
                }
                for j in k + 2..n {
                    let wj1 = w[(j, k)].clone();
                    let wj2 = w[(j, k + 1)].clone();
                    for i in j..n {
                        let update = lower[(i, k)].clone() * wj1.clone()
                            + lower[(i, k + 1)].clone() * wj2.clone();
                        w[(i, j)] -= update;
                        w[(j, i)] = w[(i, j)].clone();
                    }
                }
                pivots[k] = Some(Pivot::Two(a11, a21, a22));
                k += 2;
            }
        }
        Ok(SymmetricIndefinite {
            n,
            perm,
            lower,
            pivots,
            norm_one,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        let n = self.n;
        if b.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: b.len(),
            });
        }
        let mut y: Vec<T> = self.perm.iter().map(|&p| b[p].clone()).collect();
        // L z = P b
        for j in 0..n {
            let yj = y[j].clone();
            if yj.is_zero() {
                continue;
            }
            let block_end = match self.pivots[j] {
                Some(Pivot::Two(..)) => j + 2,
                _ => j + 1,
            };
            for (i, yi) in y.iter_mut().enumerate().skip(block_end.max(j + 1)) {
                let l = self.lower[(i, j)].clone();
                if !l.is_zero() {
                    *yi -= l * yj.clone();
                }
            }
        }
        // D w = z
        let mut k = 0;
        while k < n {
            match self.pivots[k].as_ref().expect("pivot at block start") {
                Pivot::One(d) => {
                    y[k] = y[k].clone() / d.clone();
                    k += 1;
                }
                Pivot::Two(a11, a21, a22) => {
                    let det = a11.clone() * a22.clone() - a21.clone() * a21.clone();
                    let z1 = y[k].clone();
                    let z2 = y[k + 1].clone();
                    y[k] = (a22.clone() * z1.clone() - a21.clone() * z2.clone()) / det.clone();
                    y[k + 1] = (a11.clone() * z2 - a21.clone() * z1) / det;
                    k += 2;
                }
            }
        }
        // Lᵀ x = w
        for j in (0..n).rev() {
            let mut acc = y[j].clone();
            let start = if j + 1 < n && matches!(self.pivots[j], Some(Pivot::Two(..))) {
                j + 2
            } else {
                j + 1
            };
            for i in start..n {
                let l = self.lower[(i, j)].clone();
                if !l.is_zero() {
                    acc -= l * y[i].clone();
                }
            }
            y[j] = acc;
        }
        let mut x = vec![T::zero(); n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = y[k].clone();
        }
        Ok(x)
    }

    /// Estimate of `‖A‖₁ ‖A⁻¹‖₁` (Hager–Higham; `A` symmetric so `A⁻ᵀ = A⁻¹`).
    pub fn condition_estimate(&self) -> f64 {
        let n = self.n;
        if n == 0 {
            return 0.0;
        }
        let mut x = vec![T::from_f64(1.0 / n as f64); n];
        let mut estimate = T::zero();
        let mut last_index = usize::MAX;
        for _ in 0..5 {
            let Ok(y) = self.solve(&x) else {
                return f64::INFINITY;
            };
            let norm_y = y.iter().fold(T::zero(), |acc, v| acc + v.abs());
            if norm_y <= estimate {
                break;
            }
            estimate = norm_y;
            let signs: Vec<T> = y
                .iter()
                .map(|v| if *v < T::zero() { -T::one() } else { T::one() })
                .collect();
            let Ok(z) = self.solve(&signs) else {
                return f64::INFINITY;
            };
            let (j, zmax) = z
                .iter()
                .enumerate()
                .map(|(i, v)| (i, v.abs()))
                .fold((0, T::zero()), |best, cur| if cur.1 > best.1 { cur } else { best });
            if zmax <= dot(&z, &x) || j == last_index {
                break;
            }
            last_index = j;
            x = vec![T::zero(); n];
            x[j] = T::one();
        }
        // Higham's alternating-sign vector guards against underestimates.
        let alt: Vec<T> = (0..n)
            .map(|i| {
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                T::from_f64(sign * (1.0 + i as f64 / (n.max(2) - 1) as f64))
            })
            .collect();
        if let Ok(z) = self.solve(&alt) {
            let alt_est = z.iter().fold(T::zero(), |acc, v| acc + v.abs())
                * T::from_f64(2.0 / (3.0 * n as f64));
            estimate = estimate.max_of(alt_est);
        }
        let cond = (estimate * self.norm_one.clone()).to_f64();
        if cond.is_nan() {
            f64::INFINITY
        } else {
            cond
        }
    }
}

fn column_max<T: Real>(w: &Matrix<T>, k: usize) -> (T, usize) {
    let mut best = T::zero();
    let mut idx = k;
    for i in k + 1..w.rows() {
        let v = w[(i, k)].abs();
        if v > best {
            best = v;
            idx = i;
        }
    }
    (best, idx)
}

fn row_max_excluding<T: Real>(w: &Matrix<T>, r: usize, k: usize) -> T {
    let mut best = T::zero();
    for j in k..w.rows() {
        if j != r {
            best = best.max_of(w[(r, j)].abs());
        }
    }
    best
}

fn swap_symmetric<T: Real>(
    w: &mut Matrix<T>,
    lower: &mut Matrix<T>,
    perm: &mut [usize],
    a: usize,
    b: usize,
) {
    if a == b {
        return;
    }
    let n = w.rows();
    for j in 0..n {
        let tmp = w[(a, j)].clone();
        w[(a, j)] = w[(b, j)].clone();
        w[(b, j)] = tmp;
    }
    for i in 0..n {
        let tmp = w[(i, a)].clone();
        w[(i, a)] = w[(i, b)].clone();
        w[(i, b)] = tmp;
    }
    // Already-computed columns of L follow the row permutation.
    for j in 0..a.min(b) {
        let tmp = lower[(a, j)].clone();
        lower[(a, j)] = lower[(b, j)].clone();
        lower[(b, j)] = tmp;
    }
    perm.swap(a, b);
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = rng.random_range(-1.0..1.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    fn residual(a: &Matrix<f64>, x: &[f64], b: &[f64]) -> f64 {
        a.mul_vec(x)
            .iter()
            .zip(b)
            .map(|(ax, bi)| (ax - bi).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn solves_saddle_point_system() {
        // [[A, P], [Pᵀ, 0]] with a zero diagonal block forces 2×2 pivots.
        let a = Matrix::from_rows(vec![
            vec![2.0, 1.0, 1.0, 0.0],
            vec![1.0, 3.0, 1.0, 1.0],
            vec![1.0, 1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
        ])
        .unwrap();
        let f = SymmetricIndefinite::factor(&a).unwrap();
        let b = [1.0, -2.0, 0.5, 3.0];
        let x = f.solve(&b).unwrap();
        assert!(residual(&a, &x, &b) < 1e-13);
    }

    #[test]
    fn zero_matrix_is_singular() {
        let a = Matrix::<f64>::zeros(3, 3);
        assert!(matches!(
            SymmetricIndefinite::factor(&a),
            Err(Error::SingularSystem { .. })
        ));
    }

    #[test]
    fn condition_estimate_tracks_exact_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [2, 5, 12, 30] {
            for _ in 0..10 {
                let a = random_symmetric(n, &mut rng);
                let f = SymmetricIndefinite::factor(&a).unwrap();
                let dm = DMatrix::from_fn(n, n, |i, j| a[(i, j)]);
                let inv = dm.clone().try_inverse().unwrap();
                let one = |m: &DMatrix<f64>| {
                    (0..n)
                        .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
                        .fold(0.0, f64::max)
                };
                let exact = one(&dm) * one(&inv);
                let est = f.condition_estimate();
                // Hager's estimator is a lower bound, rarely off by more than 10×.
                assert!(est <= exact * (1.0 + 1e-8), "n={n} est={est} exact={exact}");
                assert!(est >= exact / 10.0, "n={n} est={est} exact={exact}");
            }
        }
    }

    proptest! {
        #[test]
        fn random_symmetric_solves(seed in 0u64..500, n in 1usize..25) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_symmetric(n, &mut rng);
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f = SymmetricIndefinite::factor(&a).unwrap();
            let x = f.solve(&b).unwrap();
            let scale = f.condition_estimate().max(1.0);
            prop_assert!(residual(&a, &x, &b) <= 1e-12 * scale);
        }
    }
}
