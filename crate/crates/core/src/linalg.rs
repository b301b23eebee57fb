//! Small dense linear algebra: products, linear solves and the matrix
//! exponential. Sizes in this crate stay in the hundreds, so plain row-major
//! storage and cubic algorithms are enough.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum LinalgError {
    #[error("matrix is singular to working precision")]
    Singular,
    #[error("dimension mismatch")]
    Dimension,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(LinalgError::Dimension);
        }
        Ok(Self { n, data: rows.iter().flatten().copied().collect() })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn add_assign(&mut self, other: &DenseMatrix) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn mul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = DenseMatrix::zeros(n);
        for i in 0..n {
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * n..(k + 1) * n];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// Row vector times matrix: `x^T A`.
    pub fn left_apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut out = vec![0.0; self.n];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += xi * a;
            }
        }
        out
    }

    /// Matrix times column vector.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n).map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// Infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.n).map(|i| self.row(i).iter().map(|x| libm::fabs(*x)).sum::<f64>()).fold(0.0, f64::max)
    }

    /// Matrix exponential by scaling and squaring of a truncated Taylor
    /// series.
    ///
    /// The argument is scaled by `2^-s` until its norm is at most 1/2, where
    /// 24 Taylor terms leave a remainder below `1e-30` relative to the
    /// identity.
    pub fn expm(&self) -> DenseMatrix {
        let n = self.n;
        let norm = self.norm_inf();
        let mut squarings = 0u32;
        let mut scale = 1.0;
        while norm * scale > 0.5 {
            scale *= 0.5;
            squarings += 1;
        }
        let mut a = self.clone();
        a.scale(scale);
        let mut result = DenseMatrix::identity(n);
        let mut term = DenseMatrix::identity(n);
        for k in 1..=24 {
            term = term.mul(&a);
            term.scale(1.0 / k as f64);
            result.add_assign(&term);
        }
        for _ in 0..squarings {
            result = result.mul(&result);
        }
        result
    }

    /// Solves `A x = b` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if b.len() != self.n {
            return Err(LinalgError::Dimension);
        }
        let n = self.n;
        let mut a = self.data.clone();
        let mut x = b.to_vec();
        let scale = self.norm_inf().max(f64::MIN_POSITIVE);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| libm::fabs(a[i * n + col]).total_cmp(&libm::fabs(a[j * n + col])))
                .unwrap_or(col);
            if libm::fabs(a[pivot * n + col]) <= 1e-14 * scale {
                return Err(LinalgError::Singular);
            }
            if pivot != col {
                for k in 0..n {
                    a.swap(col * n + k, pivot * n + k);
                }
                x.swap(col, pivot);
            }
            let d = a[col * n + col];
            for row in col + 1..n {
                let f = a[row * n + col] / d;
                if f == 0.0 {
                    continue;
                }
                for k in col..n {
                    a[row * n + k] -= f * a[col * n + k];
                }
                x[row] -= f * x[col];
            }
        }
        for col in (0..n).rev() {
            let mut s = x[col];
            for k in col + 1..n {
                s -= a[col * n + k] * x[k];
            }
            x[col] = s / a[col * n + col];
        }
        Ok(x)
    }
}

impl core::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

/// Stationary distribution `pi` of a generator `Q` (rows sum to zero):
/// `pi Q = 0`, `sum pi = 1`.
pub fn stationary_distribution(generator: &DenseMatrix) -> Result<Vec<f64>, LinalgError> {
    let n = generator.dim();
    // Solve Q^T pi = 0 with the last equation replaced by normalization.
    let mut a = generator.transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = vec![0.0; n];
    rhs[n - 1] = 1.0;
    a.solve(&rhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_of_two_state_generator_matches_closed_form() {
        let (a, b, t) = (0.7, 1.9, 1.3);
        let mut q = DenseMatrix::from_rows(&[vec![-a, a], vec![b, -b]]).unwrap();
        q.scale(t);
        let e = q.expm();
        let s = a + b;
        let decay = (-s * t).exp();
        let p00 = b / s + a / s * decay;
        let p11 = a / s + b / s * decay;
        assert!((e[(0, 0)] - p00).abs() < 1e-14);
        assert!((e[(1, 1)] - p11).abs() < 1e-14);
        assert!((e[(0, 1)] - (1.0 - p00)).abs() < 1e-14);
    }

    #[test]
    fn expm_of_nilpotent_is_polynomial() {
        let n = DenseMatrix::from_rows(&[vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 3.0], vec![0.0, 0.0, 0.0]]).unwrap();
        let e = n.expm();
        assert!((e[(0, 1)] - 2.0).abs() < 1e-14);
        assert!((e[(0, 2)] - 3.0).abs() < 1e-14);
        assert!((e[(1, 2)] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn solve_recovers_known_solution() {
        let a = DenseMatrix::from_rows(&[vec![0.0, 2.0, 1.0], vec![1.0, -1.0, 4.0], vec![3.0, 1.0, 1.0]]).unwrap();
        let x = [1.5, -2.0, 0.25];
        let b = a.apply(&x);
        let got = a.solve(&b).unwrap();
        for (g, e) in got.iter().zip(&x) {
            assert!((g - e).abs() < 1e-13);
        }
        assert_eq!(DenseMatrix::zeros(2).solve(&[1.0, 1.0]), Err(LinalgError::Singular));
    }

    #[test]
    fn stationary_of_two_state_chain() {
        let q = DenseMatrix::from_rows(&[vec![-2.0, 2.0], vec![1.0, -1.0]]).unwrap();
        let pi = stationary_distribution(&q).unwrap();
        assert!((pi[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((pi[1] - 2.0 / 3.0).abs() < 1e-15);
    }
}
