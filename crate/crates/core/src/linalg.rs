//! Dense 2×2 and 4×4 complex matrices sized for single-qubit work.

use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Row-major 2×2 complex matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat2(pub [[C64; 2]; 2]);

/// A 2×2 matrix expected to be unitary.
pub type Unitary2 = Mat2;

impl Mat2 {
    pub const fn new(a: C64, b: C64, c: C64, d: C64) -> Self {
        Mat2([[a, b], [c, d]])
    }

    pub const fn zero() -> Self {
        Mat2([[ZERO, ZERO], [ZERO, ZERO]])
    }

    pub const fn identity() -> Self {
        Mat2([[ONE, ZERO], [ZERO, ONE]])
    }

    pub fn real(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2::new(a.into(), b.into(), c.into(), d.into())
    }

    pub fn diag(a: C64, d: C64) -> Self {
        Mat2::new(a, ZERO, ZERO, d)
    }

    /// Pauli basis element: 0 → I, 1 → σx, 2 → σy, 3 → σz.
    pub fn pauli(index: usize) -> Self {
        match index {
            0 => Mat2::identity(),
            1 => Mat2::new(ZERO, ONE, ONE, ZERO),
            2 => Mat2::new(ZERO, -I, I, ZERO),
            3 => Mat2::new(ONE, ZERO, ZERO, -ONE),
            _ => panic!("pauli index {index} out of range"),
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.0[r][c]
    }

    #[inline]
    pub fn adjoint(&self) -> Self {
        let m = &self.0;
        Mat2::new(m[0][0].conj(), m[1][0].conj(), m[0][1].conj(), m[1][1].conj())
    }

    #[inline]
    pub fn trace(&self) -> C64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn det(&self) -> C64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    #[inline]
    pub fn scale(&self, s: C64) -> Self {
        let m = &self.0;
        Mat2::new(m[0][0] * s, m[0][1] * s, m[1][0] * s, m[1][1] * s)
    }

    #[inline]
    pub fn scale_re(&self, s: f64) -> Self {
        let m = &self.0;
        Mat2::new(m[0][0] * s, m[0][1] * s, m[1][0] * s, m[1][1] * s)
    }

    /// tr(self · other) without forming the product.
    #[inline]
    pub fn trace_mul(&self, other: &Mat2) -> C64 {
        let a = &self.0;
        let b = &other.0;
        a[0][0] * b[0][0] + a[0][1] * b[1][0] + a[1][0] * b[0][1] + a[1][1] * b[1][1]
    }

    pub fn max_abs_diff(&self, other: &Mat2) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..2 {
            for c in 0..2 {
                worst = worst.max((self.0[r][c] - other.0[r][c]).norm());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.max_abs_diff(&Mat2::zero())
    }

    /// Max-norm deviation of U†U from the identity.
    pub fn unitarity_error(&self) -> f64 {
        (self.adjoint() * *self).max_abs_diff(&Mat2::identity())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Largest singular value.
    pub fn operator_norm(&self) -> f64 {
        let h = self.adjoint() * *self;
        let a = h.0[0][0].re;
        let d = h.0[1][1].re;
        let b = h.0[0][1].norm();
        let mean = 0.5 * (a + d);
        let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        (mean + disc).max(0.0).sqrt()
    }

    /// Eigenvalues of a general 2×2 matrix.
    pub fn eigenvalues(&self) -> [C64; 2] {
        let tr = self.trace();
        let det = self.det();
        let disc = (tr * tr * 0.25 - det).sqrt();
        [tr * 0.5 + disc, tr * 0.5 - disc]
    }
}

impl Mul for Mat2 {
    type Output = Mat2;

    #[inline]
    fn mul(self, rhs: Mat2) -> Mat2 {
        let a = &self.0;
        let b = &rhs.0;
        Mat2([
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ])
    }
}

impl Add for Mat2 {
    type Output = Mat2;

    #[inline]
    fn add(self, rhs: Mat2) -> Mat2 {
        let a = &self.0;
        let b = &rhs.0;
        Mat2::new(a[0][0] + b[0][0], a[0][1] + b[0][1], a[1][0] + b[1][0], a[1][1] + b[1][1])
    }
}

impl Sub for Mat2 {
    type Output = Mat2;

    #[inline]
    fn sub(self, rhs: Mat2) -> Mat2 {
        self + (-rhs)
    }
}

impl Neg for Mat2 {
    type Output = Mat2;

    #[inline]
    fn neg(self) -> Mat2 {
        self.scale_re(-1.0)
    }
}

/// Row-major 4×4 complex matrix (process matrices in the Pauli basis).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat4(pub [[C64; 4]; 4]);

impl Mat4 {
    pub const fn zero() -> Self {
        Mat4([[ZERO; 4]; 4])
    }

    pub fn adjoint(&self) -> Self {
        let mut out = Mat4::zero();
        for r in 0..4 {
            for c in 0..4 {
                out.0[r][c] = self.0[c][r].conj();
            }
        }
        out
    }

    pub fn trace(&self) -> C64 {
        (0..4).map(|i| self.0[i][i]).sum()
    }

    /// tr(self† · other) = Σ conj(self_mn) other_mn.
    pub fn overlap(&self, other: &Mat4) -> C64 {
        let mut acc = ZERO;
        for r in 0..4 {
            for c in 0..4 {
                acc += self.0[r][c].conj() * other.0[r][c];
            }
        }
        acc
    }

    pub fn max_abs_diff(&self, other: &Mat4) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..4 {
            for c in 0..4 {
                worst = worst.max((self.0[r][c] - other.0[r][c]).norm());
            }
        }
        worst
    }

    pub fn hermiticity_error(&self) -> f64 {
        self.max_abs_diff(&self.adjoint())
    }
}

impl Mul for Mat4 {
    type Output = Mat4;

    fn mul(self, rhs: Mat4) -> Mat4 {
        let mut out = Mat4::zero();
        for r in 0..4 {
            for c in 0..4 {
                out.0[r][c] = (0..4).map(|k| self.0[r][k] * rhs.0[k][c]).sum();
            }
        }
        out
    }
}

/// Sum in a fixed binary-tree order, so results do not depend on how the
/// inputs were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 8 => values.iter().sum(),
        n => {
            let (lo, hi) = values.split_at(n / 2);
            pairwise_sum(lo) + pairwise_sum(hi)
        }
    }
}

/// Element-wise pairwise sum of fixed-width rows.
pub fn pairwise_sum_rows<const N: usize>(rows: &[[f64; N]]) -> [f64; N] {
    match rows.len() {
        0 => [0.0; N],
        1 => rows[0],
        n => {
            let (lo, hi) = rows.split_at(n / 2);
            let a = pairwise_sum_rows(lo);
            let b = pairwise_sum_rows(hi);
            std::array::from_fn(|i| a[i] + b[i])
        }
    }
}

/// Element-wise pairwise sum of equally sized vectors.
pub fn pairwise_sum_vecs(rows: &[Vec<f64>]) -> Vec<f64> {
    match rows.len() {
        0 => Vec::new(),
        1 => rows[0].clone(),
        n => {
            let (lo, hi) = rows.split_at(n / 2);
            let mut a = pairwise_sum_vecs(lo);
            let b = pairwise_sum_vecs(hi);
            a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
            a
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pauli_algebra() {
        let x = Mat2::pauli(1);
        let y = Mat2::pauli(2);
        let z = Mat2::pauli(3);
        assert!((x * y).max_abs_diff(&z.scale(I)) < 1e-15);
        for p in 1..4 {
            let s = Mat2::pauli(p);
            assert!((s * s).max_abs_diff(&Mat2::identity()) < 1e-15);
            assert!(s.trace().norm() < 1e-15);
        }
    }

    #[test]
    fn operator_norm_of_scaled_unitary() {
        let h = Mat2::real(1.0, 1.0, 1.0, -1.0).scale_re(0.5f64.sqrt());
        assert!((h.operator_norm() - 1.0).abs() < 1e-14);
        assert!((h.scale_re(0.3).operator_norm() - 0.3).abs() < 1e-14);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 499_500.0);
        let rows: Vec<[f64; 2]> = (0..37).map(|i| [i as f64, 1.0]).collect();
        assert_eq!(pairwise_sum_rows(&rows), [666.0, 37.0]);
    }
}
