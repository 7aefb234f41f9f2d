//! Square band matrices with equal lower and upper bandwidth, and an
//! unpivoted LU factorization for matrices whose Hermitian part is
//! positive definite.

use nalgebra::ComplexField;
use num_complex::Complex64;
use thiserror::Error;

/// Field of matrix entries: `f64` or `Complex64`.
pub trait Scalar: ComplexField<RealField = f64> + Copy + Default + Send + Sync + 'static {
    fn re(r: f64) -> Self {
        Self::from_real(r)
    }
    fn cplx(re: f64, im: f64) -> Self;
    fn mag2(self) -> f64 {
        self.modulus_squared()
    }
    fn conj(self) -> Self {
        self.conjugate()
    }
}

impl Scalar for f64 {
    fn cplx(re: f64, _im: f64) -> Self {
        re
    }
}

impl Scalar for Complex64 {
    fn cplx(re: f64, im: f64) -> Self {
        Complex64::new(re, im)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BandError {
    #[error("zero or non-finite pivot {value:e} at row {row}")]
    Pivot { row: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone)]
pub struct BandMatrix<T> {
    n: usize,
    bw: usize,
    data: Vec<T>,
}

impl<T: Scalar> BandMatrix<T> {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self { n, bw, data: vec![T::zero(); n * (2 * bw + 1)] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(i.abs_diff(j) <= self.bw);
        i * (2 * self.bw + 1) + j + self.bw - i
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        if i.abs_diff(j) > self.bw {
            T::zero()
        } else {
            self.data[self.slot(i, j)]
        }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    /// `Σ_k c_k A_k` over matrices with identical shape.
    pub fn combine(parts: &[(T, &BandMatrix<T>)]) -> Self {
        let first = parts[0].1;
        let mut out = Self::zeros(first.n, first.bw);
        for (c, m) in parts {
            assert_eq!((m.n, m.bw), (first.n, first.bw));
            for (o, v) in out.data.iter_mut().zip(&m.data) {
                *o += *c * *v;
            }
        }
        out
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> BandMatrix<U> {
        BandMatrix { n: self.n, bw: self.bw, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.n);
        let w = 2 * self.bw + 1;
        for (i, yi) in y.iter_mut().enumerate() {
            let lo = i.saturating_sub(self.bw);
            let hi = (i + self.bw).min(self.n - 1);
            let row = &self.data[i * w..(i + 1) * w];
            let mut s = T::zero();
            for j in lo..=hi {
                s += row[j + self.bw - i] * x[j];
            }
            *yi = s;
        }
    }

    /// `xᴴ A y`.
    pub fn form(&self, x: &[T], y: &[T]) -> T {
        let ay = self.matvec(y);
        dot(x, &ay)
    }

    /// Largest `|A_ij − conj(A_ji)|`.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in i..(i + self.bw + 1).min(self.n) {
                let d = (self.get(i, j) - self.get(j, i).conj()).modulus();
                worst = worst.max(d);
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.modulus()).fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<T> {
        nalgebra::DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    pub fn factor(&self) -> Result<BandLu<T>, BandError> {
        BandLu::new(self.clone())
    }
}

/// Unpivoted LU; `L` has a unit diagonal and both factors share the band.
#[derive(Debug, Clone)]
pub struct BandLu<T> {
    lu: BandMatrix<T>,
}

impl<T: Scalar> BandLu<T> {
    pub fn new(mut a: BandMatrix<T>) -> Result<Self, BandError> {
        let n = a.n;
        let b = a.bw;
        let w = 2 * b + 1;
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let pivot = a.data[k * w + b];
            let pm = pivot.modulus();
            if !pm.is_finite() || pm <= 1e-14 * scale {
                return Err(BandError::Pivot { row: k, value: pm });
            }
            let inv = T::one() / pivot;
            let hi = (k + b).min(n - 1);
            let (head, tail) = a.data.split_at_mut((k + 1) * w);
            let prow = &head[k * w..];
            // prow[j + b - k] holds A[k][j]
            for i in k + 1..=hi {
                let row = &mut tail[(i - k - 1) * w..(i - k) * w];
                let l = row[k + b - i] * inv;
                row[k + b - i] = l;
                if l == T::zero() {
                    continue;
                }
                for j in k + 1..=hi {
                    let u = prow[j + b - k];
                    row[j + b - i] -= l * u;
                }
            }
        }
        Ok(Self { lu: a })
    }

    pub fn dim(&self) -> usize {
        self.lu.n
    }

    pub fn solve_in_place(&self, x: &mut [T]) {
        let n = self.lu.n;
        let b = self.lu.bw;
        let w = 2 * b + 1;
        let d = &self.lu.data;
        for i in 0..n {
            let lo = i.saturating_sub(b);
            let row = &d[i * w..(i + 1) * w];
            let mut s = x[i];
            for j in lo..i {
                s -= row[j + b - i] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + b).min(n - 1);
            let row = &d[i * w..(i + 1) * w];
            let mut s = x[i];
            for j in i + 1..=hi {
                s -= row[j + b - i] * x[j];
            }
            x[i] = s / row[b];
        }
    }

    pub fn solve(&self, rhs: &[T]) -> Vec<T> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

pub fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).fold(T::zero(), |acc, (a, b)| acc + a.conj() * *b)
}

pub fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * *xi;
    }
}
