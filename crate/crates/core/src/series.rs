//! Truncated power series in ε with floating coefficients.

use std::f64::consts::PI;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeriesError {
    #[error("series orders differ ({left} vs {right})")]
    OrderMismatch { left: usize, right: usize },
    #[error("sqrt needs a positive constant term, got {0}")]
    NonPositiveConstantTerm(f64),
    #[error("expected at least {expected} prefix values, got {got}")]
    BadPrefixLength { expected: usize, got: usize },
}

/// `c_0 + c_1 ε + … + c_M ε^M`, truncated at order `M`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsSeries {
    coeffs: Vec<f64>,
}

impl EpsSeries {
    /// Pads or truncates `coeffs` to order `order`.
    pub fn new(mut coeffs: Vec<f64>, order: usize) -> Self {
        coeffs.resize(order + 1, 0.0);
        Self { coeffs }
    }

    pub fn constant(c: f64, order: usize) -> Self {
        Self::new(vec![c], order)
    }

    pub fn zero(order: usize) -> Self {
        Self::constant(0.0, order)
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff(&self, k: usize) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }

    pub fn truncate(&self, order: usize) -> Self {
        Self::new(self.coeffs[..=order.min(self.order())].to_vec(), order)
    }

    /// Value of the polynomial at `eps`.
    pub fn eval(&self, eps: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * eps + c)
    }

    fn check(&self, other: &Self) -> Result<(), SeriesError> {
        if self.order() != other.order() {
            return Err(SeriesError::OrderMismatch { left: self.order(), right: other.order() });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self, SeriesError> {
        self.check(other)?;
        Ok(Self { coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect() })
    }

    pub fn sub(&self, other: &Self) -> Result<Self, SeriesError> {
        self.check(other)?;
        Ok(Self { coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect() })
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { coeffs: self.coeffs.iter().map(|c| c * s).collect() }
    }

    pub fn add_constant(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.coeffs[0] += c;
        out
    }

    pub fn mul(&self, other: &Self) -> Result<Self, SeriesError> {
        self.check(other)?;
        let m = self.order();
        let mut out = vec![0.0; m + 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for (j, b) in other.coeffs[..=m - i].iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Ok(Self { coeffs: out })
    }

    pub fn sqrt(&self) -> Result<Self, SeriesError> {
        let a = &self.coeffs;
        if !(a[0] > 0.0) {
            return Err(SeriesError::NonPositiveConstantTerm(a[0]));
        }
        let m = self.order();
        let mut b = vec![0.0; m + 1];
        b[0] = a[0].sqrt();
        for n in 1..=m {
            let cross: f64 = (1..n).map(|k| b[k] * b[n - k]).sum();
            b[n] = (a[n] - cross) / (2.0 * b[0]);
        }
        Ok(Self { coeffs: b })
    }

    /// `(sin u, cos u)` for a series with zero constant term.
    fn sin_cos_small(&self) -> (Self, Self) {
        debug_assert!(self.coeffs[0] == 0.0);
        let m = self.order();
        let mut sin = Self::zero(m);
        let mut cos = Self::constant(1.0, m);
        // power = u^k / k!
        let mut power = Self::constant(1.0, m);
        for k in 1..=m {
            power = power.mul(self).unwrap().scale(1.0 / k as f64);
            let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
            let target = if k % 2 == 1 { &mut sin } else { &mut cos };
            for (t, p) in target.coeffs.iter_mut().zip(&power.coeffs) {
                *t += sign * p;
            }
        }
        (sin, cos)
    }

    fn split_constant(&self) -> (f64, Self) {
        let mut rest = self.clone();
        let c = rest.coeffs[0];
        rest.coeffs[0] = 0.0;
        (c, rest)
    }

    pub fn sin(&self) -> Self {
        let (c, u) = self.split_constant();
        let (s, co) = u.sin_cos_small();
        s.scale(c.cos()).add(&co.scale(c.sin())).unwrap()
    }

    pub fn cos(&self) -> Self {
        let (c, u) = self.split_constant();
        let (s, co) = u.sin_cos_small();
        co.scale(c.cos()).sub(&s.scale(c.sin())).unwrap()
    }

    /// `sin(π s)` for `s` with constant term 1, expanded as `−sin(π(s − 1))`
    /// so that no `sin(π)` round-off enters.
    pub fn sin_at_pi(&self) -> Self {
        let (_, t) = self.split_constant();
        t.scale(PI).sin_cos_small().0.scale(-1.0)
    }

    /// `cos(π s)` for `s` with constant term 1, i.e. `−cos(π(s − 1))`.
    pub fn cos_at_pi(&self) -> Self {
        let (_, t) = self.split_constant();
        t.scale(PI).sin_cos_small().1.scale(-1.0)
    }
}

/// `1 + Σ_{j≥1} ε^j μ_j` to the given order; missing μ are zero.
pub fn lambda_series(mu: &[f64], order: usize) -> EpsSeries {
    let mut c = vec![1.0];
    c.extend(mu.iter().take(order).copied());
    EpsSeries::new(c, order)
}

/// The two boundary traces of `sin(√λ (π − x₂))` at `x₂ = 0`:
/// `sin(π√λ)` and `−√λ cos(π√λ)`.
pub fn trace_series(lambda: &EpsSeries) -> Result<(EpsSeries, EpsSeries), SeriesError> {
    let s = lambda.sqrt()?;
    let d = s.sin_at_pi();
    let n = s.mul(&s.cos_at_pi())?.scale(-1.0);
    Ok((d, n))
}

/// Parts of the `i`-th trace coefficients that do not involve `μ_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePolynomials {
    pub i: usize,
    pub g_d: f64,
    pub g_n: f64,
}

/// `G_i^D`, `G_i^N` at the given `μ₁…μ_{i−1}`; entries beyond index
/// `i − 1` of `mu_prefix` are ignored.
pub fn extract_g(i: usize, mu_prefix: &[f64]) -> Result<TracePolynomials, SeriesError> {
    if i == 0 || mu_prefix.len() < i - 1 {
        return Err(SeriesError::BadPrefixLength { expected: i.saturating_sub(1), got: mu_prefix.len() });
    }
    let lambda = lambda_series(&mu_prefix[..i - 1], i);
    let (d, n) = trace_series(&lambda)?;
    Ok(TracePolynomials { i, g_d: d.coeff(i), g_n: n.coeff(i) })
}
