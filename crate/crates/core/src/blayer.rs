//! The boundary-layer field `X(ξ, η)` of the periodic window array.
//!
//! `X = Re ln(sin z + √(sin²z − sin²η)) − ξ₂` with `z = ξ₁ + iξ₂`. It is
//! harmonic in the upper half-plane, even and π-periodic in `ξ₁`, equal to
//! `ln sin η` on the windows and has `∂X/∂ξ₂ = −1` between them.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use thiserror::Error;

use crate::quadrature::{self, GaussLegendre, QuadratureError};

/// Points with `ξ₂` above this use the overflow-free representation.
const FAR_FIELD: f64 = 1.0;

/// Radius around a window end inside which the gradient is refused.
pub const TRANSITION_EXCLUSION: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundaryLayerError {
    #[error("eta must lie in (0, pi/2], got {0}")]
    InvalidEta(f64),
    #[error("xi2 must be non-negative, got {0}")]
    NegativeXi2(f64),
    #[error("gradient is singular at the window end ({0}, {1})")]
    TransitionSingularity(f64, f64),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// `X(·, η)` with its cached constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryLayerField {
    pub eta: f64,
    pub ln_sin_eta: f64,
    sin2_eta: f64,
    degenerate: bool,
}

impl BoundaryLayerField {
    pub fn new(eta: f64) -> Result<Self, BoundaryLayerError> {
        if !(eta > 0.0) || eta > FRAC_PI_2 || !eta.is_finite() {
            return Err(BoundaryLayerError::InvalidEta(eta));
        }
        let degenerate = eta == FRAC_PI_2;
        let s = eta.sin();
        Ok(Self { eta, ln_sin_eta: if degenerate { 0.0 } else { s.ln() }, sin2_eta: s * s, degenerate })
    }

    pub fn value(&self, xi1: f64, xi2: f64) -> Result<f64, BoundaryLayerError> {
        if !(xi2 >= 0.0) {
            return Err(BoundaryLayerError::NegativeXi2(xi2));
        }
        Ok(self.value_unchecked(xi1, xi2))
    }

    pub(crate) fn value_unchecked(&self, xi1: f64, xi2: f64) -> f64 {
        if self.degenerate {
            return 0.0;
        }
        if xi2 >= FAR_FIELD {
            let (q2, t) = self.far_branch(xi1, xi2);
            let one_minus = Complex64::new(1.0, 0.0) - q2;
            one_minus.norm().ln() - std::f64::consts::LN_2 + (Complex64::new(1.0, 0.0) + t).norm().ln()
        } else {
            let z = Complex64::new(xi1, xi2);
            let s = z.sin();
            let w = self.near_branch(xi1, xi2, s);
            (s + w).norm().ln() - xi2
        }
    }

    pub fn gradient(&self, xi1: f64, xi2: f64) -> Result<(f64, f64), BoundaryLayerError> {
        if !(xi2 >= 0.0) {
            return Err(BoundaryLayerError::NegativeXi2(xi2));
        }
        if self.degenerate {
            return Ok((0.0, 0.0));
        }
        let r = reduce_period(xi1);
        if xi2 < TRANSITION_EXCLUSION && ((r.abs() - self.eta).abs() < TRANSITION_EXCLUSION) {
            return Err(BoundaryLayerError::TransitionSingularity(xi1, xi2));
        }
        Ok(self.gradient_unchecked(xi1, xi2))
    }

    pub(crate) fn gradient_unchecked(&self, xi1: f64, xi2: f64) -> (f64, f64) {
        if self.degenerate {
            return (0.0, 0.0);
        }
        let w_ratio = if xi2 >= FAR_FIELD {
            // cos z / w = cot z / t
            let (q2, t) = self.far_branch(xi1, xi2);
            let one = Complex64::new(1.0, 0.0);
            let cot = Complex64::i() * (q2 + one) / (q2 - one);
            cot / t
        } else {
            let z = Complex64::new(xi1, xi2);
            let s = z.sin();
            let w = self.near_branch(xi1, xi2, s);
            z.cos() / w
        };
        (w_ratio.re, -w_ratio.im - 1.0)
    }

    /// `Y = X + ξ₂ − ln sin η`.
    pub fn y_value(&self, xi1: f64, xi2: f64) -> Result<f64, BoundaryLayerError> {
        Ok(self.value(xi1, xi2)? + xi2 - self.ln_sin_eta)
    }

    /// Square root of `sin²z − sin²η` on the branch maximising `|sin z + w|`.
    fn near_branch(&self, xi1: f64, xi2: f64, s: Complex64) -> Complex64 {
        let w = (s * s - self.sin2_eta).sqrt();
        let plus = (s + w).norm();
        let minus = (s - w).norm();
        let gap = (plus - minus).abs();
        if gap > 1e-12 * (plus + minus) || xi2 > 1e-6 {
            return if plus >= minus { w } else { -w };
        }
        // Tie on the real axis (inside the window): follow the branch from
        // slightly above.
        let dz = 1e-7;
        let zp = Complex64::new(xi1, xi2 + dz);
        let sp = zp.sin();
        let wp = (sp * sp - self.sin2_eta).sqrt();
        let wp = if (sp + wp).norm() >= (sp - wp).norm() { wp } else { -wp };
        if (w - wp).norm() <= (w + wp).norm() {
            w
        } else {
            -w
        }
    }

    /// For large `ξ₂`: returns `q²` with `q = e^{iz}` and the branch `t` of
    /// `√(1 + 4 sin²η q²/(1 − q²)²)` maximising `|1 + t|`.
    fn far_branch(&self, xi1: f64, xi2: f64) -> (Complex64, Complex64) {
        let q2 = Complex64::from_polar((-2.0 * xi2).exp(), 2.0 * xi1);
        let one_minus = Complex64::new(1.0, 0.0) - q2;
        let u = 4.0 * self.sin2_eta * q2 / (one_minus * one_minus);
        let t = (Complex64::new(1.0, 0.0) + u).sqrt();
        let t = if (1.0 + t).norm() >= (1.0 - t).norm() { t } else { -t };
        (q2, t)
    }
}

fn reduce_period(xi1: f64) -> f64 {
    let r = xi1.rem_euclid(PI);
    if r > FRAC_PI_2 {
        r - PI
    } else {
        r
    }
}

/// `sup |X(·, η)|`, attained on the boundary: `max(|ln sin η|, ln(1 + cos η))`.
pub fn sharp_bound(eta: f64) -> f64 {
    if eta >= FRAC_PI_2 {
        return 0.0;
    }
    eta.sin().ln().abs().max((1.0 + eta.cos()).ln())
}

pub fn eval_x(xi1: f64, xi2: f64, eta: f64) -> Result<f64, BoundaryLayerError> {
    BoundaryLayerField::new(eta)?.value(xi1, xi2)
}

pub fn grad_x(xi1: f64, xi2: f64, eta: f64) -> Result<(f64, f64), BoundaryLayerError> {
    BoundaryLayerField::new(eta)?.gradient(xi1, xi2)
}

pub fn eval_y(xi1: f64, xi2: f64, eta: f64) -> Result<f64, BoundaryLayerError> {
    BoundaryLayerField::new(eta)?.y_value(xi1, xi2)
}

/// Truncated half-strip `(−π/2, π/2) × (0, height)` with its quadrature
/// resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfStripDomain {
    pub height: f64,
    pub resolution: QuadResolution,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResolution {
    /// Background panel width.
    pub panel: f64,
    /// Halvings of the panel width towards each singular point.
    pub levels: u32,
}

impl Default for QuadResolution {
    fn default() -> Self {
        Self { panel: 0.25, levels: 40 }
    }
}

impl HalfStripDomain {
    pub fn new(height: f64) -> Self {
        Self { height, resolution: QuadResolution::default() }
    }

    pub fn with_resolution(mut self, resolution: QuadResolution) -> Self {
        self.resolution = resolution;
        self
    }

    /// Panel grids in `ξ₁` and `ξ₂`, graded towards the window ends of `eta`.
    pub fn panels(&self, eta: f64) -> (Vec<f64>, Vec<f64>) {
        let r = self.resolution;
        let singular: Vec<f64> = if eta < FRAC_PI_2 { vec![-eta, eta] } else { vec![] };
        // narrow windows are resolved by the grading alone
        let mut base = r.panel;
        if eta < FRAC_PI_2 {
            base = base.min(eta.max(0.05)).min(FRAC_PI_2 - eta);
        }
        let xs = quadrature::graded_breaks(-FRAC_PI_2, FRAC_PI_2, &singular, base, r.levels);
        let mut ys = quadrature::graded_breaks(0.0, 2.0_f64.min(self.height), &[0.0], base, r.levels);
        if self.height > 2.0 {
            let far = quadrature::graded_breaks(2.0, self.height, &[], 2.0 * r.panel, 0);
            ys.extend_from_slice(&far[1..]);
        }
        (xs, ys)
    }
}

/// Upper bound for `∫_{ξ₂>L} ∫ |g| dξ₁ dξ₂` when `|g| ≤ (a + b ξ₂) e^{−2ξ₂}`.
pub fn tail_envelope(height: f64, a: f64, b: f64) -> f64 {
    // ∫_L^∞ (a + bξ) e^{−2ξ} dξ = e^{−2L}(a/2 + b(L/2 + 1/4))
    PI * (-2.0 * height).exp() * (0.5 * a + b * (0.5 * height + 0.25))
}

/// `∫_{−π/2}^{π/2} X(ξ₁, ξ₂) dξ₁`, which vanishes for every `ξ₂ > 0`.
pub fn line_mean(xi2: f64, eta: f64, tol: f64) -> Result<f64, BoundaryLayerError> {
    if !(xi2 > 0.0) {
        return Err(BoundaryLayerError::NegativeXi2(xi2));
    }
    let field = BoundaryLayerField::new(eta)?;
    if field.degenerate {
        return Ok(0.0);
    }
    // Break at the window ends and a few layer widths around them, where the
    // integrand varies on the scale ξ₂.
    let mut breaks = vec![0.0];
    for p in [-eta, eta] {
        for k in [-4.0, -1.0, 0.0, 1.0, 4.0] {
            breaks.push(p + k * xi2);
        }
    }
    Ok(quadrature::adaptive_with_breaks(|x| field.value_unchecked(x, xi2), -FRAC_PI_2, FRAC_PI_2, &breaks, tol)?)
}

/// Dirichlet energy of `X` over the truncated half-strip, with the tail
/// bound above the truncation height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyEstimate {
    pub value: f64,
    pub tail_bound: f64,
}

pub fn dirichlet_energy(domain: &HalfStripDomain, eta: f64) -> Result<EnergyEstimate, BoundaryLayerError> {
    let field = BoundaryLayerField::new(eta)?;
    if field.degenerate {
        return Ok(EnergyEstimate { value: 0.0, tail_bound: 0.0 });
    }
    let (xs, ys) = domain.panels(eta);
    let value = quadrature::tensor_integrate(&xs, &ys, GaussLegendre::ten(), |x, y| {
        let (gx, gy) = field.gradient_unchecked(x, y);
        gx * gx + gy * gy
    });
    // |∇X| ≤ 4|ln sin η| e^{−2ξ₂} in the far field.
    let c = 4.0 * field.ln_sin_eta.abs();
    let tail_bound = 0.5 * PI * c * c * (-4.0 * domain.height).exp();
    if !value.is_finite() {
        return Err(QuadratureError::NonFinite(eta).into());
    }
    Ok(EnergyEstimate { value, tail_bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_4;

    const ETAS: [f64; 4] = [0.1, PI / 6.0, FRAC_PI_4, 1.3];

    #[test]
    fn window_value() {
        let v = eval_x(0.0, 0.0, FRAC_PI_4).unwrap();
        assert!((v - (FRAC_PI_4.sin()).ln()).abs() < 1e-14);
        assert!((v + 0.346574).abs() < 1e-6);
    }

    #[test]
    fn decays_away_from_boundary() {
        assert!(eval_x(0.7, 3.0, FRAC_PI_4).unwrap().abs() < 1e-2);
    }

    #[test]
    fn value_at_neumann_midpoint() {
        let v = eval_x(FRAC_PI_2, 0.0, FRAC_PI_4).unwrap();
        let expected = (1.0 + FRAC_PI_4.cos()).ln();
        assert!((v - expected).abs() < 1e-14);
        assert!((v - 0.534800).abs() < 1e-6);
    }

    #[test]
    fn errors() {
        assert_eq!(eval_x(0.0, -1.0, 0.5), Err(BoundaryLayerError::NegativeXi2(-1.0)));
        assert_eq!(eval_x(0.0, 1.0, 0.0), Err(BoundaryLayerError::InvalidEta(0.0)));
        assert!(matches!(grad_x(FRAC_PI_4, 0.0, FRAC_PI_4), Err(BoundaryLayerError::TransitionSingularity(..))));
    }

    #[test]
    fn transition_point_returns_limit() {
        let v = eval_x(FRAC_PI_4, 0.0, FRAC_PI_4).unwrap();
        assert!((v - FRAC_PI_4.sin().ln()).abs() < 1e-14);
    }

    #[test]
    fn gradient_examples() {
        let (_, g2) = grad_x(FRAC_PI_2, 0.0, FRAC_PI_4).unwrap();
        assert!((g2 + 1.0).abs() < 1e-14);
        for &y in &[0.1, 0.5, 1.0, 2.5] {
            let (g1, _) = grad_x(0.0, y, FRAC_PI_4).unwrap();
            assert!(g1.abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let f = BoundaryLayerField::new(FRAC_PI_4).unwrap();
        let h = 1e-5;
        for &(x, y) in &[(0.3, 0.4), (1.2, 0.05), (-0.9, 1.5), (0.2, 3.0)] {
            let (g1, g2) = f.gradient(x, y).unwrap();
            let d1 = (f.value(x + h, y).unwrap() - f.value(x - h, y).unwrap()) / (2.0 * h);
            let d2 = (f.value(x, y + h).unwrap() - f.value(x, y - h).unwrap()) / (2.0 * h);
            assert!((g1 - d1).abs() < 1e-6, "({x},{y}) {g1} {d1}");
            assert!((g2 - d2).abs() < 1e-6, "({x},{y}) {g2} {d2}");
        }
    }

    #[test]
    fn near_and_far_representations_agree() {
        for &eta in &ETAS {
            let f = BoundaryLayerField::new(eta).unwrap();
            for &x in &[-1.4, -0.3, 0.0, 0.2, 1.1] {
                let y = FAR_FIELD;
                let z = Complex64::new(x, y);
                let s = z.sin();
                let w = f.near_branch(x, y, s);
                let near = (s + w).norm().ln() - y;
                let far = f.value_unchecked(x, y);
                assert!((near - far).abs() < 1e-13);
                let near_g = z.cos() / w;
                let (g1, g2) = f.gradient_unchecked(x, y);
                assert!((near_g.re - g1).abs() < 1e-12);
                assert!((-near_g.im - 1.0 - g2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn y_examples() {
        assert!(eval_y(0.0, 0.0, FRAC_PI_4).unwrap().abs() < 1e-14);
        let v = eval_y(0.3, 5.0, FRAC_PI_4).unwrap();
        assert!((v - (5.0 - FRAC_PI_4.sin().ln())).abs() < 1e-2);
        assert_eq!(eval_y(0.4, 2.5, FRAC_PI_2).unwrap(), 2.5);
    }

    #[test]
    fn pointwise_bound_on_random_samples() {
        // The sharp bound: the extremes of X sit on the boundary, at the
        // window (ln sin η) and at the Neumann midpoint (ln(1 + cos η)).
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &eta in &ETAS {
            let f = BoundaryLayerField::new(eta).unwrap();
            let bound = sharp_bound(eta) + 1e-12;
            for _ in 0..10_000 {
                let x = rng.random_range(-FRAC_PI_2..=FRAC_PI_2);
                let y = rng.random_range(0.0..=10.0);
                assert!(f.value(x, y).unwrap().abs() <= bound);
            }
        }
    }

    #[test]
    fn log_sine_bound_only_holds_for_narrow_windows() {
        // |X| ≤ |ln sin η| requires (1 + cos η) sin η ≤ 1.
        for &eta in &[0.1, PI / 6.0] {
            assert!(sharp_bound(eta) == eta.sin().ln().abs());
        }
        for &eta in &[FRAC_PI_4, 1.3] {
            let v = eval_x(FRAC_PI_2, 0.0, eta).unwrap();
            assert!(v > eta.sin().ln().abs());
        }
    }

    fn five_point(f: &BoundaryLayerField, x: f64, y: f64, h: f64) -> f64 {
        let c = f.value(x, y).unwrap();
        (f.value(x + h, y).unwrap() + f.value(x - h, y).unwrap() + f.value(x, y + h).unwrap() + f.value(x, y - h).unwrap() - 4.0 * c)
            / (h * h)
    }

    #[test]
    fn harmonic_in_the_interior() {
        // 5-point stencils at h and h/2 combined to cancel the O(h²)
        // truncation term, which near a narrow window exceeds the threshold.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-3;
        for &eta in &ETAS {
            let f = BoundaryLayerField::new(eta).unwrap();
            for _ in 0..200 {
                let x = rng.random_range(-FRAC_PI_2..=FRAC_PI_2);
                let y = rng.random_range(0.1..=4.0);
                let lap = (4.0 * five_point(&f, x, y, 0.5 * h) - five_point(&f, x, y, h)) / 3.0;
                assert!(lap.abs() <= 1e-4, "eta={eta} ({x},{y}) lap={lap}");
            }
        }
    }

    #[test]
    fn boundary_data() {
        for &eta in &ETAS {
            let f = BoundaryLayerField::new(eta).unwrap();
            for k in 0..100 {
                let x = -eta + 2.0 * eta * (k as f64 + 0.5) / 100.0;
                assert!((f.value(x, 0.0).unwrap() - f.ln_sin_eta).abs() <= 1e-12);
            }
            let len = FRAC_PI_2 - eta - 1e-3;
            for k in 0..100 {
                let x = eta + 1e-3 + len * k as f64 / 99.0;
                for sx in [x, -x] {
                    let (_, g2) = f.gradient(sx, 0.0).unwrap();
                    assert!((g2 + 1.0).abs() <= 1e-10, "eta={eta} x={sx} g2={g2}");
                }
            }
        }
    }

    #[test]
    fn symmetry_and_periodicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &eta in &ETAS {
            let f = BoundaryLayerField::new(eta).unwrap();
            for _ in 0..500 {
                let x = rng.random_range(-FRAC_PI_2..=FRAC_PI_2);
                let y = rng.random_range(0.0..=6.0);
                let v = f.value(x, y).unwrap();
                assert!((v - f.value(-x, y).unwrap()).abs() <= 1e-12);
                assert!((v - f.value(x + PI, y).unwrap()).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn exponential_decay_envelope() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &eta in &ETAS {
            let f = BoundaryLayerField::new(eta).unwrap();
            for _ in 0..2000 {
                let x = rng.random_range(-FRAC_PI_2..=FRAC_PI_2);
                let y: f64 = rng.random_range(2.0..=12.0);
                let bound = 2.0 * f.ln_sin_eta.abs() * (-2.0 * y).exp();
                assert!(f.value(x, y).unwrap().abs() <= bound, "eta={eta} ({x},{y})");
            }
        }
    }

    #[test]
    fn line_mean_vanishes() {
        assert!(line_mean(1.0, FRAC_PI_4, 1e-12).unwrap().abs() < 1e-8);
        assert!(line_mean(0.01, PI / 6.0, 1e-12).unwrap().abs() < 1e-6);
        assert_eq!(line_mean(1.0, FRAC_PI_2, 1e-12).unwrap(), 0.0);
    }

    #[test]
    fn energy_identity() {
        let dom = HalfStripDomain::new(10.0);
        let e = dirichlet_energy(&dom, FRAC_PI_4).unwrap();
        let exact = PI * FRAC_PI_4.sin().ln().abs();
        assert!((e.value - exact).abs() / exact < 1e-2, "{} vs {exact}", e.value);
        assert!((exact - 1.088793).abs() < 1e-6);
        assert_eq!(dirichlet_energy(&dom, FRAC_PI_2).unwrap().value, 0.0);
        let e = dirichlet_energy(&dom, 0.1).unwrap();
        let exact = PI * 0.1f64.sin().ln().abs();
        assert!((exact - 7.23902).abs() < 1e-5);
        assert!((e.value - exact).abs() / exact < 1e-2, "{} vs {exact}", e.value);
    }
}
