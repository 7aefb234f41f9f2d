//! Gauss–Legendre rules, adaptive bisection and graded panel layouts.

use std::sync::OnceLock;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("adaptive quadrature did not reach tolerance {tol:e} (estimate {estimate:e})")]
    NotConverged { tol: f64, estimate: f64 },
    #[error("non-finite integrand value at {0}")]
    NonFinite(f64),
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[−1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// Shared 10-point rule.
    pub fn ten() -> &'static GaussLegendre {
        static RULE: OnceLock<GaussLegendre> = OnceLock::new();
        RULE.get_or_init(|| GaussLegendre::new(10))
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut s = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            s += w * f(mid + half * x);
        }
        s * half
    }

    /// Mapped nodes and weights on `[a, b]`.
    pub fn on(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes.iter().zip(&self.weights).map(move |(x, w)| (mid + half * x, w * half))
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = n as f64;
    let d = n * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Adaptive bisection with a 10-point Gauss–Legendre rule; the local error
/// estimate compares a panel with the sum over its two halves.
pub fn adaptive(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64, max_depth: u32) -> Result<f64, QuadratureError> {
    let rule = GaussLegendre::ten();
    let whole = rule.integrate(a, b, &mut *f);
    let mut total = 0.0;
    let mut worst = 0.0f64;
    recurse(f, rule, a, b, whole, tol, max_depth, &mut total, &mut worst);
    if !total.is_finite() {
        return Err(QuadratureError::NonFinite(a));
    }
    if worst > tol {
        return Err(QuadratureError::NotConverged { tol, estimate: worst });
    }
    Ok(total)
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    f: &mut impl FnMut(f64) -> f64,
    rule: &GaussLegendre,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    total: &mut f64,
    worst: &mut f64,
) {
    let m = 0.5 * (a + b);
    let left = rule.integrate(a, m, &mut *f);
    let right = rule.integrate(m, b, &mut *f);
    let err = (left + right - whole).abs();
    if err <= tol || depth == 0 || (b - a) < 1e-15 * (1.0 + a.abs()) {
        *total += left + right;
        if depth == 0 {
            *worst = worst.max(err);
        }
        return;
    }
    recurse(f, rule, a, m, left, 0.5 * tol, depth - 1, total, worst);
    recurse(f, rule, m, b, right, 0.5 * tol, depth - 1, total, worst);
}

/// Adaptive integration over `[a, b]` split at the given interior points.
pub fn adaptive_with_breaks(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, breaks: &[f64], tol: f64) -> Result<f64, QuadratureError> {
    let mut pts = vec![a];
    pts.extend(breaks.iter().copied().filter(|&p| p > a && p < b));
    pts.push(b);
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let pieces = (pts.len() - 1) as f64;
    let mut s = 0.0;
    for w in pts.windows(2) {
        s += adaptive(&mut f, w[0], w[1], tol / pieces, 40)?;
    }
    Ok(s)
}

/// Panel breakpoints on `[a, b]`: a uniform background of width at most
/// `base`, refined geometrically (ratio 1/2, `levels` times) towards each
/// singular point.
pub fn graded_breaks(a: f64, b: f64, singular: &[f64], base: f64, levels: u32) -> Vec<f64> {
    let n = ((b - a) / base).ceil().max(1.0) as usize;
    let mut pts: Vec<f64> = (0..=n).map(|k| a + (b - a) * k as f64 / n as f64).collect();
    *pts.last_mut().unwrap() = b;
    let first = base.min(b - a);
    for &p in singular {
        if p < a || p > b {
            continue;
        }
        pts.push(p);
        let mut d = first;
        for _ in 0..levels {
            d *= 0.5;
            for q in [p - d, p + d] {
                if q > a && q < b {
                    pts.push(q);
                }
            }
        }
    }
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.dedup_by(|x, y| (*x - *y).abs() < 1e-300);
    pts
}

/// Tensor-product composite Gauss rule over a panel grid.
pub fn tensor_integrate(xs: &[f64], ys: &[f64], rule: &GaussLegendre, mut f: impl FnMut(f64, f64) -> f64) -> f64 {
    let mut total = 0.0;
    for wy in ys.windows(2) {
        let mut row = 0.0;
        for (y, wyq) in rule.on(wy[0], wy[1]) {
            let mut inner = 0.0;
            for wx in xs.windows(2) {
                for (x, wxq) in rule.on(wx[0], wx[1]) {
                    inner += wxq * f(x, y);
                }
            }
            row += wyq * inner;
        }
        total += row;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        for n in [1, 2, 5, 10, 16] {
            let r = GaussLegendre::new(n);
            let wsum: f64 = r.weights.iter().sum();
            assert!((wsum - 2.0).abs() < 1e-14);
            for deg in 0..(2 * n) {
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                let got: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(deg as i32)).sum();
                assert!((got - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn adaptive_handles_sqrt_endpoint() {
        let v = adaptive_with_breaks(|x: f64| x.abs().sqrt(), -1.0, 1.0, &[0.0], 1e-12).unwrap();
        assert!((v - 4.0 / 3.0).abs() < 1e-11);
    }

    #[test]
    fn graded_breaks_contain_singular_points() {
        let b = graded_breaks(0.0, 2.0, &[0.5], 0.25, 10);
        assert!(b.contains(&0.5));
        assert!(b.iter().any(|&x| (x - 0.5).abs() < 0.25 * 0.5f64.powi(10) * 1.0001 && x != 0.5));
        assert_eq!(b[0], 0.0);
        assert_eq!(*b.last().unwrap(), 2.0);
    }

    #[test]
    fn tensor_rule_integrates_log_singularity() {
        // ∫∫_{[0,1]^2} 1/r dA = 2 ln(1+√2)
        let xs = graded_breaks(0.0, 1.0, &[0.0], 0.25, 40);
        let v = tensor_integrate(&xs, &xs, GaussLegendre::ten(), |x, y| 1.0 / (x * x + y * y).sqrt());
        let exact = 2.0 * (1.0 + 2f64.sqrt()).ln();
        assert!((v - exact).abs() < 1e-6, "{v} vs {exact}");
    }
}
