//! The homogenized comparison objects: the transverse operator
//! `Q = −d²/dx₂²` on `(0, π)` with Dirichlet ends, the split of cell
//! functions into their `ξ₁`-mean and fluctuation, the analytic
//! all-Dirichlet fiber resolvent, and the resolvent-gap estimates.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::band::{dot, BandMatrix};
use crate::fiber::{FiberCell, FiberError};
use crate::quadrature::GaussLegendre;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HomogenizedError {
    #[error("spectral point {z} within 1e-8 of the eigenvalue of mode (m = {m}, n = {n})")]
    SpectralPoleProximity { z: Complex64, m: i64, n: usize },
    #[error("mode cutoff too small: spectral tail {tail:e} of the input exceeds 1e-10")]
    CutoffTooSmall { tail: f64 },
    #[error("grid cannot resolve {0}")]
    Unresolved(String),
    #[error(transparent)]
    Fiber(#[from] FiberError),
}

// ---------------------------------------------------------------------------
// Transverse functions

/// Composite Gauss–Legendre nodes on `(0, π)`.
#[derive(Debug, Clone)]
pub struct TransverseGrid {
    pub panels: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

const PANEL_ORDER: usize = 10;

impl TransverseGrid {
    pub fn new(panels: usize) -> Self {
        let rule = GaussLegendre::ten();
        let mut points = Vec::with_capacity(panels * PANEL_ORDER);
        let mut weights = Vec::with_capacity(panels * PANEL_ORDER);
        for p in 0..panels {
            let (a, b) = (PI * p as f64 / panels as f64, PI * (p + 1) as f64 / panels as f64);
            for (x, w) in rule.on(a, b) {
                points.push(x);
                weights.push(w);
            }
        }
        Self { panels, points, weights }
    }

    fn panel_bounds(&self, p: usize) -> (f64, f64) {
        (PI * p as f64 / self.panels as f64, PI * (p + 1) as f64 / self.panels as f64)
    }

    /// `∫_{a_p}^{x} g` for `x` inside panel `p`, using the degree-9
    /// interpolant of the panel samples.
    fn partial_panel(&self, p: usize, values: &[f64], x: f64) -> f64 {
        let (a, _) = self.panel_bounds(p);
        if x <= a {
            return 0.0;
        }
        let nodes = &self.points[p * PANEL_ORDER..(p + 1) * PANEL_ORDER];
        let vals = &values[p * PANEL_ORDER..(p + 1) * PANEL_ORDER];
        GaussLegendre::ten().integrate(a, x, |t| lagrange(nodes, vals, t))
    }
}

fn lagrange(nodes: &[f64], vals: &[f64], t: f64) -> f64 {
    let mut s = 0.0;
    for (i, (&xi, &vi)) in nodes.iter().zip(vals).enumerate() {
        let mut l = 1.0;
        for (j, &xj) in nodes.iter().enumerate() {
            if j != i {
                l *= (t - xj) / (xi - xj);
            }
        }
        s += vi * l;
    }
    s
}

/// A function of `x₂ ∈ (0, π)`.
#[derive(Debug, Clone)]
pub enum TransverseFunction {
    Samples {
        grid: TransverseGrid,
        values: Vec<f64>,
    },
    /// `Σ_n c_n sin(n x₂)`, `n = 1, 2, …`
    Sine(Vec<f64>),
}

impl TransverseFunction {
    pub fn sample(grid: &TransverseGrid, f: impl Fn(f64) -> f64) -> Self {
        Self::Samples { grid: grid.clone(), values: grid.points.iter().map(|&x| f(x)).collect() }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::Sine(c) => c.iter().enumerate().map(|(k, c)| c * ((k + 1) as f64 * x).sin()).sum(),
            Self::Samples { grid, values } => {
                let p = ((x / PI * grid.panels as f64).floor() as usize).min(grid.panels - 1);
                lagrange(&grid.points[p * PANEL_ORDER..(p + 1) * PANEL_ORDER], &values[p * PANEL_ORDER..(p + 1) * PANEL_ORDER], x)
            }
        }
    }

    pub fn to_samples(&self, grid: &TransverseGrid) -> Vec<f64> {
        grid.points.iter().map(|&x| self.eval(x)).collect()
    }

    /// First `n` sine coefficients `(2/π)∫ F sin(k x₂)`.
    pub fn to_sine(&self, n: usize) -> Vec<f64> {
        match self {
            Self::Sine(c) => {
                let mut c = c.clone();
                c.resize(n, 0.0);
                c
            }
            Self::Samples { grid, values } => (1..=n)
                .map(|k| {
                    2.0 / PI
                        * grid.points.iter().zip(&grid.weights).zip(values).map(|((x, w), v)| w * v * (k as f64 * x).sin()).sum::<f64>()
                })
                .collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        match self {
            Self::Sine(c) => (PI / 2.0 * c.iter().map(|x| x * x).sum::<f64>()).sqrt(),
            Self::Samples { grid, values } => grid.weights.iter().zip(values).map(|(w, v)| w * v * v).sum::<f64>().sqrt(),
        }
    }
}

/// `U = Q⁻¹F`: through the Green kernel for samples, diagonally for sine
/// coefficients.
pub fn q_inverse(f: &TransverseFunction) -> TransverseFunction {
    match f {
        TransverseFunction::Sine(c) => {
            TransverseFunction::Sine(c.iter().enumerate().map(|(k, c)| c / ((k + 1) * (k + 1)) as f64).collect())
        }
        TransverseFunction::Samples { grid, values } => {
            // U(x) = (π − x)/π ∫₀^x tF + x/π ∫_x^π (π − t)F
            let tf: Vec<f64> = grid.points.iter().zip(values).map(|(t, v)| t * v).collect();
            let sf: Vec<f64> = grid.points.iter().zip(values).map(|(t, v)| (PI - t) * v).collect();
            let panel_sum = |g: &[f64], p: usize| -> f64 { (p * PANEL_ORDER..(p + 1) * PANEL_ORDER).map(|i| grid.weights[i] * g[i]).sum() };
            let tf_panels: Vec<f64> = (0..grid.panels).map(|p| panel_sum(&tf, p)).collect();
            let sf_panels: Vec<f64> = (0..grid.panels).map(|p| panel_sum(&sf, p)).collect();
            let sf_total: f64 = sf_panels.iter().sum();
            let mut out = Vec::with_capacity(values.len());
            let mut tf_before = 0.0;
            let mut sf_before = 0.0;
            for p in 0..grid.panels {
                for i in p * PANEL_ORDER..(p + 1) * PANEL_ORDER {
                    let x = grid.points[i];
                    let a = tf_before + grid.partial_panel(p, &tf, x);
                    let b = sf_total - sf_before - grid.partial_panel(p, &sf, x);
                    out.push((PI - x) / PI * a + x / PI * b);
                }
                tf_before += tf_panels[p];
                sf_before += sf_panels[p];
            }
            TransverseFunction::Samples { grid: grid.clone(), values: out }
        }
    }
}

/// `U′(0) = ∫₀^π (1 − t/π) F(t) dt`.
pub fn u_prime0(f: &TransverseFunction) -> f64 {
    match f {
        // ∫(1 − t/π) sin(kt) dt = 1/k
        TransverseFunction::Sine(c) => c.iter().enumerate().map(|(k, c)| c / (k + 1) as f64).sum(),
        TransverseFunction::Samples { grid, values } => {
            grid.points.iter().zip(&grid.weights).zip(values).map(|((t, w), v)| w * (1.0 - t / PI) * v).sum()
        }
    }
}

/// The constant in `|U′(0)| ≤ √(π/3)‖F‖`.
pub fn u_prime0_bound(f: &TransverseFunction) -> f64 {
    (PI / 3.0).sqrt() * f.norm()
}

// ---------------------------------------------------------------------------
// Cell grids and the mean/fluctuation split

/// Tensor grid on the cell: `ring` periodic columns in `ξ₁` times the
/// `x₂` lines, with trapezoid weights. Grid functions are indexed
/// `j * ring + c`.
#[derive(Debug, Clone)]
pub struct CellGrid {
    pub xi1: Vec<f64>,
    pub x2: Vec<f64>,
    pub wx: Vec<f64>,
    pub wy: Vec<f64>,
}

impl CellGrid {
    /// Columns `xi1_lines[..n−1]` of a grid whose last line is the periodic
    /// image of the first.
    pub fn new(xi1_lines: &[f64], x2: &[f64]) -> Self {
        let ring = xi1_lines.len() - 1;
        let d: Vec<f64> = xi1_lines.windows(2).map(|w| w[1] - w[0]).collect();
        let wx = (0..ring).map(|c| 0.5 * (d[(c + ring - 1) % ring] + d[c])).collect();
        let n2 = x2.len();
        let wy = (0..n2)
            .map(|j| {
                let lo = if j > 0 { x2[j] - x2[j - 1] } else { 0.0 };
                let hi = if j + 1 < n2 { x2[j + 1] - x2[j] } else { 0.0 };
                0.5 * (lo + hi)
            })
            .collect();
        Self { xi1: xi1_lines[..ring].to_vec(), x2: x2.to_vec(), wx, wy }
    }

    /// Uniform grid with `n1` columns and `n2` interior lines in `(0, π)`
    /// (plus both ends).
    pub fn uniform(n1: usize, n2: usize) -> Self {
        let xi: Vec<f64> = (0..=n1).map(|k| -PI / 2.0 + PI * k as f64 / n1 as f64).collect();
        let x2: Vec<f64> = (0..=n2 + 1).map(|k| PI * k as f64 / (n2 + 1) as f64).collect();
        Self::new(&xi, &x2)
    }

    pub fn ring(&self) -> usize {
        self.xi1.len()
    }

    pub fn len(&self) -> usize {
        self.ring() * self.x2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn weight(&self, idx: usize) -> f64 {
        let r = self.ring();
        self.wx[idx % r] * self.wy[idx / r]
    }

    pub fn sample(&self, f: impl Fn(f64, f64) -> Complex64) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.len());
        for &y in &self.x2 {
            for &x in &self.xi1 {
                out.push(f(x, y));
            }
        }
        out
    }

    pub fn norm(&self, f: &[Complex64]) -> f64 {
        f.iter().enumerate().map(|(i, v)| self.weight(i) * v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `(1/π)∫ f dξ₁` on every `x₂` line.
    pub fn row_means(&self, f: &[Complex64]) -> Vec<Complex64> {
        let r = self.ring();
        let width: f64 = self.wx.iter().sum();
        (0..self.x2.len()).map(|j| (0..r).map(|c| f[j * r + c] * self.wx[c]).sum::<Complex64>() / width).collect()
    }
}

#[derive(Debug, Clone)]
pub struct MeanDecomposition {
    /// `ξ₁`-mean on every `x₂` line.
    pub mean: Vec<Complex64>,
    pub fluctuation: Vec<Complex64>,
}

impl MeanDecomposition {
    pub fn mean_norm(&self, grid: &CellGrid) -> f64 {
        self.mean.iter().zip(&grid.wy).map(|(m, w)| w * m.norm_sqr()).sum::<f64>().sqrt()
    }
}

pub fn mean_decompose(grid: &CellGrid, f: &[Complex64]) -> MeanDecomposition {
    let mean = grid.row_means(f);
    let r = grid.ring();
    let fluctuation = f.iter().enumerate().map(|(i, v)| v - mean[i / r]).collect();
    MeanDecomposition { mean, fluctuation }
}

/// Row structure of a fiber cell's unknowns.
#[derive(Debug, Clone)]
pub struct CellRows {
    pub grid: CellGrid,
    /// Grid index of every unknown.
    dof_cell: Vec<usize>,
    /// Rows containing constrained nodes other than the top row.
    partial_rows: Vec<bool>,
}

impl CellRows {
    pub fn new(cell: &FiberCell) -> Self {
        let mesh = &cell.mesh;
        let grid = CellGrid::new(&mesh.xi1, &mesh.x2);
        let n1 = mesh.n1();
        let ring = grid.ring();
        let dof_cell = cell.mats.dofs.dof_node.iter().map(|&node| (node / n1) * ring + node % n1).collect();
        let partial_rows = (0..mesh.n2()).map(|j| (0..ring).any(|c| mesh.dirichlet[mesh.node_index(c, j)])).collect();
        Self { grid, dof_cell, partial_rows }
    }

    pub fn to_grid(&self, u: &[Complex64]) -> Vec<Complex64> {
        let mut g = vec![Complex64::new(0.0, 0.0); self.grid.len()];
        for (k, &i) in self.dof_cell.iter().enumerate() {
            g[i] = u[k];
        }
        g
    }

    pub fn from_grid(&self, g: &[Complex64]) -> Vec<Complex64> {
        self.dof_cell.iter().map(|&i| g[i]).collect()
    }

    /// Trapezoid weights of the unknowns.
    pub fn weights(&self) -> Vec<f64> {
        self.dof_cell.iter().map(|&i| self.grid.weight(i)).collect()
    }

    /// Zero-mean part of `u`; rows touching the constraints are cleared.
    pub fn fluctuation(&self, u: &[Complex64]) -> Vec<Complex64> {
        let d = mean_decompose(&self.grid, &self.to_grid(u));
        let r = self.grid.ring();
        let mut g = d.fluctuation;
        for (i, v) in g.iter_mut().enumerate() {
            if self.partial_rows[i / r] {
                *v = Complex64::new(0.0, 0.0);
            }
        }
        self.from_grid(&g)
    }

    /// `Lift ∘ Q⁻¹ ∘ mean`, with `Q⁻¹` through the Green kernel and
    /// trapezoid weights on the mesh lines.
    pub fn homogenized_apply(&self, u: &[Complex64]) -> Vec<Complex64> {
        let means = self.grid.row_means(&self.to_grid(u));
        let x = &self.grid.x2;
        let w = &self.grid.wy;
        let big_u: Vec<Complex64> =
            x.iter().map(|&xi| x.iter().zip(w).zip(&means).map(|((&t, &wt), &f)| f * (green(xi, t) * wt)).sum::<Complex64>()).collect();
        let r = self.grid.ring();
        self.dof_cell.iter().map(|&i| big_u[i / r]).collect()
    }
}

/// Green kernel of `Q`: `min(x, t) − x t / π`.
pub fn green(x: f64, t: f64) -> f64 {
    x.min(t) - x * t / PI
}

// ---------------------------------------------------------------------------
// Analytic all-Dirichlet fiber

#[derive(Debug, Clone, Copy)]
pub struct ModeCutoff {
    /// Modes `e^{2imξ₁}` with `|m| ≤ m_max`.
    pub m_max: usize,
    /// Modes `sin(n x₂)` with `1 ≤ n ≤ n_max`.
    pub n_max: usize,
}

pub fn dirichlet_eigenvalue(m: i64, n: usize, tau: f64, epsilon: f64) -> f64 {
    ((2 * m) as f64 + tau).powi(2) / (epsilon * epsilon) + (n * n) as f64
}

/// Applies `(H₀(τ) − z)⁻¹` of the fiber with Dirichlet conditions on the
/// whole bottom to a function sampled on a uniform [`CellGrid`].
pub fn dirichlet_fiber_apply_resolvent(
    epsilon: f64,
    tau: f64,
    z: Complex64,
    grid: &CellGrid,
    f: &[Complex64],
    cutoff: ModeCutoff,
) -> Result<Vec<Complex64>, HomogenizedError> {
    let ring = grid.ring();
    let interior = grid.x2.len() - 2;
    if 2 * cutoff.m_max + 1 > ring || cutoff.n_max > interior {
        return Err(HomogenizedError::Unresolved(format!("{cutoff:?} on a {ring} x {interior} grid")));
    }
    let modes = mode_list(cutoff);
    let mut coeff = Vec::with_capacity(modes.len());
    let mut captured = 0.0;
    for &(m, n) in &modes {
        let lambda = dirichlet_eigenvalue(m, n, tau, epsilon);
        if (Complex64::new(lambda, 0.0) - z).norm() < 1e-8 {
            return Err(HomogenizedError::SpectralPoleProximity { z, m, n });
        }
        // ⟨f, φ⟩ / ‖φ‖², ‖φ‖² = π · π/2
        let phi = |x: f64, y: f64| Complex64::from_polar(1.0, 2.0 * m as f64 * x) * (n as f64 * y).sin();
        let mut s = Complex64::new(0.0, 0.0);
        for (i, v) in f.iter().enumerate() {
            let (c, j) = (i % ring, i / ring);
            s += v * phi(grid.xi1[c], grid.x2[j]).conj() * grid.weight(i);
        }
        let c = s / (PI * PI / 2.0);
        captured += c.norm_sqr() * PI * PI / 2.0;
        coeff.push((m, n, c / (Complex64::new(lambda, 0.0) - z)));
    }
    let total = grid.norm(f).powi(2);
    let tail = (total - captured).max(0.0);
    if tail > 1e-10 * total.max(1e-300) {
        return Err(HomogenizedError::CutoffTooSmall { tail: tail / total });
    }
    Ok(grid.sample(|x, y| coeff.iter().map(|&(m, n, c)| c * Complex64::from_polar(1.0, 2.0 * m as f64 * x) * (n as f64 * y).sin()).sum()))
}

/// Applies `H₀(τ) − z` mode by mode; the inverse of
/// [`dirichlet_fiber_apply_resolvent`] on the resolved modes.
pub fn dirichlet_fiber_apply_operator(
    epsilon: f64,
    tau: f64,
    z: Complex64,
    grid: &CellGrid,
    f: &[Complex64],
    cutoff: ModeCutoff,
) -> Vec<Complex64> {
    let ring = grid.ring();
    let modes = mode_list(cutoff);
    let coeff: Vec<(i64, usize, Complex64)> = modes
        .iter()
        .map(|&(m, n)| {
            let mut s = Complex64::new(0.0, 0.0);
            for (i, v) in f.iter().enumerate() {
                let (c, j) = (i % ring, i / ring);
                s += v * Complex64::from_polar(1.0, -2.0 * m as f64 * grid.xi1[c]) * (n as f64 * grid.x2[j]).sin() * grid.weight(i);
            }
            (m, n, s / (PI * PI / 2.0) * (Complex64::new(dirichlet_eigenvalue(m, n, tau, epsilon), 0.0) - z))
        })
        .collect();
    grid.sample(|x, y| coeff.iter().map(|&(m, n, c)| c * Complex64::from_polar(1.0, 2.0 * m as f64 * x) * (n as f64 * y).sin()).sum())
}

fn mode_list(cutoff: ModeCutoff) -> Vec<(i64, usize)> {
    let mm = cutoff.m_max as i64;
    let mut modes = Vec::new();
    for m in -mm..=mm {
        for n in 1..=cutoff.n_max {
            modes.push((m, n));
        }
    }
    modes
}

// ---------------------------------------------------------------------------
// Resolvent gaps

#[derive(Debug, Clone, Copy)]
pub struct PowerOptions {
    pub block: usize,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self { block: 4, max_iter: 60, rel_tol: 1e-8, seed: 17 }
    }
}

/// `(ε + 5ε^{1/2}|ln sin η|^{1/2}) / δ^{1/2}`.
pub fn cell_gap_bound(epsilon: f64, eta: f64, delta: f64) -> f64 {
    (epsilon + 5.0 * epsilon.sqrt() * eta.sin().ln().abs().sqrt()) / delta.sqrt()
}

/// `9 ε^{1/4} |ln sin η|^{1/4}`.
pub fn strip_gap_bound(epsilon: f64, eta: f64) -> f64 {
    9.0 * epsilon.powf(0.25) * eta.sin().ln().abs().powf(0.25)
}

#[derive(Debug, Clone, Serialize)]
pub struct GapEstimate {
    pub tau: f64,
    pub norm_estimate: f64,
    pub bound: f64,
    pub holds: bool,
    pub iterations: usize,
}

/// Largest `|θ|` of an operator self-adjoint in the weighted inner product
/// `⟨u, v⟩ = Σ w_i ū_i v_i`, by block power iteration with a Rayleigh–Ritz
/// step on `[V, AV]`.
pub fn weighted_power_norm(weights: &[f64], apply: impl Fn(&[Complex64]) -> Vec<Complex64> + Sync, opts: &PowerOptions) -> (f64, usize) {
    let n = weights.len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v: Vec<Vec<Complex64>> = (0..opts.block)
        .map(|_| (0..n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect())
        .collect();
    let ip = |a: &[Complex64], b: &[Complex64]| -> Complex64 { a.iter().zip(b).zip(weights).map(|((x, y), w)| x.conj() * y * w).sum() };
    let mut av: Vec<Vec<Complex64>> = v.par_iter().map(|x| apply(x)).collect();
    let mut last = 0.0;
    for iter in 1..=opts.max_iter {
        // orthonormal basis of span[V, AV], tracking the image under A
        let mut q: Vec<Vec<Complex64>> = Vec::new();
        let mut coeffs: Vec<Vec<Complex64>> = Vec::new(); // q_k = Σ c_kj cand_j
        let cands: Vec<&Vec<Complex64>> = v.iter().chain(av.iter()).collect();
        for (j, cand) in cands.iter().enumerate() {
            let mut x = (*cand).clone();
            let mut c = vec![Complex64::new(0.0, 0.0); cands.len()];
            c[j] = Complex64::new(1.0, 0.0);
            let n0 = ip(&x, &x).re.sqrt();
            for _ in 0..2 {
                for (qk, ck) in q.iter().zip(&coeffs) {
                    let h = ip(qk, &x);
                    for (xi, qi) in x.iter_mut().zip(qk) {
                        *xi -= h * qi;
                    }
                    for (ci, cki) in c.iter_mut().zip(ck) {
                        *ci -= h * cki;
                    }
                }
            }
            let nn = ip(&x, &x).re.sqrt();
            if nn <= 1e-10 * n0 || nn == 0.0 {
                continue;
            }
            x.iter_mut().for_each(|e| *e /= nn);
            c.iter_mut().for_each(|e| *e /= nn);
            q.push(x);
            coeffs.push(c);
        }
        let aq: Vec<Vec<Complex64>> = q.par_iter().map(|x| apply(x)).collect();
        let k = q.len();
        let h = DMatrix::from_fn(k, k, |i, j| ip(&q[i], &aq[j]));
        let h = (&h + h.adjoint()).scale(0.5);
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].abs().partial_cmp(&eig.eigenvalues[a].abs()).unwrap());
        let est = eig.eigenvalues[order[0]].abs();
        let nb = opts.block.min(k);
        let combine = |basis: &[Vec<Complex64>], col: usize| -> Vec<Complex64> {
            let mut out = vec![Complex64::new(0.0, 0.0); n];
            for (i, b) in basis.iter().enumerate() {
                let s = eig.eigenvectors[(i, col)];
                for (o, x) in out.iter_mut().zip(b) {
                    *o += s * x;
                }
            }
            out
        };
        v = order[..nb].iter().map(|&c| combine(&q, c)).collect();
        av = order[..nb].iter().map(|&c| combine(&aq, c)).collect();
        if iter > 1 && (est - last).abs() <= opts.rel_tol * est {
            return (est, iter);
        }
        last = est;
    }
    (last, opts.max_iter)
}

/// Norm of `(K − τ²/ε² M)⁻¹W − Lift∘Q⁻¹∘mean` in the trapezoid-weighted
/// `L₂` norm, with `W` the trapezoid weights, so that both terms are
/// self-adjoint in the same inner product.
pub fn cell_resolvent_gap(cell: &FiberCell, tau: f64, delta: f64, opts: &PowerOptions) -> Result<GapEstimate, HomogenizedError> {
    let op = cell.assemble(tau)?;
    let c = |r: f64| Complex64::new(r, 0.0);
    let a = BandMatrix::combine(&[(c(1.0), &op.stiffness), (c(-op.shift()), &op.mass.map(c))]);
    let lu = a.factor().map_err(FiberError::from)?;
    let rows = CellRows::new(cell);
    let w = rows.weights();
    let apply = |f: &[Complex64]| -> Vec<Complex64> {
        let mut u: Vec<Complex64> = f.iter().zip(&w).map(|(x, wi)| x * wi).collect();
        lu.solve_in_place(&mut u);
        let h = rows.homogenized_apply(f);
        u.iter().zip(&h).map(|(a, b)| a - b).collect()
    };
    let (norm, iterations) = weighted_power_norm(&w, apply, opts);
    let bound = cell_gap_bound(cell.epsilon(), cell.spec.eta, delta);
    Ok(GapEstimate { tau, norm_estimate: norm, bound, holds: norm <= bound, iterations })
}

#[derive(Debug, Clone, Serialize)]
pub struct StripGapReport {
    pub per_tau: Vec<GapEstimate>,
    pub sup_norm_estimate: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Per-τ `L₂ → W₂¹` norm of `(H(τ) − i)⁻¹ − (H₀(τ) − i)⁻¹` restricted to
/// the probe space spanned by `e^{2imξ₁} sin(n x₂)`, `|m| ≤ m_max`,
/// `n ≤ n_max`. The `W₂¹` norm is `‖u‖² + ‖(i∂₁ − τ/ε)u‖² + ‖∂₂u‖²`.
pub fn strip_gap_at(cell: &FiberCell, tau: f64, probes: ModeCutoff, opts: &PowerOptions) -> Result<(f64, usize), HomogenizedError> {
    let (h, g) = strip_gap_matrices(cell, tau, probes)?;
    Ok(generalized_power(&h, &g, opts))
}

/// `(H, G)` with `H = Bᴴ(K + M)B`, `G = ΦᴴMΦ` over the probe coefficients.
pub fn strip_gap_matrices(
    cell: &FiberCell,
    tau: f64,
    probes: ModeCutoff,
) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>), HomogenizedError> {
    let op = cell.assemble(tau)?;
    let c = |r: f64| Complex64::new(r, 0.0);
    let m = op.mass.map(c);
    let shifted = BandMatrix::combine(&[(c(1.0), &op.stiffness), (Complex64::new(0.0, -1.0), &m)]);
    let lu = shifted.factor().map_err(FiberError::from)?;
    let energy = BandMatrix::combine(&[(c(1.0), &op.stiffness), (c(1.0), &m)]);
    let modes = mode_list(probes);
    let eps = cell.epsilon();
    let dofs = &cell.mats.dofs;
    let nodes = &cell.mesh.nodes;
    let cols: Vec<(Vec<Complex64>, Vec<Complex64>)> = modes
        .par_iter()
        .map(|&(mm, n)| {
            let phi: Vec<Complex64> = dofs
                .dof_node
                .iter()
                .map(|&k| Complex64::from_polar(1.0, 2.0 * mm as f64 * nodes[k][0]) * (n as f64 * nodes[k][1]).sin())
                .collect();
            let mut b = m.matvec(&phi);
            lu.solve_in_place(&mut b);
            let r0 = Complex64::new(1.0, 0.0) / Complex64::new(dirichlet_eigenvalue(mm, n, tau, eps), -1.0);
            for (bi, pi) in b.iter_mut().zip(&phi) {
                *bi -= r0 * pi;
            }
            (phi, b)
        })
        .collect();
    let q = cols.len();
    let mphi: Vec<Vec<Complex64>> = cols.par_iter().map(|(p, _)| m.matvec(p)).collect();
    let eb: Vec<Vec<Complex64>> = cols.par_iter().map(|(_, b)| energy.matvec(b)).collect();
    let g = DMatrix::from_fn(q, q, |i, j| dot(&cols[i].0, &mphi[j]));
    let h = DMatrix::from_fn(q, q, |i, j| dot(&cols[i].1, &eb[j]));
    let sym = |x: DMatrix<Complex64>| (&x + x.adjoint()).scale(0.5);
    Ok((sym(h), sym(g)))
}

/// `sqrt` of the largest eigenvalue of `G⁻¹H` by power iteration.
pub fn generalized_power(h: &DMatrix<Complex64>, g: &DMatrix<Complex64>, opts: &PowerOptions) -> (f64, usize) {
    let chol = Cholesky::new(g.clone()).expect("probe Gram matrix is positive definite");
    let n = h.nrows();
    let mut x = nalgebra::DVector::from_fn(n, |i, _| Complex64::new(1.0 + (i as f64 * 0.618).sin(), 0.0));
    let mut last = 0.0;
    let max_iter = opts.max_iter.max(200);
    for iter in 1..=max_iter {
        let y = chol.solve(&(h * &x));
        let est = (x.dotc(&(h * &x)).re / x.dotc(&(g * &x)).re).max(0.0);
        let nrm = y.dotc(&(g * &y)).re.sqrt();
        x = y / Complex64::new(nrm.max(f64::MIN_POSITIVE), 0.0);
        if iter > 1 && (est - last).abs() <= 1e-10 * est.max(f64::MIN_POSITIVE) {
            return (est.sqrt(), iter);
        }
        last = est;
    }
    (last.sqrt(), max_iter)
}

/// Dense reference for [`generalized_power`].
pub fn generalized_max_dense(h: &DMatrix<Complex64>, g: &DMatrix<Complex64>) -> f64 {
    let l = Cholesky::new(g.clone()).expect("positive definite").l();
    let li = l.try_inverse().expect("invertible");
    let c = &li * h * li.adjoint();
    let c = (&c + c.adjoint()).scale(0.5);
    SymmetricEigen::new(c).eigenvalues.iter().cloned().fold(0.0, f64::max).sqrt()
}

pub fn strip_resolvent_gap(
    cell: &FiberCell,
    tau_grid: &[f64],
    probes: ModeCutoff,
    opts: &PowerOptions,
) -> Result<StripGapReport, HomogenizedError> {
    let bound = strip_gap_bound(cell.epsilon(), cell.spec.eta);
    let per_tau = tau_grid
        .iter()
        .map(|&tau| {
            let (norm, iterations) = strip_gap_at(cell, tau, probes, opts)?;
            Ok(GapEstimate { tau, norm_estimate: norm, bound, holds: norm <= bound, iterations })
        })
        .collect::<Result<Vec<_>, HomogenizedError>>()?;
    let sup = per_tau.iter().map(|g| g.norm_estimate).fold(0.0, f64::max);
    Ok(StripGapReport { per_tau, sup_norm_estimate: sup, bound, holds: sup <= bound })
}

/// `τ_k = −1 + 2k/points`, `k = 0..points`, covering `[−1, 1)`.
pub fn tau_grid(points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![0.0];
    }
    (0..points).map(|k| -1.0 + 2.0 * k as f64 / points as f64).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RateFit {
    pub pairs: Vec<(f64, f64)>,
    pub fitted_exponent: f64,
    pub fitted_prefactor: f64,
}

/// Least-squares fit of `value ≈ C ε^p` on log scales.
pub fn fit_rate(pairs: &[(f64, f64)]) -> RateFit {
    let pts: Vec<(f64, f64)> = pairs.iter().filter(|(e, v)| *e > 0.0 && *v > 0.0).map(|(e, v)| (e.ln(), v.ln())).collect();
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let p = if sxx > 0.0 { sxy / sxx } else { f64::NAN };
    RateFit { pairs: pairs.to_vec(), fitted_exponent: p, fitted_prefactor: (my - p * mx).exp() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, build_mesh_with, make_cell, MeshParams};
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn c(r: f64) -> Complex64 {
        Complex64::new(r, 0.0)
    }

    #[test]
    fn q_inverse_closed_forms() {
        let grid = TransverseGrid::new(16);
        let f = TransverseFunction::sample(&grid, |x| (3.0 * x).sin());
        let u = q_inverse(&f);
        for &x in &[0.3, 1.1, 2.9] {
            assert!((u.eval(x) - (3.0 * x).sin() / 9.0).abs() < 1e-12);
        }
        let one = TransverseFunction::sample(&grid, |_| 1.0);
        let u = q_inverse(&one);
        for &x in &[0.01, 1.0, 3.1] {
            assert!((u.eval(x) - x * (PI - x) / 2.0).abs() < 1e-12);
        }
        let zero = TransverseFunction::sample(&grid, |_| 0.0);
        assert_eq!(q_inverse(&zero).eval(1.0), 0.0);
        let s = q_inverse(&TransverseFunction::Sine(vec![0.0, 4.0]));
        assert!((s.eval(0.7) - (1.4f64).sin()).abs() < 1e-15);
    }

    #[test]
    fn trace_derivative_and_its_bound() {
        let grid = TransverseGrid::new(16);
        let one = TransverseFunction::sample(&grid, |_| 1.0);
        assert!((u_prime0(&one) - PI / 2.0).abs() < 1e-13);
        assert!((u_prime0_bound(&one) - PI / 3f64.sqrt()).abs() < 1e-12);
        let lin = TransverseFunction::sample(&grid, |t| 1.0 - t / PI);
        assert!((u_prime0(&lin) - PI / 3.0).abs() < 1e-13);
        assert!((u_prime0(&lin) - u_prime0_bound(&lin)).abs() < 1e-12);
        let s = TransverseFunction::sample(&grid, |t| t.sin());
        assert!((u_prime0(&s) - 1.0).abs() < 1e-13);
        assert!((u_prime0(&TransverseFunction::Sine(vec![1.0])) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn kernel_and_sine_paths_agree() {
        let grid = TransverseGrid::new(24);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let coeffs: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
            let sine = TransverseFunction::Sine(coeffs.clone());
            let samples = TransverseFunction::Samples { grid: grid.clone(), values: sine.to_samples(&grid) };
            let a = q_inverse(&sine).to_samples(&grid);
            let b = match q_inverse(&samples) {
                TransverseFunction::Samples { values, .. } => values,
                _ => unreachable!(),
            };
            let err = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(err < 1e-8, "{err}");
            let back = samples.to_sine(20);
            let rt = back.iter().zip(&coeffs).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(rt < 1e-10, "{rt}");
        }
    }

    #[test]
    fn mean_decomposition_examples() {
        let grid = CellGrid::uniform(32, 15);
        let f = grid.sample(|_, y| c(y.sin()));
        let d = mean_decompose(&grid, &f);
        assert!(d.fluctuation.iter().all(|v| v.norm() < 1e-14));
        let g = grid.sample(|x, y| c((2.0 * x).cos() * y.cos()));
        let d = mean_decompose(&grid, &g);
        assert!(d.mean.iter().all(|v| v.norm() < 1e-14));
        let h = grid.sample(|x, _| c(1.0 + (2.0 * x).cos()));
        let d = mean_decompose(&grid, &h);
        assert!(d.mean.iter().all(|v| (v - c(1.0)).norm() < 1e-14));
        let total = grid.norm(&h).powi(2);
        let split = d.mean_norm(&grid).powi(2) * PI + grid.norm(&d.fluctuation).powi(2);
        assert!((total - split).abs() < 1e-10 * total);
    }

    #[test]
    fn pythagoras_on_a_graded_grid() {
        let spec = make_cell(0.2, 0.5).unwrap();
        let mesh = build_mesh(&spec, 0.3, 4).unwrap();
        let grid = CellGrid::new(&mesh.xi1, &mesh.x2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f: Vec<Complex64> = (0..grid.len()).map(|_| c(rng.random_range(-1.0..1.0))).collect();
        let d = mean_decompose(&grid, &f);
        for m in grid.row_means(&d.fluctuation) {
            assert!(m.norm() < 1e-12);
        }
        let total = grid.norm(&f).powi(2);
        let split = d.mean_norm(&grid).powi(2) * PI + grid.norm(&d.fluctuation).powi(2);
        assert!((total - split).abs() < 1e-10 * total);
    }

    #[test]
    fn analytic_resolvent_examples() {
        let grid = CellGrid::uniform(16, 15);
        let cut = ModeCutoff { m_max: 2, n_max: 4 };
        let f = grid.sample(|_, y| c(y.sin()));
        let u = dirichlet_fiber_apply_resolvent(0.3, 0.0, c(0.0), &grid, &f, cut).unwrap();
        assert!(u.iter().zip(&f).all(|(a, b)| (a - b).norm() < 1e-12));
        let g = grid.sample(|x, y| Complex64::from_polar(1.0, 2.0 * x) * y.sin());
        let u = dirichlet_fiber_apply_resolvent(1.0, 0.0, c(0.0), &grid, &g, cut).unwrap();
        assert!(u.iter().zip(&g).all(|(a, b)| (a - b / 5.0).norm() < 1e-12));
        let u = dirichlet_fiber_apply_resolvent(0.3, 0.0, Complex64::new(0.0, 1.0), &grid, &f, cut).unwrap();
        let factor = Complex64::new(0.5, 0.5);
        assert!(u.iter().zip(&f).all(|(a, b)| (a - b * factor).norm() < 1e-12));
        let err = dirichlet_fiber_apply_resolvent(0.3, 0.0, c(1.0), &grid, &f, cut);
        assert!(matches!(err, Err(HomogenizedError::SpectralPoleProximity { .. })));
        let rough = grid.sample(|_, y| c((9.0 * y).sin()));
        assert!(matches!(
            dirichlet_fiber_apply_resolvent(0.3, 0.0, c(0.0), &grid, &rough, cut),
            Err(HomogenizedError::CutoffTooSmall { .. })
        ));
    }

    #[test]
    fn analytic_resolvent_identity() {
        let grid = CellGrid::uniform(16, 15);
        let cut = ModeCutoff { m_max: 3, n_max: 6 };
        let (eps, tau, z) = (0.4, 0.3, Complex64::new(2.0, 1.0));
        let f = grid.sample(|x, y| Complex64::from_polar(0.7, -2.0 * x) * (2.0 * y).sin() + c((4.0 * x).cos() * (5.0 * y).sin()));
        let u = dirichlet_fiber_apply_resolvent(eps, tau, z, &grid, &f, cut).unwrap();
        let back = dirichlet_fiber_apply_operator(eps, tau, z, &grid, &u, cut);
        let err = back.iter().zip(&f).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
        let d = mean_decompose(&grid, &u);
        assert!(d.mean.iter().all(|m| m.norm() < 1e-12));
    }

    #[test]
    fn power_norm_matches_dense_on_strip_matrices() {
        let spec = make_cell(0.3, 0.6).unwrap();
        let mesh = build_mesh_with(&spec, &MeshParams::new(0.3, 2).with_transverse(0.3)).unwrap();
        let cell = FiberCell::new(spec, mesh).unwrap();
        let (h, g) = strip_gap_matrices(&cell, 0.25, ModeCutoff { m_max: 1, n_max: 3 }).unwrap();
        let (p, _) = generalized_power(&h, &g, &PowerOptions::default());
        let d = generalized_max_dense(&h, &g);
        assert!((p - d).abs() < 1e-6 * d, "{p} {d}");
    }

    #[test]
    fn cell_gap_is_small_for_the_dirichlet_cell_and_stable() {
        let spec = make_cell(0.2, FRAC_PI_2).unwrap();
        let mesh = build_mesh_with(&spec, &MeshParams::new(0.2, 0).with_transverse(0.1)).unwrap();
        let cell = FiberCell::new(spec, mesh).unwrap();
        let a = cell_resolvent_gap(&cell, 0.0, 0.5, &PowerOptions::default()).unwrap();
        let b = cell_resolvent_gap(&cell, 0.0, 0.5, &PowerOptions { block: 8, max_iter: 60, ..Default::default() }).unwrap();
        assert!(a.norm_estimate > 0.0 && a.norm_estimate < 0.05, "{}", a.norm_estimate);
        assert!(
            (a.norm_estimate - b.norm_estimate).abs() <= 1e-6 * a.norm_estimate.max(1e-3),
            "{} {} {} {}",
            a.norm_estimate,
            b.norm_estimate,
            a.iterations,
            b.iterations
        );
    }

    #[test]
    fn bounds_arithmetic() {
        assert!((cell_gap_bound(0.1, FRAC_PI_4, 0.5) - 1.457806).abs() < 1e-6);
        assert!((strip_gap_bound(0.1, FRAC_PI_4) - 3.883214).abs() < 1e-6);
    }

    #[test]
    fn rate_fit_recovers_power_law() {
        let pairs: Vec<(f64, f64)> = [0.2f64, 0.1, 0.05].iter().map(|&e| (e, 3.0 * e.powf(0.5))).collect();
        let fit = fit_rate(&pairs);
        assert!((fit.fitted_exponent - 0.5).abs() < 1e-12);
        assert!((fit.fitted_prefactor - 3.0).abs() < 1e-12);
    }
}
