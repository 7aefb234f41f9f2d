//! Floquet fiber operators on the periodicity cell: assembly, eigenpairs,
//! band tables and the band-level checks.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::band::{BandError, BandMatrix};
use crate::eigen::{smallest_eigenpairs, EigenError, EigenOptions};
use crate::fem::{CellMatrices, FemError};
use crate::geometry::{build_mesh_with, CellSpec, GeometryError, Mesh, MeshParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FiberError {
    #[error("quasimomentum {0} outside [-1, 1]")]
    TauOutOfRange(f64),
    #[error("mesh was built for eta = {mesh}, cell has eta = {spec}")]
    TagMismatch { mesh: f64, spec: f64 },
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error(transparent)]
    Factorization(#[from] BandError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A cell, its mesh and the τ-independent matrices.
#[derive(Debug, Clone)]
pub struct FiberCell {
    pub spec: CellSpec,
    pub mesh: Mesh,
    pub mats: CellMatrices,
}

impl FiberCell {
    pub fn new(spec: CellSpec, mesh: Mesh) -> Result<Self, FiberError> {
        if (mesh.eta - spec.eta).abs() > 1e-14 || (mesh.height - spec.cell_height).abs() > 1e-12 {
            return Err(FiberError::TagMismatch { mesh: mesh.eta, spec: spec.eta });
        }
        let mats = CellMatrices::assemble(&mesh)?;
        Ok(Self { spec, mesh, mats })
    }

    pub fn epsilon(&self) -> f64 {
        self.spec.epsilon
    }

    pub fn dim(&self) -> usize {
        self.mats.len()
    }

    pub fn assemble(&self, tau: f64) -> Result<FiberOperator, FiberError> {
        if !(tau.abs() <= 1.0) {
            return Err(FiberError::TauOutOfRange(tau));
        }
        let e2 = 1.0 / (self.epsilon() * self.epsilon());
        let c = |r: f64| Complex64::new(r, 0.0);
        let m = &self.mats;
        let stiffness = BandMatrix::combine(&[
            (c(e2), &m.s1.map(c)),
            (c(e2 * tau * tau), &m.m.map(c)),
            (Complex64::new(0.0, -e2 * tau), &m.skew.map(c)),
            (c(1.0), &m.s2.map(c)),
        ]);
        Ok(FiberOperator { tau, epsilon: self.epsilon(), stiffness, mass: m.m.clone() })
    }

    /// `‖∂u/∂x₁‖² / ‖u‖²` with the physical derivative `ε⁻¹∂/∂ξ₁`.
    pub fn x1_energy(&self, u: &[Complex64]) -> f64 {
        let (e1, _) = self.mats.energies(u, 0.0);
        e1 / (self.epsilon().powi(2) * self.mats.mass_norm(u).powi(2))
    }

    /// `(‖(i∂₁ − τ/ε)u‖² + ‖∂₂u‖²) / ‖u‖²`, summed element by element.
    pub fn rayleigh_quotient(&self, u: &[Complex64], tau: f64) -> f64 {
        let (e1, e2) = self.mats.energies(u, tau);
        (e1 / self.epsilon().powi(2) + e2) / self.mats.mass_norm(u).powi(2)
    }
}

/// Stiffness `ε⁻²(S₁ + τ²M − iτ(C − Cᵀ)) + S₂` and mass on the unknowns.
#[derive(Debug, Clone)]
pub struct FiberOperator {
    pub tau: f64,
    pub epsilon: f64,
    pub stiffness: BandMatrix<Complex64>,
    pub mass: BandMatrix<f64>,
}

impl FiberOperator {
    /// `τ²/ε²`, the bottom of the free transverse motion.
    pub fn shift(&self) -> f64 {
        (self.tau / self.epsilon).powi(2)
    }

    pub fn hermitian_defect(&self) -> f64 {
        self.stiffness.hermitian_defect()
    }

    pub fn max_imaginary(&self) -> f64 {
        let n = self.stiffness.dim();
        let bw = self.stiffness.bandwidth();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i.saturating_sub(bw)..(i + bw + 1).min(n) {
                worst = worst.max(self.stiffness.get(i, j).im.abs());
            }
        }
        worst
    }
}

pub fn assemble_fiber(spec: &CellSpec, mesh: &Mesh, tau: f64) -> Result<(FiberCell, FiberOperator), FiberError> {
    let cell = FiberCell::new(*spec, mesh.clone())?;
    let op = cell.assemble(tau)?;
    Ok((cell, op))
}

#[derive(Debug, Clone)]
pub struct FiberEigen {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<Complex64>>,
    pub residuals: Vec<f64>,
}

/// The `n` smallest eigenpairs; the τ = 0 problem is solved in real
/// arithmetic.
pub fn eigs(op: &FiberOperator, n: usize) -> Result<FiberEigen, FiberError> {
    let opts = EigenOptions::new(n);
    let shift = op.shift();
    if op.tau == 0.0 {
        let k = op.stiffness.map(|z| z.re);
        let p = smallest_eigenpairs(&k, &op.mass, shift, &opts)?;
        let vectors = p.vectors.iter().map(|v| v.iter().map(|&x| Complex64::new(x, 0.0)).collect()).collect();
        return Ok(FiberEigen { values: p.values, vectors, residuals: p.residuals });
    }
    let m = op.mass.map(|x| Complex64::new(x, 0.0));
    let p = smallest_eigenpairs(&op.stiffness, &m, shift, &opts)?;
    Ok(FiberEigen { values: p.values, vectors: p.vectors, residuals: p.residuals })
}

#[derive(Debug, Clone, Serialize)]
pub struct BandTable {
    pub epsilon: f64,
    pub eta: f64,
    pub tau_grid: Vec<f64>,
    /// `lambdas[t][n]` is `λ_{n+1}(τ_t)`.
    pub lambdas: Vec<Vec<f64>>,
    /// `λ_n − τ²/ε² − n²`.
    pub remainders: Vec<Vec<f64>>,
    pub residuals: Vec<Vec<f64>>,
}

impl BandTable {
    pub fn n_bands(&self) -> usize {
        self.lambdas.first().map_or(0, |r| r.len())
    }

    /// `[min_τ λ_n, max_τ λ_n]` for every band.
    pub fn band_intervals(&self) -> Vec<(f64, f64)> {
        (0..self.n_bands())
            .map(|n| self.lambdas.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), row| (lo.min(row[n]), hi.max(row[n]))))
            .collect()
    }

    /// Open gaps between consecutive band intervals.
    pub fn gaps(&self) -> Vec<(f64, f64)> {
        let bands = self.band_intervals();
        let mut gaps = Vec::new();
        let mut top = f64::NEG_INFINITY;
        for w in bands.windows(2) {
            top = top.max(w[0].1);
            if w[1].0 > top {
                gaps.push((top, w[1].0));
            }
        }
        gaps
    }
}

pub fn remainder(lambda: f64, tau: f64, epsilon: f64, n: usize) -> f64 {
    lambda - (tau / epsilon).powi(2) - (n * n) as f64
}

pub fn band_table(cell: &FiberCell, tau_grid: &[f64], n: usize) -> Result<BandTable, FiberError> {
    let rows: Vec<Result<FiberEigen, FiberError>> = tau_grid
        .par_iter()
        .map(|&tau| {
            let op = cell.assemble(tau)?;
            eigs(&op, n)
        })
        .collect();
    let mut lambdas = Vec::with_capacity(tau_grid.len());
    let mut residuals = Vec::with_capacity(tau_grid.len());
    for r in rows {
        let e = r?;
        lambdas.push(e.values);
        residuals.push(e.residuals);
    }
    let eps = cell.epsilon();
    let remainders = lambdas
        .iter()
        .zip(tau_grid)
        .map(|(row, &tau)| row.iter().enumerate().map(|(k, &l)| remainder(l, tau, eps, k + 1)).collect())
        .collect();
    Ok(BandTable { epsilon: eps, eta: cell.spec.eta, tau_grid: tau_grid.to_vec(), lambdas, remainders, residuals })
}

/// `n⁴(√2 ε + 8 ε^{1/2} |ln sin η|^{1/2}) / δ^{1/4}`.
pub fn remainder_bound(n: usize, epsilon: f64, eta: f64, delta: f64) -> f64 {
    let l = eta.sin().ln().abs();
    (n as f64).powi(4) * (2f64.sqrt() * epsilon + 8.0 * epsilon.sqrt() * l.sqrt()) / delta.powf(0.25)
}

#[derive(Debug, Clone, Serialize)]
pub struct RemainderRow {
    pub tau: f64,
    pub n: usize,
    pub lambda: f64,
    pub remainder: f64,
    pub bound_rhs: f64,
    pub within_bound: bool,
    /// `0 ≤ λ_n − τ²/ε² ≤ n²`.
    pub bracket: bool,
    /// `λ₁ ≥ 1/4 + τ²/ε²` (first band only).
    pub lower_bound: Option<bool>,
    /// `9/4 ≤ λ₂ − τ²/ε² ≤ 4` for `|τ| ≤ ε` (second band only).
    pub second_band_window: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RemainderReport {
    pub delta: f64,
    pub rows: Vec<RemainderRow>,
}

impl RemainderReport {
    pub fn all_hold(&self) -> bool {
        self.rows.iter().all(|r| r.within_bound && r.bracket && r.lower_bound.unwrap_or(true) && r.second_band_window.unwrap_or(true))
    }

    /// Smallest `bound_rhs / |R_n|` over the rows.
    pub fn margin(&self) -> f64 {
        self.rows.iter().map(|r| r.bound_rhs / r.remainder.abs().max(f64::MIN_POSITIVE)).fold(f64::INFINITY, f64::min)
    }
}

/// Checks the rows with `|τ| ≤ 1 − δ`; `slack` absorbs discretization error
/// in the bracketing inequalities.
pub fn band_remainder_check(table: &BandTable, delta: f64, slack: f64) -> RemainderReport {
    let eps = table.epsilon;
    let mut rows = Vec::new();
    for (t, &tau) in table.tau_grid.iter().enumerate() {
        if tau.abs() > 1.0 - delta {
            continue;
        }
        let base = (tau / eps).powi(2);
        for (k, &lambda) in table.lambdas[t].iter().enumerate() {
            let n = k + 1;
            let r = table.remainders[t][k];
            let bound = remainder_bound(n, eps, table.eta, delta);
            let shifted = lambda - base;
            rows.push(RemainderRow {
                tau,
                n,
                lambda,
                remainder: r,
                bound_rhs: bound,
                within_bound: r.abs() <= bound,
                bracket: shifted >= -slack && shifted <= (n * n) as f64 + slack,
                lower_bound: (n == 1).then_some(shifted >= 0.25 - slack),
                second_band_window: (n == 2 && tau.abs() <= eps).then_some(shifted >= 2.25 - slack && shifted <= 4.0 + slack),
            });
        }
    }
    RemainderReport { delta, rows }
}

#[derive(Debug, Clone, Serialize)]
pub struct BottomReport {
    pub lambda1: f64,
    pub residual: f64,
    #[serde(skip)]
    pub eigenvector: Vec<Complex64>,
    /// `(τ, λ₁(τ))` on the checked subgrid.
    pub subgrid: Vec<(f64, f64)>,
    /// `λ₁(τ) ≥ λ₁(0) − tol` on the subgrid.
    pub infimum_at_zero: bool,
}

/// `λ₁(0, ε)` and the check that no τ in `extra ∪ grid([−ε, ε], points)`
/// goes below it.
pub fn bottom(cell: &FiberCell, points: usize, extra: &[f64], tol: f64) -> Result<BottomReport, FiberError> {
    let op = cell.assemble(0.0)?;
    let e = eigs(&op, 1)?;
    let lambda1 = e.values[0];
    let eps = cell.epsilon().min(1.0);
    let mut taus: Vec<f64> =
        if points >= 2 { (0..points).map(|k| -eps + 2.0 * eps * k as f64 / (points - 1) as f64).collect() } else { vec![] };
    taus.extend_from_slice(extra);
    let sub: Vec<Result<(f64, f64), FiberError>> = taus
        .par_iter()
        .map(|&tau| {
            if tau == 0.0 {
                return Ok((tau, lambda1));
            }
            let op = cell.assemble(tau)?;
            Ok((tau, eigs(&op, 1)?.values[0]))
        })
        .collect();
    let subgrid = sub.into_iter().collect::<Result<Vec<_>, _>>()?;
    let infimum_at_zero = subgrid.iter().all(|&(_, l)| l >= lambda1 - tol);
    Ok(BottomReport { lambda1, residual: e.residuals[0], eigenvector: e.vectors.into_iter().next().unwrap(), subgrid, infimum_at_zero })
}

#[derive(Debug, Clone, Serialize)]
pub struct MeshLevel {
    pub h: f64,
    pub transverse_h: f64,
    pub unknowns: usize,
    pub lambda1: f64,
}

/// `λ₁(0, ε)` on a sequence of meshes refined by `ratio`, extrapolated with
/// the observed convergence rate.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergedBottom {
    pub levels: Vec<MeshLevel>,
    pub extrapolated: f64,
    /// Observed order in `h`; `None` before the asymptotic regime.
    pub rate: Option<f64>,
    /// `|λ₁(finest) − λ₁(previous)|`.
    pub last_change: f64,
    /// Size of the extrapolation step.
    pub uncertainty: f64,
}

pub fn converged_bottom(spec: &CellSpec, base: &MeshParams, levels: usize, ratio: f64) -> Result<ConvergedBottom, FiberError> {
    let mut out = Vec::with_capacity(levels);
    for k in 0..levels.max(2) {
        let params = base.scaled(ratio.powi(k as i32));
        let cell = FiberCell::new(*spec, build_mesh_with(spec, &params)?)?;
        let e = eigs(&cell.assemble(0.0)?, 1)?;
        out.push(MeshLevel { h: params.h, transverse_h: params.transverse_h, unknowns: cell.dim(), lambda1: e.values[0] });
    }
    let l: Vec<f64> = out.iter().map(|m| m.lambda1).collect();
    let n = l.len();
    let d2 = l[n - 2] - l[n - 1];
    let (rate, q) = if n >= 3 {
        let d1 = l[n - 3] - l[n - 2];
        let q = d1 / d2;
        if q > 1.0 && d1 * d2 > 0.0 {
            (Some(q.ln() / (1.0 / ratio).ln()), q)
        } else {
            (None, f64::NAN)
        }
    } else {
        (Some(2.0), (1.0 / ratio).powi(2))
    };
    let step = if rate.is_some() { d2 / (q - 1.0) } else { d2.abs() };
    let extrapolated = if rate.is_some() { l[n - 1] - step } else { l[n - 1] };
    Ok(ConvergedBottom { levels: out, extrapolated, rate, last_change: d2.abs(), uncertainty: step.abs() })
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolventBoundSample {
    pub mean_zero: bool,
    pub u_norm: f64,
    pub dx2_norm: f64,
    pub dx1_norm: f64,
    pub f_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolventBoundReport {
    pub tau: f64,
    pub delta: f64,
    pub samples: Vec<ResolventBoundSample>,
    /// Largest observed ratios against `4`, `2`, `2δ^{-1/2}`, and for
    /// zero-mean data `ε δ^{-1/2}` and `ε/(2δ)` (gradient).
    pub worst: [f64; 5],
    pub holds: bool,
}

/// Solves `(K − τ²/ε² M) u = M f` for `probes` random `f` and again for
/// their zero-mean parts; returns the ratios entering the discrete
/// resolvent bounds.
pub fn resolvent_bounds(cell: &FiberCell, tau: f64, delta: f64, probes: usize, seed: u64) -> Result<ResolventBoundReport, FiberError> {
    let op = cell.assemble(tau)?;
    let m = op.mass.map(|x| Complex64::new(x, 0.0));
    let a = BandMatrix::combine(&[(Complex64::new(1.0, 0.0), &op.stiffness), (Complex64::new(-op.shift(), 0.0), &m)]);
    let lu = a.factor()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = crate::homogenized::CellRows::new(cell);
    let eps = cell.epsilon();
    let mut samples = Vec::new();
    let mut worst = [0.0f64; 5];
    for _ in 0..probes {
        let f: Vec<Complex64> = (0..cell.dim()).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let fluct = rows.fluctuation(&f);
        for (mean_zero, rhs) in [(false, f.clone()), (true, fluct)] {
            let u = lu.solve(&m.matvec(&rhs));
            let f_norm = cell.mats.mass_norm(&rhs);
            let (e1, e2) = cell.mats.energies(&u, 0.0);
            let s =
                ResolventBoundSample { mean_zero, u_norm: cell.mats.mass_norm(&u), dx2_norm: e2.sqrt(), dx1_norm: e1.sqrt() / eps, f_norm };
            if mean_zero {
                worst[3] = worst[3].max(s.u_norm / (eps / delta.sqrt() * f_norm));
                let grad = (s.dx1_norm.powi(2) + s.dx2_norm.powi(2)).sqrt();
                worst[4] = worst[4].max(grad / (eps / (2.0 * delta) * f_norm));
            } else {
                worst[0] = worst[0].max(s.u_norm / (4.0 * f_norm));
                worst[1] = worst[1].max(s.dx2_norm / (2.0 * f_norm));
                worst[2] = worst[2].max(s.dx1_norm / (2.0 / delta.sqrt() * f_norm));
            }
            samples.push(s);
        }
    }
    Ok(ResolventBoundReport { tau, delta, samples, worst, holds: worst.iter().all(|&w| w <= 1.0) })
}
