//! The boundary-layer recurrence: the correctors `v_i` on the half-strip,
//! the solvability formula for `μ_i` and the truncated expansion
//! `Λ^(M) = 1 + Σ ε^i μ_i`.
//!
//! `v₁ = X`, `v₂ = (μ₁/2)X`; for `i ≥ 3` the corrector solves
//! `−Δv_i = Σ_{j=0}^{i−3} μ_j v_{i−j−2}` with `v_i = πμ_i/2 − G_i^D` on the
//! window, `∂v_i/∂ξ₂ = −(μ_{i−1}/2 + G_{i−1}^N)` between the windows, and
//! decays upwards. Green's formula against `Y = X + ξ₂ − ln sin η` gives
//!
//! `μ_i = (2/π)[G_i^D + (μ_{i−1}/2 + G_{i−1}^N) ln sin η − (1/π) Σ μ_j ∫ Y v_{i−j−2}]`,
//!
//! with `μ₀ = 1` and the `i = 1` Neumann datum equal to `1`.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::Serialize;
use thiserror::Error;

use crate::blayer::{tail_envelope, BoundaryLayerError, BoundaryLayerField, HalfStripDomain};
use crate::fem::{poisson_solve, FemError};
use crate::geometry::{build_half_strip_mesh, GeometryError, Mesh, MeshParams};
use crate::quadrature::{tensor_integrate, GaussLegendre};
use crate::series::{extract_g, SeriesError, TracePolynomials};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorrectorError {
    #[error("order {needed} requires data of order {missing}, not yet computed")]
    MissingPrerequisite { needed: usize, missing: usize },
    #[error("corrector solve failed: {0}")]
    SolveFailure(#[from] FemError),
    #[error("quadrature failed: {0}")]
    QuadratureFailure(#[from] BoundaryLayerError),
    #[error("need at least 4 window widths in (1e-6, pi/2), got {0}")]
    InsufficientPoints(usize),
    #[error("order {0} exceeds the supported maximum {MAX_ORDER}")]
    OrderTooHigh(usize),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub const MAX_ORDER: usize = 6;

#[derive(Debug, Clone, Copy)]
pub struct ExpansionOptions {
    /// Truncation height `L` of the half-strip.
    pub height: f64,
    pub mesh: MeshParams,
    pub quad: HalfStripDomain,
}

impl Default for ExpansionOptions {
    fn default() -> Self {
        Self { height: 10.0, mesh: MeshParams::new(0.05, 10).with_transverse(0.05), quad: HalfStripDomain::new(10.0) }
    }
}

impl ExpansionOptions {
    pub fn with_height(mut self, height: f64) -> Self {
        self.height = height;
        self.quad.height = height;
        self
    }
}

/// A corrector sampled at the nodes of the half-strip mesh. For `i ≤ 2`
/// it is `scale · X` and `closed_form` holds the scale.
#[derive(Debug, Clone)]
pub struct CorrectorField {
    pub i: usize,
    pub values: Vec<f64>,
    pub closed_form: Option<f64>,
    /// `∫_Π Y v_i` and its tail estimate above the truncation height.
    pub y_moment: f64,
    pub y_moment_tail: f64,
    /// Cap flux term of Green's identity relative to `|∫ Y f_i|`.
    pub solvability_residual: f64,
    /// `max |∫ v_i dξ₁| / (π max |v_i|)` over the mesh lines.
    pub mean_defect: f64,
}

#[derive(Debug, Clone)]
pub struct ExpansionState {
    pub eta: f64,
    pub mu: Vec<f64>,
    pub tails: Vec<f64>,
    pub correctors: Vec<CorrectorField>,
    pub g_cache: Vec<TracePolynomials>,
    pub options: ExpansionOptions,
    field: BoundaryLayerField,
    mesh: Option<Mesh>,
    x_moment: Option<(f64, f64)>,
}

impl ExpansionState {
    pub fn new(eta: f64, options: ExpansionOptions) -> Result<Self, CorrectorError> {
        let field = BoundaryLayerField::new(eta)?;
        Ok(Self { eta, mu: vec![], tails: vec![], correctors: vec![], g_cache: vec![], options, field, mesh: None, x_moment: None })
    }

    /// `μ₀ := 1`.
    fn mu_at(&self, j: usize) -> f64 {
        if j == 0 {
            1.0
        } else {
            self.mu[j - 1]
        }
    }

    fn g(&mut self, i: usize) -> Result<TracePolynomials, CorrectorError> {
        while self.g_cache.len() < i {
            let k = self.g_cache.len() + 1;
            if self.mu.len() < k - 1 {
                return Err(CorrectorError::MissingPrerequisite { needed: k, missing: self.mu.len() + 1 });
            }
            self.g_cache.push(extract_g(k, &self.mu)?);
        }
        Ok(self.g_cache[i - 1])
    }

    /// `N_{i−1}`: the Neumann datum of `v_i` up to sign.
    fn neumann(&mut self, i: usize) -> Result<f64, CorrectorError> {
        if i == 1 {
            return Ok(1.0);
        }
        Ok(self.mu_at(i - 1) / 2.0 + self.g(i - 1)?.g_n)
    }

    fn degenerate(&self) -> bool {
        self.eta >= FRAC_PI_2
    }

    /// `‖X‖²` over the half-strip, which equals `∫ Y X`, with its tail.
    fn x_moment(&mut self) -> Result<(f64, f64), CorrectorError> {
        if let Some(m) = self.x_moment {
            return Ok(m);
        }
        let f = self.field;
        let (xs, ys) = self.options.quad.panels(self.eta);
        let value = tensor_integrate(&xs, &ys, GaussLegendre::ten(), |x, y| {
            f.value(x, y).map(|v| f.y_value(x, y).unwrap_or(0.0) * v).unwrap_or(f64::NAN)
        });
        if !value.is_finite() {
            return Err(BoundaryLayerError::Quadrature(crate::quadrature::QuadratureError::NonFinite(self.eta)).into());
        }
        // far field |X| ≤ c e^{−2ξ₂}, c read off at ξ₂ = 1 with a safety factor
        let c =
            2.0 * (0..64).map(|k| f.value(-FRAC_PI_2 + PI * k as f64 / 64.0, 1.0).unwrap_or(0.0).abs()).fold(0.0, f64::max) * 2f64.exp();
        let tail = tail_envelope(self.options.height, c * (f.ln_sin_eta.abs() + c), c);
        self.x_moment = Some((value, tail));
        Ok((value, tail))
    }

    fn y_moment(&mut self, k: usize) -> Result<(f64, f64), CorrectorError> {
        match k {
            1 => self.x_moment(),
            2 => {
                let (m, t) = self.x_moment()?;
                let s = self.mu_at(1) / 2.0;
                Ok((s * m, s.abs() * t))
            }
            _ => {
                let f = self.correctors.get(k - 1).ok_or(CorrectorError::MissingPrerequisite { needed: k + 2, missing: k })?;
                Ok((f.y_moment, f.y_moment_tail))
            }
        }
    }

    /// Computes and stores `μ_i` for `i = mu.len() + 1`.
    pub fn next_mu(&mut self) -> Result<f64, CorrectorError> {
        let i = self.mu.len() + 1;
        if i > MAX_ORDER {
            return Err(CorrectorError::OrderTooHigh(i));
        }
        if self.degenerate() {
            self.mu.push(0.0);
            self.tails.push(0.0);
            return Ok(0.0);
        }
        let ln_sin = self.field.ln_sin_eta;
        let gd = self.g(i)?.g_d;
        let n = self.neumann(i)?;
        let mut sum = 0.0;
        let mut tail = 0.0;
        for j in 0..=i.saturating_sub(3) {
            if i < 3 {
                break;
            }
            let k = i - j - 2;
            if k > 2 && self.correctors.len() < k {
                return Err(CorrectorError::MissingPrerequisite { needed: i, missing: k });
            }
            let (m, t) = self.y_moment(k)?;
            sum += self.mu_at(j) * m;
            tail += self.mu_at(j).abs() * t;
        }
        let mu = 2.0 / PI * (gd + n * ln_sin - sum / PI);
        self.mu.push(mu);
        self.tails.push(2.0 / (PI * PI) * tail);
        Ok(mu)
    }

    pub fn mesh(&mut self) -> Result<&Mesh, CorrectorError> {
        if self.mesh.is_none() {
            self.mesh = Some(build_half_strip_mesh(self.eta, self.options.height, &self.options.mesh)?);
        }
        Ok(self.mesh.as_ref().unwrap())
    }

    /// Computes and stores `v_i` for `i = correctors.len() + 1`; needs `μ_i`.
    pub fn corrector(&mut self) -> Result<&CorrectorField, CorrectorError> {
        let i = self.correctors.len() + 1;
        if self.mu.len() < i {
            return Err(CorrectorError::MissingPrerequisite { needed: i, missing: self.mu.len() + 1 });
        }
        let field = self.field;
        self.mesh()?;
        let closed = i <= 2 || self.degenerate();
        let (moment, y_source, window, flux) = if closed {
            let m = if self.degenerate() { (0.0, 0.0) } else { self.y_moment(i)? };
            (m, 0.0, 0.0, 0.0)
        } else {
            let mut y_source = 0.0;
            for j in 0..=i - 3 {
                y_source += self.mu_at(j) * self.y_moment(i - j - 2)?.0;
            }
            let window = PI * self.mu_at(i) / 2.0 - self.g(i)?.g_d;
            ((0.0, 0.0), y_source, window, self.neumann(i)?)
        };
        let mesh = self.mesh.as_ref().unwrap();
        let out = if closed {
            let scale = match i {
                1 => 1.0,
                2 if !self.degenerate() => self.mu_at(1) / 2.0,
                _ => 0.0,
            };
            let values: Vec<f64> = mesh.nodes.iter().map(|p| scale * field.value(p[0], p[1]).unwrap_or(f64::NAN)).collect();
            let mean_defect = mean_defect(mesh, &values);
            CorrectorField {
                i,
                values,
                closed_form: Some(scale),
                y_moment: moment.0,
                y_moment_tail: moment.1,
                solvability_residual: 0.0,
                mean_defect,
            }
        } else {
            let mut source = vec![0.0; mesh.num_nodes()];
            for j in 0..=i - 3 {
                let mu_j = self.mu_at(j);
                for (s, v) in source.iter_mut().zip(&self.correctors[i - j - 3].values) {
                    *s += mu_j * v;
                }
            }
            let values = poisson_solve(mesh, &source, window, flux)?;
            let (m, t) = y_moment_fem(mesh, &field, &values, self.options.height);
            let cap = cap_term(mesh, &values, self.options.height - field.ln_sin_eta);
            let residual = cap.abs() / y_source.abs().max(f64::MIN_POSITIVE);
            let mean_defect = mean_defect(mesh, &values);
            CorrectorField { i, values, closed_form: None, y_moment: m, y_moment_tail: t, solvability_residual: residual, mean_defect }
        };
        self.correctors.push(out);
        Ok(self.correctors.last().unwrap())
    }

    /// Runs the recurrence to order `order`, solving only the correctors
    /// the coefficients need.
    pub fn advance_to(&mut self, order: usize) -> Result<(), CorrectorError> {
        if order > MAX_ORDER {
            return Err(CorrectorError::OrderTooHigh(order));
        }
        while self.mu.len() < order {
            let i = self.mu.len() + 1;
            // μ_i needs v_k for k ≤ i − 2; the closed forms cover k ≤ 2
            while i >= 5 && self.correctors.len() < i - 2 {
                self.corrector()?;
            }
            self.next_mu()?;
        }
        Ok(())
    }

    pub fn lambda(&self, epsilon: f64) -> f64 {
        1.0 + self.mu.iter().enumerate().map(|(k, m)| epsilon.powi(k as i32 + 1) * m).sum::<f64>()
    }
}

fn mean_defect(mesh: &Mesh, v: &[f64]) -> f64 {
    let n1 = mesh.n1();
    let vmax = v.iter().map(|x| x.abs()).fold(0.0, f64::max);
    if vmax == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0f64;
    for j in 1..mesh.n2() {
        let row = &v[j * n1..(j + 1) * n1];
        let s: f64 = mesh.xi1.windows(2).zip(row.windows(2)).map(|(x, r)| 0.5 * (x[1] - x[0]) * (r[0] + r[1])).sum();
        worst = worst.max(s.abs());
    }
    worst / (PI * vmax)
}

/// `−(L − ln sin η) ∫_{ξ₂=L} ∂₂v dξ₁`, the contribution of the cap to
/// Green's identity against `Y`.
fn cap_term(mesh: &Mesh, v: &[f64], y_top: f64) -> f64 {
    let n1 = mesh.n1();
    let n2 = mesh.n2();
    let dy = mesh.x2[n2 - 1] - mesh.x2[n2 - 2];
    let below = &v[(n2 - 2) * n1..(n2 - 1) * n1];
    let top = &v[(n2 - 1) * n1..n2 * n1];
    let flux: f64 =
        mesh.xi1.windows(2).enumerate().map(|(c, x)| 0.5 * (x[1] - x[0]) * ((top[c] - below[c]) + (top[c + 1] - below[c + 1])) / dy).sum();
    -y_top * flux
}

/// `∫ Y v_h` by the edge-midpoint rule on every element, with a tail
/// estimate from the decay between `L/4` and `L/2`.
fn y_moment_fem(mesh: &Mesh, field: &BoundaryLayerField, v: &[f64], height: f64) -> (f64, f64) {
    let mut total = 0.0;
    for e in &mesh.elements {
        let p: Vec<[f64; 2]> = e.iter().map(|&n| mesh.nodes[n]).collect();
        let area = 0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1])).abs();
        for (a, b) in [(0, 1), (1, 2), (2, 0)] {
            let x = 0.5 * (p[a][0] + p[b][0]);
            let y = 0.5 * (p[a][1] + p[b][1]);
            let vm = 0.5 * (v[e[a]] + v[e[b]]);
            total += area / 3.0 * field.y_value(x, y).unwrap_or(0.0) * vm;
        }
    }
    let n1 = mesh.n1();
    let row_max = |y: f64| -> f64 {
        let j = mesh.x2.iter().position(|&t| t >= y).unwrap_or(mesh.n2() - 1);
        v[j * n1..(j + 1) * n1].iter().map(|x| x.abs()).fold(0.0, f64::max) * (2.0 * mesh.x2[j]).exp()
    };
    let c = 2.0 * row_max(height / 4.0).max(row_max(height / 2.0));
    (total, tail_envelope(height, c * field.ln_sin_eta.abs(), c))
}

#[derive(Debug, Clone, Serialize)]
pub struct TruncatedExpansion {
    pub value: f64,
    /// `ε^i μ_i`, `i = 1..M`.
    pub terms: Vec<f64>,
}

pub fn truncated_expansion(epsilon: f64, eta: f64, order: usize) -> Result<TruncatedExpansion, CorrectorError> {
    truncated_expansion_with(epsilon, eta, order, ExpansionOptions::default())
}

pub fn truncated_expansion_with(
    epsilon: f64,
    eta: f64,
    order: usize,
    options: ExpansionOptions,
) -> Result<TruncatedExpansion, CorrectorError> {
    if order == 0 {
        return Err(CorrectorError::MissingPrerequisite { needed: 1, missing: 0 });
    }
    let mut st = ExpansionState::new(eta, options)?;
    st.advance_to(order)?;
    let terms: Vec<f64> = st.mu.iter().enumerate().map(|(k, m)| epsilon.powi(k as i32 + 1) * m).collect();
    Ok(TruncatedExpansion { value: 1.0 + terms.iter().sum::<f64>(), terms })
}

/// `μ_j(η)` for every `η` of the sequence.
pub fn mu_profile(j: usize, etas: &[f64], options: ExpansionOptions) -> Result<Vec<f64>, CorrectorError> {
    etas.iter()
        .map(|&eta| {
            let mut st = ExpansionState::new(eta, options)?;
            st.advance_to(j)?;
            Ok(st.mu[j - 1])
        })
        .collect()
}

/// Least-squares fit of `μ_j(η)/ln^j η ≈ K_j (1 + a/ln³η)`; returns `K_j`.
pub fn leading_constant_fit(j: usize, etas: &[f64]) -> Result<f64, CorrectorError> {
    if etas.len() < 4 || etas.iter().any(|&e| !(1e-6..FRAC_PI_2).contains(&e)) {
        return Err(CorrectorError::InsufficientPoints(etas.len()));
    }
    let mu = mu_profile(j, etas, ExpansionOptions::default())?;
    let pts: Vec<(f64, f64)> = etas.iter().zip(&mu).map(|(&e, &m)| (e.ln().powi(-3), m / e.ln().powi(j as i32))).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    Ok(my - slope * mx)
}

/// `n` logarithmically spaced window widths between `lo` and `hi`.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| (lo.ln() + (hi.ln() - lo.ln()) * k as f64 / (n - 1) as f64).exp()).collect()
}
