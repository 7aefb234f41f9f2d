//! Named inequality checks `lhs ≤ rhs` grouped into suites.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::blayer::{dirichlet_energy, line_mean, sharp_bound, BoundaryLayerField, HalfStripDomain};
use crate::corrector::{ExpansionOptions, ExpansionState};
use crate::error::{Error, Result};
use crate::fiber::{band_remainder_check, band_table, bottom, remainder_bound, resolvent_bounds, FiberCell};
use crate::geometry::{build_mesh_with, make_cell, MeshParams};
use crate::homogenized::{cell_resolvent_gap, strip_resolvent_gap, tau_grid, ModeCutoff, PowerOptions};
use crate::series::extract_g;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Check {
    pub check_id: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// `rhs − lhs`.
    pub margin: f64,
}

impl Check {
    pub fn le(id: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        Self { check_id: id.into(), lhs, rhs, holds: lhs <= rhs, margin: rhs - lhs }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Blayer,
    Mu,
    Bottom,
    Bands,
    Resolvent,
    Strip,
    All,
}

impl Suite {
    pub const EACH: [Suite; 6] = [Suite::Blayer, Suite::Mu, Suite::Bottom, Suite::Bands, Suite::Resolvent, Suite::Strip];
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "blayer" => Suite::Blayer,
            "mu" => Suite::Mu,
            "bottom" => Suite::Bottom,
            "bands" => Suite::Bands,
            "resolvent" => Suite::Resolvent,
            "strip" => Suite::Strip,
            "all" => Suite::All,
            _ => return Err(Error::InvalidParameter(format!("unknown suite '{s}'"))),
        })
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Suite::Blayer => "blayer",
            Suite::Mu => "mu",
            Suite::Bottom => "bottom",
            Suite::Bands => "bands",
            Suite::Resolvent => "resolvent",
            Suite::Strip => "strip",
            Suite::All => "all",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CheckParams {
    pub epsilon: f64,
    pub eta: f64,
    pub delta: f64,
    pub mesh: MeshParams,
    pub tau_points: usize,
    pub n_bands: usize,
    pub seed: u64,
    pub height: f64,
    pub probes: ModeCutoff,
}

impl Default for CheckParams {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            eta: PI / 4.0,
            delta: 0.5,
            mesh: MeshParams::new(0.1, 8).with_transverse(0.02),
            tau_points: 33,
            n_bands: 3,
            seed: 1,
            height: 10.0,
            probes: ModeCutoff { m_max: 2, n_max: 6 },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub suite: Suite,
    pub eps: f64,
    pub eta: f64,
    pub delta: f64,
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn all_hold(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }
}

pub fn validate(suite: Suite, p: &CheckParams) -> Result<ValidationReport> {
    if !(p.delta > 0.0 && p.delta < 1.0) {
        return Err(Error::InvalidParameter(format!("delta must lie in (0, 1), got {}", p.delta)));
    }
    let suites: Vec<Suite> = if suite == Suite::All { Suite::EACH.to_vec() } else { vec![suite] };
    let mut checks = Vec::new();
    for s in suites {
        checks.extend(match s {
            Suite::Blayer => blayer_checks(p)?,
            Suite::Mu => mu_checks(p)?,
            Suite::Bottom => bottom_checks(p)?,
            Suite::Bands => band_checks(p)?,
            Suite::Resolvent => resolvent_checks(p)?,
            Suite::Strip => strip_checks(p)?,
            Suite::All => unreachable!(),
        });
    }
    Ok(ValidationReport { suite, eps: p.epsilon, eta: p.eta, delta: p.delta, seed: p.seed, checks })
}

fn cell(p: &CheckParams) -> Result<FiberCell> {
    let spec = make_cell(p.epsilon, p.eta)?;
    Ok(FiberCell::new(spec, build_mesh_with(&spec, &p.mesh)?)?)
}

fn blayer_checks(p: &CheckParams) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let l = p.eta.sin().ln().abs();
    let e = dirichlet_energy(&HalfStripDomain::new(p.height), p.eta)?;
    let rel = if l > 0.0 { (e.value - PI * l).abs() / (PI * l) } else { e.value.abs() };
    out.push(Check::le("blayer.energy_identity", rel, 0.01));
    for xi2 in [0.01, 0.1, 1.0] {
        out.push(Check::le(format!("blayer.line_mean.xi2={xi2}"), line_mean(xi2, p.eta, 1e-12)?.abs(), 1e-8));
    }
    let field = BoundaryLayerField::new(p.eta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let x = rng.random_range(-FRAC_PI_2..FRAC_PI_2);
        let y = rng.random_range(0.0..p.height);
        worst = worst.max(field.value(x, y)?.abs());
    }
    out.push(Check::le("blayer.pointwise_sup", worst, sharp_bound(p.eta) + 1e-12));
    Ok(out)
}

fn mu_checks(p: &CheckParams) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let l = p.eta.sin().ln();
    let mut st = ExpansionState::new(p.eta, ExpansionOptions::default().with_height(p.height))?;
    st.advance_to(3)?;
    out.push(Check::le("mu.closed_form.1", (st.mu[0] - 2.0 / PI * l).abs(), 1e-12));
    out.push(Check::le("mu.closed_form.2", (st.mu[1] - 3.0 / (PI * PI) * l * l).abs(), 1e-12));
    let g1 = extract_g(1, &[])?;
    out.push(Check::le("mu.g1_vanishes", g1.g_d.abs() + g1.g_n.abs(), 1e-12));
    let g2 = extract_g(2, &st.mu[..1])?;
    out.push(Check::le("mu.g2_dirichlet", (g2.g_d - PI * st.mu[0].powi(2) / 8.0).abs(), 1e-12));
    if p.eta < FRAC_PI_2 {
        for _ in 0..3 {
            st.corrector()?;
        }
        let v3 = &st.correctors[2];
        out.push(Check::le("mu.solvability_residual.3", v3.solvability_residual, 1e-2));
        out.push(Check::le("mu.mean_defect.3", v3.mean_defect, 1e-2));
    }
    Ok(out)
}

fn bottom_checks(p: &CheckParams) -> Result<Vec<Check>> {
    let c = cell(p)?;
    let b = bottom(&c, 11, &[-0.9, -0.5, 0.5, 0.9], 1e-8)?;
    let min_tau = b.subgrid.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let mut st = ExpansionState::new(p.eta, ExpansionOptions::default())?;
    st.advance_to(2)?;
    let l = p.eta.sin().ln().abs();
    let eps3 = p.epsilon.powi(3);
    Ok(vec![
        Check::le("bottom.neumann_lower", 0.25, b.lambda1),
        Check::le("bottom.infimum_at_zero", b.lambda1 - 1e-8, min_tau),
        Check::le("bottom.expansion_order2", (b.lambda1 - st.lambda(p.epsilon)).abs(), 5.0 * eps3 * (l.powi(3) + 1.0)),
    ])
}

fn band_checks(p: &CheckParams) -> Result<Vec<Check>> {
    let c = cell(p)?;
    let grid: Vec<f64> = tau_grid(p.tau_points).into_iter().filter(|t| t.abs() <= 1.0 - p.delta).collect();
    let table = band_table(&c, &grid, p.n_bands)?;
    let rep = band_remainder_check(&table, p.delta, 0.0);
    let eps = p.epsilon;
    let mut out = Vec::new();
    for n in 1..=p.n_bands {
        let rows: Vec<_> = rep.rows.iter().filter(|r| r.n == n).collect();
        let shifted: Vec<f64> = rows.iter().map(|r| r.lambda - (r.tau / eps).powi(2)).collect();
        let worst_r = rows.iter().map(|r| r.remainder.abs()).fold(0.0, f64::max);
        out.push(Check::le(format!("bands.remainder.n={n}"), worst_r, remainder_bound(n, eps, p.eta, p.delta)));
        out.push(Check::le(format!("bands.bracket_lower.n={n}"), 0.0, shifted.iter().cloned().fold(f64::INFINITY, f64::min)));
        out.push(Check::le(
            format!("bands.bracket_upper.n={n}"),
            shifted.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            (n * n) as f64,
        ));
        if n == 1 {
            out.push(Check::le("bands.neumann_lower", 0.25, shifted.iter().cloned().fold(f64::INFINITY, f64::min)));
        }
        if n == 2 {
            let near: Vec<f64> = rows.iter().zip(&shifted).filter(|(r, _)| r.tau.abs() <= eps).map(|(_, s)| *s).collect();
            if !near.is_empty() {
                out.push(Check::le("bands.second_band.lower", 2.25, near.iter().cloned().fold(f64::INFINITY, f64::min)));
                out.push(Check::le("bands.second_band.upper", near.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 4.0));
            }
        }
    }
    Ok(out)
}

fn resolvent_checks(p: &CheckParams) -> Result<Vec<Check>> {
    let c = cell(p)?;
    let mut out = Vec::new();
    let opts = PowerOptions { seed: p.seed, ..Default::default() };
    for tau in [0.0, 0.4] {
        if tau > 1.0 - p.delta {
            continue;
        }
        let g = cell_resolvent_gap(&c, tau, p.delta, &opts)?;
        out.push(Check::le(format!("resolvent.cell_gap.tau={tau}"), g.norm_estimate, g.bound));
        let r = resolvent_bounds(&c, tau, p.delta, 20, p.seed)?;
        for (name, w) in ["u", "dx2", "dx1", "u_mean_zero", "grad_mean_zero"].iter().zip(r.worst) {
            out.push(Check::le(format!("resolvent.lemma.{name}.tau={tau}"), w, 1.0));
        }
    }
    Ok(out)
}

fn strip_checks(p: &CheckParams) -> Result<Vec<Check>> {
    let c = cell(p)?;
    let opts = PowerOptions { seed: p.seed, ..Default::default() };
    let r = strip_resolvent_gap(&c, &tau_grid(p.tau_points), p.probes, &opts)?;
    Ok(vec![Check::le("strip.gap_sup", r.sup_norm_estimate, r.bound)])
}
