//! Periodicity cell, boundary partition and graded tensor-product meshes.
//!
//! Everything here lives in scaled coordinates `(ξ₁, x₂)` with `ξ₁ = x₁/ε`,
//! so one period of the alternation occupies `ξ₁ ∈ (−π/2, π/2)` regardless
//! of `ε`. The Dirichlet window is `|ξ₁| ≤ η` on the bottom edge.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::Serialize;
use thiserror::Error;

/// Tolerance used when deciding whether a point sits on the cell boundary.
pub const BOUNDARY_TOL: f64 = 1e-12;

/// Default number of geometric refinement levels around the window ends.
pub const DEFAULT_GRADING_LEVELS: u32 = 8;

/// Depth (in the fast variable `x₂/ε`) of the bottom boundary layer that is
/// resolved at the in-plane mesh size.
const LAYER_DEPTH: f64 = 8.0;

/// Growth factor used when the transverse spacing relaxes from the layer
/// resolution to the bulk resolution.
const LAYER_GROWTH: f64 = 1.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("epsilon must be positive, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("eta must lie in (0, pi/2], got {0}")]
    EtaOutOfRange(f64),
    #[error("point ({0}, {1}) is not on the cell boundary")]
    NotOnBoundary(f64, f64),
    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),
}

/// Scale parameters of the periodicity cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellSpec {
    pub epsilon: f64,
    pub eta: f64,
    /// `min(η, π/2 − η)`; zero in the all-Dirichlet mode.
    pub delta_eps: f64,
    /// Physical width of the cell, `επ`.
    pub cell_width: f64,
    pub cell_height: f64,
    /// Set when `η = π/2`, i.e. the whole bottom edge is Dirichlet.
    pub all_dirichlet: bool,
}

impl CellSpec {
    /// `ln sin η`, the quantity that controls every estimate of the problem.
    pub fn ln_sin_eta(&self) -> f64 {
        if self.all_dirichlet {
            0.0
        } else {
            self.eta.sin().ln()
        }
    }
}

pub fn make_cell(epsilon: f64, eta: f64) -> Result<CellSpec, GeometryError> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(GeometryError::NonPositiveEpsilon(epsilon));
    }
    if !(eta > 0.0) || eta > FRAC_PI_2 || !eta.is_finite() {
        return Err(GeometryError::EtaOutOfRange(eta));
    }
    let all_dirichlet = eta == FRAC_PI_2;
    let delta_eps = if all_dirichlet { 0.0 } else { eta.min(FRAC_PI_2 - eta) };
    Ok(CellSpec { epsilon, eta, delta_eps, cell_width: epsilon * PI, cell_height: PI, all_dirichlet })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum BoundaryTag {
    TopDirichlet,
    WindowDirichlet,
    NeumannSegment,
    LateralPeriodic,
}

impl BoundaryTag {
    pub fn is_dirichlet(self) -> bool {
        matches!(self, BoundaryTag::TopDirichlet | BoundaryTag::WindowDirichlet)
    }
}

/// Classifies a boundary point of the scaled cell `(−π/2, π/2) × (0, π)`.
///
/// The window is closed: the transition points `|ξ₁| = η` are Dirichlet.
pub fn classify_boundary(spec: &CellSpec, xi1: f64, x2: f64) -> Result<BoundaryTag, GeometryError> {
    classify_in_box(spec.eta, spec.cell_height, xi1, x2)
}

pub(crate) fn classify_in_box(eta: f64, height: f64, xi1: f64, x2: f64) -> Result<BoundaryTag, GeometryError> {
    let inside = xi1.abs() <= FRAC_PI_2 + BOUNDARY_TOL && x2 >= -BOUNDARY_TOL && x2 <= height + BOUNDARY_TOL;
    if !inside {
        return Err(GeometryError::NotOnBoundary(xi1, x2));
    }
    if (x2 - height).abs() <= BOUNDARY_TOL {
        Ok(BoundaryTag::TopDirichlet)
    } else if x2.abs() <= BOUNDARY_TOL {
        if xi1.abs() <= eta + BOUNDARY_TOL {
            Ok(BoundaryTag::WindowDirichlet)
        } else {
            Ok(BoundaryTag::NeumannSegment)
        }
    } else if (xi1.abs() - FRAC_PI_2).abs() <= BOUNDARY_TOL {
        Ok(BoundaryTag::LateralPeriodic)
    } else {
        Err(GeometryError::NotOnBoundary(xi1, x2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryEdge {
    pub edge: [usize; 2],
    pub tag: BoundaryTag,
}

/// Resolution parameters shared by the cell and half-strip meshes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshParams {
    /// In-plane element size in the fast variables.
    pub h: f64,
    /// Number of halvings of the element size towards the window ends.
    pub grading_levels: u32,
    /// Bulk transverse spacing in `x₂`; defaults to `h`.
    pub transverse_h: f64,
}

impl MeshParams {
    pub fn new(h: f64, grading_levels: u32) -> Self {
        Self { h, grading_levels, transverse_h: h }
    }

    pub fn with_transverse(mut self, transverse_h: f64) -> Self {
        self.transverse_h = transverse_h;
        self
    }

    /// Multiplies every length scale by `factor`; the number of grading
    /// levels is kept.
    pub fn scaled(&self, factor: f64) -> Self {
        Self { h: self.h * factor, grading_levels: self.grading_levels, transverse_h: self.transverse_h * factor }
    }

    /// Halves every length scale; the number of grading levels is kept.
    pub fn refined(&self) -> Self {
        Self { h: self.h / 2.0, grading_levels: self.grading_levels, transverse_h: self.transverse_h / 2.0 }
    }
}

/// Structured triangulation of a rectangle `(−π/2, π/2) × (0, height)`.
///
/// Nodes are stored on a tensor grid, node `(i, j)` has index `j * n1 + i`
/// where `i` runs along `ξ₁` and `j` along the vertical direction. The
/// rightmost column is the periodic image of the leftmost one.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub nodes: Vec<[f64; 2]>,
    pub elements: Vec<[usize; 3]>,
    pub boundary: Vec<BoundaryEdge>,
    pub grading_levels: u32,
    pub xi1: Vec<f64>,
    pub x2: Vec<f64>,
    pub height: f64,
    pub eta: f64,
    /// Per-node Dirichlet flag (top row and the closed window).
    pub dirichlet: Vec<bool>,
    /// `(left, right)` node pairs identified by periodicity.
    pub lateral_pairs: Vec<(usize, usize)>,
}

#[derive(Serialize)]
struct MeshExport<'a> {
    nodes: &'a [[f64; 2]],
    elements: &'a [[usize; 3]],
    boundary: &'a [BoundaryEdge],
}

impl Mesh {
    pub fn n1(&self) -> usize {
        self.xi1.len()
    }

    pub fn n2(&self) -> usize {
        self.x2.len()
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * self.n1() + i
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Smallest `ξ₁` spacing adjacent to a transition point.
    pub fn smallest_transition_spacing(&self) -> Option<f64> {
        let idx = self.xi1.iter().position(|&x| (x - self.eta).abs() < 1e-14)?;
        let left = if idx > 0 { self.xi1[idx] - self.xi1[idx - 1] } else { f64::INFINITY };
        let right = if idx + 1 < self.xi1.len() { self.xi1[idx + 1] - self.xi1[idx] } else { f64::INFINITY };
        Some(left.min(right))
    }

    /// Largest aspect ratio over elements whose both sides come from the
    /// ungraded bulk spacing; `bulk_h` bounds the spacing of the bulk.
    pub fn bulk_aspect_ratio(&self, graded_radius: f64, layer_top: f64) -> f64 {
        let mut worst: f64 = 1.0;
        for &[a, b, c] in &self.elements {
            let pts = [self.nodes[a], self.nodes[b], self.nodes[c]];
            let (xmin, xmax) = minmax(pts.iter().map(|p| p[0]));
            let (ymin, ymax) = minmax(pts.iter().map(|p| p[1]));
            let near_transition = (xmin.abs() - self.eta).abs() < graded_radius
                || (xmax.abs() - self.eta).abs() < graded_radius
                || (xmin < -self.eta && xmax > -self.eta)
                || (xmin < self.eta && xmax > self.eta);
            if near_transition || ymin < layer_top {
                continue;
            }
            let dx = xmax - xmin;
            let dy = ymax - ymin;
            worst = worst.max(dx.max(dy) / dx.min(dy));
        }
        worst
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&MeshExport { nodes: &self.nodes, elements: &self.elements, boundary: &self.boundary })
            .expect("mesh serialization cannot fail")
    }
}

fn minmax(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Spacing profile around a singular point: starts at `h·2^{-levels}`, may
/// at most double from one element to the next, and follows `h·√(d/R)`
/// until it reaches the bulk size `h` at distance `R`.
#[derive(Debug, Clone, Copy)]
struct Grading {
    h: f64,
    min_size: f64,
    radius: f64,
}

impl Grading {
    fn new(h: f64, levels: u32, radius: f64) -> Self {
        Self { h, min_size: h * 0.5f64.powi(levels as i32), radius: radius.max(h) }
    }

    fn target(&self, d: f64) -> f64 {
        if d >= self.radius {
            self.h
        } else {
            (self.h * (d / self.radius).sqrt()).max(self.min_size)
        }
    }

    /// Offsets `0 = d₀ < d₁ < … < d_n = length` marching away from the
    /// singular point.
    fn march(&self, length: f64) -> Vec<f64> {
        let mut out = vec![0.0];
        let mut d = 0.0;
        let mut prev = self.min_size;
        while d < length {
            let step = self.target(d).min(2.0 * prev).max(self.min_size);
            d += step;
            prev = step;
            out.push(d);
        }
        fit_to_length(out, length)
    }
}

/// Adjusts a monotone offset sequence so that it ends exactly at `length`.
/// The mismatch is spread over the largest cells, so the small cells next
/// to the origin keep their size.
fn fit_to_length(mut pts: Vec<f64>, length: f64) -> Vec<f64> {
    let n = pts.len();
    if n >= 3 {
        let last = pts[n - 1] - pts[n - 2];
        let overshoot = pts[n - 1] - length;
        if overshoot > 0.5 * last {
            pts.pop();
        }
    }
    let end = *pts.last().unwrap();
    if end <= 0.0 || pts.len() < 2 {
        return vec![0.0, length];
    }
    let mut cells: Vec<f64> = pts.windows(2).map(|w| w[1] - w[0]).collect();
    let largest = cells.iter().cloned().fold(0.0, f64::max);
    let big: Vec<usize> = (0..cells.len()).filter(|&k| cells[k] >= 0.999 * largest).collect();
    let share = (length - end) / big.len() as f64;
    if largest + share > 0.25 * largest {
        for &k in &big {
            cells[k] += share;
        }
    } else {
        let scale = length / end;
        cells.iter_mut().for_each(|c| *c *= scale);
    }
    let mut out = Vec::with_capacity(cells.len() + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for c in &cells {
        acc += c;
        out.push(acc);
    }
    *out.last_mut().unwrap() = length;
    out
}

fn uniform(a: f64, b: f64, h: f64) -> Vec<f64> {
    let n = ((b - a) / h).ceil().max(1.0) as usize;
    (0..=n).map(|k| if k == n { b } else { a + (b - a) * k as f64 / n as f64 }).collect()
}

/// `ξ₁` grid lines on `[−π/2, π/2]`, mirror-symmetric, containing `±η`.
fn xi1_lines(eta: f64, params: &MeshParams, graded: bool) -> Result<Vec<f64>, GeometryError> {
    let h = params.h;
    let mut half: Vec<f64> = if eta >= FRAC_PI_2 {
        uniform(0.0, FRAC_PI_2, h)
    } else if !graded {
        let mut left = uniform(0.0, eta, h);
        let right = uniform(eta, FRAC_PI_2, h);
        left.extend_from_slice(&right[1..]);
        left
    } else {
        let radius = eta.min(FRAC_PI_2 - eta).min(1.0);
        let g = Grading::new(h, params.grading_levels, radius);
        let inner = g.march(eta);
        let outer = g.march(FRAC_PI_2 - eta);
        let mut v: Vec<f64> = inner.iter().rev().map(|d| eta - d).collect();
        v[0] = 0.0;
        v.extend(outer.iter().skip(1).map(|d| eta + d));
        *v.last_mut().unwrap() = FRAC_PI_2;
        v
    };
    if eta < FRAC_PI_2 && !half.contains(&eta) {
        return Err(GeometryError::DegenerateMesh(format!("transition point {eta} did not land on a grid line")));
    }
    half.dedup();
    let mut full: Vec<f64> = half.iter().skip(1).rev().map(|x| -x).collect();
    full.extend_from_slice(&half);
    Ok(full)
}

/// Vertical grid lines. `layer_scale` maps the fast variable to the mesh
/// variable (`ε` for the cell, `1` for the half-strip).
fn vertical_lines(height: f64, layer_scale: f64, params: &MeshParams, graded: bool) -> Vec<f64> {
    let bulk = params.transverse_h;
    if !graded {
        return uniform(0.0, height, bulk);
    }
    let g = Grading::new(params.h, params.grading_levels, 1.0);
    let mut out = vec![0.0];
    let mut y = 0.0;
    let mut prev = (layer_scale * g.min_size).min(bulk);
    while y < height {
        let xi = y / layer_scale;
        let step = if xi < LAYER_DEPTH { (layer_scale * g.target(xi)).min(2.0 * prev) } else { prev * LAYER_GROWTH };
        let step = step.min(bulk);
        y += step;
        prev = step;
        out.push(y);
    }
    fit_to_length(out, height)
}

fn assemble_tensor_mesh(xi1: Vec<f64>, x2: Vec<f64>, eta: f64, height: f64, grading_levels: u32) -> Result<Mesh, GeometryError> {
    let n1 = xi1.len();
    let n2 = x2.len();
    if n1 < 3 || n2 < 2 {
        return Err(GeometryError::DegenerateMesh("too few grid lines".into()));
    }
    let mut nodes = Vec::with_capacity(n1 * n2);
    for &y in &x2 {
        for &x in &xi1 {
            nodes.push([x, y]);
        }
    }
    let idx = |i: usize, j: usize| j * n1 + i;
    let mut elements = Vec::with_capacity(2 * (n1 - 1) * (n2 - 1));
    for j in 0..n2 - 1 {
        for i in 0..n1 - 1 {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            let centre = 0.5 * (xi1[i] + xi1[i + 1]);
            // Mirror the diagonal direction across ξ₁ = 0.
            if centre < 0.0 {
                elements.push([a, b, c]);
                elements.push([a, c, d]);
            } else {
                elements.push([a, b, d]);
                elements.push([b, c, d]);
            }
        }
    }
    let mut boundary = Vec::new();
    let tag_edge = |p: usize, q: usize, nodes: &[[f64; 2]]| -> Result<BoundaryTag, GeometryError> {
        let mx = 0.5 * (nodes[p][0] + nodes[q][0]);
        let my = 0.5 * (nodes[p][1] + nodes[q][1]);
        classify_in_box(eta, height, mx, my)
    };
    for i in 0..n1 - 1 {
        let (p, q) = (idx(i, 0), idx(i + 1, 0));
        boundary.push(BoundaryEdge { edge: [p, q], tag: tag_edge(p, q, &nodes)? });
        let (p, q) = (idx(i, n2 - 1), idx(i + 1, n2 - 1));
        boundary.push(BoundaryEdge { edge: [p, q], tag: tag_edge(p, q, &nodes)? });
    }
    for j in 0..n2 - 1 {
        for i in [0, n1 - 1] {
            let (p, q) = (idx(i, j), idx(i, j + 1));
            boundary.push(BoundaryEdge { edge: [p, q], tag: tag_edge(p, q, &nodes)? });
        }
    }
    let mut dirichlet = vec![false; nodes.len()];
    for i in 0..n1 {
        dirichlet[idx(i, n2 - 1)] = true;
        if xi1[i].abs() <= eta + BOUNDARY_TOL {
            dirichlet[idx(i, 0)] = true;
        }
    }
    let lateral_pairs = (0..n2).map(|j| (idx(0, j), idx(n1 - 1, j))).collect();
    Ok(Mesh { nodes, elements, boundary, grading_levels, xi1, x2, height, eta, dirichlet, lateral_pairs })
}

/// Triangulates the scaled periodicity cell.
///
/// The window ends `(±η, 0)` are grid nodes; around them the element size
/// shrinks geometrically by a factor of two over `grading_levels` rings down
/// to `h·2^{-grading_levels}`. Towards `x₂ = 0` the vertical spacing follows
/// the same profile in the fast variable `x₂/ε`, so the boundary layer of
/// thickness `O(ε)` is resolved.
pub fn build_mesh(spec: &CellSpec, h: f64, grading_levels: u32) -> Result<Mesh, GeometryError> {
    build_mesh_with(spec, &MeshParams::new(h, grading_levels))
}

pub fn build_mesh_with(spec: &CellSpec, params: &MeshParams) -> Result<Mesh, GeometryError> {
    check_params(params, spec.eta)?;
    let graded = !spec.all_dirichlet && params.grading_levels > 0;
    let xi1 = xi1_lines(spec.eta, params, graded)?;
    let x2 = vertical_lines(PI, spec.epsilon, params, !spec.all_dirichlet);
    assemble_tensor_mesh(xi1, x2, spec.eta, PI, params.grading_levels)
}

/// Triangulates the truncated half-strip `(−π/2, π/2) × (0, height)` in the
/// fast variables, with the same grading towards the window ends.
pub fn build_half_strip_mesh(eta: f64, height: f64, params: &MeshParams) -> Result<Mesh, GeometryError> {
    if !(eta > 0.0) || eta > FRAC_PI_2 {
        return Err(GeometryError::EtaOutOfRange(eta));
    }
    check_params(params, eta)?;
    let graded = eta < FRAC_PI_2 && params.grading_levels > 0;
    let xi1 = xi1_lines(eta, params, graded)?;
    let p = MeshParams { transverse_h: params.h, ..*params };
    let x2 = vertical_lines(height, 1.0, &p, eta < FRAC_PI_2);
    assemble_tensor_mesh(xi1, x2, eta, height, params.grading_levels)
}

fn check_params(params: &MeshParams, eta: f64) -> Result<(), GeometryError> {
    if !(params.h > 0.0) || !(params.transverse_h > 0.0) {
        return Err(GeometryError::DegenerateMesh("mesh size must be positive".into()));
    }
    if params.h > FRAC_PI_2 {
        return Err(GeometryError::DegenerateMesh(format!("h = {} too large to place the transition nodes", params.h)));
    }
    if eta < FRAC_PI_2 && params.grading_levels > 0 && params.h * 0.5f64.powi(params.grading_levels as i32) > eta.min(FRAC_PI_2 - eta) {
        return Err(GeometryError::DegenerateMesh("smallest graded element exceeds the distance between transition points".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn make_cell_examples() {
        let c = make_cell(0.1, FRAC_PI_4).unwrap();
        assert_eq!(c.delta_eps, FRAC_PI_4);
        assert_eq!(c.cell_width, 0.1 * PI);
        assert!(!c.all_dirichlet);

        let d = make_cell(0.1, FRAC_PI_2).unwrap();
        assert!(d.all_dirichlet);
        assert_eq!(d.delta_eps, 0.0);

        assert_eq!(make_cell(0.1, 0.0), Err(GeometryError::EtaOutOfRange(0.0)));
        assert_eq!(make_cell(0.1, 1.6), Err(GeometryError::EtaOutOfRange(1.6)));
        assert_eq!(make_cell(0.0, 0.5), Err(GeometryError::NonPositiveEpsilon(0.0)));
        assert_eq!(make_cell(-1.0, 0.5), Err(GeometryError::NonPositiveEpsilon(-1.0)));
    }

    #[test]
    fn classify_examples() {
        let c = make_cell(0.1, FRAC_PI_4).unwrap();
        assert_eq!(classify_boundary(&c, 0.0, 0.0).unwrap(), BoundaryTag::WindowDirichlet);
        assert_eq!(classify_boundary(&c, FRAC_PI_2, 0.0).unwrap(), BoundaryTag::NeumannSegment);
        assert_eq!(classify_boundary(&c, 0.3, PI).unwrap(), BoundaryTag::TopDirichlet);
        assert_eq!(classify_boundary(&c, -FRAC_PI_2, 1.0).unwrap(), BoundaryTag::LateralPeriodic);
        // closed window
        assert_eq!(classify_boundary(&c, FRAC_PI_4, 0.0).unwrap(), BoundaryTag::WindowDirichlet);
        assert_eq!(classify_boundary(&c, -FRAC_PI_4, 0.0).unwrap(), BoundaryTag::WindowDirichlet);
        assert!(matches!(classify_boundary(&c, 0.1, 1.0), Err(GeometryError::NotOnBoundary(..))));
    }

    #[test]
    fn transition_nodes_present() {
        let c = make_cell(0.1, FRAC_PI_4).unwrap();
        let m = build_mesh(&c, PI / 16.0, 6).unwrap();
        assert!(m.xi1.contains(&FRAC_PI_4));
        assert!(m.xi1.iter().any(|&x| x == -FRAC_PI_4));
        let s = m.smallest_transition_spacing().unwrap();
        let expected = PI / 16.0 * 0.5f64.powi(6);
        assert!((s - expected).abs() / expected < 0.05, "{s} vs {expected}");
    }

    #[test]
    fn all_dirichlet_mesh_is_uniform() {
        let c = make_cell(0.1, FRAC_PI_2).unwrap();
        let m = build_mesh(&c, PI / 16.0, 0).unwrap();
        let d: Vec<f64> = m.xi1.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(d.iter().all(|&s| (s - d[0]).abs() < 1e-12));
        let e: Vec<f64> = m.x2.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(e.iter().all(|&s| (s - e[0]).abs() < 1e-12));
        for b in m.boundary.iter().filter(|b| m.nodes[b.edge[0]][1] == 0.0 && m.nodes[b.edge[1]][1] == 0.0) {
            assert_eq!(b.tag, BoundaryTag::WindowDirichlet);
        }
    }

    #[test]
    fn bottom_edge_lengths_sum() {
        for &eta in &[0.1, PI / 6.0, FRAC_PI_4, 1.3] {
            let c = make_cell(0.1, eta).unwrap();
            let m = build_mesh(&c, PI / 16.0, 8).unwrap();
            let (mut win, mut neu) = (0.0, 0.0);
            for b in &m.boundary {
                let [p, q] = b.edge;
                if m.nodes[p][1] != 0.0 || m.nodes[q][1] != 0.0 {
                    continue;
                }
                let len = (m.nodes[p][0] - m.nodes[q][0]).abs();
                match b.tag {
                    BoundaryTag::WindowDirichlet => win += len,
                    BoundaryTag::NeumannSegment => neu += len,
                    t => panic!("unexpected bottom tag {t:?}"),
                }
            }
            assert!((win - 2.0 * eta).abs() < 1e-10);
            assert!((neu - (PI - 2.0 * eta)).abs() < 1e-10);
        }
    }

    #[test]
    fn lateral_pairing_exact() {
        let c = make_cell(0.05, 1.3).unwrap();
        let m = build_mesh(&c, PI / 16.0, 8).unwrap();
        assert_eq!(m.lateral_pairs.len(), m.n2());
        for &(l, r) in &m.lateral_pairs {
            assert_eq!(m.nodes[l][0], -FRAC_PI_2);
            assert_eq!(m.nodes[r][0], FRAC_PI_2);
            assert_eq!(m.nodes[l][1], m.nodes[r][1]);
        }
    }

    #[test]
    fn refinement_doubles_nodes_and_keeps_tags() {
        let c = make_cell(0.1, FRAC_PI_4).unwrap();
        let p = MeshParams::new(PI / 16.0, 6);
        let coarse = build_mesh_with(&c, &p).unwrap();
        let fine = build_mesh_with(&c, &p.refined()).unwrap();
        assert!(fine.num_nodes() >= 2 * coarse.num_nodes());
        for b in &coarse.boundary {
            let [p, q] = b.edge;
            let mx = 0.5 * (coarse.nodes[p][0] + coarse.nodes[q][0]);
            let my = 0.5 * (coarse.nodes[p][1] + coarse.nodes[q][1]);
            assert_eq!(classify_boundary(&c, mx, my).unwrap(), b.tag);
        }
    }

    #[test]
    fn mesh_is_mirror_symmetric() {
        let c = make_cell(0.1, PI / 6.0).unwrap();
        let m = build_mesh(&c, PI / 16.0, 8).unwrap();
        let n = m.xi1.len();
        for k in 0..n {
            assert_eq!(m.xi1[k], -m.xi1[n - 1 - k]);
        }
    }

    #[test]
    fn bulk_elements_are_well_shaped() {
        let c = make_cell(0.1, FRAC_PI_4).unwrap();
        let m = build_mesh(&c, PI / 16.0, 8).unwrap();
        let ratio = m.bulk_aspect_ratio(c.delta_eps, LAYER_DEPTH * c.epsilon * 4.0);
        assert!(ratio < 4.0, "aspect ratio {ratio}");
    }

    #[test]
    fn json_export_has_fields() {
        let c = make_cell(0.5, FRAC_PI_4).unwrap();
        let m = build_mesh(&c, PI / 8.0, 2).unwrap();
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(v["nodes"].as_array().unwrap().len(), m.num_nodes());
        assert_eq!(v["elements"].as_array().unwrap().len(), m.elements.len());
        assert!(v["boundary"][0]["tag"].is_string());
    }

    #[test]
    fn oversized_h_is_rejected() {
        let c = make_cell(0.1, FRAC_PI_4).unwrap();
        assert!(matches!(build_mesh(&c, 2.0, 0), Err(GeometryError::DegenerateMesh(_))));
    }
}
