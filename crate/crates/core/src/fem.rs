//! Piecewise-linear finite elements on the tensor meshes of [`crate::geometry`].

use thiserror::Error;

use crate::band::{BandError, BandMatrix, Scalar};
use crate::geometry::{BoundaryTag, Mesh};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error("no unconstrained nodes left")]
    EmptyConstraintSpace,
    #[error("vector of length {got} does not match {expected} unknowns")]
    Length { expected: usize, got: usize },
    #[error("linear solve failed: {0}")]
    Solve(#[from] BandError),
}

/// Numbering of the unconstrained nodes.
///
/// Rows are numbered bottom to top. Inside a row the periodic ring of
/// columns is visited in folded order `0, n−1, 1, n−2, …`, so ring
/// neighbours are at most two apart and the bandwidth stays close to one
/// row length.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub node_dof: Vec<Option<usize>>,
    /// Representative node of every unknown.
    pub dof_node: Vec<usize>,
    pub bandwidth: usize,
}

impl DofMap {
    pub fn new(mesh: &Mesh) -> Result<Self, FemError> {
        let n1 = mesh.n1();
        let ring = n1 - 1;
        let mut node_dof = vec![None; mesh.num_nodes()];
        let mut dof_node = Vec::new();
        for j in 0..mesh.n2() {
            for c in folded(ring) {
                let node = mesh.node_index(c, j);
                if mesh.dirichlet[node] {
                    continue;
                }
                node_dof[node] = Some(dof_node.len());
                dof_node.push(node);
            }
            let (left, right) = (mesh.node_index(0, j), mesh.node_index(ring, j));
            node_dof[right] = node_dof[left];
        }
        if dof_node.is_empty() {
            return Err(FemError::EmptyConstraintSpace);
        }
        let mut bandwidth = 0;
        for el in &mesh.elements {
            for &a in el {
                for &b in el {
                    if let (Some(p), Some(q)) = (node_dof[a], node_dof[b]) {
                        bandwidth = bandwidth.max(p.abs_diff(q));
                    }
                }
            }
        }
        Ok(Self { node_dof, dof_node, bandwidth })
    }

    pub fn len(&self) -> usize {
        self.dof_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dof_node.is_empty()
    }

    /// Nodal values; constrained nodes get zero.
    pub fn to_nodes<T: Scalar>(&self, u: &[T]) -> Vec<T> {
        self.node_dof.iter().map(|d| d.map_or(T::zero(), |k| u[k])).collect()
    }

    /// Restriction of nodal values to the unknowns.
    pub fn from_nodes<T: Scalar>(&self, values: &[T]) -> Vec<T> {
        self.dof_node.iter().map(|&n| values[n]).collect()
    }

    pub fn check<T>(&self, u: &[T]) -> Result<(), FemError> {
        if u.len() != self.len() {
            return Err(FemError::Length { expected: self.len(), got: u.len() });
        }
        Ok(())
    }
}

fn folded(ring: usize) -> impl Iterator<Item = usize> {
    (0..ring).map(move |k| if k % 2 == 0 { k / 2 } else { ring - 1 - k / 2 })
}

/// Area and constant gradients of the nodal basis on one triangle.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeom {
    pub nodes: [usize; 3],
    pub area: f64,
    pub dx: [f64; 3],
    pub dy: [f64; 3],
}

impl ElementGeom {
    pub fn new(mesh: &Mesh, nodes: [usize; 3]) -> Self {
        let [p0, p1, p2] = nodes.map(|n| mesh.nodes[n]);
        let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        let dx = [p1[1] - p2[1], p2[1] - p0[1], p0[1] - p1[1]].map(|v| v / det);
        let dy = [p2[0] - p1[0], p0[0] - p2[0], p1[0] - p0[0]].map(|v| v / det);
        Self { nodes, area: 0.5 * det.abs(), dx, dy }
    }

    pub fn mass(&self, a: usize, b: usize) -> f64 {
        self.area / 12.0 * if a == b { 2.0 } else { 1.0 }
    }
}

/// Real building blocks of the fiber and Poisson matrices on the unknowns:
/// `s1 = (∂₁φ_b, ∂₁φ_a)`, `s2 = (∂₂φ_b, ∂₂φ_a)`, `m = (φ_b, φ_a)` and
/// `skew = C − Cᵀ` with `C_ab = (∂₁φ_b, φ_a)`; derivatives in mesh
/// coordinates.
#[derive(Debug, Clone)]
pub struct CellMatrices {
    pub dofs: DofMap,
    pub geom: Vec<ElementGeom>,
    pub s1: BandMatrix<f64>,
    pub s2: BandMatrix<f64>,
    pub m: BandMatrix<f64>,
    pub skew: BandMatrix<f64>,
    /// Row sums of `m`.
    pub lumped: Vec<f64>,
}

impl CellMatrices {
    pub fn assemble(mesh: &Mesh) -> Result<Self, FemError> {
        let dofs = DofMap::new(mesh)?;
        let n = dofs.len();
        let bw = dofs.bandwidth;
        let mut s1 = BandMatrix::zeros(n, bw);
        let mut s2 = BandMatrix::zeros(n, bw);
        let mut m = BandMatrix::zeros(n, bw);
        let mut skew = BandMatrix::zeros(n, bw);
        let geom: Vec<ElementGeom> = mesh.elements.iter().map(|&el| ElementGeom::new(mesh, el)).collect();
        for g in &geom {
            for a in 0..3 {
                let Some(p) = dofs.node_dof[g.nodes[a]] else { continue };
                for b in 0..3 {
                    let Some(q) = dofs.node_dof[g.nodes[b]] else { continue };
                    s1.add(p, q, g.area * g.dx[a] * g.dx[b]);
                    s2.add(p, q, g.area * g.dy[a] * g.dy[b]);
                    m.add(p, q, g.mass(a, b));
                    skew.add(p, q, g.area / 3.0 * (g.dx[b] - g.dx[a]));
                }
            }
        }
        let lumped = (0..n).map(|i| (0..n.min(i + bw + 1)).skip(i.saturating_sub(bw)).map(|j| m.get(i, j)).sum()).collect();
        Ok(Self { dofs, geom, s1, s2, m, skew, lumped })
    }

    pub fn len(&self) -> usize {
        self.dofs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dofs.is_empty()
    }

    pub fn mass<T: Scalar>(&self) -> BandMatrix<T> {
        self.m.map(T::re)
    }

    pub fn mass_norm<T: Scalar>(&self, u: &[T]) -> f64 {
        self.m.map(T::re).form(u, u).real().max(0.0).sqrt()
    }

    /// Element-wise `(∫|i∂₁u − τu|², ∫|∂₂u|²)`. Every element adds a
    /// non-negative term, so small energies are not lost to cancellation.
    pub fn energies<T: Scalar>(&self, u: &[T], tau: f64) -> (f64, f64) {
        let nodal = self.dofs.to_nodes(u);
        let i_unit = T::cplx(0.0, 1.0);
        let mut e1 = 0.0;
        let mut e2 = 0.0;
        for g in &self.geom {
            let v = g.nodes.map(|n| nodal[n]);
            let g1 = v[0] * T::re(g.dx[0]) + v[1] * T::re(g.dx[1]) + v[2] * T::re(g.dx[2]);
            let g2 = v[0] * T::re(g.dy[0]) + v[1] * T::re(g.dy[1]) + v[2] * T::re(g.dy[2]);
            e2 += g.area * g2.mag2();
            if tau == 0.0 {
                e1 += g.area * g1.mag2();
            } else {
                let w = v.map(|x| i_unit * g1 - T::re(tau) * x);
                let sum = w[0] + w[1] + w[2];
                e1 += g.area / 12.0 * (w[0].mag2() + w[1].mag2() + w[2].mag2() + sum.mag2());
            }
        }
        (e1, e2)
    }
}

/// Solution of `−Δu = f` on a half-strip mesh with `u = g_D` on the window,
/// `−∂u/∂ξ₂ = flux` on the Neumann part of the bottom, `u = 0` on the cap
/// and periodic sides. `source` holds nodal values of `f`.
pub fn poisson_solve(mesh: &Mesh, source: &[f64], window_value: f64, flux: f64) -> Result<Vec<f64>, FemError> {
    let cm = CellMatrices::assemble(mesh)?;
    let dofs = &cm.dofs;
    let k = BandMatrix::combine(&[(1.0, &cm.s1), (1.0, &cm.s2)]);
    let mut rhs = vec![0.0; dofs.len()];
    let bottom = |n: usize| mesh.nodes[n][1] == 0.0;
    let lift = |n: usize| if mesh.dirichlet[n] && bottom(n) { window_value } else { 0.0 };
    for g in &cm.geom {
        for a in 0..3 {
            let Some(p) = dofs.node_dof[g.nodes[a]] else { continue };
            for b in 0..3 {
                let nb = g.nodes[b];
                rhs[p] += g.mass(a, b) * source[nb];
                if dofs.node_dof[nb].is_none() {
                    let kab = g.area * (g.dx[a] * g.dx[b] + g.dy[a] * g.dy[b]);
                    rhs[p] -= kab * lift(nb);
                }
            }
        }
    }
    for e in mesh.boundary.iter().filter(|e| e.tag == BoundaryTag::NeumannSegment) {
        let [p, q] = e.edge;
        let len = (mesh.nodes[p][0] - mesh.nodes[q][0]).abs();
        for n in [p, q] {
            if let Some(d) = dofs.node_dof[n] {
                rhs[d] += 0.5 * flux * len;
            }
        }
    }
    let u = k.factor()?.solve(&rhs);
    let mut nodal = dofs.to_nodes(&u);
    for (n, v) in nodal.iter_mut().enumerate() {
        if dofs.node_dof[n].is_none() {
            *v = lift(n);
        }
    }
    Ok(nodal)
}
