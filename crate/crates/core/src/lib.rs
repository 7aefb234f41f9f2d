//! Band structure and boundary homogenization for the Laplacian on a strip
//! with frequently alternating Dirichlet and Neumann boundary conditions.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod band;
pub mod blayer;
pub mod corrector;
pub mod eigen;
pub mod error;
pub mod fem;
pub mod fiber;
pub mod geometry;
pub mod homogenized;
pub mod quadrature;
pub mod series;
pub mod validate;

pub use num_complex;

pub use blayer::{dirichlet_energy, eval_x, eval_y, grad_x, line_mean, HalfStripDomain};
pub use corrector::{leading_constant_fit, truncated_expansion, ExpansionOptions, ExpansionState};
pub use error::{Error, Result};
pub use fiber::{band_remainder_check, band_table, bottom, eigs, BandTable, FiberCell, FiberOperator};
pub use geometry::{build_mesh, build_mesh_with, make_cell, CellSpec, Mesh, MeshParams};
pub use homogenized::{cell_resolvent_gap, strip_resolvent_gap, ModeCutoff, PowerOptions};
pub use series::{extract_g, EpsSeries};
pub use validate::{validate, Check, CheckParams, Suite, ValidationReport};
