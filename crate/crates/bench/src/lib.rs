//! Shared fixtures for the benchmarks.

use alterstrip::{build_mesh_with, make_cell, FiberCell, MeshParams};

pub const ETA: f64 = std::f64::consts::FRAC_PI_4;

pub fn cell(eps: f64, h: f64) -> FiberCell {
    let spec = make_cell(eps, ETA).expect("valid cell");
    let mesh = build_mesh_with(&spec, &MeshParams::new(h, 6).with_transverse(h / 4.0)).expect("mesh");
    FiberCell::new(spec, mesh).expect("fiber cell")
}

#[cfg(test)]
mod tests {
    #[test]
    fn fixture_builds() {
        assert!(super::cell(0.1, 0.4).dim() > 0);
    }
}
