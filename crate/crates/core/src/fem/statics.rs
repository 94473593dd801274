use alloc::vec;
use alloc::vec::Vec;

use super::assembly::{assemble, DOF_PER_NODE};
use super::modal::factor_stiffness;
use super::skyline::Ordering;
use super::MaterialProps;
use crate::lattice::BeamGraph;
use crate::{Error, Result};

/// Reaction force (N) when the response frame is pushed `delta_mm` towards
/// the clamped base along x; the ratio to `delta_mm` is the panel's
/// longitudinal stiffness.
pub fn static_force_deflection(g: &BeamGraph, mat: &MaterialProps, delta_mm: f64) -> Result<f64> {
    if g.tip_nodes.is_empty() || g.clamped_nodes.is_empty() {
        return Err(Error::validation("static test needs clamped and loaded nodes"));
    }
    let mut sys = assemble(g, mat)?;
    let n = sys.n_dof();
    let mut u = vec![0.0; n];
    let loaded: Vec<usize> = g.tip_nodes.iter().map(|&t| DOF_PER_NODE * t).collect();
    for &d in &loaded {
        if sys.constrained[d] {
            return Err(Error::validation("loaded node is clamped"));
        }
        u[d] = -delta_mm * 1e-3;
        sys.constrained[d] = true;
    }
    let free = sys.free_dofs();
    let ord = Ordering::rcm(&sys.k, &free);
    let fact = factor_stiffness(&sys, &ord)?;
    let mut rhs = vec![0.0; ord.len()];
    for (p, &d) in ord.order.iter().enumerate() {
        rhs[p] = -sys.k.row(d).map(|(c, v)| v * u[c]).sum::<f64>();
    }
    fact.solve(&mut rhs);
    for (p, &d) in ord.order.iter().enumerate() {
        u[d] = rhs[p];
    }
    let reaction: f64 = loaded.iter().map(|&d| sys.k.row(d).map(|(c, v)| v * u[c]).sum::<f64>()).sum();
    Ok(-reaction)
}
