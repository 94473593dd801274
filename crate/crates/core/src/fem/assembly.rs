use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::sparse::{CsrMatrix, SymTriplets};
use super::MaterialProps;
use crate::lattice::BeamGraph;
use crate::math;
use crate::{Error, Result};

pub const DOF_PER_NODE: usize = 3;
/// Edges longer than this are split into several elements.
pub const DEFAULT_MAX_ELEMENT_MM: f64 = 5.0;
const MM: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AssemblyOptions {
    pub max_element_mm: f64,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions { max_element_mm: DEFAULT_MAX_ELEMENT_MM }
    }
}

/// Global stiffness and mass of a frame model. Node `i` owns DOFs
/// `3i` (u), `3i + 1` (v) and `3i + 2` (theta); graph nodes come first,
/// followed by the interior nodes created by edge subdivision.
#[derive(Clone, Debug)]
pub struct SystemMatrices {
    pub k: CsrMatrix,
    pub m: CsrMatrix,
    pub n_nodes: usize,
    /// Per-DOF flag: held by the clamped base.
    pub constrained: Vec<bool>,
    /// Longitudinal DOFs of the driven base nodes.
    pub base_dofs: Vec<usize>,
    /// Longitudinal DOFs of the response nodes.
    pub tip_dofs: Vec<usize>,
    /// Rigid unit translation along the excitation axis.
    pub excitation: Vec<f64>,
}

impl SystemMatrices {
    pub fn n_dof(&self) -> usize {
        self.n_nodes * DOF_PER_NODE
    }

    pub fn free_dofs(&self) -> Vec<usize> {
        (0..self.n_dof()).filter(|&i| !self.constrained[i]).collect()
    }
}

/// Local stiffness of a planar Euler-Bernoulli frame element, DOF order
/// (u1, v1, t1, u2, v2, t2).
pub fn element_stiffness(e: f64, a: f64, i: f64, l: f64) -> [[f64; 6]; 6] {
    let ea = e * a / l;
    let k1 = 12.0 * e * i / (l * l * l);
    let k2 = 6.0 * e * i / (l * l);
    let k3 = 4.0 * e * i / l;
    let k4 = 2.0 * e * i / l;
    [
        [ea, 0.0, 0.0, -ea, 0.0, 0.0],
        [0.0, k1, k2, 0.0, -k1, k2],
        [0.0, k2, k3, 0.0, -k2, k4],
        [-ea, 0.0, 0.0, ea, 0.0, 0.0],
        [0.0, -k1, -k2, 0.0, k1, -k2],
        [0.0, k2, k4, 0.0, -k2, k3],
    ]
}

/// Local consistent mass of the same element.
pub fn element_mass(rho: f64, a: f64, l: f64) -> [[f64; 6]; 6] {
    let m = rho * a * l;
    let ax = m / 6.0;
    let b = m / 420.0;
    [
        [2.0 * ax, 0.0, 0.0, ax, 0.0, 0.0],
        [0.0, 156.0 * b, 22.0 * l * b, 0.0, 54.0 * b, -13.0 * l * b],
        [0.0, 22.0 * l * b, 4.0 * l * l * b, 0.0, 13.0 * l * b, -3.0 * l * l * b],
        [ax, 0.0, 0.0, 2.0 * ax, 0.0, 0.0],
        [0.0, 54.0 * b, 13.0 * l * b, 0.0, 156.0 * b, -22.0 * l * b],
        [0.0, -13.0 * l * b, -3.0 * l * l * b, 0.0, -22.0 * l * b, 4.0 * l * l * b],
    ]
}

/// `T^T k T` for the element rotated by angle with cosine `c`, sine `s`.
fn rotate(k: &[[f64; 6]; 6], c: f64, s: f64) -> [[f64; 6]; 6] {
    let mut t = [[0.0; 6]; 6];
    for b in [0, 3] {
        t[b][b] = c;
        t[b][b + 1] = s;
        t[b + 1][b] = -s;
        t[b + 1][b + 1] = c;
        t[b + 2][b + 2] = 1.0;
    }
    let mut kt = [[0.0; 6]; 6];
    for i in 0..6 {
        for j in 0..6 {
            kt[i][j] = (0..6).map(|r| k[i][r] * t[r][j]).sum();
        }
    }
    let mut out = [[0.0; 6]; 6];
    for i in 0..6 {
        for j in 0..6 {
            out[i][j] = (0..6).map(|r| t[r][i] * kt[r][j]).sum();
        }
    }
    out
}

/// Assembles with default options.
pub fn assemble(g: &BeamGraph, mat: &MaterialProps) -> Result<SystemMatrices> {
    assemble_with(g, mat, &AssemblyOptions::default())
}

pub fn assemble_with(g: &BeamGraph, mat: &MaterialProps, opts: &AssemblyOptions) -> Result<SystemMatrices> {
    mat.validate()?;
    if g.nodes.is_empty() {
        return Err(Error::validation("graph has no nodes"));
    }
    if !g.is_connected() {
        return Err(Error::validation(format!("graph has {} components", g.component_count())));
    }
    if !(opts.max_element_mm > 0.0) {
        return Err(Error::validation("maximum element length must be positive"));
    }
    let mut coords: Vec<(f64, f64)> = g.nodes.iter().map(|p| (p.x * MM, p.y * MM)).collect();
    let mut elements: Vec<(usize, usize, f64, f64)> = Vec::new();
    for (idx, e) in g.edges.iter().enumerate() {
        let len = g.edge_length(e);
        if len <= 0.0 {
            return Err(Error::validation(format!("edge {idx} has zero length")));
        }
        if !(e.width_mm > 0.0 && e.thickness_mm > 0.0) {
            return Err(Error::validation(format!("edge {idx} has a non-positive section")));
        }
        let pieces = math::ceil(len / opts.max_element_mm - 1e-9).max(1.0) as usize;
        let (pa, pb) = (coords[e.a], coords[e.b]);
        let mut prev = e.a;
        for k in 1..=pieces {
            let next = if k == pieces {
                e.b
            } else {
                let t = k as f64 / pieces as f64;
                coords.push((pa.0 + t * (pb.0 - pa.0), pa.1 + t * (pb.1 - pa.1)));
                coords.len() - 1
            };
            elements.push((prev, next, e.width_mm * MM, e.thickness_mm * MM));
            prev = next;
        }
    }
    let n_nodes = coords.len();
    let n_dof = n_nodes * DOF_PER_NODE;
    let mut kt = SymTriplets::new(n_dof);
    let mut mt = SymTriplets::new(n_dof);
    for &(a, b, w, t) in &elements {
        let (dx, dy) = (coords[b].0 - coords[a].0, coords[b].1 - coords[a].1);
        let l = math::hypot(dx, dy);
        let (c, s) = (dx / l, dy / l);
        let area = w * t;
        let inertia = t * w * w * w / 12.0;
        let ke = rotate(&element_stiffness(mat.e, area, inertia, l), c, s);
        let me = rotate(&element_mass(mat.rho, area, l), c, s);
        let dofs = [3 * a, 3 * a + 1, 3 * a + 2, 3 * b, 3 * b + 1, 3 * b + 2];
        for i in 0..6 {
            for j in i..6 {
                kt.add(dofs[i], dofs[j], ke[i][j]);
                mt.add(dofs[i], dofs[j], me[i][j]);
            }
        }
    }
    for lm in &g.lumped_masses {
        if lm.node >= g.nodes.len() || !(lm.mass_kg > 0.0) {
            return Err(Error::validation("invalid lumped mass"));
        }
        mt.add(3 * lm.node, 3 * lm.node, lm.mass_kg);
        mt.add(3 * lm.node + 1, 3 * lm.node + 1, lm.mass_kg);
    }
    let mut constrained = vec![false; n_dof];
    for &c in &g.clamped_nodes {
        for d in 0..DOF_PER_NODE {
            constrained[3 * c + d] = true;
        }
    }
    let mut excitation = vec![0.0; n_dof];
    for i in 0..n_nodes {
        excitation[3 * i] = 1.0;
    }
    Ok(SystemMatrices {
        k: kt.build(),
        m: mt.build(),
        n_nodes,
        constrained,
        base_dofs: g.base_nodes.iter().map(|&i| 3 * i).collect(),
        tip_dofs: g.tip_nodes.iter().map(|&i| 3 * i).collect(),
        excitation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_panel, Edge, EdgeKind, LatticeSpec, LumpedMass, Point};

    pub(crate) fn bar(len_mm: f64, width_mm: f64) -> BeamGraph {
        BeamGraph {
            nodes: vec![Point::new(0.0, 0.0), Point::new(len_mm, 0.0)],
            edges: vec![Edge { a: 0, b: 1, width_mm, thickness_mm: 5.0, kind: EdgeKind::Strut }],
            clamped_nodes: vec![0],
            base_nodes: vec![0],
            tip_nodes: vec![1],
            ..Default::default()
        }
    }

    #[test]
    fn axial_entry_is_ea_over_l() {
        let mat = MaterialProps::pla();
        let opts = AssemblyOptions { max_element_mm: 100.0 };
        let s = assemble_with(&bar(20.0, 1.2), &mat, &opts).unwrap();
        let ea_l = mat.e * (1.2e-3 * 5e-3) / 20e-3;
        assert!((s.k.get(0, 0) - ea_l).abs() <= 1e-12 * ea_l);
        assert!((s.k.get(0, 3) + ea_l).abs() <= 1e-12 * ea_l);
        let ei = mat.e * 5e-3 * 1.2e-3f64.powi(3) / 12.0;
        assert!((s.k.get(1, 1) - 12.0 * ei / 20e-3f64.powi(3)).abs() < 1e-9 * s.k.get(1, 1));
    }

    #[test]
    fn rotated_element_matches_textbook() {
        let mat = MaterialProps::pla();
        let mut g = bar(20.0, 1.2);
        g.nodes[1] = Point::new(0.0, 20.0);
        let opts = AssemblyOptions { max_element_mm: 100.0 };
        let s = assemble_with(&g, &mat, &opts).unwrap();
        let ea_l = mat.e * (1.2e-3 * 5e-3) / 20e-3;
        // vertical element: axial stiffness appears on v
        assert!((s.k.get(1, 1) - ea_l).abs() <= 1e-9 * ea_l);
    }

    #[test]
    fn doubling_width_doubles_axial_stiffness() {
        let mat = MaterialProps::pla();
        let opts = AssemblyOptions { max_element_mm: 100.0 };
        let a = assemble_with(&bar(20.0, 1.2), &mat, &opts).unwrap();
        let b = assemble_with(&bar(20.0, 2.4), &mat, &opts).unwrap();
        assert!((b.k.get(3, 3) / a.k.get(3, 3) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn panel_matrices_exactly_symmetric() {
        let g = build_panel(&LatticeSpec::ls1()).unwrap();
        let s = assemble(&g, &MaterialProps::pla()).unwrap();
        assert_eq!(s.k.max_asymmetry(), 0.0);
        assert_eq!(s.m.max_asymmetry(), 0.0);
    }

    #[test]
    fn lumped_mass_touches_only_its_translations() {
        let mat = MaterialProps::pla();
        let mut g = bar(20.0, 1.2);
        let a = assemble(&g, &mat).unwrap();
        g.lumped_masses.push(LumpedMass { node: 1, mass_kg: 0.002 });
        let b = assemble(&g, &mat).unwrap();
        for i in 0..a.n_dof() {
            for j in 0..a.n_dof() {
                let d = b.m.get(i, j) - a.m.get(i, j);
                let expect = if i == j && (i == 3 || i == 4) { 0.002 } else { 0.0 };
                assert!((d - expect).abs() < 1e-15, "({i},{j}) {d}");
            }
        }
    }

    #[test]
    fn zero_length_and_disconnected_rejected() {
        let mat = MaterialProps::pla();
        let mut g = bar(20.0, 1.2);
        g.nodes[1] = g.nodes[0];
        assert!(matches!(assemble(&g, &mat), Err(Error::Validation(_))));
        let mut g = bar(20.0, 1.2);
        g.nodes.push(Point::new(50.0, 0.0));
        assert!(matches!(assemble(&g, &mat), Err(Error::Validation(_))));
    }

    #[test]
    fn long_edges_are_subdivided() {
        let s = assemble(&bar(20.0, 1.2), &MaterialProps::pla()).unwrap();
        assert_eq!(s.n_nodes, 5);
    }
}
