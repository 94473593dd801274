use alloc::vec;
use alloc::vec::Vec;

use super::{reference_mm_per_px, BeamGraph, Edge, EdgeKind, GeometryRaster, Point, UnionFind};
use crate::{Error, Result};

/// Converting a geometry image back into a frame model: material pixels
/// become nodes joined to their eight neighbours.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelFrameOptions {
    pub mm_per_px: f64,
    /// Side of the square pixel blocks merged into one node.
    pub coarsen: usize,
    pub thickness_mm: f64,
}

impl Default for PixelFrameOptions {
    fn default() -> Self {
        PixelFrameOptions {
            mm_per_px: reference_mm_per_px(),
            coarsen: 2,
            thickness_mm: super::DEFAULT_THICKNESS_MM,
        }
    }
}

/// Pixel-frame model of a raster. Blocks that are at least half material
/// become nodes; orthogonal neighbours are joined by struts one block wide,
/// diagonal neighbours by struts half a block wide. Only the component that
/// reaches both the leftmost and the rightmost material columns is kept; its
/// nodes in those columns are the base and the tip.
pub fn raster_to_graph(r: &GeometryRaster, opts: &PixelFrameOptions) -> Result<BeamGraph> {
    let k = opts.coarsen.max(1);
    if !(opts.mm_per_px > 0.0) || !(opts.thickness_mm > 0.0) {
        return Err(Error::validation("pixel frame needs positive resolution and thickness"));
    }
    let (h, w) = (r.height() / k, r.width() / k);
    let mut solid = vec![false; h * w];
    for br in 0..h {
        for bc in 0..w {
            let mut n = 0;
            for dr in 0..k {
                for dc in 0..k {
                    n += (r.get(br * k + dr, bc * k + dc) > 0.0) as usize;
                }
            }
            solid[br * w + bc] = 2 * n >= k * k;
        }
    }
    let cell_mm = k as f64 * opts.mm_per_px;
    let mut id = vec![usize::MAX; h * w];
    let mut nodes = Vec::new();
    for br in 0..h {
        for bc in 0..w {
            if solid[br * w + bc] {
                id[br * w + bc] = nodes.len();
                nodes.push(Point::new((bc as f64 + 0.5) * cell_mm, (h as f64 - br as f64 - 0.5) * cell_mm));
            }
        }
    }
    if nodes.is_empty() {
        return Err(Error::validation("raster contains no material"));
    }
    let mut edges = Vec::new();
    for br in 0..h {
        for bc in 0..w {
            let a = id[br * w + bc];
            if a == usize::MAX {
                continue;
            }
            let nbrs: [(isize, isize, f64); 4] = [(0, 1, 1.0), (1, 0, 1.0), (1, 1, 0.5), (1, -1, 0.5)];
            for (dr, dc, f) in nbrs {
                let (nr, nc) = (br as isize + dr, bc as isize + dc);
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                let b = id[nr as usize * w + nc as usize];
                if b != usize::MAX {
                    edges.push(Edge { a, b, width_mm: f * cell_mm, thickness_mm: opts.thickness_mm, kind: EdgeKind::Strut });
                }
            }
        }
    }

    let col_of = |p: Point| (p.x / cell_mm) as usize;
    let cmin = nodes.iter().map(|&p| col_of(p)).min().unwrap_or(0);
    let cmax = nodes.iter().map(|&p| col_of(p)).max().unwrap_or(0);
    if cmin == cmax {
        return Err(Error::validation("raster material spans a single column"));
    }
    let mut uf = UnionFind::new(nodes.len());
    for e in &edges {
        uf.union(e.a, e.b);
    }
    let left: Vec<usize> = (0..nodes.len()).filter(|&i| col_of(nodes[i]) == cmin).collect();
    let right: Vec<usize> = (0..nodes.len()).filter(|&i| col_of(nodes[i]) == cmax).collect();
    let roots: Vec<usize> = (0..nodes.len()).map(|i| uf.find(i)).collect();
    let root = left
        .iter()
        .map(|&i| roots[i])
        .find(|&ra| right.iter().any(|&j| roots[j] == ra))
        .ok_or_else(|| Error::validation("raster does not connect base to tip"))?;

    let mut map = vec![usize::MAX; nodes.len()];
    let mut kept = Vec::new();
    for i in 0..nodes.len() {
        if roots[i] == root {
            map[i] = kept.len();
            kept.push(nodes[i]);
        }
    }
    let edges: Vec<Edge> = edges
        .into_iter()
        .filter(|e| map[e.a] != usize::MAX)
        .map(|e| Edge { a: map[e.a], b: map[e.b], ..e })
        .collect();
    let pick = |set: &[usize]| -> Vec<usize> { set.iter().map(|&i| map[i]).filter(|&i| i != usize::MAX).collect() };
    let base = pick(&left);
    Ok(BeamGraph {
        nodes: kept,
        edges,
        lumped_masses: Vec::new(),
        clamped_nodes: base.clone(),
        base_nodes: base,
        tip_nodes: pick(&right),
        cells: Vec::new(),
        rows: 0,
        cols: 0,
        frame_mm: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_panel, rasterize, LatticeSpec, RasterOptions};

    #[test]
    fn ls1_raster_yields_connected_frame() {
        let g = build_panel(&LatticeSpec::ls1()).unwrap();
        let r = rasterize(&g, &RasterOptions::default());
        let p = raster_to_graph(&r, &PixelFrameOptions::default()).unwrap();
        assert!(p.is_connected());
        assert!(!p.base_nodes.is_empty() && !p.tip_nodes.is_empty());
        let (w, _) = p.panel_size();
        assert!((w - 205.75).abs() < 6.0, "{w}");
    }

    #[test]
    fn disconnected_raster_rejected() {
        let mut v = vec![-1.0f32; 16 * 32];
        for r in 0..16 {
            for c in [0, 1, 30, 31] {
                v[r * 32 + c] = 1.0;
            }
        }
        let r = GeometryRaster::from_values(16, 32, v).unwrap();
        let opts = PixelFrameOptions { mm_per_px: 1.0, coarsen: 2, thickness_mm: 5.0 };
        assert!(raster_to_graph(&r, &opts).is_err());
    }

    #[test]
    fn void_raster_rejected() {
        let r = GeometryRaster::void(8, 8);
        assert!(raster_to_graph(&r, &PixelFrameOptions { mm_per_px: 1.0, coarsen: 2, thickness_mm: 5.0 }).is_err());
    }
}
