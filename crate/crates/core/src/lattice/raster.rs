use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{build_panel, BeamGraph, Edge, EdgeKind, LatticeSpec, Point};
use crate::math;
use crate::{Error, Result};

pub const RASTER_H: usize = 128;
pub const RASTER_W: usize = 256;

/// Single-channel geometry image, row 0 at the top. Material is +1, void -1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryRaster {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl GeometryRaster {
    pub fn void(height: usize, width: usize) -> Self {
        GeometryRaster { height, width, values: vec![-1.0; height * width] }
    }

    /// Wraps row-major values, checking shape and range.
    pub fn from_values(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(format!("raster of {height}x{width} needs {} values, got {}", height * width, values.len())));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(Error::validation(format!("raster value {v} outside [-1, 1]")));
        }
        Ok(GeometryRaster { height, width, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.values[r * self.width + c]
    }

    fn set(&mut self, r: usize, c: usize, v: f32) {
        self.values[r * self.width + c] = v;
    }

    /// Fraction of pixels with a positive value.
    pub fn material_fraction(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().filter(|&&v| v > 0.0).count() as f64 / self.values.len() as f64
    }

    /// Left-right mirror image.
    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        for r in 0..self.height {
            for c in 0..self.width {
                out.set(r, c, self.get(r, self.width - 1 - c));
            }
        }
        out
    }

    /// Values thresholded at zero to exactly +1 / -1.
    pub fn binarized(&self) -> Self {
        let values = self.values.iter().map(|&v| if v > 0.0 { 1.0 } else { -1.0 }).collect();
        GeometryRaster { height: self.height, width: self.width, values }
    }

    /// Fraction of pixels whose sign differs between two rasters.
    pub fn sign_mismatch(&self, other: &Self) -> f64 {
        let n = self.values.len().max(1);
        self.values.iter().zip(&other.values).filter(|(a, b)| (**a > 0.0) != (**b > 0.0)).count() as f64 / n as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RasterOptions {
    pub height: usize,
    pub width: usize,
    /// Fixed resolution; `None` fits the graph to the raster.
    pub px_per_mm: Option<f64>,
}

impl Default for RasterOptions {
    fn default() -> Self {
        RasterOptions { height: RASTER_H, width: RASTER_W, px_per_mm: None }
    }
}

fn drawn(e: &Edge) -> bool {
    matches!(e.kind, EdgeKind::Strut | EdgeKind::Connector | EdgeKind::Frame)
}

/// Edges as drawn. Frame links are drawn at the width of the narrowest
/// lattice wall at their ends so the frames stay bonded to the lattice.
fn drawn_edges(g: &BeamGraph) -> Vec<Edge> {
    let mut wall = vec![f64::INFINITY; g.nodes.len()];
    for e in g.edges.iter().filter(|e| matches!(e.kind, EdgeKind::Strut | EdgeKind::Connector)) {
        wall[e.a] = wall[e.a].min(e.width_mm);
        wall[e.b] = wall[e.b].min(e.width_mm);
    }
    let mut out: Vec<Edge> = g.edges.iter().filter(|e| drawn(e)).copied().collect();
    for e in g.edges.iter().filter(|e| e.kind == EdgeKind::FrameLink) {
        let w = wall[e.a].min(wall[e.b]);
        if w.is_finite() {
            out.push(Edge { width_mm: w, ..*e });
        }
    }
    out
}

/// Frames are drawn as flat-ended strips, everything else with round ends.
fn flat_ends(e: &Edge) -> bool {
    e.kind == EdgeKind::Frame
}

/// Extent of the drawn material in mm: the node box grown by each strut's
/// half width.
fn material_bbox(g: &BeamGraph) -> Option<(Point, Point)> {
    let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut grow = |p: Point, rx: f64, ry: f64| {
        lo.x = lo.x.min(p.x - rx);
        lo.y = lo.y.min(p.y - ry);
        hi.x = hi.x.max(p.x + rx);
        hi.y = hi.y.max(p.y + ry);
    };
    for e in &drawn_edges(g) {
        let (a, b) = (g.nodes[e.a], g.nodes[e.b]);
        let hw = 0.5 * e.width_mm;
        if flat_ends(e) {
            let len = a.dist(b);
            if len == 0.0 {
                continue;
            }
            let (nx, ny) = (-(b.y - a.y) / len * hw, (b.x - a.x) / len * hw);
            for p in [a, b] {
                grow(Point::new(p.x + nx, p.y + ny), 0.0, 0.0);
                grow(Point::new(p.x - nx, p.y - ny), 0.0, 0.0);
            }
        } else {
            grow(a, hw, hw);
            grow(b, hw, hw);
        }
    }
    (lo.x <= hi.x).then_some((lo, hi))
}

/// Resolution at which `g` exactly fits a `height x width` raster.
fn fit_px_per_mm(g: &BeamGraph, height: usize, width: usize) -> Option<(f64, Point)> {
    let (lo, hi) = material_bbox(g)?;
    let (bw, bh) = ((hi.x - lo.x).max(1e-12), (hi.y - lo.y).max(1e-12));
    let ppm = (width as f64 / bw).min(height as f64 / bh);
    Some((ppm, lo.mid(hi)))
}

/// Millimetres per pixel of the fitted 3 x 12 reference panel (honeycomb in
/// honeycomb).
pub fn reference_mm_per_px() -> f64 {
    let g = build_panel(&LatticeSpec::ls1()).expect("reference panel builds");
    let (ppm, _) = fit_px_per_mm(&g, RASTER_H, RASTER_W).expect("reference panel is nonempty");
    1.0 / ppm
}

/// Draws the struts, connectors and frames of `g`, centred in the raster. A
/// pixel is material when its centre lies within `hw + 0.5` px of a segment,
/// where `hw = round(width * px_per_mm / 2)`. An empty graph gives an
/// all-void raster.
pub fn rasterize(g: &BeamGraph, opts: &RasterOptions) -> GeometryRaster {
    let mut out = GeometryRaster::void(opts.height, opts.width);
    let Some((fit_ppm, center)) = fit_px_per_mm(g, opts.height, opts.width) else {
        return out;
    };
    let ppm = opts.px_per_mm.unwrap_or(fit_ppm);
    let (h, w) = (opts.height as f64, opts.width as f64);
    let to_px = |p: Point| Point::new((p.x - center.x) * ppm + 0.5 * w, 0.5 * h - (p.y - center.y) * ppm);
    for e in &drawn_edges(g) {
        let (a, b) = (to_px(g.nodes[e.a]), to_px(g.nodes[e.b]));
        let reach = math::round(e.width_mm * ppm / 2.0) + 0.5;
        let flat = flat_ends(e);
        let c0 = math::floor(a.x.min(b.x) - reach - 1.0).max(0.0) as usize;
        let c1 = (math::ceil(a.x.max(b.x) + reach + 1.0).max(0.0) as usize).min(opts.width);
        let r0 = math::floor(a.y.min(b.y) - reach - 1.0).max(0.0) as usize;
        let r1 = (math::ceil(a.y.max(b.y) + reach + 1.0).max(0.0) as usize).min(opts.height);
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let len2 = dx * dx + dy * dy;
        for r in r0..r1 {
            for c in c0..c1 {
                let p = Point::new(c as f64 + 0.5, r as f64 + 0.5);
                let t = if len2 > 0.0 { ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 } else { 0.0 };
                if flat && !(0.0..=1.0).contains(&t) {
                    continue;
                }
                let t = t.clamp(0.0, 1.0);
                let d = math::hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy));
                if d <= reach {
                    out.set(r, c, 1.0);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{scale_graph, CellFamily, CellMask};

    fn similar(g: &BeamGraph, s: f64) -> BeamGraph {
        let mut out = scale_graph(g, s).unwrap();
        for e in &mut out.edges {
            e.width_mm *= s;
        }
        out
    }

    #[test]
    fn empty_graph_is_void() {
        let r = rasterize(&BeamGraph::default(), &RasterOptions::default());
        assert!(r.values().iter().all(|&v| v == -1.0));
        assert_eq!((r.height(), r.width()), (RASTER_H, RASTER_W));
    }

    #[test]
    fn deterministic() {
        let g = build_panel(&LatticeSpec::ls1()).unwrap();
        let a = rasterize(&g, &RasterOptions::default());
        let b = rasterize(&g, &RasterOptions::default());
        assert_eq!(a.values(), b.values());
    }

    /// Independent pixel-count oracle: a pixel is material iff some drawn
    /// segment passes within its threshold, evaluated by brute force over
    /// all edges for every pixel.
    #[test]
    fn ls1_material_fraction_matches_brute_force() {
        let g = build_panel(&LatticeSpec::ls1()).unwrap();
        let r = rasterize(&g, &RasterOptions::default());
        let ppm = 1.0 / reference_mm_per_px();
        let (lo, hi) = material_bbox(&g).unwrap();
        let c = lo.mid(hi);
        let edges = drawn_edges(&g);
        let mut count = 0usize;
        for row in 0..RASTER_H {
            for col in 0..RASTER_W {
                let x = c.x + (col as f64 + 0.5 - RASTER_W as f64 / 2.0) / ppm;
                let y = c.y - (row as f64 + 0.5 - RASTER_H as f64 / 2.0) / ppm;
                let hit = edges.iter().any(|e| {
                    let (a, b) = (g.nodes[e.a], g.nodes[e.b]);
                    let reach = (math::round(e.width_mm * ppm / 2.0) + 0.5) / ppm;
                    let (dx, dy) = (b.x - a.x, b.y - a.y);
                    let t = ((x - a.x) * dx + (y - a.y) * dy) / (dx * dx + dy * dy);
                    if flat_ends(e) && !(0.0..=1.0).contains(&t) {
                        return false;
                    }
                    let t = t.clamp(0.0, 1.0);
                    math::hypot(x - a.x - t * dx, y - a.y - t * dy) <= reach + 1e-9
                });
                count += hit as usize;
            }
        }
        let oracle = count as f64 / (RASTER_H * RASTER_W) as f64;
        let f = r.material_fraction();
        assert!((f - oracle).abs() < 2e-3, "{f} vs {oracle}");
        assert!(f > 0.05 && f < 0.60, "{f}");
    }

    #[test]
    fn reference_resolution() {
        let mmpp = reference_mm_per_px();
        assert!((mmpp - 205.75 / 256.0).abs() < 1e-3, "{mmpp}");
    }

    #[test]
    fn similarity_scaling_is_pixel_exact_for_powers_of_two() {
        let g = build_panel(&LatticeSpec::ls1()).unwrap();
        let a = rasterize(&g, &RasterOptions::default());
        for s in [0.5, 2.0, 4.0] {
            let b = rasterize(&similar(&g, s), &RasterOptions::default());
            assert_eq!(a.values(), b.values(), "s = {s}");
        }
        let b = rasterize(&similar(&g, 1.5), &RasterOptions::default());
        assert!(a.sign_mismatch(&b) <= 0.005);
    }

    #[test]
    fn symmetric_graph_mirrors() {
        let spec = LatticeSpec::honeycomb(3, 9).with_secondary(CellFamily::Star, CellMask::full(3, 9));
        let g = build_panel(&spec).unwrap();
        let r = rasterize(&g, &RasterOptions::default());
        assert!(r.sign_mismatch(&r.mirrored()) <= 0.01);
    }

    #[test]
    fn values_within_range() {
        let g = build_panel(&LatticeSpec::ls1()).unwrap();
        let r = rasterize(&g, &RasterOptions::default());
        assert!(r.values().iter().all(|v| v.is_finite() && v.abs() <= 1.0));
        let f = r.material_fraction();
        assert!(f > 0.0 && f < 1.0);
        assert!(GeometryRaster::from_values(2, 2, vec![0.0, 2.0, 0.0, 0.0]).is_err());
        assert!(GeometryRaster::from_values(2, 2, vec![0.0; 3]).is_err());
    }
}
