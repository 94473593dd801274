use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::builder::{Builder, MERGE_TOL_MM};
use super::cell::{build_unit_cell, hexagon, Fragment};
use super::{
    apply_insert_pattern, BeamGraph, CellFamily, CellInfo, EdgeKind, InnerCell, LatticeSpec, Point,
    MIN_COLS,
};
use crate::math;
use crate::{Error, Result};

/// Nested cell circumradius as a fraction of the host cell's inradius.
pub const DEFAULT_FIT_RATIO: f64 = 0.5;

/// Scale-to-inscribe rule for nesting one cell inside another.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fit {
    pub ratio: f64,
}

impl Default for Fit {
    fn default() -> Self {
        Fit { ratio: DEFAULT_FIT_RATIO }
    }
}

impl Fit {
    pub fn new(ratio: f64) -> Self {
        Fit { ratio }
    }

    fn check(self) -> Result<()> {
        if !(self.ratio > 0.0) || !self.ratio.is_finite() {
            return Err(Error::validation(format!("fit ratio must be positive, got {}", self.ratio)));
        }
        if self.ratio > 1.0 {
            return Err(Error::validation(format!(
                "nested cell does not fit: circumradius is {} x the host inradius",
                self.ratio
            )));
        }
        Ok(())
    }
}

/// Layout and section parameters of a tessellated panel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tiling {
    pub rows: usize,
    pub cols: usize,
    pub side_mm: f64,
    pub frame_mm: f64,
    pub strut_mm: f64,
    pub thickness_mm: f64,
    /// Permit fewer than [`MIN_COLS`] columns.
    pub allow_narrow: bool,
}

impl Tiling {
    pub fn new(rows: usize, cols: usize, frame_mm: f64) -> Self {
        Tiling {
            rows,
            cols,
            side_mm: super::DEFAULT_SIDE_MM,
            frame_mm,
            strut_mm: super::DEFAULT_STRUT_MM,
            thickness_mm: super::DEFAULT_THICKNESS_MM,
            allow_narrow: false,
        }
    }

    pub fn from_spec(spec: &LatticeSpec) -> Self {
        Tiling {
            rows: spec.rows,
            cols: spec.cols,
            side_mm: spec.side_mm,
            frame_mm: spec.frame_mm,
            strut_mm: spec.strut_mm,
            thickness_mm: spec.thickness_mm,
            allow_narrow: false,
        }
    }

    fn check(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::validation("panel needs at least one row and column"));
        }
        if self.cols < MIN_COLS && !self.allow_narrow {
            return Err(Error::validation(format!(
                "panel has {} columns; at least {MIN_COLS} are required",
                self.cols
            )));
        }
        for v in [self.side_mm, self.frame_mm, self.strut_mm, self.thickness_mm] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::validation("tiling dimensions must be positive"));
            }
        }
        Ok(())
    }

    /// Centre of cell `(row, col)`; odd columns sit half a row higher.
    pub fn center(&self, row: usize, col: usize) -> Point {
        let s = self.side_mm;
        let h = math::sqrt(3.0) * s;
        let shift = if col % 2 == 1 { 0.5 * h } else { 0.0 };
        Point::new(1.5 * s * col as f64, h * row as f64 + shift)
    }
}

/// Pending connector from a nested-cell extreme to the midpoint of a host
/// edge.
struct Connector {
    from: usize,
    host_edge: usize,
}

/// Inner-cell vertices on the far left and far right. Ties go to the larger
/// y, then to the lower index.
fn extremes(pts: &[Point], ids: &[usize]) -> [usize; 2] {
    let pick = |sign: f64| {
        let mut best = ids[0];
        for &i in &ids[1..] {
            let (p, q) = (pts[i], pts[best]);
            let dx = sign * (p.x - q.x);
            if dx > MERGE_TOL_MM || (dx.abs() <= MERGE_TOL_MM && p.y > q.y + MERGE_TOL_MM) {
                best = i;
            }
        }
        best
    };
    [pick(-1.0), pick(1.0)]
}

/// Host edge whose midpoint is nearest `p`, same tie rule as [`extremes`].
fn nearest_midpoint(b: &Builder, p: Point, host: &[usize]) -> Option<usize> {
    let mut best: Option<(usize, f64, f64)> = None;
    for &e in host {
        let m = b.nodes[b.edges[e].a].mid(b.nodes[b.edges[e].b]);
        let d = m.dist(p);
        let better = match best {
            None => true,
            Some((_, bd, by)) => d < bd - MERGE_TOL_MM || ((d - bd).abs() <= MERGE_TOL_MM && m.y > by + MERGE_TOL_MM),
        };
        if better {
            best = Some((e, d, m.y));
        }
    }
    best.map(|(e, _, _)| e)
}

/// Adds `frag` translated to `center` and queues its two connectors onto
/// `host`. Returns the builder ids of the fragment's nodes.
fn place_nested(
    b: &mut Builder,
    center: Point,
    frag: &Fragment,
    host: &[usize],
    width: f64,
    thickness: f64,
    pending: &mut Vec<Connector>,
) -> Result<Vec<usize>> {
    let ids: Vec<usize> =
        frag.nodes.iter().map(|p| b.node(Point::new(center.x + p.x, center.y + p.y))).collect();
    for &(i, j, kind) in &frag.edges {
        b.edge(ids[i], ids[j], kind, width, thickness);
    }
    for from in extremes(&b.nodes, &ids) {
        let host_edge = nearest_midpoint(b, b.nodes[from], host)
            .ok_or_else(|| Error::Internal("host cell has no struts".into()))?;
        pending.push(Connector { from, host_edge });
    }
    Ok(ids)
}

/// Splits every targeted host edge once at its midpoint and draws the
/// connectors, each as two collinear struts through a mid-span node.
fn connect(b: &mut Builder, pending: &[Connector], width: f64, thickness: f64) {
    let mut mids: BTreeMap<usize, usize> = BTreeMap::new();
    for c in pending {
        let m = match mids.get(&c.host_edge) {
            Some(&m) => m,
            None => {
                let rec = b.edges[c.host_edge];
                let p = b.nodes[rec.a].mid(b.nodes[rec.b]);
                let m = b.split_edge(c.host_edge, p);
                mids.insert(c.host_edge, m);
                m
            }
        };
        let mid_span = b.nodes[c.from].mid(b.nodes[m]);
        let k = b.fresh_node(mid_span);
        b.edge(c.from, k, EdgeKind::Connector, width, thickness);
        b.edge(k, m, EdgeKind::Connector, width, thickness);
    }
}

fn builder_from(frag: &Fragment) -> (Builder, Vec<usize>) {
    let mut b = Builder::new();
    let ids: Vec<usize> = frag.nodes.iter().map(|&p| b.node(p)).collect();
    for &(i, j, kind) in &frag.edges {
        b.edge(ids[i], ids[j], kind, 1.0, 1.0);
    }
    (b, ids)
}

/// Scales `inner` so its circumradius is `fit.ratio` times the inradius of
/// `outer`.
fn fitted(outer_inradius: f64, inner: &Fragment, fit: Fit) -> Fragment {
    inner.scaled(fit.ratio * outer_inradius / inner.circumradius())
}

/// Nests `inner` concentrically inside `outer`, joined by two connectors
/// from the inner cell's left and right extremes to the nearest outer strut
/// midpoints.
pub fn interlace(outer: &Fragment, inner: &Fragment, fit: Fit) -> Result<Fragment> {
    fit.check()?;
    if inner.is_empty() {
        return Ok(outer.clone());
    }
    let inner = fitted(outer.inradius(), inner, fit);
    let (mut b, _) = builder_from(outer);
    let host: Vec<usize> = b.live_edges().filter(|(_, e)| e.kind == EdgeKind::Strut).map(|(i, _)| i).collect();
    let mut pending = Vec::new();
    let ids = place_nested(&mut b, Point::new(0.0, 0.0), &inner, &host, 1.0, 1.0, &mut pending)?;
    connect(&mut b, &pending, 1.0, 1.0);
    let (nodes, edges, map) = b.finish(&[]);
    Ok(Fragment {
        nodes,
        edges: edges.into_iter().map(|e| (e.a, e.b, e.kind)).collect(),
        inner: ids.iter().filter_map(|&i| map[i]).collect(),
    })
}

/// Appends the solid end frames. Each frame is a spine of width
/// `frame_mm` centred half a frame beyond the lattice, tied to every lattice
/// node near that end. Returns `(left spine, right spine)`.
fn add_frames(b: &mut Builder, t: &Tiling) -> (Vec<usize>, Vec<usize>) {
    let live: Vec<usize> = {
        let deg = b.degree();
        (0..b.nodes.len()).filter(|&i| deg[i] > 0).collect()
    };
    let (mut lo, mut hi) = (b.nodes[live[0]], b.nodes[live[0]]);
    for &i in &live {
        let p = b.nodes[i];
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    let band = 0.25 * t.side_mm;
    let side = |b: &mut Builder, edge_x: f64, sign: f64| {
        let spine_x = edge_x + sign * 0.5 * t.frame_mm;
        let boundary: Vec<usize> =
            live.iter().copied().filter(|&i| (b.nodes[i].x - edge_x).abs() <= band + MERGE_TOL_MM).collect();
        let mut ys: Vec<f64> = boundary.iter().map(|&i| b.nodes[i].y).chain([lo.y, hi.y]).collect();
        ys.sort_by(f64::total_cmp);
        ys.dedup_by(|a, b| (*a - *b).abs() <= MERGE_TOL_MM);
        let spine: Vec<usize> = ys.iter().map(|&y| b.node(Point::new(spine_x, y))).collect();
        for w in spine.windows(2) {
            b.edge(w[0], w[1], EdgeKind::Frame, t.frame_mm, t.thickness_mm);
        }
        for &i in &boundary {
            let y = b.nodes[i].y;
            let s = ys.iter().position(|&v| (v - y).abs() <= MERGE_TOL_MM).expect("spine covers boundary");
            b.edge(spine[s], i, EdgeKind::FrameLink, t.frame_mm, t.thickness_mm);
        }
        spine
    };
    let left = side(b, lo.x, -1.0);
    let right = side(b, hi.x, 1.0);
    (left, right)
}

struct RawCell {
    row: usize,
    col: usize,
    center: Point,
    inner: Option<Vec<usize>>,
}

fn finish_graph(b: Builder, t: &Tiling, cells: Vec<RawCell>, left: Vec<usize>, right: Vec<usize>) -> Result<BeamGraph> {
    let (nodes, edges, map) = b.finish(&[]);
    let remap = |ids: &[usize]| -> Vec<usize> { ids.iter().filter_map(|&i| map[i]).collect() };
    let left = remap(&left);
    let g = BeamGraph {
        nodes,
        edges,
        lumped_masses: Vec::new(),
        clamped_nodes: left.clone(),
        base_nodes: left,
        tip_nodes: remap(&right),
        cells: cells
            .into_iter()
            .map(|c| CellInfo {
                row: c.row,
                col: c.col,
                center: c.center,
                inner: c.inner.map(|ids| InnerCell { nodes: remap(&ids) }),
            })
            .collect(),
        rows: t.rows,
        cols: t.cols,
        frame_mm: t.frame_mm,
    };
    g.validate()?;
    if !g.is_connected() {
        return Err(Error::Internal(format!("panel has {} components", g.component_count())));
    }
    Ok(g)
}

fn tile_hexagons(b: &mut Builder, t: &Tiling) -> Vec<Point> {
    let hex = hexagon(t.side_mm);
    let mut centers = Vec::with_capacity(t.rows * t.cols);
    for r in 0..t.rows {
        for c in 0..t.cols {
            let o = t.center(r, c);
            let ids: Vec<usize> = hex.iter().map(|p| b.node(Point::new(o.x + p.x, o.y + p.y))).collect();
            for k in 0..6 {
                b.edge(ids[k], ids[(k + 1) % 6], EdgeKind::Strut, t.strut_mm, t.thickness_mm);
            }
            centers.push(o);
        }
    }
    b.dedupe_edges();
    centers
}

/// Tiles `cell` (an outer hexagon of side `t.side_mm`, optionally with nested
/// content) over the grid, merging shared walls, and appends the end
/// frames. The left frame is the clamped, driven base; the right frame
/// carries the response points.
pub fn tessellate(cell: &Fragment, t: &Tiling) -> Result<BeamGraph> {
    t.check()?;
    if cell.is_empty() {
        return Err(Error::validation("cannot tessellate an empty cell"));
    }
    let mut b = Builder::new();
    let mut cells = Vec::new();
    for r in 0..t.rows {
        for c in 0..t.cols {
            let o = t.center(r, c);
            let ids: Vec<usize> =
                cell.nodes.iter().map(|p| b.node(Point::new(o.x + p.x, o.y + p.y))).collect();
            for &(i, j, kind) in &cell.edges {
                b.edge(ids[i], ids[j], kind, t.strut_mm, t.thickness_mm);
            }
            let inner = (!cell.inner.is_empty()).then(|| cell.inner.iter().map(|&i| ids[i]).collect());
            cells.push(RawCell { row: r, col: c, center: o, inner });
        }
    }
    b.split_at_interior_nodes();
    b.dedupe_edges();
    let (left, right) = add_frames(&mut b, t);
    finish_graph(b, t, cells, left, right)
}

/// Nested content of one cell: the secondary cell with any tertiary cell
/// already interlaced, centred at the origin with circumradius 1. Also
/// returns the fragment indices of the innermost cell's vertices.
fn nested_unit(secondary: CellFamily, tertiary: Option<CellFamily>, fit: Fit) -> Result<(Fragment, Vec<usize>)> {
    let sec = unit_family_cell(secondary)?;
    match tertiary {
        None => {
            let all = (0..sec.nodes.len()).collect();
            Ok((sec, all))
        }
        Some(f) => {
            let ter = unit_family_cell(f)?;
            let frag = interlace(&sec, &ter, fit)?;
            let inner = frag.inner.clone();
            Ok((frag, inner))
        }
    }
}

fn unit_family_cell(f: CellFamily) -> Result<Fragment> {
    let order = if f == CellFamily::HierarchicalHoneycomb { 1 } else { 0 };
    let frag = build_unit_cell(f, 1.0, order)?;
    let r = frag.circumradius();
    Ok(frag.scaled(1.0 / r))
}

/// Builds the full panel described by `spec`, including inserts and scaling.
pub fn build_panel(spec: &LatticeSpec) -> Result<BeamGraph> {
    build_panel_opts(spec, false)
}

/// As [`build_panel`]; `allow_narrow` lifts the minimum column count.
pub fn build_panel_opts(spec: &LatticeSpec, allow_narrow: bool) -> Result<BeamGraph> {
    spec.validate(allow_narrow)?;
    let fit = Fit::new(spec.fit_ratio);
    fit.check()?;
    let mut t = Tiling::from_spec(spec);
    t.allow_narrow = allow_narrow;
    let (w, th) = (t.strut_mm, t.thickness_mm);

    let mut b = Builder::new();
    let centers = tile_hexagons(&mut b, &t);

    if spec.fractal_order > 0 {
        let mut junctions: Vec<usize> = (0..b.nodes.len()).collect();
        let mut side = t.side_mm;
        for _ in 0..spec.fractal_order {
            side *= super::cell::HIERARCHY_RATIO;
            junctions = b.replace_junctions(&junctions, side)?;
        }
    }

    let nested = match spec.secondary() {
        Some(s) => Some(nested_unit(s.family, spec.tertiary().map(|l| l.family), fit)?),
        None => None,
    };
    let host_inradius = t.side_mm * math::sqrt(3.0) / 2.0;
    let reach = t.side_mm * (1.0 + 1e-9);
    let mut pending = Vec::new();
    let mut cells = Vec::with_capacity(centers.len());
    // host edges are gathered before any nested content is added
    let mut host_sets = vec![Vec::new(); centers.len()];
    for (k, &o) in centers.iter().enumerate() {
        host_sets[k] = b
            .live_edges()
            .filter(|(_, e)| {
                e.kind == EdgeKind::Strut && b.nodes[e.a].dist(o) <= reach && b.nodes[e.b].dist(o) <= reach
            })
            .map(|(i, _)| i)
            .collect();
    }
    for (k, &o) in centers.iter().enumerate() {
        let (r, c) = (k / t.cols, k % t.cols);
        let mut inner = None;
        if let (Some(layer), Some((frag, innermost))) = (spec.secondary(), &nested) {
            if layer.placement.get(r, c) {
                let placed = frag.scaled(fit.ratio * host_inradius);
                let ter_here = spec.tertiary().is_some_and(|l| l.placement.get(r, c));
                let (placed, innermost) = if ter_here || spec.tertiary().is_none() {
                    (placed, innermost.clone())
                } else {
                    let (sec, all) = nested_unit(layer.family, None, fit)?;
                    (sec.scaled(fit.ratio * host_inradius), all)
                };
                let ids = place_nested(&mut b, o, &placed, &host_sets[k], w, th, &mut pending)?;
                inner = Some(innermost.iter().map(|&i| ids[i]).collect());
            }
        }
        cells.push(RawCell { row: r, col: c, center: o, inner });
    }
    connect(&mut b, &pending, w, th);

    let (left, right) = add_frames(&mut b, &t);
    let g = finish_graph(b, &t, cells, left, right)?;
    let g = apply_insert_pattern(&g, &spec.insert_pattern)?;
    scale_graph(&g, spec.scale)
}

/// Multiplies every coordinate by `s`; sections and topology are unchanged.
pub fn scale_graph(g: &BeamGraph, s: f64) -> Result<BeamGraph> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::validation(format!("scale factor must be positive, got {s}")));
    }
    let mut out = g.clone();
    if s == 1.0 {
        return Ok(out);
    }
    for p in &mut out.nodes {
        p.x *= s;
        p.y *= s;
    }
    for c in &mut out.cells {
        c.center.x *= s;
        c.center.y *= s;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{CellMask, InsertPattern};

    fn hex_cell() -> Fragment {
        build_unit_cell(CellFamily::Honeycomb, 9.5, 0).unwrap()
    }

    fn narrow(rows: usize, cols: usize) -> Tiling {
        let mut t = Tiling::new(rows, cols, 15.0);
        t.allow_narrow = true;
        t
    }

    #[test]
    fn interlace_with_empty_is_identity() {
        let h = hex_cell();
        assert_eq!(interlace(&h, &Fragment::empty(), Fit::default()).unwrap(), h);
    }

    #[test]
    fn interlace_node_count_matches_union_oracle() {
        let h = hex_cell();
        let star = build_unit_cell(CellFamily::Star, 9.5, 0).unwrap();
        let out = interlace(&h, &star, Fit::default()).unwrap();
        // union of the two vertex sets, plus a split node and a mid-span
        // node per connector
        let connectors = out.edges.iter().filter(|e| e.2 == EdgeKind::Connector).count() / 2;
        assert_eq!(connectors, 2);
        assert_eq!(out.nodes.len(), h.nodes.len() + star.nodes.len() + 2 * connectors);
        assert_eq!(out.nodes.len(), 22);
    }

    #[test]
    fn ls1_cell_is_concentric() {
        let h = hex_cell();
        let out = interlace(&h, &h, Fit::default()).unwrap();
        let (mut cx, mut cy) = (0.0, 0.0);
        for &i in &out.inner {
            cx += out.nodes[i].x;
            cy += out.nodes[i].y;
        }
        let n = out.inner.len() as f64;
        assert_eq!(out.inner.len(), 6);
        assert!((cx / n).abs() < 1e-9 && (cy / n).abs() < 1e-9);
        let r = out.nodes[out.inner[0]].dist(Point::new(0.0, 0.0));
        assert!((r - 0.5 * 9.5 * math::sqrt(3.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn oversized_inner_rejected() {
        let h = hex_cell();
        assert!(matches!(interlace(&h, &h, Fit::new(1.2)), Err(Error::Validation(_))));
    }

    #[test]
    fn single_cell_panel_is_connected() {
        let g = tessellate(&hex_cell(), &narrow(1, 1)).unwrap();
        assert!(g.is_connected());
        assert!(!g.clamped_nodes.is_empty() && !g.tip_nodes.is_empty());
        assert!(g.clamped_nodes.iter().all(|c| !g.tip_nodes.contains(c)));
    }

    #[test]
    fn adjacent_hexagons_share_two_nodes() {
        let g = tessellate(&hex_cell(), &narrow(1, 2)).unwrap();
        let lattice_nodes = g
            .nodes
            .iter()
            .enumerate()
            .filter(|(i, _)| !g.clamped_nodes.contains(i) && !g.tip_nodes.contains(i))
            .count();
        assert_eq!(lattice_nodes, 12 - 2);
    }

    #[test]
    fn narrow_panel_needs_override() {
        let t = Tiling::new(1, 3, 15.0);
        assert!(matches!(tessellate(&hex_cell(), &t), Err(Error::Validation(_))));
    }

    #[test]
    fn ls1_panel_size() {
        let g = build_panel(&LatticeSpec::ls1()).unwrap();
        let (w, h) = g.panel_size();
        assert!((w / 204.0 - 1.0).abs() < 0.05, "width {w}");
        assert!((h / 58.0 - 1.0).abs() < 0.05, "height {h}");
        assert!(g.is_connected());
        assert_eq!(g.cells.len(), 36);
        assert!(g.cells.iter().all(|c| c.inner.as_ref().is_some_and(|i| i.nodes.len() == 6)));
    }

    #[test]
    fn tessellated_ls1_cell_matches_build_panel() {
        let h = hex_cell();
        let cell = interlace(&h, &h, Fit::default()).unwrap();
        let a = tessellate(&cell, &Tiling::new(3, 12, 15.0)).unwrap();
        let b = build_panel(&LatticeSpec::ls1()).unwrap();
        assert_eq!(a.nodes.len(), b.nodes.len());
        assert_eq!(a.edges.len(), b.edges.len());
    }

    #[test]
    fn scale_identity_and_doubling() {
        let g = build_panel(&LatticeSpec::ls1()).unwrap();
        assert_eq!(scale_graph(&g, 1.0).unwrap(), g);
        let g2 = scale_graph(&g, 2.0).unwrap();
        let diag = |g: &BeamGraph| {
            let (lo, hi) = g.bbox().unwrap();
            lo.dist(hi)
        };
        assert!((diag(&g2) - 2.0 * diag(&g)).abs() < 1e-9);
        assert_eq!(g2.edges, g.edges);
        assert!(scale_graph(&g, 0.0).is_err());
        assert!(scale_graph(&g, -1.0).is_err());
    }

    #[test]
    fn scale_one_and_a_half_scales_pitch() {
        let g = build_panel(&LatticeSpec::ls1()).unwrap();
        let g15 = scale_graph(&g, 1.5).unwrap();
        let pitch = |g: &BeamGraph| g.cells[1].center.x - g.cells[0].center.x;
        assert!((pitch(&g15) - 1.5 * pitch(&g)).abs() < 1e-9);
        assert_eq!(g15.edges.len(), g.edges.len());
    }

    #[test]
    fn fractal_and_tertiary_panels_are_connected() {
        for order in 0..=2 {
            for fam in CellFamily::ALL {
                let mut spec = LatticeSpec::honeycomb(3, 8).with_secondary(fam, CellMask::full(3, 8));
                spec.fractal_order = order;
                spec = spec.with_tertiary(CellFamily::Honeycomb, CellMask::from_fn(3, 8, |r, c| (r + c) % 2 == 0));
                let g = build_panel(&spec).unwrap();
                assert!(g.is_connected(), "{fam:?} order {order}");
            }
        }
    }

    #[test]
    fn fractal_order_adds_edges() {
        let mut counts = Vec::new();
        for order in 0..=2 {
            let mut spec = LatticeSpec::honeycomb(3, 8);
            spec.fractal_order = order;
            counts.push(build_panel(&spec).unwrap().edges.len());
        }
        assert!(counts[0] < counts[1] && counts[1] < counts[2]);
    }

    #[test]
    fn insert_pattern_applied_by_build_panel() {
        let mut spec = LatticeSpec::ls1();
        spec.insert_pattern = InsertPattern::F;
        assert_eq!(build_panel(&spec).unwrap().lumped_masses.len(), 24);
    }
}
