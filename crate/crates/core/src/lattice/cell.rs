use alloc::format;
use alloc::vec::Vec;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use super::builder::Builder;
use super::{EdgeKind, Point};
use crate::math;
use crate::{Error, Result};

/// Valley radius of the six-pointed star relative to its tip radius.
pub(crate) const STAR_VALLEY_RATIO: f64 = 0.5;
/// Half-height of the re-entrant cell relative to its half-width.
pub(crate) const AUXETIC_HALF_HEIGHT: f64 = 0.8;
/// Depth of the re-entrant notch relative to the half-width.
pub(crate) const AUXETIC_REENTRY: f64 = 0.4;
/// Each hierarchical order shrinks the junction hexagons by this ratio.
pub(crate) const HIERARCHY_RATIO: f64 = 1.0 / 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellFamily {
    Honeycomb,
    Star,
    Circle,
    Auxetic,
    HierarchicalHoneycomb,
}

impl CellFamily {
    pub const ALL: [CellFamily; 5] = [
        CellFamily::Honeycomb,
        CellFamily::Star,
        CellFamily::Circle,
        CellFamily::Auxetic,
        CellFamily::HierarchicalHoneycomb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CellFamily::Honeycomb => "honeycomb",
            CellFamily::Star => "star",
            CellFamily::Circle => "circle",
            CellFamily::Auxetic => "auxetic",
            CellFamily::HierarchicalHoneycomb => "hierarchical_honeycomb",
        }
    }
}

impl FromStr for CellFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CellFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown cell family `{s}`")))
    }
}

/// A cell skeleton centred at the origin, before sections are assigned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fragment {
    pub nodes: Vec<Point>,
    pub edges: Vec<(usize, usize, EdgeKind)>,
    /// Nodes belonging to nested cells.
    pub inner: Vec<usize>,
}

impl Fragment {
    pub fn empty() -> Self {
        Fragment { nodes: Vec::new(), edges: Vec::new(), inner: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Largest node distance from the origin.
    pub fn circumradius(&self) -> f64 {
        self.nodes.iter().map(|p| math::hypot(p.x, p.y)).fold(0.0, f64::max)
    }

    /// Smallest distance from the origin to any strut.
    pub fn inradius(&self) -> f64 {
        self.edges
            .iter()
            .filter(|e| e.2 == EdgeKind::Strut)
            .map(|&(a, b, _)| point_segment_distance(Point::new(0.0, 0.0), self.nodes[a], self.nodes[b]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn scaled(&self, s: f64) -> Fragment {
        let mut f = self.clone();
        for p in &mut f.nodes {
            p.x *= s;
            p.y *= s;
        }
        f
    }

    fn from_polygon(points: Vec<Point>) -> Fragment {
        let n = points.len();
        let edges = (0..n).map(|i| (i, (i + 1) % n, EdgeKind::Strut)).collect();
        Fragment { nodes: points, edges, inner: Vec::new() }
    }

    pub(crate) fn from_builder(b: Builder) -> Fragment {
        let (nodes, edges, _) = b.finish(&[]);
        Fragment {
            nodes,
            edges: edges.into_iter().map(|e| (e.a, e.b, e.kind)).collect(),
            inner: Vec::new(),
        }
    }
}

pub(crate) fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    math::hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy))
}

/// Flat-top regular hexagon with circumradius `side`.
pub(crate) fn hexagon(side: f64) -> Vec<Point> {
    (0..6).map(|k| Point::polar(side, 60.0 * k as f64)).collect()
}

/// Closed skeleton of one cell of `family` with characteristic size
/// `side_mm` (the circumradius), centred at the origin.
pub fn build_unit_cell(family: CellFamily, side_mm: f64, fractal_order: u32) -> Result<Fragment> {
    if !(side_mm > 0.0) || !side_mm.is_finite() {
        return Err(Error::validation(format!("cell side must be positive, got {side_mm}")));
    }
    if fractal_order > 0 && family != CellFamily::HierarchicalHoneycomb {
        return Err(Error::validation(format!(
            "fractal order {fractal_order} requested for non-hierarchical family {}",
            family.name()
        )));
    }
    let s = side_mm;
    let frag = match family {
        CellFamily::Honeycomb => Fragment::from_polygon(hexagon(s)),
        CellFamily::Star => Fragment::from_polygon(
            (0..12)
                .map(|k| {
                    let r = if k % 2 == 0 { s } else { s * STAR_VALLEY_RATIO };
                    Point::polar(r, 30.0 * k as f64)
                })
                .collect(),
        ),
        CellFamily::Circle => Fragment::from_polygon((0..12).map(|k| Point::polar(s, 30.0 * k as f64)).collect()),
        CellFamily::Auxetic => {
            let h = s * AUXETIC_HALF_HEIGHT;
            let d = s * AUXETIC_REENTRY;
            Fragment::from_polygon(alloc::vec![
                Point::new(-s, h),
                Point::new(0.0, h - d),
                Point::new(s, h),
                Point::new(s, -h),
                Point::new(0.0, -h + d),
                Point::new(-s, -h),
            ])
        }
        CellFamily::HierarchicalHoneycomb => {
            let mut b = Builder::new();
            let ids: Vec<usize> = hexagon(s).into_iter().map(|p| b.node(p)).collect();
            for i in 0..6 {
                b.edge(ids[i], ids[(i + 1) % 6], EdgeKind::Strut, 1.0, 1.0);
            }
            let mut junctions = ids;
            let mut side = s;
            for _ in 0..fractal_order {
                side *= HIERARCHY_RATIO;
                junctions = b.replace_junctions(&junctions, side)?;
            }
            Fragment::from_builder(b)
        }
    };
    Ok(frag)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Edge/junction counts of the hierarchical construction derived only from
    /// the replacement rule: every junction becomes a hexagon (+6 edges), and
    /// each replaced junction of degree d leaves d new junctions behind.
    fn hierarchical_counts(order: u32) -> (usize, usize) {
        let (mut nodes, mut edges) = (6usize, 6usize);
        // order 1 replaces the six corners, each of degree 2
        let mut junctions: alloc::vec::Vec<usize> = alloc::vec![2; 6];
        for _ in 0..order {
            let mut next = alloc::vec::Vec::new();
            for &deg in &junctions {
                nodes += 5;
                edges += 6;
                next.extend(core::iter::repeat(3).take(deg));
            }
            junctions = next;
        }
        (nodes, edges)
    }

    #[test]
    fn honeycomb_is_a_hexagon() {
        let f = build_unit_cell(CellFamily::Honeycomb, 10.0, 0).unwrap();
        assert_eq!(f.nodes.len(), 6);
        assert_eq!(f.edges.len(), 6);
        for p in &f.nodes {
            assert!((math::hypot(p.x, p.y) - 10.0).abs() < 1e-12);
        }
    }

    #[test]
    fn star_has_twelve_vertices() {
        let f = build_unit_cell(CellFamily::Star, 10.0, 0).unwrap();
        assert_eq!(f.nodes.len(), 12);
        assert_eq!(f.edges.len(), 12);
    }

    #[test]
    fn hierarchical_counts_match_recursive_oracle() {
        let mut last = 0;
        for order in 0..=3 {
            let f = build_unit_cell(CellFamily::HierarchicalHoneycomb, 10.0, order).unwrap();
            let (n, e) = hierarchical_counts(order);
            assert_eq!((f.nodes.len(), f.edges.len()), (n, e), "order {order}");
            assert!(f.edges.len() > last);
            last = f.edges.len();
        }
    }

    #[test]
    fn order_one_edge_count_exceeds_order_zero() {
        let e0 = build_unit_cell(CellFamily::HierarchicalHoneycomb, 10.0, 0).unwrap().edges.len();
        let e1 = build_unit_cell(CellFamily::HierarchicalHoneycomb, 10.0, 1).unwrap().edges.len();
        assert!(e1 > e0);
    }

    #[test]
    fn fractal_order_rejected_for_plain_families() {
        for fam in [CellFamily::Honeycomb, CellFamily::Star, CellFamily::Circle, CellFamily::Auxetic] {
            assert!(matches!(build_unit_cell(fam, 10.0, 1), Err(Error::Validation(_))));
        }
    }

    #[test]
    fn unknown_family_is_a_config_error() {
        assert!(matches!("kagome".parse::<CellFamily>(), Err(Error::Config(_))));
        assert_eq!("star".parse::<CellFamily>().unwrap(), CellFamily::Star);
    }

    #[test]
    fn non_positive_side_rejected() {
        assert!(build_unit_cell(CellFamily::Honeycomb, 0.0, 0).is_err());
        assert!(build_unit_cell(CellFamily::Honeycomb, -1.0, 0).is_err());
    }

    #[test]
    fn cells_are_closed_and_centred() {
        for fam in CellFamily::ALL {
            let f = build_unit_cell(fam, 10.0, 0).unwrap();
            let mut deg = alloc::vec![0; f.nodes.len()];
            for &(a, b, _) in &f.edges {
                deg[a] += 1;
                deg[b] += 1;
            }
            assert!(deg.iter().all(|&d| d >= 2), "{fam:?} has a dangling node");
            let cx: f64 = f.nodes.iter().map(|p| p.x).sum::<f64>() / f.nodes.len() as f64;
            let cy: f64 = f.nodes.iter().map(|p| p.y).sum::<f64>() / f.nodes.len() as f64;
            assert!(cx.abs() < 1e-9 && cy.abs() < 1e-9, "{fam:?} not centred");
        }
    }
}
