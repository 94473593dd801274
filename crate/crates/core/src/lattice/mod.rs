//! Interlaced metastructure geometry.
//!
//! A panel is a honeycomb tessellation (flat-top hexagons) whose cells may host
//! a nested secondary cell, which may in turn host a tertiary cell. Solid
//! frames close both longitudinal ends; one frame is the clamped, driven base
//! and the other carries the response points.

mod builder;
mod cell;
mod corpus;
mod insert;
mod panel;
mod pixel;
mod raster;
mod spec;

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

pub use cell::{build_unit_cell, CellFamily, Fragment};
pub use corpus::{enumerate_dataset, PlacementTemplate, TertiaryVariant, CORPUS_GRID_SIZE};
pub use insert::{apply_insert_pattern, InsertPattern, DEFAULT_INSERT_MASS_KG};
pub use panel::{build_panel, build_panel_opts, interlace, scale_graph, tessellate, Fit, Tiling, DEFAULT_FIT_RATIO};
pub use pixel::{raster_to_graph, PixelFrameOptions};
pub use raster::{rasterize, reference_mm_per_px, GeometryRaster, RasterOptions, RASTER_H, RASTER_W};
pub use spec::{CellMask, InterlaceLayer, LatticeSpec, Level, PrimaryFamily};

/// Hexagon side of the primary honeycomb.
pub const DEFAULT_SIDE_MM: f64 = 9.5;
/// In-plane strut width (bending depth).
pub const DEFAULT_STRUT_MM: f64 = 1.2;
/// Out-of-plane panel thickness.
pub const DEFAULT_THICKNESS_MM: f64 = 5.0;
pub const DEFAULT_FRAME_MM: f64 = 15.0;
/// Below this many columns a panel does not behave as a periodic medium.
pub const MIN_COLS: usize = 7;

/// Planar point in millimetres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(self, o: Point) -> f64 {
        crate::math::hypot(self.x - o.x, self.y - o.y)
    }

    pub fn mid(self, o: Point) -> Point {
        Point::new(0.5 * (self.x + o.x), 0.5 * (self.y + o.y))
    }

    pub fn polar(r: f64, deg: f64) -> Point {
        let t = deg * crate::math::PI / 180.0;
        Point::new(r * crate::math::cos(t), r * crate::math::sin(t))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    /// Lattice wall of a primary, secondary, or tertiary cell.
    Strut,
    /// Link between a nested cell and its host.
    Connector,
    /// Spine of a solid end frame.
    Frame,
    /// Bond between a frame spine and the lattice boundary.
    FrameLink,
    /// Stiff link carrying a lumped insert mass.
    Insert,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub width_mm: f64,
    pub thickness_mm: f64,
    pub kind: EdgeKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LumpedMass {
    pub node: usize,
    pub mass_kg: f64,
}

/// A nested cell placed inside a primary cell. `nodes` are the vertices of
/// the innermost nested cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerCell {
    pub nodes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellInfo {
    pub row: usize,
    pub col: usize,
    pub center: Point,
    pub inner: Option<InnerCell>,
}

/// Geometric skeleton of a panel.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BeamGraph {
    pub nodes: Vec<Point>,
    pub edges: Vec<Edge>,
    pub lumped_masses: Vec<LumpedMass>,
    pub clamped_nodes: Vec<usize>,
    pub base_nodes: Vec<usize>,
    pub tip_nodes: Vec<usize>,
    pub cells: Vec<CellInfo>,
    pub rows: usize,
    pub cols: usize,
    pub frame_mm: f64,
}

impl BeamGraph {
    /// Node bounding box as `(min, max)`.
    pub fn bbox(&self) -> Option<(Point, Point)> {
        let first = *self.nodes.first()?;
        let (mut lo, mut hi) = (first, first);
        for p in &self.nodes {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        Some((lo, hi))
    }

    /// Overall panel size in mm, counting the full depth of the end frames.
    pub fn panel_size(&self) -> (f64, f64) {
        match self.bbox() {
            Some((lo, hi)) => (hi.x - lo.x + self.frame_mm, hi.y - lo.y),
            None => (0.0, 0.0),
        }
    }

    pub fn edge_length(&self, e: &Edge) -> f64 {
        self.nodes[e.a].dist(self.nodes[e.b])
    }

    /// Number of connected components over nodes touched by at least one
    /// edge, plus isolated nodes.
    pub fn component_count(&self) -> usize {
        let mut uf = UnionFind::new(self.nodes.len());
        for e in &self.edges {
            uf.union(e.a, e.b);
        }
        (0..self.nodes.len()).filter(|&i| uf.find(i) == i).count()
    }

    pub fn is_connected(&self) -> bool {
        !self.nodes.is_empty() && self.component_count() == 1
    }

    /// Checks the structural invariants every finished graph must satisfy.
    pub fn validate(&self) -> crate::Result<()> {
        use crate::Error;
        use alloc::format;
        let n = self.nodes.len();
        for (i, e) in self.edges.iter().enumerate() {
            if e.a >= n || e.b >= n {
                return Err(Error::Internal(format!("edge {i} references a missing node")));
            }
            if e.a == e.b {
                return Err(Error::Internal(format!("edge {i} is a self loop")));
            }
            if !(e.width_mm > 0.0 && e.thickness_mm > 0.0) {
                return Err(Error::validation(format!("edge {i} has a non-positive section")));
            }
        }
        for set in [&self.clamped_nodes, &self.base_nodes, &self.tip_nodes] {
            if set.iter().any(|&i| i >= n) {
                return Err(Error::Internal("boundary set references a missing node".into()));
            }
        }
        if self.clamped_nodes.iter().any(|c| self.tip_nodes.contains(c)) {
            return Err(Error::validation("clamped and tip node sets overlap"));
        }
        if let Some((a, b)) = builder::find_duplicate(&self.nodes, builder::MERGE_TOL_MM) {
            return Err(Error::Internal(format!("duplicate nodes {a} and {b}")));
        }
        Ok(())
    }
}

/// Disjoint-set forest with path halving.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    pub fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins so the representative is deterministic
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}
