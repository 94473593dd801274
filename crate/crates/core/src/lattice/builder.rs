//! Incremental graph construction with coincident-node merging.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{Edge, EdgeKind, Point};
use crate::math;
use crate::{Error, Result};

/// Nodes closer than this are the same node.
pub(crate) const MERGE_TOL_MM: f64 = 1e-6;
const BUCKET_MM: f64 = 1e-5;

fn bucket(p: Point) -> (i64, i64) {
    (math::floor(p.x / BUCKET_MM) as i64, math::floor(p.y / BUCKET_MM) as i64)
}

/// Spatial hash over points for tolerance lookups.
#[derive(Default, Clone, Debug)]
pub(crate) struct PointIndex {
    buckets: BTreeMap<(i64, i64), Vec<usize>>,
}

impl PointIndex {
    pub fn find(&self, pts: &[Point], p: Point, tol: f64) -> Option<usize> {
        let (bx, by) = bucket(p);
        let mut best: Option<usize> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(ids) = self.buckets.get(&(bx + dx, by + dy)) {
                    for &i in ids {
                        if pts[i].dist(p) <= tol && best.map_or(true, |b| i < b) {
                            best = Some(i);
                        }
                    }
                }
            }
        }
        best
    }

    pub fn insert(&mut self, p: Point, id: usize) {
        self.buckets.entry(bucket(p)).or_default().push(id);
    }
}

/// Index of the first node within merge tolerance of `p`.
pub(crate) fn find_near(pts: &[Point], p: Point) -> Option<usize> {
    pts.iter().position(|q| q.dist(p) <= MERGE_TOL_MM)
}

/// Returns the first pair of nodes closer than `tol`, if any.
pub(crate) fn find_duplicate(pts: &[Point], tol: f64) -> Option<(usize, usize)> {
    let mut index = PointIndex::default();
    for (i, &p) in pts.iter().enumerate() {
        if let Some(j) = index.find(pts, p, tol) {
            return Some((j, i));
        }
        index.insert(p, i);
    }
    None
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct EdgeRec {
    pub a: usize,
    pub b: usize,
    pub kind: EdgeKind,
    pub width: f64,
    pub thickness: f64,
    pub alive: bool,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct Builder {
    pub nodes: Vec<Point>,
    pub edges: Vec<EdgeRec>,
    index: PointIndex,
}

impl Builder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Index of the node at `p`, creating it if no node lies within tolerance.
    pub fn node(&mut self, p: Point) -> usize {
        if let Some(i) = self.index.find(&self.nodes, p, MERGE_TOL_MM) {
            return i;
        }
        let id = self.nodes.len();
        self.nodes.push(p);
        self.index.insert(p, id);
        id
    }

    /// Appends a node without merging (used when the caller guarantees
    /// uniqueness, e.g. interior construction points).
    pub fn fresh_node(&mut self, p: Point) -> usize {
        let id = self.nodes.len();
        self.nodes.push(p);
        self.index.insert(p, id);
        id
    }

    pub fn edge(&mut self, a: usize, b: usize, kind: EdgeKind, width: f64, thickness: f64) -> usize {
        self.edges.push(EdgeRec { a, b, kind, width, thickness, alive: true });
        self.edges.len() - 1
    }

    pub fn live_edges(&self) -> impl Iterator<Item = (usize, &EdgeRec)> {
        self.edges.iter().enumerate().filter(|(_, e)| e.alive)
    }

    /// Splits edge `e` at point `p`; returns the split node.
    pub fn split_edge(&mut self, e: usize, p: Point) -> usize {
        let rec = self.edges[e];
        let m = self.node(p);
        if m == rec.a || m == rec.b {
            return m;
        }
        self.edges[e].alive = false;
        self.edge(rec.a, m, rec.kind, rec.width, rec.thickness);
        self.edge(m, rec.b, rec.kind, rec.width, rec.thickness);
        m
    }

    /// Splits every live edge at nodes lying strictly inside it, so that
    /// overlapping collinear edges from neighbouring cells coincide.
    pub fn split_at_interior_nodes(&mut self) {
        let n_edges = self.edges.len();
        for e in 0..n_edges {
            if !self.edges[e].alive {
                continue;
            }
            let rec = self.edges[e];
            let (pa, pb) = (self.nodes[rec.a], self.nodes[rec.b]);
            let (dx, dy) = (pb.x - pa.x, pb.y - pa.y);
            let len2 = dx * dx + dy * dy;
            let mut hits: Vec<(f64, usize)> = Vec::new();
            for (i, &p) in self.nodes.iter().enumerate() {
                if i == rec.a || i == rec.b {
                    continue;
                }
                let t = ((p.x - pa.x) * dx + (p.y - pa.y) * dy) / len2;
                if t <= 1e-9 || t >= 1.0 - 1e-9 {
                    continue;
                }
                if Point::new(pa.x + t * dx, pa.y + t * dy).dist(p) <= MERGE_TOL_MM {
                    hits.push((t, i));
                }
            }
            if hits.is_empty() {
                continue;
            }
            // all interior nodes are found in one pass, so new pieces need no revisit
            hits.sort_by(|x, y| x.0.total_cmp(&y.0));
            self.edges[e].alive = false;
            let mut prev = rec.a;
            for &(_, i) in &hits {
                self.edge(prev, i, rec.kind, rec.width, rec.thickness);
                prev = i;
            }
            self.edge(prev, rec.b, rec.kind, rec.width, rec.thickness);
        }
    }

    /// Drops duplicate edges (same unordered node pair), keeping the first.
    pub fn dedupe_edges(&mut self) {
        let mut seen = BTreeMap::new();
        for e in self.edges.iter_mut().filter(|e| e.alive) {
            let key = (e.a.min(e.b), e.a.max(e.b));
            if seen.insert(key, ()).is_some() {
                e.alive = false;
            }
        }
    }

    pub fn degree(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.nodes.len()];
        for (_, e) in self.live_edges() {
            deg[e.a] += 1;
            deg[e.b] += 1;
        }
        deg
    }

    /// Replaces each node in `junctions` by a hexagon of side `side`, oriented
    /// so that every incident edge meets a hexagon vertex. Returns the new
    /// hexagon vertices that carry a reattached edge (the next order's
    /// junctions).
    pub fn replace_junctions(&mut self, junctions: &[usize], side: f64) -> Result<Vec<usize>> {
        let mut next = Vec::new();
        for &p in junctions {
            let centre = self.nodes[p];
            let incident: Vec<usize> = self
                .live_edges()
                .filter(|(_, e)| e.a == p || e.b == p)
                .map(|(i, _)| i)
                .collect();
            if incident.is_empty() {
                continue;
            }
            let dir = |this: &Self, e: usize| {
                let rec = this.edges[e];
                let other = if rec.a == p { rec.b } else { rec.a };
                let q = this.nodes[other];
                math::atan2(q.y - centre.y, q.x - centre.x)
            };
            let reference = dir(self, incident[0]);
            let thickness = self.edges[incident[0]].thickness;
            let width = self.edges[incident[0]].width;
            let mut ring = [0usize; 6];
            for (k, slot) in ring.iter_mut().enumerate() {
                let t = reference + (k as f64) * math::PI / 3.0;
                let q = Point::new(centre.x + side * math::cos(t), centre.y + side * math::sin(t));
                *slot = self.fresh_node(q);
            }
            let mut used = [false; 6];
            for &e in &incident {
                let mut delta = dir(self, e) - reference;
                while delta < -1e-9 {
                    delta += 2.0 * math::PI;
                }
                let steps = math::round(delta / (math::PI / 3.0));
                let k = steps as usize % 6;
                if (delta - steps * math::PI / 3.0).abs() > 1e-6 {
                    return Err(Error::validation(format!(
                        "junction at ({:.3}, {:.3}) is not hexagonal",
                        centre.x, centre.y
                    )));
                }
                if used[k] {
                    return Err(Error::validation("two edges meet one junction vertex"));
                }
                used[k] = true;
                let rec = &mut self.edges[e];
                if rec.a == p {
                    rec.a = ring[k];
                } else {
                    rec.b = ring[k];
                }
                let (a, b) = (rec.a, rec.b);
                if self.nodes[a].dist(self.nodes[b]) <= MERGE_TOL_MM {
                    return Err(Error::validation("junction replacement collapsed an edge"));
                }
                next.push(ring[k]);
            }
            for k in 0..6 {
                self.edge(ring[k], ring[(k + 1) % 6], EdgeKind::Strut, width, thickness);
            }
        }
        Ok(next)
    }

    /// Removes dead edges and nodes without edges (except those in `keep`),
    /// returning the finished lists and the old-to-new node map.
    pub fn finish(mut self, keep: &[usize]) -> (Vec<Point>, Vec<Edge>, Vec<Option<usize>>) {
        self.dedupe_edges();
        let mut used = vec![false; self.nodes.len()];
        for (_, e) in self.live_edges() {
            used[e.a] = true;
            used[e.b] = true;
        }
        for &k in keep {
            used[k] = true;
        }
        let mut map = vec![None; self.nodes.len()];
        let mut nodes = Vec::new();
        for (i, &p) in self.nodes.iter().enumerate() {
            if used[i] {
                map[i] = Some(nodes.len());
                nodes.push(p);
            }
        }
        let edges = self
            .edges
            .iter()
            .filter(|e| e.alive)
            .map(|e| Edge {
                a: map[e.a].expect("live edge endpoint kept"),
                b: map[e.b].expect("live edge endpoint kept"),
                width_mm: e.width,
                thickness_mm: e.thickness,
                kind: e.kind,
            })
            .collect();
        (nodes, edges, map)
    }
}
