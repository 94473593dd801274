use alloc::format;

use serde::{Deserialize, Serialize};

use super::{BeamGraph, CellMask, Edge, EdgeKind, LumpedMass};
use crate::{Error, Result};

/// Mass of one steel hexagon insert.
pub const DEFAULT_INSERT_MASS_KG: f64 = 2.0e-3;

/// Arrangement of heavy inserts over the 3-row panel. Row 0 is the bottom
/// row, row 2 the top row.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertPattern {
    /// No inserts.
    A,
    /// Diamond with the symmetry broken at mid-length: middle row full,
    /// outer rows alternate with the phase flipped in the right half.
    B,
    /// Cross: outer rows full, middle row alternating.
    C,
    /// Right-pointing chevrons.
    D,
    /// Diamond: middle row full, outer rows alternating.
    E,
    /// Outer rows full, middle row empty.
    F,
    /// Outer rows full, middle row every third cell.
    G,
    /// Upward arrow: top row odd cells, bottom row even cells, middle row all
    /// but the end cells.
    H,
    /// Outer rows alternating, middle row every third cell.
    I,
    Custom(CellMask),
}

impl InsertPattern {
    pub const NAMED: [InsertPattern; 9] = [
        InsertPattern::A,
        InsertPattern::B,
        InsertPattern::C,
        InsertPattern::D,
        InsertPattern::E,
        InsertPattern::F,
        InsertPattern::G,
        InsertPattern::H,
        InsertPattern::I,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            InsertPattern::A => "a",
            InsertPattern::B => "b",
            InsertPattern::C => "c",
            InsertPattern::D => "d",
            InsertPattern::E => "e",
            InsertPattern::F => "f",
            InsertPattern::G => "g",
            InsertPattern::H => "h",
            InsertPattern::I => "i",
            InsertPattern::Custom(_) => "custom",
        }
    }

    /// The cell mask of this pattern on a `rows x cols` panel.
    pub fn mask(&self, rows: usize, cols: usize) -> Result<CellMask> {
        if let InsertPattern::Custom(m) = self {
            if m.rows() != rows || m.cols() != cols {
                return Err(Error::validation(format!(
                    "insert mask is {}x{}, panel is {rows}x{cols}",
                    m.rows(),
                    m.cols()
                )));
            }
            return Ok(m.clone());
        }
        if *self == InsertPattern::A {
            return Ok(CellMask::new(rows, cols));
        }
        if rows != 3 {
            return Err(Error::validation(format!(
                "named insert patterns are defined for 3-row panels, got {rows} rows"
            )));
        }
        let half = cols / 2;
        let pat = self.clone();
        Ok(CellMask::from_fn(rows, cols, move |r, c| {
            let outer = r != 1;
            match pat {
                InsertPattern::B => {
                    if outer {
                        (c % 2 == 0) != (c >= half)
                    } else {
                        true
                    }
                }
                InsertPattern::C => outer || c % 2 == 0,
                InsertPattern::D => {
                    if outer {
                        c % 3 == 0
                    } else {
                        c % 3 == 1
                    }
                }
                InsertPattern::E => !outer || c % 2 == 0,
                InsertPattern::F => outer,
                InsertPattern::G => outer || c % 3 == 0,
                InsertPattern::H => match r {
                    2 => c % 2 == 1,
                    0 => c % 2 == 0,
                    _ => c > 0 && c + 1 < cols,
                },
                InsertPattern::I => {
                    if outer {
                        c % 2 == 0
                    } else {
                        c % 3 == 0
                    }
                }
                InsertPattern::A | InsertPattern::Custom(_) => unreachable!(),
            }
        }))
    }

    pub(crate) fn encode(&self, put: &mut dyn FnMut(&[u8])) {
        match self {
            InsertPattern::Custom(m) => {
                put(b"custom");
                put(&(m.rows() as u32).to_le_bytes());
                put(&(m.cols() as u32).to_le_bytes());
                for r in 0..m.rows() {
                    for c in 0..m.cols() {
                        put(&[m.get(r, c) as u8]);
                    }
                }
            }
            named => put(named.label().as_bytes()),
        }
    }
}

/// Attaches one insert of the default mass to the nested cell of every
/// flagged cell.
pub fn apply_insert_pattern(g: &BeamGraph, pattern: &InsertPattern) -> Result<BeamGraph> {
    apply_insert_pattern_with(g, pattern, DEFAULT_INSERT_MASS_KG)
}

/// As [`apply_insert_pattern`] with an explicit insert mass. Each insert is a
/// centroid node tied to the nested cell's vertices by stiff links, carrying
/// the lumped mass.
pub fn apply_insert_pattern_with(g: &BeamGraph, pattern: &InsertPattern, mass_kg: f64) -> Result<BeamGraph> {
    if !(mass_kg > 0.0) {
        return Err(Error::validation("insert mass must be positive"));
    }
    let mask = pattern.mask(g.rows, g.cols)?;
    let mut out = g.clone();
    for cell in &g.cells {
        if !mask.get(cell.row, cell.col) {
            continue;
        }
        let Some(inner) = &cell.inner else {
            return Err(Error::validation(format!(
                "insert requested at cell ({}, {}) which has no nested cell",
                cell.row, cell.col
            )));
        };
        let section = g
            .edges
            .iter()
            .find(|e| inner.nodes.contains(&e.a) && inner.nodes.contains(&e.b))
            .map(|e| (e.width_mm, e.thickness_mm))
            .ok_or_else(|| Error::Internal("nested cell without struts".into()))?;
        let centroid = match super::builder::find_near(&out.nodes, cell.center) {
            Some(i) => i,
            None => {
                out.nodes.push(cell.center);
                out.nodes.len() - 1
            }
        };
        for &v in &inner.nodes {
            if v == centroid {
                continue;
            }
            out.edges.push(Edge {
                a: centroid,
                b: v,
                width_mm: section.0,
                thickness_mm: section.1,
                kind: EdgeKind::Insert,
            });
        }
        out.lumped_masses.push(LumpedMass { node: centroid, mass_kg });
    }
    Ok(out)
}
