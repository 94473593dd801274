use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{CellFamily, InsertPattern, MIN_COLS};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimaryFamily {
    Honeycomb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Secondary,
    Tertiary,
}

/// Boolean mask over the `rows x cols` cells of a panel. Row 0 is the bottom
/// row; serialized as one `0`/`1` string per row, bottom row first.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "Vec<String>", try_from = "Vec<String>")]
pub struct CellMask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl CellMask {
    pub fn new(rows: usize, cols: usize) -> Self {
        CellMask { rows, cols, bits: alloc::vec![false; rows * cols] }
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |_, _| true)
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::new(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.bits[r * cols + c] = f(r, c);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        r < self.rows && c < self.cols && self.bits[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.bits[r * self.cols + c] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &CellMask) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}

impl From<CellMask> for Vec<String> {
    fn from(m: CellMask) -> Self {
        (0..m.rows)
            .map(|r| (0..m.cols).map(|c| if m.get(r, c) { '1' } else { '0' }).collect())
            .collect()
    }
}

impl TryFrom<Vec<String>> for CellMask {
    type Error = Error;

    fn try_from(rows: Vec<String>) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.chars().count());
        let mut m = CellMask::new(rows.len(), cols);
        for (r, line) in rows.iter().enumerate() {
            if line.chars().count() != cols {
                return Err(Error::validation("ragged cell mask"));
            }
            for (c, ch) in line.chars().enumerate() {
                match ch {
                    '0' => {}
                    '1' => m.set(r, c, true),
                    _ => return Err(Error::validation(format!("bad cell mask character `{ch}`"))),
                }
            }
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterlaceLayer {
    pub level: Level,
    pub family: CellFamily,
    pub placement: CellMask,
}

/// Declarative description of one metastructure panel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub primary_family: PrimaryFamily,
    pub interlace: Vec<InterlaceLayer>,
    pub scale: f64,
    /// Hierarchical order of the primary honeycomb junctions.
    pub fractal_order: u32,
    pub rows: usize,
    pub cols: usize,
    pub frame_mm: f64,
    pub insert_pattern: InsertPattern,
    pub strut_mm: f64,
    pub side_mm: f64,
    pub thickness_mm: f64,
    /// Nested cell circumradius as a fraction of the host inradius.
    pub fit_ratio: f64,
}

impl LatticeSpec {
    /// Plain honeycomb panel with the default dimensions.
    pub fn honeycomb(rows: usize, cols: usize) -> Self {
        LatticeSpec {
            primary_family: PrimaryFamily::Honeycomb,
            interlace: Vec::new(),
            scale: 1.0,
            fractal_order: 0,
            rows,
            cols,
            frame_mm: super::DEFAULT_FRAME_MM,
            insert_pattern: InsertPattern::A,
            strut_mm: super::DEFAULT_STRUT_MM,
            side_mm: super::DEFAULT_SIDE_MM,
            thickness_mm: super::DEFAULT_THICKNESS_MM,
            fit_ratio: super::panel::DEFAULT_FIT_RATIO,
        }
    }

    /// Honeycomb interlaced with a concentric honeycomb in every cell on the
    /// 3 x 12 panel.
    pub fn ls1() -> Self {
        Self::honeycomb(3, 12).with_secondary(CellFamily::Honeycomb, CellMask::full(3, 12))
    }

    pub fn with_secondary(mut self, family: CellFamily, placement: CellMask) -> Self {
        self.interlace.push(InterlaceLayer { level: Level::Secondary, family, placement });
        self
    }

    pub fn with_tertiary(mut self, family: CellFamily, placement: CellMask) -> Self {
        self.interlace.push(InterlaceLayer { level: Level::Tertiary, family, placement });
        self
    }

    pub fn secondary(&self) -> Option<&InterlaceLayer> {
        self.interlace.iter().find(|l| l.level == Level::Secondary)
    }

    pub fn tertiary(&self) -> Option<&InterlaceLayer> {
        self.interlace.iter().find(|l| l.level == Level::Tertiary)
    }

    /// Checks every precondition of panel construction. `allow_narrow`
    /// lifts the minimum column count.
    pub fn validate(&self, allow_narrow: bool) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::validation("panel needs at least one row and column"));
        }
        if self.cols < MIN_COLS && !allow_narrow {
            return Err(Error::validation(format!(
                "panel has {} columns; at least {MIN_COLS} are required",
                self.cols
            )));
        }
        for (name, v) in [
            ("scale", self.scale),
            ("strut_mm", self.strut_mm),
            ("side_mm", self.side_mm),
            ("thickness_mm", self.thickness_mm),
            ("frame_mm", self.frame_mm),
            ("fit_ratio", self.fit_ratio),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::validation(format!("{name} must be positive and finite, got {v}")));
            }
        }
        let mut seen = [false; 2];
        for layer in &self.interlace {
            let slot = layer.level as usize;
            if seen[slot] {
                return Err(Error::validation("interlace levels must be unique"));
            }
            seen[slot] = true;
            if layer.placement.rows() != self.rows || layer.placement.cols() != self.cols {
                return Err(Error::validation(format!(
                    "placement mask is {}x{}, panel is {}x{}",
                    layer.placement.rows(),
                    layer.placement.cols(),
                    self.rows,
                    self.cols
                )));
            }
        }
        if let Some(t) = self.tertiary() {
            let Some(s) = self.secondary() else {
                return Err(Error::validation("tertiary layer without a secondary layer"));
            };
            if !t.placement.is_subset_of(&s.placement) {
                return Err(Error::validation("tertiary cells placed where no secondary cell exists"));
            }
        }
        Ok(())
    }

    /// Stable byte encoding used for hashing and equality across runs.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut put = |bytes: &[u8]| out.extend_from_slice(bytes);
        put(&[self.primary_family as u8]);
        put(&(self.interlace.len() as u32).to_le_bytes());
        for l in &self.interlace {
            put(&[l.level as u8, l.family as u8]);
            put(&(l.placement.rows() as u32).to_le_bytes());
            put(&(l.placement.cols() as u32).to_le_bytes());
            for r in 0..l.placement.rows() {
                for c in 0..l.placement.cols() {
                    put(&[l.placement.get(r, c) as u8]);
                }
            }
        }
        for v in [self.scale, self.frame_mm, self.strut_mm, self.side_mm, self.thickness_mm, self.fit_ratio] {
            put(&v.to_bits().to_le_bytes());
        }
        put(&self.fractal_order.to_le_bytes());
        put(&(self.rows as u32).to_le_bytes());
        put(&(self.cols as u32).to_le_bytes());
        self.insert_pattern.encode(&mut put);
        out
    }

    /// 64-bit FNV-1a hash of [`Self::canonical_bytes`].
    pub fn canonical_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.canonical_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}
