use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CellFamily, CellMask, LatticeSpec};

/// Families x placement templates x scales x (fractal order, tertiary) variants.
pub const CORPUS_GRID_SIZE: usize = 5 * 8 * 3 * 6;
pub const CORPUS_ROWS: usize = 3;
pub const CORPUS_COLS: usize = 12;
pub const CORPUS_SCALES: [f64; 3] = [1.0, 1.5, 2.0];
/// Relative half-range of the strut-width perturbation used past the grid.
pub const STRUT_JITTER: f64 = 0.15;

/// Where secondary cells are placed over the panel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementTemplate {
    All,
    CheckerEven,
    CheckerOdd,
    MiddleRow,
    OuterRows,
    EvenColumns,
    EveryThirdColumn,
    LeftHalf,
}

impl PlacementTemplate {
    pub const ALL: [PlacementTemplate; 8] = [
        PlacementTemplate::All,
        PlacementTemplate::CheckerEven,
        PlacementTemplate::CheckerOdd,
        PlacementTemplate::MiddleRow,
        PlacementTemplate::OuterRows,
        PlacementTemplate::EvenColumns,
        PlacementTemplate::EveryThirdColumn,
        PlacementTemplate::LeftHalf,
    ];

    pub fn mask(self, rows: usize, cols: usize) -> CellMask {
        CellMask::from_fn(rows, cols, |r, c| match self {
            PlacementTemplate::All => true,
            PlacementTemplate::CheckerEven => (r + c) % 2 == 0,
            PlacementTemplate::CheckerOdd => (r + c) % 2 == 1,
            PlacementTemplate::MiddleRow => r == rows / 2,
            PlacementTemplate::OuterRows => r == 0 || r + 1 == rows,
            PlacementTemplate::EvenColumns => c % 2 == 0,
            PlacementTemplate::EveryThirdColumn => c % 3 == 0,
            PlacementTemplate::LeftHalf => c < cols / 2,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TertiaryVariant {
    None,
    /// A honeycomb inside every secondary cell.
    Honeycomb,
}

/// The `i`-th grid point, enumerated with the variant index fastest.
fn grid_point(i: usize) -> LatticeSpec {
    let variant = i % 6;
    let scale = (i / 6) % 3;
    let template = (i / 18) % 8;
    let family = i / 144;
    let (rows, cols) = (CORPUS_ROWS, CORPUS_COLS);
    let placement = PlacementTemplate::ALL[template].mask(rows, cols);
    let mut spec = LatticeSpec::honeycomb(rows, cols).with_secondary(CellFamily::ALL[family], placement.clone());
    spec.scale = CORPUS_SCALES[scale];
    spec.fractal_order = (variant / 2) as u32;
    if variant % 2 == 1 {
        spec = spec.with_tertiary(CellFamily::Honeycomb, placement);
    }
    spec
}

/// Deterministic list of `n` pairwise distinct corpus specs. The first
/// [`CORPUS_GRID_SIZE`] follow the grid in order; further specs revisit the
/// grid with strut widths perturbed by a generator seeded from `seed`.
pub fn enumerate_dataset(seed: u64, n: usize) -> Vec<LatticeSpec> {
    let mut out = Vec::with_capacity(n);
    let mut seen = BTreeSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut i = 0usize;
    while out.len() < n {
        let mut spec = grid_point(i % CORPUS_GRID_SIZE);
        if i >= CORPUS_GRID_SIZE {
            let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
            spec.strut_mm *= 1.0 + STRUT_JITTER * (2.0 * u - 1.0);
        }
        if seen.insert(spec.canonical_hash()) {
            out.push(spec);
        }
        i += 1;
    }
    out
}
