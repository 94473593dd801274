//! Post-processing for generated geometry and target spectra: raster
//! cleanup, notch target synthesis, and spectrum comparison.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::fem::{bin_freq, detect_bandgaps, Bandgap, Spectrum, DEFAULT_MIN_WIDTH_HZ, DEFAULT_THRESHOLD_DB, FREQ_BINS};
use crate::forward::SpectrumNorm;
use crate::lattice::GeometryRaster;
use crate::{math, Error, Result};

/// Structuring element for the morphological passes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Element {
    Square3,
    Cross3,
}

impl Element {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Element::Square3 => &[(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 0), (0, 1), (1, -1), (1, 0), (1, 1)],
            Element::Cross3 => &[(-1, 0), (0, -1), (0, 0), (0, 1), (1, 0)],
        }
    }
}

/// How opening and closing treat thin features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Morphology {
    /// Erosion/dilation pairs. Erases every feature thinner than the
    /// element, including one- and two-pixel struts.
    Plain,
    /// Opening keeps whole material components that contain a full copy of
    /// the element; closing fills void pockets that do not and are smaller
    /// than [`DenoiseOptions::max_hole_px`].
    Reconstruction,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiseOptions {
    pub threshold: f32,
    pub element: Element,
    pub morphology: Morphology,
    /// Material components with fewer pixels are erased.
    pub min_component_px: usize,
    /// Coreless void pockets with fewer pixels are filled.
    pub max_hole_px: usize,
    /// Passes are repeated until nothing changes, at most this many times.
    pub max_passes: usize,
}

impl Default for DenoiseOptions {
    fn default() -> Self {
        DenoiseOptions { threshold: 0.0, element: Element::Square3, morphology: Morphology::Reconstruction, min_component_px: 20, max_hole_px: 2, max_passes: 16 }
    }
}

struct Mask {
    h: usize,
    w: usize,
    on: Vec<bool>,
}

impl Mask {
    fn from_raster(r: &GeometryRaster, threshold: f32) -> Self {
        Mask { h: r.height(), w: r.width(), on: r.values().iter().map(|&v| v > threshold).collect() }
    }

    fn to_raster(&self) -> Result<GeometryRaster> {
        GeometryRaster::from_values(self.h, self.w, self.on.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect())
    }

    // Out-of-image neighbours are ignored, so borders neither erode nor grow.
    fn morph(&self, el: Element, erode: bool) -> Mask {
        let (h, w) = (self.h as isize, self.w as isize);
        let mut on = vec![false; self.on.len()];
        for r in 0..h {
            for c in 0..w {
                let mut hit = erode;
                for &(dr, dc) in el.offsets() {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr < 0 || cc < 0 || rr >= h || cc >= w {
                        continue;
                    }
                    let v = self.on[(rr * w + cc) as usize];
                    if erode && !v {
                        hit = false;
                        break;
                    }
                    if !erode && v {
                        hit = true;
                        break;
                    }
                }
                on[(r * w + c) as usize] = hit;
            }
        }
        Mask { h: self.h, w: self.w, on }
    }

    fn open(&self, el: Element) -> Mask {
        self.morph(el, true).morph(el, false)
    }

    fn close(&self, el: Element) -> Mask {
        self.morph(el, false).morph(el, true)
    }

    fn inverted(&self) -> Mask {
        Mask { h: self.h, w: self.w, on: self.on.iter().map(|v| !v).collect() }
    }

    /// Components of set pixels, 8-connected or 4-connected.
    fn components(&self, eight: bool) -> Vec<Vec<usize>> {
        let (h, w) = (self.h, self.w);
        let mut seen = vec![false; self.on.len()];
        let mut out = Vec::new();
        let mut stack = Vec::new();
        for start in 0..self.on.len() {
            if !self.on[start] || seen[start] {
                continue;
            }
            let mut comp = Vec::new();
            seen[start] = true;
            stack.push(start);
            while let Some(i) = stack.pop() {
                comp.push(i);
                let (r, c) = (i / w, i % w);
                for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                    for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                        let j = rr * w + cc;
                        if !eight && rr != r && cc != c {
                            continue;
                        }
                        if self.on[j] && !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
            out.push(comp);
        }
        out
    }

    /// Keeps the components that touch `marker` or have at least `keep_px`
    /// pixels.
    fn reconstruct(&self, marker: &Mask, eight: bool, keep_px: usize) -> Mask {
        let mut on = vec![false; self.on.len()];
        for comp in self.components(eight) {
            if comp.len() >= keep_px || comp.iter().any(|&i| marker.on[i]) {
                comp.into_iter().for_each(|i| on[i] = true);
            }
        }
        Mask { h: self.h, w: self.w, on }
    }

    fn open_rec(&self, el: Element) -> Mask {
        self.reconstruct(&self.morph(el, true), true, usize::MAX)
    }

    // Void is 4-connected, the dual of 8-connected material. Only pockets
    // smaller than `max_px` are filled so genuine small cells survive.
    fn close_rec(&self, el: Element, max_px: usize) -> Mask {
        let void = self.inverted();
        void.reconstruct(&void.morph(el, true), false, max_px).inverted()
    }

    fn drop_small(&mut self, min_px: usize) {
        for comp in self.components(true) {
            if comp.len() < min_px {
                comp.into_iter().for_each(|i| self.on[i] = false);
            }
        }
    }
}

/// Binarizes a generated raster and removes speckle.
///
/// Threshold, opening, closing, small-component removal; the sequence is
/// repeated to a fixed point so the result is idempotent. With the default
/// [`Morphology::Reconstruction`] intact struts of any width survive.
pub fn denoise_with(r: &GeometryRaster, opts: &DenoiseOptions) -> Result<GeometryRaster> {
    let mut m = Mask::from_raster(r, opts.threshold);
    for _ in 0..opts.max_passes.max(1) {
        let mut next = match opts.morphology {
            Morphology::Plain => m.open(opts.element).close(opts.element),
            Morphology::Reconstruction => m.open_rec(opts.element).close_rec(opts.element, opts.max_hole_px),
        };
        next.drop_small(opts.min_component_px);
        let done = next.on == m.on;
        m = next;
        if done {
            break;
        }
    }
    m.to_raster()
}

pub fn denoise(r: &GeometryRaster) -> Result<GeometryRaster> {
    denoise_with(r, &DenoiseOptions::default())
}

/// Material pixel count.
pub fn material_pixels(r: &GeometryRaster) -> usize {
    r.values().iter().filter(|&&v| v > 0.0).count()
}

/// A requested attenuation band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NotchSpec {
    pub f_lo: f64,
    pub f_hi: f64,
    pub depth_db: f64,
    pub edge_width_hz: f64,
}

pub const DEFAULT_EDGE_WIDTH_HZ: f64 = 100.0;

impl NotchSpec {
    pub fn new(f_lo: f64, f_hi: f64, depth_db: f64) -> Result<Self> {
        let n = NotchSpec { f_lo, f_hi, depth_db, edge_width_hz: DEFAULT_EDGE_WIDTH_HZ };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(10.0 <= self.f_lo && self.f_lo < self.f_hi && self.f_hi <= 10_000.0) {
            return Err(Error::validation(alloc::format!(
                "notch band [{}, {}] Hz must satisfy 10 <= f_lo < f_hi <= 10000",
                self.f_lo,
                self.f_hi
            )));
        }
        if !(self.depth_db < 0.0) {
            return Err(Error::validation("notch depth must be negative"));
        }
        if !(self.edge_width_hz >= 0.0) {
            return Err(Error::validation("notch edge width must be non-negative"));
        }
        Ok(())
    }

    /// Fraction of the full depth applied at `f`: one inside the band,
    /// raised-cosine to zero over `edge_width_hz` outside it.
    pub fn weight(&self, f: f64) -> f64 {
        let d = if f < self.f_lo {
            self.f_lo - f
        } else if f > self.f_hi {
            f - self.f_hi
        } else {
            return 1.0;
        };
        if d >= self.edge_width_hz {
            0.0
        } else {
            0.5 * (1.0 + math::cos(core::f64::consts::PI * d / self.edge_width_hz))
        }
    }

    fn support(&self) -> (f64, f64) {
        (self.f_lo - self.edge_width_hz, self.f_hi + self.edge_width_hz)
    }
}

/// Parses `f_lo:f_hi:depth_db`.
impl core::str::FromStr for NotchSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::validation(alloc::format!("malformed notch {s:?}; expected f_lo:f_hi:depth_db"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let v: Vec<f64> = parts.iter().map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_>>()?;
        NotchSpec::new(v[0], v[1], v[2])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Baseline {
    /// 0 dB everywhere.
    Flat,
    Curve(Spectrum),
}

/// Bin-wise mean of a set of spectra.
pub fn corpus_mean(spectra: &[Spectrum]) -> Result<Spectrum> {
    if spectra.is_empty() {
        return Err(Error::validation("corpus mean of no spectra"));
    }
    let mut acc = vec![0.0; FREQ_BINS];
    for s in spectra {
        for (a, v) in acc.iter_mut().zip(&s.amp_db) {
            *a += v;
        }
    }
    let n = spectra.len() as f64;
    Spectrum::new(acc.into_iter().map(|v| v / n).collect())
}

/// Baseline curve with each notch subtracted in dB. Notch supports,
/// including their tapers, must not overlap.
pub fn synthesize_target(baseline: &Baseline, notches: &[NotchSpec]) -> Result<Spectrum> {
    for n in notches {
        n.validate()?;
    }
    let mut order: Vec<&NotchSpec> = notches.iter().collect();
    order.sort_by(|a, b| a.f_lo.total_cmp(&b.f_lo));
    for w in order.windows(2) {
        if w[0].support().1 > w[1].support().0 {
            return Err(Error::validation(alloc::format!(
                "notches [{}, {}] and [{}, {}] overlap once their tapers are included",
                w[0].f_lo,
                w[0].f_hi,
                w[1].f_lo,
                w[1].f_hi
            )));
        }
    }
    let mut db = match baseline {
        Baseline::Flat => vec![0.0; FREQ_BINS],
        Baseline::Curve(s) => s.amp_db.clone(),
    };
    for (i, v) in db.iter_mut().enumerate() {
        let f = bin_freq(i);
        *v += notches.iter().map(|n| n.depth_db * n.weight(f)).sum::<f64>();
    }
    Spectrum::new(db)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumComparison {
    /// In normalized units.
    pub mse: f64,
    pub max_abs_db: f64,
    /// Intersection over union of the bins covered by detected gaps; 1 when
    /// neither spectrum has a gap.
    pub gap_iou: f64,
}

fn gap_bins(gaps: &[Bandgap]) -> Vec<bool> {
    (0..FREQ_BINS).map(|i| gaps.iter().any(|g| bin_freq(i) >= g.f_lo && bin_freq(i) <= g.f_hi)).collect()
}

pub fn gap_iou(a: &[Bandgap], b: &[Bandgap]) -> f64 {
    let (ma, mb) = (gap_bins(a), gap_bins(b));
    let inter = ma.iter().zip(&mb).filter(|(x, y)| **x && **y).count();
    let union = ma.iter().zip(&mb).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn compare_spectra_with(
    a: &Spectrum,
    b: &Spectrum,
    norm: &SpectrumNorm,
    threshold_db: f64,
    min_width_hz: f64,
) -> Result<SpectrumComparison> {
    if a.amp_db.len() != b.amp_db.len() {
        return Err(Error::validation("spectra lie on different frequency axes"));
    }
    let mse = crate::losses::mse(&norm.normalize(&a.amp_db), &norm.normalize(&b.amp_db))?;
    let max_abs_db = a.amp_db.iter().zip(&b.amp_db).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let ga = detect_bandgaps(a, threshold_db, min_width_hz);
    let gb = detect_bandgaps(b, threshold_db, min_width_hz);
    Ok(SpectrumComparison { mse, max_abs_db, gap_iou: gap_iou(&ga, &gb) })
}

pub fn compare_spectra(a: &Spectrum, b: &Spectrum, norm: &SpectrumNorm) -> Result<SpectrumComparison> {
    compare_spectra_with(a, b, norm, DEFAULT_THRESHOLD_DB, DEFAULT_MIN_WIDTH_HZ)
}

/// Deepest attenuation inside `[f_lo, f_hi]` relative to the median level
/// outside it, in dB (positive means attenuated).
pub fn in_band_attenuation(s: &Spectrum, f_lo: f64, f_hi: f64) -> Result<f64> {
    let (mut inside, mut outside) = (Vec::new(), Vec::new());
    for (i, &v) in s.amp_db.iter().enumerate() {
        let f = bin_freq(i);
        if f >= f_lo && f <= f_hi {
            inside.push(v);
        } else {
            outside.push(v);
        }
    }
    if inside.is_empty() || outside.is_empty() {
        return Err(Error::validation("band must split the frequency axis"));
    }
    let floor = inside.iter().copied().fold(f64::INFINITY, f64::min);
    let base = math::median(&mut outside);
    Ok(base - floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_panel, rasterize, LatticeSpec, RasterOptions};
    use proptest::prelude::*;

    fn ls1() -> GeometryRaster {
        rasterize(&build_panel(&LatticeSpec::ls1()).unwrap(), &RasterOptions::default())
    }

    #[test]
    fn corpus_material_fraction_changes_by_less_than_five_percent() {
        for s in crate::lattice::enumerate_dataset(0, 720).iter().step_by(5) {
            let r = rasterize(&build_panel(s).unwrap(), &RasterOptions::default());
            let (a, b) = (material_pixels(&r) as f64, material_pixels(&denoise(&r).unwrap()) as f64);
            assert!((a - b).abs() / a < 0.05, "{a} -> {b}");
        }
    }

    #[test]
    fn plain_morphology_erases_thin_struts() {
        let spec = crate::lattice::enumerate_dataset(0, 720).into_iter().find(|s| s.scale == 2.0).unwrap();
        let r = rasterize(&build_panel(&spec).unwrap(), &RasterOptions::default());
        let opts = DenoiseOptions { morphology: Morphology::Plain, ..Default::default() };
        assert!((material_pixels(&denoise_with(&r, &opts).unwrap()) as f64) < 0.8 * material_pixels(&r) as f64);
    }

    #[test]
    fn clean_corpus_raster_is_nearly_unchanged() {
        let r = ls1();
        let d = denoise(&r).unwrap();
        let (a, b) = (material_pixels(&r) as f64, material_pixels(&d) as f64);
        assert!((a - b).abs() / a < 0.05, "{a} -> {b}");
        assert_eq!(denoise(&d).unwrap(), d);
    }

    #[test]
    fn salt_noise_is_removed() {
        let clean = denoise(&ls1()).unwrap();
        let mut v = clean.values().to_vec();
        let mut init = crate::nn::Init::new(3);
        let mut placed = 0;
        while placed < 50 {
            let i = (init.unit() * v.len() as f64) as usize;
            let (r, c) = (i / 256, i % 256);
            // isolated: the whole 5x5 neighbourhood is void
            let clear = (r.saturating_sub(2)..(r + 3).min(128))
                .all(|rr| (c.saturating_sub(2)..(c + 3).min(256)).all(|cc| v[rr * 256 + cc] < 0.0));
            if clear {
                v[i] = 1.0;
                placed += 1;
            }
        }
        let noisy = GeometryRaster::from_values(128, 256, v).unwrap();
        assert_eq!(denoise(&noisy).unwrap(), clean);
    }

    #[test]
    fn small_components_are_removed() {
        let mut v = vec![-1.0f32; 64 * 64];
        for r in 10..14 {
            for c in 10..14 {
                v[r * 64 + c] = 1.0; // 16 px
            }
        }
        for r in 30..40 {
            for c in 30..40 {
                v[r * 64 + c] = 1.0;
            }
        }
        let d = denoise(&GeometryRaster::from_values(64, 64, v).unwrap()).unwrap();
        assert_eq!(material_pixels(&d), 100);
        assert!(d.get(11, 11) < 0.0 && d.get(35, 35) > 0.0);
    }

    #[test]
    fn notch_construction() {
        let flat = synthesize_target(&Baseline::Flat, &[]).unwrap();
        assert!(flat.amp_db.iter().all(|&v| v == 0.0));
        let base = Spectrum::from_fn(|f| -0.002 * f).unwrap();
        assert_eq!(synthesize_target(&Baseline::Curve(base.clone()), &[]).unwrap(), base);

        let n = NotchSpec::new(6000.0, 7000.0, -40.0).unwrap();
        let t = synthesize_target(&Baseline::Curve(base.clone()), &[n]).unwrap();
        for i in 0..FREQ_BINS {
            let f = bin_freq(i);
            let d = t.amp_db[i] - base.amp_db[i];
            if (6000.0..=7000.0).contains(&f) {
                assert!((d + 40.0).abs() < 1e-12);
            } else if !(5900.0..=7100.0).contains(&f) {
                assert_eq!(d, 0.0);
            } else {
                assert!(d <= 0.0 && d >= -40.0);
            }
        }
    }

    #[test]
    fn three_notches_round_trip_through_gap_detection() {
        let bands = [(1000.0, 1500.0), (4000.0, 4600.0), (8000.0, 9000.0)];
        let notches: Vec<_> = bands.iter().map(|&(a, b)| NotchSpec::new(a, b, -40.0).unwrap()).collect();
        let t = synthesize_target(&Baseline::Flat, &notches).unwrap();
        let gaps = detect_bandgaps(&t, DEFAULT_THRESHOLD_DB, DEFAULT_MIN_WIDTH_HZ);
        assert_eq!(gaps.len(), 3);
        for (g, &(a, b)) in gaps.iter().zip(&bands) {
            // the -20 dB crossing sits at mid-taper
            assert!((g.f_lo - (a - 50.0)).abs() <= 10.0 && (g.f_hi - (b + 50.0)).abs() <= 10.0, "{g:?}");
        }
    }

    #[test]
    fn overlapping_or_malformed_notches_are_rejected() {
        let a = NotchSpec::new(1000.0, 2000.0, -30.0).unwrap();
        let b = NotchSpec::new(2050.0, 3000.0, -30.0).unwrap();
        assert!(matches!(synthesize_target(&Baseline::Flat, &[a, b]), Err(Error::Validation(_))));
        assert!(NotchSpec::new(7000.0, 6000.0, -40.0).is_err());
        assert!(NotchSpec::new(6000.0, 7000.0, 5.0).is_err());
        assert!("6000:7000".parse::<NotchSpec>().is_err());
        assert!("a:7000:-40".parse::<NotchSpec>().is_err());
        assert_eq!("6000:7000:-40".parse::<NotchSpec>().unwrap(), NotchSpec::new(6000.0, 7000.0, -40.0).unwrap());
    }

    #[test]
    fn comparison_identities() {
        let norm = SpectrumNorm::default();
        let n1 = NotchSpec::new(2000.0, 3000.0, -40.0).unwrap();
        let n2 = NotchSpec::new(6000.0, 7000.0, -40.0).unwrap();
        let a = synthesize_target(&Baseline::Flat, &[n1]).unwrap();
        let b = synthesize_target(&Baseline::Flat, &[n2]).unwrap();
        let same = compare_spectra(&a, &a, &norm).unwrap();
        assert_eq!((same.mse, same.max_abs_db, same.gap_iou), (0.0, 0.0, 1.0));
        let diff = compare_spectra(&a, &b, &norm).unwrap();
        assert_eq!(diff.gap_iou, 0.0);
        assert!((diff.max_abs_db - 40.0).abs() < 1e-12);
        assert!((in_band_attenuation(&b, 6000.0, 7000.0).unwrap() - 40.0).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn denoise_is_idempotent(seed in 0u64..1000, density in 0.05f64..0.6) {
            let mut init = crate::nn::Init::new(seed);
            let v: Vec<f32> = (0..48 * 64).map(|_| if init.unit() < density { 1.0 } else { -1.0 }).collect();
            let r = GeometryRaster::from_values(48, 64, v).unwrap();
            let d = denoise(&r).unwrap();
            prop_assert_eq!(denoise(&d).unwrap(), d);
        }

        #[test]
        fn target_length_and_iou_range(lo in 10.0f64..9000.0, w in 20.0f64..900.0, depth in -60.0f64..-1.0,
                                       lo2 in 10.0f64..9000.0, w2 in 20.0f64..900.0) {
            let n = NotchSpec::new(lo, (lo + w).min(10_000.0), depth).unwrap();
            let m = NotchSpec::new(lo2, (lo2 + w2).min(10_000.0), depth).unwrap();
            let a = synthesize_target(&Baseline::Flat, &[n]).unwrap();
            let b = synthesize_target(&Baseline::Flat, &[m]).unwrap();
            prop_assert_eq!(a.amp_db.len(), FREQ_BINS);
            let c = compare_spectra(&a, &b, &SpectrumNorm::default()).unwrap();
            prop_assert!((0.0..=1.0).contains(&c.gap_iou));
        }
    }
}
