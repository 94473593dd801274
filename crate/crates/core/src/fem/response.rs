use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::modal::Modes;
use crate::lattice::BeamGraph;
use crate::math;
use crate::{Error, Result};

pub const FREQ_BINS: usize = 1000;
pub const FREQ_STEP_HZ: f64 = 10.0;
/// Base force amplitude of the harmonic load case. It cancels in the
/// transmissibility ratio.
pub const FORCE_AMPLITUDE_N: f64 = 10.0;
pub const DEFAULT_THRESHOLD_DB: f64 = -20.0;
pub const DEFAULT_MIN_WIDTH_HZ: f64 = 50.0;
/// Floor applied to magnitudes before taking logarithms.
const MIN_MAGNITUDE: f64 = 1e-12;

/// Frequency of bin `i` (10, 20, ..., 10000 Hz).
pub fn bin_freq(i: usize) -> f64 {
    FREQ_STEP_HZ * (i + 1) as f64
}

/// Transmissibility in dB on the fixed 1000-bin axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub amp_db: Vec<f64>,
    /// Modal damping ratio used to compute the response, when known.
    pub damping: Option<f64>,
}

impl Spectrum {
    pub fn new(amp_db: Vec<f64>) -> Result<Self> {
        if amp_db.len() != FREQ_BINS {
            return Err(Error::shape(format!("spectrum needs {FREQ_BINS} bins, got {}", amp_db.len())));
        }
        if amp_db.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("spectrum contains non-finite values"));
        }
        Ok(Spectrum { amp_db, damping: None })
    }

    pub fn from_fn(f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new((0..FREQ_BINS).map(|i| f(bin_freq(i))).collect())
    }

    pub fn freq_hz(&self, i: usize) -> f64 {
        bin_freq(i)
    }
}

pub fn to_db(magnitude: f64) -> f64 {
    20.0 * math::log10(magnitude.max(MIN_MAGNITUDE))
}

/// Mean longitudinal tip displacement over the base displacement for a
/// harmonic base motion along x, by superposition of `modes` with uniform
/// modal damping `d`.
pub fn transmissibility(modes: &Modes, d: f64, g: &BeamGraph) -> Result<Spectrum> {
    if g.tip_nodes.is_empty() {
        return Err(Error::validation("graph has no response nodes"));
    }
    if !(0.0..1.0).contains(&d) {
        return Err(Error::validation(format!("damping ratio {d} outside [0, 1)")));
    }
    let nt = g.tip_nodes.len() as f64;
    // mean tip modal amplitude times participation, per mode
    let weights: Vec<f64> = modes
        .shapes
        .iter()
        .zip(&modes.participation)
        .map(|(phi, gamma)| g.tip_nodes.iter().map(|&t| phi[3 * t]).sum::<f64>() / nt * gamma)
        .collect();
    let wn: Vec<f64> = modes.frequencies_hz.iter().map(|f| 2.0 * math::PI * f).collect();
    let mut amp = Vec::with_capacity(FREQ_BINS);
    for i in 0..FREQ_BINS {
        let w = 2.0 * math::PI * bin_freq(i);
        let w2 = w * w;
        let (mut re, mut im) = (1.0, 0.0);
        for (&wi, &c) in wn.iter().zip(&weights) {
            let (dr, di) = (wi * wi - w2, 2.0 * d * wi * w);
            let den = dr * dr + di * di;
            re += c * w2 * dr / den;
            im -= c * w2 * di / den;
        }
        amp.push(to_db(math::hypot(re, im)));
    }
    let mut s = Spectrum::new(amp)?;
    s.damping = Some(d);
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bandgap {
    pub f_lo: f64,
    pub f_hi: f64,
    /// Lowest amplitude inside the band.
    pub depth_db: f64,
}

impl Bandgap {
    pub fn width(&self) -> f64 {
        self.f_hi - self.f_lo
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.f_hi + self.f_lo)
    }
}

/// Maximal runs of bins at or below `threshold_db` spanning at least
/// `min_width_hz` from first to last bin.
pub fn detect_bandgaps(s: &Spectrum, threshold_db: f64, min_width_hz: f64) -> Vec<Bandgap> {
    let mut gaps = Vec::new();
    let mut i = 0;
    let n = s.amp_db.len();
    while i < n {
        if s.amp_db[i] > threshold_db {
            i += 1;
            continue;
        }
        let start = i;
        let mut depth = f64::INFINITY;
        while i < n && s.amp_db[i] <= threshold_db {
            depth = depth.min(s.amp_db[i]);
            i += 1;
        }
        let gap = Bandgap { f_lo: bin_freq(start), f_hi: bin_freq(i - 1), depth_db: depth };
        if gap.width() >= min_width_hz && gap.width() > 0.0 {
            gaps.push(gap);
        }
    }
    gaps
}

/// Widest gap; ties go to the lower band.
pub fn primary_gap(gaps: &[Bandgap]) -> Option<Bandgap> {
    gaps.iter().copied().fold(None, |best: Option<Bandgap>, g| match best {
        Some(b) if b.width() >= g.width() => Some(b),
        _ => Some(g),
    })
}

/// Gap width over its centre frequency.
pub fn bg_ratio(gap: &Bandgap) -> f64 {
    gap.width() / gap.center()
}

/// Damping ratio of the resonance at `peak_bin` from the half-power
/// bandwidth, with the -3 dB crossings interpolated linearly between bins.
pub fn half_power_damping(s: &Spectrum, peak_bin: usize) -> Result<f64> {
    let a = &s.amp_db;
    if peak_bin >= a.len() {
        return Err(Error::Estimation(format!("peak bin {peak_bin} outside the axis")));
    }
    let peak = a[peak_bin];
    let left_ok = peak_bin == 0 || a[peak_bin - 1] <= peak;
    let right_ok = peak_bin + 1 == a.len() || a[peak_bin + 1] <= peak;
    if !(left_ok && right_ok) {
        return Err(Error::Estimation(format!("bin {peak_bin} is not a local maximum")));
    }
    let level = peak - 3.0;
    let crossing = |i: usize, j: usize| {
        // i is above the level, j at or below it
        let t = (a[i] - level) / (a[i] - a[j]);
        bin_freq(i) + t * (bin_freq(j) - bin_freq(i))
    };
    let mut lo = None;
    for i in (1..=peak_bin).rev() {
        if a[i - 1] <= level {
            lo = Some(crossing(i, i - 1));
            break;
        }
    }
    let mut hi = None;
    for i in peak_bin..a.len() - 1 {
        if a[i + 1] <= level {
            hi = Some(crossing(i, i + 1));
            break;
        }
    }
    match (lo, hi) {
        (Some(f1), Some(f2)) => Ok((f2 - f1) / (2.0 * bin_freq(peak_bin))),
        _ => Err(Error::Estimation("half-power crossing lies outside the frequency axis".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sdof_db(f: f64, fn_: f64, z: f64) -> f64 {
        let r = f / fn_;
        let num = 1.0 + (2.0 * z * r).powi(2);
        let den = (1.0 - r * r).powi(2) + (2.0 * z * r).powi(2);
        10.0 * (num / den).log10()
    }

    #[test]
    fn flat_spectrum_has_no_gaps() {
        let s = Spectrum::from_fn(|_| 0.0).unwrap();
        assert!(detect_bandgaps(&s, DEFAULT_THRESHOLD_DB, DEFAULT_MIN_WIDTH_HZ).is_empty());
    }

    #[test]
    fn synthetic_notch_detected_exactly() {
        let s = Spectrum::from_fn(|f| if (3000.0..=4000.0).contains(&f) { -40.0 } else { 0.0 }).unwrap();
        let gaps = detect_bandgaps(&s, DEFAULT_THRESHOLD_DB, DEFAULT_MIN_WIDTH_HZ);
        assert_eq!(gaps.len(), 1);
        assert_eq!((gaps[0].f_lo, gaps[0].f_hi, gaps[0].depth_db), (3000.0, 4000.0, -40.0));
    }

    #[test]
    fn narrow_runs_are_ignored() {
        let s = Spectrum::from_fn(|f| if (3000.0..=3040.0).contains(&f) { -40.0 } else { 0.0 }).unwrap();
        assert!(detect_bandgaps(&s, DEFAULT_THRESHOLD_DB, DEFAULT_MIN_WIDTH_HZ).is_empty());
    }

    #[test]
    fn bg_ratio_definition() {
        let g = Bandgap { f_lo: 3000.0, f_hi: 4000.0, depth_db: -40.0 };
        assert!((bg_ratio(&g) - 1000.0 / 3500.0).abs() < 1e-15);
        let g = Bandgap { f_lo: 5000.0, f_hi: 5010.0, depth_db: -30.0 };
        assert!((bg_ratio(&g) - 10.0 / 5005.0).abs() < 1e-15);
        let scaled = Bandgap { f_lo: 3000.0 * 1.7, f_hi: 4000.0 * 1.7, depth_db: -40.0 };
        assert!((bg_ratio(&scaled) - 1000.0 / 3500.0).abs() < 1e-12);
    }

    #[test]
    fn half_power_recovers_sdof_damping() {
        let s = Spectrum::from_fn(|f| sdof_db(f, 5000.0, 0.01)).unwrap();
        let peak = (0..FREQ_BINS).max_by(|&a, &b| s.amp_db[a].total_cmp(&s.amp_db[b])).unwrap();
        let z = half_power_damping(&s, peak).unwrap();
        assert!((z / 0.01 - 1.0).abs() < 0.05, "{z}");
        let shifted = Spectrum::new(s.amp_db.iter().map(|v| v + 17.5).collect()).unwrap();
        assert!((half_power_damping(&shifted, peak).unwrap() - z).abs() < 1e-12);
    }

    #[test]
    fn lorentzian_crossings_are_symmetric() {
        let f0 = 4000.0;
        let s = Spectrum::from_fn(|f| -10.0 * (1.0 + ((f - f0) / 80.0).powi(2)).log10()).unwrap();
        let peak = (f0 / FREQ_STEP_HZ) as usize - 1;
        let z = half_power_damping(&s, peak).unwrap();
        // half-power half-width of this Lorentzian is 80 Hz
        assert!((z * 2.0 * f0 - 160.0).abs() < FREQ_STEP_HZ);
    }

    #[test]
    fn crossing_outside_axis_is_an_error() {
        let s = Spectrum::from_fn(|f| -f / 1000.0).unwrap();
        assert!(matches!(half_power_damping(&s, 0), Err(Error::Estimation(_))));
    }

    #[test]
    fn primary_gap_is_widest() {
        let a = Bandgap { f_lo: 100.0, f_hi: 300.0, depth_db: -30.0 };
        let b = Bandgap { f_lo: 1000.0, f_hi: 1500.0, depth_db: -25.0 };
        assert_eq!(primary_gap(&[a, b]), Some(b));
        assert_eq!(primary_gap(&[]), None);
    }
}
