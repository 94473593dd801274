//! Deterministic SVG figures for run directories.
//!
//! `emit_plots` writes, depending on which artifacts are present:
//!
//! | artifact                         | figure                 |
//! |----------------------------------|------------------------|
//! | `train_log.csv`                  | `loss_curves.svg`      |
//! | `target.csv` + `predicted.csv`   | `spectrum_overlay.svg` |
//! | `eval.csv`                       | `eval_mse.svg`         |
//!
//! and lists the files it wrote in `plots.json`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use interlace_core::fem::{bin_freq, detect_bandgaps, Bandgap, Spectrum, DEFAULT_MIN_WIDTH_HZ, DEFAULT_THRESHOLD_DB};
use interlace_core::train::EpochLog;
use serde::{Deserialize, Serialize};

use crate::formats::{read_csv, read_spectrum_csv, write_bytes, write_json};
use crate::{Error, Result};

const W: f64 = 720.0;
const H: f64 = 360.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 28.0;
const BOTTOM: f64 = 44.0;
pub const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub struct Series<'a> {
    pub label: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag)
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = nice_step(hi - lo);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

/// Line chart with optional shaded x-intervals.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series], shade: &[(f64, f64)]) -> String {
    let finite = |v: &&f64| v.is_finite();
    let xs = series.iter().flat_map(|s| s.x.iter()).filter(finite);
    let (mut x0, mut x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let ys = series.iter().flat_map(|s| s.y.iter()).filter(finite);
    let (mut y0, mut y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(x1 > x0) {
        (x0, x1) = (x0.min(0.0), x0.max(0.0) + 1.0);
    }
    if !(y1 > y0) {
        (y0, y1) = if y0.is_finite() { (y0 - 1.0, y0 + 1.0) } else { (0.0, 1.0) };
    }
    let pad = 0.05 * (y1 - y0);
    let f = Frame { x0, x1, y0: y0 - pad, y1: y1 + pad };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    for &(a, b) in shade {
        let (pa, pb) = (f.px(a.max(x0)), f.px(b.min(x1)));
        let _ = writeln!(
            s,
            r##"<rect x="{pa:.2}" y="{TOP:.2}" width="{:.2}" height="{:.2}" fill="#ffbf00" fill-opacity="0.25"/>"##,
            (pb - pa).max(0.0),
            H - TOP - BOTTOM
        );
    }
    for t in ticks(f.x0, f.x1) {
        let p = f.px(t);
        let _ = writeln!(s, r##"<line x1="{p:.2}" y1="{TOP:.2}" x2="{p:.2}" y2="{:.2}" stroke="#e0e0e0"/>"##, H - BOTTOM);
        let _ = writeln!(s, r#"<text x="{p:.2}" y="{:.2}" text-anchor="middle">{t}</text>"#, H - BOTTOM + 14.0);
    }
    for t in ticks(f.y0, f.y1) {
        let p = f.py(t);
        let _ = writeln!(s, r##"<line x1="{LEFT:.2}" y1="{p:.2}" x2="{:.2}" y2="{p:.2}" stroke="#e0e0e0"/>"##, W - RIGHT);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 4.0, p + 4.0, fmt_tick(t));
    }
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        W - LEFT - RIGHT,
        H - TOP - BOTTOM
    );
    for (k, ser) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut pts = String::new();
        for (x, y) in ser.x.iter().zip(ser.y) {
            if x.is_finite() && y.is_finite() {
                let _ = write!(pts, "{:.2},{:.2} ", f.px(*x), f.py(*y));
            }
        }
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#, pts.trim_end());
        let ly = TOP + 14.0 + 14.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{ly:.2}" fill="{color}" text-anchor="end">{}</text>"#,
            W - RIGHT - 6.0,
            escape(ser.label)
        );
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="18" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, W / 2.0, H - 8.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(t: f64) -> String {
    if t.abs() >= 1e-3 && t.abs() < 1e5 || t == 0.0 {
        let s = format!("{t:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{t:.1e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Spectra against frequency in kHz; bands shaded from the first spectrum's
/// detected gaps.
pub fn spectrum_overlay(title: &str, spectra: &[(&str, &Spectrum)]) -> (String, Vec<Bandgap>) {
    let khz: Vec<f64> = (0..spectra.first().map_or(0, |s| s.1.amp_db.len())).map(|i| bin_freq(i) / 1000.0).collect();
    let gaps = spectra.first().map_or_else(Vec::new, |s| detect_bandgaps(s.1, DEFAULT_THRESHOLD_DB, DEFAULT_MIN_WIDTH_HZ));
    let series: Vec<Series> = spectra.iter().map(|(l, s)| Series { label: l, x: &khz, y: &s.amp_db }).collect();
    let shade: Vec<(f64, f64)> = gaps.iter().map(|g| (g.f_lo / 1000.0, g.f_hi / 1000.0)).collect();
    (line_chart(title, "frequency (kHz)", "transmissibility (dB)", &series, &shade), gaps)
}

pub fn loss_curves(log: &[EpochLog]) -> String {
    let x: Vec<f64> = log.iter().map(|r| r.epoch as f64).collect();
    let ln = |v: f64| if v > 0.0 { v.log10() } else { f64::NAN };
    let train: Vec<f64> = log.iter().map(|r| ln(r.loss)).collect();
    let val: Vec<f64> = log.iter().map(|r| ln(r.val_loss)).collect();
    let series = [Series { label: "train", x: &x, y: &train }, Series { label: "validation", x: &x, y: &val }];
    line_chart("training", "epoch", "log10 loss", &series, &[])
}

/// Per-sample evaluation row as written by the `eval` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalCsvRow {
    pub sample: usize,
    pub similarity: f64,
    pub mse_forward_original: f64,
    pub mse_forward_generated: f64,
    pub mse_fem_generated: Option<f64>,
}

pub fn eval_chart(rows: &[EvalCsvRow]) -> String {
    let x: Vec<f64> = (0..rows.len()).map(|i| i as f64).collect();
    let a: Vec<f64> = rows.iter().map(|r| r.mse_forward_original).collect();
    let b: Vec<f64> = rows.iter().map(|r| r.mse_forward_generated).collect();
    let c: Vec<f64> = rows.iter().map(|r| r.mse_fem_generated.unwrap_or(f64::NAN)).collect();
    let mut series = vec![
        Series { label: "surrogate on original", x: &x, y: &a },
        Series { label: "surrogate on generated", x: &x, y: &b },
    ];
    if c.iter().any(|v| v.is_finite()) {
        series.push(Series { label: "solver on generated", x: &x, y: &c });
    }
    line_chart("held-out spectra", "row", "MSE (normalized)", &series, &[])
}

/// Renders every figure the artifacts in `dir` support.
pub fn emit_plots(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let log_path = dir.join("train_log.csv");
    if log_path.exists() {
        let log: Vec<EpochLog> = read_csv(&log_path)?;
        let p = dir.join("loss_curves.svg");
        write_bytes(&p, loss_curves(&log).as_bytes())?;
        written.push(p);
    }
    let (target, predicted) = (dir.join("target.csv"), dir.join("predicted.csv"));
    if target.exists() && predicted.exists() {
        let t = read_spectrum_csv(&target)?;
        let pr = read_spectrum_csv(&predicted)?;
        let fem_path = dir.join("fem.csv");
        let fem = if fem_path.exists() { Some(read_spectrum_csv(&fem_path)?) } else { None };
        let mut list = vec![("target", &t), ("surrogate", &pr)];
        if let Some(f) = &fem {
            list.push(("solver", f));
        }
        let (svg, _) = spectrum_overlay("designed structure", &list);
        let p = dir.join("spectrum_overlay.svg");
        write_bytes(&p, svg.as_bytes())?;
        written.push(p);
    }
    let eval_path = dir.join("eval.csv");
    if eval_path.exists() {
        let rows: Vec<EvalCsvRow> = read_csv(&eval_path)?;
        let p = dir.join("eval_mse.svg");
        write_bytes(&p, eval_chart(&rows).as_bytes())?;
        written.push(p);
    }
    if written.is_empty() {
        return Err(Error::Missing(format!("plottable artifacts in {}", dir.display())));
    }
    let names: Vec<String> =
        written.iter().filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned())).collect();
    write_json(&dir.join("plots.json"), &names)?;
    Ok(written)
}
