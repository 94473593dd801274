//! Training objectives: spectrum MSE, a windowed structural loss (SSL), and a
//! patch-level maximum mean discrepancy (MMD), plus their weighted composite.
//!
//! Raster losses take row-major `h × w` images and return analytic gradients
//! with respect to their first argument.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::nn::{Tape, Tensor, Var};
use crate::{math, Error, Result};

/// MMD kernel bandwidth rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Median pairwise distance of the pooled patches.
    MedianHeuristic,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub beta1: f64,
    pub beta2: f64,
    /// Stabilizer in the SSL denominator.
    pub c0: f64,
    pub mmd_bandwidth: Bandwidth,
    /// SSL window side; clipped to the image for small inputs.
    pub ssl_window: usize,
    /// MMD samples are non-overlapping `mmd_patch × mmd_patch` patches.
    pub mmd_patch: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            beta1: 0.1,
            beta2: 0.6,
            c0: 1e-4,
            mmd_bandwidth: Bandwidth::MedianHeuristic,
            ssl_window: 11,
            mmd_patch: 8,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta1 >= 0.0 && self.beta2 >= 0.0) {
            return Err(Error::validation("loss weights must be non-negative"));
        }
        if !(self.c0 > 0.0) {
            return Err(Error::validation("c0 must be positive"));
        }
        if self.ssl_window == 0 || self.mmd_patch == 0 {
            return Err(Error::validation("window sizes must be positive"));
        }
        if let Bandwidth::Fixed(s) = self.mmd_bandwidth {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::validation("fixed bandwidth must be positive"));
            }
        }
        Ok(())
    }
}

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(alloc::format!("mse of lengths {} and {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).fold(0.0, |s, (x, y)| s + (x - y) * (x - y)) / a.len() as f64)
}

fn check_images(x: &[f64], y: &[f64], h: usize, w: usize) -> Result<()> {
    if x.len() != h * w || y.len() != h * w || h == 0 || w == 0 {
        return Err(Error::shape(alloc::format!("images of {} and {} values for {}x{}", x.len(), y.len(), h, w)));
    }
    Ok(())
}

/// Sums over every `k × k` window: `(h-k+1) × (w-k+1)` outputs.
fn box_sum(img: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for r in 0..h {
        for c in 0..wo {
            rows[r * wo + c] = math::sum(&img[r * w + c..r * w + c + k]);
        }
    }
    let mut out = vec![0.0; ho * wo];
    for r in 0..ho {
        for i in 0..k {
            let src = &rows[(r + i) * wo..(r + i + 1) * wo];
            out[r * wo..(r + 1) * wo].iter_mut().zip(src).for_each(|(o, s)| *o += s);
        }
    }
    out
}

/// Adjoint of [`box_sum`]: each pixel collects the windows that contain it.
fn box_adjoint(coef: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for r in 0..ho {
        for i in 0..k {
            let dst = &mut rows[(r + i) * wo..(r + i + 1) * wo];
            dst.iter_mut().zip(&coef[r * wo..(r + 1) * wo]).for_each(|(d, s)| *d += s);
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..wo {
            let v = rows[r * wo + c];
            out[r * w + c..r * w + c + k].iter_mut().for_each(|o| *o += v);
        }
    }
    out
}

/// `1 - mean_windows σxy / (σx·σy + c0)` and its gradient with respect to `x`.
pub fn ssl_grad(x: &[f64], y: &[f64], h: usize, w: usize, lw: &LossWeights) -> Result<(f64, Vec<f64>)> {
    check_images(x, y, h, w)?;
    lw.validate()?;
    let k = lw.ssl_window.min(h).min(w);
    let n = (k * k) as f64;
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let (sx, sy) = (box_sum(x, h, w, k), box_sum(y, h, w, k));
    let (sxx, syy, sxy) = (box_sum(&xx, h, w, k), box_sum(&yy, h, w, k), box_sum(&xy, h, w, k));
    let nw = sx.len();
    let mut total = 0.0;
    let (mut alpha, mut alpha_my) = (vec![0.0; nw], vec![0.0; nw]);
    let (mut beta, mut beta_mx) = (vec![0.0; nw], vec![0.0; nw]);
    for i in 0..nw {
        let (mx, my) = (sx[i] / n, sy[i] / n);
        let vx = (sxx[i] / n - mx * mx).max(0.0);
        let vy = (syy[i] / n - my * my).max(0.0);
        let cov = sxy[i] / n - mx * my;
        let (dx, dy) = (math::sqrt(vx), math::sqrt(vy));
        let den = dx * dy + lw.c0;
        total += cov / den;
        let a = -1.0 / (nw as f64 * den);
        let b = if dx > 0.0 { cov * dy / (2.0 * dx * den * den * nw as f64) } else { 0.0 };
        alpha[i] = a;
        alpha_my[i] = a * my;
        beta[i] = b;
        beta_mx[i] = b * mx;
    }
    let value = 1.0 - total / nw as f64;
    let (a, amy) = (box_adjoint(&alpha, h, w, k), box_adjoint(&alpha_my, h, w, k));
    let (b, bmx) = (box_adjoint(&beta, h, w, k), box_adjoint(&beta_mx, h, w, k));
    let grad = (0..h * w).map(|p| (y[p] * a[p] - amy[p] + 2.0 * (x[p] * b[p] - bmx[p])) / n).collect();
    Ok((value, grad))
}

pub fn ssl(x: &[f64], y: &[f64], h: usize, w: usize, lw: &LossWeights) -> Result<f64> {
    ssl_grad(x, y, h, w, lw).map(|r| r.0)
}

/// `1 - ssl`.
pub fn similarity_score(x: &[f64], y: &[f64], h: usize, w: usize, lw: &LossWeights) -> Result<f64> {
    Ok(1.0 - ssl(x, y, h, w, lw)?)
}

/// Non-overlapping `p × p` patches, row-major patch order; trailing pixels that
/// do not fill a patch are ignored.
fn patches(img: &[f64], h: usize, w: usize, p: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity((h / p) * (w / p));
    for pr in 0..h / p {
        for pc in 0..w / p {
            let mut v = Vec::with_capacity(p * p);
            for r in 0..p {
                let start = (pr * p + r) * w + pc * p;
                v.extend_from_slice(&img[start..start + p]);
            }
            out.push(v);
        }
    }
    out
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |s, (x, y)| s + (x - y) * (x - y))
}

/// Median pairwise distance of `pool`, falling back to 1 when degenerate.
fn median_bandwidth(pool: &[&[f64]]) -> f64 {
    let mut d = Vec::with_capacity(pool.len() * pool.len().saturating_sub(1) / 2);
    for i in 0..pool.len() {
        for j in i + 1..pool.len() {
            d.push(math::sqrt(sq_dist(pool[i], pool[j])));
        }
    }
    let m = math::median(&mut d);
    if m > 0.0 && m.is_finite() {
        m
    } else {
        1.0
    }
}

fn kernel_mean(a: &[Vec<f64>], b: &[Vec<f64>], inv2s2: f64) -> f64 {
    let mut s = 0.0;
    for u in a {
        for v in b {
            s += math::exp(-sq_dist(u, v) * inv2s2);
        }
    }
    s / (a.len() * b.len()) as f64
}

/// Bandwidth the MMD of `x` against `y` uses.
pub fn mmd_bandwidth(x: &[f64], y: &[f64], h: usize, w: usize, lw: &LossWeights) -> Result<f64> {
    check_images(x, y, h, w)?;
    match lw.mmd_bandwidth {
        Bandwidth::Fixed(s) => Ok(s),
        Bandwidth::MedianHeuristic => {
            let (px, py) = (patches(x, h, w, lw.mmd_patch), patches(y, h, w, lw.mmd_patch));
            let pool: Vec<&[f64]> = px.iter().chain(&py).map(Vec::as_slice).collect();
            Ok(median_bandwidth(&pool))
        }
    }
}

/// Biased MMD² with a Gaussian kernel on patches, and its gradient with respect
/// to `x` at fixed bandwidth.
pub fn mmd_grad(x: &[f64], y: &[f64], h: usize, w: usize, lw: &LossWeights) -> Result<(f64, Vec<f64>)> {
    check_images(x, y, h, w)?;
    lw.validate()?;
    let p = lw.mmd_patch;
    if h < p || w < p {
        return Err(Error::shape(alloc::format!("{}x{} image is smaller than a {}x{} patch", h, w, p, p)));
    }
    let (px, py) = (patches(x, h, w, p), patches(y, h, w, p));
    let sigma = mmd_bandwidth(x, y, h, w, lw)?;
    let inv2s2 = 1.0 / (2.0 * sigma * sigma);
    let value = kernel_mean(&px, &px, inv2s2) + kernel_mean(&py, &py, inv2s2) - 2.0 * kernel_mean(&px, &py, inv2s2);
    let n = px.len() as f64;
    let m = py.len() as f64;
    let d = p * p;
    let mut gp = vec![vec![0.0; d]; px.len()];
    let inv_s2 = 2.0 * inv2s2;
    for (i, xi) in px.iter().enumerate() {
        let g = &mut gp[i];
        for xj in &px {
            let k = math::exp(-sq_dist(xi, xj) * inv2s2);
            let c = -2.0 * k * inv_s2 / (n * n);
            for t in 0..d {
                g[t] += c * (xi[t] - xj[t]);
            }
        }
        for yj in &py {
            let k = math::exp(-sq_dist(xi, yj) * inv2s2);
            let c = 2.0 * k * inv_s2 / (n * m);
            for t in 0..d {
                g[t] += c * (xi[t] - yj[t]);
            }
        }
    }
    let mut grad = vec![0.0; h * w];
    let pc = w / p;
    for (i, g) in gp.iter().enumerate() {
        let (r0, c0) = ((i / pc) * p, (i % pc) * p);
        for r in 0..p {
            grad[(r0 + r) * w + c0..(r0 + r) * w + c0 + p].copy_from_slice(&g[r * p..(r + 1) * p]);
        }
    }
    Ok((value, grad))
}

pub fn mmd(x: &[f64], y: &[f64], h: usize, w: usize, lw: &LossWeights) -> Result<f64> {
    mmd_grad(x, y, h, w, lw).map(|r| r.0)
}

/// Components of the composite objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub mse: f64,
    pub ssl: f64,
    pub mmd: f64,
}

impl LossParts {
    /// `mse + beta1·ssl + beta2·mmd`, evaluated left to right.
    pub fn total(&self, lw: &LossWeights) -> f64 {
        self.mse + lw.beta1 * self.ssl + lw.beta2 * self.mmd
    }
}

/// Composite loss for one sample; rasters are `h × w`.
pub fn composite(
    t_pred: &[f64],
    t_true: &[f64],
    x_pred: &[f64],
    x_true: &[f64],
    (h, w): (usize, usize),
    lw: &LossWeights,
) -> Result<(f64, LossParts)> {
    let parts = LossParts {
        mse: mse(t_pred, t_true)?,
        ssl: ssl(x_pred, x_true, h, w, lw)?,
        mmd: mmd(x_pred, x_true, h, w, lw)?,
    };
    Ok((parts.total(lw), parts))
}

type ImageLoss = fn(&[f64], &[f64], usize, usize, &LossWeights) -> Result<(f64, Vec<f64>)>;

/// Batch mean of a raster loss over `x: [b, 1, h, w]` against a fixed target.
fn image_node(tape: &mut Tape, x: Var, target: &Tensor, lw: &LossWeights, f: ImageLoss) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != 4 || s[1] != 1 || target.shape != s {
        return Err(Error::shape(alloc::format!("raster loss on {:?} vs {:?}", s, target.shape)));
    }
    let (b, h, w) = (s[0], s[2], s[3]);
    let n = h * w;
    let xv = &tape.value(x).data;
    let mut value = 0.0;
    let mut grad = vec![0.0; b * n];
    for i in 0..b {
        let (v, g) = f(&xv[i * n..(i + 1) * n], &target.data[i * n..(i + 1) * n], h, w, lw)?;
        value += v / b as f64;
        grad[i * n..(i + 1) * n].iter_mut().zip(&g).for_each(|(d, g)| *d = g / b as f64);
    }
    tape.scalar_fn(x, value, grad)
}

pub fn ssl_node(tape: &mut Tape, x: Var, target: &Tensor, lw: &LossWeights) -> Result<Var> {
    image_node(tape, x, target, lw, ssl_grad)
}

pub fn mmd_node(tape: &mut Tape, x: Var, target: &Tensor, lw: &LossWeights) -> Result<Var> {
    image_node(tape, x, target, lw, mmd_grad)
}

/// Records the composite objective; returns the total and its components.
pub fn composite_node(
    tape: &mut Tape,
    t_pred: Var,
    t_true: Var,
    x_pred: Var,
    x_true: &Tensor,
    lw: &LossWeights,
) -> Result<(Var, LossParts)> {
    let m = tape.mse(t_pred, t_true)?;
    let s = ssl_node(tape, x_pred, x_true, lw)?;
    let d = mmd_node(tape, x_pred, x_true, lw)?;
    let parts = LossParts { mse: tape.value(m).data[0], ssl: tape.value(s).data[0], mmd: tape.value(d).data[0] };
    let ws = tape.scale(s, lw.beta1);
    let wd = tape.scale(d, lw.beta2);
    let t = tape.add(m, ws)?;
    let t = tape.add(t, wd)?;
    Ok((t, parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{max_gradient_error, Init};
    use proptest::prelude::*;

    fn img(seed: u64, n: usize) -> Vec<f64> {
        Init::new(seed).uniform(&[n], 1.0).data
    }

    /// Windowed statistics computed directly per window.
    fn ssl_oracle(x: &[f64], y: &[f64], h: usize, w: usize, k: usize, c0: f64) -> f64 {
        let n = (k * k) as f64;
        let mut acc = 0.0;
        let mut cnt = 0.0;
        for r in 0..=h - k {
            for c in 0..=w - k {
                let px: Vec<f64> = (0..k * k).map(|t| x[(r + t / k) * w + c + t % k]).collect();
                let py: Vec<f64> = (0..k * k).map(|t| y[(r + t / k) * w + c + t % k]).collect();
                let mx = px.iter().sum::<f64>() / n;
                let my = py.iter().sum::<f64>() / n;
                let vx = px.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
                let vy = py.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
                let cv = px.iter().zip(&py).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
                acc += cv / (vx.sqrt() * vy.sqrt() + c0);
                cnt += 1.0;
            }
        }
        1.0 - acc / cnt
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        let a = img(1, 10);
        let b = img(2, 10);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
        assert!(mse(&a, &b[..9]).is_err());
    }

    #[test]
    fn ssl_matches_direct_window_statistics() {
        let (h, w) = (16, 20);
        let (x, y) = (img(3, h * w), img(4, h * w));
        let lw = LossWeights::default();
        let got = ssl(&x, &y, h, w, &lw).unwrap();
        let want = ssl_oracle(&x, &y, h, w, 11, 1e-4);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn ssl_identities() {
        let (h, w) = (16, 16);
        let x = img(5, h * w);
        let lw = LossWeights::default();
        // ssl(X, X) = mean c0 / (σ² + c0)
        let k = 11;
        let n = (k * k) as f64;
        let mut want = 0.0;
        let mut cnt = 0.0;
        for r in 0..=h - k {
            for c in 0..=w - k {
                let p: Vec<f64> = (0..k * k).map(|t| x[(r + t / k) * w + c + t % k]).collect();
                let m = p.iter().sum::<f64>() / n;
                let v = p.iter().map(|q| (q - m).powi(2)).sum::<f64>() / n;
                want += 1e-4 / (v + 1e-4);
                cnt += 1.0;
            }
        }
        assert!((ssl(&x, &x, h, w, &lw).unwrap() - want / cnt).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let s = ssl(&x, &neg, h, w, &lw).unwrap();
        assert!(s > 1.99 && s <= 2.0, "{s}");
    }

    #[test]
    fn mmd_identities() {
        let (h, w) = (16, 24);
        let x = img(6, h * w);
        let lw = LossWeights::default();
        assert_eq!(mmd(&x, &x, h, w, &lw).unwrap(), 0.0);
        let ones = vec![1.0; h * w];
        let neg = vec![-1.0; h * w];
        // constant patches 16 apart in l2; the pooled median distance is 16
        // (the 6·6 cross pairs outnumber the 2·15 same-image pairs), so
        // k = exp(-1/2) and MMD² = 2 - 2·exp(-1/2)
        let v = mmd(&ones, &neg, h, w, &lw).unwrap();
        assert!((v - (2.0 - 2.0 * (-0.5f64).exp())).abs() < 1e-12, "{v}");
    }

    #[test]
    fn composite_is_weighted_sum_bitwise() {
        let (h, w) = (16, 16);
        let (x, y) = (img(7, h * w), img(8, h * w));
        let (t, u) = (img(9, 1000), img(10, 1000));
        let lw = LossWeights::default();
        let (total, parts) = composite(&t, &u, &x, &y, (h, w), &lw).unwrap();
        let want = mse(&t, &u).unwrap() + 0.1 * ssl(&x, &y, h, w, &lw).unwrap() + 0.6 * mmd(&x, &y, h, w, &lw).unwrap();
        assert_eq!(total.to_bits(), want.to_bits());
        let zero = LossWeights { beta1: 0.0, beta2: 0.0, ..lw };
        assert_eq!(composite(&t, &u, &x, &y, (h, w), &zero).unwrap().0, parts.mse);
    }

    #[test]
    fn composite_node_matches_pure_functions() {
        let (h, w) = (16, 16);
        let (x, y) = (img(11, h * w), img(12, h * w));
        let (t, u) = (img(13, 50), img(14, 50));
        let lw = LossWeights::default();
        let mut tape = Tape::new(false, 0);
        let tp = tape.constant(Tensor::new(&[1, 50], t.clone()).unwrap());
        let tt = tape.constant(Tensor::new(&[1, 50], u.clone()).unwrap());
        let xp = tape.constant(Tensor::new(&[1, 1, h, w], x.clone()).unwrap());
        let target = Tensor::new(&[1, 1, h, w], y.clone()).unwrap();
        let (node, parts) = composite_node(&mut tape, tp, tt, xp, &target, &lw).unwrap();
        let (total, want) = composite(&t, &u, &x, &y, (h, w), &lw).unwrap();
        assert_eq!(parts, want);
        assert_eq!(tape.value(node).data[0].to_bits(), total.to_bits());
    }

    fn fd_check(f: ImageLoss, lw: &LossWeights) -> f64 {
        let (h, w) = (8, 8);
        let y = Tensor::new(&[1, 1, h, w], img(15, 64)).unwrap();
        let x = Tensor::new(&[1, 1, h, w], img(16, 64)).unwrap();
        let lw = *lw;
        max_gradient_error(&[x], 1e-5, move |t, v| image_node(t, v[0], &y, &lw, f)).unwrap()
    }

    #[test]
    fn ssl_gradient_matches_finite_differences() {
        assert!(fd_check(ssl_grad, &LossWeights::default()) < 1e-4);
        let lw = LossWeights { ssl_window: 3, ..LossWeights::default() };
        assert!(fd_check(ssl_grad, &lw) < 1e-4);
    }

    #[test]
    fn mmd_gradient_matches_finite_differences() {
        let lw = LossWeights { mmd_bandwidth: Bandwidth::Fixed(2.0), mmd_patch: 4, ..LossWeights::default() };
        assert!(fd_check(mmd_grad, &lw) < 1e-4);
        let lw = LossWeights { mmd_bandwidth: Bandwidth::Fixed(3.0), ..LossWeights::default() };
        assert!(fd_check(mmd_grad, &lw) < 1e-4);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let lw = LossWeights::default();
        assert!(ssl(&[0.0; 64], &[0.0; 63], 8, 8, &lw).is_err());
        assert!(mmd(&[0.0; 16], &[0.0; 16], 4, 4, &lw).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn losses_are_non_negative(seed in 0u64..1000) {
            let (h, w) = (16, 16);
            let (x, y) = (img(seed, h * w), img(seed + 7919, h * w));
            let lw = LossWeights::default();
            let (total, p) = composite(&x[..100], &y[..100], &x, &y, (h, w), &lw).unwrap();
            prop_assert!(p.mse >= 0.0 && p.ssl >= 0.0 && p.mmd >= -1e-15 && total >= 0.0);
        }

        #[test]
        fn ssl_is_shift_invariant(seed in 0u64..1000, c in -3.0f64..3.0) {
            let (h, w) = (12, 12);
            let (x, y) = (img(seed, h * w), img(seed + 1, h * w));
            let lw = LossWeights::default();
            let xs: Vec<f64> = x.iter().map(|v| v + c).collect();
            let ys: Vec<f64> = y.iter().map(|v| v + c).collect();
            let a = ssl(&x, &y, h, w, &lw).unwrap();
            let b = ssl(&xs, &ys, h, w, &lw).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn mmd_ignores_patch_order(seed in 0u64..1000) {
            // swapping two whole patches in both images permutes the samples
            let (h, w) = (8, 16);
            let (x, y) = (img(seed, h * w), img(seed + 3, h * w));
            let swap = |v: &[f64]| {
                let mut o = v.to_vec();
                for r in 0..8 {
                    for c in 0..8 {
                        o.swap(r * w + c, r * w + c + 8);
                    }
                }
                o
            };
            let lw = LossWeights::default();
            let a = mmd(&x, &y, h, w, &lw).unwrap();
            let b = mmd(&swap(&x), &y, h, w, &lw).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
