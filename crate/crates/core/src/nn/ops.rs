//! Image and sequence operators on NCHW / NLD tensors.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::{gemm, Tape, Tensor, Var};
use crate::{math, Error, Result};

const LN_EPS: f64 = 1e-5;

fn dims4(t: &Tensor, what: &str) -> Result<(usize, usize, usize, usize)> {
    match t.shape[..] {
        [a, b, c, d] => Ok((a, b, c, d)),
        _ => Err(Error::shape(alloc::format!("{} expects 4 axes, got {:?}", what, t.shape))),
    }
}

#[derive(Clone, Copy)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn n(&self) -> usize {
        self.ho * self.wo
    }

    fn direct(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.pad == 0
    }

    /// Valid output columns `[lo, hi)` for kernel column `kx`.
    fn span(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx).min(self.wo);
        let hi = (self.w + self.pad).saturating_sub(kx).min(self.wo).max(lo);
        (lo, hi)
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let n = self.n();
        for ci in 0..self.c {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((ci * self.kh + ky) * self.kw + kx) * n;
                    let (lo, hi) = self.span(kx);
                    for oy in 0..self.ho {
                        let dst = &mut cols[row + oy * self.wo..row + (oy + 1) * self.wo];
                        let iy = oy + ky;
                        if iy < self.pad || iy >= self.h + self.pad {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &x[(ci * self.h + iy - self.pad) * self.w..];
                        dst[..lo].fill(0.0);
                        dst[hi..].fill(0.0);
                        let off = kx as isize - self.pad as isize;
                        for ox in lo..hi {
                            dst[ox] = src[(ox as isize + off) as usize];
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let n = self.n();
        for ci in 0..self.c {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((ci * self.kh + ky) * self.kw + kx) * n;
                    let (lo, hi) = self.span(kx);
                    for oy in 0..self.ho {
                        let iy = oy + ky;
                        if iy < self.pad || iy >= self.h + self.pad {
                            continue;
                        }
                        let src = &cols[row + oy * self.wo..row + (oy + 1) * self.wo];
                        let base = (ci * self.h + iy - self.pad) * self.w;
                        let off = kx as isize - self.pad as isize;
                        for ox in lo..hi {
                            dx[base + (ox as isize + off) as usize] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

impl Tape {
    /// Stride-1 cross-correlation with symmetric zero padding.
    /// `x: [b, c, h, w]`, `w: [co, c, kh, kw]`, `bias: [co]`.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, pad: usize) -> Result<Var> {
        let (batch, c, h, wd) = dims4(self.value(x), "conv2d input")?;
        let (co, ci, kh, kw) = dims4(self.value(w), "conv2d weight")?;
        if ci != c || h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(Error::shape(alloc::format!(
                "conv2d: input {:?}, weight {:?}, pad {}",
                self.shape(x),
                self.shape(w),
                pad
            )));
        }
        if let Some(b) = bias {
            if self.value(b).len() != co {
                return Err(Error::shape("conv2d bias"));
            }
        }
        let geo = ConvGeom { c, h, w: wd, kh, kw, pad, ho: h + 2 * pad - kh + 1, wo: wd + 2 * pad - kw + 1 };
        let (rows, n, isz) = (geo.rows(), geo.n(), c * h * wd);
        let mut out = vec![0.0; batch * co * n];
        {
            let xv = &self.value(x).data;
            let wv = &self.value(w).data;
            let mut cols = if geo.direct() { Vec::new() } else { vec![0.0; rows * n] };
            for bi in 0..batch {
                let xb = &xv[bi * isz..(bi + 1) * isz];
                let src: &[f64] = if geo.direct() {
                    xb
                } else {
                    geo.im2col(xb, &mut cols);
                    &cols
                };
                gemm(co, rows, n, wv, (rows, 1), src, (n, 1), 0.0, &mut out[bi * co * n..(bi + 1) * co * n], (n, 1));
            }
            if let Some(b) = bias {
                let bv = &self.value(b).data;
                for (i, plane) in out.chunks_mut(n).enumerate() {
                    let bb = bv[i % co];
                    plane.iter_mut().for_each(|v| *v += bb);
                }
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        let shape = vec![batch, co, geo.ho, geo.wo];
        Ok(self.record(Tensor { shape, data: out }, &inputs, Box::new(move |v, g, gr| {
            let (xv, wv) = (&v[x.0].data, &v[w.0].data);
            let mut cols = if geo.direct() { Vec::new() } else { vec![0.0; rows * n] };
            if gr.wants(w) {
                for bi in 0..batch {
                    let xb = &xv[bi * isz..(bi + 1) * isz];
                    let src: &[f64] = if geo.direct() {
                        xb
                    } else {
                        geo.im2col(xb, &mut cols);
                        &cols
                    };
                    let gb = &g[bi * co * n..(bi + 1) * co * n];
                    gemm(co, n, rows, gb, (n, 1), src, (1, n), 1.0, gr.slot(w), (rows, 1));
                }
            }
            if let Some(b) = bias {
                if gr.wants(b) {
                    let s = gr.slot(b);
                    for (i, plane) in g.chunks(n).enumerate() {
                        s[i % co] += math::sum(plane);
                    }
                }
            }
            if gr.wants(x) {
                let dx = gr.slot(x);
                for bi in 0..batch {
                    let gb = &g[bi * co * n..(bi + 1) * co * n];
                    let dxb = &mut dx[bi * isz..(bi + 1) * isz];
                    if geo.direct() {
                        gemm(rows, co, n, wv, (1, rows), gb, (n, 1), 1.0, dxb, (n, 1));
                    } else {
                        gemm(rows, co, n, wv, (1, rows), gb, (n, 1), 0.0, &mut cols, (n, 1));
                        geo.col2im(&cols, dxb);
                    }
                }
            }
        })))
    }

    /// Stride-1 transposed convolution. `w: [c, co, k, k]`; output size is
    /// `h + k - 1 - 2·pad`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, bias: Option<Var>, pad: usize) -> Result<Var> {
        let (ci, co, kh, kw) = dims4(self.value(w), "conv_transpose2d weight")?;
        if kh != kw || pad >= kh {
            return Err(Error::shape("conv_transpose2d needs a square kernel larger than the padding"));
        }
        let src = self.value(w).data.clone();
        let mut data = vec![0.0; src.len()];
        let kk = kh * kw;
        let idx = move |o: usize, i: usize, y: usize, x: usize| ((o * ci + i) * kh + y) * kw + x;
        for i in 0..ci {
            for o in 0..co {
                for t in 0..kk {
                    data[idx(o, i, kh - 1 - t / kw, kw - 1 - t % kw)] = src[(i * co + o) * kk + t];
                }
            }
        }
        let flipped = self.record(Tensor { shape: vec![co, ci, kh, kw], data }, &[w], Box::new(move |_, g, gr| {
            let s = gr.slot(w);
            for i in 0..ci {
                for o in 0..co {
                    for t in 0..kk {
                        s[(i * co + o) * kk + t] += g[idx(o, i, kh - 1 - t / kw, kw - 1 - t % kw)];
                    }
                }
            }
        }));
        self.conv2d(x, flipped, bias, kh - 1 - pad)
    }

    /// Reflection padding (edge pixel not repeated) of `p` on all four sides.
    pub fn reflect_pad(&mut self, x: Var, p: usize) -> Result<Var> {
        let (b, c, h, w) = dims4(self.value(x), "reflect_pad")?;
        if p >= h || p >= w {
            return Err(Error::shape("reflection padding must be smaller than the image"));
        }
        let (hp, wp) = (h + 2 * p, w + 2 * p);
        let refl = move |i: usize, n: usize| -> usize {
            let i = i as isize - p as isize;
            let n = n as isize;
            (if i < 0 {
                -i
            } else if i >= n {
                2 * n - 2 - i
            } else {
                i
            }) as usize
        };
        let xv = &self.value(x).data;
        let mut out = vec![0.0; b * c * hp * wp];
        for plane in 0..b * c {
            for y in 0..hp {
                let sy = refl(y, h);
                for xx in 0..wp {
                    out[(plane * hp + y) * wp + xx] = xv[(plane * h + sy) * w + refl(xx, w)];
                }
            }
        }
        Ok(self.record(Tensor { shape: vec![b, c, hp, wp], data: out }, &[x], Box::new(move |_, g, gr| {
            let s = gr.slot(x);
            for plane in 0..b * c {
                for y in 0..hp {
                    let sy = refl(y, h);
                    for xx in 0..wp {
                        s[(plane * h + sy) * w + refl(xx, w)] += g[(plane * hp + y) * wp + xx];
                    }
                }
            }
        })))
    }

    /// Mean over channels: `[b, c, h, w] -> [b, 1, h, w]`.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let (b, c, h, w) = dims4(self.value(x), "channel_mean")?;
        let n = h * w;
        let xv = &self.value(x).data;
        let mut out = vec![0.0; b * n];
        for bi in 0..b {
            let o = &mut out[bi * n..(bi + 1) * n];
            for ci in 0..c {
                let src = &xv[(bi * c + ci) * n..(bi * c + ci + 1) * n];
                o.iter_mut().zip(src).for_each(|(o, s)| *o += s);
            }
            o.iter_mut().for_each(|v| *v /= c as f64);
        }
        Ok(self.record(Tensor { shape: vec![b, 1, h, w], data: out }, &[x], Box::new(move |_, g, gr| {
            let s = gr.slot(x);
            let k = 1.0 / c as f64;
            for bi in 0..b {
                let gb = &g[bi * n..(bi + 1) * n];
                for ci in 0..c {
                    let d = &mut s[(bi * c + ci) * n..(bi * c + ci + 1) * n];
                    d.iter_mut().zip(gb).for_each(|(d, g)| *d += k * g);
                }
            }
        })))
    }

    /// Max over channels; the gradient goes to the first maximal channel.
    pub fn channel_max(&mut self, x: Var) -> Result<Var> {
        let (b, c, h, w) = dims4(self.value(x), "channel_max")?;
        let n = h * w;
        let xv = &self.value(x).data;
        let mut out = vec![f64::NEG_INFINITY; b * n];
        let mut arg = vec![0usize; b * n];
        for bi in 0..b {
            for ci in 0..c {
                let src = &xv[(bi * c + ci) * n..(bi * c + ci + 1) * n];
                for (j, &v) in src.iter().enumerate() {
                    if v > out[bi * n + j] {
                        out[bi * n + j] = v;
                        arg[bi * n + j] = (bi * c + ci) * n + j;
                    }
                }
            }
        }
        Ok(self.record(Tensor { shape: vec![b, 1, h, w], data: out }, &[x], Box::new(move |_, g, gr| {
            let s = gr.slot(x);
            for (i, &a) in arg.iter().enumerate() {
                s[a] += g[i];
            }
        })))
    }

    /// Broadcast product of `x: [b, c, h, w]` with a gate `s: [b, 1, h, w]`.
    pub fn gate(&mut self, x: Var, s: Var) -> Result<Var> {
        let (b, c, h, w) = dims4(self.value(x), "gate")?;
        if self.shape(s) != [b, 1, h, w] {
            return Err(Error::shape(alloc::format!("gate {:?} on {:?}", self.shape(s), self.shape(x))));
        }
        let n = h * w;
        let (xv, sv) = (&self.value(x).data, &self.value(s).data);
        let mut out = xv.clone();
        for bi in 0..b {
            let gate = &sv[bi * n..(bi + 1) * n];
            for ci in 0..c {
                let o = &mut out[(bi * c + ci) * n..(bi * c + ci + 1) * n];
                o.iter_mut().zip(gate).for_each(|(o, g)| *o *= g);
            }
        }
        Ok(self.record(Tensor { shape: vec![b, c, h, w], data: out }, &[x, s], Box::new(move |v, g, gr| {
            let (xv, sv) = (&v[x.0].data, &v[s.0].data);
            if gr.wants(x) {
                let d = gr.slot(x);
                for bi in 0..b {
                    let gate = &sv[bi * n..(bi + 1) * n];
                    for ci in 0..c {
                        let r = (bi * c + ci) * n..(bi * c + ci + 1) * n;
                        for ((d, g), s) in d[r.clone()].iter_mut().zip(&g[r]).zip(gate) {
                            *d += g * s;
                        }
                    }
                }
            }
            if gr.wants(s) {
                let d = gr.slot(s);
                for bi in 0..b {
                    for ci in 0..c {
                        let r = (bi * c + ci) * n..(bi * c + ci + 1) * n;
                        let dd = &mut d[bi * n..(bi + 1) * n];
                        for ((d, g), x) in dd.iter_mut().zip(&g[r.clone()]).zip(&xv[r]) {
                            *d += g * x;
                        }
                    }
                }
            }
        })))
    }

    /// Normalizes each sample over all its non-batch axes, then applies a
    /// per-channel (axis 1) affine map.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::shape("layer_norm needs a batch axis"));
        }
        let (b, c) = (shape[0], shape[1]);
        let n: usize = shape[1..].iter().product();
        let inner = n / c;
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::shape("layer_norm affine size"));
        }
        let xv = &self.value(x).data;
        let (gv, bv) = (&self.value(gamma).data, &self.value(beta).data);
        let mut xhat = vec![0.0; b * n];
        let mut inv = vec![0.0; b];
        let mut out = vec![0.0; b * n];
        for bi in 0..b {
            let xs = &xv[bi * n..(bi + 1) * n];
            let mu = math::sum(xs) / n as f64;
            let var = xs.iter().fold(0.0, |s, v| s + (v - mu) * (v - mu)) / n as f64;
            let r = 1.0 / math::sqrt(var + LN_EPS);
            inv[bi] = r;
            for j in 0..n {
                let h = (xs[j] - mu) * r;
                xhat[bi * n + j] = h;
                out[bi * n + j] = gv[j / inner] * h + bv[j / inner];
            }
        }
        Ok(self.record(Tensor { shape, data: out }, &[x, gamma, beta], Box::new(move |v, g, gr| {
            let gv = &v[gamma.0].data;
            if gr.wants(x) {
                let d = gr.slot(x);
                for bi in 0..b {
                    let r = bi * n..(bi + 1) * n;
                    let (gb, hb) = (&g[r.clone()], &xhat[r.clone()]);
                    let (mut m1, mut m2) = (0.0, 0.0);
                    for j in 0..n {
                        let dh = gb[j] * gv[j / inner];
                        m1 += dh;
                        m2 += dh * hb[j];
                    }
                    m1 /= n as f64;
                    m2 /= n as f64;
                    let db = &mut d[r];
                    for j in 0..n {
                        let dh = gb[j] * gv[j / inner];
                        db[j] += inv[bi] * (dh - m1 - hb[j] * m2);
                    }
                }
            }
            if gr.wants(gamma) {
                let d = gr.slot(gamma);
                for i in 0..b * n {
                    d[(i % n) / inner] += g[i] * xhat[i];
                }
            }
            if gr.wants(beta) {
                let d = gr.slot(beta);
                for i in 0..b * n {
                    d[(i % n) / inner] += g[i];
                }
            }
        })))
    }

    /// Adaptive average pooling to `oh × ow` (bins `[⌊i·h/oh⌋, ⌈(i+1)·h/oh⌉)`).
    pub fn adaptive_avg_pool(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let (b, c, h, w) = dims4(self.value(x), "adaptive_avg_pool")?;
        if oh == 0 || ow == 0 || oh > h || ow > w {
            return Err(Error::shape(alloc::format!("cannot pool {}x{} to {}x{}", h, w, oh, ow)));
        }
        let bins = |i: usize, n: usize, o: usize| (i * n / o, ((i + 1) * n).div_ceil(o));
        let xv = &self.value(x).data;
        let mut out = vec![0.0; b * c * oh * ow];
        for plane in 0..b * c {
            for i in 0..oh {
                let (y0, y1) = bins(i, h, oh);
                for j in 0..ow {
                    let (x0, x1) = bins(j, w, ow);
                    let mut s = 0.0;
                    for y in y0..y1 {
                        s += math::sum(&xv[(plane * h + y) * w + x0..(plane * h + y) * w + x1]);
                    }
                    out[(plane * oh + i) * ow + j] = s / ((y1 - y0) * (x1 - x0)) as f64;
                }
            }
        }
        Ok(self.record(Tensor { shape: vec![b, c, oh, ow], data: out }, &[x], Box::new(move |_, g, gr| {
            let s = gr.slot(x);
            for plane in 0..b * c {
                for i in 0..oh {
                    let (y0, y1) = bins(i, h, oh);
                    for j in 0..ow {
                        let (x0, x1) = bins(j, w, ow);
                        let d = g[(plane * oh + i) * ow + j] / ((y1 - y0) * (x1 - x0)) as f64;
                        for y in y0..y1 {
                            s[(plane * h + y) * w + x0..(plane * h + y) * w + x1].iter_mut().for_each(|v| *v += d);
                        }
                    }
                }
            }
        })))
    }

    /// `[b, l, h·d] -> [b·h, l, d]`
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || heads == 0 || s[2] % heads != 0 {
            return Err(Error::shape(alloc::format!("split_heads {:?} into {}", s, heads)));
        }
        let (b, l, dm) = (s[0], s[1], s[2]);
        let d = dm / heads;
        let src = &self.value(x).data;
        let mut out = vec![0.0; src.len()];
        for bi in 0..b {
            for t in 0..l {
                for hh in 0..heads {
                    let from = (bi * l + t) * dm + hh * d;
                    let to = ((bi * heads + hh) * l + t) * d;
                    out[to..to + d].copy_from_slice(&src[from..from + d]);
                }
            }
        }
        Ok(self.record(Tensor { shape: vec![b * heads, l, d], data: out }, &[x], Box::new(move |_, g, gr| {
            let s = gr.slot(x);
            for bi in 0..b {
                for t in 0..l {
                    for hh in 0..heads {
                        let from = (bi * l + t) * dm + hh * d;
                        let to = ((bi * heads + hh) * l + t) * d;
                        s[from..from + d].iter_mut().zip(&g[to..to + d]).for_each(|(a, b)| *a += b);
                    }
                }
            }
        })))
    }

    /// `[b·h, l, d] -> [b, l, h·d]`
    pub fn merge_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || heads == 0 || s[0] % heads != 0 {
            return Err(Error::shape(alloc::format!("merge_heads {:?} from {}", s, heads)));
        }
        let (b, l, d) = (s[0] / heads, s[1], s[2]);
        let dm = d * heads;
        let src = &self.value(x).data;
        let mut out = vec![0.0; src.len()];
        for bi in 0..b {
            for t in 0..l {
                for hh in 0..heads {
                    let to = (bi * l + t) * dm + hh * d;
                    let from = ((bi * heads + hh) * l + t) * d;
                    out[to..to + d].copy_from_slice(&src[from..from + d]);
                }
            }
        }
        Ok(self.record(Tensor { shape: vec![b, l, dm], data: out }, &[x], Box::new(move |_, g, gr| {
            let s = gr.slot(x);
            for bi in 0..b {
                for t in 0..l {
                    for hh in 0..heads {
                        let to = (bi * l + t) * dm + hh * d;
                        let from = ((bi * heads + hh) * l + t) * d;
                        s[from..from + d].iter_mut().zip(&g[to..to + d]).for_each(|(a, b)| *a += b);
                    }
                }
            }
        })))
    }

    /// Adds `pe: [l]` to every embedding channel of `x: [b, l, d]`.
    pub fn add_positional(&mut self, x: Var, pe: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || self.value(pe).len() != s[1] {
            return Err(Error::shape(alloc::format!("positional {:?} on {:?}", self.shape(pe), s)));
        }
        let (l, d) = (s[1], s[2]);
        let pv = &self.value(pe).data;
        let mut out = self.value(x).data.clone();
        for (i, v) in out.iter_mut().enumerate() {
            *v += pv[(i / d) % l];
        }
        Ok(self.record(Tensor { shape: s, data: out }, &[x, pe], Box::new(move |_, g, gr| {
            gr.add(x, g);
            if gr.wants(pe) {
                let s = gr.slot(pe);
                for (i, v) in g.iter().enumerate() {
                    s[(i / d) % l] += v;
                }
            }
        })))
    }

    /// Node with a precomputed value depending on scalar inputs, where
    /// `columns[i]` is the derivative of the output with respect to `inputs[i]`.
    pub fn scalars_fn(&mut self, inputs: &[Var], value: Tensor, columns: Vec<Vec<f64>>) -> Result<Var> {
        if inputs.len() != columns.len()
            || inputs.iter().any(|&v| self.value(v).len() != 1)
            || columns.iter().any(|c| c.len() != value.len())
        {
            return Err(Error::shape("scalars_fn jacobian"));
        }
        let owned = inputs.to_vec();
        Ok(self.record(value, inputs, Box::new(move |_, g, gr| {
            for (&v, col) in owned.iter().zip(&columns) {
                if gr.wants(v) {
                    gr.slot(v)[0] += math::dot(g, col);
                }
            }
        })))
    }
}
