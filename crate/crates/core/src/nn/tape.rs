use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use super::{gemm, Params, Tensor};
use crate::{math, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

pub(crate) type BackFn = Box<dyn Fn(&[Tensor], &[f64], &mut Grads)>;

/// Gradient accumulators, allocated on first write.
pub struct Grads {
    slots: Vec<Option<Vec<f64>>>,
    needs: Vec<bool>,
    lens: Vec<usize>,
}

impl Grads {
    pub fn wants(&self, v: Var) -> bool {
        self.needs[v.0]
    }

    pub fn slot(&mut self, v: Var) -> &mut [f64] {
        let n = self.lens[v.0];
        self.slots[v.0].get_or_insert_with(|| vec![0.0; n])
    }

    /// `grad[v] += src`
    pub fn add(&mut self, v: Var, src: &[f64]) {
        if !self.wants(v) {
            return;
        }
        match &mut self.slots[v.0] {
            Some(s) => s.iter_mut().zip(src).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(src.to_vec()),
        }
    }
}

/// Records one forward pass for reverse-mode differentiation.
pub struct Tape {
    vals: Vec<Tensor>,
    needs: Vec<bool>,
    backs: Vec<Option<BackFn>>,
    grads: Option<Grads>,
    train: bool,
    rng: ChaCha8Rng,
}

impl Tape {
    /// `train` enables dropout; `seed` drives its masks.
    pub fn new(train: bool, seed: u64) -> Self {
        Tape {
            vals: Vec::new(),
            needs: Vec::new(),
            backs: Vec::new(),
            grads: None,
            train,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    /// Switches dropout on or off for nodes recorded from now on, e.g. to run
    /// a frozen surrogate in evaluation mode inside a training graph.
    pub fn set_training(&mut self, train: bool) {
        self.train = train;
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    fn push(&mut self, value: Tensor, needs: bool, back: Option<BackFn>) -> Var {
        self.vals.push(value);
        self.needs.push(needs);
        self.backs.push(if needs { back } else { None });
        Var(self.vals.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, false, None)
    }

    /// Leaf whose gradient is tracked.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, true, None)
    }

    /// Binds every parameter of `params` as a leaf, in store order.
    pub fn bind(&mut self, params: &Params, trainable: bool) -> Vec<Var> {
        params.iter().map(|p| self.push(p.value.clone(), trainable, None)).collect()
    }

    pub(crate) fn record(&mut self, value: Tensor, inputs: &[Var], back: BackFn) -> Var {
        let needs = inputs.iter().any(|v| self.needs[v.0]);
        self.push(value, needs, Some(back))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.vals[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.vals[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.needs[v.0]
    }

    pub(crate) fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Back-propagates from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.vals[loss.0].len() != 1 {
            return Err(Error::shape("backward needs a scalar loss"));
        }
        let n = loss.0 + 1;
        let mut grads = Grads {
            slots: vec![None; n],
            needs: self.needs[..n].to_vec(),
            lens: self.vals[..n].iter().map(Tensor::len).collect(),
        };
        grads.slots[loss.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            let Some(g) = grads.slots[i].take() else { continue };
            match &self.backs[i] {
                Some(f) => f(&self.vals, &g, &mut grads),
                None => grads.slots[i] = Some(g),
            }
        }
        self.grads = Some(grads);
        Ok(())
    }

    /// Gradient of the last backward pass, if `v` received one.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.as_ref()?.slots.get(v.0)?.as_deref()
    }

    /// Gradients for bound parameters; missing ones are zero.
    pub fn param_grads(&self, vars: &[Var]) -> Vec<Vec<f64>> {
        vars.iter()
            .map(|&v| self.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; self.vals[v.0].len()]))
            .collect()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(alloc::format!("{}: {:?} vs {:?}", what, self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let x = self.value(a);
        let data = x.data.iter().zip(&self.value(b).data).map(|(p, q)| p + q).collect();
        let out = Tensor { shape: x.shape.clone(), data };
        Ok(self.record(out, &[a, b], Box::new(move |_, g, gr| {
            gr.add(a, g);
            gr.add(b, g);
        })))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let x = self.value(a);
        let data = x.data.iter().zip(&self.value(b).data).map(|(p, q)| p - q).collect();
        let out = Tensor { shape: x.shape.clone(), data };
        Ok(self.record(out, &[a, b], Box::new(move |_, g, gr| {
            gr.add(a, g);
            if gr.wants(b) {
                gr.slot(b).iter_mut().zip(g).for_each(|(s, v)| *s -= v);
            }
        })))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let x = self.value(a);
        let data = x.data.iter().zip(&self.value(b).data).map(|(p, q)| p * q).collect();
        let out = Tensor { shape: x.shape.clone(), data };
        Ok(self.record(out, &[a, b], Box::new(move |v, g, gr| {
            if gr.wants(a) {
                let y = &v[b.0].data;
                gr.slot(a).iter_mut().zip(g).zip(y).for_each(|((s, g), y)| *s += g * y);
            }
            if gr.wants(b) {
                let x = &v[a.0].data;
                gr.slot(b).iter_mut().zip(g).zip(x).for_each(|((s, g), x)| *s += g * x);
            }
        })))
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let x = self.value(a);
        let out = Tensor { shape: x.shape.clone(), data: x.data.iter().map(|v| v * c).collect() };
        self.record(out, &[a], Box::new(move |_, g, gr| {
            gr.slot(a).iter_mut().zip(g).for_each(|(s, g)| *s += c * g);
        }))
    }

    /// Multiplication by a one-element variable.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::shape("scale_by needs a scalar"));
        }
        let c = self.value(s).data[0];
        let x = self.value(a);
        let out = Tensor { shape: x.shape.clone(), data: x.data.iter().map(|v| v * c).collect() };
        Ok(self.record(out, &[a, s], Box::new(move |v, g, gr| {
            let c = v[s.0].data[0];
            if gr.wants(a) {
                gr.slot(a).iter_mut().zip(g).for_each(|(d, g)| *d += c * g);
            }
            if gr.wants(s) {
                let dot = math::dot(g, &v[a.0].data);
                gr.slot(s)[0] += dot;
            }
        })))
    }

    fn unary(&mut self, a: Var, f: fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Var {
        let x = self.value(a);
        let out = Tensor { shape: x.shape.clone(), data: x.data.iter().map(|&v| f(v)).collect() };
        let me = Var(self.vals.len());
        self.record(out, &[a], Box::new(move |v, g, gr| {
            let (x, y) = (&v[a.0].data, &v[me.0].data);
            let s = gr.slot(a);
            for i in 0..g.len() {
                s[i] += g[i] * df(x[i], y[i]);
            }
        }))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, math::sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, math::tanh, |_, y| 1.0 - y * y)
    }

    /// Parametric ReLU with one shared slope.
    pub fn prelu(&mut self, a: Var, slope: Var) -> Result<Var> {
        if self.value(slope).len() != 1 {
            return Err(Error::shape("prelu needs a single slope"));
        }
        let k = self.value(slope).data[0];
        let x = self.value(a);
        let data = x.data.iter().map(|&v| if v > 0.0 { v } else { k * v }).collect();
        let out = Tensor { shape: x.shape.clone(), data };
        Ok(self.record(out, &[a, slope], Box::new(move |v, g, gr| {
            let x = &v[a.0].data;
            let k = v[slope.0].data[0];
            if gr.wants(a) {
                let s = gr.slot(a);
                for i in 0..g.len() {
                    s[i] += if x[i] > 0.0 { g[i] } else { k * g[i] };
                }
            }
            if gr.wants(slope) {
                let d = x.iter().zip(g).filter(|(x, _)| **x <= 0.0).fold(0.0, |s, (x, g)| s + x * g);
                gr.slot(slope)[0] += d;
            }
        })))
    }

    /// Same data, new shape.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if shape.iter().product::<usize>() != x.len() {
            return Err(Error::shape(alloc::format!("cannot reshape {:?} to {:?}", x.shape, shape)));
        }
        let out = Tensor { shape: shape.to_vec(), data: x.data.clone() };
        Ok(self.record(out, &[a], Box::new(move |_, g, gr| gr.add(a, g))))
    }

    /// Concatenation along axis 1 of tensors that agree on every other axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or_else(|| Error::shape("concat of nothing"))?).to_vec();
        let batch = first[0];
        let inner: usize = first[2..].iter().product();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || s[0] != batch || s[2..] != first[2..] {
                return Err(Error::shape(alloc::format!("concat: {:?} vs {:?}", s, first)));
            }
            widths.push(s[1] * inner);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(batch * total);
        for b in 0..batch {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data[b * w..(b + 1) * w]);
            }
        }
        let mut shape = first;
        shape[1] = total / inner.max(1);
        let owned: Vec<Var> = parts.to_vec();
        Ok(self.record(Tensor { shape, data }, parts, Box::new(move |_, g, gr| {
            let mut off = 0;
            for (&p, &w) in owned.iter().zip(&widths) {
                if gr.wants(p) {
                    let s = gr.slot(p);
                    for b in 0..batch {
                        let src = &g[b * total + off..b * total + off + w];
                        s[b * w..(b + 1) * w].iter_mut().zip(src).for_each(|(d, v)| *d += v);
                    }
                }
                off += w;
            }
        })))
    }

    /// Inverted dropout; identity outside training.
    pub fn dropout(&mut self, a: Var, p: f64) -> Var {
        if !self.train || p <= 0.0 {
            return a;
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(a).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                let u = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
                if u < p {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let x = self.value(a);
        let data = x.data.iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Tensor { shape: x.shape.clone(), data };
        self.record(out, &[a], Box::new(move |_, g, gr| {
            gr.slot(a).iter_mut().zip(g).zip(&mask).for_each(|((s, g), m)| *s += g * m);
        }))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.len() as f64;
        let out = Tensor::scalar(math::sum(&x.data) / n);
        self.record(out, &[a], Box::new(move |_, g, gr| {
            let d = g[0] / n;
            gr.slot(a).iter_mut().for_each(|s| *s += d);
        }))
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mse")?;
        let (x, y) = (&self.value(a).data, &self.value(b).data);
        let n = x.len() as f64;
        let v = x.iter().zip(y).fold(0.0, |s, (p, q)| s + (p - q) * (p - q)) / n;
        Ok(self.record(Tensor::scalar(v), &[a, b], Box::new(move |v, g, gr| {
            let c = 2.0 * g[0] / n;
            let (x, y) = (&v[a.0].data, &v[b.0].data);
            if gr.wants(a) {
                let s = gr.slot(a);
                for i in 0..x.len() {
                    s[i] += c * (x[i] - y[i]);
                }
            }
            if gr.wants(b) {
                let s = gr.slot(b);
                for i in 0..x.len() {
                    s[i] -= c * (x[i] - y[i]);
                }
            }
        })))
    }

    /// Scalar node with a precomputed value and gradient with respect to `a`.
    pub fn scalar_fn(&mut self, a: Var, value: f64, grad: Vec<f64>) -> Result<Var> {
        if grad.len() != self.value(a).len() {
            return Err(Error::shape("scalar_fn gradient length"));
        }
        Ok(self.record(Tensor::scalar(value), &[a], Box::new(move |_, g, gr| {
            let c = g[0];
            gr.slot(a).iter_mut().zip(&grad).for_each(|(s, d)| *s += c * d);
        })))
    }

    /// `x·wᵀ + b` for `x: [n, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::shape(alloc::format!("linear: input {:?}, weight {:?}", xs, ws)));
        }
        let (n, k, m) = (xs[0], xs[1], ws[0]);
        if let Some(b) = b {
            if self.value(b).len() != m {
                return Err(Error::shape("linear bias"));
            }
        }
        let mut out = vec![0.0; n * m];
        gemm(n, k, m, &self.value(x).data, (k, 1), &self.value(w).data, (1, k), 0.0, &mut out, (m, 1));
        if let Some(b) = b {
            let bv = &self.value(b).data;
            out.chunks_mut(m).for_each(|row| row.iter_mut().zip(bv).for_each(|(o, b)| *o += b));
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.record(Tensor { shape: vec![n, m], data: out }, &inputs, Box::new(move |v, g, gr| {
            if gr.wants(x) {
                gemm(n, m, k, g, (m, 1), &v[w.0].data, (k, 1), 1.0, gr.slot(x), (k, 1));
            }
            if gr.wants(w) {
                gemm(m, n, k, g, (1, m), &v[x.0].data, (k, 1), 1.0, gr.slot(w), (k, 1));
            }
            if let Some(b) = b {
                if gr.wants(b) {
                    let s = gr.slot(b);
                    g.chunks(m).for_each(|row| s.iter_mut().zip(row).for_each(|(s, g)| *s += g));
                }
            }
        })))
    }

    /// Batched product of `[g, m, k]` and `[g, k, n]`; `ta`/`tb` read an
    /// operand as stored transposed (`[g, k, m]` / `[g, n, k]`).
    pub fn bmm(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(Error::shape(alloc::format!("bmm: {:?} x {:?}", sa, sb)));
        }
        let (m, k) = if ta { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
        let (k2, n) = if tb { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k != k2 {
            return Err(Error::shape(alloc::format!("bmm inner dims {} vs {}", k, k2)));
        }
        let groups = sa[0];
        let astr = if ta { (1, m) } else { (k, 1) };
        let bstr = if tb { (1, k) } else { (n, 1) };
        let mut out = vec![0.0; groups * m * n];
        {
            let (av, bv) = (&self.value(a).data, &self.value(b).data);
            for i in 0..groups {
                gemm(
                    m,
                    k,
                    n,
                    &av[i * m * k..(i + 1) * m * k],
                    astr,
                    &bv[i * k * n..(i + 1) * k * n],
                    bstr,
                    0.0,
                    &mut out[i * m * n..(i + 1) * m * n],
                    (n, 1),
                );
            }
        }
        Ok(self.record(Tensor { shape: vec![groups, m, n], data: out }, &[a, b], Box::new(move |v, g, gr| {
            let (av, bv) = (&v[a.0].data, &v[b.0].data);
            if gr.wants(a) {
                let s = gr.slot(a);
                for i in 0..groups {
                    // dA = dC·Bᵀ, written in A's storage layout
                    gemm(
                        m,
                        n,
                        k,
                        &g[i * m * n..(i + 1) * m * n],
                        (n, 1),
                        &bv[i * k * n..(i + 1) * k * n],
                        (bstr.1, bstr.0),
                        1.0,
                        &mut s[i * m * k..(i + 1) * m * k],
                        astr,
                    );
                }
            }
            if gr.wants(b) {
                let s = gr.slot(b);
                for i in 0..groups {
                    // dB = Aᵀ·dC, written in B's storage layout
                    gemm(
                        k,
                        m,
                        n,
                        &av[i * m * k..(i + 1) * m * k],
                        (astr.1, astr.0),
                        &g[i * m * n..(i + 1) * m * n],
                        (n, 1),
                        1.0,
                        &mut s[i * k * n..(i + 1) * k * n],
                        bstr,
                    );
                }
            }
        })))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let w = *x.shape.last().unwrap_or(&1);
        let mut data = x.data.clone();
        for row in data.chunks_mut(w) {
            let m = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = math::exp(*v - m);
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let out = Tensor { shape: x.shape.clone(), data };
        let me = Var(self.vals.len());
        self.record(out, &[a], Box::new(move |v, g, gr| {
            let y = &v[me.0].data;
            let s = gr.slot(a);
            for ((sr, yr), gr_) in s.chunks_mut(w).zip(y.chunks(w)).zip(g.chunks(w)) {
                let d = math::dot(yr, gr_);
                for j in 0..w {
                    sr[j] += yr[j] * (gr_[j] - d);
                }
            }
        }))
    }
}
