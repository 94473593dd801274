//! Inverse design model: spectrum to geometry raster.
//!
//! The spectrum is embedded per bin, offset by a learnable Gaussian position
//! code, and passed through multi-head self-attention. A linear map lifts the
//! result to a rectified latent image, which is refined by valid
//! convolutions, a multiscale residual block, and a transposed-convolution
//! decoder ending in `tanh`.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::fem::{Spectrum, FREQ_BINS};
use crate::forward::{Bound, Normalization};
use crate::lattice::{GeometryRaster, RASTER_H, RASTER_W};
use crate::nn::{Init, ParamId, Params, Reader, Tape, Tensor, Var, Writer};
use crate::{math, Error, Result};

/// Gaussian argument `exp(-(ln(p+1) - μ)² / 2σ²)` for pair index `p`.
fn gauss_arg(p: usize, mu0: f64, sigma0: f64) -> (f64, f64) {
    let u = math::ln(p as f64 + 1.0) - mu0;
    (math::exp(-u * u / (2.0 * sigma0 * sigma0)), u)
}

/// Position code: `sin(g_p)` at even positions, `cos(g_p)` at odd positions,
/// with pair index `p = i / 2`.
pub fn gaussian_pe(mu0: f64, sigma0: f64, len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| {
            let (g, _) = gauss_arg(i / 2, mu0, sigma0);
            if i % 2 == 0 {
                math::sin(g)
            } else {
                math::cos(g)
            }
        })
        .collect()
}

/// [`gaussian_pe`] with its derivatives with respect to `mu0` and `sigma0`.
pub fn gaussian_pe_grad(mu0: f64, sigma0: f64, len: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut v = Vec::with_capacity(len);
    let mut dmu = Vec::with_capacity(len);
    let mut dsig = Vec::with_capacity(len);
    let s2 = sigma0 * sigma0;
    for i in 0..len {
        let (g, u) = gauss_arg(i / 2, mu0, sigma0);
        let (gm, gs) = (g * u / s2, g * u * u / (s2 * sigma0));
        let (f, df) = if i % 2 == 0 { (math::sin(g), math::cos(g)) } else { (math::cos(g), -math::sin(g)) };
        v.push(f);
        dmu.push(df * gm);
        dsig.push(df * gs);
    }
    (v, dmu, dsig)
}

/// Initial value of `mu0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeInit {
    /// Half the sequence length.
    HalfLength,
    /// `ln(len / 2)`, the middle of the log-position axis.
    LogMidpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InverseConfig {
    pub d_model: usize,
    pub attn_heads: usize,
    pub seq_len: usize,
    pub latent_shape: (usize, usize, usize),
    /// Rank of the factored latent projection; 0 uses a dense map.
    pub latent_rank: usize,
    pub reflect_pad: usize,
    pub refine_convs: usize,
    pub refine_channels: usize,
    pub msrn_kernels: Vec<usize>,
    pub decode_channels: Vec<usize>,
    pub pe_init: PeInit,
    pub seed: u64,
}

impl Default for InverseConfig {
    fn default() -> Self {
        InverseConfig {
            d_model: 64,
            attn_heads: 4,
            seq_len: FREQ_BINS,
            latent_shape: (3, RASTER_H, RASTER_W),
            latent_rank: 64,
            reflect_pad: 3,
            refine_convs: 3,
            refine_channels: 32,
            msrn_kernels: vec![1, 3, 5],
            decode_channels: vec![16, 8, 4],
            pe_init: PeInit::HalfLength,
            seed: 0,
        }
    }
}

impl InverseConfig {
    /// Narrow variant for single-core machines; same topology.
    pub fn desk() -> Self {
        InverseConfig {
            d_model: 16,
            latent_rank: 16,
            refine_channels: 8,
            decode_channels: vec![4, 4, 2],
            pe_init: PeInit::LogMidpoint,
            ..InverseConfig::default()
        }
    }

    pub fn latent_len(&self) -> usize {
        self.latent_shape.0 * self.latent_shape.1 * self.latent_shape.2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(alloc::format!("inverse config: {}", m)));
        if self.d_model == 0 || self.attn_heads == 0 || self.d_model % self.attn_heads != 0 {
            return bad("d_model must be a positive multiple of attn_heads");
        }
        if self.seq_len == 0 {
            return bad("sequence length must be positive");
        }
        let (c, h, w) = self.latent_shape;
        if c == 0 || h != RASTER_H || w != RASTER_W {
            return bad("latent must share the raster's spatial size");
        }
        if 2 * self.reflect_pad != 2 * self.refine_convs || self.reflect_pad >= h.min(w) {
            return bad("refine convolutions must consume exactly the reflection padding");
        }
        if self.refine_channels == 0 || self.decode_channels.iter().any(|&c| c == 0) {
            return bad("channel counts must be positive");
        }
        if self.msrn_kernels.is_empty() || self.msrn_kernels.iter().any(|k| k % 2 == 0) {
            return bad("multiscale kernels must be odd");
        }
        Ok(())
    }

    fn write(&self, w: &mut Writer) {
        for v in [self.d_model, self.attn_heads, self.seq_len, self.latent_shape.0, self.latent_shape.1, self.latent_shape.2] {
            w.u64(v as u64);
        }
        for v in [self.latent_rank, self.reflect_pad, self.refine_convs, self.refine_channels] {
            w.u64(v as u64);
        }
        w.u64(self.msrn_kernels.len() as u64);
        self.msrn_kernels.iter().for_each(|&k| w.u64(k as u64));
        w.u64(self.decode_channels.len() as u64);
        self.decode_channels.iter().for_each(|&k| w.u64(k as u64));
        w.u8(match self.pe_init {
            PeInit::HalfLength => 0,
            PeInit::LogMidpoint => 1,
        });
        w.u64(self.seed);
    }

    fn read(r: &mut Reader) -> Result<Self> {
        let mut f = [0usize; 10];
        for v in f.iter_mut() {
            *v = r.usize()?;
        }
        let list = |r: &mut Reader| -> Result<Vec<usize>> {
            let n = r.usize()?;
            if n > 64 {
                return Err(Error::validation("corrupt checkpoint: list length"));
            }
            (0..n).map(|_| r.usize()).collect()
        };
        let msrn_kernels = list(r)?;
        let decode_channels = list(r)?;
        let pe_init = match r.u8()? {
            0 => PeInit::HalfLength,
            1 => PeInit::LogMidpoint,
            _ => return Err(Error::validation("corrupt checkpoint: pe init")),
        };
        Ok(InverseConfig {
            d_model: f[0],
            attn_heads: f[1],
            seq_len: f[2],
            latent_shape: (f[3], f[4], f[5]),
            latent_rank: f[6],
            reflect_pad: f[7],
            refine_convs: f[8],
            refine_channels: f[9],
            msrn_kernels,
            decode_channels,
            pe_init,
            seed: r.u64()?,
        })
    }

    pub fn fingerprint(&self) -> u64 {
        let mut w = Writer::new();
        self.write(&mut w);
        math::fnv1a(&w.finish())
    }
}

#[derive(Clone, Debug)]
struct Ids {
    embed: (ParamId, ParamId),
    mu0: ParamId,
    sigma_raw: ParamId,
    q: (ParamId, ParamId),
    k: (ParamId, ParamId),
    v: (ParamId, ParamId),
    o: (ParamId, ParamId),
    latent_u: Option<ParamId>,
    latent: (ParamId, ParamId),
    refine: Vec<(ParamId, ParamId)>,
    msrn: Vec<(ParamId, ParamId)>,
    fuse: (ParamId, ParamId),
    decode: Vec<(ParamId, ParamId)>,
    out: (ParamId, ParamId),
}

#[derive(Clone, Debug)]
pub struct InverseModel {
    cfg: InverseConfig,
    pub params: Params,
    pub norm: Normalization,
    ids: Ids,
}

pub const INVERSE_KIND: &str = "inverse";

/// Intermediate values of one pass, for inspection.
pub struct InverseTrace {
    pub attention: Var,
    pub latent: Var,
    pub refined: Var,
    pub fused: Var,
    pub output: Var,
}

impl InverseModel {
    pub fn new(cfg: InverseConfig) -> Result<Self> {
        cfg.validate()?;
        let mut init = Init::new(cfg.seed ^ 0x1d);
        let mut p = Params::new();
        let d = cfg.d_model;
        let linear = |p: &mut Params, init: &mut Init, name: &str, out: usize, inp: usize| {
            (
                p.add(alloc::format!("{name}.w"), init.fan_in(&[out, inp], inp)),
                p.add(alloc::format!("{name}.b"), init.fan_in(&[out], inp)),
            )
        };
        let embed = linear(&mut p, &mut init, "embed", d, 1);
        let mu = match cfg.pe_init {
            PeInit::HalfLength => cfg.seq_len as f64 / 2.0,
            PeInit::LogMidpoint => math::ln(cfg.seq_len as f64 / 2.0),
        };
        let mu0 = p.add("pe.mu0", Tensor::scalar(mu));
        let sigma_raw = p.add("pe.sigma_raw", Tensor::scalar(math::softplus_inv(1.0)));
        let q = linear(&mut p, &mut init, "attn.q", d, d);
        let k = linear(&mut p, &mut init, "attn.k", d, d);
        let v = linear(&mut p, &mut init, "attn.v", d, d);
        let o = linear(&mut p, &mut init, "attn.o", d, d);
        let flat = cfg.seq_len * d;
        let out = cfg.latent_len();
        let (latent_u, latent) = if cfg.latent_rank > 0 {
            let r = cfg.latent_rank;
            let u = p.add("latent.u", init.fan_in(&[r, flat], flat));
            (Some(u), linear(&mut p, &mut init, "latent.v", out, r))
        } else {
            (None, linear(&mut p, &mut init, "latent", out, flat))
        };
        let conv = |p: &mut Params, init: &mut Init, name: &str, co: usize, ci: usize, k: usize| {
            (
                p.add(alloc::format!("{name}.w"), init.fan_in(&[co, ci, k, k], ci * k * k)),
                p.add(alloc::format!("{name}.b"), Tensor::zeros(&[co])),
            )
        };
        let cr = cfg.refine_channels;
        let mut refine = Vec::new();
        let mut ci = cfg.latent_shape.0;
        for i in 0..cfg.refine_convs {
            refine.push(conv(&mut p, &mut init, &alloc::format!("refine{i}"), cr, ci, 3));
            ci = cr;
        }
        let msrn: Vec<_> =
            cfg.msrn_kernels.iter().map(|&k| conv(&mut p, &mut init, &alloc::format!("msrn.k{k}"), cr, cr, k)).collect();
        let fuse = conv(&mut p, &mut init, "msrn.fuse", cr, cr * cfg.msrn_kernels.len(), 1);
        let mut decode = Vec::new();
        let mut ci = cr;
        for (i, &co) in cfg.decode_channels.iter().enumerate() {
            // transposed weights are [in, out, k, k]
            decode.push((
                p.add(alloc::format!("decode{i}.w"), init.fan_in(&[ci, co, 3, 3], co * 9)),
                p.add(alloc::format!("decode{i}.b"), Tensor::zeros(&[co])),
            ));
            ci = co;
        }
        let outc = conv(&mut p, &mut init, "out", 1, ci, 3);
        let ids = Ids { embed, mu0, sigma_raw, q, k, v, o, latent_u, latent, refine, msrn, fuse, decode, out: outc };
        Ok(InverseModel { cfg, params: p, norm: Normalization::default(), ids })
    }

    pub fn config(&self) -> &InverseConfig {
        &self.cfg
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        Bound { vars: tape.bind(&self.params, trainable) }
    }

    fn at(b: &Bound, id: ParamId) -> Var {
        b.vars[id.0]
    }

    /// Current `(mu0, sigma0)`.
    pub fn pe_params(&self) -> (f64, f64) {
        (self.params.get(self.ids.mu0).data[0], math::softplus(self.params.get(self.ids.sigma_raw).data[0]))
    }

    /// Position code as a tape node differentiable in `mu0` and the raw
    /// (softplus) width.
    pub fn pe_node(&self, tape: &mut Tape, b: &Bound) -> Result<Var> {
        let (mu, raw) = (Self::at(b, self.ids.mu0), Self::at(b, self.ids.sigma_raw));
        let (m, r) = (tape.value(mu).data[0], tape.value(raw).data[0]);
        let sigma = math::softplus(r);
        let (v, dmu, dsig) = gaussian_pe_grad(m, sigma, self.cfg.seq_len);
        let ds = math::sigmoid(r);
        let draw = dsig.iter().map(|g| g * ds).collect();
        tape.scalars_fn(&[mu, raw], Tensor::new(&[self.cfg.seq_len], v)?, vec![dmu, draw])
    }

    /// Spectrum `[n, seq_len]` to rectified latent `[n, c, h, w]`; also returns
    /// the attention weights `[n·heads, seq_len, seq_len]`.
    pub fn spectrum_attention(&self, tape: &mut Tape, b: &Bound, s: Var) -> Result<(Var, Var)> {
        let c = &self.cfg;
        let sh = tape.shape(s).to_vec();
        if sh.len() != 2 || sh[1] != c.seq_len {
            return Err(Error::validation(alloc::format!("spectrum input must be [n, {}], got {:?}", c.seq_len, sh)));
        }
        let (n, l, d, h) = (sh[0], c.seq_len, c.d_model, c.attn_heads);
        let ids = &self.ids;
        let col = tape.reshape(s, &[n * l, 1])?;
        let e = tape.linear(col, Self::at(b, ids.embed.0), Some(Self::at(b, ids.embed.1)))?;
        let e = tape.reshape(e, &[n, l, d])?;
        let pe = self.pe_node(tape, b)?;
        let x = tape.add_positional(e, pe)?;
        let x = tape.reshape(x, &[n * l, d])?;
        let proj = |tape: &mut Tape, w: (ParamId, ParamId)| -> Result<Var> {
            let y = tape.linear(x, Self::at(b, w.0), Some(Self::at(b, w.1)))?;
            let y = tape.reshape(y, &[n, l, d])?;
            tape.split_heads(y, h)
        };
        let q = proj(tape, ids.q)?;
        let k = proj(tape, ids.k)?;
        let v = proj(tape, ids.v)?;
        let q = tape.scale(q, 1.0 / math::sqrt((d / h) as f64));
        let scores = tape.bmm(q, k, false, true)?;
        let att = tape.softmax(scores);
        let ctx = tape.bmm(att, v, false, false)?;
        let ctx = tape.merge_heads(ctx, h)?;
        let ctx = tape.reshape(ctx, &[n * l, d])?;
        let y = tape.linear(ctx, Self::at(b, ids.o.0), Some(Self::at(b, ids.o.1)))?;
        let flat = tape.reshape(y, &[n, l * d])?;
        let z = match ids.latent_u {
            Some(u) => {
                let r = tape.linear(flat, Self::at(b, u), None)?;
                tape.linear(r, Self::at(b, ids.latent.0), Some(Self::at(b, ids.latent.1)))?
            }
            None => tape.linear(flat, Self::at(b, ids.latent.0), Some(Self::at(b, ids.latent.1)))?,
        };
        let z = tape.relu(z);
        let (lc, lh, lw) = c.latent_shape;
        Ok((tape.reshape(z, &[n, lc, lh, lw])?, att))
    }

    /// Reflection padding followed by valid 3x3 convolutions with ReLU.
    pub fn refine(&self, tape: &mut Tape, b: &Bound, latent: Var) -> Result<Var> {
        let mut x = tape.reflect_pad(latent, self.cfg.reflect_pad)?;
        for &(w, bias) in &self.ids.refine {
            x = tape.conv2d(x, Self::at(b, w), Some(Self::at(b, bias)), 0)?;
            x = tape.relu(x);
        }
        Ok(x)
    }

    /// Parallel same-padded paths, 1x1 fusion, residual sum.
    pub fn msrn(&self, tape: &mut Tape, b: &Bound, x: Var) -> Result<Var> {
        let mut paths = Vec::with_capacity(self.ids.msrn.len());
        for (&(w, bias), &k) in self.ids.msrn.iter().zip(&self.cfg.msrn_kernels) {
            let y = tape.conv2d(x, Self::at(b, w), Some(Self::at(b, bias)), k / 2)?;
            paths.push(tape.relu(y));
        }
        let cat = tape.concat(&paths)?;
        let fused = tape.conv2d(cat, Self::at(b, self.ids.fuse.0), Some(Self::at(b, self.ids.fuse.1)), 0)?;
        tape.add(x, fused)
    }

    /// Shape-preserving transposed convolutions with ReLU, then a 3x3
    /// convolution to one channel and `tanh`.
    pub fn decode(&self, tape: &mut Tape, b: &Bound, x: Var) -> Result<Var> {
        let mut x = x;
        for &(w, bias) in &self.ids.decode {
            x = tape.conv_transpose2d(x, Self::at(b, w), Some(Self::at(b, bias)), 1)?;
            x = tape.relu(x);
        }
        let y = tape.conv2d(x, Self::at(b, self.ids.out.0), Some(Self::at(b, self.ids.out.1)), 1)?;
        Ok(tape.tanh(y))
    }

    pub fn trace(&self, tape: &mut Tape, b: &Bound, s: Var) -> Result<InverseTrace> {
        let (latent, attention) = self.spectrum_attention(tape, b, s)?;
        let refined = self.refine(tape, b, latent)?;
        let fused = self.msrn(tape, b, refined)?;
        let output = self.decode(tape, b, fused)?;
        Ok(InverseTrace { attention, latent, refined, fused, output })
    }

    /// Normalized spectra `[n, seq_len]` to rasters `[n, 1, 128, 256]`.
    pub fn graph(&self, tape: &mut Tape, b: &Bound, s: Var) -> Result<Var> {
        Ok(self.trace(tape, b, s)?.output)
    }

    /// Evaluation-mode design from dB spectra.
    pub fn design_batch(&self, spectra: &[&Spectrum]) -> Result<Vec<GeometryRaster>> {
        if spectra.is_empty() {
            return Ok(Vec::new());
        }
        let mut data = Vec::with_capacity(spectra.len() * self.cfg.seq_len);
        for s in spectra {
            if s.amp_db.len() != self.cfg.seq_len {
                return Err(Error::validation(alloc::format!(
                    "spectrum has {} bins, expected {}",
                    s.amp_db.len(),
                    self.cfg.seq_len
                )));
            }
            data.extend(self.norm.spectrum.normalize(&s.amp_db));
        }
        let mut tape = Tape::new(false, 0);
        let b = self.bind(&mut tape, false);
        let sv = tape.constant(Tensor::new(&[spectra.len(), self.cfg.seq_len], data)?);
        let out = self.graph(&mut tape, &b, sv)?;
        let n = RASTER_H * RASTER_W;
        tape.value(out)
            .data
            .chunks(n)
            .map(|c| GeometryRaster::from_values(RASTER_H, RASTER_W, c.iter().map(|&v| (v as f32).clamp(-1.0, 1.0)).collect()))
            .collect()
    }

    pub fn design(&self, s: &Spectrum) -> Result<GeometryRaster> {
        Ok(self.design_batch(&[s])?.remove(0))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::header(INVERSE_KIND, self.cfg.fingerprint());
        self.cfg.write(&mut w);
        self.norm.write(&mut w);
        w.params(&self.params);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], expected: Option<&InverseConfig>) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let stored = r.header(INVERSE_KIND)?;
        let cfg = InverseConfig::read(&mut r)?;
        if cfg.fingerprint() != stored {
            return Err(Error::validation("corrupt checkpoint: configuration does not match its fingerprint"));
        }
        if let Some(e) = expected {
            if e.fingerprint() != stored {
                return Err(Error::Config(alloc::format!(
                    "checkpoint fingerprint {:016x} does not match the requested configuration {:016x}",
                    stored,
                    e.fingerprint()
                )));
            }
        }
        let norm = Normalization::read(&mut r)?;
        let mut model = InverseModel::new(cfg)?;
        r.params_into(&mut model.params)?;
        r.finish()?;
        model.norm = norm;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{ForwardConfig, ForwardModel};
    use proptest::prelude::*;

    fn tiny() -> InverseConfig {
        InverseConfig {
            d_model: 4,
            attn_heads: 2,
            seq_len: 12,
            latent_rank: 3,
            refine_channels: 2,
            decode_channels: vec![2, 2, 1],
            ..InverseConfig::default()
        }
    }

    fn spectra(n: usize, len: usize, seed: u64) -> Tensor {
        Init::new(seed).uniform(&[n, len], 1.0)
    }

    #[test]
    fn default_config_matches_the_architecture() {
        let c = InverseConfig::default();
        assert_eq!(c.latent_shape, (3, 128, 256));
        assert_eq!(c.msrn_kernels, vec![1, 3, 5]);
        assert_eq!(c.decode_channels.len(), 3);
        assert_eq!(c.attn_heads, 4);
        assert!(c.validate().is_ok());
        assert!(InverseConfig::desk().validate().is_ok());
        assert!(InverseConfig { reflect_pad: 2, ..c.clone() }.validate().is_err());
        assert!(InverseConfig { msrn_kernels: vec![2], ..c }.validate().is_err());
    }

    #[test]
    fn pe_bounds_and_saturated_init() {
        for (mu, s) in [(0.0, 0.1), (2.0, 1.0), (6.2, 3.0), (-4.0, 0.5)] {
            for (i, v) in gaussian_pe(mu, s, 1000).into_iter().enumerate() {
                if i % 2 == 0 {
                    assert!((0.0..=1f64.sin()).contains(&v));
                } else {
                    assert!(v >= 1f64.cos() && v <= 1.0);
                }
            }
        }
        let pe = gaussian_pe(500.0, 1.0, 1000);
        for p in 0..500 {
            assert!(pe[2 * p].abs() < 1e-12);
            assert!((pe[2 * p + 1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pe_derivatives_match_finite_differences() {
        let (mu, s, h) = (500f64.ln(), 1.0, 1e-6);
        let (_, dmu, ds) = gaussian_pe_grad(mu, s, 1000);
        let (p, m) = (gaussian_pe(mu + h, s, 1000), gaussian_pe(mu - h, s, 1000));
        let (sp, sm) = (gaussian_pe(mu, s + h, 1000), gaussian_pe(mu, s - h, 1000));
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        for i in 0..1000 {
            assert!(rel(dmu[i], (p[i] - m[i]) / (2.0 * h)) < 1e-4, "mu at {i}");
            assert!(rel(ds[i], (sp[i] - sm[i]) / (2.0 * h)) < 1e-4, "sigma at {i}");
        }
    }

    #[test]
    fn stage_shapes_and_ranges() {
        let m = InverseModel::new(tiny()).unwrap();
        let mut t = Tape::new(false, 0);
        let b = m.bind(&mut t, false);
        let s = t.constant(spectra(2, 12, 1));
        let tr = m.trace(&mut t, &b, s).unwrap();
        assert_eq!(t.shape(tr.latent), &[2, 3, 128, 256]);
        assert!(t.value(tr.latent).data.iter().all(|&v| v >= 0.0));
        assert_eq!(t.shape(tr.refined), &[2, 2, 128, 256]);
        assert!(t.value(tr.refined).data.iter().all(|&v| v >= 0.0));
        assert_eq!(t.shape(tr.fused), &[2, 2, 128, 256]);
        assert_eq!(t.shape(tr.output), &[2, 1, 128, 256]);
        assert!(t.value(tr.output).data.iter().all(|v| v.abs() <= 1.0));
        for row in t.value(tr.attention).data.chunks(12) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn wrong_spectrum_length_is_rejected() {
        let m = InverseModel::new(tiny()).unwrap();
        let mut t = Tape::new(false, 0);
        let b = m.bind(&mut t, false);
        let s = t.constant(spectra(1, 11, 1));
        assert!(matches!(m.spectrum_attention(&mut t, &b, s), Err(Error::Validation(_))));
    }

    #[test]
    fn zero_multiscale_weights_give_identity() {
        let mut m = InverseModel::new(tiny()).unwrap();
        for p in m.params.iter_mut().filter(|p| p.name.starts_with("msrn")) {
            p.value.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut t = Tape::new(false, 0);
        let b = m.bind(&mut t, false);
        let x = t.constant(Init::new(2).uniform(&[1, 2, 128, 256], 1.0));
        let y = m.msrn(&mut t, &b, x).unwrap();
        assert_eq!(t.value(y), t.value(x));
    }

    #[test]
    fn evaluation_is_deterministic_and_batch_independent() {
        let m = InverseModel::new(tiny()).unwrap();
        let s = spectra(3, 12, 4);
        let run = |s: &Tensor| {
            let mut t = Tape::new(false, 0);
            let b = m.bind(&mut t, false);
            let v = t.constant(s.clone());
            let o = m.graph(&mut t, &b, v).unwrap();
            t.value(o).data.clone()
        };
        let a = run(&s);
        assert_eq!(a, run(&s));
        let mut perm = s.clone();
        perm.data = [&s.data[24..36], &s.data[0..12], &s.data[12..24]].concat();
        let p = run(&perm);
        let n = 128 * 256;
        assert_eq!(&p[0..n], &a[2 * n..3 * n]);
        assert_eq!(&p[n..2 * n], &a[0..n]);
    }

    #[test]
    fn gradients_reach_the_embedding_and_position_code_through_a_frozen_surrogate() {
        let mut cfg = tiny();
        cfg.seq_len = 1000;
        cfg.pe_init = PeInit::LogMidpoint;
        let inv = InverseModel::new(cfg).unwrap();
        let fwd = ForwardModel::new(ForwardConfig {
            gfe_blocks: 1,
            head_alphas: vec![1, 3],
            channels: 2,
            hidden: 8,
            input_pool: 8,
            pooled_grid: (2, 4),
            ..ForwardConfig::default()
        })
        .unwrap();
        let mut t = Tape::new(true, 0);
        let bi = inv.bind(&mut t, true);
        let bf = fwd.bind(&mut t, false);
        let s = t.constant(spectra(1, 1000, 5));
        let x = inv.graph(&mut t, &bi, s).unwrap();
        let mat = t.constant(Tensor::new(&[1, 4], vec![3.5, 1.24, 0.35, 1.0]).unwrap());
        let pred = fwd.graph(&mut t, &bf, x, mat).unwrap();
        let loss = t.mse(pred, s).unwrap();
        t.backward(loss).unwrap();
        let g = |name: &str| t.grad(bi.vars[inv.params.find(name).unwrap().0]).unwrap().to_vec();
        assert!(g("embed.w").iter().any(|v| *v != 0.0));
        for name in ["pe.mu0", "pe.sigma_raw"] {
            let v = g(name)[0];
            assert!(v.is_finite() && v != 0.0, "{name}: {v}");
        }
        assert!(bf.vars.iter().all(|&v| t.grad(v).is_none()));
    }

    #[test]
    fn design_produces_valid_rasters() {
        let mut cfg = tiny();
        cfg.seq_len = 1000;
        let m = InverseModel::new(cfg).unwrap();
        let s = Spectrum::from_fn(|f| -20.0 * (f / 5000.0)).unwrap();
        let r = m.design(&s).unwrap();
        assert_eq!((r.height(), r.width()), (128, 256));
        assert!(r.values().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let m = InverseModel::new(tiny()).unwrap();
        let bytes = m.to_bytes();
        let back = InverseModel::from_bytes(&bytes, Some(&tiny())).unwrap();
        assert_eq!(back.params, m.params);
        let other = InverseConfig { refine_channels: 3, ..tiny() };
        assert!(matches!(InverseModel::from_bytes(&bytes, Some(&other)), Err(Error::Config(_))));
        assert!(ForwardModel::from_bytes(&bytes, None).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pe_range_invariant(mu in -50.0f64..600.0, sigma in 0.01f64..100.0) {
            let pe = gaussian_pe(mu, sigma, 1000);
            for (i, v) in pe.iter().enumerate() {
                if i % 2 == 0 {
                    prop_assert!(*v >= 0.0 && *v <= 1f64.sin());
                } else {
                    prop_assert!(*v >= 1f64.cos() && *v <= 1.0);
                }
            }
        }
    }
}
