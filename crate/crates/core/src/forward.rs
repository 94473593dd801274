//! Forward surrogate: geometry raster plus material properties to a
//! transmissibility spectrum in normalized units.
//!
//! A stem convolution lifts the raster to `channels` feature maps, a stack of
//! geometric feature extractor (GFE) blocks refines them, and a three-layer
//! fully connected head regresses the spectrum. Each GFE block runs several
//! spatial-attention heads with different input kernels in parallel.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::fem::{MaterialProps, FREQ_BINS};
use crate::lattice::{GeometryRaster, RASTER_H, RASTER_W};
use crate::nn::{Init, ParamId, Params, Reader, Tape, Tensor, Var, Writer};
use crate::{math, Error, Result};

/// Material inputs, in the fixed order the network sees them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaterialField {
    E,
    Rho,
    Nu,
    D,
}

impl MaterialField {
    pub const ORDER: [MaterialField; 4] = [MaterialField::E, MaterialField::Rho, MaterialField::Nu, MaterialField::D];

    fn get(self, m: &MaterialProps) -> f64 {
        match self {
            MaterialField::E => m.e,
            MaterialField::Rho => m.rho,
            MaterialField::Nu => m.nu,
            MaterialField::D => m.d,
        }
    }

    fn tag(self) -> u8 {
        self as u8
    }
}

/// Multiplicative scale per material field. Lookup is by field, so the table
/// order is irrelevant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialNorm {
    pub scales: Vec<(MaterialField, f64)>,
}

impl Default for MaterialNorm {
    fn default() -> Self {
        MaterialNorm {
            scales: vec![
                (MaterialField::E, 1e-9),
                (MaterialField::Rho, 1e-3),
                (MaterialField::Nu, 1.0),
                (MaterialField::D, 1e3),
            ],
        }
    }
}

impl MaterialNorm {
    pub fn encode(&self, m: &MaterialProps) -> Result<[f64; 4]> {
        let mut out = [0.0; 4];
        for (slot, field) in out.iter_mut().zip(MaterialField::ORDER) {
            let scale = self
                .scales
                .iter()
                .find(|(f, _)| *f == field)
                .map(|e| e.1)
                .ok_or_else(|| Error::Config(alloc::format!("no normalization for {:?}", field)))?;
            *slot = field.get(m) * scale;
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("material is not finite"));
        }
        Ok(out)
    }
}

/// Global affine map of dB values onto `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumNorm {
    pub min_db: f64,
    pub max_db: f64,
}

impl Default for SpectrumNorm {
    fn default() -> Self {
        SpectrumNorm { min_db: -100.0, max_db: 40.0 }
    }
}

impl SpectrumNorm {
    /// Range of every value in `spectra`.
    pub fn fit<'a>(spectra: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for s in spectra {
            for &v in s {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Estimation("spectra have no finite range".into()));
        }
        Ok(SpectrumNorm { min_db: lo, max_db: hi })
    }

    pub fn normalize(&self, db: &[f64]) -> Vec<f64> {
        let k = 2.0 / (self.max_db - self.min_db);
        db.iter().map(|v| (v - self.min_db) * k - 1.0).collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        let k = 0.5 * (self.max_db - self.min_db);
        x.iter().map(|v| (v + 1.0) * k + self.min_db).collect()
    }

    /// Converts an MSE in normalized units to dB².
    pub fn mse_to_db2(&self, mse: f64) -> f64 {
        let k = 0.5 * (self.max_db - self.min_db);
        mse * k * k
    }
}

/// Statistics fixed at training time and stored with every checkpoint.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub spectrum: SpectrumNorm,
    pub material: MaterialNorm,
}

impl Normalization {
    pub(crate) fn write(&self, w: &mut Writer) {
        w.f64(self.spectrum.min_db);
        w.f64(self.spectrum.max_db);
        w.u64(self.material.scales.len() as u64);
        for (f, s) in &self.material.scales {
            w.u8(f.tag());
            w.f64(*s);
        }
    }

    pub(crate) fn read(r: &mut Reader) -> Result<Self> {
        let spectrum = SpectrumNorm { min_db: r.f64()?, max_db: r.f64()? };
        let n = r.usize()?;
        if n > 16 {
            return Err(Error::validation("corrupt checkpoint: material table"));
        }
        let mut scales = Vec::with_capacity(n);
        for _ in 0..n {
            let tag = r.u8()?;
            let f = *MaterialField::ORDER
                .iter()
                .find(|f| f.tag() == tag)
                .ok_or_else(|| Error::validation("corrupt checkpoint: material field"))?;
            scales.push((f, r.f64()?));
        }
        Ok(Normalization { spectrum, material: MaterialNorm { scales } })
    }
}

/// One spatial-attention head.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FsaHeadConfig {
    /// Input convolution kernel (odd).
    pub alpha: usize,
    /// Attention convolution kernel.
    pub beta: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForwardConfig {
    pub gfe_blocks: usize,
    pub head_alphas: Vec<usize>,
    pub beta: usize,
    pub channels: usize,
    pub dropout: f64,
    pub pooled_grid: (usize, usize),
    pub hidden: usize,
    pub out_bins: usize,
    /// Average-pooling factor applied to the raster before the stem; 1 keeps
    /// full resolution.
    pub input_pool: usize,
    pub stem_kernel: usize,
    pub seed: u64,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        ForwardConfig {
            gfe_blocks: 12,
            head_alphas: vec![1, 1, 1, 3, 3, 3, 5, 5],
            beta: 7,
            channels: 16,
            dropout: 0.1,
            pooled_grid: (8, 16),
            hidden: 512,
            out_bins: FREQ_BINS,
            input_pool: 1,
            stem_kernel: 3,
            seed: 0,
        }
    }
}

impl ForwardConfig {
    /// Reduced model for single-core machines: fewer blocks and channels on a
    /// 4x pooled raster, same heads and head kernels.
    pub fn desk() -> Self {
        ForwardConfig { gfe_blocks: 2, channels: 4, hidden: 256, input_pool: 4, ..ForwardConfig::default() }
    }

    pub fn heads(&self) -> usize {
        self.head_alphas.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(alloc::format!("forward config: {}", m)));
        if self.head_alphas.is_empty() || self.head_alphas.iter().any(|a| a % 2 == 0) {
            return bad("head kernels must be odd");
        }
        if self.beta % 2 == 0 || self.stem_kernel % 2 == 0 {
            return bad("attention and stem kernels must be odd");
        }
        if self.channels == 0 || self.hidden == 0 || self.out_bins == 0 {
            return bad("widths must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        let p = self.input_pool;
        if p == 0 || RASTER_H % p != 0 || RASTER_W % p != 0 {
            return bad("input_pool must divide the raster size");
        }
        let (h, w) = (RASTER_H / p, RASTER_W / p);
        if h < self.beta || w < self.beta {
            return bad("pooled raster is smaller than the attention kernel");
        }
        if self.pooled_grid.0 == 0 || self.pooled_grid.1 == 0 || self.pooled_grid.0 > h || self.pooled_grid.1 > w {
            return bad("pooled grid does not fit the feature map");
        }
        Ok(())
    }

    fn write(&self, w: &mut Writer) {
        w.u64(self.gfe_blocks as u64);
        w.u64(self.head_alphas.len() as u64);
        self.head_alphas.iter().for_each(|&a| w.u64(a as u64));
        w.u64(self.beta as u64);
        w.u64(self.channels as u64);
        w.f64(self.dropout);
        w.u64(self.pooled_grid.0 as u64);
        w.u64(self.pooled_grid.1 as u64);
        w.u64(self.hidden as u64);
        w.u64(self.out_bins as u64);
        w.u64(self.input_pool as u64);
        w.u64(self.stem_kernel as u64);
        w.u64(self.seed);
    }

    fn read(r: &mut Reader) -> Result<Self> {
        let gfe_blocks = r.usize()?;
        let n = r.usize()?;
        if n > 64 {
            return Err(Error::validation("corrupt checkpoint: head count"));
        }
        let head_alphas = (0..n).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        Ok(ForwardConfig {
            gfe_blocks,
            head_alphas,
            beta: r.usize()?,
            channels: r.usize()?,
            dropout: r.f64()?,
            pooled_grid: (r.usize()?, r.usize()?),
            hidden: r.usize()?,
            out_bins: r.usize()?,
            input_pool: r.usize()?,
            stem_kernel: r.usize()?,
            seed: r.u64()?,
        })
    }

    /// Hash of every architectural field.
    pub fn fingerprint(&self) -> u64 {
        let mut w = Writer::new();
        self.write(&mut w);
        math::fnv1a(&w.finish())
    }
}

/// Bound variables of one attention head.
#[derive(Clone, Copy, Debug)]
pub struct FsaVars {
    pub conv_w: Var,
    pub conv_b: Var,
    pub w1: Var,
    pub w2: Var,
    pub att_w: Var,
}

/// Spatial-attention head: `xf = conv_α(x)`, gate
/// `σ(conv_β([w1·mean_c(xf), w2·max_c(xf)]))`, output `xf` gated per pixel.
pub fn fsa_head(tape: &mut Tape, x: Var, v: &FsaVars) -> Result<Var> {
    let alpha = tape.shape(v.conv_w)[2];
    let beta = tape.shape(v.att_w)[2];
    let xf = tape.conv2d(x, v.conv_w, Some(v.conv_b), alpha / 2)?;
    let avg = tape.channel_mean(xf)?;
    let max = tape.channel_max(xf)?;
    let avg = tape.scale_by(avg, v.w1)?;
    let max = tape.scale_by(max, v.w2)?;
    let both = tape.concat(&[avg, max])?;
    let att = tape.conv2d(both, v.att_w, None, beta / 2)?;
    let gate = tape.sigmoid(att);
    tape.gate(xf, gate)
}

#[derive(Clone, Debug)]
struct HeadIds {
    conv_w: ParamId,
    conv_b: ParamId,
    w1: ParamId,
    w2: ParamId,
    att_w: ParamId,
}

#[derive(Clone, Debug)]
struct BlockIds {
    ln1: (ParamId, ParamId),
    heads: Vec<HeadIds>,
    proj_w: ParamId,
    proj_b: ParamId,
    ln2: (ParamId, ParamId),
}

#[derive(Clone, Debug)]
struct Ids {
    stem_w: ParamId,
    stem_b: ParamId,
    blocks: Vec<BlockIds>,
    fc1: (ParamId, ParamId),
    act1: ParamId,
    fc2: (ParamId, ParamId),
    act2: ParamId,
    ln: (ParamId, ParamId),
    fc3: (ParamId, ParamId),
}

/// Parameters bound to a tape, indexed like the model's [`Params`].
pub struct Bound {
    pub vars: Vec<Var>,
}

impl Bound {
    fn at(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

#[derive(Clone, Debug)]
pub struct ForwardModel {
    cfg: ForwardConfig,
    pub params: Params,
    pub norm: Normalization,
    ids: Ids,
}

pub const FORWARD_KIND: &str = "forward";

impl ForwardModel {
    pub fn new(cfg: ForwardConfig) -> Result<Self> {
        cfg.validate()?;
        let mut init = Init::new(cfg.seed);
        let mut p = Params::new();
        let c = cfg.channels;
        let sk = cfg.stem_kernel;
        let stem_w = p.add("stem.w", init.fan_in(&[c, 1, sk, sk], sk * sk));
        let stem_b = p.add("stem.b", Tensor::zeros(&[c]));
        let mut blocks = Vec::with_capacity(cfg.gfe_blocks);
        for b in 0..cfg.gfe_blocks {
            let pre = alloc::format!("gfe{}", b);
            let ln1 = (
                p.add(alloc::format!("{pre}.ln1.g"), Tensor::filled(&[c], 1.0)),
                p.add(alloc::format!("{pre}.ln1.b"), Tensor::zeros(&[c])),
            );
            let mut heads = Vec::with_capacity(cfg.heads());
            for (h, &a) in cfg.head_alphas.iter().enumerate() {
                let hp = alloc::format!("{pre}.head{h}");
                heads.push(HeadIds {
                    conv_w: p.add(alloc::format!("{hp}.conv.w"), init.fan_in(&[c, c, a, a], c * a * a)),
                    conv_b: p.add(alloc::format!("{hp}.conv.b"), Tensor::zeros(&[c])),
                    w1: p.add(alloc::format!("{hp}.w1"), Tensor::scalar(1.0)),
                    w2: p.add(alloc::format!("{hp}.w2"), Tensor::scalar(1.0)),
                    att_w: p.add(
                        alloc::format!("{hp}.att.w"),
                        init.fan_in(&[1, 2, cfg.beta, cfg.beta], 2 * cfg.beta * cfg.beta),
                    ),
                });
            }
            let hc = c * cfg.heads();
            blocks.push(BlockIds {
                ln1,
                heads,
                proj_w: p.add(alloc::format!("{pre}.proj.w"), init.fan_in(&[c, hc, 1, 1], hc)),
                proj_b: p.add(alloc::format!("{pre}.proj.b"), Tensor::zeros(&[c])),
                ln2: (
                    p.add(alloc::format!("{pre}.ln2.g"), Tensor::filled(&[c], 1.0)),
                    p.add(alloc::format!("{pre}.ln2.b"), Tensor::zeros(&[c])),
                ),
            });
        }
        let flat = c * cfg.pooled_grid.0 * cfg.pooled_grid.1;
        let hd = cfg.hidden;
        let mut linear = |p: &mut Params, name: &str, out: usize, inp: usize| {
            (
                p.add(alloc::format!("{name}.w"), init.fan_in(&[out, inp], inp)),
                p.add(alloc::format!("{name}.b"), init.fan_in(&[out], inp)),
            )
        };
        let fc1 = linear(&mut p, "fc1", hd, flat);
        let act1 = p.add("fc1.prelu", Tensor::scalar(0.25));
        let fc2 = linear(&mut p, "fc2", hd, hd + 4);
        let act2 = p.add("fc2.prelu", Tensor::scalar(0.25));
        let ln = (p.add("head.ln.g", Tensor::filled(&[hd], 1.0)), p.add("head.ln.b", Tensor::zeros(&[hd])));
        let fc3 = linear(&mut p, "fc3", cfg.out_bins, hd);
        let ids = Ids { stem_w, stem_b, blocks, fc1, act1, fc2, act2, ln, fc3 };
        Ok(ForwardModel { cfg, params: p, norm: Normalization::default(), ids })
    }

    pub fn config(&self) -> &ForwardConfig {
        &self.cfg
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        Bound { vars: tape.bind(&self.params, trainable) }
    }

    fn head_vars(&self, b: &Bound, h: &HeadIds) -> FsaVars {
        FsaVars { conv_w: b.at(h.conv_w), conv_b: b.at(h.conv_b), w1: b.at(h.w1), w2: b.at(h.w2), att_w: b.at(h.att_w) }
    }

    /// Multi-head geometric attention: heads concatenated, then a 1x1
    /// projection back to the input width.
    pub fn geometric_attention(&self, tape: &mut Tape, b: &Bound, block: usize, x: Var) -> Result<Var> {
        let ids = &self.ids.blocks[block];
        let mut outs = Vec::with_capacity(ids.heads.len());
        for h in &ids.heads {
            let v = self.head_vars(b, h);
            outs.push(fsa_head(tape, x, &v)?);
        }
        let cat = tape.concat(&outs)?;
        tape.conv2d(cat, b.at(ids.proj_w), Some(b.at(ids.proj_b)), 0)
    }

    /// `LN₂(x + dropout(GA(LN₁(x))))`
    pub fn gfe_block(&self, tape: &mut Tape, b: &Bound, block: usize, x: Var) -> Result<Var> {
        let ids = &self.ids.blocks[block];
        let n1 = tape.layer_norm(x, b.at(ids.ln1.0), b.at(ids.ln1.1))?;
        let ga = self.geometric_attention(tape, b, block, n1)?;
        let ga = tape.dropout(ga, self.cfg.dropout);
        let sum = tape.add(x, ga)?;
        tape.layer_norm(sum, b.at(ids.ln2.0), b.at(ids.ln2.1))
    }

    /// Records the network on `tape`. `raster: [n, 1, 128, 256]`,
    /// `material: [n, 4]` (normalized); returns `[n, out_bins]`.
    pub fn graph(&self, tape: &mut Tape, b: &Bound, raster: Var, material: Var) -> Result<Var> {
        let s = tape.shape(raster).to_vec();
        if s.len() != 4 || s[1] != 1 || s[2] != RASTER_H || s[3] != RASTER_W {
            return Err(Error::validation(alloc::format!(
                "forward model expects [n, 1, {}, {}] rasters, got {:?}",
                RASTER_H,
                RASTER_W,
                s
            )));
        }
        let n = s[0];
        if tape.shape(material) != [n, 4] {
            return Err(Error::validation("material input must be [n, 4]"));
        }
        let c = &self.cfg;
        let mut x = raster;
        if c.input_pool > 1 {
            x = tape.adaptive_avg_pool(x, RASTER_H / c.input_pool, RASTER_W / c.input_pool)?;
        }
        x = tape.conv2d(x, b.at(self.ids.stem_w), Some(b.at(self.ids.stem_b)), c.stem_kernel / 2)?;
        for blk in 0..c.gfe_blocks {
            x = self.gfe_block(tape, b, blk, x)?;
        }
        let pooled = tape.adaptive_avg_pool(x, c.pooled_grid.0, c.pooled_grid.1)?;
        let flat = tape.reshape(pooled, &[n, c.channels * c.pooled_grid.0 * c.pooled_grid.1])?;
        let ids = &self.ids;
        let h1 = tape.linear(flat, b.at(ids.fc1.0), Some(b.at(ids.fc1.1)))?;
        let h1 = tape.prelu(h1, b.at(ids.act1))?;
        let h1m = tape.concat(&[h1, material])?;
        let h2 = tape.linear(h1m, b.at(ids.fc2.0), Some(b.at(ids.fc2.1)))?;
        let h2 = tape.prelu(h2, b.at(ids.act2))?;
        let h2 = tape.layer_norm(h2, b.at(ids.ln.0), b.at(ids.ln.1))?;
        tape.linear(h2, b.at(ids.fc3.0), Some(b.at(ids.fc3.1)))
    }

    /// Batched rasters and normalized materials as tape constants.
    pub fn inputs(&self, tape: &mut Tape, rasters: &[&GeometryRaster], mats: &[MaterialProps]) -> Result<(Var, Var)> {
        if rasters.len() != mats.len() || rasters.is_empty() {
            return Err(Error::validation("need one material per raster"));
        }
        let mut data = Vec::with_capacity(rasters.len() * RASTER_H * RASTER_W);
        for r in rasters {
            if r.height() != RASTER_H || r.width() != RASTER_W {
                return Err(Error::validation(alloc::format!(
                    "raster is {}x{}, expected {}x{}",
                    r.height(),
                    r.width(),
                    RASTER_H,
                    RASTER_W
                )));
            }
            data.extend(r.values().iter().map(|&v| v as f64));
        }
        let mut m = Vec::with_capacity(mats.len() * 4);
        for mat in mats {
            m.extend_from_slice(&self.norm.material.encode(mat)?);
        }
        let n = rasters.len();
        let rv = tape.constant(Tensor::new(&[n, 1, RASTER_H, RASTER_W], data)?);
        let mv = tape.constant(Tensor::new(&[n, 4], m)?);
        Ok((rv, mv))
    }

    /// Evaluation-mode prediction in normalized spectrum units.
    pub fn predict_batch(&self, rasters: &[&GeometryRaster], mats: &[MaterialProps]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new(false, 0);
        let b = self.bind(&mut tape, false);
        let (r, m) = self.inputs(&mut tape, rasters, mats)?;
        let out = self.graph(&mut tape, &b, r, m)?;
        Ok(tape.value(out).data.chunks(self.cfg.out_bins).map(<[f64]>::to_vec).collect())
    }

    pub fn predict(&self, raster: &GeometryRaster, mat: &MaterialProps) -> Result<Vec<f64>> {
        Ok(self.predict_batch(&[raster], &[*mat])?.remove(0))
    }

    /// Prediction converted back to dB.
    pub fn predict_db(&self, raster: &GeometryRaster, mat: &MaterialProps) -> Result<Vec<f64>> {
        Ok(self.norm.spectrum.denormalize(&self.predict(raster, mat)?))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::header(FORWARD_KIND, self.cfg.fingerprint());
        self.cfg.write(&mut w);
        self.norm.write(&mut w);
        w.params(&self.params);
        w.finish()
    }

    /// Restores a checkpoint. With `expected`, the stored configuration must
    /// have the same fingerprint.
    pub fn from_bytes(bytes: &[u8], expected: Option<&ForwardConfig>) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let stored = r.header(FORWARD_KIND)?;
        let cfg = ForwardConfig::read(&mut r)?;
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
        let mut model = ForwardModel::new(cfg)?;
        r.params_into(&mut model.params)?;
        r.finish()?;
        model.norm = norm;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::max_gradient_error;
    use proptest::prelude::*;

    fn tiny() -> ForwardConfig {
        ForwardConfig {
            gfe_blocks: 1,
            head_alphas: vec![1, 3],
            channels: 2,
            hidden: 8,
            out_bins: 5,
            input_pool: 8,
            pooled_grid: (2, 4),
            ..ForwardConfig::default()
        }
    }

    fn striped(seed: u32) -> GeometryRaster {
        let v = (0..RASTER_H * RASTER_W)
            .map(|i| if (i / RASTER_W + i % RASTER_W + seed as usize) % 11 < 3 { 1.0 } else { -1.0 })
            .collect();
        GeometryRaster::from_values(RASTER_H, RASTER_W, v).unwrap()
    }

    #[test]
    fn default_config_matches_the_architecture() {
        let c = ForwardConfig::default();
        assert_eq!(c.gfe_blocks, 12);
        assert_eq!(c.heads(), 8);
        let mut a = c.head_alphas.clone();
        a.sort();
        assert_eq!(a, vec![1, 1, 1, 3, 3, 3, 5, 5]);
        assert_eq!((c.beta, c.out_bins), (7, 1000));
        assert!(c.validate().is_ok());
        assert!(ForwardConfig::desk().validate().is_ok());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(ForwardConfig { head_alphas: vec![2], ..tiny() }.validate().is_err());
        assert!(ForwardConfig { input_pool: 3, ..tiny() }.validate().is_err());
        assert!(ForwardConfig { input_pool: 32, ..tiny() }.validate().is_err());
        assert!(ForwardConfig { dropout: 1.0, ..tiny() }.validate().is_err());
    }

    #[test]
    fn attention_weights_start_at_unity() {
        let m = ForwardModel::new(ForwardConfig::desk()).unwrap();
        let w: Vec<f64> = m.params.iter().filter(|p| p.name.ends_with(".w1") || p.name.ends_with(".w2")).map(|p| p.value.data[0]).collect();
        assert_eq!(w.len(), 2 * 2 * 8);
        assert!(w.iter().all(|&v| v == 1.0));
    }

    fn head_inputs(c: usize, alpha: usize, h: usize, w: usize, seed: u64) -> Vec<Tensor> {
        let mut init = Init::new(seed);
        vec![
            init.uniform(&[1, c, h, w], 1.0),
            init.uniform(&[c, c, alpha, alpha], 0.5),
            init.uniform(&[c], 0.1),
            Tensor::scalar(1.0),
            Tensor::scalar(1.0),
            init.uniform(&[1, 2, 7, 7], 0.3),
        ]
    }

    fn head(t: &mut Tape, v: &[Var]) -> Result<Var> {
        let vars = FsaVars { conv_w: v[1], conv_b: v[2], w1: v[3], w2: v[4], att_w: v[5] };
        fsa_head(t, v[0], &vars)
    }

    #[test]
    fn fsa_head_gradients_match_finite_differences() {
        for alpha in [1, 3, 5] {
            let e = max_gradient_error(&head_inputs(1, alpha, 8, 8, alpha as u64), 1e-5, head).unwrap();
            assert!(e < 1e-4, "alpha {alpha}: {e}");
        }
        let e = max_gradient_error(&head_inputs(3, 3, 8, 9, 7), 1e-5, head).unwrap();
        assert!(e < 1e-4, "{e}");
    }

    #[test]
    fn fsa_head_preserves_shape_and_bounds_the_gate() {
        let inputs = head_inputs(4, 3, 16, 32, 9);
        let mut t = Tape::new(false, 0);
        let v: Vec<Var> = inputs.into_iter().map(|x| t.constant(x)).collect();
        let out = head(&mut t, &v).unwrap();
        assert_eq!(t.shape(out), &[1, 4, 16, 32]);
        let xf = t.conv2d(v[0], v[1], Some(v[2]), 1).unwrap();
        for (o, f) in t.value(out).data.iter().zip(&t.value(xf).data) {
            assert!(o.abs() <= f.abs());
        }
    }

    #[test]
    fn zero_input_gives_constant_projection_bias() {
        let mut m = ForwardModel::new(tiny()).unwrap();
        let pb = m.params.find("gfe0.proj.b").unwrap();
        m.params.get_mut(pb).data = vec![0.3, -0.7];
        let mut t = Tape::new(false, 0);
        let b = m.bind(&mut t, false);
        let x = t.constant(Tensor::zeros(&[1, 2, 9, 11]));
        let y = m.geometric_attention(&mut t, &b, 0, x).unwrap();
        let d = &t.value(y).data;
        assert_eq!(t.shape(y), &[1, 2, 9, 11]);
        assert!(d[..99].iter().all(|&v| v == 0.3));
        assert!(d[99..].iter().all(|&v| v == -0.7));
    }

    #[test]
    fn block_without_attention_reduces_to_second_norm() {
        let mut m = ForwardModel::new(tiny()).unwrap();
        for name in ["gfe0.proj.w", "gfe0.proj.b"] {
            let id = m.params.find(name).unwrap();
            m.params.get_mut(id).data.iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Init::new(3).uniform(&[1, 2, 8, 8], 1.0);
        let mut t = Tape::new(false, 0);
        let b = m.bind(&mut t, false);
        let xv = t.constant(x);
        let y = m.gfe_block(&mut t, &b, 0, xv).unwrap();
        let (g, bb) = (t.constant(Tensor::filled(&[2], 1.0)), t.constant(Tensor::zeros(&[2])));
        let want = t.layer_norm(xv, g, bb).unwrap();
        assert_eq!(t.value(y), t.value(want));
    }

    #[test]
    fn evaluation_is_deterministic_and_has_full_length() {
        let m = ForwardModel::new(ForwardConfig { out_bins: 1000, ..tiny() }).unwrap();
        let r = striped(0);
        let a = m.predict(&r, &MaterialProps::pla()).unwrap();
        let b = m.predict(&r, &MaterialProps::pla()).unwrap();
        assert_eq!(a.len(), 1000);
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_raster_shape_is_a_validation_error() {
        let m = ForwardModel::new(tiny()).unwrap();
        let r = GeometryRaster::void(64, 64);
        assert!(matches!(m.predict(&r, &MaterialProps::pla()), Err(Error::Validation(_))));
    }

    #[test]
    fn permuted_material_table_gives_identical_predictions() {
        let mut m = ForwardModel::new(tiny()).unwrap();
        let r = striped(1);
        let mat = MaterialProps { e: 2.1e9, rho: 1100.0, nu: 0.3, d: 0.002 };
        let a = m.predict(&r, &mat).unwrap();
        m.norm.material.scales.reverse();
        m.norm.material.scales.swap(0, 2);
        let b = m.predict(&r, &mat).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn material_normalization_brings_pla_to_order_one() {
        let v = MaterialNorm::default().encode(&MaterialProps::pla()).unwrap();
        assert_eq!(v, [3.5, 1.24, 0.35, 1.0]);
        let missing = MaterialNorm { scales: vec![(MaterialField::E, 1.0)] };
        assert!(missing.encode(&MaterialProps::pla()).is_err());
    }

    #[test]
    fn spectrum_normalization_round_trips() {
        let s = [-80.0, -20.0, 0.0, 10.0];
        let n = SpectrumNorm::fit([&s[..]]).unwrap();
        let x = n.normalize(&s);
        assert_eq!(x[0], -1.0);
        assert_eq!(x[3], 1.0);
        let back = n.denormalize(&x);
        assert!(back.iter().zip(&s).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(SpectrumNorm::fit([&[1.0, 1.0][..]]).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let mut m = ForwardModel::new(tiny()).unwrap();
        m.norm.spectrum = SpectrumNorm { min_db: -91.5, max_db: 12.25 };
        let bytes = m.to_bytes();
        let back = ForwardModel::from_bytes(&bytes, Some(&tiny())).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.norm, m.norm);
        let r = striped(2);
        let (a, b) = (m.predict(&r, &MaterialProps::pla()).unwrap(), back.predict(&r, &MaterialProps::pla()).unwrap());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn checkpoint_rejects_mismatched_config_and_corruption() {
        let m = ForwardModel::new(tiny()).unwrap();
        let bytes = m.to_bytes();
        let other = ForwardConfig { channels: 3, ..tiny() };
        assert!(matches!(ForwardModel::from_bytes(&bytes, Some(&other)), Err(Error::Config(_))));
        assert!(ForwardModel::from_bytes(&bytes[..bytes.len() / 2], None).is_err());
        let mut flipped = bytes.clone();
        let n = flipped.len();
        flipped[n - 1] ^= 0xff;
        // a flipped parameter byte still parses; a flipped config byte does not
        assert!(ForwardModel::from_bytes(&flipped, None).is_ok());
        let mut cfg_flip = bytes;
        cfg_flip[4 + 4 + 8 + FORWARD_KIND.len() + 8] ^= 1;
        assert!(ForwardModel::from_bytes(&cfg_flip, None).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn gfe_blocks_preserve_shape(h in 7usize..14, w in 7usize..14, seed in 0u64..100) {
            let m = ForwardModel::new(tiny()).unwrap();
            let mut t = Tape::new(true, seed);
            let b = m.bind(&mut t, false);
            let x = t.constant(Init::new(seed).uniform(&[2, 2, h, w], 1.0));
            let y = m.gfe_block(&mut t, &b, 0, x).unwrap();
            prop_assert_eq!(t.shape(y), &[2, 2, h, w]);
        }
    }
}
