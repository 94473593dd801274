//! Dataset splitting, forward and tandem inverse training, and evaluation.

use alloc::string::String;
use alloc::vec::Vec;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::analysis::{denoise_with, DenoiseOptions};
use crate::fem::{simulate, MaterialProps, Spectrum};
use crate::forward::ForwardModel;
use crate::inverse::InverseModel;
use crate::lattice::{raster_to_graph, GeometryRaster, PixelFrameOptions, RASTER_H, RASTER_W};
use crate::losses::{composite_node, similarity_score, LossParts, LossWeights};
use crate::nn::{cosine_lr, NAdam, Params, Tape, Tensor, Var};
use crate::{losses, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    /// Fraction of samples used for training; the rest validate.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 300, lr0: 1e-3, lr_min: 1e-5, batch_size: 4, train_fraction: 0.9, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::validation("epochs must be positive"));
        }
        if !(0.0 < self.lr_min && self.lr_min < self.lr0 && self.lr0.is_finite()) {
            return Err(Error::validation("learning rates must satisfy 0 < lr_min < lr0"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch size must be at least 1"));
        }
        if !(0.0 < self.train_fraction && self.train_fraction <= 1.0) {
            return Err(Error::validation("train fraction must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Learning rate used throughout epoch `epoch`.
    pub fn lr(&self, epoch: usize) -> f64 {
        cosine_lr(epoch, self.epochs, self.lr0, self.lr_min)
    }
}

/// One corpus entry as the models see it.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub raster: GeometryRaster,
    pub material: MaterialProps,
    pub spectrum: Spectrum,
}

fn below(rng: &mut ChaCha8Rng, n: usize) -> usize {
    let n = n as u64;
    let zone = u64::MAX - u64::MAX % n;
    loop {
        let v = rng.next_u64();
        if v < zone {
            return (v % n) as usize;
        }
    }
}

fn shuffle(rng: &mut ChaCha8Rng, v: &mut [usize]) {
    for i in (1..v.len()).rev() {
        let j = below(rng, i + 1);
        v.swap(i, j);
    }
}

/// Seeded shuffle of `0..n` cut into `(train, validation)`, each sorted.
/// The training share is `round(n · train_fraction)`.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0 < train_fraction && train_fraction <= 1.0) {
        return Err(Error::validation("train fraction must lie in (0, 1]"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    shuffle(&mut ChaCha8Rng::seed_from_u64(seed), &mut idx);
    let k = ((n as f64 * train_fraction).round() as usize).min(n);
    let (mut a, mut b) = (idx[..k].to_vec(), idx[k..].to_vec());
    a.sort_unstable();
    b.sort_unstable();
    Ok((a, b))
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training objective over the epoch.
    pub loss: f64,
    pub mse: f64,
    /// Composite components; absent for the forward model.
    pub ssl: Option<f64>,
    pub mmd: Option<f64>,
    /// Validation objective, or the training objective when there is no
    /// validation set.
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Called after every epoch; returning `false` stops training early.
pub type EpochHook<'a> = &'a mut dyn FnMut(&EpochLog) -> bool;

fn batches(rng: &mut ChaCha8Rng, n: usize, size: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    shuffle(rng, &mut idx);
    idx.chunks(size).map(|c| c.to_vec()).collect()
}

fn finite(v: f64, what: &str, epoch: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical(alloc::format!("{what} became {v} in epoch {epoch}")))
    }
}

fn spectra_tensor(samples: &[&Sample], norm: &crate::forward::SpectrumNorm) -> Result<Tensor> {
    let bins = samples[0].spectrum.amp_db.len();
    let mut data = Vec::with_capacity(samples.len() * bins);
    for s in samples {
        data.extend(norm.normalize(&s.spectrum.amp_db));
    }
    Tensor::new(&[samples.len(), bins], data)
}

fn rasters_tensor(samples: &[&Sample]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(samples.len() * RASTER_H * RASTER_W);
    for s in samples {
        data.extend(s.raster.values().iter().map(|&v| v as f64));
    }
    Tensor::new(&[samples.len(), 1, RASTER_H, RASTER_W], data)
}

fn check_samples(samples: &[Sample], bins: usize) -> Result<()> {
    for (i, s) in samples.iter().enumerate() {
        if s.spectrum.amp_db.len() != bins {
            return Err(Error::validation(alloc::format!(
                "sample {i} has {} spectrum bins, the model expects {bins}",
                s.spectrum.amp_db.len()
            )));
        }
        if s.raster.height() != RASTER_H || s.raster.width() != RASTER_W {
            return Err(Error::validation(alloc::format!("sample {i} raster has the wrong size")));
        }
    }
    Ok(())
}

fn step_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    seed ^ ((epoch as u64) << 32 | batch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Forward-model MSE in normalized units, evaluation mode, averaged over
/// samples.
pub fn forward_loss(model: &ForwardModel, samples: &[Sample], batch: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::validation("no samples to evaluate"));
    }
    let mut total = 0.0;
    for chunk in samples.chunks(batch.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let rasters: Vec<&GeometryRaster> = refs.iter().map(|s| &s.raster).collect();
        let mats: Vec<MaterialProps> = refs.iter().map(|s| s.material).collect();
        let pred = model.predict_batch(&rasters, &mats)?;
        for (p, s) in pred.iter().zip(&refs) {
            total += losses::mse(p, &model.norm.spectrum.normalize(&s.spectrum.amp_db))?;
        }
    }
    Ok(total / samples.len() as f64)
}

/// Trains `model` with an MSE objective and keeps the parameters with the
/// lowest validation loss. `model.norm` must already hold the corpus
/// statistics.
pub fn train_forward(
    cfg: &TrainConfig,
    model: &mut ForwardModel,
    train: &[Sample],
    val: &[Sample],
    hook: EpochHook,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    let bins = model.config().out_bins;
    check_samples(train, bins)?;
    check_samples(val, bins)?;
    let mut opt = NAdam::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, f64, Params)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr(epoch);
        let mut sum = 0.0;
        for (bi, batch) in batches(&mut rng, train.len(), cfg.batch_size).into_iter().enumerate() {
            let refs: Vec<&Sample> = batch.iter().map(|&i| &train[i]).collect();
            let mut tape = Tape::new(true, step_seed(cfg.seed, epoch, bi));
            let b = model.bind(&mut tape, true);
            let rasters: Vec<&GeometryRaster> = refs.iter().map(|s| &s.raster).collect();
            let mats: Vec<MaterialProps> = refs.iter().map(|s| s.material).collect();
            let (r, m) = model.inputs(&mut tape, &rasters, &mats)?;
            let pred = model.graph(&mut tape, &b, r, m)?;
            let target = tape.constant(spectra_tensor(&refs, &model.norm.spectrum)?);
            let loss = tape.mse(pred, target)?;
            sum += finite(tape.value(loss).data[0], "training loss", epoch)? * refs.len() as f64;
            tape.backward(loss)?;
            opt.step(&mut model.params, &tape.param_grads(&b.vars), lr)?;
        }
        let loss = sum / train.len() as f64;
        let val_loss = if val.is_empty() { loss } else { forward_loss(model, val, cfg.batch_size)? };
        finite(val_loss, "validation loss", epoch)?;
        let row = EpochLog { epoch, lr, loss, mse: loss, ssl: None, mmd: None, val_loss };
        if best.as_ref().map_or(true, |b| val_loss < b.1) {
            best = Some((epoch, val_loss, model.params.clone()));
        }
        log.push(row);
        if !hook(&row) {
            break;
        }
    }
    let (best_epoch, best_val_loss, params) = best.expect("at least one epoch ran");
    model.params = params;
    Ok(TrainOutcome { log, best_epoch, best_val_loss })
}

/// Normalized spectra `[n, bins]` to rasters, then through the frozen
/// surrogate in evaluation mode. Returns `(x_pred, t_pred, s)`.
fn tandem(
    tape: &mut Tape,
    inv: &InverseModel,
    fwd: &ForwardModel,
    refs: &[&Sample],
    trainable: bool,
) -> Result<(Var, Var, Var, Vec<Var>)> {
    let bi = inv.bind(tape, trainable);
    let s = tape.constant(spectra_tensor(refs, &inv.norm.spectrum)?);
    let x = inv.graph(tape, &bi, s)?;
    let was = tape.is_training();
    tape.set_training(false);
    let bf = fwd.bind(tape, false);
    let mut m = Vec::with_capacity(refs.len() * 4);
    for r in refs {
        m.extend_from_slice(&fwd.norm.material.encode(&r.material)?);
    }
    let mat = tape.constant(Tensor::new(&[refs.len(), 4], m)?);
    let t = fwd.graph(tape, &bf, x, mat)?;
    tape.set_training(was);
    Ok((x, t, s, bi.vars))
}

/// Composite loss components of the tandem network, evaluation mode,
/// averaged over samples.
pub fn inverse_loss(
    inv: &InverseModel,
    fwd: &ForwardModel,
    samples: &[Sample],
    lw: &LossWeights,
    batch: usize,
) -> Result<LossParts> {
    if samples.is_empty() {
        return Err(Error::validation("no samples to evaluate"));
    }
    let mut acc = LossParts::default();
    for chunk in samples.chunks(batch.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let mut tape = Tape::new(false, 0);
        let (x, t, s, _) = tandem(&mut tape, inv, fwd, &refs, false)?;
        let (_, p) = composite_node(&mut tape, t, s, x, &rasters_tensor(&refs)?, lw)?;
        let k = refs.len() as f64;
        acc.mse += p.mse * k;
        acc.ssl += p.ssl * k;
        acc.mmd += p.mmd * k;
    }
    let n = samples.len() as f64;
    Ok(LossParts { mse: acc.mse / n, ssl: acc.ssl / n, mmd: acc.mmd / n })
}

/// Trains the inverse model through the frozen forward surrogate with the
/// composite objective. The inverse model adopts the surrogate's
/// normalization.
pub fn train_inverse(
    cfg: &TrainConfig,
    inv: &mut InverseModel,
    fwd: &ForwardModel,
    lw: &LossWeights,
    train: &[Sample],
    val: &[Sample],
    hook: EpochHook,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    lw.validate()?;
    if train.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    let bins = inv.config().seq_len;
    if fwd.config().out_bins != bins {
        return Err(Error::Config(alloc::format!(
            "surrogate predicts {} bins but the inverse model reads {bins}",
            fwd.config().out_bins
        )));
    }
    check_samples(train, bins)?;
    check_samples(val, bins)?;
    inv.norm = fwd.norm.clone();
    let mut opt = NAdam::new(&inv.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, f64, Params)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr(epoch);
        let mut acc = LossParts::default();
        for (bi, batch) in batches(&mut rng, train.len(), cfg.batch_size).into_iter().enumerate() {
            let refs: Vec<&Sample> = batch.iter().map(|&i| &train[i]).collect();
            let mut tape = Tape::new(true, step_seed(cfg.seed, epoch, bi));
            let (x, t, s, vars) = tandem(&mut tape, inv, fwd, &refs, true)?;
            let (loss, p) = composite_node(&mut tape, t, s, x, &rasters_tensor(&refs)?, lw)?;
            finite(tape.value(loss).data[0], "training loss", epoch)?;
            let k = refs.len() as f64;
            acc.mse += p.mse * k;
            acc.ssl += p.ssl * k;
            acc.mmd += p.mmd * k;
            tape.backward(loss)?;
            opt.step(&mut inv.params, &tape.param_grads(&vars), lr)?;
        }
        let n = train.len() as f64;
        let parts = LossParts { mse: acc.mse / n, ssl: acc.ssl / n, mmd: acc.mmd / n };
        let loss = parts.total(lw);
        let val_loss = if val.is_empty() { loss } else { inverse_loss(inv, fwd, val, lw, cfg.batch_size)?.total(lw) };
        finite(val_loss, "validation loss", epoch)?;
        let row =
            EpochLog { epoch, lr, loss, mse: parts.mse, ssl: Some(parts.ssl), mmd: Some(parts.mmd), val_loss };
        if best.as_ref().map_or(true, |b| val_loss < b.1) {
            best = Some((epoch, val_loss, inv.params.clone()));
        }
        log.push(row);
        if !hook(&row) {
            break;
        }
    }
    let (best_epoch, best_val_loss, params) = best.expect("at least one epoch ran");
    inv.params = params;
    Ok(TrainOutcome { log, best_epoch, best_val_loss })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    /// Also simulate every denoised design with the frame solver.
    pub use_fem: bool,
    pub denoise: DenoiseOptions,
    pub weights: LossWeights,
    pub pixel_frame: PixelFrameOptions,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            use_fem: false,
            denoise: DenoiseOptions::default(),
            weights: LossWeights::default(),
            pixel_frame: PixelFrameOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub index: usize,
    pub similarity: f64,
    pub mse_forward_original: f64,
    pub mse_forward_generated: f64,
    pub mse_fem_generated: Option<f64>,
    /// Why the solver could not score the design, if it was asked to.
    pub fem_error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean_similarity: f64,
    pub mean_mse_forward_original: f64,
    pub mean_mse_forward_generated: f64,
    /// Over the rows the solver could score.
    pub mean_mse_fem_generated: Option<f64>,
}

/// Designs a raster for each sample's spectrum, denoises it, and scores it
/// against the sample. All MSEs are in the surrogate's normalized units.
pub fn evaluate(fwd: &ForwardModel, inv: &InverseModel, samples: &[Sample], opts: &EvalOptions) -> Result<EvalReport> {
    let norm = &fwd.norm.spectrum;
    let mut rows = Vec::with_capacity(samples.len());
    for (index, s) in samples.iter().enumerate() {
        let target = norm.normalize(&s.spectrum.amp_db);
        let generated = denoise_with(&inv.design(&s.spectrum)?, &opts.denoise)?;
        let to64 = |r: &GeometryRaster| r.values().iter().map(|&v| v as f64).collect::<Vec<_>>();
        let similarity = similarity_score(&to64(&generated), &to64(&s.raster), RASTER_H, RASTER_W, &opts.weights)?;
        let mse_forward_original = losses::mse(&fwd.predict(&s.raster, &s.material)?, &target)?;
        let mse_forward_generated = losses::mse(&fwd.predict(&generated, &s.material)?, &target)?;
        let (mut mse_fem_generated, mut fem_error) = (None, None);
        if opts.use_fem {
            match raster_to_graph(&generated, &opts.pixel_frame).and_then(|g| simulate(&g, &s.material)) {
                Ok(spec) => mse_fem_generated = Some(losses::mse(&norm.normalize(&spec.amp_db), &target)?),
                Err(e) => fem_error = Some(alloc::format!("{e}")),
            }
        }
        rows.push(EvalRow {
            index,
            similarity,
            mse_forward_original,
            mse_forward_generated,
            mse_fem_generated,
            fem_error,
        });
    }
    let mean = |f: &dyn Fn(&EvalRow) -> f64| {
        if rows.is_empty() {
            f64::NAN
        } else {
            rows.iter().map(f).sum::<f64>() / rows.len() as f64
        }
    };
    let fem: Vec<f64> = rows.iter().filter_map(|r| r.mse_fem_generated).collect();
    Ok(EvalReport {
        mean_similarity: mean(&|r| r.similarity),
        mean_mse_forward_original: mean(&|r| r.mse_forward_original),
        mean_mse_forward_generated: mean(&|r| r.mse_forward_generated),
        mean_mse_fem_generated: (!fem.is_empty()).then(|| fem.iter().sum::<f64>() / fem.len() as f64),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{ForwardConfig, SpectrumNorm};
    use crate::inverse::InverseConfig;
    use crate::lattice::{build_panel, rasterize, LatticeSpec, RasterOptions};
    use proptest::prelude::*;

    fn tiny_forward() -> ForwardConfig {
        ForwardConfig {
            gfe_blocks: 1,
            head_alphas: vec![1, 3],
            channels: 2,
            hidden: 8,
            input_pool: 8,
            pooled_grid: (2, 4),
            dropout: 0.1,
            ..ForwardConfig::default()
        }
    }

    fn tiny_inverse() -> InverseConfig {
        InverseConfig {
            d_model: 4,
            attn_heads: 2,
            latent_rank: 2,
            refine_channels: 2,
            decode_channels: vec![2, 2, 1],
            pe_init: crate::inverse::PeInit::LogMidpoint,
            ..InverseConfig::default()
        }
    }

    fn samples(n: usize) -> Vec<Sample> {
        let r = rasterize(&build_panel(&LatticeSpec::ls1()).unwrap(), &RasterOptions::default());
        (0..n)
            .map(|i| {
                let k = i as f64;
                Sample {
                    raster: r.clone(),
                    material: MaterialProps::pla(),
                    spectrum: Spectrum::from_fn(|f| 10.0 * crate::math::sin(f / (700.0 + 90.0 * k)) - 0.002 * f).unwrap(),
                }
            })
            .collect()
    }

    fn fitted(cfg: ForwardConfig, data: &[Sample]) -> ForwardModel {
        let mut m = ForwardModel::new(cfg).unwrap();
        m.norm.spectrum = SpectrumNorm::fit(data.iter().map(|s| s.spectrum.amp_db.as_slice())).unwrap();
        m
    }

    #[test]
    fn default_split_sizes() {
        let (a, b) = split_indices(720, 0.9, 0).unwrap();
        assert_eq!((a.len(), b.len()), (648, 72));
        let (c, d) = split_indices(720, 0.9, 0).unwrap();
        assert_eq!((a.clone(), b.clone()), (c, d));
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..720).collect::<Vec<_>>());
        assert_ne!(split_indices(720, 0.9, 1).unwrap().1, b);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lr_min: 1e-2, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        let c = TrainConfig::default();
        assert_eq!(c.lr(0), c.lr0);
        assert!((cosine_lr(c.epochs, c.epochs, c.lr0, c.lr_min) - c.lr_min).abs() < 1e-18);
        assert!((1..c.epochs).all(|t| c.lr(t) <= c.lr(t - 1)));
    }

    #[test]
    fn forward_training_logs_every_epoch_and_keeps_the_best() {
        let data = samples(6);
        let mut m = fitted(tiny_forward(), &data);
        let cfg = TrainConfig { epochs: 4, batch_size: 3, lr0: 3e-3, ..TrainConfig::default() };
        let mut seen = 0;
        let out = train_forward(&cfg, &mut m, &data[..4], &data[4..], &mut |_| {
            seen += 1;
            true
        })
        .unwrap();
        assert_eq!((out.log.len(), seen), (4, 4));
        assert!(out.log.iter().all(|r| out.best_val_loss <= r.val_loss));
        assert_eq!(out.log[out.best_epoch].val_loss, out.best_val_loss);
        assert_eq!(forward_loss(&m, &data[4..], 2).unwrap(), out.best_val_loss);
    }

    #[test]
    fn forward_training_is_deterministic_and_reduces_loss() {
        let data = samples(4);
        let cfg = TrainConfig { epochs: 6, batch_size: 4, lr0: 1e-2, lr_min: 1e-4, ..TrainConfig::default() };
        let run = || {
            let mut m = fitted(tiny_forward(), &data);
            let out = train_forward(&cfg, &mut m, &data, &[], &mut |_| true).unwrap();
            (out.log, m.params)
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert!(a.last().unwrap().loss < a[0].loss);
    }

    #[test]
    fn hook_can_stop_training() {
        let data = samples(2);
        let mut m = fitted(tiny_forward(), &data);
        let cfg = TrainConfig { epochs: 50, batch_size: 2, ..TrainConfig::default() };
        let out = train_forward(&cfg, &mut m, &data, &[], &mut |r| r.epoch < 2).unwrap();
        assert_eq!(out.log.len(), 3);
    }

    #[test]
    fn divergence_is_reported() {
        let mut data = samples(2);
        data[0].spectrum.amp_db[3] = f64::NAN;
        let mut m = ForwardModel::new(tiny_forward()).unwrap();
        let cfg = TrainConfig { epochs: 1, batch_size: 2, ..TrainConfig::default() };
        assert!(matches!(train_forward(&cfg, &mut m, &data, &[], &mut |_| true), Err(Error::Numerical(_))));
    }

    #[test]
    fn inverse_training_freezes_the_surrogate_and_logs_the_composite() {
        let data = samples(3);
        let fwd = fitted(tiny_forward(), &data);
        let before = fwd.params.clone();
        let mut inv = InverseModel::new(tiny_inverse()).unwrap();
        let lw = LossWeights::default();
        let cfg = TrainConfig { epochs: 2, batch_size: 2, ..TrainConfig::default() };
        let out = train_inverse(&cfg, &mut inv, &fwd, &lw, &data[..2], &data[2..], &mut |_| true).unwrap();
        assert_eq!(fwd.params, before);
        assert_eq!(inv.norm, fwd.norm);
        assert_eq!(out.log.len(), 2);
        for r in &out.log {
            assert_eq!(r.loss, r.mse + 0.1 * r.ssl.unwrap() + 0.6 * r.mmd.unwrap());
        }
        let v = inverse_loss(&inv, &fwd, &data[2..], &lw, 2).unwrap();
        assert_eq!(v.total(&lw), out.best_val_loss);
    }

    #[test]
    fn evaluation_report_has_every_column() {
        let data = samples(2);
        let fwd = fitted(tiny_forward(), &data);
        let mut inv = InverseModel::new(tiny_inverse()).unwrap();
        inv.norm = fwd.norm.clone();
        let rep = evaluate(&fwd, &inv, &data, &EvalOptions { use_fem: true, ..EvalOptions::default() }).unwrap();
        assert_eq!(rep.rows.len(), 2);
        for r in &rep.rows {
            assert!(r.similarity.is_finite() && r.mse_forward_original >= 0.0 && r.mse_forward_generated >= 0.0);
            assert!(r.mse_fem_generated.is_some() || r.fem_error.is_some());
        }
        assert!(rep.mean_similarity.is_finite());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn split_is_a_partition(n in 1usize..400, frac in 0.05f64..1.0, seed in any::<u64>()) {
            let (a, b) = split_indices(n, frac, seed).unwrap();
            prop_assert_eq!(a.len() + b.len(), n);
            prop_assert!(a.iter().all(|i| b.binary_search(i).is_err()));
            prop_assert_eq!(a.len(), ((n as f64 * frac).round() as usize).min(n));
        }
    }
}
