//! The `interlace` command-line tool.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use interlace_core::analysis::{
    compare_spectra, corpus_mean, denoise_with, in_band_attenuation, material_pixels, synthesize_target, Baseline,
    DenoiseOptions, NotchSpec, SpectrumComparison, DEFAULT_EDGE_WIDTH_HZ,
};
use interlace_core::fem::{detect_bandgaps, simulate, Bandgap, MaterialProps, Spectrum, DEFAULT_MIN_WIDTH_HZ, DEFAULT_THRESHOLD_DB};
use interlace_core::forward::ForwardModel;
use interlace_core::inverse::InverseModel;
use interlace_core::lattice::{raster_to_graph, GeometryRaster, PixelFrameOptions, RASTER_H, RASTER_W};
use interlace_core::losses::{similarity_score, LossWeights};
use interlace_core::train::{evaluate, split_indices, train_forward, train_inverse, EpochLog, EvalOptions, Sample, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::dataset::{self, GenOptions};
use crate::formats::{
    read_json, read_raster_f32, read_raster_png, read_spectrum_csv, sha256_file, write_csv, write_json,
    write_raster_f32, write_raster_png, write_spectrum_csv,
};
use crate::plots::{emit_plots, EvalCsvRow};
use crate::runs::{
    self, forward_preset, inverse_preset, overlay, ConfigFile, Preset, RunConfig, RunSummary, CONFIG_FILE, FORWARD_CKPT,
    INVERSE_CKPT,
};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "interlace", version, about = "Design interlaced metastructures for target bandgaps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags every command accepts.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON file with optional `preset`, `train`, `forward`, `inverse` and
    /// `loss` sections. Explicit flags win over the file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Single-threaded, bit-reproducible execution.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate (or resume) a corpus of panels and their spectra.
    GenDataset(GenArgs),
    /// Train the surrogate that predicts spectra from rasters.
    TrainForward(TrainArgs),
    /// Train the inverse model through a frozen surrogate.
    TrainInverse(TrainArgs),
    /// Generate a structure for a target spectrum.
    Design(DesignArgs),
    /// Score an inverse model on corpus samples.
    Eval(EvalArgs),
    /// Redraw the figures of a run or design directory.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 720)]
    pub n: usize,
    /// Material JSON with fields `E`, `rho`, `nu`, `d`; PLA when absent.
    #[arg(long)]
    pub material: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Generate only these corpus indices (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub only: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr0: Option<f64>,
    #[arg(long)]
    pub lr_min: Option<f64>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long, value_enum)]
    pub model: Option<Preset>,
    /// Surrogate checkpoint (inverse training only).
    #[arg(long)]
    pub forward_ckpt: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    Flat,
    CorpusMean,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    #[command(flatten)]
    pub common: Common,
    /// Target spectrum CSV (`freq_hz,amp_db`).
    #[arg(long, conflicts_with = "notch")]
    pub spectrum: Option<PathBuf>,
    /// Requested notch `f_lo:f_hi:depth_db`; repeatable.
    #[arg(long, allow_hyphen_values = true)]
    pub notch: Vec<String>,
    #[arg(long, value_enum, default_value = "flat")]
    pub baseline: BaselineArg,
    /// Dataset directory, needed for the corpus-mean baseline.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_EDGE_WIDTH_HZ)]
    pub edge_width: f64,
    #[arg(long)]
    pub inverse_ckpt: PathBuf,
    #[arg(long)]
    pub forward_ckpt: PathBuf,
    #[arg(long)]
    pub material: Option<PathBuf>,
    /// Also simulate the denoised structure with the frame solver.
    #[arg(long)]
    pub verify_fem: bool,
    /// Raster (`.png` or `.f32`) the design is scored against.
    #[arg(long)]
    pub reference_raster: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD_DB, allow_hyphen_values = true)]
    pub gap_threshold: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_WIDTH_HZ)]
    pub gap_min_width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Val,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub forward_ckpt: PathBuf,
    #[arg(long)]
    pub inverse_ckpt: PathBuf,
    #[arg(long, value_enum, default_value = "val")]
    pub split: Split,
    /// Used when the inverse run directory does not record its split.
    #[arg(long, default_value_t = 0.9)]
    pub train_fraction: f64,
    /// Also simulate every denoised design.
    #[arg(long)]
    pub fem: bool,
    /// Evaluate at most this many samples.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Directory holding `train_log.csv`, design spectra or `eval.csv`.
    #[arg(long)]
    pub run: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenDataset(a) => gen_dataset(&a),
        Command::TrainForward(a) => train_forward_cmd(&a),
        Command::TrainInverse(a) => train_inverse_cmd(&a),
        Command::Design(a) => design(&a),
        Command::Eval(a) => eval(&a),
        Command::Analyze(a) => emit_plots(&a.run).map(|_| ()),
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn load_material(p: Option<&Path>) -> Result<MaterialProps> {
    let m = match p {
        Some(p) => read_json(p)?,
        None => MaterialProps::pla(),
    };
    m.validate()?;
    Ok(m)
}

fn gen_dataset(a: &GenArgs) -> Result<()> {
    let jobs = if a.common.deterministic {
        1
    } else {
        a.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    };
    let opts = GenOptions {
        out: a.common.out.clone(),
        n: a.n,
        seed: a.common.seed,
        material: load_material(a.material.as_deref())?,
        jobs,
        only: a.only.clone(),
    };
    let (m, stats) = dataset::generate(&opts)?;
    log::info!(
        "{} samples: {} generated, {} reused, {} quarantined; corpus {}",
        m.samples.len(),
        stats.generated,
        stats.reused,
        stats.quarantined,
        m.corpus_sha256
    );
    Ok(())
}

fn train_config(a: &TrainArgs, file: &ConfigFile) -> Result<TrainConfig> {
    let mut t: TrainConfig = overlay(&TrainConfig { seed: a.common.seed, ..TrainConfig::default() }, file.train.as_ref(), "train")?;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.lr0 {
        t.lr0 = v;
    }
    if let Some(v) = a.lr_min {
        t.lr_min = v;
    }
    if let Some(v) = a.train_fraction {
        t.train_fraction = v;
    }
    t.validate()?;
    Ok(t)
}

fn pick(samples: &[Sample], idx: &[usize]) -> Vec<Sample> {
    idx.iter().map(|&i| samples[i].clone()).collect()
}

fn progress(what: &'static str) -> impl FnMut(&EpochLog) -> bool {
    move |r: &EpochLog| {
        log::info!("{what} epoch {} lr {:.3e} loss {:.5} val {:.5}", r.epoch, r.lr, r.loss, r.val_loss);
        true
    }
}

struct Prepared {
    data: dataset::Dataset,
    file: ConfigFile,
    train: TrainConfig,
    preset: Preset,
    train_idx: Vec<usize>,
    val_idx: Vec<usize>,
}

fn prepare(a: &TrainArgs) -> Result<Prepared> {
    let file = ConfigFile::load(a.common.config.as_deref())?;
    let train = train_config(a, &file)?;
    let preset = a.model.or(file.preset).unwrap_or(Preset::Full);
    let data = dataset::load(&a.data)?;
    let (train_idx, val_idx) = split_indices(data.samples.len(), train.train_fraction, train.seed)?;
    create_dir(&a.common.out)?;
    Ok(Prepared { data, file, train, preset, train_idx, val_idx })
}

fn finish(out: &Path, log: &[EpochLog], best_epoch: usize, best_val_loss: f64, ckpt_sha: String) -> Result<()> {
    runs::write_log(out, log)?;
    let summary = RunSummary {
        epochs_run: log.len(),
        best_epoch,
        best_val_loss,
        final_loss: log.last().map_or(f64::NAN, |r| r.loss),
        checkpoint_sha256: ckpt_sha,
    };
    write_json(&out.join("summary.json"), &summary)?;
    emit_plots(out)?;
    Ok(())
}

fn train_forward_cmd(a: &TrainArgs) -> Result<()> {
    if a.forward_ckpt.is_some() {
        return Err(interlace_core::Error::validation("--forward-ckpt only applies to train-inverse").into());
    }
    let p = prepare(a)?;
    let cfg = overlay(&forward_preset(p.preset), p.file.forward.as_ref(), "forward")?;
    let mut model = ForwardModel::new(cfg.clone())?;
    model.norm = p.data.manifest.normalization.clone();
    let rc = RunConfig {
        command: "train-forward".into(),
        data: a.data.clone(),
        corpus_sha256: p.data.manifest.corpus_sha256.clone(),
        deterministic: a.common.deterministic,
        train: p.train.clone(),
        forward: Some(cfg.clone()),
        inverse: None,
        loss: None,
        fingerprint: format!("{:016x}", cfg.fingerprint()),
        forward_ckpt_sha256: None,
        train_indices: p.train_idx.clone(),
        val_indices: p.val_idx.clone(),
    };
    write_json(&a.common.out.join(CONFIG_FILE), &rc)?;
    let (tr, va) = (pick(&p.data.samples, &p.train_idx), pick(&p.data.samples, &p.val_idx));
    let mut hook = progress("forward");
    let outcome = train_forward(&p.train, &mut model, &tr, &va, &mut hook)?;
    let sha = runs::save_checkpoint(&a.common.out.join(FORWARD_CKPT), &model.to_bytes())?;
    finish(&a.common.out, &outcome.log, outcome.best_epoch, outcome.best_val_loss, sha)
}

fn train_inverse_cmd(a: &TrainArgs) -> Result<()> {
    let fpath = a
        .forward_ckpt
        .as_deref()
        .ok_or_else(|| Error::Missing("--forward-ckpt (train-inverse needs a trained surrogate)".into()))?;
    let fwd = runs::load_forward(fpath, None)?;
    let p = prepare(a)?;
    if fwd.norm != p.data.manifest.normalization {
        return Err(interlace_core::Error::Config(format!(
            "{} was trained on a corpus with different normalization statistics",
            fpath.display()
        ))
        .into());
    }
    let cfg = overlay(&inverse_preset(p.preset), p.file.inverse.as_ref(), "inverse")?;
    let lw: LossWeights = overlay(&LossWeights::default(), p.file.loss.as_ref(), "loss")?;
    let mut inv = InverseModel::new(cfg.clone())?;
    let rc = RunConfig {
        command: "train-inverse".into(),
        data: a.data.clone(),
        corpus_sha256: p.data.manifest.corpus_sha256.clone(),
        deterministic: a.common.deterministic,
        train: p.train.clone(),
        forward: Some(fwd.config().clone()),
        inverse: Some(cfg.clone()),
        loss: Some(lw.clone()),
        fingerprint: format!("{:016x}", cfg.fingerprint()),
        forward_ckpt_sha256: Some(sha256_file(fpath)?),
        train_indices: p.train_idx.clone(),
        val_indices: p.val_idx.clone(),
    };
    write_json(&a.common.out.join(CONFIG_FILE), &rc)?;
    let (tr, va) = (pick(&p.data.samples, &p.train_idx), pick(&p.data.samples, &p.val_idx));
    let mut hook = progress("inverse");
    let outcome = train_inverse(&p.train, &mut inv, &fwd, &lw, &tr, &va, &mut hook)?;
    let sha = runs::save_checkpoint(&a.common.out.join(INVERSE_CKPT), &inv.to_bytes())?;
    finish(&a.common.out, &outcome.log, outcome.best_epoch, outcome.best_val_loss, sha)
}

fn load_pair(fpath: &Path, ipath: &Path) -> Result<(ForwardModel, InverseModel)> {
    let fwd = runs::load_forward(fpath, None)?;
    let inv = runs::load_inverse(ipath, None)?;
    runs::check_pair(fpath, &fwd, ipath, &inv)?;
    Ok((fwd, inv))
}

fn read_raster(p: &Path) -> Result<GeometryRaster> {
    match p.extension().and_then(|e| e.to_str()) {
        Some("png") => read_raster_png(p),
        _ => read_raster_f32(p, RASTER_H, RASTER_W),
    }
}

fn to_f64(r: &GeometryRaster) -> Vec<f64> {
    r.values().iter().map(|&v| v as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NotchReport {
    pub f_lo: f64,
    pub f_hi: f64,
    pub depth_db: f64,
    /// Attenuation of the surrogate prediction inside the band, dB.
    pub surrogate_attenuation_db: f64,
    pub fem_attenuation_db: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub target: String,
    pub material: MaterialProps,
    pub material_px_raw: usize,
    pub material_px_denoised: usize,
    pub requested_gaps: Vec<Bandgap>,
    pub surrogate_gaps: Vec<Bandgap>,
    pub surrogate: SpectrumComparison,
    pub fem_gaps: Option<Vec<Bandgap>>,
    pub fem: Option<SpectrumComparison>,
    pub fem_error: Option<String>,
    pub notches: Vec<NotchReport>,
    /// Similarity of the denoised design to `--reference-raster`.
    pub similarity: Option<f64>,
    /// IoU of the requested gaps with the best verified gaps available.
    pub gap_iou: f64,
}

fn design(a: &DesignArgs) -> Result<()> {
    let (fwd, inv) = load_pair(&a.forward_ckpt, &a.inverse_ckpt)?;
    let material = load_material(a.material.as_deref())?;
    let (target, label, notches) = match (&a.spectrum, a.notch.is_empty()) {
        (Some(p), true) => (read_spectrum_csv(p)?, p.display().to_string(), Vec::new()),
        (None, false) => {
            let mut ns = Vec::new();
            for s in &a.notch {
                let mut n: NotchSpec = s.parse()?;
                n.edge_width_hz = a.edge_width;
                n.validate()?;
                ns.push(n);
            }
            let baseline = match a.baseline {
                BaselineArg::Flat => Baseline::Flat,
                BaselineArg::CorpusMean => {
                    let dir = a
                        .data
                        .as_deref()
                        .ok_or_else(|| Error::Missing("--data for the corpus-mean baseline".into()))?;
                    let d = dataset::load(dir)?;
                    let spectra: Vec<Spectrum> = d.samples.into_iter().map(|s| s.spectrum).collect();
                    Baseline::Curve(corpus_mean(&spectra)?)
                }
            };
            (synthesize_target(&baseline, &ns)?, a.notch.join(" "), ns)
        }
        _ => return Err(interlace_core::Error::validation("give either --spectrum or at least one --notch").into()),
    };
    let out = &a.common.out;
    create_dir(out)?;
    let raw = inv.design(&target)?;
    let denoised = denoise_with(&raw, &DenoiseOptions::default())?;
    let predicted = Spectrum::new(fwd.predict_db(&denoised, &material)?)?;
    write_spectrum_csv(&out.join("target.csv"), &target)?;
    write_raster_png(&out.join("raw.png"), &raw)?;
    write_raster_f32(&out.join("raw.f32"), &raw)?;
    write_raster_png(&out.join("denoised.png"), &denoised)?;
    write_raster_f32(&out.join("denoised.f32"), &denoised)?;
    write_spectrum_csv(&out.join("predicted.csv"), &predicted)?;

    let gaps = |s: &Spectrum| detect_bandgaps(s, a.gap_threshold, a.gap_min_width);
    let norm = &fwd.norm.spectrum;
    let (mut fem_spec, mut fem_error) = (None, None);
    if a.verify_fem {
        match raster_to_graph(&denoised, &PixelFrameOptions::default()).and_then(|g| simulate(&g, &material)) {
            Ok(s) => {
                write_spectrum_csv(&out.join("fem.csv"), &s)?;
                fem_spec = Some(s);
            }
            Err(e) => {
                log::warn!("the solver could not score the design: {e}");
                fem_error = Some(e.to_string());
            }
        }
    }
    let requested_gaps = gaps(&target);
    let surrogate_gaps = gaps(&predicted);
    let fem_gaps = fem_spec.as_ref().map(gaps);
    let mut notch_rows = Vec::new();
    for n in &notches {
        notch_rows.push(NotchReport {
            f_lo: n.f_lo,
            f_hi: n.f_hi,
            depth_db: n.depth_db,
            surrogate_attenuation_db: in_band_attenuation(&predicted, n.f_lo, n.f_hi)?,
            fem_attenuation_db: fem_spec.as_ref().map(|s| in_band_attenuation(s, n.f_lo, n.f_hi)).transpose()?,
        });
    }
    let similarity = match &a.reference_raster {
        Some(p) => {
            let r = read_raster(p)?;
            Some(similarity_score(&to_f64(&denoised), &to_f64(&r), RASTER_H, RASTER_W, &LossWeights::default())?)
        }
        None => None,
    };
    let gap_iou = interlace_core::analysis::gap_iou(&requested_gaps, fem_gaps.as_deref().unwrap_or(&surrogate_gaps));
    let report = DesignReport {
        target: label,
        material,
        material_px_raw: material_pixels(&raw),
        material_px_denoised: material_pixels(&denoised),
        surrogate: compare_spectra(&target, &predicted, norm)?,
        fem: fem_spec.as_ref().map(|s| compare_spectra(&target, s, norm)).transpose()?,
        requested_gaps,
        surrogate_gaps,
        fem_gaps,
        fem_error,
        notches: notch_rows,
        similarity,
        gap_iou,
    };
    write_json(&out.join("report.json"), &report)?;
    emit_plots(out)?;
    log::info!("design written to {}; gap IoU {:.3}", out.display(), report.gap_iou);
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub split: String,
    pub samples: usize,
    pub mean_similarity: f64,
    pub mean_mse_forward_original: f64,
    pub mean_mse_forward_generated: f64,
    pub mean_mse_fem_generated: Option<f64>,
    pub fem_failures: Vec<usize>,
}

fn eval(a: &EvalArgs) -> Result<()> {
    let (fwd, inv) = load_pair(&a.forward_ckpt, &a.inverse_ckpt)?;
    let data = dataset::load(&a.data)?;
    let recorded: Option<RunConfig> = match a.inverse_ckpt.parent().map(|d| d.join(CONFIG_FILE)) {
        Some(p) if p.exists() => Some(read_json(&p)?),
        _ => None,
    };
    let mut idx = match a.split {
        Split::All => (0..data.samples.len()).collect(),
        Split::Val => match recorded {
            Some(rc) if rc.corpus_sha256 == data.manifest.corpus_sha256 => rc.val_indices,
            _ => split_indices(data.samples.len(), a.train_fraction, a.common.seed)?.1,
        },
    };
    if let Some(k) = a.limit {
        idx.truncate(k);
    }
    if idx.is_empty() {
        return Err(interlace_core::Error::validation("no samples to evaluate").into());
    }
    let samples = pick(&data.samples, &idx);
    let opts = EvalOptions { use_fem: a.fem, ..EvalOptions::default() };
    let rep = evaluate(&fwd, &inv, &samples, &opts)?;
    let out = &a.common.out;
    create_dir(out)?;
    let rows: Vec<EvalCsvRow> = rep
        .rows
        .iter()
        .map(|r| EvalCsvRow {
            sample: idx[r.index],
            similarity: r.similarity,
            mse_forward_original: r.mse_forward_original,
            mse_forward_generated: r.mse_forward_generated,
            mse_fem_generated: r.mse_fem_generated,
        })
        .collect();
    write_csv(&out.join("eval.csv"), &rows)?;
    let summary = EvalSummary {
        split: format!("{:?}", a.split).to_lowercase(),
        samples: rows.len(),
        mean_similarity: rep.mean_similarity,
        mean_mse_forward_original: rep.mean_mse_forward_original,
        mean_mse_forward_generated: rep.mean_mse_forward_generated,
        mean_mse_fem_generated: rep.mean_mse_fem_generated,
        fem_failures: rep.rows.iter().filter(|r| r.fem_error.is_some()).map(|r| idx[r.index]).collect(),
    };
    write_json(&out.join("eval.json"), &summary)?;
    emit_plots(out)?;
    log::info!("mean similarity {:.4} over {} samples", summary.mean_similarity, summary.samples);
    Ok(())
}
