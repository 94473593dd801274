//! Corpus generation and loading.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! manifest.json          specs, file hashes, normalization statistics
//! material.json
//! samples/00000/         spec.json raster.png raster.f32 spectrum.csv sample.json
//! quarantine/            incomplete sample directories found on resume
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use interlace_core::fem::{simulate, MaterialProps};
use interlace_core::forward::{Normalization, SpectrumNorm};
use interlace_core::lattice::{build_panel, enumerate_dataset, rasterize, LatticeSpec, RasterOptions, RASTER_H, RASTER_W};
use interlace_core::train::Sample;
use serde::{Deserialize, Serialize};

use crate::formats::{self, read_json, sha256_file, sha256_hex, to_json, write_json};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;
const SAMPLE_FILES: [&str; 4] = ["spec.json", "raster.png", "raster.f32", "spectrum.csv"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    /// Relative to the dataset directory.
    pub dir: String,
    pub spec_sha256: String,
    pub material: MaterialProps,
    /// SHA-256 of each sample file.
    pub files: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    pub n: usize,
    pub material: MaterialProps,
    pub raster_height: usize,
    pub raster_width: usize,
    pub normalization: Normalization,
    pub samples: Vec<SampleRecord>,
    /// SHA-256 over every sample record; equal corpora have equal hashes.
    pub corpus_sha256: String,
}

#[derive(Clone, Debug)]
pub struct GenOptions {
    pub out: PathBuf,
    pub n: usize,
    pub seed: u64,
    pub material: MaterialProps,
    pub jobs: usize,
    /// Restricts generation to these corpus indices (all when `None`).
    pub only: Option<Vec<usize>>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GenStats {
    pub generated: usize,
    pub reused: usize,
    pub quarantined: usize,
}

fn sample_dir_name(i: usize) -> String {
    format!("{i:05}")
}

fn spec_hash(spec: &LatticeSpec) -> String {
    sha256_hex(&to_json(spec))
}

/// Builds one sample and its files in memory.
pub fn build_sample(spec: &LatticeSpec, material: &MaterialProps) -> Result<(Sample, Vec<(&'static str, Vec<u8>)>)> {
    let g = build_panel(spec)?;
    let raster = rasterize(&g, &RasterOptions::default());
    let spectrum = simulate(&g, material)?;
    let files = vec![
        ("spec.json", to_json(spec)),
        ("raster.png", formats::raster_png(&raster)),
        ("raster.f32", formats::raster_f32(&raster)),
        ("spectrum.csv", formats::spectrum_csv(&spectrum)),
    ];
    Ok((Sample { raster, material: *material, spectrum }, files))
}

fn write_sample(root: &Path, index: usize, spec: &LatticeSpec, material: &MaterialProps) -> Result<SampleRecord> {
    let (_, files) = build_sample(spec, material)?;
    let name = sample_dir_name(index);
    let tmp = root.join("samples").join(format!(".{name}.tmp"));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut hashes = BTreeMap::new();
    for (file, bytes) in &files {
        let p = tmp.join(file);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        hashes.insert(file.to_string(), sha256_hex(bytes));
    }
    let record = SampleRecord {
        index,
        dir: format!("samples/{name}"),
        spec_sha256: spec_hash(spec),
        material: *material,
        files: hashes,
    };
    write_json(&tmp.join("sample.json"), &record)?;
    let dst = root.join(&record.dir);
    fs::rename(&tmp, &dst).map_err(|e| Error::io(&dst, e))?;
    Ok(record)
}

/// The existing record for sample `index` if every file is present and
/// matches its hash and the requested spec and material.
fn completed(root: &Path, index: usize, spec: &LatticeSpec, material: &MaterialProps) -> Option<SampleRecord> {
    let dir = root.join("samples").join(sample_dir_name(index));
    let rec: SampleRecord = read_json(&dir.join("sample.json")).ok()?;
    if rec.index != index || rec.spec_sha256 != spec_hash(spec) || rec.material != *material {
        return None;
    }
    for f in SAMPLE_FILES {
        if rec.files.get(f)? != &sha256_file(&dir.join(f)).ok()? {
            return None;
        }
    }
    Some(rec)
}

fn quarantine(root: &Path, dir: &Path) -> Result<()> {
    let q = root.join("quarantine");
    fs::create_dir_all(&q).map_err(|e| Error::io(&q, e))?;
    let base = dir.file_name().and_then(|n| n.to_str()).unwrap_or("sample").trim_start_matches('.').to_string();
    let mut k = 0;
    let dst = loop {
        let d = q.join(format!("{base}-{k}"));
        if !d.exists() {
            break d;
        }
        k += 1;
    };
    log::warn!("quarantining incomplete sample {}", dir.display());
    fs::rename(dir, &dst).map_err(|e| Error::io(dir, e))
}

fn corpus_hash(samples: &[SampleRecord]) -> String {
    let mut bytes = Vec::new();
    for s in samples {
        bytes.extend(to_json(s));
    }
    sha256_hex(&bytes)
}

/// Generates (or completes) a dataset directory. Samples whose files
/// already match are reused; anything partial is quarantined and rebuilt.
pub fn generate(opts: &GenOptions) -> Result<(Manifest, GenStats)> {
    opts.material.validate()?;
    if opts.n == 0 {
        return Err(interlace_core::Error::validation("dataset needs at least one sample").into());
    }
    let root = &opts.out;
    let samples_dir = root.join("samples");
    fs::create_dir_all(&samples_dir).map_err(|e| Error::io(&samples_dir, e))?;
    let specs = enumerate_dataset(opts.seed, opts.n);
    let wanted: Vec<usize> = match &opts.only {
        Some(v) => {
            if let Some(&bad) = v.iter().find(|&&i| i >= opts.n) {
                return Err(interlace_core::Error::validation(format!("index {bad} is outside the {}-sample corpus", opts.n)).into());
            }
            v.clone()
        }
        None => (0..opts.n).collect(),
    };
    let mut stats = GenStats::default();
    // stale temporaries from an interrupted run
    let entries = fs::read_dir(&samples_dir).map_err(|e| Error::io(&samples_dir, e))?;
    for e in entries.flatten() {
        if e.file_name().to_string_lossy().ends_with(".tmp") {
            quarantine(root, &e.path())?;
            stats.quarantined += 1;
        }
    }
    let mut records: Vec<Option<SampleRecord>> = vec![None; wanted.len()];
    let mut pending = Vec::new();
    for (k, &i) in wanted.iter().enumerate() {
        match completed(root, i, &specs[i], &opts.material) {
            Some(r) => {
                records[k] = Some(r);
                stats.reused += 1;
            }
            None => {
                let dir = samples_dir.join(sample_dir_name(i));
                if dir.exists() {
                    quarantine(root, &dir)?;
                    stats.quarantined += 1;
                }
                pending.push(k);
            }
        }
    }
    let next = AtomicUsize::new(0);
    let done = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<SampleRecord>)>> = Mutex::new(Vec::new());
    let workers = opts.jobs.max(1).min(pending.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::SeqCst);
                if j >= pending.len() {
                    break;
                }
                let k = pending[j];
                let i = wanted[k];
                let r = write_sample(root, i, &specs[i], &opts.material);
                let n = done.fetch_add(1, Ordering::SeqCst) + 1;
                log::info!("sample {i} done ({n}/{})", pending.len());
                results.lock().expect("no worker panicked").push((k, r));
            });
        }
    });
    for (k, r) in results.into_inner().expect("no worker panicked") {
        records[k] = Some(r?);
        stats.generated += 1;
    }
    let samples: Vec<SampleRecord> = records.into_iter().map(|r| r.expect("every sample resolved")).collect();
    let mut spectra = Vec::with_capacity(samples.len());
    for r in &samples {
        spectra.push(formats::read_spectrum_csv(&root.join(&r.dir).join("spectrum.csv"))?.amp_db);
    }
    let normalization = Normalization {
        spectrum: SpectrumNorm::fit(spectra.iter().map(|s| s.as_slice()))?,
        ..Normalization::default()
    };
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        seed: opts.seed,
        n: opts.n,
        material: opts.material,
        raster_height: RASTER_H,
        raster_width: RASTER_W,
        normalization,
        corpus_sha256: corpus_hash(&samples),
        samples,
    };
    write_json(&root.join("material.json"), &opts.material)?;
    write_json(&root.join(MANIFEST_FILE), &manifest)?;
    Ok((manifest, stats))
}

pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub samples: Vec<Sample>,
}

/// Reads a dataset, checking that every listed file exists and matches its
/// recorded hash.
pub fn load(root: &Path) -> Result<Dataset> {
    let mpath = root.join(MANIFEST_FILE);
    if !mpath.exists() {
        return Err(Error::Missing(format!("dataset manifest {}", mpath.display())));
    }
    let manifest: Manifest = read_json(&mpath)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::format(&mpath, format!("unsupported format version {}", manifest.format_version)));
    }
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for rec in &manifest.samples {
        let dir = root.join(&rec.dir);
        for (f, h) in &rec.files {
            let p = dir.join(f);
            if !p.exists() {
                return Err(Error::Missing(format!("sample file {}", p.display())));
            }
            if &sha256_file(&p)? != h {
                return Err(Error::format(&p, "content hash does not match the manifest"));
            }
        }
        samples.push(Sample {
            raster: formats::read_raster_f32(&dir.join("raster.f32"), manifest.raster_height, manifest.raster_width)?,
            material: rec.material,
            spectrum: formats::read_spectrum_csv(&dir.join("spectrum.csv"))?,
        });
    }
    Ok(Dataset { root: root.to_path_buf(), manifest, samples })
}
