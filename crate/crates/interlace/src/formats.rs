//! On-disk formats: JSON documents, raster PNG plus exact float sidecar,
//! spectrum CSV, and SHA-256 content hashes.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use interlace_core::fem::{bin_freq, Spectrum};
use interlace_core::lattice::GeometryRaster;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read_bytes(path)?))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("plain data serializes");
    out.push(b'\n');
    out
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_bytes(path, &to_json(value))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read_bytes(path)?).map_err(|e| Error::format(path, e))
}

fn to_byte(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

pub fn raster_png(r: &GeometryRaster) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, r.width() as u32, r.height() as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().expect("in-memory PNG header");
        let data: Vec<u8> = r.values().iter().map(|&v| to_byte(v)).collect();
        w.write_image_data(&data).expect("in-memory PNG body");
    }
    out
}

/// 8-bit grayscale, 0 for void (−1) and 255 for material (+1).
pub fn write_raster_png(path: &Path, r: &GeometryRaster) -> Result<()> {
    write_bytes(path, &raster_png(r))
}

pub fn read_raster_png(path: &Path) -> Result<GeometryRaster> {
    let bytes = read_bytes(path)?;
    let dec = png::Decoder::new(bytes.as_slice());
    let mut reader = dec.read_info().map_err(|e| Error::format(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::format(path, e))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(path, "expected an 8-bit grayscale image"));
    }
    let values = buf[..info.buffer_size()].iter().map(|&b| b as f32 / 127.5 - 1.0).collect();
    Ok(GeometryRaster::from_values(info.height as usize, info.width as usize, values)?)
}

/// Row-major little-endian `f32` values.
pub fn raster_f32(r: &GeometryRaster) -> Vec<u8> {
    r.values().iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn write_raster_f32(path: &Path, r: &GeometryRaster) -> Result<()> {
    write_bytes(path, &raster_f32(r))
}

pub fn read_raster_f32(path: &Path, height: usize, width: usize) -> Result<GeometryRaster> {
    let bytes = read_bytes(path)?;
    if bytes.len() != 4 * height * width {
        return Err(Error::format(path, format!("expected {} bytes, found {}", 4 * height * width, bytes.len())));
    }
    let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    GeometryRaster::from_values(height, width, values).map_err(|e| Error::format(path, e))
}

/// `freq_hz,amp_db` rows; values use the shortest exact decimal form.
pub fn spectrum_csv(s: &Spectrum) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["freq_hz", "amp_db"]).expect("in-memory CSV");
    for (i, v) in s.amp_db.iter().enumerate() {
        w.write_record([bin_freq(i).to_string(), v.to_string()]).expect("in-memory CSV");
    }
    w.into_inner().expect("in-memory CSV")
}

pub fn write_spectrum_csv(path: &Path, s: &Spectrum) -> Result<()> {
    write_bytes(path, &spectrum_csv(s))
}

pub fn read_spectrum_csv(path: &Path) -> Result<Spectrum> {
    let bytes = read_bytes(path)?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let mut amp = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e))?;
        let f: f64 = rec.get(0).unwrap_or("").trim().parse().map_err(|_| Error::format(path, format!("row {i}: bad frequency")))?;
        let v: f64 = rec.get(1).unwrap_or("").trim().parse().map_err(|_| Error::format(path, format!("row {i}: bad amplitude")))?;
        if (f - bin_freq(i)).abs() > 1e-6 {
            return Err(Error::format(path, format!("row {i}: frequency {f} is off the {} Hz axis", bin_freq(i))));
        }
        amp.push(v);
    }
    Spectrum::new(amp).map_err(|e| Error::format(path, e))
}

/// Writes CSV rows built from serializable records.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut buf = BufWriter::new(Vec::new());
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in rows {
            w.serialize(r).map_err(|e| Error::format(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    write_bytes(path, buf.get_ref())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let bytes = read_bytes(path)?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    r.deserialize().map(|row| row.map_err(|e| Error::format(path, e))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use interlace_core::lattice::{build_panel, rasterize, LatticeSpec, RasterOptions};

    #[test]
    fn raster_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let r = rasterize(&build_panel(&LatticeSpec::ls1()).unwrap(), &RasterOptions::default());
        let (png_path, bin) = (dir.path().join("r.png"), dir.path().join("r.f32"));
        write_raster_png(&png_path, &r).unwrap();
        write_raster_f32(&bin, &r).unwrap();
        assert_eq!(read_raster_png(&png_path).unwrap(), r);
        assert_eq!(read_raster_f32(&bin, 128, 256).unwrap(), r);
        assert!(read_raster_f32(&bin, 128, 255).is_err());
    }

    #[test]
    fn png_levels() {
        assert_eq!((to_byte(-1.0), to_byte(1.0), to_byte(0.0)), (0, 255, 128));
    }

    #[test]
    fn spectrum_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let s = Spectrum::from_fn(|f| (f / 777.0).sin() * 33.3 - 1e-7 * f).unwrap();
        let p = dir.path().join("s.csv");
        write_spectrum_csv(&p, &s).unwrap();
        assert_eq!(read_spectrum_csv(&p).unwrap(), s);
        fs::write(&p, "freq_hz,amp_db\n10,1\n30,2\n").unwrap();
        assert!(read_spectrum_csv(&p).is_err());
    }
}
