//! Little-endian binary encoding shared by model checkpoints.

use alloc::string::String;
use alloc::vec::Vec;

use super::{Params, Tensor};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ILCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Writer::default()
    }

    /// Starts a checkpoint: magic, version, kind tag and config fingerprint.
    pub fn header(kind: &str, fingerprint: u64) -> Self {
        let mut w = Writer::new();
        w.buf.extend_from_slice(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.str(kind);
        w.u64(fingerprint);
        w
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|&x| self.f64(x));
    }

    pub fn tensor(&mut self, t: &Tensor) {
        self.u64(t.shape.len() as u64);
        t.shape.iter().for_each(|&d| self.u64(d as u64));
        self.f64s(&t.data);
    }

    pub fn params(&mut self, p: &Params) {
        self.u64(p.len() as u64);
        for e in p.iter() {
            self.str(&e.name);
            self.tensor(&e.value);
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn corrupt(what: &str) -> Error {
    Error::Validation(alloc::format!("corrupt checkpoint: {}", what))
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    /// Checks magic, version and kind; returns the stored fingerprint.
    pub fn header(&mut self, kind: &str) -> Result<u64> {
        if self.take(4)? != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = self.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Validation(alloc::format!("unsupported checkpoint version {}", version)));
        }
        let k = self.str()?;
        if k != kind {
            return Err(Error::Validation(alloc::format!("checkpoint holds a {} model, expected {}", k, kind)));
        }
        self.u64()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| corrupt("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("length overflow"))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.usize()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("invalid utf-8"))
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.usize()?;
        if n > (self.buf.len() - self.pos) / 8 {
            return Err(corrupt("truncated array"));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.usize()?;
        if rank > 8 {
            return Err(corrupt("tensor rank"));
        }
        let shape = (0..rank).map(|_| self.usize()).collect::<Result<Vec<_>>>()?;
        let data = self.f64s()?;
        Tensor::new(&shape, data).map_err(|_| corrupt("tensor shape"))
    }

    /// Reads parameters into `into`, which fixes the expected names and shapes.
    pub fn params_into(&mut self, into: &mut Params) -> Result<()> {
        let n = self.usize()?;
        let mut loaded = Params::new();
        for _ in 0..n {
            let name = self.str()?;
            let t = self.tensor()?;
            loaded.add(name, t);
        }
        into.load_from(&loaded)
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(())
    }
}
