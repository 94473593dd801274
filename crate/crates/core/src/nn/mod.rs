//! A small reverse-mode autodiff engine over `f64` tensors.
//!
//! Graphs are recorded on a [`Tape`] for one forward pass and discarded after
//! the backward pass. Parameters live in a [`Params`] store owned by each
//! model; binding them to a tape copies their values in.

mod checkpoint;
mod ops;
mod optim;
mod tape;

#[cfg(test)]
mod tests;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::{Error, Result};

pub use checkpoint::{Reader, Writer, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{cosine_lr, NAdam};
pub use tape::{Grads, Tape, Var};

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(alloc::format!("shape {:?} needs {} values, got {}", shape, n, data.len())));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self, i: usize) -> usize {
        self.shape[i]
    }
}

/// Index of a parameter inside a [`Params`] store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Ordered, named parameter store.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params {
    entries: Vec<Param>,
}

impl Params {
    pub fn new() -> Self {
        Params::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.entries.push(Param { name: name.into(), value });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.entries.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    /// Copies values from `other`, which must have identical names and shapes.
    pub fn load_from(&mut self, other: &Params) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Config(alloc::format!(
                "parameter count {} does not match {}",
                other.entries.len(),
                self.entries.len()
            )));
        }
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            if a.name != b.name || a.value.shape != b.value.shape {
                return Err(Error::Config(alloc::format!(
                    "parameter {} {:?} does not match {} {:?}",
                    b.name,
                    b.value.shape,
                    a.name,
                    a.value.shape
                )));
            }
            a.value.data.copy_from_slice(&b.value.data);
        }
        Ok(())
    }
}

/// Deterministic initializer for parameter tensors.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Uniform on `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| bound * (2.0 * self.unit() - 1.0)).collect();
        Tensor { shape: shape.to_vec(), data }
    }

    /// Uniform with bound `1/sqrt(fan_in)`.
    pub fn fan_in(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        self.uniform(shape, 1.0 / crate::math::sqrt(fan_in.max(1) as f64))
    }
}

/// `c = a·b + beta·c` for logical `m×k` and `k×n` operands given by strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    debug_assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    debug_assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the debug assertions above state the bounds every caller upholds;
    // operands are distinct slices so `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Largest relative deviation between reverse-mode gradients and central
/// finite differences of `mean(f(inputs) ⊙ r)` for a fixed random `r`,
/// taken over every element of every input.
pub fn max_gradient_error<F>(inputs: &[Tensor], h: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor], want_grad: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new(false, 0);
        let vars: Vec<Var> = vals.iter().map(|t| if want_grad { tape.leaf(t.clone()) } else { tape.constant(t.clone()) }).collect();
        let out = f(&mut tape, &vars)?;
        let mut init = Init::new(0x9e37);
        let r = init.uniform(tape.shape(out), 1.0);
        let r = tape.constant(r);
        let prod = tape.mul(out, r)?;
        let loss = tape.mean(prod);
        let value = tape.value(loss).data[0];
        if !want_grad {
            return Ok((value, Vec::new()));
        }
        tape.backward(loss)?;
        Ok((value, tape.param_grads(&vars)))
    };
    let (_, analytic) = eval(inputs, true)?;
    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let x0 = t.data[j];
            probe[i].data[j] = x0 + h;
            let (fp, _) = eval(&probe, false)?;
            probe[i].data[j] = x0 - h;
            let (fm, _) = eval(&probe, false)?;
            probe[i].data[j] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[i][j];
            let scale = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / scale);
        }
    }
    Ok(worst)
}
