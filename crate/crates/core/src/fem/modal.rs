use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::assembly::SystemMatrices;
use super::dense::{generalized_eigen, tridiagonal_eigen, Dense};
use super::skyline::{Ordering, Skyline};
use super::sparse::{CsrMatrix, SymTriplets};
use crate::math;
use crate::{Error, Result};

/// Systems with at most this many free DOFs are solved densely.
pub const DENSE_LIMIT: usize = 200;
/// Relative residual at which a Ritz pair is accepted.
pub const EIGEN_TOL: f64 = 1e-9;
const CHECK_EVERY: usize = 10;
const MAX_RUNS: usize = 6;

/// Mass-normalized modes of the constrained system, ascending.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Modes {
    pub frequencies_hz: Vec<f64>,
    /// Mode shapes over all DOFs (zero on constrained DOFs).
    pub shapes: Vec<Vec<f64>>,
    /// `phi^T M r` for the rigid excitation vector `r`.
    pub participation: Vec<f64>,
}

impl Modes {
    pub fn len(&self) -> usize {
        self.frequencies_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies_hz.is_empty()
    }
}

fn omega2(f_hz: f64) -> f64 {
    let w = 2.0 * math::PI * f_hz;
    w * w
}

/// Restriction of `a` to the ordering, indexed by position.
fn restrict(a: &CsrMatrix, ord: &Ordering) -> CsrMatrix {
    let mut t = SymTriplets::new(ord.len());
    for (p, &d) in ord.order.iter().enumerate() {
        for (c, v) in a.row(d) {
            let q = ord.position[c];
            if q != usize::MAX && q >= p {
                t.add(p, q, v);
            }
        }
    }
    t.build()
}

fn mechanism(sys: &SystemMatrices, ord: &Ordering, null_local: &[f64]) -> Error {
    let mut v = vec![0.0; sys.n_dof()];
    for (p, &d) in ord.order.iter().enumerate() {
        v[d] = null_local[p];
    }
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale > 0.0 {
        v.iter_mut().for_each(|x| *x /= scale);
    }
    let worst = v.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).map(|(i, _)| i).unwrap_or(0);
    Error::Modeling {
        message: format!("constrained stiffness is singular; mechanism involves node {} (DOF {})", worst / 3, worst % 3),
        null_vector: v,
    }
}

/// Factors the constrained stiffness, reporting a mechanism as a modeling
/// error carrying its null vector.
pub(crate) fn factor_stiffness(sys: &SystemMatrices, ord: &Ordering) -> Result<Skyline> {
    Skyline::factor(&sys.k, None, ord, true).map_err(|p| mechanism(sys, ord, &p.null_vector))
}

/// All modes with frequency at most `f_max_hz` (pass `f64::INFINITY` for
/// every mode of a small system).
pub fn modal(sys: &SystemMatrices, f_max_hz: f64) -> Result<Modes> {
    let free = sys.free_dofs();
    if free.is_empty() {
        return Ok(Modes::default());
    }
    let ord = Ordering::rcm(&sys.k, &free);
    let k_fact = factor_stiffness(sys, &ord)?;
    let (lambdas, vecs) = if ord.len() <= DENSE_LIMIT {
        dense_modes(sys, &ord, f_max_hz)?
    } else {
        lanczos_modes(sys, &ord, &k_fact, f_max_hz)?
    };
    let n_dof = sys.n_dof();
    let mut mr = vec![0.0; n_dof];
    sys.m.mul_vec(&sys.excitation, &mut mr);
    let mut modes = Modes::default();
    for (lam, x) in lambdas.into_iter().zip(vecs) {
        let mut phi = vec![0.0; n_dof];
        for (p, &d) in ord.order.iter().enumerate() {
            phi[d] = x[p];
        }
        modes.frequencies_hz.push(math::sqrt(lam.max(0.0)) / (2.0 * math::PI));
        modes.participation.push(phi.iter().zip(&mr).map(|(a, b)| a * b).sum());
        modes.shapes.push(phi);
    }
    Ok(modes)
}

fn dense_modes(sys: &SystemMatrices, ord: &Ordering, f_max_hz: f64) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = ord.len();
    let k = Dense { n, a: sys.k.dense_submatrix(&ord.order) };
    let m = Dense { n, a: sys.m.dense_submatrix(&ord.order) };
    let (vals, x) = generalized_eigen(&k, &m).ok_or_else(|| Error::Numerical("dense eigensolver failed".into()))?;
    let cut = if f_max_hz.is_finite() { omega2(f_max_hz) } else { f64::INFINITY };
    let mut lam = Vec::new();
    let mut vecs = Vec::new();
    for (c, &v) in vals.iter().enumerate() {
        if v <= cut {
            lam.push(v);
            vecs.push((0..n).map(|i| x.at(i, c)).collect());
        }
    }
    Ok((lam, vecs))
}

fn m_dot(m: &CsrMatrix, a: &[f64], b: &[f64], scratch: &mut [f64]) -> f64 {
    m.mul_vec(b, scratch);
    a.iter().zip(scratch.iter()).map(|(x, y)| x * y).sum()
}

/// Removes the `M`-components of `w` along every vector in `basis` (two
/// passes of classical Gram-Schmidt).
fn orthogonalize(m: &CsrMatrix, basis: &[Vec<f64>], w: &mut [f64], mw: &mut [f64]) {
    for _ in 0..2 {
        m.mul_vec(w, mw);
        for q in basis {
            let c: f64 = q.iter().zip(mw.iter()).map(|(a, b)| a * b).sum();
            if c != 0.0 {
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= c * qi;
                }
            }
        }
    }
}

/// Shift-invert Lanczos (shift zero) with full reorthogonalization in the
/// mass inner product. The number of eigenvalues below the cutoff is fixed
/// beforehand by a Sturm count; runs restart from fresh vectors, deflated
/// against the modes already found, until the count is met.
fn lanczos_modes(
    sys: &SystemMatrices,
    ord: &Ordering,
    k_fact: &Skyline,
    f_max_hz: f64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if !f_max_hz.is_finite() {
        return Err(Error::validation("an upper frequency is required for large systems"));
    }
    let n = ord.len();
    let m = restrict(&sys.m, ord);
    let cut = omega2(f_max_hz);
    let sturm = Skyline::factor(&sys.k, Some((cut, &sys.m)), ord, false)
        .map_err(|_| Error::Numerical("shifted factorization failed".into()))?;
    let target = sturm.negative_pivots();
    let mut locked_l: Vec<f64> = Vec::new();
    let mut locked_x: Vec<Vec<f64>> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut mw = vec![0.0; n];
    for _run in 0..MAX_RUNS {
        if locked_l.len() >= target {
            break;
        }
        let mut q: Vec<f64> = (0..n).map(|_| (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 - 0.5).collect();
        orthogonalize(&m, &locked_x, &mut q, &mut mw);
        let nrm = math::sqrt(m_dot(&m, &q, &q, &mut mw));
        if !(nrm > 0.0) {
            break;
        }
        q.iter_mut().for_each(|x| *x /= nrm);
        let mut basis: Vec<Vec<f64>> = vec![q];
        let mut alpha: Vec<f64> = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let room = n - locked_l.len();
        let need = target - locked_l.len();
        let mut done = false;
        while !done {
            let j = basis.len() - 1;
            let mut w = vec![0.0; n];
            sys_apply(&m, k_fact, &basis[j], &mut w);
            if j > 0 {
                let b = beta[j - 1];
                for (wi, qi) in w.iter_mut().zip(&basis[j - 1]) {
                    *wi -= b * qi;
                }
            }
            let a = m_dot(&m, &basis[j], &w, &mut mw);
            for (wi, qi) in w.iter_mut().zip(&basis[j]) {
                *wi -= a * qi;
            }
            alpha.push(a);
            orthogonalize(&m, &locked_x, &mut w, &mut mw);
            orthogonalize(&m, &basis, &mut w, &mut mw);
            let b = math::sqrt(m_dot(&m, &w, &w, &mut mw).max(0.0));
            let steps = alpha.len();
            let breakdown = b <= 1e-12 * a.abs().max(f64::MIN_POSITIVE);
            let exhausted = steps >= room;
            if breakdown || exhausted || steps % CHECK_EVERY == 0 {
                let (theta, last) = tridiagonal_eigen(&alpha, &beta, false)
                    .ok_or_else(|| Error::Numerical("tridiagonal eigensolver failed".into()))?;
                let good = theta
                    .iter()
                    .zip(&last)
                    .filter(|(t, s)| **t > 0.0 && 1.0 / **t <= cut && (b * s.abs() <= EIGEN_TOL * t.abs() || breakdown))
                    .count();
                if good >= need || breakdown || exhausted {
                    done = true;
                }
            }
            if !done {
                beta.push(b);
                basis.push(w.into_iter().map(|x| x / b).collect());
            } else {
                let (theta, full) = tridiagonal_eigen(&alpha, &beta, true)
                    .ok_or_else(|| Error::Numerical("tridiagonal eigensolver failed".into()))?;
                let steps = alpha.len();
                for (c, &t) in theta.iter().enumerate() {
                    if !(t > 0.0) || 1.0 / t > cut {
                        continue;
                    }
                    let s_last = full[(steps - 1) * steps + c];
                    if !(b * s_last.abs() <= EIGEN_TOL * t.abs() || breakdown || exhausted) {
                        continue;
                    }
                    let mut x = vec![0.0; n];
                    for (r, qv) in basis.iter().enumerate() {
                        let s = full[r * steps + c];
                        for (xi, qi) in x.iter_mut().zip(qv) {
                            *xi += s * qi;
                        }
                    }
                    orthogonalize(&m, &locked_x, &mut x, &mut mw);
                    let nrm = math::sqrt(m_dot(&m, &x, &x, &mut mw));
                    x.iter_mut().for_each(|v| *v /= nrm);
                    locked_l.push(1.0 / t);
                    locked_x.push(x);
                }
            }
        }
    }
    if locked_l.len() != target {
        return Err(Error::Numerical(format!(
            "eigensolver found {} of {} modes below {f_max_hz} Hz",
            locked_l.len(),
            target
        )));
    }
    let mut idx: Vec<usize> = (0..target).collect();
    idx.sort_by(|&a, &b| locked_l[a].total_cmp(&locked_l[b]));
    Ok((idx.iter().map(|&i| locked_l[i]).collect(), idx.into_iter().map(|i| core::mem::take(&mut locked_x[i])).collect()))
}

/// `w = K^-1 M q` in ordering positions.
fn sys_apply(m: &CsrMatrix, k_fact: &Skyline, q: &[f64], w: &mut [f64]) {
    m.mul_vec(q, w);
    k_fact.solve(w);
}
