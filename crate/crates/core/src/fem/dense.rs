//! Dense symmetric eigensolvers for small systems and Lanczos projections.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// Row-major square matrix helper.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub n: usize,
    pub a: Vec<f64>,
}

impl Dense {
    pub fn zeros(n: usize) -> Self {
        Dense { n, a: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut d = Self::zeros(n);
        for i in 0..n {
            d.a[i * n + i] = 1.0;
        }
        d
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.a[i * self.n + j]
    }
}

/// Householder reduction of the symmetric matrix in `v` to tridiagonal
/// form. On return `v` holds the accumulated transformation, `d` the
/// diagonal and `e[1..]` the subdiagonal.
fn tred2(v: &mut Dense, d: &mut [f64], e: &mut [f64]) {
    let n = v.n;
    for j in 0..n {
        d[j] = v.at(n - 1, j);
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v.at(i - 1, j);
                *v.at_mut(i, j) = 0.0;
                *v.at_mut(j, i) = 0.0;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = math::sqrt(h);
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for item in e.iter_mut().take(i) {
                *item = 0.0;
            }
            for j in 0..i {
                f = d[j];
                *v.at_mut(j, i) = f;
                g = e[j] + v.at(j, j) * f;
                for k in j + 1..i {
                    g += v.at(k, j) * d[k];
                    e[k] += v.at(k, j) * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    *v.at_mut(k, j) -= f * e[k] + g * d[k];
                }
                d[j] = v.at(i - 1, j);
                *v.at_mut(i, j) = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..n.saturating_sub(1) {
        let vii = v.at(i, i);
        *v.at_mut(n - 1, i) = vii;
        *v.at_mut(i, i) = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v.at(k, i + 1) / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v.at(k, i + 1) * v.at(k, j);
                }
                for k in 0..=i {
                    *v.at_mut(k, j) -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            *v.at_mut(k, i + 1) = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v.at(n - 1, j);
        *v.at_mut(n - 1, j) = 0.0;
    }
    if n > 0 {
        *v.at_mut(n - 1, n - 1) = 1.0;
        e[0] = 0.0;
    }
}

/// Implicit QL iterations on the tridiagonal `(d, e)` with `e[i]` coupling
/// rows `i - 1` and `i`. Rotations are accumulated into the rows of `v`
/// (any number of rows, `n` columns), so passing only the last row of the
/// identity yields the bottom components of the eigenvectors. Returns
/// false if an eigenvalue failed to converge.
fn tql2(rows: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64]) -> bool {
    let n = d.len();
    if n == 0 {
        return true;
    }
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m == n {
            m = n - 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 60 {
                    return false;
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = math::hypot(p, 1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;
                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = math::hypot(p, e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..rows {
                        let row = &mut v[k * n..(k + 1) * n];
                        h = row[i + 1];
                        row[i + 1] = s * row[i] + c * h;
                        row[i] = c * row[i] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    true
}

/// Sorts eigenvalues ascending, permuting the columns of the `rows x n`
/// vector block alongside.
fn sort_pairs(rows: usize, v: &mut [f64], d: &mut [f64]) {
    let n = d.len();
    for i in 0..n {
        let mut k = i;
        for j in i + 1..n {
            if d[j] < d[k] {
                k = j;
            }
        }
        if k != i {
            d.swap(i, k);
            for r in 0..rows {
                v.swap(r * n + i, r * n + k);
            }
        }
    }
}

/// Eigen-decomposition of a symmetric matrix: ascending eigenvalues and the
/// matrix whose columns are the orthonormal eigenvectors.
pub fn symmetric_eigen(a: &Dense) -> Option<(Vec<f64>, Dense)> {
    let n = a.n;
    let mut v = a.clone();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(&mut v, &mut d, &mut e);
    if !tql2(n, &mut v.a, &mut d, &mut e) {
        return None;
    }
    sort_pairs(n, &mut v.a, &mut d);
    Some((d, v))
}

/// Eigenvalues of the symmetric tridiagonal matrix with diagonal `alpha` and
/// off-diagonal `beta` (`beta[i]` couples `i` and `i + 1`), ascending, with
/// either the full eigenvector matrix or only its last row.
pub fn tridiagonal_eigen(alpha: &[f64], beta: &[f64], full: bool) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = alpha.len();
    let mut d = alpha.to_vec();
    let mut e = vec![0.0; n];
    for i in 1..n {
        e[i] = beta[i - 1];
    }
    let (rows, mut v) = if full {
        (n, Dense::identity(n).a)
    } else {
        let mut last = vec![0.0; n];
        if n > 0 {
            last[n - 1] = 1.0;
        }
        (1, last)
    };
    if !tql2(rows, &mut v, &mut d, &mut e) {
        return None;
    }
    sort_pairs(rows, &mut v, &mut d);
    Some((d, v))
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &Dense) -> Option<Dense> {
    let n = a.n;
    let mut l = Dense::zeros(n);
    for j in 0..n {
        let mut s = a.at(j, j);
        for k in 0..j {
            s -= l.at(j, k) * l.at(j, k);
        }
        if !(s > 0.0) {
            return None;
        }
        let ljj = math::sqrt(s);
        *l.at_mut(j, j) = ljj;
        for i in j + 1..n {
            let mut s = a.at(i, j);
            for k in 0..j {
                s -= l.at(i, k) * l.at(j, k);
            }
            *l.at_mut(i, j) = s / ljj;
        }
    }
    Some(l)
}

/// Generalized problem `K x = lambda M x` for positive definite `K` and
/// `M`. Works on `L^-1 M L^-T` with `K = L L^T`, whose largest eigenvalues
/// `1 / lambda` belong to the lowest modes, so those are resolved to full
/// relative precision. Eigenvalues ascend; eigenvectors are `M`-orthonormal
/// columns.
pub fn generalized_eigen(k: &Dense, m: &Dense) -> Option<(Vec<f64>, Dense)> {
    let n = k.n;
    let l = cholesky(k)?;
    // C = L^-1 M L^-T, computed as two triangular solves
    let mut y = m.clone();
    for col in 0..n {
        for i in 0..n {
            let mut s = y.at(i, col);
            for p in 0..i {
                s -= l.at(i, p) * y.at(p, col);
            }
            *y.at_mut(i, col) = s / l.at(i, i);
        }
    }
    let mut c = Dense::zeros(n);
    for row in 0..n {
        for j in 0..n {
            let mut s = y.at(row, j);
            for p in 0..j {
                s -= l.at(j, p) * c.at(row, p);
            }
            *c.at_mut(row, j) = s / l.at(j, j);
        }
    }
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (c.at(i, j) + c.at(j, i));
            *c.at_mut(i, j) = avg;
            *c.at_mut(j, i) = avg;
        }
    }
    let (mu, z) = symmetric_eigen(&c)?;
    if mu.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    // descending mu is ascending lambda; x = L^-T z / sqrt(mu)
    let mut vals = Vec::with_capacity(n);
    let mut x = Dense::zeros(n);
    for (out, src) in (0..n).rev().enumerate() {
        vals.push(1.0 / mu[src]);
        let s = 1.0 / math::sqrt(mu[src]);
        for i in (0..n).rev() {
            let mut acc = z.at(i, src);
            for p in i + 1..n {
                acc -= l.at(p, i) * x.at(p, out) / s;
            }
            *x.at_mut(i, out) = acc / l.at(i, i) * s;
        }
    }
    Some((vals, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn random_sym(n: usize, seed: u64) -> Dense {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let mut a = Dense::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let v = next();
                *a.at_mut(i, j) = v;
                *a.at_mut(j, i) = v;
            }
        }
        a
    }

    #[test]
    fn symmetric_eigen_matches_nalgebra() {
        for (n, seed) in [(1, 1), (2, 2), (7, 3), (40, 4)] {
            let a = random_sym(n, seed);
            let (vals, vecs) = symmetric_eigen(&a).unwrap();
            let na = DMatrix::from_row_slice(n, n, &a.a);
            let mut reference: Vec<f64> = na.symmetric_eigen().eigenvalues.iter().copied().collect();
            reference.sort_by(f64::total_cmp);
            for (x, y) in vals.iter().zip(&reference) {
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
            // A v = lambda v
            for c in 0..n {
                for i in 0..n {
                    let av: f64 = (0..n).map(|j| a.at(i, j) * vecs.at(j, c)).sum();
                    assert!((av - vals[c] * vecs.at(i, c)).abs() < 1e-11);
                }
            }
        }
    }

    #[test]
    fn tridiagonal_last_row_matches_full() {
        let alpha = [2.0, 1.0, 3.0, 0.5, 4.0];
        let beta = [0.3, -0.7, 1.1, 0.2];
        let (d1, full) = tridiagonal_eigen(&alpha, &beta, true).unwrap();
        let (d2, last) = tridiagonal_eigen(&alpha, &beta, false).unwrap();
        assert_eq!(d1, d2);
        for c in 0..5 {
            assert!((full[4 * 5 + c] - last[c]).abs() < 1e-14);
        }
    }

    #[test]
    fn generalized_eigen_is_mass_orthonormal() {
        let n = 12;
        let k = {
            let r = random_sym(n, 9);
            let mut k = Dense::zeros(n);
            for i in 0..n {
                for j in 0..n {
                    *k.at_mut(i, j) = (0..n).map(|p| r.at(i, p) * r.at(j, p)).sum::<f64>() + if i == j { 0.1 } else { 0.0 };
                }
            }
            k
        };
        let mut m = Dense::identity(n);
        for i in 0..n {
            *m.at_mut(i, i) = 1.0 + i as f64;
        }
        let (vals, x) = generalized_eigen(&k, &m).unwrap();
        for a in 0..n {
            for b in 0..n {
                let mab: f64 = (0..n).map(|i| x.at(i, a) * m.at(i, i) * x.at(i, b)).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((mab - expect).abs() < 1e-10);
            }
            for i in 0..n {
                let kx: f64 = (0..n).map(|j| k.at(i, j) * x.at(j, a)).sum();
                assert!((kx - vals[a] * m.at(i, i) * x.at(i, a)).abs() < 1e-9);
            }
        }
    }
}
