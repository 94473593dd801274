//! Reverse Cuthill-McKee ordering and skyline LDL^T factorization.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use super::sparse::CsrMatrix;

/// Pivots smaller than this fraction of their original diagonal mark a
/// singular matrix.
pub const PIVOT_TOL: f64 = 1e-11;

/// Restriction of a system to a subset of DOFs, renumbered for a small
/// profile. `order[p]` is the global DOF at position `p`.
#[derive(Clone, Debug)]
pub struct Ordering {
    pub order: Vec<usize>,
    /// Global DOF to position, `usize::MAX` when excluded.
    pub position: Vec<usize>,
}

impl Ordering {
    /// RCM ordering of `dofs` over the sparsity pattern of `a`.
    pub fn rcm(a: &CsrMatrix, dofs: &[usize]) -> Ordering {
        let n = dofs.len();
        let mut local = vec![usize::MAX; a.dim()];
        for (k, &d) in dofs.iter().enumerate() {
            local[d] = k;
        }
        let adj: Vec<Vec<usize>> = dofs
            .iter()
            .map(|&d| a.row(d).map(|(c, _)| local[c]).filter(|&c| c != usize::MAX && c != local[d]).collect())
            .collect();
        let deg: Vec<usize> = adj.iter().map(|v| v.len()).collect();
        let mut visited = vec![false; n];
        let mut cm = Vec::with_capacity(n);
        let bfs_levels = |start: usize, seen: &[bool]| -> (Vec<usize>, usize) {
            let mut level = vec![usize::MAX; n];
            let mut q = VecDeque::new();
            level[start] = 0;
            q.push_back(start);
            let mut last = start;
            while let Some(u) = q.pop_front() {
                last = u;
                for &v in &adj[u] {
                    if !seen[v] && level[v] == usize::MAX {
                        level[v] = level[u] + 1;
                        q.push_back(v);
                    }
                }
            }
            let depth = level[last];
            // among the deepest level pick the lowest degree
            let far = (0..n)
                .filter(|&i| level[i] == depth)
                .min_by_key(|&i| (deg[i], i))
                .unwrap_or(last);
            (level, far)
        };
        loop {
            let Some(seed) = (0..n).filter(|&i| !visited[i]).min_by_key(|&i| (deg[i], i)) else {
                break;
            };
            let mut start = seed;
            let mut depth = 0;
            for _ in 0..4 {
                let (level, far) = bfs_levels(start, &visited);
                if level[far] <= depth {
                    break;
                }
                depth = level[far];
                start = far;
            }
            let mut q = VecDeque::new();
            visited[start] = true;
            q.push_back(start);
            while let Some(u) = q.pop_front() {
                cm.push(u);
                let mut nb: Vec<usize> = adj[u].iter().copied().filter(|&v| !visited[v]).collect();
                nb.sort_by_key(|&v| (deg[v], v));
                for v in nb {
                    if !visited[v] {
                        visited[v] = true;
                        q.push_back(v);
                    }
                }
            }
        }
        cm.reverse();
        let order: Vec<usize> = cm.into_iter().map(|k| dofs[k]).collect();
        let mut position = vec![usize::MAX; a.dim()];
        for (p, &d) in order.iter().enumerate() {
            position[d] = p;
        }
        Ordering { order, position }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Position and size of a pivot that failed the singularity test.
#[derive(Clone, Debug)]
pub struct SingularPivot {
    pub position: usize,
    pub pivot: f64,
    /// Null vector in ordering positions.
    pub null_vector: Vec<f64>,
}

/// `L D L^T` factors in skyline storage. Column `j` holds rows
/// `first[j]..=j`; above the diagonal it stores `L[j][i]` (as `U[i][j]`),
/// and the diagonal slot holds `D[j]`.
#[derive(Clone, Debug)]
pub struct Skyline {
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
    negative_pivots: usize,
}

impl Skyline {
    /// Factors `a - shift * b` restricted to `ord`. With `strict`, a tiny or
    /// negative pivot stops the factorization and is reported; otherwise
    /// negative pivots are counted and exact zeros are nudged.
    pub fn factor(
        a: &CsrMatrix,
        shifted: Option<(f64, &CsrMatrix)>,
        ord: &Ordering,
        strict: bool,
    ) -> core::result::Result<Skyline, SingularPivot> {
        let n = ord.len();
        let mut first: Vec<usize> = (0..n).collect();
        for (j, &d) in ord.order.iter().enumerate() {
            for (c, _) in a.row(d) {
                let p = ord.position[c];
                if p != usize::MAX && p < first[j] {
                    first[j] = p;
                }
            }
        }
        let mut start = vec![0usize; n + 1];
        for j in 0..n {
            start[j + 1] = start[j] + (j - first[j] + 1);
        }
        let mut data = vec![0.0; start[n]];
        for (j, &d) in ord.order.iter().enumerate() {
            for (c, v) in a.row(d) {
                let p = ord.position[c];
                if p != usize::MAX && p <= j {
                    data[start[j] + p - first[j]] += v;
                }
            }
            if let Some((s, b)) = shifted {
                for (c, v) in b.row(d) {
                    let p = ord.position[c];
                    if p != usize::MAX && p <= j {
                        data[start[j] + p - first[j]] -= s * v;
                    }
                }
            }
        }
        let mut sky = Skyline { first, start, data, negative_pivots: 0 };
        for j in 0..n {
            let fj = sky.first[j];
            let sj = sky.start[j];
            let diag_orig = sky.data[sj + j - fj];
            // reduce the column: g_ij = a_ij - sum_r L_ri g_rj
            for i in fj + 1..j {
                let fi = sky.first[i];
                let fr = fi.max(fj);
                if fr < i {
                    let si = sky.start[i];
                    let mut acc = 0.0;
                    for r in fr..i {
                        acc += sky.data[si + r - fi] * sky.data[sj + r - fj];
                    }
                    sky.data[sj + i - fj] -= acc;
                }
            }
            let mut dj = diag_orig;
            for i in fj..j {
                let di = sky.data[sky.start[i] + i - sky.first[i]];
                let g = sky.data[sj + i - fj];
                let l = g / di;
                dj -= l * g;
                sky.data[sj + i - fj] = l;
            }
            let tiny = dj.abs() <= PIVOT_TOL * diag_orig.abs().max(f64::MIN_POSITIVE);
            if strict && (tiny || dj < 0.0) {
                sky.data[sj + j - fj] = dj;
                let null_vector = sky.null_vector(j);
                return Err(SingularPivot { position: j, pivot: dj, null_vector });
            }
            if dj == 0.0 {
                dj = -f64::EPSILON * diag_orig.abs().max(1.0);
            }
            if dj < 0.0 {
                sky.negative_pivots += 1;
            }
            sky.data[sj + j - fj] = dj;
        }
        Ok(sky)
    }

    fn l(&self, r: usize, j: usize) -> f64 {
        self.data[self.start[j] + r - self.first[j]]
    }

    /// Solution of `L^T x = e_k`, which spans the null space when pivot `k`
    /// vanishes.
    fn null_vector(&self, k: usize) -> Vec<f64> {
        let n = self.first.len();
        let mut x = vec![0.0; n];
        x[k] = 1.0;
        for i in (0..=k).rev() {
            let xi = x[i];
            if xi != 0.0 {
                for r in self.first[i]..i {
                    x[r] -= self.l(r, i) * xi;
                }
            }
        }
        x
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn negative_pivots(&self) -> usize {
        self.negative_pivots
    }

    pub fn profile(&self) -> usize {
        self.data.len()
    }

    /// Solves in place; `x` is indexed by ordering position.
    pub fn solve(&self, x: &mut [f64]) {
        let n = self.dim();
        for j in 0..n {
            let fj = self.first[j];
            let sj = self.start[j];
            let mut acc = 0.0;
            for r in fj..j {
                acc += self.data[sj + r - fj] * x[r];
            }
            x[j] -= acc;
        }
        for j in 0..n {
            x[j] /= self.data[self.start[j] + j - self.first[j]];
        }
        for j in (0..n).rev() {
            let fj = self.first[j];
            let sj = self.start[j];
            let xj = x[j];
            for r in fj..j {
                x[r] -= self.data[sj + r - fj] * xj;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::sparse::SymTriplets;

    fn laplacian(n: usize, shift: f64) -> CsrMatrix {
        let mut t = SymTriplets::new(n);
        for i in 0..n {
            t.add(i, i, 2.0 + shift);
            if i + 1 < n {
                t.add(i, i + 1, -1.0);
            }
        }
        t.build()
    }

    #[test]
    fn solves_tridiagonal_system() {
        let a = laplacian(30, 0.1);
        let dofs: Vec<usize> = (0..30).collect();
        let ord = Ordering::rcm(&a, &dofs);
        let f = Skyline::factor(&a, None, &ord, true).unwrap();
        let x_true: Vec<f64> = (0..30).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = vec![0.0; 30];
        a.mul_vec(&x_true, &mut b);
        let mut y: Vec<f64> = ord.order.iter().map(|&d| b[d]).collect();
        f.solve(&mut y);
        for (p, &d) in ord.order.iter().enumerate() {
            assert!((y[p] - x_true[d]).abs() < 1e-10);
        }
    }

    #[test]
    fn sturm_count_matches_eigenvalues() {
        // eigenvalues of the Dirichlet Laplacian: 2 - 2 cos(k pi / (n + 1))
        let n = 20;
        let a = laplacian(n, 0.0);
        let mut eye = SymTriplets::new(n);
        for i in 0..n {
            eye.add(i, i, 1.0);
        }
        let eye = eye.build();
        let dofs: Vec<usize> = (0..n).collect();
        let ord = Ordering::rcm(&a, &dofs);
        let sigma = 1.0;
        let expected = (1..=n).filter(|&k| 2.0 - 2.0 * (k as f64 * crate::math::PI / (n as f64 + 1.0)).cos() < sigma).count();
        let f = Skyline::factor(&a, Some((sigma, &eye)), &ord, false).unwrap();
        assert_eq!(f.negative_pivots(), expected);
    }

    #[test]
    fn singular_matrix_reports_null_vector() {
        // free-free chain: constant vector is the null space
        let n = 6;
        let mut t = SymTriplets::new(n);
        for i in 0..n - 1 {
            t.add(i, i, 1.0);
            t.add(i + 1, i + 1, 1.0);
            t.add(i, i + 1, -1.0);
        }
        let a = t.build();
        let dofs: Vec<usize> = (0..n).collect();
        let ord = Ordering::rcm(&a, &dofs);
        let err = Skyline::factor(&a, None, &ord, true).unwrap_err();
        let v = &err.null_vector;
        assert!(v.iter().all(|x| (x - v[0]).abs() < 1e-9));
    }
}
