use alloc::vec;
use alloc::vec::Vec;

/// Square sparse matrix in compressed-row form with both triangles stored.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

/// Accumulates upper-triangle contributions of a symmetric matrix. The
/// lower triangle is produced by mirroring, so the result is exactly
/// symmetric.
#[derive(Clone, Debug, Default)]
pub struct SymTriplets {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SymTriplets {
    pub fn new(n: usize) -> Self {
        SymTriplets { n, entries: Vec::new() }
    }

    /// Adds `v` at `(i, j)`; contributions below the diagonal are folded
    /// onto the mirrored upper entry.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            self.entries.push((i.min(j), i.max(j), v));
        }
    }

    pub fn build(mut self) -> CsrMatrix {
        self.entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(self.entries.len());
        for (i, j, v) in self.entries {
            match merged.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => merged.push((i, j, v)),
            }
        }
        let mut count = vec![0usize; self.n + 1];
        for &(i, j, _) in &merged {
            count[i + 1] += 1;
            if i != j {
                count[j + 1] += 1;
            }
        }
        for r in 0..self.n {
            count[r + 1] += count[r];
        }
        let nnz = count[self.n];
        let mut cols = vec![0usize; nnz];
        let mut vals = vec![0.0; nnz];
        let mut next = count.clone();
        // lower entries of row j come from upper entries (i, j) with i < j, visited
        // in increasing i, so every row ends up column-sorted
        for &(i, j, v) in &merged {
            if i != j {
                cols[next[j]] = i;
                vals[next[j]] = v;
                next[j] += 1;
            }
        }
        for &(i, j, v) in &merged {
            cols[next[i]] = j;
            vals[next[i]] = v;
            next[i] += 1;
        }
        let mut m = CsrMatrix { n: self.n, row_ptr: count, cols, vals };
        m.sort_rows();
        m
    }
}

impl CsrMatrix {
    fn sort_rows(&mut self) {
        for r in 0..self.n {
            let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
            let mut pairs: Vec<(usize, f64)> = (a..b).map(|k| (self.cols[k], self.vals[k])).collect();
            pairs.sort_by_key(|p| p.0);
            for (k, (c, v)) in (a..b).zip(pairs) {
                self.cols[k] = c;
                self.vals[k] = v;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `(column, value)` pairs of row `r`, columns ascending.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.cols[a..b].iter().copied().zip(self.vals[a..b].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.cols[a..b].binary_search(&j) {
            Ok(k) => self.vals[a + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate().take(self.n) {
            *out = self.row(r).map(|(c, v)| v * x[c]).sum();
        }
    }

    /// Largest `|A - A^T|` entry.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                worst = worst.max((v - self.get(c, r)).abs());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Dense row-major copy of the rows and columns listed in `idx`.
    pub fn dense_submatrix(&self, idx: &[usize]) -> Vec<f64> {
        let n = idx.len();
        let mut pos = vec![usize::MAX; self.n];
        for (k, &i) in idx.iter().enumerate() {
            pos[i] = k;
        }
        let mut out = vec![0.0; n * n];
        for (a, &i) in idx.iter().enumerate() {
            for (c, v) in self.row(i) {
                if pos[c] != usize::MAX {
                    out[a * n + pos[c]] = v;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirrored_assembly_is_symmetric() {
        let mut t = SymTriplets::new(4);
        t.add(0, 0, 2.0);
        t.add(0, 3, 1.5);
        t.add(3, 0, 0.5);
        t.add(2, 1, -1.0);
        t.add(3, 3, 4.0);
        let m = t.build();
        assert_eq!(m.get(0, 3), 2.0);
        assert_eq!(m.get(3, 0), 2.0);
        assert_eq!(m.get(1, 2), -1.0);
        assert_eq!(m.max_asymmetry(), 0.0);
        let mut y = [0.0; 4];
        m.mul_vec(&[1.0, 1.0, 1.0, 1.0], &mut y);
        assert_eq!(y, [4.0, -1.0, -1.0, 6.0]);
    }
}
