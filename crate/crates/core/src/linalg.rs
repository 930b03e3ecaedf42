//! Small linear-algebra kernels shared by the solvers.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Compressed sparse column copy of a dense matrix. Products visit entries
/// in a fixed order, so results are reproducible bit-for-bit.
#[derive(Debug, Clone)]
pub struct CscMatrix {
    rows: usize,
    cols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CscMatrix {
    pub fn from_dense(d: &Array2<f64>) -> Self {
        let (rows, cols) = d.dim();
        let mut col_ptr = Vec::with_capacity(cols + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for j in 0..cols {
            for i in 0..rows {
                let v = d[[i, j]];
                if v != 0.0 {
                    row_idx.push(i);
                    values.push(v);
                }
            }
            col_ptr.push(values.len());
        }
        Self {
            rows,
            cols,
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `out = D x`.
    pub fn mul_into(&self, x: ArrayView1<f64>, out: &mut Array1<f64>) {
        out.fill(0.0);
        for j in 0..self.cols {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                out[self.row_idx[k]] += self.values[k] * xj;
            }
        }
    }

    /// `out = D^T u`.
    pub fn tmul_into(&self, u: ArrayView1<f64>, out: &mut Array1<f64>) {
        for j in 0..self.cols {
            let mut acc = 0.0;
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                acc += self.values[k] * u[self.row_idx[k]];
            }
            out[j] = acc;
        }
    }

    pub fn mul(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let mut out = Array1::zeros(self.rows);
        self.mul_into(x, &mut out);
        out
    }

    pub fn tmul(&self, u: ArrayView1<f64>) -> Array1<f64> {
        let mut out = Array1::zeros(self.cols);
        self.tmul_into(u, &mut out);
        out
    }

    /// Row indices and values of column `j`.
    pub fn column(&self, j: usize) -> (&[usize], &[f64]) {
        let range = self.col_ptr[j]..self.col_ptr[j + 1];
        (&self.row_idx[range.clone()], &self.values[range])
    }

    pub fn column_norms(&self) -> Array1<f64> {
        Array1::from_iter((0..self.cols).map(|j| {
            self.values[self.col_ptr[j]..self.col_ptr[j + 1]]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
        }))
    }
}

/// `D^T D` in banded storage. For dictionaries whose columns have localized
/// support the bandwidth is small and products and factorizations are cheap.
#[derive(Debug, Clone)]
pub struct BandedGram {
    n: usize,
    bw: usize,
    /// `data[i * (bw + 1) + k] = G(i, i - k)`.
    data: Vec<f64>,
}

impl BandedGram {
    pub fn from_csc(d: &CscMatrix) -> Self {
        let n = d.cols();
        let span: Vec<Option<(usize, usize)>> = (0..n)
            .map(|j| {
                let (rows, _) = d.column(j);
                Some((*rows.first()?, *rows.last()?))
            })
            .collect();
        // first column overlapping each column's row range
        let mut bw = 0;
        for j in 0..n {
            let Some((lo, hi)) = span[j] else { continue };
            if let Some(i) = (0..j).find(|&i| matches!(span[i], Some((a, b)) if a <= hi && b >= lo)) {
                bw = bw.max(j - i);
            }
        }
        let mut data = vec![0.0; n * (bw + 1)];
        let mut dense = vec![0.0; d.rows()];
        for i in 0..n {
            let (rows, vals) = d.column(i);
            for (&r, &v) in rows.iter().zip(vals) {
                dense[r] = v;
            }
            for k in 0..=bw.min(i) {
                let (rj, vj) = d.column(i - k);
                data[i * (bw + 1) + k] = rj.iter().zip(vj).map(|(&r, &v)| dense[r] * v).sum();
            }
            for &r in rows {
                dense[r] = 0.0;
            }
        }
        Self { n, bw, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    /// `G(i, j)`, zero outside the band.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let k = hi - lo;
        if k > self.bw {
            0.0
        } else {
            self.data[hi * (self.bw + 1) + k]
        }
    }

    pub fn diag(&self) -> Array1<f64> {
        Array1::from_iter((0..self.n).map(|i| self.data[i * (self.bw + 1)]))
    }

    /// `out = G z`.
    pub fn mul_into(&self, z: ArrayView1<f64>, out: &mut Array1<f64>) {
        out.fill(0.0);
        let w = self.bw + 1;
        for i in 0..self.n {
            let row = &self.data[i * w..i * w + w];
            let zi = z[i];
            let mut acc = row[0] * zi;
            for k in 1..=self.bw.min(i) {
                let j = i - k;
                acc += row[k] * z[j];
                out[j] += row[k] * zi;
            }
            out[i] += acc;
        }
    }
}

/// Cholesky factor of `Diag(w_F) + lambda G_FF` for a sorted index set `F`,
/// stored by rows over the profile inherited from the band of `G`.
#[derive(Debug, Clone)]
pub struct ProfileCholesky {
    start: Vec<usize>,
    offset: Vec<usize>,
    l: Vec<f64>,
}

impl ProfileCholesky {
    /// `None` if the matrix is not numerically positive definite.
    pub fn factor(gram: &BandedGram, w: ArrayView1<f64>, lambda: f64, free: &[usize]) -> Option<Self> {
        let n = free.len();
        let mut start = Vec::with_capacity(n);
        let mut offset = Vec::with_capacity(n + 1);
        let mut c0 = 0;
        offset.push(0);
        for a in 0..n {
            while free[a] - free[c0] > gram.bw {
                c0 += 1;
            }
            start.push(c0);
            offset.push(offset[a] + a - c0 + 1);
        }
        let mut l = vec![0.0; offset[n]];
        for a in 0..n {
            let fa = free[a];
            let (sa, oa) = (start[a], offset[a]);
            for c in sa..=a {
                let mut s = lambda * gram.get(fa, free[c]);
                if c == a {
                    s += w[fa];
                }
                let (sc, oc) = (start[c], offset[c]);
                let k0 = sa.max(sc);
                let ra = &l[oa + (k0 - sa)..oa + (c - sa)];
                let rc = &l[oc + (k0 - sc)..oc + (c - sc)];
                s -= ra.iter().zip(rc).map(|(x, y)| x * y).sum::<f64>();
                if c < a {
                    l[oa + c - sa] = s / l[oc + c - sc];
                } else {
                    if !(s > 0.0) {
                        return None;
                    }
                    l[oa + a - sa] = s.sqrt();
                }
            }
        }
        Some(Self { start, offset, l })
    }

    /// Solves in place.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.start.len();
        for a in 0..n {
            let (sa, oa) = (self.start[a], self.offset[a]);
            let row = &self.l[oa..oa + (a - sa)];
            let s: f64 = row.iter().zip(&b[sa..a]).map(|(x, y)| x * y).sum();
            b[a] = (b[a] - s) / self.l[oa + a - sa];
        }
        for a in (0..n).rev() {
            let (sa, oa) = (self.start[a], self.offset[a]);
            b[a] /= self.l[oa + a - sa];
            let ba = b[a];
            for c in sa..a {
                b[c] -= self.l[oa + c - sa] * ba;
            }
        }
    }
}

pub fn norm(x: ArrayView1<f64>) -> f64 {
    x.dot(&x).sqrt()
}

pub fn dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
}

/// Spectral norm estimate of `D` from `iters` power iterations on `D^T D`
/// started from a seeded random vector.
pub fn spectral_norm(d: &CscMatrix, iters: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array1::from_iter((0..d.cols()).map(|_| rng.random_range(-1.0..1.0)));
    let mut estimate = 0.0;
    for _ in 0..iters.max(1) {
        let nx = norm(x.view());
        if nx == 0.0 {
            return 0.0;
        }
        x /= nx;
        let dx = d.mul(x.view());
        estimate = norm(dx.view());
        x = d.tmul(dx.view());
    }
    estimate
}
