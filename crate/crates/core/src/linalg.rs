//! Small sparse/banded/dense linear algebra used by the solvers.
//!
//! Matrices here are modest (a few 10^4 unknowns, bandwidth a few hundred),
//! so a compressed-row format plus a pivot-free band LU is enough.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub n_rows: usize,
    pub n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    /// Build from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut trip: Vec<(usize, usize, f64)>) -> Self {
        trip.sort_unstable_by_key(|t| (t.0, t.1));
        let mut indptr = vec![0usize; n_rows + 1];
        let mut indices = Vec::with_capacity(trip.len());
        let mut values: Vec<f64> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trip {
            debug_assert!(r < n_rows && c < n_cols);
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n_rows {
            indptr[r + 1] += indptr[r];
        }
        Csr { n_rows, n_cols, indptr, indices, values }
    }

    pub fn identity(n: usize) -> Self {
        Self::diag(&vec![1.0; n])
    }

    pub fn diag(d: &[f64]) -> Self {
        let n = d.len();
        Csr { n_rows: n, n_cols: n, indptr: (0..=n).collect(), indices: (0..n).collect(), values: d.to_vec() }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.iter().position(|&c| c == j).map_or(0.0, |p| vals[p])
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        for (i, yi) in y.iter_mut().enumerate().take(self.n_rows) {
            let (cols, vals) = self.row(i);
            let mut s = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                s += v * x[*c];
            }
            *yi = s;
        }
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Csr) -> Csr {
        assert_eq!(self.n_cols, other.n_rows);
        let mut acc = vec![0.0; other.n_cols];
        let mut touched = vec![false; other.n_cols];
        let mut list: Vec<usize> = Vec::new();
        let mut indptr = Vec::with_capacity(self.n_rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for i in 0..self.n_rows {
            let (ca, va) = self.row(i);
            for (k, a) in ca.iter().zip(va) {
                let (cb, vb) = other.row(*k);
                for (j, b) in cb.iter().zip(vb) {
                    if !touched[*j] {
                        touched[*j] = true;
                        list.push(*j);
                    }
                    acc[*j] += a * b;
                }
            }
            list.sort_unstable();
            for &j in &list {
                indices.push(j);
                values.push(acc[j]);
                acc[j] = 0.0;
                touched[j] = false;
            }
            list.clear();
            indptr.push(indices.len());
        }
        Csr { n_rows: self.n_rows, n_cols: other.n_cols, indptr, indices, values }
    }

    /// `a * self + b * other`.
    pub fn lin_comb(&self, a: f64, other: &Csr, b: f64) -> Csr {
        assert_eq!((self.n_rows, self.n_cols), (other.n_rows, other.n_cols));
        let mut trip = Vec::with_capacity(self.nnz() + other.nnz());
        for (m, s) in [(self, a), (other, b)] {
            for i in 0..m.n_rows {
                let (cols, vals) = m.row(i);
                for (c, v) in cols.iter().zip(vals) {
                    trip.push((i, *c, s * v));
                }
            }
        }
        Csr::from_triplets(self.n_rows, self.n_cols, trip)
    }

    /// `diag(s) * self`.
    pub fn scale_rows(&self, s: &[f64]) -> Csr {
        let mut out = self.clone();
        for (i, si) in s.iter().enumerate() {
            for v in &mut out.values[self.indptr[i]..self.indptr[i + 1]] {
                *v *= si;
            }
        }
        out
    }

    /// Row `i` is taken from `other` when `take_other[i]`, else from `self`.
    pub fn splice_rows(&self, take_other: &[bool], other: &Csr) -> Csr {
        let mut trip = Vec::with_capacity(self.nnz());
        for (i, &t) in take_other.iter().enumerate() {
            let (cols, vals) = if t { other.row(i) } else { self.row(i) };
            for (c, v) in cols.iter().zip(vals) {
                trip.push((i, *c, *v));
            }
        }
        Csr::from_triplets(self.n_rows, self.n_cols, trip)
    }

    pub fn transpose(&self) -> Csr {
        let mut trip = Vec::with_capacity(self.nnz());
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                trip.push((*c, i, *v));
            }
        }
        Csr::from_triplets(self.n_cols, self.n_rows, trip)
    }

    /// Lower and upper bandwidth of the stored pattern.
    pub fn bandwidth(&self) -> (usize, usize) {
        let (mut kl, mut ku) = (0, 0);
        for i in 0..self.n_rows {
            for &c in self.row(i).0 {
                if c < i {
                    kl = kl.max(i - c);
                } else {
                    ku = ku.max(c - i);
                }
            }
        }
        (kl, ku)
    }

    pub fn to_banded(&self) -> Banded {
        assert_eq!(self.n_rows, self.n_cols);
        let (kl, ku) = self.bandwidth();
        let mut b = Banded::zeros(self.n_rows, kl, ku);
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                b.add(i, *c, *v);
            }
        }
        b
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n_rows * self.n_cols];
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                d[i * self.n_cols + c] += v;
            }
        }
        d
    }
}

/// Square band matrix, row-major storage of the band.
#[derive(Debug, Clone, PartialEq)]
pub struct Banded {
    pub n: usize,
    pub kl: usize,
    pub ku: usize,
    data: Vec<f64>,
}

impl Banded {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Banded { n, kl, ku, data: vec![0.0; n * (kl + ku + 1)] }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku);
        i * (self.kl + self.ku + 1) + (j + self.kl - i)
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku && i < self.n && j < self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            0.0
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    /// Replace row `i` by the unit row.
    pub fn pin_row(&mut self, i: usize) {
        let lo = i.saturating_sub(self.kl);
        let hi = (i + self.ku).min(self.n - 1);
        for j in lo..=hi {
            self.set(i, j, if i == j { 1.0 } else { 0.0 });
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (i, yi) in y.iter_mut().enumerate() {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            let mut s = 0.0;
            for (j, xj) in x.iter().enumerate().take(hi + 1).skip(lo) {
                s += self.data[self.idx(i, j)] * xj;
            }
            *yi = s;
        }
        y
    }

    /// In-place LU without pivoting.
    pub fn factor(self) -> Result<BandedLu> {
        BandedLu::new(self)
    }
}

/// LU factors of a band matrix (unit lower L, upper U) computed without
/// pivoting. Used only for matrices that are diagonally dominant or
/// similar to symmetric positive definite ones.
#[derive(Debug, Clone)]
pub struct BandedLu {
    m: Banded,
}

impl BandedLu {
    pub fn new(mut m: Banded) -> Result<Self> {
        let n = m.n;
        let (kl, ku) = (m.kl, m.ku);
        let w = kl + ku + 1;
        let scale = m.data.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let floor = scale * 1e-14;
        for k in 0..n {
            let pk = m.data[k * w + kl];
            if !(pk.abs() > floor) {
                return Err(Error::Singular { row: k, pivot: pk });
            }
            let rmax = (k + kl).min(n - 1);
            let cmax = (k + ku).min(n - 1);
            for r in (k + 1)..=rmax {
                let rk = r * w + (k + kl - r);
                let l = m.data[rk] / pk;
                if l == 0.0 {
                    continue;
                }
                m.data[rk] = l;
                let base_r = r * w + kl - r;
                let base_k = k * w + kl - k;
                for c in (k + 1)..=cmax {
                    m.data[base_r + c] -= l * m.data[base_k + c];
                }
            }
        }
        Ok(BandedLu { m })
    }

    pub fn n(&self) -> usize {
        self.m.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.m.n;
        let (kl, ku) = (self.m.kl, self.m.ku);
        let w = kl + ku + 1;
        let d = &self.m.data;
        for i in 0..n {
            let lo = i.saturating_sub(kl);
            let base = i * w + kl - i;
            let mut s = b[i];
            for j in lo..i {
                s -= d[base + j] * b[j];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + ku).min(n - 1);
            let base = i * w + kl - i;
            let mut s = b[i];
            for j in (i + 1)..=hi {
                s -= d[base + j] * b[j];
            }
            b[i] = s / d[base + i];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Dense LU with partial pivoting, row-major.
#[derive(Debug, Clone)]
pub struct DenseLu {
    n: usize,
    a: Vec<f64>,
    perm: Vec<usize>,
}

impl DenseLu {
    pub fn new(n: usize, mut a: Vec<f64>) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..n {
            let mut p = k;
            let mut best = a[k * n + k].abs();
            for r in (k + 1)..n {
                let v = a[r * n + k].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if !(best > scale * 1e-15) {
                return Err(Error::Singular { row: k, pivot: best });
            }
            if p != k {
                for c in 0..n {
                    a.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
            }
            let pk = a[k * n + k];
            for r in (k + 1)..n {
                let l = a[r * n + k] / pk;
                a[r * n + k] = l;
                if l != 0.0 {
                    for c in (k + 1)..n {
                        a[r * n + c] -= l * a[k * n + c];
                    }
                }
            }
        }
        Ok(DenseLu { n, a, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.a[i * n + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.a[i * n + j] * x[j];
            }
            x[i] = s / self.a[i * n + i];
        }
        x
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `sum_i w_i a_i b_i`.
pub fn wdot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum()
}

pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}
