//! Compressed sparse row and dense row-major matrices of `f32`.
//!
//! Everything in the crate (features, label matrices, tree indexers, ranker
//! weights, shortlists and beam predictions) is carried by [`SparseMatrix`].
//! Matrices are immutable after construction and always canonical: column
//! indices strictly increase within a row and no explicit zeros are stored.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"XRSM";
const FORMAT_VERSION: u32 = 1;

/// A sparse row: `(column, value)` pairs.
pub type SparseRow = Vec<(u32, f32)>;

#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f32>,
}

impl SparseMatrix {
    /// Builds a matrix from raw CSR arrays, checking every structural invariant.
    pub fn from_csr(
        n_rows: usize,
        n_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<u32>,
        values: Vec<f32>,
    ) -> Result<Self> {
        if row_ptr.len() != n_rows + 1 {
            return Err(Error::Format(format!(
                "row_ptr has length {}, expected {}",
                row_ptr.len(),
                n_rows + 1
            )));
        }
        if row_ptr[0] != 0 || row_ptr[n_rows] != col_idx.len() || col_idx.len() != values.len() {
            return Err(Error::Format("row_ptr does not span the nonzeros".into()));
        }
        for i in 0..n_rows {
            let (lo, hi) = (row_ptr[i], row_ptr[i + 1]);
            if lo > hi {
                return Err(Error::Format(format!("row_ptr decreases at row {i}")));
            }
            for k in lo..hi {
                if col_idx[k] as usize >= n_cols {
                    return Err(Error::Format(format!(
                        "column {} out of range in row {i}",
                        col_idx[k]
                    )));
                }
                if k > lo && col_idx[k] <= col_idx[k - 1] {
                    return Err(Error::Format(format!(
                        "columns not strictly increasing in row {i}"
                    )));
                }
                if values[k] == 0.0 {
                    return Err(Error::Format(format!("explicit zero stored in row {i}")));
                }
            }
        }
        Ok(SparseMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Builds a matrix from per-row entry lists. Entries may be unsorted and
    /// duplicated; duplicates are summed and zeros dropped.
    pub fn from_rows(n_cols: usize, rows: Vec<SparseRow>) -> Result<Self> {
        let n_rows = rows.len();
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(c, _)| c);
            let mut k = 0;
            while k < row.len() {
                let c = row[k].0;
                if c as usize >= n_cols {
                    return Err(Error::dim(format!(
                        "column {c} out of range ({n_cols} columns) in row {i}"
                    )));
                }
                let mut acc = row[k].1 as f64;
                k += 1;
                while k < row.len() && row[k].0 == c {
                    acc += row[k].1 as f64;
                    k += 1;
                }
                let v = acc as f32;
                if v != 0.0 {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(SparseMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub(crate) fn from_rows_unchecked(n_cols: usize, rows: Vec<SparseRow>) -> Self {
        Self::from_rows(n_cols, rows).expect("rows produced by an in-crate kernel are in range")
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        SparseMatrix {
            n_rows,
            n_cols,
            row_ptr: vec![0; n_rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn ones(n_rows: usize, n_cols: usize) -> Self {
        let row: SparseRow = (0..n_cols as u32).map(|c| (c, 1.0)).collect();
        Self::from_rows_unchecked(n_cols, vec![row; n_rows])
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows_unchecked(n, (0..n as u32).map(|i| vec![(i, 1.0)]).collect())
    }

    /// Converts a dense row-major matrix, dropping zeros.
    pub fn from_dense(dense: &DenseMatrix) -> Self {
        let rows = (0..dense.n_rows())
            .map(|i| {
                dense
                    .row(i)
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(c, &v)| (c as u32, v))
                    .collect()
            })
            .collect();
        Self::from_rows_unchecked(dense.n_cols(), rows)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            let dst = out.row_mut(i);
            for (&c, &v) in cols.iter().zip(vals) {
                dst[c as usize] = v;
            }
        }
        out
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[u32] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[u32], &[f32]) {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (u32, f32)> + '_ {
        let (c, v) = self.row(i);
        c.iter().copied().zip(v.iter().copied())
    }

    /// Value at `(i, j)`, zero when not stored.
    pub fn get(&self, i: usize, j: usize) -> f32 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&(j as u32)) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_idx {
            counts[c as usize + 1] += 1;
        }
        for j in 0..self.n_cols {
            counts[j + 1] += counts[j];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0u32; self.nnz()];
        let mut values = vec![0f32; self.nnz()];
        for i in 0..self.n_rows {
            for (c, v) in self.row_entries(i) {
                let dst = next[c as usize];
                col_idx[dst] = i as u32;
                values[dst] = v;
                next[c as usize] += 1;
            }
        }
        SparseMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Exact sparse product `self · other`, accumulated in `f64` per output entry.
    pub fn matmul(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.n_cols != other.n_rows {
            return Err(Error::dim(format!(
                "cannot multiply {}x{} by {}x{}",
                self.n_rows, self.n_cols, other.n_rows, other.n_cols
            )));
        }
        let n_out = other.n_cols;
        let rows: Vec<SparseRow> = (0..self.n_rows)
            .into_par_iter()
            .map_init(
                || (vec![0f64; n_out], vec![false; n_out], Vec::<u32>::new()),
                |(acc, seen, touched), i| {
                    for (k, a) in self.row_entries(i) {
                        for (j, b) in other.row_entries(k as usize) {
                            let j_us = j as usize;
                            if !seen[j_us] {
                                seen[j_us] = true;
                                touched.push(j);
                            }
                            acc[j_us] += a as f64 * b as f64;
                        }
                    }
                    touched.sort_unstable();
                    let mut row = Vec::with_capacity(touched.len());
                    for &j in touched.iter() {
                        let v = acc[j as usize] as f32;
                        if v != 0.0 {
                            row.push((j, v));
                        }
                        acc[j as usize] = 0.0;
                        seen[j as usize] = false;
                    }
                    touched.clear();
                    row
                },
            )
            .collect();
        Ok(Self::from_sorted_rows(n_out, rows))
    }

    /// Product with the transpose of `other`: `self · otherᵀ`.
    pub fn matmul_transpose(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        self.matmul(&other.transpose())
    }

    /// Replaces every stored value by 1.
    pub fn binarize(&self) -> SparseMatrix {
        SparseMatrix {
            values: vec![1.0; self.nnz()],
            ..self.clone()
        }
    }

    /// Keeps the `k` largest entries of each row; ties go to the smaller column.
    pub fn top_k_per_row(&self, k: usize) -> Result<SparseMatrix> {
        if k == 0 {
            return Err(Error::invalid("top-k requires k >= 1"));
        }
        let rows: Vec<SparseRow> = (0..self.n_rows)
            .into_par_iter()
            .map(|i| {
                let mut row: SparseRow = self.row_entries(i).collect();
                if row.len() > k {
                    row.sort_by(|a, b| desc_score_then_index(a, b));
                    row.truncate(k);
                    row.sort_unstable_by_key(|&(c, _)| c);
                }
                row
            })
            .collect();
        Ok(Self::from_sorted_rows(self.n_cols, rows))
    }

    /// Scales each row to unit ℓ2 norm. Zero rows stay zero.
    pub fn row_l2_normalize(&self) -> SparseMatrix {
        let mut out = self.clone();
        for i in 0..self.n_rows {
            let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let norm = l2_norm(&self.values[lo..hi]);
            if norm > 0.0 {
                for v in &mut out.values[lo..hi] {
                    *v = (*v as f64 / norm) as f32;
                }
            }
        }
        out.drop_zeros()
    }

    pub fn row_l1_norms(&self) -> Vec<f32> {
        (0..self.n_rows)
            .map(|i| self.row(i).1.iter().map(|v| v.abs() as f64).sum::<f64>() as f32)
            .collect()
    }

    pub fn row_l2_norms(&self) -> Vec<f32> {
        (0..self.n_rows)
            .map(|i| l2_norm(self.row(i).1) as f32)
            .collect()
    }

    /// Element-wise union `self + other` of two equally shaped matrices.
    pub fn add(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.shape() != other.shape() {
            return Err(Error::dim(format!(
                "cannot add {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let rows = (0..self.n_rows)
            .map(|i| {
                let mut row: SparseRow = self.row_entries(i).collect();
                row.extend(other.row_entries(i));
                row
            })
            .collect();
        Self::from_rows(self.n_cols, rows)
    }

    /// Concatenates columns: `[self, other]`.
    pub fn hstack(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.n_rows != other.n_rows {
            return Err(Error::dim(format!(
                "hstack of {} and {} rows",
                self.n_rows, other.n_rows
            )));
        }
        let offset = self.n_cols as u32;
        let rows = (0..self.n_rows)
            .map(|i| {
                self.row_entries(i)
                    .chain(other.row_entries(i).map(|(c, v)| (c + offset, v)))
                    .collect()
            })
            .collect();
        Ok(Self::from_sorted_rows(self.n_cols + other.n_cols, rows))
    }

    /// Selects a subset of rows in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> SparseMatrix {
        let out = rows.iter().map(|&i| self.row_entries(i).collect()).collect();
        Self::from_sorted_rows(self.n_cols, out)
    }

    /// Sparse row times dense vector.
    pub fn row_dot_dense(&self, i: usize, dense: &[f32]) -> f32 {
        let (cols, vals) = self.row(i);
        cols.iter()
            .zip(vals)
            .map(|(&c, &v)| v as f64 * dense[c as usize] as f64)
            .sum::<f64>() as f32
    }

    fn from_sorted_rows(n_cols: usize, rows: Vec<SparseRow>) -> SparseMatrix {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for row in &rows {
            for &(c, v) in row {
                if v != 0.0 {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix {
            n_rows: rows.len(),
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    fn drop_zeros(self) -> SparseMatrix {
        if self.values.iter().all(|&v| v != 0.0) {
            return self;
        }
        let rows = (0..self.n_rows)
            .map(|i| self.row_entries(i).collect())
            .collect();
        Self::from_sorted_rows(self.n_cols, rows)
    }

    /// Writes the little-endian binary format: `XRSM`, version (u32), rows,
    /// cols and nnz (u64), then row_ptr (u64), col_idx (u32) and values (f32).
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.n_rows as u64).to_le_bytes())?;
        w.write_all(&(self.n_cols as u64).to_le_bytes())?;
        w.write_all(&(self.nnz() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(8 * self.row_ptr.len() + 8 * self.nnz());
        for &p in &self.row_ptr {
            buf.extend_from_slice(&(p as u64).to_le_bytes());
        }
        for &c in &self.col_idx {
            buf.extend_from_slice(&c.to_le_bytes());
        }
        for &v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<SparseMatrix> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad sparse matrix magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported sparse matrix version {version}"
            )));
        }
        let n_rows = read_u64(&mut r)? as usize;
        let n_cols = read_u64(&mut r)? as usize;
        let nnz = read_u64(&mut r)? as usize;
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        for _ in 0..=n_rows {
            row_ptr.push(read_u64(&mut r)? as usize);
        }
        let mut col_idx = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            col_idx.push(read_u32(&mut r)?);
        }
        let mut values = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            values.push(f32::from_bits(read_u32(&mut r)?));
        }
        Self::from_csr(n_rows, n_cols, row_ptr, col_idx, values)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Ordering for ranked `(index, score)` pairs: higher score first, then smaller index.
pub fn desc_score_then_index(a: &(u32, f32), b: &(u32, f32)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f32>,
}

impl DenseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        DenseMatrix {
            n_rows,
            n_cols,
            values: vec![0.0; n_rows * n_cols],
        }
    }

    pub fn from_vec(n_rows: usize, n_cols: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != n_rows * n_cols {
            return Err(Error::dim(format!(
                "{} values for a {n_rows}x{n_cols} matrix",
                values.len()
            )));
        }
        Ok(DenseMatrix {
            n_rows,
            n_cols,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[i * self.n_cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        self.values[i * self.n_cols + j] = v;
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.n_cols, self.n_rows);
        for i in 0..self.n_rows {
            for j in 0..self.n_cols {
                out.values[j * self.n_rows + i] = self.values[i * self.n_cols + j];
            }
        }
        out
    }

    /// Scales each row to unit ℓ2 norm; zero rows stay zero.
    pub fn row_l2_normalize(&self) -> DenseMatrix {
        let mut out = self.clone();
        for i in 0..self.n_rows {
            let row = out.row_mut(i);
            let norm = l2_norm(row);
            if norm > 0.0 {
                for v in row.iter_mut() {
                    *v = (*v as f64 / norm) as f32;
                }
            }
        }
        out
    }
}

/// Dot product with `f64` accumulation.
pub fn dense_dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum::<f64>() as f32
}

/// `y += alpha * x`.
pub fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` computed without overflow.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn sigmoid_map(values: &[f32]) -> Vec<f32> {
    values.iter().map(|&v| sigmoid(v as f64) as f32).collect()
}

pub(crate) fn l2_norm(values: &[f32]) -> f64 {
    values
        .iter()
        .map(|&v| v as f64 * v as f64)
        .sum::<f64>()
        .sqrt()
}
