//! Compressed sparse row storage with deterministic triplet assembly,
//! plus Matrix Market and plain-vector text I/O.

use std::io::{BufRead, Write};

use faer::Mat;

use crate::error::{Error, Result};

/// Row-major sparse matrix with sorted column indices and no duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Collects `(row, col, value)` contributions; duplicates are summed in
/// insertion order, so the result is independent of anything but the
/// sequence of `push` calls.
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, value));
    }

    pub fn build(mut self) -> CsrMatrix {
        // stable sort keeps insertion order among duplicates
        self.entries.sort_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..self.nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }
}

impl CsrMatrix {
    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut b = TripletBuilder::new(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            b.push(i, i, d);
        }
        b.build()
    }

    pub fn from_dense(a: &Mat<f64>) -> Self {
        let mut b = TripletBuilder::new(a.nrows(), a.ncols());
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                if a[(i, j)] != 0.0 {
                    b.push(i, j, a[(i, j)]);
                }
            }
        }
        b.build()
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    /// Iterate over stored entries as `(row, col, value)`.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// `Some(d)` when every stored off-diagonal entry is zero.
    pub fn as_diagonal(&self) -> Option<Vec<f64>> {
        let off_diag_zero = self.triplets().all(|(i, j, v)| i == j || v == 0.0);
        (self.nrows == self.ncols && off_diag_zero).then(|| self.diagonal())
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let mut b = TripletBuilder::new(self.ncols, self.nrows);
        for (i, j, v) in self.triplets() {
            b.push(j, i, v);
        }
        b.build()
    }

    /// `alpha * self + beta * other` on the union pattern.
    pub fn linear_combination(&self, alpha: f64, other: &Self, beta: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut b = TripletBuilder::new(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            b.push(i, j, alpha * v);
        }
        for (i, j, v) in other.triplets() {
            b.push(i, j, beta * v);
        }
        b.build()
    }

    /// Entries with `|row - col| <= bandwidth`.
    pub fn band(&self, bandwidth: usize) -> Self {
        let mut b = TripletBuilder::new(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            if i.abs_diff(j) <= bandwidth {
                b.push(i, j, v);
            }
        }
        b.build()
    }

    pub fn bandwidth(&self) -> usize {
        self.triplets()
            .filter(|t| t.2 != 0.0)
            .map(|(i, j, _)| i.abs_diff(j))
            .max()
            .unwrap_or(0)
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        self.triplets()
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let a = self.triplets().map(|(i, j, v)| (v - other.get(i, j)).abs());
        let b = other.triplets().map(|(i, j, v)| (v - self.get(i, j)).abs());
        a.chain(b).fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] += v;
        }
        m
    }

    /// Principal submatrix on the listed indices, renumbered in list order.
    pub fn submatrix(&self, keep: &[usize]) -> Self {
        let mut map = vec![usize::MAX; self.nrows.max(self.ncols)];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut b = TripletBuilder::new(keep.len(), keep.len());
        for &old in keep {
            for (j, v) in self.row(old) {
                if map[j] != usize::MAX {
                    b.push(map[old], map[j], v);
                }
            }
        }
        b.build()
    }

    /// Write in Matrix Market coordinate format (1-based, `general`).
    pub fn write_matrix_market(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (i, j, v) in self.triplets() {
            writeln!(w, "{} {} {:.17e}", i + 1, j + 1, v)?;
        }
        Ok(())
    }

    /// Read a Matrix Market coordinate file (`general` or `symmetric`).
    pub fn read_matrix_market(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or(Error::Parse { line: 1, msg: "empty file".into() })?;
        let header = header?.to_lowercase();
        if !header.starts_with("%%matrixmarket matrix coordinate real") {
            return Err(Error::Parse { line: 1, msg: format!("unsupported header `{header}`") });
        }
        let symmetric = header.contains("symmetric");
        let mut builder: Option<TripletBuilder> = None;
        for (n, line) in lines {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('%') {
                continue;
            }
            let parse_err = |msg: String| Error::Parse { line: n + 1, msg };
            let fields: Vec<&str> = t.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(parse_err(format!("expected 3 fields, found {}", fields.len())));
            }
            match builder.as_mut() {
                None => {
                    let r: usize = fields[0].parse().map_err(|e| parse_err(format!("{e}")))?;
                    let c: usize = fields[1].parse().map_err(|e| parse_err(format!("{e}")))?;
                    builder = Some(TripletBuilder::new(r, c));
                }
                Some(b) => {
                    let i: usize = fields[0].parse().map_err(|e| parse_err(format!("{e}")))?;
                    let j: usize = fields[1].parse().map_err(|e| parse_err(format!("{e}")))?;
                    let v: f64 = fields[2].parse().map_err(|e| parse_err(format!("{e}")))?;
                    if i == 0 || j == 0 || i > b.nrows || j > b.ncols {
                        return Err(parse_err(format!("index ({i}, {j}) out of range")));
                    }
                    b.push(i - 1, j - 1, v);
                    if symmetric && i != j {
                        b.push(j - 1, i - 1, v);
                    }
                }
            }
        }
        builder
            .map(TripletBuilder::build)
            .ok_or(Error::Parse { line: 0, msg: "missing size line".into() })
    }
}

/// Newline-separated decimals, full round-trip precision.
pub fn write_vector(v: &[f64], mut w: impl Write) -> Result<()> {
    for x in v {
        writeln!(w, "{x:.17e}")?;
    }
    Ok(())
}

pub fn read_vector(r: impl BufRead) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        out.push(t.parse().map_err(|e| Error::Parse {
            line: n + 1,
            msg: format!("{e}"),
        })?);
    }
    Ok(out)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
