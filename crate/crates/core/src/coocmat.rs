//! Sparse feature-by-word contextual matrices.
//!
//! Counting accumulates hash-keyed triplets; [`TripletAccumulator::finish`]
//! converts them to compressed-column storage with cached marginals.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::corpus::Corpus;
use crate::features::{check_space, fired_feature, FeatureSpace};
use crate::{par, Error, Result};

/// Compressed-column sparse matrix with cached row and column sums.
///
/// Stored values are always non-zero and row indices within each column are
/// strictly increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    values: Vec<f64>,
    row_sums: Vec<f64>,
    col_sums: Vec<f64>,
    provenance: String,
}

/// A contextual matrix: rows are feature variables, columns words.
pub type SparseCountMatrix = SparseMatrix;

#[derive(Clone, Debug)]
pub struct TripletAccumulator {
    nrows: usize,
    ncols: usize,
    cells: HashMap<(u32, u32), f64>,
}

impl TripletAccumulator {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        TripletAccumulator {
            nrows,
            ncols,
            cells: HashMap::new(),
        }
    }

    pub fn add(&mut self, row: u32, col: u32, value: f64) {
        debug_assert!((row as usize) < self.nrows && (col as usize) < self.ncols);
        *self.cells.entry((row, col)).or_insert(0.0) += value;
    }

    pub fn merge(&mut self, other: TripletAccumulator) {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        // keep the merge order fixed for reproducible sums
        let mut cells: Vec<_> = other.cells.into_iter().collect();
        cells.sort_by_key(|&(k, _)| k);
        for ((i, j), v) in cells {
            self.add(i, j, v);
        }
    }

    pub fn finish(self, provenance: impl Into<String>) -> SparseMatrix {
        let mut cells: Vec<((u32, u32), f64)> =
            self.cells.into_iter().filter(|&(_, v)| v != 0.0).collect();
        cells.sort_by_key(|&((i, j), _)| (j, i));
        SparseMatrix::from_sorted(
            self.nrows,
            self.ncols,
            cells.into_iter().map(|((i, j), v)| (i, j, v)),
            provenance.into(),
        )
    }
}

impl SparseMatrix {
    /// Builds a matrix from column-major sorted, duplicate-free triplets.
    fn from_sorted(
        nrows: usize,
        ncols: usize,
        triplets: impl Iterator<Item = (u32, u32, f64)>,
        provenance: String,
    ) -> Self {
        let mut col_ptr = vec![0usize; ncols + 1];
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        let mut row_sums = vec![0.0; nrows];
        let mut col_sums = vec![0.0; ncols];
        for (i, j, v) in triplets {
            if v == 0.0 {
                continue;
            }
            col_ptr[j as usize + 1] += 1;
            row_idx.push(i);
            values.push(v);
            row_sums[i as usize] += v;
            col_sums[j as usize] += v;
        }
        for j in 0..ncols {
            col_ptr[j + 1] += col_ptr[j];
        }
        SparseMatrix {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
            row_sums,
            col_sums,
            provenance,
        }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self::from_sorted(nrows, ncols, std::iter::empty(), "zeros".into())
    }

    /// Sums duplicate triplets. Indices must be in range.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut acc = TripletAccumulator::new(nrows, ncols);
        for (i, j, v) in triplets {
            if i >= nrows || j >= ncols {
                return Err(Error::Shape(format!(
                    "triplet ({i}, {j}) outside {nrows}x{ncols}"
                )));
            }
            acc.add(i as u32, j as u32, v);
        }
        Ok(acc.finish("triplets"))
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let triplets = (0..m.ncols()).flat_map(|j| {
            (0..m.nrows()).map(move |i| (i as u32, j as u32, m[(i, j)]))
        });
        Self::from_sorted(m.nrows(), m.ncols(), triplets, "dense".into())
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

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    /// Row indices and values of column `j`.
    pub fn col(&self, j: usize) -> (&[u32], &[f64]) {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        (&self.row_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (rows, vals) = self.col(j);
        rows.binary_search(&(i as u32)).map_or(0.0, |p| vals[p])
    }

    /// Non-zero entries in column-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ncols).flat_map(move |j| {
            let (rows, vals) = self.col(j);
            rows.iter().zip(vals).map(move |(&i, &v)| (i as usize, j, v))
        })
    }

    pub fn row_marginals(&self) -> &[f64] {
        &self.row_sums
    }

    pub fn col_marginals(&self) -> &[f64] {
        &self.col_sums
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.iter() {
            d[(i, j)] = v;
        }
        d
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut t: Vec<(u32, u32, f64)> = self.iter().map(|(i, j, v)| (j as u32, i as u32, v)).collect();
        t.sort_by_key(|&(i, j, _)| (j, i));
        Self::from_sorted(
            self.ncols,
            self.nrows,
            t.into_iter(),
            format!("transpose({})", self.provenance),
        )
    }

    /// Applies `f(row, value)` to every stored entry; entries mapped to zero
    /// are dropped.
    pub fn map_values<F: Fn(usize, f64) -> f64>(&self, f: F) -> SparseMatrix {
        let mut out = self.clone();
        let triplets: Vec<_> = self
            .iter()
            .map(|(i, j, v)| (i as u32, j as u32, f(i, v)))
            .collect();
        out = Self::from_sorted(out.nrows, out.ncols, triplets.into_iter(), out.provenance);
        out
    }

    /// `diag(rows) · self · diag(cols)`.
    pub fn scale(&self, rows: &[f64], cols: &[f64]) -> Result<SparseMatrix> {
        if rows.len() != self.nrows || cols.len() != self.ncols {
            return Err(Error::Shape(format!(
                "scaling {}x{} by {} row and {} column weights",
                self.nrows,
                self.ncols,
                rows.len(),
                cols.len()
            )));
        }
        let triplets: Vec<_> = self
            .iter()
            .map(|(i, j, v)| (i as u32, j as u32, rows[i] * v * cols[j]))
            .collect();
        Ok(Self::from_sorted(
            self.nrows,
            self.ncols,
            triplets.into_iter(),
            self.provenance.clone(),
        ))
    }

    pub fn select_columns(&self, cols: &[usize]) -> SparseMatrix {
        let triplets: Vec<_> = cols
            .iter()
            .enumerate()
            .flat_map(|(new_j, &j)| {
                let (rows, vals) = self.col(j);
                rows.iter()
                    .zip(vals)
                    .map(move |(&i, &v)| (i, new_j as u32, v))
                    .collect::<Vec<_>>()
            })
            .collect();
        Self::from_sorted(self.nrows, cols.len(), triplets.into_iter(), self.provenance.clone())
    }

    /// `self · w` for a dense `ncols × p` matrix.
    pub fn mul_dense(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if w.nrows() != self.ncols {
            return Err(Error::Shape(format!(
                "{}x{} times {}x{}",
                self.nrows,
                self.ncols,
                w.nrows(),
                w.ncols()
            )));
        }
        let cols = par::map_indexed(w.ncols(), |c| {
            let mut out = vec![0.0; self.nrows];
            let wc = w.column(c);
            for j in 0..self.ncols {
                let s = wc[j];
                if s == 0.0 {
                    continue;
                }
                let (rows, vals) = self.col(j);
                for (&i, &v) in rows.iter().zip(vals) {
                    out[i as usize] += v * s;
                }
            }
            out
        });
        Ok(DMatrix::from_iterator(self.nrows, w.ncols(), cols.into_iter().flatten()))
    }

    /// `selfᵀ · u` for a dense `nrows × p` matrix.
    pub fn tr_mul_dense(&self, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if u.nrows() != self.nrows {
            return Err(Error::Shape(format!(
                "({}x{})ᵀ times {}x{}",
                self.nrows,
                self.ncols,
                u.nrows(),
                u.ncols()
            )));
        }
        let cols = par::map_indexed(u.ncols(), |c| {
            let uc = u.column(c);
            (0..self.ncols)
                .map(|j| {
                    let (rows, vals) = self.col(j);
                    rows.iter().zip(vals).map(|(&i, &v)| v * uc[i as usize]).sum::<f64>()
                })
                .collect::<Vec<f64>>()
        });
        Ok(DMatrix::from_iterator(self.ncols, u.ncols(), cols.into_iter().flatten()))
    }

    /// Spill format: `m n nnz` header, then `i j value` lines in column-major
    /// order.
    pub fn write_spill<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        let mut line = String::new();
        for (i, j, v) in self.iter() {
            line.clear();
            let _ = writeln!(line, "{i} {j} {v:?}");
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn save_spill(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_spill(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_spill(text: &str, name: &str) -> Result<SparseMatrix> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::format(name, 1, "missing header"))?;
        let dims: Vec<usize> = header
            .split_ascii_whitespace()
            .map(|s| s.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(name, 1, "header must be `m n nnz`"))?;
        let [m, n, nnz] = dims[..] else {
            return Err(Error::format(name, 1, "header must be `m n nnz`"));
        };
        let mut acc = TripletAccumulator::new(m, n);
        let mut count = 0;
        for (no, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::format(name, no + 1, "expected `i j value`");
            let mut parts = line.split_ascii_whitespace();
            let i: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let j: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let v: f64 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            if i >= m || j >= n {
                return Err(Error::format(name, no + 1, "index out of range"));
            }
            acc.add(i as u32, j as u32, v);
            count += 1;
        }
        if count != nnz {
            return Err(Error::format(name, 1, format!("header announces {nnz} entries, found {count}")));
        }
        Ok(acc.finish(format!("spill({name})")))
    }

    pub fn load_spill(path: &Path) -> Result<SparseMatrix> {
        let text = crate::corpus::read_utf8(path)?;
        Self::read_spill(&text, &path.display().to_string())
    }
}

/// `M(i, j)` = number of tokens of word `j` whose context fires feature `i`.
pub fn count_matrix(corpus: &Corpus, space: &FeatureSpace) -> Result<SparseMatrix> {
    let shards = par::workers().max(1);
    count_matrix_sharded(corpus, space, shards)
}

/// Counts sentence-aligned shards independently and sums them.
pub fn count_matrix_sharded(corpus: &Corpus, space: &FeatureSpace, shards: usize) -> Result<SparseMatrix> {
    check_space(corpus, space)?;
    let (m, n) = (space.len(), corpus.vocabulary().len());
    let sentences = corpus.sentences();
    let shards = shards.clamp(1, sentences.len().max(1));
    let per = sentences.len().div_ceil(shards);
    let parts = par::map_indexed(shards, |s| {
        let lo = (s * per).min(sentences.len());
        let hi = ((s + 1) * per).min(sentences.len());
        let mut acc = TripletAccumulator::new(m, n);
        if lo < hi {
            for t in sentences[lo].start..sentences[hi - 1].end {
                if let Some(i) = fired_feature(corpus, t, space) {
                    acc.add(i, corpus.token(t).word, 1.0);
                }
            }
        }
        acc
    });
    let mut total = TripletAccumulator::new(m, n);
    for p in parts {
        total.merge(p);
    }
    Ok(total.finish(format!("count({}, {})", space.kind().name(), space.context())))
}

/// Weighted sum `Σ α_τ M_τ` of conformable matrices.
pub fn combine_window(mats: &[SparseMatrix], alphas: &[f64]) -> Result<SparseMatrix> {
    if mats.is_empty() || mats.len() != alphas.len() {
        return Err(Error::Shape(format!(
            "{} matrices with {} weights",
            mats.len(),
            alphas.len()
        )));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
        return Err(Error::InvalidParam(format!("window weight {a} must be positive")));
    }
    let (m, n) = (mats[0].nrows, mats[0].ncols);
    if let Some(bad) = mats.iter().find(|x| (x.nrows, x.ncols) != (m, n)) {
        return Err(Error::Shape(format!(
            "window combination of {m}x{n} and {}x{}",
            bad.nrows, bad.ncols
        )));
    }
    let mut acc = TripletAccumulator::new(m, n);
    for (mat, &a) in mats.iter().zip(alphas) {
        for (i, j, v) in mat.iter() {
            acc.add(i as u32, j as u32, a * v);
        }
    }
    let terms: Vec<String> = mats
        .iter()
        .zip(alphas)
        .map(|(x, a)| format!("{a}*{}", x.provenance))
        .collect();
    Ok(acc.finish(format!("window(n={}, {})", mats.len(), terms.join(" + "))))
}

/// Row-wise stacking of matrices over the same words, blocks in input order.
pub fn combine_union(mats: &[SparseMatrix]) -> Result<SparseMatrix> {
    let first = mats
        .first()
        .ok_or_else(|| Error::Shape("union of no matrices".into()))?;
    let n = first.ncols;
    if let Some(bad) = mats.iter().find(|x| x.ncols != n) {
        return Err(Error::Shape(format!(
            "union of matrices with {n} and {} columns",
            bad.ncols
        )));
    }
    let m: usize = mats.iter().map(|x| x.nrows).sum();
    let mut triplets = Vec::with_capacity(mats.iter().map(|x| x.nnz()).sum());
    for j in 0..n {
        let mut offset = 0u32;
        for x in mats {
            let (rows, vals) = x.col(j);
            triplets.extend(rows.iter().zip(vals).map(|(&i, &v)| (i + offset, j as u32, v)));
            offset += x.nrows as u32;
        }
    }
    let parts: Vec<&str> = mats.iter().map(|x| x.provenance.as_str()).collect();
    Ok(SparseMatrix::from_sorted(
        m,
        n,
        triplets.into_iter(),
        format!("union({})", parts.join("; ")),
    ))
}

/// Feature totals and word totals.
pub fn marginals(mat: &SparseMatrix) -> (Vec<f64>, Vec<f64>) {
    (mat.row_sums.clone(), mat.col_sums.clone())
}
