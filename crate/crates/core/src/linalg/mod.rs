//! Rank-k SVD of an implicitly mean-centred matrix `X − E·1ᵀ`.
//!
//! The centred matrix is never formed: products go through
//! [`CenteredOperator`], the random sketch of `X` is corrected by a QR
//! rank-one update, and the projection onto the sketch basis subtracts `QᵀE`
//! column by column.

mod qr;
mod svd;

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use qr::{orthonormality_error, qr_rank_one_update, thin_qr};
pub use svd::{jacobi_svd, ThinSvd};

use crate::coocmat::SparseMatrix;
use crate::{Error, Result};

/// A matrix that only needs to be applied, never inspected entry-wise.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `A · w`
    fn mul(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>>;
    /// `Aᵀ · u`
    fn tr_mul(&self, u: &DMatrix<f64>) -> Result<DMatrix<f64>>;
}

impl LinearOperator for SparseMatrix {
    fn nrows(&self) -> usize {
        SparseMatrix::nrows(self)
    }

    fn ncols(&self) -> usize {
        SparseMatrix::ncols(self)
    }

    fn mul(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.mul_dense(w)
    }

    fn tr_mul(&self, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.tr_mul_dense(u)
    }
}

impl LinearOperator for DMatrix<f64> {
    fn nrows(&self) -> usize {
        self.nrows()
    }

    fn ncols(&self) -> usize {
        self.ncols()
    }

    fn mul(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if w.nrows() != self.ncols() {
            return Err(Error::Shape(format!(
                "{}x{} times {}x{}",
                self.nrows(),
                self.ncols(),
                w.nrows(),
                w.ncols()
            )));
        }
        Ok(self * w)
    }

    fn tr_mul(&self, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if u.nrows() != self.nrows() {
            return Err(Error::Shape(format!(
                "({}x{})ᵀ times {}x{}",
                self.nrows(),
                self.ncols(),
                u.nrows(),
                u.ncols()
            )));
        }
        Ok(self.tr_mul(u))
    }
}

/// `X − E·1ᵀ` as an operator.
pub struct CenteredOperator<'a, A: LinearOperator + ?Sized> {
    x: &'a A,
    e: DVector<f64>,
}

impl<'a, A: LinearOperator + ?Sized> CenteredOperator<'a, A> {
    pub fn new(x: &'a A, e: &[f64]) -> Result<Self> {
        if e.len() != x.nrows() {
            return Err(Error::Shape(format!(
                "centring vector of length {} for {} rows",
                e.len(),
                x.nrows()
            )));
        }
        Ok(CenteredOperator {
            x,
            e: DVector::from_column_slice(e),
        })
    }

    pub fn centre(&self) -> &DVector<f64> {
        &self.e
    }

    /// `XW − E(1ᵀW)`
    pub fn apply(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = self.x.mul(w)?;
        for (c, mut col) in out.column_iter_mut().enumerate() {
            let s = w.column(c).sum();
            col.axpy(-s, &self.e, 1.0);
        }
        Ok(out)
    }

    /// `XᵀU − 1(EᵀU)`
    pub fn apply_t(&self, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = self.x.tr_mul(u)?;
        for (c, mut col) in out.column_iter_mut().enumerate() {
            let s = self.e.dot(&u.column(c));
            col.add_scalar_mut(-s);
        }
        Ok(out)
    }
}

/// How power iterations treat the centring.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PowerMode {
    /// Iterate on the centred operator after correcting the initial sketch.
    Centred,
    /// Iterate on raw `X` and correct only the final factorization. Matches
    /// `Centred` at `q = 0`.
    Raw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SketchParams {
    /// Target rank.
    pub k: usize,
    /// Sketch width, at least `k` and at most `min(m, n)`.
    pub width: usize,
    pub power_iters: usize,
    pub seed: u64,
    pub mode: PowerMode,
}

impl SketchParams {
    /// `width = k + 10`, two power iterations.
    pub fn new(k: usize) -> Self {
        SketchParams {
            k,
            width: k + 10,
            power_iters: 2,
            seed: 0,
            mode: PowerMode::Centred,
        }
    }

    pub fn validate(&self, m: usize, n: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParam("target rank must be at least 1".into()));
        }
        if self.k > self.width {
            return Err(Error::InvalidParam(format!(
                "target rank {} exceeds sketch width {}",
                self.k, self.width
            )));
        }
        if self.width > m.min(n) {
            return Err(Error::InvalidParam(format!(
                "sketch width {} exceeds min(m, n) = {}",
                self.width,
                m.min(n)
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SvdFactors {
    /// `m × k`, orthonormal columns.
    pub u: DMatrix<f64>,
    /// Descending, non-negative.
    pub s: Vec<f64>,
    /// `n × k`, orthonormal columns.
    pub v: DMatrix<f64>,
}

impl SvdFactors {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&DVector::from_column_slice(&self.s)) * self.v.transpose()
    }
}

/// Standard Gaussian `rows × cols` matrix, filled column by column from
/// `seed`.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect();
    DMatrix::from_vec(rows, cols, data)
}

/// Orthonormal `m × width` basis whose span approximates the range of
/// `X − E·1ᵀ`.
pub fn centered_range_finder<A: LinearOperator + ?Sized>(
    x: &A,
    e: &[f64],
    params: &SketchParams,
) -> Result<DMatrix<f64>> {
    let (m, n) = (x.nrows(), x.ncols());
    if params.width > m.min(n) {
        return Err(Error::InvalidParam(format!(
            "sketch width {} exceeds min(m, n) = {}",
            params.width,
            m.min(n)
        )));
    }
    let op = CenteredOperator::new(x, e)?;
    let omega = gaussian_matrix(n, params.width, params.seed);
    // (X − E1ᵀ)Ω = XΩ + (−E)(Ωᵀ1)ᵀ
    let v = DVector::from_iterator(params.width, omega.column_iter().map(|c| c.sum()));
    let neg_e = -op.centre();

    let (q0, r0) = thin_qr(&x.mul(&omega)?);
    match params.mode {
        PowerMode::Centred => {
            let (mut q, _) = qr_rank_one_update(&q0, &r0, &neg_e, &v)?;
            for _ in 0..params.power_iters {
                let y = op.apply(&op.apply_t(&q)?)?;
                q = thin_qr(&y).0;
            }
            Ok(q)
        }
        PowerMode::Raw => {
            let (mut q, mut r) = (q0, r0);
            for _ in 0..params.power_iters {
                let y = x.mul(&x.tr_mul(&q)?)?;
                (q, r) = thin_qr(&y);
            }
            Ok(qr_rank_one_update(&q, &r, &neg_e, &v)?.0)
        }
    }
}

/// Rank-`k` SVD of `X − E·1ᵀ`.
///
/// Each left singular vector is signed so that its largest-magnitude entry
/// is positive.
pub fn centered_svd<A: LinearOperator + ?Sized>(x: &A, e: &[f64], params: &SketchParams) -> Result<SvdFactors> {
    params.validate(x.nrows(), x.ncols())?;
    let q = centered_range_finder(x, e, params)?;
    let qe = q.tr_mul(&DVector::from_column_slice(e));
    let mut y = x.tr_mul(&q)?.transpose();
    for mut col in y.column_iter_mut() {
        col -= &qe;
    }
    let small = jacobi_svd(&y);
    let k = params.k;
    let mut u = (&q * &small.u).columns(0, k).into_owned();
    let mut v = small.v.columns(0, k).into_owned();
    let s = small.s[..k].to_vec();
    canonicalize_signs(&mut u, &mut v);
    Ok(SvdFactors { u, s, v })
}

/// Flips column pairs so the largest-magnitude entry of each `u` column is
/// positive (first one wins on ties).
pub fn canonicalize_signs(u: &mut DMatrix<f64>, v: &mut DMatrix<f64>) {
    for j in 0..u.ncols() {
        let col = u.column(j);
        let mut best = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if !col.is_empty() && col[best] < 0.0 {
            u.column_mut(j).neg_mut();
            v.column_mut(j).neg_mut();
        }
    }
}

/// Dense spill: `rows cols` header, then one line of values per row.
pub fn write_dense<W: Write>(mut w: W, m: &DMatrix<f64>) -> std::io::Result<()> {
    writeln!(w, "{} {}", m.nrows(), m.ncols())?;
    let mut line = String::new();
    for i in 0..m.nrows() {
        line.clear();
        for j in 0..m.ncols() {
            if j > 0 {
                line.push(' ');
            }
            let _ = write!(line, "{:?}", m[(i, j)]);
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    Ok(())
}

pub fn read_dense(text: &str, name: &str) -> Result<DMatrix<f64>> {
    let mut tokens = text.split_ascii_whitespace();
    let mut dim = || -> Result<usize> {
        tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::format(name, 1, "header must be `rows cols`"))
    };
    let (r, c) = (dim()?, dim()?);
    let values: Vec<f64> = tokens
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::format(name, 0, "non-numeric value"))?;
    if values.len() != r * c {
        return Err(Error::format(name, 0, format!("expected {} values, found {}", r * c, values.len())));
    }
    Ok(DMatrix::from_row_slice(r, c, &values))
}
