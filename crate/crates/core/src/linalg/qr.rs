use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Thin QR of an `m × p` matrix with `m ≥ p`: `Q` is `m × p` with orthonormal
/// columns (even when `a` is rank deficient), `R` is `p × p` upper triangular.
pub fn thin_qr(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    assert!(a.nrows() >= a.ncols(), "thin QR needs at least as many rows as columns");
    let qr = a.clone().qr();
    (qr.q(), qr.r())
}

/// Largest absolute entry of `QᵀQ − I`.
pub fn orthonormality_error(q: &DMatrix<f64>) -> f64 {
    let g = q.transpose() * q;
    let mut worst: f64 = 0.0;
    for j in 0..g.ncols() {
        for i in 0..g.nrows() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    if b == 0.0 {
        return (1.0, 0.0, a);
    }
    let r = a.hypot(b);
    (a / r, b / r, r)
}

/// Applies the rotation `[c s; -s c]` to rows `i` and `k`.
fn rotate_rows(m: &mut DMatrix<f64>, i: usize, k: usize, c: f64, s: f64) {
    for col in 0..m.ncols() {
        let (x, y) = (m[(i, col)], m[(k, col)]);
        m[(i, col)] = c * x + s * y;
        m[(k, col)] = -s * x + c * y;
    }
}

/// Applies the transpose of the same rotation to columns `i` and `k`, so that
/// `Q R` is unchanged when rows of `R` are rotated with [`rotate_rows`].
fn rotate_cols(m: &mut DMatrix<f64>, i: usize, k: usize, c: f64, s: f64) {
    for row in 0..m.nrows() {
        let (x, y) = (m[(row, i)], m[(row, k)]);
        m[(row, i)] = c * x + s * y;
        m[(row, k)] = -s * x + c * y;
    }
}

/// Given a thin factorization `Q R = A` (`Q` is `m × K` orthonormal, `R` is
/// `K × K` upper triangular), returns `Q' R' = A + u vᵀ` with the same shapes.
///
/// `u` is split into its projection onto `span(Q)` and a residual direction
/// that is appended as an extra column. Plane rotations then fold the update
/// vector into the first row, the rank-one term is added there, and a second
/// sweep of rotations restores the triangle; the appended row ends up zero
/// and is dropped.
pub fn qr_rank_one_update(
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    u: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (m, k) = q.shape();
    if r.shape() != (k, k) || u.len() != m || v.len() != k || k > m {
        return Err(Error::Shape(format!(
            "QR update with Q {m}x{k}, R {}x{}, u {}, v {}",
            r.nrows(),
            r.ncols(),
            u.len(),
            v.len()
        )));
    }
    let dev = orthonormality_error(q);
    if dev > 1e-8 {
        return Err(Error::NotOrthonormal(dev));
    }

    // w = Qᵀu, residual orthogonalized against Q (repeated until clean)
    let mut w = q.tr_mul(u);
    let mut res = u - q * &w;
    for _ in 0..2 {
        let c = q.tr_mul(&res);
        res -= q * &c;
        w += c;
    }
    let rho = res.norm();
    let extend = k < m && rho > 1e-14 * u.norm();
    let p = if extend { k + 1 } else { k };

    let mut qb = DMatrix::zeros(m, p);
    qb.columns_mut(0, k).copy_from(q);
    let mut rb = DMatrix::zeros(p, k);
    rb.rows_mut(0, k).copy_from(r);
    let mut z = DVector::zeros(p);
    z.rows_mut(0, k).copy_from(&w);
    if extend {
        qb.column_mut(k).copy_from(&(res / rho));
        z[k] = rho;
    }

    // fold z into ±‖z‖ e₁; R becomes upper Hessenberg
    for i in (1..p).rev() {
        let (c, s, rr) = givens(z[i - 1], z[i]);
        z[i - 1] = rr;
        z[i] = 0.0;
        rotate_rows(&mut rb, i - 1, i, c, s);
        rotate_cols(&mut qb, i - 1, i, c, s);
    }
    for j in 0..k {
        rb[(0, j)] += z[0] * v[j];
    }
    // clear the subdiagonal
    for i in 0..(p - 1).min(k) {
        let (c, s, _) = givens(rb[(i, i)], rb[(i + 1, i)]);
        rotate_rows(&mut rb, i, i + 1, c, s);
        rb[(i + 1, i)] = 0.0;
        rotate_cols(&mut qb, i, i + 1, c, s);
    }

    let q_new = qb.columns(0, k).into_owned();
    let r_new = rb.rows(0, k).into_owned();
    Ok((q_new, r_new))
}
