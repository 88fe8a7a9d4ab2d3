use nalgebra::DMatrix;

/// Thin SVD `A = U diag(s) Vᵀ` with `s` descending.
#[derive(Clone, Debug)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

const MAX_SWEEPS: usize = 100;

/// One-sided (Hestenes) Jacobi SVD. Cost per sweep is `O(p² · max(r, c))`
/// with `p = min(r, c)`, which is what the centred SVD needs for its short,
/// wide projected matrix.
pub fn jacobi_svd(a: &DMatrix<f64>) -> ThinSvd {
    let (r, c) = a.shape();
    if r <= c {
        // Aᵀ J = B = V S, so A = J S Vᵀ
        let (b, j) = orthogonalize_columns(a.transpose());
        let (s, v, order) = normalize(b);
        ThinSvd {
            u: permute_cols(&j, &order),
            s,
            v,
        }
    } else {
        // A J = B = U S, so A = U S Jᵀ
        let (b, j) = orthogonalize_columns(a.clone());
        let (s, u, order) = normalize(b);
        ThinSvd {
            u,
            s,
            v: permute_cols(&j, &order),
        }
    }
}

/// Rotates column pairs of `a` until they are mutually orthogonal; returns
/// the rotated matrix and the accumulated orthogonal transform.
fn orthogonalize_columns(mut a: DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, p) = a.shape();
    let mut j = DMatrix::identity(p, p);
    let tol = f64::EPSILON * (n.max(1) as f64).sqrt();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..p {
            for k in i + 1..p {
                let (alpha, beta, gamma) = {
                    let ci = a.column(i);
                    let ck = a.column(k);
                    (ci.norm_squared(), ck.norm_squared(), ci.dot(&ck))
                };
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                rotate(&mut a, i, k, cs, sn);
                rotate(&mut j, i, k, cs, sn);
            }
        }
        if !rotated {
            break;
        }
    }
    (a, j)
}

fn rotate(m: &mut DMatrix<f64>, i: usize, k: usize, c: f64, s: f64) {
    for row in 0..m.nrows() {
        let (x, y) = (m[(row, i)], m[(row, k)]);
        m[(row, i)] = c * x - s * y;
        m[(row, k)] = s * x + c * y;
    }
}

/// Splits orthogonal columns into norms and unit directions, sorted by
/// descending norm. Zero columns get orthonormal completions.
fn normalize(b: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>, Vec<usize>) {
    let p = b.ncols();
    let norms: Vec<f64> = (0..p).map(|i| b.column(i).norm()).collect();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]).then(x.cmp(&y)));
    let mut dirs = DMatrix::zeros(b.nrows(), p);
    let mut missing = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        if norms[src] > 0.0 {
            dirs.column_mut(dst).copy_from(&(b.column(src) / norms[src]));
        } else {
            missing.push(dst);
        }
    }
    complete_basis(&mut dirs, &missing);
    let s = order.iter().map(|&i| norms[i]).collect();
    (s, dirs, order)
}

/// Fills the listed columns with unit vectors orthogonal to every other
/// column.
fn complete_basis(dirs: &mut DMatrix<f64>, missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let n = dirs.nrows();
    let mut candidate = 0;
    for &col in missing {
        while candidate < n {
            let mut x = nalgebra::DVector::zeros(n);
            x[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for k in 0..dirs.ncols() {
                    if k != col {
                        let d = dirs.column(k).dot(&x);
                        x -= dirs.column(k) * d;
                    }
                }
            }
            let norm = x.norm();
            if norm > 0.5 {
                dirs.column_mut(col).copy_from(&(x / norm));
                break;
            }
        }
    }
}

fn permute_cols(m: &DMatrix<f64>, order: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), order.len(), |i, j| m[(i, order[j])])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::qr::orthonormality_error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn check(a: &DMatrix<f64>) {
        let svd = jacobi_svd(a);
        let p = a.nrows().min(a.ncols());
        assert_eq!(svd.s.len(), p);
        let recon = &svd.u * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(svd.s.clone())) * svd.v.transpose();
        assert!((recon - a).norm() <= 1e-12 * a.norm().max(1.0));
        assert!(orthonormality_error(&svd.u) < 1e-12);
        assert!(orthonormality_error(&svd.v) < 1e-12);
        assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
        // independent route: nalgebra's bidiagonal SVD
        let mut reference: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
        reference.sort_by(|x, y| y.total_cmp(x));
        for (x, y) in svd.s.iter().zip(&reference) {
            assert!((x - y).abs() <= 1e-12 * reference[0].max(1.0));
        }
    }

    #[test]
    fn wide_and_tall() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (r, c) in [(3, 9), (9, 3), (5, 5), (1, 4), (4, 1)] {
            let a = DMatrix::from_fn(r, c, |_, _| rng.random_range(-2.0..2.0));
            check(&a);
        }
    }

    #[test]
    fn rank_deficient_gets_complete_factors() {
        let a = DMatrix::from_row_slice(3, 4, &[1.0, 2.0, 3.0, 4.0, 2.0, 4.0, 6.0, 8.0, 0.0, 0.0, 0.0, 0.0]);
        check(&a);
        let z = DMatrix::<f64>::zeros(2, 5);
        let svd = jacobi_svd(&z);
        assert_eq!(svd.s, vec![0.0, 0.0]);
        assert!(orthonormality_error(&svd.v) < 1e-15);
    }

    #[test]
    fn diagonal_input() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]);
        let svd = jacobi_svd(&a);
        assert_eq!(svd.s, vec![3.0, 1.0]);
    }
}
