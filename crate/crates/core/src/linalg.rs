//! Checked singular value decomposition.
//!
//! nalgebra's bidiagonal QR iteration occasionally returns inaccurate singular
//! values for nearly diagonal inputs with tiny off-diagonal entries. Every
//! decomposition is verified against the input and recomputed with one-sided
//! Jacobi rotations when the reconstruction is off.

use nalgebra::{DMatrix, DVector};

const RECONSTRUCTION_TOL: f64 = 1e-11;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Thin SVD `a = u · diag(σ) · v_t` with `σ` sorted in descending order.
pub(crate) struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

impl Svd {
    fn reconstruction_error(&self, a: &DMatrix<f64>) -> f64 {
        let mut us = self.u.clone();
        for (j, mut col) in us.column_iter_mut().enumerate() {
            col *= self.singular_values[j];
        }
        (us * &self.v_t - a).abs().max()
    }
}

pub(crate) fn svd(a: &DMatrix<f64>) -> Svd {
    let scale = a.abs().max();
    if scale == 0.0 || a.is_empty() {
        return jacobi_svd(a);
    }
    let fast = a.clone().svd(true, true);
    if let (Some(u), Some(v_t)) = (fast.u, fast.v_t) {
        let out = Svd {
            u,
            singular_values: fast.singular_values,
            v_t,
        };
        if out.reconstruction_error(a) <= RECONSTRUCTION_TOL * scale {
            return out;
        }
        log::debug!(
            "inaccurate SVD of a {}x{} block, using Jacobi",
            a.nrows(),
            a.ncols()
        );
    }
    jacobi_svd(a)
}

pub(crate) fn singular_values(a: &DMatrix<f64>) -> DVector<f64> {
    svd(a).singular_values
}

/// One-sided Jacobi SVD.
pub(crate) fn jacobi_svd(a: &DMatrix<f64>) -> Svd {
    if a.nrows() < a.ncols() {
        let t = jacobi_svd(&a.transpose());
        return Svd {
            u: t.v_t.transpose(),
            singular_values: t.singular_values,
            v_t: t.u.transpose(),
        };
    }
    let n = a.ncols();
    let mut w = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let alpha = w.column(i).norm_squared();
                let beta = w.column(j).norm_squared();
                let gamma = w.column(i).dot(&w.column(j));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut w, i, j, c, s);
                rotate_columns(&mut v, i, j, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = w.column_iter().map(|c| c.norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let mut u = DMatrix::zeros(a.nrows(), n);
    let mut v_sorted = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        if norms[src] > 0.0 {
            u.set_column(dst, &(w.column(src) / norms[src]));
        }
        v_sorted.set_column(dst, &v.column(src));
    }
    Svd {
        u,
        singular_values: DVector::from_iterator(n, order.iter().map(|&k| norms[k])),
        v_t: v_sorted.transpose(),
    }
}

fn rotate_columns(m: &mut DMatrix<f64>, i: usize, j: usize, c: f64, s: f64) {
    for r in 0..m.nrows() {
        let (x, y) = (m[(r, i)], m[(r, j)]);
        m[(r, i)] = c * x - s * y;
        m[(r, j)] = s * x + c * y;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn near_diagonal() -> DMatrix<f64> {
        DMatrix::from_vec(
            3,
            3,
            vec![
                2.296139793140159,
                -7.703719777548943e-33,
                3.4608980287638526e-17,
                2.311115933264683e-33,
                1.45469902710842,
                5.1913470431457785e-18,
                2.765827604966007e-17,
                -1.3829138024830035e-17,
                0.06212743701960728,
            ],
        )
    }

    #[test]
    fn near_diagonal_block_is_decomposed_accurately() {
        let a = near_diagonal();
        let out = svd(&a);
        assert!(out.reconstruction_error(&a) < 1e-14);
        let expected = [2.296139793140159, 1.45469902710842, 0.06212743701960728];
        for (s, e) in out.singular_values.iter().zip(expected) {
            assert!((s - e).abs() < 1e-14, "{s} vs {e}");
        }
    }

    #[test]
    fn jacobi_matches_known_values() {
        let a = DMatrix::from_row_slice(2, 3, &[3.0, 0.0, 0.0, 0.0, 0.0, 4.0]);
        let out = jacobi_svd(&a);
        assert_eq!(out.singular_values.as_slice(), &[4.0, 3.0]);
        assert!(out.reconstruction_error(&a) < 1e-15);

        let b = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let out = jacobi_svd(&b);
        assert!((out.singular_values[0] - 70f64.sqrt()).abs() < 1e-13);
        assert!(out.singular_values[1].abs() < 1e-13);
        assert!(out.reconstruction_error(&b) < 1e-13);
        let vvt = &out.v_t * out.v_t.transpose();
        assert!((vvt - DMatrix::identity(2, 2)).abs().max() < 1e-14);
    }
}
