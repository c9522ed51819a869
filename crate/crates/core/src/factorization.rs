//! Nuclear-norm regularised low-rank factorisation of a data segment.
//!
//! Solves
//!
//! ```text
//! min_{Z ∈ R^{p×d}, S ∈ R^{d×k}}  ‖X − Z S‖_F² + λ ‖Z S‖_*
//! ```
//!
//! by block coordinate descent on the variational bound
//! `λ‖ZS‖_* ≤ (λ/2)(‖Z‖_F² + ‖S‖_F²)`. Each block update is a ridge regression
//! with a closed form. After every sweep the pair is rebalanced through a small
//! SVD so that the bound is tight, which makes the true objective itself
//! non-increasing from sweep to sweep.

use nalgebra::{DMatrix, DMatrixView, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::series::TimeSeriesMatrix;

/// Stopping rule and initialisation seed for [`factorize`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Relative objective decrease below which the solver stops.
    pub rel_tol: f64,
    /// Seed for the standard-normal draw of the initial `S`.
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            rel_tol: 1e-6,
            seed: 0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol.is_finite()) {
            return Err(Error::invalid(format!(
                "rel_tol must be positive and finite, got {}",
                self.rel_tol
            )));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// Factors and diagnostics returned by [`factorize`].
#[derive(Debug, Clone)]
pub struct FactorizationResult {
    /// `p × d` factor. Columns are orthogonal (balanced factorisation) but not unit norm.
    pub z: DMatrix<f64>,
    /// `d × k` factor.
    pub s: DMatrix<f64>,
    /// `‖X − Z S‖_F²`
    pub fit_loss: f64,
    /// `‖Z S‖_*`
    pub nuclear_norm: f64,
    pub lambda: f64,
    /// `fit_loss + lambda * nuclear_norm`
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each sweep.
    pub objective_trace: Vec<f64>,
}

impl FactorizationResult {
    pub fn segment_loss(&self) -> SegmentLoss {
        SegmentLoss::new(self.fit_loss, self.nuclear_norm, self.lambda)
    }

    /// Orthonormal basis of the column space of `Z`.
    pub fn basis(&self) -> DMatrix<f64> {
        orthonormalize(&self.z)
    }
}

/// Loss terms of one segment's factorisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentLoss {
    pub fit: f64,
    pub nuclear: f64,
    pub regularized_total: f64,
}

impl SegmentLoss {
    pub fn new(fit: f64, nuclear: f64, lambda: f64) -> Self {
        Self {
            fit,
            nuclear,
            regularized_total: fit + lambda * nuclear,
        }
    }
}

/// Factorise a whole series. See [`factorize_view`].
pub fn factorize(
    x: &TimeSeriesMatrix,
    d: usize,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<FactorizationResult> {
    factorize_view(x.view(), d, lambda, opts)
}

/// Factorise a `p × k` segment with a rank-`d` regularised model.
pub fn factorize_view(
    x: DMatrixView<'_, f64>,
    d: usize,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<FactorizationResult> {
    let (p, k) = x.shape();
    if d == 0 || d > p.min(k) {
        return Err(Error::dimension(format!(
            "rank {d} is not in 1..=min(p, k) for a {p}x{k} segment"
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!(
            "lambda must be finite and non-negative, got {lambda}"
        )));
    }
    opts.validate()?;

    let ridge = lambda / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut s = DMatrix::from_fn(d, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut z = DMatrix::zeros(p, d);
    let mut residual = DMatrix::zeros(p, k);

    let mut trace = Vec::new();
    let mut converged = false;
    let mut prev = f64::INFINITY;

    for _ in 0..opts.max_iters {
        z = z_step(&x, &s, ridge);
        s = s_step(&x, &z, ridge);
        let (zb, sb, sv) = balance(&z, &s);
        z = zb;
        s = sb;

        residual.copy_from(&x);
        residual.gemm(-1.0, &z, &s, 1.0);
        let fit = residual.norm_squared();
        let objective = fit + lambda * sv.sum();
        if !objective.is_finite() {
            return Err(Error::Numerical(format!(
                "objective became non-finite after {} sweeps",
                trace.len() + 1
            )));
        }
        trace.push(objective);

        if objective == 0.0 || (prev.is_finite() && prev - objective <= opts.rel_tol * prev) {
            converged = true;
            break;
        }
        prev = objective;
    }

    let fit_loss = {
        residual.copy_from(&x);
        residual.gemm(-1.0, &z, &s, 1.0);
        residual.norm_squared()
    };
    let nuclear_norm = nuclear_norm_product(&z, &s)?;
    Ok(FactorizationResult {
        iterations: trace.len(),
        objective: fit_loss + lambda * nuclear_norm,
        z,
        s,
        fit_loss,
        nuclear_norm,
        lambda,
        converged,
        objective_trace: trace,
    })
}

/// Wrapper around [`factorize_view`] returning only the loss terms.
pub fn segment_loss(
    x: DMatrixView<'_, f64>,
    d: usize,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<SegmentLoss> {
    factorize_view(x, d, lambda, opts).map(|r| r.segment_loss())
}

/// Sum of singular values of `Z S`.
///
/// When `d < min(p, k)` the product is never formed: `Z = QR` and the singular
/// values of the `d × k` matrix `R S` are used instead.
pub fn nuclear_norm_product(z: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<f64> {
    if z.ncols() != s.nrows() {
        return Err(Error::dimension(format!(
            "inner dimensions differ: Z is {}x{}, S is {}x{}",
            z.nrows(),
            z.ncols(),
            s.nrows(),
            s.ncols()
        )));
    }
    let (p, d, k) = (z.nrows(), z.ncols(), s.ncols());
    if p == 0 || d == 0 || k == 0 {
        return Ok(0.0);
    }
    let small = if d < p.min(k) {
        let r = z.clone().qr().unpack_r();
        r * s
    } else {
        z * s
    };
    Ok(linalg::singular_values(&small).sum())
}

/// Orthonormal columns spanning `Z` (Householder Q of the thin QR).
pub fn orthonormalize(z: &DMatrix<f64>) -> DMatrix<f64> {
    z.clone().qr().q()
}

/// `Z ← X Sᵀ (S Sᵀ + r I)⁻¹`
fn z_step(x: &DMatrixView<'_, f64>, s: &DMatrix<f64>, ridge: f64) -> DMatrix<f64> {
    let st = s.transpose();
    let gram = s * &st;
    let rhs = (x * st).transpose();
    solve_gram(gram, ridge, rhs).transpose()
}

/// `S ← (Zᵀ Z + r I)⁻¹ Zᵀ X`
fn s_step(x: &DMatrixView<'_, f64>, z: &DMatrix<f64>, ridge: f64) -> DMatrix<f64> {
    let gram = z.tr_mul(z);
    let rhs = z.tr_mul(x);
    solve_gram(gram, ridge, rhs)
}

/// Solve `(G + r I) Y = B` for a symmetric positive semi-definite `G`.
///
/// With `r > 0` the system is positive definite and Cholesky is used. With
/// `r = 0` the minimum-norm least-squares solution is taken through the
/// eigendecomposition so that a rank-deficient block never aborts the solve.
fn solve_gram(mut gram: DMatrix<f64>, ridge: f64, rhs: DMatrix<f64>) -> DMatrix<f64> {
    if ridge > 0.0 {
        for i in 0..gram.nrows() {
            gram[(i, i)] += ridge;
        }
        if let Some(chol) = gram.clone().cholesky() {
            return chol.solve(&rhs);
        }
    }
    pinv_solve(gram, rhs)
}

fn pinv_solve(gram: DMatrix<f64>, rhs: DMatrix<f64>) -> DMatrix<f64> {
    let n = gram.nrows();
    let eig = SymmetricEigen::new(gram);
    let max_eig = eig.eigenvalues.iter().fold(0.0_f64, |m, &v| m.max(v));
    let cutoff = max_eig * (n as f64) * 1e-12;
    let inv = DVector::from_iterator(
        n,
        eig.eigenvalues
            .iter()
            .map(|&v| if v > cutoff && v > 0.0 { 1.0 / v } else { 0.0 }),
    );
    let vt_b = eig.eigenvectors.tr_mul(&rhs);
    let scaled = DMatrix::from_fn(n, rhs.ncols(), |i, j| vt_b[(i, j)] * inv[i]);
    eig.eigenvectors * scaled
}

/// Rebalance `(Z, S)` so that `‖Z‖_F² = ‖S‖_F² = ‖ZS‖_*` without changing `ZS`.
/// Returns the new pair and the singular values of the product.
fn balance(z: &DMatrix<f64>, s: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let (qz, rz) = z.clone().qr().unpack();
    let (qs, rs) = s.transpose().qr().unpack();
    let core = rz * rs.transpose();
    let svd = linalg::svd(&core);
    let (u, vt) = (svd.u, svd.v_t);
    let root = svd.singular_values.map(f64::sqrt);

    let mut zn = qz * u;
    for (j, mut col) in zn.column_iter_mut().enumerate() {
        col *= root[j];
    }
    let mut sn = vt * qs.transpose();
    for (i, mut row) in sn.row_iter_mut().enumerate() {
        row *= root[i];
    }
    (zn, sn, svd.singular_values)
}
