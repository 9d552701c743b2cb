//! Dense complex linear algebra used throughout the simulator.
//!
//! Everything is built on `nalgebra` dynamic matrices. The solver equilibrates
//! its input (symmetric Jacobi scaling) before factoring, because the fused
//! observation space mixes rows whose powers differ by many orders of magnitude.

use nalgebra::{Cholesky, Complex, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::SimError;

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Condition-number estimate above which the solver regularizes.
pub const CONDITION_LIMIT: f64 = 1e12;
/// Relative diagonal loading applied when the condition limit is exceeded.
pub const REGULARIZATION: f64 = 1e-9;

pub fn c(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

/// `(A + A^H) / 2`.
pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()).scale(0.5)
}

/// Largest entrywise modulus of `A - A^H`.
pub fn hermitian_defect(a: &CMat) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn outer(x: &CVec) -> CMat {
    x * x.adjoint()
}

pub fn trace_re(a: &CMat) -> f64 {
    a.diagonal().iter().map(|z| z.re).sum()
}

pub fn frobenius(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn relative_frobenius(a: &CMat, reference: &CMat) -> f64 {
    let denom = frobenius(reference);
    let diff = frobenius(&(a - reference));
    if denom == 0.0 {
        diff
    } else {
        diff / denom
    }
}

pub fn identity(dim: usize) -> CMat {
    CMat::identity(dim, dim)
}

/// Eigenvalues of a Hermitian matrix (ascending).
pub fn hermitian_eigenvalues(a: &CMat) -> Vec<f64> {
    let eig = SymmetricEigen::new(hermitian_part(a));
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(|x, y| x.total_cmp(y));
    values
}

/// Nearest (Frobenius) positive semidefinite matrix: clip negative eigenvalues.
///
/// An input that is already PSD is returned as its Hermitian part, untouched by
/// the eigendecomposition.
pub fn psd_project(a: &CMat) -> CMat {
    let sym = hermitian_part(a);
    if sym.nrows() == 0 {
        return sym;
    }
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.iter().all(|&v| v >= 0.0) {
        return sym;
    }
    let clipped = eig.eigenvalues.map(|v| C64::from(v.max(0.0)));
    let u = &eig.eigenvectors;
    let scaled = u * CMat::from_diagonal(&clipped);
    hermitian_part(&(scaled * u.adjoint()))
}

/// PSD repair in the coordinates where `scale_ref` has unit diagonal.
///
/// The congruence `D A D` preserves inertia, so the result is PSD; with a
/// uniformly scaled reference this is exactly [`psd_project`].
pub fn psd_project_scaled(a: &CMat, scale_ref: &CMat) -> CMat {
    let d = jacobi_scaling(scale_ref);
    let scaled = scale_both(a, &d);
    let projected = psd_project(&scaled);
    let inv: Vec<f64> = d.iter().map(|&s| if s > 0.0 { 1.0 / s } else { 0.0 }).collect();
    hermitian_part(&scale_both(&projected, &inv))
}

/// Projects `a` onto `{X : 0 <= X <= upper}` in the Loewner order.
///
/// Works in the coordinates that whiten `upper` and clips the eigenvalues of
/// the whitened `a` to `[0, 1]`. Directions where `upper` is numerically zero
/// are dropped.
pub fn clip_between(a: &CMat, upper: &CMat) -> CMat {
    let dim = a.nrows();
    if dim == 0 {
        return a.clone();
    }
    let eig = SymmetricEigen::new(hermitian_part(upper));
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    if top <= 0.0 {
        return CMat::zeros(dim, dim);
    }
    // Columns of `u` scaled by sqrt(lambda): upper = s s^H.
    let roots: Vec<f64> = eig.eigenvalues.iter().map(|&v| if v > 1e-14 * top { v.sqrt() } else { 0.0 }).collect();
    let s = CMat::from_fn(dim, dim, |i, j| eig.eigenvectors[(i, j)] * roots[j]);
    let w = CMat::from_fn(dim, dim, |i, j| {
        if roots[i] > 0.0 {
            eig.eigenvectors[(j, i)].conj() / roots[i]
        } else {
            C64::new(0.0, 0.0)
        }
    });
    let whitened = SymmetricEigen::new(hermitian_part(&(&w * a * w.adjoint())));
    let clipped = whitened.eigenvalues.map(|v| C64::from(v.clamp(0.0, 1.0)));
    let v = &whitened.eigenvectors;
    let inner = v * CMat::from_diagonal(&clipped) * v.adjoint();
    hermitian_part(&(&s * inner * s.adjoint()))
}

/// A factor `F` with `F F^H = A` for a Hermitian PSD `A`.
///
/// Uses the eigendecomposition so rank-deficient inputs are accepted. Returns an
/// error if an eigenvalue falls below `-tol * tr(A) / dim`.
pub fn psd_factor(a: &CMat, tol: f64) -> Result<CMat, SimError> {
    let dim = a.nrows();
    if dim == 0 {
        return Ok(a.clone());
    }
    let eig = SymmetricEigen::new(hermitian_part(a));
    let floor = -tol * trace_re(a).abs().max(f64::MIN_POSITIVE) / dim as f64;
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < floor {
        return Err(SimError::NotPsd { min_eigenvalue: min });
    }
    let roots = eig.eigenvalues.map(|v| C64::from(v.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * CMat::from_diagonal(&roots))
}

fn jacobi_scaling(a: &CMat) -> Vec<f64> {
    a.diagonal()
        .iter()
        .map(|z| if z.re > 0.0 { 1.0 / z.re.sqrt() } else { 1.0 })
        .collect()
}

fn scale_both(a: &CMat, d: &[f64]) -> CMat {
    CMat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * (d[i] * d[j]))
}

/// Cholesky-based solver for Hermitian positive definite systems.
///
/// The matrix is first scaled to unit diagonal. If the factorization fails or
/// the condition estimate exceeds [`CONDITION_LIMIT`], the scaled matrix is
/// loaded with `REGULARIZATION * tr / dim` on its diagonal and refactored.
#[derive(Debug, Clone)]
pub struct HermitianSolver {
    scaling: Vec<f64>,
    chol: Cholesky<C64, Dyn>,
    regularized: bool,
}

impl HermitianSolver {
    pub fn new(a: &CMat) -> Result<Self, SimError> {
        let dim = a.nrows();
        if dim != a.ncols() {
            return Err(SimError::Dimension(format!(
                "solver expects a square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let scaling = jacobi_scaling(a);
        let scaled = hermitian_part(&scale_both(a, &scaling));
        if let Some(chol) = Cholesky::new(scaled.clone()) {
            if condition_estimate(&chol) <= CONDITION_LIMIT {
                return Ok(Self { scaling, chol, regularized: false });
            }
        }
        let load = REGULARIZATION * trace_re(&scaled).max(0.0) / dim.max(1) as f64;
        let loaded = &scaled + identity(dim).scale(load);
        match Cholesky::new(loaded) {
            Some(chol) if load > 0.0 => Ok(Self { scaling, chol, regularized: true }),
            _ => Err(SimError::Singular { scope: String::new(), block: None }),
        }
    }

    pub fn regularized(&self) -> bool {
        self.regularized
    }

    pub fn dim(&self) -> usize {
        self.scaling.len()
    }

    /// Solves `A X = B`.
    pub fn solve(&self, b: &CMat) -> CMat {
        let mut rhs = b.clone();
        for (i, mut row) in rhs.row_iter_mut().enumerate() {
            row *= C64::from(self.scaling[i]);
        }
        self.chol.solve_mut(&mut rhs);
        for (i, mut row) in rhs.row_iter_mut().enumerate() {
            row *= C64::from(self.scaling[i]);
        }
        rhs
    }

    pub fn solve_vec(&self, b: &CVec) -> CVec {
        let mut rhs = b.clone();
        for (i, z) in rhs.iter_mut().enumerate() {
            *z *= self.scaling[i];
        }
        self.chol.solve_mut(&mut rhs);
        for (i, z) in rhs.iter_mut().enumerate() {
            *z *= self.scaling[i];
        }
        rhs
    }
}

fn condition_estimate(chol: &Cholesky<C64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for i in 0..l.nrows() {
        let d = l[(i, i)].re;
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if lo <= 0.0 || !lo.is_finite() {
        return f64::INFINITY;
    }
    (hi / lo).powi(2)
}

/// Block-diagonal assembly of square or rectangular blocks.
pub fn block_diag(blocks: &[CMat]) -> CMat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMat::zeros(rows, cols);
    let (mut r, mut c0) = (0, 0);
    for b in blocks {
        out.view_mut((r, c0), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c0 += b.ncols();
    }
    out
}

/// Symmetric diagonal sub-block `A[range, range]`.
pub fn sub_block(a: &CMat, start: usize, len: usize) -> CMat {
    a.view((start, start), (len, len)).into_owned()
}
