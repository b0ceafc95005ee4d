//! Dense matrix utilities: norms, spectra and the discrete Lyapunov solver.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen, LU};

use crate::error::{Result, SofError};
use crate::policy::NumericPolicy;

pub type Mat = DMatrix<f64>;

pub fn ensure_finite(op: &'static str, m: &Mat) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(SofError::Contract {
            op,
            detail: "matrix has non-finite entries".into(),
        })
    }
}

fn ensure_square(op: &'static str, m: &Mat) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(SofError::dimension(
            op,
            format!("expected a square matrix, got {}x{}", m.nrows(), m.ncols()),
        ))
    }
}

/// Largest singular value.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Smallest singular value.
pub fn sigma_min(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().min()
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &Mat) -> bool {
    if !m.is_square() {
        return false;
    }
    let slack = NumericPolicy::global().symmetry_slack * spectral_norm(m).max(1.0);
    let n = m.nrows();
    (0..n).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= slack))
}

fn ensure_symmetric(op: &'static str, m: &Mat) -> Result<()> {
    ensure_square(op, m)?;
    if is_symmetric(m) {
        Ok(())
    } else {
        let asym = (m - m.transpose()).abs().max();
        Err(SofError::Contract {
            op,
            detail: format!("matrix is not symmetric (max |m_ij - m_ji| = {asym:.3e})"),
        })
    }
}

/// Maximum modulus over the (complex) eigenvalues of `m`, computed from the
/// real Schur form so rotations and defective blocks are handled.
pub fn spectral_radius(m: &Mat) -> Result<f64> {
    ensure_square("spectral_radius", m)?;
    ensure_finite("spectral_radius", m)?;
    match m.nrows() {
        0 => return Ok(0.0),
        1 => return Ok(m[(0, 0)].abs()),
        _ => {}
    }
    let policy = NumericPolicy::global();
    let schur = Schur::try_new(m.clone(), f64::EPSILON, policy.eigen_max_iter).ok_or_else(|| {
        SofError::numerical(
            "spectral_radius",
            format!(
                "Schur iteration did not converge in {} sweeps (|M|_F = {:.6e})",
                policy.eigen_max_iter,
                m.norm()
            ),
        )
    })?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymExtremes {
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Smallest |eigenvalue|, which equals the smallest singular value for symmetric input.
    pub sigma_min: f64,
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn sym_eigenvalues(m: &Mat) -> Result<Vec<f64>> {
    ensure_symmetric("sym_eigenvalues", m)?;
    ensure_finite("sym_eigenvalues", m)?;
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let policy = NumericPolicy::global();
    let eig = SymmetricEigen::try_new(symmetrize(m), f64::EPSILON, policy.eigen_max_iter)
        .ok_or_else(|| {
            SofError::numerical("sym_eigenvalues", "symmetric QR iteration did not converge")
        })?;
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    Ok(values)
}

pub fn sym_eig_extremes(m: &Mat) -> Result<SymExtremes> {
    let values = sym_eigenvalues(m)?;
    let (Some(&lambda_min), Some(&lambda_max)) = (values.first(), values.last()) else {
        return Err(SofError::dimension("sym_eig_extremes", "empty matrix"));
    };
    let sigma_min = values.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    Ok(SymExtremes {
        lambda_min,
        lambda_max,
        sigma_min,
    })
}

/// Lower Cholesky factor of a positive semidefinite matrix; semidefinite
/// input is factored through its eigen-decomposition.
pub fn psd_sqrt_factor(m: &Mat) -> Result<Mat> {
    ensure_symmetric("psd_sqrt_factor", m)?;
    if let Some(chol) = symmetrize(m).cholesky() {
        return Ok(chol.l());
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    if eig.eigenvalues.min() < -NumericPolicy::global().symmetry_slack * spectral_norm(m).max(1.0) {
        return Err(SofError::Contract {
            op: "psd_sqrt_factor",
            detail: "matrix is not positive semidefinite".into(),
        });
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * Mat::from_diagonal(&roots))
}

enum LyapunovMethod {
    Direct(LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
    Doubling,
}

/// Solver for `P = W + Fᵀ P F` with a fixed stable coefficient `F`.
///
/// The linear operator is factored once, so repeated right-hand sides (as in
/// Hessian assembly) cost one back-substitution each.
pub struct LyapunovSolver {
    f: Mat,
    method: LyapunovMethod,
}

impl LyapunovSolver {
    /// Checks `ρ(F) < 1` before factoring.
    pub fn new(f: Mat) -> Result<Self> {
        ensure_square("solve_discrete_lyapunov", &f)?;
        ensure_finite("solve_discrete_lyapunov", &f)?;
        let rho = spectral_radius(&f)?;
        if rho >= 1.0 {
            return Err(SofError::instability("solve_discrete_lyapunov", rho));
        }
        Self::with_known_stable(f)
    }

    /// Skips the spectral check; the caller has already established `ρ(F) < 1`.
    pub(crate) fn with_known_stable(f: Mat) -> Result<Self> {
        let n = f.nrows();
        let method = if n <= NumericPolicy::global().lyapunov_direct_max_n {
            let ft = f.transpose();
            let op = Mat::identity(n * n, n * n) - ft.kronecker(&ft);
            let lu = op.lu();
            if !lu.is_invertible() {
                return Err(SofError::numerical(
                    "solve_discrete_lyapunov",
                    "I - Fᵀ⊗Fᵀ is singular",
                ));
            }
            LyapunovMethod::Direct(lu)
        } else {
            LyapunovMethod::Doubling
        };
        Ok(Self { f, method })
    }

    pub fn coefficient(&self) -> &Mat {
        &self.f
    }

    /// `W - P + FᵀPF`.
    pub fn residual(&self, p: &Mat, w: &Mat) -> Mat {
        w - p + self.f.transpose() * p * &self.f
    }

    fn raw_solve(&self, w: &Mat) -> Result<Mat> {
        let n = self.f.nrows();
        match &self.method {
            LyapunovMethod::Direct(lu) => {
                let rhs = DVector::from_column_slice(w.as_slice());
                let x = lu.solve(&rhs).ok_or_else(|| {
                    SofError::numerical("solve_discrete_lyapunov", "LU back-substitution failed")
                })?;
                Ok(Mat::from_column_slice(n, n, x.as_slice()))
            }
            LyapunovMethod::Doubling => {
                let mut p = w.clone();
                let mut g = self.f.clone();
                for _ in 0..NumericPolicy::global().smith_max_sweeps {
                    let step = g.transpose() * &p * &g;
                    let done = step.norm() <= f64::EPSILON * p.norm();
                    p += step;
                    if done {
                        return Ok(p);
                    }
                    g = &g * &g;
                }
                Err(SofError::numerical(
                    "solve_discrete_lyapunov",
                    "Smith doubling did not converge",
                ))
            }
        }
    }

    /// Solves for symmetric `P`; the output is symmetrized and its residual checked.
    pub fn solve(&self, w: &Mat) -> Result<Mat> {
        let n = self.f.nrows();
        if w.shape() != (n, n) {
            return Err(SofError::dimension(
                "solve_discrete_lyapunov",
                format!("W is {}x{}, F is {n}x{n}", w.nrows(), w.ncols()),
            ));
        }
        ensure_symmetric("solve_discrete_lyapunov", w)?;
        let w = symmetrize(w);
        let mut p = symmetrize(&self.raw_solve(&w)?);
        let tol = NumericPolicy::global().lyapunov_residual;
        let mut res = self.residual(&p, &w);
        if res.norm() > tol * p.norm().max(1.0) {
            // one step of iterative refinement
            p += symmetrize(&self.raw_solve(&symmetrize(&res))?);
            res = self.residual(&p, &w);
        }
        let r = res.norm();
        if !(r <= tol * p.norm().max(1.0)) {
            return Err(SofError::numerical(
                "solve_discrete_lyapunov",
                format!("residual {r:.3e} exceeds {tol:.1e}·max(1, |P|_F)"),
            ));
        }
        Ok(p)
    }
}

/// Solves `P = W + FᵀPF` for stable `F` and symmetric `W`.
pub fn solve_discrete_lyapunov(f: &Mat, w: &Mat) -> Result<Mat> {
    LyapunovSolver::new(f.clone())?.solve(w)
}

pub fn trace_product(a: &Mat, b: &Mat) -> f64 {
    // Tr(AB) without forming the product
    a.component_mul(&b.transpose()).sum()
}
