//! Exact cost, gradient and Hessian of the static output feedback LQR cost.
//!
//! The plant is `x⁺ = Ax + Bu`, `y = Cx`, driven by `u = -Ky`. For a
//! stabilizing gain the cost is `J(K) = Tr(P_K X₀)` where `P_K` solves the
//! closed-loop Lyapunov equation
//! `P_K = Q + CᵀKᵀRKC + (A-BKC)ᵀ P_K (A-BKC)` and `X₀ = E[x₀x₀ᵀ]`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SofError};
use crate::matrixcore::{
    ensure_finite, sigma_min, spectral_radius, sym_eig_extremes, symmetrize, trace_product,
    LyapunovSolver, Mat,
};
use crate::policy::NumericPolicy;

/// A validated problem instance `(A, B, C, Q, R, X₀)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantSpec {
    a: Mat,
    b: Mat,
    c: Mat,
    q: Mat,
    r: Mat,
    x0: Mat,
    mu: f64,
    q_min: f64,
    r_min: f64,
}

fn check_shape(field: &'static str, m: &Mat, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(SofError::InvalidPlant {
            field,
            detail: format!(
                "expected {rows}x{cols}, got {}x{}",
                m.nrows(),
                m.ncols()
            ),
        });
    }
    if !m.iter().all(|x| x.is_finite()) {
        return Err(SofError::InvalidPlant {
            field,
            detail: "non-finite entry".into(),
        });
    }
    Ok(())
}

/// Returns `λ_min` of a matrix that must be symmetric positive definite.
fn check_positive_definite(field: &'static str, m: &Mat) -> Result<f64> {
    let ext = sym_eig_extremes(m).map_err(|e| SofError::InvalidPlant {
        field,
        detail: e.to_string(),
    })?;
    if ext.lambda_min <= 1e-12 {
        return Err(SofError::InvalidPlant {
            field,
            detail: format!(
                "not positive definite: lambda_min = {:.6e} <= 1e-12",
                ext.lambda_min
            ),
        });
    }
    Ok(ext.lambda_min)
}

impl PlantSpec {
    pub fn new(a: Mat, b: Mat, c: Mat, q: Mat, r: Mat, x0: Mat) -> Result<Self> {
        let n = a.nrows();
        if n == 0 {
            return Err(SofError::InvalidPlant {
                field: "A",
                detail: "empty state dimension".into(),
            });
        }
        let m = b.ncols();
        let d = c.nrows();
        if m == 0 || d == 0 {
            return Err(SofError::InvalidPlant {
                field: if m == 0 { "B" } else { "C" },
                detail: "empty input or output dimension".into(),
            });
        }
        check_shape("A", &a, n, n)?;
        check_shape("B", &b, n, m)?;
        check_shape("C", &c, d, n)?;
        check_shape("Q", &q, n, n)?;
        check_shape("R", &r, m, m)?;
        check_shape("X0", &x0, n, n)?;
        let q_min = check_positive_definite("Q", &q)?;
        let r_min = check_positive_definite("R", &r)?;
        let mu = check_positive_definite("X0", &x0)?;
        let cct = &c * c.transpose();
        let cct_min = sym_eig_extremes(&symmetrize(&cct))?.lambda_min;
        if d > n || cct_min <= 1e-12 {
            return Err(SofError::InvalidPlant {
                field: "C",
                detail: format!("C must have full row rank (sigma_min(CCᵀ) = {cct_min:.6e})"),
            });
        }
        Ok(Self {
            q: symmetrize(&q),
            r: symmetrize(&r),
            x0: symmetrize(&x0),
            a,
            b,
            c,
            mu,
            q_min,
            r_min,
        })
    }

    /// Same plant with a different initial-state second moment.
    pub fn with_x0(&self, x0: Mat) -> Result<Self> {
        Self::new(
            self.a.clone(),
            self.b.clone(),
            self.c.clone(),
            self.q.clone(),
            self.r.clone(),
            x0,
        )
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }
    pub fn b(&self) -> &Mat {
        &self.b
    }
    pub fn c(&self) -> &Mat {
        &self.c
    }
    pub fn q(&self) -> &Mat {
        &self.q
    }
    pub fn r(&self) -> &Mat {
        &self.r
    }
    pub fn x0(&self) -> &Mat {
        &self.x0
    }
    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    /// Output dimension.
    pub fn d(&self) -> usize {
        self.c.nrows()
    }
    /// `σ_min(X₀)`.
    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn sigma_min_q(&self) -> f64 {
        self.q_min
    }
    pub fn sigma_min_r(&self) -> f64 {
        self.r_min
    }

    /// `Some(σ_min(C))` when `C` is square and invertible.
    pub fn invertible_c_sigma_min(&self) -> Option<f64> {
        if self.d() != self.n() {
            return None;
        }
        let s = sigma_min(&self.c);
        (s > 1e-12).then_some(s)
    }

    pub fn closed_loop(&self, k: &Gain) -> Result<Mat> {
        self.check_gain(k)?;
        Ok(&self.a - &self.b * k.matrix() * &self.c)
    }

    fn check_gain(&self, k: &Gain) -> Result<()> {
        if k.matrix().shape() != (self.m(), self.d()) {
            return Err(SofError::dimension(
                "gain",
                format!(
                    "K is {}x{}, plant needs {}x{}",
                    k.matrix().nrows(),
                    k.matrix().ncols(),
                    self.m(),
                    self.d()
                ),
            ));
        }
        Ok(())
    }

    fn check_direction(&self, z: &Mat) -> Result<()> {
        if z.shape() != (self.m(), self.d()) {
            return Err(SofError::dimension(
                "direction",
                format!("Z is {}x{}, plant needs {}x{}", z.nrows(), z.ncols(), self.m(), self.d()),
            ));
        }
        ensure_finite("direction", z)
    }
}

#[derive(Serialize, Deserialize)]
struct GainRepr {
    rows: usize,
    cols: usize,
    /// Row-major entries.
    data: Vec<f64>,
}

/// An `m×d` static output feedback gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "GainRepr", try_from = "GainRepr")]
pub struct Gain(Mat);

impl From<Gain> for GainRepr {
    fn from(g: Gain) -> Self {
        GainRepr {
            rows: g.0.nrows(),
            cols: g.0.ncols(),
            data: g.row_major(),
        }
    }
}

impl TryFrom<GainRepr> for Gain {
    type Error = SofError;
    fn try_from(r: GainRepr) -> Result<Self> {
        if r.data.len() != r.rows * r.cols {
            return Err(SofError::dimension(
                "gain",
                format!("{} entries for a {}x{} gain", r.data.len(), r.rows, r.cols),
            ));
        }
        Gain::new(Mat::from_row_slice(r.rows, r.cols, &r.data))
    }
}

impl Gain {
    pub fn new(k: Mat) -> Result<Self> {
        ensure_finite("gain", &k)?;
        Ok(Gain(k))
    }

    pub fn zeros(m: usize, d: usize) -> Self {
        Gain(Mat::zeros(m, d))
    }

    pub fn scalar(k: f64) -> Self {
        Gain(Mat::from_element(1, 1, k))
    }

    pub fn matrix(&self) -> &Mat {
        &self.0
    }

    pub fn into_matrix(self) -> Mat {
        self.0
    }

    pub fn row_major(&self) -> Vec<f64> {
        self.0.transpose().as_slice().to_vec()
    }

    /// `K + t·Z`.
    pub fn offset(&self, z: &Mat, t: f64) -> Gain {
        Gain(&self.0 + z * t)
    }

    pub fn distance(&self, other: &Gain) -> f64 {
        (&self.0 - &other.0).norm()
    }
}

/// Lyapunov solutions and derived quantities at one stabilizing gain.
#[derive(Debug, Clone, PartialEq)]
pub struct CostBundle {
    /// Value matrix `P_K`.
    pub p: Mat,
    /// State correlation `Σ_K`.
    pub sigma: Mat,
    /// Gain error `E_K = (R + BᵀP_KB)KC - BᵀP_KA`.
    pub e: Mat,
    pub j: f64,
    /// Spectral radius of `A - BKC`.
    pub rho: f64,
    pub closed_loop: Mat,
}

pub fn is_stabilizing(plant: &PlantSpec, k: &Gain) -> Result<bool> {
    let rho = spectral_radius(&plant.closed_loop(k)?)?;
    Ok(rho < 1.0 - NumericPolicy::global().stability_margin)
}

/// Evaluation context at a fixed stabilizing gain: the bundle plus the
/// factored closed-loop Lyapunov operator, reused by every derivative.
pub struct CostPoint<'a> {
    plant: &'a PlantSpec,
    gain: Gain,
    bundle: CostBundle,
    solver: LyapunovSolver,
    /// `R + BᵀP_KB`.
    curvature: Mat,
}

impl<'a> CostPoint<'a> {
    pub fn new(plant: &'a PlantSpec, k: &Gain) -> Result<Self> {
        Self::with_context(plant, k, "cost_bundle")
    }

    pub(crate) fn with_context(plant: &'a PlantSpec, k: &Gain, context: &str) -> Result<Self> {
        let f = plant.closed_loop(k)?;
        let rho = spectral_radius(&f)?;
        if rho >= 1.0 - NumericPolicy::global().stability_margin {
            return Err(SofError::instability(context, rho));
        }
        let kc = k.matrix() * plant.c();
        let q_k = plant.q() + kc.transpose() * plant.r() * &kc;
        let solver = LyapunovSolver::with_known_stable(f.clone())?;
        let p = solver.solve(&symmetrize(&q_k))?;
        let sigma = LyapunovSolver::with_known_stable(f.transpose())?.solve(plant.x0())?;
        let bt_p = plant.b().transpose() * &p;
        let curvature = symmetrize(&(plant.r() + &bt_p * plant.b()));
        let e = &curvature * &kc - &bt_p * plant.a();
        let j = trace_product(&p, plant.x0());
        Ok(Self {
            plant,
            gain: k.clone(),
            bundle: CostBundle {
                p,
                sigma,
                e,
                j,
                rho,
                closed_loop: f,
            },
            solver,
            curvature,
        })
    }

    pub fn plant(&self) -> &PlantSpec {
        self.plant
    }

    pub fn gain(&self) -> &Gain {
        &self.gain
    }

    pub fn bundle(&self) -> &CostBundle {
        &self.bundle
    }

    pub fn into_bundle(self) -> CostBundle {
        self.bundle
    }

    pub fn cost(&self) -> f64 {
        self.bundle.j
    }

    /// `R + BᵀP_KB`.
    pub fn curvature(&self) -> &Mat {
        &self.curvature
    }

    /// `∇J(K) = 2 E_K Σ_K Cᵀ`.
    pub fn gradient(&self) -> Mat {
        (&self.bundle.e * &self.bundle.sigma * self.plant.c().transpose()) * 2.0
    }

    /// `P'_K[Z]`, the derivative of `P_{K+tZ}` at `t = 0`.
    pub fn value_derivative(&self, z: &Mat) -> Result<Mat> {
        self.plant.check_direction(z)?;
        let zc = z * self.plant.c();
        let forcing = zc.transpose() * &self.bundle.e;
        self.solver.solve(&symmetrize(&(&forcing + forcing.transpose())))
    }

    /// `∇²J(K)[Z, Z]`.
    pub fn hessian_quadratic(&self, z: &Mat) -> Result<f64> {
        let dp = self.value_derivative(z)?;
        let zc = z * self.plant.c();
        let bzc = self.plant.b() * &zc;
        let first = trace_product(
            &(zc.transpose() * &self.curvature * &zc),
            &self.bundle.sigma,
        );
        let second = trace_product(
            &(bzc.transpose() * dp * &self.bundle.closed_loop),
            &self.bundle.sigma,
        );
        Ok(2.0 * first - 4.0 * second)
    }

    /// Dense Hessian with respect to the column-major `vec(K)`, assembled by
    /// polarization of [`CostPoint::hessian_quadratic`].
    pub fn full_hessian(&self) -> Result<Mat> {
        let (m, d) = (self.plant.m(), self.plant.d());
        let dim = m * d;
        let cap = NumericPolicy::global().hessian_cap;
        if dim > cap {
            return Err(SofError::Size {
                op: "full_hessian",
                size: dim,
                cap,
            });
        }
        let basis = |i: usize| {
            let mut z = Mat::zeros(m, d);
            z[(i % m, i / m)] = 1.0;
            z
        };
        let mut h = Mat::zeros(dim, dim);
        for i in 0..dim {
            let ei = basis(i);
            h[(i, i)] = self.hessian_quadratic(&ei)?;
            for j in 0..i {
                let ej = basis(j);
                let v = (self.hessian_quadratic(&(&ei + &ej))?
                    - self.hessian_quadratic(&(&ei - &ej))?)
                    / 4.0;
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        Ok(h)
    }
}

pub fn cost_bundle(plant: &PlantSpec, k: &Gain) -> Result<CostBundle> {
    Ok(CostPoint::new(plant, k)?.into_bundle())
}

pub fn cost(plant: &PlantSpec, k: &Gain) -> Result<f64> {
    Ok(CostPoint::new(plant, k)?.cost())
}

pub fn gradient(plant: &PlantSpec, k: &Gain) -> Result<Mat> {
    Ok(CostPoint::new(plant, k)?.gradient())
}

pub fn directional_value_derivative(plant: &PlantSpec, k: &Gain, z: &Mat) -> Result<Mat> {
    CostPoint::new(plant, k)?.value_derivative(z)
}

pub fn hessian_quadratic(plant: &PlantSpec, k: &Gain, z: &Mat) -> Result<f64> {
    CostPoint::new(plant, k)?.hessian_quadratic(z)
}

pub fn full_hessian(plant: &PlantSpec, k: &Gain) -> Result<Mat> {
    CostPoint::new(plant, k)?.full_hessian()
}

/// Right-hand side of the performance difference identity, which equals
/// `J(K') - J(K)`:
/// `2Tr(Σ_{K'}(K'C-KC)ᵀE_K) + Tr(Σ_{K'}(K'C-KC)ᵀ(R+BᵀP_KB)(K'C-KC))`.
pub fn performance_difference(plant: &PlantSpec, k: &Gain, k_prime: &Gain) -> Result<f64> {
    let base = CostPoint::with_context(plant, k, "performance_difference: gain K")?;
    let other = CostPoint::with_context(plant, k_prime, "performance_difference: gain K'")?;
    let delta = (k_prime.matrix() - k.matrix()) * plant.c();
    let sigma_p = &other.bundle.sigma;
    let linear = trace_product(&(sigma_p * delta.transpose()), &base.bundle.e);
    let quadratic = trace_product(
        &(sigma_p * delta.transpose()),
        &(&base.curvature * &delta),
    );
    Ok(2.0 * linear + quadratic)
}
