//! Seeded random benchmark instances with a known stabilizing gain.
//!
//! The closed loop is drawn first: `F` is a Gaussian matrix rescaled to a
//! target spectral radius, and `A := F + B K₀ C`, so `K₀` is stabilizing by
//! construction with `ρ(A - BK₀C)` equal to the drawn radius.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::matrixcore::{sigma_min, spectral_radius, Mat};
use crate::sofcost::{Gain, PlantSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputMap {
    /// Gaussian `d×n` with full row rank.
    Random,
    /// `C = I` (requires `d = n`).
    Identity,
    /// Random square `C` with `σ_min(C) ≥ 0.3`.
    Invertible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSpec {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub output: OutputMap,
    /// Closed-loop spectral radius at `K₀` is drawn uniformly in this range.
    pub radius: (f64, f64),
    /// Standard deviation of the entries of `K₀`.
    pub gain_scale: f64,
    /// Standard deviation of the entries of `B`.
    pub input_scale: f64,
}

impl InstanceSpec {
    pub fn new(n: usize, m: usize, d: usize) -> Self {
        Self {
            n,
            m,
            d,
            output: OutputMap::Random,
            radius: (0.3, 0.9),
            gain_scale: 0.3,
            input_scale: 0.5,
        }
    }

    pub fn state_feedback(n: usize, m: usize) -> Self {
        Self {
            output: OutputMap::Identity,
            ..Self::new(n, m, n)
        }
    }

    pub fn invertible_output(n: usize, m: usize) -> Self {
        Self {
            output: OutputMap::Invertible,
            ..Self::new(n, m, n)
        }
    }

    /// Dimensions drawn uniformly with `1 ≤ m ≤ max`, `1 ≤ d ≤ n ≤ max`.
    pub fn random_dims<R: Rng>(rng: &mut R, max: usize) -> Self {
        let n = rng.random_range(1..=max);
        let m = rng.random_range(1..=max);
        let d = rng.random_range(1..=n);
        Self::new(n, m, d)
    }

    pub fn with_radius(mut self, lo: f64, hi: f64) -> Self {
        self.radius = (lo, hi);
        self
    }
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub plant: PlantSpec,
    pub k0: Gain,
}

pub fn gaussian<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Well-conditioned SPD matrix `0.5·I + GGᵀ/n`.
fn spd<R: Rng>(rng: &mut R, n: usize) -> Mat {
    let g = gaussian(rng, n, n, 1.0);
    Mat::identity(n, n) * 0.5 + &g * g.transpose() / n as f64
}

/// Direction uniform on the Frobenius unit sphere.
pub fn unit_direction<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    loop {
        let z = gaussian(rng, rows, cols, 1.0);
        let norm = z.norm();
        if norm > 1e-12 {
            return z / norm;
        }
    }
}

pub fn random_instance<R: Rng>(rng: &mut R, spec: &InstanceSpec) -> Result<Instance> {
    let InstanceSpec { n, m, d, .. } = *spec;
    let c = match spec.output {
        OutputMap::Identity => Mat::identity(n, n),
        OutputMap::Invertible => loop {
            let c = gaussian(rng, n, n, 1.0);
            if sigma_min(&c) >= 0.3 {
                break c;
            }
        },
        OutputMap::Random => loop {
            let c = gaussian(rng, d, n, 1.0);
            if sigma_min(&c) >= 0.1 {
                break c;
            }
        },
    };
    let b = gaussian(rng, n, m, spec.input_scale);
    let k0 = gaussian(rng, m, c.nrows(), spec.gain_scale);
    let target = rng.random_range(spec.radius.0..=spec.radius.1);
    let f = loop {
        let f = gaussian(rng, n, n, 1.0);
        let rho = spectral_radius(&f)?;
        if rho > 1e-6 {
            break f * (target / rho);
        }
    };
    let a = &f + &b * &k0 * &c;
    let plant = PlantSpec::new(a, b, c, spd(rng, n), spd(rng, m), spd(rng, n))?;
    Ok(Instance {
        plant,
        k0: Gain::new(k0)?,
    })
}
