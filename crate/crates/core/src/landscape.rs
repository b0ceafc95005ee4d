//! Stationary-point classification, the initial-distribution dependence of
//! output-feedback stationary points, and grid scans of gain slices.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descent::{run_gd, DescentConfig, DescentTrace, Termination};
use crate::error::{Result, SofError};
use crate::matrixcore::{spectral_norm, sym_eigenvalues, Mat};
use crate::oracle::dare_optimal_gain;
use crate::sofcost::{CostPoint, Gain, PlantSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    LocalMin,
    Saddle,
    LocalMax,
    Degenerate,
}

impl Classification {
    /// All `λ > tol` → local min, all `λ < -tol` → local max, eigenvalues of
    /// both signs beyond `tol` → saddle, anything else → degenerate.
    pub fn of_spectrum(spectrum: &[f64], tol: f64) -> Self {
        if spectrum.iter().all(|&l| l > tol) {
            Classification::LocalMin
        } else if spectrum.iter().all(|&l| l < -tol) {
            Classification::LocalMax
        } else if spectrum.iter().any(|&l| l > tol) && spectrum.iter().any(|&l| l < -tol) {
            Classification::Saddle
        } else {
            Classification::Degenerate
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryReport {
    pub gain: Gain,
    pub gradnorm: f64,
    /// Ascending eigenvalues of the full Hessian.
    pub hessian_spectrum: Vec<f64>,
    pub classification: Classification,
    pub degeneracy_tol: f64,
}

/// `degen_tol` defaults to `1e-8·max(1, ‖H‖)`.
pub fn classify_stationary(
    plant: &PlantSpec,
    k: &Gain,
    grad_tol: f64,
    degen_tol: Option<f64>,
) -> Result<StationaryReport> {
    let point = CostPoint::with_context(plant, k, "classify_stationary")?;
    let gradnorm = point.gradient().norm();
    if gradnorm > grad_tol {
        return Err(SofError::NotStationary {
            gradnorm,
            tol: grad_tol,
        });
    }
    let hessian = point.full_hessian()?;
    let tol = degen_tol.unwrap_or_else(|| 1e-8 * spectral_norm(&hessian).max(1.0));
    let hessian_spectrum = sym_eigenvalues(&hessian)?;
    Ok(StationaryReport {
        gain: k.clone(),
        gradnorm,
        classification: Classification::of_spectrum(&hessian_spectrum, tol),
        hessian_spectrum,
        degeneracy_tol: tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftLimit {
    pub gain: Gain,
    #[serde(rename = "J")]
    pub j: f64,
    pub grad_fro: f64,
    pub iterations: usize,
    /// `‖KC - K_s*‖_F`.
    pub ks_star_distance: f64,
    pub ks_star_match: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub a: ShiftLimit,
    pub b: ShiftLimit,
    /// `‖K_a - K_b‖_F`.
    pub shift: f64,
    /// Either limit satisfies `‖KC - K_s*‖_F ≤ 1e-6`.
    pub ks_star_match: bool,
}

impl ShiftReport {
    /// Operationalization of "a different stationary point".
    pub fn shifted(&self) -> bool {
        self.shift > 1e-3
    }
}

pub const KS_STAR_MATCH_TOL: f64 = 1e-6;

/// Line search to `‖∇J‖_F ≤ 1e-10`.
pub fn shift_descent_config() -> DescentConfig {
    DescentConfig::linesearch(1e-10, 200_000)
}

/// Runs the same descent from `K₀` under two initial-state second moments
/// and compares the limits.
pub fn stationary_shift_experiment(
    plant: &PlantSpec,
    x0_a: &Mat,
    x0_b: &Mat,
    k0: &Gain,
) -> Result<ShiftReport> {
    stationary_shift_experiment_with(plant, x0_a, x0_b, k0, &shift_descent_config())
}

pub fn stationary_shift_experiment_with(
    plant: &PlantSpec,
    x0_a: &Mat,
    x0_b: &Mat,
    k0: &Gain,
    config: &DescentConfig,
) -> Result<ShiftReport> {
    let labeled = |label: &'static str| move |e: SofError| e.labeled(label);
    let plant_a = plant.with_x0(x0_a.clone()).map_err(labeled("X0_a"))?;
    let plant_b = plant.with_x0(x0_b.clone()).map_err(labeled("X0_b"))?;
    let ks_star = dare_optimal_gain(plant)?.k_s_star;
    let (a, b) = rayon::join(
        || converge(&plant_a, k0, config, &ks_star).map_err(labeled("X0_a")),
        || converge(&plant_b, k0, config, &ks_star).map_err(labeled("X0_b")),
    );
    let (a, b) = (a?, b?);
    Ok(ShiftReport {
        shift: a.gain.distance(&b.gain),
        ks_star_match: a.ks_star_match || b.ks_star_match,
        a,
        b,
    })
}

fn converge(plant: &PlantSpec, k0: &Gain, config: &DescentConfig, ks_star: &Mat) -> Result<ShiftLimit> {
    let trace: DescentTrace = run_gd(plant, k0, config)?;
    if trace.status != Termination::EpsilonReached {
        return Err(SofError::numerical(
            "stationary_shift_experiment",
            format!(
                "descent stopped with {:?} at |grad|_F = {:e}",
                trace.status,
                trace.last().grad_fro
            ),
        ));
    }
    let last = trace.last();
    let distance = (last.gain.matrix() * plant.c() - ks_star).norm();
    Ok(ShiftLimit {
        gain: last.gain.clone(),
        j: last.j,
        grad_fro: last.grad_fro,
        iterations: trace.iterations(),
        ks_star_distance: distance,
        ks_star_match: distance <= KS_STAR_MATCH_TOL,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanAxis {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl ScanAxis {
    pub fn new(lo: f64, hi: f64, points: usize) -> Self {
        Self { lo, hi, points }
    }

    pub fn value(&self, i: usize) -> f64 {
        if self.points <= 1 {
            self.lo
        } else {
            self.lo + (self.hi - self.lo) * i as f64 / (self.points - 1) as f64
        }
    }
}

/// An affine gain slice `K = origin + Σ tᵢ·directionᵢ` with one or two axes.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanGrid {
    pub origin: Mat,
    pub directions: Vec<Mat>,
    pub axes: Vec<ScanAxis>,
}

impl ScanGrid {
    /// Coordinates of the gain itself; needs `m·d ∈ {1, 2}` and one axis per entry.
    /// Entries are taken in column-major order.
    pub fn coordinates(plant: &PlantSpec, axes: Vec<ScanAxis>) -> Result<Self> {
        let (m, d) = (plant.m(), plant.d());
        let dim = m * d;
        if !(1..=2).contains(&dim) || axes.len() != dim {
            return Err(SofError::Size {
                op: "scan_region",
                size: if (1..=2).contains(&dim) { axes.len() } else { dim },
                cap: 2,
            });
        }
        let directions = (0..dim)
            .map(|i| {
                let mut z = Mat::zeros(m, d);
                z[(i % m, i / m)] = 1.0;
                z
            })
            .collect();
        Ok(Self {
            origin: Mat::zeros(m, d),
            directions,
            axes,
        })
    }

    pub fn slice(origin: Mat, directions: Vec<Mat>, axes: Vec<ScanAxis>) -> Result<Self> {
        if !(1..=2).contains(&axes.len()) || directions.len() != axes.len() {
            return Err(SofError::Size {
                op: "scan_region",
                size: axes.len(),
                cap: 2,
            });
        }
        Ok(Self {
            origin,
            directions,
            axes,
        })
    }

    fn shape(&self) -> (usize, usize) {
        let first = self.axes[0].points;
        let second = self.axes.get(1).map_or(1, |a| a.points);
        (first, second)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanCell {
    pub index: (usize, usize),
    /// Slice coordinates `(t₁, t₂)`; `t₂` is absent on a one-axis grid.
    pub coords: Vec<f64>,
    pub stabilizing: bool,
    /// `None` marks an unstabilizing cell.
    #[serde(rename = "J")]
    pub j: Option<f64>,
    pub gradnorm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub cells: usize,
    pub min_j: f64,
    pub argmin: (usize, usize),
    /// Cells with an unstabilizing grid neighbour.
    pub boundary_cells: usize,
    /// Smallest `J` over boundary cells divided by `min_j`.
    pub boundary_ratio: Option<f64>,
    pub argmin_on_boundary: bool,
    pub touches_grid_edge: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub shape: (usize, usize),
    pub cells: Vec<ScanCell>,
    pub components: Vec<Component>,
}

impl ScanReport {
    pub fn any_stabilizing(&self) -> bool {
        self.cells.iter().any(|c| c.stabilizing)
    }

    /// Every component with boundary cells has `J` there exceeding
    /// `factor` times its minimum, and no component is minimized on its boundary.
    pub fn boundary_blowup(&self, factor: f64) -> bool {
        self.components.iter().all(|c| {
            !c.argmin_on_boundary && c.boundary_ratio.map_or(true, |r| r > factor)
        })
    }
}

pub fn scan_region(plant: &PlantSpec, grid: &ScanGrid) -> Result<ScanReport> {
    let (n1, n2) = grid.shape();
    for dir in &grid.directions {
        if dir.shape() != (plant.m(), plant.d()) || grid.origin.shape() != dir.shape() {
            return Err(SofError::dimension(
                "scan_region",
                format!("slice directions must be {}x{}", plant.m(), plant.d()),
            ));
        }
    }
    let cells = (0..n1 * n2)
        .into_par_iter()
        .map(|idx| {
            let index = (idx / n2, idx % n2);
            let coords: Vec<f64> = grid
                .axes
                .iter()
                .zip([index.0, index.1])
                .map(|(axis, i)| axis.value(i))
                .collect();
            let mut k = grid.origin.clone();
            for (dir, t) in grid.directions.iter().zip(&coords) {
                k += dir * *t;
            }
            let gain = Gain::new(k)?;
            match CostPoint::with_context(plant, &gain, "scan_region") {
                Ok(point) => Ok(ScanCell {
                    index,
                    coords,
                    stabilizing: true,
                    j: Some(point.cost()),
                    gradnorm: Some(point.gradient().norm()),
                }),
                Err(SofError::Instability { .. }) => Ok(ScanCell {
                    index,
                    coords,
                    stabilizing: false,
                    j: None,
                    gradnorm: None,
                }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let components = components(&cells, (n1, n2));
    Ok(ScanReport {
        shape: (n1, n2),
        cells,
        components,
    })
}

fn neighbours((i, j): (usize, usize), (n1, n2): (usize, usize)) -> impl Iterator<Item = (usize, usize)> {
    let candidates = [
        i.checked_sub(1).map(|a| (a, j)),
        (i + 1 < n1).then_some((i + 1, j)),
        j.checked_sub(1).map(|b| (i, b)),
        (j + 1 < n2).then_some((i, j + 1)),
    ];
    candidates.into_iter().flatten()
}

/// 4-connected components of stabilizing cells, in order of their first cell.
fn components(cells: &[ScanCell], shape: (usize, usize)) -> Vec<Component> {
    let (n1, n2) = shape;
    let at = |(i, j): (usize, usize)| &cells[i * n2 + j];
    let mut label = vec![usize::MAX; cells.len()];
    let mut out = Vec::new();
    for start in 0..cells.len() {
        if !cells[start].stabilizing || label[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut stack = vec![start];
        label[start] = id;
        let mut members = Vec::new();
        while let Some(idx) = stack.pop() {
            members.push(idx);
            for (a, b) in neighbours(cells[idx].index, shape) {
                let nb = a * n2 + b;
                if cells[nb].stabilizing && label[nb] == usize::MAX {
                    label[nb] = id;
                    stack.push(nb);
                }
            }
        }
        members.sort_unstable();
        let on_boundary =
            |idx: usize| neighbours(cells[idx].index, shape).any(|p| !at(p).stabilizing);
        let on_edge = |idx: usize| {
            let (i, j) = cells[idx].index;
            i == 0 || i + 1 == n1 || (n2 > 1 && (j == 0 || j + 1 == n2))
        };
        let j_of = |idx: usize| cells[idx].j.expect("stabilizing cells carry J");
        let argmin = members
            .iter()
            .copied()
            .min_by(|&x, &y| j_of(x).total_cmp(&j_of(y)))
            .expect("components are nonempty");
        let min_j = j_of(argmin);
        let boundary: Vec<usize> = members.iter().copied().filter(|&i| on_boundary(i)).collect();
        let boundary_ratio = boundary
            .iter()
            .map(|&i| j_of(i))
            .min_by(f64::total_cmp)
            .map(|b| b / min_j);
        out.push(Component {
            cells: members.len(),
            min_j,
            argmin: cells[argmin].index,
            boundary_cells: boundary.len(),
            boundary_ratio,
            argmin_on_boundary: on_boundary(argmin),
            touches_grid_edge: members.iter().any(|&i| on_edge(i)),
        });
    }
    out
}
