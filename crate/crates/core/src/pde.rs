//! Benchmark problems, a method-of-lines solver for PDEs spanned by a
//! [`CandidateSet`], sensor sampling and the error metrics.
//!
//! The solver integrates `u_t = Σ_j c_j · term_j(u)` on a uniform grid.
//! Spatial derivatives use fourth-order finite-difference stencils (centered
//! in the interior, shifted one-sided windows next to non-periodic
//! boundaries); time integration is classical RK4 with substeps sized from
//! the stencil spectral radii and the current solution magnitude. Periodic
//! problems can instead use an integrating-factor RK4 in Fourier space that
//! treats all linear terms exactly.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::candidates::CandidateSet;
use crate::data::{sample_uniform, Domain, MeasurementDataset};
use crate::error::{Error, Result};
use crate::net::{self, Scaling, WeightVector};

/// Smallest number of spatial nodes the stencils can work with.
pub const MIN_NODES: usize = 7;

/// Absolute-value ceiling relative to the initial amplitude before a run is declared unstable.
const BLOWUP_FACTOR: f64 = 1e6;

/// Value reported for `e_L` when the discovered dynamics blow up.
pub const UNSTABLE_MARKER: f64 = f64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Boundary {
    /// Prescribed values at both ends.
    Dirichlet { left: f64, right: f64 },
    /// Prescribed `u_x` at both ends.
    Neumann { left: f64, right: f64 },
    Periodic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Waveform {
    Sin,
    Cos,
}

/// `u(0, x) = amplitude · waveform(frequency · (x - shift))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub waveform: Waveform,
    pub amplitude: f64,
    pub frequency: f64,
    #[serde(default)]
    pub shift: f64,
}

impl InitialCondition {
    pub fn zero() -> Self {
        InitialCondition {
            waveform: Waveform::Sin,
            amplitude: 0.0,
            frequency: 0.0,
            shift: 0.0,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let arg = self.frequency * (x - self.shift);
        self.amplitude
            * match self.waveform {
                Waveform::Sin => arg.sin(),
                Waveform::Cos => arg.cos(),
            }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    FiniteDifference,
    /// Fourier integrating factor for the linear terms; periodic boundaries only.
    IntegratingFactor,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Spatial nodes. Periodic grids omit the right endpoint.
    pub nx: usize,
    /// Output times, both ends of the time interval included.
    pub nt: usize,
    pub scheme: Scheme,
    /// Fraction of the estimated RK4 stability limit used per substep.
    #[serde(default = "default_safety")]
    pub safety: f64,
    /// Substep budget for a whole solve; exceeding it flags the run unstable.
    #[serde(default = "default_max_substeps")]
    pub max_substeps: usize,
}

fn default_safety() -> f64 {
    0.5
}

fn default_max_substeps() -> usize {
    2_000_000
}

impl GridSpec {
    pub fn new(nx: usize, nt: usize, scheme: Scheme) -> Self {
        GridSpec {
            nx,
            nt,
            scheme,
            safety: default_safety(),
            max_substeps: default_max_substeps(),
        }
    }
}

/// Everything but the coefficients: domain, initial and boundary data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemShape {
    pub domain: Domain,
    pub initial_condition: InitialCondition,
    pub boundary: Boundary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeProblem {
    pub name: String,
    pub shape: ProblemShape,
    pub candidates: CandidateSet,
    pub true_coefficients: Vec<f64>,
    /// Sensor sampling interval.
    pub sensor_dt: f64,
    /// Initial sequential-threshold value.
    pub threshold: f64,
    /// Reference HMC step size for this problem.
    pub hmc_step_size: f64,
    /// Grid used for ground truth and `e_L`.
    pub grid: GridSpec,
}

impl PdeProblem {
    pub fn validate(&self) -> Result<()> {
        self.shape.domain.validate()?;
        if self.true_coefficients.len() != self.candidates.len() {
            return Err(Error::Dimension(format!(
                "{} coefficients for {} candidates",
                self.true_coefficients.len(),
                self.candidates.len()
            )));
        }
        if !(self.sensor_dt > 0.0) || !(self.threshold > 0.0) {
            return Err(Error::Config("sensor_dt and threshold must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Burgers,
    Kdv,
    Heat,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "burgers" => Ok(Preset::Burgers),
            "kdv" => Ok(Preset::Kdv),
            "heat" => Ok(Preset::Heat),
            other => Err(Error::Domain(format!("unknown preset '{other}'"))),
        }
    }
}

/// Benchmark problem by name (`burgers`, `kdv`, `heat`).
pub fn preset_by_name(name: &str) -> Result<PdeProblem> {
    Ok(preset(name.parse()?))
}

pub fn preset(which: Preset) -> PdeProblem {
    let candidates = CandidateSet::default();
    match which {
        // u_t = -u u_x + 0.1 u_xx
        Preset::Burgers => PdeProblem {
            name: "burgers".into(),
            shape: ProblemShape {
                domain: Domain::new(0.0, 10.0, -8.0, 8.0).expect("valid"),
                initial_condition: InitialCondition {
                    waveform: Waveform::Sin,
                    amplitude: -1.0,
                    frequency: PI / 8.0,
                    shift: 0.0,
                },
                boundary: Boundary::Dirichlet {
                    left: 0.0,
                    right: 0.0,
                },
            },
            true_coefficients: candidates
                .coefficients(&[("u_xx", 0.1), ("u*u_x", -1.0)])
                .expect("default candidates"),
            candidates,
            sensor_dt: 0.2,
            threshold: 0.005,
            hmc_step_size: 5e-4,
            grid: GridSpec::new(801, 501, Scheme::FiniteDifference),
        },
        // u_t = -u u_x - u_xxx
        Preset::Kdv => PdeProblem {
            name: "kdv".into(),
            shape: ProblemShape {
                domain: Domain::new(0.0, 40.0, -20.0, 20.0).expect("valid"),
                initial_condition: InitialCondition {
                    waveform: Waveform::Cos,
                    amplitude: 1.0,
                    frequency: -PI / 20.0,
                    shift: 0.0,
                },
                boundary: Boundary::Periodic,
            },
            true_coefficients: candidates
                .coefficients(&[("u_xxx", -1.0), ("u*u_x", -1.0)])
                .expect("default candidates"),
            candidates,
            sensor_dt: 0.8,
            threshold: 0.05,
            hmc_step_size: 1e-4,
            grid: GridSpec::new(512, 501, Scheme::IntegratingFactor),
        },
        // u_t = 2 u_xx
        Preset::Heat => PdeProblem {
            name: "heat".into(),
            shape: ProblemShape {
                domain: Domain::new(0.0, 10.0, 0.0, 10.0).expect("valid"),
                initial_condition: InitialCondition {
                    waveform: Waveform::Cos,
                    amplitude: 10.0,
                    frequency: PI / 10.0,
                    shift: 5.0,
                },
                boundary: Boundary::Neumann {
                    left: 0.0,
                    right: 0.0,
                },
            },
            true_coefficients: candidates
                .coefficients(&[("u_xx", 2.0)])
                .expect("default candidates"),
            candidates,
            sensor_dt: 0.2,
            threshold: 0.02,
            hmc_step_size: 5e-4,
            grid: GridSpec::new(401, 501, Scheme::FiniteDifference),
        },
    }
}

/// Dense space-time solution `values[[i_t, i_x]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSolution {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub values: Array2<f64>,
    pub periodic: bool,
    /// Spatial period (domain width) when `periodic`.
    pub period: f64,
    pub unstable: bool,
    pub provenance: SolverInfo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverInfo {
    pub scheme: Scheme,
    pub nx: usize,
    pub nt: usize,
    pub substeps: usize,
    /// Output time index at which the run was declared unstable.
    pub unstable_at: Option<usize>,
}

impl GridSolution {
    pub fn dt(&self) -> f64 {
        self.t[1] - self.t[0]
    }

    pub fn dx(&self) -> f64 {
        self.x[1] - self.x[0]
    }

    /// Bilinear interpolation; `x` wraps on periodic grids.
    pub fn interpolate(&self, t: f64, x: f64) -> f64 {
        interpolate_on(&self.t, &self.x, self.periodic, &self.values, t, x)
    }

    /// Grid-wise ℓ² norm of `self - other` weighted by the cell measure `Δt·Δx`.
    pub fn l2_distance(&self, other: &GridSolution) -> Result<f64> {
        if self.values.dim() != other.values.dim() {
            return Err(Error::Dimension(format!(
                "grids {:?} and {:?} differ",
                self.values.dim(),
                other.values.dim()
            )));
        }
        let sq: f64 = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok((sq * self.dt() * self.dx()).sqrt())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Finite-difference fields on the grid: `u_t` (second order in time) and
    /// `∂^k u/∂x^k` for `k = 0..=max_order` (the spatial stencils of [`solve`]).
    pub fn derivative_grids(&self, max_order: usize) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
        if self.unstable {
            return Err(Error::Numerical("solution is flagged unstable".into()));
        }
        if !(1..=4).contains(&max_order) {
            return Err(Error::Domain(format!("spatial order {max_order} outside 1..=4")));
        }
        let (nt, nx) = self.values.dim();
        if nt < 3 || nx < MIN_NODES {
            return Err(Error::Domain("grid too small for derivative fields".into()));
        }
        let ops = FdOperators::new(nx, self.dx(), max_order, self.periodic);
        let mut fields = vec![self.values.clone()];
        let mut buf = vec![0.0; nx];
        for m in 1..=max_order {
            let mut f = Array2::zeros((nt, nx));
            for (i, row) in self.values.outer_iter().enumerate() {
                let u: Vec<f64> = row.to_vec();
                ops.apply(m, &u, &mut buf);
                f.row_mut(i).assign(&Array1::from(buf.clone()));
            }
            fields.push(f);
        }
        let h = self.dt();
        let v = &self.values;
        let mut ut = Array2::zeros((nt, nx));
        for j in 0..nx {
            ut[[0, j]] = (-3.0 * v[[0, j]] + 4.0 * v[[1, j]] - v[[2, j]]) / (2.0 * h);
            for i in 1..nt - 1 {
                ut[[i, j]] = (v[[i + 1, j]] - v[[i - 1, j]]) / (2.0 * h);
            }
            ut[[nt - 1, j]] =
                (3.0 * v[[nt - 1, j]] - 4.0 * v[[nt - 2, j]] + v[[nt - 3, j]]) / (2.0 * h);
        }
        Ok((ut, fields))
    }

    /// Bilinear interpolation of an arbitrary field laid out like `values`.
    pub fn interpolate_field(&self, field: &Array2<f64>, t: f64, x: f64) -> f64 {
        interpolate_on(&self.t, &self.x, self.periodic, field, t, x)
    }
}

fn locate(grid: &[f64], v: f64) -> (usize, f64) {
    let n = grid.len();
    let h = grid[1] - grid[0];
    let s = ((v - grid[0]) / h).clamp(0.0, (n - 1) as f64);
    let i = (s.floor() as usize).min(n - 2);
    (i, s - i as f64)
}

fn interpolate_on(tg: &[f64], xg: &[f64], periodic: bool, v: &Array2<f64>, t: f64, x: f64) -> f64 {
    let (it, ft) = locate(tg, t);
    let nx = xg.len();
    let (ix0, ix1, fx) = if periodic {
        let h = xg[1] - xg[0];
        let s = ((x - xg[0]) / h).rem_euclid(nx as f64);
        let i = (s.floor() as usize).min(nx - 1);
        (i, (i + 1) % nx, s - i as f64)
    } else {
        let (i, f) = locate(xg, x);
        (i, i + 1, f)
    };
    let a = v[[it, ix0]] * (1.0 - fx) + v[[it, ix1]] * fx;
    let b = v[[it + 1, ix0]] * (1.0 - fx) + v[[it + 1, ix1]] * fx;
    a * (1.0 - ft) + b * ft
}

/// Finite-difference weights for the `m`-th derivative at `z` from nodes `x`.
pub(crate) fn fornberg_weights(z: f64, x: &[f64], m: usize) -> Vec<f64> {
    let n = x.len();
    let mut c = vec![vec![0.0; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[m]).collect()
}

#[derive(Clone, Debug)]
struct Stencil {
    start: isize,
    weights: Vec<f64>,
}

/// Derivative operators of orders `1..=max_order` on a uniform grid.
struct FdOperators {
    n: usize,
    periodic: bool,
    /// `[order - 1][node]`
    stencils: Vec<Vec<Stencil>>,
    /// Spectral radius of the centered stencil per order (index 0 → order 0 = 1).
    radius: Vec<f64>,
}

fn centered_width(m: usize) -> usize {
    // Fourth-order centered stencils: 5 points for orders 1–2, 7 for 3–4.
    if m <= 2 {
        5
    } else {
        7
    }
}

impl FdOperators {
    fn new(n: usize, dx: f64, max_order: usize, periodic: bool) -> Self {
        let mut stencils = Vec::with_capacity(max_order);
        let mut radius = vec![1.0];
        for m in 1..=max_order {
            let scale = dx.powi(m as i32);
            let cw = centered_width(m);
            let half = (cw / 2) as isize;
            let offsets: Vec<f64> = (-half..=half).map(|k| k as f64).collect();
            let centered: Vec<f64> = fornberg_weights(0.0, &offsets, m)
                .into_iter()
                .map(|w| w / scale)
                .collect();
            // |symbol| maximized over the resolved band
            let mut rho: f64 = 0.0;
            for s in 0..=512 {
                let theta = PI * s as f64 / 512.0;
                let (mut re, mut im) = (0.0, 0.0);
                for (k, w) in (-half..=half).zip(&centered) {
                    re += w * (k as f64 * theta).cos();
                    im += w * (k as f64 * theta).sin();
                }
                rho = rho.max((re * re + im * im).sqrt());
            }
            radius.push(rho);

            let mut per_node = Vec::with_capacity(n);
            for i in 0..n {
                let ii = i as isize;
                if periodic || (ii - half >= 0 && ii + half < n as isize) {
                    per_node.push(Stencil {
                        start: ii - half,
                        weights: centered.clone(),
                    });
                } else {
                    let width = (m + 4).min(n);
                    let start = (ii - (width as isize) / 2).clamp(0, (n - width) as isize);
                    let nodes: Vec<f64> = (0..width).map(|k| (start + k as isize - ii) as f64).collect();
                    let weights = fornberg_weights(0.0, &nodes, m)
                        .into_iter()
                        .map(|w| w / scale)
                        .collect();
                    per_node.push(Stencil { start, weights });
                }
            }
            stencils.push(per_node);
        }
        FdOperators {
            n,
            periodic,
            stencils,
            radius,
        }
    }

    fn apply(&self, order: usize, u: &[f64], out: &mut [f64]) {
        let n = self.n as isize;
        for (i, st) in self.stencils[order - 1].iter().enumerate() {
            let mut acc = 0.0;
            if self.periodic {
                for (k, w) in st.weights.iter().enumerate() {
                    let j = (st.start + k as isize).rem_euclid(n) as usize;
                    acc += w * u[j];
                }
            } else {
                let s = st.start as usize;
                for (k, w) in st.weights.iter().enumerate() {
                    acc += w * u[s + k];
                }
            }
            out[i] = acc;
        }
    }
}

/// Right-hand side of `u_t = Σ c_j term_j(u)` restricted to active terms.
struct Rhs<'a> {
    terms: Vec<(crate::candidates::Candidate, f64)>,
    max_order: usize,
    ops: &'a FdOperators,
    boundary: Boundary,
    /// One-sided first-derivative weights at the left/right boundary nodes (Neumann).
    neumann_left: Vec<f64>,
    neumann_right: Vec<f64>,
    derivs: Vec<Vec<f64>>,
}

impl<'a> Rhs<'a> {
    fn new(
        candidates: &CandidateSet,
        coefficients: &[f64],
        ops: &'a FdOperators,
        boundary: Boundary,
        dx: f64,
    ) -> Self {
        let terms: Vec<_> = candidates
            .iter()
            .zip(coefficients)
            .filter(|(_, c)| **c != 0.0)
            .map(|(cand, c)| (*cand, *c))
            .collect();
        let max_order = terms.iter().map(|(c, _)| c.max_order()).max().unwrap_or(0);
        let nodes: Vec<f64> = (0..5).map(|k| k as f64).collect();
        let neumann_left: Vec<f64> = fornberg_weights(0.0, &nodes, 1).iter().map(|w| w / dx).collect();
        let nodes_r: Vec<f64> = (0..5).map(|k| -(4 - k) as f64).collect();
        let neumann_right: Vec<f64> = fornberg_weights(0.0, &nodes_r, 1).iter().map(|w| w / dx).collect();
        Rhs {
            terms,
            max_order,
            ops,
            boundary,
            neumann_left,
            neumann_right,
            derivs: vec![vec![0.0; ops.n]; max_order + 1],
        }
    }

    fn impose_boundary(&self, u: &mut [f64]) {
        let n = u.len();
        match self.boundary {
            Boundary::Periodic => {}
            Boundary::Dirichlet { left, right } => {
                u[0] = left;
                u[n - 1] = right;
            }
            Boundary::Neumann { left, right } => {
                let wl = &self.neumann_left;
                let s: f64 = (1..5).map(|k| wl[k] * u[k]).sum();
                u[0] = (left - s) / wl[0];
                let wr = &self.neumann_right;
                let s: f64 = (0..4).map(|k| wr[k] * u[n - 5 + k]).sum();
                u[n - 1] = (right - s) / wr[4];
            }
        }
    }

    fn compute_derivs(&mut self, u: &[f64]) {
        self.derivs[0].copy_from_slice(u);
        for m in 1..=self.max_order {
            let (head, tail) = self.derivs.split_at_mut(m);
            self.ops.apply(m, &head[0], &mut tail[0]);
        }
    }

    fn eval(&mut self, u: &[f64], out: &mut [f64]) {
        self.compute_derivs(u);
        let mut d = [0.0; 5];
        for (i, o) in out.iter_mut().enumerate() {
            for (k, dk) in d.iter_mut().enumerate().take(self.max_order + 1) {
                *dk = self.derivs[k][i];
            }
            *o = self.terms.iter().map(|(c, coef)| coef * c.evaluate(&d)).sum();
        }
        if !matches!(self.boundary, Boundary::Periodic) {
            out[0] = 0.0;
            let n = out.len();
            out[n - 1] = 0.0;
        }
    }

    /// Sum of linearized term rates; RK4 is stable for `dt · rate ≲ 2.8`.
    fn rate(&mut self, u: &[f64]) -> f64 {
        self.compute_derivs(u);
        let maxabs: Vec<f64> = self
            .derivs
            .iter()
            .map(|d| d.iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .collect();
        let rho = &self.ops.radius;
        self.terms
            .iter()
            .map(|(c, coef)| {
                let (a, b) = c.factors();
                let r = match b {
                    None => rho[a],
                    Some(b) => maxabs[b] * rho[a] + maxabs[a] * rho[b],
                };
                coef.abs() * r
            })
            .sum()
    }
}

fn uniform_grid(a: f64, b: f64, n: usize, include_end: bool) -> Vec<f64> {
    let denom = if include_end { (n - 1) as f64 } else { n as f64 };
    (0..n).map(|i| a + (b - a) * i as f64 / denom).collect()
}

fn is_blown_up(u: &[f64], bound: f64) -> bool {
    u.iter().any(|v| !v.is_finite() || v.abs() > bound)
}

/// Solve `u_t = Σ_j coefficients[j] · candidates[j]` on `shape` with the given grid.
pub fn solve(
    coefficients: &[f64],
    candidates: &CandidateSet,
    shape: &ProblemShape,
    grid: &GridSpec,
) -> Result<GridSolution> {
    if coefficients.len() != candidates.len() {
        return Err(Error::Dimension(format!(
            "{} coefficients for {} candidates",
            coefficients.len(),
            candidates.len()
        )));
    }
    if coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::Domain("non-finite PDE coefficient".into()));
    }
    if grid.nx < MIN_NODES {
        return Err(Error::Domain(format!(
            "{} spatial nodes is too coarse; need at least {MIN_NODES}",
            grid.nx
        )));
    }
    if grid.nt < 2 {
        return Err(Error::Domain("need at least two output times".into()));
    }
    if !(grid.safety > 0.0) {
        return Err(Error::Config("solver safety factor must be positive".into()));
    }
    shape.domain.validate()?;
    let periodic = matches!(shape.boundary, Boundary::Periodic);
    let dom = shape.domain;
    let x = uniform_grid(dom.x_min, dom.x_max, grid.nx, !periodic);
    let t = uniform_grid(dom.t_min, dom.t_max, grid.nt, true);
    match grid.scheme {
        Scheme::FiniteDifference => solve_fd(coefficients, candidates, shape, grid, x, t),
        Scheme::IntegratingFactor => {
            if !periodic {
                return Err(Error::Config(
                    "the integrating-factor scheme needs periodic boundaries".into(),
                ));
            }
            solve_spectral(coefficients, candidates, shape, grid, x, t)
        }
    }
}

fn finish(
    t: Vec<f64>,
    x: Vec<f64>,
    values: Array2<f64>,
    shape: &ProblemShape,
    info: SolverInfo,
) -> GridSolution {
    let periodic = matches!(shape.boundary, Boundary::Periodic);
    GridSolution {
        t,
        x,
        values,
        periodic,
        period: shape.domain.x_span(),
        unstable: info.unstable_at.is_some(),
        provenance: info,
    }
}

fn solve_fd(
    coefficients: &[f64],
    candidates: &CandidateSet,
    shape: &ProblemShape,
    grid: &GridSpec,
    x: Vec<f64>,
    t: Vec<f64>,
) -> Result<GridSolution> {
    let n = grid.nx;
    let periodic = matches!(shape.boundary, Boundary::Periodic);
    let dx = x[1] - x[0];
    let needed = candidates
        .iter()
        .zip(coefficients)
        .filter(|(_, c)| **c != 0.0)
        .map(|(c, _)| c.max_order())
        .max()
        .unwrap_or(0)
        .max(1);
    let ops = FdOperators::new(n, dx, needed, periodic);
    let mut rhs = Rhs::new(candidates, coefficients, &ops, shape.boundary, dx);

    let mut u: Vec<f64> = x.iter().map(|&xi| shape.initial_condition.eval(xi)).collect();
    rhs.impose_boundary(&mut u);
    let bound = BLOWUP_FACTOR * (1.0 + u.iter().fold(0.0f64, |m, v| m.max(v.abs())));

    let mut values = Array2::from_elem((grid.nt, n), f64::NAN);
    values.row_mut(0).assign(&Array1::from(u.clone()));
    let mut info = SolverInfo {
        scheme: Scheme::FiniteDifference,
        nx: grid.nx,
        nt: grid.nt,
        substeps: 0,
        unstable_at: None,
    };
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut stage = vec![0.0; n];

    for it in 1..grid.nt {
        let interval = t[it] - t[it - 1];
        let rate = rhs.rate(&u);
        let substeps = if rate > 0.0 {
            (interval * rate / (2.5 * grid.safety)).ceil().max(1.0)
        } else {
            1.0
        };
        if !substeps.is_finite() || info.substeps as f64 + substeps > grid.max_substeps as f64 {
            info.unstable_at = Some(it);
            break;
        }
        let substeps = substeps as usize;
        let h = interval / substeps as f64;
        for _ in 0..substeps {
            rhs.eval(&u, &mut k1);
            for i in 0..n {
                stage[i] = u[i] + 0.5 * h * k1[i];
            }
            rhs.impose_boundary(&mut stage);
            rhs.eval(&stage, &mut k2);
            for i in 0..n {
                stage[i] = u[i] + 0.5 * h * k2[i];
            }
            rhs.impose_boundary(&mut stage);
            rhs.eval(&stage, &mut k3);
            for i in 0..n {
                stage[i] = u[i] + h * k3[i];
            }
            rhs.impose_boundary(&mut stage);
            rhs.eval(&stage, &mut k4);
            for i in 0..n {
                u[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            rhs.impose_boundary(&mut u);
        }
        info.substeps += substeps;
        if is_blown_up(&u, bound) {
            info.unstable_at = Some(it);
            break;
        }
        values.row_mut(it).assign(&Array1::from(u.clone()));
    }
    Ok(finish(t, x, values, shape, info))
}

/// Pseudo-spectral evaluation of the nonlinear terms on a periodic grid.
struct Spectral {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// `i k` per mode (zero at the Nyquist mode).
    ik: Vec<Complex64>,
    dealias: Vec<f64>,
    k_max: f64,
}

impl Spectral {
    fn new(n: usize, period: f64) -> Self {
        let mut planner = FftPlanner::new();
        let k0 = 2.0 * PI / period;
        let mut ik = Vec::with_capacity(n);
        let mut dealias = Vec::with_capacity(n);
        for j in 0..n {
            let m = if j <= n / 2 { j as isize } else { j as isize - n as isize };
            let kk = if n % 2 == 0 && j == n / 2 { 0.0 } else { k0 * m as f64 };
            ik.push(Complex64::new(0.0, kk));
            dealias.push(if (m.unsigned_abs() as f64) < n as f64 / 3.0 { 1.0 } else { 0.0 });
        }
        Spectral {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            ik,
            dealias,
            k_max: k0 * (n / 2) as f64,
        }
    }

    fn to_physical(&self, hat: &[Complex64]) -> Vec<f64> {
        let mut buf = hat.to_vec();
        self.inv.process(&mut buf);
        let s = 1.0 / self.n as f64;
        buf.iter().map(|c| c.re * s).collect()
    }

    fn to_spectral(&self, u: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = u.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fwd.process(&mut buf);
        buf
    }

    fn derivative(&self, hat: &[Complex64], order: usize) -> Vec<f64> {
        if order == 0 {
            return self.to_physical(hat);
        }
        let d: Vec<Complex64> = hat
            .iter()
            .zip(&self.ik)
            .map(|(h, k)| h * k.powu(order as u32))
            .collect();
        self.to_physical(&d)
    }
}

fn solve_spectral(
    coefficients: &[f64],
    candidates: &CandidateSet,
    shape: &ProblemShape,
    grid: &GridSpec,
    x: Vec<f64>,
    t: Vec<f64>,
) -> Result<GridSolution> {
    let n = grid.nx;
    let sp = Spectral::new(n, shape.domain.x_span());
    let mut linear = vec![Complex64::new(0.0, 0.0); n];
    let mut nonlinear = Vec::new();
    for (cand, &c) in candidates.iter().zip(coefficients) {
        if c == 0.0 {
            continue;
        }
        let (a, b) = cand.factors();
        match b {
            None => {
                for (l, k) in linear.iter_mut().zip(&sp.ik) {
                    *l += c * k.powu(a as u32);
                }
            }
            Some(b) => nonlinear.push((a, b, c)),
        }
    }
    let orders: Vec<usize> = {
        let mut o: Vec<usize> = nonlinear.iter().flat_map(|&(a, b, _)| [a, b]).collect();
        o.sort_unstable();
        o.dedup();
        o
    };
    let nl = |hat: &[Complex64]| -> (Vec<Complex64>, f64) {
        let mut derivs = vec![Vec::new(); 5];
        for &o in &orders {
            derivs[o] = sp.derivative(hat, o);
        }
        let mut out = vec![0.0; n];
        let mut rate = 0.0;
        for &(a, b, c) in &nonlinear {
            for i in 0..n {
                out[i] += c * derivs[a][i] * derivs[b][i];
            }
            let ma = derivs[a].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let mb = derivs[b].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            rate += c.abs() * (mb * sp.k_max.powi(a as i32) + ma * sp.k_max.powi(b as i32));
        }
        let mut hat_out = sp.to_spectral(&out);
        for (h, m) in hat_out.iter_mut().zip(&sp.dealias) {
            *h *= m;
        }
        (hat_out, rate)
    };

    let u0: Vec<f64> = x.iter().map(|&xi| shape.initial_condition.eval(xi)).collect();
    let bound = BLOWUP_FACTOR * (1.0 + u0.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let mut v = sp.to_spectral(&u0);
    let mut values = Array2::from_elem((grid.nt, n), f64::NAN);
    values.row_mut(0).assign(&Array1::from(u0));
    let mut info = SolverInfo {
        scheme: Scheme::IntegratingFactor,
        nx: n,
        nt: grid.nt,
        substeps: 0,
        unstable_at: None,
    };

    for it in 1..grid.nt {
        let interval = t[it] - t[it - 1];
        let (_, rate) = nl(&v);
        // Growth of unstable linear modes must also be resolved.
        let growth = linear.iter().fold(0.0f64, |m, l| m.max(l.re));
        let rate = rate + growth;
        let substeps = if rate > 0.0 {
            (interval * rate / (2.5 * grid.safety)).ceil().max(1.0)
        } else {
            1.0
        };
        if !substeps.is_finite() || info.substeps as f64 + substeps > grid.max_substeps as f64 {
            info.unstable_at = Some(it);
            break;
        }
        let substeps = substeps as usize;
        let h = interval / substeps as f64;
        let e: Vec<Complex64> = linear.iter().map(|l| (l * (0.5 * h)).exp()).collect();
        let e2: Vec<Complex64> = e.iter().map(|z| z * z).collect();
        for _ in 0..substeps {
            let (a, _) = nl(&v);
            let a: Vec<Complex64> = a.iter().map(|z| z * h).collect();
            let arg: Vec<Complex64> = (0..n).map(|i| e[i] * (v[i] + 0.5 * a[i])).collect();
            let (b, _) = nl(&arg);
            let b: Vec<Complex64> = b.iter().map(|z| z * h).collect();
            let arg: Vec<Complex64> = (0..n).map(|i| e[i] * v[i] + 0.5 * b[i]).collect();
            let (c, _) = nl(&arg);
            let c: Vec<Complex64> = c.iter().map(|z| z * h).collect();
            let arg: Vec<Complex64> = (0..n).map(|i| e2[i] * v[i] + e[i] * c[i]).collect();
            let (d, _) = nl(&arg);
            for i in 0..n {
                let di = d[i] * h;
                v[i] = e2[i] * v[i] + (e2[i] * a[i] + 2.0 * e[i] * (b[i] + c[i]) + di) / 6.0;
            }
        }
        info.substeps += substeps;
        let u = sp.to_physical(&v);
        if is_blown_up(&u, bound) {
            info.unstable_at = Some(it);
            break;
        }
        values.row_mut(it).assign(&Array1::from(u));
    }
    Ok(finish(t, x, values, shape, info))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NoiseSpec {
    None,
    Gaussian { sigma: f64 },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseSpec::Gaussian { sigma } if !(*sigma > 0.0 && sigma.is_finite()) => Err(
                Error::Config(format!("noise std must be positive, got {sigma}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn sigma(&self) -> f64 {
        match self {
            NoiseSpec::None => 0.0,
            NoiseSpec::Gaussian { sigma } => *sigma,
        }
    }

    pub fn label(&self) -> String {
        match self {
            NoiseSpec::None => "noiseless".into(),
            NoiseSpec::Gaussian { sigma } => format!("gaussian({sigma})"),
        }
    }
}

/// Sensor dataset plus where the sensors sit.
#[derive(Clone, Debug)]
pub struct SensorData {
    pub dataset: MeasurementDataset,
    pub sensor_x: Vec<f64>,
    pub times: Vec<f64>,
}

/// Number of sampling instants `t_min + kΔt` with `k = 0 .. ⌊span/Δt⌋ - 1`.
pub fn sample_times(domain: &Domain, dt: f64) -> Vec<f64> {
    let count = (domain.t_span() / dt + 1e-9).floor() as usize;
    (0..count).map(|k| domain.t_min + k as f64 * dt).collect()
}

/// Record the solution with `n_sensors` fixed random sensors every `dt`.
pub fn sense(
    sol: &GridSolution,
    domain: &Domain,
    n_sensors: usize,
    dt: f64,
    noise: NoiseSpec,
    seed: u64,
) -> Result<SensorData> {
    if n_sensors == 0 {
        return Err(Error::Domain("need at least one sensor".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("sampling interval must be positive, got {dt}")));
    }
    noise.validate()?;
    if sol.unstable {
        return Err(Error::Numerical("cannot sample an unstable solution".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sensor_x: Vec<f64> = (0..n_sensors)
        .map(|_| rng.random_range(domain.x_min..domain.x_max))
        .collect();
    let times = sample_times(domain, dt);
    let normal = match noise {
        NoiseSpec::Gaussian { sigma } => Some(Normal::new(0.0, sigma).expect("validated")),
        NoiseSpec::None => None,
    };
    let mut points = Vec::with_capacity(times.len() * n_sensors);
    let mut targets = Vec::with_capacity(times.len() * n_sensors);
    for &t in &times {
        for &x in &sensor_x {
            let mut y = sol.interpolate(t, x);
            if let Some(nd) = &normal {
                y += nd.sample(&mut rng);
            }
            points.push((t, x));
            targets.push(y);
        }
    }
    Ok(SensorData {
        dataset: MeasurementDataset::from_points(&points, targets, *domain)?,
        sensor_x,
        times,
    })
}

/// `‖discovered - truth‖₂`.
pub fn coeff_error(discovered: &[f64], truth: &[f64]) -> Result<f64> {
    if discovered.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} discovered coefficients vs {} true",
            discovered.len(),
            truth.len()
        )));
    }
    Ok(discovered
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsError {
    /// ℓ² distance, or [`UNSTABLE_MARKER`] when `unstable`.
    pub value: f64,
    pub unstable: bool,
}

/// `e_L` of a discovered coefficient vector against an existing ground-truth grid.
pub fn dynamics_error_against(
    truth: &GridSolution,
    discovered: &[f64],
    problem: &PdeProblem,
    grid: &GridSpec,
) -> Result<DynamicsError> {
    let sol = solve(discovered, &problem.candidates, &problem.shape, grid)?;
    if sol.unstable {
        return Ok(DynamicsError {
            value: UNSTABLE_MARKER,
            unstable: true,
        });
    }
    Ok(DynamicsError {
        value: truth.l2_distance(&sol)?,
        unstable: false,
    })
}

/// `e_L`: solve both the true and the discovered PDE on `grid` and compare.
pub fn dynamics_error(
    discovered: &[f64],
    problem: &PdeProblem,
    grid: &GridSpec,
) -> Result<DynamicsError> {
    let truth = solve(&problem.true_coefficients, &problem.candidates, &problem.shape, grid)?;
    if truth.unstable {
        return Err(Error::Numerical(format!(
            "ground truth for '{}' is unstable on this grid",
            problem.name
        )));
    }
    dynamics_error_against(&truth, discovered, problem, grid)
}

/// RMSE of a predictive mean against interpolated truth at `points`.
pub fn rmse_at(predicted: &Array1<f64>, sol: &GridSolution, points: ArrayView2<'_, f64>) -> f64 {
    let sq: f64 = points
        .outer_iter()
        .zip(predicted.iter())
        .map(|(p, y)| {
            let r = y - sol.interpolate(p[0], p[1]);
            r * r
        })
        .sum();
    (sq / points.nrows().max(1) as f64).sqrt()
}

/// RMSE of the predictive mean of `samples` (one sample for a point estimate)
/// against the solution at `n_test` uniform random points.
pub fn rmse_test(
    samples: &[WeightVector],
    scaling: &Scaling,
    sol: &GridSolution,
    domain: &Domain,
    n_test: usize,
    seed: u64,
) -> Result<f64> {
    let pts = sample_uniform(domain, n_test, seed);
    let (mean, _) = net::predict_stats(samples, scaling, pts.view())?;
    Ok(rmse_at(&mean, sol, pts.view()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fornberg_central_second_derivative() {
        let w = fornberg_weights(0.0, &[-2.0, -1.0, 0.0, 1.0, 2.0], 2);
        let expected = [-1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0];
        for (a, b) in w.iter().zip(expected) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn stencils_are_exact_on_quartics() {
        // Fourth-order stencils differentiate polynomials of degree ≤ 4 exactly
        // (up to rounding), including shifted boundary windows.
        let n = 21;
        let dx = 0.1;
        let xs: Vec<f64> = (0..n).map(|i| i as f64 * dx).collect();
        let u: Vec<f64> = xs.iter().map(|x| x.powi(4) - 2.0 * x.powi(3) + x).collect();
        let exact = |m: usize, x: f64| match m {
            1 => 4.0 * x.powi(3) - 6.0 * x * x + 1.0,
            2 => 12.0 * x * x - 12.0 * x,
            3 => 24.0 * x - 12.0,
            4 => 24.0,
            _ => unreachable!(),
        };
        let ops = FdOperators::new(n, dx, 4, false);
        let mut out = vec![0.0; n];
        for m in 1..=4 {
            ops.apply(m, &u, &mut out);
            for i in 0..n {
                assert!((out[i] - exact(m, xs[i])).abs() < 1e-6, "order {m} node {i}");
            }
        }
    }

    #[test]
    fn presets_carry_true_coefficients() {
        let b = preset(Preset::Burgers);
        let set = &b.candidates;
        assert_eq!(b.true_coefficients[set.index_of("u_xx").unwrap()], 0.1);
        assert_eq!(b.true_coefficients[set.index_of("u*u_x").unwrap()], -1.0);
        assert_eq!(b.true_coefficients.iter().filter(|c| **c != 0.0).count(), 2);
        let h = preset(Preset::Heat);
        assert_eq!(h.true_coefficients[set.index_of("u_xx").unwrap()], 2.0);
        assert_eq!(h.true_coefficients.iter().filter(|c| **c != 0.0).count(), 1);
        let k = preset(Preset::Kdv);
        assert_eq!(k.true_coefficients[set.index_of("u_xxx").unwrap()], -1.0);
        assert_eq!(k.true_coefficients[set.index_of("u*u_x").unwrap()], -1.0);
        assert!(preset_by_name("navier-stokes").is_err());
        for p in [b, h, k] {
            p.validate().unwrap();
        }
    }

    #[test]
    fn coarse_grid_rejected() {
        let p = preset(Preset::Heat);
        let grid = GridSpec::new(6, 10, Scheme::FiniteDifference);
        assert!(matches!(
            solve(&p.true_coefficients, &p.candidates, &p.shape, &grid),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn zero_initial_condition_stays_zero() {
        let p = preset(Preset::Burgers);
        let shape = ProblemShape {
            initial_condition: InitialCondition::zero(),
            ..p.shape
        };
        let grid = GridSpec::new(101, 21, Scheme::FiniteDifference);
        let coeffs = p.candidates.coefficients(&[("u_xx", 0.3), ("u*u_x", -1.0), ("u_x^2", 0.5)]).unwrap();
        let sol = solve(&coeffs, &p.candidates, &shape, &grid).unwrap();
        assert!(sol.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn coeff_error_examples() {
        assert_eq!(coeff_error(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_relative_eq!(coeff_error(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2f64.sqrt());
        assert!(coeff_error(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn sample_counts() {
        for p in [preset(Preset::Burgers), preset(Preset::Kdv), preset(Preset::Heat)] {
            assert_eq!(sample_times(&p.shape.domain, p.sensor_dt).len() * 16, 800);
        }
    }

    #[test]
    fn anti_diffusion_is_flagged_unstable() {
        let p = preset(Preset::Heat);
        let coeffs = p.candidates.coefficients(&[("u_xx", -2.0)]).unwrap();
        let grid = GridSpec::new(101, 51, Scheme::FiniteDifference);
        let sol = solve(&coeffs, &p.candidates, &p.shape, &grid).unwrap();
        assert!(sol.unstable);
        let err = dynamics_error(&coeffs, &p, &grid).unwrap();
        assert!(err.unstable);
        assert_eq!(err.value, UNSTABLE_MARKER);
    }

    #[test]
    fn integrating_factor_requires_periodic() {
        let p = preset(Preset::Heat);
        let grid = GridSpec::new(64, 5, Scheme::IntegratingFactor);
        assert!(solve(&p.true_coefficients, &p.candidates, &p.shape, &grid).is_err());
    }

    #[test]
    fn periodic_interpolation_wraps() {
        let p = preset(Preset::Kdv);
        let grid = GridSpec::new(64, 3, Scheme::IntegratingFactor);
        let zero = vec![0.0; p.candidates.len()];
        let sol = solve(&zero, &p.candidates, &p.shape, &grid).unwrap();
        // u stays at the IC; the right edge equals the left edge by periodicity.
        let a = sol.interpolate(0.0, 20.0);
        let b = sol.interpolate(0.0, -20.0);
        assert_relative_eq!(a, b, epsilon = 1e-12);
        assert_relative_eq!(sol.interpolate(0.0, 19.9), (PI * 19.9 / 20.0).cos(), epsilon = 2e-3);
    }
}
