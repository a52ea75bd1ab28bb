//! Finite-volume solvers for the hydrodynamic equation
//! `∂_t ρ + ∇·[σ(ρ)E - D(ρ)∇ρ] = 0`, its time-reversed adjoint, and the
//! stationary profile of a gradient field.

use serde::Serialize;

use crate::coarse::{DensityField, Path};
use crate::error::{Error, Result};
use crate::field::{FieldSpec, FourierSeries, TimeField};
use crate::gibbs::FreeEnergy;
use crate::transport::Coefficients;

/// Safety factor of the explicit time step.
pub const C_SAFE: f64 = 0.4;
/// Cell Péclet number above which the advective flux is limited.
pub const PECLET_LIMIT: f64 = 2.0;
/// Tolerance on leaving `[0, 1]` before a solve is aborted.
pub const RANGE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum TimeStep {
    /// The largest stable step scaled by [`C_SAFE`].
    Auto,
    /// A fixed step, rejected if it exceeds the stability limit.
    Fixed(f64),
}

/// Initial-value problem for the hydrodynamic equation on the unit torus.
#[derive(Debug, Clone)]
pub struct PdeProblem {
    pub coefficients: Coefficients,
    pub field: FieldSpec,
    pub initial: DensityField,
    /// Output times, starting at 0.
    pub output_times: Vec<f64>,
    pub time_step: TimeStep,
}

/// `count + 1` equally spaced times on `[0, horizon]`.
pub fn uniform_times(horizon: f64, count: usize) -> Vec<f64> {
    (0..=count).map(|k| horizon * k as f64 / count as f64).collect()
}

impl PdeProblem {
    pub fn new(coefficients: Coefficients, field: FieldSpec, initial: DensityField, horizon: f64, outputs: usize) -> Self {
        PdeProblem {
            coefficients,
            field,
            initial,
            output_times: uniform_times(horizon, outputs.max(1)),
            time_step: TimeStep::Auto,
        }
    }

    pub fn with_time_step(mut self, step: TimeStep) -> Self {
        self.time_step = step;
        self
    }
}

/// Run metadata of a solve.
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub dim: usize,
    pub side: usize,
    pub dt: f64,
    /// Stability limit the step was checked against.
    pub dt_limit: f64,
    pub steps: u64,
    pub mass_drift: f64,
    pub limiter_activations: u64,
    pub min: f64,
    pub max: f64,
    /// `∫ dt ⟨∇ρ, ∇ρ⟩` accumulated over the steps.
    pub dirichlet_energy: f64,
}

impl SolveReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub path: Path,
    pub report: SolveReport,
}

/// Face fluxes of the scheme on a fixed grid.
///
/// Faces are indexed by the cell on their low side: face `(axis, i)` separates
/// cell `i` from its `+e_axis` neighbour.
pub(crate) struct FluxOperator<'a> {
    coefficients: &'a Coefficients,
    dim: usize,
    dx: f64,
    /// Static face field per axis.
    face_field: Vec<Vec<f64>>,
    /// `(minus, plus)` neighbour per axis.
    neighbors: Vec<Vec<(usize, usize)>>,
    centers: Vec<Vec<f64>>,
}

impl<'a> FluxOperator<'a> {
    pub(crate) fn new(coefficients: &'a Coefficients, field: &FieldSpec, dim: usize, side: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::Unsupported(format!("PDE solver in dimension {dim}")));
        }
        if field.dim != dim {
            return Err(Error::Mismatch(format!(
                "field of dimension {} on a grid of dimension {dim}",
                field.dim
            )));
        }
        if side < 3 {
            return Err(Error::InvalidArgument(format!("grid side {side} < 3")));
        }
        let probe = DensityField::constant(dim, side, 0.0)?;
        let cells = probe.len();
        let face_field = (0..dim)
            .map(|a| (0..cells).map(|i| field.face_value(side, &probe.coords(i), a)).collect())
            .collect();
        let neighbors = (0..dim)
            .map(|a| (0..cells).map(|i| (probe.neighbor(i, a, -1), probe.neighbor(i, a, 1))).collect())
            .collect();
        let centers = (0..cells).map(|i| probe.center(i)).collect();
        Ok(FluxOperator {
            coefficients,
            dim,
            dx: probe.spacing(),
            face_field,
            neighbors,
            centers,
        })
    }

    pub(crate) fn cells(&self) -> usize {
        self.centers.len()
    }

    pub(crate) fn dim(&self) -> usize {
        self.dim
    }

    pub(crate) fn dx(&self) -> f64 {
        self.dx
    }

    pub(crate) fn plus(&self, axis: usize, i: usize) -> usize {
        self.neighbors[axis][i].1
    }

    pub(crate) fn minus(&self, axis: usize, i: usize) -> usize {
        self.neighbors[axis][i].0
    }

    pub(crate) fn face_density(&self, rho: &[f64], axis: usize, i: usize) -> f64 {
        0.5 * (rho[i] + rho[self.plus(axis, i)])
    }

    /// Largest static face field magnitude.
    fn max_field(&self) -> f64 {
        self.face_field
            .iter()
            .flat_map(|f| f.iter().map(|v| v.abs()))
            .fold(0.0, f64::max)
    }

    /// Potential values at cell centres.
    pub(crate) fn sample_potential(&self, h: &dyn TimeField, t: f64, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.centers) {
            *o = h.value(t, c);
        }
    }

    /// Fluxes for every face; `potential` adds `∇H` from centre values.
    /// Returns the number of faces where the advective part was limited.
    pub(crate) fn fluxes(&self, rho: &[f64], potential: Option<&[f64]>, out: &mut [Vec<f64>]) -> u64 {
        let mut limited = 0;
        let c = self.coefficients;
        for axis in 0..self.dim {
            for i in 0..self.cells() {
                let j = self.plus(axis, i);
                let (rl, rr) = (rho[i], rho[j]);
                let rf = 0.5 * (rl + rr);
                let mut g = self.face_field[axis][i];
                if let Some(h) = potential {
                    g += (h[j] - h[i]) / self.dx;
                }
                let dcoef = c.diffusion(rf);
                let diffusive = dcoef * (rr - rl) / self.dx;
                let slope = [rl, rr, rf]
                    .iter()
                    .map(|&r| c.sigma_slope(r).abs())
                    .fold(0.0, f64::max);
                let peclet = slope * g.abs() * self.dx / dcoef;
                let advective = if peclet <= PECLET_LIMIT {
                    c.sigma(rf) * g
                } else {
                    limited += 1;
                    let im = self.minus(axis, i);
                    let jp = self.plus(axis, j);
                    let si = minmod(rl - rho[im], rr - rl);
                    let sj = minmod(rr - rl, rho[jp] - rr);
                    let left = rl + 0.5 * si;
                    let right = rr - 0.5 * sj;
                    let speed = [left, right]
                        .iter()
                        .map(|&r| c.sigma_slope(r).abs())
                        .fold(slope, f64::max)
                        * g.abs();
                    0.5 * (c.sigma(left) + c.sigma(right)) * g - 0.5 * speed * (right - left)
                };
                out[axis][i] = advective - diffusive;
            }
        }
        limited
    }

    /// Discrete divergence of face fluxes.
    pub(crate) fn divergence(&self, fluxes: &[Vec<f64>], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (axis, f) in fluxes.iter().enumerate() {
                acc += f[i] - f[self.minus(axis, i)];
            }
            *o = acc / self.dx;
        }
    }

    /// `Σ_faces dx^d w_face ((g_j - g_i)/dx)²` with `w` the mobility at the face density.
    pub(crate) fn weighted_dirichlet(&self, rho: Option<&[f64]>, g: &[f64]) -> f64 {
        let vol = self.dx.powi(self.dim as i32);
        let mut acc = 0.0;
        for axis in 0..self.dim {
            for i in 0..self.cells() {
                let j = self.plus(axis, i);
                let grad = (g[j] - g[i]) / self.dx;
                let w = match rho {
                    Some(r) => self.coefficients.sigma(self.face_density(r, axis, i)),
                    None => 1.0,
                };
                acc += w * grad * grad;
            }
        }
        acc * vol
    }
}

fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

fn stability_limit(op: &FluxOperator, h: Option<&dyn TimeField>) -> f64 {
    let c = op.coefficients;
    let samples = 401;
    let mut max_d: f64 = 0.0;
    let mut max_slope: f64 = 0.0;
    for k in 0..samples {
        let r = k as f64 / (samples - 1) as f64;
        max_d = max_d.max(c.diffusion(r));
        max_slope = max_slope.max(c.sigma_slope(r).abs());
    }
    let d = op.dim as f64;
    let g = op.max_field() + h.map_or(0.0, |h| h.lipschitz_bound());
    // diffusive and (limited) advective updates as a convex combination
    let rate = 2.0 * d * max_d / (op.dx * op.dx) + 2.0 * d * g * max_slope / op.dx;
    1.0 / rate.max(1e-300)
}

fn check_range(rho: &[f64], t: f64) -> Result<()> {
    for (cell, &v) in rho.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Numerical(format!("non-finite density in cell {cell} at t={t}")));
        }
        if !(-RANGE_TOLERANCE..=1.0 + RANGE_TOLERANCE).contains(&v) {
            return Err(Error::OutOfRange { value: v, cell, t });
        }
    }
    Ok(())
}

/// Solves the hydrodynamic equation with the explicit conservative scheme,
/// optionally adding the gradient field `∇H(t, ·)`.
pub fn solve_hydro(problem: &PdeProblem, perturbation: Option<&dyn TimeField>) -> Result<Solution> {
    let init = &problem.initial;
    let (dim, side) = (init.dim(), init.side());
    let op = FluxOperator::new(&problem.coefficients, &problem.field, dim, side)?;
    let times = &problem.output_times;
    if times.is_empty() || times[0] != 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "output times must start at 0 and increase".into(),
        ));
    }
    check_range(init.values(), 0.0)?;
    let limit = stability_limit(&op, perturbation);
    let dt_max = match problem.time_step {
        TimeStep::Auto => C_SAFE * limit,
        TimeStep::Fixed(dt) => {
            if !(dt > 0.0) || dt > limit {
                return Err(Error::Cfl { dt, limit });
            }
            dt
        }
    };

    let cells = op.cells();
    let mut rho = init.values().to_vec();
    let mut flux = vec![vec![0.0; cells]; dim];
    let mut div = vec![0.0; cells];
    let mut h = vec![0.0; cells];
    let mut slices = vec![init.clone()];
    let mass0 = init.mass();
    let mut report = SolveReport {
        dim,
        side,
        dt: dt_max,
        dt_limit: limit,
        steps: 0,
        mass_drift: 0.0,
        limiter_activations: 0,
        min: init.min(),
        max: init.max(),
        dirichlet_energy: 0.0,
    };
    let mut t = 0.0;
    let mut smallest_dt = dt_max;
    for w in times.windows(2) {
        let span = w[1] - w[0];
        let steps = (span / dt_max).ceil().max(1.0) as u64;
        let dt = span / steps as f64;
        smallest_dt = smallest_dt.min(dt);
        for s in 0..steps {
            let tn = w[0] + s as f64 * dt;
            let pot = match perturbation {
                Some(field) => {
                    op.sample_potential(field, tn, &mut h);
                    Some(h.as_slice())
                }
                None => None,
            };
            report.limiter_activations += op.fluxes(&rho, pot, &mut flux);
            op.divergence(&flux, &mut div);
            report.dirichlet_energy += dt * op.weighted_dirichlet(None, &rho);
            for (r, d) in rho.iter_mut().zip(&div) {
                *r -= dt * d;
            }
            t = tn + dt;
            check_range(&rho, t)?;
            report.steps += 1;
        }
        let slice = DensityField::new(dim, side, rho.clone())?;
        report.mass_drift = report.mass_drift.max((slice.mass() - mass0).abs());
        report.min = report.min.min(slice.min());
        report.max = report.max.max(slice.max());
        slices.push(slice);
    }
    let _ = t;
    report.dt = smallest_dt;
    Ok(Solution {
        path: Path::new(times.clone(), slices)?,
        report,
    })
}

/// Solves the adjoint equation, driven by `-∇U - Ẽ`, from `initial` over
/// `[0, horizon]`.
pub fn solve_adjoint(
    initial: &DensityField,
    coefficients: &Coefficients,
    field: &FieldSpec,
    horizon: f64,
    outputs: usize,
) -> Result<Solution> {
    let problem = PdeProblem::new(coefficients.clone(), field.adjoint(), initial.clone(), horizon, outputs);
    solve_hydro(&problem, None)
}

/// The stationary profile `γ(r) = (f')^{-1}(α - U(r))` with `α` fixed by the
/// mass `ρ̄`, sampled at cell centres.
pub fn stationary_profile(
    rho_bar: f64,
    potential: &FourierSeries,
    thermo: &dyn FreeEnergy,
    dim: usize,
    side: usize,
) -> Result<DensityField> {
    if !(0.0..=1.0).contains(&rho_bar) {
        return Err(Error::InvalidArgument(format!("mass {rho_bar} outside [0, 1]")));
    }
    if rho_bar == 0.0 || rho_bar == 1.0 {
        return DensityField::constant(dim, side, rho_bar);
    }
    let u = DensityField::unchecked(dim, side, vec![0.0; side.pow(dim as u32)])?;
    let us: Vec<f64> = (0..u.len()).map(|i| potential.value(&u.center(i))).collect();
    let profile = |alpha: f64| -> Vec<f64> { us.iter().map(|&v| thermo.inverse_fprime(alpha - v)).collect() };
    let mass = |alpha: f64| -> f64 { profile(alpha).iter().sum::<f64>() / us.len() as f64 };
    let umin = us.iter().cloned().fold(f64::INFINITY, f64::min);
    let umax = us.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let base = thermo.fprime(rho_bar);
    let (mut lo, mut hi) = (base + umin - 1.0, base + umax + 1.0);
    if mass(lo) > rho_bar || mass(hi) < rho_bar {
        return Err(Error::Bracketing(format!(
            "stationary mass map does not bracket {rho_bar} on [{lo}, {hi}]"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mass(mid) < rho_bar {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let alpha = 0.5 * (lo + hi);
    let values = profile(alpha);
    let got = values.iter().sum::<f64>() / values.len() as f64;
    if (got - rho_bar).abs() > 1e-10 {
        return Err(Error::Bracketing(format!(
            "stationary profile mass {got} differs from {rho_bar}"
        )));
    }
    DensityField::new(dim, side, values)
}

/// Discrete residual `∂_t π + ∇·[σ(π)E - D(π)∇π]` at an interior output time,
/// with a centred time difference and the solver's face fluxes.
pub fn pde_residual(path: &Path, index: usize, coefficients: &Coefficients, field: &FieldSpec) -> Result<DensityField> {
    if index == 0 || index + 1 >= path.len() {
        return Err(Error::InvalidArgument(format!(
            "residual needs an interior time; got index {index} of {}",
            path.len()
        )));
    }
    let slice = &path.slices[index];
    let op = FluxOperator::new(coefficients, field, slice.dim(), slice.side())?;
    let cells = op.cells();
    let mut flux = vec![vec![0.0; cells]; op.dim()];
    let mut div = vec![0.0; cells];
    op.fluxes(slice.values(), None, &mut flux);
    op.divergence(&flux, &mut div);
    let dt = path.times[index + 1] - path.times[index - 1];
    let (a, b) = (path.slices[index - 1].values(), path.slices[index + 1].values());
    let values: Vec<f64> = (0..cells).map(|i| (b[i] - a[i]) / dt + div[i]).collect();
    DensityField::unchecked(slice.dim(), slice.side(), values)
}

/// Largest fraction of a stability step: `dt / dt_limit`.
pub fn cfl_number(report: &SolveReport) -> f64 {
    report.dt / report.dt_limit
}
