//! Large-deviation functionals of the hydrodynamic limit.
//!
//! The dynamical rate functional of a path `π` is evaluated through its Riesz
//! representative: on each time interval the residual
//! `r = ∂_t π + ∇·[σ(π)E - D(π)∇π]` is inverted through
//! `-2∇·(σ(π)∇Ψ) = r`, and the cost is `∫ dt ⟨∇Ψ, σ(π)∇Ψ⟩`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::coarse::{DensityField, Path};
use crate::error::{Error, Result};
use crate::field::{FieldSpec, FourierSeries, TimeField};
use crate::gibbs::FreeEnergy;
use crate::io::extended_float;
use crate::pde::{solve_adjoint, stationary_profile, FluxOperator};
use crate::transport::Coefficients;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RateOptions {
    /// Largest `L²` distance between the first slice and `γ`.
    pub start_tolerance: f64,
    /// Largest mass change between slices.
    pub mass_tolerance: f64,
    /// Relative residual of the conjugate-gradient solve (two dimensions).
    pub cg_tolerance: f64,
    pub max_cg_iterations: usize,
    /// Face mobility below which a cell counts as degenerate.
    pub degenerate_mobility: f64,
    /// Residual size tolerated on a degenerate slice.
    pub degenerate_residual: f64,
}

impl Default for RateOptions {
    fn default() -> Self {
        RateOptions {
            start_tolerance: 1e-3,
            mass_tolerance: 1e-9,
            cg_tolerance: 1e-10,
            max_cg_iterations: 100_000,
            degenerate_mobility: 1e-12,
            degenerate_residual: 1e-10,
        }
    }
}

/// Diagnostics of one time interval.
#[derive(Debug, Clone, Serialize)]
pub struct SliceDiagnostic {
    /// Interval midpoint.
    pub t: f64,
    pub dt: f64,
    #[serde(serialize_with = "extended_float")]
    pub value: f64,
    /// Mean of the residual before it was projected to zero mean.
    pub residual_mean: f64,
    /// Largest residual of the elliptic equation after the solve.
    pub elliptic_residual: f64,
    pub iterations: usize,
}

/// Value of the rate functional with per-interval diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct RateEval {
    #[serde(serialize_with = "extended_float")]
    pub value: f64,
    pub slices: Vec<SliceDiagnostic>,
    pub mass_conserving: bool,
    pub start_distance: Option<f64>,
    /// Why the value is infinite, when it is.
    pub diagnostic: Option<String>,
    pub dim: usize,
    pub side: usize,
    pub intervals: usize,
}

impl RateEval {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }

    fn infinite(path: &Path, reason: String, mass_conserving: bool, start_distance: Option<f64>) -> Self {
        RateEval {
            value: f64::INFINITY,
            slices: Vec::new(),
            mass_conserving,
            start_distance,
            diagnostic: Some(reason),
            dim: path.first().dim(),
            side: path.first().side(),
            intervals: path.len().saturating_sub(1),
        }
    }
}

struct Interval {
    t: f64,
    dt: f64,
    mid: Vec<f64>,
    residual: Vec<f64>,
    residual_mean: f64,
}

/// Residuals `(π_{n+1} - π_n)/dt + ∇·J(π_{n+½})` on every interval, with the
/// flux evaluated at the midpoint density.
fn interval_residuals(op: &FluxOperator, path: &Path) -> Vec<Interval> {
    (0..path.len().saturating_sub(1))
        .into_par_iter()
        .map(|n| {
            let a = path.slices[n].values();
            let b = path.slices[n + 1].values();
            let dt = path.times[n + 1] - path.times[n];
            let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
            let cells = op.cells();
            let mut flux = vec![vec![0.0; cells]; op.dim()];
            let mut div = vec![0.0; cells];
            op.fluxes(&mid, None, &mut flux);
            op.divergence(&flux, &mut div);
            let mut residual: Vec<f64> = (0..cells).map(|i| (b[i] - a[i]) / dt + div[i]).collect();
            let residual_mean = residual.iter().sum::<f64>() / cells as f64;
            for v in residual.iter_mut() {
                *v -= residual_mean;
            }
            Interval {
                t: 0.5 * (path.times[n] + path.times[n + 1]),
                dt,
                mid,
                residual,
                residual_mean,
            }
        })
        .collect()
}

struct Elliptic {
    /// `Ψ` at cell centres, mean zero.
    psi: Vec<f64>,
    /// `⟨∇Ψ, σ∇Ψ⟩`.
    value: f64,
    residual: f64,
    iterations: usize,
}

enum Outcome {
    Solved(Elliptic),
    Degenerate(String),
}

fn face_mobility(op: &FluxOperator, coefficients: &Coefficients, rho: &[f64]) -> Vec<Vec<f64>> {
    (0..op.dim())
        .map(|a| {
            (0..op.cells())
                .map(|i| coefficients.sigma(op.face_density(rho, a, i)))
                .collect()
        })
        .collect()
}

// -2∇·(σ∇p) with the face stencil
fn apply_operator(op: &FluxOperator, sigma: &[Vec<f64>], p: &[f64], out: &mut [f64]) {
    let h2 = op.dx() * op.dx();
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (a, s) in sigma.iter().enumerate() {
            let j = op.plus(a, i);
            let m = op.minus(a, i);
            acc += s[i] * (p[j] - p[i]) - s[m] * (p[i] - p[m]);
        }
        *o = -2.0 * acc / h2;
    }
}

fn solve_elliptic(
    op: &FluxOperator,
    coefficients: &Coefficients,
    rho: &[f64],
    r: &[f64],
    options: &RateOptions,
) -> Outcome {
    let cells = op.cells();
    let dx = op.dx();
    let sigma = face_mobility(op, coefficients, rho);
    let rmax = r.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let smin = sigma.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
    if smin < options.degenerate_mobility {
        if rmax < options.degenerate_residual {
            return Outcome::Solved(Elliptic {
                psi: vec![0.0; cells],
                value: 0.0,
                residual: rmax,
                iterations: 0,
            });
        }
        return Outcome::Degenerate(format!(
            "mobility {smin:e} vanishes on a face while the residual is {rmax:e}"
        ));
    }
    let mut psi = vec![0.0; cells];
    let mut iterations = 0;
    if op.dim() == 1 {
        let s = &sigma[0];
        // face fluxes F_i = c - (dx/2) Σ_{j≤i} r_j, with c fixed by periodicity of Ψ
        let mut partial = 0.0;
        let mut sums = Vec::with_capacity(cells);
        for v in r {
            partial += v;
            sums.push(partial);
        }
        let inv: f64 = s.iter().map(|v| 1.0 / v).sum();
        let c = 0.5 * dx * sums.iter().zip(s).map(|(p, v)| p / v).sum::<f64>() / inv;
        let flux: Vec<f64> = sums.iter().map(|p| c - 0.5 * dx * p).collect();
        for i in 0..cells - 1 {
            psi[i + 1] = psi[i] + dx * flux[i] / s[i];
        }
    } else {
        let diag: Vec<f64> = (0..cells)
            .map(|i| {
                let acc: f64 = sigma.iter().enumerate().map(|(a, s)| s[i] + s[op.minus(a, i)]).sum();
                2.0 * acc / (dx * dx)
            })
            .collect();
        let norm_r = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm_r > 0.0 {
            let mut res = r.to_vec();
            let mut z: Vec<f64> = res.iter().zip(&diag).map(|(a, d)| a / d).collect();
            let mut p = z.clone();
            let mut ap = vec![0.0; cells];
            let mut rz: f64 = res.iter().zip(&z).map(|(a, b)| a * b).sum();
            loop {
                let rn = res.iter().map(|v| v * v).sum::<f64>().sqrt();
                if rn <= options.cg_tolerance * norm_r || iterations >= options.max_cg_iterations {
                    break;
                }
                apply_operator(op, &sigma, &p, &mut ap);
                let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
                let alpha = rz / pap;
                for i in 0..cells {
                    psi[i] += alpha * p[i];
                    res[i] -= alpha * ap[i];
                }
                for i in 0..cells {
                    z[i] = res[i] / diag[i];
                }
                let rz_new: f64 = res.iter().zip(&z).map(|(a, b)| a * b).sum();
                let beta = rz_new / rz;
                rz = rz_new;
                for i in 0..cells {
                    p[i] = z[i] + beta * p[i];
                }
                iterations += 1;
            }
        }
    }
    let mean = psi.iter().sum::<f64>() / cells as f64;
    for v in psi.iter_mut() {
        *v -= mean;
    }
    let mut check = vec![0.0; cells];
    apply_operator(op, &sigma, &psi, &mut check);
    let residual = check.iter().zip(r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let value = op.weighted_dirichlet(Some(rho), &psi);
    Outcome::Solved(Elliptic {
        psi,
        value,
        residual,
        iterations,
    })
}

fn check_path(path: &Path) -> Result<()> {
    for (k, s) in path.slices.iter().enumerate() {
        if s.min() < -1e-12 || s.max() > 1.0 + 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "path slice {k} leaves [0, 1] (range [{}, {}])",
                s.min(),
                s.max()
            )));
        }
    }
    Ok(())
}

/// `I(π | γ)` on the time span of `path`; when `gamma` is given the path must
/// start within `start_tolerance` of it.
pub fn rate_functional(
    path: &Path,
    gamma: Option<&DensityField>,
    coefficients: &Coefficients,
    field: &FieldSpec,
    options: &RateOptions,
) -> Result<RateEval> {
    check_path(path)?;
    let first = path.first();
    let start_distance = match gamma {
        Some(g) => Some(first.l2_distance(g)?),
        None => None,
    };
    let drift = path.mass_drift();
    let mass_conserving = drift <= options.mass_tolerance;
    if !mass_conserving {
        return Ok(RateEval::infinite(
            path,
            format!("path mass drifts by {drift:e}"),
            false,
            start_distance,
        ));
    }
    if let Some(d) = start_distance {
        if d > options.start_tolerance {
            return Ok(RateEval::infinite(
                path,
                format!("path starts at L2 distance {d:e} from the initial profile"),
                true,
                start_distance,
            ));
        }
    }
    let op = FluxOperator::new(coefficients, field, first.dim(), first.side())?;
    let intervals = interval_residuals(&op, path);
    let outcomes: Vec<Outcome> = intervals
        .par_iter()
        .map(|iv| solve_elliptic(&op, coefficients, &iv.mid, &iv.residual, options))
        .collect();
    let mut slices = Vec::with_capacity(intervals.len());
    let mut value = 0.0;
    for (iv, out) in intervals.iter().zip(outcomes) {
        match out {
            Outcome::Solved(e) => {
                value += iv.dt * e.value;
                slices.push(SliceDiagnostic {
                    t: iv.t,
                    dt: iv.dt,
                    value: e.value,
                    residual_mean: iv.residual_mean,
                    elliptic_residual: e.residual,
                    iterations: e.iterations,
                });
            }
            Outcome::Degenerate(reason) => {
                return Ok(RateEval::infinite(path, format!("t={}: {reason}", iv.t), true, start_distance));
            }
        }
    }
    Ok(RateEval {
        value,
        slices,
        mass_conserving: true,
        start_distance,
        diagnostic: None,
        dim: first.dim(),
        side: first.side(),
        intervals: intervals.len(),
    })
}

/// Lower bound on the rate functional from the supremum over test functions
/// restricted to Fourier modes with `|k|_∞ ≤ modes`.
pub fn fourier_lower_bound(path: &Path, coefficients: &Coefficients, field: &FieldSpec, modes: usize) -> Result<f64> {
    check_path(path)?;
    let first = path.first();
    let op = FluxOperator::new(coefficients, field, first.dim(), first.side())?;
    let basis = fourier_basis(first, modes);
    let intervals = interval_residuals(&op, path);
    let vol = first.spacing().powi(first.dim() as i32);
    let mut total = 0.0;
    for iv in &intervals {
        let n = basis.len();
        let b = DVector::from_fn(n, |k, _| vol * basis[k].iter().zip(&iv.residual).map(|(h, r)| h * r).sum::<f64>());
        let sigma = face_mobility(&op, coefficients, &iv.mid);
        let grads: Vec<Vec<Vec<f64>>> = basis
            .iter()
            .map(|h| {
                (0..op.dim())
                    .map(|a| (0..op.cells()).map(|i| (h[op.plus(a, i)] - h[i]) / op.dx()).collect())
                    .collect()
            })
            .collect();
        let a = DMatrix::from_fn(n, n, |k, l| {
            let mut acc = 0.0;
            for (ax, s) in sigma.iter().enumerate() {
                for i in 0..op.cells() {
                    acc += s[i] * grads[k][ax][i] * grads[l][ax][i];
                }
            }
            acc * vol
        });
        let pinv = a
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::Numerical(format!("test-function Gram matrix: {e}")))?;
        total += iv.dt * 0.25 * (b.transpose() * pinv * &b)[(0, 0)];
    }
    Ok(total)
}

fn fourier_basis(grid: &DensityField, modes: usize) -> Vec<Vec<f64>> {
    let d = grid.dim();
    let m = modes as i64;
    let mut waves: Vec<Vec<i64>> = Vec::new();
    let w = 2 * m + 1;
    for idx in 0..w.pow(d as u32) {
        let mut rem = idx;
        let k: Vec<i64> = (0..d)
            .map(|_| {
                let c = rem % w - m;
                rem /= w;
                c
            })
            .collect();
        // one representative of each ±k pair
        if k.iter().find(|&&c| c != 0).is_some_and(|&c| c > 0) {
            waves.push(k);
        }
    }
    let mut out = Vec::new();
    for k in waves {
        let phase: Vec<f64> = (0..grid.len())
            .map(|i| {
                let c = grid.center(i);
                2.0 * std::f64::consts::PI * k.iter().zip(&c).map(|(&a, x)| a as f64 * x).sum::<f64>()
            })
            .collect();
        out.push(phase.iter().map(|p| p.cos()).collect());
        out.push(phase.iter().map(|p| p.sin()).collect());
    }
    out
}

/// `∫ dt ⟨∇H, σ(π)∇H⟩` with the midpoint rule on the path intervals.
pub fn quadratic_cost(path: &Path, coefficients: &Coefficients, h: &dyn TimeField) -> Result<f64> {
    let first = path.first();
    let op = FluxOperator::new(coefficients, &FieldSpec::zero(first.dim()), first.dim(), first.side())?;
    let mut total = 0.0;
    let mut hv = vec![0.0; op.cells()];
    for n in 0..path.len().saturating_sub(1) {
        let (a, b) = (path.slices[n].values(), path.slices[n + 1].values());
        let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
        let t = 0.5 * (path.times[n] + path.times[n + 1]);
        op.sample_potential(h, t, &mut hv);
        total += (path.times[n + 1] - path.times[n]) * op.weighted_dirichlet(Some(&mid), &hv);
    }
    Ok(total)
}

fn excess_functional(rho: &DensityField, gamma: &DensityField, thermo: &dyn FreeEnergy) -> f64 {
    rho.values()
        .iter()
        .zip(gamma.values())
        .map(|(&r, &g)| thermo.excess(r, g))
        .sum::<f64>()
        / rho.len() as f64
}

/// `𝓕^U_ρ̄(ρ) = ∫ f_{γ(r)}(ρ(r)) dr` by the midpoint rule on the cells;
/// `+∞` when the mass of `ρ` is not `ρ̄`.
pub fn quasi_potential(rho: &DensityField, rho_bar: f64, potential: &FourierSeries, thermo: &dyn FreeEnergy) -> Result<f64> {
    if (rho.mass() - rho_bar).abs() > 1e-9 {
        return Ok(f64::INFINITY);
    }
    let gamma = stationary_profile(rho_bar, potential, thermo, rho.dim(), rho.side())?;
    Ok(excess_functional(rho, &gamma, thermo))
}

/// `∫ dt ⟨∇π, ∇π⟩` with the solver's face gradient and the trapezoid rule.
pub fn energy_q(path: &Path) -> f64 {
    let dirichlet = |s: &DensityField| -> f64 {
        let h = s.spacing();
        let vol = h.powi(s.dim() as i32);
        let v = s.values();
        let mut acc = 0.0;
        for a in 0..s.dim() {
            for (i, x) in v.iter().enumerate() {
                let g = (v[s.neighbor(i, a, 1)] - x) / h;
                acc += g * g;
            }
        }
        acc * vol
    };
    let e: Vec<f64> = path.slices.iter().map(dirichlet).collect();
    path.times
        .windows(2)
        .zip(e.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

/// Terms of the time-reversal identity
/// `I^E(π) = 𝓕(π_end) - 𝓕(π_start) + I^{E*}(θπ)`.
#[derive(Debug, Clone, Serialize)]
pub struct DualityReport {
    #[serde(serialize_with = "extended_float")]
    pub forward: f64,
    #[serde(serialize_with = "extended_float")]
    pub reversed: f64,
    pub free_energy_change: f64,
    #[serde(serialize_with = "extended_float")]
    pub defect: f64,
}

pub fn duality_defect(
    path: &Path,
    field: &FieldSpec,
    coefficients: &Coefficients,
    thermo: &dyn FreeEnergy,
    options: &RateOptions,
) -> Result<DualityReport> {
    let forward = rate_functional(path, None, coefficients, field, options)?;
    let reversed = rate_functional(&path.reversed(), None, coefficients, &field.adjoint(), options)?;
    let rho_bar = path.first().mass();
    let gamma = stationary_profile(rho_bar, &field.potential, thermo, path.first().dim(), path.first().side())?;
    let change = excess_functional(path.last(), &gamma, thermo) - excess_functional(path.first(), &gamma, thermo);
    let defect = (forward.value - (change + reversed.value)).abs();
    Ok(DualityReport {
        forward: forward.value,
        reversed: reversed.value,
        free_energy_change: change,
        defect: if defect.is_nan() { f64::INFINITY } else { defect },
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LyapunovPoint {
    pub t: f64,
    pub free_energy: f64,
    pub dissipation: f64,
    /// `|d𝓕/dt + dissipation|`, differentiating a five-point interpolant of 𝓕.
    pub defect: Option<f64>,
}

fn relative_potential(rho: &[f64], gamma: &[f64], thermo: &dyn FreeEnergy) -> Vec<f64> {
    rho.iter().zip(gamma).map(|(&r, &g)| thermo.fprime(r) - thermo.fprime(g)).collect()
}

fn check_interior(s: &DensityField) -> Result<()> {
    if s.min() <= 1e-12 || s.max() >= 1.0 - 1e-12 {
        return Err(Error::InvalidArgument(
            "profile touches 0 or 1 where f' diverges".into(),
        ));
    }
    Ok(())
}

/// `𝓕^U(π_t)` and the dissipation `⟨∇G_t, σ(π_t)∇G_t⟩`,
/// `G_t = f'(π_t) - f'(γ)`, along a path.
pub fn lyapunov_series(
    path: &Path,
    potential: &FourierSeries,
    thermo: &dyn FreeEnergy,
    coefficients: &Coefficients,
) -> Result<Vec<LyapunovPoint>> {
    let first = path.first();
    let (d, m) = (first.dim(), first.side());
    let gamma = stationary_profile(first.mass(), potential, thermo, d, m)?;
    let op = FluxOperator::new(coefficients, &FieldSpec::zero(d), d, m)?;
    let mut points = Vec::with_capacity(path.len());
    for (t, s) in path.times.iter().zip(&path.slices) {
        check_interior(s)?;
        let g = relative_potential(s.values(), gamma.values(), thermo);
        points.push(LyapunovPoint {
            t: *t,
            free_energy: excess_functional(s, &gamma, thermo),
            dissipation: op.weighted_dirichlet(Some(s.values()), &g),
            defect: None,
        });
    }
    let f: Vec<f64> = points.iter().map(|p| p.free_energy).collect();
    let t: Vec<f64> = points.iter().map(|p| p.t).collect();
    if points.len() >= 3 {
        for n in 0..points.len() {
            let slope = time_derivative(&t, &f, n);
            points[n].defect = Some((slope + points[n].dissipation).abs());
        }
    }
    Ok(points)
}

/// Derivative at `t[n]` of the Lagrange interpolant through the (at most)
/// five nearest samples.
fn time_derivative(t: &[f64], f: &[f64], n: usize) -> f64 {
    let width = t.len().min(5);
    let lo = n.saturating_sub(width / 2).min(t.len() - width);
    let idx: Vec<usize> = (lo..lo + width).collect();
    let mut acc = 0.0;
    for &j in &idx {
        let w = if j == n {
            idx.iter().filter(|&&k| k != n).map(|&k| 1.0 / (t[n] - t[k])).sum::<f64>()
        } else {
            let num: f64 = idx.iter().filter(|&&k| k != j && k != n).map(|&k| t[n] - t[k]).product();
            let den: f64 = idx.iter().filter(|&&k| k != j).map(|&k| t[j] - t[k]).product();
            num / den
        };
        acc += w * f[j];
    }
    acc
}

/// `|⟨∇·J(ρ), G⟩ - ⟨∇G, σ(ρ)∇G⟩|` for `J = σ(ρ)E - D(ρ)∇ρ` and
/// `G = f'(ρ) - f'(γ)`; zero in the continuum for orthogonally decomposed `E`.
pub fn lyapunov_dissipation_defect(
    rho: &DensityField,
    field: &FieldSpec,
    thermo: &dyn FreeEnergy,
    coefficients: &Coefficients,
) -> Result<f64> {
    check_interior(rho)?;
    let (d, m) = (rho.dim(), rho.side());
    let gamma = stationary_profile(rho.mass(), &field.potential, thermo, d, m)?;
    let op = FluxOperator::new(coefficients, field, d, m)?;
    let g = relative_potential(rho.values(), gamma.values(), thermo);
    let mut flux = vec![vec![0.0; op.cells()]; d];
    let mut div = vec![0.0; op.cells()];
    op.fluxes(rho.values(), None, &mut flux);
    op.divergence(&flux, &mut div);
    let vol = rho.spacing().powi(d as i32);
    let pairing: f64 = div.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() * vol;
    Ok((pairing - op.weighted_dirichlet(Some(rho.values()), &g)).abs())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ExitPolicy {
    /// Stop relaxing once `‖v_T - γ‖_{L²}` is below this.
    pub tolerance: f64,
    /// Output spacing of the relaxation path (defaults to the grid spacing).
    pub output_dt: Option<f64>,
    /// Length of each adjoint solve between convergence checks.
    pub chunk: f64,
    pub max_horizon: f64,
    /// Also evaluate the rate functional of the exit path.
    pub verify: bool,
}

impl Default for ExitPolicy {
    fn default() -> Self {
        ExitPolicy {
            tolerance: 1e-4,
            output_dt: None,
            chunk: 0.05,
            max_horizon: 50.0,
            verify: true,
        }
    }
}

/// The optimal exit path to a profile `ρ`: the time reversal of the adjoint
/// relaxation from `ρ` to `γ`.
#[derive(Debug, Clone, Serialize)]
pub struct ExitPlan {
    #[serde(skip)]
    pub target: DensityField,
    #[serde(skip)]
    pub path: Path,
    /// `𝓕^U_ρ̄(ρ)`.
    pub value: f64,
    /// Relaxation horizon used.
    pub horizon: f64,
    /// `‖v_T - γ‖_{L²}` at the horizon, i.e. the start error of the exit path.
    pub distance: f64,
    pub rate: Option<RateEval>,
}

pub fn optimal_exit_path(
    rho: &DensityField,
    field: &FieldSpec,
    thermo: &dyn FreeEnergy,
    coefficients: &Coefficients,
    policy: &ExitPolicy,
) -> Result<ExitPlan> {
    let rho_bar = rho.mass();
    let (d, m) = (rho.dim(), rho.side());
    let gamma = stationary_profile(rho_bar, &field.potential, thermo, d, m)?;
    let output_dt = policy.output_dt.unwrap_or(rho.spacing());
    let outputs = (policy.chunk / output_dt).round().max(1.0) as usize;
    let mut times = vec![0.0];
    let mut slices = vec![rho.clone()];
    let mut distance = rho.l2_distance(&gamma)?;
    let mut t = 0.0;
    'relax: while distance > policy.tolerance {
        if t >= policy.max_horizon {
            return Err(Error::HorizonExhausted {
                distance,
                tolerance: policy.tolerance,
                horizon: t,
            });
        }
        let start = slices.last().unwrap().clone();
        let sol = solve_adjoint(&start, coefficients, field, policy.chunk, outputs)?;
        for (s_t, s) in sol.path.times.iter().zip(sol.path.slices).skip(1) {
            times.push(t + s_t);
            distance = s.l2_distance(&gamma)?;
            slices.push(s);
            if distance <= policy.tolerance {
                break 'relax;
            }
        }
        t += policy.chunk;
    }
    let horizon = *times.last().unwrap();
    let path = Path::new(times, slices)?.reversed();
    let value = excess_functional(rho, &gamma, thermo);
    let rate = if policy.verify {
        Some(rate_functional(&path, Some(&gamma), coefficients, field, &RateOptions::default())?)
    } else {
        None
    };
    Ok(ExitPlan {
        target: rho.clone(),
        path,
        value,
        horizon,
        distance,
        rate,
    })
}

/// The driving field `E + 2∇Ψ_t` that produces a target path, stored through
/// the potential `H = 2Ψ` at cell centres on the interval midpoints.
#[derive(Debug, Clone, Serialize)]
pub struct ControlledField {
    pub dim: usize,
    pub side: usize,
    pub base: FieldSpec,
    pub times: Vec<f64>,
    pub potentials: Vec<Vec<f64>>,
    lipschitz: f64,
}

impl ControlledField {
    /// Face values of `E + 2∇Ψ` on interval `k` along `axis`, indexed by the
    /// cell on the low side of the face.
    pub fn face_values(&self, k: usize, axis: usize) -> Result<Vec<f64>> {
        let grid = DensityField::unchecked(self.dim, self.side, self.potentials[k].clone())?;
        let h = grid.spacing();
        Ok((0..grid.len())
            .map(|i| {
                let j = grid.neighbor(i, axis, 1);
                self.base.face_value(self.side, &grid.coords(i), axis) + (self.potentials[k][j] - self.potentials[k][i]) / h
            })
            .collect())
    }

    fn spatial(&self, k: usize, r: &[f64]) -> f64 {
        let m = self.side as i64;
        let stride = |a: usize| self.side.pow(a as u32);
        let mut base = Vec::with_capacity(self.dim);
        let mut frac = Vec::with_capacity(self.dim);
        for &x in r.iter().take(self.dim) {
            let u = x * self.side as f64 - 0.5;
            let f = u.floor();
            base.push((f as i64).rem_euclid(m) as usize);
            frac.push(u - f);
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << self.dim) {
            let mut w = 1.0;
            let mut idx = 0;
            for a in 0..self.dim {
                let up = (corner >> a) & 1;
                let c = (base[a] + up) % self.side;
                idx += c * stride(a);
                w *= if up == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            acc += w * self.potentials[k][idx];
        }
        acc
    }
}

impl TimeField for ControlledField {
    /// Multilinear in space through the cell centres, linear in time between
    /// interval midpoints and constant beyond them.
    fn value(&self, t: f64, r: &[f64]) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] || n == 1 {
            return self.spatial(0, r);
        }
        if t >= self.times[n - 1] {
            return self.spatial(n - 1, r);
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        (1.0 - w) * self.spatial(k, r) + w * self.spatial(k + 1, r)
    }

    fn lipschitz_bound(&self) -> f64 {
        self.lipschitz
    }
}

/// Solves for `Ψ_t` along a target path and returns the field `E + 2∇Ψ_t`.
pub fn controlled_field(
    target: &Path,
    coefficients: &Coefficients,
    field: &FieldSpec,
    options: &RateOptions,
) -> Result<ControlledField> {
    check_path(target)?;
    let drift = target.mass_drift();
    if drift > options.mass_tolerance {
        return Err(Error::InvalidArgument(format!(
            "target path mass drifts by {drift:e}"
        )));
    }
    let first = target.first();
    let (d, m) = (first.dim(), first.side());
    let op = FluxOperator::new(coefficients, field, d, m)?;
    let intervals = interval_residuals(&op, target);
    if intervals.is_empty() {
        return Err(Error::InvalidArgument("target path has a single slice".into()));
    }
    let mut potentials = Vec::with_capacity(intervals.len());
    let mut lipschitz: f64 = 0.0;
    for iv in &intervals {
        match solve_elliptic(&op, coefficients, &iv.mid, &iv.residual, options) {
            Outcome::Solved(e) => {
                let h: Vec<f64> = e.psi.iter().map(|p| 2.0 * p).collect();
                for a in 0..d {
                    for i in 0..op.cells() {
                        lipschitz = lipschitz.max((h[op.plus(a, i)] - h[i]).abs() / op.dx());
                    }
                }
                potentials.push(h);
            }
            Outcome::Degenerate(reason) => {
                return Err(Error::Numerical(format!("controlled field at t={}: {reason}", iv.t)));
            }
        }
    }
    Ok(ControlledField {
        dim: d,
        side: m,
        base: field.clone(),
        times: intervals.iter().map(|iv| iv.t).collect(),
        potentials,
        lipschitz,
    })
}
