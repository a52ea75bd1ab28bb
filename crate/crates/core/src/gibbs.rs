//! Finite-range Hamiltonians, Gibbs measures and equilibrium thermodynamics.
//!
//! The pair interaction is `H = J Σ_{bonds} η_x η_y` (J > 0 repulsive) with
//! Gibbs weight `e^{-H}`. Internally the chemical potential `μ` always
//! enters as `e^{-H + μ Σ η}`, so that the pressure is increasing in `μ`, the
//! density is `p'(μ)` and the free energy `f(ρ) = sup_μ {μρ - p(μ)}` satisfies
//! `f'(ρ) = μ(ρ)` and `f''(ρ) = 1 / p''(μ(ρ))`. [`ChemicalPotentialSign`]
//! only changes how a user-facing `λ` maps to `μ`; every exported
//! thermodynamic quantity of the density is independent of it.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{enumerate_sector, Bond, Configuration, Torus};

/// Largest window for exhaustive expectations.
pub const MAX_WINDOW_SITES: usize = 24;

// Interpolate only where ρ(1-ρ) is at least this large.
const INTERPOLATION_BAND: f64 = 0.01;

/// Default ring length for windowed interacting expectations.
pub const DEFAULT_RING: usize = 16;

/// How the user-facing chemical potential `λ` enters the Gibbs weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChemicalPotentialSign {
    /// Weight `e^{-H + λ Σ η}`: larger `λ` means more particles.
    #[default]
    Favoring,
    /// `λ Σ η` is part of the Hamiltonian: weight `e^{-H - λ Σ η}`.
    AsInHamiltonian,
}

impl ChemicalPotentialSign {
    fn to_favoring(self, lambda: f64) -> f64 {
        match self {
            ChemicalPotentialSign::Favoring => lambda,
            ChemicalPotentialSign::AsInHamiltonian => -lambda,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InteractionKind {
    Zero,
    NearestNeighbor { coupling: f64 },
}

/// A translation-invariant finite-range interaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionSpec {
    pub kind: InteractionKind,
    #[serde(default)]
    pub sign: ChemicalPotentialSign,
}

impl InteractionSpec {
    pub fn zero() -> Self {
        InteractionSpec {
            kind: InteractionKind::Zero,
            sign: ChemicalPotentialSign::Favoring,
        }
    }

    pub fn nearest_neighbor(coupling: f64) -> Self {
        InteractionSpec {
            kind: InteractionKind::NearestNeighbor { coupling },
            sign: ChemicalPotentialSign::Favoring,
        }
    }

    pub fn with_sign(mut self, sign: ChemicalPotentialSign) -> Self {
        self.sign = sign;
        self
    }

    pub fn coupling(&self) -> f64 {
        match self.kind {
            InteractionKind::Zero => 0.0,
            InteractionKind::NearestNeighbor { coupling } => coupling,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.coupling() == 0.0
    }

    /// Interaction range `r0`: the largest diameter of a set with nonzero potential.
    pub fn range(&self) -> usize {
        if self.is_zero() {
            0
        } else {
            1
        }
    }
}

/// Bonds touching `x` or `y`, without duplicates.
fn incident_bonds(torus: &Torus, x: usize, y: usize, out: &mut Vec<usize>) {
    out.clear();
    for site in [x, y] {
        for axis in 0..torus.dim() {
            for b in [
                torus.bond_index(site, axis),
                torus.bond_index(torus.step(site, axis, -1), axis),
            ] {
                if !out.contains(&b) {
                    out.push(b);
                }
            }
        }
    }
}

/// `H(η) = J Σ_{bonds} η_x η_y`.
pub fn hamiltonian(interaction: &InteractionSpec, torus: &Torus, config: &Configuration) -> f64 {
    let j = interaction.coupling();
    if j == 0.0 {
        return 0.0;
    }
    let pairs = torus
        .bonds()
        .iter()
        .filter(|b| config.get(b.site) && config.get(torus.head(**b)))
        .count();
    j * pairs as f64
}

/// `H(η^{x,y}) - H(η)` from the bonds adjacent to the exchanged pair.
pub fn energy_diff(
    interaction: &InteractionSpec,
    torus: &Torus,
    config: &Configuration,
    bond: Bond,
) -> f64 {
    let j = interaction.coupling();
    let x = bond.site;
    let y = torus.head(bond);
    if j == 0.0 || config.get(x) == config.get(y) {
        return 0.0;
    }
    let mut bonds = Vec::with_capacity(4 * torus.dim());
    incident_bonds(torus, x, y, &mut bonds);
    let occ_after = |s: usize| -> bool {
        if s == x {
            config.get(y)
        } else if s == y {
            config.get(x)
        } else {
            config.get(s)
        }
    };
    let mut delta = 0i64;
    for &bi in &bonds {
        let b = torus.bonds()[bi];
        let (u, v) = (b.site, torus.head(b));
        delta += (occ_after(u) && occ_after(v)) as i64;
        delta -= (config.get(u) && config.get(v)) as i64;
    }
    j * delta as f64
}

/// The symmetric 2×2 transfer matrix `[[1, e^{μ/2}], [e^{μ/2}, e^{μ-J}]]` of a
/// nearest-neighbour chain, indexed by the occupation of the two sites.
#[derive(Debug, Clone, Copy)]
struct Transfer {
    a: f64,
    b: f64,
    c: f64,
}

#[derive(Debug, Clone, Copy)]
struct Spectrum {
    l0: f64,
    l1: f64,
    // normalized Perron vector and its orthogonal complement
    v0: [f64; 2],
    v1: [f64; 2],
}

impl Transfer {
    fn new(j: f64, mu: f64) -> Self {
        Transfer {
            a: 1.0,
            b: (0.5 * mu).exp(),
            c: (mu - j).exp(),
        }
    }

    fn spectrum(&self) -> Spectrum {
        let h = 0.5 * (self.c - self.a);
        let s = (h * h + self.b * self.b).sqrt();
        let mean = 0.5 * (self.a + self.c);
        let l0 = mean + s;
        let l1 = mean - s;
        // (b, l0 - a) is the Perron vector; both entries positive.
        let (x, y) = (self.b, l0 - self.a);
        let n = (x * x + y * y).sqrt();
        Spectrum {
            l0,
            l1,
            v0: [x / n, y / n],
            v1: [-y / n, x / n],
        }
    }
}

impl Spectrum {
    /// `(T^n / λ0^n)(u, v)`.
    fn normalized_power(&self, n: usize, u: usize, v: usize) -> f64 {
        let r = self.l1 / self.l0;
        self.v0[u] * self.v0[v] + r.powi(n as i32) * self.v1[u] * self.v1[v]
    }
}

/// Pressure and its first two derivatives in the favoring variable `μ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PressureDerivatives {
    pub p: f64,
    pub density: f64,
    pub second: f64,
    pub third: f64,
}

fn chain_derivatives(j: f64, mu: f64) -> PressureDerivatives {
    if j == 0.0 {
        let density = logistic(mu);
        return PressureDerivatives {
            p: softplus(mu),
            density,
            second: density * (1.0 - density),
            third: density * (1.0 - density) * (1.0 - 2.0 * density),
        };
    }
    // Particle-hole symmetry keeps the formulas away from the cancellation at ρ → 1:
    // p(μ) = μ - J + p(2J - μ).
    if mu > j {
        let r = chain_derivatives(j, 2.0 * j - mu);
        return PressureDerivatives {
            p: mu - j + r.p,
            density: 1.0 - r.density,
            second: r.second,
            third: -r.third,
        };
    }
    let t = Transfer::new(j, mu);
    let (a, b, c) = (t.a, t.b, t.c);
    let h = 0.5 * (c - a);
    let q = h * h + b * b;
    let q1 = 0.5 * (c - a) * c + b * b;
    let q2 = 0.5 * (2.0 * c * c - a * c) + b * b;
    let s = q.sqrt();
    let s1 = q1 / (2.0 * s);
    let q3 = 0.5 * (4.0 * c * c - a * c) + b * b;
    let s2 = (q2 - 2.0 * s1 * s1) / (2.0 * s);
    let s3 = (q3 - 6.0 * s1 * s2) / (2.0 * s);
    let l = 0.5 * (a + c) + s;
    let l1 = (0.5 * c + s1) / l;
    let l2 = (0.5 * c + s2) / l;
    let l3 = (0.5 * c + s3) / l;
    PressureDerivatives {
        p: l.ln(),
        density: l1,
        second: l2 - l1 * l1,
        third: l3 - 3.0 * l2 * l1 + 2.0 * l1 * l1 * l1,
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn check_chain(interaction: &InteractionSpec, dim: usize) -> Result<()> {
    if !interaction.is_zero() && dim != 1 {
        return Err(Error::Unsupported(format!(
            "transfer-matrix thermodynamics for an interacting model in dimension {dim}"
        )));
    }
    Ok(())
}

/// Derivatives of the pressure with respect to the favoring chemical potential.
pub fn favoring_pressure(interaction: &InteractionSpec, dim: usize, mu: f64) -> Result<PressureDerivatives> {
    check_chain(interaction, dim)?;
    Ok(chain_derivatives(interaction.coupling(), mu))
}

/// `p(λ) = lim N^{-d} log Z^λ_N` under the interaction's sign convention.
pub fn pressure(interaction: &InteractionSpec, dim: usize, lambda: f64) -> Result<f64> {
    Ok(favoring_pressure(interaction, dim, interaction.sign.to_favoring(lambda))?.p)
}

/// Infinite-volume density at chemical potential `λ` (under the sign convention).
pub fn density_at(interaction: &InteractionSpec, dim: usize, lambda: f64) -> Result<f64> {
    Ok(favoring_pressure(interaction, dim, interaction.sign.to_favoring(lambda))?.density)
}

/// `N^{-d} log Z^λ_N` on a finite torus by exhaustive summation over sectors.
pub fn finite_pressure(interaction: &InteractionSpec, torus: &Torus, lambda: f64) -> Result<f64> {
    let mu = interaction.sign.to_favoring(lambda);
    let n = torus.sites();
    let mut terms = Vec::new();
    for k in 0..=n {
        for cfg in enumerate_sector(torus, k)? {
            terms.push(mu * k as f64 - hamiltonian(interaction, torus, &cfg));
        }
    }
    Ok(log_sum_exp(&terms) / n as f64)
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Favoring chemical potential `μ` with `p'(μ) = ρ`, by safeguarded Newton on a bracket.
fn solve_density(j: f64, rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "density {rho} outside the open interval (0, 1)"
        )));
    }
    let mut lo = -40.0 + j.min(0.0) * 4.0;
    let mut hi = 40.0 + j.max(0.0) * 4.0;
    let g = |mu: f64| chain_derivatives(j, mu);
    if g(lo).density > rho || g(hi).density < rho {
        return Err(Error::Bracketing(format!(
            "density {rho} not bracketed by μ in [{lo}, {hi}]"
        )));
    }
    let mut mu = (rho / (1.0 - rho)).ln() + 2.0 * j * rho;
    mu = mu.clamp(lo, hi);
    for _ in 0..200 {
        let d = g(mu);
        let r = d.density - rho;
        if r > 0.0 {
            hi = mu;
        } else {
            lo = mu;
        }
        if r.abs() <= 1e-15 || hi - lo <= 1e-12 {
            return Ok(mu);
        }
        let newton = mu - r / d.second;
        mu = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(mu)
}

/// A convex free energy of the density with its Legendre-dual data.
pub trait FreeEnergy: Send + Sync {
    fn f(&self, rho: f64) -> f64;
    /// Chemical potential `f'(ρ)`.
    fn fprime(&self, rho: f64) -> f64;
    fn fsecond(&self, rho: f64) -> f64;
    /// Inverse of `f'`: the density at favoring chemical potential `μ`.
    fn inverse_fprime(&self, mu: f64) -> f64;

    /// `χ(ρ) = 1 / f''(ρ)`, extended by `χ(0) = χ(1) = 0`.
    fn chi(&self, rho: f64) -> f64 {
        if rho <= 0.0 || rho >= 1.0 {
            0.0
        } else {
            1.0 / self.fsecond(rho)
        }
    }

    /// `f_ρ̄(ρ) = f(ρ) - f(ρ̄) - f'(ρ̄)(ρ - ρ̄)`.
    fn excess(&self, rho: f64, rho_bar: f64) -> f64 {
        if rho == rho_bar {
            return 0.0;
        }
        self.f(rho) - self.f(rho_bar) - self.fprime(rho_bar) * (rho - rho_bar)
    }
}

/// Free energy of the non-interacting lattice gas, `ρ log ρ + (1-ρ) log(1-ρ)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Bernoulli;

fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

impl FreeEnergy for Bernoulli {
    fn f(&self, rho: f64) -> f64 {
        xlogx(rho) + xlogx(1.0 - rho)
    }

    fn fprime(&self, rho: f64) -> f64 {
        (rho / (1.0 - rho)).ln()
    }

    fn fsecond(&self, rho: f64) -> f64 {
        1.0 / (rho * (1.0 - rho))
    }

    fn inverse_fprime(&self, mu: f64) -> f64 {
        logistic(mu)
    }

    fn excess(&self, rho: f64, rho_bar: f64) -> f64 {
        if rho == rho_bar {
            return 0.0;
        }
        let term = |x: f64, y: f64| if x <= 0.0 { 0.0 } else { x * (x / y).ln() };
        term(rho, rho_bar) + term(1.0 - rho, 1.0 - rho_bar)
    }
}

/// Tabulated free energy of a one-dimensional chain (or the ideal gas in any dimension).
#[derive(Debug, Clone)]
pub struct ThermoTable {
    interaction: InteractionSpec,
    dim: usize,
    rho_min: f64,
    rho: Vec<f64>,
    mu: Vec<f64>,
    f: Vec<f64>,
    fsecond: Vec<f64>,
    fthird: Vec<f64>,
    /// `f(1)`: energy density of the full configuration.
    f_full: f64,
}

/// Specification of the tabulation grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableGrid {
    pub points: usize,
    pub rho_min: f64,
}

impl Default for TableGrid {
    fn default() -> Self {
        TableGrid {
            points: 2048,
            rho_min: 1e-4,
        }
    }
}

impl ThermoTable {
    pub fn new(interaction: &InteractionSpec, dim: usize) -> Result<Self> {
        Self::with_grid(interaction, dim, TableGrid::default())
    }

    pub fn with_grid(interaction: &InteractionSpec, dim: usize, grid: TableGrid) -> Result<Self> {
        check_chain(interaction, dim)?;
        if grid.points < 8 || !(grid.rho_min > 0.0 && grid.rho_min < 0.25) {
            return Err(Error::InvalidArgument(format!(
                "thermo grid needs at least 8 points and rho_min in (0, 0.25), got {grid:?}"
            )));
        }
        let j = interaction.coupling();
        let n = grid.points;
        let h = (1.0 - 2.0 * grid.rho_min) / (n - 1) as f64;
        let mut rho = Vec::with_capacity(n);
        let mut mu = Vec::with_capacity(n);
        let mut f = Vec::with_capacity(n);
        let mut fsecond = Vec::with_capacity(n);
        let mut fthird = Vec::with_capacity(n);
        for i in 0..n {
            let r = grid.rho_min + h * i as f64;
            let m = solve_density(j, r)?;
            let d = chain_derivatives(j, m);
            rho.push(r);
            mu.push(m);
            f.push(m * r - d.p);
            fsecond.push(1.0 / d.second);
            fthird.push(-d.third / d.second.powi(3));
        }
        let table = ThermoTable {
            interaction: *interaction,
            dim,
            rho_min: grid.rho_min,
            rho,
            mu,
            f,
            fsecond,
            fthird,
            f_full: j * dim as f64,
        };
        table.check_convexity()?;
        table.check_legendre()?;
        Ok(table)
    }

    pub fn interaction(&self) -> &InteractionSpec {
        &self.interaction
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rho_min(&self) -> f64 {
        self.rho_min
    }

    pub fn nodes(&self) -> &[f64] {
        &self.rho
    }

    /// Fails unless every interior discrete second difference of `f` is nonnegative.
    pub fn check_convexity(&self) -> Result<()> {
        for i in 1..self.f.len() - 1 {
            let d2 = self.f[i + 1] - 2.0 * self.f[i] + self.f[i - 1];
            if d2 < 0.0 {
                return Err(Error::NonConvex {
                    rho: self.rho[i],
                    second_difference: d2,
                });
            }
        }
        Ok(())
    }

    /// Checks `μρ(μ) - p(μ) ≤ f(ρ(μ)) + 1e-8` on a `μ` sweep and equality at the nodes.
    pub fn check_legendre(&self) -> Result<()> {
        let j = self.interaction.coupling();
        for (i, &r) in self.rho.iter().enumerate() {
            let d = chain_derivatives(j, self.mu[i]);
            if ((self.mu[i] * r - d.p) - self.f[i]).abs() > 1e-10 {
                return Err(Error::Numerical(format!("Legendre equality fails at rho={r}")));
            }
        }
        let (lo, hi) = (self.mu[0], self.mu[self.mu.len() - 1]);
        for k in 0..=400 {
            let m = lo + (hi - lo) * k as f64 / 400.0;
            let d = chain_derivatives(j, m);
            for &r in [d.density, 0.5, self.rho[0]].iter() {
                if m * r - d.p > self.f(r) + 1e-8 {
                    return Err(Error::Numerical(format!(
                        "Legendre bound violated at mu={m}, rho={r}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Node interval and local coordinate for `ρ` inside the interpolation band.
    /// Near the edges the derivatives of `f` blow up and direct evaluation is used instead.
    fn locate(&self, rho: f64) -> Option<(usize, f64)> {
        if rho * (1.0 - rho) < INTERPOLATION_BAND {
            return None;
        }
        let n = self.rho.len();
        let h = self.rho[1] - self.rho[0];
        let x = (rho - self.rho[0]) / h;
        if !(0.0..=(n - 1) as f64).contains(&x) {
            return None;
        }
        let i = (x.floor() as usize).min(n - 2);
        Some((i, (rho - self.rho[i]) / h))
    }

    fn exact(&self, rho: f64) -> (f64, f64, f64) {
        let j = self.interaction.coupling();
        match solve_density(j, rho) {
            Ok(m) => {
                let d = chain_derivatives(j, m);
                (m * rho - d.p, m, 1.0 / d.second)
            }
            Err(_) => (f64::NAN, f64::NAN, f64::NAN),
        }
    }

    /// Writes `rho,f,fprime,fsecond,chi` rows at the nodes.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "rho,f,fprime,fsecond,chi")?;
        for i in 0..self.rho.len() {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.rho[i],
                self.f[i],
                self.mu[i],
                self.fsecond[i],
                1.0 / self.fsecond[i]
            )?;
        }
        Ok(())
    }
}

fn hermite(y0: f64, y1: f64, d0: f64, d1: f64, h: f64, t: f64) -> f64 {
    let t2 = t * t;
    let t3 = t2 * t;
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0
        + (t3 - 2.0 * t2 + t) * h * d0
        + (-2.0 * t3 + 3.0 * t2) * y1
        + (t3 - t2) * h * d1
}

impl FreeEnergy for ThermoTable {
    fn f(&self, rho: f64) -> f64 {
        if rho <= 0.0 {
            return 0.0;
        }
        if rho >= 1.0 {
            return self.f_full;
        }
        match self.locate(rho) {
            Some((i, t)) => hermite(
                self.f[i],
                self.f[i + 1],
                self.mu[i],
                self.mu[i + 1],
                self.rho[i + 1] - self.rho[i],
                t,
            ),
            None => self.exact(rho).0,
        }
    }

    fn fprime(&self, rho: f64) -> f64 {
        match self.locate(rho) {
            Some((i, t)) => hermite(
                self.mu[i],
                self.mu[i + 1],
                self.fsecond[i],
                self.fsecond[i + 1],
                self.rho[i + 1] - self.rho[i],
                t,
            ),
            None => self.exact(rho).1,
        }
    }

    fn fsecond(&self, rho: f64) -> f64 {
        match self.locate(rho) {
            Some((i, t)) => hermite(
                self.fsecond[i],
                self.fsecond[i + 1],
                self.fthird[i],
                self.fthird[i + 1],
                self.rho[i + 1] - self.rho[i],
                t,
            ),
            None => self.exact(rho).2,
        }
    }

    fn inverse_fprime(&self, mu: f64) -> f64 {
        chain_derivatives(self.interaction.coupling(), mu).density
    }
}

/// `χ(ρ)`, with the limits `χ(0) = χ(1) = 0`.
pub fn compressibility(thermo: &dyn FreeEnergy, rho: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("density {rho} outside [0, 1]")));
    }
    Ok(thermo.chi(rho))
}

/// Smallest `C ≥ 1` with `1/C ≤ χ(ρ)/(ρ(1-ρ)) ≤ C` on `ρ ∈ [0.02, 0.98]`.
pub fn compressibility_bound(thermo: &dyn FreeEnergy) -> f64 {
    let mut c: f64 = 1.0;
    for k in 0..=960 {
        let rho = 0.02 + 0.001 * k as f64;
        let ratio = thermo.chi(rho) / (rho * (1.0 - rho));
        c = c.max(ratio).max(1.0 / ratio);
    }
    c
}

/// Exact canonical Gibbs measure on the sector with `k` particles.
pub fn canonical_exact(
    interaction: &InteractionSpec,
    torus: &Torus,
    k: usize,
) -> Result<(Vec<Configuration>, Vec<f64>)> {
    let states = enumerate_sector(torus, k)?;
    let energies: Vec<f64> = states
        .iter()
        .map(|c| hamiltonian(interaction, torus, c))
        .collect();
    let e0 = energies.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut w: Vec<f64> = energies.iter().map(|e| (-(e - e0)).exp()).collect();
    let z: f64 = w.iter().sum();
    for x in w.iter_mut() {
        *x /= z;
    }
    Ok((states, w))
}

/// Law of the occupations of a finite set of sites under `μ_ρ`.
#[derive(Debug, Clone)]
pub struct WindowLaw {
    /// Probability of each window configuration; bit `i` is the occupation of site `i`.
    pub probabilities: Vec<f64>,
    /// Ring length used for interacting chains (`None` for the exact product measure).
    pub ring: Option<usize>,
}

/// The grand-canonical measure at density `ρ` restricted to `sites` (lattice
/// offsets). Exact for zero interaction; for a one-dimensional chain it is the
/// marginal of the periodic ring of `ring` sites at chemical potential `f'(ρ)`.
pub fn window_law(
    interaction: &InteractionSpec,
    rho: f64,
    sites: &[Vec<i64>],
    ring: usize,
) -> Result<WindowLaw> {
    let m = sites.len();
    if m > MAX_WINDOW_SITES {
        return Err(Error::WindowTooLarge {
            sites: m,
            limit: MAX_WINDOW_SITES,
        });
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("density {rho} outside [0, 1]")));
    }
    let size = 1usize << m;
    if interaction.is_zero() || rho == 0.0 || rho == 1.0 {
        let probabilities = (0..size)
            .map(|mask: usize| {
                let k = mask.count_ones() as i32;
                rho.powi(k) * (1.0 - rho).powi(m as i32 - k)
            })
            .collect();
        return Ok(WindowLaw {
            probabilities,
            ring: None,
        });
    }
    let dim = sites.first().map(|s| s.len()).unwrap_or(1);
    check_chain(interaction, dim)?;
    let mut order: Vec<(i64, usize)> = sites.iter().enumerate().map(|(i, s)| (s[0], i)).collect();
    order.sort();
    for w in order.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(Error::InvalidArgument("window sites must be distinct".into()));
        }
    }
    let span = (order[m - 1].0 - order[0].0) as usize;
    if ring <= span {
        return Err(Error::InvalidArgument(format!(
            "ring of {ring} sites cannot hold a window spanning {}",
            span + 1
        )));
    }
    let j = interaction.coupling();
    let mu = solve_density(j, rho)?;
    let spec = Transfer::new(j, mu).spectrum();
    let norm = 1.0 + (spec.l1 / spec.l0).powi(ring as i32);
    let mut probabilities = vec![0.0; size];
    for (mask, p) in probabilities.iter_mut().enumerate() {
        let occ = |k: usize| (mask >> order[k].1) & 1;
        let mut w = 1.0;
        for k in 0..m - 1 {
            let gap = (order[k + 1].0 - order[k].0) as usize;
            w *= spec.normalized_power(gap, occ(k), occ(k + 1));
        }
        w *= spec.normalized_power(ring - span, occ(m - 1), occ(0));
        *p = w / norm;
    }
    Ok(WindowLaw {
        probabilities,
        ring: Some(ring),
    })
}

/// An expectation under `μ_ρ` with its truncation-error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowedExpectation {
    pub value: f64,
    /// `|value(2·ring) - value(ring)|`; zero for the exact product measure.
    pub truncation_error: f64,
    pub ring: Option<usize>,
}

/// `μ_ρ[F]` for a local observable supported on `sites`.
pub fn product_expectation<F>(
    interaction: &InteractionSpec,
    observable: F,
    rho: f64,
    sites: &[Vec<i64>],
    ring: usize,
) -> Result<WindowedExpectation>
where
    F: Fn(&[bool]) -> f64,
{
    if sites.len() > MAX_WINDOW_SITES {
        return Err(Error::WindowTooLarge {
            sites: sites.len(),
            limit: MAX_WINDOW_SITES,
        });
    }
    let eval = |law: &WindowLaw| -> f64 {
        let mut occ = vec![false; sites.len()];
        let mut acc = 0.0;
        for (mask, &p) in law.probabilities.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (i, o) in occ.iter_mut().enumerate() {
                *o = (mask >> i) & 1 == 1;
            }
            acc += p * observable(&occ);
        }
        acc
    };
    let law = window_law(interaction, rho, sites, ring)?;
    let value = eval(&law);
    let truncation_error = match law.ring {
        None => 0.0,
        Some(r) => (eval(&window_law(interaction, rho, sites, 2 * r)?) - value).abs(),
    };
    Ok(WindowedExpectation {
        value,
        truncation_error,
        ring: law.ring,
    })
}

/// `Σ_{|x| ≤ radius} μ_ρ(η_0; η_x)` on the one-dimensional chain.
pub fn correlation_sum(interaction: &InteractionSpec, rho: f64, radius: usize, ring: usize) -> Result<f64> {
    let mut total = rho * (1.0 - rho);
    for x in 1..=radius as i64 {
        let sites = vec![vec![0], vec![x]];
        let e = product_expectation(interaction, |o| (o[0] && o[1]) as u8 as f64, rho, &sites, ring)?;
        total += 2.0 * (e.value - rho * rho);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::exchange;

    #[test]
    fn energy_diff_matches_full_hamiltonian() {
        let ising = InteractionSpec::nearest_neighbor(1.0);
        for (dim, side) in [(1, 6), (2, 3), (2, 2), (3, 2)] {
            let t = Torus::new(dim, side).unwrap();
            let n = t.sites();
            for mask in 0..(1u64 << n).min(512) {
                let c = Configuration::from_mask(mask.wrapping_mul(2654435761) & ((1 << n) - 1), n);
                for &b in t.bonds() {
                    let full = hamiltonian(&ising, &t, &exchange(&t, &c, b)) - hamiltonian(&ising, &t, &c);
                    assert!((energy_diff(&ising, &t, &c, b) - full).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn ring_example_energy_diff() {
        // 1..0..0..1 on a ring of 6 sites: 100001, moving the particle at 0 to 1
        let ising = InteractionSpec::nearest_neighbor(1.0);
        let t = Torus::new(1, 6).unwrap();
        let c = Configuration::from_bits("100001").unwrap();
        let b = Bond { site: 0, axis: 0 };
        assert_eq!(energy_diff(&ising, &t, &c, b), -1.0);
        assert_eq!(energy_diff(&InteractionSpec::zero(), &t, &c, b), 0.0);
    }

    #[test]
    fn zero_interaction_pressure() {
        let zero = InteractionSpec::zero();
        assert!((pressure(&zero, 1, 0.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        let lam = 0.7;
        assert!((pressure(&zero, 1, lam).unwrap() - (1.0 + lam.exp()).ln()).abs() < 1e-14);
        let flipped = zero.with_sign(ChemicalPotentialSign::AsInHamiltonian);
        assert!((pressure(&flipped, 1, lam).unwrap() - (1.0 + (-lam).exp()).ln()).abs() < 1e-14);
        assert!((pressure(&zero, 3, lam).unwrap() - (1.0 + lam.exp()).ln()).abs() < 1e-14);
    }

    #[test]
    fn chain_pressure_matches_enumeration() {
        let int = InteractionSpec::nearest_neighbor(0.5);
        let t = Torus::new(1, 14).unwrap();
        let exact = finite_pressure(&int, &t, 0.0).unwrap();
        assert!((pressure(&int, 1, 0.0).unwrap() - exact).abs() < 1e-3);
        assert!(pressure(&int, 2, 0.0).is_err());
    }

    #[test]
    fn pressure_derivatives_match_finite_differences() {
        for j in [-0.5, 0.5, 1.0] {
            for mu in [-3.0, -0.2, 0.4, 2.5] {
                let h = 1e-4;
                let p = |m| chain_derivatives(j, m).p;
                let d = chain_derivatives(j, mu);
                assert!((d.density - (p(mu + h) - p(mu - h)) / (2.0 * h)).abs() < 1e-7);
                let fd2 = (p(mu + h) - 2.0 * p(mu) + p(mu - h)) / (h * h);
                assert!((d.second - fd2).abs() < 1e-5);
                let s = |m| chain_derivatives(j, m).second;
                assert!((d.third - (s(mu + h) - s(mu - h)) / (2.0 * h)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn table_reproduces_bernoulli() {
        let t = ThermoTable::new(&InteractionSpec::zero(), 1).unwrap();
        let b = Bernoulli;
        for &r in &[0.001, 0.1, 0.3, 0.5, 0.77, 0.999] {
            assert!((t.f(r) - b.f(r)).abs() < 1e-11, "f at {r}");
            assert!((t.fprime(r) - b.fprime(r)).abs() < 1e-9, "f' at {r}");
            assert!((t.fsecond(r) - b.fsecond(r)).abs() / b.fsecond(r) < 1e-6, "f'' at {r}");
        }
        assert!((t.excess(0.3, 0.5) - 0.082_282_878_505_051_78).abs() < 1e-10);
        assert_eq!(t.excess(0.5, 0.5), 0.0);
        assert!((compressibility(&t, 0.5).unwrap() - 0.25).abs() < 1e-10);
        assert_eq!(compressibility(&t, 0.0).unwrap(), 0.0);
        assert!(compressibility(&t, 1.5).is_err());
    }

    #[test]
    fn sign_convention_does_not_change_free_energy() {
        let a = ThermoTable::new(&InteractionSpec::nearest_neighbor(0.5), 1).unwrap();
        let b = ThermoTable::new(
            &InteractionSpec::nearest_neighbor(0.5).with_sign(ChemicalPotentialSign::AsInHamiltonian),
            1,
        )
        .unwrap();
        for &r in &[0.2, 0.5, 0.8] {
            assert_eq!(a.excess(r, 0.4), b.excess(r, 0.4));
        }
        // density as a function of λ flips with the convention
        let fav = density_at(a.interaction(), 1, 0.3).unwrap();
        let ham = density_at(b.interaction(), 1, -0.3).unwrap();
        assert!((fav - ham).abs() < 1e-15);
    }

    #[test]
    fn bernoulli_relative_entropy_oracle() {
        // -(1/N) log P(K = ρN) under Bernoulli(ρ̄) with log-correction extrapolation
        let rho_bar: f64 = 0.5;
        let rho = 0.3;
        let g = |n: usize| -> f64 {
            let k = (rho * n as f64).round() as usize;
            let mut log_binom = 0.0;
            for i in 0..k {
                log_binom += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
            }
            let logp = log_binom + k as f64 * rho_bar.ln() + (n - k) as f64 * (1.0 - rho_bar).ln();
            -logp / n as f64
        };
        // g(N) = a + b ln N / N + c / N: eliminate b and c with three sizes
        let ns = [10_000usize, 20_000, 40_000];
        let x: Vec<[f64; 3]> = ns
            .iter()
            .map(|&n| [1.0, (n as f64).ln() / n as f64, 1.0 / n as f64])
            .collect();
        let y: Vec<f64> = ns.iter().map(|&n| g(n)).collect();
        let m = nalgebra::Matrix3::from_fn(|i, j| x[i][j]);
        let sol = m.lu().solve(&nalgebra::Vector3::from_column_slice(&y)).unwrap();
        let table = ThermoTable::new(&InteractionSpec::zero(), 1).unwrap();
        assert!((sol[0] - table.excess(rho, rho_bar)).abs() < 1e-6);
    }

    #[test]
    fn interacting_table_is_convex_and_bounded() {
        for j in [-0.5, -0.25, 0.25, 0.5] {
            let t = ThermoTable::new(&InteractionSpec::nearest_neighbor(j), 1).unwrap();
            let c = compressibility_bound(&t);
            assert!(c > 1.0 && c <= 4.0, "J={j}: C={c}");
        }
    }

    #[test]
    fn chain_compressibility_matches_correlation_sum() {
        let int = InteractionSpec::nearest_neighbor(0.5);
        let t = ThermoTable::new(&int, 1).unwrap();
        let chi = t.chi(0.5);
        // independent oracle from the spectral decomposition of the transfer matrix
        let mu = t.fprime(0.5);
        let tm = nalgebra::Matrix2::new(1.0, (0.5 * mu).exp(), (0.5 * mu).exp(), (mu - 0.5).exp());
        let eig = tm.symmetric_eigen();
        let (i0, i1) = if eig.eigenvalues[0] > eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
        let c = eig.eigenvectors[(1, i0)] * eig.eigenvectors[(1, i1)];
        let r = eig.eigenvalues[i1] / eig.eigenvalues[i0];
        let spectral = c * c * (1.0 + r) / (1.0 - r);
        assert!((chi - spectral).abs() / spectral < 1e-6);
        let corr_len = -1.0 / r.abs().ln();
        let radius = (4.0 * corr_len).ceil() as usize;
        let windowed = correlation_sum(&int, 0.5, radius.max(2), 64).unwrap();
        assert!((windowed - chi).abs() / chi < 0.02);
    }

    #[test]
    fn product_expectations() {
        let zero = InteractionSpec::zero();
        let pair = vec![vec![0i64], vec![1]];
        let sq = |o: &[bool]| ((o[0] as i32 - o[1] as i32).pow(2)) as f64;
        for rho in [0.0, 0.2, 0.5, 1.0] {
            let e = product_expectation(&zero, |o| o[0] as u8 as f64, rho, &pair, DEFAULT_RING).unwrap();
            assert!((e.value - rho).abs() < 1e-15);
            let k = product_expectation(&zero, sq, rho, &pair, DEFAULT_RING).unwrap();
            assert!((k.value - 2.0 * rho * (1.0 - rho)).abs() < 1e-15);
        }
        let big: Vec<Vec<i64>> = (0..25).map(|i| vec![i]).collect();
        assert!(product_expectation(&zero, |_| 1.0, 0.5, &big, DEFAULT_RING).is_err());
    }

    #[test]
    fn interacting_window_law_matches_ring_enumeration() {
        let int = InteractionSpec::nearest_neighbor(0.7);
        let rho = 0.35;
        let ring = 10;
        let sites = vec![vec![0i64], vec![1], vec![3]];
        let law = window_law(&int, rho, &sites, ring).unwrap();
        let mu = solve_density(0.7, rho).unwrap();
        let t = Torus::new(1, ring).unwrap();
        let mut want = vec![0.0; 8];
        let mut z = 0.0;
        for mask in 0..(1u64 << ring) {
            let c = Configuration::from_mask(mask, ring);
            let w = (mu * c.count() as f64 - hamiltonian(&int, &t, &c)).exp();
            z += w;
            let idx = (c.get(0) as usize) | (c.get(1) as usize) << 1 | (c.get(3) as usize) << 2;
            want[idx] += w;
        }
        for (p, w) in law.probabilities.iter().zip(&want) {
            assert!((p - w / z).abs() < 1e-13);
        }
    }

    #[test]
    fn canonical_measure_properties() {
        let t = Torus::new(1, 6).unwrap();
        let (states, w) = canonical_exact(&InteractionSpec::zero(), &t, 3).unwrap();
        assert_eq!(states.len(), 20);
        assert!(w.iter().all(|x| (x - 0.05).abs() < 1e-15));
        let (full, wf) = canonical_exact(&InteractionSpec::zero(), &t, 6).unwrap();
        assert_eq!(full.len(), 1);
        assert_eq!(wf, vec![1.0]);
        // second code path: count adjacent pairs from the bit string
        let ising = InteractionSpec::nearest_neighbor(1.0);
        let (states, w) = canonical_exact(&ising, &t, 3).unwrap();
        let energies: Vec<f64> = states
            .iter()
            .map(|c| {
                let b: Vec<char> = c.to_bits().chars().collect();
                (0..6).filter(|&i| b[i] == '1' && b[(i + 1) % 6] == '1').count() as f64
            })
            .collect();
        let z: f64 = energies.iter().map(|e| (-e).exp()).sum();
        for (e, p) in energies.iter().zip(&w) {
            assert!(((-e).exp() / z - p).abs() < 1e-15);
        }
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
