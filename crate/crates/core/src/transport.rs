//! Transport coefficients: the variational mobility, the diffusion coefficient
//! through the Einstein relation, and the scalar coefficient sets used by the
//! macroscopic solvers.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::dynamics::{rate_symmetric, RateFamily};
use crate::error::{Error, Result};
use crate::gibbs::{product_expectation, window_law, Bernoulli, FreeEnergy, InteractionSpec, DEFAULT_RING};
use crate::lattice::{Bond, Configuration, Torus};

/// Largest enclosing window (in sites) for the variational mobility.
pub const MAX_MOBILITY_WINDOW: usize = 20;

/// `κ^{(i)}(ρ) = μ_ρ[(η_0 - η_{e_i})²]`.
pub fn kappa(interaction: &InteractionSpec, dim: usize, rho: f64, axis: usize) -> Result<f64> {
    if axis >= dim {
        return Err(Error::InvalidArgument(format!("axis {axis} in dimension {dim}")));
    }
    let mut e = vec![0i64; dim];
    e[axis] = 1;
    let sites = vec![vec![0i64; dim], e];
    let sq = |o: &[bool]| (o[0] != o[1]) as u8 as f64;
    Ok(product_expectation(interaction, sq, rho, &sites, DEFAULT_RING)?.value)
}

/// Result of the truncated variational problem for the mobility.
#[derive(Debug, Clone, Serialize)]
pub struct MobilityEstimate {
    pub rho: f64,
    /// Support radius of the local functions in the infimum.
    pub support_radius: usize,
    /// `σ_k(ρ)` as a `d × d` matrix.
    pub sigma: Vec<Vec<f64>>,
    /// The objective at `f = 0`.
    pub sigma_zero: Vec<Vec<f64>>,
    /// `max eig(σ_0 - σ_k)`: how much the local functions lower the form.
    pub improvement: f64,
    /// Rank and condition number of the normal-equation matrix on its range.
    pub rank: usize,
    pub condition: f64,
    /// Sites in the largest enclosing window.
    pub window_sites: usize,
    /// Ring length of the windowed Gibbs measure (`None` for exact product measure).
    pub ring: Option<usize>,
}

impl MobilityEstimate {
    pub fn matrix(&self) -> DMatrix<f64> {
        let d = self.sigma.len();
        DMatrix::from_fn(d, d, |i, j| self.sigma[i][j])
    }

    pub fn zero_matrix(&self) -> DMatrix<f64> {
        let d = self.sigma.len();
        DMatrix::from_fn(d, d, |i, j| self.sigma_zero[i][j])
    }

    /// `v · σ_k v`.
    pub fn form(&self, v: &[f64]) -> f64 {
        let d = v.len();
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                acc += v[i] * self.sigma[i][j] * v[j];
            }
        }
        acc
    }
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn box_offsets(dim: usize, k: usize) -> Vec<Vec<i64>> {
    let w = 2 * k + 1;
    (0..w.pow(dim as u32))
        .map(|idx| {
            let mut rem = idx;
            (0..dim)
                .map(|_| {
                    let c = (rem % w) as i64 - k as i64;
                    rem /= w;
                    c
                })
                .collect()
        })
        .collect()
}

fn add(a: &[i64], b: &[i64]) -> Vec<i64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// `σ_k(ρ)`: the mobility with the infimum restricted to local functions
/// supported on the box of radius `k`.
///
/// For each axis `i` the objective is
/// `½ μ_ρ[c⁰_{0,e_i} (v_i (η_{e_i} - η_0) + ∇_{0,e_i} Σ_x τ_x f)²]`; only the
/// translates of `f` whose support meets the bond contribute. The quadratic
/// form in the values of `f` is minimized through its normal equations with
/// a pseudo-inverse on the kernel.
pub fn mobility_variational(
    family: &RateFamily,
    interaction: &InteractionSpec,
    dim: usize,
    rho: f64,
    k: usize,
) -> Result<MobilityEstimate> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("density {rho} outside [0, 1]")));
    }
    family.validate()?;
    let support = box_offsets(dim, k);
    let nf = 1usize << support.len();
    if support.len() > MAX_MOBILITY_WINDOW {
        return Err(Error::WindowTooLarge {
            sites: support.len(),
            limit: MAX_MOBILITY_WINDOW,
        });
    }
    let mut m = DMatrix::<f64>::zeros(nf, nf);
    let mut g = DMatrix::<f64>::zeros(nf, dim);
    let mut s0 = DMatrix::<f64>::zeros(dim, dim);
    let mut window_sites = 0;
    let mut ring_used = None;

    for axis in 0..dim {
        let origin = vec![0i64; dim];
        let mut e = vec![0i64; dim];
        e[axis] = 1;

        // translates x with (x + Λ_k) ∩ {0, e_i} ≠ ∅
        let mut translates: Vec<Vec<i64>> = Vec::new();
        for end in [&origin, &e] {
            for l in &support {
                let x: Vec<i64> = end.iter().zip(l).map(|(a, b)| a - b).collect();
                if !translates.contains(&x) {
                    translates.push(x);
                }
            }
        }

        // enclosing window: the two endpoints first, then supports and rate reads
        let mut window: Vec<Vec<i64>> = vec![origin.clone(), e.clone()];
        let mut index: HashMap<Vec<i64>, usize> = HashMap::new();
        index.insert(origin.clone(), 0);
        index.insert(e.clone(), 1);
        let mut include = |s: Vec<i64>, window: &mut Vec<Vec<i64>>| {
            if !index.contains_key(&s) {
                index.insert(s.clone(), window.len());
                window.push(s);
            }
        };
        for x in &translates {
            for l in &support {
                include(add(x, l), &mut window);
            }
        }
        // rate reads, found on an embedding torus large enough to avoid wraparound
        let reach = window
            .iter()
            .flat_map(|s| s.iter().map(|c| c.unsigned_abs() as usize))
            .max()
            .unwrap_or(0);
        let witness_reach = match family {
            RateFamily::Heatbath => 0,
            RateFamily::NeighborWeighted { witnesses, .. } => match witnesses {
                crate::dynamics::WitnessSet::Symmetric { radius }
                | crate::dynamics::WitnessSet::Trailing { radius } => *radius,
            },
        };
        let side = 2 * (reach + witness_reach + 2) + 1;
        let torus = Torus::new(dim, side)?;
        let to_offset = |site: usize| -> Vec<i64> {
            torus
                .coords(site)
                .iter()
                .map(|&c| if c > side / 2 { c as i64 - side as i64 } else { c as i64 })
                .collect()
        };
        let bond = Bond { site: 0, axis };
        for w in family.witnesses(&torus, bond) {
            include(to_offset(w), &mut window);
        }
        if !interaction.is_zero() {
            for end in [0usize, torus.head(bond)] {
                for nb in torus.neighbors(end) {
                    include(to_offset(nb), &mut window);
                }
            }
        }
        if window.len() > MAX_MOBILITY_WINDOW {
            return Err(Error::WindowTooLarge {
                sites: window.len(),
                limit: MAX_MOBILITY_WINDOW,
            });
        }
        window_sites = window_sites.max(window.len());

        let span = window
            .iter()
            .map(|s| s[0])
            .max()
            .unwrap_or(0)
            - window.iter().map(|s| s[0]).min().unwrap_or(0);
        let ring = DEFAULT_RING.max(2 * (span as usize + 1));
        let law = window_law(interaction, rho, &window, ring)?;
        if law.ring.is_some() {
            ring_used = Some(ring);
        }

        // window positions of x + λ for each translate and support site
        let positions: Vec<Vec<usize>> = translates
            .iter()
            .map(|x| support.iter().map(|l| index[&add(x, l)]).collect())
            .collect();
        let sites_on_torus: Vec<usize> = window.iter().map(|s| torus.index(s)).collect();

        let mut coeff: Vec<(usize, f64)> = Vec::with_capacity(2 * translates.len());
        for (omega, &p) in law.probabilities.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let b0 = omega & 1;
            let b1 = (omega >> 1) & 1;
            if b0 == b1 {
                // exchange is the identity: both the current and ∇f vanish
                continue;
            }
            let swapped = omega ^ 0b11;
            let mut cfg = Configuration::empty(torus.sites());
            for (bit, &site) in sites_on_torus.iter().enumerate() {
                if (omega >> bit) & 1 == 1 {
                    cfg.set(site, true);
                }
            }
            let c = rate_symmetric(family, interaction, &torus, &cfg, bond);
            let b = b1 as f64 - b0 as f64;
            let weight = p * c;
            s0[(axis, axis)] += 0.5 * weight * b * b;

            coeff.clear();
            for pos in &positions {
                let mut before = 0usize;
                let mut after = 0usize;
                for (bit, &wpos) in pos.iter().enumerate() {
                    before |= ((omega >> wpos) & 1) << bit;
                    after |= ((swapped >> wpos) & 1) << bit;
                }
                if before != after {
                    coeff.push((after, 1.0));
                    coeff.push((before, -1.0));
                }
            }
            coeff.sort_unstable_by_key(|c| c.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(coeff.len());
            for &(s, v) in &coeff {
                match merged.last_mut() {
                    Some(last) if last.0 == s => last.1 += v,
                    _ => merged.push((s, v)),
                }
            }
            merged.retain(|c| c.1 != 0.0);
            for &(s, vs) in &merged {
                g[(s, axis)] += weight * b * vs;
                for &(t, vt) in &merged {
                    m[(s, t)] += weight * vs * vt;
                }
            }
        }
    }

    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cut = smax * 1e-12;
    let kept: Vec<f64> = svd
        .singular_values
        .iter()
        .cloned()
        .filter(|&s| s > cut && s > 0.0)
        .collect();
    let rank = kept.len();
    let condition = if rank == 0 {
        1.0
    } else {
        smax / kept.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let sigma = if rank == 0 {
        s0.clone()
    } else {
        let pinv = svd
            .pseudo_inverse(cut.max(f64::MIN_POSITIVE))
            .map_err(|e| Error::Numerical(format!("pseudo-inverse failed: {e}")))?;
        let correction = g.transpose() * pinv * &g;
        let mut s = &s0 - correction * 0.5;
        // symmetrize rounding
        let st = s.transpose();
        s = (s + st) * 0.5;
        s
    };
    let diff = &s0 - &sigma;
    let improvement = SymmetricEigen::new(diff)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    Ok(MobilityEstimate {
        rho,
        support_radius: k,
        sigma: to_rows(&sigma),
        sigma_zero: to_rows(&s0),
        improvement,
        rank,
        condition,
        window_sites,
        ring: ring_used,
    })
}

/// Smallest `C` with `(1/C) Σ κ^{(i)} v_i² ≤ v·σv ≤ C Σ κ^{(i)} v_i²` at one density,
/// from the generalized eigenvalues of `σ` against `diag(κ)`.
pub fn mobility_bound(estimate: &MobilityEstimate, kappas: &[f64]) -> f64 {
    let d = kappas.len();
    if kappas.iter().any(|&k| k <= 0.0) {
        return 1.0;
    }
    let s = estimate.matrix();
    let scaled = DMatrix::from_fn(d, d, |i, j| s[(i, j)] / (kappas[i] * kappas[j]).sqrt());
    let eig = SymmetricEigen::new(scaled).eigenvalues;
    let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    hi.max(1.0 / lo).max(1.0)
}

/// The scalar mobility `σ(ρ)` of an isotropic model, stored through the
/// bounded ratio `s(ρ) = σ(ρ) / (ρ(1-ρ))`.
#[derive(Clone)]
pub enum MobilityCurve {
    /// `σ(ρ) = ρ(1-ρ)`.
    Ssep,
    /// `σ(ρ) = factor · ρ(1-ρ)`.
    Scaled(f64),
    /// A tabulated ratio `s(ρ)` on a uniform grid of `[0, 1]`, interpolated by
    /// cubic Hermite with centred-difference slopes.
    Tabulated { ratio: Vec<f64> },
    /// A user-supplied `σ(ρ)`.
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for MobilityCurve {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MobilityCurve::Ssep => write!(f, "Ssep"),
            MobilityCurve::Scaled(c) => write!(f, "Scaled({c})"),
            MobilityCurve::Tabulated { ratio } => write!(f, "Tabulated({} nodes)", ratio.len()),
            MobilityCurve::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Diagnostic for tabulated mobility data.
#[derive(Debug, Clone, Serialize)]
pub struct SmoothnessReport {
    /// Largest `|s_{i+1} - 2 s_i + s_{i-1}|` relative to the range of `s`.
    pub max_relative_second_difference: f64,
    pub smooth: bool,
}

impl MobilityCurve {
    /// Tabulates `σ_k` of a variational model at `nodes` uniform densities,
    /// using `ρ(1-ρ)`-normalized values; the endpoints take the limits from
    /// the neighbouring nodes.
    pub fn variational(
        family: &RateFamily,
        interaction: &InteractionSpec,
        k: usize,
        nodes: usize,
    ) -> Result<(Self, SmoothnessReport)> {
        if nodes < 5 {
            return Err(Error::InvalidArgument("need at least 5 mobility nodes".into()));
        }
        let h = 1.0 / (nodes - 1) as f64;
        let mut ratio = vec![0.0; nodes];
        for (i, r) in ratio.iter_mut().enumerate().take(nodes - 1).skip(1) {
            let rho = i as f64 * h;
            let est = mobility_variational(family, interaction, 1, rho, k)?;
            *r = est.sigma[0][0] / (rho * (1.0 - rho));
        }
        // quadratic extrapolation to the endpoints
        ratio[0] = 3.0 * ratio[1] - 3.0 * ratio[2] + ratio[3];
        ratio[nodes - 1] = 3.0 * ratio[nodes - 2] - 3.0 * ratio[nodes - 3] + ratio[nodes - 4];
        let report = smoothness(&ratio);
        Ok((MobilityCurve::Tabulated { ratio }, report))
    }

    /// `s(ρ) = σ(ρ)/(ρ(1-ρ))` (the limit at the endpoints).
    pub fn ratio(&self, rho: f64) -> f64 {
        match self {
            MobilityCurve::Ssep => 1.0,
            MobilityCurve::Scaled(c) => *c,
            MobilityCurve::Tabulated { ratio } => interpolate(ratio, rho),
            MobilityCurve::Custom(f) => {
                let r = rho.clamp(1e-9, 1.0 - 1e-9);
                f(r) / (r * (1.0 - r))
            }
        }
    }

    pub fn sigma(&self, rho: f64) -> f64 {
        match self {
            MobilityCurve::Custom(f) => f(rho),
            _ => self.ratio(rho) * rho * (1.0 - rho),
        }
    }
}

fn smoothness(values: &[f64]) -> SmoothnessReport {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = (hi - lo).max(1e-300);
    let worst = values
        .windows(3)
        .map(|w| (w[2] - 2.0 * w[1] + w[0]).abs())
        .fold(0.0, f64::max);
    let rel = if hi - lo < 1e-12 { 0.0 } else { worst / range };
    SmoothnessReport {
        max_relative_second_difference: rel,
        smooth: rel < 0.25,
    }
}

fn interpolate(nodes: &[f64], rho: f64) -> f64 {
    let n = nodes.len();
    let h = 1.0 / (n - 1) as f64;
    let x = (rho.clamp(0.0, 1.0) / h).min((n - 1) as f64);
    let i = (x.floor() as usize).min(n - 2);
    let t = x - i as f64;
    let slope = |j: usize| -> f64 {
        if j == 0 {
            nodes[1] - nodes[0]
        } else if j == n - 1 {
            nodes[n - 1] - nodes[n - 2]
        } else {
            0.5 * (nodes[j + 1] - nodes[j - 1])
        }
    };
    let (y0, y1, d0, d1) = (nodes[i], nodes[i + 1], slope(i), slope(i + 1));
    let t2 = t * t;
    let t3 = t2 * t;
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * d0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * d1
}

/// Scalar transport coefficients `σ`, `D = σ f''` of an isotropic model.
#[derive(Clone)]
pub struct Coefficients {
    mobility: MobilityCurve,
    thermo: Arc<dyn FreeEnergy>,
}

impl std::fmt::Debug for Coefficients {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Coefficients")
            .field("mobility", &self.mobility)
            .finish_non_exhaustive()
    }
}

impl Coefficients {
    /// Simple exclusion: `σ = ρ(1-ρ)`, `D = 1`.
    pub fn ssep() -> Self {
        Coefficients {
            mobility: MobilityCurve::Ssep,
            thermo: Arc::new(Bernoulli),
        }
    }

    pub fn new(mobility: MobilityCurve, thermo: Arc<dyn FreeEnergy>) -> Self {
        Coefficients { mobility, thermo }
    }

    pub fn thermo(&self) -> &dyn FreeEnergy {
        self.thermo.as_ref()
    }

    pub fn mobility(&self) -> &MobilityCurve {
        &self.mobility
    }

    pub fn sigma(&self, rho: f64) -> f64 {
        self.mobility.sigma(rho.clamp(0.0, 1.0))
    }

    /// `dσ/dρ`.
    pub fn sigma_slope(&self, rho: f64) -> f64 {
        match self.mobility {
            MobilityCurve::Ssep => 1.0 - 2.0 * rho,
            MobilityCurve::Scaled(c) => c * (1.0 - 2.0 * rho),
            _ => {
                let h = 1e-6;
                let a = (rho - h).max(0.0);
                let b = (rho + h).min(1.0);
                (self.sigma(b) - self.sigma(a)) / (b - a)
            }
        }
    }

    /// `D(ρ) = σ(ρ) f''(ρ)`, continued to `ρ ∈ {0, 1}` by its limits.
    pub fn diffusion(&self, rho: f64) -> f64 {
        let r = rho.clamp(0.0, 1.0);
        match &self.mobility {
            MobilityCurve::Ssep if self.is_bernoulli() => 1.0,
            MobilityCurve::Custom(f) => {
                let rc = r.clamp(1e-9, 1.0 - 1e-9);
                f(rc) * self.thermo.fsecond(rc)
            }
            m => m.ratio(r) * self.normalized_fsecond(r),
        }
    }

    fn is_bernoulli(&self) -> bool {
        let r = 0.3;
        (self.thermo.fsecond(r) * r * (1.0 - r) - 1.0).abs() < 1e-12
            && (self.thermo.fsecond(0.77) * 0.77 * 0.23 - 1.0).abs() < 1e-12
    }

    // ρ(1-ρ) f''(ρ), which tends to 1 at both ends for lattice gases
    fn normalized_fsecond(&self, rho: f64) -> f64 {
        if rho <= 0.0 || rho >= 1.0 {
            return 1.0;
        }
        rho * (1.0 - rho) * self.thermo.fsecond(rho)
    }
}

/// `D(ρ)` with the argument checks of the Einstein relation.
pub fn diffusion(coefficients: &Coefficients, rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "diffusion requested at density {rho} outside (0, 1)"
        )));
    }
    Ok(coefficients.diffusion(rho))
}

/// Writes `rho,sigma,D` rows on a uniform grid.
pub fn write_coefficients_csv<W: Write>(coefficients: &Coefficients, points: usize, mut w: W) -> Result<()> {
    writeln!(w, "rho,sigma_00,D_00")?;
    for i in 1..points {
        let rho = i as f64 / points as f64;
        writeln!(
            w,
            "{rho:.16e},{:.16e},{:.16e}",
            coefficients.sigma(rho),
            coefficients.diffusion(rho)
        )?;
    }
    Ok(())
}
