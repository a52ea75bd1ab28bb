//! The invariant suite: fast checks of the structural properties of every
//! module at fixed small sizes.

use std::f64::consts::PI;
use std::time::Instant;

use serde::Serialize;

use crate::coarse::{empirical_density, mollify, DensityField, Path};
use crate::dynamics::{
    generator_matrix, kmc_run, quantile_configuration, reference_gibbs, run_ensemble, stationary_exact, Generator,
    Kmc, RateFamily, RateModel,
};
use crate::error::Result;
use crate::field::{FieldSpec, FourierSeries};
use crate::gibbs::{energy_diff, Bernoulli, InteractionSpec, ThermoTable};
use crate::lattice::{exchange, shift, Bond, Configuration, Torus};
use crate::ldp::{quasi_potential, rate_functional, RateOptions};
use crate::pde::{solve_hydro, stationary_profile, PdeProblem};
use crate::transport::{mobility_variational, Coefficients};

#[derive(Debug, Clone, Copy, Default)]
pub struct CheckOptions {
    /// Mutation hook: multiplies one class of rates by 1.1, which must make the
    /// detailed-balance check fail.
    pub corrupt_rates: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl CheckReport {
    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

type Check = fn(&CheckOptions) -> Result<(bool, String)>;

const CHECKS: &[(&str, Check)] = &[
    ("particle conservation", particle_conservation),
    ("detailed balance", detailed_balance),
    ("local detailed balance", local_detailed_balance),
    ("exchange and shift group laws", group_laws),
    ("gradient stationary invariance", gradient_invariance),
    ("incremental rate table", incremental_rates),
    ("determinism", determinism),
    ("empirical density and mollifier", coarse_graining),
    ("Legendre convexity", legendre_convexity),
    ("mobility monotonicity", mobility_monotone),
    ("PDE mass conservation", pde_mass),
    ("PDE maximum principle", pde_maximum_principle),
    ("stationary profile ordering", profile_ordering),
    ("rate functional null on hydrodynamic paths", rate_null),
    ("quasi-potential minimum and convexity", quasi_potential_shape),
];

/// Runs every check; a check that returns an error counts as failed.
pub fn run_checks(options: &CheckOptions) -> CheckReport {
    let checks: Vec<CheckResult> = CHECKS
        .iter()
        .map(|(name, f)| {
            let start = Instant::now();
            let (passed, detail) = match f(options) {
                Ok(r) => r,
                Err(e) => (false, format!("error: {e}")),
            };
            CheckResult {
                name,
                passed,
                detail,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect();
    CheckReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}

fn interacting_model(torus: Torus, field: FieldSpec) -> Result<RateModel> {
    RateModel::new(
        torus,
        RateFamily::neighbor_weighted(0.5),
        InteractionSpec::nearest_neighbor(0.4),
        field,
    )
}

fn particle_conservation(_: &CheckOptions) -> Result<(bool, String)> {
    let model = interacting_model(Torus::new(2, 6)?, FieldSpec::constant(&[1.0, -0.5]))?;
    let init = quantile_configuration(model.torus(), &[0.4; 36])?;
    let tr = kmc_run(&model, None, &init, &[0.01, 0.05, 0.1], 3, 0)?;
    let ok = tr.snapshots.iter().all(|s| s.count() == init.count());
    Ok((ok, format!("{} events, {} particles", tr.events, init.count())))
}

fn detailed_balance(options: &CheckOptions) -> Result<(bool, String)> {
    let torus = Torus::new(1, 8)?;
    let u = FourierSeries::cosine(1, 0, 1, 0.7);
    let interaction = InteractionSpec::nearest_neighbor(0.4);
    let model = RateModel::new(
        torus.clone(),
        RateFamily::neighbor_weighted(0.5),
        interaction,
        FieldSpec::conservative(1, u.clone()),
    )?;
    let generator = if options.corrupt_rates {
        Generator::from_rates(&torus, 4, |c, b| {
            let r = model.asymmetric(c, torus.bond_index(b.site, b.axis));
            if c.get(b.site) && b.site % 2 == 0 {
                1.1 * r
            } else {
                r
            }
        })?
    } else {
        generator_matrix(&model, 4)?
    };
    let pi = reference_gibbs(&interaction, &u, &torus, &generator.states);
    let residual = generator.detailed_balance_residual(&pi);
    Ok((residual <= 1e-12, format!("residual {residual:e} at N=8, K=4")))
}

fn local_detailed_balance(_: &CheckOptions) -> Result<(bool, String)> {
    let torus = Torus::new(2, 4)?;
    let field = FieldSpec::decomposed(
        2,
        FourierSeries::cosine(2, 0, 1, 0.5),
        vec![0.0, 1.0],
        FourierSeries::default(),
    )?;
    let model = interacting_model(torus.clone(), field)?;
    let mut worst: f64 = 0.0;
    for m in (0u64..1 << 16).step_by(7) {
        let c = Configuration::from_mask(m, 16);
        for (i, &b) in torus.bonds().iter().enumerate() {
            if c.get(b.site) == c.get(torus.head(b)) {
                continue;
            }
            let after = exchange(&torus, &c, b);
            let jump = c.occ(b.site) as f64 - c.occ(torus.head(b)) as f64;
            let log_ratio = (model.asymmetric(&c, i) / model.asymmetric(&after, i)).ln();
            let expected = -energy_diff(model.interaction(), &torus, &c, b) + model.work(i) * jump;
            worst = worst.max((log_ratio - expected).abs());
        }
    }
    Ok((worst < 1e-12, format!("max log-ratio error {worst:e}")))
}

fn group_laws(_: &CheckOptions) -> Result<(bool, String)> {
    let torus = Torus::new(2, 5)?;
    let occ: Vec<bool> = (0..25).map(|x| (x * 11 + 3) % 7 < 3).collect();
    let c = Configuration::from_occupancy(&occ);
    let mut ok = true;
    for &b in torus.bonds() {
        ok &= exchange(&torus, &exchange(&torus, &c, b), b) == c;
    }
    for z in 0..torus.sites() {
        for w in [1, 7, 13] {
            ok &= shift(&torus, &shift(&torus, &c, z), w) == shift(&torus, &c, torus.translate(z, w));
        }
        ok &= shift(&torus, &shift(&torus, &c, z), torus.negate(z)) == c;
        // exchange commutes with translation of the bond
        let b = Bond { site: 6, axis: 1 };
        let moved = Bond {
            site: torus.translate(6, torus.negate(z)),
            axis: 1,
        };
        ok &= shift(&torus, &exchange(&torus, &c, b), z) == exchange(&torus, &shift(&torus, &c, z), moved);
    }
    Ok((ok, "exchange involution, shift group law, covariance".into()))
}

fn gradient_invariance(_: &CheckOptions) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for e in [0.0, 1.0, 2.0] {
        let model = RateModel::new(
            Torus::new(1, 6)?,
            RateFamily::Heatbath,
            InteractionSpec::zero(),
            FieldSpec::constant(&[e]),
        )?;
        let st = stationary_exact(&generator_matrix(&model, 3)?)?;
        let u = 1.0 / st.distribution.len() as f64;
        worst = worst.max(st.distribution.iter().map(|p| (p - u).abs()).fold(0.0, f64::max));
    }
    Ok((worst <= 1e-10, format!("max deviation from uniform {worst:e}")))
}

fn incremental_rates(_: &CheckOptions) -> Result<(bool, String)> {
    let model = interacting_model(Torus::new(2, 5)?, FieldSpec::constant(&[0.5, 1.0]))?;
    let init = quantile_configuration(model.torus(), &[0.5; 25])?;
    let mut kmc = Kmc::new(&model, None, init, 9, 1)?;
    let mut done = 0;
    while done < 5000 {
        if kmc.step(f64::INFINITY)? {
            done += 1;
        }
    }
    let ok = kmc.rates() == kmc.fresh_rates().as_slice();
    Ok((ok, "rate table after 5000 events equals a fresh rebuild".into()))
}

fn determinism(_: &CheckOptions) -> Result<(bool, String)> {
    let model = interacting_model(Torus::new(1, 32)?, FieldSpec::constant(&[1.0]))?;
    let init = quantile_configuration(model.torus(), &[0.3; 32])?;
    let a = run_ensemble(&model, None, &init, &[0.02, 0.04], 17, 4)?;
    let b = run_ensemble(&model, None, &init, &[0.02, 0.04], 17, 4)?;
    let distinct = a[0].snapshots != a[1].snapshots;
    Ok((a == b && distinct, "ensembles reproduce; streams differ".into()))
}

fn coarse_graining(_: &CheckOptions) -> Result<(bool, String)> {
    let torus = Torus::new(2, 8)?;
    let occ: Vec<bool> = (0..64).map(|x| x % 3 == 0).collect();
    let c = Configuration::from_occupancy(&occ);
    let d = empirical_density(&torus, &c);
    let mass_ok = (d.mass() - c.count() as f64 / 64.0).abs() < 1e-15;
    let smooth = DensityField::sample(1, 128, |r| 0.5 + 0.4 * (2.0 * PI * r[0]).sin())?;
    let m = mollify(&smooth, 0.5, 0.2)?;
    let moll_ok = (m.mass() - smooth.mass()).abs() < 1e-13 && m.max() <= smooth.max() + 1e-15;
    Ok((mass_ok && moll_ok, "mass K/N^d; mollifier keeps mass and range".into()))
}

fn legendre_convexity(_: &CheckOptions) -> Result<(bool, String)> {
    for j in [-0.5, 0.0, 0.5] {
        let t = ThermoTable::new(&InteractionSpec::nearest_neighbor(j), 1)?;
        t.check_convexity()?;
        t.check_legendre()?;
    }
    Ok((true, "J ∈ {-0.5, 0, 0.5}".into()))
}

fn mobility_monotone(_: &CheckOptions) -> Result<(bool, String)> {
    let fam = RateFamily::neighbor_weighted(0.5);
    let z = InteractionSpec::zero();
    let s: Vec<f64> = (0..3)
        .map(|k| mobility_variational(&fam, &z, 1, 0.4, k).map(|e| e.sigma[0][0]))
        .collect::<Result<_>>()?;
    Ok((s[1] <= s[0] && s[2] <= s[1], format!("σ_0..2(0.4) = {s:?}")))
}

fn drifting_problem() -> Result<(PdeProblem, f64, f64)> {
    let field = FieldSpec::decomposed(
        2,
        FourierSeries::cosine(2, 1, 1, 0.4),
        vec![1.0, 0.0],
        FourierSeries::default(),
    )?;
    let init = DensityField::sample(2, 16, |r| 0.5 + 0.3 * (2.0 * PI * r[0]).cos() * (2.0 * PI * r[1]).sin())?;
    let (lo, hi) = (init.min(), init.max());
    Ok((PdeProblem::new(Coefficients::ssep(), field, init, 0.05, 5), lo, hi))
}

fn pde_mass(_: &CheckOptions) -> Result<(bool, String)> {
    let (p, _, _) = drifting_problem()?;
    let s = solve_hydro(&p, None)?;
    Ok((s.report.mass_drift <= 1e-12, format!("drift {:e}", s.report.mass_drift)))
}

fn pde_maximum_principle(_: &CheckOptions) -> Result<(bool, String)> {
    let (p, lo, hi) = drifting_problem()?;
    let s = solve_hydro(&p, None)?;
    let ok = s.report.min >= lo - 1e-12 && s.report.max <= hi + 1e-12;
    Ok((ok, format!("range [{}, {}] within [{lo}, {hi}]", s.report.min, s.report.max)))
}

fn profile_ordering(_: &CheckOptions) -> Result<(bool, String)> {
    let table = ThermoTable::new(&InteractionSpec::nearest_neighbor(0.3), 1)?;
    let u = FourierSeries::cosine(1, 0, 1, 0.5);
    let mut prev = stationary_profile(0.1, &u, &table, 1, 32)?;
    let mut ok = true;
    for k in 2..10 {
        let next = stationary_profile(k as f64 / 10.0, &u, &table, 1, 32)?;
        ok &= prev.values().iter().zip(next.values()).all(|(a, b)| a < b);
        prev = next;
    }
    Ok((ok, "γ increases pointwise with the mass".into()))
}

fn rate_null(_: &CheckOptions) -> Result<(bool, String)> {
    let init = DensityField::sample(1, 64, |r| 0.5 + 0.2 * (2.0 * PI * r[0]).sin())?;
    let field = FieldSpec::constant(&[1.0]);
    let p = PdeProblem::new(Coefficients::ssep(), field.clone(), init.clone(), 0.02, 16);
    let path = solve_hydro(&p, None)?.path;
    let ev = rate_functional(&path, Some(&init), &Coefficients::ssep(), &field, &RateOptions::default())?;
    Ok((ev.value >= 0.0 && ev.value < 1e-4, format!("I = {:e}", ev.value)))
}

fn quasi_potential_shape(_: &CheckOptions) -> Result<(bool, String)> {
    let u = FourierSeries::cosine(1, 0, 1, 0.3);
    let gamma = stationary_profile(0.5, &u, &Bernoulli, 1, 64)?;
    let bump = DensityField::sample(1, 64, |r| 0.5 + 0.3 * (2.0 * PI * r[0]).sin())?;
    let line = |s: f64| -> Result<f64> {
        let v: Vec<f64> = gamma
            .values()
            .iter()
            .zip(bump.values())
            .map(|(g, b)| (1.0 - s) * g + s * b)
            .collect();
        let rho = DensityField::new(1, 64, v)?;
        quasi_potential(&rho, rho.mass(), &u, &Bernoulli)
    };
    let values: Vec<f64> = (0..=10).map(|k| line(k as f64 / 10.0)).collect::<Result<_>>()?;
    let at_min = values[0].abs() < 1e-14 && values[1..].iter().all(|v| *v > 0.0);
    let convex = values.windows(3).all(|w| w[2] - 2.0 * w[1] + w[0] >= -1e-14);
    let _ = Path::new(vec![0.0], vec![gamma])?;
    Ok((at_min && convex, "zero only at γ; convex along a segment".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let r = run_checks(&CheckOptions::default());
        for c in &r.checks {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn corrupted_rates_fail_detailed_balance() {
        let r = run_checks(&CheckOptions { corrupt_rates: true });
        let failed: Vec<&str> = r.failures().map(|c| c.name).collect();
        assert_eq!(failed, vec!["detailed balance"]);
    }
}
