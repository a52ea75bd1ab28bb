//! Acceptance criteria 1 to 11. Prints one PASS/FAIL line per criterion and
//! exits nonzero when any criterion fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use kawasaki::check::{run_checks, CheckOptions};
use kawasaki::coarse::{ensemble_mean, DensityField, Path};
use kawasaki::config::ExperimentConfig;
use kawasaki::dynamics::{
    generator_matrix, quantile_configuration, run_ensemble, stationary_exact, RateFamily, RateModel,
};
use kawasaki::experiments::{hydro_compare, Sink};
use kawasaki::field::{FieldSpec, FourierSeries, StaticPotential, TimeField};
use kawasaki::gibbs::{compressibility_bound, Bernoulli, FreeEnergy, InteractionSpec, ThermoTable};
use kawasaki::lattice::{exchange, Configuration, Torus};
use kawasaki::ldp::{
    controlled_field, duality_defect, lyapunov_series, optimal_exit_path, quadratic_cost, rate_functional,
    ExitPolicy, RateOptions,
};
use kawasaki::pde::{solve_adjoint, solve_hydro, stationary_profile, uniform_times, PdeProblem};
use kawasaki::transport::{mobility_variational, Coefficients};

type Outcome = Result<(bool, String), String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// `exp(-H(η) - Σ_x U(x/N) η_x)` normalized over `states`, computed site by site.
fn gibbs_oracle(coupling: f64, u: &dyn Fn(f64) -> f64, n: usize, states: &[Configuration]) -> Vec<f64> {
    let energy = |c: &Configuration| {
        let mut e = 0.0;
        for x in 0..n {
            if c.get(x) {
                e += u(x as f64 / n as f64);
                if c.get((x + 1) % n) {
                    e += coupling;
                }
            }
        }
        e
    };
    let w: Vec<f64> = states.iter().map(|c| (-energy(c)).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

fn max_deviation(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn gradient_invariance() -> Outcome {
    let mut worst: f64 = 0.0;
    for e in [0.0, 1.0, 2.0] {
        for (n, k) in [(4, 2), (6, 3), (8, 4)] {
            let model = RateModel::new(
                Torus::new(1, n).map_err(err)?,
                RateFamily::Heatbath,
                InteractionSpec::zero(),
                FieldSpec::constant(&[e]),
            )
            .map_err(err)?;
            let g = generator_matrix(&model, k).map_err(err)?;
            let st = stationary_exact(&g).map_err(err)?;
            let uniform = vec![1.0 / g.len() as f64; g.len()];
            worst = worst.max(max_deviation(&st.distribution, &uniform));
        }
    }
    Ok((worst <= 1e-10, format!("max deviation from uniform {worst:.3e} (limit 1e-10)")))
}

fn conservative_reversibility() -> Outcome {
    let n = 8;
    let torus = Torus::new(1, n).map_err(err)?;
    let coupling = 0.4;
    let potential = FourierSeries::cosine(1, 0, 1, 0.7);
    let u = |r: f64| 0.7 * (2.0 * PI * r).cos();
    let mut worst: f64 = 0.0;
    for family in [RateFamily::Heatbath, RateFamily::neighbor_weighted(0.5)] {
        let model = RateModel::new(
            torus.clone(),
            family,
            InteractionSpec::nearest_neighbor(coupling),
            FieldSpec::conservative(1, potential.clone()),
        )
        .map_err(err)?;
        let g = generator_matrix(&model, 4).map_err(err)?;
        let pi = gibbs_oracle(coupling, &u, n, &g.states);
        for (i, c) in g.states.iter().enumerate() {
            for (b_index, &b) in torus.bonds().iter().enumerate() {
                let after = exchange(&torus, c, b);
                if after == *c {
                    continue;
                }
                let j = g.states.iter().position(|s| *s == after).ok_or("state missing")?;
                let flow = pi[i] * model.asymmetric(c, b_index) - pi[j] * model.asymmetric(&after, b_index);
                worst = worst.max(flow.abs());
            }
        }
    }
    Ok((worst <= 1e-12, format!("detailed-balance residual {worst:.3e} at N=8, K=4 (limit 1e-12)")))
}

fn non_gradient_signature() -> Outcome {
    let model = RateModel::new(
        Torus::new(1, 6).map_err(err)?,
        RateFamily::neighbor_weighted(0.5),
        InteractionSpec::zero(),
        FieldSpec::constant(&[1.0]),
    )
    .map_err(err)?;
    let g = generator_matrix(&model, 3).map_err(err)?;
    let st = stationary_exact(&g).map_err(err)?;
    let canonical = gibbs_oracle(0.0, &|_| 0.0, 6, &g.states);
    let dev = max_deviation(&st.distribution, &canonical);
    Ok((dev > 1e-6, format!("deviation from canonical Gibbs {dev:.3e} (must exceed 1e-6)")))
}

fn hydrodynamic_convergence() -> Outcome {
    let config = ExperimentConfig::from_toml(
        r#"
[model]
dim = 1
side = 256

[field]
mode = "constant"
constant = [1.0]

[run]
horizon = 0.1
trajectories = 400
seed = 20240601
observations = 1
profile = [[1, 0.0, 0.25]]

[numerics]
grid = 512
comparison_grid = 64
ladder = [64, 128, 256]

[output]
formats = ["json"]
"#,
    )
    .map_err(err)?;
    let dir = tempfile::tempdir().map_err(err)?;
    let sink = Sink::new(dir.path(), "hydro-compare", &config).map_err(err)?;
    let report = hydro_compare(&config, &sink).map_err(err)?;
    let errors: Vec<f64> = report.rows.iter().map(|r| *r.l1.last().unwrap()).collect();
    let at_256 = *errors.last().unwrap();
    let masses_agree = report.rows.iter().all(|r| (r.micro_mass - r.macro_mass).abs() < 1e-12);
    Ok((
        at_256 <= 0.03 && report.decreasing && masses_agree,
        format!(
            "L1 at N=64,128,256: {:.4}, {:.4}, {:.4} (limit 0.03 at 256, strictly decreasing)",
            errors[0], errors[1], errors[2]
        ),
    ))
}

fn mobility_oracle() -> Outcome {
    let zero = InteractionSpec::zero();
    let mut worst_value: f64 = 0.0;
    let mut worst_gain: f64 = 0.0;
    for k in [1, 2] {
        let e = mobility_variational(&RateFamily::Heatbath, &zero, 1, 0.3, k).map_err(err)?;
        worst_value = worst_value.max((e.sigma[0][0] - 0.3 * 0.7).abs());
        worst_gain = worst_gain.max(e.improvement.abs());
    }
    let family = RateFamily::neighbor_weighted(0.5);
    let s0 = mobility_variational(&family, &zero, 1, 0.5, 0).map_err(err)?;
    let s1 = mobility_variational(&family, &zero, 1, 0.5, 1).map_err(err)?;
    let decrease = s0.sigma[0][0] - s1.sigma[0][0];
    Ok((
        worst_value <= 1e-12 && worst_gain < 1e-12 && decrease >= 1e-6,
        format!(
            "|σ(0.3)-0.21| {worst_value:.1e}, improvement {worst_gain:.1e}; non-gradient σ_0-σ_1 at 0.5 = {decrease:.3e}"
        ),
    ))
}

fn thermodynamics_oracle() -> Outcome {
    let table = ThermoTable::new(&InteractionSpec::zero(), 1).map_err(err)?;
    let excess = table.excess(0.3, 0.5);
    let expected = 0.3 * 0.6f64.ln() + 0.7 * 1.4f64.ln();
    let chi = table.chi(0.5);
    let mut worst_c: f64 = 0.0;
    for j in [-0.5, -0.25, 0.0, 0.25, 0.5] {
        let t = ThermoTable::new(&InteractionSpec::nearest_neighbor(j), 1).map_err(err)?;
        worst_c = worst_c.max(compressibility_bound(&t));
    }
    let f_err = (excess - expected).abs();
    let chi_err = (chi - 0.25).abs();
    Ok((
        f_err <= 1e-6 && chi_err <= 1e-8 && worst_c <= 4.0,
        format!("|f_0.5(0.3) - oracle| {f_err:.1e}, |χ(0.5) - 0.25| {chi_err:.1e}, C = {worst_c:.4} for |J| ≤ 0.5"),
    ))
}

fn rate_null_and_quadratic_response() -> Outcome {
    let field = FieldSpec::constant(&[1.0]);
    let coef = Coefficients::ssep();
    let mut nulls = Vec::new();
    for m in [64usize, 128, 256] {
        let init = DensityField::cell_average(1, m, |r| 0.5 + 0.2 * (2.0 * PI * r[0]).sin()).map_err(err)?;
        let p = PdeProblem::new(coef.clone(), field.clone(), init.clone(), 0.1, m / 2);
        let path = solve_hydro(&p, None).map_err(err)?.path;
        nulls.push(rate_functional(&path, Some(&init), &coef, &field, &RateOptions::default()).map_err(err)?.value);
    }
    let orders: Vec<f64> = nulls.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let m = 256;
    let h = FourierSeries::sine(1, 0, 1, 0.2);
    let init = DensityField::cell_average(1, m, |r| 0.5 + 0.2 * (2.0 * PI * r[0]).sin()).map_err(err)?;
    let p = PdeProblem::new(coef.clone(), field.clone(), init.clone(), 0.1, m / 2);
    let driven = solve_hydro(&p, Some(&StaticPotential(h.scaled(2.0)))).map_err(err)?.path;
    let rate = rate_functional(&driven, Some(&init), &coef, &field, &RateOptions::default()).map_err(err)?.value;
    let cost = quadratic_cost(&driven, &coef, &StaticPotential(h)).map_err(err)?;
    let rel = (rate - cost).abs() / cost;
    Ok((
        nulls[2] <= 1e-4 && orders.iter().all(|o| *o >= 1.0) && rel <= 0.01,
        format!(
            "I(hydro) at M=64,128,256: {:.2e}, {:.2e}, {:.2e} (orders {:.2}, {:.2}); controlled I {rate:.6e} vs ∫⟨∇H,σ∇H⟩ {cost:.6e}, rel {rel:.2e}",
            nulls[0], nulls[1], nulls[2], orders[0], orders[1]
        ),
    ))
}

/// Largest `L¹` distance between two relaxation paths at their common output times.
fn relaxation_gap(a: &Path, b: &Path) -> Result<f64, String> {
    let ra = a.reversed();
    let rb = b.reversed();
    let mut gap: f64 = 0.0;
    for (sa, sb) in ra.slices.iter().zip(&rb.slices) {
        gap = gap.max(sa.l1_distance(sb).map_err(err)?);
    }
    Ok(gap)
}

fn quasi_potential_identity() -> Outcome {
    let coef = Coefficients::ssep();
    let m = 256;
    let u = FourierSeries::cosine(1, 0, 1, 0.3);
    let field = FieldSpec::conservative(1, u.clone());
    let gamma = stationary_profile(0.5, &u, &Bernoulli, 1, m).map_err(err)?;
    let bumps: [&dyn Fn(f64) -> f64; 2] = [&|r| 0.15 * (2.0 * PI * r).sin(), &|r| 0.1 * (4.0 * PI * r).cos()];
    let mut rel_1d = Vec::new();
    for bump in bumps {
        let v: Vec<f64> = gamma
            .values()
            .iter()
            .enumerate()
            .map(|(i, g)| g + bump(gamma.center(i)[0]))
            .collect();
        let target = DensityField::new(1, m, v).map_err(err)?;
        let plan = optimal_exit_path(&target, &field, &Bernoulli, &coef, &ExitPolicy::default()).map_err(err)?;
        let rate = plan.rate.ok_or("exit rate missing")?.value;
        rel_1d.push((rate - plan.value).abs() / plan.value);
    }

    let m2 = 64;
    let u2 = FourierSeries::cosine(2, 0, 1, 0.3);
    // away from ρ = 1/2, where σ' vanishes and Ẽ cannot transport a perturbation
    let gamma2 = stationary_profile(0.3, &u2, &Bernoulli, 2, m2).map_err(err)?;
    let v: Vec<f64> = gamma2
        .values()
        .iter()
        .enumerate()
        .map(|(i, g)| g + 0.1 * (2.0 * PI * gamma2.center(i)[1]).sin())
        .collect();
    let target = DensityField::new(2, m2, v).map_err(err)?;
    let policy = ExitPolicy {
        output_dt: Some(4.0 / (m2 * m2) as f64),
        ..ExitPolicy::default()
    };
    let plain = FieldSpec::conservative(2, u2.clone());
    let stirred = FieldSpec::decomposed(2, u2, vec![0.0, 0.0], FourierSeries::cosine(2, 0, 1, 0.6)).map_err(err)?;
    let p0 = optimal_exit_path(&target, &plain, &Bernoulli, &coef, &policy).map_err(err)?;
    let p1 = optimal_exit_path(&target, &stirred, &Bernoulli, &coef, &policy).map_err(err)?;
    let i0 = p0.rate.as_ref().ok_or("exit rate missing")?.value;
    let i1 = p1.rate.as_ref().ok_or("exit rate missing")?.value;
    let spread = (i1 - i0).abs() / i0;
    let gap = relaxation_gap(&p0.path, &p1.path)?;
    let path_tolerance = 10.0 * policy.tolerance;
    Ok((
        rel_1d.iter().all(|r| *r <= 0.02) && spread <= 0.02 && gap > path_tolerance,
        format!(
            "1D |I-F|/F: {:.2e}, {:.2e}; 2D I with/without Ẽ {i1:.5e}/{i0:.5e} (rel {spread:.2e}), path L1 gap {gap:.2e} (> {path_tolerance:.0e})",
            rel_1d[0], rel_1d[1]
        ),
    ))
}

fn duality_and_lyapunov() -> Outcome {
    let u = FourierSeries::cosine(1, 0, 1, 0.3);
    let field = FieldSpec::conservative(1, u.clone());
    let coef = Coefficients::ssep();
    let mut duality = Vec::new();
    let mut lyapunov = Vec::new();
    for m in [64usize, 128, 256] {
        let gamma = stationary_profile(0.5, &u, &Bernoulli, 1, m).map_err(err)?;
        let horizon = 0.125;
        let times = uniform_times(horizon, m / 2);
        let slices = times
            .iter()
            .map(|&t| {
                let a = 0.15 * (1.0 + (2.0 * PI * t / horizon).sin());
                let v = gamma
                    .values()
                    .iter()
                    .enumerate()
                    .map(|(i, g)| {
                        let r = gamma.center(i)[0];
                        g + a * (2.0 * PI * r).sin() + 0.05 * (t / horizon) * (4.0 * PI * r).cos()
                    })
                    .collect();
                DensityField::new(1, m, v)
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(err)?;
        let path = Path::new(times, slices).map_err(err)?;
        duality.push(duality_defect(&path, &field, &coef, &Bernoulli, &RateOptions::default()).map_err(err)?.defect);
        let start = DensityField::sample(1, m, |r| 0.5 + 0.2 * (2.0 * PI * r[0]).sin()).map_err(err)?;
        let relax = solve_adjoint(&start, &coef, &field, 0.1, m / 5).map_err(err)?;
        let series = lyapunov_series(&relax.path, &u, &Bernoulli, &coef).map_err(err)?;
        lyapunov.push(series.iter().filter_map(|p| p.defect).fold(0.0, f64::max));
    }
    let factors = |v: &[f64]| v.windows(2).map(|w| w[0] / w[1]).collect::<Vec<f64>>();
    let fd = factors(&duality);
    let fl = factors(&lyapunov);
    Ok((
        duality[2] <= 1e-3 && lyapunov[2] <= 1e-3 && fd.iter().chain(&fl).all(|f| *f >= 3.0),
        format!(
            "duality defect {:.2e}, {:.2e}, {:.2e} (factors {:.2}, {:.2}); Lyapunov defect {:.2e}, {:.2e}, {:.2e} (factors {:.2}, {:.2})",
            duality[0], duality[1], duality[2], fd[0], fd[1], lyapunov[0], lyapunov[1], lyapunov[2], fl[0], fl[1]
        ),
    ))
}

fn microscopic_steering() -> Outcome {
    let horizon = 0.1;
    let m = 128;
    let intervals = 100;
    let coef = Coefficients::ssep();
    let field = FieldSpec::zero(1);
    let times = uniform_times(horizon, intervals);
    let slices = times
        .iter()
        .map(|&t| DensityField::cell_average(1, m, |r| 0.5 + 0.2 * (t / horizon) * (2.0 * PI * r[0]).sin()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let target = Path::new(times, slices).map_err(err)?;
    let control = controlled_field(&target, &coef, &field, &RateOptions::default()).map_err(err)?;

    let n = 256;
    let mc = 32;
    let torus = Torus::new(1, n).map_err(err)?;
    let model = RateModel::new(torus.clone(), RateFamily::Heatbath, InteractionSpec::zero(), field).map_err(err)?;
    let init = quantile_configuration(&torus, &vec![0.5; n]).map_err(err)?;
    let perturbation: &dyn TimeField = &control;
    let trajs = run_ensemble(&model, Some(perturbation), &init, &[horizon], 77, 200).map_err(err)?;
    let mean = ensemble_mean(&torus, &trajs, 0, mc).map_err(err)?.mean;
    let goal = target.last().coarsen(mc).map_err(err)?;
    let l1 = mean.l1_distance(&goal).map_err(err)?;
    let flat = DensityField::constant(1, mc, 0.5).map_err(err)?.l1_distance(&goal).map_err(err)?;
    Ok((
        l1 <= 0.05,
        format!("L1 to target at t=0.1: {l1:.4} (limit 0.05; the unsteered constant profile is at {flat:.4})"),
    ))
}

fn invariant_suite() -> Outcome {
    let report = run_checks(&CheckOptions::default());
    let failed: Vec<&str> = report.failures().map(|c| c.name).collect();
    Ok((
        report.passed,
        if failed.is_empty() {
            format!("{} checks green", report.checks.len())
        } else {
            format!("failed: {}", failed.join(", "))
        },
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome, Duration); 11] = [
        ("gradient-case stationary invariance", gradient_invariance, Duration::from_secs(1)),
        ("conservative-field reversibility", conservative_reversibility, Duration::from_secs(1)),
        ("non-gradient signature", non_gradient_signature, Duration::from_secs(1)),
        ("hydrodynamic convergence", hydrodynamic_convergence, Duration::from_secs(600)),
        ("mobility oracle", mobility_oracle, Duration::from_secs(60)),
        ("thermodynamics oracle", thermodynamics_oracle, Duration::from_secs(60)),
        ("rate-functional null and quadratic response", rate_null_and_quadratic_response, Duration::from_secs(120)),
        ("quasi-potential identity", quasi_potential_identity, Duration::from_secs(300)),
        ("duality and Lyapunov identities", duality_and_lyapunov, Duration::from_secs(120)),
        ("microscopic steering", microscopic_steering, Duration::from_secs(600)),
        ("invariant suite", invariant_suite, Duration::from_secs(300)),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut all = true;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let number = i + 1;
        if !filter.is_empty() && !filter.contains(&number) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let (passed, detail) = match outcome {
            Ok((ok, detail)) => (ok && elapsed <= *budget, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        all &= passed;
        println!(
            "criterion {number:>2} {}: {name}: {detail} [{:.2}s of {}s]",
            if passed { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
