//! Config-driven experiment drivers behind the command-line subcommands.
//!
//! Every driver writes its files through a [`Sink`], which stamps each CSV
//! with a `#` comment header and wraps each JSON document in
//! `{"meta": .., "result": ..}`. Data files depend only on the config, so
//! reruns are byte-identical; only `summary.json` of `simulate` records a
//! wall time.

use std::io::Write;
use std::path::{Path as FsPath, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::check::{run_checks, CheckOptions, CheckReport};
use crate::coarse::{ensemble_mean, DensityField, Path};
use crate::config::{ExperimentConfig, OutputFormat, VERSION};
use crate::dynamics::{
    generator_matrix, quantile_configuration, reference_gibbs, run_ensemble, stationary_exact, RateFamily,
    RateModel, Trajectory,
};
use crate::error::{Error, Result};
use crate::gibbs::{compressibility_bound, Bernoulli, FreeEnergy, ThermoTable};
use crate::io::{extended_float, write_trajectory_binary};
use crate::lattice::{Configuration, Torus};
use crate::ldp::{
    duality_defect, lyapunov_series, optimal_exit_path, rate_functional, DualityReport, ExitPolicy, RateEval,
    RateOptions,
};
use crate::pde::{solve_adjoint, solve_hydro, PdeProblem, SolveReport, TimeStep};
use crate::transport::{mobility_variational, write_coefficients_csv, Coefficients, MobilityCurve, SmoothnessReport};

#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub command: String,
    pub version: &'static str,
    pub config_hash: String,
}

/// Output directory with the metadata stamped on every file.
pub struct Sink {
    dir: PathBuf,
    meta: Metadata,
    formats: Vec<OutputFormat>,
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    meta: &'a Metadata,
    result: &'a T,
}

impl Sink {
    pub fn new(dir: &FsPath, command: &str, config: &ExperimentConfig) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Sink {
            dir: dir.to_path_buf(),
            meta: Metadata {
                command: command.into(),
                version: VERSION,
                config_hash: config.hash()?,
            },
            formats: config.output.formats.clone(),
        })
    }

    /// A sink for commands that run without a config; the hash is recorded as `none`.
    pub fn unconfigured(dir: &FsPath, command: &str) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Sink {
            dir: dir.to_path_buf(),
            meta: Metadata {
                command: command.into(),
                version: VERSION,
                config_hash: "none".into(),
            },
            formats: vec![OutputFormat::Csv, OutputFormat::Json],
        })
    }

    pub fn dir(&self) -> &FsPath {
        &self.dir
    }

    pub fn meta(&self) -> &Metadata {
        &self.meta
    }

    fn wants(&self, f: OutputFormat) -> bool {
        self.formats.contains(&f)
    }

    /// Writes a CSV behind a `#` header, if CSV output is enabled.
    pub fn csv<F>(&self, name: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        if !self.wants(OutputFormat::Csv) {
            return Ok(());
        }
        let mut buf = Vec::new();
        writeln!(buf, "# kawasaki {}", self.meta.version)?;
        writeln!(buf, "# command {}", self.meta.command)?;
        writeln!(buf, "# config_hash {}", self.meta.config_hash)?;
        body(&mut buf)?;
        std::fs::write(self.dir.join(name), buf)?;
        Ok(())
    }

    /// Writes `{"meta", "result"}`, if JSON output is enabled.
    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        if !self.wants(OutputFormat::Json) {
            return Ok(());
        }
        let text = stamped_json(&self.meta, value)?;
        std::fs::write(self.dir.join(name), text + "\n")?;
        Ok(())
    }
}

pub fn stamped_json<T: Serialize>(meta: &Metadata, value: &T) -> Result<String> {
    serde_json::to_string_pretty(&Stamped { meta, result: value }).map_err(|e| Error::Serialization(e.to_string()))
}

/// Transport coefficients of the configured model: the exclusion values for
/// heatbath rates without interaction, otherwise the tabulated free energy and
/// a variational mobility curve.
pub fn coefficients(config: &ExperimentConfig) -> Result<Coefficients> {
    let interaction = config.interaction();
    let family = config.rate_family();
    if interaction.is_zero() && family == RateFamily::Heatbath {
        return Ok(Coefficients::ssep());
    }
    if config.model.dim != 1 {
        return Err(Error::Unsupported(
            "macroscopic coefficients of interacting or non-gradient models are tabulated in one dimension only".into(),
        ));
    }
    let thermo: Arc<dyn FreeEnergy> = if interaction.is_zero() {
        Arc::new(Bernoulli)
    } else {
        Arc::new(ThermoTable::new(&interaction, 1)?)
    };
    let (mobility, _) =
        MobilityCurve::variational(&family, &interaction, config.numerics.support_radius, config.numerics.points.max(5))?;
    Ok(Coefficients::new(mobility, thermo))
}

fn pde_problem(config: &ExperimentConfig, coef: Coefficients, times: &[f64]) -> Result<PdeProblem> {
    let initial = config.initial_profile(config.numerics.grid)?;
    let mut problem = PdeProblem::new(coef, config.field_spec()?, initial, config.run.horizon, 1);
    problem.output_times = with_origin(times);
    if let Some(dt) = config.numerics.dt {
        problem = problem.with_time_step(TimeStep::Fixed(dt));
    }
    Ok(problem)
}

fn with_origin(times: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0];
    out.extend(times.iter().copied().filter(|t| *t > 0.0));
    out
}

fn lattice_setup(config: &ExperimentConfig, side: usize) -> Result<(Torus, RateModel, Configuration)> {
    let torus = Torus::new(config.model.dim, side)?;
    let model = RateModel::new(torus.clone(), config.rate_family(), config.interaction(), config.field_spec()?)?;
    let profile = config.initial_profile(side)?;
    let init = quantile_configuration(&torus, profile.values())?;
    Ok((torus, model, init))
}

fn index_header(dim: usize) -> String {
    (0..dim).map(|a| format!("i{a}")).collect::<Vec<_>>().join(",")
}

fn index_cols(field: &DensityField, i: usize) -> String {
    field.coords(i).iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateReport {
    pub dim: usize,
    pub side: usize,
    pub trajectories: usize,
    pub seed: u64,
    pub particles: usize,
    pub times: Vec<f64>,
    pub comparison_grid: usize,
    pub events: u64,
    pub rejected: u64,
    pub events_per_trajectory: Vec<u64>,
    /// Every snapshot of every trajectory has the initial particle number.
    pub conserved: bool,
    pub wall_seconds: f64,
}

/// Runs the ensemble and writes the cellwise mean density with its standard
/// error at every observation time.
pub fn simulate(config: &ExperimentConfig, sink: &Sink) -> Result<SimulateReport> {
    let start = Instant::now();
    let seed = config.require_ensemble()?;
    let side = config.model.side;
    let mc = config.comparison_grid(&[side])?;
    let (torus, model, init) = lattice_setup(config, side)?;
    let times = with_origin(&config.observation_times());
    let trajs = run_ensemble(&model, None, &init, &times, seed, config.run.trajectories)?;
    let conserved = trajs
        .iter()
        .all(|t| t.snapshots.iter().all(|s| s.count() == init.count()));
    let means = (0..times.len())
        .map(|i| ensemble_mean(&torus, &trajs, i, mc))
        .collect::<Result<Vec<_>>>()?;
    sink.csv("density_mean.csv", |w| {
        writeln!(w, "t,{},mean,standard_error", index_header(torus.dim()))?;
        for m in &means {
            for (i, v) in m.mean.values().iter().enumerate() {
                writeln!(
                    w,
                    "{:.16e},{},{v:.16e},{:.16e}",
                    m.time,
                    index_cols(&m.mean, i),
                    m.standard_error[i]
                )?;
            }
        }
        Ok(())
    })?;
    if sink.wants(OutputFormat::Binary) {
        write_binaries(sink, &torus, &trajs)?;
    }
    let report = SimulateReport {
        dim: torus.dim(),
        side,
        trajectories: trajs.len(),
        seed,
        particles: init.count(),
        times,
        comparison_grid: mc,
        events: trajs.iter().map(|t| t.events).sum(),
        rejected: trajs.iter().map(|t| t.rejected).sum(),
        events_per_trajectory: trajs.iter().map(|t| t.events).collect(),
        conserved,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    sink.json("summary.json", &report)?;
    Ok(report)
}

fn write_binaries(sink: &Sink, torus: &Torus, trajs: &[Trajectory]) -> Result<()> {
    let dir = sink.dir().join("trajectories");
    std::fs::create_dir_all(&dir)?;
    for t in trajs {
        let mut buf = Vec::new();
        write_trajectory_binary(torus, t, &mut buf)?;
        std::fs::write(dir.join(format!("{:05}.kwsk", t.stream)), buf)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct LadderRow {
    pub side: usize,
    pub particles: usize,
    /// `K / N^d`.
    pub micro_mass: f64,
    pub macro_mass: f64,
    pub times: Vec<f64>,
    /// `L¹` distance between ensemble mean and PDE solution at each time.
    pub l1: Vec<f64>,
    /// `(M_c^d / (trajectories · N^d))^{1/2}`, the size of pure sampling noise per cell.
    pub fluctuation_scale: f64,
    pub events: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HydroCompareReport {
    pub comparison_grid: usize,
    pub trajectories: usize,
    pub pde: SolveReport,
    pub rows: Vec<LadderRow>,
    /// The final-time error decreases strictly along the ladder.
    pub decreasing: bool,
}

/// Ensemble mean against the PDE solution along a ladder of lattice sides.
pub fn hydro_compare(config: &ExperimentConfig, sink: &Sink) -> Result<HydroCompareReport> {
    let seed = config.require_ensemble()?;
    let ladder = if config.numerics.ladder.is_empty() {
        vec![config.model.side]
    } else {
        config.numerics.ladder.clone()
    };
    let mc = config.comparison_grid(&ladder)?;
    let times = with_origin(&config.observation_times());
    let problem = pde_problem(config, coefficients(config)?, &times)?;
    let solution = solve_hydro(&problem, None)?;
    let pde_coarse = solution
        .path
        .slices
        .iter()
        .map(|s| s.coarsen(mc))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(ladder.len());
    for &n in &ladder {
        let (torus, model, init) = lattice_setup(config, n)?;
        let trajs = run_ensemble(&model, None, &init, &times, seed, config.run.trajectories)?;
        let mut l1 = Vec::with_capacity(times.len());
        for (i, reference) in pde_coarse.iter().enumerate() {
            l1.push(ensemble_mean(&torus, &trajs, i, mc)?.mean.l1_distance(reference)?);
        }
        let cells = (mc as f64).powi(torus.dim() as i32);
        rows.push(LadderRow {
            side: n,
            particles: init.count(),
            micro_mass: init.count() as f64 / torus.sites() as f64,
            macro_mass: problem.initial.mass(),
            times: times.clone(),
            l1,
            fluctuation_scale: (cells / (config.run.trajectories as f64 * torus.sites() as f64)).sqrt(),
            events: trajs.iter().map(|t| t.events).sum(),
        });
    }
    let finals: Vec<f64> = rows.iter().map(|r| *r.l1.last().unwrap()).collect();
    let report = HydroCompareReport {
        comparison_grid: mc,
        trajectories: config.run.trajectories,
        pde: solution.report,
        decreasing: finals.windows(2).all(|w| w[1] < w[0]),
        rows,
    };
    sink.csv("hydro_compare.csv", |w| {
        writeln!(w, "side,t,l1")?;
        for r in &report.rows {
            for (t, e) in r.times.iter().zip(&r.l1) {
                writeln!(w, "{},{t:.16e},{e:.16e}", r.side)?;
            }
        }
        Ok(())
    })?;
    sink.csv("pde_path.csv", |w| solution.path.write_csv(w))?;
    sink.json("hydro_compare.json", &report)?;
    Ok(report)
}

/// How a model's stationary measure is expected to relate to the Gibbs reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StationaryClass {
    /// `E = -∇U` (including `E = 0`): reversible with respect to the Gibbs measure of `H^U`.
    Reversible,
    /// Constant field with gradient rates: the canonical Gibbs measure is invariant.
    Gradient,
    /// Constant field with neighbour-weighted rates: the measure may depend on the field.
    NonGradient,
    Unclassified,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExactStationaryReport {
    pub side: usize,
    pub particles: usize,
    pub states: usize,
    pub method: &'static str,
    pub residual: f64,
    /// Largest `|π(η) - π_ref(η)|`.
    pub deviation: f64,
    pub class: StationaryClass,
    pub matches_reference: bool,
    pub detailed_balance_residual: f64,
}

/// Solves `πL = 0` on one sector and compares with the Gibbs reference.
pub fn exact_stationary(config: &ExperimentConfig, sink: &Sink) -> Result<ExactStationaryReport> {
    let torus = Torus::new(config.model.dim, config.model.side)?;
    let field = config.field_spec()?;
    let family = config.rate_family();
    let interaction = config.interaction();
    let model = RateModel::new(torus.clone(), family, interaction, field.clone())?;
    let k = config
        .run
        .particles
        .unwrap_or_else(|| (config.run.density * torus.sites() as f64).round() as usize);
    if k > torus.sites() {
        return Err(Error::config("run.particles", "exceeds the number of sites"));
    }
    let generator = generator_matrix(&model, k)?;
    let st = stationary_exact(&generator)?;
    let reference = reference_gibbs(&interaction, &field.potential, &torus, &generator.states);
    let deviation = st
        .distribution
        .iter()
        .zip(&reference)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let divergence_free_zero = field.constant.iter().all(|e| *e == 0.0) && field.stream.is_zero();
    let class = if divergence_free_zero {
        StationaryClass::Reversible
    } else if field.is_constant() && family == RateFamily::Heatbath && interaction.is_zero() {
        StationaryClass::Gradient
    } else if field.is_constant() && matches!(family, RateFamily::NeighborWeighted { .. }) {
        StationaryClass::NonGradient
    } else {
        StationaryClass::Unclassified
    };
    let report = ExactStationaryReport {
        side: torus.side(),
        particles: k,
        states: generator.len(),
        method: st.method,
        residual: st.residual,
        deviation,
        class,
        matches_reference: deviation <= 1e-10,
        detailed_balance_residual: generator.detailed_balance_residual(&reference),
    };
    sink.csv("stationary.csv", |w| {
        writeln!(w, "state,pi,reference")?;
        for ((s, p), r) in generator.states.iter().zip(&st.distribution).zip(&reference) {
            let bits: String = s.occupancy().iter().map(|b| if *b { '1' } else { '0' }).collect();
            writeln!(w, "{bits},{p:.16e},{r:.16e}")?;
        }
        Ok(())
    })?;
    sink.json("exact_stationary.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct MobilityRow {
    pub rho: f64,
    pub sigma: Vec<Vec<f64>>,
    pub sigma_zero: Vec<Vec<f64>>,
    pub improvement: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MobilityReport {
    pub support_radius: usize,
    pub rows: Vec<MobilityRow>,
    /// Smoothness of the tabulated one-dimensional curve.
    pub smoothness: Option<SmoothnessReport>,
}

/// Variational mobility on the interior nodes `i / (points - 1)`.
pub fn mobility(config: &ExperimentConfig, sink: &Sink) -> Result<MobilityReport> {
    let family = config.rate_family();
    let interaction = config.interaction();
    let k = config.numerics.support_radius;
    let p = config.numerics.points;
    let mut rows = Vec::new();
    for i in 1..p - 1 {
        let rho = i as f64 / (p - 1) as f64;
        let e = mobility_variational(&family, &interaction, config.model.dim, rho, k)?;
        rows.push(MobilityRow {
            rho,
            sigma: e.sigma.clone(),
            sigma_zero: e.sigma_zero.clone(),
            improvement: e.improvement,
            rank: e.rank,
        });
    }
    let smoothness = if config.model.dim == 1 && p >= 5 {
        let (curve, report) = MobilityCurve::variational(&family, &interaction, k, p)?;
        let thermo: Arc<dyn FreeEnergy> = if interaction.is_zero() {
            Arc::new(Bernoulli)
        } else {
            Arc::new(ThermoTable::new(&interaction, 1)?)
        };
        let coef = Coefficients::new(curve, thermo);
        sink.csv("coefficients.csv", |w| write_coefficients_csv(&coef, p - 1, w))?;
        Some(report)
    } else {
        None
    };
    let report = MobilityReport {
        support_radius: k,
        rows,
        smoothness,
    };
    sink.csv("mobility.csv", |w| {
        let d = config.model.dim;
        let mut header = vec!["rho".to_string()];
        for a in 0..d {
            for b in 0..d {
                header.push(format!("sigma_{a}{b}"));
            }
        }
        for a in 0..d {
            for b in 0..d {
                header.push(format!("sigma0_{a}{b}"));
            }
        }
        header.push("improvement".into());
        writeln!(w, "{}", header.join(","))?;
        for r in &report.rows {
            let mut cols = vec![format!("{:.16e}", r.rho)];
            cols.extend(r.sigma.iter().flatten().map(|v| format!("{v:.16e}")));
            cols.extend(r.sigma_zero.iter().flatten().map(|v| format!("{v:.16e}")));
            cols.push(format!("{:.16e}", r.improvement));
            writeln!(w, "{}", cols.join(","))?;
        }
        Ok(())
    })?;
    sink.json("mobility.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct ThermoReport {
    pub coupling: f64,
    pub dim: usize,
    pub convex: bool,
    pub legendre: bool,
    pub failure: Option<String>,
    /// Smallest `C` with `1/C ≤ χ/(ρ(1-ρ)) ≤ C`.
    pub compressibility_bound: f64,
    pub chi_half: f64,
}

/// Free-energy table with its convexity and Legendre checks.
pub fn thermo(config: &ExperimentConfig, sink: &Sink) -> Result<ThermoReport> {
    let interaction = config.interaction();
    let table = ThermoTable::new(&interaction, config.model.dim)?;
    let convexity = table.check_convexity();
    let legendre = table.check_legendre();
    let failure = convexity
        .as_ref()
        .err()
        .or(legendre.as_ref().err())
        .map(|e| e.to_string());
    let report = ThermoReport {
        coupling: interaction.coupling(),
        dim: config.model.dim,
        convex: convexity.is_ok(),
        legendre: legendre.is_ok(),
        failure,
        compressibility_bound: compressibility_bound(&table),
        chi_half: table.chi(0.5),
    };
    sink.csv("thermo.csv", |w| table.write_csv(w))?;
    sink.json("thermo.json", &report)?;
    Ok(report)
}

/// `π_t = (1 - t/T) π_0 + (t/T) π_1` on `intervals + 1` uniform times.
pub fn interpolated_path(from: &DensityField, to: &DensityField, horizon: f64, intervals: usize) -> Result<Path> {
    let mut times = Vec::with_capacity(intervals + 1);
    let mut slices = Vec::with_capacity(intervals + 1);
    for k in 0..=intervals {
        let s = k as f64 / intervals as f64;
        let v = from
            .values()
            .iter()
            .zip(to.values())
            .map(|(a, b)| (1.0 - s) * a + s * b)
            .collect();
        times.push(horizon * s);
        slices.push(DensityField::new(from.dim(), from.side(), v)?);
    }
    Path::new(times, slices)
}

#[derive(Debug, Clone, Serialize)]
pub struct RateFnReport {
    /// The rate of the hydrodynamic path from the initial profile (zero up to discretisation).
    pub hydrodynamic: RateEval,
    /// The rate of the straight path from the initial to the target profile.
    pub interpolated: Option<RateEval>,
}

pub fn ratefn(config: &ExperimentConfig, sink: &Sink) -> Result<RateFnReport> {
    let coef = coefficients(config)?;
    let field = config.field_spec()?;
    let m = config.numerics.grid;
    let n = config.numerics.intervals;
    let mut problem = pde_problem(config, coef.clone(), &[])?;
    problem.output_times = crate::pde::uniform_times(config.run.horizon, n);
    let hydro = solve_hydro(&problem, None)?;
    let options = RateOptions::default();
    let hydrodynamic = rate_functional(&hydro.path, Some(&problem.initial), &coef, &field, &options)?;
    let interpolated = match &config.target {
        Some(_) => {
            let path = interpolated_path(&problem.initial, &config.target_profile(m)?, config.run.horizon, n)?;
            Some(rate_functional(&path, None, &coef, &field, &options)?)
        }
        None => None,
    };
    let report = RateFnReport {
        hydrodynamic,
        interpolated,
    };
    sink.csv("rate_slices.csv", |w| {
        writeln!(w, "path,t,dt,value")?;
        let mut rows = vec![("hydrodynamic", &report.hydrodynamic)];
        if let Some(r) = &report.interpolated {
            rows.push(("interpolated", r));
        }
        for (name, r) in rows {
            for s in &r.slices {
                writeln!(w, "{name},{:.16e},{:.16e},{:.16e}", s.t, s.dt, s.value)?;
            }
        }
        Ok(())
    })?;
    sink.json("ratefn.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct QuasiPotentialReport {
    /// `𝓕^U_ρ̄(ρ)`.
    pub free_energy: f64,
    /// Rate functional of the optimal exit path.
    #[serde(serialize_with = "extended_float")]
    pub exit_rate: f64,
    #[serde(serialize_with = "extended_float")]
    pub relative_gap: f64,
    pub horizon: f64,
    pub start_distance: f64,
}

/// Optimal exit path to the target profile and its cost against `𝓕^U`.
pub fn quasipotential(config: &ExperimentConfig, sink: &Sink) -> Result<QuasiPotentialReport> {
    let coef = coefficients(config)?;
    let field = config.field_spec()?;
    let target = config.target_profile(config.numerics.grid)?;
    let policy = ExitPolicy {
        tolerance: config.numerics.exit_tolerance,
        ..ExitPolicy::default()
    };
    let plan = optimal_exit_path(&target, &field, coef.thermo(), &coef, &policy)?;
    let exit_rate = plan.rate.as_ref().map_or(f64::NAN, |r| r.value);
    let report = QuasiPotentialReport {
        free_energy: plan.value,
        exit_rate,
        relative_gap: (exit_rate - plan.value).abs() / plan.value.abs(),
        horizon: plan.horizon,
        start_distance: plan.distance,
    };
    sink.csv("exit_path.csv", |w| plan.path.write_csv(w))?;
    sink.json("quasipotential.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct DualityCheckReport {
    pub duality: DualityReport,
    /// Largest per-slice defect of `d𝓕/dt = -dissipation` along the hydrodynamic flow.
    pub lyapunov_forward: f64,
    /// The same along the adjoint flow.
    pub lyapunov_adjoint: f64,
}

/// Time-reversal identity on a path (straight to the target, or the
/// hydrodynamic path without a target) and the Lyapunov identity along both flows.
pub fn duality_check(config: &ExperimentConfig, sink: &Sink) -> Result<DualityCheckReport> {
    let coef = coefficients(config)?;
    let field = config.field_spec()?;
    let n = config.numerics.intervals;
    let horizon = config.run.horizon;
    let initial = config.initial_profile(config.numerics.grid)?;
    let problem = PdeProblem::new(coef.clone(), field.clone(), initial.clone(), horizon, n);
    let forward = solve_hydro(&problem, None)?;
    let path = match &config.target {
        Some(_) => interpolated_path(&initial, &config.target_profile(config.numerics.grid)?, horizon, n)?,
        None => forward.path.clone(),
    };
    let duality = duality_defect(&path, &field, &coef, coef.thermo(), &RateOptions::default())?;
    let adjoint = solve_adjoint(&initial, &coef, &field, horizon, n)?;
    let worst = |p: &Path| -> Result<f64> {
        Ok(lyapunov_series(p, &field.potential, coef.thermo(), &coef)?
            .iter()
            .filter_map(|q| q.defect)
            .fold(0.0, f64::max))
    };
    let report = DualityCheckReport {
        duality,
        lyapunov_forward: worst(&forward.path)?,
        lyapunov_adjoint: worst(&adjoint.path)?,
    };
    sink.json("duality.json", &report)?;
    Ok(report)
}

/// Runs the invariant suite and writes its verdict.
pub fn check(options: &CheckOptions, sink: Option<&Sink>) -> Result<CheckReport> {
    let report = run_checks(options);
    if let Some(s) = sink {
        s.json("check.json", &report)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(text).unwrap()
    }

    #[test]
    fn simulate_is_reproducible() {
        let c = config(
            "[model]\ndim = 1\nside = 32\n[field]\nmode = \"constant\"\nconstant = [1.0]\n\
             [run]\nhorizon = 0.02\ntrajectories = 4\nseed = 5\nobservations = 2\nprofile = [[1, 0.0, 0.25]]\n\
             [numerics]\ngrid = 16\n[output]\nformats = [\"csv\", \"json\", \"binary\"]\n",
        );
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = simulate(&c, &Sink::new(a.path(), "simulate", &c).unwrap()).unwrap();
        simulate(&c, &Sink::new(b.path(), "simulate", &c).unwrap()).unwrap();
        assert!(ra.conserved);
        assert_eq!(ra.times, vec![0.0, 0.01, 0.02]);
        for f in ["density_mean.csv", "trajectories/00003.kwsk"] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
        }
        let text = std::fs::read_to_string(a.path().join("density_mean.csv")).unwrap();
        assert!(text.starts_with("# kawasaki "));
        assert!(text.contains(&format!("# config_hash {}", c.hash().unwrap())));
    }

    #[test]
    fn exact_stationary_classifies() {
        let dir = tempfile::tempdir().unwrap();
        let run = |text: &str| {
            let c = config(text);
            exact_stationary(&c, &Sink::new(dir.path(), "exact-stationary", &c).unwrap()).unwrap()
        };
        let g = run("[model]\ndim = 1\nside = 6\n[field]\nmode = \"constant\"\nconstant = [2.0]\n[run]\nparticles = 3\n");
        assert_eq!(g.class, StationaryClass::Gradient);
        assert!(g.matches_reference, "{}", g.deviation);
        let ng = run(
            "[model]\ndim = 1\nside = 6\nrates = \"neighbor_weighted\"\n\
             [field]\nmode = \"constant\"\nconstant = [1.0]\n[run]\nparticles = 3\n",
        );
        assert_eq!(ng.class, StationaryClass::NonGradient);
        assert!(ng.deviation > 1e-6);
        let r = run(
            "[model]\ndim = 1\nside = 8\ncoupling = 0.4\n[field]\nmode = \"conservative\"\npotential = [[1, 0.7, 0.0]]\n",
        );
        assert_eq!(r.class, StationaryClass::Reversible);
        assert!(r.matches_reference && r.detailed_balance_residual <= 1e-12);
    }

    #[test]
    fn trajectories_zero_is_rejected() {
        let c = config("[model]\ndim = 1\nside = 16\n");
        let dir = tempfile::tempdir().unwrap();
        let err = simulate(&c, &Sink::new(dir.path(), "simulate", &c).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn coefficient_drivers_run() {
        let dir = tempfile::tempdir().unwrap();
        let c = config("[model]\ndim = 1\nside = 16\n[numerics]\npoints = 11\nsupport_radius = 1\n");
        let m = mobility(&c, &Sink::new(dir.path(), "mobility", &c).unwrap()).unwrap();
        let mid = m.rows.iter().find(|r| (r.rho - 0.3).abs() < 1e-12).unwrap();
        assert!((mid.sigma[0][0] - 0.21).abs() < 1e-12);
        let t = thermo(&c, &Sink::new(dir.path(), "thermo", &c).unwrap()).unwrap();
        assert!(t.convex && t.legendre);
        assert!((t.chi_half - 0.25).abs() < 1e-8);
        assert!(dir.path().join("mobility.csv").exists());
        assert!(dir.path().join("thermo.json").exists());
    }

    #[test]
    fn functional_drivers_run() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(
            "[model]\ndim = 1\nside = 64\n[field]\nmode = \"conservative\"\npotential = [[1, 0.3, 0.0]]\n\
             [run]\nhorizon = 0.02\nprofile = [[1, 0.0, 0.1]]\n[numerics]\ngrid = 32\nintervals = 16\n\
             [target]\nprofile = [[1, 0.0, 0.15]]\n",
        );
        let sink = Sink::new(dir.path(), "ratefn", &c).unwrap();
        let r = ratefn(&c, &sink).unwrap();
        assert!(r.hydrodynamic.value < 1e-3);
        assert!(r.interpolated.unwrap().value > r.hydrodynamic.value);
        let q = quasipotential(&c, &sink).unwrap();
        assert!(q.free_energy > 0.0 && q.relative_gap < 0.1, "{q:?}");
        let d = duality_check(&c, &sink).unwrap();
        assert!(d.duality.defect < 1e-2, "{:?}", d.duality);
    }
}
