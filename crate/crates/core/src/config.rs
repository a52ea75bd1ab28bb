//! Experiment configuration.
//!
//! A config is a TOML document with the sections `[model]`, `[field]`,
//! `[run]`, `[numerics]`, `[output]` and an optional `[target]`, each holding
//! plain `key = value` pairs. Fourier series are written as arrays of terms
//! `[k_1, .., k_d, cos, sin]`, so `[[1, 0.3, 0.0]]` is `0.3 cos(2πr)` in one
//! dimension. Unknown keys are rejected.
//!
//! ```toml
//! [model]
//! dim = 1
//! side = 256
//!
//! [field]
//! mode = "constant"
//! constant = [1.0]
//!
//! [run]
//! horizon = 0.1
//! trajectories = 200
//! seed = 7
//! density = 0.5
//! profile = [[1, 0.0, 0.25]]
//! ```

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coarse::DensityField;
use crate::dynamics::{RateFamily, WitnessSet};
use crate::error::{Error, Result};
use crate::field::{FieldSpec, FourierSeries, FourierTerm};
use crate::gibbs::{ChemicalPotentialSign, InteractionSpec};

/// `<package version>` followed by the `git describe` of the build tree when available.
pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "+", env!("KAWASAKI_DESCRIBE"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateKind {
    #[default]
    Heatbath,
    NeighborWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WitnessKind {
    #[default]
    Trailing,
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldMode {
    #[default]
    Zero,
    Constant,
    Conservative,
    Decomposed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub dim: usize,
    pub side: usize,
    /// Nearest-neighbour coupling `J`; zero gives the exclusion process.
    #[serde(default)]
    pub coupling: f64,
    #[serde(default)]
    pub sign: ChemicalPotentialSign,
    #[serde(default)]
    pub rates: RateKind,
    #[serde(default = "default_weight")]
    pub weight: f64,
    #[serde(default)]
    pub witnesses: WitnessKind,
    #[serde(default = "default_witness_radius")]
    pub witness_radius: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSection {
    #[serde(default)]
    pub mode: FieldMode,
    #[serde(default)]
    pub constant: Vec<f64>,
    #[serde(default)]
    pub potential: Vec<Vec<f64>>,
    #[serde(default)]
    pub stream: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub trajectories: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Number of uniformly spaced observation times in `(0, horizon]`.
    #[serde(default = "default_observations")]
    pub observations: usize,
    /// Explicit observation times; overrides `observations`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    /// Mean initial density.
    #[serde(default = "default_density")]
    pub density: f64,
    /// Fourier perturbation added to `density`.
    #[serde(default)]
    pub profile: Vec<Vec<f64>>,
    /// Particle number for exact enumeration; defaults to `round(density N^d)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub particles: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsSection {
    /// PDE cells per axis `M`.
    #[serde(default = "default_grid")]
    pub grid: usize,
    /// Fixed time step; automatic when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Support radius `k` of the variational mobility.
    #[serde(default = "default_support")]
    pub support_radius: usize,
    /// Lattice sides for the convergence study.
    #[serde(default)]
    pub ladder: Vec<usize>,
    /// Cells per axis on which micro and macro densities are compared; defaults to `grid`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison_grid: Option<usize>,
    /// Density nodes for coefficient tables.
    #[serde(default = "default_points")]
    pub points: usize,
    /// Time intervals of discretised paths.
    #[serde(default = "default_intervals")]
    pub intervals: usize,
    /// L² distance at which a relaxation counts as having reached `γ`.
    #[serde(default = "default_exit_tolerance")]
    pub exit_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_directory")]
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    /// Mean of the target profile; defaults to the run density.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<f64>,
    #[serde(default)]
    pub profile: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub field: FieldSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub numerics: NumericsSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetSection>,
}

fn default_weight() -> f64 {
    0.5
}
fn default_witness_radius() -> usize {
    2
}
fn default_horizon() -> f64 {
    0.1
}
fn default_observations() -> usize {
    1
}
fn default_density() -> f64 {
    0.5
}
fn default_grid() -> usize {
    64
}
fn default_support() -> usize {
    1
}
fn default_points() -> usize {
    21
}
fn default_intervals() -> usize {
    64
}
fn default_exit_tolerance() -> f64 {
    1e-4
}
fn default_directory() -> String {
    "out".into()
}
fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Csv, OutputFormat::Json]
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            horizon: default_horizon(),
            trajectories: 0,
            seed: None,
            observations: default_observations(),
            times: None,
            density: default_density(),
            profile: Vec::new(),
            particles: None,
        }
    }
}

impl Default for NumericsSection {
    fn default() -> Self {
        NumericsSection {
            grid: default_grid(),
            dt: None,
            support_radius: default_support(),
            ladder: Vec::new(),
            comparison_grid: None,
            points: default_points(),
            intervals: default_intervals(),
            exit_tolerance: default_exit_tolerance(),
        }
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: default_directory(),
            formats: default_formats(),
        }
    }
}

fn parse_series(dim: usize, terms: &[Vec<f64>], field: &str) -> Result<FourierSeries> {
    let mut out = Vec::with_capacity(terms.len());
    for (i, t) in terms.iter().enumerate() {
        if t.len() != dim + 2 {
            return Err(Error::config(
                format!("{field}[{i}]"),
                format!("expected {} entries [k_1..k_{dim}, cos, sin], got {}", dim + 2, t.len()),
            ));
        }
        let mut wave = Vec::with_capacity(dim);
        for &k in &t[..dim] {
            if k.fract() != 0.0 || !k.is_finite() {
                return Err(Error::config(format!("{field}[{i}]"), format!("wave number {k} is not an integer")));
            }
            wave.push(k as i64);
        }
        if !t[dim].is_finite() || !t[dim + 1].is_finite() {
            return Err(Error::config(format!("{field}[{i}]"), "coefficients must be finite"));
        }
        out.push(FourierTerm {
            wave,
            cos: t[dim],
            sin: t[dim + 1],
        });
    }
    Ok(FourierSeries::new(out))
}

fn profile_field(dim: usize, grid: usize, mean: f64, series: &FourierSeries, field: &str) -> Result<DensityField> {
    let f = DensityField::cell_average(dim, grid, |r| mean + series.value(r)).map_err(|_| {
        Error::config(field, format!("profile leaves [0, 1] on a {grid}-cell grid"))
    })?;
    if f.min() < 0.0 || f.max() > 1.0 {
        return Err(Error::config(field, "profile leaves [0, 1]"));
    }
    Ok(f)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// SHA-256 of the canonical serialization, leaving out the `[output]`
    /// section, which does not affect results.
    pub fn hash(&self) -> Result<String> {
        let canonical = ExperimentConfig {
            output: OutputSection::default(),
            ..self.clone()
        };
        Ok(hex::encode(Sha256::digest(canonical.to_toml()?.as_bytes())))
    }

    /// Structural checks that hold for every subcommand.
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if !(1..=3).contains(&m.dim) {
            return Err(Error::config("model.dim", "must be 1, 2 or 3"));
        }
        if m.side < 2 {
            return Err(Error::config("model.side", "must be at least 2"));
        }
        if !m.coupling.is_finite() {
            return Err(Error::config("model.coupling", "must be finite"));
        }
        if !(m.weight >= 0.0 && m.weight.is_finite()) {
            return Err(Error::config("model.weight", "must be finite and nonnegative"));
        }
        if m.witness_radius == 0 {
            return Err(Error::config("model.witness_radius", "must be positive"));
        }
        self.field_spec()?;
        let r = &self.run;
        if !(r.horizon > 0.0 && r.horizon.is_finite()) {
            return Err(Error::config("run.horizon", "must be positive and finite"));
        }
        if r.trajectories > 0 && r.seed.is_none() {
            return Err(Error::config("run.seed", "required when run.trajectories > 0"));
        }
        if r.observations == 0 && r.times.is_none() {
            return Err(Error::config("run.observations", "must be positive"));
        }
        if let Some(t) = &r.times {
            if t.is_empty()
                || t.iter().any(|x| !(0.0..=r.horizon).contains(x))
                || t.windows(2).any(|w| w[1] <= w[0])
            {
                return Err(Error::config("run.times", "must be increasing and lie in [0, horizon]"));
            }
        }
        if !(r.density > 0.0 && r.density < 1.0) {
            return Err(Error::config("run.density", "must lie in (0, 1)"));
        }
        parse_series(m.dim, &r.profile, "run.profile")?;
        let n = &self.numerics;
        if n.grid == 0 {
            return Err(Error::config("numerics.grid", "must be positive"));
        }
        if let Some(dt) = n.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::config("numerics.dt", "must be positive and finite"));
            }
        }
        if n.points < 2 {
            return Err(Error::config("numerics.points", "must be at least 2"));
        }
        if n.intervals == 0 {
            return Err(Error::config("numerics.intervals", "must be positive"));
        }
        if !(n.exit_tolerance > 0.0) {
            return Err(Error::config("numerics.exit_tolerance", "must be positive"));
        }
        if self.output.formats.is_empty() {
            return Err(Error::config("output.formats", "at least one format is required"));
        }
        if let Some(t) = &self.target {
            if let Some(d) = t.density {
                if !(d > 0.0 && d < 1.0) {
                    return Err(Error::config("target.density", "must lie in (0, 1)"));
                }
            }
            parse_series(m.dim, &t.profile, "target.profile")?;
        }
        Ok(())
    }

    /// Requirements of the ensemble subcommands.
    pub fn require_ensemble(&self) -> Result<u64> {
        if self.run.trajectories == 0 {
            return Err(Error::config("run.trajectories", "must be positive"));
        }
        self.run
            .seed
            .ok_or_else(|| Error::config("run.seed", "required when run.trajectories > 0"))
    }

    /// Cells per axis of the micro/macro comparison, checked to divide every lattice side used.
    pub fn comparison_grid(&self, sides: &[usize]) -> Result<usize> {
        let mc = self.numerics.comparison_grid.unwrap_or(self.numerics.grid);
        if mc == 0 {
            return Err(Error::config("numerics.comparison_grid", "must be positive"));
        }
        if !self.numerics.grid.is_multiple_of(mc) {
            return Err(Error::config(
                "numerics.comparison_grid",
                format!("{mc} does not divide numerics.grid = {}", self.numerics.grid),
            ));
        }
        for &n in sides {
            if n % mc != 0 {
                return Err(Error::config(
                    "numerics.comparison_grid",
                    format!("{mc} does not divide lattice side {n}"),
                ));
            }
        }
        Ok(mc)
    }

    pub fn interaction(&self) -> InteractionSpec {
        let i = if self.model.coupling == 0.0 {
            InteractionSpec::zero()
        } else {
            InteractionSpec::nearest_neighbor(self.model.coupling)
        };
        i.with_sign(self.model.sign)
    }

    pub fn rate_family(&self) -> RateFamily {
        match self.model.rates {
            RateKind::Heatbath => RateFamily::Heatbath,
            RateKind::NeighborWeighted => RateFamily::NeighborWeighted {
                a: self.model.weight,
                witnesses: match self.model.witnesses {
                    WitnessKind::Trailing => WitnessSet::Trailing {
                        radius: self.model.witness_radius,
                    },
                    WitnessKind::Symmetric => WitnessSet::Symmetric {
                        radius: self.model.witness_radius,
                    },
                },
            },
        }
    }

    pub fn field_spec(&self) -> Result<FieldSpec> {
        let dim = self.model.dim;
        let f = &self.field;
        let constant = if f.constant.is_empty() {
            vec![0.0; dim]
        } else if f.constant.len() == dim {
            f.constant.clone()
        } else {
            return Err(Error::config("field.constant", format!("expected {dim} components")));
        };
        let potential = parse_series(dim, &f.potential, "field.potential")?;
        let stream = parse_series(dim, &f.stream, "field.stream")?;
        let only = |ok: bool, key: &str, mode: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("field.{key}"), format!("not allowed with mode = \"{mode}\"")))
            }
        };
        match f.mode {
            FieldMode::Zero => {
                only(constant.iter().all(|e| *e == 0.0), "constant", "zero")?;
                only(potential.is_zero(), "potential", "zero")?;
                only(stream.is_zero(), "stream", "zero")?;
            }
            FieldMode::Constant => {
                only(potential.is_zero(), "potential", "constant")?;
                only(stream.is_zero(), "stream", "constant")?;
            }
            FieldMode::Conservative => {
                only(constant.iter().all(|e| *e == 0.0), "constant", "conservative")?;
                only(stream.is_zero(), "stream", "conservative")?;
            }
            FieldMode::Decomposed => {}
        }
        FieldSpec::decomposed(dim, potential, constant, stream).map_err(|e| Error::config("field", e.to_string()))
    }

    /// Initial density averaged onto `side` cells per axis.
    pub fn initial_profile(&self, side: usize) -> Result<DensityField> {
        let s = parse_series(self.model.dim, &self.run.profile, "run.profile")?;
        profile_field(self.model.dim, side, self.run.density, &s, "run.profile")
    }

    /// Target density averaged onto `side` cells per axis.
    pub fn target_profile(&self, side: usize) -> Result<DensityField> {
        let t = self
            .target
            .as_ref()
            .ok_or_else(|| Error::config("target", "section required by this subcommand"))?;
        let s = parse_series(self.model.dim, &t.profile, "target.profile")?;
        profile_field(self.model.dim, side, t.density.unwrap_or(self.run.density), &s, "target.profile")
    }

    pub fn observation_times(&self) -> Vec<f64> {
        match &self.run.times {
            Some(t) => t.clone(),
            None => {
                let m = self.run.observations;
                (1..=m).map(|k| self.run.horizon * k as f64 / m as f64).collect()
            }
        }
    }

    pub fn wants(&self, format: OutputFormat) -> bool {
        self.output.formats.contains(&format)
    }
}
