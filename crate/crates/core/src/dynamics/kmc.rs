use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{Fenwick, RateModel};
use crate::error::{Error, Result};
use crate::field::TimeField;
use crate::lattice::{Configuration, Torus};

/// Observed states of one continuous-time trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    #[serde(skip)]
    pub snapshots: Vec<Configuration>,
    pub seed: u64,
    pub stream: u64,
    /// Accepted exchanges.
    pub events: u64,
    /// Candidate events rejected by thinning.
    pub rejected: u64,
}

/// Rejection-free continuous-time Monte Carlo for the rates `N² c(η, b)`.
///
/// With a time-dependent perturbation `H`, candidates are drawn from the
/// static rates multiplied by the uniform bound `exp(½ Lip(H) / N)` and
/// accepted with the ratio of the true rate to that bound.
pub struct Kmc<'a> {
    model: &'a RateModel,
    perturbation: Option<&'a dyn TimeField>,
    majorant: f64,
    speed: f64,
    config: Configuration,
    tree: Fenwick,
    t: f64,
    rng: ChaCha8Rng,
    events: u64,
    rejected: u64,
    since_rebuild: u64,
    rebuild_every: u64,
}

/// Random generator for trajectory `stream` of an ensemble with master seed `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl<'a> Kmc<'a> {
    pub fn new(
        model: &'a RateModel,
        perturbation: Option<&'a dyn TimeField>,
        initial: Configuration,
        seed: u64,
        stream: u64,
    ) -> Result<Self> {
        let torus = model.torus();
        if initial.len() != torus.sites() {
            return Err(Error::Mismatch(format!(
                "configuration of {} sites on a torus of {} sites",
                initial.len(),
                torus.sites()
            )));
        }
        let n = torus.side() as f64;
        let majorant = match perturbation {
            Some(h) => (0.5 * h.lipschitz_bound() / n).exp(),
            None => 1.0,
        };
        let rates: Vec<f64> = (0..torus.bond_count())
            .map(|i| model.active_rate(&initial, i))
            .collect();
        let bonds = torus.bond_count() as u64;
        Ok(Kmc {
            model,
            perturbation,
            majorant,
            speed: n * n,
            config: initial,
            tree: Fenwick::new(&rates),
            t: 0.0,
            rng: stream_rng(seed, stream),
            events: 0,
            rejected: 0,
            since_rebuild: 0,
            rebuild_every: 64 * bonds.max(16),
        })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn config(&self) -> &Configuration {
        &self.config
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    /// The incrementally maintained per-bond rate table.
    pub fn rates(&self) -> &[f64] {
        self.tree.values()
    }

    /// Per-bond rates recomputed from scratch for the current configuration.
    pub fn fresh_rates(&self) -> Vec<f64> {
        (0..self.model.torus().bond_count())
            .map(|i| self.model.active_rate(&self.config, i))
            .collect()
    }

    fn apply(&mut self, index: usize) {
        let torus = self.model.torus();
        let b = torus.bonds()[index];
        let (x, y) = (b.site, torus.head(b));
        self.config.swap_sites(x, y);
        for s in [x, y] {
            for &d in self.model.dependents(s) {
                let r = self.model.active_rate(&self.config, d);
                self.tree.set(d, r);
            }
        }
        self.events += 1;
        self.since_rebuild += 1;
        if self.since_rebuild >= self.rebuild_every {
            self.tree.rebuild();
            self.since_rebuild = 0;
        }
    }

    /// Performs the next accepted exchange if it happens before `t_end`; otherwise
    /// moves the clock to `t_end`. Returns whether an exchange was performed.
    pub fn step(&mut self, t_end: f64) -> Result<bool> {
        loop {
            let total = self.tree.total();
            if !(total >= 0.0 && total.is_finite()) {
                return Err(Error::Numerical(format!("total event rate is {total}")));
            }
            if total <= 0.0 {
                self.t = t_end;
                return Ok(false);
            }
            let rate = total * self.speed * self.majorant;
            let u: f64 = self.rng.gen();
            let dt = -(1.0 - u).ln() / rate;
            if self.t + dt > t_end {
                self.t = t_end;
                return Ok(false);
            }
            self.t += dt;
            let mut index = self.tree.search(self.rng.gen::<f64>() * total);
            if self.tree.get(index) <= 0.0 {
                // rounding at a block boundary: resample the bond only
                let mut tries = 0;
                while self.tree.get(index) <= 0.0 {
                    index = self.tree.search(self.rng.gen::<f64>() * total);
                    tries += 1;
                    if tries > 64 {
                        self.tree.rebuild();
                        return Err(Error::Numerical("event selection hit only zero rates".into()));
                    }
                }
            }
            if let Some(h) = self.perturbation {
                let torus = self.model.torus();
                let b = torus.bonds()[index];
                let factor = super::perturbation_factor(h, torus, &self.config, b, self.t);
                let accept = factor / self.majorant;
                if accept > 1.0 + 1e-12 {
                    return Err(Error::Numerical(format!(
                        "thinning bound violated: acceptance ratio {accept}"
                    )));
                }
                if self.rng.gen::<f64>() >= accept {
                    self.rejected += 1;
                    continue;
                }
            }
            self.apply(index);
            return Ok(true);
        }
    }

    /// Runs until time `t_end`.
    pub fn advance_to(&mut self, t_end: f64) -> Result<()> {
        while self.t < t_end {
            self.step(t_end)?;
        }
        Ok(())
    }
}

/// Runs one trajectory and records the configuration at each observation time.
pub fn kmc_run(
    model: &RateModel,
    perturbation: Option<&dyn TimeField>,
    initial: &Configuration,
    observation_times: &[f64],
    seed: u64,
    stream: u64,
) -> Result<Trajectory> {
    check_times(observation_times)?;
    let mut kmc = Kmc::new(model, perturbation, initial.clone(), seed, stream)?;
    let mut snapshots = Vec::with_capacity(observation_times.len());
    for &t in observation_times {
        kmc.advance_to(t)?;
        snapshots.push(kmc.config().clone());
    }
    Ok(Trajectory {
        times: observation_times.to_vec(),
        snapshots,
        seed,
        stream,
        events: kmc.events(),
        rejected: kmc.rejected(),
    })
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::InvalidArgument("no observation times".into()));
    }
    if times[0] < 0.0 || times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument(
            "observation times must be finite, nonnegative and nondecreasing".into(),
        ));
    }
    Ok(())
}

/// `trajectories` independent runs, trajectory `k` on stream `k` of `seed`.
pub fn run_ensemble(
    model: &RateModel,
    perturbation: Option<&dyn TimeField>,
    initial: &Configuration,
    observation_times: &[f64],
    seed: u64,
    trajectories: usize,
) -> Result<Vec<Trajectory>> {
    if trajectories == 0 {
        return Err(Error::InvalidArgument("an ensemble needs at least one trajectory".into()));
    }
    (0..trajectories as u64)
        .into_par_iter()
        .map(|k| kmc_run(model, perturbation, initial, observation_times, seed, k))
        .collect()
}

/// Deterministic configuration following a site profile: site `x` is occupied
/// when the running sum of the profile (in site order) crosses an integer in
/// `(S_x, S_{x+1}]`. The particle count is `round(Σ profile)`.
pub fn quantile_configuration(torus: &Torus, profile: &[f64]) -> Result<Configuration> {
    if profile.len() != torus.sites() {
        return Err(Error::Mismatch(format!(
            "profile of {} values on a torus of {} sites",
            profile.len(),
            torus.sites()
        )));
    }
    if profile.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument("profile values must lie in [0, 1]".into()));
    }
    let mut cfg = Configuration::empty(profile.len());
    // starting at 1/2 makes the number of integer crossings round(Σ profile)
    let mut s = 0.5;
    for (x, &v) in profile.iter().enumerate() {
        let next = s + v;
        if next.floor() > s.floor() {
            cfg.set(x, true);
        }
        s = next;
    }
    Ok(cfg)
}

/// Independent occupations with `P(η_x = 1) = profile[x]`.
pub fn bernoulli_configuration<R: Rng>(profile: &[f64], rng: &mut R) -> Configuration {
    let occ: Vec<bool> = profile.iter().map(|&p| rng.gen::<f64>() < p).collect();
    Configuration::from_occupancy(&occ)
}
