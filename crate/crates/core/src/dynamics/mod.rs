//! Kawasaki jump rates, the kinetic Monte Carlo engine and exact generators.
//!
//! Rates are attached to unordered nearest-neighbour bonds. The field work
//! uses the canonical orientation `(x, x + e_i)` of [`Bond`].

mod exact;
mod fenwick;
mod kmc;

pub use exact::{
    generator_matrix, reference_gibbs, stationary_exact, Generator, Stationary, DENSE_LIMIT,
    MAX_GENERATOR_STATES,
};
pub use fenwick::Fenwick;
pub use kmc::{
    bernoulli_configuration, kmc_run, quantile_configuration, run_ensemble, Kmc, Trajectory,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldSpec, TimeField};
use crate::gibbs::{energy_diff, InteractionSpec};
use crate::lattice::{Bond, Configuration, Torus};

/// Sites whose occupation multiplies the symmetric rate of a bond.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WitnessSet {
    /// Every site within sup-distance `radius` of either endpoint.
    Symmetric { radius: usize },
    /// The sites `x - k e_i`, `k = 1..=radius`, behind the tail of the bond `(x, x + e_i)`.
    Trailing { radius: usize },
}

/// Symmetric jump-rate rule `c⁰`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateFamily {
    /// `c⁰ = exp(-½ ∇H)`.
    Heatbath,
    /// `c⁰ = (1 + a Σ_{z ∈ A} η_z) exp(-½ ∇H)` with witness set `A`.
    NeighborWeighted { a: f64, witnesses: WitnessSet },
}

impl RateFamily {
    /// Neighbour-weighted rates with the default two trailing witnesses.
    pub fn neighbor_weighted(a: f64) -> Self {
        RateFamily::NeighborWeighted {
            a,
            witnesses: WitnessSet::Trailing { radius: 2 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let RateFamily::NeighborWeighted { a, witnesses } = self {
            if !(*a >= 0.0 && a.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "neighbour weight must be finite and nonnegative, got {a}"
                )));
            }
            let radius = match witnesses {
                WitnessSet::Symmetric { radius } | WitnessSet::Trailing { radius } => *radius,
            };
            if radius == 0 {
                return Err(Error::InvalidArgument("witness radius must be positive".into()));
            }
        }
        Ok(())
    }

    /// Witness sites of a bond, excluding its endpoints, without duplicates.
    pub fn witnesses(&self, torus: &Torus, bond: Bond) -> Vec<usize> {
        let x = bond.site;
        let y = torus.head(bond);
        let mut out = Vec::new();
        let push = |s: usize, out: &mut Vec<usize>| {
            if s != x && s != y && !out.contains(&s) {
                out.push(s);
            }
        };
        match self {
            RateFamily::Heatbath => {}
            RateFamily::NeighborWeighted { witnesses, .. } => match *witnesses {
                WitnessSet::Trailing { radius } => {
                    for k in 1..=radius as i64 {
                        push(torus.step(x, bond.axis, -k), &mut out);
                    }
                }
                WitnessSet::Symmetric { radius } => {
                    let r = radius as i64;
                    let width = (2 * r + 1) as usize;
                    let dim = torus.dim();
                    for end in [x, y] {
                        let base: Vec<i64> = torus.coords(end).iter().map(|&c| c as i64).collect();
                        for idx in 0..width.pow(dim as u32) {
                            let mut rem = idx;
                            let mut c = base.clone();
                            for v in c.iter_mut() {
                                *v += (rem % width) as i64 - r;
                                rem /= width;
                            }
                            push(torus.index(&c), &mut out);
                        }
                    }
                }
            },
        }
        out
    }

    fn prefactor(&self, config: &Configuration, witnesses: &[usize]) -> f64 {
        match self {
            RateFamily::Heatbath => 1.0,
            RateFamily::NeighborWeighted { a, .. } => {
                1.0 + a * witnesses.iter().filter(|&&z| config.get(z)).count() as f64
            }
        }
    }
}

/// `c⁰_{x,y}(η)` for one bond.
pub fn rate_symmetric(
    family: &RateFamily,
    interaction: &InteractionSpec,
    torus: &Torus,
    config: &Configuration,
    bond: Bond,
) -> f64 {
    let w = family.witnesses(torus, bond);
    family.prefactor(config, &w) * (-0.5 * energy_diff(interaction, torus, config, bond)).exp()
}

/// `c^E = c⁰ exp(E_N(x, y)(η_x - η_y)/2)` for the bond `(x, y) = (x, x + e_i)`.
pub fn rate_asymmetric(
    family: &RateFamily,
    interaction: &InteractionSpec,
    field: &FieldSpec,
    torus: &Torus,
    config: &Configuration,
    bond: Bond,
) -> f64 {
    let c0 = rate_symmetric(family, interaction, torus, config, bond);
    let jump = config.occ(bond.site) as f64 - config.occ(torus.head(bond)) as f64;
    c0 * (0.5 * field.work(torus, bond.site, bond.axis) * jump).exp()
}

/// Perturbation factor `exp(F(t, η^{x,y}) - F(t, η))` with `F = ½ Σ H(t, x/N) η_x`.
pub fn perturbation_factor(
    h: &dyn TimeField,
    torus: &Torus,
    config: &Configuration,
    bond: Bond,
    t: f64,
) -> f64 {
    let x = bond.site;
    let y = torus.head(bond);
    let jump = config.occ(x) as f64 - config.occ(y) as f64;
    if jump == 0.0 {
        return 1.0;
    }
    let dh = h.value(t, &torus.position(y)) - h.value(t, &torus.position(x));
    (0.5 * dh * jump).exp()
}

/// `c^{E,H}(t) = c^E · exp(F(t, η^{x,y}) - F(t, η))`.
pub fn rate_perturbed(
    base_asymmetric_rate: f64,
    h: &dyn TimeField,
    torus: &Torus,
    config: &Configuration,
    bond: Bond,
    t: f64,
) -> f64 {
    base_asymmetric_rate * perturbation_factor(h, torus, config, bond, t)
}

/// A rate rule specialized to one torus, with per-bond field work, witness
/// sets and the inverse dependency map used by the Monte Carlo engine.
#[derive(Debug, Clone)]
pub struct RateModel {
    torus: Torus,
    family: RateFamily,
    interaction: InteractionSpec,
    field: FieldSpec,
    works: Vec<f64>,
    witnesses: Vec<Vec<usize>>,
    // site -> bonds whose rate reads that site
    dependents: Vec<Vec<usize>>,
}

impl RateModel {
    pub fn new(
        torus: Torus,
        family: RateFamily,
        interaction: InteractionSpec,
        field: FieldSpec,
    ) -> Result<Self> {
        family.validate()?;
        field.validate()?;
        if field.dim != torus.dim() {
            return Err(Error::Mismatch(format!(
                "field of dimension {} on a torus of dimension {}",
                field.dim,
                torus.dim()
            )));
        }
        let bonds = torus.bonds().to_vec();
        let works = bonds.iter().map(|b| field.work(&torus, b.site, b.axis)).collect();
        let witnesses: Vec<Vec<usize>> = bonds.iter().map(|&b| family.witnesses(&torus, b)).collect();
        let mut dependents = vec![Vec::new(); torus.sites()];
        for (i, &b) in bonds.iter().enumerate() {
            let x = b.site;
            let y = torus.head(b);
            let mut reads = vec![x, y];
            reads.extend(&witnesses[i]);
            if !interaction.is_zero() {
                for e in [x, y] {
                    reads.extend(torus.neighbors(e));
                }
            }
            reads.sort_unstable();
            reads.dedup();
            for s in reads {
                dependents[s].push(i);
            }
        }
        Ok(RateModel {
            torus,
            family,
            interaction,
            field,
            works,
            witnesses,
            dependents,
        })
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    pub fn family(&self) -> &RateFamily {
        &self.family
    }

    pub fn interaction(&self) -> &InteractionSpec {
        &self.interaction
    }

    pub fn field(&self) -> &FieldSpec {
        &self.field
    }

    /// Field work `E_N(x, x + e_i)` of bond `index`.
    pub fn work(&self, index: usize) -> f64 {
        self.works[index]
    }

    /// Bonds whose rate depends on the occupation of `site`.
    pub fn dependents(&self, site: usize) -> &[usize] {
        &self.dependents[site]
    }

    pub fn symmetric(&self, config: &Configuration, index: usize) -> f64 {
        let b = self.torus.bonds()[index];
        self.family.prefactor(config, &self.witnesses[index])
            * (-0.5 * energy_diff(&self.interaction, &self.torus, config, b)).exp()
    }

    pub fn asymmetric(&self, config: &Configuration, index: usize) -> f64 {
        let b = self.torus.bonds()[index];
        let jump = config.occ(b.site) as f64 - config.occ(self.torus.head(b)) as f64;
        self.symmetric(config, index) * (0.5 * self.works[index] * jump).exp()
    }

    /// Rate of an exchange that changes the configuration; zero when both
    /// endpoints agree (such an exchange is the identity).
    pub fn active_rate(&self, config: &Configuration, index: usize) -> f64 {
        let b = self.torus.bonds()[index];
        if config.get(b.site) == config.get(self.torus.head(b)) {
            0.0
        } else {
            self.asymmetric(config, index)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{FourierSeries, StaticPotential};
    use crate::gibbs::hamiltonian;
    use crate::lattice::{enumerate_sector, exchange};

    #[test]
    fn symmetric_rate_examples() {
        let t = Torus::new(1, 8).unwrap();
        let zero = InteractionSpec::zero();
        let c = Configuration::from_bits("11010110").unwrap();
        let b = Bond { site: 3, axis: 0 };
        assert_eq!(rate_symmetric(&RateFamily::Heatbath, &zero, &t, &c, b), 1.0);
        // two occupied trailing witnesses at sites 1 and 2? sites 2 and 1: η_2 = 0, η_1 = 1
        let nw = RateFamily::neighbor_weighted(0.5);
        let c2 = Configuration::from_bits("01100000").unwrap();
        assert_eq!(rate_symmetric(&nw, &zero, &t, &c2, b), 2.0);
        assert_eq!(rate_symmetric(&nw, &zero, &t, &c, b), 1.5);
        // ∇H = 0.6 gives e^{-0.3}
        let int = InteractionSpec::nearest_neighbor(0.6);
        let c3 = Configuration::from_bits("00010100").unwrap();
        let dh = energy_diff(&int, &t, &c3, b);
        assert!((dh - 0.6).abs() < 1e-15);
        let r = rate_symmetric(&RateFamily::Heatbath, &int, &t, &c3, b);
        assert!((r - (-0.3f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn asymmetric_rate_examples() {
        let t = Torus::new(1, 10).unwrap();
        let zero = InteractionSpec::zero();
        let f = FieldSpec::constant(&[1.0]);
        let b = Bond { site: 0, axis: 0 };
        let c = Configuration::from_bits("1000000000").unwrap();
        let r = rate_asymmetric(&RateFamily::Heatbath, &zero, &f, &t, &c, b);
        assert!((r - 0.05f64.exp()).abs() < 1e-15);
        let same = Configuration::from_bits("1100000000").unwrap();
        assert_eq!(rate_asymmetric(&RateFamily::Heatbath, &zero, &f, &t, &same, b), 1.0);
    }

    fn local_detailed_balance_residual(family: RateFamily, interaction: InteractionSpec, field: FieldSpec, t: &Torus) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..=t.sites() {
            for c in enumerate_sector(t, k).unwrap() {
                for &b in t.bonds() {
                    let e = exchange(t, &c, b);
                    let lhs = rate_asymmetric(&family, &interaction, &field, t, &e, b);
                    let jump = c.occ(t.head(b)) as f64 - c.occ(b.site) as f64;
                    let expo = energy_diff(&interaction, t, &c, b) + field.work(t, b.site, b.axis) * jump;
                    let rhs = rate_asymmetric(&family, &interaction, &field, t, &c, b) * expo.exp();
                    worst = worst.max((lhs - rhs).abs() / rhs);
                }
            }
        }
        worst
    }

    #[test]
    fn local_detailed_balance_is_exact() {
        let t = Torus::new(1, 6).unwrap();
        let u = FourierSeries::cosine(1, 0, 1, 0.4);
        for family in [RateFamily::Heatbath, RateFamily::neighbor_weighted(0.5)] {
            for int in [InteractionSpec::zero(), InteractionSpec::nearest_neighbor(0.8)] {
                for field in [FieldSpec::constant(&[1.3]), FieldSpec::conservative(1, u.clone())] {
                    assert!(local_detailed_balance_residual(family, int, field, &t) < 1e-14);
                }
            }
        }
    }

    #[test]
    fn perturbed_rates() {
        let t = Torus::new(1, 64).unwrap();
        let zero = InteractionSpec::zero();
        let e = FieldSpec::constant(&[0.7]);
        let hs = FourierSeries::sine(1, 0, 1, 1.0);
        let h = StaticPotential(hs.clone());
        let flat = StaticPotential(FourierSeries::cosine(1, 0, 0, 3.0));
        let none = StaticPotential(FourierSeries::default());
        // field E + ∇H in decomposed form: constant 0.7 plus the conservative part -∇(-H)
        let combined = FieldSpec {
            potential: hs.negated(),
            ..e.clone()
        };
        let mut seed = 12345u64;
        for _ in 0..200 {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let c = Configuration::from_words(vec![seed], 64).unwrap();
            for &b in t.bonds() {
                let base = rate_asymmetric(&RateFamily::Heatbath, &zero, &e, &t, &c, b);
                assert_eq!(rate_perturbed(base, &none, &t, &c, b, 0.3), base);
                assert!((rate_perturbed(base, &flat, &t, &c, b, 0.3) - base).abs() < 1e-15);
                let p = rate_perturbed(base, &h, &t, &c, b, 0.0);
                let want = rate_asymmetric(&RateFamily::Heatbath, &zero, &combined, &t, &c, b);
                assert!((p / want - 1.0).abs() < 1.0 / (64.0 * 64.0));
            }
        }
    }

    #[test]
    fn symmetric_witness_rates_are_detailed_balanced() {
        let t = Torus::new(2, 3).unwrap();
        let fam = RateFamily::NeighborWeighted {
            a: 0.3,
            witnesses: WitnessSet::Symmetric { radius: 1 },
        };
        let int = InteractionSpec::nearest_neighbor(0.5);
        for mask in (0..512u64).step_by(7) {
            let c = Configuration::from_mask(mask, 9);
            for &b in t.bonds() {
                let e = exchange(&t, &c, b);
                let lhs = rate_symmetric(&fam, &int, &t, &e, b);
                let dh = hamiltonian(&int, &t, &e) - hamiltonian(&int, &t, &c);
                let rhs = rate_symmetric(&fam, &int, &t, &c, b) * dh.exp();
                assert!((lhs - rhs).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn dependents_cover_every_read() {
        let t = Torus::new(2, 5).unwrap();
        let model = RateModel::new(
            t.clone(),
            RateFamily::neighbor_weighted(0.5),
            InteractionSpec::nearest_neighbor(0.3),
            FieldSpec::constant(&[0.5, -0.2]),
        )
        .unwrap();
        let base = Configuration::from_mask(0b1011_0110_1100_1010_0110_1, 25);
        for s in 0..25 {
            let mut flipped = base.clone();
            flipped.set(s, !base.get(s));
            for i in 0..t.bond_count() {
                if model.asymmetric(&base, i) != model.asymmetric(&flipped, i) {
                    assert!(model.dependents(s).contains(&i), "site {s} bond {i}");
                }
            }
        }
    }
}
