//! Grid densities on the unit torus and the microscopic-to-macroscopic maps.
//!
//! A [`DensityField`] on `M^d` cells stores cell values in row-major order
//! with axis 0 varying fastest, matching the site order of [`Torus`]. Cell
//! `i` along an axis covers `[i/M, (i+1)/M)` and has centre `(i + ½)/M`.

use std::io::Write;

use serde::Serialize;

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::lattice::{Configuration, Torus};

/// Values may exceed `[0, 1]` by at most this much (rounding in solvers).
pub const RANGE_TOLERANCE: f64 = 1e-12;

// 4-point Gauss–Legendre nodes and weights on [0, 1].
const GAUSS4: [(f64, f64); 4] = [
    (0.069_431_844_202_973_71, 0.173_927_422_568_726_93),
    (0.330_009_478_207_571_87, 0.326_072_577_431_273_07),
    (0.669_990_521_792_428_1, 0.326_072_577_431_273_07),
    (0.930_568_155_797_026_3, 0.173_927_422_568_726_93),
];

/// A density profile sampled on a uniform periodic grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityField {
    dim: usize,
    side: usize,
    values: Vec<f64>,
}

fn cells(dim: usize, side: usize) -> usize {
    side.pow(dim as u32)
}

impl DensityField {
    pub fn new(dim: usize, side: usize, values: Vec<f64>) -> Result<Self> {
        let f = Self::unchecked(dim, side, values)?;
        if let Some((i, v)) = f
            .values
            .iter()
            .enumerate()
            .find(|(_, v)| !(-RANGE_TOLERANCE..=1.0 + RANGE_TOLERANCE).contains(*v))
        {
            return Err(Error::InvalidArgument(format!(
                "density value {v} in cell {i} lies outside [0, 1]"
            )));
        }
        Ok(f)
    }

    /// A grid function without the `[0, 1]` range check (residuals, potentials).
    pub fn unchecked(dim: usize, side: usize, values: Vec<f64>) -> Result<Self> {
        if !(1..=3).contains(&dim) || side == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid of dimension {dim} and side {side}"
            )));
        }
        if values.len() != cells(dim, side) {
            return Err(Error::Mismatch(format!(
                "{} values for a grid of {} cells",
                values.len(),
                cells(dim, side)
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite grid value".into()));
        }
        Ok(DensityField { dim, side, values })
    }

    pub fn constant(dim: usize, side: usize, value: f64) -> Result<Self> {
        Self::new(dim, side, vec![value; cells(dim, side)])
    }

    /// Samples `f` at cell centres.
    pub fn sample<F: Fn(&[f64]) -> f64>(dim: usize, side: usize, f: F) -> Result<Self> {
        let values = (0..cells(dim, side))
            .map(|i| f(&center(dim, side, i)))
            .collect();
        Self::new(dim, side, values)
    }

    /// Cell averages of `f` by tensor 4-point Gauss quadrature.
    pub fn cell_average<F: Fn(&[f64]) -> f64>(dim: usize, side: usize, f: F) -> Result<Self> {
        let h = 1.0 / side as f64;
        let nodes = 4usize.pow(dim as u32);
        let mut r = vec![0.0; dim];
        let values = (0..cells(dim, side))
            .map(|i| {
                let lo: Vec<f64> = grid_coords(dim, side, i).iter().map(|&c| c as f64 * h).collect();
                let mut acc = 0.0;
                for q in 0..nodes {
                    let mut rem = q;
                    let mut w = 1.0;
                    for a in 0..dim {
                        let (s, wt) = GAUSS4[rem % 4];
                        rem /= 4;
                        r[a] = lo[a] + s * h;
                        w *= wt;
                    }
                    acc += w * f(&r);
                }
                acc
            })
            .collect();
        Self::new(dim, side, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.side as f64
    }

    pub fn coords(&self, i: usize) -> Vec<usize> {
        grid_coords(self.dim, self.side, i)
    }

    pub fn center(&self, i: usize) -> Vec<f64> {
        center(self.dim, self.side, i)
    }

    /// Index of the neighbour of cell `i` at `delta` cells along `axis`.
    pub fn neighbor(&self, i: usize, axis: usize, delta: i64) -> usize {
        neighbor(self.dim, self.side, i, axis, delta)
    }

    /// `∫ ρ dr`, the arithmetic mean of the cell values.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    fn check_same_grid(&self, other: &DensityField) -> Result<()> {
        if self.dim != other.dim || self.side != other.side {
            return Err(Error::Mismatch(format!(
                "grids {}^{} and {}^{}",
                self.side, self.dim, other.side, other.dim
            )));
        }
        Ok(())
    }

    pub fn l1_distance(&self, other: &DensityField) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / self.len() as f64)
    }

    pub fn l2_distance(&self, other: &DensityField) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok((self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / self.len() as f64)
            .sqrt())
    }

    /// Mass-conservative averaging onto `side / factor` cells per axis.
    pub fn coarsen(&self, side: usize) -> Result<DensityField> {
        if side == 0 || !self.side.is_multiple_of(side) {
            return Err(Error::Mismatch(format!(
                "cannot coarsen a grid of side {} to side {side}",
                self.side
            )));
        }
        let ratio = self.side / side;
        let mut out = vec![0.0; cells(self.dim, side)];
        for (i, v) in self.values.iter().enumerate() {
            let c = self.coords(i);
            let mut j = 0;
            let mut stride = 1;
            for a in 0..self.dim {
                j += (c[a] / ratio) * stride;
                stride *= side;
            }
            out[j] += v;
        }
        let w = 1.0 / ratio.pow(self.dim as u32) as f64;
        for v in out.iter_mut() {
            *v *= w;
        }
        DensityField::unchecked(self.dim, side, out)
    }

    /// `(shift ρ)_i = ρ_{i + z}` for an integer cell offset `z`.
    pub fn shifted(&self, z: &[i64]) -> DensityField {
        let values = (0..self.len())
            .map(|i| {
                let mut j = i;
                for (a, &d) in z.iter().enumerate() {
                    j = self.neighbor(j, a, d);
                }
                self.values[j]
            })
            .collect();
        DensityField {
            dim: self.dim,
            side: self.side,
            values,
        }
    }

    /// Writes `i0[,i1[,i2]],value` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{},value", axis_header(self.dim))?;
        for (i, v) in self.values.iter().enumerate() {
            let c = self.coords(i);
            let idx: Vec<String> = c.iter().map(|x| x.to_string()).collect();
            writeln!(w, "{},{v:.16e}", idx.join(","))?;
        }
        Ok(())
    }
}

fn axis_header(dim: usize) -> String {
    (0..dim).map(|a| format!("i{a}")).collect::<Vec<_>>().join(",")
}

pub(crate) fn grid_coords(dim: usize, side: usize, i: usize) -> Vec<usize> {
    let mut rem = i;
    (0..dim)
        .map(|_| {
            let c = rem % side;
            rem /= side;
            c
        })
        .collect()
}

pub(crate) fn center(dim: usize, side: usize, i: usize) -> Vec<f64> {
    grid_coords(dim, side, i)
        .iter()
        .map(|&c| (c as f64 + 0.5) / side as f64)
        .collect()
}

pub(crate) fn neighbor(dim: usize, side: usize, i: usize, axis: usize, delta: i64) -> usize {
    debug_assert!(axis < dim);
    let stride = side.pow(axis as u32);
    let c = (i / stride) % side;
    let nc = (c as i64 + delta).rem_euclid(side as i64) as usize;
    i - c * stride + nc * stride
}

/// A time-indexed sequence of densities on a common grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Path {
    pub times: Vec<f64>,
    pub slices: Vec<DensityField>,
}

impl Path {
    pub fn new(times: Vec<f64>, slices: Vec<DensityField>) -> Result<Self> {
        if times.len() != slices.len() || times.is_empty() {
            return Err(Error::Mismatch(format!(
                "{} times for {} slices",
                times.len(),
                slices.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("path times must increase".into()));
        }
        let (d, m) = (slices[0].dim(), slices[0].side());
        if slices.iter().any(|s| s.dim() != d || s.side() != m) {
            return Err(Error::Mismatch("path slices on different grids".into()));
        }
        Ok(Path { times, slices })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn first(&self) -> &DensityField {
        &self.slices[0]
    }

    pub fn last(&self) -> &DensityField {
        &self.slices[self.slices.len() - 1]
    }

    pub fn duration(&self) -> f64 {
        self.times[self.len() - 1] - self.times[0]
    }

    /// The time reversal `(θπ)_s = π_{T - s}` on `[0, T]`.
    pub fn reversed(&self) -> Path {
        let end = self.times[self.len() - 1];
        let start = self.times[0];
        Path {
            times: self.times.iter().rev().map(|t| start + end - t).collect(),
            slices: self.slices.iter().rev().cloned().collect(),
        }
    }

    /// Largest deviation of a slice mass from the initial mass.
    pub fn mass_drift(&self) -> f64 {
        let m0 = self.slices[0].mass();
        self.slices
            .iter()
            .map(|s| (s.mass() - m0).abs())
            .fold(0.0, f64::max)
    }

    /// Writes `t,i0[,i1],value` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.slices[0].dim();
        writeln!(w, "t,{},value", axis_header(d))?;
        for (t, s) in self.times.iter().zip(&self.slices) {
            for (i, v) in s.values().iter().enumerate() {
                let idx: Vec<String> = s.coords(i).iter().map(|x| x.to_string()).collect();
                writeln!(w, "{t:.16e},{},{v:.16e}", idx.join(","))?;
            }
        }
        Ok(())
    }
}

/// `π^N(η)`: the occupation of site `x` on cell `x` (grid side `N`).
pub fn empirical_density(torus: &Torus, config: &Configuration) -> DensityField {
    let values = (0..torus.sites()).map(|x| config.occ(x) as f64).collect();
    DensityField {
        dim: torus.dim(),
        side: torus.side(),
        values,
    }
}

/// Mean occupation of the periodic box of sup-radius `l` around `x`; a box
/// wider than the torus counts every site once.
pub fn block_average(torus: &Torus, config: &Configuration, x: usize, l: usize) -> f64 {
    let n = torus.side();
    let width = (2 * l + 1).min(n);
    let start: Vec<i64> = torus
        .coords(x)
        .iter()
        .map(|&c| c as i64 - if 2 * l + 1 >= n { 0 } else { l as i64 })
        .collect();
    let dim = torus.dim();
    let total = width.pow(dim as u32);
    let mut occupied = 0usize;
    let mut c = vec![0i64; dim];
    for k in 0..total {
        let mut rem = k;
        for a in 0..dim {
            c[a] = start[a] + (rem % width) as i64;
            rem /= width;
        }
        occupied += config.occ(torus.index(&c)) as usize;
    }
    occupied as f64 / total as f64
}

/// One-dimensional mollifier profile on `[-1, 1]`: flat at ½ on `|u| ≤ 1 - κ`,
/// with a C² polynomial edge chosen so the total mass is one.
pub fn mollifier_profile(u: f64, kappa: f64) -> f64 {
    let a = u.abs();
    if a >= 1.0 {
        return 0.0;
    }
    if a <= 1.0 - kappa {
        return 0.5;
    }
    let s = (a - (1.0 - kappa)) / kappa;
    let s3 = s * s * s;
    let edge = 1.0 - 10.0 * s3 + 15.0 * s3 * s - 6.0 * s3 * s * s
        + 70.0 * s3 * (1.0 - s).powi(3);
    0.5 * edge
}

/// Periodic convolution with the plateau mollifier `ψ^(κ)_ε` (a tensor product
/// of [`mollifier_profile`] scaled to support `[-ε, ε]^d`).
pub fn mollify(density: &DensityField, kappa: f64, eps: f64) -> Result<DensityField> {
    if !(eps > 0.0 && eps < 0.5) || !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "mollifier needs ε in (0, 1/2) and κ in (0, 1), got ε={eps}, κ={kappa}"
        )));
    }
    let h = density.spacing();
    if kappa * eps < 2.0 * h {
        return Err(Error::InvalidArgument(format!(
            "grid spacing {h} too coarse for a mollifier edge of width {}",
            kappa * eps
        )));
    }
    let reach = (eps / h).ceil() as i64;
    let mut weights: Vec<(i64, f64)> = (-reach..=reach)
        .map(|k| (k, mollifier_profile(k as f64 * h / eps, kappa)))
        .filter(|(_, w)| *w > 0.0)
        .collect();
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    for w in weights.iter_mut() {
        w.1 /= total;
    }
    let mut current = density.values.clone();
    for axis in 0..density.dim {
        let mut next = vec![0.0; current.len()];
        for (i, out) in next.iter_mut().enumerate() {
            *out = weights
                .iter()
                .map(|&(k, w)| w * current[density.neighbor(i, axis, k)])
                .sum();
        }
        current = next;
    }
    DensityField::new(density.dim, density.side, current)
}

/// Cellwise ensemble mean and standard error.
#[derive(Debug, Clone, Serialize)]
pub struct EnsembleMean {
    pub time: f64,
    pub mean: DensityField,
    pub standard_error: Vec<f64>,
    pub trajectories: usize,
}

/// Mean over trajectories of the empirical density at observation `index`,
/// coarsened to `side` cells per axis.
pub fn ensemble_mean(
    torus: &Torus,
    trajectories: &[Trajectory],
    index: usize,
    side: usize,
) -> Result<EnsembleMean> {
    let first = trajectories
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty ensemble".into()))?;
    let time = *first
        .times
        .get(index)
        .ok_or_else(|| Error::InvalidArgument(format!("no observation {index}")))?;
    let cells_out = cells(torus.dim(), side);
    let mut sum = vec![0.0; cells_out];
    let mut sum_sq = vec![0.0; cells_out];
    for tr in trajectories {
        if tr.times.get(index) != Some(&time) || tr.snapshots.len() != tr.times.len() {
            return Err(Error::Mismatch("trajectories observed at different times".into()));
        }
        let snap = &tr.snapshots[index];
        if snap.len() != torus.sites() {
            return Err(Error::Mismatch("trajectories on different tori".into()));
        }
        let c = empirical_density(torus, snap).coarsen(side)?;
        for (i, v) in c.values.iter().enumerate() {
            sum[i] += v;
            sum_sq[i] += v * v;
        }
    }
    let n = trajectories.len() as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let standard_error = if trajectories.len() < 2 {
        vec![0.0; cells_out]
    } else {
        sum_sq
            .iter()
            .zip(&mean)
            .map(|(s2, m)| ((s2 / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt())
            .collect()
    };
    Ok(EnsembleMean {
        time,
        mean: DensityField::new(torus.dim(), side, mean)?,
        standard_error,
        trajectories: trajectories.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empirical_density_examples() {
        let t = Torus::new(1, 4).unwrap();
        let full = Configuration::from_bits("1111").unwrap();
        assert!(empirical_density(&t, &full).values().iter().all(|&v| v == 1.0));
        let alt = Configuration::from_bits("1010").unwrap();
        let e = empirical_density(&t, &alt);
        assert_eq!(e.values(), &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(e.mass(), 0.5);
    }

    #[test]
    fn block_average_examples() {
        let t = Torus::new(1, 6).unwrap();
        let c = Configuration::from_bits("110100").unwrap();
        assert!((block_average(&t, &c, 0, 1) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(block_average(&t, &c, 3, 0), 1.0);
        assert_eq!(block_average(&t, &c, 2, 0), 0.0);
        assert_eq!(block_average(&t, &c, 4, 3), 0.5);
        assert_eq!(block_average(&t, &c, 4, 10), 0.5);
    }

    #[test]
    fn mollifier_has_unit_mass_and_plateau() {
        for kappa in [0.1, 0.3, 0.8] {
            let n = 200_000;
            let mass: f64 = (0..n)
                .map(|i| mollifier_profile(-1.0 + 2.0 * (i as f64 + 0.5) / n as f64, kappa))
                .sum::<f64>()
                * 2.0
                / n as f64;
            assert!((mass - 1.0).abs() < 1e-9);
            assert_eq!(mollifier_profile(0.99 * (1.0 - kappa), kappa), 0.5);
            assert_eq!(mollifier_profile(1.0, kappa), 0.0);
            // C¹ at both ends of the edge
            let h = 1e-6;
            let a = 1.0 - kappa;
            assert!((mollifier_profile(a + h, kappa) - 0.5).abs() < 1e-9);
            assert!(mollifier_profile(1.0 - h, kappa) < 1e-9);
        }
    }

    #[test]
    fn mollify_examples() {
        let c = DensityField::constant(1, 64, 0.3).unwrap();
        let m = mollify(&c, 0.5, 0.1).unwrap();
        assert!(m.values().iter().all(|v| (v - 0.3).abs() < 1e-15));
        let half = DensityField::sample(1, 400, |r| if r[0] < 0.5 { 1.0 } else { 0.0 }).unwrap();
        let m = mollify(&half, 0.5, 0.1).unwrap();
        assert!((m.mass() - half.mass()).abs() < 1e-12);
        let layer = m.values().iter().filter(|&&v| v > 1e-12 && v < 1.0 - 1e-12).count();
        // two interfaces, each at most 2ε wide
        assert!(layer as f64 * m.spacing() <= 2.0 * 2.0 * 0.1 + 1e-12);
        let jumps = m.values().windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
        assert!(jumps < 0.05);
        assert!(mollify(&half, 0.01, 0.1).is_err());
        assert!(mollify(&half, 0.5, 0.6).is_err());
    }

    #[test]
    fn coarsen_conserves_mass() {
        let f = DensityField::sample(2, 8, |r| 0.5 + 0.3 * (6.0 * r[0]).sin() * r[1]).unwrap();
        let c = f.coarsen(4).unwrap();
        assert!((c.mass() - f.mass()).abs() < 1e-15);
        assert!(f.coarsen(3).is_err());
    }

    #[test]
    fn path_reversal() {
        let a = DensityField::constant(1, 4, 0.2).unwrap();
        let b = DensityField::constant(1, 4, 0.4).unwrap();
        let p = Path::new(vec![0.0, 0.25, 1.0], vec![a.clone(), a.clone(), b.clone()]).unwrap();
        let r = p.reversed();
        assert_eq!(r.times, vec![0.0, 0.75, 1.0]);
        assert_eq!(r.slices[0], b);
    }

    proptest! {
        #[test]
        fn mollify_is_a_mass_preserving_contraction(values in prop::collection::vec(0.0f64..=1.0, 64)) {
            let f = DensityField::new(1, 64, values).unwrap();
            let m = mollify(&f, 0.6, 0.2).unwrap();
            prop_assert!((m.mass() - f.mass()).abs() < 1e-12);
            prop_assert!(m.min() >= f.min() - 1e-15 && m.max() <= f.max() + 1e-15);
        }

        #[test]
        fn coarse_maps_commute_with_shifts(bits in prop::collection::vec(any::<bool>(), 32), z in 0usize..32) {
            let t = Torus::new(1, 32).unwrap();
            let c = Configuration::from_occupancy(&bits);
            let s = crate::lattice::shift(&t, &c, z);
            let e = empirical_density(&t, &c);
            prop_assert_eq!(empirical_density(&t, &s), e.shifted(&[z as i64]));
            prop_assert_eq!(block_average(&t, &s, 0, 2), block_average(&t, &c, z, 2));
            let m = mollify(&e, 0.5, 0.25).unwrap();
            let ms = mollify(&e.shifted(&[z as i64]), 0.5, 0.25).unwrap();
            for (a, b) in ms.values().iter().zip(m.shifted(&[z as i64]).values()) {
                prop_assert!((a - b).abs() < 1e-13);
            }
            if z % 4 == 0 {
                let coarse = e.coarsen(8).unwrap().shifted(&[(z / 4) as i64]);
                prop_assert_eq!(empirical_density(&t, &s).coarsen(8).unwrap(), coarse);
            }
        }
    }
}
