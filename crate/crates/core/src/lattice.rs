//! Geometry of the discrete torus and the configuration algebra on it.
//!
//! Sites are indexed row-major over coordinates, with axis 0 varying
//! fastest. The shift convention is `(shift(η, z))_y = η_{y+z}`.

use crate::error::{Error, Result};

/// Largest torus volume for which a fixed-particle-number sector may be enumerated.
pub const MAX_ENUMERABLE_SITES: usize = 28;

/// The discrete torus of side `n` in dimension `dim`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Torus {
    dim: usize,
    side: usize,
    sites: usize,
    strides: [usize; 3],
    bonds: Vec<Bond>,
    // (site * dim + axis) -> index into `bonds` of the bond {site, site + e_axis}
    bond_lookup: Vec<usize>,
}

/// A nearest-neighbour bond stored in canonical orientation `(site, site + e_axis)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bond {
    pub site: usize,
    pub axis: usize,
}

impl Torus {
    pub fn new(dim: usize, side: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidArgument(format!(
                "torus dimension must be in 1..=3, got {dim}"
            )));
        }
        if side < 2 {
            return Err(Error::InvalidArgument(format!(
                "torus side must be at least 2, got {side}"
            )));
        }
        let sites = side
            .checked_pow(dim as u32)
            .filter(|&s| s <= 1 << 30)
            .ok_or_else(|| Error::InvalidArgument("torus volume overflows".into()))?;
        let mut strides = [0; 3];
        let mut s = 1;
        for stride in strides.iter_mut().take(dim) {
            *stride = s;
            s *= side;
        }
        let mut torus = Torus {
            dim,
            side,
            sites,
            strides,
            bonds: Vec::new(),
            bond_lookup: vec![usize::MAX; sites * dim],
        };
        // On a side-2 torus x + e_i and x - e_i coincide; keep each unordered pair once.
        for site in 0..sites {
            for axis in 0..dim {
                if side == 2 && torus.coordinate(site, axis) == 1 {
                    continue;
                }
                torus.bond_lookup[site * dim + axis] = torus.bonds.len();
                torus.bonds.push(Bond { site, axis });
            }
        }
        if side == 2 {
            for site in 0..sites {
                for axis in 0..dim {
                    if torus.coordinate(site, axis) == 1 {
                        let partner = torus.step(site, axis, 1);
                        torus.bond_lookup[site * dim + axis] =
                            torus.bond_lookup[partner * dim + axis];
                    }
                }
            }
        }
        Ok(torus)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    /// Index into [`Torus::bonds`] of the bond joining `site` and `site + e_axis`.
    pub fn bond_index(&self, site: usize, axis: usize) -> usize {
        self.bond_lookup[site * self.dim + axis]
    }

    pub fn coordinate(&self, site: usize, axis: usize) -> usize {
        (site / self.strides[axis]) % self.side
    }

    pub fn coords(&self, site: usize) -> Vec<usize> {
        (0..self.dim).map(|a| self.coordinate(site, a)).collect()
    }

    /// Site index of a coordinate vector; coordinates are reduced modulo the side.
    pub fn index(&self, coords: &[i64]) -> usize {
        debug_assert_eq!(coords.len(), self.dim);
        let n = self.side as i64;
        coords
            .iter()
            .enumerate()
            .map(|(a, &c)| (c.rem_euclid(n) as usize) * self.strides[a])
            .sum()
    }

    /// `site + delta * e_axis` with periodic wraparound.
    pub fn step(&self, site: usize, axis: usize, delta: i64) -> usize {
        let c = self.coordinate(site, axis) as i64;
        let n = self.side as i64;
        let nc = (c + delta).rem_euclid(n) as usize;
        site - self.coordinate(site, axis) * self.strides[axis] + nc * self.strides[axis]
    }

    /// Site `x + z` (vector addition on the torus).
    pub fn translate(&self, x: usize, z: usize) -> usize {
        let mut out = 0;
        for a in 0..self.dim {
            let c = (self.coordinate(x, a) + self.coordinate(z, a)) % self.side;
            out += c * self.strides[a];
        }
        out
    }

    /// Site `-z`.
    pub fn negate(&self, z: usize) -> usize {
        let mut out = 0;
        for a in 0..self.dim {
            let c = (self.side - self.coordinate(z, a)) % self.side;
            out += c * self.strides[a];
        }
        out
    }

    pub fn head(&self, bond: Bond) -> usize {
        self.step(bond.site, bond.axis, 1)
    }

    /// Position `x / N` of a site in the unit torus.
    pub fn position(&self, site: usize) -> Vec<f64> {
        (0..self.dim)
            .map(|a| self.coordinate(site, a) as f64 / self.side as f64)
            .collect()
    }

    /// Lattice sup-norm distance on the torus.
    pub fn distance(&self, x: usize, y: usize) -> usize {
        (0..self.dim)
            .map(|a| {
                let d = self.coordinate(x, a).abs_diff(self.coordinate(y, a));
                d.min(self.side - d)
            })
            .max()
            .unwrap_or(0)
    }

    /// The nearest neighbours of a site (2d entries; duplicates when the side is 2).
    pub fn neighbors(&self, site: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.dim).flat_map(move |a| [self.step(site, a, -1), self.step(site, a, 1)])
    }

    pub fn check_bond(&self, bond: Bond) -> Result<()> {
        if bond.site >= self.sites || bond.axis >= self.dim {
            return Err(Error::InvalidArgument(format!(
                "bond {bond:?} not on a torus with {} sites in dimension {}",
                self.sites, self.dim
            )));
        }
        Ok(())
    }
}

/// Bit-packed occupation numbers with a cached particle count.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    words: Vec<u64>,
    len: usize,
    count: usize,
}

impl Configuration {
    pub fn empty(len: usize) -> Self {
        Configuration {
            words: vec![0; len.div_ceil(64)],
            len,
            count: 0,
        }
    }

    pub fn from_occupancy(occupancy: &[bool]) -> Self {
        let mut c = Configuration::empty(occupancy.len());
        for (x, &o) in occupancy.iter().enumerate() {
            c.set(x, o);
        }
        c
    }

    /// Parses a string of `0`/`1` characters, site 0 first.
    pub fn from_bits(bits: &str) -> Result<Self> {
        let occ = bits
            .chars()
            .map(|ch| match ch {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::InvalidArgument(format!(
                    "unexpected character {other:?} in configuration string"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Configuration::from_occupancy(&occ))
    }

    /// Configuration whose first `len` sites are given by the bits of `mask`.
    pub fn from_mask(mask: u64, len: usize) -> Self {
        debug_assert!(len <= 64);
        let mask = if len == 64 { mask } else { mask & ((1u64 << len) - 1) };
        Configuration {
            words: if len == 0 { Vec::new() } else { vec![mask] },
            len,
            count: mask.count_ones() as usize,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn from_words(words: Vec<u64>, len: usize) -> Result<Self> {
        if words.len() != len.div_ceil(64) {
            return Err(Error::InvalidArgument(format!(
                "{} words cannot hold exactly {len} sites",
                words.len()
            )));
        }
        let mut words = words;
        if !len.is_multiple_of(64) {
            if let Some(last) = words.last_mut() {
                *last &= (1u64 << (len % 64)) - 1;
            }
        }
        let count = words.iter().map(|w| w.count_ones() as usize).sum();
        Ok(Configuration { words, len, count })
    }

    /// The configuration as a single word (only valid for at most 64 sites).
    pub fn mask(&self) -> u64 {
        debug_assert!(self.len <= 64);
        self.words.first().copied().unwrap_or(0)
    }

    #[inline]
    pub fn get(&self, x: usize) -> bool {
        (self.words[x >> 6] >> (x & 63)) & 1 == 1
    }

    #[inline]
    pub fn occ(&self, x: usize) -> u8 {
        ((self.words[x >> 6] >> (x & 63)) & 1) as u8
    }

    #[inline]
    pub fn set(&mut self, x: usize, value: bool) {
        let old = self.get(x);
        if old != value {
            self.words[x >> 6] ^= 1 << (x & 63);
            if value {
                self.count += 1;
            } else {
                self.count -= 1;
            }
        }
    }

    /// Swaps the occupations of `x` and `y` in place.
    #[inline]
    pub fn swap_sites(&mut self, x: usize, y: usize) {
        if self.get(x) != self.get(y) {
            self.words[x >> 6] ^= 1 << (x & 63);
            self.words[y >> 6] ^= 1 << (y & 63);
        }
    }

    pub fn occupancy(&self) -> Vec<bool> {
        (0..self.len).map(|x| self.get(x)).collect()
    }

    pub fn to_bits(&self) -> String {
        (0..self.len)
            .map(|x| if self.get(x) { '1' } else { '0' })
            .collect()
    }

    pub fn density(&self) -> f64 {
        self.count as f64 / self.len as f64
    }

    fn check_count(&self) -> bool {
        self.words.iter().map(|w| w.count_ones() as usize).sum::<usize>() == self.count
    }
}

/// `η^{x,y}`: occupations at the two endpoints of `bond` exchanged.
pub fn exchange(torus: &Torus, config: &Configuration, bond: Bond) -> Configuration {
    let mut out = config.clone();
    out.swap_sites(bond.site, torus.head(bond));
    debug_assert!(out.check_count());
    out
}

/// `(shift(η, z))_y = η_{y+z}`.
pub fn shift(torus: &Torus, config: &Configuration, z: usize) -> Configuration {
    let mut out = Configuration::empty(config.len());
    for y in 0..torus.sites() {
        if config.get(torus.translate(y, z)) {
            out.set(y, true);
        }
    }
    out
}

/// Bit masks of every configuration with `k` particles on `n` sites, in increasing order.
pub fn sector_masks(n: usize, k: usize) -> Result<Vec<u64>> {
    if n > MAX_ENUMERABLE_SITES {
        return Err(Error::SectorTooLarge(format!(
            "{n} sites exceeds the enumeration limit of {MAX_ENUMERABLE_SITES}"
        )));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "particle number {k} exceeds {n} sites"
        )));
    }
    if k == 0 {
        return Ok(vec![0]);
    }
    let limit = 1u64 << n;
    let mut out = Vec::with_capacity(binomial(n, k) as usize);
    let mut v: u64 = (1u64 << k) - 1;
    while v < limit {
        out.push(v);
        // Gosper's hack: next integer with the same popcount.
        let c = v & v.wrapping_neg();
        let r = v + c;
        v = (((r ^ v) >> 2) / c) | r;
    }
    Ok(out)
}

/// All configurations of the sector with `k` particles, in increasing mask order.
pub fn enumerate_sector(torus: &Torus, k: usize) -> Result<Vec<Configuration>> {
    let n = torus.sites();
    Ok(sector_masks(n, k)?
        .into_iter()
        .map(|m| Configuration::from_mask(m, n))
        .collect())
}

pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u64 / (i + 1) as u64;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    #[test]
    fn torus_sizes() {
        let t = Torus::new(1, 8).unwrap();
        assert_eq!((t.sites(), t.bond_count()), (8, 8));
        let t = Torus::new(2, 4).unwrap();
        assert_eq!((t.sites(), t.bond_count()), (16, 32));
    }

    #[test]
    fn side_two_torus_dedupes_periodic_images() {
        let t = Torus::new(3, 2).unwrap();
        assert_eq!(t.sites(), 8);
        // Brute force: distinct unordered neighbour pairs.
        let mut pairs = HashSet::new();
        for x in 0..t.sites() {
            for y in t.neighbors(x) {
                pairs.insert((x.min(y), x.max(y)));
            }
        }
        assert_eq!(pairs.len(), 12);
        assert_eq!(t.bond_count(), 12);
        for x in 0..t.sites() {
            for a in 0..3 {
                let b = t.bonds()[t.bond_index(x, a)];
                let ends = (b.site.min(t.head(b)), b.site.max(t.head(b)));
                let want = (x.min(t.step(x, a, 1)), x.max(t.step(x, a, 1)));
                assert_eq!(ends, want);
            }
        }
    }

    #[test]
    fn torus_rejects_bad_shape() {
        assert!(Torus::new(0, 4).is_err());
        assert!(Torus::new(4, 4).is_err());
        assert!(Torus::new(1, 1).is_err());
    }

    #[test]
    fn index_round_trip() {
        let t = Torus::new(3, 5).unwrap();
        for x in 0..t.sites() {
            let c: Vec<i64> = t.coords(x).into_iter().map(|c| c as i64).collect();
            assert_eq!(t.index(&c), x);
        }
        assert_eq!(t.index(&[-1, 0, 5]), t.index(&[4, 0, 0]));
    }

    #[test]
    fn exchange_examples() {
        let t = Torus::new(1, 4).unwrap();
        let c = Configuration::from_bits("1000").unwrap();
        let e = exchange(&t, &c, Bond { site: 0, axis: 0 });
        assert_eq!(e.to_bits(), "0100");
        assert_eq!(exchange(&t, &e, Bond { site: 0, axis: 0 }), c);
        let c = Configuration::from_bits("1100").unwrap();
        assert_eq!(exchange(&t, &c, Bond { site: 0, axis: 0 }), c);
    }

    #[test]
    fn shift_convention() {
        let t = Torus::new(1, 4).unwrap();
        let c = Configuration::from_bits("1000").unwrap();
        assert_eq!(shift(&t, &c, 0), c);
        // (shift(η, 1))_y = η_{y+1}: the particle at 0 is now seen from y = 3.
        assert_eq!(shift(&t, &c, 1).to_bits(), "0001");
        let back = shift(&t, &shift(&t, &c, 1), t.negate(1));
        assert_eq!(back, c);
    }

    #[test]
    fn sector_sizes() {
        let t = Torus::new(1, 4).unwrap();
        assert_eq!(enumerate_sector(&t, 2).unwrap().len(), 6);
        let zero = enumerate_sector(&t, 0).unwrap();
        assert_eq!(zero.len(), 1);
        assert_eq!(zero[0].count(), 0);
        let t6 = Torus::new(1, 6).unwrap();
        assert_eq!(enumerate_sector(&t6, 3).unwrap().len(), 20);
        let big = Torus::new(1, 29).unwrap();
        assert!(matches!(
            enumerate_sector(&big, 2),
            Err(Error::SectorTooLarge(_))
        ));
    }

    #[test]
    fn sector_has_no_duplicates() {
        let t = Torus::new(2, 3).unwrap();
        for k in 0..=9 {
            let s = enumerate_sector(&t, k).unwrap();
            let set: HashSet<_> = s.iter().map(|c| c.mask()).collect();
            assert_eq!(set.len() as u64, binomial(9, k));
            assert!(s.iter().all(|c| c.count() == k));
        }
    }

    #[test]
    fn words_round_trip_masks_tail() {
        let c = Configuration::from_words(vec![u64::MAX], 10).unwrap();
        assert_eq!(c.count(), 10);
        assert!(Configuration::from_words(vec![0, 0], 10).is_err());
    }

    fn config_strategy(len: usize) -> impl Strategy<Value = Configuration> {
        proptest::collection::vec(any::<bool>(), len).prop_map(|v| Configuration::from_occupancy(&v))
    }

    proptest! {
        #[test]
        fn exchange_is_count_preserving_involution(
            c in config_strategy(25), site in 0usize..25, axis in 0usize..2
        ) {
            let t = Torus::new(2, 5).unwrap();
            let b = Bond { site, axis };
            let e = exchange(&t, &c, b);
            prop_assert_eq!(e.count(), c.count());
            prop_assert!(e.check_count());
            prop_assert_eq!(exchange(&t, &e, b), c.clone());
            for x in 0..25 {
                if x != site && x != t.head(b) {
                    prop_assert_eq!(e.get(x), c.get(x));
                }
            }
        }

        #[test]
        fn shift_is_group_action(c in config_strategy(70), a in 0usize..70, b in 0usize..70) {
            let t = Torus::new(1, 70).unwrap();
            let lhs = shift(&t, &shift(&t, &c, b), a);
            let rhs = shift(&t, &c, t.translate(a, b));
            prop_assert_eq!(lhs, rhs);
        }
    }
}
