//! Driving fields on the unit torus.
//!
//! A field is stored through its orthogonal decomposition
//! `E = -∇U + Ẽ`, where `U` is a trigonometric polynomial and the
//! divergence-free part is a constant vector plus, in two dimensions, the
//! rotated gradient `(∂₂ψ, -∂₁ψ)` of a stream function `ψ`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::lattice::Torus;

const TWO_PI: f64 = 2.0 * PI;

// 4-point Gauss–Legendre nodes and weights on [0, 1].
const GAUSS4: [(f64, f64); 4] = [
    (0.069_431_844_202_973_71, 0.173_927_422_568_726_93),
    (0.330_009_478_207_571_87, 0.326_072_577_431_273_07),
    (0.669_990_521_792_428_1, 0.326_072_577_431_273_07),
    (0.930_568_155_797_026_3, 0.173_927_422_568_726_93),
];

/// One term `a cos(2π k·r) + b sin(2π k·r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierTerm {
    pub wave: Vec<i64>,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

/// A real trigonometric polynomial on the unit torus.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FourierSeries {
    pub terms: Vec<FourierTerm>,
}

impl FourierSeries {
    pub fn new(terms: Vec<FourierTerm>) -> Self {
        FourierSeries { terms }
    }

    /// `amplitude · cos(2π k r_axis)` in dimension `dim`.
    pub fn cosine(dim: usize, axis: usize, k: i64, amplitude: f64) -> Self {
        let mut wave = vec![0; dim];
        wave[axis] = k;
        FourierSeries::new(vec![FourierTerm {
            wave,
            cos: amplitude,
            sin: 0.0,
        }])
    }

    pub fn sine(dim: usize, axis: usize, k: i64, amplitude: f64) -> Self {
        let mut wave = vec![0; dim];
        wave[axis] = k;
        FourierSeries::new(vec![FourierTerm {
            wave,
            cos: 0.0,
            sin: amplitude,
        }])
    }

    pub fn is_zero(&self) -> bool {
        self.terms
            .iter()
            .all(|t| (t.cos == 0.0 && t.sin == 0.0) || t.wave.iter().all(|&k| k == 0))
    }

    fn phase(term: &FourierTerm, r: &[f64]) -> f64 {
        TWO_PI
            * term
                .wave
                .iter()
                .zip(r)
                .map(|(&k, &x)| k as f64 * x)
                .sum::<f64>()
    }

    pub fn value(&self, r: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let p = Self::phase(t, r);
                t.cos * p.cos() + t.sin * p.sin()
            })
            .sum()
    }

    pub fn partial(&self, r: &[f64], axis: usize) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let p = Self::phase(t, r);
                TWO_PI * t.wave[axis] as f64 * (t.sin * p.cos() - t.cos * p.sin())
            })
            .sum()
    }

    /// Upper bound on the sup norm of the gradient.
    pub fn gradient_bound(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let k = t.wave.iter().map(|&k| (k * k) as f64).sum::<f64>().sqrt();
                TWO_PI * k * (t.cos.abs() + t.sin.abs())
            })
            .sum()
    }

    pub fn negated(&self) -> Self {
        FourierSeries::new(
            self.terms
                .iter()
                .map(|t| FourierTerm {
                    wave: t.wave.clone(),
                    cos: -t.cos,
                    sin: -t.sin,
                })
                .collect(),
        )
    }

    pub fn scaled(&self, factor: f64) -> Self {
        FourierSeries::new(
            self.terms
                .iter()
                .map(|t| FourierTerm {
                    wave: t.wave.clone(),
                    cos: factor * t.cos,
                    sin: factor * t.sin,
                })
                .collect(),
        )
    }
}

/// A driving field given by its orthogonal decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub dim: usize,
    /// Constant (divergence-free) part.
    pub constant: Vec<f64>,
    /// Potential `U`; the field carries `-∇U`.
    #[serde(default)]
    pub potential: FourierSeries,
    /// Stream function `ψ` (two dimensions only); the field carries `(∂₂ψ, -∂₁ψ)`.
    #[serde(default)]
    pub stream: FourierSeries,
}

impl FieldSpec {
    pub fn zero(dim: usize) -> Self {
        FieldSpec {
            dim,
            constant: vec![0.0; dim],
            potential: FourierSeries::default(),
            stream: FourierSeries::default(),
        }
    }

    pub fn constant(e: &[f64]) -> Self {
        FieldSpec {
            constant: e.to_vec(),
            ..FieldSpec::zero(e.len())
        }
    }

    /// `E = -∇U`.
    pub fn conservative(dim: usize, potential: FourierSeries) -> Self {
        FieldSpec {
            potential,
            ..FieldSpec::zero(dim)
        }
    }

    /// `E = -∇U + Ẽ`, validated for orthogonality.
    pub fn decomposed(
        dim: usize,
        potential: FourierSeries,
        constant: Vec<f64>,
        stream: FourierSeries,
    ) -> Result<Self> {
        let f = FieldSpec {
            dim,
            constant,
            potential,
            stream,
        };
        f.validate()?;
        Ok(f)
    }

    /// Checks shape, that a stream function only appears in two dimensions,
    /// and that `∇U · Ẽ` vanishes on a quadrature grid.
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dim) || self.constant.len() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "field of dimension {} with {} constant components",
                self.dim,
                self.constant.len()
            )));
        }
        for t in self.potential.terms.iter().chain(&self.stream.terms) {
            if t.wave.len() != self.dim {
                return Err(Error::InvalidArgument(format!(
                    "Fourier wave vector {:?} does not match dimension {}",
                    t.wave, self.dim
                )));
            }
        }
        if !self.stream.is_zero() && self.dim != 2 {
            return Err(Error::InvalidArgument(
                "stream-function fields are only defined in two dimensions".into(),
            ));
        }
        if self.potential.is_zero() || self.divergence_free_is_zero() {
            return Ok(());
        }
        let q = 16usize;
        let points = q.pow(self.dim as u32);
        let mut r = vec![0.0; self.dim];
        for p in 0..points {
            let mut rem = p;
            for x in r.iter_mut() {
                *x = ((rem % q) as f64 + 0.37) / q as f64;
                rem /= q;
            }
            let grad_u: Vec<f64> = (0..self.dim).map(|a| self.potential.partial(&r, a)).collect();
            let tilde = self.divergence_free(&r);
            let dot: f64 = grad_u.iter().zip(&tilde).map(|(a, b)| a * b).sum();
            if dot.abs() > 1e-10 {
                return Err(Error::InvalidArgument(format!(
                    "∇U·Ẽ = {dot:e} at r = {r:?}; the decomposition is not orthogonal"
                )));
            }
        }
        Ok(())
    }

    fn divergence_free_is_zero(&self) -> bool {
        self.constant.iter().all(|&c| c == 0.0) && self.stream.is_zero()
    }

    pub fn is_constant(&self) -> bool {
        self.potential.is_zero() && self.stream.is_zero()
    }

    /// The divergence-free part `Ẽ(r)`.
    pub fn divergence_free(&self, r: &[f64]) -> Vec<f64> {
        let mut out = self.constant.clone();
        if self.dim == 2 && !self.stream.is_zero() {
            out[0] += self.stream.partial(r, 1);
            out[1] -= self.stream.partial(r, 0);
        }
        out
    }

    pub fn value(&self, r: &[f64]) -> Vec<f64> {
        let mut out = self.divergence_free(r);
        for (a, o) in out.iter_mut().enumerate() {
            *o -= self.potential.partial(r, a);
        }
        out
    }

    /// The field `-∇U - Ẽ` driving the time-reversed (adjoint) dynamics.
    pub fn adjoint(&self) -> Self {
        FieldSpec {
            dim: self.dim,
            constant: self.constant.iter().map(|c| -c).collect(),
            potential: self.potential.clone(),
            stream: self.stream.negated(),
        }
    }

    /// The same field with the divergence-free part removed.
    pub fn conservative_part(&self) -> Self {
        FieldSpec::conservative(self.dim, self.potential.clone())
    }

    /// Work `E_N(x, x + e_axis)` along the oriented segment between the two sites.
    pub fn work(&self, torus: &Torus, site: usize, axis: usize) -> f64 {
        let n = torus.side() as f64;
        let from = torus.position(site);
        let mut to = from.clone();
        to[axis] += 1.0 / n;
        let mut w = self.constant[axis] / n;
        if !self.potential.is_zero() {
            w += self.potential.value(&from) - self.potential.value(&to);
        }
        if !self.stream.is_zero() {
            let mut r = from.clone();
            let mut acc = 0.0;
            for &(s, weight) in &GAUSS4 {
                r[axis] = from[axis] + s / n;
                acc += weight * self.divergence_free(&r)[axis];
            }
            w += (acc - self.constant[axis]) / n;
        }
        w
    }

    /// Work along the reversed segment: `E_N(x + e_axis, x) = -E_N(x, x + e_axis)`.
    pub fn work_reversed(&self, torus: &Torus, site: usize, axis: usize) -> f64 {
        -self.work(torus, site, axis)
    }

    /// Face-normal component on a uniform grid of `m` cells per side, for the
    /// face between cell `cell` and its `+e_axis` neighbour. The potential part
    /// uses the discrete gradient of `U` at cell centres and the stream part the
    /// difference of `ψ` across the face, so the discrete divergence of `Ẽ` is
    /// exactly zero.
    pub fn face_value(&self, m: usize, coords: &[usize], axis: usize) -> f64 {
        let h = 1.0 / m as f64;
        let mut v = self.constant[axis];
        if !self.potential.is_zero() {
            let c0: Vec<f64> = coords.iter().map(|&i| (i as f64 + 0.5) * h).collect();
            let mut c1 = c0.clone();
            c1[axis] += h;
            v -= (self.potential.value(&c1) - self.potential.value(&c0)) / h;
        }
        if self.dim == 2 && !self.stream.is_zero() {
            let other = 1 - axis;
            let mut lo: Vec<f64> = coords.iter().map(|&i| i as f64 * h).collect();
            lo[axis] += h;
            let mut hi = lo.clone();
            hi[other] += h;
            let d = (self.stream.value(&hi) - self.stream.value(&lo)) / h;
            v += if axis == 0 { d } else { -d };
        }
        v
    }

    /// Upper bound on the sup norm of the field.
    pub fn sup_bound(&self) -> f64 {
        self.constant.iter().map(|c| c * c).sum::<f64>().sqrt()
            + self.potential.gradient_bound()
            + self.stream.gradient_bound()
    }
}

/// A time-dependent scalar potential `H(t, r)`.
pub trait TimeField: Send + Sync {
    fn value(&self, t: f64, r: &[f64]) -> f64;

    /// Upper bound on every partial derivative `|∂_a H(t, r)|` over the run.
    fn lipschitz_bound(&self) -> f64;
}

/// A potential constant in time.
#[derive(Debug, Clone)]
pub struct StaticPotential(pub FourierSeries);

impl TimeField for StaticPotential {
    fn value(&self, _t: f64, r: &[f64]) -> f64 {
        self.0.value(r)
    }

    fn lipschitz_bound(&self) -> f64 {
        self.0.gradient_bound()
    }
}

/// `H(t, r) = a(t) · S(r)` for a scalar envelope `a`.
pub struct ModulatedPotential<F: Fn(f64) -> f64 + Send + Sync> {
    pub shape: FourierSeries,
    pub envelope: F,
    /// Bound on `|a(t)|` over the run.
    pub envelope_bound: f64,
}

impl<F: Fn(f64) -> f64 + Send + Sync> TimeField for ModulatedPotential<F> {
    fn value(&self, t: f64, r: &[f64]) -> f64 {
        (self.envelope)(t) * self.shape.value(r)
    }

    fn lipschitz_bound(&self) -> f64 {
        self.envelope_bound * self.shape.gradient_bound()
    }
}
