//! Base measures on [-1, 1] and their exponential tilts.
//!
//! For a base measure `mu` the tilted family is `d mu_theta / d mu ∝ exp(theta x)`.
//! `psi` is the log-normalizer, `psi'` the tilted mean, `psi''` the tilted
//! variance, `phi` the inverse of `psi'` and `I(z) = z phi(z) - psi(phi(z))`
//! the KL divergence between `mu_{phi(z)}` and `mu`.
//!
//! Discrete measures use closed-form finite sums. Continuous densities are
//! discretised once on a fixed Gauss–Legendre grid and every tilting quantity
//! is evaluated on that grid, so all routes agree to rounding.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature;

/// Largest |z| accepted by `phi` and `rate_function`.
pub const DOMAIN_LIMIT: f64 = 1.0 - 1e-14;

const PHI_BRACKET: f64 = 60.0;
const PHI_BRACKET_MAX: f64 = 700.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("tilt parameter must be finite, got {0}")]
    NonFiniteTheta(f64),
    #[error("mean parameter {0} outside the open domain |z| < 1 - 1e-14")]
    OutOfDomain(f64),
    #[error("invalid atoms: {0}")]
    InvalidAtoms(String),
    #[error("invalid density: {0}")]
    InvalidDensity(String),
}

pub type DensityFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// All tilting quantities at one `theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltedMoments {
    pub psi: f64,
    pub mean: f64,
    pub variance: f64,
    pub third: f64,
}

#[derive(Clone)]
enum Repr {
    Rademacher,
    Atoms(PointSet),
    Density {
        label: String,
        density: DensityFn,
        grid: PointSet,
    },
}

/// Weighted finite point set with log-weights summing (in exp) to one.
#[derive(Clone, Debug)]
struct PointSet {
    points: Vec<f64>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
}

impl PointSet {
    fn new(points: Vec<f64>, weights: Vec<f64>) -> Self {
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Self {
            points,
            weights,
            log_weights,
        }
    }

    /// Shifted exponents `log w_k + theta x_k - max` and the max.
    fn exponents(&self, theta: f64) -> (Vec<f64>, f64) {
        let a: Vec<f64> = self
            .points
            .iter()
            .zip(&self.log_weights)
            .map(|(&x, &lw)| lw + theta * x)
            .collect();
        let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (a.into_iter().map(|v| (v - m).exp()).collect(), m)
    }

    fn moments(&self, theta: f64) -> TiltedMoments {
        let (e, m) = self.exponents(theta);
        let z: f64 = e.iter().sum();
        let mean = e.iter().zip(&self.points).map(|(w, x)| w * x).sum::<f64>() / z;
        let mut variance = 0.0;
        let mut third = 0.0;
        for (w, &x) in e.iter().zip(&self.points) {
            let d = x - mean;
            variance += w * d * d;
            third += w * d * d * d;
        }
        TiltedMoments {
            psi: m + z.ln(),
            mean,
            variance: variance / z,
            third: third / z,
        }
    }

    fn tilted_probs(&self, theta: f64) -> Vec<f64> {
        let (e, _) = self.exponents(theta);
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }

    fn sample<R: Rng + ?Sized>(&self, theta: f64, rng: &mut R) -> f64 {
        let (e, _) = self.exponents(theta);
        let z: f64 = e.iter().sum();
        let mut target = rng.random::<f64>() * z;
        for (w, &x) in e.iter().zip(&self.points) {
            if target < *w {
                return x;
            }
            target -= w;
        }
        *self.points.last().expect("non-empty point set")
    }
}

/// A probability measure on [-1, 1] together with its tilting toolkit.
#[derive(Clone)]
pub struct BaseMeasure {
    repr: Repr,
}

impl fmt::Debug for BaseMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.repr {
            Repr::Rademacher => write!(f, "BaseMeasure::Rademacher"),
            Repr::Atoms(p) => f
                .debug_struct("BaseMeasure::Atoms")
                .field("points", &p.points)
                .field("weights", &p.weights)
                .finish(),
            Repr::Density { label, grid, .. } => f
                .debug_struct("BaseMeasure::Density")
                .field("label", label)
                .field("nodes", &grid.points.len())
                .finish(),
        }
    }
}

impl BaseMeasure {
    /// Symmetric two-point measure on {-1, 1}.
    pub fn rademacher() -> Self {
        Self {
            repr: Repr::Rademacher,
        }
    }

    /// Discrete measure; atoms must lie in [-1, 1] with positive weights summing to one.
    pub fn atoms(points: Vec<f64>, weights: Vec<f64>) -> Result<Self, MeasureError> {
        if points.len() != weights.len() {
            return Err(MeasureError::InvalidAtoms(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if let Some(x) = points.iter().find(|x| !x.is_finite() || x.abs() > 1.0) {
            return Err(MeasureError::InvalidAtoms(format!(
                "atom {x} outside [-1, 1]"
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(MeasureError::InvalidAtoms(format!(
                "non-positive weight {w}"
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(MeasureError::InvalidAtoms(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        let mut distinct = points.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(MeasureError::InvalidAtoms(
                "need at least two distinct atoms".into(),
            ));
        }
        Ok(Self {
            repr: Repr::Atoms(PointSet::new(points, weights)),
        })
    }

    /// Continuous measure with the given (unnormalised) density on [-1, 1].
    pub fn density(label: impl Into<String>, density: DensityFn) -> Result<Self, MeasureError> {
        let (nodes, gl) = quadrature::default_rule();
        let mut w = Vec::with_capacity(nodes.len());
        for (&x, &g) in nodes.iter().zip(gl) {
            let f = density(x);
            if !f.is_finite() || f < 0.0 {
                return Err(MeasureError::InvalidDensity(format!(
                    "density value {f} at {x}"
                )));
            }
            w.push(g * f);
        }
        let total: f64 = w.iter().sum();
        if total <= 0.0 {
            return Err(MeasureError::InvalidDensity("zero total mass".into()));
        }
        let positive = w.iter().filter(|v| **v > 0.0).count();
        if positive < 2 {
            return Err(MeasureError::InvalidDensity("degenerate density".into()));
        }
        // Drop nodes where the density vanishes so log-weights stay finite.
        let (points, weights): (Vec<f64>, Vec<f64>) = nodes
            .iter()
            .zip(w)
            .filter(|(_, v)| *v > 0.0)
            .map(|(&x, v)| (x, v / total))
            .unzip();
        Ok(Self {
            repr: Repr::Density {
                label: label.into(),
                density,
                grid: PointSet::new(points, weights),
            },
        })
    }

    /// Uniform distribution on [-1, 1].
    pub fn uniform() -> Self {
        Self::density("uniform", Arc::new(|_| 0.5)).expect("uniform density is valid")
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(self.repr, Repr::Density { .. })
    }

    /// True when the measure is symmetric about zero.
    pub fn is_symmetric(&self) -> bool {
        let set = match &self.repr {
            Repr::Rademacher => return true,
            Repr::Atoms(p) => p,
            Repr::Density { grid, .. } => grid,
        };
        let mut pairs: Vec<(f64, f64)> = set
            .points
            .iter()
            .zip(&set.weights)
            .map(|(&x, &w)| (x, w))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let k = pairs.len();
        (0..k).all(|i| {
            let (x, w) = pairs[i];
            let (y, v) = pairs[k - 1 - i];
            (x + y).abs() < 1e-12 && (w - v).abs() < 1e-12
        })
    }

    /// Whether both -1 and 1 belong to the support (closure for densities).
    pub fn covers_endpoints(&self) -> bool {
        match &self.repr {
            Repr::Rademacher => true,
            Repr::Atoms(p) => p.points.iter().any(|&x| x == -1.0) && p.points.contains(&1.0),
            Repr::Density { density, .. } => density(-1.0) > 0.0 && density(1.0) > 0.0,
        }
    }

    /// Atoms and weights of a discrete measure.
    pub fn atoms_view(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match &self.repr {
            Repr::Rademacher => Some((vec![-1.0, 1.0], vec![0.5, 0.5])),
            Repr::Atoms(p) => Some((p.points.clone(), p.weights.clone())),
            Repr::Density { .. } => None,
        }
    }

    pub fn label(&self) -> String {
        match &self.repr {
            Repr::Rademacher => "rademacher".into(),
            Repr::Atoms(_) => "atoms".into(),
            Repr::Density { label, .. } => label.clone(),
        }
    }

    /// Whether `x` is a value this measure can produce.
    pub fn in_support(&self, x: f64) -> bool {
        match &self.repr {
            Repr::Rademacher => x == 1.0 || x == -1.0,
            Repr::Atoms(p) => p.points.contains(&x),
            Repr::Density { .. } => (-1.0..=1.0).contains(&x),
        }
    }

    fn check(theta: f64) -> Result<(), MeasureError> {
        if theta.is_finite() {
            Ok(())
        } else {
            Err(MeasureError::NonFiniteTheta(theta))
        }
    }

    /// All tilting quantities at once; `theta` must be finite.
    pub(crate) fn moments_unchecked(&self, theta: f64) -> TiltedMoments {
        match &self.repr {
            Repr::Rademacher => {
                let t = theta.tanh();
                let s2 = sech_squared(theta);
                TiltedMoments {
                    psi: log_cosh(theta),
                    mean: t,
                    variance: s2,
                    third: -2.0 * t * s2,
                }
            }
            Repr::Atoms(p) => p.moments(theta),
            Repr::Density { grid, .. } => grid.moments(theta),
        }
    }

    pub(crate) fn mean_unchecked(&self, theta: f64) -> f64 {
        match &self.repr {
            Repr::Rademacher => theta.tanh(),
            _ => self.moments_unchecked(theta).mean,
        }
    }

    pub(crate) fn variance_unchecked(&self, theta: f64) -> f64 {
        match &self.repr {
            Repr::Rademacher => sech_squared(theta),
            _ => self.moments_unchecked(theta).variance,
        }
    }

    pub fn moments(&self, theta: f64) -> Result<TiltedMoments, MeasureError> {
        Self::check(theta)?;
        Ok(self.moments_unchecked(theta))
    }

    pub fn psi(&self, theta: f64) -> Result<f64, MeasureError> {
        Ok(self.moments(theta)?.psi)
    }

    /// Mean of the tilted measure.
    pub fn psi_prime(&self, theta: f64) -> Result<f64, MeasureError> {
        Self::check(theta)?;
        Ok(self.mean_unchecked(theta))
    }

    /// Variance of the tilted measure.
    pub fn psi_2(&self, theta: f64) -> Result<f64, MeasureError> {
        Self::check(theta)?;
        Ok(self.variance_unchecked(theta))
    }

    /// Third central moment of the tilted measure.
    pub fn psi_3(&self, theta: f64) -> Result<f64, MeasureError> {
        Ok(self.moments(theta)?.third)
    }

    /// Inverse of `psi'`: the tilt whose mean is `z`.
    pub fn phi(&self, z: f64) -> Result<f64, MeasureError> {
        if !(z.abs() <= DOMAIN_LIMIT) {
            return Err(MeasureError::OutOfDomain(z));
        }
        if let Repr::Rademacher = self.repr {
            return Ok(z.atanh());
        }
        let mean = |t: f64| self.mean_unchecked(t);
        let mut lo = -PHI_BRACKET;
        let mut hi = PHI_BRACKET;
        while mean(lo) > z {
            if lo <= -PHI_BRACKET_MAX {
                return Err(MeasureError::OutOfDomain(z));
            }
            lo = (2.0 * lo).max(-PHI_BRACKET_MAX);
        }
        while mean(hi) < z {
            if hi >= PHI_BRACKET_MAX {
                return Err(MeasureError::OutOfDomain(z));
            }
            hi = (2.0 * hi).min(PHI_BRACKET_MAX);
        }
        let mut theta = 0.0_f64.clamp(lo, hi);
        for _ in 0..300 {
            let m = self.moments_unchecked(theta);
            let f = m.mean - z;
            if f == 0.0 {
                return Ok(theta);
            }
            if f > 0.0 {
                hi = theta;
            } else {
                lo = theta;
            }
            let newton = theta - f / m.variance;
            if m.variance > 0.0 && (f / m.variance).abs() <= 1e-16 * theta.abs().max(1.0) {
                return Ok(newton);
            }
            theta = if m.variance > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= 1e-15 * theta.abs().max(1.0) {
                break;
            }
        }
        Ok(theta)
    }

    /// `I(z) = z phi(z) - psi(phi(z))`.
    pub fn rate_function(&self, z: f64) -> Result<f64, MeasureError> {
        let theta = self.phi(z)?;
        let value = z * theta - self.moments_unchecked(theta).psi;
        Ok(value.max(0.0))
    }

    /// Probabilities of each atom under the tilt (discrete measures only).
    pub fn tilted_atom_probs(&self, theta: f64) -> Option<Vec<f64>> {
        match &self.repr {
            Repr::Rademacher => {
                let p = plus_probability(theta);
                Some(vec![1.0 - p, p])
            }
            Repr::Atoms(p) => Some(p.tilted_probs(theta)),
            Repr::Density { .. } => None,
        }
    }

    /// One draw from the tilted measure.
    pub fn sample_tilted<R: Rng + ?Sized>(
        &self,
        theta: f64,
        rng: &mut R,
    ) -> Result<f64, MeasureError> {
        Self::check(theta)?;
        Ok(self.draw(theta, rng))
    }

    pub(crate) fn draw<R: Rng + ?Sized>(&self, theta: f64, rng: &mut R) -> f64 {
        match &self.repr {
            Repr::Rademacher => {
                if rng.random::<f64>() < plus_probability(theta) {
                    1.0
                } else {
                    -1.0
                }
            }
            Repr::Atoms(p) => p.sample(theta, rng),
            Repr::Density { density, .. } => {
                let u = rng.random::<f64>();
                sample_density(density.as_ref(), theta, u)
            }
        }
    }

    /// CDF of the tilted continuous measure at `x` (None for discrete kinds).
    pub fn tilted_cdf(&self, theta: f64, x: f64) -> Option<f64> {
        match &self.repr {
            Repr::Density { density, .. } => {
                let total = partial_mass(density.as_ref(), theta, 1.0);
                Some(
                    (partial_mass(density.as_ref(), theta, x.clamp(-1.0, 1.0)) / total)
                        .clamp(0.0, 1.0),
                )
            }
            _ => None,
        }
    }
}

/// `P(+1)` for the two-point tilt, `(1 + tanh theta) / 2`.
fn plus_probability(theta: f64) -> f64 {
    1.0 / (1.0 + (-2.0 * theta).exp())
}

fn log_cosh(theta: f64) -> f64 {
    let a = theta.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

fn sech_squared(theta: f64) -> f64 {
    let e = (-2.0 * theta.abs()).exp();
    4.0 * e / ((1.0 + e) * (1.0 + e))
}

/// Unnormalised tilted mass of [-1, x], scaled by `exp(-|theta|)`.
fn partial_mass(density: &(dyn Fn(f64) -> f64 + Send + Sync), theta: f64, x: f64) -> f64 {
    let shift = theta.abs();
    quadrature::integrate(|t| density(t) * (theta * t - shift).exp(), -1.0, x)
}

fn sample_density(density: &(dyn Fn(f64) -> f64 + Send + Sync), theta: f64, u: f64) -> f64 {
    let total = partial_mass(density, theta, 1.0);
    let target = u * total;
    let (mut lo, mut hi) = (-1.0_f64, 1.0_f64);
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if partial_mass(density, theta, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Configuration-level description of a base measure.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    #[default]
    Rademacher,
    Atoms {
        points: Vec<f64>,
        weights: Vec<f64>,
    },
    Uniform,
}

impl MeasureSpec {
    pub fn build(&self) -> Result<BaseMeasure, MeasureError> {
        match self {
            MeasureSpec::Rademacher => Ok(BaseMeasure::rademacher()),
            MeasureSpec::Atoms { points, weights } => {
                BaseMeasure::atoms(points.clone(), weights.clone())
            }
            MeasureSpec::Uniform => Ok(BaseMeasure::uniform()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn builtins() -> Vec<BaseMeasure> {
        vec![
            BaseMeasure::rademacher(),
            BaseMeasure::atoms(vec![-1.0, 0.0, 0.5, 1.0], vec![0.2, 0.3, 0.1, 0.4]).unwrap(),
            BaseMeasure::atoms(vec![-1.0, 1.0], vec![0.5, 0.5]).unwrap(),
            BaseMeasure::uniform(),
        ]
    }

    /// tanh by its continued fraction, evaluated bottom-up with 50 levels.
    fn tanh_continued_fraction(x: f64) -> f64 {
        let x2 = x * x;
        let mut tail = 101.0;
        for k in (1..50).rev() {
            tail = (2 * k + 1) as f64 + x2 / tail;
        }
        x / (1.0 + x2 / tail)
    }

    #[test]
    fn rademacher_identities() {
        let m = BaseMeasure::rademacher();
        assert_eq!(m.psi_prime(0.0).unwrap(), 0.0);
        for c in [-3.0, -0.7, 0.0, 0.2, 1.3, 5.0] {
            assert!((m.psi_prime(c).unwrap() - f64::tanh(c)).abs() < 1e-15);
            let sech2 = 1.0 / f64::cosh(c).powi(2);
            assert!((m.psi_2(c).unwrap() - sech2).abs() < 1e-15);
        }
        let oracle = tanh_continued_fraction(0.3);
        // quadrature over the two atoms
        let two_atom = (0.3f64.exp() - (-0.3f64).exp()) / (0.3f64.exp() + (-0.3f64).exp());
        assert!((oracle - two_atom).abs() < 1e-15);
        assert!((m.psi_prime(0.3).unwrap() - oracle).abs() < 1e-15);
    }

    #[test]
    fn symmetric_atoms_match_sech_squared() {
        let m = BaseMeasure::atoms(vec![-1.0, 1.0], vec![0.5, 0.5]).unwrap();
        for c in [-2.0, -0.5, 0.0, 0.4, 1.7] {
            let sech2 = 1.0 / f64::cosh(c).powi(2);
            assert!((m.psi_2(c).unwrap() - sech2).abs() < 1e-14);
        }
    }

    #[test]
    fn phi_examples() {
        let m = BaseMeasure::rademacher();
        assert_eq!(m.phi(0.0).unwrap(), 0.0);
        let z = m.psi_prime(1.7).unwrap();
        assert!((m.phi(z).unwrap() - 1.7).abs() < 1e-9);
        // bisection oracle on tanh(theta) = 0.5
        let (mut lo, mut hi) = (0.0f64, 5.0f64);
        while hi - lo > 1e-13 {
            let mid = 0.5 * (lo + hi);
            if mid.tanh() < 0.5 {
                lo = mid
            } else {
                hi = mid
            }
        }
        assert!((m.phi(0.5).unwrap() - 0.5 * (lo + hi)).abs() < 1e-12);
        for meas in builtins() {
            assert!(meas.phi(1.0).is_err());
            assert!(meas.phi(-1.0 + 1e-16).is_err());
        }
    }

    #[test]
    fn phi_inverts_psi_prime_on_grid() {
        // Atoms at ±1 lose precision once sech^2(theta) approaches machine epsilon,
        // so their grid stops at |theta| = 7; the uniform density stays
        // well-conditioned out to 20.
        for meas in builtins() {
            let limit = if meas.is_discrete() { 7.0 } else { 20.0 };
            let mut theta = -limit;
            while theta <= limit + 1e-12 {
                let z = meas.psi_prime(theta).unwrap();
                let back = meas.phi(z).unwrap();
                assert!(
                    (back - theta).abs() < 1e-9,
                    "{meas:?} theta {theta} -> {back}"
                );
                theta += 0.25;
            }
        }
    }

    #[test]
    fn phi_monotone() {
        for meas in builtins() {
            let mut prev = f64::NEG_INFINITY;
            for k in -99..=99 {
                let t = meas.phi(k as f64 / 100.0).unwrap();
                assert!(t > prev);
                prev = t;
            }
        }
    }

    #[test]
    fn rate_function_examples() {
        let m = BaseMeasure::rademacher();
        assert!(m.rate_function(0.0).unwrap().abs() < 1e-15);
        let z: f64 = 0.5;
        let kl = 0.5 * (1.0 + z) * (1.0 + z).ln() + 0.5 * (1.0 - z) * (1.0 - z).ln();
        assert!((m.rate_function(z).unwrap() - kl).abs() < 1e-14);
        for meas in builtins() {
            for k in -9..=9 {
                assert!(meas.rate_function(k as f64 / 10.0).unwrap() >= 0.0);
            }
            // zero at the base mean
            let mean = meas.psi_prime(0.0).unwrap();
            assert!(meas.rate_function(mean).unwrap().abs() < 1e-12);
            // convexity on a grid
            let vals: Vec<f64> = (-18..=18)
                .map(|k| meas.rate_function(k as f64 / 20.0).unwrap())
                .collect();
            for w in vals.windows(3) {
                assert!(w[0] + w[2] - 2.0 * w[1] >= -1e-12);
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for meas in builtins() {
            let mut theta = -4.0;
            while theta <= 4.0 {
                let h = 1e-4;
                let m = meas.moments(theta).unwrap();
                let d1 = (meas.psi(theta + h).unwrap() - meas.psi(theta - h).unwrap()) / (2.0 * h);
                let d2 = (meas.psi_prime(theta + h).unwrap() - meas.psi_prime(theta - h).unwrap())
                    / (2.0 * h);
                let d3 =
                    (meas.psi_2(theta + h).unwrap() - meas.psi_2(theta - h).unwrap()) / (2.0 * h);
                assert!((d1 - m.mean).abs() <= 1e-6 * m.mean.abs().max(1e-2));
                assert!(
                    (d2 - m.variance).abs() <= 1e-6 * m.variance.max(1e-2),
                    "{meas:?} {theta}"
                );
                assert!(
                    (d3 - m.third).abs() <= 1e-6 * m.third.abs().max(1e-2),
                    "{meas:?} {theta}"
                );
                assert!(m.variance > 0.0 && m.variance <= 1.0);
                assert!(m.third.abs() <= 8.0);
                theta += 0.5;
            }
        }
    }

    #[test]
    fn psi_survives_large_tilts() {
        for meas in builtins() {
            for theta in [-700.0, -300.0, 300.0, 700.0] {
                let m = meas.moments(theta).unwrap();
                assert!(m.psi.is_finite() && m.mean.is_finite() && m.variance >= 0.0);
            }
            assert!(meas.psi(f64::NAN).is_err());
            assert!(meas.psi_prime(f64::INFINITY).is_err());
        }
    }

    #[test]
    fn validation() {
        assert!(BaseMeasure::atoms(vec![-1.0, 1.5], vec![0.5, 0.5]).is_err());
        assert!(BaseMeasure::atoms(vec![-1.0, 1.0], vec![0.5, 0.4]).is_err());
        assert!(BaseMeasure::atoms(vec![0.3, 0.3], vec![0.5, 0.5]).is_err());
        assert!(BaseMeasure::atoms(vec![-1.0, 1.0], vec![1.0, 0.0]).is_err());
        let partial = BaseMeasure::atoms(vec![-0.5, 0.5], vec![0.5, 0.5]).unwrap();
        assert!(!partial.covers_endpoints());
        assert!(BaseMeasure::uniform().covers_endpoints());
        assert!(BaseMeasure::uniform().is_symmetric());
        assert!(!builtins()[1].is_symmetric());
    }

    #[test]
    fn uniform_quadrature_matches_closed_form() {
        let m = BaseMeasure::uniform();
        for theta in [-5.0, -1.0, 0.3, 2.0, 10.0] {
            let closed = 1.0 / f64::tanh(theta) - 1.0 / theta;
            assert!((m.psi_prime(theta).unwrap() - closed).abs() < 1e-13);
            let psi = (f64::sinh(theta) / theta).ln();
            assert!((m.psi(theta).unwrap() - psi).abs() < 1e-13);
        }
    }

    #[test]
    fn rademacher_sampling_law() {
        let m = BaseMeasure::rademacher();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 1_000_000;
        let sum: f64 = (0..draws)
            .map(|_| m.sample_tilted(0.0, &mut rng).unwrap())
            .sum();
        assert!((sum / draws as f64).abs() < 4.0 / (draws as f64).sqrt());
        let probs = m.tilted_atom_probs(0.8).unwrap();
        assert!((probs[1] - (1.0 + 0.8f64.tanh()) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_tilted_mean() {
        let m = BaseMeasure::uniform();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 20_000;
        let xs: Vec<f64> = (0..draws)
            .map(|_| m.sample_tilted(1.0, &mut rng).unwrap())
            .collect();
        let mean = xs.iter().sum::<f64>() / draws as f64;
        let sd = m.psi_2(1.0).unwrap().sqrt();
        assert!((mean - m.psi_prime(1.0).unwrap()).abs() < 4.0 * sd / (draws as f64).sqrt());
    }

    #[test]
    fn discrete_goodness_of_fit() {
        // chi-square with 3 degrees of freedom; 16.27 is the 1e-3 upper quantile
        let m = BaseMeasure::atoms(vec![-1.0, 0.0, 0.5, 1.0], vec![0.2, 0.3, 0.1, 0.4]).unwrap();
        let theta = -0.6;
        let probs = m.tilted_atom_probs(theta).unwrap();
        let (points, _) = m.atoms_view().unwrap();
        let mut counts = [0usize; 4];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 100_000;
        for _ in 0..draws {
            let x = m.sample_tilted(theta, &mut rng).unwrap();
            counts[points.iter().position(|&p| p == x).unwrap()] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(&probs)
            .map(|(&c, &p)| {
                let e = p * draws as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        assert!(chi2 < 16.27, "chi2 = {chi2}");
    }

    #[test]
    fn continuous_goodness_of_fit() {
        // Kolmogorov 1e-3 critical value is about 1.949 / sqrt(M).
        let m = BaseMeasure::uniform();
        let theta = 1.5;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 100_000;
        let mut xs: Vec<f64> = (0..draws)
            .map(|_| m.sample_tilted(theta, &mut rng).unwrap())
            .collect();
        xs.sort_by(f64::total_cmp);
        let cdf = |x: f64| ((theta * x).exp() - (-theta).exp()) / (theta.exp() - (-theta).exp());
        let mut d = 0.0f64;
        for (i, &x) in xs.iter().enumerate() {
            let f = cdf(x);
            d = d.max((i as f64 / draws as f64 - f).abs());
            d = d.max(((i + 1) as f64 / draws as f64 - f).abs());
        }
        assert!(d < 1.949 / (draws as f64).sqrt(), "ks = {d}");
        assert!((m.tilted_cdf(theta, 0.2).unwrap() - cdf(0.2)).abs() < 1e-12);
    }
}
