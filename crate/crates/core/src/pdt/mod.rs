//! Probability distributions of transmittance (PDT) and the model families
//! built from sampled channel statistics.

mod beta;
mod elliptic;
mod empirical;
mod lognormal;
mod total_prob;
mod wandering;

use std::fmt::{self, Write as _};

use rand::Rng;

use crate::math::quad::tanh_sinh_tol;
use crate::rng::{self, Domain};
use crate::sampling::{short_term_width, wandering_variance, SampleSet};
use crate::{Error, Result};

pub use beta::{beta_from_moments, BetaPdt};
pub use elliptic::{
    elliptic_pdt_analytic, elliptic_pdt_semianalytic, elliptic_transmittance, elliptic_transmittance_widths,
    EllipticParams,
};
pub use empirical::{empirical_pdt, EmpiricalPdt};
pub use lognormal::{lognormal_from_moments, TruncatedLogNormal};
pub use total_prob::{
    conditional_moments, default_offset_grid, total_probability_pdt, total_probability_weak_wandering,
    ConditionalMoments, Mixture, MixtureFamily, WeakWanderingFit, MIXTURE_RADIAL_NODES,
};
pub use wandering::{
    max_transmittance, wandering_pdt, wandering_scale, wandering_shape, LogNegativeWeibull,
};

const QUAD_REL: f64 = 1e-13;
const QUAD_ABS: f64 = 1e-16;

/// First and second moments of the transmittance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentPair {
    pub m1: f64,
    pub m2: f64,
}

impl MomentPair {
    pub fn new(m1: f64, m2: f64) -> Result<Self> {
        let m = MomentPair { m1, m2 };
        m.validate()?;
        Ok(m)
    }

    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("no samples to take moments of".into()));
        }
        let n = samples.len() as f64;
        let m1 = samples.iter().sum::<f64>() / n;
        let m2 = samples.iter().map(|x| x * x).sum::<f64>() / n;
        MomentPair::new(m1, m2)
    }

    pub fn validate(&self) -> Result<()> {
        let MomentPair { m1, m2 } = *self;
        if !(m1.is_finite() && m2.is_finite()) || m1 <= 0.0 || m1 > 1.0 {
            return Err(Error::InvalidInput(format!("mean transmittance {m1} outside (0, 1]")));
        }
        if m2 > m1 {
            return Err(Error::InvalidInput(format!(
                "second moment {m2} exceeds the mean {m1}; transmittance cannot exceed 1"
            )));
        }
        if m2 <= m1 * m1 {
            return Err(Error::Degenerate(format!("moments m1={m1}, m2={m2} give non-positive variance")));
        }
        Ok(())
    }

    pub fn variance(&self) -> f64 {
        self.m2 - self.m1 * self.m1
    }
}

/// Aperture and beam parameters of the beam-wandering description.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamGeometry {
    pub aperture_radius: f64,
    pub short_term_width: f64,
    pub wandering_std: f64,
    /// Transmittance of a centred beam, `1 - exp(-2 R^2 / W_ST^2)`.
    pub eta0: f64,
}

impl BeamGeometry {
    pub fn new(aperture_radius: f64, short_term_width: f64, wandering_std: f64) -> Result<Self> {
        for (name, v) in [("aperture radius", aperture_radius), ("short-term width", short_term_width)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if !(wandering_std.is_finite() && wandering_std >= 0.0) {
            return Err(Error::InvalidInput(format!("wandering std must be non-negative, got {wandering_std}")));
        }
        let eta0 = max_transmittance(aperture_radius, short_term_width);
        if eta0 <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "aperture {aperture_radius} m is negligible against the beam width {short_term_width} m"
            )));
        }
        Ok(BeamGeometry { aperture_radius, short_term_width, wandering_std, eta0 })
    }

    /// Geometry of aperture `aperture` of a sample set, with widths taken
    /// from the ensemble.
    pub fn from_sample_set(set: &SampleSet, aperture: usize) -> Result<Self> {
        let radius = *set
            .apertures()
            .get(aperture)
            .ok_or_else(|| Error::InvalidInput(format!("no aperture with index {aperture}")))?;
        BeamGeometry::new(radius, short_term_width(set)?, wandering_variance(set)?.sqrt())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    LogNormal,
    Wandering,
    Elliptic,
    EllipticSemiAnalytic,
    TotalProbLogNormal,
    TotalProbBeta,
    Beta,
    Empirical,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::LogNormal => "lognormal",
            Family::Wandering => "wandering",
            Family::Elliptic => "elliptic",
            Family::EllipticSemiAnalytic => "elliptic_semianalytic",
            Family::TotalProbLogNormal => "total_prob_LN",
            Family::TotalProbBeta => "total_prob_Beta",
            Family::Beta => "beta",
            Family::Empirical => "empirical",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug)]
pub enum Distribution {
    LogNormal(TruncatedLogNormal),
    Beta(BetaPdt),
    Wandering(LogNegativeWeibull),
    Mixture(Mixture),
    Empirical(EmpiricalPdt),
}

impl Distribution {
    pub fn density(&self, eta: f64) -> f64 {
        match self {
            Distribution::LogNormal(d) => d.density(eta),
            Distribution::Beta(d) => d.density(eta),
            Distribution::Wandering(d) => d.density(eta),
            Distribution::Mixture(d) => d.density(eta),
            Distribution::Empirical(d) => d.density(eta),
        }
    }

    pub fn cdf(&self, eta: f64) -> f64 {
        match self {
            Distribution::LogNormal(d) => d.cdf(eta),
            Distribution::Beta(d) => d.cdf(eta),
            Distribution::Wandering(d) => d.cdf(eta),
            Distribution::Mixture(d) => d.cdf(eta),
            Distribution::Empirical(d) => d.cdf(eta),
        }
    }

    /// `∫ g(η) P(η) dη` over `[lo, hi]`.
    pub fn integrate(&self, g: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
        match self {
            Distribution::LogNormal(d) => d.integrate(g, lo, hi),
            Distribution::Beta(d) => d.integrate(g, lo, hi),
            Distribution::Wandering(d) => d.integrate(g, lo, hi),
            Distribution::Mixture(d) => d.integrate(g, lo, hi),
            Distribution::Empirical(d) => d.integrate(g, lo, hi),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Distribution::LogNormal(d) => d.sample(rng),
            Distribution::Beta(d) => d.sample(rng),
            Distribution::Wandering(d) => d.sample(rng),
            Distribution::Mixture(d) => d.sample(rng),
            Distribution::Empirical(d) => d.sample(rng),
        }
    }

    fn parameters(&self) -> Vec<(String, f64)> {
        match self {
            Distribution::LogNormal(d) => vec![("mu".into(), d.mu()), ("sigma".into(), d.sigma())],
            Distribution::Beta(d) => vec![("a".into(), d.a()), ("b".into(), d.b())],
            Distribution::Wandering(d) => vec![
                ("eta0".into(), d.eta0()),
                ("scale".into(), d.scale()),
                ("shape".into(), d.shape()),
                ("wandering_std".into(), d.wandering_std()),
            ],
            Distribution::Mixture(d) => vec![("components".into(), d.len() as f64)],
            Distribution::Empirical(d) => vec![("samples".into(), d.len() as f64), ("bins".into(), d.bins() as f64)],
        }
    }
}

/// A fitted PDT: a family tag plus the distribution it produced.
#[derive(Clone, Debug)]
pub struct PdtModel {
    family: Family,
    dist: Distribution,
}

impl PdtModel {
    pub fn new(family: Family, dist: Distribution) -> Self {
        PdtModel { family, dist }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn distribution(&self) -> &Distribution {
        &self.dist
    }

    pub fn density(&self, eta: f64) -> f64 {
        self.dist.density(eta)
    }

    pub fn cdf(&self, eta: f64) -> f64 {
        self.dist.cdf(eta)
    }

    pub fn integrate(&self, g: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
        self.dist.integrate(g, lo, hi)
    }

    /// `∫₀¹ P(η) dη` by quadrature (a plain count for empirical models).
    pub fn normalization(&self) -> f64 {
        self.integrate(&|_| 1.0, 0.0, 1.0)
    }

    /// First two moments by quadrature.
    pub fn moments(&self) -> (f64, f64) {
        (self.integrate(&|x| x, 0.0, 1.0), self.integrate(&|x| x * x, 0.0, 1.0))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.dist.sample(rng)
    }

    /// `n` draws from the model-sampling stream `index` of `seed`.
    pub fn sample_n(&self, n: usize, seed: u64, index: u64) -> Vec<f64> {
        let mut rng = rng::stream(seed, Domain::Model, index);
        (0..n).map(|_| self.sample(&mut rng)).collect()
    }

    /// The sample list backing an empirical model, if this is one.
    pub fn empirical_samples(&self) -> Option<&[f64]> {
        match &self.dist {
            Distribution::Empirical(d) => Some(d.sorted()),
            _ => None,
        }
    }

    /// Canonical text record of the model.
    pub fn summary(&self) -> String {
        let (m1, m2) = self.moments();
        let mut out = String::new();
        let _ = writeln!(out, "family = {}", self.family);
        for (name, value) in self.dist.parameters() {
            let _ = writeln!(out, "param.{name} = {value:.12e}");
        }
        let _ = writeln!(out, "m1 = {m1:.12e}");
        let _ = writeln!(out, "m2 = {m2:.12e}");
        let _ = writeln!(out, "normalization = {:.12e}", self.normalization());
        out
    }
}

/// Piecewise tanh-sinh quadrature of `f(x, top - x)` over `[lo, hi]`,
/// split at `breaks`. `top` is the upper end of the support; the second
/// argument stays accurate as `x` approaches it.
pub(crate) fn piecewise<F: Fn(f64, f64) -> f64>(f: F, lo: f64, hi: f64, top: f64, breaks: &[f64]) -> f64 {
    split_points(lo, hi, breaks)
        .windows(2)
        .map(|w| {
            let (p, q) = (w[0], w[1]);
            let at_top = q == top;
            tanh_sinh_tol(|x, from_q, _| f(x, if at_top { from_q } else { top - x }), p, q, QUAD_REL, QUAD_ABS)
        })
        .sum()
}

/// `lo`, the breaks strictly inside `(lo, hi)` in increasing order, and `hi`.
/// Empty when the interval is empty.
pub(crate) fn split_points(lo: f64, hi: f64, breaks: &[f64]) -> Vec<f64> {
    if !(hi > lo) {
        return Vec::new();
    }
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|b| *b > lo && *b < hi).collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    let mut points = Vec::with_capacity(inner.len() + 2);
    points.push(lo);
    points.extend(inner);
    points.push(hi);
    points
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moment_pair_validation() {
        assert!(MomentPair::new(0.5, 0.3).is_ok());
        assert!(matches!(MomentPair::new(0.5, 0.25), Err(Error::Degenerate(_))));
        assert!(matches!(MomentPair::new(0.5, 0.6), Err(Error::InvalidInput(_))));
        assert!(matches!(MomentPair::new(0.0, 0.0), Err(Error::InvalidInput(_))));
        assert!(MomentPair::new(1.2, 1.3).is_err());
    }

    #[test]
    fn geometry_eta0() {
        let g = BeamGeometry::new(0.01, 0.02, 0.005).unwrap();
        assert!((g.eta0 - (1.0 - (-0.5f64).exp())).abs() < 1e-15);
        assert!(BeamGeometry::new(0.0, 0.02, 0.005).is_err());
        assert!(BeamGeometry::new(0.01, 0.02, -1.0).is_err());
    }

    #[test]
    fn piecewise_matches_polynomial() {
        let v = piecewise(|x, _| 3.0 * x * x, 0.0, 1.0, 1.0, &[0.2, 0.7, 5.0]);
        assert!((v - 1.0).abs() < 1e-14);
    }
}
