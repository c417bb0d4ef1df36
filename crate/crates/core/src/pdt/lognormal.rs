use rand::Rng;

use super::{piecewise, Distribution, Family, MomentPair, PdtModel};
use crate::math::{normal_cdf, normal_quantile};
use crate::{Error, Result};

/// Log-normal law of `η` (`ln η ~ N(-μ, σ²)`) renormalized on `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedLogNormal {
    mu: f64,
    sigma: f64,
    /// Untruncated probability of `η ≤ 1`.
    mass: f64,
}

impl TruncatedLogNormal {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !(mu.is_finite() && sigma.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite log-normal parameters mu={mu}, sigma={sigma}")));
        }
        if sigma <= 0.0 {
            return Err(Error::Degenerate(format!("log-normal sigma {sigma} is not positive")));
        }
        let mass = normal_cdf(mu / sigma);
        if mass <= 0.0 {
            return Err(Error::ModelInapplicable(format!(
                "log-normal with mu={mu}, sigma={sigma} has no mass below 1"
            )));
        }
        Ok(TruncatedLogNormal { mu, sigma, mass })
    }

    pub fn from_moments(m: MomentPair) -> Result<Self> {
        m.validate()?;
        let sigma_sq = (m.m2 / (m.m1 * m.m1)).ln();
        if !(sigma_sq > 0.0) {
            return Err(Error::Degenerate(format!("zero variance for moments m1={}, m2={}", m.m1, m.m2)));
        }
        let mu = -(m.m1 * m.m1 / m.m2.sqrt()).ln();
        TruncatedLogNormal::new(mu, sigma_sq.sqrt())
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Probability the untruncated law assigns to `η ≤ 1`.
    pub fn truncation_mass(&self) -> f64 {
        self.mass
    }

    pub fn density(&self, eta: f64) -> f64 {
        if !(eta > 0.0 && eta <= 1.0) {
            return 0.0;
        }
        let z = (eta.ln() + self.mu) / self.sigma;
        (-0.5 * z * z).exp() / ((2.0 * std::f64::consts::PI).sqrt() * self.sigma * eta * self.mass)
    }

    pub fn cdf(&self, eta: f64) -> f64 {
        if eta <= 0.0 {
            0.0
        } else if eta >= 1.0 {
            1.0
        } else {
            (normal_cdf((eta.ln() + self.mu) / self.sigma) / self.mass).min(1.0)
        }
    }

    pub fn integrate(&self, g: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
        let lo = lo.max(0.0);
        let hi = hi.min(1.0);
        let breaks: Vec<f64> = [-8.0, -3.0, 0.0, 3.0, 8.0]
            .iter()
            .map(|k| (-self.mu + k * self.sigma).exp())
            .collect();
        piecewise(|x, _| g(x) * self.density(x), lo, hi, 1.0, &breaks)
    }

    /// Closed-form `E[η^k]` of the truncated law.
    pub fn raw_moment(&self, k: f64) -> f64 {
        let c = self.mu / self.sigma;
        (-k * self.mu + 0.5 * k * k * self.sigma * self.sigma).exp() * normal_cdf(c - k * self.sigma) / self.mass
    }

    /// `E[η^k]` of the law before truncation.
    pub fn untruncated_moment(&self, k: f64) -> f64 {
        (-k * self.mu + 0.5 * k * k * self.sigma * self.sigma).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let p = (1.0 - u) * self.mass;
        (-self.mu + self.sigma * normal_quantile(p)).exp().min(1.0)
    }
}

/// Truncated log-normal PDT with parameters fixed by the two moments.
pub fn lognormal_from_moments(m: MomentPair) -> Result<PdtModel> {
    Ok(PdtModel::new(Family::LogNormal, Distribution::LogNormal(TruncatedLogNormal::from_moments(m)?)))
}
