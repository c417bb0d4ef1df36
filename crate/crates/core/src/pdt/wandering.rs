use rand::Rng;

use super::{piecewise, BeamGeometry, Distribution, Family, PdtModel};
use crate::math::{i1e, one_minus_i0e};
use crate::{Error, Result};

const SERIES_BELOW: f64 = 1e-4;

/// Power fraction of a centred Gaussian beam of width `width` passing a
/// circular aperture: `1 - exp(-2 R^2 / W^2)`.
pub fn max_transmittance(aperture_radius: f64, width: f64) -> f64 {
    let q = aperture_radius / width;
    -(-2.0 * q * q).exp_m1()
}

/// `ln[2 (1 - e^{-x/2}) / (1 - e^{-x} I0(x))]` at `x = R_ap^2 ζ^2`.
fn log_ratio(x: f64) -> f64 {
    if x < SERIES_BELOW {
        x * (0.5 + x * (-0.125 + x * (1.0 / 96.0 + x / 384.0)))
    } else {
        (-2.0 * (-0.5 * x).exp_m1() / one_minus_i0e(x)).ln()
    }
}

fn shape_at(x: f64) -> f64 {
    if x < SERIES_BELOW {
        2.0 + x * x * x / 96.0
    } else {
        2.0 * x * i1e(x) / one_minus_i0e(x) / log_ratio(x)
    }
}

/// Shape parameter `θ(ζ)` of the log-negative Weibull law.
pub fn wandering_shape(zeta: f64, aperture_radius: f64) -> f64 {
    let a = aperture_radius * zeta;
    shape_at(a * a)
}

/// Scale parameter `R(ζ)` (m) of the log-negative Weibull law.
pub fn wandering_scale(zeta: f64, aperture_radius: f64) -> f64 {
    let a = aperture_radius * zeta;
    let x = a * a;
    aperture_radius * log_ratio(x).powf(-1.0 / shape_at(x))
}

/// Log-negative Weibull distribution of `η = η0 exp[-(r0/R)^θ]` for a
/// Rayleigh-distributed deflection `r0`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogNegativeWeibull {
    eta0: f64,
    scale: f64,
    shape: f64,
    wandering_std: f64,
    /// `R^2 / (2 σ^2)`
    rate: f64,
}

impl LogNegativeWeibull {
    pub fn new(eta0: f64, scale: f64, shape: f64, wandering_std: f64) -> Result<Self> {
        if !(eta0 > 0.0 && eta0 <= 1.0) {
            return Err(Error::InvalidInput(format!("maximum transmittance {eta0} outside (0, 1]")));
        }
        if !(scale > 0.0 && scale.is_finite() && shape > 0.0 && shape.is_finite()) {
            return Err(Error::InvalidInput(format!("invalid scale {scale} or shape {shape}")));
        }
        if !(wandering_std > 0.0 && wandering_std.is_finite()) {
            return Err(Error::Degenerate(format!("wandering std {wandering_std} gives a point mass at eta0")));
        }
        let rate = scale * scale / (2.0 * wandering_std * wandering_std);
        Ok(LogNegativeWeibull { eta0, scale, shape, wandering_std, rate })
    }

    pub fn eta0(&self) -> f64 {
        self.eta0
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn wandering_std(&self) -> f64 {
        self.wandering_std
    }

    fn density_pair(&self, eta: f64, below_top: f64) -> f64 {
        if !(eta > 0.0 && below_top > 0.0) {
            return 0.0;
        }
        let l = (below_top / eta).ln_1p();
        let p = 2.0 / self.shape;
        let lp = l.powf(p);
        ((self.rate * p).ln() - eta.ln() + (p - 1.0) * l.ln() - self.rate * lp).exp()
    }

    pub fn density(&self, eta: f64) -> f64 {
        if eta >= self.eta0 {
            return 0.0;
        }
        self.density_pair(eta, self.eta0 - eta)
    }

    pub fn cdf(&self, eta: f64) -> f64 {
        if eta <= 0.0 {
            0.0
        } else if eta >= self.eta0 {
            1.0
        } else {
            let l = ((self.eta0 - eta) / eta).ln_1p();
            (-self.rate * l.powf(2.0 / self.shape)).exp()
        }
    }

    /// Inverse of [`cdf`](Self::cdf) for `u` in `(0, 1]`.
    pub fn quantile(&self, u: f64) -> f64 {
        let l = (-u.ln() / self.rate).powf(0.5 * self.shape);
        self.eta0 * (-l).exp()
    }

    pub fn integrate(&self, g: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
        let breaks: Vec<f64> = [1e-8, 1e-3, 0.1, 0.5, 0.9, 0.999].iter().map(|u| self.quantile(*u)).collect();
        piecewise(|x, d| g(x) * self.density_pair(x, d), lo.max(0.0), hi.min(self.eta0), self.eta0, &breaks)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.quantile(1.0 - u)
    }
}

/// Beam-wandering PDT for a Gaussian spot of the short-term width.
pub fn wandering_pdt(g: BeamGeometry) -> Result<PdtModel> {
    if !(g.eta0 > 0.0) {
        return Err(Error::InvalidInput(format!("maximum transmittance {} must be positive", g.eta0)));
    }
    let zeta = 2.0 / g.short_term_width;
    let dist = LogNegativeWeibull::new(
        g.eta0,
        wandering_scale(zeta, g.aperture_radius),
        wandering_shape(zeta, g.aperture_radius),
        g.wandering_std,
    )?;
    Ok(PdtModel::new(Family::Wandering, Distribution::Wandering(dist)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::quad;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn series_branch_is_continuous() {
        // high-precision values of ln[2(1 - e^{-x/2}) / (1 - e^{-x} I0(x))]
        for (x, want) in [
            (8.1e-5, 4.049_917_988_053_595_6e-5),
            (9.9998e-5, 4.999_775_006_041_580_2e-5),
            (1.00002e-4, 4.999_974_996_041_705_2e-5),
            (1.21e-4, 6.049_816_989_345_431_9e-5),
        ] {
            assert!((log_ratio(x) / want - 1.0).abs() < 1e-10, "{x}");
            assert!((wandering_shape(x.sqrt(), 1.0) - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn small_aperture_limit() {
        // for R_ap << W the transmittance is eta0 exp(-2 r0^2 / W^2)
        let w = 0.02;
        let zeta = 2.0 / w;
        let r = 1e-5;
        assert!((wandering_shape(zeta, r) - 2.0).abs() < 1e-9);
        assert!((wandering_scale(zeta, r) / (w / 2f64.sqrt()) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn shape_and_scale_reference_values() {
        // independent evaluation at R_ap = W: x = 4
        let x: f64 = 4.0;
        let i0 = 11.301_921_952_136_33;
        let i1 = 9.759_465_153_704_45;
        let den = 1.0 - (-x).exp() * i0;
        let log_ratio = (2.0 * (1.0 - (-x / 2.0).exp()) / den).ln();
        let theta = 2.0 * x * (-x).exp() * i1 / den / log_ratio;
        let scale = log_ratio.powf(-1.0 / theta);
        assert!((wandering_shape(2.0, 1.0) - theta).abs() < 1e-12);
        assert!((wandering_scale(2.0, 1.0) - scale).abs() < 1e-12);
    }

    fn model(r: f64, w: f64, sigma: f64) -> LogNegativeWeibull {
        let g = BeamGeometry::new(r, w, sigma).unwrap();
        match wandering_pdt(g).unwrap().distribution() {
            Distribution::Wandering(d) => d.clone(),
            _ => unreachable!(),
        }
    }

    #[test]
    fn normalizes_with_zero_tail() {
        for (r, w, s) in [(0.01, 0.02, 0.004), (0.02, 0.02, 0.001), (0.005, 0.03, 0.02), (0.03, 0.02, 0.01)] {
            let d = model(r, w, s);
            let norm = d.integrate(&|_| 1.0, 0.0, 1.0);
            assert!((norm - 1.0).abs() < 1e-9, "{r} {w} {s}: {norm}");
            assert_eq!(d.density(d.eta0() + 1e-12), 0.0);
            assert_eq!(d.density(1.0), 0.0);
            assert_eq!(d.cdf(d.eta0()), 1.0);
        }
    }

    #[test]
    fn cdf_is_integral_of_density() {
        let d = model(0.01, 0.02, 0.005);
        for frac in [0.1, 0.5, 0.9, 0.999] {
            let x = d.eta0() * frac;
            assert!((d.integrate(&|_| 1.0, 0.0, x) - d.cdf(x)).abs() < 1e-9);
        }
    }

    #[test]
    fn mass_concentrates_without_wandering() {
        let d = model(0.01, 0.02, 1e-7);
        assert!(d.cdf(d.eta0() * (1.0 - 1e-6)) < 1e-6);
    }

    #[test]
    fn matches_geometric_construction() {
        let d = model(0.012, 0.02, 0.006);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 20_000;
        let mut oracle: Vec<f64> = (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let r0 = d.wandering_std() * (-2.0 * (1.0 - u).ln()).sqrt();
                d.eta0() * (-(r0 / d.scale()).powf(d.shape())).exp()
            })
            .collect();
        oracle.sort_by(f64::total_cmp);
        let mut ks: f64 = 0.0;
        for (i, x) in oracle.iter().enumerate() {
            let f = d.cdf(*x);
            ks = ks.max((f - i as f64 / n as f64).abs()).max(((i + 1) as f64 / n as f64 - f).abs());
        }
        assert!(ks < 0.015, "ks {ks}");
    }

    #[test]
    fn first_moment_matches_radial_average() {
        let d = model(0.015, 0.02, 0.005);
        let direct = d.integrate(&|x| x, 0.0, 1.0);
        let s = d.wandering_std();
        let radial = quad::integrate(
            |r| r / (s * s) * (-0.5 * r * r / (s * s)).exp() * d.eta0() * (-(r / d.scale()).powf(d.shape())).exp(),
            0.0,
            12.0 * s,
            1e-12,
            0.0,
        )
        .unwrap();
        assert!((direct - radial).abs() < 1e-9);
    }
}
