use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use rand_distr::StandardNormal;

use super::empirical::EmpiricalPdt;
use super::wandering::{max_transmittance, wandering_scale, wandering_shape};
use super::{Distribution, Family, PdtModel};
use crate::math::{lambert_w_of_exp, one_minus_i0e, symmetric_eigen};
use crate::rng::{self, Domain};
use crate::sampling::{semiaxis_orientation, wandering_variance, SampleSet};
use crate::{Error, Result};

const MIN_DRAWS: usize = 10_000;
const CIRCULAR_TOLERANCE: f64 = 1e-6;

fn circular_transmittance(r0: f64, width: f64, aperture_radius: f64) -> f64 {
    let zeta = 2.0 / width;
    let scale = wandering_scale(zeta, aperture_radius);
    let shape = wandering_shape(zeta, aperture_radius);
    max_transmittance(aperture_radius, width) * (-(r0 / scale).powf(shape)).exp()
}

/// Transmittance of a centred elliptic beam with semiaxes `w1`, `w2`.
fn elliptic_max_transmittance(w1: f64, w2: f64, r: f64) -> f64 {
    let (inv1, inv2) = (1.0 / (w1 * w1), 1.0 / (w2 * w2));
    let diff = r * r * (inv1 - inv2).abs();
    let sum = r * r * (inv1 + inv2);
    // I0(d) e^{-s} = i0e(d) e^{d - s}
    let overlap = 1.0 - (1.0 - one_minus_i0e(diff)) * (diff - sum).exp();
    let zeta = (1.0 / w1 - 1.0 / w2).abs();
    let x = r * r * zeta * zeta;
    let prefactor = -2.0 * (-0.5 * x).exp_m1();
    let reach = r * (w1 + w2) / (w1 - w2).abs();
    let correction = (-(reach / wandering_scale(zeta, r)).powf(wandering_shape(zeta, r))).exp();
    overlap - prefactor * correction
}

/// Width of the circular beam equivalent to the ellipse for a deflection at
/// angle `angle` from the `w1` axis.
fn effective_width(w1: f64, w2: f64, angle: f64, r: f64) -> f64 {
    let (inv1, inv2) = (1.0 / (w1 * w1), 1.0 / (w2 * w2));
    let log_arg = (4.0 * r * r / (w1 * w2)).ln()
        + 2.0 * r * r * (inv1 + inv2)
        + r * r * (inv1 - inv2) * (2.0 * angle).cos();
    2.0 * r / lambert_w_of_exp(log_arg).sqrt()
}

/// Transmittance of an elliptic Gaussian beam through a circular aperture of
/// radius `aperture_radius` centred at the origin. The beam centroid is at
/// `(x0, y0)`, its semiaxes are `w1`, `w2`, and `phi` is the angle of the
/// `w1` axis to the x axis.
pub fn elliptic_transmittance_widths(x0: f64, y0: f64, w1: f64, w2: f64, phi: f64, aperture_radius: f64) -> f64 {
    let r0 = x0.hypot(y0);
    if (w1 - w2).abs() < CIRCULAR_TOLERANCE * w1.max(w2) {
        return circular_transmittance(r0, (w1 * w2).sqrt(), aperture_radius).clamp(0.0, 1.0);
    }
    let chi = y0.atan2(x0);
    let eta0 = elliptic_max_transmittance(w1, w2, aperture_radius);
    let zeta = 2.0 / effective_width(w1, w2, phi - chi, aperture_radius);
    let scale = wandering_scale(zeta, aperture_radius);
    let shape = wandering_shape(zeta, aperture_radius);
    (eta0 * (-(r0 / scale).powf(shape)).exp()).clamp(0.0, 1.0)
}

/// [`elliptic_transmittance_widths`] with the semiaxes given as
/// `Θ_i = ln(W_i^2 / W0^2)`; `v = (x0, y0, Θ1, Θ2)`.
pub fn elliptic_transmittance(v: [f64; 4], phi: f64, w0: f64, aperture_radius: f64) -> f64 {
    let w1 = w0 * (0.5 * v[2]).exp();
    let w2 = w0 * (0.5 * v[3]).exp();
    elliptic_transmittance_widths(v[0], v[1], w1, w2, phi, aperture_radius)
}

/// Gaussian statistics of `(x0, y0, Θ1, Θ2)` for the analytic elliptic model.
#[derive(Clone, Debug, PartialEq)]
pub struct EllipticParams {
    pub mean: [f64; 4],
    pub covariance: [[f64; 4]; 4],
    /// Beam-spot radius at the transmitter (m).
    pub w0: f64,
    pub aperture_radius: f64,
}

impl EllipticParams {
    /// Parameters from samples of the squared semiaxes and the wandering
    /// standard deviation.
    pub fn from_width_statistics(
        w1sq: &[f64],
        w2sq: &[f64],
        wandering_std: f64,
        w0: f64,
        aperture_radius: f64,
    ) -> Result<Self> {
        if w1sq.len() != w2sq.len() || w1sq.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "need two equal-length width lists of at least 2 entries, got {} and {}",
                w1sq.len(),
                w2sq.len()
            )));
        }
        let n = w1sq.len() as f64;
        let lists = [w1sq, w2sq];
        let means = lists.map(|l| l.iter().sum::<f64>() / n);
        let cov = |i: usize, j: usize| -> f64 {
            lists[i].iter().zip(lists[j]).map(|(a, b)| (a - means[i]) * (b - means[j])).sum::<f64>() / (n - 1.0)
        };
        let mut covariance = [[0.0; 4]; 4];
        covariance[0][0] = wandering_std * wandering_std;
        covariance[1][1] = wandering_std * wandering_std;
        for i in 0..2 {
            for j in 0..2 {
                covariance[2 + i][2 + j] = (cov(i, j) / (means[i] * means[j])).ln_1p();
            }
        }
        let mut mean = [0.0; 4];
        for i in 0..2 {
            let rel_var = cov(i, i) / (means[i] * means[i]);
            mean[2 + i] = (means[i] / (w0 * w0) / (1.0 + rel_var).sqrt()).ln();
        }
        let params = EllipticParams { mean, covariance, w0, aperture_radius };
        params.validate()?;
        Ok(params)
    }

    /// Parameters for aperture `aperture` of a simulated ensemble.
    pub fn from_sample_set(set: &SampleSet, aperture: usize) -> Result<Self> {
        let radius = *set
            .apertures()
            .get(aperture)
            .ok_or_else(|| Error::InvalidInput(format!("no aperture with index {aperture}")))?;
        let w1sq: Vec<f64> = set.records.iter().map(|r| r.w1sq).collect();
        let w2sq: Vec<f64> = set.records.iter().map(|r| r.w2sq).collect();
        EllipticParams::from_width_statistics(&w1sq, &w2sq, wandering_variance(set)?.sqrt(), set.config.beam.w0, radius)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.mean.iter().chain(self.covariance.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput("elliptic-beam statistics contain non-finite entries".into()));
        }
        if !(self.w0 > 0.0 && self.aperture_radius > 0.0) {
            return Err(Error::InvalidInput(format!(
                "beam radius {} and aperture {} must be positive",
                self.w0, self.aperture_radius
            )));
        }
        for i in 0..4 {
            for j in 0..i {
                let (a, b) = (self.covariance[i][j], self.covariance[j][i]);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(f64::MIN_POSITIVE) {
                    return Err(Error::InvalidInput(format!("covariance is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(())
    }

    /// Square-root factor `L` with `L Lᵀ = Σ`.
    fn factor(&self) -> Result<[[f64; 4]; 4]> {
        let (values, vectors) = symmetric_eigen(self.covariance);
        let largest = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut l = [[0.0; 4]; 4];
        for (k, value) in values.iter().enumerate() {
            if *value < -1e-12 * largest.max(f64::MIN_POSITIVE) {
                return Err(Error::ModelInapplicable(format!(
                    "elliptic-beam covariance is not positive semidefinite (eigenvalue {value:e})"
                )));
            }
            let root = value.max(0.0).sqrt();
            for i in 0..4 {
                l[i][k] = vectors[i][k] * root;
            }
        }
        Ok(l)
    }
}

/// Elliptic-beam PDT from Gaussian draws of `(x0, y0, Θ1, Θ2)` and a uniform
/// orientation in `[0, π/2]`. Uses model stream 0 of `seed`.
pub fn elliptic_pdt_analytic(params: &EllipticParams, n_draws: usize, seed: u64) -> Result<PdtModel> {
    if n_draws < MIN_DRAWS {
        return Err(Error::InvalidInput(format!("elliptic-beam PDT needs at least {MIN_DRAWS} draws, got {n_draws}")));
    }
    params.validate()?;
    let l = params.factor()?;
    let mut rng = rng::stream(seed, Domain::Model, 0);
    let mut etas = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let z: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let phi = FRAC_PI_2 * rng.random::<f64>();
        let v: [f64; 4] = std::array::from_fn(|i| params.mean[i] + (0..4).map(|k| l[i][k] * z[k]).sum::<f64>());
        etas.push(elliptic_transmittance(v, phi, params.w0, params.aperture_radius));
    }
    Ok(PdtModel::new(Family::Elliptic, Distribution::Empirical(EmpiricalPdt::new(&etas)?)))
}

/// Elliptic-beam PDT evaluated on the sampled centroid and spot shape of
/// every record.
pub fn elliptic_pdt_semianalytic(set: &SampleSet, aperture_radius: f64) -> Result<PdtModel> {
    if set.records.is_empty() {
        return Err(Error::InvalidInput("sample set has no records".into()));
    }
    let etas: Vec<f64> = set
        .records
        .iter()
        .map(|r| {
            let phi = semiaxis_orientation(r.spot());
            elliptic_transmittance_widths(r.x0, r.y0, r.w1sq.sqrt(), r.w2sq.sqrt(), phi, aperture_radius)
        })
        .collect();
    Ok(PdtModel::new(Family::EllipticSemiAnalytic, Distribution::Empirical(EmpiricalPdt::new(&etas)?)))
}
