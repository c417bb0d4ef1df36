//! Model comparison and beam statistics: Kolmogorov–Smirnov distances,
//! Pearson correlations, moment summaries, and the semiaxis statistics.

use crate::math::symmetric_eigen;
use crate::pdt::PdtModel;
use crate::sampling::SampleRecord;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KsKind {
    /// Empirical CDF against an exact model CDF.
    EmpiricalVsModel,
    /// Two empirical CDFs.
    EmpiricalVsEmpirical,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KsResult {
    pub d: f64,
    pub n_samples: usize,
    pub kind: KsKind,
}

fn sorted_copy(xs: &[f64]) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(Error::InvalidInput("KS statistic of an empty sample".into()));
    }
    if xs.iter().any(|x| x.is_nan()) {
        return Err(Error::InvalidInput("KS statistic of a sample containing NaN".into()));
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// `sup |F_M - F|` for the empirical CDF of `samples` against `cdf`.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64> {
    let sorted = sorted_copy(samples)?;
    let m = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in sorted.iter().enumerate() {
        let f = cdf(*x);
        d = d.max(((i + 1) as f64 / m - f).abs()).max((f - i as f64 / m).abs());
    }
    Ok(d.min(1.0))
}

/// Two-sample KS distance `sup |F_a - F_b|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    let a = sorted_copy(a)?;
    let b = sorted_copy(b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// KS distance of `samples` from `model`. Models backed by a sample list
/// (elliptic-beam PDTs, empirical PDTs) use the two-sample form.
pub fn ks_statistic(samples: &[f64], model: &PdtModel) -> Result<KsResult> {
    let (d, kind) = match model.empirical_samples() {
        Some(other) => (ks_two_sample(samples, other)?, KsKind::EmpiricalVsEmpirical),
        None => (ks_one_sample(samples, |x| model.cdf(x))?, KsKind::EmpiricalVsModel),
    };
    Ok(KsResult { d, n_samples: samples.len(), kind })
}

fn check_pair(xs: &[f64], ys: &[f64], min: usize) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidInput(format!("length mismatch: {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < min {
        return Err(Error::InvalidInput(format!("need at least {min} pairs, got {}", xs.len())));
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys, 2)?;
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(Error::Degenerate("Pearson correlation of a constant sequence".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Mean, unbiased variance, and the moment-ratio skewness `g1` and excess
/// kurtosis `g2` (central moments with the `1/n` normalization).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentSummary {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

pub fn moment_summary(xs: &[f64]) -> Result<MomentSummary> {
    if xs.len() < 4 {
        return Err(Error::InvalidInput(format!("need at least 4 values, got {}", xs.len())));
    }
    let n = xs.len() as f64;
    let m = mean(xs);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in xs {
        let d = x - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    if !(m2 > 0.0) {
        return Err(Error::Degenerate("moment summary of a constant sequence".into()));
    }
    Ok(MomentSummary {
        mean: m,
        variance: m2 * n / (n - 1.0),
        skewness: m3 / m2.powf(1.5),
        excess_kurtosis: m4 / (m2 * m2) - 3.0,
    })
}

/// Rotation by 45°: `Θc = (Θ1 + Θ2)/√2`, `Θs = (Θ1 − Θ2)/√2`.
pub fn theta_rotation(theta1: &[f64], theta2: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_pair(theta1, theta2, 0)?;
    let r = std::f64::consts::FRAC_1_SQRT_2;
    Ok(theta1.iter().zip(theta2).map(|(a, b)| (r * (a + b), r * (a - b))).unzip())
}

/// `Θ_i = ln(W_i^2 / W0^2)` for every record.
pub fn theta_values(records: &[SampleRecord], w0: f64) -> (Vec<f64>, Vec<f64>) {
    let w0sq = w0 * w0;
    records.iter().map(|r| ((r.w1sq / w0sq).ln(), (r.w2sq / w0sq).ln())).unzip()
}

/// The level-4 covariance ellipse `(t − c)ᵀ Σ⁻¹ (t − c) = 4`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CovarianceEllipse {
    pub center: [f64; 2],
    pub covariance: [[f64; 2]; 2],
    pub inverse: [[f64; 2]; 2],
    /// Semiaxis lengths `2 sqrt(λ)`, larger first.
    pub semiaxes: [f64; 2],
    /// Angle of the larger semiaxis to the first coordinate axis.
    pub angle: f64,
}

impl CovarianceEllipse {
    pub const LEVEL: f64 = 4.0;

    /// Quadratic form `(t − c)ᵀ Σ⁻¹ (t − c)`.
    pub fn form(&self, t: [f64; 2]) -> f64 {
        let d = [t[0] - self.center[0], t[1] - self.center[1]];
        let s = self.inverse;
        d[0] * (s[0][0] * d[0] + s[0][1] * d[1]) + d[1] * (s[1][0] * d[0] + s[1][1] * d[1])
    }

    pub fn contains(&self, t: [f64; 2]) -> bool {
        self.form(t) <= Self::LEVEL
    }

    /// `n` points along the contour, for plotting.
    pub fn contour(&self, n: usize) -> Vec<[f64; 2]> {
        let (c, s) = (self.angle.cos(), self.angle.sin());
        (0..n)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                let (u, v) = (self.semiaxes[0] * t.cos(), self.semiaxes[1] * t.sin());
                [self.center[0] + c * u - s * v, self.center[1] + s * u + c * v]
            })
            .collect()
    }
}

pub fn covariance_ellipse(theta1: &[f64], theta2: &[f64]) -> Result<CovarianceEllipse> {
    check_pair(theta1, theta2, 2)?;
    let n = theta1.len() as f64;
    let center = [mean(theta1), mean(theta2)];
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for (x, y) in theta1.iter().zip(theta2) {
        let (dx, dy) = (x - center[0], y - center[1]);
        a += dx * dx;
        b += dx * dy;
        c += dy * dy;
    }
    let (a, b, c) = (a / (n - 1.0), b / (n - 1.0), c / (n - 1.0));
    let det = a * c - b * b;
    if !(det > 1e-14 * (a * c).max(f64::MIN_POSITIVE)) {
        return Err(Error::Degenerate(format!("singular covariance (determinant {det:e})")));
    }
    let covariance = [[a, b], [b, c]];
    let inverse = [[c / det, -b / det], [-b / det, a / det]];
    let (values, vectors) = symmetric_eigen(covariance);
    let (big, small) = if values[0] >= values[1] { (0, 1) } else { (1, 0) };
    let semiaxes = [2.0 * values[big].sqrt(), 2.0 * values[small].sqrt()];
    let angle = vectors[1][big].atan2(vectors[0][big]);
    Ok(CovarianceEllipse { center, covariance, inverse, semiaxes, angle })
}

fn width_along(record: &SampleRecord, chi: f64) -> f64 {
    let (c, s) = (chi.cos(), chi.sin());
    (c * c * record.sxx + 2.0 * c * s * record.sxy + s * s * record.syy).sqrt()
}

/// Tangential beam width `W_r = sqrt(S_{x_r x_r})` in the frame rotated by
/// `χ` with `tan χ = x0 / y0`. Returns `(W_r, r0)`.
pub fn tangential_width(record: &SampleRecord) -> Result<(f64, f64)> {
    let r0 = record.r0();
    if !(r0 > 0.0) {
        return Err(Error::Degenerate("beam centroid at the origin has no direction".into()));
    }
    let chi = record.x0.atan2(record.y0);
    Ok((width_along(record, chi), r0))
}

/// Beam width along the centroid direction `atan2(y0, x0)`. Returns
/// `(width, r0)`.
pub fn radial_width(record: &SampleRecord) -> Result<(f64, f64)> {
    let r0 = record.r0();
    if !(r0 > 0.0) {
        return Err(Error::Degenerate("beam centroid at the origin has no direction".into()));
    }
    Ok((width_along(record, record.y0.atan2(record.x0)), r0))
}
