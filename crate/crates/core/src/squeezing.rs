//! Quadrature-squeezing transfer through a fluctuating-loss channel with
//! transmittance postselection.
//!
//! Variances are in shot-noise units with vacuum variance `0.5`. The channel
//! maps the normal-ordered input variance `⟨:Δx²:⟩_in` to
//! `⟨η⟩⟨:Δx²:⟩_in + ⟨ΔT²⟩⟨x⟩²_in` with `T = √η`.

use crate::pdt::PdtModel;
use crate::{Error, Result};

pub const VACUUM_VARIANCE: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SqueezingInput {
    pub normal_ordered_variance_in: f64,
    pub mean_quadrature_in: f64,
    pub constant_loss_db: f64,
}

impl SqueezingInput {
    pub fn new(normal_ordered_variance_in: f64, mean_quadrature_in: f64, constant_loss_db: f64) -> Result<Self> {
        let input = SqueezingInput { normal_ordered_variance_in, mean_quadrature_in, constant_loss_db };
        input.validate()?;
        Ok(input)
    }

    /// Input state given by its squeezing in dB relative to vacuum
    /// (negative for squeezed states).
    pub fn from_db(squeezing_db: f64, mean_quadrature_in: f64, constant_loss_db: f64) -> Result<Self> {
        let variance = VACUUM_VARIANCE * (10f64.powf(squeezing_db / 10.0) - 1.0);
        Self::new(variance, mean_quadrature_in, constant_loss_db)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.normal_ordered_variance_in >= -VACUUM_VARIANCE) {
            return Err(Error::InvalidInput(format!(
                "normal-ordered variance {} below -0.5 is unphysical",
                self.normal_ordered_variance_in
            )));
        }
        if !(self.constant_loss_db >= 0.0 && self.constant_loss_db.is_finite()) {
            return Err(Error::InvalidInput(format!("constant loss {} dB must be >= 0", self.constant_loss_db)));
        }
        if !self.mean_quadrature_in.is_finite() {
            return Err(Error::InvalidInput("mean quadrature must be finite".into()));
        }
        Ok(())
    }

    /// Multiplicative transmittance of the constant loss.
    pub fn loss_factor(&self) -> f64 {
        10f64.powf(-self.constant_loss_db / 10.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PostselectionReport {
    pub eta_min: f64,
    pub exceedance: f64,
    pub mean_eta: f64,
    /// `⟨ΔT²⟩ = ⟨η⟩ − ⟨√η⟩²`
    pub var_t: f64,
    pub variance_out: f64,
    pub squeezing_out_db: f64,
}

/// Postselected mean and exceedance fraction of `samples` after scaling
/// every value by `loss_factor`.
pub fn postselected_mean_eta(samples: &[f64], eta_min: f64, loss_factor: f64) -> Result<(f64, f64)> {
    let (mean, _, exceedance) = postselected(samples, eta_min, loss_factor)?;
    Ok((mean, exceedance))
}

fn postselected(samples: &[f64], eta_min: f64, loss_factor: f64) -> Result<(f64, f64, f64)> {
    let (mut n, mut sum, mut sum_sqrt) = (0usize, 0.0, 0.0);
    for eta in samples {
        let eta = eta * loss_factor;
        if eta >= eta_min {
            n += 1;
            sum += eta;
            sum_sqrt += eta.max(0.0).sqrt();
        }
    }
    if n == 0 {
        return Err(Error::InvalidInput(format!("no sample reaches the postselection threshold {eta_min}")));
    }
    let nf = n as f64;
    Ok((sum / nf, sum_sqrt / nf, nf / samples.len() as f64))
}

fn report(eta_min: f64, exceedance: f64, mean_eta: f64, mean_t: f64, input: &SqueezingInput) -> PostselectionReport {
    let var_t = (mean_eta - mean_t * mean_t).max(0.0);
    let x = input.mean_quadrature_in;
    let variance_out = VACUUM_VARIANCE + mean_eta * input.normal_ordered_variance_in + var_t * x * x;
    PostselectionReport {
        eta_min,
        exceedance,
        mean_eta,
        var_t,
        variance_out,
        squeezing_out_db: 10.0 * (variance_out / VACUUM_VARIANCE).log10(),
    }
}

/// Output quadrature variance and squeezing for the postselected samples.
pub fn squeezing_out(samples: &[f64], eta_min: f64, input: &SqueezingInput) -> Result<PostselectionReport> {
    input.validate()?;
    let (mean_eta, mean_t, exceedance) = postselected(samples, eta_min, input.loss_factor())?;
    Ok(report(eta_min, exceedance, mean_eta, mean_t, input))
}

/// [`squeezing_out`] for every threshold; thresholds no sample reaches give
/// an error in their row.
pub fn squeezing_vs_threshold(
    samples: &[f64],
    thresholds: &[f64],
    input: &SqueezingInput,
) -> Vec<Result<PostselectionReport>> {
    thresholds.iter().map(|t| squeezing_out(samples, *t, input)).collect()
}

/// [`squeezing_out`] with the postselected averages taken over a PDT model.
pub fn squeezing_out_model(model: &PdtModel, eta_min: f64, input: &SqueezingInput) -> Result<PostselectionReport> {
    input.validate()?;
    let loss = input.loss_factor();
    let lo = (eta_min / loss).max(0.0);
    let mass = model.integrate(&|_| 1.0, lo, 1.0);
    let total = model.normalization();
    if !(mass > 1e-12 * total) {
        return Err(Error::InvalidInput(format!("model has no mass above the postselection threshold {eta_min}")));
    }
    let mean_eta = loss * model.integrate(&|x| x, lo, 1.0) / mass;
    let mean_t = loss.sqrt() * model.integrate(&|x| x.max(0.0).sqrt(), lo, 1.0) / mass;
    Ok(report(eta_min, mass / total, mean_eta, mean_t, input))
}

pub fn squeezing_vs_threshold_model(
    model: &PdtModel,
    thresholds: &[f64],
    input: &SqueezingInput,
) -> Vec<Result<PostselectionReport>> {
    thresholds.iter().map(|t| squeezing_out_model(model, *t, input)).collect()
}

pub const THRESHOLD_CSV_HEADER: &str = "eta_min,exceedance,mean_eta,var_T,squeezing_db";

/// Threshold-scan CSV; rows without postselected samples are written as NA.
pub fn threshold_csv(thresholds: &[f64], rows: &[Result<PostselectionReport>]) -> String {
    let mut out = String::from(THRESHOLD_CSV_HEADER);
    out.push('\n');
    for (t, row) in thresholds.iter().zip(rows) {
        match row {
            Ok(r) => out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.eta_min, r.exceedance, r.mean_eta, r.var_t, r.squeezing_out_db
            )),
            Err(_) => out.push_str(&format!("{t},0,NA,NA,NA\n")),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pdt::{beta_from_moments, MomentPair};
    use proptest::prelude::*;

    #[test]
    fn identity_channel() {
        let input = SqueezingInput::new(-0.25, 0.0, 0.0).unwrap();
        let r = squeezing_out(&[1.0; 10], 0.0, &input).unwrap();
        assert!((r.variance_out - 0.25).abs() < 1e-15);
        let db = SqueezingInput::from_db(-3.0, 1.3, 0.0).unwrap();
        let r = squeezing_out(&[1.0; 10], 0.5, &db).unwrap();
        assert!((r.squeezing_out_db + 3.0).abs() < 1e-12);
    }

    #[test]
    fn three_db_hand_case() {
        let input = SqueezingInput::from_db(-3.0, 0.0, 0.0).unwrap();
        let v_in = 0.5 * (10f64.powf(-0.3) - 1.0);
        assert!((input.normal_ordered_variance_in - v_in).abs() < 1e-15);
        let r = squeezing_out(&[0.6; 4], 0.0, &input).unwrap();
        let want = 10.0 * ((0.5 + 0.6 * v_in) / 0.5).log10();
        assert!((r.squeezing_out_db - want).abs() < 1e-12);
        assert!((r.squeezing_out_db + 1.545).abs() < 1e-3);
    }

    #[test]
    fn fluctuation_term_needs_displacement() {
        let samples = [0.2, 0.5, 0.9, 0.7];
        let flat = squeezing_out(&samples, 0.0, &SqueezingInput::new(-0.2, 0.0, 0.0).unwrap()).unwrap();
        assert!((flat.variance_out - (0.5 - 0.2 * flat.mean_eta)).abs() < 1e-15);
        let shifted = squeezing_out(&samples, 0.0, &SqueezingInput::new(-0.2, 2.0, 0.0).unwrap()).unwrap();
        let mean_t = samples.iter().map(|x| x.sqrt()).sum::<f64>() / 4.0;
        let var_t = 0.575 - mean_t * mean_t;
        assert!((shifted.var_t - var_t).abs() < 1e-15);
        assert!((shifted.variance_out - flat.variance_out - 4.0 * var_t).abs() < 1e-15);
    }

    #[test]
    fn vacuum_input_stays_vacuum() {
        let r = squeezing_out(&[0.1, 0.4, 0.8], 0.0, &SqueezingInput::new(0.0, 0.0, 0.7).unwrap()).unwrap();
        assert_eq!(r.variance_out, 0.5);
        assert_eq!(r.squeezing_out_db, 0.0);
    }

    #[test]
    fn postselection_edges() {
        let samples = [0.1, 0.3, 0.5, 0.8];
        let (m, f) = postselected_mean_eta(&samples, 0.0, 1.0).unwrap();
        assert!((m - 0.425).abs() < 1e-15 && f == 1.0);
        let (m, f) = postselected_mean_eta(&samples, 0.79, 1.0).unwrap();
        assert_eq!((m, f), (0.8, 0.25));
        assert!(postselected_mean_eta(&samples, 0.81, 1.0).is_err());
        let rows = squeezing_vs_threshold(&samples, &[0.0, 0.9], &SqueezingInput::new(-0.2, 0.0, 0.0).unwrap());
        assert!(rows[0].is_ok() && rows[1].is_err());
        let csv = threshold_csv(&[0.0, 0.9], &rows);
        assert!(csv.starts_with(THRESHOLD_CSV_HEADER) && csv.ends_with("0.9,0,NA,NA,NA\n"));
    }

    #[test]
    fn rejects_unphysical_input() {
        assert!(SqueezingInput::new(-0.6, 0.0, 0.0).is_err());
        assert!(SqueezingInput::new(-0.2, 0.0, -1.0).is_err());
    }

    #[test]
    fn model_matches_samples() {
        let model = beta_from_moments(MomentPair::new(0.55, 0.35).unwrap()).unwrap();
        let samples = model.sample_n(200_000, 3, 0);
        let input = SqueezingInput::from_db(-3.0, 0.5, 0.38).unwrap();
        for t in [0.0, 0.3, 0.6] {
            let a = squeezing_out(&samples, t, &input).unwrap();
            let b = squeezing_out_model(&model, t, &input).unwrap();
            assert!((a.mean_eta - b.mean_eta).abs() < 5e-3, "{t}");
            assert!((a.exceedance - b.exceedance).abs() < 5e-3, "{t}");
            assert!((a.squeezing_out_db - b.squeezing_out_db).abs() < 0.01, "{t}");
        }
    }

    proptest! {
        #[test]
        fn more_postselection_keeps_more_squeezing(
            samples in prop::collection::vec(0.0f64..1.0, 1..200),
            a in 0.0f64..1.0,
            b in 0.0f64..1.0,
            db in -10.0f64..0.0,
            loss in 0.0f64..3.0,
        ) {
            let input = SqueezingInput::from_db(db, 0.0, loss).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            if let (Ok(x), Ok(y)) = (squeezing_out(&samples, lo, &input), squeezing_out(&samples, hi, &input)) {
                prop_assert!(y.mean_eta >= x.mean_eta - 1e-15);
                prop_assert!(y.squeezing_out_db <= x.squeezing_out_db + 1e-12);
                prop_assert!(x.mean_eta >= lo && x.mean_eta <= 1.0);
                prop_assert!((0.0..=1.0).contains(&x.exceedance));
                let rearranged = 0.5 * (1.0 - x.mean_eta) + x.mean_eta * (0.5 + input.normal_ordered_variance_in);
                prop_assert!((x.variance_out - rearranged).abs() < 1e-12);
                prop_assert!(x.variance_out >= 0.0);
            }
        }

        #[test]
        fn loss_folds_into_samples(samples in prop::collection::vec(0.0f64..1.0, 1..100), loss in 0.0f64..5.0, t in 0.0f64..0.5) {
            let input = SqueezingInput::from_db(-3.0, 0.7, loss).unwrap();
            let scaled: Vec<f64> = samples.iter().map(|x| x * input.loss_factor()).collect();
            let lossless = SqueezingInput { constant_loss_db: 0.0, ..input };
            let a = squeezing_out(&samples, t, &input);
            let b = squeezing_out(&scaled, t, &lossless);
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
                (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
            }
        }
    }
}
