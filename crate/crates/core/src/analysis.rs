//! Model fitting and statistics over a simulated sample set, with CSV
//! export of the resulting tables.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::pdt::{
    beta_from_moments, conditional_moments, default_offset_grid, elliptic_pdt_analytic, elliptic_pdt_semianalytic,
    empirical_pdt, lognormal_from_moments, total_probability_pdt, total_probability_weak_wandering, wandering_pdt,
    BeamGeometry, ConditionalMoments, EllipticParams, MixtureFamily, MomentPair, PdtModel,
};
use crate::sampling::{long_term_width, wandering_variance, SampleSet};
use crate::stats::{
    covariance_ellipse, ks_statistic, moment_summary, pearson, radial_width, tangential_width, theta_rotation,
    theta_values, KsResult, MomentSummary,
};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    LogNormal,
    Beta,
    Wandering,
    Elliptic,
    EllipticSemiAnalytic,
    TotalProbLogNormal,
    TotalProbBeta,
    WeakWanderingLogNormal,
    WeakWanderingBeta,
}

impl ModelKind {
    pub const ALL: [ModelKind; 9] = [
        ModelKind::LogNormal,
        ModelKind::Beta,
        ModelKind::Wandering,
        ModelKind::Elliptic,
        ModelKind::EllipticSemiAnalytic,
        ModelKind::TotalProbLogNormal,
        ModelKind::TotalProbBeta,
        ModelKind::WeakWanderingLogNormal,
        ModelKind::WeakWanderingBeta,
    ];

    /// The default comparison set.
    pub const STANDARD: [ModelKind; 6] = [
        ModelKind::LogNormal,
        ModelKind::Beta,
        ModelKind::Wandering,
        ModelKind::Elliptic,
        ModelKind::TotalProbLogNormal,
        ModelKind::TotalProbBeta,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::LogNormal => "lognormal",
            ModelKind::Beta => "beta",
            ModelKind::Wandering => "wandering",
            ModelKind::Elliptic => "elliptic",
            ModelKind::EllipticSemiAnalytic => "elliptic-semianalytic",
            ModelKind::TotalProbLogNormal => "total-prob-ln",
            ModelKind::TotalProbBeta => "total-prob-beta",
            ModelKind::WeakWanderingLogNormal => "weak-wandering-ln",
            ModelKind::WeakWanderingBeta => "weak-wandering-beta",
        }
    }

    /// Models evaluated on per-record simulation output are
    /// semi-analytical; models built from ensemble statistics alone are
    /// analytical.
    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::EllipticSemiAnalytic | ModelKind::TotalProbLogNormal | ModelKind::TotalProbBeta => {
                "semi-analytical"
            }
            _ => "analytical",
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        let key = match key.as_str() {
            "ln" | "log-normal" => "lognormal",
            "elliptic-semi" | "elliptic-semi-analytic" => "elliptic-semianalytic",
            "total-prob-lognormal" => "total-prob-ln",
            other => other,
        }
        .to_string();
        ModelKind::ALL.into_iter().find(|m| m.name() == key).ok_or_else(|| {
            let names: Vec<&str> = ModelKind::ALL.iter().map(|m| m.name()).collect();
            Error::config("models", format!("unknown model `{s}`; expected one of {}", names.join(", ")))
        })
    }
}

/// Parses a comma-separated model list.
pub fn parse_models(list: &str) -> Result<Vec<ModelKind>> {
    let models = list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect::<Result<Vec<_>>>()?;
    if models.is_empty() {
        return Err(Error::config("models", "no model requested"));
    }
    Ok(models)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnalysisOptions {
    /// Draws for the elliptic-beam PDT.
    pub elliptic_draws: usize,
    pub seed: u64,
    /// Points of the PDT curve tables.
    pub curve_points: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions { elliptic_draws: 100_000, seed: 1, curve_points: 201 }
    }
}

/// Offsets for the conditional moments: the default grid, compressed into
/// the simulated offset range when the ensemble wandering exceeds it.
pub fn offset_grid(set: &SampleSet) -> Result<Vec<f64>> {
    let sigma = wandering_variance(set)?.sqrt();
    let grid = default_offset_grid(sigma);
    let stored = set.config.conditional_offsets().last().copied().unwrap_or(0.0);
    let span = grid.last().copied().unwrap_or(0.0);
    if span > stored && span > 0.0 {
        Ok(grid.into_iter().map(|r| r * stored / span).collect())
    } else {
        Ok(grid)
    }
}

fn aperture_radius(set: &SampleSet, aperture: usize) -> Result<f64> {
    set.apertures()
        .get(aperture)
        .copied()
        .ok_or_else(|| Error::InvalidInput(format!("no aperture with index {aperture}")))
}

/// Conditional moments of aperture `aperture` on [`offset_grid`].
pub fn conditional_table(set: &SampleSet, aperture: usize) -> Result<ConditionalMoments> {
    conditional_moments(set, aperture, &offset_grid(set)?)
}

/// Fits `kind` to aperture `aperture` of `set`.
pub fn build_model(set: &SampleSet, aperture: usize, kind: ModelKind, options: &AnalysisOptions) -> Result<PdtModel> {
    let radius = aperture_radius(set, aperture)?;
    let moments = || MomentPair::from_samples(&set.eta(aperture));
    match kind {
        ModelKind::LogNormal => lognormal_from_moments(moments()?),
        ModelKind::Beta => beta_from_moments(moments()?),
        ModelKind::Wandering => wandering_pdt(BeamGeometry::from_sample_set(set, aperture)?),
        ModelKind::Elliptic => {
            let params = EllipticParams::from_sample_set(set, aperture)?;
            elliptic_pdt_analytic(&params, options.elliptic_draws, options.seed)
        }
        ModelKind::EllipticSemiAnalytic => elliptic_pdt_semianalytic(set, radius),
        ModelKind::TotalProbLogNormal | ModelKind::TotalProbBeta => {
            let family =
                if kind == ModelKind::TotalProbBeta { MixtureFamily::Beta } else { MixtureFamily::LogNormal };
            let table = conditional_table(set, aperture)?;
            total_probability_pdt(&table, wandering_variance(set)?.sqrt(), family)
        }
        ModelKind::WeakWanderingLogNormal | ModelKind::WeakWanderingBeta => {
            let family =
                if kind == ModelKind::WeakWanderingBeta { MixtureFamily::Beta } else { MixtureFamily::LogNormal };
            total_probability_weak_wandering(moments()?, BeamGeometry::from_sample_set(set, aperture)?, family)
        }
    }
}

/// One fitted model, or the reason it could not be built.
#[derive(Debug)]
pub struct ModelFit {
    pub kind: ModelKind,
    pub model: Result<PdtModel>,
    pub ks: Result<KsResult>,
}

#[derive(Debug)]
pub struct ApertureAnalysis {
    pub index: usize,
    pub radius: f64,
    /// Radius over the long-term width, when that width is available.
    pub relative_radius: Option<f64>,
    pub fits: Vec<ModelFit>,
}

pub fn analyze_aperture(
    set: &SampleSet,
    aperture: usize,
    models: &[ModelKind],
    options: &AnalysisOptions,
) -> Result<ApertureAnalysis> {
    let radius = aperture_radius(set, aperture)?;
    let samples = set.eta(aperture);
    let w_lt = long_term_width(set).ok();
    let fits = models
        .iter()
        .map(|&kind| {
            let model = build_model(set, aperture, kind, options);
            let ks = match &model {
                Ok(m) => ks_statistic(&samples, m),
                Err(e) => Err(Error::ModelInapplicable(e.to_string())),
            };
            ModelFit { kind, model, ks }
        })
        .collect();
    Ok(ApertureAnalysis { index: aperture, radius, relative_radius: w_lt.map(|w| radius / w), fits })
}

fn csv_text(s: &str) -> String {
    let one_line = s.replace(['\n', '\r'], " ");
    if one_line.contains([',', '"']) {
        format!("\"{}\"", one_line.replace('"', "\"\""))
    } else {
        one_line
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// KS distance per aperture and model. Models that could not be built
/// give `NA` and their reason in the `notes` column.
pub fn ks_csv(rows: &[ApertureAnalysis], models: &[ModelKind]) -> String {
    let mut out = String::from("aperture,radius_m,radius_over_wlt");
    for m in models {
        let _ = write!(out, ",ks_{}", m.name().replace('-', "_"));
    }
    out.push_str(",notes\n");
    for row in rows {
        let _ = write!(out, "{},{},{}", row.index, row.radius, opt(row.relative_radius));
        let mut notes = Vec::new();
        for m in models {
            match row.fits.iter().find(|f| f.kind == *m).map(|f| &f.ks) {
                Some(Ok(ks)) => {
                    let _ = write!(out, ",{}", ks.d);
                }
                Some(Err(e)) => {
                    out.push_str(",NA");
                    notes.push(format!("{}: {e}", m.name()));
                }
                None => out.push_str(",NA"),
            }
        }
        let _ = writeln!(out, ",{}", csv_text(&notes.join("; ")));
    }
    out
}

/// One row per aperture and model: label, fitted moments and status.
pub fn models_csv(rows: &[ApertureAnalysis]) -> String {
    let mut out = String::from("aperture,model,family,label,m1,m2,normalization,status\n");
    for row in rows {
        for fit in &row.fits {
            match &fit.model {
                Ok(m) => {
                    let (m1, m2) = m.moments();
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{},ok",
                        row.index,
                        fit.kind.name(),
                        m.family(),
                        fit.kind.label(),
                        m1,
                        m2,
                        m.normalization()
                    );
                }
                Err(e) => {
                    let _ = writeln!(
                        out,
                        "{},{},NA,{},NA,NA,NA,{}",
                        row.index,
                        fit.kind.name(),
                        fit.kind.label(),
                        csv_text(&format!("NA: {e}"))
                    );
                }
            }
        }
    }
    out
}

/// Density and CDF of the simulated data and of every fitted model on a
/// uniform grid of `points` transmittance values in `[0, 1]`.
pub fn curves_csv(set: &SampleSet, row: &ApertureAnalysis, points: usize) -> Result<String> {
    let samples = set.eta(row.index);
    let data = empirical_pdt(&samples)?;
    let mut out = String::from("eta,data_density,data_cdf");
    for fit in &row.fits {
        let name = fit.kind.name().replace('-', "_");
        let _ = write!(out, ",{name}_density,{name}_cdf");
    }
    out.push('\n');
    let n = points.max(2);
    for i in 0..n {
        let eta = i as f64 / (n - 1) as f64;
        let _ = write!(out, "{eta},{},{}", data.density(eta), data.cdf(eta));
        for fit in &row.fits {
            match &fit.model {
                Ok(m) => {
                    let _ = write!(out, ",{},{}", m.density(eta), m.cdf(eta));
                }
                Err(_) => out.push_str(",NA,NA"),
            }
        }
        out.push('\n');
    }
    Ok(out)
}

/// Conditional moments of every aperture on [`offset_grid`].
pub fn conditional_csv(set: &SampleSet) -> String {
    let mut out = String::from("aperture,r0_m,m1,m2,status\n");
    for a in 0..set.apertures().len() {
        match conditional_table(set, a) {
            Ok(t) => {
                for k in 0..t.offsets.len() {
                    let _ = writeln!(out, "{a},{},{},{},ok", t.offsets[k], t.m1[k], t.m2[k]);
                }
            }
            Err(e) => {
                let _ = writeln!(out, "{a},NA,NA,NA,{}", csv_text(&format!("NA: {e}")));
            }
        }
    }
    out
}

/// Gaussianity, correlation and semiaxis statistics of the ensemble.
#[derive(Debug)]
pub struct BeamStatistics {
    pub long_term_width: Result<f64>,
    pub wandering_std: Result<f64>,
    pub centroid_x: Result<MomentSummary>,
    pub centroid_y: Result<MomentSummary>,
    /// Per aperture: `(radius, Pearson(r0, η), Pearson(r0, η_tracked))`.
    pub deflection_correlation: Vec<(f64, Result<f64>, Result<f64>)>,
    /// Pearson(r0, W_r) with the tangential-frame width.
    pub tangential_correlation: Result<f64>,
    /// Pearson(r0, width along r0).
    pub radial_correlation: Result<f64>,
    pub theta_c: Result<MomentSummary>,
    pub theta_s: Result<MomentSummary>,
    pub theta_ellipse: Result<crate::stats::CovarianceEllipse>,
}

fn width_correlation(set: &SampleSet, f: fn(&crate::sampling::SampleRecord) -> Result<(f64, f64)>) -> Result<f64> {
    let pairs: Vec<(f64, f64)> = set.records.iter().filter_map(|r| f(r).ok()).collect();
    let (w, r): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    pearson(&r, &w)
}

pub fn beam_statistics(set: &SampleSet) -> BeamStatistics {
    let xs: Vec<f64> = set.records.iter().map(|r| r.x0).collect();
    let ys: Vec<f64> = set.records.iter().map(|r| r.y0).collect();
    let r0: Vec<f64> = set.records.iter().map(|r| r.r0()).collect();
    let deflection_correlation = set
        .apertures()
        .iter()
        .enumerate()
        .map(|(a, radius)| (*radius, pearson(&r0, &set.eta(a)), pearson(&r0, &set.eta_tracked(a))))
        .collect();
    let (t1, t2) = theta_values(&set.records, set.config.beam.w0);
    let rotated = theta_rotation(&t1, &t2);
    let (theta_c, theta_s) = match &rotated {
        Ok((c, s)) => (moment_summary(c), moment_summary(s)),
        Err(e) => (Err(Error::InvalidInput(e.to_string())), Err(Error::InvalidInput(e.to_string()))),
    };
    BeamStatistics {
        long_term_width: long_term_width(set),
        wandering_std: wandering_variance(set).map(f64::sqrt),
        centroid_x: moment_summary(&xs),
        centroid_y: moment_summary(&ys),
        deflection_correlation,
        tangential_correlation: width_correlation(set, tangential_width),
        radial_correlation: width_correlation(set, radial_width),
        theta_c,
        theta_s,
        theta_ellipse: covariance_ellipse(&t1, &t2),
    }
}

fn summary_row(out: &mut String, name: &str, s: &Result<MomentSummary>) {
    match s {
        Ok(s) => {
            let _ = writeln!(out, "{name},{},{},{},{},ok", s.mean, s.variance, s.skewness, s.excess_kurtosis);
        }
        Err(e) => {
            let _ = writeln!(out, "{name},NA,NA,NA,NA,{}", csv_text(&format!("NA: {e}")));
        }
    }
}

fn value<T: ToString>(r: &Result<T>) -> String {
    r.as_ref().map_or_else(|_| "NA".to_string(), |v| v.to_string())
}

/// Moment summaries of the centroid coordinates and of the rotated
/// log-width variables.
pub fn gaussianity_csv(stats: &BeamStatistics) -> String {
    let mut out = String::from("variable,mean,variance,skewness,excess_kurtosis,status\n");
    summary_row(&mut out, "x0", &stats.centroid_x);
    summary_row(&mut out, "y0", &stats.centroid_y);
    summary_row(&mut out, "theta_c", &stats.theta_c);
    summary_row(&mut out, "theta_s", &stats.theta_s);
    out
}

/// Pearson coefficients between the deflection distance and the
/// transmittance, per aperture.
pub fn correlation_csv(stats: &BeamStatistics) -> String {
    let w_lt = stats.long_term_width.as_ref().ok().copied();
    let mut out = String::from("radius_m,radius_over_wlt,pearson_r0_eta,pearson_r0_eta_tracked\n");
    for (radius, untracked, tracked) in &stats.deflection_correlation {
        let _ = writeln!(
            out,
            "{radius},{},{},{}",
            opt(w_lt.map(|w| radius / w)),
            value(untracked),
            value(tracked)
        );
    }
    out
}

/// Scalar ensemble statistics as `quantity,value` pairs.
pub fn ensemble_csv(stats: &BeamStatistics) -> String {
    let mut out = String::from("quantity,value\n");
    let _ = writeln!(out, "long_term_width_m,{}", value(&stats.long_term_width));
    let _ = writeln!(out, "wandering_std_m,{}", value(&stats.wandering_std));
    let _ = writeln!(out, "pearson_r0_tangential_width,{}", value(&stats.tangential_correlation));
    let _ = writeln!(out, "pearson_r0_radial_width,{}", value(&stats.radial_correlation));
    if let Ok(e) = &stats.theta_ellipse {
        let _ = writeln!(out, "theta_center_1,{}", e.center[0]);
        let _ = writeln!(out, "theta_center_2,{}", e.center[1]);
        let _ = writeln!(out, "theta_cov_11,{}", e.covariance[0][0]);
        let _ = writeln!(out, "theta_cov_12,{}", e.covariance[0][1]);
        let _ = writeln!(out, "theta_cov_22,{}", e.covariance[1][1]);
    } else {
        out.push_str("theta_center_1,NA\ntheta_center_2,NA\ntheta_cov_11,NA\ntheta_cov_12,NA\ntheta_cov_22,NA\n");
    }
    out
}

/// Level-4 covariance ellipse contour of the log-width variables.
pub fn ellipse_csv(stats: &BeamStatistics, points: usize) -> String {
    let mut out = String::from("theta1,theta2\n");
    if let Ok(e) = &stats.theta_ellipse {
        for p in e.contour(points) {
            let _ = writeln!(out, "{},{}", p[0], p[1]);
        }
    }
    out
}

/// The log-width samples `(Θ1, Θ2)` of every record.
pub fn theta_csv(set: &SampleSet) -> String {
    let (t1, t2) = theta_values(&set.records, set.config.beam.w0);
    let mut out = String::from("theta1,theta2\n");
    for (a, b) in t1.iter().zip(&t2) {
        let _ = writeln!(out, "{a},{b}");
    }
    out
}

/// All analysis tables for `set` as `(file name, contents)` pairs.
pub fn analyze(set: &SampleSet, models: &[ModelKind], options: &AnalysisOptions) -> Result<Vec<(String, String)>> {
    if set.records.is_empty() {
        return Err(Error::InvalidInput("sample set has no records".into()));
    }
    let rows: Vec<ApertureAnalysis> = (0..set.apertures().len())
        .map(|a| analyze_aperture(set, a, models, options))
        .collect::<Result<_>>()?;
    let mut files = vec![("ks.csv".to_string(), ks_csv(&rows, models)), ("models.csv".to_string(), models_csv(&rows))];
    for row in &rows {
        files.push((format!("pdt_aperture{}.csv", row.index), curves_csv(set, row, options.curve_points)?));
    }
    let stats = beam_statistics(set);
    files.push(("gaussianity.csv".into(), gaussianity_csv(&stats)));
    files.push(("correlation.csv".into(), correlation_csv(&stats)));
    files.push(("ensemble.csv".into(), ensemble_csv(&stats)));
    files.push(("theta.csv".into(), theta_csv(set)));
    files.push(("theta_ellipse.csv".into(), ellipse_csv(&stats, 181)));
    if !set.config.conditional_offsets().is_empty() {
        files.push(("conditional.csv".into(), conditional_csv(set)));
    }
    let mut summaries = String::new();
    for row in &rows {
        for fit in &row.fits {
            if let Ok(m) = &fit.model {
                let _ = writeln!(summaries, "aperture={} model={}\n{}", row.index, fit.kind.name(), m.summary());
            }
        }
    }
    files.push(("models.txt".into(), summaries));
    Ok(files)
}
