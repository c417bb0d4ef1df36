//! Self-checks of the numerical building blocks against closed forms:
//! phase-screen statistics, vacuum diffraction and aperture transmittance.

use std::fmt;

use rayon::prelude::*;

use crate::optics::{make_gaussian_beam, Propagator};
use crate::presets::preset;
use crate::rng::{stream, Domain};
use crate::sampling::{centroid, spot_matrix, transmittance};
use crate::screens::{
    build_rings, sample_fft_screen, sample_sparse_screen, sample_subharmonic_screen, GridSpec, ScreenEvaluator,
    StructureFunctionEstimator,
};
use crate::turbulence::{structure_function_theory, OpticalParams, TurbulenceParams};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Criterion {
    /// Passes when the error is at most the tolerance.
    AtMost,
    /// Passes when the error exceeds the tolerance.
    Exceeds,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub expected: f64,
    pub error: f64,
    pub tolerance: f64,
    pub criterion: Criterion,
    /// Informational checks are reported but do not decide the outcome.
    pub required: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, measured: f64, expected: f64, error: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            measured,
            expected,
            error,
            tolerance,
            criterion: Criterion::AtMost,
            required: true,
        }
    }

    /// The same check, reported without deciding the outcome.
    pub fn informational(mut self) -> Self {
        self.required = false;
        self
    }

    pub fn passed(&self) -> bool {
        match self.criterion {
            Criterion::AtMost => self.error <= self.tolerance,
            Criterion::Exceeds => self.error > self.tolerance,
        }
    }

    /// Distance from the threshold, positive when the check passes.
    pub fn margin(&self) -> f64 {
        match self.criterion {
            Criterion::AtMost => self.tolerance - self.error,
            Criterion::Exceeds => self.error - self.tolerance,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = match (self.required, self.passed()) {
            (false, _) => "INFO",
            (true, true) => "PASS",
            (true, false) => "FAIL",
        };
        let op = if self.criterion == Criterion::AtMost { "<=" } else { ">" };
        write!(
            f,
            "{status} {}: measured {:.6e}, expected {:.6e}, error {:.3e} {op} {:.3e}, margin {:+.3e}",
            self.name,
            self.measured,
            self.expected,
            self.error,
            self.tolerance,
            self.margin()
        )
    }
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().filter(|c| c.required).all(Check::passed)
}

fn relative(measured: f64, expected: f64) -> f64 {
    ((measured - expected) / expected).abs()
}

/// Second-moment beam radius `sqrt((Sxx + Syy) / 2)`.
fn second_moment_width(field: &crate::optics::ComplexField) -> Result<f64> {
    let r0 = centroid(field)?;
    let s = spot_matrix(field, r0)?;
    Ok((0.5 * (s[0][0] + s[1][1])).sqrt())
}

/// Vacuum width law at a quarter, half and the full path length of the
/// weak channel, for the collimated and the focused beam.
pub fn verify_vacuum(grid: Option<GridSpec>) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for name in ["weak-collimated", "weak-focused"] {
        let config = preset(name)?;
        let grid = grid.unwrap_or(config.grid);
        let mut field = make_gaussian_beam(&config.beam, &config.optics, &grid)?;
        let mut prop = Propagator::new(grid, &config.optics);
        let mut z = 0.0;
        for frac in [0.25, 0.5, 1.0] {
            let target = frac * config.path_length;
            prop.vacuum_step(&mut field, target - z);
            z = target;
            let w = second_moment_width(&field)?;
            let want = config.beam.vacuum_width(&config.optics, z);
            checks.push(Check::new(format!("vacuum width {name} z={z:.0} m"), w, want, relative(w, want), 0.01));
        }
    }
    Ok(checks)
}

pub const APERTURE_RATIOS: [f64; 4] = [0.25, 0.5, 1.0, 2.0];

/// Transmittance of the vacuum-propagated weak-channel beam against
/// `1 - exp(-2 R^2 / W^2)`.
pub fn verify_aperture(grid: Option<GridSpec>) -> Result<Vec<Check>> {
    let config = preset("weak-collimated")?;
    let grid = grid.unwrap_or(config.grid);
    let field = make_gaussian_beam(&config.beam, &config.optics, &grid)?;
    let field = crate::optics::vacuum_propagate(&field, config.path_length, &config.optics);
    let w = config.beam.vacuum_width(&config.optics, config.path_length);
    let mut checks = Vec::new();
    for ratio in APERTURE_RATIOS {
        let r = ratio * w;
        let eta = transmittance(&field, r, [0.0, 0.0])?;
        let want = -(-2.0 * ratio * ratio).exp_m1();
        checks.push(Check::new(format!("aperture R/W={ratio}"), eta, want, (eta - want).abs(), 1e-3));
    }
    Ok(checks)
}

/// Setup of the phase-screen comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct ScreenCheckOptions {
    pub screens: usize,
    pub points: usize,
    /// Grid step resolving the small separations (m).
    pub fine_step: f64,
    /// Grid step reaching the largest separations (m).
    pub coarse_step: f64,
    pub rings: usize,
    pub subharmonic_levels: usize,
    /// Screens for the subharmonic generator, which is reported only.
    pub subharmonic_screens: usize,
    pub slab_length: f64,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for ScreenCheckOptions {
    fn default() -> Self {
        ScreenCheckOptions {
            screens: 2000,
            points: 512,
            fine_step: 5e-3,
            coarse_step: 20e-3,
            rings: 1024,
            subharmonic_levels: 6,
            subharmonic_screens: 200,
            slab_length: 100.0,
            seed: 1,
            tolerance: 0.10,
        }
    }
}

pub fn screen_check_params() -> (TurbulenceParams, OpticalParams) {
    (TurbulenceParams { cn2: 1e-14, inner_scale: 1e-3, outer_scale: 80.0 }, OpticalParams { wavelength: 808e-9 })
}

/// Separations in grid steps for the fine and the coarse grid.
const FINE_MULTIPLES: [usize; 9] = [1, 2, 4, 8, 16, 32, 64, 128, 256];
const COARSE_MULTIPLES: [usize; 9] = [2, 4, 8, 16, 32, 64, 128, 256, 500];

/// One generator's structure function on both grids.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureFunctionComparison {
    pub generator: &'static str,
    /// `(separation, estimate, theory)`, sorted by separation.
    pub points: Vec<(f64, f64, f64)>,
}

impl StructureFunctionComparison {
    pub fn max_relative_error(&self) -> (f64, f64) {
        self.points
            .iter()
            .map(|(r, d, t)| (*r, relative(*d, *t)))
            .fold((0.0, 0.0), |acc, (r, e)| if e > acc.1 { (r, e) } else { acc })
    }
}

const CHUNK_SCREENS: usize = 8;

fn estimate<F>(grids: [GridSpec; 2], seps: &[Vec<f64>; 2], count: usize, make: F) -> Result<[Vec<f64>; 2]>
where
    F: Fn(usize, &GridSpec, &mut ScreenEvaluator) -> ndarray::Array2<f64> + Sync,
{
    let chunks: Vec<usize> = (0..count.div_ceil(CHUNK_SCREENS)).collect();
    let parts: Vec<Result<[StructureFunctionEstimator; 2]>> = chunks
        .par_iter()
        .map_init(
            || [ScreenEvaluator::new(grids[0]), ScreenEvaluator::new(grids[1])],
            |evals, &c| {
                let mut est = [
                    StructureFunctionEstimator::new(grids[0], &seps[0])?,
                    StructureFunctionEstimator::new(grids[1], &seps[1])?,
                ];
                for i in c * CHUNK_SCREENS..((c + 1) * CHUNK_SCREENS).min(count) {
                    for g in 0..2 {
                        let screen = make(i, &grids[g], &mut evals[g]);
                        est[g].add(&screen)?;
                    }
                }
                Ok(est)
            },
        )
        .collect();
    let mut total: Option<[StructureFunctionEstimator; 2]> = None;
    for part in parts {
        let part = part?;
        match &mut total {
            None => total = Some(part),
            Some(t) => {
                t[0].merge(&part[0])?;
                t[1].merge(&part[1])?;
            }
        }
    }
    let total = total.ok_or_else(|| Error::InvalidInput("need at least one screen".into()))?;
    Ok([total[0].estimate()?, total[1].estimate()?])
}

/// Structure functions of the sparse-spectrum, FFT and subharmonic
/// generators against theory.
pub fn compare_screen_generators(options: &ScreenCheckOptions) -> Result<Vec<StructureFunctionComparison>> {
    let (params, optics) = screen_check_params();
    let grids = [GridSpec::new(options.points, options.fine_step)?, GridSpec::new(options.points, options.coarse_step)?];
    let seps: [Vec<f64>; 2] = [
        FINE_MULTIPLES.iter().filter(|m| **m < options.points).map(|m| *m as f64 * options.fine_step).collect(),
        COARSE_MULTIPLES.iter().filter(|m| **m < options.points).map(|m| *m as f64 * options.coarse_step).collect(),
    ];
    let (lo, hi) = params.default_band();
    let rings = build_rings(&params, &optics, options.slab_length, options.rings, lo, hi)?;
    let l = options.slab_length;
    let seed = options.seed;
    let n = options.screens;
    let sparse = estimate(grids, &seps, n, |i, _, eval| {
        // the same screen is evaluated on both grids
        let screen = sample_sparse_screen(&rings, &mut stream(seed, Domain::Screens, i as u64));
        eval.evaluate(&screen)
    })?;
    let fft = estimate(grids, &seps, n, |i, g, _| {
        let index = (1u64 << 32) + 2 * i as u64 + u64::from(g.step == options.coarse_step);
        sample_fft_screen(&params, &optics, l, g, &mut stream(seed, Domain::Screens, index))
    })?;
    let sub = estimate(grids, &seps, options.subharmonic_screens.max(1), |i, g, _| {
        let index = (2u64 << 32) + 2 * i as u64 + u64::from(g.step == options.coarse_step);
        sample_subharmonic_screen(&params, &optics, l, g, options.subharmonic_levels, &mut stream(seed, Domain::Screens, index))
    })?;
    let mut out = Vec::new();
    for (generator, est) in [("sparse-spectrum", sparse), ("fft", fft), ("subharmonic", sub)] {
        let mut points = Vec::new();
        for g in 0..2 {
            for (r, d) in seps[g].iter().zip(&est[g]) {
                points.push((*r, *d, structure_function_theory(*r, &params, &optics, l)?));
            }
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        out.push(StructureFunctionComparison { generator, points });
    }
    Ok(out)
}

/// The sparse-spectrum generator must match theory everywhere in the band;
/// the plain FFT generator must miss it somewhere.
pub fn verify_screens(options: &ScreenCheckOptions) -> Result<Vec<Check>> {
    let comparisons = compare_screen_generators(options)?;
    let mut checks = Vec::new();
    for c in &comparisons {
        let (r, err) = c.max_relative_error();
        let (_, d, t) = *c.points.iter().find(|p| p.0 == r).unwrap_or(&c.points[0]);
        let mut check = Check::new(
            format!("structure function {} (worst at {r:.3} m)", c.generator),
            d,
            t,
            err,
            options.tolerance,
        );
        match c.generator {
            "fft" => check.criterion = Criterion::Exceeds,
            "subharmonic" => check.required = false,
            _ => {}
        }
        checks.push(check);
    }
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_semantics() {
        let mut c = Check::new("x", 1.0, 1.0, 0.05, 0.1);
        assert!(c.passed() && (c.margin() - 0.05).abs() < 1e-15);
        assert!(c.to_string().starts_with("PASS x"));
        c.criterion = Criterion::Exceeds;
        assert!(!c.passed() && c.to_string().starts_with("FAIL"));
        c.required = false;
        assert!(c.to_string().starts_with("INFO"));
        assert!(all_passed(&[c]));
    }

    #[test]
    fn aperture_law_on_reduced_grid() {
        let grid = GridSpec::new(256, 0.6e-3).unwrap();
        let checks = verify_aperture(Some(grid)).unwrap();
        assert_eq!(checks.len(), 4);
        for c in &checks {
            assert!(c.passed(), "{c}");
        }
    }

    #[test]
    fn small_screen_comparison_runs() {
        let options = ScreenCheckOptions { screens: 4, points: 64, rings: 64, subharmonic_levels: 1, subharmonic_screens: 2, ..Default::default() };
        let cmp = compare_screen_generators(&options).unwrap();
        assert_eq!(cmp.len(), 3);
        for c in &cmp {
            assert!(c.points.iter().all(|p| p.1 >= 0.0 && p.2 > 0.0));
            assert!(c.points.windows(2).all(|w| w[0].0 <= w[1].0));
        }
    }
}
