//! Complex fields on square grids, Gaussian sources and split-step
//! propagation.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{bin_frequency, Fft2};
use crate::sampling::ChannelConfig;
use crate::screens::{sample_sparse_screen, GridSpec, ScreenEvaluator, SpectralRings};
use crate::turbulence::OpticalParams;

/// Fraction of the launched power the absorbing boundary may remove before
/// propagation is reported as unreliable.
pub const MAX_BOUNDARY_LOSS: f64 = 0.2;

/// Transmitter beam: spot radius `w0` and wave-front radius `f0`
/// (`f64::INFINITY` for a collimated beam).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamSpec {
    pub w0: f64,
    pub f0: f64,
}

impl BeamSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.w0 > 0.0 && self.w0.is_finite()) {
            return Err(Error::config("beam.w0", "must be > 0"));
        }
        if !(self.f0 > 0.0) {
            return Err(Error::config("beam.f0", "must be > 0 or inf"));
        }
        Ok(())
    }

    pub fn rayleigh_length(&self, optics: &OpticalParams) -> f64 {
        0.5 * optics.wavenumber() * self.w0 * self.w0
    }

    /// Vacuum beam radius `W0 sqrt((1 - z/F0)^2 + (z/z_R)^2)`.
    pub fn vacuum_width(&self, optics: &OpticalParams, z: f64) -> f64 {
        let zr = self.rayleigh_length(optics);
        let focus = if self.f0.is_finite() { 1.0 - z / self.f0 } else { 1.0 };
        self.w0 * (focus * focus + (z / zr).powi(2)).sqrt()
    }
}

/// Complex amplitude on a square grid; rows are y, columns are x.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField {
    pub amplitude: Array2<Complex64>,
    pub grid: GridSpec,
    pub z: f64,
}

impl ComplexField {
    pub fn intensity(&self) -> Array2<f64> {
        self.amplitude.mapv(|u| u.norm_sqr())
    }

    /// `sum |u|^2 step^2`.
    pub fn power(&self) -> f64 {
        self.amplitude.iter().map(|u| u.norm_sqr()).sum::<f64>() * self.grid.step * self.grid.step
    }

    /// Dumps the field as interleaved (re, im) little-endian f64 pairs plus
    /// a text header.
    pub fn dump(&self, path: &Path, seed: u64) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for u in self.amplitude.iter() {
            w.write_all(&u.re.to_le_bytes())?;
            w.write_all(&u.im.to_le_bytes())?;
        }
        w.flush()?;
        crate::screens::write_header(path, &self.grid, seed, "complex f64 (re, im)", 2)
    }
}

/// Smallest allowed ratio of grid width to launched beam radius.
pub const MIN_GRID_TO_BEAM_RATIO: f64 = 7.5;

/// `u(r; 0) = sqrt(2 / (pi W0^2)) exp(-r^2/W0^2 - i k r^2 / (2 F0))`.
pub fn make_gaussian_beam(beam: &BeamSpec, optics: &OpticalParams, grid: &GridSpec) -> Result<ComplexField> {
    beam.validate()?;
    grid.validate()?;
    if beam.w0 > grid.width() / MIN_GRID_TO_BEAM_RATIO {
        return Err(Error::config(
            "beam.w0",
            format!("beam radius {} m exceeds 1/{MIN_GRID_TO_BEAM_RATIO} of the grid width {} m", beam.w0, grid.width()),
        ));
    }
    let k = optics.wavenumber();
    let norm = (2.0 / (PI * beam.w0 * beam.w0)).sqrt();
    let curvature = if beam.f0.is_finite() { k / (2.0 * beam.f0) } else { 0.0 };
    let coords = grid.coords();
    let amplitude = Array2::from_shape_fn((grid.points, grid.points), |(j, i)| {
        let r2 = coords[i] * coords[i] + coords[j] * coords[j];
        Complex64::from_polar(norm * (-r2 / (beam.w0 * beam.w0)).exp(), -curvature * r2)
    });
    Ok(ComplexField { amplitude, grid: *grid, z: 0.0 })
}

/// Angular-spectrum propagator for one grid, caching the FFT plan and the
/// most recent transfer function.
#[derive(Debug, Clone)]
pub struct Propagator {
    grid: GridSpec,
    wavenumber: f64,
    fft: Fft2,
    kappa_sq: Array2<f64>,
    cached: Option<(f64, Array2<Complex64>)>,
}

impl Propagator {
    pub fn new(grid: GridSpec, optics: &OpticalParams) -> Self {
        let n = grid.points;
        let freqs: Vec<f64> = (0..n).map(|m| bin_frequency(m, n, grid.step)).collect();
        let kappa_sq = Array2::from_shape_fn((n, n), |(r, c)| freqs[r] * freqs[r] + freqs[c] * freqs[c]);
        Self { grid, wavenumber: optics.wavenumber(), fft: Fft2::new(n), kappa_sq, cached: None }
    }

    fn ensure_transfer(&mut self, dz: f64) {
        let stale = !matches!(&self.cached, Some((d, _)) if *d == dz);
        if stale {
            let c = -dz / (2.0 * self.wavenumber);
            let h = self.kappa_sq.mapv(|k2| Complex64::from_polar(1.0, c * k2));
            self.cached = Some((dz, h));
        }
    }

    /// Multiplies the spectrum by `exp(-i dz kappa^2 / (2k))`.
    pub fn vacuum_step(&mut self, field: &mut ComplexField, dz: f64) {
        assert_eq!(field.grid, self.grid, "propagator built for a different grid");
        if dz == 0.0 {
            return;
        }
        self.ensure_transfer(dz);
        self.fft.forward(&mut field.amplitude);
        let h = &self.cached.as_ref().expect("filled above").1;
        field.amplitude.zip_mut_with(h, |u, t| *u *= t);
        self.fft.inverse(&mut field.amplitude);
        field.z += dz;
    }
}

/// Free-space propagation over `dz` (negative values propagate backwards).
pub fn vacuum_propagate(field: &ComplexField, dz: f64, optics: &OpticalParams) -> ComplexField {
    let mut out = field.clone();
    Propagator::new(field.grid, optics).vacuum_step(&mut out, dz);
    out
}

/// Multiplies the field pointwise by `exp(-i phi)`.
pub fn apply_phase(field: &mut ComplexField, phase: &Array2<f64>) -> Result<()> {
    if field.amplitude.dim() != phase.dim() {
        return Err(Error::ShapeMismatch { expected: field.amplitude.dim(), actual: phase.dim() });
    }
    field.amplitude.zip_mut_with(phase, |u, &p| *u *= Complex64::from_polar(1.0, -p));
    Ok(())
}

/// Super-Gaussian absorbing window `exp[-(r / (0.45 D))^16]`.
pub fn absorbing_mask(grid: &GridSpec) -> Array2<f64> {
    let coords = grid.coords();
    let r0 = 0.45 * grid.width();
    Array2::from_shape_fn((grid.points, grid.points), |(j, i)| {
        let r2 = (coords[i] * coords[i] + coords[j] * coords[j]) / (r0 * r0);
        (-r2.powi(8)).exp()
    })
}

/// Everything needed to push realizations through one channel; built once
/// per worker and reused across samples.
#[derive(Debug, Clone)]
pub struct ChannelPropagator {
    source: ComplexField,
    propagator: Propagator,
    evaluator: ScreenEvaluator,
    rings: SpectralRings,
    mask: Option<Array2<f64>>,
    slabs: usize,
    slab_length: f64,
    screen_buf: Array2<f64>,
}

impl ChannelPropagator {
    pub fn new(config: &ChannelConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.grid;
        let source = make_gaussian_beam(&config.beam, &config.optics, &grid)?;
        let slab_length = config.path_length / config.screens as f64;
        let rings = config.spectral_rings()?;
        Ok(Self {
            source,
            propagator: Propagator::new(grid, &config.optics),
            evaluator: ScreenEvaluator::new(grid),
            rings,
            mask: config.absorbing_boundary.then(|| absorbing_mask(&grid)),
            slabs: config.screens,
            slab_length,
            screen_buf: Array2::zeros((grid.points, grid.points)),
        })
    }

    pub fn source(&self) -> &ComplexField {
        &self.source
    }

    /// Split-step propagation to the receiver: per slab, half a slab of
    /// vacuum, the phase screen, another half slab, then the optional
    /// absorbing window. Screens are drawn from `rng` in slab order.
    pub fn propagate<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<ComplexField> {
        let mut field = self.source.clone();
        let launched = field.power();
        let half = 0.5 * self.slab_length;
        for _ in 0..self.slabs {
            self.propagator.vacuum_step(&mut field, half);
            let screen = sample_sparse_screen(&self.rings, rng);
            self.evaluator.evaluate_into(&screen, &mut self.screen_buf);
            apply_phase(&mut field, &self.screen_buf)?;
            self.propagator.vacuum_step(&mut field, half);
            if let Some(mask) = &self.mask {
                field.amplitude.zip_mut_with(mask, |u, &m| *u *= m);
                let lost = 1.0 - field.power() / launched;
                if lost > MAX_BOUNDARY_LOSS {
                    return Err(Error::Propagation {
                        sample: None,
                        reason: format!(
                            "absorbing boundary removed {:.1}% of the power at z = {:.1} m; use a wider grid",
                            100.0 * lost,
                            field.z
                        ),
                    });
                }
            }
        }
        Ok(field)
    }
}

/// Propagates one realization of `config` drawn from `rng`.
pub fn propagate_channel<R: Rng + ?Sized>(config: &ChannelConfig, rng: &mut R) -> Result<ComplexField> {
    ChannelPropagator::new(config)?.propagate(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{centroid, spot_matrix};

    fn optics() -> OpticalParams {
        OpticalParams::new(809e-9).unwrap()
    }

    fn second_moment_width(f: &ComplexField) -> f64 {
        let r0 = centroid(f).unwrap();
        let s = spot_matrix(f, r0).unwrap();
        (0.5 * (s[0][0] + s[1][1])).sqrt()
    }

    #[test]
    fn gaussian_source_properties() {
        let g = GridSpec::new(256, 0.5e-3).unwrap();
        let beam = BeamSpec { w0: 0.01, f0: f64::INFINITY };
        let f = make_gaussian_beam(&beam, &optics(), &g).unwrap();
        assert!((f.power() - 1.0).abs() < 1e-6);
        assert!(f.amplitude.iter().all(|u| u.im == 0.0));
        assert!((second_moment_width(&f) / 0.01 - 1.0).abs() < 0.005);
        let too_big = BeamSpec { w0: 0.02, f0: f64::INFINITY };
        assert!(matches!(make_gaussian_beam(&too_big, &optics(), &g), Err(Error::Config { .. })));
    }

    #[test]
    fn zero_step_is_identity_and_power_is_conserved() {
        let g = GridSpec::new(128, 1e-3).unwrap();
        let beam = BeamSpec { w0: 0.01, f0: 500.0 };
        let f = make_gaussian_beam(&beam, &optics(), &g).unwrap();
        let same = vacuum_propagate(&f, 0.0, &optics());
        assert_eq!(same, f);
        let moved = vacuum_propagate(&f, 300.0, &optics());
        assert!((moved.power() / f.power() - 1.0).abs() < 1e-9);
        let back = vacuum_propagate(&moved, -300.0, &optics());
        for (a, b) in back.amplitude.iter().zip(f.amplitude.iter()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn vacuum_width_law_both_focus_modes() {
        let g = GridSpec::new(256, 0.6e-3).unwrap();
        let o = optics();
        for f0 in [f64::INFINITY, 1000.0] {
            let beam = BeamSpec { w0: 0.015, f0 };
            let src = make_gaussian_beam(&beam, &o, &g).unwrap();
            for z in [250.0, 500.0, 1000.0] {
                let f = vacuum_propagate(&src, z, &o);
                let w = second_moment_width(&f);
                let want = beam.vacuum_width(&o, z);
                assert!((w / want - 1.0).abs() < 0.01, "F0={f0} z={z}: {w} vs {want}");
            }
        }
    }

    #[test]
    fn apply_phase_properties() {
        let g = GridSpec::new(64, 1e-3).unwrap();
        let beam = BeamSpec { w0: 0.005, f0: f64::INFINITY };
        let f = make_gaussian_beam(&beam, &optics(), &g).unwrap();
        let mut a = f.clone();
        apply_phase(&mut a, &Array2::zeros((64, 64))).unwrap();
        assert_eq!(a, f);
        let mut b = f.clone();
        apply_phase(&mut b, &Array2::from_elem((64, 64), 0.7)).unwrap();
        assert!((b.power() - f.power()).abs() < 1e-12);
        for (x, y) in b.intensity().iter().zip(f.intensity().iter()) {
            assert!((x - y).abs() < 1e-12 * y.max(1e-300));
        }
        assert!(matches!(apply_phase(&mut b, &Array2::zeros((32, 32))), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn linear_phase_tilts_the_beam() {
        // exp(-i kappa.r) steers the beam towards -kappa: after dz the centroid
        // sits at -kappa dz / k.
        let g = GridSpec::new(256, 0.5e-3).unwrap();
        let o = optics();
        let beam = BeamSpec { w0: 0.01, f0: f64::INFINITY };
        let mut f = make_gaussian_beam(&beam, &o, &g).unwrap();
        let kappa = 2.0 * PI / g.width() * 4.0;
        let coords = g.coords();
        let phase = Array2::from_shape_fn((256, 256), |(_, i)| kappa * coords[i]);
        apply_phase(&mut f, &phase).unwrap();
        let dz = 200.0;
        let out = vacuum_propagate(&f, dz, &o);
        let r0 = centroid(&out).unwrap();
        let want = -kappa * dz / o.wavenumber();
        assert!((r0[0] / want - 1.0).abs() < 1e-3, "{} vs {want}", r0[0]);
        assert!(r0[1].abs() < 1e-9);
    }

    #[test]
    fn mask_is_flat_in_the_centre_and_absorbing_at_the_edge() {
        let g = GridSpec::new(128, 1e-3).unwrap();
        let m = absorbing_mask(&g);
        assert!((m[[64, 64]] - 1.0).abs() < 1e-12);
        assert!(m[[0, 0]] < 1e-6);
    }
}
