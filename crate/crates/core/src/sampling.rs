//! Monte Carlo sampling of channel realizations: configuration, per-sample
//! observables, the parallel driver and sample-set persistence.

use std::f64::consts::PI;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::{BeamSpec, ChannelPropagator, ComplexField};
use crate::rng::sample_stream;
use crate::screens::{build_rings, GridSpec, SpectralRings};
use crate::turbulence::{OpticalParams, TurbulenceParams};

pub mod io;

pub use io::{export_csv, load_samples, save_samples, FORMAT_VERSION};

/// Number of leading samples used to resolve relative apertures and the
/// conditional offset range.
pub const PILOT_SAMPLES: usize = 128;
/// Directions averaged for each displaced-aperture offset.
pub const CONDITIONAL_DIRECTIONS: usize = 8;
/// Largest tolerated fraction of displaced apertures falling off the grid.
pub const MAX_SKIPPED_FRACTION: f64 = 0.01;

const BLOCK_SAMPLES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingSpec {
    pub count: usize,
    /// Defaults to `1 / (15 L0)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_min: Option<f64>,
    /// Defaults to `2 / l0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<f64>,
}

impl Default for RingSpec {
    fn default() -> Self {
        Self { count: 1024, k_min: None, k_max: None }
    }
}

/// Displaced-aperture sampling used for conditional moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionalSpec {
    /// Number of equally spaced offsets in `[0, max_offset]`; 0 disables.
    pub offsets: usize,
    /// Largest offset (m). Resolved from the pilot run as
    /// `max_offset_wander_units * sigma_bw` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_offset: Option<f64>,
    pub max_offset_wander_units: f64,
}

impl Default for ConditionalSpec {
    fn default() -> Self {
        Self { offsets: 23, max_offset: None, max_offset_wander_units: 5.5 }
    }
}

/// Full description of one channel scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    #[serde(default)]
    pub name: String,
    pub beam: BeamSpec,
    pub turbulence: TurbulenceParams,
    pub optics: OpticalParams,
    /// Receiver distance `z_ap` (m).
    pub path_length: f64,
    pub grid: GridSpec,
    pub screens: usize,
    #[serde(default)]
    pub rings: RingSpec,
    /// Aperture radii (m). May be left empty when `relative_apertures` is
    /// given; the run then fills it in.
    #[serde(default)]
    pub aperture_radii: Vec<f64>,
    /// Aperture radii in units of the long-term beam width.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub relative_apertures: Vec<f64>,
    pub samples: usize,
    pub master_seed: u64,
    #[serde(default = "default_true")]
    pub tracked: bool,
    #[serde(default)]
    pub absorbing_boundary: bool,
    #[serde(default)]
    pub conditional: ConditionalSpec,
    /// Set for reduced-resolution runs so outputs can be labeled.
    #[serde(default)]
    pub desk_scale: bool,
}

fn default_true() -> bool {
    true
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        self.beam.validate()?;
        self.turbulence.validate()?;
        self.grid.validate()?;
        if !(self.optics.wavelength > 0.0 && self.optics.wavelength.is_finite()) {
            return Err(Error::config("optics.wavelength", "must be > 0"));
        }
        if !(self.path_length > 0.0 && self.path_length.is_finite()) {
            return Err(Error::config("path_length", "must be > 0"));
        }
        if self.screens == 0 {
            return Err(Error::config("screens", "need at least one phase screen"));
        }
        if self.rings.count == 0 {
            return Err(Error::config("rings.count", "need at least one ring"));
        }
        if self.samples == 0 {
            return Err(Error::config("samples", "must be >= 1"));
        }
        if self.aperture_radii.is_empty() && self.relative_apertures.is_empty() {
            return Err(Error::config("aperture_radii", "no apertures configured"));
        }
        let hw = self.grid.half_width();
        for &r in &self.aperture_radii {
            if !(r > 0.0 && r < hw) {
                return Err(Error::config("aperture_radii", format!("radius {r} m must lie in (0, {hw}) m")));
            }
        }
        if self.relative_apertures.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::config("relative_apertures", "values must be > 0"));
        }
        if let Some(d) = self.conditional.max_offset {
            if !(d >= 0.0 && d < hw) {
                return Err(Error::config("conditional.max_offset", "must lie in [0, grid half-width)"));
            }
        }
        if !(self.conditional.max_offset_wander_units > 0.0) {
            return Err(Error::config("conditional.max_offset_wander_units", "must be > 0"));
        }
        Ok(())
    }

    pub fn slab_length(&self) -> f64 {
        self.path_length / self.screens as f64
    }

    pub fn spectral_rings(&self) -> Result<SpectralRings> {
        let (lo, hi) = self.turbulence.default_band();
        build_rings(
            &self.turbulence,
            &self.optics,
            self.slab_length(),
            self.rings.count,
            self.rings.k_min.unwrap_or(lo),
            self.rings.k_max.unwrap_or(hi),
        )
    }

    /// True when the run must first estimate beam statistics to fix the
    /// aperture radii or the conditional offsets.
    pub fn needs_pilot(&self) -> bool {
        self.aperture_radii.is_empty() || (self.tracked && self.conditional.offsets > 0 && self.conditional.max_offset.is_none())
    }

    pub fn conditional_offsets(&self) -> Vec<f64> {
        let k = if self.tracked { self.conditional.offsets } else { 0 };
        let d = self.conditional.max_offset.unwrap_or(0.0);
        match k {
            0 => Vec::new(),
            1 => vec![0.0],
            _ => (0..k).map(|i| d * i as f64 / (k - 1) as f64).collect(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("config serialization: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        Ok(cfg)
    }
}

/// Observables of one channel realization.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub index: u64,
    pub eta: Vec<f64>,
    pub x0: f64,
    pub y0: f64,
    pub sxx: f64,
    pub sxy: f64,
    pub syy: f64,
    pub eta_tracked: Vec<f64>,
    pub w1sq: f64,
    pub w2sq: f64,
    /// Direction-averaged transmittance of apertures displaced from the
    /// centroid, `[aperture][offset]` flattened aperture-major.
    pub cond_eta: Vec<f64>,
    /// Direction average of the squared displaced transmittance.
    pub cond_eta_sq: Vec<f64>,
}

impl SampleRecord {
    pub fn r0(&self) -> f64 {
        self.x0.hypot(self.y0)
    }

    pub fn spot(&self) -> [[f64; 2]; 2] {
        [[self.sxx, self.sxy], [self.sxy, self.syy]]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    /// Resolved configuration (absolute apertures and offsets filled in).
    pub config: ChannelConfig,
    pub records: Vec<SampleRecord>,
    /// Ensemble mean of `|u|^2` on the receiver grid.
    pub mean_intensity: Array2<f64>,
    /// Ensemble mean of `|u(r + r0)|^2` (centroid frame).
    pub centroid_mean_intensity: Array2<f64>,
    pub conditional_attempted: u64,
    pub conditional_skipped: u64,
}

impl SampleSet {
    pub fn eta(&self, aperture: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.eta[aperture]).collect()
    }

    pub fn eta_tracked(&self, aperture: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.eta_tracked[aperture]).collect()
    }

    pub fn apertures(&self) -> &[f64] {
        &self.config.aperture_radii
    }
}

/// Per-cell powers `|u|^2 step^2` with row prefix sums for fast disc
/// integration.
#[derive(Clone, Debug)]
pub struct IntensityMap {
    grid: GridSpec,
    cells: Array2<f64>,
    prefix: Array2<f64>,
    coords: Vec<f64>,
}

const SUBCELL: [f64; 4] = [-0.375, -0.125, 0.125, 0.375];

impl IntensityMap {
    pub fn from_field(field: &ComplexField) -> Self {
        let a = field.grid.step * field.grid.step;
        Self::from_cell_powers(field.amplitude.mapv(|u| u.norm_sqr() * a), field.grid)
    }

    /// `cells[[j, i]]` is the power in the cell at row `j` (y), column `i` (x).
    pub fn from_cell_powers(cells: Array2<f64>, grid: GridSpec) -> Self {
        let n = grid.points;
        assert_eq!(cells.dim(), (n, n));
        let mut prefix = Array2::zeros((n, n + 1));
        for j in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                acc += cells[[j, i]];
                prefix[[j, i + 1]] = acc;
            }
        }
        Self { grid, cells, prefix, coords: grid.coords() }
    }

    pub fn cells(&self) -> &Array2<f64> {
        &self.cells
    }

    pub fn total(&self) -> f64 {
        (0..self.grid.points).map(|j| self.prefix[[j, self.grid.points]]).sum()
    }

    fn fits(&self, cx: f64, cy: f64, radius: f64) -> bool {
        let hw = self.grid.half_width() * (1.0 + 1e-12);
        cx - radius >= -hw && cx + radius <= hw && cy - radius >= -hw && cy + radius <= hw
    }

    /// Power inside the disc of `radius` around `(cx, cy)`. Cells crossing
    /// the rim are weighted by a 4x4 supersampled inside fraction.
    pub fn disc_power(&self, cx: f64, cy: f64, radius: f64) -> Result<f64> {
        if !(radius >= 0.0) {
            return Err(Error::InvalidInput(format!("aperture radius must be >= 0, got {radius}")));
        }
        if !self.fits(cx, cy, radius) {
            return Err(Error::InvalidInput(format!(
                "aperture of radius {radius} m at ({cx}, {cy}) m leaves the grid of half-width {} m",
                self.grid.half_width()
            )));
        }
        Ok(self.disc_power_clipped(cx, cy, radius))
    }

    /// As [`disc_power`](Self::disc_power), counting parts of the disc
    /// outside the grid as empty.
    pub fn disc_power_clipped(&self, cx: f64, cy: f64, radius: f64) -> f64 {
        if radius <= 0.0 {
            return 0.0;
        }
        let n = self.grid.points as isize;
        let h = self.grid.step;
        let half = 0.5 * h;
        let r2 = radius * radius;
        let jc = self.grid.index_of(cy);
        let ic = self.grid.index_of(cx);
        let span = (radius / h).ceil() as isize + 1;
        let j_lo = ((jc.floor() as isize) - span).max(0);
        let j_hi = ((jc.ceil() as isize) + span).min(n - 1);
        let mut total = 0.0;
        for j in j_lo..=j_hi {
            let dy = (self.coords[j as usize] - cy).abs();
            let near_y = (dy - half).max(0.0);
            if near_y * near_y >= r2 {
                continue;
            }
            let far_y = dy + half;
            // cells with |dx| <= inner are fully inside, |dx| >= outer fully out
            let inner = if far_y * far_y < r2 { (r2 - far_y * far_y).sqrt() - half } else { -1.0 };
            let outer = (r2 - near_y * near_y).sqrt() + half;
            let i_out_lo = ((ic - outer / h).floor() as isize).max(0);
            let i_out_hi = ((ic + outer / h).ceil() as isize).min(n - 1);
            if i_out_lo > i_out_hi {
                continue;
            }
            let (mut i_in_lo, mut i_in_hi) = (1isize, 0isize);
            if inner >= 0.0 {
                i_in_lo = ((ic - inner / h).ceil() as isize).max(i_out_lo);
                i_in_hi = ((ic + inner / h).floor() as isize).min(i_out_hi);
                if i_in_lo <= i_in_hi {
                    total += self.prefix[[j as usize, i_in_hi as usize + 1]] - self.prefix[[j as usize, i_in_lo as usize]];
                }
            }
            let y = self.coords[j as usize] - cy;
            for i in i_out_lo..=i_out_hi {
                if i >= i_in_lo && i <= i_in_hi {
                    continue;
                }
                let x = self.coords[i as usize] - cx;
                let frac = cell_fraction(x, y, h, r2);
                if frac > 0.0 {
                    total += frac * self.cells[[j as usize, i as usize]];
                }
            }
        }
        total
    }

    /// Intensity-weighted centroid and spot matrix `4 <(r - r0)(r - r0)^T>`.
    pub fn moments(&self) -> Result<([f64; 2], [[f64; 2]; 2])> {
        let p = self.total();
        if !(p > 0.0) {
            return Err(Error::InvalidInput("field carries no power".into()));
        }
        let (mut sx, mut sy) = (0.0, 0.0);
        for ((j, i), &c) in self.cells.indexed_iter() {
            sx += c * self.coords[i];
            sy += c * self.coords[j];
        }
        let r0 = [sx / p, sy / p];
        let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
        for ((j, i), &c) in self.cells.indexed_iter() {
            let dx = self.coords[i] - r0[0];
            let dy = self.coords[j] - r0[1];
            xx += c * dx * dx;
            xy += c * dx * dy;
            yy += c * dy * dy;
        }
        let s = 4.0 / p;
        Ok((r0, [[s * xx, s * xy], [s * xy, s * yy]]))
    }
}

fn cell_fraction(x: f64, y: f64, h: f64, r2: f64) -> f64 {
    let mut inside = 0;
    for oy in SUBCELL {
        let yy = y + oy * h;
        for ox in SUBCELL {
            let xx = x + ox * h;
            if xx * xx + yy * yy <= r2 {
                inside += 1;
            }
        }
    }
    inside as f64 / 16.0
}

/// Fraction of power inside the aperture, clamped to `[0, 1]`.
pub fn transmittance(field: &ComplexField, aperture_radius: f64, center: [f64; 2]) -> Result<f64> {
    let map = IntensityMap::from_field(field);
    Ok(map.disc_power(center[0], center[1], aperture_radius)?.clamp(0.0, 1.0))
}

/// Intensity-weighted centroid, normalized by total power.
pub fn centroid(field: &ComplexField) -> Result<[f64; 2]> {
    Ok(IntensityMap::from_field(field).moments()?.0)
}

/// Spot-shape matrix `4 \int (r - r0)(r - r0)^T I / P` about `r0`.
pub fn spot_matrix(field: &ComplexField, r0: [f64; 2]) -> Result<[[f64; 2]; 2]> {
    let map = IntensityMap::from_field(field);
    let p = map.total();
    if !(p > 0.0) {
        return Err(Error::InvalidInput("field carries no power".into()));
    }
    let coords = field.grid.coords();
    let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
    for ((j, i), &c) in map.cells().indexed_iter() {
        let dx = coords[i] - r0[0];
        let dy = coords[j] - r0[1];
        xx += c * dx * dx;
        xy += c * dx * dy;
        yy += c * dy * dy;
    }
    let s = 4.0 / p;
    Ok([[s * xx, s * xy], [s * xy, s * yy]])
}

/// Squared ellipse semiaxes from the spot matrix. `W1^2` takes the `+`
/// root when `Sxy >= 0` and the `-` root otherwise.
pub fn semiaxes(s: [[f64; 2]; 2]) -> (f64, f64) {
    let (sxx, sxy, syy) = (s[0][0], s[0][1], s[1][1]);
    let mean = 0.5 * (sxx + syy);
    let disc = 0.5 * ((sxx - syy).powi(2) + 4.0 * sxy * sxy).sqrt();
    if sxy >= 0.0 {
        (mean + disc, mean - disc)
    } else {
        (mean - disc, mean + disc)
    }
}

/// Orientation of the `W1` semiaxis with respect to the x axis, in `[0, pi)`.
pub fn semiaxis_orientation(s: [[f64; 2]; 2]) -> f64 {
    let (w1sq, _) = semiaxes(s);
    let (sxx, sxy) = (s[0][0], s[0][1]);
    // eigenvector (sxy, w1sq - sxx), or the axis itself when S is diagonal
    let angle = if sxy.abs() > 0.0 {
        (w1sq - sxx).atan2(sxy)
    } else if (w1sq - sxx).abs() <= (w1sq - s[1][1]).abs() {
        0.0
    } else {
        0.5 * PI
    };
    angle.rem_euclid(PI)
}

/// Adds `|u(r + shift)|^2` (bilinear interpolation, zero outside) to `acc`.
fn accumulate_shifted(acc: &mut Array2<f64>, intensity: &Array2<f64>, shift: [f64; 2], step: f64) {
    let n = intensity.nrows();
    let sx = shift[0] / step;
    let sy = shift[1] / step;
    let (fx, fy) = (sx.floor(), sy.floor());
    let (ax, ay) = (sx - fx, sy - fy);
    let (ox, oy) = (fx as isize, fy as isize);
    let get = |j: isize, i: isize| -> f64 {
        if j < 0 || i < 0 || j >= n as isize || i >= n as isize {
            0.0
        } else {
            intensity[[j as usize, i as usize]]
        }
    };
    for j in 0..n as isize {
        for i in 0..n as isize {
            let (jj, ii) = (j + oy, i + ox);
            let v = (1.0 - ay) * ((1.0 - ax) * get(jj, ii) + ax * get(jj, ii + 1))
                + ay * ((1.0 - ax) * get(jj + 1, ii) + ax * get(jj + 1, ii + 1));
            acc[[j as usize, i as usize]] += v;
        }
    }
}

struct BlockResult {
    records: Vec<SampleRecord>,
    intensity: Array2<f64>,
    centroid_intensity: Array2<f64>,
    attempted: u64,
    skipped: u64,
}

fn observe(
    config: &ChannelConfig,
    offsets: &[f64],
    index: u64,
    field: &ComplexField,
    counts: &mut (u64, u64),
) -> Result<SampleRecord> {
    let map = IntensityMap::from_field(field);
    let (r0, s) = map.moments().map_err(|e| Error::Propagation { sample: Some(index), reason: e.to_string() })?;
    let (w1sq, w2sq) = semiaxes(s);
    let mut eta = Vec::with_capacity(config.aperture_radii.len());
    let mut eta_tracked = Vec::with_capacity(config.aperture_radii.len());
    let mut cond_eta = Vec::with_capacity(config.aperture_radii.len() * offsets.len());
    let mut cond_eta_sq = Vec::with_capacity(config.aperture_radii.len() * offsets.len());
    for &radius in &config.aperture_radii {
        eta.push(map.disc_power(0.0, 0.0, radius)?.clamp(0.0, 1.0));
        if !config.tracked {
            eta_tracked.push(f64::NAN);
            continue;
        }
        eta_tracked.push(map.disc_power_clipped(r0[0], r0[1], radius).clamp(0.0, 1.0));
        for &d in offsets {
            let (mut s1, mut s2, mut used) = (0.0, 0.0, 0usize);
            let directions = if d == 0.0 { 1 } else { CONDITIONAL_DIRECTIONS };
            for m in 0..directions {
                let theta = 2.0 * PI * m as f64 / CONDITIONAL_DIRECTIONS as f64;
                let (cx, cy) = (r0[0] + d * theta.cos(), r0[1] + d * theta.sin());
                counts.0 += 1;
                match map.disc_power(cx, cy, radius) {
                    Ok(p) => {
                        let e = p.clamp(0.0, 1.0);
                        s1 += e;
                        s2 += e * e;
                        used += 1;
                    }
                    Err(_) => counts.1 += 1,
                }
            }
            if used == 0 {
                cond_eta.push(f64::NAN);
                cond_eta_sq.push(f64::NAN);
            } else {
                cond_eta.push(s1 / used as f64);
                cond_eta_sq.push(s2 / used as f64);
            }
        }
    }
    Ok(SampleRecord {
        index,
        eta,
        x0: r0[0],
        y0: r0[1],
        sxx: s[0][0],
        sxy: s[0][1],
        syy: s[1][1],
        eta_tracked,
        w1sq,
        w2sq,
        cond_eta,
        cond_eta_sq,
    })
}

/// Options that do not affect results.
#[derive(Default)]
pub struct RunOptions<'a> {
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
    /// Called with (completed samples, total samples) as the run advances.
    pub progress: Option<&'a (dyn Fn(usize, usize) + Sync)>,
}

fn blocks_per_chunk(grid: &GridSpec) -> usize {
    let bytes_per_block = 16 * grid.points * grid.points;
    ((1usize << 30) / bytes_per_block).clamp(1, 64)
}

fn pairwise_sum<T, F: Fn(T, T) -> T + Copy>(mut items: Vec<T>, add: F) -> Option<T> {
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(add(a, b)),
                None => next.push(a),
            }
        }
        items = next;
    }
    items.pop()
}

fn merge_blocks(mut a: BlockResult, b: BlockResult) -> BlockResult {
    a.records.extend(b.records);
    a.intensity += &b.intensity;
    a.centroid_intensity += &b.centroid_intensity;
    a.attempted += b.attempted;
    a.skipped += b.skipped;
    a
}

/// Propagates samples `range` and reduces them in the canonical order:
/// blocks of [`BLOCK_SAMPLES`] summed sequentially, blocks within a chunk
/// combined by a fixed pairwise tree, chunks added in index order.
fn run_range(
    config: &ChannelConfig,
    template: &ChannelPropagator,
    count: usize,
    observe_records: bool,
    options: &RunOptions,
) -> Result<BlockResult> {
    let n = config.grid.points;
    let offsets = config.conditional_offsets();
    let step = config.grid.step;
    let block_count = count.div_ceil(BLOCK_SAMPLES);
    let chunk = blocks_per_chunk(&config.grid);
    let mut total: Option<BlockResult> = None;
    let mut done = 0usize;
    for first_block in (0..block_count).step_by(chunk) {
        let blocks: Vec<usize> = (first_block..(first_block + chunk).min(block_count)).collect();
        let results: Vec<Result<BlockResult>> = blocks
            .par_iter()
            .map_init(
                || template.clone(),
                |prop, &b| {
                    let mut out = BlockResult {
                        records: Vec::new(),
                        intensity: Array2::zeros((n, n)),
                        centroid_intensity: Array2::zeros((n, n)),
                        attempted: 0,
                        skipped: 0,
                    };
                    for i in b * BLOCK_SAMPLES..((b + 1) * BLOCK_SAMPLES).min(count) {
                        let mut rng = sample_stream(config.master_seed, i as u64);
                        let field = prop.propagate(&mut rng).map_err(|e| match e {
                            Error::Propagation { reason, .. } => Error::Propagation { sample: Some(i as u64), reason },
                            other => other,
                        })?;
                        let intensity = field.intensity();
                        out.intensity += &intensity;
                        if observe_records {
                            let mut counts = (0, 0);
                            let rec = observe(config, &offsets, i as u64, &field, &mut counts)?;
                            out.attempted += counts.0;
                            out.skipped += counts.1;
                            accumulate_shifted(&mut out.centroid_intensity, &intensity, [rec.x0, rec.y0], step);
                            out.records.push(rec);
                        } else {
                            let (r0, s) = IntensityMap::from_field(&field).moments()?;
                            out.records.push(SampleRecord {
                                index: i as u64,
                                eta: Vec::new(),
                                x0: r0[0],
                                y0: r0[1],
                                sxx: s[0][0],
                                sxy: s[0][1],
                                syy: s[1][1],
                                eta_tracked: Vec::new(),
                                w1sq: 0.0,
                                w2sq: 0.0,
                                cond_eta: Vec::new(),
                                cond_eta_sq: Vec::new(),
                            });
                        }
                    }
                    Ok(out)
                },
            )
            .collect();
        let mut ok = Vec::with_capacity(results.len());
        for r in results {
            ok.push(r?);
        }
        let chunk_sum = pairwise_sum(ok, merge_blocks).expect("non-empty chunk");
        total = Some(match total {
            None => chunk_sum,
            Some(t) => merge_blocks(t, chunk_sum),
        });
        done = ((first_block + blocks.len()) * BLOCK_SAMPLES).min(count);
        if let Some(cb) = options.progress {
            cb(done, count);
        }
    }
    debug_assert_eq!(done, count);
    Ok(total.expect("at least one sample"))
}

/// Second-moment width from a mean-intensity grid: `2 \int r^2 G / \int G`.
pub fn long_term_width_sq(mean_intensity: &Array2<f64>, grid: &GridSpec) -> Result<f64> {
    let coords = grid.coords();
    let (mut p, mut m) = (0.0, 0.0);
    for ((j, i), &v) in mean_intensity.indexed_iter() {
        p += v;
        m += v * (coords[i] * coords[i] + coords[j] * coords[j]);
    }
    if !(p > 0.0) {
        return Err(Error::InvalidInput("mean intensity carries no power".into()));
    }
    Ok(2.0 * m / p)
}

fn centroid_variance(records: &[SampleRecord]) -> Result<f64> {
    if records.len() < 2 {
        return Err(Error::InvalidInput("wandering variance needs at least two samples".into()));
    }
    let xs: Vec<f64> = records.iter().map(|r| r.x0).collect();
    let ys: Vec<f64> = records.iter().map(|r| r.y0).collect();
    Ok(0.5 * (crate::math::sample_variance(&xs) + crate::math::sample_variance(&ys)))
}

/// Long-term beam width `W_LT` from the accumulated mean intensity.
pub fn long_term_width(set: &SampleSet) -> Result<f64> {
    if set.records.len() < 2 {
        return Err(Error::InvalidInput("long-term width needs at least two samples".into()));
    }
    Ok(long_term_width_sq(&set.mean_intensity, &set.config.grid)?.sqrt())
}

/// Centroid variance `sigma_bw^2`: unbiased sample variance averaged over
/// the x and y coordinates.
pub fn wandering_variance(set: &SampleSet) -> Result<f64> {
    centroid_variance(&set.records)
}

/// Short-term width `sqrt(W_LT^2 - 4 sigma_bw^2)`.
pub fn short_term_width(set: &SampleSet) -> Result<f64> {
    let lt = long_term_width(set)?;
    let st2 = lt * lt - 4.0 * wandering_variance(set)?;
    if !(st2 > 0.0) {
        return Err(Error::ModelInapplicable(format!(
            "short-term width squared is {st2:e} m^2 (long-term width {lt:e} m)"
        )));
    }
    Ok(st2.sqrt())
}

/// Fixes relative apertures and the conditional offset range from a pilot
/// over the leading samples. Returns the config unchanged if nothing needs
/// resolving.
pub fn resolve_config(config: &ChannelConfig, options: &RunOptions) -> Result<ChannelConfig> {
    config.validate()?;
    let mut resolved = config.clone();
    if !config.needs_pilot() {
        return Ok(resolved);
    }
    let template = ChannelPropagator::new(config)?;
    let pilot_count = config.samples.min(PILOT_SAMPLES);
    let quiet = RunOptions { threads: options.threads, progress: None };
    let pilot = run_range(config, &template, pilot_count, false, &quiet)?;
    let mean = pilot.intensity / pilot_count as f64;
    let w_lt = long_term_width_sq(&mean, &config.grid)?.sqrt();
    let sigma_bw = if pilot_count >= 2 { centroid_variance(&pilot.records)?.sqrt() } else { 0.0 };
    if resolved.aperture_radii.is_empty() {
        resolved.aperture_radii = config.relative_apertures.iter().map(|r| r * w_lt).collect();
    }
    if resolved.conditional.max_offset.is_none() && resolved.tracked && resolved.conditional.offsets > 0 {
        resolved.conditional.max_offset = Some(config.conditional.max_offset_wander_units * sigma_bw);
    }
    resolved.validate()?;
    Ok(resolved)
}

/// Runs the full Monte Carlo over `config.samples` realizations.
pub fn run_simulation(config: &ChannelConfig) -> Result<SampleSet> {
    run_simulation_with(config, &RunOptions::default())
}

pub fn run_simulation_with(config: &ChannelConfig, options: &RunOptions) -> Result<SampleSet> {
    let work = || -> Result<SampleSet> {
        let resolved = resolve_config(config, options)?;
        let template = ChannelPropagator::new(&resolved)?;
        let m = resolved.samples;
        let total = run_range(&resolved, &template, m, true, options)?;
        let scale = 1.0 / m as f64;
        Ok(SampleSet {
            config: resolved,
            records: total.records,
            mean_intensity: total.intensity * scale,
            centroid_mean_intensity: total.centroid_intensity * scale,
            conditional_attempted: total.attempted,
            conditional_skipped: total.skipped,
        })
    };
    match options.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::make_gaussian_beam;

    fn small_config() -> ChannelConfig {
        ChannelConfig {
            name: "test".into(),
            beam: BeamSpec { w0: 0.01, f0: f64::INFINITY },
            turbulence: TurbulenceParams { cn2: 5e-15, inner_scale: 1e-3, outer_scale: 80.0 },
            optics: OpticalParams { wavelength: 809e-9 },
            path_length: 500.0,
            grid: GridSpec { points: 64, step: 2e-3 },
            screens: 2,
            rings: RingSpec { count: 64, k_min: None, k_max: None },
            aperture_radii: vec![0.01, 0.02],
            relative_apertures: vec![],
            samples: 10,
            master_seed: 3,
            tracked: true,
            absorbing_boundary: false,
            conditional: ConditionalSpec { offsets: 3, max_offset: Some(0.004), max_offset_wander_units: 5.5 },
            desk_scale: false,
        }
    }

    #[test]
    fn semiaxes_sign_rule_and_identities() {
        assert_eq!(semiaxes([[4.0, 0.0], [0.0, 1.0]]), (4.0, 1.0));
        let pos = semiaxes([[3.0, 0.5], [0.5, 2.0]]);
        let neg = semiaxes([[3.0, -0.5], [-0.5, 2.0]]);
        assert!(pos.0 > pos.1);
        assert!(neg.0 < neg.1);
        assert_eq!(pos.0, neg.1);
        let s = [[2.7, -0.9], [-0.9, 1.3]];
        let (a, b) = semiaxes(s);
        assert!((a * b - (2.7 * 1.3 - 0.81)).abs() < 1e-12);
        assert!((a + b - 4.0).abs() < 1e-12);
    }

    #[test]
    fn orientation_is_eigenvector_of_w1() {
        for s in [[[3.0, 0.5], [0.5, 2.0]], [[3.0, -0.5], [-0.5, 2.0]], [[1.0, 0.0], [0.0, 2.0]]] {
            let phi = semiaxis_orientation(s);
            let (w1, _) = semiaxes(s);
            let v = [phi.cos(), phi.sin()];
            let sv = [s[0][0] * v[0] + s[0][1] * v[1], s[1][0] * v[0] + s[1][1] * v[1]];
            assert!((sv[0] - w1 * v[0]).abs() < 1e-12 && (sv[1] - w1 * v[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn disc_integration_of_uniform_map_gives_area() {
        let g = GridSpec::new(128, 1e-3).unwrap();
        let map = IntensityMap::from_cell_powers(Array2::from_elem((128, 128), 1.0), g);
        for r in [0.005, 0.0123, 0.03] {
            let area_cells = PI * r * r / (g.step * g.step);
            let got = map.disc_power(0.0003, -0.0011, r).unwrap();
            assert!((got / area_cells - 1.0).abs() < 2e-3, "r={r}: {got} vs {area_cells}");
        }
        assert_eq!(map.disc_power(0.0, 0.0, 0.0).unwrap(), 0.0);
        assert!(map.disc_power(0.05, 0.0, 0.02).is_err());
        assert!(map.disc_power_clipped(0.05, 0.0, 0.02) > 0.0);
    }

    #[test]
    fn gaussian_aperture_law() {
        let g = GridSpec::new(256, 0.4e-3).unwrap();
        let o = OpticalParams { wavelength: 809e-9 };
        let w = 0.008;
        let f = make_gaussian_beam(&BeamSpec { w0: w, f0: f64::INFINITY }, &o, &g).unwrap();
        for ratio in [0.25, 0.5, 1.0, 2.0] {
            let eta = transmittance(&f, ratio * w, [0.0, 0.0]).unwrap();
            let want = 1.0 - (-2.0 * ratio * ratio).exp();
            assert!((eta - want).abs() < 1e-3, "R/W={ratio}: {eta} vs {want}");
        }
        assert_eq!(transmittance(&f, 0.0, [0.0, 0.0]).unwrap(), 0.0);
        let all = transmittance(&f, g.half_width(), [0.0, 0.0]).unwrap();
        assert!((all - f.power().min(1.0)).abs() < 1e-6);
    }

    #[test]
    fn centroid_is_translation_covariant() {
        let g = GridSpec::new(128, 1e-3).unwrap();
        let o = OpticalParams { wavelength: 809e-9 };
        let f = make_gaussian_beam(&BeamSpec { w0: 0.008, f0: f64::INFINITY }, &o, &g).unwrap();
        let c = centroid(&f).unwrap();
        assert!(c[0].abs() < 1e-9 * 0.008 && c[1].abs() < 1e-9 * 0.008);
        let mut shifted = f.clone();
        for j in 0..128 {
            for i in 0..128 {
                shifted.amplitude[[j, i]] = if i == 0 { Default::default() } else { f.amplitude[[j, i - 1]] };
            }
        }
        let c2 = centroid(&shifted).unwrap();
        assert!((c2[0] - g.step).abs() < 1e-9 * g.step);
        let s = spot_matrix(&f, c).unwrap();
        assert!((s[0][0] / (0.008f64 * 0.008) - 1.0).abs() < 0.005);
        assert!(s[0][0] + s[1][1] >= 2.0 * (s[0][0] * s[1][1] - s[0][1] * s[0][1]).sqrt() * (1.0 - 1e-12));
    }

    #[test]
    fn shifted_accumulation_moves_mass() {
        let mut img = Array2::zeros((64, 64));
        img[[10, 20]] = 1.0;
        let mut acc = Array2::zeros((64, 64));
        accumulate_shifted(&mut acc, &img, [2.0, -3.0], 1.0);
        // acc(r) = img(r + shift): the spike moves to (row 13, col 18)
        assert_eq!(acc[[13, 18]], 1.0);
        assert!((acc.sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pairwise_sum_is_order_fixed() {
        let v: Vec<f64> = (1..=7).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(v, |a, b| a + b), Some(28.0));
    }

    #[test]
    fn vacuum_run_matches_direct_observables() {
        let mut cfg = small_config();
        cfg.turbulence.cn2 = 0.0;
        cfg.samples = 1;
        let set = run_simulation(&cfg).unwrap();
        let mut field = make_gaussian_beam(&cfg.beam, &cfg.optics, &cfg.grid).unwrap();
        let mut prop = crate::optics::Propagator::new(cfg.grid, &cfg.optics);
        for _ in 0..cfg.screens {
            prop.vacuum_step(&mut field, 0.5 * cfg.slab_length());
            prop.vacuum_step(&mut field, 0.5 * cfg.slab_length());
        }
        let rec = &set.records[0];
        for (k, &r) in cfg.aperture_radii.iter().enumerate() {
            let want = transmittance(&field, r, [0.0, 0.0]).unwrap();
            assert!((rec.eta[k] - want).abs() < 1e-9);
            assert!((rec.eta_tracked[k] - rec.eta[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn records_respect_invariants_and_thread_count() {
        let cfg = small_config();
        let a = run_simulation_with(&cfg, &RunOptions { threads: Some(1), progress: None }).unwrap();
        let b = run_simulation_with(&cfg, &RunOptions { threads: Some(3), progress: None }).unwrap();
        assert_eq!(a, b);
        for (i, r) in a.records.iter().enumerate() {
            assert_eq!(r.index, i as u64);
            assert!(r.eta.iter().all(|&e| (0.0..=1.0).contains(&e)));
            assert!(r.eta[0] <= r.eta[1]);
            assert!(r.sxx > 0.0 && r.syy > 0.0 && r.sxx * r.syy > r.sxy * r.sxy);
            for k in 0..2 {
                // zero offset reproduces the tracked transmittance
                assert!((r.cond_eta[k * 3] - r.eta_tracked[k]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn relative_apertures_resolve_from_pilot() {
        let mut cfg = small_config();
        cfg.aperture_radii.clear();
        cfg.relative_apertures = vec![0.5, 1.0];
        cfg.conditional.max_offset = None;
        let set = run_simulation(&cfg).unwrap();
        let r = &set.config.aperture_radii;
        assert_eq!(r.len(), 2);
        assert!((r[1] / r[0] - 2.0).abs() < 1e-12);
        // all samples are in the pilot here, so the resolved width is exact
        let w_lt = long_term_width(&set).unwrap();
        assert!((r[1] / w_lt - 1.0).abs() < 1e-12);
        assert!(set.config.conditional.max_offset.unwrap() > 0.0);
    }

    #[test]
    fn width_functions() {
        let mut cfg = small_config();
        cfg.turbulence.cn2 = 0.0;
        cfg.samples = 3;
        let set = run_simulation(&cfg).unwrap();
        assert!(wandering_variance(&set).unwrap() < 1e-24);
        let lt = long_term_width(&set).unwrap();
        assert!((short_term_width(&set).unwrap() / lt - 1.0).abs() < 1e-9);
        let want = cfg.beam.vacuum_width(&cfg.optics, cfg.path_length);
        assert!((lt / want - 1.0).abs() < 0.01);
    }

    #[test]
    fn config_validation_names_fields() {
        let mut cfg = small_config();
        cfg.aperture_radii = vec![1.0];
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "aperture_radii"),
            other => panic!("unexpected {other:?}"),
        }
        let mut cfg = small_config();
        cfg.samples = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_toml_round_trip_with_infinite_focus() {
        let cfg = small_config();
        let text = cfg.to_toml().unwrap();
        let back = ChannelConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml().unwrap(), text);
    }
}
