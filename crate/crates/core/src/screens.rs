//! Random phase screens: sparse-spectrum (used by the simulation), plain FFT
//! and FFT with subharmonics (used for comparison), and empirical
//! structure-function estimation.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::linalg::general_mat_mul;
use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{bin_frequency, Fft2};
use crate::math::quad;
use crate::turbulence::{phase_psd, OpticalParams, TurbulenceParams};

/// Square sampling grid. Node `j` sits at `(j - (n - 1) / 2) * step`, so the
/// cells tile `[-n step / 2, n step / 2]` symmetrically.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points: usize,
    pub step: f64,
}

impl GridSpec {
    pub fn new(points: usize, step: f64) -> Result<Self> {
        let g = Self { points, step };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points < 64 || !self.points.is_power_of_two() {
            return Err(Error::config("grid.points", format!("must be a power of two >= 64, got {}", self.points)));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::config("grid.step", "must be > 0"));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.points as f64 * self.step
    }

    pub fn half_width(&self) -> f64 {
        0.5 * self.width()
    }

    pub fn coord(&self, j: usize) -> f64 {
        (j as f64 - 0.5 * (self.points as f64 - 1.0)) * self.step
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.points).map(|j| self.coord(j)).collect()
    }

    /// Fractional index of position `x`.
    pub fn index_of(&self, x: f64) -> f64 {
        x / self.step + 0.5 * (self.points as f64 - 1.0)
    }
}

/// Geometric partition of `[K_min, K_max]` into rings and the phase
/// variance weight carried by each ring.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralRings {
    pub boundaries: Vec<f64>,
    /// `<|a_n|^2>` for the harmonic of ring `n`.
    pub weights: Vec<f64>,
}

impl SpectralRings {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn k_min(&self) -> f64 {
        self.boundaries[0]
    }

    pub fn k_max(&self) -> f64 {
        *self.boundaries.last().expect("at least one ring")
    }

    /// Point variance of a screen built from these rings, `sum s_n / 2`.
    pub fn phase_variance(&self) -> f64 {
        0.5 * self.weights.iter().sum::<f64>()
    }
}

/// Ring boundaries `K_n = K_min (K_max/K_min)^(n/N)` and weights
/// `s_n = 4 pi \int_{K_{n-1}}^{K_n} kappa Phi_phi dkappa`.
///
/// The weight is twice the ring's share of the phase variance because a
/// screen is the real part of the complex harmonic sum.
pub fn build_rings(
    params: &TurbulenceParams,
    optics: &OpticalParams,
    slab_length: f64,
    n: usize,
    k_min: f64,
    k_max: f64,
) -> Result<SpectralRings> {
    if n == 0 {
        return Err(Error::config("screens.rings", "need at least one ring"));
    }
    if !(k_min > 0.0 && k_max > k_min && k_max.is_finite()) {
        return Err(Error::config("screens.k_min/k_max", format!("need 0 < k_min < k_max, got [{k_min}, {k_max}]")));
    }
    let ratio = (k_max / k_min).ln();
    let mut boundaries: Vec<f64> = (0..=n).map(|i| k_min * (ratio * i as f64 / n as f64).exp()).collect();
    boundaries[n] = k_max;
    let integrand = |kappa: f64| kappa * phase_psd(kappa, params, optics, slab_length);
    let mut weights = Vec::with_capacity(n);
    for w in boundaries.windows(2) {
        let v = if params.cn2 == 0.0 { 0.0 } else { quad::integrate_log(integrand, w[0], w[1], 1e-10)? };
        weights.push(4.0 * PI * v);
    }
    Ok(SpectralRings { boundaries, weights })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Harmonic {
    pub amplitude: Complex64,
    pub kx: f64,
    pub ky: f64,
}

/// Screen `phi(r) = Re sum_n a_n exp(i kappa_n . r)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseScreen {
    pub harmonics: Vec<Harmonic>,
}

/// Draws one harmonic per ring: `Re a_n`, `Im a_n` normal with variance
/// `s_n / 2`, `|kappa_n|` uniform in ring area, direction uniform.
pub fn sample_sparse_screen<R: Rng + ?Sized>(rings: &SpectralRings, rng: &mut R) -> SparseScreen {
    let harmonics = rings
        .weights
        .iter()
        .zip(rings.boundaries.windows(2))
        .map(|(&s, b)| {
            let sd = (0.5 * s).sqrt();
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let xi: f64 = rng.random();
            let angle: f64 = 2.0 * PI * rng.random::<f64>();
            let (lo2, hi2) = (b[0] * b[0], b[1] * b[1]);
            let kappa = (lo2 + xi * (hi2 - lo2)).sqrt().clamp(b[0], b[1]);
            Harmonic { amplitude: Complex64::new(sd * re, sd * im), kx: kappa * angle.cos(), ky: kappa * angle.sin() }
        })
        .collect();
    SparseScreen { harmonics }
}

/// Reusable buffers for evaluating sparse screens on one grid.
///
/// The harmonic sum is factored as a real matrix product
/// `phi = A B` with `A[j, n] = (Re, -Im)(a_n e^{i ky_n y_j})` and
/// `B[n, i] = (cos, sin)(kx_n x_i)`.
#[derive(Debug, Clone)]
pub struct ScreenEvaluator {
    grid: GridSpec,
    coords: Vec<f64>,
    rows: Array2<f64>,
    cols: Array2<f64>,
}

impl ScreenEvaluator {
    pub fn new(grid: GridSpec) -> Self {
        Self { grid, coords: grid.coords(), rows: Array2::zeros((0, 0)), cols: Array2::zeros((0, 0)) }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn evaluate(&mut self, screen: &SparseScreen) -> Array2<f64> {
        let n = self.grid.points;
        let mut out = Array2::zeros((n, n));
        self.evaluate_into(screen, &mut out);
        out
    }

    /// Writes the screen into `out` (rows indexed by y, columns by x).
    pub fn evaluate_into(&mut self, screen: &SparseScreen, out: &mut Array2<f64>) {
        let n = self.grid.points;
        let h = screen.harmonics.len();
        assert_eq!(out.dim(), (n, n));
        if self.rows.dim() != (n, 2 * h) {
            self.rows = Array2::zeros((n, 2 * h));
            self.cols = Array2::zeros((2 * h, n));
        }
        for (j, &y) in self.coords.iter().enumerate() {
            let mut row = self.rows.row_mut(j);
            for (m, hm) in screen.harmonics.iter().enumerate() {
                let c = hm.amplitude * Complex64::from_polar(1.0, hm.ky * y);
                row[m] = c.re;
                row[h + m] = -c.im;
            }
        }
        for (m, hm) in screen.harmonics.iter().enumerate() {
            for (i, &x) in self.coords.iter().enumerate() {
                let (s, c) = (hm.kx * x).sin_cos();
                self.cols[[m, i]] = c;
                self.cols[[h + m, i]] = s;
            }
        }
        general_mat_mul(1.0, &self.rows, &self.cols, 0.0, out);
    }
}

/// One-shot evaluation of a sparse screen on `grid`.
pub fn evaluate_screen(screen: &SparseScreen, grid: &GridSpec) -> Array2<f64> {
    ScreenEvaluator::new(*grid).evaluate(screen)
}

/// Direct evaluation at one point.
pub fn evaluate_point(screen: &SparseScreen, x: f64, y: f64) -> f64 {
    screen
        .harmonics
        .iter()
        .map(|h| (h.amplitude * Complex64::from_polar(1.0, h.kx * x + h.ky * y)).re)
        .sum()
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let sd = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(sd * re, sd * im)
}

/// Classic FFT screen: white complex noise filtered by the PSD on the
/// discrete frequency lattice, DC bin removed.
pub fn sample_fft_screen<R: Rng + ?Sized>(
    params: &TurbulenceParams,
    optics: &OpticalParams,
    slab_length: f64,
    grid: &GridSpec,
    rng: &mut R,
) -> Array2<f64> {
    let n = grid.points;
    let dk = 2.0 * PI / grid.width();
    let mut spec = Array2::<Complex64>::zeros((n, n));
    for ((r, c), v) in spec.indexed_iter_mut() {
        let ky = bin_frequency(r, n, grid.step);
        let kx = bin_frequency(c, n, grid.step);
        // draw even for the DC bin so the stream layout is fixed
        let z = complex_normal(rng, 2.0 * dk * dk);
        if r == 0 && c == 0 {
            continue;
        }
        let kappa = (kx * kx + ky * ky).sqrt();
        *v = z * phase_psd(kappa, params, optics, slab_length).sqrt();
    }
    Fft2::new(n).inverse_unnormalized(&mut spec);
    spec.mapv(|v| v.re)
}

/// FFT screen augmented with `levels` subharmonic layers.
///
/// Layer `p` uses spacing `dk / 3^p` and the 8 non-central points of a 3x3
/// patch; each point carries a complex amplitude of variance
/// `2 Phi_phi(kappa) dk_p^2`. The spatial mean of the added low-frequency
/// part is removed. With `levels == 0` the result equals
/// [`sample_fft_screen`] for the same stream.
pub fn sample_subharmonic_screen<R: Rng + ?Sized>(
    params: &TurbulenceParams,
    optics: &OpticalParams,
    slab_length: f64,
    grid: &GridSpec,
    levels: usize,
    rng: &mut R,
) -> Array2<f64> {
    let mut screen = sample_fft_screen(params, optics, slab_length, grid, rng);
    if levels == 0 {
        return screen;
    }
    let n = grid.points;
    let coords = grid.coords();
    let dk = 2.0 * PI / grid.width();
    let mut low = Array2::<f64>::zeros((n, n));
    for p in 1..=levels {
        let dkp = dk / 3f64.powi(p as i32);
        for a in -1i32..=1 {
            for b in -1i32..=1 {
                if a == 0 && b == 0 {
                    continue;
                }
                let (kx, ky) = (a as f64 * dkp, b as f64 * dkp);
                let kappa = (kx * kx + ky * ky).sqrt();
                let c = complex_normal(rng, 2.0 * phase_psd(kappa, params, optics, slab_length) * dkp * dkp);
                let ex: Vec<Complex64> = coords.iter().map(|&x| Complex64::from_polar(1.0, kx * x)).collect();
                for (j, &y) in coords.iter().enumerate() {
                    let cy = c * Complex64::from_polar(1.0, ky * y);
                    for (i, e) in ex.iter().enumerate() {
                        low[[j, i]] += (cy * e).re;
                    }
                }
            }
        }
    }
    let mean = low.mean().unwrap_or(0.0);
    screen.zip_mut_with(&low, |s, l| *s += l - mean);
    screen
}

/// Streaming estimator of the phase-structure function along the grid axes.
#[derive(Clone, Debug)]
pub struct StructureFunctionEstimator {
    grid: GridSpec,
    offsets: Vec<usize>,
    sums: Vec<f64>,
    screens: usize,
}

impl StructureFunctionEstimator {
    /// `separations` must be positive integer multiples of the grid step
    /// smaller than the grid width.
    pub fn new(grid: GridSpec, separations: &[f64]) -> Result<Self> {
        let mut offsets = Vec::with_capacity(separations.len());
        for &s in separations {
            let m = (s.abs() / grid.step).round();
            if (m * grid.step - s.abs()).abs() > 1e-9 * grid.step.max(s.abs()) || m as usize >= grid.points {
                return Err(Error::InvalidInput(format!(
                    "separation {s} m is not a multiple of the grid step {} m inside the grid",
                    grid.step
                )));
            }
            offsets.push(m as usize);
        }
        Ok(Self { grid, offsets, sums: vec![0.0; separations.len()], screens: 0 })
    }

    pub fn add(&mut self, screen: &Array2<f64>) -> Result<()> {
        let n = self.grid.points;
        if screen.dim() != (n, n) {
            return Err(Error::ShapeMismatch { expected: (n, n), actual: screen.dim() });
        }
        for (k, &m) in self.offsets.iter().enumerate() {
            if m == 0 {
                continue;
            }
            let pairs = (n * (n - m)) as f64;
            let mut sx = 0.0;
            let mut sy = 0.0;
            for j in 0..n {
                let row = screen.row(j);
                for i in 0..n - m {
                    let d = row[i] - row[i + m];
                    sx += d * d;
                }
            }
            for j in 0..n - m {
                let a = screen.row(j);
                let b = screen.row(j + m);
                for i in 0..n {
                    let d = a[i] - b[i];
                    sy += d * d;
                }
            }
            self.sums[k] += 0.5 * (sx + sy) / pairs;
        }
        self.screens += 1;
        Ok(())
    }

    /// Adds the screens accumulated by `other`, built for the same grid and
    /// separations.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.grid != self.grid || other.offsets != self.offsets {
            return Err(Error::InvalidInput("cannot merge estimators with different grids or separations".into()));
        }
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        self.screens += other.screens;
        Ok(())
    }

    pub fn screens(&self) -> usize {
        self.screens
    }

    pub fn estimate(&self) -> Result<Vec<f64>> {
        if self.screens == 0 {
            return Err(Error::InvalidInput("no screens supplied to the structure-function estimator".into()));
        }
        Ok(self.sums.iter().map(|s| s / self.screens as f64).collect())
    }
}

/// Structure function averaged over `screens` and both grid axes.
pub fn empirical_structure_function<'a, I>(screens: I, grid: &GridSpec, separations: &[f64]) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a Array2<f64>>,
{
    let mut est = StructureFunctionEstimator::new(*grid, separations)?;
    for s in screens {
        est.add(s)?;
    }
    est.estimate()
}

/// Writes `values` as little-endian f64 (row-major) to `path` and a text
/// header describing the grid to `path` with `.hdr` appended.
pub fn dump_real_array(path: &Path, values: &Array2<f64>, grid: &GridSpec, seed: u64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in values.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    write_header(path, grid, seed, "f64", 1)
}

pub(crate) fn write_header(path: &Path, grid: &GridSpec, seed: u64, dtype: &str, components: usize) -> Result<()> {
    let mut hdr = path.as_os_str().to_owned();
    hdr.push(".hdr");
    let text = format!(
        "points = {}\nstep = {:e}\nseed = {}\ndtype = \"{}\"\ncomponents = {}\norder = \"row-major, y rows, x columns, little-endian\"\n",
        grid.points, grid.step, seed, dtype, components
    );
    std::fs::write(hdr, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use crate::turbulence::phase_variance_band;

    fn appendix_params() -> (TurbulenceParams, OpticalParams) {
        (TurbulenceParams::new(1e-14, 1e-3, 80.0).unwrap(), OpticalParams::new(808e-9).unwrap())
    }

    fn grid64() -> GridSpec {
        GridSpec::new(64, 0.01).unwrap()
    }

    #[test]
    fn grid_validation_and_coordinates() {
        assert!(GridSpec::new(100, 0.01).is_err());
        assert!(GridSpec::new(32, 0.01).is_err());
        assert!(GridSpec::new(64, 0.0).is_err());
        let g = grid64();
        let c = g.coords();
        assert!((c[0] + c[63]).abs() < 1e-15);
        assert!((c[1] - c[0] - 0.01).abs() < 1e-15);
        assert!((g.index_of(c[17]) - 17.0).abs() < 1e-12);
    }

    #[test]
    fn ring_boundaries_are_geometric() {
        let (p, o) = appendix_params();
        let r = build_rings(&p, &o, 100.0, 16, 1e-2, 1e3).unwrap();
        let q = r.boundaries[1] / r.boundaries[0];
        for w in r.boundaries.windows(2) {
            assert!((w[1] / w[0] / q - 1.0).abs() < 1e-12);
        }
        assert!(r.weights.iter().all(|&s| s >= 0.0));
        assert!(build_rings(&p, &o, 100.0, 0, 1.0, 2.0).is_err());
        assert!(build_rings(&p, &o, 100.0, 4, 2.0, 1.0).is_err());
    }

    #[test]
    fn ring_weights_sum_independent_of_ring_count() {
        let (p, o) = appendix_params();
        let (lo, hi) = p.default_band();
        let direct = 2.0 * phase_variance_band(&p, &o, 100.0, lo, hi).unwrap();
        for n in [1, 8, 1024] {
            let r = build_rings(&p, &o, 100.0, n, lo, hi).unwrap();
            let total: f64 = r.weights.iter().sum();
            assert!((total / direct - 1.0).abs() < 1e-6, "N={n}: {total} vs {direct}");
        }
    }

    #[test]
    fn sampled_wave_vectors_stay_in_their_ring() {
        let (p, o) = appendix_params();
        let (lo, hi) = p.default_band();
        let r = build_rings(&p, &o, 100.0, 256, lo, hi).unwrap();
        let mut rng = stream(3, Domain::Screens, 0);
        for _ in 0..20 {
            let s = sample_sparse_screen(&r, &mut rng);
            for (h, b) in s.harmonics.iter().zip(r.boundaries.windows(2)) {
                let k = h.kx.hypot(h.ky);
                assert!(k >= b[0] * (1.0 - 1e-12) && k <= b[1] * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn amplitude_statistics() {
        let rings = SpectralRings { boundaries: vec![1.0, 2.0, 3.0], weights: vec![2.0, 0.5] };
        let mut rng = stream(11, Domain::Screens, 1);
        let m = 100_000;
        let mut sum = [Complex64::default(); 2];
        let mut sq = [0.0; 2];
        for _ in 0..m {
            let s = sample_sparse_screen(&rings, &mut rng);
            for k in 0..2 {
                sum[k] += s.harmonics[k].amplitude;
                sq[k] += s.harmonics[k].amplitude.norm_sqr();
            }
        }
        for k in 0..2 {
            let mean = sum[k] / m as f64;
            let se = (rings.weights[k] / 2.0 / m as f64).sqrt();
            assert!(mean.re.abs() < 5.0 * se && mean.im.abs() < 5.0 * se);
            assert!((sq[k] / m as f64 / rings.weights[k] - 1.0).abs() < 0.03);
        }
    }

    #[test]
    fn evaluation_trivial_cases() {
        let g = grid64();
        let flat = SparseScreen { harmonics: vec![Harmonic { amplitude: Complex64::new(1.0, 0.0), kx: 0.0, ky: 0.0 }] };
        assert!(evaluate_screen(&flat, &g).iter().all(|v| (v - 1.0).abs() < 1e-15));

        let k = 2.0 * PI / g.width();
        let wave = SparseScreen { harmonics: vec![Harmonic { amplitude: Complex64::new(1.0, 0.0), kx: k, ky: 0.0 }] };
        let phi = evaluate_screen(&wave, &g);
        let coords = g.coords();
        for i in 0..64 {
            assert!((phi[[5, i]] - (k * coords[i]).cos()).abs() < 1e-13);
            assert!((phi[[5, i]] - phi[[40, i]]).abs() < 1e-15);
        }
        // a full period: the row sums to zero
        assert!(phi.row(0).sum().abs() < 1e-12);
    }

    #[test]
    fn evaluation_matches_pointwise_sum_and_is_linear() {
        let (p, o) = appendix_params();
        let (lo, hi) = p.default_band();
        let r = build_rings(&p, &o, 100.0, 64, lo, hi).unwrap();
        let g = grid64();
        let mut rng = stream(5, Domain::Screens, 2);
        let s = sample_sparse_screen(&r, &mut rng);
        let phi = evaluate_screen(&s, &g);
        let coords = g.coords();
        for _ in 0..10 {
            let (i, j) = (rng.random_range(0..64), rng.random_range(0..64));
            let want = evaluate_point(&s, coords[i], coords[j]);
            assert!((phi[[j, i]] - want).abs() < 1e-12 * (1.0 + want.abs()), "{} vs {want}", phi[[j, i]]);
        }
        let mut scaled = s.clone();
        scaled.harmonics.iter_mut().for_each(|h| h.amplitude *= 2.5);
        let phi2 = evaluate_screen(&scaled, &g);
        for (a, b) in phi.iter().zip(phi2.iter()) {
            assert!((2.5 * a - b).abs() < 1e-11 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn same_stream_same_screen() {
        let (p, o) = appendix_params();
        let (lo, hi) = p.default_band();
        let r = build_rings(&p, &o, 100.0, 32, lo, hi).unwrap();
        let a = sample_sparse_screen(&r, &mut stream(9, Domain::Screens, 4));
        let b = sample_sparse_screen(&r, &mut stream(9, Domain::Screens, 4));
        assert_eq!(a, b);
        let c = sample_sparse_screen(&r, &mut stream(9, Domain::Screens, 5));
        assert_ne!(a, c);
    }

    #[test]
    fn subharmonic_levels_zero_reduce_to_fft() {
        let (p, o) = appendix_params();
        let g = grid64();
        let a = sample_fft_screen(&p, &o, 100.0, &g, &mut stream(1, Domain::Screens, 0));
        let b = sample_subharmonic_screen(&p, &o, 100.0, &g, 0, &mut stream(1, Domain::Screens, 0));
        assert_eq!(a, b);
        let c = sample_fft_screen(&p, &o, 100.0, &g, &mut stream(2, Domain::Screens, 0));
        assert_ne!(a, c);
    }

    #[test]
    fn fft_screen_point_variance_matches_lattice_sum() {
        let (p, o) = appendix_params();
        let g = grid64();
        let dk = 2.0 * PI / g.width();
        let mut lattice = 0.0;
        for r in 0..64 {
            for c in 0..64 {
                if r + c == 0 {
                    continue;
                }
                let k = bin_frequency(r, 64, g.step).hypot(bin_frequency(c, 64, g.step));
                lattice += phase_psd(k, &p, &o, 100.0) * dk * dk;
            }
        }
        let mut rng = stream(4, Domain::Screens, 7);
        let m = 400;
        let mut acc = 0.0;
        let mut mean = 0.0;
        for _ in 0..m {
            let s = sample_fft_screen(&p, &o, 100.0, &g, &mut rng);
            acc += s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64;
            mean += s.mean().unwrap();
        }
        let var = acc / m as f64;
        assert!((var / lattice - 1.0).abs() < 0.15, "{var} vs {lattice}");
        // DC bin removed: every screen has zero spatial mean
        assert!((mean / m as f64).abs() < 1e-9 * lattice.sqrt());
    }

    #[test]
    fn structure_function_estimator_basics() {
        let g = grid64();
        let constant = Array2::from_elem((64, 64), 3.0);
        let d = empirical_structure_function([&constant, &constant], &g, &[0.01, 0.05]).unwrap();
        assert_eq!(d, vec![0.0, 0.0]);
        // a ramp along x: D = (slope * dr)^2 / 2 after axis averaging
        let ramp = Array2::from_shape_fn((64, 64), |(_, i)| i as f64);
        let d = empirical_structure_function([&ramp], &g, &[0.02, -0.02]).unwrap();
        assert!((d[0] - 2.0).abs() < 1e-12 && d[0] == d[1]);
        assert!(empirical_structure_function(std::iter::empty(), &g, &[0.01]).is_err());
        assert!(StructureFunctionEstimator::new(g, &[0.015]).is_err());
    }

    #[test]
    fn dump_writes_binary_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let g = grid64();
        let arr = Array2::from_shape_fn((64, 64), |(j, i)| (j * 64 + i) as f64);
        let path = dir.path().join("screen.bin");
        dump_real_array(&path, &arr, &g, 17).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 64 * 64 * 8);
        assert_eq!(f64::from_le_bytes(bytes[8..16].try_into().unwrap()), 1.0);
        let hdr = std::fs::read_to_string(dir.path().join("screen.bin.hdr")).unwrap();
        assert!(hdr.contains("points = 64") && hdr.contains("seed = 17"));
    }
}
