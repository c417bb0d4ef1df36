//! Turbulence spectra and reference quantities for horizontal links with a
//! constant index-of-refraction structure constant.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, quad};

/// Modified von Kármán–Tatarskii turbulence parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurbulenceParams {
    /// Index-of-refraction structure constant `C_n^2`, m^(-2/3).
    pub cn2: f64,
    /// Inner scale `l0`, m.
    pub inner_scale: f64,
    /// Outer scale `L0`, m.
    pub outer_scale: f64,
}

impl TurbulenceParams {
    pub fn new(cn2: f64, inner_scale: f64, outer_scale: f64) -> Result<Self> {
        let p = Self { cn2, inner_scale, outer_scale };
        p.validate()?;
        Ok(p)
    }

    /// `cn2 == 0` is accepted and describes vacuum propagation.
    pub fn validate(&self) -> Result<()> {
        if !(self.cn2 >= 0.0 && self.cn2.is_finite()) {
            return Err(Error::config("turbulence.cn2", format!("must be finite and >= 0, got {}", self.cn2)));
        }
        if !(self.inner_scale > 0.0) {
            return Err(Error::config("turbulence.inner_scale", "must be > 0"));
        }
        if !(self.outer_scale > self.inner_scale && self.outer_scale.is_finite()) {
            return Err(Error::config("turbulence.outer_scale", "must be finite and exceed the inner scale"));
        }
        Ok(())
    }

    /// Default spectral band of the sparse-spectrum screens, `[1/(15 L0), 2/l0]`.
    pub fn default_band(&self) -> (f64, f64) {
        (1.0 / (15.0 * self.outer_scale), 2.0 / self.inner_scale)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpticalParams {
    /// Wavelength, m.
    pub wavelength: f64,
}

impl OpticalParams {
    pub fn new(wavelength: f64) -> Result<Self> {
        if !(wavelength > 0.0 && wavelength.is_finite()) {
            return Err(Error::config("optics.wavelength", "must be > 0"));
        }
        Ok(Self { wavelength })
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }
}

/// Refractive-index spectrum `Phi_n(kappa)` (m^3).
pub fn spectrum_phi_n(kappa: f64, params: &TurbulenceParams) -> f64 {
    let cutoff = (kappa * params.inner_scale / (2.0 * PI)).powi(2);
    let denom = kappa * kappa + params.outer_scale.powi(-2);
    0.033 * params.cn2 * (-cutoff).exp() / denom.powf(11.0 / 6.0)
}

/// Phase power spectral density of a screen representing a slab of
/// thickness `slab_length`: `2 pi l k^2 Phi_n(kappa)` (m^2).
pub fn phase_psd(kappa: f64, params: &TurbulenceParams, optics: &OpticalParams, slab_length: f64) -> f64 {
    let k = optics.wavenumber();
    2.0 * PI * slab_length * k * k * spectrum_phi_n(kappa, params)
}

/// Rytov parameter `1.23 C_n^2 k^(7/6) z^(11/6)`.
pub fn rytov_parameter(params: &TurbulenceParams, optics: &OpticalParams, path_length: f64) -> f64 {
    1.23 * params.cn2 * optics.wavenumber().powf(7.0 / 6.0) * path_length.powf(11.0 / 6.0)
}

/// Smallest number of equal slabs whose per-slab Rytov parameter does not
/// exceed `max_slab_rytov`.
pub fn screen_count(params: &TurbulenceParams, optics: &OpticalParams, path_length: f64, max_slab_rytov: f64) -> usize {
    let total = rytov_parameter(params, optics, path_length);
    if total <= max_slab_rytov {
        return 1;
    }
    // rytov(z/M) = total * M^(-11/6)
    let mut m = (total / max_slab_rytov).powf(6.0 / 11.0).floor().max(1.0) as usize;
    while rytov_parameter(params, optics, path_length / m as f64) > max_slab_rytov {
        m += 1;
    }
    m
}

/// Band-limited phase variance `2 pi \int kappa Phi_phi(kappa) dkappa`.
pub fn phase_variance_band(
    params: &TurbulenceParams,
    optics: &OpticalParams,
    slab_length: f64,
    k_min: f64,
    k_max: f64,
) -> Result<f64> {
    let v = quad::integrate_log(
        |kappa| kappa * phase_psd(kappa, params, optics, slab_length),
        k_min,
        k_max,
        1e-10,
    )?;
    Ok(2.0 * PI * v)
}

/// Integration band used for the theoretical structure function.
pub fn theory_band(params: &TurbulenceParams) -> (f64, f64) {
    (1e-4 / params.outer_scale, 10.0 / params.inner_scale)
}

/// Theoretical phase-structure function of a single screen,
/// `D(dr) = 4 pi \int kappa Phi_phi(kappa) [1 - J0(kappa dr)] dkappa`.
pub fn structure_function_theory(
    delta_r: f64,
    params: &TurbulenceParams,
    optics: &OpticalParams,
    slab_length: f64,
) -> Result<f64> {
    let (lo, hi) = theory_band(params);
    structure_function_band(delta_r, params, optics, slab_length, lo, hi)
}

/// Structure function restricted to spatial frequencies in `[k_min, k_max]`.
pub fn structure_function_band(
    delta_r: f64,
    params: &TurbulenceParams,
    optics: &OpticalParams,
    slab_length: f64,
    k_min: f64,
    k_max: f64,
) -> Result<f64> {
    if !(delta_r >= 0.0) {
        return Err(Error::InvalidInput(format!("separation must be >= 0, got {delta_r}")));
    }
    if delta_r == 0.0 || params.cn2 == 0.0 {
        return Ok(0.0);
    }
    let integrand = |kappa: f64| kappa * phase_psd(kappa, params, optics, slab_length) * math::one_minus_j0(kappa * delta_r);
    // Split at the first few J0 oscillations so the smooth low-frequency part
    // and the oscillatory tail are refined independently.
    let split = (20.0 / delta_r).clamp(k_min, k_max);
    let mut total = 0.0;
    if split > k_min {
        total += quad::integrate_log(integrand, k_min, split, 1e-9)?;
    }
    if split < k_max {
        total += quad::integrate_log(integrand, split, k_max, 1e-8)
            .map_err(|e| Error::Numerical(format!("structure function at dr = {delta_r} m: {e}")))?;
    }
    Ok(4.0 * PI * total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weak() -> (TurbulenceParams, OpticalParams) {
        (TurbulenceParams::new(5e-15, 1e-3, 80.0).unwrap(), OpticalParams::new(809e-9).unwrap())
    }

    #[test]
    fn spectrum_at_zero_frequency() {
        let p = TurbulenceParams::new(1.0, 1e-3, 80.0).unwrap();
        let want = 0.033 * ((11.0 / 3.0) * 80f64.ln()).exp();
        assert!((spectrum_phi_n(0.0, &p) / want - 1.0).abs() < 1e-14);
    }

    #[test]
    fn spectrum_vanishes_at_large_frequency_and_is_linear_in_cn2() {
        let (p, _) = weak();
        assert_eq!(spectrum_phi_n(1e6, &p), 0.0);
        let doubled = TurbulenceParams { cn2: 2.0 * p.cn2, ..p };
        for kappa in [0.0, 0.1, 10.0, 1000.0] {
            let r = spectrum_phi_n(kappa, &doubled) / spectrum_phi_n(kappa, &p);
            assert!((r - 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn spectrum_strictly_decreasing() {
        let (p, _) = weak();
        let mut prev = f64::INFINITY;
        for i in 0..100 {
            let kappa = 1e-3 * 1.15f64.powi(i);
            let v = spectrum_phi_n(kappa, &p);
            assert!(v < prev, "not decreasing at kappa = {kappa}");
            prev = v;
        }
    }

    #[test]
    fn phase_psd_ratio_and_linearity() {
        let (p, o) = weak();
        let k = o.wavenumber();
        for kappa in [0.01, 1.0, 500.0] {
            let ratio = phase_psd(kappa, &p, &o, 37.0) / spectrum_phi_n(kappa, &p);
            assert!((ratio / (2.0 * PI * 37.0 * k * k) - 1.0).abs() < 1e-14);
            let r2 = phase_psd(kappa, &p, &o, 100.0) / phase_psd(kappa, &p, &o, 50.0);
            assert!((r2 - 2.0).abs() < 1e-14);
        }
        assert_eq!(phase_psd(1.0, &p, &o, 0.0), 0.0);
    }

    #[test]
    fn phase_psd_hand_evaluation() {
        // kappa = 1, cn2 = 1e-14, lambda = 808 nm, l = 100 m, l0 = 1 mm, L0 = 80 m
        let p = TurbulenceParams::new(1e-14, 1e-3, 80.0).unwrap();
        let o = OpticalParams::new(808e-9).unwrap();
        let k = 2.0 * PI / 808e-9;
        let phi_n = 0.033e-14 * (-(1e-3 / (2.0 * PI)).powi(2)).exp() / (1.0 + 1.0 / 6400.0f64).powf(11.0 / 6.0);
        let want = 2.0 * PI * 100.0 * k * k * phi_n;
        assert!((phase_psd(1.0, &p, &o, 100.0) / want - 1.0).abs() < 1e-13);
        // 30-digit evaluation of the same expression
        assert!((want / 12.534_482_687_938_24 - 1.0).abs() < 1e-13, "{want}");
    }

    #[test]
    fn rytov_scaling_law() {
        let (p, o) = weak();
        let r = rytov_parameter(&p, &o, 2000.0) / rytov_parameter(&p, &o, 1000.0);
        assert!((r / 2f64.powf(11.0 / 6.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn screen_count_rule() {
        let (p, o) = weak();
        let m = screen_count(&p, &o, 1000.0, 0.1);
        assert!(rytov_parameter(&p, &o, 1000.0 / m as f64) <= 0.1);
        assert!(m == 1 || rytov_parameter(&p, &o, 1000.0 / (m - 1) as f64) > 0.1);
        let strong_p = TurbulenceParams::new(6e-16, 1e-3, 80.0).unwrap();
        let strong_o = OpticalParams::new(808e-9).unwrap();
        assert_eq!(screen_count(&strong_p, &strong_o, 50_000.0, 0.1), 24);
    }

    #[test]
    fn structure_function_basic_properties() {
        let p = TurbulenceParams::new(1e-14, 1e-3, 80.0).unwrap();
        let o = OpticalParams::new(808e-9).unwrap();
        assert_eq!(structure_function_theory(0.0, &p, &o, 100.0).unwrap(), 0.0);
        let mut prev = 0.0;
        for i in 0..30 {
            let dr = 1e-3 * 1.5f64.powi(i);
            if dr > p.outer_scale {
                break;
            }
            let d = structure_function_theory(dr, &p, &o, 100.0).unwrap();
            assert!(d >= prev, "D not monotone at dr = {dr}");
            prev = d;
        }
        // saturation to twice the phase variance far beyond the outer scale
        let (lo, hi) = theory_band(&p);
        let var = phase_variance_band(&p, &o, 100.0, lo, hi).unwrap();
        let far = structure_function_theory(20.0 * p.outer_scale, &p, &o, 100.0).unwrap();
        assert!((far / (2.0 * var) - 1.0).abs() < 0.02, "{far} vs {}", 2.0 * var);
    }

    #[test]
    fn structure_function_matches_kolmogorov_in_inertial_range() {
        // 2.914 k^2 C_n^2 l dr^(5/3) between the inner and outer scales
        let p = TurbulenceParams::new(1e-14, 1e-5, 1e4).unwrap();
        let o = OpticalParams::new(808e-9).unwrap();
        let k = o.wavenumber();
        let dr = 0.05;
        let d = structure_function_theory(dr, &p, &o, 100.0).unwrap();
        let kolmogorov = 2.914 * k * k * p.cn2 * 100.0 * dr.powf(5.0 / 3.0);
        assert!((d / kolmogorov - 1.0).abs() < 0.02, "{d} vs {kolmogorov}");
    }
}
