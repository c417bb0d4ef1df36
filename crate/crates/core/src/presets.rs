//! Built-in channel configurations and the desk-scale reduction.

use sha2::{Digest, Sha256};

use crate::optics::BeamSpec;
use crate::sampling::{ChannelConfig, ConditionalSpec, RingSpec};
use crate::screens::GridSpec;
use crate::turbulence::{OpticalParams, TurbulenceParams};
use crate::{Error, Result};

pub const DEFAULT_RELATIVE_APERTURES: [f64; 6] = [0.25, 0.5, 0.75, 1.0, 1.25, 1.5];
pub const DESK_MAX_SAMPLES: usize = 5000;
pub const DEFAULT_SEED: u64 = 1;

pub const PRESET_NAMES: [&str; 5] =
    ["weak-collimated", "weak-focused", "moderate-collimated", "moderate-focused", "strong-collimated"];

struct Channel {
    cn2: f64,
    path_length: f64,
    w0: f64,
    wavelength: f64,
    points: usize,
    step: f64,
    screens: usize,
    absorbing_boundary: bool,
}

const WEAK: Channel = Channel {
    cn2: 5e-15,
    path_length: 1_000.0,
    w0: 0.02,
    wavelength: 809e-9,
    points: 512,
    step: 0.3e-3,
    screens: 10,
    absorbing_boundary: false,
};

const MODERATE: Channel = Channel {
    cn2: 1.5e-14,
    path_length: 1_600.0,
    w0: 0.02,
    wavelength: 809e-9,
    points: 512,
    step: 0.4e-3,
    screens: 10,
    absorbing_boundary: false,
};

const STRONG: Channel = Channel {
    cn2: 6e-16,
    path_length: 50_000.0,
    w0: 0.06,
    wavelength: 808e-9,
    points: 4096,
    step: 1e-3,
    screens: 30,
    absorbing_boundary: true,
};

fn build(name: &str, c: &Channel, focused: bool) -> ChannelConfig {
    ChannelConfig {
        name: name.to_string(),
        beam: BeamSpec { w0: c.w0, f0: if focused { c.path_length } else { f64::INFINITY } },
        turbulence: TurbulenceParams { cn2: c.cn2, inner_scale: 1e-3, outer_scale: 80.0 },
        optics: OpticalParams { wavelength: c.wavelength },
        path_length: c.path_length,
        grid: GridSpec { points: c.points, step: c.step },
        screens: c.screens,
        rings: RingSpec::default(),
        aperture_radii: Vec::new(),
        relative_apertures: DEFAULT_RELATIVE_APERTURES.to_vec(),
        samples: 100_000,
        master_seed: DEFAULT_SEED,
        tracked: true,
        absorbing_boundary: c.absorbing_boundary,
        conditional: ConditionalSpec::default(),
        desk_scale: false,
    }
}

/// Paper-scale configuration for a named channel. `weak`, `moderate` and
/// `strong` alone select the collimated beam.
pub fn preset(name: &str) -> Result<ChannelConfig> {
    let canonical = match name {
        "weak" => "weak-collimated",
        "moderate" => "moderate-collimated",
        "strong" => "strong-collimated",
        other => other,
    };
    let cfg = match canonical {
        "weak-collimated" => build(canonical, &WEAK, false),
        "weak-focused" => build(canonical, &WEAK, true),
        "moderate-collimated" => build(canonical, &MODERATE, false),
        "moderate-focused" => build(canonical, &MODERATE, true),
        "strong-collimated" => build(canonical, &STRONG, false),
        _ => {
            return Err(Error::config(
                "preset",
                format!("unknown preset `{name}`; expected one of {}", PRESET_NAMES.join(", ")),
            ))
        }
    };
    Ok(cfg)
}

/// Halves the grid resolution at fixed physical width and caps the sample
/// count.
pub fn desk_scale(config: &ChannelConfig) -> ChannelConfig {
    let mut c = config.clone();
    if !c.desk_scale {
        if c.grid.points >= 128 {
            c.grid.points /= 2;
            c.grid.step *= 2.0;
        }
        c.samples = c.samples.min(DESK_MAX_SAMPLES);
        c.desk_scale = true;
    }
    c
}

/// Canonical text of a configuration: the serialized form of the parsed
/// value, so field order and formatting of the source do not matter.
pub fn canonical_config(config: &ChannelConfig) -> Result<String> {
    config.to_toml()
}

/// Hex SHA-256 of the canonical configuration text.
pub fn config_hash(config: &ChannelConfig) -> Result<String> {
    let digest = Sha256::digest(canonical_config(config)?.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
