//! TOML scene description.
//!
//! ```toml
//! [array]
//! m = 6                      # elements along x
//! n = 6                      # elements along y
//! spacing_wavelengths = 0.5  # optional, default 0.5
//! wavelength_m = 1.6e-3      # optional, default 1.6e-3
//!
//! [frame]
//! subframes = 10             # L
//! symbols_per_subframe = 100 # T
//! sampling_hz = 1e5          # optional, default 1e5
//! psk_order = 16             # optional, default 16
//!
//! [defects]
//! kind = "stochastic"        # or "ideal" (remaining keys then ignored)
//! nu = 0.5
//! sigma_r = 1.0
//! mu = 0.0                   # optional, default 0
//! kappa = 1000.0
//!
//! [noise]
//! snr_db = 8.0               # or: variance = 1e-13
//!
//! [[drones]]
//! azimuth_deg = 20.0
//! elevation_deg = 20.0
//! doppler_hz = 2000.0
//! tx_power_w = 1.0           # optional, default 1
//! range_m = 100.0            # optional, default 100
//! velocity_mps = 3.4         # optional; checked against doppler_hz
//! ```
//!
//! An optional `[experiment]` table is passed through untouched for the
//! harness.

use serde::Deserialize;
use thiserror::Error;

use super::{
    ArrayConfig, DefectParams, DroneTruth, FrameConfig, GainPhaseModel, Modulation, NoiseModel, SceneConfig,
    SceneError,
};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl From<SceneError> for ConfigError {
    fn from(e: SceneError) -> Self {
        match e {
            SceneError::Invalid { field, reason } => ConfigError { field, message: reason },
            other => ConfigError {
                field: "scene".into(),
                message: other.to_string(),
            },
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArray {
    m: usize,
    n: usize,
    spacing_wavelengths: Option<f64>,
    wavelength_m: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFrame {
    subframes: usize,
    symbols_per_subframe: usize,
    sampling_hz: Option<f64>,
    psk_order: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDefects {
    kind: String,
    nu: Option<f64>,
    sigma_r: Option<f64>,
    mu: Option<f64>,
    kappa: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNoise {
    snr_db: Option<f64>,
    variance: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDrone {
    azimuth_deg: f64,
    elevation_deg: f64,
    doppler_hz: f64,
    tx_power_w: Option<f64>,
    range_m: Option<f64>,
    velocity_mps: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScene {
    array: RawArray,
    frame: RawFrame,
    defects: Option<RawDefects>,
    noise: RawNoise,
    drones: Vec<RawDrone>,
    experiment: Option<toml::Table>,
}

/// A validated scene plus the untouched `[experiment]` table, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScene {
    pub scene: SceneConfig,
    pub frame: FrameConfig,
    pub defects: GainPhaseModel,
    pub noise: NoiseModel,
    pub experiment: Option<toml::Table>,
}

fn field_of(message: &str) -> String {
    // toml reports e.g. "unknown field `x`" or "missing field `y`"; keep the
    // message and point at the innermost key when one is named
    message
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "config".to_string())
}

pub fn parse_scene(text: &str) -> Result<LoadedScene, ConfigError> {
    let raw: RawScene = toml::from_str(text).map_err(|e| {
        let msg = e.message().to_string();
        let field = field_of(&msg);
        let location = e
            .span()
            .map(|s| {
                let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
                format!(" (line {line})")
            })
            .unwrap_or_default();
        ConfigError {
            field,
            message: format!("{msg}{location}"),
        }
    })?;

    let array = ArrayConfig {
        m_count: raw.array.m,
        n_count: raw.array.n,
        spacing_wavelengths: raw.array.spacing_wavelengths.unwrap_or(0.5),
        wavelength_m: raw.array.wavelength_m.unwrap_or(1.6e-3),
    };
    array.validate()?;

    let frame = FrameConfig {
        subframes: raw.frame.subframes,
        symbols_per_subframe: raw.frame.symbols_per_subframe,
        sampling_hz: raw.frame.sampling_hz.unwrap_or(1e5),
        modulation: Modulation::Psk(raw.frame.psk_order.unwrap_or(16)),
    };
    frame.validate()?;

    let defects = match raw.defects {
        None => GainPhaseModel::Ideal,
        Some(d) => match d.kind.as_str() {
            "ideal" => GainPhaseModel::Ideal,
            "stochastic" => {
                let need = |v: Option<f64>, name: &str| {
                    v.ok_or_else(|| ConfigError {
                        field: format!("defects.{name}"),
                        message: "required when kind = \"stochastic\"".into(),
                    })
                };
                GainPhaseModel::Stochastic(DefectParams {
                    nu: need(d.nu, "nu")?,
                    sigma_r: need(d.sigma_r, "sigma_r")?,
                    mu: d.mu.unwrap_or(0.0),
                    kappa: need(d.kappa, "kappa")?,
                })
            }
            other => {
                return Err(ConfigError {
                    field: "defects.kind".into(),
                    message: format!("expected \"ideal\" or \"stochastic\", got \"{other}\""),
                })
            }
        },
    };
    defects.validate()?;

    let noise = match (raw.noise.snr_db, raw.noise.variance) {
        (Some(db), None) => NoiseModel::SnrDb(db),
        (None, Some(v)) => NoiseModel::Variance(v),
        _ => {
            return Err(ConfigError {
                field: "noise".into(),
                message: "give exactly one of snr_db or variance".into(),
            })
        }
    };
    noise.validate()?;

    let drones = raw
        .drones
        .iter()
        .map(|d| DroneTruth {
            azimuth_rad: d.azimuth_deg.to_radians(),
            elevation_rad: d.elevation_deg.to_radians(),
            doppler_hz: d.doppler_hz,
            tx_power_w: d.tx_power_w.unwrap_or(1.0),
            range_m: d.range_m.unwrap_or(100.0),
            velocity_mps: d.velocity_mps,
        })
        .collect();
    let scene = SceneConfig { array, drones };
    scene.validate()?;
    if scene.k() > scene.array.size() {
        return Err(ConfigError {
            field: "drones".into(),
            message: format!("{} drones exceed the {} array elements", scene.k(), scene.array.size()),
        });
    }
    Ok(LoadedScene {
        scene,
        frame,
        defects,
        noise,
        experiment: raw.experiment,
    })
}

pub fn load_scene(path: &std::path::Path) -> Result<LoadedScene, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        field: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_scene(&text)
}
