//! Pilot-based localisation: moment model of the stacked pilots, grid
//! maximum likelihood, alternating-optimisation ML and MUSIC.
//!
//! Stacked pilots are ordered ȳ = [y_{0,1}; …; y_{0,L}], so entry
//! `l * MN + i` is antenna `i` in (zero-based) subframe `l`.

mod aoml;
mod moments;
mod mle;
mod music;
pub(crate) mod search;

pub use aoml::{aoml_estimate, AomlOutcome, TraceEntry};
pub use mle::{mle_estimate, objective, MleOutcome, Weighting};
pub use moments::{build_moments, MomentModel};
pub(crate) use moments::pilot_response;
pub use music::{music_estimate, music_estimate_with, MusicOptions, MusicOutcome};
pub use search::SteeringTable;

use itertools::Itertools;
use thiserror::Error;

use crate::scene::{ArrayConfig, DefectMoments, FrameConfig, GainPhaseModel, SceneConfig, SceneError};
use crate::specfun::SeriesPolicy;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocateError {
    #[error("observation length {got} does not match MN*L = {want}")]
    ObservationShape { got: usize, want: usize },
    #[error("MUSIC found {found} spectrum peaks, {wanted} requested")]
    RankDeficient { found: usize, wanted: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

/// β = [φᵀ, θᵀ, f_Dᵀ]ᵀ; angles in radians, Doppler in Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub azimuths: Vec<f64>,
    pub elevations: Vec<f64>,
    pub dopplers: Vec<f64>,
}

impl ParamVector {
    pub fn k(&self) -> usize {
        self.azimuths.len()
    }

    pub fn from_scene(scene: &SceneConfig) -> Self {
        Self {
            azimuths: scene.drones.iter().map(|d| d.azimuth_rad).collect(),
            elevations: scene.drones.iter().map(|d| d.elevation_rad).collect(),
            dopplers: scene.drones.iter().map(|d| d.doppler_hz).collect(),
        }
    }

    /// Flat (φ₁..φ_K, θ₁..θ_K, f₁..f_K).
    pub fn to_flat(&self) -> Vec<f64> {
        self.azimuths
            .iter()
            .chain(&self.elevations)
            .chain(&self.dopplers)
            .copied()
            .collect()
    }

    pub fn from_flat(v: &[f64]) -> Self {
        let k = v.len() / 3;
        Self {
            azimuths: v[..k].to_vec(),
            elevations: v[k..2 * k].to_vec(),
            dopplers: v[2 * k..].to_vec(),
        }
    }

    /// Same parameters with drone order permuted: entry k of the result is
    /// entry `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            azimuths: perm.iter().map(|&p| self.azimuths[p]).collect(),
            elevations: perm.iter().map(|&p| self.elevations[p]).collect(),
            dopplers: perm.iter().map(|&p| self.dopplers[p]).collect(),
        }
    }

    /// Distance in normalized units: angles in degrees, Doppler in 100 Hz.
    pub fn normalized_distance(&self, other: &Self) -> f64 {
        let mut s = 0.0;
        for k in 0..self.k() {
            s += (self.azimuths[k] - other.azimuths[k]).to_degrees().powi(2);
            s += (self.elevations[k] - other.elevations[k]).to_degrees().powi(2);
            s += ((self.dopplers[k] - other.dopplers[k]) / 100.0).powi(2);
        }
        s.sqrt()
    }

    pub fn validate(&self) -> Result<(), LocateError> {
        let k = self.azimuths.len();
        if self.elevations.len() != k || self.dopplers.len() != k {
            return Err(LocateError::Invalid("parameter blocks differ in length".into()));
        }
        if self.to_flat().iter().any(|x| !x.is_finite()) {
            return Err(LocateError::Invalid("parameters must be finite".into()));
        }
        Ok(())
    }
}

/// Search ranges and coarse-to-fine refinement. Angles in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub azimuth_range: (f64, f64),
    pub azimuth_step: f64,
    pub elevation_range: (f64, f64),
    pub elevation_step: f64,
    pub doppler_range: (f64, f64),
    pub doppler_step: f64,
    pub refine_levels: usize,
    pub refine_shrink: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            azimuth_range: (1f64.to_radians(), 89f64.to_radians()),
            azimuth_step: 1f64.to_radians(),
            elevation_range: (1f64.to_radians(), 89f64.to_radians()),
            elevation_step: 1f64.to_radians(),
            doppler_range: (0.0, 10_000.0),
            doppler_step: 100.0,
            refine_levels: 3,
            refine_shrink: 0.2,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), LocateError> {
        let ok = |(lo, hi): (f64, f64), step: f64| lo <= hi && step > 0.0 && lo.is_finite() && hi.is_finite();
        if !ok(self.azimuth_range, self.azimuth_step)
            || !ok(self.elevation_range, self.elevation_step)
            || !ok(self.doppler_range, self.doppler_step)
        {
            return Err(LocateError::Invalid("grid ranges must be nonempty with positive steps".into()));
        }
        if !(self.refine_shrink > 0.0 && self.refine_shrink < 1.0) {
            return Err(LocateError::Invalid("refine_shrink must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn azimuths(&self) -> Vec<f64> {
        axis(self.azimuth_range, self.azimuth_step)
    }

    pub fn elevations(&self) -> Vec<f64> {
        axis(self.elevation_range, self.elevation_step)
    }

    pub fn dopplers(&self) -> Vec<f64> {
        axis(self.doppler_range, self.doppler_step)
    }

    /// Step sizes after the last refinement level.
    pub fn finest_steps(&self) -> (f64, f64, f64) {
        let s = self.refine_shrink.powi(self.refine_levels as i32);
        (self.azimuth_step * s, self.elevation_step * s, self.doppler_step * s)
    }
}

pub(crate) fn axis((lo, hi): (f64, f64), step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    (0..n).map(|i| lo + i as f64 * step).collect()
}

/// Points `center + j·step`, |j| ≤ half, clipped to `range`.
pub(crate) fn local_axis(center: f64, step: f64, half: usize, range: (f64, f64)) -> Vec<f64> {
    let h = half as i64;
    (-h..=h)
        .map(|j| center + j as f64 * step)
        .filter(|x| *x >= range.0 - 1e-12 && *x <= range.1 + 1e-12)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub epsilon: f64,
    pub max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            max_iters: 50,
        }
    }
}

/// Everything the moment model needs besides the hypothesized β.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelContext {
    pub array: ArrayConfig,
    pub frame: FrameConfig,
    /// √P_k η_k per drone.
    pub amplitudes: Vec<f64>,
    pub defects: DefectMoments,
    pub noise_variance: f64,
}

impl ModelContext {
    pub fn new(
        scene: &SceneConfig,
        frame: &FrameConfig,
        error: &GainPhaseModel,
        noise_variance: f64,
        policy: &SeriesPolicy,
    ) -> Result<Self, LocateError> {
        Ok(Self {
            array: scene.array,
            frame: *frame,
            amplitudes: scene.amplitudes(),
            defects: error.moments(policy)?,
            noise_variance,
        })
    }

    pub fn subframes(&self) -> usize {
        self.frame.subframes
    }

    /// Same context restricted to the first `l` pilots.
    pub fn with_subframes(&self, l: usize) -> Self {
        let mut c = self.clone();
        c.frame.subframes = l;
        c
    }
}

/// Assignment of estimates to truth labels minimizing the summed angular
/// distance √(Δφ² + Δθ²). Entry k is the estimate index matched to truth k.
/// Exhaustive over permutations; ties keep the first permutation in
/// lexicographic order.
pub fn match_to_truth(estimates: &ParamVector, truth: &ParamVector) -> Vec<usize> {
    let k = truth.k();
    assert_eq!(estimates.k(), k, "estimate and truth counts differ");
    let cost = |t: usize, e: usize| {
        ((estimates.azimuths[e] - truth.azimuths[t]).powi(2) + (estimates.elevations[e] - truth.elevations[t]).powi(2))
            .sqrt()
    };
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in (0..k).permutations(k) {
        let c: f64 = perm.iter().enumerate().map(|(t, &e)| cost(t, e)).sum();
        if best.as_ref().is_none_or(|(bc, _)| c < *bc) {
            best = Some((c, perm));
        }
    }
    best.map(|(_, p)| p).unwrap_or_default()
}
