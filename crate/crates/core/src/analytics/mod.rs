//! Closed-form performance predictions: the Slepian–Bangs CRLB for
//! (φ, θ, f_D) and the average sum data rate under estimated channels, with
//! the expectation machinery both rely on.

mod expect;
mod fim;
mod sdr;

use thiserror::Error;

use crate::locate::LocateError;
use crate::scene::SceneError;
use crate::specfun::SpecfunError;

pub use expect::{
    channel_moment_2, channel_moment_4, expectation_e3, noise_moments, Bounds, EstimatorSpread, NoiseMoments,
    SteeringStats,
};
pub use fim::{fim, fim_for_scene, mean_derivatives, FimResult};
pub use sdr::{sdr_monte_carlo, sdr_predict, DroneRate, RateMethod, SdrMonteCarlo, SdrPrediction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error(transparent)]
    Specfun(#[from] SpecfunError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Locate(#[from] LocateError),
    #[error("invalid argument: {0}")]
    Invalid(String),
}
