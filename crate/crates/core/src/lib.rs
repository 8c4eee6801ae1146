//! Localisation and data detection for multi-drone uplinks received at a
//! uniform rectangular array with per-antenna gain-phase defects.
//!
//! Modules follow the processing chain: [`scene`] synthesizes frames,
//! [`locate`] and [`jointdet`] estimate angles, Doppler and symbols,
//! [`comms`] combines and measures link quality, [`analytics`] predicts
//! bounds and rates in closed form, and [`harness`] runs Monte Carlo sweeps.

pub mod analytics;
pub mod comms;
pub mod harness;
pub mod jointdet;
pub mod locate;
pub mod oracle;
pub mod scene;
pub mod specfun;
pub mod stats;

pub use num_complex::Complex64 as C64;
