//! Array geometry, emitter truth, gain-phase defect models and frame synthesis.
//!
//! Received samples follow y_{t,l} = Ã ω(l) s_{t,l} + n with
//! ω(l) = diag(η_k e^{j2π f_{D,k} l / f_s}) for l = 1..L. Subframe `l` in this
//! crate is zero-based, so storage index `l` carries the rotation of
//! subframe l + 1.
//!
//! SNR convention: `snr_db = 10 log10(Σ_k P_k η_k² / σ²)`, the aggregate
//! received pilot power per antenna over the noise variance per antenna.

pub mod config;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::specfun::{rician_moment, vonmises_char, SeriesPolicy, SpecfunError};

pub type C64 = Complex64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("{k} sources exceed the {mn} array degrees of freedom")]
    TooManySources { k: usize, mn: usize },
    #[error(transparent)]
    Specfun(#[from] SpecfunError),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> SceneError {
    SceneError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayConfig {
    pub m_count: usize,
    pub n_count: usize,
    pub spacing_wavelengths: f64,
    pub wavelength_m: f64,
}

impl ArrayConfig {
    pub fn new(m_count: usize, n_count: usize, spacing_wavelengths: f64, wavelength_m: f64) -> Result<Self, SceneError> {
        let a = Self {
            m_count,
            n_count,
            spacing_wavelengths,
            wavelength_m,
        };
        a.validate()?;
        Ok(a)
    }

    /// Half-wavelength URA at the default 1.6 mm wavelength.
    pub fn half_wavelength(m_count: usize, n_count: usize) -> Self {
        Self {
            m_count,
            n_count,
            spacing_wavelengths: 0.5,
            wavelength_m: 1.6e-3,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.m_count < 1 {
            return Err(invalid("array.m", "must be at least 1"));
        }
        if self.n_count < 1 {
            return Err(invalid("array.n", "must be at least 1"));
        }
        if !(self.spacing_wavelengths > 0.0 && self.spacing_wavelengths.is_finite()) {
            return Err(invalid("array.spacing_wavelengths", "must be positive"));
        }
        if !(self.wavelength_m > 0.0 && self.wavelength_m.is_finite()) {
            return Err(invalid("array.wavelength_m", "must be positive"));
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.m_count * self.n_count
    }

    pub fn spacing_m(&self) -> f64 {
        self.spacing_wavelengths * self.wavelength_m
    }

    /// Zero-based (m−1, n−1) of flat element index `i` (row-major).
    pub fn element(&self, i: usize) -> (usize, usize) {
        (i / self.n_count, i % self.n_count)
    }
}

/// a_{m,n}(φ, θ) = exp(−j2π[(m−1)d cosφ sinθ + (n−1)d sinφ sinθ]/λ), row-major
/// over (m, n).
pub fn steering_vector(array: &ArrayConfig, azimuth_rad: f64, elevation_rad: f64) -> DVector<C64> {
    let mut out = DVector::from_element(array.size(), C64::new(0.0, 0.0));
    fill_steering(array, azimuth_rad, elevation_rad, out.as_mut_slice());
    out
}

/// Writes the steering vector into `out` (length MN).
pub fn fill_steering(array: &ArrayConfig, azimuth_rad: f64, elevation_rad: f64, out: &mut [C64]) {
    let k = 2.0 * PI * array.spacing_wavelengths;
    let st = elevation_rad.sin();
    let u = k * azimuth_rad.cos() * st;
    let v = k * azimuth_rad.sin() * st;
    let n = array.n_count;
    for m in 0..array.m_count {
        for nn in 0..n {
            let phase = -(m as f64 * u + nn as f64 * v);
            out[m * n + nn] = C64::from_polar(1.0, phase);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroneTruth {
    pub azimuth_rad: f64,
    pub elevation_rad: f64,
    pub doppler_hz: f64,
    pub tx_power_w: f64,
    pub range_m: f64,
    pub velocity_mps: Option<f64>,
}

impl DroneTruth {
    pub fn from_degrees(azimuth_deg: f64, elevation_deg: f64, doppler_hz: f64) -> Self {
        Self {
            azimuth_rad: azimuth_deg.to_radians(),
            elevation_rad: elevation_deg.to_radians(),
            doppler_hz,
            tx_power_w: 1.0,
            range_m: 100.0,
            velocity_mps: None,
        }
    }

    pub fn with_power(mut self, p: f64) -> Self {
        self.tx_power_w = p;
        self
    }

    pub fn with_range(mut self, r: f64) -> Self {
        self.range_m = r;
        self
    }

    pub fn with_velocity(mut self, v: f64) -> Self {
        self.velocity_mps = Some(v);
        self
    }

    /// η = λ / (4π d).
    pub fn path_loss(&self, wavelength_m: f64) -> f64 {
        wavelength_m / (4.0 * PI * self.range_m)
    }

    pub fn validate(&self, index: usize, wavelength_m: f64) -> Result<(), SceneError> {
        let f = |name: &str| format!("drones[{index}].{name}");
        let open_quarter = |x: f64| x > 0.0 && x < PI / 2.0;
        if !open_quarter(self.azimuth_rad) {
            return Err(invalid(f("azimuth"), "must lie in (0, 90) degrees"));
        }
        if !open_quarter(self.elevation_rad) {
            return Err(invalid(f("elevation"), "must lie in (0, 90) degrees"));
        }
        if !self.doppler_hz.is_finite() {
            return Err(invalid(f("doppler_hz"), "must be finite"));
        }
        if !(self.tx_power_w > 0.0 && self.tx_power_w.is_finite()) {
            return Err(invalid(f("tx_power_w"), "must be positive"));
        }
        if !(self.range_m > 0.0 && self.range_m.is_finite()) {
            return Err(invalid(f("range_m"), "must be positive"));
        }
        if let Some(v) = self.velocity_mps {
            let implied = v * self.elevation_rad.cos() / wavelength_m;
            let tol = 0.05 * implied.abs().max(1.0);
            if (implied - self.doppler_hz).abs() > tol {
                return Err(invalid(
                    f("velocity_mps"),
                    format!(
                        "implies Doppler {implied:.1} Hz (v cos(theta) / lambda), but doppler_hz is {}",
                        self.doppler_hz
                    ),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefectParams {
    /// Rician location ν.
    pub nu: f64,
    /// Rician scale σ_r.
    pub sigma_r: f64,
    /// von Mises mean μ̃.
    pub mu: f64,
    /// von Mises concentration k̃.
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GainPhaseModel {
    Ideal,
    Stochastic(DefectParams),
}

impl GainPhaseModel {
    pub fn stochastic(nu: f64, sigma_r: f64, kappa: f64) -> Self {
        Self::Stochastic(DefectParams {
            nu,
            sigma_r,
            mu: 0.0,
            kappa,
        })
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if let Self::Stochastic(p) = self {
            if !(p.nu >= 0.0 && p.nu.is_finite()) {
                return Err(invalid("defects.nu", "must be non-negative"));
            }
            if !(p.sigma_r > 0.0 && p.sigma_r.is_finite()) {
                return Err(invalid("defects.sigma_r", "must be positive"));
            }
            if !(p.kappa > 0.0 && p.kappa.is_finite()) {
                return Err(invalid("defects.kappa", "must be positive"));
            }
            if !p.mu.is_finite() || p.mu.abs() > PI {
                return Err(invalid("defects.mu", "must lie in [-pi, pi]"));
            }
        }
        Ok(())
    }

    /// Expectations of the per-antenna defect used by the moment models.
    pub fn moments(&self, policy: &SeriesPolicy) -> Result<DefectMoments, SceneError> {
        match self {
            Self::Ideal => Ok(DefectMoments::ideal()),
            Self::Stochastic(p) => {
                let mut gain = [1.0; 5];
                for (c, g) in gain.iter_mut().enumerate().skip(1) {
                    *g = rician_moment(c as u32, p.nu, p.sigma_r, policy)?.value;
                }
                let full = (-PI, PI);
                let phase1 = vonmises_char(1.0, 1, p.mu, p.kappa, full, policy)?.value;
                let phase2 = vonmises_char(2.0, 1, p.mu, p.kappa, full, policy)?.value;
                Ok(DefectMoments { gain, phase1, phase2 })
            }
        }
    }
}

/// E[α^c] for c = 0..4 and E[e^{jΔδ}], E[e^{j2Δδ}]. Negative multiples are
/// the conjugates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefectMoments {
    pub gain: [f64; 5],
    pub phase1: C64,
    pub phase2: C64,
}

impl DefectMoments {
    pub fn ideal() -> Self {
        Self {
            gain: [1.0; 5],
            phase1: C64::new(1.0, 0.0),
            phase2: C64::new(1.0, 0.0),
        }
    }

    /// E[α e^{jΔδ}] = E[ã]/a.
    pub fn mean_factor(&self) -> C64 {
        self.phase1 * self.gain[1]
    }

    /// E[|ã|²] − |E[ã]|² per antenna, in units of |a|².
    pub fn excess_power(&self) -> f64 {
        (self.gain[2] - self.mean_factor().norm_sqr()).max(0.0)
    }

    /// E[e^{jcΔδ}] for c ∈ {−2..2}.
    pub fn phase(&self, c: i32) -> C64 {
        match c {
            0 => C64::new(1.0, 0.0),
            1 => self.phase1,
            -1 => self.phase1.conj(),
            2 => self.phase2,
            -2 => self.phase2.conj(),
            _ => panic!("phase multiple {c} outside the supported range"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modulation {
    Psk(u32),
}

impl Modulation {
    pub fn order(&self) -> u32 {
        match self {
            Self::Psk(m) => *m,
        }
    }

    pub fn symbol(&self, index: u32) -> C64 {
        let m = self.order() as f64;
        C64::from_polar(1.0, 2.0 * PI * index as f64 / m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameConfig {
    pub subframes: usize,
    pub symbols_per_subframe: usize,
    pub sampling_hz: f64,
    pub modulation: Modulation,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            subframes: 1,
            symbols_per_subframe: 100,
            sampling_hz: 1e5,
            modulation: Modulation::Psk(16),
        }
    }
}

impl FrameConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.subframes < 1 {
            return Err(invalid("frame.subframes", "must be at least 1"));
        }
        if !(self.sampling_hz > 0.0 && self.sampling_hz.is_finite()) {
            return Err(invalid("frame.sampling_hz", "must be positive"));
        }
        let m = self.modulation.order();
        if ![2, 4, 8, 16].contains(&m) {
            return Err(invalid("frame.psk_order", "must be one of 2, 4, 8, 16"));
        }
        Ok(())
    }

    /// Doppler phase 2π f l / f_s for zero-based subframe `l`.
    pub fn doppler_phase(&self, doppler_hz: f64, l: usize) -> f64 {
        2.0 * PI * doppler_hz * (l + 1) as f64 / self.sampling_hz
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    Variance(f64),
    SnrDb(f64),
}

impl NoiseModel {
    pub fn variance(&self, scene: &SceneConfig) -> f64 {
        match *self {
            Self::Variance(v) => v,
            Self::SnrDb(db) => scene.received_power() / 10f64.powf(db / 10.0),
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        match *self {
            Self::Variance(v) if !(v >= 0.0 && v.is_finite()) => {
                Err(invalid("noise.variance", "must be finite and non-negative"))
            }
            Self::SnrDb(db) if !db.is_finite() => Err(invalid("noise.snr_db", "must be finite")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub array: ArrayConfig,
    pub drones: Vec<DroneTruth>,
}

impl SceneConfig {
    pub fn new(array: ArrayConfig, drones: Vec<DroneTruth>) -> Result<Self, SceneError> {
        let s = Self { array, drones };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        self.array.validate()?;
        if self.drones.is_empty() {
            return Err(invalid("drones", "at least one drone is required"));
        }
        for (i, d) in self.drones.iter().enumerate() {
            d.validate(i, self.array.wavelength_m)?;
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.drones.len()
    }

    pub fn path_losses(&self) -> Vec<f64> {
        self.drones.iter().map(|d| d.path_loss(self.array.wavelength_m)).collect()
    }

    /// Σ_k P_k η_k².
    pub fn received_power(&self) -> f64 {
        self.drones
            .iter()
            .map(|d| d.tx_power_w * d.path_loss(self.array.wavelength_m).powi(2))
            .sum()
    }

    /// Per-drone amplitude √P_k η_k.
    pub fn amplitudes(&self) -> Vec<f64> {
        self.drones
            .iter()
            .map(|d| d.tx_power_w.sqrt() * d.path_loss(self.array.wavelength_m))
            .collect()
    }

    pub fn steering_matrix(&self) -> DMatrix<C64> {
        let mn = self.array.size();
        let mut a = DMatrix::from_element(mn, self.k(), C64::new(0.0, 0.0));
        for (k, d) in self.drones.iter().enumerate() {
            let v = steering_vector(&self.array, d.azimuth_rad, d.elevation_rad);
            a.set_column(k, &v);
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// Error-free steering matrix A (MN × K).
    pub steering: DMatrix<C64>,
    pub gains: Vec<f64>,
    pub phases: Vec<f64>,
    /// ω(l) per subframe, each of length K.
    pub rotations: Vec<Vec<C64>>,
}

impl ChannelRealization {
    /// ã_{m,n} = α_{m,n} e^{jΔδ_{m,n}} a_{m,n}, as an MN × K matrix.
    pub fn defective_steering(&self) -> DMatrix<C64> {
        let mut a = self.steering.clone();
        for i in 0..a.nrows() {
            let g = C64::from_polar(self.gains[i], self.phases[i]);
            for k in 0..a.ncols() {
                a[(i, k)] *= g;
            }
        }
        a
    }

    /// Ã ω(l) √P: the effective channel of every drone in subframe `l`
    /// (columns h_k, including transmit amplitude).
    pub fn effective_channel(&self, l: usize, powers: &[f64]) -> DMatrix<C64> {
        let mut h = self.defective_steering();
        for k in 0..h.ncols() {
            let s = self.rotations[l][k] * powers[k].sqrt();
            for i in 0..h.nrows() {
                h[(i, k)] *= s;
            }
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedFrame {
    /// One MN × (T+1) matrix per subframe; column 0 is the pilot.
    pub samples: Vec<DMatrix<C64>>,
    pub realization: ChannelRealization,
    pub noise: Vec<DMatrix<C64>>,
    /// One K × T matrix of symbol indices per subframe.
    pub symbols: Vec<DMatrix<u32>>,
    pub noise_variance: f64,
    pub powers: Vec<f64>,
}

impl ReceivedFrame {
    /// Pilot columns stacked as ȳ = [y_{0,1}; …; y_{0,L}] (length MN·L).
    pub fn stacked_pilots(&self) -> DVector<C64> {
        let mn = self.samples[0].nrows();
        let l = self.samples.len();
        let mut out = DVector::from_element(mn * l, C64::new(0.0, 0.0));
        for (li, s) in self.samples.iter().enumerate() {
            out.rows_mut(li * mn, mn).copy_from(&s.column(0));
        }
        out
    }

    /// Pilot columns of the first `l` subframes as an MN × l matrix.
    pub fn pilot_snapshots(&self, l: usize) -> DMatrix<C64> {
        let mn = self.samples[0].nrows();
        let mut out = DMatrix::from_element(mn, l, C64::new(0.0, 0.0));
        for li in 0..l {
            out.set_column(li, &self.samples[li].column(0));
        }
        out
    }
}

/// Rician(ν, σ) draw: |ν + σ(X + jY)|.
fn draw_rician<R: Rng>(rng: &mut R, nu: f64, sigma: f64) -> f64 {
    let x: f64 = rng.sample(StandardNormal);
    let y: f64 = rng.sample(StandardNormal);
    ((nu + sigma * x).powi(2) + (sigma * y).powi(2)).sqrt()
}

/// von Mises(μ, κ) draw by the Best–Fisher rejection scheme, wrapped to
/// [−π, π].
fn draw_vonmises<R: Rng>(rng: &mut R, mu: f64, kappa: f64) -> f64 {
    let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let u1: f64 = rng.random();
        let z = (PI * u1).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = kappa * (r - f);
        let u2: f64 = rng.random();
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            let u3: f64 = rng.random();
            let theta = if u3 > 0.5 { f.acos() } else { -f.acos() };
            let mut x = theta + mu;
            if x > PI {
                x -= 2.0 * PI;
            } else if x < -PI {
                x += 2.0 * PI;
            }
            return x;
        }
    }
}

pub(crate) fn defects_from_rng<R: Rng>(model: &GainPhaseModel, mn: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    match model {
        GainPhaseModel::Ideal => (vec![1.0; mn], vec![0.0; mn]),
        GainPhaseModel::Stochastic(p) => {
            let gains = (0..mn).map(|_| draw_rician(rng, p.nu, p.sigma_r)).collect();
            let phases = (0..mn).map(|_| draw_vonmises(rng, p.mu, p.kappa)).collect();
            (gains, phases)
        }
    }
}

/// Per-antenna (α, Δδ) draws for one frame.
pub fn sample_defects(model: &GainPhaseModel, array: &ArrayConfig, seed: u64) -> Result<(Vec<f64>, Vec<f64>), SceneError> {
    model.validate()?;
    array.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(defects_from_rng(model, array.size(), &mut rng))
}

pub(crate) fn complex_gaussian<R: Rng>(rng: &mut R, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let x: f64 = rng.sample(StandardNormal);
    let y: f64 = rng.sample(StandardNormal);
    C64::new(s * x, s * y)
}

pub fn synthesize_frame(
    scene: &SceneConfig,
    frame: &FrameConfig,
    error: &GainPhaseModel,
    noise: &NoiseModel,
    seed: u64,
) -> Result<ReceivedFrame, SceneError> {
    synthesize_frame_with(scene, frame, error, noise, seed, None)
}

/// As [`synthesize_frame`], optionally with a fixed payload (one K × T index
/// matrix per subframe) instead of random symbols.
///
/// Draw order from the seeded stream: defects, then symbols, then noise.
pub fn synthesize_frame_with(
    scene: &SceneConfig,
    frame: &FrameConfig,
    error: &GainPhaseModel,
    noise: &NoiseModel,
    seed: u64,
    payload: Option<&[DMatrix<u32>]>,
) -> Result<ReceivedFrame, SceneError> {
    scene.validate()?;
    frame.validate()?;
    error.validate()?;
    noise.validate()?;
    let mn = scene.array.size();
    let k = scene.k();
    if k > mn {
        return Err(SceneError::TooManySources { k, mn });
    }
    let l_count = frame.subframes;
    let t_count = frame.symbols_per_subframe;
    let order = frame.modulation.order();
    if let Some(p) = payload {
        if p.len() != l_count || p.iter().any(|m| m.nrows() != k || m.ncols() != t_count) {
            return Err(invalid("payload", "must hold one K x T matrix per subframe"));
        }
        if p.iter().any(|m| m.iter().any(|&s| s >= order)) {
            return Err(invalid("payload", "symbol index outside the constellation"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (gains, phases) = defects_from_rng(error, mn, &mut rng);

    let symbols: Vec<DMatrix<u32>> = match payload {
        Some(p) => p.to_vec(),
        None => (0..l_count)
            .map(|_| DMatrix::from_fn(k, t_count, |_, _| rng.random_range(0..order)))
            .collect(),
    };

    let etas = scene.path_losses();
    let rotations: Vec<Vec<C64>> = (0..l_count)
        .map(|l| {
            scene
                .drones
                .iter()
                .zip(&etas)
                .map(|(d, &eta)| C64::from_polar(eta, frame.doppler_phase(d.doppler_hz, l)))
                .collect()
        })
        .collect();
    let realization = ChannelRealization {
        steering: scene.steering_matrix(),
        gains,
        phases,
        rotations,
    };
    let powers: Vec<f64> = scene.drones.iter().map(|d| d.tx_power_w).collect();
    let sigma2 = noise.variance(scene);

    let mut samples = Vec::with_capacity(l_count);
    let mut noises = Vec::with_capacity(l_count);
    for l in 0..l_count {
        let h = realization.effective_channel(l, &powers);
        let n = DMatrix::from_fn(mn, t_count + 1, |_, _| complex_gaussian(&mut rng, sigma2));
        let mut y = n.clone();
        for t in 0..=t_count {
            for kk in 0..k {
                let s = if t == 0 {
                    C64::new(1.0, 0.0)
                } else {
                    frame.modulation.symbol(symbols[l][(kk, t - 1)])
                };
                let mut col = y.column_mut(t);
                col.axpy(s, &h.column(kk), C64::new(1.0, 0.0));
            }
        }
        samples.push(y);
        noises.push(n);
    }
    Ok(ReceivedFrame {
        samples,
        realization,
        noise: noises,
        symbols,
        noise_variance: sigma2,
        powers,
    })
}
