//! Communication stage: MRC with estimated channels, PSK decisions, SINR,
//! symbol error rate and empirical rate.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::locate::ParamVector;
use crate::scene::{fill_steering, ArrayConfig, FrameConfig, Modulation, ReceivedFrame};
use crate::C64;

/// ĥ_k = a(φ̂_k, θ̂_k) e^{j2πf̂_k(l+1)/f_s} for one subframe, as MN × K
/// columns. Built without path loss or defect factors, so every entry has
/// unit modulus.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub vectors: DMatrix<C64>,
}

impl ChannelEstimate {
    pub fn from_params(array: &ArrayConfig, frame: &FrameConfig, params: &ParamVector, l: usize) -> Self {
        let mn = array.size();
        let mut vectors = DMatrix::from_element(mn, params.k(), C64::new(0.0, 0.0));
        let mut a = vec![C64::new(0.0, 0.0); mn];
        for k in 0..params.k() {
            fill_steering(array, params.azimuths[k], params.elevations[k], &mut a);
            let rot = C64::from_polar(1.0, frame.doppler_phase(params.dopplers[k], l));
            for i in 0..mn {
                vectors[(i, k)] = a[i] * rot;
            }
        }
        Self { vectors }
    }

    pub fn k(&self) -> usize {
        self.vectors.ncols()
    }
}

/// x_{t,l,k} = ĥ_kᴴ y_{t,l} for the data slots t = 1..T of subframe `l`
/// (K × T).
pub fn mrc_combine(frame: &ReceivedFrame, estimate: &ChannelEstimate, l: usize) -> DMatrix<C64> {
    let y = &frame.samples[l];
    let data = y.columns(1, y.ncols() - 1);
    estimate.vectors.adjoint() * data
}

/// Nearest-phase PSK decision after removing `reference_phase`; a point
/// exactly between two symbols goes to the lower index.
pub fn detect_psk(x: C64, order: u32, reference_phase: f64) -> u32 {
    let sector = 2.0 * PI / order as f64;
    let p = (x.arg() - reference_phase).rem_euclid(2.0 * PI) / sector;
    let lo = p.floor();
    let frac = p - lo;
    let lo = lo as u32 % order;
    if frac < 0.5 {
        lo
    } else if frac > 0.5 {
        (lo + 1) % order
    } else {
        lo.min((lo + 1) % order)
    }
}

/// How the noise term of γ_k is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseTerm {
    /// Realized |ĥ_kᴴ n_t|² per symbol slot.
    #[default]
    Instantaneous,
    /// Its expectation ‖ĥ_k‖² σ².
    Expected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkMetrics {
    /// Mean γ_k over the evaluated slots.
    pub sinr: Vec<f64>,
    pub ser: Vec<f64>,
    /// Sample mean of log₂(1 + γ_k) over the evaluated slots.
    pub rate: Vec<f64>,
    pub sum_rate: f64,
    pub symbols_per_drone: usize,
}

/// Per-slot γ_k = P_k|ĥ_kᴴh_k|² / (Σ_{p≠k} P_p|ĥ_kᴴh_p|² + |ĥ_kᴴn|²), where
/// h_p carries path loss, defects and Doppler but not √P_p.
fn slot_sinr(
    hk_hat: &[C64],
    channels: &DMatrix<C64>,
    powers: &[f64],
    k: usize,
    noise: f64,
) -> f64 {
    let mut signal = 0.0;
    let mut interference = 0.0;
    for p in 0..channels.ncols() {
        let col = channels.column(p);
        let mut ip = C64::new(0.0, 0.0);
        for (h, c) in hk_hat.iter().zip(col.iter()) {
            ip += h.conj() * c;
        }
        if p == k {
            signal = powers[p] * ip.norm_sqr();
        } else {
            interference += powers[p] * ip.norm_sqr();
        }
    }
    let denom = interference + noise;
    if denom > 0.0 {
        signal / denom
    } else if signal > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// SINR, SER and empirical rate over every subframe of `frame`.
///
/// `estimates` holds either one parameter set used for all subframes or one
/// per subframe. Decisions use the model phase arg E[α e^{jΔδ}] as the
/// coherent-gain reference (`reference_phase`).
pub fn measure_link(
    frame: &ReceivedFrame,
    array: &ArrayConfig,
    config: &FrameConfig,
    estimates: &[ParamVector],
    reference_phase: f64,
    mode: NoiseTerm,
) -> LinkMetrics {
    let l_count = frame.samples.len();
    assert!(
        estimates.len() == 1 || estimates.len() == l_count,
        "need one estimate or one per subframe"
    );
    let k_count = frame.powers.len();
    let order = match config.modulation {
        Modulation::Psk(m) => m,
    };
    let mut sinr_sum = vec![0.0; k_count];
    let mut rate_sum = vec![0.0; k_count];
    let mut errors = vec![0usize; k_count];
    let mut slots = 0usize;
    let mut decisions = 0usize;

    let steer = frame.realization.defective_steering();
    for l in 0..l_count {
        let est = &estimates[if estimates.len() == 1 { 0 } else { l }];
        let ce = ChannelEstimate::from_params(array, config, est, l);
        // h_p = η_p α e^{jΔδ} a_p e^{jω_p(l)}
        let mut channels = steer.clone();
        for p in 0..k_count {
            let rot = frame.realization.rotations[l][p];
            for i in 0..channels.nrows() {
                channels[(i, p)] *= rot;
            }
        }
        let t_count = frame.samples[l].ncols() - 1;
        let x = mrc_combine(frame, &ce, l);
        for t in 0..t_count {
            for k in 0..k_count {
                let got = detect_psk(x[(k, t)], order, reference_phase);
                if got != frame.symbols[l][(k, t)] {
                    errors[k] += 1;
                }
            }
        }
        decisions += t_count;

        // SINR slots: the data columns, or the pilot column when T = 0
        let cols: Vec<usize> = if t_count > 0 { (1..=t_count).collect() } else { vec![0] };
        for &c in &cols {
            for k in 0..k_count {
                let hk = ce.vectors.column(k);
                let hk: Vec<C64> = hk.iter().copied().collect();
                let noise = match mode {
                    NoiseTerm::Instantaneous => {
                        let n = frame.noise[l].column(c);
                        let mut ip = C64::new(0.0, 0.0);
                        for (h, v) in hk.iter().zip(n.iter()) {
                            ip += h.conj() * v;
                        }
                        ip.norm_sqr()
                    }
                    NoiseTerm::Expected => hk.iter().map(|h| h.norm_sqr()).sum::<f64>() * frame.noise_variance,
                };
                let g = slot_sinr(&hk, &channels, &frame.powers, k, noise);
                sinr_sum[k] += g;
                rate_sum[k] += (1.0 + g).log2();
            }
            slots += 1;
        }
    }
    let ser = errors
        .iter()
        .map(|&e| if decisions > 0 { e as f64 / decisions as f64 } else { 0.0 })
        .collect();
    let sinr: Vec<f64> = sinr_sum.iter().map(|s| s / slots as f64).collect();
    let rate: Vec<f64> = rate_sum.iter().map(|s| s / slots as f64).collect();
    LinkMetrics {
        sinr,
        ser,
        sum_rate: rate.iter().sum(),
        rate,
        symbols_per_drone: decisions,
    }
}

/// Symbol error probability of coherent M-PSK on AWGN at symbol SNR `snr`:
/// (1/π)∫₀^{(M−1)π/M} exp(−snr·sin²(π/M)/sin²θ) dθ.
pub fn psk_ser_awgn(order: u32, snr: f64) -> f64 {
    let m = order as f64;
    let s2 = (PI / m).sin().powi(2);
    let upper = (m - 1.0) * PI / m;
    crate::oracle::integrate(
        |th| {
            let s = th.sin();
            if s == 0.0 {
                C64::new(0.0, 0.0)
            } else {
                C64::new((-snr * s2 / (s * s)).exp(), 0.0)
            }
        },
        0.0,
        upper,
        16,
    )
    .re
        / PI
}
