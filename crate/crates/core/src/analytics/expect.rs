//! Expectations over estimated steering vectors, defects and noise.
//!
//! The estimates φ̂, θ̂ are independent Gaussians around the truth, so every
//! product of estimated steering entries reduces to
//! E₃(𝓜, 𝓝) = E[exp(j2π/λ·(𝓜d cos φ̂ + 𝓝d sin φ̂)·sin θ̂)].

use std::f64::consts::PI;

use super::AnalyticsError;
use crate::scene::{fill_steering, ArrayConfig, DefectMoments};
use crate::specfun::{erf_complex, SeriesPolicy, SpecfunError};
use crate::C64;

/// Standard deviations of the angle estimates, radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorSpread {
    pub sigma_phi: f64,
    pub sigma_theta: f64,
}

impl EstimatorSpread {
    pub fn exact() -> Self {
        Self {
            sigma_phi: 0.0,
            sigma_theta: 0.0,
        }
    }
}

/// Integration limits for φ̂ and θ̂.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub phi: (f64, f64),
    pub theta: (f64, f64),
}

impl Bounds {
    /// Truth ± 6σ, clipped to (0, π/2).
    pub fn around(phi: f64, theta: f64, spread: &EstimatorSpread) -> Self {
        let clip = |c: f64, s: f64| ((c - 6.0 * s).max(0.0), (c + 6.0 * s).min(PI / 2.0));
        Self {
            phi: clip(phi, spread.sigma_phi),
            theta: clip(theta, spread.sigma_theta),
        }
    }
}

/// Smallest standard deviation treated as non-degenerate.
const MIN_SIGMA: f64 = 1e-12;

/// Coefficients of exp(u·x + w·x²) as a power series in x.
fn exp_quadratic_series(u: C64, w: C64, n: usize) -> Vec<C64> {
    let mut p = vec![C64::new(0.0, 0.0); n];
    if n > 0 {
        p[0] = C64::new(1.0, 0.0);
    }
    if n > 1 {
        p[1] = u;
    }
    for k in 1..n.saturating_sub(1) {
        p[k + 1] = (u * p[k] + 2.0 * w * p[k - 1]) / (k + 1) as f64;
    }
    p
}

/// Taylor coefficients of erf(A + Bx) at x = 0. The n-th derivative of erf is
/// (2/√π)(−1)^{n−1}H_{n−1}(z)e^{−z²}; the Hermite factors are generated here
/// as the series of exp(−2ABx − B²x²), which avoids evaluating high-order
/// polynomials at large |A|.
fn erf_series(a: C64, b: C64, n: usize) -> Vec<C64> {
    let mut d = vec![C64::new(0.0, 0.0); n];
    if n == 0 {
        return d;
    }
    d[0] = erf_complex(a);
    let q = exp_quadratic_series(-2.0 * a * b, -b * b, n);
    let lead = 2.0 / PI.sqrt() * b * (-a * a).exp();
    for k in 0..n - 1 {
        d[k + 1] = lead * q[k] / (k + 1) as f64;
    }
    d
}

/// G_n = ∫_lo^hi xⁿ e^{−c x²} dx / √(π/c), n < len.
fn gaussian_moments(c: f64, lo: f64, hi: f64, len: usize) -> Vec<f64> {
    let rc = c.sqrt();
    let mut g = vec![0.0; len];
    let norm = (PI / c).sqrt();
    if len > 0 {
        g[0] = 0.5 * (erf_complex(C64::new(rc * hi, 0.0)).re - erf_complex(C64::new(rc * lo, 0.0)).re);
    }
    let (elo, ehi) = ((-c * lo * lo).exp(), (-c * hi * hi).exp());
    if len > 1 {
        g[1] = (elo - ehi) / (2.0 * c) / norm;
    }
    for n in 2..len {
        let boundary = (lo.powi(n as i32 - 1) * elo - hi.powi(n as i32 - 1) * ehi) / (2.0 * c) / norm;
        g[n] = boundary + (n - 1) as f64 / (2.0 * c) * g[n - 2];
    }
    g
}

/// E₃(𝓜, 𝓝) for Gaussian φ̂ ~ N(φ, σ_φ²), θ̂ ~ N(θ, σ_θ²) on `bounds`.
///
/// As in the closed form, sin θ̂ and the φ̂-dependence of the spatial
/// frequency are linearized about the truth, which makes the θ̂ integral an
/// erf difference. The remaining φ̂ integral is evaluated as a power series in
/// x = φ̂ − φ against the exact truncated Gaussian weight; the erf factor and
/// the smooth part of the exponent are expanded, the Gaussian is not.
#[allow(clippy::too_many_arguments)]
pub fn expectation_e3(
    mm: i32,
    nn: i32,
    phi: f64,
    theta: f64,
    spread: &EstimatorSpread,
    bounds: &Bounds,
    spacing_wavelengths: f64,
    policy: &SeriesPolicy,
) -> Result<C64, SpecfunError> {
    const NAME: &str = "expectation_e3";
    if !(spread.sigma_phi >= 0.0 && spread.sigma_theta >= 0.0) {
        return Err(SpecfunError::InvalidArgument {
            function: NAME,
            reason: "standard deviations must be non-negative".into(),
        });
    }
    if bounds.phi.0 > phi || bounds.phi.1 < phi || bounds.theta.0 > theta || bounds.theta.1 < theta {
        return Err(SpecfunError::InvalidArgument {
            function: NAME,
            reason: "bounds must contain the true angles".into(),
        });
    }
    if mm == 0 && nn == 0 {
        return Ok(C64::new(1.0, 0.0));
    }
    let kd = 2.0 * PI * spacing_wavelengths;
    let (sp, cp) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    let nu0 = kd * (mm as f64 * cp + nn as f64 * sp);
    let c6 = kd * (nn as f64 * cp - mm as f64 * sp);
    if spread.sigma_phi < MIN_SIGMA && spread.sigma_theta < MIN_SIGMA {
        return Ok(C64::from_polar(1.0, nu0 * st));
    }
    let s_phi = spread.sigma_phi.max(MIN_SIGMA);
    let s_theta = spread.sigma_theta.max(MIN_SIGMA);
    let c2 = 1.0 / (2.0 * s_theta * s_theta);
    let rc2 = c2.sqrt();
    let c4 = 1.0 / (2.0 * s_phi * s_phi);

    let e0 = C64::new(-nu0 * nu0 * ct * ct / (4.0 * c2), nu0 * st);
    let e1 = C64::new(-nu0 * c6 * ct * ct / (2.0 * c2), c6 * st);
    let e2 = C64::new(-c6 * c6 * ct * ct / (4.0 * c2), 0.0);
    let b = C64::new(0.0, c6 * ct / (2.0 * rc2));
    let a_lo = C64::new(rc2 * (theta - bounds.theta.0), nu0 * ct / (2.0 * rc2));
    let a_hi = C64::new(rc2 * (theta - bounds.theta.1), nu0 * ct / (2.0 * rc2));

    let n = policy.max_terms.clamp(8, 200);
    let p = exp_quadratic_series(e1, e2, n);
    let d_lo = erf_series(a_lo, b, n);
    let d_hi = erf_series(a_hi, b, n);
    // C₃ = 1/(√(2π)σ_φ) times √(π/c₄) is exactly 1
    let g = gaussian_moments(c4, bounds.phi.0 - phi, bounds.phi.1 - phi, n);

    let mut sum = C64::new(0.0, 0.0);
    let mut quiet = 0;
    let mut last = f64::INFINITY;
    for k in 0..n {
        let mut ck = C64::new(0.0, 0.0);
        for i in 0..=k {
            ck += (d_lo[i] - d_hi[i]) * p[k - i];
        }
        let term = ck * g[k];
        sum += term;
        last = term.norm();
        if !last.is_finite() {
            break;
        }
        if last <= policy.abs_tol * sum.norm().max(1e-300) {
            quiet += 1;
            if quiet >= 3 {
                return Ok(0.5 * e0.exp() * sum);
            }
        } else {
            quiet = 0;
        }
    }
    Err(SpecfunError::NonConvergence {
        function: NAME,
        terms: n,
        last_term: last,
    })
}

/// E₃ on the lattice |𝓜| ≤ order·(M−1), |𝓝| ≤ order·(N−1) for one
/// estimator: `order` 1 serves E₁, order 2 serves E₂.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringStats {
    m_span: i32,
    n_span: i32,
    values: Vec<C64>,
}

impl SteeringStats {
    pub fn new(
        array: &ArrayConfig,
        phi: f64,
        theta: f64,
        spread: &EstimatorSpread,
        order: usize,
        policy: &SeriesPolicy,
    ) -> Result<Self, SpecfunError> {
        let m_span = (order * (array.m_count - 1)) as i32;
        let n_span = (order * (array.n_count - 1)) as i32;
        let bounds = Bounds::around(phi, theta, spread);
        let width = (2 * n_span + 1) as usize;
        let mut values = vec![C64::new(0.0, 0.0); (2 * m_span + 1) as usize * width];
        for mm in -m_span..=m_span {
            for nn in -n_span..=n_span {
                let idx = (mm + m_span) as usize * width + (nn + n_span) as usize;
                // E₃(−𝓜, −𝓝) is the conjugate; fill the later half from the earlier
                let mirror = (-mm + m_span) as usize * width + (-nn + n_span) as usize;
                values[idx] = if mirror < idx {
                    values[mirror].conj()
                } else {
                    expectation_e3(mm, nn, phi, theta, spread, &bounds, array.spacing_wavelengths, policy)?
                };
            }
        }
        Ok(Self { m_span, n_span, values })
    }

    pub fn get(&self, mm: i32, nn: i32) -> C64 {
        assert!(mm.abs() <= self.m_span && nn.abs() <= self.n_span, "E3 index ({mm}, {nn}) outside the table");
        self.values[(mm + self.m_span) as usize * (2 * self.n_span + 1) as usize + (nn + self.n_span) as usize]
    }
}

/// X(Δ) = Σ_{i₁−i₂=Δ} u_{i₁} u*_{i₂} over the 2D element lattice, indexed
/// [(Δm + M−1)(2N−1) + Δn + N−1].
fn autocorrelation(array: &ArrayConfig, u: &[C64]) -> Vec<C64> {
    let (m, n) = (array.m_count, array.n_count);
    let w = 2 * n - 1;
    let mut x = vec![C64::new(0.0, 0.0); (2 * m - 1) * w];
    for i1 in 0..m * n {
        for i2 in 0..m * n {
            let (m1, n1) = array.element(i1);
            let (m2, n2) = array.element(i2);
            let idx = (m1 + m - 1 - m2) * w + (n1 + n - 1 - n2);
            x[idx] += u[i1] * u[i2].conj();
        }
    }
    x
}

fn steering(array: &ArrayConfig, phi: f64, theta: f64) -> Vec<C64> {
    let mut a = vec![C64::new(0.0, 0.0); array.size()];
    fill_steering(array, phi, theta, &mut a);
    a
}

fn check_stats(stats: &SteeringStats, array: &ArrayConfig, order: i32) -> Result<(), AnalyticsError> {
    if stats.m_span < order * (array.m_count as i32 - 1) || stats.n_span < order * (array.n_count as i32 - 1) {
        return Err(AnalyticsError::Invalid(format!("E3 table too small for order {order}")));
    }
    Ok(())
}

/// E[|ĥ_kᴴ h_ς|²] with ĥ_k = a(φ̂_k, θ̂_k) (statistics in `stats`) and
/// h_ς = η_ς α⊙e^{jΔδ}⊙a(φ_ς, θ_ς). The Doppler factors cancel.
pub fn channel_moment_2(
    array: &ArrayConfig,
    defects: &DefectMoments,
    stats: &SteeringStats,
    target: (f64, f64),
    eta: f64,
) -> Result<f64, AnalyticsError> {
    check_stats(stats, array, 1)?;
    let u = steering(array, target.0, target.1);
    let x = autocorrelation(array, &u);
    let (m, n) = (array.m_count as i32, array.n_count as i32);
    let c2 = defects.mean_factor().norm_sqr();
    let mut generic = C64::new(0.0, 0.0);
    for dm in -(m - 1)..m {
        for dn in -(n - 1)..n {
            let xv = x[((dm + m - 1) * (2 * n - 1) + dn + n - 1) as usize];
            generic += xv * stats.get(dm, dn);
        }
    }
    // same-antenna terms carry E[α²] instead of |E[α]E[e^{jΔδ}]|²; |u_i| = 1, E₁(0, 0) = 1
    let total = generic * c2 + (defects.gain[2] - c2) * array.size() as f64;
    Ok(eta * eta * total.re)
}

/// E[Π α e^{±jΔδ}] over four antenna indices with signs (+, −, +, −),
/// factorized over the distinct antennas.
fn defect_factor(idx: [usize; 4], d: &DefectMoments) -> C64 {
    const SIGNS: [i32; 4] = [1, -1, 1, -1];
    let mut f = C64::new(1.0, 0.0);
    for j in 0..4 {
        if (0..j).any(|t| idx[t] == idx[j]) {
            continue;
        }
        let (mut mult, mut net) = (0usize, 0i32);
        for t in j..4 {
            if idx[t] == idx[j] {
                mult += 1;
                net += SIGNS[t];
            }
        }
        f *= d.phase(net) * d.gain[mult];
    }
    f
}

/// E[|ĥ_kᴴ h_p|² |ĥ_kᴴ h_q|²]; `stats` must be an order-2 table for ĥ_k.
///
/// Index tuples on four distinct antennas all carry |E[α]E[e^{jΔδ}]|⁴ and sum
/// to a convolution of autocorrelations; only tuples with a repeated antenna
/// (O((MN)³) of them) need the partition-specific defect factor.
pub fn channel_moment_4(
    array: &ArrayConfig,
    defects: &DefectMoments,
    stats: &SteeringStats,
    target_p: (f64, f64),
    eta_p: f64,
    target_q: (f64, f64),
    eta_q: f64,
) -> Result<f64, AnalyticsError> {
    check_stats(stats, array, 2)?;
    let u = steering(array, target_p.0, target_p.1);
    let w = steering(array, target_q.0, target_q.1);
    let xu = autocorrelation(array, &u);
    let xw = autocorrelation(array, &w);
    let (m, n) = (array.m_count as i32, array.n_count as i32);
    let width = (2 * n - 1) as usize;
    let c4 = defects.mean_factor().norm_sqr().powi(2);

    let mut generic = C64::new(0.0, 0.0);
    for dm1 in -(m - 1)..m {
        for dn1 in -(n - 1)..n {
            let a = xu[(dm1 + m - 1) as usize * width + (dn1 + n - 1) as usize];
            if a == C64::new(0.0, 0.0) {
                continue;
            }
            let mut inner = C64::new(0.0, 0.0);
            for dm2 in -(m - 1)..m {
                for dn2 in -(n - 1)..n {
                    inner += xw[(dm2 + m - 1) as usize * width + (dn2 + n - 1) as usize] * stats.get(dm1 + dm2, dn1 + dn2);
                }
            }
            generic += a * inner;
        }
    }

    let mn = array.size();
    let el: Vec<(i32, i32)> = (0..mn)
        .map(|i| {
            let (a, b) = array.element(i);
            (a as i32, b as i32)
        })
        .collect();
    let mut correction = C64::new(0.0, 0.0);
    let mut add = |i1: usize, i2: usize, i3: usize, i4: usize| {
        let f = defect_factor([i1, i2, i3, i4], defects) - c4;
        let dm = el[i1].0 - el[i2].0 + el[i3].0 - el[i4].0;
        let dn = el[i1].1 - el[i2].1 + el[i3].1 - el[i4].1;
        correction += f * u[i1] * u[i2].conj() * w[i3] * w[i4].conj() * stats.get(dm, dn);
    };
    for i1 in 0..mn {
        for i2 in 0..mn {
            for i3 in 0..mn {
                if i1 == i2 || i1 == i3 || i2 == i3 {
                    for i4 in 0..mn {
                        add(i1, i2, i3, i4);
                    }
                } else {
                    add(i1, i2, i3, i1);
                    add(i1, i2, i3, i2);
                    add(i1, i2, i3, i3);
                }
            }
        }
    }
    let total = generic * c4 + correction;
    Ok((eta_p * eta_q).powi(2) * total.re)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseMoments {
    /// E[|ĥᴴn|²] = MNσ².
    pub second: f64,
    /// E[|ĥᴴn|⁴] = 2(MNσ²)².
    pub fourth: f64,
    /// E[|ĥᴴh_ς|²|ĥᴴn|²] = MNσ²·E[|ĥᴴh_ς|²].
    pub mixed: f64,
}

/// Noise terms of the SINR moments. ĥ has unit-modulus entries and the data
/// noise is independent of ĥ and of the channel, so ĥᴴn | ĥ ~ CN(0, MNσ²).
/// `channel_m2` is E[|ĥᴴh_ς|²] for the mixed term.
pub fn noise_moments(array: &ArrayConfig, sigma2: f64, channel_m2: f64) -> NoiseMoments {
    let s = array.size() as f64 * sigma2;
    NoiseMoments {
        second: s,
        fourth: 2.0 * s * s,
        mixed: s * channel_m2,
    }
}
