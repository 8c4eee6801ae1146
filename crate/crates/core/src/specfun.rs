//! Special functions and truncated series.
//!
//! Everything here is a pure function of its arguments. Series evaluations
//! take a [`SeriesPolicy`] and report how they stopped; hitting the term cap
//! before the tolerance is an error rather than a silently truncated value.

use std::f64::consts::PI;

use num_complex::Complex64;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

/// Highest Hermite order accepted by [`hermite_poly`].
pub const HERMITE_MAX_ORDER: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecfunError {
    #[error("{function}: series did not reach tolerance after {terms} terms (last term {last_term:e})")]
    NonConvergence {
        function: &'static str,
        terms: usize,
        last_term: f64,
    },
    #[error("{function}: invalid argument: {reason}")]
    InvalidArgument {
        function: &'static str,
        reason: String,
    },
}

/// Truncation rule for the infinite sums.
///
/// A sum stops once a term falls below `abs_tol` relative to the running
/// partial sum (all sums here are scaled so the partial sum is O(1)), or
/// fails once `max_terms` terms have been added.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPolicy {
    pub abs_tol: f64,
    pub max_terms: usize,
    /// Order L1 of the exponential Taylor expansion inside the von Mises
    /// phase integral.
    pub taylor_l1: usize,
    /// Order L2 of the cosine/sine Taylor expansion inside the same integral.
    pub taylor_l2: usize,
}

impl Default for SeriesPolicy {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            max_terms: 500,
            taylor_l1: 48,
            taylor_l2: 32,
        }
    }
}

impl SeriesPolicy {
    /// Same tolerance, larger term budget. Needed for Rician moments with
    /// ν²/(2σ_r²) in the tens of thousands, where the Poisson-weighted sum is
    /// spread over thousands of terms.
    pub fn with_max_terms(mut self, max_terms: usize) -> Self {
        self.max_terms = max_terms;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// A term dropped below the tolerance.
    Tolerance,
    /// The value was obtained from a finite expression.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesValue<T> {
    pub value: T,
    pub terms: usize,
    pub stop: StopReason,
}

impl<T> SeriesValue<T> {
    fn exact(value: T) -> Self {
        Self {
            value,
            terms: 0,
            stop: StopReason::Exact,
        }
    }
}

/// Sum of `exp(log_term(b))` over b ≥ 0 for a unimodal sequence, starting at
/// the mode `b0` and walking outwards. Returns (log of sum, terms used).
fn log_sum_unimodal(
    function: &'static str,
    b0: usize,
    log_term: impl Fn(usize) -> f64,
    policy: &SeriesPolicy,
) -> Result<(f64, usize), SpecfunError> {
    let peak = log_term(b0);
    let mut sum = 1.0;
    let mut terms = 1;
    // downwards
    let mut b = b0;
    while b > 0 {
        b -= 1;
        let t = (log_term(b) - peak).exp();
        sum += t;
        terms += 1;
        if t < policy.abs_tol * sum {
            break;
        }
        if terms >= policy.max_terms {
            return Err(SpecfunError::NonConvergence {
                function,
                terms,
                last_term: t,
            });
        }
    }
    // upwards
    let mut b = b0;
    loop {
        b += 1;
        let t = (log_term(b) - peak).exp();
        sum += t;
        terms += 1;
        if t < policy.abs_tol * sum {
            break;
        }
        if terms >= policy.max_terms {
            return Err(SpecfunError::NonConvergence {
                function,
                terms,
                last_term: t,
            });
        }
    }
    Ok((peak + sum.ln(), terms))
}

fn ln_bessel_i(q: u32, x: f64, policy: &SeriesPolicy) -> Result<SeriesValue<f64>, SpecfunError> {
    if x < 0.0 || !x.is_finite() {
        return Err(SpecfunError::InvalidArgument {
            function: "bessel_i",
            reason: format!("x must be finite and non-negative, got {x}"),
        });
    }
    if x == 0.0 {
        let v = if q == 0 { 0.0 } else { f64::NEG_INFINITY };
        return Ok(SeriesValue::exact(v));
    }
    let qf = q as f64;
    let half_ln = (x / 2.0).ln();
    let log_term =
        |b: usize| (2.0 * b as f64 + qf) * half_ln - ln_gamma(b as f64 + 1.0) - ln_gamma(b as f64 + qf + 1.0);
    // mode of (x/2)^{2b} / (b! (b+q)!)
    let b0 = ((((qf * qf + x * x).sqrt() - qf) / 2.0).floor() as usize).max(0);
    let (v, terms) = log_sum_unimodal("bessel_i", b0, log_term, policy)?;
    Ok(SeriesValue {
        value: v,
        terms,
        stop: StopReason::Tolerance,
    })
}

/// Modified Bessel function of the first kind I_q(x) from its ascending
/// series. Terms are summed in log space around the largest one, so the
/// series stays finite well past the f64 overflow of I_q itself (the returned
/// value is `inf` beyond x ≈ 713).
pub fn bessel_i(q: u32, x: f64, policy: &SeriesPolicy) -> Result<SeriesValue<f64>, SpecfunError> {
    let r = ln_bessel_i(q, x, policy)?;
    Ok(SeriesValue {
        value: r.value.exp(),
        ..r
    })
}

/// I_q(x)·e^{−x}, finite for all x ≥ 0.
pub fn bessel_i_scaled(q: u32, x: f64, policy: &SeriesPolicy) -> Result<SeriesValue<f64>, SpecfunError> {
    let r = ln_bessel_i(q, x, policy)?;
    Ok(SeriesValue {
        value: (r.value - x).exp(),
        ..r
    })
}

/// E[α^c] for α Rician with location ν and scale σ_r.
///
/// Series over b of ν^{2b}(1/2σ²)^{b−(c+2)/2}Γ((2b+c+2)/2)/(b!Γ(b+1)),
/// prefactor e^{−ν²/2σ²}/(2σ²); every factor is taken in log space.
pub fn rician_moment(c: u32, nu: f64, sigma_r: f64, policy: &SeriesPolicy) -> Result<SeriesValue<f64>, SpecfunError> {
    if !(sigma_r > 0.0) || !(nu >= 0.0) || !nu.is_finite() || !sigma_r.is_finite() {
        return Err(SpecfunError::InvalidArgument {
            function: "rician_moment",
            reason: format!("need nu >= 0 and sigma_r > 0, got nu={nu}, sigma_r={sigma_r}"),
        });
    }
    if c == 0 {
        return Ok(SeriesValue::exact(1.0));
    }
    let two_s2 = 2.0 * sigma_r * sigma_r;
    let cf = c as f64;
    let lambda = nu * nu / two_s2;
    let ln_pref = -lambda - two_s2.ln();
    let ln_inv_2s2 = -two_s2.ln();
    let log_term = |b: usize| {
        let bf = b as f64;
        let nu_part = if b == 0 { 0.0 } else { 2.0 * bf * nu.ln() };
        nu_part + (bf - (cf + 2.0) / 2.0) * ln_inv_2s2 + ln_gamma((2.0 * bf + cf + 2.0) / 2.0)
            - ln_gamma(bf + 1.0)
            - ln_gamma(bf + 1.0)
    };
    if nu == 0.0 {
        // only b = 0 survives
        return Ok(SeriesValue::exact((ln_pref + log_term(0)).exp()));
    }
    let b0 = lambda.floor() as usize;
    let (v, terms) = log_sum_unimodal("rician_moment", b0, log_term, policy)?;
    Ok(SeriesValue {
        value: (ln_pref + v).exp(),
        terms,
        stop: StopReason::Tolerance,
    })
}

/// ∫_a^b e^{jωx} dx.
fn exp_integral(omega: f64, a: f64, b: f64) -> Complex64 {
    if omega == 0.0 {
        Complex64::new(b - a, 0.0)
    } else {
        let j = Complex64::i();
        ((j * omega * b).exp() - (j * omega * a).exp()) / (j * omega)
    }
}

/// ∫_a^b e^{jsCΔ}cos(qΔ) and ∫_a^b e^{jsCΔ}sin(qΔ) through the double Taylor
/// expansion, or `None` when the expansion would lose more than the
/// tolerance to cancellation or needs more than the configured orders.
fn phase_integrals_taylor(
    sc: f64,
    q: f64,
    a: f64,
    b: f64,
    policy: &SeriesPolicy,
) -> Option<(Complex64, Complex64)> {
    let r = a.abs().max(b.abs());
    // terms grow to about e^{(|C|+q) r}; rounding then costs eps times that
    let budget = (policy.abs_tol / f64::EPSILON).ln();
    if (sc.abs() + q) * r > budget {
        return None;
    }
    let l1 = policy.taylor_l1;
    let l2 = policy.taylor_l2;
    // truncation check on the last orders
    let last1 = (sc.abs() * r).powi(l1 as i32 + 1) / (ln_gamma(l1 as f64 + 2.0)).exp();
    let last2 = (q * r).powi(2 * l2 as i32 + 1) / (ln_gamma(2.0 * l2 as f64 + 2.0)).exp();
    if last1 * r > policy.abs_tol || last2 * r > policy.abs_tol {
        return None;
    }
    let j = Complex64::i();
    let mut ic = Complex64::new(0.0, 0.0);
    let mut is = Complex64::new(0.0, 0.0);
    let mut c1 = Complex64::new(1.0, 0.0); // (jsC)^{l1}/l1!
    for i1 in 0..=l1 {
        let mut c2 = 1.0; // (-1)^{l2} q^{2 l2} / (2 l2)!
        for i2 in 0..=l2 {
            let n = (i1 + 2 * i2 + 1) as i32;
            let pc = (b.powi(n) - a.powi(n)) / n as f64;
            ic += c1 * c2 * pc;
            // sine partner: (-1)^{l2} q^{2 l2 + 1} / (2 l2 + 1)!
            let s2 = c2 * q / (2 * i2 + 1) as f64;
            let ps = (b.powi(n + 1) - a.powi(n + 1)) / (n + 1) as f64;
            is += c1 * s2 * ps;
            c2 *= -q * q / (((2 * i2 + 1) * (2 * i2 + 2)) as f64);
        }
        c1 *= j * sc / (i1 + 1) as f64;
    }
    Some((ic, is))
}

fn phase_integrals_exact(sc: f64, q: f64, a: f64, b: f64) -> (Complex64, Complex64) {
    let plus = exp_integral(sc + q, a, b);
    let minus = exp_integral(sc - q, a, b);
    let j = Complex64::i();
    ((plus + minus) * 0.5, (plus - minus) / (2.0 * j))
}

/// E[e^{±jCΔδ}] for Δδ von Mises with mean μ̃ and concentration k̃, integrated
/// over `bounds` (default full circle).
///
/// The density is expanded in its Bessel series
/// 1/2π (1 + 2/I₀(k̃) Σ_q I_q(k̃) cos q(Δδ−μ̃)); the constant part integrates in
/// closed form and each cosine term through a double Taylor series of orders
/// (L1, L2) from the policy. Where that Taylor series cannot hold the
/// tolerance in f64 (large q·π) the same integral is taken from its
/// antiderivative. The outer sum stops once I_q(k̃)/I₀(k̃) < abs_tol.
pub fn vonmises_char(
    c_mult: f64,
    sign: i8,
    mu: f64,
    kappa: f64,
    bounds: (f64, f64),
    policy: &SeriesPolicy,
) -> Result<SeriesValue<Complex64>, SpecfunError> {
    let (a, b) = bounds;
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(SpecfunError::InvalidArgument {
            function: "vonmises_char",
            reason: format!("concentration must be positive, got {kappa}"),
        });
    }
    if !(a >= -PI && b <= PI && a < b) {
        return Err(SpecfunError::InvalidArgument {
            function: "vonmises_char",
            reason: format!("bounds must satisfy -pi <= min < max <= pi, got [{a}, {b}]"),
        });
    }
    if sign != 1 && sign != -1 {
        return Err(SpecfunError::InvalidArgument {
            function: "vonmises_char",
            reason: format!("sign must be +1 or -1, got {sign}"),
        });
    }
    let full = a == -PI && b == PI;
    if c_mult == 0.0 && full {
        return Ok(SeriesValue::exact(Complex64::new(1.0, 0.0)));
    }
    let sc = sign as f64 * c_mult;
    let i2 = exp_integral(sc, a, b) / (2.0 * PI);
    let i0 = bessel_i_scaled(0, kappa, policy)?.value;
    let mut acc = Complex64::new(0.0, 0.0);
    let mut q = 1u32;
    loop {
        let iq = bessel_i_scaled(q, kappa, policy)?.value;
        let ratio = iq / i0;
        let qf = q as f64;
        let (ic, is) = phase_integrals_taylor(sc, qf, a, b, policy)
            .unwrap_or_else(|| phase_integrals_exact(sc, qf, a, b));
        let term = (ic * (qf * mu).cos() + is * (qf * mu).sin()) * ratio / PI;
        acc += term;
        if ratio < policy.abs_tol {
            break;
        }
        if q as usize >= policy.max_terms {
            return Err(SpecfunError::NonConvergence {
                function: "vonmises_char",
                terms: q as usize,
                last_term: ratio,
            });
        }
        q += 1;
    }
    Ok(SeriesValue {
        value: i2 + acc,
        terms: q as usize,
        stop: StopReason::Tolerance,
    })
}

const SQRT_PI: f64 = 1.772_453_850_905_516;

/// Error function of a complex argument.
///
/// Maclaurin series wherever its cancellation stays harmless (|z| ≤ 3 or
/// |Re z| < 1.5), otherwise the Laplace continued fraction for erfc in the
/// right half-plane plus odd symmetry. Relative accuracy is about 1e-13 on
/// |z| ≤ 10. Results overflow to infinity only when |erf z| itself exceeds
/// f64 range (|Im z| ≳ 26 near the imaginary axis).
pub fn erf_complex(z: Complex64) -> Complex64 {
    if z.re < 0.0 {
        return -erf_complex(-z);
    }
    if z.norm() <= 3.0 || z.re < 1.5 {
        erf_series(z)
    } else {
        Complex64::new(1.0, 0.0) - erfc_continued_fraction(z)
    }
}

fn erf_series(z: Complex64) -> Complex64 {
    let z2 = z * z;
    let mut power = z; // (-1)^n z^{2n+1} / n!
    let mut sum = z;
    let mut n = 0usize;
    loop {
        n += 1;
        power *= -z2 / n as f64;
        let term = power / (2 * n + 1) as f64;
        sum += term;
        if term.norm() <= 1e-17 * sum.norm() || n > 2000 {
            break;
        }
    }
    sum * (2.0 / SQRT_PI)
}

/// erfc(z) = e^{−z²}/√π · 1/(z + (1/2)/(z + 1/(z + (3/2)/(z + …)))), Re z > 0,
/// evaluated with the modified Lentz method.
fn erfc_continued_fraction(z: Complex64) -> Complex64 {
    let tiny = 1e-300;
    let mut f = z;
    let mut c = z;
    let mut d = Complex64::new(0.0, 0.0);
    for n in 1..5000 {
        let an = n as f64 / 2.0;
        d = z + d * an;
        if d.norm() < tiny {
            d = Complex64::new(tiny, 0.0);
        }
        c = z + an / c;
        if c.norm() < tiny {
            c = Complex64::new(tiny, 0.0);
        }
        d = d.inv();
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).norm() < 1e-16 {
            break;
        }
    }
    (-z * z).exp() / (f * SQRT_PI)
}

/// Physicists' Hermite polynomial H_n(x) by the three-term recurrence
/// H_{n+1} = 2xH_n − 2nH_{n−1}.
pub fn hermite_poly(order: usize, x: Complex64) -> Result<Complex64, SpecfunError> {
    hermite_poly_capped(order, x, HERMITE_MAX_ORDER)
}

pub fn hermite_poly_capped(order: usize, x: Complex64, max_order: usize) -> Result<Complex64, SpecfunError> {
    if order > max_order {
        return Err(SpecfunError::InvalidArgument {
            function: "hermite_poly",
            reason: format!("order {order} exceeds configured maximum {max_order}"),
        });
    }
    let mut h0 = Complex64::new(1.0, 0.0);
    if order == 0 {
        return Ok(h0);
    }
    let mut h1 = x * 2.0;
    for n in 1..order {
        let h2 = x * 2.0 * h1 - h0 * (2.0 * n as f64);
        h0 = h1;
        h1 = h2;
    }
    Ok(h1)
}
