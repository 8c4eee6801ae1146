//! Joint localisation and data detection over growing time windows of one
//! subframe: alternating MLE-MLE and joint MUSIC-MLE.
//!
//! Within subframe `l` the Doppler rotation is the constant phase
//! ψ_k = 2πf_k(l+1)/f_s, so a window of t+1 columns is modelled as
//! y_τ = Σ_k g_k e^{jψ_k} s_{τ,k} a_k + n with g_k = E[α e^{jΔδ}]·√P_k η_k and
//! s_{0,k} = 1.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::locate::{
    aoml_estimate, local_axis, music_estimate_with, GridSpec, LocateError, ModelContext, MusicOptions,
    ParamVector, SolverConfig, SteeringTable,
};
use crate::scene::{fill_steering, ArrayConfig, Modulation};
use crate::C64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JointError {
    #[error("window of {len} columns does not fit a subframe with {available} columns")]
    Window { len: usize, available: usize },
    #[error("decoded prefix holds {got} symbol vectors, window needs {want}")]
    Prefix { got: usize, want: usize },
    #[error(transparent)]
    Locate(#[from] LocateError),
}

/// Columns 0..=t of subframe `subframe`: the pilot and t data symbols, the
/// first t−1 of which are already decoded.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeWindow {
    pub subframe: usize,
    pub t: usize,
    /// ŝ_{1..t−1}, one K-vector of symbol indices each.
    pub decoded_prefix: Vec<Vec<u32>>,
}

impl TimeWindow {
    pub fn len(&self) -> usize {
        self.t + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn check(&self, available: usize) -> Result<(), JointError> {
        if self.t + 1 > available {
            return Err(JointError::Window {
                len: self.t + 1,
                available,
            });
        }
        let want = self.t.saturating_sub(1);
        if self.decoded_prefix.len() != want {
            return Err(JointError::Prefix {
                got: self.decoded_prefix.len(),
                want,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WindowFlags {
    /// Â had condition number above 1e8 (pseudo-inverse still used).
    pub ill_conditioned: bool,
    /// Sample covariance was diagonally loaded (too few snapshots).
    pub loaded: bool,
    /// K ≥ 3: symbols detected drone by drone instead of jointly.
    pub cyclic_detection: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointResult {
    pub window_len: usize,
    pub params: ParamVector,
    /// ŝ_t for t ≥ 1; `None` for the pilot-only window.
    pub decoded: Option<Vec<u32>>,
    pub iterations: usize,
    pub converged: bool,
    /// Window objective after each iteration.
    pub objective_trace: Vec<f64>,
    pub flags: WindowFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointAlgorithm {
    MleMle,
    MusicMle,
}

/// Single-subframe context: the window data of subframe l sees the Doppler
/// phase 2πf(l+1)/f_s, which equals the first-subframe phase at sampling
/// rate f_s/(l+1).
fn subframe_context(ctx: &ModelContext, l: usize) -> ModelContext {
    let mut c = ctx.with_subframes(1);
    c.frame.sampling_hz = ctx.frame.sampling_hz / (l + 1) as f64;
    c
}

fn psk(ctx: &ModelContext) -> (Modulation, u32) {
    let m = ctx.frame.modulation;
    (m, m.order())
}

/// Phase per Hz of Doppler within subframe `l`.
fn kappa(ctx: &ModelContext, l: usize) -> f64 {
    2.0 * PI * (l + 1) as f64 / ctx.frame.sampling_hz
}

/// Index of the uniform axis point whose phase κf is circularly nearest to
/// `target`, i.e. maximizing cos(κf_j − target); ties keep the lower index.
fn nearest_phase(axis: &[f64], kappa: f64, target: f64) -> usize {
    let n = axis.len();
    if n == 1 {
        return 0;
    }
    let score = |j: usize| (kappa * axis[j] - target).cos();
    let d = kappa * (axis[1] - axis[0]);
    let span = d * (n - 1) as f64;
    if d <= 0.0 || span + d >= 2.0 * PI - 1e-12 {
        let mut best = 0;
        for j in 1..n {
            if score(j) > score(best) {
                best = j;
            }
        }
        return best;
    }
    let r = (target - kappa * axis[0]).rem_euclid(2.0 * PI);
    let x = r / d;
    let (a, b) = if x <= (n - 1) as f64 {
        let lo = x.floor() as usize;
        (lo.min(n - 1), (lo + 1).min(n - 1))
    } else {
        (0, n - 1)
    };
    let (lo, hi) = (a.min(b), a.max(b));
    if score(hi) > score(lo) {
        hi
    } else {
        lo
    }
}

/// Window data in a D-dimensional domain (antennas, or the compensated
/// K-dimensional domain for MUSIC-MLE).
struct Window<'a> {
    /// D × (t+1).
    y: DMatrix<C64>,
    /// D × K basis vectors (steering vectors or Â⁺Â columns).
    basis: DMatrix<C64>,
    g: &'a [C64],
    prefix: &'a [Vec<u32>],
    modulation: Modulation,
    kappa: f64,
}

impl Window<'_> {
    fn t(&self) -> usize {
        self.y.ncols() - 1
    }

    fn k(&self) -> usize {
        self.basis.ncols()
    }

    /// Known symbol of drone k in column τ < t.
    fn known(&self, tau: usize, k: usize) -> C64 {
        if tau == 0 {
            C64::new(1.0, 0.0)
        } else {
            self.modulation.symbol(self.prefix[tau - 1][k])
        }
    }

    fn symbol(&self, tau: usize, k: usize, st: &[u32]) -> C64 {
        if tau == self.t() {
            if tau == 0 {
                C64::new(1.0, 0.0)
            } else {
                self.modulation.symbol(st[k])
            }
        } else {
            self.known(tau, k)
        }
    }

    fn objective(&self, dopplers: &[f64], st: &[u32]) -> f64 {
        let mut total = 0.0;
        let d = self.y.nrows();
        let amps: Vec<C64> = (0..self.k())
            .map(|k| self.g[k] * C64::from_polar(1.0, self.kappa * dopplers[k]))
            .collect();
        for tau in 0..self.y.ncols() {
            for i in 0..d {
                let mut m = C64::new(0.0, 0.0);
                for k in 0..self.k() {
                    m += amps[k] * self.symbol(tau, k, st) * self.basis[(i, k)];
                }
                total += (self.y[(i, tau)] - m).norm_sqr();
            }
        }
        total
    }

    /// u_{k,τ} = b_kᴴ y_τ.
    fn projections(&self) -> DMatrix<C64> {
        self.basis.adjoint() * &self.y
    }

    /// Exact search over (ŝ_t, f) on the given Doppler axes. K = 1 and 2 are
    /// joint; K ≥ 3 cycles over drones starting from `start`. Returns the
    /// argmin (dopplers, symbols) under the window objective minus a
    /// constant; ties keep the first candidate in (symbols, f₁) order.
    fn phase2(&self, axes: &[Vec<f64>], start: (&[f64], &[u32])) -> (Vec<f64>, Vec<u32>, bool) {
        let k = self.k();
        let t = self.t();
        let order = self.modulation.order();
        let u = self.projections();
        let pre: Vec<C64> = (0..k)
            .map(|kk| (0..t).map(|tau| self.known(tau, kk).conj() * u[(kk, tau)]).sum())
            .collect();
        let n_sym = if t == 0 { 1 } else { order };
        let sym = |i: u32| if t == 0 { C64::new(1.0, 0.0) } else { self.modulation.symbol(i) };
        match k {
            1 => {
                let mut best = (f64::INFINITY, 0.0, 0u32);
                for i in 0..n_sym {
                    let d1 = pre[0] + sym(i).conj() * u[(0, t)];
                    let w = self.g[0].conj() * d1;
                    let j = nearest_phase(&axes[0], self.kappa, w.arg());
                    let b = C64::from_polar(1.0, self.kappa * axes[0][j]);
                    let v = -2.0 * (b.conj() * w).re;
                    if v < best.0 {
                        best = (v, axes[0][j], i);
                    }
                }
                (vec![best.1], vec![best.2], false)
            }
            2 => {
                let c12 = (self.basis.column(0).adjoint() * self.basis.column(1))[(0, 0)];
                let h_pre: C64 = (0..t).map(|tau| self.known(tau, 0).conj() * self.known(tau, 1)).sum();
                let (g1, g2) = (self.g[0], self.g[1]);
                let b1s: Vec<C64> = axes[0].iter().map(|f| C64::from_polar(1.0, self.kappa * f)).collect();
                // short axes are scanned directly; long ones by nearest phase
                let b2s: Option<Vec<C64>> = (axes[1].len() <= 16)
                    .then(|| axes[1].iter().map(|f| C64::from_polar(1.0, self.kappa * f)).collect());
                let mut best = (f64::INFINITY, 0.0, 0.0, 0u32, 0u32);
                for i1 in 0..n_sym {
                    let s1 = sym(i1);
                    let d1 = pre[0] + s1.conj() * u[(0, t)];
                    for i2 in 0..n_sym {
                        let s2 = sym(i2);
                        let d2 = pre[1] + s2.conj() * u[(1, t)];
                        let g12 = c12 * (h_pre + s1.conj() * s2);
                        let base = g2.conj() * d2;
                        let cross = g1 * g2.conj() * g12.conj();
                        for (j1, b1) in b1s.iter().enumerate() {
                            let w = base - b1 * cross;
                            let (j2, fit) = match &b2s {
                                Some(b2s) => {
                                    let mut top = (0, f64::NEG_INFINITY);
                                    for (j, b2) in b2s.iter().enumerate() {
                                        let v = b2.re * w.re + b2.im * w.im;
                                        if v > top.1 {
                                            top = (j, v);
                                        }
                                    }
                                    top
                                }
                                None => {
                                    let j = nearest_phase(&axes[1], self.kappa, w.arg());
                                    (j, (C64::from_polar(1.0, -self.kappa * axes[1][j]) * w).re)
                                }
                            };
                            let v = -2.0 * ((g1 * b1).conj() * d1).re - 2.0 * fit;
                            if v < best.0 {
                                best = (v, axes[0][j1], axes[1][j2], i1, i2);
                            }
                        }
                    }
                }
                (vec![best.1, best.2], vec![best.3, best.4], false)
            }
            _ => {
                let mut f: Vec<f64> = start.0.to_vec();
                let mut s: Vec<u32> = start.1.to_vec();
                for _ in 0..10 {
                    let mut changed = false;
                    for kk in 0..k {
                        // residual of the other drones projected on basis kk
                        let mut v = vec![C64::new(0.0, 0.0); t + 1];
                        for (tau, vt) in v.iter_mut().enumerate() {
                            let mut acc = u[(kk, tau)];
                            for p in 0..k {
                                if p != kk {
                                    let cp = (self.basis.column(kk).adjoint() * self.basis.column(p))[(0, 0)];
                                    acc -= self.g[p] * C64::from_polar(1.0, self.kappa * f[p]) * self.symbol(tau, p, &s) * cp;
                                }
                            }
                            *vt = acc;
                        }
                        let pre_k: C64 = (0..t).map(|tau| self.known(tau, kk).conj() * v[tau]).sum();
                        let mut best = (f64::INFINITY, f[kk], s[kk]);
                        for i in 0..n_sym {
                            let e = pre_k + sym(i).conj() * v[t];
                            let w = self.g[kk].conj() * e;
                            let j = nearest_phase(&axes[kk], self.kappa, w.arg());
                            let b = C64::from_polar(1.0, self.kappa * axes[kk][j]);
                            let val = -2.0 * (b.conj() * w).re;
                            if val < best.0 {
                                best = (val, axes[kk][j], i);
                            }
                        }
                        if best.1 != f[kk] || best.2 != s[kk] {
                            f[kk] = best.1;
                            s[kk] = best.2;
                            changed = true;
                        }
                    }
                    if !changed {
                        break;
                    }
                }
                (f, s, true)
            }
        }
    }
}

fn doppler_axis(center: f64, grid: &GridSpec, scale: f64, half: usize) -> Vec<f64> {
    if grid.doppler_range.1 > grid.doppler_range.0 {
        local_axis(center, grid.doppler_step * scale, half, grid.doppler_range)
    } else {
        vec![center]
    }
}

fn on_edge(axis: &[f64], v: f64) -> bool {
    axis.len() > 1 && (v == axis[0] || v == axis[axis.len() - 1])
}

/// Phase-2 search with coarse-to-fine refinement of the Doppler axes. The
/// coarse pass covers the whole Doppler range when `global` is set and
/// ±3 coarse steps around the current values otherwise.
fn phase2_refined(win: &Window, grid: &GridSpec, cur_f: &[f64], cur_s: &[u32], global: bool) -> (Vec<f64>, Vec<u32>, bool) {
    let k = win.k();
    let axes0: Vec<Vec<f64>> = (0..k)
        .map(|kk| if global { grid.dopplers() } else { doppler_axis(cur_f[kk], grid, 1.0, 3) })
        .collect();
    let (mut f, mut s, mut cyclic) = win.phase2(&axes0, (cur_f, cur_s));
    let half = (1.0 / grid.refine_shrink).round().max(1.0) as usize;
    for level in 1..=grid.refine_levels {
        let sc = grid.refine_shrink.powi(level as i32);
        for _ in 0..8 {
            let axes: Vec<Vec<f64>> = (0..k).map(|kk| doppler_axis(f[kk], grid, sc, half)).collect();
            let (nf, ns, c) = win.phase2(&axes, (&f, &s));
            cyclic |= c;
            let edge = (0..k).any(|kk| on_edge(&axes[kk], nf[kk]));
            f = nf;
            s = ns;
            if !edge {
                break;
            }
        }
    }
    (f, s, cyclic)
}

/// Best point of a (φ, θ, f) box for Re(e^{−jκf} a(φ,θ)ᴴz), ties to the
/// lowest index. a(φ,θ)ᴴz is summed separably as Σ_m e^{jmu} Σ_n e^{jnv} z_{m,n}.
fn block_box(array: &ArrayConfig, z: &[C64], kap: f64, az: &[f64], el: &[f64], dop: &[f64]) -> ((f64, f64, f64), f64) {
    let kd = 2.0 * PI * array.spacing_wavelengths;
    let (m_count, n_count) = (array.m_count, array.n_count);
    let rot: Vec<C64> = dop.iter().map(|f| C64::from_polar(1.0, -kap * f)).collect();
    let mut best = ((az[0], el[0], dop[0]), f64::NEG_INFINITY);
    for &phi in az {
        let (sp, cp) = phi.sin_cos();
        for &theta in el {
            let st = theta.sin();
            let eu = C64::from_polar(1.0, kd * cp * st);
            let ev = C64::from_polar(1.0, kd * sp * st);
            let mut w = C64::new(0.0, 0.0);
            let mut pm = C64::new(1.0, 0.0);
            for m in 0..m_count {
                let row = &z[m * n_count..(m + 1) * n_count];
                let mut acc = C64::new(0.0, 0.0);
                let mut qn = C64::new(1.0, 0.0);
                for zv in row {
                    acc += qn * zv;
                    qn *= ev;
                }
                w += pm * acc;
                pm *= eu;
            }
            for (r, &f) in rot.iter().zip(dop) {
                let v = r.re * w.re - r.im * w.im;
                if v > best.1 {
                    best = ((phi, theta, f), v);
                }
            }
        }
    }
    best
}

/// Phase 1: per-drone block update of (φ_k, θ_k, f_k) with the symbols held
/// fixed. With z_k = Σ_τ conj(g_k s_{τ,k}) r_τ, r_τ the window minus the other
/// drones, the score is Re(e^{−jκf} aᴴz_k). Freeing f here lets the block move
/// along the elevation–Doppler ridge that angle-only steps cannot follow.
fn phase1(
    y: &DMatrix<C64>,
    ctx: &ModelContext,
    grid: &GridSpec,
    params: &mut ParamVector,
    st: &[u32],
    win_meta: (&[C64], &[Vec<u32>], usize),
) {
    let (g, prefix, l) = win_meta;
    let kap = kappa(ctx, l);
    let mn = ctx.array.size();
    let k_count = params.k();
    let modulation = ctx.frame.modulation;
    let t = y.ncols() - 1;
    let sym = |tau: usize, k: usize| {
        if tau == 0 {
            C64::new(1.0, 0.0)
        } else if tau == t {
            modulation.symbol(st[k])
        } else {
            modulation.symbol(prefix[tau - 1][k])
        }
    };
    let mut a = vec![C64::new(0.0, 0.0); mn];
    let half = (1.0 / grid.refine_shrink).round().max(1.0) as usize;
    for k in 0..k_count {
        let mut r = y.clone();
        for p in 0..k_count {
            if p == k {
                continue;
            }
            fill_steering(&ctx.array, params.azimuths[p], params.elevations[p], &mut a);
            let amp = g[p] * C64::from_polar(1.0, kap * params.dopplers[p]);
            for tau in 0..=t {
                let c = amp * sym(tau, p);
                for i in 0..mn {
                    r[(i, tau)] -= c * a[i];
                }
            }
        }
        let mut z = DMatrix::from_element(mn, 1, C64::new(0.0, 0.0));
        for tau in 0..=t {
            let c = (g[k] * sym(tau, k)).conj();
            for i in 0..mn {
                z[(i, 0)] += c * r[(i, tau)];
            }
        }
        let z = z.as_slice();
        let mut best = (params.azimuths[k], params.elevations[k], params.dopplers[k]);
        let mut best_score = block_box(&ctx.array, z, kap, &[best.0], &[best.1], &[best.2]).1;
        for level in 0..=grid.refine_levels {
            let sc = grid.refine_shrink.powi(level as i32);
            let h = if level == 0 { 3 } else { half };
            for _ in 0..8 {
                let az = local_axis(best.0, grid.azimuth_step * sc, h, grid.azimuth_range);
                let el = local_axis(best.1, grid.elevation_step * sc, h, grid.elevation_range);
                let dop = doppler_axis(best.2, grid, sc, h);
                let (point, score) = block_box(&ctx.array, z, kap, &az, &el, &dop);
                if score <= best_score {
                    break;
                }
                best_score = score;
                best = point;
                if !(on_edge(&az, best.0) || on_edge(&el, best.1) || on_edge(&dop, best.2)) {
                    break;
                }
            }
        }
        params.azimuths[k] = best.0;
        params.elevations[k] = best.1;
        params.dopplers[k] = best.2;
    }
}

fn gains(ctx: &ModelContext) -> Vec<C64> {
    let c = ctx.defects.mean_factor();
    ctx.amplitudes.iter().map(|&a| c * a).collect()
}

fn steering_basis(ctx: &ModelContext, params: &ParamVector) -> DMatrix<C64> {
    let mn = ctx.array.size();
    let mut b = DMatrix::from_element(mn, params.k(), C64::new(0.0, 0.0));
    let mut a = vec![C64::new(0.0, 0.0); mn];
    for k in 0..params.k() {
        fill_steering(&ctx.array, params.azimuths[k], params.elevations[k], &mut a);
        for i in 0..mn {
            b[(i, k)] = a[i];
        }
    }
    b
}

/// Alternating MLE-MLE on one window. `init` is the previous window's
/// estimate; the pilot-only window runs AO-ML on the pilot instead (from
/// `init` when given, else from the coarse-grid MLE).
#[allow(clippy::too_many_arguments)]
pub fn mle_mle_window(
    window: &TimeWindow,
    subframe: &DMatrix<C64>,
    ctx: &ModelContext,
    grid: &GridSpec,
    solver: &SolverConfig,
    init: Option<&ParamVector>,
    table: Option<&SteeringTable>,
) -> Result<JointResult, JointError> {
    window.check(subframe.ncols())?;
    let l = window.subframe;
    let t = window.t;
    if t == 0 {
        let sctx = subframe_context(ctx, l);
        let pilot = subframe.column(0).into_owned();
        let out = aoml_estimate(&pilot, grid, solver, &sctx, init, table)?;
        return Ok(JointResult {
            window_len: 1,
            params: out.params,
            decoded: None,
            iterations: out.iterations,
            converged: out.converged,
            objective_trace: out.trace.iter().map(|e| e.objective).collect(),
            flags: WindowFlags::default(),
        });
    }
    let init = init.ok_or_else(|| LocateError::Invalid("windows after the pilot need an initial estimate".into()))?;
    let y = subframe.columns(0, t + 1).into_owned();
    let g = gains(ctx);
    let kap = kappa(ctx, l);
    let (modulation, _) = psk(ctx);
    let mut params = init.clone();
    let k_count = params.k();
    let mut flags = WindowFlags::default();

    let make_window = |p: &ParamVector| Window {
        y: y.clone(),
        basis: steering_basis(ctx, p),
        g: &g,
        prefix: &window.decoded_prefix,
        modulation,
        kappa: kap,
    };

    // initial symbol: best decision with the Doppler held fixed
    let mut st = vec![0u32; k_count];
    {
        let win = make_window(&params);
        let fixed: Vec<Vec<f64>> = params.dopplers.iter().map(|&f| vec![f]).collect();
        let (_, s0, c) = win.phase2(&fixed, (&params.dopplers, &st));
        st = s0;
        flags.cyclic_detection |= c;
    }
    let mut trace = vec![make_window(&params).objective(&params.dopplers, &st)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < solver.max_iters {
        iterations += 1;
        let prev = params.clone();
        let prev_s = st.clone();
        let mut cand = params.clone();
        phase1(&y, ctx, grid, &mut cand, &st, (&g, &window.decoded_prefix, l));
        let win = make_window(&cand);
        let global = t == 1 && iterations == 1;
        let (f, s, c) = phase2_refined(&win, grid, &cand.dopplers, &st, global);
        flags.cyclic_detection |= c;
        let new_obj = win.objective(&f, &s);
        let cur_obj = *trace.last().unwrap_or(&f64::INFINITY);
        // phase 1 never worsens the objective; keep phase 2 only if it helps
        let p1_obj = win.objective(&cand.dopplers, &st);
        if new_obj < p1_obj {
            cand.dopplers = f;
            st = s;
        }
        let obj = win.objective(&cand.dopplers, &st);
        if obj <= cur_obj {
            params = cand;
            trace.push(obj);
        } else {
            trace.push(cur_obj);
            st = prev_s.clone();
        }
        if params.normalized_distance(&prev) < solver.epsilon && st == prev_s {
            converged = true;
            break;
        }
    }
    Ok(JointResult {
        window_len: t + 1,
        params,
        decoded: Some(st),
        iterations,
        converged,
        objective_trace: trace,
        flags,
    })
}

/// Joint MUSIC-MLE on one window: MUSIC angles from the t+1 columns, then
/// compensation by the pseudo-inverse of Â and an exact (ŝ_t, f) search.
/// The (ŝ_t, f) search spans the whole Doppler range in every window, since
/// the first windows give MUSIC too few snapshots and a Doppler fitted there
/// must not trap later ones. `prev_doppler` only seeds the search.
pub fn music_mle_window(
    window: &TimeWindow,
    subframe: &DMatrix<C64>,
    ctx: &ModelContext,
    grid: &GridSpec,
    prev_doppler: Option<&[f64]>,
    table: Option<&SteeringTable>,
) -> Result<JointResult, JointError> {
    window.check(subframe.ncols())?;
    let l = window.subframe;
    let t = window.t;
    let k_count = ctx.amplitudes.len();
    let y = subframe.columns(0, t + 1).into_owned();
    let mut flags = WindowFlags::default();
    let loading = if t + 1 < k_count + 1 {
        flags.loaded = true;
        1e-6
    } else {
        0.0
    };
    let music = music_estimate_with(
        &y,
        k_count,
        &ctx.array,
        grid,
        &MusicOptions {
            diagonal_loading: loading,
        },
        table,
    )?;
    let mut params = ParamVector {
        azimuths: music.azimuths.clone(),
        elevations: music.elevations.clone(),
        dopplers: vec![0.0; k_count],
    };
    // MUSIC returns peaks by height; order them by azimuth, then elevation, so
    // labels are stable across windows (matching to truth happens later)
    let mut idx: Vec<usize> = (0..k_count).collect();
    idx.sort_by(|&a, &b| {
        params.azimuths[a]
            .total_cmp(&params.azimuths[b])
            .then(params.elevations[a].total_cmp(&params.elevations[b]))
    });
    params = params.permuted(&idx);

    let a_hat = steering_basis(ctx, &params);
    let svd = a_hat.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 0.0 || smax / smin > 1e8 {
        flags.ill_conditioned = true;
    }
    let pinv = svd
        .pseudo_inverse(1e-12 * smax.max(f64::MIN_POSITIVE))
        .map_err(|e| LocateError::Invalid(e.to_string()))?;
    let y2 = &pinv * &y;
    let basis = &pinv * &a_hat;
    let g = gains(ctx);
    let (modulation, _) = psk(ctx);
    let win = Window {
        y: y2,
        basis,
        g: &g,
        prefix: &window.decoded_prefix,
        modulation,
        kappa: kappa(ctx, l),
    };
    let start_f: Vec<f64> = prev_doppler.map(|p| p.to_vec()).unwrap_or_else(|| vec![grid.doppler_range.0; k_count]);
    let start_s = vec![0u32; k_count];
    let (f, s, cyclic) = phase2_refined(&win, grid, &start_f, &start_s, true);
    flags.cyclic_detection = cyclic;
    params.dopplers = f;
    let obj = win.objective(&params.dopplers, &s);
    Ok(JointResult {
        window_len: t + 1,
        params,
        decoded: if t == 0 { None } else { Some(s) },
        iterations: 1,
        converged: true,
        objective_trace: vec![obj],
        flags,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubframeRun {
    pub windows: Vec<JointResult>,
    /// K × T decoded symbol indices (0 where a window failed).
    pub decoded: DMatrix<u32>,
    /// (window length, message) for windows that failed.
    pub failures: Vec<(usize, String)>,
}

impl SubframeRun {
    /// Parameters of the last successful window.
    pub fn final_params(&self) -> Option<&ParamVector> {
        self.windows.last().map(|w| &w.params)
    }
}

/// Runs windows 1..=T+1 of subframe `l`, threading decoded symbols forward.
/// A failed window is recorded and its symbol set to index 0; the sweep
/// continues from the last good estimate.
pub fn run_subframe(
    subframe: &DMatrix<C64>,
    l: usize,
    algorithm: JointAlgorithm,
    ctx: &ModelContext,
    grid: &GridSpec,
    solver: &SolverConfig,
    table: Option<&SteeringTable>,
) -> SubframeRun {
    let t_count = subframe.ncols() - 1;
    let k_count = ctx.amplitudes.len();
    let mut windows = Vec::with_capacity(t_count + 1);
    let mut failures = Vec::new();
    let mut prefix: Vec<Vec<u32>> = Vec::new();
    let mut decoded = DMatrix::from_element(k_count, t_count, 0u32);
    let mut last: Option<ParamVector> = None;
    for t in 0..=t_count {
        let window = TimeWindow {
            subframe: l,
            t,
            decoded_prefix: prefix.clone(),
        };
        let res = match algorithm {
            JointAlgorithm::MleMle => mle_mle_window(&window, subframe, ctx, grid, solver, last.as_ref(), table),
            JointAlgorithm::MusicMle => music_mle_window(
                &window,
                subframe,
                ctx,
                grid,
                last.as_ref().map(|p| p.dopplers.as_slice()),
                table,
            ),
        };
        let symbols = match res {
            Ok(r) => {
                let s = r.decoded.clone();
                last = Some(r.params.clone());
                windows.push(r);
                s
            }
            Err(e) => {
                failures.push((t + 1, e.to_string()));
                None
            }
        };
        if t >= 1 {
            let s = symbols.unwrap_or_else(|| vec![0; k_count]);
            for k in 0..k_count {
                decoded[(k, t - 1)] = s[k];
            }
            prefix.push(s);
        }
    }
    SubframeRun {
        windows,
        decoded,
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{synthesize_frame, ArrayConfig, DroneTruth, FrameConfig, GainPhaseModel, NoiseModel, SceneConfig};
    use crate::specfun::SeriesPolicy;

    fn setup(t: usize, sigma2_rel: f64, seed: u64) -> (SceneConfig, ModelContext, crate::scene::ReceivedFrame) {
        let scene = SceneConfig::new(
            ArrayConfig::half_wavelength(4, 4),
            vec![
                DroneTruth::from_degrees(20.0, 30.0, 2000.0),
                DroneTruth::from_degrees(60.0, 50.0, 5000.0),
            ],
        )
        .unwrap();
        let frame = FrameConfig {
            subframes: 1,
            symbols_per_subframe: t,
            ..FrameConfig::default()
        };
        let sigma2 = sigma2_rel * scene.received_power();
        let rx = synthesize_frame(&scene, &frame, &GainPhaseModel::Ideal, &NoiseModel::Variance(sigma2), seed).unwrap();
        let ctx = ModelContext::new(&scene, &frame, &GainPhaseModel::Ideal, sigma2, &SeriesPolicy::default()).unwrap();
        (scene, ctx, rx)
    }

    #[test]
    fn nearest_phase_matches_brute_force() {
        let kap = 2.0 * PI / 1e5;
        for axis in [
            (0..101).map(|i| i as f64 * 100.0).collect::<Vec<f64>>(),
            (0..7).map(|i| 3000.0 + i as f64 * 20.0).collect(),
            (0..40).map(|i| i as f64 * 5000.0).collect(),
        ] {
            for step in 0..400 {
                let target = -PI + step as f64 * 0.0157;
                let j = nearest_phase(&axis, kap, target);
                let mut best = 0;
                for i in 1..axis.len() {
                    if (kap * axis[i] - target).cos() > (kap * axis[best] - target).cos() {
                        best = i;
                    }
                }
                let (a, b) = ((kap * axis[j] - target).cos(), (kap * axis[best] - target).cos());
                assert!((a - b).abs() < 1e-12, "target {target}: {j} vs {best}");
            }
        }
    }

    #[test]
    fn pilot_window_is_aoml() {
        let (_, ctx, rx) = setup(3, 1e-3, 11);
        let grid = GridSpec::default();
        let solver = SolverConfig::default();
        let w = TimeWindow {
            subframe: 0,
            t: 0,
            decoded_prefix: vec![],
        };
        let r = mle_mle_window(&w, &rx.samples[0], &ctx, &grid, &solver, None, None).unwrap();
        let direct = aoml_estimate(&rx.samples[0].column(0).into_owned(), &grid, &solver, &ctx, None, None).unwrap();
        assert_eq!(r.params, direct.params);
        assert_eq!(r.decoded, None);
    }

    #[test]
    fn phase2_matches_brute_force() {
        let (_, ctx, rx) = setup(3, 1e-2, 5);
        let truth = ParamVector::from_scene(&SceneConfig::new(
            ctx.array,
            vec![
                DroneTruth::from_degrees(20.0, 30.0, 2000.0),
                DroneTruth::from_degrees(60.0, 50.0, 5000.0),
            ],
        )
        .unwrap());
        let g = gains(&ctx);
        let prefix = vec![vec![rx.symbols[0][(0, 0)], rx.symbols[0][(1, 0)]], vec![3, 9]];
        let win = Window {
            y: rx.samples[0].columns(0, 4).into_owned(),
            basis: steering_basis(&ctx, &truth),
            g: &g,
            prefix: &prefix,
            modulation: ctx.frame.modulation,
            kappa: kappa(&ctx, 0),
        };
        let axes = vec![
            (0..9).map(|i| 1500.0 + 100.0 * i as f64).collect::<Vec<f64>>(),
            (0..7).map(|i| 4700.0 + 100.0 * i as f64).collect(),
        ];
        let (f, s, cyclic) = win.phase2(&axes, (&[0.0, 0.0], &[0, 0]));
        assert!(!cyclic);
        let got = win.objective(&f, &s);
        let mut best = f64::INFINITY;
        for s1 in 0..16 {
            for s2 in 0..16 {
                for &f1 in &axes[0] {
                    for &f2 in &axes[1] {
                        best = best.min(win.objective(&[f1, f2], &[s1, s2]));
                    }
                }
            }
        }
        assert!((got - best).abs() <= 1e-9 * best, "{got} vs {best}");
    }

    #[test]
    fn noiseless_subframe_decodes_every_symbol() {
        let (scene, ctx, rx) = setup(6, 0.0, 3);
        let grid = GridSpec::default();
        let solver = SolverConfig::default();
        let truth = ParamVector::from_scene(&scene);
        for alg in [JointAlgorithm::MleMle, JointAlgorithm::MusicMle] {
            let run = run_subframe(&rx.samples[0], 0, alg, &ctx, &grid, &solver, None);
            assert!(run.failures.is_empty(), "{alg:?}: {:?}", run.failures);
            let est = run.final_params().unwrap();
            let perm = match_perm(est, &truth);
            let est = est.permuted(&perm);
            for k in 0..2 {
                assert!((est.azimuths[k] - truth.azimuths[k]).abs() < 1e-6, "{alg:?} {est:?}");
                assert!((est.dopplers[k] - truth.dopplers[k]).abs() < 1e-3, "{alg:?} {est:?}");
                for t in 0..6 {
                    assert_eq!(run.decoded[(perm[k], t)], rx.symbols[0][(k, t)], "{alg:?} k={k} t={t}");
                }
            }
        }
    }

    fn match_perm(est: &ParamVector, truth: &ParamVector) -> Vec<usize> {
        crate::locate::match_to_truth(est, truth)
    }

    #[test]
    fn runs_are_deterministic() {
        let (_, ctx, rx) = setup(4, 1e-2, 8);
        let grid = GridSpec::default();
        let solver = SolverConfig::default();
        let a = run_subframe(&rx.samples[0], 0, JointAlgorithm::MleMle, &ctx, &grid, &solver, None);
        let b = run_subframe(&rx.samples[0], 0, JointAlgorithm::MleMle, &ctx, &grid, &solver, None);
        assert_eq!(a, b);
    }

    #[test]
    fn window_checks_prefix_length() {
        let (_, ctx, rx) = setup(3, 0.0, 1);
        let w = TimeWindow {
            subframe: 0,
            t: 2,
            decoded_prefix: vec![],
        };
        let err = music_mle_window(&w, &rx.samples[0], &ctx, &GridSpec::default(), None, None).unwrap_err();
        assert!(matches!(err, JointError::Prefix { got: 0, want: 1 }));
    }
}
