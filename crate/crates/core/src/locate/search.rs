//! Single-source grid evaluation shared by the MLE, AO-ML and MUSIC
//! searches.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::GridSpec;
use crate::scene::{fill_steering, ArrayConfig};
use crate::C64;

/// Steering vectors on the coarse (azimuth × elevation) lattice of a grid.
/// Build once per array and grid and share between trials.
#[derive(Debug, Clone)]
pub struct SteeringTable {
    array: ArrayConfig,
    azimuths: Vec<f64>,
    elevations: Vec<f64>,
    data: Vec<C64>,
}

impl SteeringTable {
    pub fn new(array: &ArrayConfig, grid: &GridSpec) -> Self {
        let azimuths = grid.azimuths();
        let elevations = grid.elevations();
        let mn = array.size();
        let mut data = vec![C64::new(0.0, 0.0); azimuths.len() * elevations.len() * mn];
        for (ia, &az) in azimuths.iter().enumerate() {
            for (ie, &el) in elevations.iter().enumerate() {
                let off = (ia * elevations.len() + ie) * mn;
                fill_steering(array, az, el, &mut data[off..off + mn]);
            }
        }
        Self {
            array: *array,
            azimuths,
            elevations,
            data,
        }
    }

    /// True when this table was built for the same array and lattice.
    pub fn matches(&self, array: &ArrayConfig, grid: &GridSpec) -> bool {
        self.array == *array && self.azimuths == grid.azimuths() && self.elevations == grid.elevations()
    }

    pub fn azimuths(&self) -> &[f64] {
        &self.azimuths
    }

    pub fn elevations(&self) -> &[f64] {
        &self.elevations
    }

    pub fn get(&self, ia: usize, ie: usize) -> &[C64] {
        let mn = self.array.size();
        let off = (ia * self.elevations.len() + ie) * mn;
        &self.data[off..off + mn]
    }
}

/// Fit of one source with known complex scale `coef` to the residual
/// snapshots R (MN × L). The hypothesis mean is coef·a(φ,θ)·e^{jω_f(l+1)}, so
/// ‖R − μ‖² = ‖R‖² − 2·score + |coef|²·MN·L with
/// score = Re(conj(coef) Σ_l e^{−jω_f(l+1)} aᴴ r_l).
pub(crate) struct SourceFit<'a> {
    pub array: &'a ArrayConfig,
    pub residual: &'a DMatrix<C64>,
    pub sampling_hz: f64,
    pub coef: C64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct BoxBest {
    pub index: (usize, usize, usize),
    pub point: (f64, f64, f64),
    pub score: f64,
}

impl BoxBest {
    /// Optimum lies on the outer face of a box along an axis with more than
    /// one point.
    pub fn on_edge(&self, axes: &super::mle::Axes) -> bool {
        let edge = |i: usize, n: usize| n > 1 && (i == 0 || i + 1 == n);
        edge(self.index.0, axes.az.len()) || edge(self.index.1, axes.el.len()) || edge(self.index.2, axes.dop.len())
    }
}

impl SourceFit<'_> {
    fn doppler_table(&self, dopplers: &[f64]) -> Vec<C64> {
        let l_count = self.residual.ncols();
        let mut t = Vec::with_capacity(dopplers.len() * l_count);
        for &f in dopplers {
            for l in 0..l_count {
                let w = 2.0 * PI * f * (l + 1) as f64 / self.sampling_hz;
                // conj(coef)·e^{−jω(l+1)}
                t.push(self.coef.conj() * C64::from_polar(1.0, -w));
            }
        }
        t
    }

    fn correlate(&self, a: &[C64], z: &mut [C64]) {
        let mn = a.len();
        for (l, zl) in z.iter_mut().enumerate() {
            let col = &self.residual.as_slice()[l * mn..(l + 1) * mn];
            let mut acc = C64::new(0.0, 0.0);
            for (ai, ri) in a.iter().zip(col) {
                acc += ai.conj() * ri;
            }
            *zl = acc;
        }
    }

    /// Best (largest score) point of the box; ties keep the lowest
    /// (azimuth, elevation, Doppler) index in lexicographic order.
    pub fn search_box(&self, azimuths: &[f64], elevations: &[f64], dopplers: &[f64]) -> BoxBest {
        self.search_box_with(azimuths, elevations, dopplers, None)
    }

    pub fn search_box_with(
        &self,
        azimuths: &[f64],
        elevations: &[f64],
        dopplers: &[f64],
        table: Option<&SteeringTable>,
    ) -> BoxBest {
        let l_count = self.residual.ncols();
        let mn = self.array.size();
        let dt = self.doppler_table(dopplers);
        let mut a = vec![C64::new(0.0, 0.0); mn];
        let mut z = vec![C64::new(0.0, 0.0); l_count];
        let mut best = BoxBest {
            index: (0, 0, 0),
            point: (azimuths[0], elevations[0], dopplers[0]),
            score: f64::NEG_INFINITY,
        };
        for (ia, &az) in azimuths.iter().enumerate() {
            for (ie, &el) in elevations.iter().enumerate() {
                let av: &[C64] = match table {
                    Some(t) => t.get(ia, ie),
                    None => {
                        fill_steering(self.array, az, el, &mut a);
                        &a
                    }
                };
                self.correlate(av, &mut z);
                for (id, &f) in dopplers.iter().enumerate() {
                    let row = &dt[id * l_count..(id + 1) * l_count];
                    let mut s = 0.0;
                    for (e, zl) in row.iter().zip(&z) {
                        s += e.re * zl.re - e.im * zl.im;
                    }
                    if s > best.score {
                        best = BoxBest {
                            index: (ia, ie, id),
                            point: (az, el, f),
                            score: s,
                        };
                    }
                }
            }
        }
        best
    }

    /// Amplitude-free coarse map: for every (azimuth, elevation) cell the
    /// largest |Σ_l e^{−jω_f(l+1)} aᴴ r_l| over the Doppler axis and its
    /// Doppler index.
    pub fn peak_map(&self, table: &SteeringTable, dopplers: &[f64]) -> Vec<(f64, usize)> {
        let l_count = self.residual.ncols();
        let mut z = vec![C64::new(0.0, 0.0); l_count];
        let unit = SourceFit {
            coef: C64::new(1.0, 0.0),
            ..*self
        };
        let dt = unit.doppler_table(dopplers);
        let mut out = Vec::with_capacity(table.azimuths().len() * table.elevations().len());
        for ia in 0..table.azimuths().len() {
            for ie in 0..table.elevations().len() {
                self.correlate(table.get(ia, ie), &mut z);
                let mut best = (f64::NEG_INFINITY, 0);
                for id in 0..dopplers.len() {
                    let row = &dt[id * l_count..(id + 1) * l_count];
                    let mut acc = C64::new(0.0, 0.0);
                    for (e, zl) in row.iter().zip(&z) {
                        acc += e * zl;
                    }
                    let v = acc.norm_sqr();
                    if v > best.0 {
                        best = (v, id);
                    }
                }
                out.push(best);
            }
        }
        out
    }
}

/// Indices of 2D local maxima (≥ the four axis neighbours) of a row-major
/// `rows × cols` map, largest first; equal values keep index order.
pub(crate) fn local_maxima(values: &[f64], rows: usize, cols: usize) -> Vec<usize> {
    let mut peaks = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let v = values[r * cols + c];
            let ok = (r == 0 || v >= values[(r - 1) * cols + c])
                && (r + 1 == rows || v >= values[(r + 1) * cols + c])
                && (c == 0 || v >= values[r * cols + c - 1])
                && (c + 1 == cols || v >= values[r * cols + c + 1]);
            if ok {
                peaks.push(r * cols + c);
            }
        }
    }
    peaks.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    peaks
}
