use nalgebra::DMatrix;

use super::search::{local_maxima, SteeringTable};
use super::{local_axis, GridSpec, LocateError};
use crate::scene::{fill_steering, ArrayConfig};
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MusicOptions {
    /// Adds `diagonal_loading · tr(R)/MN` to the sample covariance.
    pub diagonal_loading: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MusicOutcome {
    /// Peak angles, strongest first.
    pub azimuths: Vec<f64>,
    pub elevations: Vec<f64>,
    pub peak_values: Vec<f64>,
    /// Eigenvectors spanning the noise subspace (MN × (MN − K)).
    pub noise_subspace: DMatrix<C64>,
}

pub fn music_estimate(
    snapshots: &DMatrix<C64>,
    k: usize,
    array: &ArrayConfig,
    grid: &GridSpec,
) -> Result<MusicOutcome, LocateError> {
    music_estimate_with(snapshots, k, array, grid, &MusicOptions::default(), None)
}

struct Spectrum<'a> {
    array: &'a ArrayConfig,
    /// Signal-subspace basis, MN × K.
    signal: DMatrix<C64>,
}

impl Spectrum<'_> {
    /// 1 / aᴴ U_n U_nᴴ a = 1 / (‖a‖² − ‖U_sᴴ a‖²).
    fn value_of(&self, a: &[C64]) -> f64 {
        let mn = a.len();
        let mut proj = 0.0;
        for c in 0..self.signal.ncols() {
            let col = &self.signal.as_slice()[c * mn..(c + 1) * mn];
            let mut acc = C64::new(0.0, 0.0);
            for (u, x) in col.iter().zip(a) {
                acc += u.conj() * x;
            }
            proj += acc.norm_sqr();
        }
        1.0 / (mn as f64 - proj).max(1e-300)
    }

    fn at(&self, az: f64, el: f64, buf: &mut [C64]) -> f64 {
        fill_steering(self.array, az, el, buf);
        self.value_of(buf)
    }
}

/// MUSIC over the angle grid: peaks of the pseudo-spectrum on the coarse
/// lattice (local maxima along both axes), the `k` largest refined
/// coarse-to-fine. Doppler is not estimated.
pub fn music_estimate_with(
    snapshots: &DMatrix<C64>,
    k: usize,
    array: &ArrayConfig,
    grid: &GridSpec,
    opts: &MusicOptions,
    table: Option<&SteeringTable>,
) -> Result<MusicOutcome, LocateError> {
    grid.validate()?;
    let mn = array.size();
    if snapshots.nrows() != mn || snapshots.ncols() == 0 {
        return Err(LocateError::ObservationShape {
            got: snapshots.nrows(),
            want: mn,
        });
    }
    if k == 0 || k >= mn {
        return Err(LocateError::Invalid(format!("MUSIC needs 0 < K < MN, got K = {k}")));
    }
    let s = snapshots.ncols() as f64;
    let mut r = snapshots * snapshots.adjoint() / C64::new(s, 0.0);
    if opts.diagonal_loading > 0.0 {
        let load = opts.diagonal_loading * r.trace().re / mn as f64;
        for i in 0..mn {
            r[(i, i)] += load;
        }
    }
    let eig = r.symmetric_eigen();
    let mut order: Vec<usize> = (0..mn).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let noise_idx = &order[..mn - k];
    let signal_idx = &order[mn - k..];
    let pick = |idx: &[usize]| {
        let mut m = DMatrix::from_element(mn, idx.len(), C64::new(0.0, 0.0));
        for (c, &i) in idx.iter().enumerate() {
            m.set_column(c, &eig.eigenvectors.column(i));
        }
        m
    };
    let spectrum = Spectrum {
        array,
        signal: pick(signal_idx),
    };

    let owned;
    let table = match table {
        Some(t) if t.matches(array, grid) => t,
        _ => {
            owned = SteeringTable::new(array, grid);
            &owned
        }
    };
    let rows = table.azimuths().len();
    let cols = table.elevations().len();
    let mut values = Vec::with_capacity(rows * cols);
    for ia in 0..rows {
        for ie in 0..cols {
            values.push(spectrum.value_of(table.get(ia, ie)));
        }
    }
    let peaks = local_maxima(&values, rows, cols);
    if peaks.len() < k {
        return Err(LocateError::RankDeficient {
            found: peaks.len(),
            wanted: k,
        });
    }

    let half = (1.0 / grid.refine_shrink).round().max(1.0) as usize;
    let mut buf = vec![C64::new(0.0, 0.0); mn];
    let mut found: Vec<((f64, f64), f64)> = Vec::with_capacity(k);
    for &p in &peaks {
        if found.len() == k {
            break;
        }
        let mut best = (table.azimuths()[p / cols], table.elevations()[p % cols]);
        let mut best_v = values[p];
        for level in 1..=grid.refine_levels {
            let sc = grid.refine_shrink.powi(level as i32);
            let az = local_axis(best.0, grid.azimuth_step * sc, half, grid.azimuth_range);
            let el = local_axis(best.1, grid.elevation_step * sc, half, grid.elevation_range);
            for &a in &az {
                for &e in &el {
                    let v = spectrum.at(a, e, &mut buf);
                    if v > best_v {
                        best_v = v;
                        best = (a, e);
                    }
                }
            }
        }
        // a side lobe can climb onto a source that is already taken
        let taken = found.iter().any(|(f, _)| {
            (f.0 - best.0).abs() < grid.azimuth_step && (f.1 - best.1).abs() < grid.elevation_step
        });
        if !taken {
            found.push((best, best_v));
        }
    }
    if found.len() < k {
        return Err(LocateError::RankDeficient {
            found: found.len(),
            wanted: k,
        });
    }
    Ok(MusicOutcome {
        azimuths: found.iter().map(|f| f.0 .0).collect(),
        elevations: found.iter().map(|f| f.0 .1).collect(),
        peak_values: found.iter().map(|f| f.1).collect(),
        noise_subspace: pick(noise_idx),
    })
}
