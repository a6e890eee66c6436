//! Two-photon propagation through a [`SystemOperator`], reduced intensities
//! and speckle contrast.

use std::ops::Range;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::optics::SystemOperator;
use crate::spdc::{schmidt_decompose, Grid1D, SchmidtDecomposition, TwoPhotonState};

/// Cumulative Schmidt weight kept when computing reduced intensities.
pub const MODE_WEIGHT_KEPT: f64 = 1.0 - 1e-6;

/// `ψ_out = T·ψ·Tᵀ`.
#[derive(Debug, Clone)]
pub struct OutputJointAmplitude {
    grid: Grid1D,
    amplitude: DMatrix<Complex64>,
}

impl OutputJointAmplitude {
    pub fn new(grid: Grid1D, amplitude: DMatrix<Complex64>) -> Result<Self> {
        let n = grid.n_points();
        if amplitude.nrows() != n || amplitude.ncols() != n {
            return Err(Error::GridMismatch {
                expected: n,
                found: amplitude.nrows().max(amplitude.ncols()),
            });
        }
        Ok(Self { grid, amplitude })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn amplitude(&self) -> &DMatrix<Complex64> {
        &self.amplitude
    }

    pub fn norm_sq(&self) -> f64 {
        let dx = self.grid.pitch();
        self.amplitude.iter().map(|z| z.norm_sqr()).sum::<f64>() * dx * dx
    }

    /// Row marginal `Σ_y |ψ_out(x, y)|²·dx`.
    pub fn marginal(&self) -> Vec<f64> {
        let dx = self.grid.pitch();
        self.amplitude
            .row_iter()
            .map(|row| row.iter().map(|z| z.norm_sqr()).sum::<f64>() * dx)
            .collect()
    }
}

/// Sends both photons through `system`.
pub fn propagate_two_photon(
    state: &TwoPhotonState,
    system: &SystemOperator,
) -> Result<OutputJointAmplitude> {
    let grid = *state.grid();
    system.grid().check_len(grid.n_points())?;
    let n = grid.n_points();
    let mut psi = state.amplitude().clone();
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    // Columns: T·ψ (storage is column-major, columns are contiguous).
    for mut col in psi.column_iter_mut() {
        buf.iter_mut().zip(col.iter()).for_each(|(b, z)| *b = *z);
        system.apply_in_place(&mut buf);
        col.iter_mut().zip(&buf).for_each(|(z, b)| *z = *b);
    }
    // Rows: (Tψ)·Tᵀ, row i becomes T applied to row i.
    for i in 0..n {
        for (j, b) in buf.iter_mut().enumerate() {
            *b = psi[(i, j)];
        }
        system.apply_in_place(&mut buf);
        for (j, b) in buf.iter().enumerate() {
            psi[(i, j)] = *b;
        }
    }
    OutputJointAmplitude::new(grid, psi)
}

/// Single-photon camera intensity, a probability density per meter.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityProfile {
    grid: Grid1D,
    values: Vec<f64>,
}

impl IntensityProfile {
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        grid.check_len(values.len())?;
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `Σ I·dx`
    pub fn total(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.pitch()
    }
}

/// Reduced intensity through the coherent-mode sum `Σ λ_n |T u_n|²`, keeping
/// modes up to [`MODE_WEIGHT_KEPT`] cumulative weight.
pub fn reduced_intensity(state: &TwoPhotonState, system: &SystemOperator) -> Result<IntensityProfile> {
    reduced_intensity_with(state, system, MODE_WEIGHT_KEPT)
}

/// As [`reduced_intensity`] with an explicit cumulative weight; `1.0` keeps
/// every mode.
pub fn reduced_intensity_with(
    state: &TwoPhotonState,
    system: &SystemOperator,
    weight_kept: f64,
) -> Result<IntensityProfile> {
    system.grid().check_len(state.grid().n_points())?;
    let modes = schmidt_decompose(state)?;
    let modes = if weight_kept >= 1.0 {
        modes
    } else {
        modes.truncated(weight_kept)
    };
    intensity_from_modes(&modes, system)
}

/// Coherent-mode sum for an existing decomposition (weights used as given).
pub fn intensity_from_modes(
    modes: &SchmidtDecomposition,
    system: &SystemOperator,
) -> Result<IntensityProfile> {
    let grid = *modes.grid();
    system.grid().check_len(grid.n_points())?;
    let n = grid.n_points();
    let mut values = vec![0.0; n];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (k, &lambda) in modes.weights().iter().enumerate() {
        buf.iter_mut()
            .zip(modes.modes().column(k).iter())
            .for_each(|(b, z)| *b = *z);
        system.apply_in_place(&mut buf);
        values
            .iter_mut()
            .zip(&buf)
            .for_each(|(v, z)| *v += lambda * z.norm_sqr());
    }
    IntensityProfile::new(grid, values)
}

/// Coherent intensity `|T f|²` of a single field, normalized to `Σ I·dx = 1`.
pub fn coherent_intensity(field: &[Complex64], system: &SystemOperator) -> Result<IntensityProfile> {
    let out = system.apply(field)?;
    let grid = *system.grid();
    let total: f64 = out.iter().map(|z| z.norm_sqr()).sum::<f64>() * grid.pitch();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::ZeroMean);
    }
    IntensityProfile::new(grid, out.iter().map(|z| z.norm_sqr() / total).collect())
}

/// Standard deviation over mean of the profile on `region` (population
/// standard deviation).
pub fn speckle_contrast(profile: &IntensityProfile, region: Range<usize>) -> Result<f64> {
    if region.is_empty() {
        return Err(Error::EmptyRegion);
    }
    if region.end > profile.values.len() {
        return Err(Error::RegionOutOfRange {
            start: region.start,
            end: region.end,
            len: profile.values.len(),
        });
    }
    let v = &profile.values[region];
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    if mean.is_nan() || mean <= 0.0 {
        return Err(Error::ZeroMean);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
    Ok(var.sqrt() / mean)
}

/// Smallest index range containing every pixel where `envelope` is at least
/// `fraction` of its peak.
pub fn central_region(envelope: &[f64], fraction: f64) -> Result<Range<usize>> {
    let peak = envelope.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if peak.is_nan() || peak <= 0.0 {
        return Err(Error::ZeroMean);
    }
    let thr = fraction * peak;
    let first = envelope.iter().position(|&v| v >= thr).ok_or(Error::EmptyRegion)?;
    let last = envelope.iter().rposition(|&v| v >= thr).ok_or(Error::EmptyRegion)?;
    Ok(first..last + 1)
}
