//! Double-Gaussian two-photon states.
//!
//! The pair amplitude is modelled as
//!
//! ```text
//! ψ(x₁, x₂) ∝ exp(−(x₁ + x₂)² / (4A²)) · exp(−(x₁ − x₂)² / (4B²))
//! ```
//!
//! with sum width `A = 1/σ_p` and difference width `B = σ_r`, where
//! `σ_r = sqrt(L·λ_p / 6π)` and `σ_p = 1 / 2w` for crystal length `L`, pump
//! wavelength `λ_p` (taken as the in-crystal value) and pump waist `w`.
//! `B` is the standard deviation of `|ψ|²` along `x₁ − x₂`, `A` along `x₁ + x₂`.
//!
//! The simulation is one dimensional. [`SchmidtNumber::two_d`] is the usual
//! transverse (2D) Schmidt number and [`SchmidtNumber::one_d`] its square root,
//! which is the Schmidt number of the 1D amplitude above.

use std::f64::consts::{LN_2, PI};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of samples across the narrowest state width.
pub const MIN_SAMPLES_PER_WIDTH: f64 = 2.0;
/// Minimum grid extent in units of the widest state width.
pub const MIN_EXTENT_PER_WIDTH: f64 = 4.0;
/// Fraction of the analytic norm a grid must capture.
pub const MIN_CAPTURED_NORM: f64 = 0.999;

/// Uniform 1D sampling grid centered on zero.
///
/// Sample `k` sits at `x_k = (k − n/2 + 1/2)·dx`, so the grid is symmetric
/// about the origin for both odd and even `n` and `x_k = −x_{n−1−k}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    n_points: usize,
    extent: f64,
}

impl Grid1D {
    pub fn new(n_points: usize, extent: f64) -> Result<Self> {
        if n_points < 2 {
            return Err(Error::InvalidParameter(format!(
                "grid needs at least 2 points, got {n_points}"
            )));
        }
        if !(extent.is_finite() && extent > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "grid extent must be positive, got {extent}"
            )));
        }
        Ok(Self { n_points, extent })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn pitch(&self) -> f64 {
        self.extent / self.n_points as f64
    }

    /// Fractional index of the origin, `(n − 1)/2`.
    pub fn center(&self) -> f64 {
        (self.n_points as f64 - 1.0) / 2.0
    }

    pub fn coordinate(&self, k: usize) -> f64 {
        (k as f64 - self.center()) * self.pitch()
    }

    pub fn coordinates(&self) -> Vec<f64> {
        (0..self.n_points).map(|k| self.coordinate(k)).collect()
    }

    /// Index of the sample closest to `x`, clamped to the grid.
    pub fn nearest_index(&self, x: f64) -> usize {
        let k = (x / self.pitch() + self.center()).round();
        k.clamp(0.0, (self.n_points - 1) as f64) as usize
    }

    /// Index of the sample at `−x_k`.
    pub fn mirror_index(&self, k: usize) -> usize {
        self.n_points - 1 - k
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n_points {
            return Err(Error::GridMismatch {
                expected: self.n_points,
                found: len,
            });
        }
        Ok(())
    }
}

/// Physical source parameters (SI units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpdcConfig {
    pub crystal_length: f64,
    /// Pump wavelength inside the crystal. See [`wavelength_in_medium`].
    pub pump_wavelength: f64,
    pub pump_waist: f64,
}

impl SpdcConfig {
    pub fn new(crystal_length: f64, pump_wavelength: f64, pump_waist: f64) -> Result<Self> {
        for (name, v) in [
            ("crystal_length", crystal_length),
            ("pump_wavelength", pump_wavelength),
            ("pump_waist", pump_waist),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(Self {
            crystal_length,
            pump_wavelength,
            pump_waist,
        })
    }

    /// `L·λ_p`
    fn length_wavelength(&self) -> f64 {
        self.crystal_length * self.pump_wavelength
    }

    /// `24π·w²`
    fn pump_area_term(&self) -> f64 {
        24.0 * PI * self.pump_waist * self.pump_waist
    }
}

/// Converts a vacuum wavelength to the wavelength inside a medium of the given
/// refractive index. Never applied implicitly.
pub fn wavelength_in_medium(vacuum_wavelength: f64, refractive_index: f64) -> Result<f64> {
    if !(refractive_index.is_finite() && refractive_index > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "refractive index must be positive, got {refractive_index}"
        )));
    }
    Ok(vacuum_wavelength / refractive_index)
}

/// Position correlation width `σ_r = sqrt(L·λ_p / 6π)` in meters.
pub fn sigma_r(config: &SpdcConfig) -> f64 {
    (config.length_wavelength() / (6.0 * PI)).sqrt()
}

/// Momentum correlation width `σ_p = 1/(2w)` in inverse meters.
pub fn sigma_p(config: &SpdcConfig) -> f64 {
    1.0 / (2.0 * config.pump_waist)
}

/// Exponent coefficient `c` of `g¹(r, −r) = exp(−c·r²)`.
pub fn g1_coefficient(config: &SpdcConfig) -> f64 {
    let lw = config.length_wavelength();
    let pa = config.pump_area_term();
    let w2 = config.pump_waist * config.pump_waist;
    (pa - lw).powi(2) / (8.0 * w2 * (pa + lw) * lw)
}

/// First-order coherence between `r` and `−r`.
pub fn g1_analytic(config: &SpdcConfig, r: f64) -> f64 {
    (-g1_coefficient(config) * r * r).exp()
}

/// Full width at half maximum of [`g1_analytic`] as a function of `r`.
pub fn g1_fwhm(config: &SpdcConfig) -> Result<f64> {
    let c = g1_coefficient(config);
    if c <= 0.0 {
        return Err(Error::InfiniteWidth);
    }
    Ok(2.0 * (LN_2 / c).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchmidtNumber {
    pub two_d: f64,
    pub one_d: f64,
}

impl SchmidtNumber {
    pub fn from_one_d(one_d: f64) -> Self {
        Self {
            two_d: one_d * one_d,
            one_d,
        }
    }
}

pub fn schmidt_number_analytic(config: &SpdcConfig) -> SchmidtNumber {
    let lw = config.length_wavelength();
    let pa = config.pump_area_term();
    let ratio = (pa + lw) / (pa.sqrt() * lw.sqrt());
    let two_d = 0.25 * ratio * ratio;
    SchmidtNumber {
        two_d,
        one_d: 0.5 * ratio,
    }
}

/// Widths of the double-Gaussian amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianStateParams {
    /// `A`, standard deviation of `|ψ|²` along `x₁ + x₂`.
    pub sum_width: f64,
    /// `B`, standard deviation of `|ψ|²` along `x₁ − x₂`.
    pub diff_width: f64,
}

/// Thin-lens Fourier relay between two planes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierRelay {
    pub focal_length: f64,
    pub wavelength: f64,
}

impl GaussianStateParams {
    pub fn new(sum_width: f64, diff_width: f64) -> Result<Self> {
        for (name, v) in [("sum_width", sum_width), ("diff_width", diff_width)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(Self {
            sum_width,
            diff_width,
        })
    }

    pub fn from_config(config: &SpdcConfig) -> Self {
        Self {
            sum_width: 1.0 / sigma_p(config),
            diff_width: sigma_r(config),
        }
    }

    /// State with the given difference width and 1D Schmidt number, on the
    /// `A ≥ B` branch of `K = (A/B + B/A)/2`.
    pub fn from_schmidt_1d(diff_width: f64, k_1d: f64) -> Result<Self> {
        if !(k_1d.is_finite() && k_1d >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "1D Schmidt number must be >= 1, got {k_1d}"
            )));
        }
        let ratio = k_1d + (k_1d * k_1d - 1.0).sqrt();
        Self::new(diff_width * ratio, diff_width)
    }

    pub fn schmidt_number(&self) -> SchmidtNumber {
        let r = self.sum_width / self.diff_width;
        SchmidtNumber::from_one_d(0.5 * (r + 1.0 / r))
    }

    /// Widths after an `f–f` Fourier relay. Sum and difference roles swap:
    /// a width `a` becomes `f·λ/(2π·a)`, so the Schmidt number is unchanged.
    pub fn fourier_relay(&self, relay: &FourierRelay) -> Result<Self> {
        let scale = relay.focal_length * relay.wavelength / (2.0 * PI);
        Self::new(scale / self.sum_width, scale / self.diff_width)
    }

    /// Coefficient `c` of `g¹(r, −r) = exp(−c·r²)` for these widths.
    pub fn g1_coefficient(&self) -> f64 {
        let alpha = 0.25 / (self.sum_width * self.sum_width);
        let beta = 0.25 / (self.diff_width * self.diff_width);
        2.0 * (alpha - beta).powi(2) / (alpha + beta)
    }

    /// `∫∫ |ψ|² dx₁ dx₂` for the unnormalized amplitude.
    fn analytic_norm_sq(&self) -> f64 {
        PI * self.sum_width * self.diff_width
    }
}

/// Discretized pair amplitude with `Σ|ψ_ij|²·dx² = 1`.
///
/// Row index is the idler position, column index the signal position.
#[derive(Debug, Clone)]
pub struct TwoPhotonState {
    grid: Grid1D,
    amplitude: DMatrix<Complex64>,
}

impl TwoPhotonState {
    /// Wraps an amplitude, rescaling it to unit norm.
    pub fn from_amplitude(grid: Grid1D, mut amplitude: DMatrix<Complex64>) -> Result<Self> {
        let n = grid.n_points();
        if amplitude.nrows() != n || amplitude.ncols() != n {
            return Err(Error::GridMismatch {
                expected: n,
                found: amplitude.nrows().max(amplitude.ncols()),
            });
        }
        let dx = grid.pitch();
        let norm_sq: f64 = amplitude.iter().map(|z| z.norm_sqr()).sum::<f64>() * dx * dx;
        if !(norm_sq.is_finite() && norm_sq > 0.0) {
            return Err(Error::InvalidParameter("amplitude has zero norm".into()));
        }
        let scale = 1.0 / norm_sq.sqrt();
        amplitude.iter_mut().for_each(|z| *z *= scale);
        Ok(Self { grid, amplitude })
    }

    /// Product state `f(x₁)·f(x₂)`.
    pub fn product(grid: Grid1D, field: &[Complex64]) -> Result<Self> {
        grid.check_len(field.len())?;
        let n = grid.n_points();
        let amplitude = DMatrix::from_fn(n, n, |i, j| field[i] * field[j]);
        Self::from_amplitude(grid, amplitude)
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

    /// Largest `|ψ_ij − ψ_ji|`.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.grid.n_points();
        let mut worst = 0.0_f64;
        for j in 0..n {
            for i in (j + 1)..n {
                worst = worst.max((self.amplitude[(i, j)] - self.amplitude[(j, i)]).norm());
            }
        }
        worst
    }

    fn as_real_symmetric(&self) -> Option<DMatrix<f64>> {
        if self.amplitude.iter().any(|z| z.im != 0.0) {
            return None;
        }
        let re = self.amplitude.map(|z| z.re);
        if re != re.transpose() {
            return None;
        }
        Some(re)
    }
}

/// Samples the double-Gaussian amplitude on `grid`.
pub fn build_state(params: &GaussianStateParams, grid: &Grid1D) -> Result<TwoPhotonState> {
    let dx = grid.pitch();
    let narrow = params.sum_width.min(params.diff_width);
    let wide = params.sum_width.max(params.diff_width);
    if dx > narrow / MIN_SAMPLES_PER_WIDTH {
        return Err(Error::UndersampledGrid {
            pitch: dx,
            width: narrow,
        });
    }
    if grid.extent() < MIN_EXTENT_PER_WIDTH * wide {
        return Err(Error::TruncatedState {
            extent: grid.extent(),
            captured: f64::NAN,
        });
    }

    let n = grid.n_points();
    let xs = grid.coordinates();
    let inv_sum = 0.25 / (params.sum_width * params.sum_width);
    let inv_diff = 0.25 / (params.diff_width * params.diff_width);
    let amplitude = DMatrix::from_fn(n, n, |i, j| {
        let s = xs[i] + xs[j];
        let d = xs[i] - xs[j];
        Complex64::new((-s * s * inv_sum - d * d * inv_diff).exp(), 0.0)
    });

    let captured =
        amplitude.iter().map(|z| z.norm_sqr()).sum::<f64>() * dx * dx / params.analytic_norm_sq();
    if captured < MIN_CAPTURED_NORM {
        return Err(Error::TruncatedState {
            extent: grid.extent(),
            captured,
        });
    }
    TwoPhotonState::from_amplitude(*grid, amplitude)
}

/// Schmidt modes and weights of a pair amplitude:
/// `ψ(x₁, x₂) = Σ_n sqrt(λ_n)·u_n(x₁)·v_n(x₂)`.
///
/// Modes are normalized on the grid, `Σ_k |u_n(x_k)|²·dx = 1`, and stored as
/// matrix columns in order of decreasing weight.
#[derive(Debug, Clone)]
pub struct SchmidtDecomposition {
    grid: Grid1D,
    weights: Vec<f64>,
    modes: DMatrix<Complex64>,
    partners: DMatrix<Complex64>,
}

impl SchmidtDecomposition {
    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    /// `λ_n`, non-negative, descending, summing to one.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Idler-side modes `u_n` as columns.
    pub fn modes(&self) -> &DMatrix<Complex64> {
        &self.modes
    }

    /// Signal-side modes `v_n` as columns.
    pub fn partners(&self) -> &DMatrix<Complex64> {
        &self.partners
    }

    pub fn mode(&self, n: usize) -> Vec<Complex64> {
        self.modes.column(n).iter().copied().collect()
    }

    /// `1 / Σ λ_n²`
    pub fn schmidt_number(&self) -> f64 {
        1.0 / self.weights.iter().map(|l| l * l).sum::<f64>()
    }

    /// Smallest mode count whose cumulative weight reaches `weight`.
    pub fn modes_for_weight(&self, weight: f64) -> usize {
        let mut acc = 0.0;
        for (k, l) in self.weights.iter().enumerate() {
            acc += l;
            if acc >= weight {
                return k + 1;
            }
        }
        self.weights.len()
    }

    /// Keeps the leading modes carrying at least `weight` of the norm and
    /// renormalizes their weights.
    pub fn truncated(&self, weight: f64) -> SchmidtDecomposition {
        let keep = self.modes_for_weight(weight);
        let total: f64 = self.weights[..keep].iter().sum();
        SchmidtDecomposition {
            grid: self.grid,
            weights: self.weights[..keep].iter().map(|l| l / total).collect(),
            modes: self.modes.columns(0, keep).into_owned(),
            partners: self.partners.columns(0, keep).into_owned(),
        }
    }

    /// Single-mode decomposition of a coherent field (normalized on the grid).
    pub fn coherent(grid: Grid1D, field: &[Complex64]) -> Result<Self> {
        grid.check_len(field.len())?;
        let dx = grid.pitch();
        let norm = (field.iter().map(|z| z.norm_sqr()).sum::<f64>() * dx).sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidParameter("coherent field has zero norm".into()));
        }
        let modes = DMatrix::from_iterator(grid.n_points(), 1, field.iter().map(|z| z / norm));
        Ok(Self {
            grid,
            weights: vec![1.0],
            partners: modes.clone(),
            modes,
        })
    }
}

/// Eigen-based Schmidt modes of a real symmetric `ψ·dx`; `None` if the
/// solver fails or produces non-finite values.
///
/// Entries below `ε·max/n` are zeroed first. That perturbs the spectrum by at
/// most `ε·max`, and keeps the Gaussian tails from underflowing inside the
/// rotations, which otherwise can turn eigenpairs into NaN.
fn symmetric_modes(
    mut m: DMatrix<f64>,
    inv_sqrt_dx: f64,
) -> Option<(Vec<f64>, DMatrix<Complex64>, DMatrix<Complex64>)> {
    let floor = f64::EPSILON * m.amax() / m.nrows() as f64;
    m.iter_mut().filter(|v| v.abs() < floor).for_each(|v| *v = 0.0);
    let eig = SymmetricEigen::try_new(m, f64::EPSILON, 0)?;
    if eig.eigenvalues.iter().chain(eig.eigenvectors.iter()).any(|v| !v.is_finite()) {
        return None;
    }
    let singular: Vec<f64> = eig.eigenvalues.iter().map(|v| v.abs()).collect();
    let modes = eig.eigenvectors.map(|v| Complex64::new(v * inv_sqrt_dx, 0.0));
    let mut partners = modes.clone();
    for (k, v) in eig.eigenvalues.iter().enumerate() {
        if *v < 0.0 {
            partners.column_mut(k).iter_mut().for_each(|z| *z = -*z);
        }
    }
    Some((singular, modes, partners))
}

/// Schmidt decomposition through the singular values of `ψ·dx`.
///
/// Real symmetric amplitudes (every double-Gaussian state) go through a
/// symmetric eigensolver: singular values are the moduli of the eigenvalues
/// and the signal modes pick up the eigenvalue sign. Anything else, or an
/// eigensolver failure, uses a complex SVD.
pub fn schmidt_decompose(state: &TwoPhotonState) -> Result<SchmidtDecomposition> {
    let grid = *state.grid();
    let n = grid.n_points();
    let dx = grid.pitch();
    let inv_sqrt_dx = 1.0 / dx.sqrt();

    let symmetric = state
        .as_real_symmetric()
        .and_then(|real| symmetric_modes(real * dx, inv_sqrt_dx));
    let (mut singular, modes, partners) = if let Some(found) = symmetric {
        found
    } else {
        let m = state.amplitude() * Complex64::new(dx, 0.0);
        let svd = m
            .try_svd(true, true, f64::EPSILON, 0)
            .ok_or_else(|| Error::DecompositionFailure("SVD did not converge".into()))?;
        let u = svd
            .u
            .ok_or_else(|| Error::DecompositionFailure("missing left vectors".into()))?;
        let v_t = svd
            .v_t
            .ok_or_else(|| Error::DecompositionFailure("missing right vectors".into()))?;
        let modes = u.map(|z| z * inv_sqrt_dx);
        // ψ = Σ s·U·V†, so the signal mode is the conjugate of V's column,
        // i.e. the row of V† as is.
        let partners = DMatrix::from_fn(n, v_t.nrows(), |i, k| v_t[(k, i)] * inv_sqrt_dx);
        (svd.singular_values.iter().copied().collect(), modes, partners)
    };

    let mut order: Vec<usize> = (0..singular.len()).collect();
    order.sort_by(|&a, &b| singular[b].total_cmp(&singular[a]));
    let total: f64 = singular.iter().map(|s| s * s).sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::DecompositionFailure("state has zero norm".into()));
    }
    let weights: Vec<f64> = order.iter().map(|&k| singular[k] * singular[k] / total).collect();
    let modes = DMatrix::from_fn(n, order.len(), |i, k| modes[(i, order[k])]);
    let partners = DMatrix::from_fn(n, order.len(), |i, k| partners[(i, order[k])]);
    singular.clear();

    Ok(SchmidtDecomposition {
        grid,
        weights,
        modes,
        partners,
    })
}

/// First-order coherence between the samples nearest to `r` and `−r`,
/// computed from the reduced density matrix of the idler photon.
pub fn g1_numeric(state: &TwoPhotonState, r: f64) -> Result<f64> {
    let grid = state.grid();
    let psi = state.amplitude();
    let dx = grid.pitch();
    let i = grid.nearest_index(r);
    let j = grid.nearest_index(-r);

    let rho = |a: usize, b: usize| -> Complex64 {
        psi.row(a)
            .iter()
            .zip(psi.row(b).iter())
            .map(|(p, q)| p * q.conj())
            .sum::<Complex64>()
            * dx
    };

    let peak = (0..grid.n_points())
        .map(|k| rho(k, k).re)
        .fold(0.0_f64, f64::max);
    let rho_ii = rho(i, i).re;
    let rho_jj = rho(j, j).re;
    if rho_ii < 1e-15 * peak || rho_jj < 1e-15 * peak {
        return Err(Error::ZeroIntensity);
    }
    Ok((rho(i, j).norm() / (rho_ii * rho_jj).sqrt()).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decomposition_survives_underflowing_tails() {
        // Narrow widths on a wide grid leave most entries far below 1e-150.
        let grid = Grid1D::new(1024, 1.0).unwrap();
        let params = GaussianStateParams::new(0.0229, 0.0039).unwrap();
        let d = schmidt_decompose(&build_state(&params, &grid).unwrap()).unwrap();
        let k = params.schmidt_number().one_d;
        assert!((d.schmidt_number() - k).abs() < 1e-9 * k);
        assert!(d.modes().iter().all(|z| z.is_finite()));
    }

    fn reference_source(waist: f64) -> SpdcConfig {
        SpdcConfig::new(1e-3, 406e-9, waist).unwrap()
    }

    #[test]
    fn sigma_r_values() {
        let c = reference_source(1e-3);
        assert!((sigma_r(&c) - 4.641e-6).abs() < 5e-10);
        let c4 = SpdcConfig::new(4e-3, 406e-9, 1e-3).unwrap();
        assert!((sigma_r(&c4) / sigma_r(&c) - 2.0).abs() < 1e-12);
        let c810 = SpdcConfig::new(1e-3, 810e-9, 1e-3).unwrap();
        // 6.5553 µm; quoted to four figures as 6.556.
        assert!((sigma_r(&c810) - 6.556e-6).abs() < 1e-9);
    }

    #[test]
    fn sigma_p_values() {
        assert!((sigma_p(&reference_source(1e-3)) - 500.0).abs() < 1e-9);
        assert!((sigma_p(&reference_source(2e-3)) - 250.0).abs() < 1e-9);
        assert!((sigma_p(&reference_source(50e-6)) - 10_000.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_nonpositive_config() {
        assert!(SpdcConfig::new(0.0, 406e-9, 1e-3).is_err());
        assert!(SpdcConfig::new(1e-3, f64::NAN, 1e-3).is_err());
        assert!(SpdcConfig::new(1e-3, 406e-9, -1.0).is_err());
    }

    #[test]
    fn g1_analytic_values() {
        let c = reference_source(1e-3);
        assert_eq!(g1_analytic(&c, 0.0), 1.0);
        // 2.3214e10 m⁻² · r² = 1 at r = 6.563 µm
        assert!((g1_coefficient(&c) - 2.3214e10).abs() / 2.3214e10 < 1e-4);
        assert!((g1_analytic(&c, 6.563e-6) - (-1.0_f64).exp()).abs() < 1e-3);
    }

    #[test]
    fn balanced_config_is_fully_coherent() {
        // 24πw² = Lλ_p
        let lw = 1e-3 * 406e-9;
        let w = (lw / (24.0 * PI)).sqrt();
        let c = reference_source(w);
        for r in [1e-6, 1e-5, 1e-3] {
            assert!((g1_analytic(&c, r) - 1.0).abs() < 1e-12);
        }
        assert!(matches!(g1_fwhm(&c), Err(Error::InfiniteWidth)));
        let k = schmidt_number_analytic(&c);
        assert!((k.two_d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn g1_fwhm_matches_quoted_coherence_length() {
        let fwhm = g1_fwhm(&reference_source(1e-3)).unwrap();
        assert!((fwhm - 10.93e-6).abs() < 0.01e-6, "{fwhm}");
    }

    #[test]
    fn g1_fwhm_scales_inverse_sqrt() {
        let c = reference_source(1e-3);
        let k = g1_coefficient(&c);
        // FWHM is 2·sqrt(ln2/c); quadrupling c halves it.
        let w1 = 2.0 * (LN_2 / k).sqrt();
        let w4 = 2.0 * (LN_2 / (4.0 * k)).sqrt();
        assert!((g1_fwhm(&c).unwrap() - w1).abs() < 1e-18);
        assert!((w1 / w4 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn schmidt_number_values() {
        let k = schmidt_number_analytic(&reference_source(50e-6));
        assert!((k.two_d - 116.6).abs() < 0.1, "{}", k.two_d);
        assert!((k.one_d - 10.80).abs() < 0.01, "{}", k.one_d);
        assert!((k.one_d * k.one_d - k.two_d).abs() < 1e-9);
    }

    #[test]
    fn schmidt_number_swap_symmetry() {
        // Swapping 24πw² and Lλ_p: pick L·λ so that Lλ' = 24πw² and w' with
        // 24πw'² = Lλ.
        let a = reference_source(30e-6);
        let lw = a.crystal_length * a.pump_wavelength;
        let pa = 24.0 * PI * a.pump_waist.powi(2);
        let b = SpdcConfig::new(1e-3, pa / 1e-3, (lw / (24.0 * PI)).sqrt()).unwrap();
        let (ka, kb) = (schmidt_number_analytic(&a), schmidt_number_analytic(&b));
        assert!((ka.two_d - kb.two_d).abs() / ka.two_d < 1e-12);
    }

    #[test]
    fn params_match_config_schmidt_number() {
        let c = reference_source(50e-6);
        let p = GaussianStateParams::from_config(&c);
        let k = p.schmidt_number();
        assert!((k.one_d - schmidt_number_analytic(&c).one_d).abs() < 1e-9);
        assert!((p.g1_coefficient() - g1_coefficient(&c)).abs() / g1_coefficient(&c) < 1e-9);
    }

    #[test]
    fn from_schmidt_roundtrip() {
        for k in [1.0, 1.2, 2.0, 16.0, 32.0] {
            let p = GaussianStateParams::from_schmidt_1d(133e-6, k).unwrap();
            assert!(p.sum_width >= p.diff_width);
            assert!((p.schmidt_number().one_d - k).abs() < 1e-9 * k);
        }
        assert!(GaussianStateParams::from_schmidt_1d(133e-6, 0.5).is_err());
    }

    #[test]
    fn fourier_relay_swaps_roles_and_keeps_k() {
        let p = GaussianStateParams::from_schmidt_1d(133e-6, 8.0).unwrap();
        let relay = FourierRelay {
            focal_length: 1.5,
            wavelength: 810e-9,
        };
        let q = p.fourier_relay(&relay).unwrap();
        assert!(q.sum_width < q.diff_width);
        assert!((q.schmidt_number().one_d - 8.0).abs() < 1e-9);
        let scale = 1.5 * 810e-9 / (2.0 * PI);
        assert!((q.diff_width - scale / 133e-6).abs() < 1e-15);
    }

    #[test]
    fn grid_convention() {
        let g = Grid1D::new(4, 4.0).unwrap();
        assert_eq!(g.coordinates(), vec![-1.5, -0.5, 0.5, 1.5]);
        let g = Grid1D::new(3, 3.0).unwrap();
        assert_eq!(g.coordinates(), vec![-1.0, 0.0, 1.0]);
        assert_eq!(g.nearest_index(0.9), 2);
        assert_eq!(g.mirror_index(0), 2);
        assert!(Grid1D::new(1, 1.0).is_err());
        assert!(Grid1D::new(8, 0.0).is_err());
    }

    #[test]
    fn build_state_errors() {
        let grid = Grid1D::new(64, 1.0).unwrap();
        let coarse = GaussianStateParams::new(0.1, 0.01).unwrap();
        assert!(matches!(
            build_state(&coarse, &grid),
            Err(Error::UndersampledGrid { .. })
        ));
        let wide = GaussianStateParams::new(0.3, 0.1).unwrap();
        assert!(matches!(
            build_state(&wide, &grid),
            Err(Error::TruncatedState { .. })
        ));
    }

    #[test]
    fn balanced_state_factorizes() {
        let grid = Grid1D::new(128, 1.0).unwrap();
        let p = GaussianStateParams::new(0.1, 0.1).unwrap();
        let state = build_state(&p, &grid).unwrap();
        assert!((state.norm_sq() - 1.0).abs() < 1e-10);
        let d = schmidt_decompose(&state).unwrap();
        assert!((d.weights()[0] - 1.0).abs() < 1e-10);
        assert!(d.weights()[1..].iter().all(|&l| l < 1e-8));
    }

    #[test]
    fn fig4_grid_state_invariants() {
        let grid = Grid1D::new(1500, 10e-3).unwrap();
        for k in [1.0, 4.0] {
            let p = GaussianStateParams::from_schmidt_1d(133e-6, k).unwrap();
            let state = build_state(&p, &grid).unwrap();
            assert!((state.norm_sq() - 1.0).abs() < 1e-10);
            assert!(state.symmetry_defect() < 1e-12);
            assert!(state.amplitude().iter().all(|z| z.im == 0.0 && z.re >= 0.0));
        }
    }

    #[test]
    fn schmidt_weights_decay_geometrically() {
        let grid = Grid1D::new(512, 1.0).unwrap();
        let p = GaussianStateParams::new(0.1, 0.01).unwrap();
        let d = schmidt_decompose(&build_state(&p, &grid).unwrap()).unwrap();
        let w = d.weights();
        let r0 = w[1] / w[0];
        for k in 1..10 {
            assert!((w[k + 1] / w[k] - r0).abs() < 1e-3, "mode {k}");
        }
        // (A/B − 1)²/(A/B + 1)² for A/B = 10
        assert!((r0 - (9.0f64 / 11.0).powi(2)).abs() < 1e-3);
        let sum: f64 = w.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(w.windows(2).all(|p| p[0] >= p[1]));
    }

    #[test]
    fn schmidt_number_ratio_ten() {
        let grid = Grid1D::new(512, 1.0).unwrap();
        let p = GaussianStateParams::new(0.1, 0.01).unwrap();
        let d = schmidt_decompose(&build_state(&p, &grid).unwrap()).unwrap();
        assert!((d.schmidt_number() - 5.05).abs() / 5.05 < 0.01);
    }

    #[test]
    fn modes_are_orthonormal_and_reconstruct() {
        let grid = Grid1D::new(96, 1.0).unwrap();
        let p = GaussianStateParams::new(0.05, 0.15).unwrap();
        let state = build_state(&p, &grid).unwrap();
        let d = schmidt_decompose(&state).unwrap();
        let dx = grid.pitch();
        let u = d.modes();
        let gram = u.adjoint() * u * Complex64::new(dx, 0.0);
        for i in 0..8 {
            for j in 0..8 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - expect).norm() < 1e-10);
            }
        }
        let sqrt_l = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            d.weights().len(),
            d.weights().iter().map(|l| Complex64::new(l.sqrt(), 0.0)),
        ));
        let rebuilt = d.modes() * sqrt_l * d.partners().transpose();
        let err = (rebuilt - state.amplitude()).norm();
        assert!(err < 1e-9 * state.amplitude().norm(), "{err}");
    }

    #[test]
    fn complex_state_uses_svd_path() {
        let grid = Grid1D::new(48, 1.0).unwrap();
        let p = GaussianStateParams::new(0.2, 0.05).unwrap();
        let state = build_state(&p, &grid).unwrap();
        let xs = grid.coordinates();
        let tilted = DMatrix::from_fn(48, 48, |i, j| {
            state.amplitude()[(i, j)] * Complex64::from_polar(1.0, 7.0 * xs[i] + 3.0 * xs[j])
        });
        let tilted = TwoPhotonState::from_amplitude(grid, tilted).unwrap();
        let a = schmidt_decompose(&state).unwrap();
        let b = schmidt_decompose(&tilted).unwrap();
        // Local phases do not change the Schmidt weights.
        for k in 0..6 {
            assert!((a.weights()[k] - b.weights()[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn g1_numeric_basics() {
        let grid = Grid1D::new(256, 1.0).unwrap();
        let p = GaussianStateParams::new(0.1, 0.02).unwrap();
        let state = build_state(&p, &grid).unwrap();
        assert!((g1_numeric(&state, 0.0).unwrap() - 1.0).abs() < 1e-12);

        let balanced = build_state(&GaussianStateParams::new(0.1, 0.1).unwrap(), &grid).unwrap();
        for r in [0.01, 0.05, 0.1, 0.2] {
            assert!((g1_numeric(&balanced, r).unwrap() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn g1_numeric_matches_closed_form() {
        let grid = Grid1D::new(256, 1.0).unwrap();
        let p = GaussianStateParams::new(0.15, 0.03).unwrap();
        let state = build_state(&p, &grid).unwrap();
        let c = p.g1_coefficient();
        let fwhm = 2.0 * (LN_2 / c).sqrt();
        for k in 0..grid.n_points() {
            let r = grid.coordinate(k);
            if r.abs() > 2.0 * fwhm {
                continue;
            }
            let num = g1_numeric(&state, r).unwrap();
            assert!((num - (-c * r * r).exp()).abs() < 1e-3, "r = {r}");
        }
    }

    #[test]
    fn wavelength_helper() {
        assert!((wavelength_in_medium(406e-9, 1.66).unwrap() - 406e-9 / 1.66).abs() < 1e-20);
        assert!(wavelength_in_medium(406e-9, 0.0).is_err());
    }
}
