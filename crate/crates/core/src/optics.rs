//! Thin-element optical channel: SLM mask, phase scatterer and a Fourier lens
//! onto the camera.
//!
//! The SLM and the scatterer sit in conjugate image planes, so both act as
//! pixelwise phase factors on the same grid. The camera is the Fourier plane
//! of the scatterer, modelled by a centered unitary DFT:
//!
//! ```text
//! T = F · diag(e^{iφ_screen}) · diag(e^{iφ_slm})
//! ```

use std::f64::consts::{LN_2, PI, TAU};
use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spdc::Grid1D;

/// Default standard deviation of the (unwrapped) scatterer phase, radians.
pub const DEFAULT_PHASE_STD: f64 = TAU;

/// Maps an angle to `(−π, π]`.
pub fn wrap_phase(phase: f64) -> f64 {
    PI - (PI - phase).rem_euclid(TAU)
}

/// Centered unitary DFT, `F_mk = n^{−1/2}·exp(−2πi(m − c)(k − c)/n)` with
/// `c = (n − 1)/2`.
///
/// With this centering `F² ` is exactly the parity operator `k → n − 1 − k`.
#[derive(Clone)]
pub struct CenteredDft {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    pre: Vec<Complex64>,
    post: Vec<Complex64>,
}

impl fmt::Debug for CenteredDft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CenteredDft").field("n", &self.n).finish()
    }
}

impl CenteredDft {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let nf = n as f64;
        let c = (nf - 1.0) / 2.0;
        let pre = (0..n)
            .map(|k| Complex64::from_polar(1.0, TAU * k as f64 * c / nf))
            .collect();
        // e^{−2πi c²/n} folded into the output phase ramp.
        let global = Complex64::from_polar(1.0 / nf.sqrt(), -TAU * c * c / nf);
        let post = (0..n)
            .map(|m| global * Complex64::from_polar(1.0, TAU * m as f64 * c / nf))
            .collect();
        Self {
            n,
            forward,
            inverse,
            pre,
            post,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward_in_place(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.n);
        data.iter_mut().zip(&self.pre).for_each(|(z, p)| *z *= p);
        self.forward.process(data);
        data.iter_mut().zip(&self.post).for_each(|(z, p)| *z *= p);
    }

    pub fn inverse_in_place(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.n);
        data.iter_mut().zip(&self.post).for_each(|(z, p)| *z *= p.conj());
        self.inverse.process(data);
        data.iter_mut().zip(&self.pre).for_each(|(z, p)| *z *= p.conj());
    }

    /// Single matrix element `F_mk`.
    pub fn element(&self, m: usize, k: usize) -> Complex64 {
        let nf = self.n as f64;
        let c = (nf - 1.0) / 2.0;
        Complex64::from_polar(
            1.0 / nf.sqrt(),
            -TAU * (m as f64 - c) * (k as f64 - c) / nf,
        )
    }
}

/// Unitary centered DFT of `field` (camera plane of the scatterer).
pub fn fourier_propagate(field: &[Complex64], grid: &Grid1D) -> Result<Vec<Complex64>> {
    grid.check_len(field.len())?;
    let mut out = field.to_vec();
    CenteredDft::new(grid.n_points()).forward_in_place(&mut out);
    Ok(out)
}

/// Random thin phase scatterer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseScreen {
    grid: Grid1D,
    phases: Vec<f64>,
    correlation_length: f64,
    phase_std: f64,
    seed: u64,
}

impl PhaseScreen {
    /// Screen with no phase (no scatterer).
    pub fn zero(grid: Grid1D) -> Self {
        Self {
            grid,
            phases: vec![0.0; grid.n_points()],
            correlation_length: f64::INFINITY,
            phase_std: 0.0,
            seed: 0,
        }
    }

    /// Screen with explicit phases (wrapped on input).
    pub fn from_phases(grid: Grid1D, phases: Vec<f64>) -> Result<Self> {
        grid.check_len(phases.len())?;
        Ok(Self {
            grid,
            phases: phases.into_iter().map(wrap_phase).collect(),
            correlation_length: f64::NAN,
            phase_std: f64::NAN,
            seed: 0,
        })
    }

    /// Filtered Gaussian phase screen.
    ///
    /// `correlation_length` is the FWHM of the field autocorrelation
    /// `|⟨exp(i(φ(x) − φ(x + Δ)))⟩|`. The unwrapped phase is Gaussian with
    /// standard deviation `phase_std` and covariance `σ²·exp(−Δ²/ℓ_φ²)`,
    /// where `ℓ_φ` is chosen so that the field autocorrelation falls to one
    /// half at `Δ = correlation_length / 2`.
    pub fn generate(
        grid: Grid1D,
        correlation_length: f64,
        phase_std: f64,
        seed: u64,
    ) -> Result<Self> {
        let dx = grid.pitch();
        if !(correlation_length.is_finite() && correlation_length >= dx * (1.0 - 1e-12)) {
            return Err(Error::CorrelationTooFine {
                length: correlation_length,
                pitch: dx,
            });
        }
        let variance = phase_std * phase_std;
        if !(phase_std.is_finite() && variance > LN_2) {
            return Err(Error::InvalidParameter(format!(
                "phase_std must exceed sqrt(ln 2) for a finite field correlation length, got {phase_std}"
            )));
        }
        let phase_corr = 0.5 * correlation_length / (-(1.0 - LN_2 / variance).ln()).sqrt();

        // Kernel h(x) = exp(−2x²/ℓ_φ²) so that h ⋆ h ∝ exp(−x²/ℓ_φ²).
        let sigma_px = 0.5 * phase_corr / dx;
        let half = (5.0 * sigma_px).ceil() as usize;
        let kernel: Vec<f64> = (0..=2 * half)
            .map(|j| {
                let u = (j as f64 - half as f64) / sigma_px;
                (-0.5 * u * u).exp()
            })
            .collect();
        let norm = kernel.iter().map(|h| h * h).sum::<f64>().sqrt();

        let n = grid.n_points();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise: Vec<f64> = (0..n + 2 * half)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let scale = phase_std / norm;
        let phases = (0..n)
            .map(|k| {
                let acc: f64 = kernel
                    .iter()
                    .zip(&noise[k..k + kernel.len()])
                    .map(|(h, w)| h * w)
                    .sum();
                wrap_phase(acc * scale)
            })
            .collect();
        Ok(Self {
            grid,
            phases,
            correlation_length,
            phase_std,
            seed,
        })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn correlation_length(&self) -> f64 {
        self.correlation_length
    }

    pub fn phase_std(&self) -> f64 {
        self.phase_std
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `exp(iφ)` per pixel.
    pub fn transmission(&self) -> Vec<Complex64> {
        self.phases
            .iter()
            .map(|&p| Complex64::from_polar(1.0, p))
            .collect()
    }
}

/// Filtered Gaussian screen with the default phase standard deviation.
pub fn random_phase_screen(grid: &Grid1D, correlation_length: f64, seed: u64) -> Result<PhaseScreen> {
    PhaseScreen::generate(*grid, correlation_length, DEFAULT_PHASE_STD, seed)
}

/// Partition of a centered aperture into contiguous macro-pixels.
///
/// Segment `b` covers aperture pixels `round(b·W/N) .. round((b+1)·W/N)`.
/// Pixels outside the aperture are not modulated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlmGeometry {
    n_points: usize,
    aperture_start: usize,
    boundaries: Vec<usize>,
}

impl SlmGeometry {
    pub fn new(n_points: usize, aperture_len: usize, n_segments: usize) -> Result<Self> {
        if n_segments == 0 || aperture_len < n_segments || aperture_len > n_points {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= segments ({n_segments}) <= aperture ({aperture_len}) <= grid ({n_points})"
            )));
        }
        let aperture_start = (n_points - aperture_len) / 2;
        let boundaries = (0..=n_segments)
            .map(|b| {
                let edge = (b as f64 * aperture_len as f64 / n_segments as f64).round() as usize;
                aperture_start + edge
            })
            .collect();
        Ok(Self {
            n_points,
            aperture_start,
            boundaries,
        })
    }

    /// One segment per grid pixel over the full grid.
    pub fn pixelwise(n_points: usize) -> Result<Self> {
        Self::new(n_points, n_points, n_points)
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn n_segments(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn aperture(&self) -> Range<usize> {
        self.aperture_start..*self.boundaries.last().expect("non-empty")
    }

    pub fn segment_pixels(&self, segment: usize) -> Range<usize> {
        self.boundaries[segment]..self.boundaries[segment + 1]
    }

    pub fn segment_of(&self, pixel: usize) -> Option<usize> {
        if !self.aperture().contains(&pixel) {
            return None;
        }
        Some(self.boundaries.partition_point(|&e| e <= pixel) - 1)
    }

    /// Per-pixel values from per-segment values, `outside` off the aperture.
    pub fn expand<T: Copy>(&self, per_segment: &[T], outside: T) -> Vec<T> {
        assert_eq!(per_segment.len(), self.n_segments());
        let mut out = vec![outside; self.n_points];
        for (b, &v) in per_segment.iter().enumerate() {
            out[self.segment_pixels(b)].iter_mut().for_each(|p| *p = v);
        }
        out
    }
}

/// Phase-only SLM pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlmMask {
    geometry: SlmGeometry,
    phases: Vec<f64>,
}

impl SlmMask {
    pub fn new(geometry: SlmGeometry, phases: Vec<f64>) -> Result<Self> {
        if phases.len() != geometry.n_segments() {
            return Err(Error::GridMismatch {
                expected: geometry.n_segments(),
                found: phases.len(),
            });
        }
        Ok(Self {
            geometry,
            phases: phases.into_iter().map(wrap_phase).collect(),
        })
    }

    pub fn flat(geometry: SlmGeometry) -> Self {
        let n = geometry.n_segments();
        Self {
            geometry,
            phases: vec![0.0; n],
        }
    }

    pub fn geometry(&self) -> &SlmGeometry {
        &self.geometry
    }

    pub fn n_segments(&self) -> usize {
        self.phases.len()
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    /// Same pattern with `offset` added to every segment.
    pub fn with_offset(&self, offset: f64) -> Self {
        Self {
            geometry: self.geometry.clone(),
            phases: self.phases.iter().map(|p| wrap_phase(p + offset)).collect(),
        }
    }

    /// Per-segment complex weights `exp(iθ_b)`.
    pub fn drive(&self) -> Vec<Complex64> {
        self.phases
            .iter()
            .map(|&p| Complex64::from_polar(1.0, p))
            .collect()
    }

    /// Per-pixel phases, zero outside the aperture.
    pub fn pixel_phases(&self) -> Vec<f64> {
        self.geometry.expand(&self.phases, 0.0)
    }
}

/// Field map from the scatterer plane to the camera.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Propagation {
    /// Centered unitary DFT (camera in the Fourier plane).
    Fourier,
    /// Camera in an image plane of the scatterer.
    Identity,
}

/// `T = K · diag(e^{iφ_screen}) · diag(e^{iφ_slm})` with kernel `K`.
#[derive(Debug, Clone)]
pub struct SystemOperator {
    grid: Grid1D,
    screen: PhaseScreen,
    mask: SlmMask,
    propagation: Propagation,
    dft: CenteredDft,
    screen_factor: Vec<Complex64>,
    slm_factor: Vec<Complex64>,
}

impl SystemOperator {
    pub fn with_propagation(
        screen: PhaseScreen,
        mask: SlmMask,
        grid: &Grid1D,
        propagation: Propagation,
    ) -> Result<Self> {
        grid.check_len(screen.grid().n_points())?;
        grid.check_len(mask.geometry().n_points())?;
        let screen_factor = screen.transmission();
        let slm_factor = mask
            .pixel_phases()
            .into_iter()
            .map(|p| Complex64::from_polar(1.0, p))
            .collect();
        Ok(Self {
            grid: *grid,
            screen,
            mask,
            propagation,
            dft: CenteredDft::new(grid.n_points()),
            screen_factor,
            slm_factor,
        })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn screen(&self) -> &PhaseScreen {
        &self.screen
    }

    pub fn mask(&self) -> &SlmMask {
        &self.mask
    }

    pub fn propagation(&self) -> Propagation {
        self.propagation
    }

    pub fn screen_factor(&self) -> &[Complex64] {
        &self.screen_factor
    }

    pub fn slm_factor(&self) -> &[Complex64] {
        &self.slm_factor
    }

    /// Applies the propagation kernel alone.
    pub fn propagate_in_place(&self, field: &mut [Complex64]) {
        if self.propagation == Propagation::Fourier {
            self.dft.forward_in_place(field);
        }
    }

    pub fn apply_in_place(&self, field: &mut [Complex64]) {
        for ((z, s), m) in field
            .iter_mut()
            .zip(&self.screen_factor)
            .zip(&self.slm_factor)
        {
            *z *= s * m;
        }
        self.propagate_in_place(field);
    }

    pub fn apply(&self, field: &[Complex64]) -> Result<Vec<Complex64>> {
        self.grid.check_len(field.len())?;
        let mut out = field.to_vec();
        self.apply_in_place(&mut out);
        Ok(out)
    }

    /// Row `m` of the propagation kernel.
    pub fn kernel_row(&self, m: usize) -> Vec<Complex64> {
        let n = self.grid.n_points();
        match self.propagation {
            Propagation::Fourier => (0..n).map(|k| self.dft.element(m, k)).collect(),
            Propagation::Identity => {
                let mut row = vec![Complex64::new(0.0, 0.0); n];
                row[m] = Complex64::new(1.0, 0.0);
                row
            }
        }
    }

    /// Dense `T`.
    pub fn matrix(&self) -> DMatrix<Complex64> {
        let n = self.grid.n_points();
        let mut t = DMatrix::zeros(n, n);
        let mut col = vec![Complex64::new(0.0, 0.0); n];
        for k in 0..n {
            col.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
            col[k] = Complex64::new(1.0, 0.0);
            self.apply_in_place(&mut col);
            t.column_mut(k).iter_mut().zip(&col).for_each(|(d, s)| *d = *s);
        }
        t
    }
}

/// Fourier-plane camera behind `screen` and `mask`.
pub fn compose_system(screen: &PhaseScreen, mask: &SlmMask, grid: &Grid1D) -> Result<SystemOperator> {
    SystemOperator::with_propagation(screen.clone(), mask.clone(), grid, Propagation::Fourier)
}

/// Copy of `system` with its SLM pattern replaced by `mask`.
pub fn apply_mask(system: &SystemOperator, mask: &SlmMask) -> Result<SystemOperator> {
    system.grid.check_len(mask.geometry().n_points())?;
    let mut out = system.clone();
    out.slm_factor = mask
        .pixel_phases()
        .into_iter()
        .map(|p| Complex64::from_polar(1.0, p))
        .collect();
    out.mask = mask.clone();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn wrap_phase_range() {
        assert_eq!(wrap_phase(PI), PI);
        assert_eq!(wrap_phase(-PI), PI);
        assert!((wrap_phase(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_phase(0.5 + 4.0 * TAU) - 0.5).abs() < 1e-12);
        for k in -50..50 {
            let w = wrap_phase(k as f64 * 0.37);
            assert!(w > -PI && w <= PI);
        }
    }

    #[test]
    fn dft_matches_definition() {
        for n in [1usize, 2, 5, 8, 15] {
            let dft = CenteredDft::new(n);
            let x: Vec<Complex64> = (0..n).map(|k| c(k as f64 * 0.3 - 1.0, (k * k) as f64 * 0.1)).collect();
            let mut y = x.clone();
            dft.forward_in_place(&mut y);
            for m in 0..n {
                let direct: Complex64 = (0..n).map(|k| dft.element(m, k) * x[k]).sum();
                assert!((direct - y[m]).norm() < 1e-12);
            }
            dft.inverse_in_place(&mut y);
            for k in 0..n {
                assert!((y[k] - x[k]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn dft_squared_is_parity() {
        let grid = Grid1D::new(16, 1.0).unwrap();
        let x: Vec<Complex64> = (0..16).map(|k| c((k as f64).sin(), (k as f64 * 0.7).cos())).collect();
        let y = fourier_propagate(&fourier_propagate(&x, &grid).unwrap(), &grid).unwrap();
        for k in 0..16 {
            assert!((y[k] - x[15 - k]).norm() < 1e-10);
        }
    }

    #[test]
    fn delta_gives_flat_magnitude() {
        let grid = Grid1D::new(32, 1.0).unwrap();
        let mut x = vec![c(0.0, 0.0); 32];
        x[5] = c(1.0, 0.0);
        let y = fourier_propagate(&x, &grid).unwrap();
        for z in y {
            assert!((z.norm() - 1.0 / 32f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn screen_is_deterministic_and_wrapped() {
        let grid = Grid1D::new(128, 1.0).unwrap();
        let a = random_phase_screen(&grid, 0.05, 7).unwrap();
        let b = random_phase_screen(&grid, 0.05, 7).unwrap();
        let d = random_phase_screen(&grid, 0.05, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.phases(), d.phases());
        assert!(a.phases().iter().all(|&p| p > -PI && p <= PI));
    }

    #[test]
    fn screen_rejects_fine_correlation() {
        let grid = Grid1D::new(100, 1.0).unwrap();
        assert!(matches!(
            random_phase_screen(&grid, 0.005, 1),
            Err(Error::CorrelationTooFine { .. })
        ));
        assert!(random_phase_screen(&grid, 0.01, 1).is_ok());
        assert!(PhaseScreen::generate(grid, 0.1, 0.5, 1).is_err());
    }

    #[test]
    fn geometry_partitions_aperture() {
        let g = SlmGeometry::new(100, 50, 7).unwrap();
        assert_eq!(g.aperture(), 25..75);
        let mut covered = 0;
        for b in 0..7 {
            let r = g.segment_pixels(b);
            assert!(!r.is_empty());
            for p in r.clone() {
                assert_eq!(g.segment_of(p), Some(b));
            }
            covered += r.len();
        }
        assert_eq!(covered, 50);
        assert_eq!(g.segment_of(10), None);
        assert_eq!(g.segment_of(75), None);
        assert!(SlmGeometry::new(10, 4, 5).is_err());
    }

    #[test]
    fn flat_zero_system_is_dft() {
        let grid = Grid1D::new(12, 1.0).unwrap();
        let sys = compose_system(
            &PhaseScreen::zero(grid),
            &SlmMask::flat(SlmGeometry::new(12, 8, 4).unwrap()),
            &grid,
        )
        .unwrap();
        let t = sys.matrix();
        let dft = CenteredDft::new(12);
        for m in 0..12 {
            for k in 0..12 {
                assert!((t[(m, k)] - dft.element(m, k)).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn conjugate_mask_cancels_screen() {
        let grid = Grid1D::new(64, 1.0).unwrap();
        let screen = random_phase_screen(&grid, grid.pitch(), 3).unwrap();
        let geom = SlmGeometry::pixelwise(64).unwrap();
        let mask = SlmMask::new(geom, screen.phases().iter().map(|p| -p).collect()).unwrap();
        let sys = compose_system(&screen, &mask, &grid).unwrap();
        let t = sys.matrix();
        let dft = CenteredDft::new(64);
        for m in 0..64 {
            for k in 0..64 {
                assert!((t[(m, k)] - dft.element(m, k)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn apply_mask_replaces() {
        let grid = Grid1D::new(32, 1.0).unwrap();
        let screen = random_phase_screen(&grid, 0.1, 5).unwrap();
        let geom = SlmGeometry::new(32, 16, 8).unwrap();
        let a = SlmMask::new(geom.clone(), (0..8).map(|b| b as f64).collect()).unwrap();
        let b = SlmMask::new(geom.clone(), (0..8).map(|b| -(b as f64) * 0.5).collect()).unwrap();
        let sys_a = compose_system(&screen, &a, &grid).unwrap();
        let replaced = apply_mask(&sys_a, &b).unwrap();
        let fresh = compose_system(&screen, &b, &grid).unwrap();
        assert!((replaced.matrix() - fresh.matrix()).norm() < 1e-13);
        assert_eq!(sys_a.mask(), &a);
        let flat_sys = compose_system(&screen, &SlmMask::flat(geom.clone()), &grid).unwrap();
        let reflat = apply_mask(&flat_sys, &SlmMask::flat(geom)).unwrap();
        assert!((reflat.matrix() - flat_sys.matrix()).norm() == 0.0);
    }
}
