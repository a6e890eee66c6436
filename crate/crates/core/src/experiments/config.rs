//! TOML experiment configuration.
//!
//! Every section is optional and unknown keys are rejected. The sweep
//! commands read `[grid]`, `[state]`, `[scatterer]`, `[slm]`,
//! `[optimization]` and `[run]`; the correction demo and `tm` read `[demo]`;
//! `g2-frames` reads `[frames]` and `[detector]`.

use std::f64::consts::LN_2;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::correlations::{Accidentals, DetectorParams};
use crate::error::{Error, Result};
use crate::optics::{SlmGeometry, DEFAULT_PHASE_STD};
use crate::spdc::{FourierRelay, GaussianStateParams, Grid1D, SpdcConfig};
use crate::wavefront::{Basis, ReferenceScheme, TmAcquisition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n_points: usize,
    /// meters
    pub extent: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n_points: 1500,
            extent: 10e-3,
        }
    }
}

impl GridConfig {
    pub fn grid(&self) -> Result<Grid1D> {
        Grid1D::new(self.n_points, self.extent).map_err(config_err)
    }
}

/// Source description. `physical` and `widths` give a single state taken
/// directly in the SLM plane; `sweep` gives one state per Schmidt number,
/// defined in the crystal near field and carried to the SLM plane by a
/// Fourier relay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "lowercase", deny_unknown_fields)]
pub enum StateConfig {
    Physical {
        crystal_length: f64,
        pump_wavelength: f64,
        pump_waist: f64,
    },
    Widths {
        sum_width: f64,
        diff_width: f64,
    },
    Sweep {
        /// Near-field pair correlation width, meters.
        correlation_width: f64,
        /// Read `correlation_width` as a FWHM instead of the Gaussian width.
        #[serde(default)]
        width_is_fwhm: bool,
        k_values: Vec<f64>,
        /// `k_values` are transverse (2D) Schmidt numbers.
        #[serde(default)]
        k_is_2d: bool,
        /// Photon wavelength, meters.
        wavelength: f64,
        /// Focal length of the crystal-to-SLM Fourier relay, meters.
        relay_focal_length: f64,
    },
}

impl Default for StateConfig {
    fn default() -> Self {
        StateConfig::Sweep {
            correlation_width: 133e-6,
            width_is_fwhm: false,
            k_values: vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0],
            k_is_2d: false,
            wavelength: 810e-9,
            relay_focal_length: 1.5,
        }
    }
}

/// One resolved sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatePoint {
    pub k_1d: f64,
    pub params: GaussianStateParams,
}

impl StateConfig {
    pub fn points(&self) -> Result<Vec<StatePoint>> {
        match self {
            StateConfig::Physical {
                crystal_length,
                pump_wavelength,
                pump_waist,
            } => {
                let cfg = SpdcConfig::new(*crystal_length, *pump_wavelength, *pump_waist)
                    .map_err(config_err)?;
                let params = GaussianStateParams::from_config(&cfg);
                Ok(vec![StatePoint {
                    k_1d: params.schmidt_number().one_d,
                    params,
                }])
            }
            StateConfig::Widths {
                sum_width,
                diff_width,
            } => {
                let params = GaussianStateParams::new(*sum_width, *diff_width).map_err(config_err)?;
                Ok(vec![StatePoint {
                    k_1d: params.schmidt_number().one_d,
                    params,
                }])
            }
            StateConfig::Sweep {
                correlation_width,
                width_is_fwhm,
                k_values,
                k_is_2d,
                wavelength,
                relay_focal_length,
            } => {
                if k_values.is_empty() {
                    return Err(Error::Config("state.k_values is empty".into()));
                }
                let width = if *width_is_fwhm {
                    correlation_width / (2.0 * (2.0 * LN_2).sqrt())
                } else {
                    *correlation_width
                };
                let relay = FourierRelay {
                    focal_length: *relay_focal_length,
                    wavelength: *wavelength,
                };
                if !(relay.focal_length > 0.0 && relay.wavelength > 0.0) {
                    return Err(Error::Config("relay focal length and wavelength must be positive".into()));
                }
                k_values
                    .iter()
                    .map(|&k| {
                        if !(k.is_finite() && k >= 1.0) {
                            return Err(Error::Config(format!("Schmidt number {k} must be >= 1")));
                        }
                        let k_1d = if *k_is_2d { k.sqrt() } else { k };
                        let near = GaussianStateParams::from_schmidt_1d(width, k_1d).map_err(config_err)?;
                        Ok(StatePoint {
                            k_1d,
                            params: near.fourier_relay(&relay).map_err(config_err)?,
                        })
                    })
                    .collect()
            }
        }
    }

    /// Replaces the Schmidt-number list of a sweep.
    pub fn set_k_values(&mut self, values: Vec<f64>) -> Result<()> {
        match self {
            StateConfig::Sweep { k_values, .. } => {
                *k_values = values;
                Ok(())
            }
            _ => Err(Error::Config("--k-values needs a sweep-form [state]".into())),
        }
    }

    /// Field of a separable (K = 1) state with the same difference width,
    /// used as the coherent benchmark beam.
    pub fn coherent_reference(&self) -> Result<GaussianStateParams> {
        match self {
            StateConfig::Sweep { .. } => {
                let mut one = self.clone();
                one.set_k_values(vec![1.0])?;
                Ok(one.points()?[0].params)
            }
            _ => {
                let p = self.points()?[0].params;
                let w = p.sum_width.max(p.diff_width);
                GaussianStateParams::new(w, w).map_err(config_err)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScattererConfig {
    /// FWHM of the field autocorrelation, meters; the grid pitch if absent.
    pub correlation_length: Option<f64>,
    /// Standard deviation of the unwrapped phase, radians.
    pub phase_std: f64,
    /// Base seed of the phase screens.
    pub seed: u64,
}

impl Default for ScattererConfig {
    fn default() -> Self {
        Self {
            correlation_length: None,
            phase_std: DEFAULT_PHASE_STD,
            seed: 1,
        }
    }
}

impl ScattererConfig {
    pub fn correlation_length(&self, grid: &Grid1D) -> f64 {
        self.correlation_length.unwrap_or(grid.pitch())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlmConfig {
    pub n_segments: usize,
    /// Active aperture, meters; 0.45 of the grid extent if absent.
    pub aperture: Option<f64>,
    pub basis: Basis,
    pub phase_steps: usize,
    pub reference: ReferenceScheme,
}

impl Default for SlmConfig {
    fn default() -> Self {
        Self {
            n_segments: 50,
            aperture: None,
            basis: Basis::Pixel,
            phase_steps: 4,
            reference: ReferenceScheme::Interleaved,
        }
    }
}

impl SlmConfig {
    pub fn geometry(&self, grid: &Grid1D) -> Result<SlmGeometry> {
        let aperture = self.aperture.unwrap_or(0.45 * grid.extent());
        let px = (aperture / grid.pitch()).round() as usize;
        SlmGeometry::new(grid.n_points(), px, self.n_segments).map_err(config_err)
    }

    pub fn acquisition(&self) -> TmAcquisition {
        TmAcquisition {
            basis: self.basis,
            phase_steps: self.phase_steps,
            scheme: self.reference,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizationConfig {
    /// Segment updates.
    pub iterations: usize,
    pub trial_phases: usize,
    /// Camera pixel; the grid center if absent.
    pub target: Option<usize>,
}

impl Default for OptimizationConfig {
    fn default() -> Self {
        Self {
            iterations: 250,
            trial_phases: 8,
            target: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed for optimizer and frame streams.
    pub seed: u64,
    pub repeats: usize,
    pub out_dir: PathBuf,
    pub threads: Option<usize>,
    /// Screens averaged for the mean camera envelope.
    pub envelope_seeds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            repeats: 10,
            out_dir: PathBuf::from("out"),
            threads: None,
            envelope_seeds: 20,
        }
    }
}

/// The correction scenario: measure with a weakly entangled probe, correct
/// a strongly entangled state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoConfig {
    pub n_points: usize,
    pub extent: f64,
    /// Difference width of the states in the SLM plane (sets the beam
    /// envelope); a quarter of the extent if absent.
    pub envelope_width: Option<f64>,
    /// Active aperture as a fraction of the extent.
    pub aperture_fraction: f64,
    pub n_segments: usize,
    pub basis: Basis,
    pub phase_steps: usize,
    pub reference: ReferenceScheme,
    pub probe_k: f64,
    pub entangled_k: f64,
    pub correlation_length: Option<f64>,
    pub phase_std: f64,
    pub screen_seed: u64,
    /// Camera pixel to focus on; the center if absent.
    pub target: Option<usize>,
    /// Spot offsets from the target for the multi-spot mask, pixels.
    pub spot_offsets: Vec<i64>,
    /// Segment range receiving the π shift; a half-aperture block starting
    /// at 3/8 of the segments if absent.
    pub shift_region: Option<[usize; 2]>,
    pub peak_halfwidth: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            n_points: 256,
            extent: 2.56e-3,
            envelope_width: None,
            aperture_fraction: 0.5,
            n_segments: 128,
            basis: Basis::Hadamard,
            phase_steps: 4,
            reference: ReferenceScheme::Exterior,
            probe_k: 1.2,
            entangled_k: 16.0,
            correlation_length: None,
            phase_std: DEFAULT_PHASE_STD,
            screen_seed: 1,
            target: None,
            spot_offsets: vec![-45, -15, 15, 45],
            shift_region: None,
            peak_halfwidth: 2,
        }
    }
}

impl DemoConfig {
    pub fn grid(&self) -> Result<Grid1D> {
        Grid1D::new(self.n_points, self.extent).map_err(config_err)
    }

    pub fn geometry(&self) -> Result<SlmGeometry> {
        let px = (self.aperture_fraction * self.n_points as f64).round() as usize;
        SlmGeometry::new(self.n_points, px, self.n_segments).map_err(config_err)
    }

    pub fn envelope_width(&self) -> f64 {
        self.envelope_width.unwrap_or(self.extent / 4.0)
    }

    /// SLM-plane state with the given 1D Schmidt number: anticorrelated
    /// pairs with the configured envelope.
    pub fn state_params(&self, k_1d: f64) -> Result<GaussianStateParams> {
        let env = self.envelope_width();
        let mirrored = GaussianStateParams::from_schmidt_1d(env, k_1d).map_err(config_err)?;
        GaussianStateParams::new(env * env / mirrored.sum_width, env).map_err(config_err)
    }

    pub fn target(&self) -> usize {
        self.target.unwrap_or(self.n_points / 2)
    }

    pub fn shift_region(&self) -> [usize; 2] {
        self.shift_region.unwrap_or({
            let n = self.n_segments;
            [n / 2 - n / 8, n / 2 + 3 * n / 8]
        })
    }

    pub fn acquisition(&self) -> TmAcquisition {
        TmAcquisition {
            basis: self.basis,
            phase_steps: self.phase_steps,
            scheme: self.reference,
        }
    }
}

/// Synthetic photon-counting run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FramesConfig {
    pub n_points: usize,
    pub extent: f64,
    /// Defaults to a quarter of the extent.
    pub sum_width: Option<f64>,
    /// Defaults to two pixels.
    pub diff_width: Option<f64>,
    pub n_frames: usize,
    /// Low-pass cutoff applied to the estimated projection (fraction of Nyquist).
    pub denoise_cutoff: f64,
    pub accidentals: Accidentals,
}

impl Default for FramesConfig {
    fn default() -> Self {
        Self {
            n_points: 64,
            extent: 0.64e-3,
            sum_width: None,
            diff_width: None,
            n_frames: 100_000,
            denoise_cutoff: 0.5,
            accidentals: Accidentals::NextFrame,
        }
    }
}

impl FramesConfig {
    pub fn grid(&self) -> Result<Grid1D> {
        Grid1D::new(self.n_points, self.extent).map_err(config_err)
    }

    pub fn state_params(&self) -> Result<GaussianStateParams> {
        let grid = self.grid()?;
        GaussianStateParams::new(
            self.sum_width.unwrap_or(self.extent / 4.0),
            self.diff_width.unwrap_or(2.0 * grid.pitch()),
        )
        .map_err(config_err)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub state: StateConfig,
    pub scatterer: ScattererConfig,
    pub slm: SlmConfig,
    pub optimization: OptimizationConfig,
    pub detector: DetectorParams,
    pub run: RunConfig,
    pub demo: DemoConfig,
    pub frames: FramesConfig,
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Cross-field checks beyond what parsing enforces.
    pub fn validate(&self) -> Result<()> {
        let grid = self.grid.grid()?;
        self.state.points()?;
        self.slm.geometry(&grid)?;
        if self.scatterer.correlation_length(&grid) < grid.pitch() * (1.0 - 1e-12) {
            return Err(Error::Config("scatterer.correlation_length is below the grid pitch".into()));
        }
        if self.slm.phase_steps < 3 || self.demo.phase_steps < 3 {
            return Err(Error::Config("phase_steps must be >= 3".into()));
        }
        if self.optimization.trial_phases < 3 || self.optimization.iterations == 0 {
            return Err(Error::Config("optimization needs >= 3 trial phases and >= 1 iteration".into()));
        }
        if let Some(t) = self.optimization.target {
            if t >= grid.n_points() {
                return Err(Error::Config(format!("optimization.target {t} outside the grid")));
            }
        }
        if self.run.repeats == 0 || self.run.envelope_seeds == 0 {
            return Err(Error::Config("run.repeats and run.envelope_seeds must be >= 1".into()));
        }
        if self.run.threads == Some(0) {
            return Err(Error::Config("run.threads must be >= 1".into()));
        }
        self.detector.validate().map_err(config_err)?;
        self.demo.grid()?;
        self.demo.geometry()?;
        for k in [self.demo.probe_k, self.demo.entangled_k] {
            self.demo.state_params(k)?;
        }
        if self.demo.target() >= self.demo.n_points {
            return Err(Error::Config("demo.target outside the grid".into()));
        }
        let [a, b] = self.demo.shift_region();
        if a > b || b > self.demo.n_segments {
            return Err(Error::Config("demo.shift_region outside the segments".into()));
        }
        self.frames.grid()?;
        self.frames.state_params()?;
        if !(self.frames.denoise_cutoff > 0.0 && self.frames.denoise_cutoff <= 1.0) {
            return Err(Error::Config("frames.denoise_cutoff must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn target(&self) -> Result<usize> {
        Ok(self
            .optimization
            .target
            .unwrap_or(self.grid.grid()?.n_points() / 2))
    }
}
