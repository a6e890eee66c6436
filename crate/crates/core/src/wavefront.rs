//! Transmission-matrix acquisition by phase stepping, correction masks,
//! sequential optimization and enhancement scoring.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};
use std::ops::Range;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::{apply_mask, wrap_phase, SlmGeometry, SlmMask, SystemOperator};
use crate::propagation::MODE_WEIGHT_KEPT;
use crate::spdc::{schmidt_decompose, SchmidtDecomposition, TwoPhotonState};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    Pixel,
    Hadamard,
}

/// Which light serves as the static interferometric reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceScheme {
    /// Even-indexed segments are frozen as reference; odd ones are measured.
    Interleaved,
    /// Every segment is measured; the unmodulated light around the aperture
    /// is the reference.
    Exterior,
}

impl ReferenceScheme {
    pub fn modulated(&self, n_segments: usize) -> Vec<usize> {
        match self {
            ReferenceScheme::Interleaved => (1..n_segments).step_by(2).collect(),
            ReferenceScheme::Exterior => (0..n_segments).collect(),
        }
    }

    /// Drive with reference segments at unit weight and the rest blocked.
    pub fn reference_drive(&self, n_segments: usize) -> Vec<Complex64> {
        match self {
            ReferenceScheme::Interleaved => (0..n_segments)
                .map(|b| if b % 2 == 0 { ONE } else { ZERO })
                .collect(),
            ReferenceScheme::Exterior => vec![ZERO; n_segments],
        }
    }
}

/// Camera intensity as a function of per-segment complex SLM weights.
///
/// A drive holds one weight per segment; light outside the aperture passes
/// with unit weight.
pub trait IntensityProbe: Sync {
    fn geometry(&self) -> &SlmGeometry;

    fn n_pixels(&self) -> usize;

    fn intensity(&self, drive: &[Complex64]) -> Result<Vec<f64>>;

    fn pixel_intensity(&self, drive: &[Complex64], pixel: usize) -> Result<f64> {
        if pixel >= self.n_pixels() {
            return Err(Error::TargetOutOfRange {
                target: pixel,
                len: self.n_pixels(),
            });
        }
        Ok(self.intensity(drive)?[pixel])
    }
}

/// Noiseless probe: the reduced intensity of a (possibly entangled) state
/// behind the SLM and the channel.
#[derive(Debug)]
pub struct StateProbe {
    system: SystemOperator,
    modes: SchmidtDecomposition,
    pixel_tables: Mutex<HashMap<usize, Arc<Vec<Complex64>>>>,
}

impl StateProbe {
    /// Uses the channel of `system` with its SLM replaced by the drive.
    pub fn new(system: &SystemOperator, modes: SchmidtDecomposition) -> Result<Self> {
        system.grid().check_len(modes.grid().n_points())?;
        let flat = apply_mask(system, &SlmMask::flat(system.mask().geometry().clone()))?;
        Ok(Self {
            system: flat,
            modes,
            pixel_tables: Mutex::new(HashMap::new()),
        })
    }

    /// Decomposes `state`, keeping modes up to [`MODE_WEIGHT_KEPT`].
    pub fn from_state(system: &SystemOperator, state: &TwoPhotonState) -> Result<Self> {
        let modes = schmidt_decompose(state)?.truncated(MODE_WEIGHT_KEPT);
        Self::new(system, modes)
    }

    /// Single-mode probe with the given input field.
    pub fn coherent(system: &SystemOperator, field: &[Complex64]) -> Result<Self> {
        Self::new(system, SchmidtDecomposition::coherent(*system.grid(), field)?)
    }

    pub fn system(&self) -> &SystemOperator {
        &self.system
    }

    pub fn modes(&self) -> &SchmidtDecomposition {
        &self.modes
    }

    fn check_drive(&self, drive: &[Complex64]) -> Result<()> {
        let n = self.geometry().n_segments();
        if drive.len() != n {
            return Err(Error::ProbeFailure(format!(
                "drive has {} weights for {n} segments",
                drive.len()
            )));
        }
        Ok(())
    }

    /// Camera field of Schmidt mode `mode` under `drive`.
    pub fn field(&self, drive: &[Complex64], mode: usize) -> Result<Vec<Complex64>> {
        self.check_drive(drive)?;
        let weights = self.geometry().expand(drive, ONE);
        let mut buf: Vec<Complex64> = self
            .modes
            .modes()
            .column(mode)
            .iter()
            .zip(&weights)
            .map(|(u, w)| u * w)
            .collect();
        self.system.apply_in_place(&mut buf);
        Ok(buf)
    }

    /// Per-mode, per-segment contributions to camera pixel `pixel`. Layout is
    /// mode-major with `N + 1` entries per mode; the last is the light from
    /// outside the aperture.
    fn pixel_table(&self, pixel: usize) -> Arc<Vec<Complex64>> {
        let mut cache = self.pixel_tables.lock().expect("cache lock");
        if let Some(t) = cache.get(&pixel) {
            return Arc::clone(t);
        }
        let geometry = self.geometry();
        let n_seg = geometry.n_segments();
        let row: Vec<Complex64> = self
            .system
            .kernel_row(pixel)
            .iter()
            .zip(self.system.screen_factor())
            .map(|(k, s)| k * s)
            .collect();
        let segment_of: Vec<usize> = (0..row.len())
            .map(|x| geometry.segment_of(x).unwrap_or(n_seg))
            .collect();
        let n_modes = self.modes.weights().len();
        let mut table = vec![ZERO; n_modes * (n_seg + 1)];
        for n in 0..n_modes {
            let entry = &mut table[n * (n_seg + 1)..(n + 1) * (n_seg + 1)];
            for (x, u) in self.modes.modes().column(n).iter().enumerate() {
                entry[segment_of[x]] += row[x] * u;
            }
        }
        let table = Arc::new(table);
        cache.insert(pixel, Arc::clone(&table));
        table
    }
}

impl IntensityProbe for StateProbe {
    fn geometry(&self) -> &SlmGeometry {
        self.system.mask().geometry()
    }

    fn n_pixels(&self) -> usize {
        self.system.grid().n_points()
    }

    fn intensity(&self, drive: &[Complex64]) -> Result<Vec<f64>> {
        self.check_drive(drive)?;
        let weights = self.geometry().expand(drive, ONE);
        let n = self.n_pixels();
        let mut out = vec![0.0; n];
        let mut buf = vec![ZERO; n];
        for (k, &lambda) in self.modes.weights().iter().enumerate() {
            buf.iter_mut()
                .zip(self.modes.modes().column(k).iter().zip(&weights))
                .for_each(|(b, (u, w))| *b = u * w);
            self.system.apply_in_place(&mut buf);
            out.iter_mut()
                .zip(&buf)
                .for_each(|(o, z)| *o += lambda * z.norm_sqr());
        }
        Ok(out)
    }

    fn pixel_intensity(&self, drive: &[Complex64], pixel: usize) -> Result<f64> {
        self.check_drive(drive)?;
        if pixel >= self.n_pixels() {
            return Err(Error::TargetOutOfRange {
                target: pixel,
                len: self.n_pixels(),
            });
        }
        let table = self.pixel_table(pixel);
        let stride = drive.len() + 1;
        let total = self
            .modes
            .weights()
            .iter()
            .enumerate()
            .map(|(n, &lambda)| {
                let entry = &table[n * stride..(n + 1) * stride];
                let field = entry[..drive.len()]
                    .iter()
                    .zip(drive)
                    .fold(entry[drive.len()], |acc, (c, w)| acc + c * w);
                lambda * field.norm_sqr()
            })
            .sum();
        Ok(total)
    }
}

/// Measured (or exact) transmission matrix: camera pixels × modulated
/// segments, known up to a per-row reference factor.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionMatrix {
    pub entries: DMatrix<Complex64>,
    pub geometry: SlmGeometry,
    /// Segment index of each column.
    pub modulated: Vec<usize>,
    pub basis: Basis,
    pub scheme: ReferenceScheme,
    pub phase_steps: usize,
    pub seed: Option<u64>,
}

impl TransmissionMatrix {
    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    fn check_target(&self, target: usize) -> Result<()> {
        if target >= self.rows() {
            return Err(Error::TargetOutOfRange {
                target,
                len: self.rows(),
            });
        }
        Ok(())
    }
}

/// Phase-stepping acquisition settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TmAcquisition {
    pub basis: Basis,
    pub phase_steps: usize,
    pub scheme: ReferenceScheme,
}

impl Default for TmAcquisition {
    fn default() -> Self {
        Self {
            basis: Basis::Hadamard,
            phase_steps: 4,
            scheme: ReferenceScheme::Interleaved,
        }
    }
}

/// `(1/P)·Σ_k I_k·exp(−2πik/P)`: the interference term `conj(s)·t` of
/// `I_k = |s + exp(2πik/P)·t|²`.
pub fn demodulate(intensities: &[f64]) -> Complex64 {
    let p = intensities.len() as f64;
    intensities
        .iter()
        .enumerate()
        .map(|(k, &i)| i * Complex64::from_polar(1.0, -TAU * k as f64 / p))
        .sum::<Complex64>()
        / p
}

/// In-place unnormalized Walsh–Hadamard transform (Sylvester ordering).
pub fn fwht(data: &mut [Complex64]) -> Result<()> {
    let n = data.len();
    if !n.is_power_of_two() {
        return Err(Error::BasisSizeMismatch(n));
    }
    let mut h = 1;
    while h < n {
        for start in (0..n).step_by(2 * h) {
            for i in start..start + h {
                let (a, b) = (data[i], data[i + h]);
                data[i] = a + b;
                data[i + h] = a - b;
            }
        }
        h *= 2;
    }
    Ok(())
}

/// Entry `(i, j)` of the Sylvester Hadamard matrix.
pub fn hadamard_entry(i: usize, j: usize) -> f64 {
    if (i & j).count_ones().is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Measures the transmission matrix by phase stepping each input basis
/// vector against the static reference.
///
/// In the pixel basis only the probed segment is lit besides the reference.
/// Hadamard acquisitions drive all modulated segments with `±1` patterns and
/// are transformed back to the pixel basis.
pub fn measure_tm<P: IntensityProbe + ?Sized>(
    probe: &P,
    acquisition: &TmAcquisition,
) -> Result<TransmissionMatrix> {
    if acquisition.phase_steps < 3 {
        return Err(Error::InvalidParameter(format!(
            "phase stepping needs at least 3 steps, got {}",
            acquisition.phase_steps
        )));
    }
    let geometry = probe.geometry().clone();
    let n_seg = geometry.n_segments();
    let modulated = acquisition.scheme.modulated(n_seg);
    let m = modulated.len();
    if m == 0 {
        return Err(Error::InvalidParameter(
            "reference scheme leaves no segment to measure".into(),
        ));
    }
    if acquisition.basis == Basis::Hadamard && !m.is_power_of_two() {
        return Err(Error::BasisSizeMismatch(m));
    }
    let reference = acquisition.scheme.reference_drive(n_seg);
    let n_pix = probe.n_pixels();
    let steps = acquisition.phase_steps;

    let columns: Vec<Vec<Complex64>> = (0..m)
        .into_par_iter()
        .map(|j| {
            let mut records = vec![vec![0.0; steps]; n_pix];
            for k in 0..steps {
                let shift = Complex64::from_polar(1.0, TAU * k as f64 / steps as f64);
                let mut drive = reference.clone();
                for (i, &seg) in modulated.iter().enumerate() {
                    let v = match acquisition.basis {
                        Basis::Pixel => {
                            if i == j {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Basis::Hadamard => hadamard_entry(i, j),
                    };
                    drive[seg] = shift * v;
                }
                let intensity = probe.intensity(&drive)?;
                if intensity.len() != n_pix || intensity.iter().any(|v| !v.is_finite()) {
                    return Err(Error::ProbeFailure("probe returned invalid intensities".into()));
                }
                for (rec, v) in records.iter_mut().zip(intensity) {
                    rec[k] = v;
                }
            }
            Ok(records.iter().map(|r| demodulate(r)).collect())
        })
        .collect::<Result<_>>()?;

    let mut entries = DMatrix::from_fn(n_pix, m, |r, c| columns[c][r]);
    if acquisition.basis == Basis::Hadamard {
        let mut row = vec![ZERO; m];
        for r in 0..n_pix {
            for (c, v) in row.iter_mut().enumerate() {
                *v = entries[(r, c)];
            }
            fwht(&mut row)?;
            for (c, v) in row.iter().enumerate() {
                entries[(r, c)] = v / m as f64;
            }
        }
    }
    Ok(TransmissionMatrix {
        entries,
        geometry,
        modulated,
        basis: acquisition.basis,
        scheme: acquisition.scheme,
        phase_steps: steps,
        seed: None,
    })
}

/// Field at the camera from the segments selected by `drive` only, with the
/// light outside the aperture blocked when `include_exterior` is false.
fn partial_field(
    system: &SystemOperator,
    field: &[Complex64],
    drive: &[Complex64],
    include_exterior: bool,
) -> Result<Vec<Complex64>> {
    let outside = if include_exterior { ONE } else { ZERO };
    let weights = system.mask().geometry().expand(drive, outside);
    let flat = apply_mask(system, &SlmMask::flat(system.mask().geometry().clone()))?;
    let input: Vec<Complex64> = field.iter().zip(&weights).map(|(u, w)| u * w).collect();
    flat.apply(&input)
}

/// Noiseless transmission matrix of a coherent field: column `b` is the
/// camera field produced by segment `modulated[b]` alone.
pub fn exact_tm(
    system: &SystemOperator,
    field: &[Complex64],
    scheme: ReferenceScheme,
) -> Result<TransmissionMatrix> {
    system.grid().check_len(field.len())?;
    let geometry = system.mask().geometry().clone();
    let n_seg = geometry.n_segments();
    let modulated = scheme.modulated(n_seg);
    let n = system.grid().n_points();
    let mut entries = DMatrix::zeros(n, modulated.len());
    for (c, &seg) in modulated.iter().enumerate() {
        let mut drive = vec![ZERO; n_seg];
        drive[seg] = ONE;
        let out = partial_field(system, field, &drive, false)?;
        entries.column_mut(c).iter_mut().zip(&out).for_each(|(d, s)| *d = *s);
    }
    Ok(TransmissionMatrix {
        entries,
        geometry,
        modulated,
        basis: Basis::Pixel,
        scheme,
        phase_steps: 0,
        seed: None,
    })
}

/// Camera field of the static reference light for a coherent field.
pub fn reference_field(
    system: &SystemOperator,
    field: &[Complex64],
    scheme: ReferenceScheme,
) -> Result<Vec<Complex64>> {
    system.grid().check_len(field.len())?;
    let n_seg = system.mask().geometry().n_segments();
    partial_field(system, field, &scheme.reference_drive(n_seg), true)
}

fn mask_from_columns(tm: &TransmissionMatrix, phase: impl Fn(usize) -> f64) -> Result<SlmMask> {
    let mut phases = vec![0.0; tm.geometry.n_segments()];
    for (c, &seg) in tm.modulated.iter().enumerate() {
        phases[seg] = phase(c);
    }
    SlmMask::new(tm.geometry.clone(), phases)
}

/// Phase conjugation of row `target`; reference segments stay at zero.
pub fn focus_mask(tm: &TransmissionMatrix, target: usize) -> Result<SlmMask> {
    tm.check_target(target)?;
    mask_from_columns(tm, |c| -tm.entries[(target, c)].arg())
}

/// Phase of the conjugate superposition of the target rows.
pub fn multi_target_mask(tm: &TransmissionMatrix, targets: &[usize]) -> Result<SlmMask> {
    if targets.is_empty() {
        return Err(Error::EmptyTargets);
    }
    for (i, &t) in targets.iter().enumerate() {
        tm.check_target(t)?;
        if targets[..i].contains(&t) {
            return Err(Error::InvalidParameter(format!("duplicate target {t}")));
        }
    }
    mask_from_columns(tm, |c| {
        targets
            .iter()
            .map(|&t| tm.entries[(t, c)].conj())
            .sum::<Complex64>()
            .arg()
    })
}

/// Adds π to the segments in `region`.
pub fn quadrant_pi_shift(mask: &SlmMask, region: Range<usize>) -> Result<SlmMask> {
    let n = mask.n_segments();
    if region.start > region.end || region.end > n {
        return Err(Error::RegionOutOfRange {
            start: region.start,
            end: region.end,
            len: n,
        });
    }
    let phases = mask
        .phases()
        .iter()
        .enumerate()
        .map(|(b, &p)| if region.contains(&b) { p + PI } else { p })
        .collect();
    SlmMask::new(mask.geometry().clone(), phases)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub segment: usize,
    pub phase: f64,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub initial_intensity: f64,
    pub steps: Vec<TraceStep>,
    pub mask: SlmMask,
}

impl OptimizationTrace {
    pub fn final_intensity(&self) -> f64 {
        self.steps
            .last()
            .map_or(self.initial_intensity, |s| s.intensity)
    }
}

/// Greedy segment-by-segment optimization of the target intensity.
///
/// Starts from a flat mask and updates segment `i mod N` at iteration `i`.
/// Each update evaluates `n_trial_phases` equally spaced phases on a comb
/// with a random offset and keeps the incumbent unless a trial is strictly
/// brighter.
pub fn sequential_optimize<P: IntensityProbe + ?Sized>(
    probe: &P,
    target: usize,
    n_trial_phases: usize,
    iterations: usize,
    seed: u64,
) -> Result<OptimizationTrace> {
    if n_trial_phases < 3 {
        return Err(Error::InvalidParameter(format!(
            "need at least 3 trial phases, got {n_trial_phases}"
        )));
    }
    if iterations == 0 {
        return Err(Error::InvalidParameter("iterations must be >= 1".into()));
    }
    if target >= probe.n_pixels() {
        return Err(Error::TargetOutOfRange {
            target,
            len: probe.n_pixels(),
        });
    }
    let geometry = probe.geometry().clone();
    let n_seg = geometry.n_segments();
    let mut phases = vec![0.0; n_seg];
    let mut drive = vec![ONE; n_seg];
    let mut incumbent = probe.pixel_intensity(&drive, target)?;
    let initial_intensity = incumbent;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spacing = TAU / n_trial_phases as f64;
    let mut steps = Vec::with_capacity(iterations);

    for it in 0..iterations {
        let seg = it % n_seg;
        let offset = rng.random::<f64>() * spacing;
        let mut best = (phases[seg], incumbent);
        for j in 0..n_trial_phases {
            let theta = wrap_phase(offset + spacing * j as f64);
            drive[seg] = Complex64::from_polar(1.0, theta);
            let value = probe.pixel_intensity(&drive, target)?;
            if !value.is_finite() {
                return Err(Error::ProbeFailure("non-finite intensity".into()));
            }
            if value > best.1 {
                best = (theta, value);
            }
        }
        phases[seg] = best.0;
        drive[seg] = Complex64::from_polar(1.0, best.0);
        incumbent = best.1;
        steps.push(TraceStep {
            segment: seg,
            phase: best.0,
            intensity: incumbent,
        });
    }
    Ok(OptimizationTrace {
        initial_intensity,
        steps,
        mask: SlmMask::new(geometry, phases)?,
    })
}

/// Target intensity behind the masked system over the mean intensity of the
/// flat system on `region`, both for the same coherent input.
pub fn enhancement_factor(
    system_with_mask: &SystemOperator,
    system_flat: &SystemOperator,
    coherent_probe: &[Complex64],
    target: usize,
    region: Range<usize>,
) -> Result<f64> {
    let n = system_flat.grid().n_points();
    if target >= n {
        return Err(Error::TargetOutOfRange { target, len: n });
    }
    if region.is_empty() {
        return Err(Error::EmptyRegion);
    }
    if region.end > n {
        return Err(Error::RegionOutOfRange {
            start: region.start,
            end: region.end,
            len: n,
        });
    }
    let before = system_flat.apply(coherent_probe)?;
    let mean = before[region.clone()].iter().map(|z| z.norm_sqr()).sum::<f64>() / region.len() as f64;
    if mean.is_nan() || mean <= 0.0 {
        return Err(Error::ZeroMean);
    }
    let after = system_with_mask.apply(coherent_probe)?;
    Ok(after[target].norm_sqr() / mean)
}
