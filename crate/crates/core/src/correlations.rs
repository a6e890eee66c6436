//! Second-order correlations: exact G² maps, minus/sum projections, synthetic
//! photon-counting frames and the frame-based G² estimator.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagation::OutputJointAmplitude;
use crate::spdc::Grid1D;
use crate::stats::median;

/// Frames simulated from one RNG stream.
const FRAMES_PER_STREAM: usize = 4096;

/// Joint detection density over `(x₁, x₂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct G2Map {
    grid: Grid1D,
    values: DMatrix<f64>,
}

impl G2Map {
    pub fn new(grid: Grid1D, values: DMatrix<f64>) -> Result<Self> {
        let n = grid.n_points();
        if values.nrows() != n || values.ncols() != n {
            return Err(Error::GridMismatch {
                expected: n,
                found: values.nrows().max(values.ncols()),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// `Σ values·dx²`
    pub fn total(&self) -> f64 {
        let dx = self.grid.pitch();
        self.values.sum() * dx * dx
    }

    /// Per-pixel detection probability of the first photon, `Σ_j G(i, j)·dx²`.
    pub fn row_probabilities(&self) -> Vec<f64> {
        let dx2 = self.grid.pitch().powi(2);
        self.values.row_iter().map(|r| r.sum() * dx2).collect()
    }

    /// Per-pixel detection probability of the second photon.
    pub fn column_probabilities(&self) -> Vec<f64> {
        let dx2 = self.grid.pitch().powi(2);
        self.values.column_iter().map(|c| c.sum() * dx2).collect()
    }
}

/// `|ψ_out|²` normalized to unit mass.
pub fn g2_exact(psi_out: &OutputJointAmplitude) -> G2Map {
    let grid = *psi_out.grid();
    let dx = grid.pitch();
    let mut values = psi_out.amplitude().map(|z: Complex64| z.norm_sqr());
    let total = values.sum() * dx * dx;
    if total > 0.0 {
        values /= total;
    }
    G2Map { grid, values }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coordinate {
    /// `x₁ − x₂`
    Minus,
    /// `x₁ + x₂`
    Sum,
}

/// Marginal of a G² map along `x₁ − x₂` or `x₁ + x₂`.
///
/// Entry `k` of the `2n − 1` values is offset `k − (n − 1)` in pixels, i.e.
/// `i − j` for the minus coordinate and `i + j − (n − 1)` for the sum. Values
/// are the summed probability (`Σ G·dx²`) over the `counts[k]` cells on that
/// diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct G2Projection {
    pub coordinate: Coordinate,
    pub pitch: f64,
    pub values: Vec<f64>,
    pub counts: Vec<usize>,
}

impl G2Projection {
    pub fn n_points(&self) -> usize {
        self.values.len().div_ceil(2)
    }

    pub fn center(&self) -> usize {
        self.n_points() - 1
    }

    /// Offsets in pixels.
    pub fn offsets(&self) -> Vec<i64> {
        let c = self.center() as i64;
        (0..self.values.len() as i64).map(|k| k - c).collect()
    }

    /// Values divided by the number of cells on each diagonal.
    pub fn density(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.counts)
            .map(|(v, &c)| v / c as f64)
            .collect()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn value_at(&self, offset: i64) -> f64 {
        self.values[(self.center() as i64 + offset) as usize]
    }
}

pub fn project(map: &G2Map, coordinate: Coordinate) -> G2Projection {
    let n = map.grid.n_points();
    let dx2 = map.grid.pitch().powi(2);
    let mut values = vec![0.0; 2 * n - 1];
    let mut counts = vec![0usize; 2 * n - 1];
    for j in 0..n {
        for i in 0..n {
            let k = match coordinate {
                Coordinate::Minus => i + n - 1 - j,
                Coordinate::Sum => i + j,
            };
            values[k] += map.values[(i, j)] * dx2;
            counts[k] += 1;
        }
    }
    G2Projection {
        coordinate,
        pitch: map.grid.pitch(),
        values,
        counts,
    }
}

/// Peak-to-background ratio of the projection density: mean over
/// `|δ| ≤ halfwidth` divided by the median over `|δ| > 4·halfwidth`.
///
/// The density (value per diagonal cell) is used so that a featureless map
/// scores exactly 1.
pub fn peak_metric(projection: &G2Projection, peak_halfwidth: usize) -> Result<f64> {
    let n = projection.n_points();
    if 4 * peak_halfwidth >= n {
        return Err(Error::InvalidParameter(format!(
            "peak half-width {peak_halfwidth} must be below n/4 = {}",
            n as f64 / 4.0
        )));
    }
    let density = projection.density();
    let c = projection.center() as i64;
    let hw = peak_halfwidth as i64;
    let mut peak = Vec::new();
    let mut background = Vec::new();
    for (k, &d) in density.iter().enumerate() {
        let off = (k as i64 - c).abs();
        if off <= hw {
            peak.push(d);
        } else if off > 4 * hw {
            background.push(d);
        }
    }
    let bg = median(&background);
    if bg.is_nan() || bg <= 0.0 {
        return Err(Error::DegenerateBackground);
    }
    Ok(peak.iter().sum::<f64>() / peak.len() as f64 / bg)
}

/// Fourier-domain hard low-pass on the projection values. `cutoff` is a
/// fraction of the Nyquist frequency; the DC term is always kept, so the mass
/// is preserved.
pub fn lowpass_denoise(projection: &G2Projection, cutoff: f64) -> Result<G2Projection> {
    if !(cutoff > 0.0 && cutoff <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "cutoff must lie in (0, 1], got {cutoff}"
        )));
    }
    if cutoff == 1.0 {
        return Ok(projection.clone());
    }
    let len = projection.values.len();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let mut buf: Vec<Complex64> = projection
        .values
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    fwd.process(&mut buf);
    let keep = cutoff * len as f64 / 2.0;
    for (k, z) in buf.iter_mut().enumerate() {
        let freq = k.min(len - k) as f64;
        if freq > keep {
            *z = Complex64::new(0.0, 0.0);
        }
    }
    inv.process(&mut buf);
    let mut out = projection.clone();
    out.values = buf.iter().map(|z| z.re / len as f64).collect();
    Ok(out)
}

/// Sparse photon-counting camera model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorParams {
    /// Mean number of pairs per frame (Poisson).
    pub mean_pairs: f64,
    /// Mean dark counts per pixel per frame (Poisson).
    pub dark_prob: f64,
    /// Clip counts to 0/1.
    pub binary: bool,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            mean_pairs: 0.2,
            dark_prob: 1e-3,
            binary: true,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean_pairs.is_finite() && self.mean_pairs >= 0.0) {
            return Err(Error::InvalidDetectorParams(format!(
                "mean_pairs must be >= 0, got {}",
                self.mean_pairs
            )));
        }
        if !(self.dark_prob >= 0.0 && self.dark_prob < 1.0) {
            return Err(Error::InvalidDetectorParams(format!(
                "dark_prob must lie in [0, 1), got {}",
                self.dark_prob
            )));
        }
        Ok(())
    }
}

/// Frames stored frame-major, one byte per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    pub n_pixels: usize,
    pub n_frames: usize,
    pub frames: Vec<u8>,
    pub detector: DetectorParams,
    pub seed: u64,
}

impl FrameStack {
    pub fn frame(&self, i: usize) -> &[u8] {
        &self.frames[i * self.n_pixels..(i + 1) * self.n_pixels]
    }

    /// Mean value per pixel over all frames.
    pub fn pixel_means(&self) -> Vec<f64> {
        let mut acc = vec![0u64; self.n_pixels];
        for f in self.frames.chunks_exact(self.n_pixels) {
            acc.iter_mut().zip(f).for_each(|(a, &v)| *a += v as u64);
        }
        acc.iter().map(|&a| a as f64 / self.n_frames as f64).collect()
    }
}

/// Draws frames from the joint detection probabilities of `map`.
///
/// Each frame gets a Poisson number of pairs whose pixel pairs are sampled
/// from the map, plus Poisson dark counts per pixel. Frames are generated in
/// blocks with independent RNG streams derived from `seed`, so the stack does
/// not depend on the thread count.
pub fn simulate_frames(
    map: &G2Map,
    detector: &DetectorParams,
    n_frames: usize,
    seed: u64,
) -> Result<FrameStack> {
    detector.validate()?;
    let n = map.grid.n_points();
    if map.values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidParameter("G2 map must be non-negative".into()));
    }
    let sampler = if detector.mean_pairs > 0.0 {
        Some(
            WeightedIndex::new(map.values.iter().copied())
                .map_err(|e| Error::InvalidParameter(format!("G2 map: {e}")))?,
        )
    } else {
        None
    };
    let pairs = if detector.mean_pairs > 0.0 {
        Some(Poisson::new(detector.mean_pairs).map_err(|e| Error::InvalidDetectorParams(e.to_string()))?)
    } else {
        None
    };
    let dark_total = detector.dark_prob * n as f64;
    let darks = if dark_total > 0.0 {
        Some(Poisson::new(dark_total).map_err(|e| Error::InvalidDetectorParams(e.to_string()))?)
    } else {
        None
    };

    let mut frames = vec![0u8; n * n_frames];
    frames
        .par_chunks_mut(n * FRAMES_PER_STREAM)
        .enumerate()
        .for_each(|(block, data)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(block as u64);
            for frame in data.chunks_exact_mut(n) {
                if let (Some(pairs), Some(sampler)) = (&pairs, &sampler) {
                    let count = pairs.sample(&mut rng) as u64;
                    for _ in 0..count {
                        // Column-major storage: flat index = i + n·j.
                        let cell = sampler.sample(&mut rng);
                        let (i, j) = (cell % n, cell / n);
                        frame[i] = frame[i].saturating_add(1);
                        frame[j] = frame[j].saturating_add(1);
                    }
                }
                if let Some(darks) = &darks {
                    let count = darks.sample(&mut rng) as u64;
                    for _ in 0..count {
                        let p = rng.random_range(0..n);
                        frame[p] = frame[p].saturating_add(1);
                    }
                }
                if detector.binary {
                    frame.iter_mut().for_each(|v| *v = (*v).min(1));
                }
            }
        });

    Ok(FrameStack {
        n_pixels: n,
        n_frames,
        frames,
        detector: *detector,
        seed,
    })
}

fn nonzero(frame: &[u8]) -> Vec<(usize, i64)> {
    frame
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0)
        .map(|(p, &v)| (p, v as i64))
        .collect()
}

/// How the accidental (uncorrelated) coincidences are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accidentals {
    /// Products of consecutive frames, `I_i(r₁)·I_{i+1}(r₂)`.
    #[default]
    NextFrame,
    /// Product of the per-pixel means over the whole stack.
    MeanProduct,
}

/// Consecutive-frame G² estimate
/// `(1/(M−1))·Σ_i [I_i(r₁)·I_i(r₂) − I_i(r₁)·I_{i+1}(r₂)]`, in counts per
/// frame. On the diagonal the same-frame term is the factorial moment
/// `I(I − 1)`, so a pixel does not correlate with its own shot noise.
pub fn estimate_g2(stack: &FrameStack, grid: &Grid1D) -> Result<G2Map> {
    estimate_g2_with(stack, grid, Accidentals::NextFrame)
}

/// As [`estimate_g2`] with a selectable accidental term. `MeanProduct`
/// averages the same-frame products over all `M` frames and subtracts
/// `Ī(r₁)·Ī(r₂)`.
pub fn estimate_g2_with(stack: &FrameStack, grid: &Grid1D, accidentals: Accidentals) -> Result<G2Map> {
    let m = stack.n_frames;
    if m < 2 {
        return Err(Error::TooFewFrames(m));
    }
    grid.check_len(stack.n_pixels)?;
    let n = stack.n_pixels;
    let next_frame = accidentals == Accidentals::NextFrame;
    // Same-frame products run over frames 0..M−1 for the consecutive
    // estimator and over all frames otherwise.
    let span = if next_frame { m - 1 } else { m };
    let block = FRAMES_PER_STREAM;
    let sums: Vec<Vec<i64>> = (0..span.div_ceil(block))
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![0i64; n * n];
            let end = ((b + 1) * block).min(span);
            for i in b * block..end {
                let current = nonzero(stack.frame(i));
                for &(p, a) in &current {
                    for &(q, c) in &current {
                        let same = if p == q { a * (a - 1) } else { a * c };
                        acc[p + n * q] += same;
                    }
                }
                if next_frame {
                    let next = nonzero(stack.frame(i + 1));
                    for &(p, a) in &current {
                        for &(q, c) in &next {
                            acc[p + n * q] -= a * c;
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0i64; n * n];
    for s in sums {
        total.iter_mut().zip(s).for_each(|(t, v)| *t += v);
    }
    let mut values = DMatrix::from_iterator(n, n, total.into_iter().map(|v| v as f64 / span as f64));
    if !next_frame {
        let means = stack.pixel_means();
        for j in 0..n {
            for i in 0..n {
                values[(i, j)] -= means[i] * means[j];
            }
        }
    }
    G2Map::new(*grid, values)
}

/// CSV of a map: `i,j,x1_m,x2_m,value`.
pub fn map_to_csv(map: &G2Map) -> String {
    let mut s = String::from("i,j,x1_m,x2_m,value\n");
    let n = map.grid.n_points();
    for i in 0..n {
        for j in 0..n {
            let _ = writeln!(
                s,
                "{i},{j},{:e},{:e},{:e}",
                map.grid.coordinate(i),
                map.grid.coordinate(j),
                map.values[(i, j)]
            );
        }
    }
    s
}

/// CSV of a projection: `offset_px,offset_m,value,cells`.
pub fn projection_to_csv(projection: &G2Projection) -> String {
    let mut s = String::from("offset_px,offset_m,value,cells\n");
    for ((off, v), c) in projection
        .offsets()
        .iter()
        .zip(&projection.values)
        .zip(&projection.counts)
    {
        let _ = writeln!(s, "{off},{:e},{:e},{c}", *off as f64 * projection.pitch, v);
    }
    s
}
