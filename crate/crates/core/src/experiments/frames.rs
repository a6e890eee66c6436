//! Synthetic photon-counting run: exact joint probability, sampled frames,
//! estimated G² and its projections.

use std::path::Path;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::{derive_seed, streams};
use crate::correlations::{
    estimate_g2_with, g2_exact, lowpass_denoise, map_to_csv, project, projection_to_csv, simulate_frames,
    Coordinate, FrameStack, G2Map,
};
use crate::error::Result;
use crate::io::save_frames;
use crate::optics::{PhaseScreen, Propagation, SlmGeometry, SlmMask, SystemOperator};
use crate::propagation::propagate_two_photon;
use crate::spdc::build_state;

/// Frame file name; its sidecar is `frames.json`.
pub const FRAMES_FILE: &str = "frames.bin";

/// Text outputs of `g2-frames`, in order.
pub const FRAMES_TEXT_FILES: [&str; 6] = [
    "g2_exact.csv",
    "g2_estimated.csv",
    "g2_minus.csv",
    "g2_minus_denoised.csv",
    "g2_sum.csv",
    "frames_summary.json",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FramesSummary {
    pub n_pixels: usize,
    pub n_frames: usize,
    pub seed: u64,
    /// Least-squares scale mapping the exact map onto the estimate.
    pub scale: f64,
    /// Relative L² distance between the estimate and the scaled exact map.
    pub relative_l2: f64,
    pub include_diagonal: bool,
}

pub struct FramesResult {
    pub exact: G2Map,
    pub estimated: G2Map,
    pub stack: FrameStack,
    pub summary: FramesSummary,
}

/// Least-squares scale `s` minimizing `‖est − s·exact‖` and the relative
/// residual `‖est − s·exact‖ / ‖est‖`, optionally skipping the diagonal.
pub fn scaled_distance(exact: &G2Map, estimated: &G2Map, include_diagonal: bool) -> (f64, f64) {
    let (e, m) = (exact.values(), estimated.values());
    let n = e.nrows();
    let cells = (0..n)
        .flat_map(|j| (0..n).map(move |i| (i, j)))
        .filter(|(i, j)| include_diagonal || i != j);
    let (mut em, mut ee, mut mm) = (0.0, 0.0, 0.0);
    for (i, j) in cells.clone() {
        em += e[(i, j)] * m[(i, j)];
        ee += e[(i, j)] * e[(i, j)];
        mm += m[(i, j)] * m[(i, j)];
    }
    let scale = if ee > 0.0 { em / ee } else { 0.0 };
    let resid: f64 = cells
        .map(|(i, j)| (m[(i, j)] - scale * e[(i, j)]).powi(2))
        .sum();
    (scale, (resid / mm).sqrt())
}

pub fn run_frames(cfg: &ExperimentConfig) -> Result<FramesResult> {
    cfg.validate()?;
    let f = &cfg.frames;
    let grid = f.grid()?;
    let state = build_state(&f.state_params()?, &grid)?;
    let identity = SystemOperator::with_propagation(
        PhaseScreen::zero(grid),
        SlmMask::flat(SlmGeometry::pixelwise(grid.n_points())?),
        &grid,
        Propagation::Identity,
    )?;
    let exact = g2_exact(&propagate_two_photon(&state, &identity)?);
    let seed = derive_seed(cfg.run.seed, streams::FRAMES, &[]);
    let stack = simulate_frames(&exact, &cfg.detector, f.n_frames, seed)?;
    let estimated = estimate_g2_with(&stack, &grid, f.accidentals)?;
    // Binary pixels cannot register both photons of a pair on one pixel.
    let include_diagonal = !cfg.detector.binary;
    let (scale, relative_l2) = scaled_distance(&exact, &estimated, include_diagonal);
    let summary = FramesSummary {
        n_pixels: grid.n_points(),
        n_frames: f.n_frames,
        seed,
        scale,
        relative_l2,
        include_diagonal,
    };
    Ok(FramesResult {
        exact,
        estimated,
        stack,
        summary,
    })
}

impl FramesResult {
    pub fn text_files(&self, denoise_cutoff: f64) -> Result<Vec<(String, String)>> {
        let minus = project(&self.estimated, Coordinate::Minus);
        let denoised = lowpass_denoise(&minus, denoise_cutoff)?;
        let mut summary = serde_json::to_string_pretty(&self.summary)?;
        summary.push('\n');
        let contents = [
            map_to_csv(&self.exact),
            map_to_csv(&self.estimated),
            projection_to_csv(&minus),
            projection_to_csv(&denoised),
            projection_to_csv(&project(&self.estimated, Coordinate::Sum)),
            summary,
        ];
        Ok(FRAMES_TEXT_FILES
            .iter()
            .map(|s| s.to_string())
            .zip(contents)
            .collect())
    }

    pub fn save_stack(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        save_frames(&dir.join(FRAMES_FILE), &self.stack)
    }
}
