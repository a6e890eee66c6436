//! Speckle-contrast and focusing-enhancement sweeps over the Schmidt number.

use std::fmt::Write as _;
use std::ops::Range;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::{coherent_field, derive_seed, streams};
use crate::error::{Error, Result};
use crate::optics::{apply_mask, compose_system, PhaseScreen, SlmGeometry, SlmMask, SystemOperator};
use crate::propagation::{central_region, intensity_from_modes, speckle_contrast, MODE_WEIGHT_KEPT};
use crate::spdc::{build_state, schmidt_decompose, Grid1D, SchmidtDecomposition};
use crate::stats::{mean, sample_std};
use crate::wavefront::{enhancement_factor, sequential_optimize, StateProbe};

/// Envelope threshold defining the central camera region.
pub const CENTRAL_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    Contrast,
    Enhancement,
}

impl SweepKind {
    pub fn name(&self) -> &'static str {
        match self {
            SweepKind::Contrast => "contrast",
            SweepKind::Enhancement => "enhancement",
        }
    }

    fn aux_name(&self) -> &'static str {
        match self {
            SweepKind::Contrast => "mean_intensity",
            SweepKind::Enhancement => "feedback_intensity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub k_1d: f64,
    pub repeat: usize,
    /// Phase-screen seed of this repeat.
    pub seed: u64,
    pub value: f64,
    pub value_normalized: f64,
    pub aux: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepAggregate {
    pub k_1d: f64,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
    pub mean_normalized: f64,
    pub std_normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub kind: SweepKind,
    pub rows: Vec<SweepRow>,
    pub aggregates: Vec<SweepAggregate>,
    /// Central camera region used for the statistics.
    pub region: [usize; 2],
}

impl SweepResult {
    /// Builds rows and aggregates; values are normalized by the largest
    /// per-K mean.
    pub fn new(
        kind: SweepKind,
        k_values: &[f64],
        raw: Vec<(usize, usize, u64, f64, f64)>,
        region: Range<usize>,
    ) -> Self {
        let groups: Vec<Vec<f64>> = (0..k_values.len())
            .map(|ki| raw.iter().filter(|r| r.0 == ki).map(|r| r.3).collect())
            .collect();
        let max_mean = groups
            .iter()
            .map(|g| mean(g))
            .fold(f64::NEG_INFINITY, f64::max);
        let rows = raw
            .iter()
            .map(|&(ki, repeat, seed, value, aux)| SweepRow {
                k_1d: k_values[ki],
                repeat,
                seed,
                value,
                value_normalized: value / max_mean,
                aux,
            })
            .collect();
        let aggregates = groups
            .iter()
            .zip(k_values)
            .map(|(g, &k_1d)| {
                let normalized: Vec<f64> = g.iter().map(|v| v / max_mean).collect();
                SweepAggregate {
                    k_1d,
                    n: g.len(),
                    mean: mean(g),
                    std: sample_std(g),
                    mean_normalized: mean(&normalized),
                    std_normalized: sample_std(&normalized),
                }
            })
            .collect();
        Self {
            kind,
            rows,
            aggregates,
            region: [region.start, region.end],
        }
    }

    pub fn means(&self) -> Vec<f64> {
        self.aggregates.iter().map(|a| a.mean).collect()
    }

    pub fn k_values(&self) -> Vec<f64> {
        self.aggregates.iter().map(|a| a.k_1d).collect()
    }

    /// `k_1d,repeat,seed,value,value_normalized,<aux>`
    pub fn rows_csv(&self) -> String {
        let mut s = format!(
            "k_1d,repeat,seed,value,value_normalized,{}\n",
            self.kind.aux_name()
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.k_1d, r.repeat, r.seed, r.value, r.value_normalized, r.aux
            );
        }
        s
    }

    /// `k_1d,n,mean,std,mean_normalized,std_normalized`
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("k_1d,n,mean,std,mean_normalized,std_normalized\n");
        for a in &self.aggregates {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                a.k_1d, a.n, a.mean, a.std, a.mean_normalized, a.std_normalized
            );
        }
        s
    }

    /// Gnuplot script plotting the normalized means with error bars.
    pub fn gnuplot(&self) -> String {
        let name = self.kind.name();
        format!(
            "set datafile separator ','\nset key off\nset logscale x 2\n\
             set xlabel 'Schmidt number (1D)'\nset ylabel 'normalized {name}'\n\
             plot 'sweep_{name}_summary.csv' every ::1 using 1:5:6 with yerrorlines\n"
        )
    }

    /// File name and content of the CSV, summary and plot script.
    pub fn files(&self) -> Vec<(String, String)> {
        let name = self.kind.name();
        vec![
            (format!("sweep_{name}.csv"), self.rows_csv()),
            (format!("sweep_{name}_summary.csv"), self.summary_csv()),
            (format!("sweep_{name}.gp"), self.gnuplot()),
        ]
    }
}

/// Inputs shared by both sweeps.
struct SweepSetup {
    grid: Grid1D,
    geometry: SlmGeometry,
    k_values: Vec<f64>,
    modes: Vec<SchmidtDecomposition>,
    benchmark: Vec<Complex64>,
    region: Range<usize>,
}

fn screen_for(cfg: &ExperimentConfig, grid: &Grid1D, path: &[u64], stream: u64) -> Result<PhaseScreen> {
    let mut p = vec![cfg.scatterer.seed];
    p.extend_from_slice(path);
    PhaseScreen::generate(
        *grid,
        cfg.scatterer.correlation_length(grid),
        cfg.scatterer.phase_std,
        derive_seed(cfg.run.seed, stream, &p),
    )
}

/// Seed of the screen used in `repeat`.
pub fn screen_seed(cfg: &ExperimentConfig, repeat: usize) -> u64 {
    derive_seed(
        cfg.run.seed,
        streams::SCREEN,
        &[cfg.scatterer.seed, repeat as u64],
    )
}

/// Mean coherent camera intensity over the envelope screens (flat SLM).
pub fn mean_envelope(
    cfg: &ExperimentConfig,
    grid: &Grid1D,
    geometry: &SlmGeometry,
    field: &[Complex64],
) -> Result<Vec<f64>> {
    let runs: Vec<Vec<f64>> = (0..cfg.run.envelope_seeds)
        .into_par_iter()
        .map(|s| {
            let screen = screen_for(cfg, grid, &[s as u64], streams::ENVELOPE)?;
            let system = compose_system(&screen, &SlmMask::flat(geometry.clone()), grid)?;
            Ok(system.apply(field)?.iter().map(|z| z.norm_sqr()).collect())
        })
        .collect::<Result<_>>()?;
    let mut acc = vec![0.0; grid.n_points()];
    for r in &runs {
        acc.iter_mut().zip(r).for_each(|(a, v)| *a += v);
    }
    acc.iter_mut().for_each(|a| *a /= runs.len() as f64);
    Ok(acc)
}

fn setup(cfg: &ExperimentConfig) -> Result<SweepSetup> {
    cfg.validate()?;
    let grid = cfg.grid.grid()?;
    let geometry = cfg.slm.geometry(&grid)?;
    let points = cfg.state.points()?;
    let modes = points
        .par_iter()
        .map(|p| {
            let state = build_state(&p.params, &grid)?;
            Ok(schmidt_decompose(&state)?.truncated(MODE_WEIGHT_KEPT))
        })
        .collect::<Result<Vec<_>>>()?;
    let benchmark = coherent_field(&grid, &cfg.state.coherent_reference()?);
    let envelope = mean_envelope(cfg, &grid, &geometry, &benchmark)?;
    let region = central_region(&envelope, CENTRAL_FRACTION)?;
    Ok(SweepSetup {
        grid,
        geometry,
        k_values: points.iter().map(|p| p.k_1d).collect(),
        modes,
        benchmark,
        region,
    })
}

fn tasks(n_k: usize, repeats: usize) -> Vec<(usize, usize)> {
    (0..n_k)
        .flat_map(|ki| (0..repeats).map(move |r| (ki, r)))
        .collect()
}

fn flat_system(cfg: &ExperimentConfig, s: &SweepSetup, repeat: usize) -> Result<SystemOperator> {
    let screen = screen_for(cfg, &s.grid, &[repeat as u64], streams::SCREEN)?;
    compose_system(&screen, &SlmMask::flat(s.geometry.clone()), &s.grid)
}

/// Speckle contrast of the reduced intensity behind a flat SLM, per Schmidt
/// number and screen.
pub fn sweep_contrast(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let s = setup(cfg)?;
    let raw = tasks(s.k_values.len(), cfg.run.repeats)
        .into_par_iter()
        .map(|(ki, r)| {
            let system = flat_system(cfg, &s, r)?;
            let profile = intensity_from_modes(&s.modes[ki], &system)?;
            let contrast = speckle_contrast(&profile, s.region.clone())?;
            let region_mean = mean(&profile.values()[s.region.clone()]);
            Ok((ki, r, screen_seed(cfg, r), contrast, region_mean))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult::new(SweepKind::Contrast, &s.k_values, raw, s.region))
}

/// Sequential optimization driven by each state's reduced intensity, scored
/// by the coherent-beam enhancement of the final mask.
pub fn sweep_enhancement(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let s = setup(cfg)?;
    let target = cfg.target()?;
    if !s.region.contains(&target) {
        return Err(Error::Config(format!(
            "target pixel {target} lies outside the central region {:?}",
            s.region
        )));
    }
    let raw = tasks(s.k_values.len(), cfg.run.repeats)
        .into_par_iter()
        .map(|(ki, r)| {
            let system = flat_system(cfg, &s, r)?;
            let probe = StateProbe::new(&system, s.modes[ki].clone())?;
            let opt_seed = derive_seed(cfg.run.seed, streams::OPTIMIZER, &[ki as u64, r as u64]);
            let trace = sequential_optimize(
                &probe,
                target,
                cfg.optimization.trial_phases,
                cfg.optimization.iterations,
                opt_seed,
            )?;
            let shaped = apply_mask(&system, &trace.mask)?;
            let eta = enhancement_factor(&shaped, &system, &s.benchmark, target, s.region.clone())?;
            Ok((ki, r, screen_seed(cfg, r), eta, trace.final_intensity()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult::new(SweepKind::Enhancement, &s.k_values, raw, s.region))
}
