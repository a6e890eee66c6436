//! Correction demo: measure the channel with a weakly entangled probe, then
//! restore the pair correlations of a strongly entangled state.

use std::fmt::Write as _;

use num_complex::Complex64;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::{coherent_field, derive_seed, streams};
use crate::correlations::{g2_exact, peak_metric, project, Coordinate, G2Projection};
use crate::error::{Error, Result};
use crate::optics::{apply_mask, compose_system, PhaseScreen, SlmMask, SystemOperator};
use crate::propagation::{coherent_intensity, intensity_from_modes, propagate_two_photon, MODE_WEIGHT_KEPT};
use crate::spdc::{build_state, schmidt_decompose, GaussianStateParams, Grid1D};
use crate::wavefront::{
    enhancement_factor, focus_mask, measure_tm, multi_target_mask, quadrant_pi_shift, StateProbe,
    TransmissionMatrix,
};

/// Files written by `demo-correction`, in order.
pub const DEMO_FILES: [&str; 5] = [
    "intensities.csv",
    "g2_minus.csv",
    "g2_sum.csv",
    "masks.csv",
    "summary.json",
];

/// Configurations whose joint probability is projected, in CSV column order.
pub const CASES: [&str; 5] = [
    "flat",
    "corrected",
    "shifted",
    "no_medium_flat",
    "no_medium_corrected",
];

/// Channel of the demo with the probe state, shared with the `tm` command.
pub struct DemoChannel {
    pub grid: Grid1D,
    pub system: SystemOperator,
    pub probe: StateProbe,
    pub screen_seed: u64,
}

pub fn demo_channel(cfg: &ExperimentConfig) -> Result<DemoChannel> {
    cfg.validate()?;
    let d = &cfg.demo;
    let grid = d.grid()?;
    let screen_seed = derive_seed(cfg.run.seed, streams::SCREEN, &[d.screen_seed]);
    let screen = PhaseScreen::generate(
        grid,
        d.correlation_length.unwrap_or(grid.pitch()),
        d.phase_std,
        screen_seed,
    )?;
    let system = compose_system(&screen, &SlmMask::flat(d.geometry()?), &grid)?;
    let probe_state = build_state(&d.state_params(d.probe_k)?, &grid)?;
    let probe = StateProbe::from_state(&system, &probe_state)?;
    Ok(DemoChannel {
        grid,
        system,
        probe,
        screen_seed,
    })
}

/// Transmission matrix measured with the probe state of the demo channel.
pub fn measure_demo_tm(cfg: &ExperimentConfig) -> Result<TransmissionMatrix> {
    let ch = demo_channel(cfg)?;
    let mut tm = measure_tm(&ch.probe, &cfg.demo.acquisition())?;
    tm.seed = Some(ch.screen_seed);
    Ok(tm)
}

/// Correlation figures of one projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeakSummary {
    /// `None` when the background vanishes.
    pub peak_metric: Option<f64>,
    /// Share of the projected probability within the peak half-width.
    pub peak_fraction: f64,
    /// Projection value at zero offset.
    pub center_value: f64,
}

impl PeakSummary {
    fn of(p: &G2Projection, halfwidth: usize) -> Result<Self> {
        let peak_metric = match peak_metric(p, halfwidth) {
            Ok(v) => Some(v),
            Err(Error::DegenerateBackground) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            peak_metric,
            peak_fraction: peak_fraction(p, halfwidth),
            center_value: p.value_at(0),
        })
    }
}

/// `Σ_{|δ| ≤ hw} values / Σ values`.
pub fn peak_fraction(p: &G2Projection, halfwidth: usize) -> f64 {
    let hw = halfwidth as i64;
    let peak: f64 = p
        .offsets()
        .iter()
        .zip(&p.values)
        .filter(|(o, _)| o.abs() <= hw)
        .map(|(_, v)| v)
        .sum();
    peak / p.total()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseSummary {
    pub name: String,
    pub minus: PeakSummary,
    pub sum: PeakSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoSummary {
    pub screen_seed: u64,
    pub probe_k: f64,
    pub entangled_k: f64,
    pub target: usize,
    pub spot_targets: Vec<usize>,
    pub shift_region: [usize; 2],
    pub tm_rows: usize,
    pub tm_cols: usize,
    /// Coherent enhancement of the focus mask over the whole camera.
    pub enhancement: f64,
    pub peak_halfwidth: usize,
    pub cases: Vec<CaseSummary>,
}

impl DemoSummary {
    pub fn case(&self, name: &str) -> Option<&CaseSummary> {
        self.cases.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone)]
pub struct DemoResult {
    pub grid: Grid1D,
    pub tm: TransmissionMatrix,
    pub masks: Vec<(String, SlmMask)>,
    /// Named camera intensities.
    pub intensities: Vec<(String, Vec<f64>)>,
    /// Minus and sum projections per entry of [`CASES`].
    pub minus: Vec<G2Projection>,
    pub sum: Vec<G2Projection>,
    pub summary: DemoSummary,
}

impl DemoResult {
    pub fn projection(&self, coordinate: Coordinate, case: &str) -> Option<&G2Projection> {
        let k = CASES.iter().position(|c| *c == case)?;
        Some(match coordinate {
            Coordinate::Minus => &self.minus[k],
            Coordinate::Sum => &self.sum[k],
        })
    }

    /// Content of each file in [`DEMO_FILES`].
    pub fn files(&self) -> Result<Vec<(String, String)>> {
        let mut summary = serde_json::to_string_pretty(&self.summary)?;
        summary.push('\n');
        let contents = [
            self.intensities_csv(),
            projections_csv(&self.minus),
            projections_csv(&self.sum),
            self.masks_csv(),
            summary,
        ];
        Ok(DEMO_FILES
            .iter()
            .map(|s| s.to_string())
            .zip(contents)
            .collect())
    }

    fn intensities_csv(&self) -> String {
        let mut s = String::from("pixel,x_m");
        for (name, _) in &self.intensities {
            s.push(',');
            s.push_str(name);
        }
        s.push('\n');
        for k in 0..self.grid.n_points() {
            let _ = write!(s, "{k},{:e}", self.grid.coordinate(k));
            for (_, v) in &self.intensities {
                let _ = write!(s, ",{:e}", v[k]);
            }
            s.push('\n');
        }
        s
    }

    fn masks_csv(&self) -> String {
        let mut s = String::from("segment");
        for (name, _) in &self.masks {
            s.push(',');
            s.push_str(name);
        }
        s.push('\n');
        let n = self.masks.first().map_or(0, |m| m.1.n_segments());
        for b in 0..n {
            let _ = write!(s, "{b}");
            for (_, m) in &self.masks {
                let _ = write!(s, ",{}", m.phases()[b]);
            }
            s.push('\n');
        }
        s
    }
}

fn projections_csv(p: &[G2Projection]) -> String {
    let mut s = String::from("offset_px,offset_m");
    for c in CASES {
        s.push(',');
        s.push_str(c);
    }
    s.push('\n');
    let first = &p[0];
    for (k, off) in first.offsets().iter().enumerate() {
        let _ = write!(s, "{off},{:e}", *off as f64 * first.pitch);
        for q in p {
            let _ = write!(s, ",{:e}", q.values[k]);
        }
        s.push('\n');
    }
    s
}

fn correlations(
    system: &SystemOperator,
    state: &crate::spdc::TwoPhotonState,
) -> Result<(G2Projection, G2Projection)> {
    let map = g2_exact(&propagate_two_photon(state, system)?);
    Ok((project(&map, Coordinate::Minus), project(&map, Coordinate::Sum)))
}

pub fn run_demo(cfg: &ExperimentConfig) -> Result<DemoResult> {
    let d = &cfg.demo;
    let ch = demo_channel(cfg)?;
    let grid = ch.grid;
    let flat = &ch.system;
    let env = d.envelope_width();
    let beam = coherent_field(&grid, &GaussianStateParams::new(env, env)?);

    let mut tm = measure_tm(&ch.probe, &d.acquisition())?;
    tm.seed = Some(ch.screen_seed);

    let target = d.target();
    let spot_targets = d
        .spot_offsets
        .iter()
        .map(|&o| {
            let t = target as i64 + o;
            if t < 0 || t >= grid.n_points() as i64 {
                Err(Error::Config(format!("spot offset {o} leaves the camera")))
            } else {
                Ok(t as usize)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let focus = focus_mask(&tm, target)?;
    let spots = multi_target_mask(&tm, &spot_targets)?;
    let [a, b] = d.shift_region();
    let shifted = quadrant_pi_shift(&focus, a..b)?;

    let focused_sys = apply_mask(flat, &focus)?;
    let spots_sys = apply_mask(flat, &spots)?;
    let shifted_sys = apply_mask(flat, &shifted)?;
    let enhancement = enhancement_factor(&focused_sys, flat, &beam, target, 0..grid.n_points())?;

    let entangled = build_state(&d.state_params(d.entangled_k)?, &grid)?;
    let modes = schmidt_decompose(&entangled)?.truncated(MODE_WEIGHT_KEPT);
    let mut intensities = Vec::new();
    for (name, sys) in [
        ("coherent_flat", flat),
        ("coherent_focus", &focused_sys),
        ("coherent_spots", &spots_sys),
        ("coherent_shifted", &shifted_sys),
    ] {
        intensities.push((name.to_string(), coherent_intensity(&beam, sys)?.into_values()));
    }
    for (name, sys) in [("entangled_flat", flat), ("entangled_corrected", &focused_sys)] {
        intensities.push((name.to_string(), intensity_from_modes(&modes, sys)?.into_values()));
    }

    let bare = compose_system(&PhaseScreen::zero(grid), &SlmMask::flat(d.geometry()?), &grid)?;
    let bare_corrected = apply_mask(&bare, &focus)?;
    let systems = [flat, &focused_sys, &shifted_sys, &bare, &bare_corrected];
    let mut minus = Vec::with_capacity(CASES.len());
    let mut sum = Vec::with_capacity(CASES.len());
    let mut cases = Vec::with_capacity(CASES.len());
    for (name, sys) in CASES.iter().zip(systems) {
        let (m, s) = correlations(sys, &entangled)?;
        cases.push(CaseSummary {
            name: name.to_string(),
            minus: PeakSummary::of(&m, d.peak_halfwidth)?,
            sum: PeakSummary::of(&s, d.peak_halfwidth)?,
        });
        minus.push(m);
        sum.push(s);
    }

    let summary = DemoSummary {
        screen_seed: ch.screen_seed,
        probe_k: d.probe_k,
        entangled_k: d.entangled_k,
        target,
        spot_targets,
        shift_region: [a, b],
        tm_rows: tm.rows(),
        tm_cols: tm.cols(),
        enhancement,
        peak_halfwidth: d.peak_halfwidth,
        cases,
    };
    Ok(DemoResult {
        grid,
        tm,
        masks: vec![
            ("focus".into(), focus),
            ("spots".into(), spots),
            ("shifted".into(), shifted),
        ],
        intensities,
        minus,
        sum,
        summary,
    })
}

/// Beam profile used for the coherent panels, exposed for tests.
pub fn demo_beam(cfg: &ExperimentConfig) -> Result<Vec<Complex64>> {
    let env = cfg.demo.envelope_width();
    Ok(coherent_field(&cfg.demo.grid()?, &GaussianStateParams::new(env, env)?))
}
