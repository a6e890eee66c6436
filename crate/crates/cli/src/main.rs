use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tpshape::experiments::demo::{measure_demo_tm, run_demo};
use tpshape::experiments::frames::run_frames;
use tpshape::experiments::sweep::{sweep_contrast, sweep_enhancement};
use tpshape::experiments::{configure_threads, write_files, ExperimentConfig};
use tpshape::io::save_tm;
use tpshape::{Error, Result};

#[derive(Parser)]
#[command(name = "tpshape", version, about = "Wavefront shaping of entangled photon pairs through scattering media")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Speckle contrast of the reduced intensity versus Schmidt number.
    SweepContrast(Common),
    /// Sequential-optimization enhancement versus Schmidt number.
    SweepEnhancement(Common),
    /// Measure the channel with a probe state and correct an entangled state.
    DemoCorrection(Common),
    /// Measure the demo transmission matrix and write it to a file.
    Tm {
        #[command(flatten)]
        common: Common,
        /// Matrix file; `<out>/tm.bin` if absent.
        #[arg(long)]
        save: Option<PathBuf>,
    },
    /// Simulate photon-counting frames and estimate G² from them.
    G2Frames(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Comma-separated 1D Schmidt numbers for the sweeps.
    #[arg(long, value_delimiter = ',')]
    k_values: Option<Vec<f64>>,
    /// Repeats per Schmidt number.
    #[arg(long)]
    repeats: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.run.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.run.out_dir = out.clone();
        }
        if let Some(t) = self.threads {
            cfg.run.threads = Some(t);
        }
        if let Some(k) = &self.k_values {
            cfg.state.set_k_values(k.clone())?;
        }
        if let Some(r) = self.repeats {
            cfg.run.repeats = r;
        }
        cfg.validate()?;
        configure_threads(cfg.run.threads);
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SweepContrast(c) => {
            let cfg = c.load()?;
            let result = sweep_contrast(&cfg)?;
            write_files(&cfg.run.out_dir, &result.files())?;
            for a in &result.aggregates {
                println!("K={} contrast={:.4}±{:.4} normalized={:.4}", a.k_1d, a.mean, a.std, a.mean_normalized);
            }
        }
        Command::SweepEnhancement(c) => {
            let cfg = c.load()?;
            let result = sweep_enhancement(&cfg)?;
            write_files(&cfg.run.out_dir, &result.files())?;
            for a in &result.aggregates {
                println!("K={} eta={:.3}±{:.3} normalized={:.4}", a.k_1d, a.mean, a.std, a.mean_normalized);
            }
        }
        Command::DemoCorrection(c) => {
            let cfg = c.load()?;
            let result = run_demo(&cfg)?;
            write_files(&cfg.run.out_dir, &result.files()?)?;
            for case in &result.summary.cases {
                let metric = case
                    .minus
                    .peak_metric
                    .map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
                println!(
                    "{}: peak_metric={metric} peak_fraction={:.4}",
                    case.name, case.minus.peak_fraction
                );
            }
        }
        Command::Tm { common, save } => {
            let cfg = common.load()?;
            let tm = measure_demo_tm(&cfg)?;
            let path = save.unwrap_or_else(|| cfg.run.out_dir.join("tm.bin"));
            if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            save_tm(&path, &tm)?;
            println!("{} x {} matrix written to {}", tm.rows(), tm.cols(), path.display());
        }
        Command::G2Frames(c) => {
            let cfg = c.load()?;
            let result = run_frames(&cfg)?;
            result.save_stack(&cfg.run.out_dir)?;
            write_files(&cfg.run.out_dir, &result.text_files(cfg.frames.denoise_cutoff)?)?;
            println!(
                "{} frames, scale={:.4e}, relative L2={:.4}",
                result.summary.n_frames, result.summary.scale, result.summary.relative_l2
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
