//! `vunwrap`: every pipeline stage from the command line.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vunwrap_core::segmentation::{fit_spline, ControlPoints};
use vunwrap_core::{Error, Result};
use vunwrap_pipeline::manifest::Staleness;
use vunwrap_pipeline::store::{read_json, write_json, write_png8, write_signed_png};
use vunwrap_pipeline::{Manifest, Pipeline, PipelineConfig, Stage};

#[derive(Debug, Parser)]
#[command(name = "vunwrap", version, about = "Simulate, reconstruct and virtually unwrap rolled-scroll phantoms")]
struct Cli {
    /// TOML configuration file; built-in defaults otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (noise, seed-point jitter, GA).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Override any config key, e.g. `--set geometry.num_angles=400`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the phantom and write one 16-bit frame per angle.
    Simulate,
    /// Find the rotation axis from opposite-frame differences.
    Calibrate,
    /// Filtered back-projection of every slice.
    Reconstruct,
    /// Fit (and optionally optimise) the spiral path on the reference slice.
    Segment,
    /// Texture, flatten and project the sheet.
    Unwrap,
    /// Every stage, seeding segmentation from the phantom's spiral.
    All,
    /// Print or write the default configuration.
    InitConfig { path: Option<PathBuf> },
    /// Write the red/green difference image of an opposite-frame pair.
    Diff {
        #[arg(long, default_value_t = 0)]
        pair: usize,
        /// Axis column; the recorded calibration or the frame centre by default.
        #[arg(long)]
        center: Option<f64>,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        tilt_deg: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Record a hand-picked axis as the calibration.
    AcceptCalibration {
        #[arg(long, allow_hyphen_values = true)]
        center: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        tilt_deg: f64,
    },
    /// Fit a smoothing spline through a control-point file.
    Fit {
        points: PathBuf,
        #[arg(long)]
        smoothing: Option<f64>,
        /// Output path file; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write reconstructed slice `z` as a normalised 8-bit PNG.
    ExportSlice {
        z: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check recorded artifacts against their hashes.
    Status,
}

fn config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    for kv in &cli.set {
        cfg.set(kv)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.output {
        cfg.output = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serialisable"));
}

fn run(cli: Cli) -> Result<()> {
    let stage = match &cli.command {
        Command::Simulate => Some(Stage::Simulate),
        Command::Calibrate => Some(Stage::Calibrate),
        Command::Reconstruct => Some(Stage::Reconstruct),
        Command::Segment => Some(Stage::Segment),
        Command::Unwrap => Some(Stage::Unwrap),
        Command::All => Some(Stage::All),
        _ => None,
    };
    if let Some(stage) = stage {
        let pipeline = Pipeline::new(config(&cli)?)?;
        let manifest = pipeline.run(stage)?;
        let shown: Vec<_> = match stage {
            Stage::All => Stage::ORDER.to_vec(),
            s => vec![s],
        };
        for s in shown {
            if let Some(rec) = manifest.get(s) {
                eprintln!("{s}: {:.2} s", rec.seconds);
                print_json(&serde_json::json!({ "stage": s, "summary": rec.summary }));
            }
        }
        return Ok(());
    }

    match &cli.command {
        Command::InitConfig { path } => {
            let text = config(&cli)?.to_toml()?;
            match path {
                Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e))?,
                None => print!("{text}"),
            }
        }
        Command::Diff {
            pair,
            center,
            tilt_deg,
            out,
        } => {
            let pipeline = Pipeline::new(config(&cli)?)?;
            let layout = pipeline.layout();
            let center = match center {
                Some(c) => *c,
                None if layout.calibration().exists() => layout.load_calibration()?.calibration.center_column,
                None => (layout.load_frames_meta()?.cols as f64 - 1.0) / 2.0,
            };
            let diff = pipeline.difference(*pair, center, tilt_deg.to_radians())?;
            write_signed_png(out, &diff.signed, diff.min.abs().max(diff.max.abs()))?;
            print_json(&serde_json::json!({
                "rows": diff.signed.rows(),
                "cols": diff.signed.cols(),
                "min": diff.min,
                "max": diff.max,
                "mean_abs": diff.mean_abs(),
            }));
        }
        Command::AcceptCalibration { center, tilt_deg } => {
            let pipeline = Pipeline::new(config(&cli)?)?;
            print_json(&pipeline.accept_calibration(*center, tilt_deg.to_radians())?);
        }
        Command::Fit { points, smoothing, out } => {
            let cfg = config(&cli)?;
            let cp: ControlPoints = read_json(points)?;
            let path = fit_spline(&cp, smoothing.unwrap_or(cfg.segment.smoothing))?;
            match out {
                Some(p) => write_json(p, &path)?,
                None => print_json(&path),
            }
        }
        Command::ExportSlice { z, out } => {
            let pipeline = Pipeline::new(config(&cli)?)?;
            let (slices, _) = pipeline.layout().load_volume()?;
            let slice = slices.get(*z).ok_or(Error::Range {
                what: "slice",
                index: *z,
                len: slices.len(),
            })?;
            let (img, range) = slice.image.normalized(1.0, 99.0, false);
            write_png8(out, &img)?;
            print_json(&range);
        }
        Command::Status => {
            let cfg = config(&cli)?;
            let manifest = Manifest::load(&cfg.output)?;
            let problems = manifest.verify(&cfg.output)?;
            for (stage, rec) in &manifest.stages {
                println!("{stage}: {} artifacts, {:.2} s", rec.outputs.len(), rec.seconds);
            }
            for p in &problems {
                match p {
                    Staleness::Missing { stage, path } => println!("{stage}: missing {path}"),
                    Staleness::Modified { stage, path } => println!("{stage}: modified {path}"),
                    Staleness::InputChanged { stage, path } => println!("{stage}: stale, input {path} changed"),
                }
            }
            if !problems.is_empty() {
                return Err(Error::Data(format!("{} stale artifact record(s)", problems.len())));
            }
        }
        _ => unreachable!("stage commands handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
