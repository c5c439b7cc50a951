//! `bench`: single-frame forward latency of a checkpoint's generator
//! architecture at several output resolutions. Informational only.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::Result;
use portrait_core::generator::GeneratorModel;
use portrait_core::training::TrainState;
use portrait_core::types::{DriveMode, FaceParams, AUDIO_DIM, LATENT_DIM};
use serde::Serialize;

use crate::Failure;

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Timed runs per resolution.
    #[arg(long, default_value_t = 100)]
    runs: usize,
    /// Untimed runs before timing starts.
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    /// Output resolutions.
    #[arg(long, value_delimiter = ',', default_values_t = [256, 512])]
    sizes: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub resolution: usize,
    pub runs: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub fps: f64,
    /// Whether the checkpoint's weights were used; otherwise the
    /// architecture is timed with fresh weights.
    pub trained_weights: bool,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) }
}

pub fn run(a: Args) -> Result<()> {
    if a.runs == 0 {
        return Err(Failure::config("--runs must be positive").into());
    }
    let state = TrainState::load(&a.checkpoint)?;
    let base = state.generator.config.clone();
    let params = match base.mode {
        DriveMode::VideoDriven => FaceParams::zeros(),
        DriveMode::AudioDriven => FaceParams::zeros().with_audio(vec![0.0; AUDIO_DIM])?,
    };
    let latent = vec![0.0; LATENT_DIM];
    let stdout = std::io::stdout();
    let mut stdout = stdout.lock();
    let mut rows = Vec::new();
    for &size in &a.sizes {
        let factor = 1 << base.upsample_blocks;
        if size % factor != 0 || size / factor < 2 {
            return Err(Failure::config(format!("resolution {size} is not reachable with {} upsampling blocks", base.upsample_blocks)).into());
        }
        let config = portrait_core::generator::GeneratorConfig { grid_size: size / factor, ..base.clone() };
        let mut model = GeneratorModel::new(config, 0)?;
        let trained = model.params.names().eq(state.generator.params.names())
            && model.params.iter().zip(state.generator.params.iter()).all(|((_, a), (_, b))| a.shape() == b.shape());
        if trained {
            model.params = state.generator.params.clone();
        }
        for _ in 0..a.warmup {
            model.generate(&params, &latent)?;
        }
        let mut ms: Vec<f64> = (0..a.runs)
            .map(|_| {
                let t = Instant::now();
                model.generate(&params, &latent).map(|_| t.elapsed().as_secs_f64() * 1e3)
            })
            .collect::<portrait_core::Result<_>>()?;
        ms.sort_by(f64::total_cmp);
        let mean_ms = ms.iter().sum::<f64>() / ms.len() as f64;
        let t = Timing { resolution: size, runs: a.runs, mean_ms, median_ms: median(&ms), fps: 1e3 / mean_ms, trained_weights: trained };
        writeln!(stdout, "{}", serde_json::to_string(&t)?)?;
        rows.push(t);
    }
    writeln!(stdout, "{:>10} {:>10} {:>10} {:>8}", "resolution", "mean_ms", "median_ms", "fps")?;
    for t in &rows {
        writeln!(stdout, "{:>10} {:>10.2} {:>10.2} {:>8.2}", t.resolution, t.mean_ms, t.median_ms, t.fps)?;
    }
    Ok(())
}
