//! `reenact`: one PNG per driven frame, named by the driven frame index.

use std::path::PathBuf;

use anyhow::Result;
use portrait_core::toyworld::{frame_file, load_dataset, write_image};
use portrait_core::training::{LatentPolicy, TrainState};
use portrait_core::types::DriveMode;
use portrait_core::Error as CoreError;

use crate::prepare::fresh_dir;
use crate::{output_dir, Failure};

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum PolicyArg {
    Zero,
    Mean,
    Lookup,
}

impl From<PolicyArg> for LatentPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Zero => LatentPolicy::Zero,
            PolicyArg::Mean => LatentPolicy::Mean,
            PolicyArg::Lookup => LatentPolicy::Lookup,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Driven dataset manifest.
    #[arg(long)]
    driven: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Latent code for frames without a stored one.
    #[arg(long, value_enum, default_value_t = PolicyArg::Zero)]
    policy: PolicyArg,
    #[arg(long)]
    force: bool,
}

pub fn run(a: Args) -> Result<()> {
    if !a.checkpoint.exists() {
        return Err(Failure::new(crate::Category::Io, format!("checkpoint {} does not exist", a.checkpoint.display())).into());
    }
    let state = TrainState::load(&a.checkpoint)?;
    let driven = load_dataset(&a.driven)?;
    if state.mode() == DriveMode::AudioDriven && !driven.has_audio() {
        return Err(CoreError::Mode { expected: DriveMode::AudioDriven, actual: DriveMode::VideoDriven }.into());
    }
    let out = output_dir(a.out)?;
    fresh_dir(&out, a.force)?;
    let images = state.infer_dataset(&driven, a.policy.into())?;
    for (frame, img) in driven.frames().iter().zip(&images) {
        write_image(&out.join(frame_file(frame.index)), img)?;
    }
    log::info!("wrote {} frames to {}", images.len(), out.display());
    Ok(())
}
