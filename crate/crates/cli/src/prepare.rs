//! `prepare`: toy datasets, ingested tracker output, a full toy benchmark, or
//! the frozen toy estimator and embedder.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use portrait_core::experiments::{BenchmarkConfig, ToyBenchmark};
use portrait_core::toyworld::{
    fit_toy_embedder, fit_toy_estimator, ingest_dataset, make_param_video, make_toy_video, save_dataset, with_toy_audio,
    EmbedderFitConfig, EstimatorFitConfig, ToyIdentity, TrajectoryConfig,
};
use portrait_core::types::DatasetRole;

use crate::{output_dir, Failure};

pub const ESTIMATOR_FILE: &str = "estimator.ptck";
pub const EMBEDDER_FILE: &str = "embedder.ptck";
pub const BENCHMARK_FILE: &str = "benchmark.json";

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum RoleArg {
    Performing,
    Auxiliary,
    Driven,
}

impl From<RoleArg> for DatasetRole {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::Performing => DatasetRole::Performing,
            RoleArg::Auxiliary => DatasetRole::Auxiliary,
            RoleArg::Driven => DatasetRole::Driven,
        }
    }
}

#[derive(Debug, clap::Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["toy", "ingest", "benchmark", "nets"])))]
pub struct Args {
    /// Render a toy video.
    #[arg(long)]
    toy: bool,
    /// Reference an external parameter file (one JSON record per line).
    #[arg(long, value_name = "PARAMS")]
    ingest: Option<PathBuf>,
    /// Image directory for `--ingest`, frames named `<index:06>.png`.
    #[arg(long, requires = "ingest")]
    images: Option<PathBuf>,
    /// Write performing, auxiliary and driven datasets of the toy benchmark.
    #[arg(long)]
    benchmark: bool,
    /// Fit the toy parameter estimator and identity embedder.
    #[arg(long)]
    nets: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace a non-empty output directory.
    #[arg(long)]
    force: bool,
    #[arg(long, default_value_t = 64)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed of the toy identity.
    #[arg(long, default_value_t = 1)]
    identity: u64,
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Trajectory excursion as a fraction of each parameter's range.
    #[arg(long, default_value_t = 0.35)]
    spread: f64,
    #[arg(long, value_enum, default_value_t = RoleArg::Performing)]
    role: RoleArg,
    /// Dataset name; defaults to the role.
    #[arg(long)]
    name: Option<String>,
    /// Write parameters without rendered frames.
    #[arg(long)]
    params_only: bool,
    /// Attach toy audio windows.
    #[arg(long)]
    audio: bool,
    /// Renders streamed through estimator training.
    #[arg(long, default_value_t = 96_000)]
    estimator_samples: usize,
    /// Largest accepted estimator validation error.
    #[arg(long)]
    estimator_threshold: Option<f64>,
}

/// Create `dir`, refusing to reuse a non-empty one unless `force` is set.
pub fn fresh_dir(dir: &Path, force: bool) -> Result<()> {
    let non_empty = dir.is_dir() && fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))?.next().is_some();
    if non_empty {
        if !force {
            return Err(Failure::state(format!("{} is not empty; pass --force to replace it", dir.display())).into());
        }
        fs::remove_dir_all(dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn run(a: Args) -> Result<()> {
    let out = output_dir(a.out.clone())?;
    fresh_dir(&out, a.force)?;
    let role: DatasetRole = a.role.into();
    let name = a.name.clone().unwrap_or_else(|| serde_json::to_value(role).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default());
    if a.toy {
        let traj = TrajectoryConfig { spread: a.spread, ..TrajectoryConfig::default() };
        let mut ds = if a.params_only {
            make_param_video(&name, role, a.frames, a.seed, traj)?
        } else {
            make_toy_video(&name, role, &ToyIdentity::new(a.identity), a.frames, a.seed, a.size, traj)?
        };
        if a.audio {
            ds = with_toy_audio(&ds)?;
        }
        save_dataset(&ds, &out)?;
        log::info!("wrote {} frames of `{name}` to {}", ds.len(), out.display());
    } else if let Some(params) = &a.ingest {
        let (m, _) = ingest_dataset(&name, role, params, a.images.as_deref(), &out)?;
        log::info!("ingested {} frames of `{name}` into {}", m.frames, out.display());
    } else if a.benchmark {
        let cfg = BenchmarkConfig { identity_seed: a.identity, size: a.size, ..BenchmarkConfig::default() };
        let bench = ToyBenchmark::build(&cfg, a.seed)?;
        save_dataset(&bench.performing, &out.join("performing"))?;
        for (i, aux) in bench.aux_pool.iter().enumerate() {
            save_dataset(aux, &out.join(format!("aux{i}")))?;
        }
        save_dataset(&bench.driven, &out.join("driven"))?;
        let meta = serde_json::json!({ "seed": a.seed, "config": cfg });
        fs::write(out.join(BENCHMARK_FILE), serde_json::to_string_pretty(&meta)?)?;
        log::info!("wrote toy benchmark (seed {}) to {}", a.seed, out.display());
    } else {
        let identity = ToyIdentity::new(a.identity);
        let mut fit = EstimatorFitConfig { size: a.size, ..EstimatorFitConfig::default() };
        if let Some(t) = a.estimator_threshold {
            fit.threshold = t;
        }
        let (est, report) = fit_toy_estimator(&identity, a.estimator_samples, a.seed ^ 0x5eed, &fit)?;
        est.save(&out.join(ESTIMATOR_FILE))?;
        log::info!("estimator validation error {:.4}", report.mean_abs_error);
        let others = (0..BenchmarkConfig::default().embedder_identities as u64).map(|i| ToyIdentity::new(100 + i));
        let ids: Vec<ToyIdentity> = std::iter::once(identity).chain(others).collect();
        let (emb, loss) = fit_toy_embedder(&ids, a.seed ^ 0xe3b, &EmbedderFitConfig { size: a.size, ..EmbedderFitConfig::default() })?;
        emb.save(&out.join(EMBEDDER_FILE))?;
        log::info!("embedder final loss {loss:.4}");
    }
    Ok(())
}
