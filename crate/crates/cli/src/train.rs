//! `train`: stage one, stage two or both, with checkpoints per stage and a
//! line-delimited loss log.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use portrait_core::losses::Stage;
use portrait_core::toyworld::{load_dataset, ToyEstimator};
use portrait_core::training::{
    read_loss_log, sample_auxiliary, select_mode, JsonlLog, LossSink, StageTwoData, StageTwoNets, TrainMode, TrainState,
};
use portrait_core::types::VideoDataset;

use crate::config::RunConfig;
use crate::{output_dir, Failure};

pub const CONFIG_FILE: &str = "config.toml";
pub const LOG_FILE: &str = "loss.jsonl";
pub const STAGE1_FILE: &str = "stage1.ptck";
pub const STAGE2_FILE: &str = "stage2.ptck";
pub const LATEST_FILE: &str = "latest.ptck";
pub const PLAN_FILE: &str = "stage2_plan.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    All,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ModeArg {
    Online,
    Offline,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = StageArg::All)]
    stage: StageArg,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Auxiliary videos drawn from the pool for stage two.
    #[arg(long)]
    k: Option<usize>,
    /// Performing dataset manifest.
    #[arg(long)]
    performing: Option<PathBuf>,
    /// Auxiliary pool manifests; replaces the configured pool.
    #[arg(long = "aux")]
    auxiliary: Vec<PathBuf>,
    /// Driven dataset manifest; required by offline mode.
    #[arg(long)]
    driven: Option<PathBuf>,
    /// Toy parameter estimator checkpoint for stage two.
    #[arg(long)]
    estimator: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    stage1_iters: Option<u64>,
    #[arg(long)]
    stage2_iters: Option<u64>,
    /// Save the running state every N iterations.
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Continue from the last periodic checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
}

impl Args {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        let p = &mut cfg.paths;
        if self.performing.is_some() {
            p.performing.clone_from(&self.performing);
        }
        if !self.auxiliary.is_empty() {
            p.auxiliary.clone_from(&self.auxiliary);
        }
        if self.driven.is_some() {
            p.driven.clone_from(&self.driven);
        }
        if self.estimator.is_some() {
            p.estimator.clone_from(&self.estimator);
        }
        if self.out.is_some() {
            p.out.clone_from(&self.out);
        }
        let t = &mut cfg.train;
        if let Some(m) = self.mode {
            t.mode = match m {
                ModeArg::Online => TrainMode::Online,
                ModeArg::Offline => TrainMode::Offline,
            };
        }
        if let Some(k) = self.k {
            t.aux_video_count = k;
        }
        if let Some(s) = self.seed {
            t.seed = s;
        }
        if let Some(n) = self.stage1_iters {
            t.stage1.iters = n;
        }
        if let Some(n) = self.stage2_iters {
            t.stage2.iters = n;
        }
        t.validate().map_err(Failure::from)?;
        Ok(cfg)
    }
}

fn load(path: &Option<PathBuf>, what: &str) -> Result<VideoDataset> {
    let path = path.as_ref().ok_or_else(|| Failure::config(format!("no {what} dataset: pass --{what} or set it in the config")))?;
    Ok(load_dataset(path).map_err(Failure::from).with_context(|| format!("loading {what} dataset"))?)
}

/// Drop log records written after the checkpoint position being resumed.
fn truncate_log(path: &Path, stage: Stage, iteration: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let keep: Vec<String> = read_loss_log(path)?
        .into_iter()
        .filter(|r| r.stage < stage.number() || (r.stage == stage.number() && r.iteration < iteration))
        .map(|r| serde_json::to_string(&r))
        .collect::<Result<_, _>>()?;
    let text: String = keep.iter().map(|l| format!("{l}\n")).collect();
    fs::write(path, text).with_context(|| format!("rewriting {}", path.display()))
}

struct Run<'a> {
    out: &'a Path,
    every: Option<u64>,
    log: JsonlLog,
}

impl Run<'_> {
    fn after_step(&mut self, state: &TrainState) -> Result<()> {
        if let Some(n) = self.every {
            if n > 0 && state.iteration % n == 0 {
                self.log.flush()?;
                state.save(&self.out.join(LATEST_FILE))?;
            }
        }
        Ok(())
    }
}

pub fn run(a: Args) -> Result<()> {
    let cfg = a.resolve()?;
    let out = output_dir(cfg.paths.out.clone())?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    cfg.save(&out.join(CONFIG_FILE))?;
    let performing = load(&cfg.paths.performing, "performing")?;
    let log_path = out.join(LOG_FILE);

    let resumed = if a.resume && out.join(LATEST_FILE).exists() {
        let s = TrainState::load(&out.join(LATEST_FILE))?;
        truncate_log(&log_path, s.stage, s.iteration)?;
        log::info!("resuming stage {} at iteration {}", s.stage.number(), s.iteration);
        Some(s)
    } else {
        None
    };
    let mut state = match (a.stage, resumed) {
        (_, Some(s)) => Some(s),
        (StageArg::Two, None) => None,
        (_, None) => {
            if log_path.exists() {
                fs::remove_file(&log_path).with_context(|| format!("removing {}", log_path.display()))?;
            }
            let mut s = TrainState::new(cfg.train.clone())?;
            s.begin_stage1(&performing)?;
            Some(s)
        }
    };
    let mut run = Run { out: &out, every: a.checkpoint_every, log: JsonlLog::append(&log_path)? };

    if a.stage != StageArg::Two {
        let s = state.as_mut().expect("stage one state");
        while s.stage == Stage::One && s.iteration < s.config.stage1.iters {
            let r = s.stage1_step(&performing)?;
            run.log.record(&r)?;
            run.after_step(s)?;
        }
        run.log.flush()?;
        if s.stage == Stage::One {
            s.save(&out.join(STAGE1_FILE))?;
            log::info!("stage one finished after {} iterations", s.iteration);
        }
    }
    if a.stage == StageArg::One {
        return Ok(());
    }

    let mut state = match state {
        Some(s) => s,
        None => {
            let path = out.join(STAGE1_FILE);
            if !path.exists() {
                return Err(Failure::state(format!("stage two needs a stage-one checkpoint at {}", path.display())).into());
            }
            TrainState::load(&path)?
        }
    };
    if state.config.generator != cfg.train.generator || state.config.discriminator != cfg.train.discriminator {
        return Err(Failure::config("the stage-one checkpoint was trained with a different architecture").into());
    }
    let train = &cfg.train;
    let pool = cfg.paths.auxiliary.iter().map(|p| load(&Some(p.clone()), "aux")).collect::<Result<Vec<_>>>()?;
    let aux = sample_auxiliary(&pool, train.aux_video_count, train.seed).map_err(Failure::from)?;
    let auxiliary = match (train.mode, &cfg.paths.driven) {
        (TrainMode::Offline, None) => return Err(Failure::config("offline mode needs --driven").into()),
        (_, Some(_)) => select_mode(train, aux, &load(&cfg.paths.driven, "driven")?)?.auxiliary,
        (TrainMode::Online, None) => aux,
    };
    let estimator_path = cfg.paths.estimator.as_ref().ok_or_else(|| Failure::config("stage two needs --estimator"))?;
    let estimator = ToyEstimator::load(estimator_path)?;
    let features = train.feature_extractor()?;
    if state.stage == Stage::One {
        state.config.stage2 = train.stage2;
        state.config.weights_stage2 = train.weights_stage2;
        state.config.aux_video_count = train.aux_video_count;
        state.config.mode = train.mode;
        state.config.texture_weights = train.texture_weights;
        state.begin_stage2(&performing, &auxiliary)?;
    }
    let names: Vec<&str> = auxiliary.iter().map(VideoDataset::name).collect();
    let plan = serde_json::json!({ "mode": train.mode, "k": train.aux_video_count, "auxiliary": names });
    fs::write(out.join(PLAN_FILE), serde_json::to_string_pretty(&plan)?)?;
    let data = StageTwoData::new(&performing, &auxiliary, state.config.texture_weights)?;
    let nets = StageTwoNets { estimator: &estimator, features: &features };
    while state.iteration < state.config.stage2.iters {
        let r = state.stage2_step(&data, &nets)?;
        run.log.record(&r)?;
        run.after_step(&state)?;
    }
    run.log.flush()?;
    state.save(&out.join(STAGE2_FILE))?;
    log::info!("stage two finished after {} iterations", state.iteration);
    Ok(())
}
