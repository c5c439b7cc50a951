//! Toy benchmark shared by the command-line tool and the acceptance suite:
//! a performing video of one toy identity, a pool of wide-ranging auxiliary
//! parameter videos, and a driven video whose parameters lie away from the
//! performing set but whose ground-truth renders are known.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoding::param_distance;
use crate::error::Result;
use crate::losses::Stage;
use crate::metrics::{fid, l1_metric};
use crate::toyworld::{
    fit_toy_embedder, fit_toy_estimator, make_param_video, make_toy_video, EmbedderFitConfig, EstimatorFitConfig,
    ToyEmbedder, ToyEstimator, ToyIdentity, TrajectoryConfig,
};
use crate::training::{
    sample_auxiliary, select_mode, LossSink, StageTwoData, StageTwoNets, TrainConfig, TrainMode, TrainState,
};
use crate::types::{DatasetRole, Image, ParamWeights, VideoDataset};
use crate::training::LatentPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub identity_seed: u64,
    pub size: usize,
    pub performing_frames: usize,
    pub performing: TrajectoryConfig,
    pub aux_videos: usize,
    pub aux_frames: usize,
    pub aux: TrajectoryConfig,
    pub driven_frames: usize,
    pub driven: TrajectoryConfig,
    /// Identities the evaluation embedder learns to separate, besides the
    /// performing one.
    pub embedder_identities: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            identity_seed: 1,
            size: 64,
            performing_frames: 64,
            performing: TrajectoryConfig { spread: 0.3, offset: 1.0 },
            aux_videos: 3,
            aux_frames: 64,
            aux: TrajectoryConfig { spread: 0.85, offset: 1.0 },
            driven_frames: 128,
            driven: TrajectoryConfig { spread: 0.5, offset: 1.0 },
            embedder_identities: 4,
        }
    }
}

/// Datasets of one benchmark draw.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyBenchmark {
    pub identity: ToyIdentity,
    pub performing: VideoDataset,
    pub aux_pool: Vec<VideoDataset>,
    /// Driven parameters with ground-truth renders of the performing identity.
    pub driven: VideoDataset,
}

impl ToyBenchmark {
    /// Trajectories are drawn from `seed`; the identity is fixed by the config.
    pub fn build(cfg: &BenchmarkConfig, seed: u64) -> Result<Self> {
        let identity = ToyIdentity::new(cfg.identity_seed);
        let base = seed.wrapping_mul(1000);
        let performing =
            make_toy_video("performing", DatasetRole::Performing, &identity, cfg.performing_frames, base + 1, cfg.size, cfg.performing)?;
        let aux_pool = (0..cfg.aux_videos)
            .map(|i| make_param_video(&format!("aux{i}"), DatasetRole::Auxiliary, cfg.aux_frames, base + 10 + i as u64, cfg.aux))
            .collect::<Result<Vec<_>>>()?;
        let driven = make_toy_video("driven", DatasetRole::Driven, &identity, cfg.driven_frames, base + 2, cfg.size, cfg.driven)?;
        Ok(Self { identity, performing, aux_pool, driven })
    }

    /// Mean distance from driven frames to their nearest performing frame,
    /// and the mean nearest-neighbour distance within the performing set.
    pub fn novelty(&self) -> Result<(f64, f64)> {
        let w = ParamWeights::UNIT;
        let nearest = |p, skip: Option<usize>| -> Result<f64> {
            let mut best = f64::INFINITY;
            for (i, q) in self.performing.params().enumerate() {
                if Some(i) != skip {
                    best = best.min(param_distance(p, q, w)?);
                }
            }
            Ok(best)
        };
        let mut driven = 0.0;
        for p in self.driven.params() {
            driven += nearest(p, None)?;
        }
        let mut inner = 0.0;
        for (i, p) in self.performing.params().enumerate() {
            inner += nearest(p, Some(i))?;
        }
        Ok((driven / self.driven.len() as f64, inner / self.performing.len() as f64))
    }
}

/// Frozen evaluation and training networks of the toy world.
pub struct ToyNets {
    pub estimator: ToyEstimator,
    pub embedder: ToyEmbedder,
}

fn cache_file(dir: &Path, stem: &str, key: &impl Serialize) -> PathBuf {
    use sha2::Digest;
    let text = serde_json::to_string(key).expect("serializable key");
    let hash = sha2::Sha256::digest(text.as_bytes());
    let short: String = hash.iter().take(6).map(|b| format!("{b:02x}")).collect();
    dir.join(format!("{stem}-{short}.ptck"))
}

/// Estimator for `identity_seed`, fitted once and cached under `dir`.
pub fn cached_estimator(dir: &Path, identity_seed: u64, fit: &EstimatorFitConfig) -> Result<ToyEstimator> {
    const SAMPLES: usize = 96_000;
    let path = cache_file(dir, "estimator", &(identity_seed, SAMPLES, fit));
    if let Ok(e) = ToyEstimator::load(&path) {
        return Ok(e);
    }
    let (est, report) = fit_toy_estimator(&ToyIdentity::new(identity_seed), SAMPLES, identity_seed ^ 0x5eed, fit)?;
    log::info!("fitted estimator: validation error {:.4}", report.mean_abs_error);
    est.save(&path)?;
    Ok(est)
}

/// Embedder over the benchmark identity and `cfg.embedder_identities` others,
/// fitted once and cached under `dir`.
pub fn cached_embedder(dir: &Path, cfg: &BenchmarkConfig, fit: &EmbedderFitConfig) -> Result<ToyEmbedder> {
    let seeds: Vec<u64> = std::iter::once(cfg.identity_seed).chain((0..cfg.embedder_identities as u64).map(|i| 100 + i)).collect();
    let path = cache_file(dir, "embedder", &(&seeds, fit));
    if let Ok(e) = ToyEmbedder::load(&path) {
        return Ok(e);
    }
    let ids: Vec<ToyIdentity> = seeds.iter().map(|&s| ToyIdentity::new(s)).collect();
    let (emb, loss) = fit_toy_embedder(&ids, 0xe3b, fit)?;
    log::info!("fitted embedder: final loss {loss:.4}");
    emb.save(&path)?;
    Ok(emb)
}

pub fn toy_nets(dir: &Path, cfg: &BenchmarkConfig) -> Result<ToyNets> {
    Ok(ToyNets {
        estimator: cached_estimator(dir, cfg.identity_seed, &EstimatorFitConfig::default())?,
        embedder: cached_embedder(dir, cfg, &EmbedderFitConfig::default())?,
    })
}

/// Held-out quality of a model on the driven set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldOutScore {
    pub l1: f64,
    pub fid: f64,
}

/// Generate the driven frames and compare them with their ground truth.
pub fn score_driven(state: &TrainState, driven: &VideoDataset, embedder: &ToyEmbedder) -> Result<HeldOutScore> {
    let generated = state.infer_dataset(driven, LatentPolicy::Zero)?;
    let truth: Vec<&Image> = driven.frames().iter().filter_map(|f| f.image.as_ref()).collect();
    let gen: Vec<&Image> = generated.iter().collect();
    Ok(HeldOutScore { l1: l1_metric(&gen, &truth)?, fid: fid(&gen, &truth, embedder)? })
}

/// Stage-two variant of a generalization trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub k: usize,
    pub mode: TrainMode,
}

/// Scores of one seed's trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub stage1: HeldOutScore,
    pub variants: Vec<(Variant, HeldOutScore)>,
}

impl TrialResult {
    pub fn score(&self, k: usize, mode: TrainMode) -> Option<HeldOutScore> {
        self.variants.iter().find(|(v, _)| v.k == k && v.mode == mode).map(|(_, s)| *s)
    }
}

/// Train stage one once, then every stage-two variant from that state, and
/// score each model on the driven set.
pub fn run_trial(
    bench: &ToyBenchmark,
    nets: &ToyNets,
    cfg: &TrainConfig,
    variants: &[Variant],
    seed: u64,
    log: &mut dyn LossSink,
) -> Result<TrialResult> {
    let cfg = TrainConfig { seed, ..cfg.clone() };
    let mut stage1 = TrainState::new(cfg.clone())?;
    stage1.begin_stage1(&bench.performing)?;
    stage1.run_stage1(&bench.performing, log)?;
    let stage1_score = score_driven(&stage1, &bench.driven, &nets.embedder)?;
    log::info!("seed {seed}: stage one held-out {stage1_score:?}");
    let features = cfg.feature_extractor()?;
    let mut results = Vec::new();
    for &v in variants {
        let mut state = stage1.clone();
        state.config.aux_video_count = v.k;
        state.config.mode = v.mode;
        let aux = sample_auxiliary(&bench.aux_pool, v.k, seed)?;
        let plan = select_mode(&state.config, aux, &bench.driven)?;
        state.begin_stage2(&bench.performing, &plan.auxiliary)?;
        let data = StageTwoData::new(&bench.performing, &plan.auxiliary, state.config.texture_weights)?;
        let two = StageTwoNets { estimator: &nets.estimator, features: &features };
        state.run_stage2(&data, &two, log)?;
        debug_assert_eq!(state.stage, Stage::Two);
        let score = score_driven(&state, &bench.driven, &nets.embedder)?;
        log::info!("seed {seed}: {v:?} held-out {score:?}");
        results.push((v, score));
    }
    Ok(TrialResult { seed, stage1: stage1_score, variants: results })
}

/// Orderings checked on one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrendVerdict {
    /// Stage two (largest online k) beats stage one on held-out L1 and FID.
    pub stage_two_beats_stage_one: bool,
    /// Offline FID is at most online FID at the same k.
    pub offline_not_worse: bool,
    /// FID does not increase with k.
    pub fid_non_increasing_in_k: bool,
}

impl TrendVerdict {
    pub fn all(&self) -> bool {
        self.stage_two_beats_stage_one && self.offline_not_worse && self.fid_non_increasing_in_k
    }

    pub fn any(&self) -> bool {
        self.stage_two_beats_stage_one || self.offline_not_worse || self.fid_non_increasing_in_k
    }
}

/// Evaluate the orderings of a trial with online variants `k = 0..=k_max`
/// and an offline variant at `k_max`.
pub fn verdict(t: &TrialResult, k_max: usize) -> Option<TrendVerdict> {
    let online: Vec<HeldOutScore> = (0..=k_max).map(|k| t.score(k, TrainMode::Online)).collect::<Option<_>>()?;
    let best = online[k_max];
    let offline = t.score(k_max, TrainMode::Offline)?;
    Some(TrendVerdict {
        stage_two_beats_stage_one: best.l1 < t.stage1.l1 && best.fid < t.stage1.fid,
        offline_not_worse: offline.fid <= best.fid,
        fid_non_increasing_in_k: online.windows(2).all(|w| w[1].fid <= w[0].fid),
    })
}

/// Variants of the standard trial: online `k = 0..=k_max` plus offline at `k_max`.
pub fn standard_variants(k_max: usize) -> Vec<Variant> {
    let mut v: Vec<Variant> = (0..=k_max).map(|k| Variant { k, mode: TrainMode::Online }).collect();
    v.push(Variant { k: k_max, mode: TrainMode::Offline });
    v
}
