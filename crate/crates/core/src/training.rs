//! Two-stage training.
//!
//! Stage one reconstructs the performing video with the generator and its
//! per-frame latent codes. Stage two adds auxiliary parameter sequences:
//! every batch mixes performing frames (all terms, including reconstruction)
//! with auxiliary frames (perceptual against the nearest performing frame,
//! consistency, adversarial and velocity terms) and alternates discriminator
//! and generator updates.
//!
//! Each iteration draws its randomness from a generator seeded by
//! `(seed, stage, iteration)`, so a run resumed from a checkpoint replays the
//! uninterrupted run exactly.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use portrait_autograd::{concat0, Adam, AdamConfig, Graph, ParamStore, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioEncoder, AudioEncoderConfig};
use crate::checkpoint::Archive;
use crate::discriminator::{DiscriminatorConfig, DiscriminatorModel};
use crate::error::{Error, Result};
use crate::generator::{GeneratorConfig, GeneratorModel};
use crate::losses::{
    coarse_target, consistency_loss, discriminator_loss, generator_adversarial_loss, perceptual_loss,
    reconstruction_loss, total_generator_loss, velocity_loss, FeatureExtractor, LossComponents, LossRecord,
    LossWeights, ParamEstimator, RandomConvFeatures, Stage,
};
use crate::nn::Bind;
use crate::toyworld::nearest_texture;
use crate::types::{
    AudioWindow, DriveMode, FaceParams, Frame, Image, LatentTable, ParamSpace, ParamWeights, SpaceLabel,
    VideoDataset, LATENT_DIM, PARAM_DIM,
};

/// Whether driven parameters join the auxiliary pool before stage two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Online,
    Offline,
}

/// Latent code used for frames without a stored code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentPolicy {
    #[default]
    Zero,
    Mean,
    /// Require a stored code.
    Lookup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage1Config {
    pub iters: u64,
    pub batch: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage2Config {
    pub iters: u64,
    pub batch: usize,
    pub lr_g: f64,
    pub lr_d: f64,
}

/// Frozen random-convolution features used by the perceptual term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerceptualConfig {
    pub seed: u64,
    pub layer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    #[serde(default = "stage_one_weights")]
    pub weights_stage1: LossWeights,
    #[serde(default = "stage_two_weights")]
    pub weights_stage2: LossWeights,
    /// Number of auxiliary videos drawn from the pool for stage two.
    pub aux_video_count: usize,
    pub mode: TrainMode,
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    #[serde(default)]
    pub audio_encoder: AudioEncoderConfig,
    pub perceptual: PerceptualConfig,
    /// Weights of the nearest-frame search for auxiliary textures.
    #[serde(default)]
    pub texture_weights: ParamWeights,
}

fn stage_one_weights() -> LossWeights {
    LossWeights::STAGE_ONE
}

fn stage_two_weights() -> LossWeights {
    LossWeights::STAGE_TWO
}

impl TrainConfig {
    /// Full-size schedule: 100k iterations per stage on 256×256 frames.
    pub fn full_size(mode: DriveMode) -> Self {
        Self {
            stage1: Stage1Config { iters: 100_000, batch: 16, lr: 5e-4 },
            stage2: Stage2Config { iters: 100_000, batch: 8, lr_g: 1e-4, lr_d: 4e-4 },
            weights_stage1: LossWeights::STAGE_ONE,
            weights_stage2: LossWeights::STAGE_TWO,
            aux_video_count: 3,
            mode: TrainMode::Online,
            seed: 0,
            generator: GeneratorConfig::full_size(mode),
            discriminator: DiscriminatorConfig::full_size(),
            audio_encoder: AudioEncoderConfig::default(),
            perceptual: PerceptualConfig { seed: 17, layer: 2 },
            texture_weights: ParamWeights::TEXTURE,
        }
    }

    /// Laptop-sized schedule on 64×64 frames from a 16×16 grid.
    pub fn desk(mode: DriveMode) -> Self {
        let generator = GeneratorConfig::desk(mode);
        let discriminator = DiscriminatorConfig::desk(generator.output_size());
        Self {
            stage1: Stage1Config { iters: 5000, batch: 4, lr: 5e-4 },
            stage2: Stage2Config { iters: 1000, batch: 4, lr_g: 1e-4, lr_d: 4e-4 },
            generator,
            discriminator,
            ..Self::full_size(mode)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.weights_stage1.validate()?;
        self.weights_stage2.validate()?;
        if self.discriminator.input_size != self.generator.output_size() {
            return Err(Error::Config(format!(
                "discriminator input {} differs from generator output {}",
                self.discriminator.input_size,
                self.generator.output_size()
            )));
        }
        if self.stage1.batch == 0 || self.stage2.batch == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        for lr in [self.stage1.lr, self.stage2.lr_g, self.stage2.lr_d] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Config(format!("learning rate {lr} must be positive")));
            }
        }
        if self.perceptual.layer > 2 {
            return Err(Error::Config(format!("perceptual layer {} out of range 0..=2", self.perceptual.layer)));
        }
        Ok(())
    }

    pub fn feature_extractor(&self) -> Result<RandomConvFeatures> {
        RandomConvFeatures::new(self.perceptual.seed, self.perceptual.layer)
    }
}

/// Generator-side optimizers: network weights, latent codes and the audio
/// encoder each keep their own moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizers {
    pub generator: Adam,
    pub latents: Adam,
    pub audio: Adam,
    pub discriminator: Adam,
}

impl Optimizers {
    fn new(lr_g: f64, lr_d: f64) -> Self {
        let g = Adam::new(AdamConfig::with_lr(lr_g));
        Self { generator: g.clone(), latents: g.clone(), audio: g, discriminator: Adam::new(AdamConfig::with_lr(lr_d)) }
    }

    fn all(&self) -> [(&'static str, &Adam); 4] {
        [("gen", &self.generator), ("lat", &self.latents), ("aud", &self.audio), ("disc", &self.discriminator)]
    }
}

/// Everything needed to continue or use a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub generator: GeneratorModel,
    pub discriminator: DiscriminatorModel,
    /// Present in audio-driven mode.
    pub audio: Option<AudioEncoder>,
    pub latents: LatentTable,
    pub optim: Optimizers,
    /// Stage the iteration counter refers to.
    pub stage: Stage,
    /// Completed iterations of `stage`.
    pub iteration: u64,
    /// Parameters seen in training so far.
    pub space: ParamSpace,
}

fn iteration_rng(seed: u64, stage: Stage, iteration: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8] = stage.number();
    bytes[16..24].copy_from_slice(&iteration.to_le_bytes());
    ChaCha8Rng::from_seed(bytes)
}

/// Temporal neighbour used by the velocity term.
fn partner(pos: usize, len: usize) -> usize {
    if pos + 1 < len { pos + 1 } else { pos.saturating_sub(1) }
}

fn image_of<'a>(dataset: &'a VideoDataset, frame: &'a Frame) -> Result<&'a Image> {
    frame.image.as_ref().ok_or_else(|| Error::Frame {
        dataset: dataset.name().to_string(),
        index: frame.index,
        reason: "frame has no image".into(),
    })
}

fn audio_of<'a>(dataset: &VideoDataset, frame: &'a Frame) -> Result<&'a AudioWindow> {
    frame.audio.as_ref().ok_or_else(|| Error::Frame {
        dataset: dataset.name().to_string(),
        index: frame.index,
        reason: "audio-driven training needs an audio window".into(),
    })
}

/// One generated sample of a batch.
struct Sample<'a> {
    dataset: &'a VideoDataset,
    pos: usize,
}

impl<'a> Sample<'a> {
    fn frame(&self) -> &'a Frame {
        &self.dataset.frames()[self.pos]
    }
}

/// Sink for per-iteration loss records.
pub trait LossSink {
    fn record(&mut self, record: &LossRecord) -> Result<()>;
}

impl LossSink for Vec<LossRecord> {
    fn record(&mut self, record: &LossRecord) -> Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

/// Discards records.
pub struct NoLog;

impl LossSink for NoLog {
    fn record(&mut self, _: &LossRecord) -> Result<()> {
        Ok(())
    }
}

/// Appends one JSON record per iteration to a file.
pub struct JsonlLog {
    path: std::path::PathBuf,
    out: BufWriter<fs::File>,
}

impl JsonlLog {
    /// Open `path` for appending, creating it if needed.
    pub fn append(path: &Path) -> Result<Self> {
        let file = fs::OpenOptions::new().create(true).append(true).open(path).map_err(Error::io(path))?;
        Ok(Self { path: path.to_path_buf(), out: BufWriter::new(file) })
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(Error::io(&self.path))
    }
}

impl LossSink for JsonlLog {
    fn record(&mut self, record: &LossRecord) -> Result<()> {
        let line = serde_json::to_string(record).map_err(|e| Error::format(&self.path, e))?;
        writeln!(self.out, "{line}").map_err(Error::io(&self.path))
    }
}

/// Read a loss log written by [`JsonlLog`].
pub fn read_loss_log(path: &Path) -> Result<Vec<LossRecord>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1))))
        .collect()
}

/// Frozen networks consulted by stage two.
pub struct StageTwoNets<'a> {
    pub estimator: &'a dyn ParamEstimator,
    pub features: &'a dyn FeatureExtractor,
}

/// Auxiliary data prepared for stage two, with each auxiliary frame's
/// nearest performing frame precomputed.
pub struct StageTwoData<'a> {
    pub performing: &'a VideoDataset,
    pub auxiliary: &'a [VideoDataset],
    /// Position of the nearest performing frame for each auxiliary frame.
    textures: Vec<Vec<usize>>,
}

impl<'a> StageTwoData<'a> {
    pub fn new(performing: &'a VideoDataset, auxiliary: &'a [VideoDataset], weights: ParamWeights) -> Result<Self> {
        let first = performing.first_index();
        let textures = auxiliary
            .iter()
            .map(|ds| {
                ds.frames()
                    .iter()
                    .map(|f| Ok(nearest_texture(&f.params, performing, weights)?.index - first))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { performing, auxiliary, textures })
    }

    fn aux_len(&self) -> usize {
        self.auxiliary.iter().map(VideoDataset::len).sum()
    }

    /// Dataset number and position of the `k`-th auxiliary frame overall.
    fn aux_at(&self, mut k: usize) -> (usize, usize) {
        for (d, ds) in self.auxiliary.iter().enumerate() {
            if k < ds.len() {
                return (d, k);
            }
            k -= ds.len();
        }
        unreachable!("auxiliary frame index in range")
    }
}

impl TrainState {
    /// Fresh models and empty latent table.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let generator = GeneratorModel::new(config.generator.clone(), config.seed)?;
        let discriminator = DiscriminatorModel::new(config.discriminator.clone(), config.seed ^ 0xd15c)?;
        let audio = match config.generator.mode {
            DriveMode::AudioDriven => Some(AudioEncoder::new(config.audio_encoder, config.seed ^ 0xa0d1)?),
            DriveMode::VideoDriven => None,
        };
        let optim = Optimizers::new(config.stage1.lr, config.stage2.lr_d);
        Ok(Self {
            config,
            generator,
            discriminator,
            audio,
            latents: LatentTable::new(),
            optim,
            stage: Stage::One,
            iteration: 0,
            space: ParamSpace::new(SpaceLabel::Performing, Vec::new()),
        })
    }

    pub fn mode(&self) -> DriveMode {
        self.config.generator.mode
    }

    fn check_dataset(&self, ds: &VideoDataset, needs_images: bool) -> Result<()> {
        if ds.is_empty() {
            return Err(Error::Value(format!("dataset `{}` is empty", ds.name())));
        }
        if needs_images {
            if let Some(f) = ds.frames().iter().find(|f| f.image.is_none()) {
                return Err(Error::Frame { dataset: ds.name().into(), index: f.index, reason: "frame has no image".into() });
            }
            let size = self.config.generator.output_size();
            if ds.resolution() != Some(size) {
                return Err(Error::Shape(format!(
                    "dataset `{}` has resolution {:?}, the generator produces {size}",
                    ds.name(),
                    ds.resolution()
                )));
            }
        }
        if self.mode() == DriveMode::AudioDriven {
            if let Some(f) = ds.frames().iter().find(|f| f.audio.is_none()) {
                audio_of(ds, f)?;
            }
        }
        Ok(())
    }

    /// Allocate latent codes for the performing video and reset stage one.
    pub fn begin_stage1(&mut self, performing: &VideoDataset) -> Result<()> {
        self.check_dataset(performing, true)?;
        self.latents.allocate(performing.name(), performing.first_index(), performing.len())?;
        self.space = ParamSpace::from_dataset(SpaceLabel::Performing, performing);
        self.stage = Stage::One;
        self.iteration = 0;
        self.optim = Optimizers::new(self.config.stage1.lr, self.config.stage2.lr_d);
        Ok(())
    }

    /// Allocate codes for the auxiliary videos, extend the parameter space and
    /// reset the optimizers to the stage-two learning rates.
    pub fn begin_stage2(&mut self, performing: &VideoDataset, auxiliary: &[VideoDataset]) -> Result<()> {
        if self.stage != Stage::One || self.iteration < self.config.stage1.iters {
            return Err(Error::Config(format!(
                "stage two needs a finished stage one ({} of {} iterations done)",
                if self.stage == Stage::One { self.iteration } else { 0 },
                self.config.stage1.iters
            )));
        }
        if self.config.aux_video_count > 0 && auxiliary.is_empty() {
            return Err(Error::Config(format!(
                "{} auxiliary videos requested but none given",
                self.config.aux_video_count
            )));
        }
        self.check_dataset(performing, true)?;
        if !self.latents.contains(performing.name()) {
            return Err(Error::Value(format!("no stage-one codes for performing video `{}`", performing.name())));
        }
        for ds in auxiliary {
            self.check_dataset(ds, false)?;
            self.latents.allocate(ds.name(), ds.first_index(), ds.len())?;
        }
        self.space = self.space.union(SpaceLabel::Extended, auxiliary.iter().flat_map(VideoDataset::params));
        self.stage = Stage::Two;
        self.iteration = 0;
        self.optim = Optimizers::new(self.config.stage2.lr_g, self.config.stage2.lr_d);
        Ok(())
    }

    /// Latent rows `[n, 32]` of the given `(dataset, position)` pairs.
    fn latent_rows<'g>(&self, g: &'g Graph, picks: &[(&str, usize)]) -> Var<'g> {
        let rows: Vec<Var<'g>> = picks
            .iter()
            .map(|(name, pos)| g.param(self.latents.store(), &LatentTable::param_name(name)).index_rows(&[*pos]))
            .collect();
        concat0(&rows)
    }

    fn audio_vectors<'g>(&self, g: &'g Graph, windows: &[&AudioWindow]) -> Result<Option<Var<'g>>> {
        match &self.audio {
            Some(enc) => {
                let x = g.constant(AudioEncoder::windows_tensor(windows));
                Ok(Some(enc.forward(g, Bind::trainable(&enc.params), x)?))
            }
            None => Ok(None),
        }
    }

    fn batch_windows<'a>(&self, samples: &[Sample<'a>]) -> Result<Vec<&'a AudioWindow>> {
        if self.audio.is_none() {
            return Ok(Vec::new());
        }
        samples.iter().map(|s| audio_of(s.dataset, &s.dataset.frames()[s.pos])).collect()
    }

    fn apply_generator_grads(&mut self, grads: &std::collections::BTreeMap<String, Tensor>) {
        self.optim.generator.step(&mut self.generator.params, grads);
        self.optim.latents.step(self.latents.store_mut(), grads);
        if let Some(enc) = &mut self.audio {
            self.optim.audio.step(&mut enc.params, grads);
        }
    }

    /// One stage-one iteration on `performing`.
    pub fn stage1_step(&mut self, performing: &VideoDataset) -> Result<LossRecord> {
        if self.stage != Stage::One {
            return Err(Error::Config("stage-one step after stage two started".into()));
        }
        let mut rng = iteration_rng(self.config.seed, Stage::One, self.iteration);
        let n = performing.len();
        let samples: Vec<Sample> =
            (0..self.config.stage1.batch).map(|_| Sample { dataset: performing, pos: rng.random_range(0..n) }).collect();
        let g = Graph::new();
        let name = performing.name();
        let v = self.latent_rows(&g, &samples.iter().map(|s| (name, s.pos)).collect::<Vec<_>>());
        let v_next = self.latent_rows(&g, &samples.iter().map(|s| (name, partner(s.pos, n))).collect::<Vec<_>>());
        let windows = self.batch_windows(&samples)?;
        let audio = self.audio_vectors(&g, &windows)?;
        let params: Vec<&FaceParams> = samples.iter().map(|s| &s.frame().params).collect();
        let cond = self.generator.conditioning(&g, &params, audio, v)?;
        let out = self.generator.forward(&g, Bind::trainable(&self.generator.params), cond, samples.len())?;
        let images = samples.iter().map(|s| image_of(performing, s.frame())).collect::<Result<Vec<_>>>()?;
        let y = Image::batch_tensor(&images)?;
        let yc = g.constant(coarse_target(&y, self.config.generator.grid_size));
        let rec = reconstruction_loss(g.constant(y), out.image, yc, out.coarse)?;
        let vel = velocity_loss(v, v_next)?;
        let comps = LossComponents { rec, vel, per: None, con: None, adv_g: None };
        let weights = self.config.weights_stage1;
        let total = total_generator_loss(&comps, weights, Stage::One)?;
        let record = LossRecord::from_components(Stage::One, self.iteration, weights, &comps, &total, None);
        if !record.total_g.is_finite() {
            return Err(Error::Value(format!("non-finite stage-one loss at iteration {}", self.iteration)));
        }
        let grads = g.backward(total).params();
        self.apply_generator_grads(&grads);
        self.iteration += 1;
        Ok(record)
    }

    /// Run stage one until its configured iteration count.
    pub fn run_stage1(&mut self, performing: &VideoDataset, log: &mut dyn LossSink) -> Result<()> {
        while self.stage == Stage::One && self.iteration < self.config.stage1.iters {
            let r = self.stage1_step(performing)?;
            log.record(&r)?;
        }
        Ok(())
    }

    /// One stage-two iteration: a discriminator update on detached fakes,
    /// then a generator update against the updated, frozen discriminator.
    pub fn stage2_step(&mut self, data: &StageTwoData<'_>, nets: &StageTwoNets<'_>) -> Result<LossRecord> {
        if self.stage != Stage::Two {
            return Err(Error::Config("stage-two step before stage two started".into()));
        }
        let mut rng = iteration_rng(self.config.seed, Stage::Two, self.iteration);
        let batch = self.config.stage2.batch;
        let perf = data.performing;
        let aux_len = data.aux_len();
        let n_aux = if aux_len == 0 { 0 } else { batch / 2 };
        let n_perf = batch - n_aux;
        let mut samples: Vec<Sample> =
            (0..n_perf).map(|_| Sample { dataset: perf, pos: rng.random_range(0..perf.len()) }).collect();
        let mut textures: Vec<&Image> = samples.iter().map(|s| image_of(perf, s.frame())).collect::<Result<_>>()?;
        for _ in 0..n_aux {
            let (d, pos) = data.aux_at(rng.random_range(0..aux_len));
            samples.push(Sample { dataset: &data.auxiliary[d], pos });
            textures.push(image_of(perf, &perf.frames()[data.textures[d][pos]])?);
        }
        let real_pos: Vec<usize> = (0..batch).map(|_| rng.random_range(0..perf.len())).collect();

        let g = Graph::new();
        let picks: Vec<(&str, usize)> = samples.iter().map(|s| (s.dataset.name(), s.pos)).collect();
        let next: Vec<(&str, usize)> = samples.iter().map(|s| (s.dataset.name(), partner(s.pos, s.dataset.len()))).collect();
        let v = self.latent_rows(&g, &picks);
        let v_next = self.latent_rows(&g, &next);
        let windows = self.batch_windows(&samples)?;
        let audio = self.audio_vectors(&g, &windows)?;
        let params: Vec<&FaceParams> = samples.iter().map(|s| &s.frame().params).collect();
        let cond = self.generator.conditioning(&g, &params, audio, v)?;
        let out = self.generator.forward(&g, Bind::trainable(&self.generator.params), cond, batch)?;

        // discriminator update on detached fakes
        let reals: Vec<&Image> = real_pos.iter().map(|&p| image_of(perf, &perf.frames()[p])).collect::<Result<_>>()?;
        let gd = Graph::new();
        let dp = Bind::trainable(&self.discriminator.params);
        let d_real = self.discriminator.forward(&gd, dp, gd.constant(Image::batch_tensor(&reals)?))?;
        let d_fake = self.discriminator.forward(&gd, dp, gd.constant(out.image.value()))?;
        let loss_d = discriminator_loss(d_real, d_fake);
        let adv_d = loss_d.value().item();
        let grads_d = gd.backward(loss_d).params();
        self.optim.discriminator.step(&mut self.discriminator.params, &grads_d);
        self.discriminator.power_iterate(1);

        let perf_images: Vec<&Image> = samples[..n_perf].iter().map(|s| image_of(perf, s.frame())).collect::<Result<_>>()?;
        let y = Image::batch_tensor(&perf_images)?;
        let yc = g.constant(coarse_target(&y, self.config.generator.grid_size));
        let rec = reconstruction_loss(g.constant(y), out.image.narrow0(0, n_perf), yc, out.coarse.narrow0(0, n_perf))?;
        let t = g.constant(Image::batch_tensor(&textures)?);
        let per = perceptual_loss(out.image, t, nets.features)?;
        let targets = Tensor::new([batch, PARAM_DIM], params.iter().flat_map(|p| p.concat()).collect());
        let con = consistency_loss(&targets, out.image, nets.estimator)?;
        let adv_g = generator_adversarial_loss(self.discriminator.forward(&g, Bind::frozen(&self.discriminator.params), out.image)?);
        let vel = velocity_loss(v, v_next)?;
        let comps = LossComponents { rec, vel, per: Some(per), con: Some(con), adv_g: Some(adv_g) };
        let weights = self.config.weights_stage2;
        let total = total_generator_loss(&comps, weights, Stage::Two)?;
        let record = LossRecord::from_components(Stage::Two, self.iteration, weights, &comps, &total, Some(adv_d));
        if !(record.total_g.is_finite() && adv_d.is_finite()) {
            return Err(Error::Value(format!("non-finite stage-two loss at iteration {}", self.iteration)));
        }
        let grads = g.backward(total).params();
        self.apply_generator_grads(&grads);
        self.iteration += 1;
        Ok(record)
    }

    /// Run stage two until its configured iteration count.
    pub fn run_stage2(&mut self, data: &StageTwoData<'_>, nets: &StageTwoNets<'_>, log: &mut dyn LossSink) -> Result<()> {
        while self.stage == Stage::Two && self.iteration < self.config.stage2.iters {
            let r = self.stage2_step(data, nets)?;
            log.record(&r)?;
        }
        Ok(())
    }

    /// Latent code for `(dataset, index)` under `policy`.
    pub fn latent_for(&self, key: Option<(&str, usize)>, policy: LatentPolicy) -> Result<Vec<f64>> {
        if let Some((ds, idx)) = key {
            if let Some(code) = self.latents.lookup(ds, idx) {
                return Ok(code);
            }
        }
        match policy {
            LatentPolicy::Zero => Ok(vec![0.0; LATENT_DIM]),
            LatentPolicy::Mean => Ok(self.latents.mean()),
            LatentPolicy::Lookup => {
                let (dataset, index) = key.map_or((String::new(), 0), |(d, i)| (d.to_string(), i));
                Err(Error::LatentMiss { dataset, index })
            }
        }
    }

    /// Parameters of `frame` as the generator consumes them: with the encoded
    /// audio vector in audio-driven mode.
    pub fn conditioning_params(&self, dataset: &VideoDataset, frame: &Frame) -> Result<FaceParams> {
        match &self.audio {
            Some(enc) => frame.params.with_audio(enc.encode_audio(audio_of(dataset, frame)?)?),
            None => Ok(frame.params.without_audio()),
        }
    }

    /// Generate one image; pure with respect to the state.
    pub fn infer(&self, params: &FaceParams, key: Option<(&str, usize)>, policy: LatentPolicy) -> Result<Image> {
        let latent = self.latent_for(key, policy)?;
        Ok(self.generator.generate(params, &latent)?.0)
    }

    /// Generate images for every frame of `dataset`, looking codes up by the
    /// dataset's name.
    pub fn infer_dataset(&self, dataset: &VideoDataset, policy: LatentPolicy) -> Result<Vec<Image>> {
        let mut out = Vec::with_capacity(dataset.len());
        for chunk in dataset.frames().chunks(16) {
            let g = Graph::new();
            let mut latents = Vec::with_capacity(chunk.len() * LATENT_DIM);
            let mut params = Vec::with_capacity(chunk.len());
            for f in chunk {
                latents.extend(self.latent_for(Some((dataset.name(), f.index)), policy)?);
                params.push(self.conditioning_params(dataset, f)?);
            }
            let audio = match self.mode() {
                DriveMode::AudioDriven => {
                    let rows: Vec<f64> = params.iter().flat_map(|p| p.audio().expect("audio attached").to_vec()).collect();
                    Some(g.constant(Tensor::new([chunk.len(), rows.len() / chunk.len()], rows)))
                }
                DriveMode::VideoDriven => None,
            };
            let refs: Vec<&FaceParams> = params.iter().collect();
            let lat = g.constant(Tensor::new([chunk.len(), LATENT_DIM], latents));
            let cond = self.generator.conditioning(&g, &refs, audio, lat)?;
            let o = self.generator.forward(&g, Bind::frozen(&self.generator.params), cond, chunk.len())?;
            out.extend(Image::unbatch(&o.image.value())?);
        }
        Ok(out)
    }

    /// Digest of every network and latent parameter.
    pub fn digest(&self) -> String {
        let mut all = ParamStore::new();
        let mut add = |prefix: &str, s: &ParamStore| {
            for (k, v) in s.iter() {
                all.insert(format!("{prefix}{k}"), v.clone());
            }
        };
        add("G/", &self.generator.params);
        add("D/", &self.discriminator.params);
        add("SN/", &self.discriminator.sn_state);
        add("L/", self.latents.store());
        if let Some(a) = &self.audio {
            add("A/", &a.params);
        }
        all.digest()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let blocks: Vec<(String, usize)> = self.latents.blocks().into_iter().map(|(n, f, _)| (n, f)).collect();
        let steps: Vec<(&str, u64)> = self.optim.all().iter().map(|(k, a)| (*k, a.step)).collect();
        let lrs: Vec<(&str, f64)> = self.optim.all().iter().map(|(k, a)| (*k, a.config.lr)).collect();
        let mut a = Archive::new(serde_json::json!({
            "kind": "train_state",
            "config": self.config,
            "stage": self.stage,
            "iteration": self.iteration,
            "latent_blocks": blocks,
            "optimizer_steps": steps,
            "optimizer_lrs": lrs,
            "space": self.space,
        }));
        a.put_store("G/", &self.generator.params);
        a.put_store("D/", &self.discriminator.params);
        a.put_store("SN/", &self.discriminator.sn_state);
        a.put_store("L/", self.latents.store());
        if let Some(enc) = &self.audio {
            a.put_store("A/", &enc.params);
        }
        for (k, opt) in self.optim.all() {
            a.put_store(&format!("M1/{k}/"), &opt.first.clone().into_iter().collect());
            a.put_store(&format!("M2/{k}/"), &opt.second.clone().into_iter().collect());
        }
        a.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let a = Archive::load(path)?;
        if a.meta_field::<String>("kind")? != "train_state" {
            return Err(Error::format(path, "not a training checkpoint"));
        }
        let config: TrainConfig = a.meta_field("config")?;
        let mut state = Self::new(config)?;
        let restore = |target: &mut ParamStore, prefix: &str| -> Result<()> {
            let loaded = a.take_store(prefix);
            for (name, t) in target.iter() {
                match loaded.get(name) {
                    Some(l) if l.shape() == t.shape() => {}
                    _ => return Err(Error::format(path, format!("missing or misshaped array `{prefix}{name}`"))),
                }
            }
            *target = loaded;
            Ok(())
        };
        restore(&mut state.generator.params, "G/")?;
        restore(&mut state.discriminator.params, "D/")?;
        restore(&mut state.discriminator.sn_state, "SN/")?;
        if let Some(enc) = &mut state.audio {
            restore(&mut enc.params, "A/")?;
        }
        let blocks: Vec<(String, usize)> = a.meta_field("latent_blocks")?;
        for (name, first) in blocks {
            let codes = a.array(&format!("L/{}", LatentTable::param_name(&name)))?.clone();
            state.latents.insert_block(&name, first, codes)?;
        }
        let steps: std::collections::BTreeMap<String, u64> = a.meta_field::<Vec<(String, u64)>>("optimizer_steps")?.into_iter().collect();
        let lrs: std::collections::BTreeMap<String, f64> = a.meta_field::<Vec<(String, f64)>>("optimizer_lrs")?.into_iter().collect();
        let Optimizers { generator, latents, audio, discriminator } = &mut state.optim;
        for (k, opt) in [("gen", generator), ("lat", latents), ("aud", audio), ("disc", discriminator)] {
            opt.step = *steps.get(k).ok_or_else(|| Error::format(path, format!("no step count for optimizer `{k}`")))?;
            opt.config.lr = *lrs.get(k).ok_or_else(|| Error::format(path, format!("no learning rate for optimizer `{k}`")))?;
            opt.first = a.take_store(&format!("M1/{k}/")).iter().map(|(n, t)| (n.clone(), t.clone())).collect();
            opt.second = a.take_store(&format!("M2/{k}/")).iter().map(|(n, t)| (n.clone(), t.clone())).collect();
        }
        state.stage = a.meta_field("stage")?;
        state.iteration = a.meta_field("iteration")?;
        state.space = a.meta_field("space")?;
        Ok(state)
    }
}

/// Stage one from scratch on `performing`.
pub fn train_stage1(performing: &VideoDataset, cfg: &TrainConfig, log: &mut dyn LossSink) -> Result<TrainState> {
    let mut state = TrainState::new(cfg.clone())?;
    state.begin_stage1(performing)?;
    state.run_stage1(performing, log)?;
    Ok(state)
}

/// Stage two on top of a finished stage one.
pub fn train_stage2(
    mut state: TrainState,
    performing: &VideoDataset,
    auxiliary: &[VideoDataset],
    nets: &StageTwoNets<'_>,
    log: &mut dyn LossSink,
) -> Result<TrainState> {
    state.begin_stage2(performing, auxiliary)?;
    let data = StageTwoData::new(performing, auxiliary, state.config.texture_weights)?;
    state.run_stage2(&data, nets, log)?;
    Ok(state)
}

/// The first `k` videos of `pool` in an order fixed by `seed`; selections
/// for growing `k` are nested.
pub fn sample_auxiliary(pool: &[VideoDataset], k: usize, seed: u64) -> Result<Vec<VideoDataset>> {
    if k > pool.len() {
        return Err(Error::Config(format!("{k} auxiliary videos requested from a pool of {}", pool.len())));
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xa11));
    Ok(order[..k].iter().map(|&i| pool[i].clone()).collect())
}

/// Auxiliary videos for stage two and whether the driven parameters were
/// folded in.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPlan {
    pub mode: TrainMode,
    pub auxiliary: Vec<VideoDataset>,
    pub includes_driven: bool,
}

/// Offline mode appends the driven video's parameters to the auxiliary
/// videos; online mode leaves them out.
pub fn select_mode(cfg: &TrainConfig, auxiliary: Vec<VideoDataset>, driven: &VideoDataset) -> Result<TrainingPlan> {
    let mut auxiliary = auxiliary;
    let includes_driven = cfg.mode == TrainMode::Offline;
    if includes_driven {
        auxiliary.push(driven.params_only());
    }
    Ok(TrainingPlan { mode: cfg.mode, auxiliary, includes_driven })
}
