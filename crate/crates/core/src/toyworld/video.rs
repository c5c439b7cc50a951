//! Smooth parameter trajectories and rendered toy videos.
//!
//! Each used dimension follows `c + spread · h · u(t)`, where `h` is the
//! dimension's half-range, `c` a seed-dependent centre inside the box and
//! `u(t) ∈ [−1, 1]` a normalized sum of three sinusoids with angular
//! frequencies at most [`MAX_OMEGA`] rad/frame. Adjacent frames therefore
//! differ by at most `spread · h · MAX_OMEGA` per dimension.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::render::{render_toy_face, used_dims, ToyIdentity};
use crate::error::{Error, Result};
use crate::types::{
    AudioWindow, DatasetRole, FaceParams, Frame, VideoDataset, AUDIO_FEATURES, AUDIO_STEPS, PARAM_DIM,
};

pub const MAX_OMEGA: f64 = 0.25;
const MIN_OMEGA: f64 = 0.04;

/// Shape of a generated trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    /// Excursion around the centre as a fraction of each half-range.
    pub spread: f64,
    /// How far the centre may sit from the box middle, as a fraction of the
    /// room left after the excursion.
    pub offset: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self { spread: 0.35, offset: 1.0 }
    }
}

impl TrajectoryConfig {
    /// Largest change of dimension with half-range `h` between adjacent frames.
    pub fn max_step(&self, h: f64) -> f64 {
        self.spread * h * MAX_OMEGA
    }
}

/// Smooth sequence of `n` parameter vectors determined by `seed`.
pub fn toy_trajectory(n: usize, seed: u64, cfg: TrajectoryConfig) -> Result<Vec<FaceParams>> {
    if !(0.0..=1.0).contains(&cfg.spread) || !(0.0..=1.0).contains(&cfg.offset) {
        return Err(Error::Config(format!("trajectory spread and offset must lie in [0, 1]: {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a_11ec);
    let dims = used_dims();
    let mut values = vec![vec![0.0; PARAM_DIM]; n];
    for &(d, h) in &dims {
        let room = (1.0 - cfg.spread) * h * cfg.offset;
        let centre = rng.random_range(-1.0..=1.0) * room;
        let waves: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| (rng.random_range(0.3..1.0), rng.random_range(MIN_OMEGA..MAX_OMEGA), rng.random_range(0.0..std::f64::consts::TAU)))
            .collect();
        let norm: f64 = waves.iter().map(|w| w.0).sum();
        for (t, row) in values.iter_mut().enumerate() {
            let u: f64 = waves.iter().map(|(a, w, phi)| a * (w * t as f64 + phi).sin()).sum::<f64>() / norm;
            row[d] = centre + cfg.spread * h * u;
        }
    }
    values.iter().map(|v| FaceParams::from_concat(v)).collect()
}

/// Synthetic speech features whose frames track mouth openness and curvature
/// of the surrounding frames.
pub fn toy_audio_windows(params: &[FaceParams]) -> Vec<AudioWindow> {
    let n = params.len() as isize;
    (0..n)
        .map(|t| {
            let mut feats = Vec::with_capacity(AUDIO_STEPS * AUDIO_FEATURES);
            for k in 0..AUDIO_STEPS as isize {
                let src = (t + k - AUDIO_STEPS as isize / 2).clamp(0, n - 1) as usize;
                let e = params[src].expression();
                for f in 0..AUDIO_FEATURES {
                    let phase = f as f64 * 0.7;
                    feats.push(e[0] * (phase + 1.0).sin() + 0.5 * e[1] * (1.3 * phase).cos());
                }
            }
            AudioWindow::new(feats).expect("finite features of the right shape")
        })
        .collect()
}

/// Toy video of `identity` following a trajectory seeded by `trajectory_seed`,
/// rendered at `size` and quantized to the 8-bit lattice.
pub fn make_toy_video(
    name: &str,
    role: DatasetRole,
    identity: &ToyIdentity,
    n_frames: usize,
    trajectory_seed: u64,
    size: usize,
    cfg: TrajectoryConfig,
) -> Result<VideoDataset> {
    if n_frames < 2 {
        return Err(Error::Value("a toy video needs at least 2 frames".into()));
    }
    let params = toy_trajectory(n_frames, trajectory_seed, cfg)?;
    let frames = params
        .into_iter()
        .enumerate()
        .map(|(index, params)| {
            let image = render_toy_face(identity, &params, size)?.quantized();
            Ok(Frame { index, params, image: Some(image), audio: None })
        })
        .collect::<Result<Vec<_>>>()?;
    VideoDataset::new(name, role, frames)
}

/// Parameters-only video for auxiliary or driven use.
pub fn make_param_video(name: &str, role: DatasetRole, n_frames: usize, seed: u64, cfg: TrajectoryConfig) -> Result<VideoDataset> {
    let frames = toy_trajectory(n_frames, seed, cfg)?
        .into_iter()
        .enumerate()
        .map(|(index, params)| Frame { index, params, image: None, audio: None })
        .collect();
    VideoDataset::new(name, role, frames)
}

/// Copy of `dataset` with toy audio windows attached to every frame.
pub fn with_toy_audio(dataset: &VideoDataset) -> Result<VideoDataset> {
    let params: Vec<FaceParams> = dataset.params().cloned().collect();
    let frames = dataset
        .frames()
        .iter()
        .zip(toy_audio_windows(&params))
        .map(|(f, w)| Frame { audio: Some(w), ..f.clone() })
        .collect();
    VideoDataset::new(dataset.name(), dataset.role(), frames)
}

/// Mean of the used-dimension pose/expression/gaze values, scaled by each
/// dimension's half-range.
pub fn normalized_centroid(params: &[FaceParams]) -> Vec<f64> {
    let dims = used_dims();
    let mut c = vec![0.0; dims.len()];
    for p in params {
        let v = p.concat();
        for (k, &(d, h)) in dims.iter().enumerate() {
            c[k] += v[d] / h;
        }
    }
    c.iter_mut().for_each(|x| *x /= params.len().max(1) as f64);
    c
}
