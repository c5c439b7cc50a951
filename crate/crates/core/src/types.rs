//! Domain types shared by every stage of the pipeline: per-frame control
//! parameters, images, datasets, latent tables and parameter sets.

use std::collections::BTreeMap;

use portrait_autograd::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const POSE_DIM: usize = 6;
pub const EXPR_DIM: usize = 50;
pub const GAZE_DIM: usize = 2;
pub const AUDIO_DIM: usize = 32;
pub const LATENT_DIM: usize = 32;
/// Length of the pose ‖ expression ‖ gaze concatenation.
pub const PARAM_DIM: usize = POSE_DIM + EXPR_DIM + GAZE_DIM;
pub const AUDIO_STEPS: usize = 16;
pub const AUDIO_FEATURES: usize = 29;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveMode {
    VideoDriven,
    AudioDriven,
}

/// Control signal of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFaceParams", into = "RawFaceParams")]
pub struct FaceParams {
    pose: Vec<f64>,
    expression: Vec<f64>,
    gaze: Vec<f64>,
    audio: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFaceParams {
    pose: Vec<f64>,
    expression: Vec<f64>,
    gaze: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    audio: Option<Vec<f64>>,
}

impl TryFrom<RawFaceParams> for FaceParams {
    type Error = Error;

    fn try_from(raw: RawFaceParams) -> Result<Self> {
        let params = FaceParams::video(raw.pose, raw.expression, raw.gaze)?;
        match raw.audio {
            Some(audio) => params.with_audio(audio),
            None => Ok(params),
        }
    }
}

impl From<FaceParams> for RawFaceParams {
    fn from(p: FaceParams) -> Self {
        RawFaceParams { pose: p.pose, expression: p.expression, gaze: p.gaze, audio: p.audio }
    }
}

fn check_vector(name: &str, values: &[f64], dim: usize) -> Result<()> {
    if values.len() != dim {
        return Err(Error::Shape(format!("{name} has {} entries, expected {dim}", values.len())));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Value(format!("{name}[{i}] is not finite")));
    }
    Ok(())
}

impl FaceParams {
    /// Video-driven parameters; fails on wrong dimensions or non-finite entries.
    pub fn video(pose: Vec<f64>, expression: Vec<f64>, gaze: Vec<f64>) -> Result<Self> {
        check_vector("pose", &pose, POSE_DIM)?;
        check_vector("expression", &expression, EXPR_DIM)?;
        check_vector("gaze", &gaze, GAZE_DIM)?;
        Ok(Self { pose, expression, gaze, audio: None })
    }

    pub fn zeros() -> Self {
        Self { pose: vec![0.0; POSE_DIM], expression: vec![0.0; EXPR_DIM], gaze: vec![0.0; GAZE_DIM], audio: None }
    }

    /// Audio-driven copy carrying the encoded audio vector.
    pub fn with_audio(&self, audio: Vec<f64>) -> Result<Self> {
        check_vector("audio", &audio, AUDIO_DIM)?;
        Ok(Self { audio: Some(audio), ..self.clone() })
    }

    /// Video-driven copy with the audio vector dropped.
    pub fn without_audio(&self) -> Self {
        Self { audio: None, ..self.clone() }
    }

    /// Rebuild from a pose ‖ expression ‖ gaze concatenation.
    pub fn from_concat(values: &[f64]) -> Result<Self> {
        check_vector("parameter vector", values, PARAM_DIM)?;
        let (pose, rest) = values.split_at(POSE_DIM);
        let (expression, gaze) = rest.split_at(EXPR_DIM);
        Self::video(pose.to_vec(), expression.to_vec(), gaze.to_vec())
    }

    pub fn pose(&self) -> &[f64] {
        &self.pose
    }

    pub fn expression(&self) -> &[f64] {
        &self.expression
    }

    pub fn gaze(&self) -> &[f64] {
        &self.gaze
    }

    pub fn audio(&self) -> Option<&[f64]> {
        self.audio.as_deref()
    }

    pub fn mode(&self) -> DriveMode {
        if self.audio.is_some() {
            DriveMode::AudioDriven
        } else {
            DriveMode::VideoDriven
        }
    }

    /// pose ‖ expression ‖ gaze, the layout compared against estimator output.
    pub fn concat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(PARAM_DIM);
        v.extend_from_slice(&self.pose);
        v.extend_from_slice(&self.expression);
        v.extend_from_slice(&self.gaze);
        v
    }

    pub fn pose_mut(&mut self) -> &mut [f64] {
        &mut self.pose
    }

    pub fn expression_mut(&mut self) -> &mut [f64] {
        &mut self.expression
    }

    pub fn gaze_mut(&mut self) -> &mut [f64] {
        &mut self.gaze
    }
}

/// Component weights of the parameter distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamWeights {
    pub pose: f64,
    pub expression: f64,
    pub gaze: f64,
}

impl ParamWeights {
    pub const UNIT: ParamWeights = ParamWeights { pose: 1.0, expression: 1.0, gaze: 1.0 };
    /// Default for nearest-texture retrieval: gaze ignored.
    pub const TEXTURE: ParamWeights = ParamWeights { pose: 1.0, expression: 1.0, gaze: 0.0 };
}

impl Default for ParamWeights {
    fn default() -> Self {
        Self::TEXTURE
    }
}

/// `H × W × 3` image with values in `[-1, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::Shape(format!("{} values for a {height}x{width}x3 image", data.len())));
        }
        if let Some(i) = data.iter().position(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::Value(format!("pixel value {} at {i} outside [-1, 1]", data[i])));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self { height, width, data: vec![value.clamp(-1.0, 1.0); height * width * 3] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// `[3, H, W]` channel-major values.
    pub fn to_chw(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; 3 * plane];
        for (p, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + p] = px[c];
            }
        }
        out
    }

    /// Inverse of [`Image::to_chw`]; values are clamped into range.
    pub fn from_chw(height: usize, width: usize, chw: &[f64]) -> Result<Self> {
        let plane = height * width;
        if chw.len() != 3 * plane {
            return Err(Error::Shape(format!("{} values for a 3x{height}x{width} map", chw.len())));
        }
        let mut data = vec![0.0; 3 * plane];
        for p in 0..plane {
            for c in 0..3 {
                data[p * 3 + c] = chw[c * plane + p].clamp(-1.0, 1.0);
            }
        }
        Ok(Self { height, width, data })
    }

    /// Stack images into one `[n, 3, H, W]` tensor.
    pub fn batch_tensor(images: &[&Image]) -> Result<Tensor> {
        let first = images.first().ok_or_else(|| Error::Value("empty image batch".into()))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::with_capacity(images.len() * 3 * h * w);
        for img in images {
            if (img.height, img.width) != (h, w) {
                return Err(Error::Shape(format!("mixed image sizes {h}x{w} and {}x{}", img.height, img.width)));
            }
            data.extend(img.to_chw());
        }
        Ok(Tensor::new([images.len(), 3, h, w], data))
    }

    /// Split an `[n, 3, H, W]` tensor into images.
    pub fn unbatch(t: &Tensor) -> Result<Vec<Image>> {
        let s = t.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::Shape(format!("expected [n, 3, h, w], got {s:?}")));
        }
        let per = 3 * s[2] * s[3];
        t.data().chunks_exact(per).map(|c| Image::from_chw(s[2], s[3], c)).collect()
    }

    /// 8-bit RGB with `v -> round((v + 1) * 127.5)`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8).collect()
    }

    /// Inverse of [`Image::to_rgb8`] on the 8-bit lattice.
    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|&b| b as f64 / 127.5 - 1.0).collect())
    }

    /// Snap values onto the 8-bit lattice so that PNG storage is lossless.
    pub fn quantized(&self) -> Self {
        Self::from_rgb8(self.height, self.width, &self.to_rgb8()).expect("lattice values are in range")
    }

    pub fn mean_abs_diff(&self, other: &Image) -> Result<f64> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        let sum: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum();
        Ok(sum / self.data.len() as f64)
    }
}

/// Window of 16 speech-feature frames with 29 features each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct AudioWindow {
    features: Vec<f64>,
}

impl AudioWindow {
    /// Row-major `16 × 29` features.
    pub fn new(features: Vec<f64>) -> Result<Self> {
        check_vector("audio window", &features, AUDIO_STEPS * AUDIO_FEATURES)?;
        Ok(Self { features })
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }
}

impl TryFrom<Vec<Vec<f64>>> for AudioWindow {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != AUDIO_STEPS || rows.iter().any(|r| r.len() != AUDIO_FEATURES) {
            return Err(Error::Shape(format!("audio window must be {AUDIO_STEPS}x{AUDIO_FEATURES}")));
        }
        Self::new(rows.concat())
    }
}

impl From<AudioWindow> for Vec<Vec<f64>> {
    fn from(w: AudioWindow) -> Self {
        w.features.chunks(AUDIO_FEATURES).map(<[f64]>::to_vec).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub params: FaceParams,
    pub image: Option<Image>,
    pub audio: Option<AudioWindow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetRole {
    Performing,
    Auxiliary,
    Driven,
}

/// Ordered frames of one video. Frame indices are consecutive so that
/// temporal neighbours are well defined.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoDataset {
    name: String,
    role: DatasetRole,
    frames: Vec<Frame>,
}

impl VideoDataset {
    pub fn new(name: impl Into<String>, role: DatasetRole, frames: Vec<Frame>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() || name.contains(['/', '\\']) {
            return Err(Error::Value(format!("invalid dataset name `{name}`")));
        }
        for pair in frames.windows(2) {
            if pair[1].index != pair[0].index + 1 {
                return Err(Error::Frame {
                    dataset: name,
                    index: pair[1].index,
                    reason: format!("follows frame {}; indices must increase by 1", pair[0].index),
                });
            }
        }
        let mut sizes = frames.iter().filter_map(|f| f.image.as_ref().map(|i| (i.height(), i.width())));
        if let Some(first) = sizes.next() {
            if let Some(other) = sizes.find(|s| *s != first) {
                return Err(Error::Shape(format!("dataset `{name}` mixes image sizes {first:?} and {other:?}")));
            }
        }
        if role == DatasetRole::Performing {
            if let Some(f) = frames.iter().find(|f| f.image.is_none()) {
                return Err(Error::Frame { dataset: name, index: f.index, reason: "performing frame without image".into() });
            }
        }
        Ok(Self { name, role, frames })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn role(&self) -> DatasetRole {
        self.role
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn first_index(&self) -> usize {
        self.frames.first().map_or(0, |f| f.index)
    }

    pub fn has_images(&self) -> bool {
        !self.frames.is_empty() && self.frames.iter().all(|f| f.image.is_some())
    }

    pub fn has_audio(&self) -> bool {
        !self.frames.is_empty() && self.frames.iter().all(|f| f.audio.is_some())
    }

    /// Image side length, if the dataset carries images.
    pub fn resolution(&self) -> Option<usize> {
        self.frames.iter().find_map(|f| f.image.as_ref().map(Image::height))
    }

    pub fn params(&self) -> impl Iterator<Item = &FaceParams> {
        self.frames.iter().map(|f| &f.params)
    }

    /// Same frames under another name and role; images are dropped unless the
    /// new role is performing.
    pub fn relabeled(&self, name: impl Into<String>, role: DatasetRole) -> Result<Self> {
        let frames = self
            .frames
            .iter()
            .map(|f| Frame { image: if role == DatasetRole::Performing { f.image.clone() } else { None }, ..f.clone() })
            .collect();
        Self::new(name, role, frames)
    }

    pub fn params_only(&self) -> Self {
        Self {
            frames: self.frames.iter().map(|f| Frame { image: None, ..f.clone() }).collect(),
            ..self.clone()
        }
    }
}

/// Per-frame latent codes, one `[n, 32]` block per dataset. Blocks live in a
/// [`ParamStore`] under [`LatentTable::param_name`] so training can optimize
/// them like any other parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTable {
    store: ParamStore,
    first_index: BTreeMap<String, usize>,
    pub learnable: bool,
}

impl Default for LatentTable {
    fn default() -> Self {
        Self::new()
    }
}

impl LatentTable {
    pub fn new() -> Self {
        Self { store: ParamStore::new(), first_index: BTreeMap::new(), learnable: true }
    }

    pub fn param_name(dataset: &str) -> String {
        format!("latent.{dataset}")
    }

    /// Zero codes for frames `first_index .. first_index + n` of `dataset`.
    /// A dataset can be allocated only once.
    pub fn allocate(&mut self, dataset: &str, first_index: usize, n: usize) -> Result<()> {
        if self.first_index.contains_key(dataset) {
            return Err(Error::Value(format!("latent codes for `{dataset}` already allocated")));
        }
        self.first_index.insert(dataset.to_string(), first_index);
        self.store.insert(Self::param_name(dataset), Tensor::zeros([n, LATENT_DIM]));
        Ok(())
    }

    /// Restore a block saved with [`LatentTable::blocks`].
    pub fn insert_block(&mut self, dataset: &str, first_index: usize, codes: Tensor) -> Result<()> {
        if codes.shape().len() != 2 || codes.shape()[1] != LATENT_DIM {
            return Err(Error::Shape(format!("latent block shape {:?}", codes.shape())));
        }
        if !codes.is_finite() {
            return Err(Error::Value(format!("non-finite latent codes for `{dataset}`")));
        }
        self.first_index.insert(dataset.to_string(), first_index);
        self.store.insert(Self::param_name(dataset), codes);
        Ok(())
    }

    pub fn contains(&self, dataset: &str) -> bool {
        self.first_index.contains_key(dataset)
    }

    /// Row of `index` within the dataset's block.
    pub fn row(&self, dataset: &str, index: usize) -> Option<usize> {
        let first = *self.first_index.get(dataset)?;
        let n = self.store.get(&Self::param_name(dataset))?.shape()[0];
        (index >= first && index - first < n).then(|| index - first)
    }

    pub fn lookup(&self, dataset: &str, index: usize) -> Option<Vec<f64>> {
        let row = self.row(dataset, index)?;
        let t = self.store.get(&Self::param_name(dataset))?;
        Some(t.data()[row * LATENT_DIM..(row + 1) * LATENT_DIM].to_vec())
    }

    /// Mean over every stored code; zeros for an empty table.
    pub fn mean(&self) -> Vec<f64> {
        let mut acc = vec![0.0; LATENT_DIM];
        let mut n = 0usize;
        for (_, t) in self.store.iter() {
            for row in t.data().chunks_exact(LATENT_DIM) {
                acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                n += 1;
            }
        }
        if n > 0 {
            acc.iter_mut().for_each(|a| *a /= n as f64);
        }
        acc
    }

    /// `(dataset, first index, codes)` for every block, in name order.
    pub fn blocks(&self) -> Vec<(String, usize, Tensor)> {
        self.first_index
            .iter()
            .map(|(name, &first)| (name.clone(), first, self.store.get(&Self::param_name(name)).unwrap().clone()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.store.iter().map(|(_, t)| t.shape()[0]).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceLabel {
    /// Parameters of the performing video.
    Performing,
    /// Performing parameters joined with the auxiliary ones.
    Extended,
    /// Samples standing in for the space of all plausible parameters.
    Sampled,
}

/// A finite set of parameter vectors with nearest-neighbour queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace {
    pub label: SpaceLabel,
    pub entries: Vec<FaceParams>,
}

impl ParamSpace {
    pub fn new(label: SpaceLabel, entries: Vec<FaceParams>) -> Self {
        Self { label, entries }
    }

    pub fn from_dataset(label: SpaceLabel, dataset: &VideoDataset) -> Self {
        Self::new(label, dataset.params().cloned().collect())
    }

    /// `self ∪ others`, keeping `self`'s entries first.
    pub fn union<'a>(&self, label: SpaceLabel, others: impl IntoIterator<Item = &'a FaceParams>) -> Self {
        let mut entries = self.entries.clone();
        entries.extend(others.into_iter().cloned());
        Self::new(label, entries)
    }

    pub fn contains(&self, p: &FaceParams) -> bool {
        self.entries.iter().any(|e| e == p)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Index and distance of the closest entry, lowest index on ties.
    pub fn nearest(&self, query: &FaceParams, weights: ParamWeights) -> Result<Option<(usize, f64)>> {
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in self.entries.iter().enumerate() {
            let d = crate::encoding::param_distance(query, e, weights)?;
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        Ok(best)
    }
}
