//! On-disk dataset layout.
//!
//! A dataset directory holds `manifest.json`, a parameter file with one JSON
//! record per frame and, when the dataset has images, `frames/NNNNNN.png`
//! named by frame index. Parameter records have the fields `index`, `pose`,
//! `expression`, `gaze` and optionally `audio` (encoded 32-vector) and
//! `audio_window` (16 rows of 29 features). Paths inside the manifest are
//! relative to the manifest's directory unless absolute.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{AudioWindow, DatasetRole, DriveMode, FaceParams, Frame, Image, VideoDataset};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.jsonl";
pub const FRAMES_DIR: &str = "frames";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub name: String,
    pub role: DatasetRole,
    pub frames: usize,
    pub first_index: usize,
    /// Image side length; absent for parameters-only datasets.
    pub resolution: Option<usize>,
    pub params_file: PathBuf,
    pub image_dir: Option<PathBuf>,
    pub mode: DriveMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamRecord {
    index: usize,
    pose: Vec<f64>,
    expression: Vec<f64>,
    gaze: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    audio: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    audio_window: Option<AudioWindow>,
}

impl ParamRecord {
    fn from_frame(f: &Frame) -> Self {
        Self {
            index: f.index,
            pose: f.params.pose().to_vec(),
            expression: f.params.expression().to_vec(),
            gaze: f.params.gaze().to_vec(),
            audio: f.params.audio().map(<[f64]>::to_vec),
            audio_window: f.audio.clone(),
        }
    }

    fn params(&self) -> Result<FaceParams> {
        let p = FaceParams::video(self.pose.clone(), self.expression.clone(), self.gaze.clone())?;
        match &self.audio {
            Some(a) => p.with_audio(a.clone()),
            None => Ok(p),
        }
    }
}

/// File name of the image of frame `index`.
pub fn frame_file(index: usize) -> String {
    format!("{index:06}.png")
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() { p.to_path_buf() } else { base.join(p) }
}

/// Write an image as an 8-bit RGB PNG.
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    image::save_buffer(path, &img.to_rgb8(), img.width() as u32, img.height() as u32, image::ExtendedColorType::Rgb8)
        .map_err(|e| Error::format(path, e))
}

/// Read an 8-bit RGB image file.
pub fn read_image(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| Error::format(path, e))?.to_rgb8();
    Image::from_rgb8(img.height() as usize, img.width() as usize, img.as_raw())
}

/// Write `dataset` into `dir` (created if missing) and return its manifest.
pub fn save_dataset(dataset: &VideoDataset, dir: &Path) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let params_path = dir.join(PARAMS_FILE);
    let mut text = String::new();
    for f in dataset.frames() {
        text.push_str(&serde_json::to_string(&ParamRecord::from_frame(f)).map_err(|e| Error::format(&params_path, e))?);
        text.push('\n');
    }
    fs::write(&params_path, text).map_err(Error::io(&params_path))?;
    let image_dir = if dataset.has_images() {
        let frames_dir = dir.join(FRAMES_DIR);
        if frames_dir.exists() {
            fs::remove_dir_all(&frames_dir).map_err(Error::io(&frames_dir))?;
        }
        fs::create_dir_all(&frames_dir).map_err(Error::io(&frames_dir))?;
        for f in dataset.frames() {
            let img = f.image.as_ref().expect("has_images checked every frame");
            write_image(&frames_dir.join(frame_file(f.index)), img)?;
        }
        Some(PathBuf::from(FRAMES_DIR))
    } else {
        None
    };
    let manifest = DatasetManifest {
        version: FORMAT_VERSION,
        name: dataset.name().to_string(),
        role: dataset.role(),
        frames: dataset.len(),
        first_index: dataset.first_index(),
        resolution: if image_dir.is_some() { dataset.resolution() } else { None },
        params_file: PathBuf::from(PARAMS_FILE),
        image_dir,
        mode: dataset_mode(dataset),
    };
    write_manifest(&manifest, dir)?;
    Ok(manifest)
}

fn dataset_mode(dataset: &VideoDataset) -> DriveMode {
    if dataset.has_audio() { DriveMode::AudioDriven } else { DriveMode::VideoDriven }
}

pub fn write_manifest(manifest: &DatasetManifest, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(MANIFEST_FILE);
    let mut file = fs::File::create(&path).map_err(Error::io(&path))?;
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::format(&path, e))?;
    writeln!(file, "{text}").map_err(Error::io(&path))?;
    Ok(path)
}

/// Read the parameter file at `path` into frames without images.
pub fn read_param_file(path: &Path, dataset: &str) -> Result<Vec<Frame>> {
    let file = fs::File::open(path).map_err(Error::io(path))?;
    let mut frames = Vec::new();
    for (line_no, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let position = frames.last().map_or(line_no, |f: &Frame| f.index + 1);
        let record: ParamRecord = serde_json::from_str(&line).map_err(|e| Error::Frame {
            dataset: dataset.to_string(),
            index: position,
            reason: format!("{} line {}: {e}", path.display(), line_no + 1),
        })?;
        let params = record.params().map_err(|e| Error::Frame {
            dataset: dataset.to_string(),
            index: record.index,
            reason: format!("{} line {}: {e}", path.display(), line_no + 1),
        })?;
        frames.push(Frame { index: record.index, params, image: None, audio: record.audio_window });
    }
    Ok(frames)
}

/// Load the dataset described by the manifest at `path`.
pub fn load_dataset(path: &Path) -> Result<VideoDataset> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
    if m.version != FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported manifest version {}", m.version)));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut frames = read_param_file(&resolve(base, &m.params_file), &m.name)?;
    if frames.len() != m.frames {
        return Err(Error::format(path, format!("manifest lists {} frames, parameter file has {}", m.frames, frames.len())));
    }
    if let Some(first) = frames.first() {
        if first.index != m.first_index {
            return Err(Error::format(path, format!("manifest starts at frame {}, parameter file at {}", m.first_index, first.index)));
        }
    }
    if let Some(dir) = &m.image_dir {
        let dir = resolve(base, dir);
        for f in &mut frames {
            let file = dir.join(frame_file(f.index));
            if !file.exists() {
                return Err(Error::Frame { dataset: m.name.clone(), index: f.index, reason: format!("missing image {}", file.display()) });
            }
            let img = read_image(&file)?;
            if let Some(r) = m.resolution {
                if img.height() != r || img.width() != r {
                    return Err(Error::Frame {
                        dataset: m.name.clone(),
                        index: f.index,
                        reason: format!("image is {}x{}, manifest resolution {r}", img.height(), img.width()),
                    });
                }
            }
            f.image = Some(img);
        }
    }
    let dataset = VideoDataset::new(m.name.clone(), m.role, frames)?;
    if dataset_mode(&dataset) != m.mode && m.mode == DriveMode::AudioDriven {
        return Err(Error::format(path, "audio-driven manifest but some frames lack audio windows"));
    }
    Ok(dataset)
}

/// Write a manifest into `out_dir` that references an external parameter file
/// and optional image directory, after checking that both load.
pub fn ingest_dataset(
    name: &str,
    role: DatasetRole,
    params_file: &Path,
    image_dir: Option<&Path>,
    out_dir: &Path,
) -> Result<(DatasetManifest, VideoDataset)> {
    let abs = |p: &Path| fs::canonicalize(p).map_err(Error::io(p));
    let params_file = abs(params_file)?;
    let image_dir = image_dir.map(abs).transpose()?;
    let frames = read_param_file(&params_file, name)?;
    // Images are attached by `load_dataset`; the probe only checks parameters.
    let probe = VideoDataset::new(name, DatasetRole::Auxiliary, frames)?;
    let resolution = match &image_dir {
        Some(dir) => {
            let first = dir.join(frame_file(probe.first_index()));
            Some(read_image(&first)?.height())
        }
        None => None,
    };
    let manifest = DatasetManifest {
        version: FORMAT_VERSION,
        name: name.to_string(),
        role,
        frames: probe.len(),
        first_index: probe.first_index(),
        resolution,
        params_file,
        image_dir,
        mode: dataset_mode(&probe),
    };
    fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    let path = write_manifest(&manifest, out_dir)?;
    let dataset = load_dataset(&path)?;
    Ok((manifest, dataset))
}
