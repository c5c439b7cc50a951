//! Synthetic toy-face world: a deterministic renderer, smooth video
//! trajectories, a learned parameter estimator and embedder, dataset
//! persistence and nearest-neighbour texture retrieval.

pub mod cnn;
pub mod embedder;
pub mod estimator;
pub mod io;
pub mod nearest;
pub mod render;
pub mod video;

pub use cnn::{CnnConfig, FitConfig};
pub use embedder::{fit_toy_embedder, EmbedderFitConfig, ToyEmbedder};
pub use estimator::{fit_toy_estimator, EstimatorFitConfig, FitReport, ToyEstimator};
pub use io::{frame_file, ingest_dataset, load_dataset, read_image, save_dataset, write_image, DatasetManifest};
pub use nearest::nearest_texture;
pub use render::{render_toy_face, used_dims, ToyIdentity, HEAD_SHIFT};
pub use video::{make_param_video, make_toy_video, toy_trajectory, with_toy_audio, TrajectoryConfig};
