//! Nearest-neighbour texture retrieval over performing frames.

use crate::encoding::param_distance;
use crate::error::{Error, Result};
use crate::types::{FaceParams, Frame, ParamWeights, VideoDataset};

/// Performing frame whose parameters are closest to `query` under `weights`;
/// ties go to the lowest frame index.
pub fn nearest_texture<'a>(query: &FaceParams, performing: &'a VideoDataset, weights: ParamWeights) -> Result<&'a Frame> {
    if !performing.has_images() {
        return Err(Error::Value(format!("dataset `{}` has no frames with images to retrieve from", performing.name())));
    }
    let mut best: Option<(&Frame, f64)> = None;
    for f in performing.frames() {
        let d = param_distance(query, &f.params, weights)?;
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((f, d));
        }
    }
    Ok(best.expect("dataset is non-empty").0)
}
