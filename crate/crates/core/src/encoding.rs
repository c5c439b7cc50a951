//! Positional encoding, coordinate grids, parameter distances and the
//! per-pixel conditioning vector fed to the generator.
//!
//! Conditioning layout, fixed for checkpoint portability:
//! `enc(coord) ‖ enc(pose) ‖ enc(gaze) ‖ expression ‖ [audio] ‖ latent`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{DriveMode, FaceParams, ParamWeights, AUDIO_DIM, EXPR_DIM, GAZE_DIM, LATENT_DIM, POSE_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncodingConfig {
    pub n_freq_coord: usize,
    pub n_freq_pose: usize,
    pub n_freq_gaze: usize,
    /// Encode expressions with `n_freq_pose` bands instead of feeding them raw.
    pub encode_expression: bool,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self { n_freq_coord: 10, n_freq_pose: 4, n_freq_gaze: 4, encode_expression: false }
    }
}

impl EncodingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_freq_coord == 0 || self.n_freq_pose == 0 || self.n_freq_gaze == 0 {
            return Err(Error::Config("encoding frequencies must be at least 1".into()));
        }
        Ok(())
    }

    /// Width of the parameter-dependent prefix (everything before audio and latent).
    pub fn prefix_dim(&self) -> usize {
        let expr = if self.encode_expression { 2 * self.n_freq_pose * EXPR_DIM } else { EXPR_DIM };
        2 * self.n_freq_coord * 2 + 2 * self.n_freq_pose * POSE_DIM + 2 * self.n_freq_gaze * GAZE_DIM + expr
    }

    pub fn conditioning_dim(&self, mode: DriveMode) -> usize {
        let audio = if mode == DriveMode::AudioDriven { AUDIO_DIM } else { 0 };
        self.prefix_dim() + audio + LATENT_DIM
    }
}

fn encode_into(x: &[f64], n_freq: usize, out: &mut Vec<f64>) {
    for k in 0..n_freq {
        let w = (1u64 << k) as f64 * std::f64::consts::PI;
        out.extend(x.iter().map(|v| (w * v).sin()));
        out.extend(x.iter().map(|v| (w * v).cos()));
    }
}

/// `[sin(2⁰πx), cos(2⁰πx), …, sin(2ⁿ⁻¹πx), cos(2ⁿ⁻¹πx)]`, each band holding
/// the sines of every component followed by their cosines.
pub fn positional_encode(x: &[f64], n_freq: usize) -> Result<Vec<f64>> {
    if n_freq == 0 {
        return Err(Error::Value("positional encoding needs at least one band".into()));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Value(format!("non-finite input at component {i}")));
    }
    let mut out = Vec::with_capacity(2 * n_freq * x.len());
    encode_into(x, n_freq, &mut out);
    Ok(out)
}

/// Row-major `h × w` grid of `(x, y)` pairs spanning `[-1, 1]²` with the
/// corners included; `x` varies along a row.
pub fn make_coordinate_grid(h: usize, w: usize) -> Result<Vec<[f64; 2]>> {
    if h < 2 || w < 2 {
        return Err(Error::Value(format!("coordinate grid must be at least 2x2, got {h}x{w}")));
    }
    let axis = |i: usize, n: usize| -1.0 + 2.0 * i as f64 / (n - 1) as f64;
    Ok((0..h).flat_map(|y| (0..w).map(move |x| [axis(x, w), axis(y, h)])).collect())
}

/// Encoded coordinate features of every grid pixel, `grid² × 4·n_freq_coord`.
pub(crate) fn encoded_grid(grid: usize, cfg: &EncodingConfig) -> Result<Vec<f64>> {
    let coords = make_coordinate_grid(grid, grid)?;
    let mut out = Vec::with_capacity(coords.len() * 4 * cfg.n_freq_coord);
    for c in &coords {
        encode_into(c, cfg.n_freq_coord, &mut out);
    }
    Ok(out)
}

/// `enc(pose) ‖ enc(gaze) ‖ expression`: the per-frame part of the prefix.
pub(crate) fn encoded_params(params: &FaceParams, cfg: &EncodingConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(cfg.prefix_dim());
    encode_into(params.pose(), cfg.n_freq_pose, &mut out);
    encode_into(params.gaze(), cfg.n_freq_gaze, &mut out);
    if cfg.encode_expression {
        encode_into(params.expression(), cfg.n_freq_pose, &mut out);
    } else {
        out.extend_from_slice(params.expression());
    }
    out
}

/// Generator input for one pixel.
pub fn build_conditioning_vector(
    coord: [f64; 2],
    params: &FaceParams,
    latent: &[f64],
    cfg: &EncodingConfig,
    mode: DriveMode,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if params.mode() != mode {
        return Err(Error::Mode { expected: mode, actual: params.mode() });
    }
    if latent.len() != LATENT_DIM {
        return Err(Error::Shape(format!("latent has {} entries, expected {LATENT_DIM}", latent.len())));
    }
    let mut out = positional_encode(&coord, cfg.n_freq_coord)?;
    out.extend(encoded_params(params, cfg));
    if let Some(audio) = params.audio() {
        out.extend_from_slice(audio);
    }
    out.extend_from_slice(latent);
    debug_assert_eq!(out.len(), cfg.conditioning_dim(mode));
    Ok(out)
}

/// `sqrt(w_p‖Δpose‖² + w_e‖Δexpression‖² + w_g‖Δgaze‖²)`.
pub fn param_distance(a: &FaceParams, b: &FaceParams, w: ParamWeights) -> Result<f64> {
    if w.pose < 0.0 || w.expression < 0.0 || w.gaze < 0.0 || !(w.pose + w.expression + w.gaze).is_finite() {
        return Err(Error::Value(format!("distance weights must be finite and non-negative, got {w:?}")));
    }
    if a.mode() != b.mode() {
        return Err(Error::Mode { expected: a.mode(), actual: b.mode() });
    }
    let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
    let d2 = w.pose * sq(a.pose(), b.pose())
        + w.expression * sq(a.expression(), b.expression())
        + w.gaze * sq(a.gaze(), b.gaze());
    Ok(d2.sqrt())
}
