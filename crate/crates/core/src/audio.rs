//! Speech-feature window encoder: two strided 1-d convolutions over time
//! (16 → 8 → 4 steps), residual self-attention, temporal mean pooling and a
//! linear map to the 32-dim audio vector.

use portrait_autograd::{concat0, Conv2dGeometry, Graph, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{he_bound, Bind, Conv, Linear};
use crate::types::{AudioWindow, AUDIO_DIM, AUDIO_FEATURES, AUDIO_STEPS};

const SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AudioEncoderConfig {
    pub hidden: usize,
}

impl Default for AudioEncoderConfig {
    fn default() -> Self {
        Self { hidden: 64 }
    }
}

/// Query, key and value projections of one attention layer.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
}

/// Attention output `[t, d]` and the row-stochastic weights `[t, t]`.
pub struct AttentionOutput<'g> {
    pub output: Var<'g>,
    pub weights: Var<'g>,
}

impl SelfAttention {
    pub fn new(name: &str, dim: usize) -> Self {
        Self {
            query: Linear::new(format!("{name}.q"), dim, dim),
            key: Linear::new(format!("{name}.k"), dim, dim),
            value: Linear::new(format!("{name}.v"), dim, dim),
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let bound = (3.0 / self.query.in_dim as f64).sqrt();
        for l in [&self.query, &self.key, &self.value] {
            l.init(store, rng, bound);
        }
    }

    /// `x + softmax(q kᵀ / √d) v` over the rows of `seq` (`[t, d]`).
    pub fn forward<'g>(&self, g: &'g Graph, p: Bind<'_>, seq: Var<'g>) -> Result<AttentionOutput<'g>> {
        let s = seq.shape();
        if s.len() != 2 || s[0] == 0 || s[1] != self.query.in_dim {
            return Err(Error::Shape(format!("attention input {s:?}, expected [t >= 1, {}]", self.query.in_dim)));
        }
        let q = self.query.forward(g, p, seq);
        let k = self.key.forward(g, p, seq);
        let v = self.value.forward(g, p, seq);
        let weights = q.matmul_t(k).mul_scalar(1.0 / (s[1] as f64).sqrt()).softmax_rows();
        Ok(AttentionOutput { output: seq.add(weights.matmul(v)), weights })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioEncoder {
    pub config: AudioEncoderConfig,
    pub params: ParamStore,
}

impl AudioEncoder {
    pub fn new(config: AudioEncoderConfig, seed: u64) -> Result<Self> {
        if config.hidden == 0 {
            return Err(Error::Config("audio encoder width must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let enc = Self { config, params: ParamStore::new() };
        for conv in enc.convs() {
            conv.init(&mut params, &mut rng, he_bound(conv.fan_in(), SLOPE));
        }
        enc.attention().init(&mut params, &mut rng);
        let out = enc.output();
        out.init(&mut params, &mut rng, (3.0 / out.in_dim as f64).sqrt());
        Ok(Self { params, ..enc })
    }

    fn convs(&self) -> [Conv; 2] {
        let h = self.config.hidden;
        let time_conv = |name: &str, in_ch: usize| Conv {
            name: name.to_string(),
            in_ch,
            out_ch: h,
            kernel: [1, 3],
            geometry: Conv2dGeometry { stride: [1, 2], padding: [0, 1] },
            bias: true,
        };
        [time_conv("audio.conv0", AUDIO_FEATURES), time_conv("audio.conv1", h)]
    }

    fn attention(&self) -> SelfAttention {
        SelfAttention::new("audio.attn", self.config.hidden)
    }

    fn output(&self) -> Linear {
        Linear::new("audio.out", self.config.hidden, AUDIO_DIM)
    }

    /// Audio vectors `[n, 32]` for windows `[n, 16, 29]` (time-major).
    pub fn forward<'g>(&self, g: &'g Graph, p: Bind<'_>, windows: Var<'g>) -> Result<Var<'g>> {
        let s = windows.shape();
        if s.len() != 3 || s[1] != AUDIO_STEPS || s[2] != AUDIO_FEATURES {
            return Err(Error::Shape(format!("audio windows {s:?}, expected [n, {AUDIO_STEPS}, {AUDIO_FEATURES}]")));
        }
        let n = s[0];
        let h = self.config.hidden;
        // [n, t, f] -> [n, f, 1, t]: features become channels, time the width axis
        let mut x = windows.permute(&[0, 2, 1]).reshape(&[n, AUDIO_FEATURES, 1, AUDIO_STEPS]);
        for conv in self.convs() {
            x = conv.forward(g, p, x).leaky_relu(SLOPE);
        }
        let steps = x.shape()[3];
        let seq = x.reshape(&[n, h, steps]).permute(&[0, 2, 1]).reshape(&[n * steps, h]);
        let attn = self.attention();
        let mut attended = Vec::with_capacity(n);
        for b in 0..n {
            attended.push(attn.forward(g, p, seq.narrow0(b * steps, steps))?.output);
        }
        let pooled = concat0(&attended).mean_row_groups(steps);
        Ok(self.output().forward(g, p, pooled))
    }

    pub fn windows_tensor(windows: &[&AudioWindow]) -> Tensor {
        let data = windows.iter().flat_map(|w| w.features().iter().copied()).collect();
        Tensor::new([windows.len(), AUDIO_STEPS, AUDIO_FEATURES], data)
    }

    /// Audio vector of one window with frozen weights.
    pub fn encode_audio(&self, window: &AudioWindow) -> Result<Vec<f64>> {
        let g = Graph::new();
        let x = g.constant(Self::windows_tensor(&[window]));
        Ok(self.forward(&g, Bind::frozen(&self.params), x)?.value().into_vec())
    }
}
