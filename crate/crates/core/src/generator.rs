//! Coordinate-conditioned image generator.
//!
//! An MLP maps every grid pixel's conditioning vector to a feature vector and
//! a coarse RGB value. The feature grid is decoded by residual blocks and
//! bilinear ×2 upsampling blocks into the full-resolution image.

use portrait_autograd::{concat_cols, Graph, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{encoded_grid, encoded_params, EncodingConfig};
use crate::error::{Error, Result};
use crate::nn::{he_bound, Bind, Conv, Linear};
use crate::types::{DriveMode, FaceParams, Image, AUDIO_DIM, LATENT_DIM};

const SLOPE: f64 = 0.2;
const NORM_EPS: f64 = 1e-5;
const MIN_CHANNELS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleMode {
    /// Bilinear ×2 resize followed by a 3×3 convolution.
    Bilinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub mlp_layers: usize,
    pub mlp_width: usize,
    pub feature_dim: usize,
    pub residual_blocks: usize,
    pub upsample_blocks: usize,
    pub upsample_mode: UpsampleMode,
    pub grid_size: usize,
    #[serde(default)]
    pub encoding: EncodingConfig,
    pub mode: DriveMode,
}

impl GeneratorConfig {
    /// Full-size network: 64×64 grid decoded to 256×256.
    pub fn full_size(mode: DriveMode) -> Self {
        Self {
            mlp_layers: 8,
            mlp_width: 128,
            feature_dim: 128,
            residual_blocks: 6,
            upsample_blocks: 2,
            upsample_mode: UpsampleMode::Bilinear,
            grid_size: 64,
            encoding: EncodingConfig::default(),
            mode,
        }
    }

    /// Laptop-sized network: 16×16 grid decoded to 64×64.
    pub fn desk(mode: DriveMode) -> Self {
        Self { mlp_width: 64, feature_dim: 32, residual_blocks: 2, grid_size: 16, ..Self::full_size(mode) }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoding.validate()?;
        if self.mlp_layers < 2 {
            return Err(Error::Config("the MLP needs at least 2 layers".into()));
        }
        if self.mlp_width == 0 || self.feature_dim == 0 {
            return Err(Error::Config("MLP width and feature dimension must be positive".into()));
        }
        if self.grid_size < 2 {
            return Err(Error::Config(format!("grid size {} is below 2", self.grid_size)));
        }
        Ok(())
    }

    pub fn output_size(&self) -> usize {
        self.grid_size << self.upsample_blocks
    }

    pub fn conditioning_dim(&self) -> usize {
        self.encoding.conditioning_dim(self.mode)
    }

    /// Channel count after upsample block `i` (0-based).
    fn upsample_channels(&self, i: usize) -> usize {
        (self.feature_dim >> (i + 1)).max(MIN_CHANNELS)
    }
}

/// Differentiable generator outputs, both `[n, 3, h, w]`.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorOutput<'g> {
    pub image: Var<'g>,
    pub coarse: Var<'g>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorModel {
    pub config: GeneratorConfig,
    pub params: ParamStore,
}

impl GeneratorModel {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let model = Self { config, params: ParamStore::new() };
        for (i, layer) in model.hidden_layers().iter().enumerate() {
            let slope = if i + 1 < model.config.mlp_layers { 0.0 } else { 1.0 };
            layer.init(&mut params, &mut rng, he_bound(layer.in_dim, slope));
        }
        let head = model.coarse_head();
        head.init(&mut params, &mut rng, (1.0 / head.in_dim as f64).sqrt());
        for block in 0..model.config.residual_blocks {
            for (conv, norm) in model.residual_convs(block) {
                conv.init(&mut params, &mut rng, he_bound(conv.fan_in(), SLOPE));
                init_norm(&mut params, &norm, conv.out_ch);
            }
        }
        for i in 0..model.config.upsample_blocks {
            let (conv, norm) = model.upsample_conv(i);
            conv.init(&mut params, &mut rng, he_bound(conv.fan_in(), SLOPE));
            init_norm(&mut params, &norm, conv.out_ch);
        }
        let out = model.output_conv();
        out.init(&mut params, &mut rng, (3.0 / out.fan_in() as f64).sqrt());
        Ok(Self { params, ..model })
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Fully connected layers; the last one emits the feature vector.
    fn hidden_layers(&self) -> Vec<Linear> {
        let c = &self.config;
        (0..c.mlp_layers)
            .map(|i| {
                let in_dim = if i == 0 { c.conditioning_dim() } else { c.mlp_width };
                let out_dim = if i + 1 == c.mlp_layers { c.feature_dim } else { c.mlp_width };
                Linear::new(format!("gen.mlp{i}"), in_dim, out_dim)
            })
            .collect()
    }

    fn coarse_head(&self) -> Linear {
        Linear::new("gen.rgb", self.config.mlp_width, 3)
    }

    fn residual_convs(&self, block: usize) -> [(Conv, String); 2] {
        let f = self.config.feature_dim;
        [0, 1].map(|j| {
            let name = format!("gen.res{block}.conv{j}");
            (Conv::square(&name, f, f, 3, 1, 1).without_bias(), format!("gen.res{block}.norm{j}"))
        })
    }

    fn upsample_conv(&self, i: usize) -> (Conv, String) {
        let in_ch = if i == 0 { self.config.feature_dim } else { self.config.upsample_channels(i - 1) };
        let out_ch = self.config.upsample_channels(i);
        (Conv::square(format!("gen.up{i}.conv"), in_ch, out_ch, 3, 1, 1).without_bias(), format!("gen.up{i}.norm"))
    }

    fn output_conv(&self) -> Conv {
        let in_ch = match self.config.upsample_blocks {
            0 => self.config.feature_dim,
            n => self.config.upsample_channels(n - 1),
        };
        Conv::square("gen.out", in_ch, 3, 3, 1, 1)
    }

    /// Per-pixel MLP: `[n, cond_dim]` → features `[n, feature_dim]` and coarse RGB `[n, 3]`.
    pub fn mlp_forward<'g>(&self, g: &'g Graph, p: Bind<'_>, cond: Var<'g>) -> Result<(Var<'g>, Var<'g>)> {
        let shape = cond.shape();
        if shape.len() != 2 || shape[1] != self.config.conditioning_dim() {
            return Err(Error::Shape(format!(
                "conditioning {shape:?}, model expects [n, {}]",
                self.config.conditioning_dim()
            )));
        }
        let layers = self.hidden_layers();
        let (last, hidden) = layers.split_last().expect("at least two layers");
        let mut h = cond;
        for layer in hidden {
            h = layer.forward(g, p, h).relu();
        }
        let features = last.forward(g, p, h);
        let coarse = self.coarse_head().forward(g, p, h).tanh();
        Ok((features, coarse))
    }

    /// Feature grid `[n, feature_dim, grid, grid]` → image `[n, 3, out, out]` in `[-1, 1]`.
    pub fn decode<'g>(&self, g: &'g Graph, p: Bind<'_>, features: Var<'g>) -> Result<Var<'g>> {
        let s = features.shape();
        let c = &self.config;
        if s.len() != 4 || s[1] != c.feature_dim || s[2] != c.grid_size || s[3] != c.grid_size {
            return Err(Error::Shape(format!(
                "feature map {s:?}, decoder expects [n, {}, {}, {}]",
                c.feature_dim, c.grid_size, c.grid_size
            )));
        }
        let mut x = features;
        for block in 0..c.residual_blocks {
            let [(c0, n0), (c1, n1)] = self.residual_convs(block);
            let y = norm(g, p, c0.forward(g, p, x), &n0).leaky_relu(SLOPE);
            let y = norm(g, p, c1.forward(g, p, y), &n1);
            x = x.add(y);
        }
        for i in 0..c.upsample_blocks {
            let (conv, n) = self.upsample_conv(i);
            let (h, w) = (x.shape()[2], x.shape()[3]);
            x = bilinear_upsample(x, h, w);
            x = norm(g, p, conv.forward(g, p, x), &n).leaky_relu(SLOPE);
        }
        Ok(self.output_conv().forward(g, p, x).tanh())
    }

    /// Conditioning rows for a batch: `[n · grid², cond_dim]`, pixel-major
    /// within each sample. `audio` is `[n, 32]` in audio-driven mode.
    pub fn conditioning<'g>(
        &self,
        g: &'g Graph,
        params: &[&FaceParams],
        audio: Option<Var<'g>>,
        latents: Var<'g>,
    ) -> Result<Var<'g>> {
        let c = &self.config;
        let n = params.len();
        if latents.shape() != [n, LATENT_DIM] {
            return Err(Error::Shape(format!("latents {:?}, expected [{n}, {LATENT_DIM}]", latents.shape())));
        }
        match (c.mode, audio) {
            (DriveMode::AudioDriven, Some(a)) if a.shape() == [n, AUDIO_DIM] => {}
            (DriveMode::VideoDriven, None) => {}
            (DriveMode::AudioDriven, Some(a)) => {
                return Err(Error::Shape(format!("audio {:?}, expected [{n}, {AUDIO_DIM}]", a.shape())))
            }
            (expected, a) => {
                let actual = if a.is_some() { DriveMode::AudioDriven } else { DriveMode::VideoDriven };
                return Err(Error::Mode { expected, actual });
            }
        }
        let pixels = c.grid_size * c.grid_size;
        let grid = encoded_grid(c.grid_size, &c.encoding)?;
        let coord_dim = grid.len() / pixels;
        let prefix_dim = c.encoding.prefix_dim();
        let mut prefix = Vec::with_capacity(n * pixels * prefix_dim);
        for fp in params {
            let enc = encoded_params(fp, &c.encoding);
            for px in grid.chunks_exact(coord_dim) {
                prefix.extend_from_slice(px);
                prefix.extend_from_slice(&enc);
            }
        }
        let rows: Vec<usize> = (0..n).flat_map(|b| std::iter::repeat_n(b, pixels)).collect();
        let mut parts = vec![g.constant(Tensor::new([n * pixels, prefix_dim], prefix))];
        if let Some(a) = audio {
            parts.push(a.index_rows(&rows));
        }
        parts.push(latents.index_rows(&rows));
        Ok(concat_cols(&parts))
    }

    /// Full forward pass from conditioning rows of `n` samples.
    pub fn forward<'g>(&self, g: &'g Graph, p: Bind<'_>, cond: Var<'g>, n: usize) -> Result<GeneratorOutput<'g>> {
        let s = self.config.grid_size;
        if cond.shape()[0] != n * s * s {
            return Err(Error::Shape(format!("{} conditioning rows for {n} samples of {s}x{s}", cond.shape()[0])));
        }
        let (features, coarse) = self.mlp_forward(g, p, cond)?;
        let to_map = |v: Var<'g>, c: usize| v.reshape(&[n, s, s, c]).permute(&[0, 3, 1, 2]);
        let features = to_map(features, self.config.feature_dim);
        let coarse = to_map(coarse, 3);
        let image = self.decode(g, p, features)?;
        Ok(GeneratorOutput { image, coarse })
    }

    /// Image and coarse map for one frame with frozen weights.
    pub fn generate(&self, params: &FaceParams, latent: &[f64]) -> Result<(Image, Image)> {
        if params.mode() != self.config.mode {
            return Err(Error::Mode { expected: self.config.mode, actual: params.mode() });
        }
        if latent.len() != LATENT_DIM {
            return Err(Error::Shape(format!("latent has {} entries, expected {LATENT_DIM}", latent.len())));
        }
        let g = Graph::new();
        let latents = g.constant(Tensor::new([1, LATENT_DIM], latent.to_vec()));
        let audio = params.audio().map(|a| g.constant(Tensor::new([1, AUDIO_DIM], a.to_vec())));
        let cond = self.conditioning(&g, &[params], audio, latents)?;
        let out = self.forward(&g, Bind::frozen(&self.params), cond, 1)?;
        let image = Image::unbatch(&out.image.value())?.remove(0);
        let coarse = Image::unbatch(&out.coarse.value())?.remove(0);
        Ok((image, coarse))
    }
}

fn init_norm(params: &mut ParamStore, name: &str, channels: usize) {
    params.insert(format!("{name}.scale"), Tensor::full([channels], 1.0));
    params.insert(format!("{name}.shift"), Tensor::zeros([channels]));
}

fn norm<'g>(g: &'g Graph, p: Bind<'_>, x: Var<'g>, name: &str) -> Var<'g> {
    x.instance_norm(NORM_EPS)
        .mul_channels(p.var(g, &format!("{name}.scale")))
        .add_channel_bias(p.var(g, &format!("{name}.shift")))
}

/// ×2 bilinear upsampling of a `[n, c, h, w]` map with aligned corners.
pub fn bilinear_upsample(x: Var<'_>, h: usize, w: usize) -> Var<'_> {
    x.resize_bilinear(2 * h, 2 * w)
}
