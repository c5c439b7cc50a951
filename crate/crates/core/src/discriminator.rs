//! Patch discriminator with spectrally normalized convolutions.
//!
//! The stack is `n_layers` stride-2 4×4 convolutions followed by two stride-1
//! 4×4 convolutions, the last emitting one logit per patch. With three
//! stride-2 layers each logit sees a 70×70 window and a 256×256 input yields a
//! 30×30 map.

use portrait_autograd::{Graph, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{he_bound, uniform, Bind, Conv};

const SLOPE: f64 = 0.2;
const MAX_WIDTH_FACTOR: usize = 8;
const SN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub base_channels: usize,
    /// Number of stride-2 layers.
    pub n_layers: usize,
    pub input_size: usize,
}

impl DiscriminatorConfig {
    pub fn full_size() -> Self {
        Self { base_channels: 64, n_layers: 3, input_size: 256 }
    }

    pub fn desk(input_size: usize) -> Self {
        Self { base_channels: 8, n_layers: 3, input_size }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.n_layers == 0 {
            return Err(Error::Config("discriminator needs channels and at least one stride-2 layer".into()));
        }
        let mut s = self.input_size;
        for conv in self.convs() {
            let (k, st, p) = (conv.kernel[0], conv.geometry.stride[0], conv.geometry.padding[0]);
            if s + 2 * p < k {
                return Err(Error::Config(format!("input size {} too small for the stack", self.input_size)));
            }
            s = (s + 2 * p - k) / st + 1;
        }
        Ok(())
    }

    pub fn convs(&self) -> Vec<Conv> {
        let width = |i: usize| self.base_channels * (1usize << i).min(MAX_WIDTH_FACTOR);
        let mut convs = vec![Conv::square("disc.conv0", 3, width(0), 4, 2, 1)];
        for i in 1..self.n_layers {
            convs.push(Conv::square(format!("disc.conv{i}"), width(i - 1), width(i), 4, 2, 1));
        }
        let n = self.n_layers;
        convs.push(Conv::square(format!("disc.conv{n}"), width(n - 1), width(n), 4, 1, 1));
        convs.push(Conv::square(format!("disc.conv{}", n + 1), width(n), 1, 4, 1, 1));
        convs
    }

    /// Side length of the logit map.
    pub fn output_size(&self) -> usize {
        self.convs().iter().fold(self.input_size, |s, c| {
            (s + 2 * c.geometry.padding[0] - c.kernel[0]) / c.geometry.stride[0] + 1
        })
    }
}

/// Result of normalizing one weight matrix by its estimated top singular value.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralNorm {
    pub weight: Tensor,
    pub sigma: f64,
    /// Updated left singular vector estimate.
    pub u: Vec<f64>,
    /// Set when the weight is zero and was returned unchanged.
    pub degenerate: bool,
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > SN_EPS {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// `W v` and `Wᵀ u` for `W` viewed as `rows × cols`.
fn mat_vec(w: &[f64], rows: usize, cols: usize, v: &[f64]) -> Vec<f64> {
    (0..rows).map(|r| w[r * cols..(r + 1) * cols].iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn mat_t_vec(w: &[f64], rows: usize, cols: usize, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        for (o, a) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *o += a * u[r];
        }
    }
    out
}

/// Power-iteration estimate `(σ, u, v)` of the top singular triple of a weight
/// viewed as `[shape[0], rest]`, starting from `u`.
fn power_iteration(weight: &Tensor, u: &[f64], iterations: usize) -> (f64, Vec<f64>, Vec<f64>) {
    let rows = weight.shape()[0];
    let cols = weight.len() / rows;
    let w = weight.data();
    let mut u = u.to_vec();
    normalize(&mut u);
    let mut v = mat_t_vec(w, rows, cols, &u);
    normalize(&mut v);
    for _ in 0..iterations {
        v = mat_t_vec(w, rows, cols, &u);
        normalize(&mut v);
        u = mat_vec(w, rows, cols, &v);
        normalize(&mut u);
    }
    let wv = mat_vec(w, rows, cols, &v);
    let sigma = wv.iter().zip(&u).map(|(a, b)| a * b).sum();
    (sigma, u, v)
}

/// `weight / σ̂` after `iterations` power-iteration steps from `u`.
pub fn spectral_normalize(weight: &Tensor, u: &[f64], iterations: usize) -> Result<SpectralNorm> {
    if weight.shape().is_empty() || u.len() != weight.shape()[0] {
        return Err(Error::Shape(format!("u of length {} for weight {:?}", u.len(), weight.shape())));
    }
    if !weight.is_finite() {
        return Err(Error::Value("non-finite weight".into()));
    }
    if weight.max_abs() == 0.0 {
        log::warn!("spectral normalization of a zero weight; returned unchanged");
        return Ok(SpectralNorm { weight: weight.clone(), sigma: 0.0, u: u.to_vec(), degenerate: true });
    }
    let (sigma, u, _) = power_iteration(weight, u, iterations);
    if sigma.abs() <= SN_EPS {
        return Ok(SpectralNorm { weight: weight.clone(), sigma, u, degenerate: true });
    }
    Ok(SpectralNorm { weight: weight.map(|x| x / sigma), sigma, u, degenerate: false })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorModel {
    pub config: DiscriminatorConfig,
    pub params: ParamStore,
    /// Power-iteration vectors, one `[out_channels]` entry per convolution.
    pub sn_state: ParamStore,
}

impl DiscriminatorModel {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut sn_state = ParamStore::new();
        for conv in config.convs() {
            conv.init(&mut params, &mut rng, he_bound(conv.fan_in(), SLOPE));
            sn_state.insert(Self::u_name(&conv), uniform(&mut rng, &[conv.out_ch], 1.0));
        }
        let mut model = Self { config, params, sn_state };
        model.power_iterate(1);
        Ok(model)
    }

    fn u_name(conv: &Conv) -> String {
        format!("{}.u", conv.name)
    }

    /// Advance every stored singular-vector estimate by `iterations` steps.
    pub fn power_iterate(&mut self, iterations: usize) {
        for conv in self.config.convs() {
            let w = self.params.get(&conv.weight_name()).expect("weight");
            let key = Self::u_name(&conv);
            let u = self.sn_state.get(&key).expect("u");
            let (_, u, _) = power_iteration(w, u.data(), iterations);
            self.sn_state.insert(key, Tensor::new([conv.out_ch], u));
        }
    }

    /// `W / σ(W)` with σ from the stored `u`; `u` and `v` are treated as
    /// constants, so the gradient flows through `W` in both places.
    fn normalized_weight<'g>(&self, g: &'g Graph, p: Bind<'_>, conv: &Conv) -> Var<'g> {
        let w = p.var(g, &conv.weight_name());
        let wt = w.value();
        if wt.max_abs() == 0.0 {
            return w;
        }
        let u = self.sn_state.get(&Self::u_name(conv)).expect("u");
        let (_, u, v) = power_iteration(&wt, u.data(), 0);
        let rows = conv.out_ch;
        let cols = wt.len() / rows;
        let wm = w.reshape(&[rows, cols]);
        let v = g.constant(Tensor::new([cols, 1], v));
        let u = g.constant(Tensor::new([rows, 1], u));
        let sigma = wm.matmul(v).mul(u).sum();
        let inv = g.constant(Tensor::scalar(1.0)).div(sigma);
        w.scale_by(inv)
    }

    /// Effective (normalized) weights of every convolution.
    pub fn effective_weights(&self) -> Vec<Tensor> {
        let g = Graph::new();
        let p = Bind::frozen(&self.params);
        self.config.convs().iter().map(|c| self.normalized_weight(&g, p, c).value()).collect()
    }

    /// Patch logits `[n, 1, s, s]` for images `[n, 3, H, W]`.
    pub fn forward<'g>(&self, g: &'g Graph, p: Bind<'_>, images: Var<'g>) -> Result<Var<'g>> {
        let s = images.shape();
        let size = self.config.input_size;
        if s.len() != 4 || s[1] != 3 || s[2] != size || s[3] != size {
            return Err(Error::Shape(format!("discriminator input {s:?}, expected [n, 3, {size}, {size}]")));
        }
        let convs = self.config.convs();
        let mut x = images;
        for (i, conv) in convs.iter().enumerate() {
            let w = self.normalized_weight(g, p, conv);
            x = conv.forward_with(g, p, x, w);
            if i + 1 < convs.len() {
                x = x.leaky_relu(SLOPE);
            }
        }
        Ok(x)
    }
}
