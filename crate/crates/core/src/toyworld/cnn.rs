//! Small strided CNN used by the toy parameter estimator and embedder.

use portrait_autograd::{Adam, AdamConfig, Graph, ParamStore, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{he_bound, Bind, Conv, Linear};

const SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CnnConfig {
    /// Images of other sizes are resized to this side length first.
    pub input_size: usize,
    /// Output channels of the stride-2 4×4 convolutions.
    pub channels: Vec<usize>,
    pub hidden: usize,
    /// Output width of every linear head on the hidden features.
    pub heads: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmallCnn {
    pub prefix: String,
    pub config: CnnConfig,
    pub params: ParamStore,
}

impl SmallCnn {
    pub fn new(prefix: &str, config: CnnConfig, seed: u64) -> Result<Self> {
        if config.channels.is_empty() || config.input_size >> config.channels.len() == 0 {
            return Err(Error::Config(format!("CNN input {} too small for {} layers", config.input_size, config.channels.len())));
        }
        let mut net = Self { prefix: prefix.to_string(), config, params: ParamStore::new() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for c in net.convs() {
            c.init(&mut params, &mut rng, he_bound(c.fan_in(), SLOPE));
        }
        let fc = net.fc();
        fc.init(&mut params, &mut rng, he_bound(fc.in_dim, SLOPE));
        for h in net.heads() {
            h.init(&mut params, &mut rng, (3.0 / h.in_dim as f64).sqrt());
        }
        net.params = params;
        Ok(net)
    }

    pub fn from_params(prefix: &str, config: CnnConfig, params: ParamStore) -> Result<Self> {
        let reference = Self::new(prefix, config, 0)?;
        for (name, t) in reference.params.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                _ => return Err(Error::Value(format!("missing or misshaped parameter `{name}`"))),
            }
        }
        Ok(Self { params, ..reference })
    }

    fn convs(&self) -> Vec<Conv> {
        let mut in_ch = 3;
        self.config
            .channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let conv = Conv::square(format!("{}.conv{i}", self.prefix), in_ch, c, 4, 2, 1);
                in_ch = c;
                conv
            })
            .collect()
    }

    fn flat_dim(&self) -> usize {
        let side = self.config.input_size >> self.config.channels.len();
        side * side * self.config.channels.last().copied().unwrap_or(3)
    }

    fn fc(&self) -> Linear {
        Linear::new(format!("{}.fc", self.prefix), self.flat_dim(), self.config.hidden)
    }

    fn heads(&self) -> Vec<Linear> {
        self.config
            .heads
            .iter()
            .enumerate()
            .map(|(i, &n)| Linear::new(format!("{}.head{i}", self.prefix), self.config.hidden, n))
            .collect()
    }

    /// Hidden features `[n, hidden]` of images `[n, 3, H, W]`.
    pub fn features<'g>(&self, g: &'g Graph, p: Bind<'_>, images: Var<'g>) -> Result<Var<'g>> {
        let s = images.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::Shape(format!("CNN input {s:?}, expected [n, 3, h, w]")));
        }
        let size = self.config.input_size;
        let mut x = if s[2] != size || s[3] != size { images.resize_bilinear(size, size) } else { images };
        for c in self.convs() {
            x = c.forward(g, p, x).leaky_relu(SLOPE);
        }
        let x = x.reshape(&[s[0], self.flat_dim()]);
        Ok(self.fc().forward(g, p, x).leaky_relu(SLOPE))
    }

    pub fn head<'g>(&self, g: &'g Graph, p: Bind<'_>, features: Var<'g>, i: usize) -> Var<'g> {
        self.heads()[i].forward(g, p, features)
    }
}

/// Options of a supervised fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub iters: usize,
    pub batch: usize,
    pub lr: f64,
    /// Standard deviation of Gaussian pixel noise added to training inputs.
    pub noise: f64,
}

/// Adam over batches produced by `sample`, which returns images
/// `[n, 3, H, W]` and whatever the loss needs to score them. Gaussian pixel
/// noise is added to the images; the learning rate decays linearly to a
/// tenth of its start value. Returns the last batch loss.
pub(crate) fn fit_cnn<B>(
    net: &mut SmallCnn,
    fit: &FitConfig,
    seed: u64,
    mut sample: impl FnMut(&mut ChaCha8Rng) -> Result<(Tensor, B)>,
    loss: impl for<'g> Fn(&'g Graph, &SmallCnn, Var<'g>, &B) -> Result<Var<'g>>,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::Normal::new(0.0, fit.noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut adam = Adam::new(AdamConfig::with_lr(fit.lr));
    let mut last = f64::NAN;
    for it in 0..fit.iters {
        adam.config.lr = fit.lr * (1.0 - 0.9 * it as f64 / fit.iters.max(1) as f64);
        let (images, aux) = sample(&mut rng)?;
        let mut images = images;
        if fit.noise > 0.0 {
            use rand::distr::Distribution;
            images.data_mut().iter_mut().for_each(|v| *v += normal.sample(&mut rng));
        }
        let g = Graph::new();
        let l = loss(&g, net, g.constant(images), &aux)?;
        last = l.value().item();
        if !last.is_finite() {
            return Err(Error::Value(format!("non-finite loss at fit iteration {it}")));
        }
        let grads = g.backward(l).params();
        adam.step(&mut net.params, &grads);
    }
    Ok(last)
}

/// Cycles through `0..n` in freshly shuffled epochs.
pub(crate) struct EpochSampler {
    order: Vec<usize>,
    cursor: usize,
}

impl EpochSampler {
    pub(crate) fn new(n: usize) -> Self {
        Self { order: (0..n).collect(), cursor: n }
    }

    pub(crate) fn next_batch(&mut self, rng: &mut ChaCha8Rng, batch: usize) -> Vec<usize> {
        let n = self.order.len();
        let mut idx = Vec::with_capacity(batch);
        while idx.len() < batch {
            if self.cursor == n {
                self.order.shuffle(rng);
                self.cursor = 0;
            }
            idx.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        idx
    }
}

/// Rows `idx` of a `[n, ...]` tensor.
pub(crate) fn gather_rows(t: &Tensor, idx: &[usize]) -> Tensor {
    let per = t.len() / t.shape()[0];
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * per..(i + 1) * per]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    Tensor::new(shape, data)
}
