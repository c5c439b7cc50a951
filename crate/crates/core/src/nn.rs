//! Layer building blocks over named parameters.

use portrait_autograd::{Conv2dGeometry, Graph, ParamStore, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Parameter source for a forward pass: either trainable graph leaves or
/// frozen constants.
#[derive(Clone, Copy)]
pub struct Bind<'a> {
    pub store: &'a ParamStore,
    pub trainable: bool,
}

impl<'a> Bind<'a> {
    pub fn trainable(store: &'a ParamStore) -> Self {
        Self { store, trainable: true }
    }

    pub fn frozen(store: &'a ParamStore) -> Self {
        Self { store, trainable: false }
    }

    pub fn var<'g>(&self, g: &'g Graph, name: &str) -> Var<'g> {
        if self.trainable {
            g.param(self.store, name)
        } else {
            g.frozen(self.store, name)
        }
    }
}

/// Uniform `[-bound, bound]` weights.
pub(crate) fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-bound..bound)).collect())
}

/// He-uniform bound for a layer followed by a leaky ReLU of `slope`.
pub(crate) fn he_bound(fan_in: usize, slope: f64) -> f64 {
    (6.0 / ((1.0 + slope * slope) * fan_in as f64)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Self { name: name.into(), in_dim, out_dim }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng, bound: f64) {
        store.insert(self.weight_name(), uniform(rng, &[self.in_dim, self.out_dim], bound));
        store.insert(self.bias_name(), Tensor::zeros([self.out_dim]));
    }

    pub fn forward<'g>(&self, g: &'g Graph, p: Bind<'_>, x: Var<'g>) -> Var<'g> {
        x.matmul(p.var(g, &self.weight_name())).add_row_bias(p.var(g, &self.bias_name()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: [usize; 2],
    pub geometry: Conv2dGeometry,
    /// Convolutions feeding a normalization layer carry no bias.
    pub bias: bool,
}

impl Conv {
    pub fn square(name: impl Into<String>, in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            name: name.into(),
            in_ch,
            out_ch,
            kernel: [kernel; 2],
            geometry: Conv2dGeometry::square(stride, padding),
            bias: true,
        }
    }

    pub fn without_bias(self) -> Self {
        Self { bias: false, ..self }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn fan_in(&self) -> usize {
        self.in_ch * self.kernel[0] * self.kernel[1]
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_ch, self.in_ch, self.kernel[0], self.kernel[1]]
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng, bound: f64) {
        store.insert(self.weight_name(), uniform(rng, &self.weight_shape(), bound));
        if self.bias {
            store.insert(self.bias_name(), Tensor::zeros([self.out_ch]));
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph, p: Bind<'_>, x: Var<'g>) -> Var<'g> {
        self.forward_with(g, p, x, p.var(g, &self.weight_name()))
    }

    /// Forward pass with a substituted weight (e.g. a normalized one).
    pub fn forward_with<'g>(&self, g: &'g Graph, p: Bind<'_>, x: Var<'g>, weight: Var<'g>) -> Var<'g> {
        let y = x.conv2d(weight, self.geometry);
        if self.bias {
            y.add_channel_bias(p.var(g, &self.bias_name()))
        } else {
            y
        }
    }
}
