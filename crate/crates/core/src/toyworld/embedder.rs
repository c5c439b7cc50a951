//! Toy image embedder: a small CNN trained to tell toy identities apart and
//! to read their parameters. Its hidden features serve as the embedding for
//! distribution distances and identity similarity.

use std::path::Path;

use portrait_autograd::{Graph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cnn::{fit_cnn, gather_rows, CnnConfig, EpochSampler, FitConfig, SmallCnn};
use super::estimator::{render_batch, sample_box_params};
use super::render::{used_dims, ToyIdentity};
use crate::checkpoint::Archive;
use crate::error::{Error, Result};
use crate::metrics::Embedder;
use crate::nn::Bind;
use crate::types::{FaceParams, Image};

const PREFIX: &str = "embed";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderFitConfig {
    pub size: usize,
    pub hidden: usize,
    pub samples_per_identity: usize,
    pub fit: FitConfig,
}

impl Default for EmbedderFitConfig {
    fn default() -> Self {
        Self {
            size: 64,
            hidden: 16,
            samples_per_identity: 150,
            fit: FitConfig { iters: 800, batch: 32, lr: 2e-3, noise: 0.02 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyEmbedder {
    pub net: SmallCnn,
}

impl ToyEmbedder {
    /// Identity class logits `[n, identities]`.
    pub fn classify(&self, images: &[&Image]) -> Result<Tensor> {
        let g = Graph::new();
        let p = Bind::frozen(&self.net.params);
        let f = self.net.features(&g, p, g.constant(Image::batch_tensor(images)?))?;
        Ok(self.net.head(&g, p, f, 0).value())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut a = Archive::new(serde_json::json!({ "kind": "toy_embedder", "cnn": self.net.config }));
        a.put_store("", &self.net.params);
        a.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let a = Archive::load(path)?;
        if a.meta_field::<String>("kind")? != "toy_embedder" {
            return Err(Error::format(path, "not a toy embedder archive"));
        }
        let config: CnnConfig = a.meta_field("cnn")?;
        Ok(Self { net: SmallCnn::from_params(PREFIX, config, a.take_store(""))? })
    }
}

impl Embedder for ToyEmbedder {
    fn dim(&self) -> usize {
        self.net.config.hidden
    }

    fn embed(&self, images: &[&Image]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let g = Graph::new();
            let f = self.net.features(&g, Bind::frozen(&self.net.params), g.constant(Image::batch_tensor(chunk)?))?;
            out.extend(f.value().data().chunks_exact(self.dim()).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    fn digest(&self) -> String {
        self.net.params.digest()
    }
}

/// Train an embedder on box renders of every identity in `identities`.
pub fn fit_toy_embedder(identities: &[ToyIdentity], seed: u64, cfg: &EmbedderFitConfig) -> Result<(ToyEmbedder, f64)> {
    if identities.len() < 2 {
        return Err(Error::Config("the embedder needs at least two identities".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = used_dims();
    let mut labels = Vec::new();
    let mut targets = Vec::new();
    let mut batches = Vec::new();
    for (k, id) in identities.iter().enumerate() {
        let params: Vec<FaceParams> = (0..cfg.samples_per_identity).map(|_| sample_box_params(&mut rng)).collect();
        for p in &params {
            let v = p.concat();
            targets.extend(dims.iter().map(|&(d, h)| v[d] / h));
            labels.push(k);
        }
        batches.push(render_batch(id, &params, cfg.size)?);
    }
    let mut shape = batches[0].shape().to_vec();
    shape[0] = labels.len();
    let images = Tensor::new(shape, batches.into_iter().flat_map(Tensor::into_vec).collect());
    let config = CnnConfig { input_size: cfg.size, channels: vec![16, 32, 32], hidden: cfg.hidden, heads: vec![identities.len(), dims.len()] };
    let mut net = SmallCnn::new(PREFIX, config, seed ^ 0xe3b)?;
    let width = dims.len();
    let mut epochs = EpochSampler::new(labels.len());
    let sample = |rng: &mut ChaCha8Rng| {
        let idx = epochs.next_batch(rng, cfg.fit.batch);
        let rows: Vec<f64> = idx.iter().flat_map(|&i| targets[i * width..(i + 1) * width].to_vec()).collect();
        let batch_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        Ok((gather_rows(&images, &idx), (batch_labels, Tensor::new([idx.len(), width], rows))))
    };
    let loss = fit_cnn(&mut net, &cfg.fit, seed ^ 0x5eed, sample, |g, net, x, (batch_labels, t): &(Vec<usize>, Tensor)| {
        let p = Bind::trainable(&net.params);
        let f = net.features(g, p, x)?;
        let ce = net.head(g, p, f, 0).cross_entropy(batch_labels);
        let mse = net.head(g, p, f, 1).sub(g.constant(t.clone())).square().mean();
        Ok(ce.add(mse))
    })?;
    Ok((ToyEmbedder { net }, loss))
}
