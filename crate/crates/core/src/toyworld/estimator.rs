//! Toy parameter estimator: a small CNN regressing the used pose,
//! expression and gaze dimensions from rendered images.

use std::path::Path;

use portrait_autograd::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cnn::{fit_cnn, CnnConfig, FitConfig, SmallCnn};
use super::render::{render_toy_face, used_dims, ToyIdentity};
use crate::checkpoint::Archive;
use crate::error::{Error, Result};
use crate::losses::ParamEstimator;
use crate::nn::Bind;
use crate::types::{FaceParams, Image, PARAM_DIM};

const PREFIX: &str = "phi";

/// Options of [`fit_toy_estimator`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorFitConfig {
    /// Render size of the training images.
    pub size: usize,
    /// Renders per training batch; every batch is freshly drawn.
    pub batch: usize,
    pub lr: f64,
    /// Standard deviation of Gaussian pixel noise on training inputs.
    pub noise: f64,
    pub validation_samples: usize,
    /// Largest accepted validation mean absolute error over the used dims.
    pub threshold: f64,
}

impl Default for EstimatorFitConfig {
    fn default() -> Self {
        Self {
            size: 64,
            batch: 32,
            lr: 2e-3,
            noise: 0.02,
            validation_samples: 200,
            threshold: 0.05,
        }
    }
}

/// Validation errors of a fitted estimator, in parameter units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub mean_abs_error: f64,
    pub per_dim: Vec<f64>,
    pub final_train_loss: f64,
}

/// Frozen CNN estimator; only the used dims are predicted, the remaining
/// coefficients read as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEstimator {
    pub net: SmallCnn,
    pub identity_seed: u64,
}

fn cnn_config(size: usize) -> CnnConfig {
    CnnConfig { input_size: size, channels: vec![16, 32, 32, 32], hidden: 64, heads: vec![used_dims().len()] }
}

/// Uniform draw from the toy parameter box.
pub fn sample_box_params(rng: &mut ChaCha8Rng) -> FaceParams {
    let mut v = vec![0.0; PARAM_DIM];
    for (d, h) in used_dims() {
        v[d] = rng.random_range(-h..=h);
    }
    FaceParams::from_concat(&v).expect("box samples are valid")
}

/// Quantized renders of `params` stacked as `[n, 3, size, size]`.
pub fn render_batch(identity: &ToyIdentity, params: &[FaceParams], size: usize) -> Result<Tensor> {
    let images = params.iter().map(|p| Ok(render_toy_face(identity, p, size)?.quantized())).collect::<Result<Vec<_>>>()?;
    Image::batch_tensor(&images.iter().collect::<Vec<_>>())
}

/// Used-dimension values divided by their half-ranges, `[n, used]`.
fn normalized_targets(params: &[FaceParams]) -> Tensor {
    let dims = used_dims();
    let data = params.iter().flat_map(|p| {
        let v = p.concat();
        dims.iter().map(move |&(d, h)| v[d] / h).collect::<Vec<_>>()
    });
    Tensor::new([params.len(), dims.len()], data.collect())
}

impl ToyEstimator {
    /// Scatter matrix taking normalized used-dim outputs to the 58-wide layout.
    fn scatter() -> Tensor {
        let dims = used_dims();
        let mut m = vec![0.0; dims.len() * PARAM_DIM];
        for (k, &(d, h)) in dims.iter().enumerate() {
            m[k * PARAM_DIM + d] = h;
        }
        Tensor::new([dims.len(), PARAM_DIM], m)
    }

    fn normalized<'g>(&self, g: &'g Graph, p: Bind<'_>, images: Var<'g>) -> Result<Var<'g>> {
        let f = self.net.features(g, p, images)?;
        Ok(self.net.head(g, p, f, 0))
    }

    /// Estimated parameters of each image.
    pub fn estimate_images(&self, images: &[&Image]) -> Result<Vec<FaceParams>> {
        let g = Graph::new();
        let x = g.constant(Image::batch_tensor(images)?);
        let est = self.estimate(&g, x)?.value();
        est.data().chunks_exact(PARAM_DIM).map(FaceParams::from_concat).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut a = Archive::new(serde_json::json!({
            "kind": "toy_estimator",
            "identity_seed": self.identity_seed,
            "cnn": self.net.config,
        }));
        a.put_store("", &self.net.params);
        a.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let a = Archive::load(path)?;
        if a.meta_field::<String>("kind")? != "toy_estimator" {
            return Err(Error::format(path, "not a toy estimator archive"));
        }
        let config: CnnConfig = a.meta_field("cnn")?;
        let net = SmallCnn::from_params(PREFIX, config, a.take_store(""))?;
        Ok(Self { net, identity_seed: a.meta_field("identity_seed")? })
    }

    /// Mean absolute error per used dim on fresh box samples.
    pub fn validate(&self, identity: &ToyIdentity, n: usize, seed: u64, size: usize) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params: Vec<FaceParams> = (0..n).map(|_| sample_box_params(&mut rng)).collect();
        let dims = used_dims();
        let mut err = vec![0.0; dims.len()];
        for chunk in params.chunks(50) {
            let images = render_batch(identity, chunk, size)?;
            let g = Graph::new();
            let est = self.estimate(&g, g.constant(images))?.value();
            for (p, e) in chunk.iter().zip(est.data().chunks_exact(PARAM_DIM)) {
                let truth = p.concat();
                for (k, &(d, _)) in dims.iter().enumerate() {
                    err[k] += (truth[d] - e[d]).abs() / n as f64;
                }
            }
        }
        Ok(err)
    }
}

impl ParamEstimator for ToyEstimator {
    fn estimate<'g>(&self, g: &'g Graph, images: Var<'g>) -> Result<Var<'g>> {
        let out = self.normalized(g, Bind::frozen(&self.net.params), images)?;
        Ok(out.matmul(g.constant(Self::scatter())))
    }

    fn digest(&self) -> String {
        self.net.params.digest()
    }
}

/// Train an estimator on a stream of `n_samples` fresh renders of
/// `identity` drawn uniformly from the parameter box, then check it on
/// renders it has not seen.
pub fn fit_toy_estimator(
    identity: &ToyIdentity,
    n_samples: usize,
    seed: u64,
    cfg: &EstimatorFitConfig,
) -> Result<(ToyEstimator, FitReport)> {
    if n_samples < 1000 {
        return Err(Error::Config(format!("estimator fit needs at least 1000 samples, got {n_samples}")));
    }
    if cfg.batch == 0 {
        return Err(Error::Config("estimator batch must be positive".into()));
    }
    let fit = FitConfig { iters: n_samples.div_ceil(cfg.batch), batch: cfg.batch, lr: cfg.lr, noise: cfg.noise };
    let mut net = SmallCnn::new(PREFIX, cnn_config(cfg.size), seed ^ 0xe57)?;
    let sample = |rng: &mut ChaCha8Rng| {
        let params: Vec<FaceParams> = (0..cfg.batch).map(|_| sample_box_params(rng)).collect();
        Ok((render_batch(identity, &params, cfg.size)?, normalized_targets(&params)))
    };
    let final_train_loss = fit_cnn(&mut net, &fit, seed ^ 0xf17, sample, |g, net, x, targets: &Tensor| {
        let p = Bind::trainable(&net.params);
        let out = net.head(g, p, net.features(g, p, x)?, 0);
        Ok(out.sub(g.constant(targets.clone())).square().mean())
    })?;
    let est = ToyEstimator { net, identity_seed: identity.seed };
    let per_dim = est.validate(identity, cfg.validation_samples, seed ^ 0x7a1, cfg.size)?;
    let mean_abs_error = per_dim.iter().sum::<f64>() / per_dim.len() as f64;
    log::info!("estimator validation error {mean_abs_error:.4} per dim {per_dim:.3?}");
    if mean_abs_error > cfg.threshold {
        return Err(Error::EstimatorFit { error: mean_abs_error, threshold: cfg.threshold, per_dim });
    }
    Ok((est, FitReport { mean_abs_error, per_dim, final_train_loss }))
}
