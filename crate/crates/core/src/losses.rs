//! Training objectives and the feature/parameter networks they rely on.

use portrait_autograd::{resize_bilinear, Graph, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{he_bound, Bind, Conv};
use crate::types::PARAM_DIM;

/// Fixed map from images `[n, 3, H, W]` to `I` feature maps `[n, I, h, w]`.
pub trait FeatureExtractor {
    fn channels(&self) -> usize;
    fn features<'g>(&self, g: &'g Graph, images: Var<'g>) -> Var<'g>;
    /// Digest of the extractor's weights.
    fn digest(&self) -> String;
}

/// Frozen differentiable map from images `[n, 3, H, W]` to
/// pose ‖ expression ‖ gaze estimates `[n, 58]`.
pub trait ParamEstimator {
    fn estimate<'g>(&self, g: &'g Graph, images: Var<'g>) -> Result<Var<'g>>;
    fn digest(&self) -> String;
}

/// Passes images through unchanged; the perceptual loss then reduces to a
/// channel-summed mean absolute pixel difference.
#[derive(Debug, Clone, Copy)]
pub struct IdentityFeatures {
    pub channels: usize,
}

impl FeatureExtractor for IdentityFeatures {
    fn channels(&self) -> usize {
        self.channels
    }

    fn features<'g>(&self, _g: &'g Graph, images: Var<'g>) -> Var<'g> {
        images
    }

    fn digest(&self) -> String {
        format!("identity-{}", self.channels)
    }
}

/// Features of a fixed, randomly initialized convolution stack, read after
/// layer `layer`.
#[derive(Debug, Clone)]
pub struct RandomConvFeatures {
    convs: Vec<Conv>,
    params: ParamStore,
    layer: usize,
}

impl RandomConvFeatures {
    pub fn new(seed: u64, layer: usize) -> Result<Self> {
        let convs = vec![
            Conv::square("feat.conv0", 3, 16, 3, 1, 1),
            Conv::square("feat.conv1", 16, 16, 3, 2, 1),
            Conv::square("feat.conv2", 16, 32, 3, 2, 1),
        ];
        if layer >= convs.len() {
            return Err(Error::Config(format!("feature layer {layer} out of range 0..{}", convs.len())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for c in &convs {
            c.init(&mut params, &mut rng, he_bound(c.fan_in(), 0.2));
        }
        Ok(Self { convs, params, layer })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }
}

impl FeatureExtractor for RandomConvFeatures {
    fn channels(&self) -> usize {
        self.convs[self.layer].out_ch
    }

    fn features<'g>(&self, g: &'g Graph, images: Var<'g>) -> Var<'g> {
        let p = Bind::frozen(&self.params);
        let mut x = images;
        for c in &self.convs[..=self.layer] {
            x = c.forward(g, p, x).leaky_relu(0.2);
        }
        x
    }

    fn digest(&self) -> String {
        self.params.digest()
    }
}

fn check_same(a: &Var<'_>, b: &Var<'_>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn mse<'g>(a: Var<'g>, b: Var<'g>) -> Var<'g> {
    a.sub(b).square().mean()
}

/// Ground truth downsampled to the coarse grid, `[n, 3, grid, grid]`.
pub fn coarse_target(images: &Tensor, grid: usize) -> Tensor {
    resize_bilinear(images, grid, grid)
}

/// `MSE(y, g) + MSE(y_coarse, g_coarse)`.
pub fn reconstruction_loss<'g>(y: Var<'g>, g: Var<'g>, y_coarse: Var<'g>, g_coarse: Var<'g>) -> Result<Var<'g>> {
    check_same(&y, &g, "reconstruction images")?;
    check_same(&y_coarse, &g_coarse, "reconstruction coarse maps")?;
    Ok(mse(y, g).add(mse(y_coarse, g_coarse)))
}

/// `Σᵢ mean |Nᵢ(t) − Nᵢ(g)|` over the extractor's channels, averaged over the batch.
pub fn perceptual_loss<'g>(g: Var<'g>, t: Var<'g>, fx: &dyn FeatureExtractor) -> Result<Var<'g>> {
    check_same(&g, &t, "perceptual images")?;
    let graph = g.graph();
    let fg = fx.features(graph, g);
    let ft = fx.features(graph, t);
    check_same(&fg, &ft, "perceptual features")?;
    Ok(fg.sub(ft).abs().mean().mul_scalar(fx.channels() as f64))
}

/// Mean squared difference between `targets` (`[n, 58]`) and the estimator's
/// reading of the generated images.
pub fn consistency_loss<'g>(targets: &Tensor, g: Var<'g>, phi: &dyn ParamEstimator) -> Result<Var<'g>> {
    let est = phi.estimate(g.graph(), g)?;
    let n = g.shape()[0];
    if targets.shape() != [n, PARAM_DIM] || est.shape() != [n, PARAM_DIM] {
        return Err(Error::Shape(format!(
            "consistency targets {:?}, estimates {:?}, expected [{n}, {PARAM_DIM}]",
            targets.shape(),
            est.shape()
        )));
    }
    Ok(mse(est, g.graph().constant(targets.clone())))
}

/// Discriminator objective: `mean softplus(d_fake) + mean softplus(−d_real)`.
pub fn discriminator_loss<'g>(d_real: Var<'g>, d_fake: Var<'g>) -> Var<'g> {
    d_fake.softplus().mean().add(d_real.mul_scalar(-1.0).softplus().mean())
}

/// Non-saturating generator objective: `mean softplus(−d_fake)`.
pub fn generator_adversarial_loss(d_fake: Var<'_>) -> Var<'_> {
    d_fake.mul_scalar(-1.0).softplus().mean()
}

/// `(L_D, L_G)` for a pair of logit maps.
pub fn adversarial_losses<'g>(d_real: Var<'g>, d_fake: Var<'g>) -> Result<(Var<'g>, Var<'g>)> {
    check_same(&d_real, &d_fake, "logit maps")?;
    Ok((discriminator_loss(d_real, d_fake), generator_adversarial_loss(d_fake)))
}

/// `‖vᵢ‖ + ‖vᵢ₊₁‖ + ‖vᵢ − vᵢ₊₁‖` per row of `[n, d]` codes, averaged over rows.
pub fn velocity_loss<'g>(v: Var<'g>, v_next: Var<'g>) -> Result<Var<'g>> {
    check_same(&v, &v_next, "latent pairs")?;
    if v.shape().len() != 2 {
        return Err(Error::Shape(format!("latent pairs must be [n, d], got {:?}", v.shape())));
    }
    let per_row = v.row_norms().add(v_next.row_norms()).add(v.sub(v_next).row_norms());
    Ok(per_row.mean())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Reconstruction of the performing video.
    One,
    /// Fine-tuning with auxiliary parameters and the discriminator.
    Two,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }
}

/// Weights of reconstruction, perceptual, consistency and velocity terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
}

impl LossWeights {
    pub const STAGE_ONE: LossWeights = LossWeights { alpha1: 100.0, alpha2: 0.0, alpha3: 0.0, alpha4: 1.0 };
    pub const STAGE_TWO: LossWeights = LossWeights { alpha1: 100.0, alpha2: 1.0, alpha3: 1.0, alpha4: 1.0 };

    pub fn preset(stage: Stage) -> Self {
        match stage {
            Stage::One => Self::STAGE_ONE,
            Stage::Two => Self::STAGE_TWO,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha1, self.alpha2, self.alpha3, self.alpha4];
        if all.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Per-term losses of one generator step. Stage one carries only
/// reconstruction and velocity.
#[derive(Clone, Copy)]
pub struct LossComponents<'g> {
    pub rec: Var<'g>,
    pub vel: Var<'g>,
    pub per: Option<Var<'g>>,
    pub con: Option<Var<'g>>,
    pub adv_g: Option<Var<'g>>,
}

/// Weighted generator objective
/// `L_adv + α1·L_rec + α2·L_per + α3·L_con + α4·L_vel`.
pub fn total_generator_loss<'g>(c: &LossComponents<'g>, w: LossWeights, stage: Stage) -> Result<Var<'g>> {
    w.validate()?;
    let mut total = c.rec.mul_scalar(w.alpha1).add(c.vel.mul_scalar(w.alpha4));
    match stage {
        Stage::One => {
            if w.alpha2 != 0.0 || w.alpha3 != 0.0 {
                return Err(Error::Config("stage one uses no perceptual or consistency weight".into()));
            }
            if c.per.is_some() || c.con.is_some() || c.adv_g.is_some() {
                return Err(Error::Config("stage one takes reconstruction and velocity terms only".into()));
            }
        }
        Stage::Two => {
            let (Some(per), Some(con), Some(adv)) = (c.per, c.con, c.adv_g) else {
                return Err(Error::Config("stage two needs perceptual, consistency and adversarial terms".into()));
            };
            total = total.add(per.mul_scalar(w.alpha2)).add(con.mul_scalar(w.alpha3)).add(adv);
        }
    }
    Ok(total)
}

/// Scalar loss values of one training step, as written to the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub stage: u8,
    pub iteration: u64,
    pub weights: LossWeights,
    pub rec: f64,
    pub vel: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub con: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub adv_g: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub adv_d: Option<f64>,
    pub total_g: f64,
}

impl LossRecord {
    pub fn from_components(
        stage: Stage,
        iteration: u64,
        weights: LossWeights,
        c: &LossComponents<'_>,
        total: &Var<'_>,
        adv_d: Option<f64>,
    ) -> Self {
        let val = |v: &Var<'_>| v.value().item();
        Self {
            stage: stage.number(),
            iteration,
            weights,
            rec: val(&c.rec),
            vel: val(&c.vel),
            per: c.per.as_ref().map(val),
            con: c.con.as_ref().map(val),
            adv_g: c.adv_g.as_ref().map(val),
            adv_d,
            total_g: val(total),
        }
    }

    /// Total recomputed from the logged components and weights.
    pub fn recomputed_total(&self) -> f64 {
        let w = self.weights;
        self.adv_g.unwrap_or(0.0)
            + w.alpha1 * self.rec
            + w.alpha2 * self.per.unwrap_or(0.0)
            + w.alpha3 * self.con.unwrap_or(0.0)
            + w.alpha4 * self.vel
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c<'g>(g: &'g Graph, v: &[f64], shape: &[usize]) -> Var<'g> {
        g.constant(Tensor::new(shape.to_vec(), v.to_vec()))
    }

    #[test]
    fn velocity_reference_values() {
        let g = Graph::new();
        let e = |i: usize| {
            let mut v = vec![0.0; 32];
            v[i] = 1.0;
            v
        };
        let z = c(&g, &[0.0; 32], &[1, 32]);
        assert_eq!(velocity_loss(z, z).unwrap().value().item(), 0.0);
        let l = velocity_loss(c(&g, &e(0), &[1, 32]), c(&g, &e(1), &[1, 32])).unwrap().value().item();
        assert!((l - (2.0 + 2f64.sqrt())).abs() < 1e-12);
        let l = velocity_loss(c(&g, &e(0), &[1, 32]), c(&g, &e(0), &[1, 32])).unwrap().value().item();
        assert!((l - 2.0).abs() < 1e-12);
    }

    #[test]
    fn adversarial_at_zero_logits() {
        let g = Graph::new();
        let z = c(&g, &[0.0; 9], &[1, 1, 3, 3]);
        let (d, gen) = adversarial_losses(z, z).unwrap();
        assert!((d.value().item() - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((gen.value().item() - 2f64.ln()).abs() < 1e-12);
        let (d, _) = adversarial_losses(c(&g, &[40.0], &[1]), c(&g, &[-40.0], &[1])).unwrap();
        assert!(d.value().item() < 1e-16);
    }

    #[test]
    fn reconstruction_offset() {
        let g = Graph::new();
        let y = c(&g, &[0.1; 12], &[1, 3, 2, 2]);
        let x = c(&g, &[0.6; 12], &[1, 3, 2, 2]);
        let yc = c(&g, &[0.0; 3], &[1, 3, 1, 1]);
        let l = reconstruction_loss(y, x, yc, yc).unwrap().value().item();
        assert!((l - 0.25).abs() < 1e-12);
        assert!(reconstruction_loss(y, yc, yc, yc).is_err());
    }

    #[test]
    fn perceptual_with_identity_features() {
        let g = Graph::new();
        let t: Vec<f64> = (0..64).map(|i| (i as f64 * 0.1).sin() * 0.5).collect();
        let gen: Vec<f64> = t.iter().map(|v| v + 0.2).collect();
        let l = perceptual_loss(c(&g, &gen, &[1, 1, 8, 8]), c(&g, &t, &[1, 1, 8, 8]), &IdentityFeatures { channels: 1 })
            .unwrap()
            .value()
            .item();
        assert!((l - 0.2).abs() < 1e-12);
    }

    #[test]
    fn stage_one_rejects_foreign_terms_and_weights() {
        let g = Graph::new();
        let rec = c(&g, &[0.1], &[1]);
        let vel = c(&g, &[0.5], &[1]);
        let comps = LossComponents { rec, vel, per: None, con: None, adv_g: None };
        let total = total_generator_loss(&comps, LossWeights::STAGE_ONE, Stage::One).unwrap();
        assert!((total.value().item() - 10.5).abs() < 1e-12);
        assert!(total_generator_loss(&comps, LossWeights::STAGE_TWO, Stage::One).is_err());
        assert!(total_generator_loss(&comps, LossWeights::STAGE_TWO, Stage::Two).is_err());
        let with_per = LossComponents { per: Some(rec), ..comps };
        assert!(total_generator_loss(&with_per, LossWeights::STAGE_ONE, Stage::One).is_err());
    }

    #[test]
    fn stage_two_with_zero_components_is_adversarial_only() {
        let g = Graph::new();
        let z = c(&g, &[0.0], &[1]);
        let adv = c(&g, &[0.7], &[1]);
        let comps = LossComponents { rec: z, vel: z, per: Some(z), con: Some(z), adv_g: Some(adv) };
        let total = total_generator_loss(&comps, LossWeights::STAGE_TWO, Stage::Two).unwrap();
        assert_eq!(total.value().item(), 0.7);
    }
}
