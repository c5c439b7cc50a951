//! Central finite-difference checks of every loss and of the generator,
//! discriminator, audio encoder and estimator networks on small inputs.
//! Each check returns the worst relative error it measured.

use portrait_core::audio::{AudioEncoder, AudioEncoderConfig};
use portrait_core::autograd::check::{check_inputs, numeric_gradient, sample_indices};
use portrait_core::autograd::{Graph, ParamStore, Tensor, Var};
use portrait_core::discriminator::{DiscriminatorConfig, DiscriminatorModel};
use portrait_core::encoding::EncodingConfig;
use portrait_core::generator::{GeneratorConfig, GeneratorModel, UpsampleMode};
use portrait_core::losses::{
    adversarial_losses, consistency_loss, perceptual_loss, reconstruction_loss, velocity_loss, RandomConvFeatures,
};
use portrait_core::nn::Bind;
use portrait_core::toyworld::{CnnConfig, ToyEstimator};
use portrait_core::toyworld::cnn::SmallCnn;
use portrait_core::types::{DriveMode, FaceParams, AUDIO_FEATURES, AUDIO_STEPS, LATENT_DIM, PARAM_DIM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-3;
const EPS: f64 = 1e-6;
/// Gradient norm below which a mismatch is judged in absolute terms, so that
/// exactly-zero gradients (biases ahead of a normalization) compare cleanly.
const FLOOR: f64 = 1e-6;

fn random(shape: &[usize], seed: u64, scale: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect())
}

fn floored_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(FLOOR)
}

/// Worst per-tensor relative error between backward-pass parameter gradients
/// and central differences of forward values.
fn check_params(store: &ParamStore, build: impl for<'g> Fn(&'g Graph, &ParamStore, bool) -> Var<'g>, per_tensor: usize) -> f64 {
    let g = Graph::new();
    let out = build(&g, store, true);
    let grads = g.backward(out).params();
    let mut worst: f64 = 0.0;
    for (name, t) in store.iter() {
        let idx = sample_indices(t.len(), per_tensor);
        let analytic = grads.get(name).map_or(vec![0.0; idx.len()], |a| idx.iter().map(|&i| a.data()[i]).collect());
        let numeric = numeric_gradient(
            |x| {
                let mut s = store.clone();
                *s.get_mut(name).unwrap() = x.clone();
                let g = Graph::new();
                build(&g, &s, false).value().item()
            },
            t,
            &idx,
            EPS,
        );
        let err = floored_error(&analytic, &numeric);
        assert!(err.is_finite(), "{name}: non-finite error");
        worst = worst.max(err);
    }
    worst
}

fn bind(store: &ParamStore, trainable: bool) -> Bind<'_> {
    if trainable {
        Bind::trainable(store)
    } else {
        Bind::frozen(store)
    }
}

/// Weighted sum so every output element contributes a distinct gradient.
fn project<'g>(x: Var<'g>, seed: u64) -> Var<'g> {
    let w = random(&x.shape(), seed, 1.0);
    x.mul(x.graph().constant(w)).sum()
}

pub fn reconstruction_loss_gradients() -> f64 {
    let inputs = [random(&[2, 3, 8, 8], 1, 1.0), random(&[2, 3, 8, 8], 2, 1.0), random(&[2, 3, 2, 2], 3, 1.0), random(&[2, 3, 2, 2], 4, 1.0)];
    let err = check_inputs(|_, v| reconstruction_loss(v[0], v[1], v[2], v[3]).unwrap(), &inputs, 64, EPS);
    err
}

pub fn perceptual_loss_gradients() -> f64 {
    let fx = RandomConvFeatures::new(17, 2).unwrap();
    let inputs = [random(&[2, 3, 8, 8], 5, 1.0), random(&[2, 3, 8, 8], 6, 1.0)];
    let err = check_inputs(|_, v| perceptual_loss(v[0], v[1], &fx).unwrap(), &inputs, 64, EPS);
    err
}

fn tiny_estimator() -> ToyEstimator {
    let config = CnnConfig { input_size: 8, channels: vec![4, 4], hidden: 8, heads: vec![10] };
    ToyEstimator { net: SmallCnn::new("phi", config, 9).unwrap(), identity_seed: 0 }
}

pub fn consistency_loss_gradients() -> f64 {
    let phi = tiny_estimator();
    let targets = random(&[2, PARAM_DIM], 7, 0.5);
    let inputs = [random(&[2, 3, 8, 8], 8, 1.0)];
    let err = check_inputs(|_, v| consistency_loss(&targets, v[0], &phi).unwrap(), &inputs, 96, EPS);
    err
}

pub fn adversarial_loss_gradients() -> f64 {
    let inputs = [random(&[2, 1, 3, 3], 9, 3.0), random(&[2, 1, 3, 3], 10, 3.0)];
    let d = check_inputs(|_, v| adversarial_losses(v[0], v[1]).unwrap().0, &inputs, 18, EPS);
    let g = check_inputs(|_, v| adversarial_losses(v[0], v[1]).unwrap().1, &inputs, 18, EPS);
    d.max(g)
}

pub fn velocity_loss_gradients() -> f64 {
    let inputs = [random(&[4, LATENT_DIM], 11, 1.0), random(&[4, LATENT_DIM], 12, 1.0)];
    let err = check_inputs(|_, v| velocity_loss(v[0], v[1]).unwrap(), &inputs, 128, EPS);
    err
}

fn tiny_generator(mode: DriveMode) -> GeneratorModel {
    let config = GeneratorConfig {
        mlp_layers: 3,
        mlp_width: 8,
        feature_dim: 8,
        residual_blocks: 1,
        upsample_blocks: 2,
        upsample_mode: UpsampleMode::Bilinear,
        grid_size: 2,
        encoding: EncodingConfig::default(),
        mode,
    };
    GeneratorModel::new(config, 13).unwrap()
}

fn generator_objective<'g>(model: &GeneratorModel, g: &'g Graph, p: Bind<'_>, latents: Var<'g>, audio: Option<Var<'g>>) -> Var<'g> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let params: Vec<FaceParams> = (0..2)
        .map(|_| {
            let mut v = vec![0.0; PARAM_DIM];
            v.iter_mut().take(8).for_each(|x| *x = rng.random_range(-0.3..0.3));
            FaceParams::from_concat(&v).unwrap()
        })
        .collect();
    let refs: Vec<&FaceParams> = params.iter().collect();
    let cond = model.conditioning(g, &refs, audio, latents).unwrap();
    let out = model.forward(g, p, cond, 2).unwrap();
    assert_eq!(out.image.shape(), [2, 3, 8, 8]);
    assert_eq!(out.coarse.shape(), [2, 3, 2, 2]);
    project(out.image, 15).add(project(out.coarse, 16))
}

pub fn generator_parameter_gradients() -> f64 {
    let model = tiny_generator(DriveMode::VideoDriven);
    let latents = random(&[2, LATENT_DIM], 17, 0.5);
    let err = check_params(
        &model.params,
        |g, store, train| generator_objective(&model, g, bind(store, train), g.constant(latents.clone()), None),
        12,
    );
    err
}

pub fn generator_latent_gradients() -> f64 {
    let model = tiny_generator(DriveMode::VideoDriven);
    let inputs = [random(&[2, LATENT_DIM], 18, 0.5)];
    let err = check_inputs(|g, v| generator_objective(&model, g, Bind::frozen(&model.params), v[0], None), &inputs, 64, EPS);
    err
}

pub fn audio_generator_gradients_reach_the_audio_vector() -> f64 {
    let model = tiny_generator(DriveMode::AudioDriven);
    let latents = random(&[2, LATENT_DIM], 19, 0.5);
    let inputs = [random(&[2, 32], 20, 0.5)];
    let err = check_inputs(
        |g, v| generator_objective(&model, g, Bind::frozen(&model.params), g.constant(latents.clone()), Some(v[0])),
        &inputs,
        64,
        EPS,
    );
    err
}

fn tiny_discriminator() -> DiscriminatorModel {
    DiscriminatorModel::new(DiscriminatorConfig { base_channels: 4, n_layers: 1, input_size: 8 }, 21).unwrap()
}

pub fn discriminator_parameter_gradients() -> f64 {
    let d = tiny_discriminator();
    let images = random(&[2, 3, 8, 8], 22, 1.0);
    let err = check_params(
        &d.params,
        |g, store, train| {
            let model = DiscriminatorModel { params: store.clone(), ..d.clone() };
            project(model.forward(g, bind(store, train), g.constant(images.clone())).unwrap(), 23)
        },
        16,
    );
    err
}

pub fn discriminator_input_gradients() -> f64 {
    let d = tiny_discriminator();
    let inputs = [random(&[2, 3, 8, 8], 24, 1.0)];
    let err = check_inputs(|g, v| project(d.forward(g, Bind::frozen(&d.params), v[0]).unwrap(), 25), &inputs, 96, EPS);
    err
}

pub fn audio_encoder_gradients() -> f64 {
    let enc = AudioEncoder::new(AudioEncoderConfig { hidden: 8 }, 26).unwrap();
    let windows = random(&[2, AUDIO_STEPS, AUDIO_FEATURES], 27, 1.0);
    let err = check_params(
        &enc.params,
        |g, store, train| {
            let model = AudioEncoder { params: store.clone(), ..enc.clone() };
            project(model.forward(g, bind(store, train), g.constant(windows.clone())).unwrap(), 28)
        },
        16,
    );
    err
}

pub fn estimator_parameter_gradients() -> f64 {
    let phi = tiny_estimator();
    let images = random(&[2, 3, 8, 8], 29, 1.0);
    let err = check_params(
        &phi.net.params,
        |g, store, train| {
            let net = SmallCnn { params: store.clone(), ..phi.net.clone() };
            let f = net.features(g, bind(store, train), g.constant(images.clone())).unwrap();
            project(net.head(g, bind(store, train), f, 0), 30)
        },
        16,
    );
    err
}

/// Every check, by name.
#[allow(dead_code)] // read by the acceptance runner
pub const ALL: &[(&str, fn() -> f64)] = &[
    ("reconstruction_loss_gradients", reconstruction_loss_gradients),
    ("perceptual_loss_gradients", perceptual_loss_gradients),
    ("consistency_loss_gradients", consistency_loss_gradients),
    ("adversarial_loss_gradients", adversarial_loss_gradients),
    ("velocity_loss_gradients", velocity_loss_gradients),
    ("generator_parameter_gradients", generator_parameter_gradients),
    ("generator_latent_gradients", generator_latent_gradients),
    ("audio_generator_gradients_reach_the_audio_vector", audio_generator_gradients_reach_the_audio_vector),
    ("discriminator_parameter_gradients", discriminator_parameter_gradients),
    ("discriminator_input_gradients", discriminator_input_gradients),
    ("audio_encoder_gradients", audio_encoder_gradients),
    ("estimator_parameter_gradients", estimator_parameter_gradients),
];
