//! Finite-difference gradient checks of losses and networks.

#[path = "support/gradcheck.rs"]
mod gradcheck;

use gradcheck::TOL;

#[test]
fn reconstruction_loss_gradients() {
    let err = gradcheck::reconstruction_loss_gradients();
    assert!(err < TOL, "{err}");
}

#[test]
fn perceptual_loss_gradients() {
    let err = gradcheck::perceptual_loss_gradients();
    assert!(err < TOL, "{err}");
}

#[test]
fn consistency_loss_gradients() {
    let err = gradcheck::consistency_loss_gradients();
    assert!(err < TOL, "{err}");
}

#[test]
fn adversarial_loss_gradients() {
    let err = gradcheck::adversarial_loss_gradients();
    assert!(err < TOL, "{err}");
}

#[test]
fn velocity_loss_gradients() {
    let err = gradcheck::velocity_loss_gradients();
    assert!(err < TOL, "{err}");
}

#[test]
fn generator_parameter_gradients() {
    let err = gradcheck::generator_parameter_gradients();
    assert!(err < TOL, "{err}");
}

#[test]
fn generator_latent_gradients() {
    let err = gradcheck::generator_latent_gradients();
    assert!(err < TOL, "{err}");
}

#[test]
fn audio_generator_gradients_reach_the_audio_vector() {
    let err = gradcheck::audio_generator_gradients_reach_the_audio_vector();
    assert!(err < TOL, "{err}");
}

#[test]
fn discriminator_parameter_gradients() {
    let err = gradcheck::discriminator_parameter_gradients();
    assert!(err < TOL, "{err}");
}

#[test]
fn discriminator_input_gradients() {
    let err = gradcheck::discriminator_input_gradients();
    assert!(err < TOL, "{err}");
}

#[test]
fn audio_encoder_gradients() {
    let err = gradcheck::audio_encoder_gradients();
    assert!(err < TOL, "{err}");
}

#[test]
fn estimator_parameter_gradients() {
    let err = gradcheck::estimator_parameter_gradients();
    assert!(err < TOL, "{err}");
}
