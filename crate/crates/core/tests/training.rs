//! Stage contracts, resume, determinism and auxiliary selection.

use portrait_core::losses::{LossRecord, LossWeights, Stage};
use portrait_core::toyworld::cnn::SmallCnn;
use portrait_core::toyworld::{make_param_video, make_toy_video, CnnConfig, ToyEstimator, ToyIdentity, TrajectoryConfig};
use portrait_core::training::{
    sample_auxiliary, select_mode, StageTwoData, StageTwoNets, TrainConfig, TrainMode, TrainState,
};
use portrait_core::types::{DatasetRole, DriveMode, VideoDataset};
use portrait_core::Error;
use proptest::prelude::*;

fn performing() -> VideoDataset {
    make_toy_video("performing", DatasetRole::Performing, &ToyIdentity::new(1), 8, 5, 64, TrajectoryConfig::default()).unwrap()
}

fn aux(name: &str, seed: u64) -> VideoDataset {
    make_param_video(name, DatasetRole::Auxiliary, 8, seed, TrajectoryConfig { spread: 0.8, offset: 1.0 }).unwrap()
}

fn estimator() -> ToyEstimator {
    let config = CnnConfig { input_size: 16, channels: vec![4, 4], hidden: 8, heads: vec![10] };
    ToyEstimator { net: SmallCnn::new("phi", config, 3).unwrap(), identity_seed: 1 }
}

fn config() -> TrainConfig {
    let mut cfg = TrainConfig::desk(DriveMode::VideoDriven);
    cfg.stage1.iters = 3;
    cfg.stage1.batch = 2;
    cfg.stage2.iters = 2;
    cfg.stage2.batch = 2;
    cfg.aux_video_count = 1;
    cfg.seed = 11;
    cfg
}

/// Stage one then stage two, returning the state and every loss record.
fn full_run(cfg: &TrainConfig, perf: &VideoDataset, aux: &[VideoDataset], phi: &ToyEstimator) -> (TrainState, Vec<LossRecord>) {
    let mut log = Vec::new();
    let mut st = TrainState::new(cfg.clone()).unwrap();
    st.begin_stage1(perf).unwrap();
    st.run_stage1(perf, &mut log).unwrap();
    st.begin_stage2(perf, aux).unwrap();
    let fx = cfg.feature_extractor().unwrap();
    let data = StageTwoData::new(perf, aux, cfg.texture_weights).unwrap();
    st.run_stage2(&data, &StageTwoNets { estimator: phi, features: &fx }, &mut log).unwrap();
    (st, log)
}

#[test]
fn stage_one_touches_only_generator_and_latents() {
    let perf = performing();
    let phi = estimator();
    let phi_digest = phi.net.params.digest();
    let mut st = TrainState::new(config()).unwrap();
    let d_before = (st.discriminator.params.digest(), st.discriminator.sn_state.digest());
    let g_before = st.generator.params.digest();
    st.begin_stage1(&perf).unwrap();
    let lat_before = st.latents.store().digest();
    let mut log = Vec::new();
    st.run_stage1(&perf, &mut log).unwrap();
    assert_eq!((st.discriminator.params.digest(), st.discriminator.sn_state.digest()), d_before);
    assert_ne!(st.generator.params.digest(), g_before);
    assert_ne!(st.latents.store().digest(), lat_before);
    assert_eq!(log.len(), 3);
    for r in &log {
        assert_eq!(r.weights, LossWeights { alpha1: 100.0, alpha2: 0.0, alpha3: 0.0, alpha4: 1.0 });
        assert!(r.per.is_none() && r.con.is_none() && r.adv_g.is_none() && r.adv_d.is_none());
        assert!((r.recomputed_total() - r.total_g).abs() <= 1e-9 * r.total_g.abs());
    }

    let fx = config().feature_extractor().unwrap();
    let fx_digest = portrait_core::losses::FeatureExtractor::digest(&fx);
    let aux = [aux("aux0", 7)];
    st.begin_stage2(&perf, &aux).unwrap();
    let data = StageTwoData::new(&perf, &aux, st.config.texture_weights).unwrap();
    st.run_stage2(&data, &StageTwoNets { estimator: &phi, features: &fx }, &mut log).unwrap();
    assert_ne!(st.discriminator.params.digest(), d_before.0);
    assert_eq!(phi.net.params.digest(), phi_digest);
    assert_eq!(portrait_core::losses::FeatureExtractor::digest(&fx), fx_digest);
    for r in &log[3..] {
        assert_eq!(r.stage, 2);
        assert_eq!(r.weights, LossWeights { alpha1: 100.0, alpha2: 1.0, alpha3: 1.0, alpha4: 1.0 });
        assert!(r.per.is_some() && r.con.is_some() && r.adv_g.is_some() && r.adv_d.is_some());
        assert!((r.recomputed_total() - r.total_g).abs() <= 1e-9 * r.total_g.abs());
    }
    assert!(st.latents.contains("aux0"));
}

#[test]
fn stage_two_requires_finished_stage_one_and_auxiliary_videos() {
    let perf = performing();
    let mut st = TrainState::new(config()).unwrap();
    st.begin_stage1(&perf).unwrap();
    st.stage1_step(&perf).unwrap();
    assert!(matches!(st.begin_stage2(&perf, &[aux("aux0", 7)]), Err(Error::Config(_))));
    st.run_stage1(&perf, &mut Vec::new()).unwrap();
    assert!(matches!(st.begin_stage2(&perf, &[]), Err(Error::Config(_))));
    st.config.aux_video_count = 0;
    st.begin_stage2(&perf, &[]).unwrap();
    assert_eq!(st.stage, Stage::Two);
    assert!(st.stage1_step(&perf).is_err());
}

#[test]
fn resume_reproduces_the_next_step_bitwise() {
    let perf = performing();
    let phi = estimator();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.ptck");

    let mut st = TrainState::new(config()).unwrap();
    st.begin_stage1(&perf).unwrap();
    st.stage1_step(&perf).unwrap();
    st.save(&path).unwrap();
    let mut resumed = TrainState::load(&path).unwrap();
    assert_eq!(resumed.digest(), st.digest());
    assert_eq!(resumed.stage1_step(&perf).unwrap(), st.stage1_step(&perf).unwrap());
    assert_eq!(resumed.digest(), st.digest());

    st.run_stage1(&perf, &mut Vec::new()).unwrap();
    let aux = [aux("aux0", 7)];
    st.begin_stage2(&perf, &aux).unwrap();
    let fx = st.config.feature_extractor().unwrap();
    let data = StageTwoData::new(&perf, &aux, st.config.texture_weights).unwrap();
    let nets = StageTwoNets { estimator: &phi, features: &fx };
    st.stage2_step(&data, &nets).unwrap();
    st.save(&path).unwrap();
    let mut resumed = TrainState::load(&path).unwrap();
    assert_eq!(resumed.stage2_step(&data, &nets).unwrap(), st.stage2_step(&data, &nets).unwrap());
    assert_eq!(resumed.digest(), st.digest());
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let perf = performing();
    let phi = estimator();
    let aux = [aux("aux0", 7)];
    let dir = tempfile::tempdir().unwrap();
    let (a, log_a) = full_run(&config(), &perf, &aux, &phi);
    let (b, log_b) = full_run(&config(), &perf, &aux, &phi);
    a.save(&dir.path().join("a.ptck")).unwrap();
    b.save(&dir.path().join("b.ptck")).unwrap();
    assert_eq!(log_a, log_b);
    assert_eq!(std::fs::read(dir.path().join("a.ptck")).unwrap(), std::fs::read(dir.path().join("b.ptck")).unwrap());
    let (c, _) = full_run(&TrainConfig { seed: 12, ..config() }, &perf, &aux, &phi);
    assert_ne!(c.digest(), a.digest());
}

#[test]
fn inference_does_not_mutate_state() {
    let perf = performing();
    let mut st = TrainState::new(config()).unwrap();
    st.begin_stage1(&perf).unwrap();
    st.stage1_step(&perf).unwrap();
    let before = st.digest();
    let a = st.infer_dataset(&perf, portrait_core::training::LatentPolicy::Lookup).unwrap();
    let b = st.infer_dataset(&perf, portrait_core::training::LatentPolicy::Lookup).unwrap();
    assert_eq!(a, b);
    assert_eq!(st.digest(), before);
    let driven = aux("unseen", 9);
    assert!(matches!(
        st.infer_dataset(&driven, portrait_core::training::LatentPolicy::Lookup),
        Err(Error::LatentMiss { .. })
    ));
    assert_eq!(st.infer_dataset(&driven, portrait_core::training::LatentPolicy::Zero).unwrap().len(), 8);
}

#[test]
fn offline_mode_appends_driven_parameters() {
    let pool: Vec<VideoDataset> = (0..3).map(|i| aux(&format!("aux{i}"), i)).collect();
    let driven = make_toy_video("driven", DatasetRole::Driven, &ToyIdentity::new(1), 4, 9, 32, TrajectoryConfig::default()).unwrap();
    let mut cfg = config();
    cfg.mode = TrainMode::Offline;
    let plan = select_mode(&cfg, pool.clone(), &driven).unwrap();
    assert!(plan.includes_driven);
    assert_eq!(plan.auxiliary.len(), 4);
    let appended = plan.auxiliary.last().unwrap();
    assert_eq!(appended.name(), "driven");
    assert!(!appended.has_images());
    assert!(appended.params().eq(driven.params()));
    cfg.mode = TrainMode::Online;
    let plan = select_mode(&cfg, pool.clone(), &driven).unwrap();
    assert!(!plan.includes_driven);
    assert_eq!(plan.auxiliary, pool);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn auxiliary_selections_are_nested(seed in any::<u64>(), n in 1usize..6) {
        let pool: Vec<VideoDataset> = (0..n).map(|i| aux(&format!("aux{i}"), i as u64)).collect();
        let mut previous: Vec<VideoDataset> = Vec::new();
        for k in 0..=n {
            let pick = sample_auxiliary(&pool, k, seed).unwrap();
            prop_assert_eq!(pick.len(), k);
            prop_assert_eq!(&pick[..previous.len()], &previous[..]);
            previous = pick;
        }
        let mut names: Vec<&str> = previous.iter().map(VideoDataset::name).collect();
        names.sort_unstable();
        names.dedup();
        prop_assert_eq!(names.len(), n);
        prop_assert!(matches!(sample_auxiliary(&pool, n + 1, seed), Err(Error::Config(_))));
    }
}
