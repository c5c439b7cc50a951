//! Metric oracles: closed-form Fréchet distances, degenerate identical sets
//! and principal-component projections.

#[path = "support/oracles.rs"]
mod oracles;

use oracles::{centroid, cluster, diagonal_oracle, gaussian, radius};
use portrait_core::metrics::{
    aed_apd, cosine_similarity, csim, fid, frechet_distance, l1_metric, project_params_2d, Embedder, ProjectionTarget,
};
use portrait_core::toyworld::cnn::SmallCnn;
use portrait_core::toyworld::{make_toy_video, CnnConfig, ToyEmbedder, ToyEstimator, ToyIdentity, TrajectoryConfig};
use portrait_core::types::{DatasetRole, FaceParams, Image, EXPR_DIM, PARAM_DIM, POSE_DIM};
use proptest::prelude::*;

#[test]
fn frechet_distance_matches_closed_form_in_one_dimension() {
    let (m1, s1, m2, s2) = ([0.0], [1.0], [1.0], [2.0]);
    let a = gaussian(10_000, &m1, &s1, 1);
    let b = gaussian(10_000, &m2, &s2, 2);
    let want = diagonal_oracle(&m1, &s1, &m2, &s2);
    let got = frechet_distance(&a, &b, 0.0).unwrap();
    assert!((got - want).abs() / want < 0.02, "{got} vs {want}");
}

#[test]
fn frechet_distance_matches_closed_form_in_two_dimensions() {
    let (m1, s1, m2, s2) = ([0.0, 1.0], [1.0, 0.5], [2.0, -1.0], [3.0, 1.0]);
    let a = gaussian(10_000, &m1, &s1, 3);
    let b = gaussian(10_000, &m2, &s2, 4);
    let want = diagonal_oracle(&m1, &s1, &m2, &s2);
    let got = frechet_distance(&a, &b, 0.0).unwrap();
    assert!((got - want).abs() / want < 0.02, "{got} vs {want}");
}

#[test]
fn frechet_distance_handles_correlated_covariances() {
    // Rotating both sets by the same orthogonal map leaves the distance unchanged.
    let a = gaussian(4000, &[0.0, 0.0], &[1.0, 0.3], 5);
    let b = gaussian(4000, &[1.0, 0.0], &[0.5, 2.0], 6);
    let (c, s) = (0.6_f64, 0.8_f64);
    let rot = |v: &Vec<f64>| vec![c * v[0] - s * v[1], s * v[0] + c * v[1]];
    let base = frechet_distance(&a, &b, 0.0).unwrap();
    let rotated = frechet_distance(&a.iter().map(rot).collect::<Vec<_>>(), &b.iter().map(rot).collect::<Vec<_>>(), 0.0).unwrap();
    assert!((base - rotated).abs() < 1e-9 * base.max(1.0));
}

#[test]
fn small_samples_need_shrinkage() {
    let a = gaussian(3, &[0.0; 4], &[1.0; 4], 7);
    assert!(frechet_distance(&a, &a, 0.0).is_err());
    assert!(frechet_distance(&a, &a, 1e-6).unwrap() < 1e-6);
}

fn toy_images(n: usize) -> Vec<Image> {
    let ds = make_toy_video("v", DatasetRole::Driven, &ToyIdentity::new(4), n, 8, 32, TrajectoryConfig::default()).unwrap();
    ds.frames().iter().map(|f| f.image.clone().unwrap()).collect()
}

fn tiny_embedder() -> ToyEmbedder {
    let config = CnnConfig { input_size: 16, channels: vec![4, 8], hidden: 6, heads: vec![2, 10] };
    ToyEmbedder { net: SmallCnn::new("embed", config, 1).unwrap() }
}

fn tiny_estimator() -> ToyEstimator {
    let config = CnnConfig { input_size: 16, channels: vec![4, 8], hidden: 8, heads: vec![10] };
    ToyEstimator { net: SmallCnn::new("phi", config, 2).unwrap(), identity_seed: 4 }
}

#[test]
fn identical_sets_are_degenerate() {
    let imgs = toy_images(12);
    let refs: Vec<&Image> = imgs.iter().collect();
    let emb = tiny_embedder();
    assert_eq!(l1_metric(&refs, &refs).unwrap(), 0.0);
    assert!(fid(&refs, &refs, &emb).unwrap() < 1e-6);
    assert!((csim(&refs, &refs, &emb).unwrap().mean - 1.0).abs() < 1e-12);
    let d = aed_apd(&refs, &refs, &tiny_estimator()).unwrap();
    assert_eq!((d.aed, d.apd, d.skipped), (0.0, 0.0, 0));
}

#[test]
fn paired_metrics_reject_unpaired_sets() {
    let imgs = toy_images(4);
    let a: Vec<&Image> = imgs.iter().collect();
    assert!(l1_metric(&a, &a[..3]).is_err());
    assert!(csim(&a, &a[..3], &tiny_embedder()).is_err());
    assert!(aed_apd(&a, &a[..3], &tiny_estimator()).is_err());
}

#[test]
fn embeddings_are_deterministic() {
    let imgs = toy_images(5);
    let refs: Vec<&Image> = imgs.iter().collect();
    let emb = tiny_embedder();
    let a = emb.embed(&refs).unwrap();
    assert_eq!(a, emb.embed(&refs).unwrap());
    assert_eq!(a.len(), 5);
    assert!(a.iter().all(|v| v.len() == emb.dim()));
}

#[test]
fn projection_separates_two_clusters() {
    let sets = vec![("a".to_string(), cluster(1.0, 40, 1)), ("b".to_string(), cluster(-1.0, 40, 2))];
    for target in [ProjectionTarget::Expression, ProjectionTarget::Pose] {
        let out = project_params_2d(&sets, target).unwrap();
        let (ca, cb) = (centroid(&out[0].points), centroid(&out[1].points));
        let gap = ((ca[0] - cb[0]).powi(2) + (ca[1] - cb[1]).powi(2)).sqrt();
        let intra = radius(&out[0].points).max(radius(&out[1].points));
        assert!(gap > 3.0 * intra, "{target:?}: gap {gap} intra {intra}");
    }
}

#[test]
fn projection_preserves_pairwise_distances_of_planar_data() {
    // Data spanning two expression dimensions projects isometrically.
    let pts = [[0.0, 0.0], [0.4, 0.1], [-0.2, 0.3], [0.1, -0.5]];
    let params: Vec<FaceParams> = pts
        .iter()
        .map(|p| {
            let mut v = vec![0.0; PARAM_DIM];
            v[POSE_DIM + 1] = p[0];
            v[POSE_DIM + EXPR_DIM - 1] = p[1];
            FaceParams::from_concat(&v).unwrap()
        })
        .collect();
    let out = project_params_2d(&[("s".into(), params)], ProjectionTarget::Expression).unwrap();
    let q = &out[0].points;
    for i in 0..4 {
        for j in 0..4 {
            let d_in = ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt();
            let d_out = ((q[i][0] - q[j][0]).powi(2) + (q[i][1] - q[j][1]).powi(2)).sqrt();
            assert!((d_in - d_out).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cosine_similarity_is_bounded_and_symmetric(
        a in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 1..6),
        b in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 1..6),
    ) {
        let n = a.len().min(b.len());
        let (a, b) = (&a[..n], &b[..n]);
        if let (Ok(x), Ok(y)) = (cosine_similarity(a, b), cosine_similarity(b, a)) {
            prop_assert!((-1.0..=1.0).contains(&x.mean));
            prop_assert_eq!(x.mean, y.mean);
        }
    }

    #[test]
    fn frechet_distance_is_symmetric_and_non_negative(seed in 0u64..1000, shift in -2.0f64..2.0) {
        let a = gaussian(30, &[0.0, 0.0], &[1.0, 0.5], seed);
        let b = gaussian(30, &[shift, 0.0], &[0.7, 1.2], seed + 1);
        let ab = frechet_distance(&a, &b, 1e-6).unwrap();
        let ba = frechet_distance(&b, &a, 1e-6).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-8 * ab.max(1.0));
    }
}
