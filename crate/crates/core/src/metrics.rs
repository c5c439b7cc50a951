//! Evaluation metrics: pixel L1, feature-space perceptual distance, Fréchet
//! distance of embeddings, identity cosine similarity, expression and pose
//! distances read back by an estimator, and a 2D principal-component
//! projection of parameter sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use portrait_autograd::Graph;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{FeatureExtractor, ParamEstimator};
use crate::types::{FaceParams, Image, EXPR_DIM, PARAM_DIM, POSE_DIM};

/// Ridge added to covariance diagonals before the matrix square root.
pub const FID_SHRINKAGE: f64 = 1e-6;
const CHUNK: usize = 32;

/// Deterministic map from images to fixed-width feature vectors.
pub trait Embedder {
    fn dim(&self) -> usize;
    fn embed(&self, images: &[&Image]) -> Result<Vec<Vec<f64>>>;
    fn digest(&self) -> String;
}

/// One line of a metric report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub experiment: String,
    pub metric: String,
    pub value: f64,
}

/// Whether larger values of `metric` mean better output.
pub fn higher_is_better(metric: &str) -> bool {
    metric == "csim"
}

/// Ordering of one metric shared by two reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub metric: String,
    pub a: f64,
    pub b: f64,
    /// `b` is at least as good as `a`.
    pub b_not_worse: bool,
}

/// Compare every metric present in both reports, in the order of `a`.
pub fn compare_reports(a: &[MetricRecord], b: &[MetricRecord]) -> Vec<MetricComparison> {
    a.iter()
        .filter_map(|ra| {
            let rb = b.iter().find(|r| r.metric == ra.metric)?;
            let b_not_worse = if higher_is_better(&ra.metric) { rb.value >= ra.value } else { rb.value <= ra.value };
            Some(MetricComparison { metric: ra.metric.clone(), a: ra.value, b: rb.value, b_not_worse })
        })
        .collect()
}

fn check_paired(a: &[&Image], b: &[&Image]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("paired sets differ in size: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Value("image sets are empty".into()));
    }
    Ok(())
}

/// Mean absolute pixel difference over all pairs.
pub fn l1_metric(a: &[&Image], b: &[&Image]) -> Result<f64> {
    check_paired(a, b)?;
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        total += x.mean_abs_diff(y)?;
    }
    Ok(total / a.len() as f64)
}

/// Mean absolute feature difference of paired images under `fx`.
pub fn perceptual_metric(a: &[&Image], b: &[&Image], fx: &dyn FeatureExtractor) -> Result<f64> {
    check_paired(a, b)?;
    let mut total = 0.0;
    for (ca, cb) in a.chunks(CHUNK).zip(b.chunks(CHUNK)) {
        let g = Graph::new();
        let fa = fx.features(&g, g.constant(Image::batch_tensor(ca)?)).value();
        let fb = fx.features(&g, g.constant(Image::batch_tensor(cb)?)).value();
        let per_image = fa.len() / ca.len();
        total += fa.data().iter().zip(fb.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / per_image as f64;
    }
    Ok(total / a.len() as f64)
}

fn mean_and_covariance(features: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = features.len();
    let d = features.first().map_or(0, Vec::len);
    if n < 2 || d == 0 || features.iter().any(|f| f.len() != d) {
        return Err(Error::Shape(format!("need at least two feature vectors of equal non-zero width, got {n}")));
    }
    let m = DMatrix::from_fn(n, d, |i, j| features[i][j]);
    let mean = DVector::from_iterator(d, m.column_iter().map(|c| c.mean()));
    let mut centered = m;
    for (mut col, mu) in centered.column_iter_mut().zip(mean.iter()) {
        col.add_scalar_mut(-mu);
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    Ok((mean, cov))
}

fn symmetric_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussians fitted to two feature sets, with
/// `shrinkage` added to both covariance diagonals. Zero shrinkage requires
/// more samples than feature dimensions in both sets.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>], shrinkage: f64) -> Result<f64> {
    let (mu_a, mut cov_a) = mean_and_covariance(a)?;
    let (mu_b, mut cov_b) = mean_and_covariance(b)?;
    let d = mu_a.len();
    if mu_b.len() != d {
        return Err(Error::Shape(format!("feature widths differ: {d} vs {}", mu_b.len())));
    }
    if shrinkage <= 0.0 && (a.len() <= d || b.len() <= d) {
        return Err(Error::Value(format!(
            "covariance of {d}-dimensional features is singular with {} and {} samples; use shrinkage",
            a.len(),
            b.len()
        )));
    }
    for i in 0..d {
        cov_a[(i, i)] += shrinkage;
        cov_b[(i, i)] += shrinkage;
    }
    let root_a = symmetric_sqrt(&cov_a);
    let inner = &root_a * &cov_b * &root_a;
    let cross = SymmetricEigen::new((&inner + inner.transpose()) * 0.5).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum::<f64>();
    let diff = (&mu_a - &mu_b).norm_squared();
    Ok((diff + cov_a.trace() + cov_b.trace() - 2.0 * cross).max(0.0))
}

/// Fréchet distance of embedded image sets.
pub fn fid(a: &[&Image], b: &[&Image], emb: &dyn Embedder) -> Result<f64> {
    frechet_distance(&emb.embed(a)?, &emb.embed(b)?, FID_SHRINKAGE)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsimReport {
    pub mean: f64,
    /// Pairs skipped because one embedding had zero norm.
    pub excluded: usize,
}

/// Mean cosine similarity of paired feature vectors.
pub fn cosine_similarity(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<CsimReport> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("paired sets differ in size: {} vs {}", a.len(), b.len())));
    }
    let (mut sum, mut used, mut excluded) = (0.0, 0usize, 0usize);
    for (x, y) in a.iter().zip(b) {
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nx == 0.0 || ny == 0.0 {
            excluded += 1;
            continue;
        }
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        sum += (dot / (nx * ny)).clamp(-1.0, 1.0);
        used += 1;
    }
    if excluded > 0 {
        log::warn!("cosine similarity skipped {excluded} zero-norm pairs");
    }
    if used == 0 {
        return Err(Error::Value("no pair with non-zero embeddings".into()));
    }
    Ok(CsimReport { mean: sum / used as f64, excluded })
}

/// Mean cosine similarity of paired image embeddings.
pub fn csim(a: &[&Image], b: &[&Image], emb: &dyn Embedder) -> Result<CsimReport> {
    check_paired(a, b)?;
    cosine_similarity(&emb.embed(a)?, &emb.embed(b)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamDistances {
    /// Mean L2 distance of estimated expression coefficients.
    pub aed: f64,
    /// Mean L2 distance of estimated pose coefficients.
    pub apd: f64,
    /// Pairs skipped because an estimate was not finite.
    pub skipped: usize,
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Expression and pose distances between paired images as read by `phi`.
pub fn aed_apd(generated: &[&Image], driven: &[&Image], phi: &dyn ParamEstimator) -> Result<ParamDistances> {
    check_paired(generated, driven)?;
    let (mut aed, mut apd, mut used, mut skipped) = (0.0, 0.0, 0usize, 0usize);
    for (cg, cd) in generated.chunks(CHUNK).zip(driven.chunks(CHUNK)) {
        let g = Graph::new();
        let eg = phi.estimate(&g, g.constant(Image::batch_tensor(cg)?))?.value();
        let ed = phi.estimate(&g, g.constant(Image::batch_tensor(cd)?))?.value();
        for (x, y) in eg.data().chunks_exact(PARAM_DIM).zip(ed.data().chunks_exact(PARAM_DIM)) {
            if x.iter().chain(y).any(|v| !v.is_finite()) {
                skipped += 1;
                continue;
            }
            apd += l2(&x[..POSE_DIM], &y[..POSE_DIM]);
            aed += l2(&x[POSE_DIM..POSE_DIM + EXPR_DIM], &y[POSE_DIM..POSE_DIM + EXPR_DIM]);
            used += 1;
        }
    }
    if skipped > 0 {
        log::warn!("parameter distances skipped {skipped} frames with non-finite estimates");
    }
    if used == 0 {
        return Err(Error::Value("no frame produced a finite estimate".into()));
    }
    Ok(ParamDistances { aed: aed / used as f64, apd: apd / used as f64, skipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionTarget {
    Expression,
    Pose,
}

impl ProjectionTarget {
    fn coefficients(self, p: &FaceParams) -> &[f64] {
        match self {
            ProjectionTarget::Expression => p.expression(),
            ProjectionTarget::Pose => p.pose(),
        }
    }
}

/// Labeled 2D points of one projected set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedSet {
    pub label: String,
    pub points: Vec<[f64; 2]>,
}

/// Project the chosen coefficients of all sets onto the top two principal
/// directions of the pooled, centred data. Each direction's sign is fixed so
/// that its largest-magnitude component is positive.
pub fn project_params_2d(sets: &[(String, Vec<FaceParams>)], target: ProjectionTarget) -> Result<Vec<ProjectedSet>> {
    let rows: Vec<&[f64]> = sets.iter().flat_map(|(_, ps)| ps.iter().map(|p| target.coefficients(p))).collect();
    if rows.len() < 3 {
        return Err(Error::Value(format!("projection needs at least 3 points, got {}", rows.len())));
    }
    let d = rows[0].len();
    let data = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    let mean = DVector::from_iterator(d, data.column_iter().map(|c| c.mean()));
    let mut centered = data;
    for (mut col, mu) in centered.column_iter_mut().zip(mean.iter()) {
        col.add_scalar_mut(-mu);
    }
    let cov = centered.transpose() * &centered / rows.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let axes: Vec<DVector<f64>> = order
        .iter()
        .take(2)
        .map(|&k| {
            if eig.eigenvalues[k] <= 1e-12 * scale {
                return DVector::zeros(d);
            }
            let v = eig.eigenvectors.column(k).into_owned();
            let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if pivot < 0.0 { -v } else { v }
        })
        .collect();
    let zero = DVector::zeros(d);
    let axis = |i: usize| axes.get(i).unwrap_or(&zero);
    let mut row = 0;
    Ok(sets
        .iter()
        .map(|(label, ps)| {
            let points = ps
                .iter()
                .map(|_| {
                    let r = centered.row(row).transpose();
                    row += 1;
                    [r.dot(axis(0)), r.dot(axis(1))]
                })
                .collect();
            ProjectedSet { label: label.clone(), points }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(values: &[f64]) -> Vec<Vec<f64>> {
        values.iter().map(|&v| vec![v]).collect()
    }

    #[test]
    fn l1_of_a_constant_offset() {
        let a = Image::filled(4, 4, 0.2);
        let b = Image::filled(4, 4, 0.3);
        assert!((l1_metric(&[&a], &[&b]).unwrap() - 0.1).abs() < 1e-12);
        assert!(l1_metric(&[&a], &[]).is_err());
    }

    #[test]
    fn frechet_of_identical_sets_is_zero() {
        let a = feats(&[0.0, 1.0, 2.0, 5.0]);
        assert!(frechet_distance(&a, &a, FID_SHRINKAGE).unwrap() < 1e-6);
    }

    #[test]
    fn singular_covariance_needs_shrinkage() {
        let a = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert!(frechet_distance(&a, &a, 0.0).is_err());
        assert!(frechet_distance(&a, &a, FID_SHRINKAGE).is_ok());
    }

    #[test]
    fn cosine_signs_and_exclusions() {
        let a = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        let b = vec![vec![-2.0, 0.0], vec![1.0, 0.0]];
        let r = cosine_similarity(&a, &b).unwrap();
        assert_eq!(r.excluded, 1);
        assert!((r.mean + 1.0).abs() < 1e-12);
    }

    #[test]
    fn repeated_point_projects_to_origin() {
        let sets = vec![("s".to_string(), vec![FaceParams::zeros(); 4])];
        let out = project_params_2d(&sets, ProjectionTarget::Pose).unwrap();
        assert!(out[0].points.iter().all(|p| p == &[0.0, 0.0]));
    }

    #[test]
    fn comparisons_respect_metric_direction() {
        let rec = |metric: &str, value| MetricRecord { experiment: String::new(), metric: metric.into(), value };
        let a = vec![rec("l1", 0.2), rec("csim", 0.8), rec("fid", 1.0)];
        let b = vec![rec("csim", 0.9), rec("l1", 0.3)];
        let c = compare_reports(&a, &b);
        assert_eq!(c.len(), 2);
        assert_eq!((c[0].metric.as_str(), c[0].b_not_worse), ("l1", false));
        assert_eq!((c[1].metric.as_str(), c[1].b_not_worse), ("csim", true));
    }
}
