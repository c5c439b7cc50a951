//! Independent reference computations shared by the integration tests and
//! the acceptance runner.
#![allow(dead_code)]

use nalgebra::DMatrix;
use portrait_core::autograd::Tensor;
use portrait_core::types::{FaceParams, PARAM_DIM, POSE_DIM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn top_singular_value(w: &Tensor) -> f64 {
    let rows = w.shape()[0];
    let cols = w.len() / rows;
    DMatrix::from_row_slice(rows, cols, w.data()).singular_values().max()
}

/// Share of (mean-removed) spectral energy in the three Nyquist bins of a
/// single-channel `h × w` map.
pub fn nyquist_fraction(x: &[f64], h: usize, w: usize) -> f64 {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let (mut rows, mut cols, mut both, mut energy) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..h {
        for j in 0..w {
            let v = x[i * w + j] - mean;
            let (si, sj) = (if i % 2 == 0 { 1.0 } else { -1.0 }, if j % 2 == 0 { 1.0 } else { -1.0 });
            rows += si * v;
            cols += sj * v;
            both += si * sj * v;
            energy += v * v;
        }
    }
    (rows * rows + cols * cols + both * both) / (energy * (h * w) as f64)
}

/// Share of (mean-removed) spectral energy whose row or column frequency lies
/// in the upper half band, from a direct 2-D DFT of an `n × n` map.
pub fn high_band_fraction(x: &[f64], n: usize) -> f64 {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let (mut high, mut total) = (0.0, 0.0);
    for ku in 0..n {
        for kv in 0..n {
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let phase = -std::f64::consts::TAU * ((ku * i + kv * j) % n) as f64 / n as f64;
                    let v = x[i * n + j] - mean;
                    re += v * phase.cos();
                    im += v * phase.sin();
                }
            }
            let e = re * re + im * im;
            let band = |k: usize| k > n / 4 && k < n - n / 4;
            if band(ku) || band(kv) {
                high += e;
            }
            total += e;
        }
    }
    high / total
}

/// Smooth periodic random map: a sum of a few low-frequency cosines.
pub fn smooth_map(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64, f64)> =
        (0..4).map(|_| (rng.random_range(0..3) as f64, rng.random_range(0..3) as f64, rng.random_range(0.0..6.28), rng.random_range(0.5..1.0))).collect();
    (0..n * n)
        .map(|k| {
            let (i, j) = ((k / n) as f64 / n as f64, (k % n) as f64 / n as f64);
            waves.iter().map(|&(a, b, p, m)| m * (std::f64::consts::TAU * (a * i + b * j) + p).cos()).sum()
        })
        .collect()
}

pub fn zero_insertion(x: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; 4 * n * n];
    for i in 0..n {
        for j in 0..n {
            out[(2 * i) * 2 * n + 2 * j] = x[i * n + j];
        }
    }
    out
}

pub fn gaussian(n: usize, means: &[f64], sds: &[f64], seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dists: Vec<Normal<f64>> = means.iter().zip(sds).map(|(&m, &s)| Normal::new(m, s).unwrap()).collect();
    (0..n).map(|_| dists.iter().map(|d| d.sample(&mut rng)).collect()).collect()
}

/// Fréchet distance of two Gaussians with diagonal covariances.
pub fn diagonal_oracle(m1: &[f64], s1: &[f64], m2: &[f64], s2: &[f64]) -> f64 {
    let mean: f64 = m1.iter().zip(m2).map(|(a, b)| (a - b).powi(2)).sum();
    let cov: f64 = s1.iter().zip(s2).map(|(a, b)| (a - b).powi(2)).sum();
    mean + cov
}

pub fn cluster(centre: f64, n: usize, seed: u64) -> Vec<FaceParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.05).unwrap();
    (0..n)
        .map(|_| {
            let mut v = vec![0.0; PARAM_DIM];
            for (d, x) in v.iter_mut().enumerate().take(POSE_DIM + 5) {
                *x = noise.sample(&mut rng) + if d == 0 || d == POSE_DIM { centre * 0.3 } else { 0.0 };
            }
            FaceParams::from_concat(&v).unwrap()
        })
        .collect()
}

pub fn centroid(points: &[[f64; 2]]) -> [f64; 2] {
    let n = points.len() as f64;
    [points.iter().map(|p| p[0]).sum::<f64>() / n, points.iter().map(|p| p[1]).sum::<f64>() / n]
}

pub fn radius(points: &[[f64; 2]]) -> f64 {
    let c = centroid(points);
    points.iter().map(|p| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt()).sum::<f64>() / points.len() as f64
}
