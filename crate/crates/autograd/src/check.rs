//! Central finite-difference gradient checking.
//!
//! These helpers only ever evaluate forward values, so they stay independent
//! of the backward closures they are used to verify.

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// `||a - b|| / max(||a||, ||b||)`; zero when both are (numerically) zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of a scalar function at the given element indices.
pub fn numeric_gradient(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, indices: &[usize], eps: f64) -> Vec<f64> {
    indices
        .iter()
        .map(|&i| {
            let mut plus = x.clone();
            plus.data_mut()[i] += eps;
            let mut minus = x.clone();
            minus.data_mut()[i] -= eps;
            (f(&plus) - f(&minus)) / (2.0 * eps)
        })
        .collect()
}

/// Evenly spread element indices, at most `max` of them.
pub fn sample_indices(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    (0..max).map(|i| i * len / max + (i * 7919) % (len / max).max(1)).collect()
}

/// Compare backward-pass gradients of the scalar `build(graph, inputs)` with
/// central differences for every input, checking at most `max_per_input`
/// elements of each. Returns the worst relative error over inputs.
pub fn check_inputs(
    build: impl for<'g> Fn(&'g Graph, &[Var<'g>]) -> Var<'g>,
    inputs: &[Tensor],
    max_per_input: usize,
    eps: f64,
) -> f64 {
    let g = Graph::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = build(&g, &vars);
    assert_eq!(out.value().len(), 1, "gradient check needs a scalar output");
    let grads = g.backward(out);
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let idx = sample_indices(input.len(), max_per_input);
        let analytic = grads.get_or_zeros(vars[k]);
        let analytic: Vec<f64> = idx.iter().map(|&i| analytic.data()[i]).collect();
        let numeric = numeric_gradient(
            |x| {
                let g = Graph::new();
                let vars: Vec<Var<'_>> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| g.constant(if j == k { x.clone() } else { t.clone() }))
                    .collect();
                build(&g, &vars).value().item()
            },
            input,
            &idx,
            eps,
        );
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}
