//! Central finite-difference gradient checking.
//!
//! Evaluates a scalar-valued graph builder twice per perturbed element and
//! compares against the gradients produced by [`Graph::backward`]. The
//! differencing path only ever calls forward kernels, so it stays
//! independent of the backward implementation it validates.

use crate::tensor::{Graph, TensorData, TensorError, TensorId};

/// Builds a scalar loss from freshly registered leaves.
pub trait LossBuilder: Fn(&mut Graph, &[TensorId]) -> Result<TensorId, TensorError> {}
impl<F: Fn(&mut Graph, &[TensorId]) -> Result<TensorId, TensorError>> LossBuilder for F {}

fn eval(inputs: &[TensorData], f: &impl LossBuilder) -> Result<f64, TensorError> {
    let mut g = Graph::new();
    let ids: Vec<TensorId> = inputs
        .iter()
        .map(|t| g.leaf(t.clone(), false))
        .collect::<Result<_, _>>()?;
    let loss = f(&mut g, &ids)?;
    if g.data(loss).len() != 1 {
        return Err(TensorError::NotScalar);
    }
    Ok(g.scalar_f64(loss).unwrap_or_else(|| g.data(loss)[0] as f64))
}

/// Analytic gradients of the loss with respect to every input tensor.
pub fn analytic_grads(inputs: &[TensorData], f: &impl LossBuilder) -> Result<Vec<Vec<f64>>, TensorError> {
    let mut g = Graph::new();
    let ids: Vec<TensorId> = inputs
        .iter()
        .map(|t| g.leaf(t.clone(), true))
        .collect::<Result<_, _>>()?;
    let loss = f(&mut g, &ids)?;
    g.backward(loss)?;
    Ok(ids
        .iter()
        .zip(inputs)
        .map(|(id, t)| match g.grad(*id) {
            Some(gr) => gr.iter().map(|v| *v as f64).collect(),
            None => vec![0.0; t.data.len()],
        })
        .collect())
}

/// Central finite differences with step `h` on every element.
pub fn finite_difference_grads(
    inputs: &[TensorData],
    f: &impl LossBuilder,
    h: f64,
) -> Result<Vec<Vec<f64>>, TensorError> {
    let mut grads = Vec::with_capacity(inputs.len());
    for ti in 0..inputs.len() {
        let mut g = vec![0.0f64; inputs[ti].data.len()];
        for ei in 0..g.len() {
            let orig = inputs[ti].data[ei];
            let mut work = inputs.to_vec();
            work[ti].data[ei] = (orig as f64 + h) as f32;
            let up = eval(&work, f)?;
            work[ti].data[ei] = (orig as f64 - h) as f32;
            let down = eval(&work, f)?;
            g[ei] = (up - down) / (2.0 * h);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Largest per-tensor relative error between analytic and finite-difference
/// gradients: ||ga - gf|| / max(||ga||, ||gf||), 0 when both vanish.
pub fn max_rel_error(inputs: &[TensorData], f: &impl LossBuilder, h: f64) -> Result<f64, TensorError> {
    let ga = analytic_grads(inputs, f)?;
    let gf = finite_difference_grads(inputs, f, h)?;
    let mut worst = 0.0f64;
    for (a, b) in ga.iter().zip(&gf) {
        let na = norm(a);
        let nb = norm(b);
        let nd = norm(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>());
        let denom = na.max(nb);
        if denom > 1e-12 {
            worst = worst.max(nd / denom);
        } else if nd > 1e-9 {
            worst = worst.max(1.0);
        }
    }
    Ok(worst)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Deterministic filler for test tensors: roughly uniform in [-1,1], kept
/// away from zero so ReLU-style kinks stay clear of the probe step.
pub fn kink_free_values(n: usize, seed: u64, min_abs: f32) -> Vec<f32> {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
    (0..n)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let u = ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0;
            let v = u as f32;
            if v.abs() < min_abs {
                if v >= 0.0 {
                    v + min_abs
                } else {
                    v - min_abs
                }
            } else {
                v
            }
        })
        .collect()
}
