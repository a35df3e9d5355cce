//! Reference computations shared by the integration tests, written
//! independently of the library's own forward and backward passes.
#![allow(dead_code)]

use fedsel::model::{loss_and_gradient, Dataset, ModelParams};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Reference logits. Per layer: weights `[in][out]` row-major, then biases.
pub fn oracle_logits(shape: &[usize], w: &[f64], x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    let mut off = 0;
    for l in 0..shape.len() - 1 {
        let (n_in, n_out) = (shape[l], shape[l + 1]);
        let mut z = vec![0.0; n_out];
        for j in 0..n_out {
            let mut s = w[off + n_in * n_out + j];
            for i in 0..n_in {
                s += a[i] * w[off + i * n_out + j];
            }
            z[j] = s;
        }
        off += n_in * n_out + n_out;
        a = if l + 2 < shape.len() {
            z.iter().map(|v| v.tanh()).collect()
        } else {
            z
        };
    }
    a
}

pub fn oracle_loss(shape: &[usize], w: &[f64], data: &Dataset, batch: &[usize]) -> f64 {
    let mut total = 0.0;
    for &i in batch {
        let z = oracle_logits(shape, w, data.row(i));
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - z[data.labels()[i]];
    }
    total / batch.len() as f64
}

pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, dim: usize, k: usize) -> Dataset {
    let features = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let labels = (0..n).map(|_| rng.random_range(0..k)).collect();
    Dataset::new(features, dim, labels, k).unwrap()
}

/// Norm-wise relative error between analytic and central-difference
/// gradients.
pub fn gradient_rel_error(shape: &[usize], params: &ModelParams, data: &Dataset, batch: &[usize]) -> f64 {
    let (_, analytic) = loss_and_gradient(params, data, batch).unwrap();
    let h = 1e-5;
    let mut w = params.values().to_vec();
    let mut num = vec![0.0; w.len()];
    for p in 0..w.len() {
        let orig = w[p];
        w[p] = orig + h;
        let up = oracle_loss(shape, &w, data, batch);
        w[p] = orig - h;
        let down = oracle_loss(shape, &w, data, batch);
        w[p] = orig;
        num[p] = (up - down) / (2.0 * h);
    }
    let diff: f64 = analytic.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = num.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-12)
}
