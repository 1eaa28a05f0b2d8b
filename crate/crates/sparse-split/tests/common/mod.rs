//! Shared test infrastructure: an independent dense reference
//! implementation and a finite-difference gradient harness.
//!
//! The dense oracle is deliberately written textbook-style (nested loops,
//! plain accumulators, per-layer weight matrices) and shares no kernel
//! code with the engine, so agreement is evidence rather than tautology.

#![allow(dead_code)] // each integration test target uses a subset

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sparse_split::mlp::{Gradients, Matrix, Mlp};

/// Dense multilayer perceptron in f64 with explicit weight matrices.
pub struct DenseOracle {
    sizes: Vec<usize>,
    /// weights[i][n * sizes[i] + l]: layer i+1 node n, input l.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl DenseOracle {
    /// Mirror a fully connected engine model into dense matrices by
    /// walking its explicit edge list (no layout assumptions).
    pub fn from_model(model: &Mlp<f64>) -> DenseOracle {
        let sizes = model.config().layer_sizes().to_vec();
        assert!(
            model.config().is_fully_connected(),
            "the dense oracle only mirrors full-degree models"
        );
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (i, j) in model.junctions().iter().enumerate() {
            let (rows_in, rows_out) = (sizes[i], sizes[i + 1]);
            let mut w = vec![0.0f64; rows_in * rows_out];
            for ((l, r), &value) in j.topology().edge_pairs().zip(j.weights()) {
                w[r as usize * rows_in + l as usize] = value;
            }
            weights.push(w);
            biases.push(model.biases(i).to_vec());
        }
        DenseOracle { sizes, weights, biases }
    }

    /// Forward pass retaining pre-activations. Returns (z per layer,
    /// activations per layer incl. input).
    fn forward_full(&self, input: &[Vec<f64>]) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<Vec<f64>>>) {
        let layers = self.sizes.len() - 1;
        let mut zs: Vec<Vec<Vec<f64>>> = Vec::new();
        let mut acts: Vec<Vec<Vec<f64>>> = vec![input.to_vec()];
        for i in 0..layers {
            let (n_in, n_out) = (self.sizes[i], self.sizes[i + 1]);
            let mut z_layer = Vec::new();
            let mut a_layer = Vec::new();
            for row in &acts[i] {
                let mut z = vec![0.0f64; n_out];
                for n in 0..n_out {
                    let mut acc = self.biases[i][n];
                    for l in 0..n_in {
                        acc += self.weights[i][n * n_in + l] * row[l];
                    }
                    z[n] = acc;
                }
                let a = if i + 1 == self.sizes.len() - 1 {
                    z.clone()
                } else {
                    z.iter().map(|&v| v.max(0.0)).collect()
                };
                z_layer.push(z);
                a_layer.push(a);
            }
            zs.push(z_layer);
            acts.push(a_layer);
        }
        (zs, acts)
    }

    pub fn logits(&self, input: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let (_, acts) = self.forward_full(input);
        acts.last().unwrap().clone()
    }

    /// Mean softmax cross-entropy.
    pub fn loss(&self, input: &[Vec<f64>], labels: &[u8]) -> f64 {
        let logits = self.logits(input);
        let mut total = 0.0;
        for (row, &y) in logits.iter().zip(labels) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let den: f64 = row.iter().map(|&v| (v - mx).exp()).sum();
            total += den.ln() - (row[y as usize] - mx);
        }
        total / input.len() as f64
    }

    /// Textbook backprop. Returns (dW per layer, db per layer) for the
    /// mean loss.
    pub fn grad(&self, input: &[Vec<f64>], labels: &[u8]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let layers = self.sizes.len() - 1;
        let batch = input.len() as f64;
        let (zs, acts) = self.forward_full(input);
        let mut dw: Vec<Vec<f64>> = self.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut db: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();

        for (r, &y) in labels.iter().enumerate() {
            // delta at the output: softmax - onehot, scaled by 1/batch.
            let logits = &acts[layers][r];
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&v| (v - mx).exp()).collect();
            let den: f64 = exps.iter().sum();
            let mut delta: Vec<f64> = exps.iter().map(|e| e / den / batch).collect();
            delta[y as usize] -= 1.0 / batch;

            for i in (0..layers).rev() {
                let n_in = self.sizes[i];
                let a_prev = &acts[i][r];
                for n in 0..self.sizes[i + 1] {
                    db[i][n] += delta[n];
                    for l in 0..n_in {
                        dw[i][n * n_in + l] += delta[n] * a_prev[l];
                    }
                }
                if i > 0 {
                    let mut prev = vec![0.0f64; n_in];
                    for l in 0..n_in {
                        let mut acc = 0.0;
                        for n in 0..self.sizes[i + 1] {
                            acc += self.weights[i][n * n_in + l] * delta[n];
                        }
                        // ReLU gate on the pre-activation.
                        prev[l] = if zs[i - 1][r][l] > 0.0 { acc } else { 0.0 };
                    }
                    delta = prev;
                }
            }
        }
        (dw, db)
    }
}

/// Mean softmax cross-entropy computed from logits alone.
pub fn ce_from_logits(logits: &Matrix<f64>, labels: &[u8]) -> f64 {
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let den: f64 = row.iter().map(|&v| (v - mx).exp()).sum();
        total += den.ln() - (row[y as usize] - mx);
    }
    total / labels.len() as f64
}

/// Central-difference gradient of the engine's own mean loss wrt every
/// parameter, with ReLU-kink detection.
///
/// A finite difference is meaningless where the ±h perturbation flips a
/// ReLU's activation state (the loss has a corner there; FD measures the
/// jump, the analytic gradient correctly reports one side). Those
/// parameters come back flagged so the caller can skip them — and assert
/// they are rare.
pub fn finite_difference_grad(
    model: &Mlp<f64>,
    input: &Matrix<f64>,
    labels: &[u8],
    h: f64,
) -> (Vec<f64>, Vec<bool>) {
    let mut work = model.clone();
    let n = model.param_count();
    let mut grads = Vec::with_capacity(n);
    let mut kinked = Vec::with_capacity(n);
    let eval = |m: &Mlp<f64>| -> (f64, Vec<bool>) {
        let fwd = m.forward(input).unwrap();
        let mask: Vec<bool> = fwd
            .hidden
            .iter()
            .flat_map(|layer| layer.data().iter().map(|&a| a > 0.0))
            .collect();
        (ce_from_logits(&fwd.logits, labels), mask)
    };
    for i in 0..n {
        let theta = model.param_get(i);
        work.param_set(i, theta + h);
        let (plus, mask_p) = eval(&work);
        work.param_set(i, theta - h);
        let (minus, mask_m) = eval(&work);
        work.param_set(i, theta);
        grads.push((plus - minus) / (2.0 * h));
        kinked.push(mask_p != mask_m);
    }
    (grads, kinked)
}

/// Analytic engine gradient flattened in the model's parameter order.
pub fn analytic_grad(model: &Mlp<f64>, input: &Matrix<f64>, labels: &[u8]) -> Vec<f64> {
    let mut grads = Gradients::zeros_like(model);
    model.loss_and_grad(input, labels, &mut grads).unwrap();
    (0..model.param_count()).map(|i| Mlp::grad_get(&grads, i)).collect()
}

/// Relative error with an absolute floor so near-zero pairs compare
/// sanely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Random batch: inputs uniform in ±1.5, labels uniform over classes.
pub fn random_batch(
    rng: &mut ChaCha8Rng,
    rows: usize,
    width: usize,
    classes: usize,
) -> (Matrix<f64>, Vec<u8>) {
    let data: Vec<f64> = (0..rows * width).map(|_| rng.random_range(-1.5..1.5)).collect();
    let labels: Vec<u8> = (0..rows).map(|_| rng.random_range(0..classes) as u8).collect();
    (Matrix::from_vec(rows, width, data), labels)
}

pub fn rows_to_vecs(m: &Matrix<f64>) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
