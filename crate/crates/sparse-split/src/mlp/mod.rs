//! The sparse network itself.
//!
//! Weights live in canonical edge order (see [`crate::topology`]), biases
//! are dense. Forward and backward touch existing edges only — sparsity is
//! structural, not a mask over a dense matrix — so compute and memory scale
//! with the edge count. Everything is generic over the scalar type:
//! `f32` is the deployment type, `f64` the shadow type used by the
//! numerical oracles, and both run the exact same kernel code.
//!
//! Determinism contract: fixed seed, fixed thread count → bit-identical
//! weights, losses and predictions. All reductions have a fixed order.

mod adam;
mod checkpoint;
mod histogram;
mod train;

pub use adam::{sgd_step, AdamState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CheckpointError,
};
pub use histogram::{weight_histogram, HistogramSpec, WeightHistogram};
pub use train::{evaluate, mean_loss, train, train_with, EpochStats, TrainConfig, TrainHistory};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::seed::derive_seed;
use crate::topology::{build_topology, JunctionTopology, NeuronalConfig, TopologyError};

/// Floating scalar the engine runs on. `f32` in deployment, `f64` when a
/// test wants numerical noise out of the way.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssign + Default + std::fmt::Debug + Send + Sync + 'static
{
    fn from_f64_lossy(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("finite f64 converts")
    }
    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("float widens to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{what}: expected {expected}, got {got}")]
    ShapeMismatch { what: &'static str, expected: usize, got: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("junction index {index} out of range for {count} junctions")]
    BadJunctionIndex { index: usize, count: usize },
    #[error("bad histogram range: {0}")]
    BadRange(String),
    #[error("split index {s} out of range: head must keep 1..={max} junctions")]
    BadSplitIndex { s: usize, max: usize },
    #[error("exit threshold {0} outside [0, 1]")]
    BadThreshold(f64),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// Dense row-major matrix. Row = one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn fill(&mut self, v: T) {
        self.data.fill(v);
    }

    /// Copy of the given row range as its own matrix.
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> Matrix<T> {
        let data = self.data[range.start * self.cols..range.end * self.cols].to_vec();
        Matrix { rows: range.len(), cols: self.cols, data }
    }

    pub fn map_convert<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| U::from_f64_lossy(x.to_f64_lossy())).collect(),
        }
    }
}

/// Fixed-order dot product with eight lanes, so the compiler can vectorize
/// without being allowed to reassociate arbitrarily.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let mut ai = a.chunks_exact(8);
    let mut bi = b.chunks_exact(8);
    for (ca, cb) in ai.by_ref().zip(bi.by_ref()) {
        for k in 0..8 {
            acc[k] = acc[k] + ca[k] * cb[k];
        }
    }
    for (k, (&x, &y)) in ai.remainder().iter().zip(bi.remainder()).enumerate() {
        acc[k] = acc[k] + x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// One weight layer: a realized topology plus a weight per edge, in
/// canonical edge order.
#[derive(Clone, Debug, PartialEq)]
pub struct Junction<T> {
    topology: JunctionTopology,
    weights: Vec<T>,
}

impl<T: Scalar> Junction<T> {
    pub fn new(topology: JunctionTopology, weights: Vec<T>) -> Result<Self, ModelError> {
        if weights.len() != topology.edge_count() {
            return Err(ModelError::ShapeMismatch {
                what: "junction weights",
                expected: topology.edge_count(),
                got: weights.len(),
            });
        }
        Ok(Junction { topology, weights })
    }

    pub fn topology(&self) -> &JunctionTopology {
        &self.topology
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    /// `out[r][n] = act(bias[n] + sum_k w[n,k] * input[r][lefts[n,k]])`.
    ///
    /// Right-node-outer loop order: the weight row for node `n` is streamed
    /// exactly once per batch while the input rows stay cache-resident.
    fn forward_into(&self, input: &Matrix<T>, bias: &[T], relu: bool, out: &mut Matrix<T>) {
        let spec = self.topology.spec();
        debug_assert_eq!(input.cols(), spec.left_size);
        debug_assert_eq!(out.cols(), spec.right_size);
        debug_assert_eq!(out.rows(), input.rows());
        let d_in = spec.d_in;
        let rows = input.rows();
        let full = self.topology.is_full();
        for n in 0..spec.right_size {
            let w = &self.weights[n * d_in..(n + 1) * d_in];
            let b = bias[n];
            if full {
                for r in 0..rows {
                    let mut z = b + dot(w, input.row(r));
                    if relu {
                        z = z.max(T::zero());
                    }
                    out.row_mut(r)[n] = z;
                }
            } else {
                let lefts = self.topology.inputs_of(n);
                for r in 0..rows {
                    let row = input.row(r);
                    let mut acc = [T::zero(); 4];
                    let mut wi = w.chunks_exact(4);
                    let mut li = lefts.chunks_exact(4);
                    for (cw, cl) in wi.by_ref().zip(li.by_ref()) {
                        for k in 0..4 {
                            acc[k] = acc[k] + cw[k] * row[cl[k] as usize];
                        }
                    }
                    for (k, (&wv, &l)) in
                        wi.remainder().iter().zip(li.remainder()).enumerate()
                    {
                        acc[k] = acc[k] + wv * row[l as usize];
                    }
                    let mut z = b + ((acc[0] + acc[1]) + (acc[2] + acc[3]));
                    if relu {
                        z = z.max(T::zero());
                    }
                    out.row_mut(r)[n] = z;
                }
            }
        }
    }

    /// Accumulate gradients for this junction given the upstream error
    /// `dz` (already scaled): `dw[n,k] += dz[r][n] * input[r][left]`,
    /// `db[n] += dz[r][n]`, and optionally
    /// `d_input[r][left] += dz[r][n] * w[n,k]`.
    fn backward(
        &self,
        input: &Matrix<T>,
        dz: &Matrix<T>,
        dw: &mut [T],
        db: &mut [T],
        mut d_input: Option<&mut Matrix<T>>,
    ) {
        let spec = self.topology.spec();
        let d_in = spec.d_in;
        let rows = input.rows();
        let full = self.topology.is_full();
        for n in 0..spec.right_size {
            let w = &self.weights[n * d_in..(n + 1) * d_in];
            let dw_row = &mut dw[n * d_in..(n + 1) * d_in];
            for r in 0..rows {
                let g = dz.row(r)[n];
                if g == T::zero() {
                    continue;
                }
                db[n] += g;
                if full {
                    axpy(g, input.row(r), dw_row);
                    if let Some(di) = d_input.as_deref_mut() {
                        axpy(g, w, di.row_mut(r));
                    }
                } else {
                    let lefts = self.topology.inputs_of(n);
                    let row = input.row(r);
                    if let Some(di) = d_input.as_deref_mut() {
                        let di_row = di.row_mut(r);
                        for (k, &l) in lefts.iter().enumerate() {
                            let l = l as usize;
                            dw_row[k] += g * row[l];
                            di_row[l] += g * w[k];
                        }
                    } else {
                        for (k, &l) in lefts.iter().enumerate() {
                            dw_row[k] += g * row[l as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Gradient (or moment) storage congruent to a model's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub(crate) junction_weights: Vec<Vec<T>>,
    pub(crate) biases: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(model: &Mlp<T>) -> Self {
        Gradients {
            junction_weights: model
                .junctions
                .iter()
                .map(|j| vec![T::zero(); j.weights.len()])
                .collect(),
            biases: model.biases.iter().map(|b| vec![T::zero(); b.len()]).collect(),
        }
    }

    pub fn zero(&mut self) {
        for w in &mut self.junction_weights {
            w.fill(T::zero());
        }
        for b in &mut self.biases {
            b.fill(T::zero());
        }
    }

    pub fn junction_weights(&self, i: usize) -> &[T] {
        &self.junction_weights[i]
    }

    pub fn layer_biases(&self, i: usize) -> &[T] {
        &self.biases[i]
    }

    /// `self += other`, in fixed storage order.
    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.junction_weights.iter_mut().zip(&other.junction_weights) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Activations retained by a training forward pass. `hidden[i]` is the
/// post-ReLU activation of layer `i+1`; the output layer keeps raw logits.
pub struct ForwardPass<T> {
    pub hidden: Vec<Matrix<T>>,
    pub logits: Matrix<T>,
}

/// A sparse MLP: topology-bound weights plus dense biases per non-input
/// layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    config: NeuronalConfig,
    junctions: Vec<Junction<T>>,
    biases: Vec<Vec<T>>,
}

/// The deployment-precision model.
pub type SparseMlp = Mlp<f32>;

impl<T: Scalar> Mlp<T> {
    /// Assemble a model from parts, checking congruence with the config.
    pub fn from_parts(
        config: NeuronalConfig,
        junctions: Vec<Junction<T>>,
        biases: Vec<Vec<T>>,
    ) -> Result<Self, ModelError> {
        if junctions.len() != config.junction_count() {
            return Err(ModelError::ShapeMismatch {
                what: "junction count",
                expected: config.junction_count(),
                got: junctions.len(),
            });
        }
        for (j, spec) in junctions.iter().zip(config.junctions()) {
            if j.topology.spec() != spec {
                return Err(ModelError::ShapeMismatch {
                    what: "junction spec edge count",
                    expected: spec.edge_count(),
                    got: j.topology.edge_count(),
                });
            }
        }
        if biases.len() != config.junction_count() {
            return Err(ModelError::ShapeMismatch {
                what: "bias layer count",
                expected: config.junction_count(),
                got: biases.len(),
            });
        }
        for (i, b) in biases.iter().enumerate() {
            if b.len() != config.layer_sizes()[i + 1] {
                return Err(ModelError::ShapeMismatch {
                    what: "bias width",
                    expected: config.layer_sizes()[i + 1],
                    got: b.len(),
                });
            }
        }
        Ok(Mlp { config, junctions, biases })
    }

    pub fn config(&self) -> &NeuronalConfig {
        &self.config
    }

    pub fn junctions(&self) -> &[Junction<T>] {
        &self.junctions
    }

    pub fn junction(&self, i: usize) -> &Junction<T> {
        &self.junctions[i]
    }

    pub fn biases(&self, layer_junction: usize) -> &[T] {
        &self.biases[layer_junction]
    }

    pub(crate) fn junctions_mut(&mut self) -> &mut [Junction<T>] {
        &mut self.junctions
    }

    pub(crate) fn biases_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.biases
    }

    pub fn input_width(&self) -> usize {
        self.config.input_width()
    }

    pub fn output_width(&self) -> usize {
        self.config.output_width()
    }

    /// Total trainable parameters (edges + biases).
    pub fn param_count(&self) -> usize {
        self.config.count_parameters()
    }

    /// Flat parameter view, junction weights first (in junction order) then
    /// biases (in layer order). Used by the finite-difference harness; slow
    /// but total.
    pub fn param_get(&self, mut idx: usize) -> T {
        for j in &self.junctions {
            if idx < j.weights.len() {
                return j.weights[idx];
            }
            idx -= j.weights.len();
        }
        for b in &self.biases {
            if idx < b.len() {
                return b[idx];
            }
            idx -= b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn param_set(&mut self, mut idx: usize, v: T) {
        for j in &mut self.junctions {
            if idx < j.weights.len() {
                j.weights[idx] = v;
                return;
            }
            idx -= j.weights.len();
        }
        for b in &mut self.biases {
            if idx < b.len() {
                b[idx] = v;
                return;
            }
            idx -= b.len();
        }
        panic!("parameter index out of range");
    }

    /// Same flat order for a gradient container.
    pub fn grad_get(grads: &Gradients<T>, mut idx: usize) -> T {
        for w in &grads.junction_weights {
            if idx < w.len() {
                return w[idx];
            }
            idx -= w.len();
        }
        for b in &grads.biases {
            if idx < b.len() {
                return b[idx];
            }
            idx -= b.len();
        }
        panic!("parameter index out of range");
    }

    /// Convert to another scalar width (same topology, rounded weights).
    pub fn convert<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            config: self.config.clone(),
            junctions: self
                .junctions
                .iter()
                .map(|j| Junction {
                    topology: j.topology.clone(),
                    weights: j
                        .weights
                        .iter()
                        .map(|&w| U::from_f64_lossy(w.to_f64_lossy()))
                        .collect(),
                })
                .collect(),
            biases: self
                .biases
                .iter()
                .map(|b| b.iter().map(|&x| U::from_f64_lossy(x.to_f64_lossy())).collect())
                .collect(),
        }
    }

    fn check_input(&self, input: &Matrix<T>) -> Result<(), ModelError> {
        if input.cols() != self.input_width() {
            return Err(ModelError::ShapeMismatch {
                what: "input width",
                expected: self.input_width(),
                got: input.cols(),
            });
        }
        Ok(())
    }

    /// Forward pass retaining per-layer activations (for backprop).
    pub fn forward(&self, input: &Matrix<T>) -> Result<ForwardPass<T>, ModelError> {
        self.check_input(input)?;
        let rows = input.rows();
        let l = self.junctions.len();
        let mut hidden = Vec::with_capacity(l - 1);
        let mut current = input;
        for i in 0..l - 1 {
            let mut out = Matrix::zeros(rows, self.config.layer_sizes()[i + 1]);
            self.junctions[i].forward_into(current, &self.biases[i], true, &mut out);
            hidden.push(out);
            current = hidden.last().unwrap();
        }
        let mut logits = Matrix::zeros(rows, self.output_width());
        self.junctions[l - 1].forward_into(current, &self.biases[l - 1], false, &mut logits);
        Ok(ForwardPass { hidden, logits })
    }

    /// Forward pass that applies ReLU after every junction, the last one
    /// included. This is the head half of a split model: the result is the
    /// hidden activation exactly as the unsplit model computes it, bit for
    /// bit, because it is the same kernel call sequence.
    pub fn forward_features(&self, input: &Matrix<T>) -> Result<Matrix<T>, ModelError> {
        self.check_input(input)?;
        let rows = input.rows();
        let mut current = Matrix::zeros(rows, 0);
        for i in 0..self.junctions.len() {
            let mut out = Matrix::zeros(rows, self.config.layer_sizes()[i + 1]);
            let inp = if i == 0 { input } else { &current };
            self.junctions[i].forward_into(inp, &self.biases[i], true, &mut out);
            current = out;
        }
        Ok(current)
    }

    /// Forward pass keeping only the logits.
    pub fn logits(&self, input: &Matrix<T>) -> Result<Matrix<T>, ModelError> {
        self.check_input(input)?;
        let rows = input.rows();
        let l = self.junctions.len();
        let mut current = Matrix::zeros(rows, 0);
        for i in 0..l {
            let is_last = i == l - 1;
            let mut out = Matrix::zeros(rows, self.config.layer_sizes()[i + 1]);
            let src = if i == 0 { input } else { &current };
            self.junctions[i].forward_into(src, &self.biases[i], !is_last, &mut out);
            current = out;
        }
        Ok(current)
    }

    /// Argmax class per row; ties go to the lowest class index.
    pub fn predict(&self, input: &Matrix<T>) -> Result<Vec<usize>, ModelError> {
        Ok(self.logits(input)?.argmax_rows())
    }

    /// Mean cross-entropy over the batch plus parameter gradients,
    /// accumulated into `grads` scaled by `scale` (pass `1/batch_rows` for
    /// a plain mean; chunked callers pass `1/total_rows`).
    ///
    /// Returns the summed per-row loss times `scale`.
    pub fn loss_and_grad_scaled(
        &self,
        input: &Matrix<T>,
        labels: &[u8],
        grads: &mut Gradients<T>,
        scale: T,
    ) -> Result<T, ModelError> {
        self.check_input(input)?;
        if labels.len() != input.rows() {
            return Err(ModelError::ShapeMismatch {
                what: "label count",
                expected: input.rows(),
                got: labels.len(),
            });
        }
        let classes = self.output_width();
        for &y in labels {
            if y as usize >= classes {
                return Err(ModelError::LabelOutOfRange { label: y as usize, classes });
            }
        }

        let fwd = self.forward(input)?;
        let rows = input.rows();
        let l = self.junctions.len();

        // dz for the output layer: (softmax - onehot) * scale, and the loss.
        let mut dz = Matrix::zeros(rows, classes);
        let mut loss_sum = T::zero();
        for r in 0..rows {
            let logit_row = fwd.logits.row(r);
            let dz_row = dz.row_mut(r);
            let mut mx = logit_row[0];
            for &v in &logit_row[1..] {
                mx = mx.max(v);
            }
            let mut den = T::zero();
            for (d, &v) in dz_row.iter_mut().zip(logit_row) {
                let e = (v - mx).exp();
                *d = e;
                den += e;
            }
            let y = labels[r] as usize;
            loss_sum += den.ln() - (logit_row[y] - mx);
            let inv = T::one() / den;
            for d in dz_row.iter_mut() {
                *d = *d * inv * scale;
            }
            dz_row[y] -= scale;
        }

        // Walk the junctions backwards, re-masking through each ReLU.
        for i in (0..l).rev() {
            let a_prev: &Matrix<T> = if i == 0 { input } else { &fwd.hidden[i - 1] };
            if i == 0 {
                self.junctions[i].backward(
                    a_prev,
                    &dz,
                    &mut grads.junction_weights[i],
                    &mut grads.biases[i],
                    None,
                );
            } else {
                let mut da = Matrix::zeros(rows, a_prev.cols());
                self.junctions[i].backward(
                    a_prev,
                    &dz,
                    &mut grads.junction_weights[i],
                    &mut grads.biases[i],
                    Some(&mut da),
                );
                // ReLU gate: zero where the activation was clamped.
                for (d, &a) in da.data_mut().iter_mut().zip(a_prev.data()) {
                    if a <= T::zero() {
                        *d = T::zero();
                    }
                }
                dz = da;
            }
        }
        Ok(loss_sum * scale)
    }

    /// Mean-loss convenience wrapper: zeroes `grads`, scales by `1/rows`.
    pub fn loss_and_grad(
        &self,
        input: &Matrix<T>,
        labels: &[u8],
        grads: &mut Gradients<T>,
    ) -> Result<T, ModelError> {
        grads.zero();
        let scale = T::one() / T::from_f64_lossy(input.rows() as f64);
        self.loss_and_grad_scaled(input, labels, grads, scale)
    }
}

impl<T: Scalar> Matrix<T> {
    /// Row-wise argmax, ties to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|r| {
                let row = self.row(r);
                let mut best = 0;
                for (i, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&self) -> Matrix<T> {
        let mut out = self.clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let mut mx = row[0];
            for &v in row[1..].iter() {
                mx = mx.max(v);
            }
            let mut den = T::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                den += *v;
            }
            for v in row.iter_mut() {
                *v /= den;
            }
        }
        out
    }
}

/// Per-junction RNG streams within a model seed.
const STREAM_EDGES: u64 = 0;
const STREAM_WEIGHTS: u64 = 1;
const STREAMS_PER_JUNCTION: u64 = 2;

/// Build a model: seeded edge placement per junction, weights uniform in
/// `±sqrt(6 / (d_in + d_out))` (Glorot bounds over the *realized* fan, not
/// the layer widths — a sparser junction gets a wider init), biases zero.
///
/// Each junction draws placement and weights from its own derived RNG
/// stream, so junction `i`'s result does not depend on the sizes of the
/// junctions before it.
pub fn init_model<T: Scalar>(config: &NeuronalConfig, seed: u64) -> Result<Mlp<T>, ModelError> {
    let mut junctions = Vec::with_capacity(config.junction_count());
    for (i, spec) in config.junctions().iter().enumerate() {
        let base = i as u64 * STREAMS_PER_JUNCTION;
        let topo = build_topology(spec, derive_seed(seed, base + STREAM_EDGES))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, base + STREAM_WEIGHTS));
        let limit = (6.0 / (spec.d_in + spec.d_out) as f64).sqrt();
        let weights = (0..topo.edge_count())
            .map(|_| T::from_f64_lossy(rng.random_range(-limit..limit)))
            .collect();
        junctions.push(Junction::new(topo, weights)?);
    }
    let biases = config.layer_sizes()[1..]
        .iter()
        .map(|&n| vec![T::zero(); n])
        .collect();
    Mlp::from_parts(config.clone(), junctions, biases)
}
