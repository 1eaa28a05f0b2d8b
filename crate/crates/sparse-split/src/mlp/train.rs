//! Training loop and evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AdamState, Gradients, Matrix, Mlp, ModelError, Scalar, SparseMlp};
use crate::data::Dataset;
use crate::seed::derive_seed;

/// Stream ids `0..2L` belong to model init; epoch shuffles start here.
const SHUFFLE_STREAM_BASE: u64 = 1 << 32;

/// Rows per forward chunk during evaluation.
const EVAL_CHUNK: usize = 512;

/// Knobs for one training run. The defaults are the reference recipe:
/// 50 epochs of Adam at learning rate 1e-5, batches of 64, reshuffling
/// every epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle_each_epoch: bool,
    /// Worker threads for intra-batch gradient computation. The reduction
    /// order is fixed per thread count, so a run is bit-reproducible for a
    /// given `(seed, threads)` pair.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            learning_rate: 1e-5,
            batch_size: 64,
            seed: 42,
            shuffle_each_epoch: true,
            threads: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.eval_accuracy)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,eval_accuracy\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.eval_accuracy));
        }
        out
    }
}

/// Classification accuracy of `model` on `data`, batched. Ties in the
/// argmax go to the lowest class index. An empty dataset scores 0.
pub fn evaluate<T: Scalar>(model: &Mlp<T>, data: &Dataset) -> Result<f64, ModelError> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    let mut at = 0usize;
    while at < data.len() {
        let end = (at + EVAL_CHUNK).min(data.len());
        let chunk = data.features().slice_rows(at..end);
        let input: Matrix<T> = chunk.map_convert();
        let pred = model.predict(&input)?;
        for (p, i) in pred.into_iter().zip(at..end) {
            if p == data.label(i) {
                correct += 1;
            }
        }
        at = end;
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Mean cross-entropy of `model` on `data` (no gradients kept).
pub fn mean_loss<T: Scalar>(model: &Mlp<T>, data: &Dataset) -> Result<f64, ModelError> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0f64;
    let mut at = 0usize;
    let mut grads = Gradients::zeros_like(model);
    while at < data.len() {
        let end = (at + EVAL_CHUNK).min(data.len());
        let chunk = data.features().slice_rows(at..end);
        let input: Matrix<T> = chunk.map_convert();
        let labels = &data.labels()[at..end];
        grads.zero();
        let mean =
            model.loss_and_grad_scaled(&input, labels, &mut grads, T::one() / T::from_f64_lossy((end - at) as f64))?;
        sum += mean.to_f64_lossy() * (end - at) as f64;
        at = end;
    }
    Ok(sum / data.len() as f64)
}

/// Mean batch loss + gradients, optionally split row-wise over worker
/// threads. Chunk results are combined in chunk order, so the sum order —
/// and hence the result — is a pure function of `(batch, threads)`.
fn batch_loss_and_grad(
    model: &SparseMlp,
    feats: &Matrix<f32>,
    labels: &[u8],
    grads: &mut Gradients<f32>,
    threads: usize,
    chunk_grads: &mut Vec<Gradients<f32>>,
) -> Result<f32, ModelError> {
    let rows = feats.rows();
    if threads <= 1 || rows < 2 * threads {
        return model.loss_and_grad(feats, labels, grads);
    }
    let per = rows.div_ceil(threads);
    let ranges: Vec<std::ops::Range<usize>> = (0..threads)
        .map(|t| (t * per).min(rows)..((t + 1) * per).min(rows))
        .filter(|r| !r.is_empty())
        .collect();
    while chunk_grads.len() < ranges.len() {
        chunk_grads.push(Gradients::zeros_like(model));
    }
    let scale = 1.0f32 / rows as f32;
    let losses: Vec<Result<f32, ModelError>> = std::thread::scope(|s| {
        let handles: Vec<_> = ranges
            .iter()
            .zip(chunk_grads.iter_mut())
            .map(|(range, cg)| {
                let range = range.clone();
                s.spawn(move || {
                    cg.zero();
                    let part = feats.slice_rows(range.clone());
                    model.loss_and_grad_scaled(&part, &labels[range], cg, scale)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("gradient worker panicked")).collect()
    });
    grads.zero();
    let mut loss = 0.0f32;
    for (r, cg) in losses.into_iter().zip(chunk_grads.iter()) {
        loss += r?;
        grads.add_assign(cg);
    }
    Ok(loss)
}

/// Train `model` in place with Adam, evaluating after every epoch.
///
/// Bit-deterministic for fixed `(model, data, config)` including the
/// thread count. Batch order reshuffles per epoch from an epoch-derived
/// stream when `shuffle_each_epoch` is set; the trailing partial batch is
/// kept (its gradient is scaled by its own size).
pub fn train(
    model: &mut SparseMlp,
    train_set: &Dataset,
    eval_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainHistory, ModelError> {
    train_with(model, train_set, eval_set, cfg, &mut |_| {})
}

/// [`train`] with a per-epoch observer — progress reporting only, the
/// observer cannot influence the run.
pub fn train_with(
    model: &mut SparseMlp,
    train_set: &Dataset,
    eval_set: &Dataset,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(&EpochStats),
) -> Result<TrainHistory, ModelError> {
    if train_set.width() != model.input_width() {
        return Err(ModelError::ShapeMismatch {
            what: "training feature width",
            expected: model.input_width(),
            got: train_set.width(),
        });
    }
    if eval_set.width() != model.input_width() {
        return Err(ModelError::ShapeMismatch {
            what: "eval feature width",
            expected: model.input_width(),
            got: eval_set.width(),
        });
    }
    let classes = model.output_width();
    if let Some(&bad) = train_set.labels().iter().find(|&&l| (l as usize) >= classes) {
        return Err(ModelError::LabelOutOfRange { label: bad as usize, classes });
    }
    if cfg.batch_size == 0 {
        return Err(ModelError::ShapeMismatch { what: "batch size", expected: 1, got: 0 });
    }

    let n = train_set.len();
    let mut order: Vec<u32> = (0..n as u32).collect();
    let mut grads = Gradients::zeros_like(model);
    let mut chunk_grads: Vec<Gradients<f32>> = Vec::new();
    let mut adam = AdamState::new(model);
    let mut history = TrainHistory::default();

    for epoch in 0..cfg.epochs {
        if cfg.shuffle_each_epoch {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, SHUFFLE_STREAM_BASE + epoch as u64));
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0f64;
        for idx in order.chunks(cfg.batch_size) {
            let (feats, labels) = train_set.gather(idx);
            let mean =
                batch_loss_and_grad(model, &feats, &labels, &mut grads, cfg.threads, &mut chunk_grads)?;
            adam.step(model, &grads, cfg.learning_rate);
            loss_sum += mean as f64 * idx.len() as f64;
        }
        let eval_accuracy = evaluate(model, eval_set)?;
        let stats = EpochStats {
            epoch,
            train_loss: if n > 0 { loss_sum / n as f64 } else { 0.0 },
            eval_accuracy,
        };
        history.epochs.push(stats);
        progress(&stats);
    }
    Ok(history)
}
