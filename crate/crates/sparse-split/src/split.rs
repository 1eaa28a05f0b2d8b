//! Head/tail partitioning of a trained model, the early-exit branch, and
//! the confidence gate.
//!
//! A model with junctions `1…L` splits at index `s`: the head keeps
//! junctions `1…s` (applying ReLU after all of them, the last included),
//! the tail keeps `s+1…L`. Because the head's final activation is computed
//! by the same kernel calls the monolithic forward would make, composing
//! head and tail reproduces the unsplit logits bit for bit.
//!
//! The exit branch is a small dense classifier on the head's output. At
//! inference time the gate checks the branch's max softmax probability
//! against a threshold: confident samples classify locally, the rest ship
//! their activation vector to the tail.

use crate::data::Dataset;
use crate::mlp::{
    init_model, train, Matrix, Mlp, ModelError, Scalar, SparseMlp, TrainConfig, TrainHistory,
};
use crate::pipeline::frame::activation_frame_len;
use crate::topology::NeuronalConfig;

/// Seed stream for exit-branch init/training, disjoint from the backbone's
/// junction streams (`0..2L`) and epoch-shuffle streams (`2^32 + epoch`).
/// Derive with `derive_seed(master, EXIT_SEED_STREAM)`.
pub const EXIT_SEED_STREAM: u64 = 1 << 33;

/// Where a model is cut. `split_junction = s` keeps junctions `1…s` on the
/// head; the transferred activation has `split_width` floats.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitPlan {
    split_junction: usize,
    split_width: usize,
}

impl SplitPlan {
    pub fn new(config: &NeuronalConfig, s: usize) -> Result<Self, ModelError> {
        let l = config.junction_count();
        if s == 0 || s >= l {
            return Err(ModelError::BadSplitIndex { s, max: l.saturating_sub(1) });
        }
        Ok(SplitPlan { split_junction: s, split_width: config.layer_sizes()[s] })
    }

    /// The paper's rule: cut at the midpoint, `s = ceil(L/2)`.
    pub fn midpoint(config: &NeuronalConfig) -> Result<Self, ModelError> {
        SplitPlan::new(config, config.junction_count().div_ceil(2))
    }

    pub fn split_junction(&self) -> usize {
        self.split_junction
    }

    /// Dimension of the activation vector crossing the link.
    pub fn split_width(&self) -> usize {
        self.split_width
    }

    /// On-wire bytes for one transferred sample (header + f32 payload).
    pub fn transfer_bytes(&self) -> u64 {
        activation_frame_len(self.split_width) as u64
    }
}

/// Cut `model` into head (junctions `1…s`) and tail (junctions `s+1…L`).
/// Both halves are standalone models sharing nothing with the original.
pub fn split_model<T: Scalar>(
    model: &Mlp<T>,
    s: usize,
) -> Result<(Mlp<T>, Mlp<T>), ModelError> {
    let plan = SplitPlan::new(model.config(), s)?;
    let s = plan.split_junction();
    let sizes = model.config().layer_sizes();
    let degrees = model.config().out_degrees();

    let sub_model = |lo: usize, hi: usize| -> Result<Mlp<T>, ModelError> {
        let config = NeuronalConfig::new(sizes[lo..=hi].to_vec(), &degrees[lo..hi])?;
        let junctions = model.junctions()[lo..hi].to_vec();
        let biases: Vec<Vec<T>> = (lo..hi).map(|i| model.biases(i).to_vec()).collect();
        Mlp::from_parts(config, junctions, biases)
    };

    Ok((sub_model(0, s)?, sub_model(s, model.config().junction_count())?))
}

/// The local classifier attached at the split point: a dense MLP from the
/// head's output width to the class count.
#[derive(Clone, Debug, PartialEq)]
pub struct ExitBranch {
    plan: SplitPlan,
    model: SparseMlp,
}

impl ExitBranch {
    /// Wrap an already-built branch model, checking it fits the plan's
    /// boundary width and the backbone's class count.
    pub fn from_parts(
        plan: SplitPlan,
        output_width: usize,
        model: SparseMlp,
    ) -> Result<Self, ModelError> {
        if model.input_width() != plan.split_width() {
            return Err(ModelError::ShapeMismatch {
                what: "exit branch input width",
                expected: plan.split_width(),
                got: model.input_width(),
            });
        }
        if model.output_width() != output_width {
            return Err(ModelError::ShapeMismatch {
                what: "exit branch output width",
                expected: output_width,
                got: model.output_width(),
            });
        }
        Ok(ExitBranch { plan, model })
    }

    pub fn plan(&self) -> SplitPlan {
        self.plan
    }

    pub fn model(&self) -> &SparseMlp {
        &self.model
    }

    pub fn into_model(self) -> SparseMlp {
        self.model
    }

    pub fn param_count(&self) -> usize {
        self.model.param_count()
    }
}

/// Build a fresh dense exit branch `N_s → hidden… → N_L` for the model cut
/// by `plan`. Hidden layers get ReLU; `hidden_widths` may be empty for a
/// single linear layer. Initialization matches `init_model` exactly.
pub fn attach_exit(
    backbone: &SparseMlp,
    plan: SplitPlan,
    hidden_widths: &[usize],
    seed: u64,
) -> Result<ExitBranch, ModelError> {
    let mut sizes = Vec::with_capacity(hidden_widths.len() + 2);
    sizes.push(plan.split_width());
    sizes.extend_from_slice(hidden_widths);
    sizes.push(backbone.output_width());
    let config = NeuronalConfig::full(sizes)?;
    let model = init_model(&config, seed)?;
    ExitBranch::from_parts(plan, backbone.output_width(), model)
}

/// Train the exit branch against the frozen head. The head's activations
/// are computed once per dataset and the branch trains on them as ordinary
/// features, so the backbone cannot change by construction.
pub fn train_exit(
    head: &SparseMlp,
    branch: &mut ExitBranch,
    train_set: &Dataset,
    eval_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainHistory, ModelError> {
    let train_feats = head_features(head, train_set)?;
    let eval_feats = head_features(head, eval_set)?;
    train(&mut branch.model, &train_feats, &eval_feats, cfg)
}

/// Re-express a dataset in head-output coordinates.
pub fn head_features(head: &SparseMlp, data: &Dataset) -> Result<Dataset, ModelError> {
    const CHUNK: usize = 512;
    let n = data.len();
    let width = head.output_width();
    let mut out = Matrix::zeros(n, width);
    let mut row = 0;
    while row < n {
        let hi = (row + CHUNK).min(n);
        let feats = head.forward_features(&data.features().slice_rows(row..hi))?;
        out.data_mut()[row * width..hi * width].copy_from_slice(feats.data());
        row = hi;
    }
    Ok(data
        .with_features(format!("{}+head", data.name()), out)
        .expect("same row count"))
}

/// Confidence rule deciding local exit vs remote continuation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExitPolicy {
    /// Exit when the branch's max softmax probability reaches `threshold`.
    MaxSoftmax { threshold: f64 },
}

impl ExitPolicy {
    pub fn max_softmax(threshold: f64) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(ModelError::BadThreshold(threshold));
        }
        Ok(ExitPolicy::MaxSoftmax { threshold })
    }

    pub fn threshold(&self) -> f64 {
        let ExitPolicy::MaxSoftmax { threshold } = *self;
        threshold
    }
}

impl Default for ExitPolicy {
    fn default() -> Self {
        ExitPolicy::MaxSoftmax { threshold: 0.9 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateDecision {
    /// Confident: classify on the edge with the branch's argmax.
    ExitLocal(usize),
    /// Not confident: ship the activation to the tail.
    ContinueRemote,
}

/// Apply the confidence gate to one sample's branch logits. The softmax is
/// evaluated in f64 with max subtraction; ties argmax to the lowest index.
pub fn gate(branch_logits: &[f32], policy: ExitPolicy) -> GateDecision {
    debug_assert!(!branch_logits.is_empty());
    let mut best = 0;
    let mut best_v = branch_logits[0] as f64;
    for (i, &v) in branch_logits.iter().enumerate().skip(1) {
        if (v as f64) > best_v {
            best = i;
            best_v = v as f64;
        }
    }
    let mut sum = 0.0f64;
    for &v in branch_logits {
        sum += (v as f64 - best_v).exp();
    }
    let p_max = 1.0 / sum;
    if p_max >= policy.threshold() {
        GateDecision::ExitLocal(best)
    } else {
        GateDecision::ContinueRemote
    }
}

/// Per-sample gate decisions for a whole dataset, plus the head features
/// the continued samples would transfer. Shared by the in-process reference
/// evaluation and the socket edge runner so their decisions cannot diverge.
pub fn head_decisions(
    head: &SparseMlp,
    branch: &ExitBranch,
    policy: ExitPolicy,
    data: &Dataset,
) -> Result<(Dataset, Vec<GateDecision>), ModelError> {
    let feats = head_features(head, data)?;
    let logits = branch.model.logits(feats.features())?;
    let decisions = (0..data.len()).map(|i| gate(logits.row(i), policy)).collect();
    Ok((feats, decisions))
}

/// Aggregated outcome of one gated pass over a dataset. Counters are exact;
/// derived rates are methods so no rounding is baked in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct PipelineMetrics {
    pub samples: usize,
    pub exited: usize,
    pub correct_exited: usize,
    pub correct_continued: usize,
    /// On-wire bytes for one transferred sample.
    pub bytes_per_transfer: u64,
}

impl PipelineMetrics {
    pub fn continued(&self) -> usize {
        self.samples - self.exited
    }

    pub fn correct(&self) -> usize {
        self.correct_exited + self.correct_continued
    }

    pub fn overall_accuracy(&self) -> f64 {
        self.correct() as f64 / self.samples as f64
    }

    pub fn exit_rate(&self) -> f64 {
        self.exited as f64 / self.samples as f64
    }

    /// Accuracy over locally-exited samples; NaN when none exited.
    pub fn accuracy_on_exited(&self) -> f64 {
        self.correct_exited as f64 / self.exited as f64
    }

    /// Accuracy over transferred samples; NaN when all exited.
    pub fn accuracy_on_continued(&self) -> f64 {
        self.correct_continued as f64 / self.continued() as f64
    }

    pub fn bytes_total(&self) -> u64 {
        self.bytes_per_transfer * self.continued() as u64
    }

    pub fn avg_bytes_per_sample(&self) -> f64 {
        self.bytes_total() as f64 / self.samples as f64
    }
}

/// Reference (in-process) evaluation of the gated head/branch/tail system:
/// every sample runs the head and branch, confident samples classify
/// locally, the rest are "transferred" (byte-accounted, never serialized)
/// and classified by the tail.
pub fn evaluate_pipeline(
    head: &SparseMlp,
    branch: &ExitBranch,
    tail: &SparseMlp,
    policy: ExitPolicy,
    data: &Dataset,
) -> Result<PipelineMetrics, ModelError> {
    let (feats, decisions) = head_decisions(head, branch, policy, data)?;
    let mut m = PipelineMetrics {
        samples: data.len(),
        bytes_per_transfer: branch.plan().transfer_bytes(),
        ..Default::default()
    };
    let mut continued: Vec<u32> = Vec::new();
    for (i, d) in decisions.iter().enumerate() {
        match *d {
            GateDecision::ExitLocal(class) => {
                m.exited += 1;
                if class == data.label(i) {
                    m.correct_exited += 1;
                }
            }
            GateDecision::ContinueRemote => continued.push(i as u32),
        }
    }
    if !continued.is_empty() {
        let (cont_feats, cont_labels) = feats.gather(&continued);
        let preds = tail.predict(&cont_feats)?;
        for (p, l) in preds.iter().zip(&cont_labels) {
            if *p == *l as usize {
                m.correct_continued += 1;
            }
        }
    }
    Ok(m)
}
