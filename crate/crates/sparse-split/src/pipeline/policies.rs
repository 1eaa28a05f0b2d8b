//! Offloading-policy comparison: local-only, remote-only, split, and split
//! with early exit, measured on the same model and dataset.

use std::fmt::Write as _;

use super::channel::ChannelModel;
use super::frame::activation_frame_len;
use crate::data::Dataset;
use crate::mlp::{ModelError, SparseMlp};
use crate::split::{
    evaluate_pipeline, head_features, split_model, ExitBranch, ExitPolicy, PipelineMetrics,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Policy {
    /// Local-only computation: head + exit branch, nothing transferred.
    Loc,
    /// Remote-only computation: raw input shipped, full model remote.
    Roc,
    /// Split computing: the split activation is always transferred.
    Sc,
    /// Split computing with the confidence-gated early exit.
    ScEe,
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Loc => "LOC",
            Policy::Roc => "ROC",
            Policy::Sc => "SC",
            Policy::ScEe => "SC_EE",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyRow {
    pub policy: Policy,
    pub accuracy: f64,
    pub avg_bytes_per_sample: f64,
    /// Modeled transfer latency averaged over all samples (samples that
    /// stay local contribute zero).
    pub modeled_latency_per_sample_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyReport {
    pub rows: Vec<PolicyRow>,
    /// The gated run behind the SC_EE row, for drill-down.
    pub gated: PipelineMetrics,
}

impl PolicyReport {
    pub fn row(&self, policy: Policy) -> &PolicyRow {
        self.rows.iter().find(|r| r.policy == policy).expect("all four rows present")
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("policy,accuracy,avg_bytes_per_sample,modeled_latency_per_sample_s\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.policy.name(),
                r.accuracy,
                r.avg_bytes_per_sample,
                r.modeled_latency_per_sample_s
            );
        }
        out
    }
}

/// Evaluate all four offloading policies for `model` split per the branch's
/// plan. Everything runs in process; transfers are byte-accounted, and
/// latency comes from the channel model.
pub fn compare_policies(
    model: &SparseMlp,
    branch: &ExitBranch,
    policy: ExitPolicy,
    data: &Dataset,
    channel: &ChannelModel,
) -> Result<PolicyReport, ModelError> {
    let plan = branch.plan();
    let (head, tail) = split_model(model, plan.split_junction())?;
    let n = data.len();
    let accuracy = |correct: usize| correct as f64 / n as f64;

    // LOC: the branch classifies every sample on the edge.
    let feats = head_features(&head, data)?;
    let branch_correct = branch
        .model()
        .predict(feats.features())?
        .iter()
        .zip(data.labels())
        .filter(|(p, l)| **p == **l as usize)
        .count();
    let loc = PolicyRow {
        policy: Policy::Loc,
        accuracy: accuracy(branch_correct),
        avg_bytes_per_sample: 0.0,
        modeled_latency_per_sample_s: 0.0,
    };

    // ROC and SC share the full model's accuracy (split transparency); they
    // differ in what crosses the link: the raw input or the split
    // activation.
    let full_correct = model
        .predict(data.features())?
        .iter()
        .zip(data.labels())
        .filter(|(p, l)| **p == **l as usize)
        .count();
    let roc_bytes = activation_frame_len(model.input_width()) as u64;
    let roc = PolicyRow {
        policy: Policy::Roc,
        accuracy: accuracy(full_correct),
        avg_bytes_per_sample: roc_bytes as f64,
        modeled_latency_per_sample_s: channel.modeled_latency_s(roc_bytes),
    };
    let sc_bytes = plan.transfer_bytes();
    let sc = PolicyRow {
        policy: Policy::Sc,
        accuracy: accuracy(full_correct),
        avg_bytes_per_sample: sc_bytes as f64,
        modeled_latency_per_sample_s: channel.modeled_latency_s(sc_bytes),
    };

    // SC_EE: the gated pipeline.
    let gated = evaluate_pipeline(&head, branch, &tail, policy, data)?;
    let sc_ee = PolicyRow {
        policy: Policy::ScEe,
        accuracy: gated.overall_accuracy(),
        avg_bytes_per_sample: gated.avg_bytes_per_sample(),
        modeled_latency_per_sample_s: gated.continued() as f64
            * channel.modeled_latency_s(sc_bytes)
            / n as f64,
    };

    Ok(PolicyReport { rows: vec![loc, roc, sc, sc_ee], gated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{init_model, Matrix};
    use crate::split::{attach_exit, SplitPlan};
    use crate::topology::NeuronalConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn policy_report_invariants() {
        let config = NeuronalConfig::new(vec![16, 8, 8, 10], &[2, 4, 5]).unwrap();
        let model = init_model::<f32>(&config, 4).unwrap();
        let plan = SplitPlan::midpoint(&config).unwrap();
        let branch = attach_exit(&model, plan, &[], 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let feats: Vec<f32> = (0..300 * 16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels: Vec<u8> = (0..300).map(|_| rng.random_range(0..10)).collect();
        let data = Dataset::new("toy", Matrix::from_vec(300, 16, feats), labels).unwrap();
        let channel = ChannelModel::default();

        let report = compare_policies(
            &model,
            &branch,
            ExitPolicy::max_softmax(0.5).unwrap(),
            &data,
            &channel,
        )
        .unwrap();

        assert_eq!(report.rows.len(), 4);
        // Same logits whether the raw input or the activation crosses the
        // link.
        assert_eq!(report.row(Policy::Roc).accuracy, report.row(Policy::Sc).accuracy);
        // Frame arithmetic: 18-byte header plus 4 bytes per float.
        assert_eq!(report.row(Policy::Roc).avg_bytes_per_sample, (18 + 4 * 16) as f64);
        assert_eq!(report.row(Policy::Sc).avg_bytes_per_sample, (18 + 4 * 8) as f64);
        assert_eq!(report.row(Policy::Loc).avg_bytes_per_sample, 0.0);
        // The gate can only reduce traffic relative to always-transfer.
        let sc_ee = report.row(Policy::ScEe);
        assert!(sc_ee.avg_bytes_per_sample <= report.row(Policy::Sc).avg_bytes_per_sample);
        assert!(report.row(Policy::Sc).avg_bytes_per_sample
            <= report.row(Policy::Roc).avg_bytes_per_sample);
        assert!(sc_ee.modeled_latency_per_sample_s
            <= report.row(Policy::Sc).modeled_latency_per_sample_s);
        // Gated bytes follow the exit rate exactly.
        assert_eq!(
            sc_ee.avg_bytes_per_sample,
            (report.gated.continued() as u64 * report.gated.bytes_per_transfer) as f64 / 300.0
        );
        let csv = report.to_csv();
        assert!(csv.starts_with("policy,accuracy,"));
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.contains("\nSC_EE,"));
    }
}
