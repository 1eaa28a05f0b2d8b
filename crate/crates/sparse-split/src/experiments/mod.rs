//! Experiment harness shared by the CLI and the integration tests:
//! training runs driven by [`RunConfig`], summary reports, reproduction of
//! the published head/tail tables, and accuracy-vs-parameter-budget sweeps.
//!
//! Long jobs cache their trained checkpoint on disk keyed by every knob
//! that affects the result, so reruns (and the test suite) only pay for
//! training once per configuration.

pub mod run_config;
pub mod tables;

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::data::{DataError, MnistData};
use crate::mlp::{
    evaluate, init_model, load_checkpoint, save_checkpoint, train_with, Checkpoint,
    CheckpointError, EpochStats, ModelError, SparseMlp, TrainConfig, TrainHistory,
};
use crate::pipeline::PipelineError;
use crate::topology::TopologyError;

pub use run_config::{full_degrees, ConfigError, ModelKind, RunConfig, SplitSettings};
pub use tables::{audit_params, paper_rows, rows_of, PaperRow, ParamsAudit, WhichTable};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no published parameter budget {budget}; known budgets: {known:?}")]
    UnknownBudget { budget: usize, known: Vec<usize> },
}

impl ExperimentError {
    /// Process exit code: 0 is success, 2 a config problem, 3 a data
    /// problem, 4 a transport problem, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_)
            | ExperimentError::Topology(_)
            | ExperimentError::Model(_)
            | ExperimentError::UnknownBudget { .. } => 2,
            ExperimentError::Data(_) | ExperimentError::Checkpoint(_) => 3,
            ExperimentError::Pipeline(PipelineError::Model(_)) => 2,
            ExperimentError::Pipeline(_) => 4,
            ExperimentError::Io { .. } => 1,
        }
    }
}

/// `fs::write` with the path attached to any error.
pub fn write_text(path: &Path, text: &str) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|source| ExperimentError::Io { path: parent.to_owned(), source })?;
        }
    }
    fs::write(path, text).map_err(|source| ExperimentError::Io { path: path.to_owned(), source })
}

/// `fs::read_to_string` with the path attached to any error.
pub fn read_text(path: &Path) -> Result<String, ExperimentError> {
    fs::read_to_string(path)
        .map_err(|source| ExperimentError::Io { path: path.to_owned(), source })
}

/// A finished (or cache-restored) training run.
pub struct RunOutcome {
    pub model: SparseMlp,
    /// Per-epoch stats; `None` when the model came from the cache.
    pub history: Option<TrainHistory>,
    /// Test-set accuracy in `[0, 1]`. Recomputed on cache hits, so it is
    /// bit-identical to what the original run reported.
    pub accuracy: f64,
    pub from_cache: bool,
}

/// Cache file for a run: one checkpoint per (architecture, training-knob)
/// combination, so any knob change forces a retrain.
pub fn cache_file(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let t = &cfg.train;
    dir.join(format!(
        "{}-s{}-e{}-b{}-lr{:e}-sh{}-t{}.ckpt",
        cfg.label(),
        cfg.seed,
        t.epochs,
        t.batch_size,
        t.learning_rate,
        t.shuffle_each_epoch as u8,
        t.threads,
    ))
}

/// Train the backbone described by `cfg`, or restore it from `cache_dir`.
///
/// A cache file is trusted only if it decodes and its architecture matches
/// the config; anything stale or corrupt is silently retrained and
/// overwritten. No split/exit sections are cached here — this is the
/// backbone store used by table reproduction and sweeps. `progress` sees
/// each finished epoch (nothing on a cache hit).
pub fn run_training(
    cfg: &RunConfig,
    data: &MnistData,
    cache_dir: Option<&Path>,
    progress: &mut dyn FnMut(&EpochStats),
) -> Result<RunOutcome, ExperimentError> {
    let neuronal = cfg.neuronal()?;
    let cache = cache_dir.map(|d| cache_file(d, cfg));
    if let Some(path) = cache.as_deref() {
        if path.is_file() {
            if let Ok(ckpt) = load_checkpoint(path) {
                if ckpt.model.config() == &neuronal {
                    let accuracy = evaluate(&ckpt.model, &data.test)?;
                    return Ok(RunOutcome {
                        model: ckpt.model,
                        history: None,
                        accuracy,
                        from_cache: true,
                    });
                }
            }
        }
    }

    let mut model = init_model(&neuronal, cfg.seed)?;
    let history = train_with(&mut model, &data.train, &data.test, &cfg.train, progress)?;
    let accuracy = match history.final_accuracy() {
        Some(a) => a,
        None => evaluate(&model, &data.test)?,
    };
    if let Some(path) = cache.as_deref() {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)
                .map_err(|source| ExperimentError::Io { path: parent.to_owned(), source })?;
        }
        save_checkpoint(path, &Checkpoint::model_only(model.clone()))?;
    }
    Ok(RunOutcome { model, history: Some(history), accuracy, from_cache: false })
}

/// Deterministic run summary as pretty JSON (sorted keys, trailing
/// newline). `extra` appends command-specific entries, e.g. split results.
pub fn summary_json(
    cfg: &RunConfig,
    accuracy: f64,
    extra: &[(&str, serde_json::Value)],
) -> Result<String, ExperimentError> {
    let neuronal = cfg.neuronal()?;
    let edges = neuronal.edge_count();
    let full_edges: usize = cfg.layer_sizes.windows(2).map(|w| w[0] * w[1]).sum();
    let mut map = serde_json::Map::new();
    let mut put = |k: &str, v: serde_json::Value| {
        map.insert(k.to_string(), v);
    };
    put("label", cfg.label().into());
    put("kind", cfg.kind.name().into());
    put("layer_sizes", cfg.layer_sizes.clone().into());
    put("out_degrees", cfg.out_degrees.clone().into());
    put("params", neuronal.count_parameters().into());
    put("edges", edges.into());
    put("network_density", (edges as f64 / full_edges as f64).into());
    put("network_density_exact", format!("{edges}/{full_edges}").into());
    put("accuracy", accuracy.into());
    put("seed", cfg.seed.into());
    put("epochs", cfg.train.epochs.into());
    put("learning_rate", cfg.train.learning_rate.into());
    put("batch_size", cfg.train.batch_size.into());
    put("threads", cfg.train.threads.into());
    for (k, v) in extra {
        put(k, v.clone());
    }
    // serde_json's default map is ordered, so the output is stable.
    let text = serde_json::to_string_pretty(&serde_json::Value::Object(map))
        .expect("summary values are always encodable");
    Ok(text + "\n")
}

/// The default training recipe applied to one published row.
pub fn row_config(row: &PaperRow, seed: u64, threads: usize) -> RunConfig {
    RunConfig {
        kind: row.kind,
        layer_sizes: row.layer_sizes.clone(),
        out_degrees: row.out_degrees.clone(),
        train: TrainConfig { seed, threads, ..TrainConfig::default() },
        split: None,
        channel: None,
        output_dir: None,
        seed,
    }
}

/// How a recounted parameter cell compares to the printed one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamsCheck {
    Exact,
    /// The known first-group head-table misprint (deep/shallow cells
    /// swapped); our count equals the *other* row's printed cell.
    DocumentedSwap,
    Mismatch,
}

impl ParamsCheck {
    pub fn name(&self) -> &'static str {
        match self {
            ParamsCheck::Exact => "exact",
            ParamsCheck::DocumentedSwap => "documented_swap",
            ParamsCheck::Mismatch => "mismatch",
        }
    }

    fn of(audit: &ParamsAudit) -> ParamsCheck {
        if audit.exact {
            ParamsCheck::Exact
        } else if audit.documented_swap {
            ParamsCheck::DocumentedSwap
        } else {
            ParamsCheck::Mismatch
        }
    }
}

/// One reproduced table row: the published cells next to ours.
#[derive(Clone, Debug, PartialEq)]
pub struct ReproRow {
    pub table: WhichTable,
    pub group: usize,
    pub kind: ModelKind,
    pub layer_sizes: Vec<usize>,
    pub out_degrees: Vec<usize>,
    pub params: usize,
    pub printed_params: usize,
    pub params_check: ParamsCheck,
    pub accuracy_pct: f64,
    pub printed_accuracy_pct: f64,
    pub seed: u64,
    pub from_cache: bool,
}

impl ReproRow {
    /// Our accuracy minus the printed one, in percentage points.
    pub fn deviation_pct(&self) -> f64 {
        self.accuracy_pct - self.printed_accuracy_pct
    }
}

fn join_nums(ns: &[usize]) -> String {
    ns.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" ")
}

/// Train (or restore) one published row and line it up against print.
pub fn reproduce_row(
    row: &PaperRow,
    data: &MnistData,
    seed: u64,
    threads: usize,
    cache_dir: Option<&Path>,
    progress: &mut dyn FnMut(&EpochStats),
) -> Result<ReproRow, ExperimentError> {
    let cfg = row_config(row, seed, threads);
    let outcome = run_training(&cfg, data, cache_dir, progress)?;
    let audit = audit_params(row);
    Ok(ReproRow {
        table: row.table,
        group: row.group,
        kind: row.kind,
        layer_sizes: row.layer_sizes.clone(),
        out_degrees: row.out_degrees.clone(),
        params: audit.computed,
        printed_params: row.printed_params,
        params_check: ParamsCheck::of(&audit),
        accuracy_pct: outcome.accuracy * 100.0,
        printed_accuracy_pct: row.printed_accuracy,
        seed,
        from_cache: outcome.from_cache,
    })
}

/// CSV for reproduced rows, print order preserved.
pub fn repro_csv(rows: &[ReproRow]) -> String {
    let mut out = String::from(
        "table,group,kind,layer_sizes,out_degrees,params,printed_params,params_check,\
         accuracy_pct,printed_accuracy_pct,deviation_pct,seed\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{:.2},{:.2},{:+.2},{}\n",
            r.table.name(),
            r.group,
            r.kind.name(),
            join_nums(&r.layer_sizes),
            join_nums(&r.out_degrees),
            r.params,
            r.printed_params,
            r.params_check.name(),
            r.accuracy_pct,
            r.printed_accuracy_pct,
            r.deviation_pct(),
            r.seed,
        ));
    }
    out
}

/// Parameter budgets available for sweeps: each head-table group's sparse
/// row defines its group's budget.
pub fn known_budgets() -> Vec<usize> {
    rows_of(WhichTable::Head)
        .filter(|r| r.kind == ModelKind::Sparse)
        .map(|r| r.printed_params)
        .collect()
}

/// The three published rows (deep, shallow, sparse) competing at `budget`.
pub fn budget_group(budget: usize) -> Result<Vec<&'static PaperRow>, ExperimentError> {
    let group = rows_of(WhichTable::Head)
        .find(|r| r.kind == ModelKind::Sparse && r.printed_params == budget)
        .map(|r| r.group)
        .ok_or_else(|| ExperimentError::UnknownBudget { budget, known: known_budgets() })?;
    Ok(rows_of(WhichTable::Head).filter(move |r| r.group == group).collect())
}

/// One sweep measurement: a kind's accuracy at a parameter budget.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub budget: usize,
    pub kind: ModelKind,
    pub layer_sizes: Vec<usize>,
    pub out_degrees: Vec<usize>,
    pub params: usize,
    pub accuracy_pct: f64,
    pub seed: u64,
}

/// Train (or restore) the three competing rows at each requested budget.
pub fn sweep_budget(
    budget: usize,
    data: &MnistData,
    seed: u64,
    threads: usize,
    cache_dir: Option<&Path>,
    progress: &mut dyn FnMut(&EpochStats),
) -> Result<Vec<SweepPoint>, ExperimentError> {
    let mut points = Vec::new();
    for row in budget_group(budget)? {
        let repro = reproduce_row(row, data, seed, threads, cache_dir, progress)?;
        points.push(SweepPoint {
            budget,
            kind: row.kind,
            layer_sizes: row.layer_sizes.clone(),
            out_degrees: row.out_degrees.clone(),
            params: repro.params,
            accuracy_pct: repro.accuracy_pct,
            seed,
        });
    }
    Ok(points)
}

/// Sweep CSV, sorted by realized parameter count ascending (kind breaks
/// ties so the order is total).
pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut sorted: Vec<&SweepPoint> = points.iter().collect();
    sorted.sort_by(|a, b| (a.params, a.kind.name()).cmp(&(b.params, b.kind.name())));
    let mut out =
        String::from("params,kind,budget,layer_sizes,out_degrees,accuracy_pct,seed\n");
    for p in sorted {
        out.push_str(&format!(
            "{},{},{},{},{},{:.2},{}\n",
            p.params,
            p.kind.name(),
            p.budget,
            join_nums(&p.layer_sizes),
            join_nums(&p.out_degrees),
            p.accuracy_pct,
            p.seed,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::mlp::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Tiny synthetic stand-in for MNIST: 10 classes over 12 features.
    fn toy_mnist() -> MnistData {
        let make = |n: usize, seed: u64, name: &str| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut feats = Matrix::zeros(n, 12);
            let mut labels = Vec::with_capacity(n);
            for r in 0..n {
                let class = rng.random_range(0..10u8);
                for (j, v) in feats.row_mut(r).iter_mut().enumerate() {
                    let bump = if j == class as usize { 1.0 } else { 0.0 };
                    *v = bump + rng.random_range(-0.2..0.2);
                }
                labels.push(class);
            }
            Dataset::new(name, feats, labels).unwrap()
        };
        MnistData { train: make(256, 11, "toy-train"), test: make(128, 12, "toy-test") }
    }

    fn toy_config(seed: u64) -> RunConfig {
        RunConfig {
            kind: ModelKind::Sparse,
            layer_sizes: vec![12, 6, 10],
            out_degrees: vec![2, 10],
            train: TrainConfig { epochs: 3, learning_rate: 1e-2, ..TrainConfig::default() },
            split: None,
            channel: None,
            output_dir: None,
            seed,
        }
    }

    #[test]
    fn cache_restores_the_exact_run() {
        let dir = tempfile::tempdir().unwrap();
        let data = toy_mnist();
        let cfg = toy_config(5);

        let fresh = run_training(&cfg, &data, Some(dir.path()), &mut |_| {}).unwrap();
        assert!(!fresh.from_cache);
        assert!(fresh.history.is_some());
        assert!(cache_file(dir.path(), &cfg).is_file());

        let cached = run_training(&cfg, &data, Some(dir.path()), &mut |_| {}).unwrap();
        assert!(cached.from_cache);
        assert!(cached.history.is_none());
        assert_eq!(cached.accuracy, fresh.accuracy);
        assert_eq!(cached.model, fresh.model);

        // Another seed is another cache entry.
        let other = run_training(&toy_config(6), &data, Some(dir.path()), &mut |_| {}).unwrap();
        assert!(!other.from_cache);
        assert_ne!(other.model, fresh.model);
    }

    #[test]
    fn corrupt_cache_files_are_retrained_and_replaced() {
        let dir = tempfile::tempdir().unwrap();
        let data = toy_mnist();
        let cfg = toy_config(5);
        let path = cache_file(dir.path(), &cfg);
        std::fs::write(&path, b"not a checkpoint").unwrap();

        let outcome = run_training(&cfg, &data, Some(dir.path()), &mut |_| {}).unwrap();
        assert!(!outcome.from_cache);
        // The bad file was replaced by a real checkpoint.
        let again = run_training(&cfg, &data, Some(dir.path()), &mut |_| {}).unwrap();
        assert!(again.from_cache);
        assert_eq!(again.model, outcome.model);
    }

    #[test]
    fn cache_names_capture_every_training_knob() {
        let dir = Path::new("cache");
        let base = toy_config(5);
        let mut variants = vec![base.clone()];
        let mut v = base.clone();
        v.seed = 6;
        v.train.seed = 6;
        variants.push(v);
        let mut v = base.clone();
        v.train.epochs = 4;
        variants.push(v);
        let mut v = base.clone();
        v.train.batch_size = 32;
        variants.push(v);
        let mut v = base.clone();
        v.train.learning_rate = 1e-3;
        variants.push(v);
        let mut v = base.clone();
        v.train.shuffle_each_epoch = false;
        variants.push(v);
        let mut v = base.clone();
        v.train.threads = 2;
        variants.push(v);
        let names: Vec<PathBuf> = variants.iter().map(|c| cache_file(dir, c)).collect();
        for (i, a) in names.iter().enumerate() {
            for b in &names[i + 1..] {
                assert_ne!(a, b);
            }
        }
        assert_eq!(
            names[0].file_name().unwrap().to_str().unwrap(),
            "sparse-12x6x10-d2-10-s5-e3-b64-lr1e-2-sh1-t1.ckpt"
        );
    }

    #[test]
    fn summary_json_is_stable_and_carries_the_counts() {
        let cfg = RunConfig::parse(
            "kind = sparse\nlayer_sizes = 800,40,40,10\nout_degrees = 2,9,10\nseed = 7\n",
        )
        .unwrap();
        let a = summary_json(&cfg, 0.9393, &[]).unwrap();
        let b = summary_json(&cfg, 0.9393, &[]).unwrap();
        assert_eq!(a, b);
        assert!(a.ends_with('\n'));
        assert!(a.contains("\"params\": 2450"));
        assert!(a.contains("\"edges\": 2360"));
        assert!(a.contains("\"accuracy\": 0.9393"));
        assert!(a.contains("\"network_density_exact\": \"2360/34000\""));
        assert!(a.contains("\"seed\": 7"));
        // Keys come out sorted, so extras interleave deterministically.
        let c = summary_json(&cfg, 0.9393, &[("tau", 0.9.into())]).unwrap();
        assert!(c.contains("\"tau\": 0.9"));
    }

    #[test]
    fn budgets_resolve_to_their_published_groups() {
        assert_eq!(known_budgets(), vec![2450, 4090, 5730, 11570, 16650]);
        let group = budget_group(2450).unwrap();
        assert_eq!(group.len(), 3);
        assert!(group.iter().all(|r| r.group == 1 && r.table == WhichTable::Head));
        match budget_group(1234) {
            Err(ExperimentError::UnknownBudget { budget: 1234, known }) => {
                assert_eq!(known, known_budgets())
            }
            other => panic!("expected UnknownBudget, got {other:?}"),
        }
    }

    #[test]
    fn report_csvs_have_their_schemas() {
        let row = ReproRow {
            table: WhichTable::Head,
            group: 1,
            kind: ModelKind::Sparse,
            layer_sizes: vec![800, 40, 40, 10],
            out_degrees: vec![2, 9, 10],
            params: 2450,
            printed_params: 2450,
            params_check: ParamsCheck::Exact,
            accuracy_pct: 93.11,
            printed_accuracy_pct: 93.93,
            seed: 42,
            from_cache: false,
        };
        let csv = repro_csv(&[row]);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "table,group,kind,layer_sizes,out_degrees,params,printed_params,params_check,\
             accuracy_pct,printed_accuracy_pct,deviation_pct,seed"
        );
        assert_eq!(
            lines.next().unwrap(),
            "head,1,sparse,800 40 40 10,2 9 10,2450,2450,exact,93.11,93.93,-0.82,42"
        );

        let mk = |kind, params, acc| SweepPoint {
            budget: 2450,
            kind,
            layer_sizes: vec![800, 10],
            out_degrees: vec![10],
            params,
            accuracy_pct: acc,
            seed: 42,
        };
        let csv = sweep_csv(&[
            mk(ModelKind::Sparse, 2450, 93.1),
            mk(ModelKind::Deep, 2455, 76.6),
            mk(ModelKind::Shallow, 2443, 80.9),
        ]);
        let got: Vec<&str> = csv.lines().collect();
        assert_eq!(got[0], "params,kind,budget,layer_sizes,out_degrees,accuracy_pct,seed");
        assert!(got[1].starts_with("2443,shallow"));
        assert!(got[2].starts_with("2450,sparse"));
        assert!(got[3].starts_with("2455,deep"));
    }

    #[test]
    fn exit_codes_partition_the_error_space() {
        let cfg_err: ExperimentError = ConfigError::MissingKey("kind").into();
        assert_eq!(cfg_err.exit_code(), 2);
        let data_err: ExperimentError =
            DataError::MissingFile { dir: "nope".into(), name: "x".into() }.into();
        assert_eq!(data_err.exit_code(), 3);
        let io_err = ExperimentError::Io {
            path: "x".into(),
            source: std::io::Error::new(std::io::ErrorKind::Other, "boom"),
        };
        assert_eq!(io_err.exit_code(), 1);
        let transport: ExperimentError = PipelineError::ConnectionLost { sample_id: 3 }.into();
        assert_eq!(transport.exit_code(), 4);
    }
}
