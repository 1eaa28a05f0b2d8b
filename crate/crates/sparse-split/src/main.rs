//! Command-line harness: degree planning, training, table reproduction,
//! histogram export, split execution over loopback or TCP, budget sweeps,
//! and a standalone tail server.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 transport error.

use std::net::{SocketAddr, TcpListener, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sparse_split::data::{
    find_data_file, load_mnist, parse_idx_images, parse_idx_labels, read_maybe_gzip,
    resolve_data_dir, TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES, TRAIN_LABELS,
};
use sparse_split::experiments::{
    reproduce_row, repro_csv, row_config, rows_of, run_training, summary_json, sweep_budget,
    sweep_csv, write_text, ConfigError, ExperimentError, ReproRow, RunConfig, SweepPoint,
    WhichTable,
};
use sparse_split::mlp::{
    load_checkpoint, save_checkpoint, weight_histogram, Checkpoint, EpochStats, HistogramSpec,
    SparseMlp, TrainConfig,
};
use sparse_split::pipeline::{
    compare_policies, run_edge, serve_tail, write_frame, ChannelMode, ChannelModel, Frame,
    PipelineError, TailEndpoint,
};
use sparse_split::seed::derive_seed;
use sparse_split::split::{
    attach_exit, split_model, train_exit, ExitBranch, ExitPolicy, SplitPlan, EXIT_SEED_STREAM,
};
use sparse_split::topology::{
    enumerate_degree_pairs, junction_density, JunctionSpec, NeuronalConfig,
};

#[derive(Parser)]
#[command(
    name = "sparse-split",
    version,
    about = "Structured predefined sparsity for MLPs: train, split, measure"
)]
struct Cli {
    /// Run configuration file (`key = value` lines; see README).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides the config's seed for init and training.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory with the MNIST IDX files (else $SPARSE_SPLIT_DATA, else ./data).
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,

    /// Where reports, checkpoints and caches are written (default ./runs).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Worker threads for gradient computation; affects bit-level results.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// List the valid (d_out, d_in) pairs and densities for each junction.
    Plan {
        /// Layer widths, e.g. 800,180,180,10.
        #[arg(long, value_delimiter = ',', required = true)]
        layers: Vec<usize>,
    },
    /// Verify the MNIST fixture files are present and parseable. No network.
    Fetch,
    /// Train per --config; writes checkpoint, history CSV and summary JSON.
    Train,
    /// Train every row of a published table and report deviations.
    ReproduceTables {
        /// Which table: head or tail.
        #[arg(long)]
        which: String,
    },
    /// Export per-junction weight histograms from a checkpoint.
    Histogram {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Bin width (default 0.07).
        #[arg(long)]
        bin_width: Option<f64>,
        /// Histogram range lower edge (default -0.70).
        #[arg(long)]
        lo: Option<f64>,
        /// Histogram range upper edge, exclusive (default 0.70).
        #[arg(long)]
        hi: Option<f64>,
    },
    /// Run the split pipeline from a checkpoint and compare LOC/ROC/SC/SC_EE.
    SplitRun {
        /// Checkpoint carrying split + exit sections (see `train`).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Exit-gate confidence threshold in [0, 1].
        #[arg(long)]
        tau: f64,
        /// Tail server address; omitted = in-process loopback.
        #[arg(long)]
        remote: Option<String>,
        /// Evaluate only the first N test samples.
        #[arg(long)]
        samples: Option<usize>,
        /// Modeled uplink bandwidth in bytes/s.
        #[arg(long, default_value_t = 1e6)]
        bandwidth_bytes_per_s: f64,
        /// Modeled round-trip time in seconds.
        #[arg(long, default_value_t = 0.01)]
        rtt_s: f64,
        /// Send the remote tail a shutdown frame after the run.
        #[arg(long)]
        shutdown_remote: bool,
    },
    /// Accuracy-vs-parameters comparison of the three kinds at given budgets.
    Sweep {
        /// Published parameter budgets, e.g. 2450,4090,5730,11570,16650.
        #[arg(long, value_delimiter = ',', required = true)]
        budget_list: Vec<usize>,
    },
    /// Serve a checkpoint's tail over TCP until a shutdown frame arrives.
    ServeTail {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Listen address, e.g. 127.0.0.1:7000 (port 0 picks one).
        #[arg(long, default_value = "127.0.0.1:0")]
        listen: String,
        /// Split junction override when the checkpoint has no split section.
        #[arg(long)]
        split_junction: Option<usize>,
    },
}

fn main() -> ExitCode {
    // Die quietly when a pipe consumer (`head`, etc.) hangs up, like any
    // other line-oriented tool.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut seen = e.to_string();
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                // Wrappers restate their source (verbatim or as a
                // suffix); only print sources that add information.
                let msg = s.to_string();
                if !seen.ends_with(&msg) {
                    eprintln!("  caused by: {msg}");
                    seen = msg;
                }
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<(), ExperimentError> {
    match &cli.command {
        Cmd::Plan { layers } => cmd_plan(layers),
        Cmd::Fetch => cmd_fetch(cli),
        Cmd::Train => cmd_train(cli),
        Cmd::ReproduceTables { which } => cmd_reproduce(cli, which),
        Cmd::Histogram { checkpoint, bin_width, lo, hi } => {
            cmd_histogram(cli, checkpoint, *bin_width, *lo, *hi)
        }
        Cmd::SplitRun {
            checkpoint,
            tau,
            remote,
            samples,
            bandwidth_bytes_per_s,
            rtt_s,
            shutdown_remote,
        } => cmd_split_run(
            cli,
            checkpoint,
            *tau,
            remote.as_deref(),
            *samples,
            *bandwidth_bytes_per_s,
            *rtt_s,
            *shutdown_remote,
        ),
        Cmd::Sweep { budget_list } => cmd_sweep(cli, budget_list),
        Cmd::ServeTail { checkpoint, listen, split_junction } => {
            cmd_serve_tail(checkpoint, listen, *split_junction)
        }
    }
}

fn out_base(cli: &Cli) -> PathBuf {
    cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs"))
}

fn load_config(cli: &Cli) -> Result<RunConfig, ExperimentError> {
    let path = cli
        .config
        .as_ref()
        .ok_or(ConfigError::MissingKey("--config <file>"))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.train.threads = threads.max(1);
    }
    Ok(cfg)
}

fn epoch_line(label: &str, total: usize) -> impl FnMut(&EpochStats) + '_ {
    move |e: &EpochStats| {
        eprintln!(
            "  {label} epoch {:>3}/{total}  loss {:.4}  test acc {:.2}%",
            e.epoch + 1,
            e.train_loss,
            e.eval_accuracy * 100.0
        )
    }
}

// ---------------------------------------------------------------- plan --

fn cmd_plan(layers: &[usize]) -> Result<(), ExperimentError> {
    if layers.len() < 2 {
        return Err(ConfigError::BadValue {
            key: "layers",
            what: "need at least two comma-separated layer widths".into(),
        }
        .into());
    }
    // Validates widths (rejects zeros) before we enumerate anything.
    NeuronalConfig::full(layers.to_vec())?;
    println!("junction,left,right,d_out,d_in,density,edges");
    for (i, w) in layers.windows(2).enumerate() {
        for (d_out, d_in) in enumerate_degree_pairs(w[0], w[1]) {
            let spec = JunctionSpec::new(w[0], w[1], d_out)?;
            println!(
                "{},{},{},{},{},{},{}",
                i + 1,
                w[0],
                w[1],
                d_out,
                d_in,
                junction_density(&spec),
                spec.edge_count()
            );
        }
    }
    Ok(())
}

// --------------------------------------------------------------- fetch --

fn cmd_fetch(cli: &Cli) -> Result<(), ExperimentError> {
    let dir = resolve_data_dir(cli.data_dir.clone());
    for name in [TRAIN_IMAGES, TRAIN_LABELS, TEST_IMAGES, TEST_LABELS] {
        let path = find_data_file(&dir, name).map_err(|e| {
            eprintln!(
                "place the four MNIST IDX files (gzip ok) under {} — \
                 this command only verifies, it never downloads",
                dir.display()
            );
            e
        })?;
        let bytes = read_maybe_gzip(&path)?;
        if name.contains("images") {
            let images = parse_idx_images(&bytes)?;
            println!(
                "{}: {} images {}x{} ({})",
                name,
                images.count,
                images.rows,
                images.cols,
                path.display()
            );
        } else {
            let labels = parse_idx_labels(&bytes)?;
            println!("{}: {} labels ({})", name, labels.labels.len(), path.display());
        }
    }
    println!("all MNIST fixtures present under {}", dir.display());
    Ok(())
}

// --------------------------------------------------------------- train --

fn cmd_train(cli: &Cli) -> Result<(), ExperimentError> {
    let cfg = load_config(cli)?;
    let data = load_mnist(&resolve_data_dir(cli.data_dir.clone()), cfg.layer_sizes[0])?;

    // A config-chosen directory is used verbatim; otherwise runs get a
    // label-named directory under the output base.
    let run_dir = match (&cli.out_dir, &cfg.output_dir) {
        (None, Some(dir)) => dir.clone(),
        _ => out_base(cli).join(cfg.label()),
    };

    let neuronal = cfg.neuronal()?;
    eprintln!(
        "training {} ({} params, {} edges, seed {})",
        cfg.label(),
        neuronal.count_parameters(),
        neuronal.edge_count(),
        cfg.seed
    );
    let outcome = run_training(&cfg, &data, None, &mut epoch_line("backbone", cfg.train.epochs))?;
    let history = outcome.history.as_ref().expect("fresh training always has a history");
    write_text(&run_dir.join("history.csv"), &history.to_csv())?;

    let mut extra: Vec<(&str, serde_json::Value)> = Vec::new();
    let mut ckpt = Checkpoint::model_only(outcome.model.clone());

    if let Some(split) = &cfg.split {
        let plan = match split.split_junction {
            Some(s) => SplitPlan::new(outcome.model.config(), s)?,
            None => SplitPlan::midpoint(outcome.model.config())?,
        };
        let (head, _tail) = split_model(&outcome.model, plan.split_junction())?;
        let branch_seed = derive_seed(cfg.seed, EXIT_SEED_STREAM);
        let mut branch = attach_exit(&outcome.model, plan, &split.branch_hidden, branch_seed)?;
        let branch_cfg = TrainConfig { seed: branch_seed, ..cfg.train.clone() };
        eprintln!(
            "training exit branch at junction {} ({} params, seed {})",
            plan.split_junction(),
            branch.param_count(),
            branch_seed
        );
        let branch_history = train_exit(
            &head,
            &mut branch,
            &data.train,
            &data.test,
            &branch_cfg,
        )?;
        write_text(&run_dir.join("branch_history.csv"), &branch_history.to_csv())?;
        extra.push(("split_junction", plan.split_junction().into()));
        extra.push(("branch_params", branch.param_count().into()));
        extra.push(("branch_accuracy", branch_history.final_accuracy().unwrap_or(0.0).into()));
        extra.push(("tau", split.tau.into()));
        ckpt.split_junction = Some(plan.split_junction());
        ckpt.exit_branch = Some(branch.into_model());
    }

    save_checkpoint(&run_dir.join("checkpoint.ckpt"), &ckpt)?;
    let summary = summary_json(&cfg, outcome.accuracy, &extra)?;
    write_text(&run_dir.join("summary.json"), &summary)?;
    print!("{summary}");
    eprintln!("wrote {}", run_dir.display());
    Ok(())
}

// ---------------------------------------------------- reproduce-tables --

fn cmd_reproduce(cli: &Cli, which: &str) -> Result<(), ExperimentError> {
    let table = WhichTable::parse(which).ok_or_else(|| ConfigError::BadValue {
        key: "--which",
        what: format!("{which:?} is not head or tail"),
    })?;
    let data = load_mnist(&resolve_data_dir(cli.data_dir.clone()), 800)?;
    let base = out_base(cli);
    let cache = base.join("cache");
    let seed = cli.seed.unwrap_or_else(|| TrainConfig::default().seed);
    let threads = cli.threads.unwrap_or(1).max(1);

    let mut rows: Vec<ReproRow> = Vec::new();
    for row in rows_of(table) {
        let label = row_config(row, seed, threads).label();
        eprintln!("[{} group {}] {}", table.name(), row.group, label);
        let repro = reproduce_row(
            row,
            &data,
            seed,
            threads,
            Some(&cache),
            &mut epoch_line(&label, TrainConfig::default().epochs),
        )?;
        println!(
            "{} group {} {:<7} params {:>6} ({}) accuracy {:.2}% (printed {:.2}%, dev {:+.2}){}",
            table.name(),
            row.group,
            row.kind.name(),
            repro.params,
            repro.params_check.name(),
            repro.accuracy_pct,
            repro.printed_accuracy_pct,
            repro.deviation_pct(),
            if repro.from_cache { "  [cached]" } else { "" },
        );
        rows.push(repro);
    }

    let csv_path = base.join(format!("reproduce-{}.csv", table.name()));
    write_text(&csv_path, &repro_csv(&rows))?;
    let exact = rows.iter().filter(|r| r.params_check.name() == "exact").count();
    let swapped = rows.iter().filter(|r| r.params_check.name() == "documented_swap").count();
    println!(
        "parameter cells: {exact}/{} exact, {swapped} flagged as the documented swap",
        rows.len()
    );
    println!("wrote {}", csv_path.display());
    Ok(())
}

// ----------------------------------------------------------- histogram --

fn cmd_histogram(
    cli: &Cli,
    checkpoint: &Path,
    bin_width: Option<f64>,
    lo: Option<f64>,
    hi: Option<f64>,
) -> Result<(), ExperimentError> {
    let ckpt = load_checkpoint(checkpoint)?;
    let default = HistogramSpec::default();
    let spec = HistogramSpec {
        lo: lo.unwrap_or(default.lo),
        hi: hi.unwrap_or(default.hi),
        bin_width: bin_width.unwrap_or(default.bin_width),
    };
    let base = out_base(cli);
    let stem = checkpoint
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".to_string());
    for i in 0..ckpt.model.config().junction_count() {
        let hist = weight_histogram(&ckpt.model, i, &spec)?;
        let path = base.join(format!("{}-junction{}.csv", stem, i + 1));
        write_text(&path, &hist.to_csv())?;
        println!(
            "junction {}: {} weights binned, {} below range, {} above -> {}",
            i + 1,
            hist.total() - hist.below - hist.above,
            hist.below,
            hist.above,
            path.display()
        );
    }
    Ok(())
}

// ----------------------------------------------------------- split-run --

/// Checkpoint sections -> a ready (model, branch) pair.
fn split_parts(ckpt: Checkpoint) -> Result<(SparseMlp, ExitBranch), ExperimentError> {
    let s = ckpt.split_junction.ok_or(ConfigError::MissingKey(
        "split section in checkpoint (train with split_junction/tau set)",
    ))?;
    let branch_model = ckpt.exit_branch.ok_or(ConfigError::MissingKey(
        "exit-branch section in checkpoint (train with split_junction/tau set)",
    ))?;
    let plan = SplitPlan::new(ckpt.model.config(), s)?;
    let branch = ExitBranch::from_parts(plan, ckpt.model.config().output_width(), branch_model)?;
    Ok((ckpt.model, branch))
}

fn resolve_remote(addr: &str) -> Result<SocketAddr, ExperimentError> {
    addr.to_socket_addrs()
        .map_err(|e| ExperimentError::Pipeline(PipelineError::Io(e)))?
        .next()
        .ok_or_else(|| {
            ExperimentError::Pipeline(PipelineError::Io(std::io::Error::new(
                std::io::ErrorKind::AddrNotAvailable,
                format!("{addr} resolves to no address"),
            )))
        })
}

#[allow(clippy::too_many_arguments)]
fn cmd_split_run(
    cli: &Cli,
    checkpoint: &Path,
    tau: f64,
    remote: Option<&str>,
    samples: Option<usize>,
    bandwidth_bytes_per_s: f64,
    rtt_s: f64,
    shutdown_remote: bool,
) -> Result<(), ExperimentError> {
    let (model, branch) = split_parts(load_checkpoint(checkpoint)?)?;
    let policy = ExitPolicy::max_softmax(tau)?;
    let mode = if remote.is_some() { ChannelMode::TcpSocket } else { ChannelMode::LoopbackInProcess };
    let channel = ChannelModel::new(bandwidth_bytes_per_s, rtt_s, mode).map_err(ConfigError::from)?;

    let data = load_mnist(&resolve_data_dir(cli.data_dir.clone()), model.input_width())?;
    let test = match samples {
        Some(n) => data.test.take(n.min(data.test.len())),
        None => data.test,
    };

    let plan = branch.plan();
    let (head, tail) = split_model(&model, plan.split_junction())?;
    eprintln!(
        "split at junction {} (transfer {} bytes/frame), tau {}, {} samples, {}",
        plan.split_junction(),
        plan.transfer_bytes(),
        tau,
        test.len(),
        match remote {
            Some(addr) => format!("remote tail at {addr}"),
            None => "loopback tail".to_string(),
        }
    );

    let endpoint = match remote {
        Some(addr) => TailEndpoint::Remote(resolve_remote(addr)?),
        None => TailEndpoint::InProcess(&tail),
    };
    let report = run_edge(&head, &branch, policy, &test, &channel, endpoint)?;
    let comparison = compare_policies(&model, &branch, policy, &test, &channel)?;

    let base = out_base(cli);
    let policies_path = base.join("policies.csv");
    write_text(&policies_path, &comparison.to_csv())?;
    let traffic_path = base.join("traffic.csv");
    write_text(&traffic_path, &report.log.to_csv())?;

    for row in &comparison.rows {
        println!(
            "{:<5} accuracy {:.2}%  bytes/sample {:>7.1}  modeled latency {:.4}s",
            row.policy.name(),
            row.accuracy * 100.0,
            row.avg_bytes_per_sample,
            row.modeled_latency_per_sample_s
        );
    }
    let m = &report.metrics;
    println!(
        "gate: exited {}/{} ({:.1}%), {} continued to the tail, {} bytes uplink, wall {:.2}s",
        m.exited,
        m.samples,
        m.exit_rate() * 100.0,
        m.continued(),
        m.bytes_total(),
        report.wall_s
    );
    println!("wrote {} and {}", policies_path.display(), traffic_path.display());

    if shutdown_remote {
        if let Some(addr) = remote {
            let addr = resolve_remote(addr)?;
            let send = || -> std::io::Result<()> {
                let mut stream = std::net::TcpStream::connect(addr)?;
                write_frame(&mut stream, &Frame::Shutdown { sample_id: 0 })
            };
            send().map_err(PipelineError::Io)?;
            println!("sent shutdown frame to {addr}");
        }
    }
    Ok(())
}

// --------------------------------------------------------------- sweep --

fn cmd_sweep(cli: &Cli, budgets: &[usize]) -> Result<(), ExperimentError> {
    let data = load_mnist(&resolve_data_dir(cli.data_dir.clone()), 800)?;
    let base = out_base(cli);
    let cache = base.join("cache");
    let seed = cli.seed.unwrap_or_else(|| TrainConfig::default().seed);
    let threads = cli.threads.unwrap_or(1).max(1);

    let mut points: Vec<SweepPoint> = Vec::new();
    for &budget in budgets {
        eprintln!("budget {budget}");
        let batch = sweep_budget(
            budget,
            &data,
            seed,
            threads,
            Some(&cache),
            &mut epoch_line("sweep", TrainConfig::default().epochs),
        )?;
        for p in &batch {
            println!(
                "budget {} {:<7} params {:>6} accuracy {:.2}%",
                p.budget,
                p.kind.name(),
                p.params,
                p.accuracy_pct
            );
        }
        points.extend(batch);
    }

    let path = base.join("sweep.csv");
    write_text(&path, &sweep_csv(&points))?;
    println!("wrote {}", path.display());
    Ok(())
}

// ---------------------------------------------------------- serve-tail --

fn cmd_serve_tail(
    checkpoint: &Path,
    listen: &str,
    split_junction: Option<usize>,
) -> Result<(), ExperimentError> {
    let ckpt = load_checkpoint(checkpoint)?;
    let s = split_junction.or(ckpt.split_junction).ok_or(ConfigError::MissingKey(
        "--split-junction (checkpoint has no split section)",
    ))?;
    let (_head, tail) = split_model(&ckpt.model, s)?;
    let listener = TcpListener::bind(listen)
        .map_err(|e| ExperimentError::Pipeline(PipelineError::Io(e)))?;
    let addr = listener
        .local_addr()
        .map_err(|e| ExperimentError::Pipeline(PipelineError::Io(e)))?;
    println!(
        "serving tail junctions {}..{} (expects {} floats/frame) on {}",
        s + 1,
        ckpt.model.config().junction_count(),
        tail.input_width(),
        addr
    );
    serve_tail(&tail, listener).map_err(|e| ExperimentError::Pipeline(PipelineError::Io(e)))?;
    println!("shutdown frame received, exiting");
    Ok(())
}
