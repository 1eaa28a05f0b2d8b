//! End-to-end runs of the `sparse-split` binary: argument handling, exit
//! codes, artifact layout, and a real TCP split between two processes.
//!
//! Training-heavy subcommands (reproduce-tables, sweep) are exercised by
//! the acceptance suite against a shared cache; here everything trains for
//! a single epoch on a deliberately small topology.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::OnceLock;

use sparse_split::mlp::load_checkpoint;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sparse-split"))
}

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

struct Output {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    Output {
        code: out.status.code().expect("no signal"),
        stdout: String::from_utf8(out.stdout).expect("utf-8 stdout"),
        stderr: String::from_utf8(out.stderr).expect("utf-8 stderr"),
    }
}

// ------------------------------------------------------------------ plan --

#[test]
fn plan_enumerates_the_800_180_junction() {
    let out = run(&["plan", "--layers", "800,180"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let lines: Vec<&str> = out.stdout.lines().collect();
    assert_eq!(lines[0], "junction,left,right,d_out,d_in,density,edges");
    assert_eq!(lines.len(), 1 + 20, "gcd(800,180) = 20 valid pairs");
    assert_eq!(lines[1], "1,800,180,9,40,1/20,7200", "sparsest valid pair");
    assert_eq!(lines[20], "1,800,180,180,800,1,144000", "densest pair is full");
}

#[test]
fn plan_rejects_degenerate_layer_lists() {
    for bad in ["800", "0,5", "800,0,10"] {
        let out = run(&["plan", "--layers", bad]);
        assert_eq!(out.code, 2, "plan {bad} must be a config error");
    }
}

// ----------------------------------------------------------------- fetch --

#[test]
fn fetch_reports_the_vendored_idx_files() {
    let out = run(&["fetch", "--data-dir", data_dir().to_str().unwrap()]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert_eq!(out.stdout.matches("60000").count(), 2, "train images and labels");
    assert_eq!(out.stdout.matches("10000").count(), 2, "test images and labels");
}

#[test]
fn fetch_respects_the_data_env_var_and_never_downloads() {
    let empty = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["fetch"])
        .env("SPARSE_SPLIT_DATA", empty.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "missing data is a data error");
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("SPARSE_SPLIT_DATA"), "stderr names the env var: {stderr}");
}

// ------------------------------------------------- shared trained fixture --

/// One tiny split model trained once and shared by the tests below.
/// [800,16,16,10] with degrees [2,4,10], split after junction 2, one epoch.
fn fixture() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli-fixture");
        let run_dir = dir.join("run");
        let config = dir.join("tiny.conf");
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(
            &config,
            format!(
                "kind = sparse\nlayer_sizes = 800,16,16,10\nout_degrees = 2,4,10\n\
                 epochs = 1\nseed = 7\nsplit_junction = 2\ntau = 0.5\n\
                 output_dir = {}\n",
                run_dir.display()
            ),
        )
        .unwrap();
        let out = run(&[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--data-dir",
            data_dir().to_str().unwrap(),
        ]);
        assert_eq!(out.code, 0, "fixture training failed:\n{}", out.stderr);
        run_dir
    })
}

fn fixture_checkpoint() -> String {
    fixture().join("checkpoint.ckpt").to_str().unwrap().to_string()
}

#[test]
fn train_writes_the_full_artifact_set() {
    let dir = fixture();
    for name in ["checkpoint.ckpt", "history.csv", "branch_history.csv", "summary.json"] {
        assert!(dir.join(name).exists(), "missing {name}");
    }

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["split_junction"], 2);
    assert_eq!(summary["seed"], 7);
    assert_eq!(summary["params"], 16 + 16 + 10 + 1600 + 64 + 160);
    assert!(summary["branch_params"].as_u64().unwrap() > 0);

    let ckpt = load_checkpoint(&dir.join("checkpoint.ckpt")).unwrap();
    assert_eq!(ckpt.split_junction, Some(2));
    let branch = ckpt.exit_branch.expect("trained exit branch stored");
    assert_eq!(branch.input_width(), 16);
    assert_eq!(branch.output_width(), 10);
}

#[test]
fn train_exits_2_on_a_broken_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("broken.conf");
    std::fs::write(&config, "layer_sizes = 800,16,10\n").unwrap();
    let out = run(&["train", "--config", config.to_str().unwrap()]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("kind"), "stderr names the missing key: {}", out.stderr);
}

// ------------------------------------------------------------- histogram --

#[test]
fn histogram_writes_one_csv_per_junction() {
    let ckpt = fixture_checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "histogram",
        "--checkpoint",
        &ckpt,
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    for j in 1..=3 {
        let path = dir.path().join(format!("checkpoint-junction{j}.csv"));
        let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path:?}: {e}"));
        assert_eq!(text.lines().count(), 1 + 20, "header plus twenty bins");
        assert!(text.starts_with("bin_left_edge,count\n"), "schema: {}", text.lines().next().unwrap());
    }
}

// ------------------------------------------------------- split execution --

fn spawn_tail(ckpt: &str) -> (Child, String) {
    let mut child = bin()
        .args(["serve-tail", "--checkpoint", ckpt, "--listen", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .expect("serve-tail spawns");
    let mut line = String::new();
    BufReader::new(child.stdout.as_mut().unwrap()).read_line(&mut line).unwrap();
    let addr = line.rsplit(" on ").next().expect("listen line ends with the address").trim();
    (child, addr.to_string())
}

#[test]
fn tcp_split_matches_loopback_and_shutdown_stops_the_server() {
    let ckpt = fixture_checkpoint();
    let loop_dir = tempfile::tempdir().unwrap();
    let tcp_dir = tempfile::tempdir().unwrap();

    let local = run(&[
        "split-run",
        "--checkpoint", &ckpt,
        "--tau", "0.5",
        "--samples", "64",
        "--data-dir", data_dir().to_str().unwrap(),
        "--out-dir", loop_dir.path().to_str().unwrap(),
    ]);
    assert_eq!(local.code, 0, "{}", local.stderr);

    let (mut server, addr) = spawn_tail(&ckpt);
    let remote = run(&[
        "split-run",
        "--checkpoint", &ckpt,
        "--tau", "0.5",
        "--samples", "64",
        "--remote", &addr,
        "--shutdown-remote",
        "--data-dir", data_dir().to_str().unwrap(),
        "--out-dir", tcp_dir.path().to_str().unwrap(),
    ]);
    assert_eq!(remote.code, 0, "{}", remote.stderr);

    // Same inputs, same gate, same modeled channel: identical reports, byte
    // for byte, whether the tail ran in-process or across a socket.
    for name in ["policies.csv", "traffic.csv"] {
        let a = std::fs::read(loop_dir.path().join(name)).unwrap();
        let b = std::fs::read(tcp_dir.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between loopback and TCP");
    }

    let status = server.wait().expect("server exits after the shutdown frame");
    assert!(status.success(), "server exit: {status:?}");
}

#[test]
fn split_run_exits_4_when_the_remote_is_unreachable() {
    let ckpt = fixture_checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "split-run",
        "--checkpoint", &ckpt,
        "--tau", "0.5",
        "--samples", "4",
        "--remote", "127.0.0.1:9",
        "--data-dir", data_dir().to_str().unwrap(),
        "--out-dir", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.code, 4, "stderr: {}", out.stderr);
}

#[test]
fn split_run_exits_2_on_a_checkpoint_without_split_sections() {
    // A checkpoint holding only a backbone cannot drive split execution.
    let dir = tempfile::tempdir().unwrap();
    let ckpt = load_checkpoint(Path::new(&fixture_checkpoint())).unwrap();
    let bare = sparse_split::mlp::Checkpoint::model_only(ckpt.model);
    let path = dir.path().join("bare.ckpt");
    sparse_split::mlp::save_checkpoint(&path, &bare).unwrap();

    let out = run(&[
        "split-run",
        "--checkpoint", path.to_str().unwrap(),
        "--tau", "0.5",
        "--data-dir", data_dir().to_str().unwrap(),
        "--out-dir", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.code, 2, "stderr: {}", out.stderr);
}

// ------------------------------------------------------------ seed wiring --

#[test]
fn the_seed_flag_changes_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("seeded.conf");
    std::fs::write(
        &config,
        "kind = sparse\nlayer_sizes = 800,16,10\nout_degrees = 1,10\nepochs = 1\n",
    )
    .unwrap();
    let mut checkpoints = Vec::new();
    for seed in ["1", "2"] {
        let out_dir = dir.path().join(seed);
        let out = run(&[
            "train",
            "--config", config.to_str().unwrap(),
            "--seed", seed,
            "--data-dir", data_dir().to_str().unwrap(),
            "--out-dir", out_dir.to_str().unwrap(),
        ]);
        assert_eq!(out.code, 0, "{}", out.stderr);
        let run_dir = out_dir.join("sparse-800x16x10-d1-10");
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(run_dir.join("summary.json")).unwrap())
                .unwrap();
        assert_eq!(summary["seed"].as_u64().unwrap().to_string(), seed);
        checkpoints.push(std::fs::read(run_dir.join("checkpoint.ckpt")).unwrap());
    }
    assert_ne!(checkpoints[0], checkpoints[1], "different seeds, different weights");
}
