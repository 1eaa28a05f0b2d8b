//! Structured predefined sparsity for multilayer perceptrons.
//!
//! A network here is a chain of *junctions* (weight layers) in which every
//! left-side node has the same out-degree and every right-side node has the
//! same in-degree, fixed before training and never changed. The crate builds
//! such topologies, trains them on MNIST with manual backprop + Adam, splits
//! a trained model into a head (edge device) and a tail (remote host), and
//! runs the head with a confidence-gated early-exit branch so that easy
//! inputs never leave the device. A small framed TCP protocol carries the
//! activation vectors that do.
//!
//! Modules:
//! - [`topology`]: degree arithmetic, density math, edge placement
//! - [`mlp`]: the sparse network itself — init, forward, backprop, Adam,
//!   training loop, checkpoints, weight histograms
//! - [`data`]: MNIST IDX loading (gzip-aware) and batch iteration
//! - [`split`]: head/tail splitting, exit branches, the confidence gate
//! - [`pipeline`]: wire frames, channel model, edge/remote runners,
//!   offload-policy comparison
//! - [`experiments`]: run configs, reference tables, sweeps, report CSVs

pub mod data;
pub mod experiments;
pub mod mlp;
pub mod pipeline;
pub mod seed;
pub mod split;
pub mod topology;
