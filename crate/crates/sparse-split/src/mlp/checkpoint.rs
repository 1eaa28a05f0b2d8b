//! Binary checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "SPMLP1"
//! u32 layer_count, u32[layer_count] layer sizes, u32[layer_count-1] out-degrees
//! per junction: E x (u32 left, u32 right)   -- canonical edge order
//! per junction: E x f32 weights             -- same order
//! per non-input layer: N x f32 biases
//! zero or more sections: [u8;5] tag, u64 payload length, payload
//!   "SPLT1": u32 split junction index
//!   "EXIT1": an embedded model in the same layout (header through biases)
//! ```
//!
//! Decoding is strict and total: every length is validated against the
//! remaining input before anything is allocated, every edge list must
//! re-validate against its claimed degrees, and non-finite parameters are
//! rejected. Unknown section tags are an error, not a skip — a checkpoint
//! is not a container format.

use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};
use thiserror::Error;

use super::{Junction, Mlp, ModelError, SparseMlp};
use crate::topology::{JunctionTopology, NeuronalConfig, TopologyError};

pub const MODEL_MAGIC: &[u8; 6] = b"SPMLP1";
pub const SECTION_SPLIT: &[u8; 5] = b"SPLT1";
pub const SECTION_EXIT: &[u8; 5] = b"EXIT1";

/// More layers than any reasonable model; guards header-driven loops.
const MAX_LAYERS: usize = 64;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad checkpoint magic")]
    BadMagic,
    #[error("truncated checkpoint while reading {0}")]
    Truncated(&'static str),
    #[error("{0} trailing bytes after checkpoint payload")]
    TrailingBytes(usize),
    #[error("unknown checkpoint section {0:?}")]
    UnknownSection([u8; 5]),
    #[error("duplicate checkpoint section {0:?}")]
    DuplicateSection([u8; 5]),
    #[error("non-finite parameter in checkpoint")]
    NonFinite,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Everything a checkpoint can carry: the model, and optionally a split
/// point and a trained exit branch for it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: SparseMlp,
    pub split_junction: Option<usize>,
    pub exit_branch: Option<SparseMlp>,
}

impl Checkpoint {
    pub fn model_only(model: SparseMlp) -> Self {
        Checkpoint { model, split_junction: None, exit_branch: None }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    off: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, off: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.off
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.remaining() < n {
            return Err(CheckpointError::Truncated(what));
        }
        let s = &self.bytes[self.off..self.off + n];
        self.off += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(LittleEndian::read_u32(self.take(4, what)?))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(LittleEndian::read_u64(self.take(8, what)?))
    }

    fn f32_vec(&mut self, n: usize, what: &'static str) -> Result<Vec<f32>, CheckpointError> {
        let raw = self.take(n * 4, what)?;
        let mut out = Vec::with_capacity(n);
        for c in raw.chunks_exact(4) {
            let v = LittleEndian::read_f32(c);
            if !v.is_finite() {
                return Err(CheckpointError::NonFinite);
            }
            out.push(v);
        }
        Ok(out)
    }
}

/// Encode just a model (header through biases, no sections).
pub fn encode_model(model: &SparseMlp) -> Vec<u8> {
    let cfg = model.config();
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    let push_u32 = |out: &mut Vec<u8>, v: u32| {
        let mut b = [0u8; 4];
        LittleEndian::write_u32(&mut b, v);
        out.extend_from_slice(&b);
    };
    push_u32(&mut out, cfg.layer_sizes().len() as u32);
    for &n in cfg.layer_sizes() {
        push_u32(&mut out, n as u32);
    }
    for spec in cfg.junctions() {
        push_u32(&mut out, spec.d_out as u32);
    }
    for j in model.junctions() {
        for (l, r) in j.topology().edge_pairs() {
            push_u32(&mut out, l);
            push_u32(&mut out, r);
        }
    }
    let push_f32 = |out: &mut Vec<u8>, v: f32| {
        let mut b = [0u8; 4];
        LittleEndian::write_f32(&mut b, v);
        out.extend_from_slice(&b);
    };
    for j in model.junctions() {
        for &w in j.weights() {
            push_f32(&mut out, w);
        }
    }
    for i in 0..cfg.junction_count() {
        for &b in model.biases(i) {
            push_f32(&mut out, b);
        }
    }
    out
}

fn decode_model_from(r: &mut Reader) -> Result<SparseMlp, CheckpointError> {
    if r.take(6, "magic")? != MODEL_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let layer_count = r.u32("layer count")? as usize;
    if layer_count < 2 || layer_count > MAX_LAYERS {
        return Err(CheckpointError::Malformed(format!("layer count {layer_count}")));
    }
    let mut sizes = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        sizes.push(r.u32("layer size")? as usize);
    }
    let mut d_outs = Vec::with_capacity(layer_count - 1);
    for _ in 0..layer_count - 1 {
        d_outs.push(r.u32("out-degree")? as usize);
    }
    // NeuronalConfig::new re-derives in-degrees and enforces all bounds,
    // so header-driven sizes are sanitized before any edge allocation.
    let cfg = NeuronalConfig::new(sizes, &d_outs)?;

    let mut topologies = Vec::with_capacity(cfg.junction_count());
    for spec in cfg.junctions() {
        let e = spec.edge_count();
        let raw = r.take(e * 8, "edge list")?;
        let mut pairs = Vec::with_capacity(e);
        for c in raw.chunks_exact(8) {
            pairs.push((LittleEndian::read_u32(&c[..4]), LittleEndian::read_u32(&c[4..])));
        }
        topologies.push(JunctionTopology::from_edge_pairs(*spec, &pairs)?);
    }
    let mut junctions = Vec::with_capacity(cfg.junction_count());
    for topo in topologies {
        let weights = r.f32_vec(topo.edge_count(), "weights")?;
        junctions.push(Junction::new(topo, weights)?);
    }
    let mut biases = Vec::with_capacity(cfg.junction_count());
    for &n in &cfg.layer_sizes()[1..] {
        biases.push(r.f32_vec(n, "biases")?);
    }
    Ok(Mlp::from_parts(cfg, junctions, biases)?)
}

/// Decode a bare model blob (must consume the whole input).
pub fn decode_model(bytes: &[u8]) -> Result<SparseMlp, CheckpointError> {
    let mut r = Reader::new(bytes);
    let model = decode_model_from(&mut r)?;
    if r.remaining() != 0 {
        return Err(CheckpointError::TrailingBytes(r.remaining()));
    }
    Ok(model)
}

/// Encode a full checkpoint (model plus optional sections).
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = encode_model(&ckpt.model);
    let section = |out: &mut Vec<u8>, tag: &[u8; 5], payload: &[u8]| {
        out.extend_from_slice(tag);
        let mut b = [0u8; 8];
        LittleEndian::write_u64(&mut b, payload.len() as u64);
        out.extend_from_slice(&b);
        out.extend_from_slice(payload);
    };
    if let Some(s) = ckpt.split_junction {
        let mut b = [0u8; 4];
        LittleEndian::write_u32(&mut b, s as u32);
        section(&mut out, SECTION_SPLIT, &b);
    }
    if let Some(branch) = &ckpt.exit_branch {
        let blob = encode_model(branch);
        section(&mut out, SECTION_EXIT, &blob);
    }
    out
}

/// Decode a full checkpoint. Sections may appear in any order but at most
/// once each; anything unrecognized is an error.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader::new(bytes);
    let model = decode_model_from(&mut r)?;
    let mut split_junction: Option<usize> = None;
    let mut exit_branch: Option<SparseMlp> = None;
    while r.remaining() > 0 {
        let tag: [u8; 5] = r.take(5, "section tag")?.try_into().unwrap();
        let len = r.u64("section length")? as usize;
        let payload = r.take(len, "section payload")?;
        match &tag {
            SECTION_SPLIT => {
                if split_junction.is_some() {
                    return Err(CheckpointError::DuplicateSection(tag));
                }
                if payload.len() != 4 {
                    return Err(CheckpointError::Malformed("split section size".into()));
                }
                split_junction = Some(LittleEndian::read_u32(payload) as usize);
            }
            SECTION_EXIT => {
                if exit_branch.is_some() {
                    return Err(CheckpointError::DuplicateSection(tag));
                }
                exit_branch = Some(decode_model(payload)?);
            }
            _ => return Err(CheckpointError::UnknownSection(tag)),
        }
    }

    // Cross-checks between sections and the model.
    if let Some(s) = split_junction {
        let l = model.config().junction_count();
        if s == 0 || s >= l {
            return Err(CheckpointError::Malformed(format!(
                "split junction {s} invalid for {l} junctions"
            )));
        }
    }
    if let Some(branch) = &exit_branch {
        let s = split_junction.ok_or_else(|| {
            CheckpointError::Malformed("exit branch without split section".into())
        })?;
        let boundary = model.config().layer_sizes()[s];
        if branch.input_width() != boundary || branch.output_width() != model.output_width() {
            return Err(CheckpointError::Malformed(format!(
                "exit branch is {}->{} but the split point needs {}->{}",
                branch.input_width(),
                branch.output_width(),
                boundary,
                model.output_width()
            )));
        }
    }
    Ok(Checkpoint { model, split_junction, exit_branch })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    std::fs::write(path, encode_checkpoint(ckpt))
        .map_err(|source| CheckpointError::Io { path: path.to_owned(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path)
        .map_err(|source| CheckpointError::Io { path: path.to_owned(), source })?;
    decode_checkpoint(&bytes)
}
