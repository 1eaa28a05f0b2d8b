//! Degree-constrained bipartite topologies.
//!
//! A junction between a layer of `left_size` nodes and a layer of
//! `right_size` nodes is *structured sparse* when every left node has the
//! same out-degree `d_out` and every right node has the same in-degree
//! `d_in`. Counting edge stubs from both sides forces
//!
//! ```text
//! E = left_size * d_out = right_size * d_in
//! ```
//!
//! so `d_in` is determined by the other three numbers and only exists when
//! the division is exact. The junction density is `E / (left_size *
//! right_size)`, equivalently `d_in / left_size` or `d_out / right_size`.
//! The valid degree pairs for a layer pair are exactly the multiples of the
//! minimal pair, and there are `gcd(left_size, right_size)` of them.
//!
//! Edges are placed by a seeded random matching that realizes the degrees
//! exactly, then stored in canonical order: sorted by `(right, left)`. The
//! canonical order means the in-edges of right node `n` occupy the
//! contiguous index range `n*d_in .. (n+1)*d_in`, which is what the compute
//! kernels rely on.

use num_integer::Integer;
use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use thiserror::Error;

use crate::seed::splitmix64;

/// Largest layer width we accept. Keeps node indices comfortably in `u32`
/// and edge counts in `usize` on 32-bit hosts.
pub const MAX_LAYER_SIZE: usize = 1 << 24;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("no exact in-degree: {left} * {d_out} is not divisible by {right}")]
    NonIntegralInDegree { left: usize, right: usize, d_out: usize },
    #[error("degree pair (d_out {d_out}, d_in {d_in}) exceeds layer pair ({left}, {right})")]
    DegreeOutOfRange { left: usize, right: usize, d_out: usize, d_in: usize },
    #[error("degrees must be at least 1")]
    ZeroDegree,
    #[error("every layer must have at least one node")]
    EmptyLayer,
    #[error("layer width exceeds supported maximum {MAX_LAYER_SIZE}")]
    LayerTooLarge,
    #[error("a network needs at least two layers")]
    TooFewLayers,
    #[error("{layers} layers take {} out-degrees, got {degrees}", layers - 1)]
    DegreeCountMismatch { layers: usize, degrees: usize },
    #[error("junction {index}: {source}")]
    AtJunction {
        index: usize,
        #[source]
        source: Box<TopologyError>,
    },
    #[error("edge placement did not converge")]
    PlacementFailed,
    #[error("edge list violates the claimed degrees or canonical order: {0}")]
    BadEdgeList(String),
    #[error("topology text, line {line}: {what}")]
    Parse { line: usize, what: String },
}

pub type Result<T> = std::result::Result<T, TopologyError>;

/// Shape of one junction: layer widths on both sides plus the exact degrees.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct JunctionSpec {
    pub left_size: usize,
    pub right_size: usize,
    pub d_out: usize,
    pub d_in: usize,
}

impl JunctionSpec {
    /// Build a spec from the three free parameters, deriving `d_in`.
    pub fn new(left_size: usize, right_size: usize, d_out: usize) -> Result<Self> {
        let d_in = derive_in_degree(left_size, right_size, d_out)?;
        Ok(JunctionSpec { left_size, right_size, d_out, d_in })
    }

    /// The fully connected junction for a layer pair.
    pub fn full(left_size: usize, right_size: usize) -> Result<Self> {
        JunctionSpec::new(left_size, right_size, right_size)
    }

    /// Number of edges `E = left_size * d_out = right_size * d_in`.
    pub fn edge_count(&self) -> usize {
        self.left_size * self.d_out
    }

    /// True when every possible edge is present.
    pub fn is_full(&self) -> bool {
        self.d_out == self.right_size
    }

    /// Re-check all internal consistency rules (used when a spec arrives
    /// from a file rather than from [`JunctionSpec::new`]).
    pub fn validate(&self) -> Result<()> {
        let d_in = derive_in_degree(self.left_size, self.right_size, self.d_out)?;
        if d_in != self.d_in {
            return Err(TopologyError::BadEdgeList(format!(
                "claimed d_in {} but degrees force {}",
                self.d_in, d_in
            )));
        }
        Ok(())
    }
}

/// Derive the exact in-degree forced by `(left_size, right_size, d_out)`,
/// or report why none exists.
pub fn derive_in_degree(left_size: usize, right_size: usize, d_out: usize) -> Result<usize> {
    if left_size == 0 || right_size == 0 {
        return Err(TopologyError::EmptyLayer);
    }
    if left_size > MAX_LAYER_SIZE || right_size > MAX_LAYER_SIZE {
        return Err(TopologyError::LayerTooLarge);
    }
    if d_out == 0 {
        return Err(TopologyError::ZeroDegree);
    }
    if d_out > right_size {
        return Err(TopologyError::DegreeOutOfRange {
            left: left_size,
            right: right_size,
            d_out,
            d_in: 0,
        });
    }
    let stubs = left_size * d_out;
    if stubs % right_size != 0 {
        return Err(TopologyError::NonIntegralInDegree {
            left: left_size,
            right: right_size,
            d_out,
        });
    }
    let d_in = stubs / right_size;
    // d_out <= right_size already bounds d_in <= left_size, but keep the
    // check total in case the arithmetic above ever changes.
    if d_in == 0 || d_in > left_size {
        return Err(TopologyError::DegreeOutOfRange {
            left: left_size,
            right: right_size,
            d_out,
            d_in,
        });
    }
    Ok(d_in)
}

/// All valid `(d_out, d_in)` pairs for a layer pair, sparsest first.
///
/// These are the multiples of the minimal pair
/// `(right/g, left/g)` for `k = 1..=g` where `g = gcd(left, right)`;
/// the k-th pair has density `k/g`. The last pair is the full junction.
pub fn enumerate_degree_pairs(left_size: usize, right_size: usize) -> Vec<(usize, usize)> {
    if left_size == 0 || right_size == 0 {
        return Vec::new();
    }
    let g = left_size.gcd(&right_size);
    (1..=g)
        .map(|k| (k * (right_size / g), k * (left_size / g)))
        .collect()
}

/// Fraction of possible edges a junction realizes, exact.
pub fn junction_density(spec: &JunctionSpec) -> Ratio<u64> {
    Ratio::new(spec.edge_count() as u64, (spec.left_size * spec.right_size) as u64)
}

/// Layer widths plus per-junction degrees for a whole network.
///
/// Layers are numbered `0..=L` (layer 0 is the input); junction `i` in this
/// struct connects layer `i` to layer `i+1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeuronalConfig {
    layer_sizes: Vec<usize>,
    junctions: Vec<JunctionSpec>,
}

impl NeuronalConfig {
    /// Validate layer sizes and out-degrees; derives every in-degree.
    pub fn new(layer_sizes: Vec<usize>, out_degrees: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(TopologyError::TooFewLayers);
        }
        if out_degrees.len() != layer_sizes.len() - 1 {
            return Err(TopologyError::DegreeCountMismatch {
                layers: layer_sizes.len(),
                degrees: out_degrees.len(),
            });
        }
        let mut junctions = Vec::with_capacity(out_degrees.len());
        for (i, &d_out) in out_degrees.iter().enumerate() {
            let spec = JunctionSpec::new(layer_sizes[i], layer_sizes[i + 1], d_out)
                .map_err(|source| TopologyError::AtJunction { index: i, source: Box::new(source) })?;
            junctions.push(spec);
        }
        Ok(NeuronalConfig { layer_sizes, junctions })
    }

    /// The fully connected network over the given layer sizes.
    pub fn full(layer_sizes: Vec<usize>) -> Result<Self> {
        let degrees: Vec<usize> = layer_sizes[1..].to_vec();
        NeuronalConfig::new(layer_sizes, &degrees)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Number of junctions (`L`, one less than the number of layers).
    pub fn junction_count(&self) -> usize {
        self.junctions.len()
    }

    pub fn junctions(&self) -> &[JunctionSpec] {
        &self.junctions
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        self.junctions.iter().map(|j| j.d_out).collect()
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        self.junctions.iter().map(|j| j.d_in).collect()
    }

    /// Total edge count over all junctions.
    pub fn edge_count(&self) -> usize {
        self.junctions.iter().map(|j| j.edge_count()).sum()
    }

    /// Trainable parameters: all edges plus one bias per non-input node.
    /// Biases are never sparsified.
    pub fn count_parameters(&self) -> usize {
        self.edge_count() + self.layer_sizes[1..].iter().sum::<usize>()
    }

    /// Network density: realized edges over the fully connected edge count.
    pub fn network_density(&self) -> Ratio<u64> {
        let full: usize = self
            .junctions
            .iter()
            .map(|j| j.left_size * j.right_size)
            .sum();
        Ratio::new(self.edge_count() as u64, full as u64)
    }

    pub fn is_fully_connected(&self) -> bool {
        self.junctions.iter().all(|j| j.is_full())
    }
}

/// A realized junction: its spec plus the concrete edge set.
///
/// Only the left endpoints are stored. In canonical order the right
/// endpoint of edge `k` is `k / d_in`, so the pair list is reconstructed on
/// demand and the in-edges of right node `n` are the slice
/// `lefts[n*d_in..(n+1)*d_in]`, sorted ascending with no repeats.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JunctionTopology {
    spec: JunctionSpec,
    lefts: Vec<u32>,
}

impl JunctionTopology {
    pub fn spec(&self) -> &JunctionSpec {
        &self.spec
    }

    pub fn edge_count(&self) -> usize {
        self.lefts.len()
    }

    pub fn is_full(&self) -> bool {
        self.spec.is_full()
    }

    /// Left endpoints in canonical edge order.
    pub fn left_indices(&self) -> &[u32] {
        &self.lefts
    }

    /// The left endpoints feeding right node `n`, ascending.
    pub fn inputs_of(&self, right: usize) -> &[u32] {
        let d_in = self.spec.d_in;
        &self.lefts[right * d_in..(right + 1) * d_in]
    }

    /// `(left, right)` pairs in canonical order (ascending by right, then left).
    pub fn edge_pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let d_in = self.spec.d_in;
        self.lefts
            .iter()
            .enumerate()
            .map(move |(k, &l)| (l, (k / d_in) as u32))
    }

    /// Rebuild from an explicit pair list (checkpoints, parsers). The list
    /// must already be in canonical order and realize the spec's degrees.
    pub fn from_edge_pairs(spec: JunctionSpec, pairs: &[(u32, u32)]) -> Result<Self> {
        spec.validate()?;
        if pairs.len() != spec.edge_count() {
            return Err(TopologyError::BadEdgeList(format!(
                "expected {} edges, got {}",
                spec.edge_count(),
                pairs.len()
            )));
        }
        let d_in = spec.d_in;
        let mut lefts = Vec::with_capacity(pairs.len());
        for (k, &(l, r)) in pairs.iter().enumerate() {
            if r as usize != k / d_in {
                return Err(TopologyError::BadEdgeList(format!(
                    "edge {k}: right node {r} out of canonical order"
                )));
            }
            lefts.push(l);
        }
        let topo = JunctionTopology { spec, lefts };
        topo.validate()?;
        Ok(topo)
    }

    /// Full invariant check: degree realization, canonical order, bounds.
    pub fn validate(&self) -> Result<()> {
        let spec = &self.spec;
        spec.validate()?;
        if self.lefts.len() != spec.edge_count() {
            return Err(TopologyError::BadEdgeList(format!(
                "expected {} edges, got {}",
                spec.edge_count(),
                self.lefts.len()
            )));
        }
        let mut out_counts = vec![0usize; spec.left_size];
        for right in 0..spec.right_size {
            let block = self.inputs_of(right);
            for (i, &l) in block.iter().enumerate() {
                if l as usize >= spec.left_size {
                    return Err(TopologyError::BadEdgeList(format!(
                        "left node {l} out of range for layer of {}",
                        spec.left_size
                    )));
                }
                if i > 0 && block[i - 1] >= l {
                    return Err(TopologyError::BadEdgeList(format!(
                        "in-edges of right node {right} not strictly ascending"
                    )));
                }
                out_counts[l as usize] += 1;
            }
        }
        if let Some(l) = out_counts.iter().position(|&c| c != spec.d_out) {
            return Err(TopologyError::BadEdgeList(format!(
                "left node {l} has out-degree {} instead of {}",
                out_counts[l], spec.d_out
            )));
        }
        Ok(())
    }

    /// Text form: a `junction` header line, then one `left right` line per
    /// edge in canonical order.
    pub fn to_text(&self) -> String {
        let s = &self.spec;
        let mut out = String::with_capacity(16 + self.lefts.len() * 8);
        let _ = writeln!(out, "junction {} {} {} {}", s.left_size, s.right_size, s.d_out, s.d_in);
        for (l, r) in self.edge_pairs() {
            let _ = writeln!(out, "{l} {r}");
        }
        out
    }

    /// Parse one junction in the [`JunctionTopology::to_text`] format.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut blocks = parse_topologies(text)?;
        if blocks.len() != 1 {
            return Err(TopologyError::Parse {
                line: 1,
                what: format!("expected exactly one junction block, found {}", blocks.len()),
            });
        }
        Ok(blocks.pop().unwrap())
    }
}

/// Serialize a junction sequence (a whole network's topology) as
/// concatenated text blocks.
pub fn serialize_topologies(junctions: &[JunctionTopology]) -> String {
    junctions.iter().map(|j| j.to_text()).collect()
}

/// Parse one or more concatenated junction blocks. Blank lines between
/// blocks are allowed; everything else is strict.
pub fn parse_topologies(text: &str) -> Result<Vec<JunctionTopology>> {
    let mut out = Vec::new();
    let mut lines = text.lines().enumerate().peekable();
    while let Some(&(n, line)) = lines.peek() {
        if line.trim().is_empty() {
            lines.next();
            continue;
        }
        let header: Vec<&str> = line.split_whitespace().collect();
        if header.len() != 5 || header[0] != "junction" {
            return Err(TopologyError::Parse {
                line: n + 1,
                what: "expected header `junction <left> <right> <d_out> <d_in>`".into(),
            });
        }
        let num = |s: &str, what: &str| -> Result<usize> {
            s.parse::<usize>().map_err(|_| TopologyError::Parse {
                line: n + 1,
                what: format!("bad {what}: {s:?}"),
            })
        };
        let left_size = num(header[1], "left size")?;
        let right_size = num(header[2], "right size")?;
        let d_out = num(header[3], "d_out")?;
        let d_in = num(header[4], "d_in")?;
        let spec = JunctionSpec { left_size, right_size, d_out, d_in };
        spec.validate().map_err(|e| TopologyError::Parse {
            line: n + 1,
            what: e.to_string(),
        })?;
        lines.next();
        let mut pairs = Vec::with_capacity(spec.edge_count());
        for _ in 0..spec.edge_count() {
            let Some((m, edge_line)) = lines.next() else {
                return Err(TopologyError::Parse {
                    line: n + 1,
                    what: format!("block ends after {} of {} edges", pairs.len(), spec.edge_count()),
                });
            };
            let mut it = edge_line.split_whitespace();
            let (Some(l), Some(r), None) = (it.next(), it.next(), it.next()) else {
                return Err(TopologyError::Parse {
                    line: m + 1,
                    what: "expected `<left> <right>`".into(),
                });
            };
            let parse_u32 = |s: &str| -> Result<u32> {
                s.parse::<u32>().map_err(|_| TopologyError::Parse {
                    line: m + 1,
                    what: format!("bad node index: {s:?}"),
                })
            };
            pairs.push((parse_u32(l)?, parse_u32(r)?));
        }
        let topo = JunctionTopology::from_edge_pairs(spec, &pairs).map_err(|e| {
            TopologyError::Parse { line: n + 1, what: e.to_string() }
        })?;
        out.push(topo);
    }
    if out.is_empty() {
        return Err(TopologyError::Parse { line: 1, what: "no junction blocks found".into() });
    }
    Ok(out)
}

const PLACEMENT_RESTART_LIMIT: usize = 1000;

/// Realize a junction spec as a concrete edge set, deterministically in
/// `seed`.
///
/// Placement pairs a seeded shuffle of left stubs against right stubs in
/// layer order, then repairs duplicate pairs by random stub swaps (which
/// preserve both degree sequences). If a repair round budget of `10 * E`
/// swaps is exhausted the whole placement restarts from a derived seed.
/// Full junctions short-circuit: their edge set is forced.
pub fn build_topology(spec: &JunctionSpec, seed: u64) -> Result<JunctionTopology> {
    spec.validate()?;
    let e = spec.edge_count();
    if spec.is_full() {
        let mut lefts = Vec::with_capacity(e);
        for _right in 0..spec.right_size {
            lefts.extend(0..spec.left_size as u32);
        }
        return Ok(JunctionTopology { spec: *spec, lefts });
    }

    let mut attempt_seed = seed;
    for _ in 0..PLACEMENT_RESTART_LIMIT {
        let mut rng = ChaCha8Rng::seed_from_u64(attempt_seed);
        let mut lefts: Vec<u32> = Vec::with_capacity(e);
        for l in 0..spec.left_size as u32 {
            lefts.extend(std::iter::repeat(l).take(spec.d_out));
        }
        lefts.shuffle(&mut rng);
        if repair_duplicates(&mut lefts, spec, &mut rng) {
            // Canonical order: rights are already grouped by position, so
            // sorting each right node's block sorts the whole edge list by
            // (right, left).
            for right in 0..spec.right_size {
                lefts[right * spec.d_in..(right + 1) * spec.d_in].sort_unstable();
            }
            let topo = JunctionTopology { spec: *spec, lefts };
            debug_assert!(topo.validate().is_ok());
            return Ok(topo);
        }
        attempt_seed = splitmix64(attempt_seed);
    }
    Err(TopologyError::PlacementFailed)
}

/// Swap away duplicate `(left, right)` pairs. Position `p` belongs to right
/// node `p / d_in`; swapping two left entries keeps every degree intact. A
/// swap of positions `p` (value `v`, duplicated in its block) and `q` (value
/// `u`) is accepted only when `u` is absent from `p`'s block and `v` is
/// absent from `q`'s block, so every accepted swap strictly reduces the
/// duplicate count. Returns false when the probe budget runs out.
fn repair_duplicates(lefts: &mut [u32], spec: &JunctionSpec, rng: &mut ChaCha8Rng) -> bool {
    let e = lefts.len();
    let d_in = spec.d_in;
    let cap = 10 * e;
    let mut probes = 0;
    let mut order: Vec<usize> = Vec::with_capacity(d_in);
    loop {
        let mut dups: Vec<usize> = Vec::new();
        for right in 0..spec.right_size {
            let start = right * d_in;
            order.clear();
            order.extend(start..start + d_in);
            order.sort_unstable_by_key(|&p| lefts[p]);
            for w in order.windows(2) {
                if lefts[w[0]] == lefts[w[1]] {
                    dups.push(w[1]);
                }
            }
        }
        if dups.is_empty() {
            return true;
        }
        'dup: for p in dups {
            let r = p / d_in;
            let v = lefts[p];
            // Earlier swaps this round may already have fixed this entry.
            if lefts[r * d_in..(r + 1) * d_in].iter().filter(|&&x| x == v).count() < 2 {
                continue;
            }
            loop {
                if probes >= cap {
                    return false;
                }
                probes += 1;
                let q = rng.random_range(0..e);
                let rq = q / d_in;
                if rq == r {
                    continue;
                }
                let u = lefts[q];
                if u == v
                    || lefts[r * d_in..(r + 1) * d_in].contains(&u)
                    || lefts[rq * d_in..(rq + 1) * d_in].contains(&v)
                {
                    continue;
                }
                lefts.swap(p, q);
                continue 'dup;
            }
        }
    }
}
