//! Flat key-value run configuration files.
//!
//! One `key = value` pair per line, `#` starts a comment, lists are
//! comma-separated. Unknown and duplicate keys are errors: a config either
//! parses exactly or explains itself.
//!
//! ```text
//! kind = sparse
//! layer_sizes = 800,40,40,10
//! out_degrees = 2,9,10
//! epochs = 50
//! seed = 42
//! split_junction = 2
//! tau = 0.9
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;

use thiserror::Error;

use crate::mlp::TrainConfig;
use crate::pipeline::{ChannelError, ChannelMode, ChannelModel};
use crate::topology::{NeuronalConfig, TopologyError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {what}")]
    Parse { line: usize, what: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("duplicate key {0:?}")]
    DuplicateKey(String),
    #[error("missing required key {0:?}")]
    MissingKey(&'static str),
    #[error("bad value for {key}: {what}")]
    BadValue { key: &'static str, what: String },
    #[error("{kind} networks are fully connected; out_degrees must be omitted or equal the layer widths")]
    DegreesForcedFull { kind: &'static str },
    #[error("kind {kind} needs {want}, got {got} hidden layers")]
    WrongDepth { kind: &'static str, want: &'static str, got: usize },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Deep,
    Shallow,
    Sparse,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Deep => "deep",
            ModelKind::Shallow => "shallow",
            ModelKind::Sparse => "sparse",
        }
    }

    pub fn parse(s: &str) -> Option<ModelKind> {
        match s {
            "deep" => Some(ModelKind::Deep),
            "shallow" => Some(ModelKind::Shallow),
            "sparse" => Some(ModelKind::Sparse),
            _ => None,
        }
    }
}

/// Split and early-exit settings for a run.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSettings {
    /// Junctions kept on the head; `None` means the midpoint rule.
    pub split_junction: Option<usize>,
    /// Hidden widths of the exit branch; empty = single linear layer.
    pub branch_hidden: Vec<usize>,
    /// Confidence threshold for the exit gate.
    pub tau: f64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        SplitSettings { split_junction: None, branch_hidden: Vec::new(), tau: 0.9 }
    }
}

/// One experiment: a model shape, how to train it, and optionally how to
/// split and serve it.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub kind: ModelKind,
    pub layer_sizes: Vec<usize>,
    /// Junction out-degrees; for deep/shallow these are the forced
    /// fully-connected degrees.
    pub out_degrees: Vec<usize>,
    pub train: TrainConfig,
    pub split: Option<SplitSettings>,
    pub channel: Option<ChannelModel>,
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
}

/// Full-connectivity degrees for a layer stack: every junction's out-degree
/// is the next layer's width.
pub fn full_degrees(layer_sizes: &[usize]) -> Vec<usize> {
    layer_sizes[1..].to_vec()
}

fn parse_list<T: std::str::FromStr>(key: &'static str, v: &str) -> Result<Vec<T>, ConfigError> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|p| {
            p.trim().parse::<T>().map_err(|_| ConfigError::BadValue {
                key,
                what: format!("cannot parse list item {:?}", p.trim()),
            })
        })
        .collect()
}

fn parse_one<T: std::str::FromStr>(key: &'static str, v: &str) -> Result<T, ConfigError> {
    v.trim()
        .parse::<T>()
        .map_err(|_| ConfigError::BadValue { key, what: format!("cannot parse {:?}", v.trim()) })
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Unreadable { path: path.to_owned(), source })?;
        RunConfig::parse(&text)
    }

    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut keys: BTreeMap<&str, (usize, String)> = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Parse {
                    line: n + 1,
                    what: format!("expected `key = value`, got {line:?}"),
                });
            };
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(ConfigError::Parse { line: n + 1, what: "empty key".into() });
            }
            let canonical = KNOWN_KEYS
                .iter()
                .copied()
                .find(|k| *k == key)
                .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
            if keys.insert(canonical, (n + 1, value.to_string())).is_some() {
                return Err(ConfigError::DuplicateKey(key.to_string()));
            }
        }
        RunConfig::from_pairs(&keys)
    }

    fn from_pairs(keys: &BTreeMap<&str, (usize, String)>) -> Result<RunConfig, ConfigError> {
        let get = |k: &str| keys.get(k).map(|(_, v)| v.as_str());

        let kind_str = get("kind").ok_or(ConfigError::MissingKey("kind"))?;
        let kind = ModelKind::parse(kind_str).ok_or_else(|| ConfigError::BadValue {
            key: "kind",
            what: format!("{kind_str:?} is not deep, shallow, or sparse"),
        })?;
        let layer_sizes: Vec<usize> =
            parse_list("layer_sizes", get("layer_sizes").ok_or(ConfigError::MissingKey("layer_sizes"))?)?;

        let hidden = layer_sizes.len().saturating_sub(2);
        match kind {
            ModelKind::Shallow if hidden != 1 => {
                return Err(ConfigError::WrongDepth {
                    kind: "shallow",
                    want: "exactly 1",
                    got: hidden,
                })
            }
            ModelKind::Deep if hidden < 2 => {
                return Err(ConfigError::WrongDepth { kind: "deep", want: "at least 2", got: hidden })
            }
            _ => {}
        }

        let out_degrees = match (kind, get("out_degrees")) {
            (ModelKind::Sparse, Some(v)) => parse_list("out_degrees", v)?,
            (ModelKind::Sparse, None) => return Err(ConfigError::MissingKey("out_degrees")),
            (_, None) => full_degrees(&layer_sizes),
            (_, Some(v)) => {
                let given: Vec<usize> = parse_list("out_degrees", v)?;
                if given != full_degrees(&layer_sizes) {
                    return Err(ConfigError::DegreesForcedFull { kind: kind.name() });
                }
                given
            }
        };

        let seed: u64 = match get("seed") {
            Some(v) => parse_one("seed", v)?,
            None => TrainConfig::default().seed,
        };
        let mut train = TrainConfig { seed, ..TrainConfig::default() };
        if let Some(v) = get("epochs") {
            train.epochs = parse_one("epochs", v)?;
        }
        if let Some(v) = get("learning_rate") {
            train.learning_rate = parse_one("learning_rate", v)?;
        }
        if let Some(v) = get("batch_size") {
            train.batch_size = parse_one("batch_size", v)?;
        }
        if let Some(v) = get("shuffle_each_epoch") {
            train.shuffle_each_epoch = parse_one("shuffle_each_epoch", v)?;
        }
        if let Some(v) = get("threads") {
            train.threads = parse_one("threads", v)?;
        }

        let split = if ["split_junction", "branch_hidden_widths", "tau"].iter().any(|k| get(k).is_some())
        {
            let mut s = SplitSettings::default();
            if let Some(v) = get("split_junction") {
                s.split_junction = Some(parse_one("split_junction", v)?);
            }
            if let Some(v) = get("branch_hidden_widths") {
                s.branch_hidden = parse_list("branch_hidden_widths", v)?;
            }
            if let Some(v) = get("tau") {
                s.tau = parse_one("tau", v)?;
                if !(0.0..=1.0).contains(&s.tau) {
                    return Err(ConfigError::BadValue {
                        key: "tau",
                        what: format!("{} outside [0, 1]", s.tau),
                    });
                }
            }
            Some(s)
        } else {
            None
        };

        let channel = if ["bandwidth_bytes_per_s", "rtt_s", "channel_mode"]
            .iter()
            .any(|k| get(k).is_some())
        {
            let bandwidth = match get("bandwidth_bytes_per_s") {
                Some(v) => parse_one("bandwidth_bytes_per_s", v)?,
                None => ChannelModel::default().bandwidth_bytes_per_s(),
            };
            let rtt = match get("rtt_s") {
                Some(v) => parse_one("rtt_s", v)?,
                None => ChannelModel::default().rtt_s(),
            };
            let mode = match get("channel_mode") {
                Some("loopback") | None => ChannelMode::LoopbackInProcess,
                Some("tcp") => ChannelMode::TcpSocket,
                Some(other) => {
                    return Err(ConfigError::BadValue {
                        key: "channel_mode",
                        what: format!("{other:?} is not loopback or tcp"),
                    })
                }
            };
            Some(ChannelModel::new(bandwidth, rtt, mode)?)
        } else {
            None
        };

        let output_dir = get("output_dir").map(PathBuf::from);

        let config = RunConfig {
            kind,
            layer_sizes,
            out_degrees,
            train,
            split,
            channel,
            output_dir,
            seed,
        };
        config.neuronal()?; // validate the topology now, not at train time
        Ok(config)
    }

    /// The validated layer/degree structure for this run.
    pub fn neuronal(&self) -> Result<NeuronalConfig, TopologyError> {
        NeuronalConfig::new(self.layer_sizes.clone(), &self.out_degrees)
    }

    /// Short human-readable run label, e.g. `sparse-800x40x40x10-d2-9-10`.
    pub fn label(&self) -> String {
        let sizes: Vec<String> = self.layer_sizes.iter().map(|s| s.to_string()).collect();
        let degrees: Vec<String> = self.out_degrees.iter().map(|d| d.to_string()).collect();
        format!("{}-{}-d{}", self.kind.name(), sizes.join("x"), degrees.join("-"))
    }
}

const KNOWN_KEYS: &[&str] = &[
    "kind",
    "layer_sizes",
    "out_degrees",
    "epochs",
    "learning_rate",
    "batch_size",
    "shuffle_each_epoch",
    "threads",
    "seed",
    "split_junction",
    "branch_hidden_widths",
    "tau",
    "bandwidth_bytes_per_s",
    "rtt_s",
    "channel_mode",
    "output_dir",
];
