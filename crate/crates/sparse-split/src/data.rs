//! MNIST IDX loading and batch plumbing.
//!
//! The IDX parsers work on byte slices, reject anything malformed with a
//! typed error, and never allocate more than the input could justify —
//! they are exposed directly to fuzzing. File loading sniffs the gzip
//! magic, so both raw and `.gz` files work with the same code path.
//!
//! Preprocessing scales pixels to `[0, 1]` and zero-pads each image row to
//! the model's input width (e.g. 28×28 = 784 pixels padded to 800).

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder};
use flate2::read::GzDecoder;
use thiserror::Error;

use crate::mlp::Matrix;

/// IDX magic for unsigned-byte rank-3 tensors (images).
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// IDX magic for unsigned-byte rank-1 tensors (labels).
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Caps keeping hostile headers from requesting absurd allocations.
pub const MAX_ITEMS: usize = 1 << 24;
pub const MAX_PIXELS_PER_ITEM: usize = 1 << 20;

/// Environment variable naming the data directory (lowest-priority source
/// is the `./data` default).
pub const DATA_DIR_ENV: &str = "SPARSE_SPLIT_DATA";

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad IDX magic: found {found:#010x}, expected {expected:#010x}")]
    BadMagic { found: u32, expected: u32 },
    #[error("truncated IDX data reading {what}: needed {needed} bytes, had {got}")]
    Truncated { what: &'static str, needed: usize, got: usize },
    #[error("{extra} trailing bytes after IDX payload")]
    TrailingBytes { extra: usize },
    #[error("unreasonable IDX dimensions: {count} items of {rows}x{cols}")]
    BadDimensions { count: usize, rows: usize, cols: usize },
    #[error("image and label counts disagree: {images} images, {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} outside the digit range 0..=9")]
    LabelOutOfRange { label: u8 },
    #[error("target width {got} is smaller than an image ({need} pixels)")]
    TargetTooSmall { need: usize, got: usize },
    #[error("no {name}[.gz] under {dir} (set {DATA_DIR_ENV} or pass --data-dir)")]
    MissingFile { dir: PathBuf, name: String },
}

/// Raw images exactly as stored: one byte per pixel, row-major per image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

/// Raw label bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxLabels {
    pub labels: Vec<u8>,
}

fn take_u32(bytes: &[u8], off: usize, what: &'static str) -> Result<u32, DataError> {
    let end = off.checked_add(4).ok_or(DataError::Truncated { what, needed: usize::MAX, got: bytes.len() })?;
    if bytes.len() < end {
        return Err(DataError::Truncated { what, needed: end, got: bytes.len() });
    }
    Ok(BigEndian::read_u32(&bytes[off..end]))
}

/// Parse an IDX image tensor from bytes. Strict: magic, sane dimensions,
/// exact payload length.
pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages, DataError> {
    let magic = take_u32(bytes, 0, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic { found: magic, expected: IDX_IMAGES_MAGIC });
    }
    let count = take_u32(bytes, 4, "image count")? as usize;
    let rows = take_u32(bytes, 8, "row count")? as usize;
    let cols = take_u32(bytes, 12, "column count")? as usize;
    if rows == 0 || cols == 0 || rows.saturating_mul(cols) > MAX_PIXELS_PER_ITEM || count > MAX_ITEMS
    {
        return Err(DataError::BadDimensions { count, rows, cols });
    }
    let needed = count
        .checked_mul(rows * cols)
        .and_then(|n| n.checked_add(16))
        .ok_or(DataError::BadDimensions { count, rows, cols })?;
    if bytes.len() < needed {
        return Err(DataError::Truncated { what: "pixel data", needed, got: bytes.len() });
    }
    if bytes.len() > needed {
        return Err(DataError::TrailingBytes { extra: bytes.len() - needed });
    }
    Ok(IdxImages { count, rows, cols, pixels: bytes[16..].to_vec() })
}

/// Parse an IDX label vector from bytes, with the same strictness.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<IdxLabels, DataError> {
    let magic = take_u32(bytes, 0, "magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic { found: magic, expected: IDX_LABELS_MAGIC });
    }
    let count = take_u32(bytes, 4, "label count")? as usize;
    if count > MAX_ITEMS {
        return Err(DataError::BadDimensions { count, rows: 1, cols: 1 });
    }
    let needed = count + 8;
    if bytes.len() < needed {
        return Err(DataError::Truncated { what: "label data", needed, got: bytes.len() });
    }
    if bytes.len() > needed {
        return Err(DataError::TrailingBytes { extra: bytes.len() - needed });
    }
    Ok(IdxLabels { labels: bytes[8..].to_vec() })
}

/// Read a whole file, transparently gunzipping when it starts with the
/// gzip magic `1f 8b`.
pub fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>, DataError> {
    let wrap = |source| DataError::Io { path: path.to_owned(), source };
    let mut file = File::open(path).map_err(wrap)?;
    let mut head = [0u8; 2];
    let n = file.read(&mut head).map_err(wrap)?;
    let mut raw = Vec::new();
    raw.extend_from_slice(&head[..n]);
    file.read_to_end(&mut raw).map_err(wrap)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(wrap)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// A ready-to-train dataset: one f32 feature row per sample plus a digit
/// label each.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    features: Matrix<f32>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, features: Matrix<f32>, labels: Vec<u8>) -> Result<Self, DataError> {
        if features.rows() != labels.len() {
            return Err(DataError::CountMismatch { images: features.rows(), labels: labels.len() });
        }
        Ok(Dataset { name: name.into(), features, labels })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature width (the model input width it was preprocessed for).
    pub fn width(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix<f32> {
        &self.features
    }

    pub fn feature_row(&self, i: usize) -> &[f32] {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    /// Copy the given rows into a batch.
    pub fn gather(&self, indices: &[u32]) -> (Matrix<f32>, Vec<u8>) {
        let mut feats = Matrix::zeros(indices.len(), self.width());
        let mut labels = Vec::with_capacity(indices.len());
        for (r, &i) in indices.iter().enumerate() {
            feats.row_mut(r).copy_from_slice(self.features.row(i as usize));
            labels.push(self.labels[i as usize]);
        }
        (feats, labels)
    }

    /// The first `n` samples as their own dataset (deterministic small
    /// slices for quick runs).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            name: format!("{}[..{}]", self.name, n),
            features: self.features.slice_rows(0..n),
            labels: self.labels[..n].to_vec(),
        }
    }

    /// Replace the feature matrix (used for derived feature datasets);
    /// keeps labels, checks row count.
    pub fn with_features(&self, name: impl Into<String>, features: Matrix<f32>) -> Result<Dataset, DataError> {
        Dataset::new(name, features, self.labels.clone())
    }
}

/// Scale to `[0, 1]`, zero-pad rows to `width`, check the labels are
/// digits, and pair images with labels.
pub fn preprocess(
    images: &IdxImages,
    labels: &IdxLabels,
    width: usize,
    name: &str,
) -> Result<Dataset, DataError> {
    if images.count != labels.labels.len() {
        return Err(DataError::CountMismatch { images: images.count, labels: labels.labels.len() });
    }
    let pixels = images.rows * images.cols;
    if width < pixels {
        return Err(DataError::TargetTooSmall { need: pixels, got: width });
    }
    if let Some(&bad) = labels.labels.iter().find(|&&l| l > 9) {
        return Err(DataError::LabelOutOfRange { label: bad });
    }
    let mut features = Matrix::zeros(images.count, width);
    for i in 0..images.count {
        let src = &images.pixels[i * pixels..(i + 1) * pixels];
        let dst = &mut features.row_mut(i)[..pixels];
        for (d, &p) in dst.iter_mut().zip(src) {
            *d = p as f32 / 255.0;
        }
    }
    Dataset::new(name, features, labels.labels.clone())
}

/// Locate `name` (raw or gzipped) under `dir` or `dir/mnist`.
pub fn find_data_file(dir: &Path, name: &str) -> Result<PathBuf, DataError> {
    let gz = format!("{name}.gz");
    for sub in [dir.to_path_buf(), dir.join("mnist")] {
        for candidate in [sub.join(name), sub.join(&gz)] {
            if candidate.is_file() {
                return Ok(candidate);
            }
        }
    }
    Err(DataError::MissingFile { dir: dir.to_owned(), name: name.to_owned() })
}

/// Load and preprocess one MNIST split from a directory.
pub fn load_split(dir: &Path, images: &str, labels: &str, width: usize, name: &str) -> Result<Dataset, DataError> {
    let img = parse_idx_images(&read_maybe_gzip(&find_data_file(dir, images)?)?)?;
    let lab = parse_idx_labels(&read_maybe_gzip(&find_data_file(dir, labels)?)?)?;
    preprocess(&img, &lab, width, name)
}

/// Both MNIST splits, preprocessed to `width`.
pub struct MnistData {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn load_mnist(dir: &Path, width: usize) -> Result<MnistData, DataError> {
    Ok(MnistData {
        train: load_split(dir, TRAIN_IMAGES, TRAIN_LABELS, width, "train")?,
        test: load_split(dir, TEST_IMAGES, TEST_LABELS, width, "t10k")?,
    })
}

/// Data directory resolution: explicit flag, then `SPARSE_SPLIT_DATA`,
/// then `./data`.
pub fn resolve_data_dir(explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"))
}
