//! Embedding datasets: ingestion, synthesis, and serialization.
//!
//! A dataset is a flat table of (embedding row, class label, train/test tag).
//! Two interchange formats are supported: `MGNN` (bit-exact binary, carries
//! split tags) and CSV (`label,z0,z1,...` header, no tags — splits are
//! assigned by a seeded fraction on load). Readers reject malformed input
//! outright; nothing is repaired or coerced.

use nalgebra::DMatrix;
use rand::Rng;
use rand::seq::SliceRandom;
use rand_distr::StandardNormal;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::manifold::AnalyticManifold;
use crate::nn::{GnnParams, LayerParams, Nonlinearity};
use crate::risk::{ConvergenceReport, ConvergenceRow, GapRow, GenGapReport};
use crate::spectral::FilterKind;

/// Magic prefix of the binary dataset format.
pub const DATASET_MAGIC: [u8; 4] = *b"MGNN";
/// Current binary dataset format version.
pub const DATASET_VERSION: u32 = 1;

/// Train/test membership of one dataset item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    /// On-disk encoding (one byte per item).
    pub fn as_u8(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }

    /// Inverse of [`Split::as_u8`].
    pub fn from_u8(tag: u8) -> Option<Split> {
        match tag {
            0 => Some(Split::Train),
            1 => Some(Split::Test),
            _ => None,
        }
    }
}

/// A labeled embedding table with train/test split tags.
#[derive(Debug, Clone)]
pub struct EmbeddingDataset {
    embeddings: DMatrix<f64>, // n_total × dim, rows are items
    labels: Vec<u32>,
    splits: Vec<Split>,
    n_classes: usize,
    provenance: String,
}

/// Equality ignores provenance: two datasets with identical content are the
/// same dataset regardless of where they were loaded from.
impl PartialEq for EmbeddingDataset {
    fn eq(&self, other: &Self) -> bool {
        self.embeddings == other.embeddings
            && self.labels == other.labels
            && self.splits == other.splits
            && self.n_classes == other.n_classes
    }
}

impl EmbeddingDataset {
    /// Validates and assembles a dataset.
    ///
    /// Requires at least one item, a positive embedding dimension, all values
    /// finite, label/split lengths matching the row count, and every label
    /// below `n_classes`.
    pub fn new(
        embeddings: DMatrix<f64>,
        labels: Vec<u32>,
        splits: Vec<Split>,
        n_classes: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let n = embeddings.nrows();
        if n == 0 || embeddings.ncols() == 0 {
            return Err(Error::InvalidInput(format!(
                "dataset must have at least one item and one feature, got {n}×{}",
                embeddings.ncols()
            )));
        }
        if labels.len() != n || splits.len() != n {
            return Err(Error::InvalidInput(format!(
                "row count {n} does not match {} labels / {} split tags",
                labels.len(),
                splits.len()
            )));
        }
        if n_classes == 0 {
            return Err(Error::InvalidInput("class count must be positive".into()));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= n_classes) {
            return Err(Error::InvalidInput(format!(
                "label {l} of item {i} is out of range for {n_classes} classes"
            )));
        }
        if let Some(i) = (0..n).find(|&i| embeddings.row(i).iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "embedding of item {i} contains a non-finite value"
            )));
        }
        Ok(EmbeddingDataset {
            embeddings,
            labels,
            splits,
            n_classes,
            provenance: provenance.into(),
        })
    }

    /// Total number of items across both splits.
    pub fn n_total(&self) -> usize {
        self.embeddings.nrows()
    }

    /// Embedding dimension.
    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    /// Number of classes.
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// The full embedding matrix (rows are items).
    pub fn embeddings(&self) -> &DMatrix<f64> {
        &self.embeddings
    }

    /// Per-item class labels.
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Per-item split tags.
    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    /// Free-form description of where the data came from.
    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Indices of all items in the given split, in item order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.n_total()).filter(|&i| self.splits[i] == split).collect()
    }

    /// One split as a dense table: embedding rows and labels in item order —
    /// the shape the pointwise trainer consumes.
    pub fn split_table(&self, split: Split) -> (DMatrix<f64>, Vec<u32>) {
        let idx = self.split_indices(split);
        let table = DMatrix::from_fn(idx.len(), self.dim(), |r, c| self.embeddings[(idx[r], c)]);
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        (table, labels)
    }
}

/// Generates a balanced synthetic classification dataset.
///
/// Class centers are drawn uniformly on the sphere of radius `separation`
/// (at the origin when `separation` is zero) and items are centers plus
/// unit-variance isotropic Gaussian noise. Each class contributes exactly
/// `per_class_train` train items and `per_class_test` test items, so the
/// split sizes are deterministic. The draw order is fixed (all centers, then
/// per class: train rows, then test rows), making output a pure function of
/// the generator state.
pub fn synth_gaussian_mixture<R: Rng + ?Sized>(
    n_classes: usize,
    dim: usize,
    per_class_train: usize,
    per_class_test: usize,
    separation: f64,
    rng: &mut R,
) -> Result<EmbeddingDataset> {
    if n_classes < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 classes, got {n_classes}"
        )));
    }
    if dim == 0 {
        return Err(Error::InvalidInput("embedding dimension must be positive".into()));
    }
    if per_class_train == 0 {
        return Err(Error::InvalidInput("per-class train count must be positive".into()));
    }
    if !(separation.is_finite() && separation >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "class separation must be finite and nonnegative, got {separation}"
        )));
    }

    let mut centers = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        // Rejection loop: a numerically-zero Gaussian draw cannot be projected
        // onto the sphere. (Practically unreachable, but cheap to guard.)
        loop {
            let g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                centers.push(g.into_iter().map(|v| v * separation / norm).collect::<Vec<_>>());
                break;
            }
        }
    }

    let per_class = per_class_train + per_class_test;
    let n_total = n_classes * per_class;
    let mut embeddings = DMatrix::zeros(n_total, dim);
    let mut labels = Vec::with_capacity(n_total);
    let mut splits = Vec::with_capacity(n_total);
    let mut row = 0;
    for (class, center) in centers.iter().enumerate() {
        for k in 0..per_class {
            for (j, &c) in center.iter().enumerate() {
                let noise: f64 = rng.sample(StandardNormal);
                embeddings[(row, j)] = c + noise;
            }
            labels.push(class as u32);
            splits.push(if k < per_class_train { Split::Train } else { Split::Test });
            row += 1;
        }
    }

    EmbeddingDataset::new(
        embeddings,
        labels,
        splits,
        n_classes,
        format!(
            "synth(classes={n_classes},dim={dim},per_class_train={per_class_train},\
             per_class_test={per_class_test},separation={separation})"
        ),
    )
}

/// How an embedding file is encoded, plus any metadata the encoding itself
/// does not carry.
#[derive(Debug, Clone, Copy)]
pub enum EmbeddingFormat {
    /// Binary `MGNN` file; split tags are stored in the file.
    Binary,
    /// CSV with header `label,z0,z1,...`; carries no split tags, so items
    /// are assigned to train with probability `train_fraction` via a seeded
    /// shuffle on load.
    Csv { train_fraction: f64, seed: u64 },
}

/// Reads an embedding dataset in the requested format.
pub fn read_embeddings(path: &Path, format: EmbeddingFormat) -> Result<EmbeddingDataset> {
    match format {
        EmbeddingFormat::Binary => read_embeddings_binary(path),
        EmbeddingFormat::Csv { train_fraction, seed } => {
            read_embeddings_csv(path, train_fraction, seed)
        }
    }
}

// ---------------------------------------------------------------------------
// Binary format
// ---------------------------------------------------------------------------
//
// Layout (all integers little-endian):
//   magic "MGNN" (4 bytes) | version u32 | n_total u64 | dim u64 | classes u64
//   | n_total×dim f64 rows | n_total u32 labels | n_total u8 split tags
// Tags: 0 = train, 1 = test.

/// Cursor over a fully-loaded byte buffer that reports precise offsets on
/// truncation.
struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let remaining = self.buf.len() - self.pos;
        if remaining < n {
            return Err(Error::parse(
                self.path,
                format!("byte {}", self.pos),
                format!("expected {n} bytes for {what}, found {remaining}"),
            ));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32_le(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64_le(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64_le(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn error_here(&self, detail: String) -> Error {
        Error::parse(self.path, format!("byte {}", self.pos), detail)
    }
}

/// Reads a binary `MGNN` dataset file.
pub fn read_embeddings_binary(path: &Path) -> Result<EmbeddingDataset> {
    let bytes = std::fs::read(path)?;
    let path_str = path.display().to_string();
    let mut r = ByteReader { buf: &bytes, pos: 0, path: &path_str };

    let magic = r.take(4, "magic")?;
    if magic != DATASET_MAGIC {
        return Err(Error::parse(
            &path_str,
            "byte 0".into(),
            format!("bad magic {magic:?}, expected {DATASET_MAGIC:?}"),
        ));
    }
    let version = r.u32_le("version")?;
    if version != DATASET_VERSION {
        return Err(Error::parse(
            &path_str,
            "byte 4".into(),
            format!("unsupported version {version}, expected {DATASET_VERSION}"),
        ));
    }
    let n_total = r.u64_le("item count")?;
    let dim = r.u64_le("embedding dimension")?;
    let n_classes = r.u64_le("class count")?;
    if n_total == 0 || dim == 0 || n_classes == 0 {
        return Err(r.error_here(format!(
            "header declares an empty dataset (items={n_total}, dim={dim}, classes={n_classes})"
        )));
    }
    // Reject headers whose payload could not possibly fit in addressable
    // memory before attempting any allocation.
    let cells = n_total
        .checked_mul(dim)
        .filter(|&c| c <= (usize::MAX as u64) / 8)
        .ok_or_else(|| r.error_here(format!("implausible size {n_total}×{dim}")))?;
    let n_total = n_total as usize;
    let dim = dim as usize;

    let mut embeddings = DMatrix::zeros(n_total, dim);
    let _ = cells;
    for i in 0..n_total {
        for j in 0..dim {
            let v = r.f64_le("embedding value")?;
            if !v.is_finite() {
                return Err(r.error_here(format!(
                    "non-finite embedding value for item {i}, feature {j}"
                )));
            }
            embeddings[(i, j)] = v;
        }
    }
    let mut labels = Vec::with_capacity(n_total);
    for i in 0..n_total {
        let l = r.u32_le("label")?;
        if (l as u64) >= n_classes as u64 {
            return Err(r.error_here(format!(
                "label {l} of item {i} is out of range for {n_classes} classes"
            )));
        }
        labels.push(l);
    }
    let mut splits = Vec::with_capacity(n_total);
    for i in 0..n_total {
        let tag = r.u8("split tag")?;
        let split = Split::from_u8(tag)
            .ok_or_else(|| r.error_here(format!("unknown split tag {tag} for item {i}")))?;
        splits.push(split);
    }
    if r.pos != bytes.len() {
        return Err(r.error_here(format!(
            "{} trailing bytes after payload",
            bytes.len() - r.pos
        )));
    }

    EmbeddingDataset::new(embeddings, labels, splits, n_classes as usize, path_str.clone())
}

/// Writes a dataset as a binary `MGNN` file. The encoding is canonical:
/// equal datasets produce identical bytes.
pub fn write_embeddings_binary(dataset: &EmbeddingDataset, path: &Path) -> Result<()> {
    let n = dataset.n_total();
    let dim = dataset.dim();
    let mut out = Vec::with_capacity(4 + 4 + 24 + n * dim * 8 + n * 4 + n);
    out.extend_from_slice(&DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(dim as u64).to_le_bytes());
    out.extend_from_slice(&(dataset.n_classes() as u64).to_le_bytes());
    for i in 0..n {
        for j in 0..dim {
            out.extend_from_slice(&dataset.embeddings()[(i, j)].to_le_bytes());
        }
    }
    for &l in dataset.labels() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    for &s in dataset.splits() {
        out.push(s.as_u8());
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// CSV format
// ---------------------------------------------------------------------------

/// Reads a CSV embedding file (`label,z0,z1,...` header) and assigns split
/// tags by a seeded shuffle: `round(train_fraction · n)` items become train.
pub fn read_embeddings_csv(path: &Path, train_fraction: f64, seed: u64) -> Result<EmbeddingDataset> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "train fraction must lie strictly between 0 and 1, got {train_fraction}"
        )));
    }
    let text = std::fs::read_to_string(path)?;
    let path_str = path.display().to_string();
    let mut lines = text.lines().enumerate();

    let (_, header) = lines.next().ok_or_else(|| {
        Error::parse(&path_str, "line 1".into(), "empty file, expected header".into())
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols[0] != "label" {
        return Err(Error::parse(
            &path_str,
            "line 1".into(),
            format!("header must start with `label` and one or more `z<i>` columns, got `{header}`"),
        ));
    }
    for (j, col) in cols[1..].iter().enumerate() {
        let expected = format!("z{j}");
        if *col != expected {
            return Err(Error::parse(
                &path_str,
                "line 1".into(),
                format!("column {} must be `{expected}`, got `{col}`", j + 1),
            ));
        }
    }
    let dim = cols.len() - 1;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<u32> = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1; // 1-based
        if line.is_empty() {
            return Err(Error::parse(
                &path_str,
                format!("line {line_no}"),
                "empty line inside data section".into(),
            ));
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(Error::parse(
                &path_str,
                format!("line {line_no}"),
                format!("expected {} fields, found {}", dim + 1, fields.len()),
            ));
        }
        let label: u32 = fields[0].parse().map_err(|_| {
            Error::parse(
                &path_str,
                format!("line {line_no}"),
                format!("invalid label `{}`", fields[0]),
            )
        })?;
        let mut row = Vec::with_capacity(dim);
        for (j, field) in fields[1..].iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::parse(
                    &path_str,
                    format!("line {line_no}"),
                    format!("invalid value `{field}` in column z{j}"),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::parse(
                    &path_str,
                    format!("line {line_no}"),
                    format!("non-finite value in column z{j}"),
                ));
            }
            row.push(v);
        }
        labels.push(label);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::parse(&path_str, "line 2".into(), "no data rows".into()));
    }

    let n = rows.len();
    let embeddings = DMatrix::from_fn(n, dim, |i, j| rows[i][j]);
    let n_classes = labels.iter().copied().max().unwrap() as usize + 1;

    // Seeded split assignment. The shuffle fixes which items are train; the
    // count is deterministic in n and the fraction.
    let n_train = ((train_fraction * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut splits = vec![Split::Test; n];
    for &i in order.iter().take(n_train) {
        splits[i] = Split::Train;
    }

    EmbeddingDataset::new(embeddings, labels, splits, n_classes, path_str.clone())
}

/// Writes the dataset as CSV (`label,z0,z1,...`). Split tags are not part of
/// the CSV format and are not written.
pub fn write_embeddings_csv(dataset: &EmbeddingDataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("label");
    for j in 0..dataset.dim() {
        let _ = write!(out, ",z{j}");
    }
    out.push('\n');
    for i in 0..dataset.n_total() {
        let _ = write!(out, "{}", dataset.labels()[i]);
        for j in 0..dataset.dim() {
            let _ = write!(out, ",{}", dataset.embeddings()[(i, j)]);
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Model checkpoints
// ---------------------------------------------------------------------------
//
// Layout (all integers little-endian):
//   magic "MGNP" (4 bytes) | version u32 | filter kind u8 | n_layers u64
//   then per layer:
//     taps u64 | d_in u64 | d_out u64 | nonlinearity u8
//     | taps×d_in×d_out f64 coefficients, tap-major, row-major within a tap
// Filter kinds: 0 = polynomial, 1 = heat. Nonlinearities: 0 = tanh,
// 1 = relu, 2 = identity.

/// Magic prefix of the binary checkpoint format.
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MGNP";
/// Current binary checkpoint format version.
pub const CHECKPOINT_VERSION: u32 = 1;

fn filter_kind_code(kind: FilterKind) -> u8 {
    match kind {
        FilterKind::Poly => 0,
        FilterKind::Heat => 1,
    }
}

fn filter_kind_from_code(code: u8) -> Option<FilterKind> {
    match code {
        0 => Some(FilterKind::Poly),
        1 => Some(FilterKind::Heat),
        _ => None,
    }
}

/// Writes network parameters as a binary `MGNP` file. The encoding is
/// canonical: equal parameters produce identical bytes, and a write → read →
/// write cycle reproduces the file exactly.
pub fn write_checkpoint(params: &GnnParams, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(filter_kind_code(params.filter_kind()));
    out.extend_from_slice(&(params.n_layers() as u64).to_le_bytes());
    for (layer, &sigma) in params.layers().iter().zip(params.nonlinearities()) {
        out.extend_from_slice(&(layer.order() as u64).to_le_bytes());
        out.extend_from_slice(&(layer.input_dim() as u64).to_le_bytes());
        out.extend_from_slice(&(layer.output_dim() as u64).to_le_bytes());
        out.push(sigma.as_u8());
        for tap in layer.taps() {
            for i in 0..tap.nrows() {
                for j in 0..tap.ncols() {
                    out.extend_from_slice(&tap[(i, j)].to_le_bytes());
                }
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a binary `MGNP` checkpoint. Round trips are bit-exact: every
/// coefficient is restored to the identical floating-point value, so a
/// reloaded network reproduces forward passes bit for bit.
pub fn read_checkpoint(path: &Path) -> Result<GnnParams> {
    let bytes = std::fs::read(path)?;
    let path_str = path.display().to_string();
    let mut r = ByteReader { buf: &bytes, pos: 0, path: &path_str };

    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::parse(
            &path_str,
            "byte 0".into(),
            format!("bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"),
        ));
    }
    let version = r.u32_le("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::parse(
            &path_str,
            "byte 4".into(),
            format!("unsupported version {version}, expected {CHECKPOINT_VERSION}"),
        ));
    }
    let kind_code = r.u8("filter kind")?;
    let filter_kind = filter_kind_from_code(kind_code)
        .ok_or_else(|| r.error_here(format!("unknown filter kind code {kind_code}")))?;
    let n_layers = r.u64_le("layer count")?;
    if n_layers == 0 {
        return Err(r.error_here("checkpoint declares zero layers".into()));
    }

    let mut layers = Vec::new();
    let mut nonlinearities = Vec::new();
    for l in 0..n_layers {
        let taps = r.u64_le("tap count")?;
        let d_in = r.u64_le("input width")?;
        let d_out = r.u64_le("output width")?;
        if taps == 0 || d_in == 0 || d_out == 0 {
            return Err(r.error_here(format!(
                "layer {l} declares an empty shape ({taps} taps, {d_in}×{d_out})"
            )));
        }
        let entries = taps
            .checked_mul(d_in)
            .and_then(|c| c.checked_mul(d_out))
            .filter(|&c| c <= (usize::MAX as u64) / 8)
            .ok_or_else(|| {
                r.error_here(format!("implausible layer size {taps}×{d_in}×{d_out}"))
            })?;
        let _ = entries;
        let code = r.u8("nonlinearity")?;
        let sigma = Nonlinearity::from_u8(code)
            .ok_or_else(|| r.error_here(format!("unknown nonlinearity code {code}")))?;
        let mut tap_mats = Vec::with_capacity(taps as usize);
        for k in 0..taps {
            let mut tap = DMatrix::zeros(d_in as usize, d_out as usize);
            for i in 0..d_in as usize {
                for j in 0..d_out as usize {
                    let v = r.f64_le("coefficient")?;
                    if !v.is_finite() {
                        return Err(r.error_here(format!(
                            "non-finite coefficient in layer {l}, tap {k}, entry ({i}, {j})"
                        )));
                    }
                    tap[(i, j)] = v;
                }
            }
            tap_mats.push(tap);
        }
        layers.push(
            LayerParams::new(tap_mats)
                .map_err(|e| Error::parse(&path_str, format!("layer {l}"), e.to_string()))?,
        );
        nonlinearities.push(sigma);
    }
    if r.pos != bytes.len() {
        return Err(r.error_here(format!(
            "{} trailing bytes after payload",
            bytes.len() - r.pos
        )));
    }

    GnnParams::new(layers, filter_kind, nonlinearities)
        .map_err(|e| Error::parse(&path_str, "layer table".into(), e.to_string()))
}

// ---------------------------------------------------------------------------
// Report CSV
// ---------------------------------------------------------------------------
//
// Reports serialize as plain CSV preceded by `# key=value` comment lines:
// first the config snapshot in its original order, then the derived
// `slope` (only when fitted) and `excluded-nonpositive` keys. Floats use
// the shortest representation that round-trips, so equal reports produce
// identical bytes and a write → read → write cycle reproduces the file.

/// Column header of the generalization-gap report: the row fields, in order.
pub const GAP_REPORT_HEADER: &str = "n_nodes,seeds,mean_train_acc,std_train_acc,\
mean_test_acc,std_test_acc,acc_gap,mean_empirical_risk,std_empirical_risk,\
mc_statistical_risk,risk_gap,mlp_acc_gap";

/// Column header of the convergence report: the row fields, in order.
pub const CONVERGENCE_REPORT_HEADER: &str =
    "n_nodes,trials,mean_discrepancy,std_discrepancy,eigengap,signal_bound";

fn push_report_comments(
    out: &mut String,
    config: &[(String, String)],
    slope: Option<f64>,
    excluded: usize,
) {
    for (key, value) in config {
        let _ = writeln!(out, "# {key}={value}");
    }
    if let Some(s) = slope {
        let _ = writeln!(out, "# slope={s}");
    }
    let _ = writeln!(out, "# excluded-nonpositive={excluded}");
}

/// Comment block split into the original config pairs and the derived keys.
struct ReportComments {
    config: Vec<(String, String)>,
    slope: Option<f64>,
    excluded: usize,
}

/// Strict line cursor over a report file: comments, then the exact header,
/// then data rows. Every error carries the 1-based line number.
struct ReportParser<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    path: &'a str,
}

impl<'a> ReportParser<'a> {
    fn new(text: &'a str, path: &'a str) -> ReportParser<'a> {
        ReportParser { lines: text.lines().enumerate().peekable(), path }
    }

    fn error(&self, line: usize, detail: String) -> Error {
        Error::parse(self.path, format!("line {}", line + 1), detail)
    }

    fn comments(&mut self) -> Result<ReportComments> {
        let mut config = Vec::new();
        let mut slope = None;
        let mut excluded = None;
        while let Some(&(i, line)) = self.lines.peek() {
            let Some(rest) = line.strip_prefix("# ") else { break };
            self.lines.next();
            let (key, value) = rest
                .split_once('=')
                .ok_or_else(|| self.error(i, format!("comment {rest:?} is not key=value")))?;
            match key {
                "slope" => {
                    slope = Some(value.parse::<f64>().map_err(|_| {
                        self.error(i, format!("slope {value:?} is not a number"))
                    })?);
                }
                "excluded-nonpositive" => {
                    excluded = Some(value.parse::<usize>().map_err(|_| {
                        self.error(i, format!("excluded count {value:?} is not a count"))
                    })?);
                }
                _ => config.push((key.to_string(), value.to_string())),
            }
        }
        let excluded = excluded.ok_or_else(|| {
            self.error(0, "missing `# excluded-nonpositive=` comment".into())
        })?;
        Ok(ReportComments { config, slope, excluded })
    }

    fn header(&mut self, expected: &str) -> Result<()> {
        match self.lines.next() {
            Some((_, line)) if line == expected => Ok(()),
            Some((i, line)) => {
                Err(self.error(i, format!("expected header {expected:?}, found {line:?}")))
            }
            None => Err(self.error(0, format!("missing header {expected:?}"))),
        }
    }

    /// Splits a data row into exactly `columns` fields.
    fn row<'b>(&self, line: usize, text: &'b str, columns: usize) -> Result<Vec<&'b str>> {
        let fields: Vec<&'b str> = text.split(',').collect();
        if fields.len() != columns {
            return Err(self.error(
                line,
                format!("expected {columns} columns, found {}", fields.len()),
            ));
        }
        Ok(fields)
    }

    fn count(&self, line: usize, field: &str, what: &str) -> Result<usize> {
        field
            .parse::<usize>()
            .map_err(|_| self.error(line, format!("{what} {field:?} is not a count")))
    }

    fn number(&self, line: usize, field: &str, what: &str) -> Result<f64> {
        field
            .parse::<f64>()
            .map_err(|_| self.error(line, format!("{what} {field:?} is not a number")))
    }
}

/// Writes a generalization-gap report as canonical CSV.
pub fn write_gap_report_csv(report: &GenGapReport, path: &Path) -> Result<()> {
    let mut out = String::new();
    push_report_comments(&mut out, &report.config, report.slope, report.excluded_nonpositive);
    out.push_str(GAP_REPORT_HEADER);
    out.push('\n');
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.n_nodes,
            r.seeds,
            r.mean_train_acc,
            r.std_train_acc,
            r.mean_test_acc,
            r.std_test_acc,
            r.acc_gap,
            r.mean_empirical_risk,
            r.std_empirical_risk,
            r.mc_statistical_risk,
            r.risk_gap,
            r.mlp_acc_gap
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a generalization-gap report written by [`write_gap_report_csv`].
pub fn read_gap_report_csv(path: &Path) -> Result<GenGapReport> {
    let text = std::fs::read_to_string(path)?;
    let path_str = path.display().to_string();
    let mut p = ReportParser::new(&text, &path_str);
    let comments = p.comments()?;
    p.header(GAP_REPORT_HEADER)?;

    let mut rows: Vec<GapRow> = Vec::new();
    while let Some((i, line)) = p.lines.next() {
        let f = p.row(i, line, 12)?;
        let row = GapRow {
            n_nodes: p.count(i, f[0], "graph size")?,
            seeds: p.count(i, f[1], "seed count")?,
            mean_train_acc: p.number(i, f[2], "mean train accuracy")?,
            std_train_acc: p.number(i, f[3], "train accuracy deviation")?,
            mean_test_acc: p.number(i, f[4], "mean test accuracy")?,
            std_test_acc: p.number(i, f[5], "test accuracy deviation")?,
            acc_gap: p.number(i, f[6], "accuracy gap")?,
            mean_empirical_risk: p.number(i, f[7], "mean empirical risk")?,
            std_empirical_risk: p.number(i, f[8], "empirical risk deviation")?,
            mc_statistical_risk: p.number(i, f[9], "statistical risk")?,
            risk_gap: p.number(i, f[10], "risk gap")?,
            mlp_acc_gap: p.number(i, f[11], "baseline gap")?,
        };
        if let Some(last) = rows.last() {
            if row.n_nodes <= last.n_nodes {
                return Err(p.error(i, format!(
                    "graph sizes must be strictly ascending, got {} after {}",
                    row.n_nodes, last.n_nodes
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::parse(&path_str, "end of file".into(), "no data rows".into()));
    }
    Ok(GenGapReport {
        rows,
        slope: comments.slope,
        excluded_nonpositive: comments.excluded,
        config: comments.config,
    })
}

/// Writes a convergence report as canonical CSV.
pub fn write_convergence_report_csv(report: &ConvergenceReport, path: &Path) -> Result<()> {
    let mut out = String::new();
    push_report_comments(&mut out, &report.config, report.slope, report.excluded_nonpositive);
    out.push_str(CONVERGENCE_REPORT_HEADER);
    out.push('\n');
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.n_nodes,
            r.trials,
            r.mean_discrepancy,
            r.std_discrepancy,
            r.eigengap,
            r.signal_bound
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a convergence report written by [`write_convergence_report_csv`].
/// The manifold and bandlimit are recovered from the config comments, which
/// every writer emits.
pub fn read_convergence_report_csv(path: &Path) -> Result<ConvergenceReport> {
    let text = std::fs::read_to_string(path)?;
    let path_str = path.display().to_string();
    let mut p = ReportParser::new(&text, &path_str);
    let comments = p.comments()?;
    p.header(CONVERGENCE_REPORT_HEADER)?;

    let manifold_name = comments
        .config
        .iter()
        .find(|(k, _)| k == "manifold")
        .map(|(_, v)| v.clone())
        .ok_or_else(|| {
            Error::parse(&path_str, "comments".into(), "missing `# manifold=` comment".into())
        })?;
    let manifold = AnalyticManifold::from_name(&manifold_name).ok_or_else(|| {
        Error::parse(
            &path_str,
            "comments".into(),
            format!("unknown manifold {manifold_name:?}"),
        )
    })?;
    let lambda_max = comments
        .config
        .iter()
        .find(|(k, _)| k == "lambda-max")
        .ok_or_else(|| {
            Error::parse(&path_str, "comments".into(), "missing `# lambda-max=` comment".into())
        })?
        .1
        .parse::<f64>()
        .map_err(|_| {
            Error::parse(&path_str, "comments".into(), "bandlimit is not a number".into())
        })?;

    let mut rows: Vec<ConvergenceRow> = Vec::new();
    while let Some((i, line)) = p.lines.next() {
        let f = p.row(i, line, 6)?;
        let row = ConvergenceRow {
            n_nodes: p.count(i, f[0], "sample size")?,
            trials: p.count(i, f[1], "trial count")?,
            mean_discrepancy: p.number(i, f[2], "mean discrepancy")?,
            std_discrepancy: p.number(i, f[3], "discrepancy deviation")?,
            eigengap: p.number(i, f[4], "spectral gap")?,
            signal_bound: p.number(i, f[5], "signal bound")?,
        };
        if let Some(last) = rows.last() {
            if row.n_nodes <= last.n_nodes {
                return Err(p.error(i, format!(
                    "sample sizes must be strictly ascending, got {} after {}",
                    row.n_nodes, last.n_nodes
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::parse(&path_str, "end of file".into(), "no data rows".into()));
    }
    Ok(ConvergenceReport {
        rows,
        slope: comments.slope,
        excluded_nonpositive: comments.excluded,
        manifold,
        lambda_max,
        config: comments.config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Classifies every item by the nearest train-split class mean and
    /// returns the accuracy over the given split.
    fn nearest_centroid_accuracy(ds: &EmbeddingDataset, eval: Split) -> f64 {
        let dim = ds.dim();
        let mut sums = vec![vec![0.0; dim]; ds.n_classes()];
        let mut counts = vec![0usize; ds.n_classes()];
        for &i in &ds.split_indices(Split::Train) {
            let c = ds.labels()[i] as usize;
            counts[c] += 1;
            for j in 0..dim {
                sums[c][j] += ds.embeddings()[(i, j)];
            }
        }
        let centroids: Vec<Vec<f64>> = sums
            .iter()
            .zip(&counts)
            .map(|(s, &c)| s.iter().map(|v| v / c as f64).collect())
            .collect();
        let eval_idx = ds.split_indices(eval);
        let correct = eval_idx
            .iter()
            .filter(|&&i| {
                let mut best = (f64::INFINITY, 0usize);
                for (c, centroid) in centroids.iter().enumerate() {
                    let d2: f64 = (0..dim)
                        .map(|j| (ds.embeddings()[(i, j)] - centroid[j]).powi(2))
                        .sum();
                    if d2 < best.0 {
                        best = (d2, c);
                    }
                }
                best.1 as u32 == ds.labels()[i]
            })
            .count();
        correct as f64 / eval_idx.len() as f64
    }

    fn sample_params(filter_kind: FilterKind, seed: u64) -> GnnParams {
        GnnParams::init_uniform(&[3, 5, 2], 2, filter_kind, Nonlinearity::Tanh, &mut rng(seed))
            .unwrap()
    }

    fn params_bits(params: &GnnParams) -> Vec<u64> {
        params
            .layers()
            .iter()
            .flat_map(|l| l.taps())
            .flat_map(|t| t.iter().map(|v| v.to_bits()))
            .collect()
    }

    fn sample_gap_report() -> GenGapReport {
        GenGapReport {
            rows: vec![
                GapRow {
                    n_nodes: 5,
                    seeds: 10,
                    mean_train_acc: 0.9875,
                    std_train_acc: 0.0125,
                    mean_test_acc: 0.97,
                    std_test_acc: 0.02,
                    acc_gap: 0.9875 - 0.97,
                    mean_empirical_risk: 0.0321,
                    std_empirical_risk: 0.004,
                    mc_statistical_risk: 0.0567,
                    risk_gap: 0.0567 - 0.0321,
                    mlp_acc_gap: 0.001953125,
                },
                GapRow {
                    n_nodes: 50,
                    seeds: 10,
                    mean_train_acc: 0.9921,
                    std_train_acc: 0.003,
                    mean_test_acc: 0.9918,
                    std_test_acc: 0.0028,
                    acc_gap: 0.9921 - 0.9918,
                    mean_empirical_risk: 0.0123,
                    std_empirical_risk: 0.0011,
                    mc_statistical_risk: 0.0125,
                    risk_gap: 0.0125 - 0.0123,
                    mlp_acc_gap: 0.001953125,
                },
            ],
            slope: None,
            excluded_nonpositive: 0,
            config: crate::risk::GapSweepConfig::standard(7).snapshot(),
        }
    }

    fn sample_convergence_report() -> ConvergenceReport {
        ConvergenceReport {
            rows: vec![
                ConvergenceRow {
                    n_nodes: 64,
                    trials: 10,
                    mean_discrepancy: 0.0123456789,
                    std_discrepancy: 0.00123,
                    eigengap: 0.8125,
                    signal_bound: 1.40625,
                },
                ConvergenceRow {
                    n_nodes: 128,
                    trials: 10,
                    mean_discrepancy: 0.0061728394,
                    std_discrepancy: 0.0006,
                    eigengap: 0.90625,
                    signal_bound: 1.375,
                },
                ConvergenceRow {
                    n_nodes: 256,
                    trials: 10,
                    mean_discrepancy: 0.0030864197,
                    std_discrepancy: 0.0003,
                    eigengap: 0.953125,
                    signal_bound: 1.359375,
                },
            ],
            slope: Some(-0.727272),
            excluded_nonpositive: 0,
            manifold: AnalyticManifold::Circle,
            lambda_max: 9.0,
            config: crate::risk::ConvergenceConfig::standard(AnalyticManifold::Circle, 3)
                .snapshot(),
        }
    }

    #[test]
    fn gap_report_csv_round_trips_and_is_canonical() {
        let dir = tempfile::tempdir().unwrap();
        let report = sample_gap_report();
        let first = dir.path().join("gap.csv");
        write_gap_report_csv(&report, &first).unwrap();
        let back = read_gap_report_csv(&first).unwrap();
        assert_eq!(back, report);

        // Equal reports produce identical bytes, and write → read → write
        // reproduces the file exactly.
        let second = dir.path().join("gap2.csv");
        write_gap_report_csv(&back, &second).unwrap();
        assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());

        // The column order is pinned to the row fields.
        let text = std::fs::read_to_string(&first).unwrap();
        assert!(text.contains(
            "n_nodes,seeds,mean_train_acc,std_train_acc,mean_test_acc,std_test_acc,\
             acc_gap,mean_empirical_risk,std_empirical_risk,mc_statistical_risk,\
             risk_gap,mlp_acc_gap"
        ));
        assert!(text.starts_with("# sizes=5/10/20/25/50\n"));
    }

    #[test]
    fn convergence_report_csv_round_trips_and_is_canonical() {
        let dir = tempfile::tempdir().unwrap();
        let report = sample_convergence_report();
        let first = dir.path().join("conv.csv");
        write_convergence_report_csv(&report, &first).unwrap();
        let back = read_convergence_report_csv(&first).unwrap();
        assert_eq!(back, report);

        let second = dir.path().join("conv2.csv");
        write_convergence_report_csv(&back, &second).unwrap();
        assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());

        let text = std::fs::read_to_string(&first).unwrap();
        assert!(text.contains("# slope=-0.727272\n"));
        assert!(text.contains(CONVERGENCE_REPORT_HEADER));
    }

    #[test]
    fn report_readers_reject_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let good_path = dir.path().join("conv.csv");
        write_convergence_report_csv(&sample_convergence_report(), &good_path).unwrap();
        let good = std::fs::read_to_string(&good_path).unwrap();

        let expect_reject = |text: String, needle: &str| {
            let path = dir.path().join("bad.csv");
            std::fs::write(&path, text).unwrap();
            let err = read_convergence_report_csv(&path).unwrap_err().to_string();
            assert!(err.contains(needle), "expected {needle:?} in {err:?}");
        };

        expect_reject(good.replace(CONVERGENCE_REPORT_HEADER, "a,b,c"), "expected header");
        expect_reject(good.replace("64,10,", "64,"), "columns");
        expect_reject(good.replace("0.8125", "eight"), "not a number");
        expect_reject(good.replace("# manifold=circle\n", ""), "manifold");
        expect_reject(
            good.replace("# manifold=circle", "# manifold=donut"),
            "unknown manifold",
        );
        expect_reject(
            good.replace("# excluded-nonpositive=0\n", ""),
            "excluded-nonpositive",
        );
        // Rows must stay ascending; duplicating a size is repair-worthy
        // only for a tool that repairs, which this reader is not.
        expect_reject(good.replace("\n128,", "\n64,"), "ascending");
        // Truncating every data row leaves nothing to report.
        let header_end = good.find(CONVERGENCE_REPORT_HEADER).unwrap()
            + CONVERGENCE_REPORT_HEADER.len();
        expect_reject(good[..header_end + 1].to_string(), "no data rows");

        // The gap reader pins its own header.
        let gap_path = dir.path().join("gap.csv");
        write_gap_report_csv(&sample_gap_report(), &gap_path).unwrap();
        let gap_text = std::fs::read_to_string(&gap_path).unwrap();
        std::fs::write(&gap_path, gap_text.replace("mlp_acc_gap", "mlp")).unwrap();
        assert!(read_gap_report_csv(&gap_path).unwrap_err().to_string().contains("header"));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        for kind in [FilterKind::Poly, FilterKind::Heat] {
            let params = sample_params(kind, 31);
            let path = dir.path().join("net.mgnp");
            write_checkpoint(&params, &path).unwrap();
            let back = read_checkpoint(&path).unwrap();
            assert_eq!(back.filter_kind(), params.filter_kind());
            assert_eq!(back.nonlinearities(), params.nonlinearities());
            assert_eq!(params_bits(&back), params_bits(&params));
        }
    }

    #[test]
    fn checkpoint_bytes_are_canonical() {
        let dir = tempfile::tempdir().unwrap();
        let params = sample_params(FilterKind::Poly, 7);
        let first = dir.path().join("a.mgnp");
        let second = dir.path().join("b.mgnp");
        write_checkpoint(&params, &first).unwrap();
        write_checkpoint(&params, &second).unwrap();
        let a = std::fs::read(&first).unwrap();
        let b = std::fs::read(&second).unwrap();
        assert_eq!(a, b, "equal parameters must serialize to identical bytes");

        // Write → read → write reproduces the file exactly.
        let reread = read_checkpoint(&first).unwrap();
        let third = dir.path().join("c.mgnp");
        write_checkpoint(&reread, &third).unwrap();
        assert_eq!(a, std::fs::read(&third).unwrap());
    }

    #[test]
    fn reloaded_checkpoint_reproduces_forward_bitwise() {
        use crate::graph::{build_geometric_graph, shift_operator, GraphSignal, GsoKind};
        use crate::nn::{gnn_forward, Shift};

        let dir = tempfile::tempdir().unwrap();
        let params = sample_params(FilterKind::Poly, 99);
        let mut r = rng(5);
        let points = DMatrix::from_fn(9, 3, |_, _| r.random_range(-1.0..1.0));
        let graph = build_geometric_graph(&points, None, None).unwrap();
        let gso = shift_operator(&graph, GsoKind::NormalizedLaplacian).unwrap();
        let signal = GraphSignal::new(points).unwrap();
        let (before, _) = gnn_forward(&signal, &params, Shift::Operator(&gso)).unwrap();

        let path = dir.path().join("net.mgnp");
        write_checkpoint(&params, &path).unwrap();
        let reloaded = read_checkpoint(&path).unwrap();
        let (after, _) = gnn_forward(&signal, &reloaded, Shift::Operator(&gso)).unwrap();
        let before_bits: Vec<u64> = before.values().iter().map(|v| v.to_bits()).collect();
        let after_bits: Vec<u64> = after.values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(before_bits, after_bits);
    }

    #[test]
    fn checkpoint_reader_rejects_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let good_path = dir.path().join("good.mgnp");
        write_checkpoint(&sample_params(FilterKind::Heat, 11), &good_path).unwrap();
        let good = std::fs::read(&good_path).unwrap();

        let expect_reject = |bytes: Vec<u8>, needle: &str| {
            let path = dir.path().join("bad.mgnp");
            std::fs::write(&path, bytes).unwrap();
            let err = read_checkpoint(&path).unwrap_err().to_string();
            assert!(err.contains(needle), "expected {needle:?} in {err:?}");
        };

        let mut wrong_magic = good.clone();
        wrong_magic[0] = b'X';
        expect_reject(wrong_magic, "magic");

        let mut wrong_version = good.clone();
        wrong_version[4] = 9;
        expect_reject(wrong_version, "version");

        let mut bad_filter = good.clone();
        bad_filter[8] = 7;
        expect_reject(bad_filter, "filter kind");

        expect_reject(good[..good.len() - 3].to_vec(), "expected");

        let mut trailing = good.clone();
        trailing.push(0);
        expect_reject(trailing, "trailing");

        // Nonlinearity code of the first layer lives right after its three
        // u64 shape fields: 4 magic + 4 version + 1 kind + 8 layer count +
        // 24 shape.
        let mut bad_sigma = good.clone();
        bad_sigma[41] = 9;
        expect_reject(bad_sigma, "nonlinearity");

        // First coefficient follows the nonlinearity byte; NaN payloads are
        // rejected, not restored.
        let mut nan_coeff = good.clone();
        nan_coeff[42..50].copy_from_slice(&f64::NAN.to_le_bytes());
        expect_reject(nan_coeff, "non-finite");

        // A final layer that is not the identity is structurally invalid
        // even when every field parses. The last nonlinearity byte sits
        // before the last layer's coefficient block.
        let last_coeffs = 2 * 5 * 2 * 8; // taps × d_in × d_out × bytes
        let mut bad_final = good.clone();
        bad_final[good.len() - last_coeffs - 1] = Nonlinearity::Tanh.as_u8();
        expect_reject(bad_final, "identity");
    }

    #[test]
    fn synth_is_balanced_and_deterministic() {
        let a = synth_gaussian_mixture(10, 8, 200, 40, 10.0, &mut rng(1)).unwrap();
        let b = synth_gaussian_mixture(10, 8, 200, 40, 10.0, &mut rng(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_total(), 2400);
        assert_eq!(a.split_indices(Split::Train).len(), 2000);
        assert_eq!(a.split_indices(Split::Test).len(), 400);
        for class in 0..10u32 {
            let train = a
                .split_indices(Split::Train)
                .iter()
                .filter(|&&i| a.labels()[i] == class)
                .count();
            assert_eq!(train, 200);
        }
        let c = synth_gaussian_mixture(10, 8, 200, 40, 10.0, &mut rng(2)).unwrap();
        assert_ne!(a, c, "different seeds must give different data");
    }

    #[test]
    fn well_separated_mixture_is_nearest_centroid_classifiable() {
        let ds = synth_gaussian_mixture(10, 8, 100, 20, 20.0, &mut rng(7)).unwrap();
        let acc = nearest_centroid_accuracy(&ds, Split::Test);
        assert!(acc >= 0.99, "separation 20 should be trivially classifiable, got {acc}");
    }

    #[test]
    fn zero_separation_mixture_is_chance_level() {
        let ds = synth_gaussian_mixture(4, 8, 200, 100, 0.0, &mut rng(11)).unwrap();
        let acc = nearest_centroid_accuracy(&ds, Split::Test);
        // 400 test items at chance 1/4: three standard errors is ±0.065.
        assert!((acc - 0.25).abs() < 0.065, "expected chance-level accuracy, got {acc}");
    }

    #[test]
    fn synth_rejects_bad_arguments() {
        assert!(matches!(
            synth_gaussian_mixture(1, 8, 10, 2, 1.0, &mut rng(0)),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            synth_gaussian_mixture(3, 0, 10, 2, 1.0, &mut rng(0)),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            synth_gaussian_mixture(3, 8, 0, 2, 1.0, &mut rng(0)),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            synth_gaussian_mixture(3, 8, 10, 2, -1.0, &mut rng(0)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn dataset_validation_rejects_inconsistencies() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 3.0]);
        // label out of range
        assert!(matches!(
            EmbeddingDataset::new(m.clone(), vec![0, 5], vec![Split::Train; 2], 2, "t"),
            Err(Error::InvalidInput(_))
        ));
        // length mismatch
        assert!(matches!(
            EmbeddingDataset::new(m.clone(), vec![0], vec![Split::Train; 2], 2, "t"),
            Err(Error::InvalidInput(_))
        ));
        // non-finite value
        let bad = DMatrix::from_row_slice(1, 2, &[f64::NAN, 0.0]);
        assert!(matches!(
            EmbeddingDataset::new(bad, vec![0], vec![Split::Train], 2, "t"),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn binary_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth_gaussian_mixture(3, 4, 5, 2, 4.0, &mut rng(42)).unwrap();
        let p1 = dir.path().join("a.mgnn");
        let p2 = dir.path().join("b.mgnn");
        write_embeddings_binary(&ds, &p1).unwrap();
        let back = read_embeddings_binary(&p1).unwrap();
        assert_eq!(ds, back);
        write_embeddings_binary(&back, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn binary_reader_rejects_truncation_with_byte_counts() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth_gaussian_mixture(2, 3, 4, 1, 2.0, &mut rng(3)).unwrap();
        let p = dir.path().join("d.mgnn");
        write_embeddings_binary(&ds, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let cut = dir.path().join("cut.mgnn");
        std::fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
        let err = read_embeddings_binary(&cut).unwrap_err();
        match err {
            Error::Parse { detail, .. } => {
                assert!(detail.contains("expected") && detail.contains("found"), "{detail}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn binary_reader_rejects_bad_magic_version_label_and_trailer() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth_gaussian_mixture(2, 2, 2, 1, 2.0, &mut rng(5)).unwrap();
        let p = dir.path().join("d.mgnn");
        write_embeddings_binary(&ds, &p).unwrap();
        let good = std::fs::read(&p).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        std::fs::write(&p, &bad_magic).unwrap();
        assert!(matches!(read_embeddings_binary(&p), Err(Error::Parse { .. })));

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        std::fs::write(&p, &bad_version).unwrap();
        assert!(matches!(read_embeddings_binary(&p), Err(Error::Parse { .. })));

        // Corrupt the first label (right after the 32-byte header and the
        // 6×2 embedding values) to exceed the class count.
        let mut bad_label = good.clone();
        let label_off = 32 + 6 * 2 * 8;
        bad_label[label_off..label_off + 4].copy_from_slice(&99u32.to_le_bytes());
        std::fs::write(&p, &bad_label).unwrap();
        assert!(matches!(read_embeddings_binary(&p), Err(Error::Parse { .. })));

        let mut trailing = good.clone();
        trailing.push(0);
        std::fs::write(&p, &trailing).unwrap();
        assert!(matches!(read_embeddings_binary(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn csv_round_trip_preserves_labels_and_values() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth_gaussian_mixture(3, 2, 10, 3, 5.0, &mut rng(9)).unwrap();
        let p = dir.path().join("d.csv");
        write_embeddings_csv(&ds, &p).unwrap();
        let back = read_embeddings_csv(&p, 6.0 / 7.0, 1).unwrap();
        assert_eq!(back.n_total(), ds.n_total());
        assert_eq!(back.dim(), 2);
        assert_eq!(back.labels(), ds.labels());
        assert_eq!(back.embeddings(), ds.embeddings());
        // CSV carries no split tags; the seeded fraction decides them.
        assert_eq!(back.split_indices(Split::Train).len(), 33); // round(39·6/7)
    }

    #[test]
    fn csv_reader_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");

        std::fs::write(&p, "label,z0,z1\n0,1.0,2.0\n1,oops,3.0\n").unwrap();
        match read_embeddings_csv(&p, 0.5, 0).unwrap_err() {
            Error::Parse { location, .. } => assert_eq!(location, "line 3"),
            other => panic!("expected parse error, got {other:?}"),
        }

        std::fs::write(&p, "id,z0\n0,1.0\n").unwrap();
        match read_embeddings_csv(&p, 0.5, 0).unwrap_err() {
            Error::Parse { location, .. } => assert_eq!(location, "line 1"),
            other => panic!("expected parse error, got {other:?}"),
        }

        std::fs::write(&p, "label,z0\n0,1.0\n1\n").unwrap();
        assert!(matches!(read_embeddings_csv(&p, 0.5, 0), Err(Error::Parse { .. })));
    }

    #[test]
    fn csv_reader_example_shape() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("three.csv");
        std::fs::write(&p, "label,z0,z1\n0,0.5,-1\n1,2,3\n0,0,0\n").unwrap();
        let ds = read_embeddings_csv(&p, 0.5, 7).unwrap();
        assert_eq!(ds.n_total(), 3);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.n_classes(), 2);
        assert_eq!(ds.labels(), &[0, 1, 0]);
    }
}
