//! Datasets for binary classification: CSV and IDX loaders, z-score
//! standardization, synthetic generators and the per-node stream partition.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::learner::Label;
use crate::rng::{stream, Purpose};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Open {
        path: String,
        source: std::io::Error,
    },
    #[error("dataset is empty")]
    Empty,
    #[error("line {line}: {msg}")]
    Malformed { line: u64, msg: String },
    #[error("label column has more than two distinct values (third value {0})")]
    TooManyClasses(f64),
    #[error("non-finite feature at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("IDX file {file}: {msg}")]
    Idx { file: &'static str, msg: String },
    #[error("cannot partition {n} samples across {nodes} nodes")]
    TooFewSamples { n: usize, nodes: usize },
    #[error("invalid generator parameters: {0}")]
    InvalidParameters(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `n × d` feature matrix (row-major) with `±1` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub provenance: String,
    input_dim: usize,
    features: Vec<f64>,
    labels: Vec<Label>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        provenance: impl Into<String>,
        input_dim: usize,
        features: Vec<f64>,
        labels: Vec<Label>,
    ) -> Result<Self, DataError> {
        if labels.is_empty() || input_dim == 0 {
            return Err(DataError::Empty);
        }
        if features.len() != labels.len() * input_dim {
            return Err(DataError::InvalidParameters(format!(
                "{} feature values do not form {} rows of width {input_dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite {
                row: pos / input_dim,
                col: pos % input_dim,
            });
        }
        Ok(Dataset {
            name: name.into(),
            provenance: provenance.into(),
            input_dim,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn label(&self, i: usize) -> Label {
        self.labels[i]
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.input_dim)
    }

    /// Per-column mean and population variance.
    pub fn column_moments(&self) -> Vec<(f64, f64)> {
        let n = self.len() as f64;
        (0..self.input_dim)
            .map(|c| {
                let mean = self.rows().map(|r| r[c]).sum::<f64>() / n;
                let var = self.rows().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
                (mean, var)
            })
            .collect()
    }

    /// Z-scores every column in place. Constant columns become 0.
    pub fn standardize(&mut self) {
        let moments = self.column_moments();
        let d = self.input_dim;
        for row in self.features.chunks_exact_mut(d) {
            for (v, &(mean, var)) in row.iter_mut().zip(&moments) {
                *v = if var > f64::EPSILON * f64::EPSILON * (1.0 + mean * mean) {
                    (*v - mean) / var.sqrt()
                } else {
                    0.0
                };
            }
        }
    }

    pub fn standardized(mut self) -> Self {
        self.standardize();
        self
    }

    /// Appends `other` (same width) after `self`.
    pub fn concat(mut self, other: Dataset) -> Result<Self, DataError> {
        if other.input_dim != self.input_dim {
            return Err(DataError::InvalidParameters(format!(
                "cannot concatenate widths {} and {}",
                self.input_dim, other.input_dim
            )));
        }
        self.features.extend(other.features);
        self.labels.extend(other.labels);
        Ok(self)
    }
}

fn open(path: &Path) -> Result<File, DataError> {
    File::open(path).map_err(|source| DataError::Open {
        path: path.display().to_string(),
        source,
    })
}

struct NumericTable {
    header: Option<Vec<String>>,
    rows: Vec<Vec<f64>>,
}

/// Reads comma-separated numeric rows. Leading rows that are not entirely
/// numeric (up to `max_header_rows`) are treated as headers; the last one is
/// kept. Any later non-numeric or ragged row is an error.
fn read_numeric_csv<R: Read>(reader: R, max_header_rows: usize) -> Result<NumericTable, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut header = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = record.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(values) => {
                let w = *width.get_or_insert(values.len());
                if values.len() != w {
                    return Err(DataError::Malformed {
                        line,
                        msg: format!("expected {w} fields, found {}", values.len()),
                    });
                }
                if let Some(col) = values.iter().position(|v| !v.is_finite()) {
                    return Err(DataError::Malformed {
                        line,
                        msg: format!("non-finite value in column {col}"),
                    });
                }
                rows.push(values);
            }
            Err(_) if rows.is_empty() && line as usize <= max_header_rows => {
                header = Some(record.iter().map(str::to_string).collect());
            }
            Err(e) => {
                return Err(DataError::Malformed {
                    line,
                    msg: format!("non-numeric field: {e}"),
                })
            }
        }
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(NumericTable { header, rows })
}

/// Maps raw label values onto `±1`. Values already in `{−1, +1}` are kept;
/// otherwise the first distinct value seen becomes `+1` and the second `−1`.
pub fn remap_labels(raw: &[f64]) -> Result<Vec<Label>, DataError> {
    if raw.iter().all(|&v| v == 1.0 || v == -1.0) {
        let labels: Vec<Label> = raw.iter().map(|&v| if v == 1.0 { Label::Pos } else { Label::Neg }).collect();
        return Ok(labels);
    }
    let mut seen: Vec<f64> = Vec::with_capacity(2);
    let mut out = Vec::with_capacity(raw.len());
    for &v in raw {
        let idx = match seen.iter().position(|&s| s == v) {
            Some(i) => i,
            None if seen.len() < 2 => {
                seen.push(v);
                seen.len() - 1
            }
            None => return Err(DataError::TooManyClasses(v)),
        };
        out.push(if idx == 0 { Label::Pos } else { Label::Neg });
    }
    Ok(out)
}

fn table_to_dataset(
    name: &str,
    provenance: String,
    rows: Vec<Vec<f64>>,
    feature_cols: std::ops::Range<usize>,
    labels: Vec<Label>,
) -> Result<Dataset, DataError> {
    let d = feature_cols.len();
    let features: Vec<f64> = rows.iter().flat_map(|r| r[feature_cols.clone()].iter().copied()).collect();
    Dataset::new(name, provenance, d, features, labels)
}

/// Banana-style CSV: feature columns followed by one label column, optional
/// header row.
pub fn read_banana<R: Read>(reader: R, provenance: String) -> Result<Dataset, DataError> {
    let table = read_numeric_csv(reader, 1)?;
    let width = table.rows[0].len();
    if width < 2 {
        return Err(DataError::Malformed {
            line: 1,
            msg: "need at least one feature column and a label column".into(),
        });
    }
    let raw: Vec<f64> = table.rows.iter().map(|r| r[width - 1]).collect();
    let labels = remap_labels(&raw)?;
    table_to_dataset("banana", provenance, table.rows, 0..width - 1, labels)
}

pub fn load_banana(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    read_banana(BufReader::new(open(path)?), path.display().to_string())
}

/// Credit-card default CSV: optional header rows (up to two), an optional
/// leading `ID` column, numeric attributes and a final 0/1 default flag
/// (`1` → `+1`).
pub fn read_credit_card<R: Read>(reader: R, provenance: String) -> Result<Dataset, DataError> {
    let table = read_numeric_csv(reader, 2)?;
    let width = table.rows[0].len();
    if width < 2 {
        return Err(DataError::Malformed {
            line: 1,
            msg: "need at least one feature column and a label column".into(),
        });
    }
    let has_id = match &table.header {
        Some(h) => h.first().is_some_and(|f| f.eq_ignore_ascii_case("id")),
        None => table.rows.iter().enumerate().all(|(i, r)| r[0] == (i + 1) as f64),
    };
    let first = usize::from(has_id && width > 2);
    let mut labels = Vec::with_capacity(table.rows.len());
    for (i, r) in table.rows.iter().enumerate() {
        labels.push(match r[width - 1] {
            v if v == 1.0 => Label::Pos,
            v if v == 0.0 || v == -1.0 => Label::Neg,
            v => {
                return Err(DataError::Malformed {
                    line: i as u64 + 1,
                    msg: format!("default flag must be 0 or 1, got {v}"),
                })
            }
        });
    }
    table_to_dataset("credit_card", provenance, table.rows, first..width - 1, labels)
}

pub fn load_credit_card(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    read_credit_card(BufReader::new(open(path)?), path.display().to_string())
}

fn read_u32_be<R: Read>(r: &mut R, file: &'static str) -> Result<u32, DataError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| DataError::Idx {
        file,
        msg: "truncated header".into(),
    })?;
    Ok(u32::from_be_bytes(b))
}

/// Parses an IDX image/label pair. Pixels are scaled to `[0, 1]`; digit 8
/// maps to `+1`, every other digit to `−1`.
pub fn read_mnist<A: Read, B: Read>(mut images: A, mut labels: B, provenance: String) -> Result<Dataset, DataError> {
    let magic = read_u32_be(&mut images, "images")?;
    if magic != 2051 {
        return Err(DataError::Idx {
            file: "images",
            msg: format!("bad magic number {magic}, expected 2051"),
        });
    }
    let n = read_u32_be(&mut images, "images")? as usize;
    let rows = read_u32_be(&mut images, "images")? as usize;
    let cols = read_u32_be(&mut images, "images")? as usize;
    let magic = read_u32_be(&mut labels, "labels")?;
    if magic != 2049 {
        return Err(DataError::Idx {
            file: "labels",
            msg: format!("bad magic number {magic}, expected 2049"),
        });
    }
    let n_labels = read_u32_be(&mut labels, "labels")? as usize;
    if n_labels != n {
        return Err(DataError::Idx {
            file: "labels",
            msg: format!("{n_labels} labels for {n} images"),
        });
    }
    let d = rows * cols;
    let mut pixels = vec![0u8; n * d];
    images.read_exact(&mut pixels).map_err(|_| DataError::Idx {
        file: "images",
        msg: format!("truncated payload, expected {} bytes", n * d),
    })?;
    let mut digits = vec![0u8; n];
    labels.read_exact(&mut digits).map_err(|_| DataError::Idx {
        file: "labels",
        msg: format!("truncated payload, expected {n} bytes"),
    })?;
    let features = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let labels = digits.iter().map(|&dg| if dg == 8 { Label::Pos } else { Label::Neg }).collect();
    Dataset::new("mnist", provenance, d, features, labels)
}

pub fn load_mnist(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    read_mnist(
        BufReader::new(open(ip)?),
        BufReader::new(open(lp)?),
        format!("{} + {}", ip.display(), lp.display()),
    )
}

fn shuffled_pairs<R: Rng>(mut rows: Vec<(Vec<f64>, Label)>, rng: &mut R) -> (Vec<f64>, Vec<Label>) {
    rows.shuffle(rng);
    let labels = rows.iter().map(|(_, y)| *y).collect();
    let features = rows.into_iter().flat_map(|(x, _)| x).collect();
    (features, labels)
}

/// Two unit-variance Gaussian clusters of `n/2` points each, centred at
/// `±(separation/2)·e₁`.
pub fn make_synthetic(n: usize, d: usize, separation: f64, seed: u64) -> Result<Dataset, DataError> {
    if n == 0 || n % 2 != 0 || d == 0 {
        return Err(DataError::InvalidParameters(format!(
            "need an even positive sample count and positive dimension (n = {n}, d = {d})"
        )));
    }
    let mut rng = stream(seed, Purpose::Synthetic, &[0]);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i < n / 2 { Label::Pos } else { Label::Neg };
        let mut x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        x[0] += label.sign() * separation / 2.0;
        rows.push((x, label));
    }
    let (features, labels) = shuffled_pairs(rows, &mut rng);
    Dataset::new(
        "synthetic",
        format!("two Gaussian clusters, separation {separation}, seed {seed}"),
        d,
        features,
        labels,
    )
}

/// Two interleaved half-moons in the plane with isotropic Gaussian noise; a
/// stand-in with the same shape class as the Banana benchmark.
pub fn make_banana(n: usize, noise: f64, seed: u64) -> Result<Dataset, DataError> {
    if n == 0 || n % 2 != 0 || !(noise >= 0.0) {
        return Err(DataError::InvalidParameters(format!(
            "need an even positive sample count and nonnegative noise (n = {n}, noise = {noise})"
        )));
    }
    let mut rng = stream(seed, Purpose::Synthetic, &[1]);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let t = rng.random::<f64>() * std::f64::consts::PI;
        let (label, mut x) = if i < n / 2 {
            (Label::Pos, vec![t.cos(), t.sin()])
        } else {
            (Label::Neg, vec![1.0 - t.cos(), 0.5 - t.sin()])
        };
        for v in &mut x {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v += noise * e;
        }
        rows.push((x, label));
    }
    let (features, labels) = shuffled_pairs(rows, &mut rng);
    Dataset::new(
        "banana_synthetic",
        format!("two half-moons, noise {noise}, seed {seed}"),
        2,
        features,
        labels,
    )
}

/// `J` disjoint sample streams of equal length `T = ⌊n/J⌋`: one global shuffle,
/// then round `t` hands shuffled sample `t·J + j` to node `j`.
#[derive(Debug, Clone)]
pub struct Partition {
    dataset: Arc<Dataset>,
    streams: Vec<Vec<usize>>,
}

impl Partition {
    pub fn new(dataset: Arc<Dataset>, nodes: usize, seed: u64) -> Result<Self, DataError> {
        let n = dataset.len();
        if nodes == 0 || n < nodes {
            return Err(DataError::TooFewSamples { n, nodes });
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(seed, Purpose::Shuffle, &[]));
        let rounds = n / nodes;
        let streams = (0..nodes)
            .map(|j| (0..rounds).map(|t| order[t * nodes + j]).collect())
            .collect();
        Ok(Partition { dataset, streams })
    }

    pub fn nodes(&self) -> usize {
        self.streams.len()
    }

    /// Stream length `T`.
    pub fn rounds(&self) -> usize {
        self.streams.first().map_or(0, Vec::len)
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    /// Dataset indices assigned to node `j`, in round order.
    pub fn stream(&self, j: usize) -> &[usize] {
        &self.streams[j]
    }

    pub fn sample(&self, node: usize, round: usize) -> (&[f64], Label) {
        let i = self.streams[node][round];
        (self.dataset.row(i), self.dataset.label(i))
    }
}

pub fn partition(dataset: Arc<Dataset>, nodes: usize, seed: u64) -> Result<Partition, DataError> {
    Partition::new(dataset, nodes, seed)
}
