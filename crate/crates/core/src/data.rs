//! Dataset loading and saving, binarization, and a synthetic generator with
//! selection-bias-induced feature correlations and ground-truth labels.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{DckmError, Result};
use crate::types::DataMatrix;

/// Name of the label column written by [`save_dataset`].
pub const LABEL_COLUMN: &str = "label";

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub x: DataMatrix,
    pub labels: Option<Vec<usize>>,
    pub feature_names: Option<Vec<String>>,
    /// Ordered key/value record of how the dataset was produced.
    pub provenance: Vec<(String, String)>,
}

impl LabeledDataset {
    pub fn n_classes(&self) -> Option<usize> {
        self.labels.as_ref().map(|l| l.iter().max().map_or(0, |m| m + 1))
    }
}

/// Which CSV column holds the labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
}

impl LabelColumn {
    /// A purely numeric argument is an index unless the header has a column
    /// of that name; anything else is a name.
    pub fn parse(s: &str) -> Self {
        match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        }
    }
}

fn parse_label(cell: &str) -> Option<usize> {
    if let Ok(v) = cell.parse::<usize>() {
        return Some(v);
    }
    let v: f64 = cell.parse().ok()?;
    (v >= 0.0 && v.fract() == 0.0 && v < usize::MAX as f64).then_some(v as usize)
}

/// Reads a numeric CSV. A first row containing any non-numeric cell is taken
/// as the header.
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&LabelColumn>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let csv_err = |source| DckmError::Csv { path: path.to_path_buf(), source };
    let parse_err = |line: u64, msg: String| DckmError::Parse { path: path.to_path_buf(), line, msg };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;

    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        records.push((line, rec));
    }
    if records.is_empty() {
        return Err(parse_err(1, "file is empty".into()));
    }

    let header = if records[0].1.iter().any(|c| c.parse::<f64>().is_err()) {
        let (_, h) = records.remove(0);
        Some(h.iter().map(str::to_string).collect::<Vec<_>>())
    } else {
        None
    };

    let width = header.as_ref().map_or_else(|| records.first().map_or(0, |r| r.1.len()), Vec::len);
    let label_idx = match label_column {
        None => None,
        Some(col) => {
            let by_name = |name: &str| header.as_ref().and_then(|h| h.iter().position(|c| c == name));
            let idx = match col {
                LabelColumn::Name(name) => by_name(name),
                LabelColumn::Index(i) => by_name(&i.to_string()).or((*i < width).then_some(*i)),
            };
            Some(idx.ok_or_else(|| parse_err(1, format!("label column {col:?} not found")))?)
        }
    };

    let d = width - usize::from(label_idx.is_some());
    let mut values = Vec::with_capacity(records.len() * d);
    let mut labels = label_idx.map(|_| Vec::with_capacity(records.len()));
    for (line, rec) in &records {
        if rec.len() != width {
            return Err(parse_err(*line, format!("expected {width} fields, found {}", rec.len())));
        }
        for (j, cell) in rec.iter().enumerate() {
            if Some(j) == label_idx {
                let l = parse_label(cell).ok_or_else(|| parse_err(*line, format!("invalid label {cell:?}")))?;
                labels.as_mut().expect("label column present").push(l);
            } else {
                let v: f64 =
                    cell.parse().map_err(|_| parse_err(*line, format!("column {j}: non-numeric value {cell:?}")))?;
                values.push(v);
            }
        }
    }
    let x = Array2::from_shape_vec((records.len(), d), values).map_err(|e| DckmError::InvalidShape(e.to_string()))?;
    let feature_names = header
        .map(|h| h.into_iter().enumerate().filter(|(j, _)| Some(*j) != label_idx).map(|(_, name)| name).collect());
    let mut provenance = vec![("source".to_string(), path.display().to_string())];
    if let Some(col) = label_column {
        provenance.push(("label_column".to_string(), format!("{col:?}")));
    }
    Ok(LabeledDataset { x: DataMatrix::new(x)?, labels, feature_names, provenance })
}

/// Writes a CSV with a header row and, when labels are present, a trailing
/// `label` column. Values use the shortest representation that parses back
/// to the same `f64`.
pub fn save_dataset(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| DckmError::Io { path: path.to_path_buf(), source };
    let file = File::create(path).map_err(io_err)?;
    let mut out = BufWriter::new(file);

    let d = ds.x.d();
    let mut header: Vec<String> = match &ds.feature_names {
        Some(names) if names.len() == d => names.clone(),
        _ => (0..d).map(|j| format!("f{j}")).collect(),
    };
    if ds.labels.is_some() {
        header.push(LABEL_COLUMN.to_string());
    }
    writeln!(out, "{}", header.join(",")).map_err(io_err)?;
    for (i, row) in ds.x.view().rows().into_iter().enumerate() {
        let mut line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        if let Some(labels) = &ds.labels {
            line.push(labels[i].to_string());
        }
        writeln!(out, "{}", line.join(",")).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// How one input column was turned into binary columns.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnBinning {
    /// Already 0/1; copied unchanged.
    PassThrough,
    /// Equal-frequency bins. A value `v` lands in bin
    /// `#{edges e : e < v}`.
    Quantile { edges: Vec<f64> },
    /// Fewer distinct values than requested bins: one bin per value.
    Distinct { edges: Vec<f64> },
    /// A single value; encoded as one all-ones column.
    Constant { value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinnedColumn {
    pub source: usize,
    pub binning: ColumnBinning,
    pub outputs: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinningMeta {
    pub columns: Vec<BinnedColumn>,
    pub warnings: Vec<String>,
}

fn quantile_edges(sorted: &[f64], bins: usize) -> Vec<f64> {
    let n = sorted.len();
    let max = sorted[n - 1];
    let mut edges: Vec<f64> = (1..bins).map(|b| sorted[(b * n).div_ceil(bins) - 1]).filter(|&e| e < max).collect();
    edges.dedup();
    edges
}

/// Binarizes every non-binary column into one-hot equal-frequency bins.
pub fn binarize(raw: ArrayView2<'_, f64>, bins: usize) -> Result<(DataMatrix, BinningMeta)> {
    if bins < 2 {
        return Err(DckmError::InvalidParam(format!("bins must be at least 2, got {bins}")));
    }
    let n = raw.nrows();
    let mut out_cols: Vec<Vec<f64>> = Vec::new();
    let mut columns = Vec::new();
    let mut warnings = Vec::new();

    for (j, col) in raw.columns().into_iter().enumerate() {
        if let Some(i) = col.iter().position(|v| !v.is_finite()) {
            return Err(DckmError::NonFinite { row: i, col: j });
        }
        let start = out_cols.len();
        let binning = if col.iter().all(|&v| v == 0.0 || v == 1.0) {
            out_cols.push(col.to_vec());
            ColumnBinning::PassThrough
        } else {
            let mut sorted = col.to_vec();
            sorted.sort_by(f64::total_cmp);
            let mut distinct = sorted.clone();
            distinct.dedup();
            let binning = if distinct.len() == 1 {
                warnings.push(format!("column {j} is constant; encoded as a single bin"));
                ColumnBinning::Constant { value: distinct[0] }
            } else if distinct.len() < bins {
                warnings.push(format!("column {j} has {} distinct values, fewer than {bins} bins", distinct.len()));
                ColumnBinning::Distinct { edges: distinct[..distinct.len() - 1].to_vec() }
            } else {
                ColumnBinning::Quantile { edges: quantile_edges(&sorted, bins) }
            };
            let edges: &[f64] = match &binning {
                ColumnBinning::Quantile { edges } | ColumnBinning::Distinct { edges } => edges,
                _ => &[],
            };
            let mut indicators = vec![vec![0.0; n]; edges.len() + 1];
            for (i, &v) in col.iter().enumerate() {
                let b = edges.partition_point(|&e| e < v);
                indicators[b][i] = 1.0;
            }
            out_cols.extend(indicators);
            binning
        };
        columns.push(BinnedColumn { source: j, binning, outputs: start..out_cols.len() });
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let d = out_cols.len();
    let x = Array2::from_shape_fn((n, d), |(i, j)| out_cols[j][i]);
    Ok((DataMatrix::new(x)?, BinningMeta { columns, warnings }))
}

/// Parameters of the synthetic selection-bias generator.
///
/// Column layout: `k * core_per_cluster` core features (block `c` belongs to
/// cluster `c`), then `bias_features` spurious features, then filler
/// features that are zero before noise. Bias feature `b` is linked to cluster
/// `b % k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasSpec {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub core_per_cluster: usize,
    pub bias_features: usize,
    /// Probability that a bias feature is on for samples of its linked
    /// cluster; `1 - bias_strength` for everyone else.
    ///
    /// The bias features of a sample share one context draw: with probability
    /// `bias_strength` the sample shows its own cluster's bias features and
    /// none of the others, otherwise the reverse. This is what makes the bias
    /// block a coherent competing structure rather than extra independent
    /// evidence for the true cluster.
    pub bias_strength: f64,
    /// Probability of flipping any bit after generation.
    pub noise_flip: f64,
    pub seed: u64,
}

impl BiasSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DckmError::InvalidParam(m));
        if self.n < 2 || self.d < 2 || self.k < 1 {
            return bad(format!("need n >= 2, d >= 2, k >= 1 (got n={}, d={}, k={})", self.n, self.d, self.k));
        }
        if self.k * self.core_per_cluster + self.bias_features > self.d {
            return bad(format!(
                "k * core_per_cluster + bias_features = {} exceeds d = {}",
                self.k * self.core_per_cluster + self.bias_features,
                self.d
            ));
        }
        if !(0.5..1.0).contains(&self.bias_strength) {
            return bad(format!("bias_strength must lie in [0.5, 1), got {}", self.bias_strength));
        }
        if !(0.0..0.5).contains(&self.noise_flip) {
            return bad(format!("noise_flip must lie in [0, 0.5), got {}", self.noise_flip));
        }
        Ok(())
    }

    pub fn bias_range(&self) -> Range<usize> {
        let start = self.k * self.core_per_cluster;
        start..start + self.bias_features
    }

    pub fn core_range(&self, cluster: usize) -> Range<usize> {
        cluster * self.core_per_cluster..(cluster + 1) * self.core_per_cluster
    }

    pub fn linked_cluster(&self, bias_feature: usize) -> usize {
        bias_feature % self.k
    }
}

/// Draws a labeled binary dataset from `spec`; identical specs give
/// identical datasets.
pub fn generate_biased(spec: &BiasSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels: Vec<usize> = (0..spec.n).map(|_| rng.random_range(0..spec.k)).collect();
    let mut x = Array2::<f64>::zeros((spec.n, spec.d));
    let bias = spec.bias_range();
    for (i, &c) in labels.iter().enumerate() {
        for j in spec.core_range(c) {
            x[[i, j]] = 1.0;
        }
        // One context draw per sample drives all of its bias features.
        let typical = rng.random::<f64>() < spec.bias_strength;
        for (b, j) in bias.clone().enumerate() {
            if (spec.linked_cluster(b) == c) == typical {
                x[[i, j]] = 1.0;
            }
        }
    }
    if spec.noise_flip > 0.0 {
        for v in x.iter_mut() {
            if rng.random_bool(spec.noise_flip) {
                *v = 1.0 - *v;
            }
        }
    }
    let feature_names = (0..spec.d)
        .map(|j| {
            if j < bias.start {
                format!("core{}_{}", j / spec.core_per_cluster.max(1), j % spec.core_per_cluster.max(1))
            } else if bias.contains(&j) {
                format!("bias{}", j - bias.start)
            } else {
                format!("fill{}", j - bias.end)
            }
        })
        .collect();
    let provenance = vec![
        ("generator".to_string(), "biased".to_string()),
        ("n".to_string(), spec.n.to_string()),
        ("d".to_string(), spec.d.to_string()),
        ("k".to_string(), spec.k.to_string()),
        ("core_per_cluster".to_string(), spec.core_per_cluster.to_string()),
        ("bias_features".to_string(), spec.bias_features.to_string()),
        ("bias_strength".to_string(), spec.bias_strength.to_string()),
        ("noise_flip".to_string(), spec.noise_flip.to_string()),
        ("seed".to_string(), spec.seed.to_string()),
    ];
    Ok(LabeledDataset { x: DataMatrix::new(x)?, labels: Some(labels), feature_names: Some(feature_names), provenance })
}
