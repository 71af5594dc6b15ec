//! Flow records, feature normalization and receiver-keyed sequencing.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};
use crate::math::{sqrt, Matrix};

/// Floor applied to every fitted standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

/// Default number of flows per sequence.
pub const DEFAULT_SEQ_LEN: usize = 30;

/// One network flow.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FlowRecord {
    /// Seconds since the epoch.
    pub ts: f64,
    pub src: String,
    /// Receiver key.
    pub dst: String,
    pub features: Vec<f64>,
}

impl FlowRecord {
    pub fn new(ts: f64, src: impl Into<String>, dst: impl Into<String>, features: Vec<f64>) -> Self {
        Self {
            ts,
            src: src.into(),
            dst: dst.into(),
            features,
        }
    }
}

/// Ordered feature-column names of one domain.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeatureSchema {
    names: Vec<String>,
}

impl FeatureSchema {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Empty("feature schema"));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::Duplicate(n.clone()));
            }
        }
        Ok(Self { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }
}

/// Ground-truth or predicted class of a flow or sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Label {
    Benign,
    Anomalous,
}

impl Label {
    pub fn is_anomalous(self) -> bool {
        matches!(self, Label::Anomalous)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Benign => "benign",
            Label::Anomalous => "anomalous",
        }
    }
}

/// Per-feature z-score statistics.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// A normalizer that leaves features unchanged.
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        check_dim("normalizer std", self.mean.len(), self.std.len())?;
        if self.std.iter().any(|s| !(*s >= STD_FLOOR) || !s.is_finite()) {
            return Err(Error::InvalidConfig("normalizer std below floor".into()));
        }
        Ok(())
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for ((o, v), (m, s)) in out.iter_mut().zip(x).zip(self.mean.iter().zip(&self.std)) {
            *o = (v - m) / s;
        }
    }
}

/// Fits per-feature mean and (population) standard deviation.
pub fn fit_normalizer(flows: &[FlowRecord]) -> Result<Normalizer> {
    if flows.len() < 2 {
        return Err(Error::TooFewFlows(flows.len()));
    }
    let dim = flows[0].features.len();
    let mut mean = vec![0.0; dim];
    let mut m2 = vec![0.0; dim];
    // Welford update per feature.
    for (n, f) in flows.iter().enumerate() {
        check_dim("flow features", dim, f.features.len())?;
        let k = (n + 1) as f64;
        for j in 0..dim {
            let x = f.features[j];
            let delta = x - mean[j];
            mean[j] += delta / k;
            m2[j] += delta * (x - mean[j]);
        }
    }
    let n = flows.len() as f64;
    let std = m2.iter().map(|v| sqrt((v / n).max(0.0)).max(STD_FLOOR)).collect();
    Ok(Normalizer { mean, std })
}

/// A fixed-length window of normalized flow features for one receiver.
///
/// Valid rows (`mask[i] == true`) are contiguous from index 0; padded rows
/// are all zero.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Sequence {
    pub receiver: String,
    pub start_ts: f64,
    pub data: Matrix,
    pub mask: Vec<bool>,
    pub label: Option<Label>,
}

impl Sequence {
    /// Sequence with every row valid.
    pub fn full(receiver: impl Into<String>, start_ts: f64, data: Matrix) -> Self {
        let mask = vec![true; data.rows()];
        Self {
            receiver: receiver.into(),
            start_ts,
            data,
            mask,
            label: None,
        }
    }

    pub fn seq_len(&self) -> usize {
        self.data.rows()
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    /// Number of leading valid rows.
    pub fn valid_len(&self) -> usize {
        self.mask.iter().take_while(|m| **m).count()
    }
}

/// Indices (into the input flow list) making up one sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub receiver: String,
    pub rows: Vec<usize>,
}

/// Partitions flows into per-receiver, time-ordered, non-overlapping windows
/// of at most `seq_len` flows. Receivers are emitted in lexicographic order;
/// equal timestamps keep input order.
pub fn receiver_windows(flows: &[FlowRecord], seq_len: usize) -> Result<Vec<Window>> {
    if seq_len == 0 {
        return Err(Error::InvalidConfig("sequence length must be positive".into()));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, f) in flows.iter().enumerate() {
        groups.entry(f.dst.as_str()).or_default().push(i);
    }
    let mut windows = Vec::new();
    for (receiver, mut idx) in groups {
        // stable: ties stay in input order
        idx.sort_by(|&a, &b| flows[a].ts.total_cmp(&flows[b].ts));
        for chunk in idx.chunks(seq_len) {
            windows.push(Window {
                receiver: receiver.into(),
                rows: chunk.to_vec(),
            });
        }
    }
    Ok(windows)
}

/// Materializes windows into normalized, zero-padded sequences.
pub fn sequences_from_windows(
    flows: &[FlowRecord],
    windows: &[Window],
    normalizer: &Normalizer,
    seq_len: usize,
) -> Result<Vec<Sequence>> {
    let dim = normalizer.dim();
    windows
        .iter()
        .map(|w| {
            let mut data = Matrix::zeros(seq_len, dim);
            let mut mask = vec![false; seq_len];
            if w.rows.len() > seq_len {
                return Err(Error::DimensionMismatch {
                    context: "window length",
                    expected: seq_len,
                    actual: w.rows.len(),
                });
            }
            for (r, &i) in w.rows.iter().enumerate() {
                check_dim("flow features", dim, flows[i].features.len())?;
                normalizer.apply_into(&flows[i].features, data.row_mut(r));
                mask[r] = true;
            }
            let start_ts = w.rows.first().map_or(0.0, |&i| flows[i].ts);
            Ok(Sequence {
                receiver: w.receiver.clone(),
                start_ts,
                data,
                mask,
                label: None,
            })
        })
        .collect()
}

/// Groups flows by receiver, orders them by timestamp and cuts them into
/// zero-padded windows of `seq_len` normalized rows.
pub fn build_sequences(
    flows: &[FlowRecord],
    normalizer: &Normalizer,
    seq_len: usize,
) -> Result<Vec<Sequence>> {
    let windows = receiver_windows(flows, seq_len)?;
    sequences_from_windows(flows, &windows, normalizer, seq_len)
}

/// A window is anomalous when any of its flows is.
pub fn window_labels(windows: &[Window], flow_labels: &[Label]) -> Vec<Label> {
    windows
        .iter()
        .map(|w| {
            if w.rows.iter().any(|&i| flow_labels[i].is_anomalous()) {
                Label::Anomalous
            } else {
                Label::Benign
            }
        })
        .collect()
}
