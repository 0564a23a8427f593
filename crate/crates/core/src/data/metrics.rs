//! Per-epoch metrics CSV.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of `metrics.csv`. `split` is `train`, `test`, or `mask` (a mask
/// refresh event); fields that do not apply to a row are left empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub iteration: u64,
    pub split: String,
    pub loss: Option<f64>,
    pub accuracy: Option<f64>,
    #[serde(rename = "P_c")]
    pub ratio: f64,
    pub actual_sparsity: f64,
    pub mask_change_ratio: Option<f64>,
    pub lr: f64,
}

pub const HEADER: [&str; 9] = [
    "epoch",
    "iteration",
    "split",
    "loss",
    "accuracy",
    "P_c",
    "actual_sparsity",
    "mask_change_ratio",
    "lr",
];

pub fn encode_metrics(rows: &[MetricRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(HEADER).map_err(|e| Error::Metrics(e.to_string()))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::Metrics(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Metrics(e.to_string()))
}

pub fn write_metrics(path: impl AsRef<Path>, rows: &[MetricRow]) -> Result<()> {
    crate::io::write_atomic(path.as_ref(), &encode_metrics(rows)?)
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::Metrics(format!("{}: {e}", path.display())))?;
    let header = r
        .headers()
        .map_err(|e| Error::Metrics(format!("{}: {e}", path.display())))?;
    if header.iter().ne(HEADER) {
        return Err(Error::Metrics(format!(
            "{}: unexpected header {:?}",
            path.display(),
            header
        )));
    }
    r.deserialize()
        .collect::<std::result::Result<Vec<MetricRow>, _>>()
        .map_err(|e| Error::Metrics(format!("{}: {e}", path.display())))
}
