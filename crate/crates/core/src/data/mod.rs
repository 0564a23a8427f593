//! Dataset ingestion, batching, and on-disk formats.

pub mod checkpoint;
mod dataset;
pub mod idx;
pub mod metrics;
mod synthetic;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use dataset::{batch_indices, batches, Dataset, ImageSet, Split, Standardization};
pub use idx::{parse_idx, write_idx, IdxData};
pub use metrics::{read_metrics, write_metrics, MetricRow};
pub use synthetic::{gen_synthetic, gen_synthetic_split, quantize, SyntheticSpec};
