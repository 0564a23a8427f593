//! Running, sweeping and analyzing training jobs.

pub mod analyze;
pub mod config;
pub mod sweep;
pub mod train;

use std::path::Path;

pub use analyze::{analyze, late_change_ratio, ExploitDelta, Report, RunAnalysis};
pub use config::{DataSource, RunConfig};
pub use sweep::{sweep, SweepAxis, SweepCell, SweepRow, SweepSpec};
pub use train::{load_data, load_images, resume, train, RunRecord, RunSummary, Trainer};

use crate::data::{gen_synthetic_split, write_idx, Split, SyntheticSpec};
use crate::error::Result;

/// File names written by [`gen_data`], in the usual MNIST layout.
pub const IDX_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// Writes a synthetic train/test pair as IDX files into `dir`.
pub fn gen_data(spec: &SyntheticSpec, test_per_class: usize, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let train = gen_synthetic_split(spec, Split::Train)?;
    let test = gen_synthetic_split(
        &SyntheticSpec {
            per_class: test_per_class,
            ..*spec
        },
        Split::Test,
    )?;
    for (set, files) in [(train, &IDX_FILES[..2]), (test, &IDX_FILES[2..])] {
        let (images, labels) = set.to_idx();
        write_idx(dir.join(files[0]), &images)?;
        write_idx(dir.join(files[1]), &labels)?;
    }
    Ok(())
}
