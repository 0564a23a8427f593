//! Gaussian-blob classification data, quantized to 8-bit pixels so it
//! shares the IDX path with real image data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::{ImageSet, Split};
use crate::error::{Error, Result};

/// Feature values in `[-QUANT_RANGE, QUANT_RANGE]` map linearly onto 0..=255.
pub const QUANT_RANGE: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(classes: usize, per_class: usize, dim: usize, seed: u64) -> Self {
        Self {
            classes,
            per_class,
            dim,
            sigma: 0.3,
            seed,
        }
    }

    /// Blob centres, uniform in `[-1, 1]^dim`. Shared by every split.
    pub fn means(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.classes)
            .map(|_| (0..self.dim).map(|_| rng.random_range(-1.0..=1.0)).collect())
            .collect()
    }
}

pub fn quantize(x: f64) -> u8 {
    let unit = (x + QUANT_RANGE) / (2.0 * QUANT_RANGE);
    (unit * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Samples one split; train and test draw from the same blobs with
/// independent noise. Rows are grouped by class.
pub fn gen_synthetic_split(spec: &SyntheticSpec, split: Split) -> Result<ImageSet> {
    if spec.classes < 2 || spec.classes > 256 {
        return Err(Error::Config(format!("synthetic classes must be in 2..=256, got {}", spec.classes)));
    }
    if spec.dim == 0 || spec.per_class == 0 {
        return Err(Error::Config("synthetic dim and per_class must be positive".into()));
    }
    if !(spec.sigma >= 0.0) {
        return Err(Error::Config(format!("synthetic sigma must be >= 0, got {}", spec.sigma)));
    }
    let means = spec.means();
    let stream = match split {
        Split::Train => 1,
        Split::Test => 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let noise = Normal::new(0.0, spec.sigma).map_err(|e| Error::Config(e.to_string()))?;
    let n = spec.classes * spec.per_class;
    let mut pixels = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for (class, mean) in means.iter().enumerate() {
        for _ in 0..spec.per_class {
            pixels.extend(mean.iter().map(|&m| quantize(m + noise.sample(&mut rng))));
            labels.push(class as u8);
        }
    }
    ImageSet::new(1, spec.dim, pixels, labels, spec.classes)
}

/// Training split of [`gen_synthetic_split`].
pub fn gen_synthetic(classes: usize, per_class: usize, dim: usize, seed: u64) -> Result<ImageSet> {
    gen_synthetic_split(&SyntheticSpec::new(classes, per_class, dim, seed), Split::Train)
}
