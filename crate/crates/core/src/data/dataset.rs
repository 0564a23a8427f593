use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::idx::{parse_idx, IdxData};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Raw 8-bit images with their labels, as stored in IDX files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageSet {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
    pub classes: usize,
}

impl ImageSet {
    pub fn new(rows: usize, cols: usize, pixels: Vec<u8>, labels: Vec<u8>, classes: usize) -> Result<Self> {
        if pixels.len() != labels.len() * rows * cols {
            return Err(Error::Idx(format!(
                "{} pixels do not fit {} images of {rows}×{cols}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::LabelOutOfRange {
                label: l as usize,
                classes,
            });
        }
        Ok(Self {
            rows,
            cols,
            pixels,
            labels,
            classes,
        })
    }

    /// Loads a pair of IDX files. The class count is one past the largest label
    /// unless given.
    pub fn load(images: impl AsRef<Path>, labels: impl AsRef<Path>, classes: Option<usize>) -> Result<Self> {
        let (count, rows, cols, pixels) = match parse_idx(images)? {
            IdxData::Images {
                count,
                rows,
                cols,
                pixels,
            } => (count, rows, cols, pixels),
            IdxData::Labels(_) => return Err(Error::Idx("expected an image file, found labels".into())),
        };
        let labels = match parse_idx(labels)? {
            IdxData::Labels(l) => l,
            IdxData::Images { .. } => return Err(Error::Idx("expected a label file, found images".into())),
        };
        if labels.len() != count {
            return Err(Error::Idx(format!("{count} images but {} labels", labels.len())));
        }
        let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(0, |&m| m as usize + 1));
        Self::new(rows, cols, pixels, labels, classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows * self.cols
    }

    /// First `n` examples (or all when fewer).
    pub fn truncate(mut self, n: usize) -> Self {
        let n = n.min(self.len());
        self.labels.truncate(n);
        self.pixels.truncate(n * self.dim());
        self
    }

    pub fn to_idx(&self) -> (IdxData, IdxData) {
        (
            IdxData::Images {
                count: self.len(),
                rows: self.rows,
                cols: self.cols,
                pixels: self.pixels.clone(),
            },
            IdxData::Labels(self.labels.clone()),
        )
    }
}

/// Scalar mean and standard deviation of `[0, 1]`-scaled pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
}

impl Standardization {
    pub fn fit(set: &ImageSet) -> Self {
        let n = set.pixels.len().max(1) as f64;
        let mean = set.pixels.iter().map(|&p| p as f64 / 255.0).sum::<f64>() / n;
        let var = set
            .pixels
            .iter()
            .map(|&p| (p as f64 / 255.0 - mean).powi(2))
            .sum::<f64>()
            / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
    pub norm: Standardization,
}

impl<T: Scalar> Dataset<T> {
    pub fn from_images(set: &ImageSet, split: Split, norm: Standardization) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let data = set
            .pixels
            .iter()
            .map(|&p| T::from_f64((p as f64 / 255.0 - norm.mean) / norm.std))
            .collect();
        Ok(Self {
            images: Tensor::new(vec![set.len(), set.dim()], data)?,
            labels: set.labels.iter().map(|&l| l as usize).collect(),
            classes: set.classes,
            split,
            norm,
        })
    }

    /// Standardized train and test sets; statistics come from `train` only.
    pub fn pair(train: &ImageSet, test: &ImageSet) -> Result<(Self, Self)> {
        if train.dim() != test.dim() {
            return Err(Error::Idx(format!(
                "train images have {} features, test images {}",
                train.dim(),
                test.dim()
            )));
        }
        let norm = Standardization::fit(train);
        let classes = train.classes.max(test.classes);
        let mut tr = Self::from_images(train, Split::Train, norm)?;
        let mut te = Self::from_images(test, Split::Test, norm)?;
        tr.classes = classes;
        te.classes = classes;
        Ok((tr, te))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.images.shape()[1]
    }

    /// Copies the given rows into a batch tensor.
    pub fn gather(&self, rows: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let d = self.dim();
        let src = self.images.data();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            data.extend_from_slice(&src[r * d..(r + 1) * d]);
        }
        let labels = rows.iter().map(|&r| self.labels[r]).collect();
        (Tensor::new(vec![rows.len(), d], data).expect("batch shape"), labels)
    }
}

/// Row indices of every batch of one epoch. The permutation is seeded by
/// `run_seed ^ epoch`; the final partial batch is kept.
pub fn batch_indices(n: usize, batch_size: usize, run_seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed ^ epoch);
    order.shuffle(&mut rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

pub fn batches<'a, T: Scalar>(
    ds: &'a Dataset<T>,
    batch_size: usize,
    run_seed: u64,
    epoch: u64,
) -> impl Iterator<Item = (Tensor<T>, Vec<usize>)> + 'a {
    batch_indices(ds.len(), batch_size, run_seed, epoch)
        .into_iter()
        .map(move |rows| ds.gather(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize) -> Dataset<f64> {
        let pixels: Vec<u8> = (0..n * 2).map(|i| (i * 7 % 256) as u8).collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 3) as u8).collect();
        let set = ImageSet::new(1, 2, pixels, labels, 3).unwrap();
        Dataset::from_images(&set, Split::Train, Standardization::fit(&set)).unwrap()
    }

    #[test]
    fn batch_sizes_keep_partial() {
        let sizes: Vec<usize> = batch_indices(10, 4, 1, 0).iter().map(Vec::len).collect();
        assert_eq!(sizes, [4, 4, 2]);
    }

    #[test]
    fn batches_partition_the_dataset() {
        let ds = tiny(11);
        let mut seen: Vec<usize> = batch_indices(11, 3, 5, 2).concat();
        seen.sort_unstable();
        assert_eq!(seen, (0..11).collect::<Vec<_>>());
        let mut labels: Vec<usize> = batches(&ds, 3, 5, 2).flat_map(|(_, l)| l).collect();
        let mut expected = ds.labels.clone();
        labels.sort_unstable();
        expected.sort_unstable();
        assert_eq!(labels, expected);
    }

    #[test]
    fn epochs_reshuffle_deterministically() {
        assert_eq!(batch_indices(50, 8, 3, 1), batch_indices(50, 8, 3, 1));
        assert_ne!(batch_indices(50, 8, 3, 1), batch_indices(50, 8, 3, 2));
    }

    #[test]
    fn standardization_uses_train_stats() {
        let train = ImageSet::new(1, 2, vec![0, 255, 0, 255], vec![0, 1], 2).unwrap();
        let test = ImageSet::new(1, 2, vec![255, 255], vec![1], 2).unwrap();
        let (tr, te) = Dataset::<f64>::pair(&train, &test).unwrap();
        assert_eq!(tr.norm, te.norm);
        assert_eq!(tr.norm.mean, 0.5);
        assert_eq!(tr.norm.std, 0.5);
        assert_eq!(te.images.data(), &[1.0, 1.0]);
        assert_eq!(tr.images.data(), &[-1.0, 1.0, -1.0, 1.0]);
    }

    #[test]
    fn rejects_out_of_range_labels() {
        assert!(ImageSet::new(1, 1, vec![0, 0], vec![0, 5], 3).is_err());
    }
}
