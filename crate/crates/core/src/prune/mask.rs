//! Global magnitude threshold and binary mask.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Number of weights pruned at ratio `ratio` out of `n`.
pub fn prune_count(ratio: f64, n: usize) -> usize {
    (ratio * n as f64).floor() as usize
}

fn check_ratio(ratio: f64) -> Result<()> {
    if (0.0..1.0).contains(&ratio) {
        Ok(())
    } else {
        Err(Error::Ratio(ratio))
    }
}

fn by_magnitude<T: Scalar>(weights: &[T]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&i, &j| {
        weights[i]
            .abs()
            .total_order(&weights[j].abs())
            .then(i.cmp(&j))
    }
}

/// Result of thresholding a weight vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Threshold<T> {
    /// Magnitude of the `pruned`-th smallest weight; zero when nothing is pruned.
    pub lambda: T,
    pub pruned: usize,
    /// 1 = kept, 0 = pruned.
    pub mask: Vec<u8>,
}

/// Prunes exactly `floor(ratio·n)` weights: the smallest under the
/// (magnitude, index) ordering, so ties go to the lowest index.
pub fn compute_threshold<T: Scalar>(weights: &[T], ratio: f64) -> Result<Threshold<T>> {
    check_ratio(ratio)?;
    if weights.is_empty() {
        return Err(Error::Length(0, 1));
    }
    let n = weights.len();
    let k = prune_count(ratio, n);
    let mut mask = vec![1u8; n];
    if k == 0 {
        return Ok(Threshold {
            lambda: T::zero(),
            pruned: 0,
            mask,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let cmp = by_magnitude(weights);
    order.select_nth_unstable_by(k - 1, &cmp);
    for &i in &order[..k] {
        mask[i] = 0;
    }
    Ok(Threshold {
        lambda: weights[order[k - 1]].abs(),
        pruned: k,
        mask,
    })
}

/// Mask refresh gated on the update period: recomputes on iterations that
/// are multiples of `freq` unless the structure is frozen, otherwise hands
/// back `prev` unchanged.
pub fn compute_mask<T: Scalar>(
    weights: &[T],
    ratio: f64,
    iteration: u64,
    freq: u64,
    frozen: bool,
    prev: &[u8],
) -> Result<Vec<u8>> {
    if prev.len() != weights.len() {
        return Err(Error::Length(prev.len(), weights.len()));
    }
    if frozen || iteration % freq.max(1) != 0 {
        return Ok(prev.to_vec());
    }
    Ok(compute_threshold(weights, ratio)?.mask)
}

/// Fraction of positions whose mask bit differs.
pub fn mask_change_ratio(prev: &[u8], next: &[u8]) -> Result<f64> {
    if prev.len() != next.len() {
        return Err(Error::Length(prev.len(), next.len()));
    }
    if prev.is_empty() {
        return Ok(0.0);
    }
    let flips = prev.iter().zip(next).filter(|(a, b)| a != b).count();
    Ok(flips as f64 / prev.len() as f64)
}
