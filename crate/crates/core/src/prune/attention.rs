//! Magnitude attention: a continuous per-weight factor in `[floor, 1]`
//! where `floor = (1 - ratio)^z` is the retention ratio.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Which weights share one set of normalization statistics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScope {
    #[default]
    Global,
    PerLayer,
}

/// How kept weights are mapped onto `[floor, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// Proportional to magnitude between the scope's min and max.
    #[default]
    MagnitudeMinmax,
    /// Evenly spaced by magnitude rank.
    RankLinear,
}

/// `(1 - ratio)^z`.
pub fn retention(ratio: f64, z: f64) -> f64 {
    (1.0 - ratio).powf(z)
}

/// Attention for every weight. `scopes` partitions `0..weights.len()` into
/// normalization groups; min/max statistics cover pruned weights too.
pub fn attention_values<T: Scalar>(
    weights: &[T],
    mask: &[u8],
    scopes: &[Range<usize>],
    ratio: f64,
    z: f64,
    kind: NormKind,
) -> Result<Vec<T>> {
    if mask.len() != weights.len() {
        return Err(Error::Length(mask.len(), weights.len()));
    }
    let floor = T::from_f64(retention(ratio, z));
    let one = T::one();
    let span = one - floor;
    let mut out = vec![floor; weights.len()];
    for scope in scopes {
        let w = &weights[scope.clone()];
        let m = &mask[scope.clone()];
        let a = &mut out[scope.clone()];
        match kind {
            NormKind::MagnitudeMinmax => {
                let (lo, hi) = w.iter().fold((T::infinity(), T::zero()), |(lo, hi), v| {
                    (lo.min(v.abs()), hi.max(v.abs()))
                });
                let range = hi - lo;
                for ((ai, wi), &mi) in a.iter_mut().zip(w).zip(m) {
                    if mi == 0 {
                        continue;
                    }
                    let mag = wi.abs();
                    *ai = if !(range > T::zero()) || mag == hi {
                        one
                    } else {
                        ((mag - lo) / range * span + floor).max(floor).min(one)
                    };
                }
            }
            NormKind::RankLinear => {
                let mut kept: Vec<usize> = (0..w.len()).filter(|&i| m[i] != 0).collect();
                kept.sort_by(|&i, &j| w[i].abs().total_order(&w[j].abs()).then(i.cmp(&j)));
                let last = kept.len().saturating_sub(1);
                for (rank, &i) in kept.iter().enumerate() {
                    a[i] = if rank == last {
                        one
                    } else {
                        let t = T::from_f64(rank as f64 / last as f64);
                        (floor + span * t).max(floor).min(one)
                    };
                }
            }
        }
    }
    Ok(out)
}

/// Attention refresh gated on the update period, mirroring [`super::compute_mask`].
#[allow(clippy::too_many_arguments)]
pub fn compute_attention<T: Scalar>(
    weights: &[T],
    mask: &[u8],
    scopes: &[Range<usize>],
    ratio: f64,
    z: f64,
    kind: NormKind,
    iteration: u64,
    freq: u64,
    frozen: bool,
    prev: &[T],
) -> Result<Vec<T>> {
    if prev.len() != weights.len() {
        return Err(Error::Length(prev.len(), weights.len()));
    }
    if frozen || iteration % freq.max(1) != 0 {
        return Ok(prev.to_vec());
    }
    attention_values(weights, mask, scopes, ratio, z, kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    const W: [f64; 6] = [0.5, -0.1, 0.3, 0.05, -0.7, 0.2];
    const M: [u8; 6] = [1, 0, 1, 0, 1, 0];

    #[test]
    fn global_minmax_hand_values() {
        let a = attention_values(&W, &M, &[0..6], 0.5, 1.0, NormKind::MagnitudeMinmax).unwrap();
        assert_eq!(a[4], 1.0);
        assert!((a[0] - (0.45 / 0.65 * 0.5 + 0.5)).abs() < 1e-12);
        assert!((a[0] - 0.846153846).abs() < 1e-8);
        assert!((a[2] - 0.692307692).abs() < 1e-8);
        for i in [1, 3, 5] {
            assert_eq!(a[i], 0.5);
        }
    }

    #[test]
    fn unit_attention_when_floor_is_one() {
        for (ratio, z) in [(0.5, 0.0), (0.0, 1.0)] {
            let a = attention_values(&W, &M, &[0..6], ratio, z, NormKind::MagnitudeMinmax).unwrap();
            assert!(a.iter().all(|&v| v == 1.0), "{a:?}");
        }
    }

    #[test]
    fn rank_linear_even_spacing() {
        let a = attention_values(&W, &M, &[0..6], 0.5, 1.0, NormKind::RankLinear).unwrap();
        assert_eq!((a[2], a[0], a[4]), (0.5, 0.75, 1.0));
        let single = attention_values(&[0.3f64, 0.1], &[1, 0], &[0..2], 0.5, 1.0, NormKind::RankLinear).unwrap();
        assert_eq!(single, [1.0, 0.5]);
    }

    #[test]
    fn per_layer_scopes_normalize_separately() {
        let w = [0.1, 0.2, 0.4, 1.0, 2.0, 4.0];
        let m = [1u8; 6];
        let a = attention_values(&w, &m, &[0..3, 3..6], 0.0, 1.0, NormKind::MagnitudeMinmax).unwrap();
        assert!(a.iter().all(|&v| v == 1.0));
        let a = attention_values(&w, &m, &[0..3, 3..6], 0.5, 1.0, NormKind::MagnitudeMinmax).unwrap();
        assert_eq!(a[2], 1.0);
        assert_eq!(a[5], 1.0);
        assert_eq!(a[0], 0.5);
        assert_eq!(a[3], 0.5);
    }

    #[test]
    fn degenerate_range_gives_one() {
        let a = attention_values(&[0.3f64, -0.3, 0.3], &[1, 0, 1], &[0..3], 0.3, 1.0, NormKind::MagnitudeMinmax).unwrap();
        assert_eq!(a[0], 1.0);
        assert_eq!(a[2], 1.0);
        assert_eq!(a[1], 0.7f64.powf(1.0));
    }

    #[test]
    fn gated_refresh() {
        let prev = vec![0.25; 6];
        let a = compute_attention(&W, &M, &[0..6], 0.5, 1.0, NormKind::MagnitudeMinmax, 3, 16, false, &prev).unwrap();
        assert_eq!(a, prev);
        let a = compute_attention(&W, &M, &[0..6], 0.5, 1.0, NormKind::MagnitudeMinmax, 32, 16, true, &prev).unwrap();
        assert_eq!(a, prev);
    }
}
