use std::collections::BTreeMap;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::model::ParamRegistry;
use crate::tensor::{Scalar, Tensor};

use super::attention::{attention_values, retention, NormKind, NormScope};
use super::mask::{compute_threshold, mask_change_ratio};
use super::rules::{backward_scale, forward_effective, UpdateRule};

/// Mask, attention and phase bookkeeping for one training run. Vectors are
/// flat over all prunable weights, concatenated in registry order.
#[derive(Clone, Debug, PartialEq)]
pub struct PruneState<T> {
    pub mask: Vec<u8>,
    pub attention: Vec<T>,
    pub threshold: T,
    /// Pruning ratio in effect for the current epoch.
    pub ratio: f64,
    /// Attention strength.
    pub z: f64,
    /// Mask update period in iterations.
    pub freq: u64,
    /// Last iteration at which mask and attention may change.
    pub exploit_at: u64,
    pub frozen: bool,
    pub norm_scope: NormScope,
    pub norm_kind: NormKind,
    /// Registry index and flat range of every prunable parameter.
    segments: Vec<(usize, Range<usize>)>,
}

/// Outcome of a mask/attention refresh.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskEvent {
    pub iteration: u64,
    pub change_ratio: f64,
    pub sparsity: f64,
}

impl<T: Scalar> PruneState<T> {
    pub fn new(
        registry: &ParamRegistry<T>,
        z: f64,
        freq: u64,
        exploit_at: u64,
        norm_scope: NormScope,
        norm_kind: NormKind,
    ) -> Result<Self> {
        if freq == 0 {
            return Err(Error::Config("mask update frequency must be at least 1".into()));
        }
        if !(z >= 0.0) || !z.is_finite() {
            return Err(Error::Config(format!("attention strength must be >= 0, got {z}")));
        }
        let mut segments = Vec::new();
        let mut offset = 0;
        for idx in registry.prunable_indices() {
            let len = registry.params()[idx].tensor.len();
            segments.push((idx, offset..offset + len));
            offset += len;
        }
        if offset == 0 {
            return Err(Error::Architecture("model has no prunable weights".into()));
        }
        Ok(Self {
            mask: vec![1; offset],
            attention: vec![T::one(); offset],
            threshold: T::zero(),
            ratio: 0.0,
            z,
            freq,
            exploit_at,
            frozen: false,
            norm_scope,
            norm_kind,
            segments,
        })
    }

    pub fn n_prunable(&self) -> usize {
        self.mask.len()
    }

    pub fn segments(&self) -> &[(usize, Range<usize>)] {
        &self.segments
    }

    /// `(1 - ratio)^z` at the current ratio.
    pub fn floor(&self) -> T {
        T::from_f64(retention(self.ratio, self.z))
    }

    pub fn sparsity(&self) -> f64 {
        let zeros = self.mask.iter().filter(|&&m| m == 0).count();
        zeros as f64 / self.mask.len() as f64
    }

    pub fn set_ratio(&mut self, ratio: f64) -> Result<()> {
        if !(0.0..1.0).contains(&ratio) {
            return Err(Error::Ratio(ratio));
        }
        self.ratio = ratio;
        Ok(())
    }

    /// Enters the exploitation phase once `iteration` passes `exploit_at`.
    pub fn maybe_freeze(&mut self, iteration: u64) {
        if iteration > self.exploit_at {
            self.frozen = true;
        }
    }

    /// Prunable weights concatenated in registry order.
    pub fn gather(&self, registry: &ParamRegistry<T>) -> Vec<T> {
        let mut flat = Vec::with_capacity(self.mask.len());
        for (idx, _) in &self.segments {
            flat.extend_from_slice(registry.params()[*idx].tensor.data());
        }
        flat
    }

    fn scopes(&self) -> Vec<Range<usize>> {
        match self.norm_scope {
            NormScope::Global => vec![0..self.mask.len()],
            NormScope::PerLayer => self.segments.iter().map(|(_, r)| r.clone()).collect(),
        }
    }

    /// Recomputes mask then attention from the current weights.
    pub fn refresh(&mut self, registry: &ParamRegistry<T>) -> Result<f64> {
        let weights = self.gather(registry);
        let t = compute_threshold(&weights, self.ratio)?;
        let change = mask_change_ratio(&self.mask, &t.mask)?;
        self.attention = attention_values(
            &weights,
            &t.mask,
            &self.scopes(),
            self.ratio,
            self.z,
            self.norm_kind,
        )?;
        self.mask = t.mask;
        self.threshold = t.lambda;
        Ok(change)
    }

    /// Per-iteration hook: freezes past `exploit_at`, and on every `freq`-th
    /// iteration of the exploration phase refreshes mask and attention.
    pub fn on_iteration(&mut self, iteration: u64, registry: &ParamRegistry<T>) -> Result<Option<MaskEvent>> {
        self.maybe_freeze(iteration);
        if self.frozen || iteration % self.freq != 0 {
            return Ok(None);
        }
        let change_ratio = self.refresh(registry)?;
        Ok(Some(MaskEvent {
            iteration,
            change_ratio,
            sparsity: self.sparsity(),
        }))
    }

    /// Effective weight tensors for every prunable parameter.
    pub fn effective_weights(
        &self,
        registry: &ParamRegistry<T>,
        rule: UpdateRule,
    ) -> BTreeMap<String, Tensor<T>> {
        self.segments
            .iter()
            .map(|(idx, range)| {
                let p = &registry.params()[*idx];
                let mut t = p.tensor.clone();
                t.grad = None;
                forward_effective(
                    p.tensor.data(),
                    &self.mask[range.clone()],
                    &self.attention[range.clone()],
                    rule,
                    t.data_mut(),
                );
                (p.name.clone(), t)
            })
            .collect()
    }

    /// Flat gradient scale vector for `rule`.
    pub fn grad_scale(&self, rule: UpdateRule) -> Vec<T> {
        let mut s = vec![T::zero(); self.mask.len()];
        backward_scale(&self.mask, &self.attention, self.floor(), rule, &mut s);
        s
    }

    pub(crate) fn restore(
        &mut self,
        mask: Vec<u8>,
        attention: Vec<T>,
        threshold: T,
        ratio: f64,
        frozen: bool,
    ) -> Result<()> {
        if mask.len() != self.mask.len() || attention.len() != self.attention.len() {
            return Err(Error::Length(mask.len(), self.mask.len()));
        }
        self.mask = mask;
        self.attention = attention;
        self.threshold = threshold;
        self.ratio = ratio;
        self.frozen = frozen;
        Ok(())
    }
}
