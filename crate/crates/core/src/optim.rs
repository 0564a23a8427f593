//! SGD with momentum and a step learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamRegistry;
use crate::prune::PruneState;
use crate::tensor::Scalar;

/// Base learning rate multiplied by every milestone factor already reached.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub milestones: Vec<(usize, f64)>,
}

impl LrSchedule {
    pub fn constant(base: f64) -> Self {
        Self {
            base,
            milestones: Vec::new(),
        }
    }

    /// ×0.1 at 50% and 75% of `epochs`.
    pub fn step_default(base: f64, epochs: usize) -> Self {
        Self {
            base,
            milestones: vec![(epochs / 2, 0.1), (epochs * 3 / 4, 0.1)],
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.milestones
            .iter()
            .filter(|(at, _)| *at <= epoch)
            .fold(self.base, |lr, (_, f)| lr * f)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    /// Decay pruned weights as well as kept ones.
    pub decay_all: bool,
    pub nesterov: bool,
    /// One buffer per registry parameter.
    pub velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(registry: &ParamRegistry<T>, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {momentum}")));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight decay must be >= 0, got {weight_decay}")));
        }
        Ok(Self {
            momentum,
            weight_decay,
            decay_all: false,
            nesterov: false,
            velocity: registry
                .params()
                .iter()
                .map(|p| vec![T::zero(); p.tensor.len()])
                .collect(),
        })
    }

    /// One update. `grads[i]` is the gradient w.r.t. the tensor that stood in
    /// for parameter `i` in the forward pass; `scale` is the flat per-weight
    /// factor for prunable parameters (see [`PruneState::grad_scale`]).
    ///
    /// Entries whose scale is exactly zero are left untouched, velocity
    /// included.
    pub fn step(
        &mut self,
        registry: &mut ParamRegistry<T>,
        grads: &[Vec<T>],
        prune: Option<(&PruneState<T>, &[T])>,
        lr: f64,
    ) -> Result<()> {
        if grads.len() != registry.params().len() {
            return Err(Error::Length(grads.len(), registry.params().len()));
        }
        let lr = T::from_f64(lr);
        let mu = T::from_f64(self.momentum);
        let rho = T::from_f64(self.weight_decay);

        let mut flat_range = vec![None; grads.len()];
        if let Some((state, scale)) = prune {
            if scale.len() != state.n_prunable() {
                return Err(Error::Length(scale.len(), state.n_prunable()));
            }
            for (idx, range) in state.segments() {
                flat_range[*idx] = Some(range.clone());
            }
        }

        for (i, (param, g)) in registry.params_mut().iter_mut().zip(grads).enumerate() {
            let w = param.tensor.data_mut();
            if g.len() != w.len() {
                return Err(Error::Length(g.len(), w.len()));
            }
            let v = &mut self.velocity[i];
            match (&flat_range[i], prune) {
                (Some(range), Some((state, scale))) => {
                    let m = &state.mask[range.clone()];
                    let s = &scale[range.clone()];
                    for j in 0..w.len() {
                        if s[j] == T::zero() {
                            continue;
                        }
                        let decay = if self.decay_all || m[j] != 0 { rho * w[j] } else { T::zero() };
                        let gj = s[j] * (g[j] + decay);
                        apply(&mut w[j], &mut v[j], gj, mu, lr, self.nesterov);
                    }
                }
                _ => {
                    for j in 0..w.len() {
                        let gj = g[j] + rho * w[j];
                        apply(&mut w[j], &mut v[j], gj, mu, lr, self.nesterov);
                    }
                }
            }
        }
        Ok(())
    }
}

#[inline]
fn apply<T: Scalar>(w: &mut T, v: &mut T, g: T, mu: T, lr: T, nesterov: bool) {
    *v = mu * *v + g;
    let d = if nesterov { g + mu * *v } else { *v };
    *w = *w - lr * d;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_mlp, mlp_specs};

    #[test]
    fn lr_milestones() {
        let s = LrSchedule::step_default(0.2, 300);
        assert_eq!(s.milestones, [(150, 0.1), (225, 0.1)]);
        assert_eq!(s.lr_at(149), 0.2);
        assert!((s.lr_at(150) - 0.02).abs() < 1e-15);
        assert!((s.lr_at(225) - 0.002).abs() < 1e-15);
        let desk = LrSchedule::step_default(0.1, 40);
        assert_eq!(desk.milestones, [(20, 0.1), (30, 0.1)]);
        let c = LrSchedule::constant(0.3);
        assert!((0..50).all(|e| c.lr_at(e) == 0.3));
    }

    #[test]
    fn lr_non_increasing() {
        let s = LrSchedule::step_default(0.1, 37);
        for e in 1..60 {
            assert!(s.lr_at(e) <= s.lr_at(e - 1));
        }
    }

    fn single_weight_step(w0: f64, g: f64, s: f64, lr: f64, mu: f64, steps: usize) -> f64 {
        let mut reg = build_mlp::<f64>(&mlp_specs(&[1, 1, 1]), 0).unwrap();
        reg.params_mut()[0].tensor.data_mut()[0] = w0;
        let mut st = crate::prune::PruneState::new(
            &reg,
            1.0,
            1,
            0,
            crate::prune::NormScope::Global,
            crate::prune::NormKind::MagnitudeMinmax,
        )
        .unwrap();
        if s == 0.0 {
            st.mask[0] = 0;
        }
        let mut opt = Sgd::new(&reg, mu, 0.0).unwrap();
        let grads = vec![vec![g], vec![0.0], vec![0.0], vec![0.0]];
        for _ in 0..steps {
            opt.step(&mut reg, &grads, Some((&st, &[s])), lr).unwrap();
        }
        reg.params()[0].tensor.data()[0]
    }

    #[test]
    fn scaled_step_matches_hand_value() {
        let w = single_weight_step(2.0, 0.4, 0.5, 0.1, 0.0, 1);
        assert!((w - 1.98).abs() < 1e-15);
    }

    #[test]
    fn momentum_unrolled() {
        let w = single_weight_step(0.0, 1.0, 1.0, 1.0, 0.9, 2);
        assert!((w + 2.9).abs() < 1e-12);
    }

    #[test]
    fn zero_scale_leaves_weight_and_velocity() {
        let mut reg = build_mlp::<f64>(&mlp_specs(&[2, 1, 1]), 4).unwrap();
        let mut st = crate::prune::PruneState::new(
            &reg,
            1.0,
            1,
            0,
            crate::prune::NormScope::Global,
            crate::prune::NormKind::MagnitudeMinmax,
        )
        .unwrap();
        st.mask = vec![0, 1];
        let before = reg.params()[0].tensor.data().to_vec();
        let mut opt = Sgd::new(&reg, 0.9, 0.1).unwrap();
        let grads = vec![vec![0.7, -0.3], vec![0.0], vec![0.0], vec![0.0]];
        for _ in 0..5 {
            opt.step(&mut reg, &grads, Some((&st, &[0.0, 1.0])), 0.1).unwrap();
        }
        assert_eq!(reg.params()[0].tensor.data()[0], before[0]);
        assert_ne!(reg.params()[0].tensor.data()[1], before[1]);
        assert_eq!(opt.velocity[0][0], 0.0);
    }

    #[test]
    fn decay_only_on_kept_weights() {
        let mut reg = build_mlp::<f64>(&mlp_specs(&[2, 1, 1]), 4).unwrap();
        let mut st = crate::prune::PruneState::new(
            &reg,
            1.0,
            1,
            0,
            crate::prune::NormScope::Global,
            crate::prune::NormKind::MagnitudeMinmax,
        )
        .unwrap();
        st.mask = vec![0, 1];
        let before = reg.params()[0].tensor.data().to_vec();
        let mut opt = Sgd::new(&reg, 0.0, 0.5).unwrap();
        let grads = vec![vec![0.0, 0.0], vec![0.0], vec![0.0], vec![0.0]];
        opt.step(&mut reg, &grads, Some((&st, &[1.0, 1.0])), 0.1).unwrap();
        let after = reg.params()[0].tensor.data();
        assert_eq!(after[0], before[0]);
        assert!((after[1] - before[1] * 0.95).abs() < 1e-15);

        opt.decay_all = true;
        opt.step(&mut reg, &grads, Some((&st, &[1.0, 1.0])), 0.1).unwrap();
        assert!((reg.params()[0].tensor.data()[0] - before[0] * 0.95).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let reg = build_mlp::<f64>(&mlp_specs(&[2, 1, 1]), 4).unwrap();
        assert!(Sgd::new(&reg, 1.0, 0.0).is_err());
        assert!(Sgd::new(&reg, 0.5, -1.0).is_err());
    }
}
