//! Multilayer perceptron definition and its named parameters.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{gemm_nn, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }
}

/// Layer specs for a chain of widths, e.g. `[784, 256, 10]`: ReLU on every
/// hidden layer, no activation on the logits.
pub fn mlp_specs(widths: &[usize]) -> Vec<LayerSpec> {
    let last = widths.len().saturating_sub(2);
    widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i == last {
                Activation::None
            } else {
                Activation::Relu
            };
            LayerSpec::new(w[0], w[1], act)
        })
        .collect()
}

pub fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.len() < 2 {
        return Err(Error::Architecture(format!(
            "need at least 2 layers, got {}",
            specs.len()
        )));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(Error::Architecture(format!("layer {i} has a zero dimension")));
        }
    }
    for (i, pair) in specs.windows(2).enumerate() {
        if pair[0].out_dim != pair[1].in_dim {
            return Err(Error::Architecture(format!(
                "layer {i} outputs {} but layer {} expects {}",
                pair[0].out_dim,
                i + 1,
                pair[1].in_dim
            )));
        }
    }
    if specs.last().unwrap().activation != Activation::None {
        return Err(Error::Architecture(
            "final layer must produce raw logits (activation none)".into(),
        ));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub prunable: bool,
}

/// Named model parameters in layer order: `fc{i}.weight` (shape `in×out`)
/// followed by `fc{i}.bias`. Only hidden-layer weight matrices are prunable.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamRegistry<T> {
    specs: Vec<LayerSpec>,
    params: Vec<Param<T>>,
}

pub fn build_mlp<T: Scalar>(specs: &[LayerSpec], seed: u64) -> Result<ParamRegistry<T>> {
    validate_specs(specs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last = specs.len() - 1;
    let mut params = Vec::with_capacity(2 * specs.len());
    for (i, s) in specs.iter().enumerate() {
        let bound = (6.0 / s.in_dim as f64).sqrt();
        let w: Vec<T> = (0..s.in_dim * s.out_dim)
            .map(|_| T::from_f64(rng.random_range(-bound..=bound)))
            .collect();
        params.push(Param {
            name: format!("fc{i}.weight"),
            tensor: Tensor::new(vec![s.in_dim, s.out_dim], w)?,
            prunable: i != last,
        });
        params.push(Param {
            name: format!("fc{i}.bias"),
            tensor: Tensor::zeros(vec![s.out_dim]),
            prunable: false,
        });
    }
    Ok(ParamRegistry {
        specs: specs.to_vec(),
        params,
    })
}

impl<T: Scalar> ParamRegistry<T> {
    /// Reassembles a registry from stored parts, checking names and shapes.
    pub fn from_parts(specs: Vec<LayerSpec>, params: Vec<Param<T>>) -> Result<Self> {
        validate_specs(&specs)?;
        let template = build_mlp::<T>(&specs, 0)?;
        if template.params.len() != params.len() {
            return Err(Error::Architecture(format!(
                "expected {} parameters, found {}",
                template.params.len(),
                params.len()
            )));
        }
        for (t, p) in template.params.iter().zip(&params) {
            if t.name != p.name || t.tensor.shape() != p.tensor.shape() || t.prunable != p.prunable {
                return Err(Error::Architecture(format!(
                    "parameter `{}` does not match the architecture",
                    p.name
                )));
            }
        }
        Ok(Self { specs, params })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn n_prunable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.prunable)
            .map(|p| p.tensor.len())
            .sum()
    }

    /// Indices of prunable parameters, in registry order.
    pub fn prunable_indices(&self) -> Vec<usize> {
        self.params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.prunable)
            .map(|(i, _)| i)
            .collect()
    }

    /// Records every parameter on the tape, substituting `effective[name]`
    /// for prunable ones. Returns one handle per parameter in registry order.
    pub fn bind(
        &self,
        tape: &mut Tape<T>,
        effective: &BTreeMap<String, Tensor<T>>,
    ) -> Result<Vec<Var>> {
        self.params
            .iter()
            .map(|p| {
                let t = match effective.get(&p.name) {
                    Some(t) => {
                        if t.shape() != p.tensor.shape() {
                            return Err(Error::Shape {
                                op: "bind",
                                lhs: p.tensor.shape().to_vec(),
                                rhs: t.shape().to_vec(),
                            });
                        }
                        t.clone()
                    }
                    None if p.prunable => return Err(Error::MissingEffective(p.name.clone())),
                    None => p.tensor.clone(),
                };
                Ok(tape.leaf(t.with_grad()))
            })
            .collect()
    }

    /// Logits for `batch` given one bound handle per parameter.
    pub fn forward(&self, tape: &mut Tape<T>, weights: &[Var], batch: Var) -> Result<Var> {
        if weights.len() != self.params.len() {
            return Err(Error::Length(weights.len(), self.params.len()));
        }
        let mut h = batch;
        for (i, spec) in self.specs.iter().enumerate() {
            let z = tape.matmul(h, weights[2 * i])?;
            let z = tape.add_bias(z, weights[2 * i + 1])?;
            h = match spec.activation {
                Activation::Relu => tape.relu(z)?,
                Activation::None => z,
            };
        }
        Ok(h)
    }

    /// Tape-free forward pass; `weights[i]` replaces the data of parameter `i`.
    pub fn logits_with(&self, weights: &[&[T]], batch: &Tensor<T>) -> Result<Tensor<T>> {
        if weights.len() != self.params.len() {
            return Err(Error::Length(weights.len(), self.params.len()));
        }
        let (rows, mut width) = batch.dims2().ok_or_else(|| Error::Shape {
            op: "forward",
            lhs: batch.shape().to_vec(),
            rhs: vec![self.specs[0].in_dim],
        })?;
        if width != self.specs[0].in_dim {
            return Err(Error::Shape {
                op: "forward",
                lhs: batch.shape().to_vec(),
                rhs: vec![self.specs[0].in_dim],
            });
        }
        let mut h = batch.data().to_vec();
        for (i, spec) in self.specs.iter().enumerate() {
            let mut z = vec![T::zero(); rows * spec.out_dim];
            gemm_nn(&h, weights[2 * i], &mut z, rows, width, spec.out_dim);
            for row in z.chunks_exact_mut(spec.out_dim) {
                for (o, &b) in row.iter_mut().zip(weights[2 * i + 1]) {
                    *o = *o + b;
                }
            }
            if spec.activation == Activation::Relu {
                for v in z.iter_mut() {
                    if !(*v > T::zero()) {
                        *v = T::zero();
                    }
                }
            }
            h = z;
            width = spec.out_dim;
        }
        Tensor::new(vec![rows, width], h)
    }

    /// Dense forward pass on the raw parameters.
    pub fn logits(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let raw: Vec<&[T]> = self.params.iter().map(|p| p.tensor.data()).collect();
        self.logits_with(&raw, batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts_for_default_net() {
        let reg = build_mlp::<f32>(&mlp_specs(&[784, 256, 10]), 1).unwrap();
        assert_eq!(reg.n_params(), 203_530);
        assert_eq!(reg.n_prunable(), 200_704);
        let prunable: Vec<_> = reg.params().iter().filter(|p| p.prunable).map(|p| p.name.as_str()).collect();
        assert_eq!(prunable, ["fc0.weight"]);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let specs = mlp_specs(&[5, 4, 3]);
        let a = build_mlp::<f64>(&specs, 9).unwrap();
        let b = build_mlp::<f64>(&specs, 9).unwrap();
        let c = build_mlp::<f64>(&specs, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = (6.0f64 / 5.0).sqrt();
        assert!(a.params()[0].tensor.data().iter().all(|w| w.abs() <= bound));
        assert!(a.params()[1].tensor.data().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn rejects_bad_chains() {
        let bad = vec![
            LayerSpec::new(4, 3, Activation::Relu),
            LayerSpec::new(2, 2, Activation::None),
        ];
        assert!(matches!(build_mlp::<f64>(&bad, 0), Err(Error::Architecture(_))));
        assert!(build_mlp::<f64>(&mlp_specs(&[4, 2]), 0).is_err());
        let relu_tail = vec![
            LayerSpec::new(4, 3, Activation::Relu),
            LayerSpec::new(3, 2, Activation::Relu),
        ];
        assert!(build_mlp::<f64>(&relu_tail, 0).is_err());
    }

    fn set(reg: &mut ParamRegistry<f64>, name: &str, data: &[f64]) {
        let p = reg.params_mut().iter_mut().find(|p| p.name == name).unwrap();
        p.tensor.data_mut().copy_from_slice(data);
    }

    #[test]
    fn hand_evaluated_two_layer_net() {
        let mut reg = build_mlp::<f64>(&mlp_specs(&[2, 2, 2]), 0).unwrap();
        // hidden = relu([1,0]·[[1,-1],[2,3]] + [0.5,0.5]) = relu([1.5,-0.5]) = [1.5, 0]
        set(&mut reg, "fc0.weight", &[1.0, -1.0, 2.0, 3.0]);
        set(&mut reg, "fc0.bias", &[0.5, 0.5]);
        // logits = [1.5,0]·[[2,0],[1,1]] + [0.1,-0.1] = [3.1, -0.1]
        set(&mut reg, "fc1.weight", &[2.0, 0.0, 1.0, 1.0]);
        set(&mut reg, "fc1.bias", &[0.1, -0.1]);
        let x = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();

        let mut tape = Tape::new();
        let mut eff = BTreeMap::new();
        eff.insert("fc0.weight".to_string(), reg.get("fc0.weight").unwrap().tensor.clone());
        let w = reg.bind(&mut tape, &eff).unwrap();
        let xv = tape.leaf(x.clone());
        let out = reg.forward(&mut tape, &w, xv).unwrap();
        let got = tape.value(out).data().to_vec();
        assert!((got[0] - 3.1).abs() < 1e-12 && (got[1] + 0.1).abs() < 1e-12);
        assert_eq!(reg.logits(&x).unwrap().data(), got.as_slice());
    }

    #[test]
    fn zero_effective_weights_yield_final_bias() {
        let mut reg = build_mlp::<f64>(&mlp_specs(&[3, 4, 2]), 5).unwrap();
        set(&mut reg, "fc1.weight", &[0.0; 8]);
        set(&mut reg, "fc1.bias", &[0.7, -0.2]);
        let mut eff = BTreeMap::new();
        eff.insert("fc0.weight".to_string(), Tensor::zeros(vec![3, 4]));
        let mut tape = Tape::new();
        let w = reg.bind(&mut tape, &eff).unwrap();
        let x = tape.leaf(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0]).unwrap());
        let out = reg.forward(&mut tape, &w, x).unwrap();
        assert_eq!(tape.value(out).data(), &[0.7, -0.2, 0.7, -0.2]);
    }

    #[test]
    fn missing_substitute_is_an_error() {
        let reg = build_mlp::<f64>(&mlp_specs(&[3, 4, 2]), 5).unwrap();
        let mut tape = Tape::new();
        let err = reg.bind(&mut tape, &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, Error::MissingEffective(ref n) if n == "fc0.weight"));
    }

    #[test]
    fn raw_substitution_matches_dense_forward_bit_exact() {
        let reg = build_mlp::<f32>(&mlp_specs(&[6, 5, 4, 3]), 21).unwrap();
        let eff: BTreeMap<_, _> = reg
            .params()
            .iter()
            .filter(|p| p.prunable)
            .map(|p| (p.name.clone(), p.tensor.clone()))
            .collect();
        let x = Tensor::new(vec![2, 6], (0..12).map(|i| (i as f32 * 0.37).sin()).collect()).unwrap();
        let mut tape = Tape::new();
        let w = reg.bind(&mut tape, &eff).unwrap();
        let xv = tape.leaf(x.clone());
        let out = reg.forward(&mut tape, &w, xv).unwrap();
        let dense = reg.logits(&x).unwrap();
        let a: Vec<u32> = tape.value(out).data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = dense.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }
}
