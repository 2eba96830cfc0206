//! The feature encoder, the residual decoder and their parameters.

mod decoder;
mod encoder;
pub mod manifest;
pub mod weights;

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Uniform};

pub use decoder::Decoder;
pub use encoder::{Encoder, CORRELATION_TAP, ENCODER_TAPS};
pub use weights::{StoredData, StoredTensor, WeightStore};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One 3×3, stride 1, padding 1 convolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub followed_by_relu: bool,
}

impl ConvSpec {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, followed_by_relu: bool) -> Self {
        ConvSpec { name: name.to_string(), in_ch, out_ch, kernel: 3, stride: 1, pad: 1, followed_by_relu }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_ch, self.in_ch, self.kernel, self.kernel]
    }

    pub fn fan_in(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layer {
    Conv(ConvSpec),
    MaxPool2x2,
    Upsample2x,
}

/// Ordered parameter tensors of one network, keyed by weight name.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    entries: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    fn from_layers(layers: &[Layer], mut init: impl FnMut(&ConvSpec) -> Result<(Tensor<T>, Tensor<T>)>) -> Result<Self> {
        let mut entries = IndexMap::new();
        for layer in layers {
            if let Layer::Conv(spec) = layer {
                let (w, b) = init(spec)?;
                entries.insert(spec.weight_name(), w.with_requires_grad(true));
                entries.insert(spec.bias_name(), b.with_requires_grad(true));
            }
        }
        Ok(ParamSet { entries })
    }

    /// Uniform Kaiming-style initialization, `U(−b, b)` with
    /// `b = sqrt(6 / fan_in)`, and zero biases.
    pub fn random(layers: &[Layer], rng: &mut impl Rng) -> Self {
        Self::from_layers(layers, |spec| {
            let bound = (6.0 / spec.fan_in() as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            let shape = spec.weight_shape();
            let data: Vec<T> = (0..shape.iter().product::<usize>()).map(|_| T::of_f64(dist.sample(rng))).collect();
            Ok((Tensor::from_vec(&shape, data)?, Tensor::zeros(&[spec.out_ch])))
        })
        .expect("shapes are consistent")
    }

    pub fn zeros(layers: &[Layer]) -> Self {
        Self::from_layers(layers, |spec| Ok((Tensor::zeros(&spec.weight_shape()), Tensor::zeros(&[spec.out_ch]))))
            .expect("shapes are consistent")
    }

    pub fn from_store(layers: &[Layer], store: &WeightStore) -> Result<Self> {
        Self::from_layers(layers, |spec| {
            let fetch = |name: String, expected: &[usize]| -> Result<Tensor<T>> {
                let stored = store.get(&name).ok_or_else(|| Error::MissingTensor { name: name.clone() })?;
                if stored.dims != expected {
                    return Err(Error::ShapeMismatch { name, expected: expected.to_vec(), found: stored.dims.clone() });
                }
                Ok(stored.to_tensor())
            };
            Ok((fetch(spec.weight_name(), &spec.weight_shape())?, fetch(spec.bias_name(), &[spec.out_ch])?))
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn to_store(&self) -> WeightStore {
        let mut store = WeightStore::new();
        for (name, t) in &self.entries {
            store.insert(name, t).expect("names are unique");
        }
        store
    }

    /// Inserts every parameter into `g` as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> BoundParams {
        BoundParams { vars: self.entries.iter().map(|(k, t)| (k.clone(), g.param(t.clone()))).collect() }
    }

    /// Inserts every parameter as a constant.
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> BoundParams {
        BoundParams { vars: self.entries.iter().map(|(k, t)| (k.clone(), g.constant(t.clone()))).collect() }
    }
}

/// Graph handles of a bound [`ParamSet`], in the same order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::MissingTensor { name: name.to_string() })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Collects gradients after a backward pass, in parameter order.
    pub fn grads<T: Scalar>(&self, g: &mut Graph<T>) -> Vec<(String, Option<Vec<T>>)> {
        self.vars.iter().map(|(k, &v)| (k.clone(), g.take_grad(v))).collect()
    }
}

fn apply_conv<T: Scalar>(g: &mut Graph<T>, params: &BoundParams, spec: &ConvSpec, x: Var) -> Result<Var> {
    let w = params.var(&spec.weight_name())?;
    let b = params.var(&spec.bias_name())?;
    let y = g.conv2d(x, w, Some(b), spec.stride, spec.pad)?;
    if spec.followed_by_relu {
        g.relu(y)
    } else {
        Ok(y)
    }
}
