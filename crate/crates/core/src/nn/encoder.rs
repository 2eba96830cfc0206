use indexmap::IndexMap;
use rand::Rng;

use super::{apply_conv, BoundParams, ConvSpec, Layer, ParamSet, WeightStore};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Every post-ReLU output the encoder exposes, in network order.
pub const ENCODER_TAPS: [&str; 14] = [
    "relu1_1", "relu1_2", "relu2_1", "relu2_2", "relu3_1", "relu3_2", "relu3_3", "relu3_4", "relu4_1",
    "relu4_2", "relu4_3", "relu4_4", "relu5_1", "relu5_2",
];

/// Tap whose flattened positions index the correlation matrix.
pub const CORRELATION_TAP: &str = "relu3_4";

// Spatial extents must survive the four pools before conv5.
const EXTENT_MULTIPLE: usize = 16;

fn layers() -> Vec<Layer> {
    let blocks: [(usize, usize, usize); 5] = [(1, 3, 64), (2, 64, 128), (3, 128, 256), (4, 256, 512), (5, 512, 512)];
    let convs_per_block = [2, 2, 4, 4, 2];
    let mut layers = Vec::new();
    for (&(block, in_ch, out_ch), &count) in blocks.iter().zip(&convs_per_block) {
        if block > 1 {
            layers.push(Layer::MaxPool2x2);
        }
        for i in 1..=count {
            let cin = if i == 1 { in_ch } else { out_ch };
            layers.push(Layer::Conv(ConvSpec::new(&format!("conv{block}_{i}"), cin, out_ch, true)));
        }
    }
    layers
}

fn tap_name(conv: &str) -> String {
    conv.replacen("conv", "relu", 1)
}

/// VGG-19-shaped feature extractor, conv1_1 through conv5_2.
#[derive(Debug, Clone)]
pub struct Encoder<T> {
    layers: Vec<Layer>,
    params: ParamSet<T>,
}

impl<T: Scalar> Encoder<T> {
    pub fn random(rng: &mut impl Rng) -> Self {
        let layers = layers();
        let params = ParamSet::random(&layers, rng);
        Encoder { layers, params }
    }

    /// Loads every `conv{b}_{i}.weight|.bias` from `store`, checking shapes.
    pub fn from_store(store: &WeightStore) -> Result<Self> {
        let layers = layers();
        let params = ParamSet::from_store(&layers, store)?;
        Ok(Encoder { layers, params })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn convs(&self) -> impl Iterator<Item = &ConvSpec> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Conv(c) => Some(c),
            _ => None,
        })
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn to_store(&self) -> WeightStore {
        self.params.to_store()
    }

    /// Runs the network on an already normalized 1×3×H×W image and returns
    /// the requested taps. Layers past the deepest requested tap are skipped.
    pub fn encode(&self, g: &mut Graph<T>, params: &BoundParams, image: Var, taps: &[&str]) -> Result<IndexMap<String, Var>> {
        if let Some(bad) = taps.iter().find(|t| !ENCODER_TAPS.contains(t)) {
            return Err(Error::UnknownTap(bad.to_string()));
        }
        let [_, c, h, w] = g.value(image).dims4()?;
        if c != 3 {
            return Err(Error::contract(format!("encode: expected a 3-channel image, got {c} channels")));
        }
        if h % EXTENT_MULTIPLE != 0 || w % EXTENT_MULTIPLE != 0 || h == 0 || w == 0 {
            return Err(Error::contract(format!(
                "encode: image extent {h}×{w} is not a positive multiple of {EXTENT_MULTIPLE}"
            )));
        }
        let deepest = taps.iter().filter_map(|t| ENCODER_TAPS.iter().position(|x| x == t)).max();
        let mut found = IndexMap::new();
        let Some(deepest) = deepest else { return Ok(found) };

        let mut x = image;
        let mut conv_index = 0;
        for layer in &self.layers {
            match layer {
                Layer::MaxPool2x2 => x = g.maxpool2d_2x2(x)?,
                Layer::Upsample2x => x = g.upsample_bilinear_2x(x)?,
                Layer::Conv(spec) => {
                    x = apply_conv(g, params, spec, x)?;
                    let tap = tap_name(&spec.name);
                    if taps.contains(&tap.as_str()) {
                        found.insert(tap, x);
                    }
                    if conv_index == deepest {
                        break;
                    }
                    conv_index += 1;
                }
            }
        }
        // Report taps in the caller's order.
        let mut ordered = IndexMap::new();
        for t in taps {
            if let Some(&v) = found.get(*t) {
                ordered.insert(t.to_string(), v);
            }
        }
        Ok(ordered)
    }

    /// Forward pass outside any training graph.
    pub fn encode_values(&self, image: &Tensor<T>, taps: &[&str]) -> Result<IndexMap<String, Tensor<T>>> {
        let mut g = Graph::new();
        let params = self.params.bind_frozen(&mut g);
        let x = g.constant(image.clone());
        let vars = self.encode(&mut g, &params, x, taps)?;
        Ok(vars.into_iter().map(|(k, v)| (k, g.to_tensor(v))).collect())
    }
}
