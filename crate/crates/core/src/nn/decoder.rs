use rand::Rng;

use super::{apply_conv, BoundParams, ConvSpec, Layer, ParamSet};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DECODER_INPUT_CHANNELS: usize = 256;

fn layers() -> Vec<Layer> {
    let conv = |name: &str, cin, cout| Layer::Conv(ConvSpec::new(name, cin, cout, true));
    let mut layers = vec![
        conv("dec4_3", 256, 256),
        conv("dec4_2", 256, 256),
        conv("dec4_1", 256, 128),
        Layer::Upsample2x,
        conv("dec3_4", 128, 128),
        conv("dec3_3", 128, 128),
        conv("dec3_2", 128, 128),
        conv("dec3_1", 128, 64),
        Layer::Upsample2x,
        conv("dec2_3", 64, 64),
        conv("dec2_2", 64, 64),
        conv("dec2_1", 64, 32),
        conv("dec1_3", 32, 32),
        conv("dec1_2", 32, 32),
    ];
    // The residual is signed, so the last conv stays linear.
    layers.push(Layer::Conv(ConvSpec::new("dec1_1", 32, 3, false)));
    layers
}

/// Maps a 256-channel feature at quarter resolution back to a 3-channel
/// residual image at full resolution.
#[derive(Debug, Clone)]
pub struct Decoder<T> {
    layers: Vec<Layer>,
    params: ParamSet<T>,
}

impl<T: Scalar> Decoder<T> {
    pub fn random(rng: &mut impl Rng) -> Self {
        let layers = layers();
        let params = ParamSet::random(&layers, rng);
        Decoder { layers, params }
    }

    pub fn zeros() -> Self {
        let layers = layers();
        let params = ParamSet::zeros(&layers);
        Decoder { layers, params }
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

    pub fn decode(&self, g: &mut Graph<T>, params: &BoundParams, feature: Var) -> Result<Var> {
        let [_, c, _, _] = g.value(feature).dims4()?;
        if c != DECODER_INPUT_CHANNELS {
            return Err(Error::contract(format!(
                "decode: expected {DECODER_INPUT_CHANNELS} input channels, got {c}"
            )));
        }
        let mut x = feature;
        for layer in &self.layers {
            x = match layer {
                Layer::Conv(spec) => apply_conv(g, params, spec, x)?,
                Layer::Upsample2x => g.upsample_bilinear_2x(x)?,
                Layer::MaxPool2x2 => g.maxpool2d_2x2(x)?,
            };
        }
        Ok(x)
    }

    /// Forward pass outside any training graph.
    pub fn decode_value(&self, feature: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let params = self.params.bind_frozen(&mut g);
        let x = g.constant(feature.clone());
        let y = self.decode(&mut g, &params, x)?;
        Ok(g.to_tensor(y))
    }
}
