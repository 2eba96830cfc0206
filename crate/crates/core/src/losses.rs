//! Contrastive content loss, nearest-patch style loss, cycle loss.

use indexmap::IndexMap;

use crate::correspondence::{flatten, COSINE_EPS};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::ENCODER_TAPS;
use crate::scalar::{gemm, Scalar, Strides};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Weight of the style term; content gets `1 − lambda_c`.
    pub lambda_c: f64,
    pub lambda_cyc: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_c: 0.2, lambda_cyc: 1.0, tau: 0.07 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_c) {
            return Err(Error::Config(format!("lambda_c = {} is outside [0, 1]", self.lambda_c)));
        }
        if !(self.lambda_cyc >= 0.0 && self.lambda_cyc.is_finite()) {
            return Err(Error::Config(format!("lambda_cyc = {} must be non-negative", self.lambda_cyc)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau = {} must be positive", self.tau)));
        }
        Ok(())
    }

    /// `(1 − λ_c)·content + λ_c·style + λ_cyc·cycle`.
    pub fn combine(&self, content: f64, style: f64, cycle: f64) -> f64 {
        (1.0 - self.lambda_c) * content + self.lambda_c * style + self.lambda_cyc * cycle
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSet {
    pub content_layers: Vec<String>,
    pub style_layers: Vec<String>,
    pub patch_size: usize,
}

impl Default for LayerSet {
    fn default() -> Self {
        let taps: Vec<String> = ["relu2_2", "relu3_4", "relu4_2"].map(String::from).to_vec();
        LayerSet { content_layers: taps.clone(), style_layers: taps, patch_size: 3 }
    }
}

impl LayerSet {
    pub fn validate(&self) -> Result<()> {
        for name in self.content_layers.iter().chain(&self.style_layers) {
            if !ENCODER_TAPS.contains(&name.as_str()) {
                return Err(Error::UnknownTap(name.clone()));
            }
        }
        if self.patch_size == 0 || self.patch_size % 2 == 0 {
            return Err(Error::Config(format!("patch size {} must be odd and positive", self.patch_size)));
        }
        Ok(())
    }

    /// Union of content and style taps, content first, without repeats.
    pub fn all_taps(&self) -> Vec<&str> {
        let mut taps: Vec<&str> = Vec::new();
        for t in self.content_layers.iter().chain(&self.style_layers) {
            if !taps.contains(&t.as_str()) {
                taps.push(t);
            }
        }
        taps
    }
}

/// `exp(cos(f, g) / τ)` with the cosine norm floor.
pub fn similarity_s(f: &[f64], g: &[f64], tau: f64) -> f64 {
    let dot: f64 = f.iter().zip(g).map(|(a, b)| a * b).sum();
    let nf = f.iter().map(|a| a * a).sum::<f64>().sqrt().max(COSINE_EPS);
    let ng = g.iter().map(|a| a * a).sum::<f64>().sqrt().max(COSINE_EPS);
    (dot / (nf * ng) / tau).exp()
}

fn tap(taps: &IndexMap<String, Var>, name: &str, side: &str) -> Result<Var> {
    taps.get(name).copied().ok_or_else(|| Error::contract(format!("{side} features lack tap {name}")))
}

/// Spatial infoNCE per layer: the co-located output position is the positive,
/// every output position at the same layer is in the denominator.
pub fn content_loss<T: Scalar>(
    g: &mut Graph<T>,
    content: &IndexMap<String, Var>,
    output: &IndexMap<String, Var>,
    layers: &LayerSet,
    tau: T,
) -> Result<Var> {
    let eps = T::of_f64(COSINE_EPS);
    let mut total: Option<Var> = None;
    for name in &layers.content_layers {
        let fc = tap(content, name, "content")?;
        let fo = tap(output, name, "output")?;
        if g.shape(fc) != g.shape(fo) {
            return Err(Error::contract(format!(
                "content_loss: tap {name} shapes {:?} vs {:?}",
                g.shape(fc),
                g.shape(fo)
            )));
        }
        let a = flatten(g, fc)?;
        let a = g.normalize_rows(a, eps)?;
        let b = flatten(g, fo)?;
        let b = g.normalize_rows(b, eps)?;
        let bt = g.transpose(b)?;
        let scores = g.matmul(a, bt)?;
        let l = g.infonce_diag(scores, tau)?;
        total = Some(match total {
            Some(t) => g.add(t, l)?,
            None => l,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => Ok(g.constant(Tensor::scalar(T::zero()))),
    }
}

/// Index of the most cosine-similar style column for every output column.
/// Both inputs are K×P column-major-by-patch matrices as produced by
/// unfolding; ties go to the lowest style index.
pub fn patch_nearest<T: Scalar>(out: &[T], style: &[T], k: usize, p_out: usize, p_style: usize) -> Vec<usize> {
    let normalized_rows = |cols: &[T], p: usize| -> Vec<T> {
        let mut rows = vec![T::zero(); p * k];
        for j in 0..p {
            let mut sq = T::zero();
            for i in 0..k {
                let v = cols[i * p + j];
                sq = sq + v * v;
            }
            let n = sq.sqrt().max(T::of_f64(COSINE_EPS));
            for i in 0..k {
                rows[j * k + i] = cols[i * p + j] / n;
            }
        }
        rows
    };
    let a = normalized_rows(out, p_out);
    let b = normalized_rows(style, p_style);
    let mut sim = vec![T::zero(); p_out * p_style];
    gemm(
        p_out,
        k,
        p_style,
        &a,
        Strides::row_major(k),
        &b,
        Strides::row_major(k).transposed(),
        &mut sim,
        Strides::row_major(p_style),
        false,
    );
    sim.chunks_exact(p_style.max(1))
        .map(|row| {
            let mut best = 0;
            for (v, x) in row.iter().enumerate() {
                if *x > row[best] {
                    best = v;
                }
            }
            best
        })
        .collect()
}

/// Squared distance of every output patch to its nearest style patch. The
/// assignment is computed from current values and held constant.
pub fn style_loss<T: Scalar>(
    g: &mut Graph<T>,
    output: &IndexMap<String, Var>,
    style: &IndexMap<String, Var>,
    layers: &LayerSet,
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for name in &layers.style_layers {
        let fo = tap(output, name, "output")?;
        let fs = tap(style, name, "style")?;
        let co = g.shape(fo).get(1).copied();
        let cs = g.shape(fs).get(1).copied();
        if co != cs {
            return Err(Error::contract(format!("style_loss: tap {name} channels {co:?} vs {cs:?}")));
        }
        let po = g.unfold(fo, layers.patch_size)?;
        let ps_var = g.unfold(fs, layers.patch_size)?;
        let [k, p_out] = g.value(po).dims2()?;
        let [_, p_style] = g.value(ps_var).dims2()?;
        let nn = patch_nearest(g.data(po), g.data(ps_var), k, p_out, p_style);
        let src = g.data(ps_var);
        let mut target = vec![T::zero(); k * p_out];
        for i in 0..k {
            for (j, &v) in nn.iter().enumerate() {
                target[i * p_out + j] = src[i * p_style + v];
            }
        }
        let target = g.constant(Tensor::from_vec(&[k, p_out], target)?);
        let l = g.sum_sq_diff(po, target)?;
        total = Some(match total {
            Some(t) => g.add(t, l)?,
            None => l,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => Ok(g.constant(Tensor::scalar(T::zero()))),
    }
}

/// `Σ ‖f_C − r_C‖² + Σ ‖f_S − r_S‖²`.
pub fn cycle_loss<T: Scalar>(g: &mut Graph<T>, fc: Var, fs: Var, r_c: Var, r_s: Var) -> Result<Var> {
    let a = g.sum_sq_diff(fc, r_c)?;
    let b = g.sum_sq_diff(fs, r_s)?;
    g.add(a, b)
}

pub fn total_loss<T: Scalar>(g: &mut Graph<T>, content: Var, style: Var, cycle: Var, w: &LossWeights) -> Result<Var> {
    let c = g.scale(content, T::of_f64(1.0 - w.lambda_c))?;
    let s = g.scale(style, T::of_f64(w.lambda_c))?;
    let y = g.scale(cycle, T::of_f64(w.lambda_cyc))?;
    let cs = g.add(c, s)?;
    g.add(cs, y)
}
