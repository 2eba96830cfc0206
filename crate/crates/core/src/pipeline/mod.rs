//! The test-time optimization loop.
//!
//! Each iteration builds a fresh graph: encode content and style, correlate
//! at the correlation tap, warp features and low-resolution style pixels,
//! decode and blend, re-encode the output, then take one Adam step on the
//! encoder and decoder jointly.

mod adam;
mod config;
mod report;

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use adam::Adam;
pub use config::{Ablations, DtpConfig, WeightsSource, DEFAULT_SEED};
pub use report::{parse_report_csv, report_csv, IterationReport};

use crate::correspondence::{
    correlation, cycle_reconstruct, flatten, matched_points, unflatten, warp, warp_image, MatchedPoint,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::image_io::{self, Image};
use crate::losses::{content_loss, cycle_loss, style_loss, total_loss};
use crate::nn::{Decoder, Encoder, WeightStore, CORRELATION_TAP};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Content and style resampled to the working size, plus the style image at
/// correlation-tap resolution.
#[derive(Debug, Clone)]
pub struct PreparedPair<T> {
    pub content: Image,
    pub style: Image,
    content_input: Tensor<T>,
    style_input: Tensor<T>,
    style_lowres: Tensor<T>,
}

impl<T: Scalar> PreparedPair<T> {
    pub fn new(content: &Image, style: &Image, size: usize) -> Result<Self> {
        let content = image_io::resize_bilinear(content, size, size)?;
        let style = image_io::resize_bilinear(style, size, size)?;
        let low = image_io::resize_bilinear(&style, size / 4, size / 4)?;
        Ok(PreparedPair {
            content_input: image_io::normalize(&content),
            style_input: image_io::normalize(&style),
            style_lowres: low.to_tensor(),
            content,
            style,
        })
    }
}

/// Everything that changes across iterations.
#[derive(Debug, Clone)]
pub struct DtpState<T> {
    pub encoder: Encoder<T>,
    pub decoder: Decoder<T>,
    encoder_adam: Adam<T>,
    decoder_adam: Adam<T>,
    /// Content feature after the moving average, flat at the correlation tap.
    pub fma_feature: Option<Tensor<T>>,
    /// Output feature of the previous iteration, flat at the correlation tap.
    prev_output_feature: Option<Tensor<T>>,
    pub iteration: usize,
    noise_rng: ChaCha8Rng,
}

const INIT_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

impl<T: Scalar> DtpState<T> {
    pub fn new(cfg: &DtpConfig) -> Result<Self> {
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        init_rng.set_stream(INIT_STREAM);
        let encoder = match &cfg.weights {
            WeightsSource::Random => Encoder::random(&mut init_rng),
            WeightsSource::File(path) => Encoder::from_store(&WeightStore::load(path)?)?,
        };
        let decoder = Decoder::random(&mut init_rng);
        Ok(Self::from_networks(encoder, decoder, cfg))
    }

    pub fn from_networks(encoder: Encoder<T>, decoder: Decoder<T>, cfg: &DtpConfig) -> Self {
        let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        noise_rng.set_stream(NOISE_STREAM);
        DtpState {
            encoder_adam: Adam::new(cfg.lr, encoder.params()),
            decoder_adam: Adam::new(cfg.lr, decoder.params()),
            encoder,
            decoder,
            fma_feature: None,
            prev_output_feature: None,
            iteration: 0,
            noise_rng,
        }
    }

    pub fn adam_steps(&self) -> u64 {
        self.encoder_adam.steps()
    }
}

/// `m · fresh + (1 − m) · prev` with `prev` held constant; `fresh` alone
/// when there is no previous output yet.
pub fn fma_update<T: Scalar>(g: &mut Graph<T>, fresh: Var, prev: Option<&Tensor<T>>, momentum: f64) -> Result<Var> {
    let Some(prev) = prev else { return Ok(fresh) };
    if prev.shape() != g.shape(fresh) {
        return Err(Error::contract(format!(
            "fma_update: previous feature {:?} vs fresh {:?}",
            prev.shape(),
            g.shape(fresh)
        )));
    }
    let p = g.constant(prev.clone());
    g.lerp_weights(fresh, T::of_f64(momentum), p, T::of_f64(1.0 - momentum))
}

/// `λ_w · decoded + (1 − λ_w) · warped`. Exact endpoints skip the unused
/// operand so `λ_w = 0` returns `warped` untouched.
pub fn blend_output<T: Scalar>(g: &mut Graph<T>, decoded: Option<Var>, warped: Var, lambda_w: f64) -> Result<Var> {
    match decoded {
        None if lambda_w == 0.0 => Ok(warped),
        None => Err(Error::contract("blend_output: λ_w > 0 requires a decoded residual")),
        Some(d) => {
            if g.shape(d) != g.shape(warped) {
                return Err(Error::contract(format!(
                    "blend_output: decoded {:?} vs warped {:?}",
                    g.shape(d),
                    g.shape(warped)
                )));
            }
            if lambda_w == 0.0 {
                Ok(warped)
            } else if lambda_w == 1.0 {
                Ok(d)
            } else {
                g.lerp_weights(d, T::of_f64(lambda_w), warped, T::of_f64(1.0 - lambda_w))
            }
        }
    }
}

/// Result of one forward/backward/update cycle.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub report: IterationReport,
    pub image: Image,
}

fn noise_like<T: Scalar>(values: &Tensor<T>, rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
    let [p, c] = values.dims2()?;
    let d = values.data();
    let mut std = vec![0.0f64; c];
    for (ch, s) in std.iter_mut().enumerate() {
        let mean = (0..p).map(|u| d[u * c + ch].as_f64()).sum::<f64>() / p as f64;
        *s = ((0..p).map(|u| (d[u * c + ch].as_f64() - mean).powi(2)).sum::<f64>() / p as f64).sqrt();
    }
    let data = (0..p * c)
        .map(|i| {
            let z: f64 = StandardNormal.sample(rng);
            T::of_f64(z * std[i % c])
        })
        .collect();
    Tensor::from_vec(&[p, c], data)
}

/// One iteration. With `update == false` only the forward pass runs and no
/// state changes.
pub fn dtp_step<T: Scalar>(state: &mut DtpState<T>, pair: &PreparedPair<T>, cfg: &DtpConfig, update: bool) -> Result<StepOutput> {
    let iteration = state.iteration + 1;
    let as_loss_error = |e: Error| match e {
        Error::NonFinite { .. } => Error::NonFiniteLoss { iteration },
        other => other,
    };
    let weights = cfg.loss_weights();
    let tau = T::of_f64(cfg.tau);
    let lambda_w = cfg.effective_lambda_w();

    let mut g = Graph::<T>::new();
    let enc_params = state.encoder.params().bind(&mut g);
    let dec_params = state.decoder.params().bind(&mut g);

    let mut taps = cfg.layers.all_taps();
    if !taps.contains(&CORRELATION_TAP) {
        taps.push(CORRELATION_TAP);
    }
    let c_in = g.constant(pair.content_input.clone());
    let s_in = g.constant(pair.style_input.clone());
    let fc_taps = state.encoder.encode(&mut g, &enc_params, c_in, &taps)?;
    let fs_taps = state.encoder.encode(&mut g, &enc_params, s_in, &taps)?;

    let fc_map = fc_taps[CORRELATION_TAP];
    let [_, _, hc, wc] = g.value(fc_map).dims4()?;
    let fc_fresh = flatten(&mut g, fc_map)?;
    let prev = if cfg.ablations.no_fma { None } else { state.prev_output_feature.as_ref() };
    let fc_flat = fma_update(&mut g, fc_fresh, prev, cfg.momentum)?;
    let fs_flat = flatten(&mut g, fs_taps[CORRELATION_TAP])?;
    let m = correlation(&mut g, fc_flat, fs_flat).map_err(as_loss_error)?;

    let warped_image = {
        let low = g.constant(pair.style_lowres.clone());
        let w = warp_image(&mut g, m, low, (hc, wc), tau)?;
        g.resize_bilinear(w, cfg.size, cfg.size)?
    };
    let decoded = if lambda_w > 0.0 {
        let r = if cfg.ablations.no_warped_feature {
            let reference = warp(&mut g, m, fs_flat, tau)?;
            let noise = noise_like(g.value(reference), &mut state.noise_rng)?;
            g.constant(noise)
        } else {
            warp(&mut g, m, fs_flat, tau)?
        };
        let r_map = unflatten(&mut g, r, hc, wc)?;
        Some(state.decoder.decode(&mut g, &dec_params, r_map).map_err(as_loss_error)?)
    } else {
        None
    };
    let blended = blend_output(&mut g, decoded, warped_image, lambda_w)?;
    let output = g.clamp(blended, T::zero(), T::one())?;
    let output_image = Image::from_tensor(g.value(output)).map_err(as_loss_error)?;

    let (scale, shift) = image_io::normalize_coefficients::<T>();
    let out_in = g.channel_affine(output, &scale, &shift)?;
    let fo_taps = state.encoder.encode(&mut g, &enc_params, out_in, &taps)?;

    let sub = |taps: &IndexMap<String, Var>, names: &[String]| -> IndexMap<String, Var> {
        names.iter().filter_map(|n| taps.get(n).map(|&v| (n.clone(), v))).collect()
    };
    let l_cont = content_loss(
        &mut g,
        &sub(&fc_taps, &cfg.layers.content_layers),
        &sub(&fo_taps, &cfg.layers.content_layers),
        &cfg.layers,
        tau,
    )
    .map_err(as_loss_error)?;
    let l_style = style_loss(
        &mut g,
        &sub(&fo_taps, &cfg.layers.style_layers),
        &sub(&fs_taps, &cfg.layers.style_layers),
        &cfg.layers,
    )
    .map_err(as_loss_error)?;
    let (r_c, r_s) = cycle_reconstruct(&mut g, m, fs_flat, fc_flat, tau)?;
    let l_cyc = cycle_loss(&mut g, fc_flat, fs_flat, r_c, r_s).map_err(as_loss_error)?;
    let total = total_loss(&mut g, l_cont, l_style, l_cyc, &weights).map_err(as_loss_error)?;

    let (vc, vs, vy) = (g.item(l_cont)?.as_f64(), g.item(l_style)?.as_f64(), g.item(l_cyc)?.as_f64());
    let report = IterationReport {
        iteration,
        l_cont: vc,
        l_style: vs,
        l_cyc: vy,
        l_total: weights.combine(vc, vs, vy),
        snapshot: None,
    };
    if !report.l_total.is_finite() {
        return Err(Error::NonFiniteLoss { iteration });
    }
    if !update {
        return Ok(StepOutput { report, image: output_image });
    }

    let fo_flat = flatten(&mut g, fo_taps[CORRELATION_TAP])?;
    let next_prev = g.to_tensor(fo_flat);
    let fma_value = g.to_tensor(fc_flat);

    g.backward(total).map_err(as_loss_error)?;
    let enc_grads = enc_params.grads(&mut g);
    let dec_grads = dec_params.grads(&mut g);
    drop(g);
    state.encoder_adam.step(state.encoder.params_mut(), enc_grads)?;
    state.decoder_adam.step(state.decoder.params_mut(), dec_grads)?;
    let finite = |p: &crate::nn::ParamSet<T>| p.iter().all(|(_, t)| t.all_finite());
    if !finite(state.encoder.params()) || !finite(state.decoder.params()) {
        return Err(Error::NonFiniteLoss { iteration });
    }

    state.prev_output_feature = Some(next_prev);
    state.fma_feature = Some(fma_value);
    state.iteration = iteration;
    Ok(StepOutput { report, image: output_image })
}

/// Final image and the per-iteration reports of one session.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub image: Image,
    pub reports: Vec<IterationReport>,
    /// Best style position per content position under the final networks.
    pub matches: Vec<MatchedPoint>,
}

/// Runs `cfg.iters` iterations. The callback sees every report and the
/// output image of that iteration. With `iters == 0` a single forward pass
/// produces the image and nothing is updated.
pub fn run_dtp<T: Scalar>(
    content: &Image,
    style: &Image,
    cfg: &DtpConfig,
    mut on_iteration: impl FnMut(&IterationReport, &Image) -> Result<()>,
) -> Result<RunOutput> {
    cfg.validate()?;
    let pair = PreparedPair::<T>::new(content, style, cfg.size)?;
    let mut state = DtpState::<T>::new(cfg)?;
    run_with_state(&mut state, &pair, cfg, &mut on_iteration)
}

pub fn run_with_state<T: Scalar>(
    state: &mut DtpState<T>,
    pair: &PreparedPair<T>,
    cfg: &DtpConfig,
    on_iteration: &mut impl FnMut(&IterationReport, &Image) -> Result<()>,
) -> Result<RunOutput> {
    if cfg.iters == 0 {
        let out = dtp_step(state, pair, cfg, false)?;
        let matches = final_matches(state, pair, cfg)?;
        return Ok(RunOutput { image: out.image, reports: Vec::new(), matches });
    }
    let mut reports = Vec::with_capacity(cfg.iters);
    let mut last = None;
    for _ in 0..cfg.iters {
        let out = dtp_step(state, pair, cfg, true)?;
        on_iteration(&out.report, &out.image)?;
        reports.push(out.report);
        last = Some(out.image);
    }
    let matches = final_matches(state, pair, cfg)?;
    Ok(RunOutput { image: last.expect("at least one iteration"), reports, matches })
}

/// Correlation argmax per content position, with the moving average applied
/// as in the next iteration.
pub fn final_matches<T: Scalar>(state: &DtpState<T>, pair: &PreparedPair<T>, cfg: &DtpConfig) -> Result<Vec<MatchedPoint>> {
    let mut g = Graph::<T>::new();
    let params = state.encoder.params().bind_frozen(&mut g);
    let c_in = g.constant(pair.content_input.clone());
    let s_in = g.constant(pair.style_input.clone());
    let fc = state.encoder.encode(&mut g, &params, c_in, &[CORRELATION_TAP])?[CORRELATION_TAP];
    let fs = state.encoder.encode(&mut g, &params, s_in, &[CORRELATION_TAP])?[CORRELATION_TAP];
    let fc = flatten(&mut g, fc)?;
    let prev = if cfg.ablations.no_fma { None } else { state.prev_output_feature.as_ref() };
    let fc = fma_update(&mut g, fc, prev, cfg.momentum)?;
    let fs = flatten(&mut g, fs)?;
    let m = correlation(&mut g, fc, fs)?;
    matched_points(g.value(m))
}

/// Loads both PNGs, runs the session in 32-bit precision and writes
/// `final.png`, `report.csv` and `iter_{N}.png` snapshots into `out_dir`.
pub fn run_to_dir(content: &Path, style: &Path, out_dir: &Path, cfg: &DtpConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let content = image_io::load_png(content)?;
    let style = image_io::load_png(style)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let mut snapshots = Vec::new();
    let mut out = run_dtp::<f32>(&content, &style, cfg, |report, image| {
        if cfg.snapshot_every > 0 && report.iteration % cfg.snapshot_every == 0 {
            let name = format!("iter_{}.png", report.iteration);
            image_io::save_png(image, out_dir.join(&name))?;
            snapshots.push((report.iteration, name));
        }
        Ok(())
    })?;
    for (iteration, name) in snapshots {
        out.reports[iteration - 1].snapshot = Some(name);
    }
    image_io::save_png(&out.image, out_dir.join("final.png"))?;
    let csv = report_csv(cfg, &out.reports);
    let path = out_dir.join("report.csv");
    fs::write(&path, csv).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(out)
}
