//! Fixtures and independent reference implementations shared by the
//! integration tests and the acceptance gate. Oracles are written as plain
//! nested loops over `f64` and never call into the graph.
#![allow(dead_code)]

pub mod suites;

use std::path::PathBuf;

use dtp_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("data")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

pub fn integers(shape: &[usize], rng: &mut ChaCha8Rng, lo: i32, hi: i32) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..=hi) as f64).collect()).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Direct six-deep loop convolution with zero padding.
pub fn conv2d_direct(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, stride: usize, pad: usize) -> Tensor<f64> {
    let [n, c, h, wd] = x.dims4().unwrap();
    let [co, ci, kh, kw] = w.dims4().unwrap();
    assert_eq!(c, ci);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let xd = x.data();
    let wdat = w.data();
    let mut out = vec![0.0; n * co * oh * ow];
    for ni in 0..n {
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data()[o]);
                    for i in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = xd[((ni * c + i) * h + iy as usize) * wd + ix as usize];
                                acc += xv * wdat[((o * ci + i) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((ni * co + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::from_vec(&[n, co, oh, ow], out).unwrap()
}

fn cosine(a: &[f64], b: &[f64], eps: f64) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(eps);
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(eps);
    dot / (na * nb)
}

fn rows(m: &[f64], cols: usize) -> Vec<Vec<f64>> {
    m.chunks(cols).map(<[f64]>::to_vec).collect()
}

/// Cosine of channel-centered rows of two P×C matrices.
pub fn correlation_oracle(fc: &[f64], fs: &[f64], c: usize) -> Vec<Vec<f64>> {
    let center = |m: &[f64]| -> Vec<Vec<f64>> {
        let r = rows(m, c);
        let mean: Vec<f64> = (0..c).map(|j| r.iter().map(|row| row[j]).sum::<f64>() / r.len() as f64).collect();
        r.into_iter().map(|row| row.iter().zip(&mean).map(|(x, m)| x - m).collect()).collect()
    };
    let (a, b) = (center(fc), center(fs));
    a.iter().map(|u| b.iter().map(|v| cosine(u, v, 1e-8)).collect()).collect()
}

/// Row u of the result is the source row at `argmax_v m[u][v]`.
pub fn hard_nn_gather(m: &[Vec<f64>], source: &[f64], c: usize) -> Vec<f64> {
    let src = rows(source, c);
    let mut out = Vec::new();
    for row in m {
        let mut best = 0;
        for v in 1..row.len() {
            if row[v] > row[best] {
                best = v;
            }
        }
        out.extend_from_slice(&src[best]);
    }
    out
}

/// Smallest gap between each row's maximum and its runner-up.
pub fn min_row_gap(m: &[Vec<f64>]) -> f64 {
    m.iter()
        .map(|row| {
            let mut sorted = row.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            if sorted.len() < 2 {
                f64::INFINITY
            } else {
                sorted[0] - sorted[1]
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// Every valid `patch × patch × C` window of a 1×C×H×W map, in row-major
/// window order; each patch is laid out channel-major.
pub fn patches(t: &Tensor<f64>, patch: usize) -> Vec<Vec<f64>> {
    let [_, c, h, w] = t.dims4().unwrap();
    let d = t.data();
    let mut out = Vec::new();
    for y in 0..=h - patch {
        for x in 0..=w - patch {
            let mut p = Vec::with_capacity(c * patch * patch);
            for ch in 0..c {
                for dy in 0..patch {
                    for dx in 0..patch {
                        p.push(d[(ch * h + y + dy) * w + x + dx]);
                    }
                }
            }
            out.push(p);
        }
    }
    out
}

/// Exhaustive nearest-patch style loss over several layers.
pub fn style_loss_oracle(pairs: &[(&Tensor<f64>, &Tensor<f64>)], patch: usize) -> f64 {
    let mut total = 0.0;
    for (out, style) in pairs {
        let po = patches(out, patch);
        let ps = patches(style, patch);
        for p in &po {
            let mut best = 0;
            let mut best_sim = f64::NEG_INFINITY;
            for (v, q) in ps.iter().enumerate() {
                let s = cosine(p, q, 1e-8);
                if s > best_sim {
                    best_sim = s;
                    best = v;
                }
            }
            total += p.iter().zip(&ps[best]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    total
}

/// Feature vector at position u of a 1×C×H×W tensor.
pub fn position(t: &Tensor<f64>, u: usize) -> Vec<f64> {
    let [_, c, h, w] = t.dims4().unwrap();
    (0..c).map(|ch| t.data()[ch * h * w + u]).collect()
}

/// `−Σ_u log[s(fc(u), fo(u)) / Σ_v s(fc(u), fo(v))]` summed over layers.
pub fn content_loss_oracle(pairs: &[(&Tensor<f64>, &Tensor<f64>)], tau: f64) -> f64 {
    let mut total = 0.0;
    for (fc, fo) in pairs {
        let [_, _, h, w] = fc.dims4().unwrap();
        let p = h * w;
        for u in 0..p {
            let a = position(fc, u);
            let num = dtp_core::losses::similarity_s(&a, &position(fo, u), tau);
            let den: f64 = (0..p).map(|v| dtp_core::losses::similarity_s(&a, &position(fo, v), tau)).sum();
            total -= (num / den).ln();
        }
    }
    total
}

/// SSIM by explicit 11×11 windows at every valid position.
pub fn ssim_oracle(a: &dtp_core::Image, b: &dtp_core::Image) -> f64 {
    let (h, w) = (a.height(), a.width());
    let k = 11;
    let g1 = dtp_core::image_io::gaussian_window(k, 1.5);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut channels = 0.0;
    for ch in 0..3 {
        let (x, y) = (a.channel(ch), b.channel(ch));
        let mut sum = 0.0;
        let mut count = 0;
        for oy in 0..=h - k {
            for ox in 0..=w - k {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..k {
                    for dx in 0..k {
                        let wgt = g1[dy] * g1[dx];
                        let (p, q) = (x[(oy + dy) * w + ox + dx], y[(oy + dy) * w + ox + dx]);
                        mx += wgt * p;
                        my += wgt * q;
                        xx += wgt * p * p;
                        yy += wgt * q * q;
                        xy += wgt * p * q;
                    }
                }
                let (vx, vy, cxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
                sum += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        channels += sum / count as f64;
    }
    channels / 3.0
}

/// Random RGB image with values in `[0, 1]`.
pub fn random_image(h: usize, w: usize, seed: u64) -> dtp_core::Image {
    let mut r = rng(seed);
    dtp_core::Image::new(h, w, (0..h * w * 3).map(|_| r.random_range(0.0..1.0)).collect()).unwrap()
}
