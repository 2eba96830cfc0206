//! 8-bit PNG decode/encode, bilinear resizing, encoder normalization and SSIM.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::kernels;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-channel statistics the pretrained encoder expects.
pub const ENCODER_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const ENCODER_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// RGB image with values in `[0, 1]`, stored row-major as H×W×3.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::contract(format!("image extent {height}×{width} must be positive")));
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::contract(format!(
                "{height}×{width}×3 image needs {} values, got {}",
                height * width * 3,
                pixels.len()
            )));
        }
        if let Some(&value) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::PixelRange { value });
        }
        Ok(Image { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        let pixels = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Channel `c` as an H×W plane.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.pixels.iter().skip(c).step_by(3).copied().collect()
    }

    /// 1×3×H×W tensor with unchanged values.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let plane = self.height * self.width;
        let mut data = vec![T::zero(); 3 * plane];
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = T::of_f64(px[c]);
            }
        }
        Tensor::from_vec(&[1, 3, self.height, self.width], data).expect("consistent extents")
    }

    /// Inverse of [`Image::to_tensor`]; values are clamped into `[0, 1]`.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let [n, c, h, w] = t.dims4()?;
        if n != 1 || c != 3 {
            return Err(Error::contract(format!("expected a 1×3×H×W tensor, got {:?}", t.shape())));
        }
        let plane = h * w;
        let d = t.data();
        let mut pixels = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            for ch in 0..3 {
                let v = d[ch * plane + i].as_f64();
                if !v.is_finite() {
                    return Err(Error::NonFinite { op: "image conversion" });
                }
                pixels.push(v.clamp(0.0, 1.0));
            }
        }
        Self::new(h, w, pixels)
    }
}

pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let decode_err = |e: png::DecodingError| Error::ImageDecode { path: path.to_path_buf(), message: e.to_string() };
    let mut reader = png::Decoder::new(BufReader::new(file)).read_info().map_err(decode_err)?;
    let (color, depth) = {
        let info = reader.info();
        (info.color_type, info.bit_depth)
    };
    if depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedBitDepth(depth as u8));
    }
    let stride = match color {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(Error::UnsupportedColorType(format!("{other:?}"))),
    };
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| Error::ImageDecode {
        path: path.to_path_buf(),
        message: "image too large".into(),
    })?];
    let frame = reader.next_frame(&mut buf).map_err(decode_err)?;
    let (h, w) = (frame.height as usize, frame.width as usize);
    let mut pixels = Vec::with_capacity(h * w * 3);
    for row in buf[..frame.buffer_size()].chunks_exact(frame.line_size) {
        for px in row[..w * stride].chunks_exact(stride) {
            pixels.extend(px[..3].iter().map(|&b| b as f64 / 255.0));
        }
    }
    Image::new(h, w, pixels)
}

/// Writes an 8-bit RGB PNG, quantizing by `round(x · 255)`.
pub fn save_png(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |e: std::io::Error| Error::io(format!("writing {}", path.display()), e);
    let file = File::create(path).map_err(io_err)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), image.width as u32, image.height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = image.pixels.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
    let encode_err = |e: png::EncodingError| match e {
        png::EncodingError::IoError(e) => io_err(e),
        other => Error::ImageDecode { path: path.to_path_buf(), message: other.to_string() },
    };
    let mut writer = encoder.write_header().map_err(encode_err)?;
    writer.write_image_data(&bytes).map_err(encode_err)?;
    writer.finish().map_err(encode_err)
}

/// Half-pixel-center bilinear resize with edge clamping, the same sampling
/// as the graph's resize op.
pub fn resize_bilinear(image: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::contract(format!("resize to {out_h}×{out_w}: extents must be positive")));
    }
    if out_h == image.height && out_w == image.width {
        return Ok(image.clone());
    }
    let planes: Vec<f64> = (0..3).flat_map(|c| image.channel(c)).collect();
    let out = kernels::resize_forward(&planes, 3, image.height, image.width, out_h, out_w);
    let plane = out_h * out_w;
    let mut pixels = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            // Convex weights can still round a hair past the unit interval.
            pixels.push(out[c * plane + i].clamp(0.0, 1.0));
        }
    }
    Image::new(out_h, out_w, pixels)
}

/// Encoder input: `(x − mean[c]) / std[c]`, as a 1×3×H×W tensor.
pub fn normalize<T: Scalar>(image: &Image) -> Tensor<T> {
    let mut t = image.to_tensor::<T>();
    let plane = image.height * image.width;
    for (c, chunk) in t.data_mut().chunks_mut(plane).enumerate() {
        let (m, s) = (T::of_f64(ENCODER_MEAN[c]), T::of_f64(ENCODER_STD[c]));
        chunk.iter_mut().for_each(|v| *v = (*v - m) / s);
    }
    t
}

/// Inverse of [`normalize`]; the result is clamped into `[0, 1]`.
pub fn denormalize<T: Scalar>(t: &Tensor<T>) -> Result<Image> {
    let [_, c, h, w] = t.dims4()?;
    if c != 3 {
        return Err(Error::contract(format!("denormalize: expected 3 channels, got {c}")));
    }
    let mut raw = t.clone();
    for (c, chunk) in raw.data_mut().chunks_mut(h * w).enumerate().take(3) {
        let (m, s) = (T::of_f64(ENCODER_MEAN[c]), T::of_f64(ENCODER_STD[c]));
        chunk.iter_mut().for_each(|v| *v = *v * s + m);
    }
    Image::from_tensor(&raw)
}

/// Affine coefficients of [`normalize`] for use inside a graph.
pub fn normalize_coefficients<T: Scalar>() -> ([T; 3], [T; 3]) {
    let scale = ENCODER_STD.map(|s| T::of_f64(1.0 / s));
    let shift = [0, 1, 2].map(|c| T::of_f64(-ENCODER_MEAN[c] / ENCODER_STD[c]));
    (scale, shift)
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size).map(|i| (-((i as f64 - center).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Mean structural similarity over valid windows, then over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::contract(format!(
            "ssim: {}×{} vs {}×{} images",
            a.height, a.width, b.height, b.width
        )));
    }
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        return Err(Error::contract(format!("ssim: images smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window")));
    }
    let taps = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let total: f64 = (0..3).map(|c| ssim_plane(&a.channel(c), &b.channel(c), a.height, a.width, &taps)).sum();
    Ok(total / 3.0)
}

fn ssim_plane(x: &[f64], y: &[f64], h: usize, w: usize, taps: &[f64]) -> f64 {
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let filter = |p: &[f64]| separable_valid(p, h, w, taps);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let (mx, my) = (filter(x), filter(y));
    let (exx, eyy, exy) = (filter(&xx), filter(&yy), filter(&xy));
    let n = mx.len();
    let mut sum = 0.0;
    for i in 0..n {
        // Identical expressions on both sides make ssim(x, x) exactly 1.
        let sxx = exx[i] - mx[i] * mx[i];
        let syy = eyy[i] - my[i] * my[i];
        let sxy = exy[i] - mx[i] * my[i];
        let num = (2.0 * (mx[i] * my[i]) + c1) * (2.0 * sxy + c2);
        let den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (sxx + syy + c2);
        sum += num / den;
    }
    sum / n as f64
}

fn separable_valid(p: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| taps[i] * p[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| taps[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}
