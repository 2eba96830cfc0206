//! Check lists shared by the per-area test files and the acceptance gate.
//! Each entry reports its own measured error instead of panicking, so the
//! gate can print one line per check.

use dtp_core::correspondence::{correlation, cycle_reconstruct, warp};
use dtp_core::error::FormatError;
use dtp_core::gradcheck::GradCheck;
use dtp_core::losses::{content_loss, cycle_loss, style_loss, LayerSet};
use dtp_core::nn::{StoredData, StoredTensor};
use dtp_core::{image_io, Error, Graph, ReduceKind, Result, Tensor, Var, WeightStore};
use indexmap::IndexMap;
use rand::Rng;

use super::*;

pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check { name: name.to_string(), passed, detail }
    }

    fn from_result(name: &str, r: Result<Check>) -> Check {
        r.unwrap_or_else(|e| Check::new(name, false, format!("error: {e}")))
    }
}

fn grad<F>(name: &str, inputs: Vec<Tensor<f64>>, build: F) -> Check
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    Check::from_result(
        name,
        GradCheck::default().run(&inputs, build).map(|r| {
            Check::new(
                name,
                r.max_rel_err < GRAD_TOLERANCE,
                format!("max rel err {:.2e} over {} elements", r.max_rel_err, r.checked),
            )
        }),
    )
}

fn away_from_zero(mut t: Tensor<f64>, margin: f64) -> Tensor<f64> {
    for v in t.data_mut() {
        *v += margin * v.signum();
    }
    t
}

fn taps(name: &str, v: Var) -> IndexMap<String, Var> {
    [(name.to_string(), v)].into_iter().collect()
}

fn one_layer(name: &str, patch: usize) -> LayerSet {
    LayerSet { content_layers: vec![name.into()], style_layers: vec![name.into()], patch_size: patch }
}

/// Finite-difference checks of every differentiable op, 64-bit.
pub fn gradient_suite() -> Vec<Check> {
    let mut out = Vec::new();
    for (label, stride, pad) in [("conv2d s1 p1", 1, 1), ("conv2d s2 p0", 2, 0)] {
        out.push(grad(
            label,
            vec![uniform(&[2, 3, 6, 6], 1, -1.0, 1.0), uniform(&[4, 3, 3, 3], 2, -0.5, 0.5), uniform(&[4], 3, -0.5, 0.5)],
            move |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, pad),
        ));
    }
    out.push(grad("maxpool2d_2x2", vec![uniform(&[2, 4, 8, 8], 4, -1.0, 1.0)], |g, v| g.maxpool2d_2x2(v[0])));
    out.push(grad("relu", vec![away_from_zero(uniform(&[2, 3, 4, 4], 5, -1.0, 1.0), 0.01)], |g, v| g.relu(v[0])));
    out.push(grad("upsample_bilinear_2x", vec![uniform(&[1, 2, 3, 4], 6, -1.0, 1.0)], |g, v| {
        g.upsample_bilinear_2x(v[0])
    }));
    out.push(grad("resize_bilinear 3x4->5x7", vec![uniform(&[1, 2, 3, 4], 7, -1.0, 1.0)], |g, v| {
        g.resize_bilinear(v[0], 5, 7)
    }));
    out.push(grad("matmul", vec![uniform(&[3, 4], 8, -1.0, 1.0), uniform(&[4, 5], 9, -1.0, 1.0)], |g, v| {
        g.matmul(v[0], v[1])
    }));
    out.push(grad("softmax_rows", vec![uniform(&[3, 5], 10, -1.0, 1.0)], |g, v| g.softmax_rows(v[0], 0.5)));
    out.push(grad("transpose+reshape", vec![uniform(&[3, 4], 11, -1.0, 1.0)], |g, v| {
        let t = g.transpose(v[0])?;
        g.reshape(t, &[2, 6])
    }));
    out.push(grad("reduce mean", vec![uniform(&[2, 3, 4], 12, -1.0, 1.0)], |g, v| g.reduce(v[0], ReduceKind::Mean, &[0, 2])));
    out.push(grad("add/sub/mul/scale", vec![uniform(&[6], 13, -1.0, 1.0), uniform(&[6], 14, -1.0, 1.0)], |g, v| {
        let a = g.add(v[0], v[1])?;
        let b = g.sub(v[0], v[1])?;
        let c = g.mul(a, b)?;
        g.scale(c, 0.7)
    }));
    out.push(grad("channel_affine", vec![uniform(&[1, 3, 2, 2], 15, -1.0, 1.0)], |g, v| {
        g.channel_affine(v[0], &[2.0, -1.0, 0.5], &[0.1, 0.2, 0.3])
    }));
    out.push(grad("clamp interior", vec![uniform(&[8], 16, 0.1, 0.9)], |g, v| g.clamp(v[0], 0.0, 1.0)));
    out.push(grad("center_columns", vec![uniform(&[5, 3], 17, -1.0, 1.0)], |g, v| g.center_columns(v[0])));
    out.push(grad("normalize_rows", vec![uniform(&[4, 3], 18, -1.0, 1.0)], |g, v| g.normalize_rows(v[0], 1e-8)));
    out.push(grad("infonce_diag", vec![uniform(&[4, 4], 19, -1.0, 1.0)], |g, v| g.infonce_diag(v[0], 0.3)));
    out.push(grad("unfold 3x3", vec![uniform(&[1, 2, 4, 5], 20, -1.0, 1.0)], |g, v| g.unfold(v[0], 3)));
    out.push(grad("sum_sq_diff", vec![uniform(&[7], 21, -1.0, 1.0), uniform(&[7], 22, -1.0, 1.0)], |g, v| {
        g.sum_sq_diff(v[0], v[1])
    }));
    out.push(grad("correlation", vec![uniform(&[6, 4], 23, -1.0, 1.0), uniform(&[5, 4], 24, -1.0, 1.0)], |g, v| {
        correlation(g, v[0], v[1])
    }));
    out.push(grad(
        "warp_feature wrt M and f_S",
        vec![uniform(&[6, 5], 25, -1.0, 1.0), uniform(&[5, 4], 26, -1.0, 1.0)],
        |g, v| warp(g, v[0], v[1], 0.07),
    ));
    out.push(grad(
        "warp_feature through correlation",
        vec![uniform(&[16, 4], 27, -1.0, 1.0), uniform(&[12, 4], 28, -1.0, 1.0)],
        |g, v| {
            let m = correlation(g, v[0], v[1])?;
            warp(g, m, v[1], 0.07)
        },
    ));
    out.push(grad(
        "content_loss",
        vec![uniform(&[1, 4, 3, 3], 29, -1.0, 1.0), uniform(&[1, 4, 3, 3], 30, -1.0, 1.0)],
        |g, v| content_loss(g, &taps("relu1_1", v[0]), &taps("relu1_1", v[1]), &one_layer("relu1_1", 3), 0.07),
    ));
    let style_target = uniform(&[1, 3, 4, 4], 31, -1.0, 1.0);
    out.push(grad("style_loss", vec![uniform(&[1, 3, 5, 5], 32, -1.0, 1.0)], move |g, v| {
        let fs = g.constant(style_target.clone());
        style_loss(g, &taps("relu1_1", v[0]), &taps("relu1_1", fs), &one_layer("relu1_1", 3))
    }));
    out.push(grad(
        "cycle_loss through correlation",
        vec![uniform(&[6, 3], 33, -1.0, 1.0), uniform(&[5, 3], 34, -1.0, 1.0)],
        |g, v| {
            let m = correlation(g, v[0], v[1])?;
            let (r_c, r_s) = cycle_reconstruct(g, m, v[1], v[0], 0.07)?;
            cycle_loss(g, v[0], v[1], r_c, r_s)
        },
    ));
    out
}

/// Comparisons against the loop oracles in `common`.
pub fn oracle_suite() -> Vec<Check> {
    let mut out = Vec::new();

    for (label, stride, pad) in [("conv2d vs direct loop s1 p1", 1, 1), ("conv2d vs direct loop s2 p1", 2, 1), ("conv2d vs direct loop s1 p0", 1, 0)] {
        let x = uniform(&[2, 3, 7, 7], 40 + stride as u64, -1.0, 1.0);
        let w = uniform(&[4, 3, 3, 3], 50 + pad as u64, -1.0, 1.0);
        let b = uniform(&[4], 60, -1.0, 1.0);
        let want = conv2d_direct(&x, &w, Some(&b), stride, pad);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x), g.constant(w), g.constant(b));
        let got = g.conv2d(xv, wv, Some(bv), stride, pad).map(|y| g.to_tensor(y));
        out.push(Check::from_result(
            label,
            got.map(|got| {
                let d = max_abs_diff(got.data(), want.data());
                Check::new(label, got.shape() == want.shape() && d < 1e-6, format!("max abs diff {d:.2e}"))
            }),
        ));
    }

    out.push(warp_oracle_check());
    out.push(style_oracle_check());
    out.push(content_oracle_check());

    let a = random_image(24, 28, 70);
    let pixels: Vec<f64> = a.pixels().iter().map(|v| 0.25 + 0.5 * v).collect();
    let b = dtp_core::Image::new(24, 28, pixels).unwrap();
    let label = "ssim vs sliding-window oracle";
    out.push(Check::from_result(
        label,
        image_io::ssim(&a, &b).map(|got| {
            let want = ssim_oracle(&a, &b);
            let d = (got - want).abs();
            Check::new(label, d < 1e-6, format!("engine {got:.9}, oracle {want:.9}, diff {d:.2e}"))
        }),
    ));
    out
}

fn warp_oracle_check() -> Check {
    let label = "warp at tau 1e-6 vs hard-NN gather";
    let mut r = rng(80);
    let mut trials = 0;
    loop {
        trials += 1;
        let fc = integers(&[16, 4], &mut r, -3, 3);
        let fs = integers(&[12, 4], &mut r, -3, 3);
        let m = correlation_oracle(fc.data(), fs.data(), 4);
        // exp(-gap / 1e-6) must underflow to zero for the gather to be exact.
        if min_row_gap(&m) < 1e-3 {
            if trials > 1000 {
                return Check::new(label, false, "no fixture with distinct row maxima".into());
            }
            continue;
        }
        let want = hard_nn_gather(&m, fs.data(), 4);
        let mut g = Graph::new();
        let (a, b) = (g.constant(fc), g.constant(fs.clone()));
        let got = correlation(&mut g, a, b).and_then(|mv| warp(&mut g, mv, b, 1e-6)).map(|v| g.data(v).to_vec());
        let pixels = integers(&[12, 3], &mut r, 0, 255);
        let want_px = hard_nn_gather(&m, pixels.data(), 3);
        let got_px = {
            let p = g.constant(pixels);
            correlation(&mut g, a, b).and_then(|mv| warp(&mut g, mv, p, 1e-6)).map(|v| g.data(v).to_vec())
        };
        return Check::from_result(
            label,
            got.and_then(|f| got_px.map(|p| (f, p))).map(|(f, p)| {
                let exact = f == want && p == want_px;
                Check::new(label, exact, format!("features {} values, pixels {} values, exact={exact}", f.len(), p.len()))
            }),
        );
    }
}

fn style_oracle_check() -> Check {
    let label = "style loss vs exhaustive patch-NN";
    let fo1 = uniform(&[1, 1, 4, 4], 90, -1.0, 1.0);
    let fs1 = uniform(&[1, 1, 4, 4], 91, -1.0, 1.0);
    let fo2 = uniform(&[1, 3, 6, 5], 92, 0.0, 1.0);
    let fs2 = uniform(&[1, 3, 5, 6], 93, 0.0, 1.0);
    let want = style_loss_oracle(&[(&fo1, &fs1), (&fo2, &fs2)], 3);
    let mut g = Graph::new();
    let (o1, s1, o2, s2) = (g.constant(fo1), g.constant(fs1), g.constant(fo2), g.constant(fs2));
    let fo: IndexMap<String, Var> = [("relu1_1".to_string(), o1), ("relu2_1".to_string(), o2)].into_iter().collect();
    let fs: IndexMap<String, Var> = [("relu1_1".to_string(), s1), ("relu2_1".to_string(), s2)].into_iter().collect();
    let layers = LayerSet { content_layers: vec![], style_layers: vec!["relu1_1".into(), "relu2_1".into()], patch_size: 3 };
    Check::from_result(
        label,
        style_loss(&mut g, &fo, &fs, &layers).and_then(|l| g.item(l)).map(|got| {
            let e = rel_err(got, want);
            Check::new(label, e < 1e-5, format!("engine {got:.9}, oracle {want:.9}, rel err {e:.2e}"))
        }),
    )
}

fn content_oracle_check() -> Check {
    let label = "content loss vs double-loop infoNCE";
    let fc1 = uniform(&[1, 5, 3, 3], 100, -1.0, 1.0);
    let fo1 = uniform(&[1, 5, 3, 3], 101, -1.0, 1.0);
    let fc2 = uniform(&[1, 4, 2, 4], 102, 0.0, 1.0);
    let want = content_loss_oracle(&[(&fc1, &fo1), (&fc2, &fc2)], 0.07);
    let mut g = Graph::new();
    let (c1, o1, c2) = (g.constant(fc1), g.constant(fo1), g.constant(fc2));
    let fc: IndexMap<String, Var> = [("relu1_1".to_string(), c1), ("relu2_1".to_string(), c2)].into_iter().collect();
    let fo: IndexMap<String, Var> = [("relu1_1".to_string(), o1), ("relu2_1".to_string(), c2)].into_iter().collect();
    let layers = LayerSet { content_layers: vec!["relu1_1".into(), "relu2_1".into()], style_layers: vec![], patch_size: 3 };
    Check::from_result(
        label,
        content_loss(&mut g, &fc, &fo, &layers, 0.07).and_then(|l| g.item(l)).map(|got| {
            let e = rel_err(got, want);
            Check::new(label, e < 1e-5, format!("engine {got:.9}, oracle {want:.9}, rel err {e:.2e}"))
        }),
    )
}

/// Hand-assembled `.dtpw` bytes, independent of the library writer.
pub struct Fixture {
    bytes: Vec<u8>,
}

impl Fixture {
    pub fn new(version: u32, count: u32) -> Self {
        let mut bytes = b"DTPW".to_vec();
        bytes.extend_from_slice(&version.to_le_bytes());
        bytes.extend_from_slice(&count.to_le_bytes());
        Fixture { bytes }
    }

    pub fn tensor_f32(mut self, name: &str, dims: &[u32], values: &[f32]) -> Self {
        self.bytes.extend_from_slice(&(name.len() as u16).to_le_bytes());
        self.bytes.extend_from_slice(name.as_bytes());
        self.bytes.push(0);
        self.bytes.push(dims.len() as u8);
        for d in dims {
            self.bytes.extend_from_slice(&d.to_le_bytes());
        }
        for v in values {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
        self
    }

    pub fn bytes(self) -> Vec<u8> {
        self.bytes
    }
}

/// Weight-container round trip and malformed-file taxonomy.
pub fn format_suite() -> Vec<Check> {
    let mut out = Vec::new();

    let label = "round trip bit-exact (f32 and f64)";
    let mut store = WeightStore::new();
    let mut r = rng(110);
    let mut specials = vec![0.0f32, -0.0, f32::MIN_POSITIVE, f32::MAX, 1e-45];
    specials.extend((0..59).map(|_| r.random_range(-10.0f32..10.0)));
    store.insert("a.weight", &Tensor::<f32>::from_vec(&[4, 2, 2, 4], specials).unwrap()).unwrap();
    store.insert("a.bias", &Tensor::<f32>::from_vec(&[4], vec![1.0, -2.0, 3.5, 0.25]).unwrap()).unwrap();
    store.insert("b", &uniform(&[3, 5], 111, -1.0, 1.0)).unwrap();
    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("w.dtpw");
    let round = store.save(&path).and_then(|_| WeightStore::load(&path));
    out.push(Check::from_result(
        label,
        round.map(|back| {
            let same_bits = store.iter().zip(back.iter()).all(|((na, a), (nb, b))| na == nb && bits(a) == bits(b));
            Check::new(label, same_bits && back.len() == 3, format!("{} tensors compared bitwise", back.len()))
        }),
    ));

    let good = Fixture::new(1, 1).tensor_f32("w", &[2], &[1.0, 2.0]).bytes();
    let label = "hand-built fixture loads";
    out.push(Check::from_result(
        label,
        WeightStore::from_bytes(&good).map(|s| {
            let ok = matches!(&s.get("w").map(|t| &t.data), Some(StoredData::F32(v)) if v == &[1.0, 2.0]);
            Check::new(label, ok, "1 tensor".into())
        }),
    ));

    let mut bad_magic = good.clone();
    bad_magic[..4].copy_from_slice(b"XXXX");
    out.push(expect_format("bad magic", &bad_magic, |e| matches!(e, FormatError::BadMagic { .. })));

    let mut bad_version = good.clone();
    bad_version[4..8].copy_from_slice(&7u32.to_le_bytes());
    out.push(expect_format("unsupported version", &bad_version, |e| matches!(e, FormatError::UnsupportedVersion(7))));

    let two = Fixture::new(1, 2).tensor_f32("first", &[1], &[1.0]).tensor_f32("second", &[3], &[1.0, 2.0, 3.0]).bytes();
    let truncated = &two[..two.len() - 2];
    out.push(expect_format("truncated payload names tensor", truncated, |e| {
        matches!(e, FormatError::TruncatedPayload { tensor } if tensor == "second")
    }));

    let dup = Fixture::new(1, 2).tensor_f32("x", &[1], &[1.0]).tensor_f32("x", &[1], &[2.0]).bytes();
    out.push(expect_format("duplicate name", &dup, |e| matches!(e, FormatError::DuplicateName(n) if n == "x")));
    out
}

fn bits(t: &StoredTensor) -> (Vec<usize>, Vec<u64>) {
    let raw = match &t.data {
        StoredData::F32(v) => v.iter().map(|x| x.to_bits() as u64).collect(),
        StoredData::F64(v) => v.iter().map(|x| x.to_bits()).collect(),
    };
    (t.dims.clone(), raw)
}

fn expect_format(label: &str, bytes: &[u8], want: impl Fn(&FormatError) -> bool) -> Check {
    match WeightStore::from_bytes(bytes) {
        Err(Error::Format(e)) => Check::new(label, want(&e), format!("error: {e}")),
        Err(other) => Check::new(label, false, format!("wrong error kind: {other}")),
        Ok(_) => Check::new(label, false, "malformed file was accepted".into()),
    }
}
