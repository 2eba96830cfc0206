mod common;

use dtp_core::correspondence::{centralize, correlation, warp};
use dtp_core::image_io::{resize_bilinear, ssim};
use dtp_core::{Graph, Image, Tensor, WeightStore};
use proptest::prelude::*;

fn image(h: usize, w: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0.0f64..=1.0, h * w * 3).prop_map(move |px| Image::new(h, w, px).unwrap())
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |v| Tensor::from_vec(&[rows, cols], v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ssim_symmetric_and_bounded(a in image(12, 13), b in image(12, 13)) {
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab <= 1.0 + 1e-12 && ab >= -1.0 - 1e-12);
        prop_assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn resize_preserves_constants(rgb in prop::array::uniform3(0.0f64..=1.0), h in 1usize..9, w in 1usize..9, oh in 1usize..17, ow in 1usize..17) {
        let img = Image::filled(h, w, rgb).unwrap();
        let out = resize_bilinear(&img, oh, ow).unwrap();
        for (i, v) in out.pixels().iter().enumerate() {
            prop_assert!((v - rgb[i % 3]).abs() < 1e-12);
        }
    }

    #[test]
    fn resize_stays_within_input_range(img in image(5, 7), oh in 1usize..20, ow in 1usize..20) {
        let lo = img.pixels().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = img.pixels().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let out = resize_bilinear(&img, oh, ow).unwrap();
        prop_assert!(out.pixels().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }

    #[test]
    fn centralize_is_idempotent(m in matrix(6, 4)) {
        let mut g = Graph::<f64>::new();
        let x = g.constant(m);
        let once = centralize(&mut g, x).unwrap();
        let twice = centralize(&mut g, once).unwrap();
        let d = common::max_abs_diff(g.data(once), g.data(twice));
        prop_assert!(d < 1e-12);
    }

    #[test]
    fn warp_rows_are_convex_combinations(fc in matrix(5, 3), fs in matrix(4, 3), tau in 0.01f64..2.0) {
        let mut g = Graph::<f64>::new();
        let (a, b) = (g.constant(fc), g.constant(fs.clone()));
        let m = correlation(&mut g, a, b).unwrap();
        let out = warp(&mut g, m, b, tau).unwrap();
        for row in g.data(out).chunks(3) {
            for (ch, v) in row.iter().enumerate() {
                let col = fs.data().iter().skip(ch).step_by(3);
                let lo = col.clone().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
            }
        }
        let ones = g.constant(Tensor::full(&[4, 1], 1.0));
        let sums = warp(&mut g, m, ones, tau).unwrap();
        prop_assert!(g.data(sums).iter().all(|s| (s - 1.0).abs() < 1e-12));
    }

    #[test]
    fn correlation_is_bounded_cosine(fc in matrix(5, 3), fs in matrix(4, 3)) {
        let mut g = Graph::<f64>::new();
        let (a, b) = (g.constant(fc), g.constant(fs));
        let m = correlation(&mut g, a, b).unwrap();
        prop_assert!(g.data(m).iter().all(|v| v.abs() <= 1.0 + 1e-12));
    }

    #[test]
    fn weight_store_round_trip(values in prop::collection::vec(any::<f32>(), 1..40), wide in prop::collection::vec(any::<f64>(), 1..10)) {
        let mut store = WeightStore::new();
        store.insert("narrow", &Tensor::<f32>::from_vec(&[values.len()], values).unwrap()).unwrap();
        store.insert("wide", &Tensor::<f64>::from_vec(&[1, wide.len()], wide).unwrap()).unwrap();
        let bytes = store.to_bytes().unwrap();
        let back = WeightStore::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }
}
