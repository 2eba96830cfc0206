//! Dense soft correspondence between content and style feature maps.
//!
//! Features are handled as P×C matrices ("flat features") with position
//! `u = y·W + x` on rows.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Norm floor of the cosine denominator.
pub const COSINE_EPS: f64 = 1e-8;

/// 1×C×H×W → (H·W)×C.
pub fn flatten<T: Scalar>(g: &mut Graph<T>, feature: Var) -> Result<Var> {
    let [n, c, h, w] = g.value(feature).dims4()?;
    if n != 1 {
        return Err(Error::contract(format!("flatten: batch must be 1, got {n}")));
    }
    let cp = g.reshape(feature, &[c, h * w])?;
    g.transpose(cp)
}

/// (H·W)×C → 1×C×H×W.
pub fn unflatten<T: Scalar>(g: &mut Graph<T>, flat: Var, h: usize, w: usize) -> Result<Var> {
    let [p, c] = g.value(flat).dims2()?;
    if p != h * w {
        return Err(Error::contract(format!("unflatten: {p} positions do not form a {h}×{w} grid")));
    }
    let cp = g.transpose(flat)?;
    g.reshape(cp, &[1, c, h, w])
}

/// Subtracts each channel's spatial mean.
pub fn centralize<T: Scalar>(g: &mut Graph<T>, flat: Var) -> Result<Var> {
    g.center_columns(flat)
}

/// Cosine similarity of centralized features, `M[u, v]`, of shape
/// P_content × P_style.
pub fn correlation<T: Scalar>(g: &mut Graph<T>, fc: Var, fs: Var) -> Result<Var> {
    let [_, cc] = g.value(fc).dims2()?;
    let [_, cs] = g.value(fs).dims2()?;
    if cc != cs {
        return Err(Error::contract(format!("correlation: {cc} content channels vs {cs} style channels")));
    }
    let eps = T::of_f64(COSINE_EPS);
    let a = centralize(g, fc)?;
    let a = g.normalize_rows(a, eps)?;
    let b = centralize(g, fs)?;
    let b = g.normalize_rows(b, eps)?;
    let bt = g.transpose(b)?;
    g.matmul(a, bt)
}

/// `r(u) = Σ_v softmax_v(M[u, v] / τ) · values(v)`. Works for feature rows
/// and for pixel rows alike.
pub fn warp<T: Scalar>(g: &mut Graph<T>, m: Var, values: Var, tau: T) -> Result<Var> {
    let [_, q] = g.value(m).dims2()?;
    let [p, _] = g.value(values).dims2()?;
    if q != p {
        return Err(Error::contract(format!("warp: correlation has {q} columns but {p} source rows")));
    }
    let weights = g.softmax_rows(m, tau)?;
    g.matmul(weights, values)
}

/// Warps a 1×3×h×w style image whose grid matches the correlation columns;
/// returns a 1×3×hc×wc image on the content grid.
pub fn warp_image<T: Scalar>(g: &mut Graph<T>, m: Var, style: Var, content_hw: (usize, usize), tau: T) -> Result<Var> {
    let flat = flatten(g, style)?;
    let warped = warp(g, m, flat, tau)?;
    unflatten(g, warped, content_hw.0, content_hw.1)
}

/// Forward-then-backward warps. Returns `(r_C, r_S)` where
/// `r_S = B (A f_S)` and `r_C = A (B f_C)`, with `A` the row softmax of
/// `M / τ` and `B` the row softmax of `Mᵀ / τ`.
pub fn cycle_reconstruct<T: Scalar>(g: &mut Graph<T>, m: Var, fs: Var, fc: Var, tau: T) -> Result<(Var, Var)> {
    let [p, q] = g.value(m).dims2()?;
    let [pc, _] = g.value(fc).dims2()?;
    let [ps, _] = g.value(fs).dims2()?;
    if pc != p || ps != q {
        return Err(Error::contract(format!(
            "cycle_reconstruct: correlation {p}×{q} vs {pc} content and {ps} style positions"
        )));
    }
    let a = g.softmax_rows(m, tau)?;
    let mt = g.transpose(m)?;
    let b = g.softmax_rows(mt, tau)?;
    let s_on_c = g.matmul(a, fs)?;
    let r_s = g.matmul(b, s_on_c)?;
    let c_on_s = g.matmul(b, fc)?;
    let r_c = g.matmul(a, c_on_s)?;
    Ok((r_c, r_s))
}

/// Best style match per content position, first index on ties.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPoint {
    pub u: usize,
    pub argmax_v: usize,
    pub similarity: f64,
}

pub fn matched_points<T: Scalar>(m: &Tensor<T>) -> Result<Vec<MatchedPoint>> {
    let [p, q] = m.dims2()?;
    if q == 0 {
        return Ok(Vec::new());
    }
    Ok(m.data()
        .chunks_exact(q)
        .take(p)
        .enumerate()
        .map(|(u, row)| {
            let mut best = 0;
            for (v, x) in row.iter().enumerate() {
                if *x > row[best] {
                    best = v;
                }
            }
            MatchedPoint { u, argmax_v: best, similarity: row[best].as_f64() }
        })
        .collect())
}

/// CSV with header `u,argmax_v,similarity`.
pub fn matched_points_csv(points: &[MatchedPoint]) -> String {
    let mut out = String::from("u,argmax_v,similarity\n");
    for p in points {
        writeln!(out, "{},{},{}", p.u, p.argmax_v, p.similarity).expect("writing to a String");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(g: &mut Graph<f64>, rows: usize, cols: usize, data: &[f64]) -> Var {
        g.constant(Tensor::from_vec(&[rows, cols], data.to_vec()).unwrap())
    }

    #[test]
    fn two_position_example() {
        let mut g = Graph::new();
        let f = mat(&mut g, 2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let cen = centralize(&mut g, f).unwrap();
        assert_eq!(g.data(cen), &[0.5, -0.5, -0.5, 0.5]);
        let m = correlation(&mut g, f, f).unwrap();
        let want = [1.0, -1.0, -1.0, 1.0];
        assert!(g.data(m).iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn constant_content_gives_zero_correlation() {
        let mut g = Graph::new();
        let fc = mat(&mut g, 3, 2, &[2.0, 1.0, 2.0, 1.0, 2.0, 1.0]);
        let fs = mat(&mut g, 2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let m = correlation(&mut g, fc, fs).unwrap();
        assert!(g.data(m).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sharp_warp_selects_best_match() {
        let mut g = Graph::new();
        let m = mat(&mut g, 2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let fs = mat(&mut g, 2, 3, &[1.0, 2.0, 3.0, -4.0, 5.0, 6.0]);
        let r = warp(&mut g, m, fs, 0.07).unwrap();
        let d = g.data(r);
        assert!((d[0] - 1.0).abs() < 1e-9 && (d[3] + 4.0).abs() < 1e-9);
    }

    #[test]
    fn uniform_cycle_averages() {
        let mut g = Graph::new();
        let m = mat(&mut g, 2, 3, &[0.0; 6]);
        let fs = mat(&mut g, 3, 1, &[1.0, 2.0, 6.0]);
        let fc = mat(&mut g, 2, 1, &[4.0, 0.0]);
        let (r_c, r_s) = cycle_reconstruct(&mut g, m, fs, fc, 0.07).unwrap();
        assert!(g.data(r_s).iter().all(|&x| (x - 3.0).abs() < 1e-12));
        assert!(g.data(r_c).iter().all(|&x| (x - 2.0).abs() < 1e-12));
    }

    #[test]
    fn flatten_round_trip() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(&[1, 2, 2, 3], (0..12).map(f64::from).collect()).unwrap());
        let f = flatten(&mut g, x).unwrap();
        assert_eq!(g.shape(f), &[6, 2]);
        assert_eq!(&g.data(f)[..4], &[0.0, 6.0, 1.0, 7.0]);
        let back = unflatten(&mut g, f, 2, 3).unwrap();
        assert_eq!(g.data(back), g.data(x));
    }

    #[test]
    fn matched_points_csv_format() {
        let m = Tensor::<f64>::from_vec(&[2, 2], vec![0.5, 0.5, -0.25, 0.75]).unwrap();
        let csv = matched_points_csv(&matched_points(&m).unwrap());
        assert_eq!(csv, "u,argmax_v,similarity\n0,0,0.5\n1,1,0.75\n");
    }
}
