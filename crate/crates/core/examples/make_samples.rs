//! Regenerates the bundled sample pairs under `tests/data/`.
//!
//! `cargo run -p dtp-core --example make_samples [out_dir]`

use std::f64::consts::PI;
use std::path::PathBuf;

use dtp_core::image_io::save_png;
use dtp_core::{Image, Result};

const SIZE: usize = 128;

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * t)
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Sum of a few low-frequency sinusoids; smooth, deterministic texture.
fn ripple(x: f64, y: f64, seed: f64) -> f64 {
    let mut v = 0.0;
    for k in 1..=4 {
        let f = k as f64 * 1.7;
        v += ((x * f + seed * k as f64) * 2.0 * PI * 0.9).sin() * ((y * f * 1.3 - seed) * 2.0 * PI * 0.7).cos() / k as f64;
    }
    v * 0.5
}

fn render(f: impl Fn(f64, f64) -> [f64; 3]) -> Result<Image> {
    let mut px = Vec::with_capacity(SIZE * SIZE * 3);
    for y in 0..SIZE {
        for x in 0..SIZE {
            let (u, v) = ((x as f64 + 0.5) / SIZE as f64, (y as f64 + 0.5) / SIZE as f64);
            px.extend(f(u, v).map(|c| c.clamp(0.0, 1.0)));
        }
    }
    Image::new(SIZE, SIZE, px)
}

/// Daylight valley: sky, two hill ridges, a lake.
fn landscape_day(u: f64, v: f64) -> [f64; 3] {
    let sky = mix([0.45, 0.65, 0.92], [0.85, 0.92, 0.98], v / 0.5);
    let ridge1 = 0.42 + 0.08 * (u * 2.0 * PI * 1.3).sin() + 0.03 * (u * 2.0 * PI * 3.1 + 1.0).sin();
    let ridge2 = 0.58 + 0.06 * (u * 2.0 * PI * 0.8 + 2.0).sin();
    let shore = 0.78 + 0.02 * (u * 2.0 * PI * 2.0).sin();
    let far = mix([0.35, 0.48, 0.55], [0.30, 0.42, 0.45], ripple(u, v, 0.3) + 0.5);
    let near = mix([0.22, 0.45, 0.18], [0.40, 0.58, 0.22], ripple(u, v, 1.1) + 0.5);
    let lake = mix([0.20, 0.35, 0.55], [0.35, 0.55, 0.75], 0.5 + 0.5 * (v * 40.0 + ripple(u, v, 2.0)).sin() * 0.3);
    let mut c = sky;
    c = mix(c, far, smoothstep(ridge1 - 0.01, ridge1 + 0.01, v));
    c = mix(c, near, smoothstep(ridge2 - 0.01, ridge2 + 0.01, v));
    mix(c, lake, smoothstep(shore - 0.01, shore + 0.01, v))
}

/// Warm dusk palette over different geometry: low sun, dunes.
fn dusk_dunes(u: f64, v: f64) -> [f64; 3] {
    let sky = mix([0.98, 0.62, 0.30], [0.45, 0.20, 0.42], 1.0 - v / 0.55);
    let sun_d = ((u - 0.7).powi(2) + (v - 0.38).powi(2)).sqrt();
    let sky = mix(sky, [1.0, 0.92, 0.70], 1.0 - smoothstep(0.05, 0.09, sun_d));
    let dune = 0.52 + 0.1 * (u * 2.0 * PI * 0.6 + 0.5).sin();
    let sand = mix([0.55, 0.30, 0.18], [0.85, 0.55, 0.30], 0.5 + ripple(u * 0.7, v, 0.8));
    mix(sky, sand, smoothstep(dune - 0.015, dune + 0.015, v))
}

/// Indoor still life: table, wall, round fruit.
fn still_life(u: f64, v: f64) -> [f64; 3] {
    let wall = mix([0.80, 0.76, 0.68], [0.62, 0.58, 0.52], u * 0.6 + v * 0.4);
    let table_edge = 0.62;
    let wood = mix([0.45, 0.28, 0.15], [0.60, 0.40, 0.22], 0.5 + 0.5 * (u * 30.0 + 3.0 * ripple(u, v, 0.2)).sin());
    let mut c = mix(wall, wood, smoothstep(table_edge - 0.01, table_edge + 0.01, v));
    for (cx, cy, r, col) in [(0.35, 0.56, 0.13, [0.80, 0.18, 0.12]), (0.62, 0.58, 0.10, [0.92, 0.70, 0.15]), (0.48, 0.66, 0.08, [0.35, 0.60, 0.20])] {
        let d = ((u - cx).powi(2) + (v - cy).powi(2)).sqrt();
        let shade = 1.0 - 0.45 * smoothstep(0.0, r, ((u - cx + r * 0.4).powi(2) + (v - cy + r * 0.4).powi(2)).sqrt());
        let fruit = col.map(|x| x * shade + 0.05);
        c = mix(c, fruit, 1.0 - smoothstep(r - 0.008, r + 0.008, d));
    }
    c
}

/// Cool seascape: teal water bands, pale sky, a rock.
fn seascape(u: f64, v: f64) -> [f64; 3] {
    let sky = mix([0.70, 0.82, 0.86], [0.88, 0.90, 0.86], v / 0.4);
    let horizon = 0.4;
    let water = mix([0.05, 0.35, 0.42], [0.15, 0.55, 0.58], 0.5 + 0.5 * (v * 25.0 + 2.0 * ripple(u, v, 1.7)).sin());
    let mut c = mix(sky, water, smoothstep(horizon - 0.005, horizon + 0.005, v));
    let d = ((u - 0.3) / 0.18).powi(2) + ((v - 0.62) / 0.12).powi(2);
    let rock = mix([0.25, 0.24, 0.22], [0.45, 0.42, 0.38], 0.5 + ripple(u * 2.0, v * 2.0, 0.4));
    c = mix(c, rock, 1.0 - smoothstep(0.9, 1.1, d));
    c
}

/// Small probe for the weight-export golden check.
fn probe(u: f64, v: f64) -> [f64; 3] {
    [0.5 + 0.4 * (u * 2.0 * PI).sin() * v, 0.3 + 0.5 * u * v, 0.6 - 0.4 * v + 0.1 * ripple(u, v, 0.1)]
}

fn main() -> Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("crates/core/tests/data"));
    std::fs::create_dir_all(&out).map_err(|e| dtp_core::Error::Io { context: format!("creating {}", out.display()), source: e })?;
    save_png(&render(landscape_day)?, out.join("pair_a_content.png"))?;
    save_png(&render(dusk_dunes)?, out.join("pair_a_style.png"))?;
    save_png(&render(still_life)?, out.join("pair_b_content.png"))?;
    save_png(&render(seascape)?, out.join("pair_b_style.png"))?;
    let mut px = Vec::with_capacity(64 * 64 * 3);
    for y in 0..64 {
        for x in 0..64 {
            px.extend(probe((x as f64 + 0.5) / 64.0, (y as f64 + 0.5) / 64.0).map(|c| c.clamp(0.0, 1.0)));
        }
    }
    save_png(&Image::new(64, 64, px)?, out.join("probe.png"))?;
    println!("wrote samples to {}", out.display());
    Ok(())
}
