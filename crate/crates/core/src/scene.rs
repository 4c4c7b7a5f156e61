//! Procedural sRGB scenes standing in for a photographic HR corpus.
//!
//! Each scene layers a colour gradient, oriented sinusoidal gratings, and a
//! handful of anti-aliased discs, bars and checker patches, so it carries both
//! smooth regions and edges at many orientations and frequencies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::RgbImage;

fn smooth_edge(d: f64, width: f64) -> f64 {
    // 1 inside (d < 0), 0 outside, linear ramp over `width` pixels
    (0.5 - d / width).clamp(0.0, 1.0)
}

fn random_colour(rng: &mut impl Rng) -> [f64; 3] {
    [
        rng.random_range(0.05..0.95),
        rng.random_range(0.05..0.95),
        rng.random_range(0.05..0.95),
    ]
}

enum Shape {
    Disc {
        cy: f64,
        cx: f64,
        r: f64,
    },
    Bar {
        cy: f64,
        cx: f64,
        half_len: f64,
        half_wid: f64,
        cos: f64,
        sin: f64,
    },
    Checker {
        cy: f64,
        cx: f64,
        half: f64,
        period: f64,
    },
}

impl Shape {
    /// Coverage in [0, 1] at pixel centre (y, x).
    fn coverage(&self, y: f64, x: f64) -> f64 {
        match *self {
            Shape::Disc { cy, cx, r } => smooth_edge(((y - cy).powi(2) + (x - cx).powi(2)).sqrt() - r, 1.0),
            Shape::Bar {
                cy,
                cx,
                half_len,
                half_wid,
                cos,
                sin,
            } => {
                let (dy, dx) = (y - cy, x - cx);
                let u = (dx * cos + dy * sin).abs() - half_len;
                let v = (-dx * sin + dy * cos).abs() - half_wid;
                smooth_edge(u.max(v), 1.0)
            }
            Shape::Checker { cy, cx, half, period } => {
                let (dy, dx) = (y - cy, x - cx);
                let inside = smooth_edge(dy.abs().max(dx.abs()) - half, 1.0);
                if inside == 0.0 {
                    return 0.0;
                }
                let cell = ((dy / period).floor() + (dx / period).floor()) as i64;
                if cell.rem_euclid(2) == 0 {
                    inside
                } else {
                    0.0
                }
            }
        }
    }
}

/// Deterministic random scene of the given size.
pub fn procedural_scene(height: usize, width: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (height as f64, width as f64);
    let c0 = random_colour(&mut rng);
    let c1 = random_colour(&mut rng);
    let grad_angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let gratings: Vec<([f64; 3], f64, f64, f64)> = (0..3)
        .map(|_| {
            let amp = [
                rng.random_range(0.0..0.08),
                rng.random_range(0.0..0.08),
                rng.random_range(0.0..0.08),
            ];
            let freq = rng.random_range(0.05..0.6);
            let ang: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (amp, freq * ang.cos(), freq * ang.sin(), phase)
        })
        .collect();
    let n_shapes = rng.random_range(6..14);
    let scale = hf.min(wf);
    let shapes: Vec<(Shape, [f64; 3], f64)> = (0..n_shapes)
        .map(|_| {
            let cy = rng.random_range(0.0..hf);
            let cx = rng.random_range(0.0..wf);
            let shape = match rng.random_range(0..3) {
                0 => Shape::Disc {
                    cy,
                    cx,
                    r: rng.random_range(0.04..0.25) * scale,
                },
                1 => {
                    let a: f64 = rng.random_range(0.0..std::f64::consts::PI);
                    Shape::Bar {
                        cy,
                        cx,
                        half_len: rng.random_range(0.1..0.4) * scale,
                        half_wid: rng.random_range(0.5..0.06 * scale.max(10.0)),
                        cos: a.cos(),
                        sin: a.sin(),
                    }
                }
                _ => Shape::Checker {
                    cy,
                    cx,
                    half: rng.random_range(0.08..0.2) * scale,
                    period: rng.random_range(2.0..8.0),
                },
            };
            (shape, random_colour(&mut rng), rng.random_range(0.6..1.0))
        })
        .collect();

    let (gs, gc) = grad_angle.sin_cos();
    RgbImage::from_fn(height, width, |(y, x, c)| {
        let (yf, xf) = (y as f64, x as f64);
        let t = (((xf - wf / 2.0) * gc + (yf - hf / 2.0) * gs) / (hf + wf) + 0.5).clamp(0.0, 1.0);
        let mut v = c0[c] * (1.0 - t) + c1[c] * t;
        for (amp, fx, fy, ph) in &gratings {
            v += amp[c] * (fx * xf + fy * yf + ph).sin();
        }
        for (shape, col, alpha) in &shapes {
            let a = alpha * shape.coverage(yf, xf);
            v = v * (1.0 - a) + col[c] * a;
        }
        v.clamp(0.0, 1.0) as f32
    })
}
