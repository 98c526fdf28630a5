//! Deterministic synthetic photographs: smooth gradients, soft-edged shapes,
//! low-frequency texture and sensor-like noise. Used to build test corpora
//! and desk-scale training sets without shipping image files.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::transform::{ColorSpace, PlanarImage};

fn random_color<R: Rng>(rng: &mut R) -> [f64; 3] {
    [rng.gen_range(0.0..255.0), rng.gen_range(0.0..255.0), rng.gen_range(0.0..255.0)]
}

/// RGB image with values in `[0, 255]` (not rounded).
pub fn natural_image<R: Rng>(rng: &mut R, height: usize, width: usize) -> PlanarImage {
    let (hf, wf) = (height as f64, width as f64);
    let c0 = random_color(rng);
    let c1 = random_color(rng);
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());

    struct Shape {
        cy: f64,
        cx: f64,
        ry: f64,
        rx: f64,
        color: [f64; 3],
        soft: f64,
        ellipse: bool,
    }
    let shapes: Vec<Shape> = (0..rng.gen_range(2..7))
        .map(|_| Shape {
            cy: rng.gen_range(0.0..hf),
            cx: rng.gen_range(0.0..wf),
            ry: rng.gen_range(0.08..0.4) * hf,
            rx: rng.gen_range(0.08..0.4) * wf,
            color: random_color(rng),
            soft: rng.gen_range(0.5..4.0),
            ellipse: rng.gen_bool(0.6),
        })
        .collect();

    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.02..0.25),
                rng.gen_range(0.02..0.25),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(2.0..14.0),
            )
        })
        .collect();
    let noise_sigma = rng.gen_range(0.5..4.0);
    let noise = Normal::new(0.0, noise_sigma).expect("positive sigma");

    let mut img = PlanarImage::filled(ColorSpace::Rgb, height, width, 0.0);
    for y in 0..height {
        for x in 0..width {
            let (yf, xf) = (y as f64, x as f64);
            let t = ((xf / wf - 0.5) * dx + (yf / hf - 0.5) * dy + 0.7) / 1.4;
            let t = t.clamp(0.0, 1.0);
            let mut px = [0.0; 3];
            for c in 0..3 {
                px[c] = c0[c] * (1.0 - t) + c1[c] * t;
            }
            for s in &shapes {
                let (ny, nx) = ((yf - s.cy) / s.ry, (xf - s.cx) / s.rx);
                let d = if s.ellipse { (ny * ny + nx * nx).sqrt() } else { ny.abs().max(nx.abs()) };
                // Soft edge: 1 inside, 0 outside, ramp width ~ soft pixels.
                let edge = ((1.0 - d) * s.rx.min(s.ry) / s.soft).clamp(0.0, 1.0);
                for c in 0..3 {
                    px[c] = px[c] * (1.0 - edge) + s.color[c] * edge;
                }
            }
            let tex: f64 = waves.iter().map(|&(fy, fx, ph, amp)| amp * (fy * yf + fx * xf + ph).sin()).sum();
            for c in 0..3 {
                let v = px[c] + tex + noise.sample(rng);
                img.set(c, y, x, v.clamp(0.0, 255.0));
            }
        }
    }
    img
}

/// Interleaved 8-bit version of [`natural_image`].
pub fn natural_image_rgb8<R: Rng>(rng: &mut R, height: usize, width: usize) -> Vec<u8> {
    natural_image(rng, height, width).to_rgb8()
}
