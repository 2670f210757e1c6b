use rand::Rng;

use super::config::Augmentations;
use crate::geometry::CartesianPoint;
use crate::sampler::{sample_plane, Image};
use crate::tensor::Tensor;

/// Uniform over `[m(W-1), (1-m)(W-1)] x [m(H-1), (1-m)(H-1)]`; a margin of
/// one half always returns the image center.
pub fn sample_init_center<R: Rng + ?Sized>(
    rng: &mut R,
    height: usize,
    width: usize,
    margin: f64,
) -> CartesianPoint {
    let axis = |rng: &mut R, n: usize| {
        let span = (n - 1) as f64;
        let (lo, hi) = (margin * span, (1.0 - margin) * span);
        if hi > lo {
            rng.gen_range(lo..=hi)
        } else {
            span / 2.0
        }
    };
    let x = axis(rng, width);
    let y = axis(rng, height);
    CartesianPoint::new(x, y)
}

/// Random flip, zoom and (for color images) jitter drawn from `aug`.
pub fn augment<R: Rng + ?Sized>(img: &Image<f32>, rng: &mut R, aug: &Augmentations) -> Image<f32> {
    let mut out = img.clone();
    if aug.flip && rng.gen_bool(0.5) {
        out = flip_horizontal(&out);
    }
    if let Some((lo, hi)) = aug.zoom {
        let c = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        if c != 1.0 {
            out = zoom(&out, c);
        }
    }
    if out.channels() == 3 {
        if let Some((lo, hi)) = aug.brightness {
            let f = rng.gen_range(lo..=hi) as f32;
            out = map_pixels(&out, |p| p.map(|v| v * f));
        }
        if let Some((lo, hi)) = aug.contrast {
            let f = rng.gen_range(lo..=hi) as f32;
            let mean = out.tensor().sum() / out.tensor().len() as f32;
            out = map_pixels(&out, |p| p.map(|v| mean + (v - mean) * f));
        }
        if let Some((lo, hi)) = aug.saturation {
            let f = rng.gen_range(lo..=hi) as f32;
            out = map_pixels(&out, |[r, g, b]| {
                let gray = luma(r, g, b);
                [
                    gray + (r - gray) * f,
                    gray + (g - gray) * f,
                    gray + (b - gray) * f,
                ]
            });
        }
        if let Some(amp) = aug.hue {
            let turns = rng.gen_range(-amp..=amp);
            out = rotate_hue(&out, turns);
        }
        out = map_pixels(&out, |p| p.map(|v| v.clamp(0.0, 1.0)));
    }
    out
}

pub fn flip_horizontal(img: &Image<f32>) -> Image<f32> {
    let w = img.width();
    Image::from_fn(img.channels(), img.height(), w, |c, y, x| {
        img.pixel(c, y, w - 1 - x)
    })
    .expect("same shape")
}

/// Scales content by `c` about the image center with bilinear resampling;
/// samples falling outside the source read zero.
pub fn zoom(img: &Image<f32>, c: f64) -> Image<f32> {
    let (h, w) = (img.height(), img.width());
    let center = img.center();
    Image::from_fn(img.channels(), h, w, |ch, y, x| {
        let sx = center.x + (x as f64 - center.x) / c;
        let sy = center.y + (y as f64 - center.y) / c;
        sample_plane(img.plane(ch), h, w, sx, sy)
    })
    .expect("same shape")
}

fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

fn map_pixels(img: &Image<f32>, f: impl Fn([f32; 3]) -> [f32; 3]) -> Image<f32> {
    let hw = img.height() * img.width();
    let src = img.tensor().data();
    let mut data = vec![0.0; 3 * hw];
    for k in 0..hw {
        let px = f([src[k], src[hw + k], src[2 * hw + k]]);
        data[k] = px[0];
        data[hw + k] = px[1];
        data[2 * hw + k] = px[2];
    }
    Image::new(Tensor::from_vec(&[3, img.height(), img.width()], data).expect("same size"))
        .expect("three channels")
}

/// Rotates chroma in YIQ space by `turns` of a full circle.
fn rotate_hue(img: &Image<f32>, turns: f64) -> Image<f32> {
    let (s, c) = (turns * std::f64::consts::TAU).sin_cos();
    let (s, c) = (s as f32, c as f32);
    map_pixels(img, |[r, g, b]| {
        let y = luma(r, g, b);
        let i = 0.596 * r - 0.274 * g - 0.322 * b;
        let q = 0.211 * r - 0.523 * g + 0.312 * b;
        let (i, q) = (c * i - s * q, s * i + c * q);
        [
            y + 0.956 * i + 0.621 * q,
            y - 0.272 * i - 0.647 * q,
            y - 1.106 * i + 1.703 * q,
        ]
    })
}
