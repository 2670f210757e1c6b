//! Overlay drawing for trace exports.

use retinotopic::geometry::CartesianPoint;
use retinotopic::sampler::Image;
use retinotopic::tensor::Tensor;

pub fn to_rgb(img: &Image<f32>) -> Image<f32> {
    if img.channels() == 3 {
        return img.clone();
    }
    Image::from_fn(3, img.height(), img.width(), |_, y, x| img.pixel(0, y, x))
        .expect("three channels")
}

pub fn upscale(img: &Image<f32>, s: usize) -> Image<f32> {
    Image::from_fn(
        img.channels(),
        img.height() * s,
        img.width() * s,
        |c, y, x| img.pixel(c, y / s, x / s),
    )
    .expect("same channels")
}

/// Maps a source-pixel coordinate onto an image magnified `s` times.
pub fn scale_point(p: CartesianPoint, s: usize) -> CartesianPoint {
    let s = s as f64;
    CartesianPoint::new((p.x + 0.5) * s - 0.5, (p.y + 0.5) * s - 0.5)
}

fn put(t: &mut Tensor<f32>, h: usize, w: usize, x: i64, y: i64, rgb: [f32; 3]) {
    if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
        return;
    }
    for (c, v) in rgb.iter().enumerate() {
        *t.at_mut(&[c, y as usize, x as usize]) = *v;
    }
}

/// Draws segments between consecutive points and a small square at each.
pub fn draw_path(
    img: &Image<f32>,
    points: &[CartesianPoint],
    line: [f32; 3],
    marker: [f32; 3],
) -> Image<f32> {
    let (h, w) = (img.height(), img.width());
    let mut t = img.tensor().clone();
    for pair in points.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let steps = (a.distance(&b).ceil() as usize).max(1) * 2;
        for k in 0..=steps {
            let f = k as f64 / steps as f64;
            let x = (a.x + (b.x - a.x) * f).round() as i64;
            let y = (a.y + (b.y - a.y) * f).round() as i64;
            put(&mut t, h, w, x, y, line);
        }
    }
    for p in points {
        let (x, y) = (p.x.round() as i64, p.y.round() as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                put(&mut t, h, w, x + dx, y + dy, marker);
            }
        }
    }
    Image::new(t).expect("same shape")
}
