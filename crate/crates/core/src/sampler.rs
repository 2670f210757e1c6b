//! Differentiable log-polar warping by reverse mapping.
//!
//! Every destination cell `(i, j)` of the log-polar patch is mapped back to a
//! source location `center + e^{rho_j} (cos phi_i, sin phi_i)` and read with
//! bilinear interpolation. Neighbours outside the image read as zero, so the
//! warp and its gradient are defined for any center.
//!
//! Because the reverse map is additive in the center, the derivative of a
//! sample location with respect to the center is the identity and the center
//! gradient is just the spatial image gradient summed over the grid.

use crate::geometry::{make_grid, CartesianPoint, GridSpec};
use crate::real::Real;
use crate::tensor::{ensure_contract, ContractViolation, Tensor};

/// A `(channels, height, width)` source image with 1 or 3 channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T = f32> {
    data: Tensor<T>,
}

impl<T: Real> Image<T> {
    pub fn new(data: Tensor<T>) -> Result<Self, ContractViolation> {
        ensure_contract!(
            data.rank() == 3,
            "Image::new",
            "expected (C, H, W), got {:?}",
            data.shape()
        );
        let c = data.shape()[0];
        ensure_contract!(
            c == 1 || c == 3,
            "Image::new",
            "channels must be 1 or 3, got {c}"
        );
        ensure_contract!(
            data.shape()[1] > 0 && data.shape()[2] > 0,
            "Image::new",
            "empty image {:?}",
            data.shape()
        );
        Ok(Self { data })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        f: impl Fn(usize, usize, usize) -> T,
    ) -> Result<Self, ContractViolation> {
        let plane = height * width;
        Self::new(Tensor::from_fn(&[channels, height, width], |idx| {
            f(idx / plane, (idx % plane) / width, idx % width)
        }))
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.data
    }

    pub fn plane(&self, channel: usize) -> &[T] {
        let n = self.height() * self.width();
        &self.data.data()[channel * n..(channel + 1) * n]
    }

    /// Value of pixel `(row, col)` in `channel`.
    pub fn pixel(&self, channel: usize, row: usize, col: usize) -> T {
        self.plane(channel)[row * self.width() + col]
    }

    pub fn center(&self) -> CartesianPoint {
        CartesianPoint::new(
            (self.width() - 1) as f64 / 2.0,
            (self.height() - 1) as f64 / 2.0,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerParams {
    pub center: CartesianPoint,
    pub spec: GridSpec,
}

/// Reverse-mapped source coordinates, shape `(h', w', 2)` holding `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    pub source_xy: Tensor<f64>,
}

impl SampleGrid {
    pub fn point(&self, i: usize, j: usize) -> CartesianPoint {
        CartesianPoint::new(self.source_xy.at(&[i, j, 0]), self.source_xy.at(&[i, j, 1]))
    }
}

pub fn reverse_map(params: &SamplerParams) -> SampleGrid {
    LogPolarSampler::new(params.spec).reverse_map(params.center)
}

/// Bilinear taps of one sample location: up to four in-bounds neighbours with
/// their weights, plus the partial derivatives of the weights along x and y.
#[derive(Debug, Clone, Copy)]
struct Taps {
    idx: [usize; 4],
    w: [f64; 4],
    dwdx: [f64; 4],
    dwdy: [f64; 4],
    n: usize,
}

#[inline]
fn taps(x: f64, y: f64, height: usize, width: usize) -> Taps {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let mut t = Taps {
        idx: [0; 4],
        w: [0.0; 4],
        dwdx: [0.0; 4],
        dwdy: [0.0; 4],
        n: 0,
    };
    if !(x0.is_finite() && y0.is_finite()) {
        return t;
    }
    let corners = [
        (0.0, 0.0, (1.0 - fx) * (1.0 - fy), -(1.0 - fy), -(1.0 - fx)),
        (1.0, 0.0, fx * (1.0 - fy), 1.0 - fy, -fx),
        (0.0, 1.0, (1.0 - fx) * fy, -fy, 1.0 - fx),
        (1.0, 1.0, fx * fy, fy, fx),
    ];
    for (ox, oy, w, dx, dy) in corners {
        let cx = x0 + ox;
        let cy = y0 + oy;
        if cx < 0.0 || cy < 0.0 || cx >= width as f64 || cy >= height as f64 {
            continue;
        }
        t.idx[t.n] = cy as usize * width + cx as usize;
        t.w[t.n] = w;
        t.dwdx[t.n] = dx;
        t.dwdy[t.n] = dy;
        t.n += 1;
    }
    t
}

/// Bilinear read of a single `height x width` plane at `(x, y)`; neighbours
/// outside the plane contribute zero.
pub fn sample_plane<T: Real>(plane: &[T], height: usize, width: usize, x: f64, y: f64) -> T {
    let t = taps(x, y, height, width);
    let mut acc = T::zero();
    for k in 0..t.n {
        acc += T::from_f64_lossy(t.w[k]) * plane[t.idx[k]];
    }
    acc
}

/// Bilinear read of every channel of `img` at `(x, y)`.
pub fn bilinear_sample<T: Real>(img: &Image<T>, x: f64, y: f64) -> Vec<T> {
    (0..img.channels())
        .map(|c| sample_plane(img.plane(c), img.height(), img.width(), x, y))
        .collect()
}

pub fn warp<T: Real>(img: &Image<T>, params: &SamplerParams) -> Tensor<T> {
    LogPolarSampler::new(params.spec).warp(img, params.center)
}

#[derive(Debug, Clone)]
pub struct WarpGrads<T> {
    pub grad_image: Tensor<T>,
    pub grad_center: (f64, f64),
}

pub fn warp_backward<T: Real>(
    img: &Image<T>,
    params: &SamplerParams,
    grad_patch: &Tensor<T>,
) -> Result<WarpGrads<T>, ContractViolation> {
    let mut grad_image = Tensor::zeros(img.tensor().shape());
    let grad_center = LogPolarSampler::new(params.spec).backward_into(
        img,
        params.center,
        grad_patch,
        Some(&mut grad_image),
    )?;
    Ok(WarpGrads {
        grad_image,
        grad_center,
    })
}

/// A grid spec with its center-relative sample offsets precomputed, so
/// repeated warps avoid the transcendental functions.
#[derive(Debug, Clone)]
pub struct LogPolarSampler {
    spec: GridSpec,
    offsets: Vec<(f64, f64)>,
}

impl LogPolarSampler {
    pub fn new(spec: GridSpec) -> Self {
        let offsets = make_grid(&spec)
            .into_iter()
            .map(|g| {
                let r = g.rho.exp();
                let (s, c) = g.phi.sin_cos();
                (r * c, r * s)
            })
            .collect();
        Self { spec, offsets }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn reverse_map(&self, center: CartesianPoint) -> SampleGrid {
        let (h, w) = (self.spec.h_prime(), self.spec.w_prime());
        let mut xy = Vec::with_capacity(h * w * 2);
        for &(ox, oy) in &self.offsets {
            xy.push(ox + center.x);
            xy.push(oy + center.y);
        }
        SampleGrid {
            source_xy: Tensor::from_vec(&[h, w, 2], xy).expect("grid size"),
        }
    }

    pub fn warp<T: Real>(&self, img: &Image<T>, center: CartesianPoint) -> Tensor<T> {
        let (c, h, w) = (img.channels(), img.height(), img.width());
        let cells = self.offsets.len();
        let mut out = Tensor::zeros(&[c, self.spec.h_prime(), self.spec.w_prime()]);
        let src = img.tensor().data();
        let dst = out.data_mut();
        for (cell, &(ox, oy)) in self.offsets.iter().enumerate() {
            let t = taps(center.x + ox, center.y + oy, h, w);
            for ch in 0..c {
                let plane = &src[ch * h * w..(ch + 1) * h * w];
                let mut acc = T::zero();
                for k in 0..t.n {
                    acc += T::from_f64_lossy(t.w[k]) * plane[t.idx[k]];
                }
                dst[ch * cells + cell] = acc;
            }
        }
        out
    }

    /// Backpropagates `grad_patch` through the warp. Image gradients are
    /// accumulated into `grad_image` when given; the center gradient is
    /// returned as `(d/dx_c, d/dy_c)`.
    pub fn backward_into<T: Real>(
        &self,
        img: &Image<T>,
        center: CartesianPoint,
        grad_patch: &Tensor<T>,
        mut grad_image: Option<&mut Tensor<T>>,
    ) -> Result<(f64, f64), ContractViolation> {
        let (c, h, w) = (img.channels(), img.height(), img.width());
        let expected = [c, self.spec.h_prime(), self.spec.w_prime()];
        ensure_contract!(
            grad_patch.shape() == expected,
            "warp_backward",
            "grad_patch shape {:?} does not match patch shape {:?}",
            grad_patch.shape(),
            expected
        );
        if let Some(g) = grad_image.as_deref() {
            ensure_contract!(
                g.shape() == img.tensor().shape(),
                "warp_backward",
                "grad_image shape {:?} does not match image {:?}",
                g.shape(),
                img.tensor().shape()
            );
        }
        let cells = self.offsets.len();
        let src = img.tensor().data();
        let gp = grad_patch.data();
        let (mut gx, mut gy) = (0.0f64, 0.0f64);
        for (cell, &(ox, oy)) in self.offsets.iter().enumerate() {
            let t = taps(center.x + ox, center.y + oy, h, w);
            if t.n == 0 {
                continue;
            }
            for ch in 0..c {
                let g = gp[ch * cells + cell];
                if g == T::zero() {
                    continue;
                }
                let g64 = g.to_f64_lossy();
                let base = ch * h * w;
                let (mut dvdx, mut dvdy) = (0.0, 0.0);
                for k in 0..t.n {
                    let v = src[base + t.idx[k]].to_f64_lossy();
                    dvdx += t.dwdx[k] * v;
                    dvdy += t.dwdy[k] * v;
                }
                gx += g64 * dvdx;
                gy += g64 * dvdy;
                if let Some(gi) = grad_image.as_deref_mut() {
                    let gi = gi.data_mut();
                    for k in 0..t.n {
                        gi[base + t.idx[k]] += T::from_f64_lossy(t.w[k]) * g;
                    }
                }
            }
        }
        Ok((gx, gy))
    }
}
