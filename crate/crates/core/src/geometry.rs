//! Coordinate mathematics of the log-polar map.
//!
//! Conventions used throughout the crate:
//!
//! * `x` runs along image columns and `y` along image rows, so `y` points
//!   *down*. Angles are measured with `atan2(y - y_c, x - x_c)`, which makes a
//!   positive angle appear clockwise on screen.
//! * Angles are radians, normalized to `[0, 2π)`.
//! * `rho` is the natural logarithm of the radius.
//! * Log-polar arrays are laid out with rows sweeping `phi` and columns
//!   sweeping `rho`. This is a presentation choice only.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("point coincides with the pole; log of zero radius is undefined")]
    ZeroRadius,
    #[error("non-finite coordinate: {0}")]
    NonFinite(&'static str),
    #[error("scale factor must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CartesianPoint {
    pub x: f64,
    pub y: f64,
}

impl CartesianPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &CartesianPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LogPolarPoint {
    pub phi: f64,
    pub rho: f64,
}

impl LogPolarPoint {
    /// Builds a point with `phi` wrapped into `[0, 2π)`.
    pub fn new(phi: f64, rho: f64) -> Self {
        Self {
            phi: normalize_angle(phi),
            rho,
        }
    }

    pub fn radius(&self) -> f64 {
        self.rho.exp()
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn normalize_angle(phi: f64) -> f64 {
    let wrapped = phi.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if wrapped >= TAU {
        0.0
    } else {
        wrapped
    }
}

/// Shape and radial extent of a log-polar sampling grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    h_prime: usize,
    w_prime: usize,
    r_min: f64,
    r_max: f64,
}

impl GridSpec {
    /// `h_prime` rows sweep the angle, `w_prime` columns sweep log-radius
    /// from `r_min` to `r_max` inclusive.
    pub fn new(
        h_prime: usize,
        w_prime: usize,
        r_min: f64,
        r_max: f64,
    ) -> Result<Self, GeometryError> {
        if h_prime < 1 {
            return Err(GeometryError::InvalidGrid(
                "need at least one angular row".into(),
            ));
        }
        if w_prime < 2 {
            return Err(GeometryError::InvalidGrid(format!(
                "need at least two radial columns, got {w_prime}"
            )));
        }
        if !(r_min.is_finite() && r_max.is_finite()) {
            return Err(GeometryError::NonFinite("grid radius"));
        }
        if r_min <= 0.0 || r_min >= r_max {
            return Err(GeometryError::InvalidGrid(format!(
                "radii must satisfy 0 < r_min < r_max, got r_min={r_min}, r_max={r_max}"
            )));
        }
        Ok(Self {
            h_prime,
            w_prime,
            r_min,
            r_max,
        })
    }

    /// Square grid of side `patch` spanning `[r_min, √(H² + W²)]` of an
    /// `height x width` source image.
    pub fn for_image(
        patch: usize,
        height: usize,
        width: usize,
        r_min: f64,
    ) -> Result<Self, GeometryError> {
        let r_max = ((height * height + width * width) as f64).sqrt();
        Self::new(patch, patch, r_min, r_max)
    }

    pub fn h_prime(&self) -> usize {
        self.h_prime
    }

    pub fn w_prime(&self) -> usize {
        self.w_prime
    }

    pub fn r_min(&self) -> f64 {
        self.r_min
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn phi_step(&self) -> f64 {
        TAU / self.h_prime as f64
    }

    pub fn rho_step(&self) -> f64 {
        (self.r_max.ln() - self.r_min.ln()) / (self.w_prime - 1) as f64
    }

    /// Angle of (possibly fractional) row `i`.
    pub fn phi_at(&self, i: f64) -> f64 {
        i * self.phi_step()
    }

    /// Log-radius of (possibly fractional) column `j`.
    pub fn rho_at(&self, j: f64) -> f64 {
        let (lo, hi) = (self.r_min.ln(), self.r_max.ln());
        if j == (self.w_prime - 1) as f64 {
            // pin the last column exactly
            return hi;
        }
        lo + j * (hi - lo) / (self.w_prime - 1) as f64
    }
}

pub fn to_log_polar(
    p: CartesianPoint,
    pole: CartesianPoint,
) -> Result<LogPolarPoint, GeometryError> {
    if !p.is_finite() || !pole.is_finite() {
        return Err(GeometryError::NonFinite("cartesian point"));
    }
    let dx = p.x - pole.x;
    let dy = p.y - pole.y;
    if dx == 0.0 && dy == 0.0 {
        return Err(GeometryError::ZeroRadius);
    }
    Ok(LogPolarPoint::new(dy.atan2(dx), dx.hypot(dy).ln()))
}

pub fn from_log_polar(
    q: LogPolarPoint,
    pole: CartesianPoint,
) -> Result<CartesianPoint, GeometryError> {
    if !(q.phi.is_finite() && q.rho.is_finite()) {
        return Err(GeometryError::NonFinite("log-polar point"));
    }
    if !pole.is_finite() {
        return Err(GeometryError::NonFinite("pole"));
    }
    let r = q.rho.exp();
    let (sin, cos) = q.phi.sin_cos();
    Ok(CartesianPoint::new(r * cos + pole.x, r * sin + pole.y))
}

/// The destination grid: `h_prime * w_prime` points in row-major order.
pub fn make_grid(spec: &GridSpec) -> Vec<LogPolarPoint> {
    let mut grid = Vec::with_capacity(spec.h_prime * spec.w_prime);
    for i in 0..spec.h_prime {
        let phi = spec.phi_at(i as f64);
        for j in 0..spec.w_prime {
            grid.push(LogPolarPoint {
                phi,
                rho: spec.rho_at(j as f64),
            });
        }
    }
    grid
}

/// Rotates `p` about `pole` by `angle` radians (counter-clockwise in a
/// y-up frame; clockwise on screen).
pub fn rotate_point(p: CartesianPoint, pole: CartesianPoint, angle: f64) -> CartesianPoint {
    let (sin, cos) = angle.sin_cos();
    let dx = p.x - pole.x;
    let dy = p.y - pole.y;
    CartesianPoint::new(pole.x + cos * dx - sin * dy, pole.y + sin * dx + cos * dy)
}

pub fn scale_point(
    p: CartesianPoint,
    pole: CartesianPoint,
    c: f64,
) -> Result<CartesianPoint, GeometryError> {
    if c.is_nan() || c <= 0.0 {
        return Err(GeometryError::NonPositiveScale(c));
    }
    Ok(CartesianPoint::new(
        pole.x + c * (p.x - pole.x),
        pole.y + c * (p.y - pole.y),
    ))
}
