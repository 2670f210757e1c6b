//! Spatial softmax readout: a differentiable "argmax" that turns a single
//! feature map into an expected log-polar coordinate.
//!
//! The log-radius is the probability-weighted mean of the grid's `rho`. The
//! angle is periodic, so by default it is read out as the circular mean
//! `atan2(Σ p sin φ, Σ p cos φ)`; the plain weighted mean of `φ` is
//! available as [`PhiReadout::Linear`].

use serde::{Deserialize, Serialize};

use crate::geometry::{normalize_angle, GridSpec, LogPolarPoint};
use crate::real::Real;
use crate::tensor::{ensure_contract, ContractViolation, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhiReadout {
    #[default]
    Circular,
    Linear,
}

impl std::str::FromStr for PhiReadout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "circular" => Ok(Self::Circular),
            "linear" => Ok(Self::Linear),
            other => Err(format!(
                "unknown phi readout '{other}' (expected circular or linear)"
            )),
        }
    }
}

/// Coordinate grid `(h, w, 2)` holding `(phi, rho)` of the centers of cells
/// that each cover a `stride x stride` block of a log-polar patch.
///
/// Cell `(i, j)` maps to fractional patch position
/// `(stride*i + (stride-1)/2, stride*j + (stride-1)/2)`.
pub fn strided_coord_grid(spec: &GridSpec, stride: usize) -> Tensor<f64> {
    let h = spec.h_prime() / stride;
    let w = spec.w_prime() / stride;
    let offset = (stride as f64 - 1.0) / 2.0;
    let mut data = Vec::with_capacity(h * w * 2);
    for i in 0..h {
        let phi = spec.phi_at((stride * i) as f64 + offset);
        for j in 0..w {
            data.push(phi);
            data.push(spec.rho_at((stride * j) as f64 + offset));
        }
    }
    Tensor::from_vec(&[h, w, 2], data).expect("grid size")
}

fn check<T: Real>(
    fmap: &Tensor<T>,
    grid: &Tensor<f64>,
    op: &'static str,
) -> Result<(), ContractViolation> {
    ensure_contract!(
        fmap.rank() == 3 && fmap.shape()[0] == 1,
        op,
        "expected a single-channel (1, h, w) map, got {:?}",
        fmap.shape()
    );
    ensure_contract!(
        grid.shape() == [fmap.shape()[1], fmap.shape()[2], 2],
        op,
        "coordinate grid {:?} does not match map {:?}",
        grid.shape(),
        fmap.shape()
    );
    Ok(())
}

fn softmax64<T: Real>(fmap: &Tensor<T>) -> Vec<f64> {
    let logits: Vec<f64> = fmap.data().iter().map(|v| v.to_f64_lossy()).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    p
}

struct Moments {
    rho: f64,
    phi_linear: f64,
    sin: f64,
    cos: f64,
}

fn moments(p: &[f64], grid: &[f64]) -> Moments {
    let mut m = Moments {
        rho: 0.0,
        phi_linear: 0.0,
        sin: 0.0,
        cos: 0.0,
    };
    for (k, &pk) in p.iter().enumerate() {
        let (phi, rho) = (grid[2 * k], grid[2 * k + 1]);
        m.rho += pk * rho;
        m.phi_linear += pk * phi;
        let (s, c) = phi.sin_cos();
        m.sin += pk * s;
        m.cos += pk * c;
    }
    m
}

pub fn spatial_softmax_readout<T: Real>(
    fmap: &Tensor<T>,
    coord_grid: &Tensor<f64>,
    mode: PhiReadout,
) -> Result<LogPolarPoint, ContractViolation> {
    check(fmap, coord_grid, "spatial_softmax_readout")?;
    let p = softmax64(fmap);
    let m = moments(&p, coord_grid.data());
    let phi = match mode {
        PhiReadout::Circular => m.sin.atan2(m.cos),
        PhiReadout::Linear => m.phi_linear,
    };
    Ok(LogPolarPoint {
        phi: normalize_angle(phi),
        rho: m.rho,
    })
}

/// Gradient of the readout with respect to the logits, given the upstream
/// gradient `(d/dphi, d/drho)` of the readout point.
pub fn spatial_softmax_backward<T: Real>(
    fmap: &Tensor<T>,
    coord_grid: &Tensor<f64>,
    mode: PhiReadout,
    grad_point: (f64, f64),
) -> Result<Tensor<T>, ContractViolation> {
    check(fmap, coord_grid, "spatial_softmax_backward")?;
    let (g_phi, g_rho) = grad_point;
    let p = softmax64(fmap);
    let grid = coord_grid.data();
    let m = moments(&p, grid);
    // d out / d p_k for each output, then the softmax Jacobian
    // dL/dl_k = p_k (dL/dp_k - Σ_j p_j dL/dp_j).
    let (d_sin, d_cos) = match mode {
        PhiReadout::Circular => {
            let r2 = m.sin * m.sin + m.cos * m.cos;
            (g_phi * m.cos / r2, -g_phi * m.sin / r2)
        }
        PhiReadout::Linear => (0.0, 0.0),
    };
    let phi_lin = if mode == PhiReadout::Linear {
        g_phi
    } else {
        0.0
    };
    let dl_dp: Vec<f64> = (0..p.len())
        .map(|k| {
            let (phi, rho) = (grid[2 * k], grid[2 * k + 1]);
            let (s, c) = if d_sin != 0.0 || d_cos != 0.0 {
                phi.sin_cos()
            } else {
                (0.0, 0.0)
            };
            g_rho * rho + phi_lin * phi + d_sin * s + d_cos * c
        })
        .collect();
    let dot: f64 = p.iter().zip(&dl_dp).map(|(a, b)| a * b).sum();
    let data = p
        .iter()
        .zip(&dl_dp)
        .map(|(&pk, &g)| T::from_f64_lossy(pk * (g - dot)))
        .collect();
    Tensor::from_vec(fmap.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn half_circle_grid() -> Tensor<f64> {
        // 3x4 cells, phi in [0.2, 1.8], rho in [0.5, 2.0]
        let mut data = Vec::new();
        for i in 0..3 {
            for j in 0..4 {
                data.push(0.2 + 0.8 * i as f64);
                data.push(0.5 + 0.5 * j as f64);
            }
        }
        Tensor::from_vec(&[3, 4, 2], data).unwrap()
    }

    #[test]
    fn uniform_logits_read_grid_means() {
        let grid = half_circle_grid();
        let fmap = Tensor::<f64>::zeros(&[1, 3, 4]);
        let q = spatial_softmax_readout(&fmap, &grid, PhiReadout::Circular).unwrap();
        assert!((q.rho - 1.25).abs() < 1e-12);
        // circular mean of {0.2, 1.0, 1.8} is 1.0 by symmetry
        assert!((q.phi - 1.0).abs() < 1e-12);
        let q = spatial_softmax_readout(&fmap, &grid, PhiReadout::Linear).unwrap();
        assert!((q.phi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spike_selects_cell() {
        let grid = half_circle_grid();
        let mut fmap = Tensor::<f64>::zeros(&[1, 3, 4]);
        *fmap.at_mut(&[0, 2, 1]) = 50.0;
        for mode in [PhiReadout::Circular, PhiReadout::Linear] {
            let q = spatial_softmax_readout(&fmap, &grid, mode).unwrap();
            assert!(
                (q.phi - 1.8).abs() < 1e-6 && (q.rho - 1.0).abs() < 1e-6,
                "{mode:?}: {q:?}"
            );
        }
    }

    #[test]
    fn two_spikes_average_rho() {
        let grid = half_circle_grid();
        let mut fmap = Tensor::<f64>::zeros(&[1, 3, 4]);
        *fmap.at_mut(&[0, 1, 0]) = 60.0;
        *fmap.at_mut(&[0, 1, 3]) = 60.0;
        let q = spatial_softmax_readout(&fmap, &grid, PhiReadout::Circular).unwrap();
        assert!((q.phi - 1.0).abs() < 1e-9);
        assert!((q.rho - 1.25).abs() < 1e-9);
    }

    #[test]
    fn circular_mean_handles_the_seam() {
        // two spikes just either side of phi = 0
        let grid = Tensor::from_vec(&[1, 2, 2], vec![0.1, 1.0, 2.0 * PI - 0.1, 1.0]).unwrap();
        let fmap = Tensor::<f64>::zeros(&[1, 1, 2]);
        let q = spatial_softmax_readout(&fmap, &grid, PhiReadout::Circular).unwrap();
        assert!(q.phi < 1e-12 || (2.0 * PI - q.phi) < 1e-12, "{q:?}");
        let q = spatial_softmax_readout(&fmap, &grid, PhiReadout::Linear).unwrap();
        assert!((q.phi - PI).abs() < 1e-12);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let grid = half_circle_grid();
        let fmap = Tensor::<f64>::from_fn(&[1, 3, 4], |i| i as f64 * 0.1);
        let g = spatial_softmax_backward(&fmap, &grid, PhiReadout::Circular, (0.0, 0.0)).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_rho_gradient_is_centered_grid() {
        let grid = half_circle_grid();
        let fmap = Tensor::<f64>::zeros(&[1, 3, 4]);
        let g = spatial_softmax_backward(&fmap, &grid, PhiReadout::Circular, (0.0, 1.0)).unwrap();
        for k in 0..12 {
            let want = (grid.data()[2 * k + 1] - 1.25) / 12.0;
            assert!((g.data()[k] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn strided_grid_uses_block_centers() {
        let spec = GridSpec::new(32, 32, 1.0, 40.0).unwrap();
        let grid = strided_coord_grid(&spec, 4);
        assert_eq!(grid.shape(), &[8, 8, 2]);
        assert!((grid.at(&[0, 0, 0]) - spec.phi_at(1.5)).abs() < 1e-15);
        assert!((grid.at(&[2, 3, 1]) - spec.rho_at(13.5)).abs() < 1e-15);
    }

    #[test]
    fn shape_contract() {
        let grid = half_circle_grid();
        assert!(spatial_softmax_readout(
            &Tensor::<f64>::zeros(&[2, 3, 4]),
            &grid,
            PhiReadout::Circular
        )
        .is_err());
        assert!(spatial_softmax_readout(
            &Tensor::<f64>::zeros(&[1, 4, 3]),
            &grid,
            PhiReadout::Circular
        )
        .is_err());
    }
}
