//! Log-polar padding: periodic along rows (the angle axis), edge-inclusive
//! mirror along columns (the log-radius axis).
//!
//! For a row `abcde` padded by 3 the angle axis yields `cde|abcde|abc` and
//! the radius axis yields `cba|abcde|edc`.

use crate::real::Real;
use crate::tensor::{ensure_contract, ContractViolation, Tensor};

/// Source row for padded row offset `r` (may be negative or `>= h`).
#[inline]
pub(crate) fn wrap_index(r: isize, h: usize) -> usize {
    r.rem_euclid(h as isize) as usize
}

/// Source column for padded column offset `c`, mirroring with the edge
/// element repeated. Valid for `-w <= c < 2w`.
#[inline]
pub(crate) fn reflect_index(c: isize, w: usize) -> usize {
    let w = w as isize;
    let s = if c < 0 {
        -c - 1
    } else if c >= w {
        2 * w - c - 1
    } else {
        c
    };
    debug_assert!((0..w).contains(&s));
    s as usize
}

fn check(
    x_shape: &[usize],
    p: usize,
    op: &'static str,
) -> Result<(usize, usize, usize), ContractViolation> {
    ensure_contract!(
        x_shape.len() == 3,
        op,
        "expected (C, H, W), got {:?}",
        x_shape
    );
    let (c, h, w) = (x_shape[0], x_shape[1], x_shape[2]);
    ensure_contract!(p >= 1, op, "padding must be positive");
    ensure_contract!(p < h && p < w, op, "padding {p} too large for {h}x{w} map");
    Ok((c, h, w))
}

pub fn pad_logpolar<T: Real>(x: &Tensor<T>, p: usize) -> Result<Tensor<T>, ContractViolation> {
    let (c, h, w) = check(x.shape(), p, "pad_logpolar")?;
    let (ph, pw) = (h + 2 * p, w + 2 * p);
    let cols: Vec<usize> = (0..pw)
        .map(|j| reflect_index(j as isize - p as isize, w))
        .collect();
    let mut out = Tensor::zeros(&[c, ph, pw]);
    let src = x.data();
    let dst = out.data_mut();
    for ch in 0..c {
        for i in 0..ph {
            let row = wrap_index(i as isize - p as isize, h);
            let s = &src[(ch * h + row) * w..(ch * h + row + 1) * w];
            let d = &mut dst[(ch * ph + i) * pw..(ch * ph + i + 1) * pw];
            for (dv, &sc) in d.iter_mut().zip(&cols) {
                *dv = s[sc];
            }
        }
    }
    Ok(out)
}

/// Folds a gradient on the padded map back onto the `(C, h, w)` source:
/// wrapped rows add periodically, mirrored columns add to their sources.
pub fn pad_logpolar_backward<T: Real>(
    grad_padded: &Tensor<T>,
    h: usize,
    w: usize,
    p: usize,
) -> Result<Tensor<T>, ContractViolation> {
    let shape = grad_padded.shape();
    ensure_contract!(
        shape.len() == 3 && shape[1] == h + 2 * p && shape[2] == w + 2 * p,
        "pad_logpolar_backward",
        "gradient shape {:?} is not a {p}-padded {h}x{w} map",
        shape
    );
    let c = shape[0];
    check(&[c, h, w], p, "pad_logpolar_backward")?;
    let (ph, pw) = (h + 2 * p, w + 2 * p);
    let mut out = Tensor::zeros(&[c, h, w]);
    let src = grad_padded.data();
    let dst = out.data_mut();
    for ch in 0..c {
        for i in 0..ph {
            let row = wrap_index(i as isize - p as isize, h);
            for j in 0..pw {
                let col = reflect_index(j as isize - p as isize, w);
                dst[(ch * h + row) * w + col] += src[(ch * ph + i) * pw + j];
            }
        }
    }
    Ok(out)
}
