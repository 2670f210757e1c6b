//! 3x3 convolutions with log-polar padding and 1x1 convolutions, lowered to
//! a single matrix product through an im2col gather.
//!
//! The gather table maps every (kernel tap, output cell) to the source cell of
//! the *unpadded* input, so the backward scatter through the same table folds
//! padding gradients back onto their wrapped and mirrored sources.

use rand::Rng;

use super::pad::{reflect_index, wrap_index};
use crate::real::Real;
use crate::tensor::{ensure_contract, ContractViolation, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    /// Same-size output: rows wrap, columns mirror (edge included).
    WrapPhiReflectRho,
    /// No padding; only valid for 1x1 kernels.
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T = f32> {
    /// `(out_ch, in_ch, k, k)` with `k` in `{1, 3}`.
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub pad_mode: PadMode,
}

impl<T: Real> ConvLayer<T> {
    pub fn new(
        weight: Tensor<T>,
        bias: Tensor<T>,
        pad_mode: PadMode,
    ) -> Result<Self, ContractViolation> {
        let s = weight.shape();
        ensure_contract!(
            s.len() == 4,
            "ConvLayer::new",
            "weight must be rank 4, got {:?}",
            s
        );
        ensure_contract!(
            s[2] == s[3] && (s[2] == 1 || s[2] == 3),
            "ConvLayer::new",
            "only 3x3 and 1x1 kernels are supported, got {}x{}",
            s[2],
            s[3]
        );
        let expected_mode = if s[2] == 3 {
            PadMode::WrapPhiReflectRho
        } else {
            PadMode::None
        };
        ensure_contract!(
            pad_mode == expected_mode,
            "ConvLayer::new",
            "{}x{} kernels require {:?} padding",
            s[2],
            s[2],
            expected_mode
        );
        ensure_contract!(
            bias.shape() == [s[0]],
            "ConvLayer::new",
            "bias shape {:?} does not match {} output channels",
            bias.shape(),
            s[0]
        );
        Ok(Self {
            weight,
            bias,
            pad_mode,
        })
    }

    pub fn zeros(out_ch: usize, in_ch: usize, kernel: usize) -> Self {
        let mode = if kernel == 3 {
            PadMode::WrapPhiReflectRho
        } else {
            PadMode::None
        };
        Self::new(
            Tensor::zeros(&[out_ch, in_ch, kernel, kernel]),
            Tensor::zeros(&[out_ch]),
            mode,
        )
        .expect("valid kernel size")
    }

    /// Uniform `±√(6 / (fan_in + fan_out))` weights, zero bias.
    pub fn init<R: Rng + ?Sized>(out_ch: usize, in_ch: usize, kernel: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(out_ch, in_ch, kernel);
        let k2 = kernel * kernel;
        let limit = (6.0 / ((in_ch * k2 + out_ch * k2) as f64)).sqrt();
        for w in layer.weight.data_mut() {
            *w = T::from_f64_lossy(rng.gen_range(-limit..limit));
        }
        layer
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub grad_input: Tensor<T>,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Tensor<T>,
}

fn gather_table(h: usize, w: usize) -> Vec<u32> {
    let hw = h * w;
    let mut table = Vec::with_capacity(9 * hw);
    for k in 0..9 {
        let (ky, kx) = ((k / 3) as isize - 1, (k % 3) as isize - 1);
        for y in 0..h {
            let row = wrap_index(y as isize + ky, h) * w;
            for x in 0..w {
                table.push((row + reflect_index(x as isize + kx, w)) as u32);
            }
        }
    }
    table
}

fn im2col<T: Real>(x: &[T], c: usize, hw: usize, table: &[u32]) -> Vec<T> {
    let mut col = vec![T::zero(); c * 9 * hw];
    for ch in 0..c {
        let src = &x[ch * hw..(ch + 1) * hw];
        for k in 0..9 {
            let dst = &mut col[(ch * 9 + k) * hw..(ch * 9 + k + 1) * hw];
            for (d, &s) in dst.iter_mut().zip(&table[k * hw..(k + 1) * hw]) {
                *d = src[s as usize];
            }
        }
    }
    col
}

fn check_input<T: Real>(
    x: &Tensor<T>,
    layer: &ConvLayer<T>,
    op: &'static str,
) -> Result<(usize, usize, usize), ContractViolation> {
    ensure_contract!(
        x.rank() == 3,
        op,
        "expected (C, H, W) input, got {:?}",
        x.shape()
    );
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    ensure_contract!(
        c == layer.in_channels(),
        op,
        "input has {c} channels, layer expects {}",
        layer.in_channels()
    );
    if layer.kernel() == 3 {
        ensure_contract!(
            h >= 2 && w >= 2,
            op,
            "3x3 log-polar padding needs at least 2x2 maps, got {h}x{w}"
        );
    }
    Ok((c, h, w))
}

pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    layer: &ConvLayer<T>,
) -> Result<Tensor<T>, ContractViolation> {
    let (c, h, w) = check_input(x, layer, "conv2d_forward")?;
    let hw = h * w;
    let out_ch = layer.out_channels();
    let mut out = Tensor::zeros(&[out_ch, h, w]);
    for (o, row) in out.data_mut().chunks_mut(hw).enumerate() {
        row.fill(layer.bias.data()[o]);
    }
    let k = c * layer.kernel() * layer.kernel();
    let owned;
    let cols: &[T] = if layer.kernel() == 3 {
        owned = im2col(x.data(), c, hw, &gather_table(h, w));
        &owned
    } else {
        x.data()
    };
    T::gemm(
        out_ch,
        k,
        hw,
        T::one(),
        layer.weight.data(),
        (k as isize, 1),
        cols,
        (hw as isize, 1),
        T::one(),
        out.data_mut(),
        (hw as isize, 1),
    );
    Ok(out)
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    layer: &ConvLayer<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>, ContractViolation> {
    let (grad_input, grad_weight, grad_bias) = backward_impl(x, layer, grad_out, true)?;
    Ok(ConvGrads {
        grad_input: grad_input.expect("requested"),
        grad_weight,
        grad_bias,
    })
}

/// Parameter gradients only, for layers whose input needs no gradient.
pub fn conv2d_backward_params<T: Real>(
    x: &Tensor<T>,
    layer: &ConvLayer<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>), ContractViolation> {
    let (_, gw, gb) = backward_impl(x, layer, grad_out, false)?;
    Ok((gw, gb))
}

type BackwardParts<T> = (Option<Tensor<T>>, Tensor<T>, Tensor<T>);

fn backward_impl<T: Real>(
    x: &Tensor<T>,
    layer: &ConvLayer<T>,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> Result<BackwardParts<T>, ContractViolation> {
    let (c, h, w) = check_input(x, layer, "conv2d_backward")?;
    let out_ch = layer.out_channels();
    ensure_contract!(
        grad_out.shape() == [out_ch, h, w],
        "conv2d_backward",
        "grad_out shape {:?}, expected {:?}",
        grad_out.shape(),
        [out_ch, h, w]
    );
    let hw = h * w;
    let ks = layer.kernel();
    let k = c * ks * ks;
    let go = grad_out.data();

    let grad_bias = Tensor::from_vec(
        &[out_ch],
        go.chunks(hw).map(|r| r.iter().copied().sum()).collect(),
    )
    .expect("bias length");

    let table = (ks == 3).then(|| gather_table(h, w));
    let owned;
    let cols: &[T] = match &table {
        Some(t) => {
            owned = im2col(x.data(), c, hw, t);
            &owned
        }
        None => x.data(),
    };

    // dW (out, k) = dY (out, hw) * cols^T (hw, k)
    let mut grad_weight = Tensor::zeros(layer.weight.shape());
    T::gemm(
        out_ch,
        hw,
        k,
        T::one(),
        go,
        (hw as isize, 1),
        cols,
        (1, hw as isize),
        T::zero(),
        grad_weight.data_mut(),
        (k as isize, 1),
    );

    let grad_input = if need_input {
        // dcols (k, hw) = W^T (k, out) * dY (out, hw)
        let mut dcols = vec![T::zero(); k * hw];
        T::gemm(
            k,
            out_ch,
            hw,
            T::one(),
            layer.weight.data(),
            (1, k as isize),
            go,
            (hw as isize, 1),
            T::zero(),
            &mut dcols,
            (hw as isize, 1),
        );
        let mut gi = Tensor::zeros(&[c, h, w]);
        match &table {
            Some(t) => {
                let gd = gi.data_mut();
                for ch in 0..c {
                    let dst = &mut gd[ch * hw..(ch + 1) * hw];
                    for tap in 0..9 {
                        let src = &dcols[(ch * 9 + tap) * hw..(ch * 9 + tap + 1) * hw];
                        for (&s, &g) in t[tap * hw..(tap + 1) * hw].iter().zip(src) {
                            dst[s as usize] += g;
                        }
                    }
                }
            }
            None => gi.data_mut().copy_from_slice(&dcols),
        }
        Some(gi)
    } else {
        None
    };
    Ok((grad_input, grad_weight, grad_bias))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnops::pad::pad_logpolar;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct cross-correlation over an explicitly padded input.
    fn reference_conv(x: &Tensor<f64>, layer: &ConvLayer<f64>) -> Tensor<f64> {
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let ks = layer.kernel();
        let padded = if ks == 3 {
            pad_logpolar(x, 1).unwrap()
        } else {
            x.clone()
        };
        let mut out = Tensor::zeros(&[layer.out_channels(), h, w]);
        for o in 0..layer.out_channels() {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = layer.bias.at(&[o]);
                    for ci in 0..c {
                        for ky in 0..ks {
                            for kx in 0..ks {
                                acc += layer.weight.at(&[o, ci, ky, kx])
                                    * padded.at(&[ci, y + ky, xx + kx]);
                            }
                        }
                    }
                    *out.at_mut(&[o, y, xx]) = acc;
                }
            }
        }
        out
    }

    #[test]
    fn matches_padded_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::from_fn(&[3, 6, 5], |_| rng.gen_range(-1.0..1.0));
        for ks in [3, 1] {
            let mut layer = ConvLayer::<f64>::init(4, 3, ks, &mut rng);
            layer.bias = Tensor::from_fn(&[4], |i| i as f64 * 0.1);
            let got = conv2d_forward(&x, &layer).unwrap();
            let want = reference_conv(&x, &layer);
            assert!(got.max_abs_diff(&want) < 1e-12, "kernel {ks}");
        }
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = Tensor::<f32>::from_fn(&[1, 4, 4], |i| i as f32 * 0.5);
        let mut layer = ConvLayer::<f32>::zeros(1, 1, 3);
        *layer.weight.at_mut(&[0, 0, 1, 1]) = 1.0;
        assert_eq!(conv2d_forward(&x, &layer).unwrap(), x);
    }

    #[test]
    fn ones_kernel_on_constant_input() {
        let x = Tensor::<f64>::filled(&[1, 5, 7], 0.3);
        let layer = ConvLayer::new(
            Tensor::filled(&[1, 1, 3, 3], 1.0),
            Tensor::zeros(&[1]),
            PadMode::WrapPhiReflectRho,
        )
        .unwrap();
        let y = conv2d_forward(&x, &layer).unwrap();
        assert!(y.data().iter().all(|&v| (v - 2.7).abs() < 1e-12));
    }

    #[test]
    fn channel_mismatch_is_a_contract_violation() {
        let layer = ConvLayer::<f32>::zeros(2, 3, 3);
        let err = conv2d_forward(&Tensor::zeros(&[2, 4, 4]), &layer).unwrap_err();
        assert_eq!(err.op, "conv2d_forward");
        assert!(conv2d_backward(
            &Tensor::zeros(&[3, 4, 4]),
            &layer,
            &Tensor::zeros(&[2, 4, 5])
        )
        .is_err());
    }

    #[test]
    fn kernel_and_padding_must_agree() {
        assert!(ConvLayer::<f32>::new(
            Tensor::zeros(&[1, 1, 3, 3]),
            Tensor::zeros(&[1]),
            PadMode::None
        )
        .is_err());
        assert!(ConvLayer::<f32>::new(
            Tensor::zeros(&[1, 1, 5, 5]),
            Tensor::zeros(&[1]),
            PadMode::None
        )
        .is_err());
        assert!(ConvLayer::<f32>::new(
            Tensor::zeros(&[1, 1, 1, 1]),
            Tensor::zeros(&[2]),
            PadMode::None
        )
        .is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layer = ConvLayer::<f64>::init(2, 2, 3, &mut rng);
        let x = Tensor::from_fn(&[2, 4, 4], |i| i as f64);
        let g = conv2d_backward(&x, &layer, &Tensor::zeros(&[2, 4, 4])).unwrap();
        assert!(g
            .grad_input
            .data()
            .iter()
            .chain(g.grad_weight.data())
            .chain(g.grad_bias.data())
            .all(|&v| v == 0.0));
    }

    #[test]
    fn bias_gradient_is_channel_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let layer = ConvLayer::<f64>::init(3, 1, 3, &mut rng);
        let x = Tensor::from_fn(&[1, 4, 6], |i| (i as f64).cos());
        let go = Tensor::from_fn(&[3, 4, 6], |i| (i as f64 * 0.7).sin());
        let g = conv2d_backward(&x, &layer, &go).unwrap();
        for o in 0..3 {
            let want: f64 = go.data()[o * 24..(o + 1) * 24].iter().sum();
            assert!((g.grad_bias.at(&[o]) - want).abs() < 1e-12);
        }
    }
}
