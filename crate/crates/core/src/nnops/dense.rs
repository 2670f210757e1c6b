//! Fully connected layers and elementwise activations.

use rand::Rng;

use crate::real::Real;
use crate::tensor::{ensure_contract, ContractViolation, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T = f32> {
    /// `(out, in)`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[out_dim, in_dim]),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    /// Uniform `±√(6 / (fan_in + fan_out))` weights, zero bias.
    pub fn init<R: Rng + ?Sized>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(out_dim, in_dim);
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        for w in layer.weight.data_mut() {
            *w = T::from_f64_lossy(rng.gen_range(-limit..limit));
        }
        layer
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }
}

#[derive(Debug, Clone)]
pub struct DenseGrads<T> {
    pub grad_input: Tensor<T>,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Tensor<T>,
}

/// `W x + b` for a weight of shape `(out, in)`; also used by the recurrent cell.
pub(crate) fn affine<T: Real>(weight: &Tensor<T>, x: &[T], acc: &mut [T]) {
    let (out_dim, in_dim) = (weight.shape()[0], weight.shape()[1]);
    for (o, a) in acc.iter_mut().enumerate().take(out_dim) {
        let row = &weight.data()[o * in_dim..(o + 1) * in_dim];
        *a += row.iter().zip(x).map(|(&w, &v)| w * v).sum::<T>();
    }
}

/// Accumulates `grad_out ⊗ x` into a weight gradient and `W^T grad_out`
/// into an input gradient.
pub(crate) fn affine_backward<T: Real>(
    weight: &Tensor<T>,
    x: &[T],
    grad_out: &[T],
    grad_w: &mut [T],
    grad_x: &mut [T],
) {
    let in_dim = weight.shape()[1];
    for (o, &g) in grad_out.iter().enumerate() {
        if g == T::zero() {
            continue;
        }
        let row = &weight.data()[o * in_dim..(o + 1) * in_dim];
        let gw = &mut grad_w[o * in_dim..(o + 1) * in_dim];
        for i in 0..in_dim {
            gw[i] += g * x[i];
            grad_x[i] += g * row[i];
        }
    }
}

pub fn dense_forward<T: Real>(
    x: &Tensor<T>,
    layer: &Dense<T>,
) -> Result<Tensor<T>, ContractViolation> {
    ensure_contract!(
        x.rank() == 1 && x.len() == layer.in_dim(),
        "dense_forward",
        "input shape {:?}, layer expects ({})",
        x.shape(),
        layer.in_dim()
    );
    let mut out = layer.bias.clone();
    affine(&layer.weight, x.data(), out.data_mut());
    Ok(out)
}

pub fn dense_backward<T: Real>(
    x: &Tensor<T>,
    layer: &Dense<T>,
    grad_out: &Tensor<T>,
) -> Result<DenseGrads<T>, ContractViolation> {
    ensure_contract!(
        x.rank() == 1 && x.len() == layer.in_dim() && grad_out.len() == layer.out_dim(),
        "dense_backward",
        "input {:?} / grad {:?} do not fit a {}->{} layer",
        x.shape(),
        grad_out.shape(),
        layer.in_dim(),
        layer.out_dim()
    );
    let mut grad_input = Tensor::zeros(&[layer.in_dim()]);
    let mut grad_weight = Tensor::zeros(layer.weight.shape());
    affine_backward(
        &layer.weight,
        x.data(),
        grad_out.data(),
        grad_weight.data_mut(),
        grad_input.data_mut(),
    );
    Ok(DenseGrads {
        grad_input,
        grad_weight,
        grad_bias: grad_out.clone().reshape(&[layer.out_dim()])?,
    })
}

pub fn tanh_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(T::tanh)
}

/// Gradient through `y = tanh(x)` expressed with the forward output `y`.
pub fn tanh_backward<T: Real>(y: &Tensor<T>, grad_y: &Tensor<T>) -> Tensor<T> {
    assert_eq!(y.shape(), grad_y.shape(), "tanh_backward shape mismatch");
    let data = y
        .data()
        .iter()
        .zip(grad_y.data())
        .map(|(&y, &g)| g * (T::one() - y * y))
        .collect();
    Tensor::from_vec(y.shape(), data).expect("same shape")
}

/// Softmax over all elements, stabilized by subtracting the maximum.
pub fn softmax_forward<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let max = logits
        .data()
        .iter()
        .copied()
        .fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.data().iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    Tensor::from_vec(
        logits.shape(),
        exps.into_iter().map(|e| e / total).collect(),
    )
    .expect("same shape")
}

/// Vector-Jacobian product of softmax: `p ⊙ (g - <g, p>)`.
pub fn softmax_backward<T: Real>(probs: &Tensor<T>, grad_probs: &Tensor<T>) -> Tensor<T> {
    let dot: T = probs
        .data()
        .iter()
        .zip(grad_probs.data())
        .map(|(&p, &g)| p * g)
        .sum();
    let data = probs
        .data()
        .iter()
        .zip(grad_probs.data())
        .map(|(&p, &g)| p * (g - dot))
        .collect();
    Tensor::from_vec(probs.shape(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_weights_give_softmax_of_bias() {
        let mut layer = Dense::<f64>::zeros(3, 4);
        layer.bias = Tensor::from_vec(&[3], vec![0.0, 1.0, 2.0]).unwrap();
        let out = dense_forward(&Tensor::filled(&[4], 9.0), &layer).unwrap();
        let p = softmax_forward(&out);
        let z = 1.0 + 1f64.exp() + 2f64.exp();
        assert!((p.data()[2] - 2f64.exp() / z).abs() < 1e-15);
    }

    #[test]
    fn tanh_zero_is_zero() {
        assert_eq!(tanh_forward(&Tensor::<f32>::zeros(&[5])).data(), &[0.0; 5]);
    }

    #[test]
    fn softmax_is_shift_invariant_and_stable() {
        let p =
            softmax_forward(&Tensor::<f64>::from_vec(&[3], vec![1000.0, 1001.0, 1002.0]).unwrap());
        let q = softmax_forward(&Tensor::<f64>::from_vec(&[3], vec![0.0, 1.0, 2.0]).unwrap());
        assert!(p.max_abs_diff(&q) < 1e-15);
    }

    #[test]
    fn dense_shape_contract() {
        let layer = Dense::<f32>::zeros(2, 3);
        assert!(dense_forward(&Tensor::zeros(&[4]), &layer).is_err());
        assert!(dense_backward(&Tensor::zeros(&[3]), &layer, &Tensor::zeros(&[3])).is_err());
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(v in proptest::collection::vec(-50.0..50.0f64, 1..40)) {
            let n = v.len();
            let p = softmax_forward(&Tensor::from_vec(&[n], v).unwrap());
            prop_assert!(p.data().iter().all(|&x| x >= 0.0));
            prop_assert!((p.sum() - 1.0).abs() <= 1e-12);
        }
    }
}
