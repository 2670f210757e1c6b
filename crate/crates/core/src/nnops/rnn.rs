//! Vanilla recurrent cell `h' = tanh(W_h h + W_x x + b)`. Backpropagation
//! through time is left to the caller, which unrolls steps and chains
//! `grad_h_prev` into the previous step.

use rand::Rng;

use super::dense::{affine, affine_backward};
use crate::real::Real;
use crate::tensor::{ensure_contract, ContractViolation, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct RnnCell<T = f32> {
    /// `(hidden, in)`
    pub w_x: Tensor<T>,
    /// `(hidden, hidden)`
    pub w_h: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> RnnCell<T> {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        Self {
            w_x: Tensor::zeros(&[hidden, input]),
            w_h: Tensor::zeros(&[hidden, hidden]),
            bias: Tensor::zeros(&[hidden]),
        }
    }

    /// `W_x` uniform `±√(6 / (in + hidden))`, `W_h` uniform `±1/√hidden`,
    /// zero bias.
    pub fn init<R: Rng + ?Sized>(hidden: usize, input: usize, rng: &mut R) -> Self {
        let mut cell = Self::zeros(hidden, input);
        let lx = (6.0 / (input + hidden) as f64).sqrt();
        for w in cell.w_x.data_mut() {
            *w = T::from_f64_lossy(rng.gen_range(-lx..lx));
        }
        let lh = 1.0 / (hidden as f64).sqrt();
        for w in cell.w_h.data_mut() {
            *w = T::from_f64_lossy(rng.gen_range(-lh..lh));
        }
        cell
    }

    pub fn hidden(&self) -> usize {
        self.w_h.shape()[0]
    }

    pub fn input(&self) -> usize {
        self.w_x.shape()[1]
    }
}

#[derive(Debug, Clone)]
pub struct RnnGrads<T> {
    pub grad_h_prev: Tensor<T>,
    pub grad_x: Tensor<T>,
    pub grad_w_x: Tensor<T>,
    pub grad_w_h: Tensor<T>,
    pub grad_bias: Tensor<T>,
}

fn check<T: Real>(
    cell: &RnnCell<T>,
    h_prev: &Tensor<T>,
    x: &Tensor<T>,
    op: &'static str,
) -> Result<(), ContractViolation> {
    ensure_contract!(
        h_prev.len() == cell.hidden() && x.len() == cell.input(),
        op,
        "state {:?} / input {:?} do not fit hidden={} input={}",
        h_prev.shape(),
        x.shape(),
        cell.hidden(),
        cell.input()
    );
    Ok(())
}

pub fn rnn_step_forward<T: Real>(
    cell: &RnnCell<T>,
    h_prev: &Tensor<T>,
    x: &Tensor<T>,
) -> Result<Tensor<T>, ContractViolation> {
    check(cell, h_prev, x, "rnn_step_forward")?;
    let mut pre = cell.bias.clone();
    affine(&cell.w_h, h_prev.data(), pre.data_mut());
    affine(&cell.w_x, x.data(), pre.data_mut());
    Ok(pre.map(T::tanh))
}

/// Gradients of one step given the forward output `h_next` and the upstream
/// gradient on it.
pub fn rnn_step_backward<T: Real>(
    cell: &RnnCell<T>,
    h_prev: &Tensor<T>,
    x: &Tensor<T>,
    h_next: &Tensor<T>,
    grad_h_next: &Tensor<T>,
) -> Result<RnnGrads<T>, ContractViolation> {
    check(cell, h_prev, x, "rnn_step_backward")?;
    ensure_contract!(
        h_next.len() == cell.hidden() && grad_h_next.len() == cell.hidden(),
        "rnn_step_backward",
        "output gradient has {} entries, hidden size is {}",
        grad_h_next.len(),
        cell.hidden()
    );
    let grad_pre: Vec<T> = h_next
        .data()
        .iter()
        .zip(grad_h_next.data())
        .map(|(&h, &g)| g * (T::one() - h * h))
        .collect();
    let mut grads = RnnGrads {
        grad_h_prev: Tensor::zeros(&[cell.hidden()]),
        grad_x: Tensor::zeros(&[cell.input()]),
        grad_w_x: Tensor::zeros(cell.w_x.shape()),
        grad_w_h: Tensor::zeros(cell.w_h.shape()),
        grad_bias: Tensor::from_vec(&[cell.hidden()], grad_pre.clone())?,
    };
    affine_backward(
        &cell.w_h,
        h_prev.data(),
        &grad_pre,
        grads.grad_w_h.data_mut(),
        grads.grad_h_prev.data_mut(),
    );
    affine_backward(
        &cell.w_x,
        x.data(),
        &grad_pre,
        grads.grad_w_x.data_mut(),
        grads.grad_x.data_mut(),
    );
    Ok(grads)
}
