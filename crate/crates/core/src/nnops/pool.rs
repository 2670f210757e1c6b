use crate::real::Real;
use crate::tensor::{ensure_contract, ContractViolation, Tensor};

/// Output of a 2x2 max pool together with the flat input index each output
/// cell was taken from.
#[derive(Debug, Clone)]
pub struct MaxPoolOutput<T> {
    pub output: Tensor<T>,
    pub argmax: Vec<usize>,
}

/// Max over disjoint 2x2 blocks. Ties go to the first element in row-major
/// scan order of the block.
pub fn maxpool2x2_forward<T: Real>(x: &Tensor<T>) -> Result<MaxPoolOutput<T>, ContractViolation> {
    ensure_contract!(
        x.rank() == 3,
        "maxpool2x2_forward",
        "expected (C, H, W), got {:?}",
        x.shape()
    );
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    ensure_contract!(
        h % 2 == 0 && w % 2 == 0,
        "maxpool2x2_forward",
        "spatial dims must be even, got {h}x{w}"
    );
    let (oh, ow) = (h / 2, w / 2);
    let mut output = Tensor::zeros(&[c, oh, ow]);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    let src = x.data();
    let dst = output.data_mut();
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let top = (ch * h + 2 * i) * w + 2 * j;
                let mut best = top;
                for cand in [top + 1, top + w, top + w + 1] {
                    if src[cand] > src[best] {
                        best = cand;
                    }
                }
                dst[(ch * oh + i) * ow + j] = src[best];
                argmax.push(best);
            }
        }
    }
    Ok(MaxPoolOutput { output, argmax })
}

pub fn maxpool2x2_backward<T: Real>(
    grad_out: &Tensor<T>,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<Tensor<T>, ContractViolation> {
    ensure_contract!(
        grad_out.len() == argmax.len(),
        "maxpool2x2_backward",
        "gradient has {} cells but {} argmax entries were recorded",
        grad_out.len(),
        argmax.len()
    );
    let mut grad = Tensor::zeros(input_shape);
    let gd = grad.data_mut();
    for (&g, &src) in grad_out.data().iter().zip(argmax) {
        gd[src] += g;
    }
    Ok(grad)
}

pub fn global_avgpool_forward<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>, ContractViolation> {
    ensure_contract!(
        x.rank() == 3,
        "global_avgpool_forward",
        "expected (C, H, W), got {:?}",
        x.shape()
    );
    let c = x.shape()[0];
    let hw = x.shape()[1] * x.shape()[2];
    let inv = T::one() / T::from_usize(hw).expect("size");
    let means = x
        .data()
        .chunks(hw)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::from_vec(&[c], means)
}

pub fn global_avgpool_backward<T: Real>(
    grad_out: &Tensor<T>,
    h: usize,
    w: usize,
) -> Result<Tensor<T>, ContractViolation> {
    ensure_contract!(
        grad_out.rank() == 1,
        "global_avgpool_backward",
        "expected (C), got {:?}",
        grad_out.shape()
    );
    let c = grad_out.len();
    let inv = T::one() / T::from_usize(h * w).expect("size");
    let mut grad = Tensor::zeros(&[c, h, w]);
    for (plane, &g) in grad.data_mut().chunks_mut(h * w).zip(grad_out.data()) {
        plane.fill(g * inv);
    }
    Ok(grad)
}
