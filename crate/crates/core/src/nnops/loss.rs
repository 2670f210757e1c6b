use crate::real::Real;
use crate::tensor::{ensure_contract, ContractViolation, Tensor};

/// Smallest probability fed to the logarithm, keeping the loss finite when a
/// class probability underflows.
const PROB_FLOOR: f64 = 1e-30;

/// Negative log-likelihood of `label` under `probs`.
pub fn cross_entropy<T: Real>(probs: &Tensor<T>, label: usize) -> Result<f64, ContractViolation> {
    ensure_contract!(
        label < probs.len(),
        "cross_entropy",
        "label {label} out of range for {} classes",
        probs.len()
    );
    Ok(-(probs.data()[label].to_f64_lossy().max(PROB_FLOOR)).ln())
}

/// Gradient of softmax followed by cross-entropy with respect to the
/// pre-softmax logits: `probs - one_hot(label)`.
pub fn cross_entropy_grad_logits<T: Real>(
    probs: &Tensor<T>,
    label: usize,
) -> Result<Tensor<T>, ContractViolation> {
    ensure_contract!(
        label < probs.len(),
        "cross_entropy_grad_logits",
        "label {label} out of range for {} classes",
        probs.len()
    );
    let mut grad = probs.clone();
    grad.data_mut()[label] -= T::one();
    Ok(grad)
}
