//! Central finite-difference checks of every backward pass, run in f64.
//!
//! Each component draws random inputs from a fixed seed, reduces the output
//! to a scalar with a random projection, and compares the analytic gradient
//! against `(L(x + h) - L(x - h)) / 2h` on every input element or on a
//! random subset for large tensors.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::geometry::{CartesianPoint, GridSpec};
use crate::model::{
    aggregate_loss_backward, greedy_loss_backward, localise, localise_backward, ModelConfig,
    ModelParams, Retina, PARAM_NAMES,
};
use crate::nnops::{
    conv2d_backward, conv2d_forward, cross_entropy, cross_entropy_grad_logits, dense_backward,
    dense_forward, global_avgpool_backward, global_avgpool_forward, maxpool2x2_backward,
    maxpool2x2_forward, pad_logpolar, pad_logpolar_backward, rnn_step_backward, rnn_step_forward,
    softmax_backward, softmax_forward, spatial_softmax_backward, spatial_softmax_readout,
    strided_coord_grid, tanh_backward, tanh_forward, ConvLayer, Dense, PadMode, PhiReadout,
    RnnCell,
};
use crate::sampler::{warp, warp_backward, Image, SamplerParams};
use crate::tensor::{ContractViolation, Tensor};

pub const STEP: f64 = 1e-5;
/// Tolerance for single operations.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Tolerance for unrolled passes through the sampler, whose bilinear kinks
/// add nonsmoothness.
pub const MODEL_TOLERANCE: f64 = 1e-3;
/// Denominator floor of the relative error, above the finite-difference
/// noise of an O(1) loss.
pub const ABS_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, ABS_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

/// Central difference of `f` along one coordinate; `f(delta)` evaluates the
/// loss with that coordinate displaced by `delta`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(STEP) - f(-STEP)) / (2.0 * STEP)
}

#[derive(Debug, Clone, Serialize)]
pub struct ComponentReport {
    pub component: &'static str,
    pub max_rel_error: f64,
    pub threshold: f64,
    pub checked: usize,
}

impl ComponentReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.threshold
    }
}

/// Component names in suite order.
pub const COMPONENTS: [&str; 15] = [
    "sampler",
    "pad",
    "conv3x3",
    "conv1x1",
    "maxpool",
    "avgpool",
    "dense",
    "tanh",
    "softmax",
    "cross_entropy",
    "spatial_softmax",
    "rnn",
    "localise",
    "greedy",
    "aggregate",
];

/// Runs the components whose name contains `filter` (all when `None`).
pub fn run_suite(
    filter: Option<&str>,
    seed: u64,
) -> Result<Vec<ComponentReport>, ContractViolation> {
    let mut out = Vec::new();
    for (k, &name) in COMPONENTS.iter().enumerate() {
        if filter.is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
        let (max_rel_error, checked, threshold) = match name {
            "sampler" => with_op_tol(check_sampler(&mut rng, 20)?),
            "pad" => with_op_tol(check_pad(&mut rng)?),
            "conv3x3" => with_op_tol(check_conv(&mut rng, 3)?),
            "conv1x1" => with_op_tol(check_conv(&mut rng, 1)?),
            "maxpool" => with_op_tol(check_maxpool(&mut rng)?),
            "avgpool" => with_op_tol(check_avgpool(&mut rng)?),
            "dense" => with_op_tol(check_dense(&mut rng)?),
            "tanh" => with_op_tol(check_tanh(&mut rng)),
            "softmax" => with_op_tol(check_softmax(&mut rng)),
            "cross_entropy" => with_op_tol(check_cross_entropy(&mut rng)?),
            "spatial_softmax" => with_op_tol(check_spatial_softmax(&mut rng)?),
            "rnn" => with_op_tol(check_rnn(&mut rng, 4)?),
            "localise" => with_op_tol(check_localise(&mut rng)?),
            "greedy" => {
                let (a, n) = check_model(&mut rng, Objective::Greedy)?;
                (a, n, MODEL_TOLERANCE)
            }
            "aggregate" => {
                let (a, n) = check_model(&mut rng, Objective::Aggregate)?;
                (a, n, MODEL_TOLERANCE)
            }
            _ => unreachable!("listed component"),
        };
        out.push(ComponentReport {
            component: name,
            max_rel_error,
            threshold,
            checked,
        });
    }
    Ok(out)
}

fn with_op_tol((err, n): (f64, usize)) -> (f64, usize, f64) {
    (err, n, OP_TOLERANCE)
}

/// Running maximum of relative errors.
#[derive(Debug, Default, Clone, Copy)]
struct Worst {
    err: f64,
    n: usize,
}

impl Worst {
    fn push(&mut self, analytic: f64, numeric: f64) {
        self.err = self.err.max(relative_error(analytic, numeric));
        self.n += 1;
    }

    fn merge(&mut self, other: (f64, usize)) {
        self.err = self.err.max(other.0);
        self.n += other.1;
    }

    fn done(self) -> (f64, usize) {
        (self.err, self.n)
    }
}

fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Indices to probe: all of them, or `limit` distinct random ones.
fn probe_indices(rng: &mut impl Rng, len: usize, limit: usize) -> Vec<usize> {
    if len <= limit {
        (0..len).collect()
    } else {
        sample(rng, len, limit).into_vec()
    }
}

/// Compares `analytic` with finite differences of `loss` on tensor `x`.
fn check_tensor(
    rng: &mut impl Rng,
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    limit: usize,
    loss: impl Fn(&Tensor<f64>) -> f64,
) -> (f64, usize) {
    let mut worst = Worst::default();
    let mut probe = x.clone();
    for i in probe_indices(rng, x.len(), limit) {
        let base = x.data()[i];
        let numeric = central_difference(|d| {
            probe.data_mut()[i] = base + d;
            loss(&probe)
        });
        probe.data_mut()[i] = base;
        worst.push(analytic.data()[i], numeric);
    }
    worst.done()
}

fn check_sampler(rng: &mut impl Rng, cases: usize) -> Result<(f64, usize), ContractViolation> {
    let mut worst = Worst::default();
    let spec = GridSpec::new(8, 8, 0.7, 9.0).expect("valid spec");
    for _ in 0..cases {
        let img = Image::new(random_tensor(rng, &[1, 16, 16], 1.0))?;
        let center = CartesianPoint::new(rng.gen_range(3.0..12.0), rng.gen_range(3.0..12.0));
        let w = random_tensor(rng, &[1, 8, 8], 1.0);
        let params = SamplerParams { center, spec };
        let g = warp_backward(&img, &params, &w)?;
        let at = |c: CartesianPoint, im: &Image<f64>| {
            dot(&warp(im, &SamplerParams { center: c, spec }), &w)
        };
        worst.push(
            g.grad_center.0,
            central_difference(|d| at(CartesianPoint::new(center.x + d, center.y), &img)),
        );
        worst.push(
            g.grad_center.1,
            central_difference(|d| at(CartesianPoint::new(center.x, center.y + d), &img)),
        );
        worst.merge(check_tensor(rng, img.tensor(), &g.grad_image, 20, |t| {
            at(center, &Image::new(t.clone()).expect("same shape"))
        }));
    }
    Ok(worst.done())
}

fn check_pad(rng: &mut impl Rng) -> Result<(f64, usize), ContractViolation> {
    let x = random_tensor(rng, &[2, 5, 6], 1.0);
    let w = random_tensor(rng, &[2, 9, 10], 1.0);
    let g = pad_logpolar_backward(&w, 5, 6, 2)?;
    Ok(check_tensor(rng, &x, &g, usize::MAX, |t| {
        dot(&pad_logpolar(t, 2).expect("valid"), &w)
    }))
}

fn check_conv(rng: &mut impl Rng, k: usize) -> Result<(f64, usize), ContractViolation> {
    let mode = if k == 3 {
        PadMode::WrapPhiReflectRho
    } else {
        PadMode::None
    };
    let layer = ConvLayer::new(
        random_tensor(rng, &[4, 2, k, k], 0.5),
        random_tensor(rng, &[4], 0.5),
        mode,
    )?;
    let x = random_tensor(rng, &[2, 8, 8], 1.0);
    let w = random_tensor(rng, &[4, 8, 8], 1.0);
    let g = conv2d_backward(&x, &layer, &w)?;
    let mut worst = Worst::default();
    worst.merge(check_tensor(rng, &x, &g.grad_input, usize::MAX, |t| {
        dot(&conv2d_forward(t, &layer).expect("valid"), &w)
    }));
    worst.merge(check_tensor(
        rng,
        &layer.weight,
        &g.grad_weight,
        usize::MAX,
        |t| {
            let l = ConvLayer::new(t.clone(), layer.bias.clone(), mode).expect("valid");
            dot(&conv2d_forward(&x, &l).expect("valid"), &w)
        },
    ));
    worst.merge(check_tensor(
        rng,
        &layer.bias,
        &g.grad_bias,
        usize::MAX,
        |t| {
            let l = ConvLayer::new(layer.weight.clone(), t.clone(), mode).expect("valid");
            dot(&conv2d_forward(&x, &l).expect("valid"), &w)
        },
    ));
    Ok(worst.done())
}

fn check_maxpool(rng: &mut impl Rng) -> Result<(f64, usize), ContractViolation> {
    // a shuffled ramp keeps every block's maximum separated from the runner-up
    let mut vals: Vec<f64> = (0..128).map(|i| i as f64 * 0.01).collect();
    rand::seq::SliceRandom::shuffle(vals.as_mut_slice(), rng);
    let x = Tensor::from_vec(&[2, 8, 8], vals)?;
    let w = random_tensor(rng, &[2, 4, 4], 1.0);
    let fw = maxpool2x2_forward(&x)?;
    let g = maxpool2x2_backward(&w, &fw.argmax, x.shape())?;
    Ok(check_tensor(rng, &x, &g, usize::MAX, |t| {
        dot(&maxpool2x2_forward(t).expect("valid").output, &w)
    }))
}

fn check_avgpool(rng: &mut impl Rng) -> Result<(f64, usize), ContractViolation> {
    let x = random_tensor(rng, &[3, 4, 6], 1.0);
    let w = random_tensor(rng, &[3], 1.0);
    let g = global_avgpool_backward(&w, 4, 6)?;
    Ok(check_tensor(rng, &x, &g, usize::MAX, |t| {
        dot(&global_avgpool_forward(t).expect("valid"), &w)
    }))
}

fn check_dense(rng: &mut impl Rng) -> Result<(f64, usize), ContractViolation> {
    let layer = Dense {
        weight: random_tensor(rng, &[5, 7], 0.5),
        bias: random_tensor(rng, &[5], 0.5),
    };
    let x = random_tensor(rng, &[7], 1.0);
    let w = random_tensor(rng, &[5], 1.0);
    let g = dense_backward(&x, &layer, &w)?;
    let mut worst = Worst::default();
    worst.merge(check_tensor(rng, &x, &g.grad_input, usize::MAX, |t| {
        dot(&dense_forward(t, &layer).expect("valid"), &w)
    }));
    worst.merge(check_tensor(
        rng,
        &layer.weight,
        &g.grad_weight,
        usize::MAX,
        |t| {
            let l = Dense {
                weight: t.clone(),
                bias: layer.bias.clone(),
            };
            dot(&dense_forward(&x, &l).expect("valid"), &w)
        },
    ));
    worst.merge(check_tensor(
        rng,
        &layer.bias,
        &g.grad_bias,
        usize::MAX,
        |t| {
            let l = Dense {
                weight: layer.weight.clone(),
                bias: t.clone(),
            };
            dot(&dense_forward(&x, &l).expect("valid"), &w)
        },
    ));
    Ok(worst.done())
}

fn check_tanh(rng: &mut impl Rng) -> (f64, usize) {
    let x = random_tensor(rng, &[16], 2.0);
    let w = random_tensor(rng, &[16], 1.0);
    let g = tanh_backward(&tanh_forward(&x), &w);
    check_tensor(rng, &x, &g, usize::MAX, |t| dot(&tanh_forward(t), &w))
}

fn check_softmax(rng: &mut impl Rng) -> (f64, usize) {
    let x = random_tensor(rng, &[10], 3.0);
    let w = random_tensor(rng, &[10], 1.0);
    let g = softmax_backward(&softmax_forward(&x), &w);
    check_tensor(rng, &x, &g, usize::MAX, |t| dot(&softmax_forward(t), &w))
}

fn check_cross_entropy(rng: &mut impl Rng) -> Result<(f64, usize), ContractViolation> {
    let x = random_tensor(rng, &[10], 3.0);
    let label = rng.gen_range(0..10);
    let g = cross_entropy_grad_logits(&softmax_forward(&x), label)?;
    Ok(check_tensor(rng, &x, &g, usize::MAX, |t| {
        cross_entropy(&softmax_forward(t), label).expect("valid label")
    }))
}

fn check_spatial_softmax(rng: &mut impl Rng) -> Result<(f64, usize), ContractViolation> {
    let spec = GridSpec::new(16, 16, 1.0, 20.0).expect("valid spec");
    let grid = strided_coord_grid(&spec, 4);
    let mut worst = Worst::default();
    for mode in [PhiReadout::Circular, PhiReadout::Linear] {
        let x = random_tensor(rng, &[1, 4, 4], 2.0);
        let gp = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let g = spatial_softmax_backward(&x, &grid, mode, gp)?;
        let phi0 = spatial_softmax_readout(&x, &grid, mode)?.phi;
        worst.merge(check_tensor(rng, &x, &g, usize::MAX, |t| {
            let q = spatial_softmax_readout(t, &grid, mode).expect("valid");
            // unwrap the angle next to the base point so the seam never splits a difference
            let dphi = (q.phi - phi0 + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU)
                - std::f64::consts::PI;
            gp.0 * (phi0 + dphi) + gp.1 * q.rho
        }));
    }
    Ok(worst.done())
}

fn rnn_unrolled(cell: &RnnCell<f64>, h0: &Tensor<f64>, xs: &[Tensor<f64>]) -> Vec<Tensor<f64>> {
    let mut hs = vec![h0.clone()];
    for x in xs {
        let next = rnn_step_forward(cell, hs.last().expect("nonempty"), x).expect("valid");
        hs.push(next);
    }
    hs
}

fn check_rnn(rng: &mut impl Rng, steps: usize) -> Result<(f64, usize), ContractViolation> {
    let (hidden, input) = (5, 3);
    let cell = RnnCell {
        w_x: random_tensor(rng, &[hidden, input], 0.6),
        w_h: random_tensor(rng, &[hidden, hidden], 0.6),
        bias: random_tensor(rng, &[hidden], 0.3),
    };
    let h0 = random_tensor(rng, &[hidden], 0.5);
    let xs: Vec<_> = (0..steps)
        .map(|_| random_tensor(rng, &[input], 1.0))
        .collect();
    let w = random_tensor(rng, &[hidden], 1.0);

    let hs = rnn_unrolled(&cell, &h0, &xs);
    let mut g_h = w.clone();
    let mut g_wx = Tensor::zeros(cell.w_x.shape());
    let mut g_wh = Tensor::zeros(cell.w_h.shape());
    let mut g_b = Tensor::zeros(cell.bias.shape());
    let mut g_xs = vec![Tensor::zeros(&[input]); steps];
    for t in (0..steps).rev() {
        let g = rnn_step_backward(&cell, &hs[t], &xs[t], &hs[t + 1], &g_h)?;
        g_wx.add_assign(&g.grad_w_x);
        g_wh.add_assign(&g.grad_w_h);
        g_b.add_assign(&g.grad_bias);
        g_xs[t] = g.grad_x;
        g_h = g.grad_h_prev;
    }
    let last = |c: &RnnCell<f64>, h: &Tensor<f64>, xs: &[Tensor<f64>]| {
        dot(rnn_unrolled(c, h, xs).last().expect("nonempty"), &w)
    };

    let mut worst = Worst::default();
    worst.merge(check_tensor(rng, &cell.w_x, &g_wx, usize::MAX, |t| {
        last(
            &RnnCell {
                w_x: t.clone(),
                ..cell.clone()
            },
            &h0,
            &xs,
        )
    }));
    worst.merge(check_tensor(rng, &cell.w_h, &g_wh, usize::MAX, |t| {
        last(
            &RnnCell {
                w_h: t.clone(),
                ..cell.clone()
            },
            &h0,
            &xs,
        )
    }));
    worst.merge(check_tensor(rng, &cell.bias, &g_b, usize::MAX, |t| {
        last(
            &RnnCell {
                bias: t.clone(),
                ..cell.clone()
            },
            &h0,
            &xs,
        )
    }));
    worst.merge(check_tensor(rng, &h0, &g_h, usize::MAX, |t| {
        last(&cell, t, &xs)
    }));
    for (t, gx) in g_xs.iter().enumerate() {
        worst.merge(check_tensor(rng, &xs[t], gx, usize::MAX, |v| {
            let mut xs2 = xs.clone();
            xs2[t] = v.clone();
            last(&cell, &h0, &xs2)
        }));
    }
    Ok(worst.done())
}

fn tiny_setup(rng: &mut impl Rng) -> (ModelParams<f64>, Retina, Image<f64>) {
    let side = 14;
    let spec = GridSpec::for_image(8, side, side, 1.0).expect("valid spec");
    let retina = Retina::new(spec, side, side, PhiReadout::Circular).expect("valid retina");
    let mut params = ModelParams::<f64>::init(&ModelConfig::tiny(1), rng);
    // nonzero biases so every bias gradient is exercised
    for (name, t) in PARAM_NAMES.iter().zip(params.tensors_mut()) {
        if name.ends_with("bias") {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(-0.2..0.2));
        }
    }
    let img = Image::new(Tensor::from_fn(&[1, side, side], |_| {
        rng.gen_range(0.0..1.0)
    }))
    .expect("valid image");
    (params, retina, img)
}

/// Gradient of the next fixation with respect to the localisation weights.
fn check_localise(rng: &mut impl Rng) -> Result<(f64, usize), ContractViolation> {
    let (params, retina, _) = tiny_setup(rng);
    let tap = random_tensor(rng, &[params.loc1.in_channels(), 2, 2], 1.0);
    let pole = CartesianPoint::new(6.3, 7.1);
    let dir = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let mut grads = params.zeros_like();
    localise_backward(&params, &tap, &retina, pole, dir, &mut grads)?;
    let loss = |p: &ModelParams<f64>| {
        let c = localise(p, &tap, &retina, pole).expect("valid");
        dir.0 * c.x + dir.1 * c.y
    };
    let mut worst = Worst::default();
    for name in PARAM_NAMES.iter().filter(|n| n.starts_with("locnet")) {
        let x = params.get(name).expect("known name").clone();
        let g = grads.get(name).expect("known name").clone();
        worst.merge(check_tensor(rng, &x, &g, usize::MAX, |t| {
            let mut p = params.clone();
            *p.get_mut(name).expect("known name") = t.clone();
            loss(&p)
        }));
    }
    Ok(worst.done())
}

#[derive(Clone, Copy)]
enum Objective {
    Greedy,
    Aggregate,
}

/// An unrolled objective on the tiny configuration (8x8 patch, two
/// saccades), every parameter tensor probed.
fn check_model(
    rng: &mut impl Rng,
    objective: Objective,
) -> Result<(f64, usize), ContractViolation> {
    let (params, retina, img) = tiny_setup(rng);
    let init = CartesianPoint::new(6.4, 7.3);
    let label = 3;
    let saccades = 2;
    let run = |p: &ModelParams<f64>, grads: &mut ModelParams<f64>| match objective {
        Objective::Greedy => {
            greedy_loss_backward(p, &img, label, init, &retina, grads).map(|r| r.0)
        }
        Objective::Aggregate => {
            aggregate_loss_backward(p, &img, label, init, &retina, saccades, grads).map(|r| r.0)
        }
    };

    let mut grads = params.zeros_like();
    run(&params, &mut grads)?;
    let loss = |p: &ModelParams<f64>| run(p, &mut p.zeros_like()).expect("valid");
    let mut worst = Worst::default();
    for name in PARAM_NAMES {
        let x = params.get(name).expect("known name").clone();
        let g = grads.get(name).expect("known name").clone();
        worst.merge(check_tensor(rng, &x, &g, 12, |t| {
            let mut p = params.clone();
            *p.get_mut(name).expect("known name") = t.clone();
            loss(&p)
        }));
    }
    Ok(worst.done())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(relative_error(1e-12, -1e-12) < 1e-5);
    }

    #[test]
    fn central_difference_of_cubic() {
        let d = central_difference(|e| (1.5f64 + e).powi(3));
        assert!((d - 6.75).abs() < 1e-8);
    }

    #[test]
    fn filter_selects_components() {
        let r = run_suite(Some("tanh"), 0).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].component, "tanh");
        assert!(r[0].passed());
    }
}
