//! Forward and backward passes of the glimpse network.
//!
//! One glimpse warps the source image into a log-polar patch at the current
//! fixation, runs the backbone, and feeds the second block's output (the
//! "tap") to the localisation head, which proposes the next fixation. The
//! classifier reads the globally pooled third block.
//!
//! Two unrolled objectives share the parameters:
//!
//! * greedy: localise from the initial fixation, then warp at the proposed
//!   fixation and classify once;
//! * aggregate: `S` glimpses whose classifier features drive a recurrent
//!   cell; the class is read from the final recurrent state.
//!
//! Gradients of both flow through the sampler into the fixation centers and
//! from there into the localisation head of the previous step.

use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use crate::geometry::{CartesianPoint, GridSpec, LogPolarPoint};
use crate::nnops::{
    conv2d_backward, conv2d_backward_params, conv2d_forward, cross_entropy,
    cross_entropy_grad_logits, dense_backward, dense_forward, global_avgpool_backward,
    global_avgpool_forward, maxpool2x2_backward, maxpool2x2_forward, rnn_step_backward,
    rnn_step_forward, softmax_forward, spatial_softmax_backward, spatial_softmax_readout,
    strided_coord_grid, tanh_backward, tanh_forward, ConvLayer, MaxPoolOutput, PhiReadout,
};
use crate::real::Real;
use crate::sampler::{Image, LogPolarSampler};
use crate::tensor::{ensure_contract, ContractViolation, Tensor};

/// Backbone downsampling between the patch and the localisation tap.
pub const TAP_STRIDE: usize = 4;

/// Sampling geometry shared by every glimpse on images of one size.
#[derive(Debug, Clone)]
pub struct Retina {
    sampler: LogPolarSampler,
    coord_grid: Tensor<f64>,
    phi_readout: PhiReadout,
    height: usize,
    width: usize,
}

impl Retina {
    pub fn new(
        spec: GridSpec,
        height: usize,
        width: usize,
        phi_readout: PhiReadout,
    ) -> Result<Self, ContractViolation> {
        ensure_contract!(
            spec.h_prime() == spec.w_prime()
                && spec.h_prime().is_multiple_of(8)
                && spec.h_prime() >= 8,
            "Retina::new",
            "patch must be square with a side divisible by 8, got {}x{}",
            spec.h_prime(),
            spec.w_prime()
        );
        ensure_contract!(height > 0 && width > 0, "Retina::new", "empty image");
        Ok(Self {
            sampler: LogPolarSampler::new(spec),
            coord_grid: strided_coord_grid(&spec, TAP_STRIDE),
            phi_readout,
            height,
            width,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        self.sampler.spec()
    }

    pub fn sampler(&self) -> &LogPolarSampler {
        &self.sampler
    }

    pub fn coord_grid(&self) -> &Tensor<f64> {
        &self.coord_grid
    }

    pub fn phi_readout(&self) -> PhiReadout {
        self.phi_readout
    }

    pub fn image_dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Clamps to `[0, W-1] x [0, H-1]`, reporting which axes were clamped.
    pub fn clamp(&self, p: CartesianPoint) -> (CartesianPoint, [bool; 2]) {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let cx = p.x.clamp(0.0, max_x);
        let cy = p.y.clamp(0.0, max_y);
        (CartesianPoint::new(cx, cy), [cx != p.x, cy != p.y])
    }

    fn check_image<T: Real>(&self, img: &Image<T>) -> Result<(), ContractViolation> {
        ensure_contract!(
            img.height() == self.height && img.width() == self.width,
            "Retina",
            "image is {}x{}, retina was built for {}x{}",
            img.height(),
            img.width(),
            self.height,
            self.width
        );
        Ok(())
    }
}

/// Fixations and per-step predictions of one unrolled pass.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SaccadeTrace {
    /// Initial fixation followed by every proposed one.
    pub centers: Vec<CartesianPoint>,
    /// Class distribution emitted after each step.
    pub class_probs: Vec<Vec<f64>>,
    #[serde(skip)]
    pub patches: Vec<Tensor<f32>>,
}

/// Recurrent state between glimpses of the aggregate pass.
#[derive(Debug, Clone)]
pub struct SaccadeState<T> {
    pub center: CartesianPoint,
    pub h: Tensor<T>,
    pub step: usize,
}

#[derive(Debug, Clone)]
pub struct BackboneOutput<T> {
    pub features: Tensor<T>,
    pub tap: Tensor<T>,
}

#[derive(Debug, Clone)]
struct BackboneCache<T> {
    patch: Tensor<T>,
    a1: Tensor<T>,
    p1: MaxPoolOutput<T>,
    a2: Tensor<T>,
    p2: MaxPoolOutput<T>,
    /// Third block and pooled features, absent when only the tap is needed.
    head: Option<(Tensor<T>, MaxPoolOutput<T>, Tensor<T>)>,
}

impl<T: Real> BackboneCache<T> {
    fn tap(&self) -> &Tensor<T> {
        &self.p2.output
    }

    fn features(&self) -> &Tensor<T> {
        &self.head.as_ref().expect("full backbone pass").2
    }
}

fn conv_tanh_pool<T: Real>(
    x: &Tensor<T>,
    layer: &ConvLayer<T>,
) -> Result<(Tensor<T>, MaxPoolOutput<T>), ContractViolation> {
    let a = tanh_forward(&conv2d_forward(x, layer)?);
    let p = maxpool2x2_forward(&a)?;
    Ok((a, p))
}

fn backbone_cached<T: Real>(
    params: &ModelParams<T>,
    patch: Tensor<T>,
    full: bool,
) -> Result<BackboneCache<T>, ContractViolation> {
    ensure_contract!(
        patch.rank() == 3,
        "backbone_forward",
        "expected (C, h, w) patch, got {:?}",
        patch.shape()
    );
    let (h, w) = (patch.shape()[1], patch.shape()[2]);
    ensure_contract!(
        h == w && h % 8 == 0 && h > 0,
        "backbone_forward",
        "patch must be square with a side divisible by 8, got {h}x{w}"
    );
    let (a1, p1) = conv_tanh_pool(&patch, &params.conv1)?;
    let (a2, p2) = conv_tanh_pool(&p1.output, &params.conv2)?;
    let head = if full {
        let (a3, p3) = conv_tanh_pool(&p2.output, &params.conv3)?;
        let features = global_avgpool_forward(&p3.output)?;
        Some((a3, p3, features))
    } else {
        None
    };
    Ok(BackboneCache {
        patch,
        a1,
        p1,
        a2,
        p2,
        head,
    })
}

/// Backpropagates into the backbone; returns the patch gradient if asked.
fn backbone_backward<T: Real>(
    params: &ModelParams<T>,
    cache: &BackboneCache<T>,
    grad_features: Option<&Tensor<T>>,
    grad_tap: Option<&Tensor<T>>,
    grads: &mut ModelParams<T>,
    need_patch_grad: bool,
) -> Result<Option<Tensor<T>>, ContractViolation> {
    let tap = cache.tap();
    let mut g_tap = match grad_tap {
        Some(g) => g.clone(),
        None => Tensor::zeros(tap.shape()),
    };
    if let Some(gf) = grad_features {
        let (a3, p3, _) = cache
            .head
            .as_ref()
            .expect("features gradient needs a full pass");
        let s = p3.output.shape();
        let g = global_avgpool_backward(gf, s[1], s[2])?;
        let g = maxpool2x2_backward(&g, &p3.argmax, a3.shape())?;
        let g = tanh_backward(a3, &g);
        let cg = conv2d_backward(tap, &params.conv3, &g)?;
        grads.conv3.weight.add_assign(&cg.grad_weight);
        grads.conv3.bias.add_assign(&cg.grad_bias);
        g_tap.add_assign(&cg.grad_input);
    }
    let g = maxpool2x2_backward(&g_tap, &cache.p2.argmax, cache.a2.shape())?;
    let g = tanh_backward(&cache.a2, &g);
    let cg = conv2d_backward(&cache.p1.output, &params.conv2, &g)?;
    grads.conv2.weight.add_assign(&cg.grad_weight);
    grads.conv2.bias.add_assign(&cg.grad_bias);
    let g = maxpool2x2_backward(&cg.grad_input, &cache.p1.argmax, cache.a1.shape())?;
    let g = tanh_backward(&cache.a1, &g);
    if need_patch_grad {
        let cg = conv2d_backward(&cache.patch, &params.conv1, &g)?;
        grads.conv1.weight.add_assign(&cg.grad_weight);
        grads.conv1.bias.add_assign(&cg.grad_bias);
        Ok(Some(cg.grad_input))
    } else {
        let (gw, gb) = conv2d_backward_params(&cache.patch, &params.conv1, &g)?;
        grads.conv1.weight.add_assign(&gw);
        grads.conv1.bias.add_assign(&gb);
        Ok(None)
    }
}

/// Three `conv3x3 + tanh + maxpool` blocks. The tap is the second block's
/// output; the features are the global average of the third.
pub fn backbone_forward<T: Real>(
    params: &ModelParams<T>,
    patch: &Tensor<T>,
) -> Result<BackboneOutput<T>, ContractViolation> {
    let cache = backbone_cached(params, patch.clone(), true)?;
    let features = cache.features().clone();
    Ok(BackboneOutput {
        features,
        tap: cache.p2.output,
    })
}

#[derive(Debug, Clone)]
struct ClassifyCache<T> {
    features: Tensor<T>,
    z1: Tensor<T>,
    z2: Tensor<T>,
}

fn classify_hidden<T: Real>(
    params: &ModelParams<T>,
    features: &Tensor<T>,
) -> Result<ClassifyCache<T>, ContractViolation> {
    let z1 = tanh_forward(&dense_forward(features, &params.fc1)?);
    let z2 = tanh_forward(&dense_forward(&z1, &params.fc2)?);
    Ok(ClassifyCache {
        features: features.clone(),
        z1,
        z2,
    })
}

/// Gradient into the features given the gradient on the exported hidden
/// layer.
fn classify_backward<T: Real>(
    params: &ModelParams<T>,
    cache: &ClassifyCache<T>,
    grad_z2: &Tensor<T>,
    grads: &mut ModelParams<T>,
) -> Result<Tensor<T>, ContractViolation> {
    let g = tanh_backward(&cache.z2, grad_z2);
    let dg = dense_backward(&cache.z1, &params.fc2, &g)?;
    grads.fc2.weight.add_assign(&dg.grad_weight);
    grads.fc2.bias.add_assign(&dg.grad_bias);
    let g = tanh_backward(&cache.z1, &dg.grad_input);
    let dg = dense_backward(&cache.features, &params.fc1, &g)?;
    grads.fc1.weight.add_assign(&dg.grad_weight);
    grads.fc1.bias.add_assign(&dg.grad_bias);
    Ok(dg.grad_input)
}

/// Classifier head: returns the exported second hidden layer and the class
/// distribution.
pub fn classify<T: Real>(
    params: &ModelParams<T>,
    features: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>), ContractViolation> {
    let cache = classify_hidden(params, features)?;
    let probs = softmax_forward(&dense_forward(&cache.z2, &params.fc3)?);
    Ok((cache.z2, probs))
}

#[derive(Debug, Clone)]
struct LocaliseCache<T> {
    hidden: Tensor<T>,
    logits: Tensor<T>,
    point: LogPolarPoint,
    clamped: [bool; 2],
    next: CartesianPoint,
}

fn localise_cached<T: Real>(
    params: &ModelParams<T>,
    tap: &Tensor<T>,
    retina: &Retina,
    pole: CartesianPoint,
) -> Result<LocaliseCache<T>, ContractViolation> {
    let hidden = tanh_forward(&conv2d_forward(tap, &params.loc1)?);
    let logits = conv2d_forward(&hidden, &params.loc2)?;
    let point = spatial_softmax_readout(&logits, &retina.coord_grid, retina.phi_readout)?;
    let r = point.rho.exp();
    let (s, c) = point.phi.sin_cos();
    let (next, clamped) = retina.clamp(CartesianPoint::new(pole.x + r * c, pole.y + r * s));
    Ok(LocaliseCache {
        hidden,
        logits,
        point,
        clamped,
        next,
    })
}

/// Returns the tap gradient and the gradient on the pole.
fn localise_backward_cached<T: Real>(
    params: &ModelParams<T>,
    tap: &Tensor<T>,
    cache: &LocaliseCache<T>,
    retina: &Retina,
    grad_next: (f64, f64),
    grads: &mut ModelParams<T>,
) -> Result<(Tensor<T>, (f64, f64)), ContractViolation> {
    // straight-through clamp: unclamped axes pass, clamped axes block
    let gx = if cache.clamped[0] { 0.0 } else { grad_next.0 };
    let gy = if cache.clamped[1] { 0.0 } else { grad_next.1 };
    let r = cache.point.rho.exp();
    let (s, c) = cache.point.phi.sin_cos();
    let g_rho = r * (gx * c + gy * s);
    let g_phi = r * (-gx * s + gy * c);
    let g_logits = spatial_softmax_backward(
        &cache.logits,
        &retina.coord_grid,
        retina.phi_readout,
        (g_phi, g_rho),
    )?;
    let cg = conv2d_backward(&cache.hidden, &params.loc2, &g_logits)?;
    grads.loc2.weight.add_assign(&cg.grad_weight);
    grads.loc2.bias.add_assign(&cg.grad_bias);
    let g = tanh_backward(&cache.hidden, &cg.grad_input);
    let cg = conv2d_backward(tap, &params.loc1, &g)?;
    grads.loc1.weight.add_assign(&cg.grad_weight);
    grads.loc1.bias.add_assign(&cg.grad_bias);
    Ok((cg.grad_input, (gx, gy)))
}

/// Localisation head: two 1x1 convolutions, a spatial softmax over the tap
/// cells' log-polar coordinates, and the conversion back to image
/// coordinates about `current_center`, clamped to the image.
pub fn localise<T: Real>(
    params: &ModelParams<T>,
    tap: &Tensor<T>,
    retina: &Retina,
    current_center: CartesianPoint,
) -> Result<CartesianPoint, ContractViolation> {
    let expected = [
        params.loc1.in_channels(),
        retina.spec().h_prime() / TAP_STRIDE,
        retina.spec().w_prime() / TAP_STRIDE,
    ];
    ensure_contract!(
        tap.shape() == expected,
        "localise",
        "tap shape {:?}, expected {:?}",
        tap.shape(),
        expected
    );
    Ok(localise_cached(params, tap, retina, current_center)?.next)
}

/// Backpropagates a gradient on the next fixation through the localisation
/// head. Parameter gradients are added to `grads`; returns the gradients on
/// the tap and on `current_center`.
pub fn localise_backward<T: Real>(
    params: &ModelParams<T>,
    tap: &Tensor<T>,
    retina: &Retina,
    current_center: CartesianPoint,
    grad_next: (f64, f64),
    grads: &mut ModelParams<T>,
) -> Result<(Tensor<T>, (f64, f64)), ContractViolation> {
    let cache = localise_cached(params, tap, retina, current_center)?;
    localise_backward_cached(params, tap, &cache, retina, grad_next, grads)
}

/// Log-polar readout of the localisation head before the Cartesian
/// conversion.
pub fn localise_readout<T: Real>(
    params: &ModelParams<T>,
    tap: &Tensor<T>,
    retina: &Retina,
) -> Result<LogPolarPoint, ContractViolation> {
    Ok(localise_cached(params, tap, retina, CartesianPoint::default())?.point)
}

fn to_f64_vec<T: Real>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.to_f64_lossy()).collect()
}

fn patch_f32<T: Real>(t: &Tensor<T>) -> Tensor<f32> {
    t.cast()
}

struct GreedyState<T> {
    first: BackboneCache<T>,
    loc: LocaliseCache<T>,
    second: BackboneCache<T>,
    cls: ClassifyCache<T>,
    probs: Tensor<T>,
    centers: [CartesianPoint; 2],
}

fn greedy_forward_state<T: Real>(
    params: &ModelParams<T>,
    img: &Image<T>,
    init_center: CartesianPoint,
    retina: &Retina,
) -> Result<GreedyState<T>, ContractViolation> {
    retina.check_image(img)?;
    let first = backbone_cached(params, retina.sampler.warp(img, init_center), false)?;
    let loc = localise_cached(params, first.tap(), retina, init_center)?;
    let second = backbone_cached(params, retina.sampler.warp(img, loc.next), true)?;
    let cls = classify_hidden(params, second.features())?;
    let probs = softmax_forward(&dense_forward(&cls.z2, &params.fc3)?);
    let centers = [init_center, loc.next];
    Ok(GreedyState {
        first,
        loc,
        second,
        cls,
        probs,
        centers,
    })
}

/// Two iterations with shared weights: localise from `init_center`, then
/// warp at the proposed fixation and classify.
pub fn forward_greedy<T: Real>(
    params: &ModelParams<T>,
    img: &Image<T>,
    init_center: CartesianPoint,
    retina: &Retina,
) -> Result<(Tensor<T>, SaccadeTrace), ContractViolation> {
    let st = greedy_forward_state(params, img, init_center, retina)?;
    let trace = SaccadeTrace {
        centers: st.centers.to_vec(),
        class_probs: vec![to_f64_vec(&st.probs)],
        patches: vec![patch_f32(&st.first.patch), patch_f32(&st.second.patch)],
    };
    Ok((st.probs, trace))
}

/// Cross-entropy of the greedy objective; parameter gradients are added to
/// `grads`.
pub fn greedy_loss_backward<T: Real>(
    params: &ModelParams<T>,
    img: &Image<T>,
    label: usize,
    init_center: CartesianPoint,
    retina: &Retina,
    grads: &mut ModelParams<T>,
) -> Result<(f64, Tensor<T>), ContractViolation> {
    let st = greedy_forward_state(params, img, init_center, retina)?;
    let loss = cross_entropy(&st.probs, label)?;
    let g_logits = cross_entropy_grad_logits(&st.probs, label)?;
    let dg = dense_backward(&st.cls.z2, &params.fc3, &g_logits)?;
    grads.fc3.weight.add_assign(&dg.grad_weight);
    grads.fc3.bias.add_assign(&dg.grad_bias);
    let g_features = classify_backward(params, &st.cls, &dg.grad_input, grads)?;
    let g_patch = backbone_backward(params, &st.second, Some(&g_features), None, grads, true)?
        .expect("requested");
    let g_center = retina
        .sampler
        .backward_into(img, st.centers[1], &g_patch, None)?;
    let (g_tap, _) =
        localise_backward_cached(params, st.first.tap(), &st.loc, retina, g_center, grads)?;
    backbone_backward(params, &st.first, None, Some(&g_tap), grads, false)?;
    Ok((loss, st.probs))
}

struct StepState<T> {
    center: CartesianPoint,
    backbone: BackboneCache<T>,
    cls: ClassifyCache<T>,
    h_prev: Tensor<T>,
    h_next: Tensor<T>,
    loc: LocaliseCache<T>,
}

struct AggregateState<T> {
    steps: Vec<StepState<T>>,
    probs: Vec<Tensor<T>>,
    final_center: CartesianPoint,
}

fn aggregate_forward_state<T: Real>(
    params: &ModelParams<T>,
    img: &Image<T>,
    init_center: CartesianPoint,
    retina: &Retina,
    saccades: usize,
) -> Result<AggregateState<T>, ContractViolation> {
    ensure_contract!(
        saccades >= 1,
        "forward_aggregate",
        "need at least one saccade"
    );
    retina.check_image(img)?;
    let mut steps = Vec::with_capacity(saccades);
    let mut probs = Vec::with_capacity(saccades);
    let mut state = SaccadeState {
        center: init_center,
        h: Tensor::zeros(&[params.rnn.hidden()]),
        step: 0,
    };
    while state.step < saccades {
        let center = state.center;
        let backbone = backbone_cached(params, retina.sampler.warp(img, center), true)?;
        let cls = classify_hidden(params, backbone.features())?;
        let h_next = rnn_step_forward(&params.rnn, &state.h, &cls.z2)?;
        probs.push(softmax_forward(&dense_forward(&h_next, &params.rnn_out)?));
        let loc = localise_cached(params, backbone.tap(), retina, center)?;
        let next = loc.next;
        let h_prev = std::mem::replace(&mut state.h, h_next.clone());
        steps.push(StepState {
            center,
            backbone,
            cls,
            h_prev,
            h_next,
            loc,
        });
        state.center = next;
        state.step += 1;
    }
    Ok(AggregateState {
        steps,
        probs,
        final_center: state.center,
    })
}

fn aggregate_trace<T: Real>(st: &AggregateState<T>) -> SaccadeTrace {
    let mut centers: Vec<CartesianPoint> = st.steps.iter().map(|s| s.center).collect();
    centers.push(st.final_center);
    SaccadeTrace {
        centers,
        class_probs: st.probs.iter().map(to_f64_vec).collect(),
        patches: st
            .steps
            .iter()
            .map(|s| patch_f32(&s.backbone.patch))
            .collect(),
    }
}

/// `saccades` glimpses aggregated by the recurrent cell; the returned
/// distribution is read from the final state.
pub fn forward_aggregate<T: Real>(
    params: &ModelParams<T>,
    img: &Image<T>,
    init_center: CartesianPoint,
    retina: &Retina,
    saccades: usize,
) -> Result<(Tensor<T>, SaccadeTrace), ContractViolation> {
    let st = aggregate_forward_state(params, img, init_center, retina, saccades)?;
    let trace = aggregate_trace(&st);
    Ok((st.probs.last().expect("at least one step").clone(), trace))
}

/// Cross-entropy of the final aggregated prediction with full
/// backpropagation through time; gradients are added to `grads`.
pub fn aggregate_loss_backward<T: Real>(
    params: &ModelParams<T>,
    img: &Image<T>,
    label: usize,
    init_center: CartesianPoint,
    retina: &Retina,
    saccades: usize,
    grads: &mut ModelParams<T>,
) -> Result<(f64, SaccadeTrace), ContractViolation> {
    let st = aggregate_forward_state(params, img, init_center, retina, saccades)?;
    let last = st.steps.last().expect("at least one step");
    let final_probs = st.probs.last().expect("at least one step");
    let loss = cross_entropy(final_probs, label)?;

    let g_logits = cross_entropy_grad_logits(final_probs, label)?;
    let dg = dense_backward(&last.h_next, &params.rnn_out, &g_logits)?;
    grads.rnn_out.weight.add_assign(&dg.grad_weight);
    grads.rnn_out.bias.add_assign(&dg.grad_bias);

    let mut g_h = dg.grad_input;
    // gradient on the fixation produced by the step being processed
    let mut g_next_center = (0.0, 0.0);
    for (t, step) in st.steps.iter().enumerate().rev() {
        let rg = rnn_step_backward(&params.rnn, &step.h_prev, &step.cls.z2, &step.h_next, &g_h)?;
        grads.rnn.w_x.add_assign(&rg.grad_w_x);
        grads.rnn.w_h.add_assign(&rg.grad_w_h);
        grads.rnn.bias.add_assign(&rg.grad_bias);

        let (g_tap, g_pole) = if g_next_center != (0.0, 0.0) {
            let (gt, gp) = localise_backward_cached(
                params,
                step.backbone.tap(),
                &step.loc,
                retina,
                g_next_center,
                grads,
            )?;
            (Some(gt), gp)
        } else {
            (None, (0.0, 0.0))
        };
        let g_features = classify_backward(params, &step.cls, &rg.grad_x, grads)?;
        let g_patch = backbone_backward(
            params,
            &step.backbone,
            Some(&g_features),
            g_tap.as_ref(),
            grads,
            t > 0,
        )?;
        g_next_center = match g_patch {
            Some(gp) => {
                let gw = retina.sampler.backward_into(img, step.center, &gp, None)?;
                (g_pole.0 + gw.0, g_pole.1 + gw.1)
            }
            None => (0.0, 0.0),
        };
        g_h = rg.grad_h_prev;
    }
    Ok((loss, aggregate_trace(&st)))
}
