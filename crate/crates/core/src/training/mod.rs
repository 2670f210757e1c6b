//! Joint training of the greedy and aggregate objectives, and evaluation.

mod augment;
mod config;
mod metrics;
mod optim;

pub use augment::{augment, flip_horizontal, sample_init_center, zoom};
pub use config::{Augmentations, EvalCenter, OptimizerKind, TrainConfig};
pub use metrics::{metrics_header, EpochSummary, EvalMetrics, MetricsRow};
pub use optim::{decode_u64, encode_u64, grad_norm, Optimizer};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{Dataset, NUM_CLASSES};
use crate::geometry::CartesianPoint;
use crate::model::{
    aggregate_loss_backward, forward_aggregate, forward_greedy, greedy_loss_backward, Checkpoint,
    CheckpointError, ModelConfig, ModelParams, Retina,
};
use crate::nnops::cross_entropy;
use crate::sampler::Image;
use crate::tensor::ContractViolation;

const EPOCH_RECORD: &str = "meta.epoch";

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}: training diverged")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error("dataset is {found}, model expects {expected}")]
    DatasetMismatch { found: String, expected: String },
    #[error(transparent)]
    Contract(#[from] ContractViolation),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// One training example with its augmentation applied and first fixation
/// drawn.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Image<f32>,
    pub label: usize,
    pub init_center: CartesianPoint,
}

/// Per-batch means.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub loss_total: f64,
    pub loss_greedy: f64,
    pub loss_aggregate: f64,
    pub samples: usize,
}

/// Which objectives a step trains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objectives {
    pub lambda_greedy: f64,
    pub aggregate: bool,
    pub saccades: usize,
}

impl Objectives {
    pub fn for_epoch(cfg: &TrainConfig, epoch: usize) -> Self {
        Self {
            lambda_greedy: cfg.lambda_greedy,
            aggregate: cfg.trains_aggregate(epoch),
            saccades: cfg.saccades,
        }
    }
}

/// Summed losses and gradients of a contiguous run of samples.
fn chunk_grads(
    params: &ModelParams<f32>,
    samples: &[Sample],
    retina: &Retina,
    obj: Objectives,
) -> Result<(StepStats, ModelParams<f32>), ContractViolation> {
    let mut grads = params.zeros_like();
    let mut greedy_grads = params.zeros_like();
    let mut stats = StepStats::default();
    for s in samples {
        if obj.lambda_greedy > 0.0 {
            greedy_grads.fill_zero();
            let (l, _) = greedy_loss_backward(
                params,
                &s.image,
                s.label,
                s.init_center,
                retina,
                &mut greedy_grads,
            )?;
            greedy_grads.scale(obj.lambda_greedy as f32);
            grads.add_assign(&greedy_grads);
            stats.loss_greedy += l;
        }
        if obj.aggregate {
            let (l, _) = aggregate_loss_backward(
                params,
                &s.image,
                s.label,
                s.init_center,
                retina,
                obj.saccades,
                &mut grads,
            )?;
            stats.loss_aggregate += l;
        }
        stats.samples += 1;
    }
    Ok((stats, grads))
}

/// Mean joint loss of a minibatch and its gradient. `workers` contiguous
/// chunks run in parallel and are summed in chunk order, so a fixed worker
/// count gives identical results on every run.
pub fn train_step(
    params: &ModelParams<f32>,
    batch: &[Sample],
    retina: &Retina,
    obj: Objectives,
    workers: usize,
) -> Result<(StepStats, ModelParams<f32>), ContractViolation> {
    let chunk = batch.len().div_ceil(workers.max(1)).max(1);
    let parts: Vec<_> = if workers <= 1 {
        vec![chunk_grads(params, batch, retina, obj)?]
    } else {
        batch
            .par_chunks(chunk)
            .map(|c| chunk_grads(params, c, retina, obj))
            .collect::<Result<_, _>>()?
    };
    let mut iter = parts.into_iter();
    let (mut stats, mut grads) = iter
        .next()
        .unwrap_or_else(|| (StepStats::default(), params.zeros_like()));
    for (s, g) in iter {
        stats.loss_greedy += s.loss_greedy;
        stats.loss_aggregate += s.loss_aggregate;
        stats.samples += s.samples;
        grads.add_assign(&g);
    }
    let n = stats.samples.max(1) as f64;
    stats.loss_greedy /= n;
    stats.loss_aggregate /= n;
    stats.loss_total = obj.lambda_greedy * stats.loss_greedy + stats.loss_aggregate;
    grads.scale((1.0 / n) as f32);
    Ok((stats, grads))
}

/// Seed of the generator that shuffles and augments epoch `epoch`.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Training state: parameters, optimizer and completed-epoch count.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub params: ModelParams<f32>,
    pub optimizer: Optimizer,
    pub epochs_done: usize,
    retina: Retina,
}

/// Called after each optimizer step with the 0-based batch index.
pub type BatchHook<'a> = dyn FnMut(usize, &StepStats) + 'a;

impl Trainer {
    pub fn new(
        config: TrainConfig,
        channels: usize,
        height: usize,
        width: usize,
    ) -> Result<Self, TrainError> {
        config.validate().map_err(TrainError::InvalidConfig)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = ModelParams::init(&ModelConfig::reference(channels), &mut rng);
        Self::with_params(config, params, height, width)
    }

    pub fn with_params(
        config: TrainConfig,
        params: ModelParams<f32>,
        height: usize,
        width: usize,
    ) -> Result<Self, TrainError> {
        config.validate().map_err(TrainError::InvalidConfig)?;
        let retina = config
            .retina(height, width)
            .map_err(TrainError::InvalidConfig)?;
        let optimizer = Optimizer::new(&config, &params);
        Ok(Self {
            config,
            params,
            optimizer,
            epochs_done: 0,
            retina,
        })
    }

    /// Resumes from a checkpoint written by [`Trainer::checkpoint`].
    pub fn from_checkpoint(
        config: TrainConfig,
        ck: &Checkpoint,
        height: usize,
        width: usize,
    ) -> Result<Self, TrainError> {
        let params = ck.params()?;
        let mut t = Self::with_params(config, params, height, width)?;
        t.optimizer = Optimizer::restore(&t.config, &t.params, ck)?;
        let epoch = ck
            .get(EPOCH_RECORD)
            .ok_or_else(|| CheckpointError::Corrupt(format!("missing {EPOCH_RECORD:?}")))?;
        t.epochs_done = decode_u64(epoch)? as usize;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint, CheckpointError> {
        let mut ck = Checkpoint::from_params(&self.params);
        self.optimizer.save_into(&mut ck)?;
        ck.push(EPOCH_RECORD, encode_u64(self.epochs_done as u64))?;
        Ok(ck)
    }

    pub fn retina(&self) -> &Retina {
        &self.retina
    }

    fn check_dataset(&self, ds: &Dataset) -> Result<(), TrainError> {
        let (h, w) = self.retina.image_dims();
        let c = self.params.conv1.in_channels();
        if ds.channels() != c || ds.height() != h || ds.width() != w {
            return Err(TrainError::DatasetMismatch {
                found: format!("{}x{}x{}", ds.channels(), ds.height(), ds.width()),
                expected: format!("{c}x{h}x{w}"),
            });
        }
        Ok(())
    }

    /// Draws the samples of one epoch: shuffled order, augmentation and
    /// initial fixations, all from the epoch's seed.
    pub fn epoch_samples(&self, ds: &Dataset, epoch: usize) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(self.config.seed, epoch));
        let mut order: Vec<usize> = (0..ds.len()).collect();
        order.shuffle(&mut rng);
        let (h, w) = (ds.height(), ds.width());
        order
            .into_iter()
            .map(|i| {
                let image = if self.config.augment.is_identity() {
                    ds.image(i)
                } else {
                    augment(&ds.image(i), &mut rng, &self.config.augment)
                };
                let init_center = sample_init_center(&mut rng, h, w, self.config.init_margin);
                Sample {
                    image,
                    label: ds.label(i),
                    init_center,
                }
            })
            .collect()
    }

    /// Worker count for a step: one in deterministic mode, else the pool
    /// size.
    pub fn workers(&self) -> usize {
        if self.config.deterministic {
            1
        } else {
            rayon::current_num_threads()
        }
    }

    /// Runs the next epoch; returns per-task mean training losses.
    pub fn train_epoch(
        &mut self,
        ds: &Dataset,
        hook: &mut BatchHook<'_>,
    ) -> Result<StepStats, TrainError> {
        self.check_dataset(ds)?;
        let epoch = self.epochs_done;
        let obj = Objectives::for_epoch(&self.config, epoch);
        let samples = self.epoch_samples(ds, epoch);
        let workers = self.workers();
        self.optimizer.set_lr(self.config.lr_at(epoch));
        let mut total = StepStats::default();
        for (b, batch) in samples.chunks(self.config.batch_size).enumerate() {
            let (stats, mut grads) = train_step(&self.params, batch, &self.retina, obj, workers)?;
            if !stats.loss_total.is_finite() || !grads.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    loss: stats.loss_total,
                });
            }
            if let Some(cap) = self.config.clip_norm {
                let norm = grad_norm(&grads);
                if norm > cap {
                    grads.scale((cap / norm) as f32);
                }
            }
            self.optimizer.step(&mut self.params, &grads);
            hook(b, &stats);
            let n = stats.samples as f64;
            total.loss_greedy += stats.loss_greedy * n;
            total.loss_aggregate += stats.loss_aggregate * n;
            total.samples += stats.samples;
        }
        let n = total.samples.max(1) as f64;
        total.loss_greedy /= n;
        total.loss_aggregate /= n;
        total.loss_total = obj.lambda_greedy * total.loss_greedy + total.loss_aggregate;
        self.epochs_done += 1;
        Ok(total)
    }
}

/// Initial fixations used for evaluation: the image center, or draws from
/// `seed`.
pub fn eval_centers(ds: &Dataset, mode: EvalCenter, margin: f64, seed: u64) -> Vec<CartesianPoint> {
    let (h, w) = (ds.height(), ds.width());
    match mode {
        EvalCenter::ImageCenter => {
            vec![CartesianPoint::new((w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0); ds.len()]
        }
        EvalCenter::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..ds.len())
                .map(|_| sample_init_center(&mut rng, h, w, margin))
                .collect()
        }
    }
}

#[derive(Debug, Clone, Default)]
struct EvalTally {
    n: usize,
    loss_aggregate: f64,
    loss_greedy: f64,
    correct_greedy: usize,
    correct_per_step: Vec<usize>,
    confusion: Vec<[usize; NUM_CLASSES]>,
}

impl EvalTally {
    fn merge(mut self, other: EvalTally) -> EvalTally {
        self.n += other.n;
        self.loss_aggregate += other.loss_aggregate;
        self.loss_greedy += other.loss_greedy;
        self.correct_greedy += other.correct_greedy;
        if self.confusion.is_empty() {
            self.confusion = other.confusion;
        } else {
            for (a, b) in self.confusion.iter_mut().zip(other.confusion) {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
        }
        if self.correct_per_step.is_empty() {
            self.correct_per_step = other.correct_per_step;
        } else {
            for (a, b) in self.correct_per_step.iter_mut().zip(other.correct_per_step) {
                *a += b;
            }
        }
        self
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

fn eval_range(
    params: &ModelParams<f32>,
    ds: &Dataset,
    centers: &[CartesianPoint],
    retina: &Retina,
    saccades: usize,
    range: std::ops::Range<usize>,
) -> Result<EvalTally, ContractViolation> {
    let mut t = EvalTally {
        correct_per_step: vec![0; saccades],
        confusion: vec![[0; NUM_CLASSES]; NUM_CLASSES],
        ..EvalTally::default()
    };
    for i in range {
        let img = ds.image(i);
        let label = ds.label(i);
        let (probs, trace) = forward_aggregate(params, &img, centers[i], retina, saccades)?;
        t.loss_aggregate += cross_entropy(&probs, label)?;
        t.confusion[label][probs.argmax()] += 1;
        for (k, p) in trace.class_probs.iter().enumerate() {
            if argmax(p) == label {
                t.correct_per_step[k] += 1;
            }
        }
        let (gp, _) = forward_greedy(params, &img, centers[i], retina)?;
        t.loss_greedy += cross_entropy(&gp, label)?;
        if gp.argmax() == label {
            t.correct_greedy += 1;
        }
        t.n += 1;
    }
    Ok(t)
}

/// Accuracy of the final-saccade prediction, per-saccade accuracies and
/// the greedy objective's accuracy. Results do not depend on `workers`.
pub fn evaluate(
    params: &ModelParams<f32>,
    ds: &Dataset,
    retina: &Retina,
    centers: &[CartesianPoint],
    saccades: usize,
    workers: usize,
) -> Result<EvalMetrics, ContractViolation> {
    crate::tensor::ensure_contract!(
        centers.len() == ds.len(),
        "evaluate",
        "one center per image required"
    );
    crate::tensor::ensure_contract!(saccades >= 1, "evaluate", "need at least one saccade");
    let n = ds.len();
    let chunk = n.div_ceil(workers.max(1)).max(1);
    let ranges: Vec<_> = (0..n)
        .step_by(chunk)
        .map(|s| s..(s + chunk).min(n))
        .collect();
    let tallies: Vec<EvalTally> = if workers <= 1 {
        ranges
            .into_iter()
            .map(|r| eval_range(params, ds, centers, retina, saccades, r))
            .collect::<Result<_, _>>()?
    } else {
        ranges
            .into_par_iter()
            .map(|r| eval_range(params, ds, centers, retina, saccades, r))
            .collect::<Result<_, _>>()?
    };
    let t = tallies.into_iter().fold(
        EvalTally {
            correct_per_step: vec![0; saccades],
            ..EvalTally::default()
        },
        EvalTally::merge,
    );
    let denom = t.n.max(1) as f64;
    let per_saccade: Vec<f64> = t
        .correct_per_step
        .iter()
        .map(|&c| c as f64 / denom)
        .collect();
    Ok(EvalMetrics {
        samples: t.n,
        accuracy: *per_saccade.last().expect("saccades >= 1"),
        per_saccade,
        loss_aggregate: t.loss_aggregate / denom,
        loss_greedy: t.loss_greedy / denom,
        greedy_accuracy: t.correct_greedy as f64 / denom,
        confusion: t.confusion,
    })
}
