//! Two-step training: supervised pretraining of the flow predictor, then joint training
//! on homogeneous labeled and unlabeled batches with the consistency losses.

pub mod adam;
pub mod augment;

use ndarray::{Array3, Array4};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DEFAULT_DELTA;
use crate::losses::{loss_supervised_grad, loss_unsupervised_grad, LossWeights, UnsupervisedTerms};
use crate::metrics::evaluate_dataset;
use crate::msunet::{backward, forward_with_tape, init_weights, ModelConfig, ModelWeights};
use crate::synth::Sample;

pub use adam::{AdamConfig, AdamState};
pub use augment::{augment, augment_pair, gaussian_blur, AugmentConfig};

/// Environment variable selecting the number of augmentation workers.
pub const NUM_WORKERS_ENV: &str = "WIDECORRECT_NUM_WORKERS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub optimizer: AdamConfig,
    pub pretrain_epochs: usize,
    pub main_epochs: usize,
    pub batch_size: usize,
    pub delta: f64,
    pub loss: LossWeights,
    /// Scale of the unlabeled-batch loss relative to labeled batches.
    pub unsup_weight: f64,
    pub augment: AugmentConfig,
    pub val_fraction: f64,
    pub seed: u64,
    /// Ignore the unlabeled set entirely.
    pub supervised_only: bool,
    pub use_rc: bool,
    pub use_drc: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::desk(),
            optimizer: AdamConfig::default(),
            pretrain_epochs: 20,
            main_epochs: 100,
            batch_size: 4,
            delta: DEFAULT_DELTA,
            loss: LossWeights::default(),
            unsup_weight: 1.0,
            augment: AugmentConfig::default(),
            val_fraction: 0.1,
            seed: 0,
            supervised_only: false,
            use_rc: true,
            use_drc: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        let o = &self.optimizer;
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if !(o.lr > 0.0) || !o.lr.is_finite() {
            return bad("lr must be positive");
        }
        if !(o.weight_decay >= 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return bad("optimizer needs weight_decay >= 0, betas in [0, 1) and eps > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.delta > 0.0) || !(self.unsup_weight >= 0.0) {
            return bad("delta must be positive and unsup_weight non-negative");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must lie in [0, 1)");
        }
        let a = &self.augment;
        if !(a.noise_sigma >= 0.0) || !(a.blur_sigma >= 0.0) || !(a.sharpen_amount >= 0.0) {
            return bad("augmentation bounds must be non-negative");
        }
        Ok(())
    }

    fn terms(&self) -> UnsupervisedTerms {
        UnsupervisedTerms {
            rc: self.use_rc,
            drc: self.use_drc,
        }
    }
}

pub struct TrainState {
    pub weights: ModelWeights,
    pub optimizer: AdamState,
    pub rng: ChaCha8Rng,
    pub epoch: usize,
    /// Optimizer steps taken over the whole run; unlike the optimizer's own bias
    /// correction counter it is not reset between the two training steps.
    pub global_step: u64,
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        let weights = init_weights(&config.model, config.seed)?;
        let optimizer = AdamState::new(&weights);
        Ok(Self {
            weights,
            optimizer,
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x7ea1_5eed),
            epoch: 0,
            global_step: 0,
        })
    }

    pub fn step(&self) -> u64 {
        self.global_step
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepStats {
    pub loss: f64,
}

fn check_finite(loss: f64, grads: &ModelWeights) -> Result<()> {
    if !loss.is_finite() || !grads.all_finite() {
        return Err(Error::InvalidInput(format!("training diverged (loss {loss})")));
    }
    Ok(())
}

/// Supervised loss and its parameter gradient, averaged over the batch. With
/// `with_seg = false` the segmentation term is dropped and its head gets no gradient.
pub fn supervised_gradients(
    weights: &ModelWeights,
    config: &TrainConfig,
    batch: &[&Sample],
    with_seg: bool,
) -> Result<(f64, ModelWeights)> {
    let mut lw = config.loss;
    if !with_seg {
        lw.lambda2 = 0.0;
    }
    let images: Vec<_> = batch.iter().map(|s| s.distorted.clone()).collect();
    let (pred, tape) = forward_with_tape(weights, &config.model, &images)?;
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut d_flows = Vec::with_capacity(batch.len());
    let mut d_logits = Vec::with_capacity(batch.len());
    for (b, s) in batch.iter().enumerate() {
        let (gt, mask) = s.require_labels()?;
        let (l, df, dl) = loss_supervised_grad(&pred.flows[b], &pred.seg_logits[b], gt, mask.view(), &lw, config.delta)?;
        total += l.total * scale;
        d_flows.push(df * scale);
        d_logits.push(dl * scale);
    }
    let grads = backward(weights, &config.model, &tape, &d_flows, with_seg.then_some(&d_logits[..]))?;
    Ok((total, grads))
}

/// Forward, supervised loss, backward and one optimizer step.
pub fn train_step_supervised(state: &mut TrainState, config: &TrainConfig, batch: &[&Sample], with_seg: bool) -> Result<StepStats> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let (loss, grads) = supervised_gradients(&state.weights, config, batch, with_seg)?;
    check_finite(loss, &grads)?;
    state.optimizer.update(&config.optimizer, &mut state.weights, &grads);
    state.global_step += 1;
    Ok(StepStats { loss })
}

fn worker_count() -> usize {
    std::env::var(NUM_WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Augmented view pairs, one per sample. Per-sample seeds are drawn in order before any
/// work is distributed, so the result does not depend on the worker count.
pub fn augment_batch(images: &[&crate::geometry::Image], cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Vec<(crate::geometry::Image, crate::geometry::Image)> {
    let seeds: Vec<u64> = images.iter().map(|_| rng.random()).collect();
    let workers = worker_count();
    if workers <= 1 || images.len() <= 1 {
        return images.iter().zip(&seeds).map(|(im, &s)| augment_pair(im, cfg, s)).collect();
    }
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool");
    pool.install(|| {
        images
            .par_iter()
            .zip(seeds.par_iter())
            .map(|(im, &s)| augment_pair(im, cfg, s))
            .collect()
    })
}

/// Unsupervised loss and gradient for pre-augmented view pairs. Both branches run
/// through the same weights; their parameter gradients are summed.
pub fn unsupervised_gradients(
    weights: &ModelWeights,
    config: &TrainConfig,
    views: &[(crate::geometry::Image, crate::geometry::Image)],
) -> Result<(f64, ModelWeights)> {
    let first: Vec<_> = views.iter().map(|v| v.0.clone()).collect();
    let second: Vec<_> = views.iter().map(|v| v.1.clone()).collect();
    let snapshot = weights.checksum();
    let (p1, t1) = forward_with_tape(weights, &config.model, &first)?;
    assert_eq!(weights.checksum(), snapshot, "siamese branches must share one weight snapshot");
    let (p2, t2) = forward_with_tape(weights, &config.model, &second)?;
    let scale = config.unsup_weight / views.len() as f64;
    let mut total = 0.0;
    let (mut df1, mut df2, mut dl1, mut dl2): (Vec<Array3<f64>>, Vec<Array3<f64>>, Vec<Array4<f64>>, Vec<Array4<f64>>) =
        Default::default();
    for b in 0..views.len() {
        let (l, [f1, f2], [g1, g2]) = loss_unsupervised_grad(
            [&p1.flows[b], &p2.flows[b]],
            [&p1.seg_logits[b], &p2.seg_logits[b]],
            &config.loss,
            config.delta,
            config.terms(),
        )?;
        total += l.total * scale;
        df1.push(f1 * scale);
        df2.push(f2 * scale);
        dl1.push(g1 * scale);
        dl2.push(g2 * scale);
    }
    let mut grads = backward(weights, &config.model, &t1, &df1, Some(&dl1))?;
    let g2 = backward(weights, &config.model, &t2, &df2, Some(&dl2))?;
    grads.add_scaled(&g2, 1.0);
    Ok((total, grads))
}

/// Two augmented views per image, the consistency losses, and one optimizer step.
pub fn train_step_unsupervised(state: &mut TrainState, config: &TrainConfig, batch: &[&Sample]) -> Result<StepStats> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let images: Vec<_> = batch.iter().map(|s| &s.distorted).collect();
    let views = augment_batch(&images, &config.augment, &mut state.rng);
    let (loss, grads) = unsupervised_gradients(&state.weights, config, &views)?;
    check_finite(loss, &grads)?;
    state.optimizer.update(&config.optimizer, &mut state.weights, &grads);
    state.global_step += 1;
    Ok(StepStats { loss })
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_s: Option<f64>,
    pub loss_u: Option<f64>,
    pub epe: Option<f64>,
    pub lineacc: Option<f64>,
    pub shapeacc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchKind {
    Labeled,
    Unlabeled,
}

/// Interleaves `labeled` and `unlabeled` batch counts so that each kind is spread
/// evenly through the epoch in proportion to its count.
pub fn interleave(labeled: usize, unlabeled: usize) -> Vec<BatchKind> {
    let mut out = Vec::with_capacity(labeled + unlabeled);
    let (mut l, mut u) = (0, 0);
    while l < labeled || u < unlabeled {
        // Take a labeled batch while its share of progress lags the unlabeled share.
        let take_labeled = u >= unlabeled || (l < labeled && l * unlabeled <= u * labeled);
        if take_labeled {
            out.push(BatchKind::Labeled);
            l += 1;
        } else {
            out.push(BatchKind::Unlabeled);
            u += 1;
        }
    }
    out
}

/// Splits labeled indices into (train, validation) with a seeded shuffle.
pub fn validation_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a11_d5e7);
    idx.shuffle(&mut rng);
    let n_val = if n >= 2 { ((n as f64 * fraction).round() as usize).min(n - 1) } else { 0 };
    let val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    train.sort_unstable();
    let mut val_sorted = val;
    val_sorted.sort_unstable();
    (train, val_sorted)
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub log: Vec<EpochRecord>,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

fn batches<'a>(samples: &[&'a Sample], size: usize) -> Vec<Vec<&'a Sample>> {
    samples.chunks(size).map(|c| c.to_vec()).collect()
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn validate_epoch(state: &TrainState, config: &TrainConfig, val: &[Sample], epoch: usize, ls: &[f64], lu: &[f64]) -> Result<EpochRecord> {
    let (epe, lineacc, shapeacc) = if val.is_empty() {
        (None, None, None)
    } else {
        let r = evaluate_dataset(val, &state.weights, &config.model)?;
        (r.epe, r.lineacc, r.shapeacc)
    };
    Ok(EpochRecord {
        epoch,
        loss_s: mean(ls),
        loss_u: mean(lu),
        epe,
        lineacc,
        shapeacc,
    })
}

/// Full schedule. Epoch 0 of the log is the untrained model; epochs
/// `1..=pretrain_epochs` are supervised pretraining without the segmentation term, the
/// rest joint training. `on_epoch` sees every record with the current weights.
pub fn run_training<F>(labeled: &[Sample], unlabeled: &[Sample], config: &TrainConfig, mut on_epoch: F) -> Result<TrainOutcome>
where
    F: FnMut(&EpochRecord, &TrainState) -> Result<()>,
{
    config.validate()?;
    if labeled.is_empty() {
        return Err(Error::InvalidInput("labeled set is empty".into()));
    }
    for s in labeled {
        s.require_labels()?;
    }
    let (train_idx, val_idx) = validation_split(labeled.len(), config.val_fraction, config.seed);
    let train: Vec<&Sample> = train_idx.iter().map(|&i| &labeled[i]).collect();
    let val: Vec<Sample> = val_idx.iter().map(|&i| labeled[i].clone()).collect();
    let unlabeled: Vec<&Sample> = if config.supervised_only { Vec::new() } else { unlabeled.iter().collect() };

    let mut state = TrainState::new(config)?;
    let mut log = Vec::new();
    let record = validate_epoch(&state, config, &val, 0, &[], &[])?;
    on_epoch(&record, &state)?;
    log.push(record);

    let total = config.pretrain_epochs + config.main_epochs;
    for epoch in 1..=total {
        let pretrain = epoch <= config.pretrain_epochs;
        if epoch == config.pretrain_epochs + 1 && config.pretrain_epochs > 0 {
            // Joint training starts from fresh moment estimates.
            state.optimizer = AdamState::new(&state.weights);
        }
        let mut order = train.clone();
        order.shuffle(&mut state.rng);
        let mut lab = batches(&order, config.batch_size).into_iter();
        let mut unl = if pretrain {
            Vec::new().into_iter()
        } else {
            let mut u = unlabeled.clone();
            u.shuffle(&mut state.rng);
            batches(&u, config.batch_size).into_iter()
        };
        let plan = interleave(lab.len(), unl.len());
        let (mut ls, mut lu) = (Vec::new(), Vec::new());
        for kind in plan {
            match kind {
                BatchKind::Labeled => {
                    let b = lab.next().expect("planned labeled batch");
                    assert!(b.iter().all(|s| s.is_labeled()), "labeled batch holds an unlabeled sample");
                    ls.push(train_step_supervised(&mut state, config, &b, !pretrain)?.loss);
                }
                BatchKind::Unlabeled => {
                    let b = unl.next().expect("planned unlabeled batch");
                    lu.push(train_step_unsupervised(&mut state, config, &b)?.loss);
                }
            }
        }
        state.epoch = epoch;
        let record = validate_epoch(&state, config, &val, epoch, &ls, &lu)?;
        log::info!(
            "epoch {epoch}/{total}: loss_s {:?} loss_u {:?} val epe {:?}",
            record.loss_s,
            record.loss_u,
            record.epe
        );
        on_epoch(&record, &state)?;
        log.push(record);
    }
    Ok(TrainOutcome {
        state,
        log,
        train_ids: train.iter().map(|s| s.id.clone()).collect(),
        val_ids: val.iter().map(|s| s.id.clone()).collect(),
    })
}
