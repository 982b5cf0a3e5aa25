//! The contrastive training loop: batching, the dynamic negative queue,
//! feature-space augmentations, plain and reweighted InfoNCE, and the
//! optimizer.
//!
//! Negatives for an anchor are the other batch members plus every queue
//! entry. Queue entries store frozen features and coordinates; their
//! location embeddings are recomputed with the current parameters each
//! step. Pair weights always come from the frozen input features and are
//! constants with respect to the gradients.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{Dataset, GeoTaggedEmbedding};
use crate::encoders::{DualEncoder, EncoderGrads};
use crate::error::Error;
use crate::evalretrieval::{build_gallery, evaluate, EvalReport};
use crate::geodesy::GeoCoord;
use crate::reweighting::{weight_entry, NegativeClass, ReweightConfig, Sample};

/// Training hyperparameters. `reweight: None` is the plain InfoNCE
/// baseline.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub queue_capacity: usize,
    /// P noisy copies of each anchor, averaged in the loss.
    pub augmentations: usize,
    pub tau: f64,
    pub reweight: Option<ReweightConfig>,
    /// Standard deviation of the additive feature noise.
    pub augment_noise_sigma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 30,
            learning_rate: 1e-3,
            seed: 0,
            queue_capacity: 256,
            augmentations: 2,
            tau: 0.07,
            reweight: None,
            augment_noise_sigma: 0.01,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), Error> {
        let bad = |name: &'static str, reason: String| Err(Error::InvalidParameter { name, reason });
        if self.batch_size < 2 {
            return bad("batch_size", format!("need >= 2, got {}", self.batch_size));
        }
        if self.augmentations < 1 {
            return bad("augmentations", "need >= 1".into());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate", format!("must be positive, got {}", self.learning_rate));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return bad("tau", format!("must be positive, got {}", self.tau));
        }
        if !(self.augment_noise_sigma >= 0.0) || !self.augment_noise_sigma.is_finite() {
            return bad(
                "augment_noise_sigma",
                format!("must be nonnegative, got {}", self.augment_noise_sigma),
            );
        }
        Ok(())
    }
}

/// FIFO ring of frozen (features, coordinate) pairs serving as extra
/// negatives.
#[derive(Debug, Clone, Default)]
pub struct NegativeQueue {
    entries: VecDeque<(Vec<f32>, GeoCoord)>,
    capacity: usize,
}

impl NegativeQueue {
    pub fn new(capacity: usize) -> Self {
        NegativeQueue {
            entries: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn push(&mut self, features: Vec<f32>, coord: GeoCoord) {
        if self.capacity == 0 {
            return;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((features, coord));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f32], GeoCoord)> {
        self.entries.iter().map(|(f, c)| (f.as_slice(), *c))
    }
}

/// Converts stored features to the f64 encoder input and L2-normalizes,
/// the same preparation the training loop applies.
pub fn prepare_input(features: &[f32]) -> Vec<f64> {
    let mut x: Vec<f64> = features.iter().map(|&v| v as f64).collect();
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    for v in &mut x {
        *v /= norm;
    }
    x
}

fn check_embeddings(v: &[f64], l_pos: &[f64], negs: &[Vec<f64>], tau: f64) -> Result<(), Error> {
    if v.is_empty() {
        return Err(Error::EmptyDataset("empty embedding".into()));
    }
    if l_pos.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: v.len(),
            got: l_pos.len(),
        });
    }
    for n in negs {
        if n.len() != v.len() {
            return Err(Error::DimensionMismatch {
                expected: v.len(),
                got: n.len(),
            });
        }
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidParameter {
            name: "tau",
            reason: format!("must be positive, got {tau}"),
        });
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `-log(exp(z0) / sum exp(z))` over the logit list with `z[0]` the
/// positive, in the max-subtraction stable form.
fn softmax_nll(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    lse - logits[0]
}

/// Plain InfoNCE over one positive and any number of negatives.
pub fn info_nce(v: &[f64], l_pos: &[f64], negs: &[Vec<f64>], tau: f64) -> Result<f64, Error> {
    check_embeddings(v, l_pos, negs, tau)?;
    let mut logits = Vec::with_capacity(1 + negs.len());
    logits.push(dot(v, l_pos) / tau);
    for n in negs {
        logits.push(dot(v, n) / tau);
    }
    Ok(softmax_nll(&logits))
}

/// InfoNCE with each negative logit multiplied by its weight inside the
/// exponent: `exp(w * (v . l / tau))`. Weights are constants with respect
/// to gradients.
pub fn reweighted_info_nce(
    v: &[f64],
    l_pos: &[f64],
    negs: &[Vec<f64>],
    weights: &[f64],
    tau: f64,
) -> Result<f64, Error> {
    check_embeddings(v, l_pos, negs, tau)?;
    if weights.len() != negs.len() {
        return Err(Error::DimensionMismatch {
            expected: negs.len(),
            got: weights.len(),
        });
    }
    if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "weights",
            reason: "all weights must be positive and finite".into(),
        });
    }
    let mut logits = Vec::with_capacity(1 + negs.len());
    logits.push(dot(v, l_pos) / tau);
    for (n, &w) in negs.iter().zip(weights) {
        logits.push(w * (dot(v, n) / tau));
    }
    Ok(softmax_nll(&logits))
}

/// Shared forward (and optional backward) over a batch: every anchor row
/// scores its positive against the other batch locations plus the queue.
#[allow(clippy::too_many_arguments)]
fn loss_and_grads(
    encoder: &DualEncoder,
    anchor_inputs: &[Vec<f64>],
    anchor_of: &[usize],
    batch_coords: &[GeoCoord],
    queue_coords: &[GeoCoord],
    weights: Option<&[Vec<f64>]>,
    tau: f64,
    want_grads: bool,
) -> Result<(f64, Option<EncoderGrads>), Error> {
    let b = batch_coords.len();
    let q = queue_coords.len();
    let d_emb = encoder.dims.d_emb;
    let rows = anchor_inputs.len();
    debug_assert_eq!(rows, anchor_of.len());

    let locations: Vec<_> = batch_coords
        .iter()
        .chain(queue_coords)
        .map(|&c| encoder.encode_location_traced(c))
        .collect();

    let mut grads = want_grads.then(|| EncoderGrads::zeros_like(encoder));
    let mut dl = vec![vec![0.0f64; d_emb]; b + q];
    let mut total = 0.0;

    for (row, x) in anchor_inputs.iter().enumerate() {
        let i = anchor_of[row];
        let (v, tape) = encoder.encode_image_traced(x)?;
        // negative order: batch members j != i ascending, then the queue
        let neg_ids: Vec<usize> = (0..b).filter(|&j| j != i).chain(b..b + q).collect();
        let row_weights = weights.map(|w| w[i].as_slice());
        if let Some(w) = row_weights {
            debug_assert_eq!(w.len(), neg_ids.len());
        }

        let mut logits = Vec::with_capacity(1 + neg_ids.len());
        logits.push(dot(&v, &locations[i].0) / tau);
        for (k, &nid) in neg_ids.iter().enumerate() {
            let w = row_weights.map(|w| w[k]).unwrap_or(1.0);
            logits.push(w * (dot(&v, &locations[nid].0) / tau));
        }
        let loss = softmax_nll(&logits);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {loss} at row {row}")));
        }
        total += loss;

        if want_grads {
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
            let z_sum: f64 = exps.iter().sum();
            let probs: Vec<f64> = exps.iter().map(|e| e / z_sum).collect();

            // d loss / d logit: p - 1 for the positive, p for negatives
            let mut dv = vec![0.0f64; d_emb];
            let g_pos = (probs[0] - 1.0) / tau;
            for (d, val) in dv.iter_mut().enumerate() {
                *val += g_pos * locations[i].0[d];
            }
            for (d, val) in dl[i].iter_mut().enumerate() {
                *val += g_pos * v[d];
            }
            for (k, &nid) in neg_ids.iter().enumerate() {
                let w = row_weights.map(|w| w[k]).unwrap_or(1.0);
                let g_neg = probs[k + 1] * w / tau;
                for d in 0..d_emb {
                    dv[d] += g_neg * locations[nid].0[d];
                    dl[nid][d] += g_neg * v[d];
                }
            }
            encoder.backward_image(&tape, &dv, grads.as_mut().unwrap());
        }
    }

    if let Some(g) = grads.as_mut() {
        for ((_, tape), dl_loc) in locations.iter().zip(&dl) {
            encoder.backward_location(tape, dl_loc, g);
        }
        g.scale(1.0 / rows as f64);
    }
    Ok((total / rows as f64, grads))
}

fn batch_weights(
    reweight: &ReweightConfig,
    batch: &[&GeoTaggedEmbedding],
    queue: &NegativeQueue,
) -> Result<(Vec<Vec<f64>>, WeightStats), Error> {
    let b = batch.len();
    let mut stats = WeightStats::default();
    let mut rows = Vec::with_capacity(b);
    for (i, anchor) in batch.iter().enumerate() {
        let a = Sample {
            features: &anchor.features,
            coord: anchor.coord,
        };
        let mut row = Vec::with_capacity(b - 1 + queue.len());
        for (j, other) in batch.iter().enumerate() {
            if j == i {
                continue;
            }
            let e = weight_entry(
                reweight,
                a,
                Sample {
                    features: &other.features,
                    coord: other.coord,
                },
            )?;
            stats.add(e.weight, e.class);
            row.push(e.weight);
        }
        for (features, coord) in queue.iter() {
            let e = weight_entry(reweight, a, Sample { features, coord })?;
            stats.add(e.weight, e.class);
            row.push(e.weight);
        }
        rows.push(row);
    }
    Ok((rows, stats))
}

#[derive(Debug, Clone, Copy)]
struct WeightStats {
    sum: f64,
    max: f64,
    count: u64,
    hard: u64,
    false_neg: u64,
}

impl Default for WeightStats {
    fn default() -> Self {
        WeightStats {
            sum: 0.0,
            max: 1.0,
            count: 0,
            hard: 0,
            false_neg: 0,
        }
    }
}

impl WeightStats {
    fn add(&mut self, w: f64, class: NegativeClass) {
        self.sum += w;
        self.max = self.max.max(w);
        self.count += 1;
        match class {
            NegativeClass::Hard => self.hard += 1,
            NegativeClass::FalseNegative => self.false_neg += 1,
            NegativeClass::Neutral => {}
        }
    }

    fn mean(&self) -> f64 {
        if self.count == 0 {
            1.0
        } else {
            self.sum / self.count as f64
        }
    }
}

/// Mean loss of a batch at the current parameters, with no augmentation
/// noise. This is the function the gradient checks differentiate.
pub fn batch_loss(
    encoder: &DualEncoder,
    reweight: Option<&ReweightConfig>,
    batch: &[&GeoTaggedEmbedding],
    queue: &NegativeQueue,
    tau: f64,
) -> Result<f64, Error> {
    batch_loss_core(encoder, reweight, batch, queue, tau, false).map(|(l, _)| l)
}

/// `batch_loss` plus exact gradients of every trainable parameter.
pub fn batch_loss_and_grads(
    encoder: &DualEncoder,
    reweight: Option<&ReweightConfig>,
    batch: &[&GeoTaggedEmbedding],
    queue: &NegativeQueue,
    tau: f64,
) -> Result<(f64, EncoderGrads), Error> {
    batch_loss_core(encoder, reweight, batch, queue, tau, true)
        .map(|(l, g)| (l, g.expect("grads requested")))
}

fn batch_loss_core(
    encoder: &DualEncoder,
    reweight: Option<&ReweightConfig>,
    batch: &[&GeoTaggedEmbedding],
    queue: &NegativeQueue,
    tau: f64,
    want_grads: bool,
) -> Result<(f64, Option<EncoderGrads>), Error> {
    if batch.len() < 2 {
        return Err(Error::EmptyDataset(format!(
            "a batch needs at least 2 members, got {}",
            batch.len()
        )));
    }
    let anchor_inputs: Vec<Vec<f64>> = batch.iter().map(|r| prepare_input(&r.features)).collect();
    let anchor_of: Vec<usize> = (0..batch.len()).collect();
    let batch_coords: Vec<GeoCoord> = batch.iter().map(|r| r.coord).collect();
    let queue_coords: Vec<GeoCoord> = queue.iter().map(|(_, c)| c).collect();
    let weights = match reweight {
        Some(rc) => Some(batch_weights(rc, batch, queue)?.0),
        None => None,
    };
    loss_and_grads(
        encoder,
        &anchor_inputs,
        &anchor_of,
        &batch_coords,
        &queue_coords,
        weights.as_deref(),
        tau,
        want_grads,
    )
}

/// Adam with the usual (0.9, 0.999, 1e-8) moments.
#[derive(Debug, Clone)]
struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(lr: f64, encoder: &DualEncoder) -> Self {
        let shapes = EncoderGrads::zeros_like(encoder);
        let zeros: Vec<Vec<f64>> = shapes.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn step(&mut self, encoder: &mut DualEncoder, grads: &EncoderGrads) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let params = encoder.trainable_tensors_mut();
        let gtensors = grads.tensors();
        for (ti, (p, g)) in params.into_iter().zip(gtensors).enumerate() {
            let m = &mut self.m[ti];
            let v = &mut self.v[ti];
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                p[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Per-step observability record.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss: f64,
    pub mean_weight: f64,
    pub max_weight: f64,
    pub hard_count: u64,
    pub false_count: u64,
}

/// Aggregated per-epoch record; `val` is present when a validation set
/// was supplied.
#[derive(Debug, Clone)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_weight: f64,
    pub hard_count: u64,
    pub false_count: u64,
    pub val: Option<EvalReport>,
}

impl EpochReport {
    pub fn csv_header() -> &'static str {
        "epoch,mean_loss,mean_weight,hard_count,false_count,val_acc25,val_acc200,val_acc750"
    }

    pub fn csv_row(&self) -> String {
        let (a25, a200, a750) = match &self.val {
            Some(v) => (
                format!("{}", v.acc25),
                format!("{}", v.acc200),
                format!("{}", v.acc750),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch, self.mean_loss, self.mean_weight, self.hard_count, self.false_count,
            a25, a200, a750
        )
    }
}

/// Mutable training state: encoder, optimizer moments, queue, RNG.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub cfg: TrainConfig,
    pub encoder: DualEncoder,
    queue: NegativeQueue,
    adam: Adam,
    rng: ChaCha20Rng,
    step: u64,
}

impl TrainState {
    /// Applies `cfg.tau` to the encoder and readies the optimizer.
    pub fn new(cfg: TrainConfig, mut encoder: DualEncoder) -> Result<Self, Error> {
        cfg.validate()?;
        encoder.tau = cfg.tau;
        let adam = Adam::new(cfg.learning_rate, &encoder);
        let queue = NegativeQueue::new(cfg.queue_capacity);
        let rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        Ok(TrainState {
            cfg,
            encoder,
            queue,
            adam,
            rng,
            step: 0,
        })
    }

    pub fn queue(&self) -> &NegativeQueue {
        &self.queue
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One optimizer step on a batch: noisy anchor copies, weights from
    /// the frozen features, loss over in-batch plus queue negatives,
    /// Adam update, then a FIFO queue push of the batch.
    pub fn train_step(&mut self, batch: &[&GeoTaggedEmbedding]) -> Result<StepReport, Error> {
        let b = batch.len();
        if b < 2 {
            return Err(Error::EmptyDataset(format!(
                "a batch needs at least 2 members, got {b}"
            )));
        }
        let d_in = self.encoder.dims.d_in;
        for rec in batch {
            if rec.features.len() != d_in {
                return Err(Error::DimensionMismatch {
                    expected: d_in,
                    got: rec.features.len(),
                });
            }
        }

        // augmentation noise is drawn in a fixed (anchor, copy, dim) order
        let p = self.cfg.augmentations;
        let sigma = self.cfg.augment_noise_sigma;
        let normal = Normal::new(0.0, 1.0).expect("valid std");
        let mut anchor_inputs = Vec::with_capacity(b * p);
        let mut anchor_of = Vec::with_capacity(b * p);
        for (i, rec) in batch.iter().enumerate() {
            for _ in 0..p {
                let mut x: Vec<f64> = rec.features.iter().map(|&v| v as f64).collect();
                for xv in &mut x {
                    *xv += sigma * normal.sample(&mut self.rng);
                }
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                for xv in &mut x {
                    *xv /= norm;
                }
                anchor_inputs.push(x);
                anchor_of.push(i);
            }
        }

        let (weights, stats) = match &self.cfg.reweight {
            Some(rc) => {
                let (rows, stats) = batch_weights(rc, batch, &self.queue)?;
                (Some(rows), stats)
            }
            None => (None, WeightStats::default()),
        };

        let batch_coords: Vec<GeoCoord> = batch.iter().map(|r| r.coord).collect();
        let queue_coords: Vec<GeoCoord> = self.queue.iter().map(|(_, c)| c).collect();
        let (loss, grads) = loss_and_grads(
            &self.encoder,
            &anchor_inputs,
            &anchor_of,
            &batch_coords,
            &queue_coords,
            weights.as_deref(),
            self.cfg.tau,
            true,
        )?;
        self.adam.step(&mut self.encoder, &grads.expect("grads requested"));

        for rec in batch {
            self.queue.push(rec.features.clone(), rec.coord);
        }
        self.step += 1;
        Ok(StepReport {
            step: self.step,
            loss,
            mean_weight: stats.mean(),
            max_weight: stats.max,
            hard_count: stats.hard,
            false_count: stats.false_neg,
        })
    }
}

/// Full training run: seeded shuffling into fixed-size batches (a short
/// trailing batch is dropped), one `EpochReport` per epoch, optional
/// validation retrieval against a gallery of the training coordinates.
/// `on_epoch` fires after each epoch with the current encoder.
pub fn train(
    cfg: &TrainConfig,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    encoder: DualEncoder,
    mut on_epoch: impl FnMut(&EpochReport, &DualEncoder) -> Result<(), Error>,
) -> Result<(DualEncoder, Vec<EpochReport>), Error> {
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Ok((encoder, Vec::new()));
    }
    if train_set.len() < cfg.batch_size {
        return Err(Error::EmptyDataset(format!(
            "training set has {} records, need at least one full batch of {}",
            train_set.len(),
            cfg.batch_size
        )));
    }
    if train_set.dim() != encoder.dims.d_in {
        return Err(Error::DimensionMismatch {
            expected: encoder.dims.d_in,
            got: train_set.dim(),
        });
    }

    let mut state = TrainState::new(cfg.clone(), encoder)?;
    // distinct stream from the augmentation noise
    let mut shuffle_rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0xD1B5_4A32_D192_ED03);
    let mut reports = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut idx: Vec<usize> = (0..train_set.len()).collect();
        use rand::seq::SliceRandom;
        idx.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut steps = 0u64;
        let mut weight_sum = 0.0;
        let mut hard = 0u64;
        let mut false_neg = 0u64;
        for chunk in idx.chunks_exact(cfg.batch_size) {
            let batch: Vec<&GeoTaggedEmbedding> =
                chunk.iter().map(|&i| &train_set.records()[i]).collect();
            let report = state.train_step(&batch)?;
            loss_sum += report.loss;
            weight_sum += report.mean_weight;
            hard += report.hard_count;
            false_neg += report.false_count;
            steps += 1;
        }

        let val = match val_set {
            Some(vs) => {
                let coords: Vec<GeoCoord> = train_set.records().iter().map(|r| r.coord).collect();
                let gallery = build_gallery(&coords, &state.encoder)?;
                let queries: Vec<(Vec<f64>, GeoCoord)> = vs
                    .records()
                    .iter()
                    .map(|r| {
                        state
                            .encoder
                            .encode_image(&prepare_input(&r.features))
                            .map(|e| (e, r.coord))
                    })
                    .collect::<Result<_, _>>()?;
                Some(evaluate(&gallery, &queries)?)
            }
            None => None,
        };

        let report = EpochReport {
            epoch,
            mean_loss: loss_sum / steps as f64,
            mean_weight: weight_sum / steps as f64,
            hard_count: hard,
            false_count: false_neg,
            val,
        };
        on_epoch(&report, &state.encoder)?;
        reports.push(report);
    }
    Ok((state.encoder, reports))
}
