//! Two-stage training: the vanilla autoencoder first, then the predictor
//! against the vanilla block's embeddings of each target view plus the
//! target image itself.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use crate::data::{SampleKey, ViewMeta, ViewPair, ViewSample, POSE_DIM};
use crate::error::{Error, Result};
use crate::loss::{mse, mse_grad, LossBreakdown};
use crate::model::{Embedding, ModelConfig, Network, NetworkKind};
use crate::optim::{Adam, AdamConfig, StepSchedule};
use crate::rng::{seeded, shuffle, stream};
use crate::weights::WeightsHandle;

/// Which terms drive the predictor's gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    /// Only the output reconstruction term; `L_e` is still logged.
    MseOnly,
    /// `L_e + L_o`.
    EmbeddingPlusMse,
}

impl LossMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::MseOnly => "mse_only",
            LossMode::EmbeddingPlusMse => "embedding_plus_mse",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mse_only" => Some(LossMode::MseOnly),
            "embedding_plus_mse" => Some(LossMode::EmbeddingPlusMse),
            _ => None,
        }
    }
}

impl core::fmt::Display for LossMode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossMode::parse(s).ok_or_else(|| Error::domain(format!("unknown loss mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    /// First epoch (0-based) trained at `lr_final`.
    pub lr_switch_epoch: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub loss_mode: LossMode,
    /// Coefficient of `L_e` in the optimized objective.
    pub embedding_weight: f64,
    /// Coefficient of `L_o` in the optimized objective.
    pub output_weight: f64,
    /// Stop once this many optimizer steps have run.
    pub max_steps: Option<usize>,
    /// Stop as soon as a step reports `L_t` below this value.
    pub target_loss: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 80,
            lr_initial: 1e-3,
            lr_final: 1e-4,
            lr_switch_epoch: 70,
            adam: AdamConfig::default(),
            seed: 0,
            loss_mode: LossMode::EmbeddingPlusMse,
            embedding_weight: 1.0,
            output_weight: 1.0,
            max_steps: None,
            target_loss: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::domain("batch size and epochs must be positive"));
        }
        if !(self.lr_final > 0.0 && self.lr_final <= self.lr_initial) {
            return Err(Error::domain("need 0 < lr_final <= lr_initial"));
        }
        if self.lr_switch_epoch == 0 || self.lr_switch_epoch > self.epochs {
            return Err(Error::domain("lr switch epoch must lie in 1..=epochs"));
        }
        if self.embedding_weight < 0.0 || self.output_weight < 0.0 {
            return Err(Error::domain("loss weights must be nonnegative"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> StepSchedule {
        StepSchedule {
            initial: self.lr_initial,
            final_lr: self.lr_final,
            switch_epoch: self.lr_switch_epoch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: LossBreakdown,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean of the step losses.
    pub train: LossBreakdown,
    /// Mean losses over the validation pairs, when there are any.
    pub validation: Option<LossBreakdown>,
    pub lr: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingRun {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainingRun {
    pub fn final_loss(&self) -> Option<LossBreakdown> {
        self.steps.last().map(|s| s.loss)
    }

    /// Learning rates in the order they were first used.
    pub fn lr_changes(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for s in &self.steps {
            if out.last() != Some(&s.lr) {
                out.push(s.lr);
            }
        }
        out
    }
}

/// Hooks for logging, checkpointing and timing. All methods default to
/// no-ops.
pub trait TrainObserver {
    fn on_step(&mut self, _record: &StepRecord) {}

    fn on_epoch(&mut self, _record: &EpochRecord, _weights: &WeightsHandle<f32>) -> Result<()> {
        Ok(())
    }

    /// Seconds since training started; used for the epoch log.
    fn elapsed_s(&mut self) -> f64 {
        0.0
    }
}

pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

/// Assembled mini-batch.
pub(crate) struct Batch {
    pub(crate) n: usize,
    pub(crate) images: Vec<f32>,
    pub(crate) poses: Option<Vec<f32>>,
    pub(crate) targets: Vec<f32>,
    pub(crate) target_embeddings: Option<Vec<f32>>,
}

/// One optimizer step on a batch. Returns the logged losses.
fn train_step(
    net: &Network,
    weights: &mut WeightsHandle<f32>,
    grads: &mut WeightsHandle<f32>,
    adam: &mut Adam<f32>,
    batch: &Batch,
    config: &TrainConfig,
    lr: f64,
    step: usize,
) -> Result<LossBreakdown> {
    let trace = net.forward(weights, &batch.images, batch.poses.as_deref(), batch.n)?;
    let out = trace.output();
    let l_o = mse(out, &batch.targets)?;
    let mut d_output = alloc::vec![0.0f32; out.len()];
    mse_grad(out, &batch.targets, config.output_weight, &mut d_output);

    let (l_e, d_latent) = match &batch.target_embeddings {
        Some(e2) => {
            let e1 = trace.fused();
            let l_e = mse(e1, e2)?;
            let grad = (config.loss_mode == LossMode::EmbeddingPlusMse).then(|| {
                let mut g = alloc::vec![0.0f32; e1.len()];
                mse_grad(e1, e2, config.embedding_weight, &mut g);
                g
            });
            (l_e, grad)
        }
        None => (0.0, None),
    };
    let loss = LossBreakdown::new(l_e, l_o);
    if !loss.is_valid() {
        return Err(Error::NonFinite {
            step,
            detail: format!("L_e={} L_o={}", loss.embedding, loss.output),
        });
    }
    grads.fill_zero();
    net.backward(weights, &trace, &d_output, d_latent.as_deref(), grads)?;
    adam.step(weights, grads, lr)?;
    Ok(loss)
}

fn run_loop(
    net: &Network,
    weights: &mut WeightsHandle<f32>,
    items: usize,
    config: &TrainConfig,
    mut make_batch: impl FnMut(&[usize]) -> Result<Batch>,
    mut validate: impl FnMut(&WeightsHandle<f32>) -> Result<Option<LossBreakdown>>,
    observer: &mut dyn TrainObserver,
) -> Result<TrainingRun> {
    config.validate()?;
    let mut grads = weights.zeros_like();
    let mut adam = Adam::new(config.adam, weights);
    let schedule = config.schedule();
    let mut rng = seeded(config.seed, stream::SHUFFLE);
    let mut order: Vec<usize> = (0..items).collect();
    let mut run = TrainingRun::default();
    let mut step = 0;
    'epochs: for epoch in 0..config.epochs {
        shuffle(&mut order, &mut rng);
        let lr = schedule.lr_at(epoch);
        let (mut sum_e, mut sum_o, mut seen) = (0.0, 0.0, 0usize);
        let mut stop = false;
        for chunk in order.chunks(config.batch_size) {
            let batch = make_batch(chunk)?;
            let loss = train_step(net, weights, &mut grads, &mut adam, &batch, config, lr, step)?;
            let record = StepRecord {
                epoch,
                step,
                loss,
                lr,
            };
            observer.on_step(&record);
            run.steps.push(record);
            sum_e += loss.embedding * batch.n as f64;
            sum_o += loss.output * batch.n as f64;
            seen += batch.n;
            step += 1;
            let hit_target = config.target_loss.is_some_and(|t| loss.total < t);
            let hit_cap = config.max_steps.is_some_and(|m| step >= m);
            if hit_target || hit_cap {
                stop = true;
                break;
            }
        }
        let record = EpochRecord {
            epoch,
            train: LossBreakdown::new(sum_e / seen.max(1) as f64, sum_o / seen.max(1) as f64),
            validation: validate(weights)?,
            lr,
            wall_time_s: observer.elapsed_s(),
        };
        observer.on_epoch(&record, weights)?;
        run.epochs.push(record);
        if stop {
            break 'epochs;
        }
    }
    Ok(run)
}

/// Forward batch size for evaluation passes.
pub const EVAL_BATCH: usize = 32;

/// Trains block 1 to reconstruct every sample.
pub fn train_vanilla(
    model: &ModelConfig,
    samples: &[ViewSample],
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(WeightsHandle<f32>, TrainingRun)> {
    if samples.is_empty() {
        return Err(Error::domain("vanilla training needs at least one sample"));
    }
    let net = Network::new(model, NetworkKind::Vanilla)?;
    let mut weights = net.init_weights(config.seed);
    let run = run_loop(
        &net,
        &mut weights,
        samples.len(),
        config,
        |idx| {
            let mut images = Vec::with_capacity(idx.len() * net.image_len());
            for &i in idx {
                images.extend_from_slice(samples[i].image.as_slice());
            }
            Ok(Batch {
                n: idx.len(),
                targets: images.clone(),
                images,
                poses: None,
                target_embeddings: None,
            })
        },
        |_| Ok(None),
        observer,
    )?;
    Ok((weights, run))
}

pub type EmbeddingTable = BTreeMap<SampleKey, Embedding>;

/// Block-1 encoder output for every sample, keyed by its metadata.
pub fn extract_embeddings(
    net: &Network,
    weights: &WeightsHandle<f32>,
    samples: &[ViewSample],
) -> Result<EmbeddingTable> {
    net.check_weights(weights)?;
    let mut table = BTreeMap::new();
    let dim = net.embedding_dim();
    for chunk in samples.chunks(EVAL_BATCH) {
        let mut images = Vec::with_capacity(chunk.len() * net.image_len());
        for s in chunk {
            images.extend_from_slice(s.image.as_slice());
        }
        let emb = net.encode_batch(weights, &images, chunk.len())?;
        for (s, e) in chunk.iter().zip(emb.chunks_exact(dim)) {
            if table.insert(s.key(), Embedding(e.to_vec())).is_some() {
                return Err(Error::DuplicateKey(s.key()));
            }
        }
    }
    Ok(table)
}

fn lookup<'a>(table: &'a EmbeddingTable, key: &SampleKey) -> Result<&'a Embedding> {
    table.get(key).ok_or(Error::MissingEmbedding(*key))
}

pub(crate) fn pair_batch(
    net: &Network,
    corpus: &[ViewSample],
    pairs: &[ViewPair],
    idx: impl Iterator<Item = usize>,
    table: Option<&EmbeddingTable>,
) -> Result<Batch> {
    let mut b = Batch {
        n: 0,
        images: Vec::new(),
        poses: Some(Vec::new()),
        targets: Vec::new(),
        target_embeddings: table.map(|_| Vec::new()),
    };
    for i in idx {
        let p = &pairs[i];
        let (input, target) = (&corpus[p.input], &corpus[p.target]);
        b.images.extend_from_slice(input.image.as_slice());
        b.poses.as_mut().expect("set").extend(p.pose.as_f32());
        b.targets.extend_from_slice(target.image.as_slice());
        if let (Some(t), Some(out)) = (table, b.target_embeddings.as_mut()) {
            let e = lookup(t, &target.key())?;
            Error::check_len("target embedding", net.embedding_dim(), e.len())?;
            out.extend_from_slice(e.as_slice());
        }
        b.n += 1;
    }
    debug_assert_eq!(b.poses.as_ref().map(|p| p.len()), Some(b.n * POSE_DIM));
    Ok(b)
}

/// Per-pair `(L_e, L_o)` of a predictor over `pairs`, in pair order.
pub fn per_pair_losses(
    net: &Network,
    weights: &WeightsHandle<f32>,
    corpus: &[ViewSample],
    pairs: &[ViewPair],
    table: &EmbeddingTable,
) -> Result<Vec<LossBreakdown>> {
    let mut out = Vec::with_capacity(pairs.len());
    let dim = net.embedding_dim();
    let px = net.image_len();
    let mut start = 0;
    while start < pairs.len() {
        let end = (start + EVAL_BATCH).min(pairs.len());
        let b = pair_batch(net, corpus, pairs, start..end, Some(table))?;
        let trace = net.forward(weights, &b.images, b.poses.as_deref(), b.n)?;
        let e2 = b.target_embeddings.as_deref().expect("table given");
        for s in 0..b.n {
            let l_e = mse(&trace.fused()[s * dim..(s + 1) * dim], &e2[s * dim..(s + 1) * dim])?;
            let l_o = mse(&trace.output()[s * px..(s + 1) * px], &b.targets[s * px..(s + 1) * px])?;
            out.push(LossBreakdown::new(l_e, l_o));
        }
        start = end;
    }
    Ok(out)
}

/// Trains block 2 on view pairs drawn from `corpus`.
///
/// `validation` pairs, when non-empty, are scored after every epoch.
#[allow(clippy::too_many_arguments)]
pub fn train_predictor(
    model: &ModelConfig,
    corpus: &[ViewSample],
    pairs: &[ViewPair],
    target_embeddings: &EmbeddingTable,
    validation: &[ViewPair],
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(WeightsHandle<f32>, TrainingRun)> {
    train_predictor_from(model, None, corpus, pairs, target_embeddings, validation, config, observer)
}

/// [`train_predictor`], optionally starting the encoder and decoder from a
/// trained block 1 instead of from random initialization.
#[allow(clippy::too_many_arguments)]
pub fn train_predictor_from(
    model: &ModelConfig,
    warm_start: Option<&WeightsHandle<f32>>,
    corpus: &[ViewSample],
    pairs: &[ViewPair],
    target_embeddings: &EmbeddingTable,
    validation: &[ViewPair],
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(WeightsHandle<f32>, TrainingRun)> {
    if pairs.is_empty() {
        return Err(Error::domain("predictor training needs at least one pair"));
    }
    for p in pairs.iter().chain(validation) {
        if p.input >= corpus.len() || p.target >= corpus.len() {
            return Err(Error::domain("pair refers past the end of the corpus"));
        }
        lookup(target_embeddings, &corpus[p.target].key())?;
    }
    let net = Network::new(model, NetworkKind::Predictor)?;
    let mut weights = net.init_weights(config.seed);
    if let Some(vanilla) = warm_start {
        weights.copy_matching(vanilla)?;
    }
    let run = run_loop(
        &net,
        &mut weights,
        pairs.len(),
        config,
        |idx| pair_batch(&net, corpus, pairs, idx.iter().copied(), Some(target_embeddings)),
        |w| {
            if validation.is_empty() {
                return Ok(None);
            }
            let losses = per_pair_losses(&net, w, corpus, validation, target_embeddings)?;
            let n = losses.len() as f64;
            let (e, o) = losses.iter().fold((0.0, 0.0), |(e, o), l| (e + l.embedding, o + l.output));
            Ok(Some(LossBreakdown::new(e / n, o / n)))
        },
        observer,
    )?;
    Ok((weights, run))
}
