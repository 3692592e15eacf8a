//! PK batch sampling and the training loop.

use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{self, AugmentConfig, Pair};
use crate::corruptions::Modality;
use crate::benchmark::derive_seed;
use crate::dataset::PairSet;
use crate::evaluation::{self, EvalError, Metrics};
use crate::losses::{batch_hard_triplet, cross_entropy_label_smoothing, TripletConfig, LABEL_SMOOTHING};
use crate::model::layers::Norm;
use crate::model::{FusionModel, ModelError, ModelKind, ModelOutput, Mode, ParamStore};
use crate::tensor::{add, select_rows, sgd_nesterov_step, OptimConfig, Real, Tape, Tensor, TensorError, Var};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training config: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, iteration {iteration}: {detail}")]
    Divergence {
        epoch: usize,
        iteration: usize,
        detail: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchSpec {
    /// Identities per batch.
    pub p: usize,
    /// Pairs per identity.
    pub k: usize,
}

impl Default for BatchSpec {
    fn default() -> Self {
        Self { p: 8, k: 4 }
    }
}

impl BatchSpec {
    pub fn size(&self) -> usize {
        self.p * self.k
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairingMode {
    /// The V-I pairing of the corpus is kept.
    #[default]
    Aligned,
    /// Each sampled visible image gets a random infrared image of the same identity.
    Unaligned,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchItem {
    pub visible: usize,
    pub infrared: usize,
    pub label: usize,
}

/// `groups[label]` lists the pair indices of that label. Draws `p` labels
/// without replacement and `k` pairs from each, with replacement only when
/// the label has fewer than `k` pairs.
pub fn pk_sample<R: Rng + ?Sized>(
    groups: &[Vec<usize>],
    spec: BatchSpec,
    pairing: PairingMode,
    rng: &mut R,
) -> Result<Vec<BatchItem>, TrainError> {
    let eligible: Vec<usize> = (0..groups.len()).filter(|&l| !groups[l].is_empty()).collect();
    if eligible.len() < spec.p || spec.k == 0 {
        return Err(TrainError::Config(format!(
            "a {}x{} batch needs {} identities with pairs, found {}",
            spec.p,
            spec.k,
            spec.p,
            eligible.len()
        )));
    }
    let mut batch = Vec::with_capacity(spec.size());
    for &label in eligible.choose_multiple(rng, spec.p) {
        let pool = &groups[label];
        let picks: Vec<usize> = if pool.len() >= spec.k {
            pool.choose_multiple(rng, spec.k).copied().collect()
        } else {
            (0..spec.k).map(|_| *pool.choose(rng).expect("non-empty")).collect()
        };
        for v in picks {
            let infrared = match pairing {
                PairingMode::Aligned => v,
                PairingMode::Unaligned => *pool.choose(rng).expect("non-empty"),
            };
            batch.push(BatchItem { visible: v, infrared, label });
        }
    }
    Ok(batch)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optim: OptimConfig,
    pub triplet: TripletConfig,
    pub batch: BatchSpec,
    pub augment: AugmentConfig,
    pub ml_mda: bool,
    pub pairing: PairingMode,
    pub label_smoothing: f64,
    pub val_every: usize,
    pub augment_validation: bool,
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optim: OptimConfig::default(),
            triplet: TripletConfig::default(),
            batch: BatchSpec::default(),
            augment: AugmentConfig::default(),
            ml_mda: true,
            pairing: PairingMode::Aligned,
            label_smoothing: LABEL_SMOOTHING,
            val_every: 5,
            augment_validation: false,
            eval_batch: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.optim.validate().map_err(TrainError::Config)?;
        self.augment.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        if self.batch.p < 2 || self.batch.k < 2 {
            return Err(TrainError::Config("batch-hard mining needs p >= 2 and k >= 2".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(TrainError::Config("label_smoothing must be in [0, 1)".into()));
        }
        if self.triplet.margin < 0.0 {
            return Err(TrainError::Config("triplet margin must be >= 0".into()));
        }
        if self.val_every == 0 || self.eval_batch == 0 {
            return Err(TrainError::Config("val_every and eval_batch must be positive".into()));
        }
        Ok(())
    }

    pub fn iterations_per_epoch(&self, pairs: usize) -> usize {
        (pairs / self.batch.size()).max(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total_loss: f64,
    pub triplet_loss: f64,
    pub ce_loss: f64,
    pub lr: f64,
    pub val: Option<Metrics>,
}

pub fn log_csv(log: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,total_loss,triplet_loss,ce_loss,lr,val_mAP,val_mINP\n");
    for r in log {
        let (map, minp) = r.val.map_or((String::new(), String::new()), |m| (m.map.to_string(), m.minp.to_string()));
        writeln!(s, "{},{},{},{},{},{map},{minp}", r.epoch, r.total_loss, r.triplet_loss, r.ce_loss, r.lr).expect("string write");
    }
    s
}

/// Epoch with the highest validation mAP; the earliest one wins ties.
pub fn best_epoch(log: &[EpochRecord]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for r in log {
        if let Some(m) = r.val {
            if best.is_none_or(|(_, b)| m.map > b) {
                best = Some((r.epoch, m.map));
            }
        }
    }
    best.map(|(e, _)| e)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    /// Epoch whose parameters were kept; `None` when no validation ran and
    /// the final parameters were kept.
    pub best_epoch: Option<usize>,
}

pub struct Losses<'t, T: Real> {
    pub total: Var<'t, T>,
    pub triplet: Var<'t, T>,
    pub ce: Var<'t, T>,
}

/// Triplet terms on the matching features plus label-smoothed CE on every
/// head, all unweighted. MMSF mines triplets on each stream; the other
/// models on their embedding. `masked` names the modality blanked by
/// modality masking for each sample; those samples do not train the MMSF
/// stream of that modality.
pub fn model_losses<'t, T: Real>(
    kind: ModelKind,
    out: &ModelOutput<'t, T>,
    labels: &[usize],
    masked: &[Option<Modality>],
    cfg: &TrainConfig,
) -> Result<Losses<'t, T>, TrainError> {
    if masked.len() != labels.len() {
        return Err(TrainError::Config(format!("{} mask flags for {} labels", masked.len(), labels.len())));
    }
    let mut triplets = Vec::new();
    let mut ces = Vec::new();
    if kind == ModelKind::Mmsf {
        let streams = [Some(Modality::Visible), None, Some(Modality::Infrared)];
        for ((&f, &l), m) in out.features.iter().zip(&out.logits).zip(streams) {
            let keep: Vec<usize> = (0..labels.len()).filter(|&k| m.is_none() || masked[k] != m).collect();
            if keep.len() == labels.len() {
                triplets.push(batch_hard_triplet(f, labels, cfg.triplet.margin)?);
                ces.push(cross_entropy_label_smoothing(l, labels, cfg.label_smoothing)?);
                continue;
            }
            if keep.is_empty() {
                continue;
            }
            let kept: Vec<usize> = keep.iter().map(|&k| labels[k]).collect();
            ces.push(cross_entropy_label_smoothing(select_rows(l, &keep)?, &kept, cfg.label_smoothing)?);
            let mineable: Vec<usize> = keep
                .iter()
                .copied()
                .filter(|&k| kept.iter().filter(|&&x| x == labels[k]).count() >= 2)
                .collect();
            let mined: Vec<usize> = mineable.iter().map(|&k| labels[k]).collect();
            if mined.iter().any(|&x| x != mined[0]) {
                triplets.push(batch_hard_triplet(select_rows(f, &mineable)?, &mined, cfg.triplet.margin)?);
            }
        }
    } else {
        triplets.push(batch_hard_triplet(out.embedding, labels, cfg.triplet.margin)?);
        for &l in &out.logits {
            ces.push(cross_entropy_label_smoothing(l, labels, cfg.label_smoothing)?);
        }
    }
    let sum = |terms: Vec<Var<'t, T>>| -> Result<Var<'t, T>, TensorError> {
        let mut it = terms.into_iter();
        let first = it.next().expect("at least one term");
        it.try_fold(first, add)
    };
    let triplet = sum(triplets)?;
    let ce = sum(ces)?;
    Ok(Losses {
        total: add(triplet, ce)?,
        triplet,
        ce,
    })
}

fn pair_of(set: &PairSet, v: usize, i: usize) -> Pair {
    Pair {
        visible: set.visible[v].clone(),
        infrared: set.infrared[i].clone(),
    }
}

fn batch_tensors(pairs: &[Pair]) -> (Tensor<f32>, Tensor<f32>) {
    (
        augment::to_tensor(pairs.iter().map(|p| &p.visible)),
        augment::to_tensor(pairs.iter().map(|p| &p.infrared)),
    )
}

/// Evaluation-mode embeddings of every pair of `set`, resized to the
/// configured input size.
pub fn embed_set(model: &FusionModel<f32>, set: &PairSet, cfg: &AugmentConfig, batch: usize) -> Result<Tensor<f64>, TrainError> {
    let mut rows: Vec<f64> = Vec::new();
    let e = model.config.embedding_dim();
    for start in (0..set.len()).step_by(batch.max(1)) {
        let end = (start + batch).min(set.len());
        let pairs: Vec<Pair> = (start..end)
            .into_par_iter()
            .map(|k| augment::eval_preprocess(&pair_of(set, k, k), cfg))
            .collect();
        let (v, i) = batch_tensors(&pairs);
        let out = model.embed(Some(&v), Some(&i))?;
        rows.extend(out.data().iter().map(|&x| x as f64));
    }
    Ok(Tensor::new(&[set.len(), e], rows)?)
}

/// Clean LOOQ metrics of `model` on `set`.
pub fn evaluate(model: &FusionModel<f32>, set: &PairSet, cfg: &AugmentConfig, batch: usize) -> Result<evaluation::LooqReport, TrainError> {
    let emb = embed_set(model, set, cfg, batch)?;
    Ok(evaluation::looq_evaluate(&emb, &set.labels, &set.pair_ids)?)
}

fn validation_set(val: &PairSet, cfg: &TrainConfig, seed: u64) -> PairSet {
    if !cfg.augment_validation {
        return val.clone();
    }
    let mut out = val.clone();
    let pairs: Vec<Pair> = (0..val.len())
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("val{k}")));
            let mut p = augment::base_preprocess(&pair_of(val, k, k), &cfg.augment, &mut rng);
            augment::ms_rea(&mut p, &cfg.augment, &mut rng);
            p
        })
        .collect();
    for (k, p) in pairs.into_iter().enumerate() {
        out.visible[k] = p.visible;
        out.infrared[k] = p.infrared;
    }
    out
}

/// One optimization step on a sampled batch; returns (total, triplet, ce).
fn step(
    model: &mut FusionModel<f32>,
    v: &Tensor<f32>,
    i: &Tensor<f32>,
    labels: &[usize],
    masked: &[Option<Modality>],
    lr: f64,
    cfg: &TrainConfig,
) -> Result<[f64; 3], StepError> {
    let tape = Tape::new();
    let b = model.bind(&tape, Mode::Train);
    let out = model.forward(&b, Some(v), Some(i)).map_err(TrainError::from)?;
    let losses = model_losses(model.kind(), &out, labels, masked, cfg)?;
    let values = [losses.total, losses.triplet, losses.ce].map(|l| l.value().data()[0] as f64);
    if values.iter().any(|x| !x.is_finite()) {
        let node = tape.non_finite().unwrap_or_else(|| "loss".into());
        return Err(StepError::NonFinite(format!("loss terms {values:?}, first non-finite node {node}")));
    }
    let grads = tape.backward(losses.total).map_err(TrainError::from)?;
    model.store.zero_grad();
    b.accumulate_grads(&grads, &mut model.store);
    b.update_running_stats(&mut model.store, Norm::MOMENTUM);
    sgd_nesterov_step(&mut model.store.params, lr, &cfg.optim).map_err(TrainError::from)?;
    Ok(values)
}

enum StepError {
    Failed(TrainError),
    NonFinite(String),
}

impl From<TrainError> for StepError {
    fn from(e: TrainError) -> Self {
        Self::Failed(e)
    }
}

/// Trains `model` in place. With a validation set, metrics are computed every
/// `val_every` epochs and at the last epoch, and the parameters of the best
/// validated epoch are restored at the end.
pub fn train(
    model: &mut FusionModel<f32>,
    train_set: &PairSet,
    val: Option<&PairSet>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_set.identities.len() != model.config.num_identities {
        return Err(TrainError::Config(format!(
            "model classifies {} identities but the training set has {}",
            model.config.num_identities,
            train_set.identities.len()
        )));
    }
    let groups = train_set.by_label();
    let schedule = cfg.optim.schedule();
    let iterations = cfg.iterations_per_epoch(train_set.len());
    let val = val.map(|v| validation_set(v, cfg, derive_seed(seed, "validation")));
    let mut log = Vec::with_capacity(cfg.optim.epochs);
    let mut best: Option<(f64, ParamStore<f32>)> = None;
    let mut counter = 0u64;
    for epoch in 0..cfg.optim.epochs {
        let lr = schedule.lr_at(epoch);
        let mut sums = [0.0; 3];
        for iteration in 0..iterations {
            let batch_seed = derive_seed(seed, &format!("batch{counter}"));
            counter += 1;
            let mut rng = ChaCha8Rng::seed_from_u64(batch_seed);
            let items = pk_sample(&groups, cfg.batch, cfg.pairing, &mut rng)?;
            let (pairs, masked): (Vec<Pair>, Vec<Option<Modality>>) = items
                .par_iter()
                .enumerate()
                .map(|(n, it)| {
                    let mut r = ChaCha8Rng::seed_from_u64(derive_seed(batch_seed, &n.to_string()));
                    augment::augment_with_mask(&pair_of(train_set, it.visible, it.infrared), &cfg.augment, cfg.ml_mda, &mut r)
                })
                .unzip();
            let labels: Vec<usize> = items.iter().map(|it| it.label).collect();
            let (v, i) = batch_tensors(&pairs);
            let values = step(model, &v, &i, &labels, &masked, lr, cfg).map_err(|e| match e {
                StepError::Failed(e) => e,
                StepError::NonFinite(detail) => TrainError::Divergence { epoch, iteration, detail },
            })?;
            sums.iter_mut().zip(values).for_each(|(s, x)| *s += x);
        }
        let n = iterations as f64;
        let last = epoch + 1 == cfg.optim.epochs;
        let metrics = match &val {
            Some(set) if (epoch + 1) % cfg.val_every == 0 || last => {
                Some(evaluate(model, set, &cfg.augment, cfg.eval_batch)?.metrics)
            }
            _ => None,
        };
        if let Some(m) = metrics {
            if best.as_ref().is_none_or(|(b, _)| m.map > *b) {
                best = Some((m.map, model.store.clone()));
            }
        }
        log.push(EpochRecord {
            epoch,
            total_loss: sums[0] / n,
            triplet_loss: sums[1] / n,
            ce_loss: sums[2] / n,
            lr,
            val: metrics,
        });
    }
    if let Some((_, store)) = best {
        model.store = store;
    }
    Ok(TrainOutcome {
        best_epoch: best_epoch(&log),
        log,
    })
}

#[cfg(test)]
mod tests;
