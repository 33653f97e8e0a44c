//! Adam training loop, k-fold cross-validation and the cross-subject runs.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{pool_counts, ConfusionCounts};
use crate::model::{backward, forward, init_params, loss, predict, ArchSpec, ModelParams, Mode};
use crate::preprocess::{Dataset, Label, WindowSample};
use crate::rng;
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_FOLDS: usize = 10;

// stream tags
const TAG_INIT: u64 = 1;
const TAG_SHUFFLE: u64 = 2;
const TAG_DROPOUT: u64 = 3;
const TAG_FOLDS: u64 = 4;
const TAG_SPLIT: u64 = 5;
const CROSS_SUBJECT_BASE: u64 = 100;

/// Per-subject sample count the cross-subject split sizes are quoted for.
pub const CROSS_SUBJECT_REFERENCE: usize = 475;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            dropout_rate: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("train config: {what}")));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        // zero is allowed so that a run can be checked for parameter stability
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params.tensors().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One Adam update with bias correction; `state.t` is incremented first.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut AdamState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    let n = params.tensors().count();
    if grads.tensors().count() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::shape("adam_step", "parameter, gradient and moment counts differ"));
    }
    state.t += 1;
    let t = state.t as i32;
    let b1 = T::from_f64_lossy(cfg.adam_beta1);
    let b2 = T::from_f64_lossy(cfg.adam_beta2);
    let c1 = T::from_f64_lossy(1.0 - cfg.adam_beta1.powi(t));
    let c2 = T::from_f64_lossy(1.0 - cfg.adam_beta2.powi(t));
    let lr = T::from_f64_lossy(cfg.learning_rate);
    let eps = T::from_f64_lossy(cfg.adam_eps);
    let one = T::one();

    for (((p, g), m), v) in params.tensors_mut().zip(grads.tensors()).zip(&mut state.m).zip(&mut state.v) {
        if p.shape() != g.shape() || p.shape() != m.shape() || p.shape() != v.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("parameter {:?} vs gradient {:?}", p.shape(), g.shape()),
            ));
        }
        let iter = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut());
        for (((theta, &g), m), v) in iter {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// Mean training loss over the epoch's batches (dropout active).
    pub train_loss: f64,
    /// Accuracy on the training set in eval mode after the epoch.
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 0-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    pub history: TrainHistory,
}

/// Summed loss, summed gradients and number of correct (argmax) predictions over
/// a batch. Each sample's dropout draws come from `rng_for(position)`, so the
/// result does not depend on how the work is scheduled.
pub fn batch_gradient<F>(
    params: &ModelParams<f32>,
    batch: &[&WindowSample],
    mode: Mode,
    rng_for: F,
) -> Result<(f64, ModelParams<f32>, usize)>
where
    F: Fn(usize) -> ChaCha8Rng + Sync,
{
    let per_sample: Vec<Result<(f64, ModelParams<f32>, bool)>> = batch
        .par_iter()
        .enumerate()
        .map(|(j, s)| {
            let fwd = forward(params, &s.data, mode, &mut rng_for(j))?;
            let l = f64::from(loss(&fwd, s.label));
            let correct = crate::model::argmax_label(&fwd.probs) == s.label;
            Ok((l, backward(params, &fwd, s.label)?, correct))
        })
        .collect();
    let mut total = ModelParams::<f32>::zeros(&params.arch)?;
    let mut sum_loss = 0.0;
    let mut n_correct = 0;
    for r in per_sample {
        let (l, g, c) = r?;
        sum_loss += l;
        n_correct += usize::from(c);
        for (dst, src) in total.tensors_mut().zip(g.tensors()) {
            dst.add_assign(src)?;
        }
    }
    Ok((sum_loss, total, n_correct))
}

/// Eval-mode predictions and their confusion counts.
pub fn evaluate(params: &ModelParams<f32>, samples: &[&WindowSample]) -> Result<(ConfusionCounts, Vec<Label>)> {
    let preds = samples
        .par_iter()
        .map(|s| predict(params, &s.data).map(|(l, _)| l))
        .collect::<Result<Vec<_>>>()?;
    let mut c = ConfusionCounts::default();
    for (p, s) in preds.iter().zip(samples) {
        c.record(*p, s.label);
    }
    Ok((c, preds))
}

fn accuracy(c: &ConfusionCounts) -> f64 {
    c.correct() as f64 / c.total().max(1) as f64
}

/// Mini-batch Adam on `train`; keeps the parameters of the epoch with the best
/// validation accuracy (earliest on ties). `stream` separates the RNG streams of
/// independent runs sharing one seed.
pub fn train_model(
    train: &[&WindowSample],
    val: &[&WindowSample],
    arch: &ArchSpec,
    cfg: &TrainConfig,
    stream: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument("training and validation sets must be nonempty".into()));
    }
    let arch = arch.with_dropout(cfg.dropout_rate)?;
    let mut params = init_params(&arch, rng::stream_seed(cfg.seed, &[stream, TAG_INIT]))?;
    let mut state = AdamState::new(&params);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ModelParams<f32>)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(cfg.seed, &[stream, TAG_SHUFFLE, epoch as u64]));
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&WindowSample> = chunk.iter().map(|&i| train[i]).collect();
            let (sum_loss, mut grads, _) = batch_gradient(&params, &batch, Mode::Train, |j| {
                rng::stream(cfg.seed, &[stream, TAG_DROPOUT, epoch as u64, b as u64, j as u64])
            })?;
            if !sum_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    batch: b + 1,
                });
            }
            epoch_loss += sum_loss;
            for g in grads.tensors_mut() {
                g.scale(1.0 / batch.len() as f32);
            }
            adam_step(&mut params, &grads, &mut state, cfg)?;
            if !params.all_finite() {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    batch: b + 1,
                });
            }
        }
        let train_acc = accuracy(&evaluate(&params, train)?.0);
        let val_acc = accuracy(&evaluate(&params, val)?.0);
        let record = EpochRecord {
            train_loss: epoch_loss / train.len() as f64,
            train_acc,
            val_acc,
        };
        log::info!(
            "stream {stream} epoch {}: loss {:.5} train {:.5} val {:.5}",
            epoch + 1,
            record.train_loss,
            train_acc,
            val_acc
        );
        history.epochs.push(record);
        if best.as_ref().is_none_or(|(acc, _)| val_acc > *acc) {
            history.best_epoch = epoch;
            best = Some((val_acc, params.clone()));
        }
    }
    let (_, params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { params, history })
}

/// Index sets of one cross-validation repetition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub repetition: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn shuffled_by_class(labels: &[Label], indices: &[usize], rng: &mut ChaCha8Rng) -> [Vec<usize>; 2] {
    let mut by_class = [Vec::new(), Vec::new()];
    for &i in indices {
        by_class[labels[i].index()].push(i);
    }
    for c in &mut by_class {
        c.shuffle(rng);
    }
    by_class
}

/// Assigns fold ids by dealing the class-wise shuffled samples round-robin with a
/// single running counter, so folds differ in size by at most one and each class
/// is spread evenly.
pub fn assign_folds(labels: &[Label], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 folds, got {k}")));
    }
    if labels.len() < k {
        return Err(Error::InvalidArgument(format!(
            "{} samples cannot fill {k} folds",
            labels.len()
        )));
    }
    let all: Vec<usize> = (0..labels.len()).collect();
    let mut fold = vec![0; labels.len()];
    let mut counter = 0;
    for class in shuffled_by_class(labels, &all, &mut rng::stream(seed, &[TAG_FOLDS])) {
        for i in class {
            fold[i] = counter % k;
            counter += 1;
        }
    }
    Ok(fold)
}

/// Repetition `r` tests on fold `r`, validates on fold `(r + 1) % k` and trains on
/// the rest.
pub fn make_folds(labels: &[Label], k: usize, seed: u64) -> Result<Vec<FoldPlan>> {
    let fold = assign_folds(labels, k, seed)?;
    Ok((0..k)
        .map(|r| {
            let mut plan = FoldPlan {
                repetition: r,
                train: Vec::new(),
                val: Vec::new(),
                test: Vec::new(),
            };
            for (i, &f) in fold.iter().enumerate() {
                if f == r {
                    plan.test.push(i);
                } else if f == (r + 1) % k {
                    plan.val.push(i);
                } else {
                    plan.train.push(i);
                }
            }
            plan
        })
        .collect())
}

fn refs<'a>(ds: &'a Dataset, idx: &[usize]) -> Vec<&'a WindowSample> {
    idx.iter().map(|&i| &ds.samples[i]).collect()
}

#[derive(Clone, Debug)]
pub struct RepetitionOutcome {
    pub counts: ConfusionCounts,
    pub history: TrainHistory,
    pub params: ModelParams<f32>,
}

#[derive(Clone, Debug)]
pub struct CvOutcome {
    pub folds: Vec<FoldPlan>,
    pub repetitions: Vec<RepetitionOutcome>,
    /// Sum of the per-repetition test counts.
    pub pooled: ConfusionCounts,
}

pub fn run_cv(dataset: &Dataset, arch: &ArchSpec, cfg: &TrainConfig) -> Result<CvOutcome> {
    run_cv_with_folds(dataset, arch, cfg, DEFAULT_FOLDS)
}

pub fn run_cv_with_folds(dataset: &Dataset, arch: &ArchSpec, cfg: &TrainConfig, k: usize) -> Result<CvOutcome> {
    let folds = make_folds(&dataset.labels(), k, cfg.seed)?;
    let repetitions = folds
        .par_iter()
        .map(|plan| {
            let out = train_model(
                &refs(dataset, &plan.train),
                &refs(dataset, &plan.val),
                arch,
                cfg,
                plan.repetition as u64,
            )?;
            let (counts, _) = evaluate(&out.params, &refs(dataset, &plan.test))?;
            log::info!("repetition {}: {:?}", plan.repetition, counts);
            Ok(RepetitionOutcome {
                counts,
                history: out.history,
                params: out.params,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pooled = pool_counts(&repetitions.iter().map(|r| r.counts).collect::<Vec<_>>())?;
    Ok(CvOutcome {
        folds,
        repetitions,
        pooled,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Merges class lists so that every prefix holds each class in proportion to its
/// size (within one sample).
fn interleave(mut by_class: [Vec<usize>; 2]) -> Vec<usize> {
    let sizes = [by_class[0].len(), by_class[1].len()];
    let mut taken = [0usize; 2];
    let mut out = Vec::with_capacity(sizes[0] + sizes[1]);
    for list in &mut by_class {
        list.reverse();
    }
    while taken[0] < sizes[0] || taken[1] < sizes[1] {
        // pick the class lagging furthest behind its share: compare (taken+1)/size
        let c = if taken[0] == sizes[0] {
            1
        } else if taken[1] == sizes[1] {
            0
        } else if (taken[0] + 1) * sizes[1] <= (taken[1] + 1) * sizes[0] {
            0
        } else {
            1
        };
        out.push(by_class[c].pop().expect("class not exhausted"));
        taken[c] += 1;
    }
    out
}

fn cut_sizes(order: Vec<usize>, sizes: [usize; 2]) -> Split {
    let mut parts = [0..sizes[0], sizes[0]..sizes[0] + sizes[1], sizes[0] + sizes[1]..order.len()]
        .map(|r| order[r].to_vec());
    for p in &mut parts {
        p.sort_unstable();
    }
    let [train, val, test] = parts;
    Split { train, val, test }
}

/// Index sets of cross-subject run 1, 2 or 3.
///
/// Runs 1 and 2 train on 80 % and validate on 20 % of one subject (the lower and
/// the higher subject id respectively) and test on every sample of the other.
/// Run 3 splits the pooled data 40 / 10 / 50 %, stratified by class.
pub fn cross_subject_split(dataset: &Dataset, run: u8, seed: u64) -> Result<Split> {
    let labels = dataset.labels();
    let mut rng = rng::stream(seed, &[TAG_SPLIT, u64::from(run)]);
    match run {
        1 | 2 => {
            let subjects = dataset.subjects();
            if subjects.len() != 2 {
                return Err(Error::InvalidArgument(format!(
                    "cross-subject runs need exactly two subjects, found {subjects:?}"
                )));
            }
            let train_subject = subjects[usize::from(run - 1)];
            let (own, other): (Vec<usize>, Vec<usize>) =
                (0..dataset.len()).partition(|&i| dataset.samples[i].subject_id == train_subject);
            if own.len() < CROSS_SUBJECT_REFERENCE {
                log::warn!(
                    "subject {train_subject} has {} samples (< {CROSS_SUBJECT_REFERENCE}); using 80/20 of what is there",
                    own.len()
                );
            }
            let n_val = (own.len() as f64 * 0.2).round() as usize;
            if n_val == 0 || n_val == own.len() {
                return Err(Error::InvalidArgument(format!(
                    "subject {train_subject} has too few samples ({}) to split",
                    own.len()
                )));
            }
            let order = interleave(shuffled_by_class(&labels, &own, &mut rng));
            let mut split = cut_sizes(order, [own.len() - n_val, n_val]);
            split.test = other;
            Ok(split)
        }
        3 => {
            let n = dataset.len();
            let n_train = (n as f64 * 0.4).round() as usize;
            let n_val = (n as f64 * 0.1).round() as usize;
            if n_train == 0 || n_val == 0 || n_train + n_val >= n {
                return Err(Error::InvalidArgument(format!("{n} samples are too few for a 40/10/50 split")));
            }
            let all: Vec<usize> = (0..n).collect();
            let order = interleave(shuffled_by_class(&labels, &all, &mut rng));
            Ok(cut_sizes(order, [n_train, n_val]))
        }
        _ => Err(Error::InvalidArgument(format!("cross-subject run must be 1, 2 or 3, got {run}"))),
    }
}

#[derive(Clone, Debug)]
pub struct CrossSubjectOutcome {
    pub run: u8,
    pub split: Split,
    pub counts: ConfusionCounts,
    pub history: TrainHistory,
    pub params: ModelParams<f32>,
}

pub fn run_cross_subject(dataset: &Dataset, arch: &ArchSpec, cfg: &TrainConfig, run: u8) -> Result<CrossSubjectOutcome> {
    let split = cross_subject_split(dataset, run, cfg.seed)?;
    let out = train_model(
        &refs(dataset, &split.train),
        &refs(dataset, &split.val),
        arch,
        cfg,
        CROSS_SUBJECT_BASE + u64::from(run),
    )?;
    let (counts, _) = evaluate(&out.params, &refs(dataset, &split.test))?;
    Ok(CrossSubjectOutcome {
        run,
        split,
        counts,
        history: out.history,
        params: out.params,
    })
}
