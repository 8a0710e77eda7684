//! Losses, the ADAM optimizer and the training loop.
//!
//! Each sample is run on its own tape over the full unrolled sequence;
//! per-sample gradients are summed in batch order and divided by the batch
//! size before the optimizer step, so results do not depend on how the
//! work is scheduled.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_xent, Tape, Var};
use crate::error::{Error, Result};
use crate::model::{stack_sequence, Model, Output, Prediction};
use crate::process::{derive_seed, ProcessDataset, Sample, Split, Target};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    L1,
    CrossEntropy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mae,
    Accuracy,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mae" => Ok(Metric::Mae),
            "accuracy" => Ok(Metric::Accuracy),
            other => Err(Error::invalid(format!("unknown metric `{other}` (expected mae or accuracy)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss: LossKind,
    /// Validation is evaluated every this many epochs (and after the last).
    #[serde(default = "one")]
    pub eval_every: usize,
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::invalid("batch_size and eval_every must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid(format!("learning rate {} must be positive", self.learning_rate)));
        }
        Ok(())
    }
}

/// Mean of `|ŷ − y|` over all entries.
pub fn l1_loss<T: Scalar>(prediction: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    if prediction.shape() != target.shape() {
        return Err(Error::shape(
            "l1_loss",
            format!("{:?} vs {:?}", prediction.shape(), target.shape()),
        ));
    }
    let total: T = prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| (a - b).abs())
        .sum();
    Ok(total / T::from_count(prediction.len()))
}

/// `−log softmax(logits)[label]`, computed with max subtraction.
pub fn cross_entropy_loss<T: Scalar>(logits: &[T], label: usize) -> Result<T> {
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    Ok(softmax_xent(logits, label).0)
}

/// ADAM with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// `β1 = 0.9`, `β2 = 0.999`, `ε = 1e-8`.
    pub fn new<'a>(lr: T, params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let first: Vec<Tensor<T>> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            step: 0,
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            second: first.clone(),
            first,
        }
    }

    pub fn update(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::invalid(format!(
                "optimizer tracks {} parameters, got {} parameters and {} gradients",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("parameter {:?}, gradient {:?}", p.shape(), g.shape()),
                ));
            }
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let t = i32::try_from(self.step).unwrap_or(i32::MAX);
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            let (pd, gd) = (p.data_mut(), g.data());
            for (((pv, &gv), mv), vv) in pd.iter_mut().zip(gd).zip(m.data_mut()).zip(v.data_mut()) {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Per-epoch losses.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` on epochs where validation was not evaluated.
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: Model<T>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

/// Records the loss of one sample on `tape`.
pub fn sample_loss<T: Scalar>(tape: &mut Tape<T>, output: &Output, sample: &Sample<T>, loss: LossKind) -> Result<Var> {
    match (&sample.target, loss) {
        (Target::Sequence(y), LossKind::L1) => match output {
            Output::Steps(steps) => {
                if steps.len() != y.shape()[0] {
                    return Err(Error::shape(
                        "l1_loss",
                        format!("{} estimates for a {}-step target", steps.len(), y.shape()[0]),
                    ));
                }
                let mut total: Option<Var> = None;
                for (t, &est) in steps.iter().enumerate() {
                    let yt = tape.constant(y.slab(t));
                    let l = tape.mean_abs(est, yt)?;
                    total = Some(match total {
                        Some(acc) => tape.add(acc, l)?,
                        None => l,
                    });
                }
                tape.scale(total.expect("nonempty"), T::one() / T::from_count(steps.len()))
            }
            Output::Final(est) => {
                let yv = tape.constant(stack_sequence(y)?);
                tape.mean_abs(*est, yv)
            }
        },
        (Target::Label(label), LossKind::CrossEntropy) => {
            let logits = match output {
                Output::Final(v) => *v,
                Output::Steps(v) => *v.last().ok_or_else(|| Error::invalid("no outputs"))?,
            };
            tape.softmax_cross_entropy(logits, *label)
        }
        (Target::Unlabeled, _) => Err(Error::invalid("cannot train or evaluate on unlabeled samples")),
        (_, kind) => Err(Error::invalid(format!("{kind:?} loss does not fit the dataset targets"))),
    }
}

/// Loss of every sample in `split`, averaged.
pub fn mean_loss<T: Scalar>(model: &Model<T>, ds: &ProcessDataset<T>, split: Split, loss: LossKind) -> Result<f64> {
    let idx = ds.splits.get(split);
    if idx.is_empty() {
        return Err(Error::invalid(format!("{} split is empty", split.name())));
    }
    let mut total = 0.0;
    for &i in idx {
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, false);
        let s = tape.constant(ds.gso.matrix().clone());
        let out = model.forward(&mut tape, &vars, s, &ds.samples[i].input)?;
        let l = sample_loss(&mut tape, &out, &ds.samples[i], loss)?;
        total += tape.value(l).item().to_f64_lossy();
    }
    Ok(total / idx.len() as f64)
}

fn check_compatible<T: Scalar>(model: &Model<T>, ds: &ProcessDataset<T>, split: Split) -> Result<()> {
    let &first = ds
        .splits
        .get(split)
        .first()
        .ok_or_else(|| Error::invalid(format!("{} split is empty", split.name())))?;
    let sample = &ds.samples[first];
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, false);
    let s = tape.constant(ds.gso.matrix().clone());
    let loss = if ds.is_classification() { LossKind::CrossEntropy } else { LossKind::L1 };
    match model
        .forward(&mut tape, &vars, s, &sample.input)
        .and_then(|out| sample_loss(&mut tape, &out, sample, loss))
    {
        // shape check only; overflow is reported later with its batch
        Err(e) if e.is_numerical() => Ok(()),
        other => other.map(|_| ()),
    }
}

/// Mini-batch ADAM on the training split with best-validation selection.
pub fn train<T: Scalar>(model: &Model<T>, ds: &ProcessDataset<T>, config: &TrainConfig) -> Result<TrainOutcome<T>> {
    train_with_progress(model, ds, config, |_| {})
}

pub fn train_with_progress<T: Scalar>(
    model: &Model<T>,
    ds: &ProcessDataset<T>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if config.epochs == 0 {
        return Ok(TrainOutcome {
            model: model.clone(),
            history: Vec::new(),
            best_epoch: None,
        });
    }
    if ds.splits.val.is_empty() {
        return Err(Error::invalid("training needs a nonempty validation split"));
    }
    check_compatible(model, ds, Split::Train)?;

    let mut current = model.clone();
    let mut adam = AdamState::new(T::lit(config.learning_rate), current.parameters());
    let mut best: Option<(f64, usize, Model<T>)> = None;
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = ds.splits.train.clone();
    let mut batch_index = 0usize;

    for epoch in 0..config.epochs {
        order.clone_from(&ds.splits.train);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, epoch as u64));
        order.shuffle(&mut rng);

        let mut epoch_total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads: Vec<Tensor<T>> = current.parameters().iter().map(|p| Tensor::zeros(p.shape())).collect();
            for &i in batch {
                let sample = &ds.samples[i];
                let mut tape = Tape::new();
                let vars = current.bind(&mut tape, true);
                let s = tape.constant(ds.gso.matrix().clone());
                let step = current
                    .forward(&mut tape, &vars, s, &sample.input)
                    .and_then(|out| sample_loss(&mut tape, &out, sample, config.loss));
                let loss = step.map_err(|e| match e {
                    Error::Numerical(msg) => Error::Numerical(format!("batch {batch_index}: {msg}")),
                    other => other,
                })?;
                let value = tape.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::numerical(format!("batch {batch_index}: loss is not finite")));
                }
                epoch_total += value.to_f64_lossy();
                let g = tape.backward(loss)?;
                for (acc, gi) in grads.iter_mut().zip(g.as_slice()) {
                    for (a, &b) in acc.data_mut().iter_mut().zip(gi.data()) {
                        *a += b;
                    }
                }
            }
            let scale = T::one() / T::from_count(batch.len());
            for g in &mut grads {
                for v in g.data_mut() {
                    *v *= scale;
                }
            }
            adam.update(&mut current.parameters_mut(), &grads)?;
            batch_index += 1;
        }

        let evaluate_now = (epoch + 1) % config.eval_every == 0 || epoch + 1 == config.epochs;
        let val_loss = if evaluate_now {
            let v = mean_loss(&current, ds, Split::Val, config.loss)?;
            if !v.is_finite() {
                return Err(Error::numerical(format!("validation loss is not finite after epoch {epoch}")));
            }
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, epoch, current.clone()));
            }
            Some(v)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            train_loss: epoch_total / order.len().max(1) as f64,
            val_loss,
        };
        on_epoch(&record);
        history.push(record);
    }
    let (_, best_epoch, best_model) = best.expect("last epoch is always evaluated");
    Ok(TrainOutcome {
        model: best_model,
        history,
        best_epoch: Some(best_epoch),
    })
}

/// Test-style metric over one split: mean L1 error or classification accuracy.
pub fn evaluate<T: Scalar>(model: &Model<T>, ds: &ProcessDataset<T>, split: Split, metric: Metric) -> Result<f64> {
    let idx = ds.splits.get(split);
    if idx.is_empty() {
        return Err(Error::invalid(format!("{} split is empty", split.name())));
    }
    match metric {
        Metric::Mae => {
            if ds.is_classification() {
                return Err(Error::invalid("mae needs sequence targets"));
            }
            mean_loss(model, ds, split, LossKind::L1)
        }
        Metric::Accuracy => {
            let mut correct = 0usize;
            for &i in idx {
                let Target::Label(label) = ds.samples[i].target else {
                    return Err(Error::invalid("accuracy needs class labels"));
                };
                let logits = match model.predict(&ds.gso, &ds.samples[i].input)? {
                    Prediction::Final(t) => t,
                    Prediction::Steps(mut v) => v.pop().ok_or_else(|| Error::invalid("no outputs"))?,
                };
                if argmax(logits.data()) == label {
                    correct += 1;
                }
            }
            Ok(correct as f64 / idx.len() as f64)
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// `epoch,train_loss,val_loss` rows; unevaluated validation cells are empty.
pub fn write_history_csv<W: Write>(history: &[EpochRecord], mut out: W) -> Result<()> {
    writeln!(out, "epoch,train_loss,val_loss")?;
    for r in history {
        let val = r.val_loss.map(|v| format!("{v:?}")).unwrap_or_default();
        writeln!(out, "{},{:?},{}", r.epoch, r.train_loss, val)?;
    }
    Ok(())
}
