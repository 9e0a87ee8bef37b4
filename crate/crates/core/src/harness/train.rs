use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::{check_compatible, evaluate, MetricKind};
use super::optim::Adam;
use crate::error::{Error, Result};
use crate::model::{HostrConfig, HostrModel, Task};
use crate::scalar::Scalar;
use crate::synth::{Corpus, Episode};
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without a better validation metric.
    pub patience: usize,
    /// Halve the learning rate every this many epochs.
    pub lr_halve_every: usize,
    pub seed: u64,
    /// Evaluate the test split after every epoch (otherwise only at the end).
    #[serde(default = "default_true")]
    pub track_test: bool,
}

fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            batch_size: 64,
            max_epochs: 25,
            patience: 10,
            lr_halve_every: 10,
            seed: 0,
            track_test: true,
        }
    }
}

impl TrainConfig {
    /// Reference settings; counting uses batches of 32 and halves every 5 epochs.
    pub fn for_task(task: Task) -> Self {
        if task.is_count() {
            Self {
                batch_size: 32,
                lr_halve_every: 5,
                ..Self::default()
            }
        } else {
            Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && self.weight_decay >= 0.0
            && self.batch_size > 0
            && self.max_epochs > 0
            && self.patience > 0
            && self.patience <= self.max_epochs
            && self.lr_halve_every > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid training configuration {self:?}")))
        }
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * 0.5f64.powi((epoch / self.lr_halve_every) as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean per-episode loss over the epoch.
    pub train_loss: f64,
    pub val_metric: f64,
    #[serde(default)]
    pub test_metric: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub metric: MetricKind,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_metric: f64,
    /// Test metric of the retained (best-validation) parameters.
    pub test_metric: f64,
    pub stopped_early: bool,
    pub param_count: usize,
    /// Largest number of tape nodes recorded for one episode.
    pub peak_tape_nodes: usize,
    /// Largest number of stored activation values for one episode.
    pub peak_tape_values: usize,
}

impl RunReport {
    /// Copy with wall-clock times zeroed; everything else is deterministic.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        for e in &mut r.epochs {
            e.wall_time_s = 0.0;
        }
        r
    }
}

pub struct TrainOutcome<T> {
    /// Model holding the best-validation parameters.
    pub model: HostrModel<T>,
    pub report: RunReport,
    /// Shuffling RNG after the last epoch.
    pub rng: ChaCha8Rng,
}

/// Mean loss and gradient of a batch; gradients are summed into zeroed
/// buffers and divided by the batch size.
pub fn batch_gradients<T: Scalar>(model: &HostrModel<T>, batch: &[&Episode], peak: &mut (usize, usize)) -> Result<(f64, Vec<Tensor<T>>)> {
    let mut grads: Vec<Tensor<T>> = model.params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
    let mut total = 0.0;
    for e in batch {
        let mut g = Graph::new();
        let p = model.params.bind(&mut g);
        let (_, loss) = model.forward_loss(&mut g, &p, &e.video, &e.question, e.answer.target())?;
        total += g.value(loss).data()[0].as_f64();
        let mut gr = g.backward(loss)?;
        for (acc, &node) in grads.iter_mut().zip(p.nodes()) {
            if let Some(t) = gr.take(node) {
                for (a, &b) in acc.data_mut().iter_mut().zip(t.data()) {
                    *a += b;
                }
            }
        }
        peak.0 = peak.0.max(g.len());
        peak.1 = peak.1.max(g.activation_count());
    }
    let inv = T::one() / T::of(batch.len() as f64);
    for t in &mut grads {
        for v in t.data_mut() {
            *v *= inv;
        }
    }
    Ok((total / batch.len() as f64, grads))
}

/// Trains on `corpus.train`, selecting parameters by validation metric.
/// Single-threaded over batches, so a seed fixes the result bit for bit.
pub fn train<T: Scalar>(config: HostrConfig, tc: &TrainConfig, corpus: &Corpus) -> Result<TrainOutcome<T>> {
    tc.validate()?;
    config.validate()?;
    let all: Vec<&Episode> = corpus.train.iter().chain(&corpus.val).chain(&corpus.test).collect();
    check_compatible(&config, &corpus.manifest, &all)?;
    if corpus.train.is_empty() || corpus.val.is_empty() {
        return Err(Error::InvalidInput("training needs non-empty train and validation splits".into()));
    }
    let mut model = HostrModel::<T>::new(config, tc.seed)?;
    let kind = MetricKind::for_task(model.config.task);
    let mut adam = Adam::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x5EED_5EED);
    let mut order: Vec<usize> = (0..corpus.train.len()).collect();
    let mut epochs = Vec::new();
    let mut best = (kind.worst(), 0usize, model.params.clone());
    let mut peak = (0usize, 0usize);
    let mut stale = 0;
    let mut stopped_early = false;
    for epoch in 0..tc.max_epochs {
        let start = Instant::now();
        let lr = tc.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(tc.batch_size) {
            let batch: Vec<&Episode> = chunk.iter().map(|&i| &corpus.train[i]).collect();
            let (loss, grads) = batch_gradients(&model, &batch, &mut peak)?;
            loss_sum += loss * batch.len() as f64;
            adam.update(&mut model.params, &grads, lr, tc.weight_decay)?;
        }
        let val = evaluate(&model, &corpus.val)?.metric;
        let test = if tc.track_test && !corpus.test.is_empty() {
            Some(evaluate(&model, &corpus.test)?.metric)
        } else {
            None
        };
        epochs.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss: loss_sum / corpus.train.len() as f64,
            val_metric: val,
            test_metric: test,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
        if kind.better(val, best.0) {
            best = (val, epoch, model.params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= tc.patience {
                stopped_early = epoch + 1 < tc.max_epochs;
                break;
            }
        }
    }
    let (best_val, best_epoch, params) = best;
    model.params = params;
    let test_metric = if corpus.test.is_empty() {
        f64::NAN
    } else {
        match epochs[best_epoch].test_metric {
            Some(t) => t,
            None => evaluate(&model, &corpus.test)?.metric,
        }
    };
    let report = RunReport {
        metric: kind,
        epochs,
        best_epoch,
        best_val_metric: best_val,
        test_metric,
        stopped_early,
        param_count: model.param_count(),
        peak_tape_nodes: peak.0,
        peak_tape_values: peak.1,
    };
    Ok(TrainOutcome { model, report, rng })
}
