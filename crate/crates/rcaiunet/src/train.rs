//! Training protocol: minibatch Adam on the combined segmentation loss,
//! plateau-driven learning-rate halving, early stopping, and a deterministic
//! CSV log.

use std::collections::HashMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{ParamId, Tape};
use crate::data::Sample;
use crate::layers::Mode;
use crate::loss;
use crate::model::{ModelError, RcaIUnet};
use crate::tensor::Tensor;

/// Optimizer and schedule hyperparameters.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiplier applied to the learning rate on a plateau (halving).
    pub plateau_factor: f64,
    /// Epochs without val-loss improvement before the LR is cut.
    pub plateau_patience: usize,
    /// Epochs without val-loss improvement before training halts.
    pub early_stop_patience: usize,
    /// Absolute val-loss improvement below which an epoch counts as
    /// stagnant.
    pub min_delta: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            plateau_factor: 0.5,
            plateau_patience: 5,
            early_stop_patience: 10,
            min_delta: 1e-4,
            batch_size: 8,
            max_epochs: 150,
            seed: 0,
        }
    }
}

/// Errors from the training loop.
#[derive(Debug)]
pub enum TrainError {
    /// Loss became non-finite; carries the last good checkpoint when one
    /// exists.
    DivergenceDetected {
        epoch: usize,
        last_good: Option<Vec<u8>>,
    },
    EmptySplit(&'static str),
    Model(ModelError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::DivergenceDetected { epoch, .. } => {
                write!(f, "loss diverged to NaN/Inf at epoch {epoch}")
            }
            TrainError::EmptySplit(which) => write!(f, "{which} split is empty"),
            TrainError::Model(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}

/// Adam with bias correction, keyed by parameter identity.
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    state: HashMap<ParamId, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig) -> Adam {
        Adam {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            t: 0,
            state: HashMap::new(),
        }
    }

    /// One update over `(id, value, grad)` triples; returns the new values.
    pub fn step<'a>(
        &mut self,
        params: impl Iterator<Item = (ParamId, Tensor, &'a Tensor)>,
    ) -> Vec<(ParamId, Tensor)> {
        self.t += 1;
        let (beta1, beta2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let mut out = Vec::new();
        for (id, value, grad) in params {
            let (m, v) = self
                .state
                .entry(id)
                .or_insert_with(|| (vec![0.0; value.len()], vec![0.0; value.len()]));
            let updated = Tensor::from_fn(value.shape(), value.dtype(), |i| {
                let g = grad.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                value.data()[i] - lr * mhat / (vhat.sqrt() + eps)
            });
            out.push((id, updated));
        }
        out
    }
}

/// Halves the learning rate after `patience` stagnant epochs.
///
/// The LR sequence is always `lr₀ · factorᵏ`, non-increasing.
#[derive(Clone, Debug)]
pub struct PlateauScheduler {
    pub lr: f64,
    factor: f64,
    patience: usize,
    min_delta: f64,
    best: Option<f64>,
    stagnant: usize,
}

impl PlateauScheduler {
    pub fn new(lr0: f64, factor: f64, patience: usize, min_delta: f64) -> Self {
        PlateauScheduler {
            lr: lr0,
            factor,
            patience,
            min_delta,
            best: None,
            stagnant: 0,
        }
    }

    /// Feeds one epoch's validation loss; returns true when the LR was cut.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        let improved = match self.best {
            None => true,
            Some(b) => val_loss < b - self.min_delta,
        };
        if improved {
            self.best = Some(val_loss);
            self.stagnant = 0;
            return false;
        }
        self.stagnant += 1;
        if self.stagnant >= self.patience {
            self.lr *= self.factor;
            self.stagnant = 0;
            return true;
        }
        false
    }
}

/// Halts training after `patience` stagnant epochs.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: Option<f64>,
    stagnant: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        EarlyStopping {
            patience,
            min_delta,
            best: None,
            stagnant: 0,
        }
    }

    /// Feeds one epoch's validation loss; returns true when training should
    /// halt.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        let improved = match self.best {
            None => true,
            Some(b) => val_loss < b - self.min_delta,
        };
        if improved {
            self.best = Some(val_loss);
            self.stagnant = 0;
            false
        } else {
            self.stagnant += 1;
            self.stagnant >= self.patience
        }
    }
}

/// One row of the training log.
#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    pub bce: f64,
    pub dice_loss: f64,
    pub dice_coeff: f64,
    pub lr: f64,
}

/// Full outcome of a training run.
pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Archive of the best-validation-loss weights.
    pub best_archive: Vec<u8>,
    pub stopped_early: bool,
    pub epochs_run: usize,
}

impl TrainOutcome {
    /// Deterministic CSV rendering of the log.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("epoch,split,loss,bce,dice_loss,dice_coeff,lr\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch, r.split, r.loss, r.bce, r.dice_loss, r.dice_coeff, r.lr
            ));
        }
        out
    }
}

/// Stacks samples into N×1×H×W input and target tensors.
pub fn batch_tensors(samples: &[&Sample], dtype: crate::tensor::DType) -> (Tensor, Tensor) {
    assert!(!samples.is_empty());
    let (h, w) = samples[0].image.spatial().expect("sample image dims");
    let n = samples.len();
    let mut xs = Vec::with_capacity(n * h * w);
    let mut ys = Vec::with_capacity(n * h * w);
    for s in samples {
        xs.extend_from_slice(s.image.data());
        ys.extend(s.mask.data().iter().map(|&v| v as f64));
    }
    (
        Tensor::from_vec(&[n, 1, h, w], xs, dtype).expect("batch x"),
        Tensor::from_vec(&[n, 1, h, w], ys, dtype).expect("batch y"),
    )
}

struct EpochStats {
    loss: f64,
    bce: f64,
    dice_loss: f64,
    pixels: f64,
    tp: u64,
    fp: u64,
    fn_: u64,
}

impl EpochStats {
    fn new() -> Self {
        EpochStats {
            loss: 0.0,
            bce: 0.0,
            dice_loss: 0.0,
            pixels: 0.0,
            tp: 0,
            fp: 0,
            fn_: 0,
        }
    }

    fn add(&mut self, loss: f64, bce: f64, dice: f64, pred: &Tensor, target: &Tensor) {
        let px = pred.len() as f64;
        self.loss += loss * px;
        self.bce += bce * px;
        self.dice_loss += dice * px;
        self.pixels += px;
        for (p, y) in pred.data().iter().zip(target.data()) {
            let p1 = *p > 0.5;
            let y1 = *y > 0.5;
            match (p1, y1) {
                (true, true) => self.tp += 1,
                (true, false) => self.fp += 1,
                (false, true) => self.fn_ += 1,
                _ => {}
            }
        }
    }

    fn record(&self, epoch: usize, split: &'static str, lr: f64) -> EpochRecord {
        let denom = 2 * self.tp + self.fp + self.fn_;
        let dc = if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        };
        EpochRecord {
            epoch,
            split,
            loss: self.loss / self.pixels,
            bce: self.bce / self.pixels,
            dice_loss: self.dice_loss / self.pixels,
            dice_coeff: dc,
            lr,
        }
    }
}

/// Runs one forward/loss pass over a split without updating weights.
fn evaluate_split(
    model: &RcaIUnet,
    samples: &[Sample],
    batch_size: usize,
    epoch: usize,
    lr: f64,
) -> Result<EpochRecord, TrainError> {
    let mut stats = EpochStats::new();
    for chunk in samples.chunks(batch_size) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, y) = batch_tensors(&refs, model.config.dtype);
        let tape = Tape::new();
        let xv = tape.constant(x);
        let yv = tape.constant(y.clone());
        let p = model.forward_tape(&tape, xv, Mode::Eval)?;
        let (total, bce_mean, _, dice) = loss::combined_loss_on_tape(&tape, yv, p);
        stats.add(
            tape.value(total).data()[0],
            tape.value(bce_mean).data()[0],
            tape.value(dice).data()[0],
            &tape.value(p),
            &y,
        );
    }
    Ok(stats.record(epoch, "val", lr))
}

/// Minimizes the combined loss with Adam. Deterministic given the seed and
/// single-threaded execution; saves the best-validation-loss weights.
pub fn train(
    model: &RcaIUnet,
    config: &TrainConfig,
    train_set: &[Sample],
    val_set: &[Sample],
) -> Result<TrainOutcome, TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySplit("val"));
    }
    let mut adam = Adam::new(config);
    let mut scheduler = PlateauScheduler::new(
        config.lr,
        config.plateau_factor,
        config.plateau_patience,
        config.min_delta,
    );
    let mut stopper = EarlyStopping::new(config.early_stop_patience, config.min_delta);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut records = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_archive: Option<Vec<u8>> = None;
    let mut stopped_early = false;
    let mut epochs_run = 0;

    for epoch in 0..config.max_epochs {
        epochs_run = epoch + 1;
        // Seeded shuffle of the training order.
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut stats = EpochStats::new();
        for chunk in order.chunks(config.batch_size) {
            let refs: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (x, y) = batch_tensors(&refs, model.config.dtype);
            let tape = Tape::new();
            let xv = tape.constant(x);
            let yv = tape.constant(y.clone());
            let p = model.forward_tape(&tape, xv, Mode::Train)?;
            let (total, bce_mean, _, dice) = loss::combined_loss_on_tape(&tape, yv, p);
            let loss_val = tape.value(total).data()[0];
            if !loss_val.is_finite() {
                return Err(TrainError::DivergenceDetected {
                    epoch,
                    last_good: best_archive,
                });
            }
            let grads = tape.backward(total).expect("loss is scalar");
            adam.lr = scheduler.lr;
            let mut triples: Vec<(ParamId, Tensor, Tensor)> = Vec::new();
            model.update_params(&grads, |_, param, grad| {
                triples.push((param.id(), param.value(), grad.clone()));
            });
            let updates = adam.step(
                triples
                    .iter()
                    .map(|(id, value, grad)| (*id, value.clone(), grad)),
            );
            let by_id: HashMap<ParamId, Tensor> = updates.into_iter().collect();
            model.update_params(&grads, |_, param, _| {
                if let Some(new_value) = by_id.get(&param.id()) {
                    param.set(new_value.clone());
                }
            });
            stats.add(
                loss_val,
                tape.value(bce_mean).data()[0],
                tape.value(dice).data()[0],
                &tape.value(p),
                &y,
            );
        }
        records.push(stats.record(epoch, "train", scheduler.lr));

        let val_record = evaluate_split(model, val_set, config.batch_size, epoch, scheduler.lr)?;
        let val_loss = val_record.loss;
        records.push(val_record);
        if !val_loss.is_finite() {
            return Err(TrainError::DivergenceDetected {
                epoch,
                last_good: best_archive,
            });
        }
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            let mut buf = Vec::new();
            model.save_archive(&mut buf)?;
            best_archive = Some(buf);
        }
        scheduler.observe(val_loss);
        if stopper.observe(val_loss) {
            stopped_early = true;
            break;
        }
    }

    let best_archive = match best_archive {
        Some(b) => b,
        None => {
            let mut buf = Vec::new();
            model.save_archive(&mut buf)?;
            buf
        }
    };
    Ok(TrainOutcome {
        records,
        best_epoch,
        best_val_loss: best_val,
        best_archive,
        stopped_early,
        epochs_run,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_scheduler_halves_after_exactly_patience_epochs() {
        let mut s = PlateauScheduler::new(1e-3, 0.5, 5, 1e-4);
        assert!(!s.observe(1.0)); // establishes the best
        for i in 0..4 {
            assert!(!s.observe(1.0), "epoch {i} should not cut yet");
            assert_eq!(s.lr, 1e-3);
        }
        assert!(s.observe(1.0)); // 5th stagnant epoch
        assert_eq!(s.lr, 5e-4);
        // Counter resets; the next cut takes another 5 stagnant epochs.
        for _ in 0..4 {
            assert!(!s.observe(1.0));
        }
        assert!(s.observe(1.0));
        assert_eq!(s.lr, 2.5e-4);
    }

    #[test]
    fn lr_sequence_is_lr0_times_half_to_the_k() {
        // The first observation only sets the baseline; every 2 stagnant
        // epochs after that halve the rate once more.
        let mut s = PlateauScheduler::new(1e-3, 0.5, 2, 1e-4);
        let mut seen = vec![s.lr];
        for _ in 0..9 {
            s.observe(1.0);
            seen.push(s.lr);
        }
        let mut prev = f64::INFINITY;
        for (i, &lr) in seen.iter().enumerate() {
            let k = (i.saturating_sub(1) / 2) as i32;
            let expect = 1e-3 * 0.5f64.powi(k);
            assert!((lr - expect).abs() < 1e-18, "step {i}: {lr} vs {expect}");
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn improvements_below_min_delta_count_as_stagnation() {
        let mut s = PlateauScheduler::new(1.0, 0.5, 2, 1e-4);
        s.observe(0.5);
        assert!(!s.observe(0.49995)); // within min_delta: stagnant
        assert!(s.observe(0.49994)); // second stagnant epoch cuts
        assert_eq!(s.lr, 0.5);
    }

    #[test]
    fn early_stopping_halts_after_patience_epochs_past_best() {
        let mut e = EarlyStopping::new(10, 1e-4);
        assert!(!e.observe(1.0));
        for i in 0..9 {
            assert!(!e.observe(1.0), "epoch {i}");
        }
        assert!(e.observe(1.0));
    }

    #[test]
    fn early_stopping_resets_on_improvement() {
        let mut e = EarlyStopping::new(3, 1e-4);
        e.observe(1.0);
        e.observe(1.0);
        e.observe(1.0);
        assert!(!e.observe(0.5)); // improvement resets the counter
        assert!(!e.observe(0.5));
        assert!(!e.observe(0.5));
        assert!(e.observe(0.5));
    }

    #[test]
    fn adam_moves_parameters_against_gradient() {
        let cfg = TrainConfig {
            lr: 0.1,
            ..Default::default()
        };
        let mut adam = Adam::new(&cfg);
        let id = ParamId::fresh();
        let value = Tensor::from_vec(&[2], vec![1.0, -1.0], crate::tensor::DType::F64).unwrap();
        let grad = Tensor::from_vec(&[2], vec![1.0, -2.0], crate::tensor::DType::F64).unwrap();
        let out = adam.step([(id, value, &grad)].into_iter());
        let new = &out[0].1;
        assert!(new.data()[0] < 1.0);
        assert!(new.data()[1] > -1.0);
    }
}
