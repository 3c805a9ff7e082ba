//! Mini-batch training with Adam, a validation-driven early stop, and
//! bit-reproducible runs.
//!
//! Determinism: parameter init comes from the seed, each epoch's shuffle
//! comes from (seed, epoch) via the RNG's stream counter, per-sample
//! gradients inside a batch are computed in parallel but reduced in sample
//! order, and the floating-point evaluation order is fixed everywhere else.
//! Repeating a run with the same inputs and seed reproduces every parameter
//! bit regardless of thread count.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::adam::{clip_grad_norm, AdamConfig, AdamState};
use super::loss::LossKind;
use super::matrix::Matrix;
use super::model::{init_params, ModelParams, ModelSpec};
use crate::error::{Error, Result};

/// One labeled training window: the feature matrix plus its scalar target
/// (0/1 health-state label, remaining-life fraction, or next-value).
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub input: Matrix,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Fraction of samples held out for validation by [`train`]; ignored by
    /// [`train_with_validation`], which receives an explicit split.
    pub validation_fraction: f64,
    pub seed: u64,
    /// Optional L2 gradient-norm clip; deep recurrent stacks can spike.
    pub clip_norm: Option<f64>,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            max_epochs: 100,
            patience: 20,
            validation_fraction: 0.1,
            seed: 0,
            clip_norm: None,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation_fraction must be in (0,1), got {}",
                self.validation_fraction
            )));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip_norm must be > 0, got {c}")));
            }
        }
        self.adam.validate()
    }
}

/// Per-epoch record kept for diagnostics and history files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the best validation loss seen, not the last epoch.
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Tracks strict validation-loss improvement against a patience budget.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    epochs_since_best: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: f64::INFINITY,
            epochs_since_best: 0,
        }
    }

    /// Feeds one epoch's validation loss; returns (improved, should_stop).
    pub fn observe(&mut self, val_loss: f64) -> (bool, bool) {
        if val_loss < self.best {
            self.best = val_loss;
            self.epochs_since_best = 0;
            (true, false)
        } else {
            self.epochs_since_best += 1;
            (false, self.epochs_since_best >= self.patience)
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// RNG for a named sub-stream of the run seed (epoch shuffles, splits);
/// streams never collide with the init stream 0.
fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trains with an internal sample-level validation split
/// (`validation_fraction`, at least one sample each side). Pipelines that
/// split by cell call [`train_with_validation`] directly.
pub fn train(
    spec: &ModelSpec,
    samples: &[TrainSample],
    loss: LossKind,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if samples.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 samples to split off validation, got {}",
            samples.len()
        )));
    }
    let mut indices: Vec<usize> = (0..samples.len()).collect();
    indices.shuffle(&mut stream_rng(config.seed, SPLIT_STREAM));
    let n_val = ((samples.len() as f64 * config.validation_fraction).floor() as usize)
        .clamp(1, samples.len() - 1);
    let val: Vec<TrainSample> = indices[..n_val].iter().map(|&i| samples[i].clone()).collect();
    let train: Vec<TrainSample> = indices[n_val..].iter().map(|&i| samples[i].clone()).collect();
    train_with_validation(spec, &train, &val, loss, config)
}

/// Reserved RNG streams: 0 is parameter init, 1 the validation split;
/// epoch shuffles use 2 + epoch.
const INIT_STREAM: u64 = 0;
const SPLIT_STREAM: u64 = 1;
const EPOCH_STREAM_BASE: u64 = 2;

/// Core loop: mini-batches of `batch_size` (final partial batch kept),
/// Adam updates, early stop on stalled validation loss, best-validation
/// parameters returned.
pub fn train_with_validation(
    spec: &ModelSpec,
    train: &[TrainSample],
    val: &[TrainSample],
    loss: LossKind,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    spec.validate()?;
    if train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if val.is_empty() {
        return Err(Error::Data("empty validation set".into()));
    }

    let mut params = init_params(spec, &mut stream_rng(config.seed, INIT_STREAM));
    let mut adam = AdamState::new(params.len(), config.adam)?;
    let mut stopper = EarlyStopper::new(config.patience);
    let mut best_params = params.clone();
    let mut best_epoch = 0usize;
    let mut history = Vec::new();
    let mut stopped_early = false;

    let mut order: Vec<usize> = (0..train.len()).collect();
    // One gradient buffer per batch slot, reused across every batch: the
    // buffers are large enough that allocating them per sample would cost
    // more than the backward pass that fills them.
    let mut grad_bufs: Vec<Vec<f64>> = (0..config.batch_size)
        .map(|_| vec![0.0; params.len()])
        .collect();
    let mut grad_sum = vec![0.0; params.len()];
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut stream_rng(config.seed, EPOCH_STREAM_BASE + epoch as u64));

        let mut epoch_loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            // Per-sample work in parallel; reduction stays in batch order so
            // the f64 sums are reproducible.
            let losses: Vec<f64> = grad_bufs[..batch.len()]
                .par_iter_mut()
                .zip(batch.par_iter())
                .map(|(buf, &i)| {
                    let sample = &train[i];
                    let (y, cache) = spec.forward(&params, &sample.input)?;
                    let (l, dl_dy) = loss.per_sample(y, sample.target)?;
                    spec.backward_into(&params, &cache, dl_dy, buf)?;
                    Ok(l)
                })
                .collect::<Result<_>>()?;

            let scale = 1.0 / batch.len() as f64;
            grad_sum.fill(0.0);
            for (l, grad) in losses.iter().zip(&grad_bufs) {
                epoch_loss_sum += l;
                for (acc, g) in grad_sum.iter_mut().zip(grad) {
                    *acc += g;
                }
            }
            for g in grad_sum.iter_mut() {
                *g *= scale;
            }
            if let Some(max_norm) = config.clip_norm {
                clip_grad_norm(&mut grad_sum, max_norm);
            }
            adam.step(params.values_mut(), &grad_sum)?;
        }
        let train_loss = epoch_loss_sum / train.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "training loss diverged at epoch {epoch}"
            )));
        }

        let val_loss = evaluate_loss(spec, &params, val, loss)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });

        let (improved, stop) = stopper.observe(val_loss);
        if improved {
            best_params = params.clone();
            best_epoch = epoch;
        }
        if stop {
            stopped_early = true;
            break;
        }
    }

    Ok(TrainOutcome {
        params: best_params,
        history,
        best_epoch,
        best_val_loss: stopper.best(),
        stopped_early,
    })
}

/// Mean per-sample loss of frozen parameters over a sample set.
pub fn evaluate_loss(
    spec: &ModelSpec,
    params: &ModelParams,
    samples: &[TrainSample],
    loss: LossKind,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| {
            let (y, _) = spec.forward(params, &s.input)?;
            Ok(loss.per_sample(y, s.target)?.0)
        })
        .collect::<Result<_>>()?;
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    if !mean.is_finite() {
        return Err(Error::Numeric("non-finite evaluation loss".into()));
    }
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::Head;

    fn toy_spec(head: Head) -> ModelSpec {
        ModelSpec {
            head,
            n_steps: 2,
            step_input: 5,
            hidden: 4,
            layers_per_stack: 1,
            num_stacks: 2,
            dense_units: 8,
        }
    }

    /// Two well-separated classes: inputs near +0.8 labeled 1, near -0.8
    /// labeled 0, with small deterministic jitter.
    fn separable_samples(n_per_class: usize) -> Vec<TrainSample> {
        let mut out = Vec::new();
        for k in 0..n_per_class {
            let jitter = 0.05 * ((k % 7) as f64 - 3.0) / 3.0;
            for (center, target) in [(0.8, 1.0), (-0.8, 0.0)] {
                let v = center + jitter;
                out.push(TrainSample {
                    input: Matrix::from_fn(2, 5, |r, c| v + 0.01 * ((r * 5 + c) as f64 - 4.5)),
                    target,
                });
            }
        }
        out
    }

    #[test]
    fn learns_a_separable_toy_problem() {
        let spec = toy_spec(Head::Hs);
        let samples = separable_samples(12);
        let config = TrainConfig {
            seed: 5,
            ..Default::default()
        };
        let outcome = train(&spec, &samples, LossKind::Bce, &config).unwrap();
        let correct = samples
            .iter()
            .filter(|s| {
                let (y, _) = spec.forward(&outcome.params, &s.input).unwrap();
                (y > 0.5) == (s.target == 1.0)
            })
            .count();
        let accuracy = correct as f64 / samples.len() as f64;
        assert!(accuracy >= 0.95, "accuracy {accuracy}");
        assert!(!outcome.history.is_empty());
    }

    #[test]
    fn early_stopper_rule() {
        let mut s = EarlyStopper::new(20);
        assert_eq!(s.observe(1.0), (true, false)); // epoch 1 improves
        for epoch in 2..=20 {
            assert_eq!(s.observe(1.0), (false, false), "epoch {epoch}");
        }
        assert_eq!(s.observe(1.0), (false, true)); // epoch 21 stops
    }

    #[test]
    fn stalled_validation_halts_at_patience_plus_one() {
        // lr = 0 freezes the parameters, so validation improves only at
        // epoch 1 (from infinity) and training must halt at epoch 21.
        let spec = toy_spec(Head::Hs);
        let samples = separable_samples(6);
        let config = TrainConfig {
            seed: 1,
            adam: AdamConfig {
                lr: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let outcome = train(&spec, &samples, LossKind::Bce, &config).unwrap();
        assert_eq!(outcome.history.len(), 21);
        assert!(outcome.stopped_early);
        assert_eq!(outcome.best_epoch, 1);
    }

    #[test]
    fn same_seed_reproduces_parameters_bit_for_bit() {
        let spec = toy_spec(Head::Rul);
        let samples: Vec<TrainSample> = (0..30)
            .map(|k| TrainSample {
                input: Matrix::from_fn(2, 5, |r, c| {
                    ((k * 10 + r * 5 + c) as f64 * 0.618).sin() * 0.5
                }),
                target: 0.5 + 0.4 * ((k as f64) * 0.37).sin(),
            })
            .collect();
        let config = TrainConfig {
            seed: 42,
            max_epochs: 5,
            ..Default::default()
        };
        let a = train(&spec, &samples, LossKind::Mae, &config).unwrap();
        let b = train(&spec, &samples, LossKind::Mae, &config).unwrap();
        assert!(a.params.bits_eq(&b.params));
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let spec = toy_spec(Head::Hs);
        let samples = separable_samples(8);
        let config = TrainConfig {
            seed: 9,
            max_epochs: 3,
            ..Default::default()
        };
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| train(&spec, &samples, LossKind::Bce, &config).unwrap())
        };
        let single = run(1);
        let multi = run(4);
        assert!(single.params.bits_eq(&multi.params));
        assert_eq!(single.history, multi.history);
    }

    #[test]
    fn partial_final_batch_is_used() {
        // 9 samples, batch 8: the second batch holds one sample. Train one
        // epoch with and without the 9th sample; parameters must differ.
        let spec = toy_spec(Head::Hs);
        let mut samples = separable_samples(4); // 8 samples
        let odd = TrainSample {
            input: Matrix::from_fn(2, 5, |_, _| 0.3),
            target: 1.0,
        };
        samples.push(odd);
        let config = TrainConfig {
            seed: 3,
            max_epochs: 1,
            batch_size: 8,
            ..Default::default()
        };
        let with9 = train_with_validation(
            &spec,
            &samples,
            &samples[..1].to_vec(),
            LossKind::Bce,
            &config,
        )
        .unwrap();
        let with8 = train_with_validation(
            &spec,
            &samples[..8].to_vec(),
            &samples[..1].to_vec(),
            LossKind::Bce,
            &config,
        )
        .unwrap();
        // Same number of Adam steps only if the partial batch ran; and the
        // extra sample must change the trajectory.
        assert!(!with9.params.bits_eq(&with8.params));
    }

    #[test]
    fn empty_splits_are_rejected() {
        let spec = toy_spec(Head::Hs);
        let samples = separable_samples(2);
        let config = TrainConfig::default();
        assert!(train_with_validation(&spec, &[], &samples, LossKind::Bce, &config).is_err());
        assert!(train_with_validation(&spec, &samples, &[], LossKind::Bce, &config).is_err());
        assert!(train(&spec, &samples[..1], LossKind::Bce, &config).is_err());
    }

    #[test]
    fn config_validation_rejects_nonsense() {
        let bad_batch = TrainConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(bad_batch.validate().is_err());
        let bad_frac = TrainConfig {
            validation_fraction: 1.0,
            ..Default::default()
        };
        assert!(bad_frac.validate().is_err());
        let bad_clip = TrainConfig {
            clip_norm: Some(0.0),
            ..Default::default()
        };
        assert!(bad_clip.validate().is_err());
    }

    #[test]
    fn returns_best_epoch_parameters_not_last() {
        // Train long enough that validation loss wiggles; the reported
        // best_val_loss must equal the minimum of the history column.
        let spec = toy_spec(Head::Hs);
        let samples = separable_samples(10);
        let config = TrainConfig {
            seed: 13,
            max_epochs: 30,
            ..Default::default()
        };
        let outcome = train(&spec, &samples, LossKind::Bce, &config).unwrap();
        let min_val = outcome
            .history
            .iter()
            .map(|e| e.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(outcome.best_val_loss, min_val);
        let best_row = outcome
            .history
            .iter()
            .find(|e| e.val_loss == min_val)
            .unwrap();
        assert_eq!(outcome.best_epoch, best_row.epoch);
    }
}
