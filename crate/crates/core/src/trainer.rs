//! Online training: Adam-driven gradient ascent on the log-likelihood,
//! mini-batch presentation with regularizer masks, periodic validation and
//! best-model checkpointing.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::error::{DybmError, Result};
use crate::model::{pattern_nll, DybmModel, ModelConfig, Parameters};
use crate::optimizer::{AdamConfig, OptimizerState};
use crate::regularizers::{DropMask, Method, Regularizer, RegularizerConfig};
use crate::sequence::BinarySequence;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Time steps each training sequence is trained for, summed over the
    /// presentations of its mini-batch.
    pub max_steps_per_sample: usize,
    /// Validate every this many presentations (epochs) of a mini-batch.
    pub validation_cadence_epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub minibatch_size: usize,
    /// Stop once |TNL - ONL| per unit per validation step is at most this.
    pub stop_tolerance: f64,
    /// Seeds the order in which training sequences are batched.
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            max_steps_per_sample: 50_000,
            validation_cadence_epochs: 500,
            learning_rate: adam.learning_rate,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            minibatch_size: 32,
            stop_tolerance: 1e-3,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.validation_cadence_epochs == 0 {
            return Err(DybmError::config("validation cadence must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(DybmError::config("learning rate must be finite and non-negative"));
        }
        for b in [self.adam_beta1, self.adam_beta2] {
            if !(b > 0.0 && b < 1.0) {
                return Err(DybmError::config(format!("Adam beta {b} outside (0, 1)")));
            }
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return Err(DybmError::config("Adam eps must be positive"));
        }
        if self.minibatch_size == 0 {
            return Err(DybmError::config("mini-batch size must be at least 1"));
        }
        if self.stop_tolerance.is_nan() || self.stop_tolerance < 0.0 {
            return Err(DybmError::config("stop tolerance must be non-negative"));
        }
        Ok(())
    }
}

/// One online update: gradient of `log P(x | history)` (under `mask`, if
/// any), an Adam ascent step, then the state moves past `x`. Returns the
/// negative log-likelihood of `x` before the update.
pub fn train_step(
    model: &mut DybmModel,
    x: &[u8],
    optimizer: &mut OptimizerState,
    adam: &AdamConfig,
    mask: Option<&DropMask>,
    grad: &mut Parameters,
) -> Result<f64> {
    let p = model.masked_conditional_probs(mask)?;
    let nll = pattern_nll(&p, x);
    model.gradient_into(x, &p, mask, grad)?;
    let max_grad = grad.max_abs();
    if !max_grad.is_finite() {
        return Err(DybmError::Divergence {
            step: optimizer.step_count,
            max_grad,
        });
    }
    optimizer.ascend(&mut model.params, grad, adam);
    if !model.params.all_finite() {
        return Err(DybmError::Divergence {
            step: optimizer.step_count,
            max_grad,
        });
    }
    model.step_advance(x)?;
    Ok(nll)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrainReport {
    pub sequences: usize,
    pub steps: u64,
    /// Mean negative log-likelihood per training sequence.
    pub mean_nll: f64,
}

/// Validation score: `epsilon = onl - tnl`, or `-tnl` without a known ONL.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonScore {
    pub onl: Option<f64>,
    pub tnl: f64,
    pub epsilon: f64,
}

impl EpsilonScore {
    pub fn new(tnl: f64, onl: Option<f64>) -> Self {
        EpsilonScore {
            onl,
            tnl,
            epsilon: onl.unwrap_or(0.0) - tnl,
        }
    }
}

/// Total negative log-likelihood of `sequences`, each scored from an empty
/// history.
pub fn total_nll(model: &mut DybmModel, sequences: &[BinarySequence]) -> Result<f64> {
    let mut total = 0.0;
    for seq in sequences {
        model.reset_dynamic_state();
        total += model.sequence_nll(seq)?;
    }
    model.reset_dynamic_state();
    Ok(total)
}

/// Scores `eval_model` on the validation set and returns a new checkpoint
/// when its epsilon beats `best` (or when there is no best yet).
pub fn validate_and_checkpoint(
    eval_model: &mut DybmModel,
    validation: &[BinarySequence],
    true_nll: Option<f64>,
    best: Option<&Checkpoint>,
    prune: &crate::regularizers::PruneMask,
    step: u64,
) -> Result<(EpsilonScore, Option<Checkpoint>)> {
    let tnl = total_nll(eval_model, validation)?;
    let score = EpsilonScore::new(tnl, true_nll);
    let improved = best.is_none_or(|b| score.epsilon > b.epsilon);
    let checkpoint =
        improved.then(|| Checkpoint::capture(eval_model, prune.clone(), score.epsilon, step));
    Ok((score, checkpoint))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub batch: usize,
    pub train_nll: f64,
    pub val_tnl: f64,
    pub onl: Option<f64>,
    pub epsilon: f64,
    pub is_best: bool,
    pub method: Method,
    pub p: f64,
}

/// Append-only validation log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub const HEADER: &'static str = "step,batch,train_nll,val_tnl,onl,epsilon,is_best,method,p";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.rows {
            let onl = r.onl.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.step, r.batch, r.train_nll, r.val_tnl, onl, r.epsilon, r.is_best as u8, r.method, r.p
            );
        }
        out
    }
}

pub struct Trainer {
    model: DybmModel,
    optimizer: OptimizerState,
    regularizer: Regularizer,
    config: TrainConfig,
    grad: Parameters,
    step: u64,
    epochs: u64,
    metrics: MetricsLog,
    best: Option<Checkpoint>,
}

impl Trainer {
    pub fn new(model: DybmModel, config: TrainConfig, reg: RegularizerConfig) -> Result<Self> {
        config.validate()?;
        let regularizer = Regularizer::new(reg, &model)?;
        Ok(Trainer {
            optimizer: OptimizerState::new(&model.params),
            grad: Parameters::zeros_like(&model.params),
            model,
            regularizer,
            config,
            step: 0,
            epochs: 0,
            metrics: MetricsLog::default(),
            best: None,
        })
    }

    pub fn model(&self) -> &DybmModel {
        &self.model
    }

    pub fn into_model(self) -> DybmModel {
        self.model
    }

    pub fn regularizer(&self) -> &Regularizer {
        &self.regularizer
    }

    pub fn regularizer_mut(&mut self) -> &mut Regularizer {
        &mut self.regularizer
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.optimizer
    }

    pub fn metrics(&self) -> &MetricsLog {
        &self.metrics
    }

    pub fn best(&self) -> Option<&Checkpoint> {
        self.best.as_ref()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One presentation (epoch) of a mini-batch: every sequence is trained
    /// from an empty history, with masks drawn per the regularizer's cadence.
    pub fn train_minibatch(&mut self, batch: &[BinarySequence]) -> Result<TrainReport> {
        let refs: Vec<&BinarySequence> = batch.iter().collect();
        self.present(&refs, usize::MAX)
    }

    fn present(&mut self, batch: &[&BinarySequence], step_budget: usize) -> Result<TrainReport> {
        if batch.is_empty() {
            return Ok(TrainReport::default());
        }
        let n = self.model.n_units();
        for seq in batch {
            if seq.n_dims() != n {
                return Err(DybmError::shape(format!(
                    "training sequence has {} dims, model has {n} units",
                    seq.n_dims()
                )));
            }
        }
        let adam = self.config.adam();
        self.regularizer.begin_presentation(&mut self.model, self.step)?;
        let mut total = 0.0;
        let start = self.step;
        for seq in batch {
            self.regularizer.begin_sample(&mut self.model, self.step)?;
            self.model.reset_dynamic_state();
            for x in seq.columns().take(step_budget) {
                let mask = self.regularizer.step_mask(n, self.step)?;
                total += train_step(
                    &mut self.model,
                    x,
                    &mut self.optimizer,
                    &adam,
                    mask.as_ref(),
                    &mut self.grad,
                )?;
                self.step += 1;
            }
        }
        self.model.reset_dynamic_state();
        Ok(TrainReport {
            sequences: batch.len(),
            steps: self.step - start,
            mean_nll: total / batch.len() as f64,
        })
    }

    /// Validates the current model in evaluation mode and updates the best
    /// checkpoint. Returns whether the stopping rule fired.
    pub fn validate(
        &mut self,
        validation: &[BinarySequence],
        true_nll: Option<f64>,
        batch: usize,
        train_nll: f64,
    ) -> Result<bool> {
        let mut eval = self.regularizer.evaluation_model(&self.model);
        let (score, checkpoint) = validate_and_checkpoint(
            &mut eval,
            validation,
            true_nll,
            self.best.as_ref(),
            self.regularizer.current_prune_mask(),
            self.step,
        )?;
        let is_best = checkpoint.is_some();
        if let Some(c) = checkpoint {
            self.best = Some(c);
        }
        let reg = self.regularizer.config();
        self.metrics.rows.push(MetricsRow {
            step: self.step,
            batch,
            train_nll,
            val_tnl: score.tnl,
            onl: score.onl,
            epsilon: score.epsilon,
            is_best,
            method: reg.method,
            p: reg.prune_prob,
        });
        Ok(self.should_stop(&score, validation))
    }

    fn should_stop(&self, score: &EpsilonScore, validation: &[BinarySequence]) -> bool {
        let tol = self.config.stop_tolerance;
        if tol.is_infinite() {
            return true;
        }
        let Some(onl) = score.onl else {
            return false;
        };
        let units_steps: usize = validation.iter().map(|s| s.len() * s.n_dims()).sum();
        units_steps > 0 && (score.tnl - onl).abs() / units_steps as f64 <= tol
    }

    /// Full training loop. Sequences are shuffled into mini-batches; each
    /// mini-batch is presented until its sequences reach
    /// `max_steps_per_sample` steps, and the history is cleared between
    /// mini-batches while the weights carry over.
    pub fn run(
        &mut self,
        train: &[BinarySequence],
        validation: &[BinarySequence],
        true_nll: Option<f64>,
    ) -> Result<Checkpoint> {
        let n = self.model.n_units();
        if train.iter().chain(validation).any(|s| s.n_dims() != n) {
            return Err(DybmError::shape("data dimensions do not match the model"));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.config.rng_seed));

        let max_steps = self.config.max_steps_per_sample;
        let cadence = self.config.validation_cadence_epochs as u64;
        let mut validated_last = false;
        let mut last_nll = 0.0;
        let mut last_batch = 0;

        'batches: for (b, chunk) in order.chunks(self.config.minibatch_size).enumerate() {
            if max_steps == 0 {
                break;
            }
            let batch: Vec<&BinarySequence> = chunk.iter().map(|&i| &train[i]).collect();
            let longest = batch.iter().map(|s| s.len()).max().unwrap_or(0).max(1);
            let epochs = max_steps.div_ceil(longest);
            for ep in 0..epochs {
                let budget = (max_steps - ep * longest).min(longest);
                let report = self.present(&batch, budget)?;
                self.epochs += 1;
                last_nll = report.mean_nll;
                last_batch = b;
                validated_last = false;
                if self.epochs.is_multiple_of(cadence) {
                    validated_last = true;
                    if self.validate(validation, true_nll, b, report.mean_nll)? {
                        break 'batches;
                    }
                }
            }
            self.model.reset_dynamic_state();
        }
        if !validated_last || self.best.is_none() {
            self.validate(validation, true_nll, last_batch, last_nll)?;
        }
        Ok(self.best.clone().expect("validated at least once"))
    }
}

/// Result of [`run_training`].
#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub best: Checkpoint,
    pub metrics: MetricsLog,
    pub final_model: DybmModel,
}

/// Initializes a model from `model_cfg` and trains it.
pub fn run_training(
    train: &[BinarySequence],
    validation: &[BinarySequence],
    true_nll: Option<f64>,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    reg_cfg: &RegularizerConfig,
) -> Result<TrainingOutcome> {
    let model = DybmModel::new(model_cfg.clone())?;
    let mut trainer = Trainer::new(model, train_cfg.clone(), reg_cfg.clone())?;
    let best = trainer.run(train, validation, true_nll)?;
    Ok(TrainingOutcome {
        best,
        metrics: trainer.metrics.clone(),
        final_model: trainer.model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn ones(n: usize, len: usize) -> BinarySequence {
        BinarySequence::from_columns(n, &vec![vec![1u8; n]; len]).unwrap()
    }

    #[test]
    fn zero_learning_rate_only_advances_state() {
        let mut model = DybmModel::new(ModelConfig::new(3).with_seed(1)).unwrap();
        let before = model.params.clone();
        let mut opt = OptimizerState::new(&model.params);
        let adam = AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        };
        let mut grad = Parameters::zeros_like(&model.params);
        train_step(&mut model, &[1, 0, 1], &mut opt, &adam, None, &mut grad).unwrap();
        assert_eq!(model.params, before);
        assert_eq!(model.clock(), 1);
        assert!(model.traces().gamma(0, 0) > 0.0);
    }

    #[test]
    fn bias_climbs_under_repeated_ones() {
        let mut cfg = ModelConfig::new(1).with_seed(2);
        cfg.delay_max = 1;
        let mut model = DybmModel::new(cfg).unwrap();
        // remove the history pathway so only the bias moves p
        model.params.iter_mut().for_each(|w| *w = 0.0);
        let mut opt = OptimizerState::new(&model.params);
        let adam = AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        };
        let mut grad = Parameters::zeros_like(&model.params);
        let mut last_bias = model.params.bias[0];
        for _ in 0..400 {
            model.reset_dynamic_state();
            train_step(&mut model, &[1], &mut opt, &adam, None, &mut grad).unwrap();
            assert!(model.params.bias[0] > last_bias);
            last_bias = model.params.bias[0];
        }
        model.reset_dynamic_state();
        assert!(model.conditional_probs().unwrap()[0] > 0.99);
    }

    #[test]
    fn divergence_is_reported() {
        let mut model = DybmModel::new(ModelConfig::new(2).with_seed(3)).unwrap();
        let mut opt = OptimizerState::new(&model.params);
        let adam = AdamConfig {
            learning_rate: f64::MAX,
            ..AdamConfig::default()
        };
        let mut grad = Parameters::zeros_like(&model.params);
        let mut result = Ok(0.0);
        for _ in 0..3 {
            result = train_step(&mut model, &[1, 1], &mut opt, &adam, None, &mut grad);
            if result.is_err() {
                break;
            }
        }
        assert!(matches!(
            result,
            Err(DybmError::Divergence { .. }) | Err(DybmError::NumericalState { .. })
        ));
    }

    #[test]
    fn empty_batch_is_a_no_op() {
        let model = DybmModel::new(ModelConfig::new(2).with_seed(4)).unwrap();
        let params = model.params.clone();
        let mut t = Trainer::new(model, TrainConfig::default(), RegularizerConfig::none()).unwrap();
        let report = t.train_minibatch(&[]).unwrap();
        assert_eq!(report.steps, 0);
        assert_eq!(t.model().params, params);
    }

    #[test]
    fn first_validation_becomes_best() {
        let mut model = DybmModel::new(ModelConfig::new(2).with_seed(5)).unwrap();
        let val = vec![ones(2, 5)];
        let prune = crate::regularizers::PruneMask::keep_all(&model.delays()).unwrap();
        let (score, ck) = validate_and_checkpoint(&mut model, &val, None, None, &prune, 0).unwrap();
        assert_eq!(score.epsilon, -score.tnl);
        assert!(ck.is_some());
    }

    #[test]
    fn epsilon_rule_picks_smaller_tnl() {
        let a = EpsilonScore::new(5.0, Some(4.0));
        let b = EpsilonScore::new(7.0, Some(4.0));
        assert_eq!(a.epsilon, -1.0);
        assert_eq!(b.epsilon, -3.0);
        assert!(a.epsilon > b.epsilon);
    }

    #[test]
    fn zero_steps_returns_initial_model() {
        let cfg = ModelConfig::new(2).with_seed(6);
        let train_cfg = TrainConfig {
            max_steps_per_sample: 0,
            ..TrainConfig::default()
        };
        let out = run_training(&[ones(2, 4)], &[ones(2, 4)], None, &cfg, &train_cfg, &RegularizerConfig::none()).unwrap();
        let init = DybmModel::new(cfg).unwrap();
        assert_eq!(out.best.params, init.params);
        assert_eq!(out.best.step, 0);
        assert_eq!(out.metrics.rows.len(), 1);
    }

    #[test]
    fn infinite_tolerance_stops_at_first_validation() {
        let cfg = ModelConfig::new(2).with_seed(7);
        let train_cfg = TrainConfig {
            max_steps_per_sample: 100,
            validation_cadence_epochs: 2,
            stop_tolerance: f64::INFINITY,
            minibatch_size: 1,
            ..TrainConfig::default()
        };
        let train = vec![ones(2, 10), ones(2, 10)];
        let out = run_training(&train, &[ones(2, 4)], None, &cfg, &train_cfg, &RegularizerConfig::none()).unwrap();
        assert_eq!(out.metrics.rows.len(), 1);
        assert_eq!(out.metrics.rows[0].step, 20);
    }

    #[test]
    fn rejects_bad_train_config() {
        let model = DybmModel::new(ModelConfig::new(2)).unwrap();
        let bad = TrainConfig {
            validation_cadence_epochs: 0,
            ..TrainConfig::default()
        };
        assert!(Trainer::new(model, bad, RegularizerConfig::none()).is_err());
    }

    #[test]
    fn metrics_csv_layout() {
        let log = MetricsLog {
            rows: vec![MetricsRow {
                step: 10,
                batch: 0,
                train_nll: 1.5,
                val_tnl: 2.0,
                onl: None,
                epsilon: -2.0,
                is_best: true,
                method: Method::DelayPrune,
                p: 0.5,
            }],
        };
        assert_eq!(
            log.to_csv(),
            "step,batch,train_nll,val_tnl,onl,epsilon,is_best,method,p\n10,0,1.5,2,,-2,1,delay-prune,0.5\n"
        );
    }
}
