//! Adam training loops under a global backprop-iteration budget.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{loss_and_gradient, LossKind, LossSettings, TrainingData};
use crate::topology::Subtopology;

/// Default cap on full-batch gradient steps per run.
pub const DEFAULT_BUDGET: u64 = 90_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 0.01, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moment estimates, one slot per parameter. Slots of
/// disabled parameters are held at zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    pub(crate) fn reset_entry(&mut self, i: usize) {
        if i < self.m.len() {
            self.m[i] = 0.0;
            self.v[i] = 0.0;
        }
    }
}

/// Counts gradient steps against a cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetCounter {
    pub used: u64,
    pub cap: u64,
}

impl BudgetCounter {
    pub fn new(cap: u64) -> Self {
        Self { used: 0, cap }
    }

    pub fn remaining(&self) -> u64 {
        self.cap - self.used
    }

    pub fn is_exhausted(&self) -> bool {
        self.used >= self.cap
    }

    /// Takes up to `steps` from the budget; returns how many were granted.
    pub fn reserve(&mut self, steps: u64) -> u64 {
        let granted = steps.min(self.remaining());
        self.used += granted;
        granted
    }

    /// Returns unused steps from an earlier reservation.
    pub fn refund(&mut self, steps: u64) {
        self.used -= steps.min(self.used);
    }
}

/// One bias-corrected Adam update of the enabled weights. Disabled weights
/// are left at zero.
pub fn adam_step(sub: &mut Subtopology, grad: &[f64], config: &AdamConfig) -> Result<()> {
    let n = sub.master().n_params();
    if grad.len() != n {
        return Err(Error::ShapeMismatch { expected: n, found: grad.len() });
    }
    let state = &mut sub.adam;
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - config.beta1.powf(t);
    let c2 = 1.0 - config.beta2.powf(t);
    for i in 0..n {
        if !sub.enabled[i] {
            continue;
        }
        let g = grad[i];
        let m = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
        let v = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        let m_hat = m / c1;
        let v_hat = v / c2;
        sub.weights[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
    }
    sub.fitness = None;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub adam: AdamConfig,
    pub loss: LossSettings,
    /// Pruning threshold applied after regularized batches.
    pub theta_a: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self { adam: AdamConfig::default(), loss: LossSettings::default(), theta_a: crate::topology::DEFAULT_THETA_A }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrainOutcome {
    /// Gradient steps taken, including steps of abandoned attempts.
    pub steps: u64,
    /// The budget ran out before `steps` requested steps were taken.
    pub exhausted: bool,
    /// Attempts abandoned after a non-finite loss.
    pub restarts: u32,
    pub pruned: usize,
}

/// Runs up to `steps` full-batch Adam steps on the composite loss `kind`.
///
/// A non-finite loss or gradient restores the weights held before the
/// attempt and retries with half the remaining step count. After a
/// regularized batch, weights below `theta_a` are pruned.
pub fn train(
    sub: &mut Subtopology,
    kind: LossKind,
    steps: u64,
    data: &TrainingData<'_>,
    budget: &mut BudgetCounter,
    settings: &TrainSettings,
) -> TrainOutcome {
    let mut outcome = TrainOutcome::default();
    if steps == 0 {
        return outcome;
    }
    let granted = budget.reserve(steps);
    outcome.exhausted = granted < steps;
    let mut left = granted;
    let mut attempt = granted;
    let mut grad = vec![0.0; sub.master().n_params()];
    while attempt > 0 && left > 0 {
        let attempt_len = attempt.min(left);
        let snapshot = (sub.weights.clone(), sub.adam.clone());
        let mut diverged = false;
        for _ in 0..attempt_len {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let ok = loss_and_gradient(sub, kind, data, &settings.loss, &mut grad)
                .and_then(|_| adam_step(sub, &grad, &settings.adam));
            left -= 1;
            outcome.steps += 1;
            if ok.is_err() || sub.weights.iter().any(|w| !w.is_finite()) {
                diverged = true;
                break;
            }
        }
        if !diverged {
            break;
        }
        sub.weights = snapshot.0;
        sub.adam = snapshot.1;
        outcome.restarts += 1;
        attempt = attempt_len / 2;
    }
    // Steps never attempted go back to the pool.
    budget.refund(left);
    if kind.includes_regularization() {
        outcome.pruned = sub.prune(settings.theta_a);
    }
    sub.fitness = None;
    outcome
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::problems::{ConstraintSet, Dataset};
    use crate::topology::{ActivationKind, MasterTopology, TopologySpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_ident() -> Arc<MasterTopology> {
        Arc::new(MasterTopology::build(TopologySpec::new(1, vec![vec![ActivationKind::Identity]])).unwrap())
    }

    fn linear_data(slope: f64) -> Dataset {
        let rows: Vec<(Vec<f64>, f64)> = (0..20).map(|i| {
            let x = -1.0 + i as f64 / 10.0;
            (vec![x], slope * x)
        }).collect();
        Dataset::from_rows(vec!["x".into()], "y", &rows)
    }

    #[test]
    fn zero_gradient_leaves_weights() {
        let mut sub = Subtopology::with_weights(single_ident(), vec![0.3, 0.1, -0.2, 0.05]);
        let before = sub.weights().to_vec();
        adam_step(&mut sub, &[0.0; 4], &AdamConfig::default()).unwrap();
        assert_eq!(sub.weights(), before.as_slice());
        assert_eq!(sub.adam().step, 1);
        assert!(matches!(adam_step(&mut sub, &[0.0; 3], &AdamConfig::default()), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut sub = Subtopology::with_weights(single_ident(), vec![1.0, 0.0, 1.0, 0.0]);
        let cfg = AdamConfig::default();
        adam_step(&mut sub, &[1.0, 0.0, 0.0, 0.0], &cfg).unwrap();
        // m_hat = 1, v_hat = 1 at step one.
        let expected = 1.0 - cfg.learning_rate / (1.0 + cfg.epsilon);
        assert!((sub.weights()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_moves_against_sign() {
        let mut sub = Subtopology::with_weights(single_ident(), vec![0.0, 0.0, 1.0, 0.0]);
        for _ in 0..50 {
            adam_step(&mut sub, &[-2.0, 0.0, 0.0, 0.0], &AdamConfig::default()).unwrap();
        }
        assert!(sub.weights()[0] > 0.4);
    }

    #[test]
    fn disabled_weights_stay_zero() {
        let mut sub = Subtopology::with_weights(single_ident(), vec![1.0, 0.0, 1.0, 0.0]);
        sub.disable_param(1);
        adam_step(&mut sub, &[1.0, 1.0, 1.0, 1.0], &AdamConfig::default()).unwrap();
        assert_eq!(sub.weights()[1], 0.0);
    }

    #[test]
    fn zero_steps_is_a_no_op() {
        let data = linear_data(2.0);
        let cs = ConstraintSet::default();
        let td = TrainingData { train: &data, valid: &data, constraints: &cs };
        let mut sub = Subtopology::with_weights(single_ident(), vec![0.3, 0.1, 0.4, 0.0]);
        let before = sub.clone();
        let mut budget = BudgetCounter::new(10);
        let out = train(&mut sub, LossKind::Fit, 0, &td, &mut budget, &TrainSettings::default());
        assert_eq!(out.steps, 0);
        assert_eq!(sub.weights(), before.weights());
        assert_eq!(budget.used, 0);
    }

    #[test]
    fn budget_cap_is_respected() {
        let data = linear_data(2.0);
        let cs = ConstraintSet::default();
        let td = TrainingData { train: &data, valid: &data, constraints: &cs };
        let mut sub = Subtopology::with_weights(single_ident(), vec![0.3, 0.1, 0.4, 0.0]);
        let mut budget = BudgetCounter { used: 95, cap: 100 };
        let out = train(&mut sub, LossKind::Fit, 100, &td, &mut budget, &TrainSettings::default());
        assert_eq!(out.steps, 5);
        assert!(out.exhausted);
        assert_eq!(budget.used, 100);
    }

    #[test]
    fn fits_a_line() {
        let data = linear_data(2.0);
        let cs = ConstraintSet::default();
        let td = TrainingData { train: &data, valid: &data, constraints: &cs };
        let mut sub = Subtopology::with_weights(single_ident(), vec![0.3, 0.1, 0.4, 0.0]);
        let mut budget = BudgetCounter::new(1000);
        train(&mut sub, LossKind::Fit, 500, &td, &mut budget, &TrainSettings::default());
        let rmse = crate::losses::training_loss(&sub, &data, &LossSettings::default()).unwrap();
        assert!(rmse < 1e-2, "rmse {rmse}");
    }

    #[test]
    fn loss_decreases_in_most_seeds() {
        let data = linear_data(2.0);
        let cs = ConstraintSet::default();
        let td = TrainingData { train: &data, valid: &data, constraints: &cs };
        let settings = TrainSettings::default();
        let mut improved = 0;
        for seed in 0..40 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let mut sub = Subtopology::with_weights(single_ident(), w);
            let before = crate::losses::training_loss(&sub, &data, &settings.loss).unwrap();
            let mut budget = BudgetCounter::new(100);
            train(&mut sub, LossKind::Fit, 100, &td, &mut budget, &settings);
            let after = crate::losses::training_loss(&sub, &data, &settings.loss).unwrap();
            if after < before {
                improved += 1;
            }
        }
        assert!(improved as f64 >= 0.95 * 40.0, "{improved}/40");
    }

    #[test]
    fn regularized_batch_prunes() {
        let data = linear_data(2.0);
        let cs = ConstraintSet::default();
        let td = TrainingData { train: &data, valid: &data, constraints: &cs };
        let mut sub = Subtopology::with_weights(single_ident(), vec![1.0, 0.001, 2.0, 0.0]);
        let mut budget = BudgetCounter::new(10);
        let settings = TrainSettings { adam: AdamConfig { learning_rate: 1e-6, ..Default::default() }, ..Default::default() };
        let out = train(&mut sub, LossKind::Regularized, 1, &td, &mut budget, &settings);
        assert!(out.pruned >= 2);
        assert!(sub.disabled_are_zero());
    }
}
