//! The neuro-evolutionary driver: fitness, dominance, weight memory, genetic
//! operators, archives and the staged main loop.

mod archive;
mod memory;
mod operators;
pub mod pareto;
mod run;

use serde::{Deserialize, Serialize};

pub use archive::{select_final, update_archive, Archive};
pub use memory::{memory_candidates, memory_update, MemoryRecord, WeightMemory};
pub use operators::{
    breed_intermediate_population, crossover, evaluate_population, mutate, perturb, perturb_structure,
    train_population, CrossoverParams, MutationKind,
};
pub use pareto::{crowding_distance, dominates, nondominated_sort, truncate_indices};
pub use run::{run_en4sr, GenerationLog, MemberLog, RunResult};

use crate::autodiff::predict;
use crate::error::{Error, Result};
use crate::losses::{constraint_loss, singularity_loss, LossSettings, TrainingData};
use crate::optimizer::{TrainSettings, DEFAULT_BUDGET};
use crate::topology::Subtopology;

/// Objective values substituted for non-finite measurements.
pub const WORST_OBJECTIVE: f64 = 1e12;

/// Performance of one subtopology.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessVector {
    pub rmse_valid: f64,
    /// Constraint loss on the constraint samples (pooled weighted RMS).
    pub rmse_constraint: f64,
    pub loss_singularity: f64,
    pub n_active_units: usize,
    pub n_active_links: usize,
}

impl FitnessVector {
    /// (validation RMSE, constraint RMSE, active links).
    pub fn pop_objectives(&self) -> [f64; 3] {
        [self.rmse_valid, self.rmse_constraint, self.n_active_links as f64]
    }

    /// (validation RMSE, singularity loss, constraint loss).
    pub fn mem_objectives(&self) -> [f64; 3] {
        [self.rmse_valid, self.loss_singularity, self.rmse_constraint]
    }

    pub fn loss_constraint(&self) -> f64 {
        self.rmse_constraint
    }

    /// (active units, active links).
    pub fn complexity(&self) -> (usize, usize) {
        (self.n_active_units, self.n_active_links)
    }
}

fn finite_or_worst(v: f64) -> f64 {
    if v.is_finite() {
        v.min(WORST_OBJECTIVE)
    } else {
        WORST_OBJECTIVE
    }
}

pub fn evaluate_fitness(sub: &Subtopology, data: &TrainingData<'_>, settings: &LossSettings) -> Result<FitnessVector> {
    if data.valid.is_empty() {
        return Err(Error::EmptyDataset("validation"));
    }
    let theta = settings.theta_div;
    let rmse_valid = data.valid.rmse(|x| predict(sub, x, theta));
    let (n_active_units, n_active_links) = sub.activity().complexity();
    Ok(FitnessVector {
        rmse_valid: finite_or_worst(rmse_valid),
        rmse_constraint: finite_or_worst(constraint_loss(sub, data.constraints, settings)),
        loss_singularity: finite_or_worst(singularity_loss(sub, data, settings)),
        n_active_units,
        n_active_links,
    })
}

/// Parameters of the evolutionary loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub pop_size: usize,
    /// Number of stages (R).
    pub stages: usize,
    /// Generations per stage (G_R).
    pub generations: usize,
    /// Newborn training steps (N_n).
    pub newborn_steps: u64,
    /// Tuning steps (N_t).
    pub tuning_steps: u64,
    /// Fine-tuning steps (N_f).
    pub finetune_steps: u64,
    pub budget: u64,
    /// Offspring per generation (lambda).
    pub offspring: usize,
    pub p_crossover: f64,
    pub p_mutation: f64,
    pub p_lead: f64,
    pub p_inherit: f64,
    pub p_memory: f64,
    pub memory_size: usize,
    pub train: TrainSettings,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            pop_size: 10,
            stages: 3,
            generations: 20,
            newborn_steps: 10,
            tuning_steps: 100,
            finetune_steps: 50,
            budget: DEFAULT_BUDGET,
            offspring: 20,
            p_crossover: 0.9,
            p_mutation: 0.3,
            p_lead: 0.5,
            p_inherit: 0.8,
            p_memory: 0.5,
            memory_size: 10,
            train: TrainSettings::default(),
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("p_c", self.p_crossover),
            ("p_m", self.p_mutation),
            ("p_l", self.p_lead),
            ("p_i", self.p_inherit),
            ("p_h", self.p_memory),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.pop_size < 2 {
            return Err(Error::Config("pop_size must be at least 2".into()));
        }
        if self.offspring == 0 {
            return Err(Error::Config("offspring count must be positive".into()));
        }
        if self.memory_size == 0 {
            return Err(Error::Config("s_hist must be positive".into()));
        }
        Ok(())
    }

    pub fn crossover_params(&self) -> CrossoverParams {
        CrossoverParams { p_lead: self.p_lead, p_inherit: self.p_inherit, p_memory: self.p_memory }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{generate_problem, ProblemName};
    use crate::topology::{MasterTopology, TopologySpec};
    use std::sync::Arc;

    #[test]
    fn zero_model_has_no_links() {
        let p = generate_problem(ProblemName::Resistors, 0).unwrap();
        let master = Arc::new(MasterTopology::build(TopologySpec::master_a(2)).unwrap());
        let sub = Subtopology::empty(master);
        let f = evaluate_fitness(&sub, &p.training_data(), &LossSettings::default()).unwrap();
        assert_eq!(f.complexity(), (0, 0));
        assert!(f.rmse_valid > 0.0);
    }

    #[test]
    fn fitness_is_deterministic() {
        use rand::SeedableRng;
        let p = generate_problem(ProblemName::Magic, 0).unwrap();
        let master = Arc::new(MasterTopology::build(TopologySpec::master_b(1)).unwrap());
        let a = Subtopology::init(master.clone(), &mut rand_chacha::ChaCha8Rng::seed_from_u64(4));
        let b = Subtopology::init(master, &mut rand_chacha::ChaCha8Rng::seed_from_u64(4));
        let s = LossSettings::default();
        assert_eq!(
            evaluate_fitness(&a, &p.training_data(), &s).unwrap(),
            evaluate_fitness(&b, &p.training_data(), &s).unwrap()
        );
    }

    #[test]
    fn default_config_is_valid() {
        EvolutionConfig::default().validate().unwrap();
        let bad = EvolutionConfig { p_memory: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
