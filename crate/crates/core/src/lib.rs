//! Neuro-evolutionary symbolic regression.
//!
//! Candidate models are sparse subtopologies of a fixed heterogeneous
//! network template. Weights are trained with Adam against data-fit,
//! singularity, constraint and sparsity losses; topologies evolve with
//! crossover and mutation operators that reuse a memory of z-node weights.

pub mod autodiff;
pub mod error;
pub mod evolution;
pub mod experiment;
pub mod extraction;
pub mod losses;
pub mod optimizer;
pub mod problems;
pub mod stats;
pub mod topology;

pub use error::{Error, Result};
pub use evolution::{EvolutionConfig, FitnessVector, RunResult};
pub use experiment::{execute_experiment, run_experiment, Checkpoint, RunConfig, RunReport};
pub use losses::{LossKind, LossSettings, TrainingData};
pub use optimizer::{AdamConfig, BudgetCounter, TrainSettings};
pub use problems::{generate_problem, generate_problem_with, Dataset, ProblemInstance, ProblemName, ProblemOptions};
pub use topology::{ActivationKind, MasterTopology, Subtopology, TopologySpec, UnitAddr};
pub use extraction::{extract_expression, simplify, Expression};
