//! The staged evolutionary main loop.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::archive::{select_final, Archive};
use super::memory::{memory_candidates, memory_update, WeightMemory};
use super::operators::{breed_intermediate_population, evaluate_population, perturb_structure, train_population};
use super::pareto::{nondominated_sort, truncate_indices};
use super::{EvolutionConfig, FitnessVector};
use crate::autodiff::predict;
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::optimizer::BudgetCounter;
use crate::problems::ProblemInstance;
use crate::topology::{MasterTopology, Subtopology};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberLog {
    pub units: usize,
    pub links: usize,
    pub rmse_valid: f64,
    pub rmse_constraint: f64,
    pub rmse_int_ext: f64,
}

/// One log line, written after initialization, after each stage
/// perturbation and after each generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub run_id: usize,
    pub seed: u64,
    /// "init", "perturb" or "generation".
    pub phase: String,
    pub stage: usize,
    pub generation: usize,
    /// Gradient steps taken since the previous record.
    pub steps: u64,
    pub budget_used: u64,
    pub members: Vec<MemberLog>,
    pub stage_best_size: usize,
    pub overall_best_size: usize,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub best: Subtopology,
    pub overall_best: Vec<Subtopology>,
    pub logs: Vec<GenerationLog>,
    pub budget: BudgetCounter,
}

impl RunResult {
    pub fn best_fitness(&self) -> &FitnessVector {
        self.best.fitness().expect("evaluated result")
    }

    /// Sum of the steps recorded in the logs.
    pub fn logged_steps(&self) -> u64 {
        self.logs.iter().map(|l| l.steps).sum()
    }
}

struct Logger<'a> {
    run_id: usize,
    seed: u64,
    problem: &'a ProblemInstance,
    theta_div: f64,
    logs: Vec<GenerationLog>,
    last_used: u64,
}

impl Logger<'_> {
    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        phase: &str,
        stage: usize,
        generation: usize,
        pop: &[Subtopology],
        budget: &BudgetCounter,
        stage_best: usize,
        overall_best: usize,
    ) {
        let members = pop
            .iter()
            .map(|s| {
                let f = s.fitness().expect("evaluated population");
                MemberLog {
                    units: f.n_active_units,
                    links: f.n_active_links,
                    rmse_valid: f.rmse_valid,
                    rmse_constraint: f.rmse_constraint,
                    rmse_int_ext: self.problem.rmse_int_ext(|x| predict(s, x, self.theta_div)),
                }
            })
            .collect();
        self.logs.push(GenerationLog {
            run_id: self.run_id,
            seed: self.seed,
            phase: phase.to_string(),
            stage,
            generation,
            steps: budget.used - self.last_used,
            budget_used: budget.used,
            members,
            stage_best_size: stage_best,
            overall_best_size: overall_best,
        });
        self.last_used = budget.used;
    }
}

fn pop_objectives(pop: &[Subtopology]) -> Vec<[f64; 3]> {
    pop.iter().map(|s| s.fitness().expect("evaluated population").pop_objectives()).collect()
}

fn refresh_memory(memory: &mut WeightMemory, archive: &Archive) {
    let c = memory_candidates(&archive.fitness());
    let donors: Vec<&Subtopology> = c.iter().map(|&i| &archive.members()[i]).collect();
    memory_update(memory, &donors);
}

/// Runs the staged loop on `problem` and returns the selected model along
/// with the final archive and per-generation logs.
pub fn run_en4sr(
    config: &EvolutionConfig,
    problem: &ProblemInstance,
    master: Arc<MasterTopology>,
    run_id: usize,
    seed: u64,
) -> Result<RunResult> {
    config.validate()?;
    if master.input_dim() != problem.input_dim() {
        return Err(Error::InvalidTopology(format!(
            "master reads {} inputs, problem `{}` has {}",
            master.input_dim(),
            problem.name,
            problem.input_dim()
        )));
    }
    let data = problem.training_data();
    let ts = &config.train;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut budget = BudgetCounter::new(config.budget);
    let mut log = Logger { run_id, seed, problem, theta_div: ts.loss.theta_div, logs: Vec::new(), last_used: 0 };

    let mut pop: Vec<Subtopology> =
        (0..config.pop_size).map(|_| Subtopology::init(master.clone(), &mut rng)).collect();
    train_population(&mut pop, LossKind::Fit, config.tuning_steps, &data, &mut budget, ts);
    evaluate_population(&mut pop, &data, ts)?;
    let mut memory = WeightMemory::new(&master, config.memory_size);
    let mut overall_best = Archive::from_population(&pop);
    refresh_memory(&mut memory, &Archive::from_population(&pop));
    log.record("init", 0, 0, &pop, &budget, 0, overall_best.len());

    for stage in 0..config.stages {
        if budget.is_exhausted() {
            break;
        }
        for sub in pop.iter_mut() {
            perturb_structure(sub, &memory, config.p_memory, &mut rng)?;
        }
        train_population(&mut pop, LossKind::Fit, config.tuning_steps, &data, &mut budget, ts);
        evaluate_population(&mut pop, &data, ts)?;
        let mut stage_best = Archive::from_population(&pop);
        log.record("perturb", stage, 0, &pop, &budget, stage_best.len(), overall_best.len());

        for generation in 0..config.generations {
            if budget.is_exhausted() {
                break;
            }
            let mut inter = breed_intermediate_population(&mut pop, &memory, config, &data, &mut budget, &mut rng)?;
            train_population(&mut inter, LossKind::Regularized, config.tuning_steps, &data, &mut budget, ts);
            evaluate_population(&mut inter, &data, ts)?;

            let front: Vec<usize> = nondominated_sort(&pop_objectives(&pop)).swap_remove(0);
            let mut tuned: Vec<Subtopology> = front.iter().map(|&i| pop[i].clone()).collect();
            train_population(&mut tuned, LossKind::Constrained, config.finetune_steps, &data, &mut budget, ts);
            evaluate_population(&mut tuned, &data, ts)?;

            // The untuned originals compete with their fine-tuned copies.
            pop.extend(inter);
            pop.extend(tuned);
            let keep = truncate_indices(&pop_objectives(&pop), config.pop_size);
            let mut slots: Vec<Option<Subtopology>> = pop.into_iter().map(Some).collect();
            pop = keep.into_iter().map(|i| slots[i].take().expect("distinct indices")).collect();

            stage_best.update(&pop);
            refresh_memory(&mut memory, &stage_best);
            log.record("generation", stage, generation, &pop, &budget, stage_best.len(), overall_best.len());
        }
        overall_best.update(stage_best.members());
    }

    let best = select_final(overall_best.members()).ok_or(Error::NoActiveUnit)?.clone();
    Ok(RunResult { best, overall_best: overall_best.into_members(), logs: log.logs, budget })
}
