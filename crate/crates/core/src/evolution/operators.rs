//! Crossover, mutation, perturbation and newborn breeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::memory::WeightMemory;
use super::pareto::{rank_and_crowding, truncate_indices};
use super::{evaluate_fitness, EvolutionConfig, FitnessVector};
use crate::error::{Error, Result};
use crate::losses::{LossKind, TrainingData};
use crate::optimizer::{train, BudgetCounter, TrainSettings};
use crate::topology::{Subtopology, UnitAddr, UnitSpec, WeightSource};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossoverParams {
    pub p_lead: f64,
    pub p_inherit: f64,
    pub p_memory: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationKind {
    Status,
    Weights,
}

/// Fills a unit from memory with probability `p_memory`, otherwise (or when
/// the unit's list is empty) with fresh random values.
fn fill_unit<R: Rng + ?Sized>(
    child: &mut Subtopology,
    addr: UnitAddr,
    memory: &WeightMemory,
    p_memory: f64,
    rng: &mut R,
) -> Result<()> {
    let master = child.master().clone();
    let id = master.unit_id(addr).ok_or(Error::UnitOutOfRange(addr))?;
    let use_memory = rng.gen::<f64>() < p_memory;
    let record = if use_memory { memory.draw(id, rng).map(|r| r.values.clone()) } else { None };
    match master.unit(addr).ok_or(Error::UnitOutOfRange(addr))? {
        UnitSpec::Learnable { .. } => match record {
            Some(values) => child.set_unit_state(addr, true, WeightSource::Memory(&values), rng),
            None => child.set_unit_state(addr, true, WeightSource::Random, rng),
        },
        UnitSpec::Copy { skip, .. } => {
            let on = match record {
                Some(values) => values.first().copied().unwrap_or(0.0) != 0.0,
                None => rng.gen::<bool>(),
            };
            child.set_skip(*skip, on);
            Ok(())
        }
    }
}

/// Builds a child unit by unit: a lead parent is drawn per unit, its unit is
/// inherited when active (with probability `p_inherit`), otherwise weights
/// come from memory or are drawn at random.
pub fn crossover<R: Rng + ?Sized>(
    s1: &Subtopology,
    s2: &Subtopology,
    memory: &WeightMemory,
    params: &CrossoverParams,
    rng: &mut R,
) -> Result<Subtopology> {
    if s1.master().digest() != s2.master().digest() {
        return Err(Error::MasterMismatch);
    }
    let master = s1.master().clone();
    let act1 = s1.activity();
    let act2 = s2.activity();
    let mut child = Subtopology::empty(master.clone());
    for (id, &addr) in master.unit_addrs().iter().enumerate() {
        let (lead, act) = if rng.gen::<f64>() < params.p_lead { (s1, &act1) } else { (s2, &act2) };
        if rng.gen::<f64>() < params.p_inherit && act.active_units[id] {
            match master.unit(addr).expect("valid address") {
                UnitSpec::Learnable { .. } => {
                    let w = lead.unit_weights(addr).expect("learnable").to_vec();
                    let e = lead.unit_enable_mask(addr).expect("learnable").to_vec();
                    child.set_unit_weights(addr, &w, &e)?;
                }
                UnitSpec::Copy { skip, .. } => child.set_skip(*skip, lead.skips()[*skip]),
            }
        } else {
            fill_unit(&mut child, addr, memory, params.p_memory, rng)?;
        }
    }
    child.reset_optimizer();
    Ok(child)
}

/// Status mutation flips one hidden learnable unit; weights mutation
/// re-draws the weights of one active learnable unit.
pub fn mutate<R: Rng + ?Sized>(
    sub: &mut Subtopology,
    memory: &WeightMemory,
    kind: MutationKind,
    p_memory: f64,
    rng: &mut R,
) -> Result<()> {
    let master = sub.master().clone();
    match kind {
        MutationKind::Status => {
            let units: Vec<UnitAddr> = master.hidden_learnable_addrs().collect();
            if units.is_empty() {
                return Err(Error::NoActiveUnit);
            }
            let addr = units[rng.gen_range(0..units.len())];
            if sub.unit_enabled(addr) {
                sub.set_unit_state(addr, false, WeightSource::Zero, rng)
            } else {
                fill_unit(sub, addr, memory, p_memory, rng)
            }
        }
        MutationKind::Weights => {
            let activity = sub.activity();
            let units: Vec<UnitAddr> = master
                .learnable_addrs()
                .filter(|&a| activity.is_unit_active(&master, a))
                .collect();
            if units.is_empty() {
                return Err(Error::NoActiveUnit);
            }
            let addr = units[rng.gen_range(0..units.len())];
            fill_unit(sub, addr, memory, p_memory, rng)
        }
    }
}

/// Enables every learnable unit with memory or random weights, sets every
/// skip bit and clears the optimizer state.
pub fn perturb_structure<R: Rng + ?Sized>(
    sub: &mut Subtopology,
    memory: &WeightMemory,
    p_memory: f64,
    rng: &mut R,
) -> Result<()> {
    let master = sub.master().clone();
    for addr in master.learnable_addrs() {
        fill_unit(sub, addr, memory, p_memory, rng)?;
    }
    for skip in 0..master.n_skips() {
        sub.set_skip(skip, true);
    }
    sub.reset_optimizer();
    Ok(())
}

/// [`perturb_structure`] followed by `steps` steps of the fit loss.
#[allow(clippy::too_many_arguments)]
pub fn perturb<R: Rng + ?Sized>(
    sub: &mut Subtopology,
    memory: &WeightMemory,
    p_memory: f64,
    steps: u64,
    data: &TrainingData<'_>,
    budget: &mut BudgetCounter,
    settings: &TrainSettings,
    rng: &mut R,
) -> Result<u64> {
    perturb_structure(sub, memory, p_memory, rng)?;
    Ok(train(sub, LossKind::Fit, steps, data, budget, settings).steps)
}

/// Trains every member for `steps` steps. Budget is reserved in member
/// order before the parallel section, so the outcome does not depend on
/// scheduling. Returns the number of steps taken.
pub fn train_population(
    pop: &mut [Subtopology],
    kind: LossKind,
    steps: u64,
    data: &TrainingData<'_>,
    budget: &mut BudgetCounter,
    settings: &TrainSettings,
) -> u64 {
    let grants: Vec<u64> = pop.iter().map(|_| budget.reserve(steps)).collect();
    let taken: Vec<u64> = pop
        .par_iter_mut()
        .zip(grants.par_iter())
        .map(|(sub, &grant)| {
            let mut local = BudgetCounter::new(grant);
            train(sub, kind, grant, data, &mut local, settings);
            local.used
        })
        .collect();
    let mut total = 0;
    for (grant, used) in grants.iter().zip(&taken) {
        budget.refund(grant - used);
        total += used;
    }
    total
}

/// Computes and stores the fitness of every member lacking one.
pub fn evaluate_population(pop: &mut [Subtopology], data: &TrainingData<'_>, settings: &TrainSettings) -> Result<()> {
    pop.par_iter_mut().try_for_each(|sub| {
        if sub.fitness().is_none() {
            let f = evaluate_fitness(sub, data, &settings.loss)?;
            sub.set_fitness(f);
        }
        Ok(())
    })
}

fn objectives(pop: &[Subtopology]) -> Vec<[f64; 3]> {
    pop.iter()
        .map(|s| s.fitness().map(FitnessVector::pop_objectives).expect("evaluated population"))
        .collect()
}

fn tournament<R: Rng + ?Sized>(rank: &[usize], crowd: &[f64], rng: &mut R) -> usize {
    let a = rng.gen_range(0..rank.len());
    let b = rng.gen_range(0..rank.len());
    let better = |i: usize, j: usize| rank[i] < rank[j] || (rank[i] == rank[j] && crowd[i] > crowd[j]);
    if better(b, a) {
        b
    } else {
        a
    }
}

/// Creates `config.offspring` newborns by tournament selection, crossover and
/// mutation, trains each for `newborn_steps` steps of the fit loss, and keeps
/// the best `pop_size` by non-dominated sorting.
pub fn breed_intermediate_population<R: Rng + ?Sized>(
    pop: &mut [Subtopology],
    memory: &WeightMemory,
    config: &EvolutionConfig,
    data: &TrainingData<'_>,
    budget: &mut BudgetCounter,
    rng: &mut R,
) -> Result<Vec<Subtopology>> {
    if pop.len() < 2 {
        return Err(Error::Config("breeding needs at least two parents".into()));
    }
    evaluate_population(pop, data, &config.train)?;
    let (rank, crowd) = rank_and_crowding(&objectives(pop));
    let params = config.crossover_params();
    let seeds: Vec<u64> = (0..config.offspring).map(|_| rng.gen()).collect();
    let mut offspring = seeds
        .iter()
        .map(|&seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let p1 = tournament(&rank, &crowd, &mut r);
            let p2 = tournament(&rank, &crowd, &mut r);
            let mut child = if r.gen::<f64>() < config.p_crossover {
                crossover(&pop[p1], &pop[p2], memory, &params, &mut r)?
            } else {
                pop[p1].clone()
            };
            if r.gen::<f64>() < config.p_mutation {
                mutate(&mut child, memory, MutationKind::Status, config.p_memory, &mut r)?;
            }
            if r.gen::<f64>() < config.p_mutation {
                match mutate(&mut child, memory, MutationKind::Weights, config.p_memory, &mut r) {
                    Ok(()) | Err(Error::NoActiveUnit) => {}
                    Err(e) => return Err(e),
                }
            }
            child.invalidate_fitness();
            Ok(child)
        })
        .collect::<Result<Vec<_>>>()?;
    train_population(&mut offspring, LossKind::Fit, config.newborn_steps, data, budget, &config.train);
    evaluate_population(&mut offspring, data, &config.train)?;
    let keep = truncate_indices(&objectives(&offspring), config.pop_size);
    let mut slots: Vec<Option<Subtopology>> = offspring.into_iter().map(Some).collect();
    Ok(keep.into_iter().map(|i| slots[i].take().expect("distinct indices")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::memory::MemoryRecord;
    use crate::topology::{MasterTopology, TopologySpec};
    use std::sync::Arc;

    fn master() -> Arc<MasterTopology> {
        Arc::new(MasterTopology::build(TopologySpec::master_a(2)).unwrap())
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn full_inheritance_clones_the_lead() {
        let m = master();
        let s1 = Subtopology::init(m.clone(), &mut rng(1));
        let s2 = Subtopology::init(m.clone(), &mut rng(2));
        let mem = WeightMemory::new(&m, 10);
        let p = CrossoverParams { p_lead: 1.0, p_inherit: 1.0, p_memory: 0.5 };
        let child = crossover(&s1, &s2, &mem, &p, &mut rng(3)).unwrap();
        assert_eq!(child.weights(), s1.weights());
        assert_eq!(child.skips(), s1.skips());
    }

    #[test]
    fn memory_only_child() {
        let m = master();
        let mut mem = WeightMemory::new(&m, 10);
        for (id, &addr) in m.unit_addrs().iter().enumerate() {
            let values = match m.unit(addr).unwrap() {
                UnitSpec::Learnable { .. } => vec![0.25; m.unit_params(addr).unwrap().len()],
                UnitSpec::Copy { .. } => vec![1.0],
            };
            mem.push(id, MemoryRecord { unit: addr, values, donor: [0.0; 3] });
        }
        let s = Subtopology::init(m.clone(), &mut rng(1));
        let p = CrossoverParams { p_lead: 0.5, p_inherit: 0.0, p_memory: 1.0 };
        let child = crossover(&s, &s, &mem, &p, &mut rng(4)).unwrap();
        assert!(child.weights().iter().all(|&w| w == 0.25));
        assert!(child.skips().iter().all(|&b| b));
    }

    #[test]
    fn empty_memory_falls_back_to_random() {
        let m = master();
        let mem = WeightMemory::new(&m, 10);
        let s = Subtopology::empty(m.clone());
        let p = CrossoverParams { p_lead: 0.5, p_inherit: 0.8, p_memory: 0.5 };
        let child = crossover(&s, &s, &mem, &p, &mut rng(5)).unwrap();
        assert!(child.weights().iter().all(|w| w.abs() <= 0.5));
        assert!(child.weights().iter().filter(|&&w| w != 0.0).count() > m.n_params() / 2);
        assert_eq!(child.adam().step, 0);
    }

    #[test]
    fn crossover_rejects_different_masters() {
        let a = Subtopology::init(master(), &mut rng(1));
        let other = Arc::new(MasterTopology::build(TopologySpec::master_b(2)).unwrap());
        let b = Subtopology::init(other, &mut rng(1));
        let mem = WeightMemory::new(a.master(), 10);
        let p = CrossoverParams { p_lead: 0.5, p_inherit: 0.8, p_memory: 0.5 };
        assert!(matches!(crossover(&a, &b, &mem, &p, &mut rng(0)), Err(Error::MasterMismatch)));
    }

    #[test]
    fn status_mutation_disables_one_unit() {
        let m = master();
        let mut s = Subtopology::init(m.clone(), &mut rng(1));
        let mem = WeightMemory::new(&m, 10);
        mutate(&mut s, &mem, MutationKind::Status, 0.5, &mut rng(2)).unwrap();
        let disabled: Vec<_> = m.learnable_addrs().filter(|&a| !s.unit_enabled(a)).collect();
        assert_eq!(disabled.len(), 1);
        assert!(s.unit_weights(disabled[0]).unwrap().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn double_status_flip_restores_mask() {
        let m = master();
        let s0 = Subtopology::init(m.clone(), &mut rng(1));
        let mem = WeightMemory::new(&m, 10);
        let mut s = s0.clone();
        mutate(&mut s, &mem, MutationKind::Status, 0.0, &mut rng(9)).unwrap();
        mutate(&mut s, &mem, MutationKind::Status, 0.0, &mut rng(9)).unwrap();
        assert_eq!(s.enabled(), s0.enabled());
        assert_ne!(s.weights(), s0.weights());
    }

    #[test]
    fn weights_mutation_uses_memory() {
        let spec = TopologySpec::parse_layers(1, "ident").unwrap();
        let m = Arc::new(MasterTopology::build(spec).unwrap());
        let mut mem = WeightMemory::new(&m, 10);
        let out = m.output_addr();
        let ident = UnitAddr::new(0, 0);
        mem.push(0, MemoryRecord { unit: ident, values: vec![0.3, 0.1], donor: [0.0; 3] });
        mem.push(1, MemoryRecord { unit: out, values: vec![0.3, 0.1], donor: [0.0; 3] });
        let mut s = Subtopology::with_weights(m.clone(), vec![1.0, 0.0, 1.0, 0.0]);
        mutate(&mut s, &mem, MutationKind::Weights, 1.0, &mut rng(0)).unwrap();
        let changed = [ident, out].iter().filter(|&&a| s.unit_weights(a).unwrap() == [0.3, 0.1]).count();
        assert_eq!(changed, 1);
    }

    #[test]
    fn weights_mutation_needs_an_active_unit() {
        let m = master();
        let mut s = Subtopology::empty(m.clone());
        let mem = WeightMemory::new(&m, 10);
        assert!(matches!(
            mutate(&mut s, &mem, MutationKind::Weights, 0.5, &mut rng(0)),
            Err(Error::NoActiveUnit)
        ));
    }

    #[test]
    fn perturbation_enables_everything() {
        let m = master();
        let mut s = Subtopology::empty(m.clone());
        let mem = WeightMemory::new(&m, 10);
        perturb_structure(&mut s, &mem, 0.5, &mut rng(0)).unwrap();
        assert!(m.learnable_addrs().all(|a| s.unit_enabled(a)));
        assert!(s.skips().iter().all(|&b| b));
    }

    #[test]
    fn perturbation_with_exhausted_budget_takes_no_steps() {
        use crate::problems::{generate_problem, ProblemName};
        let p = generate_problem(ProblemName::Resistors, 0).unwrap();
        let m = master();
        let mut s = Subtopology::empty(m.clone());
        let mem = WeightMemory::new(&m, 10);
        let mut budget = BudgetCounter::new(0);
        let steps = perturb(&mut s, &mem, 0.5, 100, &p.training_data(), &mut budget, &TrainSettings::default(), &mut rng(0))
            .unwrap();
        assert_eq!(steps, 0);
        assert!(m.learnable_addrs().all(|a| s.unit_enabled(a)));
    }
}
