//! Per-unit memory of z-node weights harvested from elite subtopologies.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::pareto::{dominates, nondominated_sort};
use super::FitnessVector;
use crate::stats::{median, quantile};
use crate::topology::{MasterTopology, Subtopology, UnitAddr, UnitSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub unit: UnitAddr,
    /// Flat z-node values (weights then bias per z-node) of a learnable unit,
    /// or a single 0/1 entry for a copy unit.
    pub values: Vec<f64>,
    /// Memory objectives of the donor subtopology.
    pub donor: [f64; 3],
}

impl MemoryRecord {
    /// The record split into one slice per z-node.
    pub fn znode_tuples<'a>(&'a self, master: &'a MasterTopology) -> Vec<&'a [f64]> {
        match master.unit(self.unit) {
            Some(UnitSpec::Learnable { znodes, .. }) => {
                let width = self.values.len() / znodes.len().max(1);
                self.values.chunks(width.max(1)).collect()
            }
            _ => vec![&self.values[..]],
        }
    }
}

/// One bounded record list per master unit, indexed by unit id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMemory {
    capacity: usize,
    lists: Vec<Vec<MemoryRecord>>,
}

impl WeightMemory {
    pub fn new(master: &MasterTopology, capacity: usize) -> Self {
        Self { capacity, lists: vec![Vec::new(); master.n_units()] }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn records(&self, unit_id: usize) -> &[MemoryRecord] {
        &self.lists[unit_id]
    }

    pub fn lists(&self) -> &[Vec<MemoryRecord>] {
        &self.lists
    }

    pub fn n_records(&self) -> usize {
        self.lists.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.n_records() == 0
    }

    /// Uniformly chosen record of a unit; `None` for an empty list.
    pub fn draw<R: Rng + ?Sized>(&self, unit_id: usize, rng: &mut R) -> Option<&MemoryRecord> {
        let list = &self.lists[unit_id];
        if list.is_empty() {
            None
        } else {
            Some(&list[rng.gen_range(0..list.len())])
        }
    }

    /// Distinct donor objective vectors with at least one stored record.
    pub fn donors(&self) -> Vec<[f64; 3]> {
        let mut out: Vec<[f64; 3]> = Vec::new();
        for r in self.lists.iter().flatten() {
            if !out.contains(&r.donor) {
                out.push(r.donor);
            }
        }
        out
    }

    /// Appends a record unless the unit's list is full.
    pub fn push(&mut self, unit_id: usize, record: MemoryRecord) -> bool {
        let list = &mut self.lists[unit_id];
        if list.len() < self.capacity {
            list.push(record);
            true
        } else {
            false
        }
    }
}

/// Indices (into `members`) of the memory update candidates.
///
/// A: non-dominated under the memory objectives. B: members of A strictly
/// below the median of A in every objective (A when empty). C: members of B
/// whose link count is at most the third quartile of B (B when empty).
pub fn memory_candidates(members: &[FitnessVector]) -> Vec<usize> {
    if members.is_empty() {
        return Vec::new();
    }
    let objs: Vec<[f64; 3]> = members.iter().map(FitnessVector::mem_objectives).collect();
    let a = nondominated_sort(&objs).swap_remove(0);
    let medians: Vec<f64> = (0..3)
        .map(|k| median(&a.iter().map(|&i| objs[i][k]).collect::<Vec<_>>()))
        .collect();
    let mut b: Vec<usize> = a
        .iter()
        .copied()
        .filter(|&i| (0..3).all(|k| objs[i][k] < medians[k]))
        .collect();
    if b.is_empty() {
        b = a;
    }
    let links: Vec<f64> = b.iter().map(|&i| members[i].n_active_links as f64).collect();
    let q3 = quantile(&links, 0.75);
    let c: Vec<usize> = b.iter().copied().filter(|&i| members[i].n_active_links as f64 <= q3).collect();
    if c.is_empty() {
        b
    } else {
        c
    }
}

/// Two-phase memory update from the candidate set `c`.
///
/// First every record whose donor is dominated by a member of `c` is
/// removed. Then each member adds one record per active unit, provided it is
/// not dominated by any donor still represented in the memory and the unit's
/// list has room.
pub fn memory_update(memory: &mut WeightMemory, c: &[&Subtopology]) {
    let fitness: Vec<[f64; 3]> = c
        .iter()
        .map(|s| s.fitness().expect("memory candidates carry fitness").mem_objectives())
        .collect();
    for list in memory.lists.iter_mut() {
        list.retain(|r| !fitness.iter().any(|f| dominates(f, &r.donor)));
    }
    for (sub, donor) in c.iter().zip(&fitness) {
        if memory.donors().iter().any(|d| dominates(d, donor)) {
            continue;
        }
        let master = sub.master().clone();
        let activity = sub.activity();
        for (id, &addr) in master.unit_addrs().iter().enumerate() {
            if !activity.active_units[id] {
                continue;
            }
            let values = match master.unit(addr).expect("valid address") {
                UnitSpec::Learnable { .. } => sub.unit_weights(addr).expect("learnable").to_vec(),
                UnitSpec::Copy { skip, .. } => vec![sub.skip_value(*skip)],
            };
            memory.push(id, MemoryRecord { unit: addr, values, donor: *donor });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::TopologySpec;
    use std::sync::Arc;

    fn fv(obj: [f64; 3], links: usize) -> FitnessVector {
        FitnessVector {
            rmse_valid: obj[0],
            loss_singularity: obj[1],
            rmse_constraint: obj[2],
            n_active_units: 1,
            n_active_links: links,
        }
    }

    #[test]
    fn singleton_falls_back() {
        assert_eq!(memory_candidates(&[fv([1.0, 1.0, 1.0], 3)]), vec![0]);
    }

    #[test]
    fn chain_keeps_the_best() {
        let m: Vec<_> = (1..=4).map(|k| fv([k as f64; 3], 4)).collect();
        assert_eq!(memory_candidates(&m), vec![0]);
    }

    #[test]
    fn ties_filtered_by_third_quartile() {
        let m: Vec<_> = [2, 4, 6, 8, 10].iter().map(|&l| fv([1.0; 3], l)).collect();
        // q3 of {2,4,6,8,10} is 8.
        assert_eq!(memory_candidates(&m), vec![0, 1, 2, 3]);
    }

    fn chain_master() -> Arc<MasterTopology> {
        let spec = TopologySpec::parse_layers(1, "ident").unwrap();
        Arc::new(MasterTopology::build(spec).unwrap())
    }

    fn donor(master: &Arc<MasterTopology>, obj: [f64; 3]) -> Subtopology {
        // x -> ident(w x + b) -> output
        let mut sub = Subtopology::with_weights(master.clone(), vec![1.0, 0.5, 2.0, 0.0]);
        sub.set_fitness(fv(obj, 3));
        sub
    }

    #[test]
    fn records_every_active_unit() {
        let master = chain_master();
        let mut mem = WeightMemory::new(&master, 2);
        let s = donor(&master, [1.0, 0.0, 1.0]);
        memory_update(&mut mem, &[&s]);
        assert_eq!(mem.n_records(), 2);
        assert_eq!(mem.records(0)[0].values, vec![1.0, 0.5]);
    }

    #[test]
    fn dominating_donor_evicts_old_records() {
        let master = chain_master();
        let mut mem = WeightMemory::new(&master, 5);
        memory_update(&mut mem, &[&donor(&master, [2.0, 0.0, 2.0])]);
        memory_update(&mut mem, &[&donor(&master, [3.0, 0.0, 1.0])]);
        assert_eq!(mem.donors().len(), 2);
        memory_update(&mut mem, &[&donor(&master, [1.0, 0.0, 0.5])]);
        assert_eq!(mem.donors(), vec![[1.0, 0.0, 0.5]]);
        assert_eq!(mem.n_records(), 2);
    }

    #[test]
    fn dominated_donor_is_not_inserted() {
        let master = chain_master();
        let mut mem = WeightMemory::new(&master, 5);
        memory_update(&mut mem, &[&donor(&master, [1.0, 0.0, 1.0])]);
        memory_update(&mut mem, &[&donor(&master, [2.0, 0.0, 2.0])]);
        assert_eq!(mem.n_records(), 2);
    }

    #[test]
    fn full_list_rejects_insertion() {
        let master = chain_master();
        let mut mem = WeightMemory::new(&master, 1);
        memory_update(&mut mem, &[&donor(&master, [1.0, 0.0, 2.0])]);
        memory_update(&mut mem, &[&donor(&master, [2.0, 0.0, 1.0])]);
        assert_eq!(mem.n_records(), 2);
        assert!(mem.lists().iter().all(|l| l.len() == 1));
    }
}
