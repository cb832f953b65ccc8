//! Archives of non-dominated subtopologies and the final model choice.

use std::cmp::Ordering;

use super::pareto::dominates;
use super::FitnessVector;
use crate::stats::median;
use crate::topology::Subtopology;

/// Non-dominated set under the memory objectives.
#[derive(Debug, Clone, Default)]
pub struct Archive {
    members: Vec<Subtopology>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_population(pop: &[Subtopology]) -> Self {
        let mut a = Self::new();
        a.update(pop);
        a
    }

    pub fn members(&self) -> &[Subtopology] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn fitness(&self) -> Vec<FitnessVector> {
        self.members.iter().map(|s| *fit(s)).collect()
    }

    pub fn update(&mut self, pop: &[Subtopology]) {
        update_archive(self, pop);
    }

    pub fn into_members(self) -> Vec<Subtopology> {
        self.members
    }
}

fn fit(s: &Subtopology) -> &FitnessVector {
    s.fitness().expect("archived subtopologies carry fitness")
}

/// Lower (links, units) is simpler.
fn simpler(a: &FitnessVector, b: &FitnessVector) -> bool {
    (a.n_active_links, a.n_active_units) < (b.n_active_links, b.n_active_units)
}

/// Replaces `archive` with the non-dominated subset of `archive ∪ pop`.
/// Members tied on every objective keep the simpler one, else the earlier.
pub fn update_archive(archive: &mut Archive, pop: &[Subtopology]) {
    for cand in pop {
        let f = fit(cand);
        let obj = f.mem_objectives();
        let mut absorbed = false;
        for m in archive.members.iter_mut() {
            let mo = fit(m).mem_objectives();
            if dominates(&mo, &obj) {
                absorbed = true;
                break;
            }
            if mo == obj {
                if simpler(f, fit(m)) {
                    *m = cand.clone();
                }
                absorbed = true;
                break;
            }
        }
        if absorbed {
            continue;
        }
        archive.members.retain(|m| !dominates(&obj, &fit(m).mem_objectives()));
        archive.members.push(cand.clone());
    }
}

/// Least complex archive member with validation and constraint RMSE at or
/// below the archive medians; falls back to the best validation RMSE.
pub fn select_final(archive: &[Subtopology]) -> Option<&Subtopology> {
    if archive.is_empty() {
        return None;
    }
    let fits: Vec<&FitnessVector> = archive.iter().map(fit).collect();
    let med_valid = median(&fits.iter().map(|f| f.rmse_valid).collect::<Vec<_>>());
    let med_cons = median(&fits.iter().map(|f| f.rmse_constraint).collect::<Vec<_>>());
    let key = |f: &FitnessVector| (f.n_active_links, f.n_active_units);
    let by_complexity = |a: &&FitnessVector, b: &&FitnessVector| {
        key(a).cmp(&key(b)).then(a.rmse_valid.partial_cmp(&b.rmse_valid).unwrap_or(Ordering::Equal))
    };
    let eligible = (0..archive.len())
        .filter(|&i| fits[i].rmse_valid <= med_valid && fits[i].rmse_constraint <= med_cons)
        .min_by(|&i, &j| by_complexity(&fits[i], &fits[j]).then(i.cmp(&j)));
    let pick = eligible.unwrap_or_else(|| {
        (0..archive.len())
            .min_by(|&i, &j| {
                fits[i].rmse_valid.partial_cmp(&fits[j].rmse_valid).unwrap_or(Ordering::Equal).then(i.cmp(&j))
            })
            .expect("non-empty archive")
    });
    Some(&archive[pick])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{MasterTopology, TopologySpec};
    use std::sync::Arc;

    fn member(rmse: f64, sing: f64, cons: f64, links: usize) -> Subtopology {
        let spec = TopologySpec::parse_layers(1, "ident").unwrap();
        let master = Arc::new(MasterTopology::build(spec).unwrap());
        let mut s = Subtopology::empty(master);
        s.set_fitness(FitnessVector {
            rmse_valid: rmse,
            rmse_constraint: cons,
            loss_singularity: sing,
            n_active_units: 1,
            n_active_links: links,
        });
        s
    }

    fn objs(a: &Archive) -> Vec<(f64, f64, usize)> {
        a.fitness().iter().map(|f| (f.rmse_valid, f.rmse_constraint, f.n_active_links)).collect()
    }

    #[test]
    fn dominated_population_leaves_archive_unchanged() {
        let mut a = Archive::from_population(&[member(1.0, 0.0, 1.0, 3)]);
        a.update(&[member(2.0, 0.0, 2.0, 1), member(1.0, 0.1, 1.0, 1)]);
        assert_eq!(objs(&a), vec![(1.0, 1.0, 3)]);
    }

    #[test]
    fn dominating_member_collapses_archive() {
        let mut a = Archive::from_population(&[member(2.0, 0.0, 1.0, 3), member(1.0, 0.0, 2.0, 3)]);
        a.update(&[member(0.5, 0.0, 0.5, 9), member(0.1, 0.0, 3.0, 9)]);
        assert_eq!(objs(&a), vec![(0.5, 0.5, 9), (0.1, 3.0, 9)]);
    }

    #[test]
    fn ties_prefer_simpler() {
        let mut a = Archive::from_population(&[member(1.0, 0.0, 1.0, 8)]);
        a.update(&[member(1.0, 0.0, 1.0, 4)]);
        a.update(&[member(1.0, 0.0, 1.0, 6)]);
        assert_eq!(objs(&a), vec![(1.0, 1.0, 4)]);
    }

    #[test]
    fn final_selection_examples() {
        let archive = vec![member(0.1, 0.0, 0.1, 20), member(0.2, 0.0, 0.2, 5), member(0.3, 0.0, 0.3, 4)];
        let best = select_final(&archive).unwrap();
        assert_eq!(best.fitness().unwrap().n_active_links, 5);

        let single = vec![member(0.4, 0.0, 0.4, 7)];
        assert_eq!(select_final(&single).unwrap().fitness().unwrap().n_active_links, 7);

        let same = vec![member(0.1, 0.0, 0.1, 9), member(0.1, 0.0, 0.1, 3), member(0.1, 0.0, 0.1, 6)];
        assert_eq!(select_final(&same).unwrap().fitness().unwrap().n_active_links, 3);
        assert!(select_final(&[]).is_none());
    }
}
