use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rules::Predicate;

#[derive(Debug, Clone, PartialEq)]
pub struct OrderedPredicate {
    /// Position in the predicate universe.
    pub index: usize,
    pub predicate: Predicate,
    pub est_cost: f64,
    pub sp: f64,
    pub cost_effectiveness: f64,
}

/// Predicates ranked for evaluation. Rank 0 is evaluated first within a rule.
#[derive(Debug, Clone, PartialEq)]
pub struct PredicateOrdering {
    entries: Vec<OrderedPredicate>,
    rank: Vec<usize>,
}

impl PredicateOrdering {
    fn from_entries(entries: Vec<OrderedPredicate>) -> Self {
        let mut rank = vec![0; entries.len()];
        for (r, e) in entries.iter().enumerate() {
            rank[e.index] = r;
        }
        PredicateOrdering { entries, rank }
    }

    pub fn entries(&self) -> &[OrderedPredicate] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Rank of the universe predicate at `index`.
    pub fn rank_of(&self, index: usize) -> usize {
        self.rank[index]
    }

    /// The universe in its original (first-appearance) order.
    pub fn universe(&self) -> Vec<Predicate> {
        let mut u: Vec<&OrderedPredicate> = self.entries.iter().collect();
        u.sort_by_key(|e| e.index);
        u.into_iter().map(|e| e.predicate.clone()).collect()
    }

    /// `sp` indexed by universe position.
    pub fn sps(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.entries.len()];
        for e in &self.entries {
            v[e.index] = e.sp;
        }
        v
    }

    pub fn reversed(&self) -> Self {
        let mut e = self.entries.clone();
        e.reverse();
        Self::from_entries(e)
    }

    pub fn shuffled(&self, seed: u64) -> Self {
        let mut e = self.entries.clone();
        e.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Self::from_entries(e)
    }
}

/// Sorts the universe by descending `(1 - sp) / ĉost`; ties go to the cheaper
/// predicate, then to the one appearing first.
pub fn order_predicates(universe: &[Predicate], costs: &[f64], sps: &[f64]) -> Result<PredicateOrdering> {
    if costs.len() != universe.len() || sps.len() != universe.len() {
        return Err(Error::Config(format!(
            "{} predicates but {} costs and {} selectivities",
            universe.len(),
            costs.len(),
            sps.len()
        )));
    }
    let mut entries = Vec::with_capacity(universe.len());
    for (i, p) in universe.iter().enumerate() {
        let (c, sp) = (costs[i], sps[i]);
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Config(format!("cost of {p} must be positive and finite, got {c}")));
        }
        if !(0.0..=1.0).contains(&sp) {
            return Err(Error::Config(format!("sp of {p} must lie in [0, 1], got {sp}")));
        }
        entries.push(OrderedPredicate {
            index: i,
            predicate: p.clone(),
            est_cost: c,
            sp,
            cost_effectiveness: (1.0 - sp) / c,
        });
    }
    entries.sort_by(|a, b| {
        b.cost_effectiveness
            .total_cmp(&a.cost_effectiveness)
            .then(a.est_cost.total_cmp(&b.est_cost))
            .then(a.index.cmp(&b.index))
    });
    Ok(PredicateOrdering::from_entries(entries))
}
