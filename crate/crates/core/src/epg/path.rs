//! Flattening of the scored tree into a jump-based instruction list.
//!
//! Each predicate edge becomes `Eval { slot, fail_jump }`: on success control
//! falls through into the edge's subtree, on failure it jumps past the
//! subtree to the next sibling. A rule's checkpoint edge becomes
//! `Checkpoint { rule }`. Shared predicates map to one slot so their result
//! can be reused within a pair.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::Schema;
use crate::prepared::BoundPredicate;
use crate::similarity::MeasureRegistry;

use super::tree::{EdgeLabel, ExecutionTree, ROOT};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Instruction {
    Eval { slot: usize, fail_jump: usize },
    Checkpoint { rule: usize },
}

#[derive(Debug, Clone)]
pub struct ExecutionPath {
    pub instructions: Vec<Instruction>,
    /// Distinct predicates referenced by the instructions.
    pub slots: Vec<BoundPredicate>,
    /// Universe index of each slot.
    pub slot_universe: Vec<usize>,
    pub rule_ids: Vec<String>,
}

impl ExecutionPath {
    /// `u64` words per bitmap (one bit per slot).
    pub fn bitmap_words(&self) -> usize {
        self.slots.len().div_ceil(64).max(1)
    }

    /// Rule ids in the order their checkpoints appear.
    pub fn checkpoint_order(&self) -> Vec<&str> {
        self.instructions
            .iter()
            .filter_map(|i| match i {
                Instruction::Checkpoint { rule } => Some(self.rule_ids[*rule].as_str()),
                Instruction::Eval { .. } => None,
            })
            .collect()
    }

    /// True when every slot gives the same answer for `(t, s)` and `(s, t)`.
    pub fn is_symmetric(&self) -> bool {
        self.slots.iter().all(BoundPredicate::is_symmetric)
    }

    pub fn rule_index(&self, id: &str) -> Option<usize> {
        self.rule_ids.iter().position(|r| r == id)
    }

    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, ins) in self.instructions.iter().enumerate() {
            let _ = match ins {
                Instruction::Eval { slot, fail_jump } => writeln!(
                    out,
                    "{i:>4}  eval  slot {slot:<3} {:<48} fail -> {fail_jump}",
                    self.slots[*slot].predicate.to_string()
                ),
                Instruction::Checkpoint { rule } => writeln!(out, "{i:>4}  checkpoint {}", self.rule_ids[*rule]),
            };
        }
        out
    }
}

/// Depth-first flattening, children visited in descending edge score.
pub fn compile_path(tree: &ExecutionTree, schema: &Schema, reg: &MeasureRegistry) -> Result<ExecutionPath> {
    if !tree.is_scored() {
        return Err(Error::Config("execution tree must be scored before compilation".into()));
    }
    let mut slot_of = vec![usize::MAX; tree.universe.len()];
    let mut path = ExecutionPath {
        instructions: Vec::with_capacity(tree.edges.len()),
        slots: Vec::new(),
        slot_universe: Vec::new(),
        rule_ids: tree.rule_ids.clone(),
    };
    // Explicit stack: (node, next child position, pending eval to patch).
    let mut stack: Vec<(Vec<usize>, usize, Option<usize>)> = vec![(tree.ordered_children(ROOT), 0, None)];
    while let Some(top) = stack.last_mut() {
        if top.1 == top.0.len() {
            let (_, _, pending) = stack.pop().expect("non-empty stack");
            if let Some(at) = pending {
                let end = path.instructions.len();
                if let Instruction::Eval { fail_jump, .. } = &mut path.instructions[at] {
                    *fail_jump = end;
                }
            }
            continue;
        }
        let edge = &tree.edges[top.0[top.1]];
        top.1 += 1;
        match edge.label {
            EdgeLabel::Checkpoint(rule) => path.instructions.push(Instruction::Checkpoint { rule }),
            EdgeLabel::Predicate(u) => {
                if slot_of[u] == usize::MAX {
                    slot_of[u] = path.slots.len();
                    path.slots.push(BoundPredicate::bind(&tree.universe[u], schema, reg)?);
                    path.slot_universe.push(u);
                }
                let at = path.instructions.len();
                path.instructions.push(Instruction::Eval {
                    slot: slot_of[u],
                    fail_jump: usize::MAX,
                });
                stack.push((tree.ordered_children(edge.child), 0, Some(at)));
            }
        }
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epg::order::order_predicates;
    use crate::epg::tree::{build_tree, score_tree};
    use crate::model::{read_relation, LoadOptions};
    use crate::rules::{parse_ruleset, predicate_universe, MDRule, Predicate, RuleSet};

    fn schema() -> Schema {
        read_relation(include_str!("../../tests/data/products.csv").as_bytes(), &LoadOptions::default())
            .unwrap()
            .schema()
            .clone()
    }

    #[test]
    fn worked_checkpoint_order_and_shared_slot() {
        let reg = MeasureRegistry::new();
        let rs = parse_ruleset(include_str!("../../tests/data/products_rules.json"), &reg).unwrap();
        let u = predicate_universe(&rs);
        let sps = [1.0, 0.3, 0.4, 0.4, 0.2, 0.3];
        let ord = order_predicates(&u, &[0.1, 0.2, 0.1, 1.0, 1.0, 0.5], &sps).unwrap();
        let tree = score_tree(&build_tree(&rs, &ord).unwrap(), &sps).unwrap();
        let path = compile_path(&tree, &schema(), &reg).unwrap();
        assert_eq!(path.checkpoint_order(), vec!["phi2", "phi1", "phi3"]);
        let desc = Predicate::sim("description", "jaccard", 0.5);
        let desc_slots: Vec<usize> = path
            .instructions
            .iter()
            .filter_map(|i| match i {
                Instruction::Eval { slot, .. } if path.slots[*slot].predicate == desc => Some(*slot),
                _ => None,
            })
            .collect();
        assert_eq!(desc_slots.len(), 2);
        assert_eq!(desc_slots[0], desc_slots[1]);
        assert_eq!(path.slots.len(), 6);
    }

    #[test]
    fn chain_exits_on_every_failure() {
        let reg = MeasureRegistry::new();
        let rs = RuleSet::new(vec![MDRule {
            rule_id: "r".into(),
            precondition: vec![Predicate::eq("color"), Predicate::eq("sname"), Predicate::eq("pno")],
        }])
        .unwrap();
        let u = predicate_universe(&rs);
        let ord = order_predicates(&u, &[1.0; 3], &[0.5; 3]).unwrap();
        let tree = score_tree(&build_tree(&rs, &ord).unwrap(), &ord.sps()).unwrap();
        let path = compile_path(&tree, &schema(), &reg).unwrap();
        assert_eq!(path.instructions.len(), 4);
        for ins in &path.instructions[..3] {
            assert!(matches!(ins, Instruction::Eval { fail_jump: 4, .. }));
        }
        assert_eq!(path.instructions[3], Instruction::Checkpoint { rule: 0 });
    }

    #[test]
    fn unscored_tree_is_rejected() {
        let reg = MeasureRegistry::new();
        let rs = parse_ruleset(include_str!("../../tests/data/products_rules.json"), &reg).unwrap();
        let u = predicate_universe(&rs);
        let ord = order_predicates(&u, &[1.0; 6], &[0.5; 6]).unwrap();
        assert!(compile_path(&build_tree(&rs, &ord).unwrap(), &schema(), &reg).is_err());
    }
}
