//! Nested-loop reference evaluation of a rule set.

use crate::error::Result;
use crate::model::Relation;
use crate::rules::RuleSet;
use crate::similarity::{eval_predicate, MeasureRegistry};

/// Every pair `(t, s)` with `t != s` (and `t < s` when `symmetric`) that
/// satisfies some rule, with the first satisfied rule in `order` as witness.
/// Sorted.
pub fn nested_loop(
    rel: &Relation,
    rs: &RuleSet,
    reg: &MeasureRegistry,
    order: &[&str],
    symmetric: bool,
) -> Result<Vec<(usize, usize, String)>> {
    let rules: Vec<_> = order
        .iter()
        .filter_map(|id| rs.rules().iter().find(|r| r.rule_id == *id))
        .collect();
    let mut out = Vec::new();
    for t in 0..rel.len() {
        for s in 0..rel.len() {
            if t == s || (symmetric && s < t) {
                continue;
            }
            for r in &rules {
                let mut ok = true;
                for p in &r.precondition {
                    if !eval_predicate(p, rel.tuple(t), rel.tuple(s), rel.schema(), reg)? {
                        ok = false;
                        break;
                    }
                }
                if ok {
                    out.push((t, s, r.rule_id.clone()));
                    break;
                }
            }
        }
    }
    out.sort();
    Ok(out)
}
