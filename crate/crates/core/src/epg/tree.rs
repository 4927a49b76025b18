//! Execution tree: a trie over rule preconditions, each sorted by predicate
//! rank, so rules sharing a leading run of predicates share tree nodes.
//!
//! Every rule ends in its own leaf, reached from the node after its last
//! predicate through a checkpoint edge. Two rules with the same precondition
//! therefore get two leaves under one node.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::rules::RuleSet;

use super::order::PredicateOrdering;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeLabel {
    /// Universe index of the predicate checked along this edge.
    Predicate(usize),
    /// Rule index whose precondition is complete at the parent node.
    Checkpoint(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeEdge {
    pub parent: usize,
    pub child: usize,
    pub label: EdgeLabel,
    pub score: f64,
    /// Rules whose root-to-leaf path uses this edge.
    pub cover: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TreeNode {
    /// Outgoing edges in insertion order.
    pub children: Vec<usize>,
    pub parent_edge: Option<usize>,
    pub leaf_rule: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionTree {
    pub nodes: Vec<TreeNode>,
    pub edges: Vec<TreeEdge>,
    pub universe: Vec<crate::rules::Predicate>,
    pub rule_ids: Vec<String>,
    /// Per rule, universe indices in tree order.
    pub rule_predicates: Vec<Vec<usize>>,
    /// Per rule witness probability; empty until scored.
    pub wp: Vec<f64>,
}

pub const ROOT: usize = 0;

impl ExecutionTree {
    pub fn leaves(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&n| self.nodes[n].leaf_rule.is_some()).collect()
    }

    pub fn is_scored(&self) -> bool {
        self.wp.len() == self.rule_ids.len()
    }

    /// Outgoing edges of `node` in visiting order: descending score, a
    /// checkpoint before a predicate edge of equal score, then insertion order.
    pub fn ordered_children(&self, node: usize) -> Vec<usize> {
        let mut ch = self.nodes[node].children.clone();
        ch.sort_by(|&a, &b| {
            let (ea, eb) = (&self.edges[a], &self.edges[b]);
            eb.score
                .total_cmp(&ea.score)
                .then_with(|| is_predicate(ea).cmp(&is_predicate(eb)))
        });
        ch
    }

    /// Edges leaving the root in visiting order.
    pub fn root_edges(&self) -> Vec<usize> {
        self.ordered_children(ROOT)
    }

    /// Predicates (universe indices) on the root-to-leaf path of `rule`.
    pub fn rule_path(&self, rule: usize) -> Vec<usize> {
        let Some(leaf) = self.nodes.iter().position(|n| n.leaf_rule == Some(rule)) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        let mut cur = leaf;
        while let Some(e) = self.nodes[cur].parent_edge {
            if let EdgeLabel::Predicate(p) = self.edges[e].label {
                out.push(p);
            }
            cur = self.edges[e].parent;
        }
        out.reverse();
        out
    }

    /// Structured text of nodes and scored edges, depth-first in visiting
    /// order.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        self.dump_node(ROOT, 0, &mut out);
        out
    }

    fn dump_node(&self, node: usize, depth: usize, out: &mut String) {
        for e in self.ordered_children(node) {
            let edge = &self.edges[e];
            let pad = "  ".repeat(depth);
            let cover: Vec<&str> = edge.cover.iter().map(|&r| self.rule_ids[r].as_str()).collect();
            match edge.label {
                EdgeLabel::Predicate(p) => {
                    let _ = writeln!(
                        out,
                        "{pad}N{} -> N{}  [{}]  score={:.6}  cover={}",
                        edge.parent,
                        edge.child,
                        self.universe[p],
                        edge.score,
                        cover.join(",")
                    );
                }
                EdgeLabel::Checkpoint(r) => {
                    let _ = writeln!(
                        out,
                        "{pad}N{} -> N{}  checkpoint {}  score={:.6}",
                        edge.parent, edge.child, self.rule_ids[r], edge.score
                    );
                }
            }
            self.dump_node(edge.child, depth + 1, out);
        }
    }
}

fn is_predicate(e: &TreeEdge) -> bool {
    matches!(e.label, EdgeLabel::Predicate(_))
}

/// Inserts the rules one by one, each with its predicates sorted by rank in
/// `ordering`, merging common prefixes.
pub fn build_tree(rs: &RuleSet, ordering: &PredicateOrdering) -> Result<ExecutionTree> {
    let universe = ordering.universe();
    let mut tree = ExecutionTree {
        nodes: vec![TreeNode::default()],
        edges: Vec::new(),
        universe: universe.clone(),
        rule_ids: rs.rule_ids(),
        rule_predicates: Vec::with_capacity(rs.len()),
        wp: Vec::new(),
    };
    for (ri, rule) in rs.rules().iter().enumerate() {
        let mut preds = Vec::with_capacity(rule.precondition.len());
        for p in &rule.precondition {
            let idx = universe
                .iter()
                .position(|u| u == p)
                .ok_or_else(|| Error::Config(format!("predicate {p} of rule `{}` is not in the ordering", rule.rule_id)))?;
            preds.push(idx);
        }
        preds.sort_by_key(|&i| ordering.rank_of(i));
        let mut cur = ROOT;
        for &p in &preds {
            let existing = tree.nodes[cur]
                .children
                .iter()
                .copied()
                .find(|&e| tree.edges[e].label == EdgeLabel::Predicate(p));
            let e = match existing {
                Some(e) => e,
                None => add_edge(&mut tree, cur, EdgeLabel::Predicate(p)),
            };
            tree.edges[e].cover.push(ri);
            cur = tree.edges[e].child;
        }
        let leaf_edge = add_edge(&mut tree, cur, EdgeLabel::Checkpoint(ri));
        tree.edges[leaf_edge].cover.push(ri);
        let leaf = tree.edges[leaf_edge].child;
        tree.nodes[leaf].leaf_rule = Some(ri);
        tree.rule_predicates.push(preds);
    }
    Ok(tree)
}

fn add_edge(tree: &mut ExecutionTree, parent: usize, label: EdgeLabel) -> usize {
    let child = tree.nodes.len();
    let e = tree.edges.len();
    tree.nodes.push(TreeNode {
        children: Vec::new(),
        parent_edge: Some(e),
        leaf_rule: None,
    });
    tree.edges.push(TreeEdge {
        parent,
        child,
        label,
        score: 0.0,
        cover: Vec::new(),
    });
    tree.nodes[parent].children.push(e);
    e
}

/// `wp(φ) = Π sp(p)` over the rule's predicates (independence assumption).
pub fn witness_probabilities(tree: &ExecutionTree, sps: &[f64]) -> Result<Vec<f64>> {
    if sps.len() != tree.universe.len() {
        return Err(Error::Config(format!(
            "{} selectivities for a universe of {}",
            sps.len(),
            tree.universe.len()
        )));
    }
    Ok(tree
        .rule_predicates
        .iter()
        .map(|ps| ps.iter().map(|&p| sps[p]).product())
        .collect())
}

/// Scores every edge with the largest `wp` among the rules it covers.
pub fn score_tree(tree: &ExecutionTree, sps: &[f64]) -> Result<ExecutionTree> {
    let wp = witness_probabilities(tree, sps)?;
    score_tree_with_wp(tree, wp)
}

/// Scores with externally estimated witness probabilities, e.g. measured on
/// labeled historical pairs.
pub fn score_tree_with_wp(tree: &ExecutionTree, wp: Vec<f64>) -> Result<ExecutionTree> {
    if wp.len() != tree.rule_ids.len() {
        return Err(Error::Config(format!("{} wp values for {} rules", wp.len(), tree.rule_ids.len())));
    }
    let mut out = tree.clone();
    for e in &mut out.edges {
        e.score = e.cover.iter().map(|&r| wp[r]).fold(f64::NEG_INFINITY, f64::max);
    }
    out.wp = wp;
    Ok(out)
}
