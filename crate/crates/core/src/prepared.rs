//! Predicates bound to schema positions, and per-tuple preprocessed operands
//! (trimmed text, folded characters, interned token ids) so the hot loop never
//! re-tokenizes a value.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::{parse_decimal, AttrKind, AttrValue, Relation, Schema};
use crate::rules::{Comparator, Predicate, Rhs};
use crate::similarity::{edit_similarity, prepare_chars, tokenize, Measure, MeasureKind, MeasureRegistry};

#[derive(Debug, Clone)]
pub enum BoundRhs {
    Attr(usize),
    Const(AttrValue),
}

#[derive(Debug, Clone)]
pub enum BoundOp {
    Eq,
    Sim { measure: Measure, threshold: f64 },
}

/// A predicate with attribute names resolved and its measure looked up.
#[derive(Debug, Clone)]
pub struct BoundPredicate {
    pub predicate: Predicate,
    pub lhs: usize,
    pub rhs: BoundRhs,
    pub op: BoundOp,
}

impl BoundPredicate {
    pub fn bind(p: &Predicate, schema: &Schema, reg: &MeasureRegistry) -> Result<Self> {
        let pos = |name: &str| {
            schema
                .position(name)
                .ok_or_else(|| Error::Config(format!("unknown attribute `{name}`")))
        };
        let lhs = pos(&p.lhs_attr)?;
        let rhs = match &p.rhs {
            Rhs::Attr(a) => BoundRhs::Attr(pos(a)?),
            Rhs::Const(c) => BoundRhs::Const(c.clone()),
        };
        let op = match &p.comparator {
            Comparator::Eq => BoundOp::Eq,
            Comparator::Sim { measure, threshold } => BoundOp::Sim {
                measure: reg
                    .get(measure)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("measure `{measure}` is not registered")))?,
                threshold: *threshold,
            },
        };
        Ok(BoundPredicate {
            predicate: p.clone(),
            lhs,
            rhs,
            op,
        })
    }

    /// True when swapping `t` and `s` cannot change the outcome.
    pub fn is_symmetric(&self) -> bool {
        let same_attr = matches!(self.rhs, BoundRhs::Attr(b) if b == self.lhs);
        same_attr
            && match &self.op {
                BoundOp::Eq => true,
                BoundOp::Sim { measure, .. } => measure.symmetric,
            }
    }

    /// Index into the comparator one-hot used by the cost model.
    pub fn comparator_index(&self) -> usize {
        match &self.op {
            BoundOp::Eq => 0,
            BoundOp::Sim { measure, .. } => match measure.kind {
                MeasureKind::Edit => 1,
                MeasureKind::Jaccard => 2,
                MeasureKind::ExactToken => 3,
                MeasureKind::Custom(_) => 4,
            },
        }
    }

    pub fn lhs_kind(&self, schema: &Schema) -> AttrKind {
        schema.attributes()[self.lhs].kind
    }

    pub fn rhs_kind(&self, schema: &Schema) -> Option<AttrKind> {
        match self.rhs {
            BoundRhs::Attr(i) => Some(schema.attributes()[i].kind),
            BoundRhs::Const(_) => None,
        }
    }

    fn repr(&self) -> Repr {
        match &self.op {
            BoundOp::Eq => Repr::Eq,
            BoundOp::Sim { measure, .. } => match measure.kind {
                MeasureKind::Edit => Repr::Chars(measure.case_fold),
                MeasureKind::Jaccard | MeasureKind::ExactToken => Repr::Tokens(measure.case_fold),
                MeasureKind::Custom(_) => Repr::Text(measure.case_fold),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Repr {
    Eq,
    Chars(bool),
    Tokens(bool),
    Text(bool),
}

#[derive(Debug, Clone)]
enum EqCell {
    Missing,
    Number(f64),
    Text { trimmed: Box<str>, parsed: Option<f64> },
}

impl EqCell {
    fn new(v: &AttrValue) -> Self {
        match v {
            AttrValue::Missing => EqCell::Missing,
            AttrValue::Number(n) => EqCell::Number(n.value()),
            AttrValue::Text(s) => EqCell::Text {
                trimmed: s.trim().into(),
                parsed: parse_decimal(s),
            },
        }
    }

    #[inline]
    fn equals(&self, other: &EqCell) -> bool {
        match (self, other) {
            (EqCell::Missing, _) | (_, EqCell::Missing) => false,
            (EqCell::Number(a), EqCell::Number(b)) => a == b,
            (EqCell::Number(a), EqCell::Text { parsed, .. }) | (EqCell::Text { parsed, .. }, EqCell::Number(a)) => {
                *parsed == Some(*a)
            }
            (EqCell::Text { trimmed: a, .. }, EqCell::Text { trimmed: b, .. }) => a == b,
        }
    }
}

#[derive(Debug, Clone)]
enum Column {
    Eq(Vec<EqCell>),
    Chars(Vec<Option<Box<[char]>>>),
    Tokens(Vec<Option<Box<[u32]>>>),
    Text(Vec<Option<Box<str>>>),
}

#[derive(Debug, Clone)]
enum Operand {
    Column(usize),
    Const(usize),
}

#[derive(Debug, Clone)]
enum Kernel {
    Eq,
    Edit { threshold: f64 },
    Jaccard { threshold: f64 },
    ExactToken,
    Custom { measure: Measure, threshold: f64 },
}

#[derive(Debug, Clone)]
struct SlotPlan {
    lhs: usize,
    rhs: Operand,
    kernel: Kernel,
}

/// Preprocessed operands for a list of tuples (a partition, or the
/// concatenation of two partitions for a cross pull) and the predicates of
/// an execution path. Tuples are addressed by local position.
#[derive(Debug, Clone)]
pub struct PreparedData {
    tids: Vec<usize>,
    columns: Vec<Column>,
    consts: Vec<Column>,
    slots: Vec<SlotPlan>,
}

#[derive(Default)]
struct Interner {
    ids: HashMap<String, u32>,
}

impl Interner {
    fn tokens(&mut self, s: &str, fold: bool) -> Box<[u32]> {
        let mut out: Vec<u32> = tokenize(s, fold)
            .into_iter()
            .map(|t| {
                let next = self.ids.len() as u32;
                *self.ids.entry(t).or_insert(next)
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out.into_boxed_slice()
    }
}

fn build_cell_column(values: impl Iterator<Item = AttrValue>, repr: Repr, interner: &mut [Interner; 2]) -> Column {
    match repr {
        Repr::Eq => Column::Eq(values.map(|v| EqCell::new(&v)).collect()),
        Repr::Chars(fold) => Column::Chars(
            values
                .map(|v| (!v.is_missing()).then(|| prepare_chars(v.as_str(), fold).into_boxed_slice()))
                .collect(),
        ),
        Repr::Tokens(fold) => Column::Tokens(
            values
                .map(|v| (!v.is_missing()).then(|| interner[usize::from(fold)].tokens(v.as_str(), fold)))
                .collect(),
        ),
        Repr::Text(fold) => Column::Text(
            values
                .map(|v| {
                    (!v.is_missing()).then(|| {
                        if fold {
                            v.as_str().to_lowercase().into_boxed_str()
                        } else {
                            v.as_str().into()
                        }
                    })
                })
                .collect(),
        ),
    }
}

impl PreparedData {
    /// Preprocesses `tids` of `rel` for the given predicate slots.
    pub fn build(rel: &Relation, tids: &[usize], slots: &[BoundPredicate]) -> Self {
        let mut interner = [Interner::default(), Interner::default()];
        let mut keys: HashMap<(usize, Repr), usize> = HashMap::new();
        let mut columns = Vec::new();
        let mut consts = Vec::new();
        let mut plans = Vec::with_capacity(slots.len());
        let mut column_for = |attr: usize, repr: Repr, interner: &mut [Interner; 2], columns: &mut Vec<Column>| {
            *keys.entry((attr, repr)).or_insert_with(|| {
                let values = tids.iter().map(|&t| rel.tuple(t).value(attr).clone());
                columns.push(build_cell_column(values, repr, interner));
                columns.len() - 1
            })
        };
        for bp in slots {
            let repr = bp.repr();
            let lhs = column_for(bp.lhs, repr, &mut interner, &mut columns);
            let rhs = match &bp.rhs {
                BoundRhs::Attr(a) => Operand::Column(column_for(*a, repr, &mut interner, &mut columns)),
                BoundRhs::Const(c) => {
                    consts.push(build_cell_column(std::iter::once(c.clone()), repr, &mut interner));
                    Operand::Const(consts.len() - 1)
                }
            };
            let kernel = match &bp.op {
                BoundOp::Eq => Kernel::Eq,
                BoundOp::Sim { measure, threshold } => match measure.kind {
                    MeasureKind::Edit => Kernel::Edit { threshold: *threshold },
                    MeasureKind::Jaccard => Kernel::Jaccard { threshold: *threshold },
                    MeasureKind::ExactToken => Kernel::ExactToken,
                    MeasureKind::Custom(_) => Kernel::Custom {
                        measure: measure.clone(),
                        threshold: *threshold,
                    },
                },
            };
            plans.push(SlotPlan { lhs, rhs, kernel });
        }
        PreparedData {
            tids: tids.to_vec(),
            columns,
            consts,
            slots: plans,
        }
    }

    pub fn len(&self) -> usize {
        self.tids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tids.is_empty()
    }

    pub fn tid(&self, pos: usize) -> usize {
        self.tids[pos]
    }

    pub fn tids(&self) -> &[usize] {
        &self.tids
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    /// Evaluates slot `slot` at local positions `(t, s)`.
    #[inline]
    pub fn eval(&self, slot: usize, t: usize, s: usize) -> bool {
        let plan = &self.slots[slot];
        let (rcol, ri) = match plan.rhs {
            Operand::Column(c) => (&self.columns[c], s),
            Operand::Const(c) => (&self.consts[c], 0),
        };
        let lcol = &self.columns[plan.lhs];
        match (&plan.kernel, lcol, rcol) {
            (Kernel::Eq, Column::Eq(l), Column::Eq(r)) => l[t].equals(&r[ri]),
            (Kernel::Edit { threshold }, Column::Chars(l), Column::Chars(r)) => match (&l[t], &r[ri]) {
                (Some(a), Some(b)) => edit_at_least(a, b, *threshold),
                _ => false,
            },
            (Kernel::Jaccard { threshold }, Column::Tokens(l), Column::Tokens(r)) => match (&l[t], &r[ri]) {
                (Some(a), Some(b)) => jaccard_at_least(a, b, *threshold),
                _ => false,
            },
            (Kernel::ExactToken, Column::Tokens(l), Column::Tokens(r)) => match (&l[t], &r[ri]) {
                (Some(a), Some(b)) => !a.is_empty() && a == b,
                _ => false,
            },
            (Kernel::Custom { measure, threshold }, Column::Text(l), Column::Text(r)) => match (&l[t], &r[ri]) {
                (Some(a), Some(b)) => match &measure.kind {
                    MeasureKind::Custom(f) => f(a, b).clamp(0.0, 1.0) >= *threshold,
                    _ => unreachable!("custom kernel bound to a built-in measure"),
                },
                _ => false,
            },
            _ => unreachable!("slot kernel and column representation disagree"),
        }
    }
}

impl PreparedData {
    /// Deterministic operation count of `eval(slot, t, s)`: DP cells for edit,
    /// merge steps for token sets, 8-byte words compared for equality, and
    /// nothing beyond the fixed unit when a length check decides the result.
    pub fn work(&self, slot: usize, t: usize, s: usize) -> u64 {
        let plan = &self.slots[slot];
        let (rcol, ri) = match plan.rhs {
            Operand::Column(c) => (&self.columns[c], s),
            Operand::Const(c) => (&self.consts[c], 0),
        };
        let lcol = &self.columns[plan.lhs];
        let units = match (&plan.kernel, lcol, rcol) {
            (Kernel::Eq, Column::Eq(l), Column::Eq(r)) => match (&l[t], &r[ri]) {
                (EqCell::Text { trimmed: a, .. }, EqCell::Text { trimmed: b, .. }) if a.len() == b.len() => {
                    a.len().div_ceil(8)
                }
                _ => 0,
            },
            (Kernel::Edit { threshold }, Column::Chars(l), Column::Chars(r)) => match (&l[t], &r[ri]) {
                (Some(a), Some(b)) => {
                    let longest = a.len().max(b.len());
                    let bound = 1.0 - a.len().abs_diff(b.len()) as f64 / longest.max(1) as f64;
                    if bound < *threshold {
                        0
                    } else {
                        a.len() * b.len()
                    }
                }
                _ => 0,
            },
            (Kernel::Jaccard { threshold }, Column::Tokens(l), Column::Tokens(r)) => match (&l[t], &r[ri]) {
                (Some(a), Some(b)) => {
                    let (lo, hi) = (a.len().min(b.len()), a.len().max(b.len()));
                    if hi == 0 || (lo as f64) / (hi as f64) < *threshold {
                        0
                    } else {
                        a.len() + b.len()
                    }
                }
                _ => 0,
            },
            (Kernel::ExactToken, Column::Tokens(l), Column::Tokens(r)) => match (&l[t], &r[ri]) {
                (Some(a), Some(b)) if a.len() == b.len() => a.len().div_ceil(2),
                _ => 0,
            },
            (Kernel::Custom { .. }, Column::Text(l), Column::Text(r)) => match (&l[t], &r[ri]) {
                (Some(a), Some(b)) => a.len() + b.len(),
                _ => 0,
            },
            _ => unreachable!("slot kernel and column representation disagree"),
        };
        1 + units as u64
    }
}

/// `edit_similarity(a, b) >= threshold`, skipping the DP when the length
/// difference alone rules it out.
#[inline]
fn edit_at_least(a: &[char], b: &[char], threshold: f64) -> bool {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return true;
    }
    let diff = a.len().abs_diff(b.len());
    let bound = 1.0 - diff as f64 / longest as f64;
    if bound < threshold {
        return false;
    }
    edit_similarity(a, b) >= threshold
}

#[inline]
fn jaccard_at_least(a: &[u32], b: &[u32], threshold: f64) -> bool {
    if a.is_empty() && b.is_empty() {
        return false;
    }
    let (small, large) = if a.len() <= b.len() { (a.len(), b.len()) } else { (b.len(), a.len()) };
    if (small as f64) / (large as f64) < threshold {
        return false;
    }
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    inter as f64 / (a.len() + b.len() - inter) as f64 >= threshold
}
