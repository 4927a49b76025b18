//! Comparison semantics for predicates: equality on compatible values and
//! thresholded similarity measures.
//!
//! Every measure returns a similarity in `[0, 1]` (higher = more similar).
//! A predicate with a `Missing` operand is never satisfied.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{parse_decimal, AttrValue, Schema, TupleRecord};
use crate::rules::{Comparator, Predicate, Rhs};

pub const EDIT: &str = "edit";
pub const JACCARD: &str = "jaccard";
pub const EXACT_TOKEN: &str = "exact_token";

pub type CustomScorer = Arc<dyn Fn(&str, &str) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum MeasureKind {
    Edit,
    Jaccard,
    ExactToken,
    Custom(CustomScorer),
}

impl fmt::Debug for MeasureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeasureKind::Edit => f.write_str("Edit"),
            MeasureKind::Jaccard => f.write_str("Jaccard"),
            MeasureKind::ExactToken => f.write_str("ExactToken"),
            MeasureKind::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Measure {
    pub id: String,
    pub kind: MeasureKind,
    pub symmetric: bool,
    pub case_fold: bool,
}

impl Measure {
    /// Scores two texts; the caller has already ruled out missing values.
    pub fn score_text(&self, a: &str, b: &str) -> f64 {
        match &self.kind {
            MeasureKind::Edit => edit_score_with(a, b, self.case_fold),
            MeasureKind::Jaccard => jaccard_of(&token_set(a, self.case_fold), &token_set(b, self.case_fold)),
            MeasureKind::ExactToken => {
                let (x, y) = (token_set(a, self.case_fold), token_set(b, self.case_fold));
                if !x.is_empty() && x == y {
                    1.0
                } else {
                    0.0
                }
            }
            MeasureKind::Custom(f) => {
                if self.case_fold {
                    f(&a.to_lowercase(), &b.to_lowercase()).clamp(0.0, 1.0)
                } else {
                    f(a, b).clamp(0.0, 1.0)
                }
            }
        }
    }

    /// `None` when either side is missing.
    pub fn score(&self, a: &AttrValue, b: &AttrValue) -> Option<f64> {
        if a.is_missing() || b.is_missing() {
            return None;
        }
        Some(self.score_text(a.as_str(), b.as_str()))
    }
}

/// Opaque index of a measure inside a [`MeasureRegistry`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MeasureHandle(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct MeasureRegistry {
    entries: Vec<Measure>,
    index: HashMap<String, usize>,
}

impl Default for MeasureRegistry {
    fn default() -> Self {
        let mut reg = MeasureRegistry {
            entries: Vec::new(),
            index: HashMap::new(),
        };
        for (id, kind) in [
            (EDIT, MeasureKind::Edit),
            (JACCARD, MeasureKind::Jaccard),
            (EXACT_TOKEN, MeasureKind::ExactToken),
        ] {
            reg.insert(Measure {
                id: id.to_string(),
                kind,
                symmetric: true,
                case_fold: true,
            });
        }
        reg
    }
}

impl MeasureRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, m: Measure) {
        match self.index.get(&m.id) {
            Some(&i) => self.entries[i] = m,
            None => {
                self.index.insert(m.id.clone(), self.entries.len());
                self.entries.push(m);
            }
        }
    }

    /// Registers (or replaces) a custom measure. Built-in ids cannot be
    /// replaced.
    pub fn register(&mut self, id: &str, scorer: CustomScorer, symmetric: bool) -> Result<()> {
        if [EDIT, JACCARD, EXACT_TOKEN].contains(&id) {
            return Err(Error::Config(format!("measure `{id}` is built in")));
        }
        self.insert(Measure {
            id: id.to_string(),
            kind: MeasureKind::Custom(scorer),
            symmetric,
            case_fold: true,
        });
        Ok(())
    }

    pub fn set_case_fold(&mut self, id: &str, fold: bool) -> Result<()> {
        let i = *self
            .index
            .get(id)
            .ok_or_else(|| Error::Config(format!("unknown measure `{id}`")))?;
        self.entries[i].case_fold = fold;
        Ok(())
    }

    pub fn handle(&self, id: &str) -> Option<MeasureHandle> {
        self.index.get(id).copied().map(MeasureHandle)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn measure(&self, h: MeasureHandle) -> &Measure {
        &self.entries[h.0]
    }

    pub fn get(&self, id: &str) -> Option<&Measure> {
        self.handle(id).map(|h| self.measure(h))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|m| m.id.as_str())
    }
}

/// Equality on compatible values: numbers by value, text byte-exact after
/// trimming surrounding whitespace. A number and a text compare by value
/// when the text parses as a number.
pub fn eval_equality(a: &AttrValue, b: &AttrValue) -> bool {
    match (a, b) {
        (AttrValue::Missing, _) | (_, AttrValue::Missing) => false,
        (AttrValue::Number(x), AttrValue::Number(y)) => x.value() == y.value(),
        (AttrValue::Number(x), AttrValue::Text(s)) | (AttrValue::Text(s), AttrValue::Number(x)) => {
            parse_decimal(s) == Some(x.value())
        }
        (AttrValue::Text(x), AttrValue::Text(y)) => x.trim() == y.trim(),
    }
}

/// Classic two-row Levenshtein distance over characters.
pub fn levenshtein(a: &[char], b: &[char]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    if b.is_empty() {
        return a.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = diag + usize::from(ca != cb);
            diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(diag + 1);
        }
    }
    row[b.len()]
}

/// `1 - lev(a, b) / max(|a|, |b|)` on case-folded characters; 1 for two
/// empty strings.
pub fn edit_score(a: &str, b: &str) -> f64 {
    edit_score_with(a, b, true)
}

pub fn edit_score_with(a: &str, b: &str, fold: bool) -> f64 {
    let x = prepare_chars(a, fold);
    let y = prepare_chars(b, fold);
    edit_similarity(&x, &y)
}

pub(crate) fn prepare_chars(s: &str, fold: bool) -> Vec<char> {
    if fold {
        s.to_lowercase().chars().collect()
    } else {
        s.chars().collect()
    }
}

pub(crate) fn edit_similarity(x: &[char], y: &[char]) -> f64 {
    let longest = x.len().max(y.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(x, y) as f64 / longest as f64
}

/// Case-folds, turns punctuation into separators and splits on whitespace.
pub fn tokenize(s: &str, fold: bool) -> Vec<String> {
    let cleaned: String = s
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect();
    let cleaned = if fold { cleaned.to_lowercase() } else { cleaned };
    cleaned.split_whitespace().map(str::to_string).collect()
}

pub(crate) fn token_set(s: &str, fold: bool) -> BTreeSet<String> {
    tokenize(s, fold).into_iter().collect()
}

fn jaccard_of(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Jaccard similarity of the token sets; 0 when both sets are empty.
pub fn jaccard_score(a: &str, b: &str) -> f64 {
    jaccard_of(&token_set(a, true), &token_set(b, true))
}

/// Reference evaluation of `p` at `(t, s)`, resolving attribute names
/// against `schema` on every call.
pub fn eval_predicate(
    p: &Predicate,
    t: &TupleRecord,
    s: &TupleRecord,
    schema: &Schema,
    reg: &MeasureRegistry,
) -> Result<bool> {
    let lhs = schema
        .position(&p.lhs_attr)
        .ok_or_else(|| Error::Config(format!("unknown attribute `{}`", p.lhs_attr)))?;
    let left = t.value(lhs);
    let right = match &p.rhs {
        Rhs::Attr(name) => {
            let pos = schema
                .position(name)
                .ok_or_else(|| Error::Config(format!("unknown attribute `{name}`")))?;
            s.value(pos)
        }
        Rhs::Const(c) => c,
    };
    match &p.comparator {
        Comparator::Eq => Ok(eval_equality(left, right)),
        Comparator::Sim { measure, threshold } => {
            let m = reg
                .get(measure)
                .ok_or_else(|| Error::Config(format!("measure `{measure}` is not registered")))?;
            Ok(m.score(left, right).is_some_and(|v| v >= *threshold))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dp_oracle(a: &str, b: &str) -> usize {
        // Full-matrix Wagner-Fischer, independent of the two-row version.
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in d.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=b.len() {
            d[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let c = if a[i - 1] == b[j - 1] { 0 } else { 1 };
                d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + c);
            }
        }
        d[a.len()][b.len()]
    }

    #[test]
    fn equality_examples() {
        assert!(eval_equality(&AttrValue::text("Gray"), &AttrValue::text("Gray")));
        assert!(!eval_equality(&AttrValue::Missing, &AttrValue::text("Gray")));
        assert!(!eval_equality(&AttrValue::Missing, &AttrValue::Missing));
        let a = AttrValue::Number(crate::model::Num::parse("909").unwrap());
        let b = AttrValue::Number(crate::model::Num::parse("909.0").unwrap());
        assert!(eval_equality(&a, &b));
        assert!(eval_equality(&AttrValue::text(" Gray "), &AttrValue::text("Gray")));
        assert!(!eval_equality(&AttrValue::text("gray"), &AttrValue::text("Gray")));
        assert!(eval_equality(&a, &AttrValue::text("$909")));
    }

    #[test]
    fn edit_examples() {
        assert_eq!(edit_score("ThinkPad", "ThinkPad"), 1.0);
        assert_eq!(dp_oracle("kitten", "sitting"), 3);
        assert!((edit_score("kitten", "sitting") - (1.0 - 3.0 / 7.0)).abs() < 1e-12);
        assert_eq!(edit_score("", "abc"), 0.0);
        assert_eq!(edit_score("", ""), 1.0);
        assert_eq!(edit_score("ABC", "abc"), 1.0);
        assert!(edit_score_with("ABC", "abc", false) < 1.0);
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard_score("a b c", "a b c"), 1.0);
        assert!((jaccard_score("a b", "b c") - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(jaccard_score("...", "!!!"), 0.0);
        assert_eq!(jaccard_score("A, b", "a B"), 1.0);
    }

    #[test]
    fn exact_token_is_set_equality() {
        let reg = MeasureRegistry::new();
        let m = reg.get(EXACT_TOKEN).unwrap();
        assert_eq!(m.score_text("b a a", "A B"), 1.0);
        assert_eq!(m.score_text("a b", "a b c"), 0.0);
        assert_eq!(m.score_text("", ""), 0.0);
    }

    #[test]
    fn custom_measures_and_fold_override() {
        let mut reg = MeasureRegistry::new();
        reg.register("prefix", Arc::new(|a: &str, b: &str| f64::from(u8::from(a.starts_with(b)))), false)
            .unwrap();
        let m = reg.get("prefix").unwrap();
        assert!(!m.symmetric);
        assert_eq!(m.score_text("Apple Mac", "apple"), 1.0);
        assert!(reg.register(EDIT, Arc::new(|_: &str, _: &str| 0.0), true).is_err());
        reg.set_case_fold(EDIT, false).unwrap();
        assert!(reg.get(EDIT).unwrap().score_text("A", "a") < 1.0);
    }

    proptest! {
        #[test]
        fn levenshtein_matches_full_matrix(a in "[a-cA-C ]{0,12}", b in "[a-cA-C ]{0,12}") {
            let x: Vec<char> = a.chars().collect();
            let y: Vec<char> = b.chars().collect();
            prop_assert_eq!(levenshtein(&x, &y), dp_oracle(&a, &b));
        }

        #[test]
        fn builtin_scores_symmetric_and_bounded(a in "\\PC{0,16}", b in "\\PC{0,16}") {
            let reg = MeasureRegistry::new();
            for id in [EDIT, JACCARD, EXACT_TOKEN] {
                let m = reg.get(id).unwrap();
                let ab = m.score_text(&a, &b);
                let ba = m.score_text(&b, &a);
                prop_assert_eq!(ab, ba);
                prop_assert!((0.0..=1.0).contains(&ab));
            }
        }
    }
}
