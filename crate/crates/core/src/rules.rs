//! Predicates, matching-dependency rules and the JSON rule document format.
//!
//! A rule document is a JSON array of rules:
//!
//! ```json
//! [
//!   { "id": "phi2",
//!     "when": [
//!       { "t_attr": "sname", "op": "eq", "s_attr": "sname" },
//!       { "t_attr": "description", "op": "sim", "s_attr": "description",
//!         "measure": "jaccard", "threshold": 0.5 }
//!     ] }
//! ]
//! ```
//!
//! Every rule's consequence is implicitly `t.eid = s.eid`.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AttrKind, AttrValue, Num, Schema};
use crate::similarity::MeasureRegistry;

#[derive(Debug, Clone, PartialEq)]
pub enum Rhs {
    /// An attribute of the second tuple variable `s`.
    Attr(String),
    Const(AttrValue),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Comparator {
    Eq,
    Sim { measure: String, threshold: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub lhs_attr: String,
    pub rhs: Rhs,
    pub comparator: Comparator,
}

impl Predicate {
    pub fn eq(attr: &str) -> Self {
        Predicate {
            lhs_attr: attr.to_string(),
            rhs: Rhs::Attr(attr.to_string()),
            comparator: Comparator::Eq,
        }
    }

    pub fn sim(attr: &str, measure: &str, threshold: f64) -> Self {
        Predicate {
            lhs_attr: attr.to_string(),
            rhs: Rhs::Attr(attr.to_string()),
            comparator: Comparator::Sim {
                measure: measure.to_string(),
                threshold,
            },
        }
    }

    pub fn eq_const(attr: &str, value: AttrValue) -> Self {
        Predicate {
            lhs_attr: attr.to_string(),
            rhs: Rhs::Const(value),
            comparator: Comparator::Eq,
        }
    }

    /// `t.A op s.A`: same attribute on both tuple variables.
    pub fn is_same_attribute(&self) -> bool {
        matches!(&self.rhs, Rhs::Attr(b) if *b == self.lhs_attr)
    }

    pub fn rhs_attr(&self) -> Option<&str> {
        match &self.rhs {
            Rhs::Attr(a) => Some(a),
            Rhs::Const(_) => None,
        }
    }

    pub fn measure(&self) -> Option<&str> {
        match &self.comparator {
            Comparator::Eq => None,
            Comparator::Sim { measure, .. } => Some(measure),
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rhs = match &self.rhs {
            Rhs::Attr(a) => format!("s.{a}"),
            Rhs::Const(AttrValue::Number(n)) => n.repr().to_string(),
            Rhs::Const(v) => format!("{:?}", v.as_str()),
        };
        match &self.comparator {
            Comparator::Eq => write!(f, "t.{} = {rhs}", self.lhs_attr),
            Comparator::Sim { measure, threshold } => {
                write!(f, "t.{} ≈{measure}≥{threshold} {rhs}", self.lhs_attr)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MDRule {
    pub rule_id: String,
    pub precondition: Vec<Predicate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleSet {
    rules: Vec<MDRule>,
}

impl RuleSet {
    /// Checks rule-id uniqueness, non-empty preconditions and the absence of
    /// duplicate predicates within a rule.
    pub fn new(rules: Vec<MDRule>) -> Result<Self> {
        if rules.is_empty() {
            return Err(Error::Rule("empty rule set".into()));
        }
        let mut ids = HashSet::new();
        for r in &rules {
            if !ids.insert(r.rule_id.as_str()) {
                return Err(Error::Rule(format!("duplicate rule id `{}`", r.rule_id)));
            }
            if r.precondition.is_empty() {
                return Err(Error::Rule(format!("rule `{}` has an empty precondition", r.rule_id)));
            }
            for (i, p) in r.precondition.iter().enumerate() {
                if r.precondition[..i].contains(p) {
                    return Err(Error::Rule(format!("rule `{}` repeats predicate {p}", r.rule_id)));
                }
                if let Comparator::Sim { threshold, .. } = &p.comparator {
                    check_threshold(*threshold)?;
                }
            }
        }
        Ok(RuleSet { rules })
    }

    pub fn rules(&self) -> &[MDRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn rule_ids(&self) -> Vec<String> {
        self.rules.iter().map(|r| r.rule_id.clone()).collect()
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(Error::Rule(format!("threshold out of range (0, 1]: {t}")))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleDoc {
    id: String,
    when: Vec<PredicateDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredicateDoc {
    t_attr: String,
    op: OpDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    s_attr: Option<String>,
    #[serde(rename = "const", default, skip_serializing_if = "Option::is_none")]
    constant: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    measure: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum OpDoc {
    Eq,
    Sim,
}

/// Parses a JSON rule document, checking measures against `reg`.
pub fn parse_ruleset(text: &str, reg: &MeasureRegistry) -> Result<RuleSet> {
    if text.trim().is_empty() {
        return Err(Error::Rule("empty rule set".into()));
    }
    let docs: Vec<RuleDoc> =
        serde_json::from_str(text).map_err(|e| Error::Rule(format!("malformed rule document: {e}")))?;
    let mut rules = Vec::with_capacity(docs.len());
    for doc in docs {
        let mut precondition = Vec::with_capacity(doc.when.len());
        for p in doc.when {
            precondition.push(predicate_from_doc(&doc.id, p, reg)?);
        }
        rules.push(MDRule {
            rule_id: doc.id,
            precondition,
        });
    }
    RuleSet::new(rules)
}

fn predicate_from_doc(rule: &str, p: PredicateDoc, reg: &MeasureRegistry) -> Result<Predicate> {
    let ctx = |msg: String| Error::Rule(format!("rule `{rule}`: {msg}"));
    let rhs = match (p.s_attr, p.constant) {
        (Some(a), None) => Rhs::Attr(a),
        (None, Some(c)) => Rhs::Const(const_value(&c).ok_or_else(|| ctx(format!("unsupported constant {c}")))?),
        (Some(_), Some(_)) => return Err(ctx("give either `s_attr` or `const`, not both".into())),
        (None, None) => return Err(ctx(format!("predicate on `{}` has no right-hand side", p.t_attr))),
    };
    let comparator = match p.op {
        OpDoc::Eq => {
            if p.measure.is_some() || p.threshold.is_some() {
                return Err(ctx("`eq` takes no measure or threshold".into()));
            }
            Comparator::Eq
        }
        OpDoc::Sim => {
            let measure = p.measure.ok_or_else(|| ctx("`sim` needs a measure".into()))?;
            if !reg.contains(&measure) {
                return Err(ctx(format!("unknown measure `{measure}`")));
            }
            let threshold = p.threshold.ok_or_else(|| ctx("`sim` needs a threshold".into()))?;
            check_threshold(threshold)?;
            Comparator::Sim { measure, threshold }
        }
    };
    Ok(Predicate {
        lhs_attr: p.t_attr,
        rhs,
        comparator,
    })
}

fn const_value(v: &serde_json::Value) -> Option<AttrValue> {
    match v {
        serde_json::Value::String(s) => Some(AttrValue::Text(s.clone())),
        serde_json::Value::Number(n) => {
            let repr = n.to_string();
            Num::parse(&repr).map(AttrValue::Number)
        }
        _ => None,
    }
}

/// Serializes a rule set back to the JSON document format.
pub fn serialize_ruleset(rs: &RuleSet) -> String {
    let docs: Vec<RuleDoc> = rs
        .rules()
        .iter()
        .map(|r| RuleDoc {
            id: r.rule_id.clone(),
            when: r
                .precondition
                .iter()
                .map(|p| {
                    let (s_attr, constant) = match &p.rhs {
                        Rhs::Attr(a) => (Some(a.clone()), None),
                        Rhs::Const(AttrValue::Number(n)) => (
                            None,
                            Some(
                                serde_json::Number::from_f64(n.value())
                                    .map(serde_json::Value::Number)
                                    .unwrap_or(serde_json::Value::Null),
                            ),
                        ),
                        Rhs::Const(v) => (None, Some(serde_json::Value::String(v.as_str().to_string()))),
                    };
                    let (op, measure, threshold) = match &p.comparator {
                        Comparator::Eq => (OpDoc::Eq, None, None),
                        Comparator::Sim { measure, threshold } => (OpDoc::Sim, Some(measure.clone()), Some(*threshold)),
                    };
                    PredicateDoc {
                        t_attr: p.lhs_attr.clone(),
                        op,
                        s_attr,
                        constant,
                        measure,
                        threshold,
                    }
                })
                .collect(),
        })
        .collect();
    serde_json::to_string_pretty(&docs).expect("rule documents always serialize")
}

/// Fails listing every attribute missing from `schema`; otherwise returns
/// warnings (similarity measures applied to numeric attributes).
pub fn validate_ruleset(rs: &RuleSet, schema: &Schema) -> Result<Vec<String>> {
    let mut errors = Vec::new();
    let mut warnings = Vec::new();
    for r in rs.rules() {
        for p in &r.precondition {
            let mut attrs = vec![p.lhs_attr.as_str()];
            attrs.extend(p.rhs_attr());
            for a in attrs {
                match schema.kind_of(a) {
                    None => {
                        let msg = format!("rule `{}` references unknown attribute `{a}`", r.rule_id);
                        if !errors.contains(&msg) {
                            errors.push(msg);
                        }
                    }
                    Some(AttrKind::Numeric) if p.measure().is_some() => {
                        let msg = format!(
                            "rule `{}` applies similarity `{}` to numeric attribute `{a}`",
                            r.rule_id,
                            p.measure().unwrap_or_default()
                        );
                        if !warnings.contains(&msg) {
                            warnings.push(msg);
                        }
                    }
                    Some(_) => {}
                }
            }
        }
    }
    if errors.is_empty() {
        Ok(warnings)
    } else {
        Err(Error::Validation(errors))
    }
}

/// Distinct predicates of `rs`, in order of first appearance.
pub fn predicate_universe(rs: &RuleSet) -> Vec<Predicate> {
    let mut out: Vec<Predicate> = Vec::new();
    for p in rs.rules().iter().flat_map(|r| &r.precondition) {
        if !out.contains(p) {
            out.push(p.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{read_relation, LoadOptions};

    const PRODUCTS_RULES: &str = include_str!("../tests/data/products_rules.json");

    fn parse(text: &str) -> Result<RuleSet> {
        parse_ruleset(text, &MeasureRegistry::new())
    }

    #[test]
    fn products_rules_parse_in_written_order() {
        let rs = parse(PRODUCTS_RULES).unwrap();
        let phi1 = &rs.rules()[0];
        assert_eq!(phi1.precondition.len(), 4);
        assert_eq!(phi1.precondition[0], Predicate::eq("color"));
        assert_eq!(phi1.precondition[1], Predicate::eq("price"));
        assert_eq!(phi1.precondition[2], Predicate::eq("sname"));
        assert_eq!(phi1.precondition[3], Predicate::sim("pname", "edit", 0.3));
        let phi2 = &rs.rules()[1];
        assert_eq!(
            phi2.precondition,
            vec![Predicate::eq("sname"), Predicate::sim("description", "jaccard", 0.5)]
        );
    }

    #[test]
    fn rejects_bad_documents() {
        let bad_threshold = r#"[{"id":"r","when":[{"t_attr":"a","op":"sim","s_attr":"a","measure":"edit","threshold":1.5}]}]"#;
        let err = parse(bad_threshold).unwrap_err().to_string();
        assert!(err.contains("threshold out of range"), "{err}");

        let unknown = r#"[{"id":"r","when":[{"t_attr":"a","op":"sim","s_attr":"a","measure":"kl","threshold":0.5}]}]"#;
        assert!(parse(unknown).unwrap_err().to_string().contains("unknown measure"));

        let empty_pre = r#"[{"id":"r","when":[]}]"#;
        assert!(parse(empty_pre).unwrap_err().to_string().contains("empty precondition"));

        assert!(parse("").unwrap_err().to_string().contains("empty rule set"));
        assert!(parse("[]").unwrap_err().to_string().contains("empty rule set"));

        let dup = r#"[{"id":"r","when":[{"t_attr":"a","op":"eq","s_attr":"a"},{"t_attr":"a","op":"eq","s_attr":"a"}]}]"#;
        assert!(parse(dup).is_err());

        let zero = r#"[{"id":"r","when":[{"t_attr":"a","op":"sim","s_attr":"a","measure":"edit","threshold":0}]}]"#;
        assert!(parse(zero).is_err());
    }

    #[test]
    fn constants_parse() {
        let doc = r#"[{"id":"r","when":[{"t_attr":"color","op":"eq","const":"Gray"},{"t_attr":"price","op":"eq","const":909}]}]"#;
        let rs = parse(doc).unwrap();
        let p = &rs.rules()[0].precondition;
        assert_eq!(p[0].rhs, Rhs::Const(AttrValue::text("Gray")));
        assert_eq!(p[1].rhs, Rhs::Const(AttrValue::number(909.0)));
    }

    #[test]
    fn validation_against_products() {
        let rel = read_relation(include_str!("../tests/data/products.csv").as_bytes(), &LoadOptions::default()).unwrap();
        let rs = parse(PRODUCTS_RULES).unwrap();
        assert!(validate_ruleset(&rs, rel.schema()).unwrap().is_empty());

        let weight = RuleSet::new(vec![MDRule {
            rule_id: "w".into(),
            precondition: vec![Predicate::eq("weight"), Predicate::eq("height")],
        }])
        .unwrap();
        match validate_ruleset(&weight, rel.schema()) {
            Err(Error::Validation(errs)) => {
                assert_eq!(errs.len(), 2);
                assert!(errs[0].contains("weight"));
                assert!(errs[1].contains("height"));
            }
            other => panic!("unexpected {other:?}"),
        }

        let numeric_sim = RuleSet::new(vec![MDRule {
            rule_id: "n".into(),
            precondition: vec![Predicate::sim("price", "edit", 0.8)],
        }])
        .unwrap();
        let warnings = validate_ruleset(&numeric_sim, rel.schema()).unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("price"));
    }

    #[test]
    fn universe_dedups_in_first_appearance_order() {
        let rs = parse(PRODUCTS_RULES).unwrap();
        let u = predicate_universe(&rs);
        assert_eq!(u.len(), 6);
        assert_eq!(u[0], Predicate::eq("color"));
        assert_eq!(u[4], Predicate::sim("description", "jaccard", 0.5));
        assert_eq!(u[5], Predicate::sim("saddress", "edit", 0.8));

        let single = RuleSet::new(vec![MDRule {
            rule_id: "a".into(),
            precondition: vec![Predicate::eq("x")],
        }])
        .unwrap();
        assert_eq!(predicate_universe(&single).len(), 1);

        let twice = RuleSet::new(vec![
            MDRule {
                rule_id: "a".into(),
                precondition: vec![Predicate::eq("x")],
            },
            MDRule {
                rule_id: "b".into(),
                precondition: vec![Predicate::eq("x")],
            },
        ])
        .unwrap();
        assert_eq!(predicate_universe(&twice).len(), 1);
    }

    #[test]
    fn thresholds_distinguish_predicates() {
        assert_ne!(Predicate::sim("a", "edit", 0.8), Predicate::sim("a", "edit", 0.9));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_predicate() -> impl Strategy<Value = Predicate> {
            let attr = prop::sample::select(vec!["a", "b", "c", "d"]);
            let measure = prop::sample::select(vec!["edit", "jaccard", "exact_token"]);
            prop_oneof![
                attr.clone().prop_map(Predicate::eq),
                (attr.clone(), measure, 1u32..=100).prop_map(|(a, m, t)| Predicate::sim(a, m, t as f64 / 100.0)),
                (attr, "[a-z]{1,5}").prop_map(|(a, c)| Predicate::eq_const(a, AttrValue::text(c))),
            ]
        }

        fn arb_ruleset() -> impl Strategy<Value = RuleSet> {
            prop::collection::vec(prop::collection::vec(arb_predicate(), 1..5), 1..6).prop_map(|rules| {
                let rules = rules
                    .into_iter()
                    .enumerate()
                    .map(|(i, mut ps)| {
                        let mut uniq: Vec<Predicate> = Vec::new();
                        ps.retain(|p| {
                            let fresh = !uniq.contains(p);
                            if fresh {
                                uniq.push(p.clone());
                            }
                            fresh
                        });
                        MDRule {
                            rule_id: format!("r{i}"),
                            precondition: ps,
                        }
                    })
                    .collect();
                RuleSet::new(rules).unwrap()
            })
        }

        proptest! {
            #[test]
            fn serialize_round_trips(rs in arb_ruleset()) {
                let text = serialize_ruleset(&rs);
                let back = parse_ruleset(&text, &MeasureRegistry::new()).unwrap();
                prop_assert_eq!(back, rs);
            }

            #[test]
            fn universe_is_a_set_over_all_predicates(rs in arb_ruleset()) {
                let u = predicate_universe(&rs);
                for (i, p) in u.iter().enumerate() {
                    prop_assert!(!u[..i].contains(p));
                }
                for p in rs.rules().iter().flat_map(|r| &r.precondition) {
                    prop_assert!(u.contains(p));
                }
                let mut reversed: Vec<MDRule> = rs.rules().to_vec();
                reversed.reverse();
                let u2 = predicate_universe(&RuleSet::new(reversed).unwrap());
                prop_assert_eq!(u.len(), u2.len());
                for p in &u2 {
                    prop_assert!(u.contains(p));
                }
            }
        }
    }
}
