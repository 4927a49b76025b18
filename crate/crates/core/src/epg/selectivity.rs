//! Hash-evenness selectivity estimates.
//!
//! A predicate's operand values are hashed into `k` buckets with a hash family
//! matching its comparator: exact folded values for equality, MinHash over
//! token sets for `jaccard`/`exact_token`, MinHash over character 3-grams for
//! `edit` and custom measures. The spread of the bucket counts around `n/k`,
//! normalized by its value when everything lands in one bucket, is `sp`.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::model::{AttrValue, Relation};
use crate::prepared::{BoundOp, BoundPredicate, BoundRhs};
use crate::rules::Predicate;
use crate::similarity::{eval_equality, tokenize, MeasureKind, MeasureRegistry};

pub const DEFAULT_BUCKETS: usize = 32;
pub const DEFAULT_MINHASH_ROWS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct SelectivityProfile {
    pub k: usize,
    pub bucket_counts: Vec<usize>,
    pub raw_evenness: f64,
    pub sp: f64,
    pub warning: Option<String>,
}

/// splitmix64 finalizer.
#[inline]
pub(crate) fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub(crate) fn hash_str(seed: u64, s: &str) -> u64 {
    let mut h = DefaultHasher::new();
    seed.hash(&mut h);
    s.hash(&mut h);
    h.finish()
}

/// Hash of the value equality compares on: numbers by value, text by its
/// trimmed, case-folded form. `None` for missing values.
pub(crate) fn equality_key(v: &AttrValue, seed: u64) -> Option<u64> {
    match v {
        AttrValue::Missing => None,
        AttrValue::Number(n) => {
            let x = n.value();
            let bits = if x == 0.0 { 0 } else { x.to_bits() };
            Some(mix64(seed ^ mix64(bits ^ 0x6e75_6d62)))
        }
        AttrValue::Text(s) => match crate::model::parse_decimal(s) {
            Some(x) => {
                let bits = if x == 0.0 { 0 } else { x.to_bits() };
                Some(mix64(seed ^ mix64(bits ^ 0x6e75_6d62)))
            }
            None => Some(hash_str(seed, &s.trim().to_lowercase())),
        },
    }
}

/// The elements a MinHash signature is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShingleKind {
    Tokens,
    CharTrigrams,
}

pub(crate) fn shingle_kind(op: &BoundOp) -> Option<(ShingleKind, bool)> {
    match op {
        BoundOp::Eq => None,
        BoundOp::Sim { measure, .. } => Some(match measure.kind {
            MeasureKind::Jaccard | MeasureKind::ExactToken => (ShingleKind::Tokens, measure.case_fold),
            MeasureKind::Edit | MeasureKind::Custom(_) => (ShingleKind::CharTrigrams, measure.case_fold),
        }),
    }
}

/// Hashed shingles of a text; empty when the text has none.
pub(crate) fn shingles(text: &str, kind: ShingleKind, fold: bool) -> Vec<u64> {
    let mut out: Vec<u64> = match kind {
        ShingleKind::Tokens => tokenize(text, fold).iter().map(|t| hash_str(0, t)).collect(),
        ShingleKind::CharTrigrams => {
            let folded = if fold { text.to_lowercase() } else { text.to_string() };
            let chars: Vec<char> = folded.chars().collect();
            if chars.is_empty() {
                Vec::new()
            } else if chars.len() < 3 {
                vec![hash_str(0, &folded)]
            } else {
                chars.windows(3).map(|w| hash_str(0, &w.iter().collect::<String>())).collect()
            }
        }
    };
    out.sort_unstable();
    out.dedup();
    out
}

/// MinHash signature of `rows` independent permutations, one per row.
pub(crate) fn minhash(sh: &[u64], rows: usize, seed: u64, row_offset: usize) -> Vec<u64> {
    (0..rows)
        .map(|r| {
            let salt = mix64(seed ^ mix64((row_offset + r) as u64 + 1));
            sh.iter().map(|&x| mix64(x ^ salt)).min().unwrap_or(u64::MAX)
        })
        .collect()
}

pub(crate) fn combine(sig: &[u64], seed: u64) -> u64 {
    sig.iter().fold(mix64(seed), |acc, &v| mix64(acc ^ v))
}

/// Theoretical maximum of the raw evenness: all `n` items in one bucket.
pub fn max_raw_evenness(n: usize, k: usize) -> f64 {
    n as f64 * ((k - 1) as f64).sqrt() / k as f64
}

/// `sqrt((1/k) * sum (b_i - n/k)^2)`.
pub fn raw_evenness(counts: &[usize]) -> f64 {
    let k = counts.len() as f64;
    let n: usize = counts.iter().sum();
    let mean = n as f64 / k;
    (counts.iter().map(|&b| (b as f64 - mean).powi(2)).sum::<f64>() / k).sqrt()
}

/// Profile from explicit bucket counts.
pub fn profile_from_counts(counts: Vec<usize>) -> SelectivityProfile {
    let k = counts.len();
    let n: usize = counts.iter().sum();
    let raw = raw_evenness(&counts);
    let max = max_raw_evenness(n, k);
    let occupied = counts.iter().filter(|&&b| b > 0).count();
    let sp = if occupied == 1 {
        1.0
    } else if max > 0.0 {
        (raw / max).clamp(0.0, 1.0)
    } else {
        0.0
    };
    SelectivityProfile {
        k,
        bucket_counts: counts,
        raw_evenness: raw,
        sp,
        warning: None,
    }
}

fn bucket_of_value(
    v: &AttrValue,
    op: &BoundOp,
    k: usize,
    seed: u64,
    rows: usize,
) -> Option<usize> {
    let h = match shingle_kind(op) {
        None => equality_key(v, seed)?,
        Some((kind, fold)) => {
            if v.is_missing() {
                return None;
            }
            let sh = shingles(v.as_str(), kind, fold);
            if sh.is_empty() {
                return None;
            }
            combine(&minhash(&sh, rows, seed, 0), seed)
        }
    };
    Some((h % k as u64) as usize)
}

#[derive(Debug, Clone)]
pub struct SelectivityConfig {
    pub k: usize,
    pub minhash_rows: usize,
    pub seed: u64,
}

impl Default for SelectivityConfig {
    fn default() -> Self {
        SelectivityConfig {
            k: DEFAULT_BUCKETS,
            minhash_rows: DEFAULT_MINHASH_ROWS,
            seed: 0,
        }
    }
}

/// Estimates `sp(p, D)`.
///
/// Values that cannot satisfy the predicate (missing, or no shingles) are
/// spread across buckets by tid so they do not register as a collision.
/// Cross-attribute predicates hash both attributes' values together. A
/// predicate against a constant has no pairwise collisions to measure; its
/// `sp` is the fraction of tuples satisfying it, with `bucket_counts` =
/// `[satisfying, not satisfying]`.
pub fn estimate_selectivity(
    p: &Predicate,
    rel: &Relation,
    reg: &MeasureRegistry,
    cfg: &SelectivityConfig,
) -> Result<SelectivityProfile> {
    if cfg.k < 2 {
        return Err(Error::Config("bucket count k must be at least 2".into()));
    }
    if rel.is_empty() {
        return Err(Error::EmptyRelation);
    }
    let bp = BoundPredicate::bind(p, rel.schema(), reg)?;
    let lhs_missing = rel.tuples().iter().all(|t| t.value(bp.lhs).is_missing());
    if lhs_missing {
        let mut prof = profile_from_counts(vec![0; cfg.k]);
        prof.bucket_counts = spread(rel.len(), cfg.k);
        prof.raw_evenness = raw_evenness(&prof.bucket_counts);
        prof.sp = 0.0;
        prof.warning = Some(format!("attribute `{}` is entirely missing; {p} can never hold", p.lhs_attr));
        log::warn!("{}", prof.warning.as_deref().unwrap_or_default());
        return Ok(prof);
    }
    match &bp.rhs {
        BoundRhs::Const(c) => {
            let hits = rel
                .tuples()
                .iter()
                .filter(|t| match &bp.op {
                    BoundOp::Eq => eval_equality(t.value(bp.lhs), c),
                    BoundOp::Sim { measure, threshold } => {
                        measure.score(t.value(bp.lhs), c).is_some_and(|s| s >= *threshold)
                    }
                })
                .count();
            Ok(SelectivityProfile {
                k: 2,
                bucket_counts: vec![hits, rel.len() - hits],
                raw_evenness: hits as f64 / rel.len() as f64,
                sp: hits as f64 / rel.len() as f64,
                warning: None,
            })
        }
        BoundRhs::Attr(rhs) => {
            let mut attrs = vec![bp.lhs];
            if *rhs != bp.lhs {
                attrs.push(*rhs);
            }
            let mut counts = vec![0usize; cfg.k];
            let mut item = 0usize;
            for &a in &attrs {
                for t in rel.tuples() {
                    let b = bucket_of_value(t.value(a), &bp.op, cfg.k, cfg.seed, cfg.minhash_rows.max(1))
                        .unwrap_or(item % cfg.k);
                    counts[b] += 1;
                    item += 1;
                }
            }
            Ok(profile_from_counts(counts))
        }
    }
}

fn spread(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| n / k + usize::from(i < n % k)).collect()
}
