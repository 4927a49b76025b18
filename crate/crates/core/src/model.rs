//! Schema-typed relations, tuples and partitions, plus CSV ingestion.
//!
//! A [`Relation`] is immutable once loaded and is shared read-only by every
//! execution lane.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Median token count above which a text column is treated as long text.
pub const LONG_TEXT_MEDIAN_TOKENS: usize = 8;

/// Markers treated as missing when no explicit list is supplied.
pub const DEFAULT_MISSING_MARKERS: [&str; 3] = ["", "-", "NULL"];

const CURRENCY_SYMBOLS: [char; 5] = ['$', '€', '£', '¥', '₹'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttrKind {
    Categorical,
    Numeric,
    ShortText,
    LongText,
}

impl AttrKind {
    pub const ALL: [AttrKind; 4] = [
        AttrKind::Categorical,
        AttrKind::Numeric,
        AttrKind::ShortText,
        AttrKind::LongText,
    ];

    pub fn index(self) -> usize {
        match self {
            AttrKind::Categorical => 0,
            AttrKind::Numeric => 1,
            AttrKind::ShortText => 2,
            AttrKind::LongText => 3,
        }
    }

    pub fn is_textual(self) -> bool {
        !matches!(self, AttrKind::Numeric)
    }
}

impl fmt::Display for AttrKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AttrKind::Categorical => "categorical",
            AttrKind::Numeric => "numeric",
            AttrKind::ShortText => "short_text",
            AttrKind::LongText => "long_text",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attribute {
    pub name: String,
    pub kind: AttrKind,
}

#[derive(Debug, Clone)]
pub struct Schema {
    attributes: Vec<Attribute>,
    eid_attr: Option<String>,
    index: HashMap<String, usize>,
}

impl Schema {
    pub fn new(attributes: Vec<Attribute>, eid_attr: Option<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(attributes.len());
        for (i, a) in attributes.iter().enumerate() {
            if index.insert(a.name.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate attribute name `{}`", a.name)));
            }
        }
        if let Some(eid) = &eid_attr {
            if !index.contains_key(eid) {
                return Err(Error::Schema(format!("entity-id attribute `{eid}` is not in the schema")));
            }
        }
        Ok(Schema {
            attributes,
            eid_attr,
            index,
        })
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn arity(&self) -> usize {
        self.attributes.len()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn kind_of(&self, name: &str) -> Option<AttrKind> {
        self.position(name).map(|i| self.attributes[i].kind)
    }

    pub fn eid_attr(&self) -> Option<&str> {
        self.eid_attr.as_deref()
    }
}

/// A parsed number that remembers how it was written.
///
/// Equality is by numeric value; the original text is kept so that a loaded
/// relation serializes back byte-exactly.
#[derive(Debug, Clone)]
pub struct Num {
    value: f64,
    repr: String,
}

impl Num {
    pub fn new(value: f64) -> Option<Self> {
        value.is_finite().then(|| Num {
            value,
            repr: format_number(value),
        })
    }

    /// Parses `text` after trimming and stripping currency symbols and
    /// thousands separators. Returns `None` unless the result is finite.
    pub fn parse(text: &str) -> Option<Self> {
        let value = parse_decimal(text)?;
        Some(Num {
            value,
            repr: text.to_string(),
        })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn repr(&self) -> &str {
        &self.repr
    }
}

impl PartialEq for Num {
    fn eq(&self, other: &Self) -> bool {
        self.value == other.value
    }
}

pub(crate) fn parse_decimal(text: &str) -> Option<f64> {
    let t = text.trim();
    let cleaned: String = t
        .chars()
        .filter(|c| !CURRENCY_SYMBOLS.contains(c) && *c != ',')
        .collect();
    let cleaned = cleaned.trim();
    if cleaned.is_empty() {
        return None;
    }
    // Reject things like "inf" / "nan" that f64::from_str accepts.
    if !cleaned
        .chars()
        .all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E'))
    {
        return None;
    }
    cleaned.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttrValue {
    Missing,
    Text(String),
    Number(Num),
}

impl AttrValue {
    pub fn text(s: impl Into<String>) -> Self {
        AttrValue::Text(s.into())
    }

    pub fn number(v: f64) -> Self {
        Num::new(v).map(AttrValue::Number).unwrap_or(AttrValue::Missing)
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, AttrValue::Missing)
    }

    /// Textual form used by string measures; empty for `Missing`.
    pub fn as_str(&self) -> &str {
        match self {
            AttrValue::Missing => "",
            AttrValue::Text(s) => s,
            AttrValue::Number(n) => n.repr(),
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            AttrValue::Number(n) => Some(n.value()),
            _ => None,
        }
    }

    /// Length in characters of the textual form.
    pub fn char_len(&self) -> usize {
        self.as_str().chars().count()
    }
}

#[derive(Debug, Clone)]
pub struct TupleRecord {
    pub tid: usize,
    pub eid: Option<String>,
    pub values: Vec<AttrValue>,
}

impl TupleRecord {
    pub fn value(&self, attr: usize) -> &AttrValue {
        &self.values[attr]
    }
}

#[derive(Debug, Clone)]
pub struct Relation {
    schema: Schema,
    tuples: Vec<TupleRecord>,
}

impl Relation {
    /// Builds a relation from rows of values. Tids are assigned densely in
    /// row order; eids are read from the schema's entity-id column.
    pub fn new(schema: Schema, rows: Vec<Vec<AttrValue>>) -> Result<Self> {
        let eid_pos = schema.eid_attr().and_then(|e| schema.position(e));
        let mut tuples = Vec::with_capacity(rows.len());
        for (tid, values) in rows.into_iter().enumerate() {
            if values.len() != schema.arity() {
                return Err(Error::Schema(format!(
                    "row {tid} has {} values, schema arity is {}",
                    values.len(),
                    schema.arity()
                )));
            }
            let eid = eid_pos.and_then(|p| match &values[p] {
                AttrValue::Missing => None,
                v => Some(v.as_str().to_string()),
            });
            tuples.push(TupleRecord { tid, eid, values });
        }
        Ok(Relation { schema, tuples })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn tuples(&self) -> &[TupleRecord] {
        &self.tuples
    }

    pub fn tuple(&self, tid: usize) -> &TupleRecord {
        &self.tuples[tid]
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataPartition {
    pub pid: usize,
    pub tuple_refs: Vec<usize>,
    pub branch_id: Option<usize>,
}

impl DataPartition {
    pub fn len(&self) -> usize {
        self.tuple_refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuple_refs.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub schema_hints: HashMap<String, AttrKind>,
    pub missing_markers: Vec<String>,
    /// Entity-id column. `None` picks a column literally named `eid` if any.
    pub eid_attr: Option<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            schema_hints: HashMap::new(),
            missing_markers: DEFAULT_MISSING_MARKERS.iter().map(|s| s.to_string()).collect(),
            eid_attr: None,
        }
    }
}

pub fn load_relation(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<Relation> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_relation(file, opts)
}

/// Reads an RFC-4180 CSV with a header row.
pub fn read_relation<R: Read>(reader: R, opts: &LoadOptions) -> Result<Relation> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(csv_error)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::Parse {
            line: 1,
            message: "missing header row".into(),
        });
    }
    let mut seen = HashMap::new();
    for h in &header {
        if seen.insert(h.as_str(), ()).is_some() {
            return Err(Error::Schema(format!("duplicate header name `{h}`")));
        }
    }
    for hinted in opts.schema_hints.keys() {
        if !header.contains(hinted) {
            return Err(Error::Schema(format!("kind hint for unknown column `{hinted}`")));
        }
    }

    let mut raw_rows: Vec<(u64, Vec<Option<String>>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let cells = rec
            .iter()
            .map(|c| {
                if opts.missing_markers.iter().any(|m| m == c) {
                    None
                } else {
                    Some(c.to_string())
                }
            })
            .collect();
        raw_rows.push((line, cells));
    }

    let mut attributes = Vec::with_capacity(header.len());
    for (col, name) in header.iter().enumerate() {
        let kind = match opts.schema_hints.get(name) {
            Some(k) => *k,
            None => infer_kind(raw_rows.iter().filter_map(|(_, r)| r[col].as_deref())),
        };
        attributes.push(Attribute {
            name: name.clone(),
            kind,
        });
    }

    let eid_attr = match &opts.eid_attr {
        Some(e) => Some(e.clone()),
        None => header.iter().find(|h| h.as_str() == "eid").cloned(),
    };
    let schema = Schema::new(attributes, eid_attr)?;

    let mut rows = Vec::with_capacity(raw_rows.len());
    for (line, cells) in raw_rows {
        let mut values = Vec::with_capacity(cells.len());
        for (col, cell) in cells.into_iter().enumerate() {
            let attr = &schema.attributes()[col];
            let v = match cell {
                None => AttrValue::Missing,
                Some(s) if attr.kind == AttrKind::Numeric => match Num::parse(&s) {
                    Some(n) => AttrValue::Number(n),
                    None => {
                        return Err(Error::Parse {
                            line,
                            message: format!("column `{}` is numeric but `{s}` does not parse", attr.name),
                        })
                    }
                },
                Some(s) => AttrValue::Text(s),
            };
            values.push(v);
        }
        rows.push(values);
    }
    Relation::new(schema, rows)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    let message = match e.kind() {
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => format!("ragged row: expected {expected_len} fields, found {len}"),
        _ => e.to_string(),
    };
    Error::Parse { line, message }
}

/// Numeric when every non-missing cell parses, long text when the median
/// whitespace token count exceeds [`LONG_TEXT_MEDIAN_TOKENS`], else short text.
pub fn infer_kind<'a>(cells: impl Iterator<Item = &'a str>) -> AttrKind {
    let cells: Vec<&str> = cells.collect();
    if cells.is_empty() {
        return AttrKind::ShortText;
    }
    if cells.iter().all(|c| parse_decimal(c).is_some()) {
        return AttrKind::Numeric;
    }
    let mut counts: Vec<usize> = cells.iter().map(|c| c.split_whitespace().count()).collect();
    counts.sort_unstable();
    let n = counts.len();
    let median = if n % 2 == 1 {
        counts[n / 2] as f64
    } else {
        (counts[n / 2 - 1] + counts[n / 2]) as f64 / 2.0
    };
    if median > LONG_TEXT_MEDIAN_TOKENS as f64 {
        AttrKind::LongText
    } else {
        AttrKind::ShortText
    }
}

/// Writes the relation as CSV. Missing cells become `missing_marker`.
pub fn write_relation<W: Write>(rel: &Relation, writer: W, missing_marker: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io_err = |e: csv::Error| Error::Parse {
        line: 0,
        message: e.to_string(),
    };
    w.write_record(rel.schema().attributes().iter().map(|a| a.name.as_str()))
        .map_err(io_err)?;
    for t in rel.tuples() {
        w.write_record(t.values.iter().map(|v| match v {
            AttrValue::Missing => missing_marker,
            other => other.as_str(),
        }))
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Round-robin split into `m` partitions (tid `i` goes to partition `i % m`).
pub fn split_fixed(relation: &Relation, m: usize) -> Result<Vec<DataPartition>> {
    if m == 0 {
        return Err(Error::Config("partition count must be at least 1".into()));
    }
    if relation.is_empty() {
        return Err(Error::EmptyRelation);
    }
    let m = m.min(relation.len());
    let mut parts: Vec<DataPartition> = (0..m)
        .map(|pid| DataPartition {
            pid,
            tuple_refs: Vec::with_capacity(relation.len() / m + 1),
            branch_id: None,
        })
        .collect();
    for tid in 0..relation.len() {
        parts[tid % m].tuple_refs.push(tid);
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    const PRODUCTS: &str = include_str!("../tests/data/products.csv");

    fn load(text: &str) -> Result<Relation> {
        read_relation(text.as_bytes(), &LoadOptions::default())
    }

    #[test]
    fn products_loads_with_missing_address() {
        let rel = load(PRODUCTS).unwrap();
        assert_eq!(rel.len(), 5);
        let sa = rel.schema().position("saddress").unwrap();
        assert!(rel.tuple(3).value(sa).is_missing());
        assert_eq!(rel.schema().kind_of("price"), Some(AttrKind::Numeric));
        assert_eq!(rel.schema().kind_of("pname"), Some(AttrKind::ShortText));
        assert_eq!(rel.tuple(0).eid.as_deref(), Some("e1"));
        let price = rel.schema().position("price").unwrap();
        assert_eq!(rel.tuple(0).value(price).as_number(), Some(909.0));
        assert!(rel.tuple(1).value(price).is_missing());
    }

    #[test]
    fn header_only_gives_empty_relation() {
        let rel = load("a,b\n").unwrap();
        assert!(rel.is_empty());
        assert_eq!(rel.schema().arity(), 2);
    }

    #[test]
    fn mixed_column_is_short_text() {
        let rel = load("v\n1\n2\nx\n").unwrap();
        assert_eq!(rel.schema().kind_of("v"), Some(AttrKind::ShortText));
        assert_eq!(rel.tuple(0).value(0), &AttrValue::text("1"));
    }

    #[test]
    fn long_text_by_median_tokens() {
        let rel = load("d\none two three four five six seven eight nine\nshort\na b c d e f g h i j\n").unwrap();
        assert_eq!(rel.schema().kind_of("d"), Some(AttrKind::LongText));
    }

    #[test]
    fn ragged_row_names_line() {
        let err = load("a,b\n1,2\n3\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_header_is_schema_error() {
        assert!(matches!(load("a,a\n1,2\n"), Err(Error::Schema(_))));
    }

    #[test]
    fn hints_override_inference() {
        let mut opts = LoadOptions::default();
        opts.schema_hints.insert("v".into(), AttrKind::Categorical);
        let rel = read_relation("v\n1\n2\n".as_bytes(), &opts).unwrap();
        assert_eq!(rel.schema().kind_of("v"), Some(AttrKind::Categorical));
    }

    #[test]
    fn currency_stripped_before_parse() {
        assert_eq!(parse_decimal("$909"), Some(909.0));
        assert_eq!(parse_decimal(" 909.0 "), Some(909.0));
        assert_eq!(parse_decimal("1,200"), Some(1200.0));
        assert_eq!(parse_decimal("inf"), None);
        assert_eq!(parse_decimal("x"), None);
    }

    #[test]
    fn round_trip_preserves_cells() {
        let rel = load(PRODUCTS).unwrap();
        let mut out = Vec::new();
        write_relation(&rel, &mut out, "-").unwrap();
        let again = load(std::str::from_utf8(&out).unwrap()).unwrap();
        for (a, b) in rel.tuples().iter().zip(again.tuples()) {
            for (x, y) in a.values.iter().zip(&b.values) {
                assert_eq!(x.as_str(), y.as_str());
                assert_eq!(x.is_missing(), y.is_missing());
            }
        }
    }

    fn rel_of(n: usize) -> Relation {
        let schema = Schema::new(
            vec![Attribute {
                name: "a".into(),
                kind: AttrKind::ShortText,
            }],
            None,
        )
        .unwrap();
        Relation::new(schema, (0..n).map(|i| vec![AttrValue::text(i.to_string())]).collect()).unwrap()
    }

    #[test]
    fn split_fixed_sizes() {
        let sizes = |n, m| -> Vec<usize> {
            split_fixed(&rel_of(n), m)
                .unwrap()
                .iter()
                .map(|p| p.len())
                .collect()
        };
        assert_eq!(sizes(5, 1), vec![5]);
        assert_eq!(sizes(5, 2), vec![3, 2]);
        assert_eq!(sizes(2304, 9), vec![256; 9]);
        assert_eq!(sizes(3, 7), vec![1, 1, 1]);
        assert!(split_fixed(&rel_of(0), 2).is_err());
        assert!(split_fixed(&rel_of(3), 0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn split_covers_all_tids(n in 1usize..300, m in 1usize..40) {
            let parts = split_fixed(&rel_of(n), m).unwrap();
            let mut all: Vec<usize> = parts.iter().flat_map(|p| p.tuple_refs.clone()).collect();
            all.sort_unstable();
            proptest::prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let max = parts.iter().map(|p| p.len()).max().unwrap();
            let min = parts.iter().map(|p| p.len()).min().unwrap();
            proptest::prop_assert!(max - min <= 1);
        }
    }
}
