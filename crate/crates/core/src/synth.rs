//! Seeded synthetic relations and rule sets for tests and benchmarks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{AttrKind, AttrValue, Attribute, Relation, Schema};
use crate::rules::{MDRule, Predicate, RuleSet};

#[derive(Debug, Clone)]
pub struct SynthInstance {
    pub relation: Relation,
    pub rules: RuleSet,
}

fn schema(cols: &[(&str, AttrKind)]) -> Schema {
    Schema::new(
        cols.iter()
            .map(|(n, k)| Attribute {
                name: n.to_string(),
                kind: *k,
            })
            .collect(),
        None,
    )
    .expect("distinct column names")
}

const SYLLABLES: &[&str] = &[
    "an", "bel", "cor", "dan", "el", "fin", "gar", "hol", "is", "jen", "kar", "lo", "mar", "ne", "or", "pet", "qui",
    "ros", "sam", "tor", "ul", "ver", "wen", "xa", "yor", "zel",
];

const WORDS: &[&str] = &[
    "data", "system", "query", "index", "graph", "model", "learning", "parallel", "stream", "cloud", "entity",
    "matching", "join", "storage", "network", "memory", "engine", "optimal", "fast", "scalable", "robust",
    "distributed", "adaptive", "efficient", "hybrid", "secure", "mobile", "semantic", "spatial", "temporal",
];

fn word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    (0..syllables).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect()
}

/// Replaces, deletes or inserts one character.
fn typo(rng: &mut ChaCha8Rng, s: &str) -> String {
    let mut c: Vec<char> = s.chars().collect();
    if c.is_empty() {
        return s.to_string();
    }
    let i = rng.gen_range(0..c.len());
    match rng.gen_range(0..3) {
        0 => c[i] = (b'a' + rng.gen_range(0..26)) as char,
        1 => {
            c.remove(i);
        }
        _ => c.insert(i, (b'a' + rng.gen_range(0..26)) as char),
    }
    c.into_iter().collect()
}

fn sentence(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len)
        .map(|_| *WORDS.choose(rng).expect("non-empty"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Small relation of perturbed entity copies with a random DNF of one to
/// five rules mixing equality and similarity predicates.
pub fn oracle_instance(seed: u64, max_tuples: usize) -> SynthInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=max_tuples.max(2));
    let entities = (n / 3).max(1);
    let base: Vec<(String, String, f64, String, String)> = (0..entities)
        .map(|_| {
            (
                format!("{} {}", word(&mut rng, 2), word(&mut rng, 3)),
                ["paris", "lyon", "rome", "oslo", "kyiv", "lima"][rng.gen_range(0..6)].to_string(),
                rng.gen_range(1990..2000) as f64,
                {
                    let len = rng.gen_range(3..9);
                    sentence(&mut rng, len)
                },
                format!("c{}", rng.gen_range(0..8)),
            )
        })
        .collect();
    let rows: Vec<Vec<AttrValue>> = (0..n)
        .map(|_| {
            let (name, city, year, desc, code) = &base[rng.gen_range(0..entities)];
            let name = if rng.gen_bool(0.4) { typo(&mut rng, name) } else { name.clone() };
            let city = if rng.gen_bool(0.1) { city.to_uppercase() } else { city.clone() };
            let desc = if rng.gen_bool(0.5) {
                format!("{desc} {}", WORDS[rng.gen_range(0..WORDS.len())])
            } else {
                desc.clone()
            };
            vec![
                AttrValue::text(name),
                AttrValue::text(city),
                AttrValue::number(*year + f64::from(rng.gen_bool(0.1) as u8)),
                AttrValue::text(desc),
                if rng.gen_bool(0.15) {
                    AttrValue::Missing
                } else {
                    AttrValue::text(code.clone())
                },
            ]
        })
        .collect();
    let relation = Relation::new(
        schema(&[
            ("name", AttrKind::ShortText),
            ("city", AttrKind::Categorical),
            ("year", AttrKind::Numeric),
            ("desc", AttrKind::LongText),
            ("code", AttrKind::Categorical),
        ]),
        rows,
    )
    .expect("rows match schema");

    let pool = [
        Predicate::eq("name"),
        Predicate::eq("city"),
        Predicate::eq("year"),
        Predicate::eq("code"),
        Predicate::sim("name", "edit", 0.7),
        Predicate::sim("name", "edit", 0.85),
        Predicate::sim("name", "jaccard", 0.5),
        Predicate::sim("desc", "jaccard", 0.6),
        Predicate::sim("desc", "jaccard", 0.8),
        Predicate::sim("desc", "exact_token", 1.0),
        Predicate::sim("city", "edit", 0.8),
    ];
    let n_rules = rng.gen_range(1..=5);
    let mut rules = Vec::new();
    for r in 0..n_rules {
        let k = rng.gen_range(1..=3);
        let precondition: Vec<Predicate> = pool.choose_multiple(&mut rng, k).cloned().collect();
        rules.push(MDRule {
            rule_id: format!("r{r}"),
            precondition,
        });
    }
    SynthInstance {
        relation,
        rules: RuleSet::new(rules).expect("valid synthetic rules"),
    }
}

/// One partition of `n` tuples whose first `heavy` tuples carry long token
/// lists (all sharing group `g0`), the rest three-token texts spread over
/// eight groups. Rule: `grp` equal and `text` Jaccard at least 0.8.
pub fn skewed_text(n: usize, heavy: usize, heavy_tokens: usize, seed: u64) -> SynthInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab: Vec<String> = (0..4 * heavy_tokens.max(8)).map(|i| format!("w{i}")).collect();
    let rows = (0..n)
        .map(|i| {
            let (grp, text) = if i < heavy {
                let t: Vec<&str> = vocab
                    .choose_multiple(&mut rng, heavy_tokens)
                    .map(String::as_str)
                    .collect();
                ("g0".to_string(), t.join(" "))
            } else {
                (
                    format!("g{}", rng.gen_range(0..8)),
                    (0..3).map(|_| word(&mut rng, 2)).collect::<Vec<_>>().join(" "),
                )
            };
            vec![AttrValue::text(grp), AttrValue::text(text)]
        })
        .collect();
    SynthInstance {
        relation: Relation::new(schema(&[("grp", AttrKind::Categorical), ("text", AttrKind::LongText)]), rows)
            .expect("rows match schema"),
        rules: RuleSet::new(vec![MDRule {
            rule_id: "skew".into(),
            precondition: vec![Predicate::eq("grp"), Predicate::sim("text", "jaccard", 0.8)],
        }])
        .expect("valid rule"),
    }
}

/// Distinct words in the shared vocabulary of [`ordering_workload`] texts.
const ORDERING_VOCABULARY: usize = 200;
/// Words drawn per text; about 105 distinct tokens each, a third shared with
/// any other text.
const ORDERING_TEXT_WORDS: usize = 150;

/// Each rule pairs a cheap, highly selective equality (near-unique codes)
/// with an expensive, unselective Jaccard over long texts drawn from a
/// shared vocabulary.
pub fn ordering_workload(n: usize, seed: u64) -> SynthInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vocab = std::collections::BTreeSet::new();
    while vocab.len() < ORDERING_VOCABULARY {
        vocab.insert(word(&mut rng, 3));
    }
    let vocab: Vec<String> = vocab.into_iter().collect();
    let rows = (0..n)
        .map(|_| {
            let mut row = Vec::new();
            for _ in 0..2 {
                row.push(AttrValue::text(format!("k{}", rng.gen_range(0..n.max(1)))));
                let text: Vec<&str> = (0..ORDERING_TEXT_WORDS)
                    .map(|_| vocab.choose(&mut rng).expect("non-empty").as_str())
                    .collect();
                row.push(AttrValue::text(text.join(" ")));
            }
            row
        })
        .collect();
    SynthInstance {
        relation: Relation::new(
            schema(&[
                ("zip", AttrKind::Categorical),
                ("bio", AttrKind::LongText),
                ("phone", AttrKind::Categorical),
                ("notes", AttrKind::LongText),
            ]),
            rows,
        )
        .expect("rows match schema"),
        rules: RuleSet::new(vec![
            MDRule {
                rule_id: "a".into(),
                precondition: vec![Predicate::sim("bio", "jaccard", 0.2), Predicate::eq("zip")],
            },
            MDRule {
                rule_id: "b".into(),
                precondition: vec![Predicate::sim("notes", "jaccard", 0.2), Predicate::eq("phone")],
            },
        ])
        .expect("valid rules"),
    }
}

/// Value lengths (in words) drawn for the similarity predicates of
/// [`cost_universe`]; geometric spacing keeps their costs apart.
const UNIVERSE_LENGTHS: [usize; 11] = [2, 3, 4, 6, 8, 11, 16, 22, 32, 45, 64];

/// Ten-attribute relation and a ten-predicate universe (one single-predicate
/// rule per predicate): one equality, one exact-token match, and four each of
/// jaccard and edit over attributes of distinct lengths, in shuffled order.
/// Equality and exact-token matches settle most pairs with a length check,
/// so one of each keeps the true costs distinct.
pub fn cost_universe(n: usize, seed: u64) -> SynthInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kinds = vec!["eq", "exact_token", "jaccard", "jaccard", "jaccard", "jaccard", "edit", "edit", "edit", "edit"];
    kinds.shuffle(&mut rng);
    let mut lens: Vec<usize> = UNIVERSE_LENGTHS.choose_multiple(&mut rng, 10).copied().collect();
    lens.shuffle(&mut rng);
    let names: Vec<String> = (0..10).map(|i| format!("a{i}")).collect();
    let cols: Vec<(&str, AttrKind)> = names.iter().map(|s| (s.as_str(), AttrKind::LongText)).collect();
    let rows = (0..n)
        .map(|_| {
            lens.iter()
                .map(|&l| {
                    let len = rng.gen_range(l.div_ceil(2)..=l);
                    AttrValue::text(sentence(&mut rng, len))
                })
                .collect()
        })
        .collect();
    let rules = names
        .iter()
        .zip(&kinds)
        .enumerate()
        .map(|(i, (a, kind))| {
            let p = match *kind {
                "eq" => Predicate::eq(a),
                "edit" => Predicate::sim(a, "edit", 0.8),
                "jaccard" => Predicate::sim(a, "jaccard", 0.5),
                _ => Predicate::sim(a, "exact_token", 1.0),
            };
            MDRule {
                rule_id: format!("u{i}"),
                precondition: vec![p],
            }
        })
        .collect();
    SynthInstance {
        relation: Relation::new(schema(&cols), rows).expect("rows match schema"),
        rules: RuleSet::new(rules).expect("valid rules"),
    }
}

/// Person-like records: `last` takes `keys` distinct values, `zip` another
/// `keys`. Rules: same last name with similar first name; same zip with
/// similar street.
pub fn scaling_relation(n: usize, keys: usize, seed: u64) -> SynthInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys = keys.max(1);
    let rows = (0..n)
        .map(|_| {
            let first = word(&mut rng, 3);
            let street = format!("{} {} street", rng.gen_range(1..500), word(&mut rng, 2));
            vec![
                AttrValue::text(format!("l{}", rng.gen_range(0..keys))),
                AttrValue::text(first),
                AttrValue::text(format!("z{}", rng.gen_range(0..keys))),
                AttrValue::text(street),
            ]
        })
        .collect();
    SynthInstance {
        relation: Relation::new(
            schema(&[
                ("last", AttrKind::Categorical),
                ("first", AttrKind::ShortText),
                ("zip", AttrKind::Categorical),
                ("street", AttrKind::ShortText),
            ]),
            rows,
        )
        .expect("rows match schema"),
        rules: RuleSet::new(vec![
            MDRule {
                rule_id: "name".into(),
                precondition: vec![Predicate::eq("last"), Predicate::sim("first", "edit", 0.8)],
            },
            MDRule {
                rule_id: "addr".into(),
                precondition: vec![Predicate::eq("zip"), Predicate::sim("street", "jaccard", 0.6)],
            },
        ])
        .expect("valid rules"),
    }
}

/// `n_rules` rules over exactly `n_predicates` distinct predicates on a
/// twenty-attribute relation of `n` tuples.
pub fn large_rule_set(n: usize, n_rules: usize, n_predicates: usize, seed: u64) -> SynthInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = (0..20).map(|i| format!("f{i}")).collect();
    let cols: Vec<(&str, AttrKind)> = names.iter().map(|s| (s.as_str(), AttrKind::ShortText)).collect();
    let rows = (0..n)
        .map(|_| {
            (0..names.len())
                .map(|_| AttrValue::text(format!("{} {}", word(&mut rng, 2), word(&mut rng, 1))))
                .collect()
        })
        .collect();
    let mut universe = Vec::new();
    'outer: for step in 0.. {
        for a in &names {
            if universe.len() == n_predicates {
                break 'outer;
            }
            universe.push(match step % 3 {
                0 if step == 0 => Predicate::eq(a),
                0 => Predicate::sim(a, "edit", 0.5 + 0.01 * step as f64),
                1 => Predicate::sim(a, "jaccard", 0.3 + 0.01 * step as f64),
                _ => Predicate::sim(a, "edit", 0.9 - 0.01 * step as f64),
            });
        }
    }
    let mut order: Vec<usize> = (0..universe.len()).collect();
    order.shuffle(&mut rng);
    let n_rules = n_rules.max(1);
    let mut rules: Vec<Vec<Predicate>> = vec![Vec::new(); n_rules];
    for (k, &u) in order.iter().enumerate() {
        rules[k % n_rules].push(universe[u].clone());
    }
    for r in rules.iter_mut() {
        if r.is_empty() {
            r.push(universe[rng.gen_range(0..universe.len())].clone());
        }
        // Share prefixes across rules now and then.
        if rng.gen_bool(0.3) && !r.contains(&universe[0]) {
            r.push(universe[0].clone());
        }
    }
    SynthInstance {
        relation: Relation::new(schema(&cols), rows).expect("rows match schema"),
        rules: RuleSet::new(
            rules
                .into_iter()
                .enumerate()
                .map(|(i, precondition)| MDRule {
                    rule_id: format!("g{i}"),
                    precondition,
                })
                .collect(),
        )
        .expect("valid rules"),
    }
}
