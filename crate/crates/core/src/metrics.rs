//! Blocking quality against labeled matches, plus ranking agreement.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::engine::CandidateSet;
use crate::error::{Error, Result};
use crate::model::Relation;
use crate::partition::StageTimings;

fn canon(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

/// Unordered matching pairs of tids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    pairs: HashSet<(usize, usize)>,
}

impl GroundTruth {
    /// Rejects self-pairs and tids `>= n`.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>, n: usize) -> Result<Self> {
        let mut out = HashSet::new();
        for (a, b) in pairs {
            if a == b {
                return Err(Error::Config(format!("ground truth pair ({a}, {b}) is a self-pair")));
            }
            if a >= n || b >= n {
                return Err(Error::Config(format!(
                    "ground truth pair ({a}, {b}) references a tuple outside 0..{n}"
                )));
            }
            out.insert(canon(a, b));
        }
        Ok(GroundTruth { pairs: out })
    }

    /// All pairs sharing an entity id; tuples without one match nothing.
    pub fn from_eid(rel: &Relation) -> Result<Self> {
        let eid = rel
            .schema()
            .eid_attr()
            .ok_or_else(|| Error::Schema("relation has no entity id column".into()))?;
        let col = rel.schema().position(eid).expect("eid attribute is in the schema");
        let mut groups: HashMap<&str, Vec<usize>> = HashMap::new();
        for tid in 0..rel.len() {
            let v = rel.tuple(tid).value(col);
            if !v.is_missing() {
                groups.entry(v.as_str()).or_default().push(tid);
            }
        }
        let mut pairs = HashSet::new();
        for g in groups.values() {
            for (i, &a) in g.iter().enumerate() {
                for &b in &g[i + 1..] {
                    pairs.insert(canon(a, b));
                }
            }
        }
        Ok(GroundTruth { pairs })
    }

    /// Two-column CSV of tids, with or without a header row.
    pub fn load_pairs(path: impl AsRef<Path>, n: usize) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::Parse {
                line: 0,
                message: format!("{}: {e}", path.display()),
            })?;
        let mut pairs = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse {
                line: i as u64 + 1,
                message: e.to_string(),
            })?;
            if rec.len() < 2 {
                return Err(Error::Parse {
                    line: i as u64 + 1,
                    message: "expected two tid columns".into(),
                });
            }
            match (rec[0].parse::<usize>(), rec[1].parse::<usize>()) {
                (Ok(a), Ok(b)) => pairs.push((a, b)),
                _ if i == 0 => continue,
                _ => {
                    return Err(Error::Parse {
                        line: i as u64 + 1,
                        message: format!("not a tid pair: {:?}", rec),
                    })
                }
            }
        }
        Self::from_pairs(pairs, n)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        self.pairs.contains(&canon(a, b))
    }

    pub fn pairs(&self) -> &HashSet<(usize, usize)> {
        &self.pairs
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockSteals {
    pub intervals_own: usize,
    pub intervals_stolen: usize,
    pub intra_steals: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub cssr: f64,
    pub candidates: usize,
    pub true_positives: usize,
    pub ground_truth: usize,
    pub universe_size: usize,
    pub wall_time_s: f64,
    pub stage_seconds: Vec<(String, f64)>,
    pub blocks: Vec<BlockSteals>,
}

/// Quality of `ca` against `gt`; pairs are compared unordered and `cssr`
/// divides by `universe_size²`.
pub fn compute_metrics(ca: &CandidateSet, gt: &GroundTruth, universe_size: usize) -> MetricsReport {
    let found: HashSet<(usize, usize)> = ca.pairs.iter().map(|c| canon(c.t, c.s)).collect();
    let tp = found.iter().filter(|p| gt.pairs.contains(p)).count();
    let precision = if found.is_empty() {
        if gt.is_empty() {
            1.0
        } else {
            0.0
        }
    } else {
        tp as f64 / found.len() as f64
    };
    let recall = if gt.is_empty() { 1.0 } else { tp as f64 / gt.len() as f64 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let cssr = if universe_size == 0 {
        0.0
    } else {
        found.len() as f64 / (universe_size as f64 * universe_size as f64)
    };
    MetricsReport {
        precision,
        recall,
        f1,
        cssr,
        candidates: found.len(),
        true_positives: tp,
        ground_truth: gt.len(),
        universe_size,
        wall_time_s: ca.stats.wall.as_secs_f64(),
        stage_seconds: Vec::new(),
        blocks: ca
            .stats
            .blocks
            .iter()
            .map(|b| BlockSteals {
                intervals_own: b.intervals_own,
                intervals_stolen: b.intervals_stolen,
                intra_steals: b.intra_steals,
            })
            .collect(),
    }
}

impl MetricsReport {
    pub fn with_stages(mut self, t: &StageTimings) -> Self {
        self.wall_time_s = t.total.as_secs_f64();
        self.stage_seconds = [
            ("partition", t.partition),
            ("schedule", t.schedule),
            ("transfer", t.transfer),
            ("execute", t.execute),
            ("collect", t.collect),
        ]
        .iter()
        .map(|(n, d)| (n.to_string(), d.as_secs_f64()))
        .collect();
        self
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "precision   {:.6}", self.precision);
        let _ = writeln!(s, "recall      {:.6}", self.recall);
        let _ = writeln!(s, "f1          {:.6}", self.f1);
        let _ = writeln!(s, "cssr        {:.8}", self.cssr);
        let _ = writeln!(
            s,
            "candidates  {} (true {}, ground truth {})",
            self.candidates, self.true_positives, self.ground_truth
        );
        let _ = writeln!(s, "wall        {:.3}s", self.wall_time_s);
        for (name, secs) in &self.stage_seconds {
            let _ = writeln!(s, "  {name:<10}{secs:.3}s");
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let _ = writeln!(
                s,
                "block {i}: intervals own {} stolen {}, intra steals {}",
                b.intervals_own, b.intervals_stolen, b.intra_steals
            );
        }
        s
    }
}

/// NDCG of `ranking` (item indices, best first) under graded `relevance`.
pub fn ndcg(ranking: &[usize], relevance: &[f64]) -> f64 {
    let dcg = |items: &mut dyn Iterator<Item = f64>| -> f64 {
        items
            .enumerate()
            .map(|(k, r)| r / ((k + 2) as f64).log2())
            .sum()
    };
    let got = dcg(&mut ranking.iter().map(|&i| relevance[i]));
    let mut ideal: Vec<f64> = relevance.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let best = dcg(&mut ideal.into_iter().take(ranking.len()));
    if best > 0.0 {
        got / best
    } else {
        1.0
    }
}

/// Relevance `n - rank` for items ranked by ascending `scores`.
pub fn rank_relevance(scores: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut rel = vec![0.0; scores.len()];
    for (r, &i) in idx.iter().enumerate() {
        rel[i] = (scores.len() - r) as f64;
    }
    rel
}
