//! Hash partitioning by the root predicates of the execution tree,
//! device scheduling and the staged blocking pipeline.
//!
//! Every rule's path starts with one root edge, so a pair can only be a
//! candidate if it satisfies some root predicate. Each root branch
//! partitions the relation on its own predicate: equality roots by value,
//! similarity roots by MinHash bands. Partitions of one branch are disjoint;
//! pairs that similarity hashing may separate are recovered by cross pulls
//! between partitions sharing any further band, and between the pieces of
//! an oversized group.

mod pipeline;
mod schedule;

pub use pipeline::{pipeline_run, DeviceConfig, PipelineConfig, PipelineMode, PipelineResult, StageTimings};
pub use schedule::{schedule, Schedule, Scheduler};

use std::collections::{BTreeSet, HashMap};

use crate::epg::selectivity::{combine, equality_key, minhash, mix64, shingle_kind, shingles, ShingleKind};
use crate::engine::{run_cross, CandidateSet, EngineConfig};
use crate::epg::{EdgeLabel, ExecutionPath, ExecutionTree};
use crate::error::{Error, Result};
use crate::model::{DataPartition, Relation, Schema};
use crate::prepared::{BoundOp, BoundPredicate, BoundRhs};
use crate::rules::Predicate;
use crate::similarity::MeasureRegistry;

/// Bands per MinHash partitioner.
pub const DEFAULT_BANDS: usize = 8;
/// Target probability that a pair at the threshold shares some band.
const BAND_RECALL_TARGET: f64 = 0.95;
const MAX_ROWS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub enum PartitionKey {
    /// Equal values (trimmed, case-folded text; numbers by value).
    Equality { attr: usize },
    /// MinHash bands over shingles; band 0 decides the partition.
    MinHash {
        attr: usize,
        kind: ShingleKind,
        fold: bool,
        bands: usize,
        rows: usize,
    },
    /// One group holding every tuple.
    Broadcast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partitioner {
    pub branch: usize,
    pub predicate: Predicate,
    pub key: PartitionKey,
}

/// Rows per band so that a pair whose shingle Jaccard is `j` shares at
/// least one of `bands` bands with probability `BAND_RECALL_TARGET`.
pub fn rows_for(j: f64, bands: usize) -> usize {
    (1..=MAX_ROWS)
        .rev()
        .find(|&r| 1.0 - (1.0 - j.powi(r as i32)).powi(bands as i32) >= BAND_RECALL_TARGET)
        .unwrap_or(1)
}

/// Lower bound on the shingle Jaccard implied by a similarity threshold.
fn shingle_jaccard_floor(kind: ShingleKind, threshold: f64) -> f64 {
    match kind {
        ShingleKind::Tokens => threshold,
        // One edit touches up to three trigrams.
        ShingleKind::CharTrigrams => {
            let d = 3.0 * (1.0 - threshold);
            ((1.0 - d) / (1.0 + d)).max(0.05)
        }
    }
}

/// One partitioner per root edge, in visiting order.
pub fn derive_partitioners(tree: &ExecutionTree, schema: &Schema, reg: &MeasureRegistry) -> Result<Vec<Partitioner>> {
    let mut out = Vec::new();
    for e in tree.root_edges() {
        let EdgeLabel::Predicate(u) = tree.edges[e].label else {
            continue;
        };
        let predicate = tree.universe[u].clone();
        let bp = BoundPredicate::bind(&predicate, schema, reg)?;
        let same_attr = matches!(bp.rhs, BoundRhs::Attr(a) if a == bp.lhs);
        let key = match (&bp.op, same_attr) {
            (_, false) => PartitionKey::Broadcast,
            (BoundOp::Eq, true) => PartitionKey::Equality { attr: bp.lhs },
            (BoundOp::Sim { threshold, .. }, true) => {
                let (kind, fold) = shingle_kind(&bp.op).expect("similarity predicate has a shingle kind");
                PartitionKey::MinHash {
                    attr: bp.lhs,
                    kind,
                    fold,
                    bands: DEFAULT_BANDS,
                    rows: rows_for(shingle_jaccard_floor(kind, *threshold), DEFAULT_BANDS),
                }
            }
        };
        out.push(Partitioner {
            branch: out.len(),
            predicate,
            key,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PartitionConfig {
    /// Off means one partition with every tuple.
    pub enabled: bool,
    pub max_partition_size: usize,
    /// Cross pulls between band-sharing partitions and split siblings.
    pub cross_pulls: bool,
    pub seed: u64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            enabled: true,
            max_partition_size: 65_536,
            cross_pulls: true,
            seed: 0,
        }
    }
}

/// Comparison of every tuple of `i` with every tuple of `j`, executed by the
/// device that owns `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CrossPull {
    pub i: usize,
    pub j: usize,
}

pub fn check_pull(pi: &DataPartition, pj: &DataPartition) -> Result<CrossPull> {
    if pi.pid == pj.pid {
        return Err(Error::Config(format!("partition {} cannot pull from itself", pi.pid)));
    }
    if pi.branch_id != pj.branch_id {
        return Err(Error::Config(format!(
            "partitions {} and {} belong to different branches",
            pi.pid, pj.pid
        )));
    }
    Ok(CrossPull { i: pi.pid, j: pj.pid })
}

/// Evaluates every pair with one tuple in `pi` and one in `pj`.
pub fn cross_partition_pull(
    rel: &Relation,
    pi: &DataPartition,
    pj: &DataPartition,
    path: &ExecutionPath,
    cfg: &EngineConfig,
) -> Result<CandidateSet> {
    check_pull(pi, pj)?;
    run_cross(rel, pi, pj, path, cfg)
}

/// Partitions and pulls of one branch.
#[derive(Debug, Clone, Default)]
pub struct BranchPartitioning {
    pub partitions: Vec<DataPartition>,
    pub pulls: Vec<CrossPull>,
}

fn split_oversize(group: Vec<usize>, max: usize) -> Vec<Vec<usize>> {
    if group.len() <= max {
        return vec![group];
    }
    let pieces = group.len().div_ceil(max);
    let mut out = vec![Vec::with_capacity(max); pieces];
    for (k, t) in group.into_iter().enumerate() {
        out[k % pieces].push(t);
    }
    out
}

/// Partitions `rel` for one branch. Partition ids start at `first_pid`.
pub fn partition_branch(
    rel: &Relation,
    part: &Partitioner,
    cfg: &PartitionConfig,
    first_pid: usize,
) -> BranchPartitioning {
    let n = rel.len();
    let seed = mix64(cfg.seed ^ part.branch as u64);
    // Group key per tuple, plus extra band keys for MinHash.
    let mut groups: HashMap<u64, Vec<usize>> = HashMap::new();
    let mut bands: Vec<HashMap<u64, Vec<usize>>> = Vec::new();
    let mut residual = Vec::new();
    // Missing keys: the root predicate never holds, so each tuple stands alone.
    let mut singletons = Vec::new();
    match &part.key {
        PartitionKey::Broadcast => {
            groups.insert(0, (0..n).collect());
        }
        PartitionKey::Equality { attr } => {
            for tid in 0..n {
                match equality_key(rel.tuple(tid).value(*attr), seed) {
                    Some(k) => groups.entry(k).or_default().push(tid),
                    None => singletons.push(tid),
                }
            }
        }
        PartitionKey::MinHash {
            attr,
            kind,
            fold,
            bands: nb,
            rows,
        } => {
            bands.resize_with(nb.saturating_sub(1), HashMap::new);
            for tid in 0..n {
                let v = rel.tuple(tid).value(*attr);
                if v.is_missing() {
                    singletons.push(tid);
                    continue;
                }
                let sh = shingles(v.as_str(), *kind, *fold);
                if sh.is_empty() {
                    residual.push(tid);
                    continue;
                }
                for b in 0..*nb {
                    let key = combine(&minhash(&sh, *rows, seed, b * rows), seed ^ b as u64);
                    if b == 0 {
                        groups.entry(key).or_default().push(tid);
                    } else {
                        bands[b - 1].entry(key).or_default().push(tid);
                    }
                }
            }
        }
    }
    let mut ordered: Vec<Vec<usize>> = groups.into_values().filter(|g| !g.is_empty()).collect();
    if !residual.is_empty() {
        ordered.push(residual);
    }
    ordered.extend(singletons.into_iter().map(|t| vec![t]));
    ordered.sort_unstable_by_key(|g| g[0]);

    let mut partitions = Vec::new();
    let mut pulls = BTreeSet::new();
    let mut pid_of = vec![usize::MAX; if bands.is_empty() { 0 } else { n }];
    for g in ordered {
        let pieces = split_oversize(g, cfg.max_partition_size.max(1));
        let first = first_pid + partitions.len();
        for (k, piece) in pieces.into_iter().enumerate() {
            let pid = first + k;
            if cfg.cross_pulls {
                for j in first..pid {
                    pulls.insert(CrossPull { i: j, j: pid });
                }
            }
            if !pid_of.is_empty() {
                for &t in &piece {
                    pid_of[t] = pid;
                }
            }
            partitions.push(DataPartition {
                pid,
                tuple_refs: piece,
                branch_id: Some(part.branch),
            });
        }
    }
    for band in bands.into_iter().filter(|_| cfg.cross_pulls) {
        for tids in band.into_values() {
            let pids: BTreeSet<usize> = tids.iter().map(|&t| pid_of[t]).collect();
            let pids: Vec<usize> = pids.into_iter().collect();
            for a in 0..pids.len() {
                for b in a + 1..pids.len() {
                    pulls.insert(CrossPull { i: pids[a], j: pids[b] });
                }
            }
        }
    }
    BranchPartitioning {
        partitions,
        pulls: pulls.into_iter().collect(),
    }
}

/// All branches, with globally unique partition ids.
pub fn partition_relation(rel: &Relation, parts: &[Partitioner], cfg: &PartitionConfig) -> Vec<BranchPartitioning> {
    let mut next = 0;
    parts
        .iter()
        .map(|p| {
            let b = partition_branch(rel, p, cfg, next);
            next += b.partitions.len();
            b
        })
        .collect()
}
