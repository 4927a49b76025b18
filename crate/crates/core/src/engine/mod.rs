//! Parallel execution of a compiled path over all tuple pairs of a
//! partition (or across two partitions).
//!
//! Outer tuples are cut into intervals of `n_t`; each block owns the
//! intervals the static window assignment gives it. Within a claimed
//! interval every outer tuple gets a lane slot holding its remaining inner
//! range. Idle blocks first take unclaimed intervals from other blocks
//! (inter stealing), then split the largest remaining lane ranges of the
//! busiest block in half (intra stealing).

mod buffer;
mod intervals;
mod lanes;

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

pub use buffer::{flush_results, BlockBuffer, CandidatePair, ResultSink};
pub use intervals::{BlockCursor, Claim, IntervalTable};
pub use lanes::{split_range, LaneRange, MAX_WORKLOAD_TUPLES};

use lanes::{LaneSlot, Packed};

use crate::epg::{ExecutionPath, Instruction};
use crate::error::{Error, Result};
use crate::model::{DataPartition, Relation};
use crate::prepared::PreparedData;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stealing {
    Off,
    Inter,
    #[default]
    InterIntra,
}

impl std::str::FromStr for Stealing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" | "none" => Ok(Stealing::Off),
            "inter" => Ok(Stealing::Inter),
            "inter+intra" | "inter-intra" | "full" => Ok(Stealing::InterIntra),
            _ => Err(Error::Config(format!("unknown stealing mode `{s}` (off, inter, inter+intra)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Outer tuples per interval.
    pub n_t: usize,
    /// Intervals per assignment window.
    pub n_w: usize,
    /// Lane ranges a thief takes per intra steal.
    pub lanes_per_block: usize,
    pub num_blocks: usize,
    /// Evaluate each unordered pair once; needs a symmetric path.
    pub symmetric_mode: bool,
    pub stealing: Stealing,
    pub buffer_half_capacity: usize,
    /// Comparisons an owner takes from its lane per atomic claim.
    pub claim_chunk: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            n_t: 256,
            n_w: 1024,
            lanes_per_block: 32,
            num_blocks: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            symmetric_mode: true,
            stealing: Stealing::InterIntra,
            buffer_half_capacity: 4096,
            claim_chunk: 8,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_t", self.n_t),
            ("n_w", self.n_w),
            ("lanes_per_block", self.lanes_per_block),
            ("num_blocks", self.num_blocks),
            ("buffer_half_capacity", self.buffer_half_capacity),
            ("claim_chunk", self.claim_chunk),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Reuse and value bitmaps of one pair evaluation, one bit per slot.
#[derive(Debug, Clone)]
pub struct PairBitmaps {
    reuse: Vec<u64>,
    value: Vec<u64>,
    /// Scorer calls made so far.
    pub evals: u64,
}

impl PairBitmaps {
    pub fn new(path: &ExecutionPath) -> Self {
        let w = path.bitmap_words();
        PairBitmaps {
            reuse: vec![0; w],
            value: vec![0; w],
            evals: 0,
        }
    }

    #[inline]
    fn clear(&mut self) {
        self.reuse.iter_mut().for_each(|w| *w = 0);
    }

    #[inline]
    fn cached(&self, slot: usize) -> Option<bool> {
        let bit = 1u64 << (slot % 64);
        (self.reuse[slot / 64] & bit != 0).then(|| self.value[slot / 64] & bit != 0)
    }

    #[inline]
    fn record(&mut self, slot: usize, v: bool) {
        let bit = 1u64 << (slot % 64);
        self.reuse[slot / 64] |= bit;
        if v {
            self.value[slot / 64] |= bit;
        } else {
            self.value[slot / 64] &= !bit;
        }
    }
}

/// Observer of pair evaluation, used by tests and diagnostics.
pub trait EvalProbe {
    fn pair_start(&mut self) {}
    fn instruction(&mut self, _ip: usize) {}
    fn scorer_call(&mut self, _slot: usize) {}
    fn reused(&mut self, _slot: usize) {}
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoProbe;

impl EvalProbe for NoProbe {}

/// Counts instructions, scorer calls and reuses; tracks the largest number
/// of scorer calls any slot received within a single pair.
#[derive(Debug, Clone, Default)]
pub struct CountingProbe {
    pub pairs: u64,
    pub instructions: u64,
    pub scorer_calls: u64,
    pub reuses: u64,
    pub max_calls_per_slot_in_pair: u32,
    current: Vec<u32>,
}

impl EvalProbe for CountingProbe {
    fn pair_start(&mut self) {
        self.pairs += 1;
        self.current.iter_mut().for_each(|c| *c = 0);
    }

    fn instruction(&mut self, _ip: usize) {
        self.instructions += 1;
    }

    fn scorer_call(&mut self, slot: usize) {
        self.scorer_calls += 1;
        if self.current.len() <= slot {
            self.current.resize(slot + 1, 0);
        }
        self.current[slot] += 1;
        self.max_calls_per_slot_in_pair = self.max_calls_per_slot_in_pair.max(self.current[slot]);
    }

    fn reused(&mut self, _slot: usize) {
        self.reuses += 1;
    }
}

/// Runs `path` on local positions `(t, s)`; returns the rule index of the
/// first checkpoint reached.
#[inline]
pub fn evaluate_pair<P: EvalProbe>(
    path: &ExecutionPath,
    data: &PreparedData,
    t: usize,
    s: usize,
    bm: &mut PairBitmaps,
    probe: &mut P,
) -> Option<usize> {
    bm.clear();
    probe.pair_start();
    let ins = &path.instructions;
    let mut ip = 0;
    while ip < ins.len() {
        probe.instruction(ip);
        match ins[ip] {
            Instruction::Eval { slot, fail_jump } => {
                let v = match bm.cached(slot) {
                    Some(v) => {
                        probe.reused(slot);
                        v
                    }
                    None => {
                        probe.scorer_call(slot);
                        bm.evals += 1;
                        let v = data.eval(slot, t, s);
                        bm.record(slot, v);
                        v
                    }
                };
                ip = if v { ip + 1 } else { fail_jump };
            }
            Instruction::Checkpoint { rule } => return Some(rule),
        }
    }
    None
}

/// Every rule whose precondition holds on `(t, s)`, in checkpoint order.
pub fn all_witnesses(path: &ExecutionPath, data: &PreparedData, t: usize, s: usize) -> Vec<usize> {
    let mut bm = PairBitmaps::new(path);
    let mut out = Vec::new();
    let ins = &path.instructions;
    let mut ip = 0;
    while ip < ins.len() {
        match ins[ip] {
            Instruction::Eval { slot, fail_jump } => {
                let v = bm.cached(slot).unwrap_or_else(|| {
                    let v = data.eval(slot, t, s);
                    bm.record(slot, v);
                    v
                });
                ip = if v { ip + 1 } else { fail_jump };
            }
            Instruction::Checkpoint { rule } => {
                out.push(rule);
                ip += 1;
            }
        }
    }
    out
}

/// Which pairs of a prepared tuple set are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Workload {
    /// All pairs among the tuples.
    SelfJoin,
    /// Positions `[0, split)` against `[split, len)`.
    Cross { split: usize },
}

#[derive(Debug, Clone, Default)]
pub struct BlockStats {
    pub intervals_own: usize,
    pub intervals_stolen: usize,
    pub intra_steals: usize,
    pub ranges_stolen: usize,
    pub comparisons: u64,
    pub predicate_evals: u64,
    pub window_jumps: usize,
    pub flushes: usize,
    pub results: usize,
    pub busy: Duration,
    /// Time from run start until the block ran out of work.
    pub finish: Duration,
}

#[derive(Debug, Clone, Default)]
pub struct RunStats {
    pub blocks: Vec<BlockStats>,
    pub intervals: usize,
    pub wall: Duration,
}

impl RunStats {
    pub fn comparisons(&self) -> u64 {
        self.blocks.iter().map(|b| b.comparisons).sum()
    }

    pub fn predicate_evals(&self) -> u64 {
        self.blocks.iter().map(|b| b.predicate_evals).sum()
    }

    /// Latest over earliest block finish time.
    pub fn finish_ratio(&self) -> f64 {
        let f: Vec<f64> = self.blocks.iter().map(|b| b.finish.as_secs_f64()).collect();
        let max = f.iter().cloned().fold(0.0, f64::max);
        let min = f.iter().cloned().fold(f64::INFINITY, f64::min);
        if min > 0.0 {
            max / min
        } else if max > 0.0 {
            f64::INFINITY
        } else {
            1.0
        }
    }

    pub fn merge(&mut self, other: &RunStats) {
        if self.blocks.len() < other.blocks.len() {
            self.blocks.resize(other.blocks.len(), BlockStats::default());
        }
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            a.intervals_own += b.intervals_own;
            a.intervals_stolen += b.intervals_stolen;
            a.intra_steals += b.intra_steals;
            a.ranges_stolen += b.ranges_stolen;
            a.comparisons += b.comparisons;
            a.predicate_evals += b.predicate_evals;
            a.window_jumps += b.window_jumps;
            a.flushes += b.flushes;
            a.results += b.results;
            a.busy += b.busy;
            a.finish += b.finish;
        }
        self.intervals += other.intervals;
        self.wall += other.wall;
    }
}

/// Candidate pairs with their witness rule.
#[derive(Debug, Clone, Default)]
pub struct CandidateSet {
    pub pairs: Vec<CandidatePair>,
    pub rule_ids: Vec<String>,
    pub stats: RunStats,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sort(&mut self) {
        self.pairs.sort_unstable();
    }

    pub fn pair_set(&self) -> HashSet<(usize, usize)> {
        self.pairs.iter().map(|c| (c.t, c.s)).collect()
    }

    pub fn witness_map(&self) -> HashMap<(usize, usize), &str> {
        self.pairs
            .iter()
            .map(|c| ((c.t, c.s), self.rule_ids[c.rule].as_str()))
            .collect()
    }

    /// `(t_tid, s_tid, rule_id)` triples sorted by pair.
    pub fn triples(&self) -> Vec<(usize, usize, &str)> {
        let mut v: Vec<_> = self
            .pairs
            .iter()
            .map(|c| (c.t, c.s, self.rule_ids[c.rule].as_str()))
            .collect();
        v.sort_unstable();
        v
    }
}

struct BlockLanes {
    slots: Vec<LaneSlot>,
    active: AtomicUsize,
}

impl BlockLanes {
    fn remaining(&self) -> usize {
        let n = self.active.load(Ordering::Acquire);
        self.slots[..n].iter().map(|s| s.load().remaining()).sum()
    }
}

struct Shared<'a> {
    data: &'a PreparedData,
    path: &'a ExecutionPath,
    cfg: &'a EngineConfig,
    table: IntervalTable,
    lanes: Vec<BlockLanes>,
    sink: ResultSink,
    kind: Kind,
    split: usize,
    start: Instant,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    SelfSym,
    SelfAsym,
    CrossSym,
    CrossAsym,
}

struct Worker<'s, 'a, P> {
    shared: &'s Shared<'a>,
    id: usize,
    stats: BlockStats,
    buffer: BlockBuffer,
    bm: PairBitmaps,
    probe: P,
}

impl<P: EvalProbe> Worker<'_, '_, P> {
    #[inline]
    fn compare(&mut self, t: usize, s: usize) -> Option<usize> {
        self.stats.comparisons += 1;
        evaluate_pair(self.shared.path, self.shared.data, t, s, &mut self.bm, &mut self.probe)
    }

    #[inline]
    fn emit(&mut self, t: usize, s: usize, rule: usize) {
        let d = self.shared.data;
        let (mut a, mut b) = (d.tid(t), d.tid(s));
        if matches!(self.shared.kind, Kind::CrossSym) && a > b {
            std::mem::swap(&mut a, &mut b);
        }
        self.stats.results += 1;
        self.buffer.push(CandidatePair { t: a, s: b, rule }, &self.shared.sink);
    }

    fn execute(&mut self, pos: usize, a: usize, b: usize) {
        let split = self.shared.split;
        for j in a..b {
            match self.shared.kind {
                Kind::SelfSym => {
                    if let Some(r) = self.compare(pos, j) {
                        self.emit(pos, j, r);
                    }
                }
                Kind::SelfAsym => {
                    if j != pos {
                        if let Some(r) = self.compare(pos, j) {
                            self.emit(pos, j, r);
                        }
                    }
                }
                Kind::CrossSym => {
                    let s = split + j;
                    if self.shared.data.tid(pos) == self.shared.data.tid(s) {
                        continue;
                    }
                    if let Some(r) = self.compare(pos, s) {
                        self.emit(pos, s, r);
                    }
                }
                Kind::CrossAsym => {
                    let s = split + j;
                    if self.shared.data.tid(pos) == self.shared.data.tid(s) {
                        continue;
                    }
                    if let Some(r) = self.compare(pos, s) {
                        self.emit(pos, s, r);
                    }
                    if let Some(r) = self.compare(s, pos) {
                        self.emit(s, pos, r);
                    }
                }
            }
        }
    }

    fn initial_range(&self, pos: usize) -> (usize, usize) {
        let n = self.shared.data.len();
        match self.shared.kind {
            Kind::SelfSym => (pos + 1, n),
            Kind::SelfAsym => (0, n),
            Kind::CrossSym | Kind::CrossAsym => (0, n - self.shared.split),
        }
    }

    fn drain_own(&mut self) {
        let lanes = &self.shared.lanes[self.id];
        let n = lanes.active.load(Ordering::Acquire);
        let chunk = self.shared.cfg.claim_chunk;
        for k in 0..n {
            while let Some((pos, a, b)) = lanes.slots[k].claim_front(chunk) {
                self.execute(pos, a, b);
            }
        }
    }

    fn install_interval(&mut self, interval: usize) {
        let (lo, hi) = self.shared.table.bounds(interval);
        let lanes = &self.shared.lanes[self.id];
        for (k, pos) in (lo..hi).enumerate() {
            let (start, stop) = self.initial_range(pos);
            lanes.slots[k].install(Packed { pos, start, stop });
        }
        lanes.active.store(hi - lo, Ordering::Release);
    }

    /// Splits lane ranges of the block with the most remaining work.
    fn steal_intra(&mut self) -> bool {
        let shared = self.shared;
        let mut victims: Vec<(usize, usize)> = (0..shared.lanes.len())
            .filter(|&b| b != self.id)
            .map(|b| (shared.lanes[b].remaining(), b))
            .filter(|&(r, _)| r >= 2)
            .collect();
        victims.sort_unstable_by(|a, b| b.cmp(a));
        let own = &shared.lanes[self.id];
        let cap = shared.cfg.lanes_per_block.min(own.slots.len());
        for (_, v) in victims {
            let vl = &shared.lanes[v];
            let n = vl.active.load(Ordering::Acquire);
            let mut got = 0;
            for k in 0..n {
                if got == cap {
                    break;
                }
                if let Some(p) = vl.slots[k].steal_half() {
                    own.slots[got].install(p);
                    got += 1;
                }
            }
            if got > 0 {
                own.active.store(got, Ordering::Release);
                self.stats.intra_steals += 1;
                self.stats.ranges_stolen += got;
                return true;
            }
        }
        false
    }

    fn run(mut self) -> (BlockStats, P) {
        let shared = self.shared;
        let mut cursor = BlockCursor::default();
        let inter = shared.cfg.stealing != Stealing::Off;
        let intra = shared.cfg.stealing == Stealing::InterIntra;
        let t0 = Instant::now();
        loop {
            if let Some(c) = shared.table.claim_interval(self.id, &mut cursor, inter) {
                if c.stolen {
                    self.stats.intervals_stolen += 1;
                } else {
                    self.stats.intervals_own += 1;
                }
                self.install_interval(c.interval);
            } else if !(intra && self.steal_intra()) {
                break;
            }
            self.drain_own();
        }
        self.buffer.finish(&shared.sink);
        self.stats.flushes = self.buffer.flushes;
        self.stats.window_jumps = cursor.window_jumps;
        self.stats.predicate_evals = self.bm.evals;
        self.stats.busy = t0.elapsed();
        self.stats.finish = shared.start.elapsed();
        (self.stats, self.probe)
    }
}

/// Runs `path` over a prepared tuple set, one probe per block.
pub fn run_prepared_probed<P: EvalProbe + Default + Send>(
    data: &PreparedData,
    path: &ExecutionPath,
    workload: Workload,
    cfg: &EngineConfig,
) -> Result<(CandidateSet, Vec<P>)> {
    cfg.validate()?;
    if data.slot_count() != path.slots.len() {
        return Err(Error::Config(format!(
            "prepared data has {} slots, path has {}",
            data.slot_count(),
            path.slots.len()
        )));
    }
    if cfg.symmetric_mode && !path.is_symmetric() {
        return Err(Error::Config(
            "symmetric mode requires every path predicate to be symmetric (same attribute, symmetric measure)".into(),
        ));
    }
    let (kind, outer, split) = match workload {
        Workload::SelfJoin => (
            if cfg.symmetric_mode { Kind::SelfSym } else { Kind::SelfAsym },
            data.len(),
            0,
        ),
        Workload::Cross { split } => {
            if split > data.len() {
                return Err(Error::Config(format!("cross split {split} beyond {} tuples", data.len())));
            }
            (
                if cfg.symmetric_mode { Kind::CrossSym } else { Kind::CrossAsym },
                split,
                split,
            )
        }
    };
    if outer > MAX_WORKLOAD_TUPLES || data.len() > MAX_WORKLOAD_TUPLES {
        return Err(Error::Config(format!(
            "workload of {} tuples exceeds the engine limit of {MAX_WORKLOAD_TUPLES}",
            data.len()
        )));
    }
    let start = Instant::now();
    let slots_per_block = cfg.n_t.max(cfg.lanes_per_block);
    let shared = Shared {
        data,
        path,
        cfg,
        table: IntervalTable::new(outer, cfg.n_t, cfg.n_w, cfg.num_blocks),
        lanes: (0..cfg.num_blocks)
            .map(|_| BlockLanes {
                slots: (0..slots_per_block).map(|_| LaneSlot::idle()).collect(),
                active: AtomicUsize::new(0),
            })
            .collect(),
        sink: ResultSink::new(),
        kind,
        split,
        start,
    };
    let worker = |id: usize| Worker {
        shared: &shared,
        id,
        stats: BlockStats::default(),
        buffer: BlockBuffer::new(cfg.buffer_half_capacity),
        bm: PairBitmaps::new(path),
        probe: P::default(),
    };
    let results: Vec<(BlockStats, P)> = if cfg.num_blocks == 1 {
        vec![worker(0).run()]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..cfg.num_blocks)
                .map(|id| {
                    let w = worker(id);
                    s.spawn(move || w.run())
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("engine block panicked")).collect()
        })
    };
    let intervals = shared.table.len();
    let pairs = shared.sink.into_vec();
    let (blocks, probes): (Vec<BlockStats>, Vec<P>) = results.into_iter().unzip();
    Ok((
        CandidateSet {
            pairs,
            rule_ids: path.rule_ids.clone(),
            stats: RunStats {
                blocks,
                intervals,
                wall: start.elapsed(),
            },
        },
        probes,
    ))
}

pub fn run_prepared(
    data: &PreparedData,
    path: &ExecutionPath,
    workload: Workload,
    cfg: &EngineConfig,
) -> Result<CandidateSet> {
    run_prepared_probed::<NoProbe>(data, path, workload, cfg).map(|(c, _)| c)
}

fn sorted_tids(tids: &[usize]) -> Vec<usize> {
    let mut v = tids.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// All pairs inside one partition.
pub fn run_partition(
    rel: &Relation,
    part: &DataPartition,
    path: &ExecutionPath,
    cfg: &EngineConfig,
) -> Result<CandidateSet> {
    let tids = sorted_tids(&part.tuple_refs);
    let data = PreparedData::build(rel, &tids, &path.slots);
    run_prepared(&data, path, Workload::SelfJoin, cfg)
}

/// All pairs of the whole relation.
pub fn run_relation(rel: &Relation, path: &ExecutionPath, cfg: &EngineConfig) -> Result<CandidateSet> {
    let tids: Vec<usize> = (0..rel.len()).collect();
    let data = PreparedData::build(rel, &tids, &path.slots);
    run_prepared(&data, path, Workload::SelfJoin, cfg)
}

/// Pairs with one tuple from each partition.
pub fn run_cross(
    rel: &Relation,
    pi: &DataPartition,
    pj: &DataPartition,
    path: &ExecutionPath,
    cfg: &EngineConfig,
) -> Result<CandidateSet> {
    let a = sorted_tids(&pi.tuple_refs);
    let b = sorted_tids(&pj.tuple_refs);
    let split = a.len();
    let tids: Vec<usize> = a.into_iter().chain(b).collect();
    let data = PreparedData::build(rel, &tids, &path.slots);
    run_prepared(&data, path, Workload::Cross { split }, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epg::{plan_from_estimates, OrderMode};
    use crate::model::{read_relation, AttrValue, Attribute, AttrKind, LoadOptions, Schema};
    use crate::rules::{parse_ruleset, predicate_universe, Comparator, MDRule, Predicate, Rhs, RuleSet};
    use crate::similarity::{eval_predicate, MeasureRegistry};
    use proptest::prelude::*;

    fn products() -> (Relation, RuleSet, MeasureRegistry) {
        let rel = read_relation(include_str!("../../tests/data/products.csv").as_bytes(), &LoadOptions::default())
            .unwrap();
        let reg = MeasureRegistry::new();
        let rs = parse_ruleset(include_str!("../../tests/data/products_rules.json"), &reg).unwrap();
        (rel, rs, reg)
    }

    fn worked_path(rel: &Relation, rs: &RuleSet, reg: &MeasureRegistry) -> ExecutionPath {
        plan_from_estimates(
            rs,
            rel.schema(),
            reg,
            &[0.1, 0.2, 0.1, 1.0, 1.0, 0.5],
            &[1.0, 0.3, 0.4, 0.4, 0.2, 0.3],
            OrderMode::Epg,
        )
        .unwrap()
        .2
    }

    /// Pairwise rule check in checkpoint order, through the reference scorer.
    fn oracle(
        rel: &Relation,
        rs: &RuleSet,
        reg: &MeasureRegistry,
        order: &[&str],
        symmetric: bool,
    ) -> Vec<(usize, usize, String)> {
        let mut out = Vec::new();
        for t in 0..rel.len() {
            for s in 0..rel.len() {
                if t == s || (symmetric && s < t) {
                    continue;
                }
                for id in order {
                    let r = rs.rules().iter().find(|r| r.rule_id == *id).unwrap();
                    let ok = r.precondition.iter().all(|p| {
                        eval_predicate(p, rel.tuple(t), rel.tuple(s), rel.schema(), reg).unwrap()
                    });
                    if ok {
                        out.push((t, s, id.to_string()));
                        break;
                    }
                }
            }
        }
        out.sort();
        out
    }

    fn owned(v: Vec<(usize, usize, &str)>) -> Vec<(usize, usize, String)> {
        v.into_iter().map(|(a, b, c)| (a, b, c.to_string())).collect()
    }

    #[test]
    fn products_matches_oracle_in_both_modes() {
        let (rel, rs, reg) = products();
        let path = worked_path(&rel, &rs, &reg);
        let order = path.checkpoint_order();
        let asym = EngineConfig {
            symmetric_mode: false,
            num_blocks: 2,
            n_t: 1,
            n_w: 2,
            ..Default::default()
        };
        let got = run_relation(&rel, &path, &asym).unwrap();
        assert_eq!(owned(got.triples()), oracle(&rel, &rs, &reg, &order, false));
        assert!(!got.is_empty());
    }

    #[test]
    fn symmetric_mode_needs_symmetric_path() {
        let (rel, _, reg) = products();
        let cross = Predicate {
            lhs_attr: "sname".into(),
            rhs: Rhs::Attr("pname".into()),
            comparator: Comparator::Eq,
        };
        let rs = RuleSet::new(vec![MDRule {
            rule_id: "x".into(),
            precondition: vec![cross],
        }])
        .unwrap();
        let path = plan_from_estimates(&rs, rel.schema(), &reg, &[1.0], &[0.5], OrderMode::Epg).unwrap().2;
        let err = run_relation(&rel, &path, &EngineConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let asym = EngineConfig {
            symmetric_mode: false,
            ..Default::default()
        };
        assert!(run_relation(&rel, &path, &asym).is_ok());
    }

    #[test]
    fn shared_predicate_is_scored_once_per_pair() {
        let rows = vec![
            vec![AttrValue::text("p"), AttrValue::text("u"), AttrValue::text("q")],
            vec![AttrValue::text("p"), AttrValue::text("v"), AttrValue::text("q")],
        ];
        let rel = Relation::new(text_schema(&["a", "b", "c"]), rows).unwrap();
        let reg = MeasureRegistry::new();
        let rs = RuleSet::new(vec![
            MDRule {
                rule_id: "x".into(),
                precondition: vec![Predicate::eq("a"), Predicate::eq("b")],
            },
            MDRule {
                rule_id: "y".into(),
                precondition: vec![Predicate::eq("c"), Predicate::eq("b")],
            },
        ])
        .unwrap();
        // b is the most expensive, so it sits below both a and c.
        let path = plan_from_estimates(&rs, rel.schema(), &reg, &[0.1, 1.0, 0.2], &[0.5; 3], OrderMode::Epg)
            .unwrap()
            .2;
        let evals_of_b = path
            .instructions
            .iter()
            .filter(|i| matches!(i, Instruction::Eval { slot, .. } if path.slots[*slot].predicate == Predicate::eq("b")))
            .count();
        assert_eq!(evals_of_b, 2);
        let data = PreparedData::build(&rel, &[0, 1], &path.slots);
        let cfg = EngineConfig {
            num_blocks: 1,
            ..Default::default()
        };
        let (set, probes) = run_prepared_probed::<CountingProbe>(&data, &path, Workload::SelfJoin, &cfg).unwrap();
        assert!(set.is_empty());
        assert_eq!(probes[0].max_calls_per_slot_in_pair, 1);
        assert_eq!(probes[0].reuses, 1);
        assert_eq!(probes[0].scorer_calls, 3);
    }

    #[test]
    fn products_scorer_calls_stay_at_one_per_slot() {
        let (rel, rs, reg) = products();
        let path = worked_path(&rel, &rs, &reg);
        let tids: Vec<usize> = (0..rel.len()).collect();
        let data = PreparedData::build(&rel, &tids, &path.slots);
        let cfg = EngineConfig {
            symmetric_mode: false,
            num_blocks: 1,
            ..Default::default()
        };
        let (_, probes) = run_prepared_probed::<CountingProbe>(&data, &path, Workload::SelfJoin, &cfg).unwrap();
        let p = &probes[0];
        assert_eq!(p.max_calls_per_slot_in_pair, 1);
        assert_eq!(p.pairs, (rel.len() * (rel.len() - 1)) as u64);
    }

    #[test]
    fn early_exit_stops_at_first_checkpoint() {
        let (rel, rs, reg) = products();
        let path = worked_path(&rel, &rs, &reg);
        let tids: Vec<usize> = (0..rel.len()).collect();
        let data = PreparedData::build(&rel, &tids, &path.slots);
        let mut bm = PairBitmaps::new(&path);
        for t in 0..rel.len() {
            for s in 0..rel.len() {
                if t == s {
                    continue;
                }
                let mut probe = CountingProbe::default();
                let w = evaluate_pair(&path, &data, t, s, &mut bm, &mut probe);
                let all = all_witnesses(&path, &data, t, s);
                assert_eq!(w, all.first().copied());
                if let Some(r) = w {
                    let at = path
                        .instructions
                        .iter()
                        .position(|i| *i == Instruction::Checkpoint { rule: r })
                        .unwrap();
                    assert!(probe.instructions as usize <= at + 1);
                }
            }
        }
    }

    fn text_schema(names: &[&str]) -> Schema {
        Schema::new(
            names
                .iter()
                .map(|n| Attribute {
                    name: n.to_string(),
                    kind: AttrKind::ShortText,
                })
                .collect(),
            None,
        )
        .unwrap()
    }

    fn small_rules() -> RuleSet {
        RuleSet::new(vec![
            MDRule {
                rule_id: "r1".into(),
                precondition: vec![Predicate::eq("a"), Predicate::sim("b", "jaccard", 0.5)],
            },
            MDRule {
                rule_id: "r2".into(),
                precondition: vec![Predicate::sim("b", "edit", 0.6), Predicate::eq("c")],
            },
            MDRule {
                rule_id: "r3".into(),
                precondition: vec![Predicate::eq("c"), Predicate::eq("a")],
            },
        ])
        .unwrap()
    }

    fn relation_strategy() -> impl Strategy<Value = Relation> {
        let cell = prop_oneof![Just(""), Just("x"), Just("y"), Just("x y"), Just("y z"), Just("x y z")];
        proptest::collection::vec(proptest::collection::vec(cell, 3), 0..40).prop_map(|rows| {
            let rows = rows
                .into_iter()
                .map(|r| {
                    r.into_iter()
                        .map(|c| if c.is_empty() { AttrValue::Missing } else { AttrValue::text(c) })
                        .collect()
                })
                .collect();
            Relation::new(text_schema(&["a", "b", "c"]), rows).unwrap()
        })
    }

    fn small_path(rel: &Relation, reg: &MeasureRegistry, costs: &[f64]) -> ExecutionPath {
        let rs = small_rules();
        let n = predicate_universe(&rs).len();
        plan_from_estimates(&rs, rel.schema(), reg, &costs[..n], &vec![0.5; n], OrderMode::Epg)
            .unwrap()
            .2
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn engine_matches_oracle_under_any_config(
            rel in relation_strategy(),
            costs in proptest::collection::vec(0.01f64..1.0, 5),
            n_t in 1usize..6,
            n_w in 1usize..5,
            blocks in 1usize..5,
            lanes in 1usize..4,
            chunk in 1usize..4,
            half in 1usize..5,
            stealing in prop_oneof![Just(Stealing::Off), Just(Stealing::Inter), Just(Stealing::InterIntra)],
        ) {
            let reg = MeasureRegistry::new();
            let path = small_path(&rel, &reg, &costs);
            let order = path.checkpoint_order();
            let expected = oracle(&rel, &small_rules(), &reg, &order, true);
            let cfg = EngineConfig {
                n_t, n_w, num_blocks: blocks, lanes_per_block: lanes, claim_chunk: chunk,
                buffer_half_capacity: half, stealing, symmetric_mode: true,
            };
            let got = run_relation(&rel, &path, &cfg).unwrap();
            prop_assert_eq!(owned(got.triples()), expected);
            let n = rel.len() as u64;
            prop_assert_eq!(got.stats.comparisons(), n * n.saturating_sub(1) / 2);
            for b in &got.stats.blocks {
                let bound = got.stats.intervals.div_ceil(n_w) + b.intervals_stolen;
                prop_assert!(b.window_jumps <= bound);
            }
        }

        #[test]
        fn cross_run_covers_exactly_the_cross_pairs(
            rel in relation_strategy(),
            cut in 0usize..40,
            blocks in 1usize..4,
            symmetric in any::<bool>(),
        ) {
            let reg = MeasureRegistry::new();
            let path = small_path(&rel, &reg, &[0.3, 0.2, 0.9, 0.5, 0.1]);
            let cut = cut.min(rel.len());
            let pi = DataPartition { pid: 0, tuple_refs: (0..cut).collect(), branch_id: None };
            let pj = DataPartition { pid: 1, tuple_refs: (cut..rel.len()).collect(), branch_id: None };
            let cfg = EngineConfig { n_t: 2, n_w: 2, num_blocks: blocks, symmetric_mode: symmetric, ..Default::default() };
            let got = run_cross(&rel, &pi, &pj, &path, &cfg).unwrap();
            let order = path.checkpoint_order();
            let expected: Vec<_> = oracle(&rel, &small_rules(), &reg, &order, symmetric)
                .into_iter()
                .filter(|(t, s, _)| (*t < cut) != (*s < cut))
                .collect();
            prop_assert_eq!(owned(got.triples()), expected);
        }
    }

    #[test]
    fn skewed_work_is_stolen() {
        // One long outer range concentrated in block 0's interval.
        let rows: Vec<Vec<AttrValue>> = (0..3000)
            .map(|i| vec![AttrValue::text(format!("v{}", i % 7)), AttrValue::text("x y"), AttrValue::text("c")])
            .collect();
        let rel = Relation::new(text_schema(&["a", "b", "c"]), rows).unwrap();
        let reg = MeasureRegistry::new();
        let path = small_path(&rel, &reg, &[0.3, 0.2, 0.9, 0.5, 0.1]);
        let cfg = EngineConfig {
            n_t: 3000,
            n_w: 4,
            num_blocks: 4,
            stealing: Stealing::InterIntra,
            ..Default::default()
        };
        let got = run_relation(&rel, &path, &cfg).unwrap();
        let n = rel.len() as u64;
        assert_eq!(got.stats.comparisons(), n * (n - 1) / 2);
        let mut pairs = got.pair_set().into_iter().collect::<Vec<_>>();
        pairs.sort();
        assert_eq!(pairs.len(), got.len());
        let off = EngineConfig {
            stealing: Stealing::Off,
            ..cfg
        };
        let base = run_relation(&rel, &path, &off).unwrap();
        assert_eq!(base.triples(), got.triples());
    }
}
