//! Staged blocking pipeline: partition, schedule, transfer (column
//! preparation on the owning device), execute, collect.
//!
//! In async mode the stages run concurrently over bounded channels, so a
//! device starts executing while later branches are still being
//! partitioned. In sync mode each stage finishes for every task before the
//! next starts; devices still work in parallel within a stage.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, Sender};
use serde::Deserialize;

use super::{
    derive_partitioners, partition_branch, BranchPartitioning, PartitionConfig, PartitionKey, Partitioner, Scheduler,
};
use crate::engine::{run_prepared, CandidatePair, CandidateSet, EngineConfig, RunStats, Workload, MAX_WORKLOAD_TUPLES};
use crate::epg::{ExecutionPath, ExecutionTree};
use crate::error::{Error, Result};
use crate::model::{DataPartition, Relation};
use crate::prepared::PreparedData;
use crate::similarity::MeasureRegistry;

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceConfig {
    pub count: usize,
    /// Engine blocks (threads) per device.
    pub blocks: usize,
    pub lanes: usize,
    /// Work (pairs) a device accepts before the ring walk skips it; unset
    /// means the bounded-load rule with `load_factor`.
    pub capacity: Option<u64>,
    pub load_factor: f64,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        DeviceConfig {
            count: 1,
            blocks: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            lanes: 32,
            capacity: None,
            load_factor: 1.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PipelineMode {
    #[default]
    Async,
    Sync,
}

#[derive(Debug, Clone, Default)]
pub struct PipelineConfig {
    pub devices: DeviceConfig,
    pub engine: EngineConfig,
    pub partition: PartitionConfig,
    pub mode: PipelineMode,
    /// Capacity of every inter-stage channel.
    pub channel_capacity: usize,
    pub seed: u64,
}

/// Busy time per stage, summed over the threads running it.
#[derive(Debug, Clone, Default)]
pub struct StageTimings {
    pub partition: Duration,
    pub schedule: Duration,
    pub transfer: Duration,
    pub execute: Duration,
    pub collect: Duration,
    pub total: Duration,
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub candidates: CandidateSet,
    pub partitions: usize,
    pub pulls: usize,
    pub device_loads: Vec<u64>,
    pub device_tasks: Vec<usize>,
    pub overflows: usize,
    pub timings: StageTimings,
}

#[derive(Debug, Clone)]
enum Task {
    Own(Arc<DataPartition>),
    /// Every pull of one partition against the others, run as one cross task.
    Pull(Arc<DataPartition>, Vec<Arc<DataPartition>>),
}

impl Task {
    fn work(&self) -> u64 {
        match self {
            Task::Own(p) => (p.len() * p.len().saturating_sub(1) / 2) as u64,
            Task::Pull(a, bs) => (a.len() * bs.iter().map(|b| b.len()).sum::<usize>()) as u64,
        }
    }
}

struct Prepared {
    data: PreparedData,
    workload: Workload,
}

fn sorted(tids: &[usize]) -> Vec<usize> {
    let mut v = tids.to_vec();
    v.sort_unstable();
    v
}

fn transfer(rel: &Relation, path: &ExecutionPath, task: &Task) -> Prepared {
    match task {
        Task::Own(p) => Prepared {
            data: PreparedData::build(rel, &sorted(&p.tuple_refs), &path.slots),
            workload: Workload::SelfJoin,
        },
        Task::Pull(a, bs) => {
            let mut tids = sorted(&a.tuple_refs);
            let split = tids.len();
            let mut inner: Vec<usize> = bs.iter().flat_map(|b| b.tuple_refs.iter().copied()).collect();
            inner.sort_unstable();
            inner.dedup();
            tids.extend(inner);
            Prepared {
                data: PreparedData::build(rel, &tids, &path.slots),
                workload: Workload::Cross { split },
            }
        }
    }
}

fn execute(p: &Prepared, path: &ExecutionPath, engine: &EngineConfig) -> Result<CandidateSet> {
    let outer = match p.workload {
        Workload::SelfJoin => p.data.len(),
        Workload::Cross { split } => split,
    };
    let mut cfg = engine.clone();
    cfg.num_blocks = cfg.num_blocks.min(outer.div_ceil(cfg.n_t)).max(1);
    run_prepared(&p.data, path, p.workload, &cfg)
}

/// Tasks of one branch: own partitions with at least one pair, then pulls
/// grouped by their first partition.
fn branch_tasks(b: &BranchPartitioning, max_inner: usize) -> Vec<Task> {
    let parts: HashMap<usize, Arc<DataPartition>> =
        b.partitions.iter().map(|p| (p.pid, Arc::new(p.clone()))).collect();
    let mut tasks: Vec<Task> = b
        .partitions
        .iter()
        .filter(|p| p.len() > 1)
        .map(|p| Task::Own(parts[&p.pid].clone()))
        .collect();
    // Pulls arrive sorted by `i`; the inner side of one task stays within
    // `max_inner` tuples unless a single partition is larger.
    let mut pulls: Vec<(usize, usize, Vec<Arc<DataPartition>>)> = Vec::new();
    for c in &b.pulls {
        let pj = parts[&c.j].clone();
        match pulls.last_mut() {
            Some((i, size, js)) if *i == c.i && *size + pj.len() <= max_inner => {
                *size += pj.len();
                js.push(pj);
            }
            _ => pulls.push((c.i, pj.len(), vec![pj])),
        }
    }
    tasks.extend(pulls.into_iter().map(|(i, _, js)| Task::Pull(parts[&i].clone(), js)));
    tasks
}

struct Collector {
    pairs: HashMap<(usize, usize), usize>,
    stats: RunStats,
    error: Option<Error>,
}

impl Collector {
    fn new() -> Self {
        Collector {
            pairs: HashMap::new(),
            stats: RunStats::default(),
            error: None,
        }
    }

    fn add(&mut self, r: Result<CandidateSet>) {
        match r {
            Ok(c) => {
                self.stats.merge(&c.stats);
                for p in c.pairs {
                    self.pairs.entry((p.t, p.s)).or_insert(p.rule);
                }
            }
            Err(e) => {
                self.error.get_or_insert(e);
            }
        }
    }

    fn finish(self, rule_ids: Vec<String>) -> Result<CandidateSet> {
        if let Some(e) = self.error {
            return Err(Error::Stage {
                stage: "execute",
                message: e.to_string(),
            });
        }
        let mut pairs: Vec<CandidatePair> = self
            .pairs
            .into_iter()
            .map(|((t, s), rule)| CandidatePair { t, s, rule })
            .collect();
        pairs.sort_unstable();
        Ok(CandidateSet {
            pairs,
            rule_ids,
            stats: self.stats,
        })
    }
}

fn task_key(task: &Task) -> u64 {
    match task {
        Task::Own(p) => p.pid as u64,
        Task::Pull(a, _) => a.pid as u64,
    }
}

/// Assigns tasks in arrival order; pulls go to the owner of their first
/// partition.
struct Placement {
    sched: Scheduler,
    owner: HashMap<usize, usize>,
    tasks: Vec<usize>,
}

impl Placement {
    fn new(cfg: &PipelineConfig) -> Self {
        Placement {
            sched: Scheduler::new(cfg.devices.count, cfg.devices.capacity, cfg.devices.load_factor, cfg.seed),
            owner: HashMap::new(),
            tasks: vec![0; cfg.devices.count],
        }
    }

    fn place(&mut self, task: &Task) -> usize {
        let d = match task {
            Task::Own(p) => {
                let d = self.sched.assign(task_key(task), task.work());
                self.owner.insert(p.pid, d);
                d
            }
            Task::Pull(a, _) => match self.owner.get(&a.pid) {
                Some(&d) => {
                    self.sched.charge(d, task.work());
                    d
                }
                None => {
                    let d = self.sched.assign(task_key(task), task.work());
                    self.owner.insert(a.pid, d);
                    d
                }
            },
        };
        self.tasks[d] += 1;
        d
    }
}

fn check(rel: &Relation, path: &ExecutionPath, cfg: &PipelineConfig) -> Result<()> {
    cfg.engine.validate()?;
    if cfg.devices.count == 0 || cfg.devices.blocks == 0 || cfg.devices.lanes == 0 {
        return Err(Error::Config("device count, blocks and lanes must be positive".into()));
    }
    if !(cfg.devices.load_factor >= 1.0) {
        return Err(Error::Config("device load factor must be at least 1".into()));
    }
    if cfg.engine.symmetric_mode && !path.is_symmetric() {
        return Err(Error::Config(
            "symmetric mode requires every path predicate to be symmetric (same attribute, symmetric measure)".into(),
        ));
    }
    let limit = if cfg.partition.enabled {
        cfg.partition.max_partition_size.saturating_mul(2)
    } else {
        rel.len()
    };
    if cfg.partition.max_partition_size == 0 || limit.min(rel.len() * 2) > MAX_WORKLOAD_TUPLES {
        return Err(Error::Config(format!(
            "partitions must hold between 1 and {} tuples",
            MAX_WORKLOAD_TUPLES / 2
        )));
    }
    Ok(())
}

fn partitioners(
    rel: &Relation,
    tree: &ExecutionTree,
    reg: &MeasureRegistry,
    cfg: &PipelineConfig,
) -> Result<Vec<Partitioner>> {
    if cfg.partition.enabled {
        derive_partitioners(tree, rel.schema(), reg)
    } else {
        Ok(vec![Partitioner {
            branch: 0,
            predicate: tree.universe.first().cloned().ok_or(Error::EmptyRelation)?,
            key: PartitionKey::Broadcast,
        }])
    }
}

/// Runs the full pipeline and returns deduplicated, sorted candidates.
pub fn pipeline_run(
    rel: &Relation,
    tree: &ExecutionTree,
    path: &ExecutionPath,
    reg: &MeasureRegistry,
    cfg: &PipelineConfig,
) -> Result<PipelineResult> {
    check(rel, path, cfg)?;
    let parts = partitioners(rel, tree, reg, cfg)?;
    let mut pcfg = cfg.partition.clone();
    if !pcfg.enabled {
        pcfg.max_partition_size = rel.len().max(1);
    }
    let mut engine = cfg.engine.clone();
    engine.num_blocks = cfg.devices.blocks;
    engine.lanes_per_block = cfg.devices.lanes;
    let t0 = Instant::now();
    let mut out = match cfg.mode {
        PipelineMode::Async => run_async(rel, path, &parts, &pcfg, &engine, cfg)?,
        PipelineMode::Sync => run_sync(rel, path, &parts, &pcfg, &engine, cfg)?,
    };
    out.timings.total = t0.elapsed();
    Ok(out)
}

fn run_sync(
    rel: &Relation,
    path: &ExecutionPath,
    parts: &[Partitioner],
    pcfg: &PartitionConfig,
    engine: &EngineConfig,
    cfg: &PipelineConfig,
) -> Result<PipelineResult> {
    let mut timings = StageTimings::default();
    let t = Instant::now();
    let branches = super::partition_relation(rel, parts, pcfg);
    timings.partition = t.elapsed();

    let t = Instant::now();
    let mut placement = Placement::new(cfg);
    let mut per_device: Vec<Vec<Task>> = vec![Vec::new(); cfg.devices.count];
    for b in &branches {
        for task in branch_tasks(b, cfg.partition.max_partition_size) {
            let d = placement.place(&task);
            per_device[d].push(task);
        }
    }
    timings.schedule = t.elapsed();

    let t = Instant::now();
    let prepared: Vec<Vec<Prepared>> = std::thread::scope(|s| {
        let hs: Vec<_> = per_device
            .iter()
            .map(|tasks| s.spawn(move || tasks.iter().map(|task| transfer(rel, path, task)).collect()))
            .collect();
        hs.into_iter().map(|h| h.join().expect("transfer stage panicked")).collect()
    });
    timings.transfer = t.elapsed();

    let t = Instant::now();
    let results: Vec<Vec<Result<CandidateSet>>> = std::thread::scope(|s| {
        let hs: Vec<_> = prepared
            .iter()
            .map(|items| s.spawn(move || items.iter().map(|p| execute(p, path, engine)).collect()))
            .collect();
        hs.into_iter().map(|h| h.join().expect("execute stage panicked")).collect()
    });
    timings.execute = t.elapsed();

    let t = Instant::now();
    let mut collector = Collector::new();
    results.into_iter().flatten().for_each(|r| collector.add(r));
    let candidates = collector.finish(path.rule_ids.clone())?;
    timings.collect = t.elapsed();

    let counts: Vec<(usize, usize)> = branches
        .iter()
        .map(|b| (b.partitions.len(), b.pulls.len()))
        .collect();
    Ok(summary_counts(candidates, &counts, placement, timings))
}

fn run_async(
    rel: &Relation,
    path: &ExecutionPath,
    parts: &[Partitioner],
    pcfg: &PartitionConfig,
    engine: &EngineConfig,
    cfg: &PipelineConfig,
) -> Result<PipelineResult> {
    let cap = cfg.channel_capacity.max(1);
    let devices = cfg.devices.count;
    let (branch_tx, branch_rx) = bounded::<BranchPartitioning>(cap);
    let (result_tx, result_rx) = bounded::<Result<CandidateSet>>(cap * devices);
    let mut transfer_txs: Vec<Sender<Task>> = Vec::new();
    let mut transfer_rxs: Vec<Receiver<Task>> = Vec::new();
    let mut exec_txs: Vec<Sender<Prepared>> = Vec::new();
    let mut exec_rxs: Vec<Receiver<Prepared>> = Vec::new();
    for _ in 0..devices {
        let (a, b) = bounded(cap);
        transfer_txs.push(a);
        transfer_rxs.push(b);
        let (c, d) = bounded(cap);
        exec_txs.push(c);
        exec_rxs.push(d);
    }

    std::thread::scope(|s| {
        let partition = s.spawn(move || {
            let mut busy = Duration::ZERO;
            let mut next = 0;
            for p in parts {
                let t = Instant::now();
                let b = partition_branch(rel, p, pcfg, next);
                next += b.partitions.len();
                busy += t.elapsed();
                if branch_tx.send(b).is_err() {
                    break;
                }
            }
            busy
        });

        let schedule = s.spawn(move || {
            let mut busy = Duration::ZERO;
            let mut placement = Placement::new(cfg);
            let mut branches = Vec::new();
            for b in branch_rx {
                let t = Instant::now();
                let tasks: Vec<(usize, Task)> = branch_tasks(&b, cfg.partition.max_partition_size)
                    .into_iter()
                    .map(|task| (placement.place(&task), task))
                    .collect();
                busy += t.elapsed();
                for (d, task) in tasks {
                    if transfer_txs[d].send(task).is_err() {
                        break;
                    }
                }
                branches.push((b.partitions.len(), b.pulls.len()));
            }
            drop(transfer_txs);
            (busy, placement, branches)
        });

        let mut transfer_handles = Vec::new();
        for (rx, tx) in transfer_rxs.into_iter().zip(exec_txs) {
            transfer_handles.push(s.spawn(move || {
                let mut busy = Duration::ZERO;
                for task in rx {
                    let t = Instant::now();
                    let p = transfer(rel, path, &task);
                    busy += t.elapsed();
                    if tx.send(p).is_err() {
                        break;
                    }
                }
                busy
            }));
        }

        let mut exec_handles = Vec::new();
        for rx in exec_rxs {
            let tx = result_tx.clone();
            exec_handles.push(s.spawn(move || {
                let mut busy = Duration::ZERO;
                for p in rx {
                    let t = Instant::now();
                    let r = execute(&p, path, engine);
                    busy += t.elapsed();
                    if tx.send(r).is_err() {
                        break;
                    }
                }
                busy
            }));
        }
        drop(result_tx);

        let mut collector = Collector::new();
        let mut collect_busy = Duration::ZERO;
        for r in result_rx {
            let t = Instant::now();
            collector.add(r);
            collect_busy += t.elapsed();
        }

        let mut timings = StageTimings {
            partition: partition.join().expect("partition stage panicked"),
            ..Default::default()
        };
        let (sched_busy, placement, branches) = schedule.join().expect("schedule stage panicked");
        timings.schedule = sched_busy;
        timings.transfer = transfer_handles
            .into_iter()
            .map(|h| h.join().expect("transfer stage panicked"))
            .sum();
        timings.execute = exec_handles
            .into_iter()
            .map(|h| h.join().expect("execute stage panicked"))
            .sum();
        let t = Instant::now();
        let candidates = collector.finish(path.rule_ids.clone())?;
        timings.collect = collect_busy + t.elapsed();
        Ok(summary_counts(candidates, &branches, placement, timings))
    })
}

fn summary_counts(
    candidates: CandidateSet,
    branches: &[(usize, usize)],
    placement: Placement,
    timings: StageTimings,
) -> PipelineResult {
    PipelineResult {
        candidates,
        partitions: branches.iter().map(|b| b.0).sum(),
        pulls: branches.iter().map(|b| b.1).sum(),
        device_loads: placement.sched.loads().to_vec(),
        device_tasks: placement.tasks,
        overflows: placement.sched.overflows,
        timings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::run_relation;
    use crate::epg::{plan_from_estimates, OrderMode};
    use crate::model::{read_relation, AttrKind, AttrValue, Attribute, LoadOptions, Schema};
    use crate::rules::{parse_ruleset, predicate_universe, MDRule, Predicate, RuleSet};
    use proptest::prelude::*;

    fn products() -> (Relation, RuleSet, MeasureRegistry) {
        let rel = read_relation(include_str!("../../tests/data/products.csv").as_bytes(), &LoadOptions::default())
            .unwrap();
        let reg = MeasureRegistry::new();
        let rs = parse_ruleset(include_str!("../../tests/data/products_rules.json"), &reg).unwrap();
        (rel, rs, reg)
    }

    fn plan(rel: &Relation, rs: &RuleSet, reg: &MeasureRegistry) -> (ExecutionTree, ExecutionPath) {
        let n = predicate_universe(rs).len();
        let costs: Vec<f64> = (0..n).map(|i| 0.1 + i as f64 * 0.07).collect();
        let (_, tree, path) = plan_from_estimates(rs, rel.schema(), reg, &costs, &vec![0.5; n], OrderMode::Epg).unwrap();
        (tree, path)
    }

    fn cfg(devices: usize, mode: PipelineMode, max: usize) -> PipelineConfig {
        PipelineConfig {
            devices: DeviceConfig {
                count: devices,
                blocks: 2,
                lanes: 4,
                capacity: None,
                load_factor: 1.25,
            },
            engine: EngineConfig {
                n_t: 2,
                n_w: 2,
                ..Default::default()
            },
            partition: PartitionConfig {
                max_partition_size: max,
                ..Default::default()
            },
            mode,
            channel_capacity: 2,
            seed: 3,
        }
    }

    #[test]
    fn unpartitioned_pipeline_equals_engine() {
        let (rel, rs, reg) = products();
        let (tree, path) = plan(&rel, &rs, &reg);
        let mut c = cfg(3, PipelineMode::Async, 100);
        c.partition.enabled = false;
        let got = pipeline_run(&rel, &tree, &path, &reg, &c).unwrap();
        let full = run_relation(&rel, &path, &c.engine).unwrap();
        assert_eq!(got.candidates.triples(), full.triples());
    }

    #[test]
    fn sync_and_async_agree_on_products() {
        let (rel, rs, reg) = products();
        let (tree, path) = plan(&rel, &rs, &reg);
        let a = pipeline_run(&rel, &tree, &path, &reg, &cfg(2, PipelineMode::Async, 2)).unwrap();
        let s = pipeline_run(&rel, &tree, &path, &reg, &cfg(2, PipelineMode::Sync, 2)).unwrap();
        assert_eq!(a.candidates.triples(), s.candidates.triples());
        assert_eq!((a.partitions, a.pulls), (s.partitions, s.pulls));
        assert_eq!(a.device_loads, s.device_loads);
        let full = run_relation(&rel, &path, &cfg(1, PipelineMode::Sync, 2).engine).unwrap();
        assert!(a.candidates.pair_set().is_subset(&full.pair_set()));
    }

    #[test]
    fn asymmetric_path_in_symmetric_mode_is_rejected() {
        let (rel, _, reg) = products();
        let rs = RuleSet::new(vec![MDRule {
            rule_id: "x".into(),
            precondition: vec![Predicate::eq_const("color", AttrValue::text("Gray"))],
        }])
        .unwrap();
        let (tree, path) = plan(&rel, &rs, &reg);
        assert!(pipeline_run(&rel, &tree, &path, &reg, &cfg(1, PipelineMode::Sync, 8)).is_err());
        let mut c = cfg(1, PipelineMode::Sync, 8);
        c.engine.symmetric_mode = false;
        let got = pipeline_run(&rel, &tree, &path, &reg, &c).unwrap();
        let full = run_relation(&rel, &path, &c.engine).unwrap();
        assert_eq!(got.candidates.triples(), full.triples());
    }

    fn eq_relation() -> impl Strategy<Value = Relation> {
        let cell = prop_oneof![Just(""), Just("x"), Just("y"), Just("z"), Just("X ")];
        proptest::collection::vec(proptest::collection::vec(cell, 3), 0..60).prop_map(|rows| {
            let schema = Schema::new(
                ["a", "b", "c"]
                    .iter()
                    .map(|n| Attribute {
                        name: n.to_string(),
                        kind: AttrKind::Categorical,
                    })
                    .collect(),
                None,
            )
            .unwrap();
            let rows = rows
                .into_iter()
                .map(|r| {
                    r.into_iter()
                        .map(|c| if c.is_empty() { AttrValue::Missing } else { AttrValue::text(c) })
                        .collect()
                })
                .collect();
            Relation::new(schema, rows).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn equality_partitioning_loses_nothing(
            rel in eq_relation(),
            devices in 1usize..4,
            max in 1usize..8,
            sync in any::<bool>(),
        ) {
            let reg = MeasureRegistry::new();
            let rs = RuleSet::new(vec![
                MDRule { rule_id: "r1".into(), precondition: vec![Predicate::eq("a"), Predicate::eq("b")] },
                MDRule { rule_id: "r2".into(), precondition: vec![Predicate::eq("c")] },
            ]).unwrap();
            let (tree, path) = plan(&rel, &rs, &reg);
            let mode = if sync { PipelineMode::Sync } else { PipelineMode::Async };
            let c = cfg(devices, mode, max);
            let got = pipeline_run(&rel, &tree, &path, &reg, &c).unwrap();
            let full = run_relation(&rel, &path, &c.engine).unwrap();
            prop_assert_eq!(got.candidates.triples(), full.triples());
        }
    }

    #[test]
    fn cross_branch_duplicates_appear_once() {
        let (rel, _, reg) = products();
        // Every tuple is Gray, so all sname pairs are also found under color.
        let rs = RuleSet::new(vec![
            MDRule { rule_id: "a".into(), precondition: vec![Predicate::eq("sname")] },
            MDRule { rule_id: "b".into(), precondition: vec![Predicate::eq("color")] },
        ])
        .unwrap();
        let (tree, path) = plan(&rel, &rs, &reg);
        assert_eq!(derive_partitioners(&tree, rel.schema(), &reg).unwrap().len(), 2);
        let got = pipeline_run(&rel, &tree, &path, &reg, &cfg(2, PipelineMode::Async, 100)).unwrap();
        let full = run_relation(&rel, &path, &cfg(1, PipelineMode::Async, 100).engine).unwrap();
        assert_eq!(got.candidates.triples(), full.triples());
        assert_eq!(got.candidates.stats.comparisons(), 4 + 10);
        assert_eq!(got.candidates.len(), 10);
    }

    #[test]
    fn pulls_never_remove_candidates() {
        let (rel, rs, reg) = products();
        let (tree, path) = plan(&rel, &rs, &reg);
        let mut off = cfg(2, PipelineMode::Sync, 2);
        off.partition.cross_pulls = false;
        let without = pipeline_run(&rel, &tree, &path, &reg, &off).unwrap();
        let with = pipeline_run(&rel, &tree, &path, &reg, &cfg(2, PipelineMode::Sync, 2)).unwrap();
        assert_eq!(without.pulls, 0);
        assert!(without.candidates.pair_set().is_subset(&with.candidates.pair_set()));
    }
}
