//! Benchmark suites over synthetic data, reported as TSV.

use std::io::Write;
use std::time::Instant;

use anyhow::{bail, Result};
use clap::{Args, ValueEnum};

use mdblock::engine::{run_relation, EngineConfig, Stealing};
use mdblock::epg::{generate_plan, plan_from_estimates, ExecutionPath, OrderMode, Plan, PlanConfig};
use mdblock::model::Relation;
use mdblock::oracle::nested_loop;
use mdblock::partition::{pipeline_run, PipelineConfig, PipelineMode};
use mdblock::rules::RuleSet;
use mdblock::similarity::MeasureRegistry;
use mdblock::synth;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Oracle,
    Scaling,
    Ordering,
    Stealing,
    Async,
}

#[derive(Debug, Clone, Args)]
pub struct BenchOpts {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Relation size (suite default when unset).
    #[arg(long)]
    pub tuples: Option<usize>,
    /// Largest device count of the scaling suite; devices of the async suite.
    #[arg(long)]
    pub devices: Option<usize>,
    /// Worker blocks (threads) per device, or of the engine.
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Instances of the oracle suite.
    #[arg(long, default_value_t = 100)]
    pub seeds: u64,
}

fn cores() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn plan_for(rel: &Relation, rs: &RuleSet, reg: &MeasureRegistry, seed: u64, samples: usize) -> Result<Plan> {
    Ok(generate_plan(
        rel,
        rs,
        reg,
        &PlanConfig {
            seed,
            timing_samples: samples,
            ..Default::default()
        },
    )?)
}

fn path_with(plan: &Plan, rs: &RuleSet, rel: &Relation, reg: &MeasureRegistry, mode: OrderMode) -> Result<ExecutionPath> {
    Ok(plan_from_estimates(rs, rel.schema(), reg, &plan.costs, &plan.sps(), mode)?.2)
}

pub fn run(suite: Suite, o: &BenchOpts, out: &mut dyn Write) -> Result<()> {
    match suite {
        Suite::Oracle => oracle(o, out),
        Suite::Scaling => scaling(o, out),
        Suite::Ordering => ordering(o, out),
        Suite::Stealing => stealing(o, out),
        Suite::Async => pipeline_modes(o, out),
    }
}

fn oracle(o: &BenchOpts, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "seed\ttuples\trules\tcandidates\texpected\tresult")?;
    let reg = MeasureRegistry::new();
    let mut failed = 0;
    for seed in o.seed..o.seed + o.seeds {
        let inst = synth::oracle_instance(seed, o.tuples.unwrap_or(500));
        let plan = plan_for(&inst.relation, &inst.rules, &reg, seed, 100)?;
        let symmetric = plan.path.is_symmetric();
        let cfg = EngineConfig {
            symmetric_mode: symmetric,
            num_blocks: o.blocks.unwrap_or(4),
            n_t: 1 + (seed as usize % 32),
            n_w: 1 + (seed as usize % 5),
            ..Default::default()
        };
        let got = run_relation(&inst.relation, &plan.path, &cfg)?;
        let want = nested_loop(&inst.relation, &inst.rules, &reg, &plan.path.checkpoint_order(), symmetric)?;
        let got: Vec<(usize, usize, String)> = got.triples().into_iter().map(|(t, s, r)| (t, s, r.to_string())).collect();
        let ok = got == want;
        failed += usize::from(!ok);
        writeln!(
            out,
            "{seed}\t{}\t{}\t{}\t{}\t{}",
            inst.relation.len(),
            inst.rules.len(),
            got.len(),
            want.len(),
            if ok { "PASS" } else { "FAIL" }
        )?;
    }
    writeln!(out, "# {} of {} instances equal to the nested-loop result", o.seeds as usize - failed, o.seeds)?;
    if failed > 0 {
        bail!("{failed} oracle mismatches");
    }
    Ok(())
}

fn scaling(o: &BenchOpts, out: &mut dyn Write) -> Result<()> {
    let n = o.tuples.unwrap_or(100_000);
    let inst = synth::scaling_relation(n, (n / 200).max(1), o.seed);
    let reg = MeasureRegistry::new();
    let plan = plan_for(&inst.relation, &inst.rules, &reg, o.seed, 500)?;
    let max = o.devices.unwrap_or(8).max(1);
    writeln!(out, "devices\twall_s\tspeedup\tcandidates\tpartitions\toverflows")?;
    let mut base = None;
    let mut d = 1;
    while d <= max {
        let mut cfg = PipelineConfig {
            seed: o.seed,
            channel_capacity: 4,
            ..Default::default()
        };
        cfg.devices.count = d;
        cfg.devices.blocks = o.blocks.unwrap_or(1);
        let t0 = Instant::now();
        let res = pipeline_run(&inst.relation, &plan.tree, &plan.path, &reg, &cfg)?;
        let wall = t0.elapsed().as_secs_f64();
        let b = *base.get_or_insert(wall);
        writeln!(
            out,
            "{d}\t{wall:.4}\t{:.3}\t{}\t{}\t{}",
            b / wall,
            res.candidates.len(),
            res.partitions,
            res.overflows
        )?;
        d *= 2;
    }
    Ok(())
}

fn ordering(o: &BenchOpts, out: &mut dyn Write) -> Result<()> {
    let inst = synth::ordering_workload(o.tuples.unwrap_or(2000), o.seed);
    let reg = MeasureRegistry::new();
    let plan = plan_for(&inst.relation, &inst.rules, &reg, o.seed, 500)?;
    let cfg = EngineConfig {
        num_blocks: o.blocks.unwrap_or_else(cores),
        ..Default::default()
    };
    writeln!(out, "order\twall_s\tpredicate_evals\tcandidates\tslowdown")?;
    let mut base = None;
    for (name, mode) in [
        ("epg", OrderMode::Epg),
        ("random", OrderMode::Random(o.seed)),
        ("reversed", OrderMode::Reversed),
    ] {
        let path = path_with(&plan, &inst.rules, &inst.relation, &reg, mode)?;
        let t0 = Instant::now();
        let ca = run_relation(&inst.relation, &path, &cfg)?;
        let wall = t0.elapsed().as_secs_f64();
        let b = *base.get_or_insert(wall);
        writeln!(
            out,
            "{name}\t{wall:.4}\t{}\t{}\t{:.3}",
            ca.stats.predicate_evals(),
            ca.len(),
            wall / b
        )?;
    }
    Ok(())
}

fn stealing(o: &BenchOpts, out: &mut dyn Write) -> Result<()> {
    let n = o.tuples.unwrap_or(50_000);
    let inst = synth::skewed_text(n, (n / 50).max(1), 200, o.seed);
    let reg = MeasureRegistry::new();
    let plan = plan_for(&inst.relation, &inst.rules, &reg, o.seed, 500)?;
    writeln!(
        out,
        "stealing\twall_s\tvs_off\tintervals_min\tintervals_max\tintra_steals\tfinish_ratio\tcandidates"
    )?;
    let mut off = None;
    for (name, mode) in [
        ("off", Stealing::Off),
        ("inter", Stealing::Inter),
        ("inter+intra", Stealing::InterIntra),
    ] {
        let cfg = EngineConfig {
            num_blocks: o.blocks.unwrap_or_else(|| cores().max(4)),
            stealing: mode,
            ..Default::default()
        };
        let t0 = Instant::now();
        let ca = run_relation(&inst.relation, &plan.path, &cfg)?;
        let wall = t0.elapsed().as_secs_f64();
        let b = *off.get_or_insert(wall);
        let claims: Vec<usize> = ca
            .stats
            .blocks
            .iter()
            .map(|b| b.intervals_own + b.intervals_stolen)
            .collect();
        writeln!(
            out,
            "{name}\t{wall:.4}\t{:.3}\t{}\t{}\t{}\t{:.3}\t{}",
            wall / b,
            claims.iter().min().copied().unwrap_or(0),
            claims.iter().max().copied().unwrap_or(0),
            ca.stats.blocks.iter().map(|b| b.intra_steals).sum::<usize>(),
            ca.stats.finish_ratio(),
            ca.len()
        )?;
    }
    Ok(())
}

fn pipeline_modes(o: &BenchOpts, out: &mut dyn Write) -> Result<()> {
    let n = o.tuples.unwrap_or(40_000);
    let inst = synth::scaling_relation(n, (n / 150).max(1), o.seed);
    let reg = MeasureRegistry::new();
    let plan = plan_for(&inst.relation, &inst.rules, &reg, o.seed, 500)?;
    writeln!(out, "mode\twall_s\tspeedup\tpartitions\tcandidates\tidentical")?;
    let mut first: Option<(f64, Vec<(usize, usize)>)> = None;
    for (name, mode) in [("sync", PipelineMode::Sync), ("async", PipelineMode::Async)] {
        let mut cfg = PipelineConfig {
            mode,
            seed: o.seed,
            channel_capacity: 4,
            ..Default::default()
        };
        cfg.devices.count = o.devices.unwrap_or(4);
        cfg.devices.blocks = o.blocks.unwrap_or(1);
        let t0 = Instant::now();
        let res = pipeline_run(&inst.relation, &plan.tree, &plan.path, &reg, &cfg)?;
        let wall = t0.elapsed().as_secs_f64();
        let pairs: Vec<(usize, usize)> = res.candidates.triples().iter().map(|&(t, s, _)| (t, s)).collect();
        let (b, same) = match &first {
            Some((b, p)) => (*b, *p == pairs),
            None => (wall, true),
        };
        writeln!(
            out,
            "{name}\t{wall:.4}\t{:.3}\t{}\t{}\t{}",
            b / wall,
            res.partitions,
            pairs.len(),
            same
        )?;
        if first.is_none() {
            first = Some((wall, pairs));
        }
    }
    Ok(())
}
