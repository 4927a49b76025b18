use std::collections::HashSet;

use mdblock::engine::{run_relation, EngineConfig};
use mdblock::epg::{generate_plan, Plan, PlanConfig};
use mdblock::model::Relation;
use mdblock::oracle::nested_loop;
use mdblock::partition::{pipeline_run, PipelineConfig, PipelineMode};
use mdblock::rules::RuleSet;
use mdblock::similarity::MeasureRegistry;
use mdblock::synth;

fn plan(rel: &Relation, rs: &RuleSet, reg: &MeasureRegistry, seed: u64) -> Plan {
    generate_plan(
        rel,
        rs,
        reg,
        &PlanConfig {
            seed,
            timing_samples: 100,
            ..Default::default()
        },
    )
    .unwrap()
}

fn cfg(devices: usize, max_partition: Option<usize>, mode: PipelineMode, symmetric: bool) -> PipelineConfig {
    let mut c = PipelineConfig {
        mode,
        channel_capacity: 2,
        seed: 3,
        ..Default::default()
    };
    c.devices.count = devices;
    c.engine.symmetric_mode = symmetric;
    match max_partition {
        Some(m) => c.partition.max_partition_size = m,
        None => c.partition.enabled = false,
    }
    c
}

#[test]
fn unpartitioned_pipeline_equals_nested_loop() {
    let reg = MeasureRegistry::new();
    for seed in 0..10 {
        let inst = synth::oracle_instance(seed, 200);
        let p = plan(&inst.relation, &inst.rules, &reg, seed);
        let sym = p.path.is_symmetric();
        let want: HashSet<(usize, usize)> = nested_loop(&inst.relation, &inst.rules, &reg, &p.path.checkpoint_order(), sym)
            .unwrap()
            .into_iter()
            .map(|(t, s, _)| (t, s))
            .collect();
        for mode in [PipelineMode::Async, PipelineMode::Sync] {
            let got = pipeline_run(&inst.relation, &p.tree, &p.path, &reg, &cfg(3, None, mode, sym)).unwrap();
            assert_eq!(got.candidates.pair_set(), want, "seed {seed} {mode:?}");
        }
    }
}

#[test]
fn partitioned_output_is_sound_and_mode_independent() {
    let reg = MeasureRegistry::new();
    for seed in 0..10 {
        let inst = synth::oracle_instance(seed, 300);
        let p = plan(&inst.relation, &inst.rules, &reg, seed);
        let sym = p.path.is_symmetric();
        let all = run_relation(&inst.relation, &p.path, &EngineConfig { symmetric_mode: sym, ..Default::default() })
            .unwrap()
            .pair_set();
        let a = pipeline_run(&inst.relation, &p.tree, &p.path, &reg, &cfg(4, Some(32), PipelineMode::Async, sym)).unwrap();
        let s = pipeline_run(&inst.relation, &p.tree, &p.path, &reg, &cfg(2, Some(32), PipelineMode::Sync, sym)).unwrap();
        assert!(a.candidates.pair_set().is_subset(&all), "seed {seed}");
        assert_eq!(a.candidates.triples(), s.candidates.triples(), "seed {seed}");
    }
}

#[test]
fn equality_rooted_partitioning_loses_nothing() {
    let reg = MeasureRegistry::new();
    let inst = synth::scaling_relation(3000, 40, 5);
    let p = plan(&inst.relation, &inst.rules, &reg, 5);
    let sym = p.path.is_symmetric();
    let whole = run_relation(&inst.relation, &p.path, &EngineConfig { symmetric_mode: sym, ..Default::default() }).unwrap();
    let parts = pipeline_run(&inst.relation, &p.tree, &p.path, &reg, &cfg(4, Some(256), PipelineMode::Async, sym)).unwrap();
    assert!(parts.partitions > 1);
    assert_eq!(parts.candidates.triples(), whole.triples());
}
