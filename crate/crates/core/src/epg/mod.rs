//! Execution plan generation: cost and selectivity estimates, predicate
//! ordering, the scored execution tree, and its compiled path.

pub mod cost;
pub mod order;
pub mod path;
pub mod selectivity;
pub mod tree;

use std::fmt::Write as _;
use std::time::{Duration, Instant};

pub use cost::{
    estimate_cost, estimate_costs, measure_costs, normalize_costs, sample_timings, train_cost_model, CostModel,
    PairSample, Timer, TimingLog, TimingSample, TrainConfig,
};
pub use order::{order_predicates, OrderedPredicate, PredicateOrdering};
pub use path::{compile_path, ExecutionPath, Instruction};
pub use selectivity::{estimate_selectivity, SelectivityConfig, SelectivityProfile};
pub use tree::{build_tree, score_tree, score_tree_with_wp, EdgeLabel, ExecutionTree};

use crate::error::{Error, Result};
use crate::model::{Relation, Schema};
use crate::prepared::BoundPredicate;
use crate::rules::{predicate_universe, validate_ruleset, Predicate, RuleSet};
use crate::similarity::{eval_predicate, MeasureRegistry};

/// Which predicate ordering the tree is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OrderMode {
    #[default]
    Epg,
    Reversed,
    Random(u64),
}

impl OrderMode {
    pub fn apply(self, ordering: PredicateOrdering) -> PredicateOrdering {
        match self {
            OrderMode::Epg => ordering,
            OrderMode::Reversed => ordering.reversed(),
            OrderMode::Random(seed) => ordering.shuffled(seed),
        }
    }
}

/// How rule witness probabilities are obtained.
#[derive(Debug, Clone, Default)]
pub enum WpSource {
    /// Product of predicate selectivities.
    #[default]
    Independence,
    /// Fraction of these labeled pairs (tids) on which each rule holds.
    Labeled(Vec<(usize, usize)>),
}

#[derive(Debug, Clone)]
pub struct PlanConfig {
    pub timing_samples: usize,
    pub timer: Timer,
    pub cost_pairs: usize,
    pub train: TrainConfig,
    pub selectivity: SelectivityConfig,
    pub order: OrderMode,
    pub wp: WpSource,
    pub seed: u64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            timing_samples: 500,
            timer: Timer::default(),
            cost_pairs: PairSample::DEFAULT_SIZE,
            train: TrainConfig::default(),
            selectivity: SelectivityConfig::default(),
            order: OrderMode::Epg,
            wp: WpSource::Independence,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PlanTimings {
    pub sampling: Duration,
    pub training: Duration,
    pub estimation: Duration,
    /// Ordering, tree construction, scoring and compilation.
    pub planning: Duration,
}

#[derive(Debug, Clone)]
pub struct Plan {
    pub universe: Vec<Predicate>,
    pub costs: Vec<f64>,
    pub profiles: Vec<SelectivityProfile>,
    pub ordering: PredicateOrdering,
    pub tree: ExecutionTree,
    pub path: ExecutionPath,
    pub cost_model_mse: Option<f64>,
    pub warnings: Vec<String>,
    pub timings: PlanTimings,
}

impl Plan {
    pub fn sps(&self) -> Vec<f64> {
        self.profiles.iter().map(|p| p.sp).collect()
    }

    /// Ordering table, scored tree and instruction list as structured text.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "ordering:");
        let _ = writeln!(out, "  rank  cost      sp        ce          predicate");
        for (r, e) in self.ordering.entries().iter().enumerate() {
            let _ = writeln!(
                out,
                "  {r:<5} {:<9.6} {:<9.6} {:<11.6} {}",
                e.est_cost, e.sp, e.cost_effectiveness, e.predicate
            );
        }
        let _ = writeln!(out, "tree:");
        let _ = writeln!(out, "  rule wp:");
        for (id, wp) in self.tree.rule_ids.iter().zip(&self.tree.wp) {
            let _ = writeln!(out, "    {id} = {wp:.6}");
        }
        for line in self.tree.dump().lines() {
            let _ = writeln!(out, "  {line}");
        }
        let _ = writeln!(out, "path:");
        for line in self.path.dump().lines() {
            let _ = writeln!(out, "  {line}");
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

/// Orders, builds, scores and compiles from given estimates.
pub fn plan_from_estimates(
    rs: &RuleSet,
    schema: &Schema,
    reg: &MeasureRegistry,
    costs: &[f64],
    sps: &[f64],
    order: OrderMode,
) -> Result<(PredicateOrdering, ExecutionTree, ExecutionPath)> {
    let universe = predicate_universe(rs);
    let ordering = order.apply(order_predicates(&universe, costs, sps)?);
    let tree = score_tree(&build_tree(rs, &ordering)?, sps)?;
    let path = compile_path(&tree, schema, reg)?;
    Ok((ordering, tree, path))
}

/// Full plan generation on `rel`.
pub fn generate_plan(rel: &Relation, rs: &RuleSet, reg: &MeasureRegistry, cfg: &PlanConfig) -> Result<Plan> {
    let mut warnings = validate_ruleset(rs, rel.schema())?;
    if rel.is_empty() {
        return Err(Error::EmptyRelation);
    }
    let universe = predicate_universe(rs);
    let mut timings = PlanTimings::default();

    let t0 = Instant::now();
    let log = sample_timings(rel, &universe, reg, cfg.timing_samples, cfg.seed, cfg.timer)?;
    timings.sampling = t0.elapsed();

    let t0 = Instant::now();
    let model = train_cost_model(&log, &TrainConfig { seed: cfg.seed.wrapping_add(cfg.train.seed), ..cfg.train.clone() })?;
    timings.training = t0.elapsed();

    let t0 = Instant::now();
    let bound = universe
        .iter()
        .map(|p| BoundPredicate::bind(p, rel.schema(), reg))
        .collect::<Result<Vec<_>>>()?;
    let sample = PairSample::uniform(rel, cfg.cost_pairs, cfg.seed ^ 0x5eed);
    let costs = estimate_costs(&bound, rel, &model, &sample);
    let sel_cfg = SelectivityConfig { seed: cfg.seed, ..cfg.selectivity.clone() };
    let profiles = universe
        .iter()
        .map(|p| estimate_selectivity(p, rel, reg, &sel_cfg))
        .collect::<Result<Vec<_>>>()?;
    warnings.extend(profiles.iter().filter_map(|p| p.warning.clone()));
    timings.estimation = t0.elapsed();

    let t0 = Instant::now();
    let sps: Vec<f64> = profiles.iter().map(|p| p.sp).collect();
    let ordering = cfg.order.apply(order_predicates(&universe, &costs, &sps)?);
    let unscored = build_tree(rs, &ordering)?;
    let tree = match &cfg.wp {
        WpSource::Independence => score_tree(&unscored, &sps)?,
        WpSource::Labeled(pairs) => score_tree_with_wp(&unscored, labeled_wp(rel, rs, reg, pairs)?)?,
    };
    let path = compile_path(&tree, rel.schema(), reg)?;
    timings.planning = t0.elapsed();

    Ok(Plan {
        universe,
        costs,
        profiles,
        ordering,
        tree,
        path,
        cost_model_mse: Some(model.final_mse),
        warnings,
        timings,
    })
}

/// Per rule, the fraction of `pairs` on which its precondition holds.
pub fn labeled_wp(rel: &Relation, rs: &RuleSet, reg: &MeasureRegistry, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(Error::Config("labeled witness estimation needs at least one pair".into()));
    }
    rs.rules()
        .iter()
        .map(|r| {
            let mut hits = 0usize;
            for &(t, s) in pairs {
                let mut all = true;
                for p in &r.precondition {
                    if !eval_predicate(p, rel.tuple(t), rel.tuple(s), rel.schema(), reg)? {
                        all = false;
                        break;
                    }
                }
                hits += usize::from(all);
            }
            Ok(hits as f64 / pairs.len() as f64)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PlanBudgetReport {
    pub rules: usize,
    pub predicates: usize,
    pub order: Duration,
    pub build: Duration,
    pub score: Duration,
    pub compile: Duration,
}

impl PlanBudgetReport {
    pub fn total(&self) -> Duration {
        self.order + self.build + self.score + self.compile
    }
}

/// Wall time of ordering, tree construction, scoring and compilation, with
/// cost and selectivity estimates given.
pub fn plan_generation_time_budget(
    rs: &RuleSet,
    schema: &Schema,
    reg: &MeasureRegistry,
    costs: &[f64],
    sps: &[f64],
) -> Result<PlanBudgetReport> {
    let universe = predicate_universe(rs);
    let t0 = Instant::now();
    let ordering = order_predicates(&universe, costs, sps)?;
    let order = t0.elapsed();
    let t0 = Instant::now();
    let tree = build_tree(rs, &ordering)?;
    let build = t0.elapsed();
    let t0 = Instant::now();
    let tree = score_tree(&tree, sps)?;
    let score = t0.elapsed();
    let t0 = Instant::now();
    compile_path(&tree, schema, reg)?;
    let compile = t0.elapsed();
    Ok(PlanBudgetReport {
        rules: rs.len(),
        predicates: universe.len(),
        order,
        build,
        score,
        compile,
    })
}
