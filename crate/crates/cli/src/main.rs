mod bench;
mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use mdblock::engine::CandidateSet;
use mdblock::epg::{generate_plan, Plan, PlanConfig};
use mdblock::metrics::{compute_metrics, GroundTruth};
use mdblock::model::{load_relation, LoadOptions, Relation};
use mdblock::partition::pipeline_run;
use mdblock::rules::{parse_ruleset, RuleSet};
use mdblock::similarity::MeasureRegistry;

use crate::bench::Suite;
use crate::config::Settings;

#[derive(Parser)]
#[command(name = "mdblock", version, about = "Rule-based blocking for entity resolution")]
struct Cli {
    /// Log scheduler and planner warnings to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate candidate pairs and, given ground truth, report quality.
    Run {
        /// TOML file with any of the options below.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Print the predicate ordering, execution tree and compiled path.
    Explain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Run a benchmark suite and print a TSV table.
    Bench {
        #[arg(long, value_enum)]
        suite: Suite,
        #[command(flatten)]
        opts: bench::BenchOpts,
    },
}

struct StderrLogger;

impl log::Log for StderrLogger {
    fn enabled(&self, m: &log::Metadata) -> bool {
        m.level() <= log::max_level()
    }

    fn log(&self, r: &log::Record) {
        if self.enabled(r.metadata()) {
            eprintln!("{}: {}", r.level().as_str().to_lowercase(), r.args());
        }
    }

    fn flush(&self) {}
}

static LOGGER: StderrLogger = StderrLogger;

fn load_inputs(s: &Settings) -> Result<(Relation, RuleSet, MeasureRegistry)> {
    let opts = LoadOptions {
        eid_attr: s.eid.clone(),
        ..Default::default()
    };
    let data = s.require_data()?;
    let rel = load_relation(data, &opts).with_context(|| format!("loading {}", data.display()))?;
    let rules = s.require_rules()?;
    let text = std::fs::read_to_string(rules).with_context(|| format!("reading {}", rules.display()))?;
    let reg = MeasureRegistry::new();
    let rs = parse_ruleset(&text, &reg)?;
    Ok((rel, rs, reg))
}

fn plan(rel: &Relation, rs: &RuleSet, reg: &MeasureRegistry, s: &Settings) -> Result<Plan> {
    let mut cfg = PlanConfig {
        order: s.order_mode()?,
        seed: s.seed(),
        ..Default::default()
    };
    if let Some(n) = s.timing_samples {
        cfg.timing_samples = n;
    }
    Ok(generate_plan(rel, rs, reg, &cfg)?)
}

/// `t_tid,s_tid,witness_rule_id`, one row per candidate, sorted.
fn write_candidates(out: &mut dyn Write, ca: &CandidateSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t_tid", "s_tid", "witness_rule_id"])?;
    for (t, s, rule) in ca.triples() {
        w.write_record([t.to_string().as_str(), s.to_string().as_str(), rule])?;
    }
    w.flush()?;
    Ok(())
}

fn ground_truth(spec: &str, rel: &Relation) -> Result<GroundTruth> {
    Ok(if spec == "eid" {
        GroundTruth::from_eid(rel)?
    } else {
        GroundTruth::load_pairs(Path::new(spec), rel.len())?
    })
}

fn cmd_run(s: Settings) -> Result<()> {
    let (rel, rs, reg) = load_inputs(&s)?;
    let plan = plan(&rel, &rs, &reg, &s)?;
    for w in &plan.warnings {
        log::warn!("{w}");
    }
    let cfg = s.pipeline(plan.path.is_symmetric())?;
    let res = pipeline_run(&rel, &plan.tree, &plan.path, &reg, &cfg)?;
    log::info!(
        "{} partitions, {} pulls, device loads {:?}, {} scheduler overflows",
        res.partitions,
        res.pulls,
        res.device_loads,
        res.overflows
    );
    match &s.out {
        Some(p) => {
            let f = std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
            let mut f = std::io::BufWriter::new(f);
            write_candidates(&mut f, &res.candidates)?;
            f.flush()?;
        }
        None => write_candidates(&mut std::io::stdout().lock(), &res.candidates)?,
    }
    if let Some(spec) = &s.ground_truth {
        let gt = ground_truth(spec, &rel)?;
        let report = compute_metrics(&res.candidates, &gt, rel.len()).with_stages(&res.timings);
        let text = report.to_text();
        if s.out.is_some() {
            print!("{text}");
        } else {
            eprint!("{text}");
        }
        if let Some(p) = &s.metrics_json {
            std::fs::write(p, serde_json::to_string_pretty(&report)?)
                .with_context(|| format!("writing {}", p.display()))?;
        }
    }
    Ok(())
}

fn cmd_explain(s: Settings) -> Result<()> {
    let (rel, rs, reg) = load_inputs(&s)?;
    let plan = plan(&rel, &rs, &reg, &s)?;
    println!(
        "{} tuples, {} rules, {} distinct predicates, ordering {}",
        rel.len(),
        rs.len(),
        plan.universe.len(),
        s.order.as_deref().unwrap_or("epg")
    );
    print!("{}", plan.dump());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let _ = log::set_logger(&LOGGER);
    log::set_max_level(if cli.verbose {
        log::LevelFilter::Info
    } else {
        log::LevelFilter::Warn
    });
    let res = match cli.command {
        Command::Run { config, settings } => Settings::resolve(settings, config.as_deref()).and_then(cmd_run),
        Command::Explain { config, settings } => Settings::resolve(settings, config.as_deref()).and_then(cmd_explain),
        Command::Bench { suite, opts } => bench::run(suite, &opts, &mut std::io::stdout().lock()),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
