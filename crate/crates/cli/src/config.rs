//! Settings shared by the command line and the TOML config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Deserialize;

use mdblock::engine::{EngineConfig, Stealing};
use mdblock::epg::OrderMode;
use mdblock::partition::{DeviceConfig, PartitionConfig, PipelineConfig, PipelineMode};

/// Every option of `run` and `explain`. A flag on the command line wins
/// over the same key in `--config`.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Relation CSV with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Rule file (JSON).
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Candidate pairs CSV to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Matching pairs CSV of tids, or `eid` to use the entity-id column.
    #[arg(long = "ground-truth")]
    pub ground_truth: Option<String>,
    /// Entity-id column of the data file (default: a column named `eid`).
    #[arg(long)]
    pub eid: Option<String>,
    /// Largest partition size; 0 turns partitioning off.
    #[arg(long)]
    pub partitions: Option<usize>,
    /// Cross pulls between partitions that may share matches.
    #[arg(long = "cross-pulls")]
    pub cross_pulls: Option<bool>,
    /// Simulated devices.
    #[arg(long)]
    pub devices: Option<usize>,
    /// Worker blocks (threads) per device.
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Lane ranges taken per intra-interval steal.
    #[arg(long)]
    pub lanes: Option<usize>,
    /// Fixed device capacity in pairs; default is the bounded-load rule.
    #[arg(long)]
    pub capacity: Option<u64>,
    #[arg(long = "load-factor")]
    pub load_factor: Option<f64>,
    /// Outer tuples per interval.
    #[arg(long)]
    pub nt: Option<usize>,
    /// Intervals per window.
    #[arg(long)]
    pub nw: Option<usize>,
    /// off, inter or inter+intra.
    #[arg(long)]
    pub stealing: Option<String>,
    /// Compare each unordered pair once (default: when the rules allow it).
    #[arg(long)]
    pub symmetric: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run pipeline stages one after another.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub sync: Option<bool>,
    /// Predicate ordering: epg, random or reversed.
    #[arg(long)]
    pub order: Option<String>,
    /// Pairs timed to train the cost model.
    #[arg(long = "timing-samples")]
    pub timing_samples: Option<usize>,
    /// Also write the metrics report as JSON here.
    #[arg(long = "metrics-json")]
    pub metrics_json: Option<PathBuf>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f; } )*
    };
}

impl Settings {
    /// Reads `--config` (if any) and lays the command-line values on top.
    pub fn resolve(cli: Settings, config: Option<&Path>) -> Result<Settings> {
        let mut s = match config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str::<Settings>(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => Settings::default(),
        };
        overlay!(s, cli; data, rules, out, ground_truth, eid, partitions, cross_pulls, devices, blocks, lanes,
            capacity, load_factor, nt, nw, stealing, symmetric, seed, sync, order, timing_samples, metrics_json);
        Ok(s)
    }

    pub fn require_data(&self) -> Result<&Path> {
        self.data.as_deref().context("missing --data")
    }

    pub fn require_rules(&self) -> Result<&Path> {
        self.rules.as_deref().context("missing --rules")
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn order_mode(&self) -> Result<OrderMode> {
        parse_order(self.order.as_deref().unwrap_or("epg"), self.seed())
    }

    /// Pipeline settings; `symmetric_ok` is whether the compiled path allows
    /// symmetric evaluation.
    pub fn pipeline(&self, symmetric_ok: bool) -> Result<PipelineConfig> {
        let mut devices = DeviceConfig::default();
        if let Some(n) = self.devices {
            devices.count = n;
        }
        if let Some(b) = self.blocks {
            devices.blocks = b;
        }
        if let Some(l) = self.lanes {
            devices.lanes = l;
        }
        devices.capacity = self.capacity.or(devices.capacity);
        if let Some(f) = self.load_factor {
            devices.load_factor = f;
        }
        let mut engine = EngineConfig::default();
        if let Some(v) = self.nt {
            engine.n_t = v;
        }
        if let Some(v) = self.nw {
            engine.n_w = v;
        }
        if let Some(st) = &self.stealing {
            engine.stealing = st.parse::<Stealing>()?;
        }
        engine.symmetric_mode = self.symmetric.unwrap_or(symmetric_ok);
        let mut partition = PartitionConfig {
            seed: self.seed(),
            ..Default::default()
        };
        match self.partitions {
            Some(0) => partition.enabled = false,
            Some(n) => partition.max_partition_size = n,
            None => {}
        }
        if let Some(c) = self.cross_pulls {
            partition.cross_pulls = c;
        }
        Ok(PipelineConfig {
            devices,
            engine,
            partition,
            mode: if self.sync.unwrap_or(false) {
                PipelineMode::Sync
            } else {
                PipelineMode::Async
            },
            channel_capacity: 4,
            seed: self.seed(),
        })
    }
}

pub fn parse_order(s: &str, seed: u64) -> Result<OrderMode> {
    Ok(match s {
        "epg" => OrderMode::Epg,
        "random" => OrderMode::Random(seed),
        "reversed" => OrderMode::Reversed,
        other => bail!("unknown ordering `{other}` (epg, random, reversed)"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_line_overrides_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "nt = 16\nseed = 3\nstealing = \"off\"\nsync = true\n").unwrap();
        let cli = Settings {
            seed: Some(9),
            ..Default::default()
        };
        let s = Settings::resolve(cli, Some(&p)).unwrap();
        assert_eq!((s.nt, s.seed, s.sync), (Some(16), Some(9), Some(true)));
        let cfg = s.pipeline(true).unwrap();
        assert_eq!(cfg.engine.stealing, Stealing::Off);
        assert_eq!(cfg.mode, PipelineMode::Sync);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "threads = 4\n").unwrap();
        assert!(Settings::resolve(Settings::default(), Some(&p)).is_err());
    }

    #[test]
    fn zero_partitions_disables_partitioning() {
        let s = Settings {
            partitions: Some(0),
            ..Default::default()
        };
        assert!(!s.pipeline(true).unwrap().partition.enabled);
    }
}
