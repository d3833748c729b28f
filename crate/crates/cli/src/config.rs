//! Run configuration file.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use folio_core::backtest::{COST_GRID_BPS, SIGNAL_LOOKBACK};
use folio_core::{
    AllocationMode, CostModel, EnsembleCombine, PortfolioKind, SplitSpec, SynthSpec, TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. Ensemble members use seed+1, seed+2, seed+3; random
    /// portfolios and synthetic markets use the seed itself.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub data: Option<DataPaths>,
    pub synthetic: Option<SynthSpec>,
    pub split: SplitSpec,
    pub portfolios: PortfolioGrid,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub backtest: BacktestSection,
}

/// CSV inputs; relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub prices: PathBuf,
    pub caps: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortfolioGrid {
    pub sizes: Vec<usize>,
    pub kinds: Vec<PortfolioKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestSection {
    pub costs_bps: Vec<f64>,
    pub allocation: AllocationMode,
    pub combine: EnsembleCombine,
    /// Two dates cutting the test period into three phases.
    pub phases: [NaiveDate; 2],
}

impl Default for BacktestSection {
    fn default() -> Self {
        Self {
            costs_bps: COST_GRID_BPS.to_vec(),
            allocation: AllocationMode::Threshold,
            combine: EnsembleCombine::Mean,
            phases: [
                NaiveDate::from_ymd_opt(2020, 2, 19).expect("valid date"),
                NaiveDate::from_ymd_opt(2020, 3, 23).expect("valid date"),
            ],
        }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

impl RunConfig {
    /// Reads and validates a config file, resolving data paths against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(d) = cfg.data.as_mut() {
            d.prices = base.join(&d.prices);
            d.caps = base.join(&d.caps);
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        match (&self.data, &self.synthetic) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(CliError::Config(
                    "exactly one of [data] and [synthetic] must be given".into(),
                ))
            }
            (None, Some(s)) => s.validate().map_err(|e| field("synthetic", e))?,
            (Some(_), None) => {}
        }
        self.split.validate().map_err(|e| field("split", e))?;
        self.train.validate().map_err(|e| field("train", e))?;
        // every strategy then makes its first decision on the first test date
        if self.train.window < SIGNAL_LOOKBACK {
            return Err(CliError::Config(format!(
                "train.window: must be ≥ {SIGNAL_LOOKBACK}, the signal lookback"
            )));
        }
        if self.portfolios.sizes.is_empty() || self.portfolios.sizes.contains(&0) {
            return Err(CliError::Config(
                "portfolios.sizes: need at least one positive size".into(),
            ));
        }
        if self.portfolios.kinds.is_empty() {
            return Err(CliError::Config("portfolios.kinds: need at least one kind".into()));
        }
        let b = &self.backtest;
        if b.costs_bps.is_empty() {
            return Err(CliError::Config("backtest.costs_bps: need at least one level".into()));
        }
        for &bps in &b.costs_bps {
            CostModel::from_bps(bps).map_err(|e| field("backtest.costs_bps", e))?;
        }
        if let AllocationMode::TopK { k: 0 } = b.allocation {
            return Err(CliError::Config("backtest.allocation.k: must be ≥ 1".into()));
        }
        if b.phases[0] >= b.phases[1] {
            return Err(CliError::Config("backtest.phases: dates must be increasing".into()));
        }
        Ok(())
    }

    /// Per-member training seeds.
    pub fn member_seeds(&self) -> [u64; 3] {
        [1, 2, 3].map(|k| self.seed.wrapping_add(k))
    }

    /// Rows of leading history every evaluation and test slice carries.
    pub fn lookback(&self) -> usize {
        self.train.window
    }
}

fn field(name: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{name}: {e}"))
}
