//! Run configuration, read from a single TOML document.
//!
//! Every section is optional except `[data]`, `[split]` and `[policies]`;
//! omitted values fall back to the defaults of the core crate.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use logicq_core::env::{
    ActionSelection, AssetClass, MarginConfig, OeConfig, PositionCap, StConfig,
};
use logicq_core::market_data::{parse_timestamp, Calendar, Schema, Span};
use logicq_core::metrics::Side;
use logicq_core::optimizer::{BoConfig, DEFAULT_TEMPERATURE_BOUNDS};
use logicq_core::policy::ToyTrainConfig;

use crate::error::CliError;

pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Oe,
    St,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Oe => "oe",
            Mode::St => "st",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetSource {
    pub id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub interval_secs: i64,
    #[serde(default)]
    pub calendar: Calendar,
    #[serde(default)]
    pub schema: Schema,
    pub assets: Vec<AssetSource>,
    /// Drives the sketch's market features in trading mode.
    #[serde(default)]
    pub index: Option<AssetSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// Defaults to the first bar of the data.
    #[serde(default)]
    pub start: Option<String>,
    /// Exclusive; defaults to just past the last bar.
    #[serde(default)]
    pub end: Option<String>,
    pub train: Span,
    pub validation: Span,
    pub test: Span,
    pub step: Span,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    #[serde(default)]
    pub temperature_bounds: Option<(f64, f64)>,
    /// Replaces the data-derived threshold ranges, one pair per slot.
    #[serde(default)]
    pub threshold_bounds: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub budget: Option<usize>,
    pub seed: Option<u64>,
    pub candidates: Option<usize>,
    pub refine_top: Option<usize>,
    pub refine_steps: Option<usize>,
    pub restarts: Option<usize>,
    pub xi: Option<f64>,
    pub local_scale: Option<f64>,
}

impl OptimizerConfig {
    pub fn bo(&self) -> BoConfig {
        let d = BoConfig::default();
        BoConfig {
            budget: self.budget.unwrap_or(d.budget),
            seed: self.seed.unwrap_or(d.seed),
            candidates: self.candidates.unwrap_or(d.candidates),
            refine_top: self.refine_top.unwrap_or(d.refine_top),
            refine_steps: self.refine_steps.unwrap_or(d.refine_steps),
            restarts: self.restarts.unwrap_or(d.restarts),
            xi: self.xi.unwrap_or(d.xi),
            local_scale: self.local_scale.unwrap_or(d.local_scale),
        }
    }
}

/// Environment overrides. Unset fields keep the market preset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvOverrides {
    pub lookback: Option<usize>,
    pub normalize_indicators: Option<bool>,
    pub selection: Option<ActionSelection>,
    // order execution
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
    /// Bars per parent order.
    pub horizon: Option<usize>,
    pub sides: Option<Vec<Side>>,
    pub quantity: Option<f64>,
    /// Preceding orders averaged into a VWAP volume profile.
    pub vwap_days: Option<usize>,
    pub periods_per_year: Option<f64>,
    // stock trading
    pub fee_rate: Option<f64>,
    pub initial_capital: Option<f64>,
    pub cap: Option<PositionCap>,
    pub lot_decimals: Option<u32>,
    pub action_levels: Option<usize>,
    /// Trade on margin at the preset rate unless `margin_rate` is set.
    pub margin: Option<bool>,
    pub margin_rate: Option<f64>,
    pub margin_period_months: Option<u32>,
    pub risk_free_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySpec {
    #[serde(default = "default_members")]
    pub members: usize,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    /// Trading-mode episode length in bars.
    #[serde(default = "default_episode_len")]
    pub episode_len: usize,
    /// Order-execution action count; action `i` requests `i` horizon units.
    #[serde(default = "default_oe_actions")]
    pub oe_actions: usize,
    #[serde(default = "default_reward_scale")]
    pub reward_scale: f64,
}

fn default_members() -> usize {
    1
}
fn default_episodes() -> usize {
    200
}
fn default_learning_rate() -> f64 {
    0.01
}
fn default_init_scale() -> f64 {
    0.01
}
fn default_episode_len() -> usize {
    40
}
fn default_oe_actions() -> usize {
    5
}
fn default_reward_scale() -> f64 {
    100.0
}

impl ToySpec {
    pub fn train_config(&self, member: usize, seed: u64) -> ToyTrainConfig {
        ToyTrainConfig {
            id: format!("toy-{member}"),
            episodes: self.episodes,
            learning_rate: self.learning_rate,
            init_scale: self.init_scale,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySources {
    /// Frozen policy files: linear (`weights`/`bias`) or state tables.
    #[serde(default)]
    pub external: Vec<PathBuf>,
    #[serde(default)]
    pub toy: Option<ToySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default = "default_market")]
    pub market: AssetClass,
    /// `default` or a rule file.
    #[serde(default = "default_template")]
    pub template: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub data: DataConfig,
    pub split: SplitConfig,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub env: EnvOverrides,
    pub policies: PolicySources,
}

fn default_market() -> AssetClass {
    AssetClass::Stock
}
fn default_template() -> String {
    "default".into()
}
fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}

/// Order-execution settings beyond the environment's own config.
#[derive(Debug, Clone, PartialEq)]
pub struct OeSettings {
    pub env: OeConfig,
    pub horizon: usize,
    pub sides: Vec<Side>,
    pub quantity: f64,
    pub vwap_days: usize,
    pub periods_per_year: f64,
}

impl RunConfig {
    /// Parses and validates; relative paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        for a in &mut cfg.data.assets {
            resolve(&mut a.path);
        }
        if let Some(ix) = cfg.data.index.as_mut() {
            resolve(&mut ix.path);
        }
        for p in &mut cfg.policies.external {
            resolve(p);
        }
        if cfg.template != "default" {
            let mut p = PathBuf::from(&cfg.template);
            resolve(&mut p);
            cfg.template = p.display().to_string();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let invalid = |m: String| Err(CliError::Validation(m));
        if self.seeds.is_empty() {
            return invalid("seeds must not be empty".into());
        }
        if self.optimizer.bo().budget == 0 {
            return invalid("optimizer budget must be at least 1".into());
        }
        if self.data.assets.is_empty() {
            return invalid("data.assets must list at least one series".into());
        }
        let mut paths: Vec<&Path> = self.data.assets.iter().map(|a| a.path.as_path()).collect();
        paths.extend(self.data.index.iter().map(|a| a.path.as_path()));
        paths.extend(self.policies.external.iter().map(PathBuf::as_path));
        if self.template != "default" {
            paths.push(Path::new(&self.template));
        }
        if let Some(p) = paths.iter().find(|p| !p.exists()) {
            return invalid(format!("referenced path {} does not exist", p.display()));
        }
        match (&self.policies.external.is_empty(), &self.policies.toy) {
            (true, None) => {
                return invalid("policies: give external files or a [policies.toy] table".into())
            }
            (false, Some(_)) => {
                return invalid("policies: external files and [policies.toy] are exclusive".into())
            }
            (_, Some(t)) if t.members == 0 => {
                return invalid("policies.toy.members must be at least 1".into())
            }
            _ => {}
        }
        if self.data.assets.iter().any(|a| a.id.is_empty()) {
            return invalid("asset ids must not be empty".into());
        }
        self.window_bounds()?;
        match self.mode {
            Mode::Oe => {
                let s = self.oe_settings();
                s.env
                    .validate()
                    .map_err(|e| CliError::Validation(e.to_string()))?;
                if s.horizon == 0 || s.sides.is_empty() || !(s.quantity > 0.0) {
                    return invalid(
                        "env: horizon, sides and quantity must be non-empty and positive".into(),
                    );
                }
            }
            Mode::St => self
                .st_config()
                .validate()
                .map_err(|e| CliError::Validation(e.to_string()))?,
        }
        if let Some((lo, hi)) = self.search.temperature_bounds {
            if !(lo > 0.0 && lo <= hi) {
                return invalid(format!(
                    "search.temperature_bounds ({lo}, {hi}) must satisfy 0 < lo ≤ hi"
                ));
            }
        }
        Ok(())
    }

    /// Explicit `[start, end)` limits of the split range, if given.
    pub fn window_bounds(&self) -> Result<(Option<i64>, Option<i64>), CliError> {
        let parse = |s: &Option<String>| {
            s.as_deref()
                .map(|s| {
                    parse_timestamp(s).map_err(|e| CliError::Validation(format!("split: {e}")))
                })
                .transpose()
        };
        Ok((parse(&self.split.start)?, parse(&self.split.end)?))
    }

    pub fn temperature_bounds(&self) -> (f64, f64) {
        self.search
            .temperature_bounds
            .unwrap_or(DEFAULT_TEMPERATURE_BOUNDS)
    }

    pub fn risk_free_rate(&self) -> f64 {
        self.env.risk_free_rate.unwrap_or(0.0)
    }

    pub fn lookback(&self) -> usize {
        self.env
            .lookback
            .unwrap_or(logicq_core::indicators::DEFAULT_LOOKBACK)
    }

    pub fn oe_settings(&self) -> OeSettings {
        let e = &self.env;
        let d = OeConfig::default();
        OeSettings {
            env: OeConfig {
                gamma: e.gamma.unwrap_or(d.gamma),
                alpha: e.alpha.unwrap_or(d.alpha),
                lookback: self.lookback(),
                normalize_indicators: e.normalize_indicators.unwrap_or(d.normalize_indicators),
                selection: e.selection.unwrap_or(d.selection),
            },
            horizon: e.horizon.unwrap_or(240),
            sides: e
                .sides
                .clone()
                .unwrap_or_else(|| vec![Side::Sell, Side::Buy]),
            quantity: e.quantity.unwrap_or(1000.0),
            vwap_days: e
                .vwap_days
                .unwrap_or(logicq_core::baselines::DEFAULT_VWAP_DAYS),
            periods_per_year: e
                .periods_per_year
                .unwrap_or(logicq_core::metrics::TRADING_DAYS_PER_YEAR),
        }
    }

    pub fn st_config(&self) -> StConfig {
        let e = &self.env;
        let mut c = StConfig::preset(self.market);
        c.fee_rate = e.fee_rate.unwrap_or(c.fee_rate);
        c.initial_capital = e.initial_capital.unwrap_or(c.initial_capital);
        c.cap = e.cap.unwrap_or(c.cap);
        c.lot_decimals = e.lot_decimals.unwrap_or(c.lot_decimals);
        c.action_levels = e.action_levels.unwrap_or(c.action_levels);
        c.lookback = self.lookback();
        c.normalize_indicators = e.normalize_indicators.unwrap_or(c.normalize_indicators);
        c.selection = e.selection.unwrap_or(c.selection);
        c.periods_per_year = e.periods_per_year.unwrap_or(c.periods_per_year);
        if e.margin.unwrap_or(false) || e.margin_rate.is_some() {
            let d = StConfig::default_margin(self.market);
            c.margin = Some(MarginConfig {
                annual_rate: e.margin_rate.unwrap_or(d.annual_rate),
                period_months: e.margin_period_months.unwrap_or(d.period_months),
            });
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(dir: &Path) -> String {
        std::fs::write(dir.join("a.csv"), "timestamp,open,high,low,close,volume\n").unwrap();
        r#"
mode = "st"
[data]
interval_secs = 86400
assets = [{ id = "A", path = "a.csv" }]
[split]
train = { days = 100 }
validation = { days = 50 }
test = { days = 50 }
step = { days = 50 }
[policies.toy]
members = 3
"#
        .to_string()
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::from_toml(&minimal(dir.path()), dir.path()).unwrap();
        assert_eq!(cfg.seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(cfg.optimizer.bo(), BoConfig::default());
        assert_eq!(cfg.st_config(), StConfig::preset(AssetClass::Stock));
        assert_eq!(cfg.oe_settings().env, OeConfig::default());
        assert!(
            cfg.data.assets[0].path.is_absolute()
                || cfg.data.assets[0].path.starts_with(dir.path())
        );
    }

    #[test]
    fn rejects_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let base = minimal(dir.path());
        let cases = [
            base.replace("mode = \"st\"", "mode = \"st\"\nseeds = []"),
            base.replace("mode = \"st\"", "mode = \"st\"\n[optimizer]\nbudget = 0"),
            base.replace("a.csv", "missing.csv"),
            base.replace("members = 3", "members = 3\nbogus = 1"),
            base.replace("[policies.toy]\nmembers = 3", "[policies]"),
        ];
        for text in cases {
            assert!(
                matches!(
                    RunConfig::from_toml(&text, dir.path()),
                    Err(CliError::Validation(_))
                ),
                "{text}"
            );
        }
    }

    #[test]
    fn margin_override() {
        let dir = tempfile::tempdir().unwrap();
        let text = minimal(dir.path()).replace("[split]", "[env]\nmargin = true\n[split]");
        let cfg = RunConfig::from_toml(&text, dir.path()).unwrap();
        assert_eq!(
            cfg.st_config().margin,
            Some(StConfig::default_margin(AssetClass::Stock))
        );
    }
}
