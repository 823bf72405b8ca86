//! Subcommand implementations. Everything that can be checked without
//! computing (config, data, templates, policy files, parameter files) is
//! checked first and reported as a validation error.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use logicq_core::baselines::{buy_and_hold, twap_schedule, vwap_schedule};
use logicq_core::env::{
    oe_market_features, MarginCallEvent, OeTrainingEnv, OrderTask, StConfig, StMarket,
    StTrainingEnv, TrendPoint,
};
use logicq_core::indicators::MarketFeatures;
use logicq_core::market_data::{
    export_series, load_series, make_rolling_splits, AssetSeries, RollingSplit, Window,
};
use logicq_core::metrics::{st_metrics, EquityCurve, MetricReport, Side};
use logicq_core::optimizer::{write_trial_history, Objective, Trial};
use logicq_core::pipeline::{
    backtest_oe, backtest_oe_schedule, backtest_st, derive_seed, fit_sketch,
    market_feature_samples, EvalData, FitConfig, OeBacktest,
};
use logicq_core::policy::{
    train_toy_policy, BasePolicy, DecisionPolicy, FrozenPolicy, LinearPolicy, TablePolicy,
    TunedPolicy,
};
use logicq_core::sketch::{
    default_template, parse_sketch, SketchMode, SketchParams, SketchTemplate,
};

use crate::config::{AssetSource, Mode, OeSettings, RunConfig};
use crate::error::CliError;
use crate::report::{compare, write_timeline, Comparison, RunReport, SeedRun, SplitReport};

const STREAM_TOY: u64 = 1;
const STREAM_BO: u64 = 2;
const STREAM_EVAL: u64 = 3;
const STREAM_TEST: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Base policy tuned by the fitted sketch.
    Logicq,
    /// Untuned base policy.
    Base,
    Twap,
    Vwap,
    /// Equal-weight buy and hold.
    Bah,
    /// The market index.
    Index,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Logicq => "logicq",
            Strategy::Base => "base",
            Strategy::Twap => "twap",
            Strategy::Vwap => "vwap",
            Strategy::Bah => "bah",
            Strategy::Index => "index",
        }
    }

    fn check_mode(self, mode: Mode) -> Result<(), CliError> {
        let ok = match self {
            Strategy::Logicq | Strategy::Base => true,
            Strategy::Twap | Strategy::Vwap => mode == Mode::Oe,
            Strategy::Bah | Strategy::Index => mode == Mode::St,
        };
        if ok {
            Ok(())
        } else {
            Err(CliError::Validation(format!(
                "strategy {} does not apply to mode {}",
                self.name(),
                mode.name()
            )))
        }
    }
}

/// A parent order plus what the baselines and the timeline need.
#[derive(Debug, Clone)]
pub struct OeOrder {
    pub task: OrderTask,
    pub timestamps: Vec<i64>,
    /// Volumes of up to `vwap_days` preceding horizons, most recent first.
    pub profiles: Vec<Vec<f64>>,
}

fn side_name(side: Side) -> &'static str {
    match side {
        Side::Sell => "sell",
        Side::Buy => "buy",
    }
}

/// Cuts each asset's bars in `window` into consecutive horizons, one order
/// per side. Horizons without `lookback` bars of history are skipped.
pub fn build_orders(
    assets: &[AssetSeries],
    window: Window,
    s: &OeSettings,
) -> Result<Vec<OeOrder>, CliError> {
    let (h, g) = (s.horizon, s.env.lookback);
    let mut out = Vec::new();
    for a in assets {
        let hi = a.index_at_or_after(window.end);
        let mut start = a.index_at_or_after(window.start);
        while start + h <= hi {
            if start >= g {
                let bars = &a.bars[start..start + h];
                let prices: Vec<f64> = bars.iter().map(|b| b.close).collect();
                let history: Vec<f64> = a.bars[start - g..start].iter().map(|b| b.close).collect();
                let profiles: Vec<Vec<f64>> = (1..=s.vwap_days)
                    .filter_map(|k| start.checked_sub(k * h))
                    .map(|p| a.bars[p..p + h].iter().map(|b| b.volume).collect())
                    .collect();
                for &side in &s.sides {
                    let id = format!("{}-{}-{}", a.asset_id, bars[0].timestamp, side_name(side));
                    let task = OrderTask::new(
                        id,
                        &a.asset_id,
                        side,
                        s.quantity,
                        prices.clone(),
                        history.clone(),
                    )
                    .map_err(CliError::runtime)?;
                    out.push(OeOrder {
                        task,
                        timestamps: bars.iter().map(|b| b.timestamp).collect(),
                        profiles: profiles.clone(),
                    });
                }
            }
            start += h;
        }
    }
    Ok(out)
}

/// Half-open bar range of `window` in an aligned market.
pub fn bar_range(market: &StMarket, window: Window) -> (usize, usize) {
    let at = |ts: i64| market.timestamps.partition_point(|&t| t < ts);
    (at(window.start), at(window.end))
}

enum Market {
    Oe {
        assets: Vec<AssetSeries>,
        settings: OeSettings,
    },
    St {
        market: StMarket,
        cfg: StConfig,
    },
}

/// A validated run: config, data, splits, template and external policies.
pub struct Prepared {
    pub cfg: RunConfig,
    market: Market,
    pub splits: Vec<RollingSplit>,
    pub template: SketchTemplate,
    external: Vec<Arc<dyn FrozenPolicy>>,
}

fn load_source(cfg: &RunConfig, a: &AssetSource) -> Result<AssetSeries, CliError> {
    load_series(
        &a.path,
        &cfg.data.schema,
        &a.id,
        cfg.data.interval_secs,
        cfg.data.calendar.clone(),
    )
    .map_err(|e| CliError::Validation(format!("{}: {e}", a.path.display())))
}

pub fn load_data(cfg: &RunConfig) -> Result<(Vec<AssetSeries>, Option<AssetSeries>), CliError> {
    let assets = cfg
        .data
        .assets
        .iter()
        .map(|a| load_source(cfg, a))
        .collect::<Result<Vec<_>, _>>()?;
    let index = cfg
        .data
        .index
        .as_ref()
        .map(|a| load_source(cfg, a))
        .transpose()?;
    Ok((assets, index))
}

/// Rolling splits over the span every asset covers, unless the config
/// pins the range.
pub fn plan_splits(cfg: &RunConfig, assets: &[AssetSeries]) -> Result<Vec<RollingSplit>, CliError> {
    let mut start = i64::MIN;
    let mut end = i64::MAX;
    for a in assets {
        let r = a
            .range()
            .ok_or_else(|| CliError::Validation(format!("asset {} has no bars", a.asset_id)))?;
        start = start.max(r.start);
        end = end.min(r.end);
    }
    let (s, e) = cfg.window_bounds()?;
    let range = Window::new(s.unwrap_or(start), e.unwrap_or(end)).map_err(CliError::validation)?;
    let sp = &cfg.split;
    make_rolling_splits(range, sp.train, sp.validation, sp.test, sp.step)
        .map_err(CliError::validation)
}

fn member_count(cfg: &RunConfig) -> usize {
    match &cfg.policies.toy {
        Some(t) => t.members,
        None => cfg.policies.external.len(),
    }
}

pub fn load_template(cfg: &RunConfig) -> Result<SketchTemplate, CliError> {
    let k = member_count(cfg);
    let mode = if k == 1 {
        SketchMode::SingleModel
    } else {
        SketchMode::Ensemble { k }
    };
    if cfg.template == "default" {
        return default_template(mode).map_err(CliError::validation);
    }
    let text = std::fs::read_to_string(&cfg.template)
        .map_err(|e| CliError::Validation(format!("cannot read template {}: {e}", cfg.template)))?;
    let t =
        parse_sketch(&text).map_err(|e| CliError::Validation(format!("{}: {e}", cfg.template)))?;
    if t.mode() != mode {
        return Err(CliError::Validation(format!(
            "template {} declares {:?} but {k} base policies are configured",
            cfg.template,
            t.mode()
        )));
    }
    Ok(t)
}

/// Linear policies are recognised by their `weights` key; anything else
/// is read as a state table.
pub fn read_policy(path: &Path) -> Result<Arc<dyn FrozenPolicy>, CliError> {
    let bad = |m: String| CliError::Validation(format!("policy {}: {m}", path.display()));
    let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if value.get("weights").is_some() {
        let p: LinearPolicy = serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
        if p.weights.len() != p.bias.len() || p.bias.len() < 2 {
            return Err(bad(
                "needs one weight row per action and at least two actions".into(),
            ));
        }
        Ok(Arc::new(p))
    } else {
        Ok(Arc::new(
            TablePolicy::from_json(&text).map_err(|e| bad(e.to_string()))?,
        ))
    }
}

fn check_action_counts(
    market: &Market,
    policies: &[Arc<dyn FrozenPolicy>],
) -> Result<(), CliError> {
    if let Market::St { cfg, .. } = market {
        if let Some(p) = policies
            .iter()
            .find(|p| p.action_count() != cfg.action_levels)
        {
            return Err(CliError::Validation(format!(
                "policy {} has {} actions, trading uses {} levels",
                p.id(),
                p.action_count(),
                cfg.action_levels
            )));
        }
    }
    Ok(())
}

impl Prepared {
    pub fn load(config_path: &Path) -> Result<Self, CliError> {
        Self::from_config(RunConfig::load(config_path)?)
    }

    pub fn from_config(cfg: RunConfig) -> Result<Self, CliError> {
        let (assets, index) = load_data(&cfg)?;
        let splits = plan_splits(&cfg, &assets)?;
        let template = load_template(&cfg)?;
        let market = match cfg.mode {
            Mode::Oe => Market::Oe {
                assets,
                settings: cfg.oe_settings(),
            },
            Mode::St => Market::St {
                market: StMarket::new(&assets, index.as_ref()).map_err(CliError::validation)?,
                cfg: cfg.st_config(),
            },
        };
        let external = cfg
            .policies
            .external
            .iter()
            .map(|p| read_policy(p))
            .collect::<Result<Vec<_>, _>>()?;
        check_action_counts(&market, &external)?;
        if let Some(b) = &cfg.search.threshold_bounds {
            if b.len() != template.threshold_count() {
                return Err(CliError::Validation(format!(
                    "search.threshold_bounds has {} pairs, the template has {} thresholds",
                    b.len(),
                    template.threshold_count()
                )));
            }
        }
        Ok(Self {
            cfg,
            market,
            splits,
            template,
            external,
        })
    }

    fn root_seed(&self) -> u64 {
        self.cfg.optimizer.bo().seed
    }

    fn objective(&self) -> Objective {
        match &self.market {
            Market::Oe { settings, .. } => Objective::CumulativeDiscountedReward {
                gamma: settings.env.gamma,
            },
            Market::St { .. } => Objective::SharpeRatio,
        }
    }

    fn orders(&self, window: Window) -> Result<Vec<OeOrder>, CliError> {
        match &self.market {
            Market::Oe { assets, settings } => build_orders(assets, window, settings),
            Market::St { .. } => Ok(Vec::new()),
        }
    }

    fn train_toy(&self, index: usize, split: &RollingSplit) -> Result<Vec<LinearPolicy>, CliError> {
        let Some(spec) = &self.cfg.policies.toy else {
            return Ok(Vec::new());
        };
        let base = derive_seed(derive_seed(self.root_seed(), STREAM_TOY), index as u64);
        (0..spec.members)
            .map(|m| {
                let tc = spec.train_config(m, derive_seed(base, m as u64));
                let trained = match &self.market {
                    Market::Oe { settings, .. } => {
                        let tasks = self
                            .orders(split.train)?
                            .into_iter()
                            .map(|o| o.task)
                            .collect();
                        let mut env = OeTrainingEnv::new(
                            tasks,
                            spec.oe_actions,
                            settings.env.alpha,
                            spec.reward_scale,
                        )
                        .map_err(CliError::runtime)?;
                        train_toy_policy(&mut env, &tc)
                    }
                    Market::St { market, cfg } => {
                        let (s, e) = bar_range(market, split.train);
                        let mut env =
                            StTrainingEnv::new(market, s, e, spec.episode_len, cfg.clone())
                                .map_err(CliError::runtime)?;
                        train_toy_policy(&mut env, &tc)
                    }
                };
                trained.map_err(CliError::runtime)
            })
            .collect()
    }

    fn train_features(&self, split: &RollingSplit) -> Result<Vec<MarketFeatures>, CliError> {
        match &self.market {
            Market::Oe { settings, .. } => {
                let mut out = Vec::new();
                for o in self.orders(split.train)? {
                    for t in 0..o.task.horizon() {
                        let f = oe_market_features(
                            &o.task,
                            t,
                            settings.env.lookback,
                            settings.env.normalize_indicators,
                        )
                        .map_err(CliError::runtime)?;
                        out.extend(f);
                    }
                }
                Ok(out)
            }
            Market::St { market, cfg } => {
                let (s, e) = bar_range(market, split.train);
                let from = (s + 1).saturating_sub(cfg.lookback);
                market_feature_samples(
                    &market.index[from..e],
                    cfg.lookback,
                    cfg.normalize_indicators,
                )
                .map_err(CliError::runtime)
            }
        }
    }

    fn fit_split(&self, index: usize, split: &RollingSplit, dir: &Path) -> Result<f64, CliError> {
        let toy = self.train_toy(index, split)?;
        let members: Vec<Arc<dyn FrozenPolicy>> = if toy.is_empty() {
            self.external.clone()
        } else {
            toy.iter()
                .map(|p| Arc::new(p.clone()) as Arc<dyn FrozenPolicy>)
                .collect()
        };
        let base = BasePolicy::from_members(members).map_err(CliError::runtime)?;
        let features = self.train_features(split)?;
        let fit_cfg = FitConfig {
            bo: logicq_core::optimizer::BoConfig {
                seed: derive_seed(derive_seed(self.root_seed(), STREAM_BO), index as u64),
                ..self.cfg.optimizer.bo()
            },
            temperature_bounds: self.cfg.temperature_bounds(),
            threshold_bounds: self.cfg.search.threshold_bounds.clone(),
            eval_seed: derive_seed(derive_seed(self.root_seed(), STREAM_EVAL), index as u64),
        };
        let val_orders: Vec<OrderTask>;
        let data = match &self.market {
            Market::Oe { settings, .. } => {
                val_orders = self
                    .orders(split.validation)?
                    .into_iter()
                    .map(|o| o.task)
                    .collect();
                EvalData::Oe {
                    orders: &val_orders,
                    cfg: &settings.env,
                }
            }
            Market::St { market, cfg } => {
                let (start, end) = bar_range(market, split.validation);
                EvalData::St {
                    market,
                    start,
                    end,
                    cfg,
                    risk_free_rate: self.cfg.risk_free_rate(),
                }
            }
        };
        let fit = fit_sketch(
            &self.template,
            &base,
            &features,
            &data,
            &self.objective(),
            &fit_cfg,
        )
        .map_err(CliError::runtime)?;

        let io = |e: std::io::Error| CliError::Runtime(format!("{}: {e}", dir.display()));
        if !toy.is_empty() {
            let pdir = dir.join("policies");
            std::fs::create_dir_all(&pdir).map_err(io)?;
            for p in &toy {
                let text = serde_json::to_string_pretty(p).map_err(CliError::runtime)? + "\n";
                std::fs::write(pdir.join(format!("{}.json", p.id)), text).map_err(io)?;
            }
        }
        fit.params
            .write_file(&self.template, &dir.join("params.json"))
            .map_err(CliError::runtime)?;
        let file = std::fs::File::create(dir.join("trials.csv")).map_err(io)?;
        write_trial_history(fit.space.space(), &fit.history.trials, file)
            .map_err(CliError::runtime)?;
        let trials =
            serde_json::to_string_pretty(&fit.history.trials).map_err(CliError::runtime)? + "\n";
        std::fs::write(dir.join("trials.json"), trials).map_err(io)?;
        Ok(fit.history.best_value)
    }
}

pub fn split_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("split-{index:03}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStatus {
    pub index: usize,
    pub train: Window,
    pub validation: Window,
    pub test: Window,
    pub best_value: Option<f64>,
    pub error: Option<String>,
}

/// Fits every split in parallel. A failed split leaves a `FAILED` marker
/// in its directory; the command then fails after all splits finish.
pub fn cmd_fit(prepared: &Prepared, out: &Path) -> Result<Vec<SplitStatus>, CliError> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    let statuses: Vec<SplitStatus> = prepared
        .splits
        .par_iter()
        .enumerate()
        .map(|(i, split)| {
            let dir = split_dir(out, i);
            let result = std::fs::create_dir_all(&dir)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
                .and_then(|_| {
                    let _ = std::fs::remove_file(dir.join("FAILED"));
                    prepared.fit_split(i, split, &dir)
                });
            let (best_value, error) = match result {
                Ok(v) => (Some(v), None),
                Err(e) => {
                    let _ = std::fs::write(dir.join("FAILED"), format!("{e}\n"));
                    (None, Some(e.to_string()))
                }
            };
            SplitStatus {
                index: i,
                train: split.train,
                validation: split.validation,
                test: split.test,
                best_value,
                error,
            }
        })
        .collect();
    let summary = serde_json::to_string_pretty(&statuses).map_err(CliError::runtime)? + "\n";
    std::fs::write(out.join("fit.json"), summary)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    let failed: Vec<String> = statuses
        .iter()
        .filter_map(|s| s.error.as_ref().map(|e| format!("split {}: {e}", s.index)))
        .collect();
    if !failed.is_empty() {
        return Err(CliError::Runtime(format!(
            "{} of {} splits failed (partial outputs kept): {}",
            failed.len(),
            statuses.len(),
            failed.join("; ")
        )));
    }
    Ok(statuses)
}

/// What a split's test runs need, loaded before any run starts.
struct SplitPlan {
    policy: Option<Arc<dyn DecisionPolicy>>,
    params: Option<SketchParams>,
    trials: Option<Vec<Trial>>,
}

fn read_toy_policies(dir: &Path) -> Result<Vec<Arc<dyn FrozenPolicy>>, CliError> {
    let pdir = dir.join("policies");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&pdir)
        .map_err(|e| CliError::Validation(format!("{}: {e}", pdir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    // toy-2 before toy-10
    paths.sort_by_key(|p| {
        let stem = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let n: u64 = stem
            .rsplit('-')
            .next()
            .and_then(|n| n.parse().ok())
            .unwrap_or(u64::MAX);
        (n, stem)
    });
    paths.iter().map(|p| read_policy(p)).collect()
}

fn plan_split(
    prepared: &Prepared,
    strategy: Strategy,
    fit_dir: Option<&Path>,
    index: usize,
) -> Result<SplitPlan, CliError> {
    if !matches!(strategy, Strategy::Logicq | Strategy::Base) {
        return Ok(SplitPlan {
            policy: None,
            params: None,
            trials: None,
        });
    }
    let dir = fit_dir.map(|d| split_dir(d, index));
    let need_dir = || {
        dir.clone().ok_or_else(|| {
            CliError::Validation(format!(
                "strategy {} needs --fit-dir with fitted outputs",
                strategy.name()
            ))
        })
    };
    if let Some(d) = &dir {
        if d.join("FAILED").exists() {
            return Err(CliError::Validation(format!(
                "split {index} failed during fitting ({})",
                d.display()
            )));
        }
    }
    let members = if prepared.cfg.policies.toy.is_some() {
        read_toy_policies(&need_dir()?)?
    } else {
        prepared.external.clone()
    };
    check_action_counts(&prepared.market, &members)?;
    let base = BasePolicy::from_members(members).map_err(CliError::validation)?;
    if base.mode() != prepared.template.mode() {
        return Err(CliError::Validation(format!(
            "split {index}: base policy mode {:?} does not match template mode {:?}",
            base.mode(),
            prepared.template.mode()
        )));
    }
    if strategy == Strategy::Base {
        return Ok(SplitPlan {
            policy: Some(Arc::new(base)),
            params: None,
            trials: None,
        });
    }
    let d = need_dir()?;
    let params = SketchParams::read_file(&prepared.template, &d.join("params.json"))
        .map_err(|e| CliError::Validation(format!("split {index}: {e}")))?;
    let trials = match std::fs::read_to_string(d.join("trials.json")) {
        Ok(text) => Some(
            serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("split {index} trials: {e}")))?,
        ),
        Err(_) => None,
    };
    let tuned = TunedPolicy::new(base, prepared.template.clone(), params.clone())
        .map_err(CliError::validation)?;
    Ok(SplitPlan {
        policy: Some(Arc::new(tuned)),
        params: Some(params),
        trials,
    })
}

fn oe_run(bt: OeBacktest, orders: &[OeOrder], seed: u64, warnings: Vec<String>) -> SeedRun {
    let mut timeline = Vec::new();
    for (ep, o) in bt.episodes.iter().zip(orders) {
        for (step, &ts) in ep.steps.iter().zip(&o.timestamps) {
            if step.trend.is_some() {
                timeline.push(TrendPoint {
                    timestamp: ts,
                    trend: step.trend,
                });
            }
        }
    }
    SeedRun {
        seed,
        metrics: MetricReport::Oe(bt.metrics),
        equity_curve: None,
        timeline,
        margin_call: None,
        warnings,
    }
}

fn st_run(
    curve: EquityCurve,
    rf: f64,
    seed: u64,
    timeline: Vec<TrendPoint>,
    margin_call: Option<MarginCallEvent>,
) -> Result<SeedRun, CliError> {
    let metrics = st_metrics(&curve, rf).map_err(CliError::runtime)?;
    let timeline = timeline.into_iter().filter(|p| p.trend.is_some()).collect();
    Ok(SeedRun {
        seed,
        metrics: MetricReport::St(metrics),
        equity_curve: Some(curve),
        timeline,
        margin_call,
        warnings: vec![],
    })
}

fn run_one(
    prepared: &Prepared,
    strategy: Strategy,
    plan: &SplitPlan,
    split: &RollingSplit,
    index: usize,
    seed: u64,
) -> Result<SeedRun, CliError> {
    let run_seed = derive_seed(derive_seed(seed, STREAM_TEST), index as u64);
    match &prepared.market {
        Market::Oe { settings, .. } => {
            let orders = prepared.orders(split.test)?;
            let tasks: Vec<OrderTask> = orders.iter().map(|o| o.task.clone()).collect();
            let ppy = settings.periods_per_year;
            let mut warnings = Vec::new();
            let bt = match strategy {
                Strategy::Twap => backtest_oe_schedule(&tasks, &settings.env, ppy, |o| {
                    Ok(twap_schedule(o.horizon())?.fractions)
                }),
                Strategy::Vwap => {
                    let profiles: HashMap<&str, &Vec<Vec<f64>>> = orders
                        .iter()
                        .map(|o| (o.task.order_id.as_str(), &o.profiles))
                        .collect();
                    let mut fallbacks = 0usize;
                    let bt = backtest_oe_schedule(&tasks, &settings.env, ppy, |o| {
                        let p = profiles[o.order_id.as_str()];
                        let s = if p.is_empty() {
                            twap_schedule(o.horizon())?
                        } else {
                            vwap_schedule(p, o.horizon())?
                        };
                        if p.is_empty() || s.warning.is_some() {
                            fallbacks += 1;
                        }
                        Ok(s.fractions)
                    });
                    if fallbacks > 0 {
                        warnings.push(format!(
                            "{fallbacks} orders had no usable volume history and used TWAP"
                        ));
                    }
                    bt
                }
                _ => {
                    let policy = plan.policy.as_ref().expect("planned");
                    backtest_oe(policy.as_ref(), &tasks, &settings.env, run_seed, ppy)
                }
            }
            .map_err(CliError::runtime)?;
            Ok(oe_run(bt, &orders, seed, warnings))
        }
        Market::St { market, cfg } => {
            let (s, e) = bar_range(market, split.test);
            let rf = prepared.cfg.risk_free_rate();
            let ts = market.timestamps[s..e].to_vec();
            match strategy {
                Strategy::Bah => {
                    let closes: Vec<Vec<f64>> =
                        market.closes.iter().map(|c| c[s..e].to_vec()).collect();
                    let curve = buy_and_hold(
                        &closes,
                        &ts,
                        cfg.initial_capital,
                        cfg.fee_rate,
                        cfg.periods_per_year,
                    )
                    .map_err(CliError::runtime)?;
                    st_run(curve, rf, seed, vec![], None)
                }
                Strategy::Index => {
                    let base = *market.index.get(s).ok_or_else(|| {
                        CliError::Runtime(format!("empty test window {}", split.test))
                    })?;
                    let values = market.index[s..e]
                        .iter()
                        .map(|v| cfg.initial_capital * v / base)
                        .collect();
                    let curve = EquityCurve::new(ts, values, cfg.periods_per_year)
                        .map_err(CliError::runtime)?;
                    st_run(curve, rf, seed, vec![], None)
                }
                _ => {
                    let policy = plan.policy.as_ref().expect("planned");
                    let bt = backtest_st(policy.as_ref(), market, s, e, cfg, run_seed, rf)
                        .map_err(CliError::runtime)?;
                    st_run(
                        bt.episode.curve,
                        rf,
                        seed,
                        bt.episode.timeline,
                        bt.episode.margin_call,
                    )
                }
            }
        }
    }
}

/// Test-window runs for every split and seed. Seeds and splits run in
/// parallel; the report is assembled in split then seed order.
pub fn cmd_backtest(
    prepared: &Prepared,
    strategy: Strategy,
    fit_dir: Option<&Path>,
) -> Result<RunReport, CliError> {
    strategy.check_mode(prepared.cfg.mode)?;
    let plans = (0..prepared.splits.len())
        .map(|i| plan_split(prepared, strategy, fit_dir, i))
        .collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, u64)> = (0..prepared.splits.len())
        .flat_map(|i| prepared.cfg.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(i, seed)| {
            run_one(prepared, strategy, &plans[i], &prepared.splits[i], i, seed)
                .map_err(|e| CliError::Runtime(format!("split {i} seed {seed}: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut runs = runs.into_iter();
    let splits = prepared
        .splits
        .iter()
        .zip(plans)
        .enumerate()
        .map(|(i, (split, plan))| SplitReport {
            index: i,
            train: split.train,
            validation: split.validation,
            test: split.test,
            params: plan.params.map(|p| p.to_named(&prepared.template)),
            trials: plan.trials,
            runs: runs.by_ref().take(prepared.cfg.seeds.len()).collect(),
        })
        .collect();
    Ok(RunReport::new(
        prepared.cfg.mode,
        strategy.name(),
        prepared.cfg.clone(),
        splits,
    ))
}

/// Writes `<out>` (JSON) and a text rendering next to it.
pub fn write_report(report: &RunReport, out: &Path) -> Result<PathBuf, CliError> {
    let io = |e: std::io::Error| CliError::Runtime(format!("{}: {e}", out.display()));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    std::fs::write(out, report.to_json()).map_err(io)?;
    let text = out.with_extension("txt");
    std::fs::write(&text, report.to_text()).map_err(io)?;
    Ok(text)
}

/// Comparison table plus one curve and one timeline file per run.
pub fn cmd_report(paths: &[PathBuf], out: &Path) -> Result<Comparison, CliError> {
    let reports = paths
        .iter()
        .map(|p| RunReport::read(p))
        .collect::<Result<Vec<_>, _>>()?;
    let table = compare(&reports)?;
    let io = |e: std::io::Error| CliError::Runtime(format!("{}: {e}", out.display()));
    std::fs::create_dir_all(out.join("curves")).map_err(io)?;
    std::fs::create_dir_all(out.join("timelines")).map_err(io)?;
    std::fs::write(out.join("comparison.txt"), table.to_text()).map_err(io)?;
    let file = std::fs::File::create(out.join("comparison.csv")).map_err(io)?;
    table.write_csv(file).map_err(CliError::runtime)?;
    let mut seen: HashMap<String, usize> = HashMap::new();
    for r in &reports {
        let n = seen.entry(r.strategy.clone()).or_insert(0);
        let label = if *n == 0 {
            r.strategy.clone()
        } else {
            format!("{}-{n}", r.strategy)
        };
        *n += 1;
        for s in &r.splits {
            for run in &s.runs {
                let stem = format!("{label}-split{:03}-seed{}.csv", s.index, run.seed);
                if let Some(c) = &run.equity_curve {
                    c.export(&out.join("curves").join(&stem))
                        .map_err(CliError::runtime)?;
                }
                if !run.timeline.is_empty() {
                    let file =
                        std::fs::File::create(out.join("timelines").join(&stem)).map_err(io)?;
                    write_timeline(&run.timeline, file).map_err(CliError::runtime)?;
                }
            }
        }
    }
    Ok(table)
}

/// Validates every configured series, writes normalized copies and
/// returns a summary including the split plan.
pub fn cmd_ingest(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let (assets, index) = load_data(cfg)?;
    let splits = plan_splits(cfg, &assets)?;
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    let mut summary = String::new();
    for a in assets.iter().chain(index.iter()) {
        export_series(a, &out.join(format!("{}.csv", a.asset_id))).map_err(CliError::runtime)?;
        let range = a.range().map_or("empty".to_string(), |r| r.to_string());
        let _ = writeln!(summary, "{}: {} bars {range}", a.asset_id, a.len());
    }
    let _ = writeln!(summary, "{} rolling splits", splits.len());
    for (i, s) in splits.iter().enumerate() {
        let _ = writeln!(
            summary,
            "  split {i}: train {} validation {} test {}",
            s.train, s.validation, s.test
        );
    }
    Ok(summary)
}

pub fn cmd_sketch_check(path: &Path) -> Result<String, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let t = parse_sketch(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Ok(format!(
        "{}ok: {} thresholds, {} directive scalars, {} parameters\n",
        t.render(),
        t.threshold_count(),
        t.directive_count(),
        t.scalar_count()
    ))
}
