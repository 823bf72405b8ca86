//! Sketch fitting and backtesting over order sets or trading windows.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::BaselineError;
use crate::env::{
    run_oe_episode, run_oe_schedule, run_st_episode, EnvError, OeConfig, OeEpisode, OrderTask,
    StConfig, StEpisode, StMarket,
};
use crate::indicators::{IndicatorError, MarketFeatures, STATE_WARMUP};
use crate::metrics::{oe_metrics, st_metrics, MetricsError, OeMetrics, OeOrderResult, StMetrics};
use crate::optimizer::{
    optimize, threshold_bounds, BoConfig, Objective, OptimizationResult, OptimizerError,
    SketchSpace, DEFAULT_TEMPERATURE_BOUNDS,
};
use crate::policy::{BasePolicy, DecisionPolicy, PolicyError, TunedPolicy};
use crate::sketch::{SketchError, SketchParams, SketchTemplate};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("empty evaluation window: {0}")]
    EmptyWindow(String),
    #[error("warm-up shortfall: {0}")]
    WarmUp(String),
    #[error("objective {objective} does not apply to {task}")]
    Mismatch {
        objective: String,
        task: &'static str,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Sketch(#[from] SketchError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Indicator(#[from] IndicatorError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

/// SplitMix64 finalizer; derives independent seeds from `(base, stream)`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// What a policy is evaluated on.
#[derive(Debug, Clone, Copy)]
pub enum EvalData<'a> {
    Oe {
        orders: &'a [OrderTask],
        cfg: &'a OeConfig,
    },
    /// Bars `start..end` of `market`.
    St {
        market: &'a StMarket,
        start: usize,
        end: usize,
        cfg: &'a StConfig,
        risk_free_rate: f64,
    },
}

impl EvalData<'_> {
    fn task_name(&self) -> &'static str {
        match self {
            EvalData::Oe { .. } => "order execution",
            EvalData::St { .. } => "stock trading",
        }
    }

    /// Rejects empty windows and windows without enough indicator history.
    pub fn check(&self) -> Result<(), PipelineError> {
        match *self {
            EvalData::Oe { orders, cfg } => {
                if orders.is_empty() {
                    return Err(PipelineError::EmptyWindow("no orders".into()));
                }
                if let Some(o) = orders.iter().find(|o| o.history.len() < cfg.lookback) {
                    return Err(PipelineError::WarmUp(format!(
                        "order {} has {} bars of history, lookback needs {}",
                        o.order_id,
                        o.history.len(),
                        cfg.lookback
                    )));
                }
            }
            EvalData::St {
                market,
                start,
                end,
                cfg,
                ..
            } => {
                if start + 1 >= end || end > market.len() {
                    return Err(PipelineError::EmptyWindow(format!(
                        "bars {start}..{end} of {}",
                        market.len()
                    )));
                }
                let needed = (STATE_WARMUP - 1).max(cfg.lookback - 1);
                if start < needed {
                    return Err(PipelineError::WarmUp(format!(
                        "window starts at bar {start}, indicators need {needed}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// OE: mean discounted return over orders. ST: Sharpe of the equity curve,
/// with an undefined ratio scored 0. Each order gets its own RNG stream
/// from `seed`, so candidates are compared on common random numbers.
pub fn evaluate_policy_objective(
    policy: &dyn DecisionPolicy,
    data: &EvalData<'_>,
    objective: &Objective,
    seed: u64,
) -> Result<f64, PipelineError> {
    data.check()?;
    match (*data, objective) {
        (EvalData::Oe { orders, cfg }, Objective::CumulativeDiscountedReward { gamma }) => {
            let cfg = OeConfig {
                gamma: *gamma,
                ..cfg.clone()
            };
            let mut total = 0.0;
            for (i, o) in orders.iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
                total += run_oe_episode(o, policy, &cfg, &mut rng)?.discounted_return;
            }
            Ok(total / orders.len() as f64)
        }
        (
            EvalData::St {
                market,
                start,
                end,
                cfg,
                risk_free_rate,
            },
            Objective::SharpeRatio,
        ) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ep = run_st_episode(market, start, end, policy, cfg, &mut rng)?;
            Ok(st_metrics(&ep.curve, risk_free_rate)?.sr.unwrap_or(0.0))
        }
        (d, o) => Err(PipelineError::Mismatch {
            objective: format!("{o:?}"),
            task: d.task_name(),
        }),
    }
}

pub fn evaluate_sketch_objective(
    template: &SketchTemplate,
    params: &SketchParams,
    base: &BasePolicy,
    data: &EvalData<'_>,
    objective: &Objective,
    seed: u64,
) -> Result<f64, PipelineError> {
    let tuned = TunedPolicy::new(base.clone(), template.clone(), params.clone())?;
    evaluate_policy_objective(&tuned, data, objective, seed)
}

/// Sketch features at every bar of `closes` with a full look-back.
pub fn market_feature_samples(
    closes: &[f64],
    lookback: usize,
    normalize: bool,
) -> Result<Vec<MarketFeatures>, PipelineError> {
    if closes.len() < lookback {
        return Err(PipelineError::WarmUp(format!(
            "{} bars for a lookback of {lookback}",
            closes.len()
        )));
    }
    (lookback - 1..closes.len())
        .map(|t| MarketFeatures::at(closes, t, lookback, normalize).map_err(PipelineError::from))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub bo: BoConfig,
    pub temperature_bounds: (f64, f64),
    /// Replaces the [p1, p99] threshold ranges taken from training data.
    #[serde(default)]
    pub threshold_bounds: Option<Vec<(f64, f64)>>,
    /// Seed for rollouts inside the objective.
    pub eval_seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            bo: BoConfig::default(),
            temperature_bounds: DEFAULT_TEMPERATURE_BOUNDS,
            threshold_bounds: None,
            eval_seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: SketchParams,
    pub space: SketchSpace,
    pub history: OptimizationResult,
}

/// Fits the sketch holes on `validation`; threshold bounds come from
/// `train_features`.
pub fn fit_sketch(
    template: &SketchTemplate,
    base: &BasePolicy,
    train_features: &[MarketFeatures],
    validation: &EvalData<'_>,
    objective: &Objective,
    cfg: &FitConfig,
) -> Result<FitResult, PipelineError> {
    objective.validate()?;
    validation.check()?;
    let bounds = match &cfg.threshold_bounds {
        Some(b) => b.clone(),
        None => threshold_bounds(template, train_features)?,
    };
    let space = SketchSpace::new(template, &bounds, cfg.temperature_bounds)?;
    let probes = space.probes();
    let history = optimize(
        space.space(),
        |x| -> Result<f64, PipelineError> {
            let params = space.decode(x)?;
            evaluate_sketch_objective(
                template,
                &params,
                base,
                validation,
                objective,
                cfg.eval_seed,
            )
        },
        &probes,
        &cfg.bo,
    )?;
    let params = space.decode(&history.best)?;
    Ok(FitResult {
        params,
        space,
        history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OeBacktest {
    pub episodes: Vec<OeEpisode>,
    pub results: Vec<OeOrderResult>,
    pub metrics: OeMetrics,
}

fn oe_summary(
    episodes: Vec<OeEpisode>,
    periods_per_year: f64,
) -> Result<OeBacktest, PipelineError> {
    let results = episodes
        .iter()
        .map(|e| e.result())
        .collect::<Result<Vec<_>, _>>()?;
    let metrics = oe_metrics(&results, periods_per_year)?;
    Ok(OeBacktest {
        episodes,
        results,
        metrics,
    })
}

pub fn backtest_oe(
    policy: &dyn DecisionPolicy,
    orders: &[OrderTask],
    cfg: &OeConfig,
    seed: u64,
    periods_per_year: f64,
) -> Result<OeBacktest, PipelineError> {
    EvalData::Oe { orders, cfg }.check()?;
    let episodes = orders
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            run_oe_episode(o, policy, cfg, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    oe_summary(episodes, periods_per_year)
}

/// Runs a rule-based schedule builder (TWAP, VWAP) over every order.
pub fn backtest_oe_schedule<F>(
    orders: &[OrderTask],
    cfg: &OeConfig,
    periods_per_year: f64,
    mut schedule: F,
) -> Result<OeBacktest, PipelineError>
where
    F: FnMut(&OrderTask) -> Result<Vec<f64>, PipelineError>,
{
    if orders.is_empty() {
        return Err(PipelineError::EmptyWindow("no orders".into()));
    }
    let episodes = orders
        .iter()
        .map(|o| Ok(run_oe_schedule(o, &schedule(o)?, cfg)?))
        .collect::<Result<Vec<_>, PipelineError>>()?;
    oe_summary(episodes, periods_per_year)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StBacktest {
    pub episode: StEpisode,
    pub metrics: StMetrics,
}

pub fn backtest_st(
    policy: &dyn DecisionPolicy,
    market: &StMarket,
    start: usize,
    end: usize,
    cfg: &StConfig,
    seed: u64,
    risk_free_rate: f64,
) -> Result<StBacktest, PipelineError> {
    EvalData::St {
        market,
        start,
        end,
        cfg,
        risk_free_rate,
    }
    .check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let episode = run_st_episode(market, start, end, policy, cfg, &mut rng)?;
    let metrics = st_metrics(&episode.curve, risk_free_rate)?;
    Ok(StBacktest { episode, metrics })
}
