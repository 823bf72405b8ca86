//! Bar-driven simulators: order execution over a fixed horizon and
//! multi-asset stock trading with cash or margin accounting.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::indicators::{
    state_feature_table, IndicatorError, MarketFeatures, StateFeatures, DEFAULT_LOOKBACK,
};
use crate::market_data::{AssetSeries, Span};
pub use crate::metrics::Side;
use crate::metrics::{EquityCurve, MetricsError, OeOrderResult, TRADING_DAYS_PER_YEAR};
use crate::policy::{
    ActionDistribution, DecisionPolicy, EpisodicEnv, Observation, PolicyError, StateKey,
};
use crate::sketch::TrendLabel;

/// Slack when comparing an allocation to the remaining inventory.
const ALLOCATION_TOLERANCE: f64 = 1e-12;

pub const DEFAULT_FEE_RATE: f64 = 0.001;
pub const DEFAULT_INITIAL_CAPITAL: f64 = 1_000_000.0;
pub const STOCK_MARGIN_RATE: f64 = 0.0775;
pub const CRYPTO_MARGIN_RATE: f64 = 0.1712;

/// Length of the per-step OE observation.
pub const OE_FEATURE_DIM: usize = 4;
/// Length of the per-asset ST observation.
pub const ST_FEATURE_DIM: usize = 10;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("allocation error at step {step}: {requested} exceeds remaining {remaining}")]
    Allocation {
        step: usize,
        requested: f64,
        remaining: f64,
    },
    #[error("invalid order task: {0}")]
    InvalidTask(String),
    #[error("invalid environment configuration: {0}")]
    Config(String),
    #[error("assets are not aligned: {0}")]
    Alignment(String),
    #[error("margin call at {timestamp}: {reason}")]
    MarginCall { timestamp: i64, reason: String },
    #[error(transparent)]
    Indicator(#[from] IndicatorError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// How an action index is drawn from a decision's distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSelection {
    #[default]
    Sample,
    Greedy,
}

impl ActionSelection {
    pub fn pick(self, dist: &ActionDistribution, rng: &mut ChaCha8Rng) -> usize {
        match self {
            ActionSelection::Sample => dist.sample(rng),
            ActionSelection::Greedy => dist.argmax(),
        }
    }
}

// ---------------------------------------------------------------------------
// Order execution

/// A parent order of `quantity` shares split across `prices.len()` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderTask {
    pub order_id: String,
    pub asset_id: String,
    pub side: Side,
    pub quantity: f64,
    /// `p_1..p_T`; the decision at step `t` (0-based) fills at `prices[t]`.
    pub prices: Vec<f64>,
    /// Prices observed before the horizon opens, oldest first.
    #[serde(default)]
    pub history: Vec<f64>,
}

impl OrderTask {
    pub fn new(
        order_id: impl Into<String>,
        asset_id: impl Into<String>,
        side: Side,
        quantity: f64,
        prices: Vec<f64>,
        history: Vec<f64>,
    ) -> Result<Self, EnvError> {
        let task = Self {
            order_id: order_id.into(),
            asset_id: asset_id.into(),
            side,
            quantity,
            prices,
            history,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.prices.is_empty() {
            return Err(EnvError::InvalidTask(format!(
                "order {} has an empty horizon",
                self.order_id
            )));
        }
        if !(self.quantity > 0.0 && self.quantity.is_finite()) {
            return Err(EnvError::InvalidTask(format!(
                "order {} quantity must be positive",
                self.order_id
            )));
        }
        if self
            .prices
            .iter()
            .chain(&self.history)
            .any(|p| !(*p > 0.0 && p.is_finite()))
        {
            return Err(EnvError::InvalidTask(format!(
                "order {} has a non-positive price",
                self.order_id
            )));
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.prices.len()
    }

    /// `p̃`, the unweighted mean price over the horizon.
    pub fn mean_price(&self) -> f64 {
        self.prices.iter().sum::<f64>() / self.prices.len() as f64
    }

    /// Everything observable when deciding step `t`.
    fn observed(&self, t: usize) -> impl Iterator<Item = f64> + '_ {
        self.history
            .iter()
            .copied()
            .chain(self.prices[..t].iter().copied())
    }

    fn observed_len(&self, t: usize) -> usize {
        self.history.len() + t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OeStepOutcome {
    pub step: usize,
    /// `a_t`, fraction of the parent order.
    pub fraction: f64,
    /// `a_t · Q`.
    pub executed: f64,
    pub price: f64,
    pub reward: f64,
}

/// One execution step. `t` is 0-based and fills at `task.prices[t]`.
pub fn oe_step(
    task: &OrderTask,
    t: usize,
    fraction: f64,
    remaining: f64,
    alpha: f64,
    mean_price: f64,
) -> Result<OeStepOutcome, EnvError> {
    if t >= task.horizon() {
        return Err(EnvError::InvalidTask(format!(
            "step {t} is past the horizon {}",
            task.horizon()
        )));
    }
    if !(fraction >= 0.0) || fraction > remaining + ALLOCATION_TOLERANCE {
        return Err(EnvError::Allocation {
            step: t,
            requested: fraction,
            remaining,
        });
    }
    let price = task.prices[t];
    let reward =
        task.side.sign() * fraction * (price / mean_price - 1.0) - alpha * fraction * fraction;
    Ok(OeStepOutcome {
        step: t,
        fraction,
        executed: fraction * task.quantity,
        price,
        reward,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OeConfig {
    pub gamma: f64,
    pub alpha: f64,
    pub lookback: usize,
    pub normalize_indicators: bool,
    pub selection: ActionSelection,
}

impl Default for OeConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            alpha: 0.01,
            lookback: DEFAULT_LOOKBACK,
            normalize_indicators: false,
            selection: ActionSelection::Sample,
        }
    }
}

impl OeConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(EnvError::Config(format!(
                "gamma {} outside [0, 1]",
                self.gamma
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(EnvError::Config(format!(
                "alpha {} must be non-negative",
                self.alpha
            )));
        }
        if self.lookback < 2 {
            return Err(EnvError::Config("lookback must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OeStepRecord {
    #[serde(flatten)]
    pub outcome: OeStepOutcome,
    pub trend: Option<TrendLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OeEpisode {
    pub order_id: String,
    pub side: Side,
    /// `Σ γ^t R_t` with `t` from 0.
    pub discounted_return: f64,
    /// `p_s = Σ a_t p_{t+1}`.
    pub exec_price: f64,
    pub mean_price: f64,
    pub steps: Vec<OeStepRecord>,
}

impl OeEpisode {
    pub fn allocated(&self) -> f64 {
        self.steps.iter().map(|s| s.outcome.fraction).sum()
    }

    pub fn result(&self) -> Result<OeOrderResult, MetricsError> {
        OeOrderResult::new(
            self.order_id.clone(),
            self.side,
            self.exec_price,
            self.mean_price,
        )
    }
}

/// Observation for step `t` with `remaining` of the order left.
pub fn oe_observation(task: &OrderTask, t: usize, remaining: f64) -> Observation {
    let anchor = task.history.last().copied().unwrap_or(task.prices[0]);
    let last = task.observed(t).last();
    let rel = last.map_or(0.0, |p| p / anchor - 1.0);
    Observation {
        key: StateKey::order(&task.order_id, t),
        features: vec![1.0, t as f64 / task.horizon() as f64, remaining, rel],
    }
}

/// Sketch features over the last `g` observed prices, when enough exist.
pub fn oe_market_features(
    task: &OrderTask,
    t: usize,
    g: usize,
    normalize: bool,
) -> Result<Option<MarketFeatures>, EnvError> {
    let n = task.observed_len(t);
    if n < g {
        return Ok(None);
    }
    let window: Vec<f64> = task.observed(t).skip(n - g).collect();
    Ok(Some(MarketFeatures::from_window(&window, t, normalize)?))
}

fn run_allocation<F>(task: &OrderTask, cfg: &OeConfig, mut choose: F) -> Result<OeEpisode, EnvError>
where
    F: FnMut(usize, f64) -> Result<(f64, Option<TrendLabel>), EnvError>,
{
    task.validate()?;
    cfg.validate()?;
    let p_tilde = task.mean_price();
    let horizon = task.horizon();
    let mut remaining = 1.0;
    let mut discount = 1.0;
    let (mut ret, mut exec) = (0.0, 0.0);
    let mut steps = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let (mut a, trend) = choose(t, remaining)?;
        if t + 1 == horizon {
            // the residual is always liquidated at the last step
            a = remaining.max(0.0);
        }
        let outcome = oe_step(task, t, a, remaining, cfg.alpha, p_tilde)?;
        ret += discount * outcome.reward;
        exec += outcome.fraction * outcome.price;
        discount *= cfg.gamma;
        remaining -= outcome.fraction;
        steps.push(OeStepRecord { outcome, trend });
    }
    Ok(OeEpisode {
        order_id: task.order_id.clone(),
        side: task.side,
        discounted_return: ret,
        exec_price: exec,
        mean_price: p_tilde,
        steps,
    })
}

/// Rolls a policy through one order. Action `i` requests `i/T` of the
/// order, capped by what remains.
pub fn run_oe_episode(
    task: &OrderTask,
    policy: &dyn DecisionPolicy,
    cfg: &OeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<OeEpisode, EnvError> {
    let horizon = task.horizon();
    let mut units_left = horizon;
    run_allocation(task, cfg, |t, _| {
        let remaining = units_left as f64 / horizon as f64;
        let obs = oe_observation(task, t, remaining);
        let market = oe_market_features(task, t, cfg.lookback, cfg.normalize_indicators)?;
        let decision = policy.decide(&obs, market.as_ref())?;
        let units = if t + 1 == horizon {
            units_left
        } else {
            cfg.selection.pick(&decision.dist, rng).min(units_left)
        };
        units_left -= units;
        Ok((units as f64 / horizon as f64, decision.trend))
    })
}

/// Executes a fixed schedule of fractions, for rule-based baselines.
pub fn run_oe_schedule(
    task: &OrderTask,
    schedule: &[f64],
    cfg: &OeConfig,
) -> Result<OeEpisode, EnvError> {
    if schedule.len() != task.horizon() {
        return Err(EnvError::InvalidTask(format!(
            "schedule has {} steps for a horizon of {}",
            schedule.len(),
            task.horizon()
        )));
    }
    run_allocation(task, cfg, |t, _| Ok((schedule[t], None)))
}

/// Toy-training view of a set of orders. Rewards are scaled by
/// `reward_scale` so gradients are not vanishingly small.
#[derive(Debug, Clone)]
pub struct OeTrainingEnv {
    tasks: Vec<OrderTask>,
    action_count: usize,
    alpha: f64,
    reward_scale: f64,
    current: Option<(usize, usize, usize)>,
}

impl OeTrainingEnv {
    pub fn new(
        tasks: Vec<OrderTask>,
        action_count: usize,
        alpha: f64,
        reward_scale: f64,
    ) -> Result<Self, EnvError> {
        if tasks.is_empty() {
            return Err(EnvError::Config("no training orders".into()));
        }
        if action_count < 2 {
            return Err(EnvError::Config("need at least two actions".into()));
        }
        for t in &tasks {
            t.validate()?;
        }
        Ok(Self {
            tasks,
            action_count,
            alpha,
            reward_scale,
            current: None,
        })
    }
}

impl EpisodicEnv for OeTrainingEnv {
    type Error = EnvError;

    fn action_count(&self) -> usize {
        self.action_count
    }

    fn feature_dim(&self) -> usize {
        OE_FEATURE_DIM
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, EnvError> {
        let idx = rng.gen_range(0..self.tasks.len());
        let horizon = self.tasks[idx].horizon();
        self.current = Some((idx, 0, horizon));
        Ok(oe_observation(&self.tasks[idx], 0, 1.0).features)
    }

    fn step(&mut self, action: usize) -> Result<(f64, Option<Vec<f64>>), EnvError> {
        let (idx, t, left) = self
            .current
            .ok_or_else(|| EnvError::Config("step before reset".into()))?;
        let task = &self.tasks[idx];
        let horizon = task.horizon();
        let units = if t + 1 == horizon {
            left
        } else {
            action.min(left)
        };
        let outcome = oe_step(
            task,
            t,
            units as f64 / horizon as f64,
            left as f64 / horizon as f64,
            self.alpha,
            task.mean_price(),
        )?;
        let left = left - units;
        let next = if t + 1 == horizon {
            self.current = None;
            None
        } else {
            self.current = Some((idx, t + 1, left));
            Some(oe_observation(task, t + 1, left as f64 / horizon as f64).features)
        };
        Ok((outcome.reward * self.reward_scale, next))
    }
}

// ---------------------------------------------------------------------------
// Stock trading

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Portfolio {
    pub balance: f64,
    pub holdings: Vec<f64>,
    pub borrowed: f64,
    pub accrued_interest: f64,
}

impl Portfolio {
    pub fn cash(balance: f64, assets: usize) -> Self {
        Self {
            balance,
            holdings: vec![0.0; assets],
            borrowed: 0.0,
            accrued_interest: 0.0,
        }
    }

    /// A fresh margin account: `capital` of own funds plus an equal loan.
    pub fn margin(capital: f64, assets: usize) -> Self {
        Self {
            balance: 2.0 * capital,
            holdings: vec![0.0; assets],
            borrowed: capital,
            accrued_interest: 0.0,
        }
    }

    pub fn holdings_value(&self, prices: &[f64]) -> f64 {
        self.holdings.iter().zip(prices).map(|(h, p)| h * p).sum()
    }

    /// Net account value.
    pub fn value(&self, prices: &[f64]) -> f64 {
        self.balance + self.holdings_value(prices) - self.borrowed - self.accrued_interest
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub timestamp: i64,
    pub asset: String,
    /// Positive for buys, negative for sells.
    pub quantity: f64,
    pub price: f64,
    pub fee: f64,
    pub requested: f64,
    pub clipped: bool,
}

pub fn write_trade_log<W: std::io::Write>(
    trades: &[TradeRecord],
    writer: W,
) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    for t in trades {
        wtr.serialize(t)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StStepOutcome {
    pub portfolio: Portfolio,
    /// Gross sell value minus gross buy value.
    pub reward: f64,
    pub trades: Vec<TradeRecord>,
}

/// Rounds a non-negative quantity down to `decimals` places. A tiny slack
/// absorbs representation error such as `0.3·10⁶ = 299999.99…`.
pub fn floor_lot(quantity: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    ((quantity * scale) + 1e-9).floor().max(0.0) / scale
}

/// Executes signed quantity requests at `prices`: sells first, clipped to
/// holdings, then buys, clipped to cash after fees.
pub fn st_step(
    portfolio: &Portfolio,
    prices: &[f64],
    requests: &[f64],
    fee_rate: f64,
    lot_decimals: u32,
    timestamp: i64,
    assets: &[String],
) -> Result<StStepOutcome, EnvError> {
    let d = portfolio.holdings.len();
    if prices.len() != d || requests.len() != d || assets.len() != d {
        return Err(EnvError::Config(format!(
            "{} holdings, {} prices, {} requests, {} asset ids",
            d,
            prices.len(),
            requests.len(),
            assets.len()
        )));
    }
    let mut next = portfolio.clone();
    let mut trades = Vec::new();
    let (mut sold, mut bought) = (0.0, 0.0);

    for i in (0..d).filter(|&i| requests[i] < 0.0) {
        let want = -requests[i];
        let qty = want.min(next.holdings[i]);
        if qty <= 0.0 {
            if want > 0.0 {
                trades.push(TradeRecord {
                    timestamp,
                    asset: assets[i].clone(),
                    quantity: 0.0,
                    price: prices[i],
                    fee: 0.0,
                    requested: requests[i],
                    clipped: true,
                });
            }
            continue;
        }
        let gross = qty * prices[i];
        let fee = fee_rate * gross;
        next.balance += gross - fee;
        next.holdings[i] -= qty;
        sold += gross;
        trades.push(TradeRecord {
            timestamp,
            asset: assets[i].clone(),
            quantity: -qty,
            price: prices[i],
            fee,
            requested: requests[i],
            clipped: qty < want,
        });
    }

    for i in (0..d).filter(|&i| requests[i] > 0.0) {
        let want = requests[i];
        let affordable = floor_lot(
            next.balance.max(0.0) / (prices[i] * (1.0 + fee_rate)),
            lot_decimals,
        );
        let qty = want.min(affordable);
        let gross = qty * prices[i];
        let fee = fee_rate * gross;
        next.balance -= gross + fee;
        next.holdings[i] += qty;
        bought += gross;
        trades.push(TradeRecord {
            timestamp,
            asset: assets[i].clone(),
            quantity: qty,
            price: prices[i],
            fee,
            requested: want,
            clipped: qty < want,
        });
    }

    Ok(StStepOutcome {
        portfolio: next,
        reward: sold - bought,
        trades,
    })
}

/// Simple interest on the loan principal for `year_fraction` of a year,
/// paid from the balance. Principal is untouched.
pub fn accrue_interest(
    portfolio: &Portfolio,
    year_fraction: f64,
    annual_rate: f64,
    timestamp: i64,
) -> Result<(Portfolio, f64), EnvError> {
    let interest = portfolio.borrowed * annual_rate * year_fraction;
    if interest > portfolio.balance {
        return Err(EnvError::MarginCall {
            timestamp,
            reason: format!(
                "interest {interest:.2} exceeds balance {:.2}",
                portfolio.balance
            ),
        });
    }
    let mut next = portfolio.clone();
    next.balance -= interest;
    next.accrued_interest = 0.0;
    Ok((next, interest))
}

/// Rebalance-boundary step: pay the period's interest, then reset the loan
/// to the net account value (1:1 loan-to-value).
pub fn apply_margin(
    portfolio: &Portfolio,
    prices: &[f64],
    year_fraction: f64,
    annual_rate: f64,
    timestamp: i64,
) -> Result<(Portfolio, f64), EnvError> {
    let (mut next, interest) = accrue_interest(portfolio, year_fraction, annual_rate, timestamp)?;
    let net = next.value(prices);
    if net <= 0.0 {
        return Err(EnvError::MarginCall {
            timestamp,
            reason: format!("net account value {net:.2} is not positive"),
        });
    }
    next.balance += net - next.borrowed;
    next.borrowed = net;
    Ok((next, interest))
}

/// `[balance] ++ closes ++ holdings ++ 9 features per asset`.
pub fn build_state_vector(
    portfolio: &Portfolio,
    prices: &[f64],
    features: &[Option<StateFeatures>],
) -> Result<Vec<f64>, EnvError> {
    let d = prices.len();
    if portfolio.holdings.len() != d || features.len() != d {
        return Err(EnvError::Config(
            "state inputs disagree on asset count".into(),
        ));
    }
    let mut state = Vec::with_capacity(1 + 2 * d + StateFeatures::COUNT * d);
    state.push(portfolio.balance);
    state.extend_from_slice(prices);
    state.extend_from_slice(&portfolio.holdings);
    for f in features {
        let f = f.ok_or(IndicatorError::WarmUp {
            t: 0,
            needed: crate::indicators::STATE_WARMUP,
            available: 0,
        })?;
        state.extend_from_slice(&f.to_array());
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum PositionCap {
    Shares(f64),
    /// Quote-currency notional, converted to quantity at the bar's close.
    Notional(f64),
}

impl PositionCap {
    pub fn quantity(self, price: f64, lot_decimals: u32) -> f64 {
        match self {
            PositionCap::Shares(s) => s,
            PositionCap::Notional(n) => floor_lot(n / price, lot_decimals),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginConfig {
    pub annual_rate: f64,
    pub period_months: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetClass {
    Stock,
    Crypto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StConfig {
    pub cap: PositionCap,
    pub lot_decimals: u32,
    pub fee_rate: f64,
    pub initial_capital: f64,
    /// Odd count `m`; level `i` trades `(i − c)/c` of the cap, `c = (m−1)/2`.
    pub action_levels: usize,
    pub margin: Option<MarginConfig>,
    pub lookback: usize,
    pub normalize_indicators: bool,
    pub selection: ActionSelection,
    pub periods_per_year: f64,
}

impl StConfig {
    pub fn preset(class: AssetClass) -> Self {
        let (cap, lot_decimals, ppy) = match class {
            AssetClass::Stock => (PositionCap::Shares(100.0), 0, TRADING_DAYS_PER_YEAR),
            AssetClass::Crypto => (
                PositionCap::Notional(100_000.0),
                6,
                crate::metrics::CRYPTO_8H_PERIODS_PER_YEAR,
            ),
        };
        Self {
            cap,
            lot_decimals,
            fee_rate: DEFAULT_FEE_RATE,
            initial_capital: DEFAULT_INITIAL_CAPITAL,
            action_levels: 5,
            margin: None,
            lookback: DEFAULT_LOOKBACK,
            normalize_indicators: false,
            selection: ActionSelection::Sample,
            periods_per_year: ppy,
        }
    }

    pub fn default_margin(class: AssetClass) -> MarginConfig {
        let annual_rate = match class {
            AssetClass::Stock => STOCK_MARGIN_RATE,
            AssetClass::Crypto => CRYPTO_MARGIN_RATE,
        };
        MarginConfig {
            annual_rate,
            period_months: 3,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.action_levels < 3 || self.action_levels.is_multiple_of(2) {
            return Err(EnvError::Config(format!(
                "action levels must be odd and ≥ 3, got {}",
                self.action_levels
            )));
        }
        if !(self.fee_rate >= 0.0 && self.fee_rate < 1.0) {
            return Err(EnvError::Config(format!(
                "fee rate {} outside [0, 1)",
                self.fee_rate
            )));
        }
        if !(self.initial_capital > 0.0) {
            return Err(EnvError::Config("initial capital must be positive".into()));
        }
        if self.lookback < 2 {
            return Err(EnvError::Config("lookback must be at least 2".into()));
        }
        if let Some(m) = self.margin {
            if m.period_months == 0 || !(m.annual_rate >= 0.0) {
                return Err(EnvError::Config(
                    "margin needs a positive period and non-negative rate".into(),
                ));
            }
        }
        Ok(())
    }

    /// Signed quantity for action level `level` at `price`.
    pub fn level_quantity(&self, level: usize, price: f64) -> f64 {
        let c = (self.action_levels - 1) as f64 / 2.0;
        let frac = (level.min(self.action_levels - 1) as f64 - c) / c;
        let magnitude = floor_lot(
            frac.abs() * self.cap.quantity(price, self.lot_decimals),
            self.lot_decimals,
        );
        magnitude.copysign(frac)
    }
}

/// Aligned closes, state features and a market index for a set of assets.
#[derive(Debug, Clone)]
pub struct StMarket {
    pub asset_ids: Vec<String>,
    pub timestamps: Vec<i64>,
    /// `closes[asset][bar]`.
    pub closes: Vec<Vec<f64>>,
    pub features: Vec<Vec<Option<StateFeatures>>>,
    /// Series driving the sketch's market features.
    pub index: Vec<f64>,
}

impl StMarket {
    /// Requires identical timestamps across assets. Without an explicit
    /// index the equal-weight average of normalized closes is used.
    pub fn new(assets: &[AssetSeries], index: Option<&AssetSeries>) -> Result<Self, EnvError> {
        let first = assets
            .first()
            .ok_or_else(|| EnvError::Alignment("no assets".into()))?;
        let timestamps = first.timestamps();
        if timestamps.is_empty() {
            return Err(EnvError::Alignment(format!(
                "asset {} has no bars",
                first.asset_id
            )));
        }
        for a in &assets[1..] {
            if a.timestamps() != timestamps {
                return Err(EnvError::Alignment(format!(
                    "{} and {} differ in timestamps",
                    first.asset_id, a.asset_id
                )));
            }
        }
        let closes: Vec<Vec<f64>> = assets.iter().map(|a| a.closes()).collect();
        let index = match index {
            Some(ix) => {
                let by_ts: HashMap<i64, f64> =
                    ix.bars.iter().map(|b| (b.timestamp, b.close)).collect();
                timestamps
                    .iter()
                    .map(|ts| {
                        by_ts.get(ts).copied().ok_or_else(|| {
                            EnvError::Alignment(format!("index {} has no bar at {ts}", ix.asset_id))
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?
            }
            None => (0..timestamps.len())
                .map(|t| closes.iter().map(|c| c[t] / c[0]).sum::<f64>() / closes.len() as f64)
                .collect(),
        };
        Ok(Self {
            asset_ids: assets.iter().map(|a| a.asset_id.clone()).collect(),
            timestamps,
            features: assets.iter().map(state_feature_table).collect(),
            closes,
            index,
        })
    }

    pub fn asset_count(&self) -> usize {
        self.asset_ids.len()
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn prices_at(&self, t: usize) -> Vec<f64> {
        self.closes.iter().map(|c| c[t]).collect()
    }

    pub fn features_at(&self, t: usize) -> Vec<Option<StateFeatures>> {
        self.features.iter().map(|f| f[t]).collect()
    }

    pub fn market_features(
        &self,
        t: usize,
        g: usize,
        normalize: bool,
    ) -> Result<MarketFeatures, EnvError> {
        Ok(MarketFeatures::at(&self.index, t, g, normalize)?)
    }

    /// Per-asset policy observation; `position` is the asset's share of
    /// the account value.
    pub fn observation(
        &self,
        asset: usize,
        t: usize,
        position: f64,
    ) -> Result<Observation, EnvError> {
        let f = self.features[asset][t].ok_or(IndicatorError::WarmUp {
            t,
            needed: crate::indicators::STATE_WARMUP,
            available: t + 1,
        })?;
        let close = self.closes[asset][t];
        let band = f.boll_ub - f.boll_lb;
        let boll = if band > 0.0 {
            (close - f.boll_lb) / band - 0.5
        } else {
            0.0
        };
        Ok(Observation {
            key: StateKey::trade(&self.asset_ids[asset], self.timestamps[t]),
            features: vec![
                1.0,
                close / f.close_30_sma - 1.0,
                close / f.close_60_sma - 1.0,
                f.macd / close,
                (f.macd - f.macds) / close,
                f.rsi_30 / 100.0 - 0.5,
                f.cci_30 / 100.0,
                f.dx_30 / 100.0,
                boll,
                position,
            ],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendPoint {
    pub timestamp: i64,
    pub trend: Option<TrendLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginCallEvent {
    pub timestamp: i64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StEpisode {
    pub curve: EquityCurve,
    pub rewards: Vec<f64>,
    pub trades: Vec<TradeRecord>,
    pub timeline: Vec<TrendPoint>,
    pub interest_paid: f64,
    pub margin_call: Option<MarginCallEvent>,
}

struct MarginClock {
    cfg: MarginConfig,
    last: i64,
    next: i64,
}

impl MarginClock {
    fn year_fraction(&self) -> f64 {
        self.cfg.period_months as f64 / 12.0
    }

    fn span(&self) -> Span {
        Span::Months(self.cfg.period_months)
    }

    /// Interest accrued since the last boundary, pro rata in time.
    fn accrued(&self, borrowed: f64, ts: i64) -> f64 {
        let frac = (ts - self.last) as f64 / (self.next - self.last) as f64;
        borrowed * self.cfg.annual_rate * self.year_fraction() * frac.clamp(0.0, 1.0)
    }
}

/// Trades bars `start..end`: decisions at `start..end−1`, each valued at
/// the next close. The curve starts at the initial capital.
pub fn run_st_episode(
    market: &StMarket,
    start: usize,
    end: usize,
    policy: &dyn DecisionPolicy,
    cfg: &StConfig,
    rng: &mut ChaCha8Rng,
) -> Result<StEpisode, EnvError> {
    cfg.validate()?;
    if start + 1 >= end || end > market.len() {
        return Err(EnvError::Config(format!(
            "bar range {start}..{end} is empty or exceeds {} bars",
            market.len()
        )));
    }
    let d = market.asset_count();
    let mut portfolio = match cfg.margin {
        Some(_) => Portfolio::margin(cfg.initial_capital, d),
        None => Portfolio::cash(cfg.initial_capital, d),
    };
    let mut clock = cfg.margin.map(|m| {
        let last = market.timestamps[start];
        let span = Span::Months(m.period_months);
        MarginClock {
            cfg: m,
            last,
            next: span.advance(last),
        }
    });
    let mut values = vec![portfolio.value(&market.prices_at(start))];
    let mut timestamps = vec![market.timestamps[start]];
    let (mut rewards, mut trades, mut timeline) = (Vec::new(), Vec::new(), Vec::new());
    let mut interest_paid = 0.0;
    let mut margin_call = None;

    for t in start..end - 1 {
        let prices = market.prices_at(t);
        let value = *values.last().unwrap();
        let mf = market.market_features(t, cfg.lookback, cfg.normalize_indicators)?;
        let mut requests = Vec::with_capacity(d);
        let mut trend = None;
        for (i, &price) in prices.iter().enumerate() {
            let obs = market.observation(i, t, portfolio.holdings[i] * price / value)?;
            let decision = policy.decide(&obs, Some(&mf))?;
            trend = trend.or(decision.trend);
            let level = cfg.selection.pick(&decision.dist, rng);
            requests.push(cfg.level_quantity(level, price));
        }
        timeline.push(TrendPoint {
            timestamp: market.timestamps[t],
            trend,
        });
        let step = st_step(
            &portfolio,
            &prices,
            &requests,
            cfg.fee_rate,
            cfg.lot_decimals,
            market.timestamps[t],
            &market.asset_ids,
        )?;
        portfolio = step.portfolio;
        rewards.push(step.reward);
        trades.extend(step.trades);

        let ts = market.timestamps[t + 1];
        let next_prices = market.prices_at(t + 1);
        if let Some(clock) = clock.as_mut() {
            let mut outcome = Ok(());
            while ts >= clock.next {
                match apply_margin(
                    &portfolio,
                    &next_prices,
                    clock.year_fraction(),
                    clock.cfg.annual_rate,
                    clock.next,
                ) {
                    Ok((p, interest)) => {
                        portfolio = p;
                        interest_paid += interest;
                        clock.last = clock.next;
                        clock.next = clock.span().advance(clock.next);
                    }
                    Err(e) => {
                        outcome = Err(e);
                        break;
                    }
                }
            }
            if outcome.is_ok() {
                portfolio.accrued_interest = clock.accrued(portfolio.borrowed, ts);
            }
            if let Err(EnvError::MarginCall { timestamp, reason }) = outcome {
                margin_call = Some(MarginCallEvent { timestamp, reason });
                break;
            }
        }
        let value = portfolio.value(&next_prices);
        if !(value > 0.0) {
            margin_call = Some(MarginCallEvent {
                timestamp: ts,
                reason: format!("account value {value:.2} is not positive"),
            });
            break;
        }
        values.push(value);
        timestamps.push(ts);
    }

    Ok(StEpisode {
        curve: EquityCurve::new(timestamps, values, cfg.periods_per_year)?,
        rewards,
        trades,
        timeline,
        interest_paid,
        margin_call,
    })
}

/// Toy-training view of a market: each episode trades one randomly chosen
/// asset from a random start for `episode_len` bars in its own cash
/// account. Reward is the change in account value relative to the full
/// position cap at the decision price.
#[derive(Debug, Clone)]
pub struct StTrainingEnv<'a> {
    market: &'a StMarket,
    start: usize,
    end: usize,
    episode_len: usize,
    cfg: StConfig,
    state: Option<(usize, usize, usize, Portfolio)>,
}

impl<'a> StTrainingEnv<'a> {
    pub fn new(
        market: &'a StMarket,
        start: usize,
        end: usize,
        episode_len: usize,
        cfg: StConfig,
    ) -> Result<Self, EnvError> {
        cfg.validate()?;
        let first = start
            .max(crate::indicators::STATE_WARMUP - 1)
            .max(cfg.lookback - 1);
        if episode_len == 0 || end > market.len() || first + episode_len >= end {
            return Err(EnvError::Config(format!(
                "bars {start}..{end} cannot host a {episode_len}-step episode after warm-up"
            )));
        }
        Ok(Self {
            market,
            start: first,
            end,
            episode_len,
            cfg,
            state: None,
        })
    }

    fn obs(&self, asset: usize, t: usize, portfolio: &Portfolio) -> Result<Vec<f64>, EnvError> {
        let price = self.market.closes[asset][t];
        let value = portfolio.value(&[price]);
        Ok(self
            .market
            .observation(asset, t, portfolio.holdings[0] * price / value)?
            .features)
    }
}

impl EpisodicEnv for StTrainingEnv<'_> {
    type Error = EnvError;

    fn action_count(&self) -> usize {
        self.cfg.action_levels
    }

    fn feature_dim(&self) -> usize {
        ST_FEATURE_DIM
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, EnvError> {
        let asset = rng.gen_range(0..self.market.asset_count());
        let t = rng.gen_range(self.start..self.end - self.episode_len);
        let portfolio = Portfolio::cash(self.cfg.initial_capital, 1);
        let obs = self.obs(asset, t, &portfolio)?;
        self.state = Some((asset, t, 0, portfolio));
        Ok(obs)
    }

    fn step(&mut self, action: usize) -> Result<(f64, Option<Vec<f64>>), EnvError> {
        let (asset, t, k, portfolio) = self
            .state
            .take()
            .ok_or_else(|| EnvError::Config("step before reset".into()))?;
        let price = self.market.closes[asset][t];
        let next_price = self.market.closes[asset][t + 1];
        let before = portfolio.value(&[price]);
        let q = self.cfg.level_quantity(action, price);
        let id = [self.market.asset_ids[asset].clone()];
        let out = st_step(
            &portfolio,
            &[price],
            &[q],
            self.cfg.fee_rate,
            self.cfg.lot_decimals,
            self.market.timestamps[t],
            &id,
        )?;
        let after = out.portfolio.value(&[next_price]);
        let scale = self.cfg.cap.quantity(price, self.cfg.lot_decimals) * price;
        let reward = if scale > 0.0 {
            (after - before) / scale
        } else {
            0.0
        };
        if k + 1 == self.episode_len {
            return Ok((reward, None));
        }
        let obs = self.obs(asset, t + 1, &out.portfolio)?;
        self.state = Some((asset, t + 1, k + 1, out.portfolio));
        Ok((reward, Some(obs)))
    }
}
