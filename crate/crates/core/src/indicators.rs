//! Market-trend indicators consumed by the sketch and the per-asset state
//! features exposed to trading policies.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::{AssetSeries, Bar};

/// Default lookback, in bars, for volatility, downside risk and growth rate.
pub const DEFAULT_LOOKBACK: usize = 14;

/// Bars of history required by [`state_features`] (longest window is the
/// 60-bar moving average).
pub const STATE_WARMUP: usize = 60;

#[derive(Debug, Error, PartialEq)]
pub enum IndicatorError {
    #[error("window of {got} prices is too short (need at least {needed})")]
    Window { needed: usize, got: usize },
    #[error("start price must be positive, got {0}")]
    Domain(f64),
    #[error("warm-up: index {t} has {available} bars of history, need {needed}")]
    WarmUp {
        t: usize,
        needed: usize,
        available: usize,
    },
}

/// Population variance of raw prices over the window.
pub fn volatility(window: &[f64]) -> Result<f64, IndicatorError> {
    if window.len() < 2 {
        return Err(IndicatorError::Window {
            needed: 2,
            got: window.len(),
        });
    }
    let g = window.len() as f64;
    let mean = window.iter().sum::<f64>() / g;
    Ok(window.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / g)
}

/// Root-mean-square shortfall below the window mean, averaged over the
/// below-mean observations only. Zero when nothing is below the mean
/// (including the empty window).
pub fn downside_risk(window: &[f64]) -> f64 {
    if window.is_empty() {
        return 0.0;
    }
    let mean = window.iter().sum::<f64>() / window.len() as f64;
    let (sum, n) = window
        .iter()
        .filter(|&&x| x < mean)
        .fold((0.0, 0usize), |(s, n), &x| (s + (mean - x).powi(2), n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Fractional gain from `start` to `end`, floored at zero.
pub fn growth_rate(start: f64, end: f64) -> Result<f64, IndicatorError> {
    if !(start > 0.0) {
        return Err(IndicatorError::Domain(start));
    }
    Ok(if end > start {
        (end - start) / start
    } else {
        0.0
    })
}

/// The sketch's market input at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketFeatures {
    pub vol: f64,
    pub dr: f64,
    pub gr: f64,
    pub t: usize,
    pub g: usize,
}

impl MarketFeatures {
    /// Features over the `g` prices ending at index `t` (inclusive).
    /// With `normalize`, vol is divided by the squared window mean and dr by
    /// the window mean.
    pub fn at(closes: &[f64], t: usize, g: usize, normalize: bool) -> Result<Self, IndicatorError> {
        if g < 2 {
            return Err(IndicatorError::Window { needed: 2, got: g });
        }
        if t >= closes.len() || t + 1 < g {
            return Err(IndicatorError::WarmUp {
                t,
                needed: g,
                available: (t + 1).min(closes.len()),
            });
        }
        Self::from_window(&closes[t + 1 - g..=t], t, normalize)
    }

    /// Features over an explicit window whose last price is "now".
    pub fn from_window(window: &[f64], t: usize, normalize: bool) -> Result<Self, IndicatorError> {
        let mut vol = volatility(window)?;
        let mut dr = downside_risk(window);
        let gr = growth_rate(window[0], window[window.len() - 1])?;
        if normalize {
            let mean = window.iter().sum::<f64>() / window.len() as f64;
            vol /= mean * mean;
            dr /= mean;
        }
        Ok(Self {
            vol,
            dr,
            gr,
            t,
            g: window.len(),
        })
    }
}

/// The nine per-asset technical indicators of the trading state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateFeatures {
    pub macd: f64,
    pub macds: f64,
    pub boll_ub: f64,
    pub boll_lb: f64,
    pub rsi_30: f64,
    pub cci_30: f64,
    pub dx_30: f64,
    pub close_30_sma: f64,
    pub close_60_sma: f64,
}

impl StateFeatures {
    pub const COUNT: usize = 9;
    pub const NAMES: [&'static str; 9] = [
        "macd",
        "macds",
        "boll_ub",
        "boll_lb",
        "rsi_30",
        "cci_30",
        "dx_30",
        "close_30_sma",
        "close_60_sma",
    ];

    pub fn to_array(&self) -> [f64; 9] {
        [
            self.macd,
            self.macds,
            self.boll_ub,
            self.boll_lb,
            self.rsi_30,
            self.cci_30,
            self.dx_30,
            self.close_30_sma,
            self.close_60_sma,
        ]
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn ema_alpha(span: usize) -> f64 {
    2.0 / (span as f64 + 1.0)
}

/// Simple-average RSI over the last `n` price changes; 50 when flat.
fn rsi(closes: &[f64], n: usize) -> f64 {
    let changes = closes.windows(2).rev().take(n).map(|w| w[1] - w[0]);
    let (gain, loss) = changes.fold(
        (0.0, 0.0),
        |(g, l), d| if d > 0.0 { (g + d, l) } else { (g, l - d) },
    );
    if gain == 0.0 && loss == 0.0 {
        50.0
    } else if loss == 0.0 {
        100.0
    } else {
        100.0 - 100.0 / (1.0 + gain / loss)
    }
}

fn cci(bars: &[Bar]) -> f64 {
    let tp: Vec<f64> = bars
        .iter()
        .map(|b| (b.high + b.low + b.close) / 3.0)
        .collect();
    let m = mean(&tp);
    let md = tp.iter().map(|x| (x - m).abs()).sum::<f64>() / tp.len() as f64;
    if md == 0.0 {
        0.0
    } else {
        (tp[tp.len() - 1] - m) / (0.015 * md)
    }
}

/// Directional index from summed +DM/−DM/TR over the window's bar pairs.
fn dx(bars: &[Bar]) -> f64 {
    let (mut plus, mut minus, mut tr) = (0.0, 0.0, 0.0);
    for w in bars.windows(2) {
        let (prev, cur) = (w[0], w[1]);
        let up = cur.high - prev.high;
        let down = prev.low - cur.low;
        if up > down && up > 0.0 {
            plus += up;
        }
        if down > up && down > 0.0 {
            minus += down;
        }
        tr += (cur.high - cur.low)
            .max((cur.high - prev.close).abs())
            .max((cur.low - prev.close).abs());
    }
    if tr == 0.0 {
        return 0.0;
    }
    let pdi = 100.0 * plus / tr;
    let mdi = 100.0 * minus / tr;
    if pdi + mdi == 0.0 {
        0.0
    } else {
        100.0 * (pdi - mdi).abs() / (pdi + mdi)
    }
}

fn window_features(bars: &[Bar], t: usize, macd: f64, macds: f64) -> StateFeatures {
    let recent = &bars[t + 1 - (t + 1).min(61)..=t];
    let closes: Vec<f64> = recent.iter().map(|b| b.close).collect();
    let tail = |n: usize| &closes[closes.len() - n..];
    let c20 = tail(20);
    let m20 = mean(c20);
    let sd20 = (c20.iter().map(|x| (x - m20).powi(2)).sum::<f64>() / 20.0).sqrt();
    let n31 = closes.len().min(31);
    StateFeatures {
        macd,
        macds,
        boll_ub: m20 + 2.0 * sd20,
        boll_lb: m20 - 2.0 * sd20,
        rsi_30: rsi(tail(n31), 30),
        cci_30: cci(&recent[recent.len() - 30..]),
        dx_30: dx(&recent[recent.len() - n31..]),
        close_30_sma: mean(tail(30)),
        close_60_sma: mean(tail(60)),
    }
}

/// The nine indicators at bar index `t`, recomputing the MACD recursions
/// from the start of the series.
pub fn state_features(series: &AssetSeries, t: usize) -> Result<StateFeatures, IndicatorError> {
    let bars = &series.bars;
    if t >= bars.len() || t + 1 < STATE_WARMUP {
        return Err(IndicatorError::WarmUp {
            t,
            needed: STATE_WARMUP,
            available: (t + 1).min(bars.len()),
        });
    }
    let (a12, a26, a9) = (ema_alpha(12), ema_alpha(26), ema_alpha(9));
    let (mut e12, mut e26) = (bars[0].close, bars[0].close);
    let mut signal = 0.0;
    for (i, b) in bars[..=t].iter().enumerate() {
        if i > 0 {
            e12 += a12 * (b.close - e12);
            e26 += a26 * (b.close - e26);
        }
        let macd = e12 - e26;
        signal = if i == 0 {
            macd
        } else {
            signal + a9 * (macd - signal)
        };
    }
    Ok(window_features(bars, t, e12 - e26, signal))
}

/// [`state_features`] for every index in one pass; `None` during warm-up.
pub fn state_feature_table(series: &AssetSeries) -> Vec<Option<StateFeatures>> {
    let bars = &series.bars;
    let (a12, a26, a9) = (ema_alpha(12), ema_alpha(26), ema_alpha(9));
    let mut out = Vec::with_capacity(bars.len());
    let (mut e12, mut e26, mut signal) = (0.0, 0.0, 0.0);
    for (i, b) in bars.iter().enumerate() {
        if i == 0 {
            e12 = b.close;
            e26 = b.close;
        } else {
            e12 += a12 * (b.close - e12);
            e26 += a26 * (b.close - e26);
        }
        let macd = e12 - e26;
        signal = if i == 0 {
            macd
        } else {
            signal + a9 * (macd - signal)
        };
        out.push((i + 1 >= STATE_WARMUP).then(|| window_features(bars, i, macd, signal)));
    }
    out
}

/// Writes `timestamp, vol, dr, gr, <nine features>` rows; cells are empty
/// where warm-up is not yet satisfied.
pub fn write_indicator_dump<W: std::io::Write>(
    series: &AssetSeries,
    lookback: usize,
    normalize: bool,
    writer: W,
) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp", "vol", "dr", "gr"];
    header.extend(StateFeatures::NAMES);
    wtr.write_record(&header)?;
    let closes = series.closes();
    let table = state_feature_table(series);
    for (t, bar) in series.bars.iter().enumerate() {
        let mut row = vec![bar.timestamp.to_string()];
        match MarketFeatures::at(&closes, t, lookback, normalize) {
            Ok(f) => row.extend([f.vol, f.dr, f.gr].iter().map(f64::to_string)),
            Err(_) => row.extend(std::iter::repeat_n(String::new(), 3)),
        }
        match &table[t] {
            Some(sf) => row.extend(sf.to_array().iter().map(f64::to_string)),
            None => row.extend(std::iter::repeat_n(String::new(), StateFeatures::COUNT)),
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
