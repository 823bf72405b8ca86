//! Seeded synthetic markets with planted regimes, and random order paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvError, OrderTask, Side};
use crate::market_data::{AssetSeries, Bar, Calendar, DataError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Ascend,
    Descend,
    Oscillation,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Ascend, Regime::Descend, Regime::Oscillation];
}

/// Drift and noise of the log price per bar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeDynamics {
    pub drift: f64,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeMarketConfig {
    pub bars: usize,
    pub assets: usize,
    pub start_price: f64,
    pub interval_secs: i64,
    pub start_timestamp: i64,
    pub segment_len: (usize, usize),
    pub ascend: RegimeDynamics,
    pub descend: RegimeDynamics,
    /// Mean-reverting: `drift` is the pull back to the segment's opening level.
    pub oscillation: RegimeDynamics,
    /// Share of each asset's noise that is idiosyncratic.
    pub idiosyncratic: f64,
}

impl Default for RegimeMarketConfig {
    fn default() -> Self {
        Self {
            bars: 1000,
            assets: 3,
            start_price: 100.0,
            interval_secs: 86_400,
            start_timestamp: 1_577_836_800,
            segment_len: (25, 60),
            ascend: RegimeDynamics {
                drift: 0.008,
                noise: 0.004,
            },
            descend: RegimeDynamics {
                drift: -0.009,
                noise: 0.02,
            },
            oscillation: RegimeDynamics {
                drift: 0.15,
                noise: 0.008,
            },
            idiosyncratic: 0.3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticMarket {
    pub series: Vec<AssetSeries>,
    /// Planted regime of each bar's move into it.
    pub regimes: Vec<Regime>,
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn bars_from_closes(closes: &[f64], start: i64, step: i64, rng: &mut ChaCha8Rng) -> Vec<Bar> {
    let mut prev = closes[0];
    closes
        .iter()
        .enumerate()
        .map(|(i, &close)| {
            let open = prev;
            prev = close;
            let wick = 1.0 + 0.003 * rng.gen::<f64>();
            Bar {
                timestamp: start + i as i64 * step,
                open,
                high: open.max(close) * wick,
                low: open.min(close) / wick,
                close,
                volume: 1e5 * (0.5 + rng.gen::<f64>()),
            }
        })
        .collect()
}

/// Regimes alternate in random segments; assets share a common factor.
pub fn regime_market(cfg: &RegimeMarketConfig, seed: u64) -> Result<SyntheticMarket, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut regimes = Vec::with_capacity(cfg.bars);
    let mut current = Regime::ALL[rng.gen_range(0..3)];
    while regimes.len() < cfg.bars {
        let len = rng.gen_range(cfg.segment_len.0..=cfg.segment_len.1.max(cfg.segment_len.0));
        regimes.extend(std::iter::repeat_n(current, len));
        let others: Vec<Regime> = Regime::ALL
            .iter()
            .copied()
            .filter(|r| *r != current)
            .collect();
        current = others[rng.gen_range(0..others.len())];
    }
    regimes.truncate(cfg.bars);

    let mut logs = vec![vec![cfg.start_price.ln(); cfg.bars]; cfg.assets];
    let mut anchor = vec![cfg.start_price.ln(); cfg.assets];
    let id = cfg.idiosyncratic.clamp(0.0, 1.0);
    for t in 1..cfg.bars {
        let common = gauss(&mut rng);
        let r = regimes[t];
        for (a, path) in logs.iter_mut().enumerate() {
            let noise = (1.0 - id).sqrt() * common + id.sqrt() * gauss(&mut rng);
            let prev = path[t - 1];
            if regimes[t - 1] != r {
                anchor[a] = prev;
            }
            let step = match r {
                Regime::Ascend => cfg.ascend.drift + cfg.ascend.noise * noise,
                Regime::Descend => cfg.descend.drift + cfg.descend.noise * noise,
                Regime::Oscillation => {
                    cfg.oscillation.drift * (anchor[a] - prev) + cfg.oscillation.noise * noise
                }
            };
            path[t] = prev + step;
        }
    }
    let series = logs
        .iter()
        .enumerate()
        .map(|(a, path)| {
            let closes: Vec<f64> = path.iter().map(|l| l.exp()).collect();
            let bars = bars_from_closes(&closes, cfg.start_timestamp, cfg.interval_secs, &mut rng);
            AssetSeries::new(format!("SYN{a}"), cfg.interval_secs, Calendar::Free, bars)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SyntheticMarket { series, regimes })
}

/// Random-walk order paths with `history` bars of look-back each.
pub fn random_orders(
    count: usize,
    horizon: usize,
    history: usize,
    seed: u64,
) -> Result<Vec<OrderTask>, EnvError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let mut p = rng.gen_range(10.0..200.0);
            let vol = rng.gen_range(0.001..0.02);
            let path: Vec<f64> = (0..history + horizon)
                .map(|_| {
                    p *= (vol * gauss(&mut rng)).exp();
                    p
                })
                .collect();
            let side = if rng.gen::<bool>() {
                Side::Sell
            } else {
                Side::Buy
            };
            OrderTask::new(
                format!("order-{i}"),
                "SYN",
                side,
                rng.gen_range(100.0..10_000.0f64).round(),
                path[history..].to_vec(),
                path[..history].to_vec(),
            )
        })
        .collect()
}
