//! Rule-based reference strategies: TWAP and VWAP order schedules, and
//! buy-and-hold or index curves for trading.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::AssetSeries;
use crate::metrics::{EquityCurve, MetricsError};

/// Trailing days averaged into a VWAP volume profile.
pub const DEFAULT_VWAP_DAYS: usize = 20;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Per-step allocation fractions summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub fractions: Vec<f64>,
    /// Set when the schedule fell back to a simpler rule.
    pub warning: Option<String>,
}

impl Schedule {
    pub fn len(&self) -> usize {
        self.fractions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fractions.is_empty()
    }
}

pub fn twap_schedule(horizon: usize) -> Result<Schedule, BaselineError> {
    if horizon == 0 {
        return Err(BaselineError::Domain("horizon must be at least 1".into()));
    }
    Ok(Schedule {
        fractions: vec![1.0 / horizon as f64; horizon],
        warning: None,
    })
}

/// Slot-wise mean of historical intraday volumes, normalized. Each profile
/// must have `horizon` slots.
pub fn vwap_schedule(profiles: &[Vec<f64>], horizon: usize) -> Result<Schedule, BaselineError> {
    let mut twap = twap_schedule(horizon)?;
    if profiles.is_empty() {
        return Err(BaselineError::Domain(
            "no historical volume profiles".into(),
        ));
    }
    if let Some(p) = profiles.iter().find(|p| p.len() != horizon) {
        return Err(BaselineError::Domain(format!(
            "volume profile has {} slots, horizon is {horizon}",
            p.len()
        )));
    }
    if profiles
        .iter()
        .flatten()
        .any(|v| !(*v >= 0.0 && v.is_finite()))
    {
        return Err(BaselineError::Domain("volumes must be non-negative".into()));
    }
    let mean: Vec<f64> = (0..horizon)
        .map(|t| profiles.iter().map(|p| p[t]).sum::<f64>() / profiles.len() as f64)
        .collect();
    let total: f64 = mean.iter().sum();
    if total <= 0.0 {
        twap.warning = Some("all historical volumes are zero; using TWAP".into());
        return Ok(twap);
    }
    Ok(Schedule {
        fractions: mean.iter().map(|v| v / total).collect(),
        warning: None,
    })
}

/// Equal capital per asset bought at the first bar (fees on top of the
/// notional, fractional quantities) and held. `closes[asset][bar]`.
pub fn buy_and_hold(
    closes: &[Vec<f64>],
    timestamps: &[i64],
    capital: f64,
    fee_rate: f64,
    periods_per_year: f64,
) -> Result<EquityCurve, BaselineError> {
    if closes.is_empty() || !(capital > 0.0) {
        return Err(BaselineError::Domain(
            "need at least one asset and positive capital".into(),
        ));
    }
    if closes
        .iter()
        .any(|c| c.len() != timestamps.len() || c.is_empty())
    {
        return Err(BaselineError::Domain(
            "price paths and timestamps differ in length".into(),
        ));
    }
    let per_asset = capital / closes.len() as f64;
    let qty: Vec<f64> = closes
        .iter()
        .map(|c| per_asset / (c[0] * (1.0 + fee_rate)))
        .collect();
    let values = (0..timestamps.len())
        .map(|t| qty.iter().zip(closes).map(|(q, c)| q * c[t]).sum())
        .collect();
    Ok(EquityCurve::new(
        timestamps.to_vec(),
        values,
        periods_per_year,
    )?)
}

/// An index's closes rescaled to start at `capital`.
pub fn index_curve(
    index: &AssetSeries,
    capital: f64,
    periods_per_year: f64,
) -> Result<EquityCurve, BaselineError> {
    let closes = index.closes();
    let first = *closes
        .first()
        .ok_or_else(|| BaselineError::Domain("empty index series".into()))?;
    let values = closes.iter().map(|c| capital * c / first).collect();
    Ok(EquityCurve::new(
        index.timestamps(),
        values,
        periods_per_year,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, proptest};

    #[test]
    fn twap_examples() {
        assert_eq!(twap_schedule(4).unwrap().fractions, vec![0.25; 4]);
        assert_eq!(twap_schedule(1).unwrap().fractions, vec![1.0]);
        assert!(twap_schedule(0).is_err());
    }

    #[test]
    fn vwap_examples() {
        assert_eq!(
            vwap_schedule(&[vec![1.0, 3.0]], 2).unwrap().fractions,
            vec![0.25, 0.75]
        );
        assert_eq!(
            vwap_schedule(&[vec![1.0, 3.0], vec![3.0, 1.0]], 2)
                .unwrap()
                .fractions,
            vec![0.5, 0.5]
        );
        assert_eq!(
            vwap_schedule(&[vec![7.0; 5]], 5).unwrap().fractions,
            twap_schedule(5).unwrap().fractions
        );
        let s = vwap_schedule(&[vec![0.0; 3]], 3).unwrap();
        assert_eq!(s.fractions, twap_schedule(3).unwrap().fractions);
        assert!(s.warning.is_some());
    }

    #[test]
    fn buy_and_hold_examples() {
        let ts = vec![0, 1, 2];
        let c = buy_and_hold(&[vec![10.0, 12.0, 9.0]], &ts, 1000.0, 0.0, 252.0).unwrap();
        assert_eq!(c.values, vec![1000.0, 1200.0, 900.0]);

        let c = buy_and_hold(
            &[vec![10.0, 11.0, 10.0], vec![10.0, 9.0, 10.0]],
            &ts,
            1000.0,
            0.0,
            252.0,
        )
        .unwrap();
        assert!(c.values.iter().all(|v| (v - 1000.0).abs() < 1e-9));

        let c = buy_and_hold(&[vec![10.0, 10.0]], &ts[..2], 1000.0, 0.001, 252.0).unwrap();
        let dip = 1.0 - c.values[0] / 1000.0;
        assert!((dip - 0.001).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn schedules_sum_to_one(p in prop::collection::vec(prop::collection::vec(0.0f64..1e6, 7), 1..5), c in 0.001f64..1000.0) {
            let a = vwap_schedule(&p, 7).unwrap();
            prop_assert!((a.fractions.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let scaled: Vec<Vec<f64>> = p.iter().map(|d| d.iter().map(|v| v * c).collect()).collect();
            let b = vwap_schedule(&scaled, 7).unwrap();
            for (x, y) in a.fractions.iter().zip(&b.fractions) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn twap_sums_to_one(t in 1usize..500) {
            prop_assert!((twap_schedule(t).unwrap().fractions.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}
