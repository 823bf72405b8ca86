//! Order-execution and stock-trading performance metrics.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Annualization factor for daily stock bars.
pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;
/// Annualization factor for 8-hour crypto bars (3 per day, every day).
pub const CRYPTO_8H_PERIODS_PER_YEAR: f64 = 1095.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no data: {0}")]
    NoData(String),
    #[error("invalid equity curve: {0}")]
    InvalidCurve(String),
    #[error("invalid order result: {0}")]
    InvalidOrder(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Sell,
    Buy,
}

impl Side {
    /// +1 for sells (higher price is better), −1 for buys.
    pub fn sign(self) -> f64 {
        match self {
            Side::Sell => 1.0,
            Side::Buy => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OeOrderResult {
    pub order_id: String,
    pub side: Side,
    /// Average execution price achieved.
    pub achieved_price: f64,
    /// Baseline price, the unweighted mean market price over the horizon.
    pub baseline_price: f64,
    /// Price advantage in basis points, positive when the execution beat
    /// the baseline for this side.
    pub pa: f64,
}

/// Relative price gaps below this count as no advantage.
pub const PA_NOISE_FLOOR: f64 = 1e-12;

impl OeOrderResult {
    pub fn new(
        order_id: impl Into<String>,
        side: Side,
        achieved_price: f64,
        baseline_price: f64,
    ) -> Result<Self, MetricsError> {
        if !(baseline_price > 0.0 && baseline_price.is_finite()) {
            return Err(MetricsError::InvalidOrder(format!(
                "baseline price must be positive, got {baseline_price}"
            )));
        }
        if !achieved_price.is_finite() {
            return Err(MetricsError::InvalidOrder(
                "non-finite execution price".into(),
            ));
        }
        let rel = achieved_price / baseline_price - 1.0;
        // summation-order noise, e.g. an even split against the plain mean
        let rel = if rel.abs() < PA_NOISE_FLOOR { 0.0 } else { rel };
        let pa = side.sign() * 1e4 * rel;
        Ok(Self {
            order_id: order_id.into(),
            side,
            achieved_price,
            baseline_price,
            pa,
        })
    }
}

fn non_empty(results: &[OeOrderResult]) -> Result<(), MetricsError> {
    if results.is_empty() {
        Err(MetricsError::NoData("no orders".into()))
    } else {
        Ok(())
    }
}

/// Mean per-order price advantage in basis points.
pub fn price_advantage(results: &[OeOrderResult]) -> Result<f64, MetricsError> {
    non_empty(results)?;
    Ok(results.iter().map(|r| r.pa).sum::<f64>() / results.len() as f64)
}

/// Daily advantage compounded over a year: `(1 + pa·10⁻⁴)^periods − 1`.
pub fn additional_annualized_return(pa: f64, periods_per_year: f64) -> f64 {
    (1.0 + pa * 1e-4).powf(periods_per_year) - 1.0
}

/// Mean winning PA over the magnitude of the mean losing PA. No winners
/// gives 0; winners without losers give `+∞`.
pub fn gain_loss_ratio(results: &[OeOrderResult]) -> f64 {
    let wins: Vec<f64> = results.iter().map(|r| r.pa).filter(|&p| p > 0.0).collect();
    let losses: Vec<f64> = results.iter().map(|r| r.pa).filter(|&p| p < 0.0).collect();
    if wins.is_empty() {
        return 0.0;
    }
    if losses.is_empty() {
        return f64::INFINITY;
    }
    let gain = wins.iter().sum::<f64>() / wins.len() as f64;
    let loss = losses.iter().sum::<f64>() / losses.len() as f64;
    gain / loss.abs()
}

/// Fraction of orders with strictly positive PA.
pub fn positive_rate(results: &[OeOrderResult]) -> Result<f64, MetricsError> {
    non_empty(results)?;
    Ok(results.iter().filter(|r| r.pa > 0.0).count() as f64 / results.len() as f64)
}

/// Serde adapter writing non-finite floats as `"inf"`, `"-inf"` or `"nan"`.
pub mod inf_as_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Str(s) if s == "nan" => Ok(f64::NAN),
            Repr::Str(s) => Err(serde::de::Error::custom(format!(
                "expected number, found `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OeMetrics {
    /// Basis points.
    pub pa: f64,
    /// Fraction (0.0894 = 8.94%).
    pub arr: f64,
    #[serde(with = "inf_as_string")]
    pub glr: f64,
    pub pos: f64,
    pub orders: usize,
}

pub fn oe_metrics(
    results: &[OeOrderResult],
    periods_per_year: f64,
) -> Result<OeMetrics, MetricsError> {
    let pa = price_advantage(results)?;
    Ok(OeMetrics {
        pa,
        arr: additional_annualized_return(pa, periods_per_year),
        glr: gain_loss_ratio(results),
        pos: positive_rate(results)?,
        orders: results.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquityCurve {
    pub timestamps: Vec<i64>,
    pub values: Vec<f64>,
    pub periods_per_year: f64,
}

impl EquityCurve {
    pub fn new(
        timestamps: Vec<i64>,
        values: Vec<f64>,
        periods_per_year: f64,
    ) -> Result<Self, MetricsError> {
        if timestamps.len() != values.len() {
            return Err(MetricsError::InvalidCurve(format!(
                "{} timestamps for {} values",
                timestamps.len(),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(MetricsError::InvalidCurve(format!(
                "portfolio value {v} is not positive"
            )));
        }
        if timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(MetricsError::InvalidCurve(
                "timestamps not strictly increasing".into(),
            ));
        }
        if !(periods_per_year > 0.0) {
            return Err(MetricsError::InvalidCurve(
                "periods per year must be positive".into(),
            ));
        }
        Ok(Self {
            timestamps,
            values,
            periods_per_year,
        })
    }

    /// Simple per-period returns.
    pub fn returns(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["timestamp", "value"])?;
        for (t, v) in self.timestamps.iter().zip(&self.values) {
            wtr.write_record([t.to_string(), v.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(
        reader: R,
        periods_per_year: f64,
    ) -> Result<Self, MetricsError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let (mut ts, mut vs) = (Vec::new(), Vec::new());
        for (i, rec) in rdr.records().enumerate() {
            let bad = |m: String| MetricsError::InvalidCurve(format!("line {}: {m}", i + 2));
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let t = rec
                .get(0)
                .unwrap_or("")
                .parse::<i64>()
                .map_err(|e| bad(e.to_string()))?;
            let v = rec
                .get(1)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|e| bad(e.to_string()))?;
            ts.push(t);
            vs.push(v);
        }
        Self::new(ts, vs, periods_per_year)
    }

    pub fn export(&self, path: &Path) -> Result<(), MetricsError> {
        let io = |m: String| MetricsError::Io {
            path: path.display().to_string(),
            message: m,
        };
        let file = std::fs::File::create(path).map_err(|e| io(e.to_string()))?;
        self.write_csv(file).map_err(|e| io(e.to_string()))
    }

    pub fn load(path: &Path, periods_per_year: f64) -> Result<Self, MetricsError> {
        let file = std::fs::File::open(path).map_err(|e| MetricsError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::read_csv(file, periods_per_year)
    }
}

/// Most negative `V_t / max_{u≤t} V_u − 1`, in one pass.
pub fn max_drawdown(values: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst: f64 = 0.0;
    for &v in values {
        peak = peak.max(v);
        worst = worst.min(v / peak - 1.0);
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StMetrics {
    pub ar: f64,
    pub cr: f64,
    pub av: f64,
    /// Non-positive fraction.
    pub md: f64,
    /// `None` when returns have zero volatility.
    pub sr: Option<f64>,
    pub samples: usize,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Stock-trading metrics; `risk_free_rate` is annual.
pub fn st_metrics(curve: &EquityCurve, risk_free_rate: f64) -> Result<StMetrics, MetricsError> {
    let n = curve.values.len();
    if n < 2 {
        return Err(MetricsError::NoData(format!(
            "need at least 2 equity samples, got {n}"
        )));
    }
    let ppy = curve.periods_per_year;
    let cr = curve.values[n - 1] / curve.values[0] - 1.0;
    let periods = (n - 1) as f64;
    let ar = (1.0 + cr).powf(ppy / periods) - 1.0;
    let returns = curve.returns();
    let (mean, std) = mean_std(&returns);
    let sr = (std > 0.0).then(|| (mean - risk_free_rate / ppy) / std * ppy.sqrt());
    Ok(StMetrics {
        ar,
        cr,
        av: std * ppy.sqrt(),
        md: max_drawdown(&curve.values),
        sr,
        samples: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "flavor", rename_all = "snake_case")]
pub enum MetricReport {
    Oe(OeMetrics),
    St(StMetrics),
}

impl MetricReport {
    /// `(name, value)` pairs in display order; `None` for undefined values.
    pub fn entries(&self) -> Vec<(&'static str, Option<f64>)> {
        match self {
            MetricReport::Oe(m) => vec![
                ("PA", Some(m.pa)),
                ("ARR", Some(m.arr)),
                ("GLR", Some(m.glr)),
                ("POS", Some(m.pos)),
            ],
            MetricReport::St(m) => vec![
                ("AR", Some(m.ar)),
                ("CR", Some(m.cr)),
                ("AV", Some(m.av)),
                ("MD", Some(m.md)),
                ("SR", m.sr),
            ],
        }
    }

    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| match v {
                Some(v) => format!("{k}: {v}\n"),
                None => format!("{k}: undefined\n"),
            })
            .collect()
    }
}

/// Mean and population standard deviation across seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let (mean, std) = mean_std(values);
        Some(Self { mean, std })
    }
}
