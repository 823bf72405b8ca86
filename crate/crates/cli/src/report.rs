//! Versioned run reports, their text rendering, and cross-report comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use logicq_core::env::{MarginCallEvent, TrendPoint};
use logicq_core::market_data::{format_ts, Window};
use logicq_core::metrics::{inf_as_string, Aggregate, EquityCurve, MetricReport};
use logicq_core::optimizer::Trial;

use crate::config::{Mode, RunConfig};
use crate::error::CliError;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub metrics: MetricReport,
    #[serde(default)]
    pub equity_curve: Option<EquityCurve>,
    /// Trend label per test step where the sketch was evaluated.
    #[serde(default)]
    pub timeline: Vec<TrendPoint>,
    #[serde(default)]
    pub margin_call: Option<MarginCallEvent>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub index: usize,
    pub train: Window,
    pub validation: Window,
    pub test: Window,
    #[serde(default)]
    pub params: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub trials: Option<Vec<Trial>>,
    pub runs: Vec<SeedRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub metric: String,
    #[serde(with = "inf_as_string")]
    pub mean: f64,
    #[serde(with = "inf_as_string")]
    pub std: f64,
    /// Runs where the metric was defined.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: u32,
    /// Unix seconds; the only field that varies between identical runs.
    pub generated_at: u64,
    pub mode: Mode,
    pub strategy: String,
    pub config: RunConfig,
    pub splits: Vec<SplitReport>,
    pub aggregate: Vec<AggregateRow>,
}

/// Mean and population std of every metric over all runs, in display order.
pub fn aggregate(splits: &[SplitReport]) -> Vec<AggregateRow> {
    let mut order: Vec<&'static str> = Vec::new();
    let mut values: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
    for run in splits.iter().flat_map(|s| &s.runs) {
        for (name, v) in run.metrics.entries() {
            if !order.contains(&name) {
                order.push(name);
            }
            if let Some(v) = v {
                values.entry(name).or_default().push(v);
            }
        }
    }
    order
        .into_iter()
        .map(|name| {
            let vals = values.get(name).map(Vec::as_slice).unwrap_or(&[]);
            let agg = Aggregate::of(vals).unwrap_or(Aggregate {
                mean: f64::NAN,
                std: f64::NAN,
            });
            AggregateRow {
                metric: name.to_string(),
                mean: agg.mean,
                std: agg.std,
                count: vals.len(),
            }
        })
        .collect()
}

fn now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunReport {
    pub fn new(mode: Mode, strategy: &str, config: RunConfig, splits: Vec<SplitReport>) -> Self {
        let aggregate = aggregate(&splits);
        Self {
            version: REPORT_VERSION,
            generated_at: now(),
            mode,
            strategy: strategy.into(),
            config,
            splits,
            aggregate,
        }
    }

    pub fn test_windows(&self) -> Vec<Window> {
        self.splits.iter().map(|s| s.test).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let report: RunReport = serde_json::from_str(text)
            .map_err(|e| CliError::Validation(format!("malformed report: {e}")))?;
        if report.version != REPORT_VERSION {
            return Err(CliError::Validation(format!(
                "report version {} is not supported (expected {REPORT_VERSION})",
                report.version
            )));
        }
        Ok(report)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Validation(format!("cannot read report {}: {e}", path.display()))
        })?;
        Self::from_json(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "strategy: {}", self.strategy);
        let _ = writeln!(out, "mode: {}", self.mode.name());
        for s in &self.splits {
            let _ = writeln!(out, "\nsplit {} test {}", s.index, s.test);
            for r in &s.runs {
                let metrics: Vec<String> = r
                    .metrics
                    .entries()
                    .into_iter()
                    .map(|(k, v)| {
                        format!(
                            "{k}={}",
                            v.map_or("undefined".into(), |v| format!("{v:.6}"))
                        )
                    })
                    .collect();
                let _ = writeln!(out, "  seed {}: {}", r.seed, metrics.join(" "));
                if let Some(m) = &r.margin_call {
                    let _ = writeln!(
                        out,
                        "    margin call at {}: {}",
                        format_ts(m.timestamp),
                        m.reason
                    );
                }
                for w in &r.warnings {
                    let _ = writeln!(out, "    warning: {w}");
                }
            }
        }
        let _ = writeln!(out, "\naggregate (mean ± std):");
        for row in &self.aggregate {
            let _ = writeln!(
                out,
                "  {}: {:.6} ± {:.6} (n={})",
                row.metric, row.mean, row.std, row.count
            );
        }
        out
    }
}

/// Rows are strategies, columns the metrics of the shared mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub metrics: Vec<String>,
    pub rows: Vec<(String, Vec<Option<(f64, f64)>>)>,
}

pub fn compare(reports: &[RunReport]) -> Result<Comparison, CliError> {
    let first = reports
        .first()
        .ok_or_else(|| CliError::Validation("at least one report is required".into()))?;
    for r in &reports[1..] {
        if r.mode != first.mode {
            return Err(CliError::Validation(format!(
                "cannot compare a {} report ({}) with a {} report ({})",
                first.mode.name(),
                first.strategy,
                r.mode.name(),
                r.strategy
            )));
        }
        if r.test_windows() != first.test_windows() {
            let show = |w: Vec<Window>| {
                w.iter()
                    .map(|w| w.to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            };
            return Err(CliError::Validation(format!(
                "reports cover different windows: {} uses {} but {} uses {}",
                first.strategy,
                show(first.test_windows()),
                r.strategy,
                show(r.test_windows())
            )));
        }
    }
    let metrics: Vec<String> = first.aggregate.iter().map(|a| a.metric.clone()).collect();
    let rows = reports
        .iter()
        .map(|r| {
            let cells = metrics
                .iter()
                .map(|m| {
                    r.aggregate
                        .iter()
                        .find(|a| &a.metric == m)
                        .map(|a| (a.mean, a.std))
                })
                .collect();
            (r.strategy.clone(), cells)
        })
        .collect();
    Ok(Comparison { metrics, rows })
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let mut out = format!("{:<12}", "strategy");
        for m in &self.metrics {
            let _ = write!(out, " {m:>24}");
        }
        out.push('\n');
        for (name, cells) in &self.rows {
            let _ = write!(out, "{name:<12}");
            for c in cells {
                let cell = c.map_or("-".to_string(), |(m, s)| format!("{m:.4} ± {s:.4}"));
                let _ = write!(out, " {cell:>24}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["strategy".to_string()];
        for m in &self.metrics {
            header.push(format!("{m}_mean"));
            header.push(format!("{m}_std"));
        }
        wtr.write_record(&header)?;
        for (name, cells) in &self.rows {
            let mut row = vec![name.clone()];
            for c in cells {
                match c {
                    Some((m, s)) => {
                        row.push(m.to_string());
                        row.push(s.to_string());
                    }
                    None => row.extend([String::new(), String::new()]),
                }
            }
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub fn write_timeline<W: std::io::Write>(
    timeline: &[TrendPoint],
    writer: W,
) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["timestamp", "trend"])?;
    for p in timeline {
        wtr.write_record([
            p.timestamp.to_string(),
            p.trend.map_or(String::new(), |t| t.name().to_string()),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
