use std::path::{Path, PathBuf};
use std::process::Command;

use logicq_cli::commands::{cmd_backtest, cmd_fit, cmd_report, write_report, Prepared, Strategy};
use logicq_cli::config::RunConfig;
use logicq_cli::error::CliError;
use logicq_cli::report::{aggregate, RunReport};
use logicq_core::market_data::export_series;
use logicq_core::metrics::{st_metrics, EquityCurve, MetricReport};
use logicq_core::optimizer::Trial;
use logicq_core::sketch::{default_template, SketchMode};
use logicq_core::synthetic::{regime_market, RegimeMarketConfig};

const FAST_BO: &str = "candidates = 128\nrefine_top = 2\nrefine_steps = 10\nrestarts = 2";

fn write_market(dir: &Path, bars: usize, interval: i64) {
    let cfg = RegimeMarketConfig {
        bars,
        assets: 2,
        interval_secs: interval,
        ..RegimeMarketConfig::default()
    };
    let m = regime_market(&cfg, 7).unwrap();
    for s in &m.series {
        export_series(s, &dir.join(format!("{}.csv", s.asset_id))).unwrap();
    }
}

fn st_config(dir: &Path, members: usize, budget: usize, train_days: i64) -> PathBuf {
    write_market(dir, 400, 86_400);
    let text = format!(
        r#"
mode = "st"
market = "stock"
seeds = [0, 1]

[data]
interval_secs = 86400
assets = [{{ id = "SYN0", path = "SYN0.csv" }}, {{ id = "SYN1", path = "SYN1.csv" }}]

[split]
train = {{ days = {train_days} }}
validation = {{ days = 80 }}
test = {{ days = 80 }}
step = {{ days = 80 }}

[optimizer]
budget = {budget}
{FAST_BO}

[env]
cap = {{ kind = "shares", value = 1000.0 }}

[policies.toy]
members = {members}
episodes = 30
"#
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn oe_config(dir: &Path, budget: usize) -> PathBuf {
    write_market(dir, 600, 60);
    let text = format!(
        r#"
mode = "oe"
seeds = [0, 1, 2]

[data]
interval_secs = 60
assets = [{{ id = "SYN0", path = "SYN0.csv" }}]

[split]
train = {{ seconds = 12000 }}
validation = {{ seconds = 9600 }}
test = {{ seconds = 9600 }}
step = {{ seconds = 9600 }}

[optimizer]
budget = {budget}
{FAST_BO}

[env]
horizon = 16
vwap_days = 5

[policies.toy]
episodes = 30
"#
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn trials(fit_dir: &Path, split: usize) -> Vec<Trial> {
    let text =
        std::fs::read_to_string(fit_dir.join(format!("split-{split:03}/trials.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn fit_does_not_regress_below_probes_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let prepared = Prepared::load(&st_config(dir.path(), 2, 5, 150)).unwrap();
    assert_eq!(prepared.splits.len(), 2);
    let (a, b) = (dir.path().join("fit-a"), dir.path().join("fit-b"));
    let statuses = cmd_fit(&prepared, &a).unwrap();
    cmd_fit(&prepared, &b).unwrap();
    for s in &statuses {
        let t = trials(&a, s.index);
        let probes: Vec<f64> = t.iter().filter(|t| t.probe).map(|t| t.value).collect();
        // identity plus both one-hot probes
        assert_eq!(probes.len(), 3);
        assert!(probes.iter().all(|&p| s.best_value.unwrap() >= p));
        for f in [
            "params.json",
            "trials.json",
            "trials.csv",
            "policies/toy-0.json",
        ] {
            let rel = format!("split-{:03}/{f}", s.index);
            assert_eq!(
                std::fs::read(a.join(&rel)).unwrap(),
                std::fs::read(b.join(&rel)).unwrap(),
                "{rel}"
            );
        }
    }
}

#[test]
fn budget_one_keeps_identity_and_matches_base_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let prepared = Prepared::load(&st_config(dir.path(), 2, 1, 150)).unwrap();
    let fit_dir = dir.path().join("fit");
    cmd_fit(&prepared, &fit_dir).unwrap();
    let t = trials(&fit_dir, 0);
    assert_eq!(t.len(), 1);
    assert!(t[0].probe);

    let tuned = cmd_backtest(&prepared, Strategy::Logicq, Some(&fit_dir)).unwrap();
    let base = cmd_backtest(&prepared, Strategy::Base, Some(&fit_dir)).unwrap();
    for (ts, bs) in tuned.splits.iter().zip(&base.splits) {
        let params = ts.params.as_ref().unwrap();
        for (k, v) in params.iter().filter(|(k, _)| k.starts_with("phi_")) {
            assert_eq!(*v, 0.5, "{k}");
        }
        for (tr, br) in ts.runs.iter().zip(&bs.runs) {
            assert_eq!(tr.metrics, br.metrics);
            assert_eq!(tr.equity_curve, br.equity_curve);
            let steps = tr.equity_curve.as_ref().unwrap().values.len() - 1;
            assert_eq!(tr.timeline.len(), steps);
            assert!(br.timeline.is_empty());
        }
    }
}

#[test]
fn report_aggregate_and_curve_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let prepared = Prepared::load(&st_config(dir.path(), 2, 2, 150)).unwrap();
    let fit_dir = dir.path().join("fit");
    cmd_fit(&prepared, &fit_dir).unwrap();
    let report = cmd_backtest(&prepared, Strategy::Logicq, Some(&fit_dir)).unwrap();
    assert_eq!(report.aggregate, aggregate(&report.splits));
    assert_eq!(report.splits.iter().map(|s| s.runs.len()).sum::<usize>(), 4);

    let path = dir.path().join("logicq.json");
    write_report(&report, &path).unwrap();
    assert!(path.with_extension("txt").exists());
    let back = RunReport::read(&path).unwrap();
    assert_eq!(back.splits, report.splits);

    let bah = cmd_backtest(&prepared, Strategy::Bah, None).unwrap();
    let bah_path = dir.path().join("bah.json");
    write_report(&bah, &bah_path).unwrap();

    let out = dir.path().join("cmp");
    let single = cmd_report(std::slice::from_ref(&path), &out).unwrap();
    assert_eq!(single.rows.len(), 1);
    for (m, cell) in single.metrics.iter().zip(&single.rows[0].1) {
        let row = report.aggregate.iter().find(|a| &a.metric == m).unwrap();
        let (mean, std) = cell.unwrap();
        assert!((mean == row.mean && std == row.std) || (mean.is_nan() && row.mean.is_nan()));
    }
    let both = cmd_report(&[path, bah_path], &out).unwrap();
    assert_eq!(
        both.rows.iter().map(|r| r.0.as_str()).collect::<Vec<_>>(),
        vec!["logicq", "bah"]
    );

    let run = &report.splits[1].runs[0];
    let exported = out.join("curves/logicq-split001-seed0.csv");
    let curve = EquityCurve::load(
        &exported,
        run.equity_curve.as_ref().unwrap().periods_per_year,
    )
    .unwrap();
    assert_eq!(
        MetricReport::St(st_metrics(&curve, 0.0).unwrap()),
        run.metrics
    );
    assert!(out.join("timelines/logicq-split001-seed0.csv").exists());
}

#[test]
fn report_guards() {
    let dir = tempfile::tempdir().unwrap();
    let prepared = Prepared::load(&st_config(dir.path(), 1, 1, 150)).unwrap();
    let bah = cmd_backtest(&prepared, Strategy::Bah, None).unwrap();
    let a = dir.path().join("a.json");
    write_report(&bah, &a).unwrap();

    let mut shifted = bah.clone();
    shifted.splits.truncate(1);
    shifted.splits[0].test.start += 86_400;
    let b = dir.path().join("b.json");
    write_report(&shifted, &b).unwrap();
    let err = cmd_report(&[a.clone(), b], &dir.path().join("x")).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, CliError::Validation(_)));
    assert!(
        msg.contains("different windows") && msg.matches("2020").count() >= 2,
        "{msg}"
    );

    let mut other = bah.clone();
    other.mode = logicq_cli::config::Mode::Oe;
    let c = dir.path().join("c.json");
    write_report(&other, &c).unwrap();
    assert!(matches!(
        cmd_report(&[a, c], &dir.path().join("y")),
        Err(CliError::Validation(_))
    ));
}

#[test]
fn order_execution_baselines_and_fit() {
    let dir = tempfile::tempdir().unwrap();
    let prepared = Prepared::load(&oe_config(dir.path(), 3)).unwrap();
    assert!(!prepared.splits.is_empty());

    let twap = cmd_backtest(&prepared, Strategy::Twap, None).unwrap();
    for run in twap.splits.iter().flat_map(|s| &s.runs) {
        let MetricReport::Oe(m) = &run.metrics else {
            panic!("order execution report")
        };
        assert!(m.pa.abs() < 1e-9 && m.arr.abs() < 1e-9);
        assert_eq!((m.pos, m.glr), (0.0, 0.0));
        assert!(m.orders > 0);
    }
    let vwap = cmd_backtest(&prepared, Strategy::Vwap, None).unwrap();
    assert_eq!(vwap.splits.len(), twap.splits.len());

    let fit_dir = dir.path().join("fit");
    cmd_fit(&prepared, &fit_dir).unwrap();
    let tuned = cmd_backtest(&prepared, Strategy::Logicq, Some(&fit_dir)).unwrap();
    for run in tuned.splits.iter().flat_map(|s| &s.runs) {
        let MetricReport::Oe(m) = &run.metrics else {
            panic!("order execution report")
        };
        // every step of every order has enough history for the sketch
        assert_eq!(run.timeline.len(), m.orders * 16);
    }
    assert!(matches!(
        cmd_backtest(&prepared, Strategy::Bah, None),
        Err(CliError::Validation(_))
    ));
}

#[test]
fn template_mode_must_match_policies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = st_config(dir.path(), 2, 1, 150);
    let rule = dir.path().join("single.rules");
    std::fs::write(
        &rule,
        default_template(SketchMode::SingleModel).unwrap().render(),
    )
    .unwrap();
    let text = std::fs::read_to_string(&cfg_path).unwrap().replace(
        "seeds = [0, 1]",
        "seeds = [0, 1]\ntemplate = \"single.rules\"",
    );
    let cfg = RunConfig::from_toml(&text, dir.path()).unwrap();
    assert!(matches!(
        Prepared::from_config(cfg),
        Err(CliError::Validation(_))
    ));
}

fn logicq(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_logicq"))
        .args(args)
        .output()
        .unwrap();
    let text =
        String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap(), text)
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.rules");
    std::fs::write(
        &good,
        default_template(SketchMode::Ensemble { k: 3 })
            .unwrap()
            .render(),
    )
    .unwrap();
    let (code, out) = logicq(&["sketch", "check", good.to_str().unwrap()]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("23 parameters"), "{out}");

    let bad = dir.path().join("bad.rules");
    std::fs::write(&bad, "mode single\nif volatility ~ ? -> steady_ascend\n").unwrap();
    assert_eq!(logicq(&["sketch", "check", bad.to_str().unwrap()]).0, 1);

    let cfg = st_config(dir.path(), 1, 1, 150);
    let cfg_s = cfg.to_str().unwrap();
    let ingest = dir.path().join("ingested");
    let (code, out) = logicq(&[
        "ingest",
        "--config",
        cfg_s,
        "--out",
        ingest.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{out}");
    assert!(
        out.contains("2 rolling splits") && ingest.join("SYN0.csv").exists(),
        "{out}"
    );

    let (code, out) = logicq(&["backtest", "--config", cfg_s, "--strategy", "twap"]);
    assert_eq!(code, 1, "{out}");
    let (code, out) = logicq(&["backtest", "--config", cfg_s, "--strategy", "logicq"]);
    assert_eq!(code, 1, "{out}");

    let broken = std::fs::read_to_string(&cfg)
        .unwrap()
        .replace("SYN1.csv", "missing.csv");
    let broken_path = dir.path().join("broken.toml");
    std::fs::write(&broken_path, broken).unwrap();
    assert_eq!(
        logicq(&["fit", "--config", broken_path.to_str().unwrap()]).0,
        1
    );

    // validation starts before the indicators warm up: fails while computing
    let short = st_config(dir.path(), 1, 1, 20);
    let fit_out = dir.path().join("fit-short");
    let (code, out) = logicq(&[
        "fit",
        "--config",
        short.to_str().unwrap(),
        "--out",
        fit_out.to_str().unwrap(),
    ]);
    assert_eq!(code, 2, "{out}");
    assert!(fit_out.join("split-000/FAILED").exists());
    assert!(fit_out.join("fit.json").exists());
}
