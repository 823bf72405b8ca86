//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line with the
//! tolerance it checks, then asserts.
//!
//! Run with `cargo test -p logicq-core --test acceptance -- --nocapture --test-threads 1`.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use logicq_core::baselines::twap_schedule;
use logicq_core::env::{
    accrue_interest, build_state_vector, AssetClass, OeConfig, Portfolio, PositionCap, StConfig,
    StMarket, CRYPTO_MARGIN_RATE, STOCK_MARGIN_RATE, ST_FEATURE_DIM,
};
use logicq_core::indicators::{MarketFeatures, StateFeatures};
use logicq_core::metrics::{
    additional_annualized_return, gain_loss_ratio, max_drawdown, positive_rate, price_advantage,
    OeOrderResult, Side,
};
use logicq_core::optimizer::{optimize, BoConfig, Dimension, Objective, Scale, SearchSpace};
use logicq_core::pipeline::{
    backtest_oe_schedule, derive_seed, evaluate_policy_objective, fit_sketch,
    market_feature_samples, EvalData, FitConfig,
};
use logicq_core::policy::{
    mix, softmax, temperature_tune, ActionDistribution, BasePolicy, Decision, DecisionPolicy,
    EnsemblePolicy, FrozenPolicy, LinearPolicy, Observation, PolicyError, PolicyLogits,
    TunedPolicy,
};
use logicq_core::sketch::{default_template, SketchMode};
use logicq_core::synthetic::{random_orders, regime_market, Regime, RegimeMarketConfig};

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {id:>2} [{name}]: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
}

#[test]
fn criterion_01_arr_matches_reported_pairs() {
    let pairs = [
        (3.40, 0.0894),
        (3.27, 0.0859),
        (3.41, 0.0897),
        (4.33, 0.1153),
    ];
    let worst = pairs
        .iter()
        .map(|&(pa, arr)| (additional_annualized_return(pa, 252.0) - arr).abs())
        .fold(0.0, f64::max);
    let pass = worst <= 0.0005;
    report(
        1,
        "ARR from PA",
        pass,
        &format!("max deviation {:.4} pp, tolerance 0.05 pp", worst * 100.0),
    );
    assert!(pass);
}

#[test]
fn criterion_02_twap_null_row() {
    let start = Instant::now();
    let orders = random_orders(100, 16, 14, 2024).unwrap();
    let bt = backtest_oe_schedule(&orders, &OeConfig::default(), 252.0, |o| {
        Ok(twap_schedule(o.horizon()).unwrap().fractions)
    })
    .unwrap();
    let max_pa = bt.results.iter().map(|r| r.pa.abs()).fold(0.0, f64::max);
    let m = &bt.metrics;
    let pass =
        max_pa <= 1e-9 && m.pa.abs() <= 1e-9 && m.arr.abs() <= 1e-9 && m.pos == 0.0 && m.glr == 0.0;
    report(
        2,
        "TWAP null row",
        pass,
        &format!(
            "max |PA| {max_pa:.2e} bps (tol 1e-9), ARR {:.2e}, POS {}, GLR {}, {} orders, {:?}",
            m.arr,
            m.pos,
            m.glr,
            bt.results.len(),
            start.elapsed()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_03_parameter_budgets() {
    let single = default_template(SketchMode::SingleModel)
        .unwrap()
        .scalar_count();
    let ens = default_template(SketchMode::Ensemble { k: 3 })
        .unwrap()
        .scalar_count();
    let pass = single == 13 && ens == 23;
    report(
        3,
        "parameter budgets",
        pass,
        &format!("single {single} (want 13), ensemble k=3 {ens} (want 23)"),
    );
    assert!(pass);
}

#[test]
fn criterion_04_tuning_properties() {
    let start = Instant::now();
    let mut runner = TestRunner::new(Config {
        cases: 10_000,
        failure_persistence: None,
        ..Config::default()
    });
    let logits = prop::collection::vec(-20.0f64..20.0, 2..12);
    let temperature = runner.run(
        &(logits.clone(), 0.1f64..10.0, 0.1f64..10.0),
        |(l, a, b)| {
            let l = PolicyLogits(l);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let base = softmax(&l).unwrap();
            let (p_lo, p_hi) = (
                temperature_tune(&l, lo).unwrap(),
                temperature_tune(&l, hi).unwrap(),
            );
            // argmax ties are broken by index in both, so indices must agree
            prop_assert_eq!(p_lo.argmax(), base.argmax());
            prop_assert_eq!(p_hi.argmax(), base.argmax());
            prop_assert!(p_hi.entropy() >= p_lo.entropy() - 1e-12);
            let unit = temperature_tune(&l, 1.0).unwrap();
            prop_assert_eq!(unit.probs(), base.probs());
            Ok(())
        },
    );
    let mixing = runner.run(
        &(
            prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 5), 2..5),
            prop::collection::vec(0.0f64..1.0, 5),
        ),
        |(members, raw)| {
            let dists: Vec<ActionDistribution> = members
                .iter()
                .map(|l| softmax(&PolicyLogits(l.clone())).unwrap())
                .collect();
            let w: Vec<f64> = raw[..dists.len()].iter().map(|x| x + 1e-3).collect();
            let s: f64 = w.iter().sum();
            let w: Vec<f64> = w.iter().map(|x| x / s).collect();
            let m = mix(&dists, &w).unwrap();
            prop_assert!((m.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            for a in 0..5 {
                let lo = dists
                    .iter()
                    .map(|d| d.probs()[a])
                    .fold(f64::INFINITY, f64::min);
                let hi = dists
                    .iter()
                    .map(|d| d.probs()[a])
                    .fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(m.probs()[a] >= lo - 1e-12 && m.probs()[a] <= hi + 1e-12);
            }
            Ok(())
        },
    );
    let pass = temperature.is_ok() && mixing.is_ok();
    report(
        4,
        "tuning-function properties",
        pass,
        &format!(
            "10^4 cases each; entropy slack 1e-12; φ=1 bit-exact; {:?}",
            start.elapsed()
        ),
    );
    if let Err(e) = temperature {
        panic!("{e}");
    }
    if let Err(e) = mixing {
        panic!("{e}");
    }
}

fn brute_drawdown(v: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..v.len() {
        for j in i..v.len() {
            worst = worst.min(v[j] / v[i] - 1.0);
        }
    }
    worst
}

#[test]
fn criterion_05_metric_oracles() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_md: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..200);
        let mut v = 100.0;
        let curve: Vec<f64> = (0..n)
            .map(|_| {
                v *= 1.0 + rng.gen_range(-0.05..0.05);
                v
            })
            .collect();
        worst_md = worst_md.max((max_drawdown(&curve) - brute_drawdown(&curve)).abs());
    }
    let mut worst_oe: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..50);
        let pas: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen_bool(0.1) {
                    0.0
                } else {
                    rng.gen_range(-30.0..30.0)
                }
            })
            .collect();
        let orders: Vec<OeOrderResult> = pas
            .iter()
            .enumerate()
            .map(|(i, &pa)| {
                OeOrderResult::new(format!("o{i}"), Side::Sell, 50.0 * (1.0 + pa * 1e-4), 50.0)
                    .unwrap()
            })
            .collect();
        let realized: Vec<f64> = orders
            .iter()
            .map(|o| 1e4 * (o.achieved_price / o.baseline_price - 1.0))
            .collect();
        let pa = realized.iter().sum::<f64>() / n as f64;
        let wins: Vec<f64> = realized.iter().copied().filter(|&p| p > 0.0).collect();
        let losses: Vec<f64> = realized.iter().copied().filter(|&p| p < 0.0).collect();
        let glr = if wins.is_empty() {
            0.0
        } else if losses.is_empty() {
            f64::INFINITY
        } else {
            (wins.iter().sum::<f64>() / wins.len() as f64)
                / (losses.iter().sum::<f64>() / losses.len() as f64).abs()
        };
        let pos = wins.len() as f64 / n as f64;
        let glr_diff = if glr.is_infinite() {
            if gain_loss_ratio(&orders) == glr {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (gain_loss_ratio(&orders) - glr).abs()
        };
        worst_oe = worst_oe
            .max((price_advantage(&orders).unwrap() - pa).abs())
            .max((positive_rate(&orders).unwrap() - pos).abs())
            .max(glr_diff);
    }
    let pass = worst_md <= 1e-12 && worst_oe <= 1e-12;
    report(
        5,
        "metric oracles",
        pass,
        &format!("MD max diff {worst_md:.1e} over 10^3 curves, PA/GLR/POS max diff {worst_oe:.1e}, tol 1e-12, {:?}", start.elapsed()),
    );
    assert!(pass);
}

/// Routes by the planted regime of the current bar; test-only upper bound.
struct RegimeOracle {
    ensemble: EnsemblePolicy,
    regimes: Vec<Regime>,
    weights: BTreeMap<Regime, Vec<f64>>,
}

impl DecisionPolicy for RegimeOracle {
    fn action_count(&self) -> usize {
        self.ensemble.action_count()
    }

    fn decide(
        &self,
        obs: &Observation,
        market: Option<&MarketFeatures>,
    ) -> Result<Decision, PolicyError> {
        let t = market
            .ok_or_else(|| PolicyError::Config("oracle needs the bar index".into()))?
            .t;
        let dists = self.ensemble.distributions(obs)?;
        Ok(Decision {
            trend: None,
            dist: mix(&dists, &self.weights[&self.regimes[t]])?,
        })
    }
}

fn member(id: &str, logits: Vec<f64>) -> Arc<dyn FrozenPolicy> {
    Arc::new(LinearPolicy::constant(id, logits, ST_FEATURE_DIM))
}

#[test]
fn criterion_06_regime_recovery() {
    let start = Instant::now();
    let members = vec![
        member("A-buy", vec![0.0, 0.0, 0.0, 1.0, 4.0]),
        member("B-sell", vec![4.0, 1.0, 0.0, 0.0, 0.0]),
        member("C-hold", vec![0.0, 0.0, 4.0, 0.0, 0.0]),
    ];
    let base = BasePolicy::from_members(members.clone()).unwrap();
    let BasePolicy::Ensemble(ensemble) = &base else {
        unreachable!()
    };
    let template = default_template(SketchMode::Ensemble { k: 3 }).unwrap();
    // 1000-share levels let a position build within one regime segment
    let cfg = StConfig {
        cap: PositionCap::Shares(1000.0),
        ..StConfig::preset(AssetClass::Stock)
    };
    let (train, val, test) = ((60, 400), (400, 750), (750, 1100));
    let candidates = {
        let one_hot = |j: usize| {
            (0..3)
                .map(|i| if i == j { 1.0 } else { 0.0 })
                .collect::<Vec<f64>>()
        };
        vec![one_hot(0), one_hot(1), one_hot(2), vec![1.0 / 3.0; 3]]
    };

    let mut wins = 0;
    let mut no_regression = true;
    let mut oracle_bounds = true;
    let mut oracle_strict = true;
    for seed in 0..5u64 {
        let market_cfg = RegimeMarketConfig {
            bars: 1100,
            ..RegimeMarketConfig::default()
        };
        let synth = regime_market(&market_cfg, 100 + seed).unwrap();
        let market = StMarket::new(&synth.series, None).unwrap();
        let eval_seed = derive_seed(seed, 1);
        let val_data = EvalData::St {
            market: &market,
            start: val.0,
            end: val.1,
            cfg: &cfg,
            risk_free_rate: 0.0,
        };
        let test_data = EvalData::St {
            market: &market,
            start: test.0,
            end: test.1,
            cfg: &cfg,
            risk_free_rate: 0.0,
        };
        let features =
            market_feature_samples(&market.index[train.0 - 13..train.1], 14, false).unwrap();
        let fit_cfg = FitConfig {
            bo: BoConfig {
                seed,
                ..BoConfig::default()
            },
            eval_seed,
            ..FitConfig::default()
        };
        let fit = fit_sketch(
            &template,
            &base,
            &features,
            &val_data,
            &Objective::SharpeRatio,
            &fit_cfg,
        )
        .unwrap();
        let tuned = TunedPolicy::new(base.clone(), template.clone(), fit.params.clone()).unwrap();

        let single = |data: &EvalData<'_>| -> Vec<f64> {
            members
                .iter()
                .map(|m| {
                    evaluate_policy_objective(
                        &BasePolicy::Single(m.clone()),
                        data,
                        &Objective::SharpeRatio,
                        eval_seed,
                    )
                    .unwrap()
                })
                .collect()
        };
        let val_single = single(&val_data);
        let test_single = single(&test_data);
        let test_tuned =
            evaluate_policy_objective(&tuned, &test_data, &Objective::SharpeRatio, eval_seed)
                .unwrap();

        // exhaustive oracle over per-regime assignments on validation
        let mut oracle = f64::NEG_INFINITY;
        for a in &candidates {
            for b in &candidates {
                for c in &candidates {
                    let weights = BTreeMap::from([
                        (Regime::Ascend, a.clone()),
                        (Regime::Descend, b.clone()),
                        (Regime::Oscillation, c.clone()),
                    ]);
                    let policy = RegimeOracle {
                        ensemble: ensemble.clone(),
                        regimes: synth.regimes.clone(),
                        weights,
                    };
                    let v = evaluate_policy_objective(
                        &policy,
                        &val_data,
                        &Objective::SharpeRatio,
                        eval_seed,
                    )
                    .unwrap();
                    oracle = oracle.max(v);
                }
            }
        }

        let best_val_single = val_single.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let best_test_single = test_single
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        no_regression &= fit.history.best_value >= best_val_single;
        oracle_bounds &= oracle >= fit.history.best_value;
        oracle_strict &= oracle > best_val_single;
        if test_tuned > best_test_single {
            wins += 1;
        }
        println!(
            "  seed {seed}: val fitted {:.3} / best single {:.3} / oracle {:.3}; test fitted {:.3} / best single {:.3}",
            fit.history.best_value, best_val_single, oracle, test_tuned, best_test_single
        );
    }
    let pass = no_regression && oracle_bounds && oracle_strict && wins >= 4;
    report(
        6,
        "no-regression and regime recovery",
        pass,
        &format!(
            "val ≥ best one-hot: {no_regression}; oracle ≥ fitted: {oracle_bounds}; oracle > one-hots: {oracle_strict}; test wins {wins}/5 (need ≥ 4); {:?}",
            start.elapsed()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_07_bo_convergence() {
    let start = Instant::now();
    let f = |x: f64| -(x - 0.3) * (x - 0.3);
    let grid_best =
        (0..10_000)
            .map(|i| i as f64 / 9_999.0)
            .fold(0.0, |b, x| if f(x) > f(b) { x } else { b });
    let space = SearchSpace::new(vec![Dimension {
        name: "x".into(),
        lo: 0.0,
        hi: 1.0,
        scale: Scale::Linear,
    }])
    .unwrap();
    let mut hits = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let cfg = BoConfig {
            budget: 20,
            seed,
            ..BoConfig::default()
        };
        let r = optimize(
            &space,
            |x| Ok::<_, std::convert::Infallible>(f(x[0])),
            &[vec![0.5]],
            &cfg,
        )
        .unwrap();
        let err = (r.best[0] - grid_best).abs();
        worst = worst.max(err);
        if (r.best[0] - 0.3).abs() <= 0.05 {
            hits += 1;
        }
    }
    let pass = hits == 10 && (grid_best - 0.3).abs() < 1e-3;
    report(
        7,
        "BO convergence",
        pass,
        &format!("{hits}/10 seeds within 0.05 of 0.3; grid oracle {grid_best:.4}; worst gap {worst:.4}; {:?}", start.elapsed()),
    );
    assert!(pass);
}

#[test]
fn criterion_08_margin_arithmetic() {
    let mut p = Portfolio {
        borrowed: 1_000_000.0,
        ..Portfolio::cash(2_000_000.0, 0)
    };
    let mut year = 0.0;
    for q in 0..4 {
        let (next, interest) = accrue_interest(&p, 0.25, STOCK_MARGIN_RATE, q).unwrap();
        year += interest;
        p = next;
    }
    let crypto_p = Portfolio {
        borrowed: 100_000.0,
        ..Portfolio::cash(200_000.0, 0)
    };
    let (_, quarter) = accrue_interest(&crypto_p, 0.25, CRYPTO_MARGIN_RATE, 0).unwrap();
    let pass = (year - 77_500.0).abs() <= 1.0 && (quarter - 4_280.0).abs() <= 0.01;
    report(
        8,
        "margin arithmetic",
        pass,
        &format!("year {year:.4} (77,500 ± 1), crypto quarter {quarter:.4} (4,280 ± 0.01)"),
    );
    assert!(pass);
}

#[test]
fn criterion_09_state_layout() {
    let f = StateFeatures {
        macd: 0.0,
        macds: 0.0,
        boll_ub: 0.0,
        boll_lb: 0.0,
        rsi_30: 50.0,
        cci_30: 0.0,
        dx_30: 0.0,
        close_30_sma: 1.0,
        close_60_sma: 1.0,
    };
    let len = build_state_vector(&Portfolio::cash(1e6, 30), &[1.0; 30], &[Some(f); 30])
        .unwrap()
        .len();
    let pass = len == 331;
    report(
        9,
        "state layout",
        pass,
        &format!("D = 30 gives length {len} (want 331)"),
    );
    assert!(pass);
}

#[test]
fn criterion_10_headline_results_not_reproducible() {
    println!(
        "criterion 10 [headline market results]: NOT REPRODUCIBLE (needs the proprietary minute-level equity dataset and trained reference agents; covered by criteria 1-9)"
    );
}
