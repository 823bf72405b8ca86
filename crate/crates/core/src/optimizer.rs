//! Gaussian-process Bayesian optimization of sketch holes.

use nalgebra::{DMatrix, DVector};
use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

use crate::indicators::MarketFeatures;
use crate::sketch::{Directive, SketchMode, SketchParams, SketchTemplate};

pub const DEFAULT_BUDGET: usize = 20;
pub const DEFAULT_TEMPERATURE_BOUNDS: (f64, f64) = (0.1, 10.0);
const JITTER: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("invalid search space: {0}")]
    Space(String),
    #[error("budget must be at least 1")]
    Budget,
    #[error("point has {got} coordinates, space has {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("objective failed: {0}")]
    Objective(String),
    #[error("no observations to fit")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub scale: Scale,
}

/// Box of named dimensions. `lo == hi` pins a dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    dims: Vec<Dimension>,
}

impl SearchSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self, OptimizerError> {
        for d in &dims {
            if !(d.lo.is_finite() && d.hi.is_finite()) || d.lo > d.hi {
                return Err(OptimizerError::Space(format!(
                    "{}: bounds [{}, {}]",
                    d.name, d.lo, d.hi
                )));
            }
            if d.scale == Scale::Log && d.lo <= 0.0 {
                return Err(OptimizerError::Space(format!(
                    "{}: log scale needs positive bounds",
                    d.name
                )));
            }
        }
        Ok(Self { dims })
    }

    pub fn dims(&self) -> &[Dimension] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dims.len()
            && x.iter()
                .zip(&self.dims)
                .all(|(v, d)| *v >= d.lo && *v <= d.hi)
    }

    /// Natural units to the unit cube.
    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.dims)
            .map(|(&v, d)| {
                if d.hi == d.lo {
                    return 0.5;
                }
                let u = match d.scale {
                    Scale::Linear => (v - d.lo) / (d.hi - d.lo),
                    Scale::Log => (v.ln() - d.lo.ln()) / (d.hi.ln() - d.lo.ln()),
                };
                u.clamp(0.0, 1.0)
            })
            .collect()
    }

    /// Unit cube to natural units, clamped into bounds.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.dims)
            .map(|(&u, d)| {
                if d.hi == d.lo {
                    return d.lo;
                }
                let v = match d.scale {
                    Scale::Linear => d.lo + u * (d.hi - d.lo),
                    Scale::Log => (d.lo.ln() + u * (d.hi.ln() - d.lo.ln())).exp(),
                };
                v.clamp(d.lo, d.hi)
            })
            .collect()
    }
}

/// Linear-interpolated percentile, `q` in [0, 100].
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = (q / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    Some(if i + 1 < v.len() {
        v[i] + frac * (v[i + 1] - v[i])
    } else {
        v[i]
    })
}

/// Per-threshold bounds: the [1st, 99th] percentile of each hole's
/// indicator over `features`.
pub fn threshold_bounds(
    template: &SketchTemplate,
    features: &[MarketFeatures],
) -> Result<Vec<(f64, f64)>, OptimizerError> {
    if features.is_empty() {
        return Err(OptimizerError::Space(
            "no indicator samples for threshold bounds".into(),
        ));
    }
    Ok(template
        .threshold_slots()
        .into_iter()
        .map(|(ind, _)| {
            let vals: Vec<f64> = features.iter().map(|f| ind.value(f)).collect();
            (
                percentile(&vals, 1.0).unwrap_or(0.0),
                percentile(&vals, 99.0).unwrap_or(0.0),
            )
        })
        .collect())
}

/// Search space over a template's holes. Temperatures are log-scaled;
/// ensemble weights use `k − 1` stick-breaking fractions per trend.
#[derive(Debug, Clone)]
pub struct SketchSpace {
    template: SketchTemplate,
    space: SearchSpace,
}

impl SketchSpace {
    pub fn new(
        template: &SketchTemplate,
        thresholds: &[(f64, f64)],
        temperatures: (f64, f64),
    ) -> Result<Self, OptimizerError> {
        if thresholds.len() != template.threshold_count() {
            return Err(OptimizerError::Dimension {
                expected: template.threshold_count(),
                got: thresholds.len(),
            });
        }
        let mut dims: Vec<Dimension> = thresholds
            .iter()
            .enumerate()
            .map(|(i, &(lo, hi))| Dimension {
                name: format!("threshold_{i}"),
                lo,
                hi,
                scale: Scale::Linear,
            })
            .collect();
        for hole in 0..template.directive_count() {
            match template.mode() {
                SketchMode::SingleModel => dims.push(Dimension {
                    name: format!("phi_{hole}"),
                    lo: temperatures.0,
                    hi: temperatures.1,
                    scale: Scale::Log,
                }),
                SketchMode::Ensemble { k } => {
                    for j in 0..k - 1 {
                        dims.push(Dimension {
                            name: format!("stick_{hole}_{j}"),
                            lo: 0.0,
                            hi: 1.0,
                            scale: Scale::Linear,
                        });
                    }
                }
            }
        }
        Ok(Self {
            template: template.clone(),
            space: SearchSpace::new(dims)?,
        })
    }

    pub fn template(&self) -> &SketchTemplate {
        &self.template
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    /// Bound midpoints of the thresholds.
    pub fn threshold_midpoints(&self) -> Vec<f64> {
        self.space.dims()[..self.template.threshold_count()]
            .iter()
            .map(|d| 0.5 * (d.lo + d.hi))
            .collect()
    }

    pub fn decode(&self, x: &[f64]) -> Result<SketchParams, OptimizerError> {
        if x.len() != self.space.len() {
            return Err(OptimizerError::Dimension {
                expected: self.space.len(),
                got: x.len(),
            });
        }
        let n = self.template.threshold_count();
        let thresholds = x[..n].to_vec();
        let directives = match self.template.mode() {
            SketchMode::SingleModel => x[n..]
                .iter()
                .map(|&phi| Directive::Temperature(phi))
                .collect(),
            SketchMode::Ensemble { k } => x[n..]
                .chunks(k - 1)
                .map(|v| Directive::Weights(unstick(v)))
                .collect(),
        };
        Ok(SketchParams {
            thresholds,
            directives,
        })
    }

    pub fn encode(&self, params: &SketchParams) -> Result<Vec<f64>, OptimizerError> {
        params
            .validate(&self.template)
            .map_err(|e| OptimizerError::Space(e.to_string()))?;
        let mut x = params.thresholds.clone();
        for d in &params.directives {
            match d {
                Directive::Temperature(phi) => x.push(*phi),
                Directive::Weights(w) => x.extend(stick(w)),
            }
        }
        Ok(x)
    }

    /// Fixed first trials: the identity point, plus every one-hot
    /// assignment for an ensemble. Thresholds sit at bound midpoints.
    pub fn probes(&self) -> Vec<Vec<f64>> {
        probe_set(&self.template, self.threshold_midpoints())
            .iter()
            .map(|p| self.encode(p).expect("probe params are valid"))
            .collect()
    }
}

pub fn probe_set(template: &SketchTemplate, thresholds: Vec<f64>) -> Vec<SketchParams> {
    let mut probes = vec![SketchParams::identity(template, thresholds.clone())];
    if let SketchMode::Ensemble { k } = template.mode() {
        for j in 0..k {
            probes.push(
                SketchParams::one_hot(template, thresholds.clone(), j).expect("ensemble template"),
            );
        }
    }
    probes
}

/// Stick fractions to simplex weights. The uniform point decodes to exactly
/// `1/k` so the identity probe matches the untuned ensemble bit for bit.
fn unstick(v: &[f64]) -> Vec<f64> {
    let k = v.len() + 1;
    let mut rest = 1.0;
    let mut w: Vec<f64> = v
        .iter()
        .map(|&f| {
            let piece = rest * f.clamp(0.0, 1.0);
            rest -= piece;
            piece
        })
        .collect();
    w.push(rest.max(0.0));
    let uniform = 1.0 / k as f64;
    if w.iter().all(|x| (x - uniform).abs() < 1e-12) {
        return vec![uniform; k];
    }
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

fn stick(w: &[f64]) -> Vec<f64> {
    let mut rest = 1.0;
    w[..w.len() - 1]
        .iter()
        .map(|&x| {
            let f = if rest > 1e-15 {
                (x / rest).clamp(0.0, 1.0)
            } else {
                0.0
            };
            rest -= x;
            f
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    CumulativeDiscountedReward { gamma: f64 },
    SharpeRatio,
}

impl Objective {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        match self {
            Objective::CumulativeDiscountedReward { gamma } if !(*gamma > 0.0 && *gamma <= 1.0) => {
                Err(OptimizerError::Space(format!(
                    "gamma {gamma} outside (0, 1]"
                )))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub params: Vec<f64>,
    /// `−∞` when the objective was not finite.
    #[serde(with = "crate::metrics::inf_as_string")]
    pub value: f64,
    pub probe: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub best: Vec<f64>,
    pub best_value: f64,
    pub trials: Vec<Trial>,
}

impl OptimizationResult {
    /// Running maximum of the objective.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::NEG_INFINITY;
        self.trials
            .iter()
            .map(|t| {
                best = best.max(t.value);
                best
            })
            .collect()
    }
}

/// Tabular audit file: `index,probe,value,<dim names…>`.
pub fn write_trial_history<W: std::io::Write>(
    space: &SearchSpace,
    trials: &[Trial],
    writer: W,
) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["index".to_string(), "probe".into(), "value".into()];
    header.extend(space.dims().iter().map(|d| d.name.clone()));
    wtr.write_record(&header)?;
    for t in trials {
        let mut row = vec![
            t.index.to_string(),
            t.probe.to_string(),
            t.value.to_string(),
        ];
        row.extend(t.params.iter().map(|v| v.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoConfig {
    pub budget: usize,
    pub seed: u64,
    pub candidates: usize,
    /// Candidates that get local refinement.
    pub refine_top: usize,
    pub refine_steps: usize,
    pub restarts: usize,
    /// Exploration margin in standardized objective units.
    pub xi: f64,
    /// Std of local candidate perturbations, in unit-cube coordinates.
    pub local_scale: f64,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            seed: 0,
            candidates: 1024,
            refine_top: 4,
            refine_steps: 40,
            restarts: 4,
            xi: 0.01,
            local_scale: 0.15,
        }
    }
}

/// Maximizes `objective` over `space`: probes first, then EI proposals
/// from a GP fit to the finite observations so far.
pub fn optimize<F, E>(
    space: &SearchSpace,
    mut objective: F,
    probes: &[Vec<f64>],
    cfg: &BoConfig,
) -> Result<OptimizationResult, OptimizerError>
where
    F: FnMut(&[f64]) -> Result<f64, E>,
    E: std::fmt::Display,
{
    if cfg.budget == 0 {
        return Err(OptimizerError::Budget);
    }
    for p in probes {
        if p.len() != space.len() {
            return Err(OptimizerError::Dimension {
                expected: space.len(),
                got: p.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trials: Vec<Trial> = Vec::with_capacity(cfg.budget);
    let mut eval =
        |x: Vec<f64>, probe: bool, trials: &mut Vec<Trial>| -> Result<(), OptimizerError> {
            let v = objective(&x).map_err(|e| OptimizerError::Objective(e.to_string()))?;
            let value = if v.is_finite() { v } else { f64::NEG_INFINITY };
            trials.push(Trial {
                index: trials.len(),
                params: x,
                value,
                probe,
            });
            Ok(())
        };

    // a budget below the probe count evaluates the leading probes only
    for p in probes.iter().take(cfg.budget) {
        eval(p.clone(), true, &mut trials)?;
    }
    while trials.len() < cfg.budget {
        let finite: Vec<&Trial> = trials.iter().filter(|t| t.value.is_finite()).collect();
        let u = if finite.len() < 2 {
            (0..space.len()).map(|_| rng.gen::<f64>()).collect()
        } else {
            let xs: Vec<Vec<f64>> = finite.iter().map(|t| space.to_unit(&t.params)).collect();
            let ys: Vec<f64> = finite.iter().map(|t| t.value).collect();
            let gp = GaussianProcess::fit_hyper(&xs, &ys, cfg.restarts, &mut rng)?;
            propose(&gp, space.len(), cfg, &mut rng)
        };
        eval(space.from_unit(&u), false, &mut trials)?;
    }

    let best = trials
        .iter()
        .fold(None::<&Trial>, |acc, t| match acc {
            Some(b) if b.value >= t.value => Some(b),
            _ => Some(t),
        })
        .expect("budget ≥ 1");
    Ok(OptimizationResult {
        best: best.params.clone(),
        best_value: best.value,
        trials,
    })
}

fn expected_improvement(
    gp: &GaussianProcess,
    u: &[f64],
    best: f64,
    xi: f64,
    normal: &Normal,
) -> f64 {
    let (mu, var) = gp.predict(u);
    let sigma = var.max(0.0).sqrt();
    if sigma < 1e-12 {
        return (mu - best - xi).max(0.0);
    }
    let z = (mu - best - xi) / sigma;
    (mu - best - xi) * normal.cdf(z) + sigma * normal.pdf(z)
}

fn propose(gp: &GaussianProcess, dim: usize, cfg: &BoConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let best = gp.y_std.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ei = |u: &[f64]| expected_improvement(gp, u, best, cfg.xi, &normal);
    // half uniform, half perturbations of the best observed points on a
    // few coordinates each; pure uniform sampling is too sparse at ~20 dims
    let mut ranked: Vec<usize> = (0..gp.xs.len()).collect();
    ranked.sort_by(|&a, &b| gp.y_std[b].total_cmp(&gp.y_std[a]));
    ranked.truncate(3);
    let flip = (4.0 / dim as f64).min(1.0);
    let total = cfg.candidates.max(1);
    let mut scored: Vec<(f64, Vec<f64>)> = (0..total)
        .map(|i| {
            let u: Vec<f64> = if i < total / 2 {
                (0..dim).map(|_| rng.gen()).collect()
            } else {
                let centre = &gp.xs[ranked[rng.gen_range(0..ranked.len())]];
                let sd = cfg.local_scale;
                centre
                    .iter()
                    .map(|&c| {
                        if rng.gen::<f64>() < flip {
                            (c + sd * normal.sample(rng)).clamp(0.0, 1.0)
                        } else {
                            c
                        }
                    })
                    .collect()
            };
            (ei(&u), u)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    scored.truncate(cfg.refine_top.max(1));
    let mut champion = scored[0].clone();
    for (mut score, mut u) in scored {
        let mut step = 0.1;
        for _ in 0..cfg.refine_steps {
            let cand: Vec<f64> = u
                .iter()
                .map(|&x| (x + step * (2.0 * rng.gen::<f64>() - 1.0)).clamp(0.0, 1.0))
                .collect();
            let s = ei(&cand);
            if s > score {
                score = s;
                u = cand;
            } else {
                step *= 0.85;
            }
        }
        if score > champion.0 {
            champion = (score, u);
        }
    }
    champion.1
}

/// Zero-mean GP with a squared-exponential ARD kernel on standardized
/// targets.
#[derive(Debug, Clone)]
pub struct GaussianProcess {
    xs: Vec<Vec<f64>>,
    y_std: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    length_scales: Vec<f64>,
    signal_var: f64,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
}

impl GaussianProcess {
    /// Fits with fixed hyperparameters.
    pub fn fit(
        xs: &[Vec<f64>],
        ys: &[f64],
        length_scales: Vec<f64>,
        signal_var: f64,
    ) -> Result<Self, OptimizerError> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(OptimizerError::Empty);
        }
        let n = ys.len() as f64;
        let y_mean = ys.iter().sum::<f64>() / n;
        let sd = (ys.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n).sqrt();
        let y_scale = if sd > 0.0 { sd } else { 1.0 };
        let y_std: Vec<f64> = ys.iter().map(|y| (y - y_mean) / y_scale).collect();
        Self::build(
            xs.to_vec(),
            y_std,
            y_mean,
            y_scale,
            length_scales,
            signal_var,
        )
        .ok_or_else(|| OptimizerError::Space("kernel matrix is not positive definite".into()))
    }

    fn build(
        xs: Vec<Vec<f64>>,
        y_std: Vec<f64>,
        y_mean: f64,
        y_scale: f64,
        length_scales: Vec<f64>,
        signal_var: f64,
    ) -> Option<Self> {
        let n = xs.len();
        let k = |a: &[f64], b: &[f64]| kernel(a, b, &length_scales, signal_var);
        let base = DMatrix::from_fn(n, n, |i, j| k(&xs[i], &xs[j]));
        // escalate jitter only when the nominal value fails
        let mut jitter = JITTER;
        let chol = loop {
            let m = &base + DMatrix::identity(n, n) * (jitter * signal_var.max(1.0));
            if let Some(c) = m.cholesky() {
                break c;
            }
            jitter *= 10.0;
            if jitter > 1e-2 {
                return None;
            }
        };
        let alpha = chol.solve(&DVector::from_vec(y_std.clone()));
        let l = chol.l();
        Some(Self {
            xs,
            y_std,
            y_mean,
            y_scale,
            length_scales,
            signal_var,
            chol: l,
            alpha,
        })
    }

    /// Hyperparameters by multi-start compass search on the log marginal
    /// likelihood, in log space.
    pub fn fit_hyper(
        xs: &[Vec<f64>],
        ys: &[f64],
        restarts: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, OptimizerError> {
        let dim = xs.first().map_or(0, |x| x.len());
        let template = Self::fit(xs, ys, vec![0.5; dim], 1.0)?;
        let (lo, hi) = ((0.01f64).ln(), (10.0f64).ln());
        let objective = |theta: &[f64]| -> f64 {
            let ls: Vec<f64> = theta[..dim].iter().map(|t| t.exp()).collect();
            Self::build(
                template.xs.clone(),
                template.y_std.clone(),
                template.y_mean,
                template.y_scale,
                ls,
                theta[dim].exp(),
            )
            .map_or(f64::NEG_INFINITY, |g| g.log_marginal_likelihood())
        };
        let mut best_theta: Vec<f64> = vec![(0.5f64).ln(); dim];
        best_theta.push(0.0);
        let mut best = objective(&best_theta);
        for r in 0..restarts.max(1) {
            let mut theta: Vec<f64> = if r == 0 {
                best_theta.clone()
            } else {
                let mut t: Vec<f64> = (0..dim).map(|_| rng.gen_range(lo..hi)).collect();
                t.push(rng.gen_range(-1.0..1.0));
                t
            };
            let mut val = objective(&theta);
            let mut step = 1.0;
            while step > 0.05 {
                let mut improved = false;
                for i in 0..theta.len() {
                    for dir in [1.0, -1.0] {
                        let mut cand = theta.clone();
                        let (a, b) = if i < dim { (lo, hi) } else { (-3.0, 3.0) };
                        cand[i] = (cand[i] + dir * step).clamp(a, b);
                        let v = objective(&cand);
                        if v > val {
                            val = v;
                            theta = cand;
                            improved = true;
                        }
                    }
                }
                if !improved {
                    step *= 0.5;
                }
            }
            if val > best {
                best = val;
                best_theta = theta;
            }
        }
        let ls: Vec<f64> = best_theta[..dim].iter().map(|t| t.exp()).collect();
        match Self::build(
            template.xs.clone(),
            template.y_std.clone(),
            template.y_mean,
            template.y_scale,
            ls,
            best_theta[dim].exp(),
        ) {
            Some(gp) => Ok(gp),
            None => Ok(template),
        }
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let y = DVector::from_vec(self.y_std.clone());
        let n = self.y_std.len() as f64;
        let log_det: f64 = (0..self.chol.nrows()).map(|i| self.chol[(i, i)].ln()).sum();
        -0.5 * y.dot(&self.alpha) - log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }

    /// Posterior mean and variance in standardized units.
    fn predict_std(&self, u: &[f64]) -> (f64, f64) {
        let ks = DVector::from_iterator(
            self.xs.len(),
            self.xs
                .iter()
                .map(|x| kernel(x, u, &self.length_scales, self.signal_var)),
        );
        let mean = ks.dot(&self.alpha);
        let v = self
            .chol
            .solve_lower_triangular(&ks)
            .expect("triangular factor is non-singular");
        (mean, self.signal_var - v.dot(&v))
    }

    /// Standardized posterior (used by the acquisition).
    pub fn predict(&self, u: &[f64]) -> (f64, f64) {
        self.predict_std(u)
    }

    /// Posterior mean and variance in objective units.
    pub fn predict_raw(&self, u: &[f64]) -> (f64, f64) {
        let (m, v) = self.predict_std(u);
        (
            self.y_mean + self.y_scale * m,
            v * self.y_scale * self.y_scale,
        )
    }

    pub fn length_scales(&self) -> &[f64] {
        &self.length_scales
    }
}

fn kernel(a: &[f64], b: &[f64], ls: &[f64], signal_var: f64) -> f64 {
    let d2: f64 = a
        .iter()
        .zip(b)
        .zip(ls)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum();
    signal_var * (-0.5 * d2).exp()
}

/// Thresholds and directives of `params` checked against a space.
pub fn params_in_bounds(space: &SketchSpace, params: &SketchParams) -> bool {
    space
        .encode(params)
        .map(|x| space.space().contains(&x))
        .unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::default_template;
    use proptest::prelude::{prop, prop_assert, proptest, ProptestConfig};
    use std::convert::Infallible;

    fn unit_space(n: usize) -> SearchSpace {
        SearchSpace::new(
            (0..n)
                .map(|i| Dimension {
                    name: format!("x{i}"),
                    lo: 0.0,
                    hi: 1.0,
                    scale: Scale::Linear,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn degenerate_space() {
        let s = SearchSpace::new(vec![Dimension {
            name: "c".into(),
            lo: 2.5,
            hi: 2.5,
            scale: Scale::Linear,
        }])
        .unwrap();
        let cfg = BoConfig {
            budget: 1,
            ..BoConfig::default()
        };
        let r = optimize(&s, |x| Ok::<_, Infallible>(-x[0]), &[], &cfg).unwrap();
        assert_eq!(r.best, vec![2.5]);
        assert_eq!(r.trials.len(), 1);
    }

    #[test]
    fn finds_quadratic_optimum() {
        let s = unit_space(1);
        let cfg = BoConfig {
            budget: 20,
            seed: 42,
            ..BoConfig::default()
        };
        let f = |x: f64| -(x - 0.3) * (x - 0.3);
        let grid_best =
            (0..=10_000)
                .map(|i| i as f64 / 1e4)
                .fold(0.0, |b, x| if f(x) > f(b) { x } else { b });
        assert!((grid_best - 0.3).abs() < 1e-9);
        let r = optimize(&s, |x| Ok::<_, Infallible>(f(x[0])), &[vec![0.5]], &cfg).unwrap();
        assert!((r.best[0] - 0.3).abs() <= 0.05, "best {:?}", r.best);
        assert_eq!(r.trials.len(), 20);
    }

    #[test]
    fn same_seed_same_history() {
        let s = unit_space(3);
        let cfg = BoConfig {
            budget: 8,
            seed: 9,
            ..BoConfig::default()
        };
        let f =
            |x: &[f64]| Ok::<_, Infallible>(-(x[0] - 0.2).powi(2) - (x[1] - 0.7).powi(2) + x[2]);
        let a = optimize(&s, f, &[], &cfg).unwrap();
        let b = optimize(&s, f, &[], &cfg).unwrap();
        assert_eq!(a.trials, b.trials);
    }

    #[test]
    fn non_finite_objective_is_recorded_and_skipped() {
        let s = unit_space(1);
        let cfg = BoConfig {
            budget: 6,
            seed: 1,
            ..BoConfig::default()
        };
        let r = optimize(
            &s,
            |x| Ok::<_, Infallible>(if x[0] < 0.5 { f64::NAN } else { x[0] }),
            &[vec![0.25], vec![0.75]],
            &cfg,
        )
        .unwrap();
        assert_eq!(r.trials[0].value, f64::NEG_INFINITY);
        assert!(r.best_value >= 0.75);
    }

    #[test]
    fn budget_counts_exact_evaluations() {
        let s = unit_space(2);
        let mut calls = 0;
        let cfg = BoConfig {
            budget: 7,
            ..BoConfig::default()
        };
        optimize(
            &s,
            |x| {
                calls += 1;
                Ok::<_, Infallible>(x[0])
            },
            &[vec![0.1, 0.1]],
            &cfg,
        )
        .unwrap();
        assert_eq!(calls, 7);
        let short = optimize(
            &s,
            |x| Ok::<_, Infallible>(x[0]),
            &[vec![0.2, 0.0], vec![0.9, 0.0]],
            &BoConfig {
                budget: 1,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_eq!(short.trials.len(), 1);
        assert_eq!(short.best, vec![0.2, 0.0]);
        assert!(matches!(
            optimize(
                &s,
                |_| Ok::<_, Infallible>(0.0),
                &[],
                &BoConfig { budget: 0, ..cfg }
            ),
            Err(OptimizerError::Budget)
        ));
    }

    #[test]
    fn gp_interpolates_observations() {
        let xs = vec![vec![0.1], vec![0.5], vec![0.9]];
        let ys = vec![1.0, -2.0, 0.5];
        let gp = GaussianProcess::fit(&xs, &ys, vec![0.3], 1.0).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert!((gp.predict_raw(x).0 - y).abs() <= 1e-6);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gp = GaussianProcess::fit_hyper(&xs, &ys, 3, &mut rng).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert!((gp.predict_raw(x).0 - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn probe_counts_and_bounds() {
        let single = default_template(SketchMode::SingleModel).unwrap();
        let ens = default_template(SketchMode::Ensemble { k: 3 }).unwrap();
        let bounds = vec![(0.0, 1.0); 8];
        let s1 = SketchSpace::new(&single, &bounds, DEFAULT_TEMPERATURE_BOUNDS).unwrap();
        let s3 = SketchSpace::new(&ens, &bounds, DEFAULT_TEMPERATURE_BOUNDS).unwrap();
        assert_eq!(s1.probes().len(), 1);
        assert_eq!(s3.probes().len(), 4);
        assert_eq!(s1.space().len(), 13);
        assert_eq!(s3.space().len(), 8 + 5 * 2);
        for p in s1.probes().iter().chain(&s3.probes()) {
            assert!(s1.space().contains(p) || s3.space().contains(p));
        }
        // probes decode to the exact identity and one-hot params
        let mid = s3.threshold_midpoints();
        let decoded: Vec<SketchParams> =
            s3.probes().iter().map(|x| s3.decode(x).unwrap()).collect();
        assert_eq!(decoded, probe_set(&ens, mid));
        assert_eq!(
            s1.decode(&s1.probes()[0]).unwrap(),
            SketchParams::identity(&single, s1.threshold_midpoints())
        );
    }

    #[test]
    fn percentile_matches_interpolation() {
        let v: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        assert_eq!(percentile(&v, 1.0), Some(1.0));
        assert_eq!(percentile(&v, 99.0), Some(99.0));
        assert_eq!(percentile(&[3.0, 1.0], 50.0), Some(2.0));
        assert_eq!(percentile(&[], 50.0), None);
    }

    proptest! {
        #[test]
        fn stick_breaking_round_trip(raw in prop::collection::vec(0.001f64..1.0, 2..6)) {
            let s: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|x| x / s).collect();
            let back = unstick(&stick(&w));
            for (a, b) in w.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn decoded_points_are_valid(u in prop::collection::vec(0.0f64..=1.0, 18)) {
            let ens = default_template(SketchMode::Ensemble { k: 3 }).unwrap();
            let s = SketchSpace::new(&ens, &[(-1.0, 2.0); 8], DEFAULT_TEMPERATURE_BOUNDS).unwrap();
            let p = s.decode(&s.space().from_unit(&u)).unwrap();
            prop_assert!(p.validate(&ens).is_ok());
            prop_assert!(params_in_bounds(&s, &p));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn best_so_far_is_monotone(seed in 0u64..50) {
            let s = unit_space(2);
            let cfg = BoConfig { budget: 6, seed, candidates: 64, ..BoConfig::default() };
            let r = optimize(&s, |x| Ok::<_, Infallible>((7.0 * x[0]).sin() + x[1]), &[], &cfg).unwrap();
            let b = r.best_so_far();
            prop_assert!(b.windows(2).all(|w| w[1] >= w[0]));
            prop_assert!(*b.last().unwrap() == r.best_value);
        }
    }
}
