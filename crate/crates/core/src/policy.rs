//! Frozen policies and the two post-hoc tuning functions.
//!
//! A [`FrozenPolicy`] maps an [`Observation`] to logits and is never
//! modified here. [`temperature_tune`] rescales a single policy's logits by a
//! softmax temperature; [`ensemble_tune`] mixes the distributions of several
//! sub-policies with simplex weights. [`TunedPolicy`] wires either one to a
//! filled sketch so the directive changes with the detected market trend.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::indicators::MarketFeatures;
use crate::sketch::{
    self, Directive, SketchError, SketchMode, SketchParams, SketchTemplate, TrendLabel,
};

/// Tolerance on `Σ probs = 1`.
pub const PROB_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("mixture weights sum to {0}, expected 1")]
    Normalization(f64),
    #[error("format error: {0}")]
    Format(String),
    #[error("no logits stored for state `{0}`")]
    MissingState(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("environment error: {0}")]
    Env(String),
    #[error(transparent)]
    Sketch(#[from] SketchError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    probs: Vec<f64>,
}

impl ActionDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, PolicyError> {
        if probs.len() < 2 {
            return Err(PolicyError::Domain(format!(
                "need at least 2 actions, got {}",
                probs.len()
            )));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(PolicyError::Domain(
                "probabilities must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(PolicyError::Domain(format!("probabilities sum to {sum}")));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Lowest index among the most probable actions.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    }

    /// Inverse-CDF sample for a uniform draw `u ∈ [0, 1)`. Feeding the same
    /// `u` to nearby distributions yields nearby actions.
    pub fn sample_with(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.probs
            .iter()
            .rposition(|&p| p > 0.0)
            .unwrap_or(self.probs.len() - 1)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.sample_with(rng.gen::<f64>())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyLogits(pub Vec<f64>);

/// Deterministic join key between environments and stored policy outputs.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StateKey(pub String);

impl StateKey {
    pub fn trade(asset: &str, timestamp: i64) -> Self {
        Self(format!("trade/{asset}/{timestamp}"))
    }

    pub fn order(order_id: &str, step: usize) -> Self {
        Self(format!("order/{order_id}/{step}"))
    }
}

impl fmt::Display for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// What a policy sees at one decision point.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub key: StateKey,
    pub features: Vec<f64>,
}

pub trait FrozenPolicy: Send + Sync + fmt::Debug {
    fn id(&self) -> &str;
    fn action_count(&self) -> usize;
    fn logits(&self, obs: &Observation) -> Result<PolicyLogits, PolicyError>;
}

/// Logits are an affine function of the observation features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPolicy {
    pub id: String,
    /// One row of feature weights per action.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl LinearPolicy {
    /// State-independent policy with the given logits.
    pub fn constant(id: impl Into<String>, logits: Vec<f64>, feature_dim: usize) -> Self {
        Self {
            id: id.into(),
            weights: vec![vec![0.0; feature_dim]; logits.len()],
            bias: logits,
        }
    }

    fn raw_logits(&self, features: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(features).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }
}

impl FrozenPolicy for LinearPolicy {
    fn id(&self) -> &str {
        &self.id
    }

    fn action_count(&self) -> usize {
        self.bias.len()
    }

    fn logits(&self, obs: &Observation) -> Result<PolicyLogits, PolicyError> {
        let dim = self.weights.first().map_or(0, Vec::len);
        if obs.features.len() != dim {
            return Err(PolicyError::Domain(format!(
                "policy `{}` expects {dim} features, observation has {}",
                self.id,
                obs.features.len()
            )));
        }
        Ok(PolicyLogits(self.raw_logits(&obs.features)))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LogitRecord {
    key: String,
    logits: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LogitFile {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    action_count: Option<usize>,
    records: Vec<LogitRecord>,
}

/// Replays logits produced elsewhere, keyed by [`StateKey`].
#[derive(Debug, Clone, PartialEq)]
pub struct TablePolicy {
    id: String,
    action_count: usize,
    table: BTreeMap<StateKey, Vec<f64>>,
}

impl TablePolicy {
    pub fn new(
        id: impl Into<String>,
        table: BTreeMap<StateKey, Vec<f64>>,
    ) -> Result<Self, PolicyError> {
        let mut lens = table.values().map(Vec::len);
        let m = lens
            .next()
            .ok_or_else(|| PolicyError::Format("no records".into()))?;
        Self::checked(id.into(), m, table)
    }

    fn checked(
        id: String,
        m: usize,
        table: BTreeMap<StateKey, Vec<f64>>,
    ) -> Result<Self, PolicyError> {
        if m < 2 {
            return Err(PolicyError::Format(format!(
                "action count must be ≥ 2, got {m}"
            )));
        }
        for (k, v) in &table {
            if v.len() != m {
                return Err(PolicyError::Format(format!(
                    "state `{k}` has {} logits, expected {m}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(PolicyError::Format(format!(
                    "state `{k}` has non-finite logits"
                )));
            }
        }
        Ok(Self {
            id,
            action_count: m,
            table,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let file: LogitFile =
            serde_json::from_str(text).map_err(|e| PolicyError::Format(e.to_string()))?;
        let m = match (file.action_count, file.records.first()) {
            (Some(m), _) => m,
            (None, Some(r)) => r.logits.len(),
            (None, None) => return Err(PolicyError::Format("no records".into())),
        };
        let mut table = BTreeMap::new();
        for r in file.records {
            if r.logits.len() != m {
                return Err(PolicyError::Format(format!(
                    "ragged logits: state `{}` has {} values, expected {m}",
                    r.key,
                    r.logits.len()
                )));
            }
            if table.insert(StateKey(r.key.clone()), r.logits).is_some() {
                return Err(PolicyError::Format(format!("duplicate state `{}`", r.key)));
            }
        }
        Self::checked(file.id, m, table)
    }

    pub fn to_json(&self) -> String {
        let file = LogitFile {
            id: self.id.clone(),
            action_count: Some(self.action_count),
            records: self
                .table
                .iter()
                .map(|(k, v)| LogitRecord {
                    key: k.0.clone(),
                    logits: v.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("finite logits serialize")
    }

    pub fn export(&self, path: &Path) -> Result<(), PolicyError> {
        std::fs::write(path, self.to_json()).map_err(|e| PolicyError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Records `policy`'s logits at every observation into a table.
    pub fn record<'a>(
        id: impl Into<String>,
        policy: &dyn FrozenPolicy,
        observations: impl IntoIterator<Item = &'a Observation>,
    ) -> Result<Self, PolicyError> {
        let mut table = BTreeMap::new();
        for obs in observations {
            table.insert(obs.key.clone(), policy.logits(obs)?.0);
        }
        Self::checked(id.into(), policy.action_count(), table)
    }
}

impl FrozenPolicy for TablePolicy {
    fn id(&self) -> &str {
        &self.id
    }

    fn action_count(&self) -> usize {
        self.action_count
    }

    fn logits(&self, obs: &Observation) -> Result<PolicyLogits, PolicyError> {
        self.table
            .get(&obs.key)
            .map(|v| PolicyLogits(v.clone()))
            .ok_or_else(|| PolicyError::MissingState(obs.key.0.clone()))
    }
}

pub fn load_external_policy(path: &Path) -> Result<TablePolicy, PolicyError> {
    let text = std::fs::read_to_string(path).map_err(|e| PolicyError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    TablePolicy::from_json(&text)
}

/// Softmax of `logits / phi`, with the maximum subtracted first.
pub fn temperature_tune(
    logits: &PolicyLogits,
    phi: f64,
) -> Result<ActionDistribution, PolicyError> {
    if !(phi.is_finite() && phi > 0.0) {
        return Err(PolicyError::Domain(format!(
            "temperature must be positive, got {phi}"
        )));
    }
    if logits.0.iter().any(|x| !x.is_finite()) {
        return Err(PolicyError::Domain("non-finite logit".into()));
    }
    if logits.0.len() < 2 {
        return Err(PolicyError::Domain(format!(
            "need at least 2 actions, got {}",
            logits.0.len()
        )));
    }
    let scaled: Vec<f64> = logits.0.iter().map(|x| x / phi).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(ActionDistribution {
        probs: exps.into_iter().map(|e| e / z).collect(),
    })
}

pub fn softmax(logits: &PolicyLogits) -> Result<ActionDistribution, PolicyError> {
    temperature_tune(logits, 1.0)
}

/// Convex combination `Σ wᵢ · distᵢ`.
pub fn mix(
    dists: &[ActionDistribution],
    weights: &[f64],
) -> Result<ActionDistribution, PolicyError> {
    if dists.len() != weights.len() {
        return Err(PolicyError::Config(format!(
            "{} distributions but {} weights",
            dists.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(PolicyError::Domain(
            "mixture weights must be non-negative".into(),
        ));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > sketch::WEIGHT_SUM_TOLERANCE {
        return Err(PolicyError::Normalization(sum));
    }
    let m = dists.first().map_or(0, ActionDistribution::len);
    if dists.iter().any(|d| d.len() != m) {
        return Err(PolicyError::Config(
            "sub-policies disagree on the action count".into(),
        ));
    }
    // weights may be off by up to the tolerance; project them onto the simplex
    let mut probs = vec![0.0; m];
    for (d, &w) in dists.iter().zip(weights) {
        let w = w / sum;
        for (acc, p) in probs.iter_mut().zip(d.probs()) {
            *acc += w * p;
        }
    }
    ActionDistribution::new(probs)
}

/// `k ≥ 2` frozen policies sharing one action set.
#[derive(Debug, Clone)]
pub struct EnsemblePolicy {
    members: Vec<Arc<dyn FrozenPolicy>>,
}

impl EnsemblePolicy {
    pub fn new(members: Vec<Arc<dyn FrozenPolicy>>) -> Result<Self, PolicyError> {
        if members.len() < 2 {
            return Err(PolicyError::Config(format!(
                "ensemble needs at least 2 sub-policies, got {}",
                members.len()
            )));
        }
        let m = members[0].action_count();
        if let Some(p) = members.iter().find(|p| p.action_count() != m) {
            return Err(PolicyError::Config(format!(
                "sub-policy `{}` has {} actions, expected {m}",
                p.id(),
                p.action_count()
            )));
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[Arc<dyn FrozenPolicy>] {
        &self.members
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn action_count(&self) -> usize {
        self.members[0].action_count()
    }

    pub fn distributions(&self, obs: &Observation) -> Result<Vec<ActionDistribution>, PolicyError> {
        self.members
            .iter()
            .map(|p| softmax(&p.logits(obs)?))
            .collect()
    }
}

pub fn ensemble_tune(
    policies: &EnsemblePolicy,
    weights: &[f64],
    obs: &Observation,
) -> Result<ActionDistribution, PolicyError> {
    if weights.len() != policies.k() {
        return Err(PolicyError::Config(format!(
            "{} weights for {} sub-policies",
            weights.len(),
            policies.k()
        )));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > sketch::WEIGHT_SUM_TOLERANCE {
        return Err(PolicyError::Normalization(sum));
    }
    mix(&policies.distributions(obs)?, weights)
}

/// The action distribution chosen at one step and the trend behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub trend: Option<TrendLabel>,
    pub dist: ActionDistribution,
}

/// Anything an environment can roll out.
pub trait DecisionPolicy: Send + Sync {
    fn action_count(&self) -> usize;
    fn decide(
        &self,
        obs: &Observation,
        market: Option<&MarketFeatures>,
    ) -> Result<Decision, PolicyError>;
}

/// An untuned policy: plain softmax, or the uniform mixture for an ensemble.
#[derive(Debug, Clone)]
pub enum BasePolicy {
    Single(Arc<dyn FrozenPolicy>),
    Ensemble(EnsemblePolicy),
}

impl BasePolicy {
    pub fn mode(&self) -> SketchMode {
        match self {
            BasePolicy::Single(_) => SketchMode::SingleModel,
            BasePolicy::Ensemble(e) => SketchMode::Ensemble { k: e.k() },
        }
    }

    /// Wraps a list: one policy is single-model, more form an ensemble.
    pub fn from_members(mut members: Vec<Arc<dyn FrozenPolicy>>) -> Result<Self, PolicyError> {
        match members.len() {
            0 => Err(PolicyError::Config("no policies supplied".into())),
            1 => Ok(BasePolicy::Single(members.remove(0))),
            _ => Ok(BasePolicy::Ensemble(EnsemblePolicy::new(members)?)),
        }
    }
}

impl DecisionPolicy for BasePolicy {
    fn action_count(&self) -> usize {
        match self {
            BasePolicy::Single(p) => p.action_count(),
            BasePolicy::Ensemble(e) => e.action_count(),
        }
    }

    fn decide(
        &self,
        obs: &Observation,
        _market: Option<&MarketFeatures>,
    ) -> Result<Decision, PolicyError> {
        let dist = match self {
            BasePolicy::Single(p) => softmax(&p.logits(obs)?)?,
            BasePolicy::Ensemble(e) => {
                let k = e.k();
                ensemble_tune(e, &vec![1.0 / k as f64; k], obs)?
            }
        };
        Ok(Decision { trend: None, dist })
    }
}

/// A frozen base whose output is reshaped by the sketch's per-trend
/// directive at every step.
#[derive(Debug, Clone)]
pub struct TunedPolicy {
    base: BasePolicy,
    template: SketchTemplate,
    params: SketchParams,
}

impl TunedPolicy {
    pub fn new(
        base: BasePolicy,
        template: SketchTemplate,
        params: SketchParams,
    ) -> Result<Self, PolicyError> {
        if base.mode() != template.mode() {
            return Err(PolicyError::Config(format!(
                "template mode {:?} does not match base policy mode {:?}",
                template.mode(),
                base.mode()
            )));
        }
        params.validate(&template)?;
        Ok(Self {
            base,
            template,
            params,
        })
    }

    pub fn base(&self) -> &BasePolicy {
        &self.base
    }

    pub fn template(&self) -> &SketchTemplate {
        &self.template
    }

    pub fn params(&self) -> &SketchParams {
        &self.params
    }
}

impl DecisionPolicy for TunedPolicy {
    fn action_count(&self) -> usize {
        self.base.action_count()
    }

    fn decide(
        &self,
        obs: &Observation,
        market: Option<&MarketFeatures>,
    ) -> Result<Decision, PolicyError> {
        let market = market
            .ok_or_else(|| PolicyError::Config("tuned policy needs market features".into()))?;
        let directive = sketch::interpret_unchecked(&self.template, &self.params, market);
        let dist = match (&self.base, &directive.payload) {
            (BasePolicy::Single(p), Directive::Temperature(phi)) => {
                temperature_tune(&p.logits(obs)?, *phi)?
            }
            (BasePolicy::Ensemble(e), Directive::Weights(w)) => ensemble_tune(e, w, obs)?,
            _ => unreachable!("mode checked at construction"),
        };
        Ok(Decision {
            trend: Some(directive.trend),
            dist,
        })
    }
}

pub fn tuned_policy(
    base: BasePolicy,
    template: SketchTemplate,
    params: SketchParams,
) -> Result<TunedPolicy, PolicyError> {
    TunedPolicy::new(base, template, params)
}

/// Minimal episodic interface used by the toy trainer.
pub trait EpisodicEnv {
    type Error: fmt::Display;

    fn action_count(&self) -> usize;
    fn feature_dim(&self) -> usize;
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, Self::Error>;
    /// Reward and the next observation, `None` once the episode ends.
    fn step(&mut self, action: usize) -> Result<(f64, Option<Vec<f64>>), Self::Error>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTrainConfig {
    pub id: String,
    pub episodes: usize,
    pub learning_rate: f64,
    /// Std of the Gaussian initial weights.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self {
            id: "toy".into(),
            episodes: 200,
            learning_rate: 0.01,
            init_scale: 0.01,
            seed: 0,
        }
    }
}

/// Episodic REINFORCE over a linear policy with a per-step running-mean
/// baseline. Deterministic for a given seed.
pub fn train_toy_policy<E: EpisodicEnv>(
    env: &mut E,
    cfg: &ToyTrainConfig,
) -> Result<LinearPolicy, PolicyError> {
    let m = env.action_count();
    let dim = env.feature_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gauss = || {
        // Box-Muller from two uniforms keeps the stream portable
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };
    let mut policy = LinearPolicy {
        id: cfg.id.clone(),
        weights: (0..m)
            .map(|_| (0..dim).map(|_| cfg.init_scale * gauss()).collect())
            .collect(),
        bias: (0..m).map(|_| cfg.init_scale * gauss()).collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut baseline: Vec<(f64, usize)> = Vec::new();
    let env_err = |e: E::Error| PolicyError::Env(e.to_string());

    for _ in 0..cfg.episodes {
        let mut trajectory: Vec<(Vec<f64>, usize, Vec<f64>, f64)> = Vec::new();
        let mut obs = Some(env.reset(&mut rng).map_err(env_err)?);
        while let Some(x) = obs {
            let dist = softmax(&PolicyLogits(policy.raw_logits(&x)))?;
            let a = dist.sample(&mut rng);
            let (r, next) = env.step(a).map_err(env_err)?;
            trajectory.push((x, a, dist.probs, r));
            obs = next;
        }
        let mut to_go = 0.0;
        let mut returns = vec![0.0; trajectory.len()];
        for (i, (_, _, _, r)) in trajectory.iter().enumerate().rev() {
            to_go += r;
            returns[i] = to_go;
        }
        if baseline.len() < trajectory.len() {
            baseline.resize(trajectory.len(), (0.0, 0));
        }
        for (t, ((x, a, probs, _), g)) in trajectory.iter().zip(&returns).enumerate() {
            let (mean, n) = baseline[t];
            let advantage = if n == 0 { 0.0 } else { g - mean };
            baseline[t] = (mean + (g - mean) / (n + 1) as f64, n + 1);
            if cfg.learning_rate == 0.0 || advantage == 0.0 {
                continue;
            }
            for (j, (row, b)) in policy
                .weights
                .iter_mut()
                .zip(policy.bias.iter_mut())
                .enumerate()
            {
                let grad = f64::from(u8::from(j == *a)) - probs[j];
                let step = cfg.learning_rate * advantage * grad;
                *b += step;
                for (w, xi) in row.iter_mut().zip(x) {
                    *w += step * xi;
                }
            }
        }
    }
    Ok(policy)
}
