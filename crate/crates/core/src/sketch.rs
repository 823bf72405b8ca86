//! Market-trend program sketch.
//!
//! A [`SketchTemplate`] is an ordered list of trend conditionals whose
//! thresholds and per-trend directives are holes. [`SketchParams`] fills the
//! holes; [`interpret`] runs the filled program on a [`MarketFeatures`]
//! triple and returns the directive of the first matching trend.
//!
//! Rule files use one rule per line:
//!
//! ```text
//! mode ensemble 3
//! steady_descend <- (vol < ?) & (dr > ?)
//! rapid_descend <- (vol > ?) & (dr > ?)
//! steady_ascend <- (vol < ?) & (gr > ?)
//! rapid_ascend <- (vol > ?) & (gr > ?)
//! else -> oscillation
//! ```
//!
//! Threshold holes are numbered by order of appearance. `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::indicators::MarketFeatures;

/// Tolerance on `Σ weights = 1` for ensemble directives.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum SketchError {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown indicator `{name}` at {line}:{column}")]
    UnknownIndicator {
        line: usize,
        column: usize,
        name: String,
    },
    #[error("unknown trend `{name}` at {line}:{column}")]
    UnknownTrend {
        line: usize,
        column: usize,
        name: String,
    },
    #[error("trend `{trend}` defined twice (line {line})")]
    DuplicateTrend { line: usize, trend: TrendLabel },
    #[error("missing `else -> oscillation` default branch")]
    MissingDefault,
    #[error("trend `{0}` has no rule")]
    MissingTrend(TrendLabel),
    #[error("invalid template: {0}")]
    Template(String),
    #[error("parameterization error: {0}")]
    Parameterization(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parameter file {path}: {message}")]
    ParamFile { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendLabel {
    SteadyDescend,
    SteadyAscend,
    RapidDescend,
    RapidAscend,
    Oscillation,
}

impl TrendLabel {
    pub const ALL: [TrendLabel; 5] = [
        TrendLabel::SteadyDescend,
        TrendLabel::SteadyAscend,
        TrendLabel::RapidDescend,
        TrendLabel::RapidAscend,
        TrendLabel::Oscillation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrendLabel::SteadyDescend => "steady_descend",
            TrendLabel::SteadyAscend => "steady_ascend",
            TrendLabel::RapidDescend => "rapid_descend",
            TrendLabel::RapidAscend => "rapid_ascend",
            TrendLabel::Oscillation => "oscillation",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == name)
    }
}

impl fmt::Display for TrendLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Indicator {
    Vol,
    Dr,
    Gr,
}

impl Indicator {
    pub fn name(self) -> &'static str {
        match self {
            Indicator::Vol => "vol",
            Indicator::Dr => "dr",
            Indicator::Gr => "gr",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        match name {
            "vol" => Some(Indicator::Vol),
            "dr" => Some(Indicator::Dr),
            "gr" => Some(Indicator::Gr),
            _ => None,
        }
    }

    pub fn value(self, f: &MarketFeatures) -> f64 {
        match self {
            Indicator::Vol => f.vol,
            Indicator::Dr => f.dr,
            Indicator::Gr => f.gr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">")]
    Gt,
}

impl Comparator {
    fn symbol(self) -> char {
        match self {
            Comparator::Lt => '<',
            Comparator::Gt => '>',
        }
    }

    /// Strict comparison; equality never satisfies a clause.
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Lt => value < threshold,
            Comparator::Gt => value > threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clause {
    pub indicator: Indicator,
    pub comparator: Comparator,
    /// Index into [`SketchParams::thresholds`].
    pub hole: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conditional {
    pub trend: TrendLabel,
    /// Conjunction; empty only for the oscillation default.
    pub clauses: Vec<Clause>,
    /// Index into [`SketchParams::directives`].
    pub directive_hole: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SketchMode {
    SingleModel,
    Ensemble { k: usize },
}

impl SketchMode {
    /// Scalars per directive hole.
    pub fn directive_width(self) -> usize {
        match self {
            SketchMode::SingleModel => 1,
            SketchMode::Ensemble { k } => k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchTemplate {
    conditionals: Vec<Conditional>,
    mode: SketchMode,
}

impl SketchTemplate {
    /// Checks the structural invariants: every trend exactly once, the
    /// clause-free oscillation default last, dense threshold holes.
    pub fn new(conditionals: Vec<Conditional>, mode: SketchMode) -> Result<Self, SketchError> {
        if let SketchMode::Ensemble { k } = mode {
            if k < 2 {
                return Err(SketchError::Config(format!(
                    "ensemble needs k ≥ 2, got {k}"
                )));
            }
        }
        match conditionals.last() {
            Some(c) if c.trend == TrendLabel::Oscillation && c.clauses.is_empty() => {}
            _ => return Err(SketchError::MissingDefault),
        }
        for trend in TrendLabel::ALL {
            let n = conditionals.iter().filter(|c| c.trend == trend).count();
            if n == 0 {
                return Err(SketchError::MissingTrend(trend));
            }
            if n > 1 {
                return Err(SketchError::Template(format!(
                    "trend `{trend}` appears {n} times"
                )));
            }
        }
        let mut holes = Vec::new();
        for (i, c) in conditionals.iter().enumerate() {
            if c.trend != TrendLabel::Oscillation && c.clauses.is_empty() {
                return Err(SketchError::Template(format!(
                    "trend `{}` has no clauses",
                    c.trend
                )));
            }
            if c.directive_hole != i {
                return Err(SketchError::Template(format!(
                    "directive hole of `{}` is {}, expected {i}",
                    c.trend, c.directive_hole
                )));
            }
            holes.extend(c.clauses.iter().map(|cl| cl.hole));
        }
        let mut sorted = holes.clone();
        sorted.sort_unstable();
        if sorted.iter().enumerate().any(|(i, &h)| i != h) {
            return Err(SketchError::Template(format!(
                "threshold holes {holes:?} are not dense 0..{}",
                holes.len()
            )));
        }
        Ok(Self { conditionals, mode })
    }

    pub fn conditionals(&self) -> &[Conditional] {
        &self.conditionals
    }

    pub fn mode(&self) -> SketchMode {
        self.mode
    }

    pub fn with_mode(&self, mode: SketchMode) -> Result<Self, SketchError> {
        Self::new(self.conditionals.clone(), mode)
    }

    pub fn threshold_count(&self) -> usize {
        self.conditionals.iter().map(|c| c.clauses.len()).sum()
    }

    pub fn directive_count(&self) -> usize {
        self.conditionals.len()
    }

    /// Total scalar holes: thresholds plus every directive component.
    pub fn scalar_count(&self) -> usize {
        self.threshold_count() + self.directive_count() * self.mode.directive_width()
    }

    /// (indicator, comparator) owning each threshold hole, by hole index.
    pub fn threshold_slots(&self) -> Vec<(Indicator, Comparator)> {
        let mut slots = vec![(Indicator::Vol, Comparator::Lt); self.threshold_count()];
        for cl in self.conditionals.iter().flat_map(|c| &c.clauses) {
            slots[cl.hole] = (cl.indicator, cl.comparator);
        }
        slots
    }

    /// Position of the first conditional whose clauses all hold.
    pub fn classify_index(&self, thresholds: &[f64], features: &MarketFeatures) -> usize {
        self.conditionals
            .iter()
            .position(|c| {
                c.clauses.iter().all(|cl| {
                    cl.comparator
                        .holds(cl.indicator.value(features), thresholds[cl.hole])
                })
            })
            .unwrap_or(self.conditionals.len() - 1)
    }

    pub fn classify(&self, thresholds: &[f64], features: &MarketFeatures) -> TrendLabel {
        self.conditionals[self.classify_index(thresholds, features)].trend
    }

    pub fn directive_hole_of(&self, trend: TrendLabel) -> usize {
        self.conditionals
            .iter()
            .position(|c| c.trend == trend)
            .expect("template holds every trend")
    }

    /// Canonical rule-file text.
    pub fn render(&self) -> String {
        let mut out = String::new();
        match self.mode {
            SketchMode::SingleModel => out.push_str("mode single\n"),
            SketchMode::Ensemble { k } => out.push_str(&format!("mode ensemble {k}\n")),
        }
        for c in &self.conditionals {
            if c.trend == TrendLabel::Oscillation {
                out.push_str("else -> oscillation\n");
                continue;
            }
            let clauses: Vec<String> = c
                .clauses
                .iter()
                .map(|cl| format!("({} {} ?)", cl.indicator.name(), cl.comparator.symbol()))
                .collect();
            out.push_str(&format!("{} <- {}\n", c.trend, clauses.join(" & ")));
        }
        out
    }
}

/// The five-trend template: descend rules test downside risk, ascend rules
/// growth rate, and the rapid variants flip the volatility comparator.
pub fn default_template(mode: SketchMode) -> Result<SketchTemplate, SketchError> {
    use Comparator::*;
    use Indicator::*;
    let rule =
        |trend, idx: usize, a: (Indicator, Comparator), b: (Indicator, Comparator)| Conditional {
            trend,
            clauses: vec![
                Clause {
                    indicator: a.0,
                    comparator: a.1,
                    hole: 2 * idx,
                },
                Clause {
                    indicator: b.0,
                    comparator: b.1,
                    hole: 2 * idx + 1,
                },
            ],
            directive_hole: idx,
        };
    SketchTemplate::new(
        vec![
            rule(TrendLabel::SteadyDescend, 0, (Vol, Lt), (Dr, Gt)),
            rule(TrendLabel::RapidDescend, 1, (Vol, Gt), (Dr, Gt)),
            rule(TrendLabel::SteadyAscend, 2, (Vol, Lt), (Gr, Gt)),
            rule(TrendLabel::RapidAscend, 3, (Vol, Gt), (Gr, Gt)),
            Conditional {
                trend: TrendLabel::Oscillation,
                clauses: vec![],
                directive_hole: 4,
            },
        ],
        mode,
    )
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn column(&self) -> usize {
        self.text[..self.pos].chars().count() + 1
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.text[self.pos..].chars().next() {
            if !c.is_whitespace() {
                break;
            }
            self.pos += c.len_utf8();
        }
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos >= self.text.len()
    }

    fn error(&self, message: impl Into<String>) -> SketchError {
        SketchError::Syntax {
            line: self.line,
            column: self.column(),
            message: message.into(),
        }
    }

    fn expect(&mut self, token: &str) -> Result<(), SketchError> {
        self.skip_ws();
        if self.text[self.pos..].starts_with(token) {
            self.pos += token.len();
            Ok(())
        } else {
            let found: String = self.text[self.pos..].chars().take(8).collect();
            Err(self.error(format!("expected `{token}`, found `{found}`")))
        }
    }

    fn ident(&mut self) -> Result<(usize, &'a str), SketchError> {
        self.skip_ws();
        let col = self.column();
        let rest = &self.text[self.pos..];
        let len = rest
            .char_indices()
            .find(|(_, c)| !(c.is_ascii_alphanumeric() || *c == '_'))
            .map(|(i, _)| i)
            .unwrap_or(rest.len());
        if len == 0 {
            return Err(self.error("expected identifier"));
        }
        self.pos += len;
        Ok((col, &rest[..len]))
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.text[self.pos..].chars().next()
    }
}

/// Parses a rule file into a template. Without a `mode` line the template is
/// single-model.
pub fn parse_sketch(text: &str) -> Result<SketchTemplate, SketchError> {
    let mut mode = SketchMode::SingleModel;
    let mut conditionals: Vec<Conditional> = Vec::new();
    let mut seen: BTreeMap<TrendLabel, usize> = BTreeMap::new();
    let mut next_hole = 0usize;
    let mut saw_default = false;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut cur = Cursor {
            text: content,
            pos: 0,
            line: line_no,
        };
        if cur.at_end() {
            continue;
        }
        if saw_default {
            return Err(cur.error("rules after the `else` default branch"));
        }
        let (col, head) = cur.ident()?;
        match head {
            "mode" => {
                if !conditionals.is_empty() {
                    return Err(SketchError::Syntax {
                        line: line_no,
                        column: col,
                        message: "`mode` must precede rules".into(),
                    });
                }
                let (_, kind) = cur.ident()?;
                mode = match kind {
                    "single" => SketchMode::SingleModel,
                    "ensemble" => {
                        let (kcol, k) = cur.ident()?;
                        let k: usize = k.parse().map_err(|_| SketchError::Syntax {
                            line: line_no,
                            column: kcol,
                            message: format!("`{k}` is not a sub-policy count"),
                        })?;
                        SketchMode::Ensemble { k }
                    }
                    other => return Err(cur.error(format!("unknown mode `{other}`"))),
                };
            }
            "else" => {
                cur.expect("->")?;
                let (tcol, name) = cur.ident()?;
                if name != TrendLabel::Oscillation.name() {
                    return Err(SketchError::Syntax {
                        line: line_no,
                        column: tcol,
                        message: format!("default branch must be `oscillation`, found `{name}`"),
                    });
                }
                if seen.contains_key(&TrendLabel::Oscillation) {
                    return Err(SketchError::DuplicateTrend {
                        line: line_no,
                        trend: TrendLabel::Oscillation,
                    });
                }
                seen.insert(TrendLabel::Oscillation, line_no);
                conditionals.push(Conditional {
                    trend: TrendLabel::Oscillation,
                    clauses: vec![],
                    directive_hole: conditionals.len(),
                });
                saw_default = true;
            }
            name => {
                let trend =
                    TrendLabel::from_name(name).ok_or_else(|| SketchError::UnknownTrend {
                        line: line_no,
                        column: col,
                        name: name.to_string(),
                    })?;
                if trend == TrendLabel::Oscillation {
                    return Err(SketchError::Syntax {
                        line: line_no,
                        column: col,
                        message: "oscillation is the default branch; write `else -> oscillation`"
                            .into(),
                    });
                }
                if seen.contains_key(&trend) {
                    return Err(SketchError::DuplicateTrend {
                        line: line_no,
                        trend,
                    });
                }
                seen.insert(trend, line_no);
                cur.expect("<-")?;
                let mut clauses = Vec::new();
                loop {
                    cur.expect("(")?;
                    let (icol, ind) = cur.ident()?;
                    let indicator =
                        Indicator::from_name(ind).ok_or_else(|| SketchError::UnknownIndicator {
                            line: line_no,
                            column: icol,
                            name: ind.to_string(),
                        })?;
                    let comparator = match cur.peek() {
                        Some('<') => Comparator::Lt,
                        Some('>') => Comparator::Gt,
                        _ => return Err(cur.error("expected `<` or `>`")),
                    };
                    cur.pos += 1;
                    cur.expect("?")?;
                    cur.expect(")")?;
                    clauses.push(Clause {
                        indicator,
                        comparator,
                        hole: next_hole,
                    });
                    next_hole += 1;
                    if cur.at_end() {
                        break;
                    }
                    cur.expect("&")?;
                }
                conditionals.push(Conditional {
                    trend,
                    clauses,
                    directive_hole: conditionals.len(),
                });
            }
        }
        if !cur.at_end() {
            return Err(cur.error("unexpected trailing input"));
        }
    }
    if !saw_default {
        return Err(SketchError::MissingDefault);
    }
    SketchTemplate::new(conditionals, mode)
}

/// A filled-in directive hole.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Directive {
    Temperature(f64),
    Weights(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningDirective {
    pub trend: TrendLabel,
    pub payload: Directive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SketchParams {
    pub thresholds: Vec<f64>,
    /// One per conditional, in template order.
    pub directives: Vec<Directive>,
}

impl SketchParams {
    /// Every temperature 1 (single) or every weight vector uniform (ensemble);
    /// thresholds as given.
    pub fn identity(template: &SketchTemplate, thresholds: Vec<f64>) -> Self {
        let d = match template.mode() {
            SketchMode::SingleModel => Directive::Temperature(1.0),
            SketchMode::Ensemble { k } => Directive::Weights(vec![1.0 / k as f64; k]),
        };
        Self {
            thresholds,
            directives: vec![d; template.directive_count()],
        }
    }

    /// Every trend routed to sub-policy `j`.
    pub fn one_hot(
        template: &SketchTemplate,
        thresholds: Vec<f64>,
        j: usize,
    ) -> Result<Self, SketchError> {
        let SketchMode::Ensemble { k } = template.mode() else {
            return Err(SketchError::Config(
                "one-hot weights need an ensemble template".into(),
            ));
        };
        if j >= k {
            return Err(SketchError::Config(format!(
                "sub-policy {j} out of range for k = {k}"
            )));
        }
        let mut w = vec![0.0; k];
        w[j] = 1.0;
        Ok(Self {
            thresholds,
            directives: vec![Directive::Weights(w); template.directive_count()],
        })
    }

    pub fn scalar_count(&self) -> usize {
        self.thresholds.len()
            + self
                .directives
                .iter()
                .map(|d| match d {
                    Directive::Temperature(_) => 1,
                    Directive::Weights(w) => w.len(),
                })
                .sum::<usize>()
    }

    pub fn validate(&self, template: &SketchTemplate) -> Result<(), SketchError> {
        let perr = |m: String| Err(SketchError::Parameterization(m));
        if self.thresholds.len() != template.threshold_count() {
            return perr(format!(
                "template has {} threshold holes, params supply {}",
                template.threshold_count(),
                self.thresholds.len()
            ));
        }
        if self.directives.len() != template.directive_count() {
            return perr(format!(
                "template has {} directive holes, params supply {}",
                template.directive_count(),
                self.directives.len()
            ));
        }
        if let Some(t) = self.thresholds.iter().find(|t| !t.is_finite()) {
            return perr(format!("non-finite threshold {t}"));
        }
        for (c, d) in template.conditionals().iter().zip(&self.directives) {
            match (template.mode(), d) {
                (SketchMode::SingleModel, Directive::Temperature(phi)) => {
                    if !(phi.is_finite() && *phi > 0.0) {
                        return perr(format!(
                            "temperature for `{}` must be positive, got {phi}",
                            c.trend
                        ));
                    }
                }
                (SketchMode::Ensemble { k }, Directive::Weights(w)) => {
                    if w.len() != k {
                        return perr(format!(
                            "`{}` has {} weights, expected {k}",
                            c.trend,
                            w.len()
                        ));
                    }
                    if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                        return perr(format!("`{}` has a negative or non-finite weight", c.trend));
                    }
                    let sum: f64 = w.iter().sum();
                    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
                        return perr(format!("weights for `{}` sum to {sum}", c.trend));
                    }
                }
                (mode, d) => return perr(format!("directive {d:?} does not fit mode {mode:?}")),
            }
        }
        Ok(())
    }

    /// Named scalars: `threshold_<i>`, `phi_<trend>` or `phi_<trend>_<i>`.
    pub fn to_named(&self, template: &SketchTemplate) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for (i, t) in self.thresholds.iter().enumerate() {
            out.insert(format!("threshold_{i}"), *t);
        }
        for (c, d) in template.conditionals().iter().zip(&self.directives) {
            match d {
                Directive::Temperature(phi) => {
                    out.insert(format!("phi_{}", c.trend), *phi);
                }
                Directive::Weights(w) => {
                    for (i, x) in w.iter().enumerate() {
                        out.insert(format!("phi_{}_{i}", c.trend), *x);
                    }
                }
            }
        }
        out
    }

    pub fn from_named(
        template: &SketchTemplate,
        named: &BTreeMap<String, f64>,
    ) -> Result<Self, SketchError> {
        let mut used = 0usize;
        let mut get = |key: String| -> Result<f64, SketchError> {
            used += 1;
            named
                .get(&key)
                .copied()
                .ok_or_else(|| SketchError::Parameterization(format!("missing parameter `{key}`")))
        };
        let thresholds = (0..template.threshold_count())
            .map(|i| get(format!("threshold_{i}")))
            .collect::<Result<Vec<_>, _>>()?;
        let mut directives = Vec::new();
        for c in template.conditionals() {
            directives.push(match template.mode() {
                SketchMode::SingleModel => Directive::Temperature(get(format!("phi_{}", c.trend))?),
                SketchMode::Ensemble { k } => Directive::Weights(
                    (0..k)
                        .map(|i| get(format!("phi_{}_{i}", c.trend)))
                        .collect::<Result<_, _>>()?,
                ),
            });
        }
        if used != named.len() {
            let expected = Self {
                thresholds: thresholds.clone(),
                directives: directives.clone(),
            }
            .to_named(template);
            let extra: Vec<&String> = named
                .keys()
                .filter(|k| !expected.contains_key(*k))
                .collect();
            return Err(SketchError::Parameterization(format!(
                "unexpected parameters {extra:?}"
            )));
        }
        let params = Self {
            thresholds,
            directives,
        };
        params.validate(template)?;
        Ok(params)
    }

    /// JSON object of named scalars, keys sorted.
    pub fn to_json(&self, template: &SketchTemplate) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_named(template))
            .expect("finite scalars serialize");
        s.push('\n');
        s
    }

    pub fn from_json(template: &SketchTemplate, text: &str) -> Result<Self, SketchError> {
        let named: BTreeMap<String, f64> = serde_json::from_str(text).map_err(|e| {
            SketchError::Parameterization(format!("malformed parameter document: {e}"))
        })?;
        Self::from_named(template, &named)
    }

    pub fn write_file(&self, template: &SketchTemplate, path: &Path) -> Result<(), SketchError> {
        std::fs::write(path, self.to_json(template)).map_err(|e| SketchError::ParamFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn read_file(template: &SketchTemplate, path: &Path) -> Result<Self, SketchError> {
        let text = std::fs::read_to_string(path).map_err(|e| SketchError::ParamFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(template, &text)
    }
}

/// Runs the filled sketch: the first conditional whose clauses all hold
/// decides the trend, falling through to oscillation.
pub fn interpret(
    template: &SketchTemplate,
    params: &SketchParams,
    features: &MarketFeatures,
) -> Result<TuningDirective, SketchError> {
    params.validate(template)?;
    Ok(interpret_unchecked(template, params, features))
}

/// [`interpret`] without re-validating `params`; callers validate once.
pub fn interpret_unchecked(
    template: &SketchTemplate,
    params: &SketchParams,
    features: &MarketFeatures,
) -> TuningDirective {
    let idx = template.classify_index(&params.thresholds, features);
    let c = &template.conditionals()[idx];
    TuningDirective {
        trend: c.trend,
        payload: params.directives[c.directive_hole].clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(vol: f64, dr: f64, gr: f64) -> MarketFeatures {
        MarketFeatures {
            vol,
            dr,
            gr,
            t: 0,
            g: 14,
        }
    }

    #[test]
    fn default_budgets() {
        assert_eq!(
            default_template(SketchMode::SingleModel)
                .unwrap()
                .scalar_count(),
            13
        );
        assert_eq!(
            default_template(SketchMode::Ensemble { k: 3 })
                .unwrap()
                .scalar_count(),
            23
        );
        assert_eq!(
            default_template(SketchMode::Ensemble { k: 5 })
                .unwrap()
                .scalar_count(),
            33
        );
        assert!(matches!(
            default_template(SketchMode::Ensemble { k: 1 }),
            Err(SketchError::Config(_))
        ));
    }

    #[test]
    fn interpret_examples() {
        let t = default_template(SketchMode::SingleModel).unwrap();
        let mut p = SketchParams::identity(&t, vec![1.0; 8]);
        for (i, d) in p.directives.iter_mut().enumerate() {
            *d = Directive::Temperature(1.0 + i as f64);
        }
        let r = interpret(&t, &p, &feats(0.5, 0.2, 2.0)).unwrap();
        assert_eq!(r.trend, TrendLabel::SteadyAscend);
        assert_eq!(r.payload, Directive::Temperature(3.0));
        assert_eq!(
            interpret(&t, &p, &feats(0.5, 0.5, 0.5)).unwrap().trend,
            TrendLabel::Oscillation
        );
        assert_eq!(
            interpret(&t, &p, &feats(2.0, 2.0, 2.0)).unwrap().trend,
            TrendLabel::RapidDescend
        );
    }

    #[test]
    fn equality_falls_through() {
        let t = default_template(SketchMode::SingleModel).unwrap();
        let p = SketchParams::identity(&t, vec![1.0; 8]);
        // vol == threshold satisfies neither < nor >
        assert_eq!(
            interpret(&t, &p, &feats(1.0, 5.0, 5.0)).unwrap().trend,
            TrendLabel::Oscillation
        );
    }

    #[test]
    fn hole_count_mismatch() {
        let t = default_template(SketchMode::SingleModel).unwrap();
        let p = SketchParams::identity(&t, vec![1.0; 7]);
        assert!(matches!(
            interpret(&t, &p, &feats(0.0, 0.0, 0.0)),
            Err(SketchError::Parameterization(_))
        ));
        let e = default_template(SketchMode::Ensemble { k: 2 }).unwrap();
        assert!(p.validate(&e).is_err());
    }

    #[test]
    fn ensemble_weights_validated() {
        let t = default_template(SketchMode::Ensemble { k: 2 }).unwrap();
        let mut p = SketchParams::identity(&t, vec![0.0; 8]);
        assert!(p.validate(&t).is_ok());
        p.directives[0] = Directive::Weights(vec![0.7, 0.7]);
        assert!(p.validate(&t).is_err());
        p.directives[0] = Directive::Weights(vec![1.5, -0.5]);
        assert!(p.validate(&t).is_err());
    }

    #[test]
    fn render_parse_round_trip() {
        for mode in [SketchMode::SingleModel, SketchMode::Ensemble { k: 3 }] {
            let t = default_template(mode).unwrap();
            assert_eq!(parse_sketch(&t.render()).unwrap(), t);
        }
    }

    #[test]
    fn parse_with_comments_and_single_clause() {
        let text = "# custom\n\nrapid_descend <- (dr > ?)   # one clause\nsteady_descend <- (vol < ?) & (dr > ?)\nsteady_ascend <- (gr > ?)\nrapid_ascend <- (vol > ?) & (gr > ?) & (dr < ?)\nelse -> oscillation\n";
        let t = parse_sketch(text).unwrap();
        assert_eq!(t.threshold_count(), 7);
        assert_eq!(t.conditionals()[0].trend, TrendLabel::RapidDescend);
        assert_eq!(parse_sketch(&t.render()).unwrap(), t);
    }

    #[test]
    fn parse_errors() {
        let unknown = "steady_descend <- (momentum < ?)\nelse -> oscillation\n";
        assert!(matches!(
            parse_sketch(unknown),
            Err(SketchError::UnknownIndicator { line: 1, column: 20, ref name }) if name == "momentum"
        ));
        let no_else = "steady_descend <- (vol < ?) & (dr > ?)\nrapid_descend <- (vol > ?) & (dr > ?)\nsteady_ascend <- (vol < ?) & (gr > ?)\nrapid_ascend <- (vol > ?) & (gr > ?)\n";
        assert_eq!(parse_sketch(no_else), Err(SketchError::MissingDefault));
        let dup = "steady_descend <- (vol < ?)\nsteady_descend <- (dr > ?)\nelse -> oscillation\n";
        assert!(matches!(
            parse_sketch(dup),
            Err(SketchError::DuplicateTrend { line: 2, .. })
        ));
        let bad = "steady_descend <- (vol = ?)\nelse -> oscillation\n";
        assert!(matches!(
            parse_sketch(bad),
            Err(SketchError::Syntax { line: 1, .. })
        ));
        let missing = "steady_descend <- (vol < ?)\nelse -> oscillation\n";
        assert!(matches!(
            parse_sketch(missing),
            Err(SketchError::MissingTrend(_))
        ));
        let after = default_template(SketchMode::SingleModel).unwrap().render()
            + "rapid_ascend <- (gr > ?)\n";
        assert!(matches!(
            parse_sketch(&after),
            Err(SketchError::Syntax { .. })
        ));
    }

    #[test]
    fn param_file_round_trip_bit_exact() {
        let t = default_template(SketchMode::Ensemble { k: 3 }).unwrap();
        let mut p = SketchParams::identity(&t, (0..8).map(|i| 0.1 * i as f64 + 1e-17).collect());
        p.directives[2] = Directive::Weights(vec![0.2, 0.3, 0.5]);
        let named = p.to_named(&t);
        assert_eq!(named.len(), 23);
        assert!(named.contains_key("threshold_7") && named.contains_key("phi_oscillation_2"));
        let back = SketchParams::from_json(&t, &p.to_json(&t)).unwrap();
        assert_eq!(back, p);

        let s = default_template(SketchMode::SingleModel).unwrap();
        let q = SketchParams::identity(&s, vec![0.5; 8]);
        assert_eq!(q.to_named(&s).len(), 13);
        assert!(SketchParams::from_json(&t, &q.to_json(&s)).is_err());
    }

    /// Brute force: indices of every conditional whose clauses all hold.
    fn satisfied(t: &SketchTemplate, th: &[f64], f: &MarketFeatures) -> Vec<TrendLabel> {
        t.conditionals()
            .iter()
            .filter(|c| !c.clauses.is_empty())
            .filter(|c| {
                c.clauses.iter().all(|cl| match cl.comparator {
                    Comparator::Lt => cl.indicator.value(f) < th[cl.hole],
                    Comparator::Gt => cl.indicator.value(f) > th[cl.hole],
                })
            })
            .map(|c| c.trend)
            .collect()
    }

    fn permutations(items: Vec<Conditional>) -> Vec<Vec<Conditional>> {
        if items.len() <= 1 {
            return vec![items];
        }
        let mut out = Vec::new();
        for i in 0..items.len() {
            let mut rest = items.clone();
            let head = rest.remove(i);
            for mut tail in permutations(rest) {
                tail.insert(0, head.clone());
                out.push(tail);
            }
        }
        out
    }

    #[test]
    fn order_sensitivity_only_on_overlaps() {
        let base = default_template(SketchMode::SingleModel).unwrap();
        let th = [1.0, 0.5, 1.5, 1.0, 0.8, 0.3, 1.2, 0.6];
        let rules: Vec<Conditional> = base.conditionals()[..4].to_vec();
        let osc = base.conditionals()[4].clone();
        let templates: Vec<SketchTemplate> = permutations(rules)
            .into_iter()
            .map(|mut p| {
                p.push(osc.clone());
                for (i, c) in p.iter_mut().enumerate() {
                    c.directive_hole = i;
                }
                SketchTemplate::new(p, SketchMode::SingleModel).unwrap()
            })
            .collect();
        assert_eq!(templates.len(), 24);
        let lattice: Vec<f64> = (0..=10).map(|i| i as f64 * 0.25).collect();
        for &vol in &lattice {
            for &dr in &lattice {
                for &gr in &lattice {
                    let f = feats(vol, dr, gr);
                    let sat = satisfied(&base, &th, &f);
                    let labels: Vec<TrendLabel> =
                        templates.iter().map(|t| t.classify(&th, &f)).collect();
                    match sat.len() {
                        0 => assert!(labels.iter().all(|&l| l == TrendLabel::Oscillation)),
                        1 => assert!(labels.iter().all(|&l| l == sat[0])),
                        _ => {
                            for (t, l) in templates.iter().zip(&labels) {
                                let first = t
                                    .conditionals()
                                    .iter()
                                    .find(|c| sat.contains(&c.trend))
                                    .unwrap();
                                assert_eq!(*l, first.trend);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn totality_on_random_features() {
        use rand::{Rng, SeedableRng};
        let t = default_template(SketchMode::SingleModel).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let th: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..2.0)).collect();
            let p = SketchParams::identity(&t, th);
            let f = feats(
                rng.gen_range(0.0..3.0),
                rng.gen_range(0.0..3.0),
                rng.gen_range(0.0..3.0),
            );
            let a = interpret(&t, &p, &f).unwrap();
            assert_eq!(a, interpret(&t, &p, &f).unwrap());
        }
    }
}
