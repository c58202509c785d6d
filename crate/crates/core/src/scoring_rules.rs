//! Strictly proper scoring rules in Savage form.
//!
//! A rule is defined by a strictly convex generator `G` over the probability
//! simplex and a subgradient `dG`. The score of a forecast `q` on outcome `y`
//! is then
//!
//! ```text
//! S(q, y) = G(q) + dG(q)·(δ_y − q)
//! ```
//!
//! and the associated Bregman divergence is
//! `B(p, q) = G(p) − G(q) − dG(q)·(p − q)`.
//!
//! Two rules are built in:
//!
//! - `core_mse`: `G(q) = Σ q² − 1`, the Brier score, whose divergence is the
//!   squared Euclidean distance.
//! - `core_log`: `G(q) = Σ q ln q`, the logarithmic score, whose divergence is
//!   the KL divergence.
//!
//! Logarithms are natural. Log forms clamp probabilities to
//! [`LOG_CLAMP`] before taking the log, with `0 · ln 0 = 0`.
//!
//! Any subgradient that differs from another by a constant vector gives the
//! same scores, because `dG(q)·(p − q)` annihilates constants when `p` and `q`
//! both lie on the simplex.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Lower clamp for probabilities inside logarithms.
pub const LOG_CLAMP: f64 = 1e-12;

/// Tolerance for simplex membership checks.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("not a probability vector: {0}")]
    NotOnSimplex(String),
    #[error("class {class} out of range for {num_classes} classes")]
    InvalidClass { class: usize, num_classes: usize },
    #[error("vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("unknown scoring rule {0:?}")]
    UnknownRule(String),
    #[error("scoring rule {0:?} is already registered")]
    DuplicateRule(String),
}

/// A strictly proper scoring rule given by its generator and subgradient.
///
/// `generator` and `gradient` are unchecked hot-path entry points; callers
/// pass probability vectors. Use [`score`] and [`bregman`] for validated
/// access.
pub trait ScoringRule: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    /// `G(q)`.
    fn generator(&self, q: &[f64]) -> f64;

    /// Writes `dG(q)` into `out`.
    fn gradient(&self, q: &[f64], out: &mut [f64]);

    /// `S(q, y)` from the Savage representation. Implementations may override
    /// with a closed form.
    fn score_unchecked(&self, q: &[f64], y: usize) -> f64 {
        let mut grad = vec![0.0; q.len()];
        self.gradient(q, &mut grad);
        let inner: f64 = grad.iter().zip(q).map(|(g, p)| g * p).sum();
        self.generator(q) + grad[y] - inner
    }
}

pub type RuleHandle = Arc<dyn ScoringRule>;

/// Brier score: `G(q) = Σ q(y)² − 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CoreMse;

impl ScoringRule for CoreMse {
    fn name(&self) -> &str {
        "core_mse"
    }

    #[inline]
    fn generator(&self, q: &[f64]) -> f64 {
        q.iter().map(|p| p * p).sum::<f64>() - 1.0
    }

    fn gradient(&self, q: &[f64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(q) {
            *o = 2.0 * p;
        }
    }

    fn score_unchecked(&self, q: &[f64], y: usize) -> f64 {
        -q.iter()
            .enumerate()
            .map(|(c, p)| {
                let target = if c == y { 1.0 } else { 0.0 };
                (p - target) * (p - target)
            })
            .sum::<f64>()
    }
}

/// Logarithmic score: `G(q) = Σ q(y) ln q(y)`, i.e. negative entropy.
#[derive(Debug, Clone, Copy, Default)]
pub struct CoreLog;

impl ScoringRule for CoreLog {
    fn name(&self) -> &str {
        "core_log"
    }

    #[inline]
    fn generator(&self, q: &[f64]) -> f64 {
        q.iter()
            .map(|&p| {
                if p > 0.0 {
                    p * p.max(LOG_CLAMP).ln()
                } else {
                    0.0
                }
            })
            .sum()
    }

    fn gradient(&self, q: &[f64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(q) {
            *o = 1.0 + p.max(LOG_CLAMP).ln();
        }
    }

    fn score_unchecked(&self, q: &[f64], y: usize) -> f64 {
        q[y].max(LOG_CLAMP).ln()
    }
}

type GeneratorFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradientFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// A user-supplied `(G, dG)` pair. Scores come from the Savage form.
///
/// Nothing checks that `G` is strictly convex; a non-convex `G` yields an
/// improper rule and breaks the non-negativity guarantees of the acquisition
/// functions.
#[derive(Clone)]
pub struct CustomRule {
    name: String,
    generator: Arc<GeneratorFn>,
    gradient: Arc<GradientFn>,
}

impl CustomRule {
    pub fn new<G, D>(name: impl Into<String>, generator: G, gradient: D) -> Self
    where
        G: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        D: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            generator: Arc::new(generator),
            gradient: Arc::new(gradient),
        }
    }
}

impl fmt::Debug for CustomRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomRule")
            .field("name", &self.name)
            .finish()
    }
}

impl ScoringRule for CustomRule {
    fn name(&self) -> &str {
        &self.name
    }

    fn generator(&self, q: &[f64]) -> f64 {
        (self.generator)(q)
    }

    fn gradient(&self, q: &[f64], out: &mut [f64]) {
        (self.gradient)(q, out)
    }
}

/// Name → rule lookup used by configuration files.
#[derive(Debug, Clone)]
pub struct RuleRegistry {
    rules: BTreeMap<String, RuleHandle>,
}

impl Default for RuleRegistry {
    fn default() -> Self {
        let mut rules: BTreeMap<String, RuleHandle> = BTreeMap::new();
        rules.insert("core_mse".into(), Arc::new(CoreMse));
        rules.insert("core_log".into(), Arc::new(CoreLog));
        Self { rules }
    }
}

impl RuleRegistry {
    pub fn register(&mut self, rule: RuleHandle) -> Result<(), ScoringError> {
        let name = rule.name().to_string();
        if self.rules.contains_key(&name) {
            return Err(ScoringError::DuplicateRule(name));
        }
        self.rules.insert(name, rule);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<RuleHandle, ScoringError> {
        self.rules
            .get(name)
            .cloned()
            .ok_or_else(|| ScoringError::UnknownRule(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.rules.keys().map(String::as_str)
    }
}

pub fn check_simplex(q: &[f64]) -> Result<(), ScoringError> {
    if q.is_empty() {
        return Err(ScoringError::NotOnSimplex("empty vector".into()));
    }
    if let Some(p) = q
        .iter()
        .find(|p| !p.is_finite() || **p < -SIMPLEX_TOLERANCE)
    {
        return Err(ScoringError::NotOnSimplex(format!("entry {p}")));
    }
    let sum: f64 = q.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(ScoringError::NotOnSimplex(format!("sums to {sum}")));
    }
    Ok(())
}

pub fn g_mse(q: &[f64]) -> Result<f64, ScoringError> {
    check_simplex(q)?;
    Ok(CoreMse.generator(q))
}

pub fn g_log(q: &[f64]) -> Result<f64, ScoringError> {
    check_simplex(q)?;
    Ok(CoreLog.generator(q))
}

pub fn score(rule: &dyn ScoringRule, q: &[f64], y: usize) -> Result<f64, ScoringError> {
    check_simplex(q)?;
    if y >= q.len() {
        return Err(ScoringError::InvalidClass {
            class: y,
            num_classes: q.len(),
        });
    }
    Ok(rule.score_unchecked(q, y))
}

/// `B(p, q) = G(p) − G(q) − dG(q)·(p − q)`.
pub fn bregman(rule: &dyn ScoringRule, p: &[f64], q: &[f64]) -> Result<f64, ScoringError> {
    if p.len() != q.len() {
        return Err(ScoringError::LengthMismatch(p.len(), q.len()));
    }
    check_simplex(p)?;
    check_simplex(q)?;
    Ok(bregman_unchecked(rule, p, q))
}

pub(crate) fn bregman_unchecked(rule: &dyn ScoringRule, p: &[f64], q: &[f64]) -> f64 {
    let mut grad = vec![0.0; q.len()];
    rule.gradient(q, &mut grad);
    let linear: f64 = grad
        .iter()
        .zip(p.iter().zip(q))
        .map(|(g, (a, b))| g * (a - b))
        .sum();
    rule.generator(p) - rule.generator(q) - linear
}

/// Shannon entropy in nats, with `0 · ln 0 = 0`.
#[inline]
pub fn shannon_entropy(q: &[f64]) -> f64 {
    -CoreLog.generator(q)
}
