//! Acquisition functions over a finite model family.
//!
//! The expected-score-gain strategies (`core_mse`, `core_log` and any
//! registered rule) score a candidate `x` by how much acquiring its label is
//! expected to raise the generator `G` of the posterior predictive at each
//! point `x'` of a fixed estimation pool:
//!
//! ```text
//! ΔQ(x | L, x') = Σ_y q_x(y) · G(Pr(· | L, (x, y), x')) − G(Pr(· | L, x'))
//! ΔQ(x | L)     = Σ_{x' ∈ X} ΔQ(x | L, x')
//! ```
//!
//! MOCU and WMOCU share that shape with `G` replaced by the hard maximum and a
//! log-sum-exp soft maximum respectively. BALD, max-entropy and random are
//! the remaining baselines.
//!
//! Pool scoring computes each distinct input once, in parallel, and then
//! reduces in pool order, so results do not depend on thread scheduling.

mod objective;

pub use objective::{
    mocu_objective, objective_bregman_form, objective_generator_form, objective_score_form,
};

use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::model_space::{mix_rows, ModelError, ModelFamily, Posterior};
use crate::scoring_rules::{shannon_entropy, RuleHandle, RuleRegistry, ScoringError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AcquisitionError {
    #[error("unlabelled pool is empty")]
    EmptyPool,
    #[error("estimation pool is empty")]
    EmptyEstimationPool,
    #[error("invalid WMOCU weighting parameter k = {0}; must be positive")]
    InvalidWmocuK(f64),
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

/// Names accepted by [`Strategy::parse`], besides registered custom rules.
pub const STRATEGY_NAMES: [&str; 7] = [
    "core_mse", "core_log", "max_ent", "bald", "mocu", "wmocu", "random",
];

/// Default WMOCU softness.
pub const DEFAULT_WMOCU_K: f64 = 10.0;

#[derive(Clone)]
pub enum Strategy {
    /// Expected gain in a proper scoring rule's generator.
    Bemps(RuleHandle),
    MaxEntropy,
    Bald,
    Mocu,
    /// MOCU with `max` softened to `(1/k) ln Σ exp(k q)`; `k = ∞` is MOCU.
    Wmocu {
        k: f64,
    },
    Random {
        seed: u64,
        iteration: u64,
    },
}

impl fmt::Debug for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Wmocu { k } => write!(f, "Wmocu {{ k: {k} }}"),
            Strategy::Random { seed, iteration } => {
                write!(f, "Random {{ seed: {seed}, iteration: {iteration} }}")
            }
            other => f.write_str(&other.name()),
        }
    }
}

impl Strategy {
    pub fn parse(
        name: &str,
        registry: &RuleRegistry,
        wmocu_k: f64,
        seed: u64,
    ) -> Result<Self, AcquisitionError> {
        let strategy = match name {
            "max_ent" => Strategy::MaxEntropy,
            "bald" => Strategy::Bald,
            "mocu" => Strategy::Mocu,
            "wmocu" => Strategy::Wmocu { k: wmocu_k },
            "random" => Strategy::Random { seed, iteration: 0 },
            other => Strategy::Bemps(
                registry
                    .get(other)
                    .map_err(|_| AcquisitionError::UnknownStrategy(other.to_string()))?,
            ),
        };
        strategy.validate()?;
        Ok(strategy)
    }

    pub fn name(&self) -> String {
        match self {
            Strategy::Bemps(rule) => rule.name().to_string(),
            Strategy::MaxEntropy => "max_ent".into(),
            Strategy::Bald => "bald".into(),
            Strategy::Mocu => "mocu".into(),
            Strategy::Wmocu { .. } => "wmocu".into(),
            Strategy::Random { .. } => "random".into(),
        }
    }

    pub fn validate(&self) -> Result<(), AcquisitionError> {
        if let Strategy::Wmocu { k } = self {
            if !(*k > 0.0) {
                return Err(AcquisitionError::InvalidWmocuK(*k));
            }
        }
        Ok(())
    }

    /// Copy bound to an acquisition iteration (only affects `random`).
    pub fn at_iteration(&self, iteration: u64) -> Self {
        match self {
            Strategy::Random { seed, .. } => Strategy::Random {
                seed: *seed,
                iteration,
            },
            other => other.clone(),
        }
    }

    /// True when scores decompose over the estimation pool.
    pub fn has_pair_vectors(&self) -> bool {
        matches!(
            self,
            Strategy::Bemps(_) | Strategy::Mocu | Strategy::Wmocu { .. }
        )
    }
}

/// The function whose expected increase under a hypothetical label is the
/// acquisition gain at one estimation point.
#[derive(Clone, Copy)]
enum Gain<'a> {
    Rule(&'a RuleHandle),
    HardMax,
    SoftMax(f64),
}

impl Gain<'_> {
    #[inline]
    fn eval(&self, q: &[f64]) -> f64 {
        match self {
            Gain::Rule(rule) => rule.generator(q),
            Gain::HardMax => q.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Gain::SoftMax(k) => soft_max(q, *k),
        }
    }
}

/// `(1/k) ln Σ exp(k q)`, evaluated stably; `k = ∞` gives `max q`.
pub fn soft_max(q: &[f64], k: f64) -> f64 {
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if k.is_infinite() {
        return max;
    }
    max + q.iter().map(|v| (k * (v - max)).exp()).sum::<f64>().ln() / k
}

/// Everything an acquisition function reads: model family, posterior,
/// unlabelled pool `U` and estimation pool `X` (both as input ids).
pub struct AcquisitionContext<'a> {
    family: &'a ModelFamily,
    weights: Vec<f64>,
    pool: &'a [usize],
    estimation_pool: &'a [usize],
}

impl<'a> AcquisitionContext<'a> {
    pub fn new(
        family: &'a ModelFamily,
        posterior: &Posterior,
        pool: &'a [usize],
        estimation_pool: &'a [usize],
    ) -> Result<Self, AcquisitionError> {
        if posterior.log_weights().len() != family.num_models() {
            return Err(ModelError::InvalidFamily(
                "posterior length differs from model count".into(),
            )
            .into());
        }
        for &x in pool.iter().chain(estimation_pool) {
            family.check_input(x)?;
        }
        Ok(Self {
            family,
            weights: posterior.weights(),
            pool,
            estimation_pool,
        })
    }

    pub fn family(&self) -> &ModelFamily {
        self.family
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn pool(&self) -> &[usize] {
        self.pool
    }

    pub fn estimation_pool(&self) -> &[usize] {
        self.estimation_pool
    }

    fn predictive(&self, x: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.family.num_classes()];
        mix_rows(self.family, &self.weights, x, &mut out);
        out
    }

    fn lookahead(&self, x: usize) -> Lookahead {
        let k = self.family.num_classes();
        let m = self.family.num_models();
        let mut joint = vec![0.0; k * m];
        let mut qx = vec![0.0; k];
        for (model, &w) in self.weights.iter().enumerate() {
            for (y, p) in self.family.row(model, x).iter().enumerate() {
                let v = w * p;
                joint[y * m + model] = v;
                qx[y] += v;
            }
        }
        Lookahead { joint, qx }
    }

    /// `Σ_y q_x(y) · gain(Pr(· | L, (x, y), x'))`, the first term of ΔQ.
    fn expected_gain_after(
        &self,
        look: &Lookahead,
        x_prime: usize,
        gain: Gain,
        mix: &mut [f64],
    ) -> f64 {
        let m = self.family.num_models();
        let mut total = 0.0;
        for (y, &qy) in look.qx.iter().enumerate() {
            if qy <= 0.0 {
                continue;
            }
            mix.iter_mut().for_each(|v| *v = 0.0);
            for (model, &v) in look.joint[y * m..(y + 1) * m].iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                let scaled = v / qy;
                for (o, p) in mix.iter_mut().zip(self.family.row(model, x_prime)) {
                    *o += scaled * p;
                }
            }
            total += qy * gain.eval(mix);
        }
        total
    }

    fn point_gain(&self, x: usize, x_prime: usize, gain: Gain) -> Result<f64, AcquisitionError> {
        self.family.check_input(x)?;
        self.family.check_input(x_prime)?;
        let look = self.lookahead(x);
        let mut mix = vec![0.0; self.family.num_classes()];
        let after = self.expected_gain_after(&look, x_prime, gain, &mut mix);
        Ok(after - gain.eval(&self.predictive(x_prime)))
    }

    fn pool_gain(&self, x: usize, gain: Gain) -> Result<f64, AcquisitionError> {
        if self.estimation_pool.is_empty() {
            return Err(AcquisitionError::EmptyEstimationPool);
        }
        self.family.check_input(x)?;
        let look = self.lookahead(x);
        let mut mix = vec![0.0; self.family.num_classes()];
        Ok(self
            .estimation_pool
            .iter()
            .map(|&xp| {
                self.expected_gain_after(&look, xp, gain, &mut mix)
                    - gain.eval(&self.predictive(xp))
            })
            .sum())
    }
}

struct Lookahead {
    /// `joint[y * models + m] = w_m · Pr(y | m, x)`.
    joint: Vec<f64>,
    qx: Vec<f64>,
}

/// Point-wise `ΔQ(x | L, x')` for a scoring rule.
pub fn delta_q_point(
    ctx: &AcquisitionContext,
    rule: &RuleHandle,
    x: usize,
    x_prime: usize,
) -> Result<f64, AcquisitionError> {
    ctx.point_gain(x, x_prime, Gain::Rule(rule))
}

/// `ΔQ(x | L)` summed over the estimation pool.
pub fn delta_q(
    ctx: &AcquisitionContext,
    rule: &RuleHandle,
    x: usize,
) -> Result<f64, AcquisitionError> {
    ctx.pool_gain(x, Gain::Rule(rule))
}

/// Predictive entropy `H[Pr(· | L, x)]`.
pub fn max_entropy_score(ctx: &AcquisitionContext, x: usize) -> Result<f64, AcquisitionError> {
    ctx.family.check_input(x)?;
    Ok(shannon_entropy(&ctx.predictive(x)))
}

/// Mutual information between the label at `x` and the model.
pub fn bald_score(ctx: &AcquisitionContext, x: usize) -> Result<f64, AcquisitionError> {
    ctx.family.check_input(x)?;
    let expected_conditional: f64 = ctx
        .weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > 0.0)
        .map(|(m, w)| w * shannon_entropy(ctx.family.row(m, x)))
        .sum();
    Ok(shannon_entropy(&ctx.predictive(x)) - expected_conditional)
}

/// Expected reduction of the Bayesian classification regret (MOCU).
pub fn mocu_delta(ctx: &AcquisitionContext, x: usize) -> Result<f64, AcquisitionError> {
    ctx.pool_gain(x, Gain::HardMax)
}

/// MOCU with the minimum-error term softened by weighting parameter `k`.
///
/// Converges to [`mocu_delta`] as `k → ∞`; `k = f64::INFINITY` is exactly MOCU.
pub fn wmocu_delta(ctx: &AcquisitionContext, x: usize, k: f64) -> Result<f64, AcquisitionError> {
    if !(k > 0.0) {
        return Err(AcquisitionError::InvalidWmocuK(k));
    }
    ctx.pool_gain(x, Gain::SoftMax(k))
}

/// Uniform score in `[0, 1)` keyed on `(seed, iteration, pool position)`.
pub fn random_score(seed: u64, iteration: u64, position: usize) -> f64 {
    let mut state = seed;
    let mut mixed = splitmix64(&mut state);
    state = mixed ^ iteration;
    mixed = splitmix64(&mut state);
    state = mixed ^ position as u64;
    (splitmix64(&mut state) >> 11) as f64 / (1u64 << 53) as f64
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Row-major `|U| × |X|` matrix of point-wise gains.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMatrix {
    cols: usize,
    data: Vec<f64>,
}

impl PairMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged pair matrix");
        Self {
            cols,
            data: rows.concat(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.cols).unwrap_or(0)
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

/// Scores aligned with the pool order, plus optional per-estimation-point
/// vectors (the score-change vectors used for batch diversity).
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionScores {
    pub inputs: Vec<usize>,
    pub per_x: Vec<f64>,
    pub per_pair: Option<PairMatrix>,
}

impl AcquisitionScores {
    /// Position of the highest score; lowest position wins ties.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &s) in self.per_x.iter().enumerate() {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        best.map(|(i, _)| i)
    }

    pub fn len(&self) -> usize {
        self.per_x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_x.is_empty()
    }
}

/// Pool position and input id of a selected candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pick {
    pub position: usize,
    pub input: usize,
}

/// Scores the whole unlabelled pool under `strategy`.
///
/// With `retain_pairs` and a decomposable strategy the `|U| × |X|` matrix of
/// point-wise gains is kept as well.
pub fn score_pool(
    ctx: &AcquisitionContext,
    strategy: &Strategy,
    retain_pairs: bool,
) -> Result<AcquisitionScores, AcquisitionError> {
    strategy.validate()?;
    if ctx.pool.is_empty() {
        return Err(AcquisitionError::EmptyPool);
    }
    let inputs = ctx.pool.to_vec();
    if let Strategy::Random { seed, iteration } = strategy {
        let per_x = (0..inputs.len())
            .map(|i| random_score(*seed, *iteration, i))
            .collect();
        return Ok(AcquisitionScores {
            inputs,
            per_x,
            per_pair: None,
        });
    }

    // one slot per distinct input, in order of first appearance
    let (pool_slots, pool_distinct) = distinct_slots(ctx.pool, ctx.family.num_inputs());

    let gain = match strategy {
        Strategy::Bemps(rule) => Some(Gain::Rule(rule)),
        Strategy::Mocu => Some(Gain::HardMax),
        Strategy::Wmocu { k } => Some(Gain::SoftMax(*k)),
        _ => None,
    };

    let Some(gain) = gain else {
        let distinct_scores: Vec<f64> = pool_distinct
            .par_iter()
            .map(|&x| match strategy {
                Strategy::MaxEntropy => max_entropy_score(ctx, x),
                _ => bald_score(ctx, x),
            })
            .collect::<Result<_, _>>()?;
        let per_x = pool_slots.iter().map(|&s| distinct_scores[s]).collect();
        return Ok(AcquisitionScores {
            inputs,
            per_x,
            per_pair: None,
        });
    };

    if ctx.estimation_pool.is_empty() {
        return Err(AcquisitionError::EmptyEstimationPool);
    }
    let (est_slots, est_distinct) = distinct_slots(ctx.estimation_pool, ctx.family.num_inputs());
    let baseline: Vec<f64> = est_distinct
        .iter()
        .map(|&xp| gain.eval(&ctx.predictive(xp)))
        .collect();

    // per distinct pool input: the total over X (summed in X order) and,
    // when requested, its gains against each distinct estimation input
    let rows: Vec<(f64, Option<Vec<f64>>)> = pool_distinct
        .par_iter()
        .map(|&x| {
            let look = ctx.lookahead(x);
            let mut mix = vec![0.0; ctx.family.num_classes()];
            let row: Vec<f64> = est_distinct
                .iter()
                .zip(&baseline)
                .map(|(&xp, base)| ctx.expected_gain_after(&look, xp, gain, &mut mix) - base)
                .collect();
            let total = est_slots.iter().map(|&e| row[e]).sum();
            (total, retain_pairs.then_some(row))
        })
        .collect();

    let per_x = pool_slots.iter().map(|&s| rows[s].0).collect();
    let per_pair = retain_pairs.then(|| {
        let cols = est_slots.len();
        let mut data = Vec::with_capacity(pool_slots.len() * cols);
        for &s in &pool_slots {
            let row = rows[s]
                .1
                .as_ref()
                .expect("rows kept when pairs are retained");
            data.extend(est_slots.iter().map(|&e| row[e]));
        }
        PairMatrix { cols, data }
    });
    Ok(AcquisitionScores {
        inputs,
        per_x,
        per_pair,
    })
}

/// Maps each item to a slot indexing the distinct values (first-appearance order).
fn distinct_slots(items: &[usize], universe: usize) -> (Vec<usize>, Vec<usize>) {
    let mut slot_of = vec![usize::MAX; universe];
    let mut distinct = Vec::new();
    let slots = items
        .iter()
        .map(|&x| {
            if slot_of[x] == usize::MAX {
                slot_of[x] = distinct.len();
                distinct.push(x);
            }
            slot_of[x]
        })
        .collect();
    (slots, distinct)
}

/// Pool element maximizing the strategy's score; lowest position wins ties.
pub fn select_argmax(
    ctx: &AcquisitionContext,
    strategy: &Strategy,
) -> Result<Pick, AcquisitionError> {
    let scores = score_pool(ctx, strategy, false)?;
    let position = scores.argmax().ok_or(AcquisitionError::EmptyPool)?;
    Ok(Pick {
        position,
        input: scores.inputs[position],
    })
}
