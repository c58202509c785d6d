//! Approximate posteriors from ensembles of tabular learners.
//!
//! Each member is a per-input class-frequency table with Dirichlet smoothing
//! towards a per-input target distribution `t`:
//!
//! ```text
//! p(y | x) = (n_xy + α · t_xy) / (n_x + α)
//! ```
//!
//! Targets are centred on the Laplace-smoothed class marginal of the member's
//! training data, `m_y = (n_y + 1) / (n + K)`. With a positive prior
//! concentration `c` each member draws its own targets at every fit,
//! `t_x ~ Dir(c · K · m)`, the tabular counterpart of a random
//! re-initialisation; with `c = 0` every target is `m` itself.
//!
//! The smoothing strength `α` is chosen per member from [`SMOOTHING_GRID`] by
//! held-out log score on the member's validation split. Members are refit
//! from scratch after every acquisition and weighted uniformly.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::SimulationError;
use crate::model_space::{ConditionalTable, LabeledSet, ModelFamily};

pub const SMOOTHING_GRID: [f64; 6] = [0.01, 0.1, 0.3, 1.0, 3.0, 10.0];

/// Smoothing used without a validation split.
pub const DEFAULT_SMOOTHING: f64 = 1.0;

pub const DEFAULT_PRIOR_CONCENTRATION: f64 = 1.0;

/// Keeps drawn targets strictly positive.
const TARGET_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    /// Exact Bayes posterior over the generating family.
    Exact,
    /// Fresh random train/validation split per member per iteration.
    DynamicVs,
    /// One random split per iteration shared by all members.
    ConstantVs,
    /// Every member trains on all labels with fixed smoothing.
    NoVs,
}

impl EnsembleMode {
    pub fn name(&self) -> &'static str {
        match self {
            EnsembleMode::Exact => "exact",
            EnsembleMode::DynamicVs => "dynamic_vs",
            EnsembleMode::ConstantVs => "constant_vs",
            EnsembleMode::NoVs => "no_vs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleSpec {
    pub mode: EnsembleMode,
    pub size: usize,
    pub train_fraction: f64,
    /// Spread of each member's random smoothing targets; 0 disables them.
    pub prior_concentration: f64,
}

impl EnsembleSpec {
    pub fn new(mode: EnsembleMode, size: usize, train_fraction: f64) -> Self {
        Self {
            mode,
            size,
            train_fraction,
            prior_concentration: DEFAULT_PRIOR_CONCENTRATION,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    /// Member tables with a uniform prior.
    pub members: ModelFamily,
    /// Smoothing strength chosen for each member.
    pub smoothing: Vec<f64>,
}

/// `m_y = (n_y + 1) / (n + K)`.
pub fn class_marginal(pairs: &[(usize, usize)], num_classes: usize) -> Vec<f64> {
    let mut counts = vec![0.0; num_classes];
    for &(_, y) in pairs {
        counts[y] += 1.0;
    }
    let n = pairs.len() as f64;
    counts
        .iter()
        .map(|c| (c + 1.0) / (n + num_classes as f64))
        .collect()
}

/// Row-major `num_inputs × K` smoothing targets.
pub fn smoothing_targets<R: Rng>(
    pairs: &[(usize, usize)],
    num_inputs: usize,
    num_classes: usize,
    prior_concentration: f64,
    rng: &mut R,
) -> Result<Vec<f64>, SimulationError> {
    let marginal = class_marginal(pairs, num_classes);
    if prior_concentration == 0.0 {
        return Ok(marginal.repeat(num_inputs));
    }
    if !(prior_concentration > 0.0 && prior_concentration.is_finite()) {
        return Err(SimulationError::Config(format!(
            "prior concentration must be non-negative and finite, got {prior_concentration}"
        )));
    }
    let gammas: Vec<Gamma<f64>> = marginal
        .iter()
        .map(|m| Gamma::new(prior_concentration * num_classes as f64 * m, 1.0))
        .collect::<Result<_, _>>()
        .map_err(|e| SimulationError::Config(format!("prior concentration: {e}")))?;
    let mut targets = Vec::with_capacity(num_inputs * num_classes);
    let mut row = vec![0.0; num_classes];
    for _ in 0..num_inputs {
        for (r, g) in row.iter_mut().zip(&gammas) {
            *r = g.sample(rng) + TARGET_FLOOR;
        }
        let z: f64 = row.iter().sum();
        targets.extend(row.iter().map(|r| r / z));
    }
    Ok(targets)
}

/// Smoothed frequency table fit on `pairs`.
pub fn smoothed_table(
    pairs: &[(usize, usize)],
    alpha: f64,
    targets: &[f64],
    num_inputs: usize,
    num_classes: usize,
) -> Result<ConditionalTable, SimulationError> {
    let mut counts = vec![0.0; num_inputs * num_classes];
    for &(x, y) in pairs {
        counts[x * num_classes + y] += 1.0;
    }
    for (row, target) in counts
        .chunks_exact_mut(num_classes)
        .zip(targets.chunks_exact(num_classes))
    {
        let nx: f64 = row.iter().sum();
        for (v, t) in row.iter_mut().zip(target) {
            *v = (*v + alpha * t) / (nx + alpha);
        }
    }
    Ok(ConditionalTable::new(counts, num_inputs, num_classes)?)
}

/// `Σ ln p(y | x)` over held-out pairs.
pub fn held_out_log_score(table: &ConditionalTable, validation: &[(usize, usize)]) -> f64 {
    validation.iter().map(|&(x, y)| table.row(x)[y].ln()).sum()
}

/// Grid value with the best held-out log score; earlier values win ties.
pub fn select_smoothing(
    train: &[(usize, usize)],
    validation: &[(usize, usize)],
    grid: &[f64],
    targets: &[f64],
    num_inputs: usize,
    num_classes: usize,
) -> Result<(f64, ConditionalTable), SimulationError> {
    let mut best: Option<(f64, f64, ConditionalTable)> = None;
    for &alpha in grid {
        let table = smoothed_table(train, alpha, targets, num_inputs, num_classes)?;
        let score = held_out_log_score(&table, validation);
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, alpha, table));
        }
    }
    best.map(|(_, a, t)| (a, t))
        .ok_or_else(|| SimulationError::Config("empty smoothing grid".into()))
}

type Split = (Vec<(usize, usize)>, Vec<(usize, usize)>);

fn split(
    pairs: &[(usize, usize)],
    train_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Split, SimulationError> {
    let n_train = (train_fraction * pairs.len() as f64).round() as usize;
    if n_train == 0 {
        return Err(SimulationError::Config(format!(
            "train fraction {train_fraction} leaves no training data from {} labels",
            pairs.len()
        )));
    }
    let mut shuffled = pairs.to_vec();
    shuffled.shuffle(rng);
    let validation = shuffled.split_off(n_train.min(shuffled.len()));
    Ok((shuffled, validation))
}

fn fit_member(
    (train, validation): &Split,
    validate: bool,
    prior_concentration: f64,
    rng: &mut ChaCha8Rng,
    num_inputs: usize,
    num_classes: usize,
) -> Result<(f64, ConditionalTable), SimulationError> {
    let targets = smoothing_targets(train, num_inputs, num_classes, prior_concentration, rng)?;
    if !validate || validation.is_empty() {
        let table = smoothed_table(train, DEFAULT_SMOOTHING, &targets, num_inputs, num_classes)?;
        return Ok((DEFAULT_SMOOTHING, table));
    }
    select_smoothing(
        train,
        validation,
        &SMOOTHING_GRID,
        &targets,
        num_inputs,
        num_classes,
    )
}

fn member_rng(seed: u64, member: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(member as u64);
    rng
}

/// Fits `spec.size` members on the labelled data only.
pub fn ensemble_fit(
    labelled: &LabeledSet,
    spec: &EnsembleSpec,
    seed: u64,
    num_inputs: usize,
    num_classes: usize,
) -> Result<Ensemble, SimulationError> {
    if labelled.is_empty() {
        return Err(SimulationError::Config(
            "cannot fit an ensemble without labels".into(),
        ));
    }
    if spec.size == 0 {
        return Err(SimulationError::Config(
            "ensemble size must be positive".into(),
        ));
    }
    let train_fraction = spec.train_fraction;
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(SimulationError::Config(format!(
            "train fraction must lie in (0, 1], got {train_fraction}"
        )));
    }
    let pairs = labelled.pairs();
    let c = spec.prior_concentration;
    let fitted: Vec<(f64, ConditionalTable)> = match spec.mode {
        EnsembleMode::Exact => {
            return Err(SimulationError::Config(
                "exact mode does not fit an ensemble".into(),
            ))
        }
        EnsembleMode::DynamicVs => (0..spec.size)
            .map(|member| {
                let mut rng = member_rng(seed, member);
                let split = split(pairs, train_fraction, &mut rng)?;
                fit_member(&split, true, c, &mut rng, num_inputs, num_classes)
            })
            .collect::<Result<_, _>>()?,
        EnsembleMode::ConstantVs => {
            let shared = split(pairs, train_fraction, &mut member_rng(seed, spec.size))?;
            (0..spec.size)
                .map(|member| {
                    let mut rng = member_rng(seed, member);
                    fit_member(&shared, true, c, &mut rng, num_inputs, num_classes)
                })
                .collect::<Result<_, _>>()?
        }
        EnsembleMode::NoVs => {
            let full = (pairs.to_vec(), Vec::new());
            (0..spec.size)
                .map(|member| {
                    let mut rng = member_rng(seed, member);
                    fit_member(&full, false, c, &mut rng, num_inputs, num_classes)
                })
                .collect::<Result<_, _>>()?
        }
    };
    let (smoothing, tables): (Vec<f64>, Vec<ConditionalTable>) = fitted.into_iter().unzip();
    let members = ModelFamily::from_members(tables, vec![1.0 / spec.size as f64; spec.size])?;
    Ok(Ensemble { members, smoothing })
}
