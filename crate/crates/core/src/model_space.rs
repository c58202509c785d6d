//! Finite Bayesian model families over a discrete input space.
//!
//! A [`ModelFamily`] is a finite set of candidate classifiers. Each candidate
//! is a [`ConditionalTable`] giving `Pr(y | model, x)` for every input `x`
//! (an index into the input space) and class `y`. The [`Posterior`] over the
//! family is kept in log-space and is only ever derived from the prior and
//! labelled data, never from unlabelled inputs.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rows must sum to one within this tolerance.
pub const ROW_TOLERANCE: f64 = 1e-12;

/// Two tables closer than this (max-abs) are considered the same model.
pub const IDENTIFIABILITY_THRESHOLD: f64 = 1e-9;

/// Floor applied to generated table entries so no observation is impossible.
pub const GENERATED_PROBABILITY_FLOOR: f64 = 1e-6;

const MAX_GENERATION_ATTEMPTS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model family: {0}")]
    InvalidFamily(String),
    #[error("models {first} and {second} have identical tables (max difference {difference:e})")]
    NotIdentifiable {
        first: usize,
        second: usize,
        difference: f64,
    },
    #[error("input {input} is outside the input space of size {size}")]
    UnknownInput { input: usize, size: usize },
    #[error("class {class} is invalid for {num_classes} classes")]
    UnknownClass { class: usize, num_classes: usize },
    #[error("impossible evidence: every model assigns zero probability to class {class} at input {input}")]
    ImpossibleEvidence { input: usize, class: usize },
    #[error("could not generate a family with separation {separation} after {attempts} attempts")]
    GenerationFailed { separation: f64, attempts: usize },
    #[error("invalid generator spec: {0}")]
    InvalidGenerator(String),
    #[error("family file: {0}")]
    Format(String),
}

/// `Pr(y | model, x)` for one model, stored row-major (`inputs × classes`).
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalTable {
    probs: Vec<f64>,
    num_inputs: usize,
    num_classes: usize,
}

impl ConditionalTable {
    pub fn new(probs: Vec<f64>, num_inputs: usize, num_classes: usize) -> Result<Self, ModelError> {
        if num_classes == 0 || num_inputs == 0 {
            return Err(ModelError::InvalidFamily(
                "tables need at least one input and one class".into(),
            ));
        }
        if probs.len() != num_inputs * num_classes {
            return Err(ModelError::InvalidFamily(format!(
                "table has {} entries, expected {}",
                probs.len(),
                num_inputs * num_classes
            )));
        }
        for (x, row) in probs.chunks_exact(num_classes).enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(ModelError::InvalidFamily(format!(
                    "row {x} has entries outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOLERANCE {
                return Err(ModelError::InvalidFamily(format!(
                    "row {x} sums to {sum}, not 1"
                )));
            }
        }
        Ok(Self {
            probs,
            num_inputs,
            num_classes,
        })
    }

    /// Builds a table from rows, one per input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ModelError> {
        let num_classes = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != num_classes) {
            return Err(ModelError::InvalidFamily("ragged table rows".into()));
        }
        Self::new(rows.concat(), rows.len(), num_classes)
    }

    #[inline]
    pub fn row(&self, x: usize) -> &[f64] {
        &self.probs[x * self.num_classes..(x + 1) * self.num_classes]
    }

    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    fn max_abs_difference(&self, other: &Self) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A finite, identifiable set of candidate classifiers with a prior.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFamily {
    tables: Vec<ConditionalTable>,
    prior: Vec<f64>,
    num_inputs: usize,
    num_classes: usize,
}

impl ModelFamily {
    /// Validates tables and prior, including pairwise identifiability.
    pub fn new(tables: Vec<ConditionalTable>, prior: Vec<f64>) -> Result<Self, ModelError> {
        let family = Self::from_members(tables, prior)?;
        for i in 0..family.tables.len() {
            for j in i + 1..family.tables.len() {
                let difference = family.tables[i].max_abs_difference(&family.tables[j]);
                if difference <= IDENTIFIABILITY_THRESHOLD {
                    return Err(ModelError::NotIdentifiable {
                        first: i,
                        second: j,
                        difference,
                    });
                }
            }
        }
        Ok(family)
    }

    /// Family with a uniform prior.
    pub fn with_uniform_prior(tables: Vec<ConditionalTable>) -> Result<Self, ModelError> {
        let n = tables.len().max(1);
        Self::new(tables, vec![1.0 / n as f64; n])
    }

    /// Same validation as [`ModelFamily::new`] except identifiability.
    ///
    /// Ensemble members fit on identical data may coincide, so ensembles are
    /// built through this constructor.
    pub fn from_members(
        tables: Vec<ConditionalTable>,
        prior: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let first = tables
            .first()
            .ok_or_else(|| ModelError::InvalidFamily("family has no models".into()))?;
        let (num_inputs, num_classes) = (first.num_inputs, first.num_classes);
        if tables
            .iter()
            .any(|t| t.num_inputs != num_inputs || t.num_classes != num_classes)
        {
            return Err(ModelError::InvalidFamily(
                "models disagree on input space or class count".into(),
            ));
        }
        if prior.len() != tables.len() {
            return Err(ModelError::InvalidFamily(format!(
                "prior has {} entries for {} models",
                prior.len(),
                tables.len()
            )));
        }
        if prior.iter().any(|p| !(*p >= 0.0)) {
            return Err(ModelError::InvalidFamily(
                "prior has negative entries".into(),
            ));
        }
        let total: f64 = prior.iter().sum();
        if (total - 1.0).abs() > ROW_TOLERANCE {
            return Err(ModelError::InvalidFamily(format!("prior sums to {total}")));
        }
        Ok(Self {
            tables,
            prior,
            num_inputs,
            num_classes,
        })
    }

    pub fn num_models(&self) -> usize {
        self.tables.len()
    }

    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn tables(&self) -> &[ConditionalTable] {
        &self.tables
    }

    /// `Pr(· | model, x)`.
    #[inline]
    pub fn row(&self, model: usize, x: usize) -> &[f64] {
        self.tables[model].row(x)
    }

    pub fn check_input(&self, x: usize) -> Result<(), ModelError> {
        if x >= self.num_inputs {
            return Err(ModelError::UnknownInput {
                input: x,
                size: self.num_inputs,
            });
        }
        Ok(())
    }

    pub fn check_observation(&self, x: usize, y: usize) -> Result<(), ModelError> {
        self.check_input(x)?;
        if y >= self.num_classes {
            return Err(ModelError::UnknownClass {
                class: y,
                num_classes: self.num_classes,
            });
        }
        Ok(())
    }

    /// Writes one CSV row per (model, input): `model,input,prior,p0,..,pK-1`.
    ///
    /// Values use 17 significant digits so a read-back is bit-exact.
    pub fn write_table<W: Write>(&self, writer: W) -> Result<(), ModelError> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec![
            "model".to_string(),
            "input".to_string(),
            "prior".to_string(),
        ];
        header.extend((0..self.num_classes).map(|c| format!("p{c}")));
        out.write_record(&header).map_err(format_error)?;
        for (m, table) in self.tables.iter().enumerate() {
            for x in 0..self.num_inputs {
                let mut record = vec![
                    m.to_string(),
                    x.to_string(),
                    format!("{:.16e}", self.prior[m]),
                ];
                record.extend(table.row(x).iter().map(|p| format!("{p:.16e}")));
                out.write_record(&record).map_err(format_error)?;
            }
        }
        out.flush().map_err(|e| ModelError::Format(e.to_string()))
    }

    /// Reads the format produced by [`ModelFamily::write_table`].
    pub fn read_table<R: Read>(reader: R) -> Result<Self, ModelError> {
        let mut input = csv::Reader::from_reader(reader);
        let num_classes = input
            .headers()
            .map_err(format_error)?
            .iter()
            .filter(|h| h.starts_with('p') && *h != "prior")
            .count();
        let mut rows: Vec<(usize, usize, f64, Vec<f64>)> = Vec::new();
        for (line, record) in input.records().enumerate() {
            let record = record.map_err(format_error)?;
            if record.len() != 3 + num_classes {
                return Err(ModelError::Format(format!(
                    "row {} has {} fields, expected {}",
                    line + 2,
                    record.len(),
                    3 + num_classes
                )));
            }
            let parse_index = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|e| ModelError::Format(format!("row {}: {e}", line + 2)))
            };
            let parse_real = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| ModelError::Format(format!("row {}: {e}", line + 2)))
            };
            let model = parse_index(&record[0])?;
            let x = parse_index(&record[1])?;
            let prior = parse_real(&record[2])?;
            let probs = (3..record.len())
                .map(|i| parse_real(&record[i]))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push((model, x, prior, probs));
        }
        let num_models = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let num_inputs = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        if rows.len() != num_models * num_inputs {
            return Err(ModelError::Format(format!(
                "expected {} rows for {num_models} models × {num_inputs} inputs, found {}",
                num_models * num_inputs,
                rows.len()
            )));
        }
        let mut probs = vec![vec![f64::NAN; num_inputs * num_classes]; num_models];
        let mut prior = vec![f64::NAN; num_models];
        let mut seen = vec![false; num_models * num_inputs];
        for (model, x, p, row) in rows {
            if std::mem::replace(&mut seen[model * num_inputs + x], true) {
                return Err(ModelError::Format(format!(
                    "duplicate row for model {model}, input {x}"
                )));
            }
            if !prior[model].is_nan() && prior[model] != p {
                return Err(ModelError::Format(format!(
                    "inconsistent prior for model {model}"
                )));
            }
            prior[model] = p;
            probs[model][x * num_classes..(x + 1) * num_classes].copy_from_slice(&row);
        }
        let tables = probs
            .into_iter()
            .map(|p| ConditionalTable::new(p, num_inputs, num_classes))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(tables, prior)
    }
}

fn format_error(e: csv::Error) -> ModelError {
    ModelError::Format(e.to_string())
}

/// Labelled data `L` as (input, class) pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSet {
    pairs: Vec<(usize, usize)>,
}

impl LabeledSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(
        family: &ModelFamily,
        pairs: Vec<(usize, usize)>,
    ) -> Result<Self, ModelError> {
        for &(x, y) in &pairs {
            family.check_observation(x, y)?;
        }
        Ok(Self { pairs })
    }

    pub fn push(&mut self, x: usize, y: usize) {
        self.pairs.push((x, y));
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Posterior over the models of a family, as normalized log-weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    log_weights: Vec<f64>,
}

impl Posterior {
    pub fn prior(family: &ModelFamily) -> Self {
        Self {
            log_weights: family.prior.iter().map(|p| p.ln()).collect(),
        }
    }

    /// Recomputes the posterior from the prior and every labelled pair.
    pub fn from_labels(family: &ModelFamily, labelled: &LabeledSet) -> Result<Self, ModelError> {
        let mut log_weights: Vec<f64> = family.prior.iter().map(|p| p.ln()).collect();
        for &(x, y) in labelled.pairs() {
            family.check_observation(x, y)?;
            for (m, lw) in log_weights.iter_mut().enumerate() {
                *lw += family.row(m, x)[y].ln();
            }
            if log_weights.iter().all(|lw| *lw == f64::NEG_INFINITY) {
                return Err(ModelError::ImpossibleEvidence { input: x, class: y });
            }
        }
        normalize_log_weights(&mut log_weights).ok_or(ModelError::InvalidFamily(
            "posterior is not normalizable".into(),
        ))?;
        Ok(Self { log_weights })
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|lw| lw.exp()).collect()
    }

    pub fn weight(&self, model: usize) -> f64 {
        self.log_weights[model].exp()
    }

    /// Bayes update on one observation, returning a new posterior.
    pub fn update(&self, family: &ModelFamily, x: usize, y: usize) -> Result<Self, ModelError> {
        family.check_observation(x, y)?;
        let mut log_weights: Vec<f64> = self
            .log_weights
            .iter()
            .enumerate()
            .map(|(m, lw)| lw + family.row(m, x)[y].ln())
            .collect();
        normalize_log_weights(&mut log_weights)
            .ok_or(ModelError::ImpossibleEvidence { input: x, class: y })?;
        Ok(Self { log_weights })
    }
}

/// Subtracts log-sum-exp; `None` when every weight is `-inf`.
fn normalize_log_weights(log_weights: &mut [f64]) -> Option<()> {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let lse = max
        + log_weights
            .iter()
            .map(|lw| (lw - max).exp())
            .sum::<f64>()
            .ln();
    log_weights.iter_mut().for_each(|lw| *lw -= lse);
    Some(())
}

pub fn posterior_update(
    posterior: &Posterior,
    family: &ModelFamily,
    observation: (usize, usize),
) -> Result<Posterior, ModelError> {
    posterior.update(family, observation.0, observation.1)
}

/// What-if posterior `Pr(θ | L, (x, y))`; the input posterior is untouched.
pub fn hypothetical_posterior(
    posterior: &Posterior,
    family: &ModelFamily,
    x: usize,
    y: usize,
) -> Result<Posterior, ModelError> {
    posterior.update(family, x, y)
}

/// `Σ_θ Pr(θ | L) Pr(· | θ, x)`.
pub fn posterior_predictive(
    posterior: &Posterior,
    family: &ModelFamily,
    x: usize,
) -> Result<Vec<f64>, ModelError> {
    family.check_input(x)?;
    let mut out = vec![0.0; family.num_classes()];
    mix_rows(family, &posterior.weights(), x, &mut out);
    Ok(out)
}

/// Writes `Σ_m weights[m] · row(m, x)` into `out`.
#[inline]
pub(crate) fn mix_rows(family: &ModelFamily, weights: &[f64], x: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (m, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (o, p) in out.iter_mut().zip(family.row(m, x)) {
            *o += w * p;
        }
    }
}

/// Parameters for drawing a synthetic identifiable family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub models: usize,
    pub inputs: usize,
    pub classes: usize,
    /// Symmetric Dirichlet concentration for each table row.
    #[serde(default = "default_concentration")]
    pub concentration: f64,
    /// Minimum max-abs difference between any two models' tables.
    #[serde(default = "default_separation")]
    pub min_separation: f64,
}

fn default_concentration() -> f64 {
    1.0
}

fn default_separation() -> f64 {
    0.05
}

impl GeneratorSpec {
    pub fn new(models: usize, inputs: usize, classes: usize) -> Self {
        Self {
            models,
            inputs,
            classes,
            concentration: default_concentration(),
            min_separation: default_separation(),
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.models == 0 || self.inputs == 0 || self.classes == 0 {
            return Err(ModelError::InvalidGenerator(
                "models, inputs and classes must be positive".into(),
            ));
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return Err(ModelError::InvalidGenerator(format!(
                "concentration must be positive, got {}",
                self.concentration
            )));
        }
        if !(self.min_separation >= 0.0) {
            return Err(ModelError::InvalidGenerator(format!(
                "min_separation must be non-negative, got {}",
                self.min_separation
            )));
        }
        Ok(())
    }
}

/// Draws a family with Dirichlet rows, floored at
/// [`GENERATED_PROBABILITY_FLOOR`], and a uniform prior.
pub fn sample_family(spec: &GeneratorSpec, seed: u64) -> Result<ModelFamily, ModelError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(spec.concentration, 1.0)
        .map_err(|e| ModelError::InvalidGenerator(e.to_string()))?;
    let separation = spec.min_separation.max(IDENTIFIABILITY_THRESHOLD * 2.0);
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let tables = (0..spec.models)
            .map(|_| {
                let mut probs = Vec::with_capacity(spec.inputs * spec.classes);
                for _ in 0..spec.inputs {
                    probs.extend(dirichlet_row(&mut rng, &gamma, spec.classes));
                }
                ConditionalTable::new(probs, spec.inputs, spec.classes)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let separated = (0..tables.len()).all(|i| {
            (i + 1..tables.len()).all(|j| tables[i].max_abs_difference(&tables[j]) >= separation)
        });
        if separated {
            return ModelFamily::with_uniform_prior(tables);
        }
    }
    Err(ModelError::GenerationFailed {
        separation: spec.min_separation,
        attempts: MAX_GENERATION_ATTEMPTS,
    })
}

fn dirichlet_row<R: Rng>(rng: &mut R, gamma: &Gamma<f64>, classes: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..classes).map(|_| gamma.sample(rng)).collect();
    let total: f64 = row.iter().sum();
    if !(total > 0.0) {
        // every draw underflowed: fall back to a uniform row
        row.iter_mut().for_each(|p| *p = 1.0);
    } else {
        row.iter_mut().for_each(|p| *p /= total);
    }
    row.iter_mut()
        .for_each(|p| *p = p.max(GENERATED_PROBABILITY_FLOOR));
    normalize_exact(&mut row);
    row
}

/// Normalizes and pushes rounding residue onto the largest entry.
fn normalize_exact(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= total);
    let residue = 1.0 - row.iter().sum::<f64>();
    if let Some(largest) = row
        .iter_mut()
        .max_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal))
    {
        *largest += residue;
    }
}
