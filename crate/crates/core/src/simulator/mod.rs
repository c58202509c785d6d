//! Pool-based active learning runs against a synthetic oracle.
//!
//! A run draws a pool of inputs, labels an initial random subset, then
//! repeatedly scores the remaining pool, acquires a batch, asks the oracle
//! for labels and refits. Every randomised step derives its stream from the
//! run seed, so a run is reproducible bit for bit.

mod ensemble;
mod oracle;

use std::io::{Read, Write};
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ensemble::{
    class_marginal, ensemble_fit, held_out_log_score, select_smoothing, smoothed_table,
    smoothing_targets, Ensemble, EnsembleMode, EnsembleSpec, DEFAULT_PRIOR_CONCENTRATION,
    DEFAULT_SMOOTHING, SMOOTHING_GRID,
};
pub use oracle::{Oracle, OracleSession};

use crate::acquisition::{
    score_pool, AcquisitionContext, AcquisitionError, Strategy, DEFAULT_WMOCU_K,
};
use crate::batch_diversity::{
    select_batch, select_top, top_count, BatchError, BatchRequest, DEFAULT_KMEANS_MAX_ITERS,
    DEFAULT_TOP_FRACTION,
};
use crate::evaluation::{accuracy, weighted_f1, CurvePoint, EvaluationError, MetricSeries};
use crate::model_space::{mix_rows, LabeledSet, ModelError, ModelFamily, Posterior};
use crate::scoring_rules::RuleRegistry;

const STREAM_POOL: u64 = 1;
const STREAM_TEST: u64 = 2;
const STREAM_SPLIT: u64 = 3;
const STREAM_ENSEMBLE: u64 = 1 << 32;
const STREAM_KMEANS: u64 = 2 << 32;
/// Oracle query indices for the test set start here, clear of acquisitions.
const TEST_QUERY_OFFSET: u64 = 1 << 62;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed trajectory: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchSelection {
    /// Top-fraction filter, k-means on score-change vectors, nearest per centroid.
    Diverse,
    /// The `B` highest scores.
    Top,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub strategy: String,
    pub batch_size: usize,
    /// Total number of labels, initial ones included.
    pub budget: usize,
    pub initial_size: usize,
    /// Pool items, drawn uniformly with replacement from the input space.
    pub pool_size: usize,
    pub estimation_pool_size: usize,
    pub test_size: usize,
    pub ensemble_mode: EnsembleMode,
    pub ensemble_size: usize,
    pub train_fraction: f64,
    /// Spread of ensemble members' random smoothing targets; 0 disables them.
    pub prior_concentration: f64,
    pub top_fraction: f64,
    pub kmeans_max_iters: usize,
    pub batch_selection: BatchSelection,
    pub wmocu_k: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            strategy: "core_mse".into(),
            batch_size: 1,
            budget: 300,
            initial_size: 26,
            pool_size: 1000,
            estimation_pool_size: 600,
            test_size: 1000,
            ensemble_mode: EnsembleMode::Exact,
            ensemble_size: 5,
            train_fraction: 0.7,
            prior_concentration: DEFAULT_PRIOR_CONCENTRATION,
            top_fraction: DEFAULT_TOP_FRACTION,
            kmeans_max_iters: DEFAULT_KMEANS_MAX_ITERS,
            batch_selection: BatchSelection::Diverse,
            wmocu_k: DEFAULT_WMOCU_K,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn strategy(&self, registry: &RuleRegistry) -> Result<Strategy, SimulationError> {
        Strategy::parse(&self.strategy, registry, self.wmocu_k, self.seed).map_err(|e| match e {
            AcquisitionError::UnknownStrategy(name) => {
                SimulationError::Config(format!("strategy: unknown strategy {name:?}"))
            }
            AcquisitionError::InvalidWmocuK(k) => {
                SimulationError::Config(format!("wmocu_k: must be positive, got {k}"))
            }
            other => other.into(),
        })
    }

    pub fn validate(&self, registry: &RuleRegistry) -> Result<Strategy, SimulationError> {
        let fail = |msg: String| Err(SimulationError::Config(msg));
        let strategy = self.strategy(registry)?;
        if self.batch_size == 0 {
            return fail("batch_size: must be positive".into());
        }
        if self.budget < self.initial_size {
            return fail(format!(
                "budget: {} is below initial_size {}",
                self.budget, self.initial_size
            ));
        }
        if self.pool_size < self.initial_size {
            return fail(format!(
                "pool_size: {} is below initial_size {}",
                self.pool_size, self.initial_size
            ));
        }
        if self.estimation_pool_size == 0 {
            return fail("estimation_pool_size: must be positive".into());
        }
        if self.test_size == 0 {
            return fail("test_size: must be positive".into());
        }
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return fail(format!(
                "top_fraction: must lie in (0, 1], got {}",
                self.top_fraction
            ));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return fail(format!(
                "train_fraction: must lie in (0, 1], got {}",
                self.train_fraction
            ));
        }
        if !(self.prior_concentration >= 0.0 && self.prior_concentration.is_finite()) {
            return fail(format!(
                "prior_concentration: must be non-negative and finite, got {}",
                self.prior_concentration
            ));
        }
        if self.ensemble_mode != EnsembleMode::Exact {
            if self.ensemble_size == 0 {
                return fail("ensemble_size: must be positive".into());
            }
            if self.initial_size == 0 {
                return fail("initial_size: ensembles need at least one initial label".into());
            }
            if (self.train_fraction * self.initial_size as f64).round() == 0.0 {
                return fail(format!(
                    "train_fraction: {} leaves no training labels from {} initial labels",
                    self.train_fraction, self.initial_size
                ));
            }
        }
        if self.uses_diverse_batches(&strategy) && self.budget <= self.pool_size {
            // the smallest pool a full batch is drawn from
            let smallest = self.pool_size - self.budget + self.batch_size;
            let smallest = smallest.min(self.pool_size - self.initial_size);
            if smallest > 0 && top_count(smallest, self.top_fraction)? < self.batch_size {
                return fail(format!(
                    "top_fraction: {} of a {smallest}-item pool leaves fewer than batch_size {} candidates",
                    self.top_fraction, self.batch_size
                ));
            }
        }
        Ok(strategy)
    }

    fn uses_diverse_batches(&self, strategy: &Strategy) -> bool {
        self.batch_size > 1
            && self.batch_selection == BatchSelection::Diverse
            && strategy.has_pair_vectors()
    }
}

/// The random draws that fix a run before any acquisition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSetup {
    /// Inputs labelled before the first acquisition, in query order.
    pub initial: Vec<usize>,
    /// Remaining pool items.
    pub unlabelled: Vec<usize>,
    pub estimation_pool: Vec<usize>,
    pub test_inputs: Vec<usize>,
}

fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

impl RunSetup {
    pub fn draw(config: &RunConfig, num_inputs: usize) -> Result<Self, SimulationError> {
        if num_inputs == 0 {
            return Err(SimulationError::Config("family has no inputs".into()));
        }
        if config.pool_size < config.initial_size {
            return Err(SimulationError::Config(
                "pool_size: below initial_size".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(STREAM_POOL);
        let pool: Vec<usize> = (0..config.pool_size)
            .map(|_| rng.random_range(0..num_inputs))
            .collect();

        rng.set_stream(STREAM_SPLIT);
        let est_size = config.estimation_pool_size.min(pool.len());
        let mut est_positions = sample(&mut rng, pool.len(), est_size).into_vec();
        est_positions.sort_unstable();
        let estimation_pool = est_positions.iter().map(|&i| pool[i]).collect();

        let initial_positions = sample(&mut rng, pool.len(), config.initial_size).into_vec();
        let mut is_initial = vec![false; pool.len()];
        for &i in &initial_positions {
            is_initial[i] = true;
        }
        let initial = initial_positions.iter().map(|&i| pool[i]).collect();
        let unlabelled = pool
            .iter()
            .zip(&is_initial)
            .filter(|(_, init)| !**init)
            .map(|(x, _)| *x)
            .collect();

        rng.set_stream(STREAM_TEST);
        let test_inputs = (0..config.test_size)
            .map(|_| rng.random_range(0..num_inputs))
            .collect();

        Ok(Self {
            initial,
            unlabelled,
            estimation_pool,
            test_inputs,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub labelled_count: usize,
    /// Inputs acquired in this iteration, in selection order.
    pub acquired: Vec<usize>,
    /// Exact posterior mass on the true model given all labels so far.
    pub posterior_mass_true: f64,
    pub accuracy: f64,
    pub weighted_f1: f64,
    /// Best acquisition score when the batch was chosen.
    pub max_score: Option<f64>,
    /// Wall-clock seconds spent scoring and selecting.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub strategy: String,
    pub records: Vec<IterationRecord>,
    pub labelled: LabeledSet,
    /// The pool ran out before the budget was spent.
    pub truncated: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryRow {
    iteration: usize,
    labelled_count: usize,
    weighted_f1: f64,
    accuracy: f64,
    posterior_mass_true: f64,
    max_score: Option<f64>,
    acquired: String,
}

impl Trajectory {
    pub fn final_record(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn curve(&self) -> Result<MetricSeries, SimulationError> {
        Ok(MetricSeries::new(
            self.records
                .iter()
                .map(|r| CurvePoint {
                    labelled: r.labelled_count,
                    weighted_f1: r.weighted_f1,
                    accuracy: r.accuracy,
                })
                .collect(),
        )?)
    }

    /// All acquired inputs in order.
    pub fn acquired(&self) -> Vec<usize> {
        self.records
            .iter()
            .flat_map(|r| r.acquired.iter().copied())
            .collect()
    }

    /// Everything except timings; stable across reruns.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SimulationError> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.records {
            w.serialize(TrajectoryRow {
                iteration: r.iteration,
                labelled_count: r.labelled_count,
                weighted_f1: r.weighted_f1,
                accuracy: r.accuracy,
                posterior_mass_true: r.posterior_mass_true,
                max_score: r.max_score,
                acquired: r
                    .acquired
                    .iter()
                    .map(|x| x.to_string())
                    .collect::<Vec<_>>()
                    .join(";"),
            })?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn write_timing_csv<W: Write>(&self, writer: W) -> Result<(), SimulationError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["iteration", "seconds"])?;
        for r in &self.records {
            w.write_record([r.iteration.to_string(), r.seconds.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Reads records written by [`Trajectory::write_csv`]; timings are zero.
    pub fn read_records<R: Read>(reader: R) -> Result<Vec<IterationRecord>, SimulationError> {
        let mut r = csv::Reader::from_reader(reader);
        let mut out = Vec::new();
        for row in r.deserialize() {
            let row: TrajectoryRow = row?;
            let acquired = if row.acquired.is_empty() {
                Vec::new()
            } else {
                row.acquired
                    .split(';')
                    .map(|s| {
                        s.parse()
                            .map_err(|_| SimulationError::Format(format!("bad input id {s:?}")))
                    })
                    .collect::<Result<_, _>>()?
            };
            out.push(IterationRecord {
                iteration: row.iteration,
                labelled_count: row.labelled_count,
                acquired,
                posterior_mass_true: row.posterior_mass_true,
                accuracy: row.accuracy,
                weighted_f1: row.weighted_f1,
                max_score: row.max_score,
                seconds: 0.0,
            });
        }
        Ok(out)
    }
}

/// Current belief: a family of candidate models and weights over them.
struct Belief {
    family: ModelFamily,
    posterior: Posterior,
}

fn fit_belief(
    config: &RunConfig,
    family: &ModelFamily,
    exact: &Posterior,
    labelled: &LabeledSet,
    iteration: usize,
) -> Result<Belief, SimulationError> {
    if config.ensemble_mode == EnsembleMode::Exact {
        return Ok(Belief {
            family: family.clone(),
            posterior: exact.clone(),
        });
    }
    let spec = EnsembleSpec {
        mode: config.ensemble_mode,
        size: config.ensemble_size,
        train_fraction: config.train_fraction,
        prior_concentration: config.prior_concentration,
    };
    let ensemble = ensemble_fit(
        labelled,
        &spec,
        sub_seed(config.seed, STREAM_ENSEMBLE + iteration as u64),
        family.num_inputs(),
        family.num_classes(),
    )?;
    let posterior = Posterior::prior(&ensemble.members);
    Ok(Belief {
        family: ensemble.members,
        posterior,
    })
}

/// Argmax-predictive metrics on the test set; lowest class wins ties.
fn evaluate(
    belief: &Belief,
    test_inputs: &[usize],
    test_labels: &[usize],
) -> Result<(f64, f64), SimulationError> {
    let k = belief.family.num_classes();
    let weights = belief.posterior.weights();
    let mut q = vec![0.0; k];
    let predictions_by_input: Vec<usize> = (0..belief.family.num_inputs())
        .map(|x| {
            mix_rows(&belief.family, &weights, x, &mut q);
            let mut best = 0;
            for y in 1..k {
                if q[y] > q[best] {
                    best = y;
                }
            }
            best
        })
        .collect();
    let predictions: Vec<usize> = test_inputs
        .iter()
        .map(|&x| predictions_by_input[x])
        .collect();
    Ok((
        accuracy(&predictions, test_labels)?,
        weighted_f1(&predictions, test_labels, k)?,
    ))
}

/// Runs with a freshly drawn setup and the built-in rules.
pub fn run_active_learning(
    config: &RunConfig,
    family: &ModelFamily,
    oracle: &Oracle,
) -> Result<Trajectory, SimulationError> {
    let setup = RunSetup::draw(config, family.num_inputs())?;
    run_with_setup(config, family, oracle, &RuleRegistry::default(), &setup)
}

pub fn run_with_setup(
    config: &RunConfig,
    family: &ModelFamily,
    oracle: &Oracle,
    registry: &RuleRegistry,
    setup: &RunSetup,
) -> Result<Trajectory, SimulationError> {
    let strategy = config.validate(registry)?;
    if setup.estimation_pool.is_empty() {
        return Err(SimulationError::Config("estimation pool is empty".into()));
    }
    if setup.test_inputs.is_empty() {
        return Err(SimulationError::Config("test set is empty".into()));
    }
    let checked = |inputs: &[usize]| inputs.iter().try_for_each(|&x| family.check_input(x));
    checked(&setup.initial)?;
    checked(&setup.unlabelled)?;
    checked(&setup.estimation_pool)?;
    checked(&setup.test_inputs)?;

    let mut session = OracleSession::new(*oracle);
    let test_labels: Vec<usize> = setup
        .test_inputs
        .iter()
        .enumerate()
        .map(|(i, &x)| oracle.label(family, x, TEST_QUERY_OFFSET + i as u64))
        .collect::<Result<_, _>>()?;

    let mut labelled = LabeledSet::new();
    let mut exact = Posterior::prior(family);
    for &x in &setup.initial {
        let y = session.label(family, x)?;
        labelled.push(x, y);
        exact = exact.update(family, x, y)?;
    }
    let mut unlabelled = setup.unlabelled.clone();

    let mut belief = fit_belief(config, family, &exact, &labelled, 0)?;
    let (acc, f1) = evaluate(&belief, &setup.test_inputs, &test_labels)?;
    let mut records = vec![IterationRecord {
        iteration: 0,
        labelled_count: labelled.len(),
        acquired: Vec::new(),
        posterior_mass_true: exact.weight(oracle.true_model()),
        accuracy: acc,
        weighted_f1: f1,
        max_score: None,
        seconds: 0.0,
    }];

    let diverse = config.uses_diverse_batches(&strategy);
    let mut truncated = false;
    let mut iteration = 0;
    while labelled.len() < config.budget {
        let wanted = config.batch_size.min(config.budget - labelled.len());
        if unlabelled.len() < wanted {
            truncated = true;
        }
        let b = wanted.min(unlabelled.len());
        if b == 0 {
            break;
        }
        iteration += 1;

        let start = Instant::now();
        let ctx = AcquisitionContext::new(
            &belief.family,
            &belief.posterior,
            &unlabelled,
            &setup.estimation_pool,
        )?;
        let bound = strategy.at_iteration(iteration as u64);
        let scores = score_pool(&ctx, &bound, diverse && b > 1)?;
        let positions = if b == unlabelled.len() {
            (0..b).collect()
        } else if b == 1 {
            vec![scores.argmax().ok_or(BatchError::EmptyScores)?]
        } else if diverse && top_count(unlabelled.len(), config.top_fraction)? >= b {
            let req = BatchRequest {
                batch_size: b,
                top_fraction: config.top_fraction,
                seed: sub_seed(config.seed, STREAM_KMEANS + iteration as u64),
                kmeans_max_iters: config.kmeans_max_iters,
            };
            select_batch(&scores, &req)?
        } else {
            // also reached when an exhausted pool is too small for the cut
            select_top(&scores, b)?
        };
        let max_score = scores
            .per_x
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let seconds = start.elapsed().as_secs_f64();

        let acquired: Vec<usize> = positions.iter().map(|&p| unlabelled[p]).collect();
        for &x in &acquired {
            let y = session.label(family, x)?;
            labelled.push(x, y);
            exact = exact.update(family, x, y)?;
        }
        let mut sorted = positions;
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        for p in sorted {
            unlabelled.remove(p);
        }

        belief = fit_belief(config, family, &exact, &labelled, iteration)?;
        let (acc, f1) = evaluate(&belief, &setup.test_inputs, &test_labels)?;
        records.push(IterationRecord {
            iteration,
            labelled_count: labelled.len(),
            acquired,
            posterior_mass_true: exact.weight(oracle.true_model()),
            accuracy: acc,
            weighted_f1: f1,
            max_score: Some(max_score),
            seconds,
        });
        if truncated {
            break;
        }
    }

    Ok(Trajectory {
        strategy: strategy.name(),
        records,
        labelled,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_space::{sample_family, ConditionalTable, GeneratorSpec};
    use rand::seq::SliceRandom;

    fn two_models() -> ModelFamily {
        ModelFamily::with_uniform_prior(vec![
            ConditionalTable::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap(),
            ConditionalTable::from_rows(&[vec![0.0, 1.0], vec![0.5, 0.5]]).unwrap(),
        ])
        .unwrap()
    }

    fn small_config(strategy: &str) -> RunConfig {
        RunConfig {
            strategy: strategy.into(),
            budget: 40,
            initial_size: 5,
            pool_size: 200,
            estimation_pool_size: 100,
            test_size: 200,
            seed: 4,
            ..RunConfig::default()
        }
    }

    #[test]
    fn single_acquisition_of_separating_input_collapses_posterior() {
        let family = two_models();
        let oracle = Oracle::new(&family, 1, 0).unwrap();
        let config = RunConfig {
            strategy: "core_log".into(),
            budget: 1,
            initial_size: 0,
            pool_size: 50,
            estimation_pool_size: 50,
            test_size: 10,
            ..RunConfig::default()
        };
        let setup = RunSetup {
            initial: vec![],
            unlabelled: vec![1, 1, 0, 1],
            estimation_pool: vec![0, 1],
            test_inputs: vec![0, 1],
        };
        let t =
            run_with_setup(&config, &family, &oracle, &RuleRegistry::default(), &setup).unwrap();
        assert_eq!(t.records.len(), 2);
        assert_eq!(t.records[1].acquired, vec![0]);
        assert_eq!(t.records[1].posterior_mass_true, 1.0);
        assert_eq!(t.records[0].posterior_mass_true, 0.5);
    }

    #[test]
    fn seeded_run_identifies_true_model() {
        let family = sample_family(&GeneratorSpec::new(10, 50, 3), 17).unwrap();
        let oracle = Oracle::new(&family, 3, 17).unwrap();
        let config = RunConfig {
            strategy: "core_mse".into(),
            batch_size: 5,
            budget: 150,
            seed: 17,
            ..RunConfig::default()
        };
        let t = run_active_learning(&config, &family, &oracle).unwrap();
        let last = t.final_record().unwrap();
        assert_eq!(last.labelled_count, 150);
        assert!(
            last.posterior_mass_true >= 0.99,
            "mass {}",
            last.posterior_mass_true
        );
        assert!(!t.truncated);
        for pair in t.records.windows(2) {
            assert!(pair[1].labelled_count > pair[0].labelled_count);
            assert!(pair[1].labelled_count - pair[0].labelled_count <= 5);
        }
    }

    #[test]
    fn reruns_are_identical_across_strategies_and_modes() {
        let family = sample_family(&GeneratorSpec::new(6, 12, 3), 5).unwrap();
        let oracle = Oracle::new(&family, 0, 9).unwrap();
        for name in ["core_log", "bald", "max_ent", "mocu", "wmocu", "random"] {
            for mode in [EnsembleMode::Exact, EnsembleMode::DynamicVs] {
                let config = RunConfig {
                    ensemble_mode: mode,
                    batch_size: 3,
                    ..small_config(name)
                };
                let a = run_active_learning(&config, &family, &oracle).unwrap();
                let b = run_active_learning(&config, &family, &oracle).unwrap();
                let (mut ca, mut cb) = (Vec::new(), Vec::new());
                a.write_csv(&mut ca).unwrap();
                b.write_csv(&mut cb).unwrap();
                assert_eq!(ca, cb, "{name} {mode:?}");
                assert_eq!(a.labelled, b.labelled);
            }
        }
    }

    #[test]
    fn acquisitions_ignore_pool_order() {
        let family = sample_family(&GeneratorSpec::new(8, 20, 3), 2).unwrap();
        let oracle = Oracle::new(&family, 2, 5).unwrap();
        let config = small_config("core_mse");
        let setup = RunSetup::draw(&config, family.num_inputs()).unwrap();
        let mut shuffled = setup.clone();
        shuffled
            .unlabelled
            .shuffle(&mut ChaCha8Rng::seed_from_u64(77));
        let registry = RuleRegistry::default();
        let a = run_with_setup(&config, &family, &oracle, &registry, &setup).unwrap();
        let b = run_with_setup(&config, &family, &oracle, &registry, &shuffled).unwrap();
        assert_eq!(a.acquired(), b.acquired());
        assert_eq!(a.labelled, b.labelled);
    }

    #[test]
    fn pool_exhaustion_truncates() {
        let family = two_models();
        let oracle = Oracle::new(&family, 0, 1).unwrap();
        let config = RunConfig {
            batch_size: 2,
            budget: 20,
            initial_size: 2,
            pool_size: 9,
            test_size: 5,
            ..RunConfig::default()
        };
        let t = run_active_learning(&config, &family, &oracle).unwrap();
        assert!(t.truncated);
        assert_eq!(t.final_record().unwrap().labelled_count, 9);
        assert_eq!(t.records.last().unwrap().acquired.len(), 1);
    }

    #[test]
    fn final_batch_is_cut_to_budget() {
        let family = sample_family(&GeneratorSpec::new(4, 10, 2), 8).unwrap();
        let oracle = Oracle::new(&family, 0, 1).unwrap();
        let config = RunConfig {
            batch_size: 4,
            budget: 15,
            ..small_config("bald")
        };
        let t = run_active_learning(&config, &family, &oracle).unwrap();
        let counts: Vec<usize> = t.records.iter().map(|r| r.labelled_count).collect();
        assert_eq!(counts, vec![5, 9, 13, 15]);
        assert!(!t.truncated);
    }

    #[test]
    fn ensemble_modes_run_and_report_exact_mass() {
        let family = sample_family(&GeneratorSpec::new(5, 10, 3), 12).unwrap();
        let oracle = Oracle::new(&family, 1, 3).unwrap();
        for mode in [
            EnsembleMode::DynamicVs,
            EnsembleMode::ConstantVs,
            EnsembleMode::NoVs,
        ] {
            let config = RunConfig {
                ensemble_mode: mode,
                ..small_config("core_log")
            };
            let t = run_active_learning(&config, &family, &oracle).unwrap();
            let exact = Posterior::from_labels(&family, &t.labelled).unwrap();
            let last = t.final_record().unwrap();
            approx::assert_abs_diff_eq!(last.posterior_mass_true, exact.weight(1), epsilon = 1e-12);
            assert!((0.0..=1.0).contains(&last.accuracy));
        }
    }

    #[test]
    fn csv_round_trip_and_invalid_configs() {
        let family = two_models();
        let oracle = Oracle::new(&family, 0, 1).unwrap();
        let config = RunConfig {
            budget: 8,
            initial_size: 2,
            pool_size: 20,
            test_size: 10,
            ..RunConfig::default()
        };
        let t = run_active_learning(&config, &family, &oracle).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let records = Trajectory::read_records(buf.as_slice()).unwrap();
        assert_eq!(records.len(), t.records.len());
        for (a, b) in records.iter().zip(&t.records) {
            assert_eq!(a.acquired, b.acquired);
            assert_eq!(a.posterior_mass_true, b.posterior_mass_true);
            assert_eq!(a.max_score, b.max_score);
        }

        let registry = RuleRegistry::default();
        let bad = |c: RunConfig| c.validate(&registry).unwrap_err().to_string();
        assert!(bad(RunConfig {
            strategy: "corexyz".into(),
            ..config.clone()
        })
        .contains("strategy"));
        assert!(bad(RunConfig {
            batch_size: 0,
            ..config.clone()
        })
        .contains("batch_size"));
        assert!(bad(RunConfig {
            budget: 1,
            ..config.clone()
        })
        .contains("budget"));
        assert!(bad(RunConfig {
            wmocu_k: 0.0,
            strategy: "wmocu".into(),
            ..config.clone()
        })
        .contains("wmocu_k"));
        assert!(bad(RunConfig {
            ensemble_mode: EnsembleMode::NoVs,
            initial_size: 0,
            ..config.clone()
        })
        .contains("initial_size"));
        assert!(bad(RunConfig {
            batch_size: 20,
            top_fraction: 0.1,
            ..config.clone()
        })
        .contains("top_fraction"));
    }
}
