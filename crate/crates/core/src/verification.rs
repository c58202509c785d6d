//! Numerical checks of the engine's core identities on random instances.
//!
//! Every check takes the rules (or strategies) under test as parameters, so a
//! deliberately broken rule can be fed in and seen to fail.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::acquisition::{
    delta_q, objective_bregman_form, objective_generator_form, objective_score_form, score_pool,
    AcquisitionContext, Strategy,
};
use crate::model_space::{sample_family, GeneratorSpec, LabeledSet, ModelFamily, Posterior};
use crate::scoring_rules::{RuleHandle, RuleRegistry};
use crate::simulator::{run_with_setup, Oracle, RunConfig, RunSetup, SimulationError};

pub const NONNEGATIVITY_TOLERANCE: f64 = 1e-10;
pub const EQUIVALENCE_TOLERANCE: f64 = 1e-9;
pub const CONVERGENCE_MASS: f64 = 0.99;
pub const CONVERGENCE_GAIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub instances: usize,
    /// Worst value seen, in the units the tolerance applies to.
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct SuiteReport {
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn extend(&mut self, other: SuiteReport) {
        self.checks.extend(other.checks);
    }
}

/// Bounds for randomly drawn contexts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceSpec {
    pub instances: usize,
    pub max_models: usize,
    pub max_inputs: usize,
    pub max_classes: usize,
    pub max_labels: usize,
    pub seed: u64,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            instances: 200,
            max_models: 20,
            max_inputs: 50,
            max_classes: 5,
            max_labels: 30,
            seed: 0,
        }
    }
}

struct Instance {
    family: ModelFamily,
    posterior: Posterior,
}

fn draw_instance(spec: &InstanceSpec, index: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    loop {
        let gen = GeneratorSpec::new(
            rng.random_range(2..=spec.max_models.max(2)),
            rng.random_range(1..=spec.max_inputs.max(1)),
            rng.random_range(2..=spec.max_classes.max(2)),
        );
        let Ok(family) = sample_family(&gen, rng.random()) else {
            continue;
        };
        // labels sampled from a random member are always possible
        let truth = rng.random_range(0..family.num_models());
        let mut labelled = LabeledSet::new();
        for _ in 0..rng.random_range(0..=spec.max_labels) {
            let x = rng.random_range(0..family.num_inputs());
            let u: f64 = rng.random();
            let row = family.row(truth, x);
            let mut acc = 0.0;
            let y = row
                .iter()
                .position(|p| {
                    acc += p;
                    u < acc
                })
                .unwrap_or(row.len() - 1);
            labelled.push(x, y);
        }
        let posterior = Posterior::from_labels(&family, &labelled)
            .expect("labels drawn from a member of the family");
        return Instance { family, posterior };
    }
}

/// Acquisition scores must never be negative. For decomposable strategies
/// every point-wise gain `ΔQ(x | L, x')` is checked, otherwise the pool score.
pub fn nonnegativity_sweep(strategies: &[Strategy], spec: &InstanceSpec) -> SuiteReport {
    let mut report = SuiteReport::default();
    for strategy in strategies {
        let mut worst = f64::INFINITY;
        for i in 0..spec.instances {
            let inst = draw_instance(spec, i);
            let inputs: Vec<usize> = (0..inst.family.num_inputs()).collect();
            let ctx = AcquisitionContext::new(&inst.family, &inst.posterior, &inputs, &inputs)
                .expect("non-empty pools");
            let scores = score_pool(&ctx, strategy, true).expect("valid scoring context");
            match &scores.per_pair {
                Some(pairs) => {
                    for r in 0..pairs.rows() {
                        worst = pairs.row(r).iter().copied().fold(worst, f64::min);
                    }
                }
                None => worst = scores.per_x.iter().copied().fold(worst, f64::min),
            }
        }
        report.checks.push(CheckResult {
            name: format!("nonnegativity/{}", strategy.name()),
            instances: spec.instances,
            worst,
            tolerance: -NONNEGATIVITY_TOLERANCE,
            passed: worst >= -NONNEGATIVITY_TOLERANCE,
        });
    }
    report
}

/// Score, Bregman and generator forms of the objective agree, and the pool
/// gain equals `|X| · (Q(L) − E_y Q(L ∪ (x, y)))`.
pub fn formulation_equivalence(rules: &[RuleHandle], spec: &InstanceSpec) -> SuiteReport {
    let mut report = SuiteReport::default();
    for rule in rules {
        let mut forms = 0.0_f64;
        let mut gain = 0.0_f64;
        for i in 0..spec.instances {
            let inst = draw_instance(spec, i);
            let (family, post) = (&inst.family, &inst.posterior);
            let inputs: Vec<usize> = (0..family.num_inputs()).collect();
            let s = objective_score_form(family, post, rule.as_ref(), &inputs);
            let b = objective_bregman_form(family, post, rule.as_ref(), &inputs);
            let g = objective_generator_form(family, post, rule.as_ref(), &inputs);
            forms = forms
                .max((s - g).abs())
                .max((b - g).abs())
                .max((s - b).abs());

            let ctx =
                AcquisitionContext::new(family, post, &inputs, &inputs).expect("non-empty pools");
            let weights = post.weights();
            for &x in &inputs {
                let direct = delta_q(&ctx, rule, x).expect("valid input");
                let mut expected_after = 0.0;
                for y in 0..family.num_classes() {
                    let qy: f64 = (0..family.num_models())
                        .map(|m| weights[m] * family.row(m, x)[y])
                        .sum();
                    if qy > 0.0 {
                        let after = post.update(family, x, y).expect("positive predictive");
                        expected_after +=
                            qy * objective_generator_form(family, &after, rule.as_ref(), &inputs);
                    }
                }
                let via_objective = inputs.len() as f64 * (g - expected_after);
                gain = gain.max((direct - via_objective).abs());
            }
        }
        for (kind, worst) in [("objective_forms", forms), ("gain_vs_objective", gain)] {
            report.checks.push(CheckResult {
                name: format!("equivalence/{kind}/{}", rule.name()),
                instances: spec.instances,
                worst,
                tolerance: EQUIVALENCE_TOLERANCE,
                passed: worst <= EQUIVALENCE_TOLERANCE,
            });
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatterySpec {
    pub families: usize,
    pub generator: GeneratorSpec,
    pub budget: usize,
    pub seed: u64,
}

impl Default for BatterySpec {
    fn default() -> Self {
        Self {
            families: 20,
            generator: GeneratorSpec::new(10, 50, 3),
            budget: 300,
            seed: 0,
        }
    }
}

/// Exact-posterior runs with `B = 1` must concentrate on the true model and
/// leave no pool gain above [`CONVERGENCE_GAIN`] under any of `rules`.
pub fn convergence_battery(
    strategies: &[String],
    rules: &[RuleHandle],
    registry: &RuleRegistry,
    spec: &BatterySpec,
) -> Result<SuiteReport, SimulationError> {
    let mut report = SuiteReport::default();
    for name in strategies {
        let mut worst_mass = f64::INFINITY;
        let mut worst_gain = f64::NEG_INFINITY;
        for f in 0..spec.families {
            let seed = spec.seed.wrapping_add(f as u64);
            let family = sample_family(&spec.generator, seed)?;
            let oracle = Oracle::new(&family, f % family.num_models(), seed)?;
            let config = RunConfig {
                strategy: name.clone(),
                budget: spec.budget,
                seed,
                ..RunConfig::default()
            };
            let setup = RunSetup::draw(&config, family.num_inputs())?;
            let traj = run_with_setup(&config, &family, &oracle, registry, &setup)?;
            let last = traj.final_record().expect("at least the initial record");
            worst_mass = worst_mass.min(last.posterior_mass_true);

            let mut remaining = setup.unlabelled.clone();
            for x in traj.acquired() {
                let at = remaining
                    .iter()
                    .position(|&r| r == x)
                    .expect("acquired from the pool");
                remaining.swap_remove(at);
            }
            if remaining.is_empty() {
                continue;
            }
            let post = Posterior::from_labels(&family, &traj.labelled)?;
            let ctx = AcquisitionContext::new(&family, &post, &remaining, &setup.estimation_pool)?;
            for rule in rules {
                let scores = score_pool(&ctx, &Strategy::Bemps(rule.clone()), false)?;
                worst_gain = scores.per_x.iter().copied().fold(worst_gain, f64::max);
            }
        }
        report.checks.push(CheckResult {
            name: format!("convergence/mass/{name}"),
            instances: spec.families,
            worst: worst_mass,
            tolerance: CONVERGENCE_MASS,
            passed: worst_mass >= CONVERGENCE_MASS,
        });
        report.checks.push(CheckResult {
            name: format!("convergence/final_gain/{name}"),
            instances: spec.families,
            worst: worst_gain,
            tolerance: CONVERGENCE_GAIN,
            passed: worst_gain <= CONVERGENCE_GAIN,
        });
    }
    Ok(report)
}
