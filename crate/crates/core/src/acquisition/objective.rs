//! The posterior cost functionals behind the acquisition gains.
//!
//! `Q_S(L)` measures the posterior-expected gap between the score of the
//! true model and the score of the Bayes predictive. It has three equivalent
//! forms: an expected score difference, an expected Bregman divergence
//! `B(Pr(·|θ,x), Pr(·|L,x))`, and a generator gap
//! `E_θ[G(Pr(·|θ,x))] − G(Pr(·|L,x))`. All three are provided so they can be
//! checked against each other.
//!
//! Expectations over `x` are means over the supplied inputs.

use crate::model_space::{mix_rows, ModelFamily, Posterior};
use crate::scoring_rules::{bregman_unchecked, ScoringRule};

fn mean_over<F: FnMut(usize) -> f64>(inputs: &[usize], f: F) -> f64 {
    if inputs.is_empty() {
        return 0.0;
    }
    inputs.iter().copied().map(f).sum::<f64>() / inputs.len() as f64
}

fn predictive(family: &ModelFamily, weights: &[f64], x: usize) -> Vec<f64> {
    let mut q = vec![0.0; family.num_classes()];
    mix_rows(family, weights, x, &mut q);
    q
}

/// `E_x E_θ E_{y|θ,x}[S(Pr(·|θ,x), y) − S(Pr(·|L,x), y)]`.
pub fn objective_score_form(
    family: &ModelFamily,
    posterior: &Posterior,
    rule: &dyn ScoringRule,
    inputs: &[usize],
) -> f64 {
    let weights = posterior.weights();
    mean_over(inputs, |x| {
        let q = predictive(family, &weights, x);
        weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(m, w)| {
                let p = family.row(m, x);
                let gap: f64 = p
                    .iter()
                    .enumerate()
                    .filter(|(_, py)| **py > 0.0)
                    .map(|(y, py)| py * (rule.score_unchecked(p, y) - rule.score_unchecked(&q, y)))
                    .sum();
                w * gap
            })
            .sum()
    })
}

/// `E_x E_θ[B(Pr(·|θ,x), Pr(·|L,x))]`.
pub fn objective_bregman_form(
    family: &ModelFamily,
    posterior: &Posterior,
    rule: &dyn ScoringRule,
    inputs: &[usize],
) -> f64 {
    let weights = posterior.weights();
    mean_over(inputs, |x| {
        let q = predictive(family, &weights, x);
        weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(m, w)| w * bregman_unchecked(rule, family.row(m, x), &q))
            .sum()
    })
}

/// `E_x[E_θ G(Pr(·|θ,x)) − G(Pr(·|L,x))]`.
pub fn objective_generator_form(
    family: &ModelFamily,
    posterior: &Posterior,
    rule: &dyn ScoringRule,
    inputs: &[usize],
) -> f64 {
    let weights = posterior.weights();
    mean_over(inputs, |x| {
        let q = predictive(family, &weights, x);
        let expected: f64 = weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(m, w)| w * rule.generator(family.row(m, x)))
            .sum();
        expected - rule.generator(&q)
    })
}

/// Bayesian classification regret:
/// `E_x[min_y(1 − Pr(y|L,x)) − E_θ min_y(1 − Pr(y|θ,x))]`.
pub fn mocu_objective(family: &ModelFamily, posterior: &Posterior, inputs: &[usize]) -> f64 {
    let weights = posterior.weights();
    let min_error = |p: &[f64]| p.iter().map(|v| 1.0 - v).fold(f64::INFINITY, f64::min);
    mean_over(inputs, |x| {
        let q = predictive(family, &weights, x);
        let expected: f64 = weights
            .iter()
            .enumerate()
            .map(|(m, w)| w * min_error(family.row(m, x)))
            .sum();
        min_error(&q) - expected
    })
}
