//! Test metrics, learning curves and the counting-based comparison matrix.
//!
//! Two methods are compared on a dataset by a paired t-test over five points
//! of their (seed-averaged) learning curves taken at maximally spaced
//! labelled sizes. Method `i` beats `j` on that dataset when
//! `t = √5 · mean(d) / sd(d) > 2.776` for `d = curve_i − curve_j`. Cell
//! `C[i][j]` counts the datasets on which `i` beats `j`; the row totals rank
//! the methods.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Two-sided 5% critical value of Student's t with 4 degrees of freedom.
pub const T_CRITICAL: f64 = 2.776;

/// Number of curve points entering each paired test.
pub const COMPARISON_POINTS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvaluationError {
    #[error("no predictions to evaluate")]
    Empty,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("class index {class} out of range for {num_classes} classes")]
    InvalidClass { class: usize, num_classes: usize },
    #[error("paired t-test needs exactly {COMPARISON_POINTS} values per series, got {0}")]
    WrongSampleSize(usize),
    #[error("labelled counts must increase strictly along a curve")]
    NonMonotoneCurve,
    #[error("curves do not share the same labelled counts")]
    MisalignedCurves,
    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for EvaluationError {
    fn from(e: csv::Error) -> Self {
        EvaluationError::Csv(e.to_string())
    }
}

fn check_pairs(predictions: &[usize], truths: &[usize]) -> Result<(), EvaluationError> {
    if predictions.len() != truths.len() {
        return Err(EvaluationError::LengthMismatch(
            predictions.len(),
            truths.len(),
        ));
    }
    if predictions.is_empty() {
        return Err(EvaluationError::Empty);
    }
    Ok(())
}

pub fn accuracy(predictions: &[usize], truths: &[usize]) -> Result<f64, EvaluationError> {
    check_pairs(predictions, truths)?;
    let hits = predictions
        .iter()
        .zip(truths)
        .filter(|(p, t)| p == t)
        .count();
    Ok(hits as f64 / truths.len() as f64)
}

/// Per-class F1 averaged with weights equal to each class's share of the
/// true labels. Classes absent from the truths carry no weight.
pub fn weighted_f1(
    predictions: &[usize],
    truths: &[usize],
    num_classes: usize,
) -> Result<f64, EvaluationError> {
    check_pairs(predictions, truths)?;
    let mut true_pos = vec![0usize; num_classes];
    let mut predicted = vec![0usize; num_classes];
    let mut support = vec![0usize; num_classes];
    for (&p, &t) in predictions.iter().zip(truths) {
        for class in [p, t] {
            if class >= num_classes {
                return Err(EvaluationError::InvalidClass { class, num_classes });
            }
        }
        predicted[p] += 1;
        support[t] += 1;
        if p == t {
            true_pos[t] += 1;
        }
    }
    let total = truths.len() as f64;
    Ok((0..num_classes)
        .filter(|&c| support[c] > 0)
        .map(|c| {
            // F1 = 2TP / (2TP + FP + FN) = 2TP / (predicted + support)
            let f1 = 2.0 * true_pos[c] as f64 / (predicted[c] + support[c]) as f64;
            f1 * support[c] as f64 / total
        })
        .sum())
}

/// `t = √n · mean(d) / sd(d)` with the `n − 1` divisor, `d = a − b`.
///
/// Returns `+∞`/`−∞`/`0` when every difference is equal (zero spread).
pub fn paired_t_statistic(a: &[f64], b: &[f64]) -> Result<f64, EvaluationError> {
    if a.len() != b.len() {
        return Err(EvaluationError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(EvaluationError::WrongSampleSize(a.len()));
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if sd == 0.0 {
        return Ok(if mean > 0.0 {
            f64::INFINITY
        } else if mean < 0.0 {
            f64::NEG_INFINITY
        } else {
            0.0
        });
    }
    Ok(n.sqrt() * mean / sd)
}

/// 1 when series `i` beats series `j` (`t > 2.776`), else 0.
pub fn paired_t_outcome(series_i: &[f64], series_j: &[f64]) -> Result<u8, EvaluationError> {
    if series_i.len() != COMPARISON_POINTS {
        return Err(EvaluationError::WrongSampleSize(series_i.len()));
    }
    if series_j.len() != COMPARISON_POINTS {
        return Err(EvaluationError::WrongSampleSize(series_j.len()));
    }
    Ok(u8::from(
        paired_t_statistic(series_i, series_j)? > T_CRITICAL,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub labelled: usize,
    pub weighted_f1: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    WeightedF1,
    Accuracy,
}

impl Metric {
    pub fn of(&self, point: &CurvePoint) -> f64 {
        match self {
            Metric::WeightedF1 => point.weighted_f1,
            Metric::Accuracy => point.accuracy,
        }
    }
}

/// One learning curve.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricSeries {
    points: Vec<CurvePoint>,
}

impl MetricSeries {
    pub fn new(points: Vec<CurvePoint>) -> Result<Self, EvaluationError> {
        if points.windows(2).any(|w| w[1].labelled <= w[0].labelled) {
            return Err(EvaluationError::NonMonotoneCurve);
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Pointwise mean of curves that share labelled counts (e.g. across seeds).
    pub fn mean(curves: &[MetricSeries]) -> Result<Self, EvaluationError> {
        let first = curves.first().ok_or(EvaluationError::Empty)?;
        let counts: Vec<usize> = first.points.iter().map(|p| p.labelled).collect();
        for c in curves {
            if c.points
                .iter()
                .map(|p| p.labelled)
                .ne(counts.iter().copied())
            {
                return Err(EvaluationError::MisalignedCurves);
            }
        }
        let n = curves.len() as f64;
        let points = counts
            .iter()
            .enumerate()
            .map(|(i, &labelled)| CurvePoint {
                labelled,
                weighted_f1: curves.iter().map(|c| c.points[i].weighted_f1).sum::<f64>() / n,
                accuracy: curves.iter().map(|c| c.points[i].accuracy).sum::<f64>() / n,
            })
            .collect();
        Ok(Self { points })
    }
}

/// Curve indices entering a comparison.
///
/// With `step = Some(s)` the points are `s, 2s, …, 5s`; otherwise they are
/// spread evenly so the last point is the end of the curve. `None` when the
/// curve is too short for five distinct points.
pub fn comparison_indices(len: usize, step: Option<usize>) -> Option<[usize; COMPARISON_POINTS]> {
    if len == 0 {
        return None;
    }
    let last = len - 1;
    let mut out = [0; COMPARISON_POINTS];
    match step {
        Some(s) => {
            if s == 0 || s * COMPARISON_POINTS > last {
                return None;
            }
            for (k, o) in out.iter_mut().enumerate() {
                *o = (k + 1) * s;
            }
        }
        None => {
            if last < COMPARISON_POINTS {
                return None;
            }
            for (k, o) in out.iter_mut().enumerate() {
                *o = ((k + 1) * last + COMPARISON_POINTS / 2) / COMPARISON_POINTS;
            }
        }
    }
    Some(out)
}

/// Curves keyed by dataset, then by method.
pub type CurveSet = BTreeMap<String, BTreeMap<String, MetricSeries>>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub method_i: String,
    pub method_j: String,
    pub dataset: String,
    pub outcome: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonMatrix {
    pub methods: Vec<String>,
    pub cells: Vec<Vec<usize>>,
    pub totals: Vec<usize>,
    pub outcomes: Vec<PairOutcome>,
    pub warnings: Vec<String>,
}

/// Builds the pairwise comparison matrix over every dataset in `curves`.
///
/// A missing, short or misaligned curve makes the affected pairs
/// incomparable: both cells get 0 and a warning is recorded.
pub fn comparison_matrix(
    curves: &CurveSet,
    methods: &[String],
    metric: Metric,
    step: Option<usize>,
) -> ComparisonMatrix {
    let n = methods.len();
    let mut cells = vec![vec![0usize; n]; n];
    let mut outcomes = Vec::new();
    let mut warnings = Vec::new();
    for (dataset, by_method) in curves {
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let (mi, mj) = (&methods[i], &methods[j]);
                match pair_samples(by_method.get(mi), by_method.get(mj), metric, step) {
                    Ok((a, b)) => {
                        let outcome = paired_t_outcome(&a, &b).unwrap_or(0);
                        cells[i][j] += outcome as usize;
                        outcomes.push(PairOutcome {
                            method_i: mi.clone(),
                            method_j: mj.clone(),
                            dataset: dataset.clone(),
                            outcome,
                        });
                    }
                    Err(reason) => {
                        if i < j {
                            warnings
                                .push(format!("{dataset}: {mi} vs {mj} incomparable ({reason})"));
                        }
                    }
                }
            }
        }
    }
    let totals = cells.iter().map(|row| row.iter().sum()).collect();
    ComparisonMatrix {
        methods: methods.to_vec(),
        cells,
        totals,
        outcomes,
        warnings,
    }
}

fn pair_samples(
    a: Option<&MetricSeries>,
    b: Option<&MetricSeries>,
    metric: Metric,
    step: Option<usize>,
) -> Result<(Vec<f64>, Vec<f64>), String> {
    let a = a.ok_or("missing series")?;
    let b = b.ok_or("missing series")?;
    if a.len() != b.len() {
        return Err(format!("curve lengths {} and {}", a.len(), b.len()));
    }
    let idx = comparison_indices(a.len(), step).ok_or("curve too short")?;
    let mut xs = Vec::with_capacity(COMPARISON_POINTS);
    let mut ys = Vec::with_capacity(COMPARISON_POINTS);
    for i in idx {
        if a.points[i].labelled != b.points[i].labelled {
            return Err("labelled counts differ".into());
        }
        xs.push(metric.of(&a.points[i]));
        ys.push(metric.of(&b.points[i]));
    }
    Ok((xs, ys))
}

impl ComparisonMatrix {
    /// Methods by descending total; equal totals sort by name.
    pub fn ranking(&self) -> Vec<(String, usize)> {
        let mut ranked: Vec<(String, usize)> = self
            .methods
            .iter()
            .cloned()
            .zip(self.totals.iter().copied())
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked
    }

    pub fn total_of(&self, method: &str) -> Option<usize> {
        self.methods
            .iter()
            .position(|m| m == method)
            .map(|i| self.totals[i])
    }

    /// `method,<m_1>,…,<m_n>,total`, one row per method.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), EvaluationError> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec!["method".to_string()];
        header.extend(self.methods.iter().cloned());
        header.push("total".into());
        out.write_record(&header)?;
        for (i, method) in self.methods.iter().enumerate() {
            let mut row = vec![method.clone()];
            row.extend(self.cells[i].iter().map(usize::to_string));
            row.push(self.totals[i].to_string());
            out.write_record(&row)?;
        }
        out.flush().map_err(|e| EvaluationError::Csv(e.to_string()))
    }

    /// Long format: `method_i,method_j,dataset,outcome`.
    pub fn write_long_csv<W: Write>(&self, writer: W) -> Result<(), EvaluationError> {
        let mut out = csv::Writer::from_writer(writer);
        for outcome in &self.outcomes {
            out.serialize(outcome)?;
        }
        if self.outcomes.is_empty() {
            out.write_record(["method_i", "method_j", "dataset", "outcome"])?;
        }
        out.flush().map_err(|e| EvaluationError::Csv(e.to_string()))
    }
}

/// Long-format learning curves: `dataset,method,labelled_count,weighted_f1,accuracy`.
pub fn write_curves_csv<W: Write>(curves: &CurveSet, writer: W) -> Result<(), EvaluationError> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record([
        "dataset",
        "method",
        "labelled_count",
        "weighted_f1",
        "accuracy",
    ])?;
    for (dataset, by_method) in curves {
        for (method, series) in by_method {
            for p in series.points() {
                out.write_record([
                    dataset.clone(),
                    method.clone(),
                    p.labelled.to_string(),
                    p.weighted_f1.to_string(),
                    p.accuracy.to_string(),
                ])?;
            }
        }
    }
    out.flush().map_err(|e| EvaluationError::Csv(e.to_string()))
}
