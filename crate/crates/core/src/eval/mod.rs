//! Metrics, classical baselines and window-sliding evaluation.

mod metrics;
mod strategy;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{metrics, EvalReport, SensorMetrics};
pub use strategy::{
    BuildContext, Builder, Head, Idw, Interpolator, InterpolatorRegistry, Knn, Lsjstn,
};

use crate::autodiff::Matrix;
use crate::data::{make_windows, Dataset, ReadingWindow, Split};
use crate::error::{Error, Result};
use crate::graph::SensorGraph;
use crate::model::{self, ModelConfig, ModelParams};

/// Which nodes take part and which of them are known.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub nodes: Vec<usize>,
    pub known: Vec<bool>,
}

impl Partition {
    /// All sensors; training sensors known, testing sensors unknown.
    pub fn evaluation(dataset: &Dataset) -> Self {
        let (nodes, known) = dataset.evaluation_partition();
        Partition { nodes, known }
    }
}

/// Evaluation window settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalPlan {
    pub split: Split,
    /// Frames per window; targets start `history - 1` frames into the split
    /// so every method is scored on the same target frames.
    pub history: usize,
    /// Score every `stride`-th window.
    pub stride: usize,
}

impl EvalPlan {
    pub fn new(split: Split, history: usize) -> Self {
        EvalPlan {
            split,
            history,
            stride: 1,
        }
    }
}

/// Runs `predict` on every planned window and scores each returned head on
/// the unknown nodes, in raw units.
fn score<F>(
    dataset: &Dataset,
    plan: EvalPlan,
    part: &Partition,
    n_heads: usize,
    predict: F,
) -> Result<Vec<EvalReport>>
where
    F: Fn(&ReadingWindow, &SensorGraph) -> Result<Vec<Matrix>> + Sync,
{
    if part.nodes.len() != part.known.len() {
        return Err(Error::InvalidArgument(
            "partition node and mask lengths differ".into(),
        ));
    }
    if plan.stride == 0 {
        return Err(Error::InvalidArgument(
            "evaluation stride must be positive".into(),
        ));
    }
    let graph = if part.nodes.len() == dataset.n_sensors()
        && part.nodes.iter().enumerate().all(|(a, &b)| a == b)
    {
        dataset.graph.clone()
    } else {
        dataset.graph.restrict(&part.nodes)?
    };
    let targets: Vec<usize> = make_windows(dataset.splits.range(plan.split), plan.history)?
        .step_by(plan.stride)
        .map(|r| r.end - 1)
        .collect();
    let preds: Vec<Result<Vec<Matrix>>> = targets
        .par_iter()
        .map(|&t| {
            let w = dataset.window(t, plan.history, &part.nodes, part.known.clone())?;
            predict(&w, &graph)
        })
        .collect();

    let unknown: Vec<usize> = (0..part.nodes.len()).filter(|&i| !part.known[i]).collect();
    if unknown.is_empty() {
        return Err(Error::InvalidArgument(
            "no unknown nodes to evaluate".into(),
        ));
    }
    let norm = dataset.normalizer;
    let mut reports = Vec::with_capacity(n_heads);
    let preds: Vec<Vec<Matrix>> = preds.into_iter().collect::<Result<_>>()?;
    for head in 0..n_heads {
        let mut all_p = Vec::new();
        let mut all_t = Vec::new();
        let mut per_node: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); unknown.len()];
        for (&t, p) in targets.iter().zip(&preds) {
            let m = &p[head];
            for (slot, &u) in unknown.iter().enumerate() {
                let node = part.nodes[u];
                if !dataset.is_observed(t, node) {
                    continue;
                }
                let pv = norm.denorm(m.get(u, 0));
                if !pv.is_finite() {
                    return Err(Error::Numeric(format!("non-finite prediction at time {t}")));
                }
                let tv = dataset.raw(t, node);
                all_p.push(pv);
                all_t.push(tv);
                per_node[slot].0.push(pv);
                per_node[slot].1.push(tv);
            }
        }
        let mut report = metrics(&all_p, &all_t)?;
        report.per_sensor = unknown
            .iter()
            .zip(&per_node)
            .filter(|(_, (p, _))| !p.is_empty())
            .map(|(&u, (p, t))| {
                let n = p.len() as f64;
                let (abs, sq) = p.iter().zip(t).fold((0.0, 0.0), |(a, s), (x, y)| {
                    (a + (x - y).abs(), s + (x - y).powi(2))
                });
                SensorMetrics {
                    id: dataset.ids()[part.nodes[u]].clone(),
                    mae: abs / n,
                    rmse: (sq / n).sqrt(),
                    n_points: p.len(),
                }
            })
            .collect();
        reports.push(report);
    }
    Ok(reports)
}

/// Scores `method` on the unknown nodes of `part`.
pub fn evaluate_on(
    dataset: &Dataset,
    method: &dyn Interpolator,
    plan: EvalPlan,
    part: &Partition,
) -> Result<EvalReport> {
    let need = method.window_len();
    if need > plan.history {
        return Err(Error::InvalidArgument(format!(
            "{} needs {need} frames but the plan provides {}",
            method.name(),
            plan.history
        )));
    }
    let mut r = score(dataset, plan, part, 1, |w, g| {
        let trimmed;
        let w = if w.frames.len() > need {
            trimmed = ReadingWindow {
                frames: w.frames[w.frames.len() - need..].to_vec(),
                ..w.clone()
            };
            &trimmed
        } else {
            w
        };
        Ok(vec![method.interpolate(w, g)?])
    })?;
    Ok(r.remove(0))
}

/// Training sensors interpolate testing sensors.
pub fn evaluate(
    dataset: &Dataset,
    method: &dyn Interpolator,
    plan: EvalPlan,
) -> Result<EvalReport> {
    evaluate_on(dataset, method, plan, &Partition::evaluation(dataset))
}

pub fn baseline_knn(dataset: &Dataset, k: usize) -> Result<EvalReport> {
    if k > dataset.sensor_split.train.len() {
        return Err(Error::InvalidArgument(format!(
            "knn k = {k} exceeds the {} training sensors",
            dataset.sensor_split.train.len()
        )));
    }
    evaluate(dataset, &Knn { k }, EvalPlan::new(Split::Test, 1))
}

pub fn baseline_idw(dataset: &Dataset, rho: f64) -> Result<EvalReport> {
    evaluate(dataset, &Idw { rho }, EvalPlan::new(Split::Test, 1))
}

/// Both output heads of the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEvalReport {
    pub long: EvalReport,
    pub short: EvalReport,
}

/// Scores both heads; the long-term head is the primary result.
pub fn evaluate_model_on(
    dataset: &Dataset,
    params: &ModelParams,
    config: &ModelConfig,
    plan: EvalPlan,
    part: &Partition,
) -> Result<ModelEvalReport> {
    let mut r = score(dataset, plan, part, 2, |w, g| {
        let out = model::forward(w, g, params, config)?;
        Ok(vec![out.long, out.short])
    })?;
    let short = r.pop().expect("two heads");
    let long = r.pop().expect("two heads");
    Ok(ModelEvalReport { long, short })
}

/// Test range, training sensors known, testing sensors unknown.
pub fn evaluate_model(
    dataset: &Dataset,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<ModelEvalReport> {
    evaluate_model_on(
        dataset,
        params,
        config,
        EvalPlan::new(Split::Test, config.window),
        &Partition::evaluation(dataset),
    )
}
