//! Interchangeable kriging methods behind one trait, selected by name.

use std::sync::Arc;

use indexmap::IndexMap;
use serde::Deserialize;
use serde_json::Value;

use crate::autodiff::Matrix;
use crate::data::ReadingWindow;
use crate::error::{Error, Result};
use crate::graph::SensorGraph;
use crate::model::{self, Checkpoint, ModelConfig, ModelParams};
use crate::pseudo::IdwPlan;

/// A method that fills unknown nodes of a window's last frame.
pub trait Interpolator: Send + Sync {
    fn name(&self) -> &str;

    /// Frames of history the method consumes (the target frame included).
    fn window_len(&self) -> usize {
        1
    }

    /// Predictions for every node of the target frame, on the window's scale.
    /// Rows of known nodes are unspecified.
    fn interpolate(&self, window: &ReadingWindow, graph: &SensorGraph) -> Result<Matrix>;
}

fn known_nodes(mask: &[bool]) -> Vec<usize> {
    (0..mask.len()).filter(|&i| mask[i]).collect()
}

/// Unweighted mean of the `k` nearest known sensors.
#[derive(Clone, Debug)]
pub struct Knn {
    pub k: usize,
}

impl Interpolator for Knn {
    fn name(&self) -> &str {
        "knn"
    }

    fn interpolate(&self, window: &ReadingWindow, graph: &SensorGraph) -> Result<Matrix> {
        let known = known_nodes(&window.known_mask);
        if self.k == 0 || self.k > known.len() {
            return Err(Error::InvalidArgument(format!(
                "knn with k = {} but {} known sensors",
                self.k,
                known.len()
            )));
        }
        let target = window.target();
        let mut out = target.clone();
        for u in (0..window.n_nodes()).filter(|&i| !window.known_mask[i]) {
            let mut cand: Vec<(f64, usize)> =
                known.iter().map(|&j| (graph.dist.get(u, j), j)).collect();
            cand.sort_by(|a, b| a.0.total_cmp(&b.0));
            for c in 0..target.cols() {
                let mean = cand[..self.k]
                    .iter()
                    .map(|&(_, j)| target.get(j, c))
                    .sum::<f64>()
                    / self.k as f64;
                out.set(u, c, mean);
            }
        }
        Ok(out)
    }
}

/// Inverse distance weighting over all known sensors.
#[derive(Clone, Debug)]
pub struct Idw {
    pub rho: f64,
}

impl Interpolator for Idw {
    fn name(&self) -> &str {
        "idw"
    }

    fn interpolate(&self, window: &ReadingWindow, graph: &SensorGraph) -> Result<Matrix> {
        let n_known = window.known_mask.iter().filter(|&&k| k).count();
        let plan = IdwPlan::new(&window.known_mask, &graph.dist, n_known.max(1), self.rho)?;
        Ok(plan.apply(window.target())?.values)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Short,
    #[default]
    Long,
}

/// The trained network.
#[derive(Clone, Debug)]
pub struct Lsjstn {
    pub params: Arc<ModelParams>,
    pub config: ModelConfig,
    pub head: Head,
}

impl Interpolator for Lsjstn {
    fn name(&self) -> &str {
        match self.head {
            Head::Long => "lsjstn",
            Head::Short => "lsjstn-short",
        }
    }

    fn window_len(&self) -> usize {
        self.config.window
    }

    fn interpolate(&self, window: &ReadingWindow, graph: &SensorGraph) -> Result<Matrix> {
        let out = model::forward(window, graph, &self.params, &self.config)?;
        Ok(match self.head {
            Head::Long => out.long,
            Head::Short => out.short,
        })
    }
}

/// Inputs a builder may need beyond its JSON parameters.
#[derive(Clone, Debug, Default)]
pub struct BuildContext {
    pub checkpoint: Option<Arc<Checkpoint>>,
}

pub type Builder = fn(&Value, &BuildContext) -> Result<Box<dyn Interpolator>>;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KnnParams {
    #[serde(default = "default_knn_k")]
    k: usize,
}

fn default_knn_k() -> usize {
    5
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IdwParams {
    #[serde(default = "default_rho")]
    rho: f64,
}

fn default_rho() -> f64 {
    1.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LsjstnParams {
    #[serde(default)]
    head: Head,
}

fn params_or_default<T: for<'de> Deserialize<'de>>(v: &Value) -> Result<T> {
    let v = if v.is_null() {
        Value::Object(Default::default())
    } else {
        v.clone()
    };
    serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
}

fn build_knn(v: &Value, _: &BuildContext) -> Result<Box<dyn Interpolator>> {
    let p: KnnParams = params_or_default(v)?;
    Ok(Box::new(Knn { k: p.k }))
}

fn build_idw(v: &Value, _: &BuildContext) -> Result<Box<dyn Interpolator>> {
    let p: IdwParams = params_or_default(v)?;
    if !(p.rho > 0.0) {
        return Err(Error::Config(format!(
            "idw rho must be positive, got {}",
            p.rho
        )));
    }
    Ok(Box::new(Idw { rho: p.rho }))
}

fn build_lsjstn(v: &Value, ctx: &BuildContext) -> Result<Box<dyn Interpolator>> {
    let p: LsjstnParams = params_or_default(v)?;
    let ck = ctx
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("lsjstn needs a checkpoint".into()))?;
    ck.params.check_layout(&model::param_specs(&ck.config))?;
    Ok(Box::new(Lsjstn {
        params: Arc::new(ck.params.clone()),
        config: ck.config.clone(),
        head: p.head,
    }))
}

fn build_lsjstn_short(v: &Value, ctx: &BuildContext) -> Result<Box<dyn Interpolator>> {
    let mut v = if v.is_null() {
        Value::Object(Default::default())
    } else {
        v.clone()
    };
    if let Value::Object(m) = &mut v {
        m.insert("head".into(), Value::String("short".into()));
    }
    build_lsjstn(&v, ctx)
}

/// Named interpolator builders.
pub struct InterpolatorRegistry {
    builders: IndexMap<String, Builder>,
}

impl Default for InterpolatorRegistry {
    fn default() -> Self {
        let mut r = InterpolatorRegistry {
            builders: IndexMap::new(),
        };
        r.register("knn", build_knn);
        r.register("idw", build_idw);
        r.register("lsjstn", build_lsjstn);
        r.register("lsjstn-short", build_lsjstn_short);
        r
    }
}

impl InterpolatorRegistry {
    pub fn register(&mut self, name: impl Into<String>, builder: Builder) {
        self.builders.insert(name.into(), builder);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.builders.keys().map(String::as_str)
    }

    pub fn build(
        &self,
        name: &str,
        params: &Value,
        ctx: &BuildContext,
    ) -> Result<Box<dyn Interpolator>> {
        let b = self.builders.get(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown method {name:?}; available: {}",
                self.names().collect::<Vec<_>>().join(", ")
            ))
        })?;
        b(params, ctx)
    }
}
