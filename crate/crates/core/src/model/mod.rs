//! The full kriging network: pseudo-node filling, the short-term attention
//! path and the long-term skip recurrence, plus parameter bookkeeping.

mod checkpoint;
mod config;
mod params;

pub use checkpoint::{Checkpoint, OptimizerSnapshot};
pub use config::{AdaptiveNorm, ModelConfig};
pub use params::{BoundParams, Init, ModelParams, ParamSpec};

use crate::asggru::{self, AsgGruParams};
use crate::autodiff::{Matrix, Tape, Var};
use crate::data::ReadingWindow;
use crate::error::{Error, Result};
use crate::graph::SensorGraph;
use crate::jstgat::{self, AttentionMaps, AttentionSnapshot, JstGatParams};
use crate::pseudo::IdwPlan;

/// Every learnable tensor for `cfg`, in checkpoint order. Shapes depend on
/// `input_dim`, `hidden`, `layers` and `directed` only, never on node count.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut specs = JstGatParams::specs(cfg);
    specs.extend(AsgGruParams::specs(cfg));
    specs
}

/// Xavier-normal weights and zero biases, deterministic per seed.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    ModelParams::init(&param_specs(cfg), seed)
}

pub fn param_count(params: &ModelParams) -> usize {
    params.param_count()
}

/// Tape handles produced by [`forward_on_tape`].
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub short: Var,
    pub long: Var,
    pub attention: AttentionMaps,
    pub adaptive: Vec<Var>,
    pub steps: Vec<usize>,
    /// Pseudo-filled frames, oldest first.
    pub frames: Vec<Var>,
}

/// Detached forward results.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub short: Matrix,
    pub long: Matrix,
    pub attention: AttentionSnapshot,
    pub adaptive: Vec<Matrix>,
    pub steps: Vec<usize>,
    pub frames: Vec<Matrix>,
}

/// Records the full model on `tape`.
pub fn forward_on_tape(
    tape: &mut Tape,
    window: &ReadingWindow,
    graph: &SensorGraph,
    bound: &BoundParams,
    cfg: &ModelConfig,
) -> Result<ForwardVars> {
    let n = graph.n_nodes();
    if window.frames.len() != cfg.window {
        return Err(Error::InvalidArgument(format!(
            "window has {} frames, model expects {}",
            window.frames.len(),
            cfg.window
        )));
    }
    if window.known_mask.len() != n {
        return Err(Error::InvalidArgument(format!(
            "known mask covers {} nodes, graph has {n}",
            window.known_mask.len()
        )));
    }
    if graph.directed != cfg.directed {
        return Err(Error::Config(
            "graph direction does not match model config".into(),
        ));
    }
    let n_known = window.known_mask.iter().filter(|&&k| k).count();
    if n_known == 0 {
        return Err(Error::InvalidArgument("window has no known sensors".into()));
    }
    let plan = IdwPlan::new(
        &window.known_mask,
        &graph.dist,
        cfg.idw_k.min(n_known),
        cfg.idw_rho,
    )?;

    let mut frames = Vec::with_capacity(window.frames.len());
    for f in &window.frames {
        if f.shape() != (n, cfg.input_dim) {
            return Err(Error::shape("forward", f.shape(), (n, cfg.input_dim)));
        }
        frames.push(tape.constant(plan.apply(f)?.values));
    }
    let supports: Vec<Var> = graph
        .supports()
        .into_iter()
        .map(|a| tape.constant(a.clone()))
        .collect();

    let jst = JstGatParams::bind(bound, cfg)?;
    let asg = AsgGruParams::bind(bound, cfg)?;

    let short_frames = &frames[frames.len() - cfg.short_window - 1..];
    let short = jstgat::short_term_forward(tape, short_frames, &supports, &jst, cfg)?;
    let long = asggru::unroll(tape, &frames, short.prediction, &supports, &asg, cfg.skip)?;
    Ok(ForwardVars {
        short: short.prediction,
        long: long.prediction,
        attention: short.attention,
        adaptive: long.adaptive,
        steps: long.steps,
        frames,
    })
}

/// Inference-only forward pass.
pub fn forward(
    window: &ReadingWindow,
    graph: &SensorGraph,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<ForwardOutput> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let vars = forward_on_tape(&mut tape, window, graph, &bound, cfg)?;
    let out = ForwardOutput {
        short: tape.value(vars.short).clone(),
        long: tape.value(vars.long).clone(),
        attention: vars.attention.snapshot(&tape),
        adaptive: vars
            .adaptive
            .iter()
            .map(|&v| tape.value(v).clone())
            .collect(),
        steps: vars.steps,
        frames: vars.frames.iter().map(|&v| tape.value(v).clone()).collect(),
    };
    if !out.short.is_finite() || !out.long.is_finite() {
        return Err(Error::Numeric("non-finite model output".into()));
    }
    Ok(out)
}
