//! Long-term component: input-dependent adaptive adjacency and the skip
//! graph GRU.

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::diffusion;
use crate::model::{AdaptiveNorm, BoundParams, ModelConfig, ParamSpec};

const DIRECTIONS: [&str; 2] = ["fwd", "bwd"];
const GATES: [&str; 3] = ["r", "u", "c"];

/// One node encoder of the adaptive adjacency generator:
/// `tanh(conv(X | H, A) * (X W + b))`.
#[derive(Clone, Debug)]
pub struct NodeEncoder {
    /// `[direction][order]`, each `(D + F) x F`.
    pub theta: Vec<Vec<Var>>,
    pub fc_w: Var,
    pub fc_b: Var,
}

/// Weights of one GRU gate. Supports are the pre-defined directions followed
/// by the adaptive adjacency.
#[derive(Clone, Debug)]
pub struct GateWeights {
    pub theta: Vec<Vec<Var>>,
    pub bias: Var,
}

#[derive(Clone, Debug)]
pub struct AsgGruParams {
    pub source: NodeEncoder,
    pub target: NodeEncoder,
    pub reset: GateWeights,
    pub update: GateWeights,
    pub candidate: GateWeights,
    pub w_fl: Var,
    pub b_fl: Var,
    pub alpha: f64,
    pub adaptive_norm: AdaptiveNorm,
}

impl AsgGruParams {
    pub fn specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
        let (d, f) = (cfg.input_dim, cfg.hidden);
        let c = d + f;
        let dirs = &DIRECTIONS[..cfg.n_directions()];
        let mut specs = Vec::new();
        for enc in ["m1", "m2"] {
            for dir in dirs {
                for l in 0..cfg.layers {
                    specs.push(ParamSpec::weight(
                        format!("asg.{enc}.theta.{dir}.{l}"),
                        c,
                        f,
                    ));
                }
            }
            specs.push(ParamSpec::weight(format!("asg.{enc}.fc_w"), d, f));
            specs.push(ParamSpec::bias(format!("asg.{enc}.fc_b"), f));
        }
        for gate in GATES {
            for dir in dirs.iter().chain(&["adaptive"]) {
                for l in 0..cfg.layers {
                    specs.push(ParamSpec::weight(
                        format!("asg.{gate}.theta.{dir}.{l}"),
                        c,
                        f,
                    ));
                }
            }
            specs.push(ParamSpec::bias(format!("asg.{gate}.b"), f));
        }
        specs.push(ParamSpec::weight("asg.w_fl", f, d));
        specs.push(ParamSpec::bias("asg.b_fl", d));
        specs
    }

    pub fn bind(bound: &BoundParams, cfg: &ModelConfig) -> Result<Self> {
        let dirs = &DIRECTIONS[..cfg.n_directions()];
        let stack = |prefix: &str, dir: &str| -> Result<Vec<Var>> {
            (0..cfg.layers)
                .map(|l| bound.get(&format!("{prefix}.theta.{dir}.{l}")))
                .collect()
        };
        let encoder = |enc: &str| -> Result<NodeEncoder> {
            let prefix = format!("asg.{enc}");
            Ok(NodeEncoder {
                theta: dirs
                    .iter()
                    .map(|d| stack(&prefix, d))
                    .collect::<Result<_>>()?,
                fc_w: bound.get(&format!("{prefix}.fc_w"))?,
                fc_b: bound.get(&format!("{prefix}.fc_b"))?,
            })
        };
        let gate = |g: &str| -> Result<GateWeights> {
            let prefix = format!("asg.{g}");
            Ok(GateWeights {
                theta: dirs
                    .iter()
                    .chain(&["adaptive"])
                    .map(|d| stack(&prefix, d))
                    .collect::<Result<_>>()?,
                bias: bound.get(&format!("{prefix}.b"))?,
            })
        };
        Ok(AsgGruParams {
            source: encoder("m1")?,
            target: encoder("m2")?,
            reset: gate("r")?,
            update: gate("u")?,
            candidate: gate("c")?,
            w_fl: bound.get("asg.w_fl")?,
            b_fl: bound.get("asg.b_fl")?,
            alpha: cfg.alpha,
            adaptive_norm: cfg.adaptive_norm,
        })
    }
}

fn encode(tape: &mut Tape, x: Var, input: Var, supports: &[Var], enc: &NodeEncoder) -> Result<Var> {
    let graph_level = diffusion(tape, input, supports, &enc.theta)?;
    let node_level = tape.matmul(x, enc.fc_w)?;
    let node_level = tape.add_row_broadcast(node_level, enc.fc_b)?;
    let gated = tape.hadamard(graph_level, node_level)?;
    Ok(tape.tanh(gated))
}

/// `ReLU(tanh(alpha (M1 M2^T - M2 M1^T)))`, optionally row-normalized.
pub fn adaptive_from_encodings(
    tape: &mut Tape,
    source: Var,
    target: Var,
    alpha: f64,
    norm: AdaptiveNorm,
) -> Result<Var> {
    if source.shape() != target.shape() {
        return Err(Error::shape(
            "adaptive_adjacency",
            source.shape(),
            target.shape(),
        ));
    }
    let tt = tape.transpose(target);
    let st = tape.transpose(source);
    let forward = tape.matmul(source, tt)?;
    let backward = tape.matmul(target, st)?;
    let diff = tape.sub(forward, backward)?;
    let scaled = tape.scale(diff, alpha);
    let sat = tape.tanh(scaled);
    let adj = tape.relu(sat);
    Ok(match norm {
        AdaptiveNorm::None => adj,
        AdaptiveNorm::Row => tape.normalize_rows(adj),
    })
}

/// Adaptive adjacency for one recurrent step from the current frame and the
/// skip-delayed hidden state.
pub fn adaptive_adjacency(
    tape: &mut Tape,
    x_t: Var,
    h_prev: Var,
    supports: &[Var],
    params: &AsgGruParams,
) -> Result<Var> {
    if x_t.rows() != h_prev.rows() {
        return Err(Error::shape(
            "adaptive_adjacency",
            x_t.shape(),
            h_prev.shape(),
        ));
    }
    let input = tape.concat_cols(&[x_t, h_prev])?;
    let m1 = encode(tape, x_t, input, supports, &params.source)?;
    let m2 = encode(tape, x_t, input, supports, &params.target)?;
    adaptive_from_encodings(tape, m1, m2, params.alpha, params.adaptive_norm)
}

fn gate_preactivation(
    tape: &mut Tape,
    input: Var,
    supports: &[Var],
    gate: &GateWeights,
) -> Result<Var> {
    let z = diffusion(tape, input, supports, &gate.theta)?;
    tape.add_row_broadcast(z, gate.bias)
}

/// One skip-GRU update `H_t = u * H_prev + (1 - u) * c`.
pub fn gru_step(
    tape: &mut Tape,
    x_t: Var,
    h_prev: Var,
    supports: &[Var],
    adaptive_adj: Var,
    params: &AsgGruParams,
) -> Result<Var> {
    if x_t.rows() != h_prev.rows() {
        return Err(Error::shape("gru_step", x_t.shape(), h_prev.shape()));
    }
    let mut all: Vec<Var> = supports.to_vec();
    all.push(adaptive_adj);
    let input = tape.concat_cols(&[x_t, h_prev])?;
    let r = gate_preactivation(tape, input, &all, &params.reset)?;
    let r = tape.sigmoid(r);
    let u = gate_preactivation(tape, input, &all, &params.update)?;
    let u = tape.sigmoid(u);
    let h_reset = tape.hadamard(h_prev, r)?;
    let cand_input = tape.concat_cols(&[x_t, h_reset])?;
    let c = gate_preactivation(tape, cand_input, &all, &params.candidate)?;
    let c = tape.tanh(c);
    let keep = tape.hadamard(u, h_prev)?;
    let one_minus_u = tape.one_minus(u);
    let fresh = tape.hadamard(one_minus_u, c)?;
    tape.add(keep, fresh)
}

/// `Y = H_T W_fl + b_fl`.
pub fn long_term_head(tape: &mut Tape, h: Var, params: &AsgGruParams) -> Result<Var> {
    let y = tape.matmul(h, params.w_fl)?;
    tape.add_row_broadcast(y, params.b_fl)
}

/// Frame indices visited by the skip recurrence, anchored so the last step
/// lands on the final frame.
pub fn step_indices(window: usize, skip: usize) -> Result<Vec<usize>> {
    if window == 0 {
        return Err(Error::InvalidArgument("empty window".into()));
    }
    if window == 1 {
        return Ok(vec![0]);
    }
    if skip == 0 || skip >= window {
        return Err(Error::InvalidArgument(format!(
            "skip {skip} must be in 1..{window} for a window of {window} frames"
        )));
    }
    let mut idx: Vec<usize> = (0..window).rev().step_by(skip).collect();
    idx.reverse();
    Ok(idx)
}

#[derive(Clone, Debug)]
pub struct LongTermOutput {
    pub prediction: Var,
    pub hidden: Var,
    /// Adaptive adjacency at each recurrent step.
    pub adaptive: Vec<Var>,
    pub steps: Vec<usize>,
}

/// Runs the skip recurrence over `frames` (pseudo-filled, oldest first). The
/// final step consumes `short_term_out` in place of the last frame.
pub fn unroll(
    tape: &mut Tape,
    frames: &[Var],
    short_term_out: Var,
    supports: &[Var],
    params: &AsgGruParams,
    skip: usize,
) -> Result<LongTermOutput> {
    let steps = step_indices(frames.len(), skip)?;
    let n = short_term_out.rows();
    let hidden = params.w_fl.rows();
    let mut h = tape.constant(Matrix::zeros(n, hidden));
    let mut adaptive = Vec::with_capacity(steps.len());
    let last = *steps.last().expect("non-empty");
    for &i in &steps {
        let x = if i == last { short_term_out } else { frames[i] };
        if x.shape() != short_term_out.shape() {
            return Err(Error::shape("unroll", x.shape(), short_term_out.shape()));
        }
        let a = adaptive_adjacency(tape, x, h, supports, params)?;
        h = gru_step(tape, x, h, supports, a, params)?;
        adaptive.push(a);
    }
    let prediction = long_term_head(tape, h, params)?;
    Ok(LongTermOutput {
        prediction,
        hidden: h,
        adaptive,
        steps,
    })
}
