//! Short-term component: joint spatiotemporal attention between the target
//! frame and its neighbor frames, decay rescaling, attention-modulated graph
//! convolution and the short-term output head.

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::model::{BoundParams, ModelConfig, ParamSpec};

const DIRECTIONS: [&str; 2] = ["fwd", "bwd"];

/// Additive attention weights shared by every frame of one direction.
#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights {
    /// `D x F`, applied to the target-time reading.
    pub w_a: Var,
    /// `D x F`, applied to the neighbor-frame reading.
    pub u_a: Var,
    /// `F x 1`.
    pub v_a: Var,
    /// `1 x F`.
    pub b_a: Var,
}

#[derive(Clone, Debug)]
pub struct DirectionWeights {
    pub attention: AttentionWeights,
    /// One `D x F` matrix per propagation order.
    pub w_s: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct JstGatParams {
    pub directions: Vec<DirectionWeights>,
    /// One `1 x F` bias per propagation order, shared across directions.
    pub b_s: Vec<Var>,
    /// `F x D`.
    pub w_fs: Var,
    /// `1 x D`.
    pub b_fs: Var,
}

impl JstGatParams {
    pub fn specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
        let (d, f) = (cfg.input_dim, cfg.hidden);
        let mut specs = Vec::new();
        for dir in &DIRECTIONS[..cfg.n_directions()] {
            specs.push(ParamSpec::weight(format!("jst.{dir}.w_a"), d, f));
            specs.push(ParamSpec::weight(format!("jst.{dir}.u_a"), d, f));
            specs.push(ParamSpec::weight(format!("jst.{dir}.v_a"), f, 1));
            specs.push(ParamSpec::bias(format!("jst.{dir}.b_a"), f));
            for l in 0..cfg.layers {
                specs.push(ParamSpec::weight(format!("jst.{dir}.w_s.{l}"), d, f));
            }
        }
        for l in 0..cfg.layers {
            specs.push(ParamSpec::bias(format!("jst.b_s.{l}"), f));
        }
        specs.push(ParamSpec::weight("jst.w_fs", f, d));
        specs.push(ParamSpec::bias("jst.b_fs", d));
        specs
    }

    pub fn bind(bound: &BoundParams, cfg: &ModelConfig) -> Result<Self> {
        let mut directions = Vec::new();
        for dir in &DIRECTIONS[..cfg.n_directions()] {
            directions.push(DirectionWeights {
                attention: AttentionWeights {
                    w_a: bound.get(&format!("jst.{dir}.w_a"))?,
                    u_a: bound.get(&format!("jst.{dir}.u_a"))?,
                    v_a: bound.get(&format!("jst.{dir}.v_a"))?,
                    b_a: bound.get(&format!("jst.{dir}.b_a"))?,
                },
                w_s: (0..cfg.layers)
                    .map(|l| bound.get(&format!("jst.{dir}.w_s.{l}")))
                    .collect::<Result<_>>()?,
            });
        }
        Ok(JstGatParams {
            directions,
            b_s: (0..cfg.layers)
                .map(|l| bound.get(&format!("jst.b_s.{l}")))
                .collect::<Result<_>>()?,
            w_fs: bound.get("jst.w_fs")?,
            b_fs: bound.get("jst.b_fs")?,
        })
    }
}

/// Attention maps over the short window, indexed `[direction][frame]` with
/// frames ordered oldest to newest. Row `i` is sensor `i` at the target time,
/// column `j` is sensor `j` at the historical frame.
#[derive(Clone, Debug)]
pub struct AttentionMaps {
    pub maps: Vec<Vec<Var>>,
    /// Distance of each frame from the target frame (`T_s, ..., 0`).
    pub offsets: Vec<usize>,
}

impl AttentionMaps {
    pub fn snapshot(&self, tape: &Tape) -> AttentionSnapshot {
        AttentionSnapshot {
            maps: self
                .maps
                .iter()
                .map(|dir| dir.iter().map(|&v| tape.value(v).clone()).collect())
                .collect(),
            offsets: self.offsets.clone(),
        }
    }
}

/// Detached copy of [`AttentionMaps`] values.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionSnapshot {
    pub maps: Vec<Vec<Matrix>>,
    pub offsets: Vec<usize>,
}

/// Row-softmaxed scores `e_ij = v^T tanh(W_a x_T^i + U_a x_t^j + b_a)`.
pub fn attention_scores(
    tape: &mut Tape,
    target_frame: Var,
    neighbor_frame: Var,
    weights: &AttentionWeights,
) -> Result<Var> {
    if target_frame.shape() != neighbor_frame.shape() {
        return Err(Error::shape(
            "attention_scores",
            target_frame.shape(),
            neighbor_frame.shape(),
        ));
    }
    let p = tape.matmul(target_frame, weights.w_a)?;
    let p = tape.add_row_broadcast(p, weights.b_a)?;
    let q = tape.matmul(neighbor_frame, weights.u_a)?;
    let scores = tape.additive_score(p, q, weights.v_a)?;
    tape.softmax_rows(scores)
}

/// Decay factor `exp(-offset * lambda)`.
pub fn decay_factor(offset: usize, lambda: f64) -> f64 {
    (-(offset as f64) * lambda).exp()
}

/// Multiplies each map by `exp(-offset * lambda)`.
pub fn rescale_maps(tape: &mut Tape, maps: &AttentionMaps, lambda: f64) -> AttentionMaps {
    let scaled = maps
        .maps
        .iter()
        .map(|dir| {
            dir.iter()
                .zip(&maps.offsets)
                .map(|(&m, &off)| tape.scale(m, decay_factor(off, lambda)))
                .collect()
        })
        .collect();
    AttentionMaps {
        maps: scaled,
        offsets: maps.offsets.clone(),
    }
}

/// Computes (unscaled) attention maps of the target frame (the last entry of
/// `frames`) against every frame, per direction.
pub fn attention_maps(
    tape: &mut Tape,
    frames: &[Var],
    params: &JstGatParams,
) -> Result<AttentionMaps> {
    let target = *frames
        .last()
        .ok_or_else(|| Error::InvalidArgument("no frames for attention".into()))?;
    let n = frames.len();
    let mut maps = Vec::with_capacity(params.directions.len());
    for dir in &params.directions {
        let mut per_frame = Vec::with_capacity(n);
        for &f in frames {
            per_frame.push(attention_scores(tape, target, f, &dir.attention)?);
        }
        maps.push(per_frame);
    }
    Ok(AttentionMaps {
        maps,
        offsets: (0..n).rev().collect(),
    })
}

/// Attention-modulated propagation summed over frames:
/// `Z^l_t = gamma X_t + mu (E_t * A) Z^{l-1}_t`, `Z^0_t = X_t`,
/// `Z_out = sum_t ReLU(sum_l Z^l_t W_s^l + b_s^l)` with directions summed
/// inside the activation.
#[allow(clippy::too_many_arguments)]
pub fn joint_st_conv(
    tape: &mut Tape,
    frames: &[Var],
    maps: &AttentionMaps,
    supports: &[Var],
    params: &JstGatParams,
    gamma: f64,
    mu: f64,
) -> Result<Var> {
    let layers = params.b_s.len();
    if layers == 0 {
        return Err(Error::InvalidArgument(
            "joint convolution needs at least one layer".into(),
        ));
    }
    if supports.len() != params.directions.len() || maps.maps.len() != supports.len() {
        return Err(Error::InvalidArgument(format!(
            "{} supports, {} weight directions, {} map directions",
            supports.len(),
            params.directions.len(),
            maps.maps.len()
        )));
    }
    if maps.maps.iter().any(|m| m.len() != frames.len()) {
        return Err(Error::InvalidArgument(
            "one attention map per frame is required".into(),
        ));
    }
    let mut out: Option<Var> = None;
    for (t, &x) in frames.iter().enumerate() {
        let residual = tape.scale(x, gamma);
        let mut pre: Option<Var> = None;
        for ((dir, &adj), dir_maps) in params.directions.iter().zip(supports).zip(&maps.maps) {
            if dir.w_s.len() != layers {
                return Err(Error::InvalidArgument(
                    "layer count mismatch across directions".into(),
                ));
            }
            let modulated = tape.hadamard(dir_maps[t], adj)?;
            let mut z = x;
            for &w in &dir.w_s {
                let prop = tape.matmul(modulated, z)?;
                let prop = tape.scale(prop, mu);
                z = tape.add(residual, prop)?;
                let term = tape.matmul(z, w)?;
                pre = Some(match pre {
                    Some(acc) => tape.add(acc, term)?,
                    None => term,
                });
            }
        }
        let mut pre = pre.expect("at least one direction");
        for &b in &params.b_s {
            pre = tape.add_row_broadcast(pre, b)?;
        }
        let act = tape.relu(pre);
        out = Some(match out {
            Some(acc) => tape.add(acc, act)?,
            None => act,
        });
    }
    out.ok_or_else(|| Error::InvalidArgument("joint convolution needs at least one frame".into()))
}

/// `Y = Z_out W_fs + b_fs`.
pub fn short_term_head(tape: &mut Tape, z_out: Var, params: &JstGatParams) -> Result<Var> {
    let y = tape.matmul(z_out, params.w_fs)?;
    tape.add_row_broadcast(y, params.b_fs)
}

/// Output of the short-term path.
#[derive(Clone, Debug)]
pub struct ShortTermOutput {
    pub prediction: Var,
    /// Rescaled attention maps.
    pub attention: AttentionMaps,
}

/// Runs attention, rescaling, joint convolution and the head over
/// pseudo-filled short-window frames (oldest first, target last).
pub fn short_term_forward(
    tape: &mut Tape,
    frames: &[Var],
    supports: &[Var],
    params: &JstGatParams,
    cfg: &ModelConfig,
) -> Result<ShortTermOutput> {
    let raw = attention_maps(tape, frames, params)?;
    let attention = rescale_maps(tape, &raw, cfg.decay);
    let z = joint_st_conv(
        tape, frames, &attention, supports, params, cfg.gamma, cfg.mu,
    )?;
    let prediction = short_term_head(tape, z, params)?;
    Ok(ShortTermOutput {
        prediction,
        attention,
    })
}
