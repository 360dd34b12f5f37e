use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::model::{ModelParams, OptimizerSnapshot};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: ModelParams,
    pub v: ModelParams,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros = || {
            let mut z = ModelParams::new();
            for (k, p) in params.iter() {
                z.insert(k.clone(), Matrix::zeros(p.rows(), p.cols()))
                    .expect("unique names");
            }
            z
        };
        AdamState {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn snapshot(&self) -> OptimizerSnapshot {
        OptimizerSnapshot {
            step: self.step,
            first_moment: self.m.clone(),
            second_moment: self.v.clone(),
        }
    }

    pub fn from_snapshot(s: &OptimizerSnapshot) -> Self {
        AdamState {
            step: s.step,
            m: s.first_moment.clone(),
            v: s.second_moment.clone(),
        }
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Backward(format!("missing gradient for {name}")))?;
        let m = state
            .m
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("no optimizer state for {name}")))?;
        if g.shape() != p.shape() || m.shape() != p.shape() {
            return Err(Error::shape("adam_step", p.shape(), g.shape()));
        }
        let m = m.as_mut_slice();
        let v = state
            .v
            .get_mut(name)
            .expect("moments share names")
            .as_mut_slice();
        for (((w, &g), m), v) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m).zip(v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *w -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|(_, g)| g.as_slice().iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            g.as_mut_slice().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}
