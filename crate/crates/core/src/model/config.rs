use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the learned adjacency is normalized before it enters the gates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdaptiveNorm {
    None,
    #[default]
    Row,
}

/// Architecture and inference hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Window length `T` (frames, including the target frame).
    pub window: usize,
    /// Short-term neighbor frames `T_s`.
    pub short_window: usize,
    /// Recurrent skip `T_k`.
    pub skip: usize,
    /// Neighbors used for pseudo-node synthesis.
    pub idw_k: usize,
    /// Inverse-distance decay `rho`.
    pub idw_rho: f64,
    /// Attention decay `lambda`.
    pub decay: f64,
    /// Saturation rate `alpha` of the adaptive adjacency.
    pub alpha: f64,
    pub gamma: f64,
    pub mu: f64,
    /// Hidden size `F`.
    pub hidden: usize,
    /// Graph convolution order `L`.
    pub layers: usize,
    /// Attributes per node `D`.
    pub input_dim: usize,
    pub directed: bool,
    pub adaptive_norm: AdaptiveNorm,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            window: 25,
            short_window: 3,
            skip: 4,
            idw_k: 5,
            idw_rho: 1.0,
            decay: 1.0,
            alpha: 2.0,
            gamma: 0.1,
            mu: 0.9,
            hidden: 16,
            layers: 3,
            input_dim: 1,
            directed: false,
            adaptive_norm: AdaptiveNorm::Row,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.window < 2 {
            return fail(format!("window must be at least 2, got {}", self.window));
        }
        if self.skip == 0 || self.skip >= self.window {
            return fail(format!(
                "skip must be in 1..window ({}), got {}",
                self.window, self.skip
            ));
        }
        if !(self.window - 1).is_multiple_of(self.skip) {
            return fail(format!(
                "window - 1 ({}) must be divisible by skip ({})",
                self.window - 1,
                self.skip
            ));
        }
        if self.short_window >= self.window {
            return fail(format!(
                "short_window ({}) must be below window ({})",
                self.short_window, self.window
            ));
        }
        for (name, v) in [
            ("idw_rho", self.idw_rho),
            ("decay", self.decay),
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("mu", self.mu),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("idw_k", self.idw_k),
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("input_dim", self.input_dim),
        ] {
            if v == 0 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn n_directions(&self) -> usize {
        if self.directed {
            2
        } else {
            1
        }
    }
}
