// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Most similar probe only.
    #[default]
    Argmax,
    /// Softmax-weighted blend of the unit probe rows.
    WeightedSum,
    /// A one-row probe set applied at every step.
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMode {
    Fixed,
    #[default]
    Dynamic,
}

/// Argument order of the divergence used for dynamic scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(steered ‖ unsteered)`
    #[default]
    SteeredFromUnsteered,
    /// `KL(unsteered ‖ steered)`
    UnsteeredFromSteered,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteeringConfig {
    pub selection_mode: SelectionMode,
    pub scaling_mode: ScalingMode,
    pub alpha_fixed: f64,
    /// Reference scale used to build the steered distribution for the KL.
    pub alpha_probe: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub tau: f64,
    pub top_p: f64,
    /// Steer even when every probe has negative similarity.
    pub use_negative_cos: bool,
    /// 1-based block whose pre-FFN states drive selection; `None` is the last block.
    pub intervention_layer: Option<usize>,
    pub max_new_tokens: usize,
    /// Map larger divergence to smaller alpha.
    #[serde(default)]
    pub invert_mapping: bool,
    #[serde(default)]
    pub kl_direction: KlDirection,
}

impl Default for SteeringConfig {
    fn default() -> Self {
        Self {
            selection_mode: SelectionMode::Argmax,
            scaling_mode: ScalingMode::Dynamic,
            alpha_fixed: 17.0,
            alpha_probe: 12.5,
            alpha_min: 0.0,
            alpha_max: 25.0,
            tau: 0.2,
            top_p: 0.9,
            use_negative_cos: false,
            intervention_layer: None,
            max_new_tokens: 20,
            invert_mapping: false,
            kl_direction: KlDirection::SteeredFromUnsteered,
        }
    }
}

impl SteeringConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::arg(format!(
                "top_p must lie in (0, 1], got {}",
                self.top_p
            )));
        }
        if !(self.alpha_min.is_finite()
            && self.alpha_max.is_finite()
            && self.alpha_min <= self.alpha_max)
        {
            return Err(Error::arg("alpha_min must not exceed alpha_max"));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::arg("tau must be positive"));
        }
        if !(self.alpha_fixed.is_finite() && self.alpha_fixed >= 0.0) {
            return Err(Error::arg("alpha_fixed must be nonnegative"));
        }
        if !self.alpha_probe.is_finite() {
            return Err(Error::arg("alpha_probe must be finite"));
        }
        if self.intervention_layer == Some(0) {
            return Err(Error::arg("intervention_layer is 1-based"));
        }
        Ok(())
    }

    /// `alpha_min + (alpha_max − alpha_min)(1 − e^{−kl/τ})`, or with the
    /// inverted mapping `alpha_min + (alpha_max − alpha_min)e^{−kl/τ}`.
    pub fn alpha_from_kl(&self, kl: f64) -> f64 {
        let kl = kl.max(0.0);
        let x = -kl / self.tau;
        let frac = if self.invert_mapping {
            x.exp()
        } else {
            -x.exp_m1()
        };
        (self.alpha_min + (self.alpha_max - self.alpha_min) * frac)
            .clamp(self.alpha_min, self.alpha_max)
    }
}
