// SPDX-License-Identifier: MIT OR Apache-2.0

use ndarray::{Array1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::ClassLabel;
use crate::error::{Error, Result};
use crate::lm::Model;

/// Input row for probe training: a pooled hidden-state vector and its class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub features: Vec<f32>,
    pub class_label: ClassLabel,
    pub source_id: String,
}

/// Mean of the final (post layer norm) hidden states over every position.
pub fn featurize(tokens: &[u32], model: &Model) -> Result<Array1<f32>> {
    if tokens.is_empty() {
        return Err(Error::arg("cannot featurize an empty token sequence"));
    }
    let hooks = model.forward_with_hooks(tokens, model.config().n_layers)?;
    Ok(mean_rows(hooks.final_hidden.view()))
}

/// Row mean accumulated in f64.
pub(crate) fn mean_rows(m: ArrayView2<f32>) -> Array1<f32> {
    let n = m.nrows() as f64;
    m.mapv(f64::from).sum_axis(Axis(0)).mapv(|v| (v / n) as f32)
}
