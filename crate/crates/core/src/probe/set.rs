// SPDX-License-Identifier: MIT OR Apache-2.0

//! The probe set type and its JSON file format.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};

pub const PROBE_FORMAT_VERSION: u32 = 1;
pub const FEATURE_SOURCE_AVG_LAST_HIDDEN: &str = "averaged-last-hidden";

/// Rows of `vectors` are probe directions, positionally matched to
/// `categories`. Every row is finite with nonzero norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    vectors: Array2<f32>,
    categories: Vec<String>,
    bias: Option<Array1<f32>>,
    pub lambda: f64,
    pub val_accuracy: f64,
    pub feature_source: String,
    pub seed: u64,
}

impl ProbeSet {
    pub fn new(vectors: Array2<f32>, categories: Vec<String>) -> Result<Self> {
        let n = vectors.nrows();
        if n == 0 || vectors.ncols() == 0 {
            return Err(Error::arg("a probe set needs at least one nonempty row"));
        }
        if categories.len() != n {
            return Err(Error::arg(format!(
                "{} categories for {n} probe rows",
                categories.len()
            )));
        }
        for (i, c) in categories.iter().enumerate() {
            if categories[..i].contains(c) {
                return Err(Error::arg(format!("duplicate category {c:?}")));
            }
        }
        for (i, row) in vectors.outer_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::arg(format!("probe row {i} has non-finite entries")));
            }
            if row.iter().all(|&v| v == 0.0) {
                return Err(Error::arg(format!("probe row {i} is zero")));
            }
        }
        Ok(Self {
            vectors,
            categories,
            bias: None,
            lambda: 0.0,
            val_accuracy: 0.0,
            feature_source: FEATURE_SOURCE_AVG_LAST_HIDDEN.to_string(),
            seed: 0,
        })
    }

    pub fn with_bias(mut self, bias: Array1<f32>) -> Result<Self> {
        if bias.len() != self.len() {
            return Err(Error::arg(format!(
                "bias has {} entries for {} probes",
                bias.len(),
                self.len()
            )));
        }
        self.bias = Some(bias);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn d_model(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vectors(&self) -> ArrayView2<'_, f32> {
        self.vectors.view()
    }

    pub fn vector(&self, i: usize) -> ArrayView1<'_, f32> {
        self.vectors.row(i)
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == name)
    }

    pub fn bias(&self) -> Option<ArrayView1<'_, f32>> {
        self.bias.as_ref().map(|b| b.view())
    }

    /// Rows scaled to unit length, in f64.
    pub fn unit_vectors(&self) -> Array2<f64> {
        let w = self.vectors.mapv(f64::from);
        let norms = w.map_axis(Axis(1), |r| r.dot(&r).sqrt());
        w / &norms.insert_axis(Axis(1))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ProbeFile {
            format_version: PROBE_FORMAT_VERSION,
            d_model: self.d_model(),
            lambda: self.lambda,
            categories: self.categories.clone(),
            vectors: self.vectors.outer_iter().map(|r| r.to_vec()).collect(),
            bias: self.bias.as_ref().map(|b| b.to_vec()),
            val_accuracy: self.val_accuracy,
            feature_source: self.feature_source.clone(),
            seed: self.seed,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text).map_err(FormatError::from)?;
        let version = raw.get("format_version").and_then(|v| v.as_u64());
        match version {
            Some(v) if v == u64::from(PROBE_FORMAT_VERSION) => {}
            Some(v) => {
                return Err(FormatError::UnsupportedVersion {
                    found: v as u32,
                    expected: PROBE_FORMAT_VERSION,
                }
                .into())
            }
            None => {
                return Err(FormatError::MalformedHeader("missing format_version".into()).into())
            }
        }
        let file: ProbeFile = serde_json::from_value(raw).map_err(FormatError::from)?;
        if file.categories.len() != file.vectors.len() {
            return Err(FormatError::CountMismatch {
                what: "probe vectors".into(),
                expected: file.categories.len(),
                found: file.vectors.len(),
            }
            .into());
        }
        for row in &file.vectors {
            if row.len() != file.d_model {
                return Err(FormatError::CountMismatch {
                    what: "probe vector entries".into(),
                    expected: file.d_model,
                    found: row.len(),
                }
                .into());
            }
        }
        let n = file.vectors.len();
        let flat: Vec<f32> = file.vectors.into_iter().flatten().collect();
        let vectors = Array2::from_shape_vec((n, file.d_model), flat)
            .map_err(|e| FormatError::MalformedHeader(e.to_string()))?;
        let mut set = Self::new(vectors, file.categories)?;
        if let Some(b) = file.bias {
            if b.len() != n {
                return Err(FormatError::CountMismatch {
                    what: "probe bias entries".into(),
                    expected: n,
                    found: b.len(),
                }
                .into());
            }
            set = set.with_bias(Array1::from(b))?;
        }
        set.lambda = file.lambda;
        set.val_accuracy = file.val_accuracy;
        set.feature_source = file.feature_source;
        set.seed = file.seed;
        Ok(set)
    }
}

#[derive(Serialize, Deserialize)]
struct ProbeFile {
    format_version: u32,
    d_model: usize,
    lambda: f64,
    categories: Vec<String>,
    vectors: Vec<Vec<f32>>,
    #[serde(default)]
    bias: Option<Vec<f32>>,
    val_accuracy: f64,
    feature_source: String,
    seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sample() -> ProbeSet {
        let mut s = ProbeSet::new(
            array![[0.1f32, -2.5e-7, 3.0], [1.0 / 3.0, 0.0, -7.25]],
            vec!["insult".into(), "threat".into()],
        )
        .unwrap()
        .with_bias(array![0.5f32, -0.125])
        .unwrap();
        s.lambda = 0.01;
        s.val_accuracy = 0.8125;
        s.seed = 9;
        s
    }

    #[test]
    fn json_round_trip_is_exact() {
        let s = sample();
        let back = ProbeSet::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("probes.json");
        sample().save(&p).unwrap();
        assert_eq!(ProbeSet::load(&p).unwrap(), sample());
    }

    #[test]
    fn count_mismatch_is_format_error() {
        let mut v: serde_json::Value = serde_json::from_str(&sample().to_json().unwrap()).unwrap();
        v["categories"] = serde_json::json!(["insult"]);
        let err = ProbeSet::from_json(&v.to_string()).unwrap_err();
        assert!(matches!(
            err,
            Error::Format(FormatError::CountMismatch {
                expected: 1,
                found: 2,
                ..
            })
        ));
    }

    #[test]
    fn unknown_version_is_version_error() {
        let mut v: serde_json::Value = serde_json::from_str(&sample().to_json().unwrap()).unwrap();
        v["format_version"] = serde_json::json!(3);
        let err = ProbeSet::from_json(&v.to_string()).unwrap_err();
        assert_eq!(err.kind(), "version");
    }

    #[test]
    fn invariants_enforced() {
        assert!(ProbeSet::new(array![[0.0f32, 0.0]], vec!["a".into()]).is_err());
        assert!(ProbeSet::new(array![[1.0f32], [2.0]], vec!["a".into(), "a".into()]).is_err());
        assert!(ProbeSet::new(array![[f32::NAN]], vec!["a".into()]).is_err());
    }
}
