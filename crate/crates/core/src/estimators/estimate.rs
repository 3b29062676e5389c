use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::stats::neumaier;

/// Result of one estimator run.
///
/// JSON field names are stable:
/// `{"value","raw_value","std_error","lower_bound","model_calls","parts","meta"}`.
/// `value` is `raw_value` clamped to `[0, 1]`; when clamping changed it,
/// `meta.clamped` is `true`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub raw_value: f64,
    /// `None` for deterministic methods.
    pub std_error: Option<f64>,
    pub lower_bound: bool,
    pub model_calls: u64,
    pub parts: Vec<PartEstimate>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, Value>,
}

/// Contribution of one product part.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PartEstimate {
    pub value: f64,
    pub std_error: Option<f64>,
    pub samples: u64,
    pub model_calls: u64,
    /// Proposal mass of the final beam set, for search methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beams: Option<usize>,
}

impl Estimate {
    /// Sums part values; standard errors combine in quadrature.
    pub fn from_parts(parts: Vec<PartEstimate>, lower_bound: bool, model_calls: u64) -> Self {
        let raw = neumaier(parts.iter().map(|p| p.value));
        let std_error = if parts.iter().any(|p| p.std_error.is_some()) {
            Some(neumaier(parts.iter().map(|p| p.std_error.unwrap_or(0.0).powi(2))).sqrt())
        } else {
            None
        };
        Self::new(raw, std_error, lower_bound, model_calls, parts)
    }

    pub fn new(raw: f64, std_error: Option<f64>, lower_bound: bool, model_calls: u64, parts: Vec<PartEstimate>) -> Self {
        let value = raw.clamp(0.0, 1.0);
        let mut meta = BTreeMap::new();
        if value != raw {
            meta.insert("clamped".to_string(), Value::Bool(true));
        }
        Estimate { value, raw_value: raw, std_error, lower_bound, model_calls, parts, meta }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("estimate serializes")
    }

    /// Sum of per-part `1 − coverage`, when every part reports coverage.
    pub fn coverage_gap(&self) -> Option<f64> {
        self.parts.iter().map(|p| p.coverage.map(|c| (1.0 - c).max(0.0))).sum()
    }
}
