//! High-budget importance sampling accepted as truth once its weights settle.

use serde::{Deserialize, Serialize};

use crate::model::{Meter, SequenceModel};
use crate::proposal::DrawRecord;
use crate::query::{History, Query};
use crate::rng::Substreams;
use crate::stats::{mean_and_population_variance, mean_and_std_error};

use super::sampling::draw_records;
use super::{Estimate, EstimateError, PartEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthConfig {
    pub s_low: usize,
    pub s_high: usize,
    pub check_every: usize,
    pub delta: f64,
}

impl Default for GroundTruthConfig {
    fn default() -> Self {
        GroundTruthConfig { s_low: 10_000, s_high: 100_000, check_every: 1_000, delta: 1e-7 }
    }
}

impl GroundTruthConfig {
    /// Budget used for long-horizon queries.
    pub fn long_horizon() -> Self {
        GroundTruthConfig { s_high: 250_000, ..Self::default() }
    }

    fn validate(&self) -> Result<(), EstimateError> {
        if self.s_low == 0 || self.s_low > self.s_high || self.check_every == 0 || !(self.delta > 0.0) {
            return Err(EstimateError::InvalidParameter(format!("invalid ground-truth config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    Budget,
}

/// Draws `s_low` samples per part, then `check_every` more at a time until
/// the weight variance `(1/S) Σ (w − p̂)²` falls below `delta` or `s_high`
/// is reached. For several parts the statistic is the sum over parts.
/// `meta.stop_reason`, `meta.samples` and `meta.variance` record the outcome.
pub fn surrogate_ground_truth(
    query: &Query,
    model: &dyn SequenceModel,
    history: &History,
    config: &GroundTruthConfig,
    streams: &Substreams,
) -> Result<Estimate, EstimateError> {
    config.validate()?;
    query.check_vocab(model.vocab())?;
    history.check(model.vocab())?;
    let meter = Meter::new(model);
    let part_streams: Vec<Substreams> = (0..query.parts().len()).map(|i| streams.child(i as u64)).collect();
    let mut weights: Vec<Vec<f64>> = vec![Vec::new(); query.parts().len()];
    let mut calls = vec![0u64; query.parts().len()];
    let mut s = 0;
    let mut target = config.s_low;
    let (reason, variance) = loop {
        for (i, part) in query.parts().iter().enumerate() {
            let before = meter.calls();
            let records = draw_records(&meter, history, part, &part_streams[i], s..target)?;
            weights[i].extend(records.iter().map(DrawRecord::weight));
            calls[i] += meter.calls() - before;
        }
        s = target;
        let variance: f64 = weights.iter().map(|w| mean_and_population_variance(w).1).sum();
        if variance < config.delta {
            break (StopReason::Converged, variance);
        }
        if s >= config.s_high {
            break (StopReason::Budget, variance);
        }
        target = (s + config.check_every).min(config.s_high);
    };
    let parts = weights
        .iter()
        .zip(&calls)
        .map(|(w, &c)| {
            let (value, se) = mean_and_std_error(w);
            PartEstimate { value, std_error: Some(se), samples: w.len() as u64, model_calls: c, ..Default::default() }
        })
        .collect();
    Ok(Estimate::from_parts(parts, false, meter.calls())
        .with_meta("stop_reason", serde_json::to_value(reason).expect("reason serializes"))
        .with_meta("samples", s)
        .with_meta("variance", variance))
}
