//! Running a configured method at a model-call budget.

use anyhow::{bail, Result};

use seqquery::estimators::{
    coverage_beam, exact, fixed_beam, hybrid, importance_sampling, naive_mc, surrogate_ground_truth, tail_split_beam,
    uniform_mc, Allocation, GroundTruthConfig,
};
use seqquery::rng::Substreams;
use seqquery::{Estimate, SequenceModel};

use crate::config::{BudgetUnit, MethodSpec, TruthSource};
use crate::instances::Instance;

/// Samples affordable at `calls` when each costs up to `horizon` calls.
fn samples_for(calls: u64, horizon: usize) -> usize {
    ((calls / horizon as u64) as usize).max(1)
}

/// Runs `method` on `inst` within `budget` model calls (ignored by
/// unbudgeted methods).
///
/// Sampling methods take `⌊B/K⌋` samples. Fixed and tail-splitting beams
/// get width `⌊B/(K·parts)⌋` per part. The hybrid spends what its search
/// leaves on `⌊(B − search)/K⌋` remainder samples.
pub fn run_method(
    method: &MethodSpec,
    inst: &Instance,
    model: &dyn SequenceModel,
    budget: Option<u64>,
    exact_cap: u64,
    streams: &Substreams,
) -> Result<Estimate> {
    let (q, h) = (&inst.query, &inst.history);
    let k = q.horizon();
    let parts = q.parts().len() as u64;
    let need = || match budget {
        Some(b) => Ok(b),
        None => bail!("{} needs a budget", method.name()),
    };
    Ok(match *method {
        MethodSpec::Exact => exact(q, model, h, exact_cap)?,
        MethodSpec::NaiveMc => naive_mc(q, model, h, samples_for(need()?, k), streams)?,
        MethodSpec::UniformMc => uniform_mc(q, model, h, samples_for(need()?, k), streams)?,
        MethodSpec::ImportanceSampling => {
            importance_sampling(q, model, h, samples_for(need()?, k), Allocation::Equal, streams)?
        }
        MethodSpec::FixedBeam => fixed_beam(q, model, h, samples_for(need()? / parts, k))?,
        MethodSpec::CoverageBeam { alpha, schedule, cap } => coverage_beam(q, model, h, alpha, schedule, cap)?,
        MethodSpec::TailSplit => tail_split_beam(q, model, h, samples_for(need()? / parts, k), None)?,
        MethodSpec::Hybrid { width_cap } => {
            let b = need()?;
            let search = tail_split_beam(q, model, h, width_cap, None)?.model_calls;
            let samples = (b.saturating_sub(search) / k as u64) as usize;
            hybrid(q, model, h, samples, width_cap, streams)?
        }
    })
}

/// Model calls per budget unit on one instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetScale {
    pub search_calls: u64,
    pub calls_per_sample: f64,
}

impl BudgetScale {
    pub const CALLS: BudgetScale = BudgetScale { search_calls: 0, calls_per_sample: 1.0 };

    /// Measures a reference hybrid run with `reference_samples` draws.
    pub fn measure(
        unit: BudgetUnit,
        inst: &Instance,
        model: &dyn SequenceModel,
        width_cap: usize,
        reference_samples: usize,
        streams: &Substreams,
    ) -> Result<Self> {
        if unit == BudgetUnit::ModelCalls {
            return Ok(Self::CALLS);
        }
        let e = hybrid(&inst.query, model, &inst.history, reference_samples, width_cap, streams)?;
        let search = e.meta.get("search_calls").and_then(|v| v.as_u64()).unwrap_or(0);
        let drawn: u64 = e.parts.iter().map(|p| p.samples).sum();
        let per = if drawn == 0 { 0.0 } else { (e.model_calls - search) as f64 / drawn as f64 };
        Ok(BudgetScale { search_calls: search, calls_per_sample: per })
    }

    pub fn calls(&self, units: u64) -> u64 {
        self.search_calls + (units as f64 * self.calls_per_sample).round() as u64
    }
}

/// The truth for an instance under `source`.
pub fn truth(
    source: TruthSource,
    inst: &Instance,
    model: &dyn SequenceModel,
    exact_cap: u64,
    gt: &GroundTruthConfig,
    streams: &Substreams,
) -> Result<Estimate> {
    let use_exact = match source {
        TruthSource::Exact => true,
        TruthSource::Surrogate => false,
        TruthSource::Auto => inst.query.size().at_most(exact_cap),
    };
    Ok(if use_exact {
        exact(&inst.query, model, &inst.history, exact_cap)?
    } else {
        surrogate_ground_truth(&inst.query, model, &inst.history, gt, streams)?
    })
}

/// `|truth − estimate| / truth`, or `None` when the truth is zero.
pub fn rae(truth: f64, estimate: f64) -> Option<f64> {
    (truth > 0.0).then(|| (truth - estimate).abs() / truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use seqquery::markov::MarkovModel;
    use seqquery::query::{a_before_b, hitting_time};
    use seqquery::{History, Vocab};

    fn inst(q: seqquery::Query) -> Instance {
        Instance { id: 0, history: History::new(vec![0]), query: q }
    }

    #[test]
    fn budgeted_methods_stay_within_budget() {
        let v = Vocab::new(4).unwrap();
        let m = MarkovModel::random(v, 1, 1.3, &mut Substreams::new(2).rng(0));
        let s = Substreams::new(5);
        for q in [hitting_time(&[3], 6, v).unwrap(), a_before_b(&[0], &[1], 5, v).unwrap()] {
            let i = inst(q);
            let k = i.query.horizon() as u64;
            for method in [
                MethodSpec::NaiveMc,
                MethodSpec::UniformMc,
                MethodSpec::ImportanceSampling,
                MethodSpec::FixedBeam,
                MethodSpec::TailSplit,
                MethodSpec::Hybrid { width_cap: 3 },
            ] {
                for b in [60, 200, 1000] {
                    let e = run_method(&method, &i, &m, Some(b), 10_000, &s).unwrap();
                    assert!(e.model_calls <= b + k, "{} at {b}: {}", method.name(), e.model_calls);
                }
            }
            assert!(run_method(&MethodSpec::ImportanceSampling, &i, &m, None, 10_000, &s).is_err());
        }
    }

    #[test]
    fn hybrid_sample_units() {
        let v = Vocab::new(3).unwrap();
        let m = MarkovModel::random(v, 1, 1.0, &mut Substreams::new(1).rng(0));
        let i = inst(hitting_time(&[2], 5, v).unwrap());
        let s = Substreams::new(0);
        assert_eq!(BudgetScale::measure(BudgetUnit::ModelCalls, &i, &m, 3, 10, &s).unwrap().calls(77), 77);
        let scale = BudgetScale::measure(BudgetUnit::HybridSamples, &i, &m, 3, 50, &s).unwrap();
        assert!(scale.search_calls > 0);
        assert!(scale.calls_per_sample > 0.0 && scale.calls_per_sample <= 5.0);
        assert!(scale.calls(100) > scale.calls(10));
    }

    #[test]
    fn rae_is_undefined_at_zero_truth() {
        assert_eq!(rae(0.0, 0.1), None);
        assert_eq!(rae(0.5, 0.25), Some(0.5));
    }
}
