//! Hitting-time families `τ(A) = k`, `k = 1..K`, from a single pass.
//!
//! The parts `(V∖A)^{k−1} × A` share their first `k − 1` domains, so one run
//! to depth `K` through `V∖A` sees every conditional the shorter queries need:
//! at depth `k` the same call that extends the complement prefixes also
//! scores their completions in `A`.

use serde::{Deserialize, Serialize};

use crate::model::{Meter, ModelError, SequenceModel};
use crate::proposal::{restrict_and_normalize, sample_inverse_cdf};
use crate::query::{hitting_time, History, RestrictedDomain, Token};
use crate::rng::Substreams;
use crate::stats::neumaier;

use super::beam::{candidates, conditionals, select, Beam, BeamSet, CoverageSchedule, Selector};
use super::sampling::weight_stats;
use super::{Estimate, EstimateError, PartEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SweepMethod {
    ImportanceSampling { samples: usize },
    FixedBeam { width: usize },
    /// Constant schedule only: a geometric target depends on the horizon.
    CoverageBeam { alpha: f64, cap: usize },
    TailSplit { width_cap: usize },
    Hybrid { samples: usize, width_cap: usize },
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    /// Estimate for `τ(A) = k` at index `k − 1`. Each carries the calls made
    /// through depth `k`.
    pub estimates: Vec<Estimate>,
    /// Final beams for each `k`; empty for sampling.
    pub beam_sets: Vec<BeamSet>,
    pub model_calls: u64,
}

/// Estimates `P(τ(A) = k)` for every `k ≤ max_horizon`.
///
/// Importance-sampling values are identical to standalone
/// [`importance_sampling`](super::importance_sampling) runs on
/// `hitting_time(A, k)` with the same `streams`; beam sets are identical to
/// standalone searches.
pub fn hitting_time_sweep(
    targets: &[Token],
    max_horizon: usize,
    model: &dyn SequenceModel,
    history: &History,
    method: SweepMethod,
    streams: &Substreams,
) -> Result<SweepResult, EstimateError> {
    let vocab = model.vocab();
    let query = hitting_time(targets, max_horizon, vocab)?;
    history.check(vocab)?;
    let part = &query.parts()[0];
    let hit = part.domain(max_horizon - 1).clone();
    let miss = if max_horizon > 1 { Some(part.domain(0).clone()) } else { None };
    let meter = Meter::new(model);
    match method {
        SweepMethod::ImportanceSampling { samples } => {
            if samples == 0 {
                return Err(EstimateError::InvalidParameter("importance sampling needs at least one sample".into()));
            }
            is_sweep(&meter, history, &hit, miss.as_ref(), max_horizon, samples, streams)
        }
        SweepMethod::FixedBeam { width } => {
            if width < 1 {
                return Err(EstimateError::InvalidParameter("beam width must be at least 1".into()));
            }
            beam_sweep(&meter, history, &hit, miss.as_ref(), max_horizon, Selector::Fixed(width))
        }
        SweepMethod::CoverageBeam { alpha, cap } => {
            if !(alpha > 0.0 && alpha < 1.0) || cap < 1 {
                return Err(EstimateError::InvalidParameter(format!("coverage target {alpha}, cap {cap}")));
            }
            let selector = Selector::Coverage { alpha, schedule: CoverageSchedule::Constant, cap };
            beam_sweep(&meter, history, &hit, miss.as_ref(), max_horizon, selector)
        }
        SweepMethod::TailSplit { .. } => Err(EstimateError::UnsupportedMethod(
            "tail-splitting search switches to exhaustive search by part size, so horizons cannot share it".into(),
        )),
        SweepMethod::Hybrid { .. } => Err(EstimateError::UnsupportedMethod(
            "the hybrid proposal is pruned per query and cannot be shared across horizons".into(),
        )),
    }
}

fn is_sweep(
    model: &Meter<'_>,
    history: &History,
    hit: &RestrictedDomain,
    miss: Option<&RestrictedDomain>,
    horizon: usize,
    samples: usize,
    streams: &Substreams,
) -> Result<SweepResult, EstimateError> {
    use rayon::prelude::*;
    let part_streams = streams.child(0);
    // per draw: log-weight for each k, and calls made through each depth
    let draws: Vec<(Vec<f64>, usize)> = (0..samples)
        .into_par_iter()
        .map(|j| {
            let mut rng = part_streams.rng(j as u64);
            let mut seq: Vec<Token> = Vec::with_capacity(horizon);
            let mut log_w = vec![f64::NEG_INFINITY; horizon];
            let mut s = 0.0;
            let mut depth = 0;
            for (k, slot) in log_w.iter_mut().enumerate() {
                let dist = model.next(history, &seq)?;
                depth = k + 1;
                if let Ok(r) = restrict_and_normalize(&dist, hit) {
                    *slot = s + r.log_mass;
                }
                if k + 1 == horizon {
                    break;
                }
                let Ok(r) = restrict_and_normalize(&dist, miss.expect("complement exists for K > 1")) else {
                    break;
                };
                let miss = miss.expect("complement exists for K > 1");
                seq.push(sample_inverse_cdf(miss.tokens(), |t| r.dist.prob(t), &mut rng));
                s += r.log_mass;
            }
            Ok((log_w, depth))
        })
        .collect::<Result<_, ModelError>>()?;
    let mut estimates = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let weights: Vec<f64> = draws.iter().map(|(lw, _)| lw[k].exp()).collect();
        let (value, se) = weight_stats(&weights);
        let calls: u64 = draws.iter().map(|(_, d)| (*d).min(k + 1) as u64).sum();
        let part = PartEstimate { value, std_error: Some(se), samples: samples as u64, model_calls: calls, ..Default::default() };
        estimates.push(Estimate::from_parts(vec![part], false, calls));
    }
    Ok(SweepResult { estimates, beam_sets: Vec::new(), model_calls: model.calls() })
}

fn beam_sweep(
    model: &Meter<'_>,
    history: &History,
    hit: &RestrictedDomain,
    miss: Option<&RestrictedDomain>,
    horizon: usize,
    selector: Selector,
) -> Result<SweepResult, EstimateError> {
    let mut beams = vec![Beam { seq: Vec::new(), log_p: 0.0, log_q: 0.0 }];
    let mut widths: Vec<usize> = Vec::new();
    let mut capped = false;
    let mut estimates = Vec::with_capacity(horizon);
    let mut sets = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let dists = if beams.is_empty() { Vec::new() } else { conditionals(model, history, &beams)? };
        let (done, hit_cap) = select(candidates(&beams, &dists, hit), selector, k + 1, k + 1);
        let mut set_widths = widths.clone();
        set_widths.push(done.len());
        let complete = !done.is_empty();
        let set = BeamSet {
            coverage: neumaier(done.iter().map(|b| b.log_q.exp())),
            beams: done,
            complete,
            widths: set_widths,
            capped: capped || hit_cap,
            model_calls: model.calls(),
        };
        let part = PartEstimate {
            value: set.value(),
            std_error: None,
            samples: 0,
            model_calls: set.model_calls,
            coverage: Some(set.coverage),
            beams: Some(set.beams.len()),
        };
        estimates.push(Estimate::from_parts(vec![part], true, set.model_calls));
        sets.push(set);
        if k + 1 < horizon {
            let miss = miss.expect("complement exists for K > 1");
            let (kept, hit_cap) = select(candidates(&beams, &dists, miss), selector, k + 1, horizon);
            capped |= hit_cap;
            beams = kept;
            widths.push(beams.len());
        }
    }
    Ok(SweepResult { estimates, beam_sets: sets, model_calls: model.calls() })
}
