use num_traits::ToPrimitive;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{Meter, ModelError, SequenceModel};
use crate::proposal::{sample_inverse_cdf, DrawRecord, Proposal};
use crate::query::{History, ProductQuery, Query, Token};
use crate::rng::Substreams;
use crate::stats::mean_and_std_error;

use super::{Estimate, EstimateError, PartEstimate};

/// How importance-sampling draws are split across query parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Allocation {
    #[default]
    Equal,
    /// Proportional to part size (largest remainder).
    Proportional,
}

/// Splits `total` draws over parts. Every part gets at least one draw, so the
/// realized total can exceed `total` when there are more parts than draws.
pub fn allocate(total: usize, sizes: &[f64], allocation: Allocation) -> Vec<usize> {
    let n = sizes.len();
    if n == 0 {
        return Vec::new();
    }
    let counts: Vec<usize> = match allocation {
        Allocation::Equal => (0..n).map(|i| total / n + usize::from(i < total % n)).collect(),
        Allocation::Proportional => {
            let z: f64 = sizes.iter().sum();
            let exact: Vec<f64> = sizes.iter().map(|s| total as f64 * s / z).collect();
            let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
            let left = total.saturating_sub(counts.iter().sum());
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
            for &i in order.iter().take(left) {
                counts[i] += 1;
            }
            counts
        }
    };
    counts.into_iter().map(|c| c.max(1)).collect()
}

/// Keyed proposal draws `0..n`; identical for serial and parallel execution.
pub(crate) fn draw_records(
    model: &dyn SequenceModel,
    history: &History,
    part: &ProductQuery,
    streams: &Substreams,
    range: std::ops::Range<usize>,
) -> Result<Vec<DrawRecord>, ModelError> {
    let proposal = Proposal::new(model, part, history);
    range.into_par_iter().map(|j| proposal.draw(&mut streams.rng(j as u64))).collect()
}

pub(crate) fn weight_stats(weights: &[f64]) -> (f64, f64) {
    if weights.len() < 2 {
        return (weights.first().copied().unwrap_or(0.0), 0.0);
    }
    mean_and_std_error(weights)
}

/// Importance sampling under the restricted proposal, part by part.
///
/// Part `i` draws from substream `streams.child(i)`, draw `j` from its
/// `rng(j)`. Each part's estimate is the mean weight `p(x)/q(x)`.
pub fn importance_sampling(
    query: &Query,
    model: &dyn SequenceModel,
    history: &History,
    samples: usize,
    allocation: Allocation,
    streams: &Substreams,
) -> Result<Estimate, EstimateError> {
    if samples == 0 {
        return Err(EstimateError::InvalidParameter("importance sampling needs at least one sample".into()));
    }
    query.check_vocab(model.vocab())?;
    history.check(model.vocab())?;
    let sizes: Vec<f64> = query.parts().iter().map(|p| p.size().to_f64().unwrap_or(f64::MAX)).collect();
    let counts = allocate(samples, &sizes, allocation);
    let meter = Meter::new(model);
    let mut parts = Vec::with_capacity(counts.len());
    let mut dead = 0usize;
    for (i, (part, &n)) in query.parts().iter().zip(&counts).enumerate() {
        let before = meter.calls();
        let records = draw_records(&meter, history, part, &streams.child(i as u64), 0..n)?;
        dead += records.iter().filter(|r| r.dead).count();
        let weights: Vec<f64> = records.iter().map(DrawRecord::weight).collect();
        let (value, se) = weight_stats(&weights);
        parts.push(PartEstimate {
            value,
            std_error: Some(se),
            samples: n as u64,
            model_calls: meter.calls() - before,
            ..Default::default()
        });
    }
    let mut est = Estimate::from_parts(parts, false, meter.calls()).with_meta("samples", counts.iter().sum::<usize>());
    if dead > 0 {
        est = est.with_meta("dead_branches", dead);
    }
    if query.is_truncated() {
        est = est.with_meta("truncated", true);
    }
    Ok(est)
}

/// Fraction of unconstrained model rollouts of length `K` that land in the
/// query. Costs `S·K` model calls.
pub fn naive_mc(
    query: &Query,
    model: &dyn SequenceModel,
    history: &History,
    samples: usize,
    streams: &Substreams,
) -> Result<Estimate, EstimateError> {
    if samples == 0 {
        return Err(EstimateError::InvalidParameter("naive sampling needs at least one sample".into()));
    }
    query.check_vocab(model.vocab())?;
    history.check(model.vocab())?;
    let meter = Meter::new(model);
    let tokens: Vec<Token> = model.vocab().tokens().collect();
    let horizon = query.horizon();
    let hits: Vec<Option<usize>> = (0..samples)
        .into_par_iter()
        .map(|j| {
            let mut rng = streams.rng(j as u64);
            let mut seq = Vec::with_capacity(horizon);
            for _ in 0..horizon {
                let dist = meter.next(history, &seq)?;
                seq.push(sample_inverse_cdf(&tokens, |t| dist.prob(t), &mut rng));
            }
            Ok(query.parts().iter().position(|p| p.admits(&seq[..p.horizon()])))
        })
        .collect::<Result<_, ModelError>>()?;
    let s = samples as f64;
    let binomial = |k: usize| {
        let p = k as f64 / s;
        (p, (p * (1.0 - p) / s).sqrt())
    };
    let parts = (0..query.parts().len())
        .map(|i| {
            let (value, se) = binomial(hits.iter().filter(|h| **h == Some(i)).count());
            PartEstimate { value, std_error: Some(se), samples: samples as u64, ..Default::default() }
        })
        .collect();
    let (value, se) = binomial(hits.iter().filter(|h| h.is_some()).count());
    Ok(Estimate::new(value, Some(se), false, meter.calls(), parts))
}

/// `|Q| · E_{x∼U(Q)}[p(x)]`, with parts chosen proportionally to their size.
/// The raw value can exceed 1.
pub fn uniform_mc(
    query: &Query,
    model: &dyn SequenceModel,
    history: &History,
    samples: usize,
    streams: &Substreams,
) -> Result<Estimate, EstimateError> {
    if samples == 0 {
        return Err(EstimateError::InvalidParameter("uniform sampling needs at least one sample".into()));
    }
    query.check_vocab(model.vocab())?;
    history.check(model.vocab())?;
    let sizes: Vec<f64> = query.parts().iter().map(|p| p.size().to_f64().unwrap_or(f64::MAX)).collect();
    let total: f64 = sizes.iter().sum();
    let meter = Meter::new(model);
    let draws: Vec<(usize, f64)> = (0..samples)
        .into_par_iter()
        .map(|j| {
            let mut rng = streams.rng(j as u64);
            let u: f64 = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut i = sizes.len() - 1;
            for (idx, s) in sizes.iter().enumerate() {
                acc += s;
                if u < acc {
                    i = idx;
                    break;
                }
            }
            let part = &query.parts()[i];
            let seq: Vec<Token> =
                part.domains().iter().map(|d| d.tokens()[rng.gen_range(0..d.len())]).collect();
            let mut log_p = 0.0;
            for k in 0..seq.len() {
                log_p += meter.next(history, &seq[..k])?.log_prob(seq[k]);
            }
            Ok((i, total * log_p.exp()))
        })
        .collect::<Result<_, ModelError>>()?;
    let ys: Vec<f64> = draws.iter().map(|d| d.1).collect();
    let (raw, se) = weight_stats(&ys);
    let parts = (0..sizes.len())
        .map(|i| {
            let zs: Vec<f64> = draws.iter().map(|&(p, y)| if p == i { y } else { 0.0 }).collect();
            let (value, se) = weight_stats(&zs);
            let n = draws.iter().filter(|d| d.0 == i).count();
            PartEstimate { value, std_error: Some(se), samples: n as u64, ..Default::default() }
        })
        .collect::<Vec<_>>();
    Ok(Estimate::new(raw, Some(se), false, meter.calls(), parts))
}
