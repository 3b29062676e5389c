use crate::model::{Meter, SequenceModel};
use crate::query::{History, ProductQuery, Query, Token};
use crate::stats::neumaier;

use super::{Estimate, EstimateError, PartEstimate};

/// Default enumeration cap, in member sequences.
pub const DEFAULT_EXACT_CAP: u64 = 1_000_000;

/// Exact query probability by enumerating every member sequence.
///
/// The part is walked as a prefix tree, so each distinct prefix costs one
/// model call; subtrees of probability zero are skipped.
pub fn exact(
    query: &Query,
    model: &dyn SequenceModel,
    history: &History,
    cap: u64,
) -> Result<Estimate, EstimateError> {
    let size = query.size();
    if !size.at_most(cap) {
        return Err(EstimateError::SizeCapExceeded { size: size.to_string(), cap });
    }
    query.check_vocab(model.vocab())?;
    history.check(model.vocab())?;
    let meter = Meter::new(model);
    let mut parts = Vec::with_capacity(query.parts().len());
    for part in query.parts() {
        let before = meter.calls();
        let value = exact_part(&meter, history, part)?;
        parts.push(PartEstimate { value, model_calls: meter.calls() - before, ..Default::default() });
    }
    let est = Estimate::from_parts(parts, query.is_truncated(), meter.calls());
    Ok(if query.is_truncated() { est.with_meta("truncated", true) } else { est })
}

/// Exact probability of one product part.
pub fn exact_part(model: &dyn SequenceModel, history: &History, part: &ProductQuery) -> Result<f64, EstimateError> {
    let mut leaves = Vec::new();
    let mut prefix = Vec::with_capacity(part.horizon());
    walk(model, history, part, &mut prefix, 0.0, &mut leaves)?;
    Ok(neumaier(leaves))
}

fn walk(
    model: &dyn SequenceModel,
    history: &History,
    part: &ProductQuery,
    prefix: &mut Vec<Token>,
    log_p: f64,
    leaves: &mut Vec<f64>,
) -> Result<(), EstimateError> {
    let k = prefix.len();
    let dist = model.next(history, prefix)?;
    for &t in part.domain(k).tokens() {
        let lp = log_p + dist.log_prob(t);
        if lp == f64::NEG_INFINITY {
            continue;
        }
        if k + 1 == part.horizon() {
            leaves.push(lp.exp());
        } else {
            prefix.push(t);
            walk(model, history, part, prefix, lp, leaves)?;
            prefix.pop();
        }
    }
    Ok(())
}
