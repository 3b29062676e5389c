//! Tail-splitting search plus importance sampling of the remainder.
//!
//! The search's proposal tree is pruned so that it proposes only sequences
//! outside the beam set: each node on a beam path carries the remaining
//! proposal mass `r(x_{≤k}) = Σ_t q(t | x_{≤k}) r(x_{≤k} t)`, with `r = 0` at
//! completed beams and `r = 1` off the beam paths. The pruned conditional is
//! `q(t) r(child) / r(node)`, so a remainder draw `x` has proposal
//! probability `q(x) / r(root)` and weight `r(root) · p(x)/q(x)`.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::model::{Meter, ModelError, SequenceModel};
use crate::proposal::{restrict_and_normalize, sample_inverse_cdf};
use crate::query::{History, ProductQuery, Query, Token};
use crate::rng::{DrawRng, Substreams};
use crate::stats::{mean_and_std_error, neumaier};

use super::beam::{tail_split_part, BeamSet, ProposalTree};
use super::{allocate, Allocation, Estimate, EstimateError, PartEstimate};

/// Remaining mass of every node on a completed-beam path.
struct Pruned {
    mass: HashMap<Vec<Token>, f64>,
    exhausted: bool,
}

fn prune(tree: &ProposalTree, part: &ProductQuery) -> Pruned {
    let horizon = part.horizon();
    let mut on_path: Vec<Vec<Vec<Token>>> = vec![Vec::new(); horizon];
    let mut seen = std::collections::HashSet::new();
    for leaf in tree.leaves() {
        for k in 0..horizon {
            if seen.insert(leaf[..k].to_vec()) {
                on_path[k].push(leaf[..k].to_vec());
            }
        }
    }
    let mut mass: HashMap<Vec<Token>, f64> = HashMap::new();
    let mut exhausted: HashMap<Vec<Token>, bool> = HashMap::new();
    for k in (0..horizon).rev() {
        for prefix in &on_path[k] {
            let node = tree.node(prefix).expect("beam prefixes were expanded");
            let q = node.q.as_ref().expect("beam prefixes have mass");
            let mut terms = Vec::new();
            let mut done = true;
            for &t in part.domain(k).tokens() {
                let qt = q.dist.prob(t);
                if qt == 0.0 {
                    continue;
                }
                let mut child = prefix.clone();
                child.push(t);
                let (r, ex) = if k + 1 == horizon && tree.is_leaf(&child) {
                    (0.0, true)
                } else if let Some(&r) = mass.get(&child) {
                    (r, exhausted[&child])
                } else {
                    (1.0, false)
                };
                done &= ex;
                terms.push(qt * r);
            }
            let r = if done { 0.0 } else { neumaier(terms).clamp(0.0, 1.0) };
            mass.insert(prefix.clone(), r);
            exhausted.insert(prefix.clone(), done);
        }
    }
    let root_done = exhausted.get(&Vec::new()).copied().unwrap_or(false);
    Pruned { mass, exhausted: root_done }
}

impl Pruned {
    fn root(&self) -> f64 {
        self.mass.get(&Vec::new()).copied().unwrap_or(1.0)
    }
}

/// One remainder draw; returns the tokens, `Σ ρ_k` (`-inf` for a dead
/// branch) and the number of fresh model calls.
fn remainder_draw(
    model: &dyn SequenceModel,
    history: &History,
    part: &ProductQuery,
    tree: &ProposalTree,
    pruned: &Pruned,
    rng: &mut DrawRng,
) -> Result<(Vec<Token>, f64, u64), ModelError> {
    let horizon = part.horizon();
    let mut seq: Vec<Token> = Vec::with_capacity(horizon);
    let mut log_w = 0.0;
    let mut calls = 0;
    while seq.len() < horizon {
        let k = seq.len();
        let domain = part.domain(k);
        let fresh;
        let (q, log_mass) = match tree.node(&seq) {
            Some(node) => match &node.q {
                Some(r) => (&r.dist, r.log_mass),
                None => return Ok((seq, f64::NEG_INFINITY, calls)),
            },
            None => {
                let dist = model.next(history, &seq)?;
                calls += 1;
                match restrict_and_normalize(&dist, domain) {
                    Ok(r) => {
                        fresh = r;
                        (&fresh.dist, fresh.log_mass)
                    }
                    Err(_) => return Ok((seq, f64::NEG_INFINITY, calls)),
                }
            }
        };
        let t = match pruned.mass.get(&seq) {
            Some(&r_node) => {
                let child_mass = |t: Token| {
                    let mut child = seq.clone();
                    child.push(t);
                    if k + 1 == horizon && tree.is_leaf(&child) {
                        0.0
                    } else {
                        pruned.mass.get(&child).copied().unwrap_or(1.0)
                    }
                };
                sample_inverse_cdf(domain.tokens(), |t| q.prob(t) * child_mass(t) / r_node, rng)
            }
            None => sample_inverse_cdf(domain.tokens(), |t| q.prob(t), rng),
        };
        log_w += log_mass;
        seq.push(t);
    }
    Ok((seq, log_w, calls))
}

/// Hybrid estimate for one part: tail-split lower bound plus `samples`
/// remainder draws. Returns the part estimate and the search's beam set.
pub fn hybrid_part(
    part: &ProductQuery,
    model: &dyn SequenceModel,
    history: &History,
    samples: usize,
    width_cap: usize,
    streams: &Substreams,
) -> Result<(PartEstimate, BeamSet), EstimateError> {
    let meter = Meter::new(model);
    let (set, tree) = tail_split_part(part, &meter, history, width_cap, None)?;
    let lower = set.value();
    let pruned = prune(&tree, part);
    if pruned.exhausted || samples == 0 {
        let std_error = if pruned.exhausted { Some(0.0) } else { None };
        let est = PartEstimate {
            value: lower,
            std_error,
            samples: 0,
            model_calls: meter.calls(),
            coverage: Some(set.coverage),
            beams: Some(set.beams.len()),
        };
        return Ok((est, set));
    }
    let r_root = pruned.root();
    let draws: Vec<(Vec<Token>, f64, u64)> = (0..samples)
        .into_par_iter()
        .map(|j| remainder_draw(&meter, history, part, &tree, &pruned, &mut streams.rng(j as u64)))
        .collect::<Result<_, _>>()?;
    let weights: Vec<f64> = draws.iter().map(|(_, lw, _)| r_root * lw.exp()).collect();
    let (mean, se) = if weights.len() < 2 { (weights[0], 0.0) } else { mean_and_std_error(&weights) };
    let est = PartEstimate {
        value: lower + mean,
        std_error: Some(se),
        samples: samples as u64,
        model_calls: meter.calls(),
        coverage: Some(set.coverage),
        beams: Some(set.beams.len()),
    };
    Ok((est, set))
}

/// Hybrid estimate over all parts; `samples` is split equally across parts.
/// With `samples == 0` this is the tail-splitting lower bound.
pub fn hybrid(
    query: &Query,
    model: &dyn SequenceModel,
    history: &History,
    samples: usize,
    width_cap: usize,
    streams: &Substreams,
) -> Result<Estimate, EstimateError> {
    let counts = if samples == 0 {
        vec![0; query.parts().len()]
    } else {
        allocate(samples, &vec![1.0; query.parts().len()], Allocation::Equal)
    };
    let meter = Meter::new(model);
    let mut parts = Vec::with_capacity(counts.len());
    let mut search_calls = 0;
    for (i, (part, &n)) in query.parts().iter().zip(&counts).enumerate() {
        let (est, set) = hybrid_part(part, &meter, history, n, width_cap, &streams.child(i as u64))?;
        search_calls += set.model_calls;
        parts.push(est);
    }
    let lower_bound = samples == 0;
    let est = Estimate::from_parts(parts, lower_bound, meter.calls()).with_meta("search_calls", search_calls);
    Ok(if query.is_truncated() { est.with_meta("truncated", true) } else { est })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{exact, tail_split_beam, DEFAULT_EXACT_CAP};
    use crate::markov::MarkovModel;
    use crate::model::SyntheticMixerModel;
    use crate::query::{count, hitting_time, RestrictedDomain, Vocab};

    fn v3() -> Vocab {
        Vocab::new(3).unwrap()
    }

    #[test]
    fn wide_cap_is_exact() {
        let m = SyntheticMixerModel::new(v3(), 13);
        let h = History::new(vec![2]);
        let q = count(1, 2, 4, v3()).unwrap();
        let truth = exact(&q, &m, &h, DEFAULT_EXACT_CAP).unwrap().value;
        let e = hybrid(&q, &m, &h, 30, 100, &Substreams::new(1)).unwrap();
        assert!((e.value - truth).abs() < 1e-14);
        assert_eq!(e.std_error, Some(0.0));
    }

    #[test]
    fn zero_samples_is_tail_split() {
        let m = SyntheticMixerModel::new(Vocab::new(4).unwrap(), 2);
        let h = History::new(vec![0]);
        let q = hitting_time(&[3], 5, Vocab::new(4).unwrap()).unwrap();
        let a = hybrid(&q, &m, &h, 0, 4, &Substreams::new(0)).unwrap();
        let b = tail_split_beam(&q, &m, &h, 4, None).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(a.model_calls, b.model_calls);
        assert!(a.lower_bound);
    }

    #[test]
    fn pruned_conditionals_renormalize() {
        let m = SyntheticMixerModel::new(Vocab::new(4).unwrap(), 8);
        let part = ProductQuery::full(Vocab::new(4).unwrap(), 4).unwrap();
        let h = History::new(vec![1]);
        let (set, tree) = tail_split_part(&part, &m, &h, 3, None).unwrap();
        let pruned = prune(&tree, &part);
        assert!(!pruned.exhausted);
        // r(root) = 1 − q(B)
        assert!((pruned.root() - (1.0 - set.coverage)).abs() < 1e-12);
        for (prefix, &r) in &pruned.mass {
            let node = tree.node(prefix).unwrap();
            let q = &node.q.as_ref().unwrap().dist;
            let k = prefix.len();
            let total: f64 = part
                .domain(k)
                .tokens()
                .iter()
                .map(|&t| {
                    let mut c = prefix.clone();
                    c.push(t);
                    let rc = if k + 1 == 4 && tree.is_leaf(&c) { 0.0 } else { pruned.mass.get(&c).copied().unwrap_or(1.0) };
                    q.prob(t) * rc / r
                })
                .sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn remainder_draws_avoid_beams() {
        let m = SyntheticMixerModel::new(v3(), 4);
        let part = ProductQuery::full(v3(), 3).unwrap();
        let h = History::new(vec![0]);
        let (set, tree) = tail_split_part(&part, &m, &h, 2, None).unwrap();
        let pruned = prune(&tree, &part);
        assert!(!set.beams.is_empty());
        for j in 0..200 {
            let mut rng = Substreams::new(3).rng(j);
            let (seq, lw, _) = remainder_draw(&m, &h, &part, &tree, &pruned, &mut rng).unwrap();
            assert!(lw.is_finite());
            assert!(part.admits(&seq));
            assert!(!set.contains(&seq));
        }
    }

    #[test]
    fn unbiased_on_markov_instance() {
        let chain = MarkovModel::first_order(vec![vec![0.5, 0.3, 0.2], vec![0.2, 0.6, 0.2], vec![0.3, 0.3, 0.4]]).unwrap();
        let h = History::new(vec![0]);
        let q = hitting_time(&[2], 5, v3()).unwrap();
        let truth = exact(&q, &chain, &h, DEFAULT_EXACT_CAP).unwrap().value;
        let runs: Vec<f64> = (0..200).map(|s| hybrid(&q, &chain, &h, 10, 3, &Substreams::new(s)).unwrap().value).collect();
        let (mean, se) = mean_and_std_error(&runs);
        assert!((mean - truth).abs() <= 3.0 * se + 1e-15, "mean {mean} truth {truth} se {se}");
    }

    #[test]
    fn dead_branches_contribute_nothing() {
        let chain = MarkovModel::first_order(vec![vec![0.0, 1.0, 0.0], vec![0.5, 0.0, 0.5], vec![0.2, 0.3, 0.5]]).unwrap();
        let part = ProductQuery::new(vec![
            RestrictedDomain::new([0, 1], v3()).unwrap(),
            RestrictedDomain::new([0, 2], v3()).unwrap(),
            RestrictedDomain::singleton(2),
        ])
        .unwrap();
        let q = Query::single(part, "t");
        let h = History::new(vec![1]);
        let truth = exact(&q, &chain, &h, DEFAULT_EXACT_CAP).unwrap().value;
        let e = hybrid(&q, &chain, &h, 20, 100, &Substreams::new(0)).unwrap();
        assert!((e.value - truth).abs() < 1e-15);
        assert_eq!(e.std_error, Some(0.0));
    }
}
