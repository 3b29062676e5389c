//! Beam-search lower bounds inside a product part.
//!
//! Candidates at depth `k` are the one-token extensions of the current beams
//! within `V_k`. Three selection rules are provided: top-`B` by proposal
//! probability, minimal coverage sets, and tail-splitting on joint model
//! probability. Each surviving beam costs one model call per depth.

use std::collections::{HashMap, HashSet};

use num_traits::ToPrimitive;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{Distribution, Meter, ModelError, SequenceModel};
use crate::proposal::{restrict_and_normalize, Restricted};
use crate::query::{History, ProductQuery, Query, RestrictedDomain, Token};
use crate::stats::neumaier;

use super::{Estimate, EstimateError, PartEstimate};

/// Default per-depth width cap for coverage and tail-splitting search.
pub const DEFAULT_WIDTH_CAP: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Beam {
    pub seq: Vec<Token>,
    pub log_p: f64,
    pub log_q: f64,
}

impl Beam {
    fn root() -> Self {
        Beam { seq: Vec::new(), log_p: 0.0, log_q: 0.0 }
    }
}

/// Final beams of one search.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamSet {
    /// Complete length-`K` beams; empty if the search stopped early.
    pub beams: Vec<Beam>,
    /// `Σ exp(log_q)` over `beams`.
    pub coverage: f64,
    pub complete: bool,
    /// Beams kept at each depth.
    pub widths: Vec<usize>,
    /// Some depth hit the width cap before reaching its selection target.
    pub capped: bool,
    pub model_calls: u64,
}

impl BeamSet {
    /// Lower bound `Σ exp(log_p)`.
    pub fn value(&self) -> f64 {
        neumaier(self.beams.iter().map(|b| b.log_p.exp()))
    }

    pub fn contains(&self, seq: &[Token]) -> bool {
        self.beams.iter().any(|b| b.seq == seq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoverageSchedule {
    /// `α_k = α` at every depth.
    #[default]
    Constant,
    /// `α_k = α^{k/K}`.
    Geometric,
}

impl CoverageSchedule {
    pub fn target(self, alpha: f64, depth: usize, horizon: usize) -> f64 {
        match self {
            CoverageSchedule::Constant => alpha,
            CoverageSchedule::Geometric => alpha.powf(depth as f64 / horizon as f64),
        }
    }
}

/// Conditionals observed during search, keyed by prefix.
#[derive(Debug, Clone)]
pub struct TreeNode {
    pub p: Distribution,
    /// `None` when the step's domain has zero mass (a dead branch).
    pub q: Option<Restricted>,
}

/// Partial proposal tree recorded by a search, with its completed beams.
#[derive(Debug, Clone, Default)]
pub struct ProposalTree {
    nodes: HashMap<Vec<Token>, TreeNode>,
    leaves: HashSet<Vec<Token>>,
}

impl ProposalTree {
    pub fn node(&self, prefix: &[Token]) -> Option<&TreeNode> {
        self.nodes.get(prefix)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_leaf(&self, seq: &[Token]) -> bool {
        self.leaves.contains(seq)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Vec<Token>> {
        self.leaves.iter()
    }

    pub fn prefixes(&self) -> impl Iterator<Item = &Vec<Token>> {
        self.nodes.keys()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Selector {
    Fixed(usize),
    Coverage { alpha: f64, schedule: CoverageSchedule, cap: usize },
    TailSplit { cap: usize },
    All,
}

/// One model call per beam.
pub(crate) fn conditionals(
    model: &dyn SequenceModel,
    history: &History,
    beams: &[Beam],
) -> Result<Vec<Distribution>, ModelError> {
    beams.par_iter().map(|b| model.next(history, &b.seq)).collect()
}

/// Extensions of `beams` inside `domain` with positive probability.
pub(crate) fn candidates(beams: &[Beam], dists: &[Distribution], domain: &RestrictedDomain) -> Vec<Beam> {
    let mut out = Vec::new();
    for (beam, dist) in beams.iter().zip(dists) {
        let Ok(r) = restrict_and_normalize(dist, domain) else { continue };
        for &t in domain.tokens() {
            let lq = r.dist.log_prob(t);
            if lq == f64::NEG_INFINITY {
                continue;
            }
            let mut seq = beam.seq.clone();
            seq.push(t);
            out.push(Beam { seq, log_p: beam.log_p + dist.log_prob(t), log_q: beam.log_q + lq });
        }
    }
    out
}

fn sort_by_key(cands: &mut [Beam], key: impl Fn(&Beam) -> f64) {
    cands.sort_by(|a, b| key(b).total_cmp(&key(a)).then_with(|| a.seq.cmp(&b.seq)));
}

/// Applies a selection rule; returns the kept beams and whether the cap bit.
pub(crate) fn select(
    mut cands: Vec<Beam>,
    selector: Selector,
    depth: usize,
    horizon: usize,
) -> (Vec<Beam>, bool) {
    match selector {
        Selector::All => {
            sort_by_key(&mut cands, |b| b.log_q);
            (cands, false)
        }
        Selector::Fixed(width) => {
            sort_by_key(&mut cands, |b| b.log_q);
            cands.truncate(width);
            (cands, false)
        }
        Selector::Coverage { alpha, schedule, cap } => {
            sort_by_key(&mut cands, |b| b.log_q);
            let target = schedule.target(alpha, depth, horizon);
            let mut mass = 0.0;
            let mut keep = cands.len();
            for (i, b) in cands.iter().enumerate() {
                mass += b.log_q.exp();
                if mass >= target {
                    keep = i + 1;
                    break;
                }
            }
            let capped = keep > cap;
            cands.truncate(keep.min(cap));
            (cands, capped)
        }
        Selector::TailSplit { cap } => {
            sort_by_key(&mut cands, |b| b.log_p);
            if cands.is_empty() {
                return (cands, false);
            }
            let top = cands[0].log_p;
            let rel: Vec<f64> = cands.iter().map(|b| (b.log_p - top).exp()).collect();
            let keep = tail_split_index(&rel);
            let capped = keep > cap;
            cands.truncate(keep.min(cap));
            (cands, capped)
        }
    }
}

/// Split point `b` of descending weights minimizing
/// `σ²(w[..b]) + σ²(w[b..])` (population variances), over `b ∈ 1..n`.
/// Ties within `1e-12` of the weight scale go to the smallest `b`.
pub fn tail_split_index(weights: &[f64]) -> usize {
    let n = weights.len();
    if n <= 2 {
        return 1;
    }
    let scale = weights.iter().cloned().fold(0.0, f64::max);
    if scale <= 0.0 {
        return 1;
    }
    let w: Vec<f64> = weights.iter().map(|x| x / scale).collect();
    let mut s1 = vec![0.0; n + 1];
    let mut s2 = vec![0.0; n + 1];
    for i in 0..n {
        s1[i + 1] = s1[i] + w[i];
        s2[i + 1] = s2[i] + w[i] * w[i];
    }
    let var = |lo: usize, hi: usize| {
        let m = (hi - lo) as f64;
        let mean = (s1[hi] - s1[lo]) / m;
        ((s2[hi] - s2[lo]) / m - mean * mean).max(0.0)
    };
    let mut best = 1;
    let mut best_total = var(0, 1) + var(1, n);
    for b in 2..n {
        let total = var(0, b) + var(b, n);
        if total < best_total - 1e-12 {
            best = b;
            best_total = total;
        }
    }
    best
}

/// Runs a search over one part. `call_budget` bounds model calls; when it
/// runs short, the highest-ranked beams are expanded first.
pub(crate) fn search(
    model: &dyn SequenceModel,
    history: &History,
    part: &ProductQuery,
    selector: Selector,
    call_budget: Option<u64>,
    mut tree: Option<&mut ProposalTree>,
) -> Result<BeamSet, ModelError> {
    let meter = Meter::new(model);
    let horizon = part.horizon();
    let mut beams = vec![Beam::root()];
    let mut widths = Vec::with_capacity(horizon);
    let mut capped = false;
    for k in 0..horizon {
        if let Some(budget) = call_budget {
            let left = budget.saturating_sub(meter.calls()) as usize;
            beams.truncate(left);
        }
        if beams.is_empty() {
            break;
        }
        let dists = conditionals(&meter, history, &beams)?;
        if let Some(tree) = tree.as_deref_mut() {
            for (b, d) in beams.iter().zip(&dists) {
                let q = restrict_and_normalize(d, part.domain(k)).ok();
                tree.nodes.insert(b.seq.clone(), TreeNode { p: d.clone(), q });
            }
        }
        let cands = candidates(&beams, &dists, part.domain(k));
        let (kept, hit_cap) = select(cands, selector, k + 1, horizon);
        capped |= hit_cap;
        beams = kept;
        widths.push(beams.len());
    }
    let complete = widths.len() == horizon && !beams.is_empty();
    if !complete {
        beams.clear();
    }
    if let Some(tree) = tree {
        tree.leaves = beams.iter().map(|b| b.seq.clone()).collect();
    }
    let coverage = neumaier(beams.iter().map(|b| b.log_q.exp()));
    Ok(BeamSet { beams, coverage, complete, widths, capped, model_calls: meter.calls() })
}

fn check_part(part: &ProductQuery, model: &dyn SequenceModel, history: &History) -> Result<(), EstimateError> {
    part.check_vocab(model.vocab())?;
    history.check(model.vocab())?;
    Ok(())
}

fn beam_part_estimate(set: &BeamSet) -> PartEstimate {
    PartEstimate {
        value: set.value(),
        std_error: None,
        samples: 0,
        model_calls: set.model_calls,
        coverage: Some(set.coverage),
        beams: Some(set.beams.len()),
    }
}

fn beam_estimate(sets: &[BeamSet]) -> Estimate {
    let calls = sets.iter().map(|s| s.model_calls).sum();
    let mut est = Estimate::from_parts(sets.iter().map(beam_part_estimate).collect(), true, calls);
    if sets.iter().any(|s| s.capped) {
        est = est.with_meta("capped", true);
    }
    est
}

/// Width-`B` beam search on one part, ranked by proposal probability.
pub fn fixed_beam_part(
    part: &ProductQuery,
    model: &dyn SequenceModel,
    history: &History,
    width: usize,
) -> Result<BeamSet, EstimateError> {
    if width < 1 {
        return Err(EstimateError::InvalidParameter("beam width must be at least 1".into()));
    }
    check_part(part, model, history)?;
    Ok(search(model, history, part, Selector::Fixed(width), None, None)?)
}

pub fn fixed_beam(query: &Query, model: &dyn SequenceModel, history: &History, width: usize) -> Result<Estimate, EstimateError> {
    let sets = query
        .parts()
        .iter()
        .map(|p| fixed_beam_part(p, model, history, width))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(beam_estimate(&sets))
}

/// Coverage-based search: at depth `k`, the smallest prefix of candidates by
/// proposal probability whose joint proposal mass reaches `α_k`, truncated at
/// `cap` (flagged in [`BeamSet::capped`]).
pub fn coverage_beam_part(
    part: &ProductQuery,
    model: &dyn SequenceModel,
    history: &History,
    alpha: f64,
    schedule: CoverageSchedule,
    cap: usize,
) -> Result<BeamSet, EstimateError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(EstimateError::InvalidParameter(format!("coverage target {alpha} is not in (0, 1)")));
    }
    if cap < 1 {
        return Err(EstimateError::InvalidParameter("width cap must be at least 1".into()));
    }
    check_part(part, model, history)?;
    Ok(search(model, history, part, Selector::Coverage { alpha, schedule, cap }, None, None)?)
}

/// Coverage search on every part. `meta.bound` is `Σ_i (1 − coverage_i)`,
/// an upper bound on `exact − value`.
pub fn coverage_beam(
    query: &Query,
    model: &dyn SequenceModel,
    history: &History,
    alpha: f64,
    schedule: CoverageSchedule,
    cap: usize,
) -> Result<Estimate, EstimateError> {
    let sets = query
        .parts()
        .iter()
        .map(|p| coverage_beam_part(p, model, history, alpha, schedule, cap))
        .collect::<Result<Vec<_>, _>>()?;
    let est = beam_estimate(&sets);
    let bound = est.coverage_gap().unwrap_or(1.0);
    let widths: Vec<Vec<usize>> = sets.iter().map(|s| s.widths.clone()).collect();
    Ok(est.with_meta("bound", bound).with_meta("widths", serde_json::to_value(widths).expect("widths serialize")))
}

/// Tail-splitting search. When the whole part fits within `width_cap`
/// sequences, every candidate is kept and the search is exhaustive.
pub fn tail_split_part(
    part: &ProductQuery,
    model: &dyn SequenceModel,
    history: &History,
    width_cap: usize,
    call_budget: Option<u64>,
) -> Result<(BeamSet, ProposalTree), EstimateError> {
    if width_cap < 1 {
        return Err(EstimateError::InvalidParameter("width cap must be at least 1".into()));
    }
    check_part(part, model, history)?;
    let exhaustive = part.size().to_u64().is_some_and(|s| s <= width_cap as u64);
    let selector = if exhaustive { Selector::All } else { Selector::TailSplit { cap: width_cap } };
    let mut tree = ProposalTree::default();
    let set = search(model, history, part, selector, call_budget, Some(&mut tree))?;
    Ok((set, tree))
}

pub fn tail_split_beam(
    query: &Query,
    model: &dyn SequenceModel,
    history: &History,
    width_cap: usize,
    call_budget: Option<u64>,
) -> Result<Estimate, EstimateError> {
    let sets = query
        .parts()
        .iter()
        .map(|p| tail_split_part(p, model, history, width_cap, call_budget).map(|(s, _)| s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(beam_estimate(&sets))
}
