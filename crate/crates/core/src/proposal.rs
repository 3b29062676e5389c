//! Query-restricted autoregressive proposal.
//!
//! Each conditional of the model is restricted to the step's allowed tokens
//! and renormalized:
//!
//! ```text
//! q(x_k | x_<k) = p(x_k | x_<k) 1[x_k ∈ V_k] / Σ_{v ∈ V_k} p(v | x_<k)
//! ```
//!
//! A draw costs one model call per step and yields both `log q(x)` and
//! `log p(x) = log q(x) + Σ_k ρ_k` with `ρ_k = ln Σ_{v ∈ V_k} p(v | x_<k)`.
//!
//! When a conditional puts no mass on `V_k` the draw is a dead branch: the
//! model gives every continuation inside the part probability zero, so the
//! draw carries importance weight exactly 0 and still counts as a sample.

use rand::Rng;
use thiserror::Error;

use crate::model::{Distribution, ModelError, SequenceModel};
use crate::query::{History, ProductQuery, RestrictedDomain, Token};
use crate::rng::Substreams;
use crate::stats::{logsumexp, mean_and_std_error};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("conditional puts zero mass on the restricted domain")]
pub struct ZeroMassDomain;

/// A conditional restricted to one step's domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Restricted {
    /// Restricted, renormalized conditional; `-inf` outside the domain.
    pub dist: Distribution,
    /// `ρ = ln Σ_{v ∈ domain} p(v)`.
    pub log_mass: f64,
}

pub fn restrict_and_normalize(dist: &Distribution, domain: &RestrictedDomain) -> Result<Restricted, ZeroMassDomain> {
    let inside: Vec<f64> = domain.tokens().iter().map(|&t| dist.log_prob(t)).collect();
    let log_mass = logsumexp(&inside).min(0.0);
    if log_mass == f64::NEG_INFINITY {
        return Err(ZeroMassDomain);
    }
    let mut logq = vec![f64::NEG_INFINITY; dist.len()];
    for (&t, &lp) in domain.tokens().iter().zip(&inside) {
        logq[t as usize] = (lp - log_mass).min(0.0);
    }
    let dist = Distribution::from_log_probs(logq).expect("renormalized restriction is a distribution");
    Ok(Restricted { dist, log_mass })
}

/// Inverse-CDF draw over `tokens` (ascending ids) with weights `prob(t)`.
/// Tokens of zero probability are never returned.
pub fn sample_inverse_cdf(tokens: &[Token], prob: impl Fn(Token) -> f64, rng: &mut impl Rng) -> Token {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last_positive = None;
    for &t in tokens {
        let p = prob(t);
        if p > 0.0 {
            cum += p;
            last_positive = Some(t);
            if u < cum {
                return t;
            }
        }
    }
    last_positive.expect("at least one positive-probability token")
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrawRecord {
    /// Sampled tokens; shorter than the horizon for a dead branch.
    pub seq: Vec<Token>,
    pub log_q: f64,
    /// `-inf` for a dead branch.
    pub log_p: f64,
    /// `Σ_k ρ_k`, accumulated in step order; `log p − log q`.
    pub log_weight: f64,
    pub model_calls: u64,
    pub dead: bool,
}

impl DrawRecord {
    /// Importance weight `p(x) / q(x)`.
    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }
}

/// Restricted proposal for one product part.
pub struct Proposal<'a> {
    model: &'a dyn SequenceModel,
    part: &'a ProductQuery,
    history: &'a History,
}

impl<'a> Proposal<'a> {
    pub fn new(model: &'a dyn SequenceModel, part: &'a ProductQuery, history: &'a History) -> Self {
        Proposal { model, part, history }
    }

    pub fn part(&self) -> &ProductQuery {
        self.part
    }

    /// Draws one sequence, starting from `prefix` (which must already lie in
    /// the part's first domains; its steps contribute nothing to the record).
    pub fn draw_from(&self, prefix: &[Token], rng: &mut impl Rng) -> Result<DrawRecord, ModelError> {
        let mut seq = prefix.to_vec();
        let mut log_q = 0.0;
        let mut log_weight = 0.0;
        let mut calls = 0;
        for k in prefix.len()..self.part.horizon() {
            let dist = self.model.next(self.history, &seq)?;
            calls += 1;
            let domain = self.part.domain(k);
            let restricted = match restrict_and_normalize(&dist, domain) {
                Ok(r) => r,
                Err(ZeroMassDomain) => {
                    return Ok(DrawRecord {
                        seq,
                        log_q,
                        log_p: f64::NEG_INFINITY,
                        log_weight: f64::NEG_INFINITY,
                        model_calls: calls,
                        dead: true,
                    })
                }
            };
            let t = sample_inverse_cdf(domain.tokens(), |t| restricted.dist.prob(t), rng);
            log_q += restricted.dist.log_prob(t);
            log_weight += restricted.log_mass;
            seq.push(t);
        }
        Ok(DrawRecord { seq, log_q, log_p: log_q + log_weight, log_weight, model_calls: calls, dead: false })
    }

    pub fn draw(&self, rng: &mut impl Rng) -> Result<DrawRecord, ModelError> {
        self.draw_from(&[], rng)
    }

    /// Monte Carlo restricted entropy `−E_q[log q]` over `samples` keyed
    /// draws. Dead branches are skipped and counted.
    pub fn restricted_entropy(&self, samples: usize, streams: &Substreams) -> Result<EntropyEstimate, ModelError> {
        let mut neg_log_q = Vec::with_capacity(samples);
        let mut dead = 0;
        for j in 0..samples {
            let rec = self.draw(&mut streams.rng(j as u64))?;
            if rec.dead {
                dead += 1;
            } else {
                neg_log_q.push(-rec.log_q);
            }
        }
        let (entropy, std_error) = if neg_log_q.is_empty() { (f64::NAN, f64::NAN) } else { mean_and_std_error(&neg_log_q) };
        Ok(EntropyEstimate { entropy, std_error, samples, dead })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyEstimate {
    pub entropy: f64,
    pub std_error: f64,
    pub samples: usize,
    pub dead: usize,
}
