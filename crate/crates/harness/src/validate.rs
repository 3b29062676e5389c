//! Invariant checks on a model: normalization, determinism, call accounting
//! and, for Markov chains, agreement of exact enumeration with the oracle.

use anyhow::Result;

use seqquery::estimators::{exact, importance_sampling, Allocation};
use seqquery::markov::{query_probability, MarkovModel};
use seqquery::model::{ModelError, NORMALIZATION_TOLERANCE};
use seqquery::query::{a_before_b, hitting_time};
use seqquery::rng::Substreams;
use seqquery::stats::logsumexp;
use seqquery::{History, SequenceModel, Token};

use crate::instances::rollout;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: &'static str, passed: bool, detail: String) {
        self.checks.push(Check { name, passed, detail });
    }
}

pub struct ValidationConfig {
    /// Random contexts probed per check.
    pub contexts: usize,
    pub history_length: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Allowed gap between exact enumeration and the Markov oracle.
    pub oracle_tolerance: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig { contexts: 20, history_length: 4, horizon: 3, seed: 0, oracle_tolerance: 1e-10 }
    }
}

fn contexts(model: &dyn SequenceModel, cfg: &ValidationConfig) -> Result<Vec<(Vec<Token>, Vec<Token>)>> {
    let streams = Substreams::new(cfg.seed);
    (0..cfg.contexts)
        .map(|i| {
            let mut rng = streams.rng(i as u64);
            let history = rollout(model, &[], cfg.history_length, &mut rng)?;
            let prefix = rollout(model, &history, i % (cfg.horizon + 1), &mut rng)?;
            Ok((history, prefix))
        })
        .collect()
}

/// Runs every applicable check. `markov` is the same model as a transition
/// table, if it has one.
pub fn validate_model(model: &dyn SequenceModel, markov: Option<&MarkovModel>, cfg: &ValidationConfig) -> Result<ValidationReport> {
    let mut report = ValidationReport::default();
    let vocab = model.vocab();
    let probes = contexts(model, cfg)?;

    let mut worst = 0.0f64;
    let mut wrong_len = 0;
    for (h, p) in &probes {
        let d = model.evaluate(h, p)?;
        if d.len() != vocab.size() {
            wrong_len += 1;
        }
        worst = worst.max(logsumexp(d.log_probs()).abs());
    }
    report.push(
        "normalization",
        wrong_len == 0 && worst <= NORMALIZATION_TOLERANCE,
        format!("max |logsumexp| = {worst:e} over {} contexts", probes.len()),
    );

    let mut mismatches = 0;
    for (h, p) in &probes {
        let a = model.evaluate(h, p)?;
        let b = model.evaluate(h, p)?;
        if a.log_probs().iter().zip(b.log_probs()).any(|(x, y)| x.to_bits() != y.to_bits()) {
            mismatches += 1;
        }
    }
    report.push("determinism", mismatches == 0, format!("{mismatches} of {} contexts differ on repeat", probes.len()));

    let out_of_range = model.next(&History::new(vec![vocab.size() as Token]), &[]);
    report.push(
        "token_validation",
        matches!(out_of_range, Err(ModelError::Query(_))),
        "an out-of-range history token is rejected".into(),
    );

    let (history, _) = &probes[0];
    let history = History::new(history.clone());
    let query = hitting_time(&[0], cfg.horizon, vocab)?;
    let before = model.calls();
    let e = importance_sampling(&query, model, &history, 50, Allocation::Equal, &Substreams::new(cfg.seed))?;
    let counted = model.calls() - before;
    report.push(
        "call_accounting",
        e.model_calls == counted,
        format!("estimate reports {} calls, counter saw {counted}", e.model_calls),
    );

    if let Some(chain) = markov {
        let mut queries = vec![hitting_time(&[0], cfg.horizon, vocab)?];
        if vocab.size() >= 3 {
            queries.push(a_before_b(&[0], &[1], cfg.horizon, vocab)?);
        }
        let mut worst = 0.0f64;
        for (h, _) in probes.iter().take(5) {
            let h = History::new(h.clone());
            for q in &queries {
                let enumerated = exact(q, model, &h, u64::MAX)?.value;
                let oracle = query_probability(chain, q, h.tokens())?;
                worst = worst.max((enumerated - oracle).abs());
            }
        }
        report.push("markov_oracle", worst <= cfg.oracle_tolerance, format!("max |exact - oracle| = {worst:e}"));
    }
    Ok(report)
}
