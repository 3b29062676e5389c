//! Per-query estimate rows and their RAE summaries, shared by the RAE,
//! budget-sweep and temperature experiments.

use std::sync::Arc;

use anyhow::{bail, Result};
use rayon::prelude::*;

use seqquery::proposal::Proposal;
use seqquery::rng::Substreams;
use seqquery::SequenceModel;

use crate::config::{ExperimentConfig, MethodSpec};
use crate::instances::{Draws, Instance};
use crate::methods::{rae, run_method, truth, BudgetScale};
use crate::table::{mean, median, num, opt, Table};

/// Reference hybrid draws used to measure hybrid-sample budgets.
pub const REFERENCE_SAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub model: String,
    pub temperature: f64,
    pub method: String,
    pub horizon: usize,
    /// Budget in configured units.
    pub budget: Option<u64>,
    /// Budget in model calls.
    pub budget_calls: Option<u64>,
    pub query: usize,
    pub estimate: f64,
    pub std_error: Option<f64>,
    pub truth: f64,
    pub rae: Option<f64>,
    pub entropy: f64,
    pub model_calls: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub temperature: f64,
    pub method: String,
    pub horizon: usize,
    pub budget: Option<u64>,
    pub median_rae: Option<f64>,
    pub mean_rae: Option<f64>,
    pub mean_entropy: Option<f64>,
    pub queries: usize,
    /// Queries with zero truth, left out of the RAE aggregates.
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trend {
    pub method: String,
    pub horizon: usize,
    pub budget: Option<u64>,
    /// Adjacent pairs in temperature order where the median RAE went up or
    /// down.
    pub increases: usize,
    pub decreases: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
    pub summaries: Vec<Summary>,
    pub trends: Vec<Trend>,
}

impl MetricsReport {
    pub fn summary(&self, method: &str, temperature: f64, horizon: usize, budget: Option<u64>) -> Option<&Summary> {
        self.summaries
            .iter()
            .find(|s| s.method == method && s.temperature == temperature && s.horizon == horizon && s.budget == budget)
    }

    pub fn table(&self, name: &'static str) -> Table {
        let mut t = Table::new(
            name,
            vec![
                "row", "model", "T", "method", "K", "budget", "budget_calls", "query", "estimate", "std_error", "truth",
                "rae", "entropy", "model_calls", "excluded", "detail",
            ],
        );
        let budget = |b: Option<u64>| b.map(|b| b.to_string()).unwrap_or_default();
        for r in &self.rows {
            t.push(vec![
                "query".into(),
                r.model.clone(),
                num(r.temperature),
                r.method.clone(),
                r.horizon.to_string(),
                budget(r.budget),
                budget(r.budget_calls),
                r.query.to_string(),
                num(r.estimate),
                opt(r.std_error),
                num(r.truth),
                opt(r.rae),
                num(r.entropy),
                r.model_calls.to_string(),
                u8::from(r.rae.is_none()).to_string(),
                String::new(),
            ]);
        }
        let model = self.rows.first().map(|r| r.model.clone()).unwrap_or_default();
        for s in &self.summaries {
            for (kind, value) in [("median", s.median_rae), ("mean", s.mean_rae)] {
                t.push(vec![
                    kind.into(),
                    model.clone(),
                    num(s.temperature),
                    s.method.clone(),
                    s.horizon.to_string(),
                    budget(s.budget),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    opt(value),
                    opt(s.mean_entropy),
                    String::new(),
                    s.excluded.to_string(),
                    format!("queries={}", s.queries),
                ]);
            }
        }
        for tr in &self.trends {
            t.push(vec![
                "trend".into(),
                model.clone(),
                String::new(),
                tr.method.clone(),
                tr.horizon.to_string(),
                budget(tr.budget),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                format!("increases={};decreases={}", tr.increases, tr.decreases),
            ]);
        }
        t
    }
}

/// Key paths for the random streams of one run.
pub struct Streams(Substreams);

impl Streams {
    pub fn new(seed: u64) -> Self {
        Streams(Substreams::new(seed))
    }

    pub fn draws(&self) -> Substreams {
        self.0.child(0)
    }

    pub fn truth(&self, id: usize, k: usize) -> Substreams {
        self.0.child(1).child(id as u64).child(k as u64)
    }

    /// Shared by every method and budget on an instance.
    pub fn method(&self, id: usize, k: usize) -> Substreams {
        self.0.child(2).child(id as u64).child(k as u64)
    }

    pub fn entropy(&self, id: usize, k: usize) -> Substreams {
        self.0.child(3).child(id as u64).child(k as u64)
    }

    pub fn replicate(&self, id: usize, k: usize, r: usize) -> Substreams {
        self.0.child(4).child(id as u64).child(k as u64).child(r as u64)
    }

    pub fn reference(&self, id: usize, k: usize) -> Substreams {
        self.0.child(5).child(id as u64).child(k as u64)
    }
}

/// Mean over parts of the Monte Carlo restricted entropy.
pub fn restricted_entropy(model: &dyn SequenceModel, inst: &Instance, samples: usize, streams: &Substreams) -> Result<f64> {
    if samples == 0 {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for (i, part) in inst.query.parts().iter().enumerate() {
        total += Proposal::new(model, part, &inst.history).restricted_entropy(samples, &streams.child(i as u64))?.entropy;
    }
    Ok(total / inst.query.parts().len() as f64)
}

pub fn sample_draws(cfg: &ExperimentConfig, model: &dyn SequenceModel, streams: &Streams) -> Result<Draws> {
    let max_k = *cfg.horizons.iter().max().expect("validated nonempty");
    Draws::sample(model, cfg.queries, cfg.history_length, cfg.history.as_deref(), max_k, &streams.draws())
}

/// Rows for every query, horizon, method and budget under `model`, which
/// may be a temperature-wrapped view of the model the draws came from.
pub fn collect_rows(
    cfg: &ExperimentConfig,
    model: &Arc<dyn SequenceModel>,
    draws: &Draws,
    budgets: &[u64],
    temperature: f64,
    streams: &Streams,
) -> Result<Vec<MetricRow>> {
    let model_id = cfg.model.id();
    let gt = cfg.ground_truth();
    let per_query: Vec<Vec<MetricRow>> = (0..cfg.queries)
        .into_par_iter()
        .map(|id| -> Result<Vec<MetricRow>> {
            let mut rows = Vec::new();
            let m: &dyn SequenceModel = model.as_ref();
            let mut per_k = Vec::new();
            for &k in &cfg.horizons {
                let inst = draws.instance(id, &cfg.query, k, m)?;
                let truth = truth(cfg.truth, &inst, m, cfg.exact_cap, &gt, &streams.truth(id, k))?.value;
                let entropy = restricted_entropy(m, &inst, cfg.entropy_samples, &streams.entropy(id, k))?;
                let scale =
                    BudgetScale::measure(cfg.budget_unit, &inst, m, cfg.reference_width_cap, REFERENCE_SAMPLES, &streams.reference(id, k))?;
                per_k.push((k, inst, truth, entropy, scale));
            }
            for method in &cfg.methods {
                for (k, inst, truth, entropy, scale) in &per_k {
                    let budget_list: Vec<Option<u64>> =
                        if method.budgeted() { budgets.iter().map(|&b| Some(b)).collect() } else { vec![None] };
                    for budget in budget_list {
                        let calls = budget.map(|b| scale.calls(b));
                        let e = run_method(method, inst, m, calls, cfg.exact_cap, &streams.method(id, *k))?;
                        if let Some(c) = calls {
                            if e.model_calls > c + *k as u64 {
                                bail!("{} used {} calls on query {id} at budget {c}", method.name(), e.model_calls);
                            }
                        }
                        rows.push(MetricRow {
                            model: model_id.clone(),
                            temperature,
                            method: method.name(),
                            horizon: *k,
                            budget,
                            budget_calls: calls,
                            query: id,
                            estimate: e.value,
                            std_error: e.std_error,
                            truth: *truth,
                            rae: rae(*truth, e.value),
                            entropy: *entropy,
                            model_calls: e.model_calls,
                        });
                    }
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(per_query.into_iter().flatten().collect())
}

/// Median and mean RAE per (temperature, method, K, budget), in first-seen
/// order of the methods and sorted keys otherwise.
pub fn summarize(rows: &[MetricRow], methods: &[MethodSpec]) -> Vec<Summary> {
    let mut keys: Vec<(u64, usize, String, usize, Option<u64>)> = rows
        .iter()
        .map(|r| {
            let m = methods.iter().position(|s| s.name() == r.method).unwrap_or(usize::MAX);
            (r.temperature.to_bits(), m, r.method.clone(), r.horizon, r.budget)
        })
        .collect();
    keys.sort_by(|a, b| {
        f64::from_bits(a.0).total_cmp(&f64::from_bits(b.0)).then_with(|| (a.1, a.3, a.4).cmp(&(b.1, b.3, b.4)))
    });
    keys.dedup();
    keys.into_iter()
        .map(|(t, _, method, k, budget)| {
            let t = f64::from_bits(t);
            let sel: Vec<&MetricRow> = rows
                .iter()
                .filter(|r| r.temperature == t && r.method == method && r.horizon == k && r.budget == budget)
                .collect();
            let raes: Vec<f64> = sel.iter().filter_map(|r| r.rae).collect();
            let entropies: Vec<f64> = sel.iter().map(|r| r.entropy).collect();
            Summary {
                temperature: t,
                method,
                horizon: k,
                budget,
                median_rae: median(&raes),
                mean_rae: mean(&raes),
                mean_entropy: mean(&entropies),
                queries: sel.len(),
                excluded: sel.len() - raes.len(),
            }
        })
        .collect()
}

/// Counts the direction changes of median RAE along increasing temperature.
pub fn trends(summaries: &[Summary]) -> Vec<Trend> {
    let mut out: Vec<Trend> = Vec::new();
    for s in summaries {
        if out.iter().any(|t| t.method == s.method && t.horizon == s.horizon && t.budget == s.budget) {
            continue;
        }
        let mut curve: Vec<(f64, f64)> = summaries
            .iter()
            .filter(|o| o.method == s.method && o.horizon == s.horizon && o.budget == s.budget)
            .filter_map(|o| o.median_rae.map(|r| (o.temperature, r)))
            .collect();
        curve.sort_by(|a, b| a.0.total_cmp(&b.0));
        let increases = curve.windows(2).filter(|w| w[1].1 > w[0].1).count();
        let decreases = curve.windows(2).filter(|w| w[1].1 < w[0].1).count();
        out.push(Trend { method: s.method.clone(), horizon: s.horizon, budget: s.budget, increases, decreases });
    }
    out
}
