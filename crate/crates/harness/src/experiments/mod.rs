//! Experiment recipes. Each returns a typed report that renders to a CSV
//! [`Table`].

mod metrics;

use std::sync::Arc;

use anyhow::{bail, Result};
use rayon::prelude::*;

use seqquery::estimators::{coverage_beam_part, CoverageSchedule};
use seqquery::query::a_before_b;
use seqquery::{SequenceModel, Token};

use crate::config::{with_temperature, ExperimentConfig, ExperimentKind, MethodSpec, QueryFamily};
use crate::instances::Instance;
use crate::methods::run_method;
use crate::table::{median, num, opt, Table};

pub use metrics::{
    collect_rows, restricted_entropy, sample_draws, summarize, trends, MetricRow, MetricsReport, Streams, Summary, Trend,
    REFERENCE_SAMPLES,
};

/// Budgets (hybrid-sample units) swept when a budget sweep names none.
pub const DEFAULT_SWEEP_BUDGETS: [u64; 7] = [10, 30, 50, 100, 300, 500, 1000];

/// Any experiment's result.
#[derive(Debug, Clone, PartialEq)]
pub enum Report {
    Metrics(&'static str, MetricsReport),
    Efficiency(EfficiencyReport),
    Unaccounted(UnaccountedReport),
    Widths(WidthReport),
}

impl Report {
    pub fn table(&self) -> Table {
        match self {
            Report::Metrics(name, r) => r.table(name),
            Report::Efficiency(r) => r.table(),
            Report::Unaccounted(r) => r.table(),
            Report::Widths(r) => r.table(),
        }
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<Report> {
    let model = cfg.model.build()?;
    run_with_model(cfg, model)
}

/// Runs `cfg` against an already constructed model.
pub fn run_with_model(cfg: &ExperimentConfig, model: Arc<dyn SequenceModel>) -> Result<Report> {
    cfg.validate()?;
    Ok(match cfg.experiment {
        ExperimentKind::Rae => Report::Metrics("rae", rae_experiment(cfg, &model)?),
        ExperimentKind::BudgetSweep => Report::Metrics("budget_sweep", budget_sweep(cfg, &model)?),
        ExperimentKind::TemperatureSweep => Report::Metrics("temperature_sweep", temperature_sweep(cfg, &model)?),
        ExperimentKind::RelativeEfficiency => Report::Efficiency(relative_efficiency(cfg, &model)?),
        ExperimentKind::Q4Unaccounted => Report::Unaccounted(q4_unaccounted(cfg, &model)?),
        ExperimentKind::CoverageWidthAblation => Report::Widths(coverage_width_ablation(cfg, &model)?),
    })
}

/// Estimates against (surrogate) ground truth for every query, method, `K`
/// and budget.
pub fn rae_experiment(cfg: &ExperimentConfig, model: &Arc<dyn SequenceModel>) -> Result<MetricsReport> {
    let streams = Streams::new(cfg.seed);
    let draws = sample_draws(cfg, model.as_ref(), &streams)?;
    let rows = collect_rows(cfg, model, &draws, &cfg.budgets, 1.0, &streams)?;
    let summaries = summarize(&rows, &cfg.methods);
    Ok(MetricsReport { rows, summaries, trends: Vec::new() })
}

/// The RAE experiment over a grid of budgets.
pub fn budget_sweep(cfg: &ExperimentConfig, model: &Arc<dyn SequenceModel>) -> Result<MetricsReport> {
    let mut cfg = cfg.clone();
    if cfg.budgets.is_empty() {
        cfg.budgets = DEFAULT_SWEEP_BUDGETS.to_vec();
    }
    rae_experiment(&cfg, model)
}

/// The RAE experiment at each temperature. Histories and targets are drawn
/// once from the untempered model, so every temperature sees the same
/// queries.
pub fn temperature_sweep(cfg: &ExperimentConfig, model: &Arc<dyn SequenceModel>) -> Result<MetricsReport> {
    let streams = Streams::new(cfg.seed);
    let draws = sample_draws(cfg, model.as_ref(), &streams)?;
    let mut rows = Vec::new();
    for &t in &cfg.temperatures {
        let tempered = with_temperature(model.clone(), t)?;
        rows.extend(collect_rows(cfg, &tempered, &draws, &cfg.budgets, t, &streams)?);
    }
    let summaries = summarize(&rows, &cfg.methods);
    let trends = trends(&summaries);
    Ok(MetricsReport { rows, summaries, trends })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyRow {
    pub query: usize,
    pub horizon: usize,
    pub budget: u64,
    pub var_naive: f64,
    pub var_is: f64,
    /// `var_naive / var_is`: `inf` when only the sampler is exact, `nan`
    /// when both are.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyReport {
    pub model: String,
    pub rows: Vec<EfficiencyRow>,
    /// `(K, budget, median ratio, undefined count)`.
    pub medians: Vec<(usize, u64, Option<f64>, usize)>,
}

impl EfficiencyReport {
    pub fn median_ratio(&self, horizon: usize, budget: u64) -> Option<f64> {
        self.medians.iter().find(|m| m.0 == horizon && m.1 == budget).and_then(|m| m.2)
    }

    pub fn table(&self) -> Table {
        let mut t =
            Table::new("relative_efficiency", vec!["row", "model", "K", "budget", "query", "var_naive", "var_is", "ratio", "undefined"]);
        for r in &self.rows {
            t.push(vec![
                "query".into(),
                self.model.clone(),
                r.horizon.to_string(),
                r.budget.to_string(),
                r.query.to_string(),
                num(r.var_naive),
                num(r.var_is),
                num(r.ratio),
                u8::from(r.ratio.is_nan()).to_string(),
            ]);
        }
        for (k, b, m, undefined) in &self.medians {
            t.push(vec![
                "median".into(),
                self.model.clone(),
                k.to_string(),
                b.to_string(),
                String::new(),
                String::new(),
                String::new(),
                opt(*m),
                undefined.to_string(),
            ]);
        }
        t
    }
}

fn replicate_variance(values: &[f64]) -> f64 {
    seqquery::stats::sample_variance(values)
}

/// `Var(naive) / Var(IS)` over `replicates` seeded runs of each at the same
/// model-call budget.
pub fn relative_efficiency(cfg: &ExperimentConfig, model: &Arc<dyn SequenceModel>) -> Result<EfficiencyReport> {
    if cfg.replicates < 2 {
        bail!("relative efficiency needs at least two replicates");
    }
    let streams = Streams::new(cfg.seed);
    let m: &dyn SequenceModel = model.as_ref();
    let draws = sample_draws(cfg, m, &streams)?;
    let per_query: Vec<Vec<EfficiencyRow>> = (0..cfg.queries)
        .into_par_iter()
        .map(|id| -> Result<Vec<EfficiencyRow>> {
            let mut rows = Vec::new();
            for &k in &cfg.horizons {
                let inst = draws.instance(id, &cfg.query, k, m)?;
                for &budget in &cfg.budgets {
                    let mut naive = Vec::with_capacity(cfg.replicates);
                    let mut is = Vec::with_capacity(cfg.replicates);
                    for r in 0..cfg.replicates {
                        let s = streams.replicate(id, k, r);
                        naive.push(run_method(&MethodSpec::NaiveMc, &inst, m, Some(budget), cfg.exact_cap, &s)?.raw_value);
                        is.push(run_method(&MethodSpec::ImportanceSampling, &inst, m, Some(budget), cfg.exact_cap, &s)?.raw_value);
                    }
                    let (var_naive, var_is) = (replicate_variance(&naive), replicate_variance(&is));
                    let ratio = if var_is > 0.0 {
                        var_naive / var_is
                    } else if var_naive > 0.0 {
                        f64::INFINITY
                    } else {
                        f64::NAN
                    };
                    rows.push(EfficiencyRow { query: id, horizon: k, budget, var_naive, var_is, ratio });
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let rows: Vec<EfficiencyRow> = per_query.into_iter().flatten().collect();
    let mut medians = Vec::new();
    for &k in &cfg.horizons {
        for &b in &cfg.budgets {
            let ratios: Vec<f64> = rows.iter().filter(|r| r.horizon == k && r.budget == b).map(|r| r.ratio).collect();
            let undefined = ratios.iter().filter(|r| r.is_nan()).count();
            medians.push((k, b, median(&ratios), undefined));
        }
    }
    Ok(EfficiencyReport { model: cfg.model.id(), rows, medians })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnaccountedRow {
    pub query: usize,
    pub method: String,
    pub max_horizon: usize,
    pub budget: Option<u64>,
    pub a_before_b: f64,
    pub b_before_a: f64,
    pub unaccounted: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnaccountedReport {
    pub model: String,
    pub rows: Vec<UnaccountedRow>,
}

impl UnaccountedReport {
    /// Lower median over queries of the unaccounted mass.
    pub fn median(&self, method: &str, max_horizon: usize) -> Option<f64> {
        let xs: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.max_horizon == max_horizon)
            .map(|r| r.unaccounted)
            .collect();
        median(&xs)
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(
            "q4_unaccounted",
            vec!["model", "method", "K_max", "budget", "query", "a_before_b", "b_before_a", "unaccounted"],
        );
        for r in &self.rows {
            t.push(vec![
                self.model.clone(),
                r.method.clone(),
                r.max_horizon.to_string(),
                r.budget.map(|b| b.to_string()).unwrap_or_default(),
                r.query.to_string(),
                num(r.a_before_b),
                num(r.b_before_a),
                num(r.unaccounted),
            ]);
        }
        t
    }
}

/// `1 − (p̂(τ(A) < τ(B)) + p̂(τ(B) < τ(A)))` against the truncation horizon.
/// `A` and `B` are fixed per query across horizons.
pub fn q4_unaccounted(cfg: &ExperimentConfig, model: &Arc<dyn SequenceModel>) -> Result<UnaccountedReport> {
    if cfg.query.family != QueryFamily::ABeforeB {
        bail!("the unaccounted-probability study needs the a_before_b family");
    }
    let streams = Streams::new(cfg.seed);
    let m: &dyn SequenceModel = model.as_ref();
    let vocab = m.vocab();
    let draws = sample_draws(cfg, m, &streams)?;
    let max_k = *cfg.horizons.iter().max().expect("validated nonempty");
    let per_query: Vec<Vec<UnaccountedRow>> = (0..cfg.queries)
        .into_par_iter()
        .map(|id| -> Result<Vec<UnaccountedRow>> {
            let a: Vec<Token> = cfg.query.targets.clone().unwrap_or_else(|| vec![draws.rollouts[id][max_k - 1]]);
            let b: Vec<Token> = cfg.query.others.clone().unwrap_or_else(|| vec![(a[0] + 1) % vocab.size() as Token]);
            let history = draws.histories[id].clone();
            let mut rows = Vec::new();
            for method in &cfg.methods {
                let budgets: Vec<Option<u64>> =
                    if method.budgeted() { cfg.budgets.iter().map(|&b| Some(b)).collect() } else { vec![None] };
                for &k in &cfg.horizons {
                    for &budget in &budgets {
                        let s = streams.method(id, k);
                        let ab = Instance { id, history: history.clone(), query: a_before_b(&a, &b, k, vocab)? };
                        let ba = Instance { id, history: history.clone(), query: a_before_b(&b, &a, k, vocab)? };
                        let p_ab = run_method(method, &ab, m, budget, cfg.exact_cap, &s.child(0))?.value;
                        let p_ba = run_method(method, &ba, m, budget, cfg.exact_cap, &s.child(1))?.value;
                        rows.push(UnaccountedRow {
                            query: id,
                            method: method.name(),
                            max_horizon: k,
                            budget,
                            a_before_b: p_ab,
                            b_before_a: p_ba,
                            unaccounted: 1.0 - (p_ab + p_ba),
                        });
                    }
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(UnaccountedReport { model: cfg.model.id(), rows: per_query.into_iter().flatten().collect() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WidthRow {
    pub query: usize,
    pub alpha: f64,
    pub horizon: usize,
    pub depth: usize,
    pub width: usize,
    pub capped: bool,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WidthReport {
    pub model: String,
    pub rows: Vec<WidthRow>,
}

impl WidthReport {
    /// Widths by depth for one query, `α` and `K`.
    pub fn widths(&self, query: usize, alpha: f64, horizon: usize) -> Vec<usize> {
        self.rows
            .iter()
            .filter(|r| r.query == query && r.alpha == alpha && r.horizon == horizon)
            .map(|r| r.width)
            .collect()
    }

    pub fn table(&self) -> Table {
        let mut t =
            Table::new("coverage_width_ablation", vec!["model", "query", "alpha", "K", "depth", "width", "capped", "coverage"]);
        for r in &self.rows {
            t.push(vec![
                self.model.clone(),
                r.query.to_string(),
                num(r.alpha),
                r.horizon.to_string(),
                r.depth.to_string(),
                r.width.to_string(),
                u8::from(r.capped).to_string(),
                num(r.coverage),
            ]);
        }
        t
    }
}

/// Realized coverage-beam widths per depth under the constant schedule.
pub fn coverage_width_ablation(cfg: &ExperimentConfig, model: &Arc<dyn SequenceModel>) -> Result<WidthReport> {
    let streams = Streams::new(cfg.seed);
    let m: &dyn SequenceModel = model.as_ref();
    let draws = sample_draws(cfg, m, &streams)?;
    let per_query: Vec<Vec<WidthRow>> = (0..cfg.queries)
        .into_par_iter()
        .map(|id| -> Result<Vec<WidthRow>> {
            let mut rows = Vec::new();
            for &alpha in &cfg.alphas {
                for &k in &cfg.horizons {
                    let inst = draws.instance(id, &cfg.query, k, m)?;
                    for part in inst.query.parts() {
                        let set =
                            coverage_beam_part(part, m, &inst.history, alpha, CoverageSchedule::Constant, cfg.width_cap)?;
                        for (d, &w) in set.widths.iter().enumerate() {
                            rows.push(WidthRow {
                                query: id,
                                alpha,
                                horizon: k,
                                depth: d + 1,
                                width: w,
                                capped: set.capped,
                                coverage: set.coverage,
                            });
                        }
                    }
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(WidthReport { model: cfg.model.id(), rows: per_query.into_iter().flatten().collect() })
}
