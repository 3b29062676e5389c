//! Experiment configuration files.
//!
//! A config is one JSON document. Relative paths inside it resolve against
//! the directory holding the config file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use seqquery::estimators::{CoverageSchedule, GroundTruthConfig};
use seqquery::markov::MarkovModel;
use seqquery::model::{NGramModel, RemoteModel, SyntheticMixerModel, TemperatureWrapped, Tokenization, UniformModel};
use seqquery::{SequenceModel, Token, Vocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Uniform {
        #[serde(rename = "V")]
        vocab: usize,
    },
    /// Markov JSON file `{"V", "P"}` (optionally `"order"`).
    Markov { path: PathBuf },
    RandomMarkov {
        #[serde(rename = "V")]
        vocab: usize,
        #[serde(default = "one")]
        order: usize,
        #[serde(default = "one_f")]
        sharpness: f64,
        seed: u64,
    },
    Sticky {
        #[serde(rename = "V")]
        vocab: usize,
        stay: f64,
    },
    /// Fit an n-gram model on a UTF-8 corpus.
    Ngram {
        corpus: PathBuf,
        #[serde(default = "one")]
        order: usize,
        #[serde(default = "one_f")]
        delta: f64,
        #[serde(default = "char_tokens")]
        tokenization: Tokenization,
    },
    /// Saved n-gram counts.
    NgramFile { path: PathBuf },
    Synthetic {
        #[serde(rename = "V")]
        vocab: usize,
        seed: u64,
    },
    Remote { addr: String },
    RemoteStdio { command: Vec<String> },
}

fn one() -> usize {
    1
}

fn one_f() -> f64 {
    1.0
}

fn char_tokens() -> Tokenization {
    Tokenization::Char
}

impl ModelSpec {
    /// Rewrites relative paths against `base`.
    pub fn resolve(&mut self, base: &Path) {
        match self {
            ModelSpec::Markov { path } | ModelSpec::NgramFile { path } | ModelSpec::Ngram { corpus: path, .. }
                if path.is_relative() =>
            {
                *path = base.join(&*path);
            }
            _ => {}
        }
    }

    pub fn build(&self) -> Result<Arc<dyn SequenceModel>> {
        let vocab = |v: usize| Vocab::new(v).with_context(|| format!("vocabulary size {v}"));
        Ok(match self {
            ModelSpec::Uniform { vocab: v } => Arc::new(UniformModel::new(vocab(*v)?)),
            ModelSpec::Markov { path } => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                Arc::new(MarkovModel::from_json(&text)?)
            }
            ModelSpec::RandomMarkov { vocab: v, order, sharpness, seed } => {
                let mut rng = seqquery::rng::Substreams::new(*seed).rng(0);
                Arc::new(MarkovModel::random(vocab(*v)?, *order, *sharpness, &mut rng))
            }
            ModelSpec::Sticky { vocab: v, stay } => Arc::new(MarkovModel::sticky(vocab(*v)?, *stay)?),
            ModelSpec::Ngram { corpus, order, delta, tokenization } => {
                Arc::new(NGramModel::fit_file(corpus, *order, *delta, *tokenization)?)
            }
            ModelSpec::NgramFile { path } => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                Arc::new(NGramModel::from_json(&text)?)
            }
            ModelSpec::Synthetic { vocab: v, seed } => Arc::new(SyntheticMixerModel::new(vocab(*v)?, *seed)),
            ModelSpec::Remote { addr } => Arc::new(RemoteModel::connect_tcp(addr)?),
            ModelSpec::RemoteStdio { command } => {
                let (program, args) = command.split_first().context("remote_stdio needs a command")?;
                Arc::new(RemoteModel::spawn_stdio(program, args)?)
            }
        })
    }

    /// The same model as an explicit transition table, when it has one.
    pub fn markov(&self) -> Result<Option<MarkovModel>> {
        let vocab = |v: usize| Vocab::new(v).with_context(|| format!("vocabulary size {v}"));
        Ok(match self {
            ModelSpec::Uniform { vocab: v } => Some(MarkovModel::uniform(vocab(*v)?, 1)),
            ModelSpec::Markov { path } => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                Some(MarkovModel::from_json(&text)?)
            }
            ModelSpec::RandomMarkov { vocab: v, order, sharpness, seed } => {
                let mut rng = seqquery::rng::Substreams::new(*seed).rng(0);
                Some(MarkovModel::random(vocab(*v)?, *order, *sharpness, &mut rng))
            }
            ModelSpec::Sticky { vocab: v, stay } => Some(MarkovModel::sticky(vocab(*v)?, *stay)?),
            ModelSpec::Ngram { corpus, order, delta, tokenization } => {
                let n = NGramModel::fit_file(corpus, *order, *delta, *tokenization)?;
                (n.order() == 1).then(|| n.to_markov()).transpose()?
            }
            ModelSpec::NgramFile { path } => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let n = NGramModel::from_json(&text)?;
                (n.order() == 1).then(|| n.to_markov()).transpose()?
            }
            ModelSpec::Synthetic { .. } | ModelSpec::Remote { .. } | ModelSpec::RemoteStdio { .. } => None,
        })
    }

    /// Short identifier for CSV rows.
    pub fn id(&self) -> String {
        match self {
            ModelSpec::Uniform { vocab } => format!("uniform-V{vocab}"),
            ModelSpec::Markov { path } | ModelSpec::NgramFile { path } => {
                path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into())
            }
            ModelSpec::RandomMarkov { vocab, order, seed, .. } => format!("markov-V{vocab}-m{order}-s{seed}"),
            ModelSpec::Sticky { vocab, stay } => format!("sticky-V{vocab}-{stay}"),
            ModelSpec::Ngram { corpus, order, .. } => format!(
                "ngram{order}-{}",
                corpus.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
            ),
            ModelSpec::Synthetic { vocab, seed } => format!("synthetic-V{vocab}-s{seed}"),
            ModelSpec::Remote { addr } => format!("remote-{addr}"),
            ModelSpec::RemoteStdio { .. } => "remote-stdio".into(),
        }
    }
}

/// Wraps a model at temperature `t`; `t = 1` returns it unchanged.
pub fn with_temperature(model: Arc<dyn SequenceModel>, t: f64) -> Result<Arc<dyn SequenceModel>> {
    if t == 1.0 {
        return Ok(model);
    }
    Ok(Arc::new(TemperatureWrapped::new(model, t)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryFamily {
    /// `τ(A) = K`.
    Hitting,
    /// `X_K ∈ A`.
    Marginal,
    /// `τ(A) < τ(B)`, truncated at `K`.
    ABeforeB,
    /// Exactly `n` occurrences of `a` in `K` steps.
    Count,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySpec {
    pub family: QueryFamily,
    /// Target set `A`. When absent, `{x_K}` from a model rollout.
    #[serde(default)]
    pub targets: Option<Vec<Token>>,
    /// `B` for `a_before_b`. When absent, `{(a + 1) mod V}`.
    #[serde(default)]
    pub others: Option<Vec<Token>>,
    /// `n` for `count`. When absent, the number of `a` in the rollout.
    #[serde(default)]
    pub count: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodSpec {
    Exact,
    NaiveMc,
    UniformMc,
    ImportanceSampling,
    FixedBeam,
    CoverageBeam {
        alpha: f64,
        #[serde(default = "constant_schedule")]
        schedule: CoverageSchedule,
        #[serde(default = "default_cap")]
        cap: usize,
    },
    TailSplit,
    Hybrid {
        #[serde(default = "default_hybrid_width")]
        width_cap: usize,
    },
}

fn constant_schedule() -> CoverageSchedule {
    CoverageSchedule::Constant
}

fn default_cap() -> usize {
    seqquery::estimators::DEFAULT_WIDTH_CAP
}

fn default_hybrid_width() -> usize {
    4
}

impl MethodSpec {
    pub fn name(&self) -> String {
        match self {
            MethodSpec::Exact => "exact".into(),
            MethodSpec::NaiveMc => "naive_mc".into(),
            MethodSpec::UniformMc => "uniform_mc".into(),
            MethodSpec::ImportanceSampling => "importance_sampling".into(),
            MethodSpec::FixedBeam => "fixed_beam".into(),
            MethodSpec::CoverageBeam { alpha, schedule, .. } => {
                let s = match schedule {
                    CoverageSchedule::Constant => "constant",
                    CoverageSchedule::Geometric => "geometric",
                };
                format!("coverage_beam(alpha={alpha},{s})")
            }
            MethodSpec::TailSplit => "tail_split".into(),
            MethodSpec::Hybrid { width_cap } => format!("hybrid(width_cap={width_cap})"),
        }
    }

    /// Whether the method consumes a budget.
    pub fn budgeted(&self) -> bool {
        !matches!(self, MethodSpec::Exact | MethodSpec::CoverageBeam { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BudgetUnit {
    #[default]
    ModelCalls,
    /// Hybrid samples: `search calls + n · (mean completion calls)` of the
    /// reference hybrid run on each instance.
    HybridSamples,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TruthSource {
    /// Exact when the query has at most `exact_cap` members, otherwise the
    /// surrogate ground truth.
    #[default]
    Auto,
    Exact,
    Surrogate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Rae,
    BudgetSweep,
    TemperatureSweep,
    RelativeEfficiency,
    Q4Unaccounted,
    CoverageWidthAblation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub model: ModelSpec,
    pub query: QuerySpec,
    pub horizons: Vec<usize>,
    #[serde(default)]
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub budgets: Vec<u64>,
    #[serde(default)]
    pub budget_unit: BudgetUnit,
    /// Width cap of the reference hybrid run for hybrid-sample budgets.
    #[serde(default = "default_hybrid_width")]
    pub reference_width_cap: usize,
    #[serde(default = "default_queries")]
    pub queries: usize,
    #[serde(default = "default_history")]
    pub history_length: usize,
    /// Fixed history for every query instead of sampled ones.
    #[serde(default)]
    pub history: Option<Vec<Token>>,
    pub seed: u64,
    #[serde(default)]
    pub truth: TruthSource,
    #[serde(default = "default_exact_cap")]
    pub exact_cap: u64,
    #[serde(default)]
    pub ground_truth: Option<GroundTruthConfig>,
    #[serde(default = "default_entropy_samples")]
    pub entropy_samples: usize,
    #[serde(default = "default_temperatures")]
    pub temperatures: Vec<f64>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_cap")]
    pub width_cap: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_queries() -> usize {
    100
}

fn default_history() -> usize {
    5
}

fn default_exact_cap() -> u64 {
    100_000
}

fn default_entropy_samples() -> usize {
    100
}

fn default_temperatures() -> Vec<f64> {
    vec![0.5, 1.0, 2.0, 4.0]
}

fn default_replicates() -> usize {
    100
}

fn default_alphas() -> Vec<f64> {
    vec![0.5, 0.75, 0.95]
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.model.resolve(&base);
        if let Some(out) = cfg.output.as_mut() {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            bail!("horizons must be nonempty and positive");
        }
        if self.budgets.contains(&0) {
            bail!("budgets must be positive");
        }
        if self.queries == 0 {
            bail!("need at least one query");
        }
        if self.history.is_none() && self.history_length == 0 {
            bail!("history_length must be at least 1");
        }
        if self.temperatures.iter().any(|t| !(*t > 0.0)) {
            bail!("temperatures must be positive");
        }
        if self.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            bail!("coverage targets must lie in (0, 1)");
        }
        let needs_budget = match self.experiment {
            ExperimentKind::BudgetSweep | ExperimentKind::CoverageWidthAblation => false,
            ExperimentKind::RelativeEfficiency => true,
            _ => self.methods.iter().any(MethodSpec::budgeted),
        };
        if needs_budget && self.budgets.is_empty() {
            bail!("budgeted methods need at least one budget");
        }
        if self.experiment == ExperimentKind::RelativeEfficiency && self.replicates < 2 {
            bail!("relative efficiency needs at least two replicates");
        }
        Ok(())
    }

    pub fn ground_truth(&self) -> GroundTruthConfig {
        self.ground_truth.unwrap_or_default()
    }
}
