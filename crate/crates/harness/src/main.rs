use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use seqquery::markov::{
    general_query_markov, hitting_distribution, q2_marginal, q3_hitting, q4_a_before_b, query_probability, steady_state,
    MarkovModel,
};
use seqquery::rng::Substreams;
use seqquery::{History, SequenceModel, Token};
use seqquery_harness::config::{ExperimentConfig, MethodSpec, ModelSpec, QueryFamily, QuerySpec};
use seqquery_harness::experiments;
use seqquery_harness::instances::{build_query, Instance};
use seqquery_harness::methods::run_method;
use seqquery_harness::validate::{validate_model, ValidationConfig};

#[derive(Parser)]
#[command(name = "seqquery", version, about = "Probabilistic queries over autoregressive sequence models")]
struct Cli {
    /// Worker threads for parallel experiment loops.
    #[arg(long, global = true, env = "SEQQUERY_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate one query and print the estimate as JSON.
    Estimate {
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        query: QueryArgs,
        /// Method name or JSON method spec.
        #[arg(long, default_value = "importance_sampling")]
        method: String,
        /// Model-call budget for budgeted methods.
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = seqquery::estimators::DEFAULT_EXACT_CAP)]
        exact_cap: u64,
    },
    /// Run an experiment config and write its CSV.
    Experiment {
        config: PathBuf,
        /// Output path, `-` for stdout; overrides the config. Stdout when
        /// neither is set.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Closed-form and exact answers for a Markov chain.
    Oracle {
        #[command(flatten)]
        model: ModelArg,
        #[command(subcommand)]
        which: OracleCommand,
    },
    /// Check a model's invariants. Exits nonzero when any check fails.
    Validate {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        contexts: usize,
        #[arg(long, default_value_t = 3)]
        horizon: usize,
    },
}

#[derive(clap::Args)]
struct ModelArg {
    /// Model spec as inline JSON, a JSON spec file, or a Markov chain file.
    #[arg(long)]
    model: String,
}

#[derive(clap::Args)]
struct QueryArgs {
    /// hitting, marginal, a_before_b or count.
    #[arg(long)]
    family: String,
    #[arg(long, short = 'k')]
    horizon: usize,
    #[arg(long, value_delimiter = ',', required = true)]
    targets: Vec<Token>,
    #[arg(long, value_delimiter = ',')]
    others: Option<Vec<Token>>,
    #[arg(long)]
    count: Option<usize>,
    /// Comma-separated history tokens.
    #[arg(long, value_delimiter = ',')]
    history: Vec<Token>,
}

#[derive(Subcommand)]
enum OracleCommand {
    SteadyState,
    /// Distribution of `X_K` given `X_0 = start`.
    Q2 {
        #[arg(long)]
        start: Token,
        #[arg(long, short = 'k')]
        horizon: usize,
    },
    /// `p(τ(a) = K | X_0 = start)`, recursive and closed form.
    Q3 {
        #[arg(long)]
        start: Token,
        #[arg(long)]
        target: Token,
        #[arg(long, short = 'k')]
        horizon: usize,
    },
    /// `p(τ(a) < τ(b) | X_0 = start)` over an unbounded horizon.
    Q4 {
        #[arg(long)]
        start: Token,
        #[arg(long)]
        a: Token,
        #[arg(long)]
        b: Token,
    },
    /// Any query family via restricted marginalization.
    Query {
        #[command(flatten)]
        query: QueryArgs,
    },
}

fn model_spec(arg: &str) -> Result<ModelSpec> {
    if arg.trim_start().starts_with('{') {
        return serde_json::from_str(arg).context("parsing model spec");
    }
    let path = Path::new(arg);
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {arg}"))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {arg}"))?;
    if value.get("kind").is_some() {
        let mut spec: ModelSpec = serde_json::from_value(value)?;
        spec.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(spec)
    } else {
        Ok(ModelSpec::Markov { path: path.to_path_buf() })
    }
}

fn method_spec(arg: &str) -> Result<MethodSpec> {
    let text = if arg.trim_start().starts_with('{') { arg.to_string() } else { json!({ "method": arg }).to_string() };
    serde_json::from_str(&text).with_context(|| format!("unknown method {arg}"))
}

fn query_spec(args: &QueryArgs) -> Result<QuerySpec> {
    let family: QueryFamily =
        serde_json::from_value(json!(args.family)).with_context(|| format!("unknown query family {}", args.family))?;
    Ok(QuerySpec { family, targets: Some(args.targets.clone()), others: args.others.clone(), count: args.count })
}

fn markov_of(spec: &ModelSpec) -> Result<MarkovModel> {
    spec.markov()?.context("oracle needs a Markov chain model")
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json values serialize"));
}

fn oracle(model: &ModelArg, which: &OracleCommand) -> Result<()> {
    let chain = markov_of(&model_spec(&model.model)?)?;
    let out = match which {
        OracleCommand::SteadyState => json!({ "pi": steady_state(chain.matrix()?)?.pi }),
        OracleCommand::Q2 { start, horizon } => {
            let m = q2_marginal(chain.matrix()?, *start, *horizon)?;
            json!({ "probs": m.probs, "multiplications": m.multiplications })
        }
        OracleCommand::Q3 { start, target, horizon } => {
            let p = chain.matrix()?;
            let h = q3_hitting(p, *start, *target, *horizon)?;
            json!({
                "recursive": h.recursive,
                "closed_form": h.closed_form.as_ref().ok(),
                "closed_form_error": h.closed_form.as_ref().err().map(|e| e.to_string()),
                "distribution": hitting_distribution(p, *start, *target, *horizon)?,
            })
        }
        OracleCommand::Q4 { start, a, b } => json!({ "probability": q4_a_before_b(chain.matrix()?, *start, *a, *b)? }),
        OracleCommand::Query { query } => {
            let q = build_query(&query_spec(query)?, query.horizon, chain.vocab(), None)?;
            let parts: Vec<f64> = q
                .parts()
                .iter()
                .map(|p| general_query_markov(&chain, p, &query.history).map(|r| r.probability))
                .collect::<Result<_, _>>()?;
            json!({ "query": q.label(), "probability": query_probability(&chain, &q, &query.history)?, "parts": parts })
        }
    };
    print_json(&out);
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring thread pool")?;
    }
    match cli.command {
        Command::Estimate { model, query, method, budget, seed, exact_cap } => {
            let m = model_spec(&model.model)?.build()?;
            let q = build_query(&query_spec(&query)?, query.horizon, m.vocab(), None)?;
            let inst = Instance { id: 0, history: History::new(query.history.clone()), query: q };
            let e = run_method(&method_spec(&method)?, &inst, m.as_ref(), budget, exact_cap, &Substreams::new(seed))?;
            println!("{}", e.to_json());
        }
        Command::Experiment { config, output } => {
            let cfg = ExperimentConfig::load(&config)?;
            let table = experiments::run(&cfg)?.table();
            match output.or(cfg.output) {
                Some(path) if path != Path::new("-") => table.save(&path)?,
                _ => table.write(std::io::stdout().lock())?,
            }
        }
        Command::Oracle { model, which } => oracle(&model, &which)?,
        Command::Validate { model, seed, contexts, horizon } => {
            let spec = model_spec(&model.model)?;
            let m = spec.build()?;
            let chain = spec.markov()?;
            if contexts == 0 {
                bail!("need at least one context");
            }
            let cfg = ValidationConfig { contexts, horizon, seed, ..ValidationConfig::default() };
            let report = validate_model(m.as_ref(), chain.as_ref(), &cfg)?;
            for c in &report.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
