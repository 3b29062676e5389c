use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::{json, Value};

use seqquery::markov::MarkovModel;
use seqquery_harness::config::ExperimentConfig;
use seqquery_harness::experiments::{self, Report};

fn cfg(v: Value) -> ExperimentConfig {
    ExperimentConfig::from_json(&v.to_string()).unwrap()
}

fn markov_file(dir: &Path, name: &str, rows: Vec<Vec<f64>>) -> PathBuf {
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, MarkovModel::first_order(rows).unwrap().to_json()).unwrap();
    path
}

fn metrics(c: &ExperimentConfig) -> experiments::MetricsReport {
    match experiments::run(c).unwrap() {
        Report::Metrics(_, r) => r,
        other => panic!("unexpected report {other:?}"),
    }
}

#[test]
fn exact_method_has_zero_error() {
    let r = metrics(&cfg(json!({
        "experiment": "rae",
        "model": {"kind": "random_markov", "V": 4, "seed": 2},
        "query": {"family": "hitting"},
        "horizons": [2, 3, 4],
        "methods": [{"method": "exact"}],
        "queries": 20,
        "seed": 5
    })));
    assert_eq!(r.rows.len(), 60);
    assert!(r.rows.iter().all(|row| row.rae.is_none() || row.rae == Some(0.0)));
    for k in [2, 3, 4] {
        assert_eq!(r.summary("exact", 1.0, k, None).unwrap().median_rae, Some(0.0));
    }
}

#[test]
fn uniform_chain_importance_sampling_is_exact() {
    let r = metrics(&cfg(json!({
        "experiment": "rae",
        "model": {"kind": "uniform", "V": 5},
        "query": {"family": "hitting"},
        "horizons": [3],
        "methods": [{"method": "importance_sampling"}],
        "budgets": [30000],
        "queries": 100,
        "seed": 9
    })));
    assert!(r.summary("importance_sampling", 1.0, 3, Some(30000)).unwrap().median_rae.unwrap() < 0.05);
}

#[test]
fn seeded_rerun_is_byte_identical_across_thread_counts() {
    let c = cfg(json!({
        "experiment": "rae",
        "model": {"kind": "synthetic", "V": 5, "seed": 1},
        "query": {"family": "a_before_b"},
        "horizons": [3, 5],
        "methods": [{"method": "importance_sampling"}, {"method": "hybrid"}, {"method": "tail_split"}],
        "budgets": [50, 200],
        "queries": 12,
        "seed": 3,
        "entropy_samples": 20
    }));
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| experiments::run(&c).unwrap().table().to_csv())
    };
    let a = run(1);
    assert_eq!(a, run(4));
    assert_eq!(a, run(4));
    assert!(a.starts_with("# seqquery rae schema v1\n"));
}

#[test]
fn rows_respect_the_call_budget() {
    let r = metrics(&cfg(json!({
        "experiment": "rae",
        "model": {"kind": "random_markov", "V": 4, "order": 2, "seed": 8},
        "query": {"family": "count"},
        "horizons": [4],
        "methods": [
            {"method": "naive_mc"}, {"method": "uniform_mc"}, {"method": "importance_sampling"},
            {"method": "fixed_beam"}, {"method": "tail_split"}, {"method": "hybrid", "width_cap": 2}
        ],
        "budgets": [40, 400],
        "queries": 10,
        "seed": 1,
        "entropy_samples": 10
    })));
    for row in &r.rows {
        assert!(row.model_calls <= row.budget_calls.unwrap() + 4, "{row:?}");
    }
}

#[test]
fn hybrid_sample_budgets_convert_per_instance() {
    let r = metrics(&cfg(json!({
        "experiment": "budget_sweep",
        "model": {"kind": "synthetic", "V": 6, "seed": 4},
        "query": {"family": "hitting"},
        "horizons": [4],
        "methods": [{"method": "importance_sampling"}],
        "budget_unit": "hybrid_samples",
        "queries": 5,
        "seed": 2,
        "entropy_samples": 10
    })));
    let budgets: Vec<u64> = r.summaries.iter().filter_map(|s| s.budget).collect();
    assert_eq!(budgets, experiments::DEFAULT_SWEEP_BUDGETS.to_vec());
    for row in &r.rows {
        assert!(row.budget_calls.unwrap() > row.budget.unwrap());
    }
}

#[test]
fn importance_sampling_error_shrinks_with_budget() {
    let dir = tempfile::tempdir().unwrap();
    let chain = markov_file(
        dir.path(),
        "skew",
        vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.5, 0.3], vec![0.25, 0.25, 0.5]],
    );
    let mut better = 0;
    for seed in 0..100 {
        let r = metrics(&cfg(json!({
            "experiment": "budget_sweep",
            "model": {"kind": "markov", "path": chain},
            "query": {"family": "hitting", "targets": [2]},
            "horizons": [5],
            "history": [0],
            "methods": [{"method": "importance_sampling"}],
            "budgets": [50, 5000],
            "queries": 1,
            "truth": "exact",
            "entropy_samples": 0,
            "seed": seed
        })));
        let low = r.rows.iter().find(|x| x.budget == Some(50)).unwrap().rae.unwrap();
        let high = r.rows.iter().find(|x| x.budget == Some(5000)).unwrap().rae.unwrap();
        better += usize::from(high < low);
    }
    assert!(better >= 90, "{better} of 100");
}

#[test]
fn naive_sampling_misses_rare_queries_at_every_budget() {
    let dir = tempfile::tempdir().unwrap();
    let chain = markov_file(
        dir.path(),
        "rare",
        vec![vec![0.999_999, 0.000_000_9, 0.000_000_1], vec![0.5, 0.5, 0.0], vec![0.5, 0.0, 0.5]],
    );
    let r = metrics(&cfg(json!({
        "experiment": "budget_sweep",
        "model": {"kind": "markov", "path": chain},
        "query": {"family": "hitting", "targets": [2]},
        "horizons": [3],
        "history": [0],
        "methods": [{"method": "naive_mc"}, {"method": "exact"}],
        "budgets": [10, 100, 1000, 3000],
        "queries": 3,
        "truth": "exact",
        "seed": 6
    })));
    for row in &r.rows {
        assert!(row.truth > 0.0 && row.truth < 1e-5);
        match row.method.as_str() {
            "naive_mc" => {
                assert_eq!(row.estimate, 0.0);
                assert_eq!(row.rae, Some(1.0));
            }
            _ => assert_eq!(row.rae, Some(0.0)),
        }
    }
}

#[test]
fn unit_temperature_matches_the_plain_experiment() {
    let base = json!({
        "experiment": "rae",
        "model": {"kind": "random_markov", "V": 4, "seed": 7},
        "query": {"family": "hitting"},
        "horizons": [3, 4],
        "methods": [{"method": "importance_sampling"}, {"method": "fixed_beam"}],
        "budgets": [100],
        "queries": 10,
        "seed": 11,
        "entropy_samples": 20
    });
    let plain = metrics(&cfg(base.clone()));
    let mut sweep = base;
    sweep["experiment"] = json!("temperature_sweep");
    sweep["temperatures"] = json!([0.5, 1.0, 2.0]);
    let swept = metrics(&cfg(sweep));
    let at_one: Vec<_> = swept.rows.iter().filter(|r| r.temperature == 1.0).cloned().collect();
    assert_eq!(at_one, plain.rows);
    assert_eq!(swept.trends.len(), 4);
}

#[test]
fn hot_temperature_entropy_reaches_the_uniform_value() {
    let r = metrics(&cfg(json!({
        "experiment": "temperature_sweep",
        "model": {"kind": "synthetic", "V": 5, "seed": 2},
        "query": {"family": "hitting"},
        "horizons": [4],
        "methods": [{"method": "exact"}],
        "temperatures": [1e7],
        "queries": 5,
        "seed": 1,
        "entropy_samples": 50
    })));
    let uniform = 3.0 * 4f64.ln();
    for row in &r.rows {
        assert!((row.entropy - uniform).abs() < 1e-3, "{}", row.entropy);
    }
}

#[test]
fn beam_error_grows_with_temperature() {
    let r = metrics(&cfg(json!({
        "experiment": "temperature_sweep",
        "model": {"kind": "synthetic", "V": 8, "seed": 3},
        "query": {"family": "hitting"},
        "horizons": [4],
        "methods": [{"method": "fixed_beam"}],
        "budgets": [64],
        "temperatures": [0.5, 4.0],
        "queries": 20,
        "seed": 5,
        "entropy_samples": 0
    })));
    let cold = r.summary("fixed_beam", 0.5, 4, Some(64)).unwrap().median_rae.unwrap();
    let hot = r.summary("fixed_beam", 4.0, 4, Some(64)).unwrap().median_rae.unwrap();
    assert!(hot >= cold, "{hot} < {cold}");
}

fn efficiency(v: Value) -> experiments::EfficiencyReport {
    match experiments::run(&cfg(v)).unwrap() {
        Report::Efficiency(r) => r,
        other => panic!("unexpected report {other:?}"),
    }
}

#[test]
fn relative_efficiency_degenerate_cases() {
    let constant = efficiency(json!({
        "experiment": "relative_efficiency",
        "model": {"kind": "uniform", "V": 3},
        "query": {"family": "hitting"},
        "horizons": [3],
        "budgets": [60],
        "replicates": 20,
        "queries": 3,
        "seed": 1
    }));
    assert!(constant.rows.iter().all(|r| r.ratio == f64::INFINITY));
    let full = efficiency(json!({
        "experiment": "relative_efficiency",
        "model": {"kind": "uniform", "V": 3},
        "query": {"family": "marginal", "targets": [0, 1, 2]},
        "horizons": [3],
        "budgets": [60],
        "replicates": 20,
        "queries": 3,
        "seed": 1
    }));
    assert!(full.rows.iter().all(|r| r.ratio.is_nan()));
    assert_eq!(full.medians[0].3, 3);
    assert!(full.table().to_csv().contains(",nan,1\n"));
}

#[test]
fn importance_sampling_beats_naive_on_skewed_chains() {
    let r = efficiency(json!({
        "experiment": "relative_efficiency",
        "model": {"kind": "random_markov", "V": 5, "sharpness": 3.0, "seed": 4},
        "query": {"family": "hitting"},
        "horizons": [4],
        "budgets": [200],
        "replicates": 30,
        "queries": 15,
        "seed": 2
    }));
    assert!(r.median_ratio(4, 200).unwrap() > 1.0);
}

fn unaccounted(v: Value) -> experiments::UnaccountedReport {
    match experiments::run(&cfg(v)).unwrap() {
        Report::Unaccounted(r) => r,
        other => panic!("unexpected report {other:?}"),
    }
}

#[test]
fn uniform_unaccounted_mass_is_geometric() {
    let horizons: Vec<usize> = (1..=12).collect();
    let r = unaccounted(json!({
        "experiment": "q4_unaccounted",
        "model": {"kind": "uniform", "V": 3},
        "query": {"family": "a_before_b", "targets": [0], "others": [1]},
        "horizons": horizons,
        "methods": [{"method": "exact"}],
        "queries": 1,
        "history_length": 1,
        "seed": 0
    }));
    let mut last = 1.0;
    for k in 1..=12 {
        let u = r.median("exact", k).unwrap();
        assert!((u - (1.0f64 / 3.0).powi(k as i32)).abs() < 1e-12, "K={k}: {u}");
        assert!(u < last);
        last = u;
    }
}

#[test]
fn sticky_chains_leave_more_mass_unaccounted() {
    let run = |model: Value| {
        unaccounted(json!({
            "experiment": "q4_unaccounted",
            "model": model,
            "query": {"family": "a_before_b", "targets": [1], "others": [2]},
            "horizons": [30],
            "methods": [{"method": "exact"}],
            "history": [0],
            "queries": 1,
            "exact_cap": 10_000_000u64,
            "seed": 0
        }))
        .median("exact", 30)
        .unwrap()
    };
    let sticky = run(json!({"kind": "sticky", "V": 3, "stay": 0.9}));
    let uniform = run(json!({"kind": "uniform", "V": 3}));
    assert!(sticky > uniform, "{sticky} <= {uniform}");
}

fn widths(v: Value) -> experiments::WidthReport {
    match experiments::run(&cfg(v)).unwrap() {
        Report::Widths(r) => r,
        other => panic!("unexpected report {other:?}"),
    }
}

#[test]
fn deterministic_model_needs_one_beam() {
    let dir = tempfile::tempdir().unwrap();
    let chain = markov_file(
        dir.path(),
        "cycle",
        vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]],
    );
    let r = widths(json!({
        "experiment": "coverage_width_ablation",
        "model": {"kind": "markov", "path": chain},
        "query": {"family": "marginal", "targets": [0, 1, 2]},
        "horizons": [5],
        "history": [0],
        "queries": 1,
        "seed": 0
    }));
    for row in &r.rows {
        assert!(row.width <= 1, "{row:?}");
    }
}

#[test]
fn uniform_widths_follow_the_coverage_arithmetic() {
    let r = widths(json!({
        "experiment": "coverage_width_ablation",
        "model": {"kind": "uniform", "V": 3},
        "query": {"family": "marginal", "targets": [0]},
        "horizons": [5],
        "alphas": [0.95],
        "queries": 1,
        "history_length": 1,
        "seed": 0
    }));
    let w = r.widths(0, 0.95, 5);
    let expected: Vec<usize> = (1..=4u32).map(|k| (95 * 3usize.pow(k)).div_ceil(100)).chain([77]).collect();
    assert_eq!(w, expected);
}

#[test]
fn mixer_widths_grow_with_horizon() {
    let r = widths(json!({
        "experiment": "coverage_width_ablation",
        "model": {"kind": "synthetic", "V": 4, "seed": 6},
        "query": {"family": "marginal"},
        "horizons": [2, 3, 4, 5],
        "alphas": [0.5, 0.75, 0.95],
        "queries": 5,
        "seed": 1
    }));
    for q in 0..5 {
        for alpha in [0.5, 0.75, 0.95] {
            let last: Vec<usize> = (2..=5).map(|k| r.widths(q, alpha, k).iter().copied().max().unwrap()).collect();
            assert!(last.windows(2).all(|w| w[1] >= w[0]), "query {q} alpha {alpha}: {last:?}");
        }
    }
}

#[test]
fn cli_writes_experiment_csv() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.json");
    std::fs::write(
        &config,
        json!({
            "experiment": "rae",
            "model": {"kind": "sticky", "V": 3, "stay": 0.7},
            "query": {"family": "hitting"},
            "horizons": [3],
            "methods": [{"method": "exact"}, {"method": "importance_sampling"}],
            "budgets": [90],
            "queries": 4,
            "seed": 1,
            "output": "out/rae.csv"
        })
        .to_string(),
    )
    .unwrap();
    let bin = env!("CARGO_BIN_EXE_seqquery");
    let status = Command::new(bin).args(["--threads", "2", "experiment"]).arg(&config).status().unwrap();
    assert!(status.success());
    let written = std::fs::read_to_string(dir.path().join("out/rae.csv")).unwrap();
    let stdout = Command::new(bin).arg("experiment").arg(&config).args(["-o", "-"]).output().unwrap();
    assert!(stdout.status.success());
    assert_eq!(String::from_utf8(stdout.stdout).unwrap(), written);
    assert!(written.starts_with("# seqquery rae schema v1\nrow,model,T,method,K,budget"));
    assert_eq!(written.lines().filter(|l| l.starts_with("query,")).count(), 8);
}

#[test]
fn cli_validate_and_oracle() {
    let bin = env!("CARGO_BIN_EXE_seqquery");
    let out = Command::new(bin)
        .args(["validate", "--model", r#"{"kind":"random_markov","V":3,"seed":1}"#])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().filter(|l| l.starts_with("PASS")).count(), 5);
    let out = Command::new(bin)
        .args(["oracle", "--model", r#"{"kind":"uniform","V":3}"#, "q4", "--start", "2", "--a", "0", "--b", "1"])
        .output()
        .unwrap();
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["probability"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    let out = Command::new(bin)
        .args(["estimate", "--model", r#"{"kind":"uniform","V":4}"#, "--family", "hitting", "-k", "3", "--targets", "1"])
        .args(["--history", "0", "--method", "exact"])
        .output()
        .unwrap();
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["value"].as_f64().unwrap() - 9.0 / 64.0).abs() < 1e-12);
}

#[test]
fn shipped_configs_load_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut loaded = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        if !text.contains("\"experiment\"") {
            continue;
        }
        let c = ExperimentConfig::load(&path).unwrap();
        c.validate().unwrap();
        assert!(c.output.unwrap().starts_with(&dir));
        loaded += 1;
    }
    assert_eq!(loaded, 6);
}
