//! Acceptance suite: one PASS/FAIL line per criterion. With
//! `ACCEPTANCE_STRICT=1` the process exits nonzero if any criterion fails.
//! Every stochastic criterion uses the fixed master seed below.

use std::path::Path;
use std::time::{Duration, Instant};

use creator_game::bounds::{dynamic_poa_bound, lower_bound_hypothesis, poa_upper_bound};
use creator_game::checks::{lemma_suites, oracle_equivalence, prop1_check, thm2_grid, CheckOutcome};
use creator_game::instances::{prop1_welfare_ratio, synthetic_embedding, write_vector_csv};
use creator_game_cli::{run_experiment, ExperimentConfig, ResultRow};

const SEED: u64 = 1;

struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(failures: Vec<String>, summary: String) -> Self {
        if failures.is_empty() {
            Verdict {
                passed: true,
                detail: summary,
            }
        } else {
            Verdict {
                passed: false,
                detail: format!("{summary}; {} failing: {}", failures.len(), failures.join("; ")),
            }
        }
    }

    fn from_checks(outcomes: &[CheckOutcome]) -> Self {
        let failures = outcomes
            .iter()
            .filter(|o| !o.passed)
            .map(|o| format!("{} ({} of {}): {}", o.name, o.violations, o.comparisons, o.detail))
            .collect();
        let summary = outcomes
            .iter()
            .map(|o| format!("{} {}/{}", o.name, o.comparisons - o.violations, o.comparisons))
            .collect::<Vec<_>>()
            .join(", ");
        Verdict::new(failures, summary)
    }
}

fn experiment(json: &str, dir: &Path) -> Vec<ResultRow> {
    let config = ExperimentConfig::from_json_str(json).expect("valid acceptance config");
    run_experiment(&config, dir).expect("experiment runs").rows
}

/// Aggregated value of `metric` over trials in the cell matching `pick`.
fn cell_values<'a>(
    rows: &'a [ResultRow],
    metric: &'a str,
    pick: impl Fn(&ResultRow) -> bool + 'a,
) -> impl Iterator<Item = &'a ResultRow> + 'a {
    rows.iter().filter(move |r| r.metric == metric && pick(r))
}

fn worst(rows: &[ResultRow], metric: &str, pick: impl Fn(&ResultRow) -> bool) -> Option<f64> {
    cell_values(rows, metric, pick)
        .filter_map(|r| r.value)
        .reduce(f64::max)
}

fn errors(rows: &[ResultRow]) -> Vec<String> {
    rows.iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("cell {} trial {}: {e}", r.cell, r.trial)))
        .collect()
}

fn bounds_columns(dir: &Path) -> Verdict {
    let rows = experiment(
        r#"{"id": "bounds", "kind": "bounds_table",
            "grid": {"n": [5], "K": [1, 2, 3, 4, 5, 7], "beta": [0.1, 0.5]}}"#,
        dir,
    );
    let targets = [
        (0.1, [2.00, 1.93, 1.89, 1.86, 1.84, 1.80]),
        (0.5, [2.00, 1.77, 1.65, 1.57, 1.52, 1.45]),
    ];
    let mut failures = errors(&rows);
    for (beta, cells) in targets {
        for (k, target) in [1, 2, 3, 4, 5, 7].into_iter().zip(cells) {
            let v = worst(&rows, "poa_upper", |r| r.beta == beta && r.k == k);
            match v {
                Some(v) if (v - target).abs() <= 0.005 => {}
                other => failures.push(format!("beta={beta} K={k}: {other:?} vs {target}")),
            }
        }
    }
    Verdict::new(failures, "12 asterisk cells within 0.005".into())
}

fn deterministic_cells(dir: &Path) -> Verdict {
    let rows = experiment(
        r#"{"id": "n2", "kind": "poa_table", "trials": 1, "seed": 1,
            "grid": {"n": [2], "K": [1, 2], "beta": [0.1, 0.5]}}"#,
        dir,
    );
    let mut failures = errors(&rows);
    let mut seen = Vec::new();
    for (beta, k, target) in [(0.1, 1, 1.33), (0.1, 2, 1.28), (0.5, 2, 1.11)] {
        let v = worst(&rows, "poa", |r| r.beta == beta && r.k == k);
        seen.push(format!("({beta},{k})={}", v.map_or("-".into(), |v| format!("{v:.4}"))));
        match v {
            Some(v) if (v - target).abs() <= 0.02 => {}
            other => failures.push(format!("beta={beta} K={k}: {other:?} vs {target}")),
        }
    }
    Verdict::new(failures, seen.join(" "))
}

/// Published worst-of-10 PoA cells for `n = 3, 4, 5`.
fn published_poa(beta: f64, k: usize, n: usize) -> Option<f64> {
    let t01 = [
        [1.54, 1.66, 1.72],
        [1.46, 1.56, 1.60],
        [1.42, 1.47, 1.51],
        [f64::NAN, 1.43, 1.42],
        [f64::NAN, f64::NAN, 1.42],
    ];
    let t05 = [
        [1.54, 1.66, 1.72],
        [1.24, 1.32, 1.34],
        [1.08, 1.13, 1.18],
        [f64::NAN, 1.05, 1.08],
        [f64::NAN, f64::NAN, 1.02],
    ];
    let t = if beta == 0.1 { &t01 } else { &t05 };
    let v = t[k - 1][n - 3];
    (!v.is_nan()).then_some(v)
}

fn bound_conformance(dir: &Path) -> Verdict {
    let rows = experiment(
        r#"{"id": "poa_scale", "kind": "poa_table", "trials": 10, "aggregation": "worst", "seed": 1,
            "grid": {"n": [3, 4, 5], "K": [1, 2, 3, 4, 5], "beta": [0.1, 0.5]}}"#,
        dir,
    );
    let mut failures = errors(&rows);
    let mut cells = 0;
    let mut out_of_bound = 0;
    for beta in [0.1, 0.5] {
        for n in 3..=5 {
            for k in 1..=n.min(5) {
                let Some(target) = published_poa(beta, k, n) else { continue };
                cells += 1;
                let pick = |r: &ResultRow| r.beta == beta && r.n == n && r.k == k;
                let ub = poa_upper_bound(beta, k);
                for r in cell_values(&rows, "poa", pick) {
                    if let Some(v) = r.value {
                        if !(1.0 - 1e-9..ub).contains(&v) {
                            out_of_bound += 1;
                            failures.push(format!("beta={beta} n={n} K={k} trial {}: PoA {v} outside [1, {ub:.4})", r.trial));
                        }
                    }
                }
                match worst(&rows, "poa", pick) {
                    Some(v) if (v - target).abs() <= 0.10 => {}
                    Some(v) => failures.push(format!("beta={beta} n={n} K={k}: worst {v:.3} vs {target}")),
                    None => failures.push(format!("beta={beta} n={n} K={k}: no value")),
                }
            }
        }
    }
    Verdict::new(
        failures,
        format!("{cells} cells, {out_of_bound} trials outside the theoretical range"),
    )
}

fn lower_bound_instances() -> Verdict {
    let mut grid = Vec::new();
    for n in 3..=5 {
        for k in 2..n {
            for beta in [0.1, 0.2] {
                if lower_bound_hypothesis(n, beta, k) {
                    grid.push((n, k, beta));
                }
            }
        }
    }
    match thm2_grid(&grid) {
        Ok(o) => Verdict::from_checks(&[o]),
        Err(e) => Verdict::new(vec![e.to_string()], String::new()),
    }
}

fn exposure_instance() -> Verdict {
    let ratio = prop1_welfare_ratio(2, 0.1);
    let mut failures = Vec::new();
    if (ratio - 3.86).abs() > 0.01 {
        failures.push(format!("ratio formula {ratio} vs 3.86"));
    }
    match prop1_check(3, 2, 0.1) {
        Ok(o) => {
            let v = Verdict::from_checks(&[o]);
            if !v.passed {
                failures.push(v.detail.clone());
            }
            Verdict::new(failures, format!("formula ratio {ratio:.4}; {}", v.detail))
        }
        Err(e) => Verdict::new(vec![e.to_string()], String::new()),
    }
}

fn pota_dynamics(dir: &Path) -> Verdict {
    let rows = experiment(
        r#"{"id": "pota", "kind": "pota_table", "trials": 10, "aggregation": "worst", "seed": 1,
            "grid": {"n": [5], "K": [1, 3, 5], "beta": [0.1]},
            "dynamics": {"horizon": 5000, "regret": true}}"#,
        dir,
    );
    let mut failures = errors(&rows);
    let mut seen = Vec::new();
    for (k, target) in [(1, 1.59), (3, 1.37), (5, 1.35)] {
        let ub = poa_upper_bound(0.1, k);
        let w = worst(&rows, "pota", |r| r.k == k);
        seen.push(format!("K={k}: {}", w.map_or("-".into(), |v| format!("{v:.3}"))));
        match w {
            Some(v) if v <= ub && (v - target).abs() <= 0.15 => {}
            other => failures.push(format!("K={k}: worst PotA {other:?} vs {target} (bound {ub:.3})")),
        }
        for trial in 0..10 {
            let one = |m: &str| worst(&rows, m, |r| r.k == k && r.trial == trial);
            let (Some(p), Some(rate)) = (one("pota"), one("regret_rate")) else {
                failures.push(format!("K={k} trial {trial}: missing rows"));
                continue;
            };
            // K = 1 leaves the dynamic bound undefined (infinite), so it holds
            if let Ok(b) = dynamic_poa_bound(5, 0.1, k, rate) {
                if p >= b {
                    failures.push(format!("K={k} trial {trial}: PotA {p:.4} >= dynamic bound {b:.4}"));
                }
            }
        }
    }
    Verdict::new(failures, seen.join(", "))
}

fn synthetic_embedding_trends(dir: &Path) -> Verdict {
    let emb = synthetic_embedding(200, 2000, 16, 0.1, SEED).expect("synthetic embedding");
    let users = dir.join("users.csv");
    let items = dir.join("items.csv");
    write_vector_csv(&users, &emb.users).expect("write users");
    write_vector_csv(&items, &emb.items).expect("write items");
    let config = format!(
        r#"{{"id": "embedding", "kind": "exploration_sweep", "family": "embedding", "trials": 3,
            "aggregation": "mean", "seed": 1,
            "grid": {{"n": [5, 10], "K": [5], "beta": [0.1], "epsilon": [0.1]}},
            "dynamics": {{"horizon": 1000, "regret": false}},
            "embedding": {{"users": {users:?}, "items": {items:?}, "threshold": {}}}}}"#,
        emb.threshold
    );
    let rows = experiment(&config, dir);
    let mut failures = errors(&rows);
    let mean = |n: usize| {
        let v: Vec<f64> = cell_values(&rows, "avg_welfare_per_user", |r| r.n == n)
            .filter_map(|r| r.value)
            .collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    };
    let (w5, w10) = (mean(5), mean(10));
    if !(w10 > w5) {
        failures.push(format!("average welfare per user {w10:.4} at n=10 not above {w5:.4} at n=5"));
    }
    let cap = poa_upper_bound(0.1, 5) + 0.1;
    for n in [5, 10] {
        if let Some(p) = worst(&rows, "pota", |r| r.n == n) {
            if p > cap {
                failures.push(format!("n={n}: PotA {p:.3} > {cap:.3}"));
            }
        }
    }
    let p5 = worst(&rows, "pota", |r| r.n == 5).unwrap_or(f64::NAN);
    let p10 = worst(&rows, "pota", |r| r.n == 10).unwrap_or(f64::NAN);
    Verdict::new(
        failures,
        format!("threshold {:.4}; W/m n=5 {w5:.4}, n=10 {w10:.4}; worst PotA {p5:.3}, {p10:.3}", emb.threshold),
    )
}

fn determinism(dir: &Path) -> Verdict {
    let configs = [
        r#"{"id": "det_poa", "kind": "poa_table", "trials": 3, "seed": 9, "workers": WORKERS,
            "grid": {"n": [3, 4], "K": [1, 2], "beta": [0.1, 0.5]}}"#,
        r#"{"id": "det_pota", "kind": "pota_table", "trials": 3, "seed": 9, "workers": WORKERS,
            "grid": {"n": [4], "K": [2], "beta": [0.1]}, "dynamics": {"horizon": 500}}"#,
    ];
    let mut failures = Vec::new();
    let mut compared = 0;
    for cfg in configs {
        let a = dir.join("a");
        let b = dir.join("b");
        experiment(&cfg.replace("WORKERS", "1"), &a);
        experiment(&cfg.replace("WORKERS", "4"), &b);
        let mut names: Vec<_> = std::fs::read_dir(&a)
            .expect("read output dir")
            .filter_map(|e| e.ok().map(|e| e.file_name()))
            .filter(|n| n.to_string_lossy().ends_with(".csv"))
            .collect();
        names.sort();
        for name in names {
            compared += 1;
            let x = std::fs::read(a.join(&name)).expect("read first run");
            let y = std::fs::read(b.join(&name)).unwrap_or_default();
            if x != y {
                failures.push(format!("{} differs between runs", name.to_string_lossy()));
            }
        }
    }
    Verdict::new(failures, format!("{compared} CSV files byte-identical across reruns"))
}

fn main() {
    let root = tempfile::tempdir().expect("temp dir");
    let sub = |name: &str| {
        let p = root.path().join(name);
        std::fs::create_dir_all(&p).expect("create dir");
        p
    };
    type Criterion<'a> = (u32, &'a str, Duration, Box<dyn FnOnce() -> Verdict + 'a>);
    let criteria: Vec<Criterion> = vec![
        (1, "theoretical bound columns", Duration::from_secs(1), Box::new(|| bounds_columns(&sub("c1")))),
        (2, "deterministic n=2 PoA cells", Duration::from_secs(10), Box::new(|| deterministic_cells(&sub("c2")))),
        (3, "bound conformance at scale", Duration::from_secs(600), Box::new(|| bound_conformance(&sub("c3")))),
        (4, "lower-bound instance", Duration::from_secs(30), Box::new(lower_bound_instances)),
        (5, "exposure instance", Duration::from_secs(5), Box::new(exposure_instance)),
        (
            6,
            "oracle equivalence",
            Duration::from_secs(120),
            Box::new(|| Verdict::from_checks(&[oracle_equivalence(50, 1_000_000, SEED)])),
        ),
        (
            7,
            "structural property suites",
            Duration::from_secs(60),
            Box::new(|| Verdict::from_checks(&lemma_suites(200, SEED, 1e-9))),
        ),
        (8, "no-regret dynamics", Duration::from_secs(600), Box::new(|| pota_dynamics(&sub("c8")))),
        (9, "synthetic embedding trends", Duration::from_secs(900), Box::new(|| synthetic_embedding_trends(&sub("c9")))),
        (10, "determinism", Duration::from_secs(60), Box::new(|| determinism(&sub("c10")))),
    ];
    let mut failed = 0;
    for (id, name, limit, run) in criteria {
        let start = Instant::now();
        let mut v = run();
        let elapsed = start.elapsed();
        if elapsed > limit {
            v.passed = false;
            v.detail = format!("{}; runtime {elapsed:.1?} exceeds {limit:?}", v.detail);
        }
        let status = if v.passed { "PASS" } else { "FAIL" };
        println!("{status} criterion {id:>2} {name} [{elapsed:.2?}]: {}", v.detail);
        failed += usize::from(!v.passed);
    }
    println!("{} of 10 criteria passed, {failed} failed", 10 - failed);
    // failures are reported above; ACCEPTANCE_STRICT=1 also fails the process
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed > 0 && strict {
        std::process::exit(1);
    }
}
