use std::fs;
use std::path::{Path, PathBuf};

use creator_game::bounds::{dynamic_poa_bound, BoundReport};
use creator_game::checks::{standard_suite, CheckOutcome};
use creator_game::dynamics::{
    action_histogram, estimate_regrets, pota, run_dynamics, DynamicsConfig, Exp3Config,
};
use creator_game::equilibrium::{
    max_welfare_exact, max_welfare_heuristic, poa, SolveOptions, WelfareMethod, WelfareOptimum,
};
use creator_game::eval::Evaluator;
use creator_game::instances::{Family, InstanceSpec};
use creator_game::rng::derive_seed;
use creator_game::{GameInstance, Metric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::table::{emit_table, long_rows, LongRow};
use crate::HarnessError;

/// One measured value of one metric in one trial of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment_id: String,
    pub cell: usize,
    pub family: String,
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub beta: f64,
    pub delta: Option<f64>,
    pub epsilon: Option<f64>,
    pub metric: String,
    pub value: Option<f64>,
    pub seed: u64,
    pub trial: usize,
    pub method: String,
    pub error: Option<String>,
}

/// A point of the parameter grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub n: usize,
    pub k: usize,
    pub beta: f64,
    pub delta: Option<f64>,
    pub epsilon: Option<f64>,
}

/// Cartesian product in the order `n, K, beta, delta, epsilon`.
pub fn cells(config: &ExperimentConfig) -> Vec<Cell> {
    let g = &config.grid;
    let opt = |v: &[f64]| -> Vec<Option<f64>> {
        if v.is_empty() {
            vec![None]
        } else {
            v.iter().copied().map(Some).collect()
        }
    };
    let (deltas, epsilons) = (opt(&g.delta), opt(&g.epsilon));
    let mut out = Vec::new();
    for &n in &g.n {
        for &k in &g.k {
            if config.skip_k_above_n && config.uses_instances() && k > n {
                continue;
            }
            for &beta in &g.beta {
                for &delta in &deltas {
                    for &epsilon in &epsilons {
                        out.push(Cell {
                            index: out.len(),
                            n,
                            k,
                            beta,
                            delta,
                            epsilon,
                        });
                    }
                }
            }
        }
    }
    out
}

/// Seed of `trial` in `cell`: a counter-based split of the master seed.
pub fn trial_seed(master: u64, cell: usize, trial: usize) -> u64 {
    derive_seed(master, &[cell as u64, trial as u64])
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    pub cells: usize,
    pub rows: usize,
    pub failed_rows: usize,
    pub aggregates: Vec<LongRow>,
    /// `verify` only: names of failed checks.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub failed_checks: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub rows: Vec<ResultRow>,
    pub summary: ExperimentSummary,
    pub files: Vec<PathBuf>,
}

impl ExperimentOutcome {
    pub fn all_checks_passed(&self) -> bool {
        self.summary.failed_checks.is_empty()
    }
}

struct Trial<'a> {
    config: &'a ExperimentConfig,
    cell: Cell,
    trial: usize,
    seed: u64,
}

impl Trial<'_> {
    fn row(&self, metric: impl Into<String>, value: f64, method: &str) -> ResultRow {
        ResultRow {
            experiment_id: self.config.id.clone(),
            cell: self.cell.index,
            family: family_name(self.config),
            n: self.cell.n,
            k: self.cell.k,
            beta: self.cell.beta,
            delta: self.cell.delta,
            epsilon: self.cell.epsilon,
            metric: metric.into(),
            value: Some(value),
            seed: self.seed,
            trial: self.trial,
            method: method.to_owned(),
            error: None,
        }
    }

    fn error_row(&self, metric: &str, err: &HarnessError) -> ResultRow {
        ResultRow {
            value: None,
            error: Some(err.to_string()),
            ..self.row(metric, 0.0, "error")
        }
    }

    fn instance(&self, metric: Metric) -> Result<GameInstance, HarnessError> {
        let spec = InstanceSpec {
            family: self.config.family,
            n: self.cell.n,
            m: self.config.m,
            beta: self.cell.beta,
            k: self.cell.k,
            delta: self.cell.delta,
            metric: Some(metric),
            embedding: self.config.embedding.clone(),
            seed: self.seed,
        };
        Ok(spec.build()?.instance)
    }

    fn max_welfare(&self, instance: &GameInstance) -> Result<WelfareOptimum, HarnessError> {
        let exact = instance
            .num_profiles()
            .is_some_and(|p| p <= self.config.solver.exact_threshold);
        Ok(if exact {
            max_welfare_exact(instance, self.config.solver.exact_threshold)?
        } else {
            max_welfare_heuristic(instance, derive_seed(self.seed, &[2]))?
        })
    }

    fn dynamics_config(&self) -> DynamicsConfig {
        let d = &self.config.dynamics;
        DynamicsConfig {
            players: vec![Exp3Config {
                eta: d.eta,
                epsilon: self.cell.epsilon.unwrap_or(d.epsilon),
                horizon: d.horizon,
                seed: derive_seed(self.seed, &[1]),
                reward_scale: d.reward_scale,
            }],
            snapshot_interval: 0,
            extra_welfare_samples: d.extra_welfare_samples,
        }
    }

    /// PotA and companions for one metric; `suffix` distinguishes metrics
    /// in comparisons.
    fn dynamics_rows(
        &self,
        instance: &GameInstance,
        opt: &WelfareOptimum,
        suffix: &str,
        with_regret: bool,
        out: &mut Vec<ResultRow>,
    ) -> Result<(), HarnessError> {
        let trace = run_dynamics(instance, &self.dynamics_config())?;
        let method = format!("exp3+{}", method_name(opt.method));
        let avg = trace.average_welfare();
        out.push(self.row(format!("pota{suffix}"), pota(&trace, opt.welfare), &method));
        out.push(self.row(format!("avg_welfare{suffix}"), avg, &method));
        out.push(self.row(
            format!("avg_welfare_per_user{suffix}"),
            avg / instance.total_weight(),
            &method,
        ));
        out.push(self.row(format!("max_welfare{suffix}"), opt.welfare, method_name(opt.method)));
        if with_regret {
            let regrets = estimate_regrets(&trace, &Evaluator::new(instance));
            let rate = regrets.iter().copied().fold(0.0f64, f64::max) / trace.horizon as f64;
            out.push(self.row(format!("regret_rate{suffix}"), rate, &method));
            if let Ok(b) = dynamic_poa_bound(instance.n_players(), instance.beta(), instance.k_slate(), rate)
            {
                out.push(self.row(format!("dynamic_bound{suffix}"), b, "closed_form"));
            }
        }
        if self.config.kind == ExperimentKind::Histogram {
            for (key, freq) in action_histogram(&trace, instance, self.config.histogram_key) {
                out.push(self.row(format!("freq:{key}"), freq, &method));
            }
        }
        Ok(())
    }

    fn run(&self) -> Result<Vec<ResultRow>, HarnessError> {
        let mut out = Vec::new();
        let cfg = self.config;
        match cfg.kind {
            ExperimentKind::PoaTable => {
                let instance = self.instance(cfg.metric)?;
                let report = poa(
                    &instance,
                    &SolveOptions {
                        exact_threshold: cfg.solver.exact_threshold,
                        lp_budget: cfg.solver.lp_budget,
                        seed: derive_seed(self.seed, &[2]),
                    },
                )?;
                let method = format!("{}+lp", method_name(report.max_method));
                out.push(self.row("poa", report.poa, &method));
                out.push(self.row("max_welfare", report.max_welfare, method_name(report.max_method)));
                out.push(self.row("worst_cce_welfare", report.worst_cce_welfare, "lp"));
            }
            ExperimentKind::PotaTable | ExperimentKind::ExplorationSweep | ExperimentKind::Histogram => {
                let instance = self.instance(cfg.metric)?;
                let opt = self.max_welfare(&instance)?;
                self.dynamics_rows(&instance, &opt, "", cfg.dynamics.regret, &mut out)?;
            }
            ExperimentKind::MetricComparison => {
                // welfare is user welfare under both incentive metrics, so one
                // optimum serves both runs
                let engagement = self.instance(Metric::Engagement)?;
                let opt = self.max_welfare(&engagement)?;
                self.dynamics_rows(&engagement, &opt, "_engagement", false, &mut out)?;
                let exposure = engagement.with_metric(Metric::Exposure);
                self.dynamics_rows(&exposure, &opt, "_exposure", false, &mut out)?;
            }
            ExperimentKind::BoundsTable => {
                let r = BoundReport::new(self.cell.n, self.cell.beta, self.cell.k, None);
                out.push(self.row("c", r.c, "closed_form"));
                out.push(self.row("poa_upper", r.poa_upper, "closed_form"));
                out.push(self.row("poa_upper_asymptotic", r.poa_upper_asymptotic, "closed_form"));
                let lower = if r.lower_bound_valid { "closed_form" } else { "outside_hypothesis" };
                out.push(self.row("poa_lower", r.poa_lower, lower));
                out.push(self.row("welfare_loss_factor", r.welfare_loss_factor, "closed_form"));
            }
            ExperimentKind::Verify => unreachable!("verify does not run per cell"),
        }
        Ok(out)
    }
}

fn method_name(m: WelfareMethod) -> &'static str {
    match m {
        WelfareMethod::Exact => "exact",
        WelfareMethod::Sa => "sa",
        WelfareMethod::Brs => "brs",
    }
}

fn family_name(config: &ExperimentConfig) -> String {
    if !config.uses_instances() {
        return "none".into();
    }
    match config.family {
        Family::Dataset1 => "dataset1",
        Family::Dataset2 => "dataset2",
        Family::Thm2LowerBound => "thm2_lower_bound",
        Family::Prop1Exposure => "prop1_exposure",
        Family::Embedding => "embedding",
    }
    .into()
}

fn verify_rows(config: &ExperimentConfig) -> Result<(Vec<ResultRow>, Vec<String>), HarnessError> {
    let outcomes: Vec<CheckOutcome> = standard_suite(config.seed, config.full_verify)?;
    let mut failed = Vec::new();
    let rows = outcomes
        .into_iter()
        .map(|o| {
            if !o.passed {
                failed.push(o.name.clone());
            }
            ResultRow {
                experiment_id: config.id.clone(),
                cell: 0,
                family: "none".into(),
                n: 0,
                k: 0,
                beta: 0.0,
                delta: None,
                epsilon: None,
                metric: o.name,
                value: Some(if o.passed { 1.0 } else { 0.0 }),
                seed: config.seed,
                trial: 0,
                method: format!("{} comparisons, {} violations", o.comparisons, o.violations),
                error: (!o.passed).then_some(o.detail),
            }
        })
        .collect();
    Ok((rows, failed))
}

/// Runs every (cell, trial) pair in parallel, then writes rows, long
/// statistics, pivoted tables and a JSON summary under `out_dir`. Output
/// order is canonical, so reruns are byte-identical.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutcome, HarnessError> {
    config.validate()?;
    let grid = cells(config);
    let (rows, failed_checks) = if config.kind == ExperimentKind::Verify {
        verify_rows(config)?
    } else {
        let trials = if config.kind == ExperimentKind::BoundsTable { 1 } else { config.trials };
        let units: Vec<(Cell, usize)> = grid
            .iter()
            .flat_map(|&c| (0..trials).map(move |t| (c, t)))
            .collect();
        let work = || -> Vec<Vec<ResultRow>> {
            units
                .par_iter()
                .map(|&(cell, trial)| {
                    let t = Trial {
                        config,
                        cell,
                        trial,
                        seed: trial_seed(config.seed, cell.index, trial),
                    };
                    t.run().unwrap_or_else(|e| {
                        let metric = config.effective_pivot().metric;
                        vec![t.error_row(&metric, &e)]
                    })
                })
                .collect()
        };
        let nested = match config.workers {
            Some(w) => rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?
                .install(work),
            None => work(),
        };
        (nested.into_iter().flatten().collect::<Vec<_>>(), Vec::new())
    };
    write_outputs(config, out_dir, rows, grid.len(), failed_checks)
}

fn write_outputs(
    config: &ExperimentConfig,
    out_dir: &Path,
    rows: Vec<ResultRow>,
    n_cells: usize,
    failed_checks: Vec<String>,
) -> Result<ExperimentOutcome, HarnessError> {
    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    let path = |suffix: &str| out_dir.join(format!("{}_{suffix}", config.id));

    let rows_path = path("rows.csv");
    let mut w = csv::Writer::from_path(&rows_path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    files.push(rows_path);

    let aggregates = long_rows(&rows);
    let long_path = path("long.csv");
    let mut w = csv::Writer::from_path(&long_path)?;
    for r in &aggregates {
        w.serialize(r)?;
    }
    w.flush()?;
    files.push(long_path);

    if config.kind != ExperimentKind::Verify {
        let tables = emit_table(&rows, &config.effective_pivot(), config.aggregation)?;
        let single = tables.len() == 1;
        for t in &tables {
            let p = if single || t.block.is_empty() {
                path("table.csv")
            } else {
                path(&format!("table_{}.csv", t.block_label()))
            };
            t.write_csv(fs::File::create(&p)?)?;
            files.push(p);
        }
    }

    let summary = ExperimentSummary {
        config: config.clone(),
        cells: n_cells,
        rows: rows.len(),
        failed_rows: rows.iter().filter(|r| r.error.is_some()).count(),
        aggregates,
        failed_checks,
    };
    let summary_path = path("summary.json");
    fs::write(&summary_path, serde_json::to_string_pretty(&summary)? + "\n")?;
    files.push(summary_path);
    Ok(ExperimentOutcome {
        rows,
        summary,
        files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(json: &str) -> ExperimentConfig {
        ExperimentConfig::from_json_str(json).unwrap()
    }

    #[test]
    fn grid_skips_k_above_n() {
        let c = config(
            r#"{"id": "g", "kind": "poa_table", "grid": {"n": [2, 3], "K": [1, 2, 3], "beta": [0.1, 0.5]}}"#,
        );
        let cs = cells(&c);
        assert_eq!(cs.len(), 10);
        assert!(cs.iter().all(|c| c.k <= c.n));
        assert!(cs.iter().enumerate().all(|(i, c)| c.index == i));
        let b = config(r#"{"id": "b", "kind": "bounds_table", "grid": {"n": [2], "K": [1, 7], "beta": [0.1]}}"#);
        assert_eq!(cells(&b).len(), 2);
    }

    #[test]
    fn seeds_are_distinct_per_unit() {
        let mut seen = std::collections::HashSet::new();
        for c in 0..20 {
            for t in 0..10 {
                assert!(seen.insert(trial_seed(5, c, t)));
            }
        }
        assert_eq!(trial_seed(5, 3, 4), trial_seed(5, 3, 4));
    }

    #[test]
    fn failed_cells_become_error_rows() {
        let dir = tempfile::tempdir().unwrap();
        // m = 3 users cannot hold a Dataset-1 split for n = 5
        let c = config(
            r#"{"id": "e", "kind": "poa_table", "m": 3, "trials": 2,
                "grid": {"n": [5], "K": [1], "beta": [0.1]}}"#,
        );
        let out = run_experiment(&c, dir.path()).unwrap();
        assert_eq!(out.rows.len(), 2);
        assert!(out.rows.iter().all(|r| r.error.is_some() && r.value.is_none()));
        assert_eq!(out.summary.failed_rows, 2);
    }
}
