use std::path::{Path, PathBuf};

use creator_game::dynamics::HistogramKey;
use creator_game::equilibrium::{DEFAULT_ENUMERATION_BUDGET, DEFAULT_LP_BUDGET};
use creator_game::instances::{EmbeddingSource, Family};
use creator_game::Metric;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    PoaTable,
    PotaTable,
    MetricComparison,
    ExplorationSweep,
    Histogram,
    BoundsTable,
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Maximum over trials; PoA and PotA are "worse" when larger.
    Worst,
    Mean,
    #[default]
    MeanWithRange,
}

/// Explicit value lists; the experiment runs their Cartesian product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n: Vec<usize>,
    #[serde(rename = "K", alias = "k")]
    pub k: Vec<usize>,
    pub beta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub delta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epsilon: Vec<f64>,
}

/// Exp3 parameters shared by every player; `epsilon` is overridden by the
/// grid when the grid lists exploration rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsSettings {
    pub eta: f64,
    pub epsilon: f64,
    pub horizon: usize,
    pub reward_scale: Option<f64>,
    /// Extra profiles drawn per round to estimate expected welfare.
    pub extra_welfare_samples: usize,
    /// Record the estimated regret and the dynamic PotA bound per run.
    pub regret: bool,
}

impl Default for DynamicsSettings {
    fn default() -> Self {
        DynamicsSettings {
            eta: 0.1,
            epsilon: 0.1,
            horizon: 5000,
            reward_scale: None,
            extra_welfare_samples: 0,
            regret: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    /// Profile counts up to this are maximized exactly; larger games use
    /// annealing and best-response search.
    pub exact_threshold: u128,
    pub lp_budget: u128,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            exact_threshold: DEFAULT_ENUMERATION_BUDGET,
            lp_budget: DEFAULT_LP_BUDGET,
        }
    }
}

/// Table layout: `rows` and `cols` name grid parameters (`n`, `K`, `beta`,
/// `delta`, `epsilon`); `metric` selects which result rows fill the cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PivotSpec {
    pub rows: String,
    pub cols: String,
    pub metric: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub id: String,
    pub kind: ExperimentKind,
    #[serde(default = "default_family")]
    pub family: Family,
    #[serde(default = "default_m")]
    pub m: usize,
    pub grid: Grid,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; `None` uses all cores.
    #[serde(default)]
    pub workers: Option<usize>,
    /// Creator incentive metric; `metric_comparison` runs both.
    #[serde(default)]
    pub metric: Metric,
    #[serde(default)]
    pub dynamics: DynamicsSettings,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingSource>,
    #[serde(default = "default_histogram_key")]
    pub histogram_key: HistogramKey,
    /// Cells with `K > n` are left empty, as in the published tables.
    #[serde(default = "default_true")]
    pub skip_k_above_n: bool,
    /// Acceptance-scale sample sizes for `verify`.
    #[serde(default)]
    pub full_verify: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pivot: Option<PivotSpec>,
    /// Output directory; the CLI's `--out` takes precedence.
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_family() -> Family {
    Family::Dataset1
}

fn default_m() -> usize {
    100
}

fn default_trials() -> usize {
    10
}

fn default_true() -> bool {
    true
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

fn default_histogram_key() -> HistogramKey {
    HistogramKey::Tag
}

impl ExperimentConfig {
    pub fn from_json_str(s: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.id.is_empty() || self.id.contains(['/', '\\']) {
            return bad(format!("experiment id {:?} must be a nonempty file stem", self.id));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        let g = &self.grid;
        let needs_players = self.kind != ExperimentKind::Verify;
        if needs_players && (g.n.is_empty() || g.k.is_empty() || g.beta.is_empty()) {
            return bad("grid needs nonempty n, K and beta lists".into());
        }
        if g.n.contains(&0) || g.k.contains(&0) {
            return bad("n and K must be positive".into());
        }
        if g.beta.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return bad("beta must be finite and nonnegative".into());
        }
        if g.epsilon.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return bad("epsilon must lie in [0, 1]".into());
        }
        if g.delta.iter().any(|d| !(0.0..=1.0).contains(d)) {
            return bad("delta must lie in [0, 1]".into());
        }
        if self.family == Family::Dataset2 && g.delta.is_empty() && self.uses_instances() {
            return bad("dataset2 needs a delta list".into());
        }
        if self.family == Family::Embedding && self.embedding.is_none() && self.uses_instances() {
            return bad("embedding family needs an embedding source".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be positive".into());
        }
        if let Some(p) = &self.pivot {
            for axis in [&p.rows, &p.cols] {
                if !AXES.contains(&axis.as_str()) {
                    return bad(format!("unknown pivot axis {axis:?}"));
                }
            }
        }
        Ok(())
    }

    pub fn uses_instances(&self) -> bool {
        !matches!(self.kind, ExperimentKind::BoundsTable | ExperimentKind::Verify)
    }

    /// The configured pivot, or the layout of the matching published table.
    pub fn effective_pivot(&self) -> PivotSpec {
        if let Some(p) = &self.pivot {
            return p.clone();
        }
        let (rows, cols, metric) = match self.kind {
            ExperimentKind::PoaTable => ("K", "n", "poa"),
            ExperimentKind::PotaTable => ("K", "n", "pota"),
            ExperimentKind::MetricComparison => ("delta", "n", "pota_exposure"),
            ExperimentKind::ExplorationSweep => ("n", "epsilon", "avg_welfare_per_user"),
            ExperimentKind::Histogram => ("n", "epsilon", "avg_welfare_per_user"),
            ExperimentKind::BoundsTable => ("K", "beta", "poa_upper"),
            ExperimentKind::Verify => ("n", "K", "passed"),
        };
        PivotSpec {
            rows: rows.into(),
            cols: cols.into(),
            metric: metric.into(),
        }
    }
}

pub const AXES: [&str; 5] = ["n", "K", "beta", "delta", "epsilon"];

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE1: &str = r#"{
        "id": "table1", "kind": "poa_table",
        "grid": {"n": [2, 3], "K": [1, 2], "beta": [0.1]},
        "aggregation": "worst", "seed": 7
    }"#;

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::from_json_str(TABLE1).unwrap();
        assert_eq!(c.trials, 10);
        assert_eq!(c.m, 100);
        assert_eq!(c.family, Family::Dataset1);
        assert_eq!(c.dynamics.horizon, 5000);
        assert!(c.skip_k_above_n);
        assert_eq!(c.effective_pivot().metric, "poa");
    }

    #[test]
    fn rejects_bad_grids() {
        let zero_trials = TABLE1.replace("\"seed\": 7", "\"seed\": 7, \"trials\": 0");
        assert!(ExperimentConfig::from_json_str(&zero_trials).is_err());
        let empty = TABLE1.replace("[2, 3]", "[]");
        assert!(ExperimentConfig::from_json_str(&empty).is_err());
        let bad_eps = TABLE1.replace("\"beta\": [0.1]", "\"beta\": [0.1], \"epsilon\": [1.5]");
        assert!(ExperimentConfig::from_json_str(&bad_eps).is_err());
        let ds2 = TABLE1.replace("poa_table", "pota_table").replace("\"seed\"", "\"family\": \"dataset2\", \"seed\"");
        assert!(ExperimentConfig::from_json_str(&ds2).is_err());
        assert!(ExperimentConfig::from_json_str("{\"id\": \"x\"}").is_err());
    }
}
