use std::collections::BTreeMap;
use std::io::Write;

use creator_game::bounds::poa_upper_bound;
use serde::Serialize;

use crate::config::{Aggregation, PivotSpec};
use crate::harness::ResultRow;
use crate::HarnessError;

/// A grid coordinate that sorts numerically and prints the way it was given.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisValue(pub f64);

impl Eq for AxisValue {}

impl PartialOrd for AxisValue {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for AxisValue {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl std::fmt::Display for AxisValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn axis(row: &ResultRow, name: &str) -> Option<AxisValue> {
    let v = match name {
        "n" => Some(row.n as f64),
        "K" => Some(row.k as f64),
        "beta" => Some(row.beta),
        "delta" => row.delta,
        "epsilon" => row.epsilon,
        _ => None,
    };
    v.map(AxisValue)
}

/// Parameters of a row other than the two pivot axes, e.g. `beta=0.1`.
fn block_key(row: &ResultRow, pivot: &PivotSpec) -> Vec<(&'static str, AxisValue)> {
    ["n", "K", "beta", "delta", "epsilon"]
        .into_iter()
        .filter(|a| *a != pivot.rows && *a != pivot.cols)
        .filter_map(|a| axis(row, a).map(|v| (a, v)))
        .collect()
}

/// Statistics of one metric in one cell across trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellStats {
    pub trials: usize,
    pub errors: usize,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl CellStats {
    fn from_values(values: &[f64], errors: usize) -> Self {
        let (mean, min, max) = if values.is_empty() {
            (None, None, None)
        } else {
            let sum: f64 = values.iter().sum();
            (
                Some(sum / values.len() as f64),
                values.iter().copied().reduce(f64::min),
                values.iter().copied().reduce(f64::max),
            )
        };
        CellStats {
            trials: values.len(),
            errors,
            mean,
            min,
            max,
        }
    }

    pub fn aggregate(&self, aggregation: Aggregation) -> Option<f64> {
        match aggregation {
            Aggregation::Worst => self.max,
            Aggregation::Mean | Aggregation::MeanWithRange => self.mean,
        }
    }
}

/// One pivoted matrix; `block` lists the parameters held fixed in it.
#[derive(Debug, Clone, PartialEq)]
pub struct PivotTable {
    pub block: Vec<(&'static str, AxisValue)>,
    pub row_axis: String,
    pub col_axis: String,
    pub row_values: Vec<AxisValue>,
    pub col_values: Vec<AxisValue>,
    /// Theoretical upper bound per row, when the table has one.
    pub bound_column: Option<Vec<f64>>,
    pub cells: BTreeMap<(AxisValue, AxisValue), f64>,
}

impl PivotTable {
    pub fn block_label(&self) -> String {
        self.block
            .iter()
            .map(|(a, v)| format!("{a}{v}"))
            .collect::<Vec<_>>()
            .join("_")
    }

    pub fn get(&self, row: f64, col: f64) -> Option<f64> {
        self.cells.get(&(AxisValue(row), AxisValue(col))).copied()
    }

    /// Two-decimal CSV with `/` for missing cells and an optional `*` bound
    /// column after the row labels.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![format!("{}\\{}", self.row_axis, self.col_axis)];
        if self.bound_column.is_some() {
            header.push("*".into());
        }
        header.extend(self.col_values.iter().map(|c| c.to_string()));
        w.write_record(&header)?;
        for (i, r) in self.row_values.iter().enumerate() {
            let mut rec = vec![r.to_string()];
            if let Some(b) = &self.bound_column {
                rec.push(format!("{:.2}", b[i]));
            }
            for c in &self.col_values {
                rec.push(match self.cells.get(&(*r, *c)) {
                    Some(v) => format!("{v:.2}"),
                    None => "/".into(),
                });
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pivots `rows` into one matrix per combination of the non-pivot
/// parameters. Trials of a cell are aggregated; two rows for the same cell,
/// metric and trial with different values are a conflict.
pub fn emit_table(
    rows: &[ResultRow],
    pivot: &PivotSpec,
    aggregation: Aggregation,
) -> Result<Vec<PivotTable>, HarnessError> {
    if let Some(first) = rows.first() {
        if let Some(other) = rows.iter().find(|r| r.experiment_id != first.experiment_id) {
            return Err(HarnessError::Conflict(format!(
                "rows from experiments {:?} and {:?} cannot share a table",
                first.experiment_id, other.experiment_id
            )));
        }
    }
    type Key = (Vec<(&'static str, AxisValue)>, AxisValue, AxisValue);
    let mut groups: BTreeMap<Key, BTreeMap<usize, f64>> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.metric == pivot.metric) {
        let (Some(rv), Some(cv)) = (axis(row, &pivot.rows), axis(row, &pivot.cols)) else {
            continue;
        };
        let Some(value) = row.value else {
            continue;
        };
        let trials = groups.entry((block_key(row, pivot), rv, cv)).or_default();
        match trials.get(&row.trial) {
            Some(&old) if old.to_bits() != value.to_bits() => {
                return Err(HarnessError::Conflict(format!(
                    "cell {}={rv}, {}={cv}, trial {} has values {old} and {value}",
                    pivot.rows, pivot.cols, row.trial
                )));
            }
            _ => {
                trials.insert(row.trial, value);
            }
        }
    }
    let mut tables: BTreeMap<Vec<(&'static str, AxisValue)>, PivotTable> = BTreeMap::new();
    for ((block, rv, cv), trials) in groups {
        let values: Vec<f64> = trials.into_values().collect();
        let Some(v) = CellStats::from_values(&values, 0).aggregate(aggregation) else {
            continue;
        };
        let t = tables.entry(block.clone()).or_insert_with(|| PivotTable {
            block,
            row_axis: pivot.rows.clone(),
            col_axis: pivot.cols.clone(),
            row_values: Vec::new(),
            col_values: Vec::new(),
            bound_column: None,
            cells: BTreeMap::new(),
        });
        t.cells.insert((rv, cv), v);
    }
    let mut out: Vec<PivotTable> = tables.into_values().collect();
    for t in &mut out {
        let mut rv: Vec<AxisValue> = t.cells.keys().map(|k| k.0).collect();
        let mut cv: Vec<AxisValue> = t.cells.keys().map(|k| k.1).collect();
        rv.dedup();
        cv.sort();
        cv.dedup();
        t.row_values = rv;
        t.col_values = cv;
        let beta = t.block.iter().find(|(a, _)| *a == "beta").map(|(_, v)| v.0);
        let bounded = matches!(pivot.metric.as_str(), "poa" | "pota");
        if let (true, "K", Some(beta)) = (bounded, pivot.rows.as_str(), beta) {
            t.bound_column = Some(
                t.row_values
                    .iter()
                    .map(|k| poa_upper_bound(beta, k.0 as usize))
                    .collect(),
            );
        }
    }
    Ok(out)
}

/// Per-cell, per-metric statistics in long format for external plotting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LongRow {
    pub experiment_id: String,
    pub family: String,
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub beta: f64,
    pub delta: Option<f64>,
    pub epsilon: Option<f64>,
    pub metric: String,
    pub trials: usize,
    pub errors: usize,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

/// Groups by cell and metric, keeping first-appearance order.
pub fn long_rows(rows: &[ResultRow]) -> Vec<LongRow> {
    let mut order: Vec<(usize, String)> = Vec::new();
    let mut groups: BTreeMap<(usize, String), (Vec<f64>, usize, &ResultRow)> = BTreeMap::new();
    for r in rows {
        let key = (r.cell, r.metric.clone());
        let g = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (Vec::new(), 0, r)
        });
        match r.value {
            Some(v) if r.error.is_none() => g.0.push(v),
            _ => g.1 += 1,
        }
    }
    order
        .into_iter()
        .map(|key| {
            let (values, errors, r) = &groups[&key];
            let s = CellStats::from_values(values, *errors);
            LongRow {
                experiment_id: r.experiment_id.clone(),
                family: r.family.clone(),
                n: r.n,
                k: r.k,
                beta: r.beta,
                delta: r.delta,
                epsilon: r.epsilon,
                metric: r.metric.clone(),
                trials: s.trials,
                errors: s.errors,
                mean: s.mean,
                min: s.min,
                max: s.max,
            }
        })
        .collect()
}
