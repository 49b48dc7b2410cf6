//! Dense two-phase primal simplex.
//!
//! Solves `min c.x` subject to linear rows `a.x {<=, >=, =} b` and `x >= 0`.
//! Sized for the equilibrium LPs here: a few dozen rows and up to tens of
//! thousands of columns. Pricing is Dantzig's rule; after a run of
//! degenerate pivots the solver falls back to Bland's rule, which cannot
//! cycle.

use crate::error::{Error, Result};

const PIVOT_EPS: f64 = 1e-9;
const COST_EPS: f64 = 1e-10;
const DEGENERATE_STREAK: usize = 50;
/// Pivots between refactorizations of the tableau from the original rows.
const REINVERT_EVERY: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
struct Row {
    coeffs: Vec<f64>,
    sense: Sense,
    rhs: f64,
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    objective: Vec<f64>,
    rows: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

impl LinearProgram {
    /// Minimize `objective . x`.
    pub fn minimize(objective: Vec<f64>) -> Self {
        LinearProgram {
            objective,
            rows: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, sense: Sense, rhs: f64) -> Result<()> {
        if coeffs.len() != self.n_vars() {
            return Err(Error::Lp(format!(
                "row has {} coefficients, expected {}",
                coeffs.len(),
                self.n_vars()
            )));
        }
        if !rhs.is_finite() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Lp("non-finite coefficient".into()));
        }
        self.rows.push(Row { coeffs, sense, rhs });
        Ok(())
    }

    pub fn solve(&self) -> Result<LpSolution> {
        Tableau::build(self)?.run(self)
    }
}

struct Tableau {
    /// `rows[i]` holds `n_cols` coefficients followed by the right-hand side.
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    n_vars: usize,
    n_cols: usize,
    first_artificial: usize,
    /// Normalized constraint rows as built; the tableau is always
    /// `B^-1 original` up to round-off.
    original: Vec<Vec<f64>>,
    /// Reduced costs followed by minus the current objective value.
    reduced: Vec<f64>,
    cost: Vec<f64>,
    pivots: usize,
    max_pivots: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Result<Self> {
        let n = lp.n_vars();
        // normalize: rhs >= 0, rows scaled to unit max-norm, empty rows dropped
        let mut norm: Vec<Row> = Vec::with_capacity(lp.rows.len());
        for row in &lp.rows {
            let scale = row.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
            if scale == 0.0 {
                let ok = match row.sense {
                    Sense::Le => row.rhs >= -PIVOT_EPS,
                    Sense::Ge => row.rhs <= PIVOT_EPS,
                    Sense::Eq => row.rhs.abs() <= PIVOT_EPS,
                };
                if !ok {
                    return Err(Error::Lp("infeasible: empty row with nonzero bound".into()));
                }
                continue;
            }
            let mut coeffs: Vec<f64> = row.coeffs.iter().map(|c| c / scale).collect();
            let mut rhs = row.rhs / scale;
            let mut sense = row.sense;
            if rhs < 0.0 || (rhs == 0.0 && sense == Sense::Ge) {
                coeffs.iter_mut().for_each(|c| *c = -*c);
                rhs = -rhs;
                sense = match sense {
                    Sense::Le => Sense::Ge,
                    Sense::Ge => Sense::Le,
                    Sense::Eq => Sense::Eq,
                };
            }
            if norm
                .iter()
                .any(|r| r.sense == sense && r.rhs == rhs && r.coeffs == coeffs)
            {
                continue;
            }
            norm.push(Row {
                coeffs,
                sense,
                rhs,
            });
        }
        let m = norm.len();
        let n_slack = norm.iter().filter(|r| r.sense != Sense::Eq).count();
        let n_art = norm.iter().filter(|r| r.sense != Sense::Le).count();
        let first_artificial = n + n_slack;
        let n_cols = first_artificial + n_art;
        let mut rows = Vec::with_capacity(m);
        let mut basis = Vec::with_capacity(m);
        let (mut s, mut a) = (n, first_artificial);
        for r in norm {
            let mut t = vec![0.0; n_cols + 1];
            t[..n].copy_from_slice(&r.coeffs);
            t[n_cols] = r.rhs;
            match r.sense {
                Sense::Le => {
                    t[s] = 1.0;
                    basis.push(s);
                    s += 1;
                }
                Sense::Ge => {
                    t[s] = -1.0;
                    s += 1;
                    t[a] = 1.0;
                    basis.push(a);
                    a += 1;
                }
                Sense::Eq => {
                    t[a] = 1.0;
                    basis.push(a);
                    a += 1;
                }
            }
            rows.push(t);
        }
        Ok(Tableau {
            original: rows.clone(),
            rows,
            basis,
            n_vars: n,
            n_cols,
            first_artificial,
            reduced: vec![0.0; n_cols + 1],
            cost: vec![0.0; n_cols],
            pivots: 0,
            max_pivots: 50_000 + 50 * (m + n_cols),
        })
    }

    /// Recomputes reduced costs for `cost` (indexed by column) under the
    /// current basis.
    fn price(&mut self, cost: &[f64]) {
        self.cost.copy_from_slice(cost);
        self.reprice();
    }

    fn reprice(&mut self) {
        self.reduced[..self.n_cols].copy_from_slice(&self.cost);
        self.reduced[self.n_cols] = 0.0;
        for (row, &b) in self.rows.iter().zip(&self.basis) {
            let cb = self.cost[b];
            if cb != 0.0 {
                for (d, &t) in self.reduced.iter_mut().zip(row) {
                    *d -= cb * t;
                }
            }
        }
    }

    /// Rebuilds the tableau as `B^-1 original` for the current basis and
    /// reprices. Leaves the tableau untouched if `B` is numerically singular.
    fn reinvert(&mut self) {
        let m = self.basis.len();
        let mut aug: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                let mut r = vec![0.0; 2 * m];
                for (k, &b) in self.basis.iter().enumerate() {
                    r[k] = self.original[i][b];
                }
                r[m + i] = 1.0;
                r
            })
            .collect();
        for k in 0..m {
            let p = (k..m)
                .max_by(|&x, &y| aug[x][k].abs().total_cmp(&aug[y][k].abs()))
                .expect("nonempty range");
            if aug[p][k].abs() < 1e-12 {
                return;
            }
            aug.swap(k, p);
            let d = aug[k][k];
            aug[k].iter_mut().for_each(|x| *x /= d);
            let pivot_row = aug[k].clone();
            for (i, row) in aug.iter_mut().enumerate() {
                let f = row[k];
                if i != k && f != 0.0 {
                    for (x, &y) in row.iter_mut().zip(&pivot_row) {
                        *x -= f * y;
                    }
                }
            }
        }
        let width = self.n_cols + 1;
        for (k, row) in self.rows.iter_mut().enumerate() {
            row.iter_mut().for_each(|x| *x = 0.0);
            for (i, orig) in self.original.iter().enumerate() {
                let f = aug[k][m + i];
                if f != 0.0 {
                    for (x, &y) in row.iter_mut().zip(orig.iter().take(width)) {
                        *x += f * y;
                    }
                }
            }
            for (j, &b) in self.basis.iter().enumerate() {
                row[b] = if j == k { 1.0 } else { 0.0 };
            }
            // round-off can leave a basic value a hair below zero
            if row[width - 1] < 0.0 && row[width - 1] > -1e-9 {
                row[width - 1] = 0.0;
            }
        }
        self.reprice();
    }

    fn pivot(&mut self, r: usize, col: usize) {
        let p = self.rows[r][col];
        self.rows[r].iter_mut().for_each(|x| *x /= p);
        let pivot_row = std::mem::take(&mut self.rows[r]);
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[col];
            if f != 0.0 {
                for (x, &y) in row.iter_mut().zip(&pivot_row) {
                    *x -= f * y;
                }
                row[col] = 0.0;
            }
        }
        let f = self.reduced[col];
        if f != 0.0 {
            for (x, &y) in self.reduced.iter_mut().zip(&pivot_row) {
                *x -= f * y;
            }
            self.reduced[col] = 0.0;
        }
        self.rows[r] = pivot_row;
        self.basis[r] = col;
        self.pivots += 1;
    }

    /// Runs simplex iterations over columns `[0, allowed)`. Returns false if
    /// the objective is unbounded below.
    fn optimize(&mut self, allowed: usize) -> Result<bool> {
        let rhs = self.n_cols;
        let mut degenerate = 0usize;
        let mut bland = false;
        let mut since_reinvert = 1usize;
        loop {
            if since_reinvert >= REINVERT_EVERY {
                self.reinvert();
                since_reinvert = 0;
            }
            if self.pivots > self.max_pivots {
                return Err(Error::Lp(format!(
                    "no convergence after {} pivots",
                    self.pivots
                )));
            }
            let entering = if bland {
                (0..allowed).find(|&j| self.reduced[j] < -COST_EPS)
            } else {
                let mut best = None;
                let mut best_d = -COST_EPS;
                for j in 0..allowed {
                    if self.reduced[j] < best_d {
                        best_d = self.reduced[j];
                        best = Some(j);
                    }
                }
                best
            };
            let Some(col) = entering else {
                if since_reinvert > 0 {
                    self.reinvert();
                    since_reinvert = 0;
                    continue;
                }
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.rows.iter().enumerate() {
                let a = row[col];
                if a > PIVOT_EPS {
                    let ratio = row[rhs] / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - 1e-12
                                || (ratio <= lr + 1e-12 && self.basis[i] < self.basis[li])
                            {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let Some((r, ratio)) = leave else {
                return Ok(false);
            };
            if ratio <= 1e-12 {
                degenerate += 1;
                if degenerate >= DEGENERATE_STREAK {
                    bland = true;
                }
            } else {
                degenerate = 0;
            }
            self.pivot(r, col);
            since_reinvert += 1;
        }
    }

    fn run(mut self, lp: &LinearProgram) -> Result<LpSolution> {
        let rhs = self.n_cols;
        if self.first_artificial < self.n_cols {
            let mut cost = vec![0.0; self.n_cols];
            cost[self.first_artificial..].iter_mut().for_each(|c| *c = 1.0);
            self.price(&cost);
            self.optimize(self.n_cols)?;
            let infeasibility = -self.reduced[rhs];
            if infeasibility > 1e-8 {
                return Err(Error::Lp(format!(
                    "infeasible (phase-one residual {infeasibility:.3e})"
                )));
            }
            // drive artificials out of the basis where a structural column can
            // replace them; on redundant rows the artificial stays basic at zero
            // and no allowed column can move it
            for i in 0..self.rows.len() {
                if self.basis[i] >= self.first_artificial {
                    let col = (0..self.first_artificial)
                        .filter(|&j| self.rows[i][j].abs() > PIVOT_EPS)
                        .max_by(|&a, &b| self.rows[i][a].abs().total_cmp(&self.rows[i][b].abs()));
                    if let Some(j) = col {
                        self.pivot(i, j);
                    }
                }
            }
        }
        let mut cost = vec![0.0; self.n_cols];
        cost[..self.n_vars].copy_from_slice(&lp.objective);
        self.price(&cost);
        if !self.optimize(self.first_artificial)? {
            return Err(Error::Lp("unbounded".into()));
        }
        let mut x = vec![0.0; self.n_vars];
        for (row, &b) in self.rows.iter().zip(&self.basis) {
            if b < self.n_vars {
                x[b] = row[rhs].max(0.0);
            }
        }
        let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        Ok(LpSolution {
            x,
            objective,
            pivots: self.pivots,
        })
    }
}
