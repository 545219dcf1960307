//! Dense linear programming: problem container, bounded two-phase primal simplex
//! with warm starts, and fixed-format MPS input/output.

mod mps;
mod simplex;

use std::hash::Hasher;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mps::{read_mps, write_mps, MpsModel};
pub use simplex::{solve, solve_with, SolverOptions, WarmStart};

/// Errors raised by the LP layer. Infeasibility and unboundedness are statuses, not errors.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("malformed linear program: {0}")]
    Malformed(String),
    #[error("iteration limit of {0} pivots reached")]
    IterationLimit(usize),
    #[error("solution is not optimal (status {0:?})")]
    NotOptimal(LpStatus),
    #[error("mps: {0}")]
    Mps(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RowSense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Status of a column in a basis. Columns `n..n+m` are the row logicals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VarStatus {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free column held at zero.
    Free,
}

/// Basis descriptor: the basic column of every row plus the status of every column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Basis {
    /// Basic column per row; `usize::MAX` marks an artificial left in a redundant row.
    pub basic: Vec<usize>,
    pub status: Vec<VarStatus>,
}

/// Column-indexed objective offsets that make optimal vertices unique.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationPolicy {
    pub mode: PerturbationMode,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PerturbationMode {
    None,
    Deterministic,
}

impl PerturbationPolicy {
    pub const fn none() -> Self {
        Self { mode: PerturbationMode::None, epsilon: 0.0 }
    }

    pub const fn deterministic(epsilon: f64) -> Self {
        Self { mode: PerturbationMode::Deterministic, epsilon }
    }

    /// Offset added to the cost of column `j` out of `n`.
    pub fn offset(&self, j: usize, n: usize) -> f64 {
        match self.mode {
            PerturbationMode::None => 0.0,
            PerturbationMode::Deterministic => self.epsilon * (j + 1) as f64 / (n + 1) as f64,
        }
    }

    pub fn apply(&self, c: &[f64]) -> Vec<f64> {
        let n = c.len();
        c.iter().enumerate().map(|(j, v)| v + self.offset(j, n)).collect()
    }
}

impl Default for PerturbationPolicy {
    fn default() -> Self {
        Self::deterministic(1e-7)
    }
}

/// Row-major dense matrix with a content fingerprint used to validate warm starts.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    fingerprint: u64,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        let fingerprint = fingerprint(rows, cols, &data);
        Self { rows, cols, data, fingerprint }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }
}

fn fingerprint(rows: usize, cols: usize, data: &[f64]) -> u64 {
    let mut h = Fnv::default();
    h.write_usize(rows);
    h.write_usize(cols);
    for v in data {
        h.write_u64(v.to_bits());
    }
    h.finish()
}

/// FNV-1a over 64-bit words.
#[derive(Clone, Copy)]
pub(crate) struct Fnv(u64);

impl Default for Fnv {
    fn default() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
}

impl Hasher for Fnv {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= *b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    fn write_u64(&mut self, v: u64) {
        self.0 ^= v;
        self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LpNames {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
}

/// `min c'x  s.t.  A x (≤|=|≥) b,  lower ≤ x ≤ upper`.
///
/// The matrix and names are shared between clones, so copying a template and
/// editing its rhs or bounds is cheap.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    matrix: Arc<DenseMatrix>,
    names: Arc<LpNames>,
    pub objective: Vec<f64>,
    pub senses: Vec<RowSense>,
    pub rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearProgram {
    pub fn new(
        matrix: DenseMatrix,
        objective: Vec<f64>,
        senses: Vec<RowSense>,
        rhs: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self, LpError> {
        let m = matrix.rows();
        let n = matrix.cols();
        let names = LpNames {
            rows: (0..m).map(|i| format!("R{i}")).collect(),
            cols: (0..n).map(|j| format!("C{j}")).collect(),
        };
        let lp = Self {
            matrix: Arc::new(matrix),
            names: Arc::new(names),
            objective,
            senses,
            rhs,
            lower,
            upper,
        };
        lp.validate()?;
        Ok(lp)
    }

    /// Convenience constructor from row vectors with default bounds `[0, +inf)`.
    pub fn from_rows(
        objective: Vec<f64>,
        rows: Vec<Vec<f64>>,
        senses: Vec<RowSense>,
        rhs: Vec<f64>,
    ) -> Result<Self, LpError> {
        let n = objective.len();
        let m = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(LpError::Malformed("row length differs from objective length".into()));
        }
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        Self::new(
            DenseMatrix::new(m, n, data),
            objective,
            senses,
            rhs,
            vec![0.0; n],
            vec![f64::INFINITY; n],
        )
    }

    pub fn with_names(mut self, rows: Vec<String>, cols: Vec<String>) -> Result<Self, LpError> {
        if rows.len() != self.n_rows() || cols.len() != self.n_cols() {
            return Err(LpError::Malformed("name count mismatch".into()));
        }
        self.names = Arc::new(LpNames { rows, cols });
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn n_cols(&self) -> usize {
        self.matrix.cols()
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    pub fn names(&self) -> &LpNames {
        &self.names
    }

    pub fn row_name(&self, i: usize) -> &str {
        &self.names.rows[i]
    }

    pub fn col_name(&self, j: usize) -> &str {
        &self.names.cols[j]
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let (m, n) = (self.n_rows(), self.n_cols());
        let bad = |s: &str| Err(LpError::Malformed(s.to_string()));
        if self.rhs.len() != m || self.senses.len() != m {
            return bad("rhs/sense length differs from row count");
        }
        if self.objective.len() != n || self.lower.len() != n || self.upper.len() != n {
            return bad("objective/bound length differs from column count");
        }
        if self.names.rows.len() != m || self.names.cols.len() != n {
            return bad("name count differs from dimensions");
        }
        for j in 0..n {
            if self.lower[j].is_nan() || self.upper[j].is_nan() || self.lower[j] > self.upper[j] {
                return Err(LpError::Malformed(format!(
                    "column {} has bounds [{}, {}]",
                    self.names.cols[j], self.lower[j], self.upper[j]
                )));
            }
            if self.lower[j] == f64::INFINITY || self.upper[j] == f64::NEG_INFINITY {
                return Err(LpError::Malformed(format!("column {} has an infinite fixed bound", self.names.cols[j])));
            }
            if !self.objective[j].is_finite() {
                return Err(LpError::Malformed(format!("column {} has non-finite cost", self.names.cols[j])));
            }
        }
        if self.rhs.iter().any(|v| !v.is_finite()) || self.matrix.data().iter().any(|v| !v.is_finite()) {
            return bad("non-finite rhs or matrix entry");
        }
        Ok(())
    }

    /// Row activities `A x`.
    pub fn activities(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_rows())
            .map(|i| self.matrix.row(i).iter().zip(x).map(|(a, v)| a * v).sum())
            .collect()
    }

    /// Largest violation of rows and bounds at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (i, act) in self.activities(x).into_iter().enumerate() {
            let b = self.rhs[i];
            let v = match self.senses[i] {
                RowSense::Le => act - b,
                RowSense::Ge => b - act,
                RowSense::Eq => (act - b).abs(),
            };
            worst = worst.max(v);
        }
        for j in 0..self.n_cols() {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        worst
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

/// Incremental sparse construction of a [`LinearProgram`].
#[derive(Debug, Clone, Default)]
pub struct LpBuilder {
    cost: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    col_names: Vec<String>,
    rows: Vec<Vec<(usize, f64)>>,
    senses: Vec<RowSense>,
    rhs: Vec<f64>,
    row_names: Vec<String>,
}

impl LpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_col(&mut self, name: impl Into<String>, cost: f64, lower: f64, upper: f64) -> usize {
        self.cost.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.col_names.push(name.into());
        self.cost.len() - 1
    }

    pub fn add_row(&mut self, name: impl Into<String>, coefs: &[(usize, f64)], sense: RowSense, rhs: f64) -> usize {
        self.rows.push(coefs.to_vec());
        self.senses.push(sense);
        self.rhs.push(rhs);
        self.row_names.push(name.into());
        self.rows.len() - 1
    }

    pub fn n_cols(&self) -> usize {
        self.cost.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn set_cost(&mut self, col: usize, cost: f64) {
        self.cost[col] = cost;
    }

    pub fn build(self) -> Result<LinearProgram, LpError> {
        let n = self.cost.len();
        let m = self.rows.len();
        let mut data = vec![0.0; m * n];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, a) in row {
                if j >= n {
                    return Err(LpError::Malformed(format!("row {} references column {j}", self.row_names[i])));
                }
                data[i * n + j] += a;
            }
        }
        let lp = LinearProgram {
            matrix: Arc::new(DenseMatrix::new(m, n, data)),
            names: Arc::new(LpNames { rows: self.row_names, cols: self.col_names }),
            objective: self.cost,
            senses: self.senses,
            rhs: self.rhs,
            lower: self.lower,
            upper: self.upper,
        };
        lp.validate()?;
        Ok(lp)
    }
}

/// Optimal (or terminal) result of a solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal values of the structural columns (empty unless optimal).
    pub x: Vec<f64>,
    /// Row duals `π`, computed with the unperturbed objective. `≥` rows carry `π ≥ 0`.
    pub duals: Vec<f64>,
    /// Reduced costs `c − Aᵀπ` of the structural columns.
    pub reduced_costs: Vec<f64>,
    /// Objective value under the unperturbed costs.
    pub objective: f64,
    pub basis: Option<Basis>,
    pub iterations: usize,
}

impl LpSolution {
    pub(crate) fn terminal(status: LpStatus, iterations: usize) -> Self {
        Self {
            status,
            x: Vec::new(),
            duals: Vec::new(),
            reduced_costs: Vec::new(),
            objective: f64::NAN,
            basis: None,
            iterations,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// Row duals and reduced costs of an optimal solution.
pub fn extract_duals(sol: &LpSolution) -> Result<(Vec<f64>, Vec<f64>), LpError> {
    if sol.status != LpStatus::Optimal {
        return Err(LpError::NotOptimal(sol.status));
    }
    Ok((sol.duals.clone(), sol.reduced_costs.clone()))
}
