//! Privacy budgets, output grids, probability tables and the
//! [`MechanismDesign`] that ties them together.
//!
//! A design with `N` outputs has `n = floor(N / 2)` positive outputs
//! `a_1 < ... < a_n`, mirrored to the negative side, plus `a_0 = 0` when `N`
//! is odd. The table has one row per output (ascending) and `2n + 1`
//! columns, one per endpoint `x_{-n} < ... < x_n`. Endpoints are induced by
//! the table: `x_j = sum_i a_i P[i][j]`, with `x_{-n} = -1` and `x_n = 1`.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking that induced endpoints hit `-1` and `1`.
const ENDPOINT_TOL: f64 = 1e-9;
/// Tolerance for the mirror symmetry of outputs and table entries.
const SYMMETRY_TOL: f64 = 1e-9;
/// Segments whose variance slope denominator falls below this are treated
/// as having no interior vertex.
const VERTEX_DENOM_MIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyBudget {
    epsilon: f64,
    exp_epsilon: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64) -> Result<Self> {
        let exp_epsilon = epsilon.exp();
        if !(epsilon > 0.0) || !epsilon.is_finite() || !exp_epsilon.is_finite() {
            return Err(Error::InvalidBudget(epsilon));
        }
        Ok(Self {
            epsilon,
            exp_epsilon,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `e^epsilon`, the largest allowed likelihood ratio.
    pub fn exp(&self) -> f64 {
        self.exp_epsilon
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Analytical,
    NumericalWorst,
    NumericalAvg,
    Duchi,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Analytical => "analytical",
            Variant::NumericalWorst => "numerical-worst",
            Variant::NumericalAvg => "numerical-avg",
            Variant::Duchi => "duchi",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Symmetric, strictly increasing set of output values.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrid {
    values: Vec<f64>,
}

impl OutputGrid {
    /// Builds the full grid from the positive half `a_1 < ... < a_n`.
    pub fn from_positive(positive: &[f64], n_outputs: usize) -> Result<Self> {
        let n = n_outputs / 2;
        if n_outputs < 2 || positive.len() != n {
            return Err(Error::InvalidOutputCount(n_outputs));
        }
        let mut values = Vec::with_capacity(n_outputs);
        values.extend(positive.iter().rev().map(|a| -a));
        if n_outputs % 2 == 1 {
            values.push(0.0);
        }
        values.extend_from_slice(positive);
        Self::new(values)
    }

    pub fn new(values: Vec<f64>) -> Result<Self> {
        let len = values.len();
        if len < 2 {
            return Err(Error::InvalidOutputCount(len));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDesign("non-finite output value".into()));
        }
        for w in values.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::Ordering(format!(
                    "outputs must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        for r in 0..len / 2 {
            let (lo, hi) = (values[r], values[len - 1 - r]);
            if (lo + hi).abs() > SYMMETRY_TOL * hi.abs().max(1.0) {
                return Err(Error::InvalidDesign(format!(
                    "outputs are not symmetric: {lo} vs {hi}"
                )));
            }
        }
        let mut values = values;
        if len % 2 == 1 {
            if values[len / 2].abs() > SYMMETRY_TOL {
                return Err(Error::InvalidDesign("odd grid needs a zero output".into()));
            }
            values[len / 2] = 0.0;
        }
        Ok(Self { values })
    }

    pub fn n_outputs(&self) -> usize {
        self.values.len()
    }

    /// Number of positive outputs, `n = floor(N / 2)`.
    pub fn half(&self) -> usize {
        self.values.len() / 2
    }

    pub fn is_odd(&self) -> bool {
        self.values.len() % 2 == 1
    }

    /// All outputs in ascending order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `a_1, ..., a_n`.
    pub fn positive(&self) -> &[f64] {
        &self.values[self.values.len() - self.half()..]
    }

    /// Row position of signed output index `i` (`-n..=n`, no `0` when `N` is even).
    pub fn row_of(&self, index: i64) -> Result<usize> {
        let n = self.half() as i64;
        let err = Error::IndexOutOfRange {
            index,
            n_outputs: self.n_outputs(),
        };
        if index.abs() > n || (index == 0 && !self.is_odd()) {
            return Err(err);
        }
        let row = if self.is_odd() || index < 0 {
            index + n
        } else {
            index + n - 1
        };
        Ok(row as usize)
    }

    /// Signed output index of a row position.
    pub fn signed_index(&self, row: usize) -> i64 {
        let n = self.half() as i64;
        let r = row as i64;
        if self.is_odd() || r < n {
            r - n
        } else {
            r - n + 1
        }
    }
}

/// Row-major table of output probabilities, rows = outputs, columns = endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityTable {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdpReport {
    pub max_ratio: f64,
    pub bound: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidityReport {
    pub max_column_error: f64,
    pub min_entry: f64,
    pub ok: bool,
}

impl ProbabilityTable {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_rows = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        if n_rows == 0 || cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidDesign("table rows must be non-empty and equal length".into()));
        }
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDesign("non-finite table entry".into()));
        }
        Ok(Self {
            rows: n_rows,
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn column_sum(&self, col: usize) -> f64 {
        (0..self.rows).map(|r| self.get(r, col)).sum()
    }

    /// Largest within-row ratio `max_j P[i][j] / min_j P[i][j]` over all rows.
    /// An all-zero row contributes 1, a row mixing zero and positive entries
    /// contributes infinity.
    pub fn max_ldp_ratio(&self) -> f64 {
        let mut worst: f64 = 1.0;
        for r in 0..self.rows {
            let row = self.row(r);
            let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
            let ratio = if hi <= 0.0 {
                1.0
            } else if lo <= 0.0 {
                f64::INFINITY
            } else {
                hi / lo
            };
            worst = worst.max(ratio);
        }
        worst
    }

    /// Linear interpolation between columns preserves the endpoint ratio
    /// bound, so checking the table is enough for every input.
    pub fn verify_ldp(&self, budget: &PrivacyBudget, tol: f64) -> LdpReport {
        let bound = budget.exp();
        let max_ratio = self.max_ldp_ratio();
        LdpReport {
            max_ratio,
            bound,
            ok: max_ratio <= bound * (1.0 + tol),
        }
    }

    pub fn verify_validity(&self, tol: f64) -> ValidityReport {
        let max_column_error = (0..self.cols)
            .map(|c| (self.column_sum(c) - 1.0).abs())
            .fold(0.0, f64::max);
        let min_entry = self.data.iter().copied().fold(f64::INFINITY, f64::min);
        ValidityReport {
            max_column_error,
            min_entry,
            ok: max_column_error <= tol && min_entry >= -tol,
        }
    }
}

/// A complete N-output mechanism.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanismDesign {
    variant: Variant,
    budget: PrivacyBudget,
    grid: OutputGrid,
    endpoints: Vec<f64>,
    table: ProbabilityTable,
    objective_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorstCase {
    pub variance: f64,
    pub argmax: f64,
}

impl MechanismDesign {
    /// Builds a design and derives its endpoints from the table. The
    /// objective value is left as NaN until [`Self::with_objective`].
    pub fn new(
        variant: Variant,
        budget: PrivacyBudget,
        grid: OutputGrid,
        table: ProbabilityTable,
    ) -> Result<Self> {
        let n_out = grid.n_outputs();
        let n = grid.half();
        if table.rows() != n_out || table.cols() != 2 * n + 1 {
            return Err(Error::InvalidDesign(format!(
                "table is {}x{}, expected {}x{}",
                table.rows(),
                table.cols(),
                n_out,
                2 * n + 1
            )));
        }
        for r in 0..n_out {
            for c in 0..=2 * n {
                let (p, q) = (table.get(r, c), table.get(n_out - 1 - r, 2 * n - c));
                if (p - q).abs() > SYMMETRY_TOL {
                    return Err(Error::InvalidDesign(format!(
                        "table is not mirror-symmetric at row {r}, column {c}"
                    )));
                }
            }
        }
        let a = grid.values();
        let mut endpoints = vec![0.0; 2 * n + 1];
        for j in 1..=n {
            let c = n + j;
            let x: f64 = (0..n_out).map(|r| a[r] * table.get(r, c)).sum();
            endpoints[c] = x;
            endpoints[n - j] = -x;
        }
        if (endpoints[2 * n] - 1.0).abs() > ENDPOINT_TOL {
            return Err(Error::InvalidDesign(format!(
                "induced endpoint x_n = {} is not 1 (unbiasedness fails)",
                endpoints[2 * n]
            )));
        }
        endpoints[2 * n] = 1.0;
        endpoints[0] = -1.0;
        for w in endpoints.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::Ordering(format!(
                    "endpoints must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self {
            variant,
            budget,
            grid,
            endpoints,
            table,
            objective_value: f64::NAN,
        })
    }

    pub fn with_objective(mut self, value: f64) -> Self {
        self.objective_value = value;
        self
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn budget(&self) -> PrivacyBudget {
        self.budget
    }

    pub fn epsilon(&self) -> f64 {
        self.budget.epsilon()
    }

    pub fn n_outputs(&self) -> usize {
        self.grid.n_outputs()
    }

    pub fn grid(&self) -> &OutputGrid {
        &self.grid
    }

    pub fn outputs(&self) -> &[f64] {
        self.grid.values()
    }

    pub fn endpoints(&self) -> &[f64] {
        &self.endpoints
    }

    pub fn table(&self) -> &ProbabilityTable {
        &self.table
    }

    pub fn objective_value(&self) -> f64 {
        self.objective_value
    }

    /// Index `c` in `1..=2n` of the segment `[x_{c-1}, x_c]` containing `x`.
    /// Segments are half-open except the last.
    pub fn segment_of(&self, x: f64) -> Result<usize> {
        if !(-1.0..=1.0).contains(&x) {
            return Err(Error::Domain(x));
        }
        let last = self.endpoints.len() - 1;
        let c = self.endpoints.partition_point(|&e| e <= x);
        Ok(c.clamp(1, last))
    }

    fn alpha(&self, c: usize, x: f64) -> f64 {
        let (lo, hi) = (self.endpoints[c - 1], self.endpoints[c]);
        (x - lo) / (hi - lo)
    }

    fn interp(&self, row: usize, c: usize, alpha: f64) -> f64 {
        (1.0 - alpha) * self.table.get(row, c - 1) + alpha * self.table.get(row, c)
    }

    /// Probability of reporting the output in `row` given input `x`.
    pub fn prob_at(&self, row: usize, x: f64) -> Result<f64> {
        if row >= self.n_outputs() {
            return Err(Error::IndexOutOfRange {
                index: row as i64,
                n_outputs: self.n_outputs(),
            });
        }
        let c = self.segment_of(x)?;
        Ok(self.interp(row, c, self.alpha(c, x)))
    }

    /// Full output distribution at `x`, one probability per row.
    pub fn probabilities(&self, x: f64) -> Result<Vec<f64>> {
        let c = self.segment_of(x)?;
        let alpha = self.alpha(c, x);
        Ok((0..self.n_outputs()).map(|r| self.interp(r, c, alpha)).collect())
    }

    pub fn expected_value(&self, x: f64) -> Result<f64> {
        let probs = self.probabilities(x)?;
        Ok(probs.iter().zip(self.outputs()).map(|(p, a)| p * a).sum())
    }

    pub fn noise_variance(&self, x: f64) -> Result<f64> {
        let c = self.segment_of(x)?;
        Ok(self.segment_variance(c, self.alpha(c, x), x))
    }

    fn segment_variance(&self, c: usize, alpha: f64, x: f64) -> f64 {
        let a = self.outputs();
        let second: f64 = (0..a.len()).map(|r| a[r] * a[r] * self.interp(r, c, alpha)).sum();
        second - x * x
    }

    /// Largest variance on segment `c` together with where it is attained.
    /// The variance is concave in `x` on each segment, so the maximum is at
    /// the stationary point when it lies inside, otherwise at an endpoint.
    pub fn segment_max(&self, c: usize) -> WorstCase {
        let (lo, hi) = (self.endpoints[c - 1], self.endpoints[c]);
        let mut best = WorstCase {
            variance: self.segment_variance(c, 0.0, lo),
            argmax: lo,
        };
        let right = self.segment_variance(c, 1.0, hi);
        if right > best.variance {
            best = WorstCase {
                variance: right,
                argmax: hi,
            };
        }
        let a = self.outputs();
        let denom = hi - lo;
        if denom.abs() >= VERTEX_DENOM_MIN {
            let num: f64 = (0..a.len())
                .map(|r| (self.table.get(r, c) - self.table.get(r, c - 1)) * a[r] * a[r])
                .sum();
            let vertex = num / (2.0 * denom);
            if vertex > lo && vertex < hi {
                let v = self.segment_variance(c, (vertex - lo) / denom, vertex);
                if v > best.variance {
                    best = WorstCase {
                        variance: v,
                        argmax: vertex,
                    };
                }
            }
        }
        best
    }

    pub fn worst_case(&self) -> WorstCase {
        (1..self.endpoints.len())
            .map(|c| self.segment_max(c))
            .fold(
                WorstCase {
                    variance: f64::NEG_INFINITY,
                    argmax: 0.0,
                },
                |acc, w| if w.variance > acc.variance { w } else { acc },
            )
    }

    pub fn worst_case_variance(&self) -> f64 {
        self.worst_case().variance
    }

    /// Variance averaged over `x` uniform on `[-1, 1]`, computed exactly
    /// segment by segment.
    pub fn average_variance(&self) -> f64 {
        let a = self.outputs();
        let x = &self.endpoints;
        let mut total = 0.0;
        for c in 1..x.len() {
            let second: f64 = (0..a.len())
                .map(|r| a[r] * a[r] * (self.table.get(r, c - 1) + self.table.get(r, c)))
                .sum();
            let width = x[c] - x[c - 1];
            total += 0.5 * second * width - (x[c].powi(3) - x[c - 1].powi(3)) / 3.0;
        }
        total / 2.0
    }

    pub fn verify_ldp(&self, tol: f64) -> LdpReport {
        self.table.verify_ldp(&self.budget, tol)
    }

    pub fn verify_validity(&self, tol: f64) -> ValidityReport {
        self.table.verify_validity(tol)
    }

    /// Draws the row of the reported output for input `x`.
    pub fn sample<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> Result<usize> {
        let c = self.segment_of(x)?;
        let alpha = self.alpha(c, x);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for r in 0..self.n_outputs() {
            let p = self.interp(r, c, alpha);
            if p > 0.0 {
                last_positive = r;
            }
            acc += p;
            if u < acc {
                return Ok(r);
            }
        }
        Ok(last_positive)
    }

    /// Same as [`Self::sample`] but returns the output value.
    pub fn perturb<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> Result<f64> {
        Ok(self.outputs()[self.sample(x, rng)?])
    }

    /// Bits needed to send one report, `ceil(log2 N)`.
    pub fn bits_per_report(&self) -> u32 {
        bits_for_outputs(self.n_outputs())
    }

    pub fn to_file(&self) -> DesignFile {
        DesignFile {
            variant: self.variant,
            epsilon: self.budget.epsilon(),
            n_outputs: self.n_outputs(),
            a: self.outputs().to_vec(),
            x: self.endpoints.clone(),
            p: self.table.to_rows(),
            objective_value: self.objective_value,
        }
    }

    pub fn from_file(file: DesignFile) -> Result<Self> {
        if file.a.len() != file.n_outputs {
            return Err(Error::InvalidDesign(format!(
                "N = {} but {} outputs listed",
                file.n_outputs,
                file.a.len()
            )));
        }
        let budget = PrivacyBudget::new(file.epsilon)?;
        let grid = OutputGrid::new(file.a)?;
        let table = ProbabilityTable::new(file.p)?;
        let design = Self::new(file.variant, budget, grid, table)?;
        if file.x.len() != design.endpoints.len()
            || file
                .x
                .iter()
                .zip(&design.endpoints)
                .any(|(f, e)| (f - e).abs() > ENDPOINT_TOL)
        {
            return Err(Error::InvalidDesign(
                "listed endpoints disagree with the table".into(),
            ));
        }
        Ok(design.with_objective(file.objective_value))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub fn bits_for_outputs(n_outputs: usize) -> u32 {
    (n_outputs.max(1) as f64).log2().ceil() as u32
}

/// On-disk JSON layout of a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignFile {
    pub variant: Variant,
    pub epsilon: f64,
    #[serde(rename = "N")]
    pub n_outputs: usize,
    pub a: Vec<f64>,
    pub x: Vec<f64>,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    pub objective_value: f64,
}
