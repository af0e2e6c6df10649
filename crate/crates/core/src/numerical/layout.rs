//! Flat variable layout for symmetric N-output designs.
//!
//! Only the non-negative half of the table is stored: columns `j = 1..=n`
//! for every row, plus column `0` for rows `i >= 0` (odd `N`) or `i >= 1`
//! (even `N`). Entry `P[i][j]` with `j < 0` is read from `P[-i][-j]`, and
//! `P[i][0]` from `P[|i|][0]`. The vector is `[a_1..a_n, half entries]`,
//! with half entries ordered column by column (`j = 1..=n`, rows ascending)
//! and column `0` last.

use crate::baselines::PmParams;
use crate::error::{Error, Result};
use crate::mechanism::{MechanismDesign, OutputGrid, PrivacyBudget, ProbabilityTable, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Layout {
    n_outputs: usize,
    n: usize,
}

impl Layout {
    pub fn new(n_outputs: usize) -> Result<Self> {
        if n_outputs < 2 {
            return Err(Error::InvalidOutputCount(n_outputs));
        }
        Ok(Self {
            n_outputs,
            n: n_outputs / 2,
        })
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    pub fn half(&self) -> usize {
        self.n
    }

    pub fn is_odd(&self) -> bool {
        self.n_outputs % 2 == 1
    }

    /// Total vector length.
    pub fn len(&self) -> usize {
        self.n + self.n * self.n_outputs + self.center_len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn center_len(&self) -> usize {
        if self.is_odd() {
            self.n + 1
        } else {
            self.n
        }
    }

    /// Signed row indices in ascending order.
    pub fn rows(&self) -> impl Iterator<Item = i64> + '_ {
        let n = self.n as i64;
        let odd = self.is_odd();
        (-n..=n).filter(move |&i| odd || i != 0)
    }

    pub fn row_position(&self, i: i64) -> usize {
        let n = self.n as i64;
        if self.is_odd() || i < 0 {
            (i + n) as usize
        } else {
            (i + n - 1) as usize
        }
    }

    /// Vector index holding `P[i][j]` (after symmetry reduction).
    pub fn p_index(&self, i: i64, j: i64) -> usize {
        let base = self.n;
        if j > 0 {
            base + (j as usize - 1) * self.n_outputs + self.row_position(i)
        } else if j < 0 {
            base + ((-j) as usize - 1) * self.n_outputs + self.row_position(-i)
        } else {
            let k = i.unsigned_abs() as usize;
            let offset = if self.is_odd() { k } else { k - 1 };
            base + self.n * self.n_outputs + offset
        }
    }

    /// Vector index of `a_k`, `k` in `1..=n`.
    pub fn a_index(&self, k: usize) -> usize {
        k - 1
    }

    /// Stored entries that the solver derives from the others: the diagonal
    /// of columns `1..n`, the centre entry of column `0`, and both extreme
    /// rows of column `n`.
    pub fn eliminated(&self) -> Vec<(i64, i64)> {
        let n = self.n as i64;
        let mut out: Vec<(i64, i64)> = (1..n).map(|j| (j, j)).collect();
        out.push((n, n));
        out.push((-n, n));
        out.push(if self.is_odd() { (0, 0) } else { (1, 0) });
        out
    }
}

/// Symmetric half of a design, packed per [`Layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionVector {
    layout: Layout,
    values: Vec<f64>,
}

impl DecisionVector {
    pub fn new(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::InvalidParameters(format!(
                "decision vector has {} entries, layout needs {}",
                values.len(),
                layout.len()
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `a_1..a_n`.
    pub fn positive_outputs(&self) -> &[f64] {
        &self.values[..self.layout.half()]
    }

    /// Signed output value `a_i`.
    pub fn output(&self, i: i64) -> f64 {
        signed_output(&self.values, i)
    }

    pub fn p(&self, i: i64, j: i64) -> f64 {
        self.values[self.layout.p_index(i, j)]
    }

    /// Induced `x_0..x_n`; `x_n` equals 1 only for unbiased points.
    pub fn endpoints_half(&self) -> Vec<f64> {
        let n = self.layout.half() as i64;
        (0..=n)
            .map(|j| {
                if j == 0 {
                    0.0
                } else {
                    self.layout.rows().map(|i| self.output(i) * self.p(i, j)).sum()
                }
            })
            .collect()
    }

    pub fn from_design(design: &MechanismDesign) -> Result<Self> {
        let layout = Layout::new(design.n_outputs())?;
        let mut values = vec![0.0; layout.len()];
        values[..layout.half()].copy_from_slice(design.grid().positive());
        let n = layout.half() as i64;
        let table = design.table();
        for i in layout.rows() {
            for j in 0..=n {
                if j == 0 && i < 0 {
                    continue;
                }
                values[layout.p_index(i, j)] = table.get(layout.row_position(i), (j + n) as usize);
            }
        }
        Ok(Self { layout, values })
    }

    pub fn decode(&self, budget: PrivacyBudget, variant: Variant) -> Result<MechanismDesign> {
        let layout = self.layout;
        let grid = OutputGrid::from_positive(self.positive_outputs(), layout.n_outputs())?;
        let n = layout.half() as i64;
        let rows = layout
            .rows()
            .map(|i| (-n..=n).map(|j| self.p(i, j)).collect())
            .collect();
        MechanismDesign::new(variant, budget, grid, ProbabilityTable::new(rows)?)
    }
}

pub(crate) fn signed_output(values: &[f64], i: i64) -> f64 {
    match i.signum() {
        0 => 0.0,
        s => s as f64 * values[i.unsigned_abs() as usize - 1],
    }
}

/// Starting point obtained by discretizing the sub-optimal Piecewise
/// Mechanism: outputs at the midpoints of `N` equal cells of its range, and
/// `P[i][j]` the mass its density puts on cell `i` at input `x_j = j / n`.
pub fn init_from_pm_sub(budget: PrivacyBudget, n_outputs: usize) -> Result<DecisionVector> {
    let layout = Layout::new(n_outputs)?;
    let pm = PmParams::sub(budget);
    let (lo, hi) = pm.domain();
    let width = (hi - lo) / n_outputs as f64;
    let cell = |r: usize| (lo + r as f64 * width, lo + (r + 1) as f64 * width);
    let n = layout.half() as i64;
    let mut values = vec![0.0; layout.len()];
    for k in 1..=layout.half() {
        let (c_lo, c_hi) = cell(n_outputs - layout.half() + k - 1);
        values[layout.a_index(k)] = (c_lo + c_hi) / 2.0;
    }
    for j in 0..=n {
        let x = j as f64 / n as f64;
        let masses: Vec<f64> = (0..n_outputs)
            .map(|r| {
                let (c_lo, c_hi) = cell(r);
                pm_mass(&pm, x, c_lo, c_hi)
            })
            .collect();
        let total: f64 = masses.iter().sum();
        for i in layout.rows() {
            if j == 0 && i < 0 {
                continue;
            }
            values[layout.p_index(i, j)] = masses[layout.row_position(i)] / total;
        }
    }
    let mut v = DecisionVector { layout, values };
    symmetrize_center(&mut v);
    Ok(v)
}

/// Probability that the Piecewise Mechanism maps `x` into `[lo, hi]`.
fn pm_mass(pm: &PmParams, x: f64, lo: f64, hi: f64) -> f64 {
    let overlap = (hi.min(pm.right(x)) - lo.max(pm.left(x))).max(0.0);
    pm.q * (hi - lo) + (pm.high_density() - pm.q) * overlap
}

/// Column 0 is stored once for `+-i`; renormalize it so that the full
/// column sums to one.
fn symmetrize_center(v: &mut DecisionVector) {
    let layout = v.layout;
    let n = layout.half() as i64;
    let start = if layout.is_odd() { 0 } else { 1 };
    let total: f64 = (start..=n)
        .map(|k| if k == 0 { v.p(0, 0) } else { 2.0 * v.p(k, 0) })
        .sum();
    for k in start..=n {
        let idx = layout.p_index(k, 0);
        v.values[idx] /= total;
    }
}

/// Renormalizes every stored column and rescales the outputs so that
/// `x_n = 1`. Used to turn arbitrary (e.g. jittered) points into ones that
/// satisfy the equality constraints exactly.
pub(crate) fn repair(v: &mut DecisionVector) -> Result<()> {
    let layout = v.layout;
    let n = layout.half() as i64;
    for value in v.values.iter_mut().skip(layout.half()) {
        *value = value.max(0.0);
    }
    for j in 1..=n {
        let total: f64 = layout.rows().map(|i| v.p(i, j)).sum();
        for i in layout.rows().collect::<Vec<_>>() {
            let idx = layout.p_index(i, j);
            v.values[idx] /= total;
        }
    }
    symmetrize_center(v);
    let xn = *v.endpoints_half().last().expect("n >= 1");
    if !(xn > 0.0) {
        return Err(Error::InvalidParameters("starting point has x_n <= 0".into()));
    }
    for k in 1..=layout.half() {
        v.values[layout.a_index(k)] /= xn;
    }
    Ok(())
}
