//! Aggregator-side estimation from perturbed reports.
//!
//! Means come straight from the unbiased reports. Distributions are
//! recovered with EM over a transition matrix `theta[j][i]`, the
//! probability that a value from input bin `i` is reported in output bin
//! `j`. Values inside an input bin are taken as uniform, so each entry is
//! the bin average of the per-input report probability.

use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::PmParams;
use crate::error::{Error, Result};
use crate::mechanism::{MechanismDesign, Variant};

/// Floor applied to `sum_k theta[j][k] pi[k]` inside the EM update.
const PROB_FLOOR: f64 = 1e-300;
const HIST_SUM_TOL: f64 = 1e-12;

/// Equal-width edges over `[lo, hi]`, with the ends pinned exactly.
pub fn uniform_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let width = (hi - lo) / bins as f64;
    (0..=bins)
        .map(|k| match k {
            0 => lo,
            k if k == bins => hi,
            k => lo + k as f64 * width,
        })
        .collect()
}

/// Bin holding `y` among sorted `edges`; values outside fall in the end bins.
fn bin_index(edges: &[f64], y: f64) -> usize {
    let bins = edges.len() - 1;
    edges[1..bins].partition_point(|&e| e <= y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    edges: Vec<f64>,
    pi: Vec<f64>,
}

impl Histogram {
    pub fn new(edges: Vec<f64>, pi: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || pi.len() + 1 != edges.len() {
            return Err(Error::Estimation(format!(
                "{} edges cannot hold {} bins",
                edges.len(),
                pi.len()
            )));
        }
        if edges[0] != -1.0 || edges[edges.len() - 1] != 1.0 || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Estimation("edges must increase strictly from -1 to 1".into()));
        }
        if pi.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::Estimation("bin masses must be finite and nonnegative".into()));
        }
        let total: f64 = pi.iter().sum();
        if (total - 1.0).abs() > HIST_SUM_TOL {
            return Err(Error::Estimation(format!("bin masses sum to {total}")));
        }
        Ok(Self { edges, pi })
    }

    /// `d` equal bins on `[-1, 1]` with equal mass.
    pub fn uniform(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::Estimation("need at least one bin".into()));
        }
        Self::new(uniform_edges(-1.0, 1.0, d), vec![1.0 / d as f64; d])
    }

    /// Empirical distribution of `values` over `d` equal bins. Values are
    /// clamped to `[-1, 1]` first.
    pub fn from_values(values: &[f64], d: usize) -> Result<Self> {
        if d == 0 || values.is_empty() {
            return Err(Error::Estimation("need at least one bin and one value".into()));
        }
        let edges = uniform_edges(-1.0, 1.0, d);
        let mut counts = vec![0u64; d];
        for &v in values {
            counts[bin_index(&edges, v.clamp(-1.0, 1.0))] += 1;
        }
        Self::from_counts(edges, &counts)
    }

    pub fn from_counts(edges: Vec<f64>, counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::Estimation("all counts are zero".into()));
        }
        let pi = normalized(counts.iter().map(|&c| c as f64).collect());
        Self::new(edges, pi)
    }

    pub fn d(&self) -> usize {
        self.pi.len()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn bin_of(&self, x: f64) -> Result<usize> {
        if !(-1.0..=1.0).contains(&x) {
            return Err(Error::Domain(x));
        }
        Ok(bin_index(&self.edges, x))
    }

    /// Writes `bin,lo,hi,pi` rows, prefixed by the mechanism and budget.
    pub fn write_csv<W: Write>(&self, out: W, mechanism: &str, epsilon: f64) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["mechanism", "epsilon", "d", "bin", "lo", "hi", "pi"])?;
        for (k, p) in self.pi.iter().enumerate() {
            w.write_record([
                mechanism.to_string(),
                epsilon.to_string(),
                self.d().to_string(),
                k.to_string(),
                self.edges[k].to_string(),
                self.edges[k + 1].to_string(),
                p.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<histogram>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            lo: f64,
            hi: f64,
            pi: f64,
        }
        let mut edges = Vec::new();
        let mut pi = Vec::new();
        for row in csv::Reader::from_reader(input).deserialize() {
            let row: Row = row?;
            if edges.is_empty() {
                edges.push(row.lo);
            }
            edges.push(row.hi);
            pi.push(row.pi);
        }
        Self::new(edges, pi)
    }
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x /= total;
    }
    v
}

/// `theta[j][i] = Pr[report in output bin j | input in bin i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    input_edges: Vec<f64>,
    entries: Vec<Vec<f64>>,
}

impl TransitionMatrix {
    pub fn new(input_edges: Vec<f64>, entries: Vec<Vec<f64>>) -> Result<Self> {
        let cols = input_edges.len().saturating_sub(1);
        if cols == 0 || entries.is_empty() || entries.iter().any(|r| r.len() != cols) {
            return Err(Error::Estimation("transition matrix shape mismatch".into()));
        }
        Ok(Self { input_edges, entries })
    }

    pub fn rows(&self) -> usize {
        self.entries.len()
    }

    pub fn cols(&self) -> usize {
        self.input_edges.len() - 1
    }

    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.entries[j][i]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.entries[j]
    }

    pub fn input_edges(&self) -> &[f64] {
        &self.input_edges
    }

    pub fn column_sum(&self, i: usize) -> f64 {
        self.entries.iter().map(|r| r[i]).sum()
    }

    /// Largest `|column sum - 1|`.
    pub fn stochastic_error(&self) -> f64 {
        (0..self.cols())
            .map(|i| (self.column_sum(i) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.rows() != other.rows() || self.cols() != other.cols() {
            return Err(Error::Estimation("transition matrix shapes differ".into()));
        }
        Ok(self
            .entries
            .iter()
            .flatten()
            .zip(other.entries.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Row-major CSV: one line per output bin, one column per input bin.
    pub fn write_csv<W: Write>(&self, out: W, mechanism: &str, epsilon: f64) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            "mechanism".to_string(),
            "epsilon".into(),
            "d".into(),
            "d_tilde".into(),
            "output".into(),
        ];
        header.extend((0..self.cols()).map(|i| format!("in_{i}")));
        w.write_record(&header)?;
        for (j, row) in self.entries.iter().enumerate() {
            let mut rec = vec![
                mechanism.to_string(),
                epsilon.to_string(),
                self.cols().to_string(),
                self.rows().to_string(),
                j.to_string(),
            ];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<transition matrix>", e))?;
        Ok(())
    }
}

/// Transition matrix of a Piecewise Mechanism with `d` input bins on
/// `[-1, 1]` and `d_tilde` equal output bins over its range `[L(-1), R(1)]`.
///
/// Each entry is `q * l_out` from the low density plus the band's excess
/// mass, integrated in closed form over the input bin. Which three pieces
/// make up the band overlap depends on whether the band is at least as wide
/// as an output bin.
pub fn theta_continuous(params: &PmParams, d: usize, d_tilde: usize) -> Result<TransitionMatrix> {
    if d == 0 || d_tilde == 0 {
        return Err(Error::Estimation("bin counts must be positive".into()));
    }
    let (lo, hi) = params.domain();
    let r = uniform_edges(-1.0, 1.0, d);
    let rt = uniform_edges(lo, hi, d_tilde);
    let s = params.budget.exp() - 1.0;
    let q = params.q;
    let columns: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|i| {
            let l = r[i + 1] - r[i];
            (0..d_tilde)
                .map(|j| {
                    let lt = rt[j + 1] - rt[j];
                    // Clamp away rounding at the probability bounds.
                    (q * lt + s * q / l * band_excess(params, r[i], r[i + 1], rt[j], rt[j + 1])).clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect();
    let entries = (0..d_tilde).map(|j| columns.iter().map(|c| c[j]).collect()).collect();
    TransitionMatrix::new(r, entries)
}

/// `int_{r0}^{r1} |[L(x), R(x)] ∩ [t0, t1]| dx`.
fn band_excess(pm: &PmParams, r0: f64, r1: f64, t0: f64, t1: f64) -> f64 {
    let (left, right) = (|x: f64| pm.left(x), |x: f64| pm.right(x));
    let (linv, rinv) = (|y: f64| pm.left_inverse(y), |y: f64| pm.right_inverse(y));
    let lt = t1 - t0;
    // Integral of `slope * x + c` over `[max(a, r0), min(b, r1)]`, zero if empty.
    let piece = |gate: bool, a: f64, b: f64, slope: f64, c: f64| {
        let (a, b) = (a.max(r0), b.min(r1));
        if !gate || b <= a {
            0.0
        } else {
            slope * (b * b - a * a) / 2.0 + c * (b - a)
        }
    };
    let k = pm.slope;
    if pm.band_width() >= lt {
        // R(x) enters the bin, the band covers it, then L(x) leaves it.
        let enter = piece(right(r0) <= t1 && right(r1) >= t0, rinv(t0), rinv(t1), k, pm.offset - t0);
        let cover = piece(left(r0) <= t0 && right(r1) >= t1, rinv(t1), linv(t0), 0.0, lt);
        let leave = piece(left(r0) <= t1 && left(r1) >= t0, linv(t0), linv(t1), -k, t1 + pm.offset);
        enter + cover + leave
    } else {
        // R(x) crosses t0, the band sits inside, then L(x) crosses t1.
        let enter = piece(left(r0) <= t0 && right(r1) >= t0, rinv(t0), linv(t0), k, pm.offset - t0);
        let inside = piece(right(r0) <= t1 && left(r1) >= t0, linv(t0), rinv(t1), 0.0, pm.band_width());
        let leave = piece(left(r0) <= t1 && right(r1) >= t1, rinv(t1), linv(t1), -k, t1 + pm.offset);
        enter + inside + leave
    }
}

/// Transition matrix of a discrete design over `d` equal input bins, one
/// row per output. Every report probability is linear between endpoints,
/// so the trapezoid rule over the bin edges plus the endpoints inside the
/// bin is exact.
pub fn theta_discrete(design: &MechanismDesign, d: usize) -> Result<TransitionMatrix> {
    if d == 0 {
        return Err(Error::Estimation("need at least one bin".into()));
    }
    let r = uniform_edges(-1.0, 1.0, d);
    let xs = design.endpoints();
    let columns: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|i| {
            let (lo, hi) = (r[i], r[i + 1]);
            let mut z = vec![lo];
            z.extend(xs.iter().copied().filter(|&x| x > lo && x < hi));
            z.push(hi);
            let probs: Vec<Vec<f64>> = z.iter().map(|&x| design.probabilities(x)).collect::<Result<_>>()?;
            Ok((0..design.n_outputs())
                .map(|j| {
                    z.windows(2)
                        .zip(probs.windows(2))
                        .map(|(zw, pw)| (pw[0][j] + pw[1][j]) / 2.0 * (zw[1] - zw[0]))
                        .sum::<f64>()
                        / (hi - lo)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let entries = (0..design.n_outputs())
        .map(|j| columns.iter().map(|c| c[j]).collect())
        .collect();
    TransitionMatrix::new(r, entries)
}

/// Transition matrix of an analytical design from its band structure.
///
/// In these designs row `j` stays at a constant floor (`p`, or `p0` for the
/// zero output) except on a few segments next to `x_j`: segments `j` and
/// `j + 1` for `|j| >= 2`, segments `-1..=1` for `j = -1`, `0..=2` for
/// `j = 1`, and `0..=1` for `j = 0`. Each entry is the floor plus the
/// integral of the excess over those segments. Fails if the table does not
/// have that shape.
pub fn theta_discrete_analytical(design: &MechanismDesign, d: usize) -> Result<TransitionMatrix> {
    if design.variant() != Variant::Analytical {
        return Err(Error::Estimation(format!(
            "analytical transition matrix needs an analytical design, got {}",
            design.variant()
        )));
    }
    if d == 0 {
        return Err(Error::Estimation("need at least one bin".into()));
    }
    let r = uniform_edges(-1.0, 1.0, d);
    let grid = design.grid();
    let n = grid.half() as i64;
    let xs = design.endpoints();
    // Endpoint `x_k` lives at column `k + n`; segment `k` is `[x_{k-1}, x_k]`.
    let x = |k: i64| xs[(k + n) as usize];
    let mut entries = Vec::with_capacity(design.n_outputs());
    for row in 0..design.n_outputs() {
        let j = grid.signed_index(row);
        let probs = design.table().row(row);
        let p = |k: i64| probs[(k + n) as usize];
        let floor = probs.iter().copied().fold(f64::INFINITY, f64::min);
        let segments: Vec<i64> = match j {
            0 => (0..=1).collect(),
            -1 => (-1..=1).collect(),
            1 => (0..=2).collect(),
            j => (j..=j + 1).collect(),
        };
        let segments: Vec<i64> = segments.into_iter().filter(|&k| k > -n && k <= n).collect();
        for k in (1 - n)..=n {
            if !segments.contains(&k) && ((p(k - 1) - floor).abs() > 1e-12 || (p(k) - floor).abs() > 1e-12) {
                return Err(Error::InvalidDesign(format!(
                    "row {j} leaves its floor on segment {k}; not an analytical band structure"
                )));
            }
        }
        let values = (0..d)
            .map(|i| {
                let (r0, r1) = (r[i], r[i + 1]);
                let excess: f64 = segments
                    .iter()
                    .filter(|&&k| r0 <= x(k) && r1 >= x(k - 1))
                    .map(|&k| {
                        let (a, b) = (x(k - 1).max(r0), x(k).min(r1));
                        if b <= a {
                            return 0.0;
                        }
                        let at = |t: f64| p(k - 1) + (p(k) - p(k - 1)) * (t - x(k - 1)) / (x(k) - x(k - 1));
                        ((at(a) + at(b)) / 2.0 - floor) * (b - a)
                    })
                    .sum();
                floor + excess / (r1 - r0)
            })
            .collect();
        entries.push(values);
    }
    TransitionMatrix::new(r, entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    /// Stop once the log-likelihood changes by at most this much.
    pub tau: f64,
    pub max_iters: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            tau: 1e-5,
            max_iters: 10_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmResult {
    pub histogram: Histogram,
    pub iterations: usize,
    /// Log-likelihood of the starting point and after every iteration.
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
}

/// `sum_j c_j ln(sum_k theta[j][k] pi[k])`.
pub fn log_likelihood(counts: &[u64], theta: &TransitionMatrix, pi: &[f64]) -> f64 {
    counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(j, &c)| c as f64 * mixture(theta.row(j), pi).ln())
        .sum()
}

fn mixture(row: &[f64], pi: &[f64]) -> f64 {
    row.iter().zip(pi).map(|(t, p)| t * p).sum::<f64>().max(PROB_FLOOR)
}

/// One EM step: `G_i = pi_i sum_j c_j theta[j][i] / sum_k theta[j][k] pi_k`,
/// then normalize.
pub fn em_step(counts: &[u64], theta: &TransitionMatrix, pi: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; pi.len()];
    for (j, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let row = theta.row(j);
        let w = c as f64 / mixture(row, pi);
        for (gi, t) in g.iter_mut().zip(row) {
            *gi += w * t;
        }
    }
    for (gi, p) in g.iter_mut().zip(pi) {
        *gi *= p;
    }
    normalized(g)
}

/// Maximum-likelihood histogram by EM from a uniform start.
pub fn em_estimate(counts: &[u64], theta: &TransitionMatrix, config: &EmConfig) -> Result<EmResult> {
    if counts.len() != theta.rows() {
        return Err(Error::Estimation(format!(
            "{} counts for {} output bins",
            counts.len(),
            theta.rows()
        )));
    }
    if !(config.tau > 0.0) {
        return Err(Error::Config("EM tau must be positive".into()));
    }
    if counts.iter().sum::<u64>() == 0 {
        return Err(Error::Estimation("no reports".into()));
    }
    for (j, &c) in counts.iter().enumerate() {
        if c > 0 && theta.row(j).iter().all(|&t| t == 0.0) {
            return Err(Error::Estimation(format!(
                "output bin {j} has reports but zero probability under every input"
            )));
        }
    }
    let d = theta.cols();
    let mut pi = vec![1.0 / d as f64; d];
    let mut lls = vec![log_likelihood(counts, theta, &pi)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iters {
        pi = em_step(counts, theta, &pi);
        iterations += 1;
        let ll = log_likelihood(counts, theta, &pi);
        let change = (ll - lls[lls.len() - 1]).abs();
        lls.push(ll);
        if change <= config.tau {
            converged = true;
            break;
        }
    }
    Ok(EmResult {
        histogram: Histogram::new(theta.input_edges().to_vec(), pi)?,
        iterations,
        log_likelihoods: lls,
        converged,
    })
}

/// Variance of the histogram's distribution with all mass at bin centres.
pub fn variance_from_histogram(hist: &Histogram) -> f64 {
    let centers = hist.centers();
    let mean: f64 = hist.pi().iter().zip(&centers).map(|(p, c)| p * c).sum();
    let second: f64 = hist.pi().iter().zip(&centers).map(|(p, c)| p * c * c).sum();
    (second - mean * mean).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Reports {
    /// Row indices into `outputs`, the design's ascending output grid.
    Discrete { outputs: Vec<f64>, indices: Vec<u8> },
    /// Raw values on the mechanism's output range `[lo, hi]`.
    Continuous { range: (f64, f64), values: Vec<f64> },
}

/// Perturbed reports with the identity of the mechanism that made them.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportBatch {
    pub mechanism: String,
    pub epsilon: f64,
    pub reports: Reports,
}

impl ReportBatch {
    pub fn from_design<R: Rng + ?Sized>(
        mechanism: impl Into<String>,
        design: &MechanismDesign,
        xs: &[f64],
        rng: &mut R,
    ) -> Result<Self> {
        if design.n_outputs() > 256 {
            return Err(Error::InvalidOutputCount(design.n_outputs()));
        }
        let indices = xs
            .iter()
            .map(|&x| design.sample(x, rng).map(|r| r as u8))
            .collect::<Result<_>>()?;
        Ok(Self {
            mechanism: mechanism.into(),
            epsilon: design.epsilon(),
            reports: Reports::Discrete {
                outputs: design.outputs().to_vec(),
                indices,
            },
        })
    }

    pub fn from_pm<R: Rng + ?Sized>(mechanism: impl Into<String>, pm: &PmParams, xs: &[f64], rng: &mut R) -> Result<Self> {
        let values = xs.iter().map(|&x| pm.sample(x, rng)).collect::<Result<_>>()?;
        Ok(Self {
            mechanism: mechanism.into(),
            epsilon: pm.budget.epsilon(),
            reports: Reports::Continuous {
                range: pm.domain(),
                values,
            },
        })
    }

    pub fn len(&self) -> usize {
        match &self.reports {
            Reports::Discrete { indices, .. } => indices.len(),
            Reports::Continuous { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reported values, decoding discrete indices to outputs.
    pub fn values(&self) -> Vec<f64> {
        match &self.reports {
            Reports::Discrete { outputs, indices } => indices.iter().map(|&i| outputs[i as usize]).collect(),
            Reports::Continuous { values, .. } => values.clone(),
        }
    }

    /// Per-output counts for discrete reports.
    pub fn output_counts(&self) -> Result<Vec<u64>> {
        match &self.reports {
            Reports::Discrete { outputs, indices } => {
                let mut counts = vec![0u64; outputs.len()];
                for &i in indices {
                    let slot = counts.get_mut(i as usize).ok_or(Error::IndexOutOfRange {
                        index: i as i64,
                        n_outputs: outputs.len(),
                    })?;
                    *slot += 1;
                }
                Ok(counts)
            }
            Reports::Continuous { .. } => Err(Error::Estimation("continuous reports have no output indices".into())),
        }
    }

    /// Counts over `d_tilde` equal bins of the output range.
    pub fn binned_counts(&self, d_tilde: usize) -> Result<Vec<u64>> {
        match &self.reports {
            Reports::Continuous { range, values } => {
                if d_tilde == 0 {
                    return Err(Error::Estimation("need at least one output bin".into()));
                }
                let edges = uniform_edges(range.0, range.1, d_tilde);
                let mut counts = vec![0u64; d_tilde];
                for &v in values {
                    counts[bin_index(&edges, v)] += 1;
                }
                Ok(counts)
            }
            Reports::Discrete { .. } => self.output_counts(),
        }
    }

    /// CSV with header `mechanism,epsilon,index,value`; `index` is empty
    /// for continuous reports.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["mechanism", "epsilon", "index", "value"])?;
        let eps = self.epsilon.to_string();
        match &self.reports {
            Reports::Discrete { outputs, indices } => {
                for &i in indices {
                    w.write_record([self.mechanism.as_str(), &eps, &i.to_string(), &outputs[i as usize].to_string()])?;
                }
            }
            Reports::Continuous { values, .. } => {
                for v in values {
                    w.write_record([self.mechanism.as_str(), &eps, "", &v.to_string()])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io("<reports>", e))?;
        Ok(())
    }

    /// Reads reports written by [`Self::write_csv`]. Discrete reports need
    /// the generating design to recover the output grid; continuous ones
    /// need the output range.
    pub fn read_csv<R: Read>(input: R, source: ReportSource<'_>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            mechanism: String,
            epsilon: f64,
            index: Option<u8>,
            value: f64,
        }
        let mut mechanism = None;
        let mut epsilon = f64::NAN;
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for row in csv::Reader::from_reader(input).deserialize() {
            let row: Row = row?;
            if mechanism.is_none() {
                mechanism = Some(row.mechanism);
                epsilon = row.epsilon;
            }
            match (&source, row.index) {
                (ReportSource::Design(_), Some(i)) => indices.push(i),
                (ReportSource::Design(_), None) => {
                    return Err(Error::Data("discrete report without an index".into()));
                }
                (ReportSource::Range(..), _) => values.push(row.value),
            }
        }
        let mechanism = mechanism.ok_or_else(|| Error::Data("report file is empty".into()))?;
        let reports = match source {
            ReportSource::Design(design) => {
                if let Some(&bad) = indices.iter().find(|&&i| i as usize >= design.n_outputs()) {
                    return Err(Error::IndexOutOfRange {
                        index: bad as i64,
                        n_outputs: design.n_outputs(),
                    });
                }
                Reports::Discrete {
                    outputs: design.outputs().to_vec(),
                    indices,
                }
            }
            ReportSource::Range(lo, hi) => Reports::Continuous { range: (lo, hi), values },
        };
        Ok(Self {
            mechanism,
            epsilon,
            reports,
        })
    }
}

pub enum ReportSource<'a> {
    Design(&'a MechanismDesign),
    Range(f64, f64),
}

/// Sample mean of the reports, an unbiased estimate of the population mean.
pub fn mean_estimate(batch: &ReportBatch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Estimation("empty report batch".into()));
    }
    let values = batch.values();
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}
