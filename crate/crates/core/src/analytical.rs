//! Closed-form N-output designs.
//!
//! For a given `N` the table is fixed by two scalars: the off-peak
//! probability `p` and the probability `p0` attached to the zero output
//! (odd `N` only). Row `i != 0` puts `e^eps p` on its own endpoint and `p`
//! elsewhere, except that rows `+-1` carry `p*` at the centre column. The
//! outputs then follow one of two recurrences:
//!
//! * [`type0_grid`] equalizes the variance maxima of segments `2..n` and
//!   leaves the first segment below them.
//! * [`type1_grid`] equalizes all segment maxima, which is what remains
//!   when the first segment would otherwise dominate.
//!
//! [`design_analytical`] scans `N = 2, 3, ...`, builds the candidate for
//! each and keeps the one with the smallest true worst-case variance.

use crate::error::{Error, Result};
use crate::mechanism::{
    bits_for_outputs, MechanismDesign, OutputGrid, PrivacyBudget, ProbabilityTable, Variant,
};

/// Upper limit on the output count explored by [`design_analytical`].
pub const MAX_OUTPUTS: usize = 64;
/// Candidates whose worst-case variances agree to this relative tolerance
/// count as tied; the smaller `N` wins.
pub const TIE_REL_TOL: f64 = 1e-9;
const GOLDEN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticalParams {
    pub budget: PrivacyBudget,
    pub n_outputs: usize,
    pub p0: f64,
    pub p: f64,
    pub p_star: f64,
    /// `t = (e^eps - 1) p`, the endpoint scale `x_j = t a_j`.
    pub t: f64,
}

impl AnalyticalParams {
    pub fn half(&self) -> usize {
        self.n_outputs / 2
    }

    pub fn is_odd(&self) -> bool {
        self.n_outputs % 2 == 1
    }

    /// Largest admissible `p0` for odd `N` (where `p0 = p`).
    pub fn p0_max(budget: PrivacyBudget, n_outputs: usize) -> f64 {
        if n_outputs % 2 == 0 {
            0.0
        } else {
            1.0 / (budget.exp() + n_outputs as f64 - 1.0)
        }
    }
}

/// Derives `p`, `p*` and `t` from `(eps, N, p0)`.
pub fn dependent_params(budget: PrivacyBudget, n_outputs: usize, p0: f64) -> Result<AnalyticalParams> {
    if n_outputs < 2 {
        return Err(Error::InvalidOutputCount(n_outputs));
    }
    let odd = n_outputs % 2 == 1;
    let limit = AnalyticalParams::p0_max(budget, n_outputs);
    if !(p0 >= 0.0) || (!odd && p0 != 0.0) || p0 > limit * (1.0 + 1e-12) {
        return Err(Error::InvalidParameters(format!(
            "p0 = {p0} outside [0, {limit}] for N = {n_outputs}"
        )));
    }
    let n = (n_outputs / 2) as f64;
    let e = budget.exp();
    let p = (1.0 - p0) / (e + 2.0 * n - 1.0);
    let p_star = (1.0 - 2.0 * (n - 1.0) * p - e * p0) / 2.0;
    Ok(AnalyticalParams {
        budget,
        n_outputs,
        p0,
        p,
        p_star,
        t: (e - 1.0) * p,
    })
}

/// Integer-free sequences `T`, `Q` driving the type-0 recurrence, indexed
/// `0..=n` (entry 0 unused).
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrenceState {
    pub t_seq: Vec<f64>,
    pub q_seq: Vec<f64>,
}

impl RecurrenceState {
    pub fn new(params: &AnalyticalParams) -> Self {
        let n = params.half();
        let k = 4.0 * params.t - 2.0;
        let mut t_seq = vec![0.0; n + 1];
        let mut q_seq = vec![0.0; n + 1];
        q_seq[n] = 1.0;
        if n >= 1 {
            t_seq[n - 1] = 1.0;
        }
        for i in (1..n.saturating_sub(1)).rev() {
            t_seq[i] = k * t_seq[i + 1] - t_seq[i + 2];
            q_seq[i] = k * q_seq[i + 1] - q_seq[i + 2];
        }
        Self { t_seq, q_seq }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Type0Failure {
    /// `0 < a_1 < ... < a_n` does not hold.
    Ordering,
    /// The first segment's maximum exceeds the last one's.
    Crossover,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Type0Grid {
    /// `a_1, ..., a_n`.
    pub outputs: Vec<f64>,
    pub failure: Option<Type0Failure>,
}

impl Type0Grid {
    pub fn is_valid(&self) -> bool {
        self.failure.is_none()
    }
}

/// Type-0 grid for `N >= 4`.
pub fn type0_grid(params: &AnalyticalParams) -> Result<Type0Grid> {
    if params.n_outputs < 4 {
        return Err(Error::InvalidOutputCount(params.n_outputs));
    }
    let n = params.half();
    let (t, p) = (params.t, params.p);
    let rec = RecurrenceState::new(params);
    let tq: f64 = (1..=n).map(|i| rec.t_seq[i] * rec.q_seq[i]).sum();
    let tt: f64 = (1..=n).map(|i| rec.t_seq[i] * rec.t_seq[i]).sum();
    let mut a = vec![0.0; n + 1];
    a[n] = 1.0 / t;
    a[n - 1] = ((2.0 * t - 1.0) - 8.0 * p * tq) / (1.0 + 8.0 * p * tt) * a[n];
    for j in (1..n - 1).rev() {
        a[j] = (4.0 * t - 2.0) * a[j + 1] - a[j + 2];
    }
    let outputs = a[1..].to_vec();
    let ordered = outputs[0] > 0.0 && outputs.windows(2).all(|w| w[0] < w[1]);
    let failure = if !ordered {
        Some(Type0Failure::Ordering)
    } else if last_vertex_variance(params, &outputs) < first_vertex_variance(params, &outputs) {
        Some(Type0Failure::Crossover)
    } else {
        None
    };
    Ok(Type0Grid { outputs, failure })
}

/// Contraction ratios `C_1, ..., C_{n-1}` with `a_j = C_j a_{j+1}`.
pub fn type1_ratios(budget: PrivacyBudget, n_outputs: usize) -> Result<Vec<f64>> {
    if n_outputs < 4 {
        return Err(Error::InvalidOutputCount(n_outputs));
    }
    let n = n_outputs / 2;
    let e = budget.exp();
    let p = 1.0 / (e + n_outputs as f64 - 1.0);
    let t = (e - 1.0) * p;
    let mut c = Vec::with_capacity(n - 1);
    c.push(if n_outputs % 2 == 0 {
        1.0 / (4.0 * t - 1.0)
    } else {
        1.0 / (4.0 * t - 2.0)
    });
    for _ in 1..n - 1 {
        let prev = *c.last().expect("seeded");
        let d = prev * prev + 2.0 * prev - 4.0 * t * prev;
        let disc = (2.0 * t - 1.0).powi(2) + d;
        if disc < 0.0 {
            return Err(Error::Ordering(format!("type-1 recurrence has no real root at N = {n_outputs}")));
        }
        // Rationalized root of C^2 (4t - 2) ... avoids cancellation near t = 1/2.
        c.push(1.0 / (2.0 * t - 1.0 + disc.sqrt()));
    }
    if c.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
        return Err(Error::Ordering(format!(
            "type-1 ratios leave (0, 1) at N = {n_outputs}: {c:?}"
        )));
    }
    Ok(c)
}

/// Type-1 grid for `N >= 4`, returned with its parameters (`p0 = p` for odd
/// `N`, `0` for even).
pub fn type1_grid(budget: PrivacyBudget, n_outputs: usize) -> Result<(AnalyticalParams, Vec<f64>)> {
    let ratios = type1_ratios(budget, n_outputs)?;
    let p0 = AnalyticalParams::p0_max(budget, n_outputs);
    let params = dependent_params(budget, n_outputs, p0)?;
    let n = params.half();
    let mut a = vec![0.0; n];
    a[n - 1] = 1.0 / params.t;
    for j in (0..n - 1).rev() {
        a[j] = ratios[j] * a[j + 1];
    }
    Ok((params, a))
}

fn sum_squares(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// Variance on segment `j` (`1..=n`, between `x_{j-1}` and `x_j`) of the
/// analytical table with outputs `a_1..a_n`. The quadratic is evaluated for
/// any `x`; [`segment_variance`] adds the domain check.
fn segment_quadratic(params: &AnalyticalParams, a: &[f64], j: usize, x: f64) -> f64 {
    let (p, t) = (params.p, params.t);
    if j == 1 {
        let e = params.budget.exp();
        let slope = a[0] * (e * p + p - 2.0 * params.p_star) / t;
        -x * x + slope * x + 2.0 * a[0] * a[0] * params.p_star + 2.0 * p * sum_squares(&a[1..])
    } else {
        let (lo, hi) = (a[j - 2], a[j - 1]);
        -x * x + (lo + hi) * x - t * lo * hi + 2.0 * p * sum_squares(a)
    }
}

pub fn segment_variance(params: &AnalyticalParams, a: &[f64], j: usize, x: f64) -> Result<f64> {
    let n = params.half();
    if a.len() != n || j == 0 || j > n {
        return Err(Error::InvalidParameters(format!("segment {j} out of range 1..={n}")));
    }
    let lo = if j == 1 { 0.0 } else { params.t * a[j - 2] };
    let hi = params.t * a[j - 1];
    let slack = 1e-12 * hi.abs().max(1.0);
    if x < lo - slack || x > hi + slack {
        return Err(Error::Domain(x));
    }
    Ok(segment_quadratic(params, a, j, x))
}

/// Stationary point of the first segment's variance.
pub fn first_vertex(params: &AnalyticalParams, a: &[f64]) -> f64 {
    let e = params.budget.exp();
    a[0] * (e * params.p + params.p - 2.0 * params.p_star) / (2.0 * params.t)
}

/// Stationary value of the first segment's quadratic (not clamped to the segment).
pub fn first_vertex_variance(params: &AnalyticalParams, a: &[f64]) -> f64 {
    segment_quadratic(params, a, 1, first_vertex(params, a))
}

/// Stationary value of the last segment's quadratic, at `(a_{n-1} + a_n) / 2`.
pub fn last_vertex_variance(params: &AnalyticalParams, a: &[f64]) -> f64 {
    let n = a.len();
    if n == 1 {
        return first_vertex_variance(params, a);
    }
    segment_quadratic(params, a, n, (a[n - 2] + a[n - 1]) / 2.0)
}

/// Builds the full design from parameters and positive outputs.
pub fn materialize(params: &AnalyticalParams, a: &[f64]) -> Result<MechanismDesign> {
    let n_out = params.n_outputs;
    let grid = OutputGrid::from_positive(a, n_out)?;
    let n = params.half() as i64;
    let e = params.budget.exp();
    let rows = (0..n_out)
        .map(|r| {
            let i = grid.signed_index(r);
            (-n..=n)
                .map(|j| {
                    if i == 0 {
                        if j == 0 {
                            e * params.p0
                        } else {
                            params.p0
                        }
                    } else if i == j {
                        e * params.p
                    } else if i.abs() == 1 && j == 0 {
                        params.p_star
                    } else {
                        params.p
                    }
                })
                .collect()
        })
        .collect();
    let table = ProbabilityTable::new(rows)?;
    let design = MechanismDesign::new(Variant::Analytical, params.budget, grid, table)?;
    let wc = design.worst_case_variance();
    Ok(design.with_objective(wc))
}

fn golden_section(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > GOLDEN_TOL {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = f(d);
        }
    }
    (lo + hi) / 2.0
}

/// Zero-output probability for odd `N`.
///
/// For `N = 3` this minimizes the first segment's peak variance. For odd
/// `N >= 5` it brings the first and last segment peaks of the type-0 grid
/// as close as possible: the last peak grows with `p0` while the first one
/// shrinks, so the minimizer is their crossing when one exists in
/// `[0, p]`, and an end of the interval otherwise.
pub fn optimize_p0(budget: PrivacyBudget, n_outputs: usize) -> Result<f64> {
    if n_outputs % 2 == 0 || n_outputs < 3 {
        return Err(Error::InvalidOutputCount(n_outputs));
    }
    let hi = AnalyticalParams::p0_max(budget, n_outputs);
    let objective = |p0: f64| -> f64 {
        let Ok(params) = dependent_params(budget, n_outputs, p0) else {
            return f64::INFINITY;
        };
        if n_outputs == 3 {
            return first_vertex_variance(&params, &[1.0 / params.t]);
        }
        match type0_grid(&params) {
            Ok(g) => (last_vertex_variance(&params, &g.outputs) - first_vertex_variance(&params, &g.outputs)).abs(),
            Err(_) => f64::INFINITY,
        }
    };
    Ok(golden_section(0.0, hi, objective))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    /// `N = 2` or `N = 3`, where `a_1 = 1 / t` is forced.
    ClosedForm,
    Type0,
    Type1,
}

#[derive(Debug, Clone)]
pub struct Candidate {
    pub n_outputs: usize,
    pub kind: GridKind,
    pub params: AnalyticalParams,
    pub design: MechanismDesign,
    pub worst_case_variance: f64,
}

/// Best analytical design for a fixed `N`, or `None` when no grid with
/// strictly increasing outputs exists.
pub fn design_for_n(budget: PrivacyBudget, n_outputs: usize) -> Result<Option<Candidate>> {
    let build = |kind, params: AnalyticalParams, a: &[f64]| -> Result<Candidate> {
        let design = materialize(&params, a)?;
        Ok(Candidate {
            n_outputs,
            kind,
            params,
            worst_case_variance: design.objective_value(),
            design,
        })
    };
    match n_outputs {
        0 | 1 => Err(Error::InvalidOutputCount(n_outputs)),
        2 => {
            let params = dependent_params(budget, 2, 0.0)?;
            build(GridKind::ClosedForm, params, &[1.0 / params.t]).map(Some)
        }
        3 => {
            let p0 = optimize_p0(budget, 3)?;
            let params = dependent_params(budget, 3, p0)?;
            build(GridKind::ClosedForm, params, &[1.0 / params.t]).map(Some)
        }
        _ => {
            let full = dependent_params(budget, n_outputs, AnalyticalParams::p0_max(budget, n_outputs))?;
            let probe = type0_grid(&full)?;
            match probe.failure {
                Some(Type0Failure::Ordering) => Ok(None),
                None => {
                    if n_outputs % 2 == 0 {
                        return build(GridKind::Type0, full, &probe.outputs).map(Some);
                    }
                    let p0 = optimize_p0(budget, n_outputs)?;
                    let params = dependent_params(budget, n_outputs, p0)?;
                    let grid = type0_grid(&params)?;
                    if grid.failure == Some(Type0Failure::Ordering) {
                        return build(GridKind::Type0, full, &probe.outputs).map(Some);
                    }
                    build(GridKind::Type0, params, &grid.outputs).map(Some)
                }
                Some(Type0Failure::Crossover) => match type1_grid(budget, n_outputs) {
                    Ok((params, a)) => build(GridKind::Type1, params, &a).map(Some),
                    Err(Error::Ordering(_)) => Ok(None),
                    Err(e) => Err(e),
                },
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnalyticalDesign {
    pub selected: Candidate,
    /// `(N, worst-case variance)` of every candidate examined.
    pub scanned: Vec<(usize, f64)>,
}

impl AnalyticalDesign {
    pub fn design(&self) -> &MechanismDesign {
        &self.selected.design
    }

    pub fn n_outputs(&self) -> usize {
        self.selected.n_outputs
    }
}

/// Scans `N = 2, 3, ...` and returns the candidate with the smallest
/// worst-case variance. The scan stops once the type-0 grid loses its
/// ordering, which happens for every larger `N` as well.
pub fn design_analytical(budget: PrivacyBudget) -> Result<AnalyticalDesign> {
    let mut best: Option<Candidate> = None;
    let mut scanned = Vec::new();
    for n_outputs in 2..=MAX_OUTPUTS {
        let Some(cand) = design_for_n(budget, n_outputs)? else {
            break;
        };
        scanned.push((n_outputs, cand.worst_case_variance));
        let better = match &best {
            None => true,
            Some(b) => cand.worst_case_variance < b.worst_case_variance * (1.0 - TIE_REL_TOL),
        };
        if better {
            best = Some(cand);
        }
    }
    let selected = best.ok_or_else(|| Error::Infeasible("no analytical candidate".into()))?;
    Ok(AnalyticalDesign { selected, scanned })
}

/// Worst-case variance floor of any N-output design as `eps` grows.
pub fn variance_lower_bound(n_outputs: usize) -> f64 {
    let k = n_outputs as f64 - 1.0;
    1.0 / (k * k)
}

/// Bits per report for the analytically selected output count.
pub fn bits_required(budget: PrivacyBudget) -> Result<u32> {
    Ok(bits_for_outputs(design_analytical(budget)?.n_outputs()))
}
