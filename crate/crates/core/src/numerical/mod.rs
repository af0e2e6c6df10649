//! Numerically optimized N-output designs.
//!
//! For fixed `(eps, N)` the outputs and table are found by sequential least
//! squares programming over the symmetric half of the design. The
//! worst-case objective is solved in epigraph form (minimize `tau` subject
//! to every segment's peak variance being at most `tau`); the average
//! objective is the exact integral of the variance over `[-1, 1]`.

mod layout;
mod problem;

use std::cell::{Cell, RefCell};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use slsqp::{minimize, Func, StopTols};

pub use layout::{init_from_pm_sub, DecisionVector, Layout};
use problem::{Evaluation, Moments, Problem};

use crate::analytical::design_for_n;
use crate::error::{Error, Result};
use crate::mechanism::{MechanismDesign, OutputGrid, PrivacyBudget, ProbabilityTable, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    Worst,
    Avg,
}

impl Objective {
    pub fn variant(&self) -> Variant {
        match self {
            Objective::Worst => Variant::NumericalWorst,
            Objective::Avg => Variant::NumericalAvg,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Objective::Worst => "worst",
            Objective::Avg => "avg",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "worst" => Ok(Objective::Worst),
            "avg" => Ok(Objective::Avg),
            other => Err(Error::Config(format!("unknown objective {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub objective: Objective,
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    /// Budget of objective evaluations per start.
    pub max_iters: usize,
    /// Starts from the discretized PM-sub point plus `multistart_count - 1`
    /// jittered copies.
    pub multistart_count: usize,
    /// Relative jitter applied to the extra starts.
    pub jitter: f64,
    /// Gap enforced between consecutive outputs and endpoints.
    pub strictness: f64,
    /// Also start from the closed-form design with the same `N` when one exists.
    pub analytical_start: bool,
    /// Relative improvement needed for a larger `N` to win in [`select_n`].
    pub selection_tol: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Worst,
            feasibility_tol: 1e-9,
            optimality_tol: 1e-9,
            max_iters: 2000,
            multistart_count: 8,
            jitter: 0.05,
            strictness: 1e-6,
            analytical_start: true,
            selection_tol: 1e-6,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn with_objective(objective: Objective) -> Self {
        Self {
            objective,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.feasibility_tol > 0.0 && self.optimality_tol > 0.0 && self.strictness > 0.0) {
            return Err(Error::Config("solver tolerances must be positive".into()));
        }
        if self.multistart_count == 0 || self.max_iters == 0 {
            return Err(Error::Config("need at least one start and one iteration".into()));
        }
        Ok(())
    }
}

/// Worst-case variance of a decision vector, from the segment peaks of its
/// non-negative half.
pub fn worst_objective(v: &DecisionVector, budget: PrivacyBudget) -> Result<f64> {
    v.decode(budget, Variant::NumericalWorst)?;
    Ok(Moments::new(&v.layout(), v.values(), false).worst())
}

/// The reduced average objective: the exact integral of `E[Y^2 | x]`
/// over `[-1, 1]`, i.e. `4 * average variance + 4 / 3`.
pub fn avg_objective(v: &DecisionVector, budget: PrivacyBudget) -> Result<f64> {
    v.decode(budget, Variant::NumericalAvg)?;
    Ok(Moments::new(&v.layout(), v.values(), false).reduced_sum(false).0)
}

#[derive(Debug, Clone)]
pub struct StartOutcome {
    pub start: usize,
    pub objective: f64,
    pub violation: f64,
    pub design: Option<MechanismDesign>,
}

fn starting_points(budget: PrivacyBudget, n_outputs: usize, config: &SolverConfig) -> Result<Vec<DecisionVector>> {
    let base = init_from_pm_sub(budget, n_outputs)?;
    let mut starts = Vec::with_capacity(config.multistart_count + 1);
    let mut first = base.clone();
    layout::repair(&mut first)?;
    starts.push(first);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (n_outputs as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    for _ in 1..config.multistart_count {
        let values = base
            .values()
            .iter()
            .map(|v| v * (1.0 + config.jitter * rng.gen_range(-1.0..=1.0)))
            .collect();
        let mut v = DecisionVector::new(base.layout(), values)?;
        let n = v.layout().half();
        let a = v.positive_outputs().to_vec();
        if a[0] > 0.0 && a.windows(2).all(|w| w[0] < w[1]) && n > 0 {
            layout::repair(&mut v)?;
            starts.push(v);
        }
    }
    if config.analytical_start {
        if let Some(cand) = design_for_n(budget, n_outputs)? {
            starts.push(DecisionVector::from_design(&cand.design)?);
        }
    }
    Ok(starts)
}

/// Evaluations per solver call. The solver's own stopping tests only fire
/// at points it deems exactly feasible, which round-off rarely allows once
/// constraints are active, so runs are chunked and stopped here instead.
const CHUNK_EVALS: usize = 200;

fn run_start(problem: &Problem, z0: Vec<f64>, config: &SolverConfig) -> Vec<f64> {
    let bounds = problem.bounds();
    let mut z: Vec<f64> = z0
        .iter()
        .zip(&bounds)
        .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
        .collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut spent = 0;
    while spent < config.max_iters {
        let budget = CHUNK_EVALS.min(config.max_iters - spent);
        let (found, used) = run_chunk(problem, &z, &bounds, config, budget);
        spent += used;
        let Some((value, zc)) = found else { break };
        let improved = best
            .as_ref()
            .map_or(true, |(b, _)| value < b - config.optimality_tol * b.abs().max(1.0));
        let stalled = best.is_some() && !improved;
        if best.as_ref().map_or(true, |(b, _)| value < *b) {
            best = Some((value, zc.clone()));
        }
        if stalled || used < budget {
            break;
        }
        z = zc;
    }
    best.map_or(z, |(_, z)| z)
}

/// One solver call. Returns the best point seen whose violation is within
/// `feasibility_tol`, and the number of evaluations used.
fn run_chunk(
    problem: &Problem,
    z0: &[f64],
    bounds: &[(f64, f64)],
    config: &SolverConfig,
    max_evals: usize,
) -> (Option<(f64, Vec<f64>)>, usize) {
    let cache: RefCell<Option<(Vec<f64>, Evaluation)>> = RefCell::new(None);
    let best: RefCell<Option<(f64, Vec<f64>)>> = RefCell::new(None);
    let evals = Cell::new(0);
    let with_eval = |z: &[f64], f: &mut dyn FnMut(&Evaluation)| {
        let mut slot = cache.borrow_mut();
        let stale = slot.as_ref().map_or(true, |(zc, _)| zc.as_slice() != z);
        if stale {
            let ev = problem.evaluate(z);
            evals.set(evals.get() + 1);
            let (value, violation) = problem.assess(z, &ev);
            let mut b = best.borrow_mut();
            if violation <= config.feasibility_tol && b.as_ref().map_or(true, |(bv, _)| value < *bv) {
                *b = Some((value, z.to_vec()));
            }
            *slot = Some((z.to_vec(), ev));
        }
        f(&slot.as_ref().expect("filled").1);
    };
    let objective = |z: &[f64], mut grad: Option<&mut [f64]>, _: &mut ()| -> f64 {
        let mut out = 0.0;
        with_eval(z, &mut |ev| {
            out = ev.objective;
            if let Some(g) = grad.as_deref_mut() {
                g.copy_from_slice(&ev.objective_grad);
            }
        });
        out
    };
    // A slack well inside `feasibility_tol` keeps round-off on active
    // constraints from making every iterate look infeasible to the solver.
    let slack = 0.01 * config.feasibility_tol;
    let constraints: Vec<_> = (0..problem.n_constraints())
        .map(|k| {
            let with_eval = &with_eval;
            move |z: &[f64], grad: Option<&mut [f64]>, _: &mut ()| -> f64 {
                let mut out = 0.0;
                let mut grad = grad;
                with_eval(z, &mut |ev| {
                    out = ev.constraints[k] - slack;
                    if let Some(g) = grad.as_deref_mut() {
                        g.copy_from_slice(&ev.constraint_grads[k]);
                    }
                });
                out
            }
        })
        .collect();
    // The solver's constraint callback reuses the objective's type, so both
    // must be passed as the same trait-object type.
    let objective_ref: &dyn Func<()> = &objective;
    let cons: Vec<&dyn Func<()>> = constraints.iter().map(|c| c as &dyn Func<()>).collect();
    let tols = StopTols {
        ftol_rel: config.optimality_tol,
        ftol_abs: 0.0,
        xtol_rel: 0.0,
        xtol_abs: Vec::new(),
    };
    let last = match minimize(objective_ref, z0, bounds, &cons, (), max_evals, Some(tols)) {
        Ok((_, z, _)) | Err((_, z, _)) => z,
    };
    let used = evals.get();
    let found = best.into_inner().or_else(|| {
        let (value, violation) = problem.assess(&last, &problem.evaluate(&last));
        (violation <= config.feasibility_tol).then_some((value, last))
    });
    (found, used)
}

fn finish(
    problem: &Problem,
    layout: Layout,
    budget: PrivacyBudget,
    config: &SolverConfig,
    start: usize,
    z: &[f64],
) -> StartOutcome {
    let violation = problem.max_violation(z);
    let (w, _) = problem.expand(z);
    let design = DecisionVector::new(layout, w)
        .and_then(|v| v.decode(budget, config.objective.variant()))
        .ok()
        .filter(|_| violation <= config.feasibility_tol)
        .and_then(|d| enforce_ldp(d).ok())
        .map(|d| {
            let value = match config.objective {
                Objective::Worst => d.worst_case_variance(),
                Objective::Avg => d.average_variance(),
            };
            d.with_objective(value)
        });
    StartOutcome {
        start,
        objective: design.as_ref().map_or(f64::INFINITY, |d| d.objective_value()),
        violation,
        design,
    }
}

/// Removes the solver's residual constraint violations so the emitted
/// table satisfies the privacy ratio and nonnegativity exactly.
///
/// Mixing a fraction `lambda` of the input-independent uniform report
/// distribution into every column lifts each row minimum by `lambda / N`,
/// which absorbs a ratio excess of order `lambda (e^eps - 1) / N`. The
/// uniform part has mean zero on a symmetric grid, so dividing the outputs
/// by `1 - lambda` restores unbiasedness at the same endpoints.
pub fn enforce_ldp(design: MechanismDesign) -> Result<MechanismDesign> {
    let e = design.budget().exp();
    let rows = design.table().to_rows();
    let n_out = rows.len() as f64;
    let excess = rows.iter().fold(0.0f64, |acc, row| {
        let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
        acc.max(hi - e * lo).max(-lo)
    });
    if excess <= 0.0 {
        return Ok(design);
    }
    let mut t = 2.0 * n_out * excess / (e - 1.0).min(1.0);
    for _ in 0..60 {
        let lambda = t / (1.0 + t);
        let mixed: Vec<Vec<f64>> = rows
            .iter()
            .map(|row| row.iter().map(|p| (1.0 - lambda) * p + lambda / n_out).collect())
            .collect();
        let table = ProbabilityTable::new(mixed)?;
        if table.max_ldp_ratio() <= e && table.verify_validity(1e-12).min_entry >= 0.0 {
            let grid = OutputGrid::new(design.outputs().iter().map(|a| a / (1.0 - lambda)).collect())?;
            return MechanismDesign::new(design.variant(), design.budget(), grid, table);
        }
        t *= 2.0;
    }
    Err(Error::InvalidDesign("could not restore the privacy ratio".into()))
}

/// Runs every start and reports each outcome, in start order.
pub fn solve_all_starts(budget: PrivacyBudget, n_outputs: usize, config: &SolverConfig) -> Result<Vec<StartOutcome>> {
    config.validate()?;
    let layout = Layout::new(n_outputs)?;
    let problem = Problem::new(layout, budget.exp(), config.strictness, config.objective);
    let starts = starting_points(budget, n_outputs, config)?;
    Ok(starts
        .into_par_iter()
        .enumerate()
        .map(|(k, v)| {
            let z = run_start(&problem, problem.to_z(&v), config);
            finish(&problem, layout, budget, config, k, &z)
        })
        .collect())
}

/// Best feasible design for a fixed `N`.
pub fn solve(budget: PrivacyBudget, n_outputs: usize, config: &SolverConfig) -> Result<MechanismDesign> {
    let outcomes = solve_all_starts(budget, n_outputs, config)?;
    let best_violation = outcomes.iter().map(|o| o.violation).fold(f64::INFINITY, f64::min);
    outcomes
        .into_iter()
        .filter_map(|o| o.design.map(|d| (o.objective, o.start, d)))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, _, d)| d)
        .ok_or_else(|| Error::Solver {
            n_outputs,
            reason: format!("no feasible start; best constraint violation {best_violation:.3e}"),
        })
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub design: MechanismDesign,
    /// Every design that solved, in increasing `N`.
    pub solved: Vec<MechanismDesign>,
    /// `(N, reason)` for every `N` that failed.
    pub skipped: Vec<(usize, String)>,
}

/// Solves `N = 2..=n_max` and keeps the design with the lowest objective.
/// A larger `N` must improve on the incumbent by more than
/// `config.selection_tol` (relative) to replace it.
pub fn select_n(budget: PrivacyBudget, config: &SolverConfig, n_max: usize) -> Result<Selection> {
    if n_max < 2 {
        return Err(Error::InvalidOutputCount(n_max));
    }
    let results: Vec<(usize, Result<MechanismDesign>)> = (2..=n_max)
        .into_par_iter()
        .map(|n_out| (n_out, solve(budget, n_out, config)))
        .collect();
    let mut best: Option<MechanismDesign> = None;
    let mut solved = Vec::new();
    let mut skipped = Vec::new();
    for (n_out, res) in results {
        match res {
            Ok(d) => {
                let better = best
                    .as_ref()
                    .map_or(true, |b| d.objective_value() < b.objective_value() * (1.0 - config.selection_tol));
                if better {
                    best = Some(d.clone());
                }
                solved.push(d);
            }
            Err(e) => skipped.push((n_out, e.to_string())),
        }
    }
    let design = best.ok_or_else(|| Error::Infeasible(format!("every N failed: {skipped:?}")))?;
    Ok(Selection {
        design,
        solved,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::duchi_design;

    fn budget(eps: f64) -> PrivacyBudget {
        PrivacyBudget::new(eps).unwrap()
    }

    #[test]
    fn layout_indices_are_a_bijection() {
        for n_out in 2..=9 {
            let layout = Layout::new(n_out).unwrap();
            let n = layout.half() as i64;
            let mut seen = vec![0usize; layout.len()];
            for k in 1..=layout.half() {
                seen[layout.a_index(k)] += 1;
            }
            for i in layout.rows() {
                for j in 0..=n {
                    if j == 0 && i < 0 {
                        continue;
                    }
                    seen[layout.p_index(i, j)] += 1;
                }
            }
            assert!(seen.iter().all(|&c| c == 1), "N {n_out}: {seen:?}");
            for i in layout.rows() {
                for j in -n..=n {
                    assert_eq!(layout.p_index(i, j), layout.p_index(-i, -j));
                }
            }
        }
    }

    #[test]
    fn duchi_encoding_objectives() {
        let b = budget(3f64.ln());
        let v = DecisionVector::from_design(&duchi_design(b)).unwrap();
        assert!((worst_objective(&v, b).unwrap() - 4.0).abs() < 1e-12);
        let decoded = v.decode(b, Variant::Duchi).unwrap();
        assert!((decoded.average_variance() - 11.0 / 3.0).abs() < 1e-12);
        let s = avg_objective(&v, b).unwrap();
        assert!((s / 4.0 - 1.0 / 3.0 - 11.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn pm_sub_init_properties() {
        let v = init_from_pm_sub(budget(4f64.ln()), 2).unwrap();
        assert!((v.positive_outputs()[0] - 1.5).abs() < 0.1);
        for (eps, n_out) in [(0.5, 2), (1.0, 5), (3.0, 8), (5.0, 16)] {
            let b = budget(eps);
            let v = init_from_pm_sub(b, n_out).unwrap();
            let layout = v.layout();
            let n = layout.half() as i64;
            for j in -n..=n {
                let s: f64 = layout.rows().map(|i| v.p(i, j)).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
            for i in layout.rows() {
                let row: Vec<f64> = (-n..=n).map(|j| v.p(i, j)).collect();
                let hi = row.iter().copied().fold(f64::MIN, f64::max);
                let lo = row.iter().copied().fold(f64::MAX, f64::min);
                assert!(hi / lo <= b.exp() * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn worst_objective_matches_dense_grid() {
        let b = budget(4.5);
        let d = crate::analytical::design_for_n(b, 6).unwrap().unwrap().design;
        let v = DecisionVector::from_design(&d).unwrap();
        let dense = (0..=100_000)
            .map(|k| d.noise_variance(-1.0 + k as f64 / 50_000.0).unwrap())
            .fold(f64::MIN, f64::max);
        let wc = worst_objective(&v, b).unwrap();
        assert!((wc - dense).abs() < 1e-6);
        assert!((wc - d.worst_case_variance()).abs() < 1e-12);
    }

    #[test]
    fn two_outputs_recover_duchi() {
        let b = budget(3f64.ln());
        let d = solve(b, 2, &SolverConfig::default()).unwrap();
        assert!((d.worst_case_variance() - 4.0).abs() < 1e-6);
    }

    #[test]
    fn five_outputs_at_eps_one() {
        let d = solve(budget(1.0), 5, &SolverConfig::default()).unwrap();
        let a = d.grid().positive();
        assert!((a[0] - 1.87).abs() < 0.15, "{a:?}");
        assert!((a[1] - 2.57).abs() < 0.15, "{a:?}");
        assert!(d.verify_ldp(1e-8).ok);
        assert!(d.verify_validity(1e-8).ok);
    }

    #[test]
    fn ldp_repair_is_exact_and_small() {
        let base = crate::analytical::design_for_n(budget(3.0), 4).unwrap().unwrap().design;
        let tight = budget(3.0 - 1e-7);
        let broken = MechanismDesign::new(Variant::NumericalWorst, tight, base.grid().clone(), base.table().clone()).unwrap();
        assert!(broken.table().max_ldp_ratio() > tight.exp());
        let fixed = enforce_ldp(broken).unwrap();
        assert!(fixed.table().max_ldp_ratio() <= tight.exp());
        for k in 0..=20 {
            let x = -1.0 + k as f64 / 10.0;
            assert!((fixed.expected_value(x).unwrap() - x).abs() < 1e-12);
        }
        for (a, b) in fixed.endpoints().iter().zip(base.endpoints()) {
            assert!((a - b).abs() < 1e-14);
        }
        let change = fixed.worst_case_variance() / base.worst_case_variance() - 1.0;
        assert!(change > 0.0 && change < 1e-5, "{change}");
        let ok = enforce_ldp(base.clone()).unwrap();
        assert_eq!(ok.table(), base.table());
    }

    #[test]
    fn solve_is_deterministic() {
        let cfg = SolverConfig::default();
        let d1 = solve(budget(2.0), 4, &cfg).unwrap();
        let d2 = solve(budget(2.0), 4, &cfg).unwrap();
        assert_eq!(d1.to_file(), d2.to_file());
    }
}
