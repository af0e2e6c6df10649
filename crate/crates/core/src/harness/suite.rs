//! Mechanism resolution and the benchmark suites.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::cache::{config_hash, CacheKey, DesignCache};
use super::config::{DataSource, ExperimentConfig, MechanismId, Suite};
use super::data::{ingest_csv, sample_clients, synthetic, Dataset};
use super::derive_seed;
use crate::analytical::{design_analytical, design_for_n};
use crate::baselines::{duchi_design, CategoricalParams, CategoricalScheme, PmParams};
use crate::error::{Error, Result};
use crate::estimation::{
    em_estimate, mean_estimate, theta_continuous, theta_discrete, variance_from_histogram, EmConfig, Histogram,
    ReportBatch, TransitionMatrix,
};
use crate::mechanism::{bits_for_outputs, MechanismDesign, PrivacyBudget};
use crate::metrics::{mean_std, rmse, wasserstein, worst_case_grid, worst_case_rmse, MeanMechanism, Task, TrialResult};
use crate::numerical::{select_n, Objective};

/// A mechanism ready to perturb data at one budget.
#[derive(Debug, Clone)]
pub enum Mechanism {
    Discrete(MechanismDesign),
    Piecewise(PmParams),
    Categorical(CategoricalParams),
}

impl Mechanism {
    /// Bits sent per report. Continuous values are charged a 64-bit float.
    pub fn bits(&self) -> u32 {
        match self {
            Mechanism::Discrete(d) => d.bits_per_report(),
            Mechanism::Piecewise(_) => 64,
            Mechanism::Categorical(c) => match c.scheme {
                CategoricalScheme::De => bits_for_outputs(c.d),
                CategoricalScheme::Oue => c.d as u32,
            },
        }
    }

    fn mean_mechanism(&self) -> Option<&dyn MeanMechanism> {
        match self {
            Mechanism::Discrete(d) => Some(d),
            Mechanism::Piecewise(p) => Some(p),
            Mechanism::Categorical(_) => None,
        }
    }
}

/// Builds (or loads from the cache) the mechanism `id` at budget `eps`.
pub fn resolve_mechanism(id: MechanismId, eps: f64, config: &ExperimentConfig, cache: &DesignCache) -> Result<Mechanism> {
    let budget = PrivacyBudget::new(eps)?;
    Ok(match id {
        MechanismId::Duchi => Mechanism::Discrete(duchi_design(budget)),
        MechanismId::ThreeOutput => Mechanism::Discrete(
            design_for_n(budget, 3)?
                .ok_or_else(|| Error::Infeasible(format!("no three-output design at eps {eps}")))?
                .design,
        ),
        MechanismId::Analytical => Mechanism::Discrete(design_analytical(budget)?.design().clone()),
        MechanismId::NumericalWorst | MechanismId::NumericalAvg => {
            let objective = if id == MechanismId::NumericalWorst {
                Objective::Worst
            } else {
                Objective::Avg
            };
            let solver = crate::numerical::SolverConfig {
                objective,
                ..config.solver.clone()
            };
            let key = CacheKey {
                variant: objective.variant().as_str().into(),
                objective: objective.as_str().into(),
                epsilon: eps,
                n_max: config.n_max,
                config_hash: config_hash(&solver),
            };
            Mechanism::Discrete(cache.get_or_compute(&key, || Ok(select_n(budget, &solver, config.n_max)?.design))?)
        }
        MechanismId::Pm => Mechanism::Piecewise(PmParams::standard(budget)),
        MechanismId::PmSub => Mechanism::Piecewise(PmParams::sub(budget)),
        MechanismId::De => Mechanism::Categorical(CategoricalParams::new(budget, CategoricalScheme::De, config.bins)?),
        MechanismId::Oue => Mechanism::Categorical(CategoricalParams::new(budget, CategoricalScheme::Oue, config.bins)?),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub mechanism: String,
    pub epsilon: f64,
    pub task: Task,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
    pub seed0: u64,
    pub bits: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub suite: Suite,
    pub mechanism: String,
    pub epsilon: f64,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct SuiteReport {
    pub trials: Vec<(String, TrialResult)>,
    pub summaries: Vec<SummaryRow>,
    pub failures: Vec<Failure>,
}

impl SuiteReport {
    /// Writes `trials.csv`, `summary.csv` and `failures.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut w = csv::Writer::from_path(dir.join("trials.csv"))?;
        w.write_record(["mechanism", "epsilon", "task", "metric", "value", "seed", "trial"])?;
        for (metric, t) in &self.trials {
            w.write_record([
                t.mechanism.clone(),
                t.epsilon.to_string(),
                t.task.as_str().into(),
                metric.clone(),
                t.value.to_string(),
                t.seed.to_string(),
                t.trial.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(dir, e))?;
        let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
        w.write_record(["mechanism", "epsilon", "task", "metric", "mean", "std", "trials", "seed0", "bits"])?;
        for s in &self.summaries {
            w.write_record([
                s.mechanism.clone(),
                s.epsilon.to_string(),
                s.task.as_str().into(),
                s.metric.clone(),
                s.mean.to_string(),
                s.std.to_string(),
                s.trials.to_string(),
                s.seed0.to_string(),
                s.bits.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(dir, e))?;
        let mut w = csv::Writer::from_path(dir.join("failures.csv"))?;
        w.write_record(["suite", "mechanism", "epsilon", "error"])?;
        for f in &self.failures {
            w.write_record([f.suite.as_str(), &f.mechanism, &f.epsilon.to_string(), &f.error])?;
        }
        w.flush().map_err(|e| Error::io(dir, e))?;
        Ok(())
    }
}

/// Client values for one trial, plus the data source they came from.
enum Population {
    Synthetic(crate::harness::SyntheticDist),
    Dataset(Dataset),
}

impl Population {
    fn load(source: &DataSource) -> Result<Self> {
        Ok(match source {
            DataSource::Synthetic { dist } => Population::Synthetic(*dist),
            DataSource::Csv { path, columns } => Population::Dataset(ingest_csv(path, columns)?),
        })
    }

    fn default_users(&self) -> usize {
        match self {
            Population::Synthetic(_) => 100_000,
            Population::Dataset(d) => d.rows(),
        }
    }

    fn draw(&self, m: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        match self {
            Population::Synthetic(dist) => synthetic(*dist, m, rng),
            Population::Dataset(d) => sample_clients(d, m, rng),
        }
    }
}

struct Cell<'a> {
    suite: Suite,
    id: MechanismId,
    eps: f64,
    mechanism: &'a Mechanism,
}

struct CellOutput {
    trials: Vec<(String, TrialResult)>,
    summaries: Vec<SummaryRow>,
}

/// Runs every requested (suite, mechanism, budget) cell. Cells that fail
/// are recorded in the report's failure list rather than aborting the run.
/// Output order follows the configuration, independent of scheduling.
pub fn run_suite(config: &ExperimentConfig, cache: &DesignCache) -> Result<SuiteReport> {
    config.validate()?;
    let needs_data = config
        .suites
        .iter()
        .any(|s| matches!(s, Suite::Mean | Suite::Distribution | Suite::Variance));
    let population = if needs_data {
        Some(Population::load(&config.data)?)
    } else {
        None
    };
    let users = config
        .users
        .unwrap_or_else(|| population.as_ref().map_or(100_000, Population::default_users));

    let pairs: Vec<(MechanismId, f64)> = config
        .mechanisms
        .iter()
        .flat_map(|&id| config.epsilons.iter().map(move |&e| (id, e)))
        .filter(|(id, _)| config.suites.iter().any(|s| id.supports(*s)))
        .collect();
    // Numerical designs parallelize internally, so resolve them one by one.
    let resolved: Vec<Result<Mechanism>> = pairs
        .iter()
        .map(|&(id, eps)| resolve_mechanism(id, eps, config, cache))
        .collect();

    let mut report = SuiteReport::default();
    let mut cells = Vec::new();
    for &suite in &config.suites {
        for ((id, eps), mech) in pairs.iter().zip(&resolved) {
            if !id.supports(suite) {
                continue;
            }
            match mech {
                Ok(m) => cells.push(Cell {
                    suite,
                    id: *id,
                    eps: *eps,
                    mechanism: m,
                }),
                Err(e) => report.failures.push(Failure {
                    suite,
                    mechanism: id.as_str().into(),
                    epsilon: *eps,
                    error: e.to_string(),
                }),
            }
        }
    }
    let outputs: Vec<Result<CellOutput>> = cells
        .par_iter()
        .map(|cell| run_cell(cell, config, users, population.as_ref()))
        .collect();
    for (cell, out) in cells.iter().zip(outputs) {
        match out {
            Ok(o) => {
                report.trials.extend(o.trials);
                report.summaries.extend(o.summaries);
            }
            Err(e) => report.failures.push(Failure {
                suite: cell.suite,
                mechanism: cell.id.as_str().into(),
                epsilon: cell.eps,
                error: e.to_string(),
            }),
        }
    }
    Ok(report)
}

fn trial_seed(config: &ExperimentConfig, cell: &Cell<'_>, trial: usize) -> u64 {
    derive_seed(
        config.seed,
        &[
            cell.suite.as_str(),
            cell.id.as_str(),
            &format!("{:016x}", cell.eps.to_bits()),
            &trial.to_string(),
        ],
    )
}

fn run_cell(cell: &Cell<'_>, config: &ExperimentConfig, users: usize, population: Option<&Population>) -> Result<CellOutput> {
    let name = cell.id.as_str().to_string();
    let bits = cell.mechanism.bits();
    let seed0 = trial_seed(config, cell, 0);
    let row = |task: Task, metric: &str, mean: f64, std: f64, trials: usize| SummaryRow {
        mechanism: name.clone(),
        epsilon: cell.eps,
        task,
        metric: metric.into(),
        mean,
        std,
        trials,
        seed0,
        bits,
    };
    let trial = |task: Task, value: f64, seed: u64, t: usize| TrialResult {
        mechanism: name.clone(),
        epsilon: cell.eps,
        task,
        value,
        seed,
        trial: t,
    };
    match cell.suite {
        Suite::Theory => {
            let value = match cell.mechanism {
                Mechanism::Discrete(d) => d.worst_case_variance(),
                Mechanism::Piecewise(p) => p.dense_worst_case_variance(config.pm_grid_points),
                Mechanism::Categorical(_) => unreachable!("filtered by supports"),
            };
            Ok(CellOutput {
                trials: vec![("worst_case_variance".into(), trial(Task::Worstcase, value, 0, 0))],
                summaries: vec![row(Task::Worstcase, "worst_case_variance", value, 0.0, 1)],
            })
        }
        Suite::Worstcase => {
            let mech = cell.mechanism.mean_mechanism().expect("filtered by supports");
            let grid = worst_case_grid(mech, config.worst_case_points);
            let out = worst_case_rmse(mech, users, config.trials, &grid, seed0)?;
            Ok(CellOutput {
                trials: vec![("worst_case_rmse".into(), trial(Task::Worstcase, out.rmse, seed0, 0))],
                summaries: vec![row(Task::Worstcase, "worst_case_rmse", out.rmse, 0.0, config.trials)],
            })
        }
        Suite::Mean | Suite::Distribution | Suite::Variance => {
            let population = population.expect("data loaded for data suites");
            let theta = transition_matrix(cell.mechanism, config.bins)?;
            let em = EmConfig {
                tau: config.tau,
                max_iters: config.em_max_iters,
            };
            let per_trial = (0..config.trials)
                .into_par_iter()
                .map(|t| {
                    let seed = trial_seed(config, cell, t);
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let xs = population.draw(users, &mut rng)?;
                    let value = match cell.suite {
                        Suite::Mean => {
                            let truth = xs.iter().sum::<f64>() / xs.len() as f64;
                            let batch = perturb(cell.mechanism, &name, &xs, &mut rng)?;
                            (mean_estimate(&batch)? - truth).abs()
                        }
                        Suite::Distribution => {
                            let truth = Histogram::from_values(&xs, config.bins)?;
                            let est = estimate_histogram(cell.mechanism, &name, theta.as_ref(), &em, &xs, &mut rng)?;
                            wasserstein(&est, &truth)?
                        }
                        _ => {
                            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
                            let truth = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
                            let est = estimate_histogram(cell.mechanism, &name, theta.as_ref(), &em, &xs, &mut rng)?;
                            (variance_from_histogram(&est) - truth).abs()
                        }
                    };
                    Ok((seed, value))
                })
                .collect::<Result<Vec<_>>>()?;
            let values: Vec<f64> = per_trial.iter().map(|p| p.1).collect();
            let (task, metric) = match cell.suite {
                Suite::Mean => (Task::Mean, "abs_error"),
                Suite::Distribution => (Task::Distribution, "wasserstein"),
                _ => (Task::Variance, "abs_error"),
            };
            let (mean, std) = mean_std(&values);
            let mut summaries = vec![row(task, metric, mean, std, values.len())];
            if task != Task::Distribution {
                summaries.push(row(task, "rmse", rmse(&values, 0.0)?, 0.0, values.len()));
            }
            Ok(CellOutput {
                trials: per_trial
                    .into_iter()
                    .enumerate()
                    .map(|(t, (seed, v))| (metric.to_string(), trial(task, v, seed, t)))
                    .collect(),
                summaries,
            })
        }
    }
}

fn transition_matrix(mech: &Mechanism, bins: usize) -> Result<Option<TransitionMatrix>> {
    Ok(match mech {
        Mechanism::Discrete(d) => Some(theta_discrete(d, bins)?),
        Mechanism::Piecewise(p) => Some(theta_continuous(p, bins, bins)?),
        Mechanism::Categorical(_) => None,
    })
}

/// Perturbs every value with a mean-capable mechanism.
pub(crate) fn perturb(mech: &Mechanism, name: &str, xs: &[f64], rng: &mut ChaCha8Rng) -> Result<ReportBatch> {
    match mech {
        Mechanism::Discrete(d) => ReportBatch::from_design(name, d, xs, rng),
        Mechanism::Piecewise(p) => ReportBatch::from_pm(name, p, xs, rng),
        Mechanism::Categorical(_) => Err(Error::Config(format!("{name} does not produce numerical reports"))),
    }
}

/// Perturbs `xs` and estimates their histogram: EM for numerical reports,
/// the frequency oracle's own estimator for categorical ones.
fn estimate_histogram(
    mech: &Mechanism,
    name: &str,
    theta: Option<&TransitionMatrix>,
    em: &EmConfig,
    xs: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<Histogram> {
    match mech {
        Mechanism::Categorical(c) => {
            let reports = xs.iter().map(|&x| c.perturb(x, rng)).collect::<Result<Vec<_>>>()?;
            c.estimate_histogram(&reports)
        }
        _ => {
            let theta = theta.expect("numerical mechanisms have a transition matrix");
            let batch = perturb(mech, name, xs, rng)?;
            let counts = batch.binned_counts(theta.rows())?;
            Ok(em_estimate(&counts, theta, em)?.histogram)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::SyntheticDist;

    fn small_config(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            suites: Suite::ALL.to_vec(),
            mechanisms: vec![MechanismId::Duchi, MechanismId::Pm, MechanismId::De, MechanismId::Oue],
            epsilons: vec![1.0, 2.0],
            trials: 3,
            users: Some(2000),
            bins: 16,
            worst_case_points: 5,
            pm_grid_points: 101,
            output: dir.to_path_buf(),
            data: DataSource::Synthetic {
                dist: SyntheticDist::bimodal(),
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn suites_are_reproducible_byte_for_byte() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DesignCache::new(dir.path().join("cache"));
        let cfg = small_config(dir.path());
        let mut outputs = Vec::new();
        for run in ["a", "b"] {
            let out = dir.path().join(run);
            run_suite(&cfg, &cache).unwrap().write(&out).unwrap();
            outputs.push((
                fs::read(out.join("trials.csv")).unwrap(),
                fs::read(out.join("summary.csv")).unwrap(),
            ));
        }
        assert_eq!(outputs[0], outputs[1]);
        let report = run_suite(&cfg, &cache).unwrap();
        assert!(report.failures.is_empty(), "{:?}", report.failures);
        // DE and OUE only run the two histogram suites.
        let de_rows = report.summaries.iter().filter(|s| s.mechanism == "de").count();
        assert_eq!(de_rows, 2 * 2 + 2);
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DesignCache::new(dir.path().join("cache"));
        let cfg = ExperimentConfig {
            suites: vec![Suite::Theory],
            mechanisms: vec![MechanismId::Duchi, MechanismId::ThreeOutput],
            epsilons: vec![1.0, 800.0],
            ..small_config(dir.path())
        };
        let report = run_suite(&cfg, &cache).unwrap();
        assert!(!report.summaries.is_empty());
        assert!(!report.failures.is_empty());
        report.write(dir.path()).unwrap();
        let manifest = fs::read_to_string(dir.path().join("failures.csv")).unwrap();
        assert!(manifest.lines().count() > 1);
    }
}
