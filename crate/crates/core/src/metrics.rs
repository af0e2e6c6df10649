//! Error metrics: RMSE, worst-case mean-estimation RMSE and the
//! Wasserstein distance between histograms on shared bins.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::PmParams;
use crate::error::{Error, Result};
use crate::estimation::Histogram;
use crate::harness::derive_seed;
use crate::mechanism::MechanismDesign;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Mean,
    Variance,
    Distribution,
    Worstcase,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Mean => "mean",
            Task::Variance => "variance",
            Task::Distribution => "distribution",
            Task::Worstcase => "worstcase",
        }
    }
}

/// One trial's error for one mechanism and budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub mechanism: String,
    pub epsilon: f64,
    pub task: Task,
    pub value: f64,
    pub seed: u64,
    pub trial: usize,
}

pub fn rmse(estimates: &[f64], truth: f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::Estimation("rmse of an empty list".into()));
    }
    let sq: f64 = estimates.iter().map(|e| (e - truth).powi(2)).sum();
    Ok((sq / estimates.len() as f64).sqrt())
}

/// 1-Wasserstein distance between two histograms on the same bins,
/// `sum_k |F_a(k) - F_b(k)| * (c_{k+1} - c_k)` over interior boundaries,
/// with `c` the bin centres.
pub fn wasserstein(a: &Histogram, b: &Histogram) -> Result<f64> {
    if a.edges() != b.edges() {
        return Err(Error::EdgeMismatch);
    }
    let centers = a.centers();
    let (mut fa, mut fb, mut total) = (0.0, 0.0, 0.0);
    for k in 0..a.d() - 1 {
        fa += a.pi()[k];
        fb += b.pi()[k];
        total += (fa - fb).abs() * (centers[k + 1] - centers[k]);
    }
    Ok(total)
}

/// A mechanism whose reports can be averaged to estimate a mean.
pub trait MeanMechanism: Sync {
    /// Mean of `m` reports from users who all hold `x`.
    fn trial_mean(&self, x: f64, m: usize, rng: &mut ChaCha8Rng) -> Result<f64>;

    /// Theoretical report variance at `x`.
    fn variance(&self, x: f64) -> Result<f64>;

    /// Inputs where the worst case may sit, beyond a uniform grid.
    fn critical_points(&self) -> Vec<f64> {
        Vec::new()
    }
}

impl MeanMechanism for MechanismDesign {
    /// Each user inverts the report CDF at one uniform draw. Every grid
    /// point replays the same uniforms, so the simulated means move
    /// smoothly with `x` and the maximum over a grid is not inflated by
    /// independent noise at each point.
    fn trial_mean(&self, x: f64, m: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
        let probs = self.probabilities(x)?;
        let mut cdf: Vec<f64> = probs
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        // Guard the last bucket against rounding in the running sum.
        *cdf.last_mut().expect("at least two outputs") = f64::INFINITY;
        let mut counts = vec![0u64; probs.len()];
        for _ in 0..m {
            let u: f64 = rng.gen();
            counts[cdf.partition_point(|&c| c <= u)] += 1;
        }
        let total: f64 = counts.iter().zip(self.outputs()).map(|(&c, &a)| c as f64 * a).sum();
        Ok(total / m as f64)
    }

    fn variance(&self, x: f64) -> Result<f64> {
        self.noise_variance(x)
    }

    /// Segment endpoints and each segment's variance peak.
    fn critical_points(&self) -> Vec<f64> {
        let mut pts = self.endpoints().to_vec();
        pts.extend((1..self.endpoints().len()).map(|c| self.segment_max(c).argmax));
        pts
    }
}

impl MeanMechanism for PmParams {
    fn trial_mean(&self, x: f64, m: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
        let mut total = 0.0;
        for _ in 0..m {
            total += self.sample(x, rng)?;
        }
        Ok(total / m as f64)
    }

    fn variance(&self, x: f64) -> Result<f64> {
        if !(-1.0..=1.0).contains(&x) {
            return Err(Error::Domain(x));
        }
        Ok(PmParams::variance(self, x))
    }

    fn critical_points(&self) -> Vec<f64> {
        vec![-1.0, 1.0]
    }
}

/// `points` equally spaced inputs on `[-1, 1]` plus the mechanism's
/// critical points, sorted and deduplicated.
pub fn worst_case_grid(mech: &dyn MeanMechanism, points: usize) -> Vec<f64> {
    let points = points.max(2);
    let mut grid: Vec<f64> = (0..points)
        .map(|k| -1.0 + 2.0 * k as f64 / (points - 1) as f64)
        .chain(mech.critical_points())
        .map(|x: f64| x.clamp(-1.0, 1.0))
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    grid
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorstCaseRmse {
    pub rmse: f64,
    pub argmax: f64,
    /// `(x, rmse)` for every grid point.
    pub per_point: Vec<(f64, f64)>,
}

/// For every `x` in the grid, simulates `trials` rounds of `m` users all
/// holding `x`, and reports the largest mean-estimation RMSE.
///
/// Trial `t` draws from the same seed at every grid point, so the grid
/// points share their random numbers.
pub fn worst_case_rmse(
    mech: &dyn MeanMechanism,
    m: usize,
    trials: usize,
    x_grid: &[f64],
    seed: u64,
) -> Result<WorstCaseRmse> {
    if m == 0 || trials == 0 || x_grid.is_empty() {
        return Err(Error::Config("worst-case RMSE needs m, trials and grid points".into()));
    }
    let per_point: Vec<(f64, f64)> = x_grid
        .par_iter()
        .map(|&x| {
            let means = (0..trials)
                .map(|t| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["worstcase", &t.to_string()]));
                    mech.trial_mean(x, m, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((x, rmse(&means, x)?))
        })
        .collect::<Result<_>>()?;
    let (argmax, worst) = per_point
        .iter()
        .copied()
        .fold((f64::NAN, f64::NEG_INFINITY), |acc, p| if p.1 > acc.1 { p } else { acc });
    Ok(WorstCaseRmse {
        rmse: worst,
        argmax,
        per_point,
    })
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::duchi_design;
    use crate::estimation::uniform_edges;
    use crate::mechanism::PrivacyBudget;

    struct Noiseless;

    impl MeanMechanism for Noiseless {
        fn trial_mean(&self, x: f64, _: usize, _: &mut ChaCha8Rng) -> Result<f64> {
            Ok(x)
        }

        fn variance(&self, _: f64) -> Result<f64> {
            Ok(0.0)
        }
    }

    fn hist(pi: Vec<f64>) -> Histogram {
        let d = pi.len();
        Histogram::new(uniform_edges(-1.0, 1.0, d), pi).unwrap()
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 1.0, 1.0], 1.0).unwrap(), 0.0);
        assert_eq!(rmse(&[0.0, 2.0], 1.0).unwrap(), 1.0);
        assert!(rmse(&[], 0.0).is_err());
    }

    #[test]
    fn wasserstein_examples() {
        let a = hist(vec![1.0, 0.0, 0.0, 0.0]);
        let b = hist(vec![0.0, 0.0, 0.0, 1.0]);
        assert!((wasserstein(&a, &b).unwrap() - 1.5).abs() < 1e-15);
        assert_eq!(wasserstein(&a, &a).unwrap(), 0.0);
        assert_eq!(wasserstein(&a, &b).unwrap(), wasserstein(&b, &a).unwrap());
        let c = hist(vec![0.5, 0.5]);
        assert!(matches!(wasserstein(&a, &c), Err(Error::EdgeMismatch)));
    }

    #[test]
    fn noiseless_worst_case_is_zero() {
        let grid = worst_case_grid(&Noiseless, 41);
        let out = worst_case_rmse(&Noiseless, 10, 5, &grid, 1).unwrap();
        assert_eq!(out.rmse, 0.0);
    }

    #[test]
    fn multinomial_trial_mean_has_design_variance() {
        let design = duchi_design(PrivacyBudget::new(1.0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = 1000;
        let means: Vec<f64> = (0..4000).map(|_| design.trial_mean(0.3, m, &mut rng).unwrap()).collect();
        let (mean, std) = mean_std(&means);
        let want = (design.noise_variance(0.3).unwrap() / m as f64).sqrt();
        assert!((mean - 0.3).abs() < 4.0 * want / (4000f64).sqrt());
        assert!((std / want - 1.0).abs() < 0.05);
    }

    #[test]
    fn duchi_worst_case_sits_at_zero() {
        let design = duchi_design(PrivacyBudget::new(1.0).unwrap());
        let grid = worst_case_grid(&design, 41);
        assert!(grid.contains(&0.0));
        let out = worst_case_rmse(&design, 10_000, 2000, &grid, 7).unwrap();
        assert!(out.argmax.abs() <= 0.75, "argmax {}", out.argmax);
    }
}
