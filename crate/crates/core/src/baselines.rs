//! Reference mechanisms: Duchi's two-output scheme, the Piecewise
//! Mechanism (and its sub-optimal-width variant), and categorical
//! frequency oracles (direct encoding and optimized unary encoding).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{uniform_edges, Histogram};
use crate::mechanism::{MechanismDesign, OutputGrid, PrivacyBudget, ProbabilityTable, Variant};

/// Duchi's mechanism as a two-output design with endpoints `-1, 0, 1`.
pub fn duchi_design(budget: PrivacyBudget) -> MechanismDesign {
    let e = budget.exp();
    let a1 = (e + 1.0) / (e - 1.0);
    let slope = (e - 1.0) / (2.0 * e + 2.0);
    let hi = slope + 0.5;
    let lo = 0.5 - slope;
    let grid = OutputGrid::new(vec![-a1, a1]).expect("two distinct outputs");
    let table = ProbabilityTable::new(vec![vec![hi, 0.5, lo], vec![lo, 0.5, hi]])
        .expect("rectangular table");
    let design = MechanismDesign::new(Variant::Duchi, budget, grid, table)
        .expect("Duchi's table is unbiased by construction");
    let wc = design.worst_case_variance();
    design.with_objective(wc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PiecewiseKind {
    /// Central band width chosen with `zeta = e^(eps/2)`.
    Standard,
    /// Narrower band, `zeta = e^(eps/3)`; used to seed the numerical solver.
    Sub,
}

/// Piecewise Mechanism: given `x`, report a value drawn from density `e^eps q`
/// on `[L(x), R(x)]` and `q` elsewhere on `[L(-1), R(1)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmParams {
    pub kind: PiecewiseKind,
    pub budget: PrivacyBudget,
    pub zeta: f64,
    /// Low density level.
    pub q: f64,
    /// `L(x) = slope * x - offset`, `R(x) = slope * x + offset`.
    pub slope: f64,
    pub offset: f64,
}

impl PmParams {
    pub fn new(budget: PrivacyBudget, kind: PiecewiseKind) -> Self {
        let e = budget.exp();
        let eps = budget.epsilon();
        let zeta = match kind {
            PiecewiseKind::Standard => (eps / 2.0).exp(),
            PiecewiseKind::Sub => (eps / 3.0).exp(),
        };
        let q = zeta * (e - 1.0) / (2.0 * (e + zeta).powi(2));
        let slope = (e + zeta) / (e - 1.0);
        let offset = slope / zeta;
        Self {
            kind,
            budget,
            zeta,
            q,
            slope,
            offset,
        }
    }

    pub fn standard(budget: PrivacyBudget) -> Self {
        Self::new(budget, PiecewiseKind::Standard)
    }

    pub fn sub(budget: PrivacyBudget) -> Self {
        Self::new(budget, PiecewiseKind::Sub)
    }

    pub fn left(&self, x: f64) -> f64 {
        self.slope * x - self.offset
    }

    pub fn right(&self, x: f64) -> f64 {
        self.slope * x + self.offset
    }

    /// Input whose left band edge sits at `y`.
    pub fn left_inverse(&self, y: f64) -> f64 {
        (y + self.offset) / self.slope
    }

    /// Input whose right band edge sits at `y`.
    pub fn right_inverse(&self, y: f64) -> f64 {
        (y - self.offset) / self.slope
    }

    /// Width `R(x) - L(x)` of the high-density band.
    pub fn band_width(&self) -> f64 {
        2.0 * self.offset
    }

    /// Output range `[L(-1), R(1)]`.
    pub fn domain(&self) -> (f64, f64) {
        (self.left(-1.0), self.right(1.0))
    }

    pub fn high_density(&self) -> f64 {
        self.budget.exp() * self.q
    }

    pub fn density(&self, y: f64, x: f64) -> f64 {
        let (lo, hi) = self.domain();
        if y < lo || y > hi {
            0.0
        } else if y >= self.left(x) && y <= self.right(x) {
            self.high_density()
        } else {
            self.q
        }
    }

    pub fn expected_value(&self, x: f64) -> f64 {
        let (l, r) = (self.left(x), self.right(x));
        let s = self.budget.exp() - 1.0;
        s * self.q * (r * r - l * l) / 2.0
    }

    pub fn variance(&self, x: f64) -> f64 {
        let (lo, hi) = self.domain();
        let (l, r) = (self.left(x), self.right(x));
        let s = self.budget.exp() - 1.0;
        let second = self.q * (hi.powi(3) - lo.powi(3)) / 3.0 + s * self.q * (r.powi(3) - l.powi(3)) / 3.0;
        let mean = self.expected_value(x);
        second - mean * mean
    }

    /// Largest variance over a uniform grid of `points` inputs on `[-1, 1]`.
    pub fn dense_worst_case_variance(&self, points: usize) -> f64 {
        let points = points.max(2);
        (0..points)
            .map(|k| self.variance(-1.0 + 2.0 * k as f64 / (points - 1) as f64))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> Result<f64> {
        if !(-1.0..=1.0).contains(&x) {
            return Err(Error::Domain(x));
        }
        let (lo, hi) = self.domain();
        let (l, r) = (self.left(x), self.right(x));
        let p_band = self.high_density() * (r - l);
        if rng.gen::<f64>() < p_band {
            return Ok(rng.gen_range(l..r));
        }
        let left_len = l - lo;
        let right_len = hi - r;
        let u = rng.gen::<f64>() * (left_len + right_len);
        Ok(if u < left_len { lo + u } else { r + (u - left_len) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CategoricalScheme {
    /// Direct encoding (generalized randomized response).
    De,
    /// Optimized unary encoding.
    Oue,
}

/// Frequency oracle over `d` uniform bins of `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CategoricalParams {
    pub scheme: CategoricalScheme,
    pub d: usize,
    /// Probability that the true bin is reported (DE) or its bit is set (OUE).
    pub p_keep: f64,
    /// Probability that a given other bin is reported (DE) or set (OUE).
    pub p_flip: f64,
}

impl CategoricalParams {
    pub fn new(budget: PrivacyBudget, scheme: CategoricalScheme, d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidParameters(format!("need at least 2 bins, got {d}")));
        }
        let e = budget.exp();
        let (p_keep, p_flip) = match scheme {
            CategoricalScheme::De => (e / (e + d as f64 - 1.0), 1.0 / (e + d as f64 - 1.0)),
            CategoricalScheme::Oue => (0.5, 1.0 / (e + 1.0)),
        };
        Ok(Self {
            scheme,
            d,
            p_keep,
            p_flip,
        })
    }

    /// Bin of `x` among `d` uniform bins on `[-1, 1]`; `1.0` falls in the last bin.
    pub fn bin_of(&self, x: f64) -> Result<usize> {
        uniform_bin(x, self.d)
    }

    pub fn perturb<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> Result<CategoricalReport> {
        let bin = self.bin_of(x)?;
        Ok(match self.scheme {
            CategoricalScheme::De => {
                if rng.gen::<f64>() < self.p_keep {
                    CategoricalReport::Index(bin)
                } else {
                    let other = rng.gen_range(0..self.d - 1);
                    CategoricalReport::Index(if other >= bin { other + 1 } else { other })
                }
            }
            CategoricalScheme::Oue => {
                let bits = (0..self.d)
                    .filter(|&k| {
                        let p = if k == bin { self.p_keep } else { self.p_flip };
                        rng.gen::<f64>() < p
                    })
                    .collect();
                CategoricalReport::Bits(bits)
            }
        })
    }

    /// Per-bin support counts of a batch of reports.
    pub fn tally(&self, reports: &[CategoricalReport]) -> Result<Vec<u64>> {
        let mut counts = vec![0u64; self.d];
        for rep in reports {
            match (self.scheme, rep) {
                (CategoricalScheme::De, CategoricalReport::Index(k)) if *k < self.d => counts[*k] += 1,
                (CategoricalScheme::Oue, CategoricalReport::Bits(bits)) => {
                    for &k in bits {
                        if k >= self.d {
                            return Err(Error::InvalidParameters(format!("bit {k} out of range")));
                        }
                        counts[k] += 1;
                    }
                }
                _ => {
                    return Err(Error::InvalidParameters(
                        "report does not match the encoding scheme".into(),
                    ))
                }
            }
        }
        Ok(counts)
    }

    /// Unbiased frequency estimates before projection onto the simplex.
    pub fn unbiased_frequencies(&self, counts: &[u64], m: usize) -> Vec<f64> {
        let m = m.max(1) as f64;
        counts
            .iter()
            .map(|&c| (c as f64 / m - self.p_flip) / (self.p_keep - self.p_flip))
            .collect()
    }

    /// Frequency estimate clipped at zero and renormalized. Falls back to the
    /// uniform distribution when every bin clips.
    pub fn estimate(&self, reports: &[CategoricalReport]) -> Result<Vec<f64>> {
        let counts = self.tally(reports)?;
        Ok(clip_and_normalize(self.unbiased_frequencies(&counts, reports.len())))
    }

    pub fn estimate_histogram(&self, reports: &[CategoricalReport]) -> Result<Histogram> {
        Histogram::new(uniform_edges(-1.0, 1.0, self.d), self.estimate(reports)?)
    }
}

pub(crate) fn clip_and_normalize(raw: Vec<f64>) -> Vec<f64> {
    let d = raw.len();
    let clipped: Vec<f64> = raw.into_iter().map(|f| f.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if total > 0.0 {
        clipped.into_iter().map(|f| f / total).collect()
    } else {
        vec![1.0 / d as f64; d]
    }
}

pub(crate) fn uniform_bin(x: f64, d: usize) -> Result<usize> {
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::Domain(x));
    }
    Ok((((x + 1.0) / 2.0 * d as f64) as usize).min(d - 1))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CategoricalReport {
    Index(usize),
    Bits(Vec<usize>),
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn budget(eps: f64) -> PrivacyBudget {
        PrivacyBudget::new(eps).unwrap()
    }

    #[test]
    fn duchi_at_ln3() {
        let d = duchi_design(budget(3f64.ln()));
        assert!((d.outputs()[1] - 2.0).abs() < 1e-12);
        assert!((d.prob_at(1, 1.0).unwrap() - 0.75).abs() < 1e-12);
        assert!((d.prob_at(1, -1.0).unwrap() - 0.25).abs() < 1e-12);
        assert!((d.worst_case_variance() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn duchi_closed_forms() {
        for eps in [0.1, 0.5, 1.0, 2.0, 5.0] {
            let d = duchi_design(budget(eps));
            let e = eps.exp();
            let a1 = (e + 1.0) / (e - 1.0);
            for k in 0..=20 {
                let x = -1.0 + k as f64 / 10.0;
                let p1 = (e - 1.0) / (2.0 * e + 2.0) * x + 0.5;
                assert!((d.prob_at(1, x).unwrap() - p1).abs() < 1e-12);
                assert!((d.noise_variance(x).unwrap() - (a1 * a1 - x * x)).abs() < 1e-9);
            }
            assert!(d.verify_ldp(1e-12).ok);
        }
    }

    #[test]
    fn pm_ln4_parameters() {
        let pm = PmParams::standard(budget(4f64.ln()));
        assert!((pm.zeta - 2.0).abs() < 1e-12);
        assert!((pm.q - 1.0 / 12.0).abs() < 1e-12);
        assert!((pm.left(0.5) - 0.0).abs() < 1e-12);
        assert!((pm.right(0.5) - 2.0).abs() < 1e-12);
        let (lo, hi) = pm.domain();
        assert!((lo + 3.0).abs() < 1e-12 && (hi - 3.0).abs() < 1e-12);
        assert!((pm.left_inverse(pm.left(0.3)) - 0.3).abs() < 1e-12);
        assert!((pm.right_inverse(pm.right(-0.7)) + 0.7).abs() < 1e-12);
    }

    #[test]
    fn pm_density_integrates_to_one_and_is_unbiased() {
        for kind in [PiecewiseKind::Standard, PiecewiseKind::Sub] {
            for eps in [0.5, 1.0, 3.0] {
                let pm = PmParams::new(budget(eps), kind);
                let (lo, hi) = pm.domain();
                for x in [-1.0, -0.3, 0.0, 0.8, 1.0] {
                    let m = 400_000;
                    let h = (hi - lo) / m as f64;
                    let (mut mass, mut mean, mut second) = (0.0, 0.0, 0.0);
                    for k in 0..m {
                        let y = lo + (k as f64 + 0.5) * h;
                        let f = pm.density(y, x) * h;
                        mass += f;
                        mean += f * y;
                        second += f * y * y;
                    }
                    assert!((mass - 1.0).abs() < 1e-4, "mass {mass}");
                    assert!((mean - x).abs() < 1e-3);
                    assert!((pm.expected_value(x) - x).abs() < 1e-12);
                    assert!((second - x * x - pm.variance(x)).abs() < 1e-3);
                }
            }
        }
    }

    #[test]
    fn pm_sampling_mean_and_range() {
        let pm = PmParams::standard(budget(1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (lo, hi) = pm.domain();
        let n = 200_000;
        let x = 0.4;
        let mut sum = 0.0;
        for _ in 0..n {
            let y = pm.sample(x, &mut rng).unwrap();
            assert!(y >= lo && y <= hi);
            sum += y;
        }
        let sd = (pm.variance(x) / n as f64).sqrt();
        assert!((sum / n as f64 - x).abs() < 5.0 * sd);
        assert!(pm.sample(1.2, &mut rng).is_err());
    }

    #[test]
    fn categorical_probabilities() {
        let de = CategoricalParams::new(budget(1.0), CategoricalScheme::De, 4).unwrap();
        let e = 1f64.exp();
        assert!((de.p_keep - e / (e + 3.0)).abs() < 1e-15);
        assert!((de.p_keep + 3.0 * de.p_flip - 1.0).abs() < 1e-15);
        let oue = CategoricalParams::new(budget(1.0), CategoricalScheme::Oue, 4).unwrap();
        assert_eq!(oue.p_keep, 0.5);
        assert!((oue.p_flip - 1.0 / (e + 1.0)).abs() < 1e-15);
        assert!(CategoricalParams::new(budget(1.0), CategoricalScheme::De, 1).is_err());
    }

    #[test]
    fn categorical_estimates_recover_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for scheme in [CategoricalScheme::De, CategoricalScheme::Oue] {
            let params = CategoricalParams::new(budget(2.0), scheme, 4).unwrap();
            let truth = [0.1, 0.2, 0.3, 0.4];
            let centers = [-0.75, -0.25, 0.25, 0.75];
            let m = 200_000;
            let mut reports = Vec::with_capacity(m);
            for k in 0..m {
                let u = k as f64 / m as f64;
                let bin = if u < 0.1 { 0 } else if u < 0.3 { 1 } else if u < 0.6 { 2 } else { 3 };
                reports.push(params.perturb(centers[bin], &mut rng).unwrap());
            }
            let est = params.estimate(&reports).unwrap();
            assert!((est.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (e, t) in est.iter().zip(truth) {
                assert!((e - t).abs() < 0.02, "{scheme:?}: {e} vs {t}");
            }
        }
    }

    #[test]
    fn clip_falls_back_to_uniform() {
        assert_eq!(clip_and_normalize(vec![-1.0, -2.0]), vec![0.5, 0.5]);
        assert_eq!(clip_and_normalize(vec![-1.0, 3.0]), vec![0.0, 1.0]);
    }

    #[test]
    fn uniform_bins() {
        assert_eq!(uniform_bin(-1.0, 4).unwrap(), 0);
        assert_eq!(uniform_bin(1.0, 4).unwrap(), 3);
        assert_eq!(uniform_bin(0.0, 4).unwrap(), 2);
        assert!(uniform_bin(1.01, 4).is_err());
    }
}
