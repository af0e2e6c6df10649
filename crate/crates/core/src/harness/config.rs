//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::data::SyntheticDist;
use crate::error::{Error, Result};
use crate::numerical::SolverConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    /// (a) theoretical worst-case variance.
    #[serde(alias = "a")]
    Theory,
    /// (b) simulated worst-case mean-estimation RMSE.
    #[serde(alias = "b")]
    Worstcase,
    /// (c) mean-estimation error on data.
    #[serde(alias = "c")]
    Mean,
    /// (d) EM distribution estimation, scored by Wasserstein distance.
    #[serde(alias = "d")]
    Distribution,
    /// (e) variance estimated from the EM histogram.
    #[serde(alias = "e")]
    Variance,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Theory,
        Suite::Worstcase,
        Suite::Mean,
        Suite::Distribution,
        Suite::Variance,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Suite::Theory => "theory",
            Suite::Worstcase => "worstcase",
            Suite::Mean => "mean",
            Suite::Distribution => "distribution",
            Suite::Variance => "variance",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    /// Accepts the suite name or its letter `a`..`e`.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "a" | "theory" => Suite::Theory,
            "b" | "worstcase" => Suite::Worstcase,
            "c" | "mean" => Suite::Mean,
            "d" | "distribution" => Suite::Distribution,
            "e" | "variance" => Suite::Variance,
            other => return Err(Error::Config(format!("unknown suite {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MechanismId {
    Duchi,
    /// The analytical design restricted to three outputs.
    ThreeOutput,
    /// The analytical design with its selected output count.
    Analytical,
    NumericalWorst,
    NumericalAvg,
    Pm,
    PmSub,
    De,
    Oue,
}

impl MechanismId {
    pub const ALL: [MechanismId; 9] = [
        MechanismId::Duchi,
        MechanismId::ThreeOutput,
        MechanismId::Analytical,
        MechanismId::NumericalWorst,
        MechanismId::NumericalAvg,
        MechanismId::Pm,
        MechanismId::PmSub,
        MechanismId::De,
        MechanismId::Oue,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MechanismId::Duchi => "duchi",
            MechanismId::ThreeOutput => "three-output",
            MechanismId::Analytical => "analytical",
            MechanismId::NumericalWorst => "numerical-worst",
            MechanismId::NumericalAvg => "numerical-avg",
            MechanismId::Pm => "pm",
            MechanismId::PmSub => "pm-sub",
            MechanismId::De => "de",
            MechanismId::Oue => "oue",
        }
    }

    /// Frequency oracles only produce histograms.
    pub fn supports(&self, suite: Suite) -> bool {
        match self {
            MechanismId::De | MechanismId::Oue => matches!(suite, Suite::Distribution | Suite::Variance),
            _ => true,
        }
    }
}

impl FromStr for MechanismId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MechanismId::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mechanism {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic {
        #[serde(flatten)]
        dist: SyntheticDist,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        columns: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub suites: Vec<Suite>,
    pub mechanisms: Vec<MechanismId>,
    pub epsilons: Vec<f64>,
    pub trials: usize,
    /// Users per trial. Defaults to the dataset size for CSV data and
    /// 100 000 for synthetic data.
    pub users: Option<usize>,
    pub bins: usize,
    pub tau: f64,
    pub em_max_iters: usize,
    pub seed: u64,
    pub n_max: usize,
    /// Uniform grid size for the worst-case suite, before critical points.
    pub worst_case_points: usize,
    /// Inputs scanned for the Piecewise Mechanisms' theoretical worst case.
    pub pm_grid_points: usize,
    pub output: PathBuf,
    pub data: DataSource,
    pub solver: SolverConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            suites: vec![Suite::Theory],
            mechanisms: vec![
                MechanismId::Duchi,
                MechanismId::ThreeOutput,
                MechanismId::Analytical,
                MechanismId::NumericalWorst,
                MechanismId::Pm,
                MechanismId::PmSub,
            ],
            epsilons: vec![0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0],
            trials: 100,
            users: None,
            bins: 64,
            tau: 1e-5,
            em_max_iters: 10_000,
            seed: 0,
            n_max: 16,
            worst_case_points: 41,
            pm_grid_points: 10_000,
            output: PathBuf::from("results"),
            data: DataSource::Synthetic {
                dist: SyntheticDist::bimodal(),
            },
            solver: SolverConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.bins < 2 {
            return Err(Error::Config("need at least 2 bins".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config("tau must be positive".into()));
        }
        if self.n_max < 2 {
            return Err(Error::Config("n_max must be at least 2".into()));
        }
        if self.users == Some(0) {
            return Err(Error::Config("users must be at least 1".into()));
        }
        if self.epsilons.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            return Err(Error::Config("epsilons must be finite and positive".into()));
        }
        Ok(())
    }
}
