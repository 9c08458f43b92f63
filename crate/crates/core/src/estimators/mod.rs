//! Estimator drivers: single-level MC, MLMC, MIMC, MLQMC, MIQMC and MLMC
//! with sparse combination samples.

mod allocation;
mod engine;
mod evaluator;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::MultiIndex;
use crate::rates::{FitWindow, RateFit};

pub use allocation::{allocate_samples, select_finest_level, Allocation, BiasModel, Rounding, VARIANCE_FLOOR};
pub use engine::{
    mc_run, mimc_run, miqmc_run, mlmc_combination_run, mlmc_run, mlqmc_run, Estimator, Screening,
};
pub use evaluator::{PdeEvaluator, Term, TermKind, TermSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Driver {
    Mc,
    Mlmc,
    Mimc,
    Mlqmc,
    Miqmc,
    #[serde(rename = "mlmc-comb")]
    MlmcCombination,
}

impl Driver {
    pub const ALL: [Driver; 6] = [
        Driver::Mc,
        Driver::Mlmc,
        Driver::Mimc,
        Driver::Mlqmc,
        Driver::Miqmc,
        Driver::MlmcCombination,
    ];

    pub fn is_qmc(self) -> bool {
        matches!(self, Driver::Mlqmc | Driver::Miqmc)
    }

    pub fn is_multi_index(self) -> bool {
        matches!(self, Driver::Mimc | Driver::Miqmc)
    }

    pub fn name(self) -> &'static str {
        match self {
            Driver::Mc => "mc",
            Driver::Mlmc => "mlmc",
            Driver::Mimc => "mimc",
            Driver::Mlqmc => "mlqmc",
            Driver::Miqmc => "miqmc",
            Driver::MlmcCombination => "mlmc-comb",
        }
    }
}

impl fmt::Display for Driver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Driver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Driver::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown driver '{s}' (expected mc, mlmc, mimc, mlqmc, miqmc or mlmc-comb)")))
    }
}

/// Scalar level or multi-index identifying one estimator term.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LevelKey {
    Level(u32),
    Index(MultiIndex),
}

impl LevelKey {
    pub fn scalar_level(&self) -> i64 {
        match self {
            LevelKey::Level(l) => *l as i64,
            LevelKey::Index(m) => m.norm1(),
        }
    }

    pub fn order1(&self) -> i64 {
        self.scalar_level()
    }

    /// Random-stream slot; distinct for distinct keys of one driver.
    pub fn slot(&self) -> u64 {
        match self {
            LevelKey::Level(l) => *l as u64,
            LevelKey::Index(m) => {
                let mut slot = 1u64 << 62;
                for (j, &l) in m.levels().iter().enumerate() {
                    slot |= (l.max(0) as u64 & 0xFFFF) << (16 * j);
                }
                slot
            }
        }
    }
}

impl fmt::Display for LevelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LevelKey::Level(l) => write!(f, "{l}"),
            LevelKey::Index(m) => write!(f, "{m}"),
        }
    }
}

/// Statistics of one estimator term `Y_l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub key: LevelKey,
    pub mean: f64,
    pub variance_of_mean: f64,
    /// Sample variance of the individual integrand values.
    pub raw_variance: f64,
    /// Mean measured solver work per integrand evaluation.
    pub cost_per_sample: f64,
    /// Idealized work `sum 2^{|l|_1}` over the grids one evaluation solves.
    pub modeled_cost_per_sample: f64,
    #[serde(rename = "N")]
    pub n: u64,
    #[serde(rename = "R")]
    pub r: u64,
    pub total_cost: f64,
}

impl LevelRecord {
    /// Record with `variance_of_mean = raw_variance / (n r)`, the MC value.
    pub fn new(key: LevelKey, mean: f64, raw_variance: f64, cost_per_sample: f64, n: u64, r: u64) -> Self {
        let n = n.max(1);
        let r = r.max(1);
        LevelRecord {
            key,
            mean,
            variance_of_mean: raw_variance / (n * r) as f64,
            raw_variance,
            cost_per_sample,
            modeled_cost_per_sample: cost_per_sample,
            n,
            r,
            total_cost: (n * r) as f64 * cost_per_sample,
        }
    }

    /// A term that vanishes for every sample and is never evaluated.
    pub fn structural_zero(key: LevelKey) -> Self {
        LevelRecord {
            key,
            mean: 0.0,
            variance_of_mean: 0.0,
            raw_variance: 0.0,
            cost_per_sample: 0.0,
            modeled_cost_per_sample: 0.0,
            n: 1,
            r: 1,
            total_cost: 0.0,
        }
    }

    pub fn modeled_total_cost(&self) -> f64 {
        (self.n * self.r) as f64 * self.modeled_cost_per_sample
    }
}

/// Tuning of the screening, allocation and top-up phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorParams {
    pub seed: u64,
    /// Meta-replication number; selects disjoint random streams.
    pub replica: u64,
    /// Pilot samples per term for MC drivers.
    pub screen_samples: usize,
    /// Pilot shifts and `log2` points per term for QMC drivers.
    pub screen_shifts: usize,
    pub screen_log2_points: u32,
    /// Highest pilot level; default `7 - d` (at least 3) for isotropic
    /// terms and `2 d + 4` for multi-index and combination terms.
    pub screen_max_level: Option<usize>,
    /// `log2 N` range of the QMC exponent regression.
    pub p_log2_range: (u32, u32),
    /// Shifts per term in the main QMC run.
    pub shifts: usize,
    pub min_level: usize,
    pub max_level: usize,
    /// Skip the bias rule and use this finest level.
    pub fixed_level: Option<usize>,
    /// Reallocation rounds of the MC drivers with measured variances.
    pub topup_rounds: usize,
    /// Maximum number of `N` doublings of the QMC drivers.
    pub max_doublings: usize,
    pub fit_window: FitWindow,
    /// Shells entering the bias extrapolation.
    pub bias_tail_points: usize,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        EstimatorParams {
            seed: 0,
            replica: 0,
            screen_samples: 200,
            screen_shifts: 16,
            screen_log2_points: 5,
            screen_max_level: None,
            p_log2_range: (5, 10),
            shifts: 16,
            min_level: 0,
            max_level: 12,
            fixed_level: None,
            topup_rounds: 3,
            max_doublings: 60,
            fit_window: FitWindow::default(),
            bias_tail_points: 3,
        }
    }
}

impl EstimatorParams {
    pub fn validate(&self) -> Result<()> {
        if self.screen_samples < 2 {
            return Err(Error::Config("screen_samples must be at least 2".into()));
        }
        if self.screen_shifts < 2 || self.shifts < 2 {
            return Err(Error::Config("QMC drivers need at least 2 shifts".into()));
        }
        let (lo, hi) = self.p_log2_range;
        if hi < lo + 2 || hi > crate::sampler::MAX_LOG2_POINTS {
            return Err(Error::Config(format!("p_log2_range ({lo}, {hi}) must span at least 3 point counts")));
        }
        if self.min_level > self.max_level {
            return Err(Error::Config("min_level exceeds max_level".into()));
        }
        if let Some(l) = self.fixed_level {
            if l > self.max_level {
                return Err(Error::Config(format!("fixed_level {l} exceeds max_level {}", self.max_level)));
            }
        }
        Ok(())
    }

    pub fn screen_level(&self, d: usize, driver: Driver) -> usize {
        self.screen_max_level.unwrap_or(match driver {
            Driver::Mc | Driver::Mlmc | Driver::Mlqmc => 7usize.saturating_sub(d).max(3),
            Driver::Mimc | Driver::Miqmc | Driver::MlmcCombination => 2 * d + 4,
        })
    }
}

/// Split of the mean squared error target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceBudget {
    pub bias_sq: f64,
    pub variance: f64,
    pub eps_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub driver: Driver,
    pub eps: f64,
    pub estimate: f64,
    pub levels: Vec<LevelRecord>,
    #[serde(rename = "L")]
    pub finest_level: usize,
    pub bias_estimate: f64,
    pub variance_budget: VarianceBudget,
    /// `bias_sq + variance <= eps_sq`.
    pub within_budget: bool,
    /// Measured solver work of the final samples.
    pub total_cost: f64,
    /// Idealized work of the final samples.
    pub modeled_cost: f64,
    /// Idealized work of the first allocation, before any top-up.
    pub planned_modeled_cost: f64,
    pub screening_cost: f64,
    /// Exponent used by the allocation (1 for MC drivers).
    pub p: f64,
    pub fitted_rates: Option<RateFit>,
    pub bias_model: Option<BiasModel>,
    pub notes: Vec<String>,
    pub config_echo: EstimatorParams,
}
