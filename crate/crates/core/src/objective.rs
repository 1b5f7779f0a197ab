//! The clustering objective `L_f = Σ f(M_i)` and the approximate entropy
//! lower bound built from it.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::clustering::{ClusterModel, NeighborCache};
use crate::error::{KmeError, Result};

pub const DEFAULT_LOG_FLOOR: f64 = 1e-12;

/// The concave function applied to each weighted nearest distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FChoice {
    Log,
    #[default]
    Sqrt,
}

impl std::str::FromStr for FChoice {
    type Err = KmeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "log" => Ok(FChoice::Log),
            "sqrt" => Ok(FChoice::Sqrt),
            other => Err(KmeError::InvalidConfig(format!("unknown f: {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub f_choice: FChoice,
    pub log_floor: f64,
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        Self {
            f_choice: FChoice::Sqrt,
            log_floor: DEFAULT_LOG_FLOOR,
        }
    }
}

impl ObjectiveSpec {
    pub fn new(f_choice: FChoice, log_floor: f64) -> Result<Self> {
        if !(log_floor.is_finite() && log_floor > 0.0) {
            return Err(KmeError::InvalidHyperparameter {
                name: "log_floor",
                value: log_floor,
            });
        }
        Ok(Self {
            f_choice,
            log_floor,
        })
    }

    pub fn sqrt() -> Self {
        Self::default()
    }

    pub fn log() -> Self {
        Self {
            f_choice: FChoice::Log,
            log_floor: DEFAULT_LOG_FLOOR,
        }
    }

    /// `f` with its domain clamp: `√max(x, 0)` or `log max(x, floor)`.
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match self.f_choice {
            FChoice::Sqrt => x.max(0.0).sqrt(),
            FChoice::Log => x.max(self.log_floor).ln(),
        }
    }

    /// `Σ f(M_i)` over a slice of weighted nearest distances.
    pub fn sum(&self, nearest_dist: &[f64]) -> f64 {
        nearest_dist.iter().map(|&m| self.apply(m)).sum()
    }
}

/// `Σ_i f(M_i)` for the cached weighted nearest distances.
pub fn objective_value(cache: &NeighborCache, spec: &ObjectiveSpec) -> f64 {
    spec.sum(&cache.nearest_dist)
}

/// `log(π^{d/2} / Γ(d/2 + 1))`, the log-volume of the unit `d`-ball.
pub fn log_unit_ball_volume(d: usize) -> Result<f64> {
    if d == 0 {
        return Err(KmeError::ZeroDimension);
    }
    let half = d as f64 / 2.0;
    Ok(half * PI.ln() - libm::lgamma(half + 1.0))
}

/// `(d/k)·Σ log max(M_i, floor) + log V_d − d`.
///
/// Always uses the logarithm, whatever `f` the reward engine runs with.
pub fn entropy_lower_bound(model: &ClusterModel, cache: &NeighborCache, log_floor: f64) -> f64 {
    let spec = ObjectiveSpec {
        f_choice: FChoice::Log,
        log_floor,
    };
    bound_from_log_objective(objective_value(cache, &spec), model.k(), model.d())
}

pub(crate) fn bound_from_log_objective(log_objective: f64, k: usize, d: usize) -> f64 {
    let d_f = d as f64;
    d_f / k as f64 * log_objective
        + log_unit_ball_volume(d).expect("model dimension is positive")
        - d_f
}
