//! Scalar fitness: `accuracy^n`, optionally divided by latency (ms) or energy (mJ).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imc::CostReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CostMetric {
    #[serde(rename = "acc")]
    None,
    #[serde(rename = "acc_lat")]
    Latency,
    #[serde(rename = "acc_en")]
    Energy,
}

impl CostMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            CostMetric::None => "acc",
            CostMetric::Latency => "acc_lat",
            CostMetric::Energy => "acc_en",
        }
    }
}

impl fmt::Display for CostMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CostMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "acc" => Ok(CostMetric::None),
            "acc_lat" => Ok(CostMetric::Latency),
            "acc_en" => Ok(CostMetric::Energy),
            _ => Err(format!("unknown fitness function {s:?} (expected acc, acc_lat or acc_en)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitnessSpec {
    pub accuracy_exponent: f64,
    #[serde(rename = "ff")]
    pub cost_metric: CostMetric,
}

impl Default for FitnessSpec {
    fn default() -> Self {
        Self {
            accuracy_exponent: 1.0,
            cost_metric: CostMetric::None,
        }
    }
}

impl FitnessSpec {
    pub fn new(cost_metric: CostMetric, accuracy_exponent: f64) -> Self {
        Self {
            accuracy_exponent,
            cost_metric,
        }
    }

    pub fn check(&self) -> Result<(), FitnessError> {
        if self.accuracy_exponent.is_finite() && self.accuracy_exponent > 0.0 {
            Ok(())
        } else {
            Err(FitnessError::Exponent(self.accuracy_exponent))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitnessError {
    #[error("accuracy {0} outside [0, 1]")]
    Accuracy(f64),
    #[error("{metric} must be positive, got {value} (degenerate network)")]
    Cost { metric: &'static str, value: f64 },
    #[error("accuracy exponent must be positive, got {0}")]
    Exponent(f64),
}

/// Fitness from accuracy (fraction), latency (ms) and energy (mJ).
pub fn fitness_eval(
    accuracy: f64,
    latency_ms: f64,
    energy_mj: f64,
    spec: &FitnessSpec,
) -> Result<f64, FitnessError> {
    spec.check()?;
    if !(0.0..=1.0).contains(&accuracy) {
        return Err(FitnessError::Accuracy(accuracy));
    }
    let numerator = accuracy.powf(spec.accuracy_exponent);
    let (metric, cost) = match spec.cost_metric {
        CostMetric::None => return Ok(numerator),
        CostMetric::Latency => ("latency", latency_ms),
        CostMetric::Energy => ("energy", energy_mj),
    };
    if !(cost.is_finite() && cost > 0.0) {
        return Err(FitnessError::Cost {
            metric,
            value: cost,
        });
    }
    Ok(numerator / cost)
}

pub fn fitness_of(accuracy: f64, cost: &CostReport, spec: &FitnessSpec) -> Result<f64, FitnessError> {
    fitness_eval(accuracy, cost.latency_ms, cost.energy_mj, spec)
}
