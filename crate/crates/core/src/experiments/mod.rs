//! Seeded experiments with explicit pass rules.
//!
//! Every experiment is a pure function of its model, its settings and the
//! master seed. Replicates run in parallel, but all reductions are done in
//! replicate order afterwards, so reports do not depend on the pool size.
//! Pass thresholds (4·SE cells, the 30% band, the boundedness ratio 2) are
//! conventions of this crate, not finite-n statements of the limit results.

mod annealed_lp;
mod lp_rate;
mod martingale;
mod mdp;
mod rates;
mod spine_check;
mod u_recursion;
mod uniform;

use thiserror::Error;

use crate::analytics::AnalyticsError;
use crate::env_model::ModelError;
use crate::exact::ExactError;
use crate::simulator::SimError;

pub use annealed_lp::{run_annealed_lp, AnnealedLpConfig, AnnealedLpOutcome, Growth};
pub use lp_rate::{run_lp_rate, AHatDiagnostic, AHatVerdict, LpRateConfig, LpRateOutcome};
pub use martingale::{run_martingale_test, run_simulation, MartingaleConfig, MartingaleOutcome, SimulationConfig, SimulationOutcome};
pub use mdp::{
    a_n, quenched_lambda_hat, run_mdp_annealed_means, run_mdp_population, run_mdp_quenched_means, AnnealedVariant,
    population_target, MdpConfig, MdpEstimate, PopulationMdpConfig, PopulationMdpOutcome, DEFAULT_THETA, DEFAULT_TOLERANCE,
};
pub use rates::{run_rates, RatesConfig, RatesOutcome};
pub use spine_check::{run_spine_check, PoissonKs, SpineCheckConfig, SpineCheckOutcome, SpineFunction};
pub use u_recursion::{run_u_recursion_check, UCheckConfig, UCheckOutcome, URow};
pub use uniform::{run_uniform_convergence, UniformConfig, UniformOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn from_pass(pass: bool) -> Self {
        if pass {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Exact(#[from] ExactError),
    /// Preconditions of the experiment do not hold for this model or setting.
    #[error("refused: {0}")]
    Refused(String),
}

/// A single output cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Bool(bool),
    Text(String),
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::Int(v as i64)
    }
}

impl From<u64> for Value {
    fn from(v: u64) -> Self {
        Value::Int(v as i64)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Self {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// What every experiment hands to the output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub experiment: &'static str,
    pub verdict: Verdict,
    pub table: Table,
    pub summary: Vec<(&'static str, Value)>,
}

pub trait Experiment {
    fn report(&self) -> ExperimentReport;
}

/// `⌊len/3⌋`-element leading and trailing windows of a sequence.
pub(crate) fn thirds(len: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let w = (len / 3).max(1).min(len);
    (0..w, len - w..len)
}
