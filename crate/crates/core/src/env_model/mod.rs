//! Reproduction laws per environment state and the ergodic processes that
//! drive them, with samplers and closed-form moment functionals.
//!
//! The free functions mirror the law methods but validate their inputs;
//! hot loops call the methods directly.

mod law;
mod model;

use rand::Rng;
use thiserror::Error;

pub use law::{FiniteTable, LawSampler, OffspringLaw, PoissonGaussian, TableAtom};
pub use model::{EnvironmentModel, EnvironmentPath, Process};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid {field}: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("atom {atom}: {reason}")]
    InvalidAtom { atom: usize, reason: String },
    #[error("atom probabilities sum to {sum}, expected 1 within 1e-12")]
    ProbabilitySum { sum: f64 },
    #[error("mean offspring count must be positive")]
    ZeroMeanOffspring,
    #[error("model has no states")]
    EmptyModel,
    #[error("environment process: {0}")]
    Process(String),
    #[error("markov transition matrix is reducible")]
    Reducible,
    #[error("unknown state index {state}")]
    UnknownState { state: usize },
    #[error("{what} must be finite")]
    NonFiniteInput { what: &'static str },
    #[error("m(t) is not finite at t = {t}")]
    NonFiniteTransform { t: f64 },
    #[error("state {state}: m(t) is not finite at t = {t}")]
    NonFiniteState { state: usize, t: f64 },
    #[error("pi = 0: law has no expected offspring")]
    ZeroPi,
    #[error("delta must be positive, got {delta}")]
    NonPositiveDelta { delta: f64 },
}

fn finite(t: f64, what: &'static str) -> Result<f64, ModelError> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(ModelError::NonFiniteInput { what })
    }
}

/// `m(t) = E_ξ Σᵢ e^{tLᵢ}`. May overflow to `inf`; see [`log_laplace_m`].
pub fn laplace_m(law: &OffspringLaw, t: f64) -> Result<f64, ModelError> {
    Ok(law.log_m(finite(t, "t")?).exp())
}

pub fn log_laplace_m(law: &OffspringLaw, t: f64) -> Result<f64, ModelError> {
    Ok(law.log_m(finite(t, "t")?))
}

/// `m'(t) / m(t)`.
pub fn m_log_derivative(law: &OffspringLaw, t: f64) -> Result<f64, ModelError> {
    Ok(law.log_m_derivative(finite(t, "t")?))
}

/// `(1/π) E_ξ Σᵢ Lᵢ²`.
pub fn second_displacement_moment(law: &OffspringLaw) -> Result<f64, ModelError> {
    if law.mean_offspring() <= 0.0 {
        return Err(ModelError::ZeroPi);
    }
    Ok(law.second_displacement_moment())
}

/// `(1/π) E_ξ Σᵢ e^{δ|Lᵢ|}`; may be `+inf` only through overflow.
pub fn exp_abs_moment(law: &OffspringLaw, delta: f64) -> Result<f64, ModelError> {
    let delta = finite(delta, "delta")?;
    if delta <= 0.0 {
        return Err(ModelError::NonPositiveDelta { delta });
    }
    Ok(law.exp_abs_moment(delta))
}

/// `E_ξ W₁(t)²`.
pub fn quenched_w1_second_moment(law: &OffspringLaw, t: f64) -> Result<f64, ModelError> {
    Ok(law.w1_second_moment(finite(t, "t")?))
}

/// One draw of (N, L₁..L_N).
pub fn sample_offspring<R: Rng + ?Sized>(law: &OffspringLaw, rng: &mut R) -> (usize, Vec<f64>) {
    let mut out = Vec::new();
    let n = law.sampler().sample_into(rng, &mut out);
    (n, out)
}

pub fn sample_env_path(model: &EnvironmentModel, horizon: usize, seed: u64) -> EnvironmentPath {
    model.sample_path(horizon, seed)
}

/// Rescales every state so that its transform equals 1 at 1; the additive
/// martingale at 1 of the result equals the original one at `t_star`.
pub fn normalize_at(model: &EnvironmentModel, t_star: f64) -> Result<EnvironmentModel, ModelError> {
    model.normalized_at(t_star)
}
