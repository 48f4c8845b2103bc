//! Deterministic critical quantities: Λ and its roots, the critical rates,
//! region membership on a t grid, the moderate-deviation variances, discrete
//! Legendre transforms and the log-convexity check.
//!
//! Every expectation over ξ₀ is an exact weighted sum under the stationary
//! law of the environment process.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::env_model::{EnvironmentModel, OffspringLaw};
use crate::numerics::{bisect, logsumexp_iter};

pub const DEFAULT_SEARCH_BOUND: f64 = 50.0;
pub const GAMMA_GRID: [f64; 6] = [1.01, 1.05, 1.1, 1.25, 1.5, 2.0];

const ROOT_TOL: f64 = 1e-13;
const NORMALIZED_TOL: f64 = 1e-10;
const CENTERING_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error("Λ(0) = {lambda0} is not positive; the process is not supercritical")]
    Subcritical { lambda0: f64 },
    #[error("search bound must be finite and positive, got {bound}")]
    InvalidBound { bound: f64 },
    #[error("state {state} is not normalized: log m(1) = {log_m1}")]
    NotNormalized { state: usize, log_m1: f64 },
    #[error("quantity requires an i.i.d. environment")]
    NotIid,
    #[error("p must be >= {min}, got {p}")]
    InvalidP { p: f64, min: f64 },
    #[error("state {state} is not centered: E_ξ Σ L = {mean}")]
    NotCentered { state: usize, mean: f64 },
    #[error("annealed centering violated: {what} = {mean}")]
    NotCenteredAnnealed { what: &'static str, mean: f64 },
    #[error("{what} is not finite")]
    NonFinite { what: &'static str },
    #[error("legendre transform needs at least two samples")]
    TooFewSamples,
}

/// `Λ(t) = E log m₀(t)`.
pub fn lambda_fn(model: &EnvironmentModel, t: f64) -> f64 {
    model.expect(|l| l.log_m(t))
}

/// `Λ′(t) = E m₀′(t)/m₀(t)`.
pub fn lambda_prime(model: &EnvironmentModel, t: f64) -> f64 {
    model.expect(|l| l.log_m_derivative(t))
}

/// `g(t) = tΛ′(t) − Λ(t)`; nonincreasing on (−∞, 0] and nondecreasing on [0, ∞).
pub fn g_function(model: &EnvironmentModel, t: f64) -> f64 {
    t * lambda_prime(model, t) - lambda_fn(model, t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalInterval {
    pub t_minus: f64,
    pub t_plus: f64,
    /// True when g < 0 on all of [−bound, 0), so t₋ is reported as −∞.
    pub minus_unbounded: bool,
    pub plus_unbounded: bool,
}

impl CriticalInterval {
    pub fn contains(&self, t: f64) -> bool {
        t > self.t_minus && t < self.t_plus
    }
}

pub fn critical_interval(model: &EnvironmentModel, search_bound: f64) -> Result<CriticalInterval, AnalyticsError> {
    if !(search_bound.is_finite() && search_bound > 0.0) {
        return Err(AnalyticsError::InvalidBound { bound: search_bound });
    }
    let lambda0 = lambda_fn(model, 0.0);
    if !(lambda0 > 0.0) {
        return Err(AnalyticsError::Subcritical { lambda0 });
    }
    let g = |t: f64| g_function(model, t);
    let side = |edge: f64| -> (f64, bool) {
        let g_edge = g(edge);
        if g_edge.is_nan() {
            (f64::NAN, false)
        } else if g_edge < 0.0 {
            (edge.signum() * f64::INFINITY, true)
        } else {
            (bisect(g, 0.0, edge, ROOT_TOL), false)
        }
    };
    let (t_plus, plus_unbounded) = side(search_bound);
    let (t_minus, minus_unbounded) = side(-search_bound);
    if t_plus.is_nan() || t_minus.is_nan() {
        return Err(AnalyticsError::NonFinite { what: "g(t) at the search bound" });
    }
    Ok(CriticalInterval {
        t_minus,
        t_plus,
        minus_unbounded,
        plus_unbounded,
    })
}

fn require_normalized(model: &EnvironmentModel) -> Result<(), AnalyticsError> {
    for (state, law) in model.states().iter().enumerate() {
        let log_m1 = law.log_m(1.0);
        if !(log_m1.abs() <= NORMALIZED_TOL) {
            return Err(AnalyticsError::NotNormalized { state, log_m1 });
        }
    }
    Ok(())
}

/// `log E[exp(h(ξ₀))]` over the stationary law.
fn log_expect_exp<F: Fn(&OffspringLaw) -> f64>(model: &EnvironmentModel, h: F) -> f64 {
    logsumexp_iter(
        model
            .states()
            .iter()
            .zip(model.stationary())
            .filter(|(_, &w)| w > 0.0)
            .map(|(l, &w)| w.ln() + h(l)),
    )
}

/// `ρ_c = exp(−Λ̄(2)/2)` of a model normalized at 1.
pub fn rho_c(model_normalized: &EnvironmentModel) -> Result<f64, AnalyticsError> {
    require_normalized(model_normalized)?;
    Ok((-0.5 * lambda_fn(model_normalized, 2.0)).exp())
}

/// `ρ₀(p) = min{(E m̄₀(p))^{−1/p}, (E m̄₀(2)^{p/2})^{−1/p}}`, i.i.d. environments only.
pub fn rho_0(model_normalized: &EnvironmentModel, p: f64) -> Result<f64, AnalyticsError> {
    if !model_normalized.is_iid() {
        return Err(AnalyticsError::NotIid);
    }
    if !(p >= 2.0) || !p.is_finite() {
        return Err(AnalyticsError::InvalidP { p, min: 2.0 });
    }
    require_normalized(model_normalized)?;
    let first = log_expect_exp(model_normalized, |l| l.log_m(p));
    let second = log_expect_exp(model_normalized, |l| 0.5 * p * l.log_m(2.0));
    Ok((-first.max(second) / p).exp())
}

/// Region membership at one t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionFlags {
    pub t: f64,
    pub in_i: bool,
    /// Witness γ from [`GAMMA_GRID`] with E[m₀(γt)/m₀(t)^γ] < 1, if any.
    pub i_prime_gamma: Option<f64>,
    pub in_i_prime: bool,
    /// E log E_ξ W₁(t)² < ∞.
    pub in_omega1: bool,
    /// E Z̃₁(t)² < ∞.
    pub in_omega1_prime: bool,
    pub in_omega2: bool,
}

/// Tests membership of `t` in I, I′, Ω₁, Ω₁′ and Ω₂.
///
/// I′ is scanned over a finite γ grid, which can miss witnesses but never
/// reports a false one. Ω₁ and Ω₁′ use γ = 2, where both families have
/// closed forms. Ω₂ holds wherever every state's transform is finite near
/// `t`: both families have entire Laplace transforms and a Poisson or finite
/// count, so E Z̃₁ log⁺ Z̃₁ ≤ E Z̃₁² < ∞.
pub fn region_tests(model: &EnvironmentModel, interval: &CriticalInterval, t: f64) -> RegionFlags {
    let i_prime_gamma = GAMMA_GRID.iter().copied().find(|&gamma| {
        let v = log_expect_exp(model, |l| l.log_m(gamma * t) - gamma * l.log_m(t));
        v < 0.0
    });
    let omega1 = model.expect(|l| l.w1_second_moment(t).ln());
    let omega1_prime = log_expect_exp(model, |l| 2.0 * l.log_m(t) + l.w1_second_moment(t).ln());
    let transform_finite = |x: f64| model.states().iter().all(|l| l.log_m(x).is_finite());
    let eps = 1e-3 * (1.0 + t.abs());
    RegionFlags {
        t,
        in_i: interval.contains(t),
        i_prime_gamma,
        in_i_prime: i_prime_gamma.is_some(),
        in_omega1: omega1.is_finite(),
        in_omega1_prime: omega1_prime.is_finite(),
        in_omega2: transform_finite(t - eps) && transform_finite(t + eps),
    }
}

fn centering_scale(law: &OffspringLaw) -> f64 {
    1.0 + law.second_displacement_sum().sqrt() * law.mean_offspring().sqrt()
}

/// Checks E_ξ Σ Lᵢ = 0 for every state with positive weight.
pub fn check_quenched_centering(model: &EnvironmentModel) -> Result<(), AnalyticsError> {
    for (state, (law, &w)) in model.states().iter().zip(model.stationary()).enumerate() {
        let mean = law.first_displacement_sum();
        if w > 0.0 && mean.abs() > CENTERING_TOL * centering_scale(law) {
            return Err(AnalyticsError::NotCentered { state, mean });
        }
    }
    Ok(())
}

fn annealed_scale(model: &EnvironmentModel) -> f64 {
    1.0 + model.expect(centering_scale)
}

/// Checks E[(1/π₀) Σ Lᵢ] = 0.
pub fn check_annealed_centering_per_pi(model: &EnvironmentModel) -> Result<(), AnalyticsError> {
    let mean = model.expect(|l| l.first_displacement_sum() / l.mean_offspring());
    if mean.abs() > CENTERING_TOL * annealed_scale(model) {
        return Err(AnalyticsError::NotCenteredAnnealed {
            what: "E (1/π) Σ L",
            mean,
        });
    }
    Ok(())
}

/// Checks E Σ Lᵢ = 0.
pub fn check_annealed_centering(model: &EnvironmentModel) -> Result<(), AnalyticsError> {
    let mean = model.expect(|l| l.first_displacement_sum());
    if mean.abs() > CENTERING_TOL * annealed_scale(model) {
        return Err(AnalyticsError::NotCenteredAnnealed { what: "E Σ L", mean });
    }
    Ok(())
}

/// `σ² = E[(1/π₀) Σ Lᵢ²]`; requires per-state centering.
pub fn sigma2(model: &EnvironmentModel) -> Result<f64, AnalyticsError> {
    check_quenched_centering(model)?;
    Ok(model.expect(|l| l.second_displacement_moment()))
}

/// `σ² = E[(1/π₀) Σ Lᵢ²]` under the weaker centering E[(1/π₀) Σ Lᵢ] = 0.
pub fn annealed_sigma2(model: &EnvironmentModel) -> Result<f64, AnalyticsError> {
    check_annealed_centering_per_pi(model)?;
    Ok(model.expect(|l| l.second_displacement_moment()))
}

/// `σ̃² = E Σ Lᵢ² / E π₀`; requires E Σ Lᵢ = 0.
pub fn tilde_sigma2(model: &EnvironmentModel) -> Result<f64, AnalyticsError> {
    check_annealed_centering(model)?;
    Ok(model.expect(|l| l.second_displacement_sum()) / model.expect(|l| l.mean_offspring()))
}

/// Discrete Legendre transform `x ↦ max_j (t_j x − v_j)` of sampled values.
#[derive(Debug, Clone, PartialEq)]
pub struct Legendre {
    samples: Vec<(f64, f64)>,
    /// Largest violation of discrete convexity found in the input.
    pub max_convexity_violation: f64,
    pub convexity_warning: bool,
}

impl Legendre {
    pub fn eval(&self, x: f64) -> f64 {
        self.samples
            .iter()
            .map(|&(t, v)| t * x - v)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Range of x whose supremum is attained strictly inside the grid:
    /// between the first and last secant slopes.
    pub fn interior(&self) -> (f64, f64) {
        let n = self.samples.len();
        let slope = |a: (f64, f64), b: (f64, f64)| (b.1 - a.1) / (b.0 - a.0);
        (
            slope(self.samples[0], self.samples[1]),
            slope(self.samples[n - 2], self.samples[n - 1]),
        )
    }
}

pub fn legendre(samples: &[(f64, f64)]) -> Result<Legendre, AnalyticsError> {
    if samples.len() < 2 {
        return Err(AnalyticsError::TooFewSamples);
    }
    if samples.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
        return Err(AnalyticsError::NonFinite { what: "legendre sample" });
    }
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.0.total_cmp(&b.0));
    let scale = 1.0 + s.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    let worst = interpolation_gaps(&s).fold(0.0f64, f64::max);
    Ok(Legendre {
        max_convexity_violation: worst,
        convexity_warning: worst > 1e-9 * scale,
        samples: s,
    })
}

/// `v(x₁) − [λ v(x₀) + (1−λ) v(x₂)]` over adjacent triples; positive means a
/// convexity violation. Works on non-uniform grids.
fn interpolation_gaps(s: &[(f64, f64)]) -> impl Iterator<Item = f64> + '_ {
    s.windows(3).map(|w| {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        let (x2, y2) = w[2];
        let lam = (x2 - x1) / (x2 - x0);
        y1 - (lam * y0 + (1.0 - lam) * y2)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexityReport {
    pub convex: bool,
    /// Largest interpolation gap; positive values are violations.
    pub max_gap: f64,
    /// Triples where log f is linear to within the tolerance.
    pub equality_cases: usize,
    pub checked: usize,
}

pub const CONVEXITY_TOL: f64 = 1e-10;

/// `log f(x)` with `f(x) = E m₀(t)^x m₀(α + βx)`.
pub fn log_mixed_moment(model: &EnvironmentModel, t: f64, alpha: f64, beta: f64, x: f64) -> f64 {
    log_expect_exp(model, |l| x * l.log_m(t) + l.log_m(alpha + beta * x))
}

/// Checks log-convexity of x ↦ E m₀(t)^x m₀(α + βx) on adjacent triples of `x_grid`.
pub fn log_convexity_check(
    model: &EnvironmentModel,
    t: f64,
    alpha: f64,
    beta: f64,
    x_grid: &[f64],
) -> Result<ConvexityReport, AnalyticsError> {
    let mut pts: Vec<(f64, f64)> = x_grid
        .iter()
        .map(|&x| (x, log_mixed_moment(model, t, alpha, beta, x)))
        .collect();
    if pts.iter().any(|p| !p.1.is_finite()) {
        return Err(AnalyticsError::NonFinite { what: "log f on the grid" });
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let gaps: Vec<f64> = interpolation_gaps(&pts).collect();
    let max_gap = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(ConvexityReport {
        convex: gaps.iter().all(|&g| g <= CONVEXITY_TOL),
        max_gap,
        equality_cases: gaps.iter().filter(|g| g.abs() <= CONVEXITY_TOL).count(),
        checked: gaps.len(),
    })
}

/// Everything the `rates` report prints.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub interval: CriticalInterval,
    pub t_star: f64,
    pub rho_c: f64,
    /// Empty for non-i.i.d. environments.
    pub rho_0: BTreeMap<String, f64>,
    pub sigma2: Option<f64>,
    pub tilde_sigma2: Option<f64>,
    pub regions: Vec<RegionFlags>,
}

pub fn rate_report(
    model: &EnvironmentModel,
    t_star: f64,
    p_values: &[f64],
    t_grid: &[f64],
    search_bound: f64,
) -> Result<RateReport, AnalyticsError> {
    let interval = critical_interval(model, search_bound)?;
    let normalized = model
        .normalized_at(t_star)
        .map_err(|_| AnalyticsError::NonFinite { what: "m(t_star)" })?;
    let rho_c = rho_c(&normalized)?;
    let mut rho_0_map = BTreeMap::new();
    if model.is_iid() {
        for &p in p_values {
            rho_0_map.insert(format!("{p}"), rho_0(&normalized, p)?);
        }
    }
    Ok(RateReport {
        interval,
        t_star,
        rho_c,
        rho_0: rho_0_map,
        sigma2: sigma2(model).ok(),
        tilde_sigma2: tilde_sigma2(model).ok(),
        regions: t_grid.iter().map(|&t| region_tests(model, &interval, t)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_model::{Process, TableAtom};

    fn pg(l: f64, mu: f64, s: f64) -> OffspringLaw {
        OffspringLaw::poisson_gaussian(l, mu, s).unwrap()
    }

    fn iid(states: Vec<OffspringLaw>) -> EnvironmentModel {
        let k = states.len();
        EnvironmentModel::new(states, Process::Iid { weights: vec![1.0 / k as f64; k] }).unwrap()
    }

    #[test]
    fn lambda_closed_forms() {
        let m = EnvironmentModel::single(pg(2.0, 0.0, 1.0));
        assert!((lambda_fn(&m, 1.3) - (2f64.ln() + 0.845)).abs() < 1e-14);
        assert_eq!(lambda_prime(&m, 0.0), 0.0);
        let two = iid(vec![pg(3.0, 0.0, 1.0), pg(5.0, 0.0, 1.0)]);
        assert!((lambda_fn(&two, 0.0) - 1.354_025_100_551_105_5).abs() < 1e-14);
    }

    #[test]
    fn critical_interval_quadratic_case() {
        let m = EnvironmentModel::single(pg(2.0, 0.0, 1.0));
        let ci = critical_interval(&m, DEFAULT_SEARCH_BOUND).unwrap();
        let exact = (2.0 * 2f64.ln()).sqrt();
        assert!((ci.t_plus - exact).abs() < 1e-12);
        assert!((ci.t_minus + exact).abs() < 1e-12);
        assert!(!ci.plus_unbounded && !ci.minus_unbounded);
    }

    #[test]
    fn subcritical_is_rejected() {
        let m = EnvironmentModel::single(OffspringLaw::finite_table(vec![TableAtom::new(1.0, vec![0.0])]).unwrap());
        assert!(matches!(critical_interval(&m, 50.0), Err(AnalyticsError::Subcritical { .. })));
    }

    #[test]
    fn unbounded_side_is_flagged() {
        // m(t) = 1 + e^t/2: g < 0 for every t < 0, g → log 2 as t → ∞
        let law = OffspringLaw::finite_table(vec![
            TableAtom::new(0.5, vec![0.0, 0.0]),
            TableAtom::new(0.5, vec![1.0]),
        ])
        .unwrap();
        let ci = critical_interval(&EnvironmentModel::single(law), 50.0).unwrap();
        assert!(ci.minus_unbounded);
        assert_eq!(ci.t_minus, f64::NEG_INFINITY);
        assert!(ci.t_plus.is_finite());
    }

    #[test]
    fn rho_c_requires_normalization() {
        let m = EnvironmentModel::single(pg(4.0, 0.0, 1.0));
        assert!(matches!(rho_c(&m), Err(AnalyticsError::NotNormalized { .. })));
        let n = m.normalized_at(1.0).unwrap();
        assert!((rho_c(&n).unwrap() - (4.0 / std::f64::consts::E).sqrt()).abs() < 1e-12);
        assert!((rho_0(&n, 2.0).unwrap() - (4.0 / std::f64::consts::E).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rho_0_requires_iid() {
        let law = pg(4.0, 0.0, 1.0);
        let m = EnvironmentModel::new(
            vec![law.clone(), law],
            Process::MarkovChain {
                matrix: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            },
        )
        .unwrap()
        .normalized_at(1.0)
        .unwrap();
        assert_eq!(rho_0(&m, 2.0), Err(AnalyticsError::NotIid));
        assert!(rho_c(&m).is_ok());
    }

    #[test]
    fn region_flags_at_zero_and_outside() {
        let m = EnvironmentModel::single(pg(2.0, 0.0, 1.0));
        let ci = critical_interval(&m, 50.0).unwrap();
        let r0 = region_tests(&m, &ci, 0.0);
        assert!(r0.in_i && r0.in_i_prime && r0.in_omega1 && r0.in_omega1_prime && r0.in_omega2);
        assert!(!region_tests(&m, &ci, 2.0).in_i);
    }

    #[test]
    fn sigma_values() {
        let binary = EnvironmentModel::single(OffspringLaw::finite_table(vec![TableAtom::new(1.0, vec![1.0, -1.0])]).unwrap());
        assert_eq!(sigma2(&binary).unwrap(), 1.0);
        let pair = iid(vec![pg(2.0, 0.0, 1.0), pg(8.0, 0.0, 2.0)]);
        assert!((sigma2(&pair).unwrap() - 2.5).abs() < 1e-14);
        assert!((tilde_sigma2(&pair).unwrap() - 3.4).abs() < 1e-14);
    }

    #[test]
    fn centering_violation_names_state() {
        let m = iid(vec![pg(2.0, 0.0, 1.0), pg(2.0, 0.3, 1.0)]);
        assert!(matches!(sigma2(&m), Err(AnalyticsError::NotCentered { state: 1, .. })));
    }

    #[test]
    fn legendre_of_quadratic() {
        let grid: Vec<(f64, f64)> = (-500..=500)
            .map(|i| {
                let t = i as f64 * 0.01;
                (t, t * t)
            })
            .collect();
        let lt = legendre(&grid).unwrap();
        assert!(!lt.convexity_warning);
        assert!((lt.eval(1.0) - 0.25).abs() < 1e-4);
        assert_eq!(lt.eval(0.0), 0.0);
    }

    #[test]
    fn legendre_flags_concave_input() {
        let grid: Vec<(f64, f64)> = (-10..=10).map(|i| (i as f64, -((i * i) as f64))).collect();
        assert!(legendre(&grid).unwrap().convexity_warning);
    }

    #[test]
    fn mixed_moment_single_state_linear_case() {
        let m = EnvironmentModel::single(pg(3.0, 0.0, 1.0));
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.1).collect();
        let rep = log_convexity_check(&m, 1.0, 0.5, 0.0, &grid).unwrap();
        assert!(rep.convex);
        assert_eq!(rep.equality_cases, rep.checked);
    }
}
