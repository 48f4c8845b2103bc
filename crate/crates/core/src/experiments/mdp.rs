use super::{Experiment, ExperimentError, ExperimentReport, Table, Value, Verdict};
use crate::analytics::{
    annealed_sigma2, critical_interval, region_tests, sigma2, tilde_sigma2, DEFAULT_SEARCH_BOUND,
};
use crate::env_model::EnvironmentModel;
use crate::numerics::NeumaierSum;
use crate::parallel::run_replicates;
use crate::rng::{stream_rng, Stream};
use crate::simulator::for_each_generation;
use crate::stats::median;

pub const DEFAULT_THETA: f64 = 0.6;
pub const DEFAULT_TOLERANCE: f64 = 0.05;
/// Relative band around a nonzero population target.
pub const POPULATION_BAND: f64 = 0.3;
/// Absolute band used when the target is 0.
pub const POPULATION_ZERO_BAND: f64 = 0.3;

/// `a_n = n^θ`.
pub fn a_n(n: usize, theta: f64) -> f64 {
    (n as f64).powf(theta)
}

fn check_theta(theta: f64) -> Result<(), ExperimentError> {
    if theta > 0.5 && theta < 1.0 {
        Ok(())
    } else {
        Err(ExperimentError::Refused(format!("theta = {theta} must lie in (1/2, 1)")))
    }
}

fn check_exp_moment(model: &EnvironmentModel) -> Result<(), ExperimentError> {
    if model.states().iter().all(|l| l.exp_abs_moment(1.0).is_finite()) {
        Ok(())
    } else {
        Err(ExperimentError::Refused("exponential moment of |L| is not finite".into()))
    }
}

fn check_n_list(n_list: &[usize]) -> Result<usize, ExperimentError> {
    match n_list.iter().copied().max() {
        Some(n) if !n_list.contains(&0) => Ok(n),
        _ => Err(ExperimentError::Refused("n list must be non-empty and positive".into())),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdpConfig {
    pub theta: f64,
    pub t_grid: Vec<f64>,
    pub n_list: Vec<usize>,
    /// Environment seed; unused by the annealed variants.
    pub seed: u64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdpEstimate {
    pub label: &'static str,
    pub theta: f64,
    pub t_grid: Vec<f64>,
    pub n_list: Vec<usize>,
    /// `Λ̂_n(t)` indexed `[n][t]`.
    pub values: Vec<Vec<f64>>,
    /// Limiting variance in the target `σ²t²/2`.
    pub variance: f64,
    pub sup_deviation: Vec<f64>,
    pub tolerance: f64,
}

impl MdpEstimate {
    pub fn target(&self, t: f64) -> f64 {
        0.5 * self.variance * t * t
    }

    /// Sup-deviation at the largest n is within tolerance.
    pub fn pass(&self) -> bool {
        let last = self
            .n_list
            .iter()
            .enumerate()
            .max_by_key(|(_, &n)| n)
            .map(|(i, _)| i)
            .expect("non-empty n list");
        self.sup_deviation[last] <= self.tolerance
    }

    fn from_values(
        label: &'static str,
        config: &MdpConfig,
        variance: f64,
        values: Vec<Vec<f64>>,
    ) -> Self {
        let sup_deviation = values
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&config.t_grid)
                    .fold(0.0f64, |m, (v, &t)| m.max((v - 0.5 * variance * t * t).abs()))
            })
            .collect();
        Self {
            label,
            theta: config.theta,
            t_grid: config.t_grid.clone(),
            n_list: config.n_list.clone(),
            values,
            variance,
            sup_deviation,
            tolerance: config.tolerance,
        }
    }
}

/// `(n/a_n²) Σ_{i<n} log(m_{ξᵢ}(a_n t/n)/π_{ξᵢ})` along a given environment prefix.
pub fn quenched_lambda_hat(model: &EnvironmentModel, states: &[usize], theta: f64, t: f64) -> f64 {
    let n = states.len();
    let a = a_n(n, theta);
    let u = a * t / n as f64;
    let sum: NeumaierSum = states.iter().map(|&s| model.law(s).log_m_ratio(u)).collect();
    n as f64 / (a * a) * sum.total()
}

/// Exact scaled quenched cumulants; no trees are simulated.
pub fn run_mdp_quenched_means(model: &EnvironmentModel, config: &MdpConfig) -> Result<MdpEstimate, ExperimentError> {
    check_theta(config.theta)?;
    check_exp_moment(model)?;
    let variance = sigma2(model)?;
    let n_top = check_n_list(&config.n_list)?;
    let path = model.sample_path(n_top, config.seed);
    let values = config
        .n_list
        .iter()
        .map(|&n| {
            config
                .t_grid
                .iter()
                .map(|&t| quenched_lambda_hat(model, &path.states[..n], config.theta, t))
                .collect()
        })
        .collect();
    Ok(MdpEstimate::from_values("quenched", config, variance, values))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnealedVariant {
    /// `n log E[m₀(u)/π₀]`, limit variance σ².
    PerPi,
    /// `n log(E m₀(u) / E π₀)`, limit variance σ̃².
    Ratio,
}

impl AnnealedVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            AnnealedVariant::PerPi => "annealed-per-pi",
            AnnealedVariant::Ratio => "annealed-ratio",
        }
    }
}

fn annealed_log_mean(model: &EnvironmentModel, variant: AnnealedVariant, u: f64) -> f64 {
    match variant {
        AnnealedVariant::PerPi => {
            let excess: NeumaierSum = model
                .states()
                .iter()
                .zip(model.stationary())
                .map(|(l, &w)| w * l.log_m_ratio(u).exp_m1())
                .collect();
            excess.total().ln_1p()
        }
        AnnealedVariant::Ratio => {
            let excess: NeumaierSum = model
                .states()
                .iter()
                .zip(model.stationary())
                .map(|(l, &w)| w * l.mean_offspring() * l.log_m_ratio(u).exp_m1())
                .collect();
            (excess.total() / model.expect(|l| l.mean_offspring())).ln_1p()
        }
    }
}

/// Exact scaled annealed cumulants of an i.i.d. environment.
pub fn run_mdp_annealed_means(
    model: &EnvironmentModel,
    config: &MdpConfig,
    variant: AnnealedVariant,
) -> Result<MdpEstimate, ExperimentError> {
    check_theta(config.theta)?;
    if !model.is_iid() {
        return Err(ExperimentError::Refused("annealed cumulants require an i.i.d. environment".into()));
    }
    check_exp_moment(model)?;
    check_n_list(&config.n_list)?;
    let variance = match variant {
        AnnealedVariant::PerPi => annealed_sigma2(model)?,
        AnnealedVariant::Ratio => tilde_sigma2(model)?,
    };
    let values = config
        .n_list
        .iter()
        .map(|&n| {
            let a = a_n(n, config.theta);
            let nf = n as f64;
            config
                .t_grid
                .iter()
                .map(|&t| nf / (a * a) * nf * annealed_log_mean(model, variant, a * t / nf))
                .collect()
        })
        .collect();
    Ok(MdpEstimate::from_values(variant.as_str(), config, variance, values))
}

impl Experiment for MdpEstimate {
    fn report(&self) -> ExperimentReport {
        let mut table = Table::new(&["n", "a_n", "t", "lambda_hat", "target", "deviation"]);
        for (row, &n) in self.values.iter().zip(&self.n_list) {
            for (&v, &t) in row.iter().zip(&self.t_grid) {
                table.push(vec![
                    Value::from(n),
                    Value::from(a_n(n, self.theta)),
                    Value::from(t),
                    Value::from(v),
                    Value::from(self.target(t)),
                    Value::from(v - self.target(t)),
                ]);
            }
        }
        let worst = self.sup_deviation.iter().copied().fold(0.0f64, f64::max);
        ExperimentReport {
            experiment: match self.label {
                "quenched" => "mdp-quenched",
                _ => "mdp-annealed",
            },
            verdict: Verdict::from_pass(self.pass()),
            table,
            summary: vec![
                ("variant", Value::from(self.label)),
                ("theta", Value::from(self.theta)),
                ("variance", Value::from(self.variance)),
                ("tolerance", Value::from(self.tolerance)),
                ("sup_deviation_all_n", Value::from(worst)),
                ("sup_deviation_last_n", Value::from(*self.sup_deviation.last().expect("non-empty"))),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationMdpConfig {
    pub theta: f64,
    pub a_lo: f64,
    pub a_hi: f64,
    pub n_list: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub cap: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationMdpOutcome {
    pub theta: f64,
    pub variance: f64,
    pub target: f64,
    /// Sorted increasing.
    pub n_list: Vec<usize>,
    /// `Y_n` indexed `[replicate][n]`; `-inf` when `Z_n(a_n A) = 0`.
    pub samples: Vec<Vec<f64>>,
    pub medians: Vec<f64>,
    pub empty_fraction: Vec<f64>,
    pub within_band: bool,
    pub monotone_trend: bool,
}

impl PopulationMdpOutcome {
    pub fn pass(&self) -> bool {
        self.within_band && self.monotone_trend
    }

    pub fn final_median(&self) -> f64 {
        *self.medians.last().expect("non-empty")
    }
}

/// `-inf_{x∈A} x²/(2σ²)`.
pub fn population_target(a_lo: f64, a_hi: f64, variance: f64) -> f64 {
    let closest = if a_lo <= 0.0 && a_hi >= 0.0 {
        0.0
    } else {
        a_lo.abs().min(a_hi.abs())
    };
    -closest * closest / (2.0 * variance)
}

/// Replicate medians of `Y_n = (n/a_n²) log(Z_n(a_n A)/Z_n(ℝ))` on a fixed environment.
pub fn run_mdp_population(
    model: &EnvironmentModel,
    config: &PopulationMdpConfig,
) -> Result<PopulationMdpOutcome, ExperimentError> {
    check_theta(config.theta)?;
    if !(config.a_lo <= config.a_hi) {
        return Err(ExperimentError::Refused("A must be a non-empty interval".into()));
    }
    for (state, law) in model.states().iter().enumerate() {
        if law.extinction_mass() > 0.0 {
            return Err(ExperimentError::Refused(format!(
                "state {state} has P(N = 0) > 0; population MDP requires P(N >= 1) = 1"
            )));
        }
    }
    let interval = critical_interval(model, DEFAULT_SEARCH_BOUND)?;
    if !region_tests(model, &interval, 0.0).in_omega1 {
        return Err(ExperimentError::Refused("0 is not in Omega1".into()));
    }
    check_exp_moment(model)?;
    let variance = sigma2(model)?;
    let mut n_list = config.n_list.clone();
    n_list.sort_unstable();
    n_list.dedup();
    let n_top = check_n_list(&n_list)?;
    let path = model.sample_path(n_top, config.seed);
    let samples = run_replicates(config.replicates, |i| {
        let mut rng = stream_rng(config.seed, Stream::Tree, i);
        let mut out = Vec::with_capacity(n_list.len());
        let mut failure = None;
        for_each_generation(&path, model, n_top, config.cap, &mut rng, |g| {
            let n = g.generation();
            if failure.is_some() || !n_list.contains(&n) {
                return;
            }
            let a = a_n(n, config.theta);
            match g.count_in_interval(a * config.a_lo, a * config.a_hi) {
                Ok(hit) => {
                    let ratio = hit as f64 / g.population() as f64;
                    out.push(n as f64 / (a * a) * ratio.ln());
                }
                Err(e) => failure = Some(e),
            }
        })?;
        match failure {
            Some(e) => Err(ExperimentError::from(e)),
            None => Ok(out),
        }
    })?;
    let target = population_target(config.a_lo, config.a_hi, variance);
    let medians: Vec<f64> = (0..n_list.len())
        .map(|j| median(&samples.iter().map(|s| s[j]).collect::<Vec<_>>()))
        .collect();
    let empty_fraction = (0..n_list.len())
        .map(|j| samples.iter().filter(|s| s[j] == f64::NEG_INFINITY).count() as f64 / samples.len().max(1) as f64)
        .collect();
    let last = *medians.last().expect("non-empty");
    let within_band = if target == 0.0 {
        (last - target).abs() <= POPULATION_ZERO_BAND
    } else {
        (last - target).abs() <= POPULATION_BAND * target.abs()
    };
    let tail = &medians[medians.len().saturating_sub(3)..];
    let monotone_trend = tail.windows(2).all(|w| (w[1] - target).abs() <= (w[0] - target).abs());
    Ok(PopulationMdpOutcome {
        theta: config.theta,
        variance,
        target,
        n_list,
        samples,
        medians,
        empty_fraction,
        within_band,
        monotone_trend,
    })
}

impl Experiment for PopulationMdpOutcome {
    fn report(&self) -> ExperimentReport {
        let mut table = Table::new(&["n", "a_n", "median_Y", "target", "empty_fraction"]);
        for (j, &n) in self.n_list.iter().enumerate() {
            table.push(vec![
                Value::from(n),
                Value::from(a_n(n, self.theta)),
                Value::from(self.medians[j]),
                Value::from(self.target),
                Value::from(self.empty_fraction[j]),
            ]);
        }
        ExperimentReport {
            experiment: "mdp-population",
            verdict: Verdict::from_pass(self.pass()),
            table,
            summary: vec![
                ("theta", Value::from(self.theta)),
                ("sigma2", Value::from(self.variance)),
                ("target", Value::from(self.target)),
                ("final_median", Value::from(self.final_median())),
                ("within_band", Value::from(self.within_band)),
                ("monotone_trend", Value::from(self.monotone_trend)),
                ("replicates", Value::from(self.samples.len())),
            ],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_model::{OffspringLaw, Process, TableAtom};

    fn pg(lambda: f64, s: f64) -> OffspringLaw {
        OffspringLaw::poisson_gaussian(lambda, 0.0, s).unwrap()
    }

    fn pair(first: OffspringLaw, second: OffspringLaw) -> EnvironmentModel {
        EnvironmentModel::new(vec![first, second], Process::Iid { weights: vec![0.5, 0.5] }).unwrap()
    }

    fn config(theta: f64, n_list: Vec<usize>) -> MdpConfig {
        MdpConfig { theta, t_grid: vec![1.0], n_list, seed: 8, tolerance: DEFAULT_TOLERANCE }
    }

    #[test]
    fn quenched_ergodic_average_is_close() {
        let out = run_mdp_quenched_means(&pair(pg(2.0, 1.0), pg(2.0, 2.0)), &config(0.6, vec![10_000])).unwrap();
        assert!((out.values[0][0] - 1.25).abs() < 0.05);
        assert!((out.variance - 2.5).abs() < 1e-12);
    }

    #[test]
    fn annealed_variants_reach_their_targets() {
        let per_pi = run_mdp_annealed_means(&pair(pg(2.0, 1.0), pg(2.0, 2.0)), &config(0.6, vec![10_000]), AnnealedVariant::PerPi)
            .unwrap();
        assert!((per_pi.values[0][0] - 1.25).abs() < 1e-3);
        let ratio = run_mdp_annealed_means(&pair(pg(2.0, 1.0), pg(8.0, 2.0)), &config(0.6, vec![10_000]), AnnealedVariant::Ratio)
            .unwrap();
        assert!((ratio.variance - 3.4).abs() < 1e-12);
        assert!((ratio.values[0][0] - 1.7).abs() < 1e-3);
    }

    #[test]
    fn constant_environment_annealed_equals_quenched() {
        let model = EnvironmentModel::single(
            OffspringLaw::finite_table(vec![TableAtom::new(0.5, vec![1.0, -1.0]), TableAtom::new(0.5, vec![0.5, -0.5])])
                .unwrap(),
        );
        let cfg = MdpConfig { t_grid: vec![-1.0, 0.5, 1.0], ..config(0.7, vec![50, 500]) };
        let quenched = run_mdp_quenched_means(&model, &cfg).unwrap();
        let annealed = run_mdp_annealed_means(&model, &cfg, AnnealedVariant::PerPi).unwrap();
        for (q, a) in quenched.values.iter().flatten().zip(annealed.values.iter().flatten()) {
            assert!((q - a).abs() < 1e-12);
        }
    }

    #[test]
    fn theta_must_be_intermediate() {
        let model = EnvironmentModel::single(pg(2.0, 1.0));
        assert!(matches!(run_mdp_quenched_means(&model, &config(0.5, vec![10])), Err(ExperimentError::Refused(_))));
        assert!(matches!(run_mdp_quenched_means(&model, &config(1.0, vec![10])), Err(ExperimentError::Refused(_))));
    }

    #[test]
    fn population_targets() {
        assert_eq!(population_target(-1.0, 1.0, 1.0), 0.0);
        assert_eq!(population_target(1.0, 2.0, 1.0), -0.5);
        assert_eq!(population_target(1.0, 2.0, 2.0), -0.25);
        assert_eq!(population_target(-3.0, -2.0, 2.0), -1.0);
    }

    #[test]
    fn population_run_with_zero_inside_approaches_zero() {
        let binary =
            EnvironmentModel::single(OffspringLaw::finite_table(vec![TableAtom::new(1.0, vec![1.0, -1.0])]).unwrap());
        let cfg = PopulationMdpConfig {
            theta: 0.6,
            a_lo: -1.0,
            a_hi: 1.0,
            n_list: vec![10, 12, 14],
            replicates: 5,
            seed: 1,
            cap: 1_000_000,
        };
        let out = run_mdp_population(&binary, &cfg).unwrap();
        assert_eq!(out.target, 0.0);
        assert!(out.medians.iter().all(|&m| m <= 0.0 && m > -POPULATION_ZERO_BAND));
        assert!(out.within_band);
    }

    #[test]
    fn extinction_is_refused_for_population_runs() {
        let cfg = PopulationMdpConfig {
            theta: 0.6,
            a_lo: 1.0,
            a_hi: 2.0,
            n_list: vec![10],
            replicates: 5,
            seed: 1,
            cap: 1_000_000,
        };
        let poisson = EnvironmentModel::single(pg(2.0, 1.0));
        assert!(matches!(run_mdp_population(&poisson, &cfg), Err(ExperimentError::Refused(_))));
    }
}
