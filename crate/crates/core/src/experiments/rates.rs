use super::{Experiment, ExperimentError, ExperimentReport, Table, Value, Verdict};
use crate::analytics::{g_function, lambda_fn, lambda_prime, rate_report, RateReport};
use crate::env_model::EnvironmentModel;

#[derive(Debug, Clone, PartialEq)]
pub struct RatesConfig {
    pub t_star: f64,
    pub p_values: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub search_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatesOutcome {
    pub report: RateReport,
    /// `(Λ(t), Λ′(t), g(t))` per grid point.
    pub curves: Vec<(f64, f64, f64)>,
}

/// Closed-form rates and region flags; no sampling.
pub fn run_rates(model: &EnvironmentModel, config: &RatesConfig) -> Result<RatesOutcome, ExperimentError> {
    let report = rate_report(model, config.t_star, &config.p_values, &config.t_grid, config.search_bound)?;
    let curves = config
        .t_grid
        .iter()
        .map(|&t| (lambda_fn(model, t), lambda_prime(model, t), g_function(model, t)))
        .collect();
    Ok(RatesOutcome { report, curves })
}

fn describe_gamma(g: Option<f64>) -> Value {
    match g {
        Some(g) => Value::from(g),
        None => Value::from("none"),
    }
}

impl Experiment for RatesOutcome {
    fn report(&self) -> ExperimentReport {
        let r = &self.report;
        let mut table = Table::new(&[
            "t",
            "lambda",
            "lambda_prime",
            "g",
            "in_I",
            "in_I_prime",
            "i_prime_gamma",
            "in_Omega1",
            "in_Omega1_prime",
            "in_Omega2",
        ]);
        for (flags, &(l, lp, g)) in r.regions.iter().zip(&self.curves) {
            table.push(vec![
                Value::from(flags.t),
                Value::from(l),
                Value::from(lp),
                Value::from(g),
                Value::from(flags.in_i),
                Value::from(flags.in_i_prime),
                describe_gamma(flags.i_prime_gamma),
                Value::from(flags.in_omega1),
                Value::from(flags.in_omega1_prime),
                Value::from(flags.in_omega2),
            ]);
        }
        let mut summary = vec![
            ("t_minus", Value::from(r.interval.t_minus)),
            ("t_plus", Value::from(r.interval.t_plus)),
            ("t_minus_unbounded", Value::from(r.interval.minus_unbounded)),
            ("t_plus_unbounded", Value::from(r.interval.plus_unbounded)),
            ("t_star", Value::from(r.t_star)),
            ("rho_c", Value::from(r.rho_c)),
        ];
        if !r.rho_0.is_empty() {
            let listed: Vec<String> = r.rho_0.iter().map(|(p, v)| format!("p={p}:{v:.16e}")).collect();
            summary.push(("rho_0", Value::from(listed.join(" "))));
        }
        if let Some(s) = r.sigma2 {
            summary.push(("sigma2", Value::from(s)));
        }
        if let Some(s) = r.tilde_sigma2 {
            summary.push(("tilde_sigma2", Value::from(s)));
        }
        ExperimentReport {
            experiment: "rates",
            verdict: Verdict::Pass,
            table,
            summary,
        }
    }
}
