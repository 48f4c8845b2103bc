use super::{Experiment, ExperimentError, ExperimentReport, Table, Value, Verdict};
use crate::env_model::{EnvironmentModel, OffspringLaw};
use crate::exact::{annealed_u, Route, DEFAULT_SUPPORT_LIMIT};
use crate::parallel::run_replicates;
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::simulator::{w_path_on_grid, Evolver};
use crate::stats::MeanAccumulator;

pub const EXACT_TOL: f64 = 1e-12;
pub const MAX_RELATIVE_SE: f64 = 0.2;
const EXACT_DEPTH: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct UCheckConfig {
    /// Normalize the model at this point first.
    pub t_star: Option<f64>,
    pub t: f64,
    pub s: f64,
    pub r: f64,
    pub n_max: usize,
    pub replicates: usize,
    pub seed: u64,
    pub cap: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct URow {
    pub n: usize,
    /// Monte Carlo `U_n(s,r)`, `U_{n−1}(s,r)`, `U_{n−1}(s,r−1)`.
    pub u_n: f64,
    pub u_prev: f64,
    pub u_prev_lower: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// Delta-method SE of `lhs − rhs`.
    pub se: f64,
    pub max_relative_se: f64,
    pub pass: bool,
    pub exact_u_n: Option<f64>,
    pub exact_pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UCheckOutcome {
    pub a_factor: f64,
    pub b_factor: f64,
    pub b_se: f64,
    pub b_closed_form: bool,
    pub rows: Vec<URow>,
    /// Largest relative gap between the two exact routes at n ≤ 3.
    pub route_gap: Option<f64>,
    /// `|U₁ − B|` relative, from enumeration.
    pub one_step_gap: Option<f64>,
}

impl UCheckOutcome {
    pub fn exact_ok(&self) -> bool {
        self.route_gap.is_none_or(|g| g <= EXACT_TOL) && self.one_step_gap.is_none_or(|g| g <= EXACT_TOL)
    }

    pub fn heavy_tailed(&self) -> bool {
        self.rows.iter().any(|r| r.max_relative_se > MAX_RELATIVE_SE)
    }

    pub fn verdict(&self) -> Verdict {
        let all = self.rows.iter().all(|r| r.pass && r.exact_pass != Some(false)) && self.exact_ok();
        if !all {
            Verdict::Fail
        } else if self.heavy_tailed() {
            Verdict::Inconclusive
        } else {
            Verdict::Pass
        }
    }
}

fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn b_closed_form(model: &EnvironmentModel, t: f64, s: f64, r: f64) -> Option<f64> {
    let mut total = 0.0;
    for (law, &w) in model.states().iter().zip(model.stationary()) {
        if w == 0.0 {
            continue;
        }
        total += w * (s * law.log_m(t) + law.log_w1_moment(t, r)?).exp();
    }
    Some(total)
}

/// Monte Carlo `E m₀(t)^s W₁(t)^r` from one-generation trees.
fn b_monte_carlo(model: &EnvironmentModel, config: &UCheckConfig) -> Result<(f64, f64), ExperimentError> {
    let draws = run_replicates(config.replicates, |i| {
        let path = model.sample_path(1, derive_seed(config.seed, Stream::Auxiliary, i));
        let mut rng = stream_rng(config.seed, Stream::Auxiliary, i);
        let law: &OffspringLaw = model.law(path.states[0]);
        let mut evolver = Evolver::new(&path, model, config.cap);
        evolver.step(&mut rng)?;
        let log_m = law.log_m(config.t);
        let log_w = evolver.current().log_partition(config.t) - log_m;
        Ok::<_, ExperimentError>((config.s * log_m + config.r * log_w).exp())
    })?;
    let acc: MeanAccumulator = draws.into_iter().collect();
    Ok((acc.mean(), acc.se()))
}

/// Checks `U_n^{1/(r−1)} ≤ A^{1/(r−1)} U_{n−1}(s,r)^{1/(r−1)} + B^{1/(r−1)} U_{n−1}(s,r−1)^{1/(r−1)}`.
pub fn run_u_recursion_check(model: &EnvironmentModel, config: &UCheckConfig) -> Result<UCheckOutcome, ExperimentError> {
    if !(config.r > 2.0) {
        return Err(ExperimentError::Refused(format!("r = {} must exceed 2", config.r)));
    }
    if !model.is_iid() {
        return Err(ExperimentError::Refused("the recursion check requires an i.i.d. environment".into()));
    }
    if config.n_max == 0 {
        return Err(ExperimentError::Refused("n_max must be positive".into()));
    }
    let model = match config.t_star {
        Some(ts) => model.normalized_at(ts)?,
        None => model.clone(),
    };
    let (t, s, r) = (config.t, config.s, config.r);
    let a_factor = model.expect(|l| ((s - r) * l.log_m(t) + l.log_m(t * r)).exp());
    let closed = b_closed_form(&model, t, s, r);
    let (b_factor, b_se) = match closed {
        Some(b) => (b, 0.0),
        None => b_monte_carlo(&model, config)?,
    };
    if !(a_factor.is_finite() && b_factor.is_finite()) {
        return Err(ExperimentError::Refused("closed-form factors are not finite".into()));
    }

    let n_max = config.n_max;
    // Per replicate and n: (P_n^s W_n^r, P_n^s W_n^{r−1}).
    let draws = run_replicates(config.replicates, |i| {
        let path = model.sample_path(n_max, derive_seed(config.seed, Stream::Environment, i));
        let mut rng = stream_rng(config.seed, Stream::Tree, i);
        let mp = w_path_on_grid(&path, &model, &[t], n_max, config.cap, &mut rng)?;
        Ok::<_, ExperimentError>(
            (0..=n_max)
                .map(|n| {
                    let log_p = mp.log_p[n][0];
                    let log_w = mp.log_ztilde[n][0] - log_p;
                    ((s * log_p + r * log_w).exp(), (s * log_p + (r - 1.0) * log_w).exp())
                })
                .collect::<Vec<_>>(),
        )
    })?;
    let reps = draws.len() as f64;
    let q = 1.0 / (r - 1.0);
    let all_finite = model.states().iter().all(|l| matches!(l, OffspringLaw::FiniteTable(_)));
    let mut rows = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let cur: MeanAccumulator = draws.iter().map(|d| d[n].0).collect();
        let prev: MeanAccumulator = draws.iter().map(|d| d[n - 1].0).collect();
        let lower: MeanAccumulator = draws.iter().map(|d| d[n - 1].1).collect();
        let (u_n, u_prev, u_low) = (cur.mean(), prev.mean(), lower.mean());
        let lhs = u_n.powf(q);
        let rhs = a_factor.powf(q) * u_prev.powf(q) + b_factor.powf(q) * u_low.powf(q);
        let grad = |u: f64| if u > 0.0 { q * u.powf(q - 1.0) } else { 0.0 };
        let (g_cur, g_prev, g_low) = (grad(u_n), a_factor.powf(q) * grad(u_prev), b_factor.powf(q) * grad(u_low));
        let lin: MeanAccumulator = draws
            .iter()
            .map(|d| g_cur * d[n].0 - g_prev * d[n - 1].0 - g_low * d[n - 1].1)
            .collect();
        let b_term = if b_factor > 0.0 { q * b_factor.powf(q - 1.0) * u_low.powf(q) * b_se } else { 0.0 };
        let se = if reps > 1.0 { (lin.se().powi(2) + b_term.powi(2)).sqrt() } else { 0.0 };
        let rel = |acc: &MeanAccumulator| if acc.mean() > 0.0 { acc.se() / acc.mean() } else { 0.0 };
        let max_relative_se = rel(&cur).max(rel(&prev)).max(rel(&lower));
        let (exact_u_n, exact_pass) = if all_finite && n <= EXACT_DEPTH {
            let ex = |n: usize, r: f64| annealed_u(&model, t, s, r, n, Route::Recursion, DEFAULT_SUPPORT_LIMIT);
            let (un, up, ul) = (ex(n, r)?, ex(n - 1, r)?, ex(n - 1, r - 1.0)?);
            let exact_rhs = a_factor.powf(q) * up.powf(q) + b_factor.powf(q) * ul.powf(q);
            (Some(un), Some(un.powf(q) <= exact_rhs * (1.0 + EXACT_TOL)))
        } else {
            (None, None)
        };
        rows.push(URow {
            n,
            u_n,
            u_prev,
            u_prev_lower: u_low,
            lhs,
            rhs,
            se,
            max_relative_se,
            pass: lhs <= rhs + 2.0 * se,
            exact_u_n,
            exact_pass,
        });
    }

    let (route_gap, one_step_gap) = if all_finite {
        let mut gap = 0.0f64;
        for n in 0..=EXACT_DEPTH.min(n_max) {
            for rr in [r, r - 1.0] {
                let a = annealed_u(&model, t, s, rr, n, Route::Recursion, DEFAULT_SUPPORT_LIMIT)?;
                let b = annealed_u(&model, t, s, rr, n, Route::Enumeration, DEFAULT_SUPPORT_LIMIT)?;
                gap = gap.max(relative_gap(a, b));
            }
        }
        let u1 = annealed_u(&model, t, s, r, 1, Route::Enumeration, DEFAULT_SUPPORT_LIMIT)?;
        (Some(gap), closed.map(|b| relative_gap(u1, b)))
    } else {
        (None, None)
    };
    Ok(UCheckOutcome {
        a_factor,
        b_factor,
        b_se,
        b_closed_form: closed.is_some(),
        rows,
        route_gap,
        one_step_gap,
    })
}

fn optional(v: Option<f64>) -> Value {
    v.map(Value::from).unwrap_or_else(|| Value::from("na"))
}

impl Experiment for UCheckOutcome {
    fn report(&self) -> ExperimentReport {
        let mut table = Table::new(&[
            "n",
            "U_n",
            "U_prev",
            "U_prev_lower",
            "lhs",
            "rhs",
            "se",
            "max_relative_se",
            "pass",
            "exact_U_n",
        ]);
        for row in &self.rows {
            table.push(vec![
                Value::from(row.n),
                Value::from(row.u_n),
                Value::from(row.u_prev),
                Value::from(row.u_prev_lower),
                Value::from(row.lhs),
                Value::from(row.rhs),
                Value::from(row.se),
                Value::from(row.max_relative_se),
                Value::from(row.pass),
                optional(row.exact_u_n),
            ]);
        }
        ExperimentReport {
            experiment: "u-check",
            verdict: self.verdict(),
            table,
            summary: vec![
                ("A", Value::from(self.a_factor)),
                ("B", Value::from(self.b_factor)),
                ("B_se", Value::from(self.b_se)),
                ("B_closed_form", Value::from(self.b_closed_form)),
                ("route_gap", optional(self.route_gap)),
                ("one_step_gap", optional(self.one_step_gap)),
                ("heavy_tailed", Value::from(self.heavy_tailed())),
            ],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_model::{Process, TableAtom};

    fn config(r: f64) -> UCheckConfig {
        UCheckConfig { t_star: Some(1.0), t: 1.0, s: 0.0, r, n_max: 3, replicates: 500, seed: 6, cap: 1_000_000 }
    }

    #[test]
    fn deterministic_law_is_exact() {
        let binary =
            EnvironmentModel::single(OffspringLaw::finite_table(vec![TableAtom::new(1.0, vec![1.0, -1.0])]).unwrap());
        let out = run_u_recursion_check(&binary, &config(3.0)).unwrap();
        assert_eq!(out.verdict(), Verdict::Pass);
        assert!(out.b_closed_form);
        assert!(out.rows.iter().all(|r| r.se == 0.0 && r.exact_pass == Some(true)));
    }

    #[test]
    fn preconditions_are_enforced() {
        let law = OffspringLaw::poisson_gaussian(2.0, 0.0, 1.0).unwrap();
        let model = EnvironmentModel::single(law.clone());
        assert!(matches!(run_u_recursion_check(&model, &config(2.0)), Err(ExperimentError::Refused(_))));
        let cycle = EnvironmentModel::new(vec![law.clone(), law], Process::PeriodicCycle { sequence: vec![0, 1] }).unwrap();
        assert!(matches!(run_u_recursion_check(&cycle, &config(3.0)), Err(ExperimentError::Refused(_))));
    }
}
