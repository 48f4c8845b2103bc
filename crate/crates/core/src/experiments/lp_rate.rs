use super::{thirds, Experiment, ExperimentError, ExperimentReport, Table, Value, Verdict};
use crate::analytics::{critical_interval, rho_c, DEFAULT_SEARCH_BOUND};
use crate::env_model::EnvironmentModel;
use crate::parallel::run_replicates;
use crate::rng::{stream_rng, Stream};
use crate::simulator::{a_hat_path, w_path_on_grid};
use crate::stats::{median, ols, LinearFit, MeanAccumulator};

/// All errors at or below this are treated as identically zero: W_n is then
/// deterministic and differs from W_N only by rounding.
pub const DEGENERATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LpRateConfig {
    pub p: f64,
    pub t_star: f64,
    pub n_max: usize,
    pub replicates: usize,
    pub seed: u64,
    pub cap: usize,
    /// Also compute the Â_n(ρ) series at 0.9·ρ_c and 1.5·ρ_c.
    pub diagnostic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AHatVerdict {
    Stable,
    Divergent,
    Indeterminate,
}

impl AHatVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            AHatVerdict::Stable => "stable",
            AHatVerdict::Divergent => "divergent",
            AHatVerdict::Indeterminate => "indeterminate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AHatDiagnostic {
    pub rho: f64,
    /// Median over replicates of max|Â| on the last third over max|Â| on the first third.
    pub ratio: f64,
    pub verdict: AHatVerdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpRateOutcome {
    pub p: f64,
    pub rho_c: f64,
    /// `(E_ξ|W_n − W_N|^p)^{1/p}` estimates for n = 0..N−1.
    pub errors: Vec<f64>,
    pub error_se: Vec<f64>,
    pub window: (usize, usize),
    pub fit: Option<LinearFit>,
    pub degenerate: bool,
    pub decay_required: bool,
    pub pass: bool,
    pub diagnostics: Vec<AHatDiagnostic>,
}

impl LpRateOutcome {
    pub fn predicted_slope(&self) -> f64 {
        -self.rho_c.ln()
    }
}

/// Quenched Lᵖ error of W_n against the proxy W_N on one environment path,
/// with a log-linear fit over the middle third of horizons.
pub fn run_lp_rate(model: &EnvironmentModel, config: &LpRateConfig) -> Result<LpRateOutcome, ExperimentError> {
    let normalized = model.normalized_at(config.t_star)?;
    let interval = critical_interval(&normalized, DEFAULT_SEARCH_BOUND)?;
    let p = config.p;
    if !(p == 2.0 || (p > 2.0 && p <= interval.t_plus)) {
        return Err(ExperimentError::Refused(format!(
            "p = {p} must be 2 or lie in (2, t_+ = {}] of the normalized model",
            interval.t_plus
        )));
    }
    let moment = normalized.expect(|l| l.log_w1_moment(1.0, p).unwrap_or(0.0));
    if !moment.is_finite() {
        return Err(ExperimentError::Refused("E log E_ξ W_1^p is not finite".into()));
    }
    if config.n_max < 3 {
        return Err(ExperimentError::Refused("n_max must be at least 3".into()));
    }
    let rho_c = rho_c(&normalized)?;
    let n_max = config.n_max;
    let path = normalized.sample_path(n_max, config.seed);
    let rhos: Vec<f64> = if config.diagnostic {
        [0.9 * rho_c, 1.5 * rho_c].into_iter().filter(|&r| r >= 1.0).collect()
    } else {
        Vec::new()
    };

    let per_replicate = run_replicates(config.replicates, |i| {
        let mut rng = stream_rng(config.seed, Stream::Tree, i);
        let mp = w_path_on_grid(&path, &normalized, &[1.0], n_max, config.cap, &mut rng)?;
        let w = mp.column(0);
        let w_last = w[n_max];
        let dev: Vec<f64> = w[..n_max].iter().map(|x| (x - w_last).abs().powf(p)).collect();
        let ratios: Vec<f64> = rhos
            .iter()
            .map(|&rho| {
                let a = a_hat_path(&mp, 1.0, rho).expect("rho >= 1 and t on grid");
                let (first, last) = thirds(a.len());
                let peak = |r: std::ops::Range<usize>| a[r].iter().fold(0.0f64, |m, x| m.max(x.abs()));
                let (f, l) = (peak(first), peak(last));
                if f == 0.0 {
                    if l == 0.0 {
                        1.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    l / f
                }
            })
            .collect();
        Ok::<_, ExperimentError>((dev, ratios))
    })?;

    let mut errors = Vec::with_capacity(n_max);
    let mut error_se = Vec::with_capacity(n_max);
    for n in 0..n_max {
        let acc: MeanAccumulator = per_replicate.iter().map(|(d, _)| d[n]).collect();
        let e = acc.mean().max(0.0).powf(1.0 / p);
        errors.push(e);
        error_se.push(if acc.mean() > 0.0 { e * acc.se() / (p * acc.mean()) } else { 0.0 });
    }
    let window = (n_max.div_ceil(3), 2 * n_max / 3);
    let degenerate = errors.iter().all(|&e| e <= DEGENERATE_TOL);
    let decay_required = rho_c > 1.0;
    let (fit, pass) = if degenerate {
        (None, true)
    } else {
        let xs: Vec<f64> = (window.0..=window.1).map(|n| n as f64).collect();
        let ys: Vec<f64> = (window.0..=window.1).map(|n| errors[n].ln()).collect();
        match ols(&xs, &ys).filter(|f| f.slope.is_finite()) {
            Some(f) => {
                let bound_ok = f.slope <= -rho_c.ln() + 3.0 * f.slope_se;
                let decay_ok = !decay_required || f.slope < 0.0;
                (Some(f), bound_ok && decay_ok)
            }
            None => (None, false),
        }
    };
    let diagnostics = rhos
        .iter()
        .enumerate()
        .map(|(j, &rho)| {
            let vals: Vec<f64> = per_replicate.iter().map(|(_, r)| r[j]).collect();
            let ratio = median(&vals);
            let verdict = if ratio > 10.0 {
                AHatVerdict::Divergent
            } else if ratio < 2.0 {
                AHatVerdict::Stable
            } else {
                AHatVerdict::Indeterminate
            };
            AHatDiagnostic { rho, ratio, verdict }
        })
        .collect();
    Ok(LpRateOutcome {
        p,
        rho_c,
        errors,
        error_se,
        window,
        fit,
        degenerate,
        decay_required,
        pass,
        diagnostics,
    })
}

impl Experiment for LpRateOutcome {
    fn report(&self) -> ExperimentReport {
        let mut table = Table::new(&["n", "error", "se", "log_error", "in_window"]);
        for (n, (&e, &se)) in self.errors.iter().zip(&self.error_se).enumerate() {
            table.push(vec![
                Value::from(n),
                Value::from(e),
                Value::from(se),
                Value::from(e.ln()),
                Value::from(n >= self.window.0 && n <= self.window.1),
            ]);
        }
        let mut summary = vec![
            ("p", Value::from(self.p)),
            ("rho_c", Value::from(self.rho_c)),
            ("predicted_slope", Value::from(self.predicted_slope())),
            ("window_start", Value::from(self.window.0)),
            ("window_end", Value::from(self.window.1)),
            ("degenerate", Value::from(self.degenerate)),
            (
                "rate_prediction",
                Value::from(if self.decay_required {
                    "exponential decay"
                } else {
                    "no exponential rate predicted"
                }),
            ),
        ];
        if let Some(f) = &self.fit {
            summary.push(("slope", Value::from(f.slope)));
            summary.push(("slope_se", Value::from(f.slope_se)));
        }
        for d in &self.diagnostics {
            let key: &'static str = if d.rho < self.rho_c { "a_hat_below_rho_c" } else { "a_hat_above_rho_c" };
            summary.push((key, Value::from(format!("rho={} ratio={} {}", d.rho, d.ratio, d.verdict.as_str()))));
        }
        ExperimentReport {
            experiment: "lp-rate",
            verdict: Verdict::from_pass(self.pass),
            table,
            summary,
        }
    }
}
