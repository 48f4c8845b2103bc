use super::{thirds, Experiment, ExperimentError, ExperimentReport, Table, Value, Verdict};
use crate::env_model::EnvironmentModel;
use crate::parallel::run_replicates;
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::simulator::w_path_on_grid;
use crate::stats::MeanAccumulator;

pub const GROWTH_RATIO: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AnnealedLpConfig {
    pub p: f64,
    pub t_star: f64,
    pub n_max: usize,
    pub replicates: usize,
    pub seed: u64,
    pub cap: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Growth {
    Bounded,
    Growing,
}

impl Growth {
    pub fn as_str(self) -> &'static str {
        match self {
            Growth::Bounded => "bounded",
            Growth::Growing => "growing",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnealedLpOutcome {
    pub p: f64,
    /// `E m̄₀(p)` of the normalized model.
    pub mean_m_bar: f64,
    /// Annealed `E W_n^p` estimates for n = 0..=n_max.
    pub moments: Vec<f64>,
    pub moment_se: Vec<f64>,
    pub ratio: f64,
    pub observed: Growth,
    pub expected: Growth,
}

impl AnnealedLpOutcome {
    pub fn pass(&self) -> bool {
        self.observed == self.expected
    }
}

/// Annealed moments `E W_n^p` with a fresh environment per replicate,
/// classified by the last-third over first-third mean ratio.
pub fn run_annealed_lp(model: &EnvironmentModel, config: &AnnealedLpConfig) -> Result<AnnealedLpOutcome, ExperimentError> {
    let p = config.p;
    if !(p > 1.0) {
        return Err(ExperimentError::Refused(format!("p = {p} must exceed 1")));
    }
    if !model.is_iid() {
        return Err(ExperimentError::Refused("annealed Lp requires an i.i.d. environment".into()));
    }
    if config.n_max < 3 {
        return Err(ExperimentError::Refused("n_max must be at least 3".into()));
    }
    let normalized = model.normalized_at(config.t_star)?;
    let mean_m_bar = normalized.expect(|l| l.log_m(p).exp());
    if !mean_m_bar.is_finite() {
        return Err(ExperimentError::Refused("E m(p) is not finite".into()));
    }
    if (mean_m_bar - 1.0).abs() <= 1e-12 {
        return Err(ExperimentError::Refused("E m(p) = 1 is the excluded boundary case".into()));
    }
    let n_max = config.n_max;
    let per_replicate = run_replicates(config.replicates, |i| {
        let path = normalized.sample_path(n_max, derive_seed(config.seed, Stream::Environment, i));
        let mut rng = stream_rng(config.seed, Stream::Tree, i);
        let mp = w_path_on_grid(&path, &normalized, &[1.0], n_max, config.cap, &mut rng)?;
        Ok::<_, ExperimentError>(mp.column(0).into_iter().map(|w| w.powf(p)).collect::<Vec<f64>>())
    })?;
    let mut moments = Vec::with_capacity(n_max + 1);
    let mut moment_se = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let acc: MeanAccumulator = per_replicate.iter().map(|v| v[n]).collect();
        moments.push(acc.mean());
        moment_se.push(acc.se());
    }
    let tail = &moments[1..];
    let (first, last) = thirds(tail.len());
    let avg = |r: std::ops::Range<usize>| {
        let len = r.len() as f64;
        tail[r].iter().sum::<f64>() / len
    };
    let ratio = avg(last) / avg(first);
    let observed = if ratio > GROWTH_RATIO { Growth::Growing } else { Growth::Bounded };
    let expected = if mean_m_bar > 1.0 { Growth::Growing } else { Growth::Bounded };
    Ok(AnnealedLpOutcome {
        p,
        mean_m_bar,
        moments,
        moment_se,
        ratio,
        observed,
        expected,
    })
}

impl Experiment for AnnealedLpOutcome {
    fn report(&self) -> ExperimentReport {
        let mut table = Table::new(&["n", "mean_W_pow_p", "se"]);
        for (n, (&m, &se)) in self.moments.iter().zip(&self.moment_se).enumerate() {
            table.push(vec![Value::from(n), Value::from(m), Value::from(se)]);
        }
        ExperimentReport {
            experiment: "annealed-lp",
            verdict: Verdict::from_pass(self.pass()),
            table,
            summary: vec![
                ("p", Value::from(self.p)),
                ("mean_m_bar_p", Value::from(self.mean_m_bar)),
                ("ratio_last_first", Value::from(self.ratio)),
                ("observed", Value::from(self.observed.as_str())),
                ("expected", Value::from(self.expected.as_str())),
            ],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_model::{OffspringLaw, Process};

    fn pg(lambda: f64) -> OffspringLaw {
        OffspringLaw::poisson_gaussian(lambda, 0.0, 1.0).unwrap()
    }

    fn config(p: f64) -> AnnealedLpConfig {
        AnnealedLpConfig { p, t_star: 1.0, n_max: 20, replicates: 2000, seed: 1, cap: 1_000_000 }
    }

    #[test]
    fn supercritical_second_moment_grows() {
        let out = run_annealed_lp(&EnvironmentModel::single(pg(1.2)), &config(2.0)).unwrap();
        assert!((out.mean_m_bar - std::f64::consts::E / 1.2).abs() < 1e-12);
        assert_eq!(out.expected, Growth::Growing);
        assert!(out.pass(), "{out:?}");
    }

    #[test]
    fn preconditions_are_enforced() {
        let model = EnvironmentModel::single(pg(2.0));
        assert!(matches!(run_annealed_lp(&model, &config(1.0)), Err(ExperimentError::Refused(_))));
        let markov = EnvironmentModel::new(
            vec![pg(2.0), pg(3.0)],
            Process::MarkovChain { matrix: vec![vec![0.5, 0.5], vec![0.5, 0.5]] },
        )
        .unwrap();
        assert!(matches!(run_annealed_lp(&markov, &config(2.0)), Err(ExperimentError::Refused(_))));
        let boundary = EnvironmentModel::single(pg(std::f64::consts::E));
        assert!(matches!(run_annealed_lp(&boundary, &config(2.0)), Err(ExperimentError::Refused(_))));
    }
}
