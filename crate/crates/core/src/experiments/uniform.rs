use super::{Experiment, ExperimentError, ExperimentReport, Table, Value, Verdict};
use crate::analytics::{critical_interval, region_tests, DEFAULT_SEARCH_BOUND};
use crate::env_model::EnvironmentModel;
use crate::parallel::run_replicates;
use crate::rng::{stream_rng, Stream};
use crate::simulator::w_path_on_grid;
use crate::stats::median;

#[derive(Debug, Clone, PartialEq)]
pub struct UniformConfig {
    pub k_lo: f64,
    pub k_hi: f64,
    pub grid_step: f64,
    pub n_max: usize,
    pub replicates: usize,
    pub seed: u64,
    pub cap: usize,
    pub epsilon: f64,
    /// Repeat on the half-step grid with the same trees.
    pub refine: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniformOutcome {
    pub grid: Vec<f64>,
    /// Median over replicates of `D_n = sup_t |W_n(t) − W_N(t)|`, n = 0..N−1.
    pub medians: Vec<f64>,
    pub refined_medians: Option<Vec<f64>>,
    pub window: (usize, usize),
    pub monotone: bool,
    pub final_median: f64,
    pub epsilon: f64,
    /// Largest relative change of a windowed median under refinement.
    pub refinement_change: Option<f64>,
}

impl UniformOutcome {
    pub fn pass(&self) -> bool {
        self.monotone && self.final_median < self.epsilon
    }

    pub fn refinement_stable(&self) -> Option<bool> {
        self.refinement_change.map(|c| c < 0.1)
    }
}

/// Differences below this are log-domain rounding, not a grid effect.
const ROUNDING_FLOOR: f64 = 1e-12;

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let m = ((hi - lo) / step).round() as usize;
    (0..=m).map(|i| if i == m { hi } else { lo + i as f64 * step }).collect()
}

fn sup_deviations(
    path: &crate::env_model::EnvironmentPath,
    model: &EnvironmentModel,
    grid: &[f64],
    config: &UniformConfig,
) -> Result<Vec<Vec<f64>>, ExperimentError> {
    let n_max = config.n_max;
    run_replicates(config.replicates, |i| {
        let mut rng = stream_rng(config.seed, Stream::Tree, i);
        let mp = w_path_on_grid(path, model, grid, n_max, config.cap, &mut rng)?;
        let last = &mp.values[n_max];
        let d = (0..n_max)
            .map(|n| {
                mp.values[n]
                    .iter()
                    .zip(last)
                    .fold(0.0f64, |m, (w, wl)| m.max((w - wl).abs()))
            })
            .collect();
        Ok::<_, ExperimentError>(d)
    })
}

fn medians(d: &[Vec<f64>], n_max: usize) -> Vec<f64> {
    (0..n_max)
        .map(|n| median(&d.iter().map(|row| row[n]).collect::<Vec<_>>()))
        .collect()
}

/// Sup-norm distance of `W_n(·)` from the proxy `W_N(·)` over a grid on K.
pub fn run_uniform_convergence(model: &EnvironmentModel, config: &UniformConfig) -> Result<UniformOutcome, ExperimentError> {
    if !(config.k_lo <= config.k_hi && config.grid_step > 0.0) {
        return Err(ExperimentError::Refused("K must be a non-empty interval with positive grid step".into()));
    }
    if config.n_max < 4 {
        return Err(ExperimentError::Refused("n_max must be at least 4".into()));
    }
    let grid = grid(config.k_lo, config.k_hi, config.grid_step);
    let interval = critical_interval(model, DEFAULT_SEARCH_BOUND)?;
    let mut probes = grid.clone();
    probes.extend(grid.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    for &t in &probes {
        let flags = region_tests(model, &interval, t);
        if !flags.in_i {
            return Err(ExperimentError::Refused(format!("t = {t} fails in_I")));
        }
        if !flags.in_omega1 {
            return Err(ExperimentError::Refused(format!("t = {t} fails in_Omega1")));
        }
    }
    let path = model.sample_path(config.n_max, config.seed);
    let medians_coarse = medians(&sup_deviations(&path, model, &grid, config)?, config.n_max);
    let window = (config.n_max.div_ceil(4), 3 * config.n_max / 4);
    let monotone = (window.0..window.1).all(|n| medians_coarse[n + 1] <= medians_coarse[n] + ROUNDING_FLOOR);
    let final_median = medians_coarse[window.1];

    let (refined_medians, refinement_change) = if config.refine {
        let fine = self::grid(config.k_lo, config.k_hi, config.grid_step / 2.0);
        let fm = medians(&sup_deviations(&path, model, &fine, config)?, config.n_max);
        let change = (window.0..=window.1)
            .map(|n| {
                let gap = (fm[n] - medians_coarse[n]).abs();
                if gap <= ROUNDING_FLOOR {
                    0.0
                } else {
                    gap / medians_coarse[n]
                }
            })
            .fold(0.0f64, f64::max);
        (Some(fm), Some(change))
    } else {
        (None, None)
    };
    Ok(UniformOutcome {
        grid,
        medians: medians_coarse,
        refined_medians,
        window,
        monotone,
        final_median,
        epsilon: config.epsilon,
        refinement_change,
    })
}

impl Experiment for UniformOutcome {
    fn report(&self) -> ExperimentReport {
        let mut table = Table::new(&["n", "median_D", "median_D_refined", "in_window"]);
        for (n, &m) in self.medians.iter().enumerate() {
            let refined = self
                .refined_medians
                .as_ref()
                .map(|r| Value::from(r[n]))
                .unwrap_or_else(|| Value::from("na"));
            table.push(vec![
                Value::from(n),
                Value::from(m),
                refined,
                Value::from(n >= self.window.0 && n <= self.window.1),
            ]);
        }
        let mut summary = vec![
            ("grid_points", Value::from(self.grid.len())),
            ("window_start", Value::from(self.window.0)),
            ("window_end", Value::from(self.window.1)),
            ("monotone", Value::from(self.monotone)),
            ("final_median", Value::from(self.final_median)),
            ("epsilon", Value::from(self.epsilon)),
        ];
        if let (Some(c), Some(s)) = (self.refinement_change, self.refinement_stable()) {
            summary.push(("refinement_change", Value::from(c)));
            summary.push(("refinement_stable", Value::from(s)));
        }
        ExperimentReport {
            experiment: "uniform",
            verdict: Verdict::from_pass(self.pass()),
            table,
            summary,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_model::{OffspringLaw, TableAtom};

    fn config(k_lo: f64, k_hi: f64) -> UniformConfig {
        UniformConfig {
            k_lo,
            k_hi,
            grid_step: 0.1,
            n_max: 8,
            replicates: 20,
            seed: 5,
            cap: 1_000_000,
            epsilon: 0.05,
            refine: true,
        }
    }

    #[test]
    fn deterministic_law_has_no_gap() {
        let binary =
            EnvironmentModel::single(OffspringLaw::finite_table(vec![TableAtom::new(1.0, vec![1.0, -1.0])]).unwrap());
        let out = run_uniform_convergence(&binary, &config(-0.5, 0.5)).unwrap();
        assert!(out.medians.iter().all(|&d| d <= 1e-12));
        assert!(out.pass());
        assert_eq!(out.refinement_stable(), Some(true));
    }

    #[test]
    fn interval_outside_the_region_is_refused() {
        let mixed = EnvironmentModel::single(
            OffspringLaw::finite_table(vec![TableAtom::new(0.5, vec![1.0, -1.0]), TableAtom::new(0.5, vec![0.0])])
                .unwrap(),
        );
        match run_uniform_convergence(&mixed, &config(-0.3, 8.0)) {
            Err(ExperimentError::Refused(reason)) => assert!(reason.contains("fails in_")),
            other => panic!("expected refusal, got {other:?}"),
        }
        assert!(matches!(run_uniform_convergence(&mixed, &config(0.3, -0.3)), Err(ExperimentError::Refused(_))));
    }
}
