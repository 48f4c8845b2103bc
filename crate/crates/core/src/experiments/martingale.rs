use super::{Experiment, ExperimentError, ExperimentReport, Table, Value, Verdict};
use crate::env_model::EnvironmentModel;
use crate::parallel::run_replicates;
use crate::rng::{stream_rng, Stream};
use crate::simulator::{w_path_on_grid, MartingalePath};
use crate::stats::MeanAccumulator;

/// Absolute slack for cells whose standard error is zero, where W_n is
/// deterministic and equals 1 only up to rounding of the log-domain sums.
pub const FLOAT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub n_max: usize,
    pub t_grid: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub cap: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutcome {
    pub config: SimulationConfig,
    pub env_states: Vec<usize>,
    pub paths: Vec<MartingalePath>,
}

fn simulate_paths(
    model: &EnvironmentModel,
    n_max: usize,
    t_grid: &[f64],
    replicates: usize,
    seed: u64,
    cap: usize,
) -> Result<(Vec<usize>, Vec<MartingalePath>), ExperimentError> {
    if t_grid.is_empty() {
        return Err(ExperimentError::Refused("t grid is empty".into()));
    }
    let path = model.sample_path(n_max, seed);
    let paths = run_replicates(replicates, |i| {
        let mut rng = stream_rng(seed, Stream::Tree, i);
        w_path_on_grid(&path, model, t_grid, n_max, cap, &mut rng)
    })?;
    Ok((path.states, paths))
}

/// Raw W_n(t) trajectories on one fixed environment path.
pub fn run_simulation(model: &EnvironmentModel, config: &SimulationConfig) -> Result<SimulationOutcome, ExperimentError> {
    let (env_states, paths) = simulate_paths(
        model,
        config.n_max,
        &config.t_grid,
        config.replicates,
        config.seed,
        config.cap,
    )?;
    Ok(SimulationOutcome {
        config: config.clone(),
        env_states,
        paths,
    })
}

impl Experiment for SimulationOutcome {
    fn report(&self) -> ExperimentReport {
        let mut table = Table::new(&["replicate", "n", "t", "log_Ztilde", "log_P", "W"]);
        for (r, mp) in self.paths.iter().enumerate() {
            for n in 0..mp.values.len() {
                for (j, &t) in mp.t_grid.iter().enumerate() {
                    table.push(vec![
                        Value::from(r),
                        Value::from(n),
                        Value::from(t),
                        Value::from(mp.log_ztilde[n][j]),
                        Value::from(mp.log_p[n][j]),
                        Value::from(mp.values[n][j]),
                    ]);
                }
            }
        }
        ExperimentReport {
            experiment: "simulate",
            verdict: Verdict::Pass,
            table,
            summary: vec![
                ("replicates", Value::from(self.paths.len())),
                ("n_max", Value::from(self.config.n_max)),
                ("environment", Value::from(render_states(&self.env_states))),
            ],
        }
    }
}

pub(crate) fn render_states(states: &[usize]) -> String {
    states.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleConfig {
    pub n_max: usize,
    pub t_grid: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub cap: usize,
    /// Multiplies P_n by `p_scale^n`; 1 is the correct normalization, other
    /// values give a deliberately biased fixture.
    pub p_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleCell {
    pub n: usize,
    pub t: f64,
    pub mean: f64,
    pub se: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleOutcome {
    pub cells: Vec<MartingaleCell>,
    pub replicates: usize,
}

impl MartingaleOutcome {
    pub fn pass(&self) -> bool {
        self.cells.iter().all(|c| c.pass)
    }

    /// Smallest n with a failing cell.
    pub fn first_failure(&self) -> Option<usize> {
        self.cells.iter().filter(|c| !c.pass).map(|c| c.n).min()
    }
}

pub fn cell_passes(mean: f64, se: f64) -> bool {
    (mean - 1.0).abs() < 4.0 * se + FLOAT_SLACK
}

/// Replicate means of W_n(t) on a fixed environment path, each cell tested
/// against 1 at 4 standard errors.
pub fn run_martingale_test(model: &EnvironmentModel, config: &MartingaleConfig) -> Result<MartingaleOutcome, ExperimentError> {
    if !(config.p_scale.is_finite() && config.p_scale > 0.0) {
        return Err(ExperimentError::Refused("p_scale must be positive".into()));
    }
    let (_, paths) = simulate_paths(
        model,
        config.n_max,
        &config.t_grid,
        config.replicates,
        config.seed,
        config.cap,
    )?;
    let log_scale = config.p_scale.ln();
    let mut cells = Vec::new();
    for n in 0..=config.n_max {
        let shrink = (-(n as f64) * log_scale).exp();
        for (j, &t) in config.t_grid.iter().enumerate() {
            let acc: MeanAccumulator = paths.iter().map(|mp| mp.values[n][j] * shrink).collect();
            let (mean, se) = (acc.mean(), acc.se());
            cells.push(MartingaleCell {
                n,
                t,
                mean,
                se,
                pass: cell_passes(mean, se),
            });
        }
    }
    Ok(MartingaleOutcome {
        cells,
        replicates: paths.len(),
    })
}

impl Experiment for MartingaleOutcome {
    fn report(&self) -> ExperimentReport {
        let mut table = Table::new(&["n", "t", "mean_W", "se", "deviation", "pass"]);
        for c in &self.cells {
            table.push(vec![
                Value::from(c.n),
                Value::from(c.t),
                Value::from(c.mean),
                Value::from(c.se),
                Value::from(c.mean - 1.0),
                Value::from(c.pass),
            ]);
        }
        let mut summary = vec![
            ("replicates", Value::from(self.replicates)),
            ("cells", Value::from(self.cells.len())),
            ("failing_cells", Value::from(self.cells.iter().filter(|c| !c.pass).count())),
        ];
        if let Some(n) = self.first_failure() {
            summary.push(("first_failing_n", Value::from(n)));
        }
        ExperimentReport {
            experiment: "martingale",
            verdict: Verdict::from_pass(self.pass()),
            table,
            summary,
        }
    }
}
