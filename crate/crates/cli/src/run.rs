//! Maps a validated config onto the experiment functions and reports exit codes.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use brwre::experiments::*;

use crate::config::{parse_config, ExperimentId, Overrides, RunConfig};
use crate::output::{write_error, write_report};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_FAIL: i32 = 2;
pub const EXIT_INCONCLUSIVE: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

pub fn exit_code(verdict: Verdict) -> i32 {
    match verdict {
        Verdict::Pass => EXIT_PASS,
        Verdict::Fail => EXIT_FAIL,
        Verdict::Inconclusive => EXIT_INCONCLUSIVE,
    }
}

/// Runs the configured experiment on the current rayon pool.
pub fn execute(cfg: &RunConfig) -> Result<ExperimentReport, ExperimentError> {
    let m = &cfg.model;
    let seed = cfg.seed;
    let report = match cfg.experiment {
        ExperimentId::Simulate => run_simulation(
            m,
            &SimulationConfig {
                n_max: cfg.uint("n_max"),
                t_grid: cfg.floats("t_grid"),
                replicates: cfg.uint("replicates"),
                seed,
                cap: cfg.uint("cap"),
            },
        )?
        .report(),
        ExperimentId::Rates => run_rates(
            m,
            &RatesConfig {
                t_star: cfg.float("t_star"),
                p_values: cfg.floats("p_values"),
                t_grid: cfg.floats("t_grid"),
                search_bound: cfg.float("search_bound"),
            },
        )?
        .report(),
        ExperimentId::SpineCheck => run_spine_check(
            m,
            &SpineCheckConfig {
                t: cfg.float("t"),
                n: cfg.uint("n"),
                k: cfg.uint("k"),
                g: SpineFunction::parse(cfg.text("g")).expect("validated choice"),
                replicates: cfg.uint("replicates"),
                seed,
                cap: cfg.uint("cap"),
                permutations: cfg.uint("permutations"),
                ks_t: cfg.float("ks_t"),
                ks_samples: cfg.uint("ks_samples"),
                ks_envelope: cfg.float("ks_envelope"),
            },
        )?
        .report(),
        ExperimentId::Martingale => run_martingale_test(
            m,
            &MartingaleConfig {
                n_max: cfg.uint("n_max"),
                t_grid: cfg.floats("t_grid"),
                replicates: cfg.uint("replicates"),
                seed,
                cap: cfg.uint("cap"),
                p_scale: cfg.float("p_scale"),
            },
        )?
        .report(),
        ExperimentId::LpRate => run_lp_rate(
            m,
            &LpRateConfig {
                p: cfg.float("p"),
                t_star: cfg.float("t_star"),
                n_max: cfg.uint("n_max"),
                replicates: cfg.uint("replicates"),
                seed,
                cap: cfg.uint("cap"),
                diagnostic: cfg.flag("diagnostic"),
            },
        )?
        .report(),
        ExperimentId::AnnealedLp => run_annealed_lp(
            m,
            &AnnealedLpConfig {
                p: cfg.float("p"),
                t_star: cfg.float("t_star"),
                n_max: cfg.uint("n_max"),
                replicates: cfg.uint("replicates"),
                seed,
                cap: cfg.uint("cap"),
            },
        )?
        .report(),
        ExperimentId::Uniform => run_uniform_convergence(
            m,
            &UniformConfig {
                k_lo: cfg.float("k_lo"),
                k_hi: cfg.float("k_hi"),
                grid_step: cfg.float("grid_step"),
                n_max: cfg.uint("n_max"),
                replicates: cfg.uint("replicates"),
                seed,
                cap: cfg.uint("cap"),
                epsilon: cfg.float("epsilon"),
                refine: cfg.flag("refine"),
            },
        )?
        .report(),
        ExperimentId::MdpQuenched => run_mdp_quenched_means(m, &mdp_config(cfg))?.report(),
        ExperimentId::MdpAnnealed => {
            let variant = match cfg.text("variant") {
                "ratio" => AnnealedVariant::Ratio,
                _ => AnnealedVariant::PerPi,
            };
            run_mdp_annealed_means(m, &mdp_config(cfg), variant)?.report()
        }
        ExperimentId::MdpPopulation => run_mdp_population(
            m,
            &PopulationMdpConfig {
                theta: cfg.float("theta"),
                a_lo: cfg.float("a_lo"),
                a_hi: cfg.float("a_hi"),
                n_list: cfg.uints("n_list"),
                replicates: cfg.uint("replicates"),
                seed,
                cap: cfg.uint("cap"),
            },
        )?
        .report(),
        ExperimentId::UCheck => run_u_recursion_check(
            m,
            &UCheckConfig {
                t_star: cfg.optional_float("t_star"),
                t: cfg.float("t"),
                s: cfg.float("s"),
                r: cfg.float("r"),
                n_max: cfg.uint("n_max"),
                replicates: cfg.uint("replicates"),
                seed,
                cap: cfg.uint("cap"),
            },
        )?
        .report(),
    };
    Ok(report)
}

fn mdp_config(cfg: &RunConfig) -> MdpConfig {
    MdpConfig {
        theta: cfg.float("theta"),
        t_grid: cfg.floats("t_grid"),
        n_list: cfg.uints("n_list"),
        seed: cfg.seed,
        tolerance: cfg.float("tolerance"),
    }
}

/// Command-line level inputs for one invocation.
#[derive(Debug, Clone, Default)]
pub struct Invocation {
    pub experiment: Option<ExperimentId>,
    pub config_path: std::path::PathBuf,
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub threads: Option<usize>,
    pub describe: bool,
}

/// Parses, runs and writes outputs; returns the process exit code.
pub fn invoke(inv: &Invocation, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let text = match fs::read_to_string(&inv.config_path) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(stderr, "error: cannot read {}: {e}", inv.config_path.display());
            return EXIT_CONFIG;
        }
    };
    let overrides = Overrides {
        experiment: inv.experiment,
        seed: inv.seed,
        out: inv.out.clone(),
    };
    let cfg = match parse_config(&text, &overrides) {
        Ok(c) => c,
        Err(errors) => {
            let _ = writeln!(stderr, "invalid config:\n{errors}");
            return EXIT_CONFIG;
        }
    };
    if inv.describe {
        let _ = write!(stdout, "{}", cfg.describe());
        return EXIT_PASS;
    }
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(inv.threads.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(stderr, "error: cannot build thread pool: {e}");
            return EXIT_RUNTIME;
        }
    };
    let started = Instant::now();
    let result = pool.install(|| execute(&cfg));
    let hash = cfg.hash();
    let dir = Path::new(&cfg.out);
    let code = match result {
        Ok(report) => {
            let code = exit_code(report.verdict);
            match write_report(dir, &report, &hash, cfg.seed, code) {
                Ok((csv, summary)) => {
                    let _ = writeln!(
                        stdout,
                        "{} {}: {} {}",
                        cfg.experiment,
                        report.verdict.as_str(),
                        csv.display(),
                        summary.display()
                    );
                    code
                }
                Err(e) => {
                    let _ = writeln!(stderr, "error: cannot write outputs: {e}");
                    EXIT_RUNTIME
                }
            }
        }
        Err(ExperimentError::Refused(reason)) => {
            let _ = writeln!(stderr, "refused: {reason}");
            EXIT_CONFIG
        }
        Err(e) => {
            let message = e.to_string();
            let _ = writeln!(stderr, "error: {message}");
            if let Err(w) = write_error(dir, cfg.experiment.as_str(), &hash, cfg.seed, &message, EXIT_RUNTIME) {
                let _ = writeln!(stderr, "error: cannot write summary: {w}");
            }
            EXIT_RUNTIME
        }
    };
    let _ = writeln!(stderr, "elapsed: {:.3}s", started.elapsed().as_secs_f64());
    code
}
