use brwre::env_model::{laplace_m, sample_offspring};
use brwre::exact::{enumerate_trees, w_from_positions, DEFAULT_SUPPORT_LIMIT};
use brwre::experiments::{run_martingale_test, run_u_recursion_check, MartingaleConfig, UCheckConfig};
use brwre::rng::{stream_rng, Stream};
use brwre::simulator::{for_each_generation, w_value};
use brwre::spine::sample_spine_tree;
use brwre::stats::MeanAccumulator;
use brwre::{EnvironmentModel, OffspringLaw, Process, TableAtom};

const CAP: usize = 1_000_000;

fn mixed_law() -> OffspringLaw {
    OffspringLaw::finite_table(vec![TableAtom::new(0.5, vec![1.0, -1.0]), TableAtom::new(0.5, vec![0.0])]).unwrap()
}

fn markov_model() -> EnvironmentModel {
    EnvironmentModel::new(
        vec![mixed_law(), OffspringLaw::poisson_gaussian(2.5, 0.1, 0.8).unwrap()],
        Process::MarkovChain { matrix: vec![vec![0.7, 0.3], vec![0.4, 0.6]] },
    )
    .unwrap()
}

#[test]
fn laplace_transform_matches_monte_carlo() {
    let laws = [
        OffspringLaw::poisson_gaussian(3.0, 0.2, 0.7).unwrap(),
        OffspringLaw::finite_table(vec![
            TableAtom::new(0.2, vec![]),
            TableAtom::new(0.5, vec![0.3, -1.0]),
            TableAtom::new(0.3, vec![1.2, 0.0, -0.4]),
        ])
        .unwrap(),
    ];
    for (i, law) in laws.iter().enumerate() {
        for (j, &t) in [-1.0, 0.0, 0.5, 1.0].iter().enumerate() {
            let mut rng = stream_rng(11, Stream::Auxiliary, (10 * i + j) as u64);
            let acc: MeanAccumulator = (0..1_000_000)
                .map(|_| sample_offspring(law, &mut rng).1.iter().map(|d| (t * d).exp()).sum::<f64>())
                .collect();
            let exact = laplace_m(law, t).unwrap();
            assert!((acc.mean() - exact).abs() < 5.0 * acc.se(), "law {i} t {t}: {} vs {exact}", acc.mean());
        }
    }
}

#[test]
fn martingale_increments_average_to_zero() {
    let model = markov_model();
    let path = model.sample_path(6, 3);
    let grid = [-0.5, 0.5, 1.0];
    let mut increments = vec![vec![MeanAccumulator::default(); grid.len()]; 6];
    let mut growth = [MeanAccumulator::default(); 6];
    for i in 0..4000 {
        let mut rng = stream_rng(3, Stream::Tree, i);
        let mut previous: Option<(Vec<f64>, u64)> = None;
        for_each_generation(&path, &model, 6, CAP, &mut rng, |g| {
            let w: Vec<f64> = grid.iter().map(|&t| w_value(g, &path, &model, t).unwrap()).collect();
            if let Some((prev, pop)) = &previous {
                let n = g.generation() - 1;
                for (k, (a, b)) in w.iter().zip(prev).enumerate() {
                    increments[n][k].push(a - b);
                }
                if *pop > 0 {
                    growth[n].push(g.population() as f64 / *pop as f64);
                }
            }
            previous = Some((w, g.population()));
        })
        .unwrap();
    }
    for (n, row) in increments.iter().enumerate() {
        for (k, acc) in row.iter().enumerate() {
            assert!(acc.mean().abs() < 4.0 * acc.se() + 1e-12, "n {n} t {}: {}", grid[k], acc.mean());
        }
        let pi = model.law(path.states[n]).mean_offspring();
        let g = &growth[n];
        assert!((g.mean() - pi).abs() < 4.0 * g.se() + 1e-12, "generation {n}: {} vs {pi}", g.mean());
    }
}

#[test]
fn spine_measure_reweights_population() {
    let model = EnvironmentModel::new(
        vec![
            mixed_law(),
            OffspringLaw::finite_table(vec![TableAtom::new(0.4, vec![0.5]), TableAtom::new(0.6, vec![-0.5, 1.0])])
                .unwrap(),
        ],
        Process::Iid { weights: vec![0.5, 0.5] },
    )
    .unwrap();
    let t = 0.7;
    for n in 1..=4 {
        let path = model.sample_path(n, 20 + n as u64);
        let mut exact = 0.0;
        enumerate_trees(&model, &path.states, DEFAULT_SUPPORT_LIMIT, |p, pos| {
            exact += p * pos.len() as f64 * w_from_positions(&model, &path.states, t, pos);
        })
        .unwrap();
        let acc: MeanAccumulator = (0..40_000)
            .map(|i| {
                let mut rng = stream_rng(5, Stream::Spine, i);
                sample_spine_tree(&path, &model, t, n, CAP, &mut rng).unwrap().population() as f64
            })
            .collect();
        let half_width = 1.96 * acc.se();
        assert!(
            (acc.mean() - exact).abs() <= half_width + 1e-12,
            "n {n}: Q mean {} +- {half_width} vs exact {exact}",
            acc.mean()
        );
    }
}

fn se_ratio(small: &[f64], large: &[f64]) -> Vec<f64> {
    small.iter().zip(large).filter(|(_, &b)| b > 0.0).map(|(a, b)| a / b).collect()
}

#[test]
fn standard_errors_scale_with_replicates() {
    let model = EnvironmentModel::single(OffspringLaw::poisson_gaussian(2.0, 0.0, 1.0).unwrap());
    let config = |replicates| MartingaleConfig {
        n_max: 5,
        t_grid: vec![0.5, 1.0],
        replicates,
        seed: 9,
        cap: CAP,
        p_scale: 1.0,
    };
    let large = run_martingale_test(&model, &config(16_000)).unwrap();
    let small = run_martingale_test(&model, &config(4_000)).unwrap();
    let ratios = se_ratio(
        &small.cells.iter().skip(2).map(|c| c.se).collect::<Vec<_>>(),
        &large.cells.iter().skip(2).map(|c| c.se).collect::<Vec<_>>(),
    );
    assert!(!ratios.is_empty());
    for r in ratios {
        assert!((r - 2.0).abs() < 0.4, "martingale SE ratio {r}");
    }

    let mixed = EnvironmentModel::single(mixed_law());
    let u_config = |replicates| UCheckConfig {
        t_star: Some(1.0),
        t: 1.0,
        s: 0.0,
        r: 3.0,
        n_max: 3,
        replicates,
        seed: 9,
        cap: CAP,
    };
    let large = run_u_recursion_check(&mixed, &u_config(40_000)).unwrap();
    let small = run_u_recursion_check(&mixed, &u_config(10_000)).unwrap();
    let ratios = se_ratio(
        &small.rows.iter().map(|r| r.se).collect::<Vec<_>>(),
        &large.rows.iter().map(|r| r.se).collect::<Vec<_>>(),
    );
    for r in ratios {
        assert!((r - 2.0).abs() < 0.4, "u-check SE ratio {r}");
    }
}
