//! Shared fixtures for the benchmarks.

use brwre::{EnvironmentModel, OffspringLaw, Process, TableAtom};

pub fn poisson(lambda: f64) -> EnvironmentModel {
    EnvironmentModel::single(OffspringLaw::poisson_gaussian(lambda, 0.0, 1.0).unwrap())
}

pub fn mixed() -> EnvironmentModel {
    EnvironmentModel::single(
        OffspringLaw::finite_table(vec![TableAtom::new(0.5, vec![1.0, -1.0]), TableAtom::new(0.5, vec![0.0])])
            .unwrap(),
    )
}

pub fn two_state() -> EnvironmentModel {
    EnvironmentModel::new(
        vec![
            OffspringLaw::poisson_gaussian(2.0, 0.0, 1.0).unwrap(),
            OffspringLaw::poisson_gaussian(8.0, 0.0, 2.0).unwrap(),
        ],
        Process::Iid { weights: vec![0.5, 0.5] },
    )
    .unwrap()
}
