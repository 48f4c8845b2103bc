//! Exact forward simulation of the branching random walk and log-domain
//! evaluation of the partition function, the quenched mean and the additive
//! martingale.
//!
//! A generation is stored as a counting measure: distinct positions with
//! multiplicities. Particles sharing a position have identically distributed
//! futures given the environment, so for finite-table laws `c` coincident
//! particles are advanced together by splitting `c` over the table atoms
//! multinomially. This is exact in law, not a subsampling. Continuous laws
//! simply produce multiplicity-one atoms.

use rand::Rng;
use thiserror::Error;

use crate::env_model::{EnvironmentModel, EnvironmentPath, LawSampler, ModelError};

pub const DEFAULT_CAP: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("population cap exceeded at generation {generation}: {size} stored particles")]
    PopulationCapExceeded { generation: usize, size: usize },
    #[error("environment path has {available} steps, {needed} needed")]
    PathTooShort { needed: usize, available: usize },
    #[error("particle multiplicity overflowed u64 at generation {generation}")]
    MultiplicityOverflow { generation: usize },
    #[error("interval [{a}, {b}] is empty")]
    InvalidInterval { a: f64, b: f64 },
    #[error("t = {t} is not on the evaluation grid")]
    NotOnGrid { t: f64 },
    #[error("rho must be >= 1, got {rho}")]
    RhoBelowOne { rho: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `multiplicity` particles located at `position`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub position: f64,
    pub multiplicity: u64,
}

/// All particles of one generation.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationSnapshot {
    generation: usize,
    particles: Vec<Particle>,
}

impl GenerationSnapshot {
    /// The initial particle at the origin.
    pub fn root() -> Self {
        Self {
            generation: 0,
            particles: vec![Particle {
                position: 0.0,
                multiplicity: 1,
            }],
        }
    }

    /// Builds a snapshot from explicit positions, merging exact duplicates.
    pub fn from_positions(generation: usize, positions: &[f64]) -> Self {
        let mut particles: Vec<Particle> = positions
            .iter()
            .map(|&position| Particle {
                position,
                multiplicity: 1,
            })
            .collect();
        merge_coincident(&mut particles).expect("multiplicities bounded by input length");
        Self {
            generation,
            particles,
        }
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn extinct(&self) -> bool {
        self.particles.is_empty()
    }

    /// `Z_n(ℝ)`.
    pub fn population(&self) -> u64 {
        self.particles.iter().map(|p| p.multiplicity).sum()
    }

    /// Every position repeated by its multiplicity.
    pub fn positions(&self) -> impl Iterator<Item = f64> + '_ {
        self.particles
            .iter()
            .flat_map(|p| std::iter::repeat_n(p.position, p.multiplicity as usize))
    }

    /// `log Z̃_n(t) = log Σ_u e^{t S_u}`; `-inf` iff extinct.
    pub fn log_partition(&self, t: f64) -> f64 {
        let terms = self.particles.iter().map(move |p| {
            let base = t * p.position;
            if p.multiplicity == 1 {
                base
            } else {
                base + (p.multiplicity as f64).ln()
            }
        });
        crate::numerics::logsumexp_iter(terms)
    }

    /// `Z_n([a, b])`.
    pub fn count_in_interval(&self, a: f64, b: f64) -> Result<u64, SimError> {
        if a > b || a.is_nan() || b.is_nan() {
            return Err(SimError::InvalidInterval { a, b });
        }
        Ok(self
            .particles
            .iter()
            .filter(|p| p.position >= a && p.position <= b)
            .map(|p| p.multiplicity)
            .sum())
    }
}

fn merge_coincident(particles: &mut Vec<Particle>) -> Option<()> {
    particles.sort_unstable_by(|a, b| a.position.total_cmp(&b.position));
    let mut out: Vec<Particle> = Vec::with_capacity(particles.len());
    for p in particles.drain(..) {
        match out.last_mut() {
            Some(last) if last.position == p.position => {
                last.multiplicity = last.multiplicity.checked_add(p.multiplicity)?;
            }
            _ => out.push(p),
        }
    }
    *particles = out;
    Some(())
}

/// Steps a tree forward one generation at a time, keeping only the current one.
pub struct Evolver<'a> {
    states: &'a [usize],
    samplers: Vec<LawSampler>,
    current: GenerationSnapshot,
    cap: usize,
    buffer: Vec<f64>,
    counts: Vec<u64>,
}

impl<'a> Evolver<'a> {
    pub fn new(path: &'a EnvironmentPath, model: &EnvironmentModel, cap: usize) -> Self {
        Self::from_states(&path.states, model, cap)
    }

    pub fn from_states(states: &'a [usize], model: &EnvironmentModel, cap: usize) -> Self {
        Self {
            states,
            samplers: model.states().iter().map(|l| l.sampler()).collect(),
            current: GenerationSnapshot::root(),
            cap: cap.max(1),
            buffer: Vec::new(),
            counts: Vec::new(),
        }
    }

    pub fn current(&self) -> &GenerationSnapshot {
        &self.current
    }

    pub fn into_current(self) -> GenerationSnapshot {
        self.current
    }

    /// Advances to the next generation using the law of ξ_n, n = current generation.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<&GenerationSnapshot, SimError> {
        let generation = self.current.generation;
        let Some(&state) = self.states.get(generation) else {
            return Err(SimError::PathTooShort {
                needed: generation + 1,
                available: self.states.len(),
            });
        };
        let next_gen = generation + 1;
        let cap = self.cap;
        let sampler = &self.samplers[state];
        let mut next: Vec<Particle> = Vec::new();
        match sampler {
            LawSampler::Poisson { .. } => {
                for parent in &self.current.particles {
                    for _ in 0..parent.multiplicity {
                        self.buffer.clear();
                        sampler.sample_into(rng, &mut self.buffer);
                        next.extend(self.buffer.iter().map(|d| Particle {
                            position: parent.position + d,
                            multiplicity: 1,
                        }));
                        if next.len() > cap {
                            return Err(SimError::PopulationCapExceeded {
                                generation: next_gen,
                                size: next.len(),
                            });
                        }
                    }
                }
            }
            LawSampler::Table { atoms, .. } => {
                for parent in &self.current.particles {
                    if parent.multiplicity == 1 {
                        let atom = &atoms[sampler.pick_atom(rng)];
                        next.extend(atom.displacements.iter().map(|d| Particle {
                            position: parent.position + d,
                            multiplicity: 1,
                        }));
                    } else {
                        sampler.split_copies(rng, parent.multiplicity, &mut self.counts);
                        for (atom, &k) in atoms.iter().zip(&self.counts) {
                            if k > 0 {
                                next.extend(atom.displacements.iter().map(|d| Particle {
                                    position: parent.position + d,
                                    multiplicity: k,
                                }));
                            }
                        }
                    }
                    if next.len() > cap.saturating_mul(8) {
                        // raw buffer before merging; bounded so a runaway table aborts early
                        merge_coincident(&mut next)
                            .ok_or(SimError::MultiplicityOverflow { generation: next_gen })?;
                        if next.len() > cap {
                            return Err(SimError::PopulationCapExceeded {
                                generation: next_gen,
                                size: next.len(),
                            });
                        }
                    }
                }
                merge_coincident(&mut next).ok_or(SimError::MultiplicityOverflow { generation: next_gen })?;
                if next.len() > cap {
                    return Err(SimError::PopulationCapExceeded {
                        generation: next_gen,
                        size: next.len(),
                    });
                }
            }
        }
        self.current = GenerationSnapshot {
            generation: next_gen,
            particles: next,
        };
        Ok(&self.current)
    }
}

fn check_horizon(path: &EnvironmentPath, n: usize) -> Result<(), SimError> {
    if n > path.len() {
        Err(SimError::PathTooShort {
            needed: n,
            available: path.len(),
        })
    } else {
        Ok(())
    }
}

/// Calls `visit` on generations 0..=n_max in order; only one generation is alive at a time.
pub fn for_each_generation<R, F>(
    path: &EnvironmentPath,
    model: &EnvironmentModel,
    n_max: usize,
    cap: usize,
    rng: &mut R,
    mut visit: F,
) -> Result<(), SimError>
where
    R: Rng + ?Sized,
    F: FnMut(&GenerationSnapshot),
{
    check_horizon(path, n_max)?;
    let mut evolver = Evolver::new(path, model, cap);
    visit(evolver.current());
    for _ in 0..n_max {
        if evolver.current().extinct() {
            let g = evolver.current().generation + 1;
            evolver.current.generation = g;
        } else {
            evolver.step(rng)?;
        }
        visit(evolver.current());
    }
    Ok(())
}

/// Full history of generations 0..=n_max.
pub fn evolve<R: Rng + ?Sized>(
    path: &EnvironmentPath,
    model: &EnvironmentModel,
    n_max: usize,
    cap: usize,
    rng: &mut R,
) -> Result<Vec<GenerationSnapshot>, SimError> {
    let mut history = Vec::with_capacity(n_max + 1);
    for_each_generation(path, model, n_max, cap, rng, |g| history.push(g.clone()))?;
    Ok(history)
}

pub fn log_partition(snapshot: &GenerationSnapshot, t: f64) -> f64 {
    snapshot.log_partition(t)
}

/// `log P_n(t) = Σ_{i<n} log m_{ξᵢ}(t)`.
pub fn log_quenched_mean(
    path: &EnvironmentPath,
    model: &EnvironmentModel,
    n: usize,
    t: f64,
) -> Result<f64, SimError> {
    check_horizon(path, n)?;
    let mut acc = 0.0;
    for &s in &path.states[..n] {
        acc += model.law(s).log_m(t);
    }
    Ok(acc)
}

/// `W_n(t) = Z̃_n(t) / P_n(t)`, exponentiated last.
pub fn w_value(
    snapshot: &GenerationSnapshot,
    path: &EnvironmentPath,
    model: &EnvironmentModel,
    t: f64,
) -> Result<f64, SimError> {
    let log_p = log_quenched_mean(path, model, snapshot.generation, t)?;
    Ok((snapshot.log_partition(t) - log_p).exp())
}

pub fn count_in_interval(snapshot: &GenerationSnapshot, a: f64, b: f64) -> Result<u64, SimError> {
    snapshot.count_in_interval(a, b)
}

/// `W_n(t)` for n = 0..=n_max and every t on a grid, from one tree.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingalePath {
    pub t_grid: Vec<f64>,
    /// `[n][j]` = log Z̃_n(t_j)
    pub log_ztilde: Vec<Vec<f64>>,
    /// `[n][j]` = log P_n(t_j)
    pub log_p: Vec<Vec<f64>>,
    /// `[n][j]` = W_n(t_j)
    pub values: Vec<Vec<f64>>,
    /// `Z_n(ℝ)` per generation
    pub population: Vec<u64>,
}

impl MartingalePath {
    pub fn n_max(&self) -> usize {
        self.values.len().saturating_sub(1)
    }

    pub fn t_index(&self, t: f64) -> Option<usize> {
        self.t_grid.iter().position(|&x| x == t)
    }

    /// `W_n(t_j)` for n = 0..=n_max.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[j]).collect()
    }
}

pub fn w_path_on_grid<R: Rng + ?Sized>(
    path: &EnvironmentPath,
    model: &EnvironmentModel,
    t_grid: &[f64],
    n_max: usize,
    cap: usize,
    rng: &mut R,
) -> Result<MartingalePath, SimError> {
    check_horizon(path, n_max)?;
    let log_m: Vec<Vec<f64>> = model
        .states()
        .iter()
        .map(|law| t_grid.iter().map(|&t| law.log_m(t)).collect())
        .collect();
    let mut running = vec![0.0; t_grid.len()];
    let mut out = MartingalePath {
        t_grid: t_grid.to_vec(),
        log_ztilde: Vec::with_capacity(n_max + 1),
        log_p: Vec::with_capacity(n_max + 1),
        values: Vec::with_capacity(n_max + 1),
        population: Vec::with_capacity(n_max + 1),
    };
    for_each_generation(path, model, n_max, cap, rng, |g| {
        let n = g.generation();
        if n > 0 {
            let lm = &log_m[path.states[n - 1]];
            for (acc, v) in running.iter_mut().zip(lm) {
                *acc += v;
            }
        }
        let lz: Vec<f64> = t_grid.iter().map(|&t| g.log_partition(t)).collect();
        out.values
            .push(lz.iter().zip(&running).map(|(z, p)| (z - p).exp()).collect());
        out.log_ztilde.push(lz);
        out.log_p.push(running.clone());
        out.population.push(g.population());
    })?;
    Ok(out)
}

/// Partial sums `Â_k = Σ_{j≤k} ρʲ (W_{j+1}(t) − W_j(t))` for k = 0..n_max−1.
pub fn a_hat_path(mp: &MartingalePath, t: f64, rho: f64) -> Result<Vec<f64>, SimError> {
    if !(rho >= 1.0) {
        return Err(SimError::RhoBelowOne { rho });
    }
    let j = mp.t_index(t).ok_or(SimError::NotOnGrid { t })?;
    let w = mp.column(j);
    let mut acc = 0.0;
    Ok(w.windows(2)
        .enumerate()
        .map(|(k, pair)| {
            acc += rho.powi(k as i32) * (pair[1] - pair[0]);
            acc
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_model::{OffspringLaw, TableAtom};
    use crate::rng::{stream_rng, Stream};

    fn table(atoms: Vec<(f64, Vec<f64>)>) -> EnvironmentModel {
        EnvironmentModel::single(
            OffspringLaw::finite_table(atoms.into_iter().map(|(p, d)| TableAtom::new(p, d)).collect()).unwrap(),
        )
    }

    #[test]
    fn single_child_stays_at_origin() {
        let model = table(vec![(1.0, vec![0.0])]);
        let path = EnvironmentPath::constant(0, 6);
        let mut rng = stream_rng(1, Stream::Tree, 0);
        for g in evolve(&path, &model, 6, 10, &mut rng).unwrap() {
            assert_eq!(g.particles(), &[Particle { position: 0.0, multiplicity: 1 }]);
        }
    }

    #[test]
    fn binary_generation_three_multiset() {
        let model = table(vec![(1.0, vec![1.0, -1.0])]);
        let path = EnvironmentPath::constant(0, 3);
        let mut rng = stream_rng(1, Stream::Tree, 0);
        let hist = evolve(&path, &model, 3, 100, &mut rng).unwrap();
        let g3 = &hist[3];
        assert_eq!(g3.population(), 8);
        let mut pos: Vec<f64> = g3.positions().collect();
        pos.sort_by(f64::total_cmp);
        assert_eq!(pos, vec![-3.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 3.0]);
        assert_eq!(g3.count_in_interval(0.5, 3.5).unwrap(), 4);
    }

    #[test]
    fn log_partition_cases() {
        assert_eq!(GenerationSnapshot::root().log_partition(3.7), 0.0);
        let two = GenerationSnapshot::from_positions(1, &[1.0, -1.0]);
        assert!((two.log_partition(1.0) - 1.126_928_011_042_972_5).abs() < 1e-15);
        let empty = GenerationSnapshot::from_positions(4, &[]);
        assert_eq!(empty.log_partition(1.0), f64::NEG_INFINITY);
        assert_eq!(empty.count_in_interval(-1.0, 1.0).unwrap(), 0);
        let dup = GenerationSnapshot::from_positions(2, &[0.5, 0.5, 0.5]);
        assert!((dup.log_partition(0.0) - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn interval_must_be_ordered() {
        let g = GenerationSnapshot::root();
        assert!(matches!(g.count_in_interval(1.0, -1.0), Err(SimError::InvalidInterval { .. })));
        assert_eq!(g.count_in_interval(-1.0, 1.0).unwrap(), 1);
    }

    #[test]
    fn cap_is_a_hard_error() {
        let model = EnvironmentModel::single(OffspringLaw::poisson_gaussian(4.0, 0.0, 1.0).unwrap());
        let path = EnvironmentPath::constant(0, 20);
        let mut rng = stream_rng(3, Stream::Tree, 0);
        let err = evolve(&path, &model, 20, 10, &mut rng).unwrap_err();
        match err {
            SimError::PopulationCapExceeded { generation, size } => {
                assert!(generation <= 4);
                assert!(size > 10);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn path_must_cover_horizon() {
        let model = table(vec![(1.0, vec![0.0])]);
        let path = EnvironmentPath::constant(0, 2);
        let mut rng = stream_rng(0, Stream::Tree, 0);
        assert!(matches!(evolve(&path, &model, 3, 10, &mut rng), Err(SimError::PathTooShort { .. })));
        assert!(log_quenched_mean(&path, &model, 3, 0.0).is_err());
    }

    #[test]
    fn quenched_mean_closed_forms() {
        let binary = table(vec![(1.0, vec![1.0, -1.0])]);
        let path = EnvironmentPath::constant(0, 5);
        assert_eq!(log_quenched_mean(&path, &binary, 0, 1.0).unwrap(), 0.0);
        assert!((log_quenched_mean(&path, &binary, 3, 0.0).unwrap() - 3.0 * 2f64.ln()).abs() < 1e-14);
        let pg = EnvironmentModel::single(OffspringLaw::poisson_gaussian(2.0, 0.0, 1.0).unwrap());
        let v = log_quenched_mean(&path, &pg, 5, 1.0).unwrap();
        assert!((v - 5.0 * (2f64.ln() + 0.5)).abs() < 1e-13);
        assert!((v - 5.965_735_902_799_727).abs() < 1e-12);
    }

    #[test]
    fn binary_law_martingale_is_identically_one() {
        let model = table(vec![(1.0, vec![1.0, -1.0])]);
        let path = EnvironmentPath::constant(0, 8);
        let mut rng = stream_rng(9, Stream::Tree, 0);
        let mp = w_path_on_grid(&path, &model, &[-1.0, 0.0, 0.7, 2.0], 8, 1000, &mut rng).unwrap();
        for row in &mp.values {
            for &w in row {
                assert!((w - 1.0).abs() < 1e-12);
            }
        }
        for rho in [1.0, 1.3] {
            for a in a_hat_path(&mp, 0.7, rho).unwrap() {
                assert!(a.abs() < 1e-11);
            }
        }
    }

    #[test]
    fn a_hat_rejects_bad_inputs() {
        let model = table(vec![(1.0, vec![0.0])]);
        let path = EnvironmentPath::constant(0, 2);
        let mut rng = stream_rng(0, Stream::Tree, 0);
        let mp = w_path_on_grid(&path, &model, &[0.0], 2, 10, &mut rng).unwrap();
        assert!(matches!(a_hat_path(&mp, 0.0, 0.9), Err(SimError::RhoBelowOne { .. })));
        assert!(matches!(a_hat_path(&mp, 0.5, 1.0), Err(SimError::NotOnGrid { .. })));
        assert_eq!(mp.values, vec![vec![1.0]; 3]);
    }

    #[test]
    fn extinct_generations_stay_extinct() {
        let model = table(vec![(0.6, vec![]), (0.4, vec![1.0, 2.0])]);
        let path = EnvironmentPath::constant(0, 30);
        for seed in 0..20 {
            let mut rng = stream_rng(seed, Stream::Tree, 0);
            let hist = evolve(&path, &model, 30, 1_000_000, &mut rng).unwrap();
            let first = hist.iter().position(|g| g.extinct());
            if let Some(k) = first {
                assert!(hist[k..].iter().all(|g| g.extinct()));
                assert!(hist[k..].iter().all(|g| g.log_partition(1.0) == f64::NEG_INFINITY));
            }
            for (n, g) in hist.iter().enumerate() {
                assert_eq!(g.generation(), n);
            }
        }
    }
}
