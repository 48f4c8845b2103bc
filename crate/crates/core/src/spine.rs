//! Spinal decomposition under the size-biased measure `Q_ξ = W_n(t)·P_ξ`.
//!
//! Along the spine, each node reproduces with its offspring vector biased by
//! `Σᵢ e^{tLᵢ}/m(t)` and the next spine node is child i with probability
//! `e^{tLᵢ}/Σⱼ e^{tLⱼ}`; every other child roots an ordinary P-tree. For a
//! finite table this is a reweighting of the atoms. For the Poisson family the
//! biased cluster equals the original cluster plus one extra point, drawn from
//! the exponentially tilted Gaussian `N(μ + s²t, s²)`, which becomes the spine
//! child (Campbell's formula for Poisson processes).

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::env_model::{EnvironmentModel, EnvironmentPath, OffspringLaw, TableAtom};
use crate::numerics::{logsumexp, logsumexp_iter};
use crate::parallel::run_replicates;
use crate::rng::{stream_rng, Stream};
use crate::simulator::{Evolver, SimError};
use crate::stats::{correlation, permutation_p_value, MeanAccumulator};

/// One size-biased offspring vector with its marked spine child.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeBiasedDraw {
    pub displacements: Vec<f64>,
    pub spine_child: usize,
}

impl SizeBiasedDraw {
    pub fn count(&self) -> usize {
        self.displacements.len()
    }
}

/// Precomputed size-biased sampler for one law at one tilt.
#[derive(Debug, Clone)]
pub enum SizeBiasedSampler {
    Poisson { count: Poisson<f64>, mu: f64, s: f64, tilted_mu: f64 },
    Table { atoms: Vec<TableAtom>, cumulative: Vec<f64>, t: f64 },
}

impl SizeBiasedSampler {
    pub fn new(law: &OffspringLaw, t: f64) -> Self {
        match law {
            OffspringLaw::PoissonGaussian(pg) => Self::Poisson {
                count: Poisson::new(pg.lambda()).expect("lambda validated at construction"),
                mu: pg.mu(),
                s: pg.s(),
                tilted_mu: pg.mu() + pg.s() * pg.s() * t,
            },
            OffspringLaw::FiniteTable(ft) => {
                let probs = size_biased_atom_probs(ft.atoms(), t);
                let mut acc = 0.0;
                let cumulative = probs
                    .iter()
                    .map(|p| {
                        acc += p;
                        acc
                    })
                    .collect();
                Self::Table {
                    atoms: ft.atoms().to_vec(),
                    cumulative,
                    t,
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SizeBiasedDraw {
        match self {
            Self::Poisson { count, mu, s, tilted_mu } => {
                let n = count.sample(rng) as usize;
                let mut displacements = Vec::with_capacity(n + 1);
                for _ in 0..n {
                    let z: f64 = rng.sample(StandardNormal);
                    displacements.push(mu + s * z);
                }
                let z: f64 = rng.sample(StandardNormal);
                displacements.push(tilted_mu + s * z);
                SizeBiasedDraw {
                    displacements,
                    spine_child: n,
                }
            }
            Self::Table { atoms, cumulative, t } => {
                let u: f64 = rng.random();
                let j = cumulative.iter().position(|&c| u < c).unwrap_or(cumulative.len() - 1);
                let j = last_positive(cumulative, j);
                let displacements = atoms[j].displacements.clone();
                let spine_child = pick_tilted(&displacements, *t, rng);
                SizeBiasedDraw {
                    displacements,
                    spine_child,
                }
            }
        }
    }
}

/// Guards against landing on a zero-weight atom through rounding of the last
/// cumulative entry.
fn last_positive(cumulative: &[f64], j: usize) -> usize {
    let weight = |i: usize| cumulative[i] - if i == 0 { 0.0 } else { cumulative[i - 1] };
    if weight(j) > 0.0 {
        j
    } else {
        (0..cumulative.len()).rev().find(|&i| weight(i) > 0.0).unwrap_or(j)
    }
}

fn pick_tilted<R: Rng + ?Sized>(displacements: &[f64], t: f64, rng: &mut R) -> usize {
    let logs: Vec<f64> = displacements.iter().map(|d| t * d).collect();
    let total = logsumexp(&logs);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, l) in logs.iter().enumerate() {
        acc += (l - total).exp();
        if u < acc {
            return i;
        }
    }
    displacements.len() - 1
}

/// Atom probabilities reweighted by `Σᵢ e^{tLᵢ}/m(t)`; childless atoms get 0.
pub fn size_biased_atom_probs(atoms: &[TableAtom], t: f64) -> Vec<f64> {
    let logs: Vec<f64> = atoms
        .iter()
        .map(|a| {
            if a.prob > 0.0 {
                a.prob.ln() + logsumexp_iter(a.displacements.iter().map(|d| t * d))
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let total = logsumexp(&logs);
    logs.iter().map(|l| (l - total).exp()).collect()
}

/// Law of the offspring count under the size-biased measure: (count, prob),
/// sorted by count. `None` for the Poisson family, whose count is 1 + Poisson.
pub fn size_biased_count_law(law: &OffspringLaw, t: f64) -> Option<Vec<(usize, f64)>> {
    let OffspringLaw::FiniteTable(ft) = law else {
        return None;
    };
    let probs = size_biased_atom_probs(ft.atoms(), t);
    let mut out: Vec<(usize, f64)> = Vec::new();
    for (a, p) in ft.atoms().iter().zip(probs) {
        match out.iter_mut().find(|(c, _)| *c == a.n_children()) {
            Some(entry) => entry.1 += p,
            None => out.push((a.n_children(), p)),
        }
    }
    out.sort_by_key(|e| e.0);
    Some(out)
}

pub fn sample_size_biased_offspring<R: Rng + ?Sized>(law: &OffspringLaw, t: f64, rng: &mut R) -> SizeBiasedDraw {
    SizeBiasedSampler::new(law, t).sample(rng)
}

/// Brute-force oracle: draws clusters under P and accepts with probability
/// `min(1, Σ e^{tLᵢ} / envelope)`, then marks a child by the tilt. Exact up
/// to the envelope truncation; returns the draw and the number of proposals.
pub fn rejection_size_biased_offspring<R: Rng + ?Sized>(
    law: &OffspringLaw,
    t: f64,
    envelope: f64,
    rng: &mut R,
) -> (SizeBiasedDraw, usize) {
    let sampler = law.sampler();
    let mut buf = Vec::new();
    let mut proposals = 0usize;
    loop {
        proposals += 1;
        buf.clear();
        sampler.sample_into(rng, &mut buf);
        if buf.is_empty() {
            continue;
        }
        let weight = buf.iter().map(|d| (t * d).exp()).sum::<f64>();
        let u: f64 = rng.random();
        if u * envelope < weight {
            let spine_child = pick_tilted(&buf, t, rng);
            return (
                SizeBiasedDraw {
                    displacements: buf.clone(),
                    spine_child,
                },
                proposals,
            );
        }
    }
}

/// A child of the spine node ω_k other than ω_{k+1}, with the summary of its
/// own ordinary subtree down to generation n.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiblingSummary {
    /// Generation of the sibling itself (k + 1).
    pub generation: usize,
    pub displacement: f64,
    pub position: f64,
    /// `log Σ e^{t(S_u − S_v)}` over descendants u at generation n.
    pub subtree_log_ztilde: f64,
    /// `W_{n−k−1}(t)` of the subtree, in the environment T^{k+1}ξ.
    pub subtree_w: f64,
    pub subtree_population: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpineRealization {
    pub t: f64,
    pub n: usize,
    /// Increment from ω_k to ω_{k+1}, k = 0..n−1.
    pub spine_displacements: Vec<f64>,
    /// `S_{ω_k}`, k = 0..=n.
    pub spine_positions: Vec<f64>,
    /// `log P_k(t)`, k = 0..=n.
    pub log_p: Vec<f64>,
    /// `X̃_{ω_k}(t) = e^{t S_{ω_k}} / P_k(t)`, k = 0..=n.
    pub tilde_x: Vec<f64>,
    /// `siblings[k]`: the other children of ω_k.
    pub siblings: Vec<Vec<SiblingSummary>>,
}

impl SpineRealization {
    /// `log Σ_u e^{t(S_u − S_{ω_k})}` over generation-n descendants u of ω_k.
    pub fn subtree_log_ztilde(&self, k: usize) -> f64 {
        let base = self.spine_positions[k];
        let spine_term = self.t * (self.spine_positions[self.n] - base);
        let terms = std::iter::once(spine_term).chain(
            self.siblings[k..]
                .iter()
                .flatten()
                .map(|s| self.t * (s.position - base) + s.subtree_log_ztilde),
        );
        logsumexp_iter(terms)
    }

    /// `W_{n−k, ω_k}(t)`: the martingale of the subtree rooted at ω_k.
    pub fn subtree_w(&self, k: usize) -> f64 {
        (self.subtree_log_ztilde(k) - (self.log_p[self.n] - self.log_p[k])).exp()
    }

    /// `W_n(t)` of the whole sampled tree.
    pub fn total_w(&self) -> f64 {
        self.subtree_w(0)
    }

    /// `Z_n(ℝ)` of the whole sampled tree.
    pub fn population(&self) -> u64 {
        1 + self.siblings.iter().flatten().map(|s| s.subtree_population).sum::<u64>()
    }
}

/// Samples the first n generations under Q_ξ together with the spine.
pub fn sample_spine_tree<R: Rng + ?Sized>(
    path: &EnvironmentPath,
    model: &EnvironmentModel,
    t: f64,
    n: usize,
    cap: usize,
    rng: &mut R,
) -> Result<SpineRealization, SimError> {
    if n > path.len() {
        return Err(SimError::PathTooShort {
            needed: n,
            available: path.len(),
        });
    }
    let samplers: Vec<SizeBiasedSampler> = model.states().iter().map(|l| SizeBiasedSampler::new(l, t)).collect();
    let states = &path.states[..n];
    let mut spine_positions = vec![0.0];
    let mut spine_displacements = Vec::with_capacity(n);
    let mut log_p = vec![0.0];
    let mut siblings = Vec::with_capacity(n);
    for (k, &state) in states.iter().enumerate() {
        let draw = samplers[state].sample(rng);
        let here = spine_positions[k];
        let sub_states = &states[k + 1..];
        let log_p_sub: f64 = sub_states.iter().map(|&s| model.law(s).log_m(t)).sum();
        let mut level = Vec::with_capacity(draw.count().saturating_sub(1));
        for (i, &d) in draw.displacements.iter().enumerate() {
            if i == draw.spine_child {
                continue;
            }
            let mut evolver = Evolver::from_states(sub_states, model, cap);
            while evolver.current().generation() < sub_states.len() && !evolver.current().extinct() {
                evolver.step(rng)?;
            }
            let last = evolver.into_current();
            let lz = last.log_partition(t);
            level.push(SiblingSummary {
                generation: k + 1,
                displacement: d,
                position: here + d,
                subtree_log_ztilde: lz,
                subtree_w: (lz - log_p_sub).exp(),
                subtree_population: last.population(),
            });
        }
        siblings.push(level);
        let step = draw.displacements[draw.spine_child];
        spine_displacements.push(step);
        spine_positions.push(here + step);
        log_p.push(log_p[k] + model.law(state).log_m(t));
    }
    let tilde_x = spine_positions
        .iter()
        .zip(&log_p)
        .map(|(s, lp)| (t * s - lp).exp())
        .collect();
    Ok(SpineRealization {
        t,
        n,
        spine_displacements,
        spine_positions,
        log_p,
        tilde_x,
        siblings,
    })
}

/// Both sides of `E_Q g(W_{n−k,ω_k}) = E_{T^kξ} W_{n−k} g(W_{n−k})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityReport {
    pub lhs: f64,
    pub se_lhs: f64,
    pub rhs: f64,
    pub se_rhs: f64,
    /// The two 95% confidence intervals intersect.
    pub overlap: bool,
    /// g vanished on every sample of both sides.
    pub degenerate_g: bool,
}

pub const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpineSettings {
    pub t: f64,
    pub n: usize,
    pub k: usize,
    pub replicates: usize,
    pub cap: usize,
    pub seed: u64,
}

fn check_levels(path: &EnvironmentPath, s: &SpineSettings) -> Result<(), SimError> {
    if s.n > path.len() {
        return Err(SimError::PathTooShort {
            needed: s.n,
            available: path.len(),
        });
    }
    Ok(())
}

/// Q-side samples of `(X̃_{ω_k}(t), W_{n−k,ω_k}(t))`.
pub fn spine_pairs(
    path: &EnvironmentPath,
    model: &EnvironmentModel,
    s: &SpineSettings,
) -> Result<Vec<(f64, f64)>, SimError> {
    check_levels(path, s)?;
    let k = s.k.min(s.n);
    run_replicates(s.replicates, |i| {
        let mut rng = stream_rng(s.seed, Stream::Spine, i);
        let sp = sample_spine_tree(path, model, s.t, s.n, s.cap, &mut rng)?;
        Ok((sp.tilde_x[k], sp.subtree_w(k)))
    })
}

/// P-side samples of `W_{n−k}(t)` under the shifted environment T^kξ.
pub fn shifted_w_samples(
    path: &EnvironmentPath,
    model: &EnvironmentModel,
    s: &SpineSettings,
) -> Result<Vec<f64>, SimError> {
    check_levels(path, s)?;
    let k = s.k.min(s.n);
    let shifted = &path.states[k..s.n];
    let log_p: f64 = shifted.iter().map(|&st| model.law(st).log_m(s.t)).sum();
    run_replicates(s.replicates, |i| {
        let mut rng = stream_rng(s.seed, Stream::Tree, i);
        let mut evolver = Evolver::from_states(shifted, model, s.cap);
        while evolver.current().generation() < shifted.len() && !evolver.current().extinct() {
            evolver.step(&mut rng)?;
        }
        Ok((evolver.current().log_partition(s.t) - log_p).exp())
    })
}

pub fn verify_w_identity<G>(
    path: &EnvironmentPath,
    model: &EnvironmentModel,
    settings: &SpineSettings,
    g: G,
) -> Result<IdentityReport, SimError>
where
    G: Fn(f64) -> f64 + Sync,
{
    let q = spine_pairs(path, model, settings)?;
    let p = shifted_w_samples(path, model, settings)?;
    let lhs_vals: Vec<f64> = q.iter().map(|&(_, w)| g(w)).collect();
    let rhs_vals: Vec<f64> = p.iter().map(|&w| w * g(w)).collect();
    Ok(identity_report(&lhs_vals, &rhs_vals))
}

fn identity_report(lhs_vals: &[f64], rhs_vals: &[f64]) -> IdentityReport {
    let l: MeanAccumulator = lhs_vals.iter().copied().collect();
    let r: MeanAccumulator = rhs_vals.iter().copied().collect();
    let gap = (l.mean() - r.mean()).abs();
    IdentityReport {
        lhs: l.mean(),
        se_lhs: l.se(),
        rhs: r.mean(),
        se_rhs: r.se(),
        overlap: gap <= Z_95 * (l.se() + r.se()),
        degenerate_g: lhs_vals.iter().all(|&v| v == 0.0) && rhs_vals.iter().all(|&v| v == 0.0),
    }
}

/// Sample correlation of `X̃_{ω_k}(t)` and `W_{n−k,ω_k}(t)` under Q_ξ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndependenceReport {
    pub correlation: f64,
    /// `4/√R`.
    pub bound: f64,
    pub within_bound: bool,
    pub permutation_p: f64,
    pub replicates: usize,
}

pub fn verify_independence(
    path: &EnvironmentPath,
    model: &EnvironmentModel,
    settings: &SpineSettings,
    permutations: usize,
) -> Result<IndependenceReport, SimError> {
    let pairs = spine_pairs(path, model, settings)?;
    let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let w: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let corr = correlation(&x, &w);
    let bound = 4.0 / (pairs.len() as f64).sqrt();
    let permutation_p = if corr == 0.0 {
        1.0
    } else {
        let mut rng = stream_rng(settings.seed, Stream::Permutation, 0);
        permutation_p_value(&x, &w, permutations, &mut rng)
    };
    Ok(IndependenceReport {
        correlation: corr,
        bound,
        within_bound: corr.abs() < bound,
        permutation_p,
        replicates: pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mixed_law() -> OffspringLaw {
        OffspringLaw::finite_table(vec![
            TableAtom::new(0.5, vec![1.0, -1.0]),
            TableAtom::new(0.5, vec![0.0]),
        ])
        .unwrap()
    }

    #[test]
    fn biased_count_law_at_zero() {
        let law = size_biased_count_law(&mixed_law(), 0.0).unwrap();
        assert_eq!(law.len(), 2);
        assert_eq!(law[0].0, 1);
        assert!((law[0].1 - 1.0 / 3.0).abs() < 1e-15);
        assert!((law[1].1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn binary_spine_child_frequency() {
        let law = OffspringLaw::finite_table(vec![TableAtom::new(1.0, vec![1.0, -1.0])]).unwrap();
        let sampler = SizeBiasedSampler::new(&law, 1.0);
        let mut rng = stream_rng(5, Stream::Spine, 0);
        let r = 20_000;
        let mut plus = 0;
        for _ in 0..r {
            let d = sampler.sample(&mut rng);
            assert_eq!(d.count(), 2);
            if d.displacements[d.spine_child] == 1.0 {
                plus += 1;
            }
        }
        let p = 1f64.exp() / (1f64.exp() + (-1f64).exp());
        let se = (p * (1.0 - p) / r as f64).sqrt();
        assert!((plus as f64 / r as f64 - p).abs() < 4.0 * se);
    }

    #[test]
    fn root_only_spine() {
        let model = EnvironmentModel::single(mixed_law());
        let path = EnvironmentPath::constant(0, 3);
        let mut rng = stream_rng(1, Stream::Spine, 0);
        let sp = sample_spine_tree(&path, &model, 0.5, 0, 100, &mut rng).unwrap();
        assert_eq!(sp.spine_positions, vec![0.0]);
        assert!(sp.siblings.is_empty());
        assert_eq!(sp.total_w(), 1.0);
    }

    #[test]
    fn single_child_law_spine() {
        let law = OffspringLaw::finite_table(vec![TableAtom::new(1.0, vec![0.0])]).unwrap();
        let model = EnvironmentModel::single(law);
        let path = EnvironmentPath::constant(0, 6);
        let mut rng = stream_rng(1, Stream::Spine, 0);
        let sp = sample_spine_tree(&path, &model, 0.0, 6, 100, &mut rng).unwrap();
        assert!(sp.tilde_x.iter().all(|&x| x == 1.0));
        assert!(sp.siblings.iter().all(|l| l.is_empty()));
        assert_eq!(sp.population(), 1);
    }

    #[test]
    fn positions_telescope_and_tilde_x_recomputes() {
        let model = EnvironmentModel::single(OffspringLaw::poisson_gaussian(2.0, 0.1, 0.8).unwrap());
        let path = EnvironmentPath::constant(0, 5);
        for i in 0..100 {
            let mut rng = stream_rng(2, Stream::Spine, i);
            let sp = sample_spine_tree(&path, &model, 0.7, 5, 100_000, &mut rng).unwrap();
            for k in 0..5 {
                assert_eq!(sp.spine_positions[k + 1], sp.spine_positions[k] + sp.spine_displacements[k]);
            }
            for k in 0..=5 {
                let p_k: f64 = (0..k).map(|_| model.law(0).log_m(0.7)).sum();
                let direct = (0.7 * sp.spine_positions[k]).exp() / p_k.exp();
                assert!((sp.tilde_x[k] - direct).abs() <= 1e-12 * direct.max(1.0));
            }
        }
    }

    #[test]
    fn branching_decomposition_of_w() {
        let model = EnvironmentModel::single(mixed_law());
        let path = EnvironmentPath::constant(0, 5);
        let mut rng = stream_rng(8, Stream::Spine, 0);
        let sp = sample_spine_tree(&path, &model, 0.5, 5, 1000, &mut rng).unwrap();
        // W_n = X̃_{ω_1} W_{n−1,ω_1} + Σ_{siblings of ω_1} X̃_v W_{n−1,v}
        let lm = model.law(0).log_m(0.5);
        let mut w = sp.tilde_x[1] * sp.subtree_w(1);
        for s in &sp.siblings[0] {
            w += (0.5 * s.position - lm).exp() * s.subtree_w;
        }
        assert!((w - sp.total_w()).abs() < 1e-12);
    }

    #[test]
    fn deterministic_law_has_zero_correlation() {
        let law = OffspringLaw::finite_table(vec![TableAtom::new(1.0, vec![1.0, -1.0])]).unwrap();
        let model = EnvironmentModel::single(law);
        let path = EnvironmentPath::constant(0, 4);
        let settings = SpineSettings {
            t: 0.0,
            n: 4,
            k: 2,
            replicates: 200,
            cap: 1000,
            seed: 3,
        };
        let rep = verify_independence(&path, &model, &settings, 50).unwrap();
        assert_eq!(rep.correlation, 0.0);
        let id = verify_w_identity(&path, &model, &settings, |w| w).unwrap();
        assert!((id.lhs - 1.0).abs() < 1e-12 && (id.rhs - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_g_gives_exactly_one() {
        let model = EnvironmentModel::single(mixed_law());
        let path = EnvironmentPath::constant(0, 5);
        let settings = SpineSettings {
            t: 0.5,
            n: 5,
            k: 2,
            replicates: 300,
            cap: 1000,
            seed: 4,
        };
        let id = verify_w_identity(&path, &model, &settings, |_| 1.0).unwrap();
        assert_eq!(id.lhs, 1.0);
        assert!((id.rhs - 1.0).abs() < 6.0 * id.se_rhs + 1e-12);
        let zero = verify_w_identity(&path, &model, &settings, |_| 0.0).unwrap();
        assert!(zero.degenerate_g);
    }
}
