//! Exact laws for finite-table models at small depth, used as oracles.
//!
//! Two independent routes are provided. [`quenched_w_law`] builds the law of
//! `W_n(t)` through the branching recursion `W_n = Σᵢ e^{tLᵢ}/m₀(t)·W_{n−1,i}`.
//! [`enumerate_trees`] lists every realization of the first n generations
//! with its probability and leaves all functionals to the caller.

use thiserror::Error;

use crate::env_model::{EnvironmentModel, OffspringLaw, Process, TableAtom};
use crate::numerics::{logsumexp, NeumaierSum};

pub const DEFAULT_SUPPORT_LIMIT: usize = 2_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExactError {
    #[error("state {state} is not a finite table")]
    NotFinite { state: usize },
    #[error("exact support exceeds {limit} points")]
    SupportTooLarge { limit: usize },
    #[error("annealed enumeration requires an i.i.d. environment")]
    NotIid,
}

/// A finitely supported law on ℝ.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteLaw {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

impl FiniteLaw {
    pub fn point(x: f64) -> Self {
        Self {
            values: vec![x],
            probs: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.values
            .iter()
            .zip(&self.probs)
            .map(|(&v, &p)| p * f(v))
            .collect::<NeumaierSum>()
            .total()
    }

    /// Sorts by value and merges bit-identical values.
    fn from_pairs(mut pairs: Vec<(f64, f64)>) -> Self {
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let mut values: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut probs: Vec<f64> = Vec::with_capacity(pairs.len());
        for (v, p) in pairs {
            if values.last() == Some(&v) {
                *probs.last_mut().expect("non-empty") += p;
            } else {
                values.push(v);
                probs.push(p);
            }
        }
        Self { values, probs }
    }
}

fn table_atoms(model: &EnvironmentModel, state: usize) -> Result<&[TableAtom], ExactError> {
    match model.law(state) {
        OffspringLaw::FiniteTable(ft) => Ok(ft.atoms()),
        OffspringLaw::PoissonGaussian(_) => Err(ExactError::NotFinite { state }),
    }
}

/// Law of `W_n(t)` under P_ξ for the environment `states` (n = states.len()).
pub fn quenched_w_law(
    model: &EnvironmentModel,
    states: &[usize],
    t: f64,
    limit: usize,
) -> Result<FiniteLaw, ExactError> {
    let mut law = FiniteLaw::point(1.0);
    for &state in states.iter().rev() {
        let atoms = table_atoms(model, state)?;
        let log_m = model.law(state).log_m(t);
        let mut pairs: Vec<(f64, f64)> = Vec::new();
        for atom in atoms.iter().filter(|a| a.prob > 0.0) {
            let mut conv = FiniteLaw::point(0.0);
            for d in &atom.displacements {
                let a = (t * d - log_m).exp();
                if conv.len().saturating_mul(law.len()) > limit {
                    return Err(ExactError::SupportTooLarge { limit });
                }
                let mut next = Vec::with_capacity(conv.len() * law.len());
                for (&v, &p) in conv.values.iter().zip(&conv.probs) {
                    for (&x, &q) in law.values.iter().zip(&law.probs) {
                        next.push((v + a * x, p * q));
                    }
                }
                conv = FiniteLaw::from_pairs(next);
            }
            pairs.extend(conv.values.iter().zip(&conv.probs).map(|(&v, &p)| (v, atom.prob * p)));
        }
        if pairs.len() > limit {
            return Err(ExactError::SupportTooLarge { limit });
        }
        law = FiniteLaw::from_pairs(pairs);
    }
    Ok(law)
}

/// Calls `visit(prob, positions)` for every realization of generation n
/// (n = states.len()), listing particle positions explicitly.
pub fn enumerate_trees<F: FnMut(f64, &[f64])>(
    model: &EnvironmentModel,
    states: &[usize],
    limit: usize,
    mut visit: F,
) -> Result<usize, ExactError> {
    let tables: Vec<&[TableAtom]> = states
        .iter()
        .map(|&s| table_atoms(model, s))
        .collect::<Result<_, _>>()?;
    let mut visited = 0usize;
    generation(&tables, 0, &[0.0], 1.0, limit, &mut visited, &mut visit)?;
    Ok(visited)
}

fn generation<F: FnMut(f64, &[f64])>(
    tables: &[&[TableAtom]],
    level: usize,
    positions: &[f64],
    prob: f64,
    limit: usize,
    visited: &mut usize,
    visit: &mut F,
) -> Result<(), ExactError> {
    if level == tables.len() {
        *visited += 1;
        if *visited > limit {
            return Err(ExactError::SupportTooLarge { limit });
        }
        visit(prob, positions);
        return Ok(());
    }
    let mut next = Vec::new();
    choose(tables, level, positions, 0, &mut next, prob, limit, visited, visit)
}

#[allow(clippy::too_many_arguments)]
fn choose<F: FnMut(f64, &[f64])>(
    tables: &[&[TableAtom]],
    level: usize,
    parents: &[f64],
    index: usize,
    next: &mut Vec<f64>,
    prob: f64,
    limit: usize,
    visited: &mut usize,
    visit: &mut F,
) -> Result<(), ExactError> {
    if index == parents.len() {
        let children = next.clone();
        return generation(tables, level + 1, &children, prob, limit, visited, visit);
    }
    for atom in tables[level].iter().filter(|a| a.prob > 0.0) {
        let mark = next.len();
        next.extend(atom.displacements.iter().map(|d| parents[index] + d));
        choose(tables, level, parents, index + 1, next, prob * atom.prob, limit, visited, visit)?;
        next.truncate(mark);
    }
    Ok(())
}

/// `W_n(t)` of one enumerated realization: Σ e^{tS} / Π m(t).
pub fn w_from_positions(model: &EnvironmentModel, states: &[usize], t: f64, positions: &[f64]) -> f64 {
    let tx: Vec<f64> = positions.iter().map(|x| t * x).collect();
    let log_p: f64 = states.iter().map(|&s| model.law(s).log_m(t)).sum();
    (logsumexp(&tx) - log_p).exp()
}

/// Which exact route to use for annealed moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Recursion,
    Enumeration,
}

/// `U_n(s, r) = E P_n(t)^s W_n(t)^r` for an i.i.d. finite-table model,
/// averaging the exact quenched moment over all kⁿ environment prefixes.
pub fn annealed_u(
    model: &EnvironmentModel,
    t: f64,
    s: f64,
    r: f64,
    n: usize,
    route: Route,
    limit: usize,
) -> Result<f64, ExactError> {
    let Process::Iid { weights } = model.process() else {
        return Err(ExactError::NotIid);
    };
    let k = weights.len();
    let mut total = NeumaierSum::default();
    let mut states = vec![0usize; n];
    let combos = k.checked_pow(n as u32).ok_or(ExactError::SupportTooLarge { limit })?;
    for code in 0..combos {
        let mut c = code;
        let mut w = 1.0;
        for slot in states.iter_mut() {
            *slot = c % k;
            c /= k;
            w *= weights[*slot];
        }
        if w == 0.0 {
            continue;
        }
        let log_p: f64 = states.iter().map(|&st| model.law(st).log_m(t)).sum();
        let moment = quenched_moment(model, &states, t, r, route, limit)?;
        total.add(w * (s * log_p).exp() * moment);
    }
    Ok(total.total())
}

/// `E_ξ W_n(t)^r` for a fixed environment prefix.
pub fn quenched_moment(
    model: &EnvironmentModel,
    states: &[usize],
    t: f64,
    r: f64,
    route: Route,
    limit: usize,
) -> Result<f64, ExactError> {
    match route {
        Route::Recursion => Ok(quenched_w_law(model, states, t, limit)?.expect(|w| w.powf(r))),
        Route::Enumeration => {
            let mut acc = NeumaierSum::default();
            enumerate_trees(model, states, limit, |p, pos| {
                acc.add(p * w_from_positions(model, states, t, pos).powf(r));
            })?;
            Ok(acc.total())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mixed() -> EnvironmentModel {
        EnvironmentModel::single(
            OffspringLaw::finite_table(vec![
                TableAtom::new(0.5, vec![1.0, -1.0]),
                TableAtom::new(0.5, vec![0.0]),
            ])
            .unwrap(),
        )
    }

    #[test]
    fn w_law_is_a_probability_with_mean_one() {
        let m = mixed();
        for n in 0..=4 {
            let law = quenched_w_law(&m, &vec![0; n], 0.5, DEFAULT_SUPPORT_LIMIT).unwrap();
            assert!((law.expect(|_| 1.0) - 1.0).abs() < 1e-14);
            assert!((law.expect(|w| w) - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn routes_agree() {
        let m = mixed();
        for n in 0..=3 {
            let states = vec![0; n];
            for r in [2.0, 3.0] {
                let a = quenched_moment(&m, &states, 0.7, r, Route::Recursion, DEFAULT_SUPPORT_LIMIT).unwrap();
                let b = quenched_moment(&m, &states, 0.7, r, Route::Enumeration, DEFAULT_SUPPORT_LIMIT).unwrap();
                assert!((a - b).abs() <= 1e-13 * a.abs(), "n={n} r={r}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn enumeration_counts_realizations() {
        let m = mixed();
        // T(d) = T(d−1) + T(d−1)², T(0) = 1
        let counts: Vec<usize> = (0..=3)
            .map(|n| enumerate_trees(&m, &vec![0; n], 1000, |_, _| {}).unwrap())
            .collect();
        assert_eq!(counts, vec![1, 2, 6, 42]);
    }

    #[test]
    fn one_step_moment_matches_closed_form() {
        let m = mixed();
        let closed = m.law(0).log_w1_moment(0.4, 3.0).unwrap().exp();
        let exact = quenched_moment(&m, &[0], 0.4, 3.0, Route::Recursion, 100).unwrap();
        assert!((closed - exact).abs() < 1e-14);
    }

    #[test]
    fn poisson_states_are_refused() {
        let m = EnvironmentModel::single(OffspringLaw::poisson_gaussian(2.0, 0.0, 1.0).unwrap());
        assert_eq!(quenched_w_law(&m, &[0], 0.0, 10), Err(ExactError::NotFinite { state: 0 }));
    }
}
