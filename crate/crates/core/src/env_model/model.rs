use rand::Rng;

use super::{ModelError, OffspringLaw};
use crate::numerics::NeumaierSum;
use crate::rng::{stream_rng, Stream};

const ROW_SUM_TOL: f64 = 1e-12;
const BALANCE_TOL: f64 = 1e-10;

/// How the environment sequence ξ₀, ξ₁, … is generated.
#[derive(Debug, Clone, PartialEq)]
pub enum Process {
    Iid { weights: Vec<f64> },
    MarkovChain { matrix: Vec<Vec<f64>> },
    /// Deterministic cycle, started at a uniformly random offset.
    PeriodicCycle { sequence: Vec<usize> },
}

/// Reproduction laws per state plus a stationary ergodic state process.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentModel {
    states: Vec<OffspringLaw>,
    process: Process,
    stationary: Vec<f64>,
}

impl EnvironmentModel {
    pub fn new(states: Vec<OffspringLaw>, process: Process) -> Result<Self, ModelError> {
        if states.is_empty() {
            return Err(ModelError::EmptyModel);
        }
        let k = states.len();
        let stationary = match &process {
            Process::Iid { weights } => {
                if weights.len() != k {
                    return Err(ModelError::Process(format!(
                        "iid weights has length {}, expected {k}",
                        weights.len()
                    )));
                }
                check_distribution(weights, "iid weights")?;
                weights.clone()
            }
            Process::MarkovChain { matrix } => {
                if matrix.len() != k || matrix.iter().any(|r| r.len() != k) {
                    return Err(ModelError::Process(format!("markov matrix must be {k}x{k}")));
                }
                for (i, row) in matrix.iter().enumerate() {
                    check_distribution(row, &format!("markov matrix row {i}"))?;
                }
                if !is_irreducible(matrix) {
                    return Err(ModelError::Reducible);
                }
                let pi = stationary_distribution(matrix)?;
                let residual = balance_residual(matrix, &pi);
                if residual > BALANCE_TOL {
                    return Err(ModelError::Process(format!(
                        "stationary solve residual {residual:e} exceeds {BALANCE_TOL:e}"
                    )));
                }
                pi
            }
            Process::PeriodicCycle { sequence } => {
                if sequence.is_empty() {
                    return Err(ModelError::Process("cycle sequence is empty".into()));
                }
                if let Some(&bad) = sequence.iter().find(|&&s| s >= k) {
                    return Err(ModelError::UnknownState { state: bad });
                }
                let mut freq = vec![0.0; k];
                for &s in sequence {
                    freq[s] += 1.0;
                }
                freq.iter().map(|f| f / sequence.len() as f64).collect()
            }
        };
        Ok(Self {
            states,
            process,
            stationary,
        })
    }

    /// Convenience constructor for a constant environment.
    pub fn single(law: OffspringLaw) -> Self {
        Self::new(vec![law], Process::Iid { weights: vec![1.0] })
            .expect("a single state with weight 1 is always valid")
    }

    pub fn states(&self) -> &[OffspringLaw] {
        &self.states
    }

    pub fn law(&self, state: usize) -> &OffspringLaw {
        &self.states[state]
    }

    pub fn process(&self) -> &Process {
        &self.process
    }

    /// Law of ξ₀: the weights, the solved stationary vector, or cycle frequencies.
    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    pub fn is_iid(&self) -> bool {
        matches!(self.process, Process::Iid { .. })
    }

    /// `E[f(state)]` under the stationary law, skipping zero-weight states.
    pub fn expect<F: FnMut(&OffspringLaw) -> f64>(&self, mut f: F) -> f64 {
        self.states
            .iter()
            .zip(&self.stationary)
            .filter(|(_, &w)| w > 0.0)
            .map(|(law, &w)| w * f(law))
            .collect::<NeumaierSum>()
            .total()
    }

    /// True when every state satisfies m(1) = 1 within `tol`.
    pub fn is_normalized(&self, tol: f64) -> bool {
        self.states.iter().all(|l| l.log_m(1.0).abs() <= tol)
    }

    pub fn normalized_at(&self, t_star: f64) -> Result<Self, ModelError> {
        if !t_star.is_finite() {
            return Err(ModelError::NonFiniteInput { what: "t_star" });
        }
        let states = self
            .states
            .iter()
            .enumerate()
            .map(|(i, l)| {
                l.normalized_at(t_star).map_err(|e| match e {
                    ModelError::NonFiniteTransform { t } => ModelError::NonFiniteState { state: i, t },
                    other => other,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            states,
            process: self.process.clone(),
            stationary: self.stationary.clone(),
        })
    }

    /// Draws a stationary path of length `horizon`, deterministic in `seed`.
    pub fn sample_path(&self, horizon: usize, seed: u64) -> EnvironmentPath {
        let mut rng = stream_rng(seed, Stream::Environment, 0);
        let states = match &self.process {
            Process::Iid { weights } => (0..horizon).map(|_| categorical(&mut rng, weights)).collect(),
            Process::MarkovChain { matrix } => {
                let mut out = Vec::with_capacity(horizon);
                if horizon > 0 {
                    let mut s = categorical(&mut rng, &self.stationary);
                    out.push(s);
                    for _ in 1..horizon {
                        s = categorical(&mut rng, &matrix[s]);
                        out.push(s);
                    }
                }
                out
            }
            Process::PeriodicCycle { sequence } => {
                let offset = rng.random_range(0..sequence.len());
                (0..horizon).map(|i| sequence[(offset + i) % sequence.len()]).collect()
            }
        };
        EnvironmentPath { seed, states }
    }
}

fn check_distribution(w: &[f64], what: &str) -> Result<(), ModelError> {
    if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(ModelError::Process(format!("{what} must be nonnegative and finite")));
    }
    let total = w.iter().copied().collect::<NeumaierSum>().total();
    if (total - 1.0).abs() > ROW_SUM_TOL {
        return Err(ModelError::Process(format!("{what} sum to {total}, expected 1")));
    }
    Ok(())
}

fn categorical<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

fn is_irreducible(matrix: &[Vec<f64>]) -> bool {
    let k = matrix.len();
    let reach = |forward: bool| {
        let mut seen = vec![false; k];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..k {
                let p = if forward { matrix[i][j] } else { matrix[j][i] };
                if p > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Solves πP = π, Σπ = 1 by Gaussian elimination with partial pivoting on
/// (Pᵀ − I) with the last balance equation replaced by the normalization.
fn stationary_distribution(matrix: &[Vec<f64>]) -> Result<Vec<f64>, ModelError> {
    let k = matrix.len();
    let mut a: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let mut row: Vec<f64> = (0..k)
                .map(|j| matrix[j][i] - if i == j { 1.0 } else { 0.0 })
                .collect();
            row.push(0.0);
            row
        })
        .collect();
    a[k - 1] = vec![1.0; k + 1];
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .expect("non-empty range");
        if a[pivot][col].abs() < 1e-300 {
            return Err(ModelError::Process("singular balance equations".into()));
        }
        a.swap(col, pivot);
        for r in 0..k {
            if r != col {
                let factor = a[r][col] / a[col][col];
                if factor != 0.0 {
                    for c in col..=k {
                        a[r][c] -= factor * a[col][c];
                    }
                }
            }
        }
    }
    Ok((0..k).map(|i| (a[i][k] / a[i][i]).max(0.0)).collect())
}

fn balance_residual(matrix: &[Vec<f64>], pi: &[f64]) -> f64 {
    let k = matrix.len();
    let mut worst = (pi.iter().sum::<f64>() - 1.0).abs();
    for j in 0..k {
        let flow: f64 = (0..k).map(|i| pi[i] * matrix[i][j]).sum();
        worst = worst.max((flow - pi[j]).abs());
    }
    worst
}

/// A realized environment sequence ξ₀..ξ_{n−1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvironmentPath {
    pub seed: u64,
    pub states: Vec<usize>,
}

impl EnvironmentPath {
    pub fn constant(state: usize, horizon: usize) -> Self {
        Self {
            seed: 0,
            states: vec![state; horizon],
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// The shifted environment Tᵏξ = (ξ_k, ξ_{k+1}, …).
    pub fn shifted(&self, k: usize) -> Self {
        Self {
            seed: self.seed,
            states: self.states[k.min(self.states.len())..].to_vec(),
        }
    }
}
