use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson, StandardNormal};

use super::ModelError;
use crate::numerics::{logsumexp_iter, normal_cdf, NeumaierSum};

const PROB_SUM_TOL: f64 = 1e-12;

/// One outcome of a finite reproduction table: with probability `prob`
/// the particle has `displacements.len()` children at the given offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct TableAtom {
    pub prob: f64,
    pub displacements: Vec<f64>,
}

impl TableAtom {
    pub fn new(prob: f64, displacements: Vec<f64>) -> Self {
        Self { prob, displacements }
    }

    pub fn n_children(&self) -> usize {
        self.displacements.len()
    }
}

/// Poisson(lambda) children with i.i.d. Gaussian(mu, s²) displacements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonGaussian {
    lambda: f64,
    mu: f64,
    s: f64,
}

impl PoissonGaussian {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn s(&self) -> f64 {
        self.s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteTable {
    atoms: Vec<TableAtom>,
    mean_count: f64,
}

impl FiniteTable {
    pub fn atoms(&self) -> &[TableAtom] {
        &self.atoms
    }

    fn support(&self) -> impl Iterator<Item = (f64, &TableAtom)> + Clone {
        self.atoms.iter().filter(|a| a.prob > 0.0).map(|a| (a.prob.ln(), a))
    }

    fn log_sum_children(atom: &TableAtom, t: f64) -> f64 {
        logsumexp_iter(atom.displacements.iter().map(move |d| t * d))
    }

    fn log_m(&self, t: f64) -> f64 {
        logsumexp_iter(
            self.support()
                .flat_map(move |(lp, a)| a.displacements.iter().map(move |d| lp + t * d)),
        )
    }

    /// `log E (Σᵢ e^{tLᵢ})^r`.
    fn log_power_moment(&self, t: f64, r: f64) -> f64 {
        logsumexp_iter(self.support().map(move |(lp, a)| {
            if a.displacements.is_empty() {
                f64::NEG_INFINITY
            } else {
                lp + r * Self::log_sum_children(a, t)
            }
        }))
    }
}

/// Reproduction law of one environment state: the point process (N, L₁..L_N).
#[derive(Debug, Clone, PartialEq)]
pub enum OffspringLaw {
    PoissonGaussian(PoissonGaussian),
    FiniteTable(FiniteTable),
}

impl OffspringLaw {
    pub fn poisson_gaussian(lambda: f64, mu: f64, s: f64) -> Result<Self, ModelError> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(ModelError::InvalidParameter {
                field: "lambda",
                reason: format!("must be finite and > 0, got {lambda}"),
            });
        }
        if !mu.is_finite() {
            return Err(ModelError::InvalidParameter {
                field: "mu",
                reason: format!("must be finite, got {mu}"),
            });
        }
        if !(s.is_finite() && s >= 0.0) {
            return Err(ModelError::InvalidParameter {
                field: "s",
                reason: format!("must be finite and >= 0, got {s}"),
            });
        }
        Ok(Self::PoissonGaussian(PoissonGaussian { lambda, mu, s }))
    }

    pub fn finite_table(atoms: Vec<TableAtom>) -> Result<Self, ModelError> {
        if atoms.is_empty() {
            return Err(ModelError::InvalidParameter {
                field: "atoms",
                reason: "table has no atoms".into(),
            });
        }
        let mut sum = NeumaierSum::default();
        for (i, a) in atoms.iter().enumerate() {
            if !(a.prob.is_finite() && a.prob >= 0.0) {
                return Err(ModelError::InvalidAtom {
                    atom: i,
                    reason: format!("probability must be in [0, 1], got {}", a.prob),
                });
            }
            if a.displacements.iter().any(|d| !d.is_finite()) {
                return Err(ModelError::InvalidAtom {
                    atom: i,
                    reason: "displacements must be finite".into(),
                });
            }
            sum.add(a.prob);
        }
        let total = sum.total();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(ModelError::ProbabilitySum { sum: total });
        }
        let mean_count: f64 = atoms
            .iter()
            .map(|a| a.prob * a.n_children() as f64)
            .collect::<NeumaierSum>()
            .total();
        if mean_count <= 0.0 {
            return Err(ModelError::ZeroMeanOffspring);
        }
        Ok(Self::FiniteTable(FiniteTable { atoms, mean_count }))
    }

    /// π = m(0) = E N.
    pub fn mean_offspring(&self) -> f64 {
        match self {
            Self::PoissonGaussian(pg) => pg.lambda,
            Self::FiniteTable(ft) => ft.mean_count,
        }
    }

    /// P(N = 0).
    pub fn extinction_mass(&self) -> f64 {
        match self {
            Self::PoissonGaussian(pg) => (-pg.lambda).exp(),
            Self::FiniteTable(ft) => ft
                .atoms
                .iter()
                .filter(|a| a.displacements.is_empty())
                .map(|a| a.prob)
                .sum(),
        }
    }

    /// True when every displacement is drawn from a finite set, so particles
    /// can coincide and be aggregated.
    pub fn is_lattice(&self) -> bool {
        matches!(self, Self::FiniteTable(_))
    }

    /// `log m(t)`, with `m(t) = E Σᵢ e^{tLᵢ}`.
    pub fn log_m(&self, t: f64) -> f64 {
        match self {
            Self::PoissonGaussian(pg) => pg.lambda.ln() + pg.mu * t + 0.5 * pg.s * pg.s * t * t,
            Self::FiniteTable(ft) => ft.log_m(t),
        }
    }

    /// `log(m(u) / m(0))`, accurate for small `u` where the naive difference cancels.
    pub fn log_m_ratio(&self, u: f64) -> f64 {
        match self {
            Self::PoissonGaussian(pg) => pg.mu * u + 0.5 * pg.s * pg.s * u * u,
            Self::FiniteTable(ft) => {
                let span = ft
                    .atoms
                    .iter()
                    .flat_map(|a| a.displacements.iter())
                    .fold(0.0f64, |m, d| m.max(d.abs()));
                if (u * span).abs() > 1.0 {
                    return ft.log_m(u) - ft.mean_count.ln();
                }
                let excess: NeumaierSum = ft
                    .atoms
                    .iter()
                    .flat_map(|a| a.displacements.iter().map(move |d| a.prob * (u * d).exp_m1()))
                    .collect();
                (excess.total() / ft.mean_count).ln_1p()
            }
        }
    }

    /// `m'(t) / m(t)`.
    pub fn log_m_derivative(&self, t: f64) -> f64 {
        match self {
            Self::PoissonGaussian(pg) => pg.mu + pg.s * pg.s * t,
            Self::FiniteTable(ft) => {
                let shift = ft
                    .support()
                    .flat_map(|(lp, a)| a.displacements.iter().map(move |d| lp + t * d))
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut num = NeumaierSum::default();
                let mut den = NeumaierSum::default();
                for (lp, a) in ft.support() {
                    for d in &a.displacements {
                        let w = (lp + t * d - shift).exp();
                        num.add(w * d);
                        den.add(w);
                    }
                }
                num.total() / den.total()
            }
        }
    }

    /// `E_ξ Σᵢ Lᵢ`.
    pub fn first_displacement_sum(&self) -> f64 {
        match self {
            Self::PoissonGaussian(pg) => pg.lambda * pg.mu,
            Self::FiniteTable(ft) => ft
                .atoms
                .iter()
                .flat_map(|a| a.displacements.iter().map(move |d| a.prob * d))
                .collect::<NeumaierSum>()
                .total(),
        }
    }

    /// `E_ξ Σᵢ Lᵢ²` (not normalized by π).
    pub fn second_displacement_sum(&self) -> f64 {
        match self {
            Self::PoissonGaussian(pg) => pg.lambda * (pg.mu * pg.mu + pg.s * pg.s),
            Self::FiniteTable(ft) => ft
                .atoms
                .iter()
                .flat_map(|a| a.displacements.iter().map(move |d| a.prob * d * d))
                .collect::<NeumaierSum>()
                .total(),
        }
    }

    /// `(1/π) E_ξ Σᵢ Lᵢ²`.
    pub fn second_displacement_moment(&self) -> f64 {
        match self {
            Self::PoissonGaussian(pg) => pg.mu * pg.mu + pg.s * pg.s,
            Self::FiniteTable(ft) => self.second_displacement_sum() / ft.mean_count,
        }
    }

    /// `(1/π) E_ξ Σᵢ e^{δ|Lᵢ|}`.
    pub fn exp_abs_moment(&self, delta: f64) -> f64 {
        match self {
            Self::PoissonGaussian(pg) => {
                let (mu, s) = (pg.mu, pg.s);
                if s == 0.0 {
                    return (delta * mu.abs()).exp();
                }
                // E e^{δ|X|} for X ~ N(mu, s²), split at 0.
                let half = 0.5 * delta * delta * s * s;
                (delta * mu + half).exp() * normal_cdf(mu / s + delta * s)
                    + (-delta * mu + half).exp() * normal_cdf(-mu / s + delta * s)
            }
            Self::FiniteTable(ft) => {
                let total: NeumaierSum = ft
                    .atoms
                    .iter()
                    .flat_map(|a| a.displacements.iter().map(move |d| a.prob * (delta * d.abs()).exp()))
                    .collect();
                total.total() / ft.mean_count
            }
        }
    }

    /// `log E_ξ W₁(t)^r` with `W₁(t) = Σᵢ e^{tLᵢ} / m(t)`.
    ///
    /// Exact for finite tables at any `r`; for the Poisson family only `r = 2`
    /// has a closed form, other orders return `None`.
    pub fn log_w1_moment(&self, t: f64, r: f64) -> Option<f64> {
        match self {
            Self::PoissonGaussian(pg) => {
                if r == 2.0 {
                    Some(((pg.s * pg.s * t * t).exp() / pg.lambda + 1.0).ln())
                } else if r == 1.0 {
                    Some(0.0)
                } else {
                    None
                }
            }
            Self::FiniteTable(ft) => Some(ft.log_power_moment(t, r) - r * ft.log_m(t)),
        }
    }

    /// `E_ξ W₁(t)²`; finite for both families at every real `t`.
    pub fn w1_second_moment(&self, t: f64) -> f64 {
        self.log_w1_moment(t, 2.0)
            .expect("second moment has a closed form for both families")
            .exp()
    }

    /// Law with displacements `t*·Lᵢ − log m(t*)`; its transform equals 1 at 1.
    pub fn normalized_at(&self, t_star: f64) -> Result<Self, ModelError> {
        let shift = self.log_m(t_star);
        if !shift.is_finite() {
            return Err(ModelError::NonFiniteTransform { t: t_star });
        }
        match self {
            Self::PoissonGaussian(pg) => Self::poisson_gaussian(
                pg.lambda,
                t_star * pg.mu - shift,
                t_star.abs() * pg.s,
            ),
            Self::FiniteTable(ft) => Self::finite_table(
                ft.atoms
                    .iter()
                    .map(|a| TableAtom {
                        prob: a.prob,
                        displacements: a.displacements.iter().map(|d| t_star * d - shift).collect(),
                    })
                    .collect(),
            ),
        }
    }

    pub fn sampler(&self) -> LawSampler {
        match self {
            Self::PoissonGaussian(pg) => LawSampler::Poisson {
                count: Poisson::new(pg.lambda).expect("lambda validated at construction"),
                mu: pg.mu,
                s: pg.s,
            },
            Self::FiniteTable(ft) => {
                let mut acc = 0.0;
                let cumulative = ft
                    .atoms
                    .iter()
                    .map(|a| {
                        acc += a.prob;
                        acc
                    })
                    .collect();
                LawSampler::Table {
                    atoms: ft.atoms.clone(),
                    cumulative,
                }
            }
        }
    }
}

/// Pre-built sampling state for one law.
#[derive(Debug, Clone)]
pub enum LawSampler {
    Poisson { count: Poisson<f64>, mu: f64, s: f64 },
    Table { atoms: Vec<TableAtom>, cumulative: Vec<f64> },
}

impl LawSampler {
    /// Draws one offspring vector and appends the displacements to `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) -> usize {
        match self {
            Self::Poisson { count, mu, s } => {
                let n = count.sample(rng) as usize;
                for _ in 0..n {
                    let z: f64 = rng.sample(StandardNormal);
                    out.push(mu + s * z);
                }
                n
            }
            Self::Table { atoms, .. } => {
                let atom = &atoms[self.pick_atom(rng)];
                out.extend_from_slice(&atom.displacements);
                atom.n_children()
            }
        }
    }

    pub fn pick_atom<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self {
            Self::Table { cumulative, .. } => {
                let u: f64 = rng.random();
                cumulative
                    .iter()
                    .position(|&c| u < c)
                    .unwrap_or(cumulative.len() - 1)
            }
            Self::Poisson { .. } => panic!("pick_atom called on a Poisson law"),
        }
    }

    /// Splits `copies` independent particles over the table atoms
    /// (multinomial by sequential binomials). Returns one count per atom.
    pub fn split_copies<R: Rng + ?Sized>(&self, rng: &mut R, copies: u64, counts: &mut Vec<u64>) {
        let Self::Table { atoms, .. } = self else {
            panic!("split_copies called on a Poisson law");
        };
        counts.clear();
        let mut remaining = copies;
        let mut mass_left = 1.0;
        for (i, a) in atoms.iter().enumerate() {
            if i + 1 == atoms.len() || remaining == 0 {
                counts.push(remaining);
                remaining = 0;
                continue;
            }
            let p = if mass_left > 0.0 { (a.prob / mass_left).clamp(0.0, 1.0) } else { 0.0 };
            let k = if p >= 1.0 {
                remaining
            } else if p <= 0.0 {
                0
            } else {
                Binomial::new(remaining, p).expect("p clamped to [0,1]").sample(rng)
            };
            counts.push(k);
            remaining -= k;
            mass_left -= a.prob;
        }
        counts.resize(atoms.len(), 0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary() -> OffspringLaw {
        OffspringLaw::finite_table(vec![TableAtom::new(1.0, vec![1.0, -1.0])]).unwrap()
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(OffspringLaw::poisson_gaussian(-1.0, 0.0, 1.0).is_err());
        assert!(OffspringLaw::poisson_gaussian(1.0, f64::NAN, 1.0).is_err());
        assert!(OffspringLaw::poisson_gaussian(1.0, 0.0, -0.5).is_err());
        assert!(OffspringLaw::finite_table(vec![TableAtom::new(0.5, vec![1.0])]).is_err());
        assert!(OffspringLaw::finite_table(vec![TableAtom::new(1.0, vec![])]).is_err());
        assert!(OffspringLaw::finite_table(vec![]).is_err());
    }

    #[test]
    fn table_with_tiny_rounding_is_accepted() {
        let law = OffspringLaw::finite_table(vec![
            TableAtom::new(0.1, vec![0.0]),
            TableAtom::new(0.2, vec![0.0]),
            TableAtom::new(0.7, vec![0.0, 1.0]),
        ]);
        assert!(law.is_ok());
    }

    #[test]
    fn log_m_ratio_agrees_with_difference_for_large_u() {
        let law = binary();
        for u in [1e-6, 1e-3, 0.3, 2.0, 10.0] {
            let diff = law.log_m(u) - law.log_m(0.0);
            assert!((law.log_m_ratio(u) - diff).abs() < 1e-12, "u={u}");
        }
    }

    #[test]
    fn extinction_mass() {
        let mixed = OffspringLaw::finite_table(vec![
            TableAtom::new(0.25, vec![]),
            TableAtom::new(0.75, vec![0.0, 0.0]),
        ])
        .unwrap();
        assert_eq!(mixed.extinction_mass(), 0.25);
        assert_eq!(binary().extinction_mass(), 0.0);
    }

    #[test]
    fn multinomial_split_conserves_copies() {
        let law = OffspringLaw::finite_table(vec![
            TableAtom::new(0.2, vec![0.0]),
            TableAtom::new(0.3, vec![1.0]),
            TableAtom::new(0.5, vec![2.0]),
        ])
        .unwrap();
        let sampler = law.sampler();
        let mut rng = crate::rng::stream_rng(1, crate::rng::Stream::Auxiliary, 0);
        let mut counts = Vec::new();
        let mut totals = [0u64; 3];
        for _ in 0..2000 {
            sampler.split_copies(&mut rng, 50, &mut counts);
            assert_eq!(counts.iter().sum::<u64>(), 50);
            for (t, c) in totals.iter_mut().zip(&counts) {
                *t += c;
            }
        }
        let n = 2000.0 * 50.0;
        for (t, p) in totals.iter().zip([0.2f64, 0.3, 0.5]) {
            let se = (p * (1.0 - p) / n).sqrt();
            assert!((*t as f64 / n - p).abs() < 4.0 * se);
        }
    }
}
