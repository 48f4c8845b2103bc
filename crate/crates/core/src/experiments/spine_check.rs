use super::{Experiment, ExperimentError, ExperimentReport, Table, Value, Verdict};
use crate::env_model::{EnvironmentModel, OffspringLaw};
use crate::exact::{enumerate_trees, w_from_positions, ExactError, DEFAULT_SUPPORT_LIMIT};
use crate::numerics::NeumaierSum;
use crate::rng::{stream_rng, Stream};
use crate::spine::{
    rejection_size_biased_offspring, size_biased_count_law, verify_independence, verify_w_identity, IdentityReport,
    IndependenceReport, SizeBiasedSampler, SpineSettings,
};
use crate::stats::{ks_two_sample, KsResult};

pub const MARGINAL_TOL: f64 = 1e-12;
pub const KS_LEVEL: f64 = 0.01;
pub const PERMUTATION_LEVEL: f64 = 0.01;

/// The test function g in `E_Q g(W_{n−k,ω_k}) = E W_{n−k} g(W_{n−k})`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpineFunction {
    Identity,
    One,
    Square,
}

impl SpineFunction {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "identity" => Some(Self::Identity),
            "one" => Some(Self::One),
            "square" => Some(Self::Square),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::One => "one",
            Self::Square => "square",
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Identity => x,
            Self::One => 1.0,
            Self::Square => x * x,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpineCheckConfig {
    pub t: f64,
    pub n: usize,
    pub k: usize,
    pub g: SpineFunction,
    pub replicates: usize,
    pub seed: u64,
    pub cap: usize,
    pub permutations: usize,
    /// Tilt, sample size and envelope of the Poisson rejection comparison.
    pub ks_t: f64,
    pub ks_samples: usize,
    pub ks_envelope: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonKs {
    pub state: usize,
    pub count: KsResult,
    pub spine_displacement: KsResult,
    pub proposals: usize,
}

impl PoissonKs {
    pub fn pass(&self) -> bool {
        self.count.p_value > KS_LEVEL && self.spine_displacement.p_value > KS_LEVEL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpineCheckOutcome {
    pub g: SpineFunction,
    pub identity: IdentityReport,
    /// Exact `E_{T^kξ} W_{n−k} g(W_{n−k})` when the subtree law is enumerable.
    pub exact_rhs: Option<f64>,
    pub independence: IndependenceReport,
    /// Largest gap between the size-biased count law at t = 0 and the N/π reweighting.
    pub marginal_gap: Option<f64>,
    pub poisson_ks: Vec<PoissonKs>,
}

impl SpineCheckOutcome {
    pub fn exact_match(&self) -> Option<bool> {
        self.exact_rhs
            .map(|e| (self.identity.rhs - e).abs() <= 3.0 * self.identity.se_rhs + 1e-12 * e.abs().max(1.0))
    }

    pub fn independence_pass(&self) -> bool {
        self.independence.within_bound && self.independence.permutation_p > PERMUTATION_LEVEL
    }

    pub fn pass(&self) -> bool {
        self.identity.overlap
            && self.exact_match() != Some(false)
            && self.independence_pass()
            && self.marginal_gap.is_none_or(|g| g <= MARGINAL_TOL)
            && self.poisson_ks.iter().all(PoissonKs::pass)
    }
}

/// Largest deviation of the size-biased count law from `P(N = c)·c/π` over all finite-table states.
fn count_marginal_gap(model: &EnvironmentModel) -> Option<f64> {
    let mut worst: Option<f64> = None;
    for law in model.states() {
        let OffspringLaw::FiniteTable(ft) = law else { continue };
        let biased = size_biased_count_law(law, 0.0).expect("finite table");
        let pi = law.mean_offspring();
        for (c, p) in biased {
            let direct: NeumaierSum = ft
                .atoms()
                .iter()
                .filter(|a| a.n_children() == c)
                .map(|a| a.prob * c as f64 / pi)
                .collect();
            let gap = (p - direct.total()).abs();
            worst = Some(worst.map_or(gap, |w: f64| w.max(gap)));
        }
    }
    worst
}

fn poisson_ks(model: &EnvironmentModel, config: &SpineCheckConfig) -> Vec<PoissonKs> {
    let mut out = Vec::new();
    for (state, law) in model.states().iter().enumerate() {
        if !matches!(law, OffspringLaw::PoissonGaussian(_)) {
            continue;
        }
        let sampler = SizeBiasedSampler::new(law, config.ks_t);
        let mut direct_rng = stream_rng(config.seed, Stream::Auxiliary, 2 * state as u64);
        let mut oracle_rng = stream_rng(config.seed, Stream::Auxiliary, 2 * state as u64 + 1);
        let mut counts = (Vec::new(), Vec::new());
        let mut spines = (Vec::new(), Vec::new());
        let mut proposals = 0usize;
        for _ in 0..config.ks_samples {
            let d = sampler.sample(&mut direct_rng);
            counts.0.push(d.count() as f64);
            spines.0.push(d.displacements[d.spine_child]);
            let (o, used) = rejection_size_biased_offspring(law, config.ks_t, config.ks_envelope, &mut oracle_rng);
            proposals += used;
            counts.1.push(o.count() as f64);
            spines.1.push(o.displacements[o.spine_child]);
        }
        out.push(PoissonKs {
            state,
            count: ks_two_sample(&counts.0, &counts.1),
            spine_displacement: ks_two_sample(&spines.0, &spines.1),
            proposals,
        });
    }
    out
}

fn exact_rhs(model: &EnvironmentModel, states: &[usize], t: f64, g: SpineFunction) -> Result<Option<f64>, ExperimentError> {
    let mut acc = NeumaierSum::default();
    match enumerate_trees(model, states, DEFAULT_SUPPORT_LIMIT, |p, pos| {
        let w = w_from_positions(model, states, t, pos);
        acc.add(p * w * g.apply(w));
    }) {
        Ok(_) => Ok(Some(acc.total())),
        Err(ExactError::NotFinite { .. } | ExactError::SupportTooLarge { .. }) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Spinal identity, independence, count marginal and Poisson oracle checks.
pub fn run_spine_check(model: &EnvironmentModel, config: &SpineCheckConfig) -> Result<SpineCheckOutcome, ExperimentError> {
    if config.k == 0 || config.k > config.n {
        return Err(ExperimentError::Refused(format!("k = {} must lie in 1..=n = {}", config.k, config.n)));
    }
    if !model.states().iter().all(|l| l.log_m(config.t).is_finite()) {
        return Err(ExperimentError::Refused("m(t) is not finite".into()));
    }
    let path = model.sample_path(config.n, config.seed);
    let settings = SpineSettings {
        t: config.t,
        n: config.n,
        k: config.k,
        replicates: config.replicates,
        cap: config.cap,
        seed: config.seed,
    };
    let g = config.g;
    let identity = verify_w_identity(&path, model, &settings, move |x| g.apply(x))?;
    let independence = verify_independence(&path, model, &settings, config.permutations)?;
    let exact = exact_rhs(model, &path.states[config.k..config.n], config.t, g)?;
    Ok(SpineCheckOutcome {
        g,
        identity,
        exact_rhs: exact,
        independence,
        marginal_gap: count_marginal_gap(model),
        poisson_ks: poisson_ks(model, config),
    })
}

fn optional(v: Option<f64>) -> Value {
    v.map(Value::from).unwrap_or_else(|| Value::from("na"))
}

impl Experiment for SpineCheckOutcome {
    fn report(&self) -> ExperimentReport {
        let id = &self.identity;
        let mut table = Table::new(&["check", "lhs", "rhs", "se_lhs", "se_rhs", "pass"]);
        table.push(vec![
            Value::from("w_identity"),
            Value::from(id.lhs),
            Value::from(id.rhs),
            Value::from(id.se_lhs),
            Value::from(id.se_rhs),
            Value::from(id.overlap),
        ]);
        if let Some(e) = self.exact_rhs {
            table.push(vec![
                Value::from("exact_rhs"),
                Value::from(id.rhs),
                Value::from(e),
                Value::from(0.0),
                Value::from(id.se_rhs),
                Value::from(self.exact_match().unwrap_or(false)),
            ]);
        }
        table.push(vec![
            Value::from("independence"),
            Value::from(self.independence.correlation),
            Value::from(self.independence.bound),
            Value::from(0.0),
            Value::from(0.0),
            Value::from(self.independence_pass()),
        ]);
        for ks in &self.poisson_ks {
            table.push(vec![
                Value::from(format!("ks_count_state_{}", ks.state)),
                Value::from(ks.count.statistic),
                Value::from(ks.count.p_value),
                Value::from(0.0),
                Value::from(0.0),
                Value::from(ks.count.p_value > KS_LEVEL),
            ]);
            table.push(vec![
                Value::from(format!("ks_spine_state_{}", ks.state)),
                Value::from(ks.spine_displacement.statistic),
                Value::from(ks.spine_displacement.p_value),
                Value::from(0.0),
                Value::from(0.0),
                Value::from(ks.spine_displacement.p_value > KS_LEVEL),
            ]);
        }
        ExperimentReport {
            experiment: "spine-check",
            verdict: Verdict::from_pass(self.pass()),
            table,
            summary: vec![
                ("g", Value::from(self.g.as_str())),
                ("overlap", Value::from(id.overlap)),
                ("degenerate_g", Value::from(id.degenerate_g)),
                ("exact_rhs", optional(self.exact_rhs)),
                ("correlation", Value::from(self.independence.correlation)),
                ("permutation_p", Value::from(self.independence.permutation_p)),
                ("marginal_gap", optional(self.marginal_gap)),
                ("replicates", Value::from(self.independence.replicates)),
            ],
        }
    }
}
