//! Run configuration: parsing, validation, defaults and the canonical text form.
//!
//! A config is one TOML document with top-level `experiment`, `seed`, `out`,
//! `process`, `[[states]]` and `[params]`. Validation walks the whole
//! document and reports every problem with its field path. The canonical
//! text produced by [`RunConfig::describe`] lists every resolved value,
//! defaults included, and parses back to the same config.

use std::collections::BTreeMap;
use std::fmt;

use brwre::{EnvironmentModel, ModelError, OffspringLaw, Process, TableAtom};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

pub const DEFAULT_CAP: u64 = 10_000_000;
pub const DEFAULT_OUT: &str = "out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExperimentId {
    Simulate,
    Rates,
    SpineCheck,
    Martingale,
    LpRate,
    AnnealedLp,
    Uniform,
    MdpQuenched,
    MdpAnnealed,
    MdpPopulation,
    UCheck,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 11] = [
        ExperimentId::Simulate,
        ExperimentId::Rates,
        ExperimentId::SpineCheck,
        ExperimentId::Martingale,
        ExperimentId::LpRate,
        ExperimentId::AnnealedLp,
        ExperimentId::Uniform,
        ExperimentId::MdpQuenched,
        ExperimentId::MdpAnnealed,
        ExperimentId::MdpPopulation,
        ExperimentId::UCheck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::Simulate => "simulate",
            ExperimentId::Rates => "rates",
            ExperimentId::SpineCheck => "spine-check",
            ExperimentId::Martingale => "martingale",
            ExperimentId::LpRate => "lp-rate",
            ExperimentId::AnnealedLp => "annealed-lp",
            ExperimentId::Uniform => "uniform",
            ExperimentId::MdpQuenched => "mdp-quenched",
            ExperimentId::MdpAnnealed => "mdp-annealed",
            ExperimentId::MdpPopulation => "mdp-population",
            ExperimentId::UCheck => "u-check",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.as_str() == name)
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One schema violation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// All violations found in one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

impl ConfigErrors {
    pub fn paths(&self) -> Vec<&str> {
        self.0.iter().map(|e| e.path.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StateDef {
    PoissonGaussian { lambda: f64, mu: f64, s: f64 },
    FiniteTable { atoms: Vec<(f64, Vec<f64>)> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProcessDef {
    Iid { weights: Vec<f64> },
    Markov { matrix: Vec<Vec<f64>> },
    Cycle { sequence: Vec<usize> },
}

/// A resolved parameter value.
#[derive(Debug, Clone, PartialEq)]
pub enum Param {
    Float(f64),
    Int(u64),
    Bool(bool),
    Floats(Vec<f64>),
    Ints(Vec<u64>),
    Text(String),
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Float,
    Positive,
    Int { min: u64 },
    Bool,
    Floats,
    Ints { min: u64 },
    Choice(&'static [&'static str]),
}

struct ParamDef {
    name: &'static str,
    kind: Kind,
    /// `None`: required, or optional with no value when `optional` is set.
    default: Option<Param>,
    optional: bool,
}

fn param(name: &'static str, kind: Kind, default: Param) -> ParamDef {
    ParamDef {
        name,
        kind,
        default: Some(default),
        optional: false,
    }
}

fn required(name: &'static str, kind: Kind) -> ParamDef {
    ParamDef {
        name,
        kind,
        default: None,
        optional: false,
    }
}

fn optional(name: &'static str, kind: Kind) -> ParamDef {
    ParamDef {
        name,
        kind,
        default: None,
        optional: true,
    }
}

fn floats(v: &[f64]) -> Param {
    Param::Floats(v.to_vec())
}

fn schema(experiment: ExperimentId) -> Vec<ParamDef> {
    use ExperimentId::*;
    use Param::{Bool, Float, Int, Text};
    let cap = || param("cap", Kind::Int { min: 1 }, Int(DEFAULT_CAP));
    let int1 = Kind::Int { min: 1 };
    let mut s = match experiment {
        Simulate => vec![
            param("n_max", int1, Int(10)),
            param("t_grid", Kind::Floats, floats(&[-0.5, 0.0, 0.5, 1.0])),
            param("replicates", int1, Int(100)),
            cap(),
        ],
        Rates => vec![
            param("t_star", Kind::Float, Float(1.0)),
            param("p_values", Kind::Floats, floats(&[2.0])),
            param("t_grid", Kind::Floats, floats(&[-1.0, -0.5, 0.0, 0.5, 1.0])),
            param("search_bound", Kind::Positive, Float(brwre::analytics::DEFAULT_SEARCH_BOUND)),
        ],
        SpineCheck => vec![
            param("t", Kind::Float, Float(0.5)),
            param("n", int1, Int(5)),
            param("k", int1, Int(2)),
            param("g", Kind::Choice(&["identity", "one", "square"]), Text("identity".into())),
            param("replicates", int1, Int(10_000)),
            param("permutations", int1, Int(499)),
            param("ks_t", Kind::Float, Float(1.0)),
            param("ks_samples", int1, Int(20_000)),
            param("ks_envelope", Kind::Positive, Float(200.0)),
            cap(),
        ],
        Martingale => vec![
            param("n_max", int1, Int(10)),
            param("t_grid", Kind::Floats, floats(&[-0.5, 0.0, 0.5, 1.0])),
            param("replicates", int1, Int(10_000)),
            param("p_scale", Kind::Positive, Float(1.0)),
            cap(),
        ],
        LpRate => vec![
            param("p", Kind::Float, Float(2.0)),
            param("t_star", Kind::Float, Float(1.0)),
            param("n_max", int1, Int(14)),
            param("replicates", int1, Int(10_000)),
            param("diagnostic", Kind::Bool, Bool(true)),
            cap(),
        ],
        AnnealedLp => vec![
            param("p", Kind::Float, Float(2.0)),
            param("t_star", Kind::Float, Float(1.0)),
            param("n_max", int1, Int(20)),
            param("replicates", int1, Int(10_000)),
            cap(),
        ],
        Uniform => vec![
            required("k_lo", Kind::Float),
            required("k_hi", Kind::Float),
            param("grid_step", Kind::Positive, Float(0.05)),
            param("n_max", int1, Int(16)),
            param("replicates", int1, Int(200)),
            param("epsilon", Kind::Positive, Float(0.05)),
            param("refine", Kind::Bool, Bool(true)),
            cap(),
        ],
        MdpQuenched | MdpAnnealed => vec![
            param("theta", Kind::Float, Float(brwre::experiments::DEFAULT_THETA)),
            param("t_grid", Kind::Floats, floats(&[-1.0, -0.5, 0.5, 1.0])),
            param("n_list", Kind::Ints { min: 1 }, Param::Ints(vec![100, 1000, 10_000])),
            param("tolerance", Kind::Positive, Float(brwre::experiments::DEFAULT_TOLERANCE)),
        ],
        MdpPopulation => vec![
            param("theta", Kind::Float, Float(brwre::experiments::DEFAULT_THETA)),
            param("a_lo", Kind::Float, Float(1.0)),
            param("a_hi", Kind::Float, Float(2.0)),
            param("n_list", Kind::Ints { min: 1 }, Param::Ints(vec![30, 32, 34, 36])),
            param("replicates", int1, Int(200)),
            cap(),
        ],
        UCheck => vec![
            optional("t_star", Kind::Float),
            param("t", Kind::Float, Float(1.0)),
            param("s", Kind::Float, Float(0.0)),
            param("r", Kind::Float, Float(3.0)),
            param("n_max", int1, Int(5)),
            param("replicates", int1, Int(100_000)),
            cap(),
        ],
    };
    if experiment == MdpAnnealed {
        s.push(param("variant", Kind::Choice(&["per_pi", "ratio"]), Text("per_pi".into())));
    }
    s
}

/// A fully validated run description.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentId,
    pub seed: u64,
    pub out: String,
    pub states: Vec<StateDef>,
    pub process: ProcessDef,
    pub params: BTreeMap<&'static str, Param>,
    pub model: EnvironmentModel,
}

/// Values that override the document, typically from command-line flags.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub experiment: Option<ExperimentId>,
    pub seed: Option<u64>,
    pub out: Option<String>,
}

struct Collector {
    errors: Vec<ConfigError>,
}

impl Collector {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.errors.push(ConfigError::new(path, message));
    }

    fn unknown_keys(&mut self, table: &Table, allowed: &[&str], prefix: &str) {
        for key in table.keys() {
            if !allowed.contains(&key.as_str()) {
                self.push(join(prefix, key), "unknown field");
            }
        }
    }

    fn float(&mut self, v: &Value, path: &str) -> Option<f64> {
        let x = match v {
            Value::Float(f) => *f,
            Value::Integer(i) => *i as f64,
            _ => {
                self.push(path, format!("expected a number, got {}", v.type_str()));
                return None;
            }
        };
        if x.is_finite() {
            Some(x)
        } else {
            self.push(path, "must be finite");
            None
        }
    }

    fn float_list(&mut self, v: &Value, path: &str) -> Option<Vec<f64>> {
        let Value::Array(items) = v else {
            self.push(path, format!("expected an array, got {}", v.type_str()));
            return None;
        };
        let parsed: Vec<Option<f64>> = items
            .iter()
            .enumerate()
            .map(|(i, x)| self.float(x, &format!("{path}[{i}]")))
            .collect();
        parsed.into_iter().collect()
    }

    fn uint(&mut self, v: &Value, path: &str) -> Option<u64> {
        match v {
            Value::Integer(i) if *i >= 0 => Some(*i as u64),
            Value::Integer(_) => {
                self.push(path, "must be non-negative");
                None
            }
            _ => {
                self.push(path, format!("expected an integer, got {}", v.type_str()));
                None
            }
        }
    }

    fn uint_list(&mut self, v: &Value, path: &str) -> Option<Vec<u64>> {
        let Value::Array(items) = v else {
            self.push(path, format!("expected an array, got {}", v.type_str()));
            return None;
        };
        let parsed: Vec<Option<u64>> = items
            .iter()
            .enumerate()
            .map(|(i, x)| self.uint(x, &format!("{path}[{i}]")))
            .collect();
        parsed.into_iter().collect()
    }

    fn text<'a>(&mut self, v: &'a Value, path: &str) -> Option<&'a str> {
        match v {
            Value::String(s) => Some(s),
            _ => {
                self.push(path, format!("expected a string, got {}", v.type_str()));
                None
            }
        }
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn parse_seed(c: &mut Collector, v: &Value) -> Option<u64> {
    match v {
        Value::String(s) => match s.parse::<u64>() {
            Ok(x) => Some(x),
            Err(_) => {
                c.push("seed", format!("not an unsigned 64-bit integer: {s:?}"));
                None
            }
        },
        other => c.uint(other, "seed"),
    }
}

fn parse_state(c: &mut Collector, v: &Value, i: usize) -> Option<StateDef> {
    let path = format!("states[{i}]");
    let Value::Table(t) = v else {
        c.push(&path, "expected a table");
        return None;
    };
    let kind = match t.get("kind") {
        Some(k) => c.text(k, &join(&path, "kind"))?,
        None => {
            c.push(join(&path, "kind"), "required field missing");
            return None;
        }
    };
    let get = |c: &mut Collector, key: &str| -> Option<f64> {
        match t.get(key) {
            Some(x) => c.float(x, &join(&path, key)),
            None => {
                c.push(join(&path, key), "required field missing");
                None
            }
        }
    };
    match kind {
        "poisson_gaussian" => {
            c.unknown_keys(t, &["kind", "lambda", "mu", "s"], &path);
            let lambda = get(c, "lambda");
            let mu = get(c, "mu");
            let s = get(c, "s");
            if let Some(l) = lambda {
                if l <= 0.0 {
                    c.push(join(&path, "lambda"), format!("must be > 0, got {l}"));
                }
            }
            if let Some(s) = s {
                if s < 0.0 {
                    c.push(join(&path, "s"), format!("must be >= 0, got {s}"));
                }
            }
            Some(StateDef::PoissonGaussian {
                lambda: lambda?,
                mu: mu?,
                s: s?,
            })
        }
        "finite_table" => {
            c.unknown_keys(t, &["kind", "atoms"], &path);
            let apath = join(&path, "atoms");
            let Some(Value::Array(items)) = t.get("atoms") else {
                c.push(&apath, "required array of atoms");
                return None;
            };
            let mut atoms = Vec::with_capacity(items.len());
            let mut ok = true;
            for (j, item) in items.iter().enumerate() {
                let p = format!("{apath}[{j}]");
                let Value::Table(at) = item else {
                    c.push(&p, "expected a table");
                    ok = false;
                    continue;
                };
                c.unknown_keys(at, &["prob", "displacements"], &p);
                let prob = match at.get("prob") {
                    Some(x) => c.float(x, &join(&p, "prob")),
                    None => {
                        c.push(join(&p, "prob"), "required field missing");
                        None
                    }
                };
                if let Some(pr) = prob {
                    if !(0.0..=1.0).contains(&pr) {
                        c.push(join(&p, "prob"), format!("must lie in [0, 1], got {pr}"));
                    }
                }
                let disp = match at.get("displacements") {
                    Some(x) => c.float_list(x, &join(&p, "displacements")),
                    None => {
                        c.push(join(&p, "displacements"), "required field missing");
                        None
                    }
                };
                match (prob, disp) {
                    (Some(pr), Some(d)) => atoms.push((pr, d)),
                    _ => ok = false,
                }
            }
            ok.then_some(StateDef::FiniteTable { atoms })
        }
        other => {
            c.push(
                join(&path, "kind"),
                format!("unknown kind {other:?}; expected poisson_gaussian or finite_table"),
            );
            None
        }
    }
}

fn parse_process(c: &mut Collector, v: &Value) -> Option<ProcessDef> {
    let Value::Table(t) = v else {
        c.push("process", "expected a table");
        return None;
    };
    let kind = match t.get("kind") {
        Some(k) => c.text(k, "process.kind")?,
        None => {
            c.push("process.kind", "required field missing");
            return None;
        }
    };
    match kind {
        "iid" => {
            c.unknown_keys(t, &["kind", "weights"], "process");
            let w = match t.get("weights") {
                Some(x) => c.float_list(x, "process.weights")?,
                None => {
                    c.push("process.weights", "required field missing");
                    return None;
                }
            };
            Some(ProcessDef::Iid { weights: w })
        }
        "markov" => {
            c.unknown_keys(t, &["kind", "matrix"], "process");
            let Some(Value::Array(rows)) = t.get("matrix") else {
                c.push("process.matrix", "required array of rows");
                return None;
            };
            let parsed: Vec<Option<Vec<f64>>> = rows
                .iter()
                .enumerate()
                .map(|(i, r)| c.float_list(r, &format!("process.matrix[{i}]")))
                .collect();
            Some(ProcessDef::Markov {
                matrix: parsed.into_iter().collect::<Option<_>>()?,
            })
        }
        "cycle" => {
            c.unknown_keys(t, &["kind", "sequence"], "process");
            let seq = match t.get("sequence") {
                Some(x) => c.uint_list(x, "process.sequence")?,
                None => {
                    c.push("process.sequence", "required field missing");
                    return None;
                }
            };
            Some(ProcessDef::Cycle {
                sequence: seq.into_iter().map(|s| s as usize).collect(),
            })
        }
        other => {
            c.push("process.kind", format!("unknown kind {other:?}; expected iid, markov or cycle"));
            None
        }
    }
}

fn parse_param(c: &mut Collector, def: &ParamDef, v: &Value) -> Option<Param> {
    let path = format!("params.{}", def.name);
    match def.kind {
        Kind::Float => c.float(v, &path).map(Param::Float),
        Kind::Positive => {
            let x = c.float(v, &path)?;
            if x <= 0.0 {
                c.push(&path, format!("must be > 0, got {x}"));
                return None;
            }
            Some(Param::Float(x))
        }
        Kind::Int { min } => {
            let x = c.uint(v, &path)?;
            if x < min {
                c.push(&path, format!("must be >= {min}, got {x}"));
                return None;
            }
            Some(Param::Int(x))
        }
        Kind::Bool => match v {
            Value::Boolean(b) => Some(Param::Bool(*b)),
            _ => {
                c.push(&path, format!("expected a boolean, got {}", v.type_str()));
                None
            }
        },
        Kind::Floats => {
            let xs = c.float_list(v, &path)?;
            if xs.is_empty() {
                c.push(&path, "must not be empty");
                return None;
            }
            Some(Param::Floats(xs))
        }
        Kind::Ints { min } => {
            let xs = c.uint_list(v, &path)?;
            if xs.is_empty() {
                c.push(&path, "must not be empty");
                return None;
            }
            if let Some(bad) = xs.iter().find(|&&x| x < min) {
                c.push(&path, format!("entries must be >= {min}, got {bad}"));
                return None;
            }
            Some(Param::Ints(xs))
        }
        Kind::Choice(options) => {
            let s = c.text(v, &path)?;
            if options.contains(&s) {
                Some(Param::Text(s.to_string()))
            } else {
                c.push(&path, format!("must be one of {}", options.join(", ")));
                None
            }
        }
    }
}

fn model_error_path(e: &ModelError, state: Option<usize>) -> String {
    let base = state.map(|i| format!("states[{i}]")).unwrap_or_else(|| "process".into());
    match e {
        ModelError::InvalidParameter { field, .. } => join(&base, field),
        ModelError::InvalidAtom { atom, .. } => format!("{base}.atoms[{atom}]"),
        ModelError::ProbabilitySum { .. } | ModelError::ZeroMeanOffspring => join(&base, "atoms"),
        _ => base,
    }
}

fn build_law(def: &StateDef) -> Result<OffspringLaw, ModelError> {
    match def {
        StateDef::PoissonGaussian { lambda, mu, s } => OffspringLaw::poisson_gaussian(*lambda, *mu, *s),
        StateDef::FiniteTable { atoms } => OffspringLaw::finite_table(
            atoms
                .iter()
                .map(|(p, d)| TableAtom::new(*p, d.clone()))
                .collect(),
        ),
    }
}

fn build_process(def: &ProcessDef) -> Process {
    match def {
        ProcessDef::Iid { weights } => Process::Iid { weights: weights.clone() },
        ProcessDef::Markov { matrix } => Process::MarkovChain { matrix: matrix.clone() },
        ProcessDef::Cycle { sequence } => Process::PeriodicCycle {
            sequence: sequence.clone(),
        },
    }
}

/// Parses and validates a config document, collecting every violation.
pub fn parse_config(text: &str, overrides: &Overrides) -> Result<RunConfig, ConfigErrors> {
    let doc: Table = toml::from_str(text).map_err(|e| {
        ConfigErrors(vec![ConfigError::new("<document>", e.message().to_string())])
    })?;
    let mut c = Collector { errors: Vec::new() };
    c.unknown_keys(&doc, &["experiment", "seed", "out", "process", "states", "params"], "");

    let from_doc = match doc.get("experiment") {
        Some(v) => c.text(v, "experiment").and_then(|s| {
            let id = ExperimentId::parse(s);
            if id.is_none() {
                c.push("experiment", format!("unknown experiment {s:?}"));
            }
            id
        }),
        None => None,
    };
    let experiment = match (overrides.experiment, from_doc) {
        (Some(a), Some(b)) if a != b => {
            c.push("experiment", format!("config names {b} but the command is {a}"));
            None
        }
        (Some(a), _) => Some(a),
        (None, Some(b)) => Some(b),
        (None, None) => {
            if !doc.contains_key("experiment") {
                c.push("experiment", "required field missing");
            }
            None
        }
    };

    let seed_doc = doc.get("seed").and_then(|v| parse_seed(&mut c, v));
    let seed = overrides.seed.or(seed_doc);
    if seed.is_none() && !doc.contains_key("seed") {
        c.push("seed", "required: give a seed in the config or with --seed");
    }
    let out = match (&overrides.out, doc.get("out")) {
        (Some(o), _) => Some(o.clone()),
        (None, Some(v)) => c.text(v, "out").map(str::to_string),
        (None, None) => Some(DEFAULT_OUT.to_string()),
    };

    let states: Option<Vec<StateDef>> = match doc.get("states") {
        Some(Value::Array(items)) if !items.is_empty() => {
            let parsed: Vec<Option<StateDef>> =
                items.iter().enumerate().map(|(i, v)| parse_state(&mut c, v, i)).collect();
            parsed.into_iter().collect()
        }
        Some(Value::Array(_)) => {
            c.push("states", "at least one state is required");
            None
        }
        Some(_) => {
            c.push("states", "expected an array of tables");
            None
        }
        None => {
            c.push("states", "required field missing");
            None
        }
    };
    let process = match doc.get("process") {
        Some(v) => parse_process(&mut c, v),
        None => states.as_ref().map(|s| ProcessDef::Iid {
            weights: vec![1.0 / s.len() as f64; s.len()],
        }),
    };

    let mut params = BTreeMap::new();
    if let Some(exp) = experiment {
        let defs = schema(exp);
        let given = match doc.get("params") {
            Some(Value::Table(t)) => t.clone(),
            Some(_) => {
                c.push("params", "expected a table");
                Table::new()
            }
            None => Table::new(),
        };
        let names: Vec<&str> = defs.iter().map(|s| s.name).collect();
        c.unknown_keys(&given, &names, "params");
        for s in &defs {
            match given.get(s.name) {
                Some(v) => {
                    if let Some(p) = parse_param(&mut c, s, v) {
                        params.insert(s.name, p);
                    }
                }
                None => match &s.default {
                    Some(d) => {
                        params.insert(s.name, d.clone());
                    }
                    None if s.optional => {}
                    None => c.push(format!("params.{}", s.name), "required field missing"),
                },
            }
        }
    }

    let mut model = None;
    if let (Some(states), Some(process)) = (&states, &process) {
        let mut laws = Vec::with_capacity(states.len());
        for (i, s) in states.iter().enumerate() {
            match build_law(s) {
                Ok(l) => laws.push(l),
                Err(e) => c.push(model_error_path(&e, Some(i)), e.to_string()),
            }
        }
        if laws.len() == states.len() {
            match EnvironmentModel::new(laws, build_process(process)) {
                Ok(m) => model = Some(m),
                Err(e) => c.push(model_error_path(&e, None), e.to_string()),
            }
        }
    }

    if !c.errors.is_empty() {
        return Err(ConfigErrors(c.errors));
    }
    Ok(RunConfig {
        experiment: experiment.expect("checked"),
        seed: seed.expect("checked"),
        out: out.expect("checked"),
        states: states.expect("checked"),
        process: process.expect("checked"),
        params,
        model: model.expect("checked"),
    })
}

fn fmt_float(x: f64) -> String {
    format!("{x:?}")
}

fn fmt_floats(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|&x| fmt_float(x)).collect();
    format!("[{}]", parts.join(", "))
}

fn fmt_param(p: &Param) -> String {
    match p {
        Param::Float(x) => fmt_float(*x),
        Param::Int(x) => x.to_string(),
        Param::Bool(b) => b.to_string(),
        Param::Floats(xs) => fmt_floats(xs),
        Param::Ints(xs) => {
            let parts: Vec<String> = xs.iter().map(|x| x.to_string()).collect();
            format!("[{}]", parts.join(", "))
        }
        Param::Text(s) => Value::String(s.clone()).to_string(),
    }
}

impl RunConfig {
    fn render(&self, with_out: bool) -> String {
        let mut s = String::new();
        s.push_str(&format!("experiment = {}\n", Value::String(self.experiment.as_str().into())));
        if self.seed <= i64::MAX as u64 {
            s.push_str(&format!("seed = {}\n", self.seed));
        } else {
            s.push_str(&format!("seed = \"{}\"\n", self.seed));
        }
        if with_out {
            s.push_str(&format!("out = {}\n", Value::String(self.out.clone())));
        }
        s.push_str("\n[process]\n");
        match &self.process {
            ProcessDef::Iid { weights } => {
                s.push_str("kind = \"iid\"\n");
                s.push_str(&format!("weights = {}\n", fmt_floats(weights)));
            }
            ProcessDef::Markov { matrix } => {
                s.push_str("kind = \"markov\"\n");
                let rows: Vec<String> = matrix.iter().map(|r| fmt_floats(r)).collect();
                s.push_str(&format!("matrix = [{}]\n", rows.join(", ")));
            }
            ProcessDef::Cycle { sequence } => {
                s.push_str("kind = \"cycle\"\n");
                let parts: Vec<String> = sequence.iter().map(|x| x.to_string()).collect();
                s.push_str(&format!("sequence = [{}]\n", parts.join(", ")));
            }
        }
        for state in &self.states {
            s.push_str("\n[[states]]\n");
            match state {
                StateDef::PoissonGaussian { lambda, mu, s: sd } => {
                    s.push_str("kind = \"poisson_gaussian\"\n");
                    s.push_str(&format!("lambda = {}\n", fmt_float(*lambda)));
                    s.push_str(&format!("mu = {}\n", fmt_float(*mu)));
                    s.push_str(&format!("s = {}\n", fmt_float(*sd)));
                }
                StateDef::FiniteTable { atoms } => {
                    s.push_str("kind = \"finite_table\"\n");
                    let parts: Vec<String> = atoms
                        .iter()
                        .map(|(p, d)| format!("{{ prob = {}, displacements = {} }}", fmt_float(*p), fmt_floats(d)))
                        .collect();
                    s.push_str(&format!("atoms = [{}]\n", parts.join(", ")));
                }
            }
        }
        s.push_str("\n[params]\n");
        for (k, v) in &self.params {
            s.push_str(&format!("{k} = {}\n", fmt_param(v)));
        }
        s
    }

    /// The resolved config as text, defaults included.
    pub fn describe(&self) -> String {
        self.render(true)
    }

    /// The text that is hashed: the resolved config without the output directory.
    pub fn canonical(&self) -> String {
        self.render(false)
    }

    /// First 16 hex digits of the SHA-256 of [`RunConfig::canonical`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn float(&self, name: &str) -> f64 {
        match self.params.get(name) {
            Some(Param::Float(x)) => *x,
            other => panic!("parameter {name} is not a float: {other:?}"),
        }
    }

    pub fn optional_float(&self, name: &str) -> Option<f64> {
        self.params.get(name).map(|_| self.float(name))
    }

    pub fn uint(&self, name: &str) -> usize {
        match self.params.get(name) {
            Some(Param::Int(x)) => *x as usize,
            other => panic!("parameter {name} is not an integer: {other:?}"),
        }
    }

    pub fn flag(&self, name: &str) -> bool {
        match self.params.get(name) {
            Some(Param::Bool(b)) => *b,
            other => panic!("parameter {name} is not a boolean: {other:?}"),
        }
    }

    pub fn floats(&self, name: &str) -> Vec<f64> {
        match self.params.get(name) {
            Some(Param::Floats(x)) => x.clone(),
            other => panic!("parameter {name} is not a float list: {other:?}"),
        }
    }

    pub fn uints(&self, name: &str) -> Vec<usize> {
        match self.params.get(name) {
            Some(Param::Ints(x)) => x.iter().map(|&v| v as usize).collect(),
            other => panic!("parameter {name} is not an integer list: {other:?}"),
        }
    }

    pub fn text(&self, name: &str) -> &str {
        match self.params.get(name) {
            Some(Param::Text(x)) => x,
            other => panic!("parameter {name} is not a string: {other:?}"),
        }
    }
}
