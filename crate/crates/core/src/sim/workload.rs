//! Workload description, its text format, and a seeded synthetic generator.
//!
//! The file is line oriented. A header of `key = value` lines sets the run
//! configuration; each `change` line then carries named fields:
//!
//! ```text
//! seed = 42
//! strategy = enhanced
//! predictor = oracle bias=0 spread=0.1 seed=42
//! delta = 0.3
//! change id=1 at=0 targets=core added= removed= mu=60 var=36 passes=true breakers= prior=0.9
//! ```
//!
//! Blank lines and lines starting with `#` are ignored.

use crate::conflict::build_conflict_graph;
use crate::error::{Error, Result};
use crate::prediction::{DurationEstimate, PredictorSpec};
use crate::types::{Change, ChangeId, EngineConfig, Strategy};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

/// One change plus its simulator-only ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeSpec {
    pub change: Change,
    pub truth: DurationEstimate,
    pub passes_alone: bool,
    /// Earlier changes whose presence on the mainline or in the base makes
    /// this change's build fail.
    pub breakers: BTreeSet<ChangeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub seed: u64,
    pub strategy: Strategy,
    pub predictor: PredictorSpec,
    pub config: EngineConfig,
    /// In arrival order.
    pub changes: Vec<ChangeSpec>,
}

impl WorkloadSpec {
    pub fn new(seed: u64, changes: Vec<ChangeSpec>) -> Self {
        WorkloadSpec {
            seed,
            strategy: Strategy::Enhanced,
            predictor: PredictorSpec::OracleWithNoise { relative_bias: 0.0, relative_spread: 0.1, seed },
            config: EngineConfig::default(),
            changes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.predictor.validate()?;
        let mut seen: BTreeMap<ChangeId, f64> = BTreeMap::new();
        let mut last = f64::NEG_INFINITY;
        let mut last_id = None;
        for spec in &self.changes {
            let c = &spec.change;
            c.validate()?;
            if c.arrival_time < last {
                return Err(Error::InvalidWorkload(format!("change {} arrives out of order", c.id)));
            }
            last = c.arrival_time;
            if seen.insert(c.id, c.arrival_time).is_some() {
                return Err(Error::DuplicateChange(c.id));
            }
            // Ids double as the enqueue order.
            if last_id.is_some_and(|prev| c.id < prev) {
                return Err(Error::InvalidWorkload(format!("change {} is listed after a higher id", c.id)));
            }
            last_id = Some(c.id);
            for b in &spec.breakers {
                if !seen.contains_key(b) || *b == c.id {
                    return Err(Error::InvalidWorkload(format!(
                        "breaker {b} of change {} does not arrive earlier",
                        c.id
                    )));
                }
            }
        }
        if let PredictorSpec::Table(table) = &self.predictor {
            if let Some(c) = seen.keys().find(|c| !table.contains_key(c)) {
                return Err(Error::MissingTableEntry(*c));
            }
        }
        Ok(())
    }

    pub fn change_ids(&self) -> Vec<ChangeId> {
        self.changes.iter().map(|s| s.change.id).collect()
    }

    /// Fraction of changes that conflict with at least one earlier change.
    pub fn conflict_rate(&self) -> Result<f64> {
        if self.changes.is_empty() {
            return Ok(0.0);
        }
        let changes: Vec<Change> = self.changes.iter().map(|s| s.change.clone()).collect();
        let graph = build_conflict_graph(&changes)?;
        let mut earlier = BTreeSet::new();
        let mut hits = 0usize;
        for c in &changes {
            if graph.neighbors(c.id).any(|n| earlier.contains(&n)) {
                hits += 1;
            }
            earlier.insert(c.id);
        }
        Ok(hits as f64 / changes.len() as f64)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let cfg = &self.config;
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "strategy = {}", self.strategy);
        let _ = writeln!(out, "predictor = {}", predictor_text(&self.predictor));
        let _ = writeln!(out, "delta = {}", cfg.speculation_threshold);
        let _ = writeln!(out, "tau = {}", cfg.blrd_eligibility_threshold);
        let _ = writeln!(out, "epsilon = {}", cfg.bypass_product_floor);
        let _ = writeln!(out, "capacity = {}", cfg.executor_capacity);
        let _ = writeln!(out, "depth_cap = {}", cfg.depth_cap);
        let table = match &self.predictor {
            PredictorSpec::Table(t) => Some(t),
            _ => None,
        };
        for spec in &self.changes {
            let c = &spec.change;
            let _ = write!(
                out,
                "change id={} at={} targets={} added={} removed={} mu={} var={} passes={} breakers={} prior={}",
                c.id,
                c.arrival_time,
                join(&c.targets_changed),
                join(&c.targets_added),
                join(&c.targets_removed),
                spec.truth.mean(),
                spec.truth.variance(),
                spec.passes_alone,
                join(&spec.breakers),
                c.success_prior,
            );
            let _ = write!(
                out,
                " added_lines={} removed_lines={} changesets={} commits={} developer={}",
                c.added_lines, c.removed_lines, c.changeset_count, c.commits_count, c.developer
            );
            if let Some(est) = table.and_then(|t| t.get(&c.id)) {
                let _ = write!(out, " est_mu={} est_var={}", est.mean(), est.variance());
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<WorkloadSpec> {
        let mut seed = 0u64;
        let mut strategy = Strategy::Enhanced;
        let mut predictor: Option<PredictorSpec> = None;
        let mut table_mode = false;
        let mut config = EngineConfig::default();
        let mut changes = Vec::new();
        let mut table = BTreeMap::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let err = |message: String| Error::Parse { line: line_no, message };
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("change ") {
                let fields = parse_fields(rest).map_err(err)?;
                let (spec, est) = change_from_fields(&fields).map_err(err)?;
                if let Some(est) = est {
                    table.insert(spec.change.id, est);
                }
                changes.push(spec);
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "seed" => seed = num(value).map_err(err)?,
                "strategy" => strategy = value.parse().map_err(|e: Error| err(e.to_string()))?,
                "predictor" => {
                    let p = parse_predictor(value).map_err(err)?;
                    table_mode = p.is_none();
                    predictor = p;
                }
                "delta" => config.speculation_threshold = num(value).map_err(err)?,
                "tau" => config.blrd_eligibility_threshold = num(value).map_err(err)?,
                "epsilon" => config.bypass_product_floor = num(value).map_err(err)?,
                "capacity" => config.executor_capacity = num(value).map_err(err)?,
                "depth_cap" => config.depth_cap = num(value).map_err(err)?,
                other => return Err(err(format!("unknown header key `{other}`"))),
            }
        }
        let predictor = if table_mode {
            PredictorSpec::Table(table)
        } else {
            predictor.unwrap_or(PredictorSpec::OracleWithNoise { relative_bias: 0.0, relative_spread: 0.1, seed })
        };
        let w = WorkloadSpec { seed, strategy, predictor, config, changes };
        w.validate()?;
        Ok(w)
    }
}

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|t| t.to_string()).collect::<Vec<_>>().join(",")
}

fn predictor_text(p: &PredictorSpec) -> String {
    match p {
        PredictorSpec::OracleWithNoise { relative_bias, relative_spread, seed } => {
            format!("oracle bias={relative_bias} spread={relative_spread} seed={seed}")
        }
        PredictorSpec::Table(_) => "table".to_string(),
        PredictorSpec::Constant(e) => format!("constant mu={} var={}", e.mean(), e.variance()),
    }
}

/// `None` means a table predictor whose entries come from the change lines.
fn parse_predictor(value: &str) -> std::result::Result<Option<PredictorSpec>, String> {
    let (kind, rest) = value.split_once(' ').unwrap_or((value, ""));
    let fields = parse_fields(rest)?;
    let get = |k: &str| fields.get(k).ok_or_else(|| format!("predictor `{kind}` needs `{k}`"));
    match kind {
        "oracle" => Ok(Some(PredictorSpec::OracleWithNoise {
            relative_bias: num(get("bias")?)?,
            relative_spread: num(get("spread")?)?,
            seed: num(get("seed")?)?,
        })),
        "constant" => {
            let est = DurationEstimate::new(num(get("mu")?)?, num(get("var")?)?).map_err(|e| e.to_string())?;
            Ok(Some(PredictorSpec::Constant(est)))
        }
        "table" => Ok(None),
        other => Err(format!("unknown predictor `{other}`")),
    }
}

fn parse_fields(s: &str) -> std::result::Result<BTreeMap<&str, &str>, String> {
    let mut out = BTreeMap::new();
    for tok in s.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(|| format!("field `{tok}` is not `name=value`"))?;
        if out.insert(k, v).is_some() {
            return Err(format!("field `{k}` given twice"));
        }
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|_| format!("`{s}` is not a valid number"))
}

fn list(s: &str) -> BTreeSet<String> {
    s.split(',').filter(|t| !t.is_empty()).map(str::to_string).collect()
}

fn change_from_fields(
    f: &BTreeMap<&str, &str>,
) -> std::result::Result<(ChangeSpec, Option<DurationEstimate>), String> {
    let get = |k: &str| f.get(k).copied().ok_or_else(|| format!("change is missing `{k}`"));
    let opt = |k: &str| f.get(k).copied().unwrap_or("");
    let id: u32 = num(get("id")?)?;
    let mut change = Change::new(id, num(get("at")?)?, list(get("targets")?));
    change.targets_added = list(opt("added"));
    change.targets_removed = list(opt("removed"));
    change.success_prior = num(get("prior")?)?;
    if let Some(v) = f.get("added_lines") {
        change.added_lines = num(v)?;
    }
    if let Some(v) = f.get("removed_lines") {
        change.removed_lines = num(v)?;
    }
    if let Some(v) = f.get("changesets") {
        change.changeset_count = num(v)?;
    }
    if let Some(v) = f.get("commits") {
        change.commits_count = num(v)?;
    }
    change.developer = opt("developer").to_string();
    let truth = DurationEstimate::new(num(get("mu")?)?, num(get("var")?)?).map_err(|e| e.to_string())?;
    let passes_alone = match get("passes")? {
        "true" => true,
        "false" => false,
        other => return Err(format!("`passes` must be true or false, got `{other}`")),
    };
    let breakers = opt("breakers")
        .split(',')
        .filter(|t| !t.is_empty())
        .map(|t| num(t).map(ChangeId))
        .collect::<std::result::Result<_, _>>()?;
    let est = match (f.get("est_mu"), f.get("est_var")) {
        (Some(m), Some(v)) => Some(DurationEstimate::new(num(m)?, num(v)?).map_err(|e| e.to_string())?),
        (None, None) => None,
        _ => return Err("`est_mu` and `est_var` go together".to_string()),
    };
    Ok((ChangeSpec { change, truth, passes_alone, breakers }, est))
}

/// Parameters of the synthetic workload generator.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadParams {
    pub n_changes: usize,
    /// Mean arrivals per minute.
    pub arrival_rate: f64,
    /// Target fraction of changes that conflict with an earlier change.
    pub conflict_density: f64,
    /// Fraction of long (60 min) changes; the rest take 5 min.
    pub long_fraction: f64,
    pub fail_rate: f64,
    /// Probability that a conflicting change is broken by one of its
    /// conflicting predecessors.
    pub breaker_rate: f64,
    pub seed: u64,
}

impl Default for WorkloadParams {
    /// The standard workload: 500 changes, 30% conflict density, 10% failures.
    fn default() -> Self {
        WorkloadParams {
            n_changes: 500,
            arrival_rate: 0.7,
            conflict_density: 0.3,
            long_fraction: 0.4,
            fail_rate: 0.1,
            breaker_rate: 0.02,
            seed: 42,
        }
    }
}

/// Executor pool size used with the standard workload.
pub const STANDARD_CAPACITY: usize = 48;

/// The standard workload for `seed`, configured with [`STANDARD_CAPACITY`].
pub fn standard_workload(seed: u64) -> Result<WorkloadSpec> {
    let mut w = generate_workload(&WorkloadParams { seed, ..Default::default() })?;
    w.config.executor_capacity = STANDARD_CAPACITY;
    Ok(w)
}

pub const SHORT_MINUTES: f64 = 5.0;
pub const LONG_MINUTES: f64 = 60.0;
/// Conflicting changes copy a target from one of this many predecessors.
const CONFLICT_WINDOW: usize = 8;

impl WorkloadParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        if self.n_changes == 0 {
            return Err(Error::InvalidConfig("n_changes must be at least 1".into()));
        }
        if !(self.arrival_rate.is_finite() && self.arrival_rate > 0.0) {
            return Err(Error::InvalidConfig(format!("arrival_rate must be positive, got {}", self.arrival_rate)));
        }
        unit("conflict_density", self.conflict_density)?;
        unit("long_fraction", self.long_fraction)?;
        unit("fail_rate", self.fail_rate)?;
        unit("breaker_rate", self.breaker_rate)
    }
}

pub fn generate_workload(params: &WorkloadParams) -> Result<WorkloadSpec> {
    params.validate()?;
    let n = params.n_changes;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let gap = Exp::new(params.arrival_rate).map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let n_conflicting = ((params.conflict_density * n as f64).round() as usize).min(n - 1);
    let mut order: Vec<usize> = (1..n).collect();
    order.shuffle(&mut rng);
    let conflicting: BTreeSet<usize> = order.into_iter().take(n_conflicting).collect();

    let mut specs: Vec<ChangeSpec> = Vec::with_capacity(n);
    let mut t = 0.0;
    for i in 0..n {
        if i > 0 {
            t += gap.sample(&mut rng);
        }
        let id = i as u32 + 1;
        let long = rng.gen_bool(params.long_fraction);
        let mu = if long { LONG_MINUTES } else { SHORT_MINUTES };
        let sigma = mu * rng.gen_range(0.10..=0.15);

        let mut targets = vec![format!("t{id}")];
        if long {
            targets.extend((1..=3).map(|k| format!("t{id}_{k}")));
        }
        let mut earlier_conflicts = BTreeSet::new();
        if conflicting.contains(&i) {
            let j = rng.gen_range(i.saturating_sub(CONFLICT_WINDOW)..i);
            let donor = &specs[j].change;
            // Prefer a target the donor already shares, so conflicts cluster
            // on hot targets the way they do in a monorepo.
            let own = format!("t{}", donor.id);
            let hot: Vec<&String> = donor.targets_changed.iter().filter(|t| **t != own && !t.contains('_')).collect();
            let pick = if hot.is_empty() { own } else { hot[rng.gen_range(0..hot.len())].clone() };
            targets.push(pick);
            earlier_conflicts.insert(donor.id);
        }
        let mut change = Change::new(id, t, targets);
        change.success_prior = 1.0 - params.fail_rate;
        change.added_lines = if long { rng.gen_range(200..2000) } else { rng.gen_range(1..200) };
        change.removed_lines = change.added_lines / 3;
        change.developer = format!("dev{}", rng.gen_range(0..20));

        // Targets are shared only by copying: a change conflicts with its
        // donor and with every other change holding the copied target.
        for prev in &specs {
            if crate::conflict::conflicts(&change, &prev.change) {
                earlier_conflicts.insert(prev.change.id);
            }
        }
        let mut breakers = BTreeSet::new();
        if !earlier_conflicts.is_empty() && rng.gen_bool(params.breaker_rate) {
            let pool: Vec<ChangeId> = earlier_conflicts.iter().copied().collect();
            breakers.insert(pool[rng.gen_range(0..pool.len())]);
        }
        let truth = DurationEstimate::new(mu, sigma * sigma)?;
        specs.push(ChangeSpec { change, truth, passes_alone: !rng.gen_bool(params.fail_rate), breakers });
    }
    Ok(WorkloadSpec::new(params.seed, specs))
}
