//! Virtual-time event loop driving the scheduler over a workload.

use super::metrics::MetricsReport;
use super::trace::{audit_schedule, ScheduleAudit, TraceEvent, TraceKind, TraceLog};
use super::workload::{ChangeSpec, WorkloadSpec};
use crate::conflict::{build_conflict_graph, ConflictGraph};
use crate::error::{Error, Result};
use crate::prediction::{predict_duration, Fnv1a, PredictionFeatures, PriorSuccess, MIN_MINUTES};
use crate::prioritization::{profile_all, rank_builds, BypassPartition};
use crate::selection::{commit, decide_change, select_builds, Decision};
use crate::speculation::{enumerate_forest, BaseSet, BuildNode, MainlineState, NodeKey, NodeState, SpeculationForest};
use crate::types::{BuildOutcome, Change, ChangeId, EngineConfig, Strategy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

/// Simulator-only knowledge of how builds really behave.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    seed: u64,
    specs: BTreeMap<ChangeId, ChangeSpec>,
    earlier_conflicts: BTreeMap<ChangeId, BTreeSet<ChangeId>>,
}

impl GroundTruth {
    pub fn new(w: &WorkloadSpec) -> Result<Self> {
        let changes: Vec<Change> = w.changes.iter().map(|s| s.change.clone()).collect();
        let graph = build_conflict_graph(&changes)?;
        let mut earlier_conflicts = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for c in &changes {
            let mine: BTreeSet<ChangeId> = graph.neighbors(c.id).filter(|n| seen.contains(n)).collect();
            earlier_conflicts.insert(c.id, mine);
            seen.insert(c.id);
        }
        let specs = w.changes.iter().map(|s| (s.change.id, s.clone())).collect();
        Ok(GroundTruth { seed: w.seed, specs, earlier_conflicts })
    }

    pub fn spec(&self, c: ChangeId) -> Result<&ChangeSpec> {
        self.specs.get(&c).ok_or(Error::UnknownChange(c))
    }

    /// Outcome of building `c` on top of `landed` plus `base`.
    pub fn outcome(&self, c: ChangeId, landed: &BTreeSet<ChangeId>, base: &BaseSet) -> Result<BuildOutcome> {
        let spec = self.spec(c)?;
        let broken = spec.breakers.iter().any(|b| landed.contains(b) || base.contains(b));
        Ok(if spec.passes_alone && !broken { BuildOutcome::Pass } else { BuildOutcome::Fail })
    }

    /// Sampled duration of one build; identical for identical effective
    /// bases (speculated base plus landed conflicting changes).
    pub fn duration(&self, c: ChangeId, landed: &BTreeSet<ChangeId>, base: &BaseSet) -> Result<f64> {
        let spec = self.spec(c)?;
        let mut effective = base.clone();
        if let Some(conf) = self.earlier_conflicts.get(&c) {
            effective.extend(conf.intersection(landed).copied());
        }
        let mut h = Fnv1a::new();
        h.write_u64(self.seed);
        h.write_u64(u64::from(c.0));
        for b in &effective {
            h.write_u64(u64::from(b.0));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h.finish());
        let normal = Normal::new(spec.truth.mean(), spec.truth.std_dev())
            .map_err(|e| Error::InvalidWorkload(format!("change {c}: {e}")))?;
        Ok(normal.sample(&mut rng).max(MIN_MINUTES))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimEventKind {
    BuildFinished { change: ChangeId, run: u64 },
    Arrival(ChangeId),
    Tick,
}

impl SimEventKind {
    fn rank(self) -> (u8, ChangeId, u64) {
        match self {
            SimEventKind::BuildFinished { change, run } => (0, change, run),
            SimEventKind::Arrival(c) => (1, c, 0),
            SimEventKind::Tick => (2, ChangeId(0), 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimEvent {
    pub time: f64,
    pub kind: SimEventKind,
}

impl Eq for SimEvent {}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time.total_cmp(&other.time).then_with(|| self.kind.rank().cmp(&other.kind.rank()))
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Ground-truth safety checks made at every decision.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SafetyAudit {
    /// Landed changes that fail on the mainline they landed on.
    pub green_violations: Vec<String>,
    /// Bypass decisions whose outcome depends on a bypassed predecessor.
    pub blrd_violations: Vec<String>,
}

impl SafetyAudit {
    pub fn is_clean(&self) -> bool {
        self.green_violations.is_empty() && self.blrd_violations.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub metrics: MetricsReport,
    pub trace: TraceLog,
    pub safety: SafetyAudit,
    pub schedule: ScheduleAudit,
    /// Final mainline, in landing order.
    pub mainline: Vec<ChangeId>,
    /// Decision time per change.
    pub decided_at: BTreeMap<ChangeId, f64>,
}

/// Runs the workload with its own strategy and configuration.
pub fn run(w: &WorkloadSpec) -> Result<SimResult> {
    run_with(w, w.strategy, &w.config)
}

/// Runs the workload under the prior model: no bypass, no threshold.
pub fn run_baseline(w: &WorkloadSpec) -> Result<SimResult> {
    run_with(w, Strategy::Baseline, &w.config)
}

pub fn run_with(w: &WorkloadSpec, strategy: Strategy, cfg: &EngineConfig) -> Result<SimResult> {
    let mut w = w.clone();
    w.config = *cfg;
    w.strategy = strategy;
    w.validate()?;
    let mut sim = Sim::new(&w)?;
    sim.run()?;
    Ok(sim.finish())
}

#[derive(Debug, Clone, Copy)]
struct RunInfo {
    started_at: f64,
    duration: f64,
    outcome: BuildOutcome,
}

#[derive(Debug, Clone, Copy, Default)]
struct ArrivalInfo {
    waited: bool,
    short_behind_long: bool,
}

struct Sim<'w> {
    w: &'w WorkloadSpec,
    truth: GroundTruth,
    threshold: f64,
    changes: BTreeMap<ChangeId, Change>,
    queue: Vec<ChangeId>,
    graph: ConflictGraph,
    forest: SpeculationForest,
    dirty: bool,
    mainline: MainlineState,
    landed: BTreeSet<ChangeId>,
    events: BinaryHeap<Reverse<SimEvent>>,
    clock: f64,
    running: BTreeMap<(ChangeId, u64), RunInfo>,
    next_run: u64,
    arrivals: BTreeMap<ChangeId, ArrivalInfo>,
    decided_at: BTreeMap<ChangeId, f64>,
    trace: TraceLog,
    metrics: MetricsReport,
    safety: SafetyAudit,
}

impl<'w> Sim<'w> {
    fn new(w: &'w WorkloadSpec) -> Result<Self> {
        let mut events = BinaryHeap::new();
        for s in &w.changes {
            events.push(Reverse(SimEvent { time: s.change.arrival_time, kind: SimEventKind::Arrival(s.change.id) }));
        }
        Ok(Sim {
            w,
            truth: GroundTruth::new(w)?,
            threshold: w.strategy.effective_threshold(&w.config),
            changes: w.changes.iter().map(|s| (s.change.id, s.change.clone())).collect(),
            queue: Vec::new(),
            graph: ConflictGraph::new(),
            forest: enumerate_forest(&[], &ConflictGraph::new(), &w.config),
            dirty: false,
            mainline: MainlineState::new(),
            landed: BTreeSet::new(),
            events,
            clock: 0.0,
            running: BTreeMap::new(),
            next_run: 0,
            arrivals: BTreeMap::new(),
            decided_at: BTreeMap::new(),
            trace: TraceLog::default(),
            metrics: MetricsReport { strategy: w.strategy.as_str().to_string(), ..Default::default() },
            safety: SafetyAudit::default(),
        })
    }

    fn run(&mut self) -> Result<()> {
        while let Some(Reverse(first)) = self.events.pop() {
            let now = first.time;
            self.clock = now;
            self.handle(first, now)?;
            while let Some(Reverse(next)) = self.events.peek().copied() {
                if next.time != now {
                    break;
                }
                self.events.pop();
                self.handle(next, now)?;
            }
            self.step(now)?;
        }
        if !self.queue.is_empty() {
            return Err(Error::Stalled { time: self.clock, pending: self.queue.len() });
        }
        Ok(())
    }

    fn handle(&mut self, ev: SimEvent, now: f64) -> Result<()> {
        match ev.kind {
            SimEventKind::Arrival(c) => self.arrive(c, now),
            SimEventKind::BuildFinished { change, run } => {
                self.build_finished(change, run, now);
                Ok(())
            }
            SimEventKind::Tick => Ok(()),
        }
    }

    fn arrive(&mut self, c: ChangeId, now: f64) -> Result<()> {
        let change = self.changes.get(&c).ok_or(Error::UnknownChange(c))?;
        self.graph.insert_change(change, self.queue.iter().map(|id| &self.changes[id]));
        let own_mu = self.truth.spec(c)?.truth.mean();
        let mut info = ArrivalInfo::default();
        for p in self.graph.neighbors(c) {
            info.waited = true;
            if self.truth.spec(p)?.truth.mean() >= 2.0 * own_mu {
                info.short_behind_long = true;
            }
        }
        self.arrivals.insert(c, info);
        self.queue.push(c);
        self.dirty = true;
        self.trace.push(event(now, TraceKind::Arrive, c, None, String::new()));
        Ok(())
    }

    fn build_finished(&mut self, change: ChangeId, run: u64, now: f64) {
        let Some(info) = self.running.remove(&(change, run)) else {
            return; // aborted earlier
        };
        let key = self.forest.find_run(change, run).expect("running builds stay in the forest");
        if let Some(node) = self.forest.node_mut(&key) {
            node.state = NodeState::Completed { outcome: info.outcome, finished_at: now };
        }
        self.metrics.builds_completed += 1;
        self.metrics.executor_minutes += info.duration;
        let detail = format!("outcome={} run={run} duration={:.6}", info.outcome.as_str(), info.duration);
        self.trace.push(event(now, TraceKind::Finish, change, Some(key.base), detail));
    }

    fn step(&mut self, now: f64) -> Result<()> {
        'decide: loop {
            self.refresh(now)?;
            for c in self.queue.clone() {
                let preds = self.forest.predecessors(c)?;
                let part = BypassPartition::without_bypass(c, preds.all());
                let d = decide_change(c, &self.forest, &part, self.w.strategy.allows_bypass())?;
                if d.is_terminal() {
                    self.apply_decision(&d, now)?;
                    continue 'decide;
                }
            }
            break;
        }

        let partitions = if self.w.strategy.allows_bypass() {
            profile_all(&self.forest, &self.changes, &self.w.config, now)?
        } else {
            let mut parts = BTreeMap::new();
            for &c in &self.queue {
                parts.insert(c, BypassPartition::without_bypass(c, self.forest.predecessors(c)?.all()));
            }
            parts
        };
        let ranked = rank_builds(&self.forest, &partitions, &self.changes, &PriorSuccess)?;
        let running: BTreeSet<NodeKey> = self.forest.nodes().filter(|n| n.is_running()).map(BuildNode::key).collect();
        let action = select_builds(&ranked, &running, self.threshold, &self.w.config);

        for key in &action.to_abort {
            let node = self.forest.node(key).expect("abort targets come from the forest").clone();
            self.abort(&node, now);
            if let Some(n) = self.forest.node_mut(key) {
                n.state = NodeState::Aborted { aborted_at: now };
            }
        }
        let wanted: BTreeSet<&NodeKey> = action.to_start.iter().collect();
        let scores: BTreeMap<&NodeKey, (f64, bool)> =
            ranked.iter().filter(|r| wanted.contains(&r.key)).map(|r| (&r.key, (r.p_needed, r.mandatory))).collect();
        for key in &action.to_start {
            let (p, mandatory) = scores[key];
            self.start(key, p, mandatory, now)?;
        }
        Ok(())
    }

    fn refresh(&mut self, now: f64) -> Result<()> {
        if self.dirty {
            self.forest = std::mem::take(&mut self.forest).refresh(&self.queue, &self.graph, &self.w.config);
            self.dirty = false;
            let lost: Vec<(ChangeId, u64)> =
                self.running.keys().copied().filter(|&(c, run)| self.forest.find_run(c, run).is_none()).collect();
            for (c, run) in lost {
                self.abort_run(c, run, None, now);
            }
        }
        for node in self.forest.nodes_mut() {
            if node.estimate.is_some() || !node.is_outstanding() {
                continue;
            }
            let change = &self.changes[&node.change];
            let features = PredictionFeatures::for_node(change, self.graph.degree(node.change), node.base.len());
            let truth = self.truth.spec(node.change)?.truth;
            node.estimate = Some(predict_duration(&self.w.predictor, node.change, &features, Some(truth))?);
        }
        Ok(())
    }

    fn start(&mut self, key: &NodeKey, p: f64, mandatory: bool, now: f64) -> Result<()> {
        let outcome = self.truth.outcome(key.change, &self.landed, &key.base)?;
        let duration = self.truth.duration(key.change, &self.landed, &key.base)?;
        let run = self.next_run;
        self.next_run += 1;
        let node = self.forest.node_mut(key).ok_or(Error::UnknownChange(key.change))?;
        node.state = NodeState::Running { started_at: now, run };
        self.running.insert((key.change, run), RunInfo { started_at: now, duration, outcome });
        self.events.push(Reverse(SimEvent { time: now + duration, kind: SimEventKind::BuildFinished { change: key.change, run } }));
        self.metrics.builds_started += 1;
        let mut e = event(now, TraceKind::Start, key.change, Some(key.base.clone()), format!("p={p:.6} run={run} mandatory={mandatory}"));
        e.p_needed = Some(p);
        e.mandatory = mandatory;
        self.trace.push(e);
        Ok(())
    }

    fn abort(&mut self, node: &BuildNode, now: f64) {
        if let NodeState::Running { run, .. } = node.state {
            self.abort_run(node.change, run, Some(node.base.clone()), now);
        }
    }

    fn abort_run(&mut self, change: ChangeId, run: u64, base: Option<BaseSet>, now: f64) {
        if let Some(info) = self.running.remove(&(change, run)) {
            let elapsed = now - info.started_at;
            self.metrics.executor_minutes += elapsed;
            self.metrics.abort_count += 1;
            self.trace.push(event(now, TraceKind::Abort, change, base, format!("run={run} elapsed={elapsed:.6}")));
        }
    }

    fn apply_decision(&mut self, d: &Decision, now: f64) -> Result<()> {
        let c = d.change();
        let bypassed = self.forest.predecessors(c)?.near.clone();
        let dropped = commit(&mut self.mainline, d, &mut self.forest)?;
        self.graph.remove(c);
        self.queue.retain(|&q| q != c);
        self.dirty = true;

        let mut last_finish = f64::NEG_INFINITY;
        for node in &dropped {
            match node.state {
                NodeState::Running { .. } => self.abort(node, now),
                NodeState::Completed { finished_at, .. } if node.change == c => {
                    last_finish = last_finish.max(finished_at);
                }
                _ => {}
            }
        }

        let (landed, via_bypass) = match d {
            Decision::Land { via_bypass, .. } => (true, *via_bypass),
            Decision::Reject { via_bypass, .. } => (false, *via_bypass),
            Decision::Wait { .. } => return Ok(()),
        };
        let expected = if landed { BuildOutcome::Pass } else { BuildOutcome::Fail };
        if landed && self.truth.outcome(c, &self.landed, &BaseSet::new())? != BuildOutcome::Pass {
            self.safety.green_violations.push(format!("{now:.6}: change {c} breaks the mainline"));
        }
        if via_bypass {
            for mask in 0u64..(1u64 << bypassed.len()) {
                let subset: BaseSet =
                    bypassed.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, &id)| id).collect();
                if self.truth.outcome(c, &self.landed, &subset)? != expected {
                    self.safety.blrd_violations.push(format!(
                        "{now:.6}: change {c} decided {} via bypass but differs on base {}",
                        expected.as_str(),
                        crate::speculation::format_base(&subset)
                    ));
                }
            }
            self.metrics.bypass_count += 1;
        }
        if landed {
            self.landed.insert(c);
            self.metrics.landed += 1;
        } else {
            self.metrics.rejected += 1;
        }

        let arrival = self.changes[&c].arrival_time;
        let info = self.arrivals.get(&c).copied().unwrap_or_default();
        let wait = now - arrival;
        self.metrics.changes_decided += 1;
        self.metrics.waiting_times.push(wait);
        if last_finish.is_finite() {
            self.metrics.post_build_waits.push(now - last_finish);
        }
        if info.waited {
            self.metrics.waited_due_to_conflicts += 1;
        }
        if info.short_behind_long {
            self.metrics.short_behind_long_waits.push(wait);
        }
        self.decided_at.insert(c, now);

        let (kind, detail) = match d {
            Decision::Land { .. } => (TraceKind::Land, format!("bypass={via_bypass} head={}", self.mainline.head_label)),
            Decision::Reject { failing_node, .. } => (TraceKind::Reject, format!("bypass={via_bypass} node={failing_node}")),
            Decision::Wait { .. } => unreachable!("waits return early"),
        };
        self.trace.push(event(now, kind, c, None, detail));
        Ok(())
    }

    fn finish(self) -> SimResult {
        let schedule = audit_schedule(&self.trace, self.threshold, self.w.config.executor_capacity);
        SimResult {
            metrics: self.metrics,
            trace: self.trace,
            safety: self.safety,
            schedule,
            mainline: self.mainline.landed,
            decided_at: self.decided_at,
        }
    }
}

fn event(time: f64, kind: TraceKind, change: ChangeId, base: Option<BaseSet>, detail: String) -> TraceEvent {
    TraceEvent { time, kind, change, base, p_needed: None, mandatory: false, detail }
}
