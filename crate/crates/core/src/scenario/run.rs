use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use nalgebra::{DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::world::WorldState;
use super::{DisturbanceAction, Placement, Rates, Scenario, TaskTemplate, Trigger};
use crate::bt::{ActionEnv, BehaviorTree, Blackboard, BtEvent, NodeKind, TickContext, TickStatus};
use crate::kinematics::{JointState, ManipulatorModel};
use crate::sot::{control_step, SharedTaskStack, Snapshot, StepReport, TaskStack};
use crate::tasks::{self, Line, Plane, TaskSpec};

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    RootSuccess,
    RootFailure,
    Timeout,
    Error(String),
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::RootSuccess => "root_success",
            Outcome::RootFailure => "root_failure",
            Outcome::Timeout => "timeout",
            Outcome::Error(_) => "error",
        }
    }

    pub fn is_success(&self) -> bool {
        *self == Outcome::RootSuccess
    }
}

/// State at `t` and the command applied over `[t, t + dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlRow {
    pub step: u64,
    pub t: f64,
    pub revision: u64,
    /// Active task ids in solve order.
    pub active: Vec<String>,
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub ee: [f64; 3],
    pub min_clearance: Option<f64>,
    /// `‖e‖` per scenario task, `None` while inactive.
    pub errors: Vec<Option<f64>>,
    /// `‖w_p‖` per priority in [`Trace::priorities`], `None` when no row has it.
    pub slacks: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickRow {
    pub index: u64,
    pub t: f64,
    pub root: TickStatus,
    /// Per node in [`Trace::node_ids`] order, `None` if not ticked.
    pub statuses: Vec<Option<TickStatus>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub t: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub dof: usize,
    pub task_ids: Vec<String>,
    pub priorities: Vec<u32>,
    pub node_ids: Vec<String>,
    pub planes: Vec<(String, Plane)>,
    pub lines: Vec<(String, Line)>,
    pub control: Vec<ControlRow>,
    pub ticks: Vec<TickRow>,
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub trial: u64,
    pub outcome: String,
    pub error: Option<String>,
    pub concurrent: bool,
    pub sim_time: f64,
    pub ticks: u64,
    pub control_steps: u64,
    pub control_dt: f64,
    pub ticks_ratio: u32,
    pub min_clearance: Option<f64>,
    pub mean_step_us: f64,
    pub max_step_us: f64,
    pub singular_steps: u64,
    /// Failures of the root decorator's child, i.e. retried attempts.
    pub root_child_failures: u64,
    pub removal_violations: u64,
    pub disturbances_fired: u64,
    pub final_revision: u64,
    /// Non-condition nodes that returned Failure at least once.
    pub failed_nodes: Vec<String>,
    /// Last `‖e‖` seen for each task that was ever active.
    pub final_errors: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub outcome: Outcome,
    pub trace: Trace,
    pub summary: RunSummary,
    /// Goal and object positions when the run ended.
    pub world: WorldState,
}

/// Wall-clock timer for step statistics. Reads zero on wasm32, which has
/// no monotonic clock in std.
struct Stopwatch(#[cfg(not(target_arch = "wasm32"))] std::time::Instant);

impl Stopwatch {
    fn start() -> Self {
        Stopwatch(
            #[cfg(not(target_arch = "wasm32"))]
            std::time::Instant::now(),
        )
    }

    fn elapsed(&self) -> Duration {
        #[cfg(not(target_arch = "wasm32"))]
        return self.0.elapsed();
        #[cfg(target_arch = "wasm32")]
        Duration::ZERO
    }
}

/// Seed of one trial's generator.
pub(crate) fn trial_seed(seed: u64, trial: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(trial)
}

struct RobotEnv<'a> {
    tasks: &'a [TaskTemplate],
    world: &'a WorldState,
    model: &'a ManipulatorModel,
    q: &'a DVector<f64>,
}

impl ActionEnv for RobotEnv<'_> {
    fn resolve_task(&self, task_id: &str) -> Result<TaskSpec, String> {
        self.tasks
            .iter()
            .find(|t| t.id == task_id)
            .ok_or_else(|| format!("unknown task `{task_id}`"))?
            .resolve(self.world)
    }

    fn task_error(&self, spec: &TaskSpec) -> Result<f64, String> {
        tasks::evaluate(spec, self.model, self.q).map(|ev| ev.error_norm).map_err(|e| e.to_string())
    }
}

/// The tree side of a run: disturbances, monitors, ticking and bookkeeping.
struct Mission<'a> {
    scenario: &'a Scenario,
    tree: BehaviorTree,
    blackboard: Blackboard,
    fired: Vec<bool>,
    rng: ChaCha8Rng,
    retry_child: Option<String>,
    ticks: u64,
    root_child_failures: u64,
    removal_violations: u64,
    disturbances_fired: u64,
    failed_nodes: BTreeSet<String>,
    events: Vec<TraceEvent>,
}

impl<'a> Mission<'a> {
    /// Also applies the trial's randomized placements to `world`.
    fn new(scenario: &'a Scenario, trial: u64, world: &mut WorldState) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(scenario.seed, trial));
        for rule in &scenario.randomize {
            let b = &rule.boxes[(trial % rule.boxes.len() as u64) as usize];
            world.place(&rule.label, scenario.world.boxes[b].sample(&mut rng));
        }
        let mut blackboard = Blackboard::new();
        for (k, v) in &scenario.world.blackboard {
            blackboard.set(k.clone(), v.clone());
        }
        let retry_child = match &scenario.tree.kind {
            NodeKind::Decorator(_) => Some(scenario.tree.children[0].id.clone()),
            _ => None,
        };
        Self {
            scenario,
            tree: BehaviorTree::new(scenario.tree.clone()).expect("scenario tree was validated"),
            blackboard,
            fired: vec![false; scenario.disturbances.len()],
            rng,
            retry_child,
            ticks: 0,
            root_child_failures: 0,
            removal_violations: 0,
            disturbances_fired: 0,
            failed_nodes: BTreeSet::new(),
            events: Vec::new(),
        }
    }

    fn log(&mut self, t: f64, text: String) {
        self.events.push(TraceEvent { t, text });
    }

    fn fire_disturbances(&mut self, t: f64, world: &mut WorldState) {
        for i in 0..self.scenario.disturbances.len() {
            let d = &self.scenario.disturbances[i];
            let due = !self.fired[i]
                && match &d.trigger {
                    Trigger::At(at) => t >= *at - 1e-12,
                    Trigger::Flag(key) => self.blackboard.get_bool(key).unwrap_or(false),
                };
            if !due {
                continue;
            }
            self.fired[i] = true;
            self.disturbances_fired += 1;
            for action in &d.actions {
                let text = match action {
                    DisturbanceAction::MoveGoal { label, to } | DisturbanceAction::MoveObject { label, to } => {
                        let at = match to {
                            Placement::Fixed(v) => *v,
                            Placement::Within(b) => self.scenario.world.boxes[b].sample(&mut self.rng),
                        };
                        world.place(label, at);
                        format!("disturbance: move {label} to [{}, {}, {}]", at.x, at.y, at.z)
                    }
                    DisturbanceAction::SetFlag { key, value } => {
                        self.blackboard.set_bool(key.clone(), *value);
                        format!("disturbance: set {key} = {value}")
                    }
                };
                self.events.push(TraceEvent { t, text });
            }
        }
    }

    fn update_monitors(&mut self, world: &WorldState, ee: &Vector3<f64>) {
        for m in &self.scenario.world.monitors {
            let now = world.holds(&m.predicate, ee, |n| self.tree.last_status(n) == Some(TickStatus::Success));
            let before = m.latch && self.blackboard.get_bool(&m.key).unwrap_or(false);
            self.blackboard.set_bool(m.key.clone(), now || before);
        }
    }

    /// One tree iteration at time `t`: disturbances, monitors, one tick on
    /// `stack`, then attachment and removal checks.
    fn step(
        &mut self,
        t: f64,
        q: &DVector<f64>,
        world: &mut WorldState,
        stack: &mut TaskStack,
    ) -> Result<TickRow, String> {
        let model = &self.scenario.model;
        let ee = model.forward_kinematics(q).map_err(|e| e.to_string())?.position;
        self.fire_disturbances(t, world);
        self.update_monitors(world, &ee);

        let env = RobotEnv { tasks: &self.scenario.tasks, world, model, q };
        let mut ctx = TickContext { stack, blackboard: &self.blackboard, env: &env, now: t };
        let root = self.tree.tick(&mut ctx).map_err(|e| e.to_string())?;

        let statuses: Vec<Option<TickStatus>> = self.tree.last_statuses().map(|(_, s)| s).collect();
        for (id, s) in self.tree.last_statuses() {
            let condition = matches!(self.tree.kind(id), Some(NodeKind::Condition { .. }));
            if s == Some(TickStatus::Failure) && !condition && !self.failed_nodes.contains(id) {
                self.failed_nodes.insert(id.to_string());
            }
        }
        if let Some(child) = &self.retry_child {
            if self.tree.last_status(child) == Some(TickStatus::Failure) {
                self.root_child_failures += 1;
            }
        }

        let mut finished: Vec<String> = self
            .tree
            .sot_nodes()
            .filter(|id| matches!(self.tree.last_status(id), Some(TickStatus::Success | TickStatus::Failure)))
            .map(str::to_string)
            .collect();
        for event in self.tree.take_events() {
            let text = match event {
                BtEvent::Removed { node, tasks } => format!("removed by {node}: {}", tasks.join(" ")),
                BtEvent::Halted { node } => {
                    if self.tree.last_status(&node) != Some(TickStatus::Running)
                        && self.tree.kind(&node).is_some_and(NodeKind::is_sot)
                    {
                        finished.push(node.clone());
                    }
                    format!("halted {node}")
                }
                BtEvent::ActionError { node, cause } => format!("action {node} failed: {cause}"),
            };
            self.log(t, text);
        }
        for node in finished {
            for task in self.tree.direct_action_tasks(&node).map_err(|e| e.to_string())? {
                if stack.contains(&task) {
                    self.removal_violations += 1;
                    self.log(t, format!("removal violation: {node} left {task}"));
                }
            }
        }

        for (label, def) in &self.scenario.world.objects {
            let succeeded = |n: &Option<String>| {
                n.as_deref().is_some_and(|n| self.tree.last_status(n) == Some(TickStatus::Success))
            };
            if succeeded(&def.detach_on) && world.is_held(label) {
                world.detach(label);
                self.events.push(TraceEvent { t, text: format!("detach {label}") });
            } else if succeeded(&def.attach_on) && !world.is_held(label) {
                let at = world.position_of(label)?;
                if (at - ee).norm() <= def.grasp_distance {
                    world.attach(label, &ee);
                    self.events.push(TraceEvent { t, text: format!("attach {label}") });
                }
            }
        }

        let row = TickRow { index: self.ticks, t, root, statuses };
        self.ticks += 1;
        Ok(row)
    }
}

/// Column layout and row assembly shared by both modes.
struct Recorder {
    trace: Trace,
    final_errors: BTreeMap<String, f64>,
    min_clearance: Option<f64>,
    singular_steps: u64,
    step_times: Vec<Duration>,
}

impl Recorder {
    fn new(scenario: &Scenario, world: &WorldState) -> Self {
        let mut priorities: Vec<u32> = scenario.tasks.iter().map(|t| t.priority).collect();
        priorities.sort_unstable();
        priorities.dedup();
        let tree = BehaviorTree::new(scenario.tree.clone()).expect("scenario tree was validated");
        Self {
            trace: Trace {
                dof: scenario.model.dof(),
                task_ids: scenario.tasks.iter().map(|t| t.id.clone()).collect(),
                priorities,
                node_ids: tree.node_ids().map(str::to_string).collect(),
                planes: world.planes().to_vec(),
                lines: world.lines().iter().map(|(k, l)| (k.clone(), *l)).collect(),
                control: Vec::new(),
                ticks: Vec::new(),
                events: Vec::new(),
            },
            final_errors: BTreeMap::new(),
            min_clearance: None,
            singular_steps: 0,
            step_times: Vec::new(),
        }
    }

    fn record(&mut self, state: &JointState, ee: &Vector3<f64>, snap: &Snapshot, report: &StepReport, world: &WorldState) {
        let trace = &mut self.trace;
        let mut errors = vec![None; trace.task_ids.len()];
        for r in &report.readings {
            if let Some(i) = trace.task_ids.iter().position(|id| *id == r.id) {
                errors[i] = Some(r.error_norm);
            }
            self.final_errors.insert(r.id.clone(), r.error_norm);
        }
        let mut slacks = vec![None; trace.priorities.len()];
        for (p, w) in &report.level_slacks {
            if let Some(i) = trace.priorities.iter().position(|x| x == p) {
                slacks[i] = Some(*w);
            }
        }
        let clearance = world.min_clearance(ee);
        if let Some(c) = clearance {
            self.min_clearance = Some(self.min_clearance.map_or(c, |m| m.min(c)));
        }
        if report.singular {
            self.singular_steps += 1;
        }
        trace.control.push(ControlRow {
            step: trace.control.len() as u64,
            t: state.t,
            revision: snap.revision,
            active: snap.ids().map(str::to_string).collect(),
            q: state.q.iter().copied().collect(),
            qdot: report.state.qdot.iter().copied().collect(),
            ee: [ee.x, ee.y, ee.z],
            min_clearance: clearance,
            errors,
            slacks,
        });
    }

    /// Row for the state a run ends in; the command is recorded but not applied.
    fn terminal(&mut self, model: &ManipulatorModel, state: &JointState, snap: &Snapshot, world: &WorldState, dt: f64) {
        if let (Ok(report), Ok(pose)) = (control_step(model, state, snap, dt), model.forward_kinematics(&state.q)) {
            self.record(state, &pose.position, snap, &report, world);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        mut self,
        scenario: &Scenario,
        trial: u64,
        outcome: Outcome,
        mission: Mission<'_>,
        world: WorldState,
        concurrent: bool,
        final_revision: u64,
    ) -> RunResult {
        self.trace.events = mission.events;
        let steps = self.step_times.len() as u64;
        let micros: Vec<f64> = self.step_times.iter().map(|d| d.as_secs_f64() * 1e6).collect();
        let mean = if micros.is_empty() { 0.0 } else { micros.iter().sum::<f64>() / micros.len() as f64 };
        let summary = RunSummary {
            scenario: scenario.name.clone(),
            seed: scenario.seed,
            trial,
            outcome: outcome.as_str().to_string(),
            error: match &outcome {
                Outcome::Error(e) => Some(e.clone()),
                _ => None,
            },
            concurrent,
            sim_time: self.trace.control.last().map_or(0.0, |r| r.t),
            ticks: mission.ticks,
            control_steps: steps,
            control_dt: scenario.rates.control_dt,
            ticks_ratio: scenario.rates.ticks_ratio,
            min_clearance: self.min_clearance,
            mean_step_us: mean,
            max_step_us: micros.iter().copied().fold(0.0, f64::max),
            singular_steps: self.singular_steps,
            root_child_failures: mission.root_child_failures,
            removal_violations: mission.removal_violations,
            disturbances_fired: mission.disturbances_fired,
            final_revision,
            failed_nodes: mission.failed_nodes.into_iter().collect(),
            final_errors: self.final_errors,
        };
        RunResult { outcome, trace: self.trace, summary, world }
    }
}

fn ee_of(model: &ManipulatorModel, q: &DVector<f64>) -> Vector3<f64> {
    model.forward_kinematics(q).expect("state has model dimension").position
}

/// Runs one trial in the deterministic interleaving: each iteration ticks
/// the tree once, then advances `ticks_ratio` control steps.
pub fn run(scenario: &Scenario, trial: u64) -> RunResult {
    let model = &scenario.model;
    let Rates { control_dt: dt, ticks_ratio } = scenario.rates;
    let mut world = WorldState::new(&scenario.world);
    let mut mission = Mission::new(scenario, trial, &mut world);
    let mut rec = Recorder::new(scenario, &world);
    let mut state = JointState::at_rest(scenario.q0.clone());
    let mut stack = TaskStack::new();

    let outcome = 'run: loop {
        let row = match mission.step(state.t, &state.q, &mut world, &mut stack) {
            Ok(row) => row,
            Err(e) => break Outcome::Error(e),
        };
        let root = row.root;
        rec.trace.ticks.push(row);
        let end = match root {
            TickStatus::Success => Some(Outcome::RootSuccess),
            TickStatus::Failure => Some(Outcome::RootFailure),
            TickStatus::Running if state.t >= scenario.max_time - 1e-12 => Some(Outcome::Timeout),
            TickStatus::Running => None,
        };
        if let Some(outcome) = end {
            rec.terminal(model, &state, &stack.snapshot(), &world, dt);
            break outcome;
        }
        let snap = stack.snapshot();
        for _ in 0..ticks_ratio {
            let started = Stopwatch::start();
            let report = match control_step(model, &state, &snap, dt) {
                Ok(r) => r,
                Err(e) => break 'run Outcome::Error(e.to_string()),
            };
            rec.step_times.push(started.elapsed());
            let ee = ee_of(model, &state.q);
            rec.record(&state, &ee, &snap, &report, &world);
            state = report.state;
            world.follow(&ee_of(model, &state.q));
        }
    };
    let revision = stack.revision();
    rec.finish(scenario, trial, outcome, mission, world, false, revision)
}

struct Progress {
    ticks: u64,
    steps: u64,
    done: bool,
    outcome: Option<Outcome>,
}

struct Sim {
    state: JointState,
    world: WorldState,
    rec: Recorder,
}

/// Runs the tree and the control loop on two threads sharing the stack
/// through atomic commits. Each side may run at most one tick period ahead
/// of the other; interleaving within that window is not deterministic.
pub fn run_concurrent(scenario: &Scenario, trial: u64) -> RunResult {
    let model = &scenario.model;
    let Rates { control_dt: dt, ticks_ratio } = scenario.rates;
    let r = ticks_ratio as u64;
    let mut world = WorldState::new(&scenario.world);
    let mut mission = Mission::new(scenario, trial, &mut world);
    let rec = Recorder::new(scenario, &world);
    let sim = Mutex::new(Sim { state: JointState::at_rest(scenario.q0.clone()), world, rec });
    let progress = Mutex::new(Progress { ticks: 0, steps: 0, done: false, outcome: None });
    let signal = Condvar::new();
    let shared = SharedTaskStack::new(TaskStack::new());

    std::thread::scope(|scope| {
        scope.spawn(|| loop {
            {
                let mut p = progress.lock().expect("progress lock");
                while !p.done && p.steps >= p.ticks * r {
                    p = signal.wait(p).expect("progress lock");
                }
                if p.done {
                    return;
                }
            }
            let snap = shared.snapshot();
            let mut guard = sim.lock().expect("sim lock");
            let s = &mut *guard;
            let started = Stopwatch::start();
            let result = control_step(model, &s.state, &snap, dt);
            let elapsed = started.elapsed();
            let mut p_outcome = None;
            match result {
                Ok(report) => {
                    s.rec.step_times.push(elapsed);
                    let ee = ee_of(model, &s.state.q);
                    s.rec.record(&s.state, &ee, &snap, &report, &s.world);
                    s.state = report.state;
                    s.world.follow(&ee_of(model, &s.state.q));
                }
                Err(e) => p_outcome = Some(Outcome::Error(e.to_string())),
            }
            drop(guard);
            let mut p = progress.lock().expect("progress lock");
            p.steps += 1;
            if p_outcome.is_some() && !p.done {
                p.done = true;
                p.outcome = p_outcome;
            }
            signal.notify_all();
        });

        loop {
            {
                let mut p = progress.lock().expect("progress lock");
                while !p.done && p.steps + r < p.ticks * r {
                    p = signal.wait(p).expect("progress lock");
                }
                if p.done {
                    break;
                }
            }
            let mut guard = sim.lock().expect("sim lock");
            let s = &mut *guard;
            let mut batch = shared.working_copy();
            let (t, q) = (s.state.t, s.state.q.clone());
            let result = mission.step(t, &q, &mut s.world, &mut batch);
            shared.commit(batch);
            let end = match result {
                Ok(row) => {
                    let root = row.root;
                    s.rec.trace.ticks.push(row);
                    match root {
                        TickStatus::Success => Some(Outcome::RootSuccess),
                        TickStatus::Failure => Some(Outcome::RootFailure),
                        TickStatus::Running if t >= scenario.max_time - 1e-12 => Some(Outcome::Timeout),
                        TickStatus::Running => None,
                    }
                }
                Err(e) => Some(Outcome::Error(e)),
            };
            drop(guard);
            let mut p = progress.lock().expect("progress lock");
            p.ticks += 1;
            if let Some(o) = end {
                if !p.done {
                    p.done = true;
                    p.outcome = Some(o);
                }
            }
            signal.notify_all();
        }
    });

    let p = progress.into_inner().expect("progress lock");
    let Sim { state, world, mut rec } = sim.into_inner().expect("sim lock");
    let snap = shared.snapshot();
    rec.terminal(model, &state, &snap, &world, dt);
    let outcome = p.outcome.unwrap_or(Outcome::Timeout);
    rec.finish(scenario, trial, outcome, mission, world, true, snap.revision)
}
