//! Behavior tree interpreter with task-setting actions and SoT-Control nodes
//! that remove their children's tasks when they finish or are halted.
//!
//! Control nodes are reactive: every tick restarts from the first child. A
//! child that was Running on the previous tick and is not reached on this one
//! is halted.

mod blackboard;
mod parse;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::sot::TaskStack;
use crate::tasks::TaskSpec;

pub use blackboard::{Blackboard, Value};
pub use parse::{parse_tree, render_tree};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BtError {
    #[error("blackboard key `{0}` is not set")]
    UnsetBlackboardKey(String),
    #[error("blackboard key `{key}` holds {found}, expected a {expected}")]
    TypeMismatch { key: String, expected: &'static str, found: String },
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid tree: {0}")]
    Validation(String),
    #[error("no node with id `{0}`")]
    UnknownNode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TickStatus {
    Success,
    Failure,
    Running,
}

impl TickStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TickStatus::Success => "success",
            TickStatus::Failure => "failure",
            TickStatus::Running => "running",
        }
    }
}

impl fmt::Display for TickStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoratorPolicy {
    Inverter,
    ForceSuccess,
    RepeatUntilFailure,
    /// Turns up to `n` child failures into a fresh attempt on the next tick.
    Retry(u32),
}

/// Parallel success threshold; `All` resolves to the child count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Threshold {
    All,
    Count(usize),
}

impl Threshold {
    fn resolve(self, children: usize) -> usize {
        match self {
            Threshold::All => children,
            Threshold::Count(m) => m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeKind {
    Sequence,
    Fallback,
    Parallel(Threshold),
    SotSequence,
    SotFallback,
    SotParallel(Threshold),
    Decorator(DecoratorPolicy),
    Condition { key: String },
    NonBlockingAction { task: String },
    BlockingAction { task: String },
}

impl NodeKind {
    pub fn keyword(&self) -> &'static str {
        match self {
            NodeKind::Sequence => "sequence",
            NodeKind::Fallback => "fallback",
            NodeKind::Parallel(_) => "parallel",
            NodeKind::SotSequence => "sot_sequence",
            NodeKind::SotFallback => "sot_fallback",
            NodeKind::SotParallel(_) => "sot_parallel",
            NodeKind::Decorator(DecoratorPolicy::Inverter) => "inverter",
            NodeKind::Decorator(DecoratorPolicy::ForceSuccess) => "force_success",
            NodeKind::Decorator(DecoratorPolicy::RepeatUntilFailure) => "repeat_until_failure",
            NodeKind::Decorator(DecoratorPolicy::Retry(_)) => "retry",
            NodeKind::Condition { .. } => "condition",
            NodeKind::NonBlockingAction { .. } => "non_blocking",
            NodeKind::BlockingAction { .. } => "blocking",
        }
    }

    pub fn is_sot(&self) -> bool {
        matches!(self, NodeKind::SotSequence | NodeKind::SotFallback | NodeKind::SotParallel(_))
    }

    pub fn is_leaf(&self) -> bool {
        matches!(
            self,
            NodeKind::Condition { .. } | NodeKind::NonBlockingAction { .. } | NodeKind::BlockingAction { .. }
        )
    }

    pub fn action_task(&self) -> Option<&str> {
        match self {
            NodeKind::NonBlockingAction { task } | NodeKind::BlockingAction { task } => Some(task),
            _ => None,
        }
    }
}

/// Tree description before validation.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: String,
    pub kind: NodeKind,
    pub children: Vec<NodeSpec>,
}

impl NodeSpec {
    pub fn new(id: impl Into<String>, kind: NodeKind, children: Vec<NodeSpec>) -> Self {
        Self { id: id.into(), kind, children }
    }

    pub fn leaf(id: impl Into<String>, kind: NodeKind) -> Self {
        Self::new(id, kind, Vec::new())
    }
}

/// What actions need from the outside world.
pub trait ActionEnv {
    /// Current parameters of the task with this id.
    fn resolve_task(&self, task_id: &str) -> Result<TaskSpec, String>;
    /// `‖e‖` of the task at the current robot state.
    fn task_error(&self, spec: &TaskSpec) -> Result<f64, String>;
}

impl ActionEnv for HashMap<String, TaskSpec> {
    fn resolve_task(&self, task_id: &str) -> Result<TaskSpec, String> {
        self.get(task_id).cloned().ok_or_else(|| format!("unknown task `{task_id}`"))
    }

    fn task_error(&self, _spec: &TaskSpec) -> Result<f64, String> {
        Err("no robot state attached".into())
    }
}

pub struct TickContext<'a> {
    pub stack: &'a mut TaskStack,
    pub blackboard: &'a Blackboard,
    pub env: &'a dyn ActionEnv,
    pub now: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BtEvent {
    /// An SoT-Control node removed its `X_C`.
    Removed { node: String, tasks: Vec<String> },
    Halted { node: String },
    /// An action could not set or evaluate its task and failed.
    ActionError { node: String, cause: String },
}

#[derive(Debug, Clone)]
struct Node {
    id: String,
    kind: NodeKind,
    children: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
struct NodeState {
    running: bool,
    /// Task ids set by direct action children during this activation.
    x_c: BTreeSet<String>,
    retries: u32,
}

#[derive(Debug, Clone)]
pub struct BehaviorTree {
    nodes: Vec<Node>,
    state: Vec<NodeState>,
    ticked: Vec<Option<TickStatus>>,
    /// Whether each action set its task on the current tick.
    set_now: Vec<bool>,
    events: Vec<BtEvent>,
}

impl BehaviorTree {
    pub fn new(root: NodeSpec) -> Result<Self, BtError> {
        let mut nodes = Vec::new();
        flatten(root, &mut nodes);
        validate(&nodes)?;
        let n = nodes.len();
        Ok(Self {
            nodes,
            state: vec![NodeState::default(); n],
            ticked: vec![None; n],
            set_now: vec![false; n],
            events: Vec::new(),
        })
    }

    /// Checks every action's task against `tasks`: it must exist, and carry
    /// blocking thresholds exactly when the action is blocking.
    pub fn check_tasks(&self, tasks: &dyn ActionEnv) -> Result<(), BtError> {
        for node in &self.nodes {
            let (task, blocking) = match &node.kind {
                NodeKind::NonBlockingAction { task } => (task, false),
                NodeKind::BlockingAction { task } => (task, true),
                _ => continue,
            };
            let spec = tasks
                .resolve_task(task)
                .map_err(|e| BtError::Validation(format!("node `{}`: {e}", node.id)))?;
            if spec.blocking.is_some() != blocking {
                let want = if blocking { "needs" } else { "must not have" };
                return Err(BtError::Validation(format!(
                    "node `{}`: a {} action {want} blocking thresholds on task `{task}`",
                    node.id,
                    node.kind.keyword()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root_id(&self) -> &str {
        &self.nodes[0].id
    }

    /// Node ids in depth-first order.
    pub fn node_ids(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(|n| n.id.as_str())
    }

    pub fn kind(&self, id: &str) -> Option<&NodeKind> {
        self.index(id).ok().map(|i| &self.nodes[i].kind)
    }

    /// Status each node returned on the last tick, `None` if not ticked.
    pub fn last_statuses(&self) -> impl Iterator<Item = (&str, Option<TickStatus>)> {
        self.nodes.iter().zip(&self.ticked).map(|(n, s)| (n.id.as_str(), *s))
    }

    pub fn last_status(&self, id: &str) -> Option<TickStatus> {
        self.index(id).ok().and_then(|i| self.ticked[i])
    }

    /// Rebuilds the node description the tree was created from.
    pub fn to_spec(&self) -> NodeSpec {
        self.spec_at(0)
    }

    fn spec_at(&self, i: usize) -> NodeSpec {
        let node = &self.nodes[i];
        NodeSpec::new(node.id.clone(), node.kind.clone(), node.children.iter().map(|&c| self.spec_at(c)).collect())
    }

    /// Task ids of the direct action children of `id`.
    pub fn direct_action_tasks(&self, id: &str) -> Result<Vec<String>, BtError> {
        let i = self.index(id)?;
        Ok(self.nodes[i]
            .children
            .iter()
            .filter_map(|&c| self.nodes[c].kind.action_task().map(str::to_string))
            .collect())
    }

    /// Ids of the SoT-Control nodes.
    pub fn sot_nodes(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().filter(|n| n.kind.is_sot()).map(|n| n.id.as_str())
    }

    /// Events recorded since the last call.
    pub fn take_events(&mut self) -> Vec<BtEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn tick(&mut self, ctx: &mut TickContext<'_>) -> Result<TickStatus, BtError> {
        self.ticked.fill(None);
        self.set_now.fill(false);
        self.tick_node(0, ctx)
    }

    /// Halts the whole tree.
    pub fn halt(&mut self, ctx: &mut TickContext<'_>) {
        self.halt_node(0, ctx);
    }

    /// Halts one subtree. Halting a node that is not running is a no-op.
    pub fn halt_subtree(&mut self, id: &str, ctx: &mut TickContext<'_>) -> Result<(), BtError> {
        let i = self.index(id)?;
        self.halt_node(i, ctx);
        Ok(())
    }

    fn index(&self, id: &str) -> Result<usize, BtError> {
        self.nodes.iter().position(|n| n.id == id).ok_or_else(|| BtError::UnknownNode(id.to_string()))
    }

    fn tick_node(&mut self, i: usize, ctx: &mut TickContext<'_>) -> Result<TickStatus, BtError> {
        let kind = self.nodes[i].kind.clone();
        let status = match &kind {
            NodeKind::Sequence | NodeKind::SotSequence => self.tick_ordered(i, ctx, TickStatus::Success)?,
            NodeKind::Fallback | NodeKind::SotFallback => self.tick_ordered(i, ctx, TickStatus::Failure)?,
            NodeKind::Parallel(m) | NodeKind::SotParallel(m) => self.tick_parallel(i, *m, ctx)?,
            NodeKind::Decorator(policy) => self.tick_decorator(i, *policy, ctx)?,
            NodeKind::Condition { key } => {
                if ctx.blackboard.get_bool(key)? {
                    TickStatus::Success
                } else {
                    TickStatus::Failure
                }
            }
            NodeKind::NonBlockingAction { task } => match self.set_task(i, task, ctx) {
                Ok(_) => TickStatus::Success,
                Err(cause) => self.action_failed(i, cause),
            },
            NodeKind::BlockingAction { task } => match self.blocking_status(i, task, ctx) {
                Ok(s) => s,
                Err(cause) => self.action_failed(i, cause),
            },
        };

        if kind.is_sot() {
            for &c in &self.nodes[i].children {
                if self.set_now[c] {
                    if let Some(task) = self.nodes[c].kind.action_task() {
                        self.state[i].x_c.insert(task.to_string());
                    }
                }
            }
            if status != TickStatus::Running {
                self.remove_x_c(i, ctx);
            }
        }
        self.state[i].running = status == TickStatus::Running;
        self.ticked[i] = Some(status);
        Ok(status)
    }

    /// Sequence (`pass = Success`) and Fallback (`pass = Failure`).
    fn tick_ordered(&mut self, i: usize, ctx: &mut TickContext<'_>, pass: TickStatus) -> Result<TickStatus, BtError> {
        let children = self.nodes[i].children.clone();
        let mut result = pass;
        for &c in &children {
            let s = self.tick_node(c, ctx)?;
            if s != pass {
                result = s;
                break;
            }
        }
        self.halt_unticked(&children, ctx);
        Ok(result)
    }

    fn tick_parallel(&mut self, i: usize, m: Threshold, ctx: &mut TickContext<'_>) -> Result<TickStatus, BtError> {
        let children = self.nodes[i].children.clone();
        let m = m.resolve(children.len());
        let mut successes = 0;
        let mut failures = 0;
        for &c in &children {
            match self.tick_node(c, ctx)? {
                TickStatus::Success => successes += 1,
                TickStatus::Failure => failures += 1,
                TickStatus::Running => {}
            }
        }
        let status = if successes >= m {
            TickStatus::Success
        } else if failures > children.len() - m {
            TickStatus::Failure
        } else {
            TickStatus::Running
        };
        if status != TickStatus::Running {
            for &c in &children {
                if self.ticked[c] == Some(TickStatus::Running) {
                    self.halt_node(c, ctx);
                }
            }
        }
        Ok(status)
    }

    fn tick_decorator(
        &mut self,
        i: usize,
        policy: DecoratorPolicy,
        ctx: &mut TickContext<'_>,
    ) -> Result<TickStatus, BtError> {
        let child = self.nodes[i].children[0];
        let s = self.tick_node(child, ctx)?;
        Ok(match (policy, s) {
            (_, TickStatus::Running) => TickStatus::Running,
            (DecoratorPolicy::Inverter, TickStatus::Success) => TickStatus::Failure,
            (DecoratorPolicy::Inverter, TickStatus::Failure) => TickStatus::Success,
            (DecoratorPolicy::ForceSuccess, _) => TickStatus::Success,
            (DecoratorPolicy::RepeatUntilFailure, TickStatus::Success) => TickStatus::Running,
            (DecoratorPolicy::RepeatUntilFailure, TickStatus::Failure) => TickStatus::Success,
            (DecoratorPolicy::Retry(_), TickStatus::Success) => {
                self.state[i].retries = 0;
                TickStatus::Success
            }
            (DecoratorPolicy::Retry(n), TickStatus::Failure) => {
                if self.state[i].retries < n {
                    self.state[i].retries += 1;
                    TickStatus::Running
                } else {
                    self.state[i].retries = 0;
                    TickStatus::Failure
                }
            }
        })
    }

    fn set_task(&mut self, i: usize, task: &str, ctx: &mut TickContext<'_>) -> Result<TaskSpec, String> {
        let spec = ctx.env.resolve_task(task)?;
        if spec.id != task {
            return Err(format!("resolved task has id `{}`", spec.id));
        }
        ctx.stack.set_task(spec.clone(), ctx.now).map_err(|e| e.to_string())?;
        self.set_now[i] = true;
        Ok(spec)
    }

    fn blocking_status(&mut self, i: usize, task: &str, ctx: &mut TickContext<'_>) -> Result<TickStatus, String> {
        let spec = self.set_task(i, task, ctx)?;
        let params = spec.blocking.ok_or_else(|| format!("task `{task}` has no blocking thresholds"))?;
        let t_x = ctx.stack.get(task).map_or(0.0, |a| a.execution_time(ctx.now));
        if t_x > params.time_threshold {
            return Ok(TickStatus::Failure);
        }
        let error = ctx.env.task_error(&spec)?;
        Ok(if error <= params.error_threshold { TickStatus::Success } else { TickStatus::Running })
    }

    fn action_failed(&mut self, i: usize, cause: String) -> TickStatus {
        log::warn!("action `{}` failed: {cause}", self.nodes[i].id);
        self.events.push(BtEvent::ActionError { node: self.nodes[i].id.clone(), cause });
        TickStatus::Failure
    }

    fn halt_unticked(&mut self, children: &[usize], ctx: &mut TickContext<'_>) {
        for &c in children {
            if self.ticked[c].is_none() && self.state[c].running {
                self.halt_node(c, ctx);
            }
        }
    }

    fn halt_node(&mut self, i: usize, ctx: &mut TickContext<'_>) {
        if !self.state[i].running && self.state[i].x_c.is_empty() {
            return;
        }
        let children = self.nodes[i].children.clone();
        for c in children {
            self.halt_node(c, ctx);
        }
        if self.nodes[i].kind.is_sot() {
            self.remove_x_c(i, ctx);
        }
        self.state[i].running = false;
        self.state[i].retries = 0;
        self.events.push(BtEvent::Halted { node: self.nodes[i].id.clone() });
    }

    fn remove_x_c(&mut self, i: usize, ctx: &mut TickContext<'_>) {
        let x_c = std::mem::take(&mut self.state[i].x_c);
        if x_c.is_empty() {
            return;
        }
        ctx.stack.remove_tasks(x_c.iter().map(String::as_str));
        self.events.push(BtEvent::Removed { node: self.nodes[i].id.clone(), tasks: x_c.into_iter().collect() });
    }
}

fn flatten(spec: NodeSpec, nodes: &mut Vec<Node>) -> usize {
    let index = nodes.len();
    nodes.push(Node { id: spec.id, kind: spec.kind, children: Vec::new() });
    let children: Vec<usize> = spec.children.into_iter().map(|c| flatten(c, nodes)).collect();
    nodes[index].children = children;
    index
}

fn validate(nodes: &[Node]) -> Result<(), BtError> {
    let invalid = |msg: String| Err(BtError::Validation(msg));
    let mut ids = HashSet::new();
    let mut tasks = HashSet::new();
    for node in nodes {
        if node.id.is_empty() {
            return invalid("empty node id".into());
        }
        if !ids.insert(node.id.as_str()) {
            return invalid(format!("duplicate node id `{}`", node.id));
        }
        let count = node.children.len();
        match &node.kind {
            k if k.is_leaf() && count > 0 => {
                return invalid(format!("leaf `{}` has {count} children", node.id));
            }
            NodeKind::Decorator(_) if count != 1 => {
                return invalid(format!("decorator `{}` needs exactly one child, has {count}", node.id));
            }
            k if !k.is_leaf() && count == 0 => {
                return invalid(format!("control node `{}` has no children", node.id));
            }
            NodeKind::Parallel(Threshold::Count(m)) | NodeKind::SotParallel(Threshold::Count(m))
                if *m < 1 || *m > count =>
            {
                return invalid(format!("parallel `{}` threshold {m} outside 1..={count}", node.id));
            }
            NodeKind::Condition { key } if key.is_empty() => {
                return invalid(format!("condition `{}` has an empty key", node.id));
            }
            _ => {}
        }
        if let Some(task) = node.kind.action_task() {
            if !tasks.insert(task) {
                return invalid(format!("task `{task}` is used by more than one action"));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::TaskGeometry;
    use nalgebra::Vector3;

    /// Scripted environment: each task's error is looked up by id.
    struct Env {
        specs: HashMap<String, TaskSpec>,
        errors: HashMap<String, f64>,
    }

    impl Env {
        fn new() -> Self {
            Self { specs: HashMap::new(), errors: HashMap::new() }
        }

        fn task(mut self, id: &str, blocking: Option<(f64, f64)>, error: f64) -> Self {
            let mut spec = TaskSpec::new(id, TaskGeometry::Point { goal: Vector3::zeros() }, 1);
            if let Some((s, f)) = blocking {
                spec = spec.blocking(s, f);
            }
            self.specs.insert(id.into(), spec);
            self.errors.insert(id.into(), error);
            self
        }
    }

    impl ActionEnv for Env {
        fn resolve_task(&self, task_id: &str) -> Result<TaskSpec, String> {
            self.specs.resolve_task(task_id)
        }

        fn task_error(&self, spec: &TaskSpec) -> Result<f64, String> {
            Ok(self.errors[&spec.id])
        }
    }

    fn nb(id: &str) -> NodeSpec {
        NodeSpec::leaf(id, NodeKind::NonBlockingAction { task: id.into() })
    }

    fn bl(id: &str) -> NodeSpec {
        NodeSpec::leaf(id, NodeKind::BlockingAction { task: id.into() })
    }

    fn cond(id: &str) -> NodeSpec {
        NodeSpec::leaf(id, NodeKind::Condition { key: id.into() })
    }

    fn ids(stack: &TaskStack) -> Vec<String> {
        let mut v: Vec<String> = stack.snapshot().ids().map(String::from).collect();
        v.sort();
        v
    }

    #[test]
    fn sequence_condition_then_action() {
        let mut tree =
            BehaviorTree::new(NodeSpec::new("root", NodeKind::Sequence, vec![cond("ok"), nb("avoid")])).unwrap();
        let env = Env::new().task("avoid", None, 0.0);
        let mut bb = Blackboard::new();
        bb.set_bool("ok", true);
        let mut stack = TaskStack::new();
        let mut ctx = TickContext { stack: &mut stack, blackboard: &bb, env: &env, now: 0.0 };
        assert_eq!(tree.tick(&mut ctx).unwrap(), TickStatus::Success);
        assert_eq!(ids(&stack), ["avoid"]);
    }

    #[test]
    fn sot_parallel_removes_both_tasks_on_success() {
        let mut tree = BehaviorTree::new(NodeSpec::new(
            "reach1",
            NodeKind::SotParallel(Threshold::All),
            vec![nb("avoid_wall"), bl("go_point1")],
        ))
        .unwrap();
        let mut env = Env::new().task("avoid_wall", None, 0.0).task("go_point1", Some((1e-3, 20.0)), 0.5);
        let bb = Blackboard::new();
        let mut stack = TaskStack::new();
        for k in 0..3 {
            let mut ctx = TickContext { stack: &mut stack, blackboard: &bb, env: &env, now: k as f64 * 0.02 };
            assert_eq!(tree.tick(&mut ctx).unwrap(), TickStatus::Running);
            assert_eq!(ids(&stack), ["avoid_wall", "go_point1"]);
        }
        env.errors.insert("go_point1".into(), 5e-4);
        let mut ctx = TickContext { stack: &mut stack, blackboard: &bb, env: &env, now: 0.06 };
        assert_eq!(tree.tick(&mut ctx).unwrap(), TickStatus::Success);
        assert!(stack.is_empty());
        let events = tree.take_events();
        assert!(events.contains(&BtEvent::Removed {
            node: "reach1".into(),
            tasks: vec!["avoid_wall".into(), "go_point1".into()]
        }));
    }

    #[test]
    fn condition_short_circuits_visited_branch() {
        let mut tree = BehaviorTree::new(NodeSpec::new(
            "fb",
            NodeKind::Fallback,
            vec![
                cond("visited"),
                NodeSpec::new("reach", NodeKind::SotParallel(Threshold::All), vec![nb("wall"), bl("p1")]),
            ],
        ))
        .unwrap();
        let env = Env::new().task("wall", None, 0.0).task("p1", Some((1e-3, 20.0)), 1.0);
        let mut bb = Blackboard::new();
        bb.set_bool("visited", false);
        let mut stack = TaskStack::new();
        let mut ctx = TickContext { stack: &mut stack, blackboard: &bb, env: &env, now: 0.0 };
        assert_eq!(tree.tick(&mut ctx).unwrap(), TickStatus::Running);
        assert_eq!(stack.len(), 2);

        bb.set_bool("visited", true);
        let mut ctx = TickContext { stack: &mut stack, blackboard: &bb, env: &env, now: 0.02 };
        assert_eq!(tree.tick(&mut ctx).unwrap(), TickStatus::Success);
        assert_eq!(tree.last_status("p1"), None);
        assert_eq!(tree.last_status("wall"), None);
        // the running reach branch was halted, so its tasks are gone
        assert!(stack.is_empty());
        assert!(tree.take_events().contains(&BtEvent::Halted { node: "reach".into() }));
    }

    #[test]
    fn halting_plain_sequence_leaves_tasks() {
        let mut tree = BehaviorTree::new(NodeSpec::new("seq", NodeKind::Sequence, vec![bl("go")])).unwrap();
        let env = Env::new().task("go", Some((1e-3, 20.0)), 1.0);
        let bb = Blackboard::new();
        let mut stack = TaskStack::new();
        let mut ctx = TickContext { stack: &mut stack, blackboard: &bb, env: &env, now: 0.0 };
        assert_eq!(tree.tick(&mut ctx).unwrap(), TickStatus::Running);
        tree.halt(&mut ctx);
        assert_eq!(ids(&stack), ["go"]);
        assert!(tree.take_events().contains(&BtEvent::Halted { node: "go".into() }));
    }

    #[test]
    fn halting_sot_parallel_removes_tasks_and_idle_halt_is_noop() {
        let mut tree =
            BehaviorTree::new(NodeSpec::new("par", NodeKind::SotParallel(Threshold::All), vec![nb("a"), bl("b")]))
                .unwrap();
        let env = Env::new().task("a", None, 0.0).task("b", Some((1e-3, 20.0)), 1.0);
        let bb = Blackboard::new();
        let mut stack = TaskStack::new();
        let mut ctx = TickContext { stack: &mut stack, blackboard: &bb, env: &env, now: 0.0 };
        tree.halt(&mut ctx);
        assert!(tree.take_events().is_empty());
        tree.tick(&mut ctx).unwrap();
        tree.halt(&mut ctx);
        assert!(stack.is_empty());
    }

    #[test]
    fn blocking_times_out_strictly_after_f_x() {
        let mut tree = BehaviorTree::new(bl("go")).unwrap();
        let env = Env::new().task("go", Some((1e-3, 2.0)), 1.0);
        let bb = Blackboard::new();
        let mut stack = TaskStack::new();
        let mut last = TickStatus::Running;
        let mut k = 0;
        while last == TickStatus::Running {
            let now = k as f64 * 0.02;
            let mut ctx = TickContext { stack: &mut stack, blackboard: &bb, env: &env, now };
            last = tree.tick(&mut ctx).unwrap();
            if last == TickStatus::Failure {
                assert!(now > 2.0 && now - 0.02 <= 2.0, "failed at {now}");
            }
            k += 1;
        }
        assert_eq!(last, TickStatus::Failure);
        // no SoT ancestor, so the task stays
        assert!(stack.contains("go"));
    }

    #[test]
    fn unknown_task_fails_the_action() {
        let mut tree = BehaviorTree::new(nb("ghost")).unwrap();
        let env = Env::new();
        let bb = Blackboard::new();
        let mut stack = TaskStack::new();
        let mut ctx = TickContext { stack: &mut stack, blackboard: &bb, env: &env, now: 0.0 };
        assert_eq!(tree.tick(&mut ctx).unwrap(), TickStatus::Failure);
        assert!(matches!(tree.take_events()[0], BtEvent::ActionError { .. }));
    }

    #[test]
    fn unset_condition_key_is_an_error() {
        let mut tree = BehaviorTree::new(cond("missing")).unwrap();
        let env = Env::new();
        let bb = Blackboard::new();
        let mut stack = TaskStack::new();
        let mut ctx = TickContext { stack: &mut stack, blackboard: &bb, env: &env, now: 0.0 };
        assert_eq!(tree.tick(&mut ctx), Err(BtError::UnsetBlackboardKey("missing".into())));
    }

    #[test]
    fn retry_turns_one_failure_into_running() {
        let mut tree =
            BehaviorTree::new(NodeSpec::new("retry", NodeKind::Decorator(DecoratorPolicy::Retry(1)), vec![cond("c")]))
                .unwrap();
        let env = Env::new();
        let mut bb = Blackboard::new();
        bb.set_bool("c", false);
        let mut stack = TaskStack::new();
        let mut ctx = TickContext { stack: &mut stack, blackboard: &bb, env: &env, now: 0.0 };
        assert_eq!(tree.tick(&mut ctx).unwrap(), TickStatus::Running);
        assert_eq!(tree.tick(&mut ctx).unwrap(), TickStatus::Failure);
        assert_eq!(tree.tick(&mut ctx).unwrap(), TickStatus::Running);
    }

    #[test]
    fn validation_rejects_bad_trees() {
        let dup = NodeSpec::new("a", NodeKind::Sequence, vec![cond("a")]);
        assert!(matches!(BehaviorTree::new(dup), Err(BtError::Validation(_))));
        let par = NodeSpec::new("p", NodeKind::Parallel(Threshold::Count(3)), vec![cond("x"), cond("y")]);
        assert!(BehaviorTree::new(par).is_err());
        let par0 = NodeSpec::new("p", NodeKind::Parallel(Threshold::Count(0)), vec![cond("x")]);
        assert!(BehaviorTree::new(par0).is_err());
        let dec = NodeSpec::new("d", NodeKind::Decorator(DecoratorPolicy::Inverter), vec![cond("x"), cond("y")]);
        assert!(BehaviorTree::new(dec).is_err());
        let leaf = NodeSpec::new("c", NodeKind::Condition { key: "k".into() }, vec![cond("x")]);
        assert!(BehaviorTree::new(leaf).is_err());
        let empty = NodeSpec::new("s", NodeKind::Sequence, vec![]);
        assert!(BehaviorTree::new(empty).is_err());
        let shared = NodeSpec::new(
            "s",
            NodeKind::Sequence,
            vec![
                NodeSpec::leaf("a", NodeKind::NonBlockingAction { task: "t".into() }),
                NodeSpec::leaf("b", NodeKind::NonBlockingAction { task: "t".into() }),
            ],
        );
        assert!(BehaviorTree::new(shared).is_err());
    }

    #[test]
    fn blocking_parameter_mismatch_is_rejected() {
        let tree = BehaviorTree::new(NodeSpec::new("s", NodeKind::Sequence, vec![nb("a"), bl("b")])).unwrap();
        let good = Env::new().task("a", None, 0.0).task("b", Some((1e-3, 1.0)), 0.0);
        assert!(tree.check_tasks(&good).is_ok());
        let swapped = Env::new().task("a", Some((1e-3, 1.0)), 0.0).task("b", Some((1e-3, 1.0)), 0.0);
        assert!(tree.check_tasks(&swapped).is_err());
        let missing = Env::new().task("a", None, 0.0);
        assert!(tree.check_tasks(&missing).is_err());
    }
}
