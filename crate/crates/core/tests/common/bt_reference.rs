//! Reference interpreter and randomized checks for the behavior-tree engine.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::oracle::seeded;
use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sotbt::bt::{
    ActionEnv, BehaviorTree, Blackboard, BtEvent, DecoratorPolicy, NodeKind, NodeSpec, Threshold, TickContext,
    TickStatus,
};
use sotbt::sot::TaskStack;
use sotbt::tasks::{TaskGeometry, TaskSpec};

use TickStatus::{Failure, Running, Success};

const ALL: [TickStatus; 3] = [Success, Failure, Running];
const F_X: f64 = 1.0;
const S_X: f64 = 0.1;

/// Scripted world: task errors by id; ids in `broken` cannot be resolved.
#[derive(Default, Clone)]
struct Script {
    errors: HashMap<String, f64>,
    broken: BTreeSet<String>,
    blocking: BTreeSet<String>,
}

impl ActionEnv for Script {
    fn resolve_task(&self, task_id: &str) -> Result<TaskSpec, String> {
        if self.broken.contains(task_id) {
            return Err(format!("task `{task_id}` is broken"));
        }
        let spec = TaskSpec::new(task_id, TaskGeometry::Point { goal: Vector3::zeros() }, 1);
        Ok(if self.blocking.contains(task_id) { spec.blocking(S_X, F_X) } else { spec })
    }

    fn task_error(&self, spec: &TaskSpec) -> Result<f64, String> {
        self.errors.get(&spec.id).copied().ok_or_else(|| "no error scripted".into())
    }
}

/// A blocking leaf scripted to return `status` on its first tick.
fn scripted_leaf(id: &str, status: TickStatus, script: &mut Script) -> NodeSpec {
    script.blocking.insert(id.into());
    match status {
        Success => {
            script.errors.insert(id.into(), 0.0);
        }
        Running => {
            script.errors.insert(id.into(), 1.0);
        }
        Failure => {
            script.broken.insert(id.into());
        }
    }
    NodeSpec::leaf(id, NodeKind::BlockingAction { task: id.into() })
}

fn assignments(n: usize) -> Vec<Vec<TickStatus>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                ALL.iter().map(move |s| {
                    let mut v = prefix.clone();
                    v.push(*s);
                    v
                })
            })
            .collect();
    }
    out
}

/// Classic semantics, written as a table over child statuses.
fn expected(kind: &NodeKind, children: &[TickStatus]) -> (TickStatus, usize) {
    let n = children.len();
    let first = |pass: TickStatus| match children.iter().position(|s| *s != pass) {
        Some(i) => (children[i], i + 1),
        None => (pass, n),
    };
    match kind {
        NodeKind::Sequence | NodeKind::SotSequence => first(Success),
        NodeKind::Fallback | NodeKind::SotFallback => first(Failure),
        NodeKind::Parallel(t) | NodeKind::SotParallel(t) => {
            let m = match t {
                Threshold::All => n,
                Threshold::Count(m) => *m,
            };
            let s = children.iter().filter(|c| **c == Success).count();
            let f = children.iter().filter(|c| **c == Failure).count();
            let status = if s >= m {
                Success
            } else if f > n - m {
                Failure
            } else {
                Running
            };
            (status, n)
        }
        NodeKind::Decorator(p) => {
            let s = match (p, children[0]) {
                (_, Running) => Running,
                (DecoratorPolicy::Inverter, Success) => Failure,
                (DecoratorPolicy::Inverter, Failure) => Success,
                (DecoratorPolicy::ForceSuccess, _) => Success,
                (DecoratorPolicy::RepeatUntilFailure, Success) => Running,
                (DecoratorPolicy::RepeatUntilFailure, Failure) => Success,
                (DecoratorPolicy::Retry(n), Failure) if *n > 0 => Running,
                (DecoratorPolicy::Retry(_), s) => s,
            };
            (s, 1)
        }
        _ => unreachable!(),
    }
}

fn control_kinds(n: usize) -> Vec<NodeKind> {
    let mut kinds = vec![NodeKind::Sequence, NodeKind::Fallback, NodeKind::SotSequence, NodeKind::SotFallback];
    kinds.push(NodeKind::Parallel(Threshold::All));
    kinds.push(NodeKind::SotParallel(Threshold::All));
    for m in 1..=n {
        kinds.push(NodeKind::Parallel(Threshold::Count(m)));
        kinds.push(NodeKind::SotParallel(Threshold::Count(m)));
    }
    if n == 1 {
        for p in [
            DecoratorPolicy::Inverter,
            DecoratorPolicy::ForceSuccess,
            DecoratorPolicy::RepeatUntilFailure,
            DecoratorPolicy::Retry(0),
            DecoratorPolicy::Retry(1),
        ] {
            kinds.push(NodeKind::Decorator(p));
        }
    }
    kinds
}

pub fn truth_tables_match_classic_semantics() {
    let mut checked = 0;
    for n in 1..=4 {
        for kind in control_kinds(n) {
            for statuses in assignments(n) {
                let mut script = Script::default();
                let children: Vec<NodeSpec> = statuses
                    .iter()
                    .enumerate()
                    .map(|(i, s)| scripted_leaf(&format!("c{i}"), *s, &mut script))
                    .collect();
                let mut tree = BehaviorTree::new(NodeSpec::new("root", kind.clone(), children)).unwrap();
                let bb = Blackboard::new();
                let mut stack = TaskStack::new();
                let mut ctx = TickContext { stack: &mut stack, blackboard: &bb, env: &script, now: 0.0 };
                let got = tree.tick(&mut ctx).unwrap();
                let (want, ticked) = expected(&kind, &statuses);
                assert_eq!(got, want, "{kind:?} over {statuses:?}");
                for i in 0..n {
                    let status = tree.last_status(&format!("c{i}"));
                    if i < ticked {
                        assert_eq!(status, Some(statuses[i]), "{kind:?} child {i} over {statuses:?}");
                    } else {
                        assert_eq!(status, None, "{kind:?} ticked child {i} over {statuses:?}");
                    }
                }
                if kind.is_sot() && got != Running {
                    assert!(stack.is_empty(), "{kind:?} left tasks over {statuses:?}");
                }
                checked += 1;
            }
        }
    }
    assert!(checked > 1000);
}

// ---------------------------------------------------------------------------
// Independent reference interpreter: recursive over `NodeSpec`, its own
// state keyed by node id, its own stack model (id -> t_set).

#[derive(Default)]
struct RefState {
    running: BTreeSet<String>,
    x_c: BTreeMap<String, BTreeSet<String>>,
    retries: BTreeMap<String, u32>,
    statuses: BTreeMap<String, TickStatus>,
    stack: BTreeMap<String, f64>,
}

struct RefWorld<'a> {
    blackboard: &'a BTreeMap<String, bool>,
    script: &'a Script,
    now: f64,
}

fn ref_tick(node: &NodeSpec, st: &mut RefState, w: &RefWorld<'_>) -> TickStatus {
    let status = match &node.kind {
        NodeKind::Condition { key } => {
            if w.blackboard[key] {
                Success
            } else {
                Failure
            }
        }
        NodeKind::NonBlockingAction { task } => {
            if w.script.broken.contains(task) {
                Failure
            } else {
                st.stack.entry(task.clone()).or_insert(w.now);
                Success
            }
        }
        NodeKind::BlockingAction { task } => {
            if w.script.broken.contains(task) {
                Failure
            } else {
                let t_set = *st.stack.entry(task.clone()).or_insert(w.now);
                if w.now - t_set > F_X {
                    Failure
                } else if w.script.errors[task] <= S_X {
                    Success
                } else {
                    Running
                }
            }
        }
        NodeKind::Sequence | NodeKind::SotSequence | NodeKind::Fallback | NodeKind::SotFallback => {
            let pass = if matches!(node.kind, NodeKind::Sequence | NodeKind::SotSequence) { Success } else { Failure };
            let mut out = pass;
            let mut reached = 0;
            for c in &node.children {
                reached += 1;
                let s = ref_tick(c, st, w);
                if s != pass {
                    out = s;
                    break;
                }
            }
            for c in &node.children[reached..] {
                if st.running.contains(&c.id) {
                    ref_halt(c, st);
                }
            }
            out
        }
        NodeKind::Parallel(t) | NodeKind::SotParallel(t) => {
            let n = node.children.len();
            let m = match t {
                Threshold::All => n,
                Threshold::Count(m) => *m,
            };
            let results: Vec<TickStatus> = node.children.iter().map(|c| ref_tick(c, st, w)).collect();
            let s = results.iter().filter(|r| **r == Success).count();
            let f = results.iter().filter(|r| **r == Failure).count();
            let out = if s >= m {
                Success
            } else if f > n - m {
                Failure
            } else {
                Running
            };
            if out != Running {
                for (c, r) in node.children.iter().zip(&results) {
                    if *r == Running {
                        ref_halt(c, st);
                    }
                }
            }
            out
        }
        NodeKind::Decorator(p) => {
            let s = ref_tick(&node.children[0], st, w);
            match (p, s) {
                (_, Running) => Running,
                (DecoratorPolicy::Inverter, Success) => Failure,
                (DecoratorPolicy::Inverter, Failure) => Success,
                (DecoratorPolicy::ForceSuccess, _) => Success,
                (DecoratorPolicy::RepeatUntilFailure, Success) => Running,
                (DecoratorPolicy::RepeatUntilFailure, Failure) => Success,
                (DecoratorPolicy::Retry(_), Success) => {
                    st.retries.remove(&node.id);
                    Success
                }
                (DecoratorPolicy::Retry(n), Failure) => {
                    let used = st.retries.entry(node.id.clone()).or_insert(0);
                    if *used < *n {
                        *used += 1;
                        Running
                    } else {
                        st.retries.remove(&node.id);
                        Failure
                    }
                }
            }
        }
    };
    if node.kind.is_sot() {
        for c in &node.children {
            let set_ok = st.statuses.contains_key(&c.id)
                && match &c.kind {
                    NodeKind::NonBlockingAction { task } | NodeKind::BlockingAction { task } => {
                        !w.script.broken.contains(task)
                    }
                    _ => false,
                };
            if set_ok {
                st.x_c.entry(node.id.clone()).or_default().insert(c.kind.action_task().unwrap().to_string());
            }
        }
        if status != Running {
            ref_remove(node, st);
        }
    }
    if status == Running {
        st.running.insert(node.id.clone());
    } else {
        st.running.remove(&node.id);
    }
    st.statuses.insert(node.id.clone(), status);
    status
}

fn ref_remove(node: &NodeSpec, st: &mut RefState) {
    if let Some(ids) = st.x_c.remove(&node.id) {
        for id in ids {
            st.stack.remove(&id);
        }
    }
}

fn ref_halt(node: &NodeSpec, st: &mut RefState) {
    if !st.running.contains(&node.id) && st.x_c.get(&node.id).is_none_or(|s| s.is_empty()) {
        return;
    }
    for c in &node.children {
        ref_halt(c, st);
    }
    if node.kind.is_sot() {
        ref_remove(node, st);
    }
    st.running.remove(&node.id);
    st.retries.remove(&node.id);
}

// ---------------------------------------------------------------------------

struct Gen<'a> {
    rng: &'a mut ChaCha8Rng,
    next: usize,
    conditions: Vec<String>,
    tasks: Vec<String>,
}

impl Gen<'_> {
    fn id(&mut self, prefix: &str) -> String {
        self.next += 1;
        format!("{prefix}{}", self.next)
    }

    fn node(&mut self, depth: usize) -> NodeSpec {
        let leaf = depth >= 4 || self.rng.random_bool(0.35);
        if leaf {
            return match self.rng.random_range(0..3) {
                0 => {
                    let id = self.id("c");
                    self.conditions.push(id.clone());
                    NodeSpec::leaf(id.clone(), NodeKind::Condition { key: id })
                }
                1 => {
                    let id = self.id("n");
                    self.tasks.push(id.clone());
                    NodeSpec::leaf(id.clone(), NodeKind::NonBlockingAction { task: id })
                }
                _ => {
                    let id = self.id("b");
                    self.tasks.push(id.clone());
                    NodeSpec::leaf(id.clone(), NodeKind::BlockingAction { task: id })
                }
            };
        }
        if self.rng.random_bool(0.2) {
            let policy = match self.rng.random_range(0..4) {
                0 => DecoratorPolicy::Inverter,
                1 => DecoratorPolicy::ForceSuccess,
                2 => DecoratorPolicy::RepeatUntilFailure,
                _ => DecoratorPolicy::Retry(self.rng.random_range(0..3)),
            };
            let id = self.id("d");
            let child = self.node(depth + 1);
            return NodeSpec::new(id, NodeKind::Decorator(policy), vec![child]);
        }
        let count = self.rng.random_range(1..=4);
        let children: Vec<NodeSpec> = (0..count).map(|_| self.node(depth + 1)).collect();
        let threshold = if self.rng.random_bool(0.3) {
            Threshold::All
        } else {
            Threshold::Count(self.rng.random_range(1..=count))
        };
        let kind = match self.rng.random_range(0..6) {
            0 => NodeKind::Sequence,
            1 => NodeKind::Fallback,
            2 => NodeKind::Parallel(threshold),
            3 => NodeKind::SotSequence,
            4 => NodeKind::SotFallback,
            _ => NodeKind::SotParallel(threshold),
        };
        let id = self.id("k");
        NodeSpec::new(id, kind, children)
    }
}

fn collect_specs<'a>(node: &'a NodeSpec, out: &mut Vec<&'a NodeSpec>) {
    out.push(node);
    for c in &node.children {
        collect_specs(c, out);
    }
}

pub fn random_trees_match_reference_interpreter() {
    let mut rng = seeded(2024);
    let mut mismatches = Vec::new();
    let mut ticks_checked = 0;
    for trial in 0..1000 {
        let mut gen = Gen { rng: &mut rng, next: 0, conditions: vec![], tasks: vec![] };
        let root = gen.node(0);
        let (conditions, tasks) = (gen.conditions, gen.tasks);
        let mut all = Vec::new();
        collect_specs(&root, &mut all);

        let mut tree = BehaviorTree::new(root.clone()).unwrap();
        let mut stack = TaskStack::new();
        let mut reference = RefState::default();
        let mut script = Script::default();
        for t in &tasks {
            if t.starts_with('b') {
                script.blocking.insert(t.clone());
            }
        }
        let mut flags = BTreeMap::new();

        for k in 0..12 {
            // perturb the world between ticks
            for c in &conditions {
                if k == 0 || rng.random_bool(0.3) {
                    flags.insert(c.clone(), rng.random_bool(0.5));
                }
            }
            for t in &tasks {
                if k == 0 || rng.random_bool(0.3) {
                    script.errors.insert(t.clone(), if rng.random_bool(0.5) { 0.0 } else { 1.0 });
                    if rng.random_bool(0.1) {
                        script.broken.insert(t.clone());
                    } else {
                        script.broken.remove(t);
                    }
                }
            }
            let now = k as f64 * 0.25;
            let mut bb = Blackboard::new();
            for (key, v) in &flags {
                bb.set_bool(key.clone(), *v);
            }

            let mut ctx = TickContext { stack: &mut stack, blackboard: &bb, env: &script, now };
            let got = tree.tick(&mut ctx).unwrap();
            reference.statuses.clear();
            let want = ref_tick(&root, &mut reference, &RefWorld { blackboard: &flags, script: &script, now });
            ticks_checked += 1;

            let mut differs = got != want;
            for spec in &all {
                differs |= tree.last_status(&spec.id) != reference.statuses.get(&spec.id).copied();
            }
            let ours: BTreeMap<String, f64> =
                stack.snapshot().tasks.iter().map(|t| (t.spec.id.clone(), t.t_set)).collect();
            differs |= ours != reference.stack;
            if differs {
                mismatches.push(format!("trial {trial} tick {k}: {got:?} vs {want:?}"));
                break;
            }
        }
    }
    assert!(mismatches.is_empty(), "{} mismatches, first: {}", mismatches.len(), mismatches[0]);
    assert!(ticks_checked >= 12_000);
}

pub fn random_runs_uphold_node_invariants() {
    let mut rng = seeded(77);
    for _ in 0..300 {
        let mut gen = Gen { rng: &mut rng, next: 0, conditions: vec![], tasks: vec![] };
        let root = gen.node(0);
        let (conditions, tasks) = (gen.conditions, gen.tasks);
        let mut tree = BehaviorTree::new(root).unwrap();
        let mut script = Script::default();
        for t in &tasks {
            if t.starts_with('b') {
                script.blocking.insert(t.clone());
            }
        }
        let mut stack = TaskStack::new();
        for k in 0..10 {
            let mut bb = Blackboard::new();
            for c in &conditions {
                bb.set_bool(c.clone(), rng.random_bool(0.5));
            }
            for t in &tasks {
                script.errors.insert(t.clone(), if rng.random_bool(0.4) { 0.0 } else { 1.0 });
            }
            let bb_before = bb.clone();
            let mut ctx = TickContext { stack: &mut stack, blackboard: &bb, env: &script, now: k as f64 * 0.3 };
            tree.tick(&mut ctx).unwrap();
            assert_eq!(bb, bb_before);

            let statuses: Vec<(String, Option<TickStatus>)> =
                tree.last_statuses().map(|(id, s)| (id.to_string(), s)).collect();
            for (id, s) in &statuses {
                match tree.kind(id).unwrap() {
                    // non-blocking actions never block
                    NodeKind::NonBlockingAction { .. } => assert_ne!(*s, Some(Running)),
                    NodeKind::Condition { .. } => assert_ne!(*s, Some(Running)),
                    _ => {}
                }
            }
            // removal completeness after finishing or being halted
            let mut finished: Vec<String> = statuses
                .iter()
                .filter(|(id, s)| tree.kind(id).unwrap().is_sot() && matches!(s, Some(Success) | Some(Failure)))
                .map(|(id, _)| id.clone())
                .collect();
            for e in tree.take_events() {
                if let BtEvent::Halted { node } = e {
                    if tree.kind(&node).unwrap().is_sot() {
                        finished.push(node);
                    }
                }
            }
            for node in finished {
                // a halted node can be re-ticked later in the same tick only
                // through a different path, which the tree shape rules out
                if tree.last_status(&node) == Some(Running) {
                    continue;
                }
                for task in tree.direct_action_tasks(&node).unwrap() {
                    assert!(!stack.contains(&task), "`{node}` left `{task}` in the stack");
                }
            }
        }
    }
}

pub fn conditions_do_not_touch_stack_or_blackboard() {
    let mut tree = BehaviorTree::new(NodeSpec::leaf("c", NodeKind::Condition { key: "k".into() })).unwrap();
    let mut bb = Blackboard::new();
    bb.set_bool("k", true);
    let mut stack = TaskStack::new();
    let script = Script::default();
    let before = (bb.clone(), stack.revision());
    let mut ctx = TickContext { stack: &mut stack, blackboard: &bb, env: &script, now: 0.0 };
    assert_eq!(tree.tick(&mut ctx).unwrap(), Success);
    assert_eq!((bb.clone(), stack.revision()), before);
}

pub fn blocking_reactivates_after_ancestor_removal() {
    // SoTSequence[blocking a]: success removes `a`; the next activation sets
    // it again with a fresh t_set.
    let mut script = Script::default();
    let leaf = scripted_leaf("a", Success, &mut script);
    let mut tree = BehaviorTree::new(NodeSpec::new("s", NodeKind::SotSequence, vec![leaf])).unwrap();
    let bb = Blackboard::new();
    let mut stack = TaskStack::new();
    let mut ctx = TickContext { stack: &mut stack, blackboard: &bb, env: &script, now: 0.0 };
    assert_eq!(tree.tick(&mut ctx).unwrap(), Success);
    assert!(stack.is_empty());
    let rev = stack.revision();
    script.errors.insert("a".into(), 1.0);
    let mut ctx = TickContext { stack: &mut stack, blackboard: &bb, env: &script, now: 5.0 };
    assert_eq!(tree.tick(&mut ctx).unwrap(), Running);
    assert_eq!(stack.get("a").unwrap().t_set, 5.0);
    assert!(stack.revision() > rev);
}
