//! Live task stack and the control step that turns it into joint motion.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::hqp::{self, transcribe_bounds, CascadeProblem, HqpError, LevelConstraint, RawRows};
use crate::kinematics::{JointState, KinematicsError, ManipulatorModel};
use crate::tasks::{self, TaskError, TaskKind, TaskSpec};

pub const DEFAULT_CONTROL_DT: f64 = 1e-3;

/// Relative singular-value threshold below which a task Jacobian counts as
/// rank deficient.
const RANK_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SotError {
    #[error("control step needs dt > 0, got {0}")]
    InvalidStep(f64),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Solver(#[from] HqpError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveTask {
    pub spec: TaskSpec,
    pub t_set: f64,
    order: u64,
}

impl ActiveTask {
    /// `t_x = now − t_set`, never negative.
    pub fn execution_time(&self, now: f64) -> f64 {
        (now - self.t_set).max(0.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskStack {
    entries: HashMap<String, ActiveTask>,
    next_order: u64,
    revision: u64,
}

impl TaskStack {
    pub fn new() -> Self {
        Self::default()
    }

    /// Upsert by id. A re-set keeps the original `t_set` and insertion order.
    pub fn set_task(&mut self, spec: TaskSpec, now: f64) -> Result<(), TaskError> {
        spec.validate()?;
        match self.entries.get_mut(&spec.id) {
            Some(active) => active.spec = spec,
            None => {
                let order = self.next_order;
                self.next_order += 1;
                self.entries.insert(spec.id.clone(), ActiveTask { spec, t_set: now, order });
            }
        }
        self.revision += 1;
        Ok(())
    }

    /// Removes every listed id; bumps the revision only if something was removed.
    pub fn remove_tasks<'a, I>(&mut self, ids: I) -> usize
    where
        I: IntoIterator<Item = &'a str>,
    {
        let removed = ids.into_iter().filter(|id| self.entries.remove(*id).is_some()).count();
        if removed > 0 {
            self.revision += 1;
        }
        removed
    }

    pub fn get(&self, id: &str) -> Option<&ActiveTask> {
        self.entries.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn snapshot(&self) -> Snapshot {
        let mut tasks: Vec<ActiveTask> = self.entries.values().cloned().collect();
        tasks.sort_by_key(|t| (t.spec.priority, t.order));
        Snapshot { revision: self.revision, tasks }
    }
}

/// Point-in-time copy of a stack, ordered by (priority, insertion).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Snapshot {
    pub revision: u64,
    pub tasks: Vec<ActiveTask>,
}

impl Snapshot {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.tasks.iter().map(|t| t.spec.id.as_str())
    }
}

/// A stack shared between one writer (the tree) and one reader (the control
/// loop). Writers mutate a private copy and publish it in one `commit`.
#[derive(Debug, Clone, Default)]
pub struct SharedTaskStack {
    inner: Arc<Mutex<TaskStack>>,
}

impl SharedTaskStack {
    pub fn new(stack: TaskStack) -> Self {
        Self { inner: Arc::new(Mutex::new(stack)) }
    }

    fn lock(&self) -> MutexGuard<'_, TaskStack> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn working_copy(&self) -> TaskStack {
        self.lock().clone()
    }

    pub fn commit(&self, batch: TaskStack) {
        *self.lock() = batch;
    }

    pub fn snapshot(&self) -> Snapshot {
        self.lock().snapshot()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskReading {
    pub id: String,
    pub priority: u32,
    pub error_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub state: JointState,
    /// Errors at the configuration the step started from.
    pub readings: Vec<TaskReading>,
    /// `(priority, ‖w_p‖)` per cascade level.
    pub level_slacks: Vec<(u32, f64)>,
    pub revision: u64,
    pub singular: bool,
}

/// Solves the cascade for `snap` at `state` and integrates one explicit Euler
/// step, clamping to the joint limits.
pub fn control_step(
    model: &ManipulatorModel,
    state: &JointState,
    snap: &Snapshot,
    dt: f64,
) -> Result<StepReport, SotError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(SotError::InvalidStep(dt));
    }
    model.check_dim(&state.q)?;
    let n = model.dof();

    let mut readings = Vec::with_capacity(snap.tasks.len());
    let mut groups: Vec<(u32, Vec<RawRows>)> = Vec::new();
    let mut tracked: Vec<(DMatrix<f64>, usize)> = Vec::new();
    for active in &snap.tasks {
        let spec = &active.spec;
        let ev = tasks::evaluate(spec, model, &state.q)?;
        readings.push(TaskReading { id: spec.id.clone(), priority: spec.priority, error_norm: ev.error_norm });
        let rows = tasks::to_constraint_rows(&ev, &spec.gain)?;
        if rows.jacobian.nrows() == 0 {
            continue;
        }
        if ev.velocity_bounds.is_none() {
            tracked.push((rows.jacobian.clone(), generic_rank(model, spec.kind())));
        }
        match groups.last_mut() {
            Some((p, g)) if *p == spec.priority => g.push(rows),
            _ => groups.push((spec.priority, vec![rows])),
        }
    }

    let mut levels = Vec::with_capacity(groups.len());
    for (priority, rows) in &groups {
        let (a, b) = transcribe_bounds(rows)?;
        levels.push(LevelConstraint::new(*priority, a, b)?);
    }

    let (qdot, level_slacks) = if levels.is_empty() {
        (DVector::zeros(n), Vec::new())
    } else {
        let problem = CascadeProblem::new(n, levels)?;
        let sol = hqp::solve_cascade(&problem, hqp::DEFAULT_REGULARIZATION)?;
        let slacks = groups.iter().zip(&sol.slacks).map(|((p, _), w)| (*p, w.norm())).collect();
        (sol.qdot, slacks)
    };

    let singular = rank_deficient(&tracked);
    if singular {
        log::warn!("rank-deficient task Jacobian at t = {:.6}", state.t);
    }

    let mut q = &state.q + &qdot * dt;
    model.clamp(&mut q);
    Ok(StepReport {
        state: JointState { q, qdot, t: state.t + dt },
        readings,
        level_slacks,
        revision: snap.revision,
        singular,
    })
}

/// A block is deficient when its numeric rank falls below the generic rank
/// of its task kind. Dependence between different tasks is a conflict that
/// the priorities resolve, not a singularity.
fn rank_deficient(blocks: &[(DMatrix<f64>, usize)]) -> bool {
    blocks.iter().any(|(b, generic)| numeric_rank(b) < *generic)
}

/// Rank a task's Jacobian has away from singular configurations.
fn generic_rank(model: &ManipulatorModel, kind: TaskKind) -> usize {
    let (pos, geo) = model.generic_ranks();
    match kind {
        TaskKind::PointReach => pos,
        TaskKind::PlaneAvoid => pos.min(1),
        TaskKind::LineFollow => pos.saturating_sub(1).min(2),
        TaskKind::PoseReach => geo,
        TaskKind::JointVelocityBox => 0,
    }
}

fn numeric_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.singular_values();
    let max = sv.max();
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > RANK_TOL * max).count()
}
