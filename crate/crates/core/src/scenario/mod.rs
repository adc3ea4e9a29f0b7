//! Deterministic co-simulation of a behavior tree driving the control loop,
//! with scripted disturbances, traces and batch statistics.

mod batch;
pub mod builtin;
mod export;
mod run;
pub mod schema;
mod world;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use nalgebra::{DVector, Unit, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::bt::{parse_tree, ActionEnv, BehaviorTree, BtError, NodeKind, NodeSpec, Value};
use crate::kinematics::{KinematicsError, ManipulatorModel, Pose};
use crate::tasks::{BlockingParams, Gain, Line, Plane, TaskError, TaskGeometry, TaskKind, TaskSpec, VelocityBox};

pub use batch::{run_batch, run_batch_with, BatchReport, PositionRow};
pub use export::{control_header, write_control_csv, write_plot_csv, write_summary, write_tick_csv, ExportFormat};
pub use run::{run, run_concurrent, ControlRow, Outcome, RunResult, RunSummary, TickRow, Trace};
pub use schema::ScenarioDocument;
pub use world::{Aabb, WorldState};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read `{path}`: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("scenario file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("model: {0}")]
    Model(#[from] KinematicsError),
    #[error("tree: {0}")]
    Tree(#[from] BtError),
    #[error(transparent)]
    Task(#[from] TaskError),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

/// Control period and control steps per tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub control_dt: f64,
    pub ticks_ratio: u32,
}

impl Rates {
    pub fn new(control_dt: f64, ticks_ratio: u32) -> Result<Self, ScenarioError> {
        if !(control_dt > 0.0) || !control_dt.is_finite() {
            return Err(invalid(format!("control_dt must be positive, got {control_dt}")));
        }
        if ticks_ratio == 0 {
            return Err(invalid("ticks_ratio must be at least 1"));
        }
        Ok(Self { control_dt, ticks_ratio })
    }

    /// Parses `dt,R`.
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let bad = || invalid(format!("rates must look like `0.001,20`, got `{text}`"));
        let (dt, r) = text.split_once(',').ok_or_else(bad)?;
        Self::new(dt.trim().parse().map_err(|_| bad())?, r.trim().parse().map_err(|_| bad())?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    NodeSucceeded(String),
    ObjectHeld(String),
    ObjectNear { object: String, target: String, tolerance: f64 },
    ObjectOnLine { object: String, line: String, tolerance: f64 },
    EeNear { target: String, tolerance: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Monitor {
    pub key: String,
    pub latch: bool,
    pub predicate: Predicate,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Placement {
    Fixed(Vector3<f64>),
    Within(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DisturbanceAction {
    MoveGoal { label: String, to: Placement },
    MoveObject { label: String, to: Placement },
    SetFlag { key: String, value: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Trigger {
    At(f64),
    Flag(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Disturbance {
    pub trigger: Trigger,
    pub actions: Vec<DisturbanceAction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectDef {
    pub position: Vector3<f64>,
    pub attach_on: Option<String>,
    pub detach_on: Option<String>,
    pub grasp_distance: f64,
}

/// Static scene description. Labels are unique across every category.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct World {
    pub planes: Vec<(String, Plane)>,
    pub points: BTreeMap<String, Vector3<f64>>,
    pub lines: BTreeMap<String, Line>,
    pub objects: BTreeMap<String, ObjectDef>,
    pub boxes: BTreeMap<String, Aabb>,
    pub blackboard: Vec<(String, Value)>,
    pub monitors: Vec<Monitor>,
}

/// A task whose geometry is looked up in the world when the tree sets it.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskTemplate {
    pub id: String,
    pub kind: TaskKind,
    pub priority: u32,
    pub gain: Gain,
    pub target: Option<String>,
    pub orientation: UnitQuaternion<f64>,
    pub blocking: Option<BlockingParams>,
    pub velocity_box: Option<VelocityBox>,
}

impl TaskTemplate {
    pub fn resolve(&self, world: &WorldState) -> Result<TaskSpec, String> {
        let target = || self.target.as_deref().ok_or_else(|| format!("task `{}` has no target", self.id));
        let geometry = match self.kind {
            TaskKind::PointReach => TaskGeometry::Point { goal: world.position_of(target()?)? },
            TaskKind::PoseReach => TaskGeometry::Pose {
                goal: Pose { position: world.position_of(target()?)?, orientation: self.orientation },
            },
            TaskKind::PlaneAvoid => TaskGeometry::Plane(world.plane(target()?)?),
            TaskKind::LineFollow => TaskGeometry::Line(world.line(target()?)?),
            TaskKind::JointVelocityBox => TaskGeometry::VelocityBox(
                self.velocity_box.clone().ok_or_else(|| format!("task `{}` has no bounds", self.id))?,
            ),
        };
        Ok(TaskSpec {
            id: self.id.clone(),
            geometry,
            priority: self.priority,
            gain: self.gain.clone(),
            blocking: self.blocking,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomizeRule {
    pub label: String,
    pub boxes: Vec<String>,
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub model: ManipulatorModel,
    pub q0: DVector<f64>,
    pub world: World,
    pub tree: NodeSpec,
    pub tasks: Vec<TaskTemplate>,
    pub disturbances: Vec<Disturbance>,
    pub rates: Rates,
    pub max_time: f64,
    pub seed: u64,
    pub randomize: Vec<RandomizeRule>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text, path.parent())
    }

    /// `base` resolves relative model paths.
    pub fn from_toml(text: &str, base: Option<&Path>) -> Result<Self, ScenarioError> {
        let doc: ScenarioDocument = toml::from_str(text)?;
        Self::from_document(doc, base)
    }

    pub fn from_document(doc: ScenarioDocument, base: Option<&Path>) -> Result<Self, ScenarioError> {
        let model = load_model(&doc.model, base)?;
        if doc.model.q0.len() != model.dof() {
            return Err(invalid(format!(
                "q0 has {} entries, model `{}` has {} joints",
                doc.model.q0.len(),
                model.name(),
                model.dof()
            )));
        }
        let q0 = DVector::from_vec(doc.model.q0.clone());
        if q0.iter().zip(model.joints()).any(|(v, j)| !(j.lower <= *v && *v <= j.upper)) {
            return Err(invalid("q0 violates the joint limits"));
        }

        let world = build_world(&doc.world)?;
        let tasks = doc.tasks.iter().map(|t| build_task(t, &world, &model)).collect::<Result<Vec<_>, _>>()?;
        let mut ids = BTreeSet::new();
        for t in &tasks {
            if !ids.insert(t.id.as_str()) {
                return Err(invalid(format!("duplicate task id `{}`", t.id)));
            }
            if let Some(label) = world.labels().find(|l| *l == t.id) {
                return Err(invalid(format!("task id `{label}` collides with a world label")));
            }
        }

        let tree = parse_tree(&doc.tree.text)?;
        let state = WorldState::new(&world);
        let env = TemplateEnv { tasks: &tasks, world: &state };
        tree.check_tasks(&env)?;
        for t in &tasks {
            env.resolve_task(&t.id).map_err(invalid)?.validate()?;
        }
        check_node_references(&tree, &world)?;

        let disturbances = doc
            .disturbances
            .iter()
            .map(|d| build_disturbance(d, &world))
            .collect::<Result<Vec<_>, _>>()?;
        let rates = Rates::new(doc.run.control_dt, doc.run.ticks_ratio)?;
        if !(doc.run.max_time > 0.0) || !doc.run.max_time.is_finite() {
            return Err(invalid("max_time must be positive"));
        }
        let mut randomize = Vec::new();
        for r in &doc.run.randomize {
            if !world.points.contains_key(&r.label) && !world.objects.contains_key(&r.label) {
                return Err(invalid(format!("randomize: `{}` is not a point or object", r.label)));
            }
            if r.boxes.is_empty() {
                return Err(invalid(format!("randomize `{}` lists no boxes", r.label)));
            }
            for b in &r.boxes {
                world.aabb(b)?;
            }
            randomize.push(RandomizeRule { label: r.label.clone(), boxes: r.boxes.clone() });
        }

        Ok(Self {
            name: doc.name,
            description: doc.description,
            model,
            q0,
            world,
            tree: tree.to_spec(),
            tasks,
            disturbances,
            rates,
            max_time: doc.run.max_time,
            seed: doc.run.seed,
            randomize,
        })
    }

    pub fn task(&self, id: &str) -> Option<&TaskTemplate> {
        self.tasks.iter().find(|t| t.id == id)
    }

    /// Number of randomized start positions, one when nothing is randomized.
    pub fn positions(&self) -> usize {
        self.randomize.first().map_or(1, |r| r.boxes.len())
    }
}

fn load_model(section: &schema::ModelSection, base: Option<&Path>) -> Result<ManipulatorModel, ScenarioError> {
    match (&section.builtin, &section.file) {
        (Some(name), None) => builtin::model(name).ok_or_else(|| invalid(format!("unknown builtin model `{name}`"))),
        (None, Some(file)) => {
            let path = base.map_or_else(|| PathBuf::from(file), |b| b.join(file));
            let text = std::fs::read_to_string(&path).map_err(|source| ScenarioError::Io { path, source })?;
            Ok(ManipulatorModel::from_toml(&text)?)
        }
        _ => Err(invalid("[model] needs exactly one of `builtin` and `file`")),
    }
}

fn vec3(label: &str, v: [f64; 3]) -> Result<Vector3<f64>, ScenarioError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(Vector3::from(v))
    } else {
        Err(invalid(format!("`{label}` has a non-finite coordinate")))
    }
}

/// Directions given in a file must be unit length to 1e-6; they are then
/// renormalized exactly.
fn unit(label: &str, v: [f64; 3]) -> Result<Unit<Vector3<f64>>, ScenarioError> {
    let v = vec3(label, v)?;
    if (v.norm() - 1.0).abs() > 1e-6 {
        return Err(invalid(format!("`{label}`: direction must be unit length, norm is {}", v.norm())));
    }
    Ok(Unit::new_normalize(v))
}

fn label_ok(label: &str) -> Result<(), ScenarioError> {
    if !label.is_empty() && label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        Ok(())
    } else {
        Err(invalid(format!("label `{label}` must be nonempty and use only [A-Za-z0-9_]")))
    }
}

fn build_world(w: &schema::WorldSection) -> Result<World, ScenarioError> {
    let mut world = World::default();
    let mut seen = BTreeSet::new();
    let mut claim = |label: &str| -> Result<(), ScenarioError> {
        label_ok(label)?;
        if seen.insert(label.to_string()) {
            Ok(())
        } else {
            Err(invalid(format!("duplicate world label `{label}`")))
        }
    };
    for p in &w.planes {
        claim(&p.label)?;
        if !(p.margin >= 0.0) || !p.offset.is_finite() {
            return Err(invalid(format!("plane `{}`: offset must be finite and margin nonnegative", p.label)));
        }
        let plane = Plane { normal: unit(&p.label, p.normal)?, offset: p.offset, margin: p.margin };
        world.planes.push((p.label.clone(), plane));
    }
    for (label, v) in &w.points {
        claim(label)?;
        world.points.insert(label.clone(), vec3(label, *v)?);
    }
    for l in &w.lines {
        claim(&l.label)?;
        let line = Line { origin: vec3(&l.label, l.origin)?, direction: unit(&l.label, l.direction)? };
        world.lines.insert(l.label.clone(), line);
    }
    for o in &w.objects {
        claim(&o.label)?;
        if !(o.grasp_distance > 0.0) {
            return Err(invalid(format!("object `{}`: grasp_distance must be positive", o.label)));
        }
        world.objects.insert(
            o.label.clone(),
            ObjectDef {
                position: vec3(&o.label, o.position)?,
                attach_on: o.attach_on.clone(),
                detach_on: o.detach_on.clone(),
                grasp_distance: o.grasp_distance,
            },
        );
    }
    for (label, b) in &w.boxes {
        claim(label)?;
        let (min, max) = (vec3(label, b.min)?, vec3(label, b.max)?);
        if min.iter().zip(max.iter()).any(|(a, b)| a > b) {
            return Err(invalid(format!("box `{label}`: min exceeds max")));
        }
        world.boxes.insert(label.clone(), Aabb { min, max });
    }
    for (key, seed) in &w.blackboard {
        let value = match *seed {
            schema::SeedValue::Bool(b) => Value::Bool(b),
            schema::SeedValue::Number(x) => Value::Number(x),
            schema::SeedValue::Vector(v) => Value::Vector(vec3(key, v)?),
        };
        world.blackboard.push((key.clone(), value));
    }
    for m in &w.monitors {
        world.monitors.push(build_monitor(m, &world)?);
    }
    Ok(world)
}

fn build_monitor(m: &schema::MonitorEntry, world: &World) -> Result<Monitor, ScenarioError> {
    let mut found = Vec::new();
    if let Some(node) = &m.node_succeeded {
        found.push(Predicate::NodeSucceeded(node.clone()));
    }
    if let Some(object) = &m.object_held {
        world.object(object)?;
        found.push(Predicate::ObjectHeld(object.clone()));
    }
    if let Some(p) = &m.object_near {
        world.object(&p.object)?;
        world.position_label(&p.target)?;
        found.push(Predicate::ObjectNear { object: p.object.clone(), target: p.target.clone(), tolerance: p.tolerance });
    }
    if let Some(p) = &m.object_on_line {
        world.object(&p.object)?;
        world.line(&p.line)?;
        found.push(Predicate::ObjectOnLine { object: p.object.clone(), line: p.line.clone(), tolerance: p.tolerance });
    }
    if let Some(p) = &m.ee_near {
        world.position_label(&p.target)?;
        found.push(Predicate::EeNear { target: p.target.clone(), tolerance: p.tolerance });
    }
    if found.len() != 1 {
        return Err(invalid(format!("monitor `{}` needs exactly one predicate, found {}", m.key, found.len())));
    }
    let predicate = found.remove(0);
    if let Predicate::ObjectNear { tolerance, .. }
    | Predicate::ObjectOnLine { tolerance, .. }
    | Predicate::EeNear { tolerance, .. } = predicate
    {
        if !(tolerance > 0.0) {
            return Err(invalid(format!("monitor `{}`: tolerance must be positive", m.key)));
        }
    }
    Ok(Monitor { key: m.key.clone(), latch: m.latch, predicate })
}

fn build_task(t: &schema::TaskEntry, world: &World, model: &ManipulatorModel) -> Result<TaskTemplate, ScenarioError> {
    label_ok(&t.id)?;
    let kind = TaskKind::parse(&t.kind)?;
    let ctx = |msg: &str| invalid(format!("task `{}`: {msg}", t.id));
    let gain = match &t.gain {
        None => Gain::default(),
        Some(schema::GainEntry::Scalar(k)) => Gain::Scalar(*k),
        Some(schema::GainEntry::Diagonal(ks)) => Gain::Diagonal(ks.clone()),
    };
    let blocking = match (t.error_threshold, t.time_threshold) {
        (None, None) => None,
        (Some(s), Some(f)) => Some(BlockingParams { error_threshold: s, time_threshold: f }),
        _ => return Err(ctx("set both error_threshold and time_threshold, or neither")),
    };
    let wants_target = !matches!(kind, TaskKind::JointVelocityBox);
    match (&t.target, wants_target) {
        (None, true) => return Err(ctx("needs a `target`")),
        (Some(_), false) => return Err(ctx("a velocity box takes no `target`")),
        _ => {}
    }
    if let Some(target) = &t.target {
        match kind {
            TaskKind::PointReach | TaskKind::PoseReach => world.position_label(target).map(|_| ()),
            TaskKind::PlaneAvoid => world.plane(target).map(|_| ()).map_err(invalid),
            TaskKind::LineFollow => world.line(target).map(|_| ()),
            TaskKind::JointVelocityBox => Ok(()),
        }?;
    }
    if t.rpy.is_some() && kind != TaskKind::PoseReach {
        return Err(ctx("`rpy` applies to pose reaches only"));
    }
    let [roll, pitch, yaw] = t.rpy.unwrap_or([0.0; 3]);
    let box_keys = t.lower.is_some() || t.upper.is_some() || t.position_gain.is_some();
    if box_keys && kind != TaskKind::JointVelocityBox {
        return Err(ctx("`lower`, `upper` and `position_gain` apply to velocity boxes only"));
    }
    let velocity_box = (kind == TaskKind::JointVelocityBox).then(|| {
        let limits = model.velocity_limits();
        let lower = t.lower.clone().map_or_else(|| -&limits, DVector::from_vec);
        let upper = t.upper.clone().map_or_else(|| limits.clone(), DVector::from_vec);
        VelocityBox { lower, upper, position_gain: t.position_gain }
    });
    if let Some(vb) = &velocity_box {
        if vb.lower.len() != model.dof() || vb.upper.len() != model.dof() {
            return Err(ctx("velocity bounds need one entry per joint"));
        }
        if vb.position_gain.is_some_and(|k| !(k > 0.0)) {
            return Err(ctx("position_gain must be positive"));
        }
    }
    Ok(TaskTemplate {
        id: t.id.clone(),
        kind,
        priority: t.priority,
        gain,
        target: t.target.clone(),
        orientation: UnitQuaternion::from_euler_angles(roll, pitch, yaw),
        blocking,
        velocity_box,
    })
}

fn build_disturbance(d: &schema::DisturbanceEntry, world: &World) -> Result<Disturbance, ScenarioError> {
    let trigger = match (d.at, &d.when) {
        (Some(t), None) if t >= 0.0 && t.is_finite() => Trigger::At(t),
        (None, Some(key)) => Trigger::Flag(key.clone()),
        _ => return Err(invalid("a disturbance needs exactly one of `at` (>= 0) and `when`")),
    };
    if d.actions.is_empty() {
        return Err(invalid("a disturbance needs at least one action"));
    }
    let placement = |to: &Option<[f64; 3]>, within: &Option<String>, label: &str| match (to, within) {
        (Some(v), None) => Ok(Placement::Fixed(vec3(label, *v)?)),
        (None, Some(b)) => world.aabb(b).map(|_| Placement::Within(b.clone())),
        _ => Err(invalid(format!("move of `{label}` needs exactly one of `to` and `within`"))),
    };
    let mut actions = Vec::new();
    for a in &d.actions {
        actions.push(match a {
            schema::ActionEntry::MoveGoal { label, to, within } => {
                if !world.points.contains_key(label) {
                    return Err(invalid(format!("move_goal: `{label}` is not a point")));
                }
                DisturbanceAction::MoveGoal { label: label.clone(), to: placement(to, within, label)? }
            }
            schema::ActionEntry::MoveObject { label, to, within } => {
                world.object(label)?;
                DisturbanceAction::MoveObject { label: label.clone(), to: placement(to, within, label)? }
            }
            schema::ActionEntry::SetFlag { key, value } => DisturbanceAction::SetFlag { key: key.clone(), value: *value },
        });
    }
    Ok(Disturbance { trigger, actions })
}

/// Node ids named by objects and monitors must exist in the tree.
fn check_node_references(tree: &BehaviorTree, world: &World) -> Result<(), ScenarioError> {
    let node = |id: &str, what: &str| {
        if tree.kind(id).is_some() {
            Ok(())
        } else {
            Err(invalid(format!("{what} names node `{id}`, which is not in the tree")))
        }
    };
    for (label, o) in &world.objects {
        for id in o.attach_on.iter().chain(&o.detach_on) {
            node(id, &format!("object `{label}`"))?;
        }
    }
    for m in &world.monitors {
        if let Predicate::NodeSucceeded(id) = &m.predicate {
            node(id, &format!("monitor `{}`", m.key))?;
        }
    }
    for id in tree.node_ids() {
        if let Some(NodeKind::Condition { key }) = tree.kind(id) {
            let seeded = world.blackboard.iter().any(|(k, _)| k == key);
            let monitored = world.monitors.iter().any(|m| &m.key == key);
            if !seeded && !monitored {
                return Err(invalid(format!("condition `{id}` reads `{key}`, which is neither seeded nor monitored")));
            }
        }
    }
    Ok(())
}

impl World {
    fn labels(&self) -> impl Iterator<Item = &str> {
        self.planes
            .iter()
            .map(|(l, _)| l.as_str())
            .chain(self.points.keys().map(String::as_str))
            .chain(self.lines.keys().map(String::as_str))
            .chain(self.objects.keys().map(String::as_str))
            .chain(self.boxes.keys().map(String::as_str))
    }

    pub fn plane(&self, label: &str) -> Result<Plane, String> {
        self.planes
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, p)| *p)
            .ok_or_else(|| format!("`{label}` is not a plane"))
    }

    fn line(&self, label: &str) -> Result<Line, ScenarioError> {
        self.lines.get(label).copied().ok_or_else(|| invalid(format!("`{label}` is not a line")))
    }

    fn object(&self, label: &str) -> Result<&ObjectDef, ScenarioError> {
        self.objects.get(label).ok_or_else(|| invalid(format!("`{label}` is not an object")))
    }

    fn aabb(&self, label: &str) -> Result<Aabb, ScenarioError> {
        self.boxes.get(label).copied().ok_or_else(|| invalid(format!("`{label}` is not a box")))
    }

    fn position_label(&self, label: &str) -> Result<(), ScenarioError> {
        if self.points.contains_key(label) || self.objects.contains_key(label) {
            Ok(())
        } else {
            Err(invalid(format!("`{label}` is not a point or object")))
        }
    }
}

/// Resolves tasks against a world state; the robot state is attached by the
/// runner.
pub(crate) struct TemplateEnv<'a> {
    pub tasks: &'a [TaskTemplate],
    pub world: &'a WorldState,
}

impl ActionEnv for TemplateEnv<'_> {
    fn resolve_task(&self, task_id: &str) -> Result<TaskSpec, String> {
        self.tasks
            .iter()
            .find(|t| t.id == task_id)
            .ok_or_else(|| format!("unknown task `{task_id}`"))?
            .resolve(self.world)
    }

    fn task_error(&self, _spec: &TaskSpec) -> Result<f64, String> {
        Err("no robot state attached".into())
    }
}
