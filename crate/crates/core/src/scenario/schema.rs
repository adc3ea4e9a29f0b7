//! Scenario file schema (TOML). Every table rejects unknown keys.
//! See `docs/scenario_format.md`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub model: ModelSection,
    #[serde(default)]
    pub world: WorldSection,
    pub tree: TreeSection,
    pub tasks: Vec<TaskEntry>,
    #[serde(default)]
    pub disturbances: Vec<DisturbanceEntry>,
    #[serde(default)]
    pub run: RunSection,
}

/// Exactly one of `builtin` and `file`; `file` is relative to the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub builtin: Option<String>,
    pub file: Option<String>,
    pub q0: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSection {
    #[serde(default)]
    pub planes: Vec<PlaneEntry>,
    #[serde(default)]
    pub points: BTreeMap<String, [f64; 3]>,
    #[serde(default)]
    pub lines: Vec<LineEntry>,
    #[serde(default)]
    pub objects: Vec<ObjectEntry>,
    #[serde(default)]
    pub boxes: BTreeMap<String, BoxEntry>,
    #[serde(default)]
    pub blackboard: BTreeMap<String, SeedValue>,
    #[serde(default)]
    pub monitors: Vec<MonitorEntry>,
}

/// Half-space `normal · x ≥ offset + margin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneEntry {
    pub label: String,
    pub normal: [f64; 3],
    pub offset: f64,
    #[serde(default)]
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineEntry {
    pub label: String,
    pub origin: [f64; 3],
    pub direction: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectEntry {
    pub label: String,
    pub position: [f64; 3],
    /// Node whose Success attaches the object, if the end effector is
    /// within `grasp_distance`.
    pub attach_on: Option<String>,
    /// Node whose Success detaches the object.
    pub detach_on: Option<String>,
    #[serde(default = "default_grasp_distance")]
    pub grasp_distance: f64,
}

fn default_grasp_distance() -> f64 {
    0.005
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxEntry {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedValue {
    Bool(bool),
    Number(f64),
    Vector([f64; 3]),
}

/// Writes `key` before every tick. Exactly one predicate field is set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorEntry {
    pub key: String,
    /// Once true, stays true until a disturbance clears it.
    #[serde(default)]
    pub latch: bool,
    pub node_succeeded: Option<String>,
    pub object_held: Option<String>,
    pub object_near: Option<ObjectNear>,
    pub object_on_line: Option<ObjectOnLine>,
    pub ee_near: Option<EeNear>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectNear {
    pub object: String,
    pub target: String,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectOnLine {
    pub object: String,
    pub line: String,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EeNear {
    pub target: String,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSection {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GainEntry {
    Scalar(f64),
    Diagonal(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEntry {
    pub id: String,
    pub kind: String,
    pub priority: u32,
    pub gain: Option<GainEntry>,
    /// World label the task refers to: a point or object for reaches, a
    /// plane or a line otherwise.
    pub target: Option<String>,
    /// Goal orientation of a pose reach.
    pub rpy: Option<[f64; 3]>,
    pub error_threshold: Option<f64>,
    pub time_threshold: Option<f64>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub position_gain: Option<f64>,
}

/// Fires once, at time `at` or on the first iteration where the
/// blackboard flag `when` reads true.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceEntry {
    pub at: Option<f64>,
    pub when: Option<String>,
    pub actions: Vec<ActionEntry>,
}

/// Targets come from `to` or a uniform draw inside world box `within`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum ActionEntry {
    MoveGoal { label: String, to: Option<[f64; 3]>, within: Option<String> },
    MoveObject { label: String, to: Option<[f64; 3]>, within: Option<String> },
    SetFlag { key: String, value: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_dt")]
    pub control_dt: f64,
    #[serde(default = "default_ratio")]
    pub ticks_ratio: u32,
    #[serde(default = "default_max_time")]
    pub max_time: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub randomize: Vec<RandomizeEntry>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            control_dt: default_dt(),
            ticks_ratio: default_ratio(),
            max_time: default_max_time(),
            seed: 0,
            randomize: Vec::new(),
        }
    }
}

fn default_dt() -> f64 {
    crate::sot::DEFAULT_CONTROL_DT
}

fn default_ratio() -> u32 {
    20
}

fn default_max_time() -> f64 {
    30.0
}

/// Before a trial starts, moves `label` to a uniform draw inside
/// `boxes[trial % boxes.len()]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomizeEntry {
    pub label: String,
    pub boxes: Vec<String>,
}
