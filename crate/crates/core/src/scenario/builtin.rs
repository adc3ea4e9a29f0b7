//! Scenarios and models shipped with the crate.

use super::{Scenario, ScenarioError};
use crate::kinematics::ManipulatorModel;

/// `(name, file contents)` of every shipped scenario.
pub const SCENARIOS: &[(&str, &str)] = &[
    ("reach_and_follow", include_str!("../../scenarios/reach_and_follow.toml")),
    ("unreachable", include_str!("../../scenarios/unreachable.toml")),
    ("local_disturbance", include_str!("../../scenarios/local_disturbance.toml")),
    ("global_disturbance", include_str!("../../scenarios/global_disturbance.toml")),
    ("transport", include_str!("../../scenarios/transport.toml")),
];

pub fn model(name: &str) -> Option<ManipulatorModel> {
    match name {
        "panda" => Some(ManipulatorModel::panda()),
        _ => None,
    }
}

pub fn names() -> impl Iterator<Item = &'static str> {
    SCENARIOS.iter().map(|(n, _)| *n)
}

pub fn source(name: &str) -> Option<&'static str> {
    SCENARIOS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn scenario(name: &str) -> Option<Result<Scenario, ScenarioError>> {
    source(name).map(|text| Scenario::from_toml(text, None))
}
