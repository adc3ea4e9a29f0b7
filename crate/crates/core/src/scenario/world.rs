use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::Rng;

use super::{Predicate, World};
use crate::tasks::{Line, Plane};

/// Axis-aligned box, `min ≤ max` componentwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vector3<f64> {
        Vector3::from_fn(|i, _| {
            let (lo, hi) = (self.min[i], self.max[i]);
            if lo == hi {
                lo
            } else {
                rng.random_range(lo..=hi)
            }
        })
    }

    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        (0..3).all(|i| self.min[i] <= x[i] && x[i] <= self.max[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectState {
    pub position: Vector3<f64>,
    /// Object position minus end-effector position, while held.
    pub grip: Option<Vector3<f64>>,
}

/// The mutable part of a world during a run: goal points and objects move,
/// planes and lines do not.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub points: BTreeMap<String, Vector3<f64>>,
    pub objects: BTreeMap<String, ObjectState>,
    planes: Vec<(String, Plane)>,
    lines: BTreeMap<String, Line>,
}

impl WorldState {
    pub fn new(world: &World) -> Self {
        Self {
            points: world.points.clone(),
            objects: world
                .objects
                .iter()
                .map(|(k, o)| (k.clone(), ObjectState { position: o.position, grip: None }))
                .collect(),
            planes: world.planes.clone(),
            lines: world.lines.clone(),
        }
    }

    /// Current position of a point or object.
    pub fn position_of(&self, label: &str) -> Result<Vector3<f64>, String> {
        self.points
            .get(label)
            .copied()
            .or_else(|| self.objects.get(label).map(|o| o.position))
            .ok_or_else(|| format!("`{label}` is not a point or object"))
    }

    pub fn plane(&self, label: &str) -> Result<Plane, String> {
        self.planes
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, p)| *p)
            .ok_or_else(|| format!("`{label}` is not a plane"))
    }

    pub fn line(&self, label: &str) -> Result<Line, String> {
        self.lines.get(label).copied().ok_or_else(|| format!("`{label}` is not a line"))
    }

    pub fn planes(&self) -> &[(String, Plane)] {
        &self.planes
    }

    pub fn lines(&self) -> &BTreeMap<String, Line> {
        &self.lines
    }

    /// Moves a point or object; a moved object is released.
    pub fn place(&mut self, label: &str, at: Vector3<f64>) {
        if let Some(p) = self.points.get_mut(label) {
            *p = at;
        } else if let Some(o) = self.objects.get_mut(label) {
            o.position = at;
            o.grip = None;
        }
    }

    pub fn attach(&mut self, label: &str, ee: &Vector3<f64>) {
        if let Some(o) = self.objects.get_mut(label) {
            o.grip = Some(o.position - ee);
        }
    }

    pub fn detach(&mut self, label: &str) {
        if let Some(o) = self.objects.get_mut(label) {
            o.grip = None;
        }
    }

    pub fn is_held(&self, label: &str) -> bool {
        self.objects.get(label).is_some_and(|o| o.grip.is_some())
    }

    /// Carries held objects along with the end effector.
    pub fn follow(&mut self, ee: &Vector3<f64>) {
        for o in self.objects.values_mut() {
            if let Some(g) = o.grip {
                o.position = ee + g;
            }
        }
    }

    /// Minimum physical clearance of `x` over all planes, `None` without planes.
    pub fn min_clearance(&self, x: &Vector3<f64>) -> Option<f64> {
        self.planes.iter().map(|(_, p)| p.clearance(x)).reduce(f64::min)
    }

    /// `last_success(node)` reports whether the node returned Success on the
    /// previous tick.
    pub fn holds(&self, predicate: &Predicate, ee: &Vector3<f64>, last_success: impl Fn(&str) -> bool) -> bool {
        let near = |a: Vector3<f64>, b: Option<Vector3<f64>>, tol: f64| b.is_some_and(|b| (a - b).norm() <= tol);
        match predicate {
            Predicate::NodeSucceeded(node) => last_success(node),
            Predicate::ObjectHeld(object) => self.is_held(object),
            Predicate::ObjectNear { object, target, tolerance } => match self.position_of(object) {
                Ok(x) => near(x, self.position_of(target).ok(), *tolerance),
                Err(_) => false,
            },
            Predicate::ObjectOnLine { object, line, tolerance } => {
                match (self.position_of(object), self.lines.get(line)) {
                    (Ok(x), Some(l)) => l.deviation(&x).norm() <= *tolerance,
                    _ => false,
                }
            }
            Predicate::EeNear { target, tolerance } => near(*ee, self.position_of(target).ok(), *tolerance),
        }
    }
}
