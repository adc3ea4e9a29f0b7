use std::collections::BTreeMap;
use std::fmt;

use nalgebra::Vector3;

use super::BtError;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Bool(bool),
    Number(f64),
    Vector(Vector3<f64>),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Number(x) => write!(f, "{x}"),
            Value::Vector(v) => write!(f, "[{}, {}, {}]", v.x, v.y, v.z),
        }
    }
}

/// Shared key-value store. Reading an unset key is an error.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Blackboard {
    entries: BTreeMap<String, Value>,
}

impl Blackboard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: Value) {
        self.entries.insert(key.into(), value);
    }

    pub fn set_bool(&mut self, key: impl Into<String>, value: bool) {
        self.set(key, Value::Bool(value));
    }

    pub fn get(&self, key: &str) -> Result<&Value, BtError> {
        self.entries.get(key).ok_or_else(|| BtError::UnsetBlackboardKey(key.to_string()))
    }

    pub fn get_bool(&self, key: &str) -> Result<bool, BtError> {
        match self.get(key)? {
            Value::Bool(b) => Ok(*b),
            other => Err(BtError::TypeMismatch { key: key.to_string(), expected: "bool", found: other.to_string() }),
        }
    }

    pub fn get_number(&self, key: &str) -> Result<f64, BtError> {
        match self.get(key)? {
            Value::Number(x) => Ok(*x),
            other => Err(BtError::TypeMismatch { key: key.to_string(), expected: "number", found: other.to_string() }),
        }
    }

    pub fn get_vector(&self, key: &str) -> Result<Vector3<f64>, BtError> {
        match self.get(key)? {
            Value::Vector(v) => Ok(*v),
            other => Err(BtError::TypeMismatch { key: key.to_string(), expected: "vector", found: other.to_string() }),
        }
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }
}
