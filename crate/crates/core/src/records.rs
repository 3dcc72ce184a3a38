//! JSON encodings shared by dataset records.

use serde_json::{Map, Value as Json};
use thiserror::Error;

use crate::canon;
use crate::model::{Assignment, ExecutionPath, PathStep, Value};
use crate::tree_format::{predicate_from_json, predicate_to_json, FormatError};

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("record field {field}: {message}")]
    Field { field: String, message: String },
    #[error(transparent)]
    Format(#[from] FormatError),
}

pub(crate) fn field_err(field: &str, message: impl Into<String>) -> RecordError {
    RecordError::Field {
        field: field.to_string(),
        message: message.into(),
    }
}

pub fn value_to_json(v: &Value) -> Json {
    match v {
        Value::Bool(b) => Json::Bool(*b),
        Value::Cat(s) => Json::String(s.clone()),
        Value::Num(x) => canon::number(*x),
    }
}

pub fn value_from_json(v: &Json, field: &str) -> Result<Value, RecordError> {
    match v {
        Json::Bool(b) => Ok(Value::Bool(*b)),
        Json::String(s) => Ok(Value::Cat(s.clone())),
        Json::Number(_) => v
            .as_f64()
            .filter(|x| x.is_finite())
            .map(Value::num)
            .ok_or_else(|| field_err(field, "expected a finite number")),
        _ => Err(field_err(field, "expected a boolean, string or number")),
    }
}

/// Keys are emitted in name order.
pub fn assignment_to_json(a: &Assignment) -> Json {
    let mut map = Map::new();
    for (k, v) in a.iter() {
        map.insert(k.clone(), value_to_json(v));
    }
    Json::Object(map)
}

pub fn assignment_from_json(v: &Json, field: &str) -> Result<Assignment, RecordError> {
    let obj = v.as_object().ok_or_else(|| field_err(field, "expected an object"))?;
    obj.iter()
        .map(|(k, v)| Ok((k.clone(), value_from_json(v, &format!("{field}.{k}"))?)))
        .collect()
}

pub fn path_to_json(p: &ExecutionPath) -> Json {
    Json::Array(
        p.steps
            .iter()
            .map(|s| predicate_to_json(&s.predicate).field("taken", s.taken).build())
            .collect(),
    )
}

pub fn path_from_json(v: &Json, field: &str) -> Result<ExecutionPath, RecordError> {
    let items = v.as_array().ok_or_else(|| field_err(field, "expected an array"))?;
    let mut steps = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let here = format!("{field}[{i}]");
        let mut obj = item
            .as_object()
            .cloned()
            .ok_or_else(|| field_err(&here, "expected an object"))?;
        let taken = obj
            .remove("taken")
            .and_then(|t| t.as_bool())
            .ok_or_else(|| field_err(&here, "missing boolean `taken`"))?;
        let predicate = predicate_from_json(&Json::Object(obj), &here)?;
        steps.push(PathStep { predicate, taken });
    }
    Ok(ExecutionPath { steps })
}

/// Typed view over a record object.
pub(crate) struct Rec<'a>(pub &'a Map<String, Json>);

impl<'a> Rec<'a> {
    pub fn parse(v: &'a Json) -> Result<Self, RecordError> {
        v.as_object()
            .map(Rec)
            .ok_or_else(|| field_err("$", "expected an object"))
    }

    pub fn get(&self, key: &str) -> Result<&'a Json, RecordError> {
        self.0.get(key).ok_or_else(|| field_err(key, "missing field"))
    }

    pub fn string(&self, key: &str) -> Result<String, RecordError> {
        self.get(key)?
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| field_err(key, "expected a string"))
    }

    pub fn opt_string(&self, key: &str) -> Result<Option<String>, RecordError> {
        match self.0.get(key) {
            None | Some(Json::Null) => Ok(None),
            Some(Json::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(field_err(key, "expected a string or null")),
        }
    }

    pub fn index(&self, key: &str) -> Result<usize, RecordError> {
        self.get(key)?
            .as_u64()
            .map(|i| i as usize)
            .ok_or_else(|| field_err(key, "expected a non-negative integer"))
    }

    pub fn expect_type(&self, expected: &str) -> Result<(), RecordError> {
        let t = self.string("type")?;
        if t == expected {
            Ok(())
        } else {
            Err(field_err("type", format!("expected {expected:?}, got {t:?}")))
        }
    }
}

pub(crate) fn opt_string_json(s: &Option<String>) -> Json {
    s.as_ref().map_or(Json::Null, |s| Json::String(s.clone()))
}
