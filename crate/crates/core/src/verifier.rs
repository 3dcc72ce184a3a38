//! Response parsing and executable rewards.
//!
//! A response is scored `-1` when its format is invalid and otherwise by a
//! 0/1 correctness indicator. Factual correctness compares the final answer
//! with the executed label. Counterfactual correctness is the product of
//! three indicators: the claimed hidden state matches the gold state, the
//! claimed hidden state reproduces the factual outcome when executed, and the
//! final answer matches the executed counterfactual label.
//!
//! Response grammar (surrounding whitespace ignored):
//!
//! ```text
//! factual:        <think>…</think><answer>…</answer>
//! counterfactual: <think>…</think><hidden>name=value(; name=value)*</hidden><answer>…</answer>
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde_json::Value as Json;
use thiserror::Error;

use crate::canon::{self, Obj};
use crate::executor::check_consistency;
use crate::model::{Assignment, DecisionTree, Value, VarKind};
use crate::qa_counterfactual::CounterfactualInstance;
use crate::qa_factual::FactualInstance;
use crate::records::RecordError;
use crate::tree_format::{parse_tree, FormatError};

/// Relative tolerance for numeric hidden-value equality.
pub const NUMERIC_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseKind {
    Factual,
    Counterfactual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardMode {
    /// Hidden claims must equal the gold hidden state.
    Strict,
    /// Any member of the abduction class is credited.
    Equivalence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatErrorCode {
    MissingBlock,
    BadOrder,
    EmptyAnswer,
    BadHiddenSyntax,
}

impl FormatErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            FormatErrorCode::MissingBlock => "missing_block",
            FormatErrorCode::BadOrder => "bad_order",
            FormatErrorCode::EmptyAnswer => "empty_answer",
            FormatErrorCode::BadHiddenSyntax => "bad_hidden_syntax",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedResponse {
    pub think_text: Option<String>,
    /// Raw `name=value` claims; typed against the tree at scoring time.
    pub hidden_claims: Option<BTreeMap<String, String>>,
    pub answer_text: Option<String>,
    pub format_ok: bool,
    pub format_error: Option<FormatErrorCode>,
}

fn tag_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<(/?)(think|hidden|answer)>").expect("static regex"))
}

fn failed(code: FormatErrorCode) -> ParsedResponse {
    ParsedResponse {
        format_ok: false,
        format_error: Some(code),
        ..ParsedResponse::default()
    }
}

fn parse_hidden_block(body: &str) -> Option<BTreeMap<String, String>> {
    let mut claims = BTreeMap::new();
    if body.trim().is_empty() {
        return None;
    }
    for pair in body.split(';') {
        let (name, value) = pair.split_once('=')?;
        let (name, value) = (name.trim(), value.trim());
        if !crate::model::is_valid_name(name) || value.is_empty() {
            return None;
        }
        if claims.insert(name.to_string(), value.to_string()).is_some() {
            return None;
        }
    }
    Some(claims)
}

pub fn parse_response(text: &str, kind: ResponseKind) -> ParsedResponse {
    let required: &[&str] = match kind {
        ResponseKind::Factual => &["think", "answer"],
        ResponseKind::Counterfactual => &["think", "hidden", "answer"],
    };
    let text = text.trim();
    let tags: Vec<(usize, usize, bool, &str)> = tag_pattern()
        .captures_iter(text)
        .map(|c| {
            let m = c.get(0).expect("whole match");
            (m.start(), m.end(), &c[1] == "/", c.get(2).expect("name").as_str())
        })
        .collect();

    for name in required {
        let opens = tags.iter().filter(|t| !t.2 && t.3 == *name).count();
        let closes = tags.iter().filter(|t| t.2 && t.3 == *name).count();
        if opens == 0 || closes == 0 {
            return failed(FormatErrorCode::MissingBlock);
        }
    }

    // Exactly open/close pairs for the required blocks, in order, with only
    // whitespace between blocks.
    if tags.len() != required.len() * 2 {
        return failed(FormatErrorCode::BadOrder);
    }
    let mut bodies = Vec::with_capacity(required.len());
    let mut cursor = 0;
    for (i, name) in required.iter().enumerate() {
        let open = tags[2 * i];
        let close = tags[2 * i + 1];
        if open.2 || open.3 != *name || !close.2 || close.3 != *name {
            return failed(FormatErrorCode::BadOrder);
        }
        if !text[cursor..open.0].trim().is_empty() {
            return failed(FormatErrorCode::BadOrder);
        }
        bodies.push(&text[open.1..close.0]);
        cursor = close.1;
    }
    if !text[cursor..].trim().is_empty() {
        return failed(FormatErrorCode::BadOrder);
    }

    let answer = bodies.last().expect("answer block").trim();
    if answer.is_empty() {
        return failed(FormatErrorCode::EmptyAnswer);
    }
    let hidden_claims = match kind {
        ResponseKind::Factual => None,
        ResponseKind::Counterfactual => match parse_hidden_block(bodies[1]) {
            Some(c) => Some(c),
            None => return failed(FormatErrorCode::BadHiddenSyntax),
        },
    };
    ParsedResponse {
        think_text: Some(bodies[0].trim().to_string()),
        hidden_claims,
        answer_text: Some(answer.to_string()),
        format_ok: true,
        format_error: None,
    }
}

/// Trim, lower-case and collapse whitespace runs.
pub fn normalize_label(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RewardBreakdown {
    pub format: i8,
    pub answer: Option<u8>,
    pub hidden_match: Option<bool>,
    pub consistency: Option<bool>,
    pub total: i8,
}

impl RewardBreakdown {
    fn invalid_format() -> Self {
        RewardBreakdown {
            format: -1,
            answer: None,
            hidden_match: None,
            consistency: None,
            total: -1,
        }
    }
}

pub fn factual_reward(parsed: &ParsedResponse, instance: &FactualInstance) -> RewardBreakdown {
    if !parsed.format_ok {
        return RewardBreakdown::invalid_format();
    }
    let answer = parsed
        .answer_text
        .as_deref()
        .is_some_and(|a| normalize_label(a) == normalize_label(&instance.label)) as u8;
    RewardBreakdown {
        format: 0,
        answer: Some(answer),
        hidden_match: None,
        consistency: None,
        total: answer as i8,
    }
}

/// Types raw claims against the tree; `None` if any claim names an
/// undeclared variable or fails to parse for its kind.
pub fn type_claims(tree: &DecisionTree, claims: &BTreeMap<String, String>) -> Option<Assignment> {
    let mut out = Assignment::new();
    for (name, raw) in claims {
        let spec = tree.variable(name)?;
        let value = match spec.kind() {
            VarKind::Boolean => match raw.to_ascii_lowercase().as_str() {
                "true" => Value::Bool(true),
                "false" => Value::Bool(false),
                _ => return None,
            },
            VarKind::Categorical { values } => {
                let wanted = normalize_label(raw);
                Value::Cat(values.iter().find(|v| normalize_label(v) == wanted)?.clone())
            }
            VarKind::Numeric { .. } => {
                let x: f64 = raw.parse().ok()?;
                if !x.is_finite() {
                    return None;
                }
                Value::num(x)
            }
        };
        out.insert(name.clone(), value);
    }
    Some(out)
}

fn values_match(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Num(x), Value::Num(y)) => x == y || (x - y).abs() <= NUMERIC_TOLERANCE * x.abs().max(y.abs()),
        _ => a == b,
    }
}

fn assignments_match(a: &Assignment, b: &Assignment) -> bool {
    a.len() == b.len()
        && a
            .iter()
            .all(|(k, v)| b.get(k).is_some_and(|w| values_match(v, w)))
}

pub fn counterfactual_reward(
    parsed: &ParsedResponse,
    instance: &CounterfactualInstance,
    tree: &DecisionTree,
    mode: RewardMode,
) -> RewardBreakdown {
    if !parsed.format_ok {
        return RewardBreakdown::invalid_format();
    }
    let claims = parsed
        .hidden_claims
        .as_ref()
        .and_then(|c| type_claims(tree, c));
    let (hidden_match, consistency) = match &claims {
        None => (false, false),
        Some(h) => {
            let matched = match mode {
                RewardMode::Strict => assignments_match(h, &instance.hidden_values),
                RewardMode::Equivalence => instance.abduction_class.iter().any(|m| assignments_match(h, m)),
            };
            let consistent = h.keys().all(|k| instance.hidden_names.contains(k))
                && check_consistency(tree, &instance.factual_context(), h, &instance.y_obs).unwrap_or(false);
            (matched, consistent)
        }
    };
    let answer_match = parsed
        .answer_text
        .as_deref()
        .is_some_and(|a| normalize_label(a) == normalize_label(&instance.y_cf));
    let answer = (hidden_match && consistency && answer_match) as u8;
    RewardBreakdown {
        format: 0,
        answer: Some(answer),
        hidden_match: Some(hidden_match),
        consistency: Some(consistency),
        total: answer as i8,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StoredInstance {
    Factual(FactualInstance),
    Counterfactual(CounterfactualInstance),
}

impl StoredInstance {
    pub fn tree_id(&self) -> &str {
        match self {
            StoredInstance::Factual(f) => &f.tree_id,
            StoredInstance::Counterfactual(c) => &c.tree_id,
        }
    }

    pub fn instance_id(&self) -> &str {
        match self {
            StoredInstance::Factual(f) => &f.instance_id,
            StoredInstance::Counterfactual(c) => &c.instance_id,
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{file}:{line}: {source}")]
    Record {
        file: String,
        line: usize,
        #[source]
        source: RecordError,
    },
    #[error("{file}: {source}")]
    Tree {
        file: String,
        #[source]
        source: FormatError,
    },
    #[error("instance {instance:?} references unknown tree {tree:?}")]
    UnknownTree { instance: String, tree: String },
    #[error("duplicate id {0:?}")]
    Duplicate(String),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
}

/// Read-only lookup of trees and instances for scoring.
#[derive(Debug, Default, Clone)]
pub struct InstanceStore {
    trees: BTreeMap<String, DecisionTree>,
    instances: HashMap<String, StoredInstance>,
    factual: usize,
    counterfactual: usize,
}

impl InstanceStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_tree(&mut self, tree: DecisionTree) -> Result<(), StoreError> {
        if self.trees.contains_key(tree.id()) {
            return Err(StoreError::Duplicate(tree.id().to_string()));
        }
        self.trees.insert(tree.id().to_string(), tree);
        Ok(())
    }

    /// Adds an instance after re-verifying it against its tree.
    pub fn add_instance(&mut self, instance: StoredInstance) -> Result<(), StoreError> {
        let id = instance.instance_id().to_string();
        let tree = self.trees.get(instance.tree_id()).ok_or_else(|| StoreError::UnknownTree {
            instance: id.clone(),
            tree: instance.tree_id().to_string(),
        })?;
        let verified = match &instance {
            StoredInstance::Factual(f) => f.verify(tree),
            StoredInstance::Counterfactual(c) => c.verify(tree),
        };
        verified.map_err(|source| StoreError::Record {
            file: id.clone(),
            line: 0,
            source,
        })?;
        if self.instances.contains_key(&id) {
            return Err(StoreError::Duplicate(id));
        }
        match instance {
            StoredInstance::Factual(_) => self.factual += 1,
            StoredInstance::Counterfactual(_) => self.counterfactual += 1,
        }
        self.instances.insert(id, instance);
        Ok(())
    }

    pub fn get(&self, instance_id: &str) -> Option<&StoredInstance> {
        self.instances.get(instance_id)
    }

    pub fn tree(&self, tree_id: &str) -> Option<&DecisionTree> {
        self.trees.get(tree_id)
    }

    pub fn tree_count(&self) -> usize {
        self.trees.len()
    }

    pub fn factual_count(&self) -> usize {
        self.factual
    }

    pub fn counterfactual_count(&self) -> usize {
        self.counterfactual
    }

    /// Loads every `*.json` tree in `trees_dir` and the given JSONL datasets;
    /// a missing dataset file is treated as empty.
    pub fn load(trees_dir: &Path, datasets: &[&Path]) -> Result<Self, StoreError> {
        let mut store = InstanceStore::new();
        let io = |p: &Path, e| StoreError::Io(p.display().to_string(), e);
        let mut entries: Vec<_> = fs::read_dir(trees_dir)
            .map_err(|e| io(trees_dir, e))?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        entries.sort();
        for path in entries {
            let text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
            let tree = parse_tree(&text).map_err(|source| StoreError::Tree {
                file: path.display().to_string(),
                source,
            })?;
            store.add_tree(tree)?;
        }
        for path in datasets {
            if !path.exists() {
                continue;
            }
            let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
            for (n, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let at = |source| StoreError::Record {
                    file: path.display().to_string(),
                    line: n + 1,
                    source,
                };
                let json: Json = serde_json::from_str(line).map_err(|e| {
                    at(crate::records::field_err("$", e.to_string()))
                })?;
                let instance = match json.get("type").and_then(Json::as_str) {
                    Some("counterfactual") => {
                        StoredInstance::Counterfactual(CounterfactualInstance::from_json(&json).map_err(at)?)
                    }
                    _ => StoredInstance::Factual(FactualInstance::from_json(&json).map_err(at)?),
                };
                store.add_instance(instance).map_err(|e| match e {
                    StoreError::Record { source, .. } => at(source),
                    other => other,
                })?;
            }
        }
        Ok(store)
    }

    /// Scores one response against a stored instance.
    pub fn score(&self, instance_id: &str, response: &str, mode: RewardMode) -> Result<RewardBreakdown, ScoreError> {
        let instance = self
            .get(instance_id)
            .ok_or_else(|| ScoreError::UnknownInstance(instance_id.to_string()))?;
        Ok(match instance {
            StoredInstance::Factual(f) => factual_reward(&parse_response(response, ResponseKind::Factual), f),
            StoredInstance::Counterfactual(c) => {
                let tree = self.tree(&c.tree_id).expect("verified at insertion");
                counterfactual_reward(&parse_response(response, ResponseKind::Counterfactual), c, tree, mode)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoreError {
    #[error("unknown instance {0:?}")]
    UnknownInstance(String),
}

impl ScoreError {
    pub fn code(&self) -> &'static str {
        match self {
            ScoreError::UnknownInstance(_) => "unknown_instance",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub instance_id: String,
    pub result: Result<RewardBreakdown, ScoreError>,
}

impl ScoreRecord {
    /// Reply object of the reward wire contract.
    pub fn to_json(&self) -> Json {
        let o = Obj::new().field("instance_id", self.instance_id.clone());
        match &self.result {
            Ok(b) => o
                .field("reward", b.total)
                .field("format", b.format)
                .field("answer", b.answer.map_or(Json::Null, Json::from))
                .field("hidden_match", b.hidden_match.map_or(Json::Null, Json::from))
                .field("consistency", b.consistency.map_or(Json::Null, Json::from))
                .field("error", Json::Null)
                .build(),
            Err(e) => o
                .field("reward", Json::Null)
                .field("format", Json::Null)
                .field("answer", Json::Null)
                .field("hidden_match", Json::Null)
                .field("consistency", Json::Null)
                .field("error", e.code())
                .build(),
        }
    }

    pub fn to_canonical(&self) -> String {
        canon::to_string(&self.to_json())
    }
}

/// Scores each `(instance_id, response)` pair independently, in order.
pub fn score_batch(store: &InstanceStore, responses: &[(String, String)], mode: RewardMode) -> Vec<ScoreRecord> {
    responses
        .iter()
        .map(|(id, text)| ScoreRecord {
            instance_id: id.clone(),
            result: store.score(id, text, mode),
        })
        .collect()
}

/// A parsed reward request `{"instance_id": ..., "response": ...}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewardRequest {
    pub instance_id: String,
    pub response: String,
}

impl RewardRequest {
    pub fn from_json(v: &Json) -> Result<Self, String> {
        let obj = v.as_object().ok_or("request must be a JSON object")?;
        let field = |k: &str| {
            obj.get(k)
                .and_then(Json::as_str)
                .map(str::to_string)
                .ok_or_else(|| format!("missing string field {k:?}"))
        };
        Ok(RewardRequest {
            instance_id: field("instance_id")?,
            response: field("response")?,
        })
    }

    pub fn to_json(&self) -> Json {
        Obj::new()
            .field("instance_id", self.instance_id.clone())
            .field("response", self.response.clone())
            .build()
    }
}
