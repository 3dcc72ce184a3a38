//! Domain types shared by every stage: variables, predicates, decision trees,
//! assignments and execution traces.
//!
//! Constructors enforce the structural invariants. Semantic checks that need
//! the whole tree (unused variables, duplicate output labels, dead branches)
//! are reported by [`crate::tree_format::validate_tree`] instead, so that a
//! malformed-but-parseable tree can still be inspected.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::OnceLock;

use chrono::NaiveDate;
use regex::Regex;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("invalid identifier {0:?}: must match [a-z][a-z0-9_]*")]
    InvalidName(String),
    #[error("duplicate variable {0:?}")]
    DuplicateVariable(String),
    #[error("variable {var:?}: {reason}")]
    InvalidVariable { var: String, reason: String },
    #[error("predicate on {var:?}: {reason}")]
    InvalidPredicate { var: String, reason: String },
    #[error("predicate references undeclared variable {0:?}")]
    UndeclaredVariable(String),
    #[error("leaf index {index} out of range for {outputs} outputs")]
    LeafOutOfRange { index: usize, outputs: usize },
    #[error("no_action_index {index} out of range for {outputs} outputs")]
    NoActionOutOfRange { index: usize, outputs: usize },
    #[error("tree must declare at least one output")]
    NoOutputs,
    #[error("tree id must be non-empty")]
    EmptyId,
    #[error("value for {var:?}: {reason}")]
    InvalidValue { var: String, reason: String },
    #[error("unknown variable {0:?}")]
    UnknownVariable(String),
    #[error("conflicting values for {key:?}: {left} vs {right}")]
    Conflict { key: String, left: Value, right: Value },
}

fn name_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[a-z][a-z0-9_]*$").expect("static regex"))
}

pub fn is_valid_name(name: &str) -> bool {
    name_pattern().is_match(name)
}

/// A concrete value for one clinical variable.
///
/// Numbers are finite; `-0.0` is folded into `0.0` by [`Value::num`].
#[derive(Debug, Clone)]
pub enum Value {
    Bool(bool),
    Cat(String),
    Num(f64),
}

impl Value {
    pub fn num(x: f64) -> Value {
        Value::Num(if x == 0.0 { 0.0 } else { x })
    }

    pub fn cat(s: impl Into<String>) -> Value {
        Value::Cat(s.into())
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Num(x) => Some(*x),
            _ => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Value::Bool(_) => "boolean",
            Value::Cat(_) => "categorical",
            Value::Num(_) => "numeric",
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Value::Bool(_) => 0,
            Value::Cat(_) => 1,
            Value::Num(_) => 2,
        }
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
            (Value::Cat(a), Value::Cat(b)) => a.cmp(b),
            (Value::Num(a), Value::Num(b)) => {
                if a == b {
                    Ordering::Equal
                } else {
                    a.total_cmp(b)
                }
            }
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.rank().hash(state);
        match self {
            Value::Bool(b) => b.hash(state),
            Value::Cat(s) => s.hash(state),
            Value::Num(x) => (if *x == 0.0 { 0.0f64 } else { *x }).to_bits().hash(state),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Cat(s) => write!(f, "{s}"),
            Value::Num(x) => f.write_str(&crate::canon::format_number(*x)),
        }
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::num(x)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Cat(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VarKind {
    Boolean,
    Categorical {
        values: Vec<String>,
    },
    Numeric {
        unit: Option<String>,
        min: f64,
        max: f64,
        grid: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariableSpec {
    name: String,
    kind: VarKind,
}

impl VariableSpec {
    pub fn boolean(name: impl Into<String>) -> Result<Self, ModelError> {
        Self::new(name.into(), VarKind::Boolean)
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        values: impl IntoIterator<Item = S>,
    ) -> Result<Self, ModelError> {
        let values = values.into_iter().map(Into::into).collect();
        Self::new(name.into(), VarKind::Categorical { values })
    }

    pub fn numeric(
        name: impl Into<String>,
        unit: Option<String>,
        min: f64,
        max: f64,
        grid: Vec<f64>,
    ) -> Result<Self, ModelError> {
        Self::new(name.into(), VarKind::Numeric { unit, min, max, grid })
    }

    pub fn new(name: String, kind: VarKind) -> Result<Self, ModelError> {
        if !is_valid_name(&name) {
            return Err(ModelError::InvalidName(name));
        }
        let bad = |reason: &str| ModelError::InvalidVariable {
            var: name.clone(),
            reason: reason.to_string(),
        };
        let kind = match kind {
            VarKind::Boolean => VarKind::Boolean,
            VarKind::Categorical { values } => {
                if values.is_empty() {
                    return Err(bad("categorical values must be non-empty"));
                }
                let distinct: BTreeSet<&String> = values.iter().collect();
                if distinct.len() != values.len() {
                    return Err(bad("categorical values must be distinct"));
                }
                VarKind::Categorical { values }
            }
            VarKind::Numeric { unit, min, max, grid } => {
                if !min.is_finite() || !max.is_finite() || min > max {
                    return Err(bad("numeric range requires finite min <= max"));
                }
                if grid.is_empty() {
                    return Err(bad("numeric grid must be non-empty"));
                }
                if grid.iter().any(|g| !g.is_finite() || *g < min || *g > max) {
                    return Err(bad("grid values must lie within [min, max]"));
                }
                if grid.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(bad("grid must be strictly increasing"));
                }
                let grid = grid.into_iter().map(|g| if g == 0.0 { 0.0 } else { g }).collect();
                VarKind::Numeric { unit, min, max, grid }
            }
        };
        Ok(VariableSpec { name, kind })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &VarKind {
        &self.kind
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            VarKind::Boolean => "boolean",
            VarKind::Categorical { .. } => "categorical",
            VarKind::Numeric { .. } => "numeric",
        }
    }

    /// Finite candidate values used for enumeration: both booleans, every
    /// categorical value, or the numeric grid.
    pub fn enumeration_domain(&self) -> Vec<Value> {
        match &self.kind {
            VarKind::Boolean => vec![Value::Bool(false), Value::Bool(true)],
            VarKind::Categorical { values } => values.iter().cloned().map(Value::Cat).collect(),
            VarKind::Numeric { grid, .. } => grid.iter().copied().map(Value::num).collect(),
        }
    }

    pub fn check_value(&self, value: &Value) -> Result<(), ModelError> {
        let bad = |reason: String| ModelError::InvalidValue {
            var: self.name.clone(),
            reason,
        };
        match (&self.kind, value) {
            (VarKind::Boolean, Value::Bool(_)) => Ok(()),
            (VarKind::Categorical { values }, Value::Cat(s)) => {
                if values.contains(s) {
                    Ok(())
                } else {
                    Err(bad(format!("{s:?} is not a declared value")))
                }
            }
            (VarKind::Numeric { min, max, .. }, Value::Num(x)) => {
                if !x.is_finite() {
                    Err(bad("non-finite number".into()))
                } else if x < min || x > max {
                    Err(bad(format!("{value} outside [{}, {}]", Value::num(*min), Value::num(*max))))
                } else {
                    Ok(())
                }
            }
            _ => Err(bad(format!(
                "expected {} value, got {}",
                self.kind_name(),
                value.kind_name()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Is,
    In,
}

impl Op {
    pub fn as_str(self) -> &'static str {
        match self {
            Op::Lt => "lt",
            Op::Le => "le",
            Op::Gt => "gt",
            Op::Ge => "ge",
            Op::Eq => "eq",
            Op::Is => "is",
            Op::In => "in",
        }
    }

    pub fn parse(s: &str) -> Option<Op> {
        Some(match s {
            "lt" => Op::Lt,
            "le" => Op::Le,
            "gt" => Op::Gt,
            "ge" => Op::Ge,
            "eq" => Op::Eq,
            "is" => Op::Is,
            "in" => Op::In,
            _ => return None,
        })
    }

    fn symbol(self) -> &'static str {
        match self {
            Op::Lt => "<",
            Op::Le => "≤",
            Op::Gt => ">",
            Op::Ge => "≥",
            Op::Eq => "=",
            Op::Is => "is",
            Op::In => "in",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Bool(bool),
    Str(String),
    Set(Vec<String>),
    Num(f64),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Bool(b) => write!(f, "{b}"),
            Literal::Str(s) => write!(f, "{s:?}"),
            Literal::Set(items) => write!(f, "{{{}}}", items.join(", ")),
            Literal::Num(x) => f.write_str(&crate::canon::format_number(*x)),
        }
    }
}

/// An atomic binary condition over one variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub var: String,
    pub op: Op,
    pub value: Literal,
}

impl Predicate {
    pub fn new(var: impl Into<String>, op: Op, value: Literal) -> Self {
        let value = match value {
            // folds -0.0 into 0.0
            Literal::Num(x) => Literal::Num(if x == 0.0 { 0.0 } else { x }),
            other => other,
        };
        Predicate {
            var: var.into(),
            op,
            value,
        }
    }

    /// Checks operator and literal against the declared variable.
    pub fn check_against(&self, spec: &VariableSpec) -> Result<(), ModelError> {
        let bad = |reason: String| ModelError::InvalidPredicate {
            var: self.var.clone(),
            reason,
        };
        match (&spec.kind, self.op, &self.value) {
            (VarKind::Boolean, Op::Is, Literal::Bool(_)) => Ok(()),
            (VarKind::Categorical { values }, Op::Eq, Literal::Str(s)) => {
                if values.contains(s) {
                    Ok(())
                } else {
                    Err(bad(format!("{s:?} is not a declared value")))
                }
            }
            (VarKind::Categorical { values }, Op::In, Literal::Set(items)) => {
                if items.is_empty() {
                    return Err(bad("empty value set".into()));
                }
                let distinct: BTreeSet<&String> = items.iter().collect();
                if distinct.len() != items.len() {
                    return Err(bad("duplicate entries in value set".into()));
                }
                match items.iter().find(|s| !values.contains(s)) {
                    Some(s) => Err(bad(format!("{s:?} is not a declared value"))),
                    None => Ok(()),
                }
            }
            (
                VarKind::Numeric { min, max, .. },
                Op::Lt | Op::Le | Op::Gt | Op::Ge | Op::Eq,
                Literal::Num(x),
            ) => {
                if x.is_finite() && x >= min && x <= max {
                    Ok(())
                } else {
                    Err(bad(format!("threshold {} outside [{}, {}]", Value::num(*x), Value::num(*min), Value::num(*max))))
                }
            }
            (_, op, lit) => Err(bad(format!(
                "operator {:?} with literal {lit} is not legal for a {} variable",
                op.as_str(),
                spec.kind_name()
            ))),
        }
    }

    /// Evaluates the predicate on a value already known to match the kind.
    /// Kind mismatches evaluate to `false`.
    pub fn evaluate(&self, value: &Value) -> bool {
        match (self.op, &self.value, value) {
            (Op::Is, Literal::Bool(b), Value::Bool(v)) => b == v,
            (Op::Eq, Literal::Str(s), Value::Cat(v)) => s == v,
            (Op::In, Literal::Set(items), Value::Cat(v)) => items.contains(v),
            (Op::Lt, Literal::Num(t), Value::Num(x)) => x < t,
            (Op::Le, Literal::Num(t), Value::Num(x)) => x <= t,
            (Op::Gt, Literal::Num(t), Value::Num(x)) => x > t,
            (Op::Ge, Literal::Num(t), Value::Num(x)) => x >= t,
            (Op::Eq, Literal::Num(t), Value::Num(x)) => x == t,
            _ => false,
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.op, &self.value) {
            (Op::Is, Literal::Bool(true)) => write!(f, "{}", self.var),
            (Op::Is, Literal::Bool(false)) => write!(f, "not {}", self.var),
            (op, lit) => write!(f, "{} {} {}", self.var, op.symbol(), lit),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf(usize),
    Branch {
        predicate: Predicate,
        then_node: Box<Node>,
        else_node: Box<Node>,
    },
}

impl Node {
    pub fn branch(predicate: Predicate, then_node: Node, else_node: Node) -> Node {
        Node::Branch {
            predicate,
            then_node: Box::new(then_node),
            else_node: Box::new(else_node),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Node::Leaf(_) => 1,
            Node::Branch { then_node, else_node, .. } => then_node.leaf_count() + else_node.leaf_count(),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Node::Leaf(_) => 1,
            Node::Branch { then_node, else_node, .. } => 1 + then_node.node_count() + else_node.node_count(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf(_) => 0,
            Node::Branch { then_node, else_node, .. } => 1 + then_node.depth().max(else_node.depth()),
        }
    }

    pub(crate) fn visit_predicates<'a>(&'a self, f: &mut impl FnMut(&'a Predicate)) {
        if let Node::Branch { predicate, then_node, else_node } = self {
            f(predicate);
            then_node.visit_predicates(f);
            else_node.visit_predicates(f);
        }
    }

    pub(crate) fn visit_leaves(&self, f: &mut impl FnMut(usize)) {
        match self {
            Node::Leaf(i) => f(*i),
            Node::Branch { then_node, else_node, .. } => {
                then_node.visit_leaves(f);
                else_node.visit_leaves(f);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Source {
    pub guideline_id: String,
    pub chunk_id: String,
}

/// Population metadata carried by a tree document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeMetadata {
    pub disease_or_drug: String,
    pub age_group: String,
    pub race: String,
    pub gender: String,
    pub publication_date: NaiveDate,
}

/// Unchecked parts of a tree; see [`DecisionTree::new`].
#[derive(Debug, Clone)]
pub struct TreeParts {
    pub id: String,
    pub source: Source,
    pub metadata: TreeMetadata,
    pub variables: Vec<VariableSpec>,
    pub outputs: Vec<String>,
    pub no_action_index: Option<usize>,
    pub root: Node,
}

/// The executable form of one recommendation.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    id: String,
    source: Source,
    metadata: TreeMetadata,
    variables: Vec<VariableSpec>,
    outputs: Vec<String>,
    no_action_index: Option<usize>,
    root: Node,
}

impl DecisionTree {
    pub fn new(parts: TreeParts) -> Result<Self, ModelError> {
        let TreeParts {
            id,
            source,
            metadata,
            variables,
            outputs,
            no_action_index,
            root,
        } = parts;
        if id.is_empty() {
            return Err(ModelError::EmptyId);
        }
        if outputs.is_empty() {
            return Err(ModelError::NoOutputs);
        }
        let mut seen = BTreeSet::new();
        for v in &variables {
            if !seen.insert(v.name()) {
                return Err(ModelError::DuplicateVariable(v.name().to_string()));
            }
        }
        if let Some(index) = no_action_index {
            if index >= outputs.len() {
                return Err(ModelError::NoActionOutOfRange {
                    index,
                    outputs: outputs.len(),
                });
            }
        }
        let tree = DecisionTree {
            id,
            source,
            metadata,
            variables,
            outputs,
            no_action_index,
            root,
        };
        let mut leaf_err = None;
        tree.root.visit_leaves(&mut |i| {
            if i >= tree.outputs.len() && leaf_err.is_none() {
                leaf_err = Some(ModelError::LeafOutOfRange {
                    index: i,
                    outputs: tree.outputs.len(),
                });
            }
        });
        if let Some(e) = leaf_err {
            return Err(e);
        }
        let mut pred_err = None;
        tree.root.visit_predicates(&mut |p| {
            if pred_err.is_some() {
                return;
            }
            pred_err = match tree.variable(&p.var) {
                None => Some(ModelError::UndeclaredVariable(p.var.clone())),
                Some(spec) => p.check_against(spec).err(),
            };
        });
        if let Some(e) = pred_err {
            return Err(e);
        }
        Ok(tree)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn source(&self) -> &Source {
        &self.source
    }

    pub fn metadata(&self) -> &TreeMetadata {
        &self.metadata
    }

    pub fn variables(&self) -> &[VariableSpec] {
        &self.variables
    }

    pub fn variable(&self, name: &str) -> Option<&VariableSpec> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn outputs(&self) -> &[String] {
        &self.outputs
    }

    pub fn no_action_index(&self) -> Option<usize> {
        self.no_action_index
    }

    pub fn no_action_label(&self) -> Option<&str> {
        self.no_action_index.map(|i| self.outputs[i].as_str())
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn output_index(&self, label: &str) -> Option<usize> {
        self.outputs.iter().position(|o| o == label)
    }

    pub fn leaf_count(&self) -> usize {
        self.root.leaf_count()
    }

    /// Replaces the identity fields, keeping the logic untouched.
    pub fn with_provenance(mut self, id: String, source: Source, metadata: TreeMetadata) -> Result<Self, ModelError> {
        if id.is_empty() {
            return Err(ModelError::EmptyId);
        }
        self.id = id;
        self.source = source;
        self.metadata = metadata;
        Ok(self)
    }

    /// Names of variables referenced by at least one predicate.
    pub fn used_variables(&self) -> BTreeSet<String> {
        let mut used = BTreeSet::new();
        self.root.visit_predicates(&mut |p| {
            used.insert(p.var.clone());
        });
        used
    }

    /// Checks every present value against its declaration.
    pub fn check_assignment(&self, x: &Assignment) -> Result<(), ModelError> {
        for (name, value) in x.iter() {
            let spec = self
                .variable(name)
                .ok_or_else(|| ModelError::UnknownVariable(name.clone()))?;
            spec.check_value(value)?;
        }
        Ok(())
    }

    pub fn missing_variables(&self, x: &Assignment) -> Vec<String> {
        self.variables
            .iter()
            .filter(|v| !x.contains(v.name()))
            .map(|v| v.name.clone())
            .collect()
    }
}

/// A possibly partial valuation of tree variables, ordered by name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Assignment(BTreeMap<String, Value>);

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.0.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, value: impl Into<Value>) -> Option<Value> {
        self.0.insert(name.into(), value.into())
    }

    pub fn remove(&mut self, name: &str) -> Option<Value> {
        self.0.remove(name)
    }

    pub fn with(mut self, name: impl Into<String>, value: impl Into<Value>) -> Self {
        self.insert(name, value);
        self
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Value)> {
        self.0.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    /// Keeps only the named variables.
    pub fn restrict<'a>(&self, names: impl IntoIterator<Item = &'a String>) -> Assignment {
        let mut out = Assignment::new();
        for n in names {
            if let Some(v) = self.0.get(n) {
                out.0.insert(n.clone(), v.clone());
            }
        }
        out
    }

    /// Drops the named variables.
    pub fn without<'a>(&self, names: impl IntoIterator<Item = &'a String>) -> Assignment {
        let mut out = self.clone();
        for n in names {
            out.0.remove(n);
        }
        out
    }
}

impl FromIterator<(String, Value)> for Assignment {
    fn from_iter<I: IntoIterator<Item = (String, Value)>>(iter: I) -> Self {
        Assignment(iter.into_iter().collect())
    }
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (k, v)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{k}={v}")?;
        }
        f.write_str("}")
    }
}

/// Union of two assignments; overlapping keys must carry equal values.
pub fn merge_assignments(base: &Assignment, overlay: &Assignment) -> Result<Assignment, ModelError> {
    let mut out = base.clone();
    for (k, v) in overlay.iter() {
        if let Some(existing) = base.get(k) {
            if existing != v {
                return Err(ModelError::Conflict {
                    key: k.clone(),
                    left: existing.clone(),
                    right: v.clone(),
                });
            }
        }
        out.0.insert(k.clone(), v.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathStep {
    pub predicate: Predicate,
    pub taken: bool,
}

/// Ordered predicate outcomes from the root to the reached leaf.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExecutionPath {
    pub steps: Vec<PathStep>,
}

impl ExecutionPath {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Variables in first-consulted order.
    pub fn consulted_variables(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.steps {
            if !out.contains(&s.predicate.var) {
                out.push(s.predicate.var.clone());
            }
        }
        out
    }

    /// Follows the recorded outcomes from `root`; `None` when the trace does
    /// not match the tree shape.
    pub fn replay(&self, root: &Node) -> Option<usize> {
        let mut node = root;
        for step in &self.steps {
            match node {
                Node::Leaf(_) => return None,
                Node::Branch { predicate, then_node, else_node } => {
                    if predicate != &step.predicate {
                        return None;
                    }
                    node = if step.taken { then_node } else { else_node };
                }
            }
        }
        match node {
            Node::Leaf(i) => Some(*i),
            Node::Branch { .. } => None,
        }
    }
}

impl fmt::Display for ExecutionPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, s) in self.steps.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}:{}", s.predicate, if s.taken { "T" } else { "F" })?;
        }
        f.write_str("]")
    }
}

/// Complete hidden-variable assignments consistent with an observed outcome.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AbductionClass(pub BTreeSet<Assignment>);

impl AbductionClass {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, h: &Assignment) -> bool {
        self.0.contains(h)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Assignment> {
        self.0.iter()
    }
}

impl FromIterator<Assignment> for AbductionClass {
    fn from_iter<I: IntoIterator<Item = Assignment>>(iter: I) -> Self {
        AbductionClass(iter.into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_disjoint_union() {
        let base = Assignment::new().with("age", 70.0);
        let overlay = Assignment::new().with("diabetes", true);
        let merged = merge_assignments(&base, &overlay).unwrap();
        assert_eq!(merged, Assignment::new().with("age", 70.0).with("diabetes", true));
    }

    #[test]
    fn merge_identity() {
        let base = Assignment::new().with("age", 70.0);
        assert_eq!(merge_assignments(&base, &Assignment::new()).unwrap(), base);
    }

    #[test]
    fn merge_conflict_names_key() {
        let base = Assignment::new().with("age", 70.0);
        let overlay = Assignment::new().with("age", 55.0);
        match merge_assignments(&base, &overlay) {
            Err(ModelError::Conflict { key, .. }) => assert_eq!(key, "age"),
            other => panic!("expected conflict, got {other:?}"),
        }
    }

    #[test]
    fn merge_equal_overlap_is_fine() {
        let base = Assignment::new().with("age", 70.0);
        let overlay = Assignment::new().with("age", 70.0).with("x", true);
        assert_eq!(merge_assignments(&base, &overlay).unwrap().len(), 2);
    }

    #[test]
    fn variable_invariants() {
        assert!(VariableSpec::boolean("Age").is_err());
        assert!(VariableSpec::boolean("1x").is_err());
        assert!(VariableSpec::categorical("c", Vec::<String>::new()).is_err());
        assert!(VariableSpec::categorical("c", ["a", "a"]).is_err());
        assert!(VariableSpec::numeric("n", None, 0.0, 10.0, vec![]).is_err());
        assert!(VariableSpec::numeric("n", None, 0.0, 10.0, vec![5.0, 3.0]).is_err());
        assert!(VariableSpec::numeric("n", None, 0.0, 10.0, vec![5.0, 5.0]).is_err());
        assert!(VariableSpec::numeric("n", None, 0.0, 10.0, vec![11.0]).is_err());
        assert!(VariableSpec::numeric("n", None, 10.0, 0.0, vec![5.0]).is_err());
        assert!(VariableSpec::numeric("n_2", Some("mg".into()), 0.0, 10.0, vec![0.0, 10.0]).is_ok());
    }

    #[test]
    fn predicate_kind_legality() {
        let b = VariableSpec::boolean("smoker").unwrap();
        let c = VariableSpec::categorical("sex", ["f", "m"]).unwrap();
        let n = VariableSpec::numeric("age", None, 18.0, 100.0, vec![40.0]).unwrap();
        assert!(Predicate::new("smoker", Op::Is, Literal::Bool(true)).check_against(&b).is_ok());
        assert!(Predicate::new("smoker", Op::Ge, Literal::Num(1.0)).check_against(&b).is_err());
        assert!(Predicate::new("sex", Op::Eq, Literal::Str("x".into())).check_against(&c).is_err());
        assert!(Predicate::new("sex", Op::In, Literal::Set(vec!["f".into()])).check_against(&c).is_ok());
        assert!(Predicate::new("sex", Op::In, Literal::Set(vec![])).check_against(&c).is_err());
        assert!(Predicate::new("age", Op::Ge, Literal::Num(101.0)).check_against(&n).is_err());
        assert!(Predicate::new("age", Op::Is, Literal::Bool(true)).check_against(&n).is_err());
    }

    #[test]
    fn value_ordering_is_total_and_structural() {
        assert_eq!(Value::num(-0.0), Value::num(0.0));
        assert!(Value::Bool(true) < Value::cat("a"));
        assert!(Value::cat("a") < Value::num(-5.0));
        assert!(Value::num(1.5) < Value::num(2.0));
    }
}
