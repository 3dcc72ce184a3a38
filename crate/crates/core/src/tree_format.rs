//! Tree documents: parsing, canonical serialization, validation, and path
//! enumeration with per-path constraint sets.

use std::collections::BTreeSet;
use std::fmt;

use chrono::NaiveDate;
use serde_json::{Map, Value as Json};
use thiserror::Error;

use crate::canon::{self, Obj};
use crate::model::{
    DecisionTree, Literal, ModelError, Node, Op, PathStep, Predicate, Source, TreeMetadata, TreeParts, Value,
    VarKind, VariableSpec,
};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("invalid tree: {0}")]
    Invalid(#[from] ModelError),
}

fn schema(path: &str, message: impl Into<String>) -> FormatError {
    FormatError::Schema {
        path: path.to_string(),
        message: message.into(),
    }
}

/// A JSON object being consumed field by field; leftover keys are rejected.
struct Fields<'a> {
    path: String,
    map: &'a Map<String, Json>,
    allowed: &'static [&'static str],
}

impl<'a> Fields<'a> {
    fn new(value: &'a Json, path: &str, allowed: &'static [&'static str]) -> Result<Self, FormatError> {
        let map = value
            .as_object()
            .ok_or_else(|| schema(path, "expected an object"))?;
        if let Some(k) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(schema(&format!("{path}.{k}"), "unknown field"));
        }
        Ok(Fields {
            path: path.to_string(),
            map,
            allowed,
        })
    }

    fn at(&self, key: &str) -> String {
        debug_assert!(self.allowed.contains(&key));
        format!("{}.{key}", self.path)
    }

    fn get(&self, key: &str) -> Result<&'a Json, FormatError> {
        self.map
            .get(key)
            .ok_or_else(|| schema(&self.at(key), "missing field"))
    }

    fn opt(&self, key: &str) -> Option<&'a Json> {
        self.map.get(key).filter(|v| !v.is_null())
    }

    fn string(&self, key: &str) -> Result<String, FormatError> {
        self.get(key)?
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| schema(&self.at(key), "expected a string"))
    }

    fn number(&self, key: &str) -> Result<f64, FormatError> {
        as_number(self.get(key)?, &self.at(key))
    }

    fn array(&self, key: &str) -> Result<&'a Vec<Json>, FormatError> {
        self.get(key)?
            .as_array()
            .ok_or_else(|| schema(&self.at(key), "expected an array"))
    }
}

fn as_number(v: &Json, path: &str) -> Result<f64, FormatError> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| schema(path, "expected a finite number"))
}

fn as_index(v: &Json, path: &str) -> Result<usize, FormatError> {
    v.as_u64()
        .map(|i| i as usize)
        .ok_or_else(|| schema(path, "expected a non-negative integer"))
}

pub(crate) fn parse_json(text: &str) -> Result<Json, FormatError> {
    serde_json::from_str(text).map_err(|e| FormatError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub(crate) fn parse_date(s: &str) -> Option<NaiveDate> {
    if s.len() != 10 {
        return None;
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()
}

pub(crate) fn format_date(d: NaiveDate) -> String {
    d.format("%Y-%m-%d").to_string()
}

/// Parses a tree document.
pub fn parse_tree(document: &str) -> Result<DecisionTree, FormatError> {
    let json = parse_json(document)?;
    tree_from_json(&json)
}

pub fn tree_from_json(json: &Json) -> Result<DecisionTree, FormatError> {
    let top = Fields::new(
        json,
        "$",
        &["schema_version", "id", "source", "metadata", "variables", "outputs", "no_action_index", "root"],
    )?;
    match top.get("schema_version")?.as_u64() {
        Some(SCHEMA_VERSION) => {}
        _ => return Err(schema("$.schema_version", format!("expected {SCHEMA_VERSION}"))),
    }
    let id = top.string("id")?;

    let src = Fields::new(top.get("source")?, "$.source", &["guideline_id", "chunk_id"])?;
    let source = Source {
        guideline_id: src.string("guideline_id")?,
        chunk_id: src.string("chunk_id")?,
    };

    let meta = Fields::new(
        top.get("metadata")?,
        "$.metadata",
        &["disease_or_drug", "age_group", "race", "gender", "publication_date"],
    )?;
    let date_text = meta.string("publication_date")?;
    let publication_date = parse_date(&date_text)
        .ok_or_else(|| schema("$.metadata.publication_date", "expected YYYY-MM-DD"))?;
    let metadata = TreeMetadata {
        disease_or_drug: meta.string("disease_or_drug")?,
        age_group: meta.string("age_group")?,
        race: meta.string("race")?,
        gender: meta.string("gender")?,
        publication_date,
    };

    let mut variables = Vec::new();
    for (i, v) in top.array("variables")?.iter().enumerate() {
        variables.push(variable_from_json(v, &format!("$.variables[{i}]"))?);
    }

    let mut outputs = Vec::new();
    for (i, o) in top.array("outputs")?.iter().enumerate() {
        outputs.push(
            o.as_str()
                .ok_or_else(|| schema(&format!("$.outputs[{i}]"), "expected a string"))?
                .to_string(),
        );
    }

    let no_action_index = match top.get("no_action_index")? {
        Json::Null => None,
        v => Some(as_index(v, "$.no_action_index")?),
    };

    let root = node_from_json(top.get("root")?, "$.root")?;

    Ok(DecisionTree::new(TreeParts {
        id,
        source,
        metadata,
        variables,
        outputs,
        no_action_index,
        root,
    })?)
}

fn variable_from_json(v: &Json, path: &str) -> Result<VariableSpec, FormatError> {
    let kind = v
        .get("kind")
        .and_then(Json::as_str)
        .ok_or_else(|| schema(&format!("{path}.kind"), "expected one of boolean, categorical, numeric"))?;
    let spec = match kind {
        "boolean" => {
            let f = Fields::new(v, path, &["name", "kind"])?;
            VariableSpec::boolean(f.string("name")?)
        }
        "categorical" => {
            let f = Fields::new(v, path, &["name", "kind", "values"])?;
            let mut values = Vec::new();
            for (i, s) in f.array("values")?.iter().enumerate() {
                values.push(
                    s.as_str()
                        .ok_or_else(|| schema(&format!("{path}.values[{i}]"), "expected a string"))?
                        .to_string(),
                );
            }
            VariableSpec::categorical(f.string("name")?, values)
        }
        "numeric" => {
            let f = Fields::new(v, path, &["name", "kind", "unit", "min", "max", "grid"])?;
            let unit = match f.opt("unit") {
                None => None,
                Some(u) => Some(
                    u.as_str()
                        .ok_or_else(|| schema(&f.at("unit"), "expected a string"))?
                        .to_string(),
                ),
            };
            let mut grid = Vec::new();
            for (i, g) in f.array("grid")?.iter().enumerate() {
                grid.push(as_number(g, &format!("{path}.grid[{i}]"))?);
            }
            VariableSpec::numeric(f.string("name")?, unit, f.number("min")?, f.number("max")?, grid)
        }
        other => {
            return Err(schema(
                &format!("{path}.kind"),
                format!("unknown kind {other:?}"),
            ))
        }
    };
    Ok(spec?)
}

fn node_from_json(v: &Json, path: &str) -> Result<Node, FormatError> {
    let obj = v.as_object().ok_or_else(|| schema(path, "expected a node object"))?;
    if obj.contains_key("leaf") {
        let f = Fields::new(v, path, &["leaf"])?;
        return Ok(Node::Leaf(as_index(f.get("leaf")?, &f.at("leaf"))?));
    }
    let f = Fields::new(v, path, &["if", "then", "else"])?;
    let predicate = predicate_from_json(f.get("if")?, &f.at("if"))?;
    let then_node = node_from_json(f.get("then")?, &f.at("then"))?;
    let else_node = node_from_json(f.get("else")?, &f.at("else"))?;
    Ok(Node::branch(predicate, then_node, else_node))
}

pub(crate) fn predicate_from_json(v: &Json, path: &str) -> Result<Predicate, FormatError> {
    let f = Fields::new(v, path, &["var", "op", "value"])?;
    let var = f.string("var")?;
    let op_text = f.string("op")?;
    let op = Op::parse(&op_text).ok_or_else(|| schema(&f.at("op"), format!("unknown operator {op_text:?}")))?;
    let value = literal_from_json(f.get("value")?, &f.at("value"))?;
    Ok(Predicate::new(var, op, value))
}

fn literal_from_json(v: &Json, path: &str) -> Result<Literal, FormatError> {
    Ok(match v {
        Json::Bool(b) => Literal::Bool(*b),
        Json::String(s) => Literal::Str(s.clone()),
        Json::Number(_) => Literal::Num(as_number(v, path)?),
        Json::Array(items) => {
            let mut set = Vec::with_capacity(items.len());
            for (i, s) in items.iter().enumerate() {
                set.push(
                    s.as_str()
                        .ok_or_else(|| schema(&format!("{path}[{i}]"), "expected a string"))?
                        .to_string(),
                );
            }
            Literal::Set(set)
        }
        _ => return Err(schema(path, "expected a boolean, string, string list or number")),
    })
}

pub(crate) fn literal_to_json(lit: &Literal) -> Json {
    match lit {
        Literal::Bool(b) => Json::Bool(*b),
        Literal::Str(s) => Json::String(s.clone()),
        Literal::Set(items) => Json::Array(items.iter().cloned().map(Json::String).collect()),
        Literal::Num(x) => canon::number(*x),
    }
}

pub(crate) fn predicate_to_json(p: &Predicate) -> Obj {
    Obj::new()
        .field("var", p.var.clone())
        .field("op", p.op.as_str())
        .field("value", literal_to_json(&p.value))
}

fn node_to_json(node: &Node) -> Json {
    match node {
        Node::Leaf(i) => Obj::new().field("leaf", *i as u64).build(),
        Node::Branch { predicate, then_node, else_node } => Obj::new()
            .field("if", predicate_to_json(predicate).build())
            .field("then", node_to_json(then_node))
            .field("else", node_to_json(else_node))
            .build(),
    }
}

fn variable_to_json(v: &VariableSpec) -> Json {
    let base = Obj::new().field("name", v.name()).field("kind", v.kind_name());
    match v.kind() {
        VarKind::Boolean => base.build(),
        VarKind::Categorical { values } => base.field("values", values.clone()).build(),
        VarKind::Numeric { unit, min, max, grid } => {
            let base = match unit {
                Some(u) => base.field("unit", u.clone()),
                None => base,
            };
            base.field("min", canon::number(*min))
                .field("max", canon::number(*max))
                .field("grid", grid.iter().map(|g| canon::number(*g)).collect::<Vec<_>>())
                .build()
        }
    }
}

pub fn tree_to_json(tree: &DecisionTree) -> Json {
    let m = tree.metadata();
    Obj::new()
        .field("schema_version", SCHEMA_VERSION)
        .field("id", tree.id())
        .field(
            "source",
            Obj::new()
                .field("guideline_id", tree.source().guideline_id.clone())
                .field("chunk_id", tree.source().chunk_id.clone())
                .build(),
        )
        .field(
            "metadata",
            Obj::new()
                .field("disease_or_drug", m.disease_or_drug.clone())
                .field("age_group", m.age_group.clone())
                .field("race", m.race.clone())
                .field("gender", m.gender.clone())
                .field("publication_date", format_date(m.publication_date))
                .build(),
        )
        .field("variables", tree.variables().iter().map(variable_to_json).collect::<Vec<_>>())
        .field("outputs", tree.outputs().to_vec())
        .field(
            "no_action_index",
            tree.no_action_index().map_or(Json::Null, |i| Json::from(i as u64)),
        )
        .field("root", node_to_json(tree.root()))
        .build()
}

/// Canonical document text.
pub fn serialize_tree(tree: &DecisionTree) -> String {
    canon::to_string(&tree_to_json(tree))
}

/// Admissible numeric values: an interval with open/closed ends, an optional
/// pinned value from an `eq` predicate and values excluded by failed `eq`s.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericRange {
    pub lo: f64,
    pub lo_closed: bool,
    pub hi: f64,
    pub hi_closed: bool,
    pub pinned: Option<f64>,
    pub excluded: Vec<f64>,
}

impl NumericRange {
    pub fn closed(lo: f64, hi: f64) -> Self {
        NumericRange {
            lo,
            lo_closed: true,
            hi,
            hi_closed: true,
            pinned: None,
            excluded: Vec::new(),
        }
    }

    fn raise_lower(&mut self, t: f64, closed: bool) {
        if t > self.lo || (t == self.lo && !closed) {
            self.lo = t;
            self.lo_closed = closed;
        }
    }

    fn lower_upper(&mut self, t: f64, closed: bool) {
        if t < self.hi || (t == self.hi && !closed) {
            self.hi = t;
            self.hi_closed = closed;
        }
    }

    fn apply(&mut self, op: Op, t: f64, taken: bool) {
        match (op, taken) {
            (Op::Lt, true) | (Op::Ge, false) => self.lower_upper(t, false),
            (Op::Le, true) | (Op::Gt, false) => self.lower_upper(t, true),
            (Op::Gt, true) | (Op::Le, false) => self.raise_lower(t, false),
            (Op::Ge, true) | (Op::Lt, false) => self.raise_lower(t, true),
            (Op::Eq, true) => {
                self.raise_lower(t, true);
                self.lower_upper(t, true);
                self.pinned = Some(t);
            }
            (Op::Eq, false) if !self.excluded.contains(&t) => self.excluded.push(t),
            _ => {}
        }
    }

    fn in_interval(&self, x: f64) -> bool {
        let above = if self.lo_closed { x >= self.lo } else { x > self.lo };
        let below = if self.hi_closed { x <= self.hi } else { x < self.hi };
        above && below
    }

    pub fn contains(&self, x: f64) -> bool {
        self.in_interval(x) && !self.excluded.contains(&x)
    }

    pub fn is_satisfiable(&self) -> bool {
        if self.lo < self.hi {
            true
        } else if self.lo == self.hi && self.lo_closed && self.hi_closed {
            !self.excluded.contains(&self.lo)
        } else {
            false
        }
    }
}

impl fmt::Display for NumericRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.is_satisfiable() {
            return f.write_str("∅");
        }
        if let Some(p) = self.pinned {
            return write!(f, "{{{}}}", canon::format_number(p));
        }
        write!(
            f,
            "{}{},{}{}",
            if self.lo_closed { "[" } else { "(" },
            canon::format_number(self.lo),
            canon::format_number(self.hi),
            if self.hi_closed { "]" } else { ")" }
        )?;
        for x in &self.excluded {
            write!(f, "∖{{{}}}", canon::format_number(*x))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VarConstraint {
    Boolean(BTreeSet<bool>),
    /// Admissible values in declared order.
    Categorical(Vec<String>),
    Numeric(NumericRange),
}

impl VarConstraint {
    fn unconstrained(spec: &VariableSpec) -> Self {
        match spec.kind() {
            VarKind::Boolean => VarConstraint::Boolean([false, true].into_iter().collect()),
            VarKind::Categorical { values } => VarConstraint::Categorical(values.clone()),
            VarKind::Numeric { min, max, .. } => VarConstraint::Numeric(NumericRange::closed(*min, *max)),
        }
    }

    fn apply(&mut self, p: &Predicate, taken: bool) {
        match (self, &p.value) {
            (VarConstraint::Boolean(set), Literal::Bool(b)) => {
                let want = if taken { *b } else { !*b };
                set.retain(|v| *v == want);
            }
            (VarConstraint::Categorical(vals), Literal::Str(s)) => {
                vals.retain(|v| (v == s) == taken);
            }
            (VarConstraint::Categorical(vals), Literal::Set(items)) => {
                vals.retain(|v| items.contains(v) == taken);
            }
            (VarConstraint::Numeric(range), Literal::Num(t)) => range.apply(p.op, *t, taken),
            _ => {}
        }
    }

    pub fn is_satisfiable(&self) -> bool {
        match self {
            VarConstraint::Boolean(s) => !s.is_empty(),
            VarConstraint::Categorical(v) => !v.is_empty(),
            VarConstraint::Numeric(r) => r.is_satisfiable(),
        }
    }

    pub fn admits(&self, value: &Value) -> bool {
        match (self, value) {
            (VarConstraint::Boolean(s), Value::Bool(b)) => s.contains(b),
            (VarConstraint::Categorical(v), Value::Cat(c)) => v.contains(c),
            (VarConstraint::Numeric(r), Value::Num(x)) => r.contains(*x),
            _ => false,
        }
    }
}

impl fmt::Display for VarConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarConstraint::Boolean(s) => {
                let items: Vec<String> = s.iter().map(|b| b.to_string()).collect();
                write!(f, "{{{}}}", items.join(","))
            }
            VarConstraint::Categorical(v) => write!(f, "{{{}}}", v.join(",")),
            VarConstraint::Numeric(r) => write!(f, "{r}"),
        }
    }
}

/// Per-variable admissible sets, in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    vars: Vec<(String, VarConstraint)>,
}

impl ConstraintSet {
    pub fn unconstrained(tree: &DecisionTree) -> Self {
        ConstraintSet {
            vars: tree
                .variables()
                .iter()
                .map(|v| (v.name().to_string(), VarConstraint::unconstrained(v)))
                .collect(),
        }
    }

    pub fn get(&self, var: &str) -> Option<&VarConstraint> {
        self.vars.iter().find(|(n, _)| n == var).map(|(_, c)| c)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &VarConstraint)> {
        self.vars.iter().map(|(n, c)| (n.as_str(), c))
    }

    pub fn apply(&mut self, p: &Predicate, taken: bool) {
        if let Some((_, c)) = self.vars.iter_mut().find(|(n, _)| *n == p.var) {
            c.apply(p, taken);
        }
    }

    pub fn with(&self, p: &Predicate, taken: bool) -> Self {
        let mut next = self.clone();
        next.apply(p, taken);
        next
    }

    pub fn is_satisfiable(&self) -> bool {
        self.vars.iter().all(|(_, c)| c.is_satisfiable())
    }

    /// True when every numeric variable keeps at least one grid point.
    pub fn grid_satisfiable(&self, tree: &DecisionTree) -> bool {
        self.vars.iter().all(|(name, c)| match c {
            VarConstraint::Numeric(r) => match tree.variable(name).map(VariableSpec::kind) {
                Some(VarKind::Numeric { grid, .. }) => grid.iter().any(|g| r.contains(*g)),
                _ => false,
            },
            other => other.is_satisfiable(),
        })
    }

    pub fn first_unsatisfiable(&self) -> Option<&str> {
        self.vars
            .iter()
            .find(|(_, c)| !c.is_satisfiable())
            .map(|(n, _)| n.as_str())
    }
}

impl fmt::Display for ConstraintSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (n, c)) in self.vars.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{n}∈{c}")?;
        }
        Ok(())
    }
}

/// One root-to-leaf path in depth-first (then before else) order.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSpec {
    pub path_id: usize,
    pub steps: Vec<PathStep>,
    pub leaf_output_index: usize,
    pub constraints: ConstraintSet,
    /// Node locator of the leaf, e.g. `root.then.else`.
    pub locator: String,
}

impl PathSpec {
    pub fn is_satisfiable(&self) -> bool {
        self.constraints.is_satisfiable()
    }
}

pub fn enumerate_paths(tree: &DecisionTree) -> Vec<PathSpec> {
    fn walk(
        node: &Node,
        steps: &mut Vec<PathStep>,
        cs: ConstraintSet,
        locator: &mut String,
        out: &mut Vec<PathSpec>,
    ) {
        match node {
            Node::Leaf(i) => out.push(PathSpec {
                path_id: out.len(),
                steps: steps.clone(),
                leaf_output_index: *i,
                constraints: cs,
                locator: locator.clone(),
            }),
            Node::Branch { predicate, then_node, else_node } => {
                for (taken, child, suffix) in [(true, then_node, ".then"), (false, else_node, ".else")] {
                    steps.push(PathStep {
                        predicate: predicate.clone(),
                        taken,
                    });
                    locator.push_str(suffix);
                    walk(child, steps, cs.with(predicate, taken), locator, out);
                    locator.truncate(locator.len() - suffix.len());
                    steps.pop();
                }
            }
        }
    }
    let mut out = Vec::new();
    let mut locator = String::from("root");
    walk(tree.root(), &mut Vec::new(), ConstraintSet::unconstrained(tree), &mut locator, &mut out);
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown path id {0}")]
pub struct UnknownPath(pub usize);

pub fn path_constraints(tree: &DecisionTree, path_id: usize) -> Result<ConstraintSet, UnknownPath> {
    enumerate_paths(tree)
        .into_iter()
        .nth(path_id)
        .map(|p| p.constraints)
        .ok_or(UnknownPath(path_id))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    Error,
    Warning,
}

impl Severity {
    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Error => "error",
            Severity::Warning => "warning",
        }
    }
}

/// Finding codes.
pub mod codes {
    pub const DEAD_BRANCH: &str = "dead_branch";
    pub const UNUSED_VARIABLE: &str = "unused_variable";
    pub const DUPLICATE_OUTPUT: &str = "duplicate_output";
    pub const GRID_UNSATISFIABLE: &str = "grid_unsatisfiable";
    pub const UNREACHABLE_OUTPUT: &str = "unreachable_output";
    pub const NO_ACTION_UNSET: &str = "no_action_unset";
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finding {
    pub severity: Severity,
    pub code: &'static str,
    pub message: String,
    pub locator: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub ok: bool,
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    fn from_findings(findings: Vec<Finding>) -> Self {
        ValidationReport {
            ok: !findings.iter().any(|f| f.severity == Severity::Error),
            findings,
        }
    }

    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Error)
    }

    pub fn has(&self, code: &str) -> bool {
        self.findings.iter().any(|f| f.code == code)
    }

    pub fn to_json(&self) -> Json {
        Obj::new()
            .field("ok", self.ok)
            .field(
                "findings",
                self.findings
                    .iter()
                    .map(|f| {
                        Obj::new()
                            .field("severity", f.severity.as_str())
                            .field("code", f.code)
                            .field("message", f.message.clone())
                            .field("locator", f.locator.clone())
                            .build()
                    })
                    .collect::<Vec<_>>(),
            )
            .build()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.findings.is_empty() {
            return f.write_str("ok");
        }
        for (i, x) in self.findings.iter().enumerate() {
            if i > 0 {
                f.write_str("\n")?;
            }
            write!(f, "{} {} at {}: {}", x.severity.as_str(), x.code, x.locator, x.message)?;
        }
        Ok(())
    }
}

/// Mechanical checks on a constructed tree.
pub fn validate_tree(tree: &DecisionTree) -> ValidationReport {
    let mut findings = Vec::new();
    let mut reached_outputs = BTreeSet::new();

    fn walk(
        tree: &DecisionTree,
        node: &Node,
        cs: &ConstraintSet,
        locator: &mut String,
        reached: &mut BTreeSet<usize>,
        findings: &mut Vec<Finding>,
    ) {
        match node {
            Node::Leaf(i) => {
                reached.insert(*i);
                if !cs.grid_satisfiable(tree) {
                    findings.push(Finding {
                        severity: Severity::Warning,
                        code: codes::GRID_UNSATISFIABLE,
                        message: format!("path to leaf {i} admits no grid point: {cs}"),
                        locator: locator.clone(),
                    });
                }
            }
            Node::Branch { predicate, then_node, else_node } => {
                for (taken, child, suffix) in [(true, then_node, ".then"), (false, else_node, ".else")] {
                    let next = cs.with(predicate, taken);
                    locator.push_str(suffix);
                    if next.is_satisfiable() {
                        walk(tree, child, &next, locator, reached, findings);
                    } else {
                        let var = next.first_unsatisfiable().unwrap_or(&predicate.var);
                        let before = cs.get(var).map(|c| c.to_string()).unwrap_or_default();
                        findings.push(Finding {
                            severity: Severity::Error,
                            code: codes::DEAD_BRANCH,
                            message: format!(
                                "dead branch: `{predicate}` {} is unsatisfiable with {var}∈{before}",
                                if taken { "true" } else { "false" }
                            ),
                            locator: locator.clone(),
                        });
                    }
                    locator.truncate(locator.len() - suffix.len());
                }
            }
        }
    }

    let mut locator = String::from("root");
    walk(
        tree,
        tree.root(),
        &ConstraintSet::unconstrained(tree),
        &mut locator,
        &mut reached_outputs,
        &mut findings,
    );

    let used = tree.used_variables();
    for v in tree.variables() {
        if !used.contains(v.name()) {
            findings.push(Finding {
                severity: Severity::Error,
                code: codes::UNUSED_VARIABLE,
                message: format!("unused variable {:?}", v.name()),
                locator: format!("variables.{}", v.name()),
            });
        }
    }

    let mut seen = BTreeSet::new();
    for (i, label) in tree.outputs().iter().enumerate() {
        if !seen.insert(label.as_str()) {
            findings.push(Finding {
                severity: Severity::Error,
                code: codes::DUPLICATE_OUTPUT,
                message: format!("duplicate output label {label:?}"),
                locator: format!("outputs[{i}]"),
            });
        }
    }

    for (i, label) in tree.outputs().iter().enumerate() {
        if !reached_outputs.contains(&i) {
            findings.push(Finding {
                severity: Severity::Warning,
                code: codes::UNREACHABLE_OUTPUT,
                message: format!("output {label:?} is never reached"),
                locator: format!("outputs[{i}]"),
            });
        }
    }

    if tree.no_action_index().is_none() {
        findings.push(Finding {
            severity: Severity::Warning,
            code: codes::NO_ACTION_UNSET,
            message: "no_action_index is null; output balancing is disabled".into(),
            locator: "no_action_index".into(),
        });
    }

    ValidationReport::from_findings(findings)
}
