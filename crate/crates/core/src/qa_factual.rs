//! Factual QA synthesis with root-to-leaf path coverage and a cap on the
//! share of no-action outputs.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde_json::Value as Json;
use thiserror::Error;

use crate::canon::{self, Obj};
use crate::executor::{execute, ExecError};
use crate::model::{Assignment, DecisionTree, ExecutionPath, Value, VarKind};
use crate::records::{
    assignment_from_json, assignment_to_json, field_err, opt_string_json, path_from_json, path_to_json, Rec,
    RecordError,
};
use crate::tree_format::{enumerate_paths, ConstraintSet, PathSpec, VarConstraint};

pub const DEFAULT_NO_ACTION_CAP: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SampleError {
    #[error("unknown path id {0}")]
    UnknownPath(usize),
    #[error("path {0} is unsatisfiable")]
    Unsatisfiable(usize),
    #[error("tree {0:?} has no satisfiable path")]
    NoSatisfiablePath(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactualConfig {
    pub seed: u64,
    /// Target instances per satisfiable path.
    pub per_path: usize,
    pub no_action_cap: f64,
}

impl Default for FactualConfig {
    fn default() -> Self {
        FactualConfig {
            seed: 0,
            per_path: 1,
            no_action_cap: DEFAULT_NO_ACTION_CAP,
        }
    }
}

impl FactualConfig {
    pub fn check(&self) -> Result<(), SampleError> {
        if self.per_path == 0 {
            return Err(SampleError::Config("per_path must be positive".into()));
        }
        check_cap(self.no_action_cap)
    }
}

pub(crate) fn check_cap(cap: f64) -> Result<(), SampleError> {
    if cap > 0.0 && cap <= 1.0 {
        Ok(())
    } else {
        Err(SampleError::Config(format!("no_action_cap {cap} must lie in (0, 1]")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactualInstance {
    pub instance_id: String,
    pub tree_id: String,
    pub assignment: Assignment,
    pub label: String,
    pub path_id: usize,
    pub path: ExecutionPath,
    pub question_text: Option<String>,
    pub rationale_text: Option<String>,
}

impl FactualInstance {
    pub fn to_json(&self) -> Json {
        Obj::new()
            .field("instance_id", self.instance_id.clone())
            .field("tree_id", self.tree_id.clone())
            .field("type", "factual")
            .field("assignment", assignment_to_json(&self.assignment))
            .field("label", self.label.clone())
            .field("path_id", self.path_id as u64)
            .field("path", path_to_json(&self.path))
            .field("question_text", opt_string_json(&self.question_text))
            .field("rationale_text", opt_string_json(&self.rationale_text))
            .build()
    }

    pub fn to_canonical(&self) -> String {
        canon::to_string(&self.to_json())
    }

    pub fn from_json(v: &Json) -> Result<Self, RecordError> {
        let r = Rec::parse(v)?;
        r.expect_type("factual")?;
        Ok(FactualInstance {
            instance_id: r.string("instance_id")?,
            tree_id: r.string("tree_id")?,
            assignment: assignment_from_json(r.get("assignment")?, "assignment")?,
            label: r.string("label")?,
            path_id: r.index("path_id")?,
            path: path_from_json(r.get("path")?, "path")?,
            question_text: r.opt_string("question_text")?,
            rationale_text: r.opt_string("rationale_text")?,
        })
    }

    /// Re-executes the assignment and compares label, path and path id.
    pub fn verify(&self, tree: &DecisionTree) -> Result<(), RecordError> {
        if self.tree_id != tree.id() {
            return Err(field_err("tree_id", format!("expected {:?}", tree.id())));
        }
        let r = execute(tree, &self.assignment).map_err(|e| field_err("assignment", e.to_string()))?;
        if r.output_label != self.label {
            return Err(field_err("label", format!("re-execution gives {:?}", r.output_label)));
        }
        if r.path != self.path {
            return Err(field_err("path", format!("re-execution gives {}", r.path)));
        }
        let paths = enumerate_paths(tree);
        match paths.get(self.path_id) {
            Some(p) if p.steps == r.path.steps => Ok(()),
            _ => Err(field_err("path_id", "does not match the executed path")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactualSet {
    pub instances: Vec<FactualInstance>,
    /// Set when coverage prevented reaching the no-action cap.
    pub balance_infeasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceOutcome<T> {
    pub instances: Vec<T>,
    pub infeasible: bool,
}

fn draw_numeric(range: &crate::tree_format::NumericRange, grid: &[f64], rng: &mut impl Rng) -> f64 {
    if let Some(p) = range.pinned {
        if range.contains(p) {
            return p;
        }
    }
    let inside: Vec<f64> = grid.iter().copied().filter(|g| range.contains(*g)).collect();
    if let Some(g) = inside.choose(rng) {
        return *g;
    }
    if range.lo == range.hi {
        return range.lo;
    }
    let nudge = (range.hi - range.lo) / 1000.0;
    let mut mid = (range.lo + range.hi) / 2.0;
    while !range.contains(mid) {
        mid += nudge;
    }
    mid
}

pub(crate) fn sample_from_constraints(
    tree: &DecisionTree,
    cs: &ConstraintSet,
    rng: &mut impl Rng,
) -> Assignment {
    let mut x = Assignment::new();
    for spec in tree.variables() {
        let value = match (cs.get(spec.name()), spec.kind()) {
            (Some(VarConstraint::Boolean(set)), _) => {
                let opts: Vec<bool> = set.iter().copied().collect();
                Value::Bool(*opts.choose(rng).expect("satisfiable boolean set"))
            }
            (Some(VarConstraint::Categorical(vals)), _) => {
                Value::Cat(vals.choose(rng).expect("satisfiable categorical set").clone())
            }
            (Some(VarConstraint::Numeric(range)), VarKind::Numeric { grid, .. }) => {
                Value::num(draw_numeric(range, grid, rng))
            }
            _ => unreachable!("constraint set mirrors the declared variables"),
        };
        x.insert(spec.name(), value);
    }
    x
}

/// Number of distinct assignments the sampler can produce for a path.
fn sample_capacity(tree: &DecisionTree, cs: &ConstraintSet) -> usize {
    tree.variables().iter().fold(1usize, |acc, spec| {
        let n = match (cs.get(spec.name()), spec.kind()) {
            (Some(VarConstraint::Boolean(s)), _) => s.len(),
            (Some(VarConstraint::Categorical(v)), _) => v.len(),
            (Some(VarConstraint::Numeric(r)), VarKind::Numeric { grid, .. }) => {
                grid.iter().filter(|g| r.contains(**g)).count().max(1)
            }
            _ => 1,
        };
        acc.saturating_mul(n)
    })
}

fn path_rng(tree: &DecisionTree, path_id: usize, draw_index: usize, seed: u64) -> rand_chacha::ChaCha8Rng {
    canon::rng_for(
        "factual-sample",
        &[tree.id(), &path_id.to_string(), &draw_index.to_string()],
        seed,
    )
}

/// Deterministic draw of an assignment that follows `path_id`.
pub fn sample_assignment_for_path(
    tree: &DecisionTree,
    path_id: usize,
    draw_index: usize,
    seed: u64,
) -> Result<Assignment, SampleError> {
    let paths = enumerate_paths(tree);
    let path = paths.get(path_id).ok_or(SampleError::UnknownPath(path_id))?;
    if !path.is_satisfiable() {
        return Err(SampleError::Unsatisfiable(path_id));
    }
    Ok(sample_from_constraints(
        tree,
        &path.constraints,
        &mut path_rng(tree, path_id, draw_index, seed),
    ))
}

fn instances_for_path(
    tree: &DecisionTree,
    path: &PathSpec,
    cfg: &FactualConfig,
) -> Result<Vec<FactualInstance>, SampleError> {
    let want = cfg.per_path.min(sample_capacity(tree, &path.constraints));
    let max_draws = cfg.per_path.saturating_mul(8).saturating_add(8);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for draw in 0..max_draws {
        if out.len() >= want {
            break;
        }
        let mut rng = path_rng(tree, path.path_id, draw, cfg.seed);
        let x = sample_from_constraints(tree, &path.constraints, &mut rng);
        if !seen.insert(x.clone()) {
            continue;
        }
        let r = execute(tree, &x)?;
        debug_assert_eq!(r.path.steps, path.steps);
        out.push(FactualInstance {
            instance_id: format!("{}:f:{}:{}", tree.id(), path.path_id, draw),
            tree_id: tree.id().to_string(),
            assignment: x,
            label: r.output_label,
            path_id: path.path_id,
            path: r.path,
            question_text: None,
            rationale_text: None,
        });
    }
    Ok(out)
}

/// Samples every satisfiable path, then applies [`balance_outputs`].
pub fn generate_factual_set(tree: &DecisionTree, cfg: &FactualConfig) -> Result<FactualSet, SampleError> {
    cfg.check()?;
    let mut instances = Vec::new();
    let mut any = false;
    for path in enumerate_paths(tree).iter().filter(|p| p.is_satisfiable()) {
        any = true;
        instances.extend(instances_for_path(tree, path, cfg)?);
    }
    if !any {
        return Err(SampleError::NoSatisfiablePath(tree.id().to_string()));
    }
    let balanced = balance_outputs(instances, tree, cfg.no_action_cap, cfg.seed);
    Ok(FactualSet {
        instances: balanced.instances,
        balance_infeasible: balanced.infeasible,
    })
}

/// Drops seeded-random no-action instances until their share is at most
/// `cap`, never removing the last instance of a path.
pub fn balance_outputs(
    instances: Vec<FactualInstance>,
    tree: &DecisionTree,
    cap: f64,
    seed: u64,
) -> BalanceOutcome<FactualInstance> {
    let Some(no_action) = tree.no_action_label().map(str::to_string) else {
        return BalanceOutcome {
            instances,
            infeasible: false,
        };
    };
    let mut rng = canon::rng_for("factual-balance", &[tree.id()], seed);
    balance_by(instances, |i| i.label == no_action, |i| i.path_id, cap, &mut rng)
}

/// Generic capped removal; `key` groups items whose last member must survive.
pub(crate) fn balance_by<T, K: Ord>(
    items: Vec<T>,
    is_no_action: impl Fn(&T) -> bool,
    key: impl Fn(&T) -> K,
    cap: f64,
    rng: &mut impl Rng,
) -> BalanceOutcome<T> {
    let mut total = items.len();
    let mut order: Vec<usize> = (0..items.len()).filter(|&i| is_no_action(&items[i])).collect();
    let mut no_action = order.len();
    let over = |na: usize, total: usize| na as f64 > cap * total as f64;
    if !over(no_action, total) {
        return BalanceOutcome {
            instances: items,
            infeasible: false,
        };
    }
    order.shuffle(rng);
    let mut group_sizes: BTreeMap<K, usize> = BTreeMap::new();
    for item in &items {
        *group_sizes.entry(key(item)).or_default() += 1;
    }
    let mut keep = vec![true; items.len()];
    for i in order {
        if !over(no_action, total) {
            break;
        }
        let size = group_sizes.get_mut(&key(&items[i])).expect("group exists");
        if *size > 1 {
            *size -= 1;
            keep[i] = false;
            no_action -= 1;
            total -= 1;
        }
    }
    BalanceOutcome {
        infeasible: over(no_action, total),
        instances: items
            .into_iter()
            .zip(keep)
            .filter_map(|(item, k)| k.then_some(item))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{self, t1};
    use crate::model::{Literal, Node, Op, Predicate, VariableSpec};

    #[test]
    fn sample_respects_path_constraints() {
        let t = t1();
        for draw in 0..20 {
            let x = sample_assignment_for_path(&t, 0, draw, 3).unwrap();
            assert_eq!(x.get("ldl"), Some(&Value::num(200.0)));
            let age = x.get("age").unwrap().as_f64().unwrap();
            assert!(age == 55.0 || age == 70.0);
        }
        let ages: BTreeSet<_> = (0..40)
            .map(|d| sample_assignment_for_path(&t, 0, d, 3).unwrap().get("age").cloned().unwrap())
            .collect();
        assert_eq!(ages.len(), 2, "both admissible grid values should appear");
        assert_eq!(sample_assignment_for_path(&t, 9, 0, 0), Err(SampleError::UnknownPath(9)));
    }

    #[test]
    fn sample_is_deterministic() {
        let t = t1();
        for p in 0..5 {
            assert_eq!(
                sample_assignment_for_path(&t, p, 4, 11).unwrap(),
                sample_assignment_for_path(&t, p, 4, 11).unwrap()
            );
        }
    }

    #[test]
    fn eq_pin_is_used_verbatim() {
        let t = fixtures::tree_with_root(
            vec![VariableSpec::numeric("x", None, 0.0, 10.0, vec![1.0, 2.0]).unwrap()],
            Node::branch(Predicate::new("x", Op::Eq, Literal::Num(5.0)), Node::Leaf(0), Node::Leaf(1)),
        );
        for d in 0..5 {
            assert_eq!(sample_assignment_for_path(&t, 0, d, 0).unwrap().get("x"), Some(&Value::num(5.0)));
        }
    }

    #[test]
    fn grid_unsatisfiable_interval_uses_midpoint() {
        let t = fixtures::tree_with_root(
            vec![VariableSpec::numeric("x", None, 0.0, 100.0, vec![40.0, 55.0, 70.0]).unwrap()],
            Node::branch(
                Predicate::new("x", Op::Gt, Literal::Num(62.5)),
                Node::branch(Predicate::new("x", Op::Lt, Literal::Num(64.0)), Node::Leaf(0), Node::Leaf(1)),
                Node::Leaf(1),
            ),
        );
        let x = sample_assignment_for_path(&t, 0, 0, 0).unwrap();
        assert_eq!(x.get("x"), Some(&Value::num(63.25)));
    }

    #[test]
    fn midpoint_skips_excluded_value() {
        // x ≠ 50 within [0,100] with no grid inside (grid = {100}, excluded by x < 100)
        let t = fixtures::tree_with_root(
            vec![VariableSpec::numeric("x", None, 0.0, 100.0, vec![100.0]).unwrap()],
            Node::branch(
                Predicate::new("x", Op::Lt, Literal::Num(100.0)),
                Node::branch(Predicate::new("x", Op::Eq, Literal::Num(50.0)), Node::Leaf(1), Node::Leaf(0)),
                Node::Leaf(1),
            ),
        );
        let x = sample_assignment_for_path(&t, 1, 0, 0).unwrap();
        assert_eq!(x.get("x"), Some(&Value::num(50.1)));
    }

    #[test]
    fn t1_one_per_path() {
        let t = t1();
        let set = generate_factual_set(&t, &FactualConfig::default()).unwrap();
        let ids: Vec<usize> = set.instances.iter().map(|i| i.path_id).collect();
        assert_eq!(ids, vec![0, 1, 2, 3, 4]);
        for inst in &set.instances {
            inst.verify(&t).unwrap();
        }
        assert_eq!(set.instances[0].instance_id, "t1:f:0:0");
    }

    #[test]
    fn t1_two_per_path() {
        let t = t1();
        let cfg = FactualConfig {
            per_path: 2,
            ..FactualConfig::default()
        };
        let set = generate_factual_set(&t, &cfg).unwrap();
        assert!(set.instances.len() <= 10);
        let ids: BTreeSet<usize> = set.instances.iter().map(|i| i.path_id).collect();
        assert_eq!(ids.len(), 5);
        let distinct: BTreeSet<_> = set.instances.iter().map(|i| i.assignment.clone()).collect();
        assert_eq!(distinct.len(), set.instances.len());
    }

    #[test]
    fn single_leaf_dedups_assignments() {
        let cfg = FactualConfig {
            per_path: 3,
            ..FactualConfig::default()
        };
        let set = generate_factual_set(&fixtures::single_leaf(), &cfg).unwrap();
        assert_eq!(set.instances.len(), 1);
        assert!(set.balance_infeasible);
    }

    fn fake(path_id: usize, label: &str) -> FactualInstance {
        FactualInstance {
            instance_id: format!("x:f:{path_id}"),
            tree_id: "t1".into(),
            assignment: Assignment::new(),
            label: label.into(),
            path_id,
            path: ExecutionPath::default(),
            question_text: None,
            rationale_text: None,
        }
    }

    #[test]
    fn balance_arithmetic() {
        // 6 no-action over paths 2 and 4 (3 each), 4 others
        let mut items = Vec::new();
        for _ in 0..3 {
            items.push(fake(2, "no-action"));
            items.push(fake(4, "no-action"));
        }
        for p in [0, 1, 3, 0] {
            items.push(fake(p, "other"));
        }
        let out = balance_outputs(items, &t1(), 0.5, 1);
        assert_eq!(out.instances.len(), 8);
        assert_eq!(out.instances.iter().filter(|i| i.label == "no-action").count(), 4);
        assert!(!out.infeasible);
    }

    #[test]
    fn balance_identity_without_no_action() {
        let items = vec![fake(0, "a"), fake(1, "b")];
        let out = balance_outputs(items.clone(), &t1(), 0.5, 1);
        assert_eq!(out.instances, items);
        let mut parts = fixtures::t1_parts();
        parts.no_action_index = None;
        let t = DecisionTree::new(parts).unwrap();
        let items = vec![fake(2, "no-action"), fake(4, "no-action")];
        assert_eq!(balance_outputs(items.clone(), &t, 0.5, 1).instances, items);
    }

    #[test]
    fn balance_coverage_outranks_cap() {
        let items = vec![fake(2, "no-action"), fake(4, "no-action"), fake(0, "other")];
        let out = balance_outputs(items.clone(), &t1(), 0.5, 1);
        assert_eq!(out.instances, items);
        assert!(out.infeasible);
    }

    #[test]
    fn balance_preserves_survivor_order() {
        let mut items = Vec::new();
        for p in [2, 2, 2, 2, 0] {
            items.push(fake(p, if p == 2 { "no-action" } else { "x" }));
        }
        for (i, it) in items.iter_mut().enumerate() {
            it.instance_id = format!("{i}");
        }
        let out = balance_outputs(items, &t1(), 0.5, 9);
        let ids: Vec<usize> = out.instances.iter().map(|i| i.instance_id.parse().unwrap()).collect();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(ids.len(), 2);
    }

    #[test]
    fn record_round_trip() {
        let t = t1();
        let set = generate_factual_set(&t, &FactualConfig::default()).unwrap();
        let inst = &set.instances[0];
        let text = inst.to_canonical();
        assert!(text.starts_with(r#"{"instance_id":"t1:f:0:0","tree_id":"t1","type":"factual","assignment":{"#));
        let back = FactualInstance::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(&back, inst);
        assert_eq!(back.to_canonical(), text);
    }

    #[test]
    fn config_bounds() {
        assert!(FactualConfig { per_path: 0, ..Default::default() }.check().is_err());
        assert!(FactualConfig { no_action_cap: 0.0, ..Default::default() }.check().is_err());
        assert!(FactualConfig { no_action_cap: 1.5, ..Default::default() }.check().is_err());
        assert!(FactualConfig { no_action_cap: 1.0, ..Default::default() }.check().is_ok());
    }
}
