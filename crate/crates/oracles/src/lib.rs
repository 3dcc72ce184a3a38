//! Exhaustive reference implementations used as test oracles.
//!
//! Evaluation here is a naive recursive walk written from the tree's data
//! alone; it never calls into the executor or the predicate evaluator of the
//! core crate.

use std::collections::{BTreeMap, BTreeSet};

use guidex_core::{AbductionClass, Assignment, DecisionTree, ExecutionPath, Literal, Node, Op, PathStep, Value, VarKind};
use thiserror::Error;

pub mod gen;

/// Largest enumeration the oracles will attempt.
pub const BUDGET: u128 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("enumeration of {0} assignments exceeds the oracle budget")]
    OverBudget(u128),
    #[error("assignment leaves {0:?} unassigned")]
    Unassigned(String),
    #[error("unknown variable {0:?}")]
    UnknownVariable(String),
}

fn candidates(kind: &VarKind) -> Vec<Value> {
    match kind {
        VarKind::Boolean => vec![Value::Bool(false), Value::Bool(true)],
        VarKind::Categorical { values } => values.iter().map(|v| Value::Cat(v.clone())).collect(),
        VarKind::Numeric { grid, .. } => grid.iter().map(|g| Value::Num(*g)).collect(),
    }
}

fn holds(op: Op, literal: &Literal, value: &Value) -> bool {
    match value {
        Value::Bool(v) => matches!(literal, Literal::Bool(b) if b == v),
        Value::Cat(v) => match literal {
            Literal::Str(s) => op == Op::Eq && s == v,
            Literal::Set(set) => op == Op::In && set.iter().any(|s| s == v),
            _ => false,
        },
        Value::Num(v) => {
            let Literal::Num(t) = literal else { return false };
            let ord = v.partial_cmp(t).expect("finite values");
            match op {
                Op::Lt => ord.is_lt(),
                Op::Le => ord.is_le(),
                Op::Gt => ord.is_gt(),
                Op::Ge => ord.is_ge(),
                Op::Eq => ord.is_eq(),
                _ => false,
            }
        }
    }
}

/// Walks the tree recursively, recording every decision.
pub fn naive_eval(node: &Node, x: &Assignment, trail: &mut Vec<PathStep>) -> Result<usize, OracleError> {
    match node {
        Node::Leaf(i) => Ok(*i),
        Node::Branch {
            predicate,
            then_node,
            else_node,
        } => {
            let value = x
                .get(&predicate.var)
                .ok_or_else(|| OracleError::Unassigned(predicate.var.clone()))?;
            let taken = holds(predicate.op, &predicate.value, value);
            trail.push(PathStep {
                predicate: predicate.clone(),
                taken,
            });
            naive_eval(if taken { then_node } else { else_node }, x, trail)
        }
    }
}

fn product(tree: &DecisionTree, names: &[String]) -> Result<Vec<Assignment>, OracleError> {
    let mut domains = Vec::new();
    let mut size: u128 = 1;
    for name in names {
        let spec = tree
            .variable(name)
            .ok_or_else(|| OracleError::UnknownVariable(name.clone()))?;
        let d = candidates(spec.kind());
        size = size.saturating_mul(d.len() as u128);
        domains.push((name.clone(), d));
    }
    if size > BUDGET {
        return Err(OracleError::OverBudget(size));
    }
    let mut rows = vec![Assignment::new()];
    for (name, domain) in domains {
        rows = rows
            .into_iter()
            .flat_map(|row| {
                domain
                    .iter()
                    .map(|v| row.clone().with(name.clone(), v.clone()))
                    .collect::<Vec<_>>()
            })
            .collect();
    }
    Ok(rows)
}

pub type ExecTable = BTreeMap<Assignment, (String, ExecutionPath)>;

/// Label and path for every assignment in the full enumeration domain.
pub fn brute_force_execute_table(tree: &DecisionTree) -> Result<ExecTable, OracleError> {
    let names: Vec<String> = tree.variables().iter().map(|v| v.name().to_string()).collect();
    let mut table = BTreeMap::new();
    for x in product(tree, &names)? {
        let mut trail = Vec::new();
        let leaf = naive_eval(tree.root(), &x, &mut trail)?;
        table.insert(x, (tree.outputs()[leaf].clone(), ExecutionPath { steps: trail }));
    }
    Ok(table)
}

/// Every hidden assignment that, joined with `observed`, yields `y_obs`.
pub fn brute_force_abduce(
    tree: &DecisionTree,
    observed: &Assignment,
    hidden_names: &BTreeSet<String>,
    y_obs: &str,
) -> Result<AbductionClass, OracleError> {
    let names: Vec<String> = hidden_names.iter().cloned().collect();
    let mut class = BTreeSet::new();
    for h in product(tree, &names)? {
        let mut full = observed.clone();
        for (k, v) in h.iter() {
            full.insert(k.clone(), v.clone());
        }
        let leaf = naive_eval(tree.root(), &full, &mut Vec::new())?;
        if tree.outputs()[leaf] == y_obs {
            class.insert(h);
        }
    }
    Ok(AbductionClass(class))
}

/// Distinct executed paths over the full enumeration domain.
pub fn reachable_paths(tree: &DecisionTree) -> Result<BTreeSet<Vec<(String, bool)>>, OracleError> {
    Ok(brute_force_execute_table(tree)?
        .values()
        .map(|(_, path)| path_key(path))
        .collect())
}

/// Comparable identity of a path: predicate text and polarity per step.
pub fn path_key(path: &ExecutionPath) -> Vec<(String, bool)> {
    path.steps.iter().map(|s| (s.predicate.to_string(), s.taken)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use guidex_core::fixtures::{single_leaf, t1, tree_with_root};
    use guidex_core::{Predicate, VariableSpec};

    #[test]
    fn t1_table_has_eighteen_rows() {
        let table = brute_force_execute_table(&t1()).unwrap();
        assert_eq!(table.len(), 18);
        let x = Assignment::new().with("age", 70.0).with("ldl", 200.0).with("diabetes", false);
        assert_eq!(table[&x].0, "high-intensity statin");
        assert_eq!(table[&x].1.to_string(), "[age ≥ 50:T, ldl ≥ 190:T]");
    }

    #[test]
    fn unused_boolean_gives_identical_rows() {
        let tree = tree_with_root(vec![VariableSpec::boolean("flag").unwrap()], Node::Leaf(0));
        let table = brute_force_execute_table(&tree).unwrap();
        assert_eq!(table.len(), 2);
        assert!(table.values().all(|(label, path)| label == "yes" && path.steps.is_empty()));
        assert_eq!(brute_force_execute_table(&single_leaf()).unwrap().len(), 1);
    }

    #[test]
    fn over_budget_is_rejected() {
        let vars: Vec<_> = (0..21).map(|i| VariableSpec::boolean(format!("b{i}")).unwrap()).collect();
        let root = Node::branch(Predicate::new("b0", Op::Is, Literal::Bool(true)), Node::Leaf(0), Node::Leaf(1));
        let tree = tree_with_root(vars, root);
        assert_eq!(brute_force_execute_table(&tree), Err(OracleError::OverBudget(1 << 21)));
    }

    #[test]
    fn abduction_examples() {
        let t = t1();
        let hidden: BTreeSet<String> = ["diabetes".to_string()].into();
        let observed = Assignment::new().with("age", 70.0).with("ldl", 130.0);
        let class = brute_force_abduce(&t, &observed, &hidden, "moderate-intensity statin").unwrap();
        assert_eq!(class.len(), 1);
        assert!(class.contains(&Assignment::new().with("diabetes", true)));

        let observed = Assignment::new().with("age", 70.0).with("diabetes", false);
        let ldl: BTreeSet<String> = ["ldl".to_string()].into();
        let class = brute_force_abduce(&t, &observed, &ldl, "no-action").unwrap();
        assert_eq!(class.len(), 2);

        let class = brute_force_abduce(&t, &Assignment::new().with("age", 40.0).with("diabetes", false), &ldl, "high-intensity statin").unwrap();
        assert!(class.is_empty());

        let off_path = Assignment::new().with("age", 40.0).with("diabetes", true);
        assert_eq!(brute_force_abduce(&t, &off_path, &ldl, "moderate-intensity statin").unwrap().len(), 3);
    }
}
