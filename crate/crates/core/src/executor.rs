//! Tree execution with path tracing, partial evaluation over incomplete
//! assignments, and abduction of hidden values.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::model::{
    merge_assignments, AbductionClass, Assignment, DecisionTree, ExecutionPath, ModelError, Node, PathStep,
};
use crate::tree_format::ConstraintSet;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("incomplete assignment; missing {}", .0.join(", "))]
    Incomplete(Vec<String>),
    #[error(transparent)]
    Invalid(#[from] ModelError),
    #[error("label {0:?} is not an output of this tree")]
    UnknownLabel(String),
    #[error("variable {0:?} is both observed and hidden")]
    OverlappingPartition(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionResult {
    pub output_label: String,
    pub output_index: usize,
    pub path: ExecutionPath,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResidualResult {
    Decided(ExecutionResult),
    Undecided {
        /// Leaf output indices reachable under some completion.
        reachable: BTreeSet<usize>,
        /// Unassigned variables consulted on live branches.
        blocking: BTreeSet<String>,
    },
}

/// Evaluates the tree on a complete assignment.
pub fn execute(tree: &DecisionTree, x: &Assignment) -> Result<ExecutionResult, ExecError> {
    tree.check_assignment(x)?;
    let missing = tree.missing_variables(x);
    if !missing.is_empty() {
        return Err(ExecError::Incomplete(missing));
    }
    match walk_assigned(tree, x) {
        (Some(index), path) => Ok(result(tree, index, path)),
        (None, _) => unreachable!("complete assignment resolves every predicate"),
    }
}

fn result(tree: &DecisionTree, index: usize, path: ExecutionPath) -> ExecutionResult {
    ExecutionResult {
        output_label: tree.outputs()[index].clone(),
        output_index: index,
        path,
    }
}

/// Follows assigned predicates from the root. Returns the leaf when reached,
/// otherwise `None` and stops at the first unassigned predicate.
fn walk_assigned(tree: &DecisionTree, x: &Assignment) -> (Option<usize>, ExecutionPath) {
    let (end, path) = walk_to_first_unresolved(tree.root(), x);
    match end {
        Node::Leaf(i) => (Some(*i), path),
        Node::Branch { .. } => (None, path),
    }
}

fn walk_to_first_unresolved<'t>(mut node: &'t Node, x: &Assignment) -> (&'t Node, ExecutionPath) {
    let mut path = ExecutionPath::default();
    while let Node::Branch { predicate, then_node, else_node } = node {
        let Some(value) = x.get(&predicate.var) else {
            break;
        };
        let taken = predicate.evaluate(value);
        path.steps.push(PathStep {
            predicate: predicate.clone(),
            taken,
        });
        node = if taken { then_node } else { else_node };
    }
    (node, path)
}

/// Evaluates as far as the assignment allows.
pub fn partial_execute(tree: &DecisionTree, x: &Assignment) -> Result<ResidualResult, ExecError> {
    tree.check_assignment(x)?;
    let (stop, path) = walk_to_first_unresolved(tree.root(), x);
    if let Node::Leaf(i) = stop {
        return Ok(ResidualResult::Decided(result(tree, *i, path)));
    }

    fn explore(
        node: &Node,
        x: &Assignment,
        cs: &ConstraintSet,
        reachable: &mut BTreeSet<usize>,
        blocking: &mut BTreeSet<String>,
    ) {
        match node {
            Node::Leaf(i) => {
                reachable.insert(*i);
            }
            Node::Branch { predicate, then_node, else_node } => match x.get(&predicate.var) {
                Some(value) => {
                    let child = if predicate.evaluate(value) { then_node } else { else_node };
                    explore(child, x, cs, reachable, blocking);
                }
                None => {
                    blocking.insert(predicate.var.clone());
                    for (taken, child) in [(true, then_node), (false, else_node)] {
                        let next = cs.with(predicate, taken);
                        if next.is_satisfiable() {
                            explore(child, x, &next, reachable, blocking);
                        }
                    }
                }
            },
        }
    }

    let mut reachable = BTreeSet::new();
    let mut blocking = BTreeSet::new();
    explore(stop, x, &ConstraintSet::unconstrained(tree), &mut reachable, &mut blocking);
    Ok(ResidualResult::Undecided { reachable, blocking })
}

/// All complete hidden assignments (grid values for numerics) that reproduce
/// `y_obs` together with `observed`.
pub fn abduce(
    tree: &DecisionTree,
    observed: &Assignment,
    hidden_names: &BTreeSet<String>,
    y_obs: &str,
) -> Result<AbductionClass, ExecError> {
    let targets: BTreeSet<usize> = tree
        .outputs()
        .iter()
        .enumerate()
        .filter(|(_, o)| *o == y_obs)
        .map(|(i, _)| i)
        .collect();
    if targets.is_empty() {
        return Err(ExecError::UnknownLabel(y_obs.to_string()));
    }
    tree.check_assignment(observed)?;
    let mut domains = Vec::with_capacity(hidden_names.len());
    for name in hidden_names {
        if observed.contains(name) {
            return Err(ExecError::OverlappingPartition(name.clone()));
        }
        let spec = tree
            .variable(name)
            .ok_or_else(|| ModelError::UnknownVariable(name.clone()))?;
        domains.push((name.clone(), spec.enumeration_domain()));
    }
    let missing: Vec<String> = tree
        .missing_variables(observed)
        .into_iter()
        .filter(|n| !hidden_names.contains(n))
        .collect();
    if !missing.is_empty() {
        return Err(ExecError::Incomplete(missing));
    }

    struct Search<'a> {
        tree: &'a DecisionTree,
        observed: &'a Assignment,
        domains: &'a [(String, Vec<crate::model::Value>)],
        targets: &'a BTreeSet<usize>,
        class: AbductionClass,
    }

    impl Search<'_> {
        fn run(&mut self, k: usize, hidden: &mut Assignment) -> Result<(), ExecError> {
            let merged = merge_assignments(self.observed, hidden)?;
            match partial_execute(self.tree, &merged)? {
                ResidualResult::Decided(r) => {
                    if self.targets.contains(&r.output_index) {
                        self.add_completions(k, hidden);
                    }
                }
                ResidualResult::Undecided { reachable, .. } => {
                    if reachable.is_disjoint(self.targets) {
                        return Ok(());
                    }
                    let (name, domain) = &self.domains[k];
                    for v in domain {
                        hidden.insert(name.clone(), v.clone());
                        self.run(k + 1, hidden)?;
                        hidden.remove(name);
                    }
                }
            }
            Ok(())
        }

        fn add_completions(&mut self, k: usize, hidden: &mut Assignment) {
            if k == self.domains.len() {
                self.class.0.insert(hidden.clone());
                return;
            }
            let (name, domain) = &self.domains[k];
            for v in domain {
                hidden.insert(name.clone(), v.clone());
                self.add_completions(k + 1, hidden);
                hidden.remove(name);
            }
        }
    }

    let mut search = Search {
        tree,
        observed,
        domains: &domains,
        targets: &targets,
        class: AbductionClass::default(),
    };
    search.run(0, &mut Assignment::new())?;
    Ok(search.class)
}

/// True when `observed ∪ hidden` executes to `y_obs`.
pub fn check_consistency(
    tree: &DecisionTree,
    observed: &Assignment,
    hidden: &Assignment,
    y_obs: &str,
) -> Result<bool, ExecError> {
    let merged = merge_assignments(observed, hidden)?;
    Ok(execute(tree, &merged)?.output_label == y_obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::t1;
    use crate::model::Value;

    fn a(pairs: &[(&str, Value)]) -> Assignment {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    fn names(ns: &[&str]) -> BTreeSet<String> {
        ns.iter().map(|s| s.to_string()).collect()
    }

    fn steps(path: &ExecutionPath) -> String {
        path.to_string()
    }

    #[test]
    fn execute_t1_examples() {
        let t = t1();
        let r = execute(&t, &a(&[("age", 70.0.into()), ("ldl", 200.0.into()), ("diabetes", false.into())])).unwrap();
        assert_eq!(r.output_label, "high-intensity statin");
        assert_eq!(steps(&r.path), "[age ≥ 50:T, ldl ≥ 190:T]");

        let r = execute(&t, &a(&[("age", 40.0.into()), ("ldl", 80.0.into()), ("diabetes", false.into())])).unwrap();
        assert_eq!(r.output_label, "no-action");
        assert_eq!(steps(&r.path), "[age ≥ 50:F, diabetes:F]");

        let r = execute(&t, &a(&[("age", 70.0.into()), ("ldl", 130.0.into()), ("diabetes", true.into())])).unwrap();
        assert_eq!(r.output_label, "moderate-intensity statin");
        assert_eq!(steps(&r.path), "[age ≥ 50:T, ldl ≥ 190:F, diabetes:T]");
        assert_eq!(r.path.replay(t.root()), Some(r.output_index));
    }

    #[test]
    fn execute_rejects_incomplete_and_mistyped() {
        let t = t1();
        match execute(&t, &a(&[("age", 70.0.into())])) {
            Err(ExecError::Incomplete(missing)) => assert_eq!(missing, vec!["diabetes", "ldl"]),
            other => panic!("{other:?}"),
        }
        let bad = a(&[("age", true.into()), ("ldl", 80.0.into()), ("diabetes", false.into())]);
        assert!(matches!(execute(&t, &bad), Err(ExecError::Invalid(_))));
        let out_of_range = a(&[("age", 101.0.into()), ("ldl", 80.0.into()), ("diabetes", false.into())]);
        assert!(matches!(execute(&t, &out_of_range), Err(ExecError::Invalid(_))));
        // Off-grid but in range is executable.
        let off_grid = a(&[("age", 51.5.into()), ("ldl", 80.0.into()), ("diabetes", true.into())]);
        assert_eq!(execute(&t, &off_grid).unwrap().output_index, 1);
    }

    #[test]
    fn partial_execute_examples() {
        let t = t1();
        match partial_execute(&t, &a(&[("age", 70.0.into()), ("ldl", 200.0.into())])).unwrap() {
            ResidualResult::Decided(r) => assert_eq!(r.output_label, "high-intensity statin"),
            other => panic!("{other:?}"),
        }
        assert_eq!(
            partial_execute(&t, &a(&[("age", 70.0.into()), ("ldl", 130.0.into())])).unwrap(),
            ResidualResult::Undecided {
                reachable: [1, 2].into_iter().collect(),
                blocking: names(&["diabetes"]),
            }
        );
        assert_eq!(
            partial_execute(&t, &Assignment::new()).unwrap(),
            ResidualResult::Undecided {
                reachable: [0, 1, 2].into_iter().collect(),
                blocking: names(&["age", "diabetes", "ldl"]),
            }
        );
    }

    #[test]
    fn partial_execute_prunes_contradictory_branches() {
        use crate::fixtures::tree_with_root;
        use crate::model::{Literal, Op, Predicate, VariableSpec};
        // x ≥ 50 then x < 40 → the inner then-leaf is unreachable
        let t = tree_with_root(
            vec![VariableSpec::numeric("x", None, 0.0, 100.0, vec![30.0, 60.0]).unwrap()],
            Node::branch(
                Predicate::new("x", Op::Ge, Literal::Num(50.0)),
                Node::branch(Predicate::new("x", Op::Lt, Literal::Num(40.0)), Node::Leaf(0), Node::Leaf(1)),
                Node::Leaf(1),
            ),
        );
        match partial_execute(&t, &Assignment::new()).unwrap() {
            ResidualResult::Undecided { reachable, .. } => assert_eq!(reachable, [1].into_iter().collect()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn abduce_examples() {
        let t = t1();
        let class = abduce(
            &t,
            &a(&[("age", 70.0.into()), ("ldl", 130.0.into())]),
            &names(&["diabetes"]),
            "moderate-intensity statin",
        )
        .unwrap();
        assert_eq!(class, [a(&[("diabetes", true.into())])].into_iter().collect());

        let class = abduce(
            &t,
            &a(&[("age", 70.0.into()), ("diabetes", false.into())]),
            &names(&["ldl"]),
            "no-action",
        )
        .unwrap();
        assert_eq!(
            class,
            [a(&[("ldl", 80.0.into())]), a(&[("ldl", 130.0.into())])].into_iter().collect()
        );

        let class = abduce(
            &t,
            &a(&[("age", 70.0.into()), ("ldl", 200.0.into())]),
            &names(&["diabetes"]),
            "no-action",
        )
        .unwrap();
        assert!(class.is_empty());
    }

    #[test]
    fn abduce_decided_prefix_expands_to_full_domain() {
        let t = t1();
        let class = abduce(
            &t,
            &a(&[("age", 70.0.into()), ("ldl", 200.0.into())]),
            &names(&["diabetes"]),
            "high-intensity statin",
        )
        .unwrap();
        assert_eq!(class.len(), 2);
    }

    #[test]
    fn abduce_errors() {
        let t = t1();
        let obs = a(&[("age", 70.0.into()), ("ldl", 130.0.into())]);
        assert_eq!(
            abduce(&t, &obs, &names(&["diabetes"]), "statin"),
            Err(ExecError::UnknownLabel("statin".into()))
        );
        assert!(matches!(
            abduce(&t, &obs, &names(&["ldl", "diabetes"]), "no-action"),
            Err(ExecError::OverlappingPartition(_))
        ));
        assert!(matches!(
            abduce(&t, &a(&[("age", 70.0.into())]), &names(&["diabetes"]), "no-action"),
            Err(ExecError::Incomplete(_))
        ));
    }

    #[test]
    fn consistency_examples() {
        let t = t1();
        let obs = a(&[("age", 70.0.into()), ("ldl", 130.0.into())]);
        assert!(check_consistency(&t, &obs, &a(&[("diabetes", true.into())]), "moderate-intensity statin").unwrap());
        assert!(!check_consistency(&t, &obs, &a(&[("diabetes", false.into())]), "moderate-intensity statin").unwrap());
        assert!(matches!(
            check_consistency(&t, &obs, &Assignment::new(), "no-action"),
            Err(ExecError::Incomplete(_))
        ));
    }
}
