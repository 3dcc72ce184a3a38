//! Reference trees used throughout the examples and tests.
//!
//! `t1` is a three-variable statin recommendation:
//! `age ≥ 50 → (ldl ≥ 190 → high-intensity; else diabetes → moderate-intensity
//! else no-action); else diabetes → moderate-intensity else no-action`.

use chrono::NaiveDate;

use crate::model::{DecisionTree, Literal, Node, Op, Predicate, Source, TreeMetadata, TreeParts, VariableSpec};

/// Canonical document text of `t1`.
pub const T1_DOCUMENT: &str = include_str!("../testdata/t1.json");

pub fn metadata() -> TreeMetadata {
    TreeMetadata {
        disease_or_drug: "hypercholesterolemia".into(),
        age_group: "adult".into(),
        race: "any".into(),
        gender: "any".into(),
        publication_date: NaiveDate::from_ymd_opt(2018, 11, 10).expect("valid date"),
    }
}

pub fn source() -> Source {
    Source {
        guideline_id: "acc-aha-cholesterol".into(),
        chunk_id: "acc-aha-cholesterol#0".into(),
    }
}

pub fn t1_parts() -> TreeParts {
    let diabetes = || Predicate::new("diabetes", Op::Is, Literal::Bool(true));
    TreeParts {
        id: "t1".into(),
        source: source(),
        metadata: metadata(),
        variables: vec![
            VariableSpec::numeric("age", Some("years".into()), 18.0, 100.0, vec![40.0, 55.0, 70.0]).expect("age"),
            VariableSpec::boolean("diabetes").expect("diabetes"),
            VariableSpec::numeric("ldl", Some("mg/dL".into()), 0.0, 400.0, vec![80.0, 130.0, 200.0]).expect("ldl"),
        ],
        outputs: vec![
            "high-intensity statin".into(),
            "moderate-intensity statin".into(),
            "no-action".into(),
        ],
        no_action_index: Some(2),
        root: Node::branch(
            Predicate::new("age", Op::Ge, Literal::Num(50.0)),
            Node::branch(
                Predicate::new("ldl", Op::Ge, Literal::Num(190.0)),
                Node::Leaf(0),
                Node::branch(diabetes(), Node::Leaf(1), Node::Leaf(2)),
            ),
            Node::branch(diabetes(), Node::Leaf(1), Node::Leaf(2)),
        ),
    }
}

pub fn t1() -> DecisionTree {
    DecisionTree::new(t1_parts()).expect("t1 is well-formed")
}

/// A tree over `variables` with outputs `["yes", "no-action"]`.
pub fn tree_with_root(variables: Vec<VariableSpec>, root: Node) -> DecisionTree {
    DecisionTree::new(TreeParts {
        id: "fixture".into(),
        source: source(),
        metadata: metadata(),
        variables,
        outputs: vec!["yes".into(), "no-action".into()],
        no_action_index: Some(1),
        root,
    })
    .expect("fixture tree is well-formed")
}

/// One leaf, no variables.
pub fn single_leaf() -> DecisionTree {
    DecisionTree::new(TreeParts {
        id: "single".into(),
        source: source(),
        metadata: metadata(),
        variables: vec![],
        outputs: vec!["no-action".into()],
        no_action_index: Some(0),
        root: Node::Leaf(0),
    })
    .expect("single-leaf tree is well-formed")
}

/// Complete binary tree of the given depth over booleans `b0..b{depth-1}`;
/// leaf `i` (in depth-first order) gets output `i`.
pub fn full_boolean_tree(depth: usize) -> DecisionTree {
    fn build(level: usize, depth: usize, next: &mut usize) -> Node {
        if level == depth {
            let i = *next;
            *next += 1;
            return Node::Leaf(i);
        }
        let p = Predicate::new(format!("b{level}"), Op::Is, Literal::Bool(true));
        let t = build(level + 1, depth, next);
        let e = build(level + 1, depth, next);
        Node::branch(p, t, e)
    }
    let mut next = 0;
    let root = build(0, depth, &mut next);
    DecisionTree::new(TreeParts {
        id: format!("full{depth}"),
        source: source(),
        metadata: metadata(),
        variables: (0..depth)
            .map(|i| VariableSpec::boolean(format!("b{i}")).expect("valid name"))
            .collect(),
        outputs: (0..next).map(|i| format!("out{i}")).collect(),
        no_action_index: None,
        root,
    })
    .expect("full tree is well-formed")
}
