//! Seeded random trees for property and acceptance suites.

use guidex_core::fixtures::{metadata, source};
use guidex_core::{DecisionTree, Literal, Node, Op, Predicate, TreeParts, VariableSpec};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct GenConfig {
    pub booleans: usize,
    pub categoricals: usize,
    pub numerics: usize,
    pub max_depth: usize,
    /// Outputs besides the no-action label.
    pub actions: usize,
    /// Chance that a non-root node below depth 1 becomes a leaf early.
    pub leaf_chance: f64,
}

impl GenConfig {
    /// Boolean-only trees: at most 10 variables, depth at most 6.
    pub fn boolean() -> Self {
        GenConfig {
            booleans: 10,
            categoricals: 0,
            numerics: 0,
            max_depth: 6,
            actions: 3,
            leaf_chance: 0.25,
        }
    }

    /// A mix of all three variable kinds.
    pub fn mixed() -> Self {
        GenConfig {
            booleans: 3,
            categoricals: 2,
            numerics: 3,
            max_depth: 5,
            actions: 3,
            leaf_chance: 0.25,
        }
    }
}

const CATEGORIES: [&str; 4] = ["alpha", "beta", "gamma", "delta"];

fn declare(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> Vec<VariableSpec> {
    let mut vars = Vec::new();
    for i in 0..cfg.booleans {
        vars.push(VariableSpec::boolean(format!("b{i}")).expect("valid"));
    }
    for i in 0..cfg.categoricals {
        let n = rng.random_range(2..=CATEGORIES.len());
        vars.push(VariableSpec::categorical(format!("c{i}"), CATEGORIES[..n].iter().copied()).expect("valid"));
    }
    for i in 0..cfg.numerics {
        let mut grid: Vec<f64> = (0..=10).map(|k| (k * 10) as f64).filter(|_| rng.random_bool(0.35)).collect();
        if grid.is_empty() {
            grid.push(50.0);
        }
        vars.push(VariableSpec::numeric(format!("n{i}"), Some("u".into()), 0.0, 100.0, grid).expect("valid"));
    }
    vars
}

fn predicate(var: &VariableSpec, rng: &mut ChaCha8Rng) -> Predicate {
    match var.kind() {
        guidex_core::VarKind::Boolean => Predicate::new(var.name(), Op::Is, Literal::Bool(rng.random_bool(0.8))),
        guidex_core::VarKind::Categorical { values } => {
            if rng.random_bool(0.5) {
                Predicate::new(var.name(), Op::Eq, Literal::Str(values.choose(rng).expect("non-empty").clone()))
            } else {
                let mut set: Vec<String> = values.iter().filter(|_| rng.random_bool(0.5)).cloned().collect();
                if set.is_empty() {
                    set.push(values[0].clone());
                }
                Predicate::new(var.name(), Op::In, Literal::Set(set))
            }
        }
        guidex_core::VarKind::Numeric { grid, .. } => {
            let op = *[Op::Lt, Op::Le, Op::Gt, Op::Ge, Op::Ge, Op::Lt, Op::Eq].choose(rng).expect("non-empty");
            let threshold = if op == Op::Eq && rng.random_bool(0.7) {
                *grid.choose(rng).expect("non-empty")
            } else {
                (rng.random_range(0..=20) * 5) as f64
            };
            Predicate::new(var.name(), op, Literal::Num(threshold))
        }
    }
}

fn build(vars: &[VariableSpec], outputs: usize, depth: usize, cfg: &GenConfig, rng: &mut ChaCha8Rng) -> Node {
    let early = depth > 1 && rng.random_bool(cfg.leaf_chance);
    if vars.is_empty() || depth >= cfg.max_depth || early {
        return Node::Leaf(rng.random_range(0..outputs));
    }
    let var = vars.choose(rng).expect("non-empty");
    let p = predicate(var, rng);
    let t = build(vars, outputs, depth + 1, cfg, rng);
    let e = build(vars, outputs, depth + 1, cfg, rng);
    Node::branch(p, t, e)
}

fn collect_used(node: &Node, used: &mut Vec<String>) {
    if let Node::Branch {
        predicate,
        then_node,
        else_node,
    } = node
    {
        if !used.contains(&predicate.var) {
            used.push(predicate.var.clone());
        }
        collect_used(then_node, used);
        collect_used(else_node, used);
    }
}

/// A well-formed random tree; only variables used by some predicate are
/// declared. Dead branches are possible and intended.
pub fn random_tree(seed: u64, cfg: &GenConfig) -> DecisionTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vars = declare(cfg, &mut rng);
    let outputs = cfg.actions + 1;
    let root = build(&vars, outputs, 0, cfg, &mut rng);
    let mut used = Vec::new();
    collect_used(&root, &mut used);
    let variables = vars.into_iter().filter(|v| used.iter().any(|u| u == v.name())).collect();
    let mut labels: Vec<String> = (0..cfg.actions).map(|i| format!("action {i}")).collect();
    labels.push("no-action".into());
    DecisionTree::new(TreeParts {
        id: format!("rand{seed}"),
        source: source(),
        metadata: metadata(),
        variables,
        outputs: labels,
        no_action_index: Some(cfg.actions),
        root,
    })
    .expect("generated tree is well-formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_bounded() {
        for seed in 0..30 {
            let a = random_tree(seed, &GenConfig::boolean());
            assert_eq!(a, random_tree(seed, &GenConfig::boolean()));
            assert!(a.root().depth() <= 6);
            assert!(a.variables().len() <= 10);
            let m = random_tree(seed, &GenConfig::mixed());
            assert!(m.root().depth() <= 5);
        }
    }
}
