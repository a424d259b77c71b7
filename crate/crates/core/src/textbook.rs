//! Small reference networks with known posteriors, handy for checking inference.

use crate::bayesnet::{BayesianNetwork, Cpd, DiscreteVariable};
use crate::dag::Dag;

fn bool_var(name: &str) -> DiscreteVariable {
    DiscreteVariable::new(name, vec!["false".into(), "true".into()])
}

fn build(names: [&str; 3], edges: &[(&str, &str)], cpds: Vec<Cpd>) -> BayesianNetwork {
    let dag = Dag::from_edges(names, edges.iter().copied()).expect("static graph is valid");
    let vars = names.iter().map(|n| bool_var(n)).collect();
    BayesianNetwork::new(vars, dag, cpds).expect("static tables are valid")
}

/// Electricity failure `E` (p = 0.1) and mechanical malfunction `M` (p = 0.2)
/// both cause computer failure `C`. `C` is certain under `E`, a coin flip
/// under `M` alone and impossible otherwise.
pub fn computer_failure() -> BayesianNetwork {
    let e = Cpd::new(2, vec![], vec![], vec![0.9, 0.1]).unwrap();
    let m = Cpd::new(2, vec![], vec![], vec![0.8, 0.2]).unwrap();
    // parent configs (E, M): ff, ft, tf, tt
    let c = Cpd::new(2, vec![0, 1], vec![2, 2], vec![1.0, 0.5, 0.0, 0.0, 0.0, 0.5, 1.0, 1.0]).unwrap();
    build(["E", "M", "C"], &[("E", "C"), ("M", "C")], vec![e, m, c])
}

/// Rain `R`, sprinkler `S` (depends on rain) and wet grass `G`.
pub fn sprinkler() -> BayesianNetwork {
    let r = Cpd::new(2, vec![], vec![], vec![0.8, 0.2]).unwrap();
    // configs R: f, t
    let s = Cpd::new(2, vec![0], vec![2], vec![0.6, 0.99, 0.4, 0.01]).unwrap();
    // configs (R, S): ff, ft, tf, tt
    let g = Cpd::new(2, vec![0, 1], vec![2, 2], vec![0.6, 0.99, 0.99, 0.99, 0.4, 0.01, 0.01, 0.01]).unwrap();
    build(["R", "S", "G"], &[("R", "S"), ("R", "G"), ("S", "G")], vec![r, s, g])
}
