//! Discrete Bayesian networks: conditional probability tables, parameter
//! estimation from fully observed data, and the `.bn.json` file format.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{Dag, DagError};
use crate::dataset::{DataError, DiscreteDataset};

pub const CPD_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("evidence has zero probability under the network")]
    InconsistentEvidence,
    #[error(transparent)]
    Graph(#[from] DagError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("malformed network file: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NetError>;

/// Dirichlet prior used for Bayesian parameter estimation and BD scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirichletPrior {
    /// One pseudo-count per cell.
    K2,
    /// Equivalent sample size spread evenly over the cells of each family.
    Bdeu { ess: f64 },
}

impl DirichletPrior {
    /// Pseudo-count for each (parent configuration, state) cell.
    pub fn pseudo_count(&self, card: usize, n_configs: usize) -> Result<f64> {
        match *self {
            DirichletPrior::K2 => Ok(1.0),
            DirichletPrior::Bdeu { ess } => {
                if !(ess > 0.0 && ess.is_finite()) {
                    return Err(NetError::InvalidArgument(format!(
                        "equivalent sample size must be positive, got {ess}"
                    )));
                }
                Ok(ess / (card * n_configs) as f64)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteVariable {
    pub name: String,
    pub labels: Vec<String>,
}

impl DiscreteVariable {
    pub fn new(name: impl Into<String>, labels: Vec<String>) -> Self {
        Self {
            name: name.into(),
            labels,
        }
    }

    /// Variable whose labels are `"0", "1", ...`.
    pub fn with_card(name: impl Into<String>, card: usize) -> Self {
        Self::new(name, (0..card).map(|s| s.to_string()).collect())
    }

    pub fn card(&self) -> usize {
        self.labels.len()
    }
}

/// Conditional distribution of one variable given an ordered parent list.
///
/// `values` is row-major over child states: `values[state * n_configs + config]`,
/// where the parent configuration index varies fastest on the last parent.
#[derive(Debug, Clone, PartialEq)]
pub struct Cpd {
    parents: Vec<usize>,
    parent_cards: Vec<usize>,
    card: usize,
    values: Vec<f64>,
}

impl Cpd {
    pub fn new(
        card: usize,
        parents: Vec<usize>,
        parent_cards: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if parents.len() != parent_cards.len() {
            return Err(NetError::InvalidArgument(
                "parents and parent cardinalities differ in length".into(),
            ));
        }
        let n_configs: usize = parent_cards.iter().product();
        if values.len() != card * n_configs {
            return Err(NetError::InvalidArgument(format!(
                "table has {} entries, expected {card} x {n_configs}",
                values.len()
            )));
        }
        let cpd = Self {
            parents,
            parent_cards,
            card,
            values,
        };
        for cfg in 0..n_configs {
            let dist = cpd.distribution(cfg);
            if dist.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(NetError::InvalidArgument(format!(
                    "parent configuration {cfg} has an entry outside [0, 1]"
                )));
            }
            let total: f64 = dist.iter().sum();
            if (total - 1.0).abs() > CPD_TOL {
                return Err(NetError::InvalidArgument(format!(
                    "parent configuration {cfg} sums to {total}"
                )));
            }
        }
        Ok(cpd)
    }

    pub fn parents(&self) -> &[usize] {
        &self.parents
    }

    pub fn parent_cards(&self) -> &[usize] {
        &self.parent_cards
    }

    pub fn card(&self) -> usize {
        self.card
    }

    pub fn n_configs(&self) -> usize {
        self.parent_cards.iter().product()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mixed-radix index of a parent assignment (last parent fastest).
    pub fn config_index(&self, parent_states: &[usize]) -> usize {
        parent_states
            .iter()
            .zip(&self.parent_cards)
            .fold(0, |acc, (&s, &c)| acc * c + s)
    }

    pub fn prob(&self, state: usize, config: usize) -> f64 {
        self.values[state * self.n_configs() + config]
    }

    pub fn distribution(&self, config: usize) -> Vec<f64> {
        let n = self.n_configs();
        (0..self.card).map(|s| self.values[s * n + config]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BayesianNetwork {
    variables: Vec<DiscreteVariable>,
    dag: Dag,
    cpds: Vec<Cpd>,
}

impl BayesianNetwork {
    /// `cpds[i]` belongs to `variables[i]`; its parent set must equal the DAG's.
    pub fn new(variables: Vec<DiscreteVariable>, dag: Dag, cpds: Vec<Cpd>) -> Result<Self> {
        if variables.len() != dag.len() || cpds.len() != dag.len() {
            return Err(NetError::InvalidArgument(format!(
                "{} variables, {} graph nodes, {} CPDs",
                variables.len(),
                dag.len(),
                cpds.len()
            )));
        }
        if !dag.is_acyclic() {
            return Err(NetError::InvalidArgument("graph has a cycle".into()));
        }
        for (i, (var, cpd)) in variables.iter().zip(&cpds).enumerate() {
            if var.name != dag.name(i) {
                return Err(NetError::InvalidArgument(format!(
                    "variable {i} is `{}` but graph node {i} is `{}`",
                    var.name,
                    dag.name(i)
                )));
            }
            if var.card() == 0 {
                return Err(NetError::InvalidArgument(format!("`{}` has no states", var.name)));
            }
            let mut cpd_parents = cpd.parents.clone();
            cpd_parents.sort_unstable();
            let dag_parents: Vec<usize> = dag.parents(i).iter().copied().collect();
            if cpd_parents != dag_parents {
                return Err(NetError::InvalidArgument(format!(
                    "CPD parents of `{}` do not match the graph",
                    var.name
                )));
            }
            if cpd.card != var.card()
                || cpd
                    .parents
                    .iter()
                    .zip(&cpd.parent_cards)
                    .any(|(&p, &c)| variables[p].card() != c)
            {
                return Err(NetError::InvalidArgument(format!(
                    "CPD of `{}` disagrees with variable cardinalities",
                    var.name
                )));
            }
        }
        Ok(Self {
            variables,
            dag,
            cpds,
        })
    }

    pub fn variables(&self) -> &[DiscreteVariable] {
        &self.variables
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn cpd(&self, v: usize) -> &Cpd {
        &self.cpds[v]
    }

    pub fn cpds(&self) -> &[Cpd] {
        &self.cpds
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn card(&self, v: usize) -> usize {
        self.variables[v].card()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.dag.index_of(name)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        Ok(self.dag.require(name)?)
    }

    pub fn to_json(&self) -> String {
        let file = NetworkFile {
            variables: self.variables.clone(),
            edges: self.dag.named_edges(),
            cpds: self
                .cpds
                .iter()
                .enumerate()
                .map(|(i, c)| CpdFile {
                    variable: self.variables[i].name.clone(),
                    parents: c
                        .parents
                        .iter()
                        .map(|&p| self.variables[p].name.clone())
                        .collect(),
                    values: c.values.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("network serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: NetworkFile =
            serde_json::from_str(text).map_err(|e| NetError::Format(e.to_string()))?;
        let dag = Dag::from_edges(
            file.variables.iter().map(|v| v.name.clone()),
            file.edges.iter().map(|(a, b)| (a.as_str(), b.as_str())),
        )?;
        if file.cpds.len() != file.variables.len() {
            return Err(NetError::Format(format!(
                "{} CPDs for {} variables",
                file.cpds.len(),
                file.variables.len()
            )));
        }
        let mut cpds = Vec::with_capacity(file.cpds.len());
        for (i, var) in file.variables.iter().enumerate() {
            let entry = file
                .cpds
                .iter()
                .find(|c| c.variable == var.name)
                .ok_or_else(|| NetError::Format(format!("no CPD for `{}`", var.name)))?;
            let parents = entry
                .parents
                .iter()
                .map(|p| dag.require(p))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let parent_cards = parents.iter().map(|&p| file.variables[p].card()).collect();
            let cpd = Cpd::new(var.card(), parents, parent_cards, entry.values.clone())
                .map_err(|e| NetError::Format(format!("CPD {i} (`{}`): {e}", var.name)))?;
            cpds.push(cpd);
        }
        Self::new(file.variables, dag, cpds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    variables: Vec<DiscreteVariable>,
    edges: Vec<(String, String)>,
    cpds: Vec<CpdFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CpdFile {
    variable: String,
    parents: Vec<String>,
    values: Vec<f64>,
}

/// Counts `n[config][state]` of `child` for every configuration of `parents`
/// (last parent fastest), flattened as `config * card + state`.
pub(crate) fn family_counts(
    data: &DiscreteDataset,
    child: usize,
    parents: &[usize],
) -> Vec<u64> {
    let card = data.card(child);
    let n_configs: usize = parents.iter().map(|&p| data.card(p)).product();
    let mut counts = vec![0u64; n_configs * card];
    let child_col = data.column(child);
    let parent_cols: Vec<&[usize]> = parents.iter().map(|&p| data.column(p)).collect();
    let parent_cards: Vec<usize> = parents.iter().map(|&p| data.card(p)).collect();
    for r in 0..data.n_rows() {
        let cfg = parent_cols
            .iter()
            .zip(&parent_cards)
            .fold(0, |acc, (col, &c)| acc * c + col[r]);
        counts[cfg * card + child_col[r]] += 1;
    }
    counts
}

fn fit_with(
    dag: &Dag,
    data: &DiscreteDataset,
    pseudo: impl Fn(usize, usize) -> Result<f64>,
) -> Result<BayesianNetwork> {
    let cols = dag
        .names()
        .iter()
        .map(|n| data.require(n))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let variables: Vec<DiscreteVariable> = dag
        .names()
        .iter()
        .zip(&cols)
        .map(|(n, &c)| DiscreteVariable::with_card(n.clone(), data.card(c)))
        .collect();
    let mut cpds = Vec::with_capacity(dag.len());
    for v in 0..dag.len() {
        let parents: Vec<usize> = dag.parents(v).iter().copied().collect();
        let data_parents: Vec<usize> = parents.iter().map(|&p| cols[p]).collect();
        let parent_cards: Vec<usize> = parents.iter().map(|&p| variables[p].card()).collect();
        let card = variables[v].card();
        let n_configs: usize = parent_cards.iter().product();
        let alpha = pseudo(card, n_configs)?;
        let counts = family_counts(data, cols[v], &data_parents);
        let mut values = vec![0.0; card * n_configs];
        for cfg in 0..n_configs {
            let row = &counts[cfg * card..(cfg + 1) * card];
            let total: f64 = row.iter().map(|&c| c as f64 + alpha).sum();
            for (s, &c) in row.iter().enumerate() {
                values[s * n_configs + cfg] = if total > 0.0 {
                    (c as f64 + alpha) / total
                } else {
                    1.0 / card as f64
                };
            }
        }
        cpds.push(Cpd::new(card, parents, parent_cards, values)?);
    }
    BayesianNetwork::new(variables, dag.clone(), cpds)
}

/// Relative-frequency estimates; parent configurations never observed get a uniform row.
pub fn fit_mle(dag: &Dag, data: &DiscreteDataset) -> Result<BayesianNetwork> {
    fit_with(dag, data, |_, _| Ok(0.0))
}

/// Posterior-mean estimates under a Dirichlet prior.
pub fn fit_bayesian(
    dag: &Dag,
    data: &DiscreteDataset,
    prior: DirichletPrior,
) -> Result<BayesianNetwork> {
    prior.pseudo_count(1, 1)?;
    fit_with(dag, data, |card, n_configs| prior.pseudo_count(card, n_configs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xy_data(xs: Vec<usize>, ys: Vec<usize>) -> DiscreteDataset {
        DiscreteDataset::new(vec!["X".into(), "Y".into()], vec![3, 3], vec![xs, ys]).unwrap()
    }

    #[test]
    fn copy_relation_gives_identity_cpd() {
        let xs = vec![0, 1, 2, 2, 1, 0, 0];
        let data = xy_data(xs.clone(), xs);
        let dag = Dag::from_edges(["X", "Y"], [("X", "Y")]).unwrap();
        let net = fit_mle(&dag, &data).unwrap();
        let cpd = net.cpd(1);
        for cfg in 0..3 {
            let mut expect = vec![0.0; 3];
            expect[cfg] = 1.0;
            assert_eq!(cpd.distribution(cfg), expect);
        }
    }

    #[test]
    fn orphan_gets_marginal_frequencies() {
        let data = xy_data(vec![0, 0, 1, 2], vec![0, 0, 0, 0]);
        let dag = Dag::new(["X", "Y"]).unwrap();
        let net = fit_mle(&dag, &data).unwrap();
        assert_eq!(net.cpd(0).distribution(0), vec![0.5, 0.25, 0.25]);
    }

    #[test]
    fn unseen_parent_configuration_is_uniform() {
        let data = xy_data(vec![0, 0, 1], vec![1, 1, 2]);
        let dag = Dag::from_edges(["X", "Y"], [("X", "Y")]).unwrap();
        let net = fit_mle(&dag, &data).unwrap();
        assert_eq!(net.cpd(1).distribution(2), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn k2_prior_adds_one_per_cell() {
        let data = xy_data(vec![0, 0], vec![0, 0]);
        let dag = Dag::new(["X", "Y"]).unwrap();
        let net = fit_bayesian(&dag, &data, DirichletPrior::K2).unwrap();
        let d = net.cpd(0).distribution(0);
        let expect = [3.0 / 5.0, 1.0 / 5.0, 1.0 / 5.0];
        for (a, b) in d.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let empty = xy_data(vec![], vec![]);
        let net = fit_bayesian(&dag, &empty, DirichletPrior::K2).unwrap();
        assert_eq!(net.cpd(0).distribution(0), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn bdeu_spreads_ess_over_cells() {
        let data = xy_data(vec![0, 0], vec![0, 1]);
        let dag = Dag::from_edges(["X", "Y"], [("X", "Y")]).unwrap();
        let net = fit_bayesian(&dag, &data, DirichletPrior::Bdeu { ess: 9.0 }).unwrap();
        // pseudo = 9 / (3 * 3) = 1; config X=0 saw Y in {0, 1}
        let d = net.cpd(1).distribution(0);
        assert!((d[0] - 2.0 / 5.0).abs() < 1e-15 && (d[2] - 1.0 / 5.0).abs() < 1e-15);
        assert!(matches!(
            fit_bayesian(&dag, &data, DirichletPrior::Bdeu { ess: 0.0 }),
            Err(NetError::InvalidArgument(_))
        ));
    }

    #[test]
    fn missing_column_is_reported() {
        let data = xy_data(vec![0], vec![0]);
        let dag = Dag::new(["X", "Z"]).unwrap();
        assert!(matches!(
            fit_mle(&dag, &data),
            Err(NetError::Data(DataError::MissingColumn(_)))
        ));
    }

    #[test]
    fn json_round_trip_preserves_network() {
        let data = xy_data(vec![0, 1, 2, 1], vec![1, 1, 2, 0]);
        let dag = Dag::from_edges(["X", "Y"], [("X", "Y")]).unwrap();
        let net = fit_bayesian(&dag, &data, DirichletPrior::K2).unwrap();
        let back = BayesianNetwork::from_json(&net.to_json()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn json_rejects_non_stochastic_tables() {
        let text = r#"{"variables":[{"name":"A","labels":["0","1"]}],"edges":[],
            "cpds":[{"variable":"A","parents":[],"values":[0.5,0.6]}]}"#;
        assert!(matches!(BayesianNetwork::from_json(text), Err(NetError::Format(_))));
    }
}
