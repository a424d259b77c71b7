//! Exact inference by variable elimination, plus per-row MAP prediction.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::bayesnet::{BayesianNetwork, NetError, Result};
use crate::dataset::DiscreteDataset;
use crate::math::argmax;

/// Observed states keyed by variable name.
pub type Evidence = BTreeMap<String, usize>;

#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub variable: String,
    pub probs: Vec<f64>,
}

impl Posterior {
    /// Most probable state; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

/// Table over a sorted scope; the last scope variable varies fastest.
#[derive(Debug, Clone)]
struct Factor {
    scope: Vec<usize>,
    cards: Vec<usize>,
    values: Vec<f64>,
}

impl Factor {
    fn unit() -> Self {
        Self {
            scope: vec![],
            cards: vec![],
            values: vec![1.0],
        }
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.scope.len()];
        for i in (0..self.scope.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.cards[i + 1];
        }
        s
    }

    fn from_cpd(net: &BayesianNetwork, v: usize) -> Self {
        let cpd = net.cpd(v);
        let mut scope: Vec<usize> = cpd.parents().to_vec();
        scope.push(v);
        scope.sort_unstable();
        let cards: Vec<usize> = scope.iter().map(|&u| net.card(u)).collect();
        let size: usize = cards.iter().product();
        let pos_of = |u: usize| scope.iter().position(|&x| x == u).expect("in scope");
        let child_pos = pos_of(v);
        let parent_pos: Vec<usize> = cpd.parents().iter().map(|&p| pos_of(p)).collect();
        let mut values = Vec::with_capacity(size);
        let mut assign = vec![0; scope.len()];
        for _ in 0..size {
            let parent_states: Vec<usize> = parent_pos.iter().map(|&i| assign[i]).collect();
            values.push(cpd.prob(assign[child_pos], cpd.config_index(&parent_states)));
            increment(&mut assign, &cards);
        }
        Self {
            scope,
            cards,
            values,
        }
    }

    /// Fixes `var = state`, dropping it from the scope.
    fn reduce(&self, var: usize, state: usize) -> Self {
        let Some(pos) = self.scope.iter().position(|&x| x == var) else {
            return self.clone();
        };
        let strides = self.strides();
        let mut scope = self.scope.clone();
        let mut cards = self.cards.clone();
        scope.remove(pos);
        cards.remove(pos);
        let size: usize = cards.iter().product();
        let mut values = Vec::with_capacity(size);
        let mut assign = vec![0; scope.len()];
        for _ in 0..size {
            let mut idx = state * strides[pos];
            for (k, &a) in assign.iter().enumerate() {
                let orig = if k < pos { k } else { k + 1 };
                idx += a * strides[orig];
            }
            values.push(self.values[idx]);
            increment(&mut assign, &cards);
        }
        Self {
            scope,
            cards,
            values,
        }
    }

    fn product(&self, other: &Self) -> Self {
        let scope: Vec<usize> = self
            .scope
            .iter()
            .chain(&other.scope)
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let card_of = |u: usize| {
            self.scope
                .iter()
                .position(|&x| x == u)
                .map(|i| self.cards[i])
                .unwrap_or_else(|| other.cards[other.scope.iter().position(|&x| x == u).unwrap()])
        };
        let cards: Vec<usize> = scope.iter().map(|&u| card_of(u)).collect();
        let map_strides = |f: &Factor| -> Vec<usize> {
            let fs = f.strides();
            scope
                .iter()
                .map(|u| f.scope.iter().position(|x| x == u).map_or(0, |i| fs[i]))
                .collect()
        };
        let sa = map_strides(self);
        let sb = map_strides(other);
        let size: usize = cards.iter().product();
        let mut values = Vec::with_capacity(size);
        let mut assign = vec![0; scope.len()];
        for _ in 0..size {
            let (mut ia, mut ib) = (0, 0);
            for (k, &a) in assign.iter().enumerate() {
                ia += a * sa[k];
                ib += a * sb[k];
            }
            values.push(self.values[ia] * other.values[ib]);
            increment(&mut assign, &cards);
        }
        Self {
            scope,
            cards,
            values,
        }
    }

    fn sum_out(&self, var: usize) -> Self {
        let Some(pos) = self.scope.iter().position(|&x| x == var) else {
            return self.clone();
        };
        let stride = self.strides()[pos];
        let card = self.cards[pos];
        let mut scope = self.scope.clone();
        let mut cards = self.cards.clone();
        scope.remove(pos);
        cards.remove(pos);
        let size: usize = cards.iter().product();
        let mut values = vec![0.0; size];
        let inner = stride;
        for (out_idx, slot) in values.iter_mut().enumerate() {
            let hi = out_idx / inner;
            let lo = out_idx % inner;
            let base = hi * inner * card + lo;
            *slot = (0..card).map(|s| self.values[base + s * stride]).sum();
        }
        Self {
            scope,
            cards,
            values,
        }
    }
}

fn increment(assign: &mut [usize], cards: &[usize]) {
    for i in (0..assign.len()).rev() {
        assign[i] += 1;
        if assign[i] < cards[i] {
            return;
        }
        assign[i] = 0;
    }
}

fn resolve_evidence(net: &BayesianNetwork, evidence: &Evidence) -> Result<Vec<(usize, usize)>> {
    evidence
        .iter()
        .map(|(name, &state)| {
            let v = net.require(name)?;
            if state >= net.card(v) {
                return Err(NetError::InvalidArgument(format!(
                    "state {state} out of range for `{name}` (cardinality {})",
                    net.card(v)
                )));
            }
            Ok((v, state))
        })
        .collect()
}

/// Probability of a complete assignment via the chain rule.
pub fn joint_probability(net: &BayesianNetwork, assignment: &Evidence) -> Result<f64> {
    let resolved = resolve_evidence(net, assignment)?;
    let mut states = vec![None; net.len()];
    for (v, s) in resolved {
        states[v] = Some(s);
    }
    let states: Vec<usize> = states
        .into_iter()
        .enumerate()
        .map(|(v, s)| {
            s.ok_or_else(|| {
                NetError::InvalidArgument(format!(
                    "assignment is missing `{}`",
                    net.variables()[v].name
                ))
            })
        })
        .collect::<Result<_>>()?;
    Ok((0..net.len())
        .map(|v| {
            let cpd = net.cpd(v);
            let ps: Vec<usize> = cpd.parents().iter().map(|&p| states[p]).collect();
            cpd.prob(states[v], cpd.config_index(&ps))
        })
        .product())
}

/// Evidence-reduced factors restricted to the ancestral set of target and evidence.
fn prepare(
    net: &BayesianNetwork,
    target: usize,
    evidence: &[(usize, usize)],
) -> (Vec<Factor>, BTreeSet<usize>) {
    let relevant = net
        .dag()
        .ancestral_set(std::iter::once(target).chain(evidence.iter().map(|&(v, _)| v)));
    let factors = relevant
        .iter()
        .map(|&v| {
            evidence
                .iter()
                .fold(Factor::from_cpd(net, v), |f, &(e, s)| f.reduce(e, s))
        })
        .collect();
    let observed: BTreeSet<usize> = evidence.iter().map(|&(v, _)| v).collect();
    let hidden = relevant
        .into_iter()
        .filter(|&v| v != target && !observed.contains(&v))
        .collect();
    (factors, hidden)
}

/// Greedy min-degree ordering on the interaction graph of the factors; ties go to the lowest index.
fn min_degree_order(factors: &[Factor], hidden: &BTreeSet<usize>) -> Vec<usize> {
    let mut adj: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for f in factors {
        for &a in &f.scope {
            let entry = adj.entry(a).or_default();
            entry.extend(f.scope.iter().copied().filter(|&b| b != a));
        }
    }
    let mut remaining = hidden.clone();
    let mut order = Vec::with_capacity(hidden.len());
    while !remaining.is_empty() {
        let v = *remaining
            .iter()
            .min_by_key(|&&v| (adj.get(&v).map_or(0, BTreeSet::len), v))
            .expect("non-empty");
        remaining.remove(&v);
        order.push(v);
        let nbrs: Vec<usize> = adj.remove(&v).unwrap_or_default().into_iter().collect();
        for &a in &nbrs {
            if let Some(s) = adj.get_mut(&a) {
                s.remove(&v);
                s.extend(nbrs.iter().copied().filter(|&b| b != a));
            }
        }
    }
    order
}

fn eliminate(mut factors: Vec<Factor>, order: &[usize]) -> Factor {
    for &v in order {
        let (with, without): (Vec<Factor>, Vec<Factor>) =
            factors.into_iter().partition(|f| f.scope.contains(&v));
        factors = without;
        if with.is_empty() {
            continue;
        }
        let prod = with
            .iter()
            .skip(1)
            .fold(with[0].clone(), |acc, f| acc.product(f));
        factors.push(prod.sum_out(v));
    }
    factors.iter().fold(Factor::unit(), |acc, f| acc.product(f))
}

fn finish(net: &BayesianNetwork, target: usize, result: Factor) -> Result<Posterior> {
    let probs = if result.scope.is_empty() {
        vec![result.values[0]; net.card(target)]
    } else {
        result.values
    };
    let total: f64 = probs.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(NetError::InconsistentEvidence);
    }
    Ok(Posterior {
        variable: net.variables()[target].name.clone(),
        probs: probs.into_iter().map(|p| p / total).collect(),
    })
}

fn checked_target(net: &BayesianNetwork, target: &str, evidence: &Evidence) -> Result<usize> {
    let t = net.require(target)?;
    if evidence.contains_key(target) {
        return Err(NetError::InvalidArgument(format!(
            "target `{target}` is also observed"
        )));
    }
    Ok(t)
}

/// Exact posterior of `target` given `evidence`.
pub fn query(net: &BayesianNetwork, target: &str, evidence: &Evidence) -> Result<Posterior> {
    let t = checked_target(net, target, evidence)?;
    let resolved = resolve_evidence(net, evidence)?;
    let (factors, hidden) = prepare(net, t, &resolved);
    let order = min_degree_order(&factors, &hidden);
    finish(net, t, eliminate(factors, &order))
}

/// Same as [`query`] but with a caller-chosen elimination order. The order must
/// contain every unobserved non-target variable (extra entries are ignored).
pub fn query_with_order(
    net: &BayesianNetwork,
    target: &str,
    evidence: &Evidence,
    order: &[String],
) -> Result<Posterior> {
    let t = checked_target(net, target, evidence)?;
    let resolved = resolve_evidence(net, evidence)?;
    let (factors, hidden) = prepare(net, t, &resolved);
    let order: Vec<usize> = order
        .iter()
        .map(|n| net.require(n))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|v| hidden.contains(v))
        .collect();
    if order.len() != hidden.len() {
        return Err(NetError::InvalidArgument(
            "elimination order does not cover every hidden variable".into(),
        ));
    }
    finish(net, t, eliminate(factors, &order))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapPredictions {
    pub states: Vec<usize>,
    /// Rows whose evidence had zero probability; their state is the target's prior argmax.
    pub fallback: Vec<bool>,
}

/// Per-row argmax of the target's posterior given every other network variable in the row.
/// A target column present in `rows` is ignored.
pub fn map_predict(
    net: &BayesianNetwork,
    rows: &DiscreteDataset,
    target: &str,
) -> Result<MapPredictions> {
    let t = net.require(target)?;
    let mut columns = Vec::new();
    for (v, var) in net.variables().iter().enumerate() {
        if v == t {
            continue;
        }
        let c = rows.require(&var.name)?;
        columns.push((var.name.clone(), c));
    }
    let prior = query(net, target, &Evidence::new())?;
    let results: Vec<Result<(usize, bool)>> = (0..rows.n_rows())
        .into_par_iter()
        .map(|r| {
            let ev: Evidence = columns
                .iter()
                .map(|(name, c)| (name.clone(), rows.column(*c)[r]))
                .collect();
            match query(net, target, &ev) {
                Ok(p) => Ok((p.argmax(), false)),
                Err(NetError::InconsistentEvidence) => {
                    log::warn!("row {r}: inconsistent evidence, using prior argmax for `{target}`");
                    Ok((prior.argmax(), true))
                }
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut states = Vec::with_capacity(results.len());
    let mut fallback = Vec::with_capacity(results.len());
    for r in results {
        let (s, f) = r?;
        states.push(s);
        fallback.push(f);
    }
    Ok(MapPredictions { states, fallback })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayesnet::{Cpd, DiscreteVariable};
    use crate::dag::Dag;
    use crate::textbook::computer_failure;

    fn ev(pairs: &[(&str, usize)]) -> Evidence {
        pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect()
    }

    #[test]
    fn joint_probability_follows_chain_rule() {
        let net = computer_failure();
        let p = joint_probability(&net, &ev(&[("E", 1), ("M", 0), ("C", 1)])).unwrap();
        assert!((p - 0.08).abs() < 1e-15);
        let zero = joint_probability(&net, &ev(&[("E", 1), ("M", 0), ("C", 0)])).unwrap();
        assert_eq!(zero, 0.0);
        assert!(matches!(
            joint_probability(&net, &ev(&[("E", 1)])),
            Err(NetError::InvalidArgument(_))
        ));
    }

    #[test]
    fn single_variable_network() {
        let dag = Dag::new(["X"]).unwrap();
        let cpd = Cpd::new(2, vec![], vec![], vec![0.3, 0.7]).unwrap();
        let net =
            BayesianNetwork::new(vec![DiscreteVariable::with_card("X", 2)], dag, vec![cpd]).unwrap();
        assert_eq!(joint_probability(&net, &ev(&[("X", 1)])).unwrap(), 0.7);
        assert_eq!(query(&net, "X", &Evidence::new()).unwrap().probs, vec![0.3, 0.7]);
    }

    #[test]
    fn inconsistent_evidence_is_an_error() {
        let net = computer_failure();
        let err = query(&net, "M", &ev(&[("E", 1), ("C", 0)]));
        assert!(matches!(err, Err(NetError::InconsistentEvidence)));
    }

    #[test]
    fn observed_target_is_rejected() {
        let net = computer_failure();
        assert!(matches!(
            query(&net, "C", &ev(&[("C", 1)])),
            Err(NetError::InvalidArgument(_))
        ));
        assert!(query(&net, "C", &ev(&[("E", 2)])).is_err());
    }

    #[test]
    fn elimination_order_does_not_matter() {
        let net = computer_failure();
        let a = query_with_order(&net, "C", &Evidence::new(), &["E".into(), "M".into()]).unwrap();
        let b = query_with_order(&net, "C", &Evidence::new(), &["M".into(), "E".into()]).unwrap();
        assert!((a.probs[1] - b.probs[1]).abs() < 1e-15);
        assert!((a.probs[1] - 0.19).abs() < 1e-12);
    }

    #[test]
    fn map_predict_copies_deterministic_parent() {
        let dag = Dag::from_edges(["X", "T"], [("X", "T")]).unwrap();
        let x = Cpd::new(3, vec![], vec![], vec![0.2, 0.3, 0.5]).unwrap();
        #[rustfmt::skip]
        let t = Cpd::new(3, vec![0], vec![3], vec![
            1.0, 0.0, 0.0,
            0.0, 1.0, 0.0,
            0.0, 0.0, 1.0,
        ]).unwrap();
        let net = BayesianNetwork::new(
            vec![DiscreteVariable::with_card("X", 3), DiscreteVariable::with_card("T", 3)],
            dag,
            vec![x, t],
        )
        .unwrap();
        let rows = DiscreteDataset::new(vec!["X".into()], vec![3], vec![vec![2, 0, 1]]).unwrap();
        let pred = map_predict(&net, &rows, "T").unwrap();
        assert_eq!(pred.states, vec![2, 0, 1]);
        assert!(pred.fallback.iter().all(|f| !f));
    }

    #[test]
    fn map_predict_uniform_target_ties_to_zero() {
        let dag = Dag::new(["X", "T"]).unwrap();
        let x = Cpd::new(3, vec![], vec![], vec![0.2, 0.3, 0.5]).unwrap();
        let t = Cpd::new(3, vec![], vec![], vec![1.0 / 3.0; 3]).unwrap();
        let net = BayesianNetwork::new(
            vec![DiscreteVariable::with_card("X", 3), DiscreteVariable::with_card("T", 3)],
            dag,
            vec![x, t],
        )
        .unwrap();
        let rows = DiscreteDataset::new(vec!["X".into()], vec![3], vec![vec![2, 1]]).unwrap();
        assert_eq!(map_predict(&net, &rows, "T").unwrap().states, vec![0, 0]);
    }

    #[test]
    fn map_predict_falls_back_on_impossible_rows() {
        let net = computer_failure();
        // C=false with E=true is impossible
        let rows = DiscreteDataset::new(
            vec!["E".into(), "C".into()],
            vec![2, 2],
            vec![vec![1, 0], vec![0, 1]],
        )
        .unwrap();
        let pred = map_predict(&net, &rows, "M").unwrap();
        assert_eq!(pred.fallback, vec![true, false]);
        assert_eq!(pred.states[0], 0);
        // E=false, C=true forces M=true
        assert_eq!(pred.states[1], 1);
    }

    #[test]
    fn map_predict_requires_evidence_columns() {
        let net = computer_failure();
        let rows = DiscreteDataset::new(vec!["E".into()], vec![2], vec![vec![1]]).unwrap();
        assert!(map_predict(&net, &rows, "M").is_err());
    }
}
