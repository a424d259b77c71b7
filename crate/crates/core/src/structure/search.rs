//! Greedy hill climbing over DAGs with a tabu list of visited structures and
//! seeded random perturbations at local optima.

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fmt;
use std::io::Write;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::score::{column_map, ScoreFn, Scorer};
use super::{Result, StructureError};
use crate::dag::Dag;
use crate::dataset::DiscreteDataset;

/// Prior over graph structures. Only the uniform prior (a constant) is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphPrior {
    #[default]
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub score: ScoreFn,
    pub tabu_size: usize,
    pub max_iters: usize,
    /// Random single-edge operations applied at each local optimum escape.
    pub n_random_ops_at_local_max: usize,
    /// Number of escapes from local optima before the search stops.
    pub n_restarts: usize,
    pub max_parents: Option<usize>,
    pub forbidden_edges: BTreeSet<(String, String)>,
    pub required_edges: BTreeSet<(String, String)>,
    pub seed: u64,
    pub graph_prior: GraphPrior,
    /// A move must raise the score by more than this to be accepted.
    pub min_improvement: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            score: ScoreFn::BIC,
            tabu_size: 100,
            max_iters: 1_000_000,
            n_random_ops_at_local_max: 5,
            n_restarts: 0,
            max_parents: None,
            forbidden_edges: BTreeSet::new(),
            required_edges: BTreeSet::new(),
            seed: 0,
            graph_prior: GraphPrior::Uniform,
            min_improvement: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Move {
    Add(usize, usize),
    Delete(usize, usize),
    Reverse(usize, usize),
}

impl Move {
    fn apply(self, dag: &mut Dag) {
        let res = match self {
            Move::Add(u, v) => dag.add_edge(u, v),
            Move::Delete(u, v) => dag.remove_edge(u, v),
            Move::Reverse(u, v) => dag.reverse_edge(u, v),
        };
        res.expect("move was checked for legality");
    }

    /// Canonical key of the structure reached from a graph with key `key`.
    fn next_key(self, key: u64) -> u64 {
        match self {
            Move::Add(u, v) | Move::Delete(u, v) => key ^ Dag::edge_key(u, v),
            Move::Reverse(u, v) => key ^ Dag::edge_key(u, v) ^ Dag::edge_key(v, u),
        }
    }

    pub fn describe(self, dag: &Dag) -> String {
        let (verb, u, v) = match self {
            Move::Add(u, v) => ("add", u, v),
            Move::Delete(u, v) => ("delete", u, v),
            Move::Reverse(u, v) => ("reverse", u, v),
        };
        format!("{verb} {} -> {}", dag.name(u), dag.name(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Start,
    Accept,
    Random,
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepKind::Start => "start",
            StepKind::Accept => "accept",
            StepKind::Random => "random",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Index of the greedy climb; incremented by every random escape.
    pub climb: usize,
    pub kind: StepKind,
    pub operation: String,
    pub score: f64,
    pub edges: usize,
    pub acyclic: bool,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub dag: Dag,
    pub score: f64,
    pub trace: Vec<TraceEntry>,
}

/// Writes the trace as `iteration,climb,kind,operation,score` rows.
pub fn write_trace_csv(trace: &[TraceEntry], out: impl Write) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "climb", "kind", "operation", "score"])?;
    for t in trace {
        w.write_record([
            t.iteration.to_string(),
            t.climb.to_string(),
            t.kind.to_string(),
            t.operation.clone(),
            t.score.to_string(),
        ])?;
    }
    w.flush()
}

struct Constraints {
    forbidden: HashSet<(usize, usize)>,
    required: HashSet<(usize, usize)>,
    max_parents: usize,
}

fn resolve_edges(
    dag: &Dag,
    edges: &BTreeSet<(String, String)>,
) -> Result<HashSet<(usize, usize)>> {
    edges
        .iter()
        .map(|(a, b)| Ok((dag.require(a)?, dag.require(b)?)))
        .collect()
}

impl Constraints {
    fn legal(&self, dag: &Dag, mv: Move) -> bool {
        match mv {
            Move::Add(u, v) => {
                !self.forbidden.contains(&(u, v))
                    && !dag.has_edge(v, u)
                    && dag.parents(v).len() < self.max_parents
                    && dag.can_add_edge(u, v)
            }
            Move::Delete(u, v) => dag.has_edge(u, v) && !self.required.contains(&(u, v)),
            Move::Reverse(u, v) => {
                !self.required.contains(&(u, v))
                    && !self.forbidden.contains(&(v, u))
                    && dag.parents(u).len() < self.max_parents
                    && dag.can_reverse_edge(u, v)
            }
        }
    }

    /// Legal moves in fixed order: additions, deletions, reversals; each by (u, v).
    fn moves(&self, dag: &Dag) -> Vec<Move> {
        let n = dag.len();
        let edges = dag.edges();
        let adds = (0..n)
            .flat_map(|u| (0..n).map(move |v| Move::Add(u, v)))
            .filter(|&m| matches!(m, Move::Add(u, v) if u != v && !dag.has_edge(u, v)));
        let dels = edges.iter().map(|&(u, v)| Move::Delete(u, v));
        let revs = edges.iter().map(|&(u, v)| Move::Reverse(u, v));
        adds.chain(dels)
            .chain(revs)
            .filter(|&m| self.legal(dag, m))
            .collect()
    }
}

struct Climber<'a> {
    scorer: Scorer<'a>,
    cols: Vec<usize>,
}

impl Climber<'_> {
    fn family(&self, dag: &Dag, v: usize, extra: Option<usize>, drop: Option<usize>) -> Result<f64> {
        let parents: Vec<usize> = dag
            .parents(v)
            .iter()
            .copied()
            .filter(|&p| Some(p) != drop)
            .chain(extra)
            .map(|p| self.cols[p])
            .collect();
        self.scorer.family(self.cols[v], &parents)
    }

    fn total(&self, dag: &Dag) -> Result<f64> {
        (0..dag.len()).try_fold(0.0, |acc, v| Ok(acc + self.family(dag, v, None, None)?))
    }

    fn delta(&self, dag: &Dag, mv: Move) -> Result<f64> {
        Ok(match mv {
            Move::Add(u, v) => {
                self.family(dag, v, Some(u), None)? - self.family(dag, v, None, None)?
            }
            Move::Delete(u, v) => {
                self.family(dag, v, None, Some(u))? - self.family(dag, v, None, None)?
            }
            Move::Reverse(u, v) => {
                self.family(dag, v, None, Some(u))? + self.family(dag, u, Some(v), None)?
                    - self.family(dag, v, None, None)?
                    - self.family(dag, u, None, None)?
            }
        })
    }
}

struct Tabu {
    order: VecDeque<u64>,
    set: HashSet<u64>,
    cap: usize,
}

impl Tabu {
    fn push(&mut self, key: u64) {
        if self.cap == 0 || self.set.contains(&key) {
            return;
        }
        if self.order.len() == self.cap {
            if let Some(old) = self.order.pop_front() {
                self.set.remove(&old);
            }
        }
        self.order.push_back(key);
        self.set.insert(key);
    }

    fn contains(&self, key: u64) -> bool {
        self.set.contains(&key)
    }
}

/// Searches for a high-scoring DAG starting from `seed_dag`, whose nodes must be
/// exactly the data columns (in any order).
pub fn hill_climb(
    data: &DiscreteDataset,
    seed_dag: &Dag,
    config: &SearchConfig,
) -> Result<SearchOutcome> {
    let cols = column_map(data, seed_dag)?;
    if seed_dag.len() != data.n_vars() {
        return Err(StructureError::InvalidArgument(format!(
            "seed graph has {} nodes but the data has {} columns",
            seed_dag.len(),
            data.n_vars()
        )));
    }
    if !seed_dag.is_acyclic() {
        return Err(StructureError::InvalidArgument("seed graph has a cycle".into()));
    }
    let constraints = Constraints {
        forbidden: resolve_edges(seed_dag, &config.forbidden_edges)?,
        required: resolve_edges(seed_dag, &config.required_edges)?,
        max_parents: config.max_parents.unwrap_or(usize::MAX),
    };
    if let Some(e) = constraints.required.intersection(&constraints.forbidden).next() {
        return Err(StructureError::InvalidArgument(format!(
            "edge {} -> {} is both required and forbidden",
            seed_dag.name(e.0),
            seed_dag.name(e.1)
        )));
    }
    for &(u, v) in &constraints.required {
        if !seed_dag.has_edge(u, v) {
            return Err(StructureError::InvalidArgument(format!(
                "required edge {} -> {} is missing from the seed graph",
                seed_dag.name(u),
                seed_dag.name(v)
            )));
        }
    }
    for (u, v) in seed_dag.edges() {
        if constraints.forbidden.contains(&(u, v)) {
            return Err(StructureError::InvalidArgument(format!(
                "seed graph contains forbidden edge {} -> {}",
                seed_dag.name(u),
                seed_dag.name(v)
            )));
        }
    }
    if let Some(v) = (0..seed_dag.len()).find(|&v| seed_dag.parents(v).len() > constraints.max_parents)
    {
        return Err(StructureError::InvalidArgument(format!(
            "`{}` has more parents than max_parents",
            seed_dag.name(v)
        )));
    }

    let climber = Climber {
        scorer: Scorer::new(data, config.score),
        cols,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut current = seed_dag.clone();
    let mut key = current.canonical_key();
    let mut score = climber.total(&current)?;
    let mut best = (current.clone(), score);
    let mut tabu = Tabu {
        order: VecDeque::new(),
        set: HashSet::new(),
        cap: config.tabu_size,
    };
    tabu.push(key);
    let mut climb = 0;
    let mut iteration = 0;
    let mut trace = vec![TraceEntry {
        iteration,
        climb,
        kind: StepKind::Start,
        operation: "start".into(),
        score,
        edges: current.edge_count(),
        acyclic: current.is_acyclic(),
    }];
    let mut escapes_left = config.n_restarts;

    while iteration < config.max_iters {
        let mut chosen: Option<(Move, f64)> = None;
        for mv in constraints.moves(&current) {
            if tabu.contains(mv.next_key(key)) {
                continue;
            }
            let d = climber.delta(&current, mv)?;
            if chosen.is_none_or(|(_, best_d)| d > best_d) {
                chosen = Some((mv, d));
            }
        }
        match chosen {
            Some((mv, d)) if d > config.min_improvement => {
                let label = mv.describe(&current);
                mv.apply(&mut current);
                key = mv.next_key(key);
                score += d;
                iteration += 1;
                tabu.push(key);
                trace.push(TraceEntry {
                    iteration,
                    climb,
                    kind: StepKind::Accept,
                    operation: label,
                    score,
                    edges: current.edge_count(),
                    acyclic: current.is_acyclic(),
                });
                if score > best.1 {
                    best = (current.clone(), score);
                }
            }
            _ => {
                if escapes_left == 0 {
                    break;
                }
                escapes_left -= 1;
                climb += 1;
                for _ in 0..config.n_random_ops_at_local_max {
                    let moves = constraints.moves(&current);
                    let Some(&mv) = moves.choose(&mut rng) else {
                        break;
                    };
                    let d = climber.delta(&current, mv)?;
                    let label = mv.describe(&current);
                    mv.apply(&mut current);
                    key = mv.next_key(key);
                    score += d;
                    tabu.push(key);
                    trace.push(TraceEntry {
                        iteration,
                        climb,
                        kind: StepKind::Random,
                        operation: label,
                        score,
                        edges: current.edge_count(),
                        acyclic: current.is_acyclic(),
                    });
                }
                // resynchronize against drift from incremental updates
                score = climber.total(&current)?;
                iteration += 1;
                if score > best.1 {
                    best = (current.clone(), score);
                }
            }
        }
    }
    let (dag, _) = best;
    let score = climber.total(&dag)?;
    Ok(SearchOutcome { dag, score, trace })
}
