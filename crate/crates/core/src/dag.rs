//! Directed acyclic graphs over named variables.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DagError {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("duplicate variable `{0}`")]
    DuplicateVariable(String),
    #[error("self-loop on `{0}`")]
    SelfLoop(String),
    #[error("edge {0} -> {1} already present")]
    DuplicateEdge(String, String),
    #[error("edge {0} -> {1} is not present")]
    MissingEdge(String, String),
    #[error("edge {0} -> {1} would create a cycle")]
    Cycle(String, String),
}

/// DAG with nodes identified by position; names are kept for I/O.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    names: Vec<String>,
    parents: Vec<BTreeSet<usize>>,
    children: Vec<BTreeSet<usize>>,
}

impl Dag {
    /// Edgeless graph over `names`.
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self, DagError> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let mut seen = BTreeSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(DagError::DuplicateVariable(n.clone()));
            }
        }
        let n = names.len();
        Ok(Self {
            names,
            parents: vec![BTreeSet::new(); n],
            children: vec![BTreeSet::new(); n],
        })
    }

    pub fn from_edges<S: Into<String>, A: AsRef<str>, B: AsRef<str>>(
        names: impl IntoIterator<Item = S>,
        edges: impl IntoIterator<Item = (A, B)>,
    ) -> Result<Self, DagError> {
        let mut dag = Self::new(names)?;
        for (a, b) in edges {
            let u = dag.require(a.as_ref())?;
            let v = dag.require(b.as_ref())?;
            dag.add_edge(u, v)?;
        }
        Ok(dag)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, v: usize) -> &str {
        &self.names[v]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn require(&self, name: &str) -> Result<usize, DagError> {
        self.index_of(name)
            .ok_or_else(|| DagError::UnknownVariable(name.to_string()))
    }

    pub fn parents(&self, v: usize) -> &BTreeSet<usize> {
        &self.parents[v]
    }

    pub fn children(&self, v: usize) -> &BTreeSet<usize> {
        &self.children[v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.parents[v].contains(&u)
    }

    pub fn edge_count(&self) -> usize {
        self.parents.iter().map(BTreeSet::len).sum()
    }

    /// Edges sorted by (parent, child).
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<_> = self
            .children
            .iter()
            .enumerate()
            .flat_map(|(u, cs)| cs.iter().map(move |&v| (u, v)))
            .collect();
        out.sort_unstable();
        out
    }

    pub fn named_edges(&self) -> Vec<(String, String)> {
        self.edges()
            .into_iter()
            .map(|(u, v)| (self.names[u].clone(), self.names[v].clone()))
            .collect()
    }

    /// True when a directed path `from ~> to` exists (a node reaches itself).
    pub fn has_path(&self, from: usize, to: usize) -> bool {
        if from == to {
            return true;
        }
        let mut seen = vec![false; self.len()];
        let mut stack = vec![from];
        seen[from] = true;
        while let Some(u) = stack.pop() {
            for &c in &self.children[u] {
                if c == to {
                    return true;
                }
                if !seen[c] {
                    seen[c] = true;
                    stack.push(c);
                }
            }
        }
        false
    }

    /// Adding `u -> v` keeps the graph acyclic.
    pub fn can_add_edge(&self, u: usize, v: usize) -> bool {
        u != v && !self.has_edge(u, v) && !self.has_path(v, u)
    }

    /// Reversing the existing edge `u -> v` keeps the graph acyclic.
    pub fn can_reverse_edge(&self, u: usize, v: usize) -> bool {
        if !self.has_edge(u, v) {
            return false;
        }
        // any other u ~> v path would close a cycle with v -> u
        let mut seen = vec![false; self.len()];
        let mut stack: Vec<usize> = self.children[u].iter().copied().filter(|&c| c != v).collect();
        for &c in &stack {
            seen[c] = true;
        }
        while let Some(x) = stack.pop() {
            if x == v {
                return false;
            }
            for &c in &self.children[x] {
                if !seen[c] {
                    seen[c] = true;
                    stack.push(c);
                }
            }
        }
        true
    }

    pub fn add_edge(&mut self, u: usize, v: usize) -> Result<(), DagError> {
        if u == v {
            return Err(DagError::SelfLoop(self.names[u].clone()));
        }
        if self.has_edge(u, v) {
            return Err(DagError::DuplicateEdge(self.names[u].clone(), self.names[v].clone()));
        }
        if self.has_path(v, u) {
            return Err(DagError::Cycle(self.names[u].clone(), self.names[v].clone()));
        }
        self.parents[v].insert(u);
        self.children[u].insert(v);
        Ok(())
    }

    pub fn remove_edge(&mut self, u: usize, v: usize) -> Result<(), DagError> {
        if !self.parents[v].remove(&u) {
            return Err(DagError::MissingEdge(self.names[u].clone(), self.names[v].clone()));
        }
        self.children[u].remove(&v);
        Ok(())
    }

    pub fn reverse_edge(&mut self, u: usize, v: usize) -> Result<(), DagError> {
        if !self.can_reverse_edge(u, v) {
            if !self.has_edge(u, v) {
                return Err(DagError::MissingEdge(self.names[u].clone(), self.names[v].clone()));
            }
            return Err(DagError::Cycle(self.names[v].clone(), self.names[u].clone()));
        }
        self.remove_edge(u, v)?;
        self.parents[u].insert(v);
        self.children[v].insert(u);
        Ok(())
    }

    /// Kahn's algorithm, always releasing the lowest ready index first.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let mut indeg: Vec<usize> = self.parents.iter().map(BTreeSet::len).collect();
        let mut ready: BTreeSet<usize> = (0..self.len()).filter(|&v| indeg[v] == 0).collect();
        let mut order = Vec::with_capacity(self.len());
        while let Some(u) = ready.pop_first() {
            order.push(u);
            for &c in &self.children[u] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        (order.len() == self.len()).then_some(order)
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_some()
    }

    /// All ancestors of `seeds`, including the seeds themselves.
    pub fn ancestral_set(&self, seeds: impl IntoIterator<Item = usize>) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        let mut queue: VecDeque<usize> = seeds.into_iter().collect();
        while let Some(v) = queue.pop_front() {
            if out.insert(v) {
                queue.extend(self.parents[v].iter().copied());
            }
        }
        out
    }

    /// Order-independent hash of the edge set (XOR of per-edge keys), so a single
    /// edge change updates it in O(1) via [`Dag::edge_key`].
    pub fn canonical_key(&self) -> u64 {
        self.edges()
            .into_iter()
            .fold(0, |acc, (u, v)| acc ^ Self::edge_key(u, v))
    }

    /// Key contributed by the edge `u -> v` to [`Dag::canonical_key`].
    pub fn edge_key(u: usize, v: usize) -> u64 {
        // splitmix64 finalizer over the packed pair
        let mut z = ((u as u64) << 32 | v as u64).wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Undirected adjacencies as sorted name pairs.
    pub fn skeleton(&self) -> BTreeSet<(String, String)> {
        self.edges()
            .into_iter()
            .map(|(u, v)| {
                let (a, b) = (self.names[u].clone(), self.names[v].clone());
                if a <= b {
                    (a, b)
                } else {
                    (b, a)
                }
            })
            .collect()
    }

    /// Graphviz rendering.
    pub fn to_dot(&self, graph_name: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "digraph {} {{", dot_id(graph_name));
        for n in &self.names {
            let _ = writeln!(out, "  {};", dot_id(n));
        }
        for (u, v) in self.edges() {
            let _ = writeln!(out, "  {} -> {};", dot_id(&self.names[u]), dot_id(&self.names[v]));
        }
        out.push_str("}\n");
        out
    }
}

fn dot_id(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}
