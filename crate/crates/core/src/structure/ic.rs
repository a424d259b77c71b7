//! Constraint-based learning: Pearson chi-square independence tests and the
//! IC algorithm (Markov blankets, neighbours, arc directions).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{Result, StructureError};
use crate::dataset::DiscreteDataset;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CiTestResult {
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
}

impl CiTestResult {
    pub fn independent(&self, alpha: f64) -> bool {
        self.p_value >= alpha
    }
}

fn check_vars(data: &DiscreteDataset, vars: &[usize]) -> Result<()> {
    if data.n_rows() == 0 {
        return Err(StructureError::InvalidArgument("empty data".into()));
    }
    if let Some(&v) = vars.iter().find(|&&v| v >= data.n_vars()) {
        return Err(StructureError::InvalidArgument(format!("no column {v}")));
    }
    Ok(())
}

/// Tests `x ⫫ y | z`. Within each stratum of `z`, levels of x or y that never
/// occur are dropped, and the stratum is skipped (contributing no degrees of
/// freedom) when its expected cell counts average below 5.
pub fn chi2_ci_test(
    data: &DiscreteDataset,
    x: usize,
    y: usize,
    z: &[usize],
) -> Result<CiTestResult> {
    check_vars(data, &[x, y])?;
    check_vars(data, z)?;
    if x == y || z.contains(&x) || z.contains(&y) {
        return Err(StructureError::InvalidArgument(
            "x, y and the conditioning set must be disjoint".into(),
        ));
    }
    let (rx, ry) = (data.card(x), data.card(y));
    let (cx, cy) = (data.column(x), data.column(y));
    let zcols: Vec<&[usize]> = z.iter().map(|&v| data.column(v)).collect();

    let mut strata: HashMap<Vec<usize>, Vec<u64>> = HashMap::new();
    for r in 0..data.n_rows() {
        let key: Vec<usize> = zcols.iter().map(|c| c[r]).collect();
        strata.entry(key).or_insert_with(|| vec![0; rx * ry])[cx[r] * ry + cy[r]] += 1;
    }
    // fixed summation order keeps the statistic reproducible
    let strata: BTreeMap<_, _> = strata.into_iter().collect();

    let mut statistic = 0.0;
    let mut dof = 0usize;
    for table in strata.values() {
        let row_tot: Vec<u64> = (0..rx).map(|i| (0..ry).map(|j| table[i * ry + j]).sum()).collect();
        let col_tot: Vec<u64> = (0..ry).map(|j| (0..rx).map(|i| table[i * ry + j]).sum()).collect();
        let rows: Vec<usize> = (0..rx).filter(|&i| row_tot[i] > 0).collect();
        let cols: Vec<usize> = (0..ry).filter(|&j| col_tot[j] > 0).collect();
        let n: u64 = row_tot.iter().sum();
        let (r, c) = (rows.len(), cols.len());
        if r < 2 || c < 2 || (n as usize) < 5 * r * c {
            continue;
        }
        let nf = n as f64;
        for &i in &rows {
            for &j in &cols {
                let expected = row_tot[i] as f64 * col_tot[j] as f64 / nf;
                let d = table[i * ry + j] as f64 - expected;
                statistic += d * d / expected;
            }
        }
        dof += (r - 1) * (c - 1);
    }
    let p_value = if dof == 0 {
        1.0
    } else {
        let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
        dist.sf(statistic).clamp(0.0, 1.0)
    };
    Ok(CiTestResult {
        statistic,
        degrees_of_freedom: dof,
        p_value,
    })
}

/// Grow-shrink Markov blankets, then symmetrized by dropping any `y ∈ B(x)`
/// for which `x ∉ B(y)`.
pub fn learn_markov_blankets(data: &DiscreteDataset, alpha: f64) -> Result<Vec<BTreeSet<usize>>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StructureError::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    check_vars(data, &[])?;
    let n = data.n_vars();
    let mut blankets = Vec::with_capacity(n);
    for x in 0..n {
        let mut b: Vec<usize> = Vec::new();
        loop {
            let mut pick: Option<(usize, f64)> = None;
            for y in (0..n).filter(|&y| y != x && !b.contains(&y)) {
                let p = chi2_ci_test(data, x, y, &b)?.p_value;
                if p < alpha && pick.is_none_or(|(_, bp)| p < bp) {
                    pick = Some((y, p));
                }
            }
            match pick {
                Some((y, _)) => b.push(y),
                None => break,
            }
        }
        let mut i = 0;
        while i < b.len() {
            let rest: Vec<usize> = b.iter().copied().filter(|&v| v != b[i]).collect();
            if chi2_ci_test(data, x, b[i], &rest)?.independent(alpha) {
                b.remove(i);
            } else {
                i += 1;
            }
        }
        blankets.push(b.into_iter().collect::<BTreeSet<_>>());
    }
    let symmetric = (0..n)
        .map(|x| {
            blankets[x]
                .iter()
                .copied()
                .filter(|&y| blankets[y].contains(&x))
                .collect()
        })
        .collect();
    Ok(symmetric)
}

/// Partially directed graph. Undirected pairs are stored as `(low, high)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pdag {
    pub names: Vec<String>,
    pub directed: BTreeSet<(usize, usize)>,
    pub undirected: BTreeSet<(usize, usize)>,
}

impl Pdag {
    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.directed.contains(&(a, b))
            || self.directed.contains(&(b, a))
            || self.undirected.contains(&(a.min(b), a.max(b)))
    }

    /// Adjacencies as sorted name pairs, ignoring direction.
    pub fn skeleton(&self) -> BTreeSet<(String, String)> {
        self.directed
            .iter()
            .chain(&self.undirected)
            .map(|&(u, v)| {
                let (a, b) = (self.names[u].clone(), self.names[v].clone());
                if a <= b {
                    (a, b)
                } else {
                    (b, a)
                }
            })
            .collect()
    }

    pub fn has_directed(&self, from: &str, to: &str) -> bool {
        let idx = |s: &str| self.names.iter().position(|n| n == s);
        matches!((idx(from), idx(to)), (Some(u), Some(v)) if self.directed.contains(&(u, v)))
    }

    pub fn to_dot(&self, graph_name: &str) -> String {
        let q = |s: &str| format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""));
        let mut out = String::new();
        let _ = writeln!(out, "digraph {} {{", q(graph_name));
        for n in &self.names {
            let _ = writeln!(out, "  {};", q(n));
        }
        for &(u, v) in &self.directed {
            let _ = writeln!(out, "  {} -> {};", q(&self.names[u]), q(&self.names[v]));
        }
        for &(u, v) in &self.undirected {
            let _ = writeln!(out, "  {} -> {} [dir=none];", q(&self.names[u]), q(&self.names[v]));
        }
        out.push_str("}\n");
        out
    }

    fn orient(&mut self, from: usize, to: usize) -> bool {
        self.undirected.remove(&(from.min(to), from.max(to))) && self.directed.insert((from, to))
    }

    fn directed_path(&self, from: usize, to: usize) -> bool {
        let mut seen = vec![false; self.names.len()];
        let mut stack = vec![from];
        while let Some(u) = stack.pop() {
            for &(a, b) in &self.directed {
                if a == u && !seen[b] {
                    if b == to {
                        return true;
                    }
                    seen[b] = true;
                    stack.push(b);
                }
            }
        }
        false
    }
}

/// Subsets of `set` by increasing size, lexicographic within a size.
fn subsets(set: &[usize]) -> Vec<Vec<usize>> {
    let mut all: Vec<Vec<usize>> = (0u64..1 << set.len())
        .map(|mask| {
            set.iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .map(|(_, &v)| v)
                .collect()
        })
        .collect();
    all.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    all
}

const MAX_SEPSET_SEARCH: usize = 16;

/// Runs the IC algorithm at significance level `alpha`.
pub fn ic_learn(data: &DiscreteDataset, alpha: f64) -> Result<Pdag> {
    let blankets = learn_markov_blankets(data, alpha)?;
    let n = data.n_vars();
    let mut pdag = Pdag {
        names: data.names().to_vec(),
        directed: BTreeSet::new(),
        undirected: BTreeSet::new(),
    };
    // only blanket mates can be neighbours; the test is pairwise, so the
    // resulting neighbour sets are symmetric
    let mut sepsets: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for x in 0..n {
        for y in blankets[x].iter().copied().filter(|&y| y > x) {
            let bx: Vec<usize> = blankets[x].iter().copied().filter(|&v| v != y).collect();
            let by: Vec<usize> = blankets[y].iter().copied().filter(|&v| v != x).collect();
            let t = if by.len() < bx.len() { by } else { bx };
            if t.len() > MAX_SEPSET_SEARCH {
                return Err(StructureError::InvalidArgument(format!(
                    "Markov blanket of size {} is too large for separating-set search",
                    t.len()
                )));
            }
            let mut found = None;
            for s in subsets(&t) {
                if chi2_ci_test(data, x, y, &s)?.independent(alpha) {
                    found = Some(s);
                    break;
                }
            }
            match found {
                Some(s) => {
                    sepsets.insert((x, y), s);
                }
                None => {
                    pdag.undirected.insert((x, y));
                }
            }
        }
    }

    // v-structures x -> k <- y for non-adjacent x, y with k outside their separating set
    for x in 0..n {
        for y in x + 1..n {
            let Some(sep) = sepsets.get(&(x, y)) else {
                continue;
            };
            for k in 0..n {
                if k == x || k == y || sep.contains(&k) {
                    continue;
                }
                let ux = pdag.undirected.contains(&(x.min(k), x.max(k))) || pdag.directed.contains(&(x, k));
                let uy = pdag.undirected.contains(&(y.min(k), y.max(k))) || pdag.directed.contains(&(y, k));
                if ux && uy {
                    pdag.orient(x, k);
                    pdag.orient(y, k);
                }
            }
        }
    }

    loop {
        let mut changed = false;
        let undirected: Vec<(usize, usize)> = pdag.undirected.iter().copied().collect();
        for (a, b) in undirected {
            if pdag.directed_path(a, b) {
                changed |= pdag.orient(a, b);
            } else if pdag.directed_path(b, a) {
                changed |= pdag.orient(b, a);
            }
        }
        let undirected: Vec<(usize, usize)> = pdag.undirected.iter().copied().collect();
        for (a, b) in undirected {
            for (k, j) in [(a, b), (b, a)] {
                let pointed = (0..n).any(|i| {
                    i != j && pdag.directed.contains(&(i, k)) && !pdag.adjacent(i, j)
                });
                if pointed && pdag.orient(k, j) {
                    changed = true;
                    break;
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok(pdag)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(cols: Vec<Vec<usize>>, card: usize) -> DiscreteDataset {
        let names = (0..cols.len()).map(|i| format!("V{i}")).collect();
        let cards = vec![card; cols.len()];
        DiscreteDataset::new(names, cards, cols).unwrap()
    }

    #[test]
    fn identical_columns_are_dependent() {
        let x: Vec<usize> = (0..500).map(|i| (i * 13 + i / 7) % 3).collect();
        let r = chi2_ci_test(&ds(vec![x.clone(), x], 3), 0, 1, &[]).unwrap();
        assert!(r.p_value < 1e-6);
        assert_eq!(r.degrees_of_freedom, 4);
    }

    #[test]
    fn xor_is_dependent_given_the_third() {
        let rows: Vec<(usize, usize)> = (0..400).map(|i| (i % 2, (i / 2) % 2)).collect();
        let x: Vec<usize> = rows.iter().map(|r| r.0).collect();
        let z: Vec<usize> = rows.iter().map(|r| r.1).collect();
        let y: Vec<usize> = rows.iter().map(|r| r.0 ^ r.1).collect();
        let data = ds(vec![x, y, z], 2);
        assert!(chi2_ci_test(&data, 0, 1, &[]).unwrap().p_value > 0.5);
        assert!(chi2_ci_test(&data, 0, 1, &[2]).unwrap().p_value < 0.01);
    }

    #[test]
    fn sparse_strata_are_skipped() {
        let data = ds(vec![vec![0, 1, 0, 1], vec![0, 1, 1, 0]], 2);
        let r = chi2_ci_test(&data, 0, 1, &[]).unwrap();
        assert_eq!((r.degrees_of_freedom, r.p_value), (0, 1.0));
    }

    #[test]
    fn bad_arguments() {
        let data = ds(vec![vec![0, 1], vec![1, 0]], 2);
        assert!(chi2_ci_test(&data, 0, 0, &[]).is_err());
        assert!(chi2_ci_test(&data, 0, 1, &[1]).is_err());
        let empty = ds(vec![vec![], vec![]], 2);
        assert!(chi2_ci_test(&empty, 0, 1, &[]).is_err());
        assert!(learn_markov_blankets(&data, 0.0).is_err());
    }

    #[test]
    fn subsets_are_ordered_by_size() {
        assert_eq!(
            subsets(&[3, 5]),
            vec![vec![], vec![3], vec![5], vec![3, 5]]
        );
    }

    #[test]
    fn rule_b_propagates_orientation() {
        let mut p = Pdag {
            names: vec!["a".into(), "b".into(), "c".into()],
            directed: [(0, 1)].into(),
            undirected: [(1, 2)].into(),
        };
        assert!(!p.adjacent(0, 2));
        assert!(p.orient(1, 2));
        assert!(p.has_directed("b", "c"));
        assert!(p.directed_path(0, 2));
    }
}
