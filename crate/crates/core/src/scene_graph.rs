//! Co-visibility graph over an image set.
//!
//! Image similarity is the cosine between mean-pooled, L2-normalized
//! descriptors. The edge set is every node's top-k neighbours plus a
//! maximum-similarity spanning tree, which keeps the graph connected.

use crate::error::{Error, Result};
use crate::matching::FeatureMap;
use rayon::prelude::*;
use std::cmp::Ordering;
use std::collections::{BTreeSet, VecDeque};

/// Dense symmetric `n x n` similarity matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub n: usize,
    pub scores: Vec<f64>,
    /// Images whose pooled descriptor had zero norm; they score 0 against
    /// every other image.
    pub flagged: Vec<usize>,
}

impl SimilarityMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("similarity matrix must be square".into()));
        }
        Ok(SimilarityMatrix {
            n,
            scores: rows.into_iter().flatten().collect(),
            flagged: Vec::new(),
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.scores[i * self.n + j]
    }
}

fn pooled(f: &FeatureMap) -> Vec<f64> {
    let mut acc = vec![0.0; f.dim];
    for p in 0..f.pixels() {
        for (a, v) in acc.iter_mut().zip(f.descriptor(p)) {
            *a += v;
        }
    }
    let inv = 1.0 / f.pixels().max(1) as f64;
    acc.iter_mut().for_each(|v| *v *= inv);
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        acc.iter_mut().for_each(|v| *v /= norm);
    }
    acc
}

/// Cosine similarity of globally mean-pooled descriptors for every image
/// pair; the diagonal is 1.
pub fn pairwise_similarity(features: &[FeatureMap]) -> Result<SimilarityMatrix> {
    let n = features.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 images, got {n}")));
    }
    let dim = features[0].dim;
    if let Some(bad) = features.iter().position(|f| f.dim != dim) {
        return Err(Error::Shape(format!(
            "image {bad} has descriptor dim {}, expected {dim}",
            features[bad].dim
        )));
    }
    let pools: Vec<Vec<f64>> = features.par_iter().map(pooled).collect();
    let flagged: Vec<usize> = (0..n).filter(|&i| pools[i].iter().all(|&v| v == 0.0)).collect();
    for &i in &flagged {
        log::warn!("image {i} has a zero pooled descriptor");
    }
    let scores: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / n, k % n);
            if i == j {
                1.0
            } else {
                pools[i].iter().zip(&pools[j]).map(|(a, b)| a * b).sum()
            }
        })
        .collect();
    Ok(SimilarityMatrix { n, scores, flagged })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    /// Lower node index.
    pub i: usize,
    pub j: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneGraph {
    pub nodes: usize,
    /// Sorted by `(i, j)`, `i < j`.
    pub edges: Vec<Edge>,
}

/// Descending score, ties broken by ascending `(i, j)`. NaN sorts last.
fn edge_order(a: &Edge, b: &Edge) -> Ordering {
    let key = |s: f64| if s.is_nan() { f64::NEG_INFINITY } else { s };
    key(b.score)
        .partial_cmp(&key(a.score))
        .unwrap_or(Ordering::Equal)
        .then((a.i, a.j).cmp(&(b.i, b.j)))
}

struct DisjointSet(Vec<usize>);

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra.max(rb)] = ra.min(rb);
        true
    }
}

/// Kruskal maximum spanning forest over `edges`.
pub fn max_spanning_forest(nodes: usize, edges: &[Edge]) -> Vec<Edge> {
    let mut sorted = edges.to_vec();
    sorted.sort_by(edge_order);
    let mut ds = DisjointSet::new(nodes);
    sorted.into_iter().filter(|e| ds.union(e.i, e.j)).collect()
}

/// Top-`k` neighbours of every node united with a maximum-similarity
/// spanning tree. `k` is capped at `n - 1`.
pub fn build_graph(scores: &SimilarityMatrix, k: usize) -> Result<SceneGraph> {
    let n = scores.n;
    if n < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 nodes, got {n}")));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let k = k.min(n - 1);
    let mk = |a: usize, b: usize| Edge {
        i: a.min(b),
        j: a.max(b),
        score: scores.get(a.min(b), a.max(b)),
    };
    let mut set = BTreeSet::new();
    for a in 0..n {
        let mut nbrs: Vec<Edge> = (0..n).filter(|&b| b != a).map(|b| mk(a, b)).collect();
        nbrs.sort_by(edge_order);
        for e in nbrs.into_iter().take(k) {
            set.insert((e.i, e.j));
        }
    }
    let complete: Vec<Edge> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).map(|(a, b)| mk(a, b)).collect();
    for e in max_spanning_forest(n, &complete) {
        set.insert((e.i, e.j));
    }
    let graph = SceneGraph {
        nodes: n,
        edges: set.into_iter().map(|(a, b)| mk(a, b)).collect(),
    };
    graph.check_connected()?;
    Ok(graph)
}

impl SceneGraph {
    pub fn neighbors(&self, node: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|e| {
                if e.i == node {
                    Some(e.j)
                } else if e.j == node {
                    Some(e.i)
                } else {
                    None
                }
            })
            .collect()
    }

    /// Connected components, each sorted, in order of their smallest node.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut ds = DisjointSet::new(self.nodes);
        for e in &self.edges {
            ds.union(e.i, e.j);
        }
        let mut comps: Vec<Vec<usize>> = Vec::new();
        let mut root_of = vec![usize::MAX; self.nodes];
        for v in 0..self.nodes {
            let r = ds.find(v);
            if root_of[r] == usize::MAX {
                root_of[r] = comps.len();
                comps.push(Vec::new());
            }
            comps[root_of[r]].push(v);
        }
        comps
    }

    pub fn check_connected(&self) -> Result<()> {
        let comps = self.components();
        if comps.len() > 1 {
            return Err(Error::Disconnected {
                component: comps[1].clone(),
            });
        }
        Ok(())
    }

    /// Breadth-first order over the maximum spanning tree from `root`, as
    /// `(parent, child)` pairs.
    pub fn spanning_tree_order(&self, root: usize) -> Vec<(usize, usize)> {
        let tree = max_spanning_forest(self.nodes, &self.edges);
        let mut adj = vec![Vec::new(); self.nodes];
        for e in &tree {
            adj[e.i].push(e.j);
            adj[e.j].push(e.i);
        }
        adj.iter_mut().for_each(|a| a.sort_unstable());
        let mut seen = vec![false; self.nodes];
        let mut order = Vec::new();
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        while let Some(v) = queue.pop_front() {
            for &c in &adj[v] {
                if !seen[c] {
                    seen[c] = true;
                    order.push((v, c));
                    queue.push_back(c);
                }
            }
        }
        order
    }
}
