//! Graphs, adjacency normalization, the self-adaptive adjacency and the
//! Erdős–Rényi generator.

use std::collections::HashSet;
use std::path::Path;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::rng;
use crate::tensorgrad::{ParamId, Tape, Tensor, Var};

/// Node count, weighted edge list and per-node neighbor lists.
///
/// Undirected graphs store each edge once. The neighbor list of node `i`
/// holds every `j != i` joined to `i` by an edge in either direction, sorted
/// ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n_nodes: usize,
    directed: bool,
    edges: Vec<(usize, usize, f64)>,
    neighbors: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    n_nodes: usize,
    directed: bool,
    edges: Vec<(usize, usize, f64)>,
}

impl Graph {
    pub fn new(n_nodes: usize, directed: bool, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for &(s, d, w) in &edges {
            if s >= n_nodes || d >= n_nodes {
                return Err(Error::Domain(format!("edge ({s}, {d}) outside [0, {n_nodes})")));
            }
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Domain(format!("edge ({s}, {d}) has weight {w}")));
            }
            let key = if directed { (s, d) } else { (s.min(d), s.max(d)) };
            if !seen.insert(key) {
                return Err(Error::Domain(format!("duplicate edge ({s}, {d})")));
            }
        }
        let mut sets = vec![Vec::new(); n_nodes];
        for &(s, d, _) in &edges {
            if s != d {
                sets[s].push(d);
                sets[d].push(s);
            }
        }
        let neighbors = sets
            .into_iter()
            .map(|mut v| {
                v.sort_unstable();
                v.dedup();
                v
            })
            .collect();
        Ok(Self {
            n_nodes,
            directed,
            edges,
            neighbors,
        })
    }

    /// Graph with an edge for every positive entry of a dense `N x N` matrix.
    /// Undirected graphs read the upper triangle (diagonal included).
    pub fn from_dense(a: &Tensor, directed: bool) -> Result<Self> {
        let [n, m] = a.dims2()?;
        if n != m {
            return shape_err(format!("adjacency must be square, got {n}x{m}"));
        }
        let mut edges = Vec::new();
        for i in 0..n {
            let start = if directed { 0 } else { i };
            for j in start..n {
                let w = a.data()[i * n + j];
                if w < 0.0 {
                    return Err(Error::Domain(format!("negative weight at ({i}, {j})")));
                }
                if w > 0.0 {
                    edges.push((i, j, w));
                }
            }
        }
        Self::new(n, directed, edges)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    /// Dense weighted adjacency; symmetric for undirected graphs.
    pub fn dense_adjacency(&self) -> Tensor {
        let n = self.n_nodes;
        let mut a = Tensor::zeros(&[n, n]);
        let d = a.data_mut();
        for &(s, t, w) in &self.edges {
            d[s * n + t] = w;
            if !self.directed {
                d[t * n + s] = w;
            }
        }
        a
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.n_nodes)?;
        let edges = self.edges.iter().map(|&(s, d, w)| (perm[s], perm[d], w)).collect();
        Self::new(self.n_nodes, self.directed, edges)
    }

    /// Flattened (center, neighbor) pairs for `groups` disjoint copies of the
    /// graph; row `g * N + i` addresses node `i` of copy `g`.
    pub fn edge_index(&self, self_loops: bool, groups: usize) -> EdgeIndex {
        let n = self.n_nodes;
        let mut local = Vec::new();
        for i in 0..n {
            let mut nb: Vec<usize> = self.neighbors[i].clone();
            if self_loops {
                nb.push(i);
                nb.sort_unstable();
            }
            local.extend(nb.into_iter().map(|j| (i, j)));
        }
        let e = local.len();
        let mut center = Vec::with_capacity(e * groups);
        let mut nbr = Vec::with_capacity(e * groups);
        let mut pair = Vec::with_capacity(e * groups);
        for g in 0..groups {
            for &(i, j) in &local {
                center.push(g * n + i);
                nbr.push(g * n + j);
                pair.push(i * n + j);
            }
        }
        EdgeIndex {
            center: center.into(),
            nbr: nbr.into(),
            pair: pair.into(),
            rows: n * groups,
            n_nodes: n,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&GraphFile {
            n_nodes: self.n_nodes,
            directed: self.directed,
            edges: self.edges.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: GraphFile = serde_json::from_str(s)?;
        Self::new(f.n_nodes, f.directed, f.edges)
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_json(&s).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }
}

/// Pair lists consumed by the attentional and message-passing layers.
#[derive(Clone, Debug)]
pub struct EdgeIndex {
    /// Row of the receiving (center) node, per pair.
    pub center: Rc<[usize]>,
    /// Row of the sending (neighbor) node, per pair.
    pub nbr: Rc<[usize]>,
    /// Flat `i * N + j` position inside an `N x N` matrix, per pair.
    pub pair: Rc<[usize]>,
    pub rows: usize,
    pub n_nodes: usize,
}

impl EdgeIndex {
    pub fn len(&self) -> usize {
        self.center.len()
    }

    pub fn is_empty(&self) -> bool {
        self.center.is_empty()
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::Domain("permutation length mismatch".into()));
    }
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::Domain("not a permutation".into()));
        }
    }
    Ok(())
}

/// `P_f = A / rowsum(A)`; all-zero rows stay zero.
pub fn normalize_forward(a: &Tensor) -> Result<Tensor> {
    let [n, m] = a.dims2()?;
    if n != m {
        return shape_err(format!("adjacency must be square, got {n}x{m}"));
    }
    if let Some(v) = a.data().iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Domain(format!("adjacency entry {v} is negative")));
    }
    let mut out = a.clone();
    for row in out.data_mut().chunks_mut(n.max(1)) {
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
    Ok(out)
}

/// `P_b = A^T / rowsum(A^T)`.
pub fn normalize_backward(a: &Tensor) -> Result<Tensor> {
    normalize_forward(&a.transpose()?)
}

/// `softmax(relu(E1 E2^T))` row-wise, evaluated without a tape.
pub fn self_adaptive(e1: &Tensor, e2: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let a = tape.constant(e1.clone())?;
    let b = tape.constant(e2.clone())?;
    let out = self_adaptive_on(&mut tape, a, b)?;
    Ok(tape.value(out).clone())
}

/// Recorded form of [`self_adaptive`]; differentiable in both factors.
pub fn self_adaptive_on(tape: &mut Tape, e1: Var, e2: Var) -> Result<Var> {
    let (s1, s2) = (tape.shape(e1).to_vec(), tape.shape(e2).to_vec());
    if s1.len() != 2 || s2.len() != 2 || s1 != s2 {
        return shape_err(format!("adaptive factors {s1:?} and {s2:?} must both be N x c"));
    }
    let logits = tape.matmul_t(e1, e2)?;
    let r = tape.relu(logits)?;
    tape.row_softmax(r)
}

/// Learnable embedding pair behind the self-adaptive adjacency.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptiveFactors {
    pub e1: ParamId,
    pub e2: ParamId,
}

/// Matrices consumed by a spatial layer.
#[derive(Clone, Debug)]
pub struct AdjacencySet {
    pub forward: Tensor,
    pub backward: Tensor,
    pub adaptive: Option<AdaptiveFactors>,
}

impl AdjacencySet {
    pub fn from_adjacency(a: &Tensor) -> Result<Self> {
        Ok(Self {
            forward: normalize_forward(a)?,
            backward: normalize_backward(a)?,
            adaptive: None,
        })
    }

    pub fn with_adaptive(mut self, factors: AdaptiveFactors) -> Self {
        self.adaptive = Some(factors);
        self
    }

    pub fn n_nodes(&self) -> usize {
        self.forward.shape()[0]
    }

    /// Number of matrices exposed to the spatial layer.
    pub fn count(&self) -> usize {
        2 + usize::from(self.adaptive.is_some())
    }

    /// Places the matrices on a tape (parameters must already be bound).
    pub fn realize(&self, tape: &mut Tape) -> Result<Supports> {
        let forward = tape.constant(self.forward.clone())?;
        let backward = tape.constant(self.backward.clone())?;
        let adaptive = match self.adaptive {
            Some(f) => {
                let (e1, e2) = (tape.param(f.e1), tape.param(f.e2));
                Some(self_adaptive_on(tape, e1, e2)?)
            }
            None => None,
        };
        Ok(Supports {
            forward,
            backward,
            adaptive,
        })
    }
}

/// An [`AdjacencySet`] realized on a tape.
#[derive(Clone, Copy, Debug)]
pub struct Supports {
    pub forward: Var,
    pub backward: Var,
    pub adaptive: Option<Var>,
}

/// Erdős–Rényi G(n, p): each unordered pair is an edge independently with
/// probability `p`. Deterministic per seed (see [`crate::rng`]).
pub fn gen_er_graph(n: usize, p: f64, seed: u64) -> Result<Graph> {
    gen_er_graph_with(n, p, &mut rng::seeded(seed))
}

/// [`gen_er_graph`] drawing from a caller-provided stream. Pairs are visited
/// in order `(0,1), (0,2), ..., (n-2,n-1)`, one uniform draw each.
pub fn gen_er_graph_with<R: Rng>(n: usize, p: f64, rng: &mut R) -> Result<Graph> {
    if n == 0 {
        return Err(Error::Domain("graph must have at least one node".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("edge probability {p} outside [0, 1]")));
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen::<f64>() < p {
                edges.push((i, j, 1.0));
            }
        }
    }
    Graph::new(n, false, edges)
}

/// Reads a dense adjacency CSV (no header, or a header row of node ids).
pub fn load_adjacency_csv(path: &Path) -> Result<Tensor> {
    let load_err = |msg: String| Error::Load {
        path: path.to_path_buf(),
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| load_err(e.to_string()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| load_err(e.to_string()))?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(|s| s.trim().parse::<f64>()).collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if r == 0 => continue,
            Err(e) => return Err(load_err(format!("row {}: {e}", r + 1))),
        }
    }
    let n = rows.len();
    for (r, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(load_err(format!(
                "adjacency row {} has {} columns, expected {n}",
                r + 1,
                row.len()
            )));
        }
    }
    Tensor::from_rows(&rows)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn forward_examples() {
        assert_eq!(normalize_forward(&Tensor::identity(2)).unwrap(), Tensor::identity(2));
        assert_eq!(
            normalize_forward(&m(&[&[0.0, 2.0], &[0.0, 0.0]])).unwrap(),
            m(&[&[0.0, 1.0], &[0.0, 0.0]])
        );
        assert_eq!(
            normalize_forward(&m(&[&[1.0, 1.0], &[1.0, 3.0]])).unwrap(),
            m(&[&[0.5, 0.5], &[0.25, 0.75]])
        );
        assert!(matches!(normalize_forward(&m(&[&[1.0, -1.0], &[0.0, 1.0]])), Err(Error::Domain(_))));
    }

    #[test]
    fn backward_examples() {
        let a = m(&[&[0.0, 2.0], &[0.0, 0.0]]);
        assert_eq!(normalize_backward(&a).unwrap(), m(&[&[0.0, 0.0], &[1.0, 0.0]]));
        let s = m(&[&[0.0, 1.0, 2.0], &[1.0, 0.0, 3.0], &[2.0, 3.0, 1.0]]);
        assert_eq!(normalize_backward(&s).unwrap(), normalize_forward(&s).unwrap());
    }

    #[test]
    fn backward_equals_forward_of_transpose_on_random() {
        let mut r = rng::seeded(3);
        for _ in 0..20 {
            let a = Tensor::uniform(&[4, 4], 1.0, &mut r);
            let a = Tensor::new(vec![4, 4], a.data().iter().map(|v| v.abs()).collect()).unwrap();
            let lhs = normalize_backward(&a).unwrap();
            let rhs = normalize_forward(&a.transpose().unwrap()).unwrap();
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn self_adaptive_examples() {
        let z = Tensor::zeros(&[3, 2]);
        let a = self_adaptive(&z, &z).unwrap();
        assert!(a.data().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));

        let e1 = m(&[&[1.0], &[2.0]]);
        let e2 = m(&[&[-1.0], &[-3.0]]);
        let a = self_adaptive(&e1, &e2).unwrap();
        assert!(a.data().iter().all(|v| (v - 0.5).abs() < 1e-15));

        let e = m(&[&[1.0], &[0.0]]);
        let a = self_adaptive(&e, &e).unwrap();
        let s0 = 1.0f64.exp() / (1.0f64.exp() + 1.0);
        assert!((a.get(&[0, 0]) - s0).abs() < 1e-12);
        assert!((a.get(&[0, 0]) - 0.7311).abs() < 1e-4);
        assert!((a.get(&[0, 1]) - 0.2689).abs() < 1e-4);
        assert_eq!(a.get(&[1, 0]), 0.5);
        assert_eq!(a.get(&[1, 1]), 0.5);
    }

    #[test]
    fn er_extremes_and_errors() {
        assert_eq!(gen_er_graph(50, 0.0, 1).unwrap().num_edges(), 0);
        assert_eq!(gen_er_graph(100, 1.0, 1).unwrap().num_edges(), 4950);
        assert!(gen_er_graph(0, 0.5, 1).is_err());
        assert!(gen_er_graph(5, 1.5, 1).is_err());
    }

    #[test]
    fn er_mean_edge_count_matches_binomial() {
        let total: usize = (0..1000).map(|s| gen_er_graph(100, 0.1, s).unwrap().num_edges()).sum();
        let mean = total as f64 / 1000.0;
        let tol = 3.0 * (495.0f64 * 0.9).sqrt();
        assert!((mean - 495.0).abs() <= tol, "mean {mean}");
    }

    #[test]
    fn er_is_reproducible() {
        assert_eq!(gen_er_graph(60, 0.2, 42).unwrap(), gen_er_graph(60, 0.2, 42).unwrap());
        assert_ne!(gen_er_graph(60, 0.2, 42).unwrap(), gen_er_graph(60, 0.2, 43).unwrap());
    }

    #[test]
    fn graph_validation_and_json() {
        assert!(Graph::new(3, false, vec![(0, 1, 1.0), (1, 0, 1.0)]).is_err());
        assert!(Graph::new(3, true, vec![(0, 1, 1.0), (1, 0, 1.0)]).is_ok());
        assert!(Graph::new(3, false, vec![(0, 3, 1.0)]).is_err());
        assert!(Graph::new(3, false, vec![(0, 1, -1.0)]).is_err());
        let g = Graph::new(4, true, vec![(0, 1, 0.5), (2, 1, 2.0), (3, 3, 1.0)]).unwrap();
        assert_eq!(g.neighbors(1), &[0, 2]);
        assert_eq!(g.neighbors(3), &[] as &[usize]);
        assert_eq!(Graph::from_json(&g.to_json().unwrap()).unwrap(), g);
        let a = g.dense_adjacency();
        assert_eq!(Graph::from_dense(&a, true).unwrap(), g);
    }

    #[test]
    fn undirected_neighbors_are_symmetric() {
        let g = gen_er_graph(30, 0.2, 9).unwrap();
        for i in 0..30 {
            for &j in g.neighbors(i) {
                assert!(g.neighbors(j).contains(&i));
            }
        }
    }

    fn perm_matrix(perm: &[usize]) -> Tensor {
        let n = perm.len();
        let mut p = Tensor::zeros(&[n, n]);
        for (i, &pi) in perm.iter().enumerate() {
            p.data_mut()[pi * n + i] = 1.0;
        }
        p
    }

    proptest! {
        #[test]
        fn rows_sum_to_one_or_zero(vals in prop::collection::vec(prop_oneof![Just(0.0), 0.0..10.0f64], 25)) {
            let a = Tensor::new(vec![5, 5], vals).unwrap();
            let p = normalize_forward(&a).unwrap();
            for row in p.data().chunks(5) {
                let s: f64 = row.iter().sum();
                prop_assert!(s.abs() < 1e-12 || (s - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }

        #[test]
        fn adaptive_rows_positive_and_stochastic(vals in prop::collection::vec(-3.0..3.0f64, 24)) {
            let e1 = Tensor::new(vec![4, 3], vals[..12].to_vec()).unwrap();
            let e2 = Tensor::new(vec![4, 3], vals[12..].to_vec()).unwrap();
            let a = self_adaptive(&e1, &e2).unwrap();
            for row in a.data().chunks(4) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|&v| v > 0.0));
            }
        }

        #[test]
        fn relabeling_commutes_with_normalization(
            vals in prop::collection::vec(prop_oneof![Just(0.0), 0.0..5.0f64], 16),
            perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
        ) {
            let a = Tensor::new(vec![4, 4], vals).unwrap();
            let p = perm_matrix(&perm);
            let pt = p.transpose().unwrap();
            let lhs = normalize_forward(&p.matmul(&a).unwrap().matmul(&pt).unwrap()).unwrap();
            let rhs = p.matmul(&normalize_forward(&a).unwrap()).unwrap().matmul(&pt).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }
    }
}
