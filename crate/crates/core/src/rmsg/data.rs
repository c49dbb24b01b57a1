use rand::Rng;

use crate::error::{Error, Result};
use crate::graphs::{gen_er_graph_with, Graph};
use crate::rng;

pub const DEFAULT_NODES: usize = 100;
pub const DEFAULT_EDGE_PROB: f64 = 0.1;
pub const FEATURE_BOUND: f64 = 2.0;

/// One RMSG data point: a fresh graph, node features and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsgSample {
    pub graph: Graph,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// `y_i = sqrt(mean_{j ∈ N(i)} (x_i x_j)^2)`, and 0 for isolated nodes.
pub fn rmsg_labels(graph: &Graph, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != graph.n_nodes() {
        return Err(Error::Shape(format!(
            "{} features for {} nodes",
            x.len(),
            graph.n_nodes()
        )));
    }
    Ok((0..graph.n_nodes())
        .map(|i| {
            let nb = graph.neighbors(i);
            if nb.is_empty() {
                return 0.0;
            }
            let s: f64 = nb.iter().map(|&j| (x[i] * x[j]).powi(2)).sum();
            (s / nb.len() as f64).sqrt()
        })
        .collect())
}

/// Which stream a sample is drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    fn salt(self) -> u64 {
        match self {
            Split::Train => 0x7261_696e,
            Split::Validation => 0x7661_6c69,
            Split::Test => 0x7465_7374,
        }
    }
}

/// Generator of reproducible, independently indexable samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmsgStream {
    pub seed: u64,
    pub n_nodes: usize,
    pub edge_prob: f64,
}

impl RmsgStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            n_nodes: DEFAULT_NODES,
            edge_prob: DEFAULT_EDGE_PROB,
        }
    }

    /// Sample `k` of `split`; depends only on `(seed, split, k)`.
    pub fn sample(&self, split: Split, k: u64) -> Result<RmsgSample> {
        let mut r = rng::stream(rng::derive(self.seed, split.salt()), k);
        let graph = gen_er_graph_with(self.n_nodes, self.edge_prob, &mut r)?;
        let x: Vec<f64> = (0..self.n_nodes)
            .map(|_| (2.0 * r.gen::<f64>() - 1.0) * FEATURE_BOUND)
            .collect();
        let y = rmsg_labels(&graph, &x)?;
        Ok(RmsgSample { graph, x, y })
    }

    /// Samples `0..count` of `split`.
    pub fn iter(&self, split: Split, count: usize) -> impl Iterator<Item = Result<RmsgSample>> + '_ {
        (0..count as u64).map(move |k| self.sample(split, k))
    }
}

/// `count` samples of the training split for `seed`.
pub fn make_rmsg_dataset(count: usize, seed: u64) -> Result<Vec<RmsgSample>> {
    if count == 0 {
        return Err(Error::Contract("dataset must hold at least one sample".into()));
    }
    RmsgStream::new(seed).iter(Split::Train, count).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: explicit double loop over node pairs using the
    /// dense adjacency.
    fn brute_force(graph: &Graph, x: &[f64]) -> Vec<f64> {
        let a = graph.dense_adjacency();
        let n = graph.n_nodes();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut sum = 0.0;
            let mut count = 0usize;
            for j in 0..n {
                if i != j && (a.get(&[i, j]) > 0.0 || a.get(&[j, i]) > 0.0) {
                    sum += x[i] * x[i] * x[j] * x[j];
                    count += 1;
                }
            }
            y[i] = if count == 0 { 0.0 } else { (sum / count as f64).sqrt() };
        }
        y
    }

    #[test]
    fn label_examples() {
        let g = Graph::new(3, false, vec![(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        assert_eq!(rmsg_labels(&g, &[0.0; 3]).unwrap(), vec![0.0; 3]);
        let e = Graph::new(2, false, vec![(0, 1, 1.0)]).unwrap();
        assert_eq!(rmsg_labels(&e, &[1.0, 1.0]).unwrap(), vec![1.0, 1.0]);
        let y = rmsg_labels(&g, &[1.0, 2.0, -1.0]).unwrap();
        assert_eq!(y, vec![2.0, 2.0, 2.0]);
        assert_eq!(brute_force(&g, &[1.0, 2.0, -1.0]), y);
    }

    #[test]
    fn isolated_nodes_get_zero_and_wrong_length_errors() {
        let g = Graph::new(3, false, vec![(0, 1, 1.0)]).unwrap();
        assert_eq!(rmsg_labels(&g, &[1.0, 2.0, 5.0]).unwrap()[2], 0.0);
        assert!(rmsg_labels(&g, &[1.0]).is_err());
    }

    #[test]
    fn labels_match_brute_force_on_random_graphs() {
        let s = RmsgStream {
            seed: 17,
            n_nodes: 30,
            edge_prob: 0.15,
        };
        for k in 0..1000 {
            let smp = s.sample(Split::Train, k).unwrap();
            let oracle = brute_force(&smp.graph, &smp.x);
            for (a, b) in smp.y.iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn negating_features_leaves_labels() {
        let smp = RmsgStream::new(3).sample(Split::Test, 5).unwrap();
        let neg: Vec<f64> = smp.x.iter().map(|v| -v).collect();
        assert_eq!(rmsg_labels(&smp.graph, &neg).unwrap(), smp.y);
    }

    #[test]
    fn samples_are_deterministic_and_split_dependent() {
        let s = RmsgStream::new(9);
        assert_eq!(s.sample(Split::Train, 4).unwrap(), s.sample(Split::Train, 4).unwrap());
        assert_ne!(s.sample(Split::Train, 4).unwrap(), s.sample(Split::Test, 4).unwrap());
        assert_ne!(s.sample(Split::Train, 4).unwrap(), s.sample(Split::Train, 5).unwrap());
        let smp = s.sample(Split::Validation, 0).unwrap();
        assert!(smp.x.iter().all(|v| (-2.0..=2.0).contains(v)));
        assert!(smp.y.iter().all(|&v| v >= 0.0));
        assert!(make_rmsg_dataset(0, 1).is_err());
    }

    #[test]
    fn feature_mean_is_centered() {
        // 10^6 draws: 10^4 samples of 100 nodes
        let s = RmsgStream::new(21);
        let mut sum = 0.0;
        let mut n = 0usize;
        for k in 0..10_000 {
            let smp = s.sample(Split::Train, k).unwrap();
            sum += smp.x.iter().sum::<f64>();
            n += smp.x.len();
        }
        assert_eq!(n, 1_000_000);
        let tol = 4.0 * (4.0 / 12f64.sqrt()) / 1e3;
        assert!((sum / n as f64).abs() < tol);
    }
}
