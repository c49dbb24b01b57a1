use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::graphs::{EdgeIndex, Supports};
use crate::tensorgrad::{Activation, Mlp, ParamStore, Tape, Var};

/// Which adjacency entries are appended to each pair message.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairScalars {
    /// `P_f[i, j]` only.
    Forward,
    /// `P_f[i, j]`, `P_b[i, j]`.
    ForwardBackward,
    /// `P_f[i, j]`, `P_b[i, j]`, `Ã[i, j]`.
    All,
}

impl PairScalars {
    pub fn count(self) -> usize {
        match self {
            PairScalars::Forward => 1,
            PairScalars::ForwardBackward => 2,
            PairScalars::All => 3,
        }
    }
}

#[derive(Debug)]
pub struct MpnnParams {
    /// Update network applied to the summed messages.
    pub mlp1: Mlp,
    /// Message network over `[h_i ‖ h_j ‖ scalars]`.
    pub mlp2: Mlp,
    pub scalars: PairScalars,
    pub d: usize,
    evaluations: AtomicUsize,
}

impl Clone for MpnnParams {
    fn clone(&self) -> Self {
        Self {
            mlp1: self.mlp1.clone(),
            mlp2: self.mlp2.clone(),
            scalars: self.scalars,
            d: self.d,
            evaluations: AtomicUsize::new(self.evaluations()),
        }
    }
}

impl MpnnParams {
    /// Message width equals `d_out`; both MLPs have one hidden layer of width `hidden`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        hidden: usize,
        d_out: usize,
        scalars: PairScalars,
        act: Activation,
        rng: &mut R,
    ) -> Self {
        let mlp2 = Mlp::new(store, &format!("{prefix}.msg"), &[2 * d + scalars.count(), hidden, d_out], act, rng);
        let mlp1 = Mlp::new(store, &format!("{prefix}.upd"), &[d_out, hidden, d_out], act, rng);
        Self::from_mlps(mlp1, mlp2, scalars, d)
    }

    pub fn from_mlps(mlp1: Mlp, mlp2: Mlp, scalars: PairScalars, d: usize) -> Self {
        assert_eq!(mlp2.d_in(), 2 * d + scalars.count(), "message MLP input width");
        assert_eq!(mlp1.d_in(), mlp2.d_out(), "update MLP input width");
        Self {
            mlp1,
            mlp2,
            scalars,
            d,
            evaluations: AtomicUsize::new(0),
        }
    }

    pub fn param_count(&self) -> usize {
        self.mlp1.param_count() + self.mlp2.param_count()
    }

    /// Total number of pair messages computed so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }

    pub fn reset_evaluations(&self) {
        self.evaluations.store(0, Ordering::Relaxed);
    }
}

fn pair_entries(tape: &mut Tape, mat: Var, edges: &EdgeIndex) -> Result<Var> {
    let n = edges.n_nodes;
    let flat = tape.reshape(mat, &[n * n, 1])?;
    tape.gather_rows(flat, edges.pair.clone())
}

/// `MLP_1(Σ_{j∈N_i} MLP_2(h_i ‖ h_j ‖ adjacency scalars))` for `h: [..., N, d]`.
/// `edges` lists neighbor pairs without self-loops.
pub fn mpnn_forward(tape: &mut Tape, h: Var, edges: &EdgeIndex, supports: &Supports, p: &MpnnParams) -> Result<Var> {
    let shape = tape.shape(h).to_vec();
    let d = *shape.last().unwrap_or(&0);
    let rows = shape.iter().product::<usize>() / d.max(1);
    if d != p.d || rows != edges.rows {
        return shape_err(format!(
            "mpnn: input {shape:?} vs width {} and {} edge-index rows",
            p.d, edges.rows
        ));
    }
    let flat = tape.reshape(h, &[rows, d])?;
    let hi = tape.gather_rows(flat, edges.center.clone())?;
    let hj = tape.gather_rows(flat, edges.nbr.clone())?;
    let mut parts = vec![hi, hj, pair_entries(tape, supports.forward, edges)?];
    if p.scalars.count() >= 2 {
        parts.push(pair_entries(tape, supports.backward, edges)?);
    }
    if p.scalars == PairScalars::All {
        let Some(a) = supports.adaptive else {
            return shape_err("mpnn expects a self-adaptive adjacency");
        };
        parts.push(pair_entries(tape, a, edges)?);
    }
    let input = tape.concat(&parts, 1)?;
    let msgs = p.mlp2.apply(tape, input)?;
    p.evaluations.fetch_add(edges.len(), Ordering::Relaxed);
    let agg = tape.scatter_add_rows(msgs, edges.center.clone(), rows)?;
    let y = p.mlp1.apply(tape, agg)?;
    let mut out_shape = shape;
    *out_shape.last_mut().unwrap() = p.mlp1.d_out();
    tape.reshape(y, &out_shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{AdjacencySet, Graph};
    use crate::rng;
    use crate::tensorgrad::Tensor;

    fn eval(store: &ParamStore, g: &Graph, p: &MpnnParams, h: Tensor) -> Tensor {
        let adj = AdjacencySet::from_adjacency(&g.dense_adjacency()).unwrap();
        let edges = g.edge_index(false, 1);
        let mut tape = Tape::new();
        tape.bind(store, false).unwrap();
        let s = adj.realize(&mut tape).unwrap();
        let hv = tape.constant(h).unwrap();
        let y = mpnn_forward(&mut tape, hv, &edges, &s, p).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn zero_messages_give_constant_output() {
        let mut store = ParamStore::new();
        let p = MpnnParams::new(&mut store, "mp", 2, 4, 3, PairScalars::Forward, Activation::Tanh, &mut rng::seeded(1));
        let (w, b) = *p.mlp2.layers.last().unwrap();
        store.set(w, Tensor::zeros(&[4, 3])).unwrap();
        store.set(b, Tensor::zeros(&[3])).unwrap();
        let g = crate::graphs::gen_er_graph(6, 0.5, 2).unwrap();
        let out = eval(&store, &g, &p, Tensor::uniform(&[6, 2], 1.0, &mut rng::seeded(3)));
        let first = out.data()[..3].to_vec();
        for row in out.data().chunks(3) {
            assert_eq!(row, &first[..]);
        }
    }

    #[test]
    fn empty_neighborhood_gives_update_of_zero() {
        let mut store = ParamStore::new();
        let p = MpnnParams::new(&mut store, "mp", 2, 4, 3, PairScalars::Forward, Activation::Tanh, &mut rng::seeded(1));
        let g = Graph::new(3, false, vec![(0, 1, 1.0)]).unwrap();
        let out = eval(&store, &g, &p, Tensor::uniform(&[3, 2], 1.0, &mut rng::seeded(3)));
        // MLP_1(0) evaluated independently
        let mut tape = Tape::new();
        tape.bind(&store, false).unwrap();
        let z = tape.constant(Tensor::zeros(&[1, 3])).unwrap();
        let y = p.mlp1.apply(&mut tape, z).unwrap();
        assert_eq!(&out.data()[6..9], tape.value(y).data());
    }

    #[test]
    fn two_node_hand_evaluated_messages() {
        let mut store = ParamStore::new();
        let mut r = rng::seeded(2);
        let mlp2 = Mlp::new(&mut store, "m2", &[3, 1], Activation::Linear, &mut r);
        let mlp1 = Mlp::new(&mut store, "m1", &[1, 1], Activation::Linear, &mut r);
        store.set(mlp2.layers[0].0, Tensor::new(vec![3, 1], vec![1.0, 2.0, 0.0]).unwrap()).unwrap();
        store.set(mlp2.layers[0].1, Tensor::zeros(&[1])).unwrap();
        store.set(mlp1.layers[0].0, Tensor::identity(1)).unwrap();
        store.set(mlp1.layers[0].1, Tensor::zeros(&[1])).unwrap();
        let p = MpnnParams::from_mlps(mlp1, mlp2, PairScalars::Forward, 1);
        let g = Graph::new(2, false, vec![(0, 1, 1.0)]).unwrap();
        let x = [1.0, 3.0];
        let out = eval(&store, &g, &p, Tensor::new(vec![2, 1], x.to_vec()).unwrap());

        // brute-force pair enumeration
        let mut oracle = [0.0; 2];
        for (i, o) in oracle.iter_mut().enumerate() {
            for &j in g.neighbors(i) {
                *o += x[i] * 1.0 + x[j] * 2.0;
            }
        }
        assert_eq!(oracle, [7.0, 5.0]);
        assert_eq!(out.data(), &oracle);
    }

    #[test]
    fn message_count_matches_neighborhood_sizes() {
        let mut store = ParamStore::new();
        let p = MpnnParams::new(&mut store, "mp", 2, 4, 2, PairScalars::Forward, Activation::Relu, &mut rng::seeded(1));
        let g = crate::graphs::gen_er_graph(12, 0.3, 5).unwrap();
        let expected: usize = (0..12).map(|i| g.degree(i)).sum();
        p.reset_evaluations();
        eval(&store, &g, &p, Tensor::uniform(&[12, 2], 1.0, &mut rng::seeded(3)));
        assert_eq!(p.evaluations(), expected);
    }
}
