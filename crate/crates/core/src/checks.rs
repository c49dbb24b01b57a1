//! Randomized gradient and relabeling checks over every layer and the
//! backbone.

use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{wavenet_forward_var, GraphContext, WaveNet, WaveNetConfig};
use crate::error::Result;
use crate::graphs::{gen_er_graph_with, AdaptiveFactors, AdjacencySet, Graph};
use crate::layers::{
    diffusion_conv, gat_forward, AttentionSharing, gcn_forward, gcn_normalize, mpnn_forward, DiffusionConvParams, Flavor, GatParams,
    GcnParams, MpnnParams, PairScalars,
};
use crate::rng::{self, Rng as ChaRng};
use crate::tensorgrad::{gradcheck_trials, Activation, ParamStore, Tape, Tensor, TrialSummary, Var};

/// What a check exercises.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Gcn,
    Diffusion,
    Gat,
    Mpnn,
    WaveNet,
}

impl Target {
    pub const ALL: [Target; 5] = [Target::Gcn, Target::Diffusion, Target::Gat, Target::Mpnn, Target::WaveNet];

    pub fn name(self) -> &'static str {
        match self {
            Target::Gcn => "gcn",
            Target::Diffusion => "diffusion",
            Target::Gat => "gat",
            Target::Mpnn => "mpnn",
            Target::WaveNet => "wavenet",
        }
    }
}

/// A random layer instance together with its graph.
struct Case {
    store: ParamStore,
    graph: Graph,
    adaptive: Option<AdaptiveFactors>,
    kind: Kind,
    input: Tensor,
}

enum Kind {
    Gcn(GcnParams),
    Diffusion(DiffusionConvParams),
    Gat(GatParams),
    Mpnn(MpnnParams),
    WaveNet(Box<WaveNet>),
}

const ACTS: [Activation; 4] = [Activation::Relu, Activation::Tanh, Activation::Elu, Activation::LeakyRelu];

fn random_graph(r: &mut ChaRng, max_n: usize) -> Graph {
    let n = r.gen_range(2..=max_n);
    let directed = r.gen_bool(0.5);
    if directed {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && r.gen_bool(0.4) {
                    edges.push((i, j, r.gen_range(0.2..1.5)));
                }
            }
        }
        Graph::new(n, true, edges).expect("valid edges")
    } else {
        gen_er_graph_with(n, 0.5, r).expect("valid probability")
    }
}

fn random_case(target: Target, r: &mut ChaRng, max_n: usize) -> Case {
    let mut store = ParamStore::new();
    let act = ACTS[r.gen_range(0..ACTS.len())];
    if target == Target::WaveNet {
        let flavor = [Flavor::Diffusion, Flavor::Gat, Flavor::Mpnn][r.gen_range(0..3)];
        let adaptive = r.gen_bool(0.5);
        let n = 4.min(max_n);
        let cfg = WaveNetConfig {
            flavor,
            n_nodes: n,
            in_dim: 2,
            obs_window: 4,
            forecast_window: 2,
            dilations: vec![1, 2],
            residual_channels: 2,
            skip_channels: 2,
            decoder_widths: vec![3],
            diffusion_hops: 2,
            heads: 2,
            message_hidden: 3,
            adaptive,
            embed_dim: 2,
            activation: act,
            ..WaveNetConfig::default()
        };
        let model = WaveNet::new(&cfg, r.gen()).expect("valid miniature config");
        let mut graph = random_graph(r, n);
        while graph.n_nodes() != n {
            graph = random_graph(r, n);
        }
        let input = Tensor::uniform(&[2, 4, n, 2], 1.0, r);
        return Case {
            store: model.store.clone(),
            adaptive: model.adaptive,
            graph,
            kind: Kind::WaveNet(Box::new(model)),
            input,
        };
    }
    let graph = random_graph(r, max_n);
    let n = graph.n_nodes();
    let d = r.gen_range(1..=3);
    let d_out = r.gen_range(1..=3);
    let batch = r.gen_range(1..=2);
    let mut adaptive = None;
    let kind = match target {
        Target::Gcn => Kind::Gcn(GcnParams::new(&mut store, "gcn", d, d_out, r)),
        Target::Diffusion => {
            let hops = r.gen_range(1..=2);
            let supports = if r.gen_bool(0.5) {
                adaptive = Some(AdaptiveFactors {
                    e1: store.add("e1", Tensor::uniform(&[n, 2], 1.0, r)),
                    e2: store.add("e2", Tensor::uniform(&[n, 2], 1.0, r)),
                });
                3
            } else {
                2
            };
            Kind::Diffusion(DiffusionConvParams::new(&mut store, "dc", hops, supports, d, d_out, r))
        }
        Target::Gat => {
            let heads = r.gen_range(1..=4);
            let sharing = if r.gen_bool(0.5) {
                AttentionSharing::Shared
            } else {
                AttentionSharing::PerHead
            };
            Kind::Gat(GatParams::with_sharing(&mut store, "gat", d, heads, sharing, act, r))
        }
        Target::Mpnn => {
            let scalars = [PairScalars::Forward, PairScalars::ForwardBackward, PairScalars::All][r.gen_range(0..3)];
            if scalars == PairScalars::All {
                adaptive = Some(AdaptiveFactors {
                    e1: store.add("e1", Tensor::uniform(&[n, 2], 1.0, r)),
                    e2: store.add("e2", Tensor::uniform(&[n, 2], 1.0, r)),
                });
            }
            let hidden = r.gen_range(1..=4);
            Kind::Mpnn(MpnnParams::new(&mut store, "mp", d, hidden, d_out, scalars, act, r))
        }
        Target::WaveNet => unreachable!(),
    };
    let input = Tensor::uniform(&[batch, n, d], 1.5, r);
    Case {
        store,
        graph,
        adaptive,
        kind,
        input,
    }
}

impl Case {
    fn adjacency(&self) -> Result<AdjacencySet> {
        let set = AdjacencySet::from_adjacency(&self.graph.dense_adjacency())?;
        Ok(match self.adaptive {
            Some(f) => set.with_adaptive(f),
            None => set,
        })
    }

    /// Layer output for input `h` on `tape` (parameters already bound).
    fn forward(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let adj = self.adjacency()?;
        if let Kind::WaveNet(m) = &self.kind {
            let ctx = GraphContext::from_adjacency(&adj)?;
            return wavenet_forward_var(tape, m, h, &adj, &ctx);
        }
        let supports = adj.realize(tape)?;
        let groups = tape.value(h).len() / (self.graph.n_nodes() * tape.shape(h).last().copied().unwrap_or(1));
        match &self.kind {
            Kind::Gcn(p) => {
                let a = tape.constant(gcn_normalize(&self.graph.dense_adjacency())?)?;
                gcn_forward(tape, h, a, p)
            }
            Kind::Diffusion(p) => diffusion_conv(tape, h, &supports, p),
            Kind::Gat(p) => gat_forward(tape, h, &self.graph.edge_index(true, groups), p),
            Kind::Mpnn(p) => mpnn_forward(tape, h, &self.graph.edge_index(false, groups), &supports, p),
            Kind::WaveNet(_) => unreachable!(),
        }
    }

    /// Node-relabeled copy: node `i` becomes `perm[i]` in the graph, the input
    /// and any node-indexed parameters.
    fn permuted(&self, perm: &[usize]) -> Result<Case> {
        let mut store = self.store.clone();
        if let Some(f) = self.adaptive {
            for id in [f.e1, f.e2] {
                let t = permute_axis(store.get(id), 0, perm)?;
                store.set(id, t)?;
            }
        }
        let node_axis = if matches!(self.kind, Kind::WaveNet(_)) { 2 } else { 1 };
        Ok(Case {
            store,
            graph: self.graph.permuted(perm)?,
            adaptive: self.adaptive,
            kind: match &self.kind {
                Kind::Gcn(p) => Kind::Gcn(p.clone()),
                Kind::Diffusion(p) => Kind::Diffusion(p.clone()),
                Kind::Gat(p) => Kind::Gat(p.clone()),
                Kind::Mpnn(p) => Kind::Mpnn(p.clone()),
                Kind::WaveNet(m) => Kind::WaveNet(m.clone()),
            },
            input: permute_axis(&self.input, node_axis, perm)?,
        })
    }

    fn output(&self) -> Result<Tensor> {
        let mut tape = Tape::new();
        tape.bind(&self.store, false)?;
        let h = tape.constant(self.input.clone())?;
        let y = self.forward(&mut tape, h)?;
        Ok(tape.value(y).clone())
    }

    fn node_axis_of_output(&self) -> usize {
        if matches!(self.kind, Kind::WaveNet(_)) {
            2
        } else {
            1
        }
    }
}

/// `out[.., perm[i], ..] = t[.., i, ..]` along `axis`.
pub fn permute_axis(t: &Tensor, axis: usize, perm: &[usize]) -> Result<Tensor> {
    let shape = t.shape();
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let n = shape[axis];
    let mut out = vec![0.0; t.len()];
    for o in 0..outer {
        for (i, &pi) in perm.iter().enumerate().take(n) {
            let src = (o * n + i) * inner;
            let dst = (o * n + pi) * inner;
            out[dst..dst + inner].copy_from_slice(&t.data()[src..src + inner]);
        }
    }
    Tensor::new(shape.to_vec(), out)
}

/// Gradient check of `target` over `trials` random instances; the scalar
/// under test is a random weighting of the layer output.
pub fn gradient_suite(target: Target, trials: usize, seed: u64, eps: f64) -> Result<TrialSummary> {
    let mut weights_rng = rng::stream(seed, 1);
    let case_slot: std::cell::RefCell<Option<(Case, Rc<[f64]>)>> = std::cell::RefCell::new(None);
    gradcheck_trials(
        trials,
        seed,
        eps,
        |r| {
            let case = random_case(target, r, 6);
            let store = case.store.clone();
            let input = case.input.clone();
            let probe = case.output().expect("forward of a valid case");
            let w: Rc<[f64]> = (0..probe.len()).map(|_| weights_rng.gen_range(-1.0..1.0)).collect();
            *case_slot.borrow_mut() = Some((case, w));
            (store, vec![input])
        },
        |tape, vars| {
            let slot = case_slot.borrow();
            let (case, w) = slot.as_ref().expect("set by setup");
            let y = case.forward(tape, vars[0])?;
            let y = tape.mul_const(y, w.clone())?;
            tape.sum(y)
        },
    )
}

/// Largest deviation from `f(relabel(G, X)) = relabel(f(G, X))` over
/// `trials` random graphs with at most `max_n` nodes.
pub fn equivariance_suite(target: Target, trials: usize, seed: u64, max_n: usize) -> Result<f64> {
    let mut r = rng::seeded(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let case = random_case(target, &mut r, max_n);
        let mut perm: Vec<usize> = (0..case.graph.n_nodes()).collect();
        perm.shuffle(&mut r);
        let base = case.output()?;
        let moved = case.permuted(&perm)?.output()?;
        let expect = permute_axis(&base, case.node_axis_of_output(), &perm)?;
        worst = worst.max(moved.max_abs_diff(&expect));
    }
    Ok(worst)
}
