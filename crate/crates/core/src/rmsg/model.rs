use serde::{Deserialize, Serialize};

use super::data::{RmsgSample, DEFAULT_EDGE_PROB, DEFAULT_NODES};
use crate::error::{Error, Result};
use crate::graphs::{AdjacencySet, EdgeIndex, Graph};
use crate::layers::{gcn_normalize, AttentionSharing, Flavor, GatParams, GcnParams, MpnnParams, PairScalars, SpatialInputs, SpatialLayer};
use crate::rng;
use crate::tensorgrad::{Activation, Mlp, ParamStore, Tape, Tensor, Var};

/// Architecture and training schedule of one RMSG model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RmsgConfig {
    pub flavor: Flavor,
    /// Hidden width of the encoder and decoder MLPs.
    pub hidden: usize,
    /// Latent node width between encoder, GNN layers and decoder.
    pub width: usize,
    pub gnn_layers: usize,
    /// GAT heads.
    pub heads: usize,
    pub gat_attention: AttentionSharing,
    /// Hidden width of both MPNN MLPs.
    pub message_hidden: usize,
    pub activation: Activation,
    pub lr: f64,
    /// Cosine decay of the learning rate to 1% of `lr` over training.
    pub lr_decay: bool,
    /// Graphs per optimizer step.
    pub batch_graphs: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    pub test_samples: usize,
    /// Validation interval in optimizer steps; 0 validates once at the end.
    pub eval_every: usize,
    pub n_nodes: usize,
    pub edge_prob: f64,
}

impl Default for RmsgConfig {
    fn default() -> Self {
        Self {
            flavor: Flavor::Mpnn,
            hidden: 16,
            width: 8,
            gnn_layers: 1,
            heads: 4,
            gat_attention: AttentionSharing::Shared,
            message_hidden: 16,
            activation: Activation::Relu,
            lr: 3e-3,
            lr_decay: true,
            batch_graphs: 1,
            train_samples: 1 << 16,
            val_samples: 1 << 13,
            test_samples: 1 << 16,
            eval_every: 1 << 14,
            n_nodes: DEFAULT_NODES,
            edge_prob: DEFAULT_EDGE_PROB,
        }
    }
}

impl RmsgConfig {
    /// Per-flavor widths and learning rate picked by a reduced-scale random search.
    pub fn tuned(flavor: Flavor) -> Self {
        let (hidden, width, message_hidden, heads, lr) = match flavor {
            Flavor::Gcn => (42, 21, 42, 4, 8.9e-3),
            Flavor::Gat => (42, 21, 42, 4, 8.9e-3),
            Flavor::Mpnn | Flavor::Diffusion => (36, 18, 36, 4, 2.7e-3),
        };
        Self {
            flavor,
            hidden,
            width,
            message_hidden,
            heads,
            lr,
            ..Self::default()
        }
    }

    /// Sample counts used by the original experiments.
    pub fn paper_scale(mut self) -> Self {
        self.train_samples = 1 << 20;
        self.val_samples = 104_857;
        self.test_samples = 1 << 20;
        self.eval_every = 1 << 16;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.flavor == Flavor::Diffusion {
            return bad("RMSG models are gcn, gat or mpnn");
        }
        if self.hidden == 0 || self.width == 0 || self.message_hidden == 0 || self.heads == 0 {
            return bad("widths and head count must be positive");
        }
        if self.gnn_layers == 0 {
            return bad("need at least one GNN layer");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch_graphs == 0 || self.train_samples < self.batch_graphs {
            return bad("need at least one full batch of training samples");
        }
        if self.val_samples == 0 || self.test_samples == 0 {
            return bad("validation and test streams must be non-empty");
        }
        if self.n_nodes < 2 || !(0.0..=1.0).contains(&self.edge_prob) {
            return bad("need n_nodes >= 2 and edge_prob in [0, 1]");
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.train_samples / self.batch_graphs
    }
}

/// Encoder MLP, GNN layers, decoder MLP.
#[derive(Clone, Debug)]
pub struct RmsgModel {
    pub config: RmsgConfig,
    pub store: ParamStore,
    pub encoder: Mlp,
    pub layers: Vec<SpatialLayer>,
    pub decoder: Mlp,
}

/// Several samples merged into one graph with disjoint components.
pub struct GraphBatch {
    pub graph: Graph,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl GraphBatch {
    pub fn new(samples: &[&RmsgSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        if samples.len() == 1 {
            let s = samples[0];
            return Ok(Self {
                graph: s.graph.clone(),
                x: s.x.clone(),
                y: s.y.clone(),
            });
        }
        let mut edges = Vec::new();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        let mut offset = 0;
        for s in samples {
            edges.extend(s.graph.edges().iter().map(|&(i, j, w)| (i + offset, j + offset, w)));
            x.extend_from_slice(&s.x);
            y.extend_from_slice(&s.y);
            offset += s.graph.n_nodes();
        }
        Ok(Self {
            graph: Graph::new(offset, false, edges)?,
            x,
            y,
        })
    }
}

impl RmsgModel {
    /// Fresh parameters drawn from `seed`.
    pub fn new(config: &RmsgConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(rng::derive(seed, 0x696e_6974), 0);
        let mut store = ParamStore::new();
        let (h, d, act) = (config.hidden, config.width, config.activation);
        let encoder = Mlp::new(&mut store, "enc", &[1, h, d], act, &mut r);
        let layers = (0..config.gnn_layers)
            .map(|l| {
                let prefix = format!("gnn{l}");
                match config.flavor {
                    Flavor::Gcn => SpatialLayer::Gcn(GcnParams::new(&mut store, &prefix, d, d, &mut r)),
                    Flavor::Gat => SpatialLayer::Gat(GatParams::with_sharing(
                        &mut store,
                        &prefix,
                        d,
                        config.heads,
                        config.gat_attention,
                        act,
                        &mut r,
                    )),
                    Flavor::Mpnn => SpatialLayer::Mpnn(MpnnParams::new(
                        &mut store,
                        &prefix,
                        d,
                        config.message_hidden,
                        d,
                        PairScalars::Forward,
                        act,
                        &mut r,
                    )),
                    Flavor::Diffusion => unreachable!("rejected by validate"),
                }
            })
            .collect();
        let decoder = Mlp::new(&mut store, "dec", &[d, h, 1], act, &mut r);
        Ok(Self {
            config: config.clone(),
            store,
            encoder,
            layers,
            decoder,
        })
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    /// Predictions `[rows, 1]` on a tape whose parameters are already bound.
    pub fn forward(&self, tape: &mut Tape, batch: &GraphBatch) -> Result<Var> {
        let n = batch.graph.n_nodes();
        let dense = batch.graph.dense_adjacency();
        let supports = AdjacencySet::from_adjacency(&dense)?.realize(tape)?;
        let flavor = self.config.flavor;
        let gcn_adjacency = match flavor {
            Flavor::Gcn => Some(tape.constant(gcn_normalize(&dense)?)?),
            _ => None,
        };
        let attention: Option<EdgeIndex> = (flavor == Flavor::Gat).then(|| batch.graph.edge_index(true, 1));
        let message: Option<EdgeIndex> = (flavor == Flavor::Mpnn).then(|| batch.graph.edge_index(false, 1));
        let inputs = SpatialInputs {
            supports: &supports,
            gcn_adjacency,
            attention_edges: attention.as_ref(),
            message_edges: message.as_ref(),
        };
        let x = tape.constant(Tensor::new(vec![n, 1], batch.x.clone())?)?;
        let mut h = self.encoder.apply(tape, x)?;
        for (l, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h, &inputs)?;
            if l + 1 < self.layers.len() {
                h = self.config.activation.apply(tape, h)?;
            }
        }
        self.decoder.apply(tape, h)
    }

    /// RMSE of the batch predictions, recorded on `tape`.
    pub fn loss(&self, tape: &mut Tape, batch: &GraphBatch) -> Result<Var> {
        let pred = self.forward(tape, batch)?;
        let y = tape.constant(Tensor::new(vec![batch.y.len(), 1], batch.y.clone())?)?;
        let diff = tape.sub(pred, y)?;
        let sq = tape.square(diff)?;
        let mse = tape.mean(sq)?;
        tape.sqrt(mse)
    }

    pub fn predict(&self, sample: &RmsgSample) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        tape.bind(&self.store, false)?;
        let batch = GraphBatch::new(&[sample])?;
        let out = self.forward(&mut tape, &batch)?;
        Ok(tape.value(out).data().to_vec())
    }
}

/// Constant predictor returning the mean training label.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AverageModel {
    pub mean: f64,
}

impl AverageModel {
    pub fn predict(&self, sample: &RmsgSample) -> Vec<f64> {
        vec![self.mean; sample.x.len()]
    }
}

/// Fits [`AverageModel`] to a stream of training labels.
pub fn average_model<I: IntoIterator<Item = f64>>(train_labels: I) -> Result<AverageModel> {
    let (mut sum, mut n) = (0.0, 0usize);
    for y in train_labels {
        sum += y;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Contract("average model needs at least one label".into()));
    }
    Ok(AverageModel { mean: sum / n as f64 })
}
