use std::path::Path;

use serde::{Deserialize, Serialize};

use super::gtcn::{gtcn_forward, receptive_field, Gate, GtcnParams};
use crate::error::{shape_err, Error, Result};
use crate::graphs::{self_adaptive_on, AdaptiveFactors, AdjacencySet, EdgeIndex, Graph, Supports};
use crate::layers::{AttentionSharing, DiffusionConvParams, Flavor, GatParams, MpnnParams, PairScalars, SpatialInputs, SpatialLayer};
use crate::rng;
use crate::tensorgrad::{checkpoint, Activation, Mlp, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveNetConfig {
    /// Spatial module: diffusion, gat or mpnn.
    pub flavor: Flavor,
    pub n_nodes: usize,
    /// Input features per node and time step (`D`).
    pub in_dim: usize,
    /// `L_OW`.
    pub obs_window: usize,
    /// `L_FW`.
    pub forecast_window: usize,
    pub kernel: usize,
    /// One entry per layer.
    pub dilations: Vec<usize>,
    pub residual_channels: usize,
    pub skip_channels: usize,
    /// Hidden widths of the decoder MLP.
    pub decoder_widths: Vec<usize>,
    pub diffusion_hops: usize,
    pub heads: usize,
    pub gat_attention: AttentionSharing,
    pub message_hidden: usize,
    /// Learn a self-adaptive adjacency from node embeddings.
    pub adaptive: bool,
    pub embed_dim: usize,
    pub gate: Gate,
    pub activation: Activation,
}

impl Default for WaveNetConfig {
    fn default() -> Self {
        Self {
            flavor: Flavor::Diffusion,
            n_nodes: 207,
            in_dim: 2,
            obs_window: 12,
            forecast_window: 12,
            kernel: 2,
            dilations: vec![1, 2, 1, 2, 1, 2, 1, 2],
            residual_channels: 32,
            skip_channels: 64,
            decoder_widths: vec![128],
            diffusion_hops: 2,
            heads: 4,
            gat_attention: AttentionSharing::Shared,
            message_hidden: 32,
            adaptive: true,
            embed_dim: 10,
            gate: Gate::Product,
            activation: Activation::Relu,
        }
    }
}

impl WaveNetConfig {
    pub fn layers(&self) -> usize {
        self.dilations.len()
    }

    pub fn receptive_field(&self) -> usize {
        receptive_field(self.kernel, &self.dilations)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !matches!(self.flavor, Flavor::Diffusion | Flavor::Gat | Flavor::Mpnn) {
            return bad(format!("backbone spatial module must be diffusion, gat or mpnn, got {}", self.flavor));
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) || self.kernel < 2 {
            return bad("need at least one layer, dilations >= 1 and kernel >= 2".into());
        }
        if self.receptive_field() < self.obs_window {
            return bad(format!(
                "receptive field {} is shorter than the observation window {}",
                self.receptive_field(),
                self.obs_window
            ));
        }
        let widths = [
            self.n_nodes,
            self.in_dim,
            self.obs_window,
            self.forecast_window,
            self.residual_channels,
            self.skip_channels,
            self.heads,
            self.message_hidden,
            self.embed_dim,
        ];
        if widths.contains(&0) || self.decoder_widths.contains(&0) {
            return bad("sizes must be positive".into());
        }
        if self.flavor == Flavor::Diffusion && self.diffusion_hops == 0 {
            return bad("diffusion needs at least one hop".into());
        }
        Ok(())
    }
}

/// Encoder, gated TCN and spatial layers with residual and skip paths, decoder.
#[derive(Clone, Debug)]
pub struct WaveNet {
    pub config: WaveNetConfig,
    pub store: ParamStore,
    pub encoder: Mlp,
    pub tcn: Vec<GtcnParams>,
    /// 1x1 convolution `R -> S` per layer.
    pub skip: Vec<(ParamId, ParamId)>,
    pub spatial: Vec<SpatialLayer>,
    pub adaptive: Option<AdaptiveFactors>,
    pub decoder: Mlp,
}

impl WaveNet {
    pub fn new(config: &WaveNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(rng::derive(seed, 0x7761_7665), 0);
        let mut store = ParamStore::new();
        let c = config;
        let (res, act) = (c.residual_channels, c.activation);
        let encoder = Mlp::new(&mut store, "enc", &[c.in_dim, res], act, &mut r);
        let adaptive = c.adaptive.then(|| AdaptiveFactors {
            e1: store.add("adj.e1", Tensor::uniform(&[c.n_nodes, c.embed_dim], 1.0, &mut r)),
            e2: store.add("adj.e2", Tensor::uniform(&[c.n_nodes, c.embed_dim], 1.0, &mut r)),
        });
        let supports = 2 + usize::from(c.adaptive);
        let scalars = if c.adaptive {
            PairScalars::All
        } else {
            PairScalars::ForwardBackward
        };
        let mut tcn = Vec::new();
        let mut skip = Vec::new();
        let mut spatial = Vec::new();
        for (l, &dil) in c.dilations.iter().enumerate() {
            tcn.push(GtcnParams::new(&mut store, &format!("l{l}.tcn"), c.kernel, dil, res, res, c.gate, &mut r)?);
            skip.push((
                store.add_weight(format!("l{l}.skip.w"), res, c.skip_channels, &mut r),
                store.add_bias(format!("l{l}.skip.b"), res, c.skip_channels, &mut r),
            ));
            let prefix = format!("l{l}.gnn");
            spatial.push(match c.flavor {
                Flavor::Diffusion => SpatialLayer::Diffusion(DiffusionConvParams::new(
                    &mut store,
                    &prefix,
                    c.diffusion_hops,
                    supports,
                    res,
                    res,
                    &mut r,
                )),
                Flavor::Gat => SpatialLayer::Gat(GatParams::with_sharing(
                    &mut store,
                    &prefix,
                    res,
                    c.heads,
                    c.gat_attention,
                    act,
                    &mut r,
                )),
                Flavor::Mpnn => SpatialLayer::Mpnn(MpnnParams::new(
                    &mut store,
                    &prefix,
                    res,
                    c.message_hidden,
                    res,
                    scalars,
                    act,
                    &mut r,
                )),
                Flavor::Gcn => unreachable!("rejected by validate"),
            });
        }
        let mut widths = vec![c.layers() * c.skip_channels];
        widths.extend(&c.decoder_widths);
        widths.push(c.forecast_window);
        let decoder = Mlp::new(&mut store, "dec", &widths, act, &mut r);
        Ok(Self {
            config: c.clone(),
            store,
            encoder,
            tcn,
            skip,
            spatial,
            adaptive,
            decoder,
        })
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    /// Writes the parameters to `dir/params.json` and the config to `dir/wavenet.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        checkpoint::save(&self.store, &dir.join("params.json"))?;
        std::fs::write(dir.join("wavenet.json"), serde_json::to_string_pretty(&self.config)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join("wavenet.json"))?;
        let config: WaveNetConfig = serde_json::from_str(&text)?;
        let mut model = Self::new(&config, 0)?;
        model.store.load_from(&checkpoint::load(&dir.join("params.json"))?)?;
        Ok(model)
    }
}

/// Neighbor structure shared by every time slice of one forward pass.
pub struct GraphContext {
    pub graph: Graph,
}

impl GraphContext {
    /// Neighbors are the off-diagonal non-zeros of the forward transition matrix.
    pub fn from_adjacency(adj: &AdjacencySet) -> Result<Self> {
        Ok(Self {
            graph: Graph::from_dense(&adj.forward, true)?,
        })
    }
}

fn realize(tape: &mut Tape, model: &WaveNet, adj: &AdjacencySet) -> Result<Supports> {
    let forward = tape.constant(adj.forward.clone())?;
    let backward = tape.constant(adj.backward.clone())?;
    let adaptive = match model.adaptive {
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

/// `x: [B, L_OW, N, D]` channels-last on `tape` (parameters bound) to
/// `[B, 1, N, L_FW]`.
pub fn wavenet_forward_var(tape: &mut Tape, model: &WaveNet, x: Var, adj: &AdjacencySet, ctx: &GraphContext) -> Result<Var> {
    let c = &model.config;
    let shape = tape.shape(x).to_vec();
    if shape.len() != 4 || shape[1] != c.obs_window || shape[2] != c.n_nodes || shape[3] != c.in_dim {
        return shape_err(format!(
            "window {shape:?} does not match [B, {}, {}, {}]",
            c.obs_window, c.n_nodes, c.in_dim
        ));
    }
    if adj.n_nodes() != c.n_nodes || ctx.graph.n_nodes() != c.n_nodes {
        return shape_err(format!("adjacency has {} nodes, model expects {}", adj.n_nodes(), c.n_nodes));
    }
    let (b, n) = (shape[0], c.n_nodes);
    let rf = c.receptive_field();
    let t0 = rf.max(c.obs_window);
    let x = if t0 > c.obs_window {
        let pad = tape.constant(Tensor::zeros(&[b, t0 - c.obs_window, n, c.in_dim]))?;
        tape.concat(&[pad, x], 1)?
    } else {
        x
    };
    let t_final = t0 - (rf - 1);
    let supports = realize(tape, model, adj)?;

    let mut h = model.encoder.apply(tape, x)?;
    let mut skips = Vec::with_capacity(c.layers());
    for l in 0..c.layers() {
        let t_in = tape.shape(h)[1];
        let g = gtcn_forward(tape, h, &model.tcn[l])?;
        let t_out = tape.shape(g)[1];

        let tail = tape.narrow(g, 1, t_out - t_final, t_final)?;
        let (sw, sb) = (tape.param(model.skip[l].0), tape.param(model.skip[l].1));
        skips.push(tape.linear(tail, sw, Some(sb))?);

        let groups = b * t_out;
        let attention: Option<EdgeIndex> = (c.flavor == Flavor::Gat).then(|| ctx.graph.edge_index(true, groups));
        let message: Option<EdgeIndex> = (c.flavor == Flavor::Mpnn).then(|| ctx.graph.edge_index(false, groups));
        let inputs = SpatialInputs {
            supports: &supports,
            gcn_adjacency: None,
            attention_edges: attention.as_ref(),
            message_edges: message.as_ref(),
        };
        let z = model.spatial[l].forward(tape, g, &inputs)?;
        let residual = tape.narrow(h, 1, t_in - t_out, t_out)?;
        h = tape.add(z, residual)?;
    }
    let cat = tape.concat(&skips, 3)?;
    let cat = tape.relu(cat)?;
    let y = model.decoder.apply(tape, cat)?;
    tape.narrow(y, 1, t_final - 1, 1)
}

/// `[B, D, N, T] -> [B, T, N, D]`.
pub fn to_channels_last(window: &Tensor) -> Result<Tensor> {
    let s = window.shape();
    if s.len() != 4 {
        return shape_err(format!("expected [B, D, N, T], got {s:?}"));
    }
    let (b, d, n, t) = (s[0], s[1], s[2], s[3]);
    let src = window.data();
    let mut out = vec![0.0; src.len()];
    for bi in 0..b {
        for di in 0..d {
            for ni in 0..n {
                for ti in 0..t {
                    out[((bi * t + ti) * n + ni) * d + di] = src[((bi * d + di) * n + ni) * t + ti];
                }
            }
        }
    }
    Tensor::new(vec![b, t, n, d], out)
}

/// Forecast `[B, 1, N, L_FW]` for `window: [B, D, N, L_OW]`.
pub fn wavenet_forward(tape: &mut Tape, model: &WaveNet, window: &Tensor, adj: &AdjacencySet) -> Result<Var> {
    let s = window.shape();
    let c = &model.config;
    if s.len() != 4 || s[1] != c.in_dim || s[2] != c.n_nodes || s[3] != c.obs_window {
        return shape_err(format!(
            "window {s:?} does not match [B, {}, {}, {}]",
            c.in_dim, c.n_nodes, c.obs_window
        ));
    }
    if adj.n_nodes() != c.n_nodes {
        return shape_err(format!("adjacency has {} nodes, model expects {}", adj.n_nodes(), c.n_nodes));
    }
    let ctx = GraphContext::from_adjacency(adj)?;
    let x = tape.constant(to_channels_last(window)?)?;
    wavenet_forward_var(tape, model, x, adj, &ctx)
}

/// Forward pass on a fresh tape without gradients.
pub fn wavenet_predict(model: &WaveNet, window: &Tensor, adj: &AdjacencySet) -> Result<Tensor> {
    let mut tape = Tape::new();
    tape.bind(&model.store, false)?;
    let y = wavenet_forward(&mut tape, model, window, adj)?;
    Ok(tape.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::gen_er_graph;

    fn mini(flavor: Flavor, n: usize) -> WaveNetConfig {
        WaveNetConfig {
            flavor,
            n_nodes: n,
            obs_window: 4,
            forecast_window: 3,
            dilations: vec![1, 2],
            residual_channels: 4,
            skip_channels: 5,
            decoder_widths: vec![6],
            heads: 2,
            message_hidden: 4,
            embed_dim: 3,
            ..WaveNetConfig::default()
        }
    }

    #[test]
    fn output_shape_for_every_flavor() {
        let adj = AdjacencySet::from_adjacency(&gen_er_graph(6, 0.4, 1).unwrap().dense_adjacency()).unwrap();
        for flavor in [Flavor::Diffusion, Flavor::Gat, Flavor::Mpnn] {
            for obs in [4, 6] {
                let cfg = WaveNetConfig {
                    obs_window: obs,
                    dilations: vec![1, 2, 2],
                    ..mini(flavor, 6)
                };
                let m = WaveNet::new(&cfg, 2).unwrap();
                let x = Tensor::uniform(&[3, 2, 6, obs], 1.0, &mut rng::seeded(3));
                let y = wavenet_predict(&m, &x, &adj).unwrap();
                assert_eq!(y.shape(), &[3, 1, 6, 3], "{flavor}");
            }
        }
    }

    #[test]
    fn config_errors() {
        let short = WaveNetConfig {
            obs_window: 5,
            ..mini(Flavor::Gat, 4)
        };
        assert!(matches!(WaveNet::new(&short, 0), Err(Error::Config(_))));
        assert!(WaveNet::new(&mini(Flavor::Gcn, 4), 0).is_err());
        let m = WaveNet::new(&mini(Flavor::Mpnn, 4), 0).unwrap();
        let adj = AdjacencySet::from_adjacency(&gen_er_graph(5, 0.4, 1).unwrap().dense_adjacency()).unwrap();
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        assert!(matches!(wavenet_predict(&m, &x, &adj), Err(Error::Shape(_))));
    }

    #[test]
    fn channels_last_permutation() {
        let w = Tensor::new(vec![1, 2, 2, 3], (0..12).map(f64::from).collect()).unwrap();
        let c = to_channels_last(&w).unwrap();
        assert_eq!(c.shape(), &[1, 3, 2, 2]);
        // [b=0, t=2, n=1, d=1] came from [b=0, d=1, n=1, t=2]
        assert_eq!(c.get(&[0, 2, 1, 1]), w.get(&[0, 1, 1, 2]));
    }

    #[test]
    fn save_and_load_round_trip() {
        let m = WaveNet::new(&mini(Flavor::Diffusion, 4), 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = WaveNet::load(dir.path()).unwrap();
        assert_eq!(back.store, m.store);
        assert_eq!(back.config, m.config);
    }
}
