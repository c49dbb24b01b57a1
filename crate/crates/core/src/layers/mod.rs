//! The three GNN flavors: convolutional (GCN, diffusion convolution),
//! attentional (GAT) and message-passing (MPNN).
//!
//! Every layer maps node features `[..., N, d]` to `[..., N, d_out]`; leading
//! axes are independent copies of the graph.

mod diffusion;
mod gat;
mod gcn;
mod mpnn;

pub use diffusion::{diffusion_conv, DiffusionConvParams};
pub use gat::{gat_attention, gat_forward, gat_head_aggregate, AttentionSharing, GatAttention, GatParams, LEAKY_SLOPE};
pub use gcn::{gcn_forward, gcn_normalize, GcnParams};
pub use mpnn::{mpnn_forward, MpnnParams, PairScalars};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::{EdgeIndex, Supports};
use crate::tensorgrad::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flavor {
    Gcn,
    Diffusion,
    Gat,
    Mpnn,
}

impl Flavor {
    pub fn name(self) -> &'static str {
        match self {
            Flavor::Gcn => "gcn",
            Flavor::Diffusion => "diffusion",
            Flavor::Gat => "gat",
            Flavor::Mpnn => "mpnn",
        }
    }
}

impl std::str::FromStr for Flavor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(Flavor::Gcn),
            "diffusion" | "dc" => Ok(Flavor::Diffusion),
            "gat" => Ok(Flavor::Gat),
            "mpnn" | "mp" => Ok(Flavor::Mpnn),
            other => Err(Error::Config(format!("unknown flavor '{other}'"))),
        }
    }
}

impl std::fmt::Display for Flavor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One spatial layer of any flavor.
#[derive(Clone, Debug)]
pub enum SpatialLayer {
    Gcn(GcnParams),
    Diffusion(DiffusionConvParams),
    Gat(GatParams),
    Mpnn(MpnnParams),
}

/// Graph-side inputs of a spatial layer, already placed on the tape.
pub struct SpatialInputs<'a> {
    pub supports: &'a Supports,
    /// `D^{-1/2}(A+I)D^{-1/2}`; needed by GCN only.
    pub gcn_adjacency: Option<Var>,
    /// Pairs with self-loops (GAT).
    pub attention_edges: Option<&'a EdgeIndex>,
    /// Pairs without self-loops (MPNN).
    pub message_edges: Option<&'a EdgeIndex>,
}

impl SpatialLayer {
    pub fn flavor(&self) -> Flavor {
        match self {
            SpatialLayer::Gcn(_) => Flavor::Gcn,
            SpatialLayer::Diffusion(_) => Flavor::Diffusion,
            SpatialLayer::Gat(_) => Flavor::Gat,
            SpatialLayer::Mpnn(_) => Flavor::Mpnn,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            SpatialLayer::Gcn(p) => p.param_count(),
            SpatialLayer::Diffusion(p) => p.param_count(),
            SpatialLayer::Gat(p) => p.param_count(),
            SpatialLayer::Mpnn(p) => p.param_count(),
        }
    }

    pub fn forward(&self, tape: &mut Tape, h: Var, inputs: &SpatialInputs<'_>) -> Result<Var> {
        let missing = |what: &str| Error::Contract(format!("{} layer needs {what}", self.flavor()));
        match self {
            SpatialLayer::Gcn(p) => {
                let a = inputs.gcn_adjacency.ok_or_else(|| missing("a GCN adjacency"))?;
                gcn_forward(tape, h, a, p)
            }
            SpatialLayer::Diffusion(p) => diffusion_conv(tape, h, inputs.supports, p),
            SpatialLayer::Gat(p) => {
                let e = inputs.attention_edges.ok_or_else(|| missing("self-looped pairs"))?;
                gat_forward(tape, h, e, p)
            }
            SpatialLayer::Mpnn(p) => {
                let e = inputs.message_edges.ok_or_else(|| missing("neighbor pairs"))?;
                mpnn_forward(tape, h, e, inputs.supports, p)
            }
        }
    }
}
