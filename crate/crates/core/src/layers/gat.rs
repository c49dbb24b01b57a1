use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::graphs::EdgeIndex;
use crate::tensorgrad::{Activation, Mlp, ParamId, ParamStore, Tape, Var};

pub const LEAKY_SLOPE: f64 = 0.2;

/// Attention projections `W2 [d, d]` and scorer `W3 [2d, 1]` applied to
/// `[W2 h_i ‖ W2 h_j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GatAttention {
    pub w2: ParamId,
    pub w3: ParamId,
}

/// Whether heads share one attention projection or own one each.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionSharing {
    /// One `W2`, `W3` for all heads; heads differ in `W_{1,m}` only.
    #[default]
    Shared,
    PerHead,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GatParams {
    /// Value projection `W_{1,m}` `[d, d]` per head.
    pub values: Vec<ParamId>,
    /// One entry when shared, else one per head.
    pub attention: Vec<GatAttention>,
    /// `M·d -> M·d -> d`.
    pub reduce: Mlp,
    pub d: usize,
}

impl GatParams {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, d: usize, heads: usize, act: Activation, rng: &mut R) -> Self {
        Self::with_sharing(store, prefix, d, heads, AttentionSharing::Shared, act, rng)
    }

    pub fn with_sharing<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        heads: usize,
        sharing: AttentionSharing,
        act: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(heads >= 1, "at least one head");
        let values = (0..heads)
            .map(|m| store.add_weight(format!("{prefix}.h{m}.w1"), d, d, rng))
            .collect();
        let n_att = match sharing {
            AttentionSharing::Shared => 1,
            AttentionSharing::PerHead => heads,
        };
        let attention = (0..n_att)
            .map(|m| GatAttention {
                w2: store.add_weight(format!("{prefix}.a{m}.w2"), d, d, rng),
                w3: store.add_weight(format!("{prefix}.a{m}.w3"), 2 * d, 1, rng),
            })
            .collect();
        let reduce = Mlp::new(store, &format!("{prefix}.reduce"), &[heads * d, heads * d, d], act, rng);
        Self {
            values,
            attention,
            reduce,
            d,
        }
    }

    pub fn heads(&self) -> usize {
        self.values.len()
    }

    /// Attention parameters used by head `m`.
    pub fn attention_of(&self, m: usize) -> &GatAttention {
        &self.attention[if self.attention.len() == 1 { 0 } else { m }]
    }

    pub fn param_count(&self) -> usize {
        self.heads() * self.d * self.d + self.attention.len() * (self.d * self.d + 2 * self.d) + self.reduce.param_count()
    }
}

/// Attention coefficients `α_{i,j}`, one entry per pair of `edges`.
pub fn gat_attention(tape: &mut Tape, h: Var, edges: &EdgeIndex, att: &GatAttention, d: usize) -> Result<Var> {
    let u = {
        let w2 = tape.param(att.w2);
        tape.matmul(h, w2)?
    };
    let w3 = tape.param(att.w3);
    let w3_center = tape.narrow(w3, 0, 0, d)?;
    let w3_nbr = tape.narrow(w3, 0, d, d)?;
    let s = tape.matmul(u, w3_center)?;
    let t = tape.matmul(u, w3_nbr)?;
    let sc = tape.gather_rows(s, edges.center.clone())?;
    let tn = tape.gather_rows(t, edges.nbr.clone())?;
    let logits = tape.add(sc, tn)?;
    let logits = tape.leaky_relu(logits, LEAKY_SLOPE)?;
    tape.segment_softmax(logits, edges.center.clone(), edges.rows)
}

/// `Σ_j α_{i,j} W_1 h_j` for one head, before the ELU.
pub fn gat_head_aggregate(tape: &mut Tape, h: Var, edges: &EdgeIndex, alpha: Var, w1: ParamId) -> Result<Var> {
    let w1 = tape.param(w1);
    let z = tape.matmul(h, w1)?;
    let msgs = tape.gather_rows(z, edges.nbr.clone())?;
    let weighted = tape.mul_col(msgs, alpha)?;
    tape.scatter_add_rows(weighted, edges.center.clone(), edges.rows)
}

/// Multi-head graph attention for `h: [..., N, d]`. `edges` must include
/// self-loops and cover every row of `h`.
pub fn gat_forward(tape: &mut Tape, h: Var, edges: &EdgeIndex, p: &GatParams) -> Result<Var> {
    let shape = tape.shape(h).to_vec();
    let d = *shape.last().unwrap_or(&0);
    let rows = shape.iter().product::<usize>() / d.max(1);
    if d != p.d || rows != edges.rows {
        return shape_err(format!(
            "gat: input {shape:?} vs width {} and {} edge-index rows",
            p.d, edges.rows
        ));
    }
    let flat = tape.reshape(h, &[rows, d])?;
    let alphas = p
        .attention
        .iter()
        .map(|a| gat_attention(tape, flat, edges, a, d))
        .collect::<Result<Vec<_>>>()?;
    let mut outs = Vec::with_capacity(p.heads());
    for (m, &w1) in p.values.iter().enumerate() {
        let alpha = alphas[if alphas.len() == 1 { 0 } else { m }];
        let agg = gat_head_aggregate(tape, flat, edges, alpha, w1)?;
        outs.push(tape.elu(agg)?);
    }
    let cat = if outs.len() == 1 { outs[0] } else { tape.concat(&outs, 1)? };
    let y = p.reduce.apply(tape, cat)?;
    tape.reshape(y, &shape)
}
