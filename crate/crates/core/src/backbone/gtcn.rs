use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensorgrad::{ParamId, ParamStore, Tape, Tensor, Var};

/// How the filter and gate branches are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    /// `tanh(filter) ⊙ σ(gate)`.
    #[default]
    Product,
    /// `tanh(filter) + σ(gate)`.
    Sum,
}

/// One causal dilated convolution: a `[c_in, c_out]` weight per tap and a bias.
#[derive(Clone, Debug, PartialEq)]
pub struct CausalConv {
    pub taps: Vec<ParamId>,
    pub bias: ParamId,
}

impl CausalConv {
    fn new<R: Rng>(store: &mut ParamStore, prefix: &str, kernel: usize, c_in: usize, c_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((kernel * c_in) as f64).sqrt();
        let taps = (0..kernel)
            .map(|m| store.add(format!("{prefix}.k{m}"), Tensor::uniform(&[c_in, c_out], bound, rng)))
            .collect();
        let bias = store.add(format!("{prefix}.b"), Tensor::uniform(&[c_out], bound, rng));
        Self { taps, bias }
    }

    /// `y[t] = b + Σ_m x[t + m·dilation] W_m` over time axis 1 of `[B, T, N, C]`.
    pub fn apply(&self, tape: &mut Tape, x: Var, dilation: usize) -> Result<Var> {
        let t = tape.shape(x)[1];
        let extent = (self.taps.len() - 1) * dilation;
        if t <= extent {
            return shape_err(format!("time length {t} too short for a causal extent of {}", extent + 1));
        }
        let out_len = t - extent;
        let mut acc: Option<Var> = None;
        for (m, &w) in self.taps.iter().enumerate() {
            let xs = tape.narrow(x, 1, m * dilation, out_len)?;
            let w = tape.param(w);
            let y = tape.linear(xs, w, None)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, y)?,
                None => y,
            });
        }
        let b = tape.param(self.bias);
        tape.add_row(acc.expect("kernel >= 2"), b)
    }
}

/// Gated temporal convolution with separate filter and gate parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GtcnParams {
    pub filter: CausalConv,
    pub gate: CausalConv,
    pub kernel: usize,
    pub dilation: usize,
    pub combine: Gate,
}

impl GtcnParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        kernel: usize,
        dilation: usize,
        c_in: usize,
        c_out: usize,
        combine: Gate,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel < 2 || dilation < 1 {
            return Err(Error::Config(format!("need kernel >= 2 and dilation >= 1, got {kernel}, {dilation}")));
        }
        Ok(Self {
            filter: CausalConv::new(store, &format!("{prefix}.filter"), kernel, c_in, c_out, rng),
            gate: CausalConv::new(store, &format!("{prefix}.gate"), kernel, c_in, c_out, rng),
            kernel,
            dilation,
            combine,
        })
    }

    /// Time steps consumed: `T' = T - shrink()`.
    pub fn shrink(&self) -> usize {
        (self.kernel - 1) * self.dilation
    }

    pub fn param_count(&self, store: &ParamStore) -> usize {
        let conv = |c: &CausalConv| c.taps.iter().chain([&c.bias]).map(|&id| store.get(id).len()).sum::<usize>();
        conv(&self.filter) + conv(&self.gate)
    }
}

/// Receptive field of a stack of causal convolutions.
pub fn receptive_field(kernel: usize, dilations: &[usize]) -> usize {
    1 + dilations.iter().map(|d| (kernel - 1) * d).sum::<usize>()
}

/// Channels-last gated TCN: `h: [B, T, N, C] -> [B, T', N, C_out]`.
pub fn gtcn_forward(tape: &mut Tape, h: Var, p: &GtcnParams) -> Result<Var> {
    if tape.shape(h).len() != 4 {
        return shape_err(format!("G-TCN expects [B, T, N, C], got {:?}", tape.shape(h)));
    }
    let f = p.filter.apply(tape, h, p.dilation)?;
    let g = p.gate.apply(tape, h, p.dilation)?;
    let f = tape.tanh(f)?;
    let g = tape.sigmoid(g)?;
    match p.combine {
        Gate::Product => tape.mul(f, g),
        Gate::Sum => tape.add(f, g),
    }
}
