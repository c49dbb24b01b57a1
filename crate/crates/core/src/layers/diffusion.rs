use rand::Rng;

use crate::error::{shape_err, Result};
use crate::graphs::Supports;
use crate::tensorgrad::{ParamId, ParamStore, Tape, Var};

/// Hop count `K`, one weight per (hop, support) and a shared bias.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionConvParams {
    pub hops: usize,
    /// `weights[k][s]` multiplies `P_s^k H`; supports are ordered
    /// forward, backward, adaptive.
    pub weights: Vec<Vec<ParamId>>,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl DiffusionConvParams {
    /// `supports` is 2 (forward and backward) or 3 (plus self-adaptive).
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        hops: usize,
        supports: usize,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        assert!((1..=3).contains(&supports), "between one and three supports");
        let fan_in = d_in * supports * (hops + 1);
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weights = (0..=hops)
            .map(|k| {
                (0..supports)
                    .map(|s| {
                        store.add(
                            format!("{prefix}.w{k}_{s}"),
                            crate::tensorgrad::Tensor::uniform(&[d_in, d_out], bound, rng),
                        )
                    })
                    .collect()
            })
            .collect();
        let bias = store.add(format!("{prefix}.b"), crate::tensorgrad::Tensor::uniform(&[d_out], bound, rng));
        Self {
            hops,
            weights,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn supports(&self) -> usize {
        self.weights[0].len()
    }

    pub fn param_count(&self) -> usize {
        (self.hops + 1) * self.supports() * self.d_in * self.d_out + self.d_out
    }
}

/// `B + Σ_k Σ_s P_s^k H W_{k,s}` for `h: [..., N, d_in]`.
pub fn diffusion_conv(tape: &mut Tape, h: Var, supports: &Supports, p: &DiffusionConvParams) -> Result<Var> {
    let mut mats = vec![supports.forward, supports.backward];
    if p.supports() == 3 {
        match supports.adaptive {
            Some(a) => mats.push(a),
            None => return shape_err("diffusion layer expects a self-adaptive adjacency"),
        }
    }
    mats.truncate(p.supports());
    let mut acc: Option<Var> = None;
    for (s, &mat) in mats.iter().enumerate() {
        let mut x = h;
        for k in 0..=p.hops {
            if k > 0 {
                x = tape.node_mix(mat, x)?;
            }
            let w = tape.param(p.weights[k][s]);
            let term = tape.linear(x, w, None)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, term)?,
                None => term,
            });
        }
    }
    let b = tape.param(p.bias);
    tape.add_row(acc.expect("at least one term"), b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::AdjacencySet;
    use crate::rng;
    use crate::tensorgrad::Tensor;

    fn setup(a: &Tensor, hops: usize, d: usize) -> (ParamStore, DiffusionConvParams, AdjacencySet) {
        let mut store = ParamStore::new();
        let p = DiffusionConvParams::new(&mut store, "dc", hops, 2, d, d, &mut rng::seeded(1));
        (store, p, AdjacencySet::from_adjacency(a).unwrap())
    }

    fn eval(store: &ParamStore, p: &DiffusionConvParams, adj: &AdjacencySet, h: Tensor) -> Tensor {
        let mut tape = Tape::new();
        tape.bind(store, false).unwrap();
        let s = adj.realize(&mut tape).unwrap();
        let hv = tape.constant(h).unwrap();
        let y = diffusion_conv(&mut tape, hv, &s, p).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn zero_hops_identity_weights_triple_input() {
        let a = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let mut store = ParamStore::new();
        let p = DiffusionConvParams::new(&mut store, "dc", 0, 3, 2, 2, &mut rng::seeded(1));
        for w in &p.weights[0] {
            store.set(*w, Tensor::identity(2)).unwrap();
        }
        store.set(p.bias, Tensor::zeros(&[2])).unwrap();
        let e = crate::graphs::AdaptiveFactors {
            e1: store.add("e1", Tensor::zeros(&[2, 1])),
            e2: store.add("e2", Tensor::zeros(&[2, 1])),
        };
        let adj = AdjacencySet::from_adjacency(&a).unwrap().with_adaptive(e);
        let h = Tensor::new(vec![2, 2], vec![1.0, -2.0, 0.5, 4.0]).unwrap();
        let out = eval(&store, &p, &adj, h.clone());
        let expect: Vec<f64> = h.data().iter().map(|v| 3.0 * v).collect();
        assert_eq!(out.data(), &expect[..]);
    }

    #[test]
    fn zero_weights_broadcast_bias() {
        let a = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let (mut store, p, adj) = setup(&a, 2, 3);
        for row in &p.weights {
            for w in row {
                store.set(*w, Tensor::zeros(&[3, 3])).unwrap();
            }
        }
        store.set(p.bias, Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
        let out = eval(&store, &p, &adj, Tensor::uniform(&[2, 3], 1.0, &mut rng::seeded(2)));
        assert_eq!(out.data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn directed_one_hop_matches_dense_power() {
        let a = Tensor::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let (mut store, p, adj) = setup(&a, 1, 1);
        assert_eq!(adj.forward, a);
        for (k, row) in p.weights.iter().enumerate() {
            for (s, w) in row.iter().enumerate() {
                let v = if k == 1 && s == 0 { 1.0 } else { 0.0 };
                store.set(*w, Tensor::new(vec![1, 1], vec![v]).unwrap()).unwrap();
            }
        }
        store.set(p.bias, Tensor::zeros(&[1])).unwrap();
        let h = Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap();
        let out = eval(&store, &p, &adj, h.clone());
        // oracle: dense P_f^1 H W
        let oracle = adj.forward.matmul(&h).unwrap();
        assert_eq!(out, oracle);
        assert_eq!(out.data(), &[2.0, 0.0]);
    }
}
