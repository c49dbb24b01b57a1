use rand::Rng;

use crate::error::{shape_err, Result};
use crate::tensorgrad::{ParamId, ParamStore, Tape, Tensor, Var};

/// `D^{-1/2} (A + I) D^{-1/2}` with `D` the degree matrix of `A + I`.
pub fn gcn_normalize(a: &Tensor) -> Result<Tensor> {
    let [n, m] = a.dims2()?;
    if n != m {
        return shape_err(format!("adjacency must be square, got {n}x{m}"));
    }
    let mut s = a.clone();
    for i in 0..n {
        s.data_mut()[i * n + i] += 1.0;
    }
    let inv_sqrt: Vec<f64> = s
        .data()
        .chunks(n)
        .map(|row| {
            let d: f64 = row.iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    for i in 0..n {
        for j in 0..n {
            s.data_mut()[i * n + j] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    Ok(s)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcnParams {
    pub weight: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl GcnParams {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Self {
            weight: store.add_weight(format!("{prefix}.w"), d_in, d_out, rng),
            d_in,
            d_out,
        }
    }

    pub fn param_count(&self) -> usize {
        self.d_in * self.d_out
    }
}

/// `Â · H · W` for `h: [..., N, d_in]` and the normalized adjacency `a_hat: [N, N]`.
pub fn gcn_forward(tape: &mut Tape, h: Var, a_hat: Var, p: &GcnParams) -> Result<Var> {
    let mixed = tape.node_mix(a_hat, h)?;
    let w = tape.param(p.weight);
    tape.linear(mixed, w, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn run(a_hat: &Tensor, h: Tensor, w: Tensor) -> Tensor {
        let mut store = ParamStore::new();
        let (di, dout) = (w.shape()[0], w.shape()[1]);
        let p = GcnParams::new(&mut store, "g", di, dout, &mut rng::seeded(0));
        store.set(p.weight, w).unwrap();
        let mut tape = Tape::new();
        tape.bind(&store, false).unwrap();
        let a = tape.constant(a_hat.clone()).unwrap();
        let hv = tape.constant(h).unwrap();
        let y = gcn_forward(&mut tape, hv, a, &p).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn isolated_node_identity() {
        let a_hat = gcn_normalize(&Tensor::zeros(&[1, 1])).unwrap();
        assert_eq!(a_hat.data(), &[1.0]);
        let h = Tensor::new(vec![1, 3], vec![0.5, -1.0, 2.0]).unwrap();
        assert_eq!(run(&a_hat, h.clone(), Tensor::identity(3)), h);
    }

    #[test]
    fn single_edge_hand_arithmetic() {
        let a = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let a_hat = gcn_normalize(&a).unwrap();
        assert!(a_hat.data().iter().all(|v| (v - 0.5).abs() < 1e-15));
        let out = run(&a_hat, Tensor::new(vec![2, 1], vec![1.0, 3.0]).unwrap(), Tensor::identity(1));
        assert!(out.data().iter().all(|v| (v - 2.0).abs() < 1e-14));
    }

    #[test]
    fn disconnected_components_do_not_interact() {
        // component {0, 1} and component {2}
        let a = Tensor::from_rows(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]]).unwrap();
        let a_hat = gcn_normalize(&a).unwrap();
        let w = Tensor::uniform(&[2, 2], 1.0, &mut rng::seeded(4));
        let h1 = Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let h2 = Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, -9.0, 0.0]).unwrap();
        let (o1, o2) = (run(&a_hat, h1, w.clone()), run(&a_hat, h2, w));
        assert_eq!(&o1.data()[..4], &o2.data()[..4]);
    }

    #[test]
    fn symmetric_for_undirected_graphs() {
        let a = crate::graphs::gen_er_graph(8, 0.4, 2).unwrap().dense_adjacency();
        let a_hat = gcn_normalize(&a).unwrap();
        assert!(a_hat.max_abs_diff(&a_hat.transpose().unwrap()) < 1e-15);
    }
}
