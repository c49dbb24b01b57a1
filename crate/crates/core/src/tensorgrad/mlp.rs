use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    #[default]
    Relu,
    LeakyRelu,
    Elu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Linear => Ok(x),
            Activation::Relu => tape.relu(x),
            Activation::LeakyRelu => tape.leaky_relu(x, 0.01),
            Activation::Elu => tape.elu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

/// Stack of affine layers; `activations[i]` follows hidden layer `i`, the
/// output layer is affine.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<(ParamId, ParamId)>,
    pub activations: Vec<Activation>,
    widths: Vec<usize>,
}

impl Mlp {
    /// `widths = [d_in, h1, ..., d_out]`; every hidden layer uses `act`.
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, widths: &[usize], act: Activation, rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let wid = store.add_weight(format!("{prefix}.{i}.w"), w[0], w[1], rng);
                let bid = store.add_bias(format!("{prefix}.{i}.b"), w[0], w[1], rng);
                (wid, bid)
            })
            .collect::<Vec<_>>();
        Self {
            activations: vec![act; layers.len() - 1],
            layers,
            widths: widths.to_vec(),
        }
    }

    pub fn d_in(&self) -> usize {
        self.widths[0]
    }

    pub fn d_out(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Number of scalar weights and biases.
    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Applies the MLP along the last axis of `x`.
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let d = *tape.shape(x).last().unwrap_or(&0);
        if d != self.d_in() {
            return shape_err(format!("mlp expects last extent {}, got {:?}", self.d_in(), tape.shape(x)));
        }
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let (w, b) = (tape.param(w), tape.param(b));
            h = tape.linear(h, w, Some(b))?;
            if let Some(act) = self.activations.get(i) {
                h = act.apply(tape, h)?;
            }
        }
        Ok(h)
    }
}

/// Free-function form of [`Mlp::apply`].
pub fn mlp_apply(tape: &mut Tape, p: &Mlp, x: Var) -> Result<Var> {
    p.apply(tape, x)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensorgrad::Tensor;

    fn set_all(store: &mut ParamStore, mlp: &Mlp, w: f64, b: f64) {
        for &(wi, bi) in &mlp.layers {
            let ws = store.get(wi).shape().to_vec();
            store.set(wi, Tensor::full(&ws, w)).unwrap();
            let bs = store.get(bi).shape().to_vec();
            store.set(bi, Tensor::full(&bs, b)).unwrap();
        }
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[2, 2], Activation::Linear, &mut rng);
        store.set(mlp.layers[0].0, Tensor::identity(2)).unwrap();
        store.set(mlp.layers[0].1, Tensor::zeros(&[2])).unwrap();
        let mut tape = Tape::new();
        tape.bind(&store, false).unwrap();
        let x = tape.constant(Tensor::new(vec![1, 2], vec![1.0, -2.0]).unwrap()).unwrap();
        let y = mlp.apply(&mut tape, x).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, -2.0]);
    }

    #[test]
    fn zero_input_zero_bias_relu_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[3, 5, 4, 2], Activation::Relu, &mut rng);
        for &(_, b) in &mlp.layers {
            let s = store.get(b).shape().to_vec();
            store.set(b, Tensor::zeros(&s)).unwrap();
        }
        let mut tape = Tape::new();
        tape.bind(&store, false).unwrap();
        let x = tape.constant(Tensor::zeros(&[4, 3])).unwrap();
        let y = mlp.apply(&mut tape, x).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_evaluated_two_layer_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[2, 2, 1], Activation::Relu, &mut rng);
        set_all(&mut store, &mlp, 1.0, 0.0);
        let mut tape = Tape::new();
        tape.bind(&store, false).unwrap();
        let x = tape.constant(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap()).unwrap();
        let y = mlp.apply(&mut tape, x).unwrap();
        // independent oracle: explicit matrix arithmetic
        let hidden = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap().matmul(&Tensor::full(&[2, 2], 1.0)).unwrap();
        assert_eq!(hidden.data(), &[3.0, 3.0]);
        let out = hidden.matmul(&Tensor::full(&[2, 1], 1.0)).unwrap();
        assert_eq!(tape.value(y).data(), out.data());
        assert_eq!(tape.value(y).data(), &[6.0]);
    }

    #[test]
    fn batch_axes_untouched_and_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[3, 4, 2], Activation::Tanh, &mut rng);
        let mut tape = Tape::new();
        tape.bind(&store, false).unwrap();
        let x = tape.constant(Tensor::zeros(&[2, 5, 3])).unwrap();
        let y = mlp.apply(&mut tape, x).unwrap();
        assert_eq!(tape.shape(y), &[2, 5, 2]);
        let bad = tape.constant(Tensor::zeros(&[2, 4])).unwrap();
        assert!(mlp.apply(&mut tape, bad).is_err());
        assert_eq!(mlp.param_count(), 3 * 4 + 4 + 4 * 2 + 2);
    }
}
