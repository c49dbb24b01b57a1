//! Central-difference verification of tape gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Inputs closer than this to a ReLU/LeakyReLU/abs kink are rejected.
pub const DEFAULT_KINK_MARGIN: f64 = 1e-3;

fn eval<F>(store: &ParamStore, inputs: &[Tensor], f: &F, grad: bool) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    tape.bind(store, grad)?;
    let vars = inputs
        .iter()
        .map(|t| if grad { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::Contract("gradcheck function must return a scalar".into()));
    }
    Ok((tape, vars, out))
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Difference quotients closer to the analytic value than this many ulps of
/// `f`, divided by `2 eps`, are indistinguishable from rounding noise.
pub const ROUNDOFF_ULPS: f64 = 16.0;

/// Per-call summary of a gradient check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckReport {
    /// `max |a - n| / max(|a|, |n|, 1e-8)` over all coordinates.
    pub max_rel_error: f64,
    /// The same maximum restricted to coordinates whose absolute mismatch
    /// exceeds the central-difference rounding bound
    /// `ROUNDOFF_ULPS · ε_mach · max(|f(x ± eps)|, 1) / (2 eps)`.
    pub max_rel_error_beyond_roundoff: f64,
    pub coordinates: usize,
}

impl GradcheckReport {
    fn record(&mut self, analytic: f64, up: f64, down: f64, eps: f64) {
        let numeric = (up - down) / (2.0 * eps);
        let e = rel_err(analytic, numeric);
        self.max_rel_error = self.max_rel_error.max(e);
        let noise = ROUNDOFF_ULPS * f64::EPSILON * up.abs().max(down.abs()).max(1.0) / (2.0 * eps);
        if (analytic - numeric).abs() > noise {
            self.max_rel_error_beyond_roundoff = self.max_rel_error_beyond_roundoff.max(e);
        }
        self.coordinates += 1;
    }
}

/// Max relative error between the tape gradient and central differences,
/// taken over every coordinate of every parameter in `store` and every tensor
/// in `inputs`. `f` receives the input variables; parameters are bound on the
/// tape before `f` runs.
pub fn gradcheck_with_params<F>(store: &ParamStore, inputs: &[Tensor], eps: f64, kink_margin: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    Ok(gradcheck_report(store, inputs, eps, kink_margin, f)?.max_rel_error)
}

/// [`gradcheck_with_params`] with the rounding-aware statistic as well.
pub fn gradcheck_report<F>(store: &ParamStore, inputs: &[Tensor], eps: f64, kink_margin: f64, f: F) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::Domain(format!("eps must be positive, got {eps}")));
    }
    let (tape, vars, out) = eval(store, inputs, &f, true)?;
    if let Some((distance, op)) = tape.nearest_kink() {
        if distance < kink_margin {
            return Err(Error::Kink {
                op,
                distance,
                margin: kink_margin,
            });
        }
    }
    let grads = tape.backward(out)?;
    let param_grads = grads.params(&tape);
    let input_grads: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v).expect("own var")).collect();
    drop(tape);

    let value_at = |store: &ParamStore, inputs: &[Tensor]| -> Result<f64> {
        let (t, _, o) = eval(store, inputs, &f, false)?;
        t.value(o).item()
    };

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        max_rel_error_beyond_roundoff: 0.0,
        coordinates: 0,
    };
    let mut probe = store.clone();
    for (pi, g) in param_grads.iter().enumerate() {
        for k in 0..g.len() {
            let orig = probe.tensors()[pi].data()[k];
            probe.tensors_mut()[pi].data_mut()[k] = orig + eps;
            let up = value_at(&probe, inputs)?;
            probe.tensors_mut()[pi].data_mut()[k] = orig - eps;
            let down = value_at(&probe, inputs)?;
            probe.tensors_mut()[pi].data_mut()[k] = orig;
            report.record(g.data()[k], up, down, eps);
        }
    }
    let mut xs = inputs.to_vec();
    for (ii, g) in input_grads.iter().enumerate() {
        for k in 0..g.len() {
            let orig = xs[ii].data()[k];
            xs[ii].data_mut()[k] = orig + eps;
            let up = value_at(store, &xs)?;
            xs[ii].data_mut()[k] = orig - eps;
            let down = value_at(store, &xs)?;
            xs[ii].data_mut()[k] = orig;
            report.record(g.data()[k], up, down, eps);
        }
    }
    Ok(report)
}

/// Single-input form: `f(x)` must reduce to a scalar.
pub fn gradcheck<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    gradcheck_with_params(&ParamStore::new(), std::slice::from_ref(x), eps, DEFAULT_KINK_MARGIN, |t, v| f(t, v[0]))
}

/// Outcome of a randomized gradient check campaign.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialSummary {
    pub trials: usize,
    pub max_rel_error: f64,
    /// See [`GradcheckReport::max_rel_error_beyond_roundoff`].
    pub max_rel_error_beyond_roundoff: f64,
    /// Trials whose strict maximum exceeded `1e-4`.
    pub trials_over_1e4: usize,
    /// Draws discarded because they landed near an activation kink.
    pub resampled: usize,
}

/// Runs `trials` independent checks. `setup` draws a fresh (params, inputs)
/// configuration from the RNG; draws that hit the kink policy are resampled.
pub fn gradcheck_trials<S, F>(trials: usize, seed: u64, eps: f64, mut setup: S, f: F) -> Result<TrialSummary>
where
    S: FnMut(&mut ChaCha8Rng) -> (ParamStore, Vec<Tensor>),
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    const MAX_RESAMPLES: usize = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut beyond: f64 = 0.0;
    let mut over = 0;
    let mut resampled = 0;
    for _ in 0..trials {
        loop {
            let (store, inputs) = setup(&mut rng);
            match gradcheck_report(&store, &inputs, eps, DEFAULT_KINK_MARGIN, &f) {
                Ok(r) => {
                    worst = worst.max(r.max_rel_error);
                    beyond = beyond.max(r.max_rel_error_beyond_roundoff);
                    over += usize::from(r.max_rel_error > 1e-4);
                    break;
                }
                Err(Error::Kink { .. }) if resampled < MAX_RESAMPLES => resampled += 1,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(TrialSummary {
        trials,
        max_rel_error: worst,
        max_rel_error_beyond_roundoff: beyond,
        trials_over_1e4: over,
        resampled,
    })
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::tensorgrad::{Activation, Mlp};

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::vector(vec![0.3, -1.2, 2.5]);
        let err = gradcheck(
            |t, x| {
                let s = t.scale(x, 3.0)?;
                t.sum(s)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-10, "{err}");
    }

    #[test]
    fn tanh_mlp_within_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[3, 5, 2], Activation::Tanh, &mut rng);
        let x = Tensor::uniform(&[4, 3], 1.0, &mut rng);
        let r = Tensor::uniform(&[4, 2], 1.0, &mut rng);
        let err = gradcheck_with_params(&store, &[x, r], 1e-5, DEFAULT_KINK_MARGIN, |t, v| {
            let y = mlp.apply(t, v[0])?;
            let p = t.mul(y, v[1])?;
            t.sum(p)
        })
        .unwrap();
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn relu_at_kink_is_reported() {
        let x = Tensor::vector(vec![0.5, 0.0, -0.3]);
        let r = gradcheck(
            |t, x| {
                let y = t.relu(x)?;
                t.sum(y)
            },
            &x,
            1e-5,
        );
        assert!(matches!(r, Err(Error::Kink { op: "relu", .. })), "{r:?}");
    }

    #[test]
    fn randomized_trials_resample_kinks() {
        let summary = gradcheck_trials(
            20,
            5,
            1e-5,
            |rng| {
                // one coordinate deliberately lands on the kink half the time
                let v = if rng.gen::<bool>() { 0.0 } else { 0.7 };
                (ParamStore::new(), vec![Tensor::vector(vec![v, rng.gen::<f64>() + 0.1])])
            },
            |t, v| {
                let y = t.relu(v[0])?;
                let y2 = t.square(y)?;
                t.sum(y2)
            },
        )
        .unwrap();
        assert!(summary.max_rel_error <= 1e-6);
        assert!(summary.resampled > 0);
    }

    #[test]
    fn non_positive_eps_rejected() {
        let r = gradcheck(|t, x| t.sum(x), &Tensor::vector(vec![1.0]), 0.0);
        assert!(matches!(r, Err(Error::Domain(_))));
    }
}
