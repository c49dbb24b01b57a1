use serde::{Deserialize, Serialize};

use super::data::{RmsgStream, Split};
use super::metrics::{aggregate, eval_metrics, Metrics};
use super::model::{average_model, AverageModel, GraphBatch, RmsgConfig, RmsgModel};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensorgrad::{adam_step, AdamConfig, AdamState, Tape};

/// Learning rate at `step` of `total` under the configured schedule.
pub fn scheduled_lr(config: &RmsgConfig, step: usize, total: usize) -> f64 {
    if !config.lr_decay || total <= 1 {
        return config.lr;
    }
    let t = step as f64 / (total - 1) as f64;
    let floor = 0.01 * config.lr;
    floor + 0.5 * (config.lr - floor) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// The data stream of a seeded run.
pub fn run_stream(config: &RmsgConfig, seed: u64) -> RmsgStream {
    RmsgStream {
        seed: rng::derive(seed, 0x6461_7461),
        n_nodes: config.n_nodes,
        edge_prob: config.edge_prob,
    }
}

/// Labels and predictions over samples `0..count` of `split`.
pub fn collect_predictions(model: &RmsgModel, stream: &RmsgStream, split: Split, count: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut y, mut h) = (Vec::new(), Vec::new());
    for s in stream.iter(split, count) {
        let s = s?;
        h.extend(model.predict(&s)?);
        y.extend_from_slice(&s.y);
    }
    Ok((y, h))
}

pub fn evaluate(model: &RmsgModel, stream: &RmsgStream, split: Split, count: usize) -> Result<Metrics> {
    let (y, h) = collect_predictions(model, stream, split, count)?;
    eval_metrics(&y, &h)
}

/// Mean-label predictor fitted to the training stream of a run.
pub fn fit_average(config: &RmsgConfig, seed: u64) -> Result<AverageModel> {
    let stream = run_stream(config, seed);
    let mut labels = Vec::new();
    for s in stream.iter(Split::Train, config.train_samples) {
        labels.extend(s?.y);
    }
    average_model(labels)
}

pub fn evaluate_average(avg: &AverageModel, stream: &RmsgStream, count: usize) -> Result<Metrics> {
    let (mut y, mut h) = (Vec::new(), Vec::new());
    for s in stream.iter(Split::Test, count) {
        let s = s?;
        h.extend(avg.predict(&s));
        y.extend(s.y);
    }
    eval_metrics(&y, &h)
}

/// A validation checkpoint taken during training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub step: usize,
    pub train_rmse: f64,
    pub val_rmse: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters restored to the best validation checkpoint.
    pub model: RmsgModel,
    pub test: Metrics,
    pub best_val_rmse: f64,
    pub history: Vec<ValidationPoint>,
}

/// Minibatch Adam on RMSE loss, keeping the parameters with the lowest
/// validation RMSE, then scored on the test stream.
pub fn train_rmsg(config: &RmsgConfig, seed: u64) -> Result<TrainOutcome> {
    train_rmsg_with(config, seed, |_| {})
}

/// [`train_rmsg`] reporting every validation point to `on_eval`.
pub fn train_rmsg_with(config: &RmsgConfig, seed: u64, mut on_eval: impl FnMut(&ValidationPoint)) -> Result<TrainOutcome> {
    let mut model = RmsgModel::new(config, seed)?;
    let stream = run_stream(config, seed);
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr), &model.store);
    let steps = config.steps();
    let b = config.batch_graphs;
    let mut best: Option<(f64, crate::tensorgrad::ParamStore)> = None;
    let mut history = Vec::new();
    let mut running = 0.0;
    let mut since = 0usize;
    for step in 0..steps {
        let samples = (0..b)
            .map(|i| stream.sample(Split::Train, (step * b + i) as u64))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<_> = samples.iter().collect();
        let batch = GraphBatch::new(&refs)?;
        let mut tape = Tape::new();
        tape.bind(&model.store, true)?;
        let loss = match model.loss(&mut tape, &batch) {
            Ok(l) => l,
            Err(Error::NonFinite { .. }) => return Err(Error::Diverged { step }),
            Err(e) => return Err(e),
        };
        let lv = tape.value(loss).item()?;
        if !lv.is_finite() {
            return Err(Error::Diverged { step });
        }
        running += lv * lv;
        since += 1;
        let grads = match tape.backward(loss) {
            Ok(g) => g.params(&tape),
            Err(Error::NonFinite { .. }) => return Err(Error::Diverged { step }),
            Err(e) => return Err(e),
        };
        adam.config.lr = scheduled_lr(config, step, steps);
        adam_step(&mut model.store, &grads, &mut adam)?;
        if model.store.tensors().iter().any(|t| t.data().iter().any(|v| !v.is_finite())) {
            return Err(Error::Diverged { step });
        }
        let last = step + 1 == steps;
        if last || (config.eval_every > 0 && (step + 1) % config.eval_every == 0) {
            let val = evaluate(&model, &stream, Split::Validation, config.val_samples)?;
            let point = ValidationPoint {
                step: step + 1,
                train_rmse: (running / since as f64).sqrt(),
                val_rmse: val.rmse,
            };
            on_eval(&point);
            history.push(point);
            running = 0.0;
            since = 0;
            if best.as_ref().is_none_or(|(v, _)| val.rmse < *v) {
                best = Some((val.rmse, model.store.clone()));
            }
        }
    }
    let (best_val_rmse, store) = best.ok_or_else(|| Error::Contract("no validation point".into()))?;
    model.store = store;
    let test = evaluate(&model, &stream, Split::Test, config.test_samples)?;
    Ok(TrainOutcome {
        model,
        test,
        best_val_rmse,
        history,
    })
}

/// One seed of an [`RmsgRunReport`]; failed runs keep their error message.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub seed: u64,
    pub metrics: Option<Metrics>,
    pub best_val_rmse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsgRunReport {
    pub model: String,
    pub param_count: usize,
    pub config: RmsgConfig,
    pub rows: Vec<RunRow>,
    /// Over successful runs only.
    pub mean: Option<Metrics>,
    /// Sample standard deviation over successful runs.
    pub std: Option<Metrics>,
    pub failed: usize,
}

impl RmsgRunReport {
    pub fn from_rows(config: &RmsgConfig, param_count: usize, rows: Vec<RunRow>) -> Self {
        let ok: Vec<Metrics> = rows.iter().filter_map(|r| r.metrics).collect();
        let agg = aggregate(&ok);
        Self {
            model: config.flavor.name().to_string(),
            param_count,
            config: config.clone(),
            failed: rows.len() - ok.len(),
            mean: agg.map(|a| a.0),
            std: agg.map(|a| a.1),
            rows,
        }
    }
}

/// Trains one model per seed. `on_model` sees every successfully trained model.
pub fn run_seeds(
    config: &RmsgConfig,
    seeds: &[u64],
    mut on_model: impl FnMut(u64, &TrainOutcome),
) -> Result<RmsgRunReport> {
    config.validate()?;
    let param_count = RmsgModel::new(config, 0)?.param_count();
    let mut rows = Vec::new();
    for &seed in seeds {
        rows.push(match train_rmsg(config, seed) {
            Ok(out) => {
                on_model(seed, &out);
                RunRow {
                    seed,
                    metrics: Some(out.test),
                    best_val_rmse: Some(out.best_val_rmse),
                    error: None,
                }
            }
            Err(e @ (Error::Diverged { .. } | Error::NonFinite { .. } | Error::Domain(_))) => RunRow {
                seed,
                metrics: None,
                best_val_rmse: None,
                error: Some(e.to_string()),
            },
            Err(e) => return Err(e),
        });
    }
    Ok(RmsgRunReport::from_rows(config, param_count, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Flavor;

    fn tiny(flavor: Flavor) -> RmsgConfig {
        RmsgConfig {
            flavor,
            n_nodes: 20,
            edge_prob: 0.2,
            train_samples: 64,
            val_samples: 8,
            test_samples: 8,
            eval_every: 16,
            ..RmsgConfig::default()
        }
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let c = RmsgConfig::default();
        assert_eq!(scheduled_lr(&c, 0, 100), c.lr);
        assert!((scheduled_lr(&c, 99, 100) - 0.01 * c.lr).abs() < 1e-15);
        let flat = RmsgConfig {
            lr_decay: false,
            ..c
        };
        assert_eq!(scheduled_lr(&flat, 50, 100), flat.lr);
    }

    #[test]
    fn training_is_deterministic() {
        for flavor in [Flavor::Gcn, Flavor::Gat, Flavor::Mpnn] {
            let a = train_rmsg(&tiny(flavor), 11).unwrap();
            let b = train_rmsg(&tiny(flavor), 11).unwrap();
            assert_eq!(a.test, b.test);
            assert_eq!(a.history, b.history);
            assert_eq!(a.history.len(), 4);
            assert_eq!(a.model.store, b.model.store);
        }
    }

    #[test]
    fn best_checkpoint_is_kept() {
        let out = train_rmsg(&tiny(Flavor::Mpnn), 2).unwrap();
        let best = out.history.iter().map(|p| p.val_rmse).fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_val_rmse, best);
        let stream = run_stream(&out.model.config, 2);
        let again = evaluate(&out.model, &stream, Split::Validation, 8).unwrap();
        assert_eq!(again.rmse, best);
    }

    #[test]
    fn divergence_is_reported_not_dropped() {
        let cfg = RmsgConfig {
            lr: 1e300,
            lr_decay: false,
            ..tiny(Flavor::Mpnn)
        };
        let report = run_seeds(&cfg, &[1, 2], |_, _| {}).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.failed, 2);
        assert!(report.rows.iter().all(|r| r.error.is_some()));
        assert!(report.mean.is_none());
    }

    #[test]
    fn average_model_is_near_zero_r2() {
        let cfg = tiny(Flavor::Mpnn);
        let avg = fit_average(&cfg, 4).unwrap();
        let m = evaluate_average(&avg, &run_stream(&cfg, 4), 64).unwrap();
        assert!(m.r2 <= 0.0 && m.r2 > -0.1);
    }
}
