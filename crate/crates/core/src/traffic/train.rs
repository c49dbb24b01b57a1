use std::rc::Rc;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::baselines::{chunks, copy_last_steps, evaluate_forecaster};
use super::data::TrafficTensor;
use super::metrics::{MetricAccumulator, TrafficReport};
use super::window::{split_and_window, Batch, Scaler, Splits, WindowSet, WindowSpec};
use crate::backbone::{wavenet_forward, WaveNet, WaveNetConfig};
use crate::error::{shape_err, Error, Result};
use crate::graphs::AdjacencySet;
use crate::rng;
use crate::tensorgrad::{adam_step, AdamConfig, AdamState, ParamStore, Tape, Tensor, Var};

/// Model, windowing and optimizer settings for a traffic run. The model's
/// node count, input width and window lengths are taken from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    pub model: WaveNetConfig,
    pub window: WindowSpec,
    pub ratios: [f64; 3],
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    /// Gradient norm ceiling; `None` disables clipping.
    pub clip: Option<f64>,
    /// Append a time-of-day input channel.
    pub time_of_day: bool,
    /// Leave missing targets out of the training loss.
    pub mask_loss: bool,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
    /// Stop when the wall time exceeds this many seconds.
    pub time_budget_secs: Option<f64>,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            model: WaveNetConfig::default(),
            window: WindowSpec::default(),
            ratios: [0.7, 0.1, 0.2],
            lr: 1e-3,
            batch_size: 16,
            max_epochs: 100,
            patience: 10,
            clip: Some(5.0),
            time_of_day: true,
            mask_loss: true,
            max_steps: None,
            time_budget_secs: None,
        }
    }
}

impl TrafficConfig {
    /// Smaller backbone and budget for runs on a desktop core.
    pub fn desk() -> Self {
        Self {
            model: WaveNetConfig {
                residual_channels: 16,
                skip_channels: 32,
                decoder_widths: vec![64],
                message_hidden: 16,
                heads: 2,
                ..WaveNetConfig::default()
            },
            lr: 2e-3,
            batch_size: 16,
            max_epochs: 30,
            patience: 5,
            time_budget_secs: Some(1500.0),
            ..Self::default()
        }
    }

    /// Backbone config sized for `series`.
    pub fn model_for(&self, series: &TrafficTensor) -> WaveNetConfig {
        WaveNetConfig {
            n_nodes: series.n_nodes(),
            in_dim: series.n_features() + usize::from(self.time_of_day),
            obs_window: self.window.obs,
            forecast_window: self.window.forecast,
            ..self.model.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        if !(self.lr > 0.0) || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("lr, batch size and epoch count must be positive".into()));
        }
        if self.clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("gradient clip must be positive".into()));
        }
        Ok(())
    }
}

/// A series with its road graph.
#[derive(Clone, Debug)]
pub struct TrafficData {
    pub series: TrafficTensor,
    pub adjacency: Tensor,
}

/// Everything a run needs, prepared once.
pub struct Prepared {
    pub splits: Splits,
    pub scaler: Scaler,
    pub adj: AdjacencySet,
}

impl Prepared {
    pub fn new(config: &TrafficConfig, data: &TrafficData) -> Result<Self> {
        config.validate()?;
        if data.adjacency.shape() != [data.series.n_nodes(), data.series.n_nodes()] {
            return shape_err(format!(
                "adjacency {:?} for {} sensors",
                data.adjacency.shape(),
                data.series.n_nodes()
            ));
        }
        let splits = split_and_window(&data.series, config.ratios, &config.window)?;
        let scaler = Scaler::fit(&splits.train.series)?;
        Ok(Self {
            splits,
            scaler,
            adj: AdjacencySet::from_adjacency(&data.adjacency)?,
        })
    }
}

/// Model output for `batch` on `tape`, inverted to original units: `[B, N, F]`.
pub fn forecast_on(tape: &mut Tape, model: &WaveNet, adj: &AdjacencySet, scaler: &Scaler, batch: &Batch) -> Result<Var> {
    let y = wavenet_forward(tape, model, &batch.input, adj)?;
    let want = [batch.size(), 1, model.config.n_nodes, model.config.forecast_window];
    if tape.shape(y) != want {
        return shape_err(format!("model output {:?}, expected {want:?}", tape.shape(y)));
    }
    let y = tape.reshape(y, batch.target.shape())?;
    let y = tape.scale(y, scaler.std[0])?;
    tape.add_scalar(y, scaler.mean[0])
}

/// Mean absolute error over the entries that `mask_loss` keeps.
pub fn masked_mae(tape: &mut Tape, pred: Var, batch: &Batch, mask_loss: bool) -> Result<Var> {
    let keep: Vec<f64> = batch
        .missing
        .iter()
        .map(|&m| if mask_loss && m { 0.0 } else { 1.0 })
        .collect();
    let n = keep.iter().sum::<f64>();
    if n == 0.0 {
        return Err(Error::Domain("batch has no observed targets".into()));
    }
    let target = tape.constant(batch.target.clone())?;
    let e = tape.sub(pred, target)?;
    let e = tape.abs(e)?;
    let w: Rc<[f64]> = keep.into_iter().map(|k| k / n).collect();
    let e = tape.mul_const(e, w)?;
    tape.sum(e)
}

/// Forecasts in original units without gradients.
pub fn predict_batch(model: &WaveNet, adj: &AdjacencySet, scaler: &Scaler, batch: &Batch) -> Result<Tensor> {
    let mut tape = Tape::new();
    tape.bind(&model.store, false)?;
    let y = forecast_on(&mut tape, model, adj, scaler, batch)?;
    let out = tape.value(y).clone();
    if !out.is_finite() {
        return Err(Error::NonFinite { op: "forecast" });
    }
    Ok(out)
}

pub fn evaluate_model(model: &WaveNet, prep: &Prepared, set: &WindowSet, time_of_day: bool) -> Result<TrafficReport> {
    evaluate_forecaster(set, &prep.scaler, time_of_day, |b| predict_batch(model, &prep.adj, &prep.scaler, b))
}

fn clip_grads(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// One optimizer step on `batch`; returns the loss before the update.
pub fn train_step(
    model: &mut WaveNet,
    adam: &mut AdamState,
    prep_adj: &AdjacencySet,
    scaler: &Scaler,
    batch: &Batch,
    config: &TrafficConfig,
    step: usize,
) -> Result<f64> {
    let mut tape = Tape::new();
    tape.bind(&model.store, true)?;
    let diverged = |e: Error| match e {
        Error::NonFinite { .. } => Error::Diverged { step },
        e => e,
    };
    let pred = forecast_on(&mut tape, model, prep_adj, scaler, batch).map_err(diverged)?;
    let loss = masked_mae(&mut tape, pred, batch, config.mask_loss)?;
    let lv = tape.value(loss).item()?;
    if !lv.is_finite() {
        return Err(Error::Diverged { step });
    }
    let mut grads = tape.backward(loss).map_err(diverged)?.params(&tape);
    if let Some(c) = config.clip {
        if !clip_grads(&mut grads, c).is_finite() {
            return Err(Error::Diverged { step });
        }
    }
    adam_step(&mut model.store, &grads, adam)?;
    Ok(lv)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub train_mae: f64,
    pub val_mae: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum StopReason {
    MaxEpochs,
    Patience,
    MaxSteps,
    TimeBudget,
}

pub struct TrafficOutcome {
    /// Parameters restored to the best validation epoch.
    pub model: WaveNet,
    pub scaler: Scaler,
    pub test: TrafficReport,
    /// Copy-last baseline on the same test windows.
    pub copy_last: TrafficReport,
    pub best_val_mae: f64,
    pub history: Vec<EpochRecord>,
    pub stop: StopReason,
}

/// Minibatch Adam on masked MAE in original units, early-stopped on
/// validation MAE and scored on the test windows.
pub fn train_traffic(config: &TrafficConfig, data: &TrafficData, seed: u64) -> Result<TrafficOutcome> {
    train_traffic_with(config, data, seed, |_| {})
}

pub fn train_traffic_with(
    config: &TrafficConfig,
    data: &TrafficData,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrafficOutcome> {
    let prep = Prepared::new(config, data)?;
    let mut model = WaveNet::new(&config.model_for(&data.series), seed)?;
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr), &model.store);
    let mut order_rng = rng::stream(rng::derive(seed, 0x6f72_6465), 0);
    let train = &prep.splits.train;
    let tod = config.time_of_day;
    let start = Instant::now();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut step = 0;
    let mut stop = StopReason::MaxEpochs;
    'epochs: for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut order_rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for idx in order.chunks(config.batch_size) {
            let batch = train.batch(idx, &prep.scaler, tod)?;
            if batch.observed() == 0 {
                continue;
            }
            sum += train_step(&mut model, &mut adam, &prep.adj, &prep.scaler, &batch, config, step)?;
            count += 1;
            step += 1;
            if config.max_steps.is_some_and(|m| step >= m) {
                stop = StopReason::MaxSteps;
            } else if config.time_budget_secs.is_some_and(|s| start.elapsed().as_secs_f64() > s) {
                stop = StopReason::TimeBudget;
            }
            if stop != StopReason::MaxEpochs {
                break;
            }
        }
        let val = evaluate_model(&model, &prep, &prep.splits.val, tod)?;
        let record = EpochRecord {
            epoch,
            steps: step,
            train_mae: sum / count.max(1) as f64,
            val_mae: val.mean_mae,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.push(record);
        if best.as_ref().is_none_or(|(v, _)| val.mean_mae < *v) {
            best = Some((val.mean_mae, model.store.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if stop != StopReason::MaxEpochs {
            break 'epochs;
        }
        if since_best >= config.patience {
            stop = StopReason::Patience;
            break;
        }
    }
    let (best_val_mae, store) = best.expect("at least one epoch ran");
    model.store = store;
    let test = evaluate_model(&model, &prep, &prep.splits.test, tod)?;
    let copy_last = evaluate_forecaster(&prep.splits.test, &prep.scaler, tod, |b| Ok(copy_last_steps(b)))?;
    Ok(TrafficOutcome {
        model,
        scaler: prep.scaler,
        test,
        copy_last,
        best_val_mae,
        history,
        stop,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverfitOutcome {
    pub steps: usize,
    pub final_mae: f64,
    /// Standard deviation of the observed targets in the batch.
    pub target_std: f64,
    pub trace: Vec<f64>,
}

/// Trains repeatedly on windows `idx` of the training split until the batch
/// MAE falls below `ratio` times the batch's target standard deviation or
/// `max_steps` is reached.
pub fn overfit_batch(
    config: &TrafficConfig,
    data: &TrafficData,
    idx: &[usize],
    seed: u64,
    max_steps: usize,
    ratio: f64,
) -> Result<OverfitOutcome> {
    let prep = Prepared::new(config, data)?;
    let mut model = WaveNet::new(&config.model_for(&data.series), seed)?;
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr), &model.store);
    let batch = prep.splits.train.batch(idx, &prep.scaler, config.time_of_day)?;
    let obs: Vec<f64> = batch
        .target
        .data()
        .iter()
        .zip(&batch.missing)
        .filter(|(_, &m)| !m)
        .map(|(&v, _)| v)
        .collect();
    if obs.len() < 2 {
        return Err(Error::Domain("batch needs at least two observed targets".into()));
    }
    let mean = obs.iter().sum::<f64>() / obs.len() as f64;
    let target_std = (obs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (obs.len() - 1) as f64).sqrt();
    let goal = ratio * target_std;
    let mut trace = Vec::new();
    let score = |model: &WaveNet| -> Result<f64> {
        let pred = predict_batch(model, &prep.adj, &prep.scaler, &batch)?;
        let mut acc = MetricAccumulator::new(batch.target.shape()[2]);
        acc.add(pred.data(), batch.target.data(), &batch.missing)?;
        Ok(acc.finish(&[1])?.mean_mae)
    };
    let mut mae = score(&model)?;
    let mut steps = 0;
    while mae >= goal && steps < max_steps {
        train_step(&mut model, &mut adam, &prep.adj, &prep.scaler, &batch, config, steps)?;
        steps += 1;
        if steps % 25 == 0 || steps == max_steps {
            mae = score(&model)?;
            trace.push(mae);
        }
    }
    Ok(OverfitOutcome {
        steps,
        final_mae: mae,
        target_std,
        trace,
    })
}

/// Output shape, finiteness and mask independence for every batch of `set`.
pub fn check_batch_contracts(model: &WaveNet, prep: &Prepared, set: &WindowSet, time_of_day: bool, batch_size: usize) -> Result<usize> {
    let mut checked = 0;
    for idx in chunks(set, batch_size) {
        let batch = set.batch(&idx, &prep.scaler, time_of_day)?;
        let want = [idx.len(), model.config.n_nodes, model.config.forecast_window];
        if batch.target.shape() != want || batch.missing.len() != batch.target.len() {
            return shape_err(format!("batch targets {:?}, expected {want:?}", batch.target.shape()));
        }
        let pred = predict_batch(model, &prep.adj, &prep.scaler, &batch)?;
        if pred.shape() != want {
            return shape_err(format!("forecast {:?}, expected {want:?}", pred.shape()));
        }
        if batch.observed() > 0 {
            let loss = |b: &Batch| -> Result<f64> {
                let mut tape = Tape::new();
                let p = tape.constant(pred.clone())?;
                let l = masked_mae(&mut tape, p, b, true)?;
                tape.value(l).item()
            };
            let mut poked = batch.clone();
            for (v, &m) in poked.target.data_mut().iter_mut().zip(&batch.missing) {
                if m {
                    *v += 1e3;
                }
            }
            if loss(&poked)? != loss(&batch)? {
                return Err(Error::Contract("missing targets leak into the loss".into()));
            }
        }
        for (k, &m) in batch.missing.iter().enumerate() {
            if m != (batch.target.data()[k] == 0.0) {
                return Err(Error::Contract(format!("mask disagrees with target zero at entry {k}")));
            }
        }
        checked += 1;
    }
    Ok(checked)
}
