use serde::{Deserialize, Serialize};

use super::data::{slots_per_week, week_slot, TrafficTensor};
use super::metrics::{MetricAccumulator, TrafficReport};
use super::window::{Batch, Scaler, WindowSet};
use crate::error::{Error, Result};
use crate::tensorgrad::Tensor;

/// Repeats each node's last observed reading (as recorded, zeros included)
/// over the forecast window: `[B, N, F]`.
pub fn copy_last_steps(batch: &Batch) -> Tensor {
    let s = batch.target.shape();
    let (b, n, f) = (s[0], s[1], s[2]);
    let mut out = Vec::with_capacity(b * n * f);
    for &v in &batch.last {
        out.extend(std::iter::repeat_n(v, f));
    }
    Tensor::new(vec![b, n, f], out).expect("batch shapes agree")
}

/// Training mean per node and time-of-week slot, with node and global means
/// for slots the training data never saw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoricalAverage {
    pub granularity: i64,
    pub n_nodes: usize,
    /// `[N, slots]`; `None` where the slot had no observation.
    pub slots: Vec<Option<f64>>,
    pub node_mean: Vec<Option<f64>>,
    pub global_mean: f64,
}

impl HistoricalAverage {
    /// Fits on the first feature of `train`, skipping missing entries.
    pub fn fit(train: &TrafficTensor) -> Result<Self> {
        let n = train.n_nodes();
        let g = train.granularity();
        let k = slots_per_week(g);
        let mut sum = vec![0.0; n * k];
        let mut cnt = vec![0usize; n * k];
        for l in 0..train.len() {
            let slot = train.week_slot(l);
            for ni in 0..n {
                if !train.is_missing(0, ni, l) {
                    sum[ni * k + slot] += train.get(0, ni, l);
                    cnt[ni * k + slot] += 1;
                }
            }
        }
        let total: usize = cnt.iter().sum();
        if total == 0 {
            return Err(Error::Domain("historical average needs observed training data".into()));
        }
        let global_mean = sum.iter().sum::<f64>() / total as f64;
        let node_mean = (0..n)
            .map(|ni| {
                let c: usize = cnt[ni * k..(ni + 1) * k].iter().sum();
                (c > 0).then(|| sum[ni * k..(ni + 1) * k].iter().sum::<f64>() / c as f64)
            })
            .collect();
        let slots = sum.iter().zip(&cnt).map(|(&s, &c)| (c > 0).then(|| s / c as f64)).collect();
        Ok(Self {
            granularity: g,
            n_nodes: n,
            slots,
            node_mean,
            global_mean,
        })
    }

    pub fn predict_at(&self, node: usize, minutes: i64) -> f64 {
        let k = slots_per_week(self.granularity);
        let slot = week_slot(minutes, self.granularity);
        self.slots[node * k + slot]
            .or(self.node_mean[node])
            .unwrap_or(self.global_mean)
    }

    /// `[B, N, F]` forecasts keyed on each target timestamp.
    pub fn predict(&self, batch: &Batch) -> Result<Tensor> {
        let s = batch.target.shape();
        let (b, n, f) = (s[0], s[1], s[2]);
        if n != self.n_nodes {
            return Err(Error::Shape(format!("batch has {n} nodes, average was fitted on {}", self.n_nodes)));
        }
        let mut out = Vec::with_capacity(b * n * f);
        for bi in 0..b {
            for ni in 0..n {
                for si in 0..f {
                    out.push(self.predict_at(ni, batch.target_times[bi * f + si]));
                }
            }
        }
        Tensor::new(vec![b, n, f], out)
    }
}

/// Window indices of `set` in chunks of `size`.
pub fn chunks(set: &WindowSet, size: usize) -> impl Iterator<Item = Vec<usize>> + '_ {
    let size = size.max(1);
    (0..set.len()).step_by(size).map(move |s| (s..(s + size).min(set.len())).collect())
}

/// Streams every window of `set` through `forecast` and scores it.
pub fn evaluate_forecaster(
    set: &WindowSet,
    scaler: &Scaler,
    time_of_day: bool,
    mut forecast: impl FnMut(&Batch) -> Result<Tensor>,
) -> Result<TrafficReport> {
    let mut acc = MetricAccumulator::new(set.spec.forecast);
    for idx in chunks(set, 256) {
        let batch = set.batch(&idx, scaler, time_of_day)?;
        let pred = forecast(&batch)?;
        if pred.shape() != batch.target.shape() {
            return Err(Error::Shape(format!(
                "forecast {:?} does not match target {:?}",
                pred.shape(),
                batch.target.shape()
            )));
        }
        acc.add(pred.data(), batch.target.data(), &batch.missing)?;
    }
    acc.finish(&set.spec.probes)
}
