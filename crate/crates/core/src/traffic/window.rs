use serde::{Deserialize, Serialize};

use super::data::TrafficTensor;
use crate::error::{shape_err, Error, Result};
use crate::tensorgrad::Tensor;

/// Observation length, gap and forecast length in time steps, plus the
/// 1-based forecast steps reported by the metrics.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSpec {
    pub obs: usize,
    pub horizon: usize,
    pub forecast: usize,
    pub probes: Vec<usize>,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            obs: 12,
            horizon: 0,
            forecast: 12,
            probes: vec![3, 6, 12],
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.obs == 0 || self.forecast == 0 {
            return Err(Error::Config("observation and forecast windows must be at least one step".into()));
        }
        if self.probes.is_empty() || self.probes.iter().any(|&p| p == 0 || p > self.forecast) {
            return Err(Error::Config(format!(
                "probes {:?} must lie in 1..={}",
                self.probes, self.forecast
            )));
        }
        Ok(())
    }

    /// Samples obtainable from `len` consecutive steps.
    pub fn count(&self, len: usize) -> usize {
        (len + 1).saturating_sub(self.obs + self.forecast + self.horizon)
    }
}

/// Standard scaler with one `(mean, std)` pair per feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Sample standard deviations below this are replaced by 1.
pub const STD_GUARD: f64 = 1e-8;

impl Scaler {
    /// Statistics over the observed (non-missing) entries of `t`.
    pub fn fit(t: &TrafficTensor) -> Result<Self> {
        let [d, n, l] = t.dims();
        let mut mean = Vec::with_capacity(d);
        let mut std = Vec::with_capacity(d);
        for di in 0..d {
            let start = di * n * l;
            let obs: Vec<f64> = (start..start + n * l)
                .filter(|&i| !t.missing()[i])
                .map(|i| t.values()[i])
                .collect();
            if obs.is_empty() {
                return Err(Error::Domain(format!("feature {di} has no observed entries to fit a scaler")));
            }
            let m = obs.iter().sum::<f64>() / obs.len() as f64;
            let s = if obs.len() > 1 {
                (obs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (obs.len() - 1) as f64).sqrt()
            } else {
                0.0
            };
            mean.push(m);
            std.push(if s < STD_GUARD { 1.0 } else { s });
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, d: usize, x: f64) -> f64 {
        (x - self.mean[d]) / self.std[d]
    }

    pub fn invert(&self, d: usize, z: f64) -> f64 {
        z * self.std[d] + self.mean[d]
    }
}

/// Every window of one contiguous partition. Sample `i` observes steps
/// `origins[i] - obs .. origins[i]` and forecasts
/// `origins[i] + horizon .. origins[i] + horizon + forecast`.
#[derive(Clone, Debug)]
pub struct WindowSet {
    pub series: TrafficTensor,
    pub spec: WindowSpec,
    pub origins: Vec<usize>,
    /// Offset of the partition within the full series.
    pub offset: usize,
}

/// A materialized minibatch.
#[derive(Clone, Debug)]
pub struct Batch {
    /// Scaled model input `[B, C, N, obs]`; missing readings are 0 after
    /// scaling, and an optional time-of-day channel comes last.
    pub input: Tensor,
    /// Raw first-feature targets `[B, N, forecast]`.
    pub target: Tensor,
    /// Missing flags aligned with `target`.
    pub missing: Vec<bool>,
    /// Raw last observation of the first feature, `[B, N]`.
    pub last: Vec<f64>,
    /// Timestamp of each forecast step, `[B, forecast]`.
    pub target_times: Vec<i64>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.target.shape()[0]
    }

    pub fn observed(&self) -> usize {
        self.missing.iter().filter(|&&m| !m).count()
    }
}

impl WindowSet {
    pub fn new(series: TrafficTensor, spec: &WindowSpec, offset: usize) -> Result<Self> {
        spec.validate()?;
        let count = spec.count(series.len());
        if count == 0 {
            return Err(Error::Contract(format!(
                "partition of {} steps is too short for one window of {} + {} + {}",
                series.len(),
                spec.obs,
                spec.horizon,
                spec.forecast
            )));
        }
        Ok(Self {
            origins: (spec.obs..spec.obs + count).collect(),
            series,
            spec: spec.clone(),
            offset,
        })
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Input channels produced by [`WindowSet::batch`].
    pub fn channels(&self, time_of_day: bool) -> usize {
        self.series.n_features() + usize::from(time_of_day)
    }

    /// Samples `idx` (positions into `origins`).
    pub fn batch(&self, idx: &[usize], scaler: &Scaler, time_of_day: bool) -> Result<Batch> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.len()) {
            return shape_err(format!("window {bad} out of range for {} windows", self.len()));
        }
        let [d, n, _] = self.series.dims();
        let (obs, fw, gap) = (self.spec.obs, self.spec.forecast, self.spec.horizon);
        let c = self.channels(time_of_day);
        let b = idx.len();
        let mut input = vec![0.0; b * c * n * obs];
        let mut target = vec![0.0; b * n * fw];
        let mut missing = vec![false; b * n * fw];
        let mut last = vec![0.0; b * n];
        let mut target_times = vec![0; b * fw];
        let day = 1440.0;
        for (bi, &i) in idx.iter().enumerate() {
            let o = self.origins[i];
            for di in 0..d {
                for ni in 0..n {
                    for t in 0..obs {
                        let l = o - obs + t;
                        if !self.series.is_missing(di, ni, l) {
                            input[((bi * c + di) * n + ni) * obs + t] = scaler.apply(di, self.series.get(di, ni, l));
                        }
                    }
                }
            }
            if time_of_day {
                for t in 0..obs {
                    let minutes = self.series.timestamps()[o - obs + t];
                    let frac = minutes.rem_euclid(1440) as f64 / day;
                    for ni in 0..n {
                        input[((bi * c + d) * n + ni) * obs + t] = frac;
                    }
                }
            }
            for ni in 0..n {
                last[bi * n + ni] = self.series.get(0, ni, o - 1);
                for s in 0..fw {
                    let l = o + gap + s;
                    let k = (bi * n + ni) * fw + s;
                    target[k] = self.series.get(0, ni, l);
                    missing[k] = self.series.is_missing(0, ni, l);
                }
            }
            for s in 0..fw {
                target_times[bi * fw + s] = self.series.timestamps()[o + gap + s];
            }
        }
        Ok(Batch {
            input: Tensor::new(vec![b, c, n, obs], input)?,
            target: Tensor::new(vec![b, n, fw], target)?,
            missing,
            last,
            target_times,
        })
    }
}

/// Chronological train / validation / test windows.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
}

/// Partition boundaries `[0, b1), [b1, b2), [b2, len)` for `ratios`.
pub fn partition_bounds(len: usize, ratios: [f64; 3]) -> Result<[usize; 2]> {
    if ratios.iter().any(|&r| !(r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be positive and sum to 1")));
    }
    // the slack keeps 0.7 + 0.1 of 40 at 32 rather than 31.999...
    let bound = |r: f64| (r * len as f64 + 1e-9).floor() as usize;
    let b1 = bound(ratios[0]);
    let b2 = bound(ratios[0] + ratios[1]);
    Ok([b1, b2])
}

/// Contiguous in-order partitions, each windowed independently so no sample
/// straddles a boundary.
pub fn split_and_window(t: &TrafficTensor, ratios: [f64; 3], spec: &WindowSpec) -> Result<Splits> {
    let [b1, b2] = partition_bounds(t.len(), ratios)?;
    let part = |start: usize, end: usize| -> Result<WindowSet> {
        if end <= start {
            return Err(Error::Contract(format!("empty partition {start}..{end}")));
        }
        WindowSet::new(t.slice_time(start, end - start)?, spec, start)
    };
    Ok(Splits {
        train: part(0, b1)?,
        val: part(b1, b2)?,
        test: part(b2, t.len())?,
    })
}
