use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensorgrad::Tensor;

/// Targets with magnitude below this are left out of MAPE.
pub const MAPE_FLOOR: f64 = 1e-6;

/// Errors at one forecast step. `mape` is in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    /// 1-based forecast step.
    pub step: usize,
    pub rmse: f64,
    pub mae: f64,
    pub mape: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficReport {
    pub horizons: Vec<HorizonMetrics>,
    /// MAE over every forecast step.
    pub mean_mae: f64,
}

impl TrafficReport {
    pub fn at(&self, step: usize) -> Option<&HorizonMetrics> {
        self.horizons.iter().find(|h| h.step == step)
    }
}

/// Running per-step sums over `[B, N, F]` blocks.
#[derive(Clone, Debug)]
pub struct MetricAccumulator {
    forecast: usize,
    abs: Vec<f64>,
    sq: Vec<f64>,
    ape: Vec<f64>,
    count: Vec<usize>,
    count_ape: Vec<usize>,
}

impl MetricAccumulator {
    pub fn new(forecast: usize) -> Self {
        Self {
            forecast,
            abs: vec![0.0; forecast],
            sq: vec![0.0; forecast],
            ape: vec![0.0; forecast],
            count: vec![0; forecast],
            count_ape: vec![0; forecast],
        }
    }

    /// `pred`, `target` and `missing` share the layout `[.., F]`.
    pub fn add(&mut self, pred: &[f64], target: &[f64], missing: &[bool]) -> Result<()> {
        if pred.len() != target.len() || missing.len() != target.len() || target.len() % self.forecast != 0 {
            return shape_err(format!(
                "metric inputs of lengths {}, {}, {} for {} forecast steps",
                pred.len(),
                target.len(),
                missing.len(),
                self.forecast
            ));
        }
        for (k, ((&p, &t), &m)) in pred.iter().zip(target).zip(missing).enumerate() {
            if m {
                continue;
            }
            let s = k % self.forecast;
            let e = p - t;
            self.abs[s] += e.abs();
            self.sq[s] += e * e;
            self.count[s] += 1;
            if t.abs() >= MAPE_FLOOR {
                self.ape[s] += (e / t).abs();
                self.count_ape[s] += 1;
            }
        }
        Ok(())
    }

    pub fn finish(&self, probes: &[usize]) -> Result<TrafficReport> {
        let mut horizons = Vec::with_capacity(probes.len());
        for &p in probes {
            if p == 0 || p > self.forecast {
                return Err(Error::Contract(format!("probe {p} outside 1..={}", self.forecast)));
            }
            let s = p - 1;
            if self.count[s] == 0 {
                return Err(Error::Domain(format!("no observed targets at forecast step {p}")));
            }
            let n = self.count[s] as f64;
            if self.count_ape[s] == 0 {
                return Err(Error::Domain(format!("no nonzero targets for MAPE at forecast step {p}")));
            }
            let mape = 100.0 * self.ape[s] / self.count_ape[s] as f64;
            horizons.push(HorizonMetrics {
                step: p,
                rmse: (self.sq[s] / n).sqrt(),
                mae: self.abs[s] / n,
                mape,
            });
        }
        let total: usize = self.count.iter().sum();
        if total == 0 {
            return Err(Error::Domain("no observed targets".into()));
        }
        Ok(TrafficReport {
            horizons,
            mean_mae: self.abs.iter().sum::<f64>() / total as f64,
        })
    }
}

/// RMSE, MAE and MAPE at each probe step for `[S, N, F]` predictions,
/// ignoring entries flagged in `missing`.
pub fn traffic_metrics(pred: &Tensor, target: &Tensor, missing: &[bool], probes: &[usize]) -> Result<TrafficReport> {
    if pred.shape() != target.shape() || target.rank() != 3 {
        return shape_err(format!("prediction {:?} vs target {:?}", pred.shape(), target.shape()));
    }
    let mut acc = MetricAccumulator::new(target.shape()[2]);
    acc.add(pred.data(), target.data(), missing)?;
    acc.finish(probes)
}
