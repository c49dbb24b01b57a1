//! Loop-detector-like speed series on a synthetic road network, for runs
//! without the real dataset.
//!
//! Sensors sit along a few one-way corridors. Each corridor carries a
//! congestion level that follows weekday rush hours and spreads upstream
//! one sensor per step; speed drops with congestion. Outages zero out short
//! stretches of readings.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::data::{parse_timestamp, TrafficTensor};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensorgrad::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_nodes: usize,
    pub days: usize,
    pub corridors: usize,
    /// Target fraction of zeroed readings.
    pub outage_rate: f64,
    /// Speed noise standard deviation, mph.
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_nodes: 24,
            days: 14,
            corridors: 3,
            outage_rate: 0.05,
            noise: 1.5,
        }
    }
}

pub struct SyntheticTraffic {
    pub series: TrafficTensor,
    /// Dense weighted adjacency, `a[i][j] > 0` for a road from `i` to `j`.
    pub adjacency: Tensor,
}

const STEP: i64 = 5;

/// Weekday rush-hour demand in `[0, 1]` at minute-of-week `m` (Monday 0).
fn demand(m: i64, offset: f64) -> f64 {
    let day = m / 1440;
    let hour = (m % 1440) as f64 / 60.0 + offset;
    let bump = |centre: f64, width: f64| (-((hour - centre) / width).powi(2)).exp();
    let weekday = day < 5;
    let scale = if weekday { 1.0 } else { 0.35 };
    scale * (0.9 * bump(8.0, 1.0) + 0.8 * bump(17.5, 1.3)).min(1.0)
}

pub fn generate(config: &SynthConfig, seed: u64) -> Result<SyntheticTraffic> {
    let c = config;
    if c.n_nodes < 2 || c.days == 0 || c.corridors == 0 || c.corridors > c.n_nodes {
        return Err(Error::Config("synthetic traffic needs >= 2 nodes, >= 1 day and 1..=n corridors".into()));
    }
    if !(0.0..0.5).contains(&c.outage_rate) || c.noise < 0.0 {
        return Err(Error::Config("outage rate must lie in [0, 0.5) and noise must be non-negative".into()));
    }
    let mut r = rng::stream(rng::derive(seed, 0x7472_6166), 0);
    let n = c.n_nodes;
    let l = c.days * 1440 / STEP as usize;

    // corridor k holds nodes k, k + corridors, ...; traffic flows toward higher positions
    let corridor_of: Vec<usize> = (0..n).map(|i| i % c.corridors).collect();
    let mut a = vec![0.0; n * n];
    let mut downstream: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        let j = i + c.corridors;
        if j < n {
            a[i * n + j] = r.gen_range(0.5..1.0);
            downstream[i] = Some(j);
        }
    }
    // a few ramps between corridors
    for _ in 0..c.corridors.saturating_sub(1) * 2 {
        let i = r.gen_range(0..n);
        let j = r.gen_range(0..n);
        if corridor_of[i] != corridor_of[j] {
            a[i * n + j] = r.gen_range(0.1..0.4);
        }
    }

    let free: Vec<f64> = (0..n).map(|_| r.gen_range(58.0..70.0)).collect();
    let severity: Vec<f64> = (0..c.corridors).map(|_| r.gen_range(0.5..0.8)).collect();
    let shift: Vec<f64> = (0..c.corridors).map(|_| r.gen_range(-0.5..0.5)).collect();
    let start = parse_timestamp("2012-03-01 00:00:00").expect("fixed date");
    let monday_offset = 3 * 1440; // 2012-03-01 was a Thursday
    let noise = Normal::new(0.0, c.noise.max(1e-12)).expect("positive std");

    let mut cong = vec![0.0; n];
    let mut speed = vec![0.0; n * l];
    // daily incident multiplier per corridor
    let mut incident = vec![1.0; c.corridors];
    for t in 0..l {
        let m = (monday_offset + t as i64 * STEP) % (7 * 1440);
        if m % 1440 == 0 {
            for v in incident.iter_mut() {
                *v = r.gen_range(0.7..1.3);
            }
        }
        let prev = cong.clone();
        for i in 0..n {
            let k = corridor_of[i];
            let target = severity[k] * incident[k] * demand(m, shift[k]);
            let spill = downstream[i].map_or(0.0, |j| prev[j]);
            let level = 0.7 * prev[i] + 0.15 * target + 0.15 * spill.max(target) + 0.02 * r.gen_range(-1.0..1.0);
            cong[i] = level.clamp(0.0, 1.0);
            let v = free[i] * (1.0 - 0.75 * cong[i]) + noise.sample(&mut r);
            speed[i * l + t] = v.max(3.0);
        }
    }

    // outages: runs of 6 to 36 steps until the target rate is met
    let want = (c.outage_rate * (n * l) as f64) as usize;
    let mut dropped = 0;
    while dropped < want {
        let i = r.gen_range(0..n);
        let t0 = r.gen_range(0..l);
        let len = r.gen_range(6..=36).min(l - t0);
        for v in &mut speed[i * l + t0..i * l + t0 + len] {
            if *v != 0.0 {
                *v = 0.0;
                dropped += 1;
            }
        }
    }

    let timestamps = (0..l as i64).map(|i| start + i * STEP).collect();
    let ids = (0..n).map(|i| format!("s{i:03}")).collect();
    Ok(SyntheticTraffic {
        series: TrafficTensor::new([1, n, l], speed, timestamps, ids)?,
        adjacency: Tensor::new(vec![n, n], a)?,
    })
}
