use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

pub const HISTOGRAM_BINS: usize = 50;
pub const LABEL_BINS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Residual statistics of the data points whose label falls in `[lo, hi)`
/// (the last bin also holds `hi`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `None` for an empty bin.
    pub mean_residual: Option<f64>,
    pub mean_prediction: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    fn of(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        Self {
            mean,
            std,
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// `y_i - h_i`.
    pub residuals: Vec<f64>,
    pub histogram: Histogram,
    pub label_bins: Vec<LabelBin>,
    pub labels: Summary,
    pub predictions: Summary,
}

impl ResidualReport {
    /// Largest absolute mean residual over non-empty label bins.
    pub fn max_abs_binned_mean(&self) -> f64 {
        self.label_bins
            .iter()
            .filter_map(|b| b.mean_residual)
            .fold(0.0, |m, r| m.max(r.abs()))
    }
}

fn bin_of(v: f64, lo: f64, width: f64, bins: usize) -> usize {
    if width <= 0.0 {
        return 0;
    }
    (((v - lo) / width) as usize).min(bins - 1)
}

/// Residual histogram over the residual range and mean residual per uniform
/// label bin over the label range.
pub fn residual_analysis(y: &[f64], h: &[f64], bins: usize) -> Result<ResidualReport> {
    residual_analysis_with(y, h, bins, HISTOGRAM_BINS)
}

pub fn residual_analysis_with(y: &[f64], h: &[f64], label_bins: usize, histogram_bins: usize) -> Result<ResidualReport> {
    if y.len() != h.len() {
        return shape_err(format!("{} labels vs {} predictions", y.len(), h.len()));
    }
    if y.is_empty() {
        return shape_err("no data points");
    }
    if label_bins < 2 || histogram_bins < 2 {
        return Err(Error::Contract("need at least two bins".into()));
    }
    let residuals: Vec<f64> = y.iter().zip(h).map(|(a, b)| a - b).collect();

    let r = Summary::of(&residuals);
    let rw = (r.max - r.min) / histogram_bins as f64;
    let mut counts = vec![0usize; histogram_bins];
    for &v in &residuals {
        counts[bin_of(v, r.min, rw, histogram_bins)] += 1;
    }
    let edges = (0..=histogram_bins).map(|k| r.min + rw * k as f64).collect();

    let labels = Summary::of(y);
    let lw = (labels.max - labels.min) / label_bins as f64;
    let mut sums = vec![(0usize, 0.0, 0.0); label_bins];
    for ((&yi, &hi), &ri) in y.iter().zip(h).zip(&residuals) {
        let s = &mut sums[bin_of(yi, labels.min, lw, label_bins)];
        s.0 += 1;
        s.1 += ri;
        s.2 += hi;
    }
    let label_bins = sums
        .iter()
        .enumerate()
        .map(|(k, &(count, rs, hs))| LabelBin {
            lo: labels.min + lw * k as f64,
            hi: labels.min + lw * (k + 1) as f64,
            count,
            mean_residual: (count > 0).then(|| rs / count as f64),
            mean_prediction: (count > 0).then(|| hs / count as f64),
        })
        .collect();

    Ok(ResidualReport {
        residuals,
        histogram: Histogram { edges, counts },
        label_bins,
        labels,
        predictions: Summary::of(h),
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn perfect_predictions() {
        let y = [0.1, 0.5, 0.9, 2.0];
        let rep = residual_analysis(&y, &y, 2).unwrap();
        assert!(rep.residuals.iter().all(|&r| r == 0.0));
        assert!(rep.label_bins.iter().all(|b| b.mean_residual.unwrap() == 0.0));
    }

    #[test]
    fn constant_shift() {
        let y = [0.3, 1.3, 2.3, 3.3, 4.3];
        let h: Vec<f64> = y.iter().map(|v| v - 0.3).collect();
        let rep = residual_analysis(&y, &h, 4).unwrap();
        for b in &rep.label_bins {
            if let Some(m) = b.mean_residual {
                assert!((m - 0.3).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hand_binning() {
        let rep = residual_analysis(&[0.0, 1.0, 2.0, 3.0], &[1.0, 1.0, 2.0, 2.0], 2).unwrap();
        let means: Vec<f64> = rep.label_bins.iter().map(|b| b.mean_residual.unwrap()).collect();
        assert_eq!(means, vec![-0.5, 0.5]);
        assert_eq!(rep.max_abs_binned_mean(), 0.5);
    }

    #[test]
    fn errors_and_empty_bins() {
        assert!(residual_analysis(&[1.0], &[1.0, 2.0], 2).is_err());
        assert!(residual_analysis(&[1.0, 2.0], &[1.0, 2.0], 1).is_err());
        let rep = residual_analysis(&[0.0, 10.0], &[0.0, 10.0], 5).unwrap();
        assert_eq!(rep.label_bins[2].mean_residual, None);
    }

    proptest! {
        #[test]
        fn histogram_counts_cover_everything(pairs in prop::collection::vec((0.0..3.0f64, -1.0..4.0f64), 1..200)) {
            let y: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let h: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let rep = residual_analysis(&y, &h, LABEL_BINS).unwrap();
            prop_assert_eq!(rep.histogram.counts.iter().sum::<usize>(), y.len());
            prop_assert_eq!(rep.label_bins.iter().map(|b| b.count).sum::<usize>(), y.len());
            prop_assert_eq!(rep.histogram.edges.len(), HISTOGRAM_BINS + 1);
        }
    }
}
