use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    pub r2: f64,
}

/// RMSE, MAE and the coefficient of determination of predictions `h`
/// against labels `y`.
pub fn eval_metrics(y: &[f64], h: &[f64]) -> Result<Metrics> {
    if y.len() != h.len() {
        return Err(Error::Shape(format!("{} labels vs {} predictions", y.len(), h.len())));
    }
    if y.len() < 2 {
        return Err(Error::Contract("need at least two data points".into()));
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let (mut sse, mut sae, mut sst) = (0.0, 0.0, 0.0);
    for (&yi, &hi) in y.iter().zip(h) {
        let e = yi - hi;
        sse += e * e;
        sae += e.abs();
        sst += (yi - mean) * (yi - mean);
    }
    if sst == 0.0 {
        return Err(Error::Domain("labels have zero variance; R² undefined".into()));
    }
    Ok(Metrics {
        rmse: (sse / n).sqrt(),
        mae: sae / n,
        r2: 1.0 - sse / sst,
    })
}

/// Mean and sample standard deviation of each metric.
pub fn aggregate(runs: &[Metrics]) -> Option<(Metrics, Metrics)> {
    if runs.is_empty() {
        return None;
    }
    let stat = |f: fn(&Metrics) -> f64| {
        let n = runs.len() as f64;
        let mean = runs.iter().map(f).sum::<f64>() / n;
        let var = if runs.len() > 1 {
            runs.iter().map(|m| (f(m) - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        (mean, var.sqrt())
    };
    let (rm, rs) = stat(|m| m.rmse);
    let (am, as_) = stat(|m| m.mae);
    let (qm, qs) = stat(|m| m.r2);
    Some((
        Metrics {
            rmse: rm,
            mae: am,
            r2: qm,
        },
        Metrics {
            rmse: rs,
            mae: as_,
            r2: qs,
        },
    ))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn perfect_predictor() {
        let y = [0.3, 1.0, 2.5];
        let m = eval_metrics(&y, &y).unwrap();
        assert_eq!((m.rmse, m.mae, m.r2), (0.0, 0.0, 1.0));
    }

    #[test]
    fn mean_predictor_has_zero_r2() {
        let y = [1.0, 2.0, 4.0, 9.0];
        let h = [4.0; 4];
        assert_eq!(eval_metrics(&y, &h).unwrap().r2, 0.0);
    }

    #[test]
    fn hand_arithmetic_negative_r2() {
        let m = eval_metrics(&[0.0, 1.0], &[0.0, 0.0]).unwrap();
        assert!((m.rmse - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((m.rmse - 0.70711).abs() < 1e-5);
        assert_eq!(m.mae, 0.5);
        assert_eq!(m.r2, -1.0);
    }

    #[test]
    fn error_paths() {
        assert!(matches!(eval_metrics(&[1.0, 2.0], &[1.0]), Err(Error::Shape(_))));
        assert!(matches!(eval_metrics(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::Domain(_))));
        assert!(eval_metrics(&[1.0], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn metric_sanity(pairs in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 2..50)) {
            let y: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let h: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            prop_assume!(y.iter().any(|&v| v != y[0]));
            let m = eval_metrics(&y, &h).unwrap();
            let mean_err = y.iter().zip(&h).map(|(a, b)| a - b).sum::<f64>() / y.len() as f64;
            prop_assert!(m.rmse >= mean_err.abs() - 1e-12);
            prop_assert!(m.rmse >= m.mae - 1e-12);
            prop_assert!(m.r2 <= 1.0);
        }
    }
}
