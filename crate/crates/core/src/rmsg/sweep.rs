use serde::{Deserialize, Serialize};

use super::model::{RmsgConfig, RmsgModel};
use super::train::{run_seeds, RmsgRunReport};
use crate::error::{Error, Result};
use crate::layers::Flavor;

/// One point of the size grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub size: usize,
    pub param_count: usize,
    pub report: RmsgRunReport,
}

/// `base` with every hidden width set to `size` (latent width `size / 2`,
/// at least 1).
pub fn sized_config(base: &RmsgConfig, flavor: Flavor, size: usize) -> RmsgConfig {
    RmsgConfig {
        flavor,
        hidden: size,
        width: (size / 2).max(1),
        message_hidden: size,
        ..base.clone()
    }
}

/// One seeded training run per `(size, seed)`.
pub fn size_sweep(base: &RmsgConfig, flavor: Flavor, size_grid: &[usize], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    if size_grid.is_empty() || seeds.is_empty() {
        return Err(Error::Config("size grid and seed list must be non-empty".into()));
    }
    size_grid
        .iter()
        .map(|&size| {
            let cfg = sized_config(base, flavor, size);
            let param_count = RmsgModel::new(&cfg, 0)?.param_count();
            let report = run_seeds(&cfg, seeds, |_, _| {})?;
            Ok(SweepRow {
                size,
                param_count,
                report,
            })
        })
        .collect()
}

/// Best mean R² across the sweep, with the parameter count it was reached at.
pub fn best_r2(rows: &[SweepRow]) -> Option<(f64, usize)> {
    rows.iter()
        .filter_map(|r| r.report.mean.map(|m| (m.r2, r.param_count)))
        .max_by(|a, b| a.0.total_cmp(&b.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sized_counts_grow_with_size() {
        let base = RmsgConfig::default();
        for flavor in [Flavor::Gcn, Flavor::Gat, Flavor::Mpnn] {
            let counts: Vec<usize> = [2, 4, 8, 16]
                .iter()
                .map(|&s| RmsgModel::new(&sized_config(&base, flavor, s), 0).unwrap().param_count())
                .collect();
            assert!(counts.windows(2).all(|w| w[0] < w[1]), "{flavor}: {counts:?}");
        }
    }

    #[test]
    fn tiny_sweep_runs() {
        let base = RmsgConfig {
            n_nodes: 10,
            edge_prob: 0.3,
            train_samples: 16,
            val_samples: 4,
            test_samples: 4,
            ..RmsgConfig::default()
        };
        let rows = size_sweep(&base, Flavor::Mpnn, &[2, 4], &[0]).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(best_r2(&rows).is_some());
        assert!(size_sweep(&base, Flavor::Mpnn, &[], &[0]).is_err());
    }
}
