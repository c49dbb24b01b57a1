//! RMSG: node labels are the root mean square of the products of a node's
//! feature with each neighbor's feature, on a fresh random graph per sample.

mod data;
mod metrics;
mod model;
pub mod report;
mod residuals;
mod sweep;
mod train;

pub use data::{make_rmsg_dataset, rmsg_labels, RmsgSample, RmsgStream, Split, DEFAULT_EDGE_PROB, DEFAULT_NODES, FEATURE_BOUND};
pub use metrics::{aggregate, eval_metrics, Metrics};
pub use model::{average_model, AverageModel, GraphBatch, RmsgConfig, RmsgModel};
pub use residuals::{residual_analysis, residual_analysis_with, Histogram, LabelBin, ResidualReport, Summary, HISTOGRAM_BINS, LABEL_BINS};
pub use sweep::{best_r2, size_sweep, sized_config, SweepRow};
pub use train::{
    collect_predictions, evaluate, evaluate_average, fit_average, run_seeds, run_stream, scheduled_lr, train_rmsg,
    train_rmsg_with, RmsgRunReport, RunRow, TrainOutcome, ValidationPoint,
};
