//! Sensor speed series: loading, chronological splits and windowing,
//! scaling, training-free baselines, masked per-horizon metrics and the
//! backbone training loop.

mod baselines;
mod data;
mod metrics;
pub mod synth;
mod train;
mod window;

pub use baselines::{chunks, copy_last_steps, evaluate_forecaster, HistoricalAverage};
pub use data::{
    format_timestamp, load_dataset, load_values_csv, parse_timestamp, select_adjacency, slots_per_week, week_slot,
    TrafficTensor,
};
pub use metrics::{traffic_metrics, HorizonMetrics, MetricAccumulator, TrafficReport, MAPE_FLOOR};
pub use train::{
    check_batch_contracts, evaluate_model, forecast_on, masked_mae, overfit_batch, predict_batch, train_step,
    train_traffic, train_traffic_with, EpochRecord, OverfitOutcome, Prepared, StopReason, TrafficConfig, TrafficData,
    TrafficOutcome,
};
pub use window::{partition_bounds, split_and_window, Batch, Scaler, Splits, WindowSet, WindowSpec, STD_GUARD};
