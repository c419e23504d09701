//! Training harness, metrics, coefficient search, the ablation ladder, and
//! end-to-end experiment orchestration.

pub mod experiment;
pub mod metrics;
pub mod optim;
pub mod schedule;

pub use metrics::{config_hash, evaluate, Metrics, MetricsReport, StratumMetrics};
pub use optim::{clip_grad_norm, Adam, AdamConfig};
pub use schedule::{
    run_schedule, EpochRecord, Objective, PlateauEvent, TrainLog, TrainSchedule, Validation,
};
