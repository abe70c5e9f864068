//! Adam, consensus-based optimization and their combinations on ensembles of
//! flat parameter vectors.

mod adam;
mod cbo;
mod hybrid;
mod multitask;
mod schedule;

pub use adam::{fan_in_uniform, AdamConfig, AdamState};
pub use cbo::{
    cbo_iteration, cbo_step, consensus_point, consensus_weights, CboConfig, Ensemble,
};
pub use hybrid::{hybrid_iteration, hybrid_step, HybridConfig};
pub use multitask::{multitask_iteration, multitask_step, task_risk_matrix, TaskAssignment};
pub use schedule::{apply_schedules, ScheduleConfig, ScheduleUnit};
