//! Diagnostics and quality metrics for finished runs.

mod metrics;
mod oracle;
mod regret;
mod surrogate;
mod trace;

pub use metrics::{ls_classify, rmse, LsClassifier, Rmse};
pub use oracle::{batch_oracle, OracleConfig, OracleResult};
pub use regret::{cumulative_costs, data_costs, empirical_cost, regret_bound, regret_from_trace, RegretReport};
pub use surrogate::surrogate_cost;
pub use trace::{RunTrace, TraceRecord};
