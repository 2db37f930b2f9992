//! Load generation, reports and reconciliation for the rollup sequencer.

pub mod compare;
pub mod reconcile;
pub mod report;
pub mod workload;

pub use compare::{compare, Comparison};
pub use reconcile::{reconcile, Reconciliation};
pub use report::{BenchReport, Sample, SettlementRow};
pub use workload::{run_workload, Mode, WorkloadSpec};
