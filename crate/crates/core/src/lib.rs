//! Discrete-event simulator for dynamic VM-to-server allocation in a data
//! center: workload series service, allocation controllers, simulation
//! engine, factorial batch runner and result analysis.

pub mod analysis;
pub mod config;
pub mod controllers;
pub mod engine;
pub mod model;
pub mod runner;
pub mod schedule;
pub mod times;
pub mod workload;

pub use config::{ConfigError, MigrationModel, ServerPool, SimulationConfig};
pub use analysis::{aggregate, render_report, AggregateRow, ReportFormat};
pub use engine::{run, EngineError, RunStatus, Simulation, SimulationResult};
pub use model::{Allocation, DemandEstimator, DomainSize, ServerSpec, TimeSeries, VmSpec};
pub use runner::{build_matrix, run_batch, BatchSummary, Combination, FactorLists};
pub use schedule::{Schedule, ScheduleEntry};
pub use workload::{MemoryWorkloads, WorkloadLocation, WorkloadSource};
