use serde::{Deserialize, Serialize};

use crate::model::DemandEstimator;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsAccumulator {
    pub loop_count: u64,
    /// Sum over loops of servers hosting at least one VM or migration.
    pub active_server_loop_sum: u64,
    pub util_sample_sum: f64,
    pub util_sample_count: u64,
    pub overload_samples: u64,
    pub active_samples: u64,
    pub migrations_total: u64,
}

impl MetricsAccumulator {
    pub fn record_server(&mut self, util_pct: f64, threshold_pct: f64) {
        self.util_sample_sum += util_pct;
        self.util_sample_count += 1;
        self.active_samples += 1;
        if util_pct > threshold_pct {
            self.overload_samples += 1;
        }
    }

    pub fn finish_loop(&mut self, active_servers: u64) {
        self.loop_count += 1;
        self.active_server_loop_sum += active_servers;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// One row of the results CSV. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub sim_id: String,
    pub initial_placement: String,
    pub reallocation: String,
    pub placement: String,
    pub estimator: DemandEstimator,
    pub seed: u64,
    pub schedule_id: String,
    pub duration_s: u64,
    pub avg_active_servers: f64,
    pub avg_cpu_util_pct: f64,
    pub sla_violation_rate: f64,
    pub migration_count: u64,
    pub vm_count: u64,
    pub status: RunStatus,
    pub wall_ms: u64,
    /// Failure reason; not part of the CSV row.
    #[serde(skip)]
    pub message: Option<String>,
}

pub const CSV_HEADER: &str = "sim_id,initial_placement,reallocation,placement,estimator,seed,schedule_id,duration_s,avg_active_servers,avg_cpu_util_pct,sla_violation_rate,migration_count,vm_count,status,wall_ms";

/// Identifying columns of a result row.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultMeta {
    pub sim_id: String,
    pub initial_placement: String,
    pub reallocation: String,
    pub placement: String,
    pub estimator: DemandEstimator,
    pub seed: u64,
    pub schedule_id: String,
    pub duration_s: u64,
}

fn ratio(num: f64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num / den as f64
    }
}

pub fn finalize_metrics(acc: &MetricsAccumulator, meta: ResultMeta, vm_count: u64, wall_ms: u64) -> SimulationResult {
    SimulationResult {
        sim_id: meta.sim_id,
        initial_placement: meta.initial_placement,
        reallocation: meta.reallocation,
        placement: meta.placement,
        estimator: meta.estimator,
        seed: meta.seed,
        schedule_id: meta.schedule_id,
        duration_s: meta.duration_s,
        avg_active_servers: ratio(acc.active_server_loop_sum as f64, acc.loop_count),
        avg_cpu_util_pct: ratio(acc.util_sample_sum, acc.util_sample_count),
        sla_violation_rate: ratio(acc.overload_samples as f64, acc.active_samples),
        migration_count: acc.migrations_total,
        vm_count,
        status: RunStatus::Ok,
        wall_ms,
        message: None,
    }
}

impl SimulationResult {
    pub fn failed(meta: ResultMeta, message: impl Into<String>, wall_ms: u64) -> Self {
        let mut r = finalize_metrics(&MetricsAccumulator::default(), meta, 0, wall_ms);
        r.status = RunStatus::Failed;
        r.message = Some(message.into());
        r
    }

    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }

    /// The CSV data line for this result, newline-terminated, no header.
    pub fn csv_row(&self) -> String {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.serialize(self).expect("result rows always serialize");
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv output is utf-8")
    }

    /// The one-line stdout summary.
    pub fn summary_line(&self) -> String {
        format!(
            "RESULT avg_active_servers={} avg_cpu_util_pct={} sla_violation_rate={} migrations={}",
            self.avg_active_servers, self.avg_cpu_util_pct, self.sla_violation_rate, self.migration_count
        )
    }
}
