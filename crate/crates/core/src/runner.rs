//! Factorial batch runner: builds the factor-level matrix, runs every
//! combination in an isolated worker and collects CSV and ERR outputs.

use std::collections::HashSet;
use std::fs;
use std::io::{self, Write};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;
use std::time::Instant;

use thiserror::Error;

use crate::config::SimulationConfig;
use crate::engine::{self, meta_of, SimulationResult};
use crate::model::DemandEstimator;
use crate::schedule::Schedule;
use crate::workload::{WorkloadError, WorkloadSource};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("factor `{0}` has no levels")]
    EmptyFactor(&'static str),
    #[error("factor `{factor}` lists `{value}` twice")]
    DuplicateLevel { factor: &'static str, value: String },
    #[error("parallelism must be at least 1")]
    ZeroParallelism,
    #[error("cannot rotate {path}: {source}")]
    RotationFailed { path: PathBuf, source: io::Error },
    #[error("cannot write {path}: {source}")]
    OutputUnwritable { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorLists {
    pub initial: Vec<String>,
    pub reallocation: Vec<String>,
    pub placement: Vec<String>,
    pub estimators: Vec<DemandEstimator>,
    pub seeds: Vec<u64>,
}

fn check_factor<T: ToString>(factor: &'static str, levels: &[T]) -> Result<(), RunnerError> {
    if levels.is_empty() {
        return Err(RunnerError::EmptyFactor(factor));
    }
    let mut seen = HashSet::new();
    for l in levels {
        let value = l.to_string();
        if !seen.insert(value.clone()) {
            return Err(RunnerError::DuplicateLevel { factor, value });
        }
    }
    Ok(())
}

impl FactorLists {
    pub fn validate(&self) -> Result<(), RunnerError> {
        check_factor("initial", &self.initial)?;
        check_factor("reallocation", &self.reallocation)?;
        check_factor("placement", &self.placement)?;
        check_factor("estimators", &self.estimators)?;
        check_factor("seeds", &self.seeds)
    }
}

/// One cell of the factor-level matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Combination {
    /// Zero-padded lexicographic rank.
    pub sim_id: String,
    pub initial: String,
    pub reallocation: String,
    pub placement: String,
    pub estimator: DemandEstimator,
    pub seed: u64,
}

impl Combination {
    pub fn apply(&self, base: &SimulationConfig) -> SimulationConfig {
        let mut c = base.clone();
        c.initial_placement = self.initial.clone();
        c.reallocation = self.reallocation.clone();
        c.placement = self.placement.clone();
        c.estimator = self.estimator;
        c.seed = self.seed;
        c
    }
}

/// Full cross product ordered by list positions.
pub fn build_matrix(lists: &FactorLists) -> Result<Vec<Combination>, RunnerError> {
    lists.validate()?;
    let total = lists.initial.len()
        * lists.reallocation.len()
        * lists.placement.len()
        * lists.estimators.len()
        * lists.seeds.len();
    let width = (total - 1).to_string().len();
    let mut out = Vec::with_capacity(total);
    for i in &lists.initial {
        for r in &lists.reallocation {
            for p in &lists.placement {
                for e in &lists.estimators {
                    for s in &lists.seeds {
                        out.push(Combination {
                            sim_id: format!("{:0width$}", out.len()),
                            initial: i.clone(),
                            reallocation: r.clone(),
                            placement: p.clone(),
                            estimator: *e,
                            seed: *s,
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Moves `path` to `path.bak`, replacing an older backup.
pub fn rotate_outputs(path: &Path) -> Result<(), RunnerError> {
    if !path.exists() {
        return Ok(());
    }
    let mut bak = path.as_os_str().to_owned();
    bak.push(".bak");
    fs::rename(path, PathBuf::from(bak)).map_err(|source| RunnerError::RotationFailed {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchSummary {
    pub total: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub csv_path: PathBuf,
    pub err_path: PathBuf,
    pub wall_ms: u64,
}

impl BatchSummary {
    /// 0 all succeeded, 4 partial failure, 3 everything failed.
    pub fn exit_code(&self) -> i32 {
        match (self.succeeded, self.failed) {
            (_, 0) => 0,
            (0, _) => 3,
            _ => 4,
        }
    }
}

/// Opens a fresh workload source; called once per worker.
pub type WorkloadFactory<'a> = dyn Fn() -> Result<Box<dyn WorkloadSource + Send>, WorkloadError> + Sync + 'a;

fn run_one(combo: &Combination, base: &SimulationConfig, schedule: &Schedule, source: &mut Result<Box<dyn WorkloadSource + Send>, String>) -> SimulationResult {
    let config = combo.apply(base);
    let started = Instant::now();
    let mut meta = meta_of(&config, &schedule.id);
    meta.sim_id = combo.sim_id.clone();
    let workloads = match source {
        Ok(w) => w,
        Err(msg) => return SimulationResult::failed(meta, msg.clone(), 0),
    };
    let outcome = panic::catch_unwind(AssertUnwindSafe(|| engine::run(&config, schedule, workloads.as_mut())));
    match outcome {
        Ok(mut r) => {
            r.sim_id = combo.sim_id.clone();
            r
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "worker panicked".into());
            SimulationResult::failed(meta, format!("panic: {msg}"), started.elapsed().as_millis() as u64)
        }
    }
}

/// Runs every job on a queue drained by `parallelism` workers; returns
/// results in matrix order.
pub fn execute(
    matrix: &[Combination],
    base: &SimulationConfig,
    schedule: &Schedule,
    workloads: &WorkloadFactory<'_>,
    parallelism: usize,
) -> Result<Vec<SimulationResult>, RunnerError> {
    if parallelism == 0 {
        return Err(RunnerError::ZeroParallelism);
    }
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, SimulationResult)>();
    thread::scope(|scope| {
        for _ in 0..parallelism.min(matrix.len().max(1)) {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || {
                let mut source = None;
                loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(combo) = matrix.get(i) else { break };
                    let source = source.get_or_insert_with(|| workloads().map_err(|e| e.to_string()));
                    let result = run_one(combo, base, schedule, source);
                    if tx.send((i, result)).is_err() {
                        break;
                    }
                }
            });
        }
    });
    drop(tx);
    let mut results: Vec<(usize, SimulationResult)> = rx.into_iter().collect();
    results.sort_by_key(|(i, _)| *i);
    Ok(results.into_iter().map(|(_, r)| r).collect())
}

/// One tab-separated ERR line.
pub fn err_line(r: &SimulationResult) -> String {
    let message = r.message.as_deref().unwrap_or("failed").replace(['\t', '\n', '\r'], " ");
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}",
        r.sim_id, r.initial_placement, r.reallocation, r.placement, r.estimator, r.seed, message
    )
}

fn unwritable(path: &Path) -> impl FnOnce(io::Error) -> RunnerError + '_ {
    move |source| RunnerError::OutputUnwritable {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes successes to `csv_path` (header always present) and failures to
/// `err_path` (only created when something failed). Existing files are
/// rotated to `.bak` first.
pub fn write_outputs(results: &[SimulationResult], csv_path: &Path, err_path: &Path) -> Result<(usize, usize), RunnerError> {
    let mut ok: Vec<&SimulationResult> = results.iter().filter(|r| r.is_ok()).collect();
    let mut failed: Vec<&SimulationResult> = results.iter().filter(|r| !r.is_ok()).collect();
    ok.sort_by(|a, b| a.sim_id.cmp(&b.sim_id));
    failed.sort_by(|a, b| a.sim_id.cmp(&b.sim_id));

    rotate_outputs(csv_path)?;
    rotate_outputs(err_path)?;

    let mut text = String::from(engine::CSV_HEADER);
    text.push('\n');
    for r in &ok {
        text.push_str(&r.csv_row());
    }
    fs::write(csv_path, text).map_err(unwritable(csv_path))?;

    if !failed.is_empty() {
        let mut f = fs::File::create(err_path).map_err(unwritable(err_path))?;
        for r in &failed {
            writeln!(f, "{}", err_line(r)).map_err(unwritable(err_path))?;
        }
    }
    Ok((ok.len(), failed.len()))
}

pub fn run_batch(
    matrix: &[Combination],
    base: &SimulationConfig,
    schedule: &Schedule,
    workloads: &WorkloadFactory<'_>,
    parallelism: usize,
    csv_path: &Path,
    err_path: &Path,
) -> Result<BatchSummary, RunnerError> {
    let started = Instant::now();
    let results = execute(matrix, base, schedule, workloads, parallelism)?;
    let (succeeded, failed) = write_outputs(&results, csv_path, err_path)?;
    log::info!("batch: {succeeded} ok, {failed} failed of {}", matrix.len());
    Ok(BatchSummary {
        total: matrix.len(),
        succeeded,
        failed,
        csv_path: csv_path.to_path_buf(),
        err_path: err_path.to_path_buf(),
        wall_ms: started.elapsed().as_millis() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ServerPool;
    use crate::model::{DomainSize, TimeSeries};
    use crate::schedule::ScheduleEntry;
    use crate::workload::MemoryWorkloads;
    use proptest::prelude::*;

    fn lists(i: &[&str], r: &[&str], p: &[&str]) -> FactorLists {
        FactorLists {
            initial: i.iter().map(|s| s.to_string()).collect(),
            reallocation: r.iter().map(|s| s.to_string()).collect(),
            placement: p.iter().map(|s| s.to_string()).collect(),
            estimators: vec![DemandEstimator::Max],
            seeds: vec![1],
        }
    }

    #[test]
    fn matrix_size_and_order() {
        let m = build_matrix(&lists(&["firstfit", "bestfit", "ffd"], &["none", "ffd-repack"], &["none", "firstfit-online"])).unwrap();
        assert_eq!(m.len(), 12);
        assert_eq!(m[0].sim_id, "00");
        assert_eq!(m[11].sim_id, "11");
        assert_eq!((m[1].initial.as_str(), m[1].reallocation.as_str(), m[1].placement.as_str()), ("firstfit", "none", "firstfit-online"));
        assert_eq!(m[4].initial, "bestfit");
        assert_eq!(build_matrix(&lists(&["ffd"], &["none"], &["none"])).unwrap().len(), 1);
    }

    #[test]
    fn empty_and_duplicate_factors() {
        assert!(matches!(build_matrix(&lists(&[], &["none"], &["none"])), Err(RunnerError::EmptyFactor("initial"))));
        assert!(matches!(
            build_matrix(&lists(&["ffd", "ffd"], &["none"], &["none"])),
            Err(RunnerError::DuplicateLevel { factor: "initial", .. })
        ));
    }

    proptest! {
        #[test]
        fn matrix_is_product(a in 1usize..4, b in 1usize..4, c in 1usize..4, e in 1usize..4, s in 1usize..4) {
            let names = |prefix: &str, n: usize| (0..n).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>();
            let l = FactorLists {
                initial: names("i", a),
                reallocation: names("r", b),
                placement: names("p", c),
                estimators: DemandEstimator::ALL[..e].to_vec(),
                seeds: (0..s as u64).collect(),
            };
            let m = build_matrix(&l).unwrap();
            prop_assert_eq!(m.len(), a * b * c * e * s);
            let ids: HashSet<&str> = m.iter().map(|c| c.sim_id.as_str()).collect();
            prop_assert_eq!(ids.len(), m.len());
            prop_assert!(m.windows(2).all(|w| w[0].sim_id < w[1].sim_id));
        }
    }

    #[test]
    fn rotation() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("results.csv");
        let bak = dir.path().join("results.csv.bak");
        rotate_outputs(&csv).unwrap();
        assert!(!csv.exists() && !bak.exists());
        fs::write(&csv, "one").unwrap();
        rotate_outputs(&csv).unwrap();
        assert!(!csv.exists());
        assert_eq!(fs::read_to_string(&bak).unwrap(), "one");
        fs::write(&csv, "two").unwrap();
        rotate_outputs(&csv).unwrap();
        assert_eq!(fs::read_to_string(&bak).unwrap(), "two");
    }

    fn small_batch() -> (SimulationConfig, Schedule) {
        let mut base = SimulationConfig::new("ffd", DemandEstimator::Max, ServerPool::homogeneous(3, 100, 8192, 0), 60);
        base.reallocation_interval_s = 30;
        let schedule = Schedule {
            id: "small".into(),
            horizon_s: 60,
            sizes: vec![DomainSize { cpu_units: 40, memory_mb: 512, probability: 1.0 }],
            entries: (0..4)
                .map(|i| ScheduleEntry {
                    vm: format!("v{i}"),
                    arrival_s: 0,
                    departure_s: 60,
                    size_index: 0,
                    series: "c".into(),
                })
                .collect(),
        };
        (base, schedule)
    }

    fn workloads() -> Result<Box<dyn WorkloadSource + Send>, WorkloadError> {
        Ok(Box::new(MemoryWorkloads::new().with(TimeSeries::constant("c", 3, 50.0, 4).unwrap())))
    }

    #[test]
    fn failures_are_isolated() {
        let (base, schedule) = small_batch();
        let matrix = build_matrix(&lists(&["ffd", "nosuch"], &["none", "ffd-repack"], &["none"])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (csv, err) = (dir.path().join("r.csv"), dir.path().join("r.err"));
        let summary = run_batch(&matrix, &base, &schedule, &workloads, 3, &csv, &err).unwrap();
        assert_eq!((summary.succeeded, summary.failed), (2, 2));
        assert_eq!(summary.exit_code(), 4);
        assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 3);
        let err_text = fs::read_to_string(&err).unwrap();
        let first: Vec<&str> = err_text.lines().next().unwrap().split('\t').collect();
        assert_eq!(first.len(), 7);
        assert_eq!(&first[..6], ["2", "nosuch", "none", "none", "max", "1"]);
    }

    #[test]
    fn all_fail_and_all_succeed_exit_codes() {
        let (base, schedule) = small_batch();
        let dir = tempfile::tempdir().unwrap();
        let (csv, err) = (dir.path().join("r.csv"), dir.path().join("r.err"));
        let bad = build_matrix(&lists(&["nosuch"], &["none"], &["none"])).unwrap();
        assert_eq!(run_batch(&bad, &base, &schedule, &workloads, 1, &csv, &err).unwrap().exit_code(), 3);
        let good = build_matrix(&lists(&["ffd"], &["none"], &["none"])).unwrap();
        let s = run_batch(&good, &base, &schedule, &workloads, 1, &csv, &err).unwrap();
        assert_eq!(s.exit_code(), 0);
        assert!(!err.exists());
        assert!(dir.path().join("r.err.bak").exists());
    }

    struct Panicky;

    impl WorkloadSource for Panicky {
        fn fetch(&mut self, _: &str) -> Result<TimeSeries, WorkloadError> {
            panic!("boom")
        }

        fn names(&mut self, _: &str) -> Result<Vec<String>, WorkloadError> {
            Ok(Vec::new())
        }
    }

    #[test]
    fn panicking_job_is_isolated() {
        let (base, schedule) = small_batch();
        let matrix = build_matrix(&lists(&["ffd", "bestfit"], &["none"], &["none"])).unwrap();
        let panicky = || -> Result<Box<dyn WorkloadSource + Send>, WorkloadError> { Ok(Box::new(Panicky)) };
        let results = execute(&matrix, &base, &schedule, &panicky, 2).unwrap();
        assert_eq!(results.len(), 2);
        assert!(results.iter().all(|r| r.message.as_deref() == Some("panic: boom")));
    }

    #[test]
    fn unavailable_workloads_fail_jobs() {
        let (base, schedule) = small_batch();
        let matrix = build_matrix(&lists(&["ffd", "bestfit"], &["none"], &["none"])).unwrap();
        let broken = || -> Result<Box<dyn WorkloadSource + Send>, WorkloadError> { Err(WorkloadError::Source("offline".into())) };
        let results = execute(&matrix, &base, &schedule, &broken, 2).unwrap();
        assert!(results.iter().all(|r| !r.is_ok() && r.message.as_deref() == Some("workload source: offline")));
        assert!(matches!(execute(&matrix, &base, &schedule, &workloads, 0), Err(RunnerError::ZeroParallelism)));
    }
}
