//! Deterministic discrete-event core: virtual clock, message pump, the
//! periodic simulation loop, VM lifecycle and migrations.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use thiserror::Error;

use crate::config::SimulationConfig;
use crate::controllers::{
    resolve_initial, resolve_placement, resolve_reallocation, ClusterSnapshot, ControllerError, ControllerSettings,
    InitialPlacement, OnlinePlacement, PlacedVm, Reallocator, Residual, SimRng, VmDemand,
};
use crate::model::{estimate_demand, load_from_percent, server_utilization, Allocation, ServerSpec, TimeSeries, VmSpec};
use crate::schedule::{Schedule, ScheduleEntry};
use crate::workload::{WorkloadError, WorkloadSource};

pub mod metrics;
pub mod queue;

pub use metrics::{finalize_metrics, MetricsAccumulator, ResultMeta, RunStatus, SimulationResult, CSV_HEADER};
pub use queue::{Event, EventKind, EventQueue};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("event at {time_ms} ms is before the clock ({clock_ms} ms)")]
    EventInPast { time_ms: u64, clock_ms: u64 },
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error("workload series `{0}` not found")]
    WorkloadMissing(String),
    #[error("workload error: {0}")]
    Workload(String),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("vm `{0}` is already migrating")]
    AlreadyMigrating(String),
    #[error("server `{target}` cannot reserve {needed} MB for `{vm}` ({available} MB free)")]
    TargetMemoryExhausted { vm: String, target: String, needed: u64, available: u64 },
    #[error("unknown vm `{0}`")]
    UnknownVm(String),
    #[error("unknown server `{0}`")]
    UnknownServer(String),
    #[error("vm `{vm}` already runs on `{server}`")]
    SameServer { vm: String, server: String },
    #[error("invariant violated: {0}")]
    InvariantViolated(String),
}

impl From<WorkloadError> for EngineError {
    fn from(e: WorkloadError) -> Self {
        match e {
            WorkloadError::Missing(name) => EngineError::WorkloadMissing(name),
            other => EngineError::Workload(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Migration {
    pub id: u64,
    pub vm: String,
    pub source: String,
    pub target: String,
    pub start_ms: u64,
    pub end_ms: u64,
}

/// Duration of moving `memory_mb` at `rate_mb_per_s`, rounded up to whole ms.
pub fn migration_duration_ms(memory_mb: u32, rate_mb_per_s: f64) -> u64 {
    (f64::from(memory_mb) * 1000.0 / rate_mb_per_s).ceil() as u64
}

#[derive(Debug, Clone)]
struct VmRecord {
    spec: VmSpec,
    series: Arc<TimeSeries>,
    estimate: f64,
    arrival_ms: u64,
}

impl VmRecord {
    fn demand(&self) -> VmDemand {
        VmDemand::new(self.spec.id.clone(), self.estimate, self.spec.memory_mb)
    }

    /// Replays the series from the VM's arrival; past the end the last sample holds.
    fn load_at(&self, clock_ms: u64) -> f64 {
        let offset = (clock_ms.saturating_sub(self.arrival_ms) / 1000) as i64;
        let pct = self
            .series
            .sample_at(self.series.start_s + offset)
            .expect("offsets are never before the series start");
        load_from_percent(pct, self.spec.cpu_units)
    }
}

#[derive(Debug, Clone)]
pub struct LiveVm {
    record: VmRecord,
    /// Index of the resident server.
    server: usize,
    migration: Option<u64>,
}

impl LiveVm {
    pub fn spec(&self) -> &VmSpec {
        &self.record.spec
    }

    pub fn estimate(&self) -> f64 {
        self.record.estimate
    }

    pub fn is_migrating(&self) -> bool {
        self.migration.is_some()
    }
}

/// Mutable simulation state.
#[derive(Debug)]
pub struct SimState {
    pub clock_ms: u64,
    pub servers: Vec<ServerSpec>,
    live_vms: BTreeMap<String, LiveVm>,
    in_flight: BTreeMap<u64, Migration>,
    reserved_memory: Vec<u64>,
    pub accumulator: MetricsAccumulator,
    pub rng: SimRng,
}

impl SimState {
    fn server_index(&self, id: &str) -> Option<usize> {
        self.servers.iter().position(|s| s.id == id)
    }

    /// Resident server of every live VM.
    pub fn allocation(&self) -> Allocation {
        self.live_vms
            .iter()
            .map(|(id, v)| (id.clone(), self.servers[v.server].id.clone()))
            .collect()
    }

    pub fn live_vms(&self) -> impl Iterator<Item = (&str, &LiveVm)> {
        self.live_vms.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn in_flight(&self) -> impl Iterator<Item = &Migration> {
        self.in_flight.values()
    }

    pub fn reserved_mb(&self, server: &str) -> u64 {
        self.server_index(server).map_or(0, |j| self.reserved_memory[j])
    }

    fn resident_memory(&self) -> Vec<u64> {
        let mut mem = vec![0u64; self.servers.len()];
        for v in self.live_vms.values() {
            mem[v.server] += u64::from(v.record.spec.memory_mb);
        }
        mem
    }

    /// Free estimated capacity per server, charging migrating VMs to both ends.
    fn residuals(&self) -> Vec<Residual> {
        let mut res: Vec<Residual> = self.servers.iter().map(Residual::of).collect();
        for v in self.live_vms.values() {
            res[v.server].cpu -= v.record.estimate;
        }
        for m in self.in_flight.values() {
            let j = self.server_index(&m.target).expect("migration targets exist");
            res[j].cpu -= self.live_vms[&m.vm].record.estimate;
        }
        for (j, used) in self.resident_memory().into_iter().enumerate() {
            res[j].memory_mb = res[j].memory_mb.saturating_sub(used + self.reserved_memory[j]);
        }
        res
    }

    fn check_invariants(&self) -> Result<(), EngineError> {
        let resident = self.resident_memory();
        let mut expected_reserved = vec![0u64; self.servers.len()];
        for m in self.in_flight.values() {
            let vm = self
                .live_vms
                .get(&m.vm)
                .ok_or_else(|| EngineError::InvariantViolated(format!("migration {} of departed vm {}", m.id, m.vm)))?;
            if vm.migration != Some(m.id) || self.servers[vm.server].id != m.source {
                return Err(EngineError::InvariantViolated(format!("vm {} not resident on migration source", m.vm)));
            }
            let t = self.server_index(&m.target).expect("migration targets exist");
            expected_reserved[t] += u64::from(vm.record.spec.memory_mb);
        }
        for (j, s) in self.servers.iter().enumerate() {
            if expected_reserved[j] != self.reserved_memory[j] {
                return Err(EngineError::InvariantViolated(format!("reservation mismatch on {}", s.id)));
            }
            if resident[j] + self.reserved_memory[j] > u64::from(s.memory_mb) {
                return Err(EngineError::InvariantViolated(format!(
                    "memory on {}: {} resident + {} reserved > {}",
                    s.id, resident[j], self.reserved_memory[j], s.memory_mb
                )));
            }
        }
        Ok(())
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv(mut hash: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Output of a completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub result: SimulationResult,
    /// FNV-1a over `(time_ms, kind, vm)` of every processed event.
    pub trace_hash: u64,
    pub events_processed: u64,
}

/// A single simulation instance.
pub struct Simulation {
    state: SimState,
    queue: EventQueue,
    initial: Box<dyn InitialPlacement>,
    placement: Option<Box<dyn OnlinePlacement>>,
    reallocation: Option<Box<dyn Reallocator>>,
    pending: BTreeMap<String, VmRecord>,
    meta: ResultMeta,
    loop_ms: u64,
    duration_ms: u64,
    loop_interval_ms: u64,
    realloc_interval_ms: u64,
    cpu_overhead_frac: f64,
    rate_mb_per_s: f64,
    sla_threshold_pct: f64,
    next_migration_id: u64,
    vm_count: u64,
    trace_hash: u64,
    events_processed: u64,
    last_loop: Vec<(String, f64)>,
}

impl std::fmt::Debug for Simulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulation")
            .field("meta", &self.meta)
            .field("loop_ms", &self.loop_ms)
            .field("state", &self.state)
            .finish_non_exhaustive()
    }
}

pub(crate) fn meta_of(config: &SimulationConfig, schedule_id: &str) -> ResultMeta {
    ResultMeta {
        sim_id: "0".into(),
        initial_placement: config.initial_placement.clone(),
        reallocation: config.reallocation.clone(),
        placement: config.placement.clone(),
        estimator: config.estimator,
        seed: config.seed,
        schedule_id: schedule_id.to_string(),
        duration_s: config.duration_s,
    }
}

impl Simulation {
    pub fn new(config: &SimulationConfig, schedule: &Schedule, workloads: &mut dyn WorkloadSource) -> Result<Self, EngineError> {
        Self::build(config, schedule, workloads, None)
    }

    /// Like [`Simulation::new`] but starts from `initial` instead of running
    /// the initial placement controller. CPU may be oversubscribed; memory may not.
    pub fn with_initial_allocation(
        config: &SimulationConfig,
        schedule: &Schedule,
        workloads: &mut dyn WorkloadSource,
        initial: Allocation,
    ) -> Result<Self, EngineError> {
        Self::build(config, schedule, workloads, Some(initial))
    }

    fn build(
        config: &SimulationConfig,
        schedule: &Schedule,
        workloads: &mut dyn WorkloadSource,
        forced: Option<Allocation>,
    ) -> Result<Self, EngineError> {
        config.validate().map_err(|e| EngineError::ConfigInvalid(e.to_string()))?;
        if let Some(v) = schedule.structural_violations().first() {
            return Err(EngineError::ConfigInvalid(format!("schedule: {v}")));
        }
        let settings = ControllerSettings {
            exact_budget: config.exact_budget.clone(),
        };
        let initial = resolve_initial(&config.initial_placement)?;
        let placement = resolve_placement(&config.placement)?;
        let reallocation = resolve_reallocation(&config.reallocation, &settings)?;

        let duration_ms = config.duration_s * 1000;
        let entries: Vec<&ScheduleEntry> = schedule.entries.iter().filter(|e| e.arrival_s * 1000 < duration_ms).collect();

        let mut cache: BTreeMap<String, Arc<TimeSeries>> = BTreeMap::new();
        let mut records = Vec::with_capacity(entries.len());
        for e in &entries {
            let series = match cache.get(&e.series) {
                Some(s) => Arc::clone(s),
                None => {
                    let s = Arc::new(workloads.fetch(&e.series)?);
                    cache.insert(e.series.clone(), Arc::clone(&s));
                    s
                }
            };
            let size = schedule.size_of(e);
            let spec = VmSpec {
                id: e.vm.clone(),
                cpu_units: size.cpu_units,
                memory_mb: size.memory_mb,
                series_name: e.series.clone(),
            };
            let estimate = estimate_demand(&series, config.estimator, spec.cpu_units)
                .map_err(|err| EngineError::Workload(format!("series `{}`: {err}", e.series)))?;
            records.push(VmRecord {
                spec,
                series,
                estimate,
                arrival_ms: e.arrival_s * 1000,
            });
        }

        let servers = config.servers.servers();
        let mut state = SimState {
            clock_ms: 0,
            reserved_memory: vec![0; servers.len()],
            servers,
            live_vms: BTreeMap::new(),
            in_flight: BTreeMap::new(),
            accumulator: MetricsAccumulator::default(),
            rng: SimRng::seed_from_u64(config.seed),
        };

        let (at_start, later): (Vec<VmRecord>, Vec<VmRecord>) = records.into_iter().partition(|r| r.arrival_ms == 0);
        let allocation = match forced {
            Some(a) => {
                if a.len() != at_start.len() || at_start.iter().any(|r| a.server_of(&r.spec.id).is_none()) {
                    return Err(EngineError::ConfigInvalid(
                        "initial allocation must cover exactly the vms present at t=0".into(),
                    ));
                }
                a
            }
            None => {
                let demands: Vec<VmDemand> = at_start.iter().map(VmRecord::demand).collect();
                initial.place(&demands, &state.servers, &mut state.rng)?
            }
        };

        let mut queue = EventQueue::new();
        for e in &entries {
            if e.departure_s * 1000 < duration_ms {
                queue.push(e.departure_s * 1000, EventKind::Departure(e.vm.clone()))?;
            }
        }
        for r in &later {
            queue.push(r.arrival_ms, EventKind::Arrival(r.spec.id.clone()))?;
        }

        let vm_count = at_start.len() as u64;
        for record in at_start {
            let server_id = allocation.server_of(&record.spec.id).expect("checked above");
            let server = state
                .server_index(server_id)
                .ok_or_else(|| EngineError::UnknownServer(server_id.to_string()))?;
            state.live_vms.insert(
                record.spec.id.clone(),
                LiveVm {
                    record,
                    server,
                    migration: None,
                },
            );
        }
        state.check_invariants().map_err(|e| EngineError::ConfigInvalid(format!("initial allocation: {e}")))?;

        let loop_interval_ms = config.loop_interval_s * 1000;
        let realloc_interval_ms = config.reallocation_interval_s * 1000;
        if duration_ms > 0 {
            queue.push(0, EventKind::LoopTick)?;
        }
        if reallocation.is_some() && realloc_interval_ms < duration_ms {
            queue.push(realloc_interval_ms, EventKind::ReallocationTick)?;
        }

        Ok(Self {
            state,
            queue,
            initial,
            placement,
            reallocation,
            pending: later.into_iter().map(|r| (r.spec.id.clone(), r)).collect(),
            meta: meta_of(config, &schedule.id),
            loop_ms: 0,
            duration_ms,
            loop_interval_ms,
            realloc_interval_ms,
            cpu_overhead_frac: config.migration.cpu_overhead_frac,
            rate_mb_per_s: config.migration.rate_mb_per_s,
            sla_threshold_pct: config.sla_threshold_pct,
            next_migration_id: 1,
            vm_count,
            trace_hash: FNV_OFFSET,
            events_processed: 0,
            last_loop: Vec::new(),
        })
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn is_finished(&self) -> bool {
        self.loop_ms >= self.duration_ms
    }

    /// Virtual time of the next loop.
    pub fn loop_ms(&self) -> u64 {
        self.loop_ms
    }

    pub fn trace_hash(&self) -> u64 {
        self.trace_hash
    }

    /// Utilization of each active server in the most recent loop.
    pub fn last_loop_utilization(&self) -> &[(String, f64)] {
        &self.last_loop
    }

    /// Runs one loop: drains every event due by the loop time, samples, and
    /// schedules the next loop. Returns false once the run is over.
    pub fn step(&mut self) -> Result<bool, EngineError> {
        if self.is_finished() {
            return Ok(false);
        }
        let now = self.loop_ms;
        while self.queue.peek_time().is_some_and(|t| t <= now) {
            let event = self.queue.pop().expect("peeked");
            self.record_trace(&event);
            self.state.clock_ms = event.time_ms;
            self.handle(event)?;
        }
        self.state.clock_ms = now;
        self.state.check_invariants()?;
        self.sample();
        self.loop_ms = now + self.loop_interval_ms;
        if self.loop_ms < self.duration_ms {
            self.queue.push(self.loop_ms, EventKind::LoopTick)?;
        }
        Ok(true)
    }

    fn record_trace(&mut self, event: &Event) {
        let mut h = fnv(self.trace_hash, &event.time_ms.to_be_bytes());
        h = fnv(h, &[event.kind.code()]);
        h = match &event.kind {
            EventKind::Arrival(vm) | EventKind::Departure(vm) => fnv(h, vm.as_bytes()),
            EventKind::MigrationDone(id) => fnv(h, self.state.in_flight.get(id).map_or(&[][..], |m| m.vm.as_bytes())),
            EventKind::LoopTick | EventKind::ReallocationTick => h,
        };
        self.trace_hash = h;
        self.events_processed += 1;
    }

    fn handle(&mut self, event: Event) -> Result<(), EngineError> {
        match event.kind {
            EventKind::LoopTick => Ok(()),
            EventKind::Arrival(vm) => self.arrive(&vm),
            EventKind::Departure(vm) => {
                self.depart(&vm);
                Ok(())
            }
            EventKind::MigrationDone(id) => {
                self.complete_migration(id);
                Ok(())
            }
            EventKind::ReallocationTick => self.reallocate(event.time_ms),
        }
    }

    fn arrive(&mut self, vm: &str) -> Result<(), EngineError> {
        let record = self.pending.remove(vm).ok_or_else(|| EngineError::UnknownVm(vm.to_string()))?;
        let demand = record.demand();
        let residuals = self.state.residuals();
        let server = match &self.placement {
            Some(p) => p.choose(&demand, &residuals, &mut self.state.rng)?,
            None => self
                .initial
                .online_rule()
                .pick(&demand, &residuals, &mut self.state.rng)
                .ok_or_else(|| ControllerError::NoFeasibleServer(vm.to_string()))?,
        };
        log::debug!("t={} arrival {vm} -> {}", self.state.clock_ms, self.state.servers[server].id);
        self.state.live_vms.insert(
            vm.to_string(),
            LiveVm {
                record,
                server,
                migration: None,
            },
        );
        self.vm_count += 1;
        Ok(())
    }

    fn depart(&mut self, vm: &str) {
        let Some(live) = self.state.live_vms.remove(vm) else {
            return;
        };
        if let Some(id) = live.migration {
            let m = self.state.in_flight.remove(&id).expect("migration of live vm is in flight");
            let t = self.state.server_index(&m.target).expect("migration targets exist");
            self.state.reserved_memory[t] -= u64::from(live.record.spec.memory_mb);
            log::debug!("t={} departure {vm} cancels migration {id}", self.state.clock_ms);
        }
    }

    fn complete_migration(&mut self, id: u64) {
        let Some(m) = self.state.in_flight.remove(&id) else {
            return;
        };
        let t = self.state.server_index(&m.target).expect("migration targets exist");
        let vm = self.state.live_vms.get_mut(&m.vm).expect("in-flight vm is live");
        vm.server = t;
        vm.migration = None;
        self.state.reserved_memory[t] -= u64::from(vm.record.spec.memory_mb);
    }

    fn reallocate(&mut self, now: u64) -> Result<(), EngineError> {
        let next = now + self.realloc_interval_ms;
        if next < self.duration_ms {
            self.queue.push(next, EventKind::ReallocationTick)?;
        }
        if !self.state.in_flight.is_empty() {
            return Ok(());
        }
        let Some(controller) = &self.reallocation else {
            return Ok(());
        };
        let snapshot = ClusterSnapshot {
            servers: self.state.servers.clone(),
            vms: self
                .state
                .live_vms
                .values()
                .map(|v| PlacedVm {
                    demand: v.record.demand(),
                    server: v.server,
                })
                .collect(),
        };
        let plan = controller.plan(&snapshot);
        log::debug!("t={now} reallocation plan with {} migrations", plan.len());
        for (vm, target) in &plan.migrations {
            self.start_migration(vm, target)?;
        }
        Ok(())
    }

    /// Starts moving `vm` to `target` at the current clock.
    pub fn start_migration(&mut self, vm: &str, target: &str) -> Result<Migration, EngineError> {
        let t = self
            .state
            .server_index(target)
            .ok_or_else(|| EngineError::UnknownServer(target.to_string()))?;
        let live = self.state.live_vms.get(vm).ok_or_else(|| EngineError::UnknownVm(vm.to_string()))?;
        if live.migration.is_some() {
            return Err(EngineError::AlreadyMigrating(vm.to_string()));
        }
        if live.server == t {
            return Err(EngineError::SameServer {
                vm: vm.to_string(),
                server: target.to_string(),
            });
        }
        let needed = u64::from(live.record.spec.memory_mb);
        let used = self.state.resident_memory()[t] + self.state.reserved_memory[t];
        let available = u64::from(self.state.servers[t].memory_mb).saturating_sub(used);
        if needed > available {
            return Err(EngineError::TargetMemoryExhausted {
                vm: vm.to_string(),
                target: target.to_string(),
                needed,
                available,
            });
        }
        let start_ms = self.state.clock_ms;
        let end_ms = start_ms + migration_duration_ms(live.record.spec.memory_mb, self.rate_mb_per_s);
        let m = Migration {
            id: self.next_migration_id,
            vm: vm.to_string(),
            source: self.state.servers[live.server].id.clone(),
            target: target.to_string(),
            start_ms,
            end_ms,
        };
        self.queue.push(end_ms, EventKind::MigrationDone(m.id))?;
        self.next_migration_id += 1;
        self.state.reserved_memory[t] += needed;
        self.state.live_vms.get_mut(vm).expect("checked").migration = Some(m.id);
        self.state.in_flight.insert(m.id, m.clone());
        self.state.accumulator.migrations_total += 1;
        log::debug!("t={start_ms} migration {} {vm}: {} -> {target} until {end_ms}", m.id, m.source);
        Ok(m)
    }

    fn sample(&mut self) {
        let now = self.state.clock_ms;
        let n = self.state.servers.len();
        let mut loads: Vec<Vec<f64>> = vec![Vec::new(); n];
        let mut overheads: Vec<Vec<f64>> = vec![Vec::new(); n];
        let mut active = vec![false; n];
        for v in self.state.live_vms.values() {
            loads[v.server].push(v.record.load_at(now));
            active[v.server] = true;
        }
        for m in self.state.in_flight.values() {
            let vm = &self.state.live_vms[&m.vm];
            let overhead = self.cpu_overhead_frac * vm.record.load_at(now);
            let t = self.state.server_index(&m.target).expect("migration targets exist");
            overheads[vm.server].push(overhead);
            overheads[t].push(overhead);
            active[t] = true;
        }
        self.last_loop.clear();
        for j in (0..n).filter(|&j| active[j]) {
            let util = server_utilization(&self.state.servers[j], &loads[j], &overheads[j]);
            self.state.accumulator.record_server(util, self.sla_threshold_pct);
            self.last_loop.push((self.state.servers[j].id.clone(), util));
        }
        self.state.accumulator.finish_loop(self.last_loop.len() as u64);
    }

    /// Runs every remaining loop and finalizes the metrics.
    pub fn run(mut self) -> Result<RunOutcome, EngineError> {
        let started = Instant::now();
        while self.step()? {}
        let wall_ms = started.elapsed().as_millis() as u64;
        Ok(RunOutcome {
            result: finalize_metrics(&self.state.accumulator, self.meta, self.vm_count, wall_ms),
            trace_hash: self.trace_hash,
            events_processed: self.events_processed,
        })
    }
}

/// Builds and runs a simulation; any error becomes a `failed` result.
pub fn run(config: &SimulationConfig, schedule: &Schedule, workloads: &mut dyn WorkloadSource) -> SimulationResult {
    let started = Instant::now();
    match Simulation::new(config, schedule, workloads).and_then(Simulation::run) {
        Ok(outcome) => outcome.result,
        Err(e) => SimulationResult::failed(
            meta_of(config, &schedule.id),
            e.to_string(),
            started.elapsed().as_millis() as u64,
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ServerPool;
    use crate::model::{DemandEstimator, DomainSize};
    use crate::workload::MemoryWorkloads;

    fn schedule(entries: &[(&str, u64, u64, usize, &str)], sizes: &[(u32, u32)]) -> Schedule {
        let mut entries = entries.to_vec();
        entries.sort_by_key(|e| (e.1, e.0));
        Schedule {
            id: "t".into(),
            horizon_s: entries.iter().map(|e| e.2).max().unwrap_or(1),
            sizes: sizes
                .iter()
                .map(|&(cpu_units, memory_mb)| DomainSize {
                    cpu_units,
                    memory_mb,
                    probability: 1.0 / sizes.len() as f64,
                })
                .collect(),
            entries: entries
                .iter()
                .map(|&(vm, a, d, size, series)| ScheduleEntry {
                    vm: vm.into(),
                    arrival_s: a,
                    departure_s: d,
                    size_index: size,
                    series: series.into(),
                })
                .collect(),
        }
    }

    fn config(servers: u32, duration_s: u64) -> SimulationConfig {
        SimulationConfig::new("ffd", DemandEstimator::Max, ServerPool::homogeneous(servers, 100, 16384, 0), duration_s)
    }

    fn constant(name: &str, pct: f64) -> TimeSeries {
        TimeSeries::constant(name, 3, pct, 10).unwrap()
    }

    #[test]
    fn single_vm_hand_trace() {
        let cfg = config(1, 30);
        let sched = schedule(&[("v1", 0, 30, 0, "c50")], &[(50, 1024)]);
        let mut w = MemoryWorkloads::new().with(constant("c50", 50.0));
        let r = Simulation::new(&cfg, &sched, &mut w).unwrap().run().unwrap().result;
        assert_eq!(r.avg_active_servers, 1.0);
        assert_eq!(r.avg_cpu_util_pct, 25.0);
        assert_eq!(r.sla_violation_rate, 0.0);
        assert_eq!(r.migration_count, 0);
        assert_eq!(r.vm_count, 1);
        assert!(r.is_ok());
    }

    #[test]
    fn empty_schedule() {
        let r = run(&config(3, 30), &schedule(&[], &[(1, 1)]), &mut MemoryWorkloads::new());
        assert!(r.is_ok());
        assert_eq!(r.avg_active_servers, 0.0);
        assert_eq!(r.sla_violation_rate, 0.0);
    }

    #[test]
    fn forced_overload() {
        let cfg = config(1, 30);
        let sched = schedule(&[("v1", 0, 30, 0, "full"), ("v2", 0, 30, 0, "full")], &[(60, 1024)]);
        let mut w = MemoryWorkloads::new().with(constant("full", 100.0));
        let alloc: Allocation = [("v1", "s1"), ("v2", "s1")].iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        let mut sim = Simulation::with_initial_allocation(&cfg, &sched, &mut w, alloc).unwrap();
        sim.step().unwrap();
        assert_eq!(sim.last_loop_utilization(), &[("s1".to_string(), 120.0)]);
        let r = sim.run().unwrap().result;
        assert_eq!(r.sla_violation_rate, 1.0);
    }

    #[test]
    fn infeasible_arrival_fails_run() {
        let cfg = config(1, 30);
        let sched = schedule(&[("v1", 0, 30, 0, "c"), ("v2", 3, 30, 0, "c")], &[(60, 1024)]);
        let mut w = MemoryWorkloads::new().with(constant("c", 100.0));
        let r = run(&cfg, &sched, &mut w);
        assert_eq!(r.status, RunStatus::Failed);
        assert!(r.message.unwrap().contains("v2"));
    }

    #[test]
    fn missing_workload_fails() {
        let sched = schedule(&[("v1", 0, 30, 0, "nope")], &[(10, 10)]);
        let mut w = MemoryWorkloads::new();
        assert!(matches!(Simulation::new(&config(1, 30), &sched, &mut w), Err(EngineError::WorkloadMissing(n)) if n == "nope"));
        assert_eq!(run(&config(1, 30), &sched, &mut w).status, RunStatus::Failed);
    }

    #[test]
    fn unknown_controller_fails() {
        let mut cfg = config(1, 30);
        cfg.reallocation = "magic".into();
        let sched = schedule(&[], &[(10, 10)]);
        assert!(matches!(
            Simulation::new(&cfg, &sched, &mut MemoryWorkloads::new()),
            Err(EngineError::Controller(ControllerError::UnknownController { .. }))
        ));
    }

    fn two_server_sim(mem: u32) -> Simulation {
        let cfg = config(2, 60);
        let sched = schedule(&[("v1", 0, 60, 0, "c")], &[(10, mem)]);
        let mut w = MemoryWorkloads::new().with(constant("c", 50.0));
        Simulation::new(&cfg, &sched, &mut w).unwrap()
    }

    #[test]
    fn migration_duration_and_overhead() {
        assert_eq!(migration_duration_ms(2048, 100.0), 20480);
        assert_eq!(migration_duration_ms(0, 100.0), 0);
        assert_eq!(migration_duration_ms(1, 3.0), 334);

        let mut sim = two_server_sim(2048);
        let m = sim.start_migration("v1", "s2").unwrap();
        assert_eq!((m.start_ms, m.end_ms), (0, 20480));
        assert_eq!(sim.state().reserved_mb("s2"), 2048);
        assert!(matches!(sim.start_migration("v1", "s2"), Err(EngineError::AlreadyMigrating(_))));

        // 7 loops (t = 0..18 s) see the migration in flight, then it completes.
        let mut in_flight_loops = 0;
        for _ in 0..8 {
            sim.step().unwrap();
            if sim.last_loop_utilization().len() == 2 {
                in_flight_loops += 1;
                // v1 load 5 on source plus 10% overhead on both ends.
                assert_eq!(sim.last_loop_utilization(), &[("s1".to_string(), 5.5), ("s2".to_string(), 0.5)]);
            }
        }
        assert_eq!(in_flight_loops, 7);
        assert_eq!(sim.state().allocation().server_of("v1"), Some("s2"));
        assert_eq!(sim.state().reserved_mb("s2"), 0);
    }

    #[test]
    fn zero_memory_migration_completes_in_loop() {
        let mut sim = two_server_sim(0);
        sim.step().unwrap();
        sim.start_migration("v1", "s2").unwrap();
        sim.step().unwrap();
        assert_eq!(sim.state().allocation().server_of("v1"), Some("s2"));
        assert_eq!(sim.last_loop_utilization(), &[("s2".to_string(), 5.0)]);
    }

    #[test]
    fn target_memory_exhausted() {
        let mut cfg = config(2, 30);
        cfg.servers = ServerPool::homogeneous(2, 100, 1000, 0);
        let sched = schedule(&[("v1", 0, 30, 0, "c")], &[(10, 1500)]);
        let mut w = MemoryWorkloads::new().with(constant("c", 50.0));
        let err = Simulation::new(&cfg, &sched, &mut w);
        assert!(err.is_err());

        let sched = schedule(&[("v1", 0, 30, 0, "c"), ("v2", 0, 30, 0, "c")], &[(60, 800)]);
        let mut sim = Simulation::new(&cfg, &sched, &mut w).unwrap();
        assert!(matches!(sim.start_migration("v1", "s2"), Err(EngineError::TargetMemoryExhausted { .. })));
    }

    #[test]
    fn departure_cancels_migration() {
        let cfg = config(2, 30);
        let sched = schedule(&[("v1", 0, 6, 0, "c")], &[(10, 2048)]);
        let mut w = MemoryWorkloads::new().with(constant("c", 50.0));
        let mut sim = Simulation::new(&cfg, &sched, &mut w).unwrap();
        sim.start_migration("v1", "s2").unwrap();
        sim.step().unwrap();
        sim.step().unwrap();
        sim.step().unwrap();
        assert_eq!(sim.state().in_flight().count(), 0);
        assert_eq!(sim.state().reserved_mb("s2"), 0);
        assert!(sim.last_loop_utilization().is_empty());
        let r = sim.run().unwrap().result;
        assert_eq!(r.migration_count, 1);
    }

    #[test]
    fn departure_removes_vm_before_sampling() {
        let cfg = config(1, 12);
        let sched = schedule(&[("v1", 0, 6, 0, "c")], &[(50, 10)]);
        let mut w = MemoryWorkloads::new().with(constant("c", 50.0));
        let mut sim = Simulation::new(&cfg, &sched, &mut w).unwrap();
        sim.step().unwrap();
        sim.step().unwrap();
        assert_eq!(sim.last_loop_utilization().len(), 1);
        sim.step().unwrap();
        assert!(sim.last_loop_utilization().is_empty());
        assert_eq!(sim.state().live_vms().count(), 0);
    }

    #[test]
    fn arrival_is_placed_before_sampling() {
        let mut cfg = config(2, 12);
        cfg.placement = "worstfit-online".into();
        let sched = schedule(&[("v1", 0, 12, 0, "c"), ("v2", 3, 12, 0, "c")], &[(50, 10)]);
        let mut w = MemoryWorkloads::new().with(constant("c", 50.0));
        let mut sim = Simulation::new(&cfg, &sched, &mut w).unwrap();
        sim.step().unwrap();
        assert_eq!(sim.last_loop_utilization().len(), 1);
        sim.step().unwrap();
        assert_eq!(sim.state().allocation().server_of("v2"), Some("s2"));
        assert_eq!(sim.last_loop_utilization().len(), 2);
    }

    #[test]
    fn frozen_workload_repeats_samples() {
        let mut sim = two_server_sim(10);
        sim.step().unwrap();
        let first = sim.last_loop_utilization().to_vec();
        sim.step().unwrap();
        assert_eq!(sim.last_loop_utilization(), first.as_slice());
    }

    #[test]
    fn series_replays_from_arrival() {
        let cfg = config(1, 9);
        let sched = schedule(&[("v1", 3, 9, 0, "ramp")], &[(100, 10)]);
        let ramp = TimeSeries::new("ramp", 1000, 3, vec![10.0, 20.0, 30.0]).unwrap();
        let mut sim = Simulation::new(&cfg, &sched, &mut MemoryWorkloads::new().with(ramp)).unwrap();
        sim.step().unwrap();
        sim.step().unwrap();
        assert_eq!(sim.last_loop_utilization()[0].1, 10.0);
        sim.step().unwrap();
        assert_eq!(sim.last_loop_utilization()[0].1, 20.0);
    }

    #[test]
    fn reallocation_consolidates() {
        let mut cfg = config(2, 60);
        cfg.initial_placement = "worstfit".into();
        cfg.reallocation = "ffd-repack".into();
        cfg.reallocation_interval_s = 9;
        let sched = schedule(&[("v1", 0, 60, 0, "c"), ("v2", 0, 60, 0, "c")], &[(20, 100)]);
        let mut w = MemoryWorkloads::new().with(constant("c", 50.0));
        let outcome = Simulation::new(&cfg, &sched, &mut w).unwrap().run().unwrap();
        assert_eq!(outcome.result.migration_count, 1);
        assert!(outcome.result.avg_active_servers < 2.0);
        assert!(outcome.result.avg_active_servers > 1.0);
    }

    #[test]
    fn deterministic_trace() {
        let mut cfg = config(3, 300);
        cfg.initial_placement = "random".into();
        cfg.placement = "random-online".into();
        cfg.reallocation = "ffd-repack".into();
        cfg.reallocation_interval_s = 30;
        cfg.seed = 9;
        let entries: Vec<(String, u64, u64)> = (0..12).map(|i| (format!("v{i}"), (i * 17) % 120, 150 + i * 11)).collect();
        let refs: Vec<(&str, u64, u64, usize, &str)> = entries.iter().map(|(v, a, d)| (v.as_str(), *a, *d, 0, "c")).collect();
        let sched = schedule(&refs, &[(20, 512)]);
        let once = || {
            let mut w = MemoryWorkloads::new().with(constant("c", 40.0));
            Simulation::new(&cfg, &sched, &mut w).unwrap().run().unwrap()
        };
        let (a, b) = (once(), once());
        assert_eq!(a.trace_hash, b.trace_hash);
        let mask = |mut r: SimulationResult| {
            r.wall_ms = 0;
            r
        };
        assert_eq!(mask(a.result), mask(b.result));
    }
}
