//! Reallocation controllers.
//!
//! Both controllers compute a target allocation and emit a migration for
//! every VM whose target differs from where it runs now. A migration holds
//! memory on its target while the VM is still resident on its source, so a
//! target is only accepted if its current residents plus everything moving in
//! fit in memory at once. Plans that would not reduce the number of servers
//! in use are dropped.

use std::collections::BTreeMap;

use super::exact::{solve_min_servers_exact, Capacity, Demand, SolveBudget};
use super::{Reallocator, VmDemand, CAPACITY_EPS};
use crate::model::{Allocation, ServerSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct PlacedVm {
    pub demand: VmDemand,
    /// Index into `ClusterSnapshot::servers`.
    pub server: usize,
}

/// State a reallocator plans against. Taken only when no migration is in flight.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSnapshot {
    pub servers: Vec<ServerSpec>,
    pub vms: Vec<PlacedVm>,
}

impl ClusterSnapshot {
    pub fn allocation(&self) -> Allocation {
        self.vms
            .iter()
            .map(|v| (v.demand.id.clone(), self.servers[v.server].id.clone()))
            .collect()
    }

    fn used_servers(&self) -> usize {
        let mut used = vec![false; self.servers.len()];
        for v in &self.vms {
            used[v.server] = true;
        }
        used.into_iter().filter(|u| *u).count()
    }

    fn resident_memory(&self) -> Vec<u64> {
        let mut mem = vec![0u64; self.servers.len()];
        for v in &self.vms {
            mem[v.server] += u64::from(v.demand.memory_mb);
        }
        mem
    }

    /// VM indices by estimated cpu descending, ties by id.
    fn decreasing_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.vms.len()).collect();
        order.sort_by(|&a, &b| {
            let (da, db) = (&self.vms[a].demand, &self.vms[b].demand);
            db.cpu.total_cmp(&da.cpu).then_with(|| da.id.cmp(&db.id))
        });
        order
    }

    fn estimated_load(&self) -> Vec<f64> {
        let mut load = vec![0.0; self.servers.len()];
        for v in &self.vms {
            load[v.server] += v.demand.cpu;
        }
        load
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReallocationPlan {
    /// `(vm id, target server id)` in execution order.
    pub migrations: Vec<(String, String)>,
}

impl ReallocationPlan {
    pub fn is_empty(&self) -> bool {
        self.migrations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.migrations.len()
    }

    /// Allocation after every migration completed.
    pub fn apply(&self, current: &Allocation) -> Allocation {
        let mut next = current.clone();
        for (vm, target) in &self.migrations {
            next.assign(vm.clone(), target.clone());
        }
        next
    }
}

/// Turns per-VM targets into a plan, or an empty plan if it does not free a
/// server or breaks the memory rule.
fn plan_from_targets(snapshot: &ClusterSnapshot, targets: &[usize]) -> Option<ReallocationPlan> {
    let mut used = vec![false; snapshot.servers.len()];
    for &t in targets {
        used[t] = true;
    }
    if used.iter().filter(|u| **u).count() >= snapshot.used_servers() {
        return None;
    }
    let mut transient = snapshot.resident_memory();
    let mut cpu = vec![0.0; snapshot.servers.len()];
    for (vm, &t) in snapshot.vms.iter().zip(targets) {
        cpu[t] += vm.demand.cpu;
        if t != vm.server {
            transient[t] += u64::from(vm.demand.memory_mb);
        }
    }
    let safe = snapshot.servers.iter().enumerate().all(|(j, s)| {
        transient[j] <= u64::from(s.memory_mb) && cpu[j] <= s.placeable_cpu() + CAPACITY_EPS
    });
    if !safe {
        return None;
    }
    let migrations = snapshot
        .decreasing_order()
        .into_iter()
        .filter(|&i| targets[i] != snapshot.vms[i].server)
        .map(|i| (snapshot.vms[i].demand.id.clone(), snapshot.servers[targets[i]].id.clone()))
        .collect();
    Some(ReallocationPlan { migrations })
}

/// First-fit decreasing over servers ordered by current estimated load,
/// heaviest first. A VM stays put when its own server is feasible, was as
/// loaded as the first-fit choice and is at least as full in the new packing.
pub struct FfdRepack;

impl FfdRepack {
    fn targets(snapshot: &ClusterSnapshot) -> Option<Vec<usize>> {
        let n_servers = snapshot.servers.len();
        let load = snapshot.estimated_load();
        let mut order: Vec<usize> = (0..n_servers).collect();
        order.sort_by(|&a, &b| load[b].total_cmp(&load[a]).then(a.cmp(&b)));

        let mut final_cpu = vec![0.0; n_servers];
        let mut final_mem = vec![0u64; n_servers];
        let mut transient_mem = snapshot.resident_memory();
        let mut targets = vec![usize::MAX; snapshot.vms.len()];

        for i in snapshot.decreasing_order() {
            let vm = &snapshot.vms[i];
            let mem = u64::from(vm.demand.memory_mb);
            let feasible = |j: usize, final_cpu: &[f64], final_mem: &[u64], transient: &[u64]| {
                let s = &snapshot.servers[j];
                let cpu_ok = final_cpu[j] + vm.demand.cpu <= s.placeable_cpu() + CAPACITY_EPS;
                let mem_ok = if j == vm.server {
                    final_mem[j] + mem <= u64::from(s.memory_mb)
                } else {
                    transient[j] + mem <= u64::from(s.memory_mb)
                };
                cpu_ok && mem_ok
            };
            let first = order
                .iter()
                .copied()
                .find(|&j| feasible(j, &final_cpu, &final_mem, &transient_mem))?;
            let stay = vm.server != first
                && load[vm.server] == load[first]
                && final_cpu[vm.server] >= final_cpu[first]
                && feasible(vm.server, &final_cpu, &final_mem, &transient_mem);
            let target = if stay { vm.server } else { first };
            final_cpu[target] += vm.demand.cpu;
            final_mem[target] += mem;
            if target != vm.server {
                transient_mem[target] += mem;
            }
            targets[i] = target;
        }
        Some(targets)
    }
}

impl Reallocator for FfdRepack {
    fn name(&self) -> &'static str {
        "ffd-repack"
    }

    fn plan(&self, snapshot: &ClusterSnapshot) -> ReallocationPlan {
        Self::targets(snapshot)
            .and_then(|t| plan_from_targets(snapshot, &t))
            .unwrap_or_default()
    }
}

/// Minimum-server packing from the branch-and-bound solver, with solver bins
/// mapped onto the servers that already host most of their VMs. Falls back to
/// [`FfdRepack`] when the solved target cannot be migrated to safely.
pub struct ExactRepack {
    budget: SolveBudget,
}

impl ExactRepack {
    pub fn new(budget: SolveBudget) -> Self {
        Self { budget }
    }

    fn targets(&self, snapshot: &ClusterSnapshot) -> Option<Vec<usize>> {
        let demands: Vec<Demand> = snapshot
            .vms
            .iter()
            .map(|v| Demand {
                cpu: v.demand.cpu,
                memory: f64::from(v.demand.memory_mb),
            })
            .collect();
        let caps: Vec<Capacity> = snapshot
            .servers
            .iter()
            .map(|s| Capacity {
                cpu: s.placeable_cpu(),
                memory: f64::from(s.memory_mb),
            })
            .collect();
        let solution = solve_min_servers_exact(&demands, &caps, &self.budget).ok()?;
        if solution.servers_used >= snapshot.used_servers() {
            return None;
        }
        let relabel = relabel_bins(snapshot, &caps, &solution.assignment);
        let mut targets: Vec<usize> = solution.assignment.iter().map(|b| relabel[*b]).collect();
        keep_identical_in_place(snapshot, &mut targets);
        Some(targets)
    }
}

/// VMs with identical demands are interchangeable; hand each one its own
/// server when that server is among the group's targets.
fn keep_identical_in_place(snapshot: &ClusterSnapshot, targets: &mut [usize]) {
    let mut groups: BTreeMap<(u64, u32), Vec<usize>> = BTreeMap::new();
    for (i, v) in snapshot.vms.iter().enumerate() {
        groups.entry((v.demand.cpu.to_bits(), v.demand.memory_mb)).or_default().push(i);
    }
    for members in groups.values() {
        let mut pool: Vec<usize> = members.iter().map(|&i| targets[i]).collect();
        let mut assigned = vec![None; members.len()];
        for (k, &i) in members.iter().enumerate() {
            if let Some(p) = pool.iter().position(|&t| t == snapshot.vms[i].server) {
                assigned[k] = Some(pool.swap_remove(p));
            }
        }
        pool.sort_unstable();
        let mut rest = pool.into_iter();
        for (k, &i) in members.iter().enumerate() {
            targets[i] = assigned[k].unwrap_or_else(|| rest.next().expect("one target per member"));
        }
    }
}

/// Maps each solver bin onto a server of identical capacity, greedily
/// maximizing the number of VMs that stay where they are.
fn relabel_bins(snapshot: &ClusterSnapshot, caps: &[Capacity], assignment: &[usize]) -> Vec<usize> {
    let m = caps.len();
    let mut overlap = vec![vec![0usize; m]; m];
    for (vm, &bin) in snapshot.vms.iter().zip(assignment) {
        overlap[bin][vm.server] += 1;
    }
    let mut bins: Vec<usize> = assignment.to_vec();
    bins.sort_unstable();
    bins.dedup();
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
    for &b in &bins {
        for s in 0..m {
            if caps[b] == caps[s] {
                pairs.push((overlap[b][s], b, s));
            }
        }
    }
    pairs.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut map: Vec<usize> = (0..m).collect();
    let mut bin_done = vec![false; m];
    let mut server_taken = vec![false; m];
    for (_, b, s) in pairs {
        if !bin_done[b] && !server_taken[s] {
            map[b] = s;
            bin_done[b] = true;
            server_taken[s] = true;
        }
    }
    map
}

impl Reallocator for ExactRepack {
    fn name(&self) -> &'static str {
        "exact"
    }

    fn plan(&self, snapshot: &ClusterSnapshot) -> ReallocationPlan {
        self.targets(snapshot)
            .and_then(|t| plan_from_targets(snapshot, &t))
            .unwrap_or_else(|| FfdRepack.plan(snapshot))
    }
}
