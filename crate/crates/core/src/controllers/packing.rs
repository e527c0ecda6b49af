//! Greedy bin-packing placement rules.

use rand::{Rng, SeedableRng};

use super::{resolve_initial, ControllerError, InitialPlacement, OnlinePlacement, SimRng, VmDemand, CAPACITY_EPS};
use crate::model::{Allocation, ServerSpec};

/// Free capacity of one server under estimated demands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub cpu: f64,
    pub memory_mb: u64,
}

impl Residual {
    pub fn of(server: &ServerSpec) -> Self {
        Self {
            cpu: server.placeable_cpu(),
            memory_mb: u64::from(server.memory_mb),
        }
    }

    pub fn fits(&self, vm: &VmDemand) -> bool {
        vm.cpu <= self.cpu + CAPACITY_EPS && u64::from(vm.memory_mb) <= self.memory_mb
    }

    pub fn take(&mut self, vm: &VmDemand) {
        self.cpu -= vm.cpu;
        self.memory_mb -= u64::from(vm.memory_mb);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitRule {
    /// Lowest-index feasible server.
    First,
    /// Feasible server with the least cpu left after placement.
    Best,
    /// Feasible server with the most cpu left after placement.
    Worst,
    /// Uniform choice among feasible servers.
    Random,
}

impl FitRule {
    /// Ties go to the lowest index.
    pub fn pick(self, vm: &VmDemand, residuals: &[Residual], rng: &mut SimRng) -> Option<usize> {
        let mut feasible = residuals.iter().enumerate().filter(|(_, r)| r.fits(vm));
        match self {
            FitRule::First => feasible.next().map(|(i, _)| i),
            FitRule::Best => feasible
                .fold(None, |best: Option<(usize, f64)>, (i, r)| match best {
                    Some((_, c)) if c <= r.cpu => best,
                    _ => Some((i, r.cpu)),
                })
                .map(|(i, _)| i),
            FitRule::Worst => feasible
                .fold(None, |best: Option<(usize, f64)>, (i, r)| match best {
                    Some((_, c)) if c >= r.cpu => best,
                    _ => Some((i, r.cpu)),
                })
                .map(|(i, _)| i),
            FitRule::Random => {
                let candidates: Vec<usize> = feasible.map(|(i, _)| i).collect();
                if candidates.is_empty() {
                    None
                } else {
                    Some(candidates[rng.random_range(0..candidates.len())])
                }
            }
        }
    }
}

/// Places VMs one by one with a fit rule, optionally sorting them by
/// decreasing demand first.
pub(crate) struct Greedy {
    name: &'static str,
    rule: FitRule,
    decreasing: bool,
}

impl Greedy {
    pub(crate) fn new(name: &'static str, rule: FitRule, decreasing: bool) -> Self {
        Self { name, rule, decreasing }
    }
}

/// Demand-descending order, ties by VM id.
fn decreasing_order(vms: &[VmDemand]) -> Vec<&VmDemand> {
    let mut order: Vec<&VmDemand> = vms.iter().collect();
    order.sort_by(|a, b| b.cpu.total_cmp(&a.cpu).then_with(|| a.id.cmp(&b.id)));
    order
}

impl InitialPlacement for Greedy {
    fn name(&self) -> &'static str {
        self.name
    }

    fn place(&self, vms: &[VmDemand], servers: &[ServerSpec], rng: &mut SimRng) -> Result<Allocation, ControllerError> {
        let order = if self.decreasing {
            decreasing_order(vms)
        } else {
            vms.iter().collect()
        };
        let mut residuals: Vec<Residual> = servers.iter().map(Residual::of).collect();
        let mut alloc = Allocation::new();
        for vm in order {
            let i = self
                .rule
                .pick(vm, &residuals, rng)
                .ok_or_else(|| ControllerError::NoFeasibleServer(vm.id.clone()))?;
            residuals[i].take(vm);
            alloc.assign(vm.id.clone(), servers[i].id.clone());
        }
        Ok(alloc)
    }

    fn online_rule(&self) -> FitRule {
        self.rule
    }
}

pub(crate) struct Online {
    name: &'static str,
    rule: FitRule,
}

impl Online {
    pub(crate) fn new(name: &'static str, rule: FitRule) -> Self {
        Self { name, rule }
    }
}

impl OnlinePlacement for Online {
    fn name(&self) -> &'static str {
        self.name
    }

    fn choose(&self, vm: &VmDemand, residuals: &[Residual], rng: &mut SimRng) -> Result<usize, ControllerError> {
        place_online(vm, residuals, self.rule, rng)
    }
}

pub fn place_online(vm: &VmDemand, residuals: &[Residual], rule: FitRule, rng: &mut SimRng) -> Result<usize, ControllerError> {
    rule.pick(vm, residuals, rng)
        .ok_or_else(|| ControllerError::NoFeasibleServer(vm.id.clone()))
}

/// Initial placement by controller name with a fresh generator for `seed`.
pub fn place_initial(vms: &[VmDemand], servers: &[ServerSpec], strategy: &str, seed: u64) -> Result<Allocation, ControllerError> {
    let controller = resolve_initial(strategy)?;
    controller.place(vms, servers, &mut SimRng::seed_from_u64(seed))
}
