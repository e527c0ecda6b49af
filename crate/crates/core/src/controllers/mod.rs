//! Allocation controllers and the name registry that maps configuration
//! strings onto them.
//!
//! Three families exist: initial placement (maps every VM present at t = 0),
//! online placement (one arriving VM at a time) and reallocation (periodic
//! repacking that emits migrations). Placement and reallocation can be turned
//! off with the `none` sentinel; initial placement cannot.

use std::fmt;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Allocation, ServerSpec};

pub mod exact;
pub mod packing;
pub mod realloc;

pub use exact::{first_fit_decreasing, solve_min_servers_exact, Capacity, Demand, Solution, SolveBudget, SolveError};
pub use packing::{place_initial, place_online, FitRule, Residual};
pub use realloc::{ClusterSnapshot, PlacedVm, ReallocationPlan};

/// Generator handed to controllers that randomize.
pub type SimRng = ChaCha8Rng;

/// Slack for float capacity comparisons.
pub const CAPACITY_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ControllerError {
    #[error("unknown {family} controller `{name}`")]
    UnknownController { family: Family, name: String },
    #[error("an initial placement controller is required, `none` is not allowed")]
    NoneNotAllowed,
    #[error("no feasible server for vm `{0}`")]
    NoFeasibleServer(String),
}

/// Estimated demand of a VM as seen by the controllers.
#[derive(Debug, Clone, PartialEq)]
pub struct VmDemand {
    pub id: String,
    /// Estimated cpu units.
    pub cpu: f64,
    pub memory_mb: u32,
}

impl VmDemand {
    pub fn new(id: impl Into<String>, cpu: f64, memory_mb: u32) -> Self {
        Self {
            id: id.into(),
            cpu,
            memory_mb,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Initial,
    Placement,
    Reallocation,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Initial => "initial",
            Family::Placement => "placement",
            Family::Reallocation => "reallocation",
        })
    }
}

/// Computes the allocation of all VMs present when a simulation starts.
pub trait InitialPlacement: Send + Sync {
    fn name(&self) -> &'static str;

    fn place(&self, vms: &[VmDemand], servers: &[ServerSpec], rng: &mut SimRng) -> Result<Allocation, ControllerError>;

    /// Rule used when this controller also has to place arrivals because no
    /// online placement controller is configured.
    fn online_rule(&self) -> FitRule;
}

/// Picks a server for a VM arriving during the run.
pub trait OnlinePlacement: Send + Sync {
    fn name(&self) -> &'static str;

    /// Returns the index into `residuals` of the chosen server.
    fn choose(&self, vm: &VmDemand, residuals: &[Residual], rng: &mut SimRng) -> Result<usize, ControllerError>;
}

/// Periodically recomputes the allocation and emits migrations.
pub trait Reallocator: Send + Sync {
    fn name(&self) -> &'static str;

    fn plan(&self, snapshot: &ClusterSnapshot) -> ReallocationPlan;
}

/// Settings some controllers need at construction time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ControllerSettings {
    pub exact_budget: SolveBudget,
}

pub enum Resolved {
    Initial(Box<dyn InitialPlacement>),
    Placement(Box<dyn OnlinePlacement>),
    Reallocation(Box<dyn Reallocator>),
    Disabled,
}

impl Resolved {
    pub fn name(&self) -> &'static str {
        match self {
            Resolved::Initial(c) => c.name(),
            Resolved::Placement(c) => c.name(),
            Resolved::Reallocation(c) => c.name(),
            Resolved::Disabled => NONE,
        }
    }
}

impl fmt::Debug for Resolved {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Resolved({})", self.name())
    }
}

pub const NONE: &str = "none";

struct Entry {
    family: Family,
    name: &'static str,
    make: fn(&ControllerSettings) -> Resolved,
}

// New controllers need one line here.
static REGISTRY: &[Entry] = &[
    Entry { family: Family::Initial, name: "firstfit", make: |_| Resolved::Initial(Box::new(packing::Greedy::new("firstfit", FitRule::First, false))) },
    Entry { family: Family::Initial, name: "bestfit", make: |_| Resolved::Initial(Box::new(packing::Greedy::new("bestfit", FitRule::Best, false))) },
    Entry { family: Family::Initial, name: "worstfit", make: |_| Resolved::Initial(Box::new(packing::Greedy::new("worstfit", FitRule::Worst, false))) },
    Entry { family: Family::Initial, name: "ffd", make: |_| Resolved::Initial(Box::new(packing::Greedy::new("ffd", FitRule::First, true))) },
    Entry { family: Family::Initial, name: "random", make: |_| Resolved::Initial(Box::new(packing::Greedy::new("random", FitRule::Random, false))) },
    Entry { family: Family::Placement, name: "firstfit-online", make: |_| Resolved::Placement(Box::new(packing::Online::new("firstfit-online", FitRule::First))) },
    Entry { family: Family::Placement, name: "bestfit-online", make: |_| Resolved::Placement(Box::new(packing::Online::new("bestfit-online", FitRule::Best))) },
    Entry { family: Family::Placement, name: "worstfit-online", make: |_| Resolved::Placement(Box::new(packing::Online::new("worstfit-online", FitRule::Worst))) },
    Entry { family: Family::Placement, name: "random-online", make: |_| Resolved::Placement(Box::new(packing::Online::new("random-online", FitRule::Random))) },
    Entry { family: Family::Reallocation, name: "ffd-repack", make: |_| Resolved::Reallocation(Box::new(realloc::FfdRepack)) },
    Entry { family: Family::Reallocation, name: "exact", make: |s| Resolved::Reallocation(Box::new(realloc::ExactRepack::new(s.exact_budget.clone()))) },
];

/// All registered `(family, name)` pairs, excluding the `none` sentinel.
pub fn registry() -> impl Iterator<Item = (Family, &'static str)> {
    REGISTRY.iter().map(|e| (e.family, e.name))
}

pub fn resolve(name: &str, family: Family, settings: &ControllerSettings) -> Result<Resolved, ControllerError> {
    if name == NONE {
        return match family {
            Family::Initial => Err(ControllerError::NoneNotAllowed),
            _ => Ok(Resolved::Disabled),
        };
    }
    REGISTRY
        .iter()
        .find(|e| e.family == family && e.name == name)
        .map(|e| (e.make)(settings))
        .ok_or_else(|| ControllerError::UnknownController {
            family,
            name: name.to_string(),
        })
}

pub fn resolve_initial(name: &str) -> Result<Box<dyn InitialPlacement>, ControllerError> {
    match resolve(name, Family::Initial, &ControllerSettings::default())? {
        Resolved::Initial(c) => Ok(c),
        _ => unreachable!("initial family resolves to an initial controller"),
    }
}

pub fn resolve_placement(name: &str) -> Result<Option<Box<dyn OnlinePlacement>>, ControllerError> {
    match resolve(name, Family::Placement, &ControllerSettings::default())? {
        Resolved::Placement(c) => Ok(Some(c)),
        Resolved::Disabled => Ok(None),
        _ => unreachable!("placement family resolves to a placement controller"),
    }
}

pub fn resolve_reallocation(name: &str, settings: &ControllerSettings) -> Result<Option<Box<dyn Reallocator>>, ControllerError> {
    match resolve(name, Family::Reallocation, settings)? {
        Resolved::Reallocation(c) => Ok(Some(c)),
        Resolved::Disabled => Ok(None),
        _ => unreachable!("reallocation family resolves to a reallocation controller"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolves_known_names() {
        let s = ControllerSettings::default();
        assert_eq!(resolve("firstfit", Family::Initial, &s).unwrap().name(), "firstfit");
        assert!(matches!(
            resolve("nope", Family::Initial, &s),
            Err(ControllerError::UnknownController { .. })
        ));
        assert_eq!(resolve("none", Family::Initial, &s).unwrap_err(), ControllerError::NoneNotAllowed);
        assert!(matches!(resolve("none", Family::Placement, &s), Ok(Resolved::Disabled)));
        assert!(matches!(resolve("none", Family::Reallocation, &s), Ok(Resolved::Disabled)));
        // names are family-scoped
        assert!(resolve("ffd-repack", Family::Initial, &s).is_err());
        assert!(resolve("FirstFit", Family::Initial, &s).is_err());
    }

    #[test]
    fn registry_round_trips() {
        let s = ControllerSettings::default();
        for (family, name) in registry() {
            let c = resolve(name, family, &s).unwrap();
            assert_eq!(c.name(), name);
            let matches_family = matches!(
                (family, &c),
                (Family::Initial, Resolved::Initial(_))
                    | (Family::Placement, Resolved::Placement(_))
                    | (Family::Reallocation, Resolved::Reallocation(_))
            );
            assert!(matches_family, "{family} {name}");
        }
        let mut names: Vec<_> = registry().collect();
        let n = names.len();
        names.sort_by_key(|(f, n)| (f.to_string(), *n));
        names.dedup();
        assert_eq!(names.len(), n);
    }
}
