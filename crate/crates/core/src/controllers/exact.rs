//! Budgeted branch-and-bound that minimizes the number of servers used.
//!
//! Items are branched in decreasing cpu order, servers in index order. Among
//! still-empty servers of identical capacity only the lowest index is tried.
//! The incumbent starts from first-fit decreasing. A node's bound is the
//! servers already in use plus the fewest additional empty servers whose
//! combined capacity covers the remaining demand beyond the slack of the
//! used ones, taken per dimension.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::CAPACITY_EPS;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Demand {
    pub cpu: f64,
    pub memory: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capacity {
    pub cpu: f64,
    pub memory: f64,
}

/// Search limits. `None` means unlimited.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveBudget {
    #[serde(default)]
    pub max_nodes: Option<u64>,
    #[serde(default)]
    pub max_wall_ms: Option<u64>,
}

impl SolveBudget {
    pub fn unlimited() -> Self {
        Self::default()
    }

    pub fn nodes(max_nodes: u64) -> Self {
        Self {
            max_nodes: Some(max_nodes),
            max_wall_ms: None,
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.max_nodes.is_some() || self.max_wall_ms.is_some()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SolveError {
    #[error("item {0} fits on no server")]
    Infeasible(usize),
    #[error("no feasible assignment found within budget")]
    NoIncumbent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    /// Server index per item, in input order.
    pub assignment: Vec<usize>,
    pub servers_used: usize,
    /// True iff the search ran to completion within the budget.
    pub optimal: bool,
    /// Nodes generated, the root included.
    pub nodes: u64,
}

fn fits(d: &Demand, free: &Capacity) -> bool {
    d.cpu <= free.cpu + CAPACITY_EPS && d.memory <= free.memory + CAPACITY_EPS
}

/// First-fit decreasing over servers in index order. `None` if some item
/// does not fit.
pub fn first_fit_decreasing(demands: &[Demand], servers: &[Capacity]) -> Option<Vec<usize>> {
    let order = decreasing(demands);
    let mut free = servers.to_vec();
    let mut assignment = vec![usize::MAX; demands.len()];
    for &i in &order {
        let j = free.iter().position(|f| fits(&demands[i], f))?;
        free[j].cpu -= demands[i].cpu;
        free[j].memory -= demands[i].memory;
        assignment[i] = j;
    }
    Some(assignment)
}

fn decreasing(demands: &[Demand]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..demands.len()).collect();
    order.sort_by(|&a, &b| {
        demands[b]
            .cpu
            .total_cmp(&demands[a].cpu)
            .then(demands[b].memory.total_cmp(&demands[a].memory))
            .then(a.cmp(&b))
    });
    order
}

fn count_used(assignment: &[usize], servers: usize) -> usize {
    let mut used = vec![false; servers];
    for &j in assignment {
        used[j] = true;
    }
    used.iter().filter(|u| **u).count()
}

pub fn solve_min_servers_exact(demands: &[Demand], servers: &[Capacity], budget: &SolveBudget) -> Result<Solution, SolveError> {
    for (i, d) in demands.iter().enumerate() {
        if !servers.iter().any(|c| fits(d, c)) {
            return Err(SolveError::Infeasible(i));
        }
    }
    let incumbent = first_fit_decreasing(demands, servers);
    let mut search = Search {
        demands,
        servers,
        order: decreasing(demands),
        free: servers.to_vec(),
        used: vec![false; servers.len()],
        used_count: 0,
        current: vec![0; demands.len()],
        best: incumbent.as_ref().map_or(servers.len() + 1, |a| count_used(a, servers.len())),
        best_assignment: incumbent,
        nodes: 1,
        max_nodes: budget.max_nodes,
        deadline: budget.max_wall_ms.map(|ms| Instant::now() + Duration::from_millis(ms)),
        aborted: false,
        suffix_cpu: Vec::new(),
        suffix_mem: Vec::new(),
    };
    search.prepare();
    search.branch(0);
    let Search {
        best_assignment,
        best,
        aborted,
        nodes,
        ..
    } = search;
    match best_assignment {
        Some(assignment) => Ok(Solution {
            assignment,
            servers_used: best,
            optimal: !aborted,
            nodes,
        }),
        None if aborted => Err(SolveError::NoIncumbent),
        None => Err(SolveError::Infeasible(0)),
    }
}

struct Search<'a> {
    demands: &'a [Demand],
    servers: &'a [Capacity],
    order: Vec<usize>,
    free: Vec<Capacity>,
    used: Vec<bool>,
    used_count: usize,
    current: Vec<usize>,
    best: usize,
    best_assignment: Option<Vec<usize>>,
    nodes: u64,
    max_nodes: Option<u64>,
    deadline: Option<Instant>,
    aborted: bool,
    /// Remaining demand from each position of `order` to the end.
    suffix_cpu: Vec<f64>,
    suffix_mem: Vec<f64>,
}

impl Search<'_> {
    fn prepare(&mut self) {
        let n = self.order.len();
        self.suffix_cpu = vec![0.0; n + 1];
        self.suffix_mem = vec![0.0; n + 1];
        for k in (0..n).rev() {
            let d = self.demands[self.order[k]];
            self.suffix_cpu[k] = self.suffix_cpu[k + 1] + d.cpu;
            self.suffix_mem[k] = self.suffix_mem[k + 1] + d.memory;
        }
    }

    fn out_of_budget(&mut self) -> bool {
        if self.aborted {
            return true;
        }
        if self.max_nodes.is_some_and(|m| self.nodes >= m) {
            self.aborted = true;
        } else if self.nodes % 1024 == 0 && self.deadline.is_some_and(|d| Instant::now() >= d) {
            self.aborted = true;
        }
        self.aborted
    }

    /// Fewest empty servers needed for `need` in one dimension.
    fn extra_servers(&self, need: f64, cap: impl Fn(&Capacity) -> f64) -> usize {
        if need <= CAPACITY_EPS {
            return 0;
        }
        let mut caps: Vec<f64> = self
            .servers
            .iter()
            .zip(&self.used)
            .filter(|(_, u)| !**u)
            .map(|(c, _)| cap(c))
            .collect();
        caps.sort_by(|a, b| b.total_cmp(a));
        let mut covered = 0.0;
        for (k, c) in caps.iter().enumerate() {
            covered += c;
            if covered + CAPACITY_EPS >= need {
                return k + 1;
            }
        }
        usize::MAX / 2
    }

    fn lower_bound(&self, next: usize) -> usize {
        let (slack_cpu, slack_mem) = self
            .free
            .iter()
            .zip(&self.used)
            .filter(|(_, u)| **u)
            .fold((0.0, 0.0), |(c, m), (f, _)| (c + f.cpu, m + f.memory));
        let cpu = self.extra_servers(self.suffix_cpu[next] - slack_cpu, |c| c.cpu);
        let mem = self.extra_servers(self.suffix_mem[next] - slack_mem, |c| c.memory);
        self.used_count + cpu.max(mem)
    }

    /// Whether an empty server `j` duplicates an earlier empty server.
    fn is_symmetric_duplicate(&self, j: usize) -> bool {
        !self.used[j] && (0..j).any(|k| !self.used[k] && self.servers[k] == self.servers[j])
    }

    fn branch(&mut self, pos: usize) {
        if pos == self.order.len() {
            if self.used_count < self.best {
                self.best = self.used_count;
                self.best_assignment = Some(self.current.clone());
            }
            return;
        }
        let item = self.order[pos];
        let d = self.demands[item];
        for j in 0..self.servers.len() {
            if !fits(&d, &self.free[j]) || self.is_symmetric_duplicate(j) {
                continue;
            }
            if self.out_of_budget() {
                return;
            }
            self.nodes += 1;
            let opened = !self.used[j];
            if opened {
                self.used[j] = true;
                self.used_count += 1;
            }
            self.free[j].cpu -= d.cpu;
            self.free[j].memory -= d.memory;
            self.current[item] = j;

            if self.used_count < self.best && self.lower_bound(pos + 1) < self.best {
                self.branch(pos + 1);
            }

            self.free[j].cpu += d.cpu;
            self.free[j].memory += d.memory;
            if opened {
                self.used[j] = false;
                self.used_count -= 1;
            }
            if self.aborted {
                return;
            }
        }
    }
}
