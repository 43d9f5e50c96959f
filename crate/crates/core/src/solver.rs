//! Exact per-subclass minimization of the planner objective
//! `J_1 = omega1 * sum(phi) + omega2 * sum(r)` under the one-service,
//! capacity and equity constraints.
//!
//! [`solve_subclass`] is a best-first branch and bound that fixes travelers in
//! id order. Its bound charges every unfixed traveler the cost of its cheapest
//! service as if riding alone, which never overestimates because inconvenience
//! and travel time only grow with co-occupancy. [`brute_force_solve`] is the
//! enumeration oracle with the same tie-breaking: among all assignments within
//! `MONEY_TOL` of the optimum, the lexicographically smallest wins.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::market::{congested_time, gini, inconvenience, Assignment, PlannerConfig, MONEY_TOL};
use crate::network::{Preferences, Scenario, ServiceId, TravelerId};

/// Largest number of candidate assignments the oracle will enumerate.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("subclass is empty")]
    EmptySubclass,
    #[error("traveler {0} is not in the scenario")]
    UnknownTraveler(TravelerId),
    #[error("instance too large to enumerate: {size} candidate assignments exceed the limit of {limit}")]
    InstanceTooLarge { size: u128, limit: u128 },
    #[error("subclass {index}: {source}")]
    Subclass {
        index: usize,
        #[source]
        source: Box<SolverError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub subclass: Vec<TravelerId>,
    pub status: SolveStatus,
    pub assignment: Option<Assignment>,
    pub objective: Option<f64>,
    pub explored_nodes: u64,
    pub root_bound: f64,
}

impl SolveResult {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

#[derive(Debug, Clone)]
struct ServiceOption {
    service: ServiceId,
    slot: usize,
    base_time: f64,
    slope: f64,
    capacity: u32,
    share: f64,
    fallback: bool,
}

#[derive(Debug, Clone)]
struct Member {
    id: TravelerId,
    preferences: Preferences,
    v_bar: f64,
    options: Vec<ServiceOption>,
    alone_cost: f64,
}

/// Precomputed data for one subclass under fixed planner settings.
#[derive(Debug, Clone)]
pub struct SubclassProblem {
    members: Vec<Member>,
    capacities: Vec<u32>,
    config: PlannerConfig,
}

impl SubclassProblem {
    pub fn new(
        scenario: &Scenario,
        subclass: &[TravelerId],
        config: &PlannerConfig,
    ) -> Result<Self, SolverError> {
        if subclass.is_empty() {
            return Err(SolverError::EmptySubclass);
        }
        let mut ids = subclass.to_vec();
        ids.sort();
        ids.dedup();
        let capacities: Vec<u32> = scenario.services().iter().map(|s| s.capacity).collect();
        let mut members = Vec::with_capacity(ids.len());
        for id in ids {
            let traveler = scenario.traveler(id).ok_or(SolverError::UnknownTraveler(id))?;
            let routes = scenario.routes(id).ok_or(SolverError::UnknownTraveler(id))?;
            let options: Vec<ServiceOption> = routes
                .iter()
                .map(|route| {
                    let slot = scenario
                        .services()
                        .iter()
                        .position(|s| s.id == route.service)
                        .expect("route references a scenario service");
                    let svc = &scenario.services()[slot];
                    ServiceOption {
                        service: svc.id,
                        slot,
                        base_time: route.base_time,
                        slope: svc.congestion_slope,
                        capacity: svc.capacity,
                        share: scenario.cost_share(id, svc.id).expect("known pair"),
                        fallback: svc.fallback,
                    }
                })
                .collect();
            let mut member = Member {
                id,
                preferences: traveler.preferences.clone(),
                v_bar: traveler.max_willingness_to_pay,
                options,
                alone_cost: 0.0,
            };
            member.alone_cost = (0..member.options.len())
                .map(|o| member_cost(&member, o, 0, config).0)
                .fold(f64::INFINITY, f64::min);
            members.push(member);
        }
        Ok(SubclassProblem {
            members,
            capacities,
            config: config.clone(),
        })
    }

    pub fn travelers(&self) -> Vec<TravelerId> {
        self.members.iter().map(|m| m.id).collect()
    }

    /// Number of candidate services of each member, in member order.
    pub fn option_counts(&self) -> Vec<usize> {
        self.members.iter().map(|m| m.options.len()).collect()
    }

    /// Number of candidate assignments before capacity and equity filtering.
    pub fn search_space(&self) -> u128 {
        self.members
            .iter()
            .map(|m| m.options.len() as u128)
            .try_fold(1u128, |acc, k| acc.checked_mul(k))
            .unwrap_or(u128::MAX)
    }

    fn co_travelers(&self, choice: &[usize], i: usize) -> usize {
        let opt = &self.members[i].options[choice[i]];
        if opt.fallback {
            return 0;
        }
        choice
            .iter()
            .enumerate()
            .filter(|&(l, &c)| l != i && self.members[l].options[c].slot == opt.slot)
            .count()
    }

    fn usage(&self, choice: &[usize]) -> Vec<u32> {
        let mut usage = vec![0u32; self.capacities.len()];
        for (i, &c) in choice.iter().enumerate() {
            usage[self.members[i].options[c].slot] += 1;
        }
        usage
    }

    fn capacity_ok(&self, choice: &[usize]) -> bool {
        self.usage(choice)
            .iter()
            .zip(&self.capacities)
            .all(|(u, c)| u <= c)
    }

    /// Objective and inconvenience vector of a complete choice vector.
    fn evaluate(&self, choice: &[usize]) -> (f64, Vec<f64>) {
        let phis: Vec<f64> = (0..self.members.len())
            .map(|i| member_cost(&self.members[i], choice[i], self.co_travelers(choice, i), &self.config).1)
            .collect();
        let total_phi: f64 = phis.iter().sum();
        // operating costs are summed per service, services in index order
        let mut total_cost = 0.0;
        for slot in 0..self.capacities.len() {
            let mut service_cost = 0.0;
            for (i, &c) in choice.iter().enumerate() {
                let opt = &self.members[i].options[c];
                if opt.slot == slot {
                    service_cost += opt.share;
                }
            }
            total_cost += service_cost;
        }
        (
            self.config.omega1 * total_phi + self.config.omega2 * total_cost,
            phis,
        )
    }

    fn equity_ok(&self, phis: &[f64]) -> bool {
        match self.config.equity_gmax {
            Some(bound) => gini(phis) <= bound + MONEY_TOL,
            None => true,
        }
    }

    /// Planner objective of a complete assignment of this subclass, or `None`
    /// if it does not cover exactly the subclass with feasible services.
    pub fn objective_of(&self, assignment: &Assignment) -> Option<f64> {
        self.choice_of(assignment).map(|c| self.evaluate(&c).0)
    }

    /// Whether an assignment satisfies the capacity and equity constraints.
    pub fn is_feasible(&self, assignment: &Assignment) -> bool {
        match self.choice_of(assignment) {
            Some(c) => self.capacity_ok(&c) && self.equity_ok(&self.evaluate(&c).1),
            None => false,
        }
    }

    fn choice_of(&self, assignment: &Assignment) -> Option<Vec<usize>> {
        if assignment.travelers() != self.travelers().as_slice() {
            return None;
        }
        self.members
            .iter()
            .zip(assignment.services())
            .map(|(m, s)| m.options.iter().position(|o| o.service == *s))
            .collect()
    }

    /// Admissible bound for every completion of a prefix of choices (member
    /// order). The prefix is given as service ids.
    pub fn lower_bound(&self, prefix: &[ServiceId]) -> Option<f64> {
        let choice: Option<Vec<usize>> = self
            .members
            .iter()
            .zip(prefix)
            .map(|(m, s)| m.options.iter().position(|o| o.service == *s))
            .collect();
        Some(self.bound(&choice?))
    }

    fn bound(&self, prefix: &[usize]) -> f64 {
        let mut total = 0.0;
        for i in 0..prefix.len() {
            let psi = {
                let opt = &self.members[i].options[prefix[i]];
                if opt.fallback {
                    0
                } else {
                    prefix
                        .iter()
                        .enumerate()
                        .filter(|&(l, &c)| l != i && self.members[l].options[c].slot == opt.slot)
                        .count()
                }
            };
            total += member_cost(&self.members[i], prefix[i], psi, &self.config).0;
        }
        total
            + self.members[prefix.len()..]
                .iter()
                .map(|m| m.alone_cost)
                .sum::<f64>()
    }

    fn to_assignment(&self, choice: &[usize]) -> Assignment {
        Assignment::from_parts(
            self.travelers(),
            self.members
                .iter()
                .zip(choice)
                .map(|(m, &c)| m.options[c].service)
                .collect(),
        )
    }

    fn has_room(&self, prefix: &[usize], next: usize, option: usize) -> bool {
        let slot = self.members[next].options[option].slot;
        let used = prefix
            .iter()
            .enumerate()
            .filter(|&(l, &c)| self.members[l].options[c].slot == slot)
            .count() as u32;
        used < self.capacities[slot]
    }
}

/// Weighted cost `omega1 * phi + omega2 * r` of one member on one option,
/// together with `phi`.
fn member_cost(member: &Member, option: usize, psi: usize, config: &PlannerConfig) -> (f64, f64) {
    let opt = &member.options[option];
    let theta = congested_time(opt.base_time, opt.slope, opt.capacity, psi);
    let phi = inconvenience(
        &member.preferences,
        member.v_bar,
        theta,
        psi,
        opt.service,
        config.co_traveler_penalty,
    );
    (config.omega1 * phi + config.omega2 * opt.share, phi)
}

#[derive(Debug, Clone, PartialEq)]
struct SearchNode {
    bound: f64,
    prefix: Vec<usize>,
}

impl Eq for SearchNode {}

impl Ord for SearchNode {
    // BinaryHeap is a max-heap: smallest bound first, then lexicographic prefix.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.prefix.cmp(&self.prefix))
    }
}

impl PartialOrd for SearchNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Exact branch and bound for one subclass.
pub fn solve_subclass(
    subclass: &[TravelerId],
    scenario: &Scenario,
    config: &PlannerConfig,
) -> Result<SolveResult, SolverError> {
    let problem = SubclassProblem::new(scenario, subclass, config)?;
    Ok(solve_problem(&problem))
}

pub fn solve_problem(problem: &SubclassProblem) -> SolveResult {
    let n = problem.members.len();
    let root_bound = problem.bound(&[]);
    let mut explored = 0u64;

    // Phase 1: best-first search for the optimal value.
    let mut incumbent = f64::INFINITY;
    let mut heap = BinaryHeap::new();
    heap.push(SearchNode {
        bound: root_bound,
        prefix: Vec::new(),
    });
    while let Some(node) = heap.pop() {
        if node.bound > incumbent + MONEY_TOL {
            break;
        }
        explored += 1;
        if node.prefix.len() == n {
            let (objective, phis) = problem.evaluate(&node.prefix);
            if problem.equity_ok(&phis) && objective < incumbent {
                incumbent = objective;
            }
            continue;
        }
        let next = node.prefix.len();
        for option in 0..problem.members[next].options.len() {
            if !problem.has_room(&node.prefix, next, option) {
                continue;
            }
            let mut prefix = node.prefix.clone();
            prefix.push(option);
            let bound = problem.bound(&prefix);
            if bound <= incumbent + MONEY_TOL {
                heap.push(SearchNode { bound, prefix });
            }
        }
    }

    if !incumbent.is_finite() {
        return SolveResult {
            subclass: problem.travelers(),
            status: SolveStatus::Infeasible,
            assignment: None,
            objective: None,
            explored_nodes: explored,
            root_bound,
        };
    }

    // Phase 2: lexicographic depth-first pass for the smallest assignment
    // within tolerance of the optimum.
    let mut prefix = Vec::with_capacity(n);
    let found = lex_first(problem, &mut prefix, incumbent, &mut explored)
        .expect("phase 1 optimum is reachable");
    let (objective, _) = problem.evaluate(&found);
    SolveResult {
        subclass: problem.travelers(),
        status: SolveStatus::Optimal,
        assignment: Some(problem.to_assignment(&found)),
        objective: Some(objective),
        explored_nodes: explored,
        root_bound,
    }
}

fn lex_first(
    problem: &SubclassProblem,
    prefix: &mut Vec<usize>,
    optimum: f64,
    explored: &mut u64,
) -> Option<Vec<usize>> {
    *explored += 1;
    if prefix.len() == problem.members.len() {
        let (objective, phis) = problem.evaluate(prefix);
        return (problem.equity_ok(&phis) && objective <= optimum + MONEY_TOL).then(|| prefix.clone());
    }
    let next = prefix.len();
    for option in 0..problem.members[next].options.len() {
        if !problem.has_room(prefix, next, option) {
            continue;
        }
        prefix.push(option);
        if problem.bound(prefix) <= optimum + 2.0 * MONEY_TOL {
            if let Some(found) = lex_first(problem, prefix, optimum, explored) {
                return Some(found);
            }
        }
        prefix.pop();
    }
    None
}

/// Exhaustive enumeration with the same tie-breaking as [`solve_subclass`].
pub fn brute_force_solve(
    subclass: &[TravelerId],
    scenario: &Scenario,
    config: &PlannerConfig,
) -> Result<SolveResult, SolverError> {
    let problem = SubclassProblem::new(scenario, subclass, config)?;
    brute_force_problem(&problem)
}

pub fn brute_force_problem(problem: &SubclassProblem) -> Result<SolveResult, SolverError> {
    let size = problem.search_space();
    if size > ENUMERATION_LIMIT {
        return Err(SolverError::InstanceTooLarge {
            size,
            limit: ENUMERATION_LIMIT,
        });
    }
    let counts = problem.option_counts();
    let mut candidates: Vec<(Vec<usize>, f64)> = Vec::new();
    let mut choice = vec![0usize; counts.len()];
    let mut explored = 0u64;
    loop {
        explored += 1;
        if problem.capacity_ok(&choice) {
            let (objective, phis) = problem.evaluate(&choice);
            if problem.equity_ok(&phis) {
                candidates.push((choice.clone(), objective));
            }
        }
        // odometer with the last traveler varying fastest keeps lexicographic order
        let mut advanced = false;
        for pos in (0..counts.len()).rev() {
            choice[pos] += 1;
            if choice[pos] < counts[pos] {
                advanced = true;
                break;
            }
            choice[pos] = 0;
        }
        if !advanced {
            break;
        }
    }
    let root_bound = problem.bound(&[]);
    let optimum = candidates
        .iter()
        .map(|c| c.1)
        .fold(f64::INFINITY, f64::min);
    match candidates.into_iter().find(|c| c.1 <= optimum + MONEY_TOL) {
        Some((best, objective)) => Ok(SolveResult {
            subclass: problem.travelers(),
            status: SolveStatus::Optimal,
            assignment: Some(problem.to_assignment(&best)),
            objective: Some(objective),
            explored_nodes: explored,
            root_bound,
        }),
        None => Ok(SolveResult {
            subclass: problem.travelers(),
            status: SolveStatus::Infeasible,
            assignment: None,
            objective: None,
            explored_nodes: explored,
            root_bound,
        }),
    }
}

/// Solves every subclass independently, in subclass order.
pub fn solve_all(scenario: &Scenario, config: &PlannerConfig) -> Result<Vec<SolveResult>, SolverError> {
    scenario
        .partition()
        .subclasses
        .par_iter()
        .enumerate()
        .map(|(index, members)| {
            solve_subclass(members, scenario, config).map_err(|e| SolverError::Subclass {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}
