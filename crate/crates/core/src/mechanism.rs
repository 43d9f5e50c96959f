//! Clarke-pivot payments for the constrained market and empirical verifiers
//! for incentive compatibility, individual rationality and weak budget
//! balance.
//!
//! With `c_l = omega1 * phi_l + omega2 * r_l` the weighted cost of traveler
//! `l` at the optimum and `J*_{-i}` the optimal objective of the subclass
//! without `i`, the Clarke payment is
//!
//! ```text
//! p_i = omega2 * r_i + (sum_{l != i} c_l - J*_{-i})
//! ```
//!
//! i.e. the traveler's own operating-cost share plus the externality it
//! imposes on the rest of the subclass. With unit weights this is the
//! classical pivot rule in which the operator's cost is borne by the
//! allocation, so truthful reporting is dominant whenever the allocation is
//! unconstrained.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::market::{
    congested_time, evaluate_outcome, inconvenience, MarketError, MarketOutcome, PlannerConfig,
    MONEY_TOL,
};
use crate::network::{Preferences, Scenario, ScenarioError, ServiceId, TravelerId};
use crate::solver::{solve_subclass, SolveResult, SolveStatus, SolverError, SubclassProblem, ENUMERATION_LIMIT};

#[derive(Debug, thiserror::Error)]
pub enum MechanismError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("subclass containing traveler {0} has no feasible assignment")]
    Infeasible(TravelerId),
    #[error("marginal economy without traveler {0} has no feasible assignment")]
    MarginalInfeasible(TravelerId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PaymentMode {
    Clarke,
    #[default]
    ClarkeFloored,
}

impl std::str::FromStr for PaymentMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "clarke" => Ok(PaymentMode::Clarke),
            "clarke-floored" => Ok(PaymentMode::ClarkeFloored),
            other => Err(format!("unknown payment mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct PaymentRule {
    pub mode: PaymentMode,
}

impl PaymentRule {
    pub const CLARKE: PaymentRule = PaymentRule {
        mode: PaymentMode::Clarke,
    };
    pub const FLOORED: PaymentRule = PaymentRule {
        mode: PaymentMode::ClarkeFloored,
    };

    /// Whether payments are clamped from below at the operating-cost share.
    pub fn floor_active(&self) -> bool {
        self.mode == PaymentMode::ClarkeFloored
    }
}

/// Solved subclass together with its payments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubclassPayments {
    pub solve: SolveResult,
    pub payments: Vec<f64>,
    /// `J*_{-i}` per traveler; `None` when the others alone are infeasible.
    pub marginal_optima: Vec<Option<f64>>,
    /// `sum_{l != i} c_l - J*_{-i}` per traveler; `None` when unbounded below.
    pub externalities: Vec<Option<f64>>,
    pub outcome: MarketOutcome,
}

/// Weighted cost `omega1 * phi + omega2 * r` of every traveler in an outcome.
fn weighted_costs(outcome: &MarketOutcome, config: &PlannerConfig) -> Vec<f64> {
    outcome
        .travelers
        .iter()
        .map(|t| config.omega1 * t.inconvenience + config.omega2 * t.cost_share)
        .collect()
}

/// Optimal objective of the subclass with one traveler removed, `None` if
/// the remaining travelers have no feasible assignment.
fn marginal_optimum(
    subclass: &[TravelerId],
    removed: TravelerId,
    scenario: &Scenario,
    config: &PlannerConfig,
) -> Result<Option<f64>, MechanismError> {
    let rest: Vec<TravelerId> = subclass.iter().copied().filter(|&t| t != removed).collect();
    if rest.is_empty() {
        return Ok(Some(0.0));
    }
    Ok(solve_subclass(&rest, scenario, config)?.objective)
}

/// Solves the subclass and computes Clarke payments for every member.
pub fn clarke_payments(
    subclass: &[TravelerId],
    scenario: &Scenario,
    config: &PlannerConfig,
    rule: PaymentRule,
) -> Result<SubclassPayments, MechanismError> {
    let solve = solve_subclass(subclass, scenario, config)?;
    let members = solve.subclass.clone();
    let marginal_optima = members
        .iter()
        .map(|&i| marginal_optimum(&members, i, scenario, config))
        .collect::<Result<Vec<_>, _>>()?;
    payments_for(solve, marginal_optima, scenario, config, rule)
}

fn payments_for(
    solve: SolveResult,
    marginal_optima: Vec<Option<f64>>,
    scenario: &Scenario,
    config: &PlannerConfig,
    rule: PaymentRule,
) -> Result<SubclassPayments, MechanismError> {
    let assignment = solve
        .assignment
        .clone()
        .ok_or(MechanismError::Infeasible(solve.subclass[0]))?;
    let zero = vec![0.0; assignment.len()];
    let provisional = evaluate_outcome(&assignment, &zero, scenario, config)?;
    let costs = weighted_costs(&provisional, config);
    let mut payments = Vec::with_capacity(costs.len());
    let mut externalities = Vec::with_capacity(costs.len());
    for (i, t) in provisional.travelers.iter().enumerate() {
        let others: f64 = costs
            .iter()
            .enumerate()
            .filter(|&(l, _)| l != i)
            .map(|(_, c)| c)
            .sum();
        let externality = marginal_optima[i].map(|m| others - m);
        // an infeasible marginal economy is an unbounded pivot term; only the floor prices it
        let p = match (externality, rule.floor_active()) {
            (Some(e), false) => config.omega2 * t.cost_share + e,
            (Some(e), true) => (config.omega2 * t.cost_share + e).max(t.cost_share),
            (None, true) => t.cost_share,
            (None, false) => return Err(MechanismError::MarginalInfeasible(t.traveler)),
        };
        payments.push(p);
        externalities.push(externality);
    }
    let outcome = evaluate_outcome(&assignment, &payments, scenario, config)?;
    Ok(SubclassPayments {
        solve,
        payments,
        marginal_optima,
        externalities,
        outcome,
    })
}

/// Result of running the full market on one subclass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubclassRun {
    pub index: usize,
    pub solve: SolveResult,
    pub payments: Option<SubclassPayments>,
}

/// Solve and price every subclass. Infeasible subclasses carry no payments.
pub fn run_market(
    scenario: &Scenario,
    config: &PlannerConfig,
    rule: PaymentRule,
) -> Result<Vec<SubclassRun>, MechanismError> {
    scenario
        .partition()
        .subclasses
        .par_iter()
        .enumerate()
        .map(|(index, members)| {
            let solve = solve_subclass(members, scenario, config)?;
            let payments = match solve.status {
                SolveStatus::Infeasible => None,
                SolveStatus::Optimal => Some(clarke_payments(members, scenario, config, rule)?),
            };
            Ok(SubclassRun {
                index,
                solve,
                payments,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Property {
    Ic,
    Ir,
    Wbb,
}

impl std::str::FromStr for Property {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ic" => Ok(Property::Ic),
            "ir" => Ok(Property::Ir),
            "wbb" => Ok(Property::Wbb),
            other => Err(format!("unknown property `{other}` (expected ic, ir or wbb)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    HoldsOnTestedGrid,
    Violated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub traveler: TravelerId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub misreport: Option<Preferences>,
    /// Utility gain of the deviation (IC, IR) or payment shortfall (WBB).
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub property: Property,
    pub verdict: Verdict,
    pub witnesses: Vec<Witness>,
    pub instances_tested: usize,
    /// Aggregate `sum(p_i - r_i)` (weak budget balance only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregate_surplus: Option<f64>,
    pub findings: Vec<String>,
}

impl PropertyReport {
    fn new(property: Property, witnesses: Vec<Witness>, instances_tested: usize) -> Self {
        PropertyReport {
            property,
            verdict: if witnesses.is_empty() {
                Verdict::HoldsOnTestedGrid
            } else {
                Verdict::Violated
            },
            witnesses,
            instances_tested,
            aggregate_surplus: None,
            findings: Vec::new(),
        }
    }

    pub fn holds(&self) -> bool {
        self.verdict == Verdict::HoldsOnTestedGrid
    }
}

/// Deterministic misreport grid over `(theta, eta, delta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisreportGrid {
    pub theta_factors: Vec<f64>,
    pub eta_offsets: Vec<i64>,
    pub delta_levels: Vec<f64>,
}

impl Default for MisreportGrid {
    fn default() -> Self {
        MisreportGrid {
            theta_factors: vec![0.5, 0.875, 1.25, 1.625, 2.0],
            eta_offsets: vec![-2, -1, 0, 1, 2],
            delta_levels: vec![0.0, 0.25, 0.5, 0.75, 1.0],
        }
    }
}

impl MisreportGrid {
    pub fn len(&self) -> usize {
        self.theta_factors.len() * self.eta_offsets.len() * self.delta_levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid misreports of one traveler. Each service's reported value of time
    /// is the grid level rotated by a seeded per-service offset, so different
    /// services receive different levels at the same grid point.
    pub fn misreports(&self, truth: &Preferences, services: &[ServiceId], seed: u64, traveler: TravelerId) -> Vec<Preferences> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::from(traveler.0));
        let levels = self.delta_levels.len().max(1);
        let shifts: Vec<usize> = services.iter().map(|_| rng.gen_range(0..levels)).collect();
        let mut out = Vec::with_capacity(self.len());
        for &factor in &self.theta_factors {
            for &offset in &self.eta_offsets {
                for level in 0..self.delta_levels.len() {
                    let mut p = truth.clone();
                    p.preferred_travel_time = truth.preferred_travel_time * factor;
                    p.max_co_travelers = services
                        .iter()
                        .map(|&s| {
                            let eta = i64::from(truth.max_co_travelers(s)) + offset;
                            (s, eta.max(0) as u32)
                        })
                        .collect();
                    p.value_of_time = services
                        .iter()
                        .zip(&shifts)
                        .map(|(&s, shift)| (s, self.delta_levels[(level + shift) % levels]))
                        .collect();
                    out.push(p);
                }
            }
        }
        out
    }
}

fn check_enumerable(scenario: &Scenario, config: &PlannerConfig) -> Result<(), MechanismError> {
    for members in scenario.partition().subclasses {
        let problem = SubclassProblem::new(scenario, &members, config)?;
        let size = problem.search_space();
        if size > ENUMERATION_LIMIT {
            return Err(SolverError::InstanceTooLarge {
                size,
                limit: ENUMERATION_LIMIT,
            }
            .into());
        }
    }
    Ok(())
}

/// Searches the misreport grid for profitable deviations. A traveler's
/// utility under a misreport is evaluated with its true preferences.
pub fn verify_incentive_compatibility(
    scenario: &Scenario,
    config: &PlannerConfig,
    rule: PaymentRule,
    grid: &MisreportGrid,
    seed: u64,
) -> Result<PropertyReport, MechanismError> {
    check_enumerable(scenario, config)?;
    let service_ids: Vec<ServiceId> = scenario.services().iter().map(|s| s.id).collect();
    let mut cells = Vec::new();
    let mut truthful = Vec::new();
    for members in scenario.partition().subclasses {
        let priced = clarke_payments(&members, scenario, config, rule)?;
        for (pos, &i) in priced.solve.subclass.iter().enumerate() {
            truthful.push((i, priced.outcome.travelers[pos].utility));
            let truth = &scenario.traveler(i).expect("member").preferences;
            for (index, report) in grid.misreports(truth, &service_ids, seed, i).into_iter().enumerate() {
                cells.push((members.clone(), i, index, report));
            }
        }
    }

    let evaluated: Vec<Result<Option<Witness>, MechanismError>> = cells
        .par_iter()
        .map(|(members, i, index, report)| {
            let reported = scenario.with_preferences(*i, report.clone())?;
            let priced = match clarke_payments(members, &reported, config, rule) {
                Ok(p) => p,
                Err(MechanismError::Infeasible(_)) | Err(MechanismError::MarginalInfeasible(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            let assignment = &priced.outcome.assignment;
            let true_view = evaluate_outcome(assignment, &priced.payments, scenario, config)?;
            let deviated = true_view.traveler(*i).expect("member").utility;
            let baseline = truthful.iter().find(|(t, _)| t == i).expect("member").1;
            let gain = deviated - baseline;
            Ok((gain > MONEY_TOL).then(|| Witness {
                traveler: *i,
                grid_index: Some(*index),
                misreport: Some(report.clone()),
                gain,
            }))
        })
        .collect();

    let mut witnesses = Vec::new();
    for cell in evaluated {
        if let Some(w) = cell? {
            witnesses.push(w);
        }
    }
    Ok(PropertyReport::new(Property::Ic, witnesses, cells.len()))
}

/// Opt-out utility: the traveler alone on its own vehicle, paying the
/// fallback operating cost.
pub fn opt_out_utility(scenario: &Scenario, traveler: TravelerId, config: &PlannerConfig) -> Option<f64> {
    let t = scenario.traveler(traveler)?;
    let fallback = scenario.fallback();
    let route = scenario.route(traveler, fallback.id)?;
    let theta = congested_time(route.base_time, fallback.congestion_slope, fallback.capacity, 0);
    let phi = inconvenience(
        &t.preferences,
        t.max_willingness_to_pay,
        theta,
        0,
        fallback.id,
        config.co_traveler_penalty,
    );
    Some(t.max_willingness_to_pay - phi - scenario.cost_share(traveler, fallback.id)?)
}

pub fn verify_individual_rationality(
    scenario: &Scenario,
    config: &PlannerConfig,
    rule: PaymentRule,
) -> Result<PropertyReport, MechanismError> {
    let runs = run_market(scenario, config, rule)?;
    let mut witnesses = Vec::new();
    let mut tested = 0;
    let mut findings = Vec::new();
    for run in &runs {
        let Some(priced) = &run.payments else {
            findings.push(format!("subclass {} infeasible; not tested", run.index));
            continue;
        };
        for t in &priced.outcome.travelers {
            tested += 1;
            let outside = opt_out_utility(scenario, t.traveler, config).expect("fallback always feasible");
            let gain = outside - t.utility;
            if gain > MONEY_TOL {
                witnesses.push(Witness {
                    traveler: t.traveler,
                    grid_index: None,
                    misreport: None,
                    gain,
                });
            }
        }
    }
    let mut report = PropertyReport::new(Property::Ir, witnesses, tested);
    report.findings = findings;
    Ok(report)
}

/// Checks `p_i >= r_i` per traveler and logs the aggregate surplus together
/// with any negative externality (marginal-economy inconsistency).
pub fn verify_weak_budget_balance(
    scenario: &Scenario,
    config: &PlannerConfig,
    rule: PaymentRule,
) -> Result<PropertyReport, MechanismError> {
    let runs = run_market(scenario, config, rule)?;
    let mut witnesses = Vec::new();
    let mut findings = Vec::new();
    let mut tested = 0;
    let mut surplus = 0.0;
    for run in &runs {
        let Some(priced) = &run.payments else {
            findings.push(format!("subclass {} infeasible; not tested", run.index));
            continue;
        };
        for (pos, t) in priced.outcome.travelers.iter().enumerate() {
            tested += 1;
            let margin = t.payment - t.cost_share;
            surplus += margin;
            if margin < -MONEY_TOL {
                witnesses.push(Witness {
                    traveler: t.traveler,
                    grid_index: None,
                    misreport: None,
                    gain: -margin,
                });
            }
            match priced.externalities[pos] {
                Some(e) if e < -MONEY_TOL => findings.push(format!(
                    "traveler {} has negative externality {e}",
                    t.traveler
                )),
                None => findings.push(format!(
                    "the others are infeasible without traveler {}",
                    t.traveler
                )),
                _ => {}
            }
        }
    }
    let mut report = PropertyReport::new(Property::Wbb, witnesses, tested);
    report.aggregate_surplus = Some(surplus);
    report.findings = findings;
    Ok(report)
}
