//! Per-traveler market quantities for one subclass assignment: co-travelers,
//! experienced travel time, inconvenience, valuation, operating cost, utility
//! and the planner objective.

use serde::{Deserialize, Serialize};

use crate::network::{Preferences, Scenario, ServiceId, Traveler, TravelerId};

/// Comparison tolerance for money and objective values.
pub const MONEY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MarketError {
    #[error("traveler {0} is not part of the assignment")]
    UnknownTraveler(TravelerId),
    #[error("service {service} is not feasible for traveler {traveler}")]
    InfeasibleService {
        traveler: TravelerId,
        service: ServiceId,
    },
    #[error("inconvenience {phi} outside [0, {v_bar}]")]
    InconvenienceOutOfRange { phi: f64, v_bar: f64 },
    #[error("assignment is malformed: {0}")]
    Malformed(String),
}

/// Planner weights and constraint settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerConfig {
    pub omega1: f64,
    pub omega2: f64,
    /// Upper bound on the Gini coefficient of inconvenience; `None` disables
    /// the equity constraint.
    #[serde(default)]
    pub equity_gmax: Option<f64>,
    /// Money per co-traveler beyond the tolerated count.
    pub co_traveler_penalty: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            omega1: 1.0,
            omega2: 1.0,
            equity_gmax: None,
            co_traveler_penalty: 1.0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.omega1.is_finite() && self.omega2.is_finite()) || self.omega1 < 0.0 || self.omega2 < 0.0 {
            return Err("weights must be finite and non-negative".into());
        }
        if self.omega1 + self.omega2 <= 0.0 {
            return Err("omega1 + omega2 must be positive".into());
        }
        if let Some(g) = self.equity_gmax {
            if !(0.0..=1.0).contains(&g) {
                return Err(format!("equity bound {g} outside [0, 1]"));
            }
        }
        if !(self.co_traveler_penalty.is_finite() && self.co_traveler_penalty >= 0.0) {
            return Err("co-traveler penalty must be non-negative".into());
        }
        Ok(())
    }
}

/// Binary traveler-by-service assignment of one subclass, stored as the chosen
/// service per traveler so that every row sums to exactly one.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Assignment {
    travelers: Vec<TravelerId>,
    services: Vec<ServiceId>,
}

impl Assignment {
    pub fn new(pairs: Vec<(TravelerId, ServiceId)>) -> Result<Self, MarketError> {
        let mut pairs = pairs;
        pairs.sort_by_key(|p| p.0);
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(MarketError::Malformed(
                "a traveler appears in more than one row".into(),
            ));
        }
        let (travelers, services) = pairs.into_iter().unzip();
        Ok(Assignment {
            travelers,
            services,
        })
    }

    /// Builds an assignment from the subclass members (sorted by id) and the
    /// service chosen for each, in the same order.
    pub(crate) fn from_parts(travelers: Vec<TravelerId>, services: Vec<ServiceId>) -> Self {
        debug_assert_eq!(travelers.len(), services.len());
        debug_assert!(travelers.windows(2).all(|w| w[0] < w[1]));
        Assignment {
            travelers,
            services,
        }
    }

    pub fn travelers(&self) -> &[TravelerId] {
        &self.travelers
    }

    pub fn services(&self) -> &[ServiceId] {
        &self.services
    }

    pub fn len(&self) -> usize {
        self.travelers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.travelers.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (TravelerId, ServiceId)> + '_ {
        self.travelers.iter().copied().zip(self.services.iter().copied())
    }

    pub fn service_of(&self, traveler: TravelerId) -> Option<ServiceId> {
        self.travelers
            .binary_search(&traveler)
            .ok()
            .map(|pos| self.services[pos])
    }

    /// Entry `a_ij` of the binary matrix.
    pub fn entry(&self, traveler: TravelerId, service: ServiceId) -> u8 {
        u8::from(self.service_of(traveler) == Some(service))
    }

    /// Dense 0/1 matrix over the given service order.
    pub fn to_matrix(&self, services: &[ServiceId]) -> Vec<Vec<u8>> {
        self.travelers
            .iter()
            .map(|&t| services.iter().map(|&s| self.entry(t, s)).collect())
            .collect()
    }

    pub fn usage(&self, service: ServiceId) -> usize {
        self.services.iter().filter(|&&s| s == service).count()
    }
}

/// Number of other subclass members on the same service. Travelers on the
/// fallback drive their own vehicles and never have co-travelers.
pub fn co_travelers(
    assignment: &Assignment,
    traveler: TravelerId,
    scenario: &Scenario,
) -> Result<usize, MarketError> {
    let service = assignment
        .service_of(traveler)
        .ok_or(MarketError::UnknownTraveler(traveler))?;
    if scenario.service(service).is_some_and(|s| s.fallback) {
        return Ok(0);
    }
    Ok(assignment.usage(service) - 1)
}

/// `tau_j * (1 + alpha_j * psi / C_j)`.
pub fn congested_time(base_time: f64, slope: f64, capacity: u32, psi: usize) -> f64 {
    base_time * (1.0 + slope * psi as f64 / capacity as f64)
}

pub fn experienced_travel_time(
    assignment: &Assignment,
    traveler: TravelerId,
    scenario: &Scenario,
) -> Result<f64, MarketError> {
    let service = assignment
        .service_of(traveler)
        .ok_or(MarketError::UnknownTraveler(traveler))?;
    let route = scenario
        .route(traveler, service)
        .ok_or(MarketError::InfeasibleService { traveler, service })?;
    let svc = scenario.service(service).expect("route service exists");
    let psi = co_travelers(assignment, traveler, scenario)?;
    Ok(congested_time(route.base_time, svc.congestion_slope, svc.capacity, psi))
}

/// `min(v_bar, delta_ij * (theta_tilde - theta)^+ + gamma * (psi - eta_ij)^+)`.
pub fn inconvenience(
    preferences: &Preferences,
    v_bar: f64,
    theta_tilde: f64,
    psi: usize,
    service: ServiceId,
    co_traveler_penalty: f64,
) -> f64 {
    let delay = (theta_tilde - preferences.preferred_travel_time).max(0.0);
    let crowding = psi.saturating_sub(preferences.max_co_travelers(service) as usize) as f64;
    let raw = preferences.value_of_time(service) * delay + co_traveler_penalty * crowding;
    raw.min(v_bar)
}

/// `v_i = v_bar_i - phi_i`.
pub fn valuation(traveler: &Traveler, phi: f64) -> Result<f64, MarketError> {
    let v_bar = traveler.max_willingness_to_pay;
    if !(phi >= 0.0 && phi <= v_bar) {
        return Err(MarketError::InconvenienceOutOfRange { phi, v_bar });
    }
    Ok(v_bar - phi)
}

/// `r_j = sum_i r_ij a_ij` over the subclass.
pub fn operating_cost(service: ServiceId, assignment: &Assignment, scenario: &Scenario) -> f64 {
    assignment
        .pairs()
        .filter(|&(_, s)| s == service)
        .map(|(t, s)| scenario.cost_share(t, s).unwrap_or(0.0))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TravelerOutcome {
    pub traveler: TravelerId,
    pub service: ServiceId,
    pub co_travelers: usize,
    pub travel_time: f64,
    pub inconvenience: f64,
    pub valuation: f64,
    pub cost_share: f64,
    pub payment: f64,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceCost {
    pub service: ServiceId,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketOutcome {
    pub assignment: Assignment,
    pub travelers: Vec<TravelerOutcome>,
    pub service_costs: Vec<ServiceCost>,
    pub objective: f64,
    pub welfare: f64,
}

impl MarketOutcome {
    pub fn inconveniences(&self) -> Vec<f64> {
        self.travelers.iter().map(|t| t.inconvenience).collect()
    }

    pub fn traveler(&self, id: TravelerId) -> Option<&TravelerOutcome> {
        self.travelers.iter().find(|t| t.traveler == id)
    }
}

/// Evaluates every market quantity of an assignment under the given payments
/// (one per assigned traveler, in traveler-id order).
pub fn evaluate_outcome(
    assignment: &Assignment,
    payments: &[f64],
    scenario: &Scenario,
    config: &PlannerConfig,
) -> Result<MarketOutcome, MarketError> {
    if payments.len() != assignment.len() {
        return Err(MarketError::Malformed(format!(
            "{} payments for {} travelers",
            payments.len(),
            assignment.len()
        )));
    }
    let mut travelers = Vec::with_capacity(assignment.len());
    for ((traveler, service), &payment) in assignment.pairs().zip(payments) {
        let t = scenario
            .traveler(traveler)
            .ok_or(MarketError::UnknownTraveler(traveler))?;
        let psi = co_travelers(assignment, traveler, scenario)?;
        let theta = experienced_travel_time(assignment, traveler, scenario)?;
        let phi = inconvenience(
            &t.preferences,
            t.max_willingness_to_pay,
            theta,
            psi,
            service,
            config.co_traveler_penalty,
        );
        let v = valuation(t, phi)?;
        travelers.push(TravelerOutcome {
            traveler,
            service,
            co_travelers: psi,
            travel_time: theta,
            inconvenience: phi,
            valuation: v,
            cost_share: scenario.cost_share(traveler, service).unwrap_or(0.0),
            payment,
            utility: v - payment,
        });
    }
    let service_costs: Vec<ServiceCost> = scenario
        .services()
        .iter()
        .map(|s| ServiceCost {
            service: s.id,
            cost: operating_cost(s.id, assignment, scenario),
        })
        .collect();
    let total_phi: f64 = travelers.iter().map(|t| t.inconvenience).sum();
    let total_cost: f64 = service_costs.iter().map(|s| s.cost).sum();
    let total_value: f64 = travelers.iter().map(|t| t.valuation).sum();
    Ok(MarketOutcome {
        assignment: assignment.clone(),
        travelers,
        service_costs,
        objective: config.omega1 * total_phi + config.omega2 * total_cost,
        welfare: total_value - total_cost,
    })
}

/// Gini coefficient of a non-negative vector; zero for an all-zero vector.
pub fn gini(values: &[f64]) -> f64 {
    let total: f64 = values.iter().sum();
    if values.is_empty() || total <= 0.0 {
        return 0.0;
    }
    let mut spread = 0.0;
    for a in values {
        for b in values {
            spread += (a - b).abs();
        }
    }
    spread / (2.0 * values.len() as f64 * total)
}

/// Gini coefficient of the inconvenience vector of an outcome.
pub fn equity_gini(outcome: &MarketOutcome) -> f64 {
    gini(&outcome.inconveniences())
}
