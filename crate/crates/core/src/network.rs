//! City multigraph, mobility services, travelers and the origin-destination
//! partition of travelers into subclasses.
//!
//! A [`Scenario`] is only ever observable in a fully validated state: every
//! constructor runs the complete invariant check and precomputes the
//! per-traveler route table (feasible services and their base travel times).

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::market::PlannerConfig;

/// Identifier of a neighborhood node.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

/// Index of a mobility service `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ServiceId(pub u32);

impl fmt::Display for ServiceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Index of a traveler `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TravelerId(pub u32);

impl fmt::Display for TravelerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read scenario file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario ({entity}): {message}")]
    Validation { entity: String, message: String },
}

fn invalid(entity: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation {
        entity: entity.into(),
        message: message.into(),
    }
}

/// A link of the multigraph. Links are undirected; parallel links are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub from: NodeId,
    pub to: NodeId,
    pub service: ServiceId,
    /// Base travel time in minutes.
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Network {
    pub nodes: Vec<NodeId>,
    pub links: Vec<Link>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MobilityService {
    pub id: ServiceId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Maximum number of simultaneous users `C_j`.
    pub capacity: u32,
    /// Base operating cost charged per assigned traveler.
    pub cost_per_traveler: f64,
    /// Congestion slope `alpha_j` of the experienced-travel-time model.
    #[serde(default)]
    pub congestion_slope: f64,
    /// The self-owned-vehicle pseudo-service.
    #[serde(default)]
    pub fallback: bool,
}

/// Personal travel preferences `(theta_i, eta_ij, delta_ij)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preferences {
    /// Preferred travel time in minutes.
    pub preferred_travel_time: f64,
    /// Maximum tolerated number of co-travelers per service.
    pub max_co_travelers: BTreeMap<ServiceId, u32>,
    /// Value of time per service, money per minute of delay, in `[0, 1]`.
    pub value_of_time: BTreeMap<ServiceId, f64>,
}

impl Preferences {
    pub fn max_co_travelers(&self, service: ServiceId) -> u32 {
        self.max_co_travelers.get(&service).copied().unwrap_or(0)
    }

    pub fn value_of_time(&self, service: ServiceId) -> f64 {
        self.value_of_time.get(&service).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Traveler {
    pub id: TravelerId,
    pub origin: NodeId,
    pub destination: NodeId,
    pub preferences: Preferences,
    pub max_willingness_to_pay: f64,
    pub discount_rate: f64,
    /// Per-service override of the operating cost share `r_ij`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub cost_overrides: BTreeMap<ServiceId, f64>,
}

/// A service usable by a traveler together with its base travel time `tau_j`
/// for the traveler's origin-destination pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Route {
    pub service: ServiceId,
    pub base_time: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubclassPartition {
    pub subclasses: Vec<Vec<TravelerId>>,
}

impl SubclassPartition {
    pub fn count(&self) -> usize {
        self.subclasses.len()
    }
}

/// On-disk representation. Deserialization goes through this type so that
/// no unvalidated [`Scenario`] ever escapes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    nodes: Vec<NodeId>,
    links: Vec<Link>,
    services: Vec<MobilityService>,
    travelers: Vec<Traveler>,
    planner: PlannerConfig,
}

/// A validated market instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    network: Network,
    services: Vec<MobilityService>,
    travelers: Vec<Traveler>,
    planner: PlannerConfig,
    routes: Vec<Vec<Route>>,
}

impl Scenario {
    /// Validates every invariant and builds the route table. Services and
    /// travelers are sorted by id.
    pub fn new(
        network: Network,
        mut services: Vec<MobilityService>,
        mut travelers: Vec<Traveler>,
        planner: PlannerConfig,
    ) -> Result<Self, ScenarioError> {
        services.sort_by_key(|s| s.id);
        travelers.sort_by_key(|t| t.id);
        validate_structure(&network, &services, &travelers)?;
        planner
            .validate()
            .map_err(|message| invalid("planner", message))?;

        let mut routes = Vec::with_capacity(travelers.len());
        for traveler in &travelers {
            let table = route_table(traveler, &network, &services)?;
            for route in &table {
                let cost = cost_share(traveler, &services, route.service);
                if traveler.max_willingness_to_pay <= cost {
                    return Err(invalid(
                        format!("traveler {}", traveler.id),
                        format!(
                            "Assumption 2 violated: max willingness to pay {} does not exceed operating cost {} of service {}",
                            traveler.max_willingness_to_pay, cost, route.service
                        ),
                    ));
                }
            }
            routes.push(table);
        }

        Ok(Scenario {
            network,
            services,
            travelers,
            planner,
            routes,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        Scenario::new(
            Network {
                nodes: file.nodes,
                links: file.links,
            },
            file.services,
            file.travelers,
            file.planner,
        )
    }

    pub fn to_json(&self) -> String {
        let file = ScenarioFile {
            nodes: self.network.nodes.clone(),
            links: self.network.links.clone(),
            services: self.services.clone(),
            travelers: self.travelers.clone(),
            planner: self.planner.clone(),
        };
        serde_json::to_string_pretty(&file).expect("scenario serializes")
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn services(&self) -> &[MobilityService] {
        &self.services
    }

    pub fn travelers(&self) -> &[Traveler] {
        &self.travelers
    }

    pub fn planner(&self) -> &PlannerConfig {
        &self.planner
    }

    pub fn traveler_count(&self) -> usize {
        self.travelers.len()
    }

    /// Number of services, fallback included.
    pub fn service_count(&self) -> usize {
        self.services.len()
    }

    pub fn traveler(&self, id: TravelerId) -> Option<&Traveler> {
        self.travelers
            .binary_search_by_key(&id, |t| t.id)
            .ok()
            .map(|pos| &self.travelers[pos])
    }

    pub fn service(&self, id: ServiceId) -> Option<&MobilityService> {
        self.services
            .binary_search_by_key(&id, |s| s.id)
            .ok()
            .map(|pos| &self.services[pos])
    }

    pub fn fallback(&self) -> &MobilityService {
        self.services
            .iter()
            .find(|s| s.fallback)
            .expect("validated scenario has a fallback service")
    }

    /// Feasible services of a traveler in service-index order.
    pub fn routes(&self, id: TravelerId) -> Option<&[Route]> {
        self.travelers
            .binary_search_by_key(&id, |t| t.id)
            .ok()
            .map(|pos| self.routes[pos].as_slice())
    }

    pub fn route(&self, traveler: TravelerId, service: ServiceId) -> Option<Route> {
        self.routes(traveler)?
            .iter()
            .find(|r| r.service == service)
            .copied()
    }

    /// Operating cost share `r_ij`.
    pub fn cost_share(&self, traveler: TravelerId, service: ServiceId) -> Option<f64> {
        let t = self.traveler(traveler)?;
        self.service(service)?;
        Some(cost_share(t, &self.services, service))
    }

    pub fn partition(&self) -> SubclassPartition {
        partition_subclasses(&self.travelers)
    }

    /// Copy of this scenario with a traveler's reported preferences replaced.
    pub fn with_preferences(
        &self,
        traveler: TravelerId,
        preferences: Preferences,
    ) -> Result<Scenario, ScenarioError> {
        let mut travelers = self.travelers.clone();
        let t = travelers
            .iter_mut()
            .find(|t| t.id == traveler)
            .ok_or_else(|| invalid(format!("traveler {traveler}"), "unknown traveler"))?;
        t.preferences = preferences;
        Scenario::new(
            self.network.clone(),
            self.services.clone(),
            travelers,
            self.planner.clone(),
        )
    }

    pub fn with_planner(&self, planner: PlannerConfig) -> Result<Scenario, ScenarioError> {
        planner
            .validate()
            .map_err(|message| invalid("planner", message))?;
        let mut copy = self.clone();
        copy.planner = planner;
        Ok(copy)
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Scenario::from_json(&text)
}

fn cost_share(traveler: &Traveler, services: &[MobilityService], service: ServiceId) -> f64 {
    traveler
        .cost_overrides
        .get(&service)
        .copied()
        .unwrap_or_else(|| {
            services
                .iter()
                .find(|s| s.id == service)
                .map(|s| s.cost_per_traveler)
                .unwrap_or(f64::NAN)
        })
}

fn validate_structure(
    network: &Network,
    services: &[MobilityService],
    travelers: &[Traveler],
) -> Result<(), ScenarioError> {
    let mut nodes = BTreeSet::new();
    for node in &network.nodes {
        if !nodes.insert(node) {
            return Err(invalid(format!("node {node}"), "duplicate node"));
        }
    }
    if services.is_empty() {
        return Err(invalid("services", "no services declared"));
    }
    for pair in services.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(invalid(format!("service {}", pair[0].id), "duplicate service id"));
        }
    }
    let service_ids: BTreeSet<ServiceId> = services.iter().map(|s| s.id).collect();

    for (pos, link) in network.links.iter().enumerate() {
        let entity = format!("link {pos} ({}-{})", link.from, link.to);
        if !nodes.contains(&link.from) || !nodes.contains(&link.to) {
            return Err(invalid(entity, "endpoint is not a declared node"));
        }
        if !service_ids.contains(&link.service) {
            return Err(invalid(
                entity,
                format!("references undeclared service {}", link.service),
            ));
        }
        if !(link.time.is_finite() && link.time > 0.0) {
            return Err(invalid(entity, "base travel time must be positive"));
        }
    }

    let fallbacks = services.iter().filter(|s| s.fallback).count();
    if fallbacks != 1 {
        return Err(invalid(
            "services",
            format!("exactly one fallback service required, found {fallbacks}"),
        ));
    }
    for service in services {
        let entity = format!("service {}", service.id);
        if service.capacity == 0 {
            return Err(invalid(entity, "capacity must be positive"));
        }
        if !(service.cost_per_traveler.is_finite() && service.cost_per_traveler > 0.0) {
            return Err(invalid(entity, "per-traveler cost must be positive"));
        }
        if !(service.congestion_slope.is_finite() && service.congestion_slope >= 0.0) {
            return Err(invalid(entity, "congestion slope must be non-negative"));
        }
        if service.fallback && (service.capacity as usize) < travelers.len() {
            return Err(invalid(
                entity,
                "fallback capacity must cover every traveler",
            ));
        }
    }

    if travelers.is_empty() {
        return Err(invalid("travelers", "no travelers declared"));
    }
    for pair in travelers.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(invalid(format!("traveler {}", pair[0].id), "duplicate traveler id"));
        }
    }
    for t in travelers {
        let entity = format!("traveler {}", t.id);
        if !nodes.contains(&t.origin) || !nodes.contains(&t.destination) {
            return Err(invalid(entity, "origin or destination is not a declared node"));
        }
        if t.origin == t.destination {
            return Err(invalid(entity, "origin equals destination"));
        }
        if !(t.max_willingness_to_pay.is_finite() && t.max_willingness_to_pay > 0.0) {
            return Err(invalid(entity, "max willingness to pay must be positive"));
        }
        if !(t.discount_rate > 0.0 && t.discount_rate < 1.0) {
            return Err(invalid(entity, "discount rate must lie strictly inside (0, 1)"));
        }
        let prefs = &t.preferences;
        if !(prefs.preferred_travel_time.is_finite() && prefs.preferred_travel_time >= 0.0) {
            return Err(invalid(entity, "preferred travel time must be non-negative"));
        }
        for (service, delta) in &prefs.value_of_time {
            if !service_ids.contains(service) {
                return Err(invalid(entity, format!("value of time for undeclared service {service}")));
            }
            if !(0.0..=1.0).contains(delta) {
                return Err(invalid(entity, format!("value of time for service {service} outside [0, 1]")));
            }
        }
        for service in prefs.max_co_travelers.keys().chain(t.cost_overrides.keys()) {
            if !service_ids.contains(service) {
                return Err(invalid(entity, format!("preference for undeclared service {service}")));
            }
        }
        for (service, cost) in &t.cost_overrides {
            if !(cost.is_finite() && *cost > 0.0) {
                return Err(invalid(entity, format!("cost override for service {service} must be positive")));
            }
        }
    }
    Ok(())
}

/// Groups travelers by exact origin-destination equality. Members are sorted
/// by id and subclasses are ordered by their smallest member id.
pub fn partition_subclasses(travelers: &[Traveler]) -> SubclassPartition {
    let mut groups: BTreeMap<(&NodeId, &NodeId), Vec<TravelerId>> = BTreeMap::new();
    for t in travelers {
        groups
            .entry((&t.origin, &t.destination))
            .or_default()
            .push(t.id);
    }
    let mut subclasses: Vec<Vec<TravelerId>> = groups
        .into_values()
        .map(|mut members| {
            members.sort();
            members.dedup();
            members
        })
        .collect();
    subclasses.sort_by_key(|members| members[0]);
    SubclassPartition { subclasses }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Frontier {
    dist: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra over the undirected links accepted by `use_link`.
fn shortest_path(
    network: &Network,
    from: &NodeId,
    to: &NodeId,
    use_link: impl Fn(&Link) -> bool,
) -> Option<f64> {
    let index: BTreeMap<&NodeId, usize> = network
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n, i))
        .collect();
    let source = *index.get(from)?;
    let target = *index.get(to)?;
    let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); network.nodes.len()];
    for link in network.links.iter().filter(|l| use_link(l)) {
        let (Some(&a), Some(&b)) = (index.get(&link.from), index.get(&link.to)) else {
            continue;
        };
        adjacency[a].push((b, link.time));
        adjacency[b].push((a, link.time));
    }
    let mut dist = vec![f64::INFINITY; network.nodes.len()];
    dist[source] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Frontier {
        dist: 0.0,
        node: source,
    });
    while let Some(Frontier { dist: d, node }) = heap.pop() {
        if node == target {
            return Some(d);
        }
        if d > dist[node] {
            continue;
        }
        for &(next, w) in &adjacency[node] {
            let candidate = d + w;
            if candidate < dist[next] {
                dist[next] = candidate;
                heap.push(Frontier {
                    dist: candidate,
                    node: next,
                });
            }
        }
    }
    None
}

fn route_table(
    traveler: &Traveler,
    network: &Network,
    services: &[MobilityService],
) -> Result<Vec<Route>, ScenarioError> {
    let mut routes = Vec::new();
    for service in services {
        let own = shortest_path(network, &traveler.origin, &traveler.destination, |l| {
            l.service == service.id
        });
        // A self-owned vehicle may drive any link when it has none of its own.
        let time = if service.fallback {
            own.or_else(|| {
                shortest_path(network, &traveler.origin, &traveler.destination, |_| true)
            })
        } else {
            own
        };
        if let Some(base_time) = time {
            routes.push(Route {
                service: service.id,
                base_time,
            });
        }
    }
    if !routes.iter().any(|r| {
        services
            .iter()
            .any(|s| s.id == r.service && s.fallback)
    }) {
        return Err(invalid(
            format!("traveler {}", traveler.id),
            format!(
                "no service is feasible: {} and {} are disconnected",
                traveler.origin, traveler.destination
            ),
        ));
    }
    Ok(routes)
}

/// Services whose own links connect the traveler's origin and destination,
/// plus the fallback, in service-index order.
pub fn feasible_services(
    traveler: &Traveler,
    network: &Network,
    services: &[MobilityService],
) -> Result<Vec<ServiceId>, ScenarioError> {
    let mut sorted: Vec<MobilityService> = services.to_vec();
    sorted.sort_by_key(|s| s.id);
    Ok(route_table(traveler, network, &sorted)?
        .into_iter()
        .map(|r| r.service)
        .collect())
}
