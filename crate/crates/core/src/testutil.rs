//! Fixtures shared by unit tests.

use crate::network::*;

pub fn traveler(id: u32, origin: &str, destination: &str) -> Traveler {
    Traveler {
        id: TravelerId(id),
        origin: origin.into(),
        destination: destination.into(),
        preferences: Preferences {
            preferred_travel_time: 10.0,
            max_co_travelers: Default::default(),
            value_of_time: Default::default(),
        },
        max_willingness_to_pay: 20.0,
        discount_rate: 0.5,
        cost_overrides: Default::default(),
    }
}

pub fn service(id: u32, capacity: u32, cost: f64) -> MobilityService {
    MobilityService {
        id: ServiceId(id),
        name: None,
        capacity,
        cost_per_traveler: cost,
        congestion_slope: 0.0,
        fallback: false,
    }
}

pub fn fallback_service(id: u32, capacity: u32, cost: f64) -> MobilityService {
    MobilityService {
        fallback: true,
        ..service(id, capacity, cost)
    }
}

pub fn sloped(mut s: MobilityService, slope: f64) -> MobilityService {
    s.congestion_slope = slope;
    s
}

pub fn link(from: &str, to: &str, service: u32, time: f64) -> Link {
    Link {
        from: from.into(),
        to: to.into(),
        service: ServiceId(service),
        time,
    }
}

pub fn network(nodes: &[&str], links: Vec<Link>) -> Network {
    Network {
        nodes: nodes.iter().map(|&n| n.into()).collect(),
        links,
    }
}

pub fn two_traveler_json() -> String {
    r#"{
  "nodes": ["A", "B"],
  "links": [
    {"from": "A", "to": "B", "service": 1, "time": 10.0}
  ],
  "services": [
    {"id": 1, "capacity": 2, "cost_per_traveler": 3.0, "congestion_slope": 0.5},
    {"id": 2, "capacity": 10, "cost_per_traveler": 4.0, "fallback": true}
  ],
  "travelers": [
    {"id": 1, "origin": "A", "destination": "B", "max_willingness_to_pay": 20.0, "discount_rate": 0.5,
     "preferences": {"preferred_travel_time": 10.0, "max_co_travelers": {"1": 0}, "value_of_time": {"1": 0.5, "2": 0.2}}},
    {"id": 2, "origin": "A", "destination": "B", "max_willingness_to_pay": 15.0, "discount_rate": 0.3,
     "preferences": {"preferred_travel_time": 8.0, "max_co_travelers": {"1": 1}, "value_of_time": {"1": 0.8, "2": 0.1}}}
  ],
  "planner": {"omega1": 1.0, "omega2": 1.0, "equity_gmax": null, "co_traveler_penalty": 1.0}
}"#
    .to_string()
}
