//! Random instance generators and independent oracles shared by the
//! integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use mobility_core::coordination::{MemberSpec, TeamModel};
use mobility_core::network::{
    Link, MobilityService, Network, NodeId, Preferences, ServiceId, Traveler, TravelerId,
};
use mobility_core::{PlannerConfig, Scenario};
use rand::Rng;

pub struct ScenarioShape {
    pub max_travelers: usize,
    /// Total services including the fallback.
    pub max_services: usize,
    /// Force every capacity to be at least the traveler count.
    pub roomy: bool,
    pub equity: bool,
    pub unit_weights: bool,
}

fn round(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

pub fn random_scenario<R: Rng>(rng: &mut R, shape: &ScenarioShape) -> Scenario {
    let n = rng.gen_range(1..=shape.max_travelers);
    let m = rng.gen_range(1..=shape.max_services);
    let nodes: Vec<NodeId> = ["A", "B", "C"].iter().map(|&s| NodeId::from(s)).collect();
    let edges = [("A", "B"), ("B", "C"), ("A", "C")];
    let fallback_id = ServiceId(m as u32);
    let mut links = Vec::new();
    let mut services = Vec::new();
    for j in 1..m {
        let id = ServiceId(j as u32);
        for (a, b) in edges {
            if rng.gen_bool(0.6) {
                links.push(Link {
                    from: a.into(),
                    to: b.into(),
                    service: id,
                    time: round(rng.gen_range(4.0..20.0)),
                });
            }
        }
        let capacity = if shape.roomy {
            rng.gen_range(n as u32..=n as u32 + 2)
        } else {
            rng.gen_range(1..=4)
        };
        services.push(MobilityService {
            id,
            name: None,
            capacity,
            cost_per_traveler: round(rng.gen_range(0.5..6.0)),
            congestion_slope: round(rng.gen_range(0.0..1.0)),
            fallback: false,
        });
    }
    for (a, b) in edges {
        links.push(Link {
            from: a.into(),
            to: b.into(),
            service: fallback_id,
            time: round(rng.gen_range(6.0..25.0)),
        });
    }
    services.push(MobilityService {
        id: fallback_id,
        name: Some("own vehicle".into()),
        capacity: n as u32 + rng.gen_range(0..3),
        cost_per_traveler: round(rng.gen_range(2.0..8.0)),
        congestion_slope: 0.0,
        fallback: true,
    });
    let max_cost = services
        .iter()
        .map(|s| s.cost_per_traveler)
        .fold(0.0, f64::max);
    let ods = [("A", "B"), ("A", "C")];
    let travelers = (0..n)
        .map(|i| {
            let (o, d) = ods[rng.gen_range(0..ods.len())];
            let mut max_co = BTreeMap::new();
            let mut vot = BTreeMap::new();
            for s in &services {
                max_co.insert(s.id, rng.gen_range(0..=3));
                let delta = if rng.gen_bool(0.2) {
                    0.0
                } else {
                    round(rng.gen_range(0.0..1.0))
                };
                vot.insert(s.id, delta);
            }
            Traveler {
                id: TravelerId(i as u32 + 1),
                origin: o.into(),
                destination: d.into(),
                preferences: Preferences {
                    preferred_travel_time: round(rng.gen_range(5.0..25.0)),
                    max_co_travelers: max_co,
                    value_of_time: vot,
                },
                max_willingness_to_pay: round(rng.gen_range(max_cost + 1.0..40.0)),
                discount_rate: round(rng.gen_range(0.05..0.95)),
                cost_overrides: BTreeMap::new(),
            }
        })
        .collect();
    let planner = PlannerConfig {
        omega1: if shape.unit_weights { 1.0 } else { round(rng.gen_range(0.5..2.0)) },
        omega2: if shape.unit_weights { 1.0 } else { round(rng.gen_range(0.5..2.0)) },
        equity_gmax: (shape.equity && rng.gen_bool(0.3)).then(|| round(rng.gen_range(0.1..0.8))),
        co_traveler_penalty: round(rng.gen_range(0.0..2.0)),
    };
    Scenario::new(Network { nodes, links }, services, travelers, planner).expect("generated scenario is valid")
}

/// Random team model with states `0..states`, `obs` symbols per member and
/// two disturbance and two noise values.
pub fn random_team_model<R: Rng>(
    rng: &mut R,
    states: usize,
    obs: usize,
    members: usize,
    decisions: usize,
    horizon: usize,
    delay: usize,
) -> TeamModel {
    let dist = |rng: &mut R, len: usize| -> Vec<f64> {
        let raw: Vec<f64> = (0..len).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mut out: Vec<f64> = raw.iter().map(|r| r / total).collect();
        let rest: f64 = out[1..].iter().sum();
        out[0] = 1.0 - rest;
        out
    };
    let profiles = decisions.pow(members as u32);
    let member_specs = (0..members)
        .map(|k| MemberSpec {
            name: format!("m{k}"),
            decisions: (0..decisions).map(|u| format!("u{u}")).collect(),
            observations: (0..obs).map(|y| format!("y{y}")).collect(),
            noise: dist(rng, 2),
            observation_table: (0..states)
                .map(|_| (0..2).map(|_| rng.gen_range(0..obs)).collect())
                .collect(),
            delay: None,
        })
        .collect();
    TeamModel {
        states: (0..states).map(|x| format!("x{x}")).collect(),
        members: member_specs,
        horizon,
        delay,
        disturbance: dist(rng, 2),
        dynamics: (0..states)
            .map(|_| {
                (0..profiles)
                    .map(|_| (0..2).map(|_| rng.gen_range(0..states)).collect())
                    .collect()
            })
            .collect(),
        cost: (0..states)
            .map(|_| (0..profiles).map(|_| round(rng.gen_range(0.0..5.0))).collect())
            .collect(),
        initial: dist(rng, states),
        terminal_cost: (0..states).map(|_| round(rng.gen_range(0.0..2.0))).collect(),
        collision_states: vec![],
    }
}

fn profile_index(model: &TeamModel, u: &[usize]) -> usize {
    u.iter()
        .zip(&model.members)
        .fold(0, |acc, (&d, m)| acc * m.decisions.len() + d)
}

/// Every joint noise draw `(v^1..v^K)` with its probability and the resulting
/// observation profile in state `x`.
fn joint_observations(model: &TeamModel, x: usize) -> Vec<(Vec<usize>, f64)> {
    let mut out = vec![(Vec::new(), 1.0)];
    for m in &model.members {
        let mut next = Vec::new();
        for (y, p) in &out {
            for (v, &q) in m.noise.iter().enumerate() {
                let mut y = y.clone();
                y.push(m.observation_table[x][v]);
                next.push((y, p * q));
            }
        }
        out = next;
    }
    out
}

/// `P(X_s | Y_{0:s}, U_{0:s-1})` by enumerating every `(x, w, v)` trajectory.
pub fn posterior_oracle(
    model: &TeamModel,
    observations: &[Vec<usize>],
    decisions: &[Vec<usize>],
) -> Vec<f64> {
    let mut out = vec![0.0; model.states.len()];
    fn walk(
        model: &TeamModel,
        observations: &[Vec<usize>],
        decisions: &[Vec<usize>],
        r: usize,
        x: usize,
        weight: f64,
        out: &mut [f64],
    ) {
        let mut w = weight;
        for (k, m) in model.members.iter().enumerate() {
            let like: f64 = m
                .noise
                .iter()
                .enumerate()
                .filter(|&(v, _)| m.observation_table[x][v] == observations[r][k])
                .map(|(_, p)| p)
                .sum();
            w *= like;
        }
        if w == 0.0 {
            return;
        }
        if r + 1 == observations.len() {
            out[x] += w;
            return;
        }
        let profile = profile_index(model, &decisions[r]);
        for (wi, &q) in model.disturbance.iter().enumerate() {
            let next = model.dynamics[x][profile][wi];
            walk(model, observations, decisions, r + 1, next, w * q, out);
        }
    }
    for (x, &p) in model.initial.iter().enumerate() {
        walk(model, observations, decisions, 0, x, p, &mut out);
    }
    let total: f64 = out.iter().sum();
    out.iter().map(|p| p / total).collect()
}

type World = (usize, Vec<Vec<usize>>, Vec<Vec<usize>>);
type InfoKey = (Vec<Vec<usize>>, Vec<Vec<usize>>, Vec<usize>, Vec<usize>);

/// `(Δ_t, Λ_t^k)` for member `k` of a world at stage `t`.
fn info_key(world: &World, t: usize, k: usize, n: usize) -> InfoKey {
    let (_, obs, dec) = world;
    let shared_obs = if t >= n { obs[..=t - n].to_vec() } else { Vec::new() };
    let shared_dec = if t > n { dec[..t - n].to_vec() } else { Vec::new() };
    let start = (t + 1).saturating_sub(n);
    let own_obs = obs[start..=t].iter().map(|y| y[k]).collect();
    let own_dec = dec[start.min(t)..t].iter().map(|u| u[k]).collect();
    (shared_obs, shared_dec, own_obs, own_dec)
}

/// Optimal expected cost over every decentralized policy
/// `U_t^k = g_t^k(Δ_t, Λ_t^k)`, by exhaustive search over decisions at every
/// reachable information set.
pub fn exhaustive_policy_value(model: &TeamModel) -> f64 {
    let mut worlds: BTreeMap<World, f64> = BTreeMap::new();
    for (x, &p) in model.initial.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (y, q) in joint_observations(model, x) {
            if q > 0.0 {
                *worlds.entry((x, vec![y], vec![])).or_insert(0.0) += p * q;
            }
        }
    }
    policy_search(model, 0, &worlds)
}

fn policy_search(model: &TeamModel, t: usize, worlds: &BTreeMap<World, f64>) -> f64 {
    if t == model.horizon {
        return worlds
            .iter()
            .map(|(w, p)| p * model.terminal_cost.get(w.0).copied().unwrap_or(0.0))
            .sum();
    }
    // information sets under different Δ_t have disjoint futures, so the
    // search splits exactly by Δ_t
    let mut classes: BTreeMap<InfoKey, BTreeMap<World, f64>> = BTreeMap::new();
    for (w, &p) in worlds {
        let mut key = info_key(w, t, 0, model.delay);
        key.2.clear();
        key.3.clear();
        classes.entry(key).or_default().insert(w.clone(), p);
    }
    classes
        .values()
        .map(|class| class_search(model, t, class))
        .sum()
}

fn class_search(model: &TeamModel, t: usize, worlds: &BTreeMap<World, f64>) -> f64 {
    let n = model.delay;
    let members = model.members.len();
    let keys: Vec<Vec<InfoKey>> = (0..members)
        .map(|k| {
            worlds
                .keys()
                .map(|w| info_key(w, t, k, n))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        })
        .collect();
    let offsets: Vec<usize> = keys
        .iter()
        .scan(0, |acc, k| {
            let start = *acc;
            *acc += k.len();
            Some(start)
        })
        .collect();
    let slots: usize = keys.iter().map(Vec::len).sum();
    let mut choice = vec![0usize; slots];
    let mut best = f64::INFINITY;
    loop {
        let decide = |w: &World| -> Vec<usize> {
            (0..members)
                .map(|k| {
                    let i = keys[k].binary_search(&info_key(w, t, k, n)).unwrap();
                    choice[offsets[k] + i]
                })
                .collect()
        };
        let mut cost = 0.0;
        let mut next: BTreeMap<World, f64> = BTreeMap::new();
        for (w, &p) in worlds {
            let u = decide(w);
            let profile = profile_index(model, &u);
            cost += p * model.cost[w.0][profile];
            for (wi, &q) in model.disturbance.iter().enumerate() {
                let x2 = model.dynamics[w.0][profile][wi];
                for (y, r) in joint_observations(model, x2) {
                    if q * r == 0.0 {
                        continue;
                    }
                    let mut obs = w.1.clone();
                    obs.push(y);
                    let mut dec = w.2.clone();
                    dec.push(u.clone());
                    *next.entry((x2, obs, dec)).or_insert(0.0) += p * q * r;
                }
            }
        }
        best = best.min(cost + policy_search(model, t + 1, &next));
        // odometer over the decision at every information set
        let mut i = slots;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            let k = offsets.iter().rposition(|&o| o <= i).unwrap();
            choice[i] += 1;
            if choice[i] < model.members[k].decisions.len() {
                break;
            }
            choice[i] = 0;
        }
    }
}

/// Standard POMDP backward induction for one member with instant
/// observations.
pub fn pomdp_value(model: &TeamModel) -> f64 {
    assert_eq!(model.members.len(), 1);
    let xs = model.states.len();
    let like = |x: usize, y: usize| -> f64 {
        let m = &model.members[0];
        m.noise
            .iter()
            .enumerate()
            .filter(|&(v, _)| m.observation_table[x][v] == y)
            .map(|(_, p)| p)
            .sum()
    };
    let symbols = model.members[0].observations.len();
    fn value(
        model: &TeamModel,
        like: &dyn Fn(usize, usize) -> f64,
        symbols: usize,
        t: usize,
        b: &[f64],
    ) -> f64 {
        let xs = b.len();
        if t == model.horizon {
            return (0..xs)
                .map(|x| b[x] * model.terminal_cost.get(x).copied().unwrap_or(0.0))
                .sum();
        }
        let mut best = f64::INFINITY;
        for u in 0..model.members[0].decisions.len() {
            let mut total: f64 = (0..xs).map(|x| b[x] * model.cost[x][u]).sum();
            let mut pred = vec![0.0; xs];
            for x in 0..xs {
                for (w, &q) in model.disturbance.iter().enumerate() {
                    pred[model.dynamics[x][u][w]] += b[x] * q;
                }
            }
            for y in 0..symbols {
                let post: Vec<f64> = (0..xs).map(|x| pred[x] * like(x, y)).collect();
                let py: f64 = post.iter().sum();
                if py > 0.0 {
                    let post: Vec<f64> = post.iter().map(|p| p / py).collect();
                    total += py * value(model, like, symbols, t + 1, &post);
                }
            }
            best = best.min(total);
        }
        best
    }
    let mut v = 0.0;
    for y in 0..symbols {
        let post: Vec<f64> = (0..xs).map(|x| model.initial[x] * like(x, y)).collect();
        let py: f64 = post.iter().sum();
        if py > 0.0 {
            let post: Vec<f64> = post.iter().map(|p| p / py).collect();
            v += py * value(model, &like, symbols, 0, &post);
        }
    }
    v
}

/// Best fixed sequence of decision profiles.
pub fn open_loop_value(model: &TeamModel) -> f64 {
    let profiles: usize = model.members.iter().map(|m| m.decisions.len()).product();
    fn go(model: &TeamModel, profiles: usize, t: usize, dist: &[f64]) -> f64 {
        if t == model.horizon {
            return dist
                .iter()
                .enumerate()
                .map(|(x, p)| p * model.terminal_cost.get(x).copied().unwrap_or(0.0))
                .sum();
        }
        (0..profiles)
            .map(|u| {
                let cost: f64 = dist.iter().enumerate().map(|(x, p)| p * model.cost[x][u]).sum();
                let mut next = vec![0.0; dist.len()];
                for (x, p) in dist.iter().enumerate() {
                    for (w, q) in model.disturbance.iter().enumerate() {
                        next[model.dynamics[x][u][w]] += p * q;
                    }
                }
                cost + go(model, profiles, t + 1, &next)
            })
            .fold(f64::INFINITY, f64::min)
    }
    go(model, profiles, 0, &model.initial)
}

/// Per-stage record of one agent-driven episode: the common information, the
/// agents' information state and the marginal of the followed plan node.
pub struct StageRecord {
    pub common: mobility_core::coordination::CommonInfo,
    pub information_state: mobility_core::coordination::InformationState,
    pub node_marginal: mobility_core::coordination::InformationState,
}

pub struct Transcript {
    pub history: mobility_core::coordination::History,
    pub stages: Vec<StageRecord>,
}

/// Runs one episode with a [`MemberAgent`] per member, sampling from `seed`.
pub fn agent_episode(
    model: &TeamModel,
    strategy: &mobility_core::coordination::PlanningStrategy,
    seed: u64,
) -> Transcript {
    use mobility_core::coordination::{observe, sample_initial, step, History, MemberAgent};
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let delays = model.member_delays();
    let mut agents: Vec<MemberAgent> = (0..model.member_count())
        .map(|k| MemberAgent::new(model, strategy, k))
        .collect();
    let mut history = History::new();
    let mut stages = Vec::new();
    let mut x = sample_initial(model, &mut rng);
    for t in 0..model.horizon {
        let y: Vec<usize> = (0..model.member_count())
            .map(|k| observe(model, x, k, &mut rng).unwrap())
            .collect();
        history.push_observations(y);
        let common = history.common_info(t, &delays);
        let u: Vec<usize> = agents
            .iter_mut()
            .enumerate()
            .map(|(k, a)| a.decide(t, &common, &history.private_info(t, k, delays[k])).unwrap())
            .collect();
        for a in &agents[1..] {
            assert_eq!(a.information_state(), agents[0].information_state());
            assert_eq!(a.node(), agents[0].node());
        }
        let node = strategy.node(agents[0].node().unwrap());
        stages.push(StageRecord {
            common,
            information_state: agents[0].information_state().clone(),
            node_marginal: node.belief.delayed_state_marginal(model),
        });
        x = step(model, x, &u, &mut rng).unwrap().0;
        history.push_decisions(u);
    }
    Transcript { history, stages }
}
