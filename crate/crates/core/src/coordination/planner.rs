use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::info::{InformationState, PrivateInfo, SharedStep};
use super::model::TeamModel;
use super::CoordinationError;

/// Largest number of prescription profiles evaluated at one belief.
pub const PROFILE_LIMIT: u128 = 1 << 16;
/// Ties between prescription profiles closer than this keep the earlier one.
pub const TIE_TOL: f64 = 1e-12;

/// Expected total, stage cost, profile digits and children of one profile.
type Candidate = (f64, f64, Vec<usize>, Vec<(SharedStep, f64, usize)>);
const MEMO_SCALE: f64 = (1u64 << 40) as f64;

/// Everything not yet common at stage `t`: the recent state window
/// `X_{t-n:t}`, each member's unshared observations and unshared decisions.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HiddenConfig {
    pub states: Vec<usize>,
    pub observations: Vec<Vec<usize>>,
    pub decisions: Vec<Vec<usize>>,
}

impl HiddenConfig {
    pub fn current_state(&self) -> usize {
        *self.states.last().expect("state window is never empty")
    }

    /// `Λ^k` carried by this configuration.
    pub fn private_view(&self, member: usize, delay: usize) -> PrivateInfo {
        let decisions = &self.decisions[member];
        let skip = usize::from(delay >= 1 && decisions.len() == delay);
        PrivateInfo {
            observations: self.observations[member].clone(),
            decisions: decisions[skip..].to_vec(),
        }
    }
}

/// Common-information belief over hidden configurations. Sorted, strictly
/// positive weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinatorBelief {
    pub stage: usize,
    pub support: Vec<(HiddenConfig, f64)>,
}

impl CoordinatorBelief {
    fn from_map(stage: usize, map: BTreeMap<HiddenConfig, f64>) -> (f64, Self) {
        let total: f64 = map.values().sum();
        let support = map
            .into_iter()
            .filter(|(_, p)| *p > 0.0)
            .map(|(c, p)| (c, p / total))
            .collect();
        (total, CoordinatorBelief { stage, support })
    }

    /// `α·self + (1-α)·other`; both beliefs must be at the same stage.
    pub fn mix(&self, other: &CoordinatorBelief, alpha: f64) -> Option<CoordinatorBelief> {
        if self.stage != other.stage {
            return None;
        }
        let mut map = BTreeMap::new();
        for (c, p) in &self.support {
            *map.entry(c.clone()).or_insert(0.0) += alpha * p;
        }
        for (c, p) in &other.support {
            *map.entry(c.clone()).or_insert(0.0) += (1.0 - alpha) * p;
        }
        Some(Self::from_map(self.stage, map).1)
    }

    /// Marginal on `X_{t-n}`, which is the information state `Π_t`.
    pub fn delayed_state_marginal(&self, model: &TeamModel) -> InformationState {
        let mut out = vec![0.0; model.state_count()];
        for (c, p) in &self.support {
            out[c.states[0]] += p;
        }
        let total: f64 = out.iter().sum();
        out.iter_mut().for_each(|p| *p /= total);
        InformationState::new(out).expect("marginal of a normalized belief")
    }

    /// Sorted distinct private views of one member.
    pub fn private_domain(&self, member: usize, delay: usize) -> Vec<PrivateInfo> {
        let mut views: Vec<PrivateInfo> = self
            .support
            .iter()
            .map(|(c, _)| c.private_view(member, delay))
            .collect();
        views.sort();
        views.dedup();
        views
    }

    fn key(&self) -> Vec<(HiddenConfig, i64)> {
        self.support
            .iter()
            .map(|(c, p)| (c.clone(), (p * MEMO_SCALE).round() as i64))
            .collect()
    }
}

/// `Γ^k`: a decision for every private view in its domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prescription {
    pub domain: Vec<PrivateInfo>,
    pub decisions: Vec<usize>,
}

impl Prescription {
    pub fn apply(&self, view: &PrivateInfo) -> Option<usize> {
        self.domain
            .binary_search(view)
            .ok()
            .map(|i| self.decisions[i])
    }

    pub fn is_constant(&self) -> bool {
        self.decisions.windows(2).all(|w| w[0] == w[1])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrescriptionProfile {
    pub members: Vec<Prescription>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanNode {
    pub stage: usize,
    pub belief: CoordinatorBelief,
    /// Optimal expected cost-to-go `V_t`.
    pub value: f64,
    pub stage_cost: f64,
    /// `ψ_t` at this belief; `None` at the terminal stage.
    pub prescription: Option<PrescriptionProfile>,
    /// Successor nodes under the chosen prescription, keyed by released data.
    pub children: Vec<(SharedStep, f64, usize)>,
}

impl PlanNode {
    pub fn child(&self, shared: &SharedStep) -> Option<usize> {
        self.children
            .iter()
            .find(|(z, _, _)| z == shared)
            .map(|(_, _, id)| *id)
    }
}

/// Solved common-information strategy: `ψ_t` and `V_t` on every reachable
/// belief.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanningStrategy {
    horizon: usize,
    delay: usize,
    states: usize,
    nodes: Vec<PlanNode>,
    roots: Vec<(SharedStep, f64, usize)>,
    value: f64,
}

impl PlanningStrategy {
    /// `V_0`.
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    pub fn node(&self, id: usize) -> &PlanNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[PlanNode] {
        &self.nodes
    }

    pub fn roots(&self) -> &[(SharedStep, f64, usize)] {
        &self.roots
    }

    pub fn root(&self, shared: &SharedStep) -> Option<usize> {
        self.roots
            .iter()
            .find(|(z, _, _)| z == shared)
            .map(|(_, _, id)| *id)
    }

    /// Nodes of one stage.
    pub fn stage(&self, t: usize) -> impl Iterator<Item = (usize, &PlanNode)> {
        self.nodes
            .iter()
            .enumerate()
            .filter(move |(_, n)| n.stage == t)
    }

    pub(crate) fn matches(&self, model: &TeamModel) -> bool {
        model.uniform_delay() == Some(self.delay)
            && model.horizon == self.horizon
            && model.state_count() == self.states
    }
}

struct Kernels {
    /// `transitions[x][profile]`
    transitions: Vec<Vec<Vec<(usize, f64)>>>,
    /// Joint observation-profile distribution per state.
    observations: Vec<Vec<(Vec<usize>, f64)>>,
}

impl Kernels {
    fn new(model: &TeamModel) -> Self {
        let xs = model.state_count();
        let transitions = (0..xs)
            .map(|x| {
                (0..model.profile_count())
                    .map(|u| model.transition(x, u))
                    .collect()
            })
            .collect();
        let observations = (0..xs)
            .map(|x| {
                let mut joint: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 1.0)];
                for k in 0..model.member_count() {
                    let dist = model.observation_distribution(k, x);
                    joint = joint
                        .iter()
                        .flat_map(|(y, p)| {
                            dist.iter().map(move |&(yk, q)| {
                                let mut y = y.clone();
                                y.push(yk);
                                (y, p * q)
                            })
                        })
                        .collect();
                }
                joint
            })
            .collect();
        Kernels {
            transitions,
            observations,
        }
    }
}

type Branches = BTreeMap<SharedStep, BTreeMap<HiddenConfig, f64>>;

/// Moves the oldest entries of full windows into the shared step.
fn release(mut config: HiddenConfig, delay: usize) -> (SharedStep, HiddenConfig) {
    if config.states.len() > delay + 1 {
        config.states.remove(0);
    }
    let mut shared = SharedStep::NONE;
    if config.observations[0].len() > delay {
        shared.observations = Some(config.observations.iter_mut().map(|o| o.remove(0)).collect());
    }
    if config.decisions[0].len() > delay {
        shared.decisions = Some(config.decisions.iter_mut().map(|d| d.remove(0)).collect());
    }
    (shared, config)
}

fn split(stage: usize, branches: Branches) -> Vec<(SharedStep, f64, CoordinatorBelief)> {
    branches
        .into_iter()
        .map(|(z, map)| {
            let (p, belief) = CoordinatorBelief::from_map(stage, map);
            (z, p, belief)
        })
        .filter(|(_, p, _)| *p > 0.0)
        .collect()
}

/// Beliefs at stage 0, one per possible initial release.
pub fn initial_beliefs(model: &TeamModel) -> Vec<(SharedStep, f64, CoordinatorBelief)> {
    let kernels = Kernels::new(model);
    let delay = model.delay;
    let k = model.member_count();
    let mut branches = Branches::new();
    for (x, &p) in model.initial.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        for (y, q) in &kernels.observations[x] {
            let config = HiddenConfig {
                states: vec![x],
                observations: y.iter().map(|&yk| vec![yk]).collect(),
                decisions: vec![Vec::new(); k],
            };
            let (z, config) = release(config, delay);
            *branches.entry(z).or_default().entry(config).or_insert(0.0) += p * q;
        }
    }
    split(0, branches)
}

struct Planner<'a> {
    model: &'a TeamModel,
    kernels: Kernels,
    delay: usize,
    nodes: Vec<PlanNode>,
    memo: HashMap<(usize, Vec<(HiddenConfig, i64)>), usize>,
}

impl<'a> Planner<'a> {
    fn new(model: &'a TeamModel) -> Result<Self, CoordinationError> {
        model.validate()?;
        let delay = model
            .uniform_delay()
            .ok_or_else(|| CoordinationError::AsymmetricDelay(model.member_delays()))?;
        Ok(Planner {
            model,
            kernels: Kernels::new(model),
            delay,
            nodes: Vec::new(),
            memo: HashMap::new(),
        })
    }

    /// Expected stage cost and released branches under one prescription profile.
    fn transition(
        &self,
        belief: &CoordinatorBelief,
        decisions: &[Vec<usize>],
    ) -> (f64, Vec<(SharedStep, f64, CoordinatorBelief)>) {
        let mut cost = 0.0;
        let mut branches = Branches::new();
        for ((config, p), u) in belief.support.iter().zip(decisions) {
            let x = config.current_state();
            let profile = self.model.profile_index(u);
            cost += p * self.model.cost[x][profile];
            for &(x2, q) in &self.kernels.transitions[x][profile] {
                for (y, r) in &self.kernels.observations[x2] {
                    let mut next = config.clone();
                    next.states.push(x2);
                    for (k, &yk) in y.iter().enumerate() {
                        next.observations[k].push(yk);
                        next.decisions[k].push(u[k]);
                    }
                    let (z, next) = release(next, self.delay);
                    *branches.entry(z).or_default().entry(next).or_insert(0.0) += p * q * r;
                }
            }
        }
        (cost, split(belief.stage + 1, branches))
    }

    fn solve(&mut self, belief: CoordinatorBelief) -> Result<usize, CoordinationError> {
        let key = (belief.stage, belief.key());
        if let Some(&id) = self.memo.get(&key) {
            return Ok(id);
        }
        let stage = belief.stage;
        let node = if stage == self.model.horizon {
            let value = belief
                .support
                .iter()
                .map(|(c, p)| p * self.model.terminal_cost_of(c.current_state()))
                .sum();
            PlanNode {
                stage,
                belief,
                value,
                stage_cost: 0.0,
                prescription: None,
                children: Vec::new(),
            }
        } else {
            self.solve_stage(belief)?
        };
        let id = self.nodes.len();
        self.nodes.push(node);
        self.memo.insert(key, id);
        Ok(id)
    }

    fn solve_stage(&mut self, belief: CoordinatorBelief) -> Result<PlanNode, CoordinationError> {
        let members = self.model.member_count();
        let domains: Vec<Vec<PrivateInfo>> = (0..members)
            .map(|k| belief.private_domain(k, self.delay))
            .collect();
        // position of each configuration's view in each member's domain
        let view_index: Vec<Vec<usize>> = belief
            .support
            .iter()
            .map(|(c, _)| {
                (0..members)
                    .map(|k| {
                        domains[k]
                            .binary_search(&c.private_view(k, self.delay))
                            .expect("view is in its domain")
                    })
                    .collect()
            })
            .collect();
        let radices: Vec<usize> = (0..members)
            .flat_map(|k| std::iter::repeat_n(self.model.members[k].decisions.len(), domains[k].len()))
            .collect();
        let size = radices
            .iter()
            .try_fold(1u128, |acc, &r| acc.checked_mul(r as u128))
            .unwrap_or(u128::MAX);
        if size > PROFILE_LIMIT {
            return Err(CoordinationError::InstanceTooLarge {
                size,
                limit: PROFILE_LIMIT,
            });
        }
        let mut digits = vec![0usize; radices.len()];
        let mut best: Option<Candidate> = None;
        for index in 0..size as usize {
            let mut rest = index;
            for (d, &r) in digits.iter_mut().zip(&radices).rev() {
                *d = rest % r;
                rest /= r;
            }
            let table = split_digits(&digits, &domains);
            let decisions: Vec<Vec<usize>> = view_index
                .iter()
                .map(|views| views.iter().enumerate().map(|(k, &v)| table[k][v]).collect())
                .collect();
            let (cost, branches) = self.transition(&belief, &decisions);
            let mut total = cost;
            let mut children = Vec::with_capacity(branches.len());
            for (z, p, child) in branches {
                let id = self.solve(child)?;
                total += p * self.nodes[id].value;
                children.push((z, p, id));
            }
            if best.as_ref().is_none_or(|b| total < b.0 - TIE_TOL) {
                best = Some((total, cost, digits.clone(), children));
            }
        }
        let (value, stage_cost, digits, children) = best.expect("at least one profile");
        let table = split_digits(&digits, &domains);
        let prescription = PrescriptionProfile {
            members: domains
                .into_iter()
                .zip(table)
                .map(|(domain, decisions)| Prescription { domain, decisions })
                .collect(),
        };
        Ok(PlanNode {
            stage: belief.stage,
            belief,
            value,
            stage_cost,
            prescription: Some(prescription),
            children,
        })
    }
}

fn split_digits(digits: &[usize], domains: &[Vec<PrivateInfo>]) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(domains.len());
    let mut at = 0;
    for d in domains {
        out.push(digits[at..at + d.len()].to_vec());
        at += d.len();
    }
    out
}

/// Exact backward induction over reachable common-information beliefs.
pub fn solve_planning(model: &TeamModel) -> Result<PlanningStrategy, CoordinationError> {
    let mut planner = Planner::new(model)?;
    let mut roots = Vec::new();
    let mut value = 0.0;
    for (z, p, belief) in initial_beliefs(model) {
        let id = planner.solve(belief)?;
        value += p * planner.nodes[id].value;
        roots.push((z, p, id));
    }
    log::debug!("planned {} belief nodes, V_0 = {value}", planner.nodes.len());
    Ok(PlanningStrategy {
        horizon: model.horizon,
        delay: planner.delay,
        states: model.state_count(),
        nodes: planner.nodes,
        roots,
        value,
    })
}

/// Optimal cost-to-go from an arbitrary belief, solved afresh.
pub fn value_at(model: &TeamModel, belief: &CoordinatorBelief) -> Result<f64, CoordinationError> {
    let mut planner = Planner::new(model)?;
    let id = planner.solve(belief.clone())?;
    Ok(planner.nodes[id].value)
}
