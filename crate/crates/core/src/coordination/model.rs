use rand::Rng;
use serde::{Deserialize, Serialize};

use super::CoordinationError;

/// Tolerance on probability-vector normalization.
pub const PROB_TOL: f64 = 1e-12;

/// One team member: its decision set, observation set and observation kernel
/// `Y^k = h^k(X, V^k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberSpec {
    pub name: String,
    pub decisions: Vec<String>,
    pub observations: Vec<String>,
    /// Distribution of the observation noise `V^k`.
    pub noise: Vec<f64>,
    /// `observation_table[x][v]` is the observation index `h^k(x, v)`.
    pub observation_table: Vec<Vec<usize>>,
    /// Per-member sharing delay; defaults to the team delay.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay: Option<usize>,
}

/// Finite decentralized team control problem. Decision profiles are indexed
/// in mixed radix with member 0 most significant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeamModel {
    pub states: Vec<String>,
    pub members: Vec<MemberSpec>,
    /// Number of decision stages `T`.
    pub horizon: usize,
    /// Sharing delay `n`.
    pub delay: usize,
    /// Distribution of the disturbance `W`.
    pub disturbance: Vec<f64>,
    /// `dynamics[x][profile][w]` is the successor state index.
    pub dynamics: Vec<Vec<Vec<usize>>>,
    /// `cost[x][profile]` is the stage cost.
    pub cost: Vec<Vec<f64>>,
    /// Distribution of `X_0`.
    pub initial: Vec<f64>,
    /// Cost of the state reached after the last stage; empty means zero.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terminal_cost: Vec<f64>,
    /// States counted as collisions by the simulator.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub collision_states: Vec<usize>,
}

fn check_distribution(what: &str, dist: &[f64]) -> Result<(), CoordinationError> {
    if dist.is_empty() {
        return Err(CoordinationError::InvalidModel(format!("{what} is empty")));
    }
    if dist.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(CoordinationError::InvalidModel(format!("{what} has a negative entry")));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(CoordinationError::InvalidModel(format!(
            "{what} sums to {total}, not 1"
        )));
    }
    Ok(())
}

impl TeamModel {
    pub fn from_json(text: &str) -> Result<Self, CoordinationError> {
        let model: TeamModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, CoordinationError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CoordinationError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        TeamModel::from_json(&text)
    }

    pub fn member_count(&self) -> usize {
        self.members.len()
    }

    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    pub fn profile_count(&self) -> usize {
        self.members.iter().map(|m| m.decisions.len()).product()
    }

    pub fn profile_index(&self, decisions: &[usize]) -> usize {
        self.members
            .iter()
            .zip(decisions)
            .fold(0, |acc, (m, &u)| acc * m.decisions.len() + u)
    }

    pub fn profile(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.members.len()];
        for (k, m) in self.members.iter().enumerate().rev() {
            out[k] = index % m.decisions.len();
            index /= m.decisions.len();
        }
        out
    }

    /// Effective delay of each member.
    pub fn member_delays(&self) -> Vec<usize> {
        self.members
            .iter()
            .map(|m| m.delay.unwrap_or(self.delay))
            .collect()
    }

    /// The common delay when every member shares with the same delay.
    pub fn uniform_delay(&self) -> Option<usize> {
        let delays = self.member_delays();
        delays
            .iter()
            .all(|&d| d == delays[0])
            .then_some(delays[0])
    }

    pub fn validate(&self) -> Result<(), CoordinationError> {
        let invalid = |m: String| Err(CoordinationError::InvalidModel(m));
        let xs = self.states.len();
        if xs == 0 {
            return invalid("no states".into());
        }
        if self.members.is_empty() {
            return invalid("no team members".into());
        }
        if self.horizon == 0 {
            return invalid("horizon must be positive".into());
        }
        for (k, d) in self.member_delays().into_iter().enumerate() {
            if d >= self.horizon {
                return invalid(format!("delay {d} of member {k} is not below the horizon {}", self.horizon));
            }
        }
        check_distribution("initial distribution", &self.initial)?;
        check_distribution("disturbance distribution", &self.disturbance)?;
        if self.initial.len() != xs {
            return invalid("initial distribution length differs from the state count".into());
        }
        for (k, m) in self.members.iter().enumerate() {
            if m.decisions.is_empty() || m.observations.is_empty() {
                return invalid(format!("member {k} needs decisions and observations"));
            }
            check_distribution(&format!("noise distribution of member {k}"), &m.noise)?;
            if m.observation_table.len() != xs {
                return invalid(format!("observation table of member {k} needs one row per state"));
            }
            for row in &m.observation_table {
                if row.len() != m.noise.len() || row.iter().any(|&y| y >= m.observations.len()) {
                    return invalid(format!("observation table of member {k} has an undefined entry"));
                }
            }
        }
        let profiles = self.profile_count();
        if self.dynamics.len() != xs || self.cost.len() != xs {
            return invalid("dynamics and cost tables need one row per state".into());
        }
        for x in 0..xs {
            if self.dynamics[x].len() != profiles || self.cost[x].len() != profiles {
                return invalid(format!("state {x} tables need one entry per decision profile"));
            }
            for next in &self.dynamics[x] {
                if next.len() != self.disturbance.len() || next.iter().any(|&s| s >= xs) {
                    return invalid(format!("dynamics of state {x} has an undefined entry"));
                }
            }
            if self.cost[x].iter().any(|c| !c.is_finite()) {
                return invalid(format!("cost of state {x} is not finite"));
            }
        }
        if !self.terminal_cost.is_empty()
            && (self.terminal_cost.len() != xs || self.terminal_cost.iter().any(|c| !c.is_finite()))
        {
            return invalid("terminal cost needs one finite entry per state".into());
        }
        if self.collision_states.iter().any(|&s| s >= xs) {
            return invalid("collision state out of range".into());
        }
        Ok(())
    }

    fn check_pair(&self, x: usize, decisions: &[usize]) -> Result<usize, CoordinationError> {
        if x >= self.states.len()
            || decisions.len() != self.members.len()
            || decisions
                .iter()
                .zip(&self.members)
                .any(|(&u, m)| u >= m.decisions.len())
        {
            return Err(CoordinationError::UndefinedEntry(format!(
                "state {x} with decisions {decisions:?}"
            )));
        }
        Ok(self.profile_index(decisions))
    }

    pub fn terminal_cost_of(&self, x: usize) -> f64 {
        self.terminal_cost.get(x).copied().unwrap_or(0.0)
    }

    /// `P(Y^k = y | X = x)`.
    pub fn observation_likelihood(&self, member: usize, x: usize, y: usize) -> f64 {
        let m = &self.members[member];
        m.noise
            .iter()
            .zip(&m.observation_table[x])
            .filter(|&(_, &obs)| obs == y)
            .map(|(p, _)| p)
            .sum()
    }

    /// Successor distribution `P(X' | X = x, U = profile)`, aggregated over
    /// disturbances and sorted by state.
    pub fn transition(&self, x: usize, profile: usize) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::new();
        for (&next, &p) in self.dynamics[x][profile].iter().zip(&self.disturbance) {
            if p <= 0.0 {
                continue;
            }
            match out.iter_mut().find(|e| e.0 == next) {
                Some(e) => e.1 += p,
                None => out.push((next, p)),
            }
        }
        out.sort_by_key(|e| e.0);
        out
    }

    /// Observation distribution of one member in state `x`, sorted by symbol.
    pub fn observation_distribution(&self, member: usize, x: usize) -> Vec<(usize, f64)> {
        let m = &self.members[member];
        let mut out: Vec<(usize, f64)> = Vec::new();
        for (&y, &p) in m.observation_table[x].iter().zip(&m.noise) {
            if p <= 0.0 {
                continue;
            }
            match out.iter_mut().find(|e| e.0 == y) {
                Some(e) => e.1 += p,
                None => out.push((y, p)),
            }
        }
        out.sort_by_key(|e| e.0);
        out
    }
}

fn sample_index<R: Rng + ?Sized>(dist: &[f64], rng: &mut R) -> usize {
    let draw: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in dist.iter().enumerate() {
        acc += p;
        if draw < acc {
            return i;
        }
    }
    // rounding leaves a sliver above the last cumulative sum
    dist.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

pub fn sample_initial<R: Rng + ?Sized>(model: &TeamModel, rng: &mut R) -> usize {
    sample_index(&model.initial, rng)
}

/// Samples the disturbance and returns `(f(x, u, w), c(x, u))`.
pub fn step<R: Rng + ?Sized>(
    model: &TeamModel,
    x: usize,
    decisions: &[usize],
    rng: &mut R,
) -> Result<(usize, f64), CoordinationError> {
    let profile = model.check_pair(x, decisions)?;
    let w = sample_index(&model.disturbance, rng);
    Ok((model.dynamics[x][profile][w], model.cost[x][profile]))
}

/// Samples the observation noise and returns `h^k(x, v)`.
pub fn observe<R: Rng + ?Sized>(
    model: &TeamModel,
    x: usize,
    member: usize,
    rng: &mut R,
) -> Result<usize, CoordinationError> {
    let m = model
        .members
        .get(member)
        .ok_or_else(|| CoordinationError::UndefinedEntry(format!("member {member}")))?;
    let row = m
        .observation_table
        .get(x)
        .ok_or_else(|| CoordinationError::UndefinedEntry(format!("state {x}")))?;
    let v = sample_index(&m.noise, rng);
    Ok(row[v])
}
