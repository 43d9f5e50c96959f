use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::info::{
    information_state_from_common, update_information_state, CommonInfo, History,
    InformationState, PrivateInfo, SharedStep,
};
use super::model::{observe, sample_initial, step, TeamModel};
use super::planner::PlanningStrategy;
use super::{CoordinationError, LearningFunction};

/// One team member executing the strategy from `(Δ_t, Λ_t^k)` alone.
pub struct MemberAgent<'a> {
    model: &'a TeamModel,
    strategy: &'a PlanningStrategy,
    member: usize,
    node: Option<usize>,
    information_state: InformationState,
    seen_observations: usize,
    seen_decisions: usize,
    learning: Option<&'a dyn LearningFunction>,
}

impl<'a> MemberAgent<'a> {
    pub fn new(model: &'a TeamModel, strategy: &'a PlanningStrategy, member: usize) -> Self {
        MemberAgent {
            model,
            strategy,
            member,
            node: None,
            information_state: InformationState::prior(model),
            seen_observations: 0,
            seen_decisions: 0,
            learning: None,
        }
    }

    pub fn with_learning(mut self, learning: &'a dyn LearningFunction) -> Self {
        self.learning = Some(learning);
        self
    }

    pub fn information_state(&self) -> &InformationState {
        &self.information_state
    }

    pub fn node(&self) -> Option<usize> {
        self.node
    }

    pub fn decide(
        &mut self,
        t: usize,
        common: &CommonInfo,
        private: &PrivateInfo,
    ) -> Result<usize, CoordinationError> {
        let increments = common.increments(self.seen_observations, self.seen_decisions);
        if increments.len() > 1 {
            return Err(CoordinationError::Protocol(format!(
                "{} profiles shared in one step",
                increments.len()
            )));
        }
        let shared = increments.first().cloned().unwrap_or(SharedStep::NONE);
        let next = match self.node {
            None if t == 0 => self.strategy.root(&shared),
            Some(id) if self.strategy.node(id).stage + 1 == t => {
                self.strategy.node(id).child(&shared)
            }
            _ => {
                return Err(CoordinationError::Protocol(format!(
                    "member {} consulted at stage {t} out of order",
                    self.member
                )))
            }
        };
        let id = next.ok_or_else(|| {
            CoordinationError::Protocol(format!("shared data {shared:?} was not planned for"))
        })?;
        if shared.observations.is_some() {
            self.information_state =
                update_information_state(&self.information_state, &shared, self.model)?;
            self.seen_observations += 1;
        }
        if shared.decisions.is_some() {
            self.seen_decisions += 1;
        }
        debug_assert!(
            information_state_from_common(common, self.model)
                .map(|p| p.max_abs_diff(&self.information_state) < 1e-12)
                .unwrap_or(false),
            "information state is a function of the common information"
        );
        self.node = Some(id);
        let node = self.strategy.node(id);
        let planned = node
            .prescription
            .as_ref()
            .ok_or_else(|| CoordinationError::Protocol("decision requested past the horizon".into()))?;
        let profile = match self.learning {
            Some(l) => l.adapt(t, common, planned, private),
            None => planned.clone(),
        };
        profile.members[self.member].apply(private).ok_or_else(|| {
            CoordinationError::Protocol(format!(
                "private view {private:?} of member {} is outside its prescription domain",
                self.member
            ))
        })
    }
}

/// One line of the trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub episode: usize,
    pub t: usize,
    pub x: String,
    pub u: Vec<String>,
    pub y: Vec<String>,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub episodes: usize,
    pub seed: u64,
    /// Number of leading episodes whose trajectories are kept.
    pub keep_trajectories: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationStats {
    pub episodes: usize,
    pub mean_cost: f64,
    pub std_error: f64,
    pub min_cost: f64,
    pub max_cost: f64,
    /// Episodes that visited a collision state.
    pub collisions: usize,
    #[serde(skip)]
    pub trajectories: Vec<Vec<TrajectoryRecord>>,
}

struct Episode {
    cost: f64,
    collided: bool,
    trajectory: Option<Vec<TrajectoryRecord>>,
}

fn run_episode(
    model: &TeamModel,
    strategy: &PlanningStrategy,
    rng: &mut ChaCha8Rng,
    episode: usize,
    keep: bool,
) -> Result<Episode, CoordinationError> {
    let delays = model.member_delays();
    let mut agents: Vec<MemberAgent> = (0..model.member_count())
        .map(|k| MemberAgent::new(model, strategy, k))
        .collect();
    let mut history = History::new();
    let mut x = sample_initial(model, rng);
    let mut total = 0.0;
    let mut collided = model.collision_states.contains(&x);
    let mut records = keep.then(Vec::new);
    for t in 0..model.horizon {
        let y = (0..model.member_count())
            .map(|k| observe(model, x, k, rng))
            .collect::<Result<Vec<_>, _>>()?;
        history.push_observations(y.clone());
        let common = history.common_info(t, &delays);
        let mut u = Vec::with_capacity(agents.len());
        for (k, agent) in agents.iter_mut().enumerate() {
            let private = history.private_info(t, k, delays[k]);
            u.push(agent.decide(t, &common, &private)?);
        }
        debug_assert!(
            agents.windows(2).all(|w| w[0].node() == w[1].node()
                && w[0].information_state() == w[1].information_state()),
            "members reach the same common-information state independently"
        );
        let (next, cost) = step(model, x, &u, rng)?;
        if let Some(r) = records.as_mut() {
            r.push(TrajectoryRecord {
                episode,
                t,
                x: model.states[x].clone(),
                u: u.iter()
                    .zip(&model.members)
                    .map(|(&d, m)| m.decisions[d].clone())
                    .collect(),
                y: y.iter()
                    .zip(&model.members)
                    .map(|(&o, m)| m.observations[o].clone())
                    .collect(),
                cost,
            });
        }
        history.push_decisions(u);
        total += cost;
        x = next;
        collided |= model.collision_states.contains(&x);
    }
    total += model.terminal_cost_of(x);
    Ok(Episode {
        cost: total,
        collided,
        trajectory: records,
    })
}

fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => pairwise_sum(&values[..n / 2]) + pairwise_sum(&values[n / 2..]),
    }
}

/// Runs seeded episodes in parallel. Episode `i` draws from a ChaCha stream
/// keyed by `(seed, i)`, so results do not depend on the worker count.
pub fn simulate_team(
    model: &TeamModel,
    strategy: &PlanningStrategy,
    config: &SimulationConfig,
) -> Result<SimulationStats, CoordinationError> {
    if !strategy.matches(model) {
        return Err(CoordinationError::StrategyMismatch(
            "horizon, delay or state count differ".into(),
        ));
    }
    if config.episodes == 0 {
        return Err(CoordinationError::InvalidParameter("episodes must be positive".into()));
    }
    let episodes: Vec<Episode> = (0..config.episodes)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            run_episode(model, strategy, &mut rng, i, i < config.keep_trajectories)
        })
        .collect::<Result<_, _>>()?;
    let costs: Vec<f64> = episodes.iter().map(|e| e.cost).collect();
    let n = costs.len() as f64;
    let mean = pairwise_sum(&costs) / n;
    let deviations: Vec<f64> = costs.iter().map(|c| (c - mean) * (c - mean)).collect();
    let std_error = if costs.len() > 1 {
        (pairwise_sum(&deviations) / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    Ok(SimulationStats {
        episodes: config.episodes,
        mean_cost: mean,
        std_error,
        min_cost: costs.iter().copied().fold(f64::INFINITY, f64::min),
        max_cost: costs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        collisions: episodes.iter().filter(|e| e.collided).count(),
        trajectories: episodes.into_iter().filter_map(|e| e.trajectory).collect(),
    })
}

/// Writes trajectories as line-delimited JSON records.
pub fn write_trajectory_log<W: Write>(
    mut out: W,
    trajectories: &[Vec<TrajectoryRecord>],
) -> std::io::Result<()> {
    for record in trajectories.iter().flatten() {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::model::tests::toggle;
    use super::super::planner::solve_planning;
    use super::*;

    fn config(episodes: usize, seed: u64) -> SimulationConfig {
        SimulationConfig {
            episodes,
            seed,
            keep_trajectories: 2,
        }
    }

    #[test]
    fn deterministic_model_mean_equals_value() {
        let mut m = toggle(0.0);
        m.initial = vec![1.0, 0.0];
        let s = solve_planning(&m).unwrap();
        let stats = simulate_team(&m, &s, &config(50, 3)).unwrap();
        assert_eq!(stats.mean_cost, s.value());
        assert_eq!(stats.std_error, 0.0);
    }

    #[test]
    fn stochastic_mean_converges_to_value() {
        let mut m = toggle(0.2);
        m.delay = 1;
        m.disturbance = vec![0.7, 0.3];
        m.dynamics = vec![vec![vec![0, 1], vec![1, 0]], vec![vec![1, 0], vec![0, 1]]];
        let s = solve_planning(&m).unwrap();
        let stats = simulate_team(&m, &s, &config(100_000, 11)).unwrap();
        assert!(
            (stats.mean_cost - s.value()).abs() <= 3.0 * stats.std_error,
            "mean {} value {} stderr {}",
            stats.mean_cost,
            s.value(),
            stats.std_error
        );
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let mut m = toggle(0.1);
        m.delay = 1;
        let s = solve_planning(&m).unwrap();
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| simulate_team(&m, &s, &config(500, 5)).unwrap());
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| simulate_team(&m, &s, &config(500, 5)).unwrap());
        assert_eq!(one, many);
        assert_eq!(one.trajectories, many.trajectories);
    }

    #[test]
    fn strategy_for_another_model_is_rejected() {
        let m = toggle(0.0);
        let s = solve_planning(&m).unwrap();
        let mut other = toggle(0.0);
        other.horizon = 2;
        assert!(matches!(
            simulate_team(&other, &s, &config(1, 0)),
            Err(CoordinationError::StrategyMismatch(_))
        ));
    }

    #[test]
    fn trajectory_log_has_one_line_per_stage() {
        let m = toggle(0.0);
        let s = solve_planning(&m).unwrap();
        let stats = simulate_team(&m, &s, &config(4, 9)).unwrap();
        let mut buf = Vec::new();
        write_trajectory_log(&mut buf, &stats.trajectories).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2 * m.horizon);
        let first: TrajectoryRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first.t, 0);
    }
}
