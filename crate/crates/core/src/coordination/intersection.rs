use serde::{Deserialize, Serialize};

use super::model::{MemberSpec, TeamModel};
use super::CoordinationError;

/// Two approaches meeting in one merging cell. Positions `0..cells` are the
/// approach, `cells` is the merging cell and `cells + 1` the exit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionParams {
    pub lanes: usize,
    pub cells: usize,
    pub delay: usize,
    /// Probability that the human-driven vehicle misreads its position.
    pub noise: f64,
    /// Probability that a "go" fails to move.
    pub slip: f64,
    pub horizon: usize,
    /// Defaults to `1e3 * horizon`.
    pub collision_penalty: Option<f64>,
}

impl Default for IntersectionParams {
    fn default() -> Self {
        IntersectionParams {
            lanes: 2,
            cells: 2,
            delay: 1,
            noise: 0.0,
            slip: 0.0,
            horizon: 5,
            collision_penalty: None,
        }
    }
}

pub const WAIT: usize = 0;
pub const GO: usize = 1;

fn bad(message: String) -> CoordinationError {
    CoordinationError::InvalidParameter(message)
}

pub fn build_intersection_scenario(p: &IntersectionParams) -> Result<TeamModel, CoordinationError> {
    if p.lanes != 2 {
        return Err(bad(format!("exactly 2 lanes are supported, got {}", p.lanes)));
    }
    if p.cells < 2 {
        return Err(bad(format!("need at least 2 cells per approach, got {}", p.cells)));
    }
    if !(0.0..1.0).contains(&p.noise) || !(0.0..1.0).contains(&p.slip) {
        return Err(bad("noise and slip must lie in [0, 1)".into()));
    }
    if p.horizon == 0 || p.delay >= p.horizon {
        return Err(bad(format!(
            "need 0 <= delay < horizon, got delay {} horizon {}",
            p.delay, p.horizon
        )));
    }
    let penalty = p.collision_penalty.unwrap_or(1e3 * p.horizon as f64);
    if !(penalty.is_finite() && penalty >= 0.0) {
        return Err(bad("collision penalty must be finite and non-negative".into()));
    }

    let merge = p.cells;
    let goal = p.cells + 1;
    let positions = p.cells + 2;
    let mut pairs = Vec::new();
    for a in 0..positions {
        for b in 0..positions {
            if !(a == merge && b == merge) {
                pairs.push((a, b));
            }
        }
    }
    let collision = pairs.len();
    let index_of = |a: usize, b: usize| -> usize {
        if a == merge && b == merge {
            collision
        } else {
            pairs.iter().position(|&q| q == (a, b)).expect("pair enumerated")
        }
    };
    let mut states: Vec<String> = pairs.iter().map(|(a, b)| format!("{a}-{b}")).collect();
    states.push("collision".into());

    let disturbance = if p.slip > 0.0 {
        let s = p.slip;
        vec![(1.0 - s) * (1.0 - s), (1.0 - s) * s, s * (1.0 - s), s * s]
    } else {
        vec![1.0]
    };
    let slips = |w: usize| -> (bool, bool) {
        if p.slip > 0.0 {
            (w & 2 != 0, w & 1 != 0)
        } else {
            (false, false)
        }
    };
    let advance = |pos: usize, decision: usize, slipped: bool| -> usize {
        if pos == goal || decision == WAIT || slipped {
            pos
        } else {
            pos + 1
        }
    };

    let profiles = 4;
    let mut dynamics = Vec::with_capacity(states.len());
    let mut cost = Vec::with_capacity(states.len());
    for &(a, b) in &pairs {
        let mut rows = Vec::with_capacity(profiles);
        for u in 0..profiles {
            let (ua, ub) = (u / 2, u % 2);
            rows.push(
                (0..disturbance.len())
                    .map(|w| {
                        let (sa, sb) = slips(w);
                        index_of(advance(a, ua, sa), advance(b, ub, sb))
                    })
                    .collect(),
            );
        }
        dynamics.push(rows);
        let delay_cost = f64::from(u8::from(a != goal)) + f64::from(u8::from(b != goal));
        cost.push(vec![delay_cost; profiles]);
    }
    dynamics.push(vec![vec![collision; disturbance.len()]; profiles]);
    cost.push(vec![penalty; profiles]);

    let position_of = |x: usize, member: usize| -> usize {
        if x == collision {
            merge
        } else if member == 0 {
            pairs[x].0
        } else {
            pairs[x].1
        }
    };
    let position_names: Vec<String> = (0..positions).map(|i| i.to_string()).collect();
    let decisions = vec!["wait".to_string(), "go".to_string()];
    let cav = MemberSpec {
        name: "cav".into(),
        decisions: decisions.clone(),
        observations: position_names.clone(),
        noise: vec![1.0],
        observation_table: (0..states.len()).map(|x| vec![position_of(x, 0)]).collect(),
        delay: None,
    };
    let (hdv_noise, hdv_table) = if p.noise > 0.0 {
        (
            vec![1.0 - p.noise, p.noise],
            (0..states.len())
                .map(|x| {
                    let pos = position_of(x, 1);
                    vec![pos, (pos + 1) % positions]
                })
                .collect(),
        )
    } else {
        (
            vec![1.0],
            (0..states.len()).map(|x| vec![position_of(x, 1)]).collect(),
        )
    };
    let hdv = MemberSpec {
        name: "hdv".into(),
        decisions,
        observations: position_names,
        noise: hdv_noise,
        observation_table: hdv_table,
        delay: None,
    };
    let mut initial = vec![0.0; states.len()];
    initial[index_of(0, 0)] = 1.0;
    let mut terminal_cost = vec![0.0; states.len()];
    terminal_cost[collision] = penalty;

    let model = TeamModel {
        states,
        members: vec![cav, hdv],
        horizon: p.horizon,
        delay: p.delay,
        disturbance,
        dynamics,
        cost,
        initial,
        terminal_cost,
        collision_states: vec![collision],
    };
    model.validate()?;
    Ok(model)
}
