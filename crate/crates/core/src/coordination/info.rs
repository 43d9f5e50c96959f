use serde::{Deserialize, Serialize};

use super::model::{TeamModel, PROB_TOL};
use super::CoordinationError;

/// Data released to the whole team in one protocol step: the observation
/// profile `Y_{t-n}` and, after the first fill, the decision profile
/// `U_{t-n-1}`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SharedStep {
    pub observations: Option<Vec<usize>>,
    pub decisions: Option<Vec<usize>>,
}

impl SharedStep {
    pub const NONE: SharedStep = SharedStep {
        observations: None,
        decisions: None,
    };

    pub fn is_empty(&self) -> bool {
        self.observations.is_none() && self.decisions.is_none()
    }
}

/// Common information `Δ_t`, stored per member so that asymmetric delays fit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CommonInfo {
    pub observations: Vec<Vec<usize>>,
    pub decisions: Vec<Vec<usize>>,
}

impl CommonInfo {
    /// Number of fully shared observation profiles.
    pub fn observation_profiles(&self) -> usize {
        self.observations.iter().map(Vec::len).min().unwrap_or(0)
    }

    pub fn decision_profiles(&self) -> usize {
        self.decisions.iter().map(Vec::len).min().unwrap_or(0)
    }

    pub fn observation_profile(&self, s: usize) -> Vec<usize> {
        self.observations.iter().map(|o| o[s]).collect()
    }

    pub fn decision_profile(&self, s: usize) -> Vec<usize> {
        self.decisions.iter().map(|d| d[s]).collect()
    }

    /// Shared data that became common between `Δ` holding `seen_obs`
    /// observation profiles and `seen_dec` decision profiles and `self`.
    /// Returns one step per newly shared observation profile.
    pub fn increments(&self, seen_obs: usize, seen_dec: usize) -> Vec<SharedStep> {
        let obs = self.observation_profiles();
        let dec = self.decision_profiles();
        let mut out = Vec::new();
        let mut d = seen_dec;
        for s in seen_obs..obs {
            let decisions = if s >= 1 && d < dec && d == s - 1 {
                d += 1;
                Some(self.decision_profile(s - 1))
            } else {
                None
            };
            out.push(SharedStep {
                observations: Some(self.observation_profile(s)),
                decisions,
            });
        }
        out
    }
}

/// Private window `Λ_t^k = (Y_{t-n+1:t}^k, U_{t-n+1:t-1}^k)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PrivateInfo {
    pub observations: Vec<usize>,
    pub decisions: Vec<usize>,
}

impl PrivateInfo {
    pub fn empty() -> Self {
        PrivateInfo {
            observations: Vec::new(),
            decisions: Vec::new(),
        }
    }
}

/// Realized team history. Observations for stage `t` are pushed before the
/// decisions of stage `t`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct History {
    pub observations: Vec<Vec<usize>>,
    pub decisions: Vec<Vec<usize>>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_observations(&mut self, profile: Vec<usize>) {
        self.observations.push(profile);
    }

    pub fn push_decisions(&mut self, profile: Vec<usize>) {
        self.decisions.push(profile);
    }

    /// `Δ_t` under per-member delays.
    pub fn common_info(&self, t: usize, delays: &[usize]) -> CommonInfo {
        let mut observations = Vec::with_capacity(delays.len());
        let mut decisions = Vec::with_capacity(delays.len());
        for (k, &n) in delays.iter().enumerate() {
            let obs_end = (t + 1).saturating_sub(n).min(self.observations.len());
            let dec_end = t.saturating_sub(n).min(self.decisions.len());
            observations.push(self.observations[..obs_end].iter().map(|y| y[k]).collect());
            decisions.push(self.decisions[..dec_end].iter().map(|u| u[k]).collect());
        }
        CommonInfo {
            observations,
            decisions,
        }
    }

    /// `Λ_t^k` for member `k` with delay `n`.
    pub fn private_info(&self, t: usize, k: usize, n: usize) -> PrivateInfo {
        let obs_start = (t + 1).saturating_sub(n);
        let obs_end = (t + 1).min(self.observations.len());
        let dec_start = obs_start;
        let dec_end = t.min(self.decisions.len());
        PrivateInfo {
            observations: self.observations[obs_start.min(obs_end)..obs_end]
                .iter()
                .map(|y| y[k])
                .collect(),
            decisions: self.decisions[dec_start.min(dec_end)..dec_end]
                .iter()
                .map(|u| u[k])
                .collect(),
        }
    }
}

/// `Π_t = P(X_{t-n} | Δ_t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InformationState {
    probabilities: Vec<f64>,
}

impl InformationState {
    pub fn prior(model: &TeamModel) -> Self {
        InformationState {
            probabilities: model.initial.clone(),
        }
    }

    pub fn new(probabilities: Vec<f64>) -> Result<Self, CoordinationError> {
        let total: f64 = probabilities.iter().sum();
        if probabilities.iter().any(|p| !(p.is_finite() && *p >= 0.0))
            || (total - 1.0).abs() > PROB_TOL
        {
            return Err(CoordinationError::Inconsistent(format!(
                "not a probability vector (sum {total})"
            )));
        }
        Ok(InformationState { probabilities })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn max_abs_diff(&self, other: &InformationState) -> f64 {
        self.probabilities
            .iter()
            .zip(&other.probabilities)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Exact Bayes update of `Π` with one shared step: predict through the
/// dynamics under the shared decision profile (when present), then correct
/// with the shared observation profile.
pub fn update_information_state(
    pi: &InformationState,
    shared: &SharedStep,
    model: &TeamModel,
) -> Result<InformationState, CoordinationError> {
    let xs = model.state_count();
    if pi.probabilities.len() != xs {
        return Err(CoordinationError::Inconsistent(
            "information state has the wrong dimension".into(),
        ));
    }
    let mut next = match &shared.decisions {
        Some(u) => {
            if u.len() != model.member_count()
                || u.iter().zip(&model.members).any(|(&d, m)| d >= m.decisions.len())
            {
                return Err(CoordinationError::Protocol(format!(
                    "shared decision profile {u:?} is undefined"
                )));
            }
            let profile = model.profile_index(u);
            let mut out = vec![0.0; xs];
            for (x, &p) in pi.probabilities.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for (x2, q) in model.transition(x, profile) {
                    out[x2] += p * q;
                }
            }
            out
        }
        None => pi.probabilities.clone(),
    };
    if let Some(y) = &shared.observations {
        if y.len() != model.member_count()
            || y.iter().zip(&model.members).any(|(&o, m)| o >= m.observations.len())
        {
            return Err(CoordinationError::Protocol(format!(
                "shared observation profile {y:?} is undefined"
            )));
        }
        for (x, p) in next.iter_mut().enumerate() {
            if *p == 0.0 {
                continue;
            }
            for (k, &yk) in y.iter().enumerate() {
                *p *= model.observation_likelihood(k, x, yk);
            }
        }
    } else if shared.decisions.is_some() {
        return Err(CoordinationError::Protocol(
            "decision profile shared without its observation profile".into(),
        ));
    }
    let total: f64 = next.iter().sum();
    if total <= 0.0 {
        return Err(CoordinationError::Inconsistent(
            "shared data has zero probability under the current information state".into(),
        ));
    }
    next.iter_mut().for_each(|p| *p /= total);
    Ok(InformationState { probabilities: next })
}

/// Runs the filter over every step of `Δ_t` from the prior.
pub fn information_state_from_common(
    common: &CommonInfo,
    model: &TeamModel,
) -> Result<InformationState, CoordinationError> {
    let mut pi = InformationState::prior(model);
    for step in common.increments(0, 0) {
        pi = update_information_state(&pi, &step, model)?;
    }
    Ok(pi)
}

#[cfg(test)]
mod tests {
    use super::super::model::tests::toggle;
    use super::*;

    #[test]
    fn noiseless_observation_gives_point_mass() {
        let m = toggle(0.0);
        let pi = InformationState::prior(&m);
        let step = SharedStep {
            observations: Some(vec![1]),
            decisions: None,
        };
        let next = update_information_state(&pi, &step, &m).unwrap();
        assert_eq!(next.probabilities(), &[0.0, 1.0]);
    }

    #[test]
    fn uninformative_observation_is_pure_prediction() {
        let mut m = toggle(0.0);
        m.members[0].observation_table = vec![vec![0, 0], vec![0, 0]];
        let pi = InformationState::new(vec![0.8, 0.2]).unwrap();
        let step = SharedStep {
            observations: Some(vec![0]),
            decisions: Some(vec![1]),
        };
        let next = update_information_state(&pi, &step, &m).unwrap();
        assert!((next.probabilities()[0] - 0.2).abs() < 1e-15);
        assert!((next.probabilities()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_probability_evidence_is_an_error() {
        let m = toggle(0.0);
        let pi = InformationState::new(vec![1.0, 0.0]).unwrap();
        let step = SharedStep {
            observations: Some(vec![1]),
            decisions: None,
        };
        assert!(matches!(
            update_information_state(&pi, &step, &m),
            Err(CoordinationError::Inconsistent(_))
        ));
    }

    #[test]
    fn noisy_correction_matches_bayes_rule() {
        let m = toggle(0.2);
        let pi = InformationState::new(vec![0.3, 0.7]).unwrap();
        let step = SharedStep {
            observations: Some(vec![0]),
            decisions: None,
        };
        let next = update_information_state(&pi, &step, &m).unwrap();
        let a = 0.3 * 0.8;
        let b = 0.7 * 0.2;
        assert!((next.probabilities()[0] - a / (a + b)).abs() < 1e-15);
    }

    fn sample_history() -> History {
        let mut h = History::new();
        for t in 0..4 {
            h.push_observations(vec![t, 10 + t]);
            h.push_decisions(vec![20 + t, 30 + t]);
        }
        h
    }

    #[test]
    fn windows_have_protocol_lengths() {
        let h = sample_history();
        let n = 2;
        let lam = h.private_info(3, 0, n);
        assert_eq!(lam.observations, vec![2, 3]);
        assert_eq!(lam.decisions, vec![22]);
        let delta = h.common_info(3, &[n, n]);
        assert_eq!(delta.observations[0], vec![0, 1]);
        assert_eq!(delta.decisions[1], vec![30]);
        let warm = h.private_info(0, 1, n);
        assert_eq!(warm.observations, vec![10]);
        assert!(warm.decisions.is_empty());
        assert_eq!(h.common_info(0, &[n, n]).observation_profiles(), 0);
    }

    #[test]
    fn zero_delay_shares_everything_past() {
        let h = sample_history();
        let lam = h.private_info(2, 0, 0);
        assert_eq!(lam, PrivateInfo::empty());
        let delta = h.common_info(2, &[0, 0]);
        assert_eq!(delta.observations[0], vec![0, 1, 2]);
        assert_eq!(delta.decisions[0], vec![20, 21]);
    }

    #[test]
    fn asymmetric_delays_slice_per_member() {
        let h = sample_history();
        let delta = h.common_info(3, &[1, 3]);
        assert_eq!(delta.observations[0], vec![0, 1, 2]);
        assert_eq!(delta.observations[1], vec![10]);
        assert_eq!(delta.observation_profiles(), 1);
        assert_eq!(h.private_info(3, 1, 3).observations, vec![11, 12, 13]);
    }

    #[test]
    fn common_info_grows_one_profile_per_step() {
        let h = sample_history();
        let n = 1;
        let mut last = h.common_info(1, &[n, n]);
        assert_eq!(last.increments(0, 0).len(), 1);
        for t in 2..4 {
            let next = h.common_info(t, &[n, n]);
            let inc = next.increments(last.observation_profiles(), last.decision_profiles());
            assert_eq!(inc.len(), 1);
            assert!(inc[0].decisions.is_some());
            last = next;
        }
    }
}
