//! Finite decentralized team control with n-step delayed information sharing.
//!
//! Members observe the state through private channels and share observations
//! and decisions with the rest of the team after `n` steps. The planner works
//! on the common information only: it chooses, for each reachable belief, a
//! prescription per member mapping the member's private window to a decision.

mod info;
mod intersection;
mod model;
mod planner;
mod simulate;

pub use info::{
    information_state_from_common, update_information_state, CommonInfo, History,
    InformationState, PrivateInfo, SharedStep,
};
pub use intersection::{build_intersection_scenario, IntersectionParams, GO, WAIT};
pub use model::{observe, sample_initial, step, MemberSpec, TeamModel, PROB_TOL};
pub use planner::{
    initial_beliefs, solve_planning, value_at, CoordinatorBelief, HiddenConfig, PlanNode,
    PlanningStrategy, Prescription, PrescriptionProfile, PROFILE_LIMIT, TIE_TOL,
};
pub use simulate::{
    simulate_team, write_trajectory_log, MemberAgent, SimulationConfig, SimulationStats,
    TrajectoryRecord,
};

#[derive(Debug, thiserror::Error)]
pub enum CoordinationError {
    #[error("invalid team model: {0}")]
    InvalidModel(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("undefined table entry for {0}")]
    UndefinedEntry(String),
    #[error("inconsistent shared data: {0}")]
    Inconsistent(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("instance too large: {size} prescription profiles at one belief, limit {limit}")]
    InstanceTooLarge { size: u128, limit: u128 },
    #[error("planning needs a uniform delay, members have {0:?}")]
    AsymmetricDelay(Vec<usize>),
    #[error("strategy was not solved for this model: {0}")]
    StrategyMismatch(String),
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed team model: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Hook for revising the planned prescriptions online from the common
/// information and a member's private window. No implementation ships with
/// the crate; agents use the planned prescriptions unchanged unless one is
/// attached with [`MemberAgent::with_learning`].
pub trait LearningFunction: Sync {
    fn adapt(
        &self,
        t: usize,
        common: &CommonInfo,
        planned: &PrescriptionProfile,
        private: &PrivateInfo,
    ) -> PrescriptionProfile;
}
