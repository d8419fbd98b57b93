//! Road network model and the multi-agent navigation environment.

mod net;
mod path;
mod sim;

pub use net::{Edge, Junction, NetworkError, NetworkFile, RoadNetwork, NETWORK_FORMAT_VERSION};
pub use path::{PathError, PathMetric, PathResult};
pub use sim::{
    AgentStatus, AgentStep, EnvError, NavEnv, Observation, OdPair, Regime, RewardBreakdown,
    Scenario, ScenarioError, StepOutcome, ARRIVAL_BONUS_FRACTION, OBS_SENTINEL,
    SCENARIO_FORMAT_VERSION,
};
