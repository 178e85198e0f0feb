//! Position-scoring Q-network, replay memory, exploration schedule, the
//! Double-DQN learner and the random baseline.

mod agent;
mod baseline;
mod qnet;
mod replay;
mod schedule;

pub use agent::{
    double_q_target, greedy_episode, polyak_update, select_action, trailing_evasion_rate, train_agent,
    AgentConfig, DoubleDqn, EpisodeLog, TrainedAgent,
};
pub use baseline::random_agent;
pub use qnet::{HeadMode, QNetwork, ARCHITECTURE};
pub use replay::{ReplayBuffer, Transition};
pub use schedule::EpsilonSchedule;
