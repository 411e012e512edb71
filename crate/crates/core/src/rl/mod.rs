//! Double DQN over spatial action maps.

pub mod policy;
pub mod qnet;
pub mod replay;
pub mod reward;
pub mod train;

pub use policy::{epsilon_at, select_action, td_train_step, EpsilonSchedule, TdConfig, TdStats};
pub use qnet::QNetwork;
pub use replay::{Observed, ReplayBuffer, Transition};
pub use reward::{compute_reward, ProgressMode, RewardConfig};
pub use train::{train, MetricRow, TrainConfig, TrainOutcome};
