//! Rule-based rewards, data curation, evaluation metrics and GRPO math for
//! reinforcement learning on table reasoning tasks.

pub mod config;
pub mod curation;
pub mod grpo;
pub mod judge;
pub mod metrics;
pub mod par;
pub mod response;
pub mod rewards;
pub mod rng;
pub mod sample;
pub mod sql;
pub mod table;
pub mod text;

pub use config::{RunConfig, TOOL_VERSION};
pub use response::{parse_response, ParsedResponse};
pub use rewards::{RewardBreakdown, RewardConfig, RewardEngine};
pub use sample::{Rollout, Sample, TaskType};
pub use table::{CellRef, Table};
