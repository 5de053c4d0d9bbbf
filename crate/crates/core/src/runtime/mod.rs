//! Live session state: turn orchestration, output smoothing, motion hold
//! and the interaction log.

mod config;
mod history;
mod session;

pub use config::RuntimeConfig;
pub use history::{History, HistoryLine, InteractionRecord};
pub use session::{ActiveAction, QueuedAction, RobotState, Session, StepOutcome, blend_palettes};
