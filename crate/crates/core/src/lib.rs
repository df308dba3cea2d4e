//! Deterministic tabletop pick-and-place simulator for a rigid/soft gripper
//! under shared control.
//!
//! The [`world`] transition moves the end-effector and carries or drops
//! bodies, [`grasping`] decides attachment from the [`adhesion`] capacity
//! model and pinch friction, [`inference`] tracks the operator's intended
//! object and grasp type, and [`assist`] blends robot assistance into the
//! arm command. [`session`] runs the loop and records replayable logs.

pub mod adhesion;
pub mod agents;
pub mod assist;
pub mod error;
pub mod grasping;
pub mod inference;
pub mod metrics;
pub mod scenarios;
pub mod session;
pub mod world;

pub use error::{Result, SimError};
pub use inference::Belief;
pub use metrics::{compute_metrics, MetricsReport};
pub use session::{run_episode, EpisodeLog, Mode, Session, Status};
pub use world::{GraspTag, OperatorInput, Scenario, SystemState, Vec3};
