//! Motion primitives, tabletop scene model and kinematic simulator.

pub mod dmp;
pub mod geometry;
pub mod perception;
pub mod scene;
pub mod sim;

pub use dmp::{
    build_specs, rollout, BasisKind, BasisSet, Dof, DmpError, DmpParams, DmpSpec, Integrator, RolloutConfig, Trajectory,
    TrajectorySample,
};
pub use perception::{object_list_text, perceive, DetectedObject, NoiseConfig, PerceptionConfig};
pub use scene::{compose_goal, describe_scene, GoalPose, ObjectFlag, Pose, Scene, SceneError, SceneObject, Workspace};
pub use sim::{
    evaluate_subtask, execute_trajectory, ExecutionReport, FailureReason, Outcome, SimConfig, SimError,
    SimState, Snapshot, SubtaskGoal,
};
