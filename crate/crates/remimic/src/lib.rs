//! Transfer of reference hand–object manipulation trajectories onto simulated
//! dexterous robotic hands.
//!
//! The pipeline has two stages: a trajectory-imitation policy trained to track
//! reference hand motion, and a residual policy layered on top of the frozen
//! imitator that refines actions under object interaction. Supporting modules
//! provide rigid-transform algebra and hand kinematics ([`geom`]), reference
//! clips, convex hulls and basis-point-set shape encodings ([`traj`]), a
//! deterministic fixed-step rigid-body simulator ([`sim`]), reward terms
//! ([`reward`]), actor-critic networks with PPO ([`policy`]), curriculum
//! schedules with reference-state initialization and early termination
//! ([`sched`]), tracking metrics ([`eval`]), keypoint-based retargeting
//! ([`retarget`]), the training loops ([`trainer`]), and run configuration
//! ([`config`]).

pub mod config;
pub mod eval;
pub mod geom;
pub mod policy;
pub mod retarget;
pub mod reward;
pub mod rng;
pub mod sched;
pub mod sim;
pub mod toys;
pub mod trainer;
pub mod traj;
