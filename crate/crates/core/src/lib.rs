//! Panel pickup-and-install benchmark: a kinematic desk/ground simulator,
//! teleoperation gateway, episode store, and three policy families (behavior
//! cloning, a demonstration-seeded Q-network, and a flow-matching action
//! head) with a shared rollout protocol.
//!
//! Numeric code is generic over [`scalar::Real`]; the aliases below fix the
//! scalar to `f64`, which is what the policies and simulator use.

pub mod codec;
pub mod config;
pub mod demo;
pub mod episode;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod kinematics;
pub mod nn;
pub mod policy;
pub mod run;
pub mod scalar;
pub mod sim;
pub mod teleop;

pub use error::{Error, Result};

pub type Quat = geometry::Quat<f64>;
pub type Pose = geometry::Pose<f64>;
pub type ChainSpec = kinematics::ChainSpec<f64>;
pub type JointState = kinematics::JointState<f64>;
pub type CartesianDelta = kinematics::CartesianDelta<f64>;
pub type Jacobian = kinematics::Jacobian<f64>;
pub type Tensor = nn::Tensor<f64>;
pub type Mlp = nn::Mlp<f64>;
pub type AdamWConfig = nn::AdamWConfig<f64>;
