//! Kinematic panel-installation environment.

pub mod contact;
pub mod env;
pub mod render;
pub mod scene;

pub use contact::{compute_contact_force, ContactForce};
pub use env::{check_success, low_dim_len, Action, Env, Observation, PanelState, Phase, PerturbSpec, View, PANEL_STATE_DIM};
pub use render::{Image, VIEW_SIZE};
pub use scene::{Aabb, EnvParams, SceneId, SceneSpec};
