//! Teleoperation gateway: joint sliders and keyboard end-effector control
//! over a line-delimited JSON protocol, with recording to episode files.

pub mod server;
pub mod session;
pub mod wire;

pub use server::{Gateway, GatewayConfig};
pub use session::{quantize_angle, quantize_tenths, Command, KeyCommand, Mode, RecordAck, Session, SliderCommand};
pub use wire::{ClientMessage, ServerMessage};
