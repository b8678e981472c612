//! Line-delimited JSON messages. Every client line gets exactly one reply line.
//!
//! ```text
//! client → {"type":"open","scene":"desk","mode":"keyboard","instruction":"...","seed":0,"frames":false}
//!          {"type":"key","dx":0.01,"dy":0,"dz":0,"drx":0,"dry":0,"drz":0,"g":0}
//!          {"type":"slider","joint":2,"angle":0.3,"g":1}
//!          {"type":"record","on":true}
//!          {"type":"close"}
//! server → {"type":"session","session":"...","mode":"keyboard","hz":20}
//!          {"type":"obs","q":[...],"panel":{...},"force":[...],"t":12,"frame_b64":"..."}
//!          {"type":"record","on":false,"steps":40,"episode":"episodes/s1_000.pnlb"}
//!          {"type":"error","category":"mode mismatch","message":"..."}
//!          {"type":"closed"}
//! ```
//!
//! Omitted key deltas and `g` default to zero; `seed` defaults to zero.
//! `frame_b64` is the base64 of a binary PPM of the agent view.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::session::{Command, KeyCommand, SliderCommand};
use crate::error::{Error, Result};
use crate::kinematics::CartesianDelta;
use crate::sim::Observation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClientMessage {
    Open {
        scene: String,
        mode: String,
        instruction: String,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        frames: bool,
    },
    Key {
        #[serde(default)]
        dx: f64,
        #[serde(default)]
        dy: f64,
        #[serde(default)]
        dz: f64,
        #[serde(default)]
        drx: f64,
        #[serde(default)]
        dry: f64,
        #[serde(default)]
        drz: f64,
        #[serde(default)]
        g: f64,
    },
    Slider {
        joint: usize,
        angle: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        g: Option<f64>,
    },
    Record {
        on: bool,
    },
    Close,
}

impl ClientMessage {
    pub fn parse(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::Protocol(e.to_string()))
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("client messages always serialize")
    }

    /// The session command this message carries, if any.
    pub fn command(&self) -> Option<Command> {
        match *self {
            ClientMessage::Key { dx, dy, dz, drx, dry, drz, g } => {
                Some(Command::Key(KeyCommand { delta: CartesianDelta { d_pos: [dx, dy, dz], d_rot: [drx, dry, drz], g } }))
            }
            ClientMessage::Slider { joint, angle, g } => Some(Command::Slider(SliderCommand { joint, angle, g })),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelSummary {
    pub position: [f64; 3],
    /// `w, x, y, z`.
    pub orientation: [f64; 4],
    pub attached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ServerMessage {
    Session {
        session: String,
        mode: String,
        hz: f64,
    },
    Obs {
        q: Vec<f64>,
        panel: PanelSummary,
        force: [f64; 6],
        t: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        frame_b64: Option<String>,
    },
    Record {
        on: bool,
        steps: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        episode: Option<String>,
    },
    Error {
        category: String,
        message: String,
    },
    Closed,
}

impl ServerMessage {
    pub fn obs(o: &Observation) -> Self {
        let s = o.s.to_array();
        ServerMessage::Obs {
            q: o.q.q.clone(),
            panel: PanelSummary { position: [s[0], s[1], s[2]], orientation: [s[3], s[4], s[5], s[6]], attached: o.s.attached },
            force: o.f.to_array(),
            t: o.t,
            frame_b64: o.agent_view.as_ref().map(|img| STANDARD.encode(img.to_ppm())),
        }
    }

    pub fn error(e: &Error) -> Self {
        ServerMessage::Error { category: e.category().to_string(), message: e.to_string() }
    }

    pub fn parse(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::Protocol(e.to_string()))
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}
