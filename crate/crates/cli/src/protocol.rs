//! JSON messages exchanged with the teleop client over the websocket.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub recording: bool,
    pub waypoints: usize,
}

/// Full world state, broadcast every tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMessage {
    /// Simulation time in seconds.
    pub t: f64,
    pub robot: [f64; 3],
    pub boxes: Vec<[f64; 2]>,
    pub receptacle: [f64; 4],
    pub obstacles: Vec<[f64; 4]>,
    pub goal: Option<[f64; 2]>,
    pub path: Option<Vec<[f64; 2]>>,
    pub session: SessionStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionAction {
    Start,
    Save,
    Discard,
}

/// Reply to a session request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AckMessage {
    pub action: SessionAction,
    pub ok: bool,
    pub detail: String,
    /// Episodes saved to the demo file during this session.
    pub saved: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    State(StateMessage),
    Ack(AckMessage),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClientMessage {
    /// Forward speed (m/s) and turn rate (rad/s).
    Cmd { v: f64, w: f64 },
    Session { action: SessionAction },
}
