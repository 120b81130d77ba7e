//! Two-role session: handshake, the operator and expert pipelines, and the
//! simulated-network driver that runs both.
//!
//! The operator owns the camera. It sends depth and color to the expert and
//! keeps depth for itself through an in-process loopback, which is what local
//! annotations are anchored against. The expert reconstructs the scene.
//! Annotations and pointer gestures flow both ways on the reliable channel.

mod handshake;
mod peer;
mod script;
mod sim;
pub mod stats;

pub use handshake::{Handshake, HandshakeError, HandshakeState};
pub use peer::{ExpertPeer, OperatorPeer, PeerCore, PeerError, RenderMode, Reconstruction, DEFAULT_PAIRING_TIMEOUT_US};
pub use script::{AnnotationAction, ScriptedAction};
pub use sim::{PeerSummary, SimulationConfig, SimulationError, SimulationReport, Simulation};
pub use stats::{percentile_nearest_rank, us_to_ms, LatencySummary, SessionStats, StatsSnapshot, StreamCounters, StreamKind};

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum PeerRole {
    Expert = 0,
    Operator = 1,
}

impl PeerRole {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::Expert),
            1 => Some(Self::Operator),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn peer(self) -> Self {
        match self {
            Self::Expert => Self::Operator,
            Self::Operator => Self::Expert,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Expert => "expert",
            Self::Operator => "operator",
        }
    }
}

impl std::fmt::Display for PeerRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
