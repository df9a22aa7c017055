//! Prioritized topic bridge between two buses over a simulated link.

mod endpoint;
pub mod envelope;
pub mod policy;
pub mod replay;
pub mod scheduler;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use endpoint::{
    BridgeConfig, BridgeEndpoint, BridgePair, BridgeStatus, DiscoveryConfig, EndpointStats, IngressTopicStats,
    Side, WorkCounters, BridgeError,
};
pub use envelope::{decode_envelope, encode_envelope, Envelope, EnvelopeError};
pub use policy::{PolicyError, PriorityPolicy};
pub use replay::ReplayBuffer;
pub use scheduler::{schedule_with_shares, tier_scheduler, TierQueues, BULK_GUARD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Critical = 0,
    Standard = 1,
    Bulk = 2,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Critical, Tier::Standard, Tier::Bulk];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Tier::Critical => "critical",
            Tier::Standard => "standard",
            Tier::Bulk => "bulk",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
